//! Spatial substrate: uniform grids, point-in-polygon assignment, GeoJSON
//! loading, and great-circle distances.
//!
//! Run with: cargo run --example grid_tessellation

use pingmill::spatial::{haversine_m, load_tessellation, make_grid, BBox};

fn main() {
    // A 500 m grid over roughly 1.1 km x 1.1 km at the equator.
    let bbox = BBox::new(0.0, 0.0, 0.01, 0.01).unwrap();
    let grid = make_grid(bbox, 500.0).unwrap();
    println!("grid: {} cells", grid.len());
    for probe in [(0.001, 0.001), (0.005, 0.005), (0.0099, 0.0001), (0.02, 0.02)] {
        println!(
            "  point {probe:?} -> {:?}",
            grid.assign(probe.0, probe.1)
        );
    }

    // Census-style GeoJSON with attributes and a MultiPolygon.
    let geojson = r#"{
        "type": "FeatureCollection",
        "features": [
            {"type": "Feature",
             "properties": {"tile_id": "centro", "socioeconomic_index": 0.81},
             "geometry": {"type": "Polygon",
               "coordinates": [[[0,0],[0.02,0],[0.02,0.02],[0,0.02],[0,0]]]}},
            {"type": "Feature",
             "properties": {"tile_id": "islands", "socioeconomic_index": 0.35},
             "geometry": {"type": "MultiPolygon",
               "coordinates": [
                 [[[0.03,0],[0.04,0],[0.04,0.01],[0.03,0.01],[0.03,0]]],
                 [[[0.05,0],[0.06,0],[0.06,0.01],[0.05,0.01],[0.05,0]]]]}}
        ]}"#;
    let tess = load_tessellation(geojson).unwrap();
    println!("\nloaded {} tiles from GeoJSON:", tess.len());
    for tile in tess.tiles() {
        println!(
            "  {} (socioeconomic_index {:?})",
            tile.id(),
            tile.attribute("socioeconomic_index")
        );
    }
    println!("  point in the second island -> {:?}", tess.assign(0.055, 0.005));

    // Distances.
    let mexico_city = (-99.1332, 19.4326);
    let puebla = (-98.2063, 19.0414);
    println!(
        "\nMexico City to Puebla: {:.1} km",
        haversine_m(mexico_city.0, mexico_city.1, puebla.0, puebla.1) / 1000.0
    );
}
