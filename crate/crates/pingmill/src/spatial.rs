//! Tessellations, tile assignment, grids, and geodesic distance.
//!
//! Containment uses the even-odd rule with boundary-inclusive semantics and
//! a lexicographic tile-id tie-break, because census tessellations share
//! edges and a point on a shared edge must land in exactly one tile,
//! deterministically. Tests are planar in lon/lat space; tiles are city
//! scale, so geodesic edge error is negligible (documented limitation near
//! the poles).

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Meters per degree of latitude, the usual spherical approximation.
pub const METERS_PER_DEGREE: f64 = 111_320.0;

/// Great-circle distance in meters between two WGS84 points.
pub fn haversine_m(lon1: f64, lat1: f64, lon2: f64, lat2: f64) -> f64 {
    let (lat1r, lat2r) = (lat1.to_radians(), lat2.to_radians());
    let dlat = (lat2 - lat1).to_radians();
    let dlon = (lon2 - lon1).to_radians();
    let a = (dlat / 2.0).sin().powi(2) + lat1r.cos() * lat2r.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * a.sqrt().min(1.0).asin()
}

/// Axis-aligned bounding box (min_lon, min_lat, max_lon, max_lat).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub min_lon: f64,
    pub min_lat: f64,
    pub max_lon: f64,
    pub max_lat: f64,
}

impl BBox {
    pub fn new(min_lon: f64, min_lat: f64, max_lon: f64, max_lat: f64) -> Result<Self> {
        if !(min_lon < max_lon && min_lat < max_lat) {
            return Err(Error::Config(format!(
                "bbox must be well-ordered: ({min_lon},{min_lat},{max_lon},{max_lat})"
            )));
        }
        Ok(BBox {
            min_lon,
            min_lat,
            max_lon,
            max_lat,
        })
    }

    pub fn contains(&self, lon: f64, lat: f64) -> bool {
        lon >= self.min_lon && lon <= self.max_lon && lat >= self.min_lat && lat <= self.max_lat
    }
}

/// One polygonal tile: an outer ring plus optional holes, all closed.
#[derive(Debug, Clone)]
pub struct Tile {
    tile_id: String,
    rings: Vec<Vec<(f64, f64)>>,
    attributes: BTreeMap<String, f64>,
    bbox: BBox,
}

impl Tile {
    /// Validates ring closure, minimum size, and non-self-intersection.
    pub fn new(
        tile_id: String,
        rings: Vec<Vec<(f64, f64)>>,
        attributes: BTreeMap<String, f64>,
    ) -> Result<Self> {
        if rings.is_empty() {
            return Err(Error::Geometry(format!("tile '{tile_id}' has no rings")));
        }
        for ring in &rings {
            if ring.len() < 4 {
                return Err(Error::Geometry(format!(
                    "tile '{tile_id}' ring has {} vertices, need >= 4",
                    ring.len()
                )));
            }
            if ring.first() != ring.last() {
                return Err(Error::Geometry(format!("tile '{tile_id}' ring not closed")));
            }
            if ring_self_intersects(ring) {
                return Err(Error::Geometry(format!(
                    "tile '{tile_id}' ring is self-intersecting"
                )));
            }
        }
        let mut min_lon = f64::INFINITY;
        let mut min_lat = f64::INFINITY;
        let mut max_lon = f64::NEG_INFINITY;
        let mut max_lat = f64::NEG_INFINITY;
        for (lon, lat) in rings.iter().flatten() {
            min_lon = min_lon.min(*lon);
            min_lat = min_lat.min(*lat);
            max_lon = max_lon.max(*lon);
            max_lat = max_lat.max(*lat);
        }
        Ok(Tile {
            tile_id,
            rings,
            attributes,
            bbox: BBox {
                min_lon,
                min_lat,
                max_lon,
                max_lat,
            },
        })
    }

    pub fn id(&self) -> &str {
        &self.tile_id
    }

    pub fn bbox(&self) -> BBox {
        self.bbox
    }

    pub fn rings(&self) -> &[Vec<(f64, f64)>] {
        &self.rings
    }

    pub fn attribute(&self, name: &str) -> Option<f64> {
        self.attributes.get(name).copied()
    }

    pub fn attributes(&self) -> &BTreeMap<String, f64> {
        &self.attributes
    }

    /// Even-odd containment; points on any edge count as inside.
    pub fn contains(&self, lon: f64, lat: f64) -> bool {
        if !self.bbox.contains(lon, lat) {
            return false;
        }
        let mut inside = false;
        for ring in &self.rings {
            for edge in ring.windows(2) {
                let (ax, ay) = edge[0];
                let (bx, by) = edge[1];
                if on_segment(lon, lat, ax, ay, bx, by) {
                    return true;
                }
                if (ay > lat) != (by > lat) {
                    let x_cross = ax + (lat - ay) * (bx - ax) / (by - ay);
                    if lon < x_cross {
                        inside = !inside;
                    }
                }
            }
        }
        inside
    }

    /// Centroid of the outer ring vertices (first and last counted once).
    pub fn vertex_centroid(&self) -> (f64, f64) {
        let ring = &self.rings[0];
        let n = (ring.len() - 1) as f64;
        let (sx, sy) = ring[..ring.len() - 1]
            .iter()
            .fold((0.0, 0.0), |(sx, sy), (x, y)| (sx + x, sy + y));
        (sx / n, sy / n)
    }
}

fn on_segment(px: f64, py: f64, ax: f64, ay: f64, bx: f64, by: f64) -> bool {
    let cross = (bx - ax) * (py - ay) - (by - ay) * (px - ax);
    if cross != 0.0 {
        return false;
    }
    px >= ax.min(bx) && px <= ax.max(bx) && py >= ay.min(by) && py <= ay.max(by)
}

/// Sweep over x-sorted segments; flags any crossing or touch between
/// non-adjacent edges of the ring.
fn ring_self_intersects(ring: &[(f64, f64)]) -> bool {
    let n = ring.len() - 1; // closed ring: last vertex repeats the first
    let mut order: Vec<usize> = (0..n).collect();
    let seg_min_x = |i: usize| ring[i].0.min(ring[i + 1].0);
    let seg_max_x = |i: usize| ring[i].0.max(ring[i + 1].0);
    order.sort_by(|&a, &b| seg_min_x(a).partial_cmp(&seg_min_x(b)).unwrap());
    let mut active: Vec<usize> = Vec::new();
    for &i in &order {
        let min_x = seg_min_x(i);
        active.retain(|&j| seg_max_x(j) >= min_x);
        for &j in &active {
            if segments_cross_nonadjacent(ring, n, i, j) {
                return true;
            }
        }
        active.push(i);
    }
    false
}

fn segments_cross_nonadjacent(ring: &[(f64, f64)], n: usize, i: usize, j: usize) -> bool {
    // Edges sharing a ring vertex are adjacent and allowed to touch there.
    let adjacent = (i + 1) % n == j || (j + 1) % n == i;
    if adjacent {
        return false;
    }
    segments_intersect(ring[i], ring[i + 1], ring[j], ring[j + 1])
}

fn segments_intersect(p1: (f64, f64), p2: (f64, f64), q1: (f64, f64), q2: (f64, f64)) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && within(q1, q2, p1))
        || (d2 == 0.0 && within(q1, q2, p2))
        || (d3 == 0.0 && within(p1, p2, q1))
        || (d4 == 0.0 && within(p1, p2, q2))
}

fn orient(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
    (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
}

fn within(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> bool {
    p.0 >= a.0.min(b.0) && p.0 <= a.0.max(b.0) && p.1 >= a.1.min(b.1) && p.1 <= a.1.max(b.1)
}

/// Uniform-bin index over tile bounding boxes.
///
/// Roughly four bins per tile; deterministic and plenty for point-in-polygon
/// lookups at the tessellation sizes this tool targets.
#[derive(Debug, Clone)]
struct GridIndex {
    bbox: BBox,
    cols: usize,
    rows: usize,
    bins: Vec<Vec<u32>>,
}

impl GridIndex {
    fn build(tiles: &[Tile]) -> Option<Self> {
        if tiles.is_empty() {
            return None;
        }
        let mut bbox = tiles[0].bbox();
        for t in &tiles[1..] {
            let b = t.bbox();
            bbox.min_lon = bbox.min_lon.min(b.min_lon);
            bbox.min_lat = bbox.min_lat.min(b.min_lat);
            bbox.max_lon = bbox.max_lon.max(b.max_lon);
            bbox.max_lat = bbox.max_lat.max(b.max_lat);
        }
        let side = ((4 * tiles.len()) as f64).sqrt().ceil() as usize;
        let side = side.max(1);
        let mut index = GridIndex {
            bbox,
            cols: side,
            rows: side,
            bins: vec![Vec::new(); side * side],
        };
        for (i, tile) in tiles.iter().enumerate() {
            let b = tile.bbox();
            let (c0, r0) = index.bin_of(b.min_lon, b.min_lat);
            let (c1, r1) = index.bin_of(b.max_lon, b.max_lat);
            for r in r0..=r1 {
                for c in c0..=c1 {
                    index.bins[r * side + c].push(i as u32);
                }
            }
        }
        Some(index)
    }

    fn bin_of(&self, lon: f64, lat: f64) -> (usize, usize) {
        let fx = (lon - self.bbox.min_lon) / (self.bbox.max_lon - self.bbox.min_lon);
        let fy = (lat - self.bbox.min_lat) / (self.bbox.max_lat - self.bbox.min_lat);
        let c = ((fx * self.cols as f64) as isize).clamp(0, self.cols as isize - 1) as usize;
        let r = ((fy * self.rows as f64) as isize).clamp(0, self.rows as isize - 1) as usize;
        (c, r)
    }

    fn candidates(&self, lon: f64, lat: f64) -> &[u32] {
        if !self.bbox.contains(lon, lat) {
            return &[];
        }
        let (c, r) = self.bin_of(lon, lat);
        &self.bins[r * self.cols + c]
    }
}

/// A set of non-overlapping tiles with a spatial index and unique ids.
#[derive(Debug, Clone)]
pub struct Tessellation {
    tiles: Vec<Tile>,
    by_id: HashMap<String, usize>,
    index: Option<GridIndex>,
}

impl Tessellation {
    pub fn new(tiles: Vec<Tile>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(tiles.len());
        for (i, tile) in tiles.iter().enumerate() {
            if by_id.insert(tile.tile_id.clone(), i).is_some() {
                return Err(Error::Geometry(format!(
                    "duplicate tile_id '{}'",
                    tile.tile_id
                )));
            }
        }
        let index = GridIndex::build(&tiles);
        Ok(Tessellation {
            tiles,
            by_id,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.tiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tiles.is_empty()
    }

    pub fn tiles(&self) -> &[Tile] {
        &self.tiles
    }

    pub fn get(&self, tile_id: &str) -> Option<&Tile> {
        self.by_id.get(tile_id).map(|&i| &self.tiles[i])
    }

    /// Tile containing the point, or none. When multiple tiles contain it
    /// (shared edges), the lexicographically smallest tile_id wins.
    pub fn assign(&self, lon: f64, lat: f64) -> Option<&str> {
        let index = self.index.as_ref()?;
        index
            .candidates(lon, lat)
            .iter()
            .filter(|&&i| self.tiles[i as usize].contains(lon, lat))
            .map(|&i| self.tiles[i as usize].id())
            .min()
    }
}

/// Uniform meter-sized grid over a bbox; the fallback tessellation when no
/// official one exists. Cell edges are sized at the bbox center latitude and
/// ids run `r<row>c<col>` from the southwest corner.
pub fn make_grid(bbox: BBox, cell_size_m: f64) -> Result<Tessellation> {
    if !(cell_size_m > 0.0) {
        return Err(Error::Config(format!("cell size {cell_size_m} must be > 0")));
    }
    if bbox.min_lon > bbox.max_lon {
        return Err(Error::Config("bbox spans the antimeridian: unsupported".into()));
    }
    let lat_edge_deg = cell_size_m / METERS_PER_DEGREE;
    let center_lat = (bbox.min_lat + bbox.max_lat) / 2.0;
    let lon_edge_deg = lat_edge_deg / center_lat.to_radians().cos();
    let rows = ((bbox.max_lat - bbox.min_lat) / lat_edge_deg).ceil().max(1.0) as usize;
    let cols = ((bbox.max_lon - bbox.min_lon) / lon_edge_deg).ceil().max(1.0) as usize;
    let mut tiles = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let lat0 = bbox.min_lat + r as f64 * lat_edge_deg;
            let lat1 = lat0 + lat_edge_deg;
            let lon0 = bbox.min_lon + c as f64 * lon_edge_deg;
            let lon1 = lon0 + lon_edge_deg;
            let ring = vec![
                (lon0, lat0),
                (lon1, lat0),
                (lon1, lat1),
                (lon0, lat1),
                (lon0, lat0),
            ];
            tiles.push(Tile::new(
                format!("r{r}c{c}"),
                vec![ring],
                BTreeMap::new(),
            )?);
        }
    }
    Tessellation::new(tiles)
}

/// Load a GeoJSON FeatureCollection of Polygon / MultiPolygon features.
///
/// MultiPolygons are split into one tile per part with ids `<id>#k`. The
/// tile id comes from the `tile_id` property, falling back to `id`; numeric
/// properties (or numeric-parseable strings) become tile attributes.
pub fn load_tessellation(geojson_text: &str) -> Result<Tessellation> {
    let doc: serde_json::Value = serde_json::from_str(geojson_text)
        .map_err(|e| Error::Geometry(format!("invalid GeoJSON: {e}")))?;
    let features = doc
        .get("features")
        .and_then(|f| f.as_array())
        .ok_or_else(|| Error::Geometry("GeoJSON has no features array".into()))?;
    let mut tiles = Vec::with_capacity(features.len());
    for (fi, feature) in features.iter().enumerate() {
        let props = feature.get("properties").and_then(|p| p.as_object());
        let tile_id = props
            .and_then(|p| p.get("tile_id").or_else(|| p.get("id")))
            .map(json_to_id)
            .ok_or_else(|| {
                Error::Geometry(format!("feature {fi} has no tile_id or id property"))
            })?;
        let mut attributes = BTreeMap::new();
        if let Some(props) = props {
            for (name, value) in props {
                if name == "tile_id" || name == "id" {
                    continue;
                }
                let numeric = value
                    .as_f64()
                    .or_else(|| value.as_str().and_then(|s| s.parse::<f64>().ok()));
                if let Some(v) = numeric {
                    attributes.insert(name.clone(), v);
                }
            }
        }
        let geometry = feature
            .get("geometry")
            .ok_or_else(|| Error::Geometry(format!("tile '{tile_id}' has no geometry")))?;
        let gtype = geometry.get("type").and_then(|t| t.as_str()).unwrap_or("");
        let coords = geometry
            .get("coordinates")
            .ok_or_else(|| Error::Geometry(format!("tile '{tile_id}' has no coordinates")))?;
        match gtype {
            "Polygon" => {
                tiles.push(Tile::new(
                    tile_id.clone(),
                    parse_rings(coords, &tile_id)?,
                    attributes,
                )?);
            }
            "MultiPolygon" => {
                let parts = coords
                    .as_array()
                    .ok_or_else(|| Error::Geometry(format!("tile '{tile_id}' bad coordinates")))?;
                for (k, part) in parts.iter().enumerate() {
                    tiles.push(Tile::new(
                        format!("{tile_id}#{k}"),
                        parse_rings(part, &tile_id)?,
                        attributes.clone(),
                    )?);
                }
            }
            other => {
                return Err(Error::Geometry(format!(
                    "tile '{tile_id}' has non-polygon geometry '{other}'"
                )))
            }
        }
    }
    Tessellation::new(tiles)
}

fn json_to_id(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn parse_rings(coords: &serde_json::Value, tile_id: &str) -> Result<Vec<Vec<(f64, f64)>>> {
    let rings = coords
        .as_array()
        .ok_or_else(|| Error::Geometry(format!("tile '{tile_id}' bad ring array")))?;
    rings
        .iter()
        .map(|ring| {
            ring.as_array()
                .ok_or_else(|| Error::Geometry(format!("tile '{tile_id}' bad ring")))?
                .iter()
                .map(|pt| {
                    let pair = pt
                        .as_array()
                        .filter(|a| a.len() >= 2)
                        .ok_or_else(|| Error::Geometry(format!("tile '{tile_id}' bad vertex")))?;
                    Ok((
                        pair[0].as_f64().unwrap_or(f64::NAN),
                        pair[1].as_f64().unwrap_or(f64::NAN),
                    ))
                })
                .collect()
        })
        .collect()
}

/// Serialize a tessellation back to GeoJSON, attaching `extra` properties
/// per tile (used for cluster-label map exports).
pub fn tessellation_to_geojson(
    tess: &Tessellation,
    extra: &HashMap<String, Vec<(String, f64)>>,
) -> String {
    let features: Vec<serde_json::Value> = tess
        .tiles()
        .iter()
        .map(|tile| {
            let mut props = serde_json::Map::new();
            props.insert("tile_id".into(), tile.id().into());
            for (name, value) in tile.attributes() {
                props.insert(name.clone(), (*value).into());
            }
            if let Some(extras) = extra.get(tile.id()) {
                for (name, value) in extras {
                    props.insert(name.clone(), (*value).into());
                }
            }
            let rings: Vec<Vec<[f64; 2]>> = tile
                .rings()
                .iter()
                .map(|ring| ring.iter().map(|(x, y)| [*x, *y]).collect())
                .collect();
            serde_json::json!({
                "type": "Feature",
                "properties": props,
                "geometry": {"type": "Polygon", "coordinates": rings},
            })
        })
        .collect();
    serde_json::to_string_pretty(&serde_json::json!({
        "type": "FeatureCollection",
        "features": features,
    }))
    .expect("GeoJSON serialization cannot fail")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn square(id: &str, x0: f64, y0: f64, side: f64) -> Tile {
        Tile::new(
            id.to_string(),
            vec![vec![
                (x0, y0),
                (x0 + side, y0),
                (x0 + side, y0 + side),
                (x0, y0 + side),
                (x0, y0),
            ]],
            BTreeMap::new(),
        )
        .unwrap()
    }

    #[test]
    fn haversine_analytic_cases() {
        assert_eq!(haversine_m(12.0, 45.0, 12.0, 45.0), 0.0);
        let half = std::f64::consts::PI * EARTH_RADIUS_M;
        let got = haversine_m(0.0, 0.0, 180.0, 0.0);
        assert!((got - half).abs() / half < 1e-6, "{got} vs {half}");
        let one_deg = std::f64::consts::PI / 180.0 * EARTH_RADIUS_M;
        let got = haversine_m(0.0, 0.0, 1.0, 0.0);
        assert!((got - one_deg).abs() / one_deg < 1e-6, "{got} vs {one_deg}");
    }

    #[test]
    fn assign_center_and_outside() {
        let tess = Tessellation::new(vec![square("a", 0.0, 0.0, 1.0)]).unwrap();
        assert_eq!(tess.assign(0.5, 0.5), Some("a"));
        assert_eq!(tess.assign(2.0, 2.0), None);
    }

    #[test]
    fn shared_edge_resolves_lexicographically() {
        let tess = Tessellation::new(vec![
            square("b", 1.0, 0.0, 1.0),
            square("a", 0.0, 0.0, 1.0),
        ])
        .unwrap();
        // The point lies on the shared edge of both tiles.
        assert_eq!(tess.assign(1.0, 0.5), Some("a"));
    }

    #[test]
    fn duplicate_tile_id_is_fatal_and_named() {
        let err = Tessellation::new(vec![
            square("dup", 0.0, 0.0, 1.0),
            square("dup", 5.0, 5.0, 1.0),
        ])
        .unwrap_err();
        assert!(err.to_string().contains("dup"), "{err}");
    }

    #[test]
    fn self_intersecting_ring_rejected() {
        let bowtie = Tile::new(
            "bow".into(),
            vec![vec![
                (0.0, 0.0),
                (1.0, 1.0),
                (1.0, 0.0),
                (0.0, 1.0),
                (0.0, 0.0),
            ]],
            BTreeMap::new(),
        );
        let err = bowtie.unwrap_err();
        assert!(err.to_string().contains("bow"), "{err}");
    }

    #[test]
    fn open_or_tiny_rings_rejected() {
        assert!(Tile::new(
            "open".into(),
            vec![vec![(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]],
            BTreeMap::new()
        )
        .is_err());
        assert!(Tile::new(
            "tiny".into(),
            vec![vec![(0.0, 0.0), (1.0, 0.0), (0.0, 0.0)]],
            BTreeMap::new()
        )
        .is_err());
    }

    #[test]
    fn polygon_with_hole_excludes_hole() {
        let tile = Tile::new(
            "donut".into(),
            vec![
                vec![(0.0, 0.0), (4.0, 0.0), (4.0, 4.0), (0.0, 4.0), (0.0, 0.0)],
                vec![(1.0, 1.0), (3.0, 1.0), (3.0, 3.0), (1.0, 3.0), (1.0, 1.0)],
            ],
            BTreeMap::new(),
        )
        .unwrap();
        assert!(tile.contains(0.5, 0.5));
        assert!(!tile.contains(2.0, 2.0));
        assert!(tile.contains(1.0, 2.0), "hole boundary is inside");
    }

    #[test]
    fn grid_dimensions_match_hand_arithmetic() {
        // 0.01 deg of latitude is 1113.2 m; ceil(1113.2 / 500) = 3.
        let bbox = BBox::new(0.0, 0.0, 0.01, 0.01).unwrap();
        let tess = make_grid(bbox, 500.0).unwrap();
        assert_eq!(tess.len(), 9, "3x3 grid at the equator");
        assert!(tess.get("r0c0").is_some());
        assert!(tess.get("r2c2").is_some());
    }

    #[test]
    fn grid_cell_larger_than_bbox_gives_single_cell() {
        let bbox = BBox::new(0.0, 0.0, 0.001, 0.001).unwrap();
        let tess = make_grid(bbox, 10_000.0).unwrap();
        assert_eq!(tess.len(), 1);
    }

    #[test]
    fn grid_rejects_bad_inputs() {
        assert!(BBox::new(1.0, 0.0, 0.0, 1.0).is_err());
        let bbox = BBox::new(0.0, 0.0, 0.01, 0.01).unwrap();
        assert!(make_grid(bbox, 0.0).is_err());
    }

    #[test]
    fn geojson_round_trip_with_multipolygon_and_attributes() {
        let text = r#"{
            "type": "FeatureCollection",
            "features": [
                {"type": "Feature",
                 "properties": {"tile_id": "z1", "sei": 0.7, "name": "north"},
                 "geometry": {"type": "Polygon",
                   "coordinates": [[[0,0],[1,0],[1,1],[0,1],[0,0]]]}},
                {"type": "Feature",
                 "properties": {"id": 2, "sei": "0.3"},
                 "geometry": {"type": "MultiPolygon",
                   "coordinates": [
                     [[[2,0],[3,0],[3,1],[2,1],[2,0]]],
                     [[[4,0],[5,0],[5,1],[4,1],[4,0]]]]}}
            ]}"#;
        let tess = load_tessellation(text).unwrap();
        assert_eq!(tess.len(), 3);
        assert_eq!(tess.get("z1").unwrap().attribute("sei"), Some(0.7));
        assert!(tess.get("2#0").is_some());
        assert_eq!(tess.get("2#1").unwrap().attribute("sei"), Some(0.3));
        assert_eq!(tess.assign(2.5, 0.5), Some("2#0"));
    }

    #[test]
    fn geojson_rejects_non_polygon_and_duplicates() {
        let point = r#"{"type":"FeatureCollection","features":[
            {"type":"Feature","properties":{"tile_id":"p"},
             "geometry":{"type":"Point","coordinates":[0,0]}}]}"#;
        assert!(load_tessellation(point).is_err());
        let dup = r#"{"type":"FeatureCollection","features":[
            {"type":"Feature","properties":{"tile_id":"d"},
             "geometry":{"type":"Polygon","coordinates":[[[0,0],[1,0],[1,1],[0,1],[0,0]]]}},
            {"type":"Feature","properties":{"tile_id":"d"},
             "geometry":{"type":"Polygon","coordinates":[[[2,0],[3,0],[3,1],[2,1],[2,0]]]}}]}"#;
        assert!(load_tessellation(dup).unwrap_err().to_string().contains("'d'"));
    }

    #[test]
    fn thousand_tile_load_is_fast() {
        let mut features = Vec::new();
        for i in 0..1000 {
            let x = (i % 40) as f64 * 0.01;
            let y = (i / 40) as f64 * 0.01;
            features.push(format!(
                r#"{{"type":"Feature","properties":{{"tile_id":"t{i}","sei":{}}},
                 "geometry":{{"type":"Polygon","coordinates":[[[{x},{y}],[{},{y}],[{},{}],[{x},{}],[{x},{y}]]]}}}}"#,
                i as f64 / 1000.0,
                x + 0.01,
                x + 0.01,
                y + 0.01,
                y + 0.01,
            ));
        }
        let text = format!(
            r#"{{"type":"FeatureCollection","features":[{}]}}"#,
            features.join(",")
        );
        let start = std::time::Instant::now();
        let tess = load_tessellation(&text).unwrap();
        assert_eq!(tess.len(), 1000);
        assert!(start.elapsed().as_secs() < 5, "load took {:?}", start.elapsed());
    }

    proptest! {
        #[test]
        fn haversine_symmetry_and_triangle(
            lon1 in -179.0f64..179.0, lat1 in -89.0f64..89.0,
            lon2 in -179.0f64..179.0, lat2 in -89.0f64..89.0,
            lon3 in -179.0f64..179.0, lat3 in -89.0f64..89.0,
        ) {
            let dab = haversine_m(lon1, lat1, lon2, lat2);
            let dba = haversine_m(lon2, lat2, lon1, lat1);
            prop_assert!((dab - dba).abs() <= 1e-6 * dab.max(1.0));
            let dac = haversine_m(lon1, lat1, lon3, lat3);
            let dcb = haversine_m(lon3, lat3, lon2, lat2);
            prop_assert!(dab <= dac + dcb + 1e-6 * (dac + dcb).max(1.0));
            prop_assert!(dab >= 0.0);
        }

        #[test]
        fn grid_tiles_cover_interior_points_exactly_once(
            lon in 0.0005f64..0.0095, lat in 0.0005f64..0.0095,
        ) {
            let bbox = BBox::new(0.0, 0.0, 0.01, 0.01).unwrap();
            let tess = make_grid(bbox, 300.0).unwrap();
            let assigned = tess.assign(lon, lat);
            prop_assert!(assigned.is_some());
            // Brute-force scan agrees with the indexed assignment.
            let brute: Option<&str> = tess
                .tiles()
                .iter()
                .filter(|t| t.contains(lon, lat))
                .map(|t| t.id())
                .min();
            prop_assert_eq!(assigned, brute);
        }
    }

    #[test]
    fn indexed_assignment_equals_brute_force_scan() {
        // Irregular tessellation: shifted rows of squares plus an offset block.
        let mut tiles = Vec::new();
        for r in 0..10 {
            for c in 0..10 {
                let x0 = c as f64 * 0.01 + (r % 3) as f64 * 0.002;
                let y0 = r as f64 * 0.01;
                tiles.push(square(&format!("s{r}_{c}"), x0, y0, 0.011));
            }
        }
        let tess = Tessellation::new(tiles).unwrap();
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..10_000 {
            let lon = next() * 0.14 - 0.01;
            let lat = next() * 0.12 - 0.01;
            let indexed = tess.assign(lon, lat);
            let brute: Option<&str> = tess
                .tiles()
                .iter()
                .filter(|t| t.contains(lon, lat))
                .map(|t| t.id())
                .min();
            assert_eq!(indexed, brute, "at ({lon},{lat})");
        }
    }
}
