//! Land-use classes from hour-of-week activity profiles: a synthetic city
//! with a residential west side and a commercial east side.
//!
//! Run with: cargo run --example land_use_clustering

use std::sync::Arc;

use pingmill::clock::{from_local, LocalClock, LocalDate};
use pingmill::engine::{Dataset, Engine, EngineConfig};
use pingmill::hierarchy::{Linkage, Metric};
use pingmill::landuse::{
    cluster_signatures, hierarchical_cluster, normalize_profiles, tile_activity_profiles,
    CountMode,
};
use pingmill::ping::Ping;
use pingmill::spatial::{make_grid, BBox};

fn main() {
    let clock = LocalClock::utc();
    let day0 = LocalDate::from_ymd(2023, 3, 6); // a Monday
    let mut state = 7u64;
    let mut rand = move || {
        state = state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        (state >> 11) as f64 / (1u64 << 53) as f64
    };

    // West half: evening/night activity. East half: weekday 9-17 activity.
    let mut pings = Vec::new();
    for _ in 0..40_000 {
        let commercial = rand() < 0.5;
        let lon = if commercial {
            0.05 + rand() * 0.05
        } else {
            rand() * 0.05
        };
        let lat = rand() * 0.05;
        let day = (rand() * 14.0) as i32;
        let date = LocalDate::from_ordinal(day0.ordinal() + day);
        let weekday = (date.ordinal() + 3).rem_euclid(7);
        let hour = if commercial {
            if weekday < 5 && rand() < 0.9 {
                9 + (rand() * 8.0) as u8
            } else {
                (rand() * 24.0) as u8
            }
        } else if rand() < 0.8 {
            let evening = [19u8, 20, 21, 22, 23, 0, 1, 5, 6];
            evening[(rand() * evening.len() as f64) as usize]
        } else {
            (rand() * 24.0) as u8
        };
        pings.push(Ping {
            user_id: format!("u{}", (rand() * 500.0) as u32),
            timestamp_utc: from_local(date, hour.min(23), 0, 0, &clock),
            lon,
            lat,
            accuracy_m: None,
        });
    }

    let tess = Arc::new(make_grid(BBox::new(0.0, 0.0, 0.1, 0.05).unwrap(), 1200.0).unwrap());
    let engine = Engine::new(EngineConfig::default()).expect("engine");
    let ds = Dataset::from_vec(pings, 8);

    let profiles =
        tile_activity_profiles(&engine, &ds, tess.clone(), &clock, CountMode::Pings).expect("profiles");
    println!("{} active tiles of {}", profiles.len(), tess.len());

    let (normalized, _) = normalize_profiles(profiles);
    let clustering =
        hierarchical_cluster(&normalized, 2, Linkage::Ward, Metric::Euclidean).expect("clustering");

    // How well does the split recover the east/west divide? Cells are about
    // 0.0108 degrees wide, so columns 0-4 sit in the residential half.
    let mut west = [0usize; 2];
    let mut east = [0usize; 2];
    for (tile, label) in &clustering.labels {
        let col: usize = tile[tile.find('c').unwrap() + 1..].parse().unwrap();
        if col < 5 {
            west[*label] += 1;
        } else {
            east[*label] += 1;
        }
    }
    println!("cluster 0: {} west tiles, {} east tiles", west[0], east[0]);
    println!("cluster 1: {} west tiles, {} east tiles", west[1], east[1]);

    // Signatures make the interpretation visible: weekday-noon vs night mass.
    let signatures = cluster_signatures(&normalized, &clustering).expect("signatures");
    for (c, sig) in signatures.iter().enumerate() {
        let workday_noon: f64 = (0..5).map(|d| sig[d * 24 + 12]).sum();
        let night: f64 = (0..7).map(|d| sig[d * 24 + 23]).sum();
        println!(
            "cluster {c}: weekday-noon mass {workday_noon:.4}, late-night mass {night:.4}"
        );
    }
    println!(
        "\nlast merges: {:?}",
        &clustering.merge_tree[clustering.merge_tree.len().saturating_sub(2)..]
            .iter()
            .map(|(a, b, d)| format!("{a}+{b} @ {d:.3}"))
            .collect::<Vec<_>>()
    );
}
