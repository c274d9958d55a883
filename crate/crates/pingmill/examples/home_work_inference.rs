//! Home and work anchors for synthetic commuters, with the OD matrix.
//!
//! Run with: cargo run --example home_work_inference

use std::sync::Arc;

use pingmill::clock::{from_local, to_local, LocalClock, LocalDate};
use pingmill::engine::{Dataset, Engine, EngineConfig};
use pingmill::homework::{infer_home_work, od_matrix, HomeWorkParams};
use pingmill::ping::Ping;
use pingmill::spatial::{haversine_m, make_grid, BBox};

/// Deterministic jitter of roughly +-25 m.
fn jitter(state: &mut u64) -> f64 {
    *state = state
        .wrapping_mul(6364136223846793005)
        .wrapping_add(1442695040888963407);
    ((*state >> 33) as f64 / (1u64 << 31) as f64 - 0.5) * 0.00045
}

fn main() {
    let clock = LocalClock::utc();
    let day0 = LocalDate::from_ymd(2023, 3, 6); // a Monday
    let mut state = 42u64;
    let mut pings = Vec::new();

    // Five commuters: homes on the west side, workplaces on the east side.
    let homes = [(0.010, 0.012), (0.014, 0.030), (0.008, 0.046), (0.012, 0.060), (0.016, 0.020)];
    let works = [(0.072, 0.015), (0.068, 0.034), (0.074, 0.050), (0.070, 0.062), (0.066, 0.024)];
    for (u, (home, work)) in homes.iter().zip(&works).enumerate() {
        let user = format!("commuter{u}");
        for d in 0..14 {
            let date = LocalDate::from_ordinal(day0.ordinal() + d);
            let weekday = to_local(from_local(date, 12, 0, 0, &clock), &clock).weekday;
            for hour in [22u8, 23, 3] {
                pings.push(Ping {
                    user_id: user.clone(),
                    timestamp_utc: from_local(date, hour, 10, 0, &clock),
                    lon: home.0 + jitter(&mut state),
                    lat: home.1 + jitter(&mut state),
                    accuracy_m: None,
                });
            }
            if weekday < 5 {
                for hour in [9u8, 12, 15] {
                    pings.push(Ping {
                        user_id: user.clone(),
                        timestamp_utc: from_local(date, hour, 40, 0, &clock),
                        lon: work.0 + jitter(&mut state),
                        lat: work.1 + jitter(&mut state),
                        accuracy_m: None,
                    });
                }
            }
        }
    }

    let tess = Arc::new(make_grid(BBox::new(0.0, 0.0, 0.09, 0.08).unwrap(), 1000.0).unwrap());
    let engine = Engine::new(EngineConfig::default()).expect("engine");
    let ds = Dataset::from_vec(pings, 4);
    let results = infer_home_work(
        &engine,
        &ds,
        &clock,
        &HomeWorkParams::conventional(),
        Some(tess),
        4,
    )
    .expect("inference");

    println!("user        home tile   work tile   commute (m)");
    for r in &results {
        let (home, work) = (r.home.as_ref().unwrap(), r.work.as_ref().unwrap());
        let commute = haversine_m(home.lon, home.lat, work.lon, work.lat);
        println!(
            "{:<10} {:<11} {:<11} {:>10.0}",
            r.user_id,
            home.tile_id.as_deref().unwrap_or("-"),
            work.tile_id.as_deref().unwrap_or("-"),
            commute
        );
    }

    let (matrix, coverage) = od_matrix(&results);
    println!("\nOD matrix ({} users):", matrix.total_users());
    for ((home, work), n) in matrix.entries() {
        println!("  {home} -> {work}: {n}");
    }
    if !coverage.is_empty() {
        println!("coverage exclusions: {coverage:?}");
    }
}
