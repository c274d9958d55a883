//! Per-user activity statistics over a synthetic ping set.
//!
//! Run with: cargo run --example user_stats

use pingmill::clock::LocalClock;
use pingmill::engine::{Dataset, Engine, EngineConfig};
use pingmill::ping::Ping;
use pingmill::stats::{filter_users, user_stats, UserFilterCriteria};

fn main() {
    // Ten users with very different activity levels: user u00 pings once,
    // u09 pings ten times a day for ten days.
    let mut pings = Vec::new();
    for u in 0..10u32 {
        for day in 0..=u {
            for k in 0..=u {
                pings.push(Ping {
                    user_id: format!("u{u:02}"),
                    timestamp_utc: day as i64 * 86_400 + k as i64 * 3_600,
                    lat: 19.3 + u as f64 * 0.01,
                    lon: -99.2 + k as f64 * 0.01,
                    accuracy_m: Some(12.0),
                });
            }
        }
    }
    println!("{} pings from 10 users\n", pings.len());

    let engine = Engine::new(EngineConfig::default()).expect("engine");
    let clock = LocalClock::from_offset_minutes(-360).expect("UTC-6");
    let ds = Dataset::from_vec(pings, 4);

    let table = user_stats(&engine, &ds, &clock).expect("stats");
    println!("user        pings  active  span  avg/day");
    for s in &table {
        println!(
            "{:<10} {:>6} {:>7} {:>5} {:>8.2}",
            s.user_id, s.total_pings, s.active_days, s.span_days, s.avg_pings_per_active_day
        );
    }

    // Keep users with at least five active days.
    let criteria = UserFilterCriteria {
        min_active_days: Some(5),
        ..UserFilterCriteria::default()
    };
    let kept = filter_users(ds, &table, &criteria).expect("filter");
    let remaining = engine.count(&kept).expect("count");
    println!("\nwith min_active_days = 5: {remaining} pings remain");
}
