//! Tile population anomalies: a flood empties the riverside tiles and the
//! z-scores flag exactly those.
//!
//! Run with: cargo run --example density_anomalies

use std::sync::Arc;

use pingmill::clock::{from_local, LocalClock, LocalDate, TimeWindow};
use pingmill::displacement::{tile_population_anomalies, EventConfig};
use pingmill::engine::{Dataset, Engine, EngineConfig};
use pingmill::ping::Ping;
use pingmill::spatial::{make_grid, BBox};

fn main() {
    let clock = LocalClock::utc();
    let day0 = LocalDate::from_ymd(2023, 9, 1);
    let event_date = LocalDate::from_ordinal(day0.ordinal() + 10);
    let event_time = from_local(event_date, 0, 0, 0, &clock);

    let mut state = 99u64;
    let mut rand = move || {
        state = state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        (state >> 11) as f64 / (1u64 << 53) as f64
    };

    // Two neighborhoods: the riverside strip (lat < 0.01) floods after the
    // event, the uphill strip absorbs some of its residents.
    let mut pings = Vec::new();
    for day in 0..14i32 {
        let date = LocalDate::from_ordinal(day0.ordinal() + day);
        let flooded = date >= event_date;
        for u in 0..400u32 {
            let riverside_resident = u < 200;
            let (lon, lat) = if riverside_resident && flooded {
                // Most riverside residents show up uphill instead.
                if u % 10 < 8 {
                    (rand() * 0.04, 0.012 + rand() * 0.008)
                } else {
                    (rand() * 0.04, rand() * 0.01)
                }
            } else if riverside_resident {
                (rand() * 0.04, rand() * 0.01)
            } else {
                (rand() * 0.04, 0.012 + rand() * 0.008)
            };
            pings.push(Ping {
                user_id: format!("u{u:03}"),
                timestamp_utc: from_local(date, 8 + (rand() * 12.0) as u8, 0, 0, &clock),
                lon,
                lat,
                accuracy_m: None,
            });
        }
    }

    let tess = Arc::new(make_grid(BBox::new(0.0, 0.0, 0.04, 0.02).unwrap(), 1100.0).unwrap());
    let event = EventConfig {
        event_time_utc: event_time,
        epicenter: None,
        baseline_window: TimeWindow::new(from_local(day0, 0, 0, 0, &clock), event_time).unwrap(),
        observation_window: TimeWindow::new(event_time, event_time + 4 * 86_400).unwrap(),
    };

    let engine = Engine::new(EngineConfig::default()).expect("engine");
    let ds = Dataset::from_vec(pings, 8);
    let rows = tile_population_anomalies(&engine, &ds, tess, &clock, &event, 10).expect("anomalies");

    println!("tile      date        users  baseline   z-score  pct");
    for r in rows.iter().filter(|r| r.date == event_date) {
        println!(
            "{:<9} {}  {:>5} {:>9.1} {:>9} {:>7}",
            r.tile_id,
            r.date,
            r.observed_users,
            r.baseline_mean,
            r.z_score.map(|z| format!("{z:+.1}")).unwrap_or_else(|| "-".into()),
            r.pct_change
                .map(|p| format!("{p:+.2}"))
                .unwrap_or_else(|| "-".into()),
        );
    }

    let flagged: Vec<&str> = rows
        .iter()
        .filter(|r| r.date == event_date && r.z_score.is_some_and(|z| z.abs() >= 3.0))
        .map(|r| r.tile_id.as_str())
        .collect();
    println!("\ntiles beyond 3 sigma on the event day: {flagged:?}");
}
