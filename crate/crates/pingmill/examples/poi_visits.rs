//! POI visit tracking: a market closes for three days after an event and
//! its visit-rate change hits -1.0.
//!
//! Run with: cargo run --example poi_visits

use std::sync::Arc;

use pingmill::clock::{from_local, LocalClock, LocalDate, TimeWindow};
use pingmill::displacement::EventConfig;
use pingmill::engine::{Dataset, Engine, EngineConfig};
use pingmill::ping::Ping;
use pingmill::poi::{daily_visits, visit_rate_change, PoiIndex, PointOfInterest};

fn main() {
    let clock = LocalClock::utc();
    let day0 = LocalDate::from_ymd(2023, 4, 1);
    let event_date = LocalDate::from_ordinal(day0.ordinal() + 10);
    let event_time = from_local(event_date, 0, 0, 0, &clock);

    let pois = vec![
        PointOfInterest::new("market".into(), 0.010, 0.010, 150.0).unwrap(),
        PointOfInterest::new("clinic".into(), 0.030, 0.010, 150.0).unwrap(),
    ];
    let mut state = 3u64;
    let mut rand = move || {
        state = state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        (state >> 11) as f64 / (1u64 << 53) as f64
    };

    let mut pings = Vec::new();
    for day in 0..16i32 {
        let date = LocalDate::from_ordinal(day0.ordinal() + day);
        let market_closed = (0..3).contains(&(date.ordinal() - event_date.ordinal()));
        // ~40 market regulars, ~25 clinic visitors per day; the clinic gets
        // busier after the event.
        for u in 0..40u32 {
            if !market_closed && rand() < 0.9 {
                pings.push(Ping {
                    user_id: format!("m{u:02}"),
                    timestamp_utc: from_local(date, 10, (rand() * 59.0) as u8, 0, &clock),
                    lon: 0.010 + (rand() - 0.5) * 0.002,
                    lat: 0.010 + (rand() - 0.5) * 0.002,
                    accuracy_m: None,
                });
            }
        }
        let clinic_demand = if date >= event_date { 0.95 } else { 0.6 };
        for u in 0..40u32 {
            if rand() < clinic_demand {
                pings.push(Ping {
                    user_id: format!("c{u:02}"),
                    timestamp_utc: from_local(date, 14, (rand() * 59.0) as u8, 0, &clock),
                    lon: 0.030 + (rand() - 0.5) * 0.002,
                    lat: 0.010 + (rand() - 0.5) * 0.002,
                    accuracy_m: None,
                });
            }
        }
    }

    let engine = Engine::new(EngineConfig::default()).expect("engine");
    let ds = Dataset::from_vec(pings, 6);
    let index = Arc::new(PoiIndex::build(pois).expect("index"));
    let poi_ids: Vec<String> = index.pois().iter().map(|p| p.poi_id.clone()).collect();

    let visits = daily_visits(&engine, &ds, index, &clock).expect("visits");
    println!("{} (poi, date) visit rows", visits.len());

    let event = EventConfig {
        event_time_utc: event_time,
        epicenter: None,
        baseline_window: TimeWindow::new(from_local(day0, 0, 0, 0, &clock), event_time).unwrap(),
        observation_window: TimeWindow::new(event_time, event_time + 6 * 86_400).unwrap(),
    };
    let changes = visit_rate_change(&visits, &poi_ids, &event, &clock, 0).expect("changes");

    println!("\npoi     date        visitors  baseline     pct      z");
    for r in &changes {
        println!(
            "{:<7} {}  {:>8} {:>9.1} {:>7} {:>6}",
            r.poi_id,
            r.date,
            r.visitors,
            r.baseline_mean,
            r.pct_change
                .map(|p| format!("{p:+.2}"))
                .unwrap_or_else(|| "-".into()),
            r.z_score.map(|z| format!("{z:+.1}")).unwrap_or_else(|| "-".into()),
        );
    }

    let closure_days: Vec<String> = changes
        .iter()
        .filter(|r| r.poi_id == "market" && r.pct_change == Some(-1.0))
        .map(|r| r.date.to_string())
        .collect();
    println!("\nmarket fully closed on: {closure_days:?}");
}
