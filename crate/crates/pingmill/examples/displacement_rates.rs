//! Post-earthquake displacement rates grouped by distance from the
//! epicenter, including the SVG chart the CLI would emit.
//!
//! Run with: cargo run --example displacement_rates

use pingmill::chart::{line_chart, ChartSeries};
use pingmill::clock::{from_local, LocalClock, LocalDate, TimeWindow};
use pingmill::displacement::{
    displacement_rates, displacement_series, group_users, EventConfig, GroupingSpec, NightWindow,
};
use pingmill::engine::{Dataset, Engine, EngineConfig};
use pingmill::homework::{infer_home_work, HomeWorkParams};
use pingmill::ping::Ping;

fn main() {
    let clock = LocalClock::utc();
    let day0 = LocalDate::from_ymd(2023, 6, 1);
    let event_date = LocalDate::from_ordinal(day0.ordinal() + 14);
    let event_time = from_local(event_date, 6, 0, 0, &clock);

    // 120 users in three distance bands; closer bands displace more, and a
    // third of the displaced return after four nights.
    let mut pings = Vec::new();
    let bands = [(0.03f64, 0.5f64), (0.30, 0.2), (0.95, 0.05)];
    let mut user_no = 0;
    for (band_lon, displaced_share) in bands {
        for i in 0..40 {
            let user = format!("u{user_no:03}");
            user_no += 1;
            let home = (band_lon, 0.01 + i as f64 * 0.0004);
            let displaced = (i as f64) < 40.0 * displaced_share;
            let returns_early = displaced && i % 3 == 0;
            for night in 0..21 {
                let date = LocalDate::from_ordinal(day0.ordinal() + night);
                let nights_after_event = date.ordinal() - event_date.ordinal();
                let away = displaced
                    && nights_after_event >= 0
                    && !(returns_early && nights_after_event >= 4);
                let lon = if away { home.0 + 0.12 } else { home.0 };
                for hour in [22u8, 23, 2] {
                    let stamp_date = if hour < 12 { date.succ() } else { date };
                    pings.push(Ping {
                        user_id: user.clone(),
                        timestamp_utc: from_local(stamp_date, hour, 30, 0, &clock),
                        lon,
                        lat: home.1,
                        accuracy_m: None,
                    });
                }
            }
        }
    }

    let event = EventConfig {
        event_time_utc: event_time,
        epicenter: Some((0.0, 0.0)),
        baseline_window: TimeWindow::new(event_time - 14 * 86_400, event_time).unwrap(),
        observation_window: TimeWindow::new(event_time, event_time + 7 * 86_400).unwrap(),
    };

    let engine = Engine::new(EngineConfig::default()).expect("engine");
    let ds = Dataset::from_vec(pings, 8);

    // Homes come strictly from the pre-event window.
    let baseline_window = event.baseline_window;
    let baseline = ds.clone().filter(move |p: &Ping| baseline_window.contains(p.timestamp_utc));
    let homes = infer_home_work(
        &engine,
        &baseline,
        &clock,
        &HomeWorkParams::conventional(),
        None,
        4,
    )
    .expect("homes");
    println!(
        "inferred homes for {} of {} users",
        homes.iter().filter(|h| h.home.is_some()).count(),
        homes.len()
    );

    let night = NightWindow::conventional();
    let (records, coverage) =
        displacement_series(&engine, &ds, &homes, &event, 500.0, &clock, &night).expect("series");
    println!("{} user-night records, exclusions: {coverage:?}\n", records.len());

    let grouping = GroupingSpec::EpicenterRings {
        ring_edges_km: vec![10.0, 60.0],
    };
    let (groups, _) = group_users(&homes, None, &grouping, &event).expect("groups");
    let rates = displacement_rates(&records, &groups, 10);

    println!("date        group    observed  displaced   rate");
    for r in &rates {
        println!(
            "{}  {:<8} {:>8} {:>9} {:>7.3}",
            r.date, r.group, r.observed_users, r.displaced_users, r.rate
        );
    }

    // The same chart the CLI writes next to the CSV.
    let mut by_group: std::collections::BTreeMap<&str, Vec<(LocalDate, f64)>> = Default::default();
    for r in &rates {
        by_group.entry(&r.group).or_default().push((r.date, r.rate));
    }
    let series: Vec<ChartSeries> = by_group
        .into_iter()
        .map(|(label, points)| ChartSeries {
            label: label.to_string(),
            points,
        })
        .collect();
    let svg = line_chart("displacement rate by epicenter ring", "rate", &series).unwrap();
    let path = std::env::temp_dir().join("displacement_rates_example.svg");
    std::fs::write(&path, svg).unwrap();
    println!("\nchart written to {}", path.display());
}
