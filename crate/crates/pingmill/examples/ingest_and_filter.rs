//! Reading raw CSV ping files: chunked partitions, validation with reject
//! reasons, timestamp-unit auto-detection, and spatial/temporal filtering.
//!
//! Run with: cargo run --example ingest_and_filter

use std::io::Write as _;

use pingmill::clock::TimeWindow;
use pingmill::engine::{Engine, EngineConfig};
use pingmill::ingest::{filter_pings, read_pings, FilterSpec, PingSchemaConfig};
use pingmill::spatial::BBox;

fn main() {
    // A messy input file: millisecond timestamps, a bad coordinate, an
    // empty user, and a negative accuracy.
    let dir = std::env::temp_dir().join("pingmill_ingest_example");
    std::fs::create_dir_all(&dir).unwrap();
    let input = dir.join("pings.csv");
    let mut f = std::fs::File::create(&input).unwrap();
    writeln!(f, "user_id,timestamp,lat,lon,accuracy").unwrap();
    writeln!(f, "u1,1500000000,19.43,-99.13,10").unwrap();
    writeln!(f, "u1,1500000300000,19.44,-99.14,").unwrap(); // ms, auto-detected
    writeln!(f, "u2,1500000600,95.0,-99.13,5").unwrap(); // bad latitude
    writeln!(f, ",1500000900,19.43,-99.13,5").unwrap(); // empty user
    writeln!(f, "u3,1500001200,19.40,-99.10,-4").unwrap(); // bad accuracy
    writeln!(f, "u3,1500001500,19.40,-99.10,80").unwrap();
    drop(f);

    let engine = Engine::new(EngineConfig::default()).expect("engine");
    let (ds, monitor) =
        read_pings(&[input], &PingSchemaConfig::default(), engine.config()).expect("plan");
    let pings = engine.collect(&ds).expect("read");
    let (read, emitted, rejected) = monitor.totals();
    println!("read {read} rows: {emitted} pings, {rejected} rejects");
    for p in &pings {
        println!("  {} @ {} ({:.2},{:.2}) accuracy {:?}", p.user_id, p.timestamp_utc, p.lon, p.lat, p.accuracy_m);
    }

    let rejects_path = dir.join("rejects.csv");
    monitor.write_rejects_csv(&rejects_path).expect("rejects");
    println!("\nrejects sidecar:\n{}", std::fs::read_to_string(&rejects_path).unwrap());

    // Filter: bounding box around Mexico City, a time window, and an
    // accuracy ceiling. Missing accuracy is kept by design.
    let spec = FilterSpec {
        bbox: Some(BBox::new(-99.5, 19.0, -98.5, 20.0).unwrap()),
        time_window: Some(TimeWindow::new(1_500_000_000, 1_500_001_000).unwrap()),
        max_accuracy_m: Some(50.0),
        user_allowlist: None,
    };
    let kept = engine.collect(&filter_pings(ds, spec)).expect("filter");
    println!("after filtering: {} pings", kept.len());
    for p in &kept {
        println!("  {} @ {}", p.user_id, p.timestamp_utc);
    }
}
