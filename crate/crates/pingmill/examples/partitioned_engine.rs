//! The batch engine on its own: lazy transforms, keyed shuffle, two-phase
//! reduction with a user-defined fold, and the determinism guarantee.
//!
//! Run with: cargo run --example partitioned_engine

use pingmill::engine::record::{key_str, put_f64, put_str, ByteReader, FieldDef, FieldKind};
use pingmill::engine::{Dataset, Engine, EngineConfig, Fold, Record};

/// A custom row type: implement `Record` and it can flow through shuffles
/// and keyed folds.
#[derive(Debug, Clone)]
struct Reading {
    sensor: String,
    value: f64,
}

impl Record for Reading {
    fn schema() -> &'static [FieldDef] {
        &[("sensor", FieldKind::Str), ("value", FieldKind::F64)]
    }

    fn key_bytes(&self, field: &str, out: &mut Vec<u8>) -> bool {
        match field {
            "sensor" => key_str(&self.sensor, out),
            _ => return false,
        }
        true
    }

    fn encode(&self, out: &mut Vec<u8>) {
        put_str(&self.sensor, out);
        put_f64(self.value, out);
    }

    fn decode(input: &mut ByteReader<'_>) -> pingmill::Result<Self> {
        Ok(Reading {
            sensor: input.str()?,
            value: input.f64()?,
        })
    }
}

/// User-defined aggregation: count, sum, min, max per key.
struct Summary;

impl Fold<Reading> for Summary {
    type Acc = (u64, f64, f64, f64);

    fn empty(&self) -> Self::Acc {
        (0, 0.0, f64::INFINITY, f64::NEG_INFINITY)
    }

    fn add(&self, acc: &mut Self::Acc, row: Reading) {
        acc.0 += 1;
        acc.1 += row.value;
        acc.2 = acc.2.min(row.value);
        acc.3 = acc.3.max(row.value);
    }

    fn merge(&self, into: &mut Self::Acc, other: Self::Acc) {
        into.0 += other.0;
        into.1 += other.1;
        into.2 = into.2.min(other.2);
        into.3 = into.3.max(other.3);
    }
}

fn main() {
    let mut rows = Vec::new();
    let mut state = 11u64;
    for i in 0..200_000u64 {
        state = state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        rows.push(Reading {
            sensor: format!("s{:02}", state % 17),
            value: (i % 1000) as f64 / 10.0,
        });
    }

    let mut tables = Vec::new();
    for workers in [1usize, 8] {
        let engine = Engine::new(EngineConfig {
            worker_count: workers,
            ..EngineConfig::default()
        })
        .expect("engine");

        // Lazy row transforms; nothing runs until an action.
        let ds = Dataset::from_vec(rows.clone(), 12)
            .map(|r: Reading| Reading {
                value: r.value * 1.5,
                ..r
            })
            .filter(|r| r.value >= 15.0);

        // Shuffle co-locates each sensor's rows, spilling through disk.
        let shuffled = engine.shuffle_by_key(&ds, "sensor", 5).expect("shuffle");
        println!(
            "workers={workers}: {} rows in {} shuffle partitions",
            engine.count(&shuffled).expect("count"),
            shuffled.partition_count()
        );

        // Two-phase reduction with the custom fold.
        let table = engine.reduce_by_key(&ds, "sensor", &Summary).expect("reduce");
        tables.push(table);
    }

    // Same bytes regardless of parallelism.
    let identical = tables[0].len() == tables[1].len()
        && tables[0]
            .iter()
            .zip(&tables[1])
            .all(|(a, b)| a.0 == b.0 && a.1 == b.1);
    println!("\n1-worker and 8-worker results identical: {identical}\n");

    println!("sensor   count      sum     min     max");
    for (key, (count, sum, min, max)) in &tables[1] {
        println!(
            "{:<8} {count:>5} {sum:>9.1} {min:>7.1} {max:>7.1}",
            String::from_utf8_lossy(key)
        );
    }
}
