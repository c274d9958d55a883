//! Shared fixtures and independent single-pass oracles for the integration
//! and acceptance suites. Oracles deliberately reimplement the arithmetic
//! (no engine, no spatial index) so they can catch pipeline bugs.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::Write;
use std::path::Path;

use pingmill::clock::{to_local, LocalClock};
use pingmill::ingest::FilterSpec;
use pingmill::ping::Ping;
use pingmill::poi::PointOfInterest;
use pingmill::spatial::Tessellation;
use pingmill::stats::{UserFilterCriteria, UserStats};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Deterministic synthetic corpus: `users` users, `count` pings over
/// `days` days inside the given lon/lat box.
pub fn synth_corpus(users: usize, count: usize, days: u32, seed: u64) -> Vec<Ping> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pings = Vec::with_capacity(count);
    for _ in 0..count {
        let u = rng.gen_range(0..users);
        pings.push(Ping {
            user_id: format!("u{u:04}"),
            timestamp_utc: rng.gen_range(0..days as i64 * 86_400),
            lon: rng.gen_range(0.0..0.2),
            lat: rng.gen_range(0.0..0.2),
            accuracy_m: if rng.gen_bool(0.3) {
                None
            } else {
                Some(rng.gen_range(1.0..120.0))
            },
        });
    }
    pings
}

/// Write pings as the default-schema CSV.
pub fn write_pings_csv(path: &Path, pings: &[Ping]) {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).unwrap());
    writeln!(out, "user_id,timestamp,lat,lon,accuracy").unwrap();
    for p in pings {
        match p.accuracy_m {
            Some(a) => writeln!(out, "{},{},{},{},{}", p.user_id, p.timestamp_utc, p.lat, p.lon, a),
            None => writeln!(out, "{},{},{},{},", p.user_id, p.timestamp_utc, p.lat, p.lon),
        }
        .unwrap();
    }
    out.flush().unwrap();
}

// --- independent oracles ----------------------------------------------------

pub fn naive_user_stats(pings: &[Ping], clock: &LocalClock) -> Vec<UserStats> {
    let mut per_user: HashMap<&str, (u64, BTreeSet<i32>)> = HashMap::new();
    for p in pings {
        let e = per_user.entry(&p.user_id).or_default();
        e.0 += 1;
        e.1.insert(to_local(p.timestamp_utc, clock).date.ordinal());
    }
    let mut out: Vec<UserStats> = per_user
        .into_iter()
        .map(|(user, (total, dates))| {
            let active = dates.len() as u32;
            let span = (dates.iter().next_back().unwrap() - dates.iter().next().unwrap() + 1) as u32;
            UserStats {
                user_id: user.to_string(),
                total_pings: total,
                active_days: active,
                span_days: span,
                avg_pings_per_active_day: total as f64 / active as f64,
            }
        })
        .collect();
    out.sort_by(|a, b| a.user_id.cmp(&b.user_id));
    out
}

/// Re-derives every criterion by hand rather than calling `FilterSpec::keeps`.
pub fn naive_filter(pings: &[Ping], spec: &FilterSpec) -> Vec<Ping> {
    pings
        .iter()
        .filter(|p| {
            if let Some(b) = &spec.bbox {
                if p.lon < b.min_lon || p.lon > b.max_lon || p.lat < b.min_lat || p.lat > b.max_lat
                {
                    return false;
                }
            }
            if let Some(w) = &spec.time_window {
                if p.timestamp_utc < w.start() || p.timestamp_utc >= w.end() {
                    return false;
                }
            }
            if let (Some(max), Some(acc)) = (spec.max_accuracy_m, p.accuracy_m) {
                if acc > max {
                    return false;
                }
            }
            if let Some(users) = &spec.user_allowlist {
                if !users.contains(&p.user_id) {
                    return false;
                }
            }
            true
        })
        .cloned()
        .collect()
}

pub fn naive_filter_users(
    pings: &[Ping],
    clock: &LocalClock,
    criteria: &UserFilterCriteria,
) -> Vec<Ping> {
    let stats = naive_user_stats(pings, clock);
    let keep: HashSet<&str> = stats
        .iter()
        .filter(|s| {
            criteria.min_active_days.map_or(true, |m| s.active_days >= m)
                && criteria.min_total_pings.map_or(true, |m| s.total_pings >= m)
                && criteria
                    .min_avg_pings_per_day
                    .map_or(true, |m| s.avg_pings_per_active_day >= m)
                && criteria.min_span_days.map_or(true, |m| s.span_days >= m)
        })
        .map(|s| s.user_id.as_str())
        .collect();
    pings
        .iter()
        .filter(|p| keep.contains(p.user_id.as_str()))
        .cloned()
        .collect()
}

/// Brute-force tile assignment: scan every tile with an inline even-odd
/// test, no index involved.
pub fn brute_assign<'t>(tess: &'t Tessellation, lon: f64, lat: f64) -> Option<&'t str> {
    tess.tiles()
        .iter()
        .filter(|t| {
            let mut inside = false;
            let mut on_edge = false;
            for ring in t.rings() {
                for e in ring.windows(2) {
                    let (ax, ay) = e[0];
                    let (bx, by) = e[1];
                    let cross = (bx - ax) * (lat - ay) - (by - ay) * (lon - ax);
                    if cross == 0.0
                        && lon >= ax.min(bx)
                        && lon <= ax.max(bx)
                        && lat >= ay.min(by)
                        && lat <= ay.max(by)
                    {
                        on_edge = true;
                    }
                    if (ay > lat) != (by > lat) && lon < ax + (lat - ay) * (bx - ax) / (by - ay) {
                        inside = !inside;
                    }
                }
            }
            inside || on_edge
        })
        .map(|t| t.id())
        .min()
}

/// Nested-loop hour-of-week profile counting over brute-force assignment.
pub fn naive_profiles(
    pings: &[Ping],
    tess: &Tessellation,
    clock: &LocalClock,
) -> BTreeMap<String, Vec<u64>> {
    let mut out: BTreeMap<String, Vec<u64>> = BTreeMap::new();
    for p in pings {
        if let Some(tile) = brute_assign(tess, p.lon, p.lat) {
            let m = to_local(p.timestamp_utc, clock);
            let hour = m.weekday as usize * 24 + m.hour as usize;
            out.entry(tile.to_string()).or_insert_with(|| vec![0; 168])[hour] += 1;
        }
    }
    out
}

fn inline_haversine_m(lon1: f64, lat1: f64, lon2: f64, lat2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = (lat2 - lat1).to_radians();
    let dl = (lon2 - lon1).to_radians();
    let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * 6_371_000.0 * a.sqrt().asin()
}

/// Brute-force unique daily visitors per POI.
pub fn naive_visits(
    pings: &[Ping],
    pois: &[PointOfInterest],
    clock: &LocalClock,
) -> BTreeMap<(String, i32), u64> {
    let mut sets: BTreeMap<(String, i32), BTreeSet<&str>> = BTreeMap::new();
    for p in pings {
        for poi in pois {
            if inline_haversine_m(p.lon, p.lat, poi.lon, poi.lat) <= poi.radius_m {
                sets.entry((
                    poi.poi_id.clone(),
                    to_local(p.timestamp_utc, clock).date.ordinal(),
                ))
                .or_default()
                .insert(&p.user_id);
            }
        }
    }
    sets.into_iter().map(|(k, s)| (k, s.len() as u64)).collect()
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    let mut table: HashMap<(usize, usize), u64> = HashMap::new();
    let mut row: HashMap<usize, u64> = HashMap::new();
    let mut col: HashMap<usize, u64> = HashMap::new();
    for i in 0..n {
        *table.entry((a[i], b[i])).or_insert(0) += 1;
        *row.entry(a[i]).or_insert(0) += 1;
        *col.entry(b[i]).or_insert(0) += 1;
    }
    let choose2 = |x: u64| (x * x.saturating_sub(1) / 2) as f64;
    let sum_table: f64 = table.values().map(|&v| choose2(v)).sum();
    let sum_row: f64 = row.values().map(|&v| choose2(v)).sum();
    let sum_col: f64 = col.values().map(|&v| choose2(v)).sum();
    let total = choose2(n as u64);
    let expected = sum_row * sum_col / total;
    let max_index = (sum_row + sum_col) / 2.0;
    if (max_index - expected).abs() < 1e-12 {
        return 1.0;
    }
    (sum_table - expected) / (max_index - expected)
}
