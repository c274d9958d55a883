//! Tile activity profiles and hierarchical land-use clustering.
//!
//! Profiles use 168 hour-of-week bins rather than 24 hour-of-day bins:
//! weekday/weekend contrast is what separates residential from commercial
//! behavior. Profiles are normalized before clustering so tiles compare by
//! shape, not volume.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

use crate::clock::{hour_of_week, LocalClock};
use crate::engine::record::{key_i64, key_str, put_i64, put_str, ByteReader, FieldDef, FieldKind, KEY_SEP};
use crate::engine::{Dataset, Engine, Fold, Record};
use crate::error::{Error, Result};
use crate::hierarchy::{cut_to_k, linkage_merges, Linkage, Merge, Metric};
use crate::ingest::csv_escape;
use crate::ping::Ping;
use crate::spatial::Tessellation;

pub const HOURS_PER_WEEK: usize = 168;

/// Hour-of-week activity histogram for one tile.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivityProfile {
    pub tile_id: String,
    /// 168 bins, Monday 00:00 first. Counts before normalization,
    /// fractions summing to one after.
    pub bins: Vec<f64>,
    pub total_events: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CountMode {
    /// Every ping is one event.
    Pings,
    /// One event per distinct user per (tile, hour-of-week).
    DistinctUsers,
}

#[derive(Debug, Clone)]
struct TileHour {
    tile_id: String,
    hour: u16,
}

impl Record for TileHour {
    fn schema() -> &'static [FieldDef] {
        &[("tile_id", FieldKind::Str), ("hour", FieldKind::I64)]
    }

    fn key_bytes(&self, field: &str, out: &mut Vec<u8>) -> bool {
        match field {
            "tile_id" => key_str(&self.tile_id, out),
            "hour" => key_i64(self.hour as i64, out),
            _ => return false,
        }
        true
    }

    fn encode(&self, out: &mut Vec<u8>) {
        put_str(&self.tile_id, out);
        put_i64(self.hour as i64, out);
    }

    fn decode(input: &mut ByteReader<'_>) -> Result<Self> {
        Ok(TileHour {
            tile_id: input.str()?,
            hour: input.i64()? as u16,
        })
    }
}

#[derive(Debug, Clone)]
struct TileHourUser {
    tile_id: String,
    hour: u16,
    user_id: String,
}

impl Record for TileHourUser {
    fn schema() -> &'static [FieldDef] {
        &[
            ("tile_id", FieldKind::Str),
            ("hour", FieldKind::I64),
            ("user_id", FieldKind::Str),
            ("tile_hour_user", FieldKind::Str),
        ]
    }

    fn key_bytes(&self, field: &str, out: &mut Vec<u8>) -> bool {
        match field {
            "tile_id" => key_str(&self.tile_id, out),
            "hour" => key_i64(self.hour as i64, out),
            "user_id" => key_str(&self.user_id, out),
            "tile_hour_user" => {
                key_str(&self.tile_id, out);
                out.push(KEY_SEP);
                key_i64(self.hour as i64, out);
                out.push(KEY_SEP);
                key_str(&self.user_id, out);
            }
            _ => return false,
        }
        true
    }

    fn encode(&self, out: &mut Vec<u8>) {
        put_str(&self.tile_id, out);
        put_i64(self.hour as i64, out);
        put_str(&self.user_id, out);
    }

    fn decode(input: &mut ByteReader<'_>) -> Result<Self> {
        Ok(TileHourUser {
            tile_id: input.str()?,
            hour: input.i64()? as u16,
            user_id: input.str()?,
        })
    }
}

struct ProfileFold;

impl Fold<TileHour> for ProfileFold {
    type Acc = (String, Vec<u64>);

    fn empty(&self) -> Self::Acc {
        (String::new(), vec![0u64; HOURS_PER_WEEK])
    }

    fn add(&self, acc: &mut Self::Acc, row: TileHour) {
        if acc.0.is_empty() {
            acc.0 = row.tile_id;
        }
        acc.1[row.hour as usize] += 1;
    }

    fn merge(&self, into: &mut Self::Acc, other: Self::Acc) {
        if into.0.is_empty() {
            into.0 = other.0;
        }
        for (a, b) in into.1.iter_mut().zip(other.1) {
            *a += b;
        }
    }
}

/// Keeps the first row per distinct composite key; the reduction then yields
/// exactly the distinct (tile, hour, user) triples.
struct DistinctFold;

impl Fold<TileHourUser> for DistinctFold {
    type Acc = Option<(String, u16)>;

    fn empty(&self) -> Self::Acc {
        None
    }

    fn add(&self, acc: &mut Self::Acc, row: TileHourUser) {
        if acc.is_none() {
            *acc = Some((row.tile_id, row.hour));
        }
    }

    fn merge(&self, into: &mut Self::Acc, other: Self::Acc) {
        if into.is_none() {
            *into = other;
        }
    }
}

/// Count events per tile and hour-of-week bin. Pings outside every tile
/// contribute nothing; tiles with zero events are omitted. Output sorted by
/// tile id.
pub fn tile_activity_profiles(
    engine: &Engine,
    ds: &Dataset<Ping>,
    tess: Arc<Tessellation>,
    clock: &LocalClock,
    mode: CountMode,
) -> Result<Vec<ActivityProfile>> {
    let clock = *clock;
    match mode {
        CountMode::Pings => {
            let tess = tess.clone();
            let rows = ds.clone().try_filter_map(move |p: Ping| {
                Ok(tess.assign(p.lon, p.lat).map(|tile| TileHour {
                    tile_id: tile.to_string(),
                    hour: hour_of_week(p.timestamp_utc, &clock),
                }))
            });
            let table = engine.reduce_by_key(&rows, "tile_id", &ProfileFold)?;
            Ok(table
                .into_iter()
                .map(|(_, (tile_id, bins))| {
                    let total: u64 = bins.iter().sum();
                    ActivityProfile {
                        tile_id,
                        bins: bins.into_iter().map(|b| b as f64).collect(),
                        total_events: total,
                    }
                })
                .collect())
        }
        CountMode::DistinctUsers => {
            let tess = tess.clone();
            let rows = ds.clone().try_filter_map(move |p: Ping| {
                Ok(tess.assign(p.lon, p.lat).map(|tile| TileHourUser {
                    tile_id: tile.to_string(),
                    hour: hour_of_week(p.timestamp_utc, &clock),
                    user_id: p.user_id,
                }))
            });
            let distinct = engine.reduce_by_key(&rows, "tile_hour_user", &DistinctFold)?;
            let mut per_tile: BTreeMap<String, Vec<u64>> = BTreeMap::new();
            for (_, acc) in distinct {
                let (tile_id, hour) = acc.expect("non-empty group");
                per_tile.entry(tile_id).or_insert_with(|| vec![0u64; HOURS_PER_WEEK])[hour as usize] += 1;
            }
            Ok(per_tile
                .into_iter()
                .map(|(tile_id, bins)| {
                    let total: u64 = bins.iter().sum();
                    ActivityProfile {
                        tile_id,
                        bins: bins.into_iter().map(|b| b as f64).collect(),
                        total_events: total,
                    }
                })
                .collect())
        }
    }
}

/// Scale each profile to sum to one. Zero-total profiles are excluded and
/// counted, not errors.
pub fn normalize_profiles(profiles: Vec<ActivityProfile>) -> (Vec<ActivityProfile>, u64) {
    let mut excluded = 0u64;
    let kept = profiles
        .into_iter()
        .filter_map(|mut p| {
            let sum: f64 = p.bins.iter().sum();
            if sum <= 0.0 {
                excluded += 1;
                return None;
            }
            for b in &mut p.bins {
                *b /= sum;
            }
            Some(p)
        })
        .collect();
    (kept, excluded)
}

/// Land-use classes per tile plus the dendrogram that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct LandUseClustering {
    /// tile_id to cluster index in [0, k), indexed by decreasing cluster size.
    pub labels: BTreeMap<String, usize>,
    /// (representative tile a, representative tile b, linkage distance),
    /// non-decreasing in distance.
    pub merge_tree: Vec<(String, String, f64)>,
    pub k: usize,
}

/// Agglomerative clustering of normalized profiles into k classes.
pub fn hierarchical_cluster(
    profiles: &[ActivityProfile],
    k: usize,
    linkage: Linkage,
    metric: Metric,
) -> Result<LandUseClustering> {
    if profiles.is_empty() || k == 0 || k > profiles.len() {
        return Err(Error::Parameter(format!(
            "k={k} outside 1..={}",
            profiles.len()
        )));
    }
    let mut ordered: Vec<&ActivityProfile> = profiles.iter().collect();
    ordered.sort_by(|a, b| a.tile_id.cmp(&b.tile_id));
    let vectors: Vec<Vec<f64>> = ordered.iter().map(|p| p.bins.clone()).collect();
    let merges: Vec<Merge> = linkage_merges(&vectors, linkage, metric)?;
    let labels_by_index = cut_to_k(&merges, vectors.len(), k)?;
    let labels = ordered
        .iter()
        .zip(&labels_by_index)
        .map(|(p, &l)| (p.tile_id.clone(), l))
        .collect();
    let merge_tree = merges
        .iter()
        .map(|m| {
            (
                ordered[m.left].tile_id.clone(),
                ordered[m.right].tile_id.clone(),
                m.distance,
            )
        })
        .collect();
    Ok(LandUseClustering {
        labels,
        merge_tree,
        k,
    })
}

/// Arithmetic mean profile per cluster, indexed by cluster label.
pub fn cluster_signatures(
    profiles: &[ActivityProfile],
    clustering: &LandUseClustering,
) -> Result<Vec<Vec<f64>>> {
    let mut sums: Vec<Vec<f64>> = vec![vec![0.0; HOURS_PER_WEEK]; clustering.k];
    let mut counts: Vec<u64> = vec![0; clustering.k];
    for p in profiles {
        let label = *clustering.labels.get(&p.tile_id).ok_or_else(|| {
            Error::Parameter(format!("tile '{}' missing from clustering", p.tile_id))
        })?;
        for (s, b) in sums[label].iter_mut().zip(&p.bins) {
            *s += b;
        }
        counts[label] += 1;
    }
    Ok(sums
        .into_iter()
        .zip(counts)
        .map(|(mut s, n)| {
            if n > 0 {
                for v in &mut s {
                    *v /= n as f64;
                }
            }
            s
        })
        .collect())
}

/// Columns: `tile_id,h0..h167,total_events`.
pub fn write_profiles_csv(profiles: &[ActivityProfile], out: &mut dyn Write) -> std::io::Result<()> {
    let mut header = String::from("tile_id");
    for h in 0..HOURS_PER_WEEK {
        header.push_str(&format!(",h{h}"));
    }
    header.push_str(",total_events");
    writeln!(out, "{header}")?;
    for p in profiles {
        let mut line = csv_escape(&p.tile_id);
        for b in &p.bins {
            line.push_str(&format!(",{}", format_bin(*b)));
        }
        line.push_str(&format!(",{}", p.total_events));
        writeln!(out, "{line}")?;
    }
    Ok(())
}

fn format_bin(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:.9}")
    }
}

/// Columns: `tile_id,cluster`.
pub fn write_labels_csv(clustering: &LandUseClustering, out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(out, "tile_id,cluster")?;
    for (tile, label) in &clustering.labels {
        writeln!(out, "{},{label}", csv_escape(tile))?;
    }
    Ok(())
}

/// Columns: `step,left,right,distance`.
pub fn write_merge_tree_csv(
    clustering: &LandUseClustering,
    out: &mut dyn Write,
) -> std::io::Result<()> {
    writeln!(out, "step,left,right,distance")?;
    for (step, (left, right, distance)) in clustering.merge_tree.iter().enumerate() {
        writeln!(
            out,
            "{step},{},{},{distance:.9}",
            csv_escape(left),
            csv_escape(right)
        )?;
    }
    Ok(())
}

/// Tessellation GeoJSON with a `cluster` property per labeled tile.
pub fn labeled_geojson(tess: &Tessellation, clustering: &LandUseClustering) -> String {
    let extra: std::collections::HashMap<String, Vec<(String, f64)>> = clustering
        .labels
        .iter()
        .map(|(tile, label)| (tile.clone(), vec![("cluster".to_string(), *label as f64)]))
        .collect();
    crate::spatial::tessellation_to_geojson(tess, &extra)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::{from_local, LocalDate};
    use crate::engine::EngineConfig;
    use crate::spatial::{make_grid, BBox};

    fn engine(workers: usize) -> Engine {
        Engine::new(EngineConfig {
            worker_count: workers,
            work_dir: std::env::temp_dir(),
            ..EngineConfig::default()
        })
        .unwrap()
    }

    fn monday_ping(user: &str, hour: u8, minute: u8, lon: f64, lat: f64) -> Ping {
        // 2023-03-06 is a Monday.
        let ts = from_local(
            LocalDate::from_ymd(2023, 3, 6),
            hour,
            minute,
            0,
            &LocalClock::utc(),
        );
        Ping {
            user_id: user.into(),
            timestamp_utc: ts,
            lon,
            lat,
            accuracy_m: None,
        }
    }

    #[test]
    fn single_ping_lands_in_bin_zero() {
        let tess = Arc::new(make_grid(BBox::new(0.0, 0.0, 0.01, 0.01).unwrap(), 2000.0).unwrap());
        let ds = Dataset::from_vec(vec![monday_ping("u1", 0, 30, 0.005, 0.005)], 1);
        let profiles = tile_activity_profiles(
            &engine(1),
            &ds,
            tess,
            &LocalClock::utc(),
            CountMode::Pings,
        )
        .unwrap();
        assert_eq!(profiles.len(), 1);
        assert_eq!(profiles[0].bins[0], 1.0);
        assert_eq!(profiles[0].bins[1..].iter().sum::<f64>(), 0.0);
        assert_eq!(profiles[0].total_events, 1);
    }

    #[test]
    fn ping_outside_tiles_contributes_nothing() {
        let tess = Arc::new(make_grid(BBox::new(0.0, 0.0, 0.01, 0.01).unwrap(), 2000.0).unwrap());
        let ds = Dataset::from_vec(vec![monday_ping("u1", 0, 30, 5.0, 5.0)], 1);
        let profiles = tile_activity_profiles(
            &engine(1),
            &ds,
            tess,
            &LocalClock::utc(),
            CountMode::Pings,
        )
        .unwrap();
        assert!(profiles.is_empty());
    }

    #[test]
    fn counting_matches_naive_nested_loops() {
        let tess = Arc::new(make_grid(BBox::new(0.0, 0.0, 0.02, 0.02).unwrap(), 700.0).unwrap());
        let clock = LocalClock::from_offset_minutes(60).unwrap();
        let mut pings = Vec::new();
        let mut state = 17u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for i in 0..10_000 {
            pings.push(Ping {
                user_id: format!("u{}", i % 23),
                timestamp_utc: (next() * 86_400.0 * 21.0) as i64,
                lon: next() * 0.03 - 0.005,
                lat: next() * 0.03 - 0.005,
                accuracy_m: None,
            });
        }
        // Naive: nested loop over pings and tiles.
        let mut naive: BTreeMap<String, (Vec<u64>, std::collections::BTreeSet<(u16, String)>)> =
            BTreeMap::new();
        for p in &pings {
            if let Some(tile) = tess.assign(p.lon, p.lat) {
                let h = hour_of_week(p.timestamp_utc, &clock);
                let e = naive
                    .entry(tile.to_string())
                    .or_insert_with(|| (vec![0u64; HOURS_PER_WEEK], Default::default()));
                e.0[h as usize] += 1;
                e.1.insert((h, p.user_id.clone()));
            }
        }

        let ds = Dataset::from_vec(pings.clone(), 9);
        let eng = engine(4);
        let pings_mode =
            tile_activity_profiles(&eng, &ds, tess.clone(), &clock, CountMode::Pings).unwrap();
        assert_eq!(pings_mode.len(), naive.len());
        let mut assigned_total = 0u64;
        for p in &pings_mode {
            let (bins, _) = &naive[&p.tile_id];
            let got: Vec<u64> = p.bins.iter().map(|b| *b as u64).collect();
            assert_eq!(&got, bins, "tile {}", p.tile_id);
            assigned_total += p.total_events;
        }
        let naive_total: u64 = naive.values().map(|(b, _)| b.iter().sum::<u64>()).sum();
        assert_eq!(assigned_total, naive_total, "profile mass equals assigned pings");

        let users_mode =
            tile_activity_profiles(&eng, &ds, tess.clone(), &clock, CountMode::DistinctUsers)
                .unwrap();
        for p in &users_mode {
            let (_, set) = &naive[&p.tile_id];
            let mut expect = vec![0u64; HOURS_PER_WEEK];
            for (h, _) in set {
                expect[*h as usize] += 1;
            }
            let got: Vec<u64> = p.bins.iter().map(|b| *b as u64).collect();
            assert_eq!(got, expect, "distinct users in tile {}", p.tile_id);
        }
    }

    #[test]
    fn normalize_examples() {
        let profile = |bins: Vec<f64>| {
            let mut full = vec![0.0; HOURS_PER_WEEK];
            full[..bins.len()].copy_from_slice(&bins);
            ActivityProfile {
                tile_id: "t".into(),
                bins: full,
                total_events: 4,
            }
        };
        let (out, excluded) = normalize_profiles(vec![profile(vec![2.0, 2.0])]);
        assert_eq!(excluded, 0);
        assert_eq!(out[0].bins[0], 0.5);
        assert_eq!(out[0].bins[1], 0.5);
        // Idempotent.
        let (twice, _) = normalize_profiles(out.clone());
        assert_eq!(twice[0].bins, out[0].bins);
        // Zero-total excluded.
        let (none, excluded) = normalize_profiles(vec![ActivityProfile {
            tile_id: "z".into(),
            bins: vec![0.0; HOURS_PER_WEEK],
            total_events: 0,
        }]);
        assert!(none.is_empty());
        assert_eq!(excluded, 1);
    }

    fn archetype_profiles(n_each: usize) -> (Vec<ActivityProfile>, Vec<usize>) {
        // Night-heavy vs nine-to-five archetypes with 1% deterministic noise.
        let mut profiles = Vec::new();
        let mut truth = Vec::new();
        let mut state = 77u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for i in 0..(2 * n_each) {
            let class = i % 2;
            let mut bins = vec![0.0; HOURS_PER_WEEK];
            for d in 0..7 {
                for h in 0..24usize {
                    let idx = d * 24 + h;
                    let base = if class == 0 {
                        // residential: evenings and nights
                        if (22..24).contains(&h) || h < 6 { 10.0 } else { 1.0 }
                    } else {
                        // commercial: weekday business hours
                        if d < 5 && (9..17).contains(&h) { 10.0 } else { 0.5 }
                    };
                    bins[idx] = base * (1.0 + 0.01 * (next() - 0.5));
                }
            }
            let total = bins.iter().sum::<f64>() as u64;
            profiles.push(ActivityProfile {
                tile_id: format!("tile{i:02}"),
                bins,
                total_events: total,
            });
            truth.push(class);
        }
        (profiles, truth)
    }

    #[test]
    fn archetypes_separate_exactly() {
        let (profiles, truth) = archetype_profiles(12);
        let (normalized, _) = normalize_profiles(profiles);
        let clustering =
            hierarchical_cluster(&normalized, 2, Linkage::Ward, Metric::Euclidean).unwrap();
        // Every tile of one archetype shares a label, and the two differ.
        let label_of = |i: usize| clustering.labels[&format!("tile{i:02}")];
        for i in 0..24 {
            assert_eq!(
                label_of(i) == label_of(0),
                truth[i] == truth[0],
                "tile {i} misclustered"
            );
        }
        for w in clustering.merge_tree.windows(2) {
            assert!(w[0].2 <= w[1].2, "merge distances non-decreasing");
        }
    }

    #[test]
    fn k_extremes() {
        let (profiles, _) = archetype_profiles(3);
        let (normalized, _) = normalize_profiles(profiles);
        let one = hierarchical_cluster(&normalized, 1, Linkage::Ward, Metric::Euclidean).unwrap();
        assert!(one.labels.values().all(|&l| l == 0));
        let n = normalized.len();
        let each = hierarchical_cluster(&normalized, n, Linkage::Ward, Metric::Euclidean).unwrap();
        let distinct: std::collections::HashSet<usize> = each.labels.values().copied().collect();
        assert_eq!(distinct.len(), n);
        assert!(hierarchical_cluster(&normalized, n + 1, Linkage::Ward, Metric::Euclidean).is_err());
    }

    #[test]
    fn signatures_are_member_means() {
        let (profiles, _) = archetype_profiles(4);
        let (normalized, _) = normalize_profiles(profiles);
        let clustering =
            hierarchical_cluster(&normalized, 2, Linkage::Ward, Metric::Euclidean).unwrap();
        let signatures = cluster_signatures(&normalized, &clustering).unwrap();
        for sig in &signatures {
            let sum: f64 = sig.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9, "signature sums to 1, got {sum}");
        }
        // Direct recomputation for cluster 0.
        let members: Vec<&ActivityProfile> = normalized
            .iter()
            .filter(|p| clustering.labels[&p.tile_id] == 0)
            .collect();
        for h in 0..HOURS_PER_WEEK {
            let mean: f64 =
                members.iter().map(|p| p.bins[h]).sum::<f64>() / members.len() as f64;
            assert!((signatures[0][h] - mean).abs() < 1e-12);
        }
        // Singleton cluster keeps its own profile.
        let single = hierarchical_cluster(&normalized, normalized.len(), Linkage::Ward, Metric::Euclidean)
            .unwrap();
        let sigs = cluster_signatures(&normalized, &single).unwrap();
        for p in &normalized {
            let label = single.labels[&p.tile_id];
            assert_eq!(sigs[label], p.bins);
        }
    }

    #[test]
    fn row_order_does_not_change_clustering() {
        let (profiles, _) = archetype_profiles(6);
        let (normalized, _) = normalize_profiles(profiles);
        let forward =
            hierarchical_cluster(&normalized, 2, Linkage::Ward, Metric::Euclidean).unwrap();
        let mut reversed = normalized.clone();
        reversed.reverse();
        let backward =
            hierarchical_cluster(&reversed, 2, Linkage::Ward, Metric::Euclidean).unwrap();
        assert_eq!(forward, backward);
    }
}
