//! POI visit counting and event-relative visit-rate changes.
//!
//! A visit is radius membership: a user visits a POI on a local date when at
//! least one of their pings that date falls within the POI radius. The data
//! is sparse pings, not stays, so dwell-time rules are out of scope. A
//! grid-bucket index over the POIs keeps the join well under pings x POIs.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::sync::Arc;

use crate::clock::{to_local, LocalClock, LocalDate};
use crate::displacement::EventConfig;
use crate::engine::record::{
    key_i64, key_str, put_i64, put_str, ByteReader, FieldDef, FieldKind, Record, KEY_SEP,
};
use crate::engine::{Dataset, Engine, Fold};
use crate::error::{Error, Result};
use crate::ingest::csv_escape;
use crate::ping::Ping;
use crate::spatial::{haversine_m, METERS_PER_DEGREE};

#[derive(Debug, Clone, PartialEq)]
pub struct PointOfInterest {
    pub poi_id: String,
    pub lon: f64,
    pub lat: f64,
    pub radius_m: f64,
}

impl PointOfInterest {
    pub fn new(poi_id: String, lon: f64, lat: f64, radius_m: f64) -> Result<Self> {
        if !(radius_m > 0.0) {
            return Err(Error::Config(format!(
                "poi '{poi_id}' radius {radius_m} must be > 0"
            )));
        }
        Ok(PointOfInterest {
            poi_id,
            lon,
            lat,
            radius_m,
        })
    }
}

/// Parse `poi_id,lon,lat[,radius_m]` CSV. Rows without a radius use the
/// default. Duplicate ids are fatal.
pub fn parse_pois_csv(text: &str, default_radius_m: f64) -> Result<Vec<PointOfInterest>> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        if i == 0 && line.starts_with("poi_id") {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 3 {
            return Err(Error::Config(format!("poi line {}: need poi_id,lon,lat", i + 1)));
        }
        let poi_id = fields[0].trim().to_string();
        if poi_id.is_empty() {
            return Err(Error::Config(format!("poi line {}: empty poi_id", i + 1)));
        }
        if !seen.insert(poi_id.clone()) {
            return Err(Error::Config(format!("duplicate poi_id '{poi_id}'")));
        }
        let lon: f64 = fields[1]
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("poi '{poi_id}': bad lon '{}'", fields[1])))?;
        let lat: f64 = fields[2]
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("poi '{poi_id}': bad lat '{}'", fields[2])))?;
        let radius = match fields.get(3).map(|s| s.trim()) {
            Some("") | None => default_radius_m,
            Some(raw) => raw
                .parse()
                .map_err(|_| Error::Config(format!("poi '{poi_id}': bad radius '{raw}'")))?,
        };
        out.push(PointOfInterest::new(poi_id, lon, lat, radius)?);
    }
    Ok(out)
}

/// Uniform-bin index over POI circles.
#[derive(Debug)]
pub struct PoiIndex {
    pois: Vec<PointOfInterest>,
    min_lon: f64,
    min_lat: f64,
    max_lon: f64,
    max_lat: f64,
    cols: usize,
    rows: usize,
    bins: Vec<Vec<u32>>,
}

impl PoiIndex {
    pub fn build(pois: Vec<PointOfInterest>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for p in &pois {
            if !seen.insert(p.poi_id.as_str()) {
                return Err(Error::Config(format!("duplicate poi_id '{}'", p.poi_id)));
            }
        }
        if pois.is_empty() {
            return Err(Error::Config("poi list is empty".into()));
        }
        let pad = |p: &PointOfInterest| {
            let dlat = p.radius_m / METERS_PER_DEGREE;
            let dlon = p.radius_m / (METERS_PER_DEGREE * p.lat.to_radians().cos().max(1e-9));
            (p.lon - dlon, p.lat - dlat, p.lon + dlon, p.lat + dlat)
        };
        let mut min_lon = f64::INFINITY;
        let mut min_lat = f64::INFINITY;
        let mut max_lon = f64::NEG_INFINITY;
        let mut max_lat = f64::NEG_INFINITY;
        for p in &pois {
            let (a, b, c, d) = pad(p);
            min_lon = min_lon.min(a);
            min_lat = min_lat.min(b);
            max_lon = max_lon.max(c);
            max_lat = max_lat.max(d);
        }
        let side = ((4 * pois.len()) as f64).sqrt().ceil().max(1.0) as usize;
        let mut index = PoiIndex {
            pois,
            min_lon,
            min_lat,
            max_lon,
            max_lat,
            cols: side,
            rows: side,
            bins: vec![Vec::new(); side * side],
        };
        for (i, p) in index.pois.iter().enumerate() {
            let (a, b, c, d) = pad(p);
            let (c0, r0) = index.bin_of(a, b);
            let (c1, r1) = index.bin_of(c, d);
            for r in r0..=r1 {
                for col in c0..=c1 {
                    index.bins[r * side + col].push(i as u32);
                }
            }
        }
        Ok(index)
    }

    fn bin_of(&self, lon: f64, lat: f64) -> (usize, usize) {
        let fx = (lon - self.min_lon) / (self.max_lon - self.min_lon).max(f64::MIN_POSITIVE);
        let fy = (lat - self.min_lat) / (self.max_lat - self.min_lat).max(f64::MIN_POSITIVE);
        let c = ((fx * self.cols as f64) as isize).clamp(0, self.cols as isize - 1) as usize;
        let r = ((fy * self.rows as f64) as isize).clamp(0, self.rows as isize - 1) as usize;
        (c, r)
    }

    pub fn pois(&self) -> &[PointOfInterest] {
        &self.pois
    }

    /// Every POI whose radius covers the point. A ping may hit several
    /// overlapping POIs.
    pub fn covering(&self, lon: f64, lat: f64) -> Vec<&PointOfInterest> {
        if lon < self.min_lon || lon > self.max_lon || lat < self.min_lat || lat > self.max_lat {
            return Vec::new();
        }
        let (c, r) = self.bin_of(lon, lat);
        self.bins[r * self.cols + c]
            .iter()
            .map(|&i| &self.pois[i as usize])
            .filter(|p| haversine_m(lon, lat, p.lon, p.lat) <= p.radius_m)
            .collect()
    }
}

#[derive(Debug, Clone)]
struct PoiDateUser {
    poi_id: String,
    date_ord: i32,
    user_id: String,
}

impl Record for PoiDateUser {
    fn schema() -> &'static [FieldDef] {
        &[
            ("poi_id", FieldKind::Str),
            ("date", FieldKind::I64),
            ("user_id", FieldKind::Str),
            ("poi_date_user", FieldKind::Str),
        ]
    }

    fn key_bytes(&self, field: &str, out: &mut Vec<u8>) -> bool {
        match field {
            "poi_id" => key_str(&self.poi_id, out),
            "date" => key_i64(self.date_ord as i64, out),
            "user_id" => key_str(&self.user_id, out),
            "poi_date_user" => {
                key_str(&self.poi_id, out);
                out.push(KEY_SEP);
                key_i64(self.date_ord as i64, out);
                out.push(KEY_SEP);
                key_str(&self.user_id, out);
            }
            _ => return false,
        }
        true
    }

    fn encode(&self, out: &mut Vec<u8>) {
        put_str(&self.poi_id, out);
        put_i64(self.date_ord as i64, out);
        put_str(&self.user_id, out);
    }

    fn decode(input: &mut ByteReader<'_>) -> Result<Self> {
        Ok(PoiDateUser {
            poi_id: input.str()?,
            date_ord: input.i64()? as i32,
            user_id: input.str()?,
        })
    }
}

struct FirstPoiDateFold;

impl Fold<PoiDateUser> for FirstPoiDateFold {
    type Acc = Option<(String, i32)>;

    fn empty(&self) -> Self::Acc {
        None
    }

    fn add(&self, acc: &mut Self::Acc, row: PoiDateUser) {
        if acc.is_none() {
            *acc = Some((row.poi_id, row.date_ord));
        }
    }

    fn merge(&self, into: &mut Self::Acc, other: Self::Acc) {
        if into.is_none() {
            *into = other;
        }
    }
}

/// One row per (poi, local date) with at least one visitor.
#[derive(Debug, Clone, PartialEq)]
pub struct VisitCount {
    pub poi_id: String,
    pub date: LocalDate,
    pub unique_visitors: u64,
}

/// Distinct daily visitors per POI. A user counts once per (poi, date)
/// regardless of ping volume.
pub fn daily_visits(
    engine: &Engine,
    pings: &Dataset<Ping>,
    index: Arc<PoiIndex>,
    clock: &LocalClock,
) -> Result<Vec<VisitCount>> {
    let clock = *clock;
    let rows = pings.clone().flat_map(move |p: Ping| {
        let date_ord = to_local(p.timestamp_utc, &clock).date.ordinal();
        index
            .covering(p.lon, p.lat)
            .into_iter()
            .map(|poi| PoiDateUser {
                poi_id: poi.poi_id.clone(),
                date_ord,
                user_id: p.user_id.clone(),
            })
            .collect()
    });
    let distinct = engine.reduce_by_key(&rows, "poi_date_user", &FirstPoiDateFold)?;
    let mut counts: BTreeMap<(String, i32), u64> = BTreeMap::new();
    for (_, acc) in distinct {
        let (poi, date_ord) = acc.expect("non-empty group");
        *counts.entry((poi, date_ord)).or_insert(0) += 1;
    }
    Ok(counts
        .into_iter()
        .map(|((poi_id, date_ord), unique_visitors)| VisitCount {
            poi_id,
            date: LocalDate::from_ordinal(date_ord),
            unique_visitors,
        })
        .collect())
}

/// One published visit-rate comparison row.
#[derive(Debug, Clone, PartialEq)]
pub struct VisitChangeRow {
    pub poi_id: String,
    pub date: LocalDate,
    pub visitors: u64,
    pub baseline_mean: f64,
    /// Absent when the baseline mean is zero.
    pub pct_change: Option<f64>,
    /// Absent when the baseline has zero variance.
    pub z_score: Option<f64>,
}

/// Visit counts per observation date versus the zero-filled baseline
/// distribution of each POI. Rows with fewer than `k_anonymity` visitors
/// are suppressed.
pub fn visit_rate_change(
    visits: &[VisitCount],
    poi_ids: &[String],
    event: &EventConfig,
    clock: &LocalClock,
    k_anonymity: u64,
) -> Result<Vec<VisitChangeRow>> {
    event.validate()?;
    let baseline_dates = EventConfig::window_dates(&event.baseline_window, clock);
    if baseline_dates.len() < 7 {
        return Err(Error::Config(format!(
            "baseline window covers {} local dates, need >= 7",
            baseline_dates.len()
        )));
    }
    let event_date = event.event_date(clock);
    let observation_dates: Vec<LocalDate> =
        EventConfig::window_dates(&event.observation_window, clock)
            .into_iter()
            .filter(|d| *d >= event_date)
            .collect();
    let by_key: BTreeMap<(&str, i32), u64> = visits
        .iter()
        .map(|v| ((v.poi_id.as_str(), v.date.ordinal()), v.unique_visitors))
        .collect();
    let n = baseline_dates.len() as f64;
    let mut out = Vec::new();
    let mut ordered: Vec<&String> = poi_ids.iter().collect();
    ordered.sort();
    for poi in ordered {
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for d in &baseline_dates {
            // Dates with zero visitors count as zero.
            let c = by_key
                .get(&(poi.as_str(), d.ordinal()))
                .copied()
                .unwrap_or(0) as f64;
            sum += c;
            sum_sq += c * c;
        }
        let mean = sum / n;
        let std = (sum_sq / n - mean * mean).max(0.0).sqrt();
        for d in &observation_dates {
            let visitors = by_key
                .get(&(poi.as_str(), d.ordinal()))
                .copied()
                .unwrap_or(0);
            if visitors < k_anonymity {
                continue;
            }
            out.push(VisitChangeRow {
                poi_id: poi.clone(),
                date: *d,
                visitors,
                baseline_mean: mean,
                pct_change: (mean > 0.0).then(|| (visitors as f64 - mean) / mean),
                z_score: (std > 0.0).then(|| (visitors as f64 - mean) / std),
            });
        }
    }
    Ok(out)
}

/// Columns: `poi_id,date,unique_visitors`.
pub fn write_visits_csv(visits: &[VisitCount], out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(out, "poi_id,date,unique_visitors")?;
    for v in visits {
        writeln!(out, "{},{},{}", csv_escape(&v.poi_id), v.date, v.unique_visitors)?;
    }
    Ok(())
}

/// Columns: `poi_id,date,visitors,baseline_mean,pct_change,z_score`.
pub fn write_visit_changes_csv(rows: &[VisitChangeRow], out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(out, "poi_id,date,visitors,baseline_mean,pct_change,z_score")?;
    for r in rows {
        let fmt_opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{:.6},{},{}",
            csv_escape(&r.poi_id),
            r.date,
            r.visitors,
            r.baseline_mean,
            fmt_opt(r.pct_change),
            fmt_opt(r.z_score)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::{from_local, TimeWindow};
    use crate::engine::EngineConfig;

    fn engine(workers: usize) -> Engine {
        Engine::new(EngineConfig {
            worker_count: workers,
            work_dir: std::env::temp_dir(),
            ..EngineConfig::default()
        })
        .unwrap()
    }

    fn clock() -> LocalClock {
        LocalClock::utc()
    }

    fn ping(user: &str, ts: i64, lon: f64, lat: f64) -> Ping {
        Ping {
            user_id: user.into(),
            timestamp_utc: ts,
            lon,
            lat,
            accuracy_m: None,
        }
    }

    #[test]
    fn parse_and_duplicate_detection() {
        let pois = parse_pois_csv("poi_id,lon,lat,radius_m\nA,1.0,2.0,100\nB,3.0,4.0,\n", 250.0)
            .unwrap();
        assert_eq!(pois.len(), 2);
        assert_eq!(pois[1].radius_m, 250.0, "default radius applied");
        let err = parse_pois_csv("A,1,2,100\nA,3,4,100\n", 250.0).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }

    #[test]
    fn visit_within_radius_counts_once_per_day() {
        // 100 m radius POI; a ping about 50 m away counts, repeatedly.
        let poi = PointOfInterest::new("shop".into(), 0.0, 0.0, 100.0).unwrap();
        let index = Arc::new(PoiIndex::build(vec![poi]).unwrap());
        let offset_50m = 50.0 / METERS_PER_DEGREE;
        let mut pings = Vec::new();
        for k in 0..5 {
            pings.push(ping("u1", 1000 + k * 60, offset_50m, 0.0));
        }
        let visits = daily_visits(&engine(2), &Dataset::from_vec(pings, 2), index, &clock()).unwrap();
        assert_eq!(visits.len(), 1);
        assert_eq!(visits[0].unique_visitors, 1, "five pings, one visitor");
    }

    #[test]
    fn far_ping_does_not_count() {
        let poi = PointOfInterest::new("shop".into(), 0.0, 0.0, 100.0).unwrap();
        let index = Arc::new(PoiIndex::build(vec![poi]).unwrap());
        let visits = daily_visits(
            &engine(1),
            &Dataset::from_vec(vec![ping("u1", 1000, 0.01, 0.0)], 1),
            index,
            &clock(),
        )
        .unwrap();
        assert!(visits.is_empty());
    }

    #[test]
    fn matches_brute_force_double_loop() {
        let mut pois = Vec::new();
        let mut state = 23u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for i in 0..20 {
            pois.push(
                PointOfInterest::new(
                    format!("poi{i:02}"),
                    next() * 0.05,
                    next() * 0.05,
                    50.0 + next() * 300.0,
                )
                .unwrap(),
            );
        }
        let mut pings = Vec::new();
        for i in 0..10_000 {
            pings.push(ping(
                &format!("u{}", i % 87),
                (next() * 86_400.0 * 5.0) as i64,
                next() * 0.06 - 0.005,
                next() * 0.06 - 0.005,
            ));
        }
        // Brute force: nested loops, set semantics.
        let c = clock();
        let mut expect: BTreeMap<(String, i32), BTreeSet<String>> = BTreeMap::new();
        for p in &pings {
            for poi in &pois {
                if haversine_m(p.lon, p.lat, poi.lon, poi.lat) <= poi.radius_m {
                    expect
                        .entry((poi.poi_id.clone(), to_local(p.timestamp_utc, &c).date.ordinal()))
                        .or_default()
                        .insert(p.user_id.clone());
                }
            }
        }
        let index = Arc::new(PoiIndex::build(pois).unwrap());
        let visits =
            daily_visits(&engine(4), &Dataset::from_vec(pings, 9), index, &c).unwrap();
        assert_eq!(visits.len(), expect.len());
        for v in &visits {
            let brute = &expect[&(v.poi_id.clone(), v.date.ordinal())];
            assert_eq!(v.unique_visitors, brute.len() as u64, "poi {}", v.poi_id);
        }
    }

    fn change_fixture() -> (EventConfig, LocalDate) {
        let c = clock();
        let event_date = LocalDate::from_ymd(2023, 6, 15);
        let t = from_local(event_date, 0, 0, 0, &c);
        (
            EventConfig {
                event_time_utc: t,
                epicenter: None,
                baseline_window: TimeWindow::new(t - 10 * 86_400, t).unwrap(),
                observation_window: TimeWindow::new(t, t + 3 * 86_400).unwrap(),
            },
            event_date,
        )
    }

    #[test]
    fn pct_change_arithmetic() {
        let (event, event_date) = change_fixture();
        let c = clock();
        let mut visits = Vec::new();
        // Constant baseline of 10 for all ten baseline days.
        for d in EventConfig::window_dates(&event.baseline_window, &c) {
            visits.push(VisitCount {
                poi_id: "shop".into(),
                date: d,
                unique_visitors: 10,
            });
        }
        visits.push(VisitCount {
            poi_id: "shop".into(),
            date: event_date,
            unique_visitors: 5,
        });
        let rows =
            visit_rate_change(&visits, &["shop".to_string()], &event, &c, 0).unwrap();
        let day0 = rows.iter().find(|r| r.date == event_date).unwrap();
        assert_eq!(day0.baseline_mean, 10.0);
        assert_eq!(day0.pct_change, Some(-0.5));
        assert_eq!(day0.z_score, None, "constant baseline has no z");
    }

    #[test]
    fn never_visited_baseline_yields_absent_pct() {
        let (event, event_date) = change_fixture();
        let c = clock();
        let visits = vec![VisitCount {
            poi_id: "new".into(),
            date: event_date,
            unique_visitors: 7,
        }];
        let rows = visit_rate_change(&visits, &["new".to_string()], &event, &c, 0).unwrap();
        let day0 = rows.iter().find(|r| r.date == event_date).unwrap();
        assert_eq!(day0.visitors, 7);
        assert_eq!(day0.pct_change, None, "undefined against a zero baseline");
    }

    #[test]
    fn closure_day_is_minus_one() {
        let (event, event_date) = change_fixture();
        let c = clock();
        let mut visits = Vec::new();
        for d in EventConfig::window_dates(&event.baseline_window, &c) {
            visits.push(VisitCount {
                poi_id: "cafe".into(),
                date: d,
                unique_visitors: 20,
            });
        }
        // Open again on later observation days, closed on the event day.
        visits.push(VisitCount {
            poi_id: "cafe".into(),
            date: event_date.succ(),
            unique_visitors: 20,
        });
        let rows = visit_rate_change(&visits, &["cafe".to_string()], &event, &c, 0).unwrap();
        let closed = rows.iter().find(|r| r.date == event_date).unwrap();
        assert_eq!(closed.visitors, 0);
        assert_eq!(closed.pct_change, Some(-1.0));
        let open = rows.iter().find(|r| r.date == event_date.succ()).unwrap();
        assert_eq!(open.pct_change, Some(0.0));
    }

    #[test]
    fn zero_filled_baseline_mean() {
        let (event, event_date) = change_fixture();
        let c = clock();
        // Visited once in ten baseline days: mean must be 14/10, not 14.
        let visits = vec![
            VisitCount {
                poi_id: "rare".into(),
                date: event_date.pred().pred(),
                unique_visitors: 14,
            },
            VisitCount {
                poi_id: "rare".into(),
                date: event_date,
                unique_visitors: 3,
            },
        ];
        let rows = visit_rate_change(&visits, &["rare".to_string()], &event, &c, 0).unwrap();
        let day0 = rows.iter().find(|r| r.date == event_date).unwrap();
        assert!((day0.baseline_mean - 1.4).abs() < 1e-12);
    }

    #[test]
    fn suppression_hides_small_counts() {
        let (event, event_date) = change_fixture();
        let c = clock();
        let mut visits = Vec::new();
        for d in EventConfig::window_dates(&event.baseline_window, &c) {
            visits.push(VisitCount {
                poi_id: "spot".into(),
                date: d,
                unique_visitors: 12,
            });
        }
        visits.push(VisitCount {
            poi_id: "spot".into(),
            date: event_date,
            unique_visitors: 4,
        });
        let rows = visit_rate_change(&visits, &["spot".to_string()], &event, &c, 10).unwrap();
        assert!(
            rows.iter().all(|r| r.date != event_date),
            "4 visitors under k=10 suppressed"
        );
    }

    #[test]
    fn short_baseline_rejected() {
        let c = clock();
        let t = from_local(LocalDate::from_ymd(2023, 6, 15), 0, 0, 0, &c);
        let event = EventConfig {
            event_time_utc: t,
            epicenter: None,
            baseline_window: TimeWindow::new(t - 2 * 86_400, t).unwrap(),
            observation_window: TimeWindow::new(t, t + 86_400).unwrap(),
        };
        assert!(visit_rate_change(&[], &[], &event, &c, 0).is_err());
    }
}
