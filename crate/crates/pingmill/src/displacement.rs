//! Post-event displacement series, grouped displacement rates, and
//! population-density anomalies.
//!
//! A user's nightly position is the component-wise median of their
//! night-hour pings (robust to single outlier fixes). Night attribution
//! keeps one night per calendar date: late-evening hours belong to that
//! date, early-morning hours to the previous one. Displacement is distance
//! from the pre-event home beyond a threshold. All published aggregates are
//! k-anonymity suppressed.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;
use std::sync::Arc;

use crate::clock::{to_local, LocalClock, LocalDate, TimeWindow};
use crate::engine::record::{
    key_i64, key_str, put_f64, put_i64, put_str, ByteReader, FieldDef, FieldKind, Record, KEY_SEP,
};
use crate::engine::{Dataset, Engine, Fold};
use crate::error::{Error, Result};
use crate::homework::HomeWorkResult;
use crate::ingest::csv_escape;
use crate::ping::Ping;
use crate::report::CoverageReport;
use crate::spatial::{haversine_m, Tessellation};

/// Disaster event framing: when it happened and which windows to compare.
#[derive(Debug, Clone)]
pub struct EventConfig {
    pub event_time_utc: i64,
    pub epicenter: Option<(f64, f64)>,
    /// Pre-event window the homes and baselines are computed on.
    pub baseline_window: TimeWindow,
    /// Post-event window under analysis.
    pub observation_window: TimeWindow,
}

impl EventConfig {
    pub fn validate(&self) -> Result<()> {
        if self.baseline_window.end() > self.event_time_utc {
            return Err(Error::Config(
                "baseline window must end at or before the event".into(),
            ));
        }
        if self.observation_window.start() < self.event_time_utc {
            return Err(Error::Config(
                "observation window must start at or after the event".into(),
            ));
        }
        Ok(())
    }

    pub fn event_date(&self, clock: &LocalClock) -> LocalDate {
        to_local(self.event_time_utc, clock).date
    }

    /// Local dates fully or partially covered by a window.
    pub fn window_dates(window: &TimeWindow, clock: &LocalClock) -> Vec<LocalDate> {
        let first = to_local(window.start(), clock).date;
        let last = to_local(window.end() - 1, clock).date;
        (first.ordinal()..=last.ordinal())
            .map(LocalDate::from_ordinal)
            .collect()
    }
}

/// How displacement rates are grouped.
#[derive(Debug, Clone)]
pub enum GroupingSpec {
    /// Single group "all".
    None,
    /// Distance bands from the epicenter, in kilometers.
    EpicenterRings { ring_edges_km: Vec<f64> },
    /// Equal-frequency bins of a home-tile attribute.
    TileAttributeQuantiles {
        attribute: String,
        quantile_count: usize,
    },
}

impl GroupingSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            GroupingSpec::None => Ok(()),
            GroupingSpec::EpicenterRings { ring_edges_km } => {
                if ring_edges_km.is_empty() {
                    return Err(Error::Config("ring_edges_km must be non-empty".into()));
                }
                let ascending = ring_edges_km.windows(2).all(|w| w[0] < w[1]);
                if !ascending || ring_edges_km[0] <= 0.0 {
                    return Err(Error::Config(
                        "ring edges must be strictly ascending and positive".into(),
                    ));
                }
                Ok(())
            }
            GroupingSpec::TileAttributeQuantiles { quantile_count, .. } => {
                if *quantile_count == 0 {
                    return Err(Error::Config("quantile_count must be >= 1".into()));
                }
                Ok(())
            }
        }
    }
}

/// Local hours that make up a night, split around noon for attribution.
#[derive(Debug, Clone, Copy)]
pub struct NightWindow {
    mask: u32,
}

impl NightWindow {
    pub fn new(hours: impl IntoIterator<Item = u8>) -> Result<Self> {
        let mut mask = 0u32;
        for h in hours {
            if h > 23 {
                return Err(Error::Config(format!("night hour {h} outside 0-23")));
            }
            mask |= 1 << h;
        }
        if mask == 0 {
            return Err(Error::Config("night hours must be non-empty".into()));
        }
        Ok(NightWindow { mask })
    }

    /// 22:00 through 05:59.
    pub fn conventional() -> Self {
        NightWindow::new([22, 23, 0, 1, 2, 3, 4, 5]).expect("static hours valid")
    }

    pub fn contains(&self, hour: u8) -> bool {
        hour < 24 && self.mask & (1 << hour) != 0
    }
}

/// The night a timestamp belongs to: evening hours (>= 12) attribute to
/// their own date, early-morning hours to the previous date. None outside
/// the night window.
pub fn night_date_of(
    timestamp_utc: i64,
    clock: &LocalClock,
    night: &NightWindow,
) -> Option<LocalDate> {
    let m = to_local(timestamp_utc, clock);
    if !night.contains(m.hour) {
        return None;
    }
    Some(if m.hour >= 12 { m.date } else { m.date.pred() })
}

/// Component-wise median of night positions; even counts average the two
/// middle values.
pub fn nightly_position(night_points: &[(f64, f64)]) -> Option<(f64, f64)> {
    if night_points.is_empty() {
        return None;
    }
    let median = |mut values: Vec<f64>| -> f64 {
        values.sort_by(|a, b| a.partial_cmp(b).expect("finite coordinates"));
        let n = values.len();
        if n % 2 == 1 {
            values[n / 2]
        } else {
            (values[n / 2 - 1] + values[n / 2]) / 2.0
        }
    };
    let lons = night_points.iter().map(|p| p.0).collect();
    let lats = night_points.iter().map(|p| p.1).collect();
    Some((median(lons), median(lats)))
}

/// One user-night observation relative to their pre-event home.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementRecord {
    pub user_id: String,
    pub date: LocalDate,
    pub night_position: (f64, f64),
    pub distance_from_home_m: f64,
    pub displaced: bool,
}

#[derive(Debug, Clone)]
struct NightRow {
    user_id: String,
    date_ord: i32,
    lon: f64,
    lat: f64,
}

impl Record for NightRow {
    fn schema() -> &'static [FieldDef] {
        &[
            ("user_id", FieldKind::Str),
            ("date", FieldKind::I64),
            ("user_night", FieldKind::Str),
        ]
    }

    fn key_bytes(&self, field: &str, out: &mut Vec<u8>) -> bool {
        match field {
            "user_id" => key_str(&self.user_id, out),
            "date" => key_i64(self.date_ord as i64, out),
            "user_night" => {
                key_str(&self.user_id, out);
                out.push(KEY_SEP);
                key_i64(self.date_ord as i64, out);
            }
            _ => return false,
        }
        true
    }

    fn encode(&self, out: &mut Vec<u8>) {
        put_str(&self.user_id, out);
        put_i64(self.date_ord as i64, out);
        put_f64(self.lon, out);
        put_f64(self.lat, out);
    }

    fn decode(input: &mut ByteReader<'_>) -> Result<Self> {
        Ok(NightRow {
            user_id: input.str()?,
            date_ord: input.i64()? as i32,
            lon: input.f64()?,
            lat: input.f64()?,
        })
    }
}

struct NightFold;

impl Fold<NightRow> for NightFold {
    type Acc = Option<(String, i32, Vec<(f64, f64)>)>;

    fn empty(&self) -> Self::Acc {
        None
    }

    fn add(&self, acc: &mut Self::Acc, row: NightRow) {
        match acc {
            Some((_, _, points)) => points.push((row.lon, row.lat)),
            None => *acc = Some((row.user_id, row.date_ord, vec![(row.lon, row.lat)])),
        }
    }

    fn merge(&self, into: &mut Self::Acc, other: Self::Acc) {
        match (into.as_mut(), other) {
            (Some((_, _, a)), Some((_, _, b))) => a.extend(b),
            (None, Some(o)) => *into = Some(o),
            _ => {}
        }
    }
}

/// Per-user per-night displacement relative to pre-event homes.
///
/// Emits one record per (user with home, observation-window night with at
/// least one night ping); nights that would attribute to a pre-event date
/// are dropped. Users lacking a home are excluded and counted.
pub fn displacement_series(
    engine: &Engine,
    pings: &Dataset<Ping>,
    homes: &[HomeWorkResult],
    event: &EventConfig,
    threshold_m: f64,
    clock: &LocalClock,
    night: &NightWindow,
) -> Result<(Vec<DisplacementRecord>, CoverageReport)> {
    event.validate()?;
    if !(threshold_m > 0.0) {
        return Err(Error::Config(format!(
            "displacement threshold {threshold_m} must be > 0"
        )));
    }
    let mut coverage = CoverageReport::default();
    let mut home_of: HashMap<String, (f64, f64)> = HashMap::with_capacity(homes.len());
    for h in homes {
        match &h.home {
            Some(anchor) => {
                home_of.insert(h.user_id.clone(), (anchor.lon, anchor.lat));
            }
            None => coverage.bump("no_home"),
        }
    }
    let home_of = Arc::new(home_of);
    let event_date = event.event_date(clock);
    let window = event.observation_window;
    let clock = *clock;
    let night = *night;
    let homes_for_filter = home_of.clone();
    let rows = pings.clone().try_filter_map(move |p: Ping| {
        if !window.contains(p.timestamp_utc) || !homes_for_filter.contains_key(&p.user_id) {
            return Ok(None);
        }
        let Some(date) = night_date_of(p.timestamp_utc, &clock, &night) else {
            return Ok(None);
        };
        if date < event_date {
            // Early-morning pings at the window edge attribute to the
            // pre-event night; those are never emitted.
            return Ok(None);
        }
        Ok(Some(NightRow {
            user_id: p.user_id,
            date_ord: date.ordinal(),
            lon: p.lon,
            lat: p.lat,
        }))
    });
    let grouped = engine.reduce_by_key(&rows, "user_night", &NightFold)?;
    let mut records = Vec::with_capacity(grouped.len());
    for (_, acc) in grouped {
        let (user_id, date_ord, points) = acc.expect("non-empty group");
        let position = nightly_position(&points).expect("group has points");
        let home = home_of[&user_id];
        let distance = haversine_m(position.0, position.1, home.0, home.1);
        records.push(DisplacementRecord {
            user_id,
            date: LocalDate::from_ordinal(date_ord),
            night_position: position,
            distance_from_home_m: distance,
            displaced: distance > threshold_m,
        });
    }
    Ok((records, coverage))
}

/// Group id formatting keeps lexicographic order equal to semantic order.
fn ring_group_id(index: usize) -> String {
    format!("ring_{index:02}")
}

fn quantile_group_id(index: usize) -> String {
    format!("q_{index:02}")
}

/// Assign each user with a home to a group per the grouping spec. Users
/// that cannot be grouped are excluded and counted.
pub fn group_users(
    homes: &[HomeWorkResult],
    tess: Option<&Tessellation>,
    grouping: &GroupingSpec,
    event: &EventConfig,
) -> Result<(HashMap<String, String>, CoverageReport)> {
    grouping.validate()?;
    let mut groups = HashMap::new();
    let mut coverage = CoverageReport::default();
    match grouping {
        GroupingSpec::None => {
            for h in homes {
                if h.home.is_some() {
                    groups.insert(h.user_id.clone(), "all".to_string());
                } else {
                    coverage.bump("no_home");
                }
            }
        }
        GroupingSpec::EpicenterRings { ring_edges_km } => {
            let (ep_lon, ep_lat) = event.epicenter.ok_or_else(|| {
                Error::Config("epicenter required for ring grouping".into())
            })?;
            for h in homes {
                let Some(anchor) = &h.home else {
                    coverage.bump("no_home");
                    continue;
                };
                let d_km = haversine_m(anchor.lon, anchor.lat, ep_lon, ep_lat) / 1000.0;
                let ring = ring_edges_km
                    .iter()
                    .position(|edge| *edge >= d_km)
                    .unwrap_or(ring_edges_km.len());
                groups.insert(h.user_id.clone(), ring_group_id(ring));
            }
        }
        GroupingSpec::TileAttributeQuantiles {
            attribute,
            quantile_count,
        } => {
            let tess = tess.ok_or_else(|| {
                Error::Config("tessellation required for attribute grouping".into())
            })?;
            let mut values: Vec<(String, f64)> = Vec::new();
            for h in homes {
                let Some(anchor) = &h.home else {
                    coverage.bump("no_home");
                    continue;
                };
                let Some(tile_id) = &anchor.tile_id else {
                    coverage.bump("home_outside_tessellation");
                    continue;
                };
                let tile = tess.get(tile_id).ok_or_else(|| {
                    Error::Config(format!("home tile '{tile_id}' not in tessellation"))
                })?;
                match tile.attribute(attribute) {
                    Some(v) => values.push((h.user_id.clone(), v)),
                    None => coverage.bump("missing_attribute"),
                }
            }
            if !values.is_empty() {
                let mut sorted: Vec<f64> = values.iter().map(|(_, v)| *v).collect();
                sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite attributes"));
                let q = *quantile_count;
                let n = sorted.len();
                // Upper boundary of bin i is the value at rank ceil((i+1)*n/q).
                let boundaries: Vec<f64> = (0..q)
                    .map(|i| sorted[((i + 1) * n).div_ceil(q).min(n) - 1])
                    .collect();
                for (user, v) in values {
                    let bin = boundaries
                        .iter()
                        .position(|b| v <= *b)
                        .unwrap_or(q - 1);
                    groups.insert(user, quantile_group_id(bin));
                }
            }
        }
    }
    Ok((groups, coverage))
}

/// One published rate row.
#[derive(Debug, Clone, PartialEq)]
pub struct DailyRate {
    pub date: LocalDate,
    pub group: String,
    pub observed_users: u64,
    pub displaced_users: u64,
    pub rate: f64,
}

/// Displacement rate per (date, group); rows observed by fewer than
/// `k_anonymity` users are suppressed.
pub fn displacement_rates(
    records: &[DisplacementRecord],
    groups: &HashMap<String, String>,
    k_anonymity: u64,
) -> Vec<DailyRate> {
    let mut per_cell: BTreeMap<(LocalDate, &str), (u64, u64)> = BTreeMap::new();
    for r in records {
        let Some(group) = groups.get(&r.user_id) else {
            continue;
        };
        let cell = per_cell.entry((r.date, group.as_str())).or_insert((0, 0));
        cell.0 += 1;
        if r.displaced {
            cell.1 += 1;
        }
    }
    per_cell
        .into_iter()
        .filter(|(_, (observed, _))| *observed >= k_anonymity)
        .map(|((date, group), (observed, displaced))| DailyRate {
            date,
            group: group.to_string(),
            observed_users: observed,
            displaced_users: displaced,
            rate: displaced as f64 / observed as f64,
        })
        .collect()
}

/// Columns: `date,group,observed_users,displaced_users,rate`.
pub fn write_rates_csv(rates: &[DailyRate], out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(out, "date,group,observed_users,displaced_users,rate")?;
    for r in rates {
        writeln!(
            out,
            "{},{},{},{},{:.6}",
            r.date,
            csv_escape(&r.group),
            r.observed_users,
            r.displaced_users,
            r.rate
        )?;
    }
    Ok(())
}

// --- density anomalies ------------------------------------------------------

#[derive(Debug, Clone)]
struct TileDateUser {
    tile_id: String,
    date_ord: i32,
    user_id: String,
}

impl Record for TileDateUser {
    fn schema() -> &'static [FieldDef] {
        &[
            ("tile_id", FieldKind::Str),
            ("date", FieldKind::I64),
            ("user_id", FieldKind::Str),
            ("tile_date_user", FieldKind::Str),
        ]
    }

    fn key_bytes(&self, field: &str, out: &mut Vec<u8>) -> bool {
        match field {
            "tile_id" => key_str(&self.tile_id, out),
            "date" => key_i64(self.date_ord as i64, out),
            "user_id" => key_str(&self.user_id, out),
            "tile_date_user" => {
                key_str(&self.tile_id, out);
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
        put_str(&self.tile_id, out);
        put_i64(self.date_ord as i64, out);
        put_str(&self.user_id, out);
    }

    fn decode(input: &mut ByteReader<'_>) -> Result<Self> {
        Ok(TileDateUser {
            tile_id: input.str()?,
            date_ord: input.i64()? as i32,
            user_id: input.str()?,
        })
    }
}

struct FirstTileDateFold;

impl Fold<TileDateUser> for FirstTileDateFold {
    type Acc = Option<(String, i32)>;

    fn empty(&self) -> Self::Acc {
        None
    }

    fn add(&self, acc: &mut Self::Acc, row: TileDateUser) {
        if acc.is_none() {
            *acc = Some((row.tile_id, row.date_ord));
        }
    }

    fn merge(&self, into: &mut Self::Acc, other: Self::Acc) {
        if into.is_none() {
            *into = other;
        }
    }
}

/// One tile-date density comparison against the pre-event baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyRow {
    pub tile_id: String,
    pub date: LocalDate,
    pub observed_users: u64,
    pub baseline_mean: f64,
    pub baseline_std: f64,
    /// Absent when the baseline has zero variance.
    pub z_score: Option<f64>,
    /// Absent when the baseline mean is zero.
    pub pct_change: Option<f64>,
}

/// Daily distinct-user density per tile versus the baseline distribution.
///
/// Baselines are zero-filled over every baseline date, so quiet days count.
/// Rows below the anonymity floor are suppressed.
pub fn tile_population_anomalies(
    engine: &Engine,
    pings: &Dataset<Ping>,
    tess: Arc<Tessellation>,
    clock: &LocalClock,
    event: &EventConfig,
    k_anonymity: u64,
) -> Result<Vec<AnomalyRow>> {
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
    let baseline_set: BTreeSet<i32> = baseline_dates.iter().map(|d| d.ordinal()).collect();
    let observation_set: BTreeSet<i32> = observation_dates.iter().map(|d| d.ordinal()).collect();

    let clock_copy = *clock;
    let baseline_window = event.baseline_window;
    let observation_window = event.observation_window;
    let rows = pings.clone().try_filter_map(move |p: Ping| {
        if !baseline_window.contains(p.timestamp_utc)
            && !observation_window.contains(p.timestamp_utc)
        {
            return Ok(None);
        }
        Ok(tess.assign(p.lon, p.lat).map(|tile| TileDateUser {
            tile_id: tile.to_string(),
            date_ord: to_local(p.timestamp_utc, &clock_copy).date.ordinal(),
            user_id: p.user_id,
        }))
    });
    let distinct = engine.reduce_by_key(&rows, "tile_date_user", &FirstTileDateFold)?;

    // user counts per (tile, date)
    let mut counts: BTreeMap<(String, i32), u64> = BTreeMap::new();
    for (_, acc) in distinct {
        let (tile, date_ord) = acc.expect("non-empty group");
        *counts.entry((tile, date_ord)).or_insert(0) += 1;
    }

    let mut tiles: BTreeSet<&str> = BTreeSet::new();
    for (tile, _) in counts.keys().map(|(t, d)| (t.as_str(), d)) {
        tiles.insert(tile);
    }

    let n_baseline = baseline_dates.len() as f64;
    let mut out = Vec::new();
    for tile in tiles {
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for ord in &baseline_set {
            let c = counts
                .get(&(tile.to_string(), *ord))
                .copied()
                .unwrap_or(0) as f64;
            sum += c;
            sum_sq += c * c;
        }
        let mean = sum / n_baseline;
        let variance = (sum_sq / n_baseline - mean * mean).max(0.0);
        let std = variance.sqrt();
        for ord in &observation_set {
            let observed = counts
                .get(&(tile.to_string(), *ord))
                .copied()
                .unwrap_or(0);
            if observed < k_anonymity {
                continue;
            }
            let z_score = (std > 0.0).then(|| (observed as f64 - mean) / std);
            let pct_change = (mean > 0.0).then(|| (observed as f64 - mean) / mean);
            out.push(AnomalyRow {
                tile_id: tile.to_string(),
                date: LocalDate::from_ordinal(*ord),
                observed_users: observed,
                baseline_mean: mean,
                baseline_std: std,
                z_score,
                pct_change,
            });
        }
    }
    Ok(out)
}

/// Columns: `tile_id,date,observed_users,baseline_mean,baseline_std,z_score,pct_change`;
/// undefined scores are empty fields.
pub fn write_anomalies_csv(rows: &[AnomalyRow], out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(
        out,
        "tile_id,date,observed_users,baseline_mean,baseline_std,z_score,pct_change"
    )?;
    for r in rows {
        let fmt_opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{:.6},{:.6},{},{}",
            csv_escape(&r.tile_id),
            r.date,
            r.observed_users,
            r.baseline_mean,
            r.baseline_std,
            fmt_opt(r.z_score),
            fmt_opt(r.pct_change)
        )?;
    }
    Ok(())
}
