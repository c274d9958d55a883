//! Home and work location inference, and the commuting OD matrix.
//!
//! A user's home is the strongest mean-shift mode of their home-hour pings;
//! work is the strongest mode of their working-hour pings on working days.
//! Both require a minimum number of supporting pings, otherwise the end is
//! reported absent rather than guessed from noise.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

use crate::clock::{to_local, DaySchedule, LocalClock};
use crate::engine::{Dataset, Engine};
use crate::error::Result;
use crate::ingest::csv_escape;
use crate::meanshift::{mean_shift, MeanShiftParams, ModeCluster};
use crate::ping::Ping;
use crate::report::CoverageReport;
use crate::spatial::Tessellation;

/// Which daily period a ping falls into.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PeriodLabel {
    Home,
    Work,
    Other,
}

/// Home hours count on any day; work hours only on working weekdays.
pub fn label_period(timestamp_utc: i64, clock: &LocalClock, schedule: &DaySchedule) -> PeriodLabel {
    let m = to_local(timestamp_utc, clock);
    if schedule.is_home_hour(m.hour) {
        PeriodLabel::Home
    } else if schedule.is_work_hour(m.hour) && schedule.is_work_day(m.weekday) {
        PeriodLabel::Work
    } else {
        PeriodLabel::Other
    }
}

/// One inferred anchor (home or work end).
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorPoint {
    pub lon: f64,
    pub lat: f64,
    /// Tile containing the anchor, when it falls inside the tessellation.
    pub tile_id: Option<String>,
    /// Number of pings in the winning mode.
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HomeWorkResult {
    pub user_id: String,
    pub home: Option<AnchorPoint>,
    pub work: Option<AnchorPoint>,
}

#[derive(Debug, Clone)]
pub struct HomeWorkParams {
    pub mean_shift: MeanShiftParams,
    pub schedule: DaySchedule,
    pub min_home_pings: usize,
    pub min_work_pings: usize,
}

impl HomeWorkParams {
    pub fn conventional() -> Self {
        HomeWorkParams {
            mean_shift: MeanShiftParams::new(300.0).expect("static params valid"),
            schedule: DaySchedule::conventional(),
            min_home_pings: 5,
            min_work_pings: 5,
        }
    }
}

/// Infer one user's home and work anchors from their pings.
pub fn user_home_work(
    user_id: &str,
    pings: &[Ping],
    clock: &LocalClock,
    params: &HomeWorkParams,
    tess: Option<&Tessellation>,
) -> Result<HomeWorkResult> {
    let mut home_points = Vec::new();
    let mut work_points = Vec::new();
    for p in pings {
        match label_period(p.timestamp_utc, clock, &params.schedule) {
            PeriodLabel::Home => home_points.push((p.lon, p.lat)),
            PeriodLabel::Work => work_points.push((p.lon, p.lat)),
            PeriodLabel::Other => {}
        }
    }
    let home = anchor_from_points(&home_points, params.min_home_pings, &params.mean_shift, tess)?;
    let work = anchor_from_points(&work_points, params.min_work_pings, &params.mean_shift, tess)?;
    Ok(HomeWorkResult {
        user_id: user_id.to_string(),
        home,
        work,
    })
}

fn anchor_from_points(
    points: &[(f64, f64)],
    min_support: usize,
    params: &MeanShiftParams,
    tess: Option<&Tessellation>,
) -> Result<Option<AnchorPoint>> {
    if points.len() < min_support || points.is_empty() {
        return Ok(None);
    }
    let modes = mean_shift(points, params)?;
    // Strongest mode first; mean_shift already breaks ties lexicographically.
    let best: &ModeCluster = &modes[0];
    if best.member_count < min_support {
        return Ok(None);
    }
    let (lon, lat) = best.center;
    Ok(Some(AnchorPoint {
        lon,
        lat,
        tile_id: tess.and_then(|t| t.assign(lon, lat)).map(String::from),
        support: best.member_count,
    }))
}

/// Full pipeline: shuffle pings by user, infer each user independently,
/// return results sorted by user id.
pub fn infer_home_work(
    engine: &Engine,
    pings: &Dataset<Ping>,
    clock: &LocalClock,
    params: &HomeWorkParams,
    tess: Option<Arc<Tessellation>>,
    target_partitions: usize,
) -> Result<Vec<HomeWorkResult>> {
    let shuffled = engine.shuffle_by_key(pings, "user_id", target_partitions)?;
    let clock = *clock;
    let params = params.clone();
    let per_user = shuffled.map_partitions(move |mut rows: Vec<Ping>| {
        // Canonical order: group by user, deterministic arithmetic inside.
        rows.sort_by(|a, b| {
            a.user_id
                .cmp(&b.user_id)
                .then(a.timestamp_utc.cmp(&b.timestamp_utc))
                .then(a.lon.partial_cmp(&b.lon).unwrap_or(std::cmp::Ordering::Equal))
                .then(a.lat.partial_cmp(&b.lat).unwrap_or(std::cmp::Ordering::Equal))
        });
        let mut out = Vec::new();
        let mut start = 0usize;
        while start < rows.len() {
            let mut end = start + 1;
            while end < rows.len() && rows[end].user_id == rows[start].user_id {
                end += 1;
            }
            let result = user_home_work(
                &rows[start].user_id.clone(),
                &rows[start..end],
                &clock,
                &params,
                tess.as_deref(),
            )
            .map_err(|e| e.to_string())?;
            out.push(result);
            start = end;
        }
        Ok(out)
    });
    let mut results = engine.collect(&per_user)?;
    results.sort_by(|a, b| a.user_id.cmp(&b.user_id));
    Ok(results)
}

/// Commuting matrix: users per (home tile, work tile) pair.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OdMatrix {
    entries: BTreeMap<(String, String), u64>,
    total_users: u64,
}

impl OdMatrix {
    pub fn entries(&self) -> &BTreeMap<(String, String), u64> {
        &self.entries
    }

    /// Users counted into the matrix (both ends resolved).
    pub fn total_users(&self) -> u64 {
        self.total_users
    }

    pub fn get(&self, home_tile: &str, work_tile: &str) -> u64 {
        self.entries
            .get(&(home_tile.to_string(), work_tile.to_string()))
            .copied()
            .unwrap_or(0)
    }
}

/// Count users with both a home tile and a work tile; everyone else lands in
/// the coverage report with the first missing piece as the reason.
pub fn od_matrix(results: &[HomeWorkResult]) -> (OdMatrix, CoverageReport) {
    let mut matrix = OdMatrix::default();
    let mut coverage = CoverageReport::default();
    for r in results {
        let home_tile = r.home.as_ref().and_then(|a| a.tile_id.as_deref());
        let work_tile = r.work.as_ref().and_then(|a| a.tile_id.as_deref());
        match (&r.home, home_tile, &r.work, work_tile) {
            (None, _, _, _) => coverage.bump("no_home"),
            (Some(_), None, _, _) => coverage.bump("home_outside_tessellation"),
            (_, _, None, _) => coverage.bump("no_work"),
            (_, _, Some(_), None) => coverage.bump("work_outside_tessellation"),
            (Some(_), Some(h), Some(_), Some(w)) => {
                *matrix
                    .entries
                    .entry((h.to_string(), w.to_string()))
                    .or_insert(0) += 1;
                matrix.total_users += 1;
            }
        }
    }
    (matrix, coverage)
}

/// Columns: `user_id,home_lon,home_lat,home_tile,home_support,work_lon,work_lat,work_tile,work_support`;
/// absent ends leave their fields empty.
pub fn write_home_work_csv(results: &[HomeWorkResult], out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(
        out,
        "user_id,home_lon,home_lat,home_tile,home_support,work_lon,work_lat,work_tile,work_support"
    )?;
    let anchor_fields = |a: &Option<AnchorPoint>| match a {
        Some(a) => format!(
            "{:.7},{:.7},{},{}",
            a.lon,
            a.lat,
            csv_escape(a.tile_id.as_deref().unwrap_or("")),
            a.support
        ),
        None => ",,,".to_string(),
    };
    for r in results {
        writeln!(
            out,
            "{},{},{}",
            csv_escape(&r.user_id),
            anchor_fields(&r.home),
            anchor_fields(&r.work)
        )?;
    }
    Ok(())
}

/// Columns: `home_tile,work_tile,users`; rows below the anonymity floor are
/// suppressed.
pub fn write_od_csv(matrix: &OdMatrix, k_anonymity: u64, out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(out, "home_tile,work_tile,users")?;
    for ((home, work), users) in &matrix.entries {
        if *users < k_anonymity {
            continue;
        }
        writeln!(out, "{},{},{users}", csv_escape(home), csv_escape(work))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::{from_local, LocalDate};
    use crate::engine::EngineConfig;
    use crate::spatial::{make_grid, BBox};

    fn clock() -> LocalClock {
        LocalClock::utc()
    }

    #[test]
    fn label_examples() {
        let schedule = DaySchedule::conventional();
        let c = clock();
        // 2023-03-07 is a Tuesday.
        let tue_2330 = from_local(LocalDate::from_ymd(2023, 3, 7), 23, 30, 0, &c);
        assert_eq!(label_period(tue_2330, &c, &schedule), PeriodLabel::Home);
        let wed_1000 = from_local(LocalDate::from_ymd(2023, 3, 8), 10, 0, 0, &c);
        assert_eq!(label_period(wed_1000, &c, &schedule), PeriodLabel::Work);
        let sat_1000 = from_local(LocalDate::from_ymd(2023, 3, 11), 10, 0, 0, &c);
        assert_eq!(label_period(sat_1000, &c, &schedule), PeriodLabel::Other);
    }

    /// Synthetic user: night pings jittered around `home`, weekday-day pings
    /// around `work`.
    fn synth_user(user: &str, home: (f64, f64), work: (f64, f64), days: u32) -> Vec<Ping> {
        let c = clock();
        let mut out = Vec::new();
        let mut state = 1234u64;
        let mut jitter = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 33) as f64 / (1u64 << 31) as f64 - 0.5) * 0.0005 // about +-28 m
        };
        for d in 0..days {
            let date = LocalDate::from_ordinal(19_400 + d as i32); // 2023-02-12 onward
            let weekday = to_local(from_local(date, 12, 0, 0, &c), &c).weekday;
            for hour in [23u8, 2] {
                out.push(Ping {
                    user_id: user.into(),
                    timestamp_utc: from_local(date, hour, 15, 0, &c),
                    lon: home.0 + jitter(),
                    lat: home.1 + jitter(),
                    accuracy_m: None,
                });
            }
            if weekday < 5 {
                for hour in [10u8, 14] {
                    out.push(Ping {
                        user_id: user.into(),
                        timestamp_utc: from_local(date, hour, 0, 0, &c),
                        lon: work.0 + jitter(),
                        lat: work.1 + jitter(),
                        accuracy_m: None,
                    });
                }
            }
        }
        out
    }

    #[test]
    fn recovers_planted_home_and_work() {
        let home = (0.01, 0.01);
        let work = (0.055, 0.01); // about 5 km east
        let pings = synth_user("u1", home, work, 15);
        let bbox = BBox::new(0.0, 0.0, 0.08, 0.03).unwrap();
        let tess = make_grid(bbox, 500.0).unwrap();
        let r = user_home_work(
            "u1",
            &pings,
            &clock(),
            &HomeWorkParams::conventional(),
            Some(&tess),
        )
        .unwrap();
        let h = r.home.expect("home found");
        let w = r.work.expect("work found");
        assert!(crate::spatial::haversine_m(h.lon, h.lat, home.0, home.1) < 50.0);
        assert!(crate::spatial::haversine_m(w.lon, w.lat, work.0, work.1) < 50.0);
        assert_eq!(h.tile_id.as_deref(), tess.assign(home.0, home.1));
        assert_eq!(w.tile_id.as_deref(), tess.assign(work.0, work.1));
        assert!(h.support >= 5 && w.support >= 5);
    }

    #[test]
    fn night_only_user_has_no_work() {
        let c = clock();
        let mut pings = Vec::new();
        for d in 0..10 {
            pings.push(Ping {
                user_id: "night".into(),
                timestamp_utc: from_local(LocalDate::from_ordinal(19_400 + d), 23, 0, 0, &c),
                lon: 0.02,
                lat: 0.02,
                accuracy_m: None,
            });
        }
        let r = user_home_work("night", &pings, &c, &HomeWorkParams::conventional(), None).unwrap();
        assert!(r.home.is_some());
        assert!(r.work.is_none());
    }

    #[test]
    fn too_few_supporting_pings_means_absent() {
        let c = clock();
        let pings: Vec<Ping> = (0..3)
            .map(|d| Ping {
                user_id: "sparse".into(),
                timestamp_utc: from_local(LocalDate::from_ordinal(19_400 + d), 23, 0, 0, &c),
                lon: 0.02,
                lat: 0.02,
                accuracy_m: None,
            })
            .collect();
        let r = user_home_work("sparse", &pings, &c, &HomeWorkParams::conventional(), None).unwrap();
        assert!(r.home.is_none(), "3 night pings under min_home_pings=5");
        assert!(r.work.is_none());
    }

    #[test]
    fn home_center_is_a_mode_center_of_home_points() {
        let pings = synth_user("u1", (0.01, 0.01), (0.055, 0.01), 10);
        let c = clock();
        let params = HomeWorkParams::conventional();
        let r = user_home_work("u1", &pings, &c, &params, None).unwrap();
        let home_points: Vec<(f64, f64)> = pings
            .iter()
            .filter(|p| label_period(p.timestamp_utc, &c, &params.schedule) == PeriodLabel::Home)
            .map(|p| (p.lon, p.lat))
            .collect();
        let modes = mean_shift(&home_points, &params.mean_shift).unwrap();
        let h = r.home.unwrap();
        assert!(
            modes.iter().any(|m| m.center == (h.lon, h.lat)),
            "home coincides with a returned mode center"
        );
    }

    #[test]
    fn pipeline_matches_per_user_calls_and_worker_counts() {
        let mut pings = synth_user("alice", (0.01, 0.01), (0.055, 0.01), 12);
        pings.extend(synth_user("bob", (0.06, 0.02), (0.01, 0.02), 12));
        pings.extend(synth_user("carol", (0.03, 0.005), (0.07, 0.025), 12));
        let c = clock();
        let params = HomeWorkParams::conventional();
        let mut runs = Vec::new();
        for workers in [1usize, 4] {
            let engine = Engine::new(EngineConfig {
                worker_count: workers,
                work_dir: std::env::temp_dir(),
                ..EngineConfig::default()
            })
            .unwrap();
            let ds = Dataset::from_vec(pings.clone(), 5);
            runs.push(infer_home_work(&engine, &ds, &c, &params, None, 3).unwrap());
        }
        assert_eq!(runs[0], runs[1], "worker count does not change results");
        assert_eq!(runs[0].len(), 3);
        for r in &runs[0] {
            let direct: Vec<Ping> = pings
                .iter()
                .filter(|p| p.user_id == r.user_id)
                .cloned()
                .collect();
            let expect = user_home_work(&r.user_id, &direct, &c, &params, None).unwrap();
            assert_eq!(*r, expect);
        }
    }

    #[test]
    fn od_matrix_counts_and_coverage() {
        let anchor = |tile: Option<&str>| AnchorPoint {
            lon: 0.0,
            lat: 0.0,
            tile_id: tile.map(String::from),
            support: 10,
        };
        let results = vec![
            HomeWorkResult {
                user_id: "a".into(),
                home: Some(anchor(Some("t1"))),
                work: Some(anchor(Some("t2"))),
            },
            HomeWorkResult {
                user_id: "b".into(),
                home: Some(anchor(Some("t1"))),
                work: Some(anchor(Some("t2"))),
            },
            HomeWorkResult {
                user_id: "c".into(),
                home: Some(anchor(Some("t3"))),
                work: None,
            },
            HomeWorkResult {
                user_id: "d".into(),
                home: Some(anchor(None)),
                work: Some(anchor(Some("t2"))),
            },
        ];
        let (matrix, coverage) = od_matrix(&results);
        assert_eq!(matrix.get("t1", "t2"), 2);
        assert_eq!(matrix.total_users(), 2);
        let sum: u64 = matrix.entries().values().sum();
        assert_eq!(sum, matrix.total_users());
        assert_eq!(coverage.get("no_work"), 1);
        assert_eq!(coverage.get("home_outside_tessellation"), 1);
    }

    #[test]
    fn od_csv_suppresses_small_cells() {
        let mut matrix = OdMatrix::default();
        matrix.entries.insert(("t1".into(), "t2".into()), 12);
        matrix.entries.insert(("t1".into(), "t3".into()), 4);
        matrix.total_users = 16;
        let mut out = Vec::new();
        write_od_csv(&matrix, 10, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.contains("t1,t2,12"));
        assert!(!text.contains("t1,t3"), "cell below k suppressed");
    }
}
