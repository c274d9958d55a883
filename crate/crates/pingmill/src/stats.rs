//! Per-user activity statistics and user filtering.
//!
//! Active days are local dates (per the run clock), not UTC dates: with UTC
//! dates, night-time pings in the Americas straddle two dates and inflate
//! the count. Statistics are computed with a mergeable per-user summary so
//! the shuffle volume stays small.

use std::collections::HashSet;
use std::io::Write;

use crate::clock::{to_local, LocalClock, LocalDate};
use crate::engine::{Dataset, Engine, Fold};
use crate::error::{Error, Result};
use crate::ping::Ping;

/// Activity summary for one user.
#[derive(Debug, Clone, PartialEq)]
pub struct UserStats {
    pub user_id: String,
    pub total_pings: u64,
    /// Distinct local dates with at least one ping.
    pub active_days: u32,
    /// Last local date minus first, plus one.
    pub span_days: u32,
    pub avg_pings_per_active_day: f64,
}

/// Mergeable accumulator: ping count plus the sorted set of active date
/// ordinals (bounded by active days, so partials stay small on the wire).
#[derive(Debug, Clone)]
pub struct UserActivity {
    user_id: String,
    total: u64,
    date_ordinals: Vec<i32>,
}

impl UserActivity {
    fn into_stats(self) -> UserStats {
        let active_days = self.date_ordinals.len() as u32;
        let span_days = match (self.date_ordinals.first(), self.date_ordinals.last()) {
            (Some(first), Some(last)) => (last - first + 1) as u32,
            _ => 0,
        };
        UserStats {
            user_id: self.user_id,
            total_pings: self.total,
            active_days,
            span_days,
            avg_pings_per_active_day: self.total as f64 / active_days.max(1) as f64,
        }
    }

    pub fn first_date(&self) -> Option<LocalDate> {
        self.date_ordinals.first().map(|&o| LocalDate::from_ordinal(o))
    }
}

struct UserStatsFold {
    clock: LocalClock,
}

impl Fold<Ping> for UserStatsFold {
    type Acc = UserActivity;

    fn empty(&self) -> UserActivity {
        UserActivity {
            user_id: String::new(),
            total: 0,
            date_ordinals: Vec::new(),
        }
    }

    fn add(&self, acc: &mut UserActivity, ping: Ping) {
        if acc.user_id.is_empty() {
            acc.user_id = ping.user_id;
        }
        acc.total += 1;
        let ord = to_local(ping.timestamp_utc, &self.clock).date.ordinal();
        if let Err(pos) = acc.date_ordinals.binary_search(&ord) {
            acc.date_ordinals.insert(pos, ord);
        }
    }

    fn merge(&self, into: &mut UserActivity, other: UserActivity) {
        if into.user_id.is_empty() {
            into.user_id = other.user_id;
        }
        into.total += other.total;
        for ord in other.date_ordinals {
            if let Err(pos) = into.date_ordinals.binary_search(&ord) {
                into.date_ordinals.insert(pos, ord);
            }
        }
    }
}

/// One row per distinct user, sorted by user id; independent of
/// partitioning and worker count.
pub fn user_stats(engine: &Engine, ds: &Dataset<Ping>, clock: &LocalClock) -> Result<Vec<UserStats>> {
    let fold = UserStatsFold { clock: *clock };
    let table = engine.reduce_by_key(ds, "user_id", &fold)?;
    Ok(table.into_iter().map(|(_, acc)| acc.into_stats()).collect())
}

/// Minimum thresholds a user must all meet to survive filtering.
#[derive(Debug, Clone, Default)]
pub struct UserFilterCriteria {
    pub min_active_days: Option<u32>,
    pub min_total_pings: Option<u64>,
    pub min_avg_pings_per_day: Option<f64>,
    pub min_span_days: Option<u32>,
}

impl UserFilterCriteria {
    pub fn validate(&self) -> Result<()> {
        if let Some(v) = self.min_avg_pings_per_day {
            if !(v >= 0.0) {
                return Err(Error::Config(format!("min_avg_pings_per_day {v} must be >= 0")));
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.min_active_days.is_none()
            && self.min_total_pings.is_none()
            && self.min_avg_pings_per_day.is_none()
            && self.min_span_days.is_none()
    }

    pub fn passes(&self, stats: &UserStats) -> bool {
        self.min_active_days.is_none_or(|m| stats.active_days >= m)
            && self.min_total_pings.is_none_or(|m| stats.total_pings >= m)
            && self
                .min_avg_pings_per_day
                .is_none_or(|m| stats.avg_pings_per_active_day >= m)
            && self.min_span_days.is_none_or(|m| stats.span_days >= m)
    }
}

/// Restrict the dataset to users meeting every present threshold. A user is
/// kept or dropped wholesale. A ping whose user is missing from `stats` is a
/// fatal consistency error: it means the statistics were computed on
/// different data.
pub fn filter_users(
    ds: Dataset<Ping>,
    stats: &[UserStats],
    criteria: &UserFilterCriteria,
) -> Result<Dataset<Ping>> {
    criteria.validate()?;
    let mut qualifying: HashSet<String> = HashSet::new();
    let mut known: HashSet<String> = HashSet::with_capacity(stats.len());
    for s in stats {
        known.insert(s.user_id.clone());
        if criteria.passes(s) {
            qualifying.insert(s.user_id.clone());
        }
    }
    if criteria.is_empty() {
        // Still enforce the coverage precondition.
        return Ok(ds.try_filter_map(move |ping: Ping| {
            if known.contains(&ping.user_id) {
                Ok(Some(ping))
            } else {
                Err(format!("user '{}' missing from stats table", ping.user_id))
            }
        }));
    }
    Ok(ds.try_filter_map(move |ping: Ping| {
        if !known.contains(&ping.user_id) {
            return Err(format!("user '{}' missing from stats table", ping.user_id));
        }
        Ok(qualifying.contains(&ping.user_id).then_some(ping))
    }))
}

/// Output columns: `user_id,total_pings,active_days,span_days,avg_pings_per_active_day`.
pub fn write_user_stats_csv(stats: &[UserStats], out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(
        out,
        "user_id,total_pings,active_days,span_days,avg_pings_per_active_day"
    )?;
    for s in stats {
        writeln!(
            out,
            "{},{},{},{},{:.4}",
            crate::ingest::csv_escape(&s.user_id),
            s.total_pings,
            s.active_days,
            s.span_days,
            s.avg_pings_per_active_day
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::from_local;
    use crate::engine::EngineConfig;
    use std::collections::HashMap;

    /// Sequential single-pass reference, independent of the engine path.
    fn user_stats_naive(pings: &[Ping], clock: &LocalClock) -> Vec<UserStats> {
        let mut per_user: HashMap<&str, (u64, std::collections::BTreeSet<i32>)> = HashMap::new();
        for p in pings {
            let entry = per_user.entry(&p.user_id).or_default();
            entry.0 += 1;
            entry.1.insert(to_local(p.timestamp_utc, clock).date.ordinal());
        }
        let mut out: Vec<UserStats> = per_user
            .into_iter()
            .map(|(user, (total, dates))| {
                let active = dates.len() as u32;
                let span =
                    (dates.iter().next_back().unwrap() - dates.iter().next().unwrap() + 1) as u32;
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

    fn ping(user: &str, ts: i64) -> Ping {
        Ping {
            user_id: user.into(),
            timestamp_utc: ts,
            lat: 0.0,
            lon: 0.0,
            accuracy_m: None,
        }
    }

    fn engine(workers: usize) -> Engine {
        Engine::new(EngineConfig {
            worker_count: workers,
            work_dir: std::env::temp_dir(),
            ..EngineConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn active_days_and_span() {
        let clock = LocalClock::utc();
        let d1 = from_local(LocalDate::from_ymd(2023, 1, 1), 12, 0, 0, &clock);
        let d3 = from_local(LocalDate::from_ymd(2023, 1, 3), 12, 0, 0, &clock);
        let ds = Dataset::from_vec(vec![ping("u1", d1), ping("u1", d3)], 2);
        let stats = user_stats(&engine(2), &ds, &clock).unwrap();
        assert_eq!(stats.len(), 1);
        assert_eq!(stats[0].active_days, 2);
        assert_eq!(stats[0].span_days, 3);
        assert_eq!(stats[0].total_pings, 2);
        assert_eq!(stats[0].avg_pings_per_active_day, 1.0);
    }

    #[test]
    fn empty_dataset_gives_empty_table() {
        let stats = user_stats(&engine(1), &Dataset::empty(), &LocalClock::utc()).unwrap();
        assert!(stats.is_empty());
    }

    #[test]
    fn matches_naive_oracle_and_is_partition_invariant() {
        let clock = LocalClock::from_offset_minutes(-300).unwrap();
        let mut pings = Vec::new();
        let mut state = 7u64;
        let mut next = || {
            state = state.wrapping_mul(2862933555777941757).wrapping_add(3037000493);
            state >> 33
        };
        for _ in 0..20_000 {
            let user = format!("u{:03}", next() % 50);
            let ts = (next() % (86_400 * 40)) as i64;
            pings.push(ping(&user, ts));
        }
        let expect = user_stats_naive(&pings, &clock);
        let total_input = pings.len() as u64;

        let a = user_stats(&engine(1), &Dataset::from_vec(pings.clone(), 1), &clock).unwrap();
        let b = user_stats(&engine(8), &Dataset::from_vec(pings.clone(), 17), &clock).unwrap();
        let mut reversed = pings.clone();
        reversed.reverse();
        let c = user_stats(&engine(4), &Dataset::from_vec(reversed, 5), &clock).unwrap();

        assert_eq!(a, expect);
        assert_eq!(b, expect);
        assert_eq!(c, expect, "permutation of input leaves stats unchanged");
        let sum: u64 = a.iter().map(|s| s.total_pings).sum();
        assert_eq!(sum, total_input, "totals reconcile with input size");
        for s in &a {
            assert!(s.active_days <= s.span_days);
            assert!(s.total_pings >= s.active_days as u64);
        }
    }

    #[test]
    fn filter_drops_short_users_wholesale() {
        let clock = LocalClock::utc();
        let day = 86_400;
        let pings = vec![
            ping("one_day", 10),
            ping("one_day", 20),
            ping("two_days", 10),
            ping("two_days", day + 10),
        ];
        let eng = engine(2);
        let ds = Dataset::from_vec(pings, 2);
        let stats = user_stats(&eng, &ds, &clock).unwrap();
        let criteria = UserFilterCriteria {
            min_active_days: Some(2),
            ..UserFilterCriteria::default()
        };
        let kept = eng
            .collect(&filter_users(ds.clone(), &stats, &criteria).unwrap())
            .unwrap();
        assert_eq!(kept.len(), 2);
        assert!(kept.iter().all(|p| p.user_id == "two_days"));

        let identity = eng
            .collect(&filter_users(ds.clone(), &stats, &UserFilterCriteria::default()).unwrap())
            .unwrap();
        assert_eq!(identity.len(), 4, "empty criteria keep everything");
    }

    #[test]
    fn unknown_user_is_fatal() {
        let eng = engine(1);
        let ds = Dataset::from_vec(vec![ping("ghost", 10)], 1);
        let filtered = filter_users(ds, &[], &UserFilterCriteria::default()).unwrap();
        let err = eng.collect(&filtered).unwrap_err();
        assert!(err.to_string().contains("ghost"), "{err}");
    }

    #[test]
    fn random_thresholds_match_naive_survivors() {
        let clock = LocalClock::utc();
        let mut pings = Vec::new();
        for u in 0..40 {
            let days = 1 + u % 7;
            let per_day = 1 + u % 5;
            for d in 0..days {
                for k in 0..per_day {
                    pings.push(ping(&format!("u{u:02}"), (d * 86_400 + k * 60) as i64));
                }
            }
        }
        let eng = engine(4);
        let ds = Dataset::from_vec(pings.clone(), 6);
        let stats = user_stats(&eng, &ds, &clock).unwrap();
        let criteria = UserFilterCriteria {
            min_active_days: Some(3),
            min_total_pings: Some(8),
            min_avg_pings_per_day: Some(2.0),
            min_span_days: None,
        };
        let survivors: HashSet<String> = stats
            .iter()
            .filter(|s| criteria.passes(s))
            .map(|s| s.user_id.clone())
            .collect();
        let naive: Vec<&Ping> = pings
            .iter()
            .filter(|p| survivors.contains(&p.user_id))
            .collect();
        let got = eng
            .collect(&filter_users(ds, &stats, &criteria).unwrap())
            .unwrap();
        assert_eq!(got.len(), naive.len());
        for (g, n) in got.iter().zip(naive) {
            assert_eq!(g, n);
        }
    }
}
