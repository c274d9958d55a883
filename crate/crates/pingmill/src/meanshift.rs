//! Flat-kernel mean-shift in a local equirectangular meter frame.
//!
//! Matches the classic bin-seeded variant: seeds are the occupied bins of a
//! coarse grid, each seed iterates to the mean of the points within the
//! bandwidth, converged centers closer than the merge radius collapse into
//! one mode, and every input point is assigned to its nearest surviving
//! mode. Points are canonically sorted before any arithmetic, so the result
//! is bit-identical under input permutation.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::spatial::METERS_PER_DEGREE;

/// Parameters with the usual defaults hanging off the bandwidth.
#[derive(Debug, Clone, Copy)]
pub struct MeanShiftParams {
    pub bandwidth_m: f64,
    pub convergence_tol_m: f64,
    pub max_iterations: u32,
    pub seed_bin_m: f64,
    pub mode_merge_m: f64,
}

impl MeanShiftParams {
    pub fn new(bandwidth_m: f64) -> Result<Self> {
        let p = MeanShiftParams {
            bandwidth_m,
            convergence_tol_m: 1.0,
            max_iterations: 100,
            seed_bin_m: bandwidth_m / 2.0,
            mode_merge_m: bandwidth_m / 2.0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth_m > 0.0) {
            return Err(Error::Parameter(format!(
                "bandwidth {} must be > 0",
                self.bandwidth_m
            )));
        }
        if !(self.convergence_tol_m > 0.0) || self.bandwidth_m <= self.convergence_tol_m {
            return Err(Error::Parameter(format!(
                "bandwidth {} must exceed convergence tolerance {}",
                self.bandwidth_m, self.convergence_tol_m
            )));
        }
        if !(self.seed_bin_m > 0.0) || !(self.mode_merge_m > 0.0) || self.max_iterations == 0 {
            return Err(Error::Parameter("mean-shift parameters must be positive".into()));
        }
        Ok(())
    }
}

/// One density mode and the points assigned to it.
#[derive(Debug, Clone)]
pub struct ModeCluster {
    /// Mode center, (lon, lat).
    pub center: (f64, f64),
    pub member_count: usize,
    /// Indices into the input point list.
    pub member_indices: Vec<usize>,
}

/// Local projection extent guard: beyond city/region scale the flat frame
/// stops being a valid approximation.
const MAX_EXTENT_M: f64 = 200_000.0;

/// Run mean-shift over `(lon, lat)` points. Modes are sorted by descending
/// member count (ties by center), and every input point is assigned to
/// exactly one mode.
pub fn mean_shift(points: &[(f64, f64)], params: &MeanShiftParams) -> Result<Vec<ModeCluster>> {
    params.validate()?;
    if points.is_empty() {
        return Err(Error::Parameter("mean_shift requires at least one point".into()));
    }

    // Canonical processing order makes sums permutation-invariant.
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        points[a]
            .partial_cmp(&points[b])
            .expect("coordinates are finite")
            .then(a.cmp(&b))
    });

    let n = points.len() as f64;
    let (mut lon0, mut lat0) = (0.0, 0.0);
    for &i in &order {
        lon0 += points[i].0;
        lat0 += points[i].1;
    }
    lon0 /= n;
    lat0 /= n;
    let k_lat = METERS_PER_DEGREE;
    let k_lon = METERS_PER_DEGREE * lat0.to_radians().cos();

    let local: Vec<(f64, f64)> = order
        .iter()
        .map(|&i| ((points[i].0 - lon0) * k_lon, (points[i].1 - lat0) * k_lat))
        .collect();

    let extent = local.iter().fold((0.0f64, 0.0f64), |acc, p| {
        (acc.0.max(p.0.abs()), acc.1.max(p.1.abs()))
    });
    if extent.0 > MAX_EXTENT_M / 2.0 || extent.1 > MAX_EXTENT_M / 2.0 {
        return Err(Error::Parameter(format!(
            "points span more than {MAX_EXTENT_M} m; local projection invalid"
        )));
    }

    // Seeds: centers of occupied bins, in bin order.
    let bin = params.seed_bin_m;
    let mut bins: BTreeMap<(i64, i64), ()> = BTreeMap::new();
    for p in &local {
        bins.insert(((p.0 / bin).floor() as i64, (p.1 / bin).floor() as i64), ());
    }
    let seeds: Vec<(f64, f64)> = bins
        .keys()
        .map(|&(ix, iy)| ((ix as f64 + 0.5) * bin, (iy as f64 + 0.5) * bin))
        .collect();

    let bw2 = params.bandwidth_m * params.bandwidth_m;
    let tol2 = params.convergence_tol_m * params.convergence_tol_m;
    let mut candidates: Vec<((f64, f64), usize)> = Vec::new();
    for &seed in &seeds {
        let mut center = seed;
        let mut support = 0usize;
        for _ in 0..params.max_iterations {
            let mut sx = 0.0;
            let mut sy = 0.0;
            let mut count = 0usize;
            for p in &local {
                let dx = p.0 - center.0;
                let dy = p.1 - center.1;
                if dx * dx + dy * dy <= bw2 {
                    sx += p.0;
                    sy += p.1;
                    count += 1;
                }
            }
            if count == 0 {
                support = 0;
                break;
            }
            let next = (sx / count as f64, sy / count as f64);
            let shift2 = {
                let dx = next.0 - center.0;
                let dy = next.1 - center.1;
                dx * dx + dy * dy
            };
            center = next;
            support = count;
            if shift2 < tol2 {
                break;
            }
        }
        if support > 0 {
            candidates.push((center, support));
        }
    }

    // Merge converged centers closer than the merge radius; the candidate
    // with more in-bandwidth support wins, ties to the smaller center.
    candidates.sort_by(|a, b| {
        b.1.cmp(&a.1)
            .then(a.0.partial_cmp(&b.0).expect("finite centers"))
    });
    let merge2 = params.mode_merge_m * params.mode_merge_m;
    let mut modes: Vec<(f64, f64)> = Vec::new();
    for (center, _) in &candidates {
        let taken = modes.iter().any(|m| {
            let dx = m.0 - center.0;
            let dy = m.1 - center.1;
            dx * dx + dy * dy <= merge2
        });
        if !taken {
            modes.push(*center);
        }
    }

    // Assign every point to its nearest surviving mode.
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); modes.len()];
    for (sorted_idx, p) in local.iter().enumerate() {
        let mut best = 0usize;
        let mut best_d2 = f64::INFINITY;
        for (mi, m) in modes.iter().enumerate() {
            let dx = p.0 - m.0;
            let dy = p.1 - m.1;
            let d2 = dx * dx + dy * dy;
            if d2 < best_d2 {
                best_d2 = d2;
                best = mi;
            }
        }
        members[best].push(order[sorted_idx]);
    }

    let mut clusters: Vec<ModeCluster> = modes
        .into_iter()
        .zip(members)
        .filter(|(_, m)| !m.is_empty())
        .map(|(center, mut member_indices)| {
            member_indices.sort_unstable();
            ModeCluster {
                center: (lon0 + center.0 / k_lon, lat0 + center.1 / k_lat),
                member_count: member_indices.len(),
                member_indices,
            }
        })
        .collect();
    clusters.sort_by(|a, b| {
        b.member_count
            .cmp(&a.member_count)
            .then(a.center.partial_cmp(&b.center).expect("finite centers"))
    });
    Ok(clusters)
}
