use log::warn;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{amplitude_distance, amplitude_norm, find_steady_states, refine_with_seeds, SolverOptions, SteadyState};
use crate::error::{KpoError, Result};
use crate::model::NetworkParams;

/// Parameter varied along a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Detuning of site 0; the other sites shift with it.
    Detuning,
    /// Half the drive frequency, `f_d` in Hz (`ω_G = 4π f_d`).
    HalfDriveFreqHz,
    /// Homogeneous drive amplitude `G`.
    Drive,
}

impl SweepAxis {
    pub fn apply(self, params: &NetworkParams, value: f64) -> NetworkParams {
        match self {
            SweepAxis::Detuning => params.with_detuning(value),
            SweepAxis::HalfDriveFreqHz => params.with_drive_freq(4.0 * std::f64::consts::PI * value),
            SweepAxis::Drive => params.with_drive(value),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOptions {
    pub solver: SolverOptions,
    /// Largest distance (in `√(G/V)` units) over which states at adjacent
    /// grid points are linked into one branch.
    pub link_radius: f64,
    /// Matching distance, relative to the branch amplitude, above which a
    /// possible missed fold is reported.
    pub warn_fraction: f64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self { solver: SolverOptions::default(), link_radius: 0.5, warn_fraction: 0.1 }
    }
}

/// All steady states at one sweep value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchPoint {
    pub sweep_value: f64,
    pub states: Vec<SteadyState>,
    /// Branch id of each state.
    pub branch_ids: Vec<usize>,
    /// Distance to the linked state at the previous grid point.
    pub match_distances: Vec<Option<f64>>,
    /// Sweep values (interval midpoints) where the number of stable or
    /// unstable states changed relative to the previous grid point.
    pub bifurcations: Vec<f64>,
}

impl BranchPoint {
    pub fn counts(&self) -> (usize, usize) {
        let stable = self.states.iter().filter(|s| s.stable).count();
        (stable, self.states.len() - stable)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BifurcationSweep {
    pub axis: SweepAxis,
    pub points: Vec<BranchPoint>,
    pub warnings: Vec<String>,
}

impl BifurcationSweep {
    /// Grid intervals `(i − 1, i)` across which a bifurcation was detected.
    pub fn bifurcation_intervals(&self) -> Vec<usize> {
        (1..self.points.len()).filter(|&i| !self.points[i].bifurcations.is_empty()).collect()
    }

    pub fn n_branches(&self) -> usize {
        self.points.iter().flat_map(|p| p.branch_ids.iter()).map(|b| b + 1).max().unwrap_or(0)
    }
}

/// Steady states along a monotone sweep, linked into branches.
///
/// Every grid point is first solved independently (in parallel); a
/// sequential pass then continues the previous point's states into the next
/// one so that branches are not lost between multi-starts.
pub fn bifurcation_sweep(
    params: &NetworkParams,
    axis: SweepAxis,
    grid: &[f64],
    opts: &SweepOptions,
) -> Result<BifurcationSweep> {
    let increasing = grid.windows(2).all(|w| w[1] > w[0]);
    let decreasing = grid.windows(2).all(|w| w[1] < w[0]);
    if grid.is_empty() || !(increasing || decreasing) {
        return Err(KpoError::InvalidInput("sweep grid must be non-empty and strictly monotone".into()));
    }
    let fresh: Vec<Vec<SteadyState>> = grid
        .par_iter()
        .map(|&v| find_steady_states(&axis.apply(params, v), &[], &opts.solver))
        .collect::<Result<_>>()?;

    let mut solved: Vec<Vec<SteadyState>> = Vec::with_capacity(grid.len());
    for (i, states) in fresh.into_iter().enumerate() {
        let states = if i == 0 {
            states
        } else {
            let seeds: Vec<Vec<Complex64>> = solved[i - 1].iter().map(|s| s.amplitudes.clone()).collect();
            refine_with_seeds(&axis.apply(params, grid[i]), &states, &seeds, &opts.solver)?
        };
        solved.push(states);
    }

    let scale = params.amplitude_scale();
    let mut warnings = Vec::new();
    let mut points: Vec<BranchPoint> = Vec::with_capacity(grid.len());
    let mut next_id = 0usize;
    for (i, states) in solved.into_iter().enumerate() {
        let mut ids = vec![usize::MAX; states.len()];
        let mut dists = vec![None; states.len()];
        if let Some(prev) = points.last() {
            let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
            for (a, ps) in prev.states.iter().enumerate() {
                for (b, cs) in states.iter().enumerate() {
                    let d = amplitude_distance(&ps.amplitudes, &cs.amplitudes);
                    if d <= opts.link_radius * scale {
                        pairs.push((d, a, b));
                    }
                }
            }
            pairs.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
            let mut prev_used = vec![false; prev.states.len()];
            for (d, a, b) in pairs {
                if prev_used[a] || ids[b] != usize::MAX {
                    continue;
                }
                prev_used[a] = true;
                ids[b] = prev.branch_ids[a];
                dists[b] = Some(d);
                let amp = amplitude_norm(&prev.states[a].amplitudes).max(amplitude_norm(&states[b].amplitudes));
                if d > opts.warn_fraction * amp && amp > 0.0 {
                    let msg = format!(
                        "branch {} jumps by {d:.3e} (amplitude {amp:.3e}) between sweep values {} and {}; possible missed fold",
                        ids[b],
                        grid[i - 1],
                        grid[i]
                    );
                    warn!("{msg}");
                    warnings.push(msg);
                }
            }
        }
        for id in ids.iter_mut().filter(|id| **id == usize::MAX) {
            *id = next_id;
            next_id += 1;
        }
        let mut point = BranchPoint {
            sweep_value: grid[i],
            states,
            branch_ids: ids,
            match_distances: dists,
            bifurcations: Vec::new(),
        };
        if let Some(prev) = points.last() {
            if prev.counts() != point.counts() {
                point.bifurcations.push(0.5 * (grid[i - 1] + grid[i]));
            }
        }
        points.push(point);
    }
    Ok(BifurcationSweep { axis, points, warnings })
}
