use log::warn;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::welch::{welch_quadratures, Spectrum, WelchOptions};
use super::{default_dt, integrate_strided, NoiseSpec};
use crate::error::{KpoError, Result};
use crate::fluctuations::sa_transform;
use crate::meanfield::{amplitude_distance, find_steady_states, BifurcationSweep, SolverOptions, SteadyState, SweepAxis, Symmetry};
use crate::model::NetworkParams;

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeOptions {
    /// Integration step; `None` takes the default step at each point.
    pub dt: Option<f64>,
    /// Keep every n-th state of the recording.
    pub record_every: usize,
    pub welch: WelchOptions,
    pub solver: SolverOptions,
    /// Initial state of the first point; the origin when `None`.
    pub alpha_start: Option<Vec<Complex64>>,
    /// Blocks used for the attractor-jump test.
    pub jump_blocks: usize,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        Self {
            dt: None,
            record_every: 1,
            welch: WelchOptions::default(),
            solver: SolverOptions::default(),
            alpha_start: None,
            jump_blocks: 8,
        }
    }
}

/// Spectra and attractor data at one sweep value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbePoint {
    pub sweep_value: f64,
    pub seed: u64,
    /// Mean amplitude over the recording.
    pub mean: Vec<Complex64>,
    /// RMS of the fluctuations about the mean.
    pub rms: f64,
    /// Stable steady state nearest to the mean.
    pub state: Option<SteadyState>,
    pub symmetry: Option<Symmetry>,
    /// Attractor escape during recording.
    pub jump: bool,
    pub freq: Vec<f64>,
    pub psd_site: Vec<Vec<f64>>,
    pub psd_s: Option<Vec<f64>>,
    pub psd_a: Option<Vec<f64>>,
    /// Branch of the matching state when a bifurcation sweep is supplied.
    pub branch_id: Option<usize>,
    pub final_state: Vec<Complex64>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of sweep point `index` derived from the master seed.
pub fn point_seed(master: u64, index: usize) -> u64 {
    splitmix64(master ^ splitmix64(index as u64))
}

/// Hysteretic noisy sweep: at each value the state left by the previous
/// point settles under noise for `settle_time`, then `record_time` of
/// fluctuations is recorded, mean-subtracted and turned into Welch spectra
/// per site and (N = 2) per symmetry channel.
pub fn pump_noisy_probe(
    params: &NetworkParams,
    noise: &NoiseSpec,
    axis: SweepAxis,
    grid: &[f64],
    settle_time: f64,
    record_time: f64,
    opts: &ProbeOptions,
) -> Result<Vec<ProbePoint>> {
    let gamma_min = params.damping().iter().copied().fold(f64::INFINITY, f64::min);
    if !(gamma_min > 0.0) {
        return Err(KpoError::InvalidParams("pump-noisy-probe needs positive damping".into()));
    }
    if settle_time < 10.0 / gamma_min {
        return Err(KpoError::InvalidInput(format!(
            "settle time {settle_time} is shorter than 10/γ = {}",
            10.0 / gamma_min
        )));
    }
    if record_time < 100.0 / gamma_min {
        return Err(KpoError::InvalidInput(format!(
            "record time {record_time} is shorter than 100/γ = {}",
            100.0 / gamma_min
        )));
    }
    if opts.jump_blocks < 2 {
        return Err(KpoError::InvalidInput("jump test needs at least two blocks".into()));
    }
    let n = params.n_sites();
    let mut alpha = match &opts.alpha_start {
        Some(a) if a.len() != n => return Err(KpoError::LengthMismatch { expected: n, got: a.len() }),
        Some(a) => a.clone(),
        None => vec![Complex64::new(0.0, 0.0); n],
    };

    let mut out = Vec::with_capacity(grid.len());
    for (i, &value) in grid.iter().enumerate() {
        let p = axis.apply(params, value);
        let states = find_steady_states(&p, &[alpha.clone()], &opts.solver)?;
        let a_max = states.iter().map(|s| s.amplitudes.iter().map(|z| z.norm()).fold(0.0, f64::max)).fold(0.0, f64::max);
        let probe_amp = vec![Complex64::new(a_max.max(alpha.iter().map(|z| z.norm()).fold(0.0, f64::max)), 0.0)];
        let dt = opts.dt.unwrap_or_else(|| default_dt(&p, &probe_amp));
        let seed = point_seed(noise.seed, i);
        let settle_noise = NoiseSpec { psd: noise.psd, seed: splitmix64(seed) };
        let settled = integrate_strided(&p, &settle_noise, &alpha, dt, settle_time, usize::MAX)?;
        let rec = integrate_strided(
            &p,
            &NoiseSpec { psd: noise.psd, seed },
            &settled.final_state,
            dt,
            record_time,
            opts.record_every,
        )?;
        alpha = rec.final_state.clone();

        let mean: Vec<Complex64> =
            rec.samples.iter().map(|s| s.iter().sum::<Complex64>() / s.len() as f64).collect();
        let fluct: Vec<Vec<Complex64>> =
            rec.samples.iter().zip(&mean).map(|(s, m)| s.iter().map(|z| z - m).collect()).collect();
        let len = rec.len();
        let rms = (fluct.iter().flat_map(|s| s.iter()).map(|z| z.norm_sqr()).sum::<f64>() / len as f64).sqrt();
        let jump = detect_jump(&fluct, opts.jump_blocks);
        if jump {
            warn!("attractor escape during recording at sweep value {value}");
        }

        let site: Vec<Spectrum> =
            fluct.iter().map(|s| welch_quadratures(s, rec.dt, &opts.welch)).collect::<Result<_>>()?;
        let (psd_s, psd_a) = if n == 2 {
            let (s, a) = sa_transform(&fluct[0], &fluct[1])?;
            (
                Some(welch_quadratures(&s, rec.dt, &opts.welch)?.psd),
                Some(welch_quadratures(&a, rec.dt, &opts.welch)?.psd),
            )
        } else {
            (None, None)
        };
        let state = states
            .iter()
            .filter(|s| s.stable)
            .min_by(|a, b| {
                amplitude_distance(&a.amplitudes, &mean).total_cmp(&amplitude_distance(&b.amplitudes, &mean))
            })
            .cloned();
        out.push(ProbePoint {
            sweep_value: value,
            seed,
            symmetry: state.as_ref().map(|s| s.symmetry),
            state,
            mean,
            rms,
            jump,
            freq: site[0].freq.clone(),
            psd_site: site.into_iter().map(|s| s.psd).collect(),
            psd_s,
            psd_a,
            branch_id: None,
            final_state: alpha.clone(),
        });
    }
    Ok(out)
}

/// A record has changed attractor when some block mean strays from the
/// record mean by more than three within-block fluctuation RMS.
fn detect_jump(fluct: &[Vec<Complex64>], blocks: usize) -> bool {
    let len = fluct[0].len();
    let size = len / blocks;
    if size < 2 {
        return false;
    }
    let mut means = vec![0.0; blocks];
    let mut within = 0.0;
    for (b, m) in means.iter_mut().enumerate() {
        for s in fluct {
            let block = &s[b * size..(b + 1) * size];
            let mean = block.iter().sum::<Complex64>() / size as f64;
            *m += mean.norm_sqr();
            within += block.iter().map(|z| (z - mean).norm_sqr()).sum::<f64>();
        }
    }
    let rms = (within / (blocks * size) as f64).sqrt();
    rms > 0.0 && means.iter().any(|m2| m2.sqrt() > 3.0 * rms)
}

/// Tags each probe point with the branch of the nearest state at the same
/// sweep value; grids must coincide.
pub fn assign_branches(points: &mut [ProbePoint], sweep: &BifurcationSweep) -> Result<()> {
    if points.len() != sweep.points.len() {
        return Err(KpoError::LengthMismatch { expected: sweep.points.len(), got: points.len() });
    }
    for (pp, bp) in points.iter_mut().zip(&sweep.points) {
        if pp.sweep_value != bp.sweep_value {
            return Err(KpoError::InvalidInput("probe and sweep grids differ".into()));
        }
        pp.branch_id = bp
            .states
            .iter()
            .zip(&bp.branch_ids)
            .min_by(|a, b| {
                amplitude_distance(&a.0.amplitudes, &pp.mean).total_cmp(&amplitude_distance(&b.0.amplitudes, &pp.mean))
            })
            .map(|(_, id)| *id);
    }
    Ok(())
}
