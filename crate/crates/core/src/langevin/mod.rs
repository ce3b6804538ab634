//! Stochastic integration of the mean-field equations with additive white
//! noise, spectral estimation and the pump-noisy-probe sweep.

mod probe;
mod welch;

pub use probe::{assign_branches, pump_noisy_probe, ProbeOptions, ProbePoint};
pub use welch::{fit_lorentzian, welch_psd, welch_quadratures, LorentzianFit, Spectrum, WelchOptions, Window};

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{KpoError, Result};
use crate::meanfield::drift_into;
use crate::model::NetworkParams;

/// White noise of two-sided PSD `psd` on every real quadrature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub psd: f64,
    pub seed: u64,
}

/// Uniformly sampled quadratures; `samples[j][k]` is site `j` at `t0 + k·dt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub dt: f64,
    pub t0: f64,
    pub samples: Vec<Vec<Complex64>>,
    /// State after the last step.
    pub final_state: Vec<Complex64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.samples.first().map_or(0, |s| s.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }
}

/// Largest rate entering the explicit step: `max(γ, |Δ| + 2G + 2V·A², |J|)`
/// with `A = max|α₀|`.
pub fn max_rate(params: &NetworkParams, alpha0: &[Complex64]) -> f64 {
    let a2 = alpha0.iter().map(|a| a.norm_sqr()).fold(0.0, f64::max);
    let det = params.detunings();
    let mut rate = params.coupling().amax();
    for j in 0..params.n_sites() {
        rate = rate
            .max(params.damping()[j])
            .max(det[j].abs() + 2.0 * params.drive()[j] + 2.0 * params.kerr()[j].abs() * a2);
    }
    rate
}

/// Stability bound `0.05 / max_rate`.
pub fn step_bound(params: &NetworkParams, alpha0: &[Complex64]) -> f64 {
    0.05 / max_rate(params, alpha0)
}

/// Default step `0.01 / max_rate`.
pub fn default_dt(params: &NetworkParams, alpha0: &[Complex64]) -> f64 {
    0.01 / max_rate(params, alpha0)
}

/// Euler–Maruyama over `duration` recording every step.
pub fn integrate(
    params: &NetworkParams,
    noise: &NoiseSpec,
    alpha0: &[Complex64],
    dt: f64,
    duration: f64,
) -> Result<Trajectory> {
    integrate_strided(params, noise, alpha0, dt, duration, 1)
}

/// Euler–Maruyama keeping every `record_every`-th state.
///
/// Each step adds `σ√dt·N(0,1)` to both quadratures of every site. Site `j`
/// draws from its own ChaCha stream `j` keyed by the seed, so a run is fixed
/// by `(seed, site, step)`.
pub fn integrate_strided(
    params: &NetworkParams,
    noise: &NoiseSpec,
    alpha0: &[Complex64],
    dt: f64,
    duration: f64,
    record_every: usize,
) -> Result<Trajectory> {
    let n = params.n_sites();
    if alpha0.len() != n {
        return Err(KpoError::LengthMismatch { expected: n, got: alpha0.len() });
    }
    if !(noise.psd >= 0.0 && noise.psd.is_finite()) {
        return Err(KpoError::InvalidInput(format!("noise PSD must be finite and >= 0, got {}", noise.psd)));
    }
    if !(dt > 0.0) || !(duration >= dt) || !duration.is_finite() {
        return Err(KpoError::InvalidInput(format!("need 0 < dt <= duration, got dt = {dt}, duration = {duration}")));
    }
    if record_every == 0 {
        return Err(KpoError::InvalidInput("record stride must be positive".into()));
    }
    let bound = step_bound(params, alpha0);
    if dt > bound {
        return Err(KpoError::StepTooLarge { dt, bound });
    }
    let steps = (duration / dt).floor() as usize;
    let kick = (noise.psd * dt).sqrt();
    let detuning = params.detunings();
    let mut rngs: Vec<ChaCha8Rng> = (0..n)
        .map(|j| {
            let mut r = ChaCha8Rng::seed_from_u64(noise.seed);
            r.set_stream(j as u64);
            r
        })
        .collect();
    let mut samples: Vec<Vec<Complex64>> = vec![Vec::with_capacity(steps.div_ceil(record_every)); n];
    let mut alpha = alpha0.to_vec();
    let mut f = vec![Complex64::new(0.0, 0.0); n];
    for step in 0..steps {
        if step % record_every == 0 {
            for j in 0..n {
                samples[j].push(alpha[j]);
            }
        }
        drift_into(params, &detuning, &alpha, &mut f);
        for j in 0..n {
            let mut next = alpha[j] + f[j] * dt;
            if kick > 0.0 {
                let xr: f64 = StandardNormal.sample(&mut rngs[j]);
                let xi: f64 = StandardNormal.sample(&mut rngs[j]);
                next += Complex64::new(kick * xr, kick * xi);
            }
            if !(next.re.is_finite() && next.im.is_finite()) {
                return Err(KpoError::Diverged { step, time: (step + 1) as f64 * dt });
            }
            alpha[j] = next;
        }
    }
    Ok(Trajectory { dt: dt * record_every as f64, t0: 0.0, samples, final_state: alpha })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meanfield::{characteristic_exponents, find_steady_states, jacobian, SolverOptions};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn fixed_point_stays_put() {
        let p = NetworkParams::identical(1, 0.0, 1.0, 0.5, 0.0, 0.1).unwrap();
        let st = find_steady_states(&p, &[], &SolverOptions::default())
            .unwrap()
            .into_iter()
            .find(|s| s.stable)
            .unwrap();
        let dt = default_dt(&p, &st.amplitudes);
        let noise = NoiseSpec { psd: 0.0, seed: 1 };
        let tr = integrate_strided(&p, &noise, &st.amplitudes, dt, 1e6 * dt, 1000).unwrap();
        let drift = tr.samples[0].iter().map(|z| (z - st.amplitudes[0]).norm()).fold(0.0, f64::max);
        assert!(drift < 1e-8, "{drift:e}");
    }

    #[test]
    fn perturbation_decays_at_leading_exponent() {
        // real leading exponent: single site inside no lobe, G > |Δ|
        let p = NetworkParams::identical(1, 0.1, 1.0, 0.3, 0.0, 1.0).unwrap();
        let mu = characteristic_exponents(&jacobian(&p, &[c(0.0, 0.0)]));
        let rate = mu[0].re;
        let eps = 1e-6;
        let dt = default_dt(&p, &[c(eps, eps)]) * 0.1;
        let tr = integrate(&p, &NoiseSpec { psd: 0.0, seed: 0 }, &[c(eps, eps)], dt, 20.0).unwrap();
        let norms: Vec<f64> = tr.samples[0].iter().map(|z| z.norm()).collect();
        let (k1, k2) = (tr.len() / 2, tr.len() - 1);
        let fitted = (norms[k2] / norms[k1]).ln() / (tr.time(k2) - tr.time(k1));
        assert!((fitted / rate - 1.0).abs() < 0.05, "{fitted} vs {rate}");
    }

    #[test]
    fn same_seed_same_path() {
        let p = NetworkParams::identical(2, 0.2, 1.0, 0.05, -0.25, 0.1).unwrap();
        let noise = NoiseSpec { psd: 1e-3, seed: 42 };
        let zero = [c(0.0, 0.0); 2];
        let dt = default_dt(&p, &zero);
        let a = integrate(&p, &noise, &zero, dt, 2000.0 * dt).unwrap();
        let b = integrate(&p, &noise, &zero, dt, 2000.0 * dt).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2000);
        let other = integrate(&p, &NoiseSpec { seed: 43, ..noise }, &zero, dt, 2000.0 * dt).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn rejects_large_steps() {
        let p = NetworkParams::identical(1, 1.0, 1.0, 0.0, 0.0, 0.1).unwrap();
        let zero = [c(0.0, 0.0)];
        let r = integrate(&p, &NoiseSpec { psd: 0.0, seed: 0 }, &zero, 0.1, 1.0);
        assert!(matches!(r, Err(KpoError::StepTooLarge { .. })));
    }
}
