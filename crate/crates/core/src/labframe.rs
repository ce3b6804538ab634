//! Classical lab-frame dynamics of the network without the rotating-wave
//! approximation, and a numerical lock-in back to rotating coordinates.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{KpoError, Result};
use crate::model::NetworkParams;

/// Coefficients of
/// `ẍ_j + γ_j ẋ_j + ω_j²(1 − λ_j cos ω_G t) x_j + A_j x_j³ + Σ_k J_jk √(ω_j ω_k) x_k = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabParams {
    pub omega: Vec<f64>,
    pub lambda: Vec<f64>,
    pub duffing: Vec<f64>,
    pub coupling: DMatrix<f64>,
    pub damping: Vec<f64>,
    pub drive_freq: f64,
    pub hbar: f64,
}

impl LabParams {
    pub fn n_sites(&self) -> usize {
        self.omega.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.omega.len();
        if n == 0
            || self.lambda.len() != n
            || self.duffing.len() != n
            || self.damping.len() != n
            || self.coupling.shape() != (n, n)
        {
            return Err(KpoError::InvalidParams("lab-frame parameter lengths disagree".into()));
        }
        if self.omega.iter().any(|w| !(*w > 0.0)) || !(self.drive_freq > 0.0) || !(self.hbar > 0.0) {
            return Err(KpoError::InvalidParams("frequencies and ħ must be positive".into()));
        }
        if self.lambda.iter().any(|l| !(*l >= 0.0)) {
            return Err(KpoError::InvalidParams("modulation depth must be non-negative".into()));
        }
        let finite = self.duffing.iter().chain(&self.damping).chain(self.coupling.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(KpoError::InvalidParams("lab-frame parameters must be finite".into()));
        }
        Ok(())
    }

    /// Same network with every `λ_j` set to `lambda`.
    pub fn with_lambda(&self, lambda: f64) -> Self {
        Self { lambda: vec![lambda; self.n_sites()], ..self.clone() }
    }

    /// Rotating-frame detunings `ω_G/2 − ω_j` of the classical slow flow.
    pub fn rwa_detunings(&self) -> Vec<f64> {
        self.omega.iter().map(|w| 0.5 * self.drive_freq - w).collect()
    }

    /// `x = scale · Re(α e^{iω_G t/2})` with `scale = √(2ħ/ω_j)`, so that
    /// [`demodulate`] returns `scale · α*` in the convention of the
    /// rotating-frame drift.
    pub fn amplitude_scale(&self, site: usize) -> f64 {
        (2.0 * self.hbar / self.omega[site]).sqrt()
    }

    fn stiffness(&self) -> DMatrix<f64> {
        let n = self.n_sites();
        DMatrix::from_fn(n, n, |j, k| {
            if j == k {
                0.0
            } else {
                self.coupling[(j, k)] * (self.omega[j] * self.omega[k]).sqrt()
            }
        })
    }
}

/// `λ_j = 4G_j/ω_j`, `A_j = 4ω_j²V_j/(3ħ)`; coupling and damping copied.
pub fn lab_params(params: &NetworkParams, hbar: f64) -> Result<LabParams> {
    if !(hbar > 0.0) {
        return Err(KpoError::InvalidParams("ħ must be positive".into()));
    }
    let omega = params.omega().to_vec();
    if omega.iter().any(|w| !(*w > 0.0)) {
        return Err(KpoError::InvalidParams("site frequencies must be positive".into()));
    }
    let lab = LabParams {
        lambda: params.drive().iter().zip(&omega).map(|(g, w)| 4.0 * g.abs() / w).collect(),
        duffing: params.kerr().iter().zip(&omega).map(|(v, w)| 4.0 * w * w * v / (3.0 * hbar)).collect(),
        coupling: params.coupling().clone(),
        damping: params.damping().to_vec(),
        drive_freq: params.drive_freq(),
        hbar,
        omega,
    };
    lab.validate()?;
    Ok(lab)
}

/// Positions and velocities per site, one sample per recorded step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabTrajectory {
    /// Time between samples.
    pub dt: f64,
    pub positions: Vec<Vec<f64>>,
    pub velocities: Vec<Vec<f64>>,
}

impl LabTrajectory {
    pub fn len(&self) -> usize {
        self.positions.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Largest step with at least 40 steps per fastest period.
pub fn max_lab_step(lab: &LabParams) -> f64 {
    let w = lab.omega.iter().copied().fold(0.0, f64::max);
    2.0 * std::f64::consts::PI / (40.0 * w)
}

fn accel(lab: &LabParams, k: &DMatrix<f64>, t: f64, x: &[f64], v: &[f64], out: &mut [f64]) {
    let c = (lab.drive_freq * t).cos();
    for j in 0..x.len() {
        let w2 = lab.omega[j] * lab.omega[j];
        let mut a = -lab.damping[j] * v[j] - w2 * (1.0 - lab.lambda[j] * c) * x[j] - lab.duffing[j] * x[j].powi(3);
        for (m, xm) in x.iter().enumerate() {
            a -= k[(j, m)] * xm;
        }
        out[j] = a;
    }
}

/// Fixed-step RK4 from `(x0, v0)` at `t = 0`, recording every
/// `record_every`-th state starting with the initial one.
pub fn integrate_lab(
    lab: &LabParams,
    x0: &[f64],
    v0: &[f64],
    dt: f64,
    duration: f64,
    record_every: usize,
) -> Result<LabTrajectory> {
    lab.validate()?;
    let n = lab.n_sites();
    if x0.len() != n || v0.len() != n {
        return Err(KpoError::LengthMismatch { expected: n, got: x0.len().min(v0.len()) });
    }
    let bound = max_lab_step(lab);
    if !(dt > 0.0) || dt > bound {
        return Err(KpoError::StepTooLarge { dt, bound });
    }
    if !(duration >= 0.0) || record_every == 0 {
        return Err(KpoError::InvalidInput("duration must be non-negative and record_every positive".into()));
    }
    let steps = (duration / dt).round() as usize;
    let k = lab.stiffness();
    let (mut x, mut v) = (x0.to_vec(), v0.to_vec());
    let cap = steps / record_every + 1;
    let mut positions = vec![Vec::with_capacity(cap); n];
    let mut velocities = vec![Vec::with_capacity(cap); n];
    let (mut a1, mut a2, mut a3, mut a4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let (mut xt, mut vt) = (vec![0.0; n], vec![0.0; n]);
    let (mut v2, mut v3) = (vec![0.0; n], vec![0.0; n]);
    for step in 0..=steps {
        if step % record_every == 0 {
            for j in 0..n {
                positions[j].push(x[j]);
                velocities[j].push(v[j]);
            }
        }
        if step == steps {
            break;
        }
        let t = step as f64 * dt;
        accel(lab, &k, t, &x, &v, &mut a1);
        for j in 0..n {
            xt[j] = x[j] + 0.5 * dt * v[j];
            v2[j] = v[j] + 0.5 * dt * a1[j];
        }
        accel(lab, &k, t + 0.5 * dt, &xt, &v2, &mut a2);
        for j in 0..n {
            xt[j] = x[j] + 0.5 * dt * v2[j];
            v3[j] = v[j] + 0.5 * dt * a2[j];
        }
        accel(lab, &k, t + 0.5 * dt, &xt, &v3, &mut a3);
        for j in 0..n {
            xt[j] = x[j] + dt * v3[j];
            vt[j] = v[j] + dt * a3[j];
        }
        accel(lab, &k, t + dt, &xt, &vt, &mut a4);
        for j in 0..n {
            x[j] += dt / 6.0 * (v[j] + 2.0 * v2[j] + 2.0 * v3[j] + vt[j]);
            v[j] += dt / 6.0 * (a1[j] + 2.0 * a2[j] + 2.0 * a3[j] + a4[j]);
        }
        if x.iter().chain(&v).any(|z| !z.is_finite()) {
            return Err(KpoError::Diverged { step: step + 1, time: (step + 1) as f64 * dt });
        }
    }
    Ok(LabTrajectory { dt: dt * record_every as f64, positions, velocities })
}

/// Lock-in at `ref_freq`: `u + iv = LPF[2 x(t) e^{−i ref t}]` with a
/// single-pole filter of angular bandwidth `bandwidth`, started from zero.
pub fn demodulate(series: &[f64], dt: f64, ref_freq: f64, bandwidth: f64) -> Result<Vec<Complex64>> {
    if !(ref_freq > 0.0) || !(dt > 0.0) {
        return Err(KpoError::InvalidInput("reference frequency and step must be positive".into()));
    }
    if !(bandwidth > 0.0 && bandwidth < ref_freq / 5.0) {
        return Err(KpoError::InvalidInput(format!(
            "bandwidth {bandwidth} must lie in (0, ref/5 = {})",
            ref_freq / 5.0
        )));
    }
    let k = 1.0 - (-bandwidth * dt).exp();
    let mut y = Complex64::new(0.0, 0.0);
    Ok(series
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let mixed = 2.0 * x * Complex64::from_polar(1.0, -ref_freq * i as f64 * dt);
            y += k * (mixed - y);
            y
        })
        .collect())
}

/// Largest |Floquet multiplier| of the motion linearized about `x = 0`
/// over one drive period.
pub fn floquet_radius(lab: &LabParams, steps_per_period: usize) -> Result<f64> {
    lab.validate()?;
    let n = lab.n_sites();
    let period = 2.0 * std::f64::consts::PI / lab.drive_freq;
    let steps = steps_per_period.max(40);
    let dt = period / steps as f64;
    let linear = LabParams { duffing: vec![0.0; n], ..lab.clone() };
    let k = linear.stiffness();
    let mut mono = DMatrix::<f64>::zeros(2 * n, 2 * n);
    let (mut a1, mut a2, mut a3, mut a4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let (mut xt, mut vt, mut v2, mut v3) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for col in 0..2 * n {
        let mut s = DVector::<f64>::zeros(2 * n);
        s[col] = 1.0;
        let (mut x, mut v): (Vec<f64>, Vec<f64>) = (s.rows(0, n).iter().copied().collect(), s.rows(n, n).iter().copied().collect());
        for step in 0..steps {
            let t = step as f64 * dt;
            accel(&linear, &k, t, &x, &v, &mut a1);
            for j in 0..n {
                xt[j] = x[j] + 0.5 * dt * v[j];
                v2[j] = v[j] + 0.5 * dt * a1[j];
            }
            accel(&linear, &k, t + 0.5 * dt, &xt, &v2, &mut a2);
            for j in 0..n {
                xt[j] = x[j] + 0.5 * dt * v2[j];
                v3[j] = v[j] + 0.5 * dt * a2[j];
            }
            accel(&linear, &k, t + 0.5 * dt, &xt, &v3, &mut a3);
            for j in 0..n {
                xt[j] = x[j] + dt * v3[j];
                vt[j] = v[j] + dt * a3[j];
            }
            accel(&linear, &k, t + dt, &xt, &vt, &mut a4);
            for j in 0..n {
                x[j] += dt / 6.0 * (v[j] + 2.0 * v2[j] + 2.0 * v3[j] + vt[j]);
                v[j] += dt / 6.0 * (a1[j] + 2.0 * a2[j] + 2.0 * a3[j] + a4[j]);
            }
        }
        for j in 0..n {
            mono[(j, col)] = x[j];
            mono[(n + j, col)] = v[j];
        }
    }
    Ok(mono.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// Smallest homogeneous `λ` in `[lo, hi]` at which the origin loses
/// stability, by bisection on the Floquet radius.
pub fn floquet_threshold(lab: &LabParams, lo: f64, hi: f64, rel_tol: f64) -> Result<f64> {
    const STEPS: usize = 400;
    let unstable = |l: f64| floquet_radius(&lab.with_lambda(l), STEPS).map(|r| r > 1.0);
    if !(lo >= 0.0 && hi > lo) {
        return Err(KpoError::InvalidInput("need 0 <= lo < hi".into()));
    }
    if unstable(lo)? || !unstable(hi)? {
        return Err(KpoError::NonConvergence(format!("threshold not bracketed by [{lo}, {hi}]")));
    }
    let (mut a, mut b) = (lo, hi);
    while b - a > rel_tol * b {
        let m = 0.5 * (a + b);
        if unstable(m)? {
            b = m;
        } else {
            a = m;
        }
    }
    Ok(0.5 * (a + b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn single(lambda: f64, duffing: f64, gamma: f64, drive_freq: f64) -> LabParams {
        LabParams {
            omega: vec![1.0],
            lambda: vec![lambda],
            duffing: vec![duffing],
            coupling: DMatrix::zeros(1, 1),
            damping: vec![gamma],
            drive_freq,
            hbar: 1.0,
        }
    }

    #[test]
    fn parameter_map() {
        let p = NetworkParams::new(vec![1.0], vec![0.3], vec![0.1], 2.0, DMatrix::zeros(1, 1), vec![0.01]).unwrap();
        let lab = lab_params(&p, 1.0).unwrap();
        assert!((lab.lambda[0] - 0.4).abs() < 1e-15);
        assert!((lab.duffing[0] - 0.4).abs() < 1e-15);
        let p0 = NetworkParams::new(vec![1.0], vec![0.3], vec![0.0], 2.0, DMatrix::zeros(1, 1), vec![0.01]).unwrap();
        assert_eq!(lab_params(&p0, 1.0).unwrap().lambda[0], 0.0);
        assert!(lab_params(&p, 0.0).is_err());
    }

    #[test]
    fn damped_oscillator() {
        let gamma = 0.05;
        let lab = single(0.0, 0.0, gamma, 2.0);
        let dt = 2.0 * PI / 200.0;
        let tr = integrate_lab(&lab, &[1.0], &[0.0], dt, 200.0, 1).unwrap();
        let wd = (1.0 - gamma * gamma / 4.0_f64).sqrt();
        for (i, x) in tr.positions[0].iter().enumerate().step_by(97) {
            let t = i as f64 * dt;
            let exact = (-gamma * t / 2.0).exp() * ((wd * t).cos() + gamma / (2.0 * wd) * (wd * t).sin());
            assert!((x - exact).abs() < 1e-6, "t = {t}");
        }
        // energy never increases without modulation
        let e: Vec<f64> =
            tr.positions[0].iter().zip(&tr.velocities[0]).map(|(x, v)| 0.5 * (x * x + v * v)).collect();
        assert!(e.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn step_bound_enforced() {
        let lab = single(0.0, 0.0, 0.1, 2.0);
        assert!(matches!(
            integrate_lab(&lab, &[1.0], &[0.0], 0.2, 1.0, 1),
            Err(KpoError::StepTooLarge { .. })
        ));
    }

    #[test]
    fn lock_in_convention() {
        let (w, dt) = (1.0, 0.01);
        let n = 100_000;
        let cos: Vec<f64> = (0..n).map(|i| (w * i as f64 * dt).cos()).collect();
        let sin: Vec<f64> = (0..n).map(|i| (w * i as f64 * dt).sin()).collect();
        let bw = w / 50.0;
        // average out the 2·ref ripple over the last reference period
        let tail = (2.0 * PI / (w * dt)).round() as usize;
        let mean = |z: &[Complex64]| z[n - tail..].iter().sum::<Complex64>() / tail as f64;
        let zc = demodulate(&cos, dt, w, bw).unwrap();
        let zs = demodulate(&sin, dt, w, bw).unwrap();
        assert!((mean(&zc) - Complex64::new(1.0, 0.0)).norm() < 1e-3);
        assert!((mean(&zs) - Complex64::new(0.0, -1.0)).norm() < 1e-3);
        assert!((zc[n - 1] - Complex64::new(1.0, 0.0)).norm() < 0.02);
        assert!(demodulate(&cos, dt, w, w / 4.0).is_err());
    }

    #[test]
    fn floquet_threshold_matches_lobe() {
        // at Δ = 0 the lobe threshold G = γ/2 maps to λ = 2γ/ω
        let gamma = 1.0 / 233.0;
        let lab = single(0.0, 0.0, gamma, 2.0);
        let th = floquet_threshold(&lab, 0.0, 0.1, 1e-4).unwrap();
        assert!((th / (2.0 * gamma) - 1.0).abs() < 0.03, "{th}");
    }
}
