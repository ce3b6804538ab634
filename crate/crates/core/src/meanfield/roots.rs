//! Multi-start Newton with deflation.
//!
//! Each start runs Newton on the deflated residual
//! `M(x)·F(x)` with `M(x) = Π_r (‖x − r‖^{−p} + s)` over the roots `r`
//! already found, so converged starts can only land on new roots. The
//! deflated step is the undeflated Newton step rescaled by
//! `1 / (1 − ∇ln M · δ)`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::{
    amplitude_distance, amplitude_norm, characteristic_exponents, classify_state, drift_into, jacobian_with,
    to_complex, to_real, SteadyState,
};
use crate::error::{KpoError, Result};
use crate::model::NetworkParams;

/// Root-finder settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    /// Quasi-random starts in addition to the origin and the seeds.
    pub n_starts: usize,
    /// Residual tolerance, relative to `|V|·A³` with `A` the amplitude scale.
    pub residual_tol: f64,
    /// Duplicate merging distance in units of `√(G/V)`.
    pub merge_dist: f64,
    /// `stable ⇔ max Re μ < −margin`.
    pub stability_margin: f64,
    /// Relative tolerance for the symmetry labels.
    pub classify_tol: f64,
    pub max_iter: usize,
    /// Successive deflated solves attempted from one start.
    pub max_roots_per_start: usize,
    pub deflation_power: f64,
    pub deflation_shift: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            n_starts: 64,
            residual_tol: 1e-10,
            merge_dist: 1e-6,
            stability_margin: 1e-9,
            classify_tol: 1e-3,
            max_iter: 80,
            max_roots_per_start: 4,
            deflation_power: 2.0,
            deflation_shift: 1.0,
        }
    }
}

/// Finds the isolated mean-field steady states of `params`.
///
/// The origin is always among the results. Starts that fail to converge are
/// dropped silently. Each returned state is polished to the residual
/// tolerance and carries its exponents, stability flag and symmetry label.
pub fn find_steady_states(
    params: &NetworkParams,
    seeds: &[Vec<Complex64>],
    opts: &SolverOptions,
) -> Result<Vec<SteadyState>> {
    let solver = Solver::new(params, opts)?;
    let mut roots: Vec<DVector<f64>> = Vec::new();
    solver.add_root(&mut roots, DVector::zeros(2 * params.n_sites()));

    let mut starts: Vec<DVector<f64>> = Vec::new();
    starts.extend(seeds.iter().filter(|s| s.len() == params.n_sites()).map(|s| DVector::from_vec(to_real(s))));
    starts.extend(solver.quasi_random_starts());
    for x0 in &starts {
        solver.solve_from(&mut roots, x0);
    }
    Ok(solver.finish(roots))
}

/// Adds roots reachable from `seeds` to an existing set of steady states.
pub fn refine_with_seeds(
    params: &NetworkParams,
    existing: &[SteadyState],
    seeds: &[Vec<Complex64>],
    opts: &SolverOptions,
) -> Result<Vec<SteadyState>> {
    let solver = Solver::new(params, opts)?;
    let mut roots: Vec<DVector<f64>> = Vec::new();
    for s in existing {
        solver.add_root(&mut roots, DVector::from_vec(to_real(&s.amplitudes)));
    }
    if roots.is_empty() {
        solver.add_root(&mut roots, DVector::zeros(2 * params.n_sites()));
    }
    for s in seeds.iter().filter(|s| s.len() == params.n_sites()) {
        solver.solve_from(&mut roots, &DVector::from_vec(to_real(s)));
    }
    Ok(solver.finish(roots))
}

struct Solver<'a> {
    params: &'a NetworkParams,
    opts: &'a SolverOptions,
    detuning: Vec<f64>,
    /// `√(G/V)`, the unit of the merge distance.
    scale: f64,
    /// Radius of the start disk per site.
    radius: f64,
    res_unit: f64,
}

impl<'a> Solver<'a> {
    fn new(params: &'a NetworkParams, opts: &'a SolverOptions) -> Result<Self> {
        if params.kerr().iter().any(|v| *v == 0.0) {
            return Err(KpoError::InvalidParams("steady-state search needs nonzero Kerr coefficients".into()));
        }
        let detuning = params.detunings();
        let v_min = params.kerr().iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
        let v_max = params.kerr().iter().map(|v| v.abs()).fold(0.0, f64::max);
        let max_detuning = detuning.iter().map(|d| d.abs()).fold(0.0, f64::max);
        let max_row = params.coupling().row_iter().map(|r| r.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max);
        let scale = params.amplitude_scale();
        let radius = 2.0 * ((params.max_drive() + max_detuning + max_row) / v_min).sqrt().max(scale);
        let res_unit = v_max * radius.powi(3).max(1.0);
        Ok(Self { params, opts, detuning, scale, radius, res_unit })
    }

    fn residual(&self, x: &DVector<f64>) -> (DVector<f64>, f64) {
        let alpha = to_complex(x.as_slice());
        let mut f = vec![Complex64::new(0.0, 0.0); alpha.len()];
        drift_into(self.params, &self.detuning, &alpha, &mut f);
        let res = f.iter().map(|z| z.norm()).fold(0.0, f64::max);
        (DVector::from_vec(to_real(&f)), res)
    }

    fn jac(&self, x: &DVector<f64>) -> DMatrix<f64> {
        jacobian_with(self.params, &self.detuning, &to_complex(x.as_slice()))
    }

    fn tolerance(&self) -> f64 {
        self.opts.residual_tol * self.res_unit
    }

    fn quasi_random_starts(&self) -> Vec<DVector<f64>> {
        let n = self.params.n_sites();
        (1..=self.opts.n_starts)
            .map(|idx| {
                let mut x = DVector::zeros(2 * n);
                for j in 0..n {
                    let r = self.radius * halton(idx, PRIMES[(2 * j) % PRIMES.len()]).sqrt();
                    let th = std::f64::consts::TAU * halton(idx, PRIMES[(2 * j + 1) % PRIMES.len()]);
                    x[2 * j] = r * th.cos();
                    x[2 * j + 1] = r * th.sin();
                }
                x
            })
            .collect()
    }

    /// Runs repeated deflated solves from `x0`, recording new roots and their
    /// Z₂ partners.
    fn solve_from(&self, roots: &mut Vec<DVector<f64>>, x0: &DVector<f64>) {
        for _ in 0..self.opts.max_roots_per_start {
            match self.deflated_newton(roots, x0.clone()) {
                Some(r) => {
                    let partner = -&r;
                    if !self.add_root(roots, r) {
                        break;
                    }
                    if let Some(p) = self.polish(partner) {
                        self.add_root(roots, p);
                    }
                }
                None => break,
            }
        }
    }

    fn add_root(&self, roots: &mut Vec<DVector<f64>>, r: DVector<f64>) -> bool {
        let merge = self.opts.merge_dist * self.scale;
        if roots.iter().any(|q| (q - &r).norm() <= merge) {
            return false;
        }
        roots.push(r);
        true
    }

    fn deflated_newton(&self, roots: &[DVector<f64>], mut x: DVector<f64>) -> Option<DVector<f64>> {
        let p = self.opts.deflation_power;
        let shift = self.opts.deflation_shift;
        let bound = 10.0 * self.radius * (self.params.n_sites() as f64).sqrt();
        let step_unit = self.scale.max(1e-300);
        for _ in 0..self.opts.max_iter {
            let (f, res) = self.residual(&x);
            let lu = self.jac(&x).lu();
            let step = lu.solve(&(-&f))?;
            if res <= self.tolerance() || step.norm() <= 1e-13 * step_unit {
                let merge = self.opts.merge_dist * self.scale;
                if roots.iter().all(|q| (q - &x).norm() > merge) {
                    return self.polish(x);
                }
            }
            // ∇ln M · δ
            let mut grad_dot = 0.0;
            for r in roots {
                let d = &x - r;
                let dist2 = d.norm_squared().max(1e-300);
                let dist_p = dist2.powf(-p / 2.0);
                let m = dist_p + shift;
                grad_dot += -p * dist_p / dist2 * d.dot(&step) / m;
            }
            let denom = 1.0 - grad_dot;
            if !denom.is_finite() || denom.abs() < 1e-12 {
                return None;
            }
            let mut delta = step / denom;
            let cap = 0.5 * self.radius;
            let len = delta.norm();
            if len > cap {
                delta *= cap / len;
            }
            x += delta;
            if !x.iter().all(|v| v.is_finite()) || x.norm() > bound {
                return None;
            }
        }
        None
    }

    /// Plain Newton polish to the residual tolerance.
    fn polish(&self, mut x: DVector<f64>) -> Option<DVector<f64>> {
        for _ in 0..30 {
            let (f, res) = self.residual(&x);
            if res <= self.tolerance() {
                // one extra step drives the residual to rounding level
                if let Some(step) = self.jac(&x).lu().solve(&(-&f)) {
                    let y = &x + step;
                    if self.residual(&y).1 < res {
                        return Some(y);
                    }
                }
                return Some(x);
            }
            let step = self.jac(&x).lu().solve(&(-&f))?;
            x += step;
            if !x.iter().all(|v| v.is_finite()) {
                return None;
            }
        }
        None
    }

    fn finish(&self, roots: Vec<DVector<f64>>) -> Vec<SteadyState> {
        let mut states: Vec<SteadyState> = roots
            .into_iter()
            .filter_map(|x| {
                let (_, residual) = self.residual(&x);
                (residual <= self.tolerance()).then(|| self.describe(&x, residual))
            })
            .collect();
        states.sort_by(|a, b| {
            amplitude_norm(&a.amplitudes).total_cmp(&amplitude_norm(&b.amplitudes)).then_with(|| {
                to_real(&b.amplitudes)
                    .iter()
                    .zip(to_real(&a.amplitudes).iter())
                    .map(|(y, x)| x.total_cmp(y))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
        });
        // near-degenerate duplicates that slipped through polishing
        let merge = self.opts.merge_dist * self.scale;
        let mut out: Vec<SteadyState> = Vec::with_capacity(states.len());
        for s in states {
            if out.iter().all(|q| amplitude_distance(&q.amplitudes, &s.amplitudes) > merge) {
                out.push(s);
            }
        }
        out
    }

    fn describe(&self, x: &DVector<f64>, residual: f64) -> SteadyState {
        let alpha = to_complex(x.as_slice());
        let exponents = characteristic_exponents(&self.jac(x));
        let max_re = exponents.iter().map(|m| m.re).fold(f64::NEG_INFINITY, f64::max);
        SteadyState {
            symmetry: classify_state(&alpha, self.scale, self.opts.classify_tol),
            stable: max_re < -self.opts.stability_margin,
            exponents,
            amplitudes: alpha,
            residual,
        }
    }
}

const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

/// Radical inverse of `idx` in base `base`.
fn halton(mut idx: usize, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    let b = base as f64;
    while idx > 0 {
        f /= b;
        r += f * (idx as u64 % base) as f64;
        idx /= base as usize;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meanfield::{drift, jacobian, Symmetry};
    use approx::assert_abs_diff_eq;

    #[test]
    fn halton_sequence() {
        assert_eq!(halton(1, 2), 0.5);
        assert_eq!(halton(2, 2), 0.25);
        assert_eq!(halton(3, 2), 0.75);
        assert_abs_diff_eq!(halton(1, 3), 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(halton(4, 3), 1.0 / 9.0 + 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn below_threshold_only_origin() {
        let p = NetworkParams::identical(1, 0.0, 1.0, 0.04, 0.0, 0.1).unwrap();
        let states = find_steady_states(&p, &[], &SolverOptions::default()).unwrap();
        assert_eq!(states.len(), 1);
        assert_eq!(states[0].symmetry, Symmetry::Zero);
        assert!(states[0].stable);
    }

    #[test]
    fn weakly_damped_phase_states() {
        let (g, v) = (0.5, 1.0);
        let p = NetworkParams::identical(1, 0.0, v, g, 0.0, 1e-6).unwrap();
        let states = find_steady_states(&p, &[], &SolverOptions::default()).unwrap();
        assert_eq!(states.len(), 3);
        assert!(!states[0].stable);
        assert_eq!(states[0].norm(), 0.0);
        for s in &states[1..] {
            assert!(s.stable);
            assert_abs_diff_eq!(s.amplitudes[0].norm(), (g / v).sqrt(), epsilon = 1e-6);
        }
        assert!((states[1].amplitudes[0] + states[2].amplitudes[0]).norm() < 1e-12);
    }

    #[test]
    fn z2_partners_share_exponents() {
        let p = NetworkParams::identical(2, 0.3, 1.0, 0.6, -0.25, 0.1).unwrap();
        let states = find_steady_states(&p, &[], &SolverOptions::default()).unwrap();
        assert!(states.len() > 3);
        for s in &states {
            assert!(s.residual <= 1e-10);
            assert!(drift(&p, &s.amplitudes).iter().all(|z| z.norm() <= 1e-10));
            let neg: Vec<_> = s.amplitudes.iter().map(|a| -a).collect();
            let partner = states
                .iter()
                .find(|q| amplitude_distance(&q.amplitudes, &neg) < 1e-9)
                .expect("Z2 partner missing");
            for (a, b) in s.exponents.iter().zip(&partner.exponents) {
                assert!((a - b).norm() < 1e-9);
            }
            let top = characteristic_exponents(&jacobian(&p, &s.amplitudes))[0].re;
            if s.stable {
                assert!(top < -1e-9);
            } else {
                assert!(top > 1e-9);
            }
        }
    }

    #[test]
    fn linear_sites_are_rejected() {
        let p = NetworkParams::identical(1, 0.0, 0.0, 0.5, 0.0, 0.1).unwrap();
        assert!(find_steady_states(&p, &[], &SolverOptions::default()).is_err());
    }

    #[test]
    fn seeds_are_refined() {
        let p = NetworkParams::identical(1, 0.2, 1.0, 0.5, 0.0, 0.1).unwrap();
        let all = find_steady_states(&p, &[], &SolverOptions::default()).unwrap();
        let origin_only = vec![all[0].clone()];
        let seeds: Vec<Vec<Complex64>> = all.iter().map(|s| s.amplitudes.iter().map(|a| a * 1.01).collect()).collect();
        let refined = refine_with_seeds(&p, &origin_only, &seeds, &SolverOptions::default()).unwrap();
        assert_eq!(refined.len(), all.len());
    }
}
