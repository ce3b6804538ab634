use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::steady::QuantumSteadyState;
use crate::error::{KpoError, Result};
use crate::meanfield::SteadyState;

/// `ψ_0(x) … ψ_{n−1}(x)` for `x = (a + a†)/√2`, by the three-term recurrence
/// on the normalized functions.
pub fn hermite_functions(n: usize, x: f64) -> Vec<f64> {
    let mut psi = Vec::with_capacity(n);
    if n == 0 {
        return psi;
    }
    psi.push(std::f64::consts::PI.powf(-0.25) * (-0.5 * x * x).exp());
    if n > 1 {
        psi.push(std::f64::consts::SQRT_2 * x * psi[0]);
    }
    for k in 1..n.saturating_sub(1) {
        let kf = k as f64;
        let next = (2.0 / (kf + 1.0)).sqrt() * x * psi[k] - (kf / (kf + 1.0)).sqrt() * psi[k - 1];
        psi.push(next);
    }
    psi
}

/// `P(x_1, …, x_N) = ⟨x|ρ|x⟩` sampled on a product grid, row-major with
/// the first site slowest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureDistribution {
    pub axes: Vec<Vec<f64>>,
    pub p: Vec<f64>,
    /// Trapezoid integral over the grid.
    pub integral: f64,
}

impl QuadratureDistribution {
    pub fn at(&self, idx: &[usize]) -> f64 {
        let flat = idx.iter().zip(&self.axes).fold(0, |acc, (i, a)| acc * a.len() + i);
        self.p[flat]
    }
}

/// Evaluates the joint quadrature distribution of `state` on `axes`.
///
/// Fails with `GridTooSmall` when more than `1e-3` of the probability lies
/// outside the grid.
pub fn quadrature_distribution(state: &QuantumSteadyState, axes: &[Vec<f64>]) -> Result<QuadratureDistribution> {
    let space = state.space;
    if axes.len() != space.n_sites {
        return Err(KpoError::LengthMismatch { expected: space.n_sites, got: axes.len() });
    }
    for a in axes {
        if a.len() < 2 || a.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(KpoError::InvalidInput("quadrature axes must be increasing with >= 2 points".into()));
        }
    }
    let tables: Vec<Vec<Vec<f64>>> =
        axes.iter().map(|a| a.iter().map(|&x| hermite_functions(space.n_max, x)).collect()).collect();
    let mut p = Vec::with_capacity(axes.iter().map(|a| a.len()).product());
    contract(&state.rho, space.n_max, &tables, &mut p);
    let weights: Vec<Vec<f64>> = axes.iter().map(|a| trapezoid_weights(a)).collect();
    let mut integral = 0.0;
    for (flat, v) in p.iter().enumerate() {
        let mut rem = flat;
        let mut w = 1.0;
        for k in (0..axes.len()).rev() {
            w *= weights[k][rem % axes[k].len()];
            rem /= axes[k].len();
        }
        integral += w * v;
    }
    let mass_outside = 1.0 - integral;
    if mass_outside > 1e-3 {
        return Err(KpoError::GridTooSmall { mass_outside });
    }
    Ok(QuadratureDistribution { axes: axes.to_vec(), p, integral })
}

fn trapezoid_weights(a: &[f64]) -> Vec<f64> {
    let n = a.len();
    (0..n)
        .map(|i| {
            let left = if i > 0 { a[i] - a[i - 1] } else { 0.0 };
            let right = if i + 1 < n { a[i + 1] - a[i] } else { 0.0 };
            0.5 * (left + right)
        })
        .collect()
}

/// Contracts the most significant site against each grid point and recurses.
fn contract(rho: &DMatrix<Complex64>, n_max: usize, tables: &[Vec<Vec<f64>>], out: &mut Vec<f64>) {
    let inner = rho.nrows() / n_max;
    for psi in &tables[0] {
        if tables.len() == 1 {
            let mut v = 0.0;
            for m in 0..n_max {
                for mp in 0..n_max {
                    v += psi[m] * psi[mp] * rho[(m, mp)].re;
                }
            }
            out.push(v);
        } else {
            let mut b = DMatrix::<Complex64>::zeros(inner, inner);
            for m in 0..n_max {
                for mp in 0..n_max {
                    let w = psi[m] * psi[mp];
                    if w == 0.0 {
                        continue;
                    }
                    b += rho.view((m * inner, mp * inner), (inner, inner)) * Complex64::new(w, 0.0);
                }
            }
            contract(&b, n_max, &tables[1..], out);
        }
    }
}

/// Strict local maxima of a two-site distribution that exceed a fraction
/// `rel_floor` of the global maximum, as `(x_1, x_2, P)`.
pub fn local_maxima(dist: &QuadratureDistribution, rel_floor: f64) -> Vec<(f64, f64, f64)> {
    if dist.axes.len() != 2 {
        return Vec::new();
    }
    let (n1, n2) = (dist.axes[0].len(), dist.axes[1].len());
    let top = dist.p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = Vec::new();
    for i in 1..n1.saturating_sub(1) {
        for j in 1..n2.saturating_sub(1) {
            let v = dist.at(&[i, j]);
            if v < rel_floor * top {
                continue;
            }
            let is_max = (-1i64..=1).all(|di| {
                (-1i64..=1).all(|dj| {
                    (di == 0 && dj == 0) || v > dist.at(&[(i as i64 + di) as usize, (j as i64 + dj) as usize])
                })
            });
            if is_max {
                out.push((dist.axes[0][i], dist.axes[1][j], v));
            }
        }
    }
    out
}

/// Symmetric uniform axes spanning `±(√2·max_amplitude + 4)`.
pub fn default_axes(n_sites: usize, max_amplitude: f64, n_points: usize) -> Vec<Vec<f64>> {
    let ext = std::f64::consts::SQRT_2 * max_amplitude + 4.0;
    let n = n_points.max(3);
    let axis: Vec<f64> = (0..n).map(|i| -ext + 2.0 * ext * i as f64 / (n - 1) as f64).collect();
    vec![axis; n_sites]
}

/// Stable mean-field states mapped to the quadrature plane,
/// `(x_1, x_2) = √2 (Re α_1, Re α_2)`.
pub fn mean_field_points(states: &[SteadyState]) -> Vec<(f64, f64)> {
    states
        .iter()
        .filter(|s| s.stable && s.amplitudes.len() == 2)
        .map(|s| (std::f64::consts::SQRT_2 * s.amplitudes[0].re, std::f64::consts::SQRT_2 * s.amplitudes[1].re))
        .collect()
}

/// Nearest-neighbour distances between distribution maxima and
/// mean-field points, in both directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub maxima: Vec<(f64, f64, f64)>,
    pub points: Vec<(f64, f64)>,
    pub maximum_to_point: Vec<f64>,
    pub point_to_maximum: Vec<f64>,
}

impl Correspondence {
    pub fn new(maxima: Vec<(f64, f64, f64)>, points: Vec<(f64, f64)>) -> Self {
        let dist = |a: (f64, f64), b: (f64, f64)| (a.0 - b.0).hypot(a.1 - b.1);
        let nearest = |p: (f64, f64), set: &mut dyn Iterator<Item = (f64, f64)>| {
            set.map(|q| dist(p, q)).fold(f64::INFINITY, f64::min)
        };
        let maximum_to_point =
            maxima.iter().map(|m| nearest((m.0, m.1), &mut points.iter().copied())).collect();
        let point_to_maximum =
            points.iter().map(|&p| nearest(p, &mut maxima.iter().map(|m| (m.0, m.1)))).collect();
        Self { maxima, points, maximum_to_point, point_to_maximum }
    }

    /// Every maximum has a point within `radius` and vice versa.
    pub fn holds(&self, radius: f64) -> bool {
        !self.maxima.is_empty()
            && self.maximum_to_point.iter().chain(&self.point_to_maximum).all(|d| *d <= radius)
    }
}
