//! Mean-field steady states of the rotating-frame equations of motion
//!
//! ```text
//! α̇_j = i(Δ_j α_j − V_j |α_j|² α_j + G_j α_j* − Σ_k J_jk α_k) − (γ_j/2) α_j
//! ```
//!
//! together with their linear stability, symmetry classification,
//! bifurcation sweeps and Δ–G phase diagrams.

mod phase;
mod roots;
mod sweep;

pub use phase::{phase_diagram, PhaseCell, PhaseColor, PhaseDiagram};
pub use roots::{find_steady_states, refine_with_seeds, SolverOptions};
pub use sweep::{bifurcation_sweep, BifurcationSweep, BranchPoint, SweepAxis, SweepOptions};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::model::NetworkParams;

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Symmetry label of an N = 2 steady state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Symmetry {
    /// Zero amplitude.
    Zero,
    /// Symmetric, `α₁ = α₂`.
    S,
    /// Antisymmetric, `α₁ = −α₂`.
    A,
    /// Mixed symmetry.
    M,
}

impl Symmetry {
    pub fn as_str(self) -> &'static str {
        match self {
            Symmetry::Zero => "0",
            Symmetry::S => "S",
            Symmetry::A => "A",
            Symmetry::M => "M",
        }
    }
}

/// One mean-field fixed point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyState {
    pub amplitudes: Vec<Complex64>,
    pub stable: bool,
    /// Eigenvalues of the real Jacobian, sorted by (Re desc, Im asc).
    pub exponents: Vec<Complex64>,
    pub symmetry: Symmetry,
    /// `max_j |α̇_j|` at the fixed point.
    pub residual: f64,
}

impl SteadyState {
    pub fn max_re_exponent(&self) -> f64 {
        self.exponents.iter().map(|m| m.re).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn norm(&self) -> f64 {
        amplitude_norm(&self.amplitudes)
    }
}

/// Deterministic part of the equations of motion.
pub fn drift(params: &NetworkParams, alpha: &[Complex64]) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); alpha.len()];
    drift_into(params, &params.detunings(), alpha, &mut out);
    out
}

/// Allocation-free drift with precomputed detunings.
pub(crate) fn drift_into(params: &NetworkParams, detuning: &[f64], alpha: &[Complex64], out: &mut [Complex64]) {
    let n = alpha.len();
    let kerr = params.kerr();
    let drive = params.drive();
    let damping = params.damping();
    let coupling = params.coupling();
    for j in 0..n {
        let a = alpha[j];
        let mut hop = Complex64::new(0.0, 0.0);
        for k in 0..n {
            if k != j {
                hop += coupling[(j, k)] * alpha[k];
            }
        }
        let inner = detuning[j] * a - kerr[j] * a.norm_sqr() * a + drive[j] * a.conj() - hop;
        out[j] = I * inner - 0.5 * damping[j] * a;
    }
}

/// Drift as a real vector ordered (Re α₁, Im α₁, Re α₂, …).
pub fn drift_real(params: &NetworkParams, x: &DVector<f64>) -> DVector<f64> {
    let alpha = to_complex(x.as_slice());
    let f = drift(params, &alpha);
    DVector::from_vec(to_real(&f))
}

/// Real Jacobian `∂(Re α̇, Im α̇)/∂(Re α, Im α)` with interleaved ordering.
pub fn jacobian(params: &NetworkParams, alpha: &[Complex64]) -> DMatrix<f64> {
    jacobian_with(params, &params.detunings(), alpha)
}

pub(crate) fn jacobian_with(params: &NetworkParams, detuning: &[f64], alpha: &[Complex64]) -> DMatrix<f64> {
    let n = alpha.len();
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    let coupling = params.coupling();
    for j in 0..n {
        let a = alpha[j];
        // Wirtinger derivatives of f_j with respect to α_j and α_j*.
        let d_a = I * (detuning[j] - 2.0 * params.kerr()[j] * a.norm_sqr()) - 0.5 * params.damping()[j];
        let d_conj = I * (params.drive()[j] - params.kerr()[j] * a * a);
        set_block(&mut m, j, j, d_a, d_conj);
        for k in 0..n {
            if k != j && coupling[(j, k)] != 0.0 {
                set_block(&mut m, j, k, -I * coupling[(j, k)], Complex64::new(0.0, 0.0));
            }
        }
    }
    m
}

/// Writes the real 2×2 block of `f = d_a·δα + d_conj·δα*`.
fn set_block(m: &mut DMatrix<f64>, j: usize, k: usize, d_a: Complex64, d_conj: Complex64) {
    let dx = d_a + d_conj;
    let dy = I * (d_a - d_conj);
    m[(2 * j, 2 * k)] = dx.re;
    m[(2 * j + 1, 2 * k)] = dx.im;
    m[(2 * j, 2 * k + 1)] = dy.re;
    m[(2 * j + 1, 2 * k + 1)] = dy.im;
}

/// Eigenvalues of a real Jacobian sorted by (Re desc, Im asc).
pub fn characteristic_exponents(m: &DMatrix<f64>) -> Vec<Complex64> {
    let mut mu: Vec<Complex64> = m.clone().complex_eigenvalues().iter().copied().collect();
    sort_exponents(&mut mu);
    mu
}

pub(crate) fn sort_exponents(mu: &mut [Complex64]) {
    mu.sort_by(|a, b| b.re.total_cmp(&a.re).then(a.im.total_cmp(&b.im)));
}

/// Symmetry label with relative tolerance `tol`; `scale` is the amplitude
/// scale `√(G/V)` below which a state counts as zero.
///
/// A nonzero single site counts as S. Only N = 2 states receive A labels;
/// larger networks are Zero or M.
pub fn classify_state(alpha: &[Complex64], scale: f64, tol: f64) -> Symmetry {
    let max_abs = alpha.iter().map(|a| a.norm()).fold(0.0, f64::max);
    if max_abs < tol * scale {
        return Symmetry::Zero;
    }
    match alpha.len() {
        1 => return Symmetry::S,
        2 => {}
        _ => return Symmetry::M,
    }
    let sum = (alpha[0] + alpha[1]).norm();
    let diff = (alpha[0] - alpha[1]).norm();
    if diff < tol * sum {
        Symmetry::S
    } else if sum < tol * diff {
        Symmetry::A
    } else {
        Symmetry::M
    }
}

pub fn to_real(alpha: &[Complex64]) -> Vec<f64> {
    alpha.iter().flat_map(|a| [a.re, a.im]).collect()
}

pub fn to_complex(x: &[f64]) -> Vec<Complex64> {
    x.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect()
}

pub(crate) fn amplitude_norm(alpha: &[Complex64]) -> f64 {
    alpha.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
}

pub(crate) fn amplitude_distance(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt()
}
