use super::max_abs;
use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;
use log::warn;
use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::fock::FockSpace;
use super::krylov::krylov_steady_state;
use super::liouvillian::{build_liouvillian, propagate, Liouvillian};
use crate::error::{KpoError, Result};
use crate::model::NetworkParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyOptions {
    /// Largest number of unknowns solved by sparse factorization.
    pub direct_limit: usize,
    /// GMRES iteration budget above the direct limit; `0` goes straight to
    /// propagation.
    pub krylov_iter: usize,
    /// Required `‖L ρ‖` (Frobenius).
    pub residual_tol: f64,
    /// Propagation length in units of `1/γ_min` for the fallback.
    pub propagation_time: f64,
    /// Largest dimension for which the spectrum of ρ is computed.
    pub eigen_limit: usize,
}

impl Default for SteadyOptions {
    fn default() -> Self {
        Self { direct_limit: 6000, krylov_iter: 3000, residual_tol: 1e-9, propagation_time: 50.0, eigen_limit: 2048 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    Direct,
    Krylov,
    Propagation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantumSteadyState {
    pub space: FockSpace,
    #[serde(skip)]
    pub rho: DMatrix<Complex64>,
    pub mean_amplitudes: Vec<Complex64>,
    pub mean_photons: Vec<f64>,
    /// Largest population of a site's top Fock level.
    pub leakage: f64,
    pub trace: Complex64,
    /// `max |ρ − ρ†|`.
    pub hermiticity_error: f64,
    /// Smallest eigenvalue of the Hermitian part, when computed.
    pub min_eigenvalue: Option<f64>,
    /// `‖L ρ‖` in the Frobenius norm.
    pub residual: f64,
    /// `‖[ρ, P]‖` for the total photon parity `P`.
    pub parity_commutator: f64,
    pub method: SolveMethod,
}

/// Steady state of `l`: direct sparse solve with the trace condition in
/// place of one equation, or long-time propagation above the size limit.
pub fn steady_state(l: &Liouvillian, opts: &SteadyOptions) -> Result<QuantumSteadyState> {
    if !(l.min_damping > 0.0) {
        return Err(KpoError::DegenerateSteadyState(
            "every site needs positive damping for a unique steady state".into(),
        ));
    }
    let (x, method) = if l.n_unknowns() <= opts.direct_limit {
        (direct_solve(l)?, SolveMethod::Direct)
    } else {
        let krylov = if opts.krylov_iter > 0 {
            match krylov_steady_state(l, 1e-13, opts.krylov_iter) {
                Ok(x) => Some(x),
                Err(e) => {
                    warn!("{e}; falling back to propagation");
                    None
                }
            }
        } else {
            None
        };
        match krylov {
            Some(x) => (x, SolveMethod::Krylov),
            None => {
                let mut x0 = vec![Complex64::new(0.0, 0.0); l.n_unknowns()];
                x0[l.unknown(0, 0).expect("vacuum element is always kept")] = Complex64::new(1.0, 0.0);
                let t = opts.propagation_time / l.min_damping;
                (propagate(l, &x0, t, 1e-10, 1e-14)?, SolveMethod::Propagation)
            }
        }
    };
    let x = hermitize(l, x);
    let residual = frobenius(&l.apply(&x));
    if !residual.is_finite() {
        return Err(KpoError::DegenerateSteadyState("steady-state solve produced non-finite values".into()));
    }
    if residual > opts.residual_tol {
        let msg = format!("Liouvillian residual {residual:e} exceeds {:e}", opts.residual_tol);
        return Err(match method {
            SolveMethod::Direct => KpoError::DegenerateSteadyState(msg),
            SolveMethod::Krylov | SolveMethod::Propagation => KpoError::NonConvergence(msg),
        });
    }
    Ok(observables(l, &x, residual, method, opts))
}

/// `(ρ + ρ†)/2` normalized to unit trace.
fn hermitize(l: &Liouvillian, x: Vec<Complex64>) -> Vec<Complex64> {
    let mut out: Vec<Complex64> = (0..x.len())
        .map(|k| {
            let (i, j) = l.pair(k);
            let t = l.unknown(j, i).expect("the kept set is closed under transposition");
            0.5 * (x[k] + x[t].conj())
        })
        .collect();
    let tr: Complex64 = (0..l.space.dim).filter_map(|k| l.unknown(k, k)).map(|u| out[u]).sum();
    out.iter_mut().for_each(|z| *z /= tr);
    out
}

fn frobenius(x: &[Complex64]) -> f64 {
    x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn direct_solve(l: &Liouvillian) -> Result<Vec<Complex64>> {
    let n = l.n_unknowns();
    let r0 = l.unknown(0, 0).expect("vacuum element is always kept");
    let mut trip: Vec<Triplet<usize, usize, Complex64>> = Vec::with_capacity(l.matrix.nnz() + l.space.dim);
    for i in 0..n {
        if i == r0 {
            continue;
        }
        trip.extend(l.matrix.row(i).map(|(c, v)| Triplet::new(i, c, v)));
    }
    for k in 0..l.space.dim {
        if let Some(u) = l.unknown(k, k) {
            trip.push(Triplet::new(r0, u, Complex64::new(1.0, 0.0)));
        }
    }
    let a = SparseColMat::<usize, Complex64>::try_new_from_triplets(n, n, &trip)
        .map_err(|e| KpoError::NonConvergence(format!("sparse assembly failed: {e:?}")))?;
    let lu = a.sp_lu().map_err(|e| KpoError::DegenerateSteadyState(format!("factorization failed: {e:?}")))?;
    let mut rhs = Mat::<Complex64>::zeros(n, 1);
    rhs[(r0, 0)] = Complex64::new(1.0, 0.0);
    let mut x = rhs.clone();
    lu.solve_in_place(x.as_mut());
    // one step of iterative refinement against the assembled system
    let mut r = rhs.clone();
    for t in &trip {
        r[(t.row, 0)] -= t.val * x[(t.col, 0)];
    }
    lu.solve_in_place(r.as_mut());
    for i in 0..n {
        x[(i, 0)] += r[(i, 0)];
    }
    let out: Vec<Complex64> = (0..n).map(|i| x[(i, 0)]).collect();
    if out.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
        return Err(KpoError::DegenerateSteadyState("singular system: the steady state is not unique".into()));
    }
    Ok(out)
}

fn observables(l: &Liouvillian, x: &[Complex64], residual: f64, method: SolveMethod, opts: &SteadyOptions) -> QuantumSteadyState {
    let space = l.space;
    let rho = l.to_density(x);
    let d = space.dim;
    let trace = rho.trace();
    let mut mean_amplitudes = vec![Complex64::new(0.0, 0.0); space.n_sites];
    let mut mean_photons = vec![0.0; space.n_sites];
    let mut top = vec![0.0; space.n_sites];
    for k in 0..d {
        for j in 0..space.n_sites {
            let n = space.occupation(k, j);
            mean_photons[j] += n as f64 * rho[(k, k)].re;
            if n + 1 == space.n_max {
                top[j] += rho[(k, k)].re;
            }
            if n >= 1 {
                // tr(ρ a) = Σ √n_j ρ_{k, k−e_j}
                mean_amplitudes[j] += (n as f64).sqrt() * rho[(k, k - space.stride(j))];
            }
        }
    }
    let hermiticity_error = max_abs(&(&rho - rho.adjoint()));
    let min_eigenvalue = (d <= opts.eigen_limit).then(|| {
        let herm = (&rho + rho.adjoint()) * Complex64::new(0.5, 0.0);
        herm.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
    });
    let parity: Vec<usize> = (0..d).map(|k| space.parity(k)).collect();
    let mut off = 0.0;
    for i in 0..d {
        for j in 0..d {
            if parity[i] != parity[j] {
                off += rho[(i, j)].norm_sqr();
            }
        }
    }
    QuantumSteadyState {
        space,
        mean_amplitudes,
        mean_photons,
        leakage: top.iter().copied().fold(0.0, f64::max),
        trace,
        hermiticity_error,
        min_eigenvalue,
        residual,
        parity_commutator: 2.0 * off.sqrt(),
        method,
        rho,
    }
}

/// Cutoff selection and acceptance thresholds for [`solve_lindblad`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantumOptions {
    /// Fixed cutoff; `None` starts at `ceil(3·G/V + 8)`.
    pub n_max: Option<usize>,
    /// Give up above this cutoff.
    pub n_max_limit: usize,
    pub n_max_step: usize,
    /// Accepted relative change of `⟨n_j⟩` between cutoffs.
    pub convergence_tol: f64,
    pub leakage_tol: f64,
    pub parity_reduce: bool,
    pub steady: SteadyOptions,
}

impl Default for QuantumOptions {
    fn default() -> Self {
        Self {
            n_max: None,
            n_max_limit: 40,
            n_max_step: 4,
            convergence_tol: 1e-4,
            leakage_tol: 1e-6,
            parity_reduce: true,
            steady: SteadyOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LindbladRun {
    pub state: QuantumSteadyState,
    pub n_max: usize,
    /// Relative change of the photon numbers at cutoff `n_max + step`.
    pub photon_change: f64,
    pub warnings: Vec<String>,
}

/// Starting cutoff `ceil(3·G/V + 8)`.
pub fn initial_cutoff(params: &NetworkParams) -> usize {
    let ratio = params.min_kerr().map_or(0.0, |v| params.max_drive() / v);
    (3.0 * ratio + 8.0).ceil() as usize
}

/// Steady state with the cutoff raised until the photon numbers settle and
/// the top Fock level is empty.
pub fn solve_lindblad(params: &NetworkParams, opts: &QuantumOptions) -> Result<LindbladRun> {
    let n = params.n_sites();
    let solve = |n_max: usize| -> Result<(QuantumSteadyState, Vec<String>)> {
        let space = FockSpace::new(n, n_max)?;
        let l = build_liouvillian(params, &space, opts.parity_reduce)?;
        let s = steady_state(&l, &opts.steady)?;
        Ok((s, l.warnings))
    };
    let change = |a: &QuantumSteadyState, b: &QuantumSteadyState| {
        a.mean_photons
            .iter()
            .zip(&b.mean_photons)
            .map(|(x, y)| {
                let d = (x - y).abs();
                if d < 1e-14 {
                    0.0
                } else {
                    d / y.abs().max(1e-12)
                }
            })
            .fold(0.0, f64::max)
    };
    let mut n_max = opts.n_max.unwrap_or_else(|| initial_cutoff(params)).max(2);
    let (mut cur, mut warnings) = solve(n_max)?;
    loop {
        let next_n = n_max + opts.n_max_step;
        let (next, _) = solve(next_n)?;
        let photon_change = change(&cur, &next);
        if photon_change < opts.convergence_tol && cur.leakage < opts.leakage_tol {
            return Ok(LindbladRun { state: cur, n_max, photon_change, warnings });
        }
        if opts.n_max.is_some() || next_n + opts.n_max_step > opts.n_max_limit {
            let msg = format!(
                "cutoff {n_max}: photon numbers change by {photon_change:e} at {next_n}, leakage {:e}",
                cur.leakage
            );
            warn!("{msg}");
            return Err(KpoError::CutoffTooSmall(msg));
        }
        n_max = next_n;
        cur = next;
        warnings.clear();
    }
}
