//! Lindblad steady states of small networks on truncated Fock spaces,
//! quadrature distributions and cat states. ħ = 1.

mod cat;
mod fock;
mod krylov;
mod liouvillian;
mod quadrature;
mod steady;

pub use cat::{cat_state, coherent_state, ensemble_mean_amplitude, CatState, EnsembleStats, Parity};
pub use fock::{effective_hamiltonian, Csr, FockSpace};
pub use liouvillian::{build_liouvillian, propagate, Liouvillian};
pub use quadrature::{
    default_axes, hermite_functions, local_maxima, mean_field_points, quadrature_distribution, Correspondence,
    QuadratureDistribution,
};
pub use steady::{
    initial_cutoff, solve_lindblad, steady_state, LindbladRun, QuantumOptions, QuantumSteadyState, SolveMethod,
    SteadyOptions,
};

pub(crate) fn max_abs(m: &nalgebra::DMatrix<crate::Complex64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}
