//! Coupled Kerr parametric oscillator networks: mean-field steady states,
//! linear fluctuation spectra, Langevin simulation, Lindblad steady states
//! and a lab-frame integrator.
//!
//! Rates and frequencies are angular and ħ = 1 throughout.

pub mod error;
pub mod fluctuations;
pub mod labframe;
pub mod langevin;
pub mod meanfield;
pub mod model;
pub mod quantum;

pub use error::{KpoError, Result};
pub use model::NetworkParams;
pub use num_complex::Complex64;
