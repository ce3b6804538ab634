//! Network parameters, normal-mode analysis, parametric instability
//! thresholds and the experiment calibration formulas.
//!
//! All rates and frequencies are angular (rad/s, or rad per unit time in
//! dimensionless runs). Dimensionless runs conventionally measure every rate
//! in units of the Kerr coefficient `V`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{KpoError, Result};

/// Relative asymmetry of the coupling matrix tolerated before rejecting it.
const COUPLING_SYMMETRY_TOL: f64 = 1e-12;

/// Model constants of a coupled KPO network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    omega: Vec<f64>,
    kerr: Vec<f64>,
    drive: Vec<f64>,
    drive_freq: f64,
    coupling: DMatrix<f64>,
    damping: Vec<f64>,
}

impl NetworkParams {
    /// Validates and builds a parameter set.
    ///
    /// The coupling matrix must have an exactly zero diagonal; tiny
    /// asymmetries (relative `1e-12`) are symmetrized, larger ones rejected.
    pub fn new(
        omega: Vec<f64>,
        kerr: Vec<f64>,
        drive: Vec<f64>,
        drive_freq: f64,
        coupling: DMatrix<f64>,
        damping: Vec<f64>,
    ) -> Result<Self> {
        let n = omega.len();
        if n == 0 {
            return Err(KpoError::InvalidParams("network needs at least one site".into()));
        }
        for (name, v) in [("kerr", &kerr), ("drive", &drive), ("damping", &damping)] {
            if v.len() != n {
                return Err(KpoError::InvalidParams(format!(
                    "{name} has {} entries, expected {n}",
                    v.len()
                )));
            }
        }
        if coupling.nrows() != n || coupling.ncols() != n {
            return Err(KpoError::InvalidParams(format!(
                "coupling is {}x{}, expected {n}x{n}",
                coupling.nrows(),
                coupling.ncols()
            )));
        }
        let all_finite = omega
            .iter()
            .chain(&kerr)
            .chain(&drive)
            .chain(&damping)
            .chain(coupling.iter())
            .all(|x| x.is_finite())
            && drive_freq.is_finite();
        if !all_finite {
            return Err(KpoError::InvalidParams("non-finite parameter".into()));
        }
        if let Some(g) = damping.iter().find(|g| **g < 0.0) {
            return Err(KpoError::InvalidParams(format!("negative damping {g}")));
        }
        if let Some(g) = drive.iter().find(|g| **g < 0.0) {
            return Err(KpoError::InvalidParams(format!(
                "negative drive {g}; absorb the drive phase into the amplitudes"
            )));
        }
        for j in 0..n {
            if coupling[(j, j)] != 0.0 {
                return Err(KpoError::InvalidParams(format!(
                    "coupling diagonal J[{j}][{j}] = {} must be zero",
                    coupling[(j, j)]
                )));
            }
        }
        let scale = coupling.amax().max(f64::MIN_POSITIVE);
        let asym = (&coupling - coupling.transpose()).amax();
        if asym > COUPLING_SYMMETRY_TOL * scale {
            return Err(KpoError::InvalidParams(format!(
                "coupling matrix is not symmetric (max asymmetry {asym:e})"
            )));
        }
        let coupling = (&coupling + coupling.transpose()) * 0.5;
        Ok(Self { omega, kerr, drive, drive_freq, coupling, damping })
    }

    /// Rotating-frame parametrization: sites are specified directly by their
    /// detunings. The natural frequencies are set to `-Δ_j - V_j` with a
    /// zero drive frequency so that [`detunings`] reproduces `Δ_j`.
    pub fn from_detunings(
        detuning: &[f64],
        kerr: &[f64],
        drive: &[f64],
        coupling: DMatrix<f64>,
        damping: &[f64],
    ) -> Result<Self> {
        if kerr.len() != detuning.len() {
            return Err(KpoError::LengthMismatch { expected: detuning.len(), got: kerr.len() });
        }
        let omega = detuning.iter().zip(kerr).map(|(d, v)| -d - v).collect();
        Self::new(omega, kerr.to_vec(), drive.to_vec(), 0.0, coupling, damping.to_vec())
    }

    /// `n` identical, all-to-all coupled sites in the rotating-frame
    /// parametrization.
    pub fn identical(n: usize, detuning: f64, kerr: f64, drive: f64, coupling: f64, damping: f64) -> Result<Self> {
        let j = DMatrix::from_fn(n, n, |r, c| if r == c { 0.0 } else { coupling });
        Self::from_detunings(&vec![detuning; n], &vec![kerr; n], &vec![drive; n], j, &vec![damping; n])
    }

    pub fn n_sites(&self) -> usize {
        self.omega.len()
    }
    pub fn omega(&self) -> &[f64] {
        &self.omega
    }
    pub fn kerr(&self) -> &[f64] {
        &self.kerr
    }
    pub fn drive(&self) -> &[f64] {
        &self.drive
    }
    pub fn drive_freq(&self) -> f64 {
        self.drive_freq
    }
    pub fn coupling(&self) -> &DMatrix<f64> {
        &self.coupling
    }
    pub fn damping(&self) -> &[f64] {
        &self.damping
    }

    /// Linear detunings `Δ_j = ω_G/2 − ω_j − V_j`.
    pub fn detunings(&self) -> Vec<f64> {
        detunings(&self.omega, &self.kerr, self.drive_freq)
    }

    /// Same network at a different drive frequency.
    pub fn with_drive_freq(&self, drive_freq: f64) -> Self {
        Self { drive_freq, ..self.clone() }
    }

    /// Shifts the drive frequency so that site 0 sits at detuning `delta`.
    /// All other detunings move by the same amount.
    pub fn with_detuning(&self, delta: f64) -> Self {
        self.with_drive_freq(2.0 * (delta + self.omega[0] + self.kerr[0]))
    }

    /// Same network with every drive amplitude replaced by `g`.
    pub fn with_drive(&self, g: f64) -> Self {
        Self { drive: vec![g; self.n_sites()], ..self.clone() }
    }

    /// Largest drive amplitude, used as the amplitude scale `√(G/V)`.
    pub fn max_drive(&self) -> f64 {
        self.drive.iter().fold(0.0_f64, |m, g| m.max(g.abs()))
    }

    /// Smallest nonzero Kerr magnitude; `None` if every site is linear.
    pub fn min_kerr(&self) -> Option<f64> {
        self.kerr.iter().map(|v| v.abs()).filter(|v| *v > 0.0).reduce(f64::min)
    }

    /// Kerr saturation amplitude `√(G/V)` of the strongest drive, or 1 when it
    /// is undefined (no drive or no Kerr term).
    pub fn amplitude_scale(&self) -> f64 {
        match self.min_kerr() {
            Some(v) if self.max_drive() > 0.0 => (self.max_drive() / v).sqrt(),
            _ => 1.0,
        }
    }
}

/// `Δ_j = ω_G/2 − ω_j − V_j` elementwise.
pub fn detunings(omega: &[f64], kerr: &[f64], drive_freq: f64) -> Vec<f64> {
    omega.iter().zip(kerr).map(|(w, v)| drive_freq / 2.0 - w - v).collect()
}

/// Normal modes of the linear, undriven network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalModeBasis {
    /// `Δ̃_k`, ascending.
    pub eigen_detunings: Vec<f64>,
    /// Column `k` holds the site amplitudes of mode `k`: `b = Uᵀ a`.
    pub transform: DMatrix<f64>,
    /// `G̃ = Uᵀ diag(G) U`; empty until [`normal_mode_drives`] fills it.
    pub mode_drives: DMatrix<f64>,
}

/// Diagonalizes the single-particle matrix `−diag(Δ) + J`.
///
/// Eigenvectors are ordered by ascending `Δ̃_k = −eigenvalue` and signed so
/// that their largest-magnitude component is positive.
pub fn normal_mode_basis(detunings: &[f64], coupling: &DMatrix<f64>) -> NormalModeBasis {
    let n = detunings.len();
    let mut h = coupling.clone();
    for j in 0..n {
        h[(j, j)] = -detunings[j];
    }
    let SymmetricEigen { eigenvalues, eigenvectors } = h.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| (-eigenvalues[a]).total_cmp(&(-eigenvalues[b])));

    let mut transform = DMatrix::zeros(n, n);
    let mut eigen_detunings = Vec::with_capacity(n);
    for (k, &src) in order.iter().enumerate() {
        let mut col: DVector<f64> = eigenvectors.column(src).into_owned();
        let pivot = col.iter().copied().fold(0.0_f64, |best, x| if x.abs() > best.abs() + 1e-12 { x } else { best });
        if pivot < 0.0 {
            col.neg_mut();
        }
        transform.set_column(k, &col);
        eigen_detunings.push(-eigenvalues[src]);
    }
    NormalModeBasis { eigen_detunings, transform, mode_drives: DMatrix::zeros(n, n) }
}

/// Eigenmode (`G̃_kk`) and two-mode (`G̃_lk`) squeezing amplitudes
/// `G̃ = Uᵀ diag(G) U`.
pub fn normal_mode_drives(basis: &NormalModeBasis, drive: &[f64]) -> DMatrix<f64> {
    let u = &basis.transform;
    let g = DMatrix::from_diagonal(&DVector::from_column_slice(drive));
    let gt = u.transpose() * g * u;
    (&gt + gt.transpose()) * 0.5
}

/// Normal-mode analysis of a parameter set, with mode drives filled in.
pub fn normal_modes(params: &NetworkParams) -> NormalModeBasis {
    let mut basis = normal_mode_basis(&params.detunings(), params.coupling());
    basis.mode_drives = normal_mode_drives(&basis, params.drive());
    basis
}

/// Parametric instability threshold of a mode, `√(Δ̃² + (γ/2)²)`.
pub fn lobe_threshold(eigen_detuning: f64, damping: f64) -> f64 {
    eigen_detuning.hypot(damping / 2.0)
}

/// Laboratory quantities used to express drive and noise in model units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationInputs {
    /// Drive voltage `U_d` (V).
    pub u_drive: f64,
    /// Threshold voltage at zero detuning `U_th` (V).
    pub u_threshold: f64,
    /// Reference damping `γ₀` (rad/s).
    pub gamma0: f64,
    /// Injected white-noise PSD `S_n` (V²/Hz).
    pub noise_psd_in: f64,
    /// In-coupling constant (Hz⁴/V²).
    pub coupling_const: f64,
}

impl CalibrationInputs {
    /// In-coupling constant of the two-resonator setup (Hz⁴/V²).
    pub const DEFAULT_COUPLING_CONST: f64 = 0.0035;
}

/// Two-photon drive `G = γ₀ U_d / (2 U_th)`.
pub fn calibrate_drive(cal: &CalibrationInputs) -> Result<f64> {
    if !(cal.u_threshold > 0.0) {
        return Err(KpoError::InvalidParams(format!(
            "threshold voltage must be positive, got {}",
            cal.u_threshold
        )));
    }
    Ok(cal.gamma0 * cal.u_drive / (2.0 * cal.u_threshold))
}

/// Noise strengths derived from the injected voltage noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseCalibration {
    /// `ς² = c·S_n` with the in-coupling constant `c`.
    pub varsigma2: f64,
    /// Per-quadrature white-noise PSD `σ² = ς² / (2 (ω_G/2)²)`.
    pub sigma2: f64,
}

pub fn calibrate_noise(cal: &CalibrationInputs, drive_freq: f64) -> Result<NoiseCalibration> {
    if !(drive_freq > 0.0) {
        return Err(KpoError::InvalidParams(format!("drive frequency must be positive, got {drive_freq}")));
    }
    if cal.noise_psd_in < 0.0 {
        return Err(KpoError::InvalidParams(format!("negative noise PSD {}", cal.noise_psd_in)));
    }
    let varsigma2 = cal.coupling_const * cal.noise_psd_in;
    let half = drive_freq / 2.0;
    Ok(NoiseCalibration { varsigma2, sigma2: varsigma2 / (2.0 * half * half) })
}
