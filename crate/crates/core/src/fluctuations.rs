//! Linear fluctuations around a mean-field steady state.
//!
//! With `δα̇ = −i(Ω δα + S δα*) − (γ/2) δα + ξ` the blocks are
//! `Ω_jj = −Δ_j + 2V_j|α_j|²`, `Ω_jk = J_jk` and `S_jj = V_j α_j² − G_j`.
//! Spectra are two-sided on the angular frequency axis for white noise of
//! PSD `σ²` on every real quadrature, so that a coordinate's variance is
//! `(1/2π) ∫ S(ω) dω`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{KpoError, Result};
use crate::meanfield::{characteristic_exponents, drift, jacobian};
use crate::model::NetworkParams;

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Default number of analysis frequencies.
pub const DEFAULT_GRID_POINTS: usize = 2048;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BdgBlocks {
    pub omega_block: DMatrix<Complex64>,
    pub squeeze_block: DMatrix<Complex64>,
}

/// Reads off the bilinear fluctuation blocks at a steady state.
pub fn bdg_matrix(params: &NetworkParams, alpha: &[Complex64]) -> Result<BdgBlocks> {
    let n = params.n_sites();
    if alpha.len() != n {
        return Err(KpoError::LengthMismatch { expected: n, got: alpha.len() });
    }
    let residual = drift(params, alpha).iter().map(|z| z.norm()).fold(0.0, f64::max);
    let tolerance = stationarity_tolerance(params, alpha);
    if residual > tolerance {
        return Err(KpoError::NotStationary { residual, tolerance });
    }
    let detuning = params.detunings();
    let mut omega_block = DMatrix::from_fn(n, n, |j, k| Complex64::new(params.coupling()[(j, k)], 0.0));
    let mut squeeze_block = DMatrix::zeros(n, n);
    for j in 0..n {
        let v = params.kerr()[j];
        omega_block[(j, j)] = Complex64::new(-detuning[j] + 2.0 * v * alpha[j].norm_sqr(), 0.0);
        squeeze_block[(j, j)] = v * alpha[j] * alpha[j] - params.drive()[j];
    }
    Ok(BdgBlocks { omega_block, squeeze_block })
}

/// `1e-8` relative to `max(1, V·A³)` with `A` the larger of the state norm and `√(G/V)`.
fn stationarity_tolerance(params: &NetworkParams, alpha: &[Complex64]) -> f64 {
    let a = alpha.iter().map(|z| z.norm()).fold(params.amplitude_scale(), f64::max);
    let v = params.kerr().iter().map(|v| v.abs()).fold(0.0, f64::max);
    1e-8 * (v * a.powi(3)).max(1.0)
}

/// Linearization on `(δα, δα*)`:
/// `[[−iΩ − γ/2, −iS], [iS*, iΩ* − γ/2]]`.
pub fn linearization_matrix(params: &NetworkParams, blocks: &BdgBlocks) -> DMatrix<Complex64> {
    let n = params.n_sites();
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    for j in 0..n {
        for k in 0..n {
            let om = blocks.omega_block[(j, k)];
            let sq = blocks.squeeze_block[(j, k)];
            m[(j, k)] = -I * om;
            m[(j, n + k)] = -I * sq;
            m[(n + j, k)] = I * sq.conj();
            m[(n + j, n + k)] = I * om.conj();
        }
        let half = Complex64::new(0.5 * params.damping()[j], 0.0);
        m[(j, j)] -= half;
        m[(n + j, n + j)] -= half;
    }
    m
}

/// Eigenvalues of the complex linearization, sorted like the real exponents.
pub fn linearization_exponents(params: &NetworkParams, blocks: &BdgBlocks) -> Vec<Complex64> {
    let m = linearization_matrix(params, blocks);
    let schur = nalgebra::Schur::new(m);
    let (_, t) = schur.unpack();
    let mut mu: Vec<Complex64> = (0..t.nrows()).map(|i| t[(i, i)]).collect();
    mu.sort_by(|a, b| b.re.total_cmp(&a.re).then(a.im.total_cmp(&b.im)));
    mu
}

/// Symmetry channel of an N = 2 eigenvector `w ⊗ (e, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Channel {
    /// `w = (1, 1)`
    S,
    /// `w = (1, −1)`
    A,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PsdMethod {
    /// Closed form in `(μ, e)`.
    C3,
    /// Direct transfer function `(iω − M_J)⁻¹`.
    Transfer,
}

impl PsdMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            PsdMethod::C3 => "c3",
            PsdMethod::Transfer => "transfer",
        }
    }
}

/// Exponent with its eigenvector data; `e` and `channel` are `None` when the
/// eigenvector does not factor as `w ⊗ (e, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenParam {
    pub mu: Complex64,
    pub e: Option<Complex64>,
    pub channel: Option<Channel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluctuationSpectrum {
    pub exponents: Vec<Complex64>,
    pub eigvec_params: Vec<EigenParam>,
    pub freq_grid: Vec<f64>,
    pub sigma2: f64,
    /// Reported PSD per site (`Re` plus `Im` quadrature).
    pub psd_site: Vec<Vec<f64>>,
    /// S and A channels, N = 2 only.
    pub psd_s: Option<Vec<f64>>,
    pub psd_a: Option<Vec<f64>>,
    /// Method behind the reported arrays.
    pub method: PsdMethod,
    /// Transfer-function reference, always computed.
    pub transfer_site: Vec<Vec<f64>>,
    pub transfer_s: Option<Vec<f64>>,
    pub transfer_a: Option<Vec<f64>>,
}

/// Closed-form PSD of one symmetry channel (Re plus Im quadrature) for
/// exponent `mu` and eigenvector parameter `e`.
///
/// Singular for real `e`; callers fall back to [`transfer_psd`] there.
pub fn c3_psd(mu: Complex64, e: Complex64, sigma2: f64, omega: f64) -> f64 {
    let (mr, mi) = (mu.re, mu.im);
    let (er, ei) = (e.re, e.im);
    let (w2, mi2, mr2, ei2, er2) = (omega * omega, mi * mi, mr * mr, ei * ei, er * er);
    let num = mi2 * (2.0 * ei2 * er2 + ei2 * ei2 + (er2 + 1.0).powi(2)) + 2.0 * ei2 * (mr2 + w2);
    let den = ei2 * ((mi2 - w2).powi(2) + mr2 * (2.0 * mi2 + mr2 + 2.0 * w2));
    sigma2 * num / den
}

/// PSD of every real coordinate of `δẎ = M δY + Ξ`:
/// `σ² Σ_k |[(iω − M)⁻¹]_rk|²`. Output is indexed `[coordinate][frequency]`.
pub fn transfer_psd(m: &DMatrix<f64>, sigma2: f64, freq_grid: &[f64]) -> Result<Vec<Vec<f64>>> {
    let dim = m.nrows();
    let mc: DMatrix<Complex64> = m.map(|x| Complex64::new(x, 0.0));
    let columns: Vec<Vec<f64>> = freq_grid
        .par_iter()
        .map(|&w| {
            let a = DMatrix::<Complex64>::identity(dim, dim) * Complex64::new(0.0, w) - &mc;
            let h = a.lu().try_inverse().ok_or_else(|| {
                KpoError::NonConvergence(format!("iω − M_J is singular at ω = {w}"))
            })?;
            Ok((0..dim).map(|r| sigma2 * h.row(r).iter().map(|z| z.norm_sqr()).sum::<f64>()).collect())
        })
        .collect::<Result<_>>()?;
    Ok((0..dim).map(|r| columns.iter().map(|c| c[r]).collect()).collect())
}

/// Default analysis grid: `n` points over `[0, 4·max(|Im μ|, γ)]`.
pub fn default_freq_grid(exponents: &[Complex64], gamma_max: f64, n: usize) -> Vec<f64> {
    let top = 4.0 * exponents.iter().map(|m| m.im.abs()).fold(gamma_max, f64::max);
    let n = n.max(2);
    (0..n).map(|i| top * i as f64 / (n - 1) as f64).collect()
}

/// 2×2 S and A blocks of an N = 2 Jacobian that commutes with the site swap.
fn swap_blocks(m: &DMatrix<f64>) -> Option<[DMatrix<f64>; 2]> {
    if m.nrows() != 4 {
        return None;
    }
    let d = m.view((0, 0), (2, 2)).into_owned();
    let c = m.view((0, 2), (2, 2)).into_owned();
    let tol = 1e-10 * m.amax().max(1e-300);
    let sym = (&d - m.view((2, 2), (2, 2))).amax() <= tol && (&c - m.view((2, 0), (2, 2))).amax() <= tol;
    sym.then(|| [&d + &c, &d - &c])
}

/// Eigenvalue pair of a real 2×2 block and `e = v₀/v₁` of its eigenvector
/// for the eigenvalue with `Im μ ≥ 0`.
fn block_params(b: &DMatrix<f64>) -> (Complex64, Complex64, Option<Complex64>) {
    let (a, bb, c, d) = (b[(0, 0)], b[(0, 1)], b[(1, 0)], b[(1, 1)]);
    let half_tr = 0.5 * (a + d);
    let disc = Complex64::new(0.25 * (a - d).powi(2) + bb * c, 0.0).sqrt();
    let (mu_hi, mu_lo) = (half_tr + disc, half_tr - disc);
    let mu = if mu_hi.im >= mu_lo.im { mu_hi } else { mu_lo };
    // eigenvector (b, μ − a) or (μ − d, c), whichever is better conditioned
    let (v0, v1) = if bb.abs() + (mu - a).norm() >= (mu - d).norm() + c.abs() {
        (Complex64::new(bb, 0.0), mu - a)
    } else {
        (mu - d, Complex64::new(c, 0.0))
    };
    let scale = v0.norm().max(v1.norm());
    let e = if v1.norm() > 1e-12 * scale { Some(v0 / v1) } else { None };
    (mu, mu.conj(), e)
}

/// Whether the closed form is usable for `(μ, e)`.
fn c3_applicable(mu: Complex64, e: Option<Complex64>) -> Option<Complex64> {
    let e = e?;
    let real_mu = mu.im.abs() <= 1e-12 * mu.norm().max(1e-300);
    let real_e = e.im.abs() <= 1e-9 * (1.0 + e.norm());
    (!real_mu && !real_e).then_some(e)
}

/// Fluctuation spectrum of the linearized Langevin dynamics at a stable
/// steady state `alpha` for noise PSD `sigma2`.
///
/// For swap-symmetric N = 2 states the S and A channels use the closed form
/// in `(μ, e)`; otherwise, or when an exponent pair is real, the
/// transfer-function result is reported and `method` says so.
pub fn fluctuation_spectrum(
    params: &NetworkParams,
    alpha: &[Complex64],
    sigma2: f64,
    freq_grid: Option<&[f64]>,
) -> Result<FluctuationSpectrum> {
    if !(sigma2 >= 0.0 && sigma2.is_finite()) {
        return Err(KpoError::InvalidInput(format!("noise PSD must be finite and >= 0, got {sigma2}")));
    }
    bdg_matrix(params, alpha)?;
    let m = jacobian(params, alpha);
    let exponents = characteristic_exponents(&m);
    if let Some(bad) = exponents.iter().find(|mu| mu.re >= 0.0) {
        return Err(KpoError::InvalidInput(format!(
            "spectrum needs a stable state, found exponent with Re μ = {:e}",
            bad.re
        )));
    }
    let gamma_max = params.damping().iter().copied().fold(0.0, f64::max);
    let grid: Vec<f64> = match freq_grid {
        Some(g) => g.to_vec(),
        None => default_freq_grid(&exponents, gamma_max, DEFAULT_GRID_POINTS),
    };
    let n = params.n_sites();

    let coord = transfer_psd(&m, sigma2, &grid)?;
    let transfer_site: Vec<Vec<f64>> = (0..n).map(|j| add(&coord[2 * j], &coord[2 * j + 1])).collect();
    let (transfer_s, transfer_a) = if n == 2 {
        let (s, a) = sa_channels(&m, sigma2, &grid)?;
        (Some(s), Some(a))
    } else {
        (None, None)
    };

    let mut eigvec_params: Vec<EigenParam> =
        exponents.iter().map(|&mu| EigenParam { mu, e: None, channel: None }).collect();
    let mut c3: Option<[Vec<f64>; 2]> = None;
    if let Some(blocks) = swap_blocks(&m) {
        let mut chans: Vec<Option<Vec<f64>>> = Vec::new();
        for (block, channel) in blocks.iter().zip([Channel::S, Channel::A]) {
            let (mu, mu_conj, e) = block_params(block);
            for (target, ev) in [(mu, e), (mu_conj, e.map(|z| z.conj()))] {
                if let Some(p) = eigvec_params
                    .iter_mut()
                    .filter(|p| p.channel.is_none())
                    .min_by(|x, y| (x.mu - target).norm().total_cmp(&(y.mu - target).norm()))
                {
                    p.e = ev;
                    p.channel = Some(channel);
                }
            }
            chans.push(c3_applicable(mu, e).map(|e| grid.iter().map(|&w| c3_psd(mu, e, sigma2, w)).collect()));
        }
        if let [Some(s), Some(a)] = [chans[0].take(), chans[1].take()] {
            c3 = Some([s, a]);
        }
    }

    Ok(match c3 {
        Some([s, a]) => {
            let site: Vec<f64> = s.iter().zip(&a).map(|(x, y)| 0.5 * (x + y)).collect();
            FluctuationSpectrum {
                exponents,
                eigvec_params,
                freq_grid: grid,
                sigma2,
                psd_site: vec![site.clone(), site],
                psd_s: Some(s),
                psd_a: Some(a),
                method: PsdMethod::C3,
                transfer_site,
                transfer_s,
                transfer_a,
            }
        }
        None => FluctuationSpectrum {
            exponents,
            eigvec_params,
            freq_grid: grid,
            sigma2,
            psd_site: transfer_site.clone(),
            psd_s: transfer_s.clone(),
            psd_a: transfer_a.clone(),
            method: PsdMethod::Transfer,
            transfer_site,
            transfer_s,
            transfer_a,
        },
    })
}

/// Transfer-function PSDs of the S and A coordinates of an N = 2 Jacobian.
fn sa_channels(m: &DMatrix<f64>, sigma2: f64, grid: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    #[rustfmt::skip]
    let t = DMatrix::from_row_slice(4, 4, &[
        r, 0.0, r, 0.0,
        0.0, r, 0.0, r,
        r, 0.0, -r, 0.0,
        0.0, r, 0.0, -r,
    ]);
    // T is orthogonal and symmetric, so the rotated noise stays white
    let rotated = &t * m * &t;
    let coord = transfer_psd(&rotated, sigma2, grid)?;
    Ok((add(&coord[0], &coord[1]), add(&coord[2], &coord[3])))
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// Symmetric and antisymmetric combinations `(δα₁ ± δα₂)/√2` of two
/// complex quadrature series.
pub fn sa_transform(a1: &[Complex64], a2: &[Complex64]) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
    if a1.len() != a2.len() {
        return Err(KpoError::LengthMismatch { expected: a1.len(), got: a2.len() });
    }
    let r = std::f64::consts::FRAC_1_SQRT_2;
    Ok(a1.iter().zip(a2).map(|(x, y)| ((x + y) * r, (x - y) * r)).unzip())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meanfield::{find_steady_states, SolverOptions};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn blocks_at_origin() {
        let p = NetworkParams::identical(3, 0.4, 1.0, 0.3, 0.0, 0.1).unwrap();
        let b = bdg_matrix(&p, &[c(0.0, 0.0); 3]).unwrap();
        let om = DMatrix::from_diagonal_element(3, 3, c(-0.4, 0.0));
        let sq = DMatrix::from_diagonal_element(3, 3, c(-0.3, 0.0));
        assert!((b.omega_block - om).iter().all(|z| z.norm() < 1e-15));
        assert!((b.squeeze_block - sq).iter().all(|z| z.norm() < 1e-15));
    }

    #[test]
    fn linear_sites_have_constant_squeezing() {
        let p = NetworkParams::identical(2, 0.4, 0.0, 0.1, -0.2, 0.3).unwrap();
        let b = bdg_matrix(&p, &[c(0.0, 0.0); 2]).unwrap();
        assert_eq!(b.squeeze_block, DMatrix::from_diagonal_element(2, 2, c(-0.1, 0.0)));
        assert_eq!(b.omega_block[(0, 1)], c(-0.2, 0.0));
    }

    #[test]
    fn rejects_non_stationary() {
        let p = NetworkParams::identical(1, 0.4, 1.0, 0.3, 0.0, 0.1).unwrap();
        assert!(matches!(bdg_matrix(&p, &[c(0.5, 0.1)]), Err(KpoError::NotStationary { .. })));
    }

    #[test]
    fn c3_equals_transfer_on_random_blocks() {
        // oracle: direct 2×2 transfer function of the same block
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut checked = 0;
        while checked < 50 {
            let b = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0));
            let (mu, _, e) = block_params(&b);
            if mu.re >= -0.05 || mu.im.abs() < 0.05 {
                continue;
            }
            let e = e.unwrap();
            let grid: Vec<f64> = (0..40).map(|i| -2.0 + 0.1 * i as f64).collect();
            let tr = transfer_psd(&b, 0.7, &grid).unwrap();
            for (i, &w) in grid.iter().enumerate() {
                let direct = tr[0][i] + tr[1][i];
                assert!((c3_psd(mu, e, 0.7, w) - direct).abs() <= 1e-9 * direct);
            }
            checked += 1;
        }
    }

    #[test]
    fn single_site_lorentzian_pair() {
        let (delta, gamma, s2) = (2.0, 0.1, 0.3);
        let p = NetworkParams::identical(1, delta, 1.0, 0.0, 0.0, gamma).unwrap();
        let grid: Vec<f64> = (0..200).map(|i| -4.0 + 0.04 * i as f64).collect();
        let spec = fluctuation_spectrum(&p, &[c(0.0, 0.0)], s2, Some(&grid)).unwrap();
        let hw2 = gamma * gamma / 4.0;
        for (i, &w) in grid.iter().enumerate() {
            let expect = s2 * (1.0 / ((w - delta).powi(2) + hw2) + 1.0 / ((w + delta).powi(2) + hw2));
            assert!((spec.psd_site[0][i] - expect).abs() <= 1e-10 * expect);
        }
        assert_eq!(spec.method, PsdMethod::Transfer);
        assert!(spec.psd_s.is_none());
    }

    #[test]
    fn psd_scales_with_noise() {
        let p = NetworkParams::identical(2, 0.3, 1.0, 0.02, -0.25, 0.1).unwrap();
        let zero = [c(0.0, 0.0); 2];
        let a = fluctuation_spectrum(&p, &zero, 1.0, None).unwrap();
        let b = fluctuation_spectrum(&p, &zero, 2.0, None).unwrap();
        assert_eq!(a.method, PsdMethod::C3);
        for (x, y) in a.psd_s.unwrap().iter().zip(b.psd_s.unwrap()) {
            assert_abs_diff_eq!(2.0 * x, y, epsilon = 1e-12 * y);
        }
        assert_eq!(a.freq_grid.len(), DEFAULT_GRID_POINTS);
    }

    #[test]
    fn s_and_a_peaks_differ_below_threshold() {
        let (delta, j) = (0.3, -0.25);
        let p = NetworkParams::identical(2, delta, 1.0, 0.02, j, 0.02).unwrap();
        let spec = fluctuation_spectrum(&p, &[c(0.0, 0.0); 2], 1.0, None).unwrap();
        let peak = |v: &[f64]| spec.freq_grid[v.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0];
        let ps = peak(spec.psd_s.as_ref().unwrap());
        let pa = peak(spec.psd_a.as_ref().unwrap());
        // S mode sits at |Δ − J|, A mode at |Δ + J| (small drive)
        assert!((ps - (delta - j)).abs() < 0.01, "{ps}");
        assert!((pa - (delta + j)).abs() < 0.01, "{pa}");
        // C3 and transfer agree
        for (x, y) in spec.psd_s.unwrap().iter().zip(spec.transfer_s.unwrap()) {
            assert!((x - y).abs() <= 1e-8 * y);
        }
    }

    #[test]
    fn real_exponents_fall_back() {
        // Δ = J: S mode overdamped at the lobe centre
        let p = NetworkParams::identical(2, -0.25, 1.0, 0.03, -0.25, 0.1).unwrap();
        let spec = fluctuation_spectrum(&p, &[c(0.0, 0.0); 2], 1.0, None).unwrap();
        assert_eq!(spec.method, PsdMethod::Transfer);
        assert_eq!(spec.psd_s, spec.transfer_s);
    }

    #[test]
    fn channels_tagged_on_symmetric_states() {
        let p = NetworkParams::identical(2, 0.3, 1.0, 0.02, -0.25, 0.1).unwrap();
        let spec = fluctuation_spectrum(&p, &[c(0.0, 0.0); 2], 1.0, None).unwrap();
        let s = spec.eigvec_params.iter().filter(|p| p.channel == Some(Channel::S)).count();
        let a = spec.eigvec_params.iter().filter(|p| p.channel == Some(Channel::A)).count();
        assert_eq!((s, a), (2, 2));
        for p in &spec.eigvec_params {
            assert!(p.e.is_some());
        }
    }

    #[test]
    fn inhomogeneous_state_uses_transfer() {
        let j = DMatrix::from_row_slice(2, 2, &[0.0, -0.1, -0.1, 0.0]);
        let p = NetworkParams::from_detunings(&[0.0, 0.1], &[1.0, 1.0], &[0.4, 0.4], j, &[0.05, 0.05]).unwrap();
        let states = find_steady_states(&p, &[], &SolverOptions::default()).unwrap();
        let st = states.iter().find(|s| s.stable && s.norm() > 0.1).expect("a stable phase state");
        let spec = fluctuation_spectrum(&p, &st.amplitudes, 1.0, None).unwrap();
        assert_eq!(spec.method, PsdMethod::Transfer);
        assert!(spec.eigvec_params.iter().all(|p| p.e.is_none()));
    }

    #[test]
    fn sa_examples() {
        let (s, a) = sa_transform(&[c(1.0, 1.0)], &[c(1.0, 1.0)]).unwrap();
        assert_abs_diff_eq!(s[0].re, 2f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(a[0].norm(), 0.0, epsilon = 1e-15);
        let (s, a) = sa_transform(&[c(1.0, 0.0)], &[c(-1.0, 0.0)]).unwrap();
        assert_abs_diff_eq!(s[0].norm(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(a[0].re, 2f64.sqrt(), epsilon = 1e-15);
        assert!(matches!(sa_transform(&[c(0.0, 0.0)], &[]), Err(KpoError::LengthMismatch { .. })));
    }
}
