//! Averaged modified periodograms.
//!
//! Normalization: `P_k = dt·|X_k|² / Σ w²`, averaged over segments, on the
//! two-sided angular grid `ω_k = 2πk/(L·dt)`. White noise of PSD `σ²`
//! comes out flat at `σ²`, and `(1/2π) Σ P_k Δω` is the mean square.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{KpoError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    Hann,
    Rectangular,
}

impl Window {
    /// Periodic window of length `n`.
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Hann => (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect(),
            Window::Rectangular => vec![1.0; n],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WelchOptions {
    /// Segment length in samples; `None` uses a sixteenth of the record.
    pub segment_len: Option<usize>,
    pub overlap_frac: f64,
    pub window: Window,
    /// Subtract each segment's mean before windowing.
    pub detrend: bool,
}

impl Default for WelchOptions {
    fn default() -> Self {
        Self { segment_len: None, overlap_frac: 0.5, window: Window::Hann, detrend: false }
    }
}

/// Two-sided spectrum on an ascending angular-frequency grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub freq: Vec<f64>,
    pub psd: Vec<f64>,
    pub segments: usize,
}

impl Spectrum {
    pub fn bin_width(&self) -> f64 {
        if self.freq.len() < 2 {
            0.0
        } else {
            self.freq[1] - self.freq[0]
        }
    }

    /// `(1/2π) ∫ P dω` over the whole grid.
    pub fn total_power(&self) -> f64 {
        self.psd.iter().sum::<f64>() * self.bin_width() / (2.0 * PI)
    }

    /// Power in `lo ≤ ω ≤ hi`.
    pub fn band_power(&self, lo: f64, hi: f64) -> f64 {
        let s: f64 = self.freq.iter().zip(&self.psd).filter(|(w, _)| **w >= lo && **w <= hi).map(|(_, p)| p).sum();
        s * self.bin_width() / (2.0 * PI)
    }

    pub fn add(&self, other: &Spectrum) -> Result<Spectrum> {
        if self.freq != other.freq {
            return Err(KpoError::InvalidInput("spectra live on different grids".into()));
        }
        let psd = self.psd.iter().zip(&other.psd).map(|(a, b)| a + b).collect();
        Ok(Spectrum { freq: self.freq.clone(), psd, segments: self.segments })
    }
}

/// Welch estimate for a real series sampled at spacing `dt`.
pub fn welch_psd(series: &[f64], dt: f64, opts: &WelchOptions) -> Result<Spectrum> {
    let data: Vec<Complex64> = series.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    welch_complex(&data, dt, opts)
}

/// Sum of the Welch spectra of the real and imaginary parts.
pub fn welch_quadratures(series: &[Complex64], dt: f64, opts: &WelchOptions) -> Result<Spectrum> {
    let re: Vec<f64> = series.iter().map(|z| z.re).collect();
    let im: Vec<f64> = series.iter().map(|z| z.im).collect();
    welch_psd(&re, dt, opts)?.add(&welch_psd(&im, dt, opts)?)
}

fn welch_complex(series: &[Complex64], dt: f64, opts: &WelchOptions) -> Result<Spectrum> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(KpoError::InvalidInput(format!("sample spacing must be positive, got {dt}")));
    }
    if !(0.0..1.0).contains(&opts.overlap_frac) {
        return Err(KpoError::InvalidInput(format!("overlap fraction {} not in [0, 1)", opts.overlap_frac)));
    }
    let len = opts.segment_len.unwrap_or(series.len() / 16);
    if len > series.len() {
        return Err(KpoError::InvalidInput(format!(
            "segment of {len} samples is longer than the series ({})",
            series.len()
        )));
    }
    if len < 2 {
        return Err(KpoError::InvalidInput("segment must hold at least two samples".into()));
    }
    let hop = ((len as f64) * (1.0 - opts.overlap_frac)).round().max(1.0) as usize;
    let w = opts.window.coefficients(len);
    let wss: f64 = w.iter().map(|x| x * x).sum();
    let fft = FftPlanner::new().plan_fft_forward(len);

    let mut acc = vec![0.0; len];
    let mut buf = vec![Complex64::new(0.0, 0.0); len];
    let mut segments = 0usize;
    let mut start = 0usize;
    while start + len <= series.len() {
        let seg = &series[start..start + len];
        let mean = if opts.detrend { seg.iter().sum::<Complex64>() / len as f64 } else { Complex64::new(0.0, 0.0) };
        for i in 0..len {
            buf[i] = (seg[i] - mean) * w[i];
        }
        fft.process(&mut buf);
        for (a, x) in acc.iter_mut().zip(&buf) {
            *a += x.norm_sqr();
        }
        segments += 1;
        start += hop;
    }
    let scale = dt / (wss * segments as f64);
    let dw = 2.0 * PI / (len as f64 * dt);
    // reorder to ascending frequency: indices ⌈len/2⌉..len are negative
    let first_neg = len.div_ceil(2);
    let order = (first_neg..len).chain(0..first_neg);
    let (freq, psd) = order
        .map(|k| {
            let kk = if k >= first_neg { k as f64 - len as f64 } else { k as f64 };
            (kk * dw, acc[k] * scale)
        })
        .unzip();
    Ok(Spectrum { freq, psd, segments })
}

/// Lorentzian `A / ((ω − ω₀)² + Γ²)` fitted around a spectral peak.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LorentzianFit {
    pub center: f64,
    pub half_width: f64,
    pub amplitude: f64,
}

/// Fits the largest peak with `lo ≤ ω ≤ hi` by least squares on `1/P`,
/// which is quadratic in `ω` for a Lorentzian. Points above a fraction
/// `level` of the peak value enter the fit.
pub fn fit_lorentzian(spec: &Spectrum, lo: f64, hi: f64, level: f64) -> Result<LorentzianFit> {
    let idx: Vec<usize> = (0..spec.freq.len()).filter(|&i| spec.freq[i] >= lo && spec.freq[i] <= hi).collect();
    let &peak = idx
        .iter()
        .max_by(|a, b| spec.psd[**a].total_cmp(&spec.psd[**b]))
        .ok_or_else(|| KpoError::InvalidInput("empty fit band".into()))?;
    let cut = level * spec.psd[peak];
    // contiguous run above the cut around the peak
    let mut a = peak;
    while a > 0 && idx.contains(&(a - 1)) && spec.psd[a - 1] >= cut {
        a -= 1;
    }
    let mut b = peak;
    while b + 1 < spec.freq.len() && idx.contains(&(b + 1)) && spec.psd[b + 1] >= cut {
        b += 1;
    }
    if b - a + 1 < 3 {
        return Err(KpoError::NonConvergence("peak is narrower than three bins".into()));
    }
    let rows = b - a + 1;
    let w0 = spec.freq[peak];
    let design = DMatrix::from_fn(rows, 3, |r, c| (spec.freq[a + r] - w0).powi(c as i32));
    let target = DVector::from_fn(rows, |r, _| 1.0 / spec.psd[a + r]);
    let coef = design
        .svd(true, true)
        .solve(&target, 1e-14)
        .map_err(|e| KpoError::NonConvergence(format!("Lorentzian fit failed: {e}")))?;
    let (c0, c1, c2) = (coef[0], coef[1], coef[2]);
    if c2 <= 0.0 {
        return Err(KpoError::NonConvergence("fitted inverse spectrum is not convex".into()));
    }
    let shift = -c1 / (2.0 * c2);
    let g2 = c0 / c2 - shift * shift;
    if g2 <= 0.0 {
        return Err(KpoError::NonConvergence("fitted width is not positive".into()));
    }
    Ok(LorentzianFit { center: w0 + shift, half_width: g2.sqrt(), amplitude: 1.0 / c2 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn sinusoid_power() {
        let dt = 0.01;
        let w0 = 2.0 * PI * 64.0 / (4096.0 * dt);
        let x: Vec<f64> = (0..65536).map(|i| (w0 * i as f64 * dt).cos()).collect();
        let s = welch_psd(&x, dt, &WelchOptions { segment_len: Some(4096), ..Default::default() }).unwrap();
        assert!((s.total_power() - 0.5).abs() < 1e-3);
        assert!((s.band_power(0.0, f64::INFINITY) - 0.25).abs() < 1e-3);
        let peak = s.psd.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert!((s.freq[peak].abs() - w0).abs() < 1e-9);
    }

    #[test]
    fn white_noise_is_flat() {
        let (dt, sigma2) = (0.1_f64, 2.5_f64);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sd = (sigma2 / dt).sqrt();
        let x: Vec<f64> = (0..1_000_000)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                sd * z
            })
            .collect();
        let s = welch_psd(&x, dt, &WelchOptions::default()).unwrap();
        // band averages of 1/32 of the grid each
        for chunk in s.psd.chunks_exact(s.psd.len() / 32) {
            let mean = chunk.iter().sum::<f64>() / chunk.len() as f64;
            assert!((mean / sigma2 - 1.0).abs() < 0.05, "{mean}");
        }
        assert_eq!(s.freq.len(), 62500);
        assert!(s.freq.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn ou_lorentzian() {
        // dx = −κx dt + √D dW has PSD D/(ω² + κ²); exact discrete update
        let (kappa, d, dt) = (1.0_f64, 0.5_f64, 0.01_f64);
        let decay = (-kappa * dt).exp();
        let sd = (d / (2.0 * kappa) * (1.0 - decay * decay)).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut x = 0.0;
        let series: Vec<f64> = (0..4_000_000)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                x = decay * x + sd * z;
                x
            })
            .collect();
        let s = welch_psd(&series, dt, &WelchOptions { segment_len: Some(20_000), ..Default::default() }).unwrap();
        for target in [0.0, 0.5, 1.0, 2.0, 4.0] {
            let band: Vec<f64> = s
                .freq
                .iter()
                .zip(&s.psd)
                .filter(|(w, _)| (**w - target).abs() < 0.1)
                .map(|(_, p)| *p)
                .collect();
            let est = band.iter().sum::<f64>() / band.len() as f64;
            let expect = d / (target * target + kappa * kappa);
            assert!((est / expect - 1.0).abs() < 0.05, "ω = {target}: {est} vs {expect}");
        }
    }

    #[test]
    fn segment_longer_than_series() {
        assert!(welch_psd(&[0.0; 10], 1.0, &WelchOptions { segment_len: Some(11), ..Default::default() }).is_err());
    }

    #[test]
    fn lorentzian_fit_recovers_shape() {
        let freq: Vec<f64> = (0..2001).map(|i| -10.0 + 0.01 * i as f64).collect();
        let psd = freq.iter().map(|w| 3.0 / ((w - 2.5).powi(2) + 0.04)).collect();
        let s = Spectrum { freq, psd, segments: 1 };
        let fit = fit_lorentzian(&s, 0.0, 10.0, 0.5).unwrap();
        assert!((fit.center - 2.5).abs() < 1e-9);
        assert!((fit.half_width - 0.2).abs() < 1e-9);
        assert!((fit.amplitude - 3.0).abs() < 1e-8);
    }
}
