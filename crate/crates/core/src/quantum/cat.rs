use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{KpoError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parity {
    Even,
    Odd,
}

/// `c (|α⟩ ± |−α⟩)` truncated to `n_max` Fock levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatState {
    pub alpha: Complex64,
    pub parity: Parity,
    pub vector: Vec<Complex64>,
    pub norm_const: f64,
}

/// Truncated coherent state `e^{−|α|²/2} αⁿ/√n!`, `n < n_max`.
pub fn coherent_state(alpha: Complex64, n_max: usize) -> Vec<Complex64> {
    let mut out = Vec::with_capacity(n_max);
    let mut c = Complex64::new((-0.5 * alpha.norm_sqr()).exp(), 0.0);
    for n in 0..n_max {
        if n > 0 {
            c = c * alpha / (n as f64).sqrt();
        }
        out.push(c);
    }
    out
}

/// Cat state with `norm_const = [2(1 ± e^{−2|α|²})]^{−1/2}`.
///
/// Fails for the odd cat at `α = 0` and when more than `1e-6` of the
/// coherent-state weight falls beyond the cutoff.
pub fn cat_state(alpha: Complex64, parity: Parity, n_max: usize) -> Result<CatState> {
    let overlap = (-2.0 * alpha.norm_sqr()).exp();
    let sign = match parity {
        Parity::Even => 1.0,
        Parity::Odd => -1.0,
    };
    let norm2 = 2.0 * (1.0 + sign * overlap);
    if norm2 <= 0.0 {
        return Err(KpoError::InvalidInput("odd cat state at α = 0 has zero norm".into()));
    }
    let plus = coherent_state(alpha, n_max);
    let minus = coherent_state(-alpha, n_max);
    let kept: f64 = plus.iter().map(|c| c.norm_sqr()).sum();
    if 1.0 - kept > 1e-6 {
        return Err(KpoError::CutoffTooSmall(format!(
            "{:e} of |α⟩ lies above n_max = {n_max}",
            1.0 - kept
        )));
    }
    let norm_const = norm2.powf(-0.5);
    let vector = plus.iter().zip(&minus).map(|(a, b)| (a + b * sign) * norm_const).collect();
    Ok(CatState { alpha, parity, vector, norm_const })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub mean: f64,
    pub rms: f64,
}

/// Statistics of `|Σ_i s_i α| / n_modes` for independent random signs `s_i`.
pub fn ensemble_mean_amplitude(n_modes: usize, alpha: Complex64, trials: usize, seed: u64) -> Result<EnsembleStats> {
    if trials < 1000 {
        return Err(KpoError::InvalidInput(format!("need at least 1000 trials, got {trials}")));
    }
    if n_modes == 0 {
        return Err(KpoError::InvalidInput("need at least one mode".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = alpha.norm();
    let (mut sum, mut sum2) = (0.0, 0.0);
    for _ in 0..trials {
        let s: i64 = (0..n_modes).map(|_| if rng.random_bool(0.5) { 1 } else { -1 }).sum();
        let v = a * (s.unsigned_abs() as f64) / n_modes as f64;
        sum += v;
        sum2 += v * v;
    }
    Ok(EnsembleStats { mean: sum / trials as f64, rms: (sum2 / trials as f64).sqrt() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn vacuum_cat() {
        let cat = cat_state(c(0.0, 0.0), Parity::Even, 6).unwrap();
        assert!((cat.vector[0] - c(1.0, 0.0)).norm() < 1e-15);
        assert!(cat.vector[1..].iter().all(|z| z.norm() == 0.0));
        assert!(cat_state(c(0.0, 0.0), Parity::Odd, 6).is_err());
    }

    #[test]
    fn parity_and_norm() {
        for alpha in [c(0.4, 0.0), c(1.2, -0.7), c(0.0, 2.0)] {
            let n_max = 40;
            let even = cat_state(alpha, Parity::Even, n_max).unwrap();
            let odd = cat_state(alpha, Parity::Odd, n_max).unwrap();
            for n in 0..n_max {
                let (e, o) = (even.vector[n].norm(), odd.vector[n].norm());
                if n % 2 == 1 {
                    assert!(e < 1e-12);
                } else {
                    assert!(o < 1e-12);
                }
            }
            for cat in [even, odd] {
                let norm: f64 = cat.vector.iter().map(|z| z.norm_sqr()).sum();
                assert!((norm - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn coherent_overlap() {
        // ⟨α|−α⟩ = e^{−2|α|²} with n_max ≥ |α|² + 8|α| + 10
        for a in [0.5, 1.5, 3.0] {
            let n_max = (a * a + 8.0 * a + 10.0_f64).ceil() as usize;
            let p = coherent_state(c(a, 0.0), n_max);
            let m = coherent_state(c(-a, 0.0), n_max);
            let ov: Complex64 = p.iter().zip(&m).map(|(x, y)| x.conj() * y).sum();
            assert!((ov - c((-2.0 * a * a).exp(), 0.0)).norm() < 1e-10);
        }
    }

    #[test]
    fn ensemble_scaling() {
        let one = ensemble_mean_amplitude(1, c(1.7, 0.0), 1000, 1).unwrap();
        assert!((one.rms - 1.7).abs() < 1e-12);
        let many = ensemble_mean_amplitude(100, c(2.0, 0.0), 5000, 1).unwrap();
        assert!((many.rms / 0.2 - 1.0).abs() < 0.1, "{}", many.rms);
        let zero = ensemble_mean_amplitude(10, c(0.0, 0.0), 1000, 1).unwrap();
        assert_eq!((zero.mean, zero.rms), (0.0, 0.0));
        assert!(ensemble_mean_amplitude(10, c(1.0, 0.0), 999, 1).is_err());
    }
}
