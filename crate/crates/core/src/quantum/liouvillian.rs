use log::warn;
use nalgebra::DMatrix;
use num_complex::Complex64;

use super::fock::{effective_hamiltonian, Csr, FockSpace};
use crate::error::{KpoError, Result};
use crate::model::NetworkParams;

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Vectorized generator `ρ̇ = −i(H_eff ρ − ρ H_eff†) + Σ_j γ_j a_j ρ a_j†`.
///
/// Unknowns are density-matrix elements `ρ_ij`. With parity reduction only
/// pairs whose total photon parities agree are kept; that set is invariant
/// and contains the steady state.
#[derive(Debug, Clone)]
pub struct Liouvillian {
    pub space: FockSpace,
    pub reduced: bool,
    pub matrix: Csr,
    /// `H̄ − i Σ (γ_j/2) n_j` on the Fock space.
    pub h_eff: Csr,
    pairs: Vec<(u32, u32)>,
    index: Vec<u32>,
    pub warnings: Vec<String>,
    pub min_damping: f64,
}

impl Liouvillian {
    pub fn n_unknowns(&self) -> usize {
        self.pairs.len()
    }

    pub fn pair(&self, k: usize) -> (usize, usize) {
        let (i, j) = self.pairs[k];
        (i as usize, j as usize)
    }

    /// Unknown holding `ρ_ij`, if kept.
    pub fn unknown(&self, i: usize, j: usize) -> Option<usize> {
        let k = self.index[i * self.space.dim + j];
        (k != u32::MAX).then_some(k as usize)
    }

    pub fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        self.matrix.mul_vec(x)
    }

    pub fn to_density(&self, x: &[Complex64]) -> DMatrix<Complex64> {
        let d = self.space.dim;
        let mut rho = DMatrix::zeros(d, d);
        for (k, &(i, j)) in self.pairs.iter().enumerate() {
            rho[(i as usize, j as usize)] = x[k];
        }
        rho
    }

    pub fn from_density(&self, rho: &DMatrix<Complex64>) -> Vec<Complex64> {
        self.pairs.iter().map(|&(i, j)| rho[(i as usize, j as usize)]).collect()
    }
}

/// Assembles the Liouvillian of `params` on `space`.
pub fn build_liouvillian(params: &NetworkParams, space: &FockSpace, parity_reduce: bool) -> Result<Liouvillian> {
    let h = effective_hamiltonian(params, space)?;
    let mut warnings = Vec::new();
    if let Some(v_min) = params.min_kerr() {
        let ratio = params.max_drive() / v_min;
        if (space.n_max as f64) < 3.0 * ratio + 5.0 {
            let msg = format!(
                "Fock cutoff {} is below 3·G/V + 5 = {:.1}; results may be truncated",
                space.n_max,
                3.0 * ratio + 5.0
            );
            warn!("{msg}");
            warnings.push(msg);
        }
    }
    let d = space.dim;
    let total = d.checked_mul(d).filter(|t| *t < u32::MAX as usize).ok_or_else(|| {
        KpoError::InvalidInput(format!("Hilbert space dimension {d} is too large for the Liouvillian"))
    })?;
    let parity: Vec<usize> = (0..d).map(|i| space.parity(i)).collect();
    let mut index = vec![u32::MAX; total];
    let mut pairs = Vec::new();
    for i in 0..d {
        for j in 0..d {
            if !parity_reduce || parity[i] == parity[j] {
                index[i * d + j] = pairs.len() as u32;
                pairs.push((i as u32, j as u32));
            }
        }
    }
    let n_max = space.n_max;
    let gammas = params.damping();
    let rows = pairs.iter().map(|&(i, j)| {
        let (i, j) = (i as usize, j as usize);
        let mut row: Vec<(u32, Complex64)> = Vec::with_capacity(16);
        for (k, hv) in h.row(i) {
            row.push((index[k * d + j], -I * hv));
        }
        for (k, hv) in h.row(j) {
            row.push((index[i * d + k], I * hv.conj()));
        }
        for (l, &g) in gammas.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let (ni, nj) = (space.occupation(i, l), space.occupation(j, l));
            if ni + 1 < n_max && nj + 1 < n_max {
                let s = space.stride(l);
                let amp = g * (((ni + 1) * (nj + 1)) as f64).sqrt();
                row.push((index[(i + s) * d + j + s], Complex64::new(amp, 0.0)));
            }
        }
        debug_assert!(row.iter().all(|e| e.0 != u32::MAX));
        row
    });
    let matrix = Csr::from_rows(pairs.len(), rows);
    let min_damping = gammas.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(Liouvillian { space: *space, reduced: parity_reduce, matrix, h_eff: h, pairs, index, warnings, min_damping })
}

/// Dormand–Prince 5(4) integration of `ẋ = L x` from 0 to `t_end`.
pub fn propagate(l: &Liouvillian, x0: &[Complex64], t_end: f64, rtol: f64, atol: f64) -> Result<Vec<Complex64>> {
    const A: [[f64; 6]; 7] = [
        [0.0; 6],
        [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
    const B4: [f64; 7] =
        [5179.0 / 57600.0, 0.0, 7571.0 / 16695.0, 393.0 / 640.0, -92097.0 / 339200.0, 187.0 / 2100.0, 1.0 / 40.0];
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut t = 0.0;
    let norm_l = (0..l.matrix.n).map(|i| l.matrix.row(i).map(|(_, v)| v.norm()).sum::<f64>()).fold(0.0, f64::max);
    let mut h = (0.1 / norm_l.max(1e-300)).min(t_end);
    let mut k: Vec<Vec<Complex64>> = vec![vec![Complex64::new(0.0, 0.0); n]; 7];
    let mut tmp = vec![Complex64::new(0.0, 0.0); n];
    l.matrix.mul_vec_into(&x, &mut k[0]);
    let mut steps = 0usize;
    while t < t_end {
        h = h.min(t_end - t);
        for s in 1..7 {
            let (done, rest) = k.split_at_mut(s);
            for q in 0..n {
                let mut acc = x[q];
                for (r, a) in A[s].iter().enumerate().take(s) {
                    if *a != 0.0 {
                        acc += done[r][q] * (h * a);
                    }
                }
                tmp[q] = acc;
            }
            l.matrix.mul_vec_into(&tmp, &mut rest[0]);
        }
        // tmp holds the fifth-order solution (FSAL stage input)
        let mut err: f64 = 0.0;
        for q in 0..n {
            let mut e = Complex64::new(0.0, 0.0);
            for s in 0..7 {
                e += k[s][q] * (h * (B5[s] - B4[s]));
            }
            let sc = atol + rtol * x[q].norm().max(tmp[q].norm());
            err = err.max(e.norm() / sc);
        }
        if !err.is_finite() {
            return Err(KpoError::NonConvergence("propagation produced non-finite values".into()));
        }
        if err <= 1.0 {
            t += h;
            x.copy_from_slice(&tmp);
            k.swap(0, 6);
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h *= factor;
        steps += 1;
        if steps > 50_000_000 {
            return Err(KpoError::NonConvergence("propagation exceeded the step budget".into()));
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::max_abs;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_hermitian(d: usize, rng: &mut ChaCha8Rng) -> DMatrix<Complex64> {
        let a = DMatrix::from_fn(d, d, |_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        &a + a.adjoint()
    }

    #[test]
    fn trace_preserving() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = NetworkParams::identical(2, 0.2, 1.0, 0.6, -0.25, 0.1).unwrap();
        let s = FockSpace::new(2, 5).unwrap();
        let l = build_liouvillian(&p, &s, false).unwrap();
        for _ in 0..5 {
            let rho = random_hermitian(s.dim, &mut rng);
            let drho = l.to_density(&l.apply(&l.from_density(&rho)));
            assert!(drho.trace().norm() < 1e-12);
            // and Hermiticity preserving
            assert!(max_abs(&(&drho - drho.adjoint())) < 1e-12);
        }
    }

    #[test]
    fn vacuum_is_stationary_without_drive() {
        let p = NetworkParams::identical(2, 0.4, 0.0, 0.0, 0.0, 0.1).unwrap();
        let s = FockSpace::new(2, 4).unwrap();
        let l = build_liouvillian(&p, &s, true).unwrap();
        let mut rho = DMatrix::zeros(s.dim, s.dim);
        rho[(0, 0)] = Complex64::new(1.0, 0.0);
        assert!(l.apply(&l.from_density(&rho)).iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn reduced_matches_full_on_its_sector() {
        let p = NetworkParams::identical(2, 0.2, 1.0, 0.6, -0.25, 0.1).unwrap();
        let s = FockSpace::new(2, 4).unwrap();
        let full = build_liouvillian(&p, &s, false).unwrap();
        let red = build_liouvillian(&p, &s, true).unwrap();
        assert_eq!(red.n_unknowns() * 2, full.n_unknowns());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut rho = random_hermitian(s.dim, &mut rng);
        for i in 0..s.dim {
            for j in 0..s.dim {
                if s.parity(i) != s.parity(j) {
                    rho[(i, j)] = Complex64::new(0.0, 0.0);
                }
            }
        }
        let a = full.to_density(&full.apply(&full.from_density(&rho)));
        let b = red.to_density(&red.apply(&red.from_density(&rho)));
        assert!(max_abs(&(a - b)) < 1e-14);
    }

    #[test]
    fn damped_cavity_decay() {
        // oracle: ⟨n⟩(t) = n₀ e^{−γt} for a linear damped cavity
        let gamma = 0.3;
        let p = NetworkParams::identical(1, 0.7, 0.0, 0.0, 0.0, gamma).unwrap();
        let s = FockSpace::new(1, 8).unwrap();
        let l = build_liouvillian(&p, &s, false).unwrap();
        let mut rho = DMatrix::zeros(s.dim, s.dim);
        rho[(5, 5)] = Complex64::new(1.0, 0.0);
        for t in [0.5, 2.0, 5.0] {
            let x = propagate(&l, &l.from_density(&rho), t, 1e-10, 1e-13).unwrap();
            let r = l.to_density(&x);
            let n: f64 = (0..s.dim).map(|k| k as f64 * r[(k, k)].re).sum();
            assert!((n - 5.0 * (-gamma * t).exp()).abs() < 1e-8, "t = {t}: {n}");
        }
    }
}
