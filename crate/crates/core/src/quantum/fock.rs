use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{KpoError, Result};
use crate::model::NetworkParams;

/// Product of truncated Fock spaces with occupations `0..n_max` per site.
/// Site 0 is the most significant digit of the basis index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FockSpace {
    pub n_sites: usize,
    pub n_max: usize,
    pub dim: usize,
}

impl FockSpace {
    pub fn new(n_sites: usize, n_max: usize) -> Result<Self> {
        if n_sites == 0 || n_max < 2 {
            return Err(KpoError::InvalidInput(format!("need N >= 1 and n_max >= 2, got {n_sites}, {n_max}")));
        }
        let dim = (0..n_sites)
            .try_fold(1usize, |acc, _| acc.checked_mul(n_max))
            .filter(|d| *d <= u32::MAX as usize)
            .ok_or_else(|| KpoError::InvalidInput("Fock space too large".into()))?;
        Ok(Self { n_sites, n_max, dim })
    }

    pub fn occupations(&self, mut index: usize) -> Vec<usize> {
        let mut occ = vec![0; self.n_sites];
        for j in (0..self.n_sites).rev() {
            occ[j] = index % self.n_max;
            index /= self.n_max;
        }
        occ
    }

    pub fn index(&self, occ: &[usize]) -> usize {
        occ.iter().fold(0, |acc, &n| acc * self.n_max + n)
    }

    /// Index stride of site `j`.
    pub fn stride(&self, j: usize) -> usize {
        self.n_max.pow((self.n_sites - 1 - j) as u32)
    }

    /// Occupation of site `j` in basis state `index`.
    pub fn occupation(&self, index: usize, j: usize) -> usize {
        (index / self.stride(j)) % self.n_max
    }

    /// Parity of the total photon number.
    pub fn parity(&self, index: usize) -> usize {
        self.occupations(index).iter().sum::<usize>() % 2
    }
}

/// Sparse matrix in compressed rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<u32>,
    pub vals: Vec<Complex64>,
}

impl Csr {
    /// Builds from per-row entry lists; duplicates are summed and exact
    /// zeros dropped.
    pub fn from_rows(n: usize, rows: impl IntoIterator<Item = Vec<(u32, Complex64)>>) -> Self {
        let mut row_ptr = vec![0];
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            let mut last: Option<u32> = None;
            for (c, v) in row {
                if last == Some(c) {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                    last = Some(c);
                }
            }
            // drop cancelled entries of this row
            let start = *row_ptr.last().unwrap();
            let mut keep = start;
            for k in start..cols.len() {
                if vals[k] != Complex64::new(0.0, 0.0) {
                    cols[keep] = cols[k];
                    vals[keep] = vals[k];
                    keep += 1;
                }
            }
            cols.truncate(keep);
            vals.truncate(keep);
            row_ptr.push(keep);
        }
        assert_eq!(row_ptr.len(), n + 1, "row count mismatch");
        Self { n, row_ptr, cols, vals }
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, Complex64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().zip(&self.vals[r]).map(|(c, v)| (*c as usize, *v))
    }

    pub fn mul_vec_into(&self, x: &[Complex64], y: &mut [Complex64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = self.row(i).map(|(c, v)| v * x[c]).sum();
        }
    }

    pub fn mul_vec(&self, x: &[Complex64]) -> Vec<Complex64> {
        let mut y = vec![Complex64::new(0.0, 0.0); self.n];
        self.mul_vec_into(x, &mut y);
        y
    }
}

/// Non-Hermitian effective Hamiltonian `H̄ − i Σ (γ_j/2) a_j†a_j` in the
/// Fock basis, with ħ = 1:
///
/// ```text
/// H̄ = Σ_j [−Δ_j n_j + (V_j/2) a_j†a_j†a_j a_j − (G_j/2)(a_j†² + a_j²)]
///     + Σ_{j<k} J_jk (a_j†a_k + a_k†a_j)
/// ```
pub fn effective_hamiltonian(params: &NetworkParams, space: &FockSpace) -> Result<Csr> {
    if params.n_sites() != space.n_sites {
        return Err(KpoError::LengthMismatch { expected: params.n_sites(), got: space.n_sites });
    }
    let det = params.detunings();
    let n_max = space.n_max;
    let rows = (0..space.dim).map(|i| {
        let occ = space.occupations(i);
        let mut row: Vec<(u32, Complex64)> = Vec::new();
        let mut diag = Complex64::new(0.0, 0.0);
        for j in 0..space.n_sites {
            let n = occ[j] as f64;
            let s = space.stride(j);
            diag += Complex64::new(-det[j] * n + 0.5 * params.kerr()[j] * n * (n - 1.0), -0.5 * params.damping()[j] * n);
            let g = params.drive()[j];
            if g != 0.0 {
                // ⟨i|a†²|i−2⟩ and ⟨i|a²|i+2⟩
                if occ[j] >= 2 {
                    row.push(((i - 2 * s) as u32, Complex64::new(-0.5 * g * (n * (n - 1.0)).sqrt(), 0.0)));
                }
                if occ[j] + 2 < n_max {
                    row.push(((i + 2 * s) as u32, Complex64::new(-0.5 * g * ((n + 1.0) * (n + 2.0)).sqrt(), 0.0)));
                }
            }
            for k in 0..space.n_sites {
                let jk = params.coupling()[(j, k)];
                if k == j || jk == 0.0 {
                    continue;
                }
                // ⟨i|a_j†a_k|m⟩ with m = i − e_j + e_k
                if occ[j] >= 1 && occ[k] + 1 < n_max {
                    let m = i - s + space.stride(k);
                    let amp = (n * (occ[k] as f64 + 1.0)).sqrt();
                    row.push((m as u32, Complex64::new(jk * amp, 0.0)));
                }
            }
        }
        row.push((i as u32, diag));
        row
    });
    Ok(Csr::from_rows(space.dim, rows))
}
