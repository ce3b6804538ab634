use faer::Mat;
use nalgebra::DMatrix;
use num_complex::Complex64;

use super::liouvillian::Liouvillian;
use crate::error::{KpoError, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// Inverse of the no-jump part `ρ ↦ Aρ + ρA† − σρ`, `A = −i H_eff`, by a
/// complex Schur form of `A` and a triangular Sylvester solve.
struct SylvesterInverse {
    q: Mat<Complex64>,
    /// Upper-triangular Schur factor, column-major.
    t: Vec<Complex64>,
    d: usize,
    shift: f64,
}

impl SylvesterInverse {
    fn new(l: &Liouvillian, shift: f64) -> Self {
        let d = l.space.dim;
        let mut a = DMatrix::<Complex64>::zeros(d, d);
        for i in 0..d {
            for (k, v) in l.h_eff.row(i) {
                a[(i, k)] = -I * v;
            }
        }
        let (q, t) = nalgebra::Schur::new(a).unpack();
        let q = Mat::from_fn(d, d, |i, j| q[(i, j)]);
        let t = (0..d * d).map(|k| if k % d <= k / d { t[(k % d, k / d)] } else { ZERO }).collect();
        Self { q, t, d, shift }
    }

    fn apply(&self, l: &Liouvillian, x: &[Complex64]) -> Vec<Complex64> {
        let d = self.d;
        let mut rho = Mat::<Complex64>::zeros(d, d);
        for (k, v) in x.iter().enumerate() {
            let (i, j) = l.pair(k);
            rho[(i, j)] = *v;
        }
        let c = self.q.adjoint() * &rho * &self.q;
        // T X + X T† − σX = C, columns from last to first
        let t = &self.t;
        let mut xs = vec![ZERO; d * d];
        let mut rhs = vec![ZERO; d];
        for j in (0..d).rev() {
            for i in 0..d {
                rhs[i] = c[(i, j)];
            }
            for k in j + 1..d {
                let w = t[k * d + j].conj();
                if w == ZERO {
                    continue;
                }
                let col = &xs[k * d..(k + 1) * d];
                for i in 0..d {
                    rhs[i] -= w * col[i];
                }
            }
            let shift = t[j * d + j].conj() - self.shift;
            let col = &mut xs[j * d..(j + 1) * d];
            for i in (0..d).rev() {
                let mut s = rhs[i];
                for k in i + 1..d {
                    s -= t[k * d + i] * col[k];
                }
                col[i] = s / (t[i * d + i] + shift);
            }
        }
        let xm = Mat::from_fn(d, d, |i, j| xs[j * d + i]);
        let out = &self.q * &xm * self.q.adjoint();
        (0..l.n_unknowns())
            .map(|k| {
                let (i, j) = l.pair(k);
                out[(i, j)]
            })
            .collect()
    }
}

fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn norm(a: &[Complex64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Restarted GMRES for `M y = b`; returns `y` and the final relative residual.
pub(crate) fn gmres(
    apply: impl Fn(&[Complex64]) -> Vec<Complex64>,
    b: &[Complex64],
    restart: usize,
    max_iter: usize,
    tol: f64,
) -> (Vec<Complex64>, f64) {
    let n = b.len();
    let bnorm = norm(b).max(f64::MIN_POSITIVE);
    let mut y = vec![ZERO; n];
    let mut iters = 0;
    let mut rel = 1.0;
    while iters < max_iter {
        let my = apply(&y);
        let r: Vec<Complex64> = b.iter().zip(&my).map(|(p, q)| p - q).collect();
        let beta = norm(&r);
        rel = beta / bnorm;
        if rel <= tol {
            break;
        }
        let mut basis: Vec<Vec<Complex64>> = vec![r.iter().map(|z| z / beta).collect()];
        let mut h: Vec<Vec<Complex64>> = Vec::new();
        let mut rot: Vec<(f64, Complex64)> = Vec::new();
        let mut g = vec![Complex64::new(beta, 0.0)];
        for _ in 0..restart {
            iters += 1;
            let mut w = apply(basis.last().expect("basis is never empty"));
            let mut col = vec![ZERO; basis.len() + 1];
            for _ in 0..2 {
                for (k, v) in basis.iter().enumerate() {
                    let c = dot(v, &w);
                    col[k] += c;
                    w.iter_mut().zip(v).for_each(|(wi, vi)| *wi -= c * vi);
                }
            }
            let wn = norm(&w);
            col[basis.len()] = Complex64::new(wn, 0.0);
            for (k, &(c, s)) in rot.iter().enumerate() {
                let t = c * col[k] + s * col[k + 1];
                col[k + 1] = -s.conj() * col[k] + c * col[k + 1];
                col[k] = t;
            }
            let k = rot.len();
            let (a, bb) = (col[k], col[k + 1]);
            let r = (a.norm_sqr() + bb.norm_sqr()).sqrt();
            let (c, s) = if a.norm() == 0.0 {
                (0.0, bb.conj() / bb.norm())
            } else {
                (a.norm() / r, (a / a.norm()) * bb.conj() / r)
            };
            col[k] = c * a + s * bb;
            col[k + 1] = ZERO;
            g.push(-s.conj() * g[k]);
            g[k] *= c;
            rot.push((c, s));
            h.push(col);
            rel = g[k + 1].norm() / bnorm;
            if rel <= tol || wn == 0.0 || iters >= max_iter {
                break;
            }
            basis.push(w.iter().map(|z| z / wn).collect());
        }
        // back substitution on the triangular Hessenberg factor
        let m = h.len();
        let mut z = vec![ZERO; m];
        for i in (0..m).rev() {
            let mut s = g[i];
            for k in i + 1..m {
                s -= h[k][i] * z[k];
            }
            z[i] = s / h[i][i];
        }
        for (k, zk) in z.iter().enumerate() {
            y.iter_mut().zip(&basis[k]).for_each(|(yi, vi)| *yi += zk * vi);
        }
        if rel <= tol {
            break;
        }
    }
    (y, rel)
}

/// Steady state of `l` from the bordered system `L x + v tr(x) = v` with the
/// vacuum projector as `v`, solved by right-preconditioned GMRES.
pub(crate) fn krylov_steady_state(l: &Liouvillian, tol: f64, max_iter: usize) -> Result<Vec<Complex64>> {
    let d = l.space.dim;
    let diag: Vec<usize> = (0..d).filter_map(|k| l.unknown(k, k)).collect();
    let r0 = l.unknown(0, 0).expect("vacuum element is always kept");
    let pre = SylvesterInverse::new(l, 1e-2 * l.min_damping);
    let bordered = |x: &[Complex64]| {
        let mut out = l.apply(x);
        out[r0] += diag.iter().map(|&u| x[u]).sum::<Complex64>();
        out
    };
    let mut b = vec![ZERO; l.n_unknowns()];
    b[r0] = Complex64::new(1.0, 0.0);
    let (y, rel) = gmres(|y| bordered(&pre.apply(l, y)), &b, 80, max_iter, tol);
    if !(rel <= tol) {
        return Err(KpoError::NonConvergence(format!(
            "GMRES stopped at relative residual {rel:e} after {max_iter} iterations"
        )));
    }
    Ok(pre.apply(l, &y))
}
