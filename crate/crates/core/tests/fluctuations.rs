use kpo_core::fluctuations::{bdg_matrix, fluctuation_spectrum, linearization_exponents, sa_transform, transfer_psd};
use kpo_core::meanfield::{characteristic_exponents, find_steady_states, jacobian, SolverOptions};
use kpo_core::{Complex64, NetworkParams};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_params(rng: &mut ChaCha8Rng, n: usize) -> NetworkParams {
    let det: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let kerr: Vec<f64> = (0..n).map(|_| rng.random_range(0.3..1.5)).collect();
    let drive: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    let damp: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..0.3)).collect();
    let mut j = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in a + 1..n {
            let v = rng.random_range(-0.4..0.4);
            j[(a, b)] = v;
            j[(b, a)] = v;
        }
    }
    NetworkParams::from_detunings(&det, &kerr, &drive, j, &damp).unwrap()
}

/// Greedy pairing distance between two eigenvalue multisets.
fn multiset_distance(a: &[Complex64], b: &[Complex64]) -> f64 {
    let mut used = vec![false; b.len()];
    let mut worst: f64 = 0.0;
    for x in a {
        let (k, d) = b
            .iter()
            .enumerate()
            .filter(|(k, _)| !used[*k])
            .map(|(k, y)| (k, (x - y).norm()))
            .min_by(|p, q| p.1.total_cmp(&q.1))
            .unwrap();
        used[k] = true;
        worst = worst.max(d);
    }
    worst
}

#[test]
fn complex_linearization_matches_jacobian() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let opts = SolverOptions { n_starts: 24, ..Default::default() };
    let mut checked = 0;
    while checked < 100 {
        let n = rng.random_range(1..=3);
        let p = random_params(&mut rng, n);
        for st in find_steady_states(&p, &[], &opts).unwrap().into_iter().filter(|s| s.stable) {
            let blocks = bdg_matrix(&p, &st.amplitudes).unwrap();
            let lin = linearization_exponents(&p, &blocks);
            let jac = characteristic_exponents(&jacobian(&p, &st.amplitudes));
            let d = multiset_distance(&lin, &jac);
            assert!(d <= 1e-9, "N = {n}, distance {d:e}");
            // squeeze block is symmetric
            assert_eq!(blocks.squeeze_block.transpose(), blocks.squeeze_block);
            checked += 1;
        }
    }
}

/// Stationary covariance from `M C + C Mᵀ + σ² I = 0`, solved as a dense
/// Kronecker system.
fn lyapunov(m: &DMatrix<f64>, sigma2: f64) -> DMatrix<f64> {
    let d = m.nrows();
    let id = DMatrix::<f64>::identity(d, d);
    let big = id.kronecker(m) + m.kronecker(&id);
    let rhs = DVector::from_iterator(d * d, (-sigma2 * &id).iter().copied());
    let c = big.lu().solve(&rhs).unwrap();
    DMatrix::from_column_slice(d, d, c.as_slice())
}

fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2).zip(y.windows(2)).map(|(xw, yw)| 0.5 * (xw[1] - xw[0]) * (yw[0] + yw[1])).sum()
}

#[test]
fn psd_integrates_to_lyapunov_variance() {
    let sigma2 = 0.4;
    let cases = [
        NetworkParams::identical(2, 1.2, 1.0, 0.03, -0.25, 0.1).unwrap(),
        NetworkParams::identical(1, 0.8, 1.0, 0.02, 0.0, 0.05).unwrap(),
        NetworkParams::identical(3, 1.5, 1.0, 0.05, -0.2, 0.1).unwrap(),
    ];
    for p in cases {
        let zero = vec![Complex64::new(0.0, 0.0); p.n_sites()];
        let m = jacobian(&p, &zero);
        let mu = characteristic_exponents(&m);
        let top = 20.0 * mu.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let n = 80_001;
        let grid: Vec<f64> = (0..n).map(|i| -top + 2.0 * top * i as f64 / (n - 1) as f64).collect();
        let spec = fluctuation_spectrum(&p, &zero, sigma2, Some(&grid)).unwrap();
        let cov = lyapunov(&m, sigma2);
        for j in 0..p.n_sites() {
            let var = trapezoid(&grid, &spec.psd_site[j]) / (2.0 * std::f64::consts::PI);
            let expect = cov[(2 * j, 2 * j)] + cov[(2 * j + 1, 2 * j + 1)];
            assert!((var - expect).abs() <= 0.02 * expect, "site {j}: {var} vs {expect}");
        }
    }
}

#[test]
fn psd_even_and_nonnegative() {
    let p = NetworkParams::identical(2, 0.4, 1.0, 0.05, -0.25, 0.1).unwrap();
    let m = jacobian(&p, &[Complex64::new(0.0, 0.0); 2]);
    let grid: Vec<f64> = (0..101).map(|i| -2.0 + 0.04 * i as f64).collect();
    let psd = transfer_psd(&m, 1.0, &grid).unwrap();
    for row in &psd {
        for i in 0..grid.len() {
            assert!(row[i] >= 0.0);
            assert!((row[i] - row[grid.len() - 1 - i]).abs() <= 1e-12 * row[i]);
        }
    }
}

fn series() -> impl Strategy<Value = Vec<(f64, f64, f64, f64)>> {
    prop::collection::vec((-10.0..10.0f64, -10.0..10.0f64, -10.0..10.0f64, -10.0..10.0f64), 1..50)
}

proptest! {
    #[test]
    fn sa_transform_is_an_orthogonal_involution(s in series()) {
        let a: Vec<Complex64> = s.iter().map(|t| Complex64::new(t.0, t.1)).collect();
        let b: Vec<Complex64> = s.iter().map(|t| Complex64::new(t.2, t.3)).collect();
        let (sym, anti) = sa_transform(&a, &b).unwrap();
        for k in 0..a.len() {
            let before = a[k].norm_sqr() + b[k].norm_sqr();
            let after = sym[k].norm_sqr() + anti[k].norm_sqr();
            prop_assert!((before - after).abs() <= 1e-12 * before.max(1.0));
        }
        let (a2, b2) = sa_transform(&sym, &anti).unwrap();
        for k in 0..a.len() {
            prop_assert!((a2[k] - a[k]).norm() <= 1e-12 * (1.0 + a[k].norm()));
            prop_assert!((b2[k] - b[k]).norm() <= 1e-12 * (1.0 + b[k].norm()));
        }
    }
}
