use kpo_core::model::{lobe_threshold, normal_mode_basis, normal_mode_drives, normal_modes};
use kpo_core::NetworkParams;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn symmetric(n: usize, vals: &[f64]) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(n, n);
    let mut it = vals.iter();
    for a in 0..n {
        for b in a + 1..n {
            let v = *it.next().unwrap();
            j[(a, b)] = v;
            j[(b, a)] = v;
        }
    }
    j
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn homogeneous_drive_stays_diagonal(
        n in 1usize..=8,
        vals in prop::collection::vec(-1.0..1.0f64, 28),
        delta in -2.0..2.0f64,
        g in 0.0..1.5f64,
    ) {
        let j = symmetric(n, &vals);
        let basis = normal_mode_basis(&vec![delta; n], &j);
        let gt = normal_mode_drives(&basis, &vec![g; n]);
        for a in 0..n {
            for b in 0..n {
                if a != b {
                    prop_assert!(gt[(a, b)].abs() < 1e-12);
                }
            }
            prop_assert!((gt[(a, a)] - g).abs() < 1e-12);
        }
    }

    #[test]
    fn lobe_threshold_monotone(d in 0.0..3.0f64, dd in 0.0..1.0f64, gamma in 0.0..1.0f64, dg in 0.0..1.0f64) {
        prop_assert!(lobe_threshold(d + dd, gamma) >= lobe_threshold(d, gamma));
        prop_assert!(lobe_threshold(-(d + dd), gamma) >= lobe_threshold(-d, gamma));
        prop_assert!(lobe_threshold(d, gamma + dg) >= lobe_threshold(d, gamma));
    }

    #[test]
    fn pair_eigen_detunings(delta in -2.0..2.0f64, j in -1.0..1.0f64) {
        let p = NetworkParams::identical(2, delta, 1.0, 0.1, j, 0.1).unwrap();
        let b = normal_modes(&p);
        let mut expect = [delta - j.abs(), delta + j.abs()];
        expect.sort_by(f64::total_cmp);
        for (got, want) in b.eigen_detunings.iter().zip(expect) {
            prop_assert!((got - want).abs() < 1e-12);
        }
    }
}
