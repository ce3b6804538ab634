use kpo_core::meanfield::*;
use kpo_core::model::{lobe_threshold, normal_modes};
use kpo_core::{Complex64, NetworkParams};
use proptest::prelude::*;

fn origin_stable(p: &NetworkParams) -> bool {
    let zero = vec![Complex64::new(0.0, 0.0); p.n_sites()];
    characteristic_exponents(&jacobian(p, &zero)).iter().all(|m| m.re < 0.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn z2_partner_and_stability_margin(
        n in 1usize..=2,
        delta in -1.0..1.5f64,
        g in 0.0..1.0f64,
        j in -0.5..0.5f64,
    ) {
        let p = NetworkParams::identical(n, delta, 1.0, g, j, 0.1).unwrap();
        let opts = SolverOptions::default();
        let states = find_steady_states(&p, &[], &opts).unwrap();
        for s in &states {
            let neg: Vec<Complex64> = s.amplitudes.iter().map(|a| -a).collect();
            let partner = states.iter().find(|o| {
                o.amplitudes.iter().zip(&neg).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max) < 1e-6
            });
            prop_assert!(partner.is_some(), "missing −α partner");
            let mu = characteristic_exponents(&jacobian(&p, &neg));
            for (a, b) in mu.iter().zip(&s.exponents) {
                prop_assert!((a - b).norm() < 1e-9);
            }
            let top = s.max_re_exponent();
            if s.stable {
                prop_assert!(top < -opts.stability_margin);
            } else {
                prop_assert!(top > opts.stability_margin);
            }
        }
    }
}

#[test]
fn origin_exponents_closed_form() {
    for (delta, g) in [(0.3, 0.2), (-0.4, 0.5), (0.0, 0.05), (1.2, 0.9)] {
        let p = NetworkParams::identical(2, delta, 1.0, g, -0.25, 0.1).unwrap();
        let modes = normal_modes(&p);
        let mut expect: Vec<Complex64> = Vec::new();
        for k in 0..2 {
            let (dt, gt) = (modes.eigen_detunings[k], modes.mode_drives[(k, k)]);
            let root = Complex64::new(gt * gt - dt * dt, 0.0).sqrt();
            expect.push(Complex64::new(-0.05, 0.0) + root);
            expect.push(Complex64::new(-0.05, 0.0) - root);
        }
        let zero = vec![Complex64::new(0.0, 0.0); 2];
        let got = characteristic_exponents(&jacobian(&p, &zero));
        for e in &expect {
            let best = got.iter().map(|m| (m - e).norm()).fold(f64::INFINITY, f64::min);
            assert!(best < 1e-9, "{e} not among {got:?}");
        }
    }
}

#[test]
fn origin_boundary_follows_lobes() {
    let base = NetworkParams::identical(2, 0.0, 1.0, 0.0, -0.25, 0.1).unwrap();
    for delta in [-0.8, -0.25, 0.1, 0.25, 0.7] {
        let p = base.with_detuning(delta);
        let modes = normal_modes(&p);
        let expect = modes.eigen_detunings.iter().map(|d| lobe_threshold(*d, 0.1)).fold(f64::INFINITY, f64::min);
        let (mut lo, mut hi) = (0.0, 2.0);
        while hi - lo > 1e-10 {
            let mid = 0.5 * (lo + hi);
            if origin_stable(&p.with_drive(mid)) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((0.5 * (lo + hi) - expect).abs() < 1e-6, "Δ = {delta}");
    }
}

#[test]
fn continuation_is_smooth_away_from_bifurcations() {
    let p = NetworkParams::identical(2, 0.0, 1.0, 0.4, -0.25, 0.1).unwrap();
    let grid: Vec<f64> = (0..61).map(|i| -0.6 + 0.02 * i as f64).collect();
    let sweep = bifurcation_sweep(&p, SweepAxis::Detuning, &grid, &SweepOptions::default()).unwrap();
    let h = 0.02;
    for w in sweep.points.windows(3) {
        if !w[1].bifurcations.is_empty() || !w[2].bifurcations.is_empty() {
            continue;
        }
        for (k, id) in w[2].branch_ids.iter().enumerate() {
            let (Some(a), Some(b)) = (
                w[0].branch_ids.iter().position(|x| x == id),
                w[1].branch_ids.iter().position(|x| x == id),
            ) else {
                continue;
            };
            let dist = |x: &[Complex64], y: &[Complex64]| {
                x.iter().zip(y).map(|(p, q)| (p - q).norm_sqr()).sum::<f64>().sqrt()
            };
            let slope = dist(&w[1].states[b].amplitudes, &w[0].states[a].amplitudes) / h;
            let jump = dist(&w[2].states[k].amplitudes, &w[1].states[b].amplitudes);
            assert!(jump <= 5.0 * h * slope.max(0.05), "jump {jump} at {}", w[2].sweep_value);
        }
    }
}
