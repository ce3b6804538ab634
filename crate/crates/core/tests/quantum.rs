use kpo_core::meanfield::{find_steady_states, SolverOptions};
use kpo_core::quantum::*;
use kpo_core::{Complex64, NetworkParams};
use proptest::prelude::*;

fn pair(delta: f64, g: f64) -> NetworkParams {
    NetworkParams::identical(2, delta, 1.0, g, -0.25, 0.1).unwrap()
}

fn correspondence(p: &NetworkParams) -> (LindbladRun, Correspondence) {
    let states = find_steady_states(p, &[], &SolverOptions::default()).unwrap();
    let amax = states.iter().flat_map(|s| s.amplitudes.iter()).map(|a| a.norm()).fold(0.0, f64::max);
    let run = solve_lindblad(p, &QuantumOptions::default()).unwrap();
    let dist = quadrature_distribution(&run.state, &default_axes(2, amax, 121)).unwrap();
    assert!((dist.integral - 1.0).abs() < 1e-4);
    assert!(dist.p.iter().all(|v| *v > -1e-12));
    let c = Correspondence::new(local_maxima(&dist, 0.01), mean_field_points(&states));
    (run, c)
}

#[test]
fn below_threshold_single_hot_spot() {
    let (run, c) = correspondence(&pair(0.0, 0.03));
    assert_eq!(c.maxima.len(), 1);
    assert!(c.maxima[0].0.abs() < 1e-9 && c.maxima[0].1.abs() < 1e-9);
    assert!(c.holds(1.5 / 2f64.sqrt()));
    assert!(run.state.mean_photons[0] < 0.01);
}

#[test]
fn symmetric_pair_hot_spots() {
    let (run, c) = correspondence(&pair(-0.25, 0.45));
    assert_eq!(c.maxima.len(), 2);
    for m in &c.maxima {
        assert!((m.0 - m.1).abs() < 1e-9, "S hot spots lie on the diagonal");
    }
    assert!(c.holds(1.5 / 2f64.sqrt()));
    let s = &run.state;
    assert!(s.mean_amplitudes.iter().all(|a| a.norm() < 1e-6));
    assert!(s.parity_commutator < 1e-8);
    assert!(s.leakage < 1e-6);
}

#[test]
fn cutoff_raised_until_converged() {
    let p = pair(1.1, 0.6);
    let run = solve_lindblad(&p, &QuantumOptions::default()).unwrap();
    assert!(run.n_max > initial_cutoff(&p));
    assert!(run.photon_change < 1e-4 && run.state.leakage < 1e-6);
    let tight = QuantumOptions { n_max: Some(initial_cutoff(&p)), ..Default::default() };
    assert!(solve_lindblad(&p, &tight).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn liouvillian_preserves_trace_and_hermiticity(
        delta in -1.0..1.0f64, g in 0.0..1.0f64, j in -0.5..0.5f64, seed in 0u64..1000
    ) {
        use rand::{Rng, SeedableRng};
        let p = NetworkParams::identical(2, delta, 1.0, g, j, 0.1).unwrap();
        let space = FockSpace::new(2, 4).unwrap();
        let l = build_liouvillian(&p, &space, false).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let d = space.dim;
        let m = nalgebra::DMatrix::<Complex64>::from_fn(d, d, |_, _| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        let rho = &m * m.adjoint();
        let out = l.to_density(&l.apply(&l.from_density(&rho)));
        prop_assert!(out.trace().norm() < 1e-10);
        let herm = &out - out.adjoint();
        prop_assert!(herm.iter().all(|z| z.norm() < 1e-10));
    }

    #[test]
    fn cat_parity(re in -2.0..2.0f64, im in -2.0..2.0f64) {
        prop_assume!(re.hypot(im) > 0.05);
        let alpha = Complex64::new(re, im);
        let even = cat_state(alpha, Parity::Even, 40).unwrap();
        let odd = cat_state(alpha, Parity::Odd, 40).unwrap();
        for n in 0..40 {
            let z = if n % 2 == 0 { odd.vector[n] } else { even.vector[n] };
            prop_assert!(z.norm() < 1e-12);
        }
    }
}
