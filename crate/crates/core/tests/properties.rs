use proptest::prelude::*;
use rg_lattice_core::algebra::{self, DyadicTime, FlowMap};
use rg_lattice_core::lattice::{self, due_scales, LatticeState, RegularizationSpec, SimConfig, Simulation};
use rg_lattice_core::rng;
use rg_lattice_core::stats::max_abs_diff;
use rg_lattice_core::stochastic::{kernel_sample_at, ks_distance};
use rg_lattice_core::TransferSpec;

fn transfer() -> impl Strategy<Value = TransferSpec> {
    prop_oneof![
        (3.0..12.0f64).prop_map(TransferSpec::fa),
        (3.0..12.0f64).prop_map(TransferSpec::fb),
    ]
}

fn state(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..1.0f64, len)
}

/// Scale n is due at tick k when k is a multiple of 2^(N - n).
fn due_oracle(k: u64, n_visc: usize) -> usize {
    (0..=n_visc).find(|&n| k % (1u64 << (n_visc - n)) == 0).expect("scale N is always due")
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn due_scales_match_divisibility(k in 0u64..1 << 20, n in 0usize..16) {
        prop_assert_eq!(due_scales(k, n), due_oracle(k, n));
    }

    #[test]
    fn energy_is_conserved_and_stays_non_negative(
        spec in transfer(),
        n in 0usize..9,
        alpha in 0.01..1.0f64,
        a in state(12),
        forcing in any::<bool>(),
        units in 1u64..4,
    ) {
        let config = SimConfig::deterministic(spec, n, alpha).with_forcing(forcing).with_n_cap(11.max(n));
        let mut sim = Simulation::new(config, LatticeState::new(a.clone()).unwrap()).unwrap();
        let mut r = rng::stream(0, 0, 0);
        for _ in 0..units {
            sim.step_unit(&mut r).unwrap();
        }
        let u = sim.state().values();
        prop_assert!(u.iter().all(|&x| x >= 0.0));
        let ledger = sim.ledger();
        let initial: f64 = a.iter().sum();
        let balance = u.iter().sum::<f64>() + ledger.dissipated + ledger.truncated - ledger.injected - initial;
        prop_assert!(balance.abs() <= 1e-12 * (initial + ledger.injected).max(1.0) * units as f64);
    }

    #[test]
    fn noisy_dissipation_conserves_energy(n in 0usize..8, a in state(8), seed in any::<u64>()) {
        let config = SimConfig::new(TransferSpec::fb(10.3), RegularizationSpec::noise(n, 0.4, 0.5));
        let u = kernel_sample_at(&config, &a, seed, 3).unwrap();
        let lost = a.iter().sum::<f64>() - u.iter().sum::<f64>();
        prop_assert!(lost >= -1e-15);
        prop_assert!(u.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn rg_of_simulator_is_next_simulator(spec in transfer(), n in 0usize..9, alpha in 0.01..1.0f64, a in state(11)) {
        let a = &a[..n + 2];
        let composed = algebra::rg_apply(&FlowMap::simulator(spec, n, alpha), a, &spec).unwrap();
        let direct = lattice::flow_map(&spec, n + 1, alpha, a).unwrap();
        prop_assert!(max_abs_diff(&composed, &direct) <= 1e-12);
    }

    #[test]
    fn dyadic_composition_matches_direct_run(
        spec in transfer(),
        n in 1usize..7,
        alpha in 0.01..1.0f64,
        a in state(7),
        pick in any::<prop::sample::Index>(),
    ) {
        let a = &a[..n + 1];
        let times = DyadicTime::enumerate(2, 3, n);
        let t = &times[pick.index(times.len())];
        let composed = algebra::state_at_dyadic_time(a, n, alpha, &spec, t).unwrap();
        let mut sim = Simulation::new(SimConfig::deterministic(spec, n, alpha), LatticeState::new(a.to_vec()).unwrap()).unwrap();
        let mut r = rng::stream(0, 0, 0);
        for _ in 0..t.ticks(n).unwrap() {
            sim.tick(&mut r).unwrap();
        }
        let tail = &sim.state().values()[t.finest()..=n];
        prop_assert!(max_abs_diff(&composed[..tail.len()], tail) <= 1e-12);
    }

    #[test]
    fn samples_depend_only_on_seed_and_index(seed in any::<u64>(), i in 0u64..1000, j in 0u64..1000) {
        let config = SimConfig::new(TransferSpec::fb(10.3), RegularizationSpec::noise(5, 0.4, 0.5));
        let a = rg_lattice_core::staircase_initial(6);
        let forward = (kernel_sample_at(&config, &a, seed, i).unwrap(), kernel_sample_at(&config, &a, seed, j).unwrap());
        let backward = (kernel_sample_at(&config, &a, seed, j).unwrap(), kernel_sample_at(&config, &a, seed, i).unwrap());
        prop_assert_eq!(&forward.0, &backward.1);
        prop_assert_eq!(&forward.1, &backward.0);
    }

    #[test]
    fn ks_is_a_symmetric_distance_in_unit_range(
        x in prop::collection::vec(-5.0..5.0f64, 1..60),
        y in prop::collection::vec(-5.0..5.0f64, 1..60),
    ) {
        let d = ks_distance(&x, &y).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert_eq!(d, ks_distance(&y, &x).unwrap());
        prop_assert_eq!(ks_distance(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn ks_matches_brute_force(
        x in prop::collection::vec(0u8..8, 1..40),
        y in prop::collection::vec(0u8..8, 1..40),
    ) {
        let xf: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        let yf: Vec<f64> = y.iter().map(|&v| v as f64).collect();
        let cdf = |s: &[f64], t: f64| s.iter().filter(|&&v| v <= t).count() as f64 / s.len() as f64;
        let brute = (0..8).map(|t| (cdf(&xf, t as f64) - cdf(&yf, t as f64)).abs()).fold(0.0, f64::max);
        prop_assert!((ks_distance(&xf, &yf).unwrap() - brute).abs() < 1e-15);
    }
}

#[test]
fn due_scales_at_small_ticks() {
    let n = 3;
    let due: Vec<usize> = (0..9).map(|k| due_scales(k, n)).collect();
    assert_eq!(due, [0, 3, 2, 3, 1, 3, 2, 3, 0]);
}
