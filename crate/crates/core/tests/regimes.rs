//! Qualitative regimes: convergent flow maps at FA p = 5, divergent at FB p = 10.3.

use rg_lattice_core::spectral::perturbation_growth;
use rg_lattice_core::{staircase_initial, TransferSpec};

#[test]
fn perturbations_shrink_in_the_convergent_regime() {
    let a = staircase_initial(16);
    let g = perturbation_growth(&TransferSpec::fa(5.0), 0.25, 1e-12, &a, &[4, 8, 12]).unwrap();
    assert!(g.norms[2] < g.norms[0], "{:?}", g.norms);
}

#[test]
fn perturbations_explode_in_the_chaotic_regime() {
    let a = staircase_initial(16);
    let g = perturbation_growth(&TransferSpec::fb(10.3), 0.25, 1e-15, &a, &[3, 9]).unwrap();
    assert!(g.norms[1] > 1e6 * g.norms[0], "{:?}", g.norms);
}

#[test]
fn zero_perturbation_gives_a_zero_curve() {
    let a = staircase_initial(8);
    let g = perturbation_growth(&TransferSpec::fb(10.3), 0.25, 0.0, &a, &[0, 3, 6]).unwrap();
    assert!(g.norms.iter().all(|&x| x == 0.0));
}
