//! Property-based invariants for the embedding and the constitutive split.

use nalgebra::DMatrix;
use proptest::prelude::*;

use rve_manifold::lle;
use rve_manifold::mesh::MaterialParams;
use rve_manifold::phase::pointwise;

fn small_cloud() -> impl Strategy<Value = (Vec<f64>, Vec<Vec<f64>>)> {
    // Query in R⁵ with 3 neighbors: generic position with probability 1.
    let coord = -10.0..10.0f64;
    (
        prop::collection::vec(coord.clone(), 5),
        prop::collection::vec(prop::collection::vec(coord, 5), 3),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn weights_sum_to_one((query, nbrs) in small_cloud()) {
        let k = nbrs.len();
        let flat: Vec<f64> = nbrs.iter().flatten().copied().collect();
        let nb = DMatrix::from_row_slice(k, 5, &flat);
        if let Ok(w) = lle::local_weights(&query, &nb, lle::DEFAULT_REG) {
            let sum: f64 = w.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-10, "Σw = {sum}");
        }
    }

    #[test]
    fn weights_are_translation_invariant((query, nbrs) in small_cloud(), shift in -50.0..50.0f64) {
        let k = nbrs.len();
        let flat: Vec<f64> = nbrs.iter().flatten().copied().collect();
        let nb = DMatrix::from_row_slice(k, 5, &flat);
        let w = match lle::local_weights(&query, &nb, lle::DEFAULT_REG) {
            Ok(w) => w,
            Err(_) => return Ok(()),
        };
        let query_t: Vec<f64> = query.iter().map(|v| v + shift).collect();
        let nb_t = nb.map(|v| v + shift);
        let w_t = lle::local_weights(&query_t, &nb_t, lle::DEFAULT_REG).unwrap();
        for (a, b) in w.iter().zip(&w_t) {
            prop_assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn split_energy_matches_isotropic_in_tension_without_damage(
        exx in 1e-4..1e-2f64,
        eyy in 1e-4..1e-2f64,
        exy in -1e-2..1e-2f64,
    ) {
        // With d = 0 (up to k_res) the volumetric/deviatoric split must
        // recombine to the isotropic strain energy whenever tr ε ≥ 0.
        let mat = MaterialParams::new(121.15, 80.77, 105.58, 172.27, 2.7, 40.0, 1e-12).unwrap();
        let split = pointwise::split_energy(exx, eyy, exy, 0.0, &mat);
        let iso = pointwise::isotropic_energy(exx, eyy, exy, &mat);
        prop_assert!((split - iso).abs() <= 1e-9 * iso.abs().max(1e-30),
            "split {split} vs isotropic {iso}");
    }

    #[test]
    fn split_stress_is_continuous_across_the_volumetric_kink(
        exy in -1e-3..1e-3f64,
        d in 0.0..1.0f64,
    ) {
        // tr ε crosses 0: the two sign branches must agree at the kink.
        let mat = MaterialParams::default();
        let eps = 1e-12;
        let above = pointwise::split_stress(eps, -0.5 * eps, exy, d, &mat);
        let below = pointwise::split_stress(-eps, 0.5 * eps, exy, d, &mat);
        prop_assert!((above.0 - below.0).abs() < 1e-9);
        prop_assert!((above.1 - below.1).abs() < 1e-9);
        prop_assert!((above.2 - below.2).abs() < 1e-9);
    }
}

#[test]
fn fitted_weight_rows_are_stochastic_and_reproducible() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
    let n = 40;
    let d = 6;
    let vals: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let x = DMatrix::from_row_slice(n, d, &vals);
    let man = lle::fit(x.clone(), 5, 3, lle::DEFAULT_REG).unwrap();
    for row in &man.weights {
        assert_eq!(row.len(), 5);
        let sum: f64 = row.iter().map(|&(_, w)| w).sum();
        assert!((sum - 1.0).abs() < 1e-10, "row sum = {sum}");
        assert!(row.windows(2).all(|p| p[0].0 < p[1].0), "unsorted row");
    }
    let man2 = lle::fit(x, 5, 3, lle::DEFAULT_REG).unwrap();
    assert_eq!(man, man2, "refit is not bitwise reproducible");
}
