use encircle_core::graph::{generate_er, CommGraph};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn er_graphs_are_valid_and_balanced(n in 2..25usize, p in 0.3..1.0f64, seed in any::<u64>()) {
        let g = generate_er(n, p, seed).unwrap();
        prop_assert!(g.validate().is_valid());
        let l = g.laplacian();
        for i in 0..n {
            prop_assert_eq!(g.weight(i, i), 0.0);
            prop_assert!(l.row(i).sum().abs() <= 1e-12);
            prop_assert!(l.column(i).sum().abs() <= 1e-12);
            prop_assert_eq!(g.in_degree(i), g.out_degree(i));
        }
    }

    #[test]
    fn er_is_a_pure_function_of_its_seed(n in 2..15usize, seed in any::<u64>()) {
        let a = generate_er(n, 0.5, seed).unwrap();
        let b = generate_er(n, 0.5, seed).unwrap();
        prop_assert_eq!(a.edge_list(), b.edge_list());
    }

    #[test]
    fn rescaling_keeps_balance_and_scales_spectrum_bound(n in 2..20usize, seed in any::<u64>()) {
        let g = generate_er(n, 0.5, seed).unwrap().rescaled(1.0 / n as f64).unwrap();
        prop_assert!(g.validate().is_valid());
        // Gershgorin: λmax(L) ≤ 2 max in-degree < 2
        let max_deg = (0..n).map(|i| g.in_degree(i)).fold(0.0, f64::max);
        prop_assert!(2.0 * max_deg < 2.0);
    }
}

#[test]
fn directed_ring_laplacian_annihilates_ones_both_sides() {
    let g = CommGraph::ring(6).unwrap();
    let l = g.laplacian();
    let ones = nalgebra::DVector::from_element(6, 1.0);
    assert_eq!((&l * &ones).amax(), 0.0);
    assert_eq!((l.transpose() * ones).amax(), 0.0);
}
