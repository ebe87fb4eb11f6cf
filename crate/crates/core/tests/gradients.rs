//! Analytic gradients against central finite differences.

use encircle_core::costs::{Gaussian, Scenario, SpotAssignment};
use encircle_core::plants::PlantModel;
use encircle_core::Vec2;
use proptest::prelude::*;

const H: f64 = 1e-6;

fn vec2(r: f64) -> impl Strategy<Value = Vec2> {
    (-r..r, -r..r).prop_map(|(x, y)| Vec2::new(x, y))
}

fn full_scenario() -> impl Strategy<Value = Scenario> {
    (
        vec2(1.0),
        prop::collection::vec(vec2(4.0), 3),
        prop::collection::vec((vec2(3.0), 0.4..0.9f64, 0.5..1.5f64), 4),
        (0.5..30.0f64, 0.5..3.0f64, 0.5..20.0f64),
    )
        .prop_map(|(target, spots, gs, (g1, g2, g3))| Scenario {
            target,
            gammas: [g1, g2, g3],
            spots: spots
                .into_iter()
                .enumerate()
                .map(|(k, point)| SpotAssignment { robot: k, point })
                .collect(),
            gaussians: gs
                .into_iter()
                .map(|(mu, s, amp)| Gaussian { mu, s, amp })
                .collect(),
            ..Scenario::default()
        })
}

fn rel_err(a: Vec2, b: Vec2) -> f64 {
    (a - b).norm() / b.norm().max(1.0)
}

fn far_from_target(sc: &Scenario, u: &[Vec2]) -> bool {
    u.iter().all(|p| (p - sc.target).norm() > 0.1)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn reduced_gradient_matches_finite_differences(
        sc in full_scenario(),
        u in prop::collection::vec(vec2(5.0), 5),
        kinds in prop::collection::vec(0..3usize, 5),
    ) {
        prop_assume!(far_from_target(&sc, &u));
        let models: Vec<PlantModel> = kinds
            .iter()
            .map(|k| [PlantModel::single_integrator(), PlantModel::unicycle(), PlantModel::quadrotor()][*k])
            .collect();
        let g = sc.grad_reduced_central(&models, &u);
        for i in 0..u.len() {
            let mut fd = Vec2::zeros();
            for k in 0..2 {
                let mut up = u.clone();
                let mut dn = u.clone();
                up[i][k] += H;
                dn[i][k] -= H;
                fd[k] = (sc.cost_central(&models, &up) - sc.cost_central(&models, &dn)) / (2.0 * H);
            }
            prop_assert!(rel_err(g[i], fd) < 1e-5, "agent {i}: {} vs {}", g[i], fd);
        }
    }

    #[test]
    fn first_argument_gradient_matches_finite_differences(
        sc in full_scenario(),
        p in vec2(5.0),
        sigma in vec2(1.0),
        i in 0..5usize,
    ) {
        prop_assume!((p - sc.target).norm() > 0.1);
        let g = sc.grad1(i, p);
        let mut fd = Vec2::zeros();
        for k in 0..2 {
            let mut up = p;
            let mut dn = p;
            up[k] += H;
            dn[k] -= H;
            fd[k] = (sc.local_cost(i, up, sigma) - sc.local_cost(i, dn, sigma)) / (2.0 * H);
        }
        prop_assert!(rel_err(g, fd) < 1e-5, "{g} vs {fd}");
    }

    #[test]
    fn second_argument_gradient_matches_finite_differences(
        sc in full_scenario(),
        p in vec2(5.0),
        sigma in vec2(1.0),
    ) {
        let g = sc.grad2_cost(sigma);
        let mut fd = Vec2::zeros();
        for k in 0..2 {
            let mut up = sigma;
            let mut dn = sigma;
            up[k] += H;
            dn[k] -= H;
            fd[k] = (sc.local_cost(0, p, up) - sc.local_cost(0, p, dn)) / (2.0 * H);
        }
        prop_assert!(rel_err(g, fd) < 1e-5, "{g} vs {fd}");
    }

    #[test]
    fn bearing_jacobian_matches_finite_differences(p in vec2(5.0), v in vec2(2.0)) {
        let sc = Scenario::default();
        prop_assume!(p.norm() > 0.1);
        let mut jac = nalgebra::Matrix2::zeros();
        for k in 0..2 {
            let mut up = p;
            let mut dn = p;
            up[k] += H;
            dn[k] -= H;
            jac.set_column(k, &((sc.phi(up) - sc.phi(dn)) / (2.0 * H)));
        }
        let fd = jac.transpose() * v;
        prop_assert!(rel_err(sc.grad_phi_transpose_apply(p, v), fd) < 1e-6);
    }

    #[test]
    fn bearing_is_unit_and_aggregate_bounded(ps in prop::collection::vec(vec2(5.0), 1..12)) {
        let sc = Scenario::default();
        for p in &ps {
            prop_assume!(p.norm() >= 2.0 * sc.rho_min);
            prop_assert!((sc.phi(*p).norm() - 1.0).abs() < 1e-12);
        }
        let var = sc.circular_variance(&ps);
        prop_assert!(sc.sigma_central(&ps).norm() <= 1.0 + 1e-12);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&var));
    }

    #[test]
    fn second_argument_gradient_is_linear(a in vec2(1.0), b in vec2(1.0), s in -3.0..3.0f64, g1 in 0.0..30.0f64) {
        let sc = Scenario::coop_only(Vec2::zeros(), g1);
        let lhs = sc.grad2_cost(a + b * s);
        let rhs = sc.grad2_cost(a) + sc.grad2_cost(b) * s;
        prop_assert!((lhs - rhs).norm() < 1e-9);
    }
}

#[test]
fn gaussian_flank_gradient() {
    let mu = Vec2::new(0.7, -1.2);
    let sc = Scenario {
        gammas: [0.0, 0.0, 1.0],
        gaussians: vec![Gaussian { mu, s: 1.0, amp: 1.0 }],
        ..Scenario::default()
    };
    let g = sc.grad1(0, mu + Vec2::new(1.0, 0.0));
    assert!((g.x - (-(-0.5f64).exp())).abs() < 1e-12);
    assert!(g.y.abs() < 1e-12);
}
