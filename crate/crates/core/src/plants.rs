//! Pre-stabilized robot plants `x' = r(x, u)`.
//!
//! Every model takes a planar set-point `u` and has an equilibrium
//! `x = h(u)` whose position block equals `u`. The maps `h` are affine with
//! identity position block, so `∇h(u)` acting on a state-space covector just
//! selects its position coordinates.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Vec2;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{what}: expected dimension {expected}, got {got}")]
pub struct PlantError {
    pub what: &'static str,
    pub expected: usize,
    pub got: usize,
}

/// Robot state. Layout depends on the model:
/// `[p1, p2]`, `[p1, p2, psi]` or `[p1, p2, v1, v2]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantState(pub Vec<f64>);

impl PlantState {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// `self += scale * delta`
    pub fn add_scaled(&mut self, delta: &[f64], scale: f64) {
        for (x, d) in self.0.iter_mut().zip(delta) {
            *x += scale * d;
        }
    }
}

/// Gains of the unicycle pose-following controller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnicycleParams {
    /// Linear speed gain on distance to the set-point.
    pub k_v: f64,
    /// Angular gain on bearing / heading error.
    pub k_omega: f64,
    pub v_max: f64,
    pub omega_max: f64,
    /// Heading held at rest.
    pub heading_ref: f64,
    /// Weight of the final-heading term in the steering law.
    pub heading_weight: f64,
}

impl Default for UnicycleParams {
    fn default() -> Self {
        Self {
            k_v: 1.0,
            k_omega: 2.0,
            v_max: 0.5,
            omega_max: 2.0,
            heading_ref: 0.0,
            heading_weight: 1.0,
        }
    }
}

/// Closed-loop robot model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlantModel {
    /// `p' = k (u - p)`.
    #[serde(rename = "single_integrator")]
    SingleIntegrator2D { gain: f64 },
    /// Differential-drive robot under a polar-coordinate pose regulator.
    Unicycle(UnicycleParams),
    /// Planar double integrator under a PD tracker; altitude is held at
    /// `z_static` and is not part of the state.
    #[serde(rename = "quadrotor")]
    ReducedQuadrotor { kp: f64, kd: f64, z_static: f64 },
}

impl PlantModel {
    pub fn single_integrator() -> Self {
        PlantModel::SingleIntegrator2D { gain: 1.0 }
    }

    pub fn unicycle() -> Self {
        PlantModel::Unicycle(UnicycleParams::default())
    }

    /// Critically damped tracker with `kp = 1`, `kd = 2`.
    pub fn quadrotor() -> Self {
        PlantModel::ReducedQuadrotor {
            kp: 1.0,
            kd: 2.0,
            z_static: 1.0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PlantModel::SingleIntegrator2D { .. } => "single",
            PlantModel::Unicycle(_) => "unicycle",
            PlantModel::ReducedQuadrotor { .. } => "quad",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            PlantModel::SingleIntegrator2D { .. } => 2,
            PlantModel::Unicycle(_) => 3,
            PlantModel::ReducedQuadrotor { .. } => 4,
        }
    }

    fn check(&self, what: &'static str, got: usize) -> Result<(), PlantError> {
        let expected = self.dim();
        if got == expected {
            Ok(())
        } else {
            Err(PlantError {
                what,
                expected,
                got,
            })
        }
    }

    /// Planar position `p(x)`.
    /// Flight altitude; zero for ground robots. Robots at different
    /// altitudes never collide.
    pub fn altitude(&self) -> f64 {
        match self {
            PlantModel::ReducedQuadrotor { z_static, .. } => *z_static,
            _ => 0.0,
        }
    }

    pub fn position(&self, x: &PlantState) -> Vec2 {
        Vec2::new(x.0[0], x.0[1])
    }

    /// Steady-state map `h(u)`.
    pub fn steady_state(&self, u: Vec2) -> PlantState {
        match self {
            PlantModel::SingleIntegrator2D { .. } => PlantState(vec![u.x, u.y]),
            PlantModel::Unicycle(p) => PlantState(vec![u.x, u.y, p.heading_ref]),
            PlantModel::ReducedQuadrotor { .. } => PlantState(vec![u.x, u.y, 0.0, 0.0]),
        }
    }

    /// State at position `p` with every other coordinate at its rest value.
    pub fn state_at(&self, p: Vec2) -> PlantState {
        self.steady_state(p)
    }

    /// `∇h(u) v`: maps a state-space covector to the input space.
    pub fn jacobian_h_transpose_apply(&self, _u: Vec2, v: &[f64]) -> Result<Vec2, PlantError> {
        self.check("covector", v.len())?;
        Ok(Vec2::new(v[0], v[1]))
    }

    /// Zero-pads a position covector to the state dimension.
    pub fn lift(&self, g: Vec2) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        out[0] = g.x;
        out[1] = g.y;
        out
    }

    /// Unicycle linear/angular speed commands. `None` for other kinds.
    pub fn unicycle_commands(&self, x: &PlantState, u: Vec2) -> Option<(f64, f64)> {
        match self {
            PlantModel::Unicycle(p) => Some(unicycle_law(p, x, u)),
            _ => None,
        }
    }

    /// `r(x, u)`.
    pub fn derivative(&self, x: &PlantState, u: Vec2) -> Result<Vec<f64>, PlantError> {
        self.guarded_derivative(x, u, None, 0.0)
    }

    /// `r(x, u)` with the planar velocity command passed through `guard`.
    ///
    /// `dt` is only used by the quadrotor, whose guard acts on the velocity
    /// reached after one step.
    pub fn guarded_derivative(
        &self,
        x: &PlantState,
        u: Vec2,
        guard: Option<&dyn VelocityGuard>,
        dt: f64,
    ) -> Result<Vec<f64>, PlantError> {
        self.check("state", x.dim())?;
        let s = &x.0;
        Ok(match self {
            PlantModel::SingleIntegrator2D { gain } => {
                let mut v = (u - Vec2::new(s[0], s[1])) * *gain;
                if let Some(g) = guard {
                    v = g.filter_velocity(v);
                }
                vec![v.x, v.y]
            }
            PlantModel::Unicycle(p) => {
                let (mut speed, mut omega) = unicycle_law(p, x, u);
                let heading = Vec2::new(s[2].cos(), s[2].sin());
                if let Some(g) = guard {
                    let v_des = heading * speed;
                    let v_safe = g.filter_velocity(v_des);
                    if (v_safe - v_des).norm() > 1e-9 {
                        // blocked: turn the driving axis onto the safe
                        // direction so the robot slides past the neighbor
                        let ang = wrap_angle(v_safe.y.atan2(v_safe.x) - s[2]);
                        let axis = if ang > PI / 2.0 {
                            ang - PI
                        } else if ang < -PI / 2.0 {
                            ang + PI
                        } else {
                            ang
                        };
                        if v_safe.norm() > 1e-9 {
                            omega = (p.k_omega * axis).clamp(-p.omega_max, p.omega_max);
                        }
                        speed = v_safe.dot(&heading);
                    }
                    speed = g.filter_speed(heading, speed);
                }
                vec![speed * heading.x, speed * heading.y, omega]
            }
            PlantModel::ReducedQuadrotor { kp, kd, .. } => {
                let pos = Vec2::new(s[0], s[1]);
                let vel = Vec2::new(s[2], s[3]);
                let mut acc = (u - pos) * *kp - vel * *kd;
                if let Some(g) = guard {
                    if dt > 0.0 {
                        let next = g.filter_velocity(vel + acc * dt);
                        acc = (next - vel) / dt;
                    }
                }
                vec![vel.x, vel.y, acc.x, acc.y]
            }
        })
    }
}

/// Collision filter hook used by [`PlantModel::guarded_derivative`].
pub trait VelocityGuard {
    /// Safe planar velocity closest to `v_des`.
    fn filter_velocity(&self, v_des: Vec2) -> Vec2;
    /// Safe signed speed along unit vector `heading`, closest to `speed`.
    fn filter_speed(&self, heading: Vec2, speed: f64) -> f64;
}

fn wrap_angle(a: f64) -> f64 {
    let mut r = (a + PI).rem_euclid(2.0 * PI) - PI;
    if r <= -PI {
        r += 2.0 * PI;
    }
    r
}

// Polar-coordinate pose regulator. With `e` the distance to the set-point,
// `a` the bearing relative to the heading and `th` the bearing relative to
// `heading_ref`, the unsaturated law
//   v = k_v e cos a,  ω = k_ω a + k_v (cos a sin a / a)(a + h th)
// makes V = e²/2 + (a² + h th²)/2 non-increasing. It is discontinuous only
// at the set-point itself.
fn unicycle_law(p: &UnicycleParams, x: &PlantState, u: Vec2) -> (f64, f64) {
    let s = &x.0;
    let psi = s[2];
    let delta = u - Vec2::new(s[0], s[1]);
    let e = delta.norm();
    if e < 1e-12 {
        return (0.0, (p.k_omega * wrap_angle(p.heading_ref - psi)).clamp(-p.omega_max, p.omega_max));
    }
    let bearing = delta.y.atan2(delta.x);
    let a = wrap_angle(bearing - psi);
    let th = wrap_angle(bearing - p.heading_ref);
    // cos a sin a / a, continuous at a = 0
    let sinc = if a.abs() < 1e-9 { 1.0 } else { a.sin() / a };
    let speed = (p.k_v * e * a.cos()).clamp(-p.v_max, p.v_max);
    let omega = (p.k_omega * a + p.k_v * a.cos() * sinc * (a + p.heading_weight * th))
        .clamp(-p.omega_max, p.omega_max);
    (speed, omega)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn all_models() -> [PlantModel; 3] {
        [
            PlantModel::single_integrator(),
            PlantModel::unicycle(),
            PlantModel::quadrotor(),
        ]
    }

    #[test]
    fn steady_states() {
        let u = Vec2::new(1.0, 2.0);
        assert_eq!(PlantModel::unicycle().steady_state(u).0, vec![1.0, 2.0, 0.0]);
        assert_eq!(
            PlantModel::quadrotor().steady_state(Vec2::zeros()).0,
            vec![0.0; 4]
        );
        assert_eq!(
            PlantModel::single_integrator()
                .steady_state(Vec2::new(-3.0, 4.0))
                .0,
            vec![-3.0, 4.0]
        );
    }

    #[test]
    fn equilibria_have_zero_derivative() {
        let u = Vec2::new(0.3, -1.7);
        for m in all_models() {
            let d = m.derivative(&m.steady_state(u), u).unwrap();
            assert!(d.iter().all(|v| *v == 0.0), "{m:?}: {d:?}");
        }
    }

    #[test]
    fn unicycle_at_pose_commands_nothing() {
        let m = PlantModel::unicycle();
        let u = Vec2::new(2.0, -1.0);
        let (v, w) = m.unicycle_commands(&m.steady_state(u), u).unwrap();
        assert_eq!((v, w), (0.0, 0.0));
    }

    #[test]
    fn unicycle_reverses_toward_goal_behind() {
        let m = PlantModel::unicycle();
        let x = PlantState(vec![0.0, 0.0, 0.0]);
        let (v, _) = m.unicycle_commands(&x, Vec2::new(-1.0, 0.0)).unwrap();
        assert!(v < 0.0);
        let (v, _) = m.unicycle_commands(&x, Vec2::new(1.0, 0.0)).unwrap();
        assert!(v > 0.0);
    }

    #[test]
    fn positions() {
        assert_eq!(
            PlantModel::unicycle().position(&PlantState(vec![1.0, 2.0, 0.5])),
            Vec2::new(1.0, 2.0)
        );
        assert_eq!(
            PlantModel::quadrotor().position(&PlantState(vec![0.0, -1.0, 5.0, 5.0])),
            Vec2::new(0.0, -1.0)
        );
        assert_eq!(
            PlantModel::single_integrator().position(&PlantState(vec![3.0, 3.0])),
            Vec2::new(3.0, 3.0)
        );
    }

    #[test]
    fn jacobian_selects_position() {
        let u = Vec2::new(0.1, 0.2);
        assert_eq!(
            PlantModel::unicycle()
                .jacobian_h_transpose_apply(u, &[1.0, 2.0, 3.0])
                .unwrap(),
            Vec2::new(1.0, 2.0)
        );
        assert_eq!(
            PlantModel::quadrotor()
                .jacobian_h_transpose_apply(u, &[1.0, 2.0, 3.0, 4.0])
                .unwrap(),
            Vec2::new(1.0, 2.0)
        );
    }

    #[test]
    fn jacobian_matches_finite_differences_of_h() {
        let eps = 1e-6;
        let u = Vec2::new(0.7, -0.4);
        for m in all_models() {
            let base = m.steady_state(u);
            // column k of the Jacobian of h, dotted with a probe covector
            let probe: Vec<f64> = (0..m.dim()).map(|i| 0.3 + i as f64).collect();
            let analytic = m.jacobian_h_transpose_apply(u, &probe).unwrap();
            for k in 0..2 {
                let mut up = u;
                up[k] += eps;
                let col: Vec<f64> = m
                    .steady_state(up)
                    .0
                    .iter()
                    .zip(&base.0)
                    .map(|(a, b)| (a - b) / eps)
                    .collect();
                let fd: f64 = col.iter().zip(&probe).map(|(c, v)| c * v).sum();
                assert_abs_diff_eq!(fd, analytic[k], epsilon = 1e-6 * probe[k].abs().max(1.0));
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let err = PlantModel::quadrotor()
            .derivative(&PlantState(vec![0.0; 3]), Vec2::zeros())
            .unwrap_err();
        assert_eq!(err.expected, 4);
        assert_eq!(err.got, 3);
        assert!(PlantModel::unicycle()
            .jacobian_h_transpose_apply(Vec2::zeros(), &[0.0; 2])
            .is_err());
    }

    #[test]
    fn wrap_angle_range() {
        for k in -20..20 {
            let a = wrap_angle(k as f64 * 0.7);
            assert!(a > -PI && a <= PI);
        }
        assert_abs_diff_eq!(wrap_angle(3.0 * PI), PI, epsilon = 1e-12);
    }
}
