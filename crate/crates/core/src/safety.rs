//! Decentralized pairwise collision filter.
//!
//! For each neighbor `j` within sensing range, robot `i` enforces the
//! half-plane
//!
//! ```text
//! (p_i − p_j)ᵀ v ≥ −(κ/4) (‖p_i − p_j‖² − δ²)
//! ```
//!
//! on its planar velocity `v`. This is half of the barrier condition on
//! `h_ij = ‖p_i − p_j‖² − δ²` (`ḣ_ij ≥ −κ h_ij`), so two robots filtering
//! against the same position snapshot jointly keep `h_ij ≥ 0`. The closest
//! feasible velocity is found by cyclic projection onto violated half-planes.

use serde::{Deserialize, Serialize};

use crate::plants::VelocityGuard;
use crate::Vec2;

const MAX_SWEEPS: usize = 50;
const TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyConfig {
    pub enabled: bool,
    /// Minimum separation (m).
    pub delta: f64,
    /// Barrier gain.
    pub kappa: f64,
    /// Neighbors farther than this are ignored (m).
    pub sensing_radius: f64,
}

impl Default for SafetyConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            delta: 0.2,
            kappa: 2.0,
            sensing_radius: 1.0,
        }
    }
}

impl SafetyConfig {
    pub fn enabled() -> Self {
        Self {
            enabled: true,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.delta > 0.0 && self.kappa > 0.0) {
            return Err("delta and kappa must be positive".into());
        }
        if !(self.delta < self.sensing_radius) {
            return Err(format!(
                "delta {} must be below sensing radius {}",
                self.delta, self.sensing_radius
            ));
        }
        Ok(())
    }
}

/// Outcome of [`filter_velocity`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Filtered {
    pub v: Vec2,
    /// Set when the robot already overlaps a neighbor and the constraint set
    /// was replaced by a push away from the nearest one.
    pub infeasible: bool,
    pub active: usize,
}

/// `aᵀ v ≥ b`
#[derive(Debug, Clone, Copy)]
struct HalfPlane {
    a: Vec2,
    b: f64,
}

impl HalfPlane {
    fn slack(&self, v: Vec2) -> f64 {
        self.a.dot(&v) - self.b
    }

    fn project(&self, v: Vec2) -> Vec2 {
        let s = self.slack(v);
        if s >= 0.0 {
            v
        } else {
            v + self.a * (-s / self.a.norm_squared())
        }
    }
}

fn constraints(cfg: &SafetyConfig, i: usize, positions: &[Vec2]) -> Vec<HalfPlane> {
    let pi = positions[i];
    positions
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != i)
        .filter_map(|(_, pj)| {
            let a = pi - pj;
            let d2 = a.norm_squared();
            (d2.sqrt() <= cfg.sensing_radius).then(|| HalfPlane {
                a,
                b: -(cfg.kappa / 4.0) * (d2 - cfg.delta * cfg.delta),
            })
        })
        .collect()
}

/// Velocity closest to `v_des` satisfying every pairwise barrier constraint
/// of robot `i` against the snapshot `positions`.
pub fn filter_velocity(cfg: &SafetyConfig, i: usize, positions: &[Vec2], v_des: Vec2) -> Filtered {
    let cons = constraints(cfg, i, positions);
    if cons.is_empty() {
        return Filtered {
            v: v_des,
            infeasible: false,
            active: 0,
        };
    }
    // coincident robots leave a = 0 with b > 0: nothing can satisfy it
    if let Some(c) = cons.iter().find(|c| c.a.norm_squared() < 1e-24) {
        return Filtered {
            v: escape_direction(c.a, i),
            infeasible: true,
            active: cons.len(),
        };
    }

    let mut v = v_des;
    for _ in 0..MAX_SWEEPS {
        let mut moved = false;
        for c in &cons {
            if c.slack(v) < -TOL {
                v = c.project(v);
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }
    let worst = cons.iter().map(|c| c.slack(v)).fold(f64::INFINITY, f64::min);
    if worst < -1e-6 {
        // no common point found: overlapping robots; move straight away
        // from the nearest one at the rate its own constraint demands
        let nearest = cons
            .iter()
            .min_by(|x, y| x.a.norm_squared().total_cmp(&y.a.norm_squared()))
            .expect("non-empty");
        let dir = nearest.a / nearest.a.norm();
        let speed = (nearest.b / nearest.a.norm()).max(0.0);
        return Filtered {
            v: dir * speed,
            infeasible: true,
            active: cons.len(),
        };
    }
    let active = cons.iter().filter(|c| c.slack(v).abs() <= 1e-9).count();
    Filtered {
        v,
        infeasible: false,
        active,
    }
}

fn escape_direction(a: Vec2, i: usize) -> Vec2 {
    if a.norm() > 1e-12 {
        a / a.norm()
    } else {
        // exact overlap: split by index parity
        let s = if i % 2 == 0 { 1.0 } else { -1.0 };
        Vec2::new(s, 0.0)
    }
}

/// Signed speed along `heading` closest to `speed` such that `speed·heading`
/// satisfies every constraint. Falls back to zero if the feasible interval
/// is empty.
pub fn filter_speed(cfg: &SafetyConfig, i: usize, positions: &[Vec2], heading: Vec2, speed: f64) -> f64 {
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for c in constraints(cfg, i, positions) {
        let k = c.a.dot(&heading);
        if k.abs() < 1e-12 {
            // orthogonal to the heading: speed cannot help or hurt
            continue;
        }
        let bound = c.b / k;
        if k > 0.0 {
            lo = lo.max(bound);
        } else {
            hi = hi.min(bound);
        }
    }
    if lo > hi {
        return 0.0;
    }
    speed.clamp(lo, hi)
}

/// Filter bound to one robot and a position snapshot.
pub struct NeighborGuard<'a> {
    pub cfg: &'a SafetyConfig,
    pub agent: usize,
    pub positions: &'a [Vec2],
}

impl VelocityGuard for NeighborGuard<'_> {
    fn filter_velocity(&self, v_des: Vec2) -> Vec2 {
        filter_velocity(self.cfg, self.agent, self.positions, v_des).v
    }

    fn filter_speed(&self, heading: Vec2, speed: f64) -> f64 {
        filter_speed(self.cfg, self.agent, self.positions, heading, speed)
    }
}

/// Smallest distance between any two positions.
pub fn min_pairwise_distance(positions: &[Vec2]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..positions.len() {
        for j in (i + 1)..positions.len() {
            best = best.min((positions[i] - positions[j]).norm());
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn cfg() -> SafetyConfig {
        SafetyConfig::enabled()
    }

    #[test]
    fn no_neighbors_in_range() {
        let pos = [Vec2::zeros(), Vec2::new(5.0, 0.0)];
        let v = Vec2::new(3.0, -1.0);
        assert_eq!(filter_velocity(&cfg(), 0, &pos, v).v, v);
    }

    #[test]
    fn head_on_at_safety_distance() {
        let c = cfg();
        let pos = [Vec2::zeros(), Vec2::new(c.delta, 0.0)];
        let f = filter_velocity(&c, 0, &pos, Vec2::new(1.0, 0.3));
        let a = pos[0] - pos[1];
        assert!(a.dot(&f.v) >= -1e-12);
        let g = filter_velocity(&c, 1, &pos, Vec2::new(-1.0, 0.0));
        assert!((pos[1] - pos[0]).dot(&g.v) >= -1e-12);
    }

    #[test]
    fn single_constraint_matches_closed_form() {
        let c = cfg();
        let pos = [Vec2::new(0.1, 0.2), Vec2::new(0.5, 0.4)];
        let v_des = Vec2::new(2.0, 1.0);
        let a = pos[0] - pos[1];
        let b = -(c.kappa / 4.0) * (a.norm_squared() - c.delta * c.delta);
        let oracle = v_des + a * ((b - a.dot(&v_des)) / a.norm_squared()).max(0.0);
        let f = filter_velocity(&c, 0, &pos, v_des);
        assert_abs_diff_eq!(f.v, oracle, epsilon = 1e-12);
        assert!(f.v != v_des);
        assert!(!f.infeasible);
    }

    #[test]
    fn inactive_constraints_leave_velocity() {
        let c = cfg();
        let pos = [Vec2::zeros(), Vec2::new(0.5, 0.0), Vec2::new(0.0, 0.6)];
        let v = Vec2::new(-0.3, -0.2);
        assert_eq!(filter_velocity(&c, 0, &pos, v).v, v);
    }

    #[test]
    fn filter_is_idempotent() {
        let c = cfg();
        let pos = [
            Vec2::zeros(),
            Vec2::new(0.3, 0.05),
            Vec2::new(-0.1, 0.35),
            Vec2::new(0.25, -0.25),
        ];
        let v = filter_velocity(&c, 0, &pos, Vec2::new(1.0, 1.0)).v;
        let again = filter_velocity(&c, 0, &pos, v).v;
        assert_abs_diff_eq!(v, again, epsilon = 1e-8);
    }

    #[test]
    fn overlapping_robots_push_apart() {
        let c = cfg();
        let pos = [Vec2::zeros(), Vec2::zeros()];
        let f = filter_velocity(&c, 0, &pos, Vec2::new(0.0, 1.0));
        assert!(f.infeasible);
        let g = filter_velocity(&c, 1, &pos, Vec2::new(0.0, 1.0));
        assert!(f.v.dot(&g.v) < 0.0);
    }

    #[test]
    fn speed_filter_respects_constraint() {
        let c = cfg();
        let pos = [Vec2::zeros(), Vec2::new(0.21, 0.0)];
        let s = filter_speed(&c, 0, &pos, Vec2::new(1.0, 0.0), 0.5);
        let a = pos[0] - pos[1];
        let b = -(c.kappa / 4.0) * (a.norm_squared() - c.delta * c.delta);
        assert!(a.x * s >= b - 1e-12);
        // driving away is untouched
        assert_eq!(filter_speed(&c, 0, &pos, Vec2::new(1.0, 0.0), -0.5), -0.5);
    }

    #[test]
    fn pairwise_distance() {
        let pos = [Vec2::zeros(), Vec2::new(3.0, 4.0), Vec2::new(0.0, 1.0)];
        assert_eq!(min_pairwise_distance(&pos), 1.0);
    }
}
