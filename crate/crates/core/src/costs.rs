//! Aggregative encirclement cost.
//!
//! Robot `i` pays
//!
//! ```text
//! ℓ_i(x_i, σ) = γ1 ‖σ‖² + γ2 ‖p_i − s_i‖² + γ3 Σ_l A_l exp(−‖p_i − μ_l‖² / (2 s_l²))
//! ```
//!
//! where `σ = (1/N) Σ_j φ_j(x_j)` is the mean of the unit bearings from the
//! target `b` to each robot. Minimizing `‖σ‖²` spreads the team around `b`.
//! Only robots with an assigned spot carry the second term.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plants::{PlantModel, PlantState};
use crate::Vec2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("gamma[{0}] = {1} must be finite and nonnegative")]
    NegativeGamma(usize, f64),
    #[error("gaussian {0} has non-positive spread {1}")]
    BadSpread(usize, f64),
    #[error("gaussian {0} has non-positive amplitude {1}")]
    BadAmplitude(usize, f64),
    #[error("rho_min must be positive, got {0}")]
    BadRhoMin(f64),
    #[error("robot {0} has more than one assigned spot")]
    DuplicateSpot(usize),
    #[error("cannot parse scenario: {0}")]
    Parse(String),
}

/// A point of interest assigned to one robot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpotAssignment {
    pub robot: usize,
    pub point: Vec2,
}

/// One bump of the danger field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub mu: Vec2,
    /// Standard deviation.
    pub s: f64,
    #[serde(default = "unit_amp")]
    pub amp: f64,
}

fn unit_amp() -> f64 {
    1.0
}

fn default_rho_min() -> f64 {
    1e-3
}

impl Gaussian {
    pub fn value(&self, p: Vec2) -> f64 {
        let d = p - self.mu;
        self.amp * (-d.norm_squared() / (2.0 * self.s * self.s)).exp()
    }

    pub fn gradient(&self, p: Vec2) -> Vec2 {
        let d = p - self.mu;
        -d * (self.value(p) / (self.s * self.s))
    }
}

/// Task description shared by all robots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub target: Vec2,
    /// `(γ1, γ2, γ3)`: encirclement, spot monitoring, danger avoidance.
    pub gammas: [f64; 3],
    #[serde(default)]
    pub spots: Vec<SpotAssignment>,
    #[serde(default)]
    pub gaussians: Vec<Gaussian>,
    /// Below this distance from the target the bearing is frozen and the
    /// angular gradients are clamped.
    #[serde(default = "default_rho_min")]
    pub rho_min: f64,
}

impl Default for Scenario {
    fn default() -> Self {
        Self::coop_only(Vec2::zeros(), 1.0)
    }
}

impl Scenario {
    /// Encirclement only: `γ = (gamma1, 0, 0)`.
    pub fn coop_only(target: Vec2, gamma1: f64) -> Self {
        Self {
            target,
            gammas: [gamma1, 0.0, 0.0],
            spots: Vec::new(),
            gaussians: Vec::new(),
            rho_min: default_rho_min(),
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        for (k, g) in self.gammas.iter().enumerate() {
            if !(g.is_finite() && *g >= 0.0) {
                return Err(ScenarioError::NegativeGamma(k, *g));
            }
        }
        for (k, g) in self.gaussians.iter().enumerate() {
            if !(g.s > 0.0) {
                return Err(ScenarioError::BadSpread(k, g.s));
            }
            if !(g.amp > 0.0) {
                return Err(ScenarioError::BadAmplitude(k, g.amp));
            }
        }
        if !(self.rho_min > 0.0) {
            return Err(ScenarioError::BadRhoMin(self.rho_min));
        }
        let mut robots: Vec<_> = self.spots.iter().map(|s| s.robot).collect();
        robots.sort_unstable();
        if let Some(w) = robots.windows(2).find(|w| w[0] == w[1]) {
            return Err(ScenarioError::DuplicateSpot(w[0]));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let sc: Scenario =
            serde_json::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn spot_for(&self, robot: usize) -> Option<Vec2> {
        self.spots.iter().find(|s| s.robot == robot).map(|s| s.point)
    }

    /// Polar coordinates `(ρ, θ)` of `p` about the target.
    pub fn polar(&self, p: Vec2) -> (f64, f64) {
        let d = p - self.target;
        (d.norm(), d.y.atan2(d.x))
    }

    /// Aggregation rule `φ(p) = (cos θ, sin θ)`.
    pub fn phi(&self, p: Vec2) -> Vec2 {
        let d = p - self.target;
        let r = d.norm();
        if r < self.rho_min {
            Vec2::new(1.0, 0.0)
        } else {
            d / r
        }
    }

    /// `(∂φ/∂p)ᵀ v`.
    pub fn grad_phi_transpose_apply(&self, p: Vec2, v: Vec2) -> Vec2 {
        let d = p - self.target;
        let rho2 = d.norm_squared().max(self.rho_min * self.rho_min);
        let theta = d.y.atan2(d.x);
        let dtheta = Vec2::new(-d.y, d.x) / rho2;
        dtheta * (-theta.sin() * v.x + theta.cos() * v.y)
    }

    /// Danger field `Σ_l G_l(p)` (without `γ3`).
    pub fn danger(&self, p: Vec2) -> f64 {
        self.gaussians.iter().map(|g| g.value(p)).sum()
    }

    pub fn danger_gradient(&self, p: Vec2) -> Vec2 {
        self.gaussians
            .iter()
            .fold(Vec2::zeros(), |acc, g| acc + g.gradient(p))
    }

    /// `∇₁ℓ_i` at position `p`. The encirclement term does not depend on
    /// the robot's own state except through `σ`.
    pub fn grad1(&self, i: usize, p: Vec2) -> Vec2 {
        let [_, g2, g3] = self.gammas;
        let mut out = Vec2::zeros();
        if g2 != 0.0 {
            if let Some(s) = self.spot_for(i) {
                out += (p - s) * (2.0 * g2);
            }
        }
        if g3 != 0.0 {
            out += self.danger_gradient(p) * g3;
        }
        out
    }

    /// `∇₁ℓ_i` lifted to the state space of `model`.
    pub fn grad1_cost(&self, i: usize, model: &PlantModel, x: &PlantState) -> Vec<f64> {
        model.lift(self.grad1(i, model.position(x)))
    }

    /// `∇₂ℓ_i(·, σ̂) = 2 γ1 σ̂`; identical for every robot.
    pub fn grad2_cost(&self, sigma_hat: Vec2) -> Vec2 {
        sigma_hat * (2.0 * self.gammas[0])
    }

    /// `ℓ_i` at position `p` and aggregate `sigma`.
    pub fn local_cost(&self, i: usize, p: Vec2, sigma: Vec2) -> f64 {
        let [g1, g2, g3] = self.gammas;
        let mut c = g1 * sigma.norm_squared();
        if g2 != 0.0 {
            if let Some(s) = self.spot_for(i) {
                c += g2 * (p - s).norm_squared();
            }
        }
        if g3 != 0.0 {
            c += g3 * self.danger(p);
        }
        c
    }

    /// `σ = (1/N) Σ φ(p_i)`.
    pub fn sigma_central(&self, positions: &[Vec2]) -> Vec2 {
        assert!(!positions.is_empty(), "sigma of an empty team");
        let sum = positions
            .iter()
            .fold(Vec2::zeros(), |acc, p| acc + self.phi(*p));
        sum / positions.len() as f64
    }

    /// Circular variance `1 − ‖σ‖`.
    pub fn circular_variance(&self, positions: &[Vec2]) -> f64 {
        1.0 - self.sigma_central(positions).norm()
    }

    /// `f^σ(x) = Σ ℓ_i(x_i, σ(x))`.
    pub fn cost_state(&self, positions: &[Vec2]) -> f64 {
        let sigma = self.sigma_central(positions);
        positions
            .iter()
            .enumerate()
            .map(|(i, p)| self.local_cost(i, *p, sigma))
            .sum()
    }

    /// `f^{σ,h}(u)`: the cost with every robot parked at `h_i(u_i)`.
    pub fn cost_central(&self, models: &[PlantModel], u: &[Vec2]) -> f64 {
        self.cost_state(&steady_positions(models, u))
    }

    /// Exact `∇f^{σ,h}(u)`, one planar block per robot.
    pub fn grad_reduced_central(&self, models: &[PlantModel], u: &[Vec2]) -> Vec<Vec2> {
        let n = u.len();
        let states: Vec<PlantState> = models
            .iter()
            .zip(u)
            .map(|(m, ui)| m.steady_state(*ui))
            .collect();
        let positions: Vec<Vec2> = models
            .iter()
            .zip(&states)
            .map(|(m, x)| m.position(x))
            .collect();
        let sigma = self.sigma_central(&positions);
        let mean_g2 = (0..n)
            .map(|_| self.grad2_cost(sigma))
            .fold(Vec2::zeros(), |a, b| a + b)
            / n as f64;
        (0..n)
            .map(|i| {
                let covector = self.grad1(i, positions[i])
                    + self.grad_phi_transpose_apply(positions[i], mean_g2);
                models[i]
                    .jacobian_h_transpose_apply(u[i], &models[i].lift(covector))
                    .expect("lifted covector has model dimension")
            })
            .collect()
    }

    /// Euclidean norm of the stacked reduced gradient.
    pub fn grad_reduced_norm(&self, models: &[PlantModel], u: &[Vec2]) -> f64 {
        self.grad_reduced_central(models, u)
            .iter()
            .map(|g| g.norm_squared())
            .sum::<f64>()
            .sqrt()
    }
}

fn steady_positions(models: &[PlantModel], u: &[Vec2]) -> Vec<Vec2> {
    models
        .iter()
        .zip(u)
        .map(|(m, ui)| m.position(&m.steady_state(*ui)))
        .collect()
}
