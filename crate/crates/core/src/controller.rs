//! Per-robot event-triggered aggregative feedback optimization.
//!
//! Each robot runs
//!
//! ```text
//! u̇_i = −α1 g_i(x_i, u_i, w_i, z_i)
//! ẇ_i = −(1/α2) Σ_j a_ij (ŵ_i + φ̂_i − ŵ_j − φ̂_j)
//! ż_i = −(1/α2) Σ_j a_ij (ẑ_i + ∇₂ℓ̂_i − ẑ_j − ∇₂ℓ̂_j)
//! ξ̇_i = −ν ξ_i
//! ```
//!
//! where hatted quantities are the values sampled at the robot's last
//! broadcast. `w_i + φ_i` tracks the aggregate `σ` and `z_i + ∇₂ℓ_i` tracks
//! the network mean of `∇₂ℓ_j`. A robot broadcasts when
//! `‖e_i‖ > λ‖g_i‖ + |ξ_i|`, with `e_i` the drift of its live signals away
//! from the last broadcast. Using the sampled own values in the mixing term
//! keeps `Σ w_i` and `Σ z_i` at zero on weight-balanced graphs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::costs::Scenario;
use crate::graph::CommGraph;
use crate::plants::{PlantModel, PlantState};
use crate::Vec2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControllerError {
    #[error("agent {agent} has no payload from in-neighbor {neighbor}")]
    MissingPayload { agent: usize, neighbor: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

/// Gains of the closed loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlgoParams {
    /// Speed of the set-point flow.
    pub alpha1: f64,
    /// Inverse speed of the consensus trackers.
    pub alpha2: f64,
    /// Trigger sensitivity.
    pub lambda: f64,
    /// Decay rate of the trigger slack.
    pub nu: f64,
    /// Initial trigger slack; must be nonzero.
    pub xi0: f64,
}

impl Default for AlgoParams {
    fn default() -> Self {
        Self {
            alpha1: 0.5,
            alpha2: 0.01,
            lambda: 0.05,
            nu: 1.0,
            xi0: 0.01,
        }
    }
}

impl AlgoParams {
    pub fn validate(&self) -> Result<(), ControllerError> {
        if !(self.alpha1 > 0.0 && self.alpha2 > 0.0 && self.nu > 0.0) {
            return Err(ControllerError::InvalidParams(format!(
                "alpha1, alpha2 and nu must be positive (got {}, {}, {})",
                self.alpha1, self.alpha2, self.nu
            )));
        }
        if !(self.lambda >= 0.0) {
            return Err(ControllerError::InvalidParams(format!(
                "lambda must be nonnegative, got {}",
                self.lambda
            )));
        }
        if self.xi0 == 0.0 || !self.xi0.is_finite() {
            return Err(ControllerError::InvalidParams(
                "xi0 must be finite and nonzero".into(),
            ));
        }
        Ok(())
    }
}

/// Broadcast message: `(ŵ + φ̂, ẑ + ∇₂ℓ̂)`, four floats.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Payload {
    pub sender: usize,
    pub vec_w: Vec2,
    pub vec_z: Vec2,
}

/// Tracker drift since the last broadcast.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriggerError {
    pub e_w: Vec2,
    pub e_z: Vec2,
}

impl TriggerError {
    /// Norm of the stacked 4-vector.
    pub fn norm(&self) -> f64 {
        (self.e_w.norm_squared() + self.e_z.norm_squared()).sqrt()
    }
}

/// Time derivatives of the controller variables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerFlow {
    pub du: Vec2,
    pub dw: Vec2,
    pub dz: Vec2,
    pub dxi: f64,
}

/// State of one robot's controller.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    pub id: usize,
    pub u: Vec2,
    pub w: Vec2,
    pub z: Vec2,
    pub xi: f64,
    pub hat_w: Vec2,
    pub hat_z: Vec2,
    pub hat_phi: Vec2,
    pub hat_g2: Vec2,
    /// Latest payload per sender, indexed by agent id.
    pub inbox: Vec<Option<Payload>>,
    pub trigger_count: u64,
    pub last_trigger_time: Option<f64>,
}

/// Local signals `(w + φ(x), z + ∇₂ℓ(x, w + φ(x)))` shared by flow, error and
/// payload construction.
fn live_signals(cs: &ControllerState, sc: &Scenario, p: Vec2) -> (Vec2, Vec2, Vec2, Vec2) {
    let phi = sc.phi(p);
    let sigma_hat = cs.w + phi;
    let g2 = sc.grad2_cost(sigma_hat);
    (phi, sigma_hat, g2, cs.z + g2)
}

impl ControllerState {
    /// Initial state: `w = ŵ = 0`, `z = ẑ = 0`, `φ̂ = φ(x0)`,
    /// `∇₂ℓ̂ = ∇₂ℓ(x0, φ(x0))`.
    pub fn new(
        id: usize,
        n_agents: usize,
        u0: Vec2,
        sc: &Scenario,
        model: &PlantModel,
        x0: &PlantState,
        params: &AlgoParams,
    ) -> Self {
        let phi = sc.phi(model.position(x0));
        Self {
            id,
            u: u0,
            w: Vec2::zeros(),
            z: Vec2::zeros(),
            xi: params.xi0,
            hat_w: Vec2::zeros(),
            hat_z: Vec2::zeros(),
            hat_phi: phi,
            hat_g2: sc.grad2_cost(phi),
            inbox: vec![None; n_agents],
            trigger_count: 0,
            last_trigger_time: None,
        }
    }

    /// Local estimate `σ̂_i = w_i + φ_i(x_i)`.
    pub fn sigma_hat(&self, sc: &Scenario, model: &PlantModel, x: &PlantState) -> Vec2 {
        self.w + sc.phi(model.position(x))
    }

    /// Descent direction `g_i`.
    pub fn direction(&self, sc: &Scenario, model: &PlantModel, x: &PlantState) -> Vec2 {
        let p = model.position(x);
        let (_, _, g2, _) = live_signals(self, sc, p);
        // ∇₁ℓ_i does not depend on σ̂ for this cost
        let covector = sc.grad1(self.id, p) + sc.grad_phi_transpose_apply(p, g2 + self.z);
        model
            .jacobian_h_transpose_apply(self.u, &model.lift(covector))
            .expect("lifted covector has model dimension")
    }

    pub fn error(&self, sc: &Scenario, model: &PlantModel, x: &PlantState) -> TriggerError {
        let (phi, _, g2, _) = live_signals(self, sc, model.position(x));
        TriggerError {
            e_w: (self.w - self.hat_w) + (phi - self.hat_phi),
            e_z: (self.z - self.hat_z) + (g2 - self.hat_g2),
        }
    }

    /// `‖e_i‖ > λ‖g_i‖ + |ξ_i|`.
    pub fn should_trigger(
        &self,
        sc: &Scenario,
        model: &PlantModel,
        x: &PlantState,
        params: &AlgoParams,
    ) -> bool {
        let e = self.error(sc, model, x).norm();
        e > params.lambda * self.direction(sc, model, x).norm() + self.xi.abs()
    }

    /// Current outgoing message built from the hats.
    pub fn payload(&self) -> Payload {
        Payload {
            sender: self.id,
            vec_w: self.hat_w + self.hat_phi,
            vec_z: self.hat_z + self.hat_g2,
        }
    }

    /// Resamples all hats from the current values and returns the message
    /// to broadcast.
    pub fn on_trigger(
        &mut self,
        sc: &Scenario,
        model: &PlantModel,
        x: &PlantState,
        t: f64,
    ) -> Payload {
        let (phi, _, g2, _) = live_signals(self, sc, model.position(x));
        self.hat_w = self.w;
        self.hat_phi = phi;
        self.hat_z = self.z;
        self.hat_g2 = g2;
        self.trigger_count += 1;
        self.last_trigger_time = Some(t);
        self.payload()
    }

    pub fn receive(&mut self, msg: Payload) {
        self.inbox[msg.sender] = Some(msg);
    }

    /// Right-hand side of the controller using the inbox for neighbor values.
    pub fn flow(
        &self,
        sc: &Scenario,
        model: &PlantModel,
        x: &PlantState,
        g: &CommGraph,
        params: &AlgoParams,
    ) -> Result<ControllerFlow, ControllerError> {
        let own = self.payload();
        let mut mix_w = Vec2::zeros();
        let mut mix_z = Vec2::zeros();
        for &j in g.in_neighbors(self.id) {
            let msg = self.inbox[j].ok_or(ControllerError::MissingPayload {
                agent: self.id,
                neighbor: j,
            })?;
            let a = g.weight(self.id, j);
            mix_w += (own.vec_w - msg.vec_w) * a;
            mix_z += (own.vec_z - msg.vec_z) * a;
        }
        Ok(self.assemble_flow(sc, model, x, mix_w, mix_z, params))
    }

    /// Right-hand side with continuous exchange: mixing uses the current
    /// live signals of every agent instead of sampled ones.
    pub fn flow_continuous(
        &self,
        sc: &Scenario,
        model: &PlantModel,
        x: &PlantState,
        g: &CommGraph,
        live: &[(Vec2, Vec2)],
        params: &AlgoParams,
    ) -> ControllerFlow {
        let (own_w, own_z) = live[self.id];
        let mut mix_w = Vec2::zeros();
        let mut mix_z = Vec2::zeros();
        for &j in g.in_neighbors(self.id) {
            let a = g.weight(self.id, j);
            mix_w += (own_w - live[j].0) * a;
            mix_z += (own_z - live[j].1) * a;
        }
        self.assemble_flow(sc, model, x, mix_w, mix_z, params)
    }

    /// `(w + φ(x), z + ∇₂ℓ(x, w + φ(x)))` at the current state.
    pub fn live_payload(&self, sc: &Scenario, model: &PlantModel, x: &PlantState) -> (Vec2, Vec2) {
        let (_, sigma_hat, _, zs) = live_signals(self, sc, model.position(x));
        (sigma_hat, zs)
    }

    fn assemble_flow(
        &self,
        sc: &Scenario,
        model: &PlantModel,
        x: &PlantState,
        mix_w: Vec2,
        mix_z: Vec2,
        params: &AlgoParams,
    ) -> ControllerFlow {
        ControllerFlow {
            du: -self.direction(sc, model, x) * params.alpha1,
            dw: -mix_w / params.alpha2,
            dz: -mix_z / params.alpha2,
            dxi: -params.nu * self.xi,
        }
    }

    /// Forward-Euler update of the controller variables.
    pub fn apply(&mut self, f: &ControllerFlow, dt: f64) {
        self.u += f.du * dt;
        self.w += f.dw * dt;
        self.z += f.dz * dt;
        self.xi += f.dxi * dt;
    }
}
