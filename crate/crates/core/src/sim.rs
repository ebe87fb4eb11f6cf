//! Fixed-step simulation of one trial.
//!
//! Every step takes a snapshot of all robots, evaluates every controller
//! flow and plant derivative against it, applies one forward-Euler update,
//! then lets each robot test its trigger and deliver a payload to its
//! out-neighbors. The centralized gradient norm `‖∇f^{σ,h}(u)‖` is only
//! measured; it never reaches the controllers.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{AlgoParams, ControllerError, ControllerFlow, ControllerState};
use crate::costs::Scenario;
use crate::graph::CommGraph;
use crate::plants::{PlantError, PlantModel, PlantState, VelocityGuard};
use crate::safety::{min_pairwise_distance, NeighborGuard, SafetyConfig};
use crate::trace::{AgentSample, Trace, TraceRow};
use crate::Vec2;

/// Trigger events before this time are excluded from the back-to-back
/// statistics.
pub const SETTLE_TIME: f64 = 1.0;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("non-finite state for agent {agent} at t = {t:.4}: trial diverged")]
    Diverged { agent: usize, t: f64 },
    #[error(transparent)]
    Protocol(#[from] ControllerError),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error("invalid trial setup: {0}")]
    Setup(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub t_max: f64,
    /// Stop once `‖∇f^{σ,h}(u)‖` falls to this value.
    pub stop_tol: f64,
    /// Stopping check and trace cadence, in steps.
    pub record_every: usize,
    /// Keep per-row trace data.
    pub record_trace: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.01,
            t_max: 200.0,
            stop_tol: 5e-2,
            record_every: 10,
            record_trace: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.dt > 0.0 && self.t_max > self.dt && self.stop_tol > 0.0) {
            return Err(SimError::Setup(format!(
                "need dt > 0, t_max > dt, stop_tol > 0 (got {}, {}, {})",
                self.dt, self.t_max, self.stop_tol
            )));
        }
        if self.record_every == 0 {
            return Err(SimError::Setup("record_every must be at least 1".into()));
        }
        Ok(())
    }
}

/// How robots exchange tracker values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Exchange {
    /// Broadcast only when the local trigger condition fires.
    EventTriggered,
    /// Broadcast after every step regardless of the trigger condition.
    EveryStep,
    /// Mix with the neighbors' current values directly (no sampling).
    Continuous,
}

/// Everything that defines one trial apart from gains and step size.
#[derive(Debug, Clone)]
pub struct TrialSetup {
    pub graph: CommGraph,
    pub scenario: Scenario,
    pub models: Vec<PlantModel>,
    pub initial_states: Vec<PlantState>,
}

impl TrialSetup {
    /// Robots at rest at `positions`.
    pub fn at_rest(
        graph: CommGraph,
        scenario: Scenario,
        models: Vec<PlantModel>,
        positions: &[Vec2],
    ) -> Self {
        let initial_states = models
            .iter()
            .zip(positions)
            .map(|(m, p)| m.state_at(*p))
            .collect();
        Self {
            graph,
            scenario,
            models,
            initial_states,
        }
    }

    pub fn n(&self) -> usize {
        self.models.len()
    }

    fn check(&self, safety: &SafetyConfig) -> Result<(), SimError> {
        let n = self.n();
        if n == 0 {
            return Err(SimError::Setup("no agents".into()));
        }
        if self.graph.n() != n || self.initial_states.len() != n {
            return Err(SimError::Setup(format!(
                "agent count mismatch: graph {}, models {}, states {}",
                self.graph.n(),
                n,
                self.initial_states.len()
            )));
        }
        if let Some(s) = self.scenario.spots.iter().find(|s| s.robot >= n) {
            return Err(SimError::Setup(format!("spot assigned to missing robot {}", s.robot)));
        }
        self.scenario
            .validate()
            .map_err(|e| SimError::Setup(e.to_string()))?;
        for (m, x) in self.models.iter().zip(&self.initial_states) {
            if x.dim() != m.dim() {
                return Err(PlantError {
                    what: "initial state",
                    expected: m.dim(),
                    got: x.dim(),
                }
                .into());
            }
        }
        if safety.enabled {
            safety.validate().map_err(SimError::Setup)?;
            let positions: Vec<Vec2> = self
                .models
                .iter()
                .zip(&self.initial_states)
                .map(|(m, x)| m.position(x))
                .collect();
            if layered_min_distance(&altitude_layers(&self.models, safety.delta), &positions) < safety.delta {
                return Err(SimError::Setup(
                    "initial positions closer than the safety distance".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Summary of one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub n: usize,
    pub converged: bool,
    /// Time of the first stopping check that passed, or the final time.
    pub convergence_time: f64,
    pub t_end: f64,
    pub steps: u64,
    pub events_total: u64,
    pub events_per_agent: f64,
    pub events_by_agent: Vec<u64>,
    /// Smallest gap between consecutive broadcasts of any agent; `None` if
    /// no agent broadcast twice.
    pub min_inter_event_time: Option<f64>,
    pub min_inter_event_by_agent: Vec<Option<f64>>,
    /// Per agent: share of broadcasts after the settling time that directly
    /// follow a broadcast on the previous step.
    pub back_to_back_fraction: Vec<f64>,
    /// Broadcasts that break `M (t_{k+1} − t_k) ≥ |ξ(t_{k+1})|`, with `M` the
    /// largest observed growth rate of `‖e‖`.
    pub zeno_bound_violations: u64,
    pub final_grad_norm: f64,
    pub final_sigma_norm: f64,
    pub final_cost: f64,
    /// `max_i ‖w_i + φ_i − σ(x)‖` at the end.
    pub final_tracking_w: f64,
    /// `max_i ‖z_i + ∇₂ℓ_i − mean_j ∇₂ℓ_j‖` at the end.
    pub final_tracking_z: f64,
    /// `max_t ‖Σ_i w_i‖∞`.
    pub max_mean_drift_w: f64,
    pub max_mean_drift_z: f64,
    /// Smallest distance between two robots at the same altitude.
    pub min_pairwise_distance: f64,
    /// Steps that ended with some pair closer than the safety distance.
    pub safety_infeasible_steps: u64,
    pub final_positions: Vec<Vec2>,
    pub final_u: Vec<Vec2>,
    #[serde(skip)]
    pub trace: Option<Trace>,
}

struct AgentMonitor {
    last_event_step: Option<u64>,
    min_gap_steps: Option<u64>,
    settled_events: u64,
    back_to_back: u64,
    last_e_norm: f64,
    max_e_rate: f64,
    last_event_time: f64,
}

impl AgentMonitor {
    fn new() -> Self {
        Self {
            last_event_step: None,
            min_gap_steps: None,
            settled_events: 0,
            back_to_back: 0,
            last_e_norm: 0.0,
            max_e_rate: 0.0,
            last_event_time: 0.0,
        }
    }
}

struct World<'a> {
    setup: &'a TrialSetup,
    params: AlgoParams,
    safety: SafetyConfig,
    cfg: SimConfig,
    exchange: Exchange,
    states: Vec<PlantState>,
    ctrl: Vec<ControllerState>,
    monitors: Vec<AgentMonitor>,
    t: f64,
    step: u64,
    max_drift_w: f64,
    max_drift_z: f64,
    min_dist: f64,
    infeasible_steps: u64,
    zeno_violations: u64,
    triggered_now: Vec<bool>,
    layers: Vec<Vec<usize>>,
    /// `(layer, index within layer)` of every agent.
    slot: Vec<(usize, usize)>,
}

impl<'a> World<'a> {
    fn new(
        setup: &'a TrialSetup,
        params: AlgoParams,
        safety: SafetyConfig,
        cfg: SimConfig,
        exchange: Exchange,
    ) -> Self {
        let n = setup.n();
        let sc = &setup.scenario;
        let ctrl: Vec<ControllerState> = (0..n)
            .map(|i| {
                let m = &setup.models[i];
                let x = &setup.initial_states[i];
                ControllerState::new(i, n, m.position(x), sc, m, x, &params)
            })
            .collect();
        let mut world = Self {
            setup,
            params,
            safety,
            cfg,
            exchange,
            states: setup.initial_states.clone(),
            ctrl,
            monitors: (0..n).map(|_| AgentMonitor::new()).collect(),
            t: 0.0,
            step: 0,
            max_drift_w: 0.0,
            max_drift_z: 0.0,
            min_dist: f64::INFINITY,
            infeasible_steps: 0,
            zeno_violations: 0,
            triggered_now: vec![false; n],
            layers: Vec::new(),
            slot: vec![(0, 0); n],
        };
        world.layers = altitude_layers(&setup.models, safety.delta);
        for (l, members) in world.layers.iter().enumerate() {
            for (k, &i) in members.iter().enumerate() {
                world.slot[i] = (l, k);
            }
        }
        // t = 0 broadcast of the initial hats
        let msgs: Vec<_> = world.ctrl.iter().map(|c| c.payload()).collect();
        world.deliver(&msgs);
        world.track_distance();
        world
    }

    fn n(&self) -> usize {
        self.setup.n()
    }

    fn positions(&self) -> Vec<Vec2> {
        self.setup
            .models
            .iter()
            .zip(&self.states)
            .map(|(m, x)| m.position(x))
            .collect()
    }

    fn us(&self) -> Vec<Vec2> {
        self.ctrl.iter().map(|c| c.u).collect()
    }

    fn deliver(&mut self, msgs: &[crate::controller::Payload]) {
        for msg in msgs {
            for &k in self.setup.graph.out_neighbors(msg.sender) {
                self.ctrl[k].receive(*msg);
            }
        }
    }

    fn track_distance(&mut self) {
        let d = layered_min_distance(&self.layers, &self.positions());
        if d < self.safety.delta {
            self.infeasible_steps += 1;
        }
        self.min_dist = self.min_dist.min(d);
    }

    fn step(&mut self) -> Result<(), SimError> {
        let n = self.n();
        let setup = self.setup;
        let sc = &setup.scenario;
        let g = &setup.graph;
        let dt = self.cfg.dt;
        let positions = self.positions();
        let layer_positions: Vec<Vec<Vec2>> = self
            .layers
            .iter()
            .map(|m| m.iter().map(|&i| positions[i]).collect())
            .collect();

        let live: Vec<(Vec2, Vec2)> = if self.exchange == Exchange::Continuous {
            (0..n)
                .map(|i| self.ctrl[i].live_payload(sc, &setup.models[i], &self.states[i]))
                .collect()
        } else {
            Vec::new()
        };

        let mut flows: Vec<ControllerFlow> = Vec::with_capacity(n);
        let mut xdots: Vec<Vec<f64>> = Vec::with_capacity(n);
        for i in 0..n {
            let m = &setup.models[i];
            let x = &self.states[i];
            let c = &self.ctrl[i];
            let f = match self.exchange {
                Exchange::Continuous => c.flow_continuous(sc, m, x, g, &live, &self.params),
                _ => c.flow(sc, m, x, g, &self.params)?,
            };
            let xdot = if self.safety.enabled {
                let (l, k) = self.slot[i];
                let guard = NeighborGuard {
                    cfg: &self.safety,
                    agent: k,
                    positions: &layer_positions[l],
                };
                m.guarded_derivative(x, c.u, Some(&guard as &dyn VelocityGuard), dt)?
            } else {
                m.derivative(x, c.u)?
            };
            flows.push(f);
            xdots.push(xdot);
        }

        for i in 0..n {
            self.states[i].add_scaled(&xdots[i], dt);
            self.ctrl[i].apply(&flows[i], dt);
        }
        self.step += 1;
        self.t = self.step as f64 * dt;

        for i in 0..n {
            let c = &self.ctrl[i];
            let finite = self.states[i].is_finite()
                && c.u.iter().chain(c.w.iter()).chain(c.z.iter()).all(|v| v.is_finite());
            if !finite {
                return Err(SimError::Diverged { agent: i, t: self.t });
            }
        }

        self.trigger_phase();

        let sum_w = self.ctrl.iter().fold(Vec2::zeros(), |a, c| a + c.w);
        let sum_z = self.ctrl.iter().fold(Vec2::zeros(), |a, c| a + c.z);
        self.max_drift_w = self.max_drift_w.max(sum_w.amax());
        self.max_drift_z = self.max_drift_z.max(sum_z.amax());
        if self.safety.enabled {
            self.track_distance();
        }
        Ok(())
    }

    fn trigger_phase(&mut self) {
        let n = self.n();
        let setup = self.setup;
        let sc = &setup.scenario;
        let mut msgs = Vec::new();
        for i in 0..n {
            self.triggered_now[i] = false;
            if self.exchange == Exchange::Continuous {
                continue;
            }
            let m = &setup.models[i];
            let x = &self.states[i];
            let e_norm = self.ctrl[i].error(sc, m, x).norm();
            let mon = &mut self.monitors[i];
            mon.max_e_rate = mon.max_e_rate.max((e_norm - mon.last_e_norm) / self.cfg.dt);
            mon.last_e_norm = e_norm;

            let fire = match self.exchange {
                Exchange::EventTriggered => self.ctrl[i].should_trigger(sc, m, x, &self.params),
                _ => true,
            };
            if !fire {
                continue;
            }
            // necessary condition for the trigger to have been reached
            let gap = self.t - mon.last_event_time;
            if self.exchange == Exchange::EventTriggered
                && mon.max_e_rate * gap < self.ctrl[i].xi.abs() * (1.0 - 1e-12)
            {
                self.zeno_violations += 1;
            }
            if let Some(prev) = mon.last_event_step {
                let d = self.step - prev;
                mon.min_gap_steps = Some(mon.min_gap_steps.map_or(d, |g| g.min(d)));
                if self.t > SETTLE_TIME && d == 1 {
                    mon.back_to_back += 1;
                }
            }
            if self.t > SETTLE_TIME {
                mon.settled_events += 1;
            }
            mon.last_event_step = Some(self.step);
            mon.last_event_time = self.t;
            mon.last_e_norm = 0.0;
            msgs.push(self.ctrl[i].on_trigger(sc, m, x, self.t));
            self.triggered_now[i] = true;
        }
        self.deliver(&msgs);
    }

    fn grad_norm(&self) -> f64 {
        self.setup
            .scenario
            .grad_reduced_norm(&self.setup.models, &self.us())
    }

    /// `(max_i ‖w_i + φ_i − σ‖, max_i ‖z_i + ∇₂ℓ_i − mean ∇₂ℓ‖)` with `σ` the
    /// true aggregate.
    fn tracking_errors(&self) -> (f64, f64, Vec<(f64, f64)>) {
        let sc = &self.setup.scenario;
        let positions = self.positions();
        let sigma = sc.sigma_central(&positions);
        // ∇₂ℓ_j(x_j, σ) is the same for every robot
        let mean_g2 = sc.grad2_cost(sigma);
        let per: Vec<(f64, f64)> = self
            .ctrl
            .iter()
            .zip(&positions)
            .map(|(c, p)| {
                let tw = (c.w + sc.phi(*p) - sigma).norm();
                let tz = (c.z + sc.grad2_cost(sigma) - mean_g2).norm();
                (tw, tz)
            })
            .collect();
        let mw = per.iter().map(|v| v.0).fold(0.0, f64::max);
        let mz = per.iter().map(|v| v.1).fold(0.0, f64::max);
        (mw, mz, per)
    }

    fn sample(&self, grad_norm: f64) -> TraceRow {
        let setup = self.setup;
        let sc = &setup.scenario;
        let positions = self.positions();
        let sigma = sc.sigma_central(&positions);
        let (_, _, per) = self.tracking_errors();
        let agents = (0..self.n())
            .map(|i| {
                let m = &setup.models[i];
                let x = &self.states[i];
                let c = &self.ctrl[i];
                AgentSample {
                    p: positions[i],
                    u: c.u,
                    track_w: per[i].0,
                    track_z: per[i].1,
                    e_norm: c.error(sc, m, x).norm(),
                    g_norm: c.direction(sc, m, x).norm(),
                    xi: c.xi,
                    triggered: self.triggered_now[i],
                    events: c.trigger_count,
                }
            })
            .collect();
        TraceRow {
            t: self.t,
            grad_norm,
            sigma_norm: sigma.norm(),
            sum_w_inf: self.ctrl.iter().fold(Vec2::zeros(), |a, c| a + c.w).amax(),
            sum_z_inf: self.ctrl.iter().fold(Vec2::zeros(), |a, c| a + c.z).amax(),
            agents,
        }
    }

    fn finish(self, converged: bool, convergence_time: f64, final_grad: f64, trace: Option<Trace>) -> TrialResult {
        let n = self.n();
        let dt = self.cfg.dt;
        let positions = self.positions();
        let sc = &self.setup.scenario;
        let (tw, tz, _) = self.tracking_errors();
        let events_by_agent: Vec<u64> = self.ctrl.iter().map(|c| c.trigger_count).collect();
        let events_total: u64 = events_by_agent.iter().sum();
        let min_by_agent: Vec<Option<f64>> = self
            .monitors
            .iter()
            .map(|m| m.min_gap_steps.map(|s| s as f64 * dt))
            .collect();
        let min_inter = min_by_agent.iter().flatten().copied().reduce(f64::min);
        let b2b = self
            .monitors
            .iter()
            .map(|m| {
                if m.settled_events == 0 {
                    0.0
                } else {
                    m.back_to_back as f64 / m.settled_events as f64
                }
            })
            .collect();
        let min_dist = self.min_dist.min(layered_min_distance(&self.layers, &positions));
        TrialResult {
            n,
            converged,
            convergence_time,
            t_end: self.t,
            steps: self.step,
            events_total,
            events_per_agent: events_total as f64 / n as f64,
            events_by_agent,
            min_inter_event_time: min_inter,
            min_inter_event_by_agent: min_by_agent,
            back_to_back_fraction: b2b,
            zeno_bound_violations: self.zeno_violations,
            final_grad_norm: final_grad,
            final_sigma_norm: sc.sigma_central(&positions).norm(),
            final_cost: sc.cost_state(&positions),
            final_tracking_w: tw,
            final_tracking_z: tz,
            max_mean_drift_w: self.max_drift_w,
            max_mean_drift_z: self.max_drift_z,
            min_pairwise_distance: min_dist,
            safety_infeasible_steps: self.infeasible_steps,
            final_positions: positions,
            final_u: self.us(),
            trace,
        }
    }
}

/// Groups of agents flying within `delta` of each other's altitude.
fn altitude_layers(models: &[PlantModel], delta: f64) -> Vec<Vec<usize>> {
    let mut layers: Vec<(f64, Vec<usize>)> = Vec::new();
    for (i, m) in models.iter().enumerate() {
        let z = m.altitude();
        match layers.iter_mut().find(|(lz, _)| (lz - z).abs() < delta) {
            Some((_, members)) => members.push(i),
            None => layers.push((z, vec![i])),
        }
    }
    layers.into_iter().map(|(_, m)| m).collect()
}

/// Smallest distance between two agents of the same layer.
fn layered_min_distance(layers: &[Vec<usize>], positions: &[Vec2]) -> f64 {
    layers
        .iter()
        .map(|m| min_pairwise_distance(&m.iter().map(|&i| positions[i]).collect::<Vec<_>>()))
        .fold(f64::INFINITY, f64::min)
}

fn simulate(
    setup: &TrialSetup,
    params: &AlgoParams,
    safety: &SafetyConfig,
    cfg: &SimConfig,
    exchange: Exchange,
) -> Result<TrialResult, SimError> {
    cfg.validate()?;
    params.validate()?;
    setup.check(safety)?;

    let mut world = World::new(setup, *params, *safety, *cfg, exchange);
    let mut trace = cfg.record_trace.then(|| Trace::new(setup.n()));
    let max_steps = (cfg.t_max / cfg.dt).round() as u64;
    let every = cfg.record_every as u64;

    let mut grad = world.grad_norm();
    if let Some(tr) = trace.as_mut() {
        tr.rows.push(world.sample(grad));
    }
    let mut converged = grad <= cfg.stop_tol;
    while !converged && world.step < max_steps {
        world.step()?;
        if world.step % every == 0 || world.step == max_steps {
            grad = world.grad_norm();
            converged = grad <= cfg.stop_tol;
            if let Some(tr) = trace.as_mut() {
                tr.rows.push(world.sample(grad));
            }
        }
    }
    let t = world.t;
    Ok(world.finish(converged, t, grad, trace))
}

/// Event-triggered closed loop.
pub fn run_trial(
    setup: &TrialSetup,
    params: &AlgoParams,
    safety: &SafetyConfig,
    cfg: &SimConfig,
) -> Result<TrialResult, SimError> {
    simulate(setup, params, safety, cfg, Exchange::EventTriggered)
}

/// Closed loop with an explicit exchange policy.
pub fn run_with_exchange(
    setup: &TrialSetup,
    params: &AlgoParams,
    safety: &SafetyConfig,
    cfg: &SimConfig,
    exchange: Exchange,
) -> Result<TrialResult, SimError> {
    simulate(setup, params, safety, cfg, exchange)
}

/// Discretized continuous-communication law: every robot mixes with the
/// neighbors' current values at every step.
pub fn run_continuous_baseline(
    setup: &TrialSetup,
    params: &AlgoParams,
    safety: &SafetyConfig,
    cfg: &SimConfig,
) -> Result<TrialResult, SimError> {
    simulate(setup, params, safety, cfg, Exchange::Continuous)
}
