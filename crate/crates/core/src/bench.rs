//! Monte Carlo campaigns and the reference scenarios.
//!
//! Every trial draws its graph, initial positions and headings from its own
//! RNG, seeded by a pure function of (campaign seed, sweep point, trial
//! index), so campaigns are reproducible regardless of thread scheduling.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::AlgoParams;
use crate::costs::{Gaussian, Scenario, SpotAssignment};
use crate::graph::{generate_er, GraphError};
use crate::plants::{PlantModel, PlantState};
use crate::safety::SafetyConfig;
use crate::sim::{run_trial, SimConfig, SimError, TrialResult, TrialSetup};
use crate::Vec2;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid campaign: {0}")]
    Spec(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("could not place {n} robots {min_gap} apart in the initial box")]
    Placement { n: usize, min_gap: f64 },
    #[error("scenario must be 1, 2, 3 or 4 (got {0})")]
    UnknownScenario(u8),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantKind {
    Single,
    Unicycle,
    Quad,
}

impl PlantKind {
    pub fn model(self) -> PlantModel {
        match self {
            PlantKind::Single => PlantModel::single_integrator(),
            PlantKind::Unicycle => PlantModel::unicycle(),
            PlantKind::Quad => PlantModel::quadrotor(),
        }
    }
}

/// Everything a random trial is built from, except the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialTemplate {
    pub n: usize,
    /// Model used for every robot unless `models` is set.
    pub plant: PlantModel,
    /// Per-robot models; overrides `plant` and `n` when present.
    #[serde(default)]
    pub models: Option<Vec<PlantModel>>,
    pub edge_prob: f64,
    /// Edge weights of the drawn graph are `weight_gain / N`.
    pub weight_gain: f64,
    /// Initial positions are uniform in `[-h, h]²` around the origin.
    pub init_half_width: f64,
    pub scenario: Scenario,
    pub params: AlgoParams,
    pub safety: SafetyConfig,
    pub sim: SimConfig,
}

impl Default for TrialTemplate {
    fn default() -> Self {
        Self {
            n: 5,
            plant: PlantModel::quadrotor(),
            models: None,
            edge_prob: 0.5,
            weight_gain: 1.0,
            init_half_width: 4.0,
            scenario: Scenario::default(),
            params: AlgoParams::default(),
            safety: SafetyConfig::default(),
            sim: SimConfig::default(),
        }
    }
}

impl TrialTemplate {
    pub fn agent_count(&self) -> usize {
        self.models.as_ref().map_or(self.n, Vec::len)
    }

    fn model_list(&self) -> Vec<PlantModel> {
        self.models
            .clone()
            .unwrap_or_else(|| vec![self.plant; self.n])
    }

    /// Draw a graph, positions and headings for one trial.
    ///
    /// Edge weights are scaled by `1/N` so the Laplacian spectrum stays in
    /// `[0, 2]`, which keeps the forward-Euler tracker update stable at
    /// `dt/α₂ = 1`.
    pub fn instantiate(&self, seed: u64) -> Result<TrialSetup, BenchError> {
        let n = self.agent_count();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let graph = generate_er(n, self.edge_prob, rng.random())?.rescaled(self.weight_gain / n as f64)?;
        let positions = sample_positions(&mut rng, n, self.init_half_width, 2.0 * self.safety.delta)?;
        let models = self.model_list();
        let initial_states = models
            .iter()
            .zip(&positions)
            .map(|(m, p)| {
                let mut x = m.state_at(*p);
                if let PlantModel::Unicycle(_) = m {
                    x.0[2] = rng.random_range(-PI..PI);
                }
                x
            })
            .collect::<Vec<PlantState>>();
        Ok(TrialSetup {
            graph,
            scenario: self.scenario.clone(),
            models,
            initial_states,
        })
    }

    pub fn run(&self, seed: u64) -> Result<TrialResult, BenchError> {
        let setup = self.instantiate(seed)?;
        Ok(run_trial(&setup, &self.params, &self.safety, &self.sim)?)
    }
}

const MAX_PLACEMENT_DRAWS: usize = 100_000;

/// Uniform positions in `[-h, h]²`, rejection-sampled so every pair is at
/// least `min_gap` apart.
pub fn sample_positions(
    rng: &mut impl Rng,
    n: usize,
    h: f64,
    min_gap: f64,
) -> Result<Vec<Vec2>, BenchError> {
    let mut out: Vec<Vec2> = Vec::with_capacity(n);
    let mut draws = 0;
    while out.len() < n {
        draws += 1;
        if draws > MAX_PLACEMENT_DRAWS {
            return Err(BenchError::Placement { n, min_gap });
        }
        let p = Vec2::new(rng.random_range(-h..h), rng.random_range(-h..h));
        if out.iter().all(|q| (p - q).norm() >= min_gap) {
            out.push(p);
        }
    }
    Ok(out)
}

/// Seed of trial `k` in random stream `stream` of a campaign.
pub fn trial_seed(campaign_seed: u64, stream: usize, k: usize) -> u64 {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&campaign_seed.to_le_bytes());
    key[8..16].copy_from_slice(&(stream as u64).to_le_bytes());
    key[16..24].copy_from_slice(&(k as u64).to_le_bytes());
    ChaCha8Rng::from_seed(key).random()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    SweepLambda,
    SweepN,
    Scenario,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignSpec {
    pub mode: Mode,
    pub lambda_values: Vec<f64>,
    pub n_values: Vec<usize>,
    pub trials_per_point: usize,
    pub seed: u64,
    pub template: TrialTemplate,
}

impl CampaignSpec {
    /// λ sweep: five quadrotors, cooperative term only, no safety filter.
    pub fn sweep_lambda_default() -> Self {
        Self {
            mode: Mode::SweepLambda,
            lambda_values: vec![0.05, 0.1, 0.2, 0.5, 1.0, 1.5],
            n_values: vec![5],
            trials_per_point: 20,
            seed: 0,
            template: TrialTemplate::default(),
        }
    }

    /// N sweep: ground robots, cooperative term only, λ = 1, tight
    /// tolerance, safety filter on.
    pub fn sweep_n_default() -> Self {
        let mut template = TrialTemplate {
            plant: PlantModel::unicycle(),
            safety: SafetyConfig::enabled(),
            ..TrialTemplate::default()
        };
        template.params.lambda = 1.0;
        template.sim.stop_tol = 1e-3;
        template.sim.t_max = 400.0;
        Self {
            mode: Mode::SweepN,
            lambda_values: vec![1.0],
            n_values: vec![5, 10, 20],
            trials_per_point: 20,
            seed: 0,
            template,
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.trials_per_point == 0 {
            return Err(BenchError::Spec("trials_per_point must be at least 1".into()));
        }
        let empty = match self.mode {
            Mode::SweepLambda => self.lambda_values.is_empty(),
            Mode::SweepN => self.n_values.is_empty(),
            Mode::Scenario => false,
        };
        if empty {
            return Err(BenchError::Spec("sweep list is empty".into()));
        }
        Ok(())
    }
}

/// Summary statistics of one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSummary {
    pub point: usize,
    pub lambda: f64,
    pub n: usize,
    pub trials: usize,
    /// Trials that aborted (divergence or setup failure).
    pub failures: usize,
    pub converged_fraction: f64,
    pub convergence_time_median: f64,
    pub convergence_time_q1: f64,
    pub convergence_time_q3: f64,
    pub events_per_agent_mean: f64,
    pub events_per_agent_std: f64,
    pub events_per_agent_median: f64,
    pub events_per_agent_q1: f64,
    pub events_per_agent_q3: f64,
    pub min_pairwise_distance: f64,
    pub min_inter_event_time: Option<f64>,
    pub max_back_to_back_fraction: f64,
}

/// Outcomes of one sweep point, in trial order.
#[derive(Debug, Clone)]
pub struct PointReport {
    pub summary: PointSummary,
    pub seeds: Vec<u64>,
    pub trials: Vec<Result<TrialResult, String>>,
}

/// Linear-interpolation quantile of `v` (`q ∈ [0, 1]`); NaN when empty.
pub fn quantile(v: &[f64], q: f64) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = q * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64;
    (m, var.sqrt())
}

pub fn summarize(point: usize, template: &TrialTemplate, trials: &[Result<TrialResult, String>]) -> PointSummary {
    let ok: Vec<&TrialResult> = trials.iter().filter_map(|r| r.as_ref().ok()).collect();
    // aborted trials count as unconverged at the horizon
    let times: Vec<f64> = trials
        .iter()
        .map(|r| r.as_ref().map_or(template.sim.t_max, |t| t.convergence_time))
        .collect();
    let events: Vec<f64> = ok.iter().map(|t| t.events_per_agent).collect();
    let (ev_mean, ev_std) = mean_std(&events);
    PointSummary {
        point,
        lambda: template.params.lambda,
        n: template.agent_count(),
        trials: trials.len(),
        failures: trials.len() - ok.len(),
        converged_fraction: ok.iter().filter(|t| t.converged).count() as f64 / trials.len() as f64,
        convergence_time_median: quantile(&times, 0.5),
        convergence_time_q1: quantile(&times, 0.25),
        convergence_time_q3: quantile(&times, 0.75),
        events_per_agent_mean: ev_mean,
        events_per_agent_std: ev_std,
        events_per_agent_median: quantile(&events, 0.5),
        events_per_agent_q1: quantile(&events, 0.25),
        events_per_agent_q3: quantile(&events, 0.75),
        min_pairwise_distance: ok.iter().map(|t| t.min_pairwise_distance).fold(f64::INFINITY, f64::min),
        min_inter_event_time: ok.iter().filter_map(|t| t.min_inter_event_time).reduce(f64::min),
        max_back_to_back_fraction: ok
            .iter()
            .flat_map(|t| t.back_to_back_fraction.iter().copied())
            .fold(0.0, f64::max),
    }
}

/// Run `trials` seeded trials of `template` in parallel. Every point of a
/// campaign draws from the same stream, so trial `k` starts from the same
/// graph and positions at each λ and the comparison is paired.
pub fn run_point(template: &TrialTemplate, point: usize, trials: usize, campaign_seed: u64) -> PointReport {
    let seeds: Vec<u64> = (0..trials).map(|k| trial_seed(campaign_seed, 0, k)).collect();
    let results: Vec<Result<TrialResult, String>> = seeds
        .par_iter()
        .map(|&s| template.run(s).map_err(|e| e.to_string()))
        .collect();
    PointReport {
        summary: summarize(point, template, &results),
        seeds,
        trials: results,
    }
}

pub fn sweep_lambda(spec: &CampaignSpec) -> Result<Vec<PointReport>, BenchError> {
    spec.validate()?;
    Ok(spec
        .lambda_values
        .iter()
        .enumerate()
        .map(|(i, &lambda)| {
            let mut t = spec.template.clone();
            t.params.lambda = lambda;
            run_point(&t, i, spec.trials_per_point, spec.seed)
        })
        .collect())
}

pub fn sweep_n(spec: &CampaignSpec) -> Result<Vec<PointReport>, BenchError> {
    spec.validate()?;
    Ok(spec
        .n_values
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let mut t = spec.template.clone();
            t.n = n;
            t.models = None;
            run_point(&t, i, spec.trials_per_point, spec.seed)
        })
        .collect())
}

/// Critically damped quadrotor tracker for the scenarios with spot and
/// danger terms, whose curvature destabilizes the default tracker.
pub fn stiff_quadrotor(z_static: f64) -> PlantModel {
    PlantModel::ReducedQuadrotor {
        kp: 1600.0,
        kd: 80.0,
        z_static,
    }
}

fn uniform_point(rng: &mut impl Rng, h: f64) -> Vec2 {
    Vec2::new(rng.random_range(-h..h), rng.random_range(-h..h))
}

/// Configuration of reference scenario `which` (1 to 4).
///
/// 1. Ten quadrotors, cooperative term only.
/// 2. Adds five points of interest assigned to robots 0..5 (γ = 25, 2).
/// 3. Adds ten Gaussian danger zones (γ₃ = 20).
/// 4. Three quadrotors at distinct altitudes and seven ground robots with
///    four points of interest, one shared by two quadrotors; safety filter
///    on and a slower reference gain α₁ = 0.1.
///
/// Scenarios 2 and 3 draw the same spots and start positions for a given
/// seed, so they can be compared pairwise.
pub fn scenario_template(which: u8, seed: u64) -> Result<TrialTemplate, BenchError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ce7_a810);
    let spots: Vec<Vec2> = (0..5).map(|_| uniform_point(&mut rng, 4.0)).collect();
    let gaussians: Vec<Gaussian> = (0..10)
        .map(|_| Gaussian {
            mu: uniform_point(&mut rng, 3.0),
            s: rng.random_range(0.4..0.9),
            amp: 1.0,
        })
        .collect();
    let assign = |pairs: &[(usize, usize)]| -> Vec<SpotAssignment> {
        pairs
            .iter()
            .map(|&(robot, k)| SpotAssignment { robot, point: spots[k] })
            .collect()
    };
    let base = TrialTemplate {
        n: 10,
        plant: PlantModel::quadrotor(),
        sim: SimConfig {
            record_trace: true,
            ..SimConfig::default()
        },
        ..TrialTemplate::default()
    };
    let t = match which {
        1 => TrialTemplate {
            scenario: Scenario::coop_only(Vec2::zeros(), 1.0),
            ..base
        },
        2 | 3 => TrialTemplate {
            plant: stiff_quadrotor(1.0),
            scenario: Scenario {
                gammas: [25.0, 2.0, if which == 3 { 20.0 } else { 0.0 }],
                spots: assign(&[(0, 0), (1, 1), (2, 2), (3, 3), (4, 4)]),
                gaussians: if which == 3 { gaussians } else { Vec::new() },
                ..Scenario::coop_only(Vec2::zeros(), 25.0)
            },
            ..base
        },
        4 => {
            let mut models: Vec<PlantModel> = [1.0, 1.5, 2.0].map(stiff_quadrotor).to_vec();
            models.extend(vec![PlantModel::unicycle(); 7]);
            TrialTemplate {
                models: Some(models),
                scenario: Scenario {
                    gammas: [25.0, 2.0, 0.0],
                    spots: assign(&[(0, 0), (1, 0), (3, 1), (5, 2), (8, 3)]),
                    ..Scenario::coop_only(Vec2::zeros(), 25.0)
                },
                safety: SafetyConfig::enabled(),
                // the ground robots' speed cap cannot keep up with the
                // reference at the default α₁ under γ₁ = 25
                params: AlgoParams {
                    alpha1: 0.1,
                    ..AlgoParams::default()
                },
                ..base
            }
        }
        other => return Err(BenchError::UnknownScenario(other)),
    };
    Ok(t)
}

pub fn run_scenario(which: u8, seed: u64) -> Result<TrialResult, BenchError> {
    scenario_template(which, seed)?.run(seed)
}

/// Scenario file: a cost configuration with optional plant and safety
/// overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    #[serde(flatten)]
    pub scenario: Scenario,
    #[serde(default)]
    pub plant: Option<PlantModel>,
    #[serde(default)]
    pub models: Option<Vec<PlantModel>>,
    #[serde(default)]
    pub safety: Option<SafetyConfig>,
}

impl ScenarioFile {
    pub fn from_json(text: &str) -> Result<Self, BenchError> {
        let f: ScenarioFile = serde_json::from_str(text)?;
        f.scenario
            .validate()
            .map_err(|e| BenchError::Spec(e.to_string()))?;
        Ok(f)
    }

    pub fn apply(self, t: &mut TrialTemplate) {
        t.scenario = self.scenario;
        if let Some(p) = self.plant {
            t.plant = p;
        }
        if let Some(m) = self.models {
            t.n = m.len();
            t.models = Some(m);
        }
        if let Some(s) = self.safety {
            t.safety = s;
        }
    }
}

/// Write `summary.json` plus `trial_<k>.json` for every trial. Sweeps with
/// several points put trial files under `point_<i>/`.
pub fn write_campaign(dir: &Path, reports: &[PointReport]) -> Result<(), BenchError> {
    fs::create_dir_all(dir)?;
    let summaries: Vec<&PointSummary> = reports.iter().map(|r| &r.summary).collect();
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summaries)?)?;
    for r in reports {
        let sub = if reports.len() == 1 {
            dir.to_path_buf()
        } else {
            dir.join(format!("point_{}", r.summary.point))
        };
        fs::create_dir_all(&sub)?;
        for (k, t) in r.trials.iter().enumerate() {
            let body = match t {
                Ok(t) => serde_json::to_string_pretty(t)?,
                Err(e) => serde_json::to_string_pretty(&serde_json::json!({ "error": e }))?,
            };
            fs::write(sub.join(format!("trial_{k}.json")), body)?;
            if let Ok(t) = t {
                write_trace(&sub, k, t)?;
            }
        }
    }
    Ok(())
}

/// Write `trial_<k>.csv` when the result carries a trace.
pub fn write_trace(dir: &Path, k: usize, result: &TrialResult) -> Result<(), BenchError> {
    if let Some(trace) = &result.trace {
        trace.write_csv(fs::File::create(dir.join(format!("trial_{k}.csv")))?)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_interpolates() {
        let v = [4.0, 1.0, 3.0, 2.0];
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert!(quantile(&[], 0.5).is_nan());
    }

    #[test]
    fn seeds_differ_by_point_and_trial() {
        let a = trial_seed(7, 0, 0);
        assert_eq!(a, trial_seed(7, 0, 0));
        assert_ne!(a, trial_seed(7, 1, 0));
        assert_ne!(a, trial_seed(7, 0, 1));
        assert_ne!(a, trial_seed(8, 0, 0));
    }

    #[test]
    fn placement_respects_gap() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = sample_positions(&mut rng, 20, 4.0, 0.4).unwrap();
        for i in 0..p.len() {
            for j in (i + 1)..p.len() {
                assert!((p[i] - p[j]).norm() >= 0.4);
            }
        }
        assert!(sample_positions(&mut rng, 100, 0.1, 1.0).is_err());
    }

    #[test]
    fn single_trial_point_reports_that_trial() {
        let t = TrialTemplate {
            sim: SimConfig {
                t_max: 20.0,
                ..SimConfig::default()
            },
            ..TrialTemplate::default()
        };
        let rep = run_point(&t, 0, 1, 11);
        let r = rep.trials[0].as_ref().unwrap();
        assert_eq!(rep.summary.convergence_time_median, r.convergence_time);
        assert_eq!(rep.summary.events_per_agent_median, r.events_per_agent);
        assert_eq!(rep.summary.events_per_agent_mean, r.events_per_agent);
    }

    #[test]
    fn empty_sweep_rejected() {
        let mut spec = CampaignSpec::sweep_lambda_default();
        spec.lambda_values.clear();
        assert!(matches!(sweep_lambda(&spec), Err(BenchError::Spec(_))));
        spec.lambda_values.push(0.1);
        spec.trials_per_point = 0;
        assert!(sweep_lambda(&spec).is_err());
    }

    #[test]
    fn scenario_two_and_three_share_spots() {
        let a = scenario_template(2, 5).unwrap();
        let b = scenario_template(3, 5).unwrap();
        assert_eq!(a.scenario.spots, b.scenario.spots);
        assert!(a.scenario.gaussians.is_empty());
        assert_eq!(b.scenario.gaussians.len(), 10);
        assert_eq!(a.instantiate(5).unwrap().initial_states, b.instantiate(5).unwrap().initial_states);
        assert!(scenario_template(5, 0).is_err());
    }
}
