use encircle_core::bench::{self, TrialTemplate};
use encircle_core::sim::{run_with_exchange, Exchange};
use encircle_core::trace::Trace;
use encircle_core::{AlgoParams, Scenario, SimConfig, TrialResult};
use proptest::prelude::*;

fn short(t_max: f64) -> TrialTemplate {
    TrialTemplate {
        sim: SimConfig {
            t_max,
            ..SimConfig::default()
        },
        ..TrialTemplate::default()
    }
}

fn traced(t: &TrialTemplate, seed: u64, exchange: Exchange) -> TrialResult {
    let mut t = t.clone();
    t.sim.record_every = 1;
    t.sim.record_trace = true;
    t.sim.stop_tol = 1e-300;
    let setup = t.instantiate(seed).unwrap();
    run_with_exchange(&setup, &t.params, &t.safety, &t.sim, exchange).unwrap()
}

fn sup_distance(a: &Trace, b: &Trace) -> f64 {
    assert_eq!(a.rows.len(), b.rows.len());
    a.rows
        .iter()
        .zip(&b.rows)
        .flat_map(|(ra, rb)| {
            ra.agents
                .iter()
                .zip(&rb.agents)
                .map(|(x, y)| (x.u - y.u).amax().max((x.p - y.p).amax()))
        })
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn trackers_conserve_their_sums(seed in any::<u64>(), lambda in 0.01..1.5f64, n in 3..9usize) {
        let mut t = short(30.0);
        t.n = n;
        t.params.lambda = lambda;
        let r = t.run(seed).unwrap();
        prop_assert!(r.max_mean_drift_w <= 1e-9, "{}", r.max_mean_drift_w);
        prop_assert!(r.max_mean_drift_z <= 1e-9, "{}", r.max_mean_drift_z);
    }

    #[test]
    fn trigger_gaps_respect_the_zeno_bound(seed in any::<u64>(), lambda in 0.01..1.5f64) {
        let mut t = short(30.0);
        t.params.lambda = lambda;
        let r = t.run(seed).unwrap();
        prop_assert_eq!(r.zeno_bound_violations, 0);
        if let Some(gap) = r.min_inter_event_time {
            prop_assert!(gap >= t.sim.dt * (1.0 - 1e-9));
        }
        prop_assert_eq!(r.events_total, r.events_by_agent.iter().sum::<u64>());
        prop_assert!((r.events_per_agent - r.events_total as f64 / r.n as f64).abs() < 1e-12);
    }
}

#[test]
fn same_seed_gives_identical_results() {
    let t = short(40.0);
    let a = t.run(17).unwrap();
    let b = t.run(17).unwrap();
    assert_eq!(a, b);
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    assert_ne!(a, t.run(18).unwrap());
}

#[test]
fn zero_threshold_matches_forced_broadcast() {
    let mut t = short(10.0);
    t.params = AlgoParams {
        lambda: 0.0,
        xi0: 1e-300,
        ..AlgoParams::default()
    };
    let a = traced(&t, 3, Exchange::EventTriggered);
    let b = traced(&t, 3, Exchange::EveryStep);
    let d = sup_distance(a.trace.as_ref().unwrap(), b.trace.as_ref().unwrap());
    assert!(d <= 1e-6, "sup distance {d}");
}

#[test]
fn campaign_summary_is_reproducible() {
    let t = short(20.0);
    let a = bench::run_point(&t, 0, 4, 99);
    let b = bench::run_point(&t, 0, 4, 99);
    assert_eq!(a.summary, b.summary);
    assert_eq!(a.seeds, b.seeds);
}

#[test]
fn spotless_scenario_file_round_trips_through_template() {
    let text = r#"{"target":[0.5,-0.5],"gammas":[1.0,0.0,0.0],"spots":[],"gaussians":[],
                  "plant":{"kind":"single_integrator","gain":2.0},
                  "safety":{"enabled":true,"delta":0.2,"kappa":2.0,"sensing_radius":1.0}}"#;
    let mut t = TrialTemplate::default();
    bench::ScenarioFile::from_json(text).unwrap().apply(&mut t);
    assert!(t.safety.enabled);
    assert_eq!(t.scenario.target, encircle_core::Vec2::new(0.5, -0.5));
    assert_eq!(t.scenario.gammas, Scenario::coop_only(t.scenario.target, 1.0).gammas);
    assert_eq!(t.plant.name(), "single");
    assert!(t.run(1).is_ok());
}

#[test]
fn campaign_files_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let mut t = short(5.0);
    t.sim.record_trace = true;
    let reports = vec![bench::run_point(&t, 0, 2, 1)];
    bench::write_campaign(dir.path(), &reports).unwrap();
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary.as_array().unwrap().len(), 1);
    let csv = std::fs::read_to_string(dir.path().join("trial_1.csv")).unwrap();
    assert!(csv.starts_with("t,grad_norm,sigma_norm"));
    let r: TrialResult =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("trial_0.json")).unwrap()).unwrap();
    assert_eq!(r.n, 5);
}
