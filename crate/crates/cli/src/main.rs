use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use encircle_core::bench::{
    self, CampaignSpec, PlantKind, PointReport, ScenarioFile, TrialTemplate,
};
use encircle_core::TrialResult;

#[derive(Parser)]
#[command(name = "encircle", version, about = "Event-triggered multi-robot encirclement simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep the trigger parameter λ at fixed team size.
    SweepLambda(Common),
    /// Sweep the team size at fixed λ.
    SweepN(Common),
    /// Run one of the four reference scenarios with a full trace.
    Scenario {
        /// Scenario number (1 to 4).
        which: u8,
        #[command(flatten)]
        common: Common,
    },
    /// Run a single random trial.
    Trial(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum Plant {
    Single,
    Unicycle,
    Quad,
}

impl From<Plant> for PlantKind {
    fn from(p: Plant) -> Self {
        match p {
            Plant::Single => PlantKind::Single,
            Plant::Unicycle => PlantKind::Unicycle,
            Plant::Quad => PlantKind::Quad,
        }
    }
}

#[derive(Args, Clone)]
struct Common {
    /// Team size; a comma-separated list for sweep-n.
    #[arg(long, value_delimiter = ',')]
    n: Vec<usize>,
    /// Trigger parameter; a comma-separated list for sweep-lambda.
    #[arg(long, value_delimiter = ',')]
    lambda: Vec<f64>,
    /// Trials per sweep point.
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    t_max: Option<f64>,
    #[arg(long)]
    stop_tol: Option<f64>,
    /// JSON cost configuration, optionally with `plant`, `models` and
    /// `safety` entries.
    #[arg(long)]
    scenario_file: Option<PathBuf>,
    /// Output directory for summary.json and per-trial files.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    safety: Option<OnOff>,
    #[arg(long, value_enum)]
    plant: Option<Plant>,
    /// Record per-step traces (always on for `scenario` and `trial`).
    #[arg(long)]
    trace: bool,
}

impl Common {
    fn apply(&self, t: &mut TrialTemplate) -> Result<()> {
        if let Some(path) = &self.scenario_file {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            ScenarioFile::from_json(&text)?.apply(t);
        }
        if let Some(p) = self.plant {
            t.plant = PlantKind::from(p).model();
            t.models = None;
        }
        if let Some(s) = self.safety {
            t.safety.enabled = matches!(s, OnOff::On);
        }
        if let Some(dt) = self.dt {
            t.sim.dt = dt;
        }
        if let Some(v) = self.t_max {
            t.sim.t_max = v;
        }
        if let Some(v) = self.stop_tol {
            t.sim.stop_tol = v;
        }
        if self.trace {
            t.sim.record_trace = true;
        }
        Ok(())
    }

    fn single<T: Copy>(list: &[T], what: &str) -> Result<Option<T>> {
        match list {
            [] => Ok(None),
            [v] => Ok(Some(*v)),
            _ => bail!("--{what} takes a single value here"),
        }
    }
}

fn print_reports(reports: &[PointReport]) {
    println!(
        "{:>6} {:>4} {:>7} {:>10} {:>10} {:>12} {:>10} {:>9}",
        "lambda", "n", "conv", "t_med", "t_iqr", "events_med", "events_sd", "min_dist"
    );
    for r in reports {
        let s = &r.summary;
        println!(
            "{:>6} {:>4} {:>7.2} {:>10.2} {:>10.2} {:>12.1} {:>10.1} {:>9.3}",
            s.lambda,
            s.n,
            s.converged_fraction,
            s.convergence_time_median,
            s.convergence_time_q3 - s.convergence_time_q1,
            s.events_per_agent_median,
            s.events_per_agent_std,
            s.min_pairwise_distance
        );
    }
}

fn print_trial(r: &TrialResult) {
    println!(
        "converged={} t={:.2} grad={:.3e} |sigma|={:.4} events/agent={:.1} min_gap={:?} min_dist={:.3}",
        r.converged,
        r.convergence_time,
        r.final_grad_norm,
        r.final_sigma_norm,
        r.events_per_agent,
        r.min_inter_event_time,
        r.min_pairwise_distance
    );
}

fn write_single(out: &Option<PathBuf>, r: &TrialResult) -> Result<()> {
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("trial_0.json"), serde_json::to_string_pretty(r)?)?;
        bench::write_trace(dir, 0, r)?;
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::SweepLambda(c) => {
            let mut spec = CampaignSpec::sweep_lambda_default();
            c.apply(&mut spec.template)?;
            if let Some(n) = Common::single(&c.n, "n")? {
                spec.template.n = n;
            }
            if !c.lambda.is_empty() {
                spec.lambda_values = c.lambda.clone();
            }
            spec.trials_per_point = c.trials.unwrap_or(spec.trials_per_point);
            spec.seed = c.seed;
            let reports = bench::sweep_lambda(&spec)?;
            print_reports(&reports);
            if let Some(dir) = &c.out {
                bench::write_campaign(dir, &reports)?;
            }
        }
        Command::SweepN(c) => {
            let mut spec = CampaignSpec::sweep_n_default();
            c.apply(&mut spec.template)?;
            if let Some(l) = Common::single(&c.lambda, "lambda")? {
                spec.template.params.lambda = l;
            }
            if !c.n.is_empty() {
                spec.n_values = c.n.clone();
            }
            spec.trials_per_point = c.trials.unwrap_or(spec.trials_per_point);
            spec.seed = c.seed;
            let reports = bench::sweep_n(&spec)?;
            print_reports(&reports);
            if let Some(dir) = &c.out {
                bench::write_campaign(dir, &reports)?;
            }
        }
        Command::Scenario { which, common: c } => {
            let mut t = bench::scenario_template(which, c.seed)?;
            c.apply(&mut t)?;
            if let Some(l) = Common::single(&c.lambda, "lambda")? {
                t.params.lambda = l;
            }
            let r = t.run(c.seed)?;
            print_trial(&r);
            write_single(&c.out, &r)?;
        }
        Command::Trial(c) => {
            let mut t = TrialTemplate::default();
            c.apply(&mut t)?;
            t.sim.record_trace = true;
            if let Some(n) = Common::single(&c.n, "n")? {
                t.n = n;
                t.models = None;
            }
            if let Some(l) = Common::single(&c.lambda, "lambda")? {
                t.params.lambda = l;
            }
            let r = t.run(c.seed)?;
            print_trial(&r);
            write_single(&c.out, &r)?;
        }
    }
    Ok(())
}
