//! Command-line driver: argument parsing, configuration and the subcommands.

pub mod config;

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use rand::seq::SliceRandom;

use nomctl_core::bounds::{self, BoundEstimates, RetrainConfig};
use nomctl_core::dataset::{self, Dataset, TrainingRecord};
use nomctl_core::neural::{self, ControllerNet};
use nomctl_core::nom::{nom_solve, NomConfig};
use nomctl_core::ocp::{OcpInstance, OcpWeights};
use nomctl_core::oracle::{oracle_solve, OracleConfig};
use nomctl_core::plant::{self, PlantModel, SteadyStateTarget};
use nomctl_core::rng::{derive_seed, seeded_rng};
use nomctl_core::simloop::{self, Trace};
use nomctl_core::Error as CoreError;

pub use config::{ConfigError, ControllerKind, RunConfig};

/// Exit status for a solve that finished without a feasible point.
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_ERROR: i32 = 1;
pub const SEED_ENV: &str = "NOMCTL_SEED";

#[derive(Debug, Parser)]
#[command(name = "nomctl", version, about = "One-step-ahead contractive control pipeline")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Configuration file (`key = value` lines under `[section]` headers).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides `run.seed` and the NOMCTL_SEED variable.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub model: Option<String>,
    /// Any configuration key, as `section.key=value`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Worker thread cap for parallel solves.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Print info-level log messages.
    #[arg(short, long, global = true)]
    pub verbose: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve one instance with the multi-start NOM.
    Solve {
        #[arg(long)]
        x: String,
        #[arg(long)]
        r: Option<String>,
        /// Write the solution as a one-record CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve every grid point and reference and write a dataset.
    Dataset {
        /// e.g. `21x21`
        #[arg(long)]
        grid: Option<String>,
        /// References separated by `;`, entries by `,`.
        #[arg(long)]
        refs: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a controller network on a dataset.
    Train(TrainArgs),
    /// Train networks of increasing size until the validation target is met.
    Grow(TrainArgs),
    /// Run a closed-loop simulation and write the trace.
    Simulate {
        #[arg(long)]
        controller: Option<String>,
        #[arg(long)]
        x0: Option<String>,
        #[arg(long)]
        r: Option<String>,
        #[arg(long)]
        steps: Option<usize>,
        /// Network file for the `nn` controller.
        #[arg(long)]
        net: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Report infeasibility, violations, closed-loop effort and oracle gaps.
    Evaluate {
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Number of records to compare against the grid oracle.
        #[arg(long, default_value_t = 0)]
        oracle_sample: usize,
        /// Closed-loop horizon; 0 skips the run.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Estimate the bound constants and the ultimate-bound radius.
    Bounds {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        net: Option<PathBuf>,
        #[arg(long)]
        theta: Option<f64>,
    },
    /// Retrain, raising θ and regenerating data until the threshold holds.
    RetrainLoop {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        theta: Option<f64>,
        #[arg(long, default_value_t = 3)]
        max_rounds: usize,
        /// Network output path.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Where to write the dataset of the final round.
        #[arg(long)]
        out_dataset: Option<PathBuf>,
    },
    /// Turn traces into long-format CSV panels, one per state and input.
    PlotData {
        /// `tag=path` or `path` (tag taken from the file stem). Repeatable.
        #[arg(long = "trace")]
        traces: Vec<String>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Hidden layer sizes, e.g. `8,32,16`.
    #[arg(long)]
    pub hidden: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = if cli.global.verbose { "info" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_ERROR
        }
    }
}

/// Loads the configuration file, then applies `NOMCTL_SEED` and global flags.
pub fn resolve_config(global: &GlobalArgs, env_seed: Option<&str>) -> Result<RunConfig> {
    let mut cfg = match &global.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            RunConfig::parse(&text).with_context(|| format!("in {}", path.display()))?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = env_seed {
        cfg.seed = s.trim().parse().map_err(|_| anyhow!("{SEED_ENV} must be an unsigned integer, got '{s}'"))?;
    }
    for kv in &global.overrides {
        let (k, v) = kv.split_once('=').ok_or_else(|| anyhow!("--set expects KEY=VALUE, got '{kv}'"))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    if let Some(m) = &global.model {
        cfg.model = m.clone();
    }
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<i32> {
    let env_seed = std::env::var(SEED_ENV).ok();
    let mut cfg = resolve_config(&cli.global, env_seed.as_deref())?;
    if let Some(jobs) = cli.global.jobs {
        if jobs == 0 {
            bail!("--jobs must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global()?;
    }
    match cli.command {
        Command::Solve { x, r, out } => {
            if let Some(r) = r {
                cfg.set("sim.r", &r)?;
            }
            cmd_solve(&cfg, &x, out.as_deref())
        }
        Command::Dataset { grid, refs, out } => {
            set_opt(&mut cfg, "data.grid", grid)?;
            set_opt(&mut cfg, "data.refs", refs)?;
            set_path(&mut cfg.paths.dataset, out);
            cmd_dataset(&cfg)
        }
        Command::Train(a) => {
            apply_train_args(&mut cfg, a)?;
            cmd_train(&cfg, false)
        }
        Command::Grow(a) => {
            apply_train_args(&mut cfg, a)?;
            cmd_train(&cfg, true)
        }
        Command::Simulate {
            controller,
            x0,
            r,
            steps,
            net,
            out,
        } => {
            set_opt(&mut cfg, "sim.controller", controller)?;
            set_opt(&mut cfg, "sim.x0", x0)?;
            set_opt(&mut cfg, "sim.r", r)?;
            set_opt(&mut cfg, "sim.steps", steps.map(|s| s.to_string()))?;
            set_path(&mut cfg.paths.net, net);
            set_path(&mut cfg.paths.trace, out);
            cmd_simulate(&cfg)
        }
        Command::Evaluate {
            dataset,
            oracle_sample,
            steps,
        } => {
            set_path(&mut cfg.paths.dataset, dataset);
            set_opt(&mut cfg, "sim.steps", steps.map(|s| s.to_string()))?;
            cmd_evaluate(&cfg, oracle_sample)
        }
        Command::Bounds { dataset, net, theta } => {
            set_path(&mut cfg.paths.dataset, dataset);
            set_path(&mut cfg.paths.net, net);
            cmd_bounds(&cfg, theta)
        }
        Command::RetrainLoop {
            dataset,
            theta,
            max_rounds,
            out,
            out_dataset,
        } => {
            set_path(&mut cfg.paths.dataset, dataset);
            set_path(&mut cfg.paths.net, out);
            cmd_retrain(&cfg, theta, max_rounds, out_dataset.as_deref())
        }
        Command::PlotData { traces, out_dir } => {
            set_path(&mut cfg.paths.out_dir, out_dir);
            cmd_plot_data(&traces, &cfg.paths.out_dir)
        }
    }
}

fn set_opt(cfg: &mut RunConfig, key: &str, value: Option<String>) -> Result<()> {
    if let Some(v) = value {
        cfg.set(key, &v)?;
    }
    Ok(())
}

fn set_path(slot: &mut PathBuf, value: Option<PathBuf>) {
    if let Some(p) = value {
        *slot = p;
    }
}

fn apply_train_args(cfg: &mut RunConfig, a: TrainArgs) -> Result<()> {
    set_path(&mut cfg.paths.dataset, a.dataset);
    set_path(&mut cfg.paths.net, a.out);
    set_opt(cfg, "train.hidden", a.hidden)?;
    set_opt(cfg, "train.epochs", a.epochs.map(|e| e.to_string()))
}

fn parse_vector(s: &str, len: usize, what: &str) -> Result<DVector<f64>> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| anyhow!("{what}: '{s}' is not a comma-separated list of numbers"))?;
    if v.len() != len {
        bail!("{what}: expected {len} entries, got {}", v.len());
    }
    Ok(DVector::from_vec(v))
}

fn vector_of(v: &[f64], len: usize, what: &str) -> Result<DVector<f64>> {
    if v.len() != len {
        bail!("{what}: expected {len} entries, got {}", v.len());
    }
    Ok(DVector::from_column_slice(v))
}

fn model_and_weights(cfg: &RunConfig) -> Result<(PlantModel, OcpWeights)> {
    let model = plant::by_name(&cfg.model)?;
    let weights = cfg
        .weights(model.n(), model.q())
        .ok_or_else(|| anyhow!("ocp weights do not match the model dimensions"))?;
    weights.validate()?;
    Ok((model, weights))
}

fn target_for(model: &PlantModel, r: &DVector<f64>) -> Result<SteadyStateTarget> {
    let guess = (DVector::zeros(model.n()), DVector::zeros(model.q()));
    Ok(plant::solve_steady_state(model, r, (&guess.0, &guess.1))?)
}

fn nom_config(cfg: &RunConfig) -> NomConfig {
    NomConfig {
        seed: cfg.seed,
        ..cfg.nom.clone()
    }
}

fn train_config(cfg: &RunConfig) -> neural::TrainConfig {
    neural::TrainConfig {
        seed: cfg.seed,
        ..cfg.train.clone()
    }
}

fn oracle_config(cfg: &RunConfig, q: usize, n: usize) -> OracleConfig {
    OracleConfig {
        coarse_grid: vec![cfg.oracle.grid],
        refine_rounds: cfg.oracle.rounds,
        shrink: cfg.oracle.shrink,
        boxes: cfg.nom.search.intervals(q, n),
    }
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.6e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn cmd_solve(cfg: &RunConfig, x: &str, out: Option<&Path>) -> Result<i32> {
    let (model, weights) = model_and_weights(cfg)?;
    let x = parse_vector(x, model.n(), "--x")?;
    let r = vector_of(&cfg.sim.r, model.m(), "reference")?;
    let target = target_for(&model, &r)?;
    let inst = OcpInstance::at(&model, &x, &target, &weights)?;
    let sol = nom_solve(&inst, &nom_config(cfg))?;
    println!("u* = {}", fmt_vec(sol.u_star.as_slice()));
    println!("P* params = {}", fmt_vec(sol.p_star.params()));
    println!("loss = {:.6e}", sol.loss);
    println!("objective = {:.6e}", sol.objective);
    println!("residual = {:.6e}", sol.residual);
    println!("lambda_min(P) = {:.6e}", sol.lambda_min);
    println!("start = {}, epochs = {}", sol.start_index, sol.epochs_used);
    println!("feasible = {}", sol.feasible);
    if let Some(path) = out {
        let rec = TrainingRecord::from_solution(&x, &r, &sol);
        let text = format!(
            "{}\n{}\n",
            dataset::column_names(model.n(), model.m(), model.q()).join(","),
            dataset::record_row(&rec)
        );
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(if sol.feasible { 0 } else { EXIT_INFEASIBLE })
}

fn cmd_dataset(cfg: &RunConfig) -> Result<i32> {
    let (model, weights) = model_and_weights(cfg)?;
    let refs: Vec<DVector<f64>> = cfg
        .data
        .refs
        .iter()
        .map(|r| vector_of(r, model.m(), "reference"))
        .collect::<Result<_>>()?;
    let ds = dataset::generate(&model, &refs, &cfg.data.grid, &weights, &nom_config(cfg), cfg.seed)?;
    dataset::save(&ds, &cfg.paths.dataset)?;
    println!(
        "{} records, {:.2}% feasible -> {}",
        ds.len(),
        100.0 * ds.feasible_fraction(),
        cfg.paths.dataset.display()
    );
    Ok(0)
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    dataset::load(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn load_net(path: &Path) -> Result<ControllerNet> {
    neural::load_net(path).with_context(|| format!("loading network {}", path.display()))
}

fn cmd_train(cfg: &RunConfig, grow: bool) -> Result<i32> {
    let ds = load_dataset(&cfg.paths.dataset)?;
    let (tr, va) = dataset::split(&ds, cfg.data.train_fraction, cfg.seed)?;
    let tc = train_config(cfg);
    let (net, report) = if grow { neural::grow(&tr, &va, &tc)? } else { neural::train(&tr, &va, &tc)? };
    neural::save_net(&net, &cfg.paths.net)?;
    println!("hidden = {:?}", report.hidden);
    println!("train mse = {:.6e}", report.final_train_mse());
    println!("validation mse = {:.6e}", report.final_val_mse());
    if report.target_missed {
        println!("validation target {:e} not reached", tc.target_mse);
    }
    println!("-> {}", cfg.paths.net.display());
    Ok(0)
}

fn run_controller(cfg: &RunConfig, kind: ControllerKind, steps: usize) -> Result<Trace> {
    let (model, weights) = model_and_weights(cfg)?;
    let x0 = vector_of(&cfg.sim.x0, model.n(), "x0")?;
    let r = vector_of(&cfg.sim.r, model.m(), "reference")?;
    let target = target_for(&model, &r)?;
    let trace = match kind {
        ControllerKind::Nom => simloop::run_nom_controller(&model, &target, &weights, &nom_config(cfg), &x0, steps)?,
        ControllerKind::Nn => {
            let net = load_net(&cfg.paths.net)?;
            simloop::run_nn_controller(&model, &target, &net, &weights, &x0, steps)?
        }
        ControllerKind::Ilqr => simloop::run_ilqr_controller(&model, &target, &weights.qx, &weights.qu, &x0, steps)?,
    };
    Ok(trace)
}

fn metrics_text(trace: &Trace, target: &SteadyStateTarget) -> String {
    let m = simloop::compute_metrics(trace, target);
    let mut s = String::new();
    let _ = writeln!(s, "steps = {}", trace.steps());
    let _ = writeln!(s, "control effort = {:.6e}", m.control_effort);
    let _ = writeln!(s, "terminal error = {:.6e}", m.terminal_error);
    let _ = writeln!(s, "max error over second half = {:.6e}", m.max_error_after_settle);
    let _ = writeln!(s, "residual violations = {}", m.violation_count);
    if !trace.non_pd_steps.is_empty() {
        let _ = writeln!(s, "steps with non-PD P = {}", trace.non_pd_steps.len());
    }
    if trace.truncated {
        let _ = writeln!(s, "run truncated: state became non-finite");
    }
    if let Some(e) = &trace.error {
        let _ = writeln!(s, "run aborted: {e}");
    }
    s
}

fn cmd_simulate(cfg: &RunConfig) -> Result<i32> {
    let trace = run_controller(cfg, cfg.sim.controller, cfg.sim.steps)?;
    simloop::save_trace(&trace, &cfg.paths.trace)?;
    let model = plant::by_name(&cfg.model)?;
    let target = target_for(&model, &vector_of(&cfg.sim.r, model.m(), "reference")?)?;
    print!("{}", metrics_text(&trace, &target));
    println!("-> {}", cfg.paths.trace.display());
    Ok(if trace.error.is_some() { EXIT_ERROR } else { 0 })
}

/// Steady-state targets for every reference of a dataset, keyed by position.
fn dataset_targets(ds: &Dataset, model: &PlantModel) -> Result<Vec<SteadyStateTarget>> {
    ds.meta.refs.iter().map(|r| target_for(model, r)).collect()
}

fn target_of_record<'a>(
    ds: &Dataset,
    targets: &'a [SteadyStateTarget],
    rec: &TrainingRecord,
) -> Option<&'a SteadyStateTarget> {
    ds.meta.refs.iter().position(|r| r == &rec.r).map(|i| &targets[i])
}

fn cmd_evaluate(cfg: &RunConfig, oracle_sample: usize) -> Result<i32> {
    let ds = load_dataset(&cfg.paths.dataset)?;
    let model = plant::by_name(&ds.meta.model)?;
    let c = ds.meta.weights.penalty_c;
    let total = ds.len().max(1) as f64;
    let terms = dataset::reevaluate(&ds, &model);
    let infeasible = ds.records.iter().filter(|r| !r.feasible).count();
    let violated = ds
        .records
        .iter()
        .zip(&terms)
        .filter(|(rec, t)| rec.feasible && !t.as_ref().is_some_and(|t| t.is_feasible(c)))
        .count();
    println!("records = {}", ds.len());
    println!("infeasibility = {:.2}%", 100.0 * infeasible as f64 / total);
    println!("violation = {:.2}%", 100.0 * violated as f64 / total);

    if cfg.sim.steps > 0 {
        let mut run_cfg = cfg.clone();
        run_cfg.model = ds.meta.model.clone();
        run_cfg.ocp.qx = config::WeightSpec::Dense(ds.meta.weights.qx.transpose().iter().copied().collect());
        run_cfg.ocp.qu = config::WeightSpec::Dense(ds.meta.weights.qu.transpose().iter().copied().collect());
        run_cfg.ocp.theta = ds.meta.weights.theta;
        run_cfg.ocp.c = c;
        let trace = run_controller(&run_cfg, ControllerKind::Nom, cfg.sim.steps)?;
        let target = target_for(&model, &vector_of(&cfg.sim.r, model.m(), "reference")?)?;
        let m = simloop::compute_metrics(&trace, &target);
        println!("closed-loop control effort = {:.6e}", m.control_effort);
        println!("closed-loop terminal error = {:.6e}", m.terminal_error);
        println!("closed-loop residual violations = {}", m.violation_count);
    }

    if oracle_sample > 0 {
        let targets = dataset_targets(&ds, &model)?;
        let mut order: Vec<usize> = (0..ds.len()).collect();
        order.shuffle(&mut seeded_rng(derive_seed(cfg.seed, &[3])));
        order.truncate(oracle_sample);
        let ocfg = oracle_config(cfg, model.q(), model.n());
        let mut gaps = Vec::new();
        let mut within = 0usize;
        for &i in &order {
            let rec = &ds.records[i];
            let target = target_of_record(&ds, &targets, rec)
                .ok_or_else(|| anyhow!("record {i} has a reference missing from the header"))?;
            let inst = OcpInstance::at(&model, &rec.x, target, &ds.meta.weights)?;
            let oracle = oracle_solve(&inst, &ocfg)?;
            let nom_loss = terms[i].as_ref().map_or(f64::INFINITY, |t| t.loss());
            if nom_loss <= 1.05 * oracle.loss + 1e-6 {
                within += 1;
            }
            gaps.push((nom_loss - oracle.loss) / oracle.loss.abs().max(1e-12));
        }
        let max = gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
        println!("oracle sample = {}", gaps.len());
        println!("max relative loss gap = {max:.6e}");
        println!("mean relative loss gap = {mean:.6e}");
        println!("within 5% of oracle = {within}/{}", gaps.len());
    }
    Ok(0)
}

fn estimates_table(est: &BoundEstimates) -> String {
    let mut s = String::new();
    let rows = [
        ("lambda_bar_P", est.lambda_bar_p),
        ("lambda_underbar_P", est.lambda_underbar_p),
        ("delta", est.delta),
        ("delta_u_bar", est.delta_u_bar),
        ("delta_P_bar", est.delta_p_bar),
        ("mu_g", est.mu_g),
        ("|g(x_bar)|", est.g_at_target_norm),
        ("theta", est.theta),
        ("theta threshold", est.theta_threshold),
    ];
    for (k, v) in rows {
        let _ = writeln!(s, "{k:<18} {v:.6e}");
    }
    match est.sigma {
        Some(sigma) => {
            let _ = writeln!(s, "{:<18} {sigma:.6e}", "sigma");
        }
        None => {
            let _ = writeln!(s, "{:<18} undefined (theta <= threshold)", "sigma");
        }
    }
    s
}

fn first_target(ds: &Dataset, model: &PlantModel) -> Result<SteadyStateTarget> {
    let r = ds.meta.refs.first().ok_or_else(|| anyhow!("dataset has no references"))?;
    target_for(model, r)
}

fn cmd_bounds(cfg: &RunConfig, theta: Option<f64>) -> Result<i32> {
    let ds = load_dataset(&cfg.paths.dataset)?;
    let net = load_net(&cfg.paths.net)?;
    let model = plant::by_name(&ds.meta.model)?;
    let target = first_target(&ds, &model)?;
    let (_, va) = dataset::split(&ds, cfg.data.train_fraction, cfg.seed)?;
    let mut est = bounds::estimate_constants(&ds, &va, Some(&net), &model, &target)?;
    if let Some(t) = theta {
        est = est.with_theta(t);
    }
    print!("{}", estimates_table(&est));
    Ok(0)
}

fn cmd_retrain(cfg: &RunConfig, theta: Option<f64>, max_rounds: usize, out_dataset: Option<&Path>) -> Result<i32> {
    let ds = load_dataset(&cfg.paths.dataset)?;
    let model = plant::by_name(&ds.meta.model)?;
    let target = first_target(&ds, &model)?;
    let rc = RetrainConfig {
        max_rounds,
        nom: nom_config(cfg),
        train: train_config(cfg),
        train_fraction: cfg.data.train_fraction,
        split_seed: cfg.seed,
    };
    let theta = theta.unwrap_or(ds.meta.weights.theta);
    let (outcome, ok) = match bounds::retrain_loop(&ds, &model, &target, theta, &rc) {
        Ok(o) => (o, true),
        Err(CoreError::ThresholdNotMet { best, .. }) => (*best, false),
        Err(e) => return Err(e.into()),
    };
    neural::save_net(&outcome.net, &cfg.paths.net)?;
    if let Some(p) = out_dataset {
        dataset::save(&outcome.dataset, p)?;
    }
    let thetas: Vec<String> = outcome.thetas.iter().map(|t| format!("{t:.6e}")).collect();
    println!("rounds = {}", outcome.rounds_used);
    println!("theta per round = {}", thetas.join(", "));
    print!("{}", estimates_table(&outcome.estimates));
    println!("-> {}", cfg.paths.net.display());
    if !ok {
        bail!(
            "threshold not met after {max_rounds} round(s); the best round was saved (theta {:.6e} <= {:.6e})",
            outcome.estimates.theta,
            outcome.estimates.theta_threshold
        );
    }
    Ok(0)
}

fn cmd_plot_data(specs: &[String], out_dir: &Path) -> Result<i32> {
    if specs.is_empty() {
        bail!("plot-data needs at least one --trace");
    }
    let mut traces = Vec::new();
    let mut seen = HashSet::new();
    for spec in specs {
        let (tag, path) = match spec.split_once('=') {
            Some((t, p)) => (t.to_string(), PathBuf::from(p)),
            None => {
                let p = PathBuf::from(spec);
                let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                (stem, p)
            }
        };
        if !seen.insert(tag.clone()) {
            bail!("duplicate trace tag '{tag}'");
        }
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        traces.push((tag, simloop::read_trace_csv(&text)?));
    }
    std::fs::create_dir_all(out_dir)?;
    for (name, csv) in simloop::plot_panels(&traces)? {
        let path = out_dir.join(format!("panel_{name}.csv"));
        std::fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?;
        println!("-> {}", path.display());
    }
    Ok(0)
}
