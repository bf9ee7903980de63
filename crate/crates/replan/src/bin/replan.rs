//! Command-line front end: data generation, model training, one-shot
//! planning (with LP export / external solver hand-off), online replanning,
//! suite runs, and bound preprocessing.
//!
//! Every subcommand also accepts `--config <file.toml>`; explicit flags
//! override values from the file.

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use replan::compile::{
    compile_base, compile_strengthened, extract_plan, preprocess_bounds, Bounds, PreprocessBudget,
    Provenance,
};
use replan::domains::{DomainInstance, ExplorationPolicy};
use replan::gradplan::{plan_gradient, GradPlanConfig, LossKind};
use replan::harness::{
    run_online, run_suite, suite_csv, ExperimentSpec, MilpOptions, PlannerKind,
};
use replan::milp::{solve, solve_external, write_lp, SolveOptions};
use replan::nn::dataset::{Dataset, DatasetMeta};
use replan::nn::network::Network;
use replan::nn::train::{train, TrainConfig};
use replan::planning::PlanResult;

#[derive(Parser)]
#[command(name = "replan", version, about = "Learn ReLU transition models and plan with them")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample transition data from a domain simulator.
    GenData(GenDataArgs),
    /// Train a dense-skip ReLU transition model from a dataset CSV.
    Train(TrainArgs),
    /// One-shot plan over the full horizon (MILP or gradient).
    Plan(PlanArgs),
    /// Online replanning: plan, execute first action, observe, repeat.
    RunOnline(RunArgs),
    /// Run a suite of experiments from a config file; emit a CSV table.
    RunSuite(SuiteArgs),
    /// Bound preprocessing only: report tightened variable bounds.
    Bounds(BoundsArgs),
}

#[derive(Args, Serialize, Deserialize, Default)]
struct GenDataArgs {
    /// TOML file supplying defaults for any unset flag.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Built-in instance name or path to an instance TOML file.
    #[arg(long)]
    instance: Option<String>,
    #[arg(long, value_enum)]
    policy: Option<PolicyArg>,
    /// Number of transition samples.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum PolicyArg {
    UniformRandom,
    EpsilonBaseline,
}

#[derive(Args, Serialize, Deserialize, Default)]
struct TrainArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Instance that produced the data (fixes state/action dimensions).
    #[arg(long)]
    instance: Option<String>,
    /// Input dataset CSV.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Hidden layer widths, e.g. "32,32".
    #[arg(long)]
    hidden: Option<String>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long)]
    rate_decay: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output network file (JSON).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Default)]
struct PlanArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    instance: Option<String>,
    /// Trained network file (required for every planner except baseline).
    #[arg(long)]
    network: Option<PathBuf>,
    #[arg(long, value_enum)]
    planner: Option<PlannerArg>,
    /// Relative MILP gap target.
    #[arg(long)]
    gap: Option<f64>,
    /// MILP time limit in seconds.
    #[arg(long)]
    time_limit: Option<f64>,
    /// Bound preprocessing before compilation: on|off.
    #[arg(long)]
    preprocess: Option<String>,
    /// Write the compiled MILP in LP format and exit unless a solver runs.
    #[arg(long)]
    export_lp: Option<PathBuf>,
    /// Shell out to `<cmd> <model.lp> <solution>` instead of the built-in
    /// branch-and-bound.
    #[arg(long)]
    external_solver: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long)]
    rate_decay: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    loss: Option<LossArg>,
    /// Per-epoch gradient trace CSV (`epoch,best_v,mean_v`).
    #[arg(long)]
    trace_csv: Option<PathBuf>,
    /// Write the plan as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum PlannerArg {
    MilpBase,
    MilpStrengthened,
    MilpStrengthenedGap20,
    Grad,
    Baseline,
}

impl From<PlannerArg> for PlannerKind {
    fn from(p: PlannerArg) -> PlannerKind {
        match p {
            PlannerArg::MilpBase => PlannerKind::MilpBase,
            PlannerArg::MilpStrengthened => PlannerKind::MilpStrengthened,
            PlannerArg::MilpStrengthenedGap20 => PlannerKind::MilpStrengthenedGap20,
            PlannerArg::Grad => PlannerKind::Grad,
            PlannerArg::Baseline => PlannerKind::Baseline,
        }
    }
}

#[derive(Clone, Copy, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum LossArg {
    Squared,
    Negated,
}

#[derive(Args, Serialize, Deserialize, Default)]
struct RunArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    instance: Option<String>,
    #[arg(long)]
    network: Option<PathBuf>,
    #[arg(long, value_enum)]
    planner: Option<PlannerArg>,
    #[arg(long)]
    gap: Option<f64>,
    #[arg(long)]
    time_limit: Option<f64>,
    #[arg(long)]
    preprocess: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long)]
    rate_decay: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Warm-start gradient replans from the previous plan shifted by one.
    #[arg(long)]
    warm_start: Option<bool>,
    /// Write the RunRecord as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SuiteArgs {
    /// Suite description TOML (list of runs).
    #[arg(long)]
    config: PathBuf,
    /// Output CSV path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Default)]
struct BoundsArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    instance: Option<String>,
    #[arg(long)]
    network: Option<PathBuf>,
    /// Horizon override (defaults to the instance horizon).
    #[arg(long)]
    horizon: Option<usize>,
    /// Per-variable preprocessing time budget in seconds.
    #[arg(long)]
    time_budget: Option<f64>,
    #[arg(long)]
    node_budget: Option<usize>,
}

/// One entry of a suite config file.
#[derive(Serialize, Deserialize)]
struct SuiteEntry {
    instance: String,
    planner: PlannerArg,
    network: Option<PathBuf>,
    seed: Option<u64>,
    gap: Option<f64>,
    time_limit: Option<f64>,
    preprocess: Option<bool>,
    epochs: Option<usize>,
    batch: Option<usize>,
    rate: Option<f64>,
    rate_decay: Option<f64>,
    warm_start: Option<bool>,
}

#[derive(Serialize, Deserialize)]
struct SuiteConfig {
    run: Vec<SuiteEntry>,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::GenData(args) => gen_data(args),
        Command::Train(args) => train_cmd(args),
        Command::Plan(args) => plan_cmd(args),
        Command::RunOnline(args) => run_online_cmd(args),
        Command::RunSuite(args) => run_suite_cmd(args),
        Command::Bounds(args) => bounds_cmd(args),
    }
}

/// Overlay: any field the CLI left as null is taken from the file.
fn overlay<T: Serialize + DeserializeOwned>(cli: &T, path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let file: serde_json::Value = serde_json::to_value(
        toml::from_str::<toml::Value>(&text).with_context(|| "parsing config TOML")?,
    )?;
    let mut merged = serde_json::to_value(cli)?;
    if let (Some(m), Some(f)) = (merged.as_object_mut(), file.as_object()) {
        for (k, v) in f {
            let slot = m.entry(k.clone()).or_insert(serde_json::Value::Null);
            if slot.is_null() {
                *slot = v.clone();
            }
        }
    }
    Ok(serde_json::from_value(merged)?)
}

fn with_config<T: Serialize + DeserializeOwned>(args: T, config: &Option<PathBuf>) -> Result<T> {
    match config {
        Some(path) => overlay(&args, path),
        None => Ok(args),
    }
}

fn load_instance(spec: &str) -> Result<DomainInstance> {
    if let Some(inst) = DomainInstance::builtin(spec) {
        return Ok(inst);
    }
    let path = Path::new(spec);
    if path.exists() {
        let text = std::fs::read_to_string(path)?;
        return Ok(DomainInstance::from_toml(&text)?);
    }
    bail!(
        "unknown instance '{spec}'; built-ins: {}",
        DomainInstance::builtin_names().join(", ")
    )
}

fn require<T>(opt: Option<T>, flag: &str) -> Result<T> {
    opt.ok_or_else(|| anyhow!("missing --{flag} (flag or config file)"))
}

fn parse_on_off(v: &Option<String>, default: bool) -> Result<bool> {
    match v.as_deref() {
        None => Ok(default),
        Some("on") => Ok(true),
        Some("off") => Ok(false),
        Some(other) => bail!("expected on|off, got '{other}'"),
    }
}

fn gen_data(args: GenDataArgs) -> Result<()> {
    let config = args.config.clone();
    let args = with_config(args, &config)?;
    let inst = load_instance(&require(args.instance, "instance")?)?;
    let policy = match args.policy.unwrap_or(PolicyArg::UniformRandom) {
        PolicyArg::UniformRandom => ExplorationPolicy::UniformRandom,
        PolicyArg::EpsilonBaseline => ExplorationPolicy::EpsilonBaseline,
    };
    let n = require(args.n, "n")?;
    let out = require(args.out, "out")?;
    let ds = inst.generate_data(policy, n, args.seed.unwrap_or(0))?;
    ds.save_csv(&out)?;
    println!("wrote {} rows to {}", ds.len(), out.display());
    Ok(())
}

fn train_cmd(args: TrainArgs) -> Result<()> {
    let config = args.config.clone();
    let args = with_config(args, &config)?;
    let inst = load_instance(&require(args.instance, "instance")?)?;
    let problem = inst.planning_problem();
    let data = require(args.data, "data")?;
    let out = require(args.out, "out")?;
    let ds = Dataset::load_csv(
        &data,
        problem.state_dim(),
        problem.action_dim(),
        DatasetMeta { domain: inst.name().into(), policy: "file".into(), seed: 0 },
    )?;
    let defaults = TrainConfig::default();
    let hidden = match &args.hidden {
        Some(s) => s
            .split(',')
            .map(|w| w.trim().parse::<usize>().map_err(|e| anyhow!("bad width '{w}': {e}")))
            .collect::<Result<Vec<_>>>()?,
        None => defaults.hidden_widths.clone(),
    };
    let config = TrainConfig {
        hidden_widths: hidden,
        lambda: args.lambda.unwrap_or(defaults.lambda),
        dropout_p: args.dropout.unwrap_or(defaults.dropout_p),
        epochs: args.epochs.unwrap_or(defaults.epochs),
        rate: args.rate.unwrap_or(defaults.rate),
        rate_decay: args.rate_decay.unwrap_or(defaults.rate_decay),
        batch_size: args.batch_size.unwrap_or(defaults.batch_size),
        seed: args.seed.unwrap_or(defaults.seed),
    };
    let outcome = train(&ds, &config)?;
    let network =
        if outcome.network.is_folded() { outcome.network } else { outcome.network.fold_standardization()? };
    network.save(&out)?;
    println!(
        "trained {} -> {} (test mse {:.6e}, best val {:.6e})",
        data.display(),
        out.display(),
        outcome.test_mse,
        outcome.best_val_loss
    );
    Ok(())
}

fn grad_config_from(
    epochs: Option<usize>,
    batch: Option<usize>,
    rate: Option<f64>,
    rate_decay: Option<f64>,
    seed: Option<u64>,
    loss: Option<LossArg>,
) -> GradPlanConfig {
    let d = GradPlanConfig::default();
    GradPlanConfig {
        batch: batch.unwrap_or(d.batch),
        rate: rate.unwrap_or(d.rate),
        rate_decay: rate_decay.unwrap_or(d.rate_decay),
        epochs: epochs.unwrap_or(d.epochs),
        seed: seed.unwrap_or(d.seed),
        loss: loss.map(|l| match l {
            LossArg::Squared => LossKind::Squared,
            LossArg::Negated => LossKind::Negated,
        }),
        warm_start: None,
    }
}

fn plan_cmd(args: PlanArgs) -> Result<()> {
    let config = args.config.clone();
    let args = with_config(args, &config)?;
    let inst = load_instance(&require(args.instance, "instance")?)?;
    let problem = inst.planning_problem();
    let planner = args.planner.unwrap_or(PlannerArg::MilpStrengthened);
    let horizon = problem.horizon;

    let result: PlanResult = match planner {
        PlannerArg::Baseline => {
            let mut state = problem.init.clone();
            let mut actions = Vec::new();
            let mut states = vec![state.clone()];
            let mut total = 0.0;
            for _ in 0..horizon {
                let a = inst.baseline(&state);
                state = inst.step(&state, &a)?;
                total += problem.evaluate_reward(&state, &a)?;
                actions.push(a);
                states.push(state.clone());
            }
            PlanResult {
                actions,
                states,
                objective: total,
                diagnostics: Default::default(),
            }
        }
        PlannerArg::Grad => {
            let net = Network::load(&require(args.network, "network")?)?;
            let config = grad_config_from(
                args.epochs, args.batch, args.rate, args.rate_decay, args.seed, args.loss,
            );
            let outcome = plan_gradient(&problem, &net, horizon, &config)?;
            if let Some(path) = &args.trace_csv {
                let mut csv = String::from("epoch,best_v,mean_v\n");
                for (e, (b, m)) in outcome.trace.iter().zip(&outcome.trace_mean).enumerate() {
                    csv.push_str(&format!("{e},{b:.17e},{m:.17e}\n"));
                }
                std::fs::write(path, csv)?;
            }
            outcome.plan
        }
        PlannerArg::MilpBase | PlannerArg::MilpStrengthened | PlannerArg::MilpStrengthenedGap20 => {
            let net = Network::load(&require(args.network, "network")?)?;
            let preprocess = parse_on_off(&args.preprocess, true)?;
            let bounds = if preprocess {
                preprocess_bounds(&problem, &net, horizon, &PreprocessBudget::default())?
            } else {
                Bounds::declared(&problem, horizon)
            };
            let (model, vars) = if matches!(planner, PlannerArg::MilpBase) {
                compile_base(&problem, &net, horizon, &bounds)?
            } else {
                compile_strengthened(&problem, &net, horizon, &bounds)?
            };
            if let Some(path) = &args.export_lp {
                let mut file = std::fs::File::create(path)?;
                write_lp(&model, &mut file)?;
                println!("wrote LP to {}", path.display());
            }
            let gap = args.gap.unwrap_or(if matches!(planner, PlannerArg::MilpStrengthenedGap20) {
                0.2
            } else {
                1e-6
            });
            let solve_result = match &args.external_solver {
                Some(cmd) => {
                    let dir = std::env::temp_dir().join(format!("replan-ext-{}", std::process::id()));
                    std::fs::create_dir_all(&dir)?;
                    let (objective, solution) = solve_external(&model, cmd, &dir)?;
                    replan::milp::SolveResult {
                        status: replan::milp::SolveStatus::Optimal,
                        solution: Some(solution),
                        objective: Some(objective),
                        bound: objective,
                        gap: Some(0.0),
                        nodes: 0,
                        wall_time: Duration::ZERO,
                    }
                }
                None => {
                    let options = SolveOptions {
                        time_limit: Some(Duration::from_secs_f64(args.time_limit.unwrap_or(60.0))),
                        node_limit: None,
                        rel_gap_target: gap,
                    };
                    solve(&model, &options)?
                }
            };
            extract_plan(&solve_result, &vars)?
        }
    };

    let json = serde_json::to_string_pretty(&result)?;
    match &args.out {
        Some(path) => {
            std::fs::write(path, &json)?;
            println!("objective {:.9}; plan written to {}", result.objective, path.display());
        }
        None => println!("{json}"),
    }
    Ok(())
}

fn build_spec(
    instance: &str,
    planner: PlannerArg,
    network: &Option<PathBuf>,
    seed: Option<u64>,
    gap: Option<f64>,
    time_limit: Option<f64>,
    preprocess: bool,
    grad: GradPlanConfig,
    warm_start: bool,
) -> Result<ExperimentSpec> {
    let inst = load_instance(instance)?;
    let kind: PlannerKind = planner.into();
    let mut spec = ExperimentSpec::new(inst, kind);
    if let Some(path) = network {
        spec = spec.with_network(Network::load(path)?);
    }
    spec.seed = seed.unwrap_or(0);
    spec.grad = grad;
    spec.warm_start = warm_start;
    spec.milp = MilpOptions {
        gap: gap.unwrap_or(spec.milp.gap),
        time_limit_secs: time_limit.unwrap_or(60.0),
        preprocess,
    };
    Ok(spec)
}

fn run_online_cmd(args: RunArgs) -> Result<()> {
    let config = args.config.clone();
    let args = with_config(args, &config)?;
    let planner = require(args.planner, "planner")?;
    let grad = grad_config_from(args.epochs, args.batch, args.rate, args.rate_decay, args.seed, None);
    let spec = build_spec(
        &require(args.instance.clone(), "instance")?,
        planner,
        &args.network,
        args.seed,
        args.gap,
        args.time_limit,
        parse_on_off(&args.preprocess, true)?,
        grad,
        args.warm_start.unwrap_or(false),
    )?;
    let record = run_online(&spec)?;
    record.verify(&spec.instance)?;
    let json = serde_json::to_string_pretty(&record)?;
    match &args.out {
        Some(path) => {
            std::fs::write(path, &json)?;
            println!(
                "{} / {}: return {:.6} over {} steps -> {}",
                record.instance,
                record.planner,
                record.total_return,
                record.steps.len(),
                path.display()
            );
        }
        None => println!("{json}"),
    }
    Ok(())
}

fn run_suite_cmd(args: SuiteArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.config)
        .with_context(|| format!("reading suite config {}", args.config.display()))?;
    let config: SuiteConfig = toml::from_str(&text).context("parsing suite config")?;
    let specs: Vec<ExperimentSpec> = config
        .run
        .iter()
        .map(|e| {
            let grad = grad_config_from(e.epochs, e.batch, e.rate, e.rate_decay, e.seed, None);
            build_spec(
                &e.instance,
                e.planner,
                &e.network,
                e.seed,
                e.gap,
                e.time_limit,
                e.preprocess.unwrap_or(true),
                grad,
                e.warm_start.unwrap_or(false),
            )
        })
        .collect::<Result<_>>()?;
    let records = run_suite(&specs)?;
    let csv = suite_csv(&records);
    match &args.out {
        Some(path) => {
            std::fs::write(path, &csv)?;
            println!("wrote {} rows to {}", records.len(), path.display());
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn bounds_cmd(args: BoundsArgs) -> Result<()> {
    let config = args.config.clone();
    let args = with_config(args, &config)?;
    let inst = load_instance(&require(args.instance, "instance")?)?;
    let problem = inst.planning_problem();
    let net = Network::load(&require(args.network, "network")?)?;
    let horizon = args.horizon.unwrap_or(problem.horizon);
    let mut budget = PreprocessBudget::default();
    if let Some(t) = args.time_budget {
        budget.time_limit = Duration::from_secs_f64(t);
    }
    if let Some(n) = args.node_budget {
        budget.node_limit = n;
    }
    let bounds = preprocess_bounds(&problem, &net, horizon, &budget)?;
    let tag = |p: Provenance| match p {
        Provenance::Declared => "declared",
        Provenance::Preprocessed => "preprocessed",
    };
    println!("var,t,lower,upper,provenance");
    for (i, decl) in problem.action_vars().enumerate() {
        for t in 1..=horizon {
            let iv = bounds.action_at(t, i);
            println!("{},{t},{:.9},{:.9},{}", decl.name, iv.lower, iv.upper, tag(iv.provenance));
        }
    }
    for (i, decl) in problem.state_vars().enumerate() {
        for t in 1..=horizon + 1 {
            let iv = bounds.state_at(t, i);
            println!("{},{t},{:.9},{:.9},{}", decl.name, iv.lower, iv.upper, tag(iv.provenance));
        }
    }
    Ok(())
}
