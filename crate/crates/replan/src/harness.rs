//! Online replanning loop and experiment orchestration: at each step the
//! planner optimizes over the remaining horizon from the observed true
//! state, the first action is executed in the exact simulator, and the loop
//! repeats. Suites of runs are emitted as a frozen-schema CSV table.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::compile::{compile_base, compile_strengthened, extract_plan, preprocess_bounds, Bounds, PreprocessBudget};
use crate::domains::DomainInstance;
use crate::error::DomainError;
use crate::gradplan::{plan_gradient, GradPlanConfig};
use crate::milp::{solve, SolveOptions};
use crate::nn::network::Network;
use crate::planning::PlanningProblem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlannerKind {
    MilpBase,
    MilpStrengthened,
    MilpStrengthenedGap20,
    Grad,
    Baseline,
}

impl PlannerKind {
    pub fn label(&self) -> &'static str {
        match self {
            PlannerKind::MilpBase => "milp-base",
            PlannerKind::MilpStrengthened => "milp-strengthened",
            PlannerKind::MilpStrengthenedGap20 => "milp-strengthened-gap20",
            PlannerKind::Grad => "grad",
            PlannerKind::Baseline => "baseline",
        }
    }

    pub fn needs_network(&self) -> bool {
        !matches!(self, PlannerKind::Baseline)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MilpOptions {
    /// Relative-gap target per planning call (0.2 for the gap20 planner).
    pub gap: f64,
    pub time_limit_secs: f64,
    pub preprocess: bool,
}

impl Default for MilpOptions {
    fn default() -> Self {
        MilpOptions { gap: 1e-6, time_limit_secs: 60.0, preprocess: true }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub instance: DomainInstance,
    pub planner: PlannerKind,
    pub milp: MilpOptions,
    pub grad: GradPlanConfig,
    /// Learned transition model; required unless the planner is `baseline`.
    pub network: Option<Network>,
    pub seed: u64,
    /// Warm-start each gradient replanning call from the previous plan
    /// shifted by one step.
    pub warm_start: bool,
}

impl ExperimentSpec {
    pub fn new(instance: DomainInstance, planner: PlannerKind) -> Self {
        ExperimentSpec {
            instance,
            planner,
            milp: match planner {
                PlannerKind::MilpStrengthenedGap20 => MilpOptions { gap: 0.2, ..MilpOptions::default() },
                _ => MilpOptions::default(),
            },
            grad: GradPlanConfig::default(),
            network: None,
            seed: 0,
        warm_start: false,
        }
    }

    pub fn with_network(mut self, network: Network) -> Self {
        self.network = Some(network);
        self
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        if self.planner.needs_network() && self.network.is_none() {
            return Err(DomainError::Config(format!(
                "planner {} requires a trained network",
                self.planner.label()
            )));
        }
        if self.milp.gap < 0.0 || !self.milp.gap.is_finite() {
            return Err(DomainError::Config("gap target must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

/// Wall time per phase of one planning call, in seconds.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct PhaseTimes {
    pub compile: f64,
    pub preprocess: f64,
    pub solve: f64,
    pub simulate: f64,
}

impl PhaseTimes {
    pub fn total(&self) -> f64 {
        self.compile + self.preprocess + self.solve + self.simulate
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub observed_state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub times: PhaseTimes,
    pub gap: Option<f64>,
    pub nodes: Option<usize>,
    pub epochs: Option<usize>,
    /// Planner failed and the default no-op action was substituted.
    pub fallback: bool,
    /// Planner action violated a constraint and was projected.
    pub projected: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub instance: String,
    pub planner: String,
    pub seed: u64,
    pub steps: Vec<StepRecord>,
    pub final_state: Vec<f64>,
    pub total_return: f64,
}

impl RunRecord {
    pub fn total_wall_secs(&self) -> f64 {
        self.steps.iter().map(|s| s.times.total()).sum()
    }

    pub fn mean_call_secs(&self) -> f64 {
        if self.steps.is_empty() {
            0.0
        } else {
            self.total_wall_secs() / self.steps.len() as f64
        }
    }

    /// Re-simulate the recorded actions and confirm the recorded return.
    pub fn verify(&self, instance: &DomainInstance) -> Result<(), DomainError> {
        let problem = instance.planning_problem();
        let mut state = problem.init.clone();
        let mut total = 0.0;
        for step in &self.steps {
            let next = instance.step(&state, &step.action)?;
            let r = problem
                .evaluate_reward(&next, &step.action)
                .map_err(|e| DomainError::Config(e.to_string()))?;
            total += r;
            state = next;
        }
        if (total - self.total_return).abs() > 1e-9 {
            return Err(DomainError::Config(format!(
                "recorded return {} disagrees with re-simulation {total}",
                self.total_return
            )));
        }
        Ok(())
    }
}

/// Project an action into the declared box and, for reservoirs, below the
/// current level. Returns true when the action had to change.
fn project_action(problem: &PlanningProblem, instance: &DomainInstance, state: &[f64], action: &mut [f64]) -> bool {
    let mut changed = false;
    for (a, decl) in action.iter_mut().zip(problem.action_vars()) {
        let clipped = a.clamp(decl.lower, decl.upper);
        if clipped != *a {
            *a = clipped;
            changed = true;
        }
    }
    if let DomainInstance::Reservoir(_) = instance {
        for (r, a) in action.iter_mut().enumerate() {
            let cap = state[r].max(0.0);
            if *a > cap {
                *a = cap;
                changed = true;
            }
        }
    }
    changed
}

struct PlanOutcome {
    action: Vec<f64>,
    /// Full plan over the remaining horizon (for warm starts).
    plan: Option<Vec<Vec<f64>>>,
    times: PhaseTimes,
    gap: Option<f64>,
    nodes: Option<usize>,
    epochs: Option<usize>,
    fallback: bool,
}

fn noop_outcome(problem: &PlanningProblem, times: PhaseTimes) -> PlanOutcome {
    PlanOutcome {
        action: problem.default_action(),
        plan: None,
        times,
        gap: None,
        nodes: None,
        epochs: None,
        fallback: true,
    }
}

fn plan_milp(
    problem: &PlanningProblem,
    net: &Network,
    remaining: usize,
    opts: &MilpOptions,
    strengthened: bool,
) -> PlanOutcome {
    let mut times = PhaseTimes::default();
    let t0 = Instant::now();
    let bounds = if opts.preprocess {
        match preprocess_bounds(problem, net, remaining, &PreprocessBudget::default()) {
            Ok(b) => b,
            Err(_) => return noop_outcome(problem, PhaseTimes { preprocess: t0.elapsed().as_secs_f64(), ..times }),
        }
    } else {
        Bounds::declared(problem, remaining)
    };
    times.preprocess = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let compiled = if strengthened {
        compile_strengthened(problem, net, remaining, &bounds)
    } else {
        compile_base(problem, net, remaining, &bounds)
    };
    let (model, vars) = match compiled {
        Ok(mv) => mv,
        Err(_) => return noop_outcome(problem, PhaseTimes { compile: t1.elapsed().as_secs_f64(), ..times }),
    };
    times.compile = t1.elapsed().as_secs_f64();

    let t2 = Instant::now();
    let options = SolveOptions {
        time_limit: Some(Duration::from_secs_f64(opts.time_limit_secs)),
        node_limit: None,
        rel_gap_target: opts.gap,
    };
    let outcome = solve(&model, &options).ok().and_then(|result| {
        let gap = result.gap;
        let nodes = result.nodes;
        extract_plan(&result, &vars).ok().map(|plan| (plan, gap, nodes))
    });
    times.solve = t2.elapsed().as_secs_f64();
    match outcome {
        Some((plan, gap, nodes)) => PlanOutcome {
            action: plan.actions[0].clone(),
            plan: Some(plan.actions),
            times,
            gap,
            nodes: Some(nodes),
            epochs: None,
            fallback: false,
        },
        None => noop_outcome(problem, times),
    }
}

fn plan_grad(
    problem: &PlanningProblem,
    net: &Network,
    remaining: usize,
    config: &GradPlanConfig,
) -> PlanOutcome {
    let mut times = PhaseTimes::default();
    let t0 = Instant::now();
    let outcome = plan_gradient(problem, net, remaining, config);
    times.solve = t0.elapsed().as_secs_f64();
    match outcome {
        Ok(out) => PlanOutcome {
            action: out.plan.actions[0].clone(),
            plan: Some(out.plan.actions),
            times,
            gap: None,
            nodes: None,
            epochs: out.plan.diagnostics.epochs,
            fallback: false,
        },
        Err(_) => noop_outcome(problem, times),
    }
}

/// Shift a plan one step forward, repeating the last row for the final slot.
fn shifted_warm_start(plan: &[Vec<f64>], remaining: usize) -> Option<Vec<Vec<f64>>> {
    if plan.len() < 2 || remaining == 0 {
        return None;
    }
    let mut shifted: Vec<Vec<f64>> = plan[1..].to_vec();
    while shifted.len() < remaining {
        shifted.push(shifted.last()?.clone());
    }
    shifted.truncate(remaining);
    Some(shifted)
}

pub fn run_online(spec: &ExperimentSpec) -> Result<RunRecord, DomainError> {
    spec.validate()?;
    let template = spec.instance.planning_problem();
    let horizon = template.horizon;
    let mut state = template.init.clone();
    let mut steps = Vec::with_capacity(horizon);
    let mut total_return = 0.0;
    let mut previous_plan: Option<Vec<Vec<f64>>> = None;

    let state_box: Vec<(f64, f64)> = template.state_vars().map(|v| (v.lower, v.upper)).collect();

    for t in 0..horizon {
        let remaining = horizon - t;
        // plan over the remaining horizon from the observed state
        let mut problem = template.clone();
        problem.horizon = remaining;
        problem.init = state
            .iter()
            .zip(state_box.iter())
            .map(|(&v, &(lo, hi))| v.clamp(lo, hi))
            .collect();

        let mut outcome = match spec.planner {
            PlannerKind::Baseline => {
                let t0 = Instant::now();
                let action = spec.instance.baseline(&state);
                PlanOutcome {
                    action,
                    plan: None,
                    times: PhaseTimes { solve: t0.elapsed().as_secs_f64(), ..PhaseTimes::default() },
                    gap: None,
                    nodes: None,
                    epochs: None,
                    fallback: false,
                }
            }
            PlannerKind::MilpBase => {
                plan_milp(&problem, spec.network.as_ref().expect("validated"), remaining, &spec.milp, false)
            }
            PlannerKind::MilpStrengthened | PlannerKind::MilpStrengthenedGap20 => {
                plan_milp(&problem, spec.network.as_ref().expect("validated"), remaining, &spec.milp, true)
            }
            PlannerKind::Grad => {
                let mut config = spec.grad.clone();
                config.seed = spec.seed.wrapping_add(t as u64);
                if spec.warm_start {
                    config.warm_start = previous_plan.as_deref().and_then(|p| shifted_warm_start(p, remaining));
                }
                plan_grad(&problem, spec.network.as_ref().expect("validated"), remaining, &config)
            }
        };
        previous_plan = outcome.plan.take();

        let mut action = outcome.action;
        let projected = project_action(&template, &spec.instance, &state, &mut action)
            || !template.check_constraints(&state, &action).is_empty();
        if projected {
            // last resort: the no-op action is feasible by construction
            if !template.check_constraints(&state, &action).is_empty() {
                action = template.default_action();
            }
        }

        let t_sim = Instant::now();
        let next = spec.instance.step(&state, &action)?;
        let reward = template
            .evaluate_reward(&next, &action)
            .map_err(|e| DomainError::Config(e.to_string()))?;
        outcome.times.simulate = t_sim.elapsed().as_secs_f64();
        total_return += reward;

        steps.push(StepRecord {
            observed_state: state.clone(),
            action,
            reward,
            times: outcome.times,
            gap: outcome.gap,
            nodes: outcome.nodes,
            epochs: outcome.epochs,
            fallback: outcome.fallback,
            projected,
        });
        state = next;
    }

    Ok(RunRecord {
        instance: spec.instance.name().to_string(),
        planner: spec.planner.label().to_string(),
        seed: spec.seed,
        steps,
        final_state: state,
        total_return,
    })
}

pub const SUITE_CSV_HEADER: &str =
    "instance,planner,seed,return,total_wall_secs,mean_call_secs,steps,fallbacks,projections";

pub fn run_suite(specs: &[ExperimentSpec]) -> Result<Vec<RunRecord>, DomainError> {
    specs.iter().map(run_online).collect()
}

pub fn suite_csv(records: &[RunRecord]) -> String {
    let mut out = String::from(SUITE_CSV_HEADER);
    out.push('\n');
    for r in records {
        let fallbacks = r.steps.iter().filter(|s| s.fallback).count();
        let projections = r.steps.iter().filter(|s| s.projected).count();
        out.push_str(&format!(
            "{},{},{},{:.17e},{:.6},{:.6},{},{},{}\n",
            r.instance,
            r.planner,
            r.seed,
            r.total_return,
            r.total_wall_secs(),
            r.mean_call_secs(),
            r.steps.len(),
            fallbacks,
            projections,
        ));
    }
    out
}
