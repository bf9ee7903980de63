//! Gradient planner: unrolls the transition model and per-step reward over
//! the horizon on the differentiation tape, then optimizes a batch of
//! independently initialized action sequences by RMSProp-scaled gradient
//! descent, clipping actions into their declared boxes after every epoch.
//!
//! The default loss squares the accumulated return (valid when the reward
//! is non-positive by construction, so minimizing v^2 maximizes v); when
//! that assumption fails the planner falls back to the negated return.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::GradPlanError;
use crate::nn::network::Network;
use crate::nn::tape::{NodeId, Tape};
use crate::nn::tensor::Tensor;
use crate::planning::{PlanDiagnostics, PlanResult, PlanningProblem, PwlTerm, VarKind};

/// Anything that can advance a batched state both on and off the tape.
pub trait TapedDynamics {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    /// `state`: batch x |S|, `action`: batch x |A|; returns batch x |S|.
    fn step_on_tape(&self, tape: &mut Tape, state: NodeId, action: NodeId) -> NodeId;
    fn step(&self, state: &[f64], action: &[f64]) -> Vec<f64>;
}

impl TapedDynamics for Network {
    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn step_on_tape(&self, tape: &mut Tape, state: NodeId, action: NodeId) -> NodeId {
        self.forward_on_tape(tape, state, action)
    }

    fn step(&self, state: &[f64], action: &[f64]) -> Vec<f64> {
        self.predict(state, action).expect("dimensions checked by caller")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// L_i = v_i^2 (requires non-positive rewards).
    Squared,
    /// L_i = -v_i.
    Negated,
}

#[derive(Debug, Clone)]
pub struct GradPlanConfig {
    pub batch: usize,
    pub rate: f64,
    /// Effective rate at epoch e is rate / (1 + rate_decay * e).
    pub rate_decay: f64,
    pub epochs: usize,
    pub seed: u64,
    /// None picks `Squared` when the reward is non-positive by
    /// construction, otherwise `Negated`.
    pub loss: Option<LossKind>,
    /// Optional warm start for instance 0 (H rows of |A| values).
    pub warm_start: Option<Vec<Vec<f64>>>,
}

impl Default for GradPlanConfig {
    fn default() -> Self {
        GradPlanConfig {
            batch: 32,
            rate: 0.05,
            rate_decay: 0.0,
            epochs: 1000,
            seed: 0,
            loss: None,
            warm_start: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradPlanOutcome {
    pub plan: PlanResult,
    /// Best rollout return seen up to each epoch (monotone non-decreasing).
    pub trace: Vec<f64>,
    /// Mean return over the finite instances at each epoch.
    pub trace_mean: Vec<f64>,
    pub loss_used: LossKind,
}

const RMSPROP_DECAY: f64 = 0.9;
const RMSPROP_EPS: f64 = 1e-8;

/// Elementwise clip of every action row into its declared box; idempotent.
pub fn project_actions(actions: &mut [Tensor], lower: &[f64], upper: &[f64]) {
    for t in actions.iter_mut() {
        let cols = t.cols;
        for (i, v) in t.data.iter_mut().enumerate() {
            let a = i % cols;
            *v = v.clamp(lower[a], upper[a]);
        }
    }
}

/// Argmax of the rollout returns; non-finite entries lose, ties go to the
/// lowest index.
pub fn select_best(returns: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in returns.iter().enumerate() {
        if !v.is_finite() {
            continue;
        }
        match best {
            Some((_, bv)) if v <= bv => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

pub fn plan_gradient(
    problem: &PlanningProblem,
    dynamics: &dyn TapedDynamics,
    horizon: usize,
    config: &GradPlanConfig,
) -> Result<GradPlanOutcome, GradPlanError> {
    if config.batch == 0 {
        return Err(GradPlanError::EmptyBatch);
    }
    let na = problem.action_dim();
    let lower: Vec<f64> = problem.action_vars().map(|v| v.lower).collect();
    let upper: Vec<f64> = problem.action_vars().map(|v| v.upper).collect();
    let loss_kind = config.loss.unwrap_or({
        if problem.reward_nonpositive_by_construction() {
            LossKind::Squared
        } else {
            LossKind::Negated
        }
    });

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let b = config.batch;
    // one leaf tensor per step, batch x |A|
    let mut actions: Vec<Tensor> = (0..horizon)
        .map(|_| {
            let data: Vec<f64> = (0..b * na)
                .map(|i| {
                    let a = i % na;
                    if lower[a] == upper[a] {
                        lower[a]
                    } else {
                        rng.gen_range(lower[a]..upper[a])
                    }
                })
                .collect();
            Tensor::from_vec(b, na, data)
        })
        .collect();
    if let Some(warm) = &config.warm_start {
        for (t, row) in warm.iter().enumerate().take(horizon) {
            for (a, &v) in row.iter().enumerate() {
                actions[t].set(0, a, v.clamp(lower[a], upper[a]));
            }
        }
    }
    project_actions(&mut actions, &lower, &upper);

    let mut caches: Vec<Tensor> = (0..horizon).map(|_| Tensor::zeros(b, na)).collect();
    let mut alive = vec![true; b];
    let mut trace = Vec::with_capacity(config.epochs);
    let mut trace_mean = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, Vec<Vec<f64>>)> = None;

    let consider = |returns: &[f64], actions: &[Tensor], best: &mut Option<(f64, Vec<Vec<f64>>)>| {
        if let Some(i) = select_best(returns) {
            let v = returns[i];
            if best.as_ref().map_or(true, |(bv, _)| v > *bv) {
                let plan: Vec<Vec<f64>> = actions.iter().map(|t| t.row(i).to_vec()).collect();
                *best = Some((v, plan));
            }
        }
    };

    for epoch in 0..config.epochs {
        let mut tape = Tape::new();
        let action_nodes: Vec<NodeId> = actions.iter().map(|t| tape.leaf(t.clone())).collect();
        let init = tape.constant(Tensor::broadcast_rows(&problem.init, b));
        let mut state = init;
        let mut v: Option<NodeId> = None;
        for t in 0..horizon {
            state = dynamics.step_on_tape(&mut tape, state, action_nodes[t]);
            let r = reward_on_tape(&mut tape, problem, state, action_nodes[t]);
            v = Some(match v {
                None => r,
                Some(acc) => tape.add(acc, r),
            });
        }
        let v = v.expect("horizon >= 1");
        let returns: Vec<f64> = tape.value(v).data.clone();
        for (i, r) in returns.iter().enumerate() {
            if !r.is_finite() {
                alive[i] = false;
            }
        }
        if alive.iter().all(|a| !a) {
            return Err(GradPlanError::AllInstancesDead { epoch });
        }
        consider(&returns, &actions, &mut best);
        trace.push(best.as_ref().expect("some instance alive").0);
        let finite: Vec<f64> = returns.iter().copied().filter(|r| r.is_finite()).collect();
        trace_mean.push(finite.iter().sum::<f64>() / finite.len() as f64);

        let loss = match loss_kind {
            LossKind::Squared => {
                let sq = tape.square(v);
                tape.sum(sq)
            }
            LossKind::Negated => {
                let s = tape.sum(v);
                tape.scale(s, -1.0)
            }
        };
        let grads = tape.grad(loss, &action_nodes)?;
        let rate = config.rate / (1.0 + config.rate_decay * epoch as f64);
        for t in 0..horizon {
            let g = &grads[t];
            let cache = &mut caches[t];
            let act = &mut actions[t];
            for i in 0..b {
                if !alive[i] {
                    continue;
                }
                for a in 0..na {
                    let idx = i * na + a;
                    let gi = g.data[idx];
                    if !gi.is_finite() {
                        alive[i] = false;
                        break;
                    }
                    cache.data[idx] =
                        RMSPROP_DECAY * cache.data[idx] + (1.0 - RMSPROP_DECAY) * gi * gi;
                    act.data[idx] -= rate * gi / (cache.data[idx].sqrt() + RMSPROP_EPS);
                }
            }
        }
        project_actions(&mut actions, &lower, &upper);
    }

    // evaluate the post-final-update actions too
    let final_returns: Vec<f64> = (0..b)
        .map(|i| {
            if !alive[i] {
                return f64::NEG_INFINITY;
            }
            let plan: Vec<Vec<f64>> = actions.iter().map(|t| t.row(i).to_vec()).collect();
            rollout_return(problem, dynamics, &plan)
        })
        .collect();
    consider(&final_returns, &actions, &mut best);

    let (best_v, best_plan) = best.ok_or(GradPlanError::AllInstancesDead { epoch: config.epochs })?;
    let mut states = vec![problem.init.clone()];
    for act in &best_plan {
        let next = dynamics.step(states.last().expect("nonempty"), act);
        states.push(next);
    }
    Ok(GradPlanOutcome {
        plan: PlanResult {
            actions: best_plan,
            states,
            objective: best_v,
            diagnostics: PlanDiagnostics {
                status: "converged".into(),
                gap: None,
                nodes: None,
                epochs: Some(config.epochs),
                wall_time_secs: None,
            },
        },
        trace,
        trace_mean,
        loss_used: loss_kind,
    })
}

/// Plain (untaped) rollout return of one action sequence.
pub fn rollout_return(
    problem: &PlanningProblem,
    dynamics: &dyn TapedDynamics,
    actions: &[Vec<f64>],
) -> f64 {
    let mut state = problem.init.clone();
    let mut total = 0.0;
    for act in actions {
        state = dynamics.step(&state, act);
        total += problem.reward.eval(&state, act);
    }
    total
}

/// Per-step reward as a batch x 1 tape node; `state` is the post-transition
/// state node. |.| maps to the Abs op, max(.,0) to ReLU.
pub fn reward_on_tape(
    tape: &mut Tape,
    problem: &PlanningProblem,
    state: NodeId,
    action: NodeId,
) -> NodeId {
    let ns = problem.state_dim();
    let na = problem.action_dim();
    let batch = tape.value(state).rows;

    let linexpr = |tape: &mut Tape, expr: &crate::planning::LinExpr| -> NodeId {
        let mut cs = Tensor::zeros(ns, 1);
        let mut ca = Tensor::zeros(na, 1);
        for &(c, r) in &expr.terms {
            match r.kind {
                VarKind::State => cs.data[r.index] += c,
                VarKind::Action => ca.data[r.index] += c,
            }
        }
        let cs = tape.constant(cs);
        let ca = tape.constant(ca);
        let s_part = tape.matmul(state, cs);
        let a_part = tape.matmul(action, ca);
        let sum = tape.add(s_part, a_part);
        if expr.constant != 0.0 {
            tape.add_scalar(sum, expr.constant)
        } else {
            sum
        }
    };

    let mut total: Option<NodeId> = None;
    let push = |tape: &mut Tape, node: NodeId, total: &mut Option<NodeId>| {
        *total = Some(match *total {
            None => node,
            Some(acc) => tape.add(acc, node),
        });
    };
    for term in &problem.reward.terms {
        match term {
            PwlTerm::Linear(e) => {
                let n = linexpr(tape, e);
                push(tape, n, &mut total);
            }
            PwlTerm::Abs { coeff, expr } => {
                let e = linexpr(tape, expr);
                let a = tape.abs(e);
                let n = tape.scale(a, *coeff);
                push(tape, n, &mut total);
            }
            PwlTerm::MaxZero { coeff, expr } => {
                let e = linexpr(tape, expr);
                let m = tape.relu(e);
                let n = tape.scale(m, *coeff);
                push(tape, n, &mut total);
            }
        }
    }
    let base = match total {
        Some(n) => n,
        None => tape.constant(Tensor::zeros(batch, 1)),
    };
    if problem.reward.constant != 0.0 {
        tape.add_scalar(base, problem.reward.constant)
    } else {
        base
    }
}
