//! Compilation of (PlanningProblem, folded Network, horizon) to a MILP.
//!
//! Base encoding: the initial state pins Y_1, global constraints apply at
//! every step, goal constraints at H+1, one bias unit per step is fixed to
//! 1, each ReLU gets the big-M triple
//!     P <= M P',   P <= M (1 - P') + Phat,   P >= Phat,
//! and the linear output layer defines Y_{t+1}. Big-M values come from
//! interval arithmetic over the supplied bounds, propagated through time;
//! ReLUs whose pre-activation sign is decided by the intervals get their
//! indicator fixed.
//!
//! Strengthened encoding: every state/action variable whose lower bound is
//! negative at some step is split into nonneg/nonpos parts linked by an
//! indicator, and each ReLU gains a sign-partitioned valid upper bound.

use crate::error::CompileError;
use crate::milp::model::{MilpModel, Sense, SolveResult, VarType};
use crate::nn::network::Network;
use crate::planning::{
    PlanDiagnostics, PlanResult, PlanningProblem, PwlTerm, Relation, VarKind,
};

use super::bounds::{inflate_up, propagate_spans, Bounds, Span, BIG_M_FALLBACK};

/// Column indices of every encoding variable, plus the big-M table.
#[derive(Debug, Clone)]
pub struct EncodingVars {
    pub horizon: usize,
    /// x[t-1][a], t in 1..H.
    pub x: Vec<Vec<usize>>,
    /// y[t-1][s], t in 1..H+1.
    pub y: Vec<Vec<usize>>,
    /// Bias unit per step, fixed to 1.
    pub bias: Vec<usize>,
    /// p[t-1][layer][unit]: ReLU outputs.
    pub p: Vec<Vec<Vec<usize>>>,
    /// Matching activation indicators (binary).
    pub p_on: Vec<Vec<Vec<usize>>>,
    /// Time-uniform big-M per (hidden layer, unit).
    pub big_m: Vec<Vec<f64>>,
    /// Auxiliary reward variables, one per |.|/max(.,0) term per step.
    pub reward_aux: Vec<usize>,
    /// Sign splits created by the strengthened encoding:
    /// (plus, minus, indicator) per action [t-1][a] / state [t-1][s].
    pub x_split: Vec<Vec<Option<(usize, usize, usize)>>>,
    pub y_split: Vec<Vec<Option<(usize, usize, usize)>>>,
}

fn check_compile_inputs(
    problem: &PlanningProblem,
    net: &Network,
    horizon: usize,
    bounds: &Bounds,
) -> Result<(), CompileError> {
    if !net.is_folded() {
        return Err(CompileError::NotFolded);
    }
    assert_eq!(net.state_dim, problem.state_dim(), "network/problem state width");
    assert_eq!(net.action_dim, problem.action_dim(), "network/problem action width");
    assert!(horizon >= 1 && bounds.horizon >= horizon, "bounds cover the horizon");
    for t in 1..=horizon {
        for (i, v) in problem.action_vars().enumerate() {
            let iv = bounds.action_at(t, i);
            if !iv.lower.is_finite() || !iv.upper.is_finite() {
                return Err(CompileError::UnboundedVariable(v.name.clone(), t));
            }
        }
    }
    for t in 1..=horizon + 1 {
        for (i, v) in problem.state_vars().enumerate() {
            let iv = bounds.state_at(t, i);
            if !iv.lower.is_finite() || !iv.upper.is_finite() {
                return Err(CompileError::UnboundedVariable(v.name.clone(), t));
            }
        }
    }
    Ok(())
}

pub fn compile_base(
    problem: &PlanningProblem,
    net: &Network,
    horizon: usize,
    bounds: &Bounds,
) -> Result<(MilpModel, EncodingVars), CompileError> {
    check_compile_inputs(problem, net, horizon, bounds)?;
    let ns = problem.state_dim();
    let na = problem.action_dim();
    let hidden = net.hidden_widths();
    let state_names: Vec<String> = problem.state_vars().map(|v| v.name.clone()).collect();
    let action_names: Vec<String> = problem.action_vars().map(|v| v.name.clone()).collect();

    // interval propagation through time: per step, pre-activation span of
    // every ReLU and the (bounds-intersected) span of the next state
    let mut preacts: Vec<Vec<Vec<Span>>> = Vec::with_capacity(horizon); // [t-1][layer][unit]
    let mut state_spans: Vec<Vec<Span>> = Vec::with_capacity(horizon + 1);
    state_spans.push(
        (0..ns)
            .map(|s| {
                let iv = bounds.state_at(1, s);
                Span { lo: iv.lower, hi: iv.upper }
            })
            .collect(),
    );
    for t in 1..=horizon {
        let action_span: Vec<Span> = (0..na)
            .map(|a| {
                let iv = bounds.action_at(t, a);
                Span { lo: iv.lower, hi: iv.upper }
            })
            .collect();
        let (pre, out) = propagate_spans(net, &state_spans[t - 1], &action_span);
        let next: Vec<Span> = out
            .iter()
            .enumerate()
            .map(|(s, o)| {
                let iv = bounds.state_at(t + 1, s);
                Span { lo: o.lo.max(iv.lower), hi: o.hi.min(iv.upper) }
            })
            .collect();
        preacts.push(pre);
        state_spans.push(next);
    }

    // time-uniform big-M envelope per ReLU
    let mut big_m: Vec<Vec<f64>> = hidden.iter().map(|&w| vec![0.0; w]).collect();
    for pre_t in &preacts {
        for (k, layer) in pre_t.iter().enumerate() {
            for (u, s) in layer.iter().enumerate() {
                big_m[k][u] = big_m[k][u].max(s.lo.abs()).max(s.hi.abs());
            }
        }
    }
    for row in big_m.iter_mut() {
        for m in row.iter_mut() {
            *m = inflate_up(*m);
            if !m.is_finite() {
                *m = BIG_M_FALLBACK;
            }
        }
    }

    let mut model = MilpModel::new("plan", Sense::Maximize);

    let x: Vec<Vec<usize>> = (1..=horizon)
        .map(|t| {
            (0..na)
                .map(|a| {
                    let iv = bounds.action_at(t, a);
                    model.add_var(
                        format!("x_{}_{t}", action_names[a]),
                        VarType::Continuous,
                        iv.lower,
                        iv.upper,
                    )
                })
                .collect()
        })
        .collect();
    let y: Vec<Vec<usize>> = (1..=horizon + 1)
        .map(|t| {
            (0..ns)
                .map(|s| {
                    let iv = bounds.state_at(t, s);
                    // propagated spans only ever tighten: Y_{t+1} = Phat
                    let sp = state_spans[t - 1][s];
                    model.add_var(
                        format!("y_{}_{t}", state_names[s]),
                        VarType::Continuous,
                        iv.lower.max(super::bounds::inflate_down(sp.lo)),
                        iv.upper.min(inflate_up(sp.hi)),
                    )
                })
                .collect()
        })
        .collect();
    let bias: Vec<usize> = (1..=horizon)
        .map(|t| model.add_var(format!("one_{t}"), VarType::Continuous, 1.0, 1.0))
        .collect();

    let mut p = Vec::with_capacity(horizon);
    let mut p_on = Vec::with_capacity(horizon);
    for t in 1..=horizon {
        let mut pt = Vec::with_capacity(hidden.len());
        let mut ot = Vec::with_capacity(hidden.len());
        for (k, &w) in hidden.iter().enumerate() {
            let mut pk = Vec::with_capacity(w);
            let mut ok = Vec::with_capacity(w);
            for u in 0..w {
                let pre = preacts[t - 1][k][u];
                let p_hi = if pre.hi <= 0.0 { 0.0 } else { inflate_up(pre.hi) };
                pk.push(model.add_var(format!("p_{t}_{k}_{u}"), VarType::Continuous, 0.0, p_hi));
                // fix the indicator when the interval decides the sign
                let (lo, hi) = if pre.hi <= 0.0 {
                    (0.0, 0.0)
                } else if pre.lo >= 0.0 {
                    (1.0, 1.0)
                } else {
                    (0.0, 1.0)
                };
                ok.push(model.add_var(format!("on_{t}_{k}_{u}"), VarType::Binary, lo, hi));
            }
            pt.push(pk);
            ot.push(ok);
        }
        p.push(pt);
        p_on.push(ot);
    }

    // Phat for unit u of layer k at step t, as sparse model terms.
    let preact_terms = |t: usize, k: usize, u: usize| -> Vec<(usize, f64)> {
        let layer = &net.layers[k];
        let mut terms = Vec::new();
        let mut col = 0usize;
        for s in 0..ns {
            let w = layer.weights.get(u, col);
            if w != 0.0 {
                terms.push((y[t - 1][s], w));
            }
            col += 1;
        }
        for a in 0..na {
            let w = layer.weights.get(u, col);
            if w != 0.0 {
                terms.push((x[t - 1][a], w));
            }
            col += 1;
        }
        for (j, &wj) in hidden.iter().enumerate().take_while(|&(j, _)| j < k) {
            for uu in 0..wj {
                let w = layer.weights.get(u, col);
                if w != 0.0 {
                    terms.push((p[t - 1][j][uu], w));
                }
                col += 1;
            }
        }
        let b = layer.bias[u];
        if b != 0.0 {
            terms.push((bias[t - 1], b));
        }
        terms
    };

    for t in 1..=horizon {
        for (k, &w) in hidden.iter().enumerate() {
            for u in 0..w {
                let m = big_m[k][u];
                let pv = p[t - 1][k][u];
                let ov = p_on[t - 1][k][u];
                // P <= M P'
                model.add_constraint(
                    format!("relu_cap_{t}_{k}_{u}"),
                    vec![(pv, 1.0), (ov, -m)],
                    Relation::Le,
                    0.0,
                );
                // P <= M (1 - P') + Phat
                let mut terms = vec![(pv, 1.0), (ov, m)];
                for (c, w_) in preact_terms(t, k, u) {
                    terms.push((c, -w_));
                }
                model.add_constraint(format!("relu_ub_{t}_{k}_{u}"), terms, Relation::Le, m);
                // P >= Phat
                let mut terms = vec![(pv, 1.0)];
                for (c, w_) in preact_terms(t, k, u) {
                    terms.push((c, -w_));
                }
                model.add_constraint(format!("relu_lb_{t}_{k}_{u}"), terms, Relation::Ge, 0.0);
            }
        }
        // output layer: Y_{t+1} = Phat of output unit s
        let out_k = net.layers.len() - 1;
        for s in 0..ns {
            let mut terms = vec![(y[t][s], 1.0)];
            for (c, w_) in preact_terms(t, out_k, s) {
                terms.push((c, -w_));
            }
            model.add_constraint(format!("out_{t}_{s}"), terms, Relation::Eq, 0.0);
        }
        // global constraints at step t
        for (ci, con) in problem.global_constraints.iter().enumerate() {
            let terms: Vec<(usize, f64)> = con
                .expr
                .terms
                .iter()
                .map(|&(c, r)| {
                    let col = match r.kind {
                        VarKind::Action => x[t - 1][r.index],
                        VarKind::State => y[t - 1][r.index],
                    };
                    (col, c)
                })
                .collect();
            model.add_constraint(
                format!("c{ci}_{t}"),
                terms,
                con.relation,
                con.rhs - con.expr.constant,
            );
        }
    }
    // goal constraints on the final state
    for (ci, con) in problem.goal.iter().enumerate() {
        let terms: Vec<(usize, f64)> = con
            .expr
            .terms
            .iter()
            .map(|&(c, r)| {
                assert_eq!(r.kind, VarKind::State, "goal constraints reference states only");
                (y[horizon][r.index], c)
            })
            .collect();
        model.add_constraint(format!("goal{ci}"), terms, con.relation, con.rhs - con.expr.constant);
    }

    let mut vars = EncodingVars {
        horizon,
        x,
        y,
        bias,
        p,
        p_on,
        big_m,
        reward_aux: Vec::new(),
        x_split: vec![vec![None; na]; horizon],
        y_split: vec![vec![None; ns]; horizon + 1],
    };
    build_objective(problem, horizon, &mut model, &mut vars)?;
    Ok((model, vars))
}

/// Objective (sum of per-step rewards) with |.| and max(.,0) pieces
/// linearized through auxiliary variables; a nonlinear piece with a
/// positive coefficient cannot be maximized linearly and is rejected.
fn build_objective(
    problem: &PlanningProblem,
    horizon: usize,
    model: &mut MilpModel,
    vars: &mut EncodingVars,
) -> Result<(), CompileError> {
    const TOL: f64 = 1e-12;
    for t in 1..=horizon {
        model.objective_constant += problem.reward.constant;
        for (i, term) in problem.reward.terms.iter().enumerate() {
            match term {
                PwlTerm::Linear(e) => {
                    model.objective_constant += e.constant;
                    for &(c, r) in &e.terms {
                        // reward references a_t and the post-transition state
                        let col = match r.kind {
                            VarKind::Action => vars.x[t - 1][r.index],
                            VarKind::State => vars.y[t][r.index],
                        };
                        let prev = model
                            .objective
                            .iter()
                            .find(|(v, _)| *v == col)
                            .map(|&(_, c0)| c0)
                            .unwrap_or(0.0);
                        model.set_objective_coeff(col, prev + c);
                    }
                }
                PwlTerm::Abs { coeff, expr } | PwlTerm::MaxZero { coeff, expr } => {
                    if *coeff > TOL {
                        return Err(CompileError::NonConcaveReward(format!(
                            "reward term {i} (coefficient {coeff})"
                        )));
                    }
                    if coeff.abs() <= TOL {
                        continue;
                    }
                    let z = model.add_var(
                        format!("rw_{t}_{i}"),
                        VarType::Continuous,
                        0.0,
                        f64::INFINITY,
                    );
                    vars.reward_aux.push(z);
                    let expr_terms = |sign: f64| -> Vec<(usize, f64)> {
                        let mut ts = vec![(z, 1.0)];
                        for &(c, r) in &expr.terms {
                            let col = match r.kind {
                                VarKind::Action => vars.x[t - 1][r.index],
                                VarKind::State => vars.y[t][r.index],
                            };
                            ts.push((col, -sign * c));
                        }
                        ts
                    };
                    // z >= expr
                    model.add_constraint(
                        format!("rwp_{t}_{i}"),
                        expr_terms(1.0),
                        Relation::Ge,
                        expr.constant,
                    );
                    if matches!(term, PwlTerm::Abs { .. }) {
                        // z >= -expr
                        model.add_constraint(
                            format!("rwn_{t}_{i}"),
                            expr_terms(-1.0),
                            Relation::Ge,
                            -expr.constant,
                        );
                    }
                    let prev = model
                        .objective
                        .iter()
                        .find(|(v, _)| *v == z)
                        .map(|&(_, c0)| c0)
                        .unwrap_or(0.0);
                    model.set_objective_coeff(z, prev + coeff);
                }
            }
        }
    }
    Ok(())
}

pub fn compile_strengthened(
    problem: &PlanningProblem,
    net: &Network,
    horizon: usize,
    bounds: &Bounds,
) -> Result<(MilpModel, EncodingVars), CompileError> {
    let (mut model, mut vars) = compile_base(problem, net, horizon, bounds)?;
    let ns = problem.state_dim();
    let na = problem.action_dim();
    let hidden = net.hidden_widths();

    // sign splits for every (variable, t) whose lower bound is negative
    let add_split = |model: &mut MilpModel, name: String, col: usize, lo: f64, up: f64| {
        let plus = model.add_var(format!("{name}_pos"), VarType::Continuous, 0.0, up.max(0.0));
        let minus = model.add_var(format!("{name}_neg"), VarType::Continuous, lo.min(0.0), 0.0);
        let ind = model.add_var(format!("{name}_sgn"), VarType::Binary, 0.0, 1.0);
        // v = v+ + v-
        model.add_constraint(
            format!("{name}_sum"),
            vec![(col, 1.0), (plus, -1.0), (minus, -1.0)],
            Relation::Eq,
            0.0,
        );
        // v <= U v'
        model.add_constraint(format!("{name}_ub"), vec![(col, 1.0), (ind, -up)], Relation::Le, 0.0);
        // v >= L (1 - v')
        model.add_constraint(format!("{name}_lb"), vec![(col, 1.0), (ind, lo)], Relation::Ge, lo);
        // v+ <= U v'
        model.add_constraint(
            format!("{name}_pub"),
            vec![(plus, 1.0), (ind, -up)],
            Relation::Le,
            0.0,
        );
        // v- >= L (1 - v')
        model.add_constraint(
            format!("{name}_nlb"),
            vec![(minus, 1.0), (ind, lo)],
            Relation::Ge,
            lo,
        );
        (plus, minus, ind)
    };

    for t in 1..=horizon {
        for a in 0..na {
            let iv = bounds.action_at(t, a);
            if iv.lower < 0.0 {
                let col = vars.x[t - 1][a];
                let split =
                    add_split(&mut model, format!("sx_{t}_{a}"), col, iv.lower, iv.upper);
                vars.x_split[t - 1][a] = Some(split);
            }
        }
    }
    for t in 1..=horizon + 1 {
        for s in 0..ns {
            let iv = bounds.state_at(t, s);
            if iv.lower < 0.0 {
                let col = vars.y[t - 1][s];
                let split =
                    add_split(&mut model, format!("sy_{t}_{s}"), col, iv.lower, iv.upper);
                vars.y_split[t - 1][s] = Some(split);
            }
        }
    }

    // valid upper bound per ReLU: sign-partitioned input sums >= P
    for t in 1..=horizon {
        for (k, &width) in hidden.iter().enumerate() {
            let layer = &net.layers[k];
            for u in 0..width {
                let mut terms: Vec<(usize, f64)> = Vec::new();
                let mut col = 0usize;
                for s in 0..ns {
                    let w = layer.weights.get(u, col);
                    col += 1;
                    if w == 0.0 {
                        continue;
                    }
                    let iv = bounds.state_at(t, s);
                    match (w > 0.0, iv.lower < 0.0) {
                        (true, false) => terms.push((vars.y[t - 1][s], w)),
                        (true, true) => {
                            let (plus, _, _) = vars.y_split[t - 1][s].expect("split exists");
                            terms.push((plus, w));
                        }
                        (false, true) => {
                            let (_, minus, _) = vars.y_split[t - 1][s].expect("split exists");
                            terms.push((minus, w));
                        }
                        (false, false) => {}
                    }
                }
                for a in 0..na {
                    let w = layer.weights.get(u, col);
                    col += 1;
                    if w == 0.0 {
                        continue;
                    }
                    let iv = bounds.action_at(t, a);
                    match (w > 0.0, iv.lower < 0.0) {
                        (true, false) => terms.push((vars.x[t - 1][a], w)),
                        (true, true) => {
                            let (plus, _, _) = vars.x_split[t - 1][a].expect("split exists");
                            terms.push((plus, w));
                        }
                        (false, true) => {
                            let (_, minus, _) = vars.x_split[t - 1][a].expect("split exists");
                            terms.push((minus, w));
                        }
                        (false, false) => {}
                    }
                }
                for (j, &wj) in hidden.iter().enumerate().take_while(|&(j, _)| j < k) {
                    for uu in 0..wj {
                        let w = layer.weights.get(u, col);
                        col += 1;
                        if w > 0.0 {
                            terms.push((vars.p[t - 1][j][uu], w));
                        }
                    }
                }
                // positive bias pairs with the ReLU's own indicator
                let b = layer.bias[u];
                if b > 0.0 {
                    terms.push((vars.p_on[t - 1][k][u], b));
                }
                terms.push((vars.p[t - 1][k][u], -1.0));
                model.add_constraint(format!("str_{t}_{k}_{u}"), terms, Relation::Ge, 0.0);
            }
        }
    }
    Ok((model, vars))
}

/// Read the plan out of a solve result.
pub fn extract_plan(result: &SolveResult, vars: &EncodingVars) -> Result<PlanResult, CompileError> {
    let sol = result.solution.as_ref().ok_or(CompileError::NoIncumbent)?;
    let actions: Vec<Vec<f64>> =
        vars.x.iter().map(|row| row.iter().map(|&c| sol[c]).collect()).collect();
    let states: Vec<Vec<f64>> =
        vars.y.iter().map(|row| row.iter().map(|&c| sol[c]).collect()).collect();
    Ok(PlanResult {
        actions,
        states,
        objective: result.objective.expect("incumbent implies objective"),
        diagnostics: PlanDiagnostics {
            status: result.status.to_string(),
            gap: result.gap,
            nodes: Some(result.nodes),
            epochs: None,
            wall_time_secs: Some(result.wall_time.as_secs_f64()),
        },
    })
}

/// Simulate the learned network from the problem's initial state under the
/// given actions; returns all states (H+1 rows) and the total reward.
pub fn rollout(
    problem: &PlanningProblem,
    net: &Network,
    actions: &[Vec<f64>],
) -> Result<(Vec<Vec<f64>>, f64), CompileError> {
    let mut states = vec![problem.init.clone()];
    let mut total = 0.0;
    for act in actions {
        let next = net
            .predict(states.last().expect("nonempty"), act)
            .map_err(|e| CompileError::Milp(crate::error::MilpError::Malformed(e.to_string())))?;
        total += problem.reward.eval(&next, act);
        states.push(next);
    }
    Ok((states, total))
}

/// Convenience: pin each step's actions to fixed values by equality
/// constraints (used by tests and the rollout-equivalence oracles).
pub fn pin_actions(model: &mut MilpModel, vars: &EncodingVars, plan: &[Vec<f64>]) {
    for (t, row) in plan.iter().enumerate() {
        for (a, &v) in row.iter().enumerate() {
            model.add_constraint(
                format!("pin_{t}_{a}"),
                vec![(vars.x[t][a], 1.0)],
                Relation::Eq,
                v,
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compile::bounds::{preprocess_bounds, Bounds, PreprocessBudget, Provenance};
    use crate::milp::model::SolveOptions;
    use crate::milp::simplex::{solve_lp, LpStatus};
    use crate::nn::network::{Layer, Network, Standardization};
    use crate::nn::tensor::Tensor;
    use crate::planning::{LinExpr, PwlExpr, VarDecl};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_problem(ns: usize, na: usize, horizon: usize, slo: f64, shi: f64) -> PlanningProblem {
        let mut vars = Vec::new();
        for i in 0..ns {
            vars.push(VarDecl {
                name: format!("s{i}"),
                kind: VarKind::State,
                lower: slo,
                upper: shi,
                default: 0.0,
            });
        }
        for i in 0..na {
            vars.push(VarDecl {
                name: format!("a{i}"),
                kind: VarKind::Action,
                lower: -1.0,
                upper: 1.0,
                default: 0.0,
            });
        }
        // reward: -sum |s'_i| (concave, nonpositive)
        let reward = PwlExpr {
            terms: (0..ns)
                .map(|i| PwlTerm::Abs { coeff: -1.0, expr: LinExpr::state(i, 1.0) })
                .collect(),
            constant: 0.0,
        };
        PlanningProblem {
            vars,
            global_constraints: vec![],
            init: vec![0.1; ns],
            goal: vec![],
            reward,
            horizon,
        }
    }

    fn random_net(ns: usize, na: usize, widths: &[usize], seed: u64) -> Network {
        let net = Network::random(ns, na, widths, 0.0, seed);
        assert!(net.is_folded());
        net
    }

    fn random_plan(rng: &mut ChaCha8Rng, horizon: usize, na: usize) -> Vec<Vec<f64>> {
        (0..horizon)
            .map(|_| (0..na).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect()
    }

    #[test]
    fn zero_weight_net_optimum_is_constant_reward() {
        let ns = 2;
        let problem = tiny_problem(ns, 1, 1, -10.0, 10.0);
        let mut net = random_net(ns, 1, &[3], 1);
        for l in net.layers.iter_mut() {
            l.weights = Tensor::zeros(l.weights.rows, l.weights.cols);
        }
        let bias = net.layers.last().unwrap().bias.clone();
        let bounds = Bounds::declared(&problem, 1);
        let (model, _) = compile_base(&problem, &net, 1, &bounds).unwrap();
        let res = crate::milp::branch_bound::solve(&model, &SolveOptions::default()).unwrap();
        let expected = problem.reward.eval(&bias, &[0.0]);
        assert!((res.objective.unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn pinned_actions_match_rollout() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for case in 0..5 {
            let problem = tiny_problem(2, 1, 3, -30.0, 30.0);
            let net = random_net(2, 1, &[4], 100 + case);
            let plan = random_plan(&mut rng, 3, 1);
            let (states, ret) = rollout(&problem, &net, &plan).unwrap();
            // states must stay inside the declared box for the MILP point to exist
            if states.iter().flatten().any(|v| v.abs() > 30.0) {
                continue;
            }
            let bounds = Bounds::declared(&problem, 3);
            let (mut model, vars) = compile_base(&problem, &net, 3, &bounds).unwrap();
            pin_actions(&mut model, &vars, &plan);
            let res = crate::milp::branch_bound::solve(&model, &SolveOptions::default()).unwrap();
            let obj = res.objective.expect("pinned model feasible");
            assert!((obj - ret).abs() < 1e-6, "case {case}: milp {obj} vs rollout {ret}");
            let extracted = extract_plan(&res, &vars).unwrap();
            for (ys, ss) in extracted.states.iter().zip(states.iter()) {
                for (a, b) in ys.iter().zip(ss.iter()) {
                    assert!((a - b).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn free_actions_dominate_action_grid() {
        let problem = tiny_problem(2, 1, 2, -30.0, 30.0);
        let net = random_net(2, 1, &[4], 42);
        let bounds = Bounds::declared(&problem, 2);
        let (model, _) = compile_base(&problem, &net, 2, &bounds).unwrap();
        let opt = crate::milp::branch_bound::solve(&model, &SolveOptions::default())
            .unwrap()
            .objective
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let plan = random_plan(&mut rng, 2, 1);
            let (states, ret) = rollout(&problem, &net, &plan).unwrap();
            if states.iter().flatten().any(|v| v.abs() > 30.0) {
                continue; // rollout leaves the feasible box; not a MILP point
            }
            assert!(opt >= ret - 1e-6, "milp {opt} below grid point {ret}");
        }
    }

    #[test]
    fn strengthened_matches_base_and_tightens_relaxation() {
        for case in 0..6u64 {
            let problem = tiny_problem(2, 1, 2, -30.0, 30.0);
            let net = random_net(2, 1, &[3], 500 + case);
            let bounds = Bounds::declared(&problem, 2);
            let (base, _) = compile_base(&problem, &net, 2, &bounds).unwrap();
            let (strong, _) = compile_strengthened(&problem, &net, 2, &bounds).unwrap();
            let ob = crate::milp::branch_bound::solve(&base, &SolveOptions::default())
                .unwrap()
                .objective
                .unwrap();
            let os = crate::milp::branch_bound::solve(&strong, &SolveOptions::default())
                .unwrap()
                .objective
                .unwrap();
            assert!((ob - os).abs() < 1e-6, "case {case}: base {ob} strengthened {os}");

            let rb = solve_lp(&base, None).unwrap();
            let rs = solve_lp(&strong, None).unwrap();
            assert_eq!(rb.status, LpStatus::Optimal);
            assert_eq!(rs.status, LpStatus::Optimal);
            assert!(
                rs.objective <= rb.objective + 1e-7,
                "case {case}: relaxation {:.9} > base {:.9}",
                rs.objective,
                rb.objective
            );
        }
    }

    #[test]
    fn nonneg_lower_bounds_create_no_splits() {
        let mut problem = tiny_problem(1, 1, 1, 0.0, 30.0);
        problem.init = vec![0.5];
        for v in problem.vars.iter_mut() {
            if v.kind == VarKind::Action {
                v.lower = 0.0;
            }
        }
        let net = random_net(1, 1, &[2], 9);
        let bounds = Bounds::declared(&problem, 1);
        let (_, vars) = compile_strengthened(&problem, &net, 1, &bounds).unwrap();
        assert!(vars.x_split.iter().flatten().all(Option::is_none));
        assert!(vars.y_split.iter().flatten().all(Option::is_none));
    }

    #[test]
    fn positive_reward_coefficient_rejected() {
        let mut problem = tiny_problem(1, 1, 1, -5.0, 5.0);
        problem.reward = PwlExpr {
            terms: vec![PwlTerm::Abs { coeff: 1.0, expr: LinExpr::state(0, 1.0) }],
            constant: 0.0,
        };
        let net = random_net(1, 1, &[2], 3);
        let bounds = Bounds::declared(&problem, 1);
        match compile_base(&problem, &net, 1, &bounds) {
            Err(CompileError::NonConcaveReward(_)) => {}
            other => panic!("expected NonConcaveReward, got {other:?}"),
        }
    }

    #[test]
    fn unfolded_net_rejected() {
        let problem = tiny_problem(1, 1, 1, -5.0, 5.0);
        let mut net = random_net(1, 1, &[2], 3);
        net.standardization = Standardization::Stats { mu: vec![0.0; 2], sigma: vec![1.0; 2] };
        let bounds = Bounds::declared(&problem, 1);
        assert!(matches!(
            compile_base(&problem, &net, 1, &bounds),
            Err(CompileError::NotFolded)
        ));
    }

    #[test]
    fn unbounded_action_rejected() {
        let mut problem = tiny_problem(1, 1, 1, -5.0, 5.0);
        for v in problem.vars.iter_mut() {
            if v.kind == VarKind::Action {
                v.upper = f64::INFINITY;
                v.default = 0.0;
            }
        }
        let net = random_net(1, 1, &[2], 3);
        let bounds = Bounds::declared(&problem, 1);
        assert!(matches!(
            compile_base(&problem, &net, 1, &bounds),
            Err(CompileError::UnboundedVariable(name, 1)) if name == "a0"
        ));
    }

    #[test]
    fn reward_linearization_exact_at_optimum() {
        // reward -|s'| - 2 max(s' - 0.2, 0); check aux vars equal the
        // nonlinear pieces at the optimum
        let mut problem = tiny_problem(1, 1, 1, -30.0, 30.0);
        problem.reward = PwlExpr {
            terms: vec![
                PwlTerm::Abs { coeff: -1.0, expr: LinExpr::state(0, 1.0) },
                PwlTerm::MaxZero { coeff: -2.0, expr: LinExpr::state(0, 1.0).with_constant(-0.2) },
            ],
            constant: 0.0,
        };
        let net = random_net(1, 1, &[3], 21);
        let bounds = Bounds::declared(&problem, 1);
        let (model, vars) = compile_base(&problem, &net, 1, &bounds).unwrap();
        let res = crate::milp::branch_bound::solve(&model, &SolveOptions::default()).unwrap();
        let sol = res.solution.as_ref().unwrap();
        let s1 = sol[vars.y[1][0]];
        assert!((sol[vars.reward_aux[0]] - s1.abs()).abs() < 1e-7);
        assert!((sol[vars.reward_aux[1]] - (s1 - 0.2).max(0.0)).abs() < 1e-7);
    }

    #[test]
    fn big_m_contains_all_rollout_preactivations() {
        let problem = tiny_problem(2, 1, 3, -30.0, 30.0);
        let net = random_net(2, 1, &[4, 3], 77);
        let bounds = Bounds::declared(&problem, 3);
        let (_, vars) = compile_base(&problem, &net, 3, &bounds).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let plan = random_plan(&mut rng, 3, 1);
            let mut state = problem.init.clone();
            for act in &plan {
                // recompute hidden pre-activations by hand
                let mut inputs: Vec<f64> = state.iter().chain(act.iter()).copied().collect();
                for (k, layer) in net.layers.iter().enumerate().take(net.layers.len() - 1) {
                    for u in 0..layer.out_width() {
                        let mut pre = layer.bias[u];
                        for (j, &v) in inputs.iter().enumerate() {
                            pre += layer.weights.get(u, j) * v;
                        }
                        assert!(
                            pre.abs() <= vars.big_m[k][u],
                            "pre-activation {pre} outside big-M {}",
                            vars.big_m[k][u]
                        );
                    }
                    let start = inputs.len();
                    let _ = start;
                    let mut outs = Vec::new();
                    for u in 0..layer.out_width() {
                        let mut pre = layer.bias[u];
                        for (j, &v) in inputs.iter().enumerate() {
                            pre += layer.weights.get(u, j) * v;
                        }
                        outs.push(pre.max(0.0));
                    }
                    inputs.extend(outs);
                }
                state = net.predict(&state, act).unwrap();
                if state.iter().any(|v| v.abs() > 30.0) {
                    break; // left the declared box; interval guarantee no longer applies
                }
            }
        }
    }

    #[test]
    fn preprocessing_initial_state_pinned_and_bounds_tighten() {
        let problem = tiny_problem(1, 1, 2, -30.0, 30.0);
        let net = random_net(1, 1, &[3], 13);
        let bounds =
            preprocess_bounds(&problem, &net, 2, &PreprocessBudget::default()).unwrap();
        // t=1 state exactly the initial value
        let iv = bounds.state_at(1, 0);
        assert!((iv.lower - 0.1).abs() < 1e-6 && (iv.upper - 0.1).abs() < 1e-6);
        // later bounds never looser than declared, and flagged preprocessed
        for t in 2..=3 {
            let iv = bounds.state_at(t, 0);
            assert!(iv.lower >= -30.0 - 1e-6 && iv.upper <= 30.0 + 1e-6);
            assert_eq!(iv.provenance, Provenance::Preprocessed);
        }
        // rollout containment: preprocessed state bounds hold on random rollouts
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        'outer: for _ in 0..300 {
            let plan = random_plan(&mut rng, 2, 1);
            let mut state = problem.init.clone();
            let mut states = vec![state.clone()];
            for act in &plan {
                state = net.predict(&state, act).unwrap();
                if state.iter().any(|v| v.abs() > 30.0) {
                    continue 'outer; // infeasible trajectory, not bound-relevant
                }
                states.push(state.clone());
            }
            for (t0, st) in states.iter().enumerate() {
                let iv = bounds.state_at(t0 + 1, 0);
                assert!(
                    st[0] >= iv.lower - 1e-6 && st[0] <= iv.upper + 1e-6,
                    "state {} at t={} outside [{}, {}]",
                    st[0],
                    t0 + 1,
                    iv.lower,
                    iv.upper
                );
            }
        }
    }

    #[test]
    fn preprocessing_box_only_does_not_tighten_actions() {
        // a net that ignores its action input: action bounds stay declared
        let problem = tiny_problem(1, 1, 1, -30.0, 30.0);
        let mut net = random_net(1, 1, &[2], 2);
        for layer in net.layers.iter_mut() {
            // zero the action column (index 1) of input-connected weights
            for u in 0..layer.out_width() {
                if layer.in_width() > 1 {
                    layer.weights.set(u, 1, 0.0);
                }
            }
        }
        let bounds =
            preprocess_bounds(&problem, &net, 1, &PreprocessBudget::default()).unwrap();
        let iv = bounds.action_at(1, 0);
        assert!(iv.lower <= -1.0 + 1e-6 && iv.upper >= 1.0 - 1e-6);
    }

    fn layer(w: Vec<Vec<f64>>, b: Vec<f64>) -> Layer {
        let rows = w.len();
        let cols = w[0].len();
        Layer {
            weights: Tensor::from_vec(rows, cols, w.into_iter().flatten().collect()),
            bias: b,
        }
    }

    #[test]
    fn hand_net_optimum() {
        // 1 state, 1 action; hidden relu h = relu(s + a), output s' = h - 1.
        // H=1, reward -|s'|: choose a so that s' = 0 => h = 1 => s + a = 1.
        // init s = 0.1, a in [-1, 1]; a = 0.9 reaches reward 0.
        let problem = tiny_problem(1, 1, 1, -30.0, 30.0);
        let net = Network {
            state_dim: 1,
            action_dim: 1,
            layers: vec![
                layer(vec![vec![1.0, 1.0]], vec![0.0]),
                layer(vec![vec![0.0, 0.0, 1.0]], vec![-1.0]),
            ],
            dropout_p: 0.0,
            standardization: Standardization::Folded,
            loss_weights: vec![1.0],
        };
        net.validate().unwrap();
        let bounds = Bounds::declared(&problem, 1);
        let (model, vars) = compile_base(&problem, &net, 1, &bounds).unwrap();
        let res = crate::milp::branch_bound::solve(&model, &SolveOptions::default()).unwrap();
        assert!(res.objective.unwrap().abs() < 1e-7);
        let plan = extract_plan(&res, &vars).unwrap();
        assert_eq!(plan.actions.len(), 1);
        assert_eq!(plan.actions[0].len(), 1);
        assert!((plan.actions[0][0] - 0.9).abs() < 1e-6);
    }
}
