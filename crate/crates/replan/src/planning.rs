//! Factored planning problem: state/action variable declarations, a
//! piecewise-linear constraint and reward expression language, and the
//! problem container shared by every planner.
//!
//! Time indexing convention: actions live at steps t in {1..H}, states at
//! t in {1..H+1}. The per-step reward references the action at t and the
//! state at t+1 (the post-transition state).

use serde::{Deserialize, Serialize};

use crate::error::PlanningError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarKind {
    State,
    Action,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VarDecl {
    pub name: String,
    pub kind: VarKind,
    pub lower: f64,
    pub upper: f64,
    /// No-op value for actions; for states, a nominal value.
    pub default: f64,
}

/// Reference to a declared variable by kind and position within that kind.
///
/// In a reward expression, `State` means the post-transition state s_{t+1}
/// and `Action` means a_t. In a global constraint both refer to step t.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VarRef {
    pub kind: VarKind,
    pub index: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinExpr {
    pub terms: Vec<(f64, VarRef)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn new(terms: Vec<(f64, VarRef)>, constant: f64) -> Self {
        LinExpr { terms, constant }
    }

    pub fn state(index: usize, coeff: f64) -> Self {
        LinExpr {
            terms: vec![(coeff, VarRef { kind: VarKind::State, index })],
            constant: 0.0,
        }
    }

    pub fn action(index: usize, coeff: f64) -> Self {
        LinExpr {
            terms: vec![(coeff, VarRef { kind: VarKind::Action, index })],
            constant: 0.0,
        }
    }

    pub fn with_constant(mut self, c: f64) -> Self {
        self.constant = c;
        self
    }

    pub fn eval(&self, state: &[f64], action: &[f64]) -> f64 {
        let mut v = self.constant;
        for (c, r) in &self.terms {
            v += c * match r.kind {
                VarKind::State => state[r.index],
                VarKind::Action => action[r.index],
            };
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = ">=")]
    Ge,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Constraint {
    pub name: String,
    pub expr: LinExpr,
    pub relation: Relation,
    pub rhs: f64,
}

impl Constraint {
    /// Signed slack: nonnegative iff the constraint holds.
    pub fn slack(&self, state: &[f64], action: &[f64]) -> f64 {
        let lhs = self.expr.eval(state, action);
        match self.relation {
            Relation::Le => self.rhs - lhs,
            Relation::Ge => lhs - self.rhs,
            Relation::Eq => -(lhs - self.rhs).abs(),
        }
    }
}

/// Piecewise-linear expression: linear terms plus coefficient-weighted
/// `abs` and `max(.,0)` pieces. These are exactly the forms the MILP
/// compiler can linearize.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum PwlTerm {
    Linear(LinExpr),
    Abs { coeff: f64, expr: LinExpr },
    MaxZero { coeff: f64, expr: LinExpr },
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PwlExpr {
    pub terms: Vec<PwlTerm>,
    pub constant: f64,
}

impl PwlExpr {
    pub fn eval(&self, state: &[f64], action: &[f64]) -> f64 {
        let mut v = self.constant;
        for term in &self.terms {
            v += match term {
                PwlTerm::Linear(e) => e.eval(state, action),
                PwlTerm::Abs { coeff, expr } => coeff * expr.eval(state, action).abs(),
                PwlTerm::MaxZero { coeff, expr } => coeff * expr.eval(state, action).max(0.0),
            };
        }
        v
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanningProblem {
    pub vars: Vec<VarDecl>,
    pub global_constraints: Vec<Constraint>,
    pub init: Vec<f64>,
    pub goal: Vec<Constraint>,
    pub reward: PwlExpr,
    pub horizon: usize,
}

/// A plan produced by any planner: actions per step, the planner's own
/// state predictions, and its claimed objective.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanResult {
    /// H rows of |A| action values.
    pub actions: Vec<Vec<f64>>,
    /// H+1 rows of |S| predicted state values (index 0 = initial state).
    pub states: Vec<Vec<f64>>,
    pub objective: f64,
    pub diagnostics: PlanDiagnostics,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PlanDiagnostics {
    pub status: String,
    pub gap: Option<f64>,
    pub nodes: Option<usize>,
    pub epochs: Option<usize>,
    pub wall_time_secs: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Violation {
    pub constraint: String,
    /// Negative by how much the constraint is violated.
    pub slack: f64,
}

impl PlanningProblem {
    pub fn validate(&self) -> Result<(), PlanningError> {
        if self.horizon == 0 {
            return Err(PlanningError::BadHorizon(0));
        }
        let mut seen = std::collections::HashSet::new();
        for v in &self.vars {
            if !(v.lower <= v.default && v.default <= v.upper) {
                return Err(PlanningError::BadVariableBounds(v.name.clone()));
            }
            if !seen.insert(v.name.clone()) {
                return Err(PlanningError::DuplicateVariable(v.name.clone()));
            }
        }
        let ns = self.state_vars().count();
        if self.init.len() != ns {
            return Err(PlanningError::DimensionMismatch {
                what: "init".into(),
                expected: ns,
                got: self.init.len(),
            });
        }
        Ok(())
    }

    pub fn state_vars(&self) -> impl Iterator<Item = &VarDecl> {
        self.vars.iter().filter(|v| v.kind == VarKind::State)
    }

    pub fn action_vars(&self) -> impl Iterator<Item = &VarDecl> {
        self.vars.iter().filter(|v| v.kind == VarKind::Action)
    }

    pub fn state_dim(&self) -> usize {
        self.state_vars().count()
    }

    pub fn action_dim(&self) -> usize {
        self.action_vars().count()
    }

    pub fn default_action(&self) -> Vec<f64> {
        self.action_vars().map(|v| v.default).collect()
    }

    /// Single-step reward; `state` is the post-transition state.
    pub fn evaluate_reward(&self, state: &[f64], action: &[f64]) -> Result<f64, PlanningError> {
        self.check_dims(state, action)?;
        Ok(self.reward.eval(state, action))
    }

    /// Global constraint check at one step; violations are data, not errors.
    pub fn check_constraints(&self, state: &[f64], action: &[f64]) -> Vec<Violation> {
        let mut out = Vec::new();
        for c in &self.global_constraints {
            let slack = c.slack(state, action);
            if slack < -1e-9 {
                out.push(Violation { constraint: c.name.clone(), slack });
            }
        }
        // Declared bounds participate in C as well.
        let mut si = 0;
        let mut ai = 0;
        for v in &self.vars {
            let val = match v.kind {
                VarKind::State => {
                    si += 1;
                    state[si - 1]
                }
                VarKind::Action => {
                    ai += 1;
                    action[ai - 1]
                }
            };
            if val < v.lower - 1e-9 {
                out.push(Violation {
                    constraint: format!("{}:lower", v.name),
                    slack: val - v.lower,
                });
            }
            if val > v.upper + 1e-9 {
                out.push(Violation {
                    constraint: format!("{}:upper", v.name),
                    slack: v.upper - val,
                });
            }
        }
        out
    }

    fn check_dims(&self, state: &[f64], action: &[f64]) -> Result<(), PlanningError> {
        if state.len() != self.state_dim() {
            return Err(PlanningError::DimensionMismatch {
                what: "state".into(),
                expected: self.state_dim(),
                got: state.len(),
            });
        }
        if action.len() != self.action_dim() {
            return Err(PlanningError::DimensionMismatch {
                what: "action".into(),
                expected: self.action_dim(),
                got: action.len(),
            });
        }
        Ok(())
    }

    /// True if the reward is non-positive for every point inside the
    /// declared variable boxes, judged term by term. This underpins the
    /// squared planning loss.
    pub fn reward_nonpositive_by_construction(&self) -> bool {
        if self.constant_reward_bound() > 0.0 {
            return false;
        }
        for term in &self.reward.terms {
            match term {
                PwlTerm::Abs { coeff, .. } | PwlTerm::MaxZero { coeff, .. } => {
                    if *coeff > 0.0 {
                        return false;
                    }
                }
                PwlTerm::Linear(e) => {
                    let mut ub = e.constant;
                    for (c, r) in &e.terms {
                        let decl = self.decl(*r);
                        ub += if *c >= 0.0 { c * decl.upper } else { c * decl.lower };
                    }
                    if ub > 1e-12 {
                        return false;
                    }
                }
            }
        }
        true
    }

    fn constant_reward_bound(&self) -> f64 {
        self.reward.constant
    }

    pub fn decl(&self, r: VarRef) -> &VarDecl {
        match r.kind {
            VarKind::State => self.state_vars().nth(r.index).expect("state ref in range"),
            VarKind::Action => self.action_vars().nth(r.index).expect("action ref in range"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reservoir1() -> PlanningProblem {
        // one reservoir, m=20 n=80, reward on post-transition level
        let reward = PwlExpr {
            terms: vec![
                PwlTerm::Abs { coeff: -0.1, expr: LinExpr::state(0, -1.0).with_constant(50.0) },
                PwlTerm::MaxZero { coeff: -100.0, expr: LinExpr::state(0, -1.0).with_constant(20.0) },
                PwlTerm::MaxZero { coeff: -5.0, expr: LinExpr::state(0, 1.0).with_constant(-80.0) },
            ],
            constant: 0.0,
        };
        PlanningProblem {
            vars: vec![
                VarDecl { name: "l0".into(), kind: VarKind::State, lower: -10.0, upper: 150.0, default: 50.0 },
                VarDecl { name: "f0".into(), kind: VarKind::Action, lower: 0.0, upper: 40.0, default: 0.0 },
            ],
            global_constraints: vec![Constraint {
                name: "outflow_le_level".into(),
                expr: LinExpr {
                    terms: vec![
                        (1.0, VarRef { kind: VarKind::Action, index: 0 }),
                        (-1.0, VarRef { kind: VarKind::State, index: 0 }),
                    ],
                    constant: 0.0,
                },
                relation: Relation::Le,
                rhs: 0.0,
            }],
            init: vec![50.0],
            goal: vec![],
            reward,
            horizon: 10,
        }
    }

    #[test]
    fn reservoir_midpoint_reward_is_zero() {
        let p = reservoir1();
        let r = p.evaluate_reward(&[50.0], &[0.0]).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn hvac_single_room_reward() {
        // p=22.5, b=10, k=1, [m,n]=[20,25] -> -(10*0 + 10 + 0.1*0) = -10
        let reward = PwlExpr {
            terms: vec![
                PwlTerm::Abs { coeff: -10.0, expr: LinExpr::state(0, -1.0).with_constant(22.5) },
                PwlTerm::Linear(LinExpr::action(0, -1.0)),
                PwlTerm::MaxZero { coeff: -0.1, expr: LinExpr::state(0, 1.0).with_constant(-25.0) },
                PwlTerm::MaxZero { coeff: -0.1, expr: LinExpr::state(0, -1.0).with_constant(20.0) },
            ],
            constant: 0.0,
        };
        let p = PlanningProblem {
            vars: vec![
                VarDecl { name: "p0".into(), kind: VarKind::State, lower: -20.0, upper: 60.0, default: 20.0 },
                VarDecl { name: "b0".into(), kind: VarKind::Action, lower: 0.0, upper: 10.0, default: 0.0 },
            ],
            global_constraints: vec![],
            init: vec![20.0],
            goal: vec![],
            reward,
            horizon: 5,
        };
        let r = p.evaluate_reward(&[22.5], &[10.0]).unwrap();
        assert!((r - (-10.0)).abs() < 1e-12);
    }

    #[test]
    fn navigation_reward_at_goal_is_zero() {
        let reward = PwlExpr {
            terms: vec![
                PwlTerm::Abs { coeff: -1.0, expr: LinExpr::state(0, -1.0).with_constant(8.0) },
                PwlTerm::Abs { coeff: -1.0, expr: LinExpr::state(1, -1.0).with_constant(8.0) },
            ],
            constant: 0.0,
        };
        let p = PlanningProblem {
            vars: vec![
                VarDecl { name: "px".into(), kind: VarKind::State, lower: 0.0, upper: 10.0, default: 0.0 },
                VarDecl { name: "py".into(), kind: VarKind::State, lower: 0.0, upper: 10.0, default: 0.0 },
                VarDecl { name: "dx".into(), kind: VarKind::Action, lower: -1.0, upper: 1.0, default: 0.0 },
                VarDecl { name: "dy".into(), kind: VarKind::Action, lower: -1.0, upper: 1.0, default: 0.0 },
            ],
            global_constraints: vec![],
            init: vec![0.0, 0.0],
            goal: vec![],
            reward,
            horizon: 10,
        };
        assert_eq!(p.evaluate_reward(&[8.0, 8.0], &[0.0, 0.0]).unwrap(), 0.0);
        assert!(p.reward_nonpositive_by_construction());
    }

    #[test]
    fn constraint_violations_report_signed_slack() {
        let p = reservoir1();
        assert!(p.check_constraints(&[50.0], &[30.0]).is_empty());
        let v = p.check_constraints(&[50.0], &[60.0]);
        // bound violation (f > 40) and coupling violation (f > l)
        assert!(v.iter().any(|x| x.constraint == "outflow_le_level" && (x.slack + 10.0).abs() < 1e-12));
        assert!(v.iter().any(|x| x.constraint == "f0:upper"));
    }

    #[test]
    fn navigation_move_bound_violation() {
        let p = reservoir1();
        // dimension mismatch is a structured error
        let err = p.evaluate_reward(&[1.0, 2.0], &[0.0]).unwrap_err();
        match err {
            PlanningError::DimensionMismatch { what, .. } => assert_eq!(what, "state"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn reward_evaluation_is_pure() {
        let p = reservoir1();
        let a = p.evaluate_reward(&[43.7], &[12.3]).unwrap();
        let b = p.evaluate_reward(&[43.7], &[12.3]).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }
}
