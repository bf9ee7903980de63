//! Solver-agnostic MILP container: continuous/binary variables with bounds,
//! sparse linear constraints and a linear objective.

use std::time::Duration;

use crate::planning::Relation;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarType {
    Continuous,
    Binary,
}

#[derive(Debug, Clone)]
pub struct MilpVar {
    pub name: String,
    pub kind: VarType,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone)]
pub struct MilpConstraint {
    pub name: String,
    /// Sparse (variable id, coefficient) pairs.
    pub terms: Vec<(usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Maximize,
    Minimize,
}

#[derive(Debug, Clone)]
pub struct MilpModel {
    pub name: String,
    pub vars: Vec<MilpVar>,
    pub constraints: Vec<MilpConstraint>,
    /// Sparse objective terms plus a constant offset.
    pub objective: Vec<(usize, f64)>,
    pub objective_constant: f64,
    pub sense: Sense,
}

impl MilpModel {
    pub fn new(name: impl Into<String>, sense: Sense) -> Self {
        MilpModel {
            name: name.into(),
            vars: Vec::new(),
            constraints: Vec::new(),
            objective: Vec::new(),
            objective_constant: 0.0,
            sense,
        }
    }

    pub fn add_var(&mut self, name: impl Into<String>, kind: VarType, lower: f64, upper: f64) -> usize {
        if kind == VarType::Binary {
            debug_assert!(lower >= 0.0 && upper <= 1.0, "binary bounds must lie in [0,1]");
        }
        self.vars.push(MilpVar { name: name.into(), kind, lower, upper });
        self.vars.len() - 1
    }

    pub fn add_constraint(
        &mut self,
        name: impl Into<String>,
        terms: Vec<(usize, f64)>,
        relation: Relation,
        rhs: f64,
    ) -> usize {
        self.constraints.push(MilpConstraint { name: name.into(), terms, relation, rhs });
        self.constraints.len() - 1
    }

    pub fn set_objective_coeff(&mut self, var: usize, coeff: f64) {
        if let Some(t) = self.objective.iter_mut().find(|(v, _)| *v == var) {
            t.1 += coeff;
        } else {
            self.objective.push((var, coeff));
        }
    }

    pub fn num_binaries(&self) -> usize {
        self.vars.iter().filter(|v| v.kind == VarType::Binary).count()
    }

    pub fn validate(&self) -> Result<(), crate::error::MilpError> {
        use crate::error::MilpError;
        for (i, v) in self.vars.iter().enumerate() {
            if v.lower > v.upper {
                return Err(MilpError::Malformed(format!("var {} ({}) has empty bound interval", i, v.name)));
            }
            if v.kind == VarType::Binary && (v.lower < -1e-9 || v.upper > 1.0 + 1e-9) {
                return Err(MilpError::Malformed(format!("binary var {} bounds not within [0,1]", v.name)));
            }
        }
        for c in &self.constraints {
            for &(v, coeff) in &c.terms {
                if v >= self.vars.len() {
                    return Err(MilpError::Malformed(format!("constraint {} references unknown var {v}", c.name)));
                }
                if !coeff.is_finite() {
                    return Err(MilpError::Malformed(format!("constraint {} has non-finite coefficient", c.name)));
                }
            }
            if !c.rhs.is_finite() {
                return Err(MilpError::Malformed(format!("constraint {} has non-finite rhs", c.name)));
            }
        }
        for &(v, coeff) in &self.objective {
            if v >= self.vars.len() || !coeff.is_finite() {
                return Err(MilpError::Malformed("bad objective term".into()));
            }
        }
        Ok(())
    }

    /// Objective value of a point, including the constant offset.
    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective_constant + self.objective.iter().map(|&(v, c)| c * x[v]).sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    GapReached,
    Infeasible,
    TimeLimit,
    Unbounded,
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::GapReached => "gap-reached",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::TimeLimit => "time-limit",
            SolveStatus::Unbounded => "unbounded",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub status: SolveStatus,
    /// Incumbent variable values, when one exists.
    pub solution: Option<Vec<f64>>,
    /// Incumbent objective (model sense).
    pub objective: Option<f64>,
    /// Best proven dual bound (model sense).
    pub bound: f64,
    /// |bound - objective| / max(|objective|, 1e-9) when an incumbent exists.
    pub gap: Option<f64>,
    pub nodes: usize,
    pub wall_time: Duration,
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub time_limit: Option<Duration>,
    pub node_limit: Option<usize>,
    /// An "optimal" claim means the gap is at most 1e-6.
    pub rel_gap_target: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { time_limit: None, node_limit: None, rel_gap_target: 1e-6 }
    }
}

pub fn relative_gap(bound: f64, objective: f64) -> f64 {
    (bound - objective).abs() / objective.abs().max(1e-9)
}
