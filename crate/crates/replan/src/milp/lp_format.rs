//! CPLEX LP-file export and a parser for external-solver solution files.
//!
//! The writer is deterministic: variables appear in declaration order and
//! every coefficient is printed with 17 significant digits so the emitted
//! file round-trips exact binary doubles.
//!
//! Solution-file format accepted by [`parse_solution_file`]:
//!
//! ```text
//! # comment lines start with '#'
//! objective <value>
//! <var-name> <value>
//! ...
//! ```
//!
//! Variables absent from the file default to 0.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use std::process::Command;

use crate::error::MilpError;
use crate::milp::model::{MilpModel, Sense, VarType};
use crate::planning::Relation;

fn fmt(x: f64) -> String {
    if x == x.trunc() && x.abs() < 1e15 {
        format!("{x:.1}")
    } else {
        format!("{x:.17e}")
    }
}

/// Write `model` in CPLEX LP format.
pub fn write_lp(model: &MilpModel, out: &mut dyn Write) -> Result<(), MilpError> {
    let sense = match model.sense {
        Sense::Maximize => "Maximize",
        Sense::Minimize => "Minimize",
    };
    writeln!(out, "\\ {}", model.name)?;
    writeln!(out, "{sense}")?;
    write!(out, " obj:")?;
    let mut any = false;
    let mut obj = vec![0.0; model.vars.len()];
    for &(v, c) in &model.objective {
        obj[v] += c;
    }
    for (i, v) in model.vars.iter().enumerate() {
        let c = obj[i];
        if c != 0.0 {
            write!(out, " {} {} {}", if c < 0.0 { "-" } else { "+" }, fmt(c.abs()), v.name)?;
            any = true;
        }
    }
    if model.objective_constant != 0.0 {
        let c = model.objective_constant;
        write!(out, " {} {}", if c < 0.0 { "-" } else { "+" }, fmt(c.abs()))?;
        any = true;
    }
    if !any {
        write!(out, " 0.0 {}", model.vars.first().map(|v| v.name.as_str()).unwrap_or("x0"))?;
    }
    writeln!(out)?;

    writeln!(out, "Subject To")?;
    for con in &model.constraints {
        write!(out, " {}:", con.name)?;
        if con.terms.is_empty() {
            // LP format requires at least one term
            write!(out, " 0.0 {}", model.vars[0].name)?;
        }
        for &(v, c) in &con.terms {
            write!(out, " {} {} {}", if c < 0.0 { "-" } else { "+" }, fmt(c.abs()), model.vars[v].name)?;
        }
        let rel = match con.relation {
            Relation::Le => "<=",
            Relation::Ge => ">=",
            Relation::Eq => "=",
        };
        writeln!(out, " {rel} {}", fmt(con.rhs))?;
    }

    writeln!(out, "Bounds")?;
    for v in &model.vars {
        if v.kind == VarType::Binary && v.lower == 0.0 && v.upper == 1.0 {
            continue; // implied by the Binaries section
        }
        match (v.lower.is_finite(), v.upper.is_finite()) {
            (true, true) if v.lower == v.upper => writeln!(out, " {} = {}", v.name, fmt(v.lower))?,
            (true, true) => writeln!(out, " {} <= {} <= {}", fmt(v.lower), v.name, fmt(v.upper))?,
            (true, false) => writeln!(out, " {} >= {}", v.name, fmt(v.lower))?,
            (false, true) => writeln!(out, " -inf <= {} <= {}", v.name, fmt(v.upper))?,
            (false, false) => writeln!(out, " {} free", v.name)?,
        }
    }

    let binaries: Vec<&str> = model
        .vars
        .iter()
        .filter(|v| v.kind == VarType::Binary)
        .map(|v| v.name.as_str())
        .collect();
    if !binaries.is_empty() {
        writeln!(out, "Binaries")?;
        for chunk in binaries.chunks(10) {
            writeln!(out, " {}", chunk.join(" "))?;
        }
    }
    writeln!(out, "End")?;
    Ok(())
}

/// Render the model to an LP-format string.
pub fn to_lp_string(model: &MilpModel) -> Result<String, MilpError> {
    let mut buf = Vec::new();
    write_lp(model, &mut buf)?;
    Ok(String::from_utf8(buf).expect("lp output is ascii"))
}

/// Parse a solution file (see module docs) into (objective, values-per-var).
pub fn parse_solution_file(model: &MilpModel, text: &str) -> Result<(f64, Vec<f64>), MilpError> {
    let index: HashMap<&str, usize> =
        model.vars.iter().enumerate().map(|(i, v)| (v.name.as_str(), i)).collect();
    let mut values = vec![0.0; model.vars.len()];
    let mut objective = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (name, value) = match (parts.next(), parts.next(), parts.next()) {
            (Some(n), Some(v), None) => (n, v),
            _ => {
                return Err(MilpError::Malformed(format!(
                    "solution line {}: expected '<name> <value>'",
                    lineno + 1
                )))
            }
        };
        let value: f64 = value.parse().map_err(|_| {
            MilpError::Malformed(format!("solution line {}: bad number '{value}'", lineno + 1))
        })?;
        if name == "objective" {
            objective = Some(value);
        } else if let Some(&i) = index.get(name) {
            values[i] = value;
        } else {
            return Err(MilpError::Malformed(format!(
                "solution line {}: unknown variable '{name}'",
                lineno + 1
            )));
        }
    }
    let objective =
        objective.ok_or_else(|| MilpError::Malformed("solution file has no objective line".into()))?;
    Ok((objective, values))
}

/// Export the model, run `solver_cmd <lp-path> <sol-path>` and parse its
/// solution file.
pub fn solve_external(
    model: &MilpModel,
    solver_cmd: &str,
    work_dir: &Path,
) -> Result<(f64, Vec<f64>), MilpError> {
    let lp_path = work_dir.join(format!("{}.lp", model.name));
    let sol_path = work_dir.join(format!("{}.sol", model.name));
    let mut file = std::fs::File::create(&lp_path)?;
    write_lp(model, &mut file)?;
    let status = Command::new(solver_cmd)
        .arg(&lp_path)
        .arg(&sol_path)
        .status()
        .map_err(|e| MilpError::ExternalSolver(format!("failed to launch '{solver_cmd}': {e}")))?;
    if !status.success() {
        return Err(MilpError::ExternalSolver(format!(
            "'{solver_cmd}' exited with status {status}"
        )));
    }
    let text = std::fs::read_to_string(&sol_path)?;
    parse_solution_file(model, &text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::milp::model::MilpModel;

    fn sample_model() -> MilpModel {
        let mut m = MilpModel::new("sample", Sense::Maximize);
        let x = m.add_var("x", VarType::Continuous, 0.0, 3.5);
        let b = m.add_var("b", VarType::Binary, 0.0, 1.0);
        let f = m.add_var("f", VarType::Continuous, f64::NEG_INFINITY, f64::INFINITY);
        m.set_objective_coeff(x, 1.0);
        m.set_objective_coeff(b, -0.25);
        m.add_constraint("c0", vec![(x, 2.0), (b, -1.0), (f, 1.0)], Relation::Le, 4.0);
        m.add_constraint("c1", vec![(f, 1.0)], Relation::Eq, 0.5);
        m
    }

    #[test]
    fn writer_is_deterministic() {
        let m = sample_model();
        assert_eq!(to_lp_string(&m).unwrap(), to_lp_string(&m).unwrap());
    }

    #[test]
    fn writer_structure() {
        let m = sample_model();
        let s = to_lp_string(&m).unwrap();
        assert!(s.starts_with("\\ sample\nMaximize\n"));
        assert!(s.contains("Subject To"));
        assert!(s.contains(" c0: + 2.0 x - 1.0 b + 1.0 f <= 4.0"));
        assert!(s.contains(" c1: + 1.0 f = 5.00000000000000000e-1"));
        assert!(s.contains(" f free"));
        assert!(s.contains("Binaries\n b\n"));
        assert!(s.trim_end().ends_with("End"));
    }

    #[test]
    fn seventeen_digit_round_trip() {
        let mut m = MilpModel::new("rt", Sense::Minimize);
        let x = m.add_var("x", VarType::Continuous, 0.0, 1.0);
        let c = 0.123456789012345678;
        m.set_objective_coeff(x, c);
        let s = to_lp_string(&m).unwrap();
        // extract the printed coefficient and parse it back
        let tok = s
            .lines()
            .find(|l| l.contains("obj"))
            .unwrap()
            .split_whitespace()
            .find(|t| t.contains('e'))
            .unwrap()
            .to_string();
        let parsed: f64 = tok.parse().unwrap();
        assert_eq!(parsed, c);
    }

    #[test]
    fn solution_parse_ok_and_errors() {
        let m = sample_model();
        let (obj, vals) =
            parse_solution_file(&m, "# c\nobjective 2.25\nx 2.0\nb 1\n").unwrap();
        assert_eq!(obj, 2.25);
        assert_eq!(vals, vec![2.0, 1.0, 0.0]);
        assert!(parse_solution_file(&m, "x 1.0").is_err()); // no objective
        assert!(parse_solution_file(&m, "objective 0\nzzz 1").is_err());
        assert!(parse_solution_file(&m, "objective 0\nx one").is_err());
    }
}
