//! Mixed-integer linear programming: model container, bounded-variable
//! two-phase simplex, branch and bound, and LP-file interchange.

pub mod branch_bound;
pub mod lp_format;
pub mod model;
pub mod simplex;

pub use branch_bound::solve;
pub use lp_format::{parse_solution_file, solve_external, to_lp_string, write_lp};
pub use model::{
    relative_gap, MilpConstraint, MilpModel, MilpVar, Sense, SolveOptions, SolveResult,
    SolveStatus, VarType,
};
