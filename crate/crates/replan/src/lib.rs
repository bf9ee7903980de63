//! Learn neural transition models of continuous planning domains and plan
//! over them, exactly via mixed-integer programming or approximately via
//! gradient descent through the unrolled horizon.

pub mod error;
pub mod compile;
pub mod domains;
pub mod gradplan;
pub mod harness;
pub mod milp;
pub mod nn;
pub mod planning;
