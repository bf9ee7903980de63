//! Compilation of learned-model planning problems to MILPs: bound
//! preprocessing, the base big-M encoding, and the strengthened encoding.

pub mod bounds;
pub mod encode;

pub use bounds::{preprocess_bounds, Bounds, Interval, PreprocessBudget, Provenance};
pub use encode::{
    compile_base, compile_strengthened, extract_plan, pin_actions, rollout, EncodingVars,
};
