//! Control/data flow graph IR: a CFG of basic blocks, each owning an acyclic DFG.

mod loops;
mod types;
mod validate;

pub use loops::{
    analyze_loops, classify_control, dominators, ControlForm, Loop, LoopError, LoopInfo,
};
pub use types::*;
pub use validate::{validate, ValidationReport, Violation};
