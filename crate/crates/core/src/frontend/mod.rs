//! Kernel DSL front end and reference interpreter.
//!
//! Grammar of a `.mk` file:
//!
//! ```text
//! kernel NAME {
//!     array A[LEN];                       // declarations first
//!     x = EXPR;                           // scalar variables are implicit, start at 0
//!     A[EXPR] = EXPR;
//!     if (EXPR) { ... } else { ... }      // else part optional
//!     loop i in LO..HI { ... }            // i = LO, LO+1, ... while i < HI
//!     loop i in LO.. bound-from N { ... } // trip count N, i.e. HI = LO + N
//! }
//! ```
//!
//! Expressions use 32-bit wraparound integers with C precedence over
//! `| ^ & == != < <= > >= << >> + - *`, unary `-`, `A[i]` loads and the
//! functions `min`, `max` and `select(c, a, b)`. `>>` is a logical shift.
//! `/` and `%` are rejected.

pub mod ast;
mod interp;
mod lower;
mod memimage;
mod parse;
mod print;

use thiserror::Error;

use crate::ir::{validate, BlockId, NodeId, Program};

pub use interp::{
    interpret, interpret_with_budget, next_block, Execution, LoopState, DEFAULT_STEP_BUDGET,
};
pub use lower::lower;
pub use memimage::MemoryImage;
pub use parse::parse_ast;
pub use print::{dump_program, print_kernel};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FrontendError {
    #[error("{line}:{col}: syntax error: {msg}")]
    Syntax {
        line: usize,
        col: usize,
        msg: String,
    },
    #[error("{line}:{col}: non-affine construct {what} is not supported")]
    NonAffine {
        line: usize,
        col: usize,
        what: String,
    },
    #[error("undeclared array `{name}`")]
    UndeclaredArray { name: String },
    #[error("array `{name}` declared twice")]
    DuplicateArray { name: String },
    #[error("loop variable `{name}` cannot be assigned inside its loop")]
    LoopVarAssigned { name: String },
    #[error("memory image: {0}")]
    Memory(String),
    #[error("lowered program is invalid:\n{0}")]
    Invalid(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum InterpError {
    #[error("out-of-bounds access to `{array}` at index {index} ({block}/{node})")]
    OutOfBounds {
        block: BlockId,
        node: NodeId,
        array: String,
        index: i32,
    },
    #[error("step budget exceeded ({budget} steps)")]
    StepBudget { budget: u64 },
    #[error("{0}")]
    Memory(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KernelSource {
    pub text: String,
    pub path: String,
}

impl KernelSource {
    pub fn new(path: impl Into<String>, text: impl Into<String>) -> Self {
        KernelSource {
            text: text.into(),
            path: path.into(),
        }
    }
}

/// Parses and lowers kernel source into a validated CDFG.
pub fn parse_kernel(src: &KernelSource) -> Result<Program, FrontendError> {
    let ast = parse_ast(&src.text)?;
    let program = lower(&ast)?;
    let report = validate(&program);
    if !report.is_empty() {
        return Err(FrontendError::Invalid(report.to_string()));
    }
    Ok(program)
}

/// Convenience for inline sources.
pub fn parse_str(text: &str) -> Result<Program, FrontendError> {
    parse_kernel(&KernelSource::new("<inline>", text))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{classify_control, ControlForm, LoopBound, Opcode};

    #[test]
    fn minimal_loop_shape() {
        let p = parse_str("kernel v { array A[8]; array B[8]; array C[8]; loop i in 0..8 { C[i] = A[i] + B[i]; } }")
            .unwrap();
        let headers: Vec<_> = p.blocks.iter().filter(|b| b.loop_header).collect();
        assert_eq!(headers.len(), 1);
        assert_eq!(headers[0].loop_bound, Some(LoopBound::Const(8)));
        let body = p.block(headers[0].successors[0].0);
        let ops: Vec<Opcode> = body.dfg.iter().map(|n| n.opcode).collect();
        assert_eq!(
            ops,
            vec![Opcode::Load, Opcode::Load, Opcode::Add, Opcode::Store]
        );
    }

    #[test]
    fn vecadd_interprets() {
        let p = parse_str("kernel v { array A[4]; array B[4]; array C[4]; loop i in 0..4 { C[i] = A[i] + B[i]; } }")
            .unwrap();
        let mut m = MemoryImage::zeroed(&p);
        m.set("A", vec![1, 2, 3, 4]);
        m.set("B", vec![4, 3, 2, 1]);
        let e = interpret(&p, &m).unwrap();
        assert_eq!(e.memory.get("C").unwrap(), &[5, 5, 5, 5]);
        assert_eq!(e.block_counts[2], 4);
    }

    #[test]
    fn branch_classified() {
        let p = parse_str("kernel m { array a[2]; x = a[0]; y = a[1]; if (x < y) { a[0] = y; } else { a[1] = x; } }")
            .unwrap();
        assert!(classify_control(&p)
            .unwrap()
            .contains(&ControlForm::BranchDivergence));
    }

    #[test]
    fn out_of_bounds_and_budget() {
        let p = parse_str("kernel o { array A[2]; loop i in 0..3 { A[i] = 1; } }").unwrap();
        let e = interpret(&p, &MemoryImage::zeroed(&p)).unwrap_err();
        assert!(
            matches!(e, InterpError::OutOfBounds { index: 2, .. }),
            "{e}"
        );
        let p = parse_str("kernel s { loop i in 0..1000 { x = x + 1; } }").unwrap();
        let e = interpret_with_budget(&p, &MemoryImage::zeroed(&p), 100).unwrap_err();
        assert_eq!(e.to_string(), "step budget exceeded (100 steps)");
    }

    #[test]
    fn errors() {
        assert!(matches!(
            parse_str("kernel e { Z[0] = 1; }"),
            Err(FrontendError::UndeclaredArray { .. })
        ));
        assert!(matches!(
            parse_str("kernel e { loop i in 0..2 { i = 1; } }"),
            Err(FrontendError::LoopVarAssigned { .. })
        ));
    }
}
