//! Cycle-level simulation of a configuration bitstream.
//!
//! Execution is functional in program order; each operation's fire cycle is
//! the earliest cycle that satisfies its data, variable, memory, control and
//! PE-occupancy constraints under the chosen execution model.

mod engine;
pub mod pe;
mod trace;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::arch::Pe;
use crate::frontend::MemoryImage;
use crate::ir::{BlockId, NodeId};
use crate::mapper::{BitstreamError, Strategy};

pub use engine::{simulate, simulate_mapping};
pub use trace::{Activity, ActivityCounts, SimTrace, TraceRow};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Model {
    Marionette,
    VonNeumann,
    Dataflow,
}

impl Model {
    pub const ALL: [Model; 3] = [Model::Marionette, Model::VonNeumann, Model::Dataflow];

    pub fn name(self) -> &'static str {
        match self {
            Model::Marionette => "marionette",
            Model::VonNeumann => "von-neumann",
            Model::Dataflow => "dataflow",
        }
    }

    /// Strategies this model can execute.
    pub fn strategies(self) -> &'static [Strategy] {
        match self {
            Model::Marionette => &[Strategy::Marionette],
            Model::VonNeumann => &[Strategy::Predication, Strategy::SwitchConfig],
            Model::Dataflow => &[Strategy::Dataflow],
        }
    }

    pub fn accepts(self, s: Strategy) -> bool {
        self.strategies().contains(&s)
    }

    pub fn default_strategy(self) -> Strategy {
        self.strategies()[0]
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Model {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "marionette" => Ok(Model::Marionette),
            "von-neumann" | "vn" => Ok(Model::VonNeumann),
            "dataflow" => Ok(Model::Dataflow),
            _ => Err(format!(
                "unknown model `{s}` (marionette, von-neumann, dataflow)"
            )),
        }
    }
}

/// Ablation switches. Defaults enable everything.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct SimOptions {
    /// Dfg-mode senders forward control on configuration, not on completion.
    pub proactive: bool,
    /// Control travels on the dedicated network instead of the data network.
    pub control_net: bool,
    /// Cycles without progress before reporting deadlock; default rows*cols*1024.
    pub deadlock_window: Option<u64>,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            proactive: true,
            control_net: true,
            deadlock_window: None,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error(transparent)]
    Bitstream(#[from] BitstreamError),
    #[error("the {model} model cannot run a {strategy} mapping")]
    Incompatible { model: Model, strategy: Strategy },
    #[error(
        "bitstream targets a {rows}x{cols} array but the architecture is {arch_rows}x{arch_cols}"
    )]
    ArchMismatch {
        rows: usize,
        cols: usize,
        arch_rows: usize,
        arch_cols: usize,
    },
    #[error("memory image: {0}")]
    Memory(String),
    #[error("out-of-bounds access {array}[{index}] at {block}/{node}")]
    OutOfBounds {
        block: BlockId,
        node: NodeId,
        array: String,
        index: i32,
    },
    #[error("step budget exceeded ({0} steps)")]
    StepBudget(u64),
    #[error("deadlock at cycle {cycle}: {blame}")]
    Deadlock { cycle: u64, blame: String },
    #[error("invalid mapping: {0}")]
    Invalid(String),
}

/// One executed operation.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct OpRecord {
    pub pe: Pe,
    pub fire: u64,
    pub latency: u32,
    /// Cycle the controlling address reached the PE.
    pub act: u64,
    /// Configuration interval `[start, end)` preceding the fire, if any.
    pub configure: Option<(u64, u64)>,
    pub address: u16,
    pub block: BlockId,
    pub replica: u8,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SimStats {
    pub cycles: u64,
    /// Compute cycles per PE.
    pub busy: Vec<u64>,
    /// Dynamic instances per block.
    pub iterations: Vec<u64>,
    pub fifo_high_water: usize,
    pub fifo_pushes: u64,
    pub fifo_pops: u64,
    /// CCU interventions: branch reconfigurations and bound deliveries.
    pub ccu_events: u64,
    /// Whole-array idle windows opened by the CCU.
    pub ccu_windows: u64,
    pub divergences: u64,
    pub ops: u64,
}

impl SimStats {
    /// `key=value` lines in a fixed order.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push('=');
            s.push_str(&v);
            s.push('\n');
        };
        kv("cycles", self.cycles.to_string());
        kv("ops", self.ops.to_string());
        kv("divergences", self.divergences.to_string());
        kv("ccu_events", self.ccu_events.to_string());
        kv("ccu_windows", self.ccu_windows.to_string());
        kv("fifo_high_water", self.fifo_high_water.to_string());
        kv("fifo_pushes", self.fifo_pushes.to_string());
        kv("fifo_pops", self.fifo_pops.to_string());
        for (i, b) in self.busy.iter().enumerate() {
            kv(&format!("busy.pe{i}"), b.to_string());
        }
        for (i, n) in self.iterations.iter().enumerate() {
            kv(&format!("iterations.B{i}"), n.to_string());
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SimOutput {
    pub memory: MemoryImage,
    pub stats: SimStats,
    pub ops: Vec<OpRecord>,
    /// Whole-array idle windows `[start, end)`.
    pub ccu_windows: Vec<(u64, u64)>,
    pub pe_count: usize,
}

impl SimOutput {
    pub fn trace(&self) -> SimTrace {
        SimTrace::build(self)
    }
}
