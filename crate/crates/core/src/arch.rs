//! Architecture parameters shared by the mapper and the simulator.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::ir::Opcode;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ArchError {
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: bad value `{value}` for `{key}`")]
    BadValue {
        line: usize,
        key: String,
        value: String,
    },
    #[error("invalid architecture: {0}")]
    Invalid(String),
}

/// A PE coordinate. PEs are numbered row-major.
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Pe(pub u16);

impl fmt::Display for Pe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PE{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArchConfig {
    pub rows: usize,
    pub cols: usize,
    /// Per-opcode latency overrides; opcodes not listed take one cycle.
    pub fu_latency: BTreeMap<Opcode, u32>,
    pub data_hop_latency: u32,
    pub control_net_latency: u32,
    pub ccu_roundtrip: u32,
    pub dataflow_config_overhead: u32,
    /// Length of the trigger's configuration phase.
    pub configure_cycles: u32,
    pub fifo_depth: usize,
    pub scratchpad: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            rows: 4,
            cols: 4,
            fu_latency: BTreeMap::from([(Opcode::Mul, 2)]),
            data_hop_latency: 1,
            control_net_latency: 1,
            ccu_roundtrip: 4,
            dataflow_config_overhead: 1,
            configure_cycles: 1,
            fifo_depth: 8,
            scratchpad: 16 * 1024,
        }
    }
}

/// Keys accepted by [`ArchConfig::set`], besides `fu_latency.<opcode>`.
pub const ARCH_KEYS: &[&str] = &[
    "rows",
    "cols",
    "data_hop_latency",
    "control_net_latency",
    "ccu_roundtrip",
    "dataflow_config_overhead",
    "configure_cycles",
    "fifo_depth",
    "scratchpad",
];

impl ArchConfig {
    pub fn pe_count(&self) -> usize {
        self.rows * self.cols
    }

    pub fn latency(&self, op: Opcode) -> u32 {
        self.fu_latency.get(&op).copied().unwrap_or(1)
    }

    pub fn coord(&self, pe: Pe) -> (usize, usize) {
        (pe.0 as usize / self.cols, pe.0 as usize % self.cols)
    }

    /// Manhattan hop count on the nearest-neighbour data grid.
    pub fn hops(&self, a: Pe, b: Pe) -> u32 {
        let (ra, ca) = self.coord(a);
        let (rb, cb) = self.coord(b);
        (ra.abs_diff(rb) + ca.abs_diff(cb)) as u32
    }

    pub fn hop_latency(&self, a: Pe, b: Pe) -> u32 {
        self.hops(a, b) * self.data_hop_latency
    }

    pub fn validate(&self) -> Result<(), ArchError> {
        if self.rows == 0 || self.cols == 0 {
            return Err(ArchError::Invalid("empty PE grid".into()));
        }
        if self.rows > 255 || self.cols > 255 {
            return Err(ArchError::Invalid("grid dimensions exceed 255".into()));
        }
        if self.fifo_depth == 0 {
            return Err(ArchError::Invalid("fifo_depth must be at least 1".into()));
        }
        Ok(())
    }

    /// Sets one parameter by name. Used by the config-file parser and sweeps.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ArchError> {
        let bad = || ArchError::BadValue {
            line: 0,
            key: key.to_string(),
            value: value.to_string(),
        };
        let num = || value.trim().parse::<u64>().map_err(|_| bad());
        if let Some(op) = key.strip_prefix("fu_latency.") {
            let op = Opcode::from_mnemonic(op).ok_or_else(|| ArchError::UnknownKey {
                line: 0,
                key: key.to_string(),
            })?;
            self.fu_latency.insert(op, num()? as u32);
            return Ok(());
        }
        match key {
            "rows" => self.rows = num()? as usize,
            "cols" => self.cols = num()? as usize,
            "data_hop_latency" => self.data_hop_latency = num()? as u32,
            "control_net_latency" => self.control_net_latency = num()? as u32,
            "ccu_roundtrip" => self.ccu_roundtrip = num()? as u32,
            "dataflow_config_overhead" => self.dataflow_config_overhead = num()? as u32,
            "configure_cycles" => self.configure_cycles = num()? as u32,
            "fifo_depth" => self.fifo_depth = num()? as usize,
            "scratchpad" => self.scratchpad = num()? as usize,
            _ => {
                return Err(ArchError::UnknownKey {
                    line: 0,
                    key: key.to_string(),
                })
            }
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults. `#` and `;` start comments.
    pub fn parse(text: &str) -> Result<Self, ArchError> {
        let mut arch = ArchConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split(['#', ';']).next().unwrap_or("").trim();
            if content.is_empty() || (content.starts_with('[') && content.ends_with(']')) {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or(ArchError::Syntax { line })?;
            arch.set(key.trim(), value.trim()).map_err(|e| match e {
                ArchError::UnknownKey { key, .. } => ArchError::UnknownKey { line, key },
                ArchError::BadValue { key, value, .. } => ArchError::BadValue { line, key, value },
                other => other,
            })?;
        }
        arch.validate()?;
        Ok(arch)
    }

    pub fn to_ini(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("rows = {}\ncols = {}\n", self.rows, self.cols));
        for (op, lat) in &self.fu_latency {
            out.push_str(&format!("fu_latency.{} = {}\n", op.mnemonic(), lat));
        }
        out.push_str(&format!(
            "data_hop_latency = {}\ncontrol_net_latency = {}\nccu_roundtrip = {}\n\
             dataflow_config_overhead = {}\nconfigure_cycles = {}\nfifo_depth = {}\nscratchpad = {}\n",
            self.data_hop_latency,
            self.control_net_latency,
            self.ccu_roundtrip,
            self.dataflow_config_overhead,
            self.configure_cycles,
            self.fifo_depth,
            self.scratchpad
        ));
        out
    }
}
