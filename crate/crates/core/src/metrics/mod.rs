//! Utilization metrics, speedup tables and CSV output.
//!
//! All metrics are pure functions of a simulation output and the mapping it
//! ran. Configure and stall cycles count as non-compute.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use crate::arch::Pe;
use crate::ir::{analyze_loops, BlockId};
use crate::mapper::Mapping;
use crate::sim::{Activity, Model, SimOutput, SimTrace};

pub const CSV_HEADER: &str =
    "kernel,model,strategy,cycles,pe_util,outer_bb_util,pipe_util,ii_min,ii_max";

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub kernel: String,
    pub model: Model,
    /// Strategy name, with ablation suffixes such as `+no-agile`.
    pub strategy: String,
    pub cycles: u64,
    pub pe_utilization: f64,
    /// `None` when the kernel has no outer-loop blocks.
    pub outer_bb_utilization: Option<f64>,
    /// `None` when no block is pipelined.
    pub pipeline_utilization: Option<f64>,
    /// Mapped II of every block with operations.
    pub block_ii: Vec<(BlockId, u32)>,
}

impl MetricsRow {
    pub fn from_run(
        kernel: &str,
        model: Model,
        strategy: &str,
        m: &Mapping,
        out: &SimOutput,
    ) -> Self {
        let trace = out.trace();
        let block_ii = m
            .blocks
            .iter()
            .filter(|b| !b.times.is_empty())
            .map(|b| (b.block, b.ii))
            .collect();
        MetricsRow {
            kernel: kernel.to_string(),
            model,
            strategy: strategy.to_string(),
            cycles: out.stats.cycles,
            pe_utilization: pe_utilization(&trace, m),
            outer_bb_utilization: outer_bb_utilization(&trace, m),
            pipeline_utilization: pipeline_utilization(out, m),
            block_ii,
        }
    }

    /// `model/strategy`, the key used by [`speedup_table`].
    pub fn config(&self) -> String {
        format!("{}/{}", self.model, self.strategy)
    }

    pub fn ii_min(&self) -> u32 {
        self.block_ii.iter().map(|&(_, ii)| ii).min().unwrap_or(0)
    }

    pub fn ii_max(&self) -> u32 {
        self.block_ii.iter().map(|&(_, ii)| ii).max().unwrap_or(0)
    }
}

/// Every PE holding at least one instruction.
pub fn mapped_pes(m: &Mapping) -> BTreeSet<Pe> {
    m.blocks
        .iter()
        .flat_map(|b| b.placements.iter().flatten().copied())
        .collect()
}

fn compute_cycles(trace: &SimTrace, pes: impl IntoIterator<Item = Pe>) -> u64 {
    pes.into_iter()
        .filter(|p| (p.0 as usize) < trace.pe_count())
        .map(|p| trace.counts(p.0 as usize).compute)
        .sum()
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Compute cycles over (mapped PEs × total cycles).
pub fn pe_utilization(trace: &SimTrace, m: &Mapping) -> f64 {
    let pes = mapped_pes(m);
    ratio(
        compute_cycles(trace, pes.iter().copied()),
        pes.len() as u64 * trace.cycles,
    )
}

/// Blocks inside a loop that itself contains loops.
pub fn outer_blocks(m: &Mapping) -> Vec<BlockId> {
    let Ok(info) = analyze_loops(&m.program) else {
        return Vec::new();
    };
    (0..m.program.blocks.len())
        .filter(|&b| info.block_loop[b].is_some_and(|l| !info.is_innermost(l)))
        .filter(|&b| !m.program.blocks[b].dfg.is_empty())
        .map(BlockId)
        .collect()
}

/// Home block of each PE: the block owning its lowest instruction address.
pub fn home_blocks(m: &Mapping) -> BTreeMap<Pe, BlockId> {
    let mut home = BTreeMap::new();
    // Blocks are laid out in address order, so the first claim wins.
    for b in &m.blocks {
        for pe in b.placements.iter().flatten() {
            home.entry(*pe).or_insert(b.block);
        }
    }
    home
}

/// Utilization of the PEs whose home block is an outer-loop block.
pub fn outer_bb_utilization(trace: &SimTrace, m: &Mapping) -> Option<f64> {
    let outer: BTreeSet<BlockId> = outer_blocks(m).into_iter().collect();
    if outer.is_empty() {
        return None;
    }
    let pes: Vec<Pe> = home_blocks(m)
        .into_iter()
        .filter(|(_, b)| outer.contains(b))
        .map(|(p, _)| p)
        .collect();
    if pes.is_empty() {
        return None;
    }
    Some(ratio(
        compute_cycles(trace, pes.iter().copied()),
        pes.len() as u64 * trace.cycles,
    ))
}

/// Per pipelined block: `iterations × II / (replicas × active window)`,
/// clamped to 1 and averaged weighted by the block's PE count. A block is
/// pipelined when it sits in a loop and has operations; its active window
/// runs from its first to its last fire.
pub fn pipeline_utilization(out: &SimOutput, m: &Mapping) -> Option<f64> {
    let info = analyze_loops(&m.program).ok()?;
    let mut window: BTreeMap<usize, (u64, u64)> = BTreeMap::new();
    for o in &out.ops {
        let w = window.entry(o.block.0).or_insert((o.fire, o.fire));
        w.0 = w.0.min(o.fire);
        w.1 = w.1.max(o.fire);
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for b in &m.blocks {
        if b.times.is_empty() || info.block_loop[b.block.0].is_none() {
            continue;
        }
        let Some(&(lo, hi)) = window.get(&b.block.0) else {
            continue;
        };
        let iters = out.stats.iterations.get(b.block.0).copied().unwrap_or(0);
        let reps = b.replication().max(1) as u64;
        let u = ratio(iters * b.ii as u64, reps * (hi - lo + 1)).min(1.0);
        let w = (b.pe_set().len() as u64 * reps) as f64;
        num += u * w;
        den += w;
    }
    (den > 0.0).then(|| num / den)
}

/// `baseline / subject`.
pub fn speedup(baseline_cycles: u64, subject_cycles: u64) -> f64 {
    baseline_cycles as f64 / subject_cycles as f64
}

pub fn geomean(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    Some((xs.iter().map(|x| x.ln()).sum::<f64>() / xs.len() as f64).exp())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpeedupEntry {
    pub kernel: String,
    pub baseline_cycles: u64,
    pub subject_cycles: u64,
    pub speedup: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpeedupTable {
    pub baseline: String,
    pub subject: String,
    pub entries: Vec<SpeedupEntry>,
    pub geomean: Option<f64>,
    /// Kernels skipped for want of a pair.
    pub warnings: Vec<String>,
}

impl SpeedupTable {
    pub fn to_text(&self) -> String {
        let mut s = format!("# {} over {}\n", self.subject, self.baseline);
        for e in &self.entries {
            let _ = writeln!(
                s,
                "{:<12} {:>9} {:>9} {:.4}",
                e.kernel, e.baseline_cycles, e.subject_cycles, e.speedup
            );
        }
        match self.geomean {
            Some(g) => {
                let _ = writeln!(s, "geomean {g:.4}");
            }
            None => s.push_str("geomean n/a\n"),
        }
        s
    }
}

/// Speedup of `subject` over `baseline` (both [`MetricsRow::config`] keys)
/// per kernel, in first-appearance order.
pub fn speedup_table(rows: &[MetricsRow], baseline: &str, subject: &str) -> SpeedupTable {
    let mut kernels: Vec<&str> = Vec::new();
    for r in rows {
        if !kernels.contains(&r.kernel.as_str()) {
            kernels.push(&r.kernel);
        }
    }
    let find = |k: &str, c: &str| rows.iter().find(|r| r.kernel == k && r.config() == c);
    let mut entries = Vec::new();
    let mut warnings = Vec::new();
    for k in kernels {
        match (find(k, baseline), find(k, subject)) {
            (Some(b), Some(s)) if s.cycles > 0 => entries.push(SpeedupEntry {
                kernel: k.to_string(),
                baseline_cycles: b.cycles,
                subject_cycles: s.cycles,
                speedup: speedup(b.cycles, s.cycles),
            }),
            _ => warnings.push(format!("{k}: no {baseline} / {subject} pair, skipped")),
        }
    }
    let geomean = geomean(&entries.iter().map(|e| e.speedup).collect::<Vec<_>>());
    SpeedupTable {
        baseline: baseline.to_string(),
        subject: subject.to_string(),
        entries,
        geomean,
        warnings,
    }
}

fn fixed(x: Option<f64>) -> String {
    match x {
        Some(v) => format!("{v:.4}"),
        None => "n/a".to_string(),
    }
}

pub fn to_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.kernel,
            r.model,
            r.strategy,
            r.cycles,
            fixed(Some(r.pe_utilization)),
            fixed(r.outer_bb_utilization),
            fixed(r.pipeline_utilization),
            r.ii_min(),
            r.ii_max()
        );
    }
    s
}

pub fn write_csv(rows: &[MetricsRow], path: &Path) -> std::io::Result<()> {
    std::fs::write(path, to_csv(rows))
}

/// Fraction of cycles each activity class takes on the mapped PEs.
pub fn activity_breakdown(trace: &SimTrace, m: &Mapping) -> BTreeMap<Activity, f64> {
    let pes = mapped_pes(m);
    let total = pes.len() as u64 * trace.cycles;
    let mut k: BTreeMap<Activity, u64> = Activity::ALL.iter().map(|&a| (a, 0)).collect();
    for p in pes {
        if (p.0 as usize) < trace.pe_count() {
            let c = trace.counts(p.0 as usize);
            *k.get_mut(&Activity::Compute).unwrap() += c.compute;
            *k.get_mut(&Activity::Configure).unwrap() += c.configure;
            *k.get_mut(&Activity::StallData).unwrap() += c.stall_data;
            *k.get_mut(&Activity::StallControl).unwrap() += c.stall_control;
            *k.get_mut(&Activity::Idle).unwrap() += c.idle;
        }
    }
    k.into_iter().map(|(a, n)| (a, ratio(n, total))).collect()
}
