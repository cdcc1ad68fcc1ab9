//! Placement and scheduling of a CDFG onto the PE array.
//!
//! Every strategy maps groups of blocks onto PE pools with a modulo schedule.
//! Marionette uses agile assignment (innermost-outward folding and
//! replication); the baselines use a plain spatial layout. Predication first
//! if-converts the program.

mod bitstream;
mod ifconv;
mod layout;
mod place;
mod reshape;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::arch::{ArchConfig, Pe};
use crate::ir::*;
use crate::netctl::{self, PortMap, RouteRequest, CONTROL_FIFOS};

pub use bitstream::{
    emit_bitstream, load_bitstream, read_instruction_table, ArchEcho, BitstreamError,
    PeInstruction, SenderMode, SourceOperand, BITSTREAM_VERSION, MAGIC,
};
pub use ifconv::if_convert;
pub use layout::{AgileCandidate, AgileDecision, DYNAMIC_TRIP_ESTIMATE};
pub use place::RouteOrder;
pub use reshape::{
    enumerate_reshapes, pe_waste, reshape, reshape_onto, time_extend, unfold, Reshape, MAX_FOLD,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MapError {
    #[error("unmappable block {block}: {ops} ops exceed capacity {capacity}")]
    UnmappableBlock {
        block: BlockId,
        ops: usize,
        capacity: usize,
    },
    #[error("congested: no conflict-free placement for {block}/{node}")]
    Congested { block: BlockId, node: NodeId },
    #[error("fold infeasible: {0}")]
    FoldInfeasible(String),
    #[error(transparent)]
    Loops(#[from] LoopError),
    #[error("invalid mapping: {0}")]
    Invalid(String),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Strategy {
    Marionette,
    Predication,
    SwitchConfig,
    Dataflow,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Marionette,
        Strategy::Predication,
        Strategy::SwitchConfig,
        Strategy::Dataflow,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Strategy::ALL.get(c as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Marionette => "marionette",
            Strategy::Predication => "predication",
            Strategy::SwitchConfig => "switch-config",
            Strategy::Dataflow => "dataflow",
        }
    }

    /// Branch arms share one PE lane and switch configuration in time.
    pub fn overlays_arms(self) -> bool {
        matches!(self, Strategy::Marionette | Strategy::SwitchConfig)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Strategy::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| format!("unknown strategy `{s}`"))
    }
}

/// Schedule of one block. `placements[0]` is the primary copy; further
/// entries are replicas used round-robin by successive loop entries.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockMapping {
    pub block: BlockId,
    /// Blocks of one group share a pool and its modulo reservation table.
    pub group: u16,
    pub ii: u32,
    pub extension_factor: u32,
    /// Schedule time of each node relative to block start; slot = time mod ii.
    pub times: Vec<u32>,
    pub placements: Vec<Vec<Pe>>,
}

impl BlockMapping {
    /// PEs of the primary copy, sorted.
    pub fn pe_set(&self) -> Vec<Pe> {
        let s: BTreeSet<Pe> = self
            .placements
            .first()
            .into_iter()
            .flatten()
            .copied()
            .collect();
        s.into_iter().collect()
    }

    pub fn replication(&self) -> u32 {
        self.placements.len() as u32
    }

    pub fn slot(&self, node: NodeId) -> u32 {
        self.times[node.0] % self.ii
    }

    /// (PE, slot) -> node for the primary copy.
    pub fn slot_table(&self) -> BTreeMap<(Pe, u32), NodeId> {
        let mut t = BTreeMap::new();
        if let Some(p) = self.placements.first() {
            for (i, pe) in p.iter().enumerate() {
                t.insert((*pe, self.times[i] % self.ii), NodeId(i));
            }
        }
        t
    }

    /// Initiation interval per iteration across all replicas.
    pub fn effective_ii(&self) -> f64 {
        self.ii as f64 / self.replication().max(1) as f64
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct LoopMapping {
    pub header: BlockId,
    /// Cycles between iteration starts issued by the loop operator.
    pub ii: u32,
    pub replication: u32,
}

/// A control-flow transfer and its route through the control network.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ControlEdge {
    pub from: BlockId,
    pub to: BlockId,
    pub cond: EdgeCond,
    /// Instruction address carried: the first address of `to`.
    pub address: u16,
    /// Network input port of the sender.
    pub input: u16,
    /// Network output ports of the receivers, sorted.
    pub outputs: Vec<u16>,
}

/// A control FIFO holding a data-dependent loop bound.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct FifoBinding {
    pub header: BlockId,
    pub fifo: u8,
    pub producer: BlockId,
    pub node: NodeId,
}

/// Data-network route of a node input produced on another PE.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct DataRoute {
    pub block: BlockId,
    pub node: NodeId,
    pub input: u8,
    pub order: RouteOrder,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mapping {
    pub strategy: Strategy,
    pub agile: bool,
    /// The program as mapped (if-converted under predication).
    pub program: Program,
    pub blocks: Vec<BlockMapping>,
    pub loops: Vec<LoopMapping>,
    pub control_edges: Vec<ControlEdge>,
    pub fifos: Vec<FifoBinding>,
    pub data_routes: Vec<DataRoute>,
}

impl Mapping {
    /// First instruction address of every block.
    pub fn block_bases(&self) -> Vec<u16> {
        let mut bases = Vec::with_capacity(self.program.blocks.len());
        let mut next = 0u16;
        for b in &self.program.blocks {
            bases.push(next);
            next += b.dfg.len() as u16;
        }
        bases
    }

    pub fn address(&self, block: BlockId, node: NodeId) -> u16 {
        self.block_bases()[block.0] + node.0 as u16
    }

    pub fn loop_mapping(&self, header: BlockId) -> Option<&LoopMapping> {
        self.loops.iter().find(|l| l.header == header)
    }

    /// Distinct PEs holding at least one instruction.
    pub fn used_pes(&self) -> BTreeSet<Pe> {
        self.blocks
            .iter()
            .flat_map(|b| b.placements.iter().flatten().copied())
            .collect()
    }

    pub fn total_waste(&self) -> u32 {
        self.blocks.iter().map(pe_waste).sum()
    }

    /// One line per block: PEs, II, fold, replication and waste.
    pub fn summary(&self) -> String {
        let mut out = format!(
            "{} strategy={} agile={} PEs={} waste={}\n",
            self.program.name,
            self.strategy,
            self.agile,
            self.used_pes().len(),
            self.total_waste()
        );
        for b in &self.blocks {
            if b.times.is_empty() {
                continue;
            }
            out.push_str(&format!(
                "  {}: ops={} II={}, PEs={}, ext={}, replicas={}, waste={}\n",
                b.block,
                b.times.len(),
                b.ii,
                b.pe_set().len(),
                b.extension_factor,
                b.replication(),
                pe_waste(b)
            ));
        }
        out
    }
}

/// The two arms of a branch that are single blocks joining at the same block.
pub fn exclusive_arms(p: &Program) -> Vec<(BlockId, BlockId)> {
    let mut out = Vec::new();
    for b in &p.blocks {
        let (Some(t), Some(e)) = (
            b.successor(EdgeCond::Taken),
            b.successor(EdgeCond::NotTaken),
        ) else {
            continue;
        };
        let single = |x: BlockId| {
            let blk = p.block(x);
            !blk.loop_header
                && p.predecessors(x).len() == 1
                && blk.successors.len() == 1
                && blk.successors[0].1 == EdgeCond::Always
        };
        if t != e
            && single(t)
            && single(e)
            && p.block(t).successors[0].0 == p.block(e).successors[0].0
        {
            out.push((t, e));
        }
    }
    out
}

/// Node whose PE sends the control of `block`.
pub fn sender_node(block: &BasicBlock) -> Option<NodeId> {
    block
        .branch_node()
        .or_else(|| block.loop_gen_node())
        .or_else(|| block.dfg.first())
        .map(|n| n.id)
}

type GroupResult = (Vec<BlockMapping>, Vec<DataRoute>);

fn place_group(
    p: &Program,
    arch: &ArchConfig,
    g: &layout::GroupPlan,
    gid: u16,
    ii: u32,
    arms: &[(BlockId, BlockId)],
) -> Result<GroupResult, MapError> {
    let mut out: Vec<BlockMapping> = g
        .blocks
        .iter()
        .map(|&b| BlockMapping {
            block: b,
            group: gid,
            ii,
            extension_factor: ii,
            times: Vec::new(),
            placements: Vec::new(),
        })
        .collect();
    let mut routes = Vec::new();
    // Replicas copy the primary's schedule, PE for PE.
    if let Some(primary) = g.pools.first() {
        for pool in &g.pools[1..] {
            if pool.len() != primary.len() {
                return Err(MapError::Invalid("replica pools differ in size".into()));
            }
        }
    }
    for (r, pool) in g.pools.iter().enumerate().take(1) {
        let mut mrt = place::Mrt::new(ii);
        // Snapshot taken before the first arm, keyed by the second arm.
        let mut before_arm: BTreeMap<BlockId, place::Mrt> = BTreeMap::new();
        for (k, &b) in g.blocks.iter().enumerate() {
            let pair = arms.iter().find(|(t, e)| {
                (*t == b || *e == b) && g.blocks.contains(t) && g.blocks.contains(e)
            });
            let second = before_arm.remove(&b);
            let is_second = second.is_some();
            let mut local = match second {
                Some(snapshot) => snapshot,
                None => {
                    if let Some((t, e)) = pair {
                        before_arm.insert(if *t == b { *e } else { *t }, mrt.clone());
                    }
                    mrt.clone()
                }
            };
            let (times, pes, placed) = place::place_block(p.block(b), arch, pool, &mut local)?;
            if is_second {
                mrt.used.extend(local.used);
            } else {
                mrt = local;
            }
            if r == 0 {
                out[k].times = times;
                routes.extend(placed.into_iter().map(|(node, input, order)| DataRoute {
                    block: b,
                    node: NodeId(node),
                    input: input as u8,
                    order,
                }));
            }
            out[k].placements.push(pes);
        }
    }
    for pool in g.pools.iter().skip(1) {
        for bm in &mut out {
            let replica = bm.placements[0]
                .iter()
                .map(|pe| pool[g.pools[0].iter().position(|q| q == pe).unwrap()])
                .collect();
            bm.placements.push(replica);
        }
    }
    Ok((out, routes))
}

/// Places every group; a congested group is retried at a larger II.
fn place_groups(
    p: &Program,
    arch: &ArchConfig,
    groups: &[layout::GroupPlan],
    overlay: bool,
) -> Result<(Vec<BlockMapping>, Vec<DataRoute>), MapError> {
    let arms = if overlay {
        exclusive_arms(p)
    } else {
        Vec::new()
    };
    let mut blocks: Vec<Option<BlockMapping>> = vec![None; p.blocks.len()];
    let mut routes = Vec::new();
    for (gid, g) in groups.iter().enumerate() {
        let mut ii = g.ii;
        let (placed, r) = loop {
            match place_group(p, arch, g, gid as u16, ii, &arms) {
                Err(MapError::Congested { .. }) if ii < g.ii + MAX_FOLD => ii += 1,
                res => break res?,
            }
        };
        for bm in placed {
            let b = bm.block.0;
            blocks[b] = Some(bm);
        }
        routes.extend(r);
    }
    let blocks = blocks
        .into_iter()
        .enumerate()
        .map(|(i, b)| {
            b.unwrap_or(BlockMapping {
                block: BlockId(i),
                group: u16::MAX,
                ii: 1,
                extension_factor: 1,
                times: Vec::new(),
                placements: vec![Vec::new()],
            })
        })
        .collect();
    Ok((blocks, routes))
}

fn build_control(
    p: &Program,
    arch: &ArchConfig,
    blocks: &[BlockMapping],
    bases: &[u16],
) -> (Vec<ControlEdge>, Vec<FifoBinding>) {
    let ports = PortMap::for_arch(arch);
    let mut fifos = Vec::new();
    for b in &p.blocks {
        if let Some(LoopBound::Dynamic { block, node }) = b.loop_bound {
            fifos.push(FifoBinding {
                header: b.id,
                fifo: (fifos.len() % CONTROL_FIFOS) as u8,
                producer: block,
                node,
            });
        }
    }
    let mut edges = Vec::new();
    for b in &p.blocks {
        let input = match sender_node(b) {
            Some(n) => ports.pe(blocks[b.id.0].placements[0][n.0].0 as usize),
            None => ports.controller(),
        } as u16;
        for &(to, cond) in &b.successors {
            let mut outs: BTreeSet<u16> = blocks[to.0]
                .placements
                .iter()
                .flatten()
                .map(|pe| ports.pe(pe.0 as usize) as u16)
                .collect();
            if let Some(f) = fifos.iter().find(|f| f.header == to && f.producer == b.id) {
                outs.insert(ports.fifo(f.fifo as usize) as u16);
            }
            if outs.is_empty() {
                outs.insert(ports.controller() as u16);
            }
            edges.push(ControlEdge {
                from: b.id,
                to,
                cond,
                address: bases[to.0],
                input,
                outputs: outs.into_iter().collect(),
            });
        }
    }
    (edges, fifos)
}

fn assemble(
    strategy: Strategy,
    agile: bool,
    program: Program,
    arch: &ArchConfig,
    groups: &[layout::GroupPlan],
    info: &LoopInfo,
) -> Result<Mapping, MapError> {
    let (blocks, data_routes) = place_groups(&program, arch, groups, strategy.overlays_arms())?;
    let loops = info
        .loops
        .iter()
        .map(|l| LoopMapping {
            header: l.header,
            ii: l
                .own_blocks
                .iter()
                .map(|b| blocks[b.0].ii)
                .max()
                .unwrap_or(1),
            replication: blocks[l.header.0].replication(),
        })
        .collect();
    let mut m = Mapping {
        strategy,
        agile,
        program,
        blocks,
        loops,
        control_edges: Vec::new(),
        fifos: Vec::new(),
        data_routes,
    };
    let bases = m.block_bases();
    let (edges, fifos) = build_control(&m.program, arch, &m.blocks, &bases);
    m.control_edges = edges;
    m.fifos = fifos;
    Ok(m)
}

fn check_program(program: &Program, arch: &ArchConfig) -> Result<LoopInfo, MapError> {
    arch.validate()
        .map_err(|e| MapError::Invalid(e.to_string()))?;
    let report = validate(program);
    if !report.is_empty() {
        return Err(MapError::Invalid(report.to_string()));
    }
    Ok(analyze_loops(program)?)
}

/// Agile PE assignment; also returns every level's candidate set.
pub fn map_marionette_with_log(
    program: &Program,
    arch: &ArchConfig,
) -> Result<(Mapping, Vec<AgileDecision>), MapError> {
    let info = check_program(program, arch)?;
    let (groups, log) = layout::agile_layout(program, &info, arch)?;
    let m = assemble(
        Strategy::Marionette,
        true,
        program.clone(),
        arch,
        &groups,
        &info,
    )?;
    Ok((m, log))
}

pub fn map_marionette(program: &Program, arch: &ArchConfig) -> Result<Mapping, MapError> {
    map_marionette_with_log(program, arch).map(|(m, _)| m)
}

/// Marionette control plane without agile assignment: plain spatial layout.
pub fn map_marionette_plain(program: &Program, arch: &ArchConfig) -> Result<Mapping, MapError> {
    let info = check_program(program, arch)?;
    let groups = layout::plain_layout(program, &info, arch)?;
    assemble(
        Strategy::Marionette,
        false,
        program.clone(),
        arch,
        &groups,
        &info,
    )
}

/// Baseline mapping: predication if-converts, switch-config shares arm lanes,
/// dataflow maps one tag-triggered instruction per op.
pub fn map_baseline(
    program: &Program,
    arch: &ArchConfig,
    strategy: Strategy,
) -> Result<Mapping, MapError> {
    check_program(program, arch)?;
    let program = match strategy {
        Strategy::Predication => if_convert(program),
        _ => program.clone(),
    };
    let info = check_program(&program, arch)?;
    let groups = layout::plain_layout(&program, &info, arch)?;
    assemble(strategy, false, program, arch, &groups, &info)
}

/// Maps with any strategy; `agile` only affects Marionette.
pub fn map_program(
    program: &Program,
    arch: &ArchConfig,
    strategy: Strategy,
    agile: bool,
) -> Result<Mapping, MapError> {
    match (strategy, agile) {
        (Strategy::Marionette, true) => map_marionette(program, arch),
        (Strategy::Marionette, false) => map_marionette_plain(program, arch),
        _ => map_baseline(program, arch, strategy),
    }
}

/// Machine-checks the mapping invariants. Returns one message per violation.
pub fn check_mapping(m: &Mapping, arch: &ArchConfig) -> Vec<String> {
    let mut errs = Vec::new();
    let p = &m.program;
    let n_pe = arch.pe_count() as u16;
    if m.blocks.len() != p.blocks.len() {
        errs.push(format!(
            "{} block mappings for {} blocks",
            m.blocks.len(),
            p.blocks.len()
        ));
        return errs;
    }
    let arms = exclusive_arms(p);
    let exclusive = |a: BlockId, b: BlockId| {
        arms.iter()
            .any(|&(t, e)| (t, e) == (a, b) || (e, t) == (a, b))
    };
    let mut slots: BTreeMap<(u16, usize, Pe, u32), BlockId> = BTreeMap::new();
    for (bm, blk) in m.blocks.iter().zip(&p.blocks) {
        if bm.block != blk.id {
            errs.push(format!("mapping for {} stored at {}", bm.block, blk.id));
        }
        if bm.ii == 0 || bm.extension_factor == 0 {
            errs.push(format!("{}: II and extension must be at least 1", blk.id));
            continue;
        }
        if bm.times.len() != blk.dfg.len() || bm.placements.is_empty() {
            errs.push(format!(
                "{}: {} scheduled of {} nodes",
                blk.id,
                bm.times.len(),
                blk.dfg.len()
            ));
            continue;
        }
        for (r, pl) in bm.placements.iter().enumerate() {
            if pl.len() != blk.dfg.len() {
                errs.push(format!(
                    "{} replica {r}: {} placed of {} nodes",
                    blk.id,
                    pl.len(),
                    blk.dfg.len()
                ));
                continue;
            }
            for (i, pe) in pl.iter().enumerate() {
                if pe.0 >= n_pe {
                    errs.push(format!("{}/n{i}: {pe} outside the array", blk.id));
                }
                let key = (bm.group, r, *pe, bm.times[i] % bm.ii);
                if let Some(&other) = slots.get(&key) {
                    if other == blk.id || !exclusive(other, blk.id) {
                        errs.push(format!(
                            "{}/n{i}: slot {} of {pe} already holds {other}",
                            blk.id, key.3
                        ));
                    }
                } else {
                    slots.insert(key, blk.id);
                }
            }
        }
        for (i, node) in blk.dfg.iter().enumerate() {
            for r in &node.inputs {
                if let ValueRef::Node(q) = r {
                    let need = bm.times[q.0] + arch.latency(blk.dfg[q.0].opcode);
                    if bm.times[i] < need {
                        errs.push(format!(
                            "{}/n{i}: scheduled before its input n{} completes",
                            blk.id, q.0
                        ));
                    }
                }
            }
        }
    }
    for b in &p.blocks {
        for &(to, cond) in &b.successors {
            if !m
                .control_edges
                .iter()
                .any(|e| e.from == b.id && e.to == to && e.cond == cond)
            {
                errs.push(format!(
                    "no control edge {} -> {to} ({})",
                    b.id,
                    cond.keyword()
                ));
            }
        }
    }
    if let Ok(net) = netctl::build(PortMap::for_arch(arch).port_count) {
        for e in &m.control_edges {
            let mut req = RouteRequest::new();
            req.add(e.input as usize, e.outputs.iter().map(|&o| o as usize));
            if let Err(err) = netctl::route(&net, &req) {
                errs.push(format!("control edge {} -> {}: {err}", e.from, e.to));
            }
        }
    }
    errs
}
