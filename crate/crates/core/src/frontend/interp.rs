//! Sequential reference interpreter over a CDFG.

use super::{InterpError, MemoryImage};
use crate::ir::*;

pub const DEFAULT_STEP_BUDGET: u64 = 100_000_000;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Execution {
    pub memory: MemoryImage,
    /// Dynamic executions of each block, indexed by block id.
    pub block_counts: Vec<u64>,
    /// Dynamic branch executions.
    pub divergences: u64,
    pub steps: u64,
    pub vars: Vec<i32>,
}

/// Per-header loop counter state shared by the interpreter and the simulator.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq)]
pub struct LoopState {
    pub counter: i32,
    pub bound: i32,
}

impl LoopState {
    /// Fires a loop-gen: entry loads `lo`/`hi`, a back edge increments.
    /// Returns the induction value and whether the body runs.
    pub fn fire(&mut self, via_back_edge: bool, lo: i32, hi: i32) -> (i32, bool) {
        if via_back_edge {
            self.counter = self.counter.wrapping_add(1);
        } else {
            self.counter = lo;
            self.bound = hi;
        }
        (self.counter, self.counter < self.bound)
    }
}

/// Picks the successor of a block given its resolved control outcome.
pub fn next_block(block: &BasicBlock, outcome: Option<bool>) -> Option<(BlockId, EdgeCond)> {
    let want = if block.loop_header {
        if outcome == Some(true) {
            EdgeCond::Always
        } else {
            EdgeCond::LoopExit
        }
    } else if block.has_divergence() {
        if outcome == Some(true) {
            EdgeCond::Taken
        } else {
            EdgeCond::NotTaken
        }
    } else {
        return block
            .successors
            .iter()
            .find(|(_, c)| matches!(c, EdgeCond::Always | EdgeCond::LoopBack))
            .copied();
    };
    block.successor(want).map(|b| (b, want))
}

pub fn interpret(program: &Program, mem: &MemoryImage) -> Result<Execution, InterpError> {
    interpret_with_budget(program, mem, DEFAULT_STEP_BUDGET)
}

pub fn interpret_with_budget(
    program: &Program,
    mem: &MemoryImage,
    budget: u64,
) -> Result<Execution, InterpError> {
    mem.check(program)
        .map_err(|e| InterpError::Memory(e.to_string()))?;
    let mut memory = mem.to_vecs(program);
    let mut vars = vec![0i32; program.vars.len()];
    let mut counts = vec![0u64; program.blocks.len()];
    let mut loops = vec![LoopState::default(); program.blocks.len()];
    let orders: Vec<Vec<usize>> = program
        .blocks
        .iter()
        .map(|b| Program::topo_order(b).expect("acyclic dfg"))
        .collect();
    let mut steps = 0u64;
    let mut divergences = 0u64;
    let mut vals: Vec<i32> = Vec::new();

    let mut cur = if program.blocks.is_empty() {
        None
    } else {
        Some((program.entry, EdgeCond::Always))
    };
    while let Some((bid, via)) = cur {
        let block = program.block(bid);
        counts[bid.0] += 1;
        steps += 1 + block.dfg.len() as u64;
        if steps > budget {
            return Err(InterpError::StepBudget { budget });
        }
        vals.clear();
        vals.resize(block.dfg.len(), 0);
        let mut outcome = None;
        for &i in &orders[bid.0] {
            let node = &block.dfg[i];
            let arg = |k: usize, vals: &[i32]| match node.inputs[k] {
                ValueRef::Node(n) => vals[n.0],
                ValueRef::LiveIn(v) => vars[v.0],
                ValueRef::Imm(x) => x,
            };
            let v = match node.opcode {
                Opcode::Load | Opcode::Store => {
                    let a = node.array.unwrap();
                    let idx = arg(0, &vals);
                    let data = &mut memory[a.0];
                    if idx < 0 || idx as usize >= data.len() {
                        return Err(InterpError::OutOfBounds {
                            block: bid,
                            node: node.id,
                            array: program.memories[a.0].name.clone(),
                            index: idx,
                        });
                    }
                    if node.opcode == Opcode::Load {
                        data[idx as usize]
                    } else {
                        let x = arg(1, &vals);
                        data[idx as usize] = x;
                        x
                    }
                }
                Opcode::LoopGen => {
                    let (lo, hi) = (arg(0, &vals), arg(1, &vals));
                    let (iv, go) = loops[bid.0].fire(via == EdgeCond::LoopBack, lo, hi);
                    outcome = Some(go);
                    iv
                }
                Opcode::Branch => {
                    divergences += 1;
                    let c = arg(0, &vals);
                    outcome = Some(c != 0);
                    c
                }
                op => {
                    let args: Vec<i32> = (0..node.inputs.len()).map(|k| arg(k, &vals)).collect();
                    op.eval(&args)
                }
            };
            vals[i] = v;
        }
        let updates: Vec<(usize, i32)> = block
            .live_outs
            .iter()
            .map(|(v, r)| {
                let x = match *r {
                    ValueRef::Node(n) => vals[n.0],
                    ValueRef::LiveIn(u) => vars[u.0],
                    ValueRef::Imm(x) => x,
                };
                (v.0, x)
            })
            .collect();
        for (v, x) in updates {
            vars[v] = x;
        }
        cur = next_block(block, outcome);
    }
    Ok(Execution {
        memory: MemoryImage::from_vecs(program, memory),
        block_counts: counts,
        divergences,
        steps,
        vars,
    })
}
