//! If-conversion for the predication baseline.
//!
//! A diamond `H -> {T, E} -> J` whose arms are single branch-free blocks is
//! merged into one block: both arms compute, variables merge through `select`,
//! arm loads read a guarded address and arm stores become guarded
//! read-modify-writes. Stores to the same address in both arms merge into one
//! store of a selected value. Branches that do not fit the pattern stay.

use std::collections::{BTreeMap, HashMap};

use crate::ir::*;

struct Diamond {
    head: BlockId,
    taken: BlockId,
    not_taken: BlockId,
    join: BlockId,
}

fn simple_arm(p: &Program, arm: BlockId, head: BlockId) -> Option<BlockId> {
    let b = p.block(arm);
    if b.loop_header
        || b.has_divergence()
        || b.successors.len() != 1
        || b.successors[0].1 != EdgeCond::Always
    {
        return None;
    }
    if b.dfg
        .iter()
        .any(|n| matches!(n.opcode, Opcode::Branch | Opcode::LoopGen))
    {
        return None;
    }
    let preds = p.predecessors(arm);
    (preds.len() == 1 && preds[0].0 == head).then_some(b.successors[0].0)
}

fn find_diamond(p: &Program) -> Option<Diamond> {
    for b in &p.blocks {
        if b.loop_header || !b.has_divergence() || b.branch_node().is_none() {
            continue;
        }
        let (Some(t), Some(e)) = (
            b.successor(EdgeCond::Taken),
            b.successor(EdgeCond::NotTaken),
        ) else {
            continue;
        };
        if t == e || b.successors.len() != 2 {
            continue;
        }
        let (Some(jt), Some(je)) = (simple_arm(p, t, b.id), simple_arm(p, e, b.id)) else {
            continue;
        };
        if jt != je || jt == b.id {
            continue;
        }
        let jb = p.block(jt);
        let mut preds: Vec<BlockId> = p.predecessors(jt).into_iter().map(|(x, _)| x).collect();
        preds.sort();
        let mut arms = vec![t, e];
        arms.sort();
        if jb.loop_header || preds != arms || jt == p.entry {
            continue;
        }
        return Some(Diamond {
            head: b.id,
            taken: t,
            not_taken: e,
            join: jt,
        });
    }
    None
}

struct Builder {
    dfg: Vec<DfgNode>,
}

impl Builder {
    fn push(&mut self, opcode: Opcode, array: Option<ArrayId>, inputs: Vec<ValueRef>) -> ValueRef {
        let id = self.dfg.len();
        self.dfg.push(DfgNode {
            id: NodeId(id),
            opcode,
            inputs,
            array,
        });
        ValueRef::Node(NodeId(id))
    }
}

type Env = BTreeMap<VarId, ValueRef>;

fn resolve(r: ValueRef, env: &Env, nodes: &[ValueRef]) -> ValueRef {
    match r {
        ValueRef::Node(n) => nodes[n.0],
        ValueRef::LiveIn(v) => env.get(&v).copied().unwrap_or(r),
        ValueRef::Imm(_) => r,
    }
}

/// Guard for an arm: the arm is live when `cond != 0` equals `on_taken`.
#[derive(Copy, Clone)]
struct Guard {
    cond: ValueRef,
    on_taken: bool,
}

impl Guard {
    /// `live` when the arm runs, `dead` otherwise.
    fn pick(self, b: &mut Builder, live: ValueRef, dead: ValueRef) -> ValueRef {
        if live == dead {
            return live;
        }
        if self.on_taken {
            b.push(Opcode::Select, None, vec![self.cond, live, dead])
        } else {
            b.push(Opcode::Select, None, vec![self.cond, dead, live])
        }
    }
}

/// A store that both arms perform to the same array and address.
struct SharedStore {
    array: ArrayId,
    taken_idx: usize,
    not_taken_idx: usize,
}

fn only_store(b: &BasicBlock) -> Option<(usize, ArrayId)> {
    let stores: Vec<usize> = (0..b.dfg.len())
        .filter(|&i| b.dfg[i].opcode == Opcode::Store)
        .collect();
    if stores.len() != 1 {
        return None;
    }
    let s = stores[0];
    let arr = b.dfg[s].array?;
    let later_load = b
        .dfg
        .iter()
        .any(|n| n.opcode == Opcode::Load && n.array == Some(arr) && n.id.0 > s);
    (!later_load).then_some((s, arr))
}

/// Copies an arm under a guard. Returns the arm's variable environment and,
/// when `skip` names a shared store, that store's (address, value).
fn copy_arm(
    b: &mut Builder,
    arm: &BasicBlock,
    env: &Env,
    guard: Guard,
    skip: Option<usize>,
    node_map: &mut HashMap<(BlockId, NodeId), ValueRef>,
) -> (Env, Option<(ValueRef, ValueRef)>) {
    let mut nodes = vec![ValueRef::Imm(0); arm.dfg.len()];
    let mut shared = None;
    for &i in &Program::topo_order(arm).expect("acyclic") {
        let n = &arm.dfg[i];
        let ins: Vec<ValueRef> = n.inputs.iter().map(|&r| resolve(r, env, &nodes)).collect();
        let v = match n.opcode {
            Opcode::Load => {
                let addr = guard.pick(b, ins[0], ValueRef::Imm(0));
                b.push(Opcode::Load, n.array, vec![addr])
            }
            Opcode::Store if skip == Some(i) => {
                shared = Some((ins[0], ins[1]));
                ins[1]
            }
            Opcode::Store => {
                let addr = guard.pick(b, ins[0], ValueRef::Imm(0));
                let old = b.push(Opcode::Load, n.array, vec![addr]);
                let val = guard.pick(b, ins[1], old);
                b.push(Opcode::Store, n.array, vec![addr, val])
            }
            op => b.push(op, n.array, ins),
        };
        nodes[i] = v;
        node_map.insert((arm.id, n.id), v);
    }
    let mut out = env.clone();
    for (var, r) in &arm.live_outs {
        out.insert(*var, resolve(*r, env, &nodes));
    }
    (out, shared)
}

fn copy_plain(
    b: &mut Builder,
    blk: &BasicBlock,
    env: &mut Env,
    skip_branch: bool,
    node_map: &mut HashMap<(BlockId, NodeId), ValueRef>,
) -> Option<ValueRef> {
    let mut nodes = vec![ValueRef::Imm(0); blk.dfg.len()];
    let mut cond = None;
    for &i in &Program::topo_order(blk).expect("acyclic") {
        let n = &blk.dfg[i];
        let ins: Vec<ValueRef> = n.inputs.iter().map(|&r| resolve(r, env, &nodes)).collect();
        let v = if skip_branch && n.opcode == Opcode::Branch {
            cond = Some(ins[0]);
            ins[0]
        } else {
            b.push(n.opcode, n.array, ins)
        };
        nodes[i] = v;
        node_map.insert((blk.id, n.id), v);
    }
    let updates: Vec<(VarId, ValueRef)> = blk
        .live_outs
        .iter()
        .map(|(v, r)| (*v, resolve(*r, env, &nodes)))
        .collect();
    env.extend(updates);
    cond
}

fn merge(p: &Program, d: &Diamond) -> Program {
    let mut node_map: HashMap<(BlockId, NodeId), ValueRef> = HashMap::new();
    let mut b = Builder { dfg: Vec::new() };
    let mut env = Env::new();
    let cond = copy_plain(&mut b, p.block(d.head), &mut env, true, &mut node_map).expect("branch");
    let (t, e) = (p.block(d.taken), p.block(d.not_taken));
    let shared = match (only_store(t), only_store(e)) {
        (Some((ti, ta)), Some((ei, ea))) if ta == ea => Some(SharedStore {
            array: ta,
            taken_idx: ti,
            not_taken_idx: ei,
        }),
        _ => None,
    };
    let gt = Guard {
        cond,
        on_taken: true,
    };
    let ge = Guard {
        cond,
        on_taken: false,
    };
    let (env_t, st) = copy_arm(
        &mut b,
        t,
        &env,
        gt,
        shared.as_ref().map(|s| s.taken_idx),
        &mut node_map,
    );
    let (env_e, se) = copy_arm(
        &mut b,
        e,
        &env,
        ge,
        shared.as_ref().map(|s| s.not_taken_idx),
        &mut node_map,
    );
    match (&shared, st, se) {
        (Some(s), Some((at, vt)), Some((ae, ve))) if at == ae => {
            let val = gt.pick(&mut b, vt, ve);
            b.push(Opcode::Store, Some(s.array), vec![at, val]);
        }
        (Some(s), Some((at, vt)), Some((ae, ve))) => {
            // Different addresses: fall back to two guarded read-modify-writes.
            for (g, a, v) in [(gt, at, vt), (ge, ae, ve)] {
                let addr = g.pick(&mut b, a, ValueRef::Imm(0));
                let old = b.push(Opcode::Load, Some(s.array), vec![addr]);
                let val = g.pick(&mut b, v, old);
                b.push(Opcode::Store, Some(s.array), vec![addr, val]);
            }
        }
        _ => {}
    }
    let mut vars: Vec<VarId> = env_t.keys().chain(env_e.keys()).copied().collect();
    vars.sort();
    vars.dedup();
    for v in vars {
        let base = env.get(&v).copied().unwrap_or(ValueRef::LiveIn(v));
        let vt = env_t.get(&v).copied().unwrap_or(base);
        let ve = env_e.get(&v).copied().unwrap_or(base);
        let merged = gt.pick(&mut b, vt, ve);
        env.insert(v, merged);
    }
    copy_plain(&mut b, p.block(d.join), &mut env, false, &mut node_map);

    let mut out = p.clone();
    let head = &mut out.blocks[d.head.0];
    head.dfg = b.dfg;
    head.successors = p.block(d.join).successors.clone();
    head.live_outs = env
        .into_iter()
        .filter(|(v, r)| *r != ValueRef::LiveIn(*v))
        .collect();
    for blk in &mut out.blocks {
        if let Some(LoopBound::Dynamic { block, node }) = blk.loop_bound {
            if let Some(ValueRef::Node(n)) = node_map.get(&(block, node)) {
                blk.loop_bound = Some(LoopBound::Dynamic {
                    block: d.head,
                    node: *n,
                });
            }
        }
    }
    if out.exit == d.join {
        out.exit = d.head;
    }
    compact(out, &[d.taken, d.not_taken, d.join])
}

/// Drops `removed` blocks and renumbers the rest.
fn compact(mut p: Program, removed: &[BlockId]) -> Program {
    let mut remap = vec![None; p.blocks.len()];
    let mut next = 0;
    for (i, slot) in remap.iter_mut().enumerate() {
        if !removed.contains(&BlockId(i)) {
            *slot = Some(BlockId(next));
            next += 1;
        }
    }
    let m = |b: BlockId| remap[b.0].expect("reference to a removed block");
    let blocks = std::mem::take(&mut p.blocks);
    p.blocks = blocks
        .into_iter()
        .filter(|b| !removed.contains(&b.id))
        .map(|mut b| {
            b.id = m(b.id);
            for s in &mut b.successors {
                s.0 = m(s.0);
            }
            if let Some(LoopBound::Dynamic { block, node }) = b.loop_bound {
                b.loop_bound = Some(LoopBound::Dynamic {
                    block: m(block),
                    node,
                });
            }
            b
        })
        .collect();
    p.entry = m(p.entry);
    p.exit = m(p.exit);
    p
}

/// If-converts every eligible diamond, innermost first.
pub fn if_convert(program: &Program) -> Program {
    let mut p = program.clone();
    while let Some(d) = find_diamond(&p) {
        p = merge(&p, &d);
    }
    p
}
