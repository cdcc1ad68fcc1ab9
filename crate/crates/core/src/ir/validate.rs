use std::collections::VecDeque;
use std::fmt;

use super::types::*;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub block: Option<BlockId>,
    pub node: Option<NodeId>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.block, self.node) {
            (Some(b), Some(n)) => write!(f, "{b}/{n}: {}", self.message),
            (Some(b), None) => write!(f, "{b}: {}", self.message),
            _ => f.write_str(&self.message),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn contains(&self, needle: &str) -> bool {
        self.violations.iter().any(|v| v.message.contains(needle))
    }

    fn push(&mut self, block: Option<BlockId>, node: Option<NodeId>, message: String) {
        self.violations.push(Violation {
            block,
            node,
            message,
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Checks every structural rule of a CDFG and reports all violations found.
pub fn validate(program: &Program) -> ValidationReport {
    let mut report = ValidationReport::default();
    let nblocks = program.blocks.len();

    if nblocks == 0 {
        report.push(None, None, "program has no blocks".into());
        return report;
    }
    for (i, b) in program.blocks.iter().enumerate() {
        if b.id.0 != i {
            report.push(
                Some(b.id),
                None,
                format!("block id {} stored at index {i}", b.id),
            );
        }
    }
    if program.entry.0 >= nblocks {
        report.push(
            None,
            None,
            format!("entry {} does not exist", program.entry),
        );
        return report;
    }
    if program.exit.0 >= nblocks {
        report.push(None, None, format!("exit {} does not exist", program.exit));
        return report;
    }

    let mut pred_count = vec![0usize; nblocks];
    for b in &program.blocks {
        for &(t, _) in &b.successors {
            if t.0 < nblocks {
                pred_count[t.0] += 1;
            }
        }
    }

    if pred_count[program.entry.0] != 0 {
        report.push(
            Some(program.entry),
            None,
            "entry block has predecessors".into(),
        );
    }
    if !program.block(program.exit).successors.is_empty() {
        report.push(Some(program.exit), None, "exit block has successors".into());
    }

    for b in &program.blocks {
        check_edges(program, b, &mut report);
        check_dfg(program, b, &mut report);
        if b.id != program.exit && b.successors.is_empty() {
            report.push(
                Some(b.id),
                None,
                "second exit: block has no successors".into(),
            );
        }
        if b.id != program.entry && pred_count[b.id.0] == 0 {
            report.push(
                Some(b.id),
                None,
                "second entry: block has no predecessors".into(),
            );
        }
    }

    // connectivity from entry
    let mut seen = vec![false; nblocks];
    let mut queue = VecDeque::from([program.entry]);
    seen[program.entry.0] = true;
    while let Some(b) = queue.pop_front() {
        for &(t, _) in &program.block(b).successors {
            if t.0 < nblocks && !seen[t.0] {
                seen[t.0] = true;
                queue.push_back(t);
            }
        }
    }
    for (i, s) in seen.iter().enumerate() {
        if !s {
            report.push(Some(BlockId(i)), None, "unreachable from entry".into());
        }
    }
    report
}

fn check_edges(program: &Program, b: &BasicBlock, report: &mut ValidationReport) {
    let nblocks = program.blocks.len();
    let count = |c: EdgeCond| b.successors.iter().filter(|(_, x)| *x == c).count();

    for &(t, _) in &b.successors {
        if t.0 >= nblocks {
            report.push(Some(b.id), None, format!("dangling successor {t}"));
        }
    }
    if count(EdgeCond::Always) > 1 {
        report.push(Some(b.id), None, "more than one always successor".into());
    }
    let taken = count(EdgeCond::Taken);
    let not_taken = count(EdgeCond::NotTaken);
    if taken != not_taken || taken > 1 {
        report.push(Some(b.id), None, "unpaired branch edge".into());
    }
    if taken > 0 && count(EdgeCond::Always) > 0 {
        report.push(
            Some(b.id),
            None,
            "always edge alongside a branch pair".into(),
        );
    }
    let branches = b.dfg.iter().filter(|n| n.opcode == Opcode::Branch).count();
    if branches > 1 {
        report.push(Some(b.id), None, "more than one branch node".into());
    }
    if taken > 0 && branches == 0 {
        report.push(
            Some(b.id),
            None,
            "branch edges without a branch node".into(),
        );
    }
    if branches > 0 && taken == 0 {
        report.push(Some(b.id), None, "branch node without branch edges".into());
    }
    if count(EdgeCond::LoopExit) > 0 && !b.loop_header {
        report.push(
            Some(b.id),
            None,
            "loop-exit edge from a non-header block".into(),
        );
    }
    for &(t, c) in &b.successors {
        if c == EdgeCond::LoopBack && t.0 < nblocks && !program.block(t).loop_header {
            report.push(
                Some(b.id),
                None,
                format!("loop-back edge to non-header {t}"),
            );
        }
    }
    if b.loop_header {
        let gens = b.dfg.iter().filter(|n| n.opcode == Opcode::LoopGen).count();
        if gens != 1 {
            report.push(
                Some(b.id),
                None,
                "loop header needs exactly one loop-gen".into(),
            );
        }
        if count(EdgeCond::LoopExit) != 1 || count(EdgeCond::Always) != 1 {
            report.push(
                Some(b.id),
                None,
                "loop header needs one body and one loop-exit edge".into(),
            );
        }
        match b.loop_bound {
            None => report.push(Some(b.id), None, "loop header without a bound".into()),
            Some(LoopBound::Dynamic { block, node }) => {
                if block == b.id {
                    report.push(
                        Some(b.id),
                        None,
                        "dynamic bound produced inside its own header".into(),
                    );
                } else if block.0 >= nblocks || node.0 >= program.block(block).dfg.len() {
                    report.push(
                        Some(b.id),
                        None,
                        format!("dynamic bound references missing {block}/{node}"),
                    );
                }
            }
            Some(LoopBound::Const(_)) => {}
        }
    }
}

fn check_dfg(program: &Program, b: &BasicBlock, report: &mut ValidationReport) {
    let n = b.dfg.len();
    for (i, node) in b.dfg.iter().enumerate() {
        if node.id.0 != i {
            report.push(
                Some(b.id),
                Some(node.id),
                format!("node id stored at index {i}"),
            );
        }
        if node.inputs.len() != node.opcode.arity() {
            report.push(
                Some(b.id),
                Some(node.id),
                format!(
                    "{} expects {} inputs, has {}",
                    node.opcode,
                    node.opcode.arity(),
                    node.inputs.len()
                ),
            );
        }
        if node.opcode == Opcode::LoopGen && !b.loop_header {
            report.push(
                Some(b.id),
                Some(node.id),
                "loop-gen outside a loop header".into(),
            );
        }
        if node.opcode.is_memory() {
            match node.array {
                Some(a) if a.0 < program.memories.len() => {}
                _ => report.push(
                    Some(b.id),
                    Some(node.id),
                    "memory op without a valid array".into(),
                ),
            }
        }
        if node.opcode == Opcode::Const && !matches!(node.inputs.first(), Some(ValueRef::Imm(_))) {
            report.push(
                Some(b.id),
                Some(node.id),
                "const needs an immediate input".into(),
            );
        }
        if node.opcode == Opcode::Phi && !matches!(node.inputs.first(), Some(ValueRef::LiveIn(_))) {
            report.push(
                Some(b.id),
                Some(node.id),
                "phi needs a live-in input".into(),
            );
        }
        for input in &node.inputs {
            match *input {
                ValueRef::Node(p) if p.0 >= n => report.push(
                    Some(b.id),
                    Some(node.id),
                    format!("input {p} crosses block boundary"),
                ),
                ValueRef::LiveIn(v) if v.0 >= program.vars.len() => {
                    report.push(Some(b.id), Some(node.id), format!("unknown variable {v}"))
                }
                _ => {}
            }
        }
    }
    if b.dfg.iter().all(|node| {
        node.inputs
            .iter()
            .all(|i| !matches!(i, ValueRef::Node(p) if p.0 >= n))
    }) && Program::topo_order(b).is_none()
    {
        report.push(Some(b.id), None, "dfg has a cycle".into());
    }
    for (v, r) in &b.live_outs {
        if v.0 >= program.vars.len() {
            report.push(
                Some(b.id),
                None,
                format!("live-out of unknown variable {v}"),
            );
        }
        if let ValueRef::Node(p) = r {
            if p.0 >= n {
                report.push(Some(b.id), None, format!("live-out references missing {p}"));
            }
        }
    }
}
