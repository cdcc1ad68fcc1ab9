//! Loop nesting forest and control-form classification.

use std::collections::BTreeSet;

use thiserror::Error;

use super::types::*;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LoopError {
    #[error("irreducible control flow: edge {from} -> {to} enters a loop not through its header")]
    Irreducible { from: BlockId, to: BlockId },
    #[error("multi-exit loop at header {header}: {exits} exit edges")]
    MultiExit { header: BlockId, exits: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Loop {
    pub header: BlockId,
    /// Every block of the loop, nested loops included, sorted.
    pub blocks: Vec<BlockId>,
    /// Blocks whose innermost loop is this one.
    pub own_blocks: Vec<BlockId>,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub depth: usize,
    pub imperfect: bool,
    pub back_edges: Vec<BlockId>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LoopInfo {
    pub loops: Vec<Loop>,
    /// Innermost loop of each block, indexed by block id.
    pub block_loop: Vec<Option<usize>>,
}

impl LoopInfo {
    pub fn depth_of(&self, b: BlockId) -> usize {
        self.block_loop[b.0].map_or(0, |l| self.loops[l].depth)
    }

    pub fn loop_of_header(&self, header: BlockId) -> Option<usize> {
        self.loops.iter().position(|l| l.header == header)
    }

    pub fn roots(&self) -> Vec<usize> {
        (0..self.loops.len())
            .filter(|&l| self.loops[l].parent.is_none())
            .collect()
    }

    pub fn max_depth(&self) -> usize {
        self.loops.iter().map(|l| l.depth).max().unwrap_or(0)
    }

    pub fn is_innermost(&self, l: usize) -> bool {
        self.loops[l].children.is_empty()
    }

    /// Recomputes each loop's depth from the parent links alone.
    pub fn rederived_depths(&self) -> Vec<usize> {
        (0..self.loops.len())
            .map(|mut l| {
                let mut d = 1;
                while let Some(p) = self.loops[l].parent {
                    d += 1;
                    l = p;
                }
                d
            })
            .collect()
    }

    /// Is `l` equal to or nested inside `ancestor`?
    pub fn within(&self, mut l: usize, ancestor: usize) -> bool {
        loop {
            if l == ancestor {
                return true;
            }
            match self.loops[l].parent {
                Some(p) => l = p,
                None => return false,
            }
        }
    }
}

fn reverse_postorder(program: &Program) -> Vec<BlockId> {
    let n = program.blocks.len();
    let mut visited = vec![false; n];
    let mut post = Vec::with_capacity(n);
    let mut stack = vec![(program.entry, 0usize)];
    visited[program.entry.0] = true;
    while let Some((b, i)) = stack.pop() {
        let succs = &program.block(b).successors;
        if i < succs.len() {
            stack.push((b, i + 1));
            let t = succs[i].0;
            if !visited[t.0] {
                visited[t.0] = true;
                stack.push((t, 0));
            }
        } else {
            post.push(b);
        }
    }
    post.reverse();
    post
}

/// Immediate dominators (Cooper-Harvey-Kennedy); unreachable blocks map to `None`.
pub fn dominators(program: &Program) -> Vec<Option<BlockId>> {
    let n = program.blocks.len();
    let rpo = reverse_postorder(program);
    let mut order = vec![usize::MAX; n];
    for (i, b) in rpo.iter().enumerate() {
        order[b.0] = i;
    }
    let mut preds: Vec<Vec<BlockId>> = vec![Vec::new(); n];
    for b in &program.blocks {
        for &(t, _) in &b.successors {
            preds[t.0].push(b.id);
        }
    }
    let mut idom: Vec<Option<BlockId>> = vec![None; n];
    idom[program.entry.0] = Some(program.entry);
    let intersect = |idom: &Vec<Option<BlockId>>, mut a: BlockId, mut b: BlockId| {
        while a != b {
            while order[a.0] > order[b.0] {
                a = idom[a.0].unwrap();
            }
            while order[b.0] > order[a.0] {
                b = idom[b.0].unwrap();
            }
        }
        a
    };
    let mut changed = true;
    while changed {
        changed = false;
        for &b in rpo.iter().skip(1) {
            let mut new = None;
            for &p in &preds[b.0] {
                if idom[p.0].is_none() {
                    continue;
                }
                new = Some(match new {
                    None => p,
                    Some(cur) => intersect(&idom, p, cur),
                });
            }
            if new != idom[b.0] {
                idom[b.0] = new;
                changed = true;
            }
        }
    }
    idom
}

fn dominates(idom: &[Option<BlockId>], a: BlockId, mut b: BlockId) -> bool {
    loop {
        if a == b {
            return true;
        }
        match idom[b.0] {
            Some(d) if d != b => b = d,
            _ => return false,
        }
    }
}

/// Builds the loop forest from natural loops of back edges.
pub fn analyze_loops(program: &Program) -> Result<LoopInfo, LoopError> {
    let n = program.blocks.len();
    let idom = dominators(program);

    // retreating edges found by an iterative DFS
    let mut state = vec![0u8; n]; // 0 new, 1 on stack, 2 done
    let mut stack = vec![(program.entry, 0usize)];
    state[program.entry.0] = 1;
    let mut back_edges: Vec<(BlockId, BlockId)> = Vec::new();
    while let Some((b, i)) = stack.pop() {
        let succs = &program.block(b).successors;
        if i < succs.len() {
            stack.push((b, i + 1));
            let t = succs[i].0;
            match state[t.0] {
                0 => {
                    state[t.0] = 1;
                    stack.push((t, 0));
                }
                1 => {
                    if !dominates(&idom, t, b) {
                        return Err(LoopError::Irreducible { from: b, to: t });
                    }
                    back_edges.push((b, t));
                }
                _ => {}
            }
        } else {
            state[b.0] = 2;
        }
    }

    let mut headers: Vec<BlockId> = back_edges.iter().map(|&(_, h)| h).collect();
    headers.sort();
    headers.dedup();

    let mut preds: Vec<Vec<BlockId>> = vec![Vec::new(); n];
    for b in &program.blocks {
        for &(t, _) in &b.successors {
            preds[t.0].push(b.id);
        }
    }

    let mut loops: Vec<Loop> = Vec::new();
    for &h in &headers {
        let mut body = vec![false; n];
        body[h.0] = true;
        let mut work: Vec<BlockId> = Vec::new();
        let mut latches = Vec::new();
        for &(u, t) in &back_edges {
            if t == h {
                latches.push(u);
                if !body[u.0] {
                    body[u.0] = true;
                    work.push(u);
                }
            }
        }
        while let Some(b) = work.pop() {
            for &p in &preds[b.0] {
                if !body[p.0] {
                    body[p.0] = true;
                    work.push(p);
                }
            }
        }
        let blocks: Vec<BlockId> = (0..n).filter(|&i| body[i]).map(BlockId).collect();
        let exits = blocks
            .iter()
            .flat_map(|&b| program.block(b).successors.iter())
            .filter(|(t, _)| !body[t.0])
            .count();
        if exits != 1 {
            return Err(LoopError::MultiExit { header: h, exits });
        }
        latches.sort();
        loops.push(Loop {
            header: h,
            blocks,
            own_blocks: Vec::new(),
            parent: None,
            children: Vec::new(),
            depth: 0,
            imperfect: false,
            back_edges: latches,
        });
    }

    // parent = smallest strictly containing loop
    for i in 0..loops.len() {
        let mut best: Option<usize> = None;
        for j in 0..loops.len() {
            if i == j || !loops[j].blocks.contains(&loops[i].header) {
                continue;
            }
            if best.is_none_or(|b| loops[j].blocks.len() < loops[b].blocks.len()) {
                best = Some(j);
            }
        }
        loops[i].parent = best;
    }
    for i in 0..loops.len() {
        if let Some(p) = loops[i].parent {
            loops[p].children.push(i);
        }
    }
    let depths: Vec<usize> = (0..loops.len())
        .map(|mut l| {
            let mut d = 1;
            while let Some(p) = loops[l].parent {
                d += 1;
                l = p;
            }
            d
        })
        .collect();
    for (l, d) in depths.into_iter().enumerate() {
        loops[l].depth = d;
    }

    let mut block_loop = vec![None; n];
    for b in 0..n {
        block_loop[b] = (0..loops.len())
            .filter(|&l| loops[l].blocks.contains(&BlockId(b)))
            .min_by_key(|&l| loops[l].blocks.len());
    }
    for (b, l) in block_loop.iter().enumerate() {
        if let Some(l) = l {
            loops[*l].own_blocks.push(BlockId(b));
        }
    }
    for l in &mut loops {
        l.imperfect = !l.children.is_empty()
            && l.own_blocks.iter().any(|&b| {
                program
                    .block(b)
                    .dfg
                    .iter()
                    .any(|node| node.opcode != Opcode::LoopGen)
            });
    }

    Ok(LoopInfo { loops, block_loop })
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ControlForm {
    BranchDivergence,
    ImperfectLoop,
    PerfectLoop,
    StraightLine,
}

/// Classifies the control forms present in a program.
pub fn classify_control(program: &Program) -> Result<BTreeSet<ControlForm>, LoopError> {
    let info = analyze_loops(program)?;
    let mut forms = BTreeSet::new();
    if program.blocks.iter().any(|b| b.has_divergence()) {
        forms.insert(ControlForm::BranchDivergence);
    }
    if info.loops.iter().any(|l| l.imperfect) {
        forms.insert(ControlForm::ImperfectLoop);
    } else if !info.loops.is_empty() {
        forms.insert(ControlForm::PerfectLoop);
    }
    if forms.is_empty() {
        forms.insert(ControlForm::StraightLine);
    }
    Ok(forms)
}
