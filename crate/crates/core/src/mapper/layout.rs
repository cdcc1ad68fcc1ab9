//! PE pool layout: which blocks share a pool, its size, II and replication.

use super::reshape::{enumerate_reshapes, reshape, MAX_FOLD};
use super::MapError;
use crate::arch::{ArchConfig, Pe};
use crate::ir::{BlockId, LoopBound, LoopInfo, Program};

/// Trip count assumed for loops whose bound is only known at run time.
pub const DYNAMIC_TRIP_ESTIMATE: u64 = 8;

/// Blocks placed together into one PE pool, once per replica.
#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct GroupPlan {
    pub blocks: Vec<BlockId>,
    pub ii: u32,
    pub pools: Vec<Vec<Pe>>,
}

/// One point of the agile search at a loop level.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct AgileCandidate {
    /// Time-extension factor of the level's own blocks.
    pub own_fold: u32,
    /// Extra fold applied to innermost child loops.
    pub child_fold: u32,
    /// Copies of each innermost child loop.
    pub replication: u32,
    pub pes: u32,
    /// Estimated cycles per iteration of the level.
    pub period: u64,
    /// Idle PE-cycles per iteration: `budget * period - work` for loop
    /// levels, `pes * fold - ops` for straight-line code.
    pub waste: u64,
}

/// The candidate set of one level and the pick.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AgileDecision {
    /// Loop header, or `None` for the blocks outside every loop.
    pub level: Option<BlockId>,
    pub candidates: Vec<AgileCandidate>,
    pub chosen: usize,
    /// False when no candidate fits the array and pools overlap.
    pub fits: bool,
}

impl AgileDecision {
    pub fn choice(&self) -> &AgileCandidate {
        &self.candidates[self.chosen]
    }
}

/// Snake order over rows so consecutive pool members are neighbours.
pub(crate) fn snake(arch: &ArchConfig) -> Vec<Pe> {
    let mut out = Vec::with_capacity(arch.pe_count());
    for r in 0..arch.rows {
        let row: Vec<Pe> = (0..arch.cols)
            .map(|c| Pe((r * arch.cols + c) as u16))
            .collect();
        if r % 2 == 0 {
            out.extend(row);
        } else {
            out.extend(row.into_iter().rev());
        }
    }
    out
}

struct Cursor<'a> {
    order: &'a [Pe],
    at: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Vec<Pe> {
        let out = (0..n)
            .map(|k| self.order[(self.at + k) % self.order.len()])
            .collect();
        self.at += n;
        out
    }
}

pub(crate) fn trip_estimate(p: &Program, header: BlockId) -> u64 {
    match p.block(header).loop_bound {
        Some(LoopBound::Const(n)) => n as u64,
        _ => DYNAMIC_TRIP_ESTIMATE,
    }
}

/// Own blocks of a level; `None` is the level outside every loop.
pub(crate) fn own_blocks(info: &LoopInfo, p: &Program, level: Option<usize>) -> Vec<BlockId> {
    match level {
        Some(l) => info.loops[l].own_blocks.clone(),
        None => (0..p.blocks.len())
            .filter(|&b| info.block_loop[b].is_none())
            .map(BlockId)
            .collect(),
    }
}

fn ops_of(p: &Program, blocks: &[BlockId]) -> u32 {
    blocks.iter().map(|&b| p.block(b).dfg.len() as u32).sum()
}

fn children(info: &LoopInfo, level: Option<usize>) -> Vec<usize> {
    match level {
        Some(l) => info.loops[l].children.clone(),
        None => info.roots(),
    }
}

/// Fold needed so `ops` fit `cap` PEs; beyond `MAX_FOLD` when unavoidable.
fn forced_fold(ops: u32, cap: u32) -> (u32, u32) {
    match reshape(ops, cap) {
        Some(r) => (r.pes, r.factor),
        None => (cap, ops.div_ceil(cap)),
    }
}

fn check_blocks(p: &Program, cap: u32) -> Result<(), MapError> {
    for b in &p.blocks {
        let ops = b.dfg.len() as u32;
        if ops > cap * MAX_FOLD {
            return Err(MapError::UnmappableBlock {
                block: b.id,
                ops: ops as usize,
                capacity: (cap * MAX_FOLD) as usize,
            });
        }
    }
    Ok(())
}

/// Layout without agile assignment: every pool starts spatial, innermost
/// loops share the first PEs, all outer levels share the PEs after them.
pub(crate) fn plain_layout(
    p: &Program,
    info: &LoopInfo,
    arch: &ArchConfig,
) -> Result<Vec<GroupPlan>, MapError> {
    let cap = arch.pe_count() as u32;
    check_blocks(p, cap)?;
    let order = snake(arch);
    let mut groups = Vec::new();
    let mut inner_width = 0;
    for (l, lp) in info.loops.iter().enumerate() {
        if !info.is_innermost(l) {
            continue;
        }
        let (pes, ii) = forced_fold(ops_of(p, &lp.own_blocks), cap);
        inner_width = inner_width.max(pes as usize);
        groups.push((
            l,
            GroupPlan {
                blocks: lp.own_blocks.clone(),
                ii,
                pools: vec![Cursor {
                    order: &order,
                    at: 0,
                }
                .take(pes as usize)],
            },
        ));
    }
    let mut levels: Vec<Option<usize>> = vec![None];
    levels.extend(
        (0..info.loops.len())
            .filter(|&l| !info.is_innermost(l))
            .map(Some),
    );
    for level in levels {
        let blocks = own_blocks(info, p, level);
        let ops = ops_of(p, &blocks);
        let ii = ops.div_ceil(cap).max(1);
        let pes = ops.min(cap) as usize;
        let key = level.map_or(usize::MAX, |l| l);
        groups.push((
            key,
            GroupPlan {
                blocks,
                ii,
                pools: vec![Cursor {
                    order: &order,
                    at: inner_width,
                }
                .take(pes)],
            },
        ));
    }
    groups.sort_by_key(|(k, _)| *k);
    Ok(groups
        .into_iter()
        .map(|(_, g)| g)
        .filter(|g| !g.blocks.is_empty())
        .collect())
}

#[derive(Copy, Clone, Debug)]
struct Shape {
    pes: u32,
    period: u64,
    work: u64,
}

struct Agile<'a> {
    p: &'a Program,
    info: &'a LoopInfo,
    cap: u32,
    /// Per loop: (own fold, child fold, replication) once decided.
    pick: Vec<Option<AgileCandidate>>,
    top: Option<AgileCandidate>,
    inner: Vec<Option<(u32, u32)>>,
    shapes: Vec<Option<Shape>>,
    log: Vec<AgileDecision>,
}

impl Agile<'_> {
    fn innermost(&mut self, l: usize) {
        let ops = ops_of(self.p, &self.info.loops[l].own_blocks);
        let (pes, ii) = forced_fold(ops, self.cap);
        let mut candidates: Vec<AgileCandidate> = enumerate_reshapes(ops, self.cap)
            .into_iter()
            .map(|r| AgileCandidate {
                own_fold: r.factor,
                child_fold: 1,
                replication: 1,
                pes: r.pes,
                period: r.factor as u64,
                waste: r.waste as u64,
            })
            .collect();
        let chosen = candidates
            .iter()
            .position(|c| c.pes == pes && c.own_fold == ii)
            .unwrap_or_else(|| {
                candidates.push(AgileCandidate {
                    own_fold: ii,
                    child_fold: 1,
                    replication: 1,
                    pes,
                    period: ii as u64,
                    waste: (pes * ii - ops) as u64,
                });
                candidates.len() - 1
            });
        self.log.push(AgileDecision {
            level: Some(self.info.loops[l].header),
            candidates,
            chosen,
            fits: true,
        });
        self.inner[l] = Some((pes, ii));
        self.shapes[l] = Some(Shape {
            pes,
            period: ii as u64,
            work: ops as u64,
        });
    }

    fn level(&mut self, level: Option<usize>, budget: u32) {
        let kids = children(self.info, level);
        let own = ops_of(self.p, &own_blocks(self.info, self.p, level));
        let inner_kids: Vec<usize> = kids
            .iter()
            .copied()
            .filter(|&c| self.info.is_innermost(c))
            .collect();
        let outer_kids: Vec<usize> = kids
            .iter()
            .copied()
            .filter(|&c| !self.info.is_innermost(c))
            .collect();
        // Outer children split what is left after the smallest own and inner footprints.
        let reserve = own.div_ceil(MAX_FOLD) + inner_kids.len() as u32;
        let share = (budget.saturating_sub(reserve) / (outer_kids.len() as u32).max(1)).max(1);
        for &c in &kids {
            if self.info.is_innermost(c) {
                self.innermost(c);
            } else {
                self.level(Some(c), share);
            }
        }
        let max_r = if level.is_none() || inner_kids.is_empty() {
            1
        } else {
            MAX_FOLD
        };
        let max_g = if inner_kids.is_empty() { 1 } else { MAX_FOLD };
        let straight = kids.is_empty();
        let mut candidates = Vec::new();
        let mut fallback: Option<AgileCandidate> = None;
        for f in 1..=MAX_FOLD {
            let pe_own = own.div_ceil(f);
            for g in 1..=max_g {
                for r in 1..=max_r {
                    let mut pes = pe_own;
                    let mut inner_time = 0u64;
                    let mut outer_time = 0u64;
                    let mut work = own as u64;
                    for &c in &inner_kids {
                        let (cp, cf) = self.inner[c].unwrap();
                        let ops = self.shapes[c].unwrap().work as u32;
                        let fc = cf * g;
                        let pc = ops.div_ceil(fc).min(cp).max(1);
                        let trip = trip_estimate(self.p, self.info.loops[c].header);
                        pes += r * pc;
                        inner_time += trip * fc as u64;
                        work += trip * ops as u64;
                    }
                    for &c in &outer_kids {
                        let s = self.shapes[c].unwrap();
                        let trip = trip_estimate(self.p, self.info.loops[c].header);
                        pes += s.pes;
                        outer_time += trip * s.period;
                        work += trip * s.work;
                    }
                    let period = (f as u64).max(inner_time.div_ceil(r as u64) + outer_time);
                    // Straight-line code runs once, so only its own footprint counts;
                    // loop levels count every PE of the budget left idle.
                    let waste = if straight {
                        (pes as u64 * period).saturating_sub(work)
                    } else {
                        (budget.max(pes) as u64 * period).saturating_sub(work)
                    };
                    let cand = AgileCandidate {
                        own_fold: f,
                        child_fold: g,
                        replication: r,
                        pes,
                        period,
                        waste,
                    };
                    if pes <= budget {
                        candidates.push(cand);
                    } else if fallback.map_or(true, |b| pes < b.pes) {
                        fallback = Some(cand);
                    }
                }
            }
        }
        let fits = !candidates.is_empty();
        if !fits {
            candidates.push(fallback.unwrap());
        }
        let chosen = (0..candidates.len())
            .min_by_key(|&i| {
                let c = &candidates[i];
                // Straight-line code prefers the shorter schedule on a waste tie.
                let first = if straight { c.own_fold } else { c.pes };
                (
                    c.waste,
                    first,
                    c.pes,
                    c.replication,
                    c.own_fold,
                    c.child_fold,
                )
            })
            .unwrap();
        let pick = candidates[chosen];
        self.log.push(AgileDecision {
            level: level.map(|l| self.info.loops[l].header),
            candidates,
            chosen,
            fits,
        });
        match level {
            Some(l) => {
                self.pick[l] = Some(pick);
                self.shapes[l] = Some(Shape {
                    pes: pick.pes,
                    period: pick.period,
                    work: 0,
                });
                // Work per iteration is needed by the parent's estimate.
                let mut work = own as u64;
                for &c in &kids {
                    let trip = trip_estimate(self.p, self.info.loops[c].header);
                    work += trip * self.shapes[c].unwrap().work;
                }
                self.shapes[l].as_mut().unwrap().work = work;
            }
            None => self.top = Some(pick),
        }
    }

    fn allocate(&self, level: Option<usize>, cur: &mut Cursor, out: &mut Vec<GroupPlan>) {
        let pick = match level {
            Some(l) => self.pick[l].unwrap(),
            None => self.top.unwrap(),
        };
        let blocks = own_blocks(self.info, self.p, level);
        let own = ops_of(self.p, &blocks);
        let pe_own = own.div_ceil(pick.own_fold) as usize;
        if !blocks.is_empty() {
            out.push(GroupPlan {
                blocks,
                ii: pick.own_fold,
                pools: vec![cur.take(pe_own)],
            });
        }
        for c in children(self.info, level) {
            if self.info.is_innermost(c) {
                let (cp, cf) = self.inner[c].unwrap();
                let ops = ops_of(self.p, &self.info.loops[c].own_blocks);
                let fc = cf * pick.child_fold;
                let pc = ops.div_ceil(fc).min(cp).max(1) as usize;
                let pools = (0..pick.replication).map(|_| cur.take(pc)).collect();
                out.push(GroupPlan {
                    blocks: self.info.loops[c].own_blocks.clone(),
                    ii: fc,
                    pools,
                });
            } else {
                self.allocate(Some(c), cur, out);
            }
        }
    }
}

/// Agile PE assignment: levels are shaped innermost first, each choosing the
/// own-block fold, child refold and child replication of least PE waste
/// within its PE budget. Unused budget counts as waste, which is what drives
/// replication onto leftover PEs.
pub(crate) fn agile_layout(
    p: &Program,
    info: &LoopInfo,
    arch: &ArchConfig,
) -> Result<(Vec<GroupPlan>, Vec<AgileDecision>), MapError> {
    let cap = arch.pe_count() as u32;
    check_blocks(p, cap)?;
    let n = info.loops.len();
    let mut a = Agile {
        p,
        info,
        cap,
        pick: vec![None; n],
        top: None,
        inner: vec![None; n],
        shapes: vec![None; n],
        log: Vec::new(),
    };
    a.level(None, cap);
    let order = snake(arch);
    let mut cur = Cursor {
        order: &order,
        at: 0,
    };
    let mut groups = Vec::new();
    a.allocate(None, &mut cur, &mut groups);
    Ok((groups, a.log))
}
