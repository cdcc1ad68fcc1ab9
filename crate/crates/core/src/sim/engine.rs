use std::collections::HashSet;

use super::*;
use crate::arch::ArchConfig;
use crate::frontend::{next_block, LoopState, DEFAULT_STEP_BUDGET};
use crate::ir::{analyze_loops, EdgeCond, LoopBound, LoopInfo, Opcode, Program, ValueRef};
use crate::mapper::{load_bitstream, sender_node, Mapping};

/// Control reaching a block: a cycle, plus the PE it leaves from when the
/// token rides the data network (dataflow).
#[derive(Copy, Clone, Debug)]
struct Ctl {
    time: u64,
    src: Option<Pe>,
}

#[derive(Copy, Clone, Debug, Default)]
struct Word {
    store_done: u64,
    store_fire: Option<u64>,
    load_fire: u64,
}

#[derive(Clone, Debug, Default)]
struct LoopRt {
    entries: u64,
    replica: usize,
    iter: usize,
    prev_fire: u64,
    entry_fire: u64,
    /// First fire of each iteration's body, for the run-ahead bound.
    body_first: Vec<u64>,
    /// Per replica: earliest entry of the next invocation.
    replica_free: Vec<u64>,
}

struct Engine<'a> {
    m: &'a Mapping,
    p: &'a Program,
    arch: &'a ArchConfig,
    model: Model,
    info: LoopInfo,
    /// Header of the block's loop when that loop is innermost.
    inner_header: Vec<Option<usize>>,
    barriers: bool,
    lc: u64,
    cfg: u64,
    ovh: u64,
    window: u64,
    mem: Vec<Vec<i32>>,
    words: Vec<Vec<Word>>,
    vars: Vec<i32>,
    var_ready: Vec<(u64, Option<Pe>)>,
    busy: Vec<HashSet<u64>>,
    last_block: Vec<Option<BlockId>>,
    ops: Vec<OpRecord>,
    floor: u64,
    all_done: u64,
    last_event: u64,
    loops: Vec<LoopState>,
    rt: Vec<LoopRt>,
    /// Done cycle of every node of each block's latest instance.
    last_done: Vec<Vec<u64>>,
    /// Per FIFO: (push, pop) of every bound that went through it.
    fifo_log: Vec<Vec<(u64, u64)>>,
    windows: Vec<(u64, u64)>,
    stats: SimStats,
    steps: u64,
    proactive: bool,
    /// Bound pushed for the loop-gen about to fire: (FIFO, push cycle).
    pending_push: Option<(usize, u64)>,
}

/// Decodes a bitstream and simulates it.
pub fn simulate(
    bitstream: &[u8],
    arch: &ArchConfig,
    mem: &MemoryImage,
    model: Model,
    opts: &SimOptions,
) -> Result<SimOutput, SimError> {
    let (m, echo) = load_bitstream(bitstream)?;
    if (echo.rows as usize, echo.cols as usize) != (arch.rows, arch.cols)
        && !m.program.blocks.is_empty()
    {
        return Err(SimError::ArchMismatch {
            rows: echo.rows as usize,
            cols: echo.cols as usize,
            arch_rows: arch.rows,
            arch_cols: arch.cols,
        });
    }
    simulate_mapping(&m, arch, mem, model, opts)
}

pub fn simulate_mapping(
    m: &Mapping,
    arch: &ArchConfig,
    mem: &MemoryImage,
    model: Model,
    opts: &SimOptions,
) -> Result<SimOutput, SimError> {
    if !model.accepts(m.strategy) {
        return Err(SimError::Incompatible {
            model,
            strategy: m.strategy,
        });
    }
    let p = &m.program;
    let n_pe = arch.pe_count();
    if p.blocks.is_empty() {
        return Ok(SimOutput {
            memory: mem.clone(),
            stats: SimStats {
                busy: vec![0; n_pe],
                ..Default::default()
            },
            ops: Vec::new(),
            ccu_windows: Vec::new(),
            pe_count: n_pe,
        });
    }
    mem.check(p).map_err(|e| SimError::Memory(e.to_string()))?;
    if m.blocks.len() != p.blocks.len() {
        return Err(SimError::Invalid(
            "block mappings do not match the program".into(),
        ));
    }
    if m.blocks
        .iter()
        .flat_map(|b| b.placements.iter().flatten())
        .any(|pe| pe.0 as usize >= n_pe)
    {
        return Err(SimError::Invalid("placement outside the array".into()));
    }
    let info = analyze_loops(p).map_err(|e| SimError::Invalid(e.to_string()))?;
    let inner_header = (0..p.blocks.len())
        .map(|b| info.block_loop[b].filter(|&l| info.is_innermost(l)))
        .collect();
    let lc = if opts.control_net {
        arch.control_net_latency as u64
    } else {
        2 * arch.control_net_latency as u64 + 1
    };
    let mut e = Engine {
        m,
        p,
        arch,
        model,
        inner_header,
        barriers: model != Model::Marionette || !m.agile,
        lc,
        cfg: arch.configure_cycles as u64,
        ovh: arch.dataflow_config_overhead as u64,
        window: opts.deadlock_window.unwrap_or(n_pe as u64 * 1024),
        mem: mem.to_vecs(p),
        words: p
            .memories
            .iter()
            .map(|d| vec![Word::default(); d.len])
            .collect(),
        vars: vec![0; p.vars.len()],
        var_ready: vec![(0, None); p.vars.len()],
        busy: vec![HashSet::new(); n_pe],
        last_block: vec![None; n_pe],
        ops: Vec::new(),
        floor: 0,
        all_done: 0,
        last_event: 0,
        loops: vec![LoopState::default(); p.blocks.len()],
        rt: vec![LoopRt::default(); p.blocks.len()],
        last_done: p.blocks.iter().map(|b| vec![0; b.dfg.len()]).collect(),
        fifo_log: vec![Vec::new(); crate::netctl::CONTROL_FIFOS],
        windows: Vec::new(),
        stats: SimStats {
            busy: vec![0; n_pe],
            iterations: vec![0; p.blocks.len()],
            ..Default::default()
        },
        steps: 0,
        proactive: opts.proactive,
        pending_push: None,
        info,
    };
    e.run()?;
    Ok(e.finish())
}

impl Engine<'_> {
    fn run(&mut self) -> Result<(), SimError> {
        let mut cur = Some((
            self.p.entry,
            EdgeCond::Always,
            Ctl { time: 0, src: None },
            None,
        ));
        while let Some((b, via, ctl, body_of)) = cur {
            cur = self.block(b, via, ctl, body_of)?;
        }
        Ok(())
    }

    fn hop(&self, from: Option<Pe>, to: Pe) -> u64 {
        from.map_or(0, |f| self.arch.hop_latency(f, to) as u64)
    }

    /// Earliest cycle at or after `t` the PE can fire an op of latency `lat`.
    /// A time-extended PE cycles through its `ii` slots, so the op must also
    /// land on its own slot.
    fn reserve(&mut self, pe: Pe, t: u64, lat: u64, ii: u64, slot: u64) -> u64 {
        let set = &mut self.busy[pe.0 as usize];
        if self.model == Model::Dataflow {
            // Configure then execute, no overlap: [f - ovh, f + lat) is exclusive.
            let ovh = self.ovh;
            let mut f = t.max(ovh);
            while (f - ovh..f + lat.max(1)).any(|c| set.contains(&c)) {
                f += 1;
            }
            set.extend(f - ovh..f + lat.max(1));
            f
        } else {
            let mut f = t + (slot + ii - t % ii) % ii;
            while set.contains(&f) {
                f += ii;
            }
            set.insert(f);
            f
        }
    }

    fn blame(&self, b: BlockId, node: usize, pe: Pe, want: u64) -> SimError {
        let mut parts = vec![format!("{pe} waits for {b}/n{node} until cycle {want}")];
        for (i, last) in self.last_block.iter().enumerate() {
            if let Some(lb) = last {
                parts.push(format!("PE{i} last ran {lb}"));
            }
        }
        SimError::Deadlock {
            cycle: self.last_event + self.window,
            blame: parts.join("; "),
        }
    }

    fn block(
        &mut self,
        bid: BlockId,
        via: EdgeCond,
        ctl: Ctl,
        body_of: Option<BlockId>,
    ) -> Result<Option<(BlockId, EdgeCond, Ctl, Option<BlockId>)>, SimError> {
        let p = self.p;
        let b = p.block(bid);
        let bm = &self.m.blocks[bid.0];
        self.stats.iterations[bid.0] += 1;
        self.steps += 1 + b.dfg.len() as u64;
        if self.steps > DEFAULT_STEP_BUDGET {
            return Err(SimError::StepBudget(DEFAULT_STEP_BUDGET));
        }
        let inner = self.inner_header[bid.0].is_some();
        let entering = b.loop_header && via != EdgeCond::LoopBack;
        let barrier = self.barriers && (!inner || entering);
        let mut ctl = ctl;
        if b.loop_header && !entering {
            // The loop-gen times its own iterations; the back edge carries no timing.
            ctl = Ctl {
                time: self.rt[bid.0].prev_fire,
                src: None,
            };
        }
        if barrier {
            self.floor = self.floor.max(self.all_done);
            ctl.src = None;
        }
        ctl.time = ctl.time.max(self.floor);

        // Loop bookkeeping and replica choice.
        let loop_ii = self.info.block_loop[bid.0].map_or(1, |l| {
            let h = self.info.loops[l].header;
            self.m.loop_mapping(h).map_or(1, |lm| lm.ii.max(1)) as u64
        });
        if b.loop_header {
            let reps = bm.placements.len().max(1);
            let rt = &mut self.rt[bid.0];
            if entering {
                rt.entries += 1;
                rt.replica = ((rt.entries - 1) as usize) % reps;
                rt.iter = 0;
                rt.body_first.clear();
                if rt.replica_free.len() < reps {
                    rt.replica_free.resize(reps, 0);
                }
            } else {
                rt.iter += 1;
            }
        }
        let replica = match self.inner_header[bid.0] {
            Some(l) => self.rt[self.info.loops[l].header.0].replica,
            None => 0,
        }
        .min(bm.placements.len().saturating_sub(1));
        let pl = &bm.placements[replica];

        let order = Program::topo_order(b)
            .ok_or_else(|| SimError::Invalid(format!("{bid}: cyclic DFG")))?;
        let n = b.dfg.len();
        let mut vals = vec![0i32; n];
        let mut done = vec![0u64; n];
        let mut fires = vec![0u64; n];
        let mut outcome = None;
        let base = self.m.block_bases()[bid.0];
        let exclusive_cfg = self.model == Model::VonNeumann && !inner;
        for &i in &order {
            let node = &b.dfg[i];
            let pe = pl[i];
            let lat = self.arch.latency(node.opcode) as u64;
            let arg = |k: usize, vals: &[i32], vars: &[i32]| match node.inputs[k] {
                ValueRef::Node(q) => vals[q.0],
                ValueRef::LiveIn(v) => vars[v.0],
                ValueRef::Imm(x) => x,
            };
            let op_act = ctl.time
                + if self.model == Model::Dataflow {
                    self.hop(ctl.src, pe)
                } else {
                    0
                };
            let mut t = op_act;
            let mut configure = None;
            match self.model {
                Model::Marionette if self.last_block[pe.0 as usize] != Some(bid) => {
                    t = t.max(op_act + self.cfg);
                    configure = (self.cfg > 0).then_some((op_act, op_act + self.cfg));
                }
                Model::VonNeumann if exclusive_cfg => {
                    t = t.max(op_act + self.cfg);
                    configure = (self.cfg > 0).then_some((op_act, op_act + self.cfg));
                }
                _ => {}
            }
            let skip_vars = node.opcode == Opcode::LoopGen && !entering;
            for r in &node.inputs {
                match *r {
                    ValueRef::Node(q) => {
                        t = t.max(done[q.0] + self.arch.hop_latency(pl[q.0], pe) as u64);
                    }
                    ValueRef::LiveIn(v) if !skip_vars => {
                        let (ready, from) = self.var_ready[v.0];
                        t = t.max(ready + self.hop(from, pe));
                    }
                    _ => {}
                }
            }
            // Memory ordering and the functional value need the address first.
            let mut word = None;
            if node.opcode.is_memory() {
                let a = node.array.unwrap();
                let idx = arg(0, &vals, &self.vars);
                if idx < 0 || idx as usize >= self.mem[a.0].len() {
                    return Err(SimError::OutOfBounds {
                        block: bid,
                        node: node.id,
                        array: p.memories[a.0].name.clone(),
                        index: idx,
                    });
                }
                let w = self.words[a.0][idx as usize];
                if node.opcode == Opcode::Load {
                    t = t.max(w.store_done);
                } else {
                    t = t.max(w.load_fire);
                    if let Some(sf) = w.store_fire {
                        t = t.max(sf + 1);
                    }
                }
                word = Some((a.0, idx as usize));
            }
            if node.opcode == Opcode::LoopGen {
                t = t.max(self.loopgen_floor(bid, replica, entering, loop_ii, pe)?);
            }
            if t > self.last_event + self.window {
                return Err(self.blame(bid, i, pe, t));
            }
            let ii = bm.ii.max(1) as u64;
            let f = self.reserve(pe, t, lat, ii, bm.times[i] as u64 % ii);
            if f > self.last_event + self.window {
                return Err(self.blame(bid, i, pe, f));
            }
            if let Some((fifo, push)) = self.pending_push.take() {
                self.fifo_log[fifo].push((push, f));
                self.stats.fifo_pops += 1;
            }
            if self.model == Model::Dataflow && self.ovh > 0 {
                configure = Some((f - self.ovh, f));
            }
            let d = f + lat;
            fires[i] = f;
            done[i] = d;
            self.all_done = self.all_done.max(d);
            self.last_event = self.last_event.max(d);
            self.last_block[pe.0 as usize] = Some(bid);
            self.stats.ops += 1;
            self.ops.push(OpRecord {
                pe,
                fire: f,
                latency: lat as u32,
                act: op_act,
                configure,
                address: base + i as u16,
                block: bid,
                replica: replica as u8,
            });

            // Functional value.
            vals[i] = match node.opcode {
                Opcode::Load => {
                    let (a, w) = word.unwrap();
                    let st = &mut self.words[a][w];
                    st.load_fire = st.load_fire.max(f);
                    self.mem[a][w]
                }
                Opcode::Store => {
                    let (a, w) = word.unwrap();
                    let x = arg(1, &vals, &self.vars);
                    self.mem[a][w] = x;
                    let st = &mut self.words[a][w];
                    st.store_fire = Some(f);
                    st.store_done = d;
                    x
                }
                Opcode::LoopGen => {
                    let (lo, hi) = (arg(0, &vals, &self.vars), arg(1, &vals, &self.vars));
                    let (iv, go) = self.loops[bid.0].fire(!entering, lo, hi);
                    outcome = Some(go);
                    iv
                }
                Opcode::Branch => {
                    self.stats.divergences += 1;
                    let c = arg(0, &vals, &self.vars);
                    outcome = Some(c != 0);
                    c
                }
                op => {
                    let args: Vec<i32> = (0..node.inputs.len())
                        .map(|k| arg(k, &vals, &self.vars))
                        .collect();
                    op.eval(&args)
                }
            };
        }
        self.last_done[bid.0] = done.clone();
        let first_fire = fires.iter().copied().min().unwrap_or(ctl.time);
        let block_done = done.iter().copied().max().unwrap_or(ctl.time);
        if let Some(h) = body_of {
            self.rt[h.0].body_first.push(first_fire);
        }

        // Live-outs.
        let updates: Vec<(usize, i32, (u64, Option<Pe>))> = b
            .live_outs
            .iter()
            .map(|(v, r)| match *r {
                ValueRef::Node(q) => (v.0, vals[q.0], (done[q.0], Some(pl[q.0]))),
                ValueRef::LiveIn(u) => (v.0, self.vars[u.0], self.var_ready[u.0]),
                ValueRef::Imm(x) => (v.0, x, (ctl.time, None)),
            })
            .collect();
        for (v, x, ready) in updates {
            self.vars[v] = x;
            self.var_ready[v] = ready;
        }

        let Some((next, cond)) = next_block(b, outcome) else {
            return Ok(None);
        };

        // Loop-gen bookkeeping after the fire.
        let lg = b.dfg.iter().position(|x| x.opcode == Opcode::LoopGen);
        if let Some(g) = lg {
            let rt = &mut self.rt[bid.0];
            rt.prev_fire = fires[g];
            if entering {
                rt.entry_fire = fires[g];
            }
            if cond == EdgeCond::LoopExit {
                rt.replica_free[replica] = fires[g] + loop_ii;
            }
        }

        let sender = sender_node(b).map(|s| s.0);
        let next_ctl = match self.model {
            _ if n == 0 => ctl,
            Model::Marionette => {
                let t = if let Some(g) = lg {
                    if cond == EdgeCond::LoopExit {
                        self.rt[bid.0].entry_fire + self.lc
                    } else {
                        fires[g] + self.lc
                    }
                } else if let Some(s) = sender.filter(|&s| b.dfg[s].opcode == Opcode::Branch) {
                    done[s] + self.lc
                } else if self.proactive {
                    ctl.time + self.cfg + self.lc
                } else {
                    block_done + self.lc
                };
                Ctl { time: t, src: None }
            }
            Model::VonNeumann => {
                if let Some(g) = lg {
                    Ctl {
                        time: fires[g],
                        src: None,
                    }
                } else if let Some(s) = sender.filter(|&s| b.dfg[s].opcode == Opcode::Branch) {
                    // The CCU idles the whole array while it reconfigures the target lane.
                    let w = done[s].max(self.all_done);
                    let end = w + self.arch.ccu_roundtrip as u64;
                    self.windows.push((w, end));
                    self.stats.ccu_events += 1;
                    self.stats.ccu_windows += 1;
                    self.floor = self.floor.max(end);
                    self.last_event = self.last_event.max(end);
                    Ctl {
                        time: end,
                        src: None,
                    }
                } else {
                    ctl
                }
            }
            Model::Dataflow => {
                let s = lg.or(sender).unwrap_or(0);
                Ctl {
                    time: done[s],
                    src: Some(pl[s]),
                }
            }
        };
        let body = (b.loop_header && cond == EdgeCond::Always).then_some(bid);
        Ok(Some((next, cond, next_ctl, body)))
    }

    /// Earliest fire of a loop-gen beyond its operand and activation constraints.
    fn loopgen_floor(
        &mut self,
        bid: BlockId,
        replica: usize,
        entering: bool,
        ii: u64,
        pe: Pe,
    ) -> Result<u64, SimError> {
        let b = self.p.block(bid);
        let rt = &self.rt[bid.0];
        if !entering {
            let mut t = rt.prev_fire + ii;
            let depth = self.arch.fifo_depth.max(1);
            if rt.iter >= depth {
                if let Some(&bf) = rt.body_first.get(rt.iter - depth) {
                    t = t.max(bf);
                }
            }
            return Ok(t);
        }
        let mut t = rt.replica_free.get(replica).copied().unwrap_or(0);
        if let Some(LoopBound::Dynamic { block, node }) = b.loop_bound {
            let produced = self.last_done[block.0].get(node.0).copied().unwrap_or(0);
            match self.model {
                Model::Marionette => {
                    let fifo = self
                        .m
                        .fifos
                        .iter()
                        .find(|f| f.header == bid)
                        .map_or(0, |f| f.fifo as usize);
                    let depth = self.arch.fifo_depth;
                    let log = &self.fifo_log[fifo];
                    if depth == 0 {
                        return Err(SimError::Deadlock {
                            cycle: produced,
                            blame: format!(
                                "{block}/n{} cannot push the bound of {bid} into control FIFO {fifo} of depth 0; {pe} waits on it",
                                node.0
                            ),
                        });
                    }
                    // A full FIFO stalls the producer until the entry `depth` back is popped.
                    let push = if log.len() >= depth {
                        produced.max(log[log.len() - depth].1)
                    } else {
                        produced
                    };
                    t = t.max(push + self.lc);
                    self.stats.fifo_pushes += 1;
                    self.pending_push = Some((fifo, push));
                }
                Model::VonNeumann => {
                    // Bound delivered through the CCU.
                    self.stats.ccu_events += 1;
                    t = t.max(produced + self.arch.ccu_roundtrip as u64);
                }
                Model::Dataflow => {
                    let from = self.m.blocks[block.0].placements[0][node.0];
                    t = t.max(produced + self.arch.hop_latency(from, pe) as u64);
                }
            }
        }
        Ok(t)
    }

    fn finish(self) -> SimOutput {
        let mut stats = self.stats;
        // Compute cycles: the union of execution intervals per PE.
        let mut spans: Vec<Vec<(u64, u64)>> = vec![Vec::new(); self.arch.pe_count()];
        for o in &self.ops {
            spans[o.pe.0 as usize].push((o.fire, o.fire + o.latency.max(1) as u64));
        }
        for (pe, mut v) in spans.into_iter().enumerate() {
            v.sort_unstable();
            let mut total = 0;
            let mut reach = 0;
            for (a, b) in v {
                let a = a.max(reach);
                if b > a {
                    total += b - a;
                    reach = b;
                }
            }
            stats.busy[pe] = total;
        }
        stats.cycles = self
            .ops
            .iter()
            .map(|o| o.fire + o.latency.max(1) as u64)
            .chain(self.windows.iter().map(|w| w.1))
            .max()
            .unwrap_or(0);
        let mut high = 0;
        for log in &self.fifo_log {
            let mut ev: Vec<(u64, i32)> =
                log.iter().flat_map(|&(a, b)| [(a, 1), (b, -1)]).collect();
            // Pops before pushes at the same cycle.
            ev.sort_by_key(|&(t, d)| (t, d));
            let mut cur = 0i64;
            for (_, d) in ev {
                cur += d as i64;
                high = high.max(cur as usize);
            }
        }
        stats.fifo_high_water = high;
        SimOutput {
            memory: MemoryImage::from_vecs(self.p, self.mem),
            stats,
            ops: self.ops,
            ccu_windows: self.windows,
            pe_count: self.arch.pe_count(),
        }
    }
}
