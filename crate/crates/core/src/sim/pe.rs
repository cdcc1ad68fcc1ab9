//! Cycle-stepped state machines of the PE control parts, the CCU and the
//! control-flow scheduler. The event-timed engine in `engine.rs` uses the
//! same timing rules in closed form; these are the reference for them.

use std::collections::{BTreeSet, VecDeque};

/// Trigger phase of a Marionette PE.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum TriggerPhase {
    Check,
    Configure { target: u16, remaining: u32 },
    Steady,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MarionettePeState {
    pub phase: TriggerPhase,
    pub current: Option<u16>,
    /// Control address waiting while a configuration is in progress.
    pub pending: Option<u16>,
    /// Addresses present in the local instruction table.
    pub table: BTreeSet<u16>,
    pub configure_cycles: u32,
}

impl MarionettePeState {
    pub fn new(table: impl IntoIterator<Item = u16>, configure_cycles: u32) -> Self {
        MarionettePeState {
            phase: TriggerPhase::Check,
            current: None,
            pending: None,
            table: table.into_iter().collect(),
            configure_cycles,
        }
    }
}

/// Inputs seen by a PE in one cycle.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq)]
pub struct PeCycleInput {
    pub control: Option<u16>,
    pub operands_ready: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PeCycleOutput {
    /// Address computed under this cycle, if any.
    pub computed: Option<u16>,
    /// Configuration that completed at the end of this cycle.
    pub configured: Option<u16>,
    /// The control input could not be buffered; the sender must retry.
    pub refused: bool,
    pub unknown_address: Option<u16>,
}

/// One cycle of a Marionette PE. Compute runs under the configuration held
/// at the start of the cycle while a new one loads, so a control arrival
/// never costs a compute bubble; the new configuration is live next cycle.
pub fn step_marionette_pe(
    state: &MarionettePeState,
    input: PeCycleInput,
) -> (MarionettePeState, PeCycleOutput) {
    let mut s = state.clone();
    let mut out = PeCycleOutput {
        computed: state.current.filter(|_| input.operands_ready),
        ..Default::default()
    };
    if let Some(addr) = input.control {
        if !s.table.contains(&addr) {
            out.unknown_address = Some(addr);
        } else if let TriggerPhase::Configure { .. } = s.phase {
            if s.pending.is_some() {
                out.refused = true;
            } else {
                s.pending = Some(addr);
            }
        } else {
            s.phase = TriggerPhase::Configure {
                target: addr,
                remaining: s.configure_cycles,
            };
        }
    }
    if let TriggerPhase::Configure { target, remaining } = s.phase {
        if remaining <= 1 {
            s.current = Some(target);
            out.configured = Some(target);
            s.phase = match s.pending.take() {
                Some(next) => TriggerPhase::Configure {
                    target: next,
                    remaining: s.configure_cycles,
                },
                None => TriggerPhase::Steady,
            };
        } else {
            s.phase = TriggerPhase::Configure {
                target,
                remaining: remaining - 1,
            };
        }
    }
    (s, out)
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum DirectiveMode {
    Dfg,
    Branch,
    Loop,
}

/// Sender part of an instruction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SenderDirective {
    pub mode: DirectiveMode,
    pub targets: Vec<u16>,
    /// Branch mode: `[taken, not_taken]`; otherwise one address.
    pub addresses: Vec<u16>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct ControlMessage {
    pub cycle: u64,
    pub port: u16,
    pub address: u16,
}

/// What the sender has observed about its instruction.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SenderState {
    /// Cycle at which this PE's own configuration completed.
    pub configured_at: Option<u64>,
    /// Branch outcome and the cycle it resolved.
    pub resolved: Option<(u64, bool)>,
    /// Loop mode: first iteration cycle and II.
    pub loop_start: Option<(u64, u32)>,
    /// Loop bounds queued in the control FIFO.
    pub bounds: VecDeque<u32>,
}

/// Control messages a sender emits.
///
/// Dfg mode sends on configuration completion, before any result exists.
/// Branch mode waits for the outcome. Loop mode pops one bound from the
/// FIFO and emits one iteration start every II cycles.
pub fn sender_emit(directive: &SenderDirective, state: &mut SenderState) -> Vec<ControlMessage> {
    let fan = |cycle: u64, address: u16| {
        directive.targets.iter().map(move |&port| ControlMessage {
            cycle,
            port,
            address,
        })
    };
    match directive.mode {
        DirectiveMode::Dfg => match state.configured_at {
            Some(t) => fan(t, directive.addresses[0]).collect(),
            None => Vec::new(),
        },
        DirectiveMode::Branch => match state.resolved {
            Some((t, taken)) => fan(t, directive.addresses[if taken { 0 } else { 1 }]).collect(),
            None => Vec::new(),
        },
        DirectiveMode::Loop => {
            let (Some((start, ii)), Some(bound)) = (state.loop_start, state.bounds.pop_front())
            else {
                return Vec::new();
            };
            (0..bound as u64)
                .flat_map(|k| fan(start + k * ii as u64, directive.addresses[0]))
                .collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("control FIFO full ({depth} entries); producer stalls")]
pub struct FifoFull {
    pub depth: usize,
}

/// Pushes onto a bounded control FIFO; a full FIFO refuses and the producer stalls.
pub fn fifo_push<T>(fifo: &mut VecDeque<T>, depth: usize, item: T) -> Result<(), FifoFull> {
    if fifo.len() >= depth {
        return Err(FifoFull { depth });
    }
    fifo.push_back(item);
    Ok(())
}

/// Centralized control unit of the von Neumann baseline.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CcuState {
    /// Reconfiguration in flight: (window end, target address).
    pub busy: Option<(u64, u16)>,
    pub events: u64,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum CcuEvent {
    /// The whole array idles for `[start, end)`.
    IdleWindow { start: u64, end: u64 },
    /// Target PEs switch their active instruction.
    Reconfigure { cycle: u64, address: u16 },
}

/// One cycle of the CCU. `branch` is a resolved branch target, if any.
pub fn ccu_step(
    state: &CcuState,
    cycle: u64,
    branch: Option<u16>,
    roundtrip: u32,
) -> (CcuState, Vec<CcuEvent>) {
    let mut s = state.clone();
    let mut ev = Vec::new();
    if let Some((end, addr)) = s.busy {
        if cycle == end {
            ev.push(CcuEvent::Reconfigure {
                cycle,
                address: addr,
            });
            s.busy = None;
        }
    }
    if let Some(addr) = branch {
        let end = cycle + roundtrip as u64;
        s.events += 1;
        ev.push(CcuEvent::IdleWindow { start: cycle, end });
        if roundtrip == 0 {
            ev.push(CcuEvent::Reconfigure {
                cycle,
                address: addr,
            });
        } else {
            s.busy = Some((end, addr));
        }
    }
    (s, ev)
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Token {
    pub tag: u16,
    pub data: i32,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum DataflowPhase {
    Idle,
    Configure { token: Token, remaining: u32 },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DataflowPeState {
    pub queue: VecDeque<Token>,
    pub phase: DataflowPhase,
    /// Tags with a local instruction.
    pub tags: BTreeSet<u16>,
    pub overhead: u32,
    pub depth: usize,
}

impl DataflowPeState {
    pub fn new(tags: impl IntoIterator<Item = u16>, overhead: u32, depth: usize) -> Self {
        DataflowPeState {
            queue: VecDeque::new(),
            phase: DataflowPhase::Idle,
            tags: tags.into_iter().collect(),
            overhead,
            depth,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DataflowStep {
    /// Token executed this cycle.
    pub fired: Option<Token>,
    pub configuring: bool,
    pub unmatched: Option<u16>,
    pub dropped: bool,
}

/// One cycle of a tagged-token PE: every execution is preceded by
/// `overhead` cycles of tag-driven configuration.
pub fn step_dataflow_pe(
    state: &DataflowPeState,
    token: Option<Token>,
) -> (DataflowPeState, DataflowStep) {
    let mut s = state.clone();
    let mut out = DataflowStep::default();
    if let Some(t) = token {
        if !s.tags.contains(&t.tag) {
            out.unmatched = Some(t.tag);
        } else if s.queue.len() >= s.depth {
            out.dropped = true;
        } else {
            s.queue.push_back(t);
        }
    }
    if s.phase == DataflowPhase::Idle {
        if let Some(t) = s.queue.pop_front() {
            s.phase = DataflowPhase::Configure {
                token: t,
                remaining: s.overhead,
            };
        }
    }
    match s.phase {
        DataflowPhase::Configure {
            token,
            remaining: 0,
        } => {
            out.fired = Some(token);
            s.phase = DataflowPhase::Idle;
        }
        DataflowPhase::Configure { token, remaining } => {
            out.configuring = true;
            s.phase = DataflowPhase::Configure {
                token,
                remaining: remaining - 1,
            };
        }
        DataflowPhase::Idle => {}
    }
    (s, out)
}

/// A control input competing for the scheduler.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct ArbiterCandidate {
    pub loop_depth: usize,
    /// FIFO arrival order; smaller arrived earlier.
    pub arrival: u64,
}

/// Deeper loops win; equal depth goes to the earlier arrival.
pub fn scheduler_arbitrate(candidates: &[ArbiterCandidate]) -> Option<usize> {
    (0..candidates.len()).min_by_key(|&i| {
        (
            std::cmp::Reverse(candidates[i].loop_depth),
            candidates[i].arrival,
            i,
        )
    })
}
