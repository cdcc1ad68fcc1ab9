//! CS-Benes control network: a copy (spreading) front end followed by a Benes
//! permutation network, routed with the looping algorithm.
//!
//! Layout of a network with `N` ports:
//!
//! * `cs_stages`: an arrangement Benes (2·log2 N − 1 columns, straight/cross
//!   only) that places each source on the line the spreader expects, followed
//!   by log2 N spreading columns whose elements may broadcast.
//! * `benes_stages`: 2·log2 N − 1 columns that deliver every copy to its output.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::arch::ArchConfig;

/// Number of control FIFO ports on the network.
pub const CONTROL_FIFOS: usize = 4;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NetError {
    #[error("port count {0} is not a power of two >= 4")]
    NotPowerOfTwo(usize),
    #[error("oversubscribed: {requested} outputs requested on {ports} ports")]
    Oversubscribed { requested: usize, ports: usize },
    #[error("port {0} out of range")]
    PortOutOfRange(usize),
    #[error("output {0} requested by two inputs")]
    OverlappingOutputs(usize),
    #[error("input {0} has an empty output set")]
    EmptyOutputSet(usize),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum CsState {
    Straight,
    Cross,
    /// Upper input copied to both outputs.
    UpperBroadcast,
    /// Lower input copied to both outputs.
    LowerBroadcast,
}

impl CsState {
    fn mirrored(self) -> CsState {
        match self {
            CsState::Straight => CsState::Cross,
            CsState::Cross => CsState::Straight,
            CsState::UpperBroadcast => CsState::LowerBroadcast,
            CsState::LowerBroadcast => CsState::UpperBroadcast,
        }
    }

    /// Applies the element to its two input payloads.
    pub fn apply<T: Clone>(self, a: Option<T>, b: Option<T>) -> (Option<T>, Option<T>) {
        match self {
            CsState::Straight => (a, b),
            CsState::Cross => (b, a),
            CsState::UpperBroadcast => (a.clone(), a),
            CsState::LowerBroadcast => (b.clone(), b),
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum BenesState {
    Straight,
    Cross,
}

impl BenesState {
    pub fn apply<T>(self, a: Option<T>, b: Option<T>) -> (Option<T>, Option<T>) {
        match self {
            BenesState::Straight => (a, b),
            BenesState::Cross => (b, a),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SwitchSettings {
    pub cs: Vec<Vec<CsState>>,
    pub benes: Vec<Vec<BenesState>>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CsBenesNetwork {
    pub port_count: usize,
    /// Current element states; all straight after `build`.
    pub cs_stages: Vec<Vec<CsState>>,
    pub benes_stages: Vec<Vec<BenesState>>,
    /// `cs_links[c][line]`: input line of column `c + 1` fed by output `line` of column `c`.
    pub cs_links: Vec<Vec<usize>>,
    pub benes_links: Vec<Vec<usize>>,
    pub latency_per_stage: u32,
    log2: usize,
}

/// A multicast request: input port to the set of outputs it must reach.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RouteRequest {
    pub map: BTreeMap<usize, BTreeSet<usize>>,
}

impl RouteRequest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn permutation(perm: &[usize]) -> Self {
        RouteRequest {
            map: perm
                .iter()
                .enumerate()
                .map(|(i, &o)| (i, BTreeSet::from([o])))
                .collect(),
        }
    }

    pub fn add(&mut self, input: usize, outputs: impl IntoIterator<Item = usize>) -> &mut Self {
        self.map.entry(input).or_default().extend(outputs);
        self
    }

    pub fn check(&self, n: usize) -> Result<(), NetError> {
        let requested: usize = self.map.values().map(|s| s.len()).sum();
        if requested > n {
            return Err(NetError::Oversubscribed {
                requested,
                ports: n,
            });
        }
        let mut seen = BTreeSet::new();
        for (&i, outs) in &self.map {
            if i >= n {
                return Err(NetError::PortOutOfRange(i));
            }
            if outs.is_empty() {
                return Err(NetError::EmptyOutputSet(i));
            }
            for &o in outs {
                if o >= n {
                    return Err(NetError::PortOutOfRange(o));
                }
                if !seen.insert(o) {
                    return Err(NetError::OverlappingOutputs(o));
                }
            }
        }
        Ok(())
    }
}

fn fill_benes_links(m: usize, base: usize, c0: usize, links: &mut [Vec<usize>]) {
    if m == 2 {
        return;
    }
    let h = m / 2;
    let cl = c0 + 2 * m.trailing_zeros() as usize - 2;
    for i in 0..h {
        links[c0][base + 2 * i] = base + i;
        links[c0][base + 2 * i + 1] = base + h + i;
        links[cl - 1][base + i] = base + 2 * i;
        links[cl - 1][base + h + i] = base + 2 * i + 1;
    }
    fill_benes_links(h, base, c0 + 1, links);
    fill_benes_links(h, base + h, c0 + 1, links);
}

fn benes_links(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut links = vec![vec![0; n]; 2 * k - 2];
    fill_benes_links(n, 0, 0, &mut links);
    links
}

/// Builds a network with `n_ports` ports, every element straight.
pub fn build(n_ports: usize) -> Result<CsBenesNetwork, NetError> {
    if n_ports < 4 || !n_ports.is_power_of_two() {
        return Err(NetError::NotPowerOfTwo(n_ports));
    }
    let k = n_ports.trailing_zeros() as usize;
    let half = n_ports / 2;
    let blinks = benes_links(n_ports, k);

    // cs columns: arrangement benes (2k-1) then spreader (k)
    let mut cs_links = blinks.clone();
    cs_links.push((0..n_ports).collect());
    cs_links.extend(blinks[..k - 1].iter().cloned());

    let mut net = CsBenesNetwork {
        port_count: n_ports,
        cs_stages: vec![vec![CsState::Straight; half]; 3 * k - 1],
        benes_stages: vec![vec![BenesState::Straight; half]; 2 * k - 1],
        cs_links,
        benes_links: blinks,
        latency_per_stage: 0,
        log2: k,
    };
    // Output wiring of the spreader undoes its straight-through shuffle so an
    // all-straight network is the identity.
    let sigma = net.spreader_straight_map();
    let mut out_link = vec![0; n_ports];
    for (x, &s) in sigma.iter().enumerate() {
        out_link[s] = x;
    }
    net.cs_links.push(out_link);
    Ok(net)
}

impl CsBenesNetwork {
    pub fn log2(&self) -> usize {
        self.log2
    }

    pub fn arrange_columns(&self) -> usize {
        2 * self.log2 - 1
    }

    /// Where each spreader input ends up with every spreader element straight.
    fn spreader_straight_map(&self) -> Vec<usize> {
        let n = self.port_count;
        let first = self.arrange_columns();
        let mut lines: Vec<Option<usize>> = (0..n).map(Some).collect();
        for c in first..first + self.log2 {
            lines = column(&lines, &vec![CsState::Straight; n / 2], |s, a, b| {
                s.apply(a, b)
            });
            if c + 1 < first + self.log2 {
                lines = relink(&lines, &self.cs_links[c]);
            }
        }
        let mut map = vec![0; n];
        for (line, src) in lines.iter().enumerate() {
            map[src.unwrap()] = line;
        }
        map
    }

    /// Total switching columns a payload traverses.
    pub fn depth(&self) -> usize {
        self.cs_stages.len() + self.benes_stages.len()
    }

    /// Stores routed settings as the network's current state.
    pub fn configure(&mut self, settings: &SwitchSettings) {
        self.cs_stages = settings.cs.clone();
        self.benes_stages = settings.benes.clone();
    }
}

fn column<S: Copy, T: Clone>(
    lines: &[Option<T>],
    states: &[S],
    f: impl Fn(S, Option<T>, Option<T>) -> (Option<T>, Option<T>),
) -> Vec<Option<T>> {
    let mut out = vec![None; lines.len()];
    for (s, &st) in states.iter().enumerate() {
        let (a, b) = f(st, lines[2 * s].clone(), lines[2 * s + 1].clone());
        out[2 * s] = a;
        out[2 * s + 1] = b;
    }
    out
}

fn relink<T: Clone>(lines: &[Option<T>], link: &[usize]) -> Vec<Option<T>> {
    let mut out = vec![None; lines.len()];
    for (i, v) in lines.iter().enumerate() {
        out[link[i]] = v.clone();
    }
    out
}

/// Pushes payloads through configured settings; returns the payload seen at each output.
pub fn propagate<T: Clone>(
    net: &CsBenesNetwork,
    settings: &SwitchSettings,
    inputs: &[Option<T>],
) -> Vec<Option<T>> {
    let mut lines = inputs.to_vec();
    for (c, states) in settings.cs.iter().enumerate() {
        lines = column(&lines, states, |s, a, b| s.apply(a, b));
        lines = relink(&lines, &net.cs_links[c]);
    }
    let last = settings.benes.len() - 1;
    for (c, states) in settings.benes.iter().enumerate() {
        lines = column(&lines, states, |s, a, b| s.apply(a, b));
        if c < last {
            lines = relink(&lines, &net.benes_links[c]);
        }
    }
    lines
}

/// Looping algorithm over a Benes sub-network of `m` lines at `base`.
fn route_benes(m: usize, base: usize, c0: usize, perm: &[usize], cols: &mut [Vec<BenesState>]) {
    let st = |straight: bool| {
        if straight {
            BenesState::Straight
        } else {
            BenesState::Cross
        }
    };
    if m == 2 {
        cols[c0][base / 2] = st(perm[0] == 0);
        return;
    }
    let h = m / 2;
    let mut inv = vec![0; m];
    for (i, &o) in perm.iter().enumerate() {
        inv[o] = i;
    }
    let mut upper: Vec<Option<bool>> = vec![None; m];
    for start in (0..m).step_by(2) {
        if upper[start].is_some() {
            continue;
        }
        let mut x = start;
        loop {
            upper[x] = Some(true);
            let y = inv[perm[x] ^ 1];
            upper[y] = Some(false);
            x = y ^ 1;
            if upper[x].is_some() {
                break;
            }
        }
    }
    let cl = c0 + 2 * m.trailing_zeros() as usize - 2;
    let mut pu = vec![0; h];
    let mut pl = vec![0; h];
    for s in 0..h {
        cols[c0][base / 2 + s] = st(upper[2 * s] == Some(true));
    }
    for x in 0..m {
        let o = perm[x];
        if upper[x] == Some(true) {
            pu[x / 2] = o / 2;
        } else {
            pl[x / 2] = o / 2;
        }
    }
    for j in 0..h {
        cols[cl][base / 2 + j] = st(upper[inv[2 * j]] == Some(true));
    }
    route_benes(h, base, c0 + 1, &pu, cols);
    route_benes(h, base + h, c0 + 1, &pl, cols);
}

fn benes_settings(n: usize, perm: &[usize]) -> Vec<Vec<BenesState>> {
    let k = n.trailing_zeros() as usize;
    let mut cols = vec![vec![BenesState::Straight; n / 2]; 2 * k - 1];
    route_benes(n, 0, 0, perm, &mut cols);
    cols
}

/// Spreader plan for a sub-network: which line each source enters on and the
/// element states of every column below.
#[derive(Clone, Debug)]
struct SpreadPlan {
    m: usize,
    line_of: BTreeMap<usize, usize>,
    states: Vec<CsState>,
    upper: Option<Box<SpreadPlan>>,
    lower: Option<Box<SpreadPlan>>,
}

impl SpreadPlan {
    fn source_at(&self, line: usize) -> Option<usize> {
        self.line_of
            .iter()
            .find(|(_, &l)| l == line)
            .map(|(&s, _)| s)
    }

    /// Relabels lines by `x -> x ^ c`; an automorphism of the recursive wiring.
    fn relabel(&mut self, c: usize) {
        if c == 0 {
            return;
        }
        for l in self.line_of.values_mut() {
            *l ^= c;
        }
        if self.m == 1 {
            return;
        }
        let ce = c >> 1;
        let mut states = vec![CsState::Straight; self.states.len()];
        for (s, &st) in self.states.iter().enumerate() {
            states[s ^ ce] = if c & 1 == 1 { st.mirrored() } else { st };
        }
        self.states = states;
        if let Some(u) = &mut self.upper {
            u.relabel(ce);
        }
        if let Some(l) = &mut self.lower {
            l.relabel(ce);
        }
    }

    fn write(&self, base_elem: usize, col: usize, cols: &mut [Vec<CsState>]) {
        if self.m == 1 {
            return;
        }
        let h = self.m / 2;
        for (s, &st) in self.states.iter().enumerate() {
            cols[col][base_elem + s] = st;
        }
        if let Some(u) = &self.upper {
            u.write(base_elem, col + 1, cols);
        }
        if let Some(l) = &self.lower {
            l.write(base_elem + h / 2, col + 1, cols);
        }
    }
}

fn plan_spread(m: usize, demands: &[(usize, usize)]) -> SpreadPlan {
    if m == 1 {
        return SpreadPlan {
            m,
            line_of: demands.iter().map(|&(s, _)| (s, 0)).collect(),
            states: Vec::new(),
            upper: None,
            lower: None,
        };
    }
    let h = m / 2;
    let (mut up, mut lo) = (Vec::new(), Vec::new());
    let mut straddler = None;
    let mut pos = 0;
    for &(s, f) in demands {
        let end = pos + f;
        if end <= h {
            up.push((s, f));
        } else if pos >= h {
            lo.push((s, f));
        } else {
            up.push((s, h - pos));
            lo.push((s, end - h));
            straddler = Some(s);
        }
        pos = end;
    }
    let upper = plan_spread(h, &up);
    let mut lower = plan_spread(h, &lo);
    if let Some(s) = straddler {
        lower.relabel(upper.line_of[&s] ^ lower.line_of[&s]);
    }
    let mut line_of = BTreeMap::new();
    let mut states = vec![CsState::Straight; h];
    for (e, state) in states.iter_mut().enumerate() {
        match (upper.source_at(e), lower.source_at(e)) {
            (Some(x), Some(y)) if x == y => {
                *state = CsState::UpperBroadcast;
                line_of.insert(x, 2 * e);
            }
            (u, l) => {
                if let Some(x) = u {
                    line_of.insert(x, 2 * e);
                }
                if let Some(y) = l {
                    line_of.insert(y, 2 * e + 1);
                }
            }
        }
    }
    SpreadPlan {
        m,
        line_of,
        states,
        upper: if h > 1 || !up.is_empty() {
            Some(Box::new(upper))
        } else {
            None
        },
        lower: if h > 1 || !lo.is_empty() {
            Some(Box::new(lower))
        } else {
            None
        },
    }
}

/// Routes a multicast request. Deterministic for equal inputs.
pub fn route(net: &CsBenesNetwork, req: &RouteRequest) -> Result<SwitchSettings, NetError> {
    let n = net.port_count;
    req.check(n)?;
    let k = net.log2;
    let arrange = net.arrange_columns();
    let mut cs = vec![vec![CsState::Straight; n / 2]; arrange + k];

    let unicast = req.map.values().all(|s| s.len() == 1);
    // line entering the spreader for each source
    let arrangement: Vec<usize> = if unicast {
        (0..n).collect()
    } else {
        let demands: Vec<(usize, usize)> = req.map.iter().map(|(&i, s)| (i, s.len())).collect();
        let plan = plan_spread(n, &demands);
        plan.write(0, arrange, &mut cs);
        let mut perm = vec![usize::MAX; n];
        let mut used = vec![false; n];
        for (&src, &line) in &plan.line_of {
            perm[src] = line;
            used[line] = true;
        }
        let mut free = (0..n).filter(|&l| !used[l]);
        for p in perm.iter_mut() {
            if *p == usize::MAX {
                *p = free.next().unwrap();
            }
        }
        perm
    };
    if !unicast {
        let cols = benes_settings(n, &arrangement);
        for (c, col) in cols.into_iter().enumerate() {
            cs[c] = col
                .into_iter()
                .map(|s| match s {
                    BenesState::Straight => CsState::Straight,
                    BenesState::Cross => CsState::Cross,
                })
                .collect();
        }
    }

    // copies present at the benes input
    let inputs: Vec<Option<usize>> = (0..n)
        .map(|p| req.map.contains_key(&p).then_some(p))
        .collect();
    let partial = SwitchSettings {
        cs: cs.clone(),
        benes: Vec::new(),
    };
    let mut lines = inputs;
    for (c, states) in partial.cs.iter().enumerate() {
        lines = column(&lines, states, |s, a, b| s.apply(a, b));
        lines = relink(&lines, &net.cs_links[c]);
    }

    let mut pending: BTreeMap<usize, Vec<usize>> = req
        .map
        .iter()
        .map(|(&i, s)| (i, s.iter().copied().collect()))
        .collect();
    let mut perm = vec![usize::MAX; n];
    let mut taken = vec![false; n];
    for (line, src) in lines.iter().enumerate() {
        if let Some(src) = src {
            let outs = pending.get_mut(src).expect("copy of unrequested source");
            let o = outs.remove(0);
            perm[line] = o;
            taken[o] = true;
        }
    }
    assert!(
        pending.values().all(|v| v.is_empty()),
        "spreader produced too few copies"
    );
    let mut free = (0..n).filter(|&o| !taken[o]);
    for p in perm.iter_mut() {
        if *p == usize::MAX {
            *p = free.next().unwrap();
        }
    }
    Ok(SwitchSettings {
        cs,
        benes: benes_settings(n, &perm),
    })
}

/// End-to-end control transfer latency; a parameter rather than a topology property.
pub fn transfer_latency(_net: &CsBenesNetwork, arch: &ArchConfig) -> u32 {
    arch.control_net_latency
}

/// Fixed port assignment: PEs row-major, then control FIFOs, then the controller.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct PortMap {
    pub pes: usize,
    pub fifos: usize,
    pub port_count: usize,
}

impl PortMap {
    pub fn for_arch(arch: &ArchConfig) -> Self {
        let pes = arch.pe_count();
        let used = pes + CONTROL_FIFOS + 1;
        PortMap {
            pes,
            fifos: CONTROL_FIFOS,
            port_count: used.next_power_of_two().max(4),
        }
    }

    pub fn pe(&self, pe: usize) -> usize {
        pe
    }

    pub fn fifo(&self, f: usize) -> usize {
        self.pes + f
    }

    pub fn controller(&self) -> usize {
        self.pes + self.fifos
    }
}
