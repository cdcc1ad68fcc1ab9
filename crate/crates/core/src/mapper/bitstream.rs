//! Binary configuration bitstream.
//!
//! All integers are little-endian. Layout:
//!
//! ```text
//! header   "MRNT" version:u16 rows:u8 cols:u8 strategy:u8
//! section  tag:u8 len:u32 payload[len]     (repeated, in tag order)
//! ```
//!
//! A mapping of an empty program is the header alone. The instruction record
//! (section PEIN) is 16 fixed bytes followed by `target_count` pairs of
//! (port:u16, address:u16).

use std::collections::HashMap;

use thiserror::Error;

use super::*;

pub const MAGIC: &[u8; 4] = b"MRNT";
pub const BITSTREAM_VERSION: u16 = 1;

const META: u8 = 1;
const MEMS: u8 = 2;
const VARS: u8 = 3;
const IMMS: u8 = 4;
const BLKS: u8 = 5;
const PEIN: u8 = 6;
const ROUT: u8 = 7;
const FIFO: u8 = 8;
const CEDG: u8 = 9;
const DROU: u8 = 10;

const NONE: u16 = 0xFFFF;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BitstreamError {
    #[error("bad magic: not a configuration bitstream")]
    BadMagic,
    #[error("version mismatch: found {found}, expected {expected}")]
    VersionMismatch { found: u16, expected: u16 },
    #[error("truncated bitstream at byte {offset}")]
    Truncated { offset: usize },
    #[error("corrupt bitstream: {0}")]
    Corrupt(String),
}

/// Array dimensions recorded in the header.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct ArchEcho {
    pub rows: u8,
    pub cols: u8,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum SenderMode {
    None,
    Dfg,
    Branch,
    Loop,
}

impl SenderMode {
    fn code(self) -> u8 {
        match self {
            SenderMode::None => 0,
            SenderMode::Dfg => 1,
            SenderMode::Branch => 2,
            SenderMode::Loop => 3,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        [
            SenderMode::None,
            SenderMode::Dfg,
            SenderMode::Branch,
            SenderMode::Loop,
        ]
        .get(c as usize)
        .copied()
    }

    pub fn for_opcode(op: Opcode) -> Self {
        match op {
            Opcode::Branch => SenderMode::Branch,
            Opcode::LoopGen => SenderMode::Loop,
            _ => SenderMode::Dfg,
        }
    }
}

/// Operand field: top two bits select node / variable / immediate / none.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum SourceOperand {
    Node(u16),
    Var(u16),
    /// Index into the immediate table.
    Imm(u16),
    None,
}

impl SourceOperand {
    fn encode(self) -> u16 {
        match self {
            SourceOperand::Node(n) => n & 0x3FFF,
            SourceOperand::Var(v) => 0x4000 | (v & 0x3FFF),
            SourceOperand::Imm(i) => 0x8000 | (i & 0x3FFF),
            SourceOperand::None => NONE,
        }
    }

    fn decode(w: u16) -> Self {
        let low = w & 0x3FFF;
        match w >> 14 {
            0 => SourceOperand::Node(low),
            1 => SourceOperand::Var(low),
            2 => SourceOperand::Imm(low),
            _ => SourceOperand::None,
        }
    }
}

/// One decoded 16-byte instruction record plus its sender targets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PeInstruction {
    pub address: u16,
    /// Configuration is held until a new control address arrives.
    pub persist: bool,
    pub replica: u8,
    pub opcode: Opcode,
    pub srcs: [SourceOperand; 3],
    /// Schedule time within the block; the modulo slot is `time % ii`.
    pub time: u16,
    /// Array of a load or store.
    pub array: Option<u16>,
    pub sender: SenderMode,
    /// (network port, instruction address) pairs.
    pub targets: Vec<(u16, u16)>,
}

impl PeInstruction {
    fn write(&self, w: &mut Vec<u8>) {
        let flags = self.persist as u8 | ((self.replica > 0) as u8) << 1 | self.replica << 2;
        put16(w, self.address);
        w.push(flags);
        w.push(self.opcode.code());
        for s in self.srcs {
            put16(w, s.encode());
        }
        put16(w, self.time);
        put16(w, self.array.unwrap_or(NONE));
        w.push(self.sender.code());
        w.push(self.targets.len() as u8);
        for &(port, addr) in &self.targets {
            put16(w, port);
            put16(w, addr);
        }
    }

    fn read(r: &mut Reader) -> Result<Self, BitstreamError> {
        let address = r.u16()?;
        let flags = r.u8()?;
        let op = r.u8()?;
        let opcode =
            Opcode::from_code(op).ok_or_else(|| BitstreamError::Corrupt(format!("opcode {op}")))?;
        let srcs = [
            SourceOperand::decode(r.u16()?),
            SourceOperand::decode(r.u16()?),
            SourceOperand::decode(r.u16()?),
        ];
        let time = r.u16()?;
        let aux = r.u16()?;
        let mode = r.u8()?;
        let sender = SenderMode::from_code(mode)
            .ok_or_else(|| BitstreamError::Corrupt(format!("sender mode {mode}")))?;
        let n = r.u8()?;
        let mut targets = Vec::with_capacity(n as usize);
        for _ in 0..n {
            targets.push((r.u16()?, r.u16()?));
        }
        Ok(PeInstruction {
            address,
            persist: flags & 1 != 0,
            replica: flags >> 2,
            opcode,
            srcs,
            time,
            array: (aux != NONE).then_some(aux),
            sender,
            targets,
        })
    }
}

fn put16(w: &mut Vec<u8>, v: u16) {
    w.extend_from_slice(&v.to_le_bytes());
}

fn put32(w: &mut Vec<u8>, v: u32) {
    w.extend_from_slice(&v.to_le_bytes());
}

fn put_str(w: &mut Vec<u8>, s: &str) {
    put16(w, s.len() as u16);
    w.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
    /// Absolute offset of `data[0]`, for error messages.
    base: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], BitstreamError> {
        if self.pos + n > self.data.len() {
            return Err(BitstreamError::Truncated {
                offset: self.base + self.data.len(),
            });
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, BitstreamError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, BitstreamError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, BitstreamError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn str(&mut self) -> Result<String, BitstreamError> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| BitstreamError::Corrupt("non-UTF-8 name".into()))
    }

    fn done(&self) -> bool {
        self.pos == self.data.len()
    }
}

struct Imms {
    values: Vec<i32>,
    index: HashMap<i32, u16>,
}

impl Imms {
    fn operand(&mut self, r: &ValueRef) -> SourceOperand {
        match *r {
            ValueRef::Node(n) => SourceOperand::Node(n.0 as u16),
            ValueRef::LiveIn(v) => SourceOperand::Var(v.0 as u16),
            ValueRef::Imm(x) => {
                let next = self.values.len() as u16;
                let i = *self.index.entry(x).or_insert_with(|| {
                    self.values.push(x);
                    next
                });
                SourceOperand::Imm(i)
            }
        }
    }
}

fn value_ref(s: SourceOperand, imms: &[i32]) -> Result<Option<ValueRef>, BitstreamError> {
    Ok(match s {
        SourceOperand::Node(n) => Some(ValueRef::Node(NodeId(n as usize))),
        SourceOperand::Var(v) => Some(ValueRef::LiveIn(VarId(v as usize))),
        SourceOperand::Imm(i) => {
            Some(ValueRef::Imm(*imms.get(i as usize).ok_or_else(|| {
                BitstreamError::Corrupt(format!("immediate index {i}"))
            })?))
        }
        SourceOperand::None => None,
    })
}

fn section(out: &mut Vec<u8>, tag: u8, payload: Vec<u8>) {
    out.push(tag);
    put32(out, payload.len() as u32);
    out.extend(payload);
}

/// Serializes a mapping. Field order is fixed, so output is deterministic.
pub fn emit_bitstream(m: &Mapping, arch: &ArchConfig) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put16(&mut out, BITSTREAM_VERSION);
    out.push(arch.rows as u8);
    out.push(arch.cols as u8);
    out.push(m.strategy.code());
    let p = &m.program;
    if p.blocks.is_empty() {
        return out;
    }

    let mut s = Vec::new();
    put_str(&mut s, &p.name);
    put16(&mut s, p.entry.0 as u16);
    put16(&mut s, p.exit.0 as u16);
    s.push(m.agile as u8);
    put16(&mut s, m.loops.len() as u16);
    for l in &m.loops {
        put16(&mut s, l.header.0 as u16);
        put16(&mut s, l.ii as u16);
        put16(&mut s, l.replication as u16);
    }
    section(&mut out, META, s);

    let mut s = Vec::new();
    put16(&mut s, p.memories.len() as u16);
    for d in &p.memories {
        put_str(&mut s, &d.name);
        put32(&mut s, d.len as u32);
    }
    section(&mut out, MEMS, s);

    let mut s = Vec::new();
    put16(&mut s, p.vars.len() as u16);
    for v in &p.vars {
        put_str(&mut s, v);
    }
    section(&mut out, VARS, s);

    let mut imms = Imms {
        values: Vec::new(),
        index: HashMap::new(),
    };
    let mut blks = Vec::new();
    put16(&mut blks, p.blocks.len() as u16);
    for (b, bm) in p.blocks.iter().zip(&m.blocks) {
        put16(&mut blks, b.dfg.len() as u16);
        put16(&mut blks, bm.group);
        put16(&mut blks, bm.ii as u16);
        put16(&mut blks, bm.extension_factor as u16);
        put16(&mut blks, bm.replication() as u16);
        blks.push(b.loop_header as u8);
        match b.loop_bound {
            None => blks.push(0),
            Some(LoopBound::Const(n)) => {
                blks.push(1);
                put32(&mut blks, n);
            }
            Some(LoopBound::Dynamic { block, node }) => {
                blks.push(2);
                put16(&mut blks, block.0 as u16);
                put16(&mut blks, node.0 as u16);
            }
        }
        blks.push(b.successors.len() as u8);
        for (t, c) in &b.successors {
            put16(&mut blks, t.0 as u16);
            blks.push(c.code());
        }
        put16(&mut blks, b.live_outs.len() as u16);
        for (v, r) in &b.live_outs {
            put16(&mut blks, v.0 as u16);
            put16(&mut blks, imms.operand(r).encode());
        }
    }

    let bases = m.block_bases();
    let persist = m.strategy != Strategy::Dataflow;
    let mut per_pe: BTreeMap<u16, Vec<PeInstruction>> = BTreeMap::new();
    for (b, bm) in p.blocks.iter().zip(&m.blocks) {
        let sender = sender_node(b);
        for (i, node) in b.dfg.iter().enumerate() {
            let mut srcs = [SourceOperand::None; 3];
            for (k, r) in node.inputs.iter().enumerate().take(3) {
                srcs[k] = imms.operand(r);
            }
            let (mode, targets) = if sender == Some(node.id) {
                let t = m
                    .control_edges
                    .iter()
                    .filter(|e| e.from == b.id)
                    .flat_map(|e| e.outputs.iter().map(move |&o| (o, e.address)))
                    .collect();
                (SenderMode::for_opcode(node.opcode), t)
            } else {
                (SenderMode::None, Vec::new())
            };
            for (r, pl) in bm.placements.iter().enumerate() {
                per_pe.entry(pl[i].0).or_default().push(PeInstruction {
                    address: bases[b.id.0] + i as u16,
                    persist,
                    replica: r as u8,
                    opcode: node.opcode,
                    srcs,
                    time: bm.times[i] as u16,
                    array: node.array.map(|a| a.0 as u16),
                    sender: mode,
                    targets: targets.clone(),
                });
            }
        }
    }

    let mut s = Vec::new();
    put16(&mut s, imms.values.len() as u16);
    for v in &imms.values {
        s.extend_from_slice(&v.to_le_bytes());
    }
    section(&mut out, IMMS, s);
    section(&mut out, BLKS, blks);

    let mut s = Vec::new();
    put16(&mut s, per_pe.len() as u16);
    for (pe, mut list) in per_pe {
        list.sort_by_key(|x| (x.address, x.replica));
        put16(&mut s, pe);
        put16(&mut s, list.len() as u16);
        for ins in &list {
            ins.write(&mut s);
        }
    }
    section(&mut out, PEIN, s);

    let ports = PortMap::for_arch(arch).port_count;
    let mut s = Vec::new();
    put16(&mut s, ports as u16);
    put16(&mut s, m.control_edges.len() as u16);
    for e in &m.control_edges {
        put16(&mut s, e.input);
        let mut bits = vec![0u8; ports.div_ceil(8)];
        for &o in &e.outputs {
            bits[o as usize / 8] |= 1 << (o % 8);
        }
        s.extend(bits);
    }
    section(&mut out, ROUT, s);

    let mut s = vec![m.fifos.len() as u8];
    for f in &m.fifos {
        put16(&mut s, f.header.0 as u16);
        s.push(f.fifo);
        put16(&mut s, f.producer.0 as u16);
        put16(&mut s, f.node.0 as u16);
    }
    section(&mut out, FIFO, s);

    let mut s = Vec::new();
    put16(&mut s, m.control_edges.len() as u16);
    for e in &m.control_edges {
        put16(&mut s, e.from.0 as u16);
        put16(&mut s, e.to.0 as u16);
        s.push(e.cond.code());
        put16(&mut s, e.address);
    }
    section(&mut out, CEDG, s);

    let mut s = Vec::new();
    put32(&mut s, m.data_routes.len() as u32);
    for d in &m.data_routes {
        put16(&mut s, d.block.0 as u16);
        put16(&mut s, d.node.0 as u16);
        s.push(d.input);
        s.push(d.order.code());
    }
    section(&mut out, DROU, s);
    out
}

fn header(bytes: &[u8]) -> Result<(ArchEcho, Strategy), BitstreamError> {
    let mut r = Reader {
        data: bytes,
        pos: 0,
        base: 0,
    };
    if r.take(4)? != MAGIC {
        return Err(BitstreamError::BadMagic);
    }
    let version = r.u16()?;
    if version != BITSTREAM_VERSION {
        return Err(BitstreamError::VersionMismatch {
            found: version,
            expected: BITSTREAM_VERSION,
        });
    }
    let rows = r.u8()?;
    let cols = r.u8()?;
    let st = r.u8()?;
    let strategy = Strategy::from_code(st)
        .ok_or_else(|| BitstreamError::Corrupt(format!("strategy tag {st}")))?;
    Ok((ArchEcho { rows, cols }, strategy))
}

const HEADER_LEN: usize = 9;

fn sections(bytes: &[u8]) -> Result<BTreeMap<u8, Reader<'_>>, BitstreamError> {
    let mut out = BTreeMap::new();
    let mut r = Reader {
        data: bytes,
        pos: HEADER_LEN,
        base: 0,
    };
    while !r.done() {
        let tag = r.u8()?;
        let len = r.u32()? as usize;
        let start = r.pos;
        let body = r.take(len)?;
        if out
            .insert(
                tag,
                Reader {
                    data: body,
                    pos: 0,
                    base: start,
                },
            )
            .is_some()
        {
            return Err(BitstreamError::Corrupt(format!("section {tag} repeated")));
        }
    }
    Ok(out)
}

fn read_pein(r: &mut Reader) -> Result<Vec<(Pe, Vec<PeInstruction>)>, BitstreamError> {
    let n = r.u16()?;
    let mut out = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let pe = Pe(r.u16()?);
        let count = r.u16()?;
        let mut list = Vec::with_capacity(count as usize);
        for _ in 0..count {
            list.push(PeInstruction::read(r)?);
        }
        out.push((pe, list));
    }
    Ok(out)
}

/// Decodes only the header and the per-PE instruction lists.
pub fn read_instruction_table(
    bytes: &[u8],
) -> Result<(ArchEcho, Vec<(Pe, Vec<PeInstruction>)>), BitstreamError> {
    let (echo, _) = header(bytes)?;
    let mut secs = sections(bytes)?;
    let table = match secs.get_mut(&PEIN) {
        Some(r) => read_pein(r)?,
        None => Vec::new(),
    };
    Ok((echo, table))
}

fn need<'a, 'b>(
    secs: &'b mut BTreeMap<u8, Reader<'a>>,
    tag: u8,
) -> Result<&'b mut Reader<'a>, BitstreamError> {
    secs.get_mut(&tag)
        .ok_or_else(|| BitstreamError::Corrupt(format!("missing section {tag}")))
}

fn corrupt(msg: impl Into<String>) -> BitstreamError {
    BitstreamError::Corrupt(msg.into())
}

/// Inverse of [`emit_bitstream`].
pub fn load_bitstream(bytes: &[u8]) -> Result<(Mapping, ArchEcho), BitstreamError> {
    let (echo, strategy) = header(bytes)?;
    let mut secs = sections(bytes)?;
    let mut m = Mapping {
        strategy,
        agile: false,
        program: Program {
            name: String::new(),
            blocks: Vec::new(),
            entry: BlockId(0),
            exit: BlockId(0),
            memories: Vec::new(),
            vars: Vec::new(),
        },
        blocks: Vec::new(),
        loops: Vec::new(),
        control_edges: Vec::new(),
        fifos: Vec::new(),
        data_routes: Vec::new(),
    };
    if secs.is_empty() {
        return Ok((m, echo));
    }

    let r = need(&mut secs, META)?;
    m.program.name = r.str()?;
    m.program.entry = BlockId(r.u16()? as usize);
    m.program.exit = BlockId(r.u16()? as usize);
    m.agile = r.u8()? != 0;
    for _ in 0..r.u16()? {
        m.loops.push(LoopMapping {
            header: BlockId(r.u16()? as usize),
            ii: r.u16()? as u32,
            replication: r.u16()? as u32,
        });
    }

    let r = need(&mut secs, MEMS)?;
    for _ in 0..r.u16()? {
        let name = r.str()?;
        let len = r.u32()? as usize;
        m.program.memories.push(MemDecl { name, len });
    }
    let r = need(&mut secs, VARS)?;
    for _ in 0..r.u16()? {
        m.program.vars.push(r.str()?);
    }
    let r = need(&mut secs, IMMS)?;
    let mut imms = Vec::new();
    for _ in 0..r.u16()? {
        imms.push(r.u32()? as i32);
    }

    let r = need(&mut secs, BLKS)?;
    let nblocks = r.u16()? as usize;
    let mut filled: Vec<Vec<Vec<bool>>> = Vec::with_capacity(nblocks);
    for b in 0..nblocks {
        let ops = r.u16()? as usize;
        let group = r.u16()?;
        let ii = r.u16()? as u32;
        let ext = r.u16()? as u32;
        let reps = r.u16()? as usize;
        let mut blk = BasicBlock::new(b);
        blk.loop_header = r.u8()? != 0;
        blk.loop_bound = match r.u8()? {
            0 => None,
            1 => Some(LoopBound::Const(r.u32()?)),
            2 => Some(LoopBound::Dynamic {
                block: BlockId(r.u16()? as usize),
                node: NodeId(r.u16()? as usize),
            }),
            k => return Err(corrupt(format!("bound kind {k}"))),
        };
        for _ in 0..r.u8()? {
            let t = BlockId(r.u16()? as usize);
            let c = r.u8()?;
            blk.successors.push((
                t,
                EdgeCond::from_code(c).ok_or_else(|| corrupt(format!("edge condition {c}")))?,
            ));
        }
        for _ in 0..r.u16()? {
            let v = VarId(r.u16()? as usize);
            let src = value_ref(SourceOperand::decode(r.u16()?), &imms)?
                .ok_or_else(|| corrupt("empty live-out"))?;
            blk.live_outs.push((v, src));
        }
        blk.dfg = (0..ops)
            .map(|i| DfgNode::new(i, Opcode::Const, Vec::new()))
            .collect();
        m.program.blocks.push(blk);
        m.blocks.push(BlockMapping {
            block: BlockId(b),
            group,
            ii,
            extension_factor: ext,
            times: vec![0; ops],
            placements: vec![vec![Pe(0); ops]; reps],
        });
        filled.push(vec![vec![false; ops]; reps]);
    }

    let bases = m.block_bases();
    let locate = |addr: u16| -> Option<(usize, usize)> {
        let b = bases.iter().rposition(|&base| base <= addr)?;
        let n = (addr - bases[b]) as usize;
        (n < m.program.blocks[b].dfg.len()).then_some((b, n))
    };
    let table = read_pein(need(&mut secs, PEIN)?)?;
    let mut decoded: Vec<(usize, usize, Pe, PeInstruction)> = Vec::new();
    for (pe, list) in table {
        for ins in list {
            let (b, n) =
                locate(ins.address).ok_or_else(|| corrupt(format!("address {}", ins.address)))?;
            decoded.push((b, n, pe, ins));
        }
    }
    for (b, n, pe, ins) in decoded {
        let r = ins.replica as usize;
        let slot = filled[b]
            .get_mut(r)
            .ok_or_else(|| corrupt(format!("replica {r} of B{b}")))?;
        if std::mem::replace(&mut slot[n], true) {
            return Err(corrupt(format!("address {} placed twice", ins.address)));
        }
        m.blocks[b].placements[r][n] = pe;
        if r == 0 {
            m.blocks[b].times[n] = ins.time as u32;
            let mut inputs = Vec::new();
            for s in ins.srcs {
                if let Some(v) = value_ref(s, &imms)? {
                    inputs.push(v);
                }
            }
            m.program.blocks[b].dfg[n] = DfgNode {
                id: NodeId(n),
                opcode: ins.opcode,
                inputs,
                array: ins.array.map(|a| ArrayId(a as usize)),
            };
        }
    }
    if filled.iter().flatten().flatten().any(|f| !f) {
        return Err(corrupt("instruction missing"));
    }

    let r = need(&mut secs, ROUT)?;
    let ports = r.u16()? as usize;
    let nroutes = r.u16()? as usize;
    let mut routes = Vec::with_capacity(nroutes);
    for _ in 0..nroutes {
        let input = r.u16()?;
        let bits = r.take(ports.div_ceil(8))?;
        let outputs = (0..ports)
            .filter(|&o| bits[o / 8] >> (o % 8) & 1 == 1)
            .map(|o| o as u16)
            .collect::<Vec<_>>();
        routes.push((input, outputs));
    }

    let r = need(&mut secs, FIFO)?;
    for _ in 0..r.u8()? {
        m.fifos.push(FifoBinding {
            header: BlockId(r.u16()? as usize),
            fifo: r.u8()?,
            producer: BlockId(r.u16()? as usize),
            node: NodeId(r.u16()? as usize),
        });
    }

    let r = need(&mut secs, CEDG)?;
    let nedges = r.u16()? as usize;
    if nedges != routes.len() {
        return Err(corrupt("route table and control edges differ in length"));
    }
    for (input, outputs) in routes {
        let from = BlockId(r.u16()? as usize);
        let to = BlockId(r.u16()? as usize);
        let c = r.u8()?;
        let cond = EdgeCond::from_code(c).ok_or_else(|| corrupt(format!("edge condition {c}")))?;
        let address = r.u16()?;
        m.control_edges.push(ControlEdge {
            from,
            to,
            cond,
            address,
            input,
            outputs,
        });
    }

    let r = need(&mut secs, DROU)?;
    for _ in 0..r.u32()? {
        let block = BlockId(r.u16()? as usize);
        let node = NodeId(r.u16()? as usize);
        let input = r.u8()?;
        let o = r.u8()?;
        let order = RouteOrder::from_code(o).ok_or_else(|| corrupt(format!("route order {o}")))?;
        m.data_routes.push(DataRoute {
            block,
            node,
            input,
            order,
        });
    }
    Ok((m, echo))
}
