use std::fmt;

macro_rules! id_type {
    ($name:ident, $prefix:expr) => {
        #[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
        pub struct $name(pub usize);

        impl $name {
            pub fn index(self) -> usize {
                self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}{}", $prefix, self.0)
            }
        }
    };
}

id_type!(BlockId, "B");
id_type!(NodeId, "n");
id_type!(VarId, "v");
id_type!(ArrayId, "m");

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Opcode {
    Add,
    Sub,
    Mul,
    CmpLt,
    CmpEq,
    Select,
    Load,
    Store,
    Phi,
    Branch,
    LoopGen,
    Const,
    Shift,
    And,
    Or,
}

/// Functional-unit class an opcode executes on.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum FuClass {
    Alu,
    Mul,
    Mem,
    Control,
}

impl Opcode {
    pub const ALL: [Opcode; 15] = [
        Opcode::Add,
        Opcode::Sub,
        Opcode::Mul,
        Opcode::CmpLt,
        Opcode::CmpEq,
        Opcode::Select,
        Opcode::Load,
        Opcode::Store,
        Opcode::Phi,
        Opcode::Branch,
        Opcode::LoopGen,
        Opcode::Const,
        Opcode::Shift,
        Opcode::And,
        Opcode::Or,
    ];

    pub fn arity(self) -> usize {
        match self {
            Opcode::Select => 3,
            Opcode::Load | Opcode::Phi | Opcode::Branch | Opcode::Const => 1,
            _ => 2,
        }
    }

    pub fn fu_class(self) -> FuClass {
        match self {
            Opcode::Mul => FuClass::Mul,
            Opcode::Load | Opcode::Store => FuClass::Mem,
            Opcode::Branch | Opcode::LoopGen | Opcode::Phi => FuClass::Control,
            _ => FuClass::Alu,
        }
    }

    pub fn is_memory(self) -> bool {
        matches!(self, Opcode::Load | Opcode::Store)
    }

    /// Stable one-byte encoding used by the bitstream.
    pub fn code(self) -> u8 {
        Opcode::ALL.iter().position(|&o| o == self).unwrap() as u8
    }

    pub fn from_code(code: u8) -> Option<Opcode> {
        Opcode::ALL.get(code as usize).copied()
    }

    pub fn mnemonic(self) -> &'static str {
        match self {
            Opcode::Add => "add",
            Opcode::Sub => "sub",
            Opcode::Mul => "mul",
            Opcode::CmpLt => "cmp-lt",
            Opcode::CmpEq => "cmp-eq",
            Opcode::Select => "select",
            Opcode::Load => "load",
            Opcode::Store => "store",
            Opcode::Phi => "phi",
            Opcode::Branch => "branch",
            Opcode::LoopGen => "loop-gen",
            Opcode::Const => "const",
            Opcode::Shift => "shift",
            Opcode::And => "and",
            Opcode::Or => "or",
        }
    }

    pub fn from_mnemonic(s: &str) -> Option<Opcode> {
        Opcode::ALL.iter().copied().find(|o| o.mnemonic() == s)
    }

    /// Evaluates a pure (non-memory, non-control) opcode with 32-bit wraparound.
    ///
    /// `shift` shifts left by a non-negative amount and logically right by the
    /// magnitude of a negative amount; amounts beyond 31 produce zero.
    pub fn eval(self, args: &[i32]) -> i32 {
        match self {
            Opcode::Add => args[0].wrapping_add(args[1]),
            Opcode::Sub => args[0].wrapping_sub(args[1]),
            Opcode::Mul => args[0].wrapping_mul(args[1]),
            Opcode::CmpLt => (args[0] < args[1]) as i32,
            Opcode::CmpEq => (args[0] == args[1]) as i32,
            Opcode::Select => {
                if args[0] != 0 {
                    args[1]
                } else {
                    args[2]
                }
            }
            Opcode::Shift => {
                let amount = args[1];
                if amount >= 0 {
                    if amount > 31 {
                        0
                    } else {
                        ((args[0] as u32) << amount) as i32
                    }
                } else {
                    let amount = amount.unsigned_abs();
                    if amount > 31 {
                        0
                    } else {
                        ((args[0] as u32) >> amount) as i32
                    }
                }
            }
            Opcode::And => args[0] & args[1],
            Opcode::Or => args[0] | args[1],
            Opcode::Const | Opcode::Phi | Opcode::Branch => args[0],
            Opcode::Load | Opcode::Store | Opcode::LoopGen => {
                panic!("{} has no pure evaluation", self.mnemonic())
            }
        }
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mnemonic())
    }
}

/// An operand of a DFG node.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum ValueRef {
    /// Result of another node in the same block.
    Node(NodeId),
    /// Value of a variable on block entry.
    LiveIn(VarId),
    Imm(i32),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EdgeCond {
    Always,
    Taken,
    NotTaken,
    LoopBack,
    LoopExit,
}

impl EdgeCond {
    pub const ALL: [EdgeCond; 5] = [
        EdgeCond::Always,
        EdgeCond::Taken,
        EdgeCond::NotTaken,
        EdgeCond::LoopBack,
        EdgeCond::LoopExit,
    ];

    pub fn code(self) -> u8 {
        EdgeCond::ALL.iter().position(|&c| c == self).unwrap() as u8
    }

    pub fn from_code(code: u8) -> Option<EdgeCond> {
        EdgeCond::ALL.get(code as usize).copied()
    }

    pub fn keyword(self) -> &'static str {
        match self {
            EdgeCond::Always => "always",
            EdgeCond::Taken => "taken",
            EdgeCond::NotTaken => "not-taken",
            EdgeCond::LoopBack => "loop-back",
            EdgeCond::LoopExit => "loop-exit",
        }
    }
}

/// Trip-count source of a loop header.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum LoopBound {
    Const(u32),
    /// The bound is produced at run time by `node` in `block`.
    Dynamic {
        block: BlockId,
        node: NodeId,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct DfgNode {
    pub id: NodeId,
    pub opcode: Opcode,
    pub inputs: Vec<ValueRef>,
    /// Target array of `load`/`store`.
    pub array: Option<ArrayId>,
}

impl DfgNode {
    pub fn new(id: usize, opcode: Opcode, inputs: Vec<ValueRef>) -> Self {
        DfgNode {
            id: NodeId(id),
            opcode,
            inputs,
            array: None,
        }
    }

    pub fn mem(id: usize, opcode: Opcode, array: ArrayId, inputs: Vec<ValueRef>) -> Self {
        DfgNode {
            id: NodeId(id),
            opcode,
            inputs,
            array: Some(array),
        }
    }

    pub fn latency_class(&self) -> FuClass {
        self.opcode.fu_class()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct BasicBlock {
    pub id: BlockId,
    pub dfg: Vec<DfgNode>,
    pub successors: Vec<(BlockId, EdgeCond)>,
    pub loop_header: bool,
    pub loop_bound: Option<LoopBound>,
    /// Variables written by this block and the value they hold on exit.
    pub live_outs: Vec<(VarId, ValueRef)>,
}

impl BasicBlock {
    pub fn new(id: usize) -> Self {
        BasicBlock {
            id: BlockId(id),
            ..Default::default()
        }
    }

    pub fn successor(&self, cond: EdgeCond) -> Option<BlockId> {
        self.successors
            .iter()
            .find(|(_, c)| *c == cond)
            .map(|(b, _)| *b)
    }

    pub fn branch_node(&self) -> Option<&DfgNode> {
        self.dfg.iter().find(|n| n.opcode == Opcode::Branch)
    }

    pub fn loop_gen_node(&self) -> Option<&DfgNode> {
        self.dfg.iter().find(|n| n.opcode == Opcode::LoopGen)
    }

    pub fn has_divergence(&self) -> bool {
        self.successors
            .iter()
            .any(|(_, c)| matches!(c, EdgeCond::Taken | EdgeCond::NotTaken))
    }

    /// Operation count excluding nothing; every node occupies a slot.
    pub fn op_count(&self) -> usize {
        self.dfg.len()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MemDecl {
    pub name: String,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Program {
    pub name: String,
    pub blocks: Vec<BasicBlock>,
    pub entry: BlockId,
    pub exit: BlockId,
    pub memories: Vec<MemDecl>,
    pub vars: Vec<String>,
}

impl Program {
    pub fn block(&self, id: BlockId) -> &BasicBlock {
        &self.blocks[id.0]
    }

    pub fn array_id(&self, name: &str) -> Option<ArrayId> {
        self.memories
            .iter()
            .position(|m| m.name == name)
            .map(ArrayId)
    }

    pub fn var_id(&self, name: &str) -> Option<VarId> {
        self.vars.iter().position(|v| v == name).map(VarId)
    }

    pub fn predecessors(&self, id: BlockId) -> Vec<(BlockId, EdgeCond)> {
        let mut preds = Vec::new();
        for b in &self.blocks {
            for &(t, c) in &b.successors {
                if t == id {
                    preds.push((b.id, c));
                }
            }
        }
        preds
    }

    pub fn op_count(&self) -> usize {
        self.blocks.iter().map(|b| b.dfg.len()).sum()
    }

    /// Topological order of a block's DFG; ties keep node order.
    pub fn topo_order(block: &BasicBlock) -> Option<Vec<usize>> {
        let n = block.dfg.len();
        let mut indeg = vec![0usize; n];
        let mut users: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (i, node) in block.dfg.iter().enumerate() {
            for input in &node.inputs {
                if let ValueRef::Node(p) = input {
                    if p.0 >= n {
                        return None;
                    }
                    indeg[i] += 1;
                    users[p.0].push(i);
                }
            }
        }
        let mut ready: std::collections::BTreeSet<usize> =
            (0..n).filter(|&i| indeg[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(i) = ready.pop_first() {
            order.push(i);
            for &u in &users[i] {
                indeg[u] -= 1;
                if indeg[u] == 0 {
                    ready.insert(u);
                }
            }
        }
        (order.len() == n).then_some(order)
    }
}
