//! Lowering from the syntax tree to a CDFG.

use std::collections::{BTreeMap, HashMap};

use super::ast::*;
use super::FrontendError;
use crate::ir::*;

struct Lower<'k> {
    kernel: &'k Kernel,
    blocks: Vec<BasicBlock>,
    vars: Vec<String>,
    var_ids: HashMap<String, VarId>,
    cur: usize,
    defs: BTreeMap<VarId, ValueRef>,
    loop_vars: Vec<String>,
    hidden: usize,
}

impl<'k> Lower<'k> {
    fn var(&mut self, name: &str) -> VarId {
        if let Some(&v) = self.var_ids.get(name) {
            return v;
        }
        let v = VarId(self.vars.len());
        self.vars.push(name.to_string());
        self.var_ids.insert(name.to_string(), v);
        v
    }

    fn new_block(&mut self) -> usize {
        let id = self.blocks.len();
        self.blocks.push(BasicBlock::new(id));
        id
    }

    /// Closes the current block and continues in `next`.
    fn switch_to(&mut self, next: usize) {
        let defs = std::mem::take(&mut self.defs);
        self.blocks[self.cur].live_outs = defs
            .into_iter()
            .filter(|(v, r)| *r != ValueRef::LiveIn(*v))
            .collect();
        self.cur = next;
    }

    fn emit(&mut self, op: Opcode, inputs: Vec<ValueRef>) -> ValueRef {
        self.emit_mem(op, None, inputs)
    }

    fn emit_mem(&mut self, op: Opcode, array: Option<ArrayId>, inputs: Vec<ValueRef>) -> ValueRef {
        let foldable = !matches!(
            op,
            Opcode::Load
                | Opcode::Store
                | Opcode::LoopGen
                | Opcode::Branch
                | Opcode::Phi
                | Opcode::Const
        );
        if foldable {
            let imms: Option<Vec<i32>> = inputs
                .iter()
                .map(|i| match i {
                    ValueRef::Imm(v) => Some(*v),
                    _ => None,
                })
                .collect();
            if let Some(args) = imms {
                return ValueRef::Imm(op.eval(&args));
            }
        }
        let block = &mut self.blocks[self.cur];
        let id = block.dfg.len();
        block.dfg.push(DfgNode {
            id: NodeId(id),
            opcode: op,
            inputs,
            array,
        });
        ValueRef::Node(NodeId(id))
    }

    fn read(&mut self, name: &str) -> ValueRef {
        let v = self.var(name);
        self.defs.get(&v).copied().unwrap_or(ValueRef::LiveIn(v))
    }

    fn array(&self, name: &str) -> Result<ArrayId, FrontendError> {
        self.kernel
            .arrays
            .iter()
            .position(|a| a.name == name)
            .map(ArrayId)
            .ok_or_else(|| FrontendError::UndeclaredArray {
                name: name.to_string(),
            })
    }

    fn expr(&mut self, e: &Expr) -> Result<ValueRef, FrontendError> {
        Ok(match e {
            Expr::Int(v) => ValueRef::Imm(*v),
            Expr::Var(name) => self.read(name),
            Expr::Load(a, idx) => {
                let arr = self.array(a)?;
                let i = self.expr(idx)?;
                self.emit_mem(Opcode::Load, Some(arr), vec![i])
            }
            Expr::Neg(x) => {
                let x = self.expr(x)?;
                self.emit(Opcode::Sub, vec![ValueRef::Imm(0), x])
            }
            Expr::Call(f, args) => {
                let a = self.expr(&args[0])?;
                let b = self.expr(&args[1])?;
                match f {
                    Func::Min => {
                        let c = self.emit(Opcode::CmpLt, vec![a, b]);
                        self.emit(Opcode::Select, vec![c, a, b])
                    }
                    Func::Max => {
                        let c = self.emit(Opcode::CmpLt, vec![a, b]);
                        self.emit(Opcode::Select, vec![c, b, a])
                    }
                    Func::Select => {
                        let c = self.expr(&args[2])?;
                        self.emit(Opcode::Select, vec![a, b, c])
                    }
                }
            }
            Expr::Binary(op, a, b) => {
                let x = self.expr(a)?;
                let y = self.expr(b)?;
                match op {
                    BinOp::Add => self.emit(Opcode::Add, vec![x, y]),
                    BinOp::Sub => self.emit(Opcode::Sub, vec![x, y]),
                    BinOp::Mul => self.emit(Opcode::Mul, vec![x, y]),
                    BinOp::And => self.emit(Opcode::And, vec![x, y]),
                    BinOp::Or => self.emit(Opcode::Or, vec![x, y]),
                    BinOp::Xor => {
                        let o = self.emit(Opcode::Or, vec![x, y]);
                        let a = self.emit(Opcode::And, vec![x, y]);
                        self.emit(Opcode::Sub, vec![o, a])
                    }
                    BinOp::Shl => self.emit(Opcode::Shift, vec![x, y]),
                    BinOp::Shr => {
                        let n = self.emit(Opcode::Sub, vec![ValueRef::Imm(0), y]);
                        self.emit(Opcode::Shift, vec![x, n])
                    }
                    BinOp::Lt => self.emit(Opcode::CmpLt, vec![x, y]),
                    BinOp::Gt => self.emit(Opcode::CmpLt, vec![y, x]),
                    BinOp::Eq => self.emit(Opcode::CmpEq, vec![x, y]),
                    BinOp::Le | BinOp::Ge | BinOp::Ne => {
                        let c = match op {
                            BinOp::Le => self.emit(Opcode::CmpLt, vec![y, x]),
                            BinOp::Ge => self.emit(Opcode::CmpLt, vec![x, y]),
                            _ => self.emit(Opcode::CmpEq, vec![x, y]),
                        };
                        self.emit(Opcode::Sub, vec![ValueRef::Imm(1), c])
                    }
                }
            }
        })
    }

    /// Lowers a branch condition; the flag asks for the arms to be swapped.
    fn cond(&mut self, e: &Expr) -> Result<(ValueRef, bool), FrontendError> {
        if let Expr::Binary(op, a, b) = e {
            if op.is_comparison() {
                let x = self.expr(a)?;
                let y = self.expr(b)?;
                return Ok(match op {
                    BinOp::Lt => (self.emit(Opcode::CmpLt, vec![x, y]), false),
                    BinOp::Gt => (self.emit(Opcode::CmpLt, vec![y, x]), false),
                    BinOp::Le => (self.emit(Opcode::CmpLt, vec![y, x]), true),
                    BinOp::Ge => (self.emit(Opcode::CmpLt, vec![x, y]), true),
                    BinOp::Eq => (self.emit(Opcode::CmpEq, vec![x, y]), false),
                    _ => (self.emit(Opcode::CmpEq, vec![x, y]), true),
                });
            }
        }
        let v = self.expr(e)?;
        Ok((self.emit(Opcode::CmpEq, vec![v, ValueRef::Imm(0)]), true))
    }

    fn assign(&mut self, name: &str, value: ValueRef) -> Result<(), FrontendError> {
        if self.loop_vars.iter().any(|v| v == name) {
            return Err(FrontendError::LoopVarAssigned {
                name: name.to_string(),
            });
        }
        let v = self.var(name);
        self.defs.insert(v, value);
        Ok(())
    }

    fn stmts(&mut self, body: &[Stmt]) -> Result<(), FrontendError> {
        for s in body {
            self.stmt(s)?;
        }
        Ok(())
    }

    /// Gives a value a producing node in the current block.
    fn materialize(&mut self, r: ValueRef) -> NodeId {
        let made = match r {
            ValueRef::Node(n) => return n,
            ValueRef::Imm(_) => self.emit(Opcode::Const, vec![r]),
            ValueRef::LiveIn(_) => self.emit(Opcode::Phi, vec![r]),
        };
        match made {
            ValueRef::Node(n) => n,
            _ => unreachable!(),
        }
    }

    fn loop_input(&mut self, r: ValueRef, tag: &str, n: usize) -> ValueRef {
        match r {
            ValueRef::Imm(_) => r,
            _ => {
                let hidden = self.var(&format!("%{tag}_{n}"));
                self.defs.insert(hidden, r);
                ValueRef::LiveIn(hidden)
            }
        }
    }

    fn stmt(&mut self, s: &Stmt) -> Result<(), FrontendError> {
        match s {
            Stmt::Assign { var, value } => {
                let r = self.expr(value)?;
                self.assign(var, r)?;
            }
            Stmt::Store {
                array,
                index,
                value,
            } => {
                let arr = self.array(array)?;
                let i = self.expr(index)?;
                let v = self.expr(value)?;
                self.emit_mem(Opcode::Store, Some(arr), vec![i, v]);
            }
            Stmt::If {
                cond,
                then_body,
                else_body,
            } => {
                let (c, swap) = self.cond(cond)?;
                self.emit(Opcode::Branch, vec![c]);
                let then_b = self.new_block();
                let else_b = self.new_block();
                let join = self.new_block();
                let (taken, not_taken) = if swap {
                    (else_b, then_b)
                } else {
                    (then_b, else_b)
                };
                self.blocks[self.cur].successors = vec![
                    (BlockId(taken), EdgeCond::Taken),
                    (BlockId(not_taken), EdgeCond::NotTaken),
                ];
                self.switch_to(then_b);
                self.stmts(then_body)?;
                self.blocks[self.cur].successors = vec![(BlockId(join), EdgeCond::Always)];
                self.switch_to(else_b);
                self.stmts(else_body)?;
                self.blocks[self.cur].successors = vec![(BlockId(join), EdgeCond::Always)];
                self.switch_to(join);
            }
            Stmt::Loop { var, lo, hi, body } => {
                if self.loop_vars.iter().any(|v| v == var) {
                    return Err(FrontendError::LoopVarAssigned { name: var.clone() });
                }
                let n = self.hidden;
                self.hidden += 1;
                let lo_r = self.expr(lo)?;
                let hi_r = match hi {
                    LoopEnd::Upper(e) => self.expr(e)?,
                    LoopEnd::Count(e) => {
                        let c = self.expr(e)?;
                        self.emit(Opcode::Add, vec![lo_r, c])
                    }
                };
                let pre = self.cur;
                let bound = match (lo_r, hi_r) {
                    (ValueRef::Imm(a), ValueRef::Imm(b)) => {
                        LoopBound::Const(b.saturating_sub(a).max(0) as u32)
                    }
                    _ => LoopBound::Dynamic {
                        block: BlockId(pre),
                        node: self.materialize(hi_r),
                    },
                };
                let hi_r = match bound {
                    LoopBound::Dynamic { node, .. } => ValueRef::Node(node),
                    _ => hi_r,
                };
                let lo_in = self.loop_input(lo_r, "lo", n);
                let hi_in = self.loop_input(hi_r, "hi", n);
                let header = self.new_block();
                let body_b = self.new_block();
                self.blocks[pre].successors = vec![(BlockId(header), EdgeCond::Always)];
                self.switch_to(header);
                {
                    let h = &mut self.blocks[header];
                    h.loop_header = true;
                    h.loop_bound = Some(bound);
                    h.dfg
                        .push(DfgNode::new(0, Opcode::LoopGen, vec![lo_in, hi_in]));
                }
                let iv = self.var(var);
                self.defs.insert(iv, ValueRef::Node(NodeId(0)));
                self.switch_to(body_b);
                self.loop_vars.push(var.clone());
                self.stmts(body)?;
                self.loop_vars.pop();
                self.blocks[self.cur].successors = vec![(BlockId(header), EdgeCond::LoopBack)];
                let exit = self.new_block();
                self.blocks[header].successors = vec![
                    (BlockId(body_b), EdgeCond::Always),
                    (BlockId(exit), EdgeCond::LoopExit),
                ];
                self.switch_to(exit);
            }
        }
        Ok(())
    }
}

/// Lowers a parsed kernel to a CDFG.
pub fn lower(kernel: &Kernel) -> Result<Program, FrontendError> {
    let mut seen = std::collections::HashSet::new();
    for a in &kernel.arrays {
        if !seen.insert(&a.name) {
            return Err(FrontendError::DuplicateArray {
                name: a.name.clone(),
            });
        }
    }
    let mut l = Lower {
        kernel,
        blocks: Vec::new(),
        vars: Vec::new(),
        var_ids: HashMap::new(),
        cur: 0,
        defs: BTreeMap::new(),
        loop_vars: Vec::new(),
        hidden: 0,
    };
    l.new_block();
    l.stmts(&kernel.body)?;
    let exit = l.cur;
    l.switch_to(exit);
    Ok(Program {
        name: kernel.name.clone(),
        blocks: l.blocks,
        entry: BlockId(0),
        exit: BlockId(exit),
        memories: kernel
            .arrays
            .iter()
            .map(|a| MemDecl {
                name: a.name.clone(),
                len: a.len,
            })
            .collect(),
        vars: l.vars,
    })
}
