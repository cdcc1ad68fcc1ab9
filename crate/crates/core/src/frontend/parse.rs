//! Lexer and recursive-descent parser for `.mk` kernels.

use super::ast::*;
use super::FrontendError;

#[derive(Clone, Debug, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Int(i64),
    Kernel,
    Array,
    Loop,
    In,
    If,
    Else,
    BoundFrom,
    Punct(&'static str),
    Eof,
}

const PUNCT: &[&str] = &[
    "<<", ">>", "<=", ">=", "==", "!=", "..", "{", "}", "[", "]", "(", ")", ";", ",", "=", "+",
    "-", "*", "&", "|", "^", "<", ">", "/", "%",
];

struct Lexer<'a> {
    src: &'a [u8],
    i: usize,
    line: usize,
    col: usize,
}

impl<'a> Lexer<'a> {
    fn bump(&mut self) {
        if self.src[self.i] == b'\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        self.i += 1;
    }

    fn tokens(mut self) -> Result<Vec<(Tok, Pos)>, FrontendError> {
        let mut out = Vec::new();
        loop {
            while self.i < self.src.len() {
                let c = self.src[self.i];
                if c.is_ascii_whitespace() {
                    self.bump();
                } else if c == b'/' && self.src.get(self.i + 1) == Some(&b'/') {
                    while self.i < self.src.len() && self.src[self.i] != b'\n' {
                        self.bump();
                    }
                } else {
                    break;
                }
            }
            let pos = Pos {
                line: self.line,
                col: self.col,
            };
            if self.i >= self.src.len() {
                out.push((Tok::Eof, pos));
                return Ok(out);
            }
            let c = self.src[self.i];
            if c.is_ascii_alphabetic() || c == b'_' {
                let start = self.i;
                while self.i < self.src.len()
                    && (self.src[self.i].is_ascii_alphanumeric() || self.src[self.i] == b'_')
                {
                    self.bump();
                }
                let word = std::str::from_utf8(&self.src[start..self.i]).unwrap();
                let tok = match word {
                    "kernel" => Tok::Kernel,
                    "array" => Tok::Array,
                    "loop" => Tok::Loop,
                    "in" => Tok::In,
                    "if" => Tok::If,
                    "else" => Tok::Else,
                    "bound" if self.src[self.i..].starts_with(b"-from") => {
                        for _ in 0..5 {
                            self.bump();
                        }
                        Tok::BoundFrom
                    }
                    _ => Tok::Ident(word.to_string()),
                };
                out.push((tok, pos));
            } else if c.is_ascii_digit() {
                let start = self.i;
                while self.i < self.src.len() && self.src[self.i].is_ascii_digit() {
                    self.bump();
                }
                let text = std::str::from_utf8(&self.src[start..self.i]).unwrap();
                let v: i64 = text.parse().map_err(|_| FrontendError::Syntax {
                    line: pos.line,
                    col: pos.col,
                    msg: format!("integer literal `{text}` out of range"),
                })?;
                if v > 1 << 31 {
                    return Err(FrontendError::Syntax {
                        line: pos.line,
                        col: pos.col,
                        msg: format!("integer literal `{text}` out of range"),
                    });
                }
                out.push((Tok::Int(v), pos));
            } else {
                let rest = &self.src[self.i..];
                let p = PUNCT
                    .iter()
                    .find(|p| rest.starts_with(p.as_bytes()))
                    .ok_or_else(|| FrontendError::Syntax {
                        line: pos.line,
                        col: pos.col,
                        msg: format!("unexpected character `{}`", c as char),
                    })?;
                for _ in 0..p.len() {
                    self.bump();
                }
                out.push((Tok::Punct(p), pos));
            }
        }
    }
}

struct Parser {
    toks: Vec<(Tok, Pos)>,
    i: usize,
}

type PResult<T> = Result<T, FrontendError>;

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.i].0
    }

    fn pos(&self) -> Pos {
        self.toks[self.i].1
    }

    fn next(&mut self) -> Tok {
        let t = self.toks[self.i].0.clone();
        if t != Tok::Eof {
            self.i += 1;
        }
        t
    }

    fn err<T>(&self, msg: impl Into<String>) -> PResult<T> {
        let p = self.pos();
        Err(FrontendError::Syntax {
            line: p.line,
            col: p.col,
            msg: msg.into(),
        })
    }

    fn describe(t: &Tok) -> String {
        match t {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Int(v) => format!("`{v}`"),
            Tok::Punct(p) => format!("`{p}`"),
            Tok::Eof => "end of input".into(),
            Tok::BoundFrom => "`bound-from`".into(),
            other => format!("`{}`", format!("{other:?}").to_lowercase()),
        }
    }

    fn expect(&mut self, p: &'static str) -> PResult<()> {
        if *self.peek() == Tok::Punct(p) {
            self.next();
            Ok(())
        } else {
            self.err(format!(
                "expected `{p}`, found {}",
                Self::describe(self.peek())
            ))
        }
    }

    fn eat(&mut self, p: &'static str) -> bool {
        if *self.peek() == Tok::Punct(p) {
            self.next();
            true
        } else {
            false
        }
    }

    fn ident(&mut self) -> PResult<String> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.next();
                Ok(s)
            }
            t => self.err(format!("expected identifier, found {}", Self::describe(&t))),
        }
    }

    fn kernel(&mut self) -> PResult<Kernel> {
        if self.next() != Tok::Kernel {
            self.i = 0;
            return self.err("expected `kernel`");
        }
        let name = self.ident()?;
        self.expect("{")?;
        let mut arrays = Vec::new();
        while *self.peek() == Tok::Array {
            self.next();
            let name = self.ident()?;
            self.expect("[")?;
            let len = match self.next() {
                Tok::Int(v) => v as usize,
                _ => {
                    self.i -= 1;
                    return self.err("expected array length");
                }
            };
            self.expect("]")?;
            self.expect(";")?;
            arrays.push(ArrayDecl { name, len });
        }
        let body = self.stmts()?;
        self.expect("}")?;
        if *self.peek() != Tok::Eof {
            return self.err(format!(
                "unexpected {} after kernel",
                Self::describe(self.peek())
            ));
        }
        Ok(Kernel { name, arrays, body })
    }

    fn stmts(&mut self) -> PResult<Vec<Stmt>> {
        let mut out = Vec::new();
        while !matches!(self.peek(), Tok::Punct("}") | Tok::Eof) {
            out.push(self.stmt()?);
        }
        Ok(out)
    }

    fn block(&mut self) -> PResult<Vec<Stmt>> {
        self.expect("{")?;
        let body = self.stmts()?;
        self.expect("}")?;
        Ok(body)
    }

    fn stmt(&mut self) -> PResult<Stmt> {
        match self.peek().clone() {
            Tok::Array => self.err("array declarations must precede statements"),
            Tok::If => {
                self.next();
                self.expect("(")?;
                let cond = self.expr()?;
                self.expect(")")?;
                let then_body = self.block()?;
                let else_body = if *self.peek() == Tok::Else {
                    self.next();
                    if *self.peek() == Tok::If {
                        vec![self.stmt()?]
                    } else {
                        self.block()?
                    }
                } else {
                    Vec::new()
                };
                Ok(Stmt::If {
                    cond,
                    then_body,
                    else_body,
                })
            }
            Tok::Loop => {
                self.next();
                let var = self.ident()?;
                if self.next() != Tok::In {
                    self.i -= 1;
                    return self.err("expected `in`");
                }
                let lo = self.expr()?;
                self.expect("..")?;
                let hi = if *self.peek() == Tok::BoundFrom {
                    self.next();
                    LoopEnd::Count(self.expr()?)
                } else {
                    LoopEnd::Upper(self.expr()?)
                };
                let body = self.block()?;
                Ok(Stmt::Loop { var, lo, hi, body })
            }
            Tok::Ident(name) => {
                self.next();
                if self.eat("[") {
                    let index = self.expr()?;
                    self.expect("]")?;
                    self.expect("=")?;
                    let value = self.expr()?;
                    self.expect(";")?;
                    Ok(Stmt::Store {
                        array: name,
                        index,
                        value,
                    })
                } else {
                    self.expect("=")?;
                    let value = self.expr()?;
                    self.expect(";")?;
                    Ok(Stmt::Assign { var: name, value })
                }
            }
            t => self.err(format!("expected statement, found {}", Self::describe(&t))),
        }
    }

    fn expr(&mut self) -> PResult<Expr> {
        self.binary(0)
    }

    fn level(p: &str) -> Option<(usize, BinOp)> {
        Some(match p {
            "|" => (0, BinOp::Or),
            "^" => (1, BinOp::Xor),
            "&" => (2, BinOp::And),
            "==" => (3, BinOp::Eq),
            "!=" => (3, BinOp::Ne),
            "<" => (4, BinOp::Lt),
            "<=" => (4, BinOp::Le),
            ">" => (4, BinOp::Gt),
            ">=" => (4, BinOp::Ge),
            "<<" => (5, BinOp::Shl),
            ">>" => (5, BinOp::Shr),
            "+" => (6, BinOp::Add),
            "-" => (6, BinOp::Sub),
            "*" => (7, BinOp::Mul),
            _ => return None,
        })
    }

    fn binary(&mut self, min: usize) -> PResult<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let (lvl, op) = match self.peek() {
                Tok::Punct(p @ ("/" | "%")) => {
                    let p = *p;
                    let pos = self.pos();
                    return Err(FrontendError::NonAffine {
                        line: pos.line,
                        col: pos.col,
                        what: format!("`{p}`"),
                    });
                }
                Tok::Punct(p) => match Self::level(p) {
                    Some(x) => x,
                    None => break,
                },
                _ => break,
            };
            if lvl < min {
                break;
            }
            self.next();
            let rhs = self.binary(lvl + 1)?;
            lhs = Expr::bin(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> PResult<Expr> {
        if self.eat("-") {
            if let Tok::Int(v) = *self.peek() {
                self.next();
                return Ok(Expr::Int((-v) as i32));
            }
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.primary()
    }

    fn primary(&mut self) -> PResult<Expr> {
        match self.peek().clone() {
            Tok::Int(v) => {
                if v > i32::MAX as i64 {
                    return self.err("integer literal out of range");
                }
                self.next();
                Ok(Expr::Int(v as i32))
            }
            Tok::Punct("(") => {
                self.next();
                let e = self.expr()?;
                self.expect(")")?;
                Ok(e)
            }
            Tok::Ident(name) => {
                self.next();
                let func = match name.as_str() {
                    "min" => Some(Func::Min),
                    "max" => Some(Func::Max),
                    "select" => Some(Func::Select),
                    _ => None,
                };
                if let (Some(f), Tok::Punct("(")) = (func, self.peek()) {
                    self.next();
                    let mut args = vec![self.expr()?];
                    while self.eat(",") {
                        args.push(self.expr()?);
                    }
                    self.expect(")")?;
                    if args.len() != f.arity() {
                        return self.err(format!("{} takes {} arguments", f.name(), f.arity()));
                    }
                    return Ok(Expr::Call(f, args));
                }
                if self.eat("[") {
                    let index = self.expr()?;
                    self.expect("]")?;
                    return Ok(Expr::Load(name, Box::new(index)));
                }
                Ok(Expr::Var(name))
            }
            t => self.err(format!("expected expression, found {}", Self::describe(&t))),
        }
    }
}

/// Parses kernel text into its syntax tree.
pub fn parse_ast(text: &str) -> Result<Kernel, FrontendError> {
    let toks = Lexer {
        src: text.as_bytes(),
        i: 0,
        line: 1,
        col: 1,
    }
    .tokens()?;
    Parser { toks, i: 0 }.kernel()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence() {
        let k = parse_ast("kernel t { x = 1 + 2 * 3 << 1 < 9 & 1; }").unwrap();
        let Stmt::Assign { value, .. } = &k.body[0] else {
            panic!()
        };
        // ((1 + (2*3)) << 1) < 9, then & 1
        assert!(matches!(value, Expr::Binary(BinOp::And, _, _)));
    }

    #[test]
    fn syntax_error_has_position() {
        let e = parse_ast("kernel t {\n  x = ;\n}").unwrap_err();
        assert!(
            matches!(
                e,
                FrontendError::Syntax {
                    line: 2,
                    col: 7,
                    ..
                }
            ),
            "{e}"
        );
    }

    #[test]
    fn division_is_rejected() {
        let e = parse_ast("kernel t { x = 4 / 2; }").unwrap_err();
        assert!(e.to_string().contains("non-affine"), "{e}");
    }

    #[test]
    fn bound_from_and_negative_literals() {
        let k = parse_ast("kernel t { loop i in -3.. bound-from 4 { } }").unwrap();
        assert_eq!(
            k.body[0],
            Stmt::Loop {
                var: "i".into(),
                lo: Expr::Int(-3),
                hi: LoopEnd::Count(Expr::Int(4)),
                body: vec![]
            }
        );
    }
}
