//! Random kernel sources shared by the integration tests.
#![allow(dead_code)]

use rand::Rng;

pub struct Gen<'a, R: Rng> {
    pub rng: &'a mut R,
    /// Names readable in the current scope.
    vars: Vec<String>,
}

impl<'a, R: Rng> Gen<'a, R> {
    pub fn new(rng: &'a mut R) -> Self {
        Gen {
            rng,
            vars: vec!["x".into(), "y".into(), "z".into()],
        }
    }

    fn leaf(&mut self) -> String {
        match self.rng.gen_range(0..3) {
            0 => self.rng.gen_range(0..20).to_string(),
            1 => {
                let a = ["a", "b"][self.rng.gen_range(0..2)];
                let v = self.vars[self.rng.gen_range(0..self.vars.len())].clone();
                format!("{a}[{v} & 15]")
            }
            _ => self.vars[self.rng.gen_range(0..self.vars.len())].clone(),
        }
    }

    pub fn expr(&mut self, depth: u32) -> String {
        if depth == 0 || self.rng.gen_bool(0.3) {
            return self.leaf();
        }
        let l = self.expr(depth - 1);
        let r = self.expr(depth - 1);
        match self.rng.gen_range(0..8) {
            0 => format!("({l} + {r})"),
            1 => format!("({l} - {r})"),
            2 => format!("({l} * {r})"),
            3 => format!("({l} & {r})"),
            4 => format!("({l} ^ {r})"),
            5 => format!("({l} << {})", self.rng.gen_range(1..4)),
            6 => format!("select({l} < {r}, {l}, {r})"),
            _ => format!("max({l}, {r})"),
        }
    }

    pub fn assign(&mut self, out: &mut String, indent: &str) {
        let e = self.expr(2);
        if self.rng.gen_bool(0.4) {
            let a = ["a", "b"][self.rng.gen_range(0..2)];
            let i = self.expr(1);
            out.push_str(&format!("{indent}{a}[({i}) & 15] = {e};\n"));
        } else {
            let v = ["x", "y", "z"][self.rng.gen_range(0..3)];
            out.push_str(&format!("{indent}{v} = {e};\n"));
        }
    }

    fn body(&mut self, out: &mut String, indent: &str, depth: u32) {
        let n = self.rng.gen_range(1..4);
        for _ in 0..n {
            match self.rng.gen_range(0..6) {
                0 if depth > 0 => {
                    let c = self.expr(1);
                    out.push_str(&format!(
                        "{indent}if ({c} < {}) {{\n",
                        self.rng.gen_range(0..30)
                    ));
                    self.assign(out, &format!("{indent}    "));
                    if self.rng.gen_bool(0.5) {
                        out.push_str(&format!("{indent}}} else {{\n"));
                        self.assign(out, &format!("{indent}    "));
                    }
                    out.push_str(&format!("{indent}}}\n"));
                }
                1 if depth > 0 => {
                    let v = format!("i{depth}");
                    let trip = self.rng.gen_range(1..5);
                    out.push_str(&format!("{indent}loop {v} in 0..{trip} {{\n"));
                    self.vars.push(v);
                    self.body(out, &format!("{indent}    "), depth - 1);
                    self.vars.pop();
                    out.push_str(&format!("{indent}}}\n"));
                }
                _ => self.assign(out, indent),
            }
        }
    }

    /// A kernel over `a[16]`, `b[16]` with loops and branches nested up to `depth`.
    pub fn kernel(&mut self, depth: u32) -> String {
        let mut s = String::from("kernel rnd {\n    array a[16];\n    array b[16];\n");
        self.body(&mut s, "    ", depth);
        s.push_str("}\n");
        s
    }

    /// Straight-line kernel of `stmts` assignments.
    pub fn straight(&mut self, stmts: usize) -> String {
        let mut s = String::from("kernel bb {\n    array a[16];\n    array b[16];\n");
        for _ in 0..stmts {
            self.assign(&mut s, "    ");
        }
        s.push_str("}\n");
        s
    }
}

/// Smallest `pes * fold - ops` over `pes <= cap`, `fold <= max_fold`.
pub fn brute_force_waste(ops: u32, cap: u32, max_fold: u32) -> Option<u32> {
    let mut best = None;
    for pes in 1..=cap {
        for fold in 1..=max_fold {
            if pes * fold >= ops {
                let w = pes * fold - ops;
                best = Some(best.map_or(w, |b: u32| b.min(w)));
            }
        }
    }
    best
}
