//! Per-(PE, cycle) activity trace.
//!
//! Text form, one line per PE per cycle:
//!
//! ```text
//! # cycle pe activity address
//! 0 0 configure 0
//! 1 0 compute 0
//! 1 1 stall-control 1
//! ```
//!
//! `address` is the instruction the PE is executing or waiting for, `-`
//! once the PE has nothing left to run.

use std::fmt::Write as _;

use super::{OpRecord, SimOutput};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Activity {
    Compute,
    Configure,
    StallData,
    StallControl,
    Idle,
}

impl Activity {
    pub const ALL: [Activity; 5] = [
        Activity::Compute,
        Activity::Configure,
        Activity::StallData,
        Activity::StallControl,
        Activity::Idle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Activity::Compute => "compute",
            Activity::Configure => "configure",
            Activity::StallData => "stall-data",
            Activity::StallControl => "stall-control",
            Activity::Idle => "idle",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Activity::ALL.iter().copied().find(|a| a.name() == s)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct TraceRow {
    pub cycle: u64,
    pub pe: usize,
    pub activity: Activity,
    pub address: Option<u16>,
}

/// Totals per activity class.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq)]
pub struct ActivityCounts {
    pub compute: u64,
    pub configure: u64,
    pub stall_data: u64,
    pub stall_control: u64,
    pub idle: u64,
}

impl ActivityCounts {
    fn add(&mut self, a: Activity) {
        match a {
            Activity::Compute => self.compute += 1,
            Activity::Configure => self.configure += 1,
            Activity::StallData => self.stall_data += 1,
            Activity::StallControl => self.stall_control += 1,
            Activity::Idle => self.idle += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.compute + self.configure + self.stall_data + self.stall_control + self.idle
    }
}

/// Dense trace: `cells[pe][cycle]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SimTrace {
    pub cycles: u64,
    pub cells: Vec<Vec<(Activity, Option<u16>)>>,
}

fn classify(
    ops: &[&OpRecord],
    windows: &[(u64, u64)],
    cycles: u64,
) -> Vec<(Activity, Option<u16>)> {
    let mut out = Vec::with_capacity(cycles as usize);
    // ops sorted by fire; `next` is the first op not yet fired, `w` the next window.
    let mut next = 0;
    let mut w = 0;
    let mut reach: u64 = 0;
    let mut reach_addr = None;
    for c in 0..cycles {
        while w < windows.len() && windows[w].1 <= c {
            w += 1;
        }
        let mut issued = None;
        while next < ops.len() && ops[next].fire <= c {
            let o = ops[next];
            let end = o.fire + o.latency.max(1) as u64;
            if end > reach || o.fire == c {
                reach = reach.max(end);
                reach_addr = Some(o.address);
            }
            if o.fire == c {
                issued = Some(o.address);
            }
            next += 1;
        }
        let cell = if let Some(a) = issued {
            (Activity::Compute, Some(a))
        } else if c < reach {
            (Activity::Compute, reach_addr)
        } else if w < windows.len() && windows[w].0 <= c {
            (Activity::Idle, ops.get(next).map(|o| o.address))
        } else if let Some(o) = ops.get(next) {
            let a = if o.configure.is_some_and(|(s, e)| s <= c && c < e) {
                Activity::Configure
            } else if c < o.act {
                Activity::StallControl
            } else {
                Activity::StallData
            };
            (a, Some(o.address))
        } else {
            (Activity::Idle, None)
        };
        out.push(cell);
    }
    out
}

impl SimTrace {
    pub fn build(out: &SimOutput) -> Self {
        let mut per: Vec<Vec<&OpRecord>> = vec![Vec::new(); out.pe_count];
        for o in &out.ops {
            per[o.pe.0 as usize].push(o);
        }
        let mut windows = out.ccu_windows.clone();
        windows.sort_unstable();
        let cells = per
            .into_iter()
            .map(|mut v| {
                v.sort_by_key(|o| (o.fire, o.address));
                classify(&v, &windows, out.stats.cycles)
            })
            .collect();
        SimTrace {
            cycles: out.stats.cycles,
            cells,
        }
    }

    pub fn pe_count(&self) -> usize {
        self.cells.len()
    }

    pub fn get(&self, pe: usize, cycle: u64) -> Activity {
        self.cells[pe][cycle as usize].0
    }

    /// Rows in (cycle, pe) order.
    pub fn rows(&self) -> impl Iterator<Item = TraceRow> + '_ {
        (0..self.cycles).flat_map(move |c| {
            (0..self.cells.len()).map(move |pe| {
                let (activity, address) = self.cells[pe][c as usize];
                TraceRow {
                    cycle: c,
                    pe,
                    activity,
                    address,
                }
            })
        })
    }

    pub fn counts(&self, pe: usize) -> ActivityCounts {
        let mut k = ActivityCounts::default();
        for &(a, _) in &self.cells[pe] {
            k.add(a);
        }
        k
    }

    pub fn totals(&self) -> ActivityCounts {
        let mut k = ActivityCounts::default();
        for row in &self.cells {
            for &(a, _) in row {
                k.add(a);
            }
        }
        k
    }

    /// Maximal runs `(start, length)` in which every PE is idle.
    pub fn all_idle_windows(&self) -> Vec<(u64, u64)> {
        let mut out = Vec::new();
        let mut start = None;
        for c in 0..self.cycles {
            let idle = self
                .cells
                .iter()
                .all(|row| row[c as usize].0 == Activity::Idle);
            match (idle, start) {
                (true, None) => start = Some(c),
                (false, Some(s)) => {
                    out.push((s, c - s));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            out.push((s, self.cycles - s));
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# cycle pe activity address\n");
        for r in self.rows() {
            let _ = match r.address {
                Some(a) => writeln!(s, "{} {} {} {}", r.cycle, r.pe, r.activity.name(), a),
                None => writeln!(s, "{} {} {} -", r.cycle, r.pe, r.activity.name()),
            };
        }
        s
    }

    /// Parses [`SimTrace::to_text`] output back.
    pub fn parse(text: &str) -> Result<Vec<TraceRow>, String> {
        let mut rows = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            let bad = || format!("line {}: malformed trace row", n + 1);
            if f.len() != 4 {
                return Err(bad());
            }
            rows.push(TraceRow {
                cycle: f[0].parse().map_err(|_| bad())?,
                pe: f[1].parse().map_err(|_| bad())?,
                activity: Activity::from_name(f[2]).ok_or_else(bad)?,
                address: if f[3] == "-" {
                    None
                } else {
                    Some(f[3].parse().map_err(|_| bad())?)
                },
            });
        }
        Ok(rows)
    }
}
