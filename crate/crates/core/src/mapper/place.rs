//! Greedy modulo placement of one block onto a PE pool.

use std::collections::HashSet;

use super::MapError;
use crate::arch::{ArchConfig, Pe};
use crate::ir::{BasicBlock, Program, ValueRef};

/// Dimension order of a data-network route.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum RouteOrder {
    /// Along the row first, then the column.
    Xy,
    Yx,
}

impl RouteOrder {
    pub fn code(self) -> u8 {
        match self {
            RouteOrder::Xy => 0,
            RouteOrder::Yx => 1,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(RouteOrder::Xy),
            1 => Some(RouteOrder::Yx),
            _ => None,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
enum Port {
    North,
    South,
    East,
    West,
}

/// Input port a route enters `to` through.
fn arrival(arch: &ArchConfig, from: Pe, to: Pe, order: RouteOrder) -> Port {
    let (fr, fc) = arch.coord(from);
    let (tr, tc) = arch.coord(to);
    let vertical = || if fr < tr { Port::North } else { Port::South };
    let horizontal = || if fc < tc { Port::West } else { Port::East };
    match order {
        RouteOrder::Xy if fr != tr => vertical(),
        RouteOrder::Xy => horizontal(),
        RouteOrder::Yx if fc != tc => horizontal(),
        RouteOrder::Yx => vertical(),
    }
}

/// Picks a dimension order per distinct remote producer so no two share an input port.
pub(crate) fn assign_ports(arch: &ArchConfig, to: Pe, producers: &[Pe]) -> Option<Vec<RouteOrder>> {
    let n = producers.len();
    for mask in 0..(1u32 << n) {
        let orders: Vec<RouteOrder> = (0..n)
            .map(|i| {
                if mask >> i & 1 == 0 {
                    RouteOrder::Xy
                } else {
                    RouteOrder::Yx
                }
            })
            .collect();
        let ports: HashSet<Port> = producers
            .iter()
            .zip(&orders)
            .map(|(&p, &o)| arrival(arch, p, to, o))
            .collect();
        if ports.len() == n {
            return Some(orders);
        }
    }
    None
}

/// Modulo reservation table shared by the blocks of one group.
#[derive(Clone, Debug)]
pub(crate) struct Mrt {
    pub ii: u32,
    pub used: HashSet<(Pe, u32)>,
}

impl Mrt {
    pub fn new(ii: u32) -> Self {
        Mrt {
            ii: ii.max(1),
            used: HashSet::new(),
        }
    }
}

/// A data route chosen for input `input` of `node`.
pub(crate) type PlacedRoute = (usize, usize, RouteOrder);

type Placed = (Vec<u32>, Vec<Pe>, Vec<PlacedRoute>);

/// Places every node at the earliest (PE, time) whose modulo slot is free.
/// Ties go to the earlier PE in pool order. When a full pool leaves some node
/// without a conflict-free input port, the pool is retried in reversed and
/// rotated orders before giving up.
pub(crate) fn place_block(
    block: &BasicBlock,
    arch: &ArchConfig,
    pool: &[Pe],
    mrt: &mut Mrt,
) -> Result<Placed, MapError> {
    let mut first_err = None;
    let n = pool.len();
    for k in 0..(2 * n).max(1) {
        let mut order: Vec<Pe> = pool.to_vec();
        if k % 2 == 1 {
            order.reverse();
        }
        order.rotate_left(k / 2 % n.max(1));
        let mut trial = mrt.clone();
        match place_once(block, arch, &order, &mut trial) {
            Ok(r) => {
                *mrt = trial;
                return Ok(r);
            }
            Err(e @ MapError::Congested { .. }) => {
                first_err.get_or_insert(e);
            }
            Err(e) => return Err(e),
        }
    }
    Err(first_err.unwrap())
}

fn place_once(
    block: &BasicBlock,
    arch: &ArchConfig,
    pool: &[Pe],
    mrt: &mut Mrt,
) -> Result<Placed, MapError> {
    let n = block.dfg.len();
    let order = Program::topo_order(block)
        .ok_or_else(|| MapError::Invalid(format!("{}: cyclic DFG", block.id)))?;
    let mut times = vec![0u32; n];
    let mut pes = vec![Pe(0); n];
    let mut routes = Vec::new();
    let ii = mrt.ii;
    for i in order {
        let node = &block.dfg[i];
        let preds: Vec<usize> = node
            .inputs
            .iter()
            .filter_map(|r| match r {
                ValueRef::Node(p) => Some(p.0),
                _ => None,
            })
            .collect();
        let mut best: Option<(u32, usize, Vec<RouteOrder>, Vec<Pe>)> = None;
        for (k, &pe) in pool.iter().enumerate() {
            let Some(slot_t) = (|| {
                let ready = preds
                    .iter()
                    .map(|&p| {
                        times[p] + arch.latency(block.dfg[p].opcode) + arch.hop_latency(pes[p], pe)
                    })
                    .max()
                    .unwrap_or(0);
                (ready..ready + ii).find(|t| !mrt.used.contains(&(pe, t % ii)))
            })() else {
                continue;
            };
            let mut remote: Vec<Pe> = preds.iter().map(|&p| pes[p]).filter(|&p| p != pe).collect();
            remote.sort();
            remote.dedup();
            let Some(orders) = assign_ports(arch, pe, &remote) else {
                continue;
            };
            if best.as_ref().map_or(true, |b| slot_t < b.0) {
                best = Some((slot_t, k, orders, remote));
            }
        }
        let Some((t, k, orders, remote)) = best else {
            return Err(MapError::Congested {
                block: block.id,
                node: node.id,
            });
        };
        let pe = pool[k];
        mrt.used.insert((pe, t % ii));
        times[i] = t;
        pes[i] = pe;
        for (input, r) in node.inputs.iter().enumerate() {
            if let ValueRef::Node(p) = r {
                if let Some(j) = remote.iter().position(|&q| q == pes[p.0]) {
                    routes.push((i, input, orders[j]));
                }
            }
        }
    }
    Ok((times, pes, routes))
}
