//! Reshaping: folding a block's spatial mapping into time and back.

use super::place::{place_block, Mrt};
use super::{BlockMapping, MapError};
use crate::arch::{ArchConfig, Pe};
use crate::ir::BasicBlock;

/// Largest time-extension factor the enumeration considers.
pub const MAX_FOLD: u32 = 8;

/// One (PE count, fold factor) shape for a block of `ops` operations.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Reshape {
    pub pes: u32,
    pub factor: u32,
    pub waste: u32,
}

impl Reshape {
    pub fn ii(&self) -> u32 {
        self.factor
    }
}

/// Every shape with `pes <= cap`, `factor` in `1..=MAX_FOLD` and room for all ops.
pub fn enumerate_reshapes(ops: u32, cap: u32) -> Vec<Reshape> {
    let mut out = Vec::new();
    for factor in 1..=MAX_FOLD {
        for pes in 1..=cap {
            if pes * factor >= ops {
                out.push(Reshape {
                    pes,
                    factor,
                    waste: pes * factor - ops,
                });
            }
        }
    }
    out
}

/// Minimum-waste shape; ties go to the smaller II, then fewer PEs.
pub fn reshape(ops: u32, cap: u32) -> Option<Reshape> {
    enumerate_reshapes(ops, cap)
        .into_iter()
        .min_by_key(|r| (r.waste, r.factor, r.pes))
}

/// Smallest II that fits `ops` onto exactly `pes` PEs.
pub fn reshape_onto(ops: u32, pes: u32) -> Reshape {
    let factor = ops.div_ceil(pes.max(1)).max(1);
    Reshape {
        pes,
        factor,
        waste: pes * factor - ops,
    }
}

/// Empty slot count: `|pe_set| * ii - ops`.
pub fn pe_waste(bm: &BlockMapping) -> u32 {
    bm.pe_set().len() as u32 * bm.ii - bm.times.len() as u32
}

/// Folds a block onto `ceil(|pe_set| / factor)` of its PEs with `factor` times the II.
pub fn time_extend(
    block: &BasicBlock,
    arch: &ArchConfig,
    bm: &BlockMapping,
    factor: u32,
) -> Result<BlockMapping, MapError> {
    if factor == 0 {
        return Err(MapError::FoldInfeasible("factor must be at least 1".into()));
    }
    let ii = bm
        .ii
        .checked_mul(factor)
        .filter(|&ii| ii <= u16::MAX as u32)
        .ok_or_else(|| MapError::FoldInfeasible(format!("II {} x {factor} overflows", bm.ii)))?;
    let pes = bm.pe_set();
    let keep = pes.len().div_ceil(factor as usize).max(1);
    let pool: Vec<Pe> = pes.into_iter().take(keep).collect();
    if (pool.len() as u32) * ii < block.dfg.len() as u32 {
        return Err(MapError::FoldInfeasible(format!(
            "{} ops do not fit {} PEs at II {ii}",
            block.dfg.len(),
            pool.len()
        )));
    }
    let mut mrt = Mrt::new(ii);
    let (times, placement, _) = place_block(block, arch, &pool, &mut mrt)?;
    Ok(BlockMapping {
        block: bm.block,
        group: bm.group,
        ii,
        extension_factor: bm.extension_factor * factor,
        times,
        placements: vec![placement],
    })
}

/// Replicates a folded block `factor` times onto `extra` PEs.
///
/// Replica `r` uses the PEs `extra[(r-1)*n .. r*n]` in the same pattern as the
/// primary. The effective II, `ii / replication`, undoes a fold by `factor`.
pub fn unfold(bm: &BlockMapping, factor: u32, extra: &[Pe]) -> Result<BlockMapping, MapError> {
    let pes = bm.pe_set();
    let need = pes.len() * (factor as usize).saturating_sub(1);
    if factor == 0 || extra.len() < need {
        return Err(MapError::FoldInfeasible(format!(
            "unfold x{factor} needs {need} spare PEs, have {}",
            extra.len()
        )));
    }
    let mut out = bm.clone();
    for r in 1..factor as usize {
        let chunk = &extra[(r - 1) * pes.len()..r * pes.len()];
        let replica = bm.placements[0]
            .iter()
            .map(|p| chunk[pes.iter().position(|q| q == p).unwrap()])
            .collect();
        out.placements.push(replica);
    }
    Ok(out)
}
