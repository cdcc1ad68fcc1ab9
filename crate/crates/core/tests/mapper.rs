mod common;

use std::collections::{BTreeMap, BTreeSet};

use mrnt_core::arch::Pe;
use mrnt_core::corpus;
use mrnt_core::frontend::parse_str;
use mrnt_core::ir::*;
use mrnt_core::mapper::*;
use mrnt_core::ArchConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn arch() -> ArchConfig {
    ArchConfig::default()
}

fn strip(rows: usize, cols: usize) -> ArchConfig {
    ArchConfig {
        rows,
        cols,
        ..ArchConfig::default()
    }
}

/// Spatial mapping of `block` on the first `n` PEs at II 1, built by hand.
fn spatial(block: &BasicBlock, n: usize) -> BlockMapping {
    BlockMapping {
        block: block.id,
        group: 0,
        ii: 1,
        extension_factor: 1,
        times: (0..block.dfg.len() as u32).collect(),
        placements: vec![(0..block.dfg.len()).map(|i| Pe((i % n) as u16)).collect()],
    }
}

fn all_mappings() -> Vec<(String, Strategy, bool, Mapping)> {
    let mut out = Vec::new();
    for name in corpus::ALL {
        let p = corpus::program(name).unwrap();
        for s in Strategy::ALL {
            for agile in [true, false] {
                if agile && s != Strategy::Marionette {
                    continue;
                }
                let m = map_program(&p, &arch(), s, agile)
                    .unwrap_or_else(|e| panic!("{name}/{s}: {e}"));
                out.push((name.to_string(), s, agile, m));
            }
        }
    }
    out
}

#[test]
fn corpus_mappings_hold_invariants() {
    for (name, s, agile, m) in all_mappings() {
        let errs = check_mapping(&m, &arch());
        assert!(errs.is_empty(), "{name}/{s}/agile={agile}: {errs:?}");
        for bm in &m.blocks {
            // ops per PE never exceed the II
            let mut per: BTreeMap<Pe, u32> = BTreeMap::new();
            for pe in &bm.placements[0] {
                *per.entry(*pe).or_default() += 1;
            }
            assert!(per.values().all(|&k| k <= bm.ii), "{name}/{s} {}", bm.block);
            assert!(bm.ii >= bm.extension_factor || bm.times.is_empty());
        }
    }
}

/// Under agile assignment every pipeline runs at once, so groups must not
/// share PEs. Baseline layouts may reuse PEs across barrier-separated loops.
#[test]
fn groups_use_disjoint_pools() {
    for (name, s, agile, m) in all_mappings() {
        if !agile {
            continue;
        }
        let mut pools: BTreeMap<u16, BTreeSet<Pe>> = BTreeMap::new();
        for bm in &m.blocks {
            pools
                .entry(bm.group)
                .or_default()
                .extend(bm.placements.iter().flatten().copied());
        }
        let groups: Vec<_> = pools.values().collect();
        for i in 0..groups.len() {
            for j in i + 1..groups.len() {
                assert!(
                    groups[i].is_disjoint(groups[j]),
                    "{name}/{s}/agile={agile}: groups share PEs"
                );
            }
        }
    }
}

#[test]
fn every_control_transfer_has_an_edge() {
    for (name, s, _, m) in all_mappings() {
        for b in &m.program.blocks {
            for &(to, cond) in &b.successors {
                let e = m
                    .control_edges
                    .iter()
                    .find(|e| e.from == b.id && e.to == to && e.cond == cond)
                    .unwrap_or_else(|| panic!("{name}/{s}: {} -> {to}", b.id));
                assert_eq!(e.address, m.address(to, NodeId(0)));
            }
        }
    }
}

#[test]
fn four_op_chain_is_spatial() {
    let p = parse_str("kernel c { array a[2]; a[1] = (a[0] + 1) * 3; }").unwrap();
    assert_eq!(p.blocks[0].dfg.len(), 4);
    let m = map_marionette(&p, &arch()).unwrap();
    let bm = &m.blocks[0];
    assert_eq!(bm.pe_set().len(), 4);
    assert_eq!((bm.ii, bm.extension_factor, pe_waste(bm)), (1, 1, 0));
}

#[test]
fn five_ops_on_three_pes() {
    let r = reshape_onto(5, 3);
    assert_eq!((r.pes, r.ii(), r.waste), (3, 2, 1));
    // Oracle: every fold that fits five ops onto exactly three PEs.
    let best = (1..=MAX_FOLD)
        .filter(|f| 3 * f >= 5)
        .map(|f| (3 * f - 5, f))
        .min()
        .unwrap();
    assert_eq!(best, (1, 2));

    let p = parse_str("kernel f { array a[2]; a[1] = ((a[0] + 1) * 3) + 2; }").unwrap();
    let b = &p.blocks[0];
    assert_eq!(b.dfg.len(), 5);
    let bm = time_extend(b, &arch(), &spatial(b, 5), 2).unwrap();
    assert_eq!((bm.pe_set().len(), bm.ii, pe_waste(&bm)), (3, 2, 1));
}

#[test]
fn waste_formula_examples() {
    let p = parse_str("kernel c { array a[2]; a[1] = (a[0] + 1) * 3; }").unwrap();
    let b = &p.blocks[0];
    assert_eq!(pe_waste(&spatial(b, 4)), 0);
    let mut folded = spatial(b, 4);
    folded.ii = 2;
    folded.placements[0] = vec![Pe(0), Pe(0), Pe(1), Pe(2)];
    assert_eq!(pe_waste(&folded), 2);
}

fn chain4() -> Program {
    parse_str("kernel c { array a[2]; a[1] = (a[0] + 1) * 3; }").unwrap()
}

#[test]
fn time_extend_halves_and_quarters() {
    let p = chain4();
    let b = &p.blocks[0];
    let base = spatial(b, 4);
    let two = time_extend(b, &arch(), &base, 2).unwrap();
    assert_eq!(
        (two.pe_set().len(), two.ii, two.extension_factor),
        (2, 2, 2)
    );
    let four = time_extend(b, &arch(), &base, 4).unwrap();
    assert_eq!(
        (four.pe_set().len(), four.ii, four.extension_factor),
        (1, 4, 4)
    );
}

fn topological_orders(block: &BasicBlock) -> Vec<Vec<usize>> {
    let n = block.dfg.len();
    let mut out = Vec::new();
    let mut perm: Vec<usize> = (0..n).collect();
    permute(&mut perm, 0, &mut |order| {
        let pos: Vec<usize> = (0..n)
            .map(|i| order.iter().position(|&x| x == i).unwrap())
            .collect();
        let ok = block.dfg.iter().enumerate().all(|(i, node)| {
            node.inputs.iter().all(|r| match r {
                ValueRef::Node(q) => pos[q.0] < pos[i],
                _ => true,
            })
        });
        if ok {
            out.push(order.to_vec());
        }
    });
    out
}

fn permute(v: &mut Vec<usize>, k: usize, f: &mut dyn FnMut(&[usize])) {
    if k == v.len() {
        f(v);
        return;
    }
    for i in k..v.len() {
        v.swap(k, i);
        permute(v, k + 1, f);
        v.swap(k, i);
    }
}

#[test]
fn diamond_fold_preserves_dependence_order() {
    let p = parse_str(
        "kernel d { array a[1]; loop i in 0..4 { s = x + 1; t = s + 2; u = s * 3; x = t + u; } a[0] = x; }",
    )
    .unwrap();
    let body = p
        .blocks
        .iter()
        .find(|b| b.dfg.len() == 4 && !b.loop_header)
        .unwrap();
    let bm = time_extend(body, &arch(), &spatial(body, 4), 2).unwrap();
    assert_eq!((bm.pe_set().len(), bm.ii), (2, 2));
    let orders = topological_orders(body);
    assert_eq!(orders.len(), 2);
    // The schedule, read in time order, must be one of the legal orders.
    let sched_ok = orders.iter().any(|o| {
        let pos: Vec<usize> = (0..4)
            .map(|i| o.iter().position(|&x| x == i).unwrap())
            .collect();
        (0..4).all(|i| (0..4).all(|j| bm.times[i] >= bm.times[j] || pos[i] < pos[j]))
    });
    assert!(sched_ok, "times {:?}", bm.times);
    for (i, node) in body.dfg.iter().enumerate() {
        for r in &node.inputs {
            if let ValueRef::Node(q) = r {
                assert!(bm.times[q.0] + arch().latency(body.dfg[q.0].opcode) <= bm.times[i]);
            }
        }
    }
}

#[test]
fn degenerate_fold_is_rejected() {
    let p = chain4();
    let b = &p.blocks[0];
    let mut narrow = spatial(b, 4);
    narrow.placements[0] = vec![Pe(0), Pe(1), Pe(0), Pe(1)];
    narrow.ii = 2;
    // Two PEs folded by 4 keep one PE at II 8, which fits; factor 0 does not.
    assert!(time_extend(b, &arch(), &narrow, 4).is_ok());
    assert!(matches!(
        time_extend(b, &arch(), &narrow, 0),
        Err(MapError::FoldInfeasible(_))
    ));
}

#[test]
fn unfold_restores_the_ii() {
    let p = chain4();
    let b = &p.blocks[0];
    let base = spatial(b, 4);
    for factor in [2, 4] {
        let folded = time_extend(b, &arch(), &base, factor).unwrap();
        let extra: Vec<Pe> = (4..16).map(Pe).collect();
        let back = unfold(&folded, factor, &extra).unwrap();
        assert_eq!(back.replication(), factor);
        assert_eq!(back.effective_ii(), base.ii as f64);
        let all: BTreeSet<Pe> = back.placements.iter().flatten().copied().collect();
        assert_eq!(all.len(), folded.pe_set().len() * factor as usize);
    }
    let folded = time_extend(b, &arch(), &base, 4).unwrap();
    assert!(unfold(&folded, 4, &[Pe(9)]).is_err());
}

#[test]
fn extension_never_lowers_the_ii() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let src = common::Gen::new(&mut rng).straight(3);
        let p = parse_str(&src).unwrap();
        let b = &p.blocks[0];
        let base = spatial(b, b.dfg.len().min(16));
        let mut last = 0;
        for f in 1..=MAX_FOLD {
            if let Ok(bm) = time_extend(b, &arch(), &base, f) {
                assert!(bm.ii >= last);
                last = bm.ii;
            }
        }
    }
}

#[test]
fn nested_loop_pipelines_every_level() {
    let p = corpus::program("nest3").unwrap();
    let info = analyze_loops(&p).unwrap();
    let (m, _) = map_marionette_with_log(&p, &arch()).unwrap();
    let plain = map_marionette_plain(&p, &arch()).unwrap();
    let mut used = BTreeSet::new();
    for bm in &m.blocks {
        used.extend(bm.placements.iter().flatten().copied());
    }
    // Most of the array is assigned; the outer levels are time-extended.
    assert!(used.len() >= 12, "{} PEs", used.len());
    let inner = info
        .loops
        .iter()
        .position(|l| l.children.is_empty())
        .unwrap();
    for bm in &m.blocks {
        if bm.times.is_empty() {
            continue;
        }
        match info.block_loop[bm.block.0] {
            Some(l) if l == inner => assert!(
                bm.effective_ii() <= 1.0,
                "{} {}",
                bm.block,
                bm.effective_ii()
            ),
            Some(_) => assert!(bm.extension_factor > 1, "{}", bm.block),
            None => {}
        }
    }
    assert!(plain.blocks.iter().all(|b| b.extension_factor == 1));
}

#[test]
fn agile_choice_minimizes_waste() {
    for name in corpus::ALL {
        let p = corpus::program(name).unwrap();
        let (_, log) = map_marionette_with_log(&p, &arch()).unwrap();
        assert!(!log.is_empty());
        for d in &log {
            let min = d.candidates.iter().map(|c| c.waste).min().unwrap();
            assert_eq!(d.choice().waste, min, "{name} level {:?}", d.level);
        }
    }
}

#[test]
fn random_blocks_reach_minimum_waste() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let a = arch();
    let mut big = 0;
    for _ in 0..200 {
        let stmts = rng.gen_range(1..12);
        let src = common::Gen::new(&mut rng).straight(stmts);
        let p = parse_str(&src).unwrap();
        let (m, _) = map_marionette_with_log(&p, &a).unwrap();
        let bm = &m.blocks[0];
        let ops = bm.times.len() as u32;
        if ops == 0 {
            continue;
        }
        big += (ops > 16) as u32;
        let oracle = common::brute_force_waste(ops, a.pe_count() as u32, MAX_FOLD).unwrap();
        assert_eq!(
            pe_waste(bm),
            oracle,
            "{ops} ops: ii {} on {} PEs",
            bm.ii,
            bm.pe_set().len()
        );
    }
    assert!(big > 20, "too few blocks needed folding: {big}");
}

const BRANCHY: &str = "kernel br {
    array a[8];
    array b[8];
    loop i in 0..8 {
        if (a[i] < 5) {
            x = a[i] * 3 + 1;
        } else {
            x = a[i] - 7;
        }
        b[i] = x;
    }
}";

#[test]
fn predication_uses_disjoint_lanes() {
    let p = parse_str(BRANCHY).unwrap();
    let m = map_baseline(&p, &arch(), Strategy::Predication).unwrap();
    // If-conversion removed the branch; both arms live in one block.
    assert!(m.program.blocks.iter().all(|b| !b.has_divergence()));
    let body = m
        .program
        .blocks
        .iter()
        .find(|b| b.dfg.iter().any(|n| n.opcode == Opcode::Mul))
        .unwrap();
    let bm = &m.blocks[body.id.0];
    let pe_of = |op: Opcode| {
        let i = body.dfg.iter().position(|n| n.opcode == op).unwrap();
        bm.placements[0][i]
    };
    assert!(body.dfg.iter().any(|n| n.opcode == Opcode::Select));
    assert_eq!(bm.ii, 1);
    assert_ne!(pe_of(Opcode::Mul), pe_of(Opcode::Sub));
    assert!(m
        .program
        .blocks
        .iter()
        .all(|b| !b.dfg.iter().any(|n| n.opcode == Opcode::Branch)));
}

#[test]
fn switch_config_overlays_arms() {
    let p = parse_str(BRANCHY).unwrap();
    let m = map_baseline(&p, &arch(), Strategy::SwitchConfig).unwrap();
    let arms = exclusive_arms(&m.program);
    assert!(!arms.is_empty());
    for (t, e) in arms {
        let a: BTreeSet<Pe> = m.blocks[t.0].pe_set().into_iter().collect();
        let b: BTreeSet<Pe> = m.blocks[e.0].pe_set().into_iter().collect();
        assert!(!a.is_disjoint(&b), "{t} and {e} should share a lane");
    }
}

#[test]
fn dataflow_instructions_do_not_persist() {
    let p = parse_str("kernel d { array a[2]; a[1] = a[0] + 5; }").unwrap();
    assert_eq!(p.blocks[0].dfg.len(), 3);
    let m = map_baseline(&p, &arch(), Strategy::Dataflow).unwrap();
    let (_, table) = read_instruction_table(&emit_bitstream(&m, &arch())).unwrap();
    let all: Vec<&PeInstruction> = table.iter().flat_map(|(_, l)| l).collect();
    assert_eq!(all.len(), 3);
    assert!(all.iter().all(|i| !i.persist));

    let m = map_marionette(&p, &arch()).unwrap();
    let (_, table) = read_instruction_table(&emit_bitstream(&m, &arch())).unwrap();
    assert!(table.iter().flat_map(|(_, l)| l).all(|i| i.persist));
}

#[test]
fn instruction_addresses_unique_per_pe() {
    for (name, s, _, m) in all_mappings() {
        let (_, table) = read_instruction_table(&emit_bitstream(&m, &arch())).unwrap();
        for (pe, list) in table {
            let keys: BTreeSet<(u16, u8)> = list.iter().map(|i| (i.address, i.replica)).collect();
            assert_eq!(keys.len(), list.len(), "{name}/{s} {pe}");
        }
    }
}

#[test]
fn bitstream_round_trips_the_corpus() {
    for (name, s, _, m) in all_mappings() {
        let bytes = emit_bitstream(&m, &arch());
        let (back, echo) = load_bitstream(&bytes).unwrap();
        assert_eq!(back, m, "{name}/{s}");
        assert_eq!((echo.rows, echo.cols), (4, 4));
        assert_eq!(emit_bitstream(&back, &arch()), bytes);
    }
}

#[test]
fn empty_program_is_header_only() {
    let m = Mapping {
        strategy: Strategy::Marionette,
        agile: true,
        program: Program {
            name: "empty".into(),
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
    let bytes = emit_bitstream(&m, &arch());
    assert_eq!(bytes, [b'M', b'R', b'N', b'T', 1, 0, 4, 4, 0]);
    let (_, table) = read_instruction_table(&bytes).unwrap();
    assert!(table.is_empty());
}

/// Two PEs: PE 0 holds a load at address 0 that proactively targets port 1
/// with address 1; PE 1 holds a store at address 1.
#[test]
fn hand_built_two_pe_fixture() {
    let mut b: Vec<u8> = b"MRNT".to_vec();
    b.extend([1, 0, 1, 2, 0]);
    let mut pein: Vec<u8> = vec![2, 0];
    // PE 0, one instruction
    pein.extend([0, 0, 1, 0]);
    pein.extend([0, 0]); // address 0
    pein.push(0b0000_0001); // persist
    pein.push(6); // load
    pein.extend([0x00, 0x80]); // imm #0
    pein.extend([0xFF, 0xFF, 0xFF, 0xFF]);
    pein.extend([0, 0]); // time 0
    pein.extend([0, 0]); // array 0
    pein.push(1); // dfg sender
    pein.push(1);
    pein.extend([1, 0, 1, 0]); // port 1, address 1
                               // PE 1, one instruction
    pein.extend([1, 0, 1, 0]);
    pein.extend([1, 0]);
    pein.push(0b0000_0111); // persist, replica 1
    pein.push(7); // store
    pein.extend([0x01, 0x80]); // imm #1
    pein.extend([0x00, 0x00]); // node 0
    pein.extend([0xFF, 0xFF]);
    pein.extend([1, 0]); // time 1
    pein.extend([0, 0]);
    pein.push(0);
    pein.push(0);
    b.push(6);
    b.extend((pein.len() as u32).to_le_bytes());
    b.extend(pein);

    let (echo, table) = read_instruction_table(&b).unwrap();
    assert_eq!((echo.rows, echo.cols), (1, 2));
    assert_eq!(table.len(), 2);
    let (pe0, l0) = &table[0];
    assert_eq!(*pe0, Pe(0));
    assert_eq!(
        l0[0],
        PeInstruction {
            address: 0,
            persist: true,
            replica: 0,
            opcode: Opcode::Load,
            srcs: [
                SourceOperand::Imm(0),
                SourceOperand::None,
                SourceOperand::None
            ],
            time: 0,
            array: Some(0),
            sender: SenderMode::Dfg,
            targets: vec![(1, 1)],
        }
    );
    let (pe1, l1) = &table[1];
    assert_eq!(*pe1, Pe(1));
    assert_eq!(
        l1[0],
        PeInstruction {
            address: 1,
            persist: true,
            replica: 1,
            opcode: Opcode::Store,
            srcs: [
                SourceOperand::Imm(1),
                SourceOperand::Node(0),
                SourceOperand::None
            ],
            time: 1,
            array: Some(0),
            sender: SenderMode::None,
            targets: vec![],
        }
    );
}

#[test]
fn malformed_bitstreams_are_rejected() {
    let p = corpus::program("vecadd").unwrap();
    let bytes = emit_bitstream(&map_marionette(&p, &arch()).unwrap(), &arch());

    let mut v = bytes.clone();
    v[4] = 9;
    assert_eq!(
        load_bitstream(&v).unwrap_err(),
        BitstreamError::VersionMismatch {
            found: 9,
            expected: BITSTREAM_VERSION
        }
    );
    assert!(load_bitstream(&v)
        .unwrap_err()
        .to_string()
        .contains("version mismatch"));

    let mut v = bytes.clone();
    v[0] = b'X';
    assert_eq!(load_bitstream(&v).unwrap_err(), BitstreamError::BadMagic);

    for cut in [3, 8, 12, bytes.len() / 2, bytes.len() - 1] {
        assert!(
            matches!(
                load_bitstream(&bytes[..cut]),
                Err(BitstreamError::Truncated { .. } | BitstreamError::BadMagic)
            ),
            "cut at {cut}"
        );
    }
}

#[test]
fn random_mappings_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for k in 0..1000 {
        let src = common::Gen::new(&mut rng).kernel(2);
        let p = parse_str(&src).unwrap();
        let s = Strategy::ALL[k % 4];
        let agile = k % 8 == 0;
        let a = if k % 3 == 0 { strip(2, 4) } else { arch() };
        let m = match map_program(&p, &a, s, agile) {
            Ok(m) => m,
            Err(MapError::UnmappableBlock { .. }) => continue,
            Err(e) => panic!("{src}\n{s}: {e}"),
        };
        let bytes = emit_bitstream(&m, &a);
        let (back, echo) = load_bitstream(&bytes).unwrap();
        assert_eq!(back, m, "{src}");
        assert_eq!((echo.rows as usize, echo.cols as usize), (a.rows, a.cols));
    }
}

#[test]
fn oversized_block_is_unmappable() {
    let body = "x = x + 1;\n".repeat(140);
    let p = parse_str(&format!("kernel big {{ array a[1]; {body} a[0] = x; }}")).unwrap();
    let err = map_marionette(&p, &arch()).unwrap_err();
    assert!(err.to_string().starts_with("unmappable block"), "{err}");
    // 40 ops exceed a 2x2 array even at the largest fold.
    let body = "x = x + 1;\n".repeat(40);
    let p = parse_str(&format!("kernel big {{ array a[1]; {body} a[0] = x; }}")).unwrap();
    let err = map_marionette(&p, &strip(2, 2)).unwrap_err();
    assert!(
        matches!(
            err,
            MapError::UnmappableBlock {
                ops: 41,
                capacity: 32,
                ..
            }
        ),
        "{err}"
    );
}

#[test]
fn mapping_is_deterministic() {
    for name in corpus::ALL {
        let p = corpus::program(name).unwrap();
        for s in Strategy::ALL {
            let a = emit_bitstream(&map_program(&p, &arch(), s, true).unwrap(), &arch());
            let b = emit_bitstream(&map_program(&p, &arch(), s, true).unwrap(), &arch());
            assert_eq!(a, b, "{name}/{s}");
        }
    }
}
