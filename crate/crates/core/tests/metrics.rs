use mrnt_core::arch::Pe;
use mrnt_core::corpus;
use mrnt_core::frontend::{parse_str, MemoryImage};
use mrnt_core::ir::*;
use mrnt_core::mapper::*;
use mrnt_core::metrics::*;
use mrnt_core::sim::*;
use mrnt_core::ArchConfig;

fn arch() -> ArchConfig {
    ArchConfig::default()
}

fn run_named(name: &str, model: Model, s: Strategy, agile: bool) -> (Mapping, SimOutput) {
    let p = corpus::program(name).unwrap();
    run(&p, &corpus::memory(&p, 1), model, s, agile)
}

fn run(
    p: &Program,
    mem: &MemoryImage,
    model: Model,
    s: Strategy,
    agile: bool,
) -> (Mapping, SimOutput) {
    let m = map_program(p, &arch(), s, agile).unwrap();
    let out = simulate_mapping(&m, &arch(), mem, model, &SimOptions::default()).unwrap();
    (m, out)
}

fn row(name: &str, label: &str, model: Model, s: Strategy, agile: bool) -> MetricsRow {
    let (m, out) = run_named(name, model, s, agile);
    MetricsRow::from_run(name, model, label, &m, &out)
}

#[test]
fn full_compute_is_full_utilization() {
    let (m, out) = run_named("vecadd", Model::Marionette, Strategy::Marionette, true);
    let mut t = out.trace();
    for row in &mut t.cells {
        for cell in row.iter_mut() {
            cell.0 = Activity::Compute;
        }
    }
    assert_eq!(pe_utilization(&t, &m), 1.0);
}

#[test]
fn long_chain_approaches_full_utilization() {
    let n = 100u64;
    let p = parse_str(&format!(
        "kernel ch {{ array a[{n}]; array b[{n}]; loop i in 0..{n} {{ a[i] = b[i] + 1 + i; }} }}"
    ))
    .unwrap();
    let (m, out) = run(
        &p,
        &MemoryImage::zeroed(&p),
        Model::Marionette,
        Strategy::Marionette,
        true,
    );
    let u = pe_utilization(&out.trace(), &m);
    let fill = out.stats.cycles - n;
    let closed = n as f64 / (n + fill) as f64;
    assert!(u >= 0.9, "{u}");
    assert!((u - closed).abs() < 0.02, "{u} vs {closed}");
}

#[test]
fn utilization_is_exact_accounting() {
    for name in corpus::ALL {
        let (m, out) = run_named(name, Model::Marionette, Strategy::Marionette, true);
        let t = out.trace();
        let pes = mapped_pes(&m);
        let compute: u64 = pes.iter().map(|p| t.counts(p.0 as usize).compute).sum();
        let u = pe_utilization(&t, &m);
        assert!(
            (u * (pes.len() as u64 * t.cycles) as f64 - compute as f64).abs() < 1e-6,
            "{name}"
        );
        assert!((0.0..=1.0).contains(&u));
        let b = activity_breakdown(&t, &m);
        assert!((b.values().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn switch_config_wastes_more_than_marionette() {
    let (m1, o1) = run_named(
        "merge_sort",
        Model::VonNeumann,
        Strategy::SwitchConfig,
        false,
    );
    let (m2, o2) = run_named("merge_sort", Model::Marionette, Strategy::Marionette, true);
    assert!(pe_utilization(&o1.trace(), &m1) < pe_utilization(&o2.trace(), &m2));
}

#[test]
fn fed_pipeline_is_fully_utilized() {
    let p = parse_str("kernel s { array a[1]; loop i in 0..64 { x = x + 3; } a[0] = x; }").unwrap();
    let (m, out) = run(
        &p,
        &MemoryImage::zeroed(&p),
        Model::Marionette,
        Strategy::Marionette,
        true,
    );
    assert_eq!(pipeline_utilization(&out, &m), Some(1.0));
}

#[test]
fn half_idle_pipeline_is_half_utilized() {
    let p = parse_str("kernel s { array a[1]; loop i in 0..2 { x = x + 3; } a[0] = x; }").unwrap();
    let (m, mut out) = run(
        &p,
        &MemoryImage::zeroed(&p),
        Model::Marionette,
        Strategy::Marionette,
        true,
    );
    // Keep only the body and space its two iterations over a 4-cycle window.
    let body = p
        .blocks
        .iter()
        .find(|b| !b.loop_header && b.dfg.len() == 1)
        .unwrap()
        .id;
    let mut ops: Vec<OpRecord> = out
        .ops
        .iter()
        .filter(|o| o.block == body)
        .copied()
        .collect();
    assert_eq!(ops.len(), 2);
    ops[0].fire = 0;
    ops[1].fire = 3;
    out.ops = ops;
    let mut mm = m.clone();
    for b in &mut mm.blocks {
        if b.block != body {
            b.times.clear();
        }
    }
    assert_eq!(pipeline_utilization(&out, &mm), Some(0.5));
}

#[test]
fn outer_utilization_is_na_without_outer_blocks() {
    let (m, out) = run_named("vecadd", Model::Marionette, Strategy::Marionette, true);
    assert_eq!(outer_bb_utilization(&out.trace(), &m), None);
    assert!(outer_blocks(&m).is_empty());
    let (m, _) = run_named("gemm", Model::Marionette, Strategy::Marionette, true);
    assert!(!outer_blocks(&m).is_empty());
}

#[test]
fn agile_assignment_raises_utilization() {
    for name in ["gemm", "spmv"] {
        let a = row(
            name,
            "marionette",
            Model::Marionette,
            Strategy::Marionette,
            true,
        );
        let b = row(
            name,
            "marionette+no-agile",
            Model::Marionette,
            Strategy::Marionette,
            false,
        );
        let outer = a.outer_bb_utilization.unwrap() / b.outer_bb_utilization.unwrap();
        let pipe = a.pipeline_utilization.unwrap() / b.pipeline_utilization.unwrap();
        assert!(outer > 1.0, "{name} outer {outer}");
        assert!(pipe >= 1.2, "{name} pipe {pipe}");
        if name == "gemm" {
            assert!(outer >= 5.0, "gemm outer {outer}");
        }
        assert!(speedup(b.cycles, a.cycles) >= 1.5);
    }
}

#[test]
fn speedup_laws() {
    assert_eq!(speedup(100, 100), 1.0);
    assert_eq!(speedup(200, 100), 2.0);
    for (a, b) in [(3u64, 7u64), (11_116, 29_527), (1, 1_000_000)] {
        assert!((speedup(a, b) * speedup(b, a) - 1.0).abs() < 1e-12);
    }
    assert_eq!(geomean(&[2.0, 8.0]), Some(4.0));
    assert_eq!(geomean(&[]), None);
}

fn fake(kernel: &str, strategy: &str, cycles: u64) -> MetricsRow {
    MetricsRow {
        kernel: kernel.into(),
        model: Model::Marionette,
        strategy: strategy.into(),
        cycles,
        pe_utilization: 0.5,
        outer_bb_utilization: None,
        pipeline_utilization: Some(0.25),
        block_ii: vec![(BlockId(1), 1), (BlockId(2), 3)],
    }
}

#[test]
fn speedup_table_skips_missing_pairs() {
    let rows = vec![
        fake("k1", "base", 200),
        fake("k1", "new", 100),
        fake("k2", "base", 90),
        fake("k2", "new", 10),
        fake("k3", "base", 50),
    ];
    let t = speedup_table(&rows, "marionette/base", "marionette/new");
    assert_eq!(t.entries.len(), 2);
    assert_eq!(t.entries[0].speedup, 2.0);
    assert_eq!(t.entries[1].speedup, 9.0);
    assert!((t.geomean.unwrap() - 18f64.sqrt()).abs() < 1e-12);
    assert_eq!(t.warnings.len(), 1);
    assert!(t.warnings[0].starts_with("k3"));
    assert_eq!(
        t.to_text(),
        speedup_table(&rows, "marionette/base", "marionette/new").to_text()
    );
}

#[test]
fn marionette_beats_predication_on_control_intensive_kernels() {
    let mut rows = Vec::new();
    for name in corpus::BENCHMARKS
        .iter()
        .filter(|k| corpus::control_intensive(k))
    {
        rows.push(row(
            name,
            "marionette",
            Model::Marionette,
            Strategy::Marionette,
            true,
        ));
        rows.push(row(
            name,
            "predication",
            Model::VonNeumann,
            Strategy::Predication,
            false,
        ));
    }
    let t = speedup_table(&rows, "von-neumann/predication", "marionette/marionette");
    assert_eq!(t.entries.len(), 3);
    assert!(t.geomean.unwrap() > 1.0, "{}", t.to_text());
}

#[test]
fn csv_format() {
    assert_eq!(to_csv(&[]), format!("{CSV_HEADER}\n"));
    let one = to_csv(&[fake("k", "marionette", 42)]);
    assert_eq!(
        one,
        "kernel,model,strategy,cycles,pe_util,outer_bb_util,pipe_util,ii_min,ii_max\n\
         k,marionette,marionette,42,0.5000,n/a,0.2500,1,3\n"
    );
    assert_eq!(one.lines().count(), 2);
    assert!(!one.contains('\r'));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.csv");
    write_csv(&[], &path).unwrap();
    assert_eq!(
        std::fs::read_to_string(&path).unwrap(),
        format!("{CSV_HEADER}\n")
    );
    assert!(write_csv(&[], &dir.path().join("missing/dir/m.csv")).is_err());
}

#[test]
fn corpus_csv_is_reproducible() {
    let build = || {
        let mut rows = Vec::new();
        for name in corpus::BENCHMARKS {
            for (model, s) in [
                (Model::Marionette, Strategy::Marionette),
                (Model::VonNeumann, Strategy::SwitchConfig),
                (Model::Dataflow, Strategy::Dataflow),
            ] {
                rows.push(row(name, s.name(), model, s, true));
            }
        }
        to_csv(&rows)
    };
    assert_eq!(build(), build());
}

#[test]
fn home_blocks_cover_mapped_pes() {
    let (m, _) = run_named("spmv", Model::Marionette, Strategy::Marionette, true);
    let homes = home_blocks(&m);
    let pes = mapped_pes(&m);
    assert_eq!(
        homes.keys().copied().collect::<Vec<Pe>>(),
        pes.into_iter().collect::<Vec<_>>()
    );
}
