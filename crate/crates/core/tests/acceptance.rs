//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

#[path = "common/benes.rs"]
mod benes;
mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use mrnt_core::corpus;
use mrnt_core::frontend::{interpret, parse_str, MemoryImage};
use mrnt_core::ir::{BlockId, Opcode, Program};
use mrnt_core::mapper::*;
use mrnt_core::metrics::{speedup, to_csv, MetricsRow};
use mrnt_core::netctl::{build, RouteRequest};
use mrnt_core::sim::*;
use mrnt_core::ArchConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn arch() -> ArchConfig {
    ArchConfig::default()
}

fn sim(
    p: &Program,
    mem: &MemoryImage,
    model: Model,
    s: Strategy,
    agile: bool,
    opts: SimOptions,
) -> Result<(Mapping, SimOutput), String> {
    let a = arch();
    let m = map_program(p, &a, s, agile).map_err(|e| format!("{}/{s}: {e}", p.name))?;
    let out = simulate(&emit_bitstream(&m, &a), &a, mem, model, &opts)
        .map_err(|e| format!("{}/{model}/{s}: {e}", p.name))?;
    Ok((m, out))
}

fn corpus_run(
    name: &str,
    model: Model,
    s: Strategy,
    agile: bool,
    opts: SimOptions,
) -> Result<(Mapping, SimOutput), String> {
    let p = corpus::program(name).map_err(|e| e.to_string())?;
    sim(
        &p,
        &corpus::memory(&p, corpus::DEFAULT_SEED),
        model,
        s,
        agile,
        opts,
    )
}

fn cycles(
    name: &str,
    model: Model,
    s: Strategy,
    agile: bool,
    opts: SimOptions,
) -> Result<u64, String> {
    Ok(corpus_run(name, model, s, agile, opts)?.1.stats.cycles)
}

fn marionette(name: &str) -> Result<u64, String> {
    cycles(
        name,
        Model::Marionette,
        Strategy::Marionette,
        true,
        SimOptions::default(),
    )
}

fn within(limit: Duration, start: Instant, msg: String) -> Outcome {
    let t = start.elapsed();
    if t > limit {
        Err(format!(
            "{msg}, but took {:.1}s (limit {}s)",
            t.as_secs_f64(),
            limit.as_secs()
        ))
    } else {
        Ok(format!("{msg} in {:.1}s", t.as_secs_f64()))
    }
}

fn functional_equivalence() -> Outcome {
    let start = Instant::now();
    let d = SimOptions::default();
    let configs = [
        (Model::Marionette, Strategy::Marionette, true, d),
        (Model::Marionette, Strategy::Marionette, false, d),
        (
            Model::Marionette,
            Strategy::Marionette,
            true,
            SimOptions {
                proactive: false,
                ..d
            },
        ),
        (
            Model::Marionette,
            Strategy::Marionette,
            true,
            SimOptions {
                control_net: false,
                ..d
            },
        ),
        (Model::VonNeumann, Strategy::Predication, false, d),
        (Model::VonNeumann, Strategy::SwitchConfig, false, d),
        (Model::Dataflow, Strategy::Dataflow, false, d),
    ];
    let mut runs = 0;
    for name in corpus::BENCHMARKS {
        let p = corpus::program(name).map_err(|e| e.to_string())?;
        let mem = corpus::memory(&p, corpus::DEFAULT_SEED);
        let want = interpret(&p, &mem).map_err(|e| e.to_string())?;
        for (model, s, agile, opts) in configs {
            let (_, out) = sim(&p, &mem, model, s, agile, opts)?;
            if let Some((arr, i, a, b)) = want.memory.first_difference(&out.memory) {
                return Err(format!(
                    "{name} {model}/{s}: {arr}[{i}] interpreter {a}, simulator {b}"
                ));
            }
            runs += 1;
        }
    }
    within(
        Duration::from_secs(300),
        start,
        format!("{runs} runs match the interpreter"),
    )
}

fn benes_non_blocking() -> Outcome {
    let start = Instant::now();
    let net = build(8).map_err(|e| e.to_string())?;
    let perms = benes::permutations(8);
    for p in &perms {
        benes::check(&net, &RouteRequest::permutation(p))?;
    }
    let net = build(32).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..10_000 {
        benes::check(&net, &benes::random_multicast(&mut rng, 32))?;
    }
    within(
        Duration::from_secs(30),
        start,
        format!(
            "{} permutations on 8 ports, 10000 multicasts on 32 ports",
            perms.len()
        ),
    )
}

fn dataflow_ii_law() -> Outcome {
    let p = parse_str("kernel s { array a[1]; loop i in 0..40 { x = x + 3; } a[0] = x; }")
        .map_err(|e| e.to_string())?;
    let body = p
        .blocks
        .iter()
        .find(|b| b.dfg.len() == 1 && b.dfg[0].opcode == Opcode::Add)
        .ok_or("no body block")?
        .id;
    let mut seen = Vec::new();
    for ovh in 0..=2u32 {
        let a = ArchConfig {
            dataflow_config_overhead: ovh,
            ..arch()
        };
        let m = map_baseline(&p, &a, Strategy::Dataflow).map_err(|e| e.to_string())?;
        let out = simulate_mapping(
            &m,
            &a,
            &MemoryImage::zeroed(&p),
            Model::Dataflow,
            &SimOptions::default(),
        )
        .map_err(|e| e.to_string())?;
        let ii = steady_gap(&out, body)?;
        if ii != 1 + ovh as u64 {
            return Err(format!("overhead {ovh}: II {ii}"));
        }
        seen.push(ii);
    }
    Ok(format!("II {seen:?} for overhead 0,1,2"))
}

fn steady_gap(out: &SimOutput, body: BlockId) -> Result<u64, String> {
    let fires: Vec<u64> = out
        .ops
        .iter()
        .filter(|o| o.block == body)
        .map(|o| o.fire)
        .collect();
    let gaps: Vec<u64> = fires.windows(2).map(|w| w[1] - w[0]).collect();
    let tail = &gaps[gaps.len() / 2..];
    match tail.first() {
        Some(&g) if tail.iter().all(|&x| x == g) => Ok(g),
        _ => Err(format!("no steady state: {gaps:?}")),
    }
}

fn proactive_trend() -> Outcome {
    let d = SimOptions::default();
    let m = marionette("merge_sort")?;
    let pred = cycles(
        "merge_sort",
        Model::VonNeumann,
        Strategy::Predication,
        false,
        d,
    )?;
    let df = cycles("merge_sort", Model::Dataflow, Strategy::Dataflow, false, d)?;
    let (s1, s2) = (speedup(pred, m), speedup(df, m));
    let msg = format!("merge_sort {m} cycles; {s1:.2}x over predication, {s2:.2}x over dataflow");
    if s1 >= 1.10 && s2 >= 1.10 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn switch_config_idleness() -> Outcome {
    let p = corpus::program("merge_sort").map_err(|e| e.to_string())?;
    let mem = corpus::memory(&p, corpus::DEFAULT_SEED);
    let want = interpret(&p, &mem).map_err(|e| e.to_string())?;
    let (_, out) = sim(
        &p,
        &mem,
        Model::VonNeumann,
        Strategy::SwitchConfig,
        false,
        SimOptions::default(),
    )?;
    let windows = out.trace().all_idle_windows();
    let rt = arch().ccu_roundtrip as u64;
    let off = windows.iter().filter(|w| w.1 != rt).count();
    let msg = format!(
        "{} idle windows for {} divergences, {off} not {rt} cycles long",
        windows.len(),
        want.divergences
    );
    if windows.len() as u64 == want.divergences && off == 0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn agile_trend() -> Outcome {
    let d = SimOptions::default();
    let mut parts = Vec::new();
    let mut ok = true;
    for name in ["gemm", "spmv"] {
        let (ma, oa) = corpus_run(name, Model::Marionette, Strategy::Marionette, true, d)?;
        let (mb, ob) = corpus_run(name, Model::Marionette, Strategy::Marionette, false, d)?;
        let a = MetricsRow::from_run(name, Model::Marionette, "marionette", &ma, &oa);
        let b = MetricsRow::from_run(name, Model::Marionette, "marionette+no-agile", &mb, &ob);
        let sp = speedup(b.cycles, a.cycles);
        let ratio = |x: Option<f64>, y: Option<f64>| match (x, y) {
            (Some(x), Some(y)) if y > 0.0 => x / y,
            _ => f64::NAN,
        };
        let outer = ratio(a.outer_bb_utilization, b.outer_bb_utilization);
        let pipe = ratio(a.pipeline_utilization, b.pipeline_utilization);
        ok &= sp >= 1.5 && pipe >= 1.2 && (name != "gemm" || outer >= 5.0);
        parts.push(format!(
            "{name} {sp:.2}x, outer-BB {outer:.2}x, pipeline {pipe:.2}x"
        ));
    }
    let msg = parts.join("; ");
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn control_network_trend() -> Outcome {
    let no_net = SimOptions {
        control_net: false,
        ..SimOptions::default()
    };
    let mut crc = 0.0;
    let mut worst = (f64::INFINITY, "");
    for name in corpus::ALL {
        let s = speedup(
            cycles(name, Model::Marionette, Strategy::Marionette, true, no_net)?,
            marionette(name)?,
        );
        if name == "crc" {
            crc = s;
        }
        if s < worst.0 {
            worst = (s, name);
        }
    }
    let msg = format!("crc {crc:.3}x; lowest {:.3}x on {}", worst.0, worst.1);
    if crc >= 1.05 && worst.0 >= 1.0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn non_degradation() -> Outcome {
    let m = marionette("conv1d")?;
    let pred = cycles(
        "conv1d",
        Model::VonNeumann,
        Strategy::Predication,
        false,
        SimOptions::default(),
    )?;
    let r = m as f64 / pred as f64;
    let msg = format!("conv1d {m} vs predication {pred} cycles ({r:.4}x)");
    if r <= 1.02 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn waste_optimality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let a = arch();
    let (mut checked, mut folded) = (0, 0);
    while checked < 200 {
        let stmts = rng.gen_range(1..12);
        let src = common::Gen::new(&mut rng).straight(stmts);
        let p = parse_str(&src).map_err(|e| e.to_string())?;
        let m = map_marionette(&p, &a).map_err(|e| e.to_string())?;
        let bm = &m.blocks[0];
        let ops = bm.times.len() as u32;
        if ops == 0 {
            continue;
        }
        let best = common::brute_force_waste(ops, a.pe_count() as u32, MAX_FOLD)
            .ok_or("no feasible shape")?;
        if pe_waste(bm) != best {
            return Err(format!(
                "{ops} ops: waste {} vs minimum {best}",
                pe_waste(bm)
            ));
        }
        checked += 1;
        folded += (ops > a.pe_count() as u32) as u32;
    }
    Ok(format!(
        "{checked} blocks at minimum waste, {folded} needed folding"
    ))
}

fn determinism() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut trips = 0;
    let mut k = 0;
    while trips < 1000 {
        k += 1;
        let src = common::Gen::new(&mut rng).kernel(2);
        let p = parse_str(&src).map_err(|e| e.to_string())?;
        let s = Strategy::ALL[k % 4];
        let m = match map_program(&p, &arch(), s, k % 8 == 0) {
            Ok(m) => m,
            Err(MapError::UnmappableBlock { .. }) => continue,
            Err(e) => return Err(e.to_string()),
        };
        let bytes = emit_bitstream(&m, &arch());
        let (back, _) = load_bitstream(&bytes).map_err(|e| e.to_string())?;
        if back != m || emit_bitstream(&back, &arch()) != bytes {
            return Err(format!("round trip differs for\n{src}"));
        }
        trips += 1;
    }
    let csv = || -> Result<String, String> {
        let mut rows = Vec::new();
        for name in corpus::BENCHMARKS {
            for model in Model::ALL {
                for &s in model.strategies() {
                    let (m, out) = corpus_run(name, model, s, true, SimOptions::default())?;
                    rows.push(MetricsRow::from_run(name, model, s.name(), &m, &out));
                }
            }
        }
        Ok(to_csv(&rows))
    };
    let (a, b) = (csv()?, csv()?);
    if a != b {
        return Err("corpus CSV differs between runs".into());
    }
    Ok(format!(
        "{trips} bitstream round trips; {}-byte CSV identical across runs",
        a.len()
    ))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("functional equivalence", functional_equivalence),
        ("benes non-blocking", benes_non_blocking),
        ("dataflow II law", dataflow_ii_law),
        ("proactive configuration trend", proactive_trend),
        ("switch-config idleness", switch_config_idleness),
        ("agile assignment trend", agile_trend),
        ("control network trend", control_network_trend),
        ("non-degradation on conv1d", non_degradation),
        ("PE-waste optimality", waste_optimality),
        ("determinism and round trips", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        match f() {
            Ok(msg) => println!("PASS {:>2} {name}: {msg}", i + 1),
            Err(msg) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {msg}", i + 1);
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
