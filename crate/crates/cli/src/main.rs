//! `mrnt`: compile, run, compare and sweep kernels on the simulated array.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use mrnt_core::arch::{ArchError, ARCH_KEYS};
use mrnt_core::corpus;
use mrnt_core::frontend::{interpret, parse_kernel, KernelSource, MemoryImage};
use mrnt_core::ir::{analyze_loops, Program};
use mrnt_core::mapper::{emit_bitstream, load_bitstream, map_program, Mapping, Strategy};
use mrnt_core::metrics::{self, MetricsRow};
use mrnt_core::sim::{simulate, simulate_mapping, Model, SimOptions};
use mrnt_core::ArchConfig;

#[derive(Parser)]
#[command(
    name = "mrnt",
    version,
    about = "Spatial-array compiler and cycle simulator"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Map a kernel and write its configuration bitstream.
    Compile(CompileArgs),
    /// Simulate a bitstream and write key=value stats.
    Run(RunArgs),
    /// Run kernels under several configurations and write a metrics CSV.
    Compare(CompareArgs),
    /// Vary one architecture parameter and write a metrics CSV.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct Common {
    /// Architecture file (`key = value` lines).
    #[arg(long)]
    arch: Option<PathBuf>,
    /// Output file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompileArgs {
    /// Kernel source (.mk) or corpus kernel name.
    kernel: String,
    #[arg(long, default_value = "marionette")]
    strategy: Strategy,
    /// Leave outer loop blocks unpipelined.
    #[arg(long)]
    no_agile: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct RunArgs {
    bitstream: PathBuf,
    /// Memory image (`NAME: v0,v1,...`). Defaults to the seeded corpus inputs.
    #[arg(long)]
    mem: Option<PathBuf>,
    /// Execution model; defaults to the one matching the bitstream's strategy.
    #[arg(long)]
    model: Option<Model>,
    /// Write the per-cycle activity trace here.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Compare final memory against the reference interpreter.
    #[arg(long)]
    check_oracle: bool,
    #[arg(long)]
    no_proactive: bool,
    #[arg(long)]
    no_control_net: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Ablations {
    /// Add a marionette run without proactive configuration.
    #[arg(long)]
    no_proactive: bool,
    /// Add a marionette run with control routed over the data network.
    #[arg(long)]
    no_control_net: bool,
    /// Add a marionette run without agile PE assignment.
    #[arg(long)]
    no_agile: bool,
}

#[derive(Args)]
struct CompareArgs {
    /// Kernel files or corpus names; defaults to the benchmark corpus.
    kernels: Vec<String>,
    /// Configuration `model[/strategy][+no-agile][+no-control-net][+no-proactive]`. Repeatable;
    /// the first one is compared against every other.
    #[arg(long = "config")]
    configs: Vec<String>,
    #[command(flatten)]
    ablate: Ablations,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct SweepArgs {
    /// Architecture parameter, e.g. `ccu_roundtrip` or `fu_latency.mul`.
    param: String,
    /// Comma-separated values.
    #[arg(value_delimiter = ',', required = true)]
    values: Vec<String>,
    /// Kernel files or corpus names; defaults to the benchmark corpus.
    #[arg(long = "kernel")]
    kernels: Vec<String>,
    #[arg(long, default_value = "marionette")]
    model: Model,
    #[arg(long)]
    strategy: Option<Strategy>,
    #[arg(long)]
    no_proactive: bool,
    #[arg(long)]
    no_control_net: bool,
    #[arg(long)]
    no_agile: bool,
    #[command(flatten)]
    common: Common,
}

/// One simulated configuration.
#[derive(Clone, Debug, PartialEq)]
struct Config {
    model: Model,
    strategy: Strategy,
    agile: bool,
    opts: SimOptions,
}

impl Config {
    fn new(model: Model, strategy: Strategy) -> Self {
        Config {
            model,
            strategy,
            agile: true,
            opts: SimOptions::default(),
        }
    }

    fn parse(s: &str) -> Result<Self> {
        let mut parts = s.split('+');
        let head = parts.next().unwrap_or("");
        let (model, strategy) = match head.split_once('/') {
            Some((m, st)) => (
                m.parse::<Model>().map_err(|e| anyhow!(e))?,
                st.parse().map_err(|e: String| anyhow!(e))?,
            ),
            None => {
                let m: Model = head.parse().map_err(|e: String| anyhow!(e))?;
                (m, m.default_strategy())
            }
        };
        if !model.accepts(strategy) {
            bail!("the {model} model cannot run {strategy}");
        }
        let mut c = Config::new(model, strategy);
        for flag in parts {
            match flag {
                "no-agile" => c.agile = false,
                "no-control-net" => c.opts.control_net = false,
                "no-proactive" => c.opts.proactive = false,
                _ => bail!("unknown config flag `+{flag}`"),
            }
        }
        Ok(c)
    }

    /// Strategy column of the CSV: the strategy plus ablation suffixes.
    fn label(&self) -> String {
        let mut s = self.strategy.name().to_string();
        if !self.agile {
            s.push_str("+no-agile");
        }
        if !self.opts.control_net {
            s.push_str("+no-control-net");
        }
        if !self.opts.proactive {
            s.push_str("+no-proactive");
        }
        s
    }

    fn key(&self) -> String {
        format!("{}/{}", self.model, self.label())
    }
}

/// A usage problem detected after argument parsing.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn load_arch(path: Option<&Path>) -> Result<ArchConfig> {
    match path {
        None => Ok(ArchConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            ArchConfig::parse(&text).with_context(|| format!("{}", p.display()))
        }
    }
}

/// A `.mk` path, or a corpus kernel name.
fn load_kernel(arg: &str) -> Result<(String, Program)> {
    let path = Path::new(arg);
    if path.exists() {
        let text = fs::read_to_string(path).with_context(|| format!("reading {arg}"))?;
        let p = parse_kernel(&KernelSource::new(arg, text)).map_err(|e| anyhow!("{arg}:{e}"))?;
        let name = path
            .file_stem()
            .map_or(p.name.clone(), |s| s.to_string_lossy().into_owned());
        return Ok((name, p));
    }
    if corpus::source(arg).is_some() {
        return Ok((arg.to_string(), corpus::program(arg)?));
    }
    bail!("no such kernel file or corpus kernel: {arg}")
}

fn write_out(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn compile(a: CompileArgs) -> Result<()> {
    let arch = load_arch(a.common.arch.as_deref())?;
    let (name, program) = load_kernel(&a.kernel)?;
    let m =
        map_program(&program, &arch, a.strategy, !a.no_agile).with_context(|| a.kernel.clone())?;
    let out = a
        .common
        .out
        .unwrap_or_else(|| PathBuf::from(format!("{name}.mrb")));
    write_out(&out, &emit_bitstream(&m, &arch))?;
    println!("{}", headline(&m));
    print!("{}", m.summary());
    println!("wrote {}", out.display());
    Ok(())
}

/// `II=…, PEs=…, waste=…`: II and PEs of the innermost, largest block; waste over the whole mapping.
fn headline(m: &Mapping) -> String {
    let depth = analyze_loops(&m.program).ok();
    let hot = m
        .blocks
        .iter()
        .filter(|b| !b.times.is_empty())
        .max_by_key(|b| {
            (
                depth.as_ref().map_or(0, |d| d.depth_of(b.block)),
                b.times.len(),
                std::cmp::Reverse(b.block.0),
            )
        });
    match hot {
        Some(b) => format!(
            "II={}, PEs={}, waste={}",
            b.ii,
            b.pe_set().len(),
            m.total_waste()
        ),
        None => "II=0, PEs=0, waste=0".to_string(),
    }
}

fn run(a: RunArgs) -> Result<()> {
    let arch = load_arch(a.common.arch.as_deref())?;
    let bytes =
        fs::read(&a.bitstream).with_context(|| format!("reading {}", a.bitstream.display()))?;
    let (m, _) = load_bitstream(&bytes).with_context(|| a.bitstream.display().to_string())?;
    let mem = match &a.mem {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            MemoryImage::parse(&text).with_context(|| p.display().to_string())?
        }
        None => corpus::memory(&m.program, corpus::seed_from_env()),
    };
    let model = a.model.unwrap_or_else(|| {
        Model::ALL
            .into_iter()
            .find(|md| md.accepts(m.strategy))
            .unwrap_or(Model::Marionette)
    });
    let opts = SimOptions {
        proactive: !a.no_proactive,
        control_net: !a.no_control_net,
        ..SimOptions::default()
    };
    let out = simulate(&bytes, &arch, &mem, model, &opts)?;
    let mut stats = format!("model={model}\nstrategy={}\n", m.strategy);
    stats.push_str(&out.stats.to_kv());
    let mut failed = None;
    if a.check_oracle {
        let exec = interpret(&m.program, &mem).context("reference interpreter")?;
        match exec.memory.first_difference(&out.memory) {
            None => stats.push_str("check=ok\n"),
            Some((arr, i, want, got)) => {
                let _ = writeln!(stats, "check=mismatch {arr}[{i}] expected {want} got {got}");
                failed = Some(format!(
                    "first divergence at {arr}[{i}]: interpreter {want}, simulator {got}"
                ));
            }
        }
    }
    if let Some(t) = &a.trace {
        write_out(t, out.trace().to_text().as_bytes())?;
    }
    match &a.common.out {
        Some(p) => write_out(p, stats.as_bytes())?,
        None => print!("{stats}"),
    }
    match failed {
        Some(msg) => bail!(msg),
        None => Ok(()),
    }
}

fn run_one(name: &str, program: &Program, arch: &ArchConfig, c: &Config) -> Result<MetricsRow> {
    let m = map_program(program, arch, c.strategy, c.agile)?;
    let mem = corpus::memory(program, corpus::seed_from_env());
    let out = simulate_mapping(&m, arch, &mem, c.model, &c.opts)?;
    Ok(MetricsRow::from_run(name, c.model, &c.label(), &m, &out))
}

/// Runs every (kernel, config) pair, one worker per kernel. Rows come back in input order.
fn run_matrix(
    kernels: &[(String, Program)],
    jobs: &[(ArchConfig, Config)],
) -> Vec<Vec<Result<MetricsRow>>> {
    std::thread::scope(|s| {
        let handles: Vec<_> = kernels
            .iter()
            .map(|(name, p)| {
                s.spawn(move || {
                    jobs.iter()
                        .map(|(arch, c)| run_one(name, p, arch, c))
                        .collect()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}

fn kernel_list(specs: &[String]) -> Result<Vec<(String, Program)>> {
    if specs.is_empty() {
        return corpus::BENCHMARKS.iter().map(|k| load_kernel(k)).collect();
    }
    specs.iter().map(|k| load_kernel(k)).collect()
}

fn compare(a: CompareArgs) -> Result<()> {
    let arch = load_arch(a.common.arch.as_deref())?;
    let kernels = kernel_list(&a.kernels)?;
    let mut configs = a
        .configs
        .iter()
        .map(|s| Config::parse(s).map_err(|e| Usage(format!("--config {s}: {e}")).into()))
        .collect::<Result<Vec<_>>>()?;
    let ablated = [
        (a.ablate.no_agile, "marionette+no-agile"),
        (a.ablate.no_control_net, "marionette+no-control-net"),
        (a.ablate.no_proactive, "marionette+no-proactive"),
    ];
    let any_ablation = ablated.iter().any(|x| x.0);
    if configs.is_empty() {
        configs.push(Config::new(Model::Marionette, Strategy::Marionette));
        if !any_ablation {
            configs.push(Config::new(Model::VonNeumann, Strategy::Predication));
            configs.push(Config::new(Model::VonNeumann, Strategy::SwitchConfig));
            configs.push(Config::new(Model::Dataflow, Strategy::Dataflow));
        }
    }
    for (on, s) in ablated {
        if on {
            configs.push(Config::parse(s)?);
        }
    }
    let jobs: Vec<_> = configs.iter().map(|c| (arch.clone(), c.clone())).collect();
    let mut rows = Vec::new();
    let mut failures = 0;
    for ((name, _), results) in kernels.iter().zip(run_matrix(&kernels, &jobs)) {
        for (c, r) in configs.iter().zip(results) {
            match r {
                Ok(row) => rows.push(row),
                Err(e) => {
                    failures += 1;
                    eprintln!("error: {name} {}: {e:#}", c.key());
                }
            }
        }
    }
    let out = a.common.out.unwrap_or_else(|| PathBuf::from("metrics.csv"));
    metrics::write_csv(&rows, &out).with_context(|| format!("writing {}", out.display()))?;
    let subject = configs[0].key();
    for base in &configs[1..] {
        let t = metrics::speedup_table(&rows, &base.key(), &subject);
        print!("{}", t.to_text());
        for w in &t.warnings {
            eprintln!("warning: {w}");
        }
    }
    println!("wrote {} rows to {}", rows.len(), out.display());
    if failures > 0 {
        bail!("{failures} run(s) failed");
    }
    Ok(())
}

/// Parameters whose increase can only add cycles.
fn slows_down(param: &str) -> bool {
    param.starts_with("fu_latency.")
        || matches!(
            param,
            "data_hop_latency"
                | "control_net_latency"
                | "ccu_roundtrip"
                | "dataflow_config_overhead"
                | "configure_cycles"
        )
}

fn sweep(a: SweepArgs) -> Result<()> {
    let base = load_arch(a.common.arch.as_deref())?;
    if let Err(ArchError::UnknownKey { .. }) = base.clone().set(&a.param, "1") {
        return Err(Usage(format!(
            "unknown parameter `{}`; known: {}, fu_latency.<opcode>",
            a.param,
            ARCH_KEYS.join(", ")
        ))
        .into());
    }
    let strategy = a.strategy.unwrap_or_else(|| a.model.default_strategy());
    let mut c = Config::new(a.model, strategy);
    c.agile = !a.no_agile;
    c.opts.proactive = !a.no_proactive;
    c.opts.control_net = !a.no_control_net;
    if !a.model.accepts(strategy) {
        return Err(Usage(format!("the {} model cannot run {strategy}", a.model)).into());
    }
    let mut jobs = Vec::new();
    for v in &a.values {
        let mut arch = base.clone();
        arch.set(&a.param, v).map_err(|e| Usage(e.to_string()))?;
        arch.validate()
            .map_err(|e| Usage(format!("{}={v}: {e}", a.param)))?;
        jobs.push((arch, c.clone()));
    }
    let kernels = kernel_list(&a.kernels)?;
    let mut csv = format!("param,value,{}\n", metrics::CSV_HEADER);
    let mut failures = 0;
    for ((name, _), results) in kernels.iter().zip(run_matrix(&kernels, &jobs)) {
        let mut prev: Option<(u64, &str)> = None;
        for (v, r) in a.values.iter().zip(results) {
            match r {
                Ok(row) => {
                    for line in metrics::to_csv(std::slice::from_ref(&row)).lines().skip(1) {
                        let _ = writeln!(csv, "{},{v},{line}", a.param);
                    }
                    if let Some((pc, pv)) = prev {
                        let up = v.trim().parse::<u64>().ok() > pv.trim().parse::<u64>().ok();
                        if slows_down(&a.param) && up && row.cycles < pc {
                            eprintln!(
                                "warning: {name}: cycles fell from {pc} to {} as {} rose from {pv} to {v}",
                                row.cycles, a.param
                            );
                        }
                    }
                    prev = Some((row.cycles, v));
                }
                Err(e) => {
                    failures += 1;
                    eprintln!("error: {name} {}={v}: {e:#}", a.param);
                }
            }
        }
    }
    let out = a.common.out.unwrap_or_else(|| PathBuf::from("sweep.csv"));
    write_out(&out, csv.as_bytes())?;
    print!("{}", csv);
    if failures > 0 {
        bail!("{failures} run(s) failed");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match cli.cmd {
        Cmd::Compile(a) => compile(a),
        Cmd::Run(a) => run(a),
        Cmd::Compare(a) => compare(a),
        Cmd::Sweep(a) => sweep(a),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<Usage>() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
