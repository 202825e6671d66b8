//! Command-line driver: compile models to artifacts, run them on a device
//! variant, sweep the design grid, and print artifact reports.
//!
//! Exit codes: 0 success, 2 input error (bad files, malformed models),
//! 3 planning error (the model does not fit the device), 1 anything else.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dlac_core::artifact::{compile, load_artifact, write_artifact, CompiledModel};
use dlac_core::codegen::generate_command_stream;
use dlac_core::error::ErrorClass;
use dlac_core::fixtures::{build_mnist_fixture, build_mobilenet_v1_fixture};
use dlac_core::graph::{Dtype, TensorDesc};
use dlac_core::interp::{interpret, seeded_inputs, TensorData, TensorValue};
use dlac_core::isa::{IsaVariant, ParallelMode};
use dlac_core::model::{load_model, save_model};
use dlac_core::partition::{BarrierMode, DwMode, SubgraphKind};
use dlac_core::plan::plan_subgraph;
use dlac_core::report::{default_grid, human_bytes, render_table, sweep, write_csv, SweepSpec};
use dlac_core::sim::{run_end_to_end, Metrics};
use dlac_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "dlac",
    version,
    about = "int8 accelerator compiler and simulator"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a built-in example model to a directory.
    Fixture(FixtureArgs),
    /// Compile a model directory into a runnable artifact.
    Compile(CompileArgs),
    /// Execute a compiled artifact on the simulator.
    Run(RunArgs),
    /// Compile and price a model across a grid of device variants.
    Sweep(SweepArgs),
    /// Summarize a compiled artifact.
    Report(ReportArgs),
}

#[derive(Args)]
struct VariantFlags {
    /// Processing elements (1..=4096).
    #[arg(long)]
    pes: Option<u32>,
    /// SRAM size: bytes, or with a KiB/MiB/GiB suffix (e.g. 512KiB).
    #[arg(long, value_parser = parse_size)]
    sram: Option<u64>,
    /// Channel-parallel dimension: input or output.
    #[arg(long)]
    mode: Option<ParallelMode>,
}

impl VariantFlags {
    fn apply(&self, mut v: IsaVariant) -> IsaVariant {
        if let Some(p) = self.pes {
            v.pe_count = p;
        }
        if let Some(m) = self.sram {
            v.sram_bytes = m;
        }
        if let Some(m) = self.mode {
            v.parallel_mode = m;
        }
        v
    }
}

#[derive(Args)]
struct FixtureArgs {
    /// mnist or mobilenet-v1.
    name: String,
    /// Output model directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompileArgs {
    /// Model directory (or its model.json).
    model: PathBuf,
    /// Artifact output directory.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    variant: VariantFlags,
    /// Depthwise support: native, emulated or fallback.
    #[arg(long, default_value = "native")]
    dw_mode: DwMode,
    /// Treat requantize barriers as subgraph cuts: on or off.
    #[arg(long, default_value = "on")]
    barriers: BarrierMode,
}

#[derive(Args)]
struct RunArgs {
    /// Compiled artifact directory.
    artifact: PathBuf,
    #[command(flatten)]
    variant: VariantFlags,
    /// Seed for generated inputs (used when no --input files are given).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Input tensor file (text dump format), one per graph input, in order.
    #[arg(long)]
    input: Vec<PathBuf>,
    /// Cross-check outputs against the reference interpreter.
    #[arg(long)]
    verify: bool,
    /// Write run metrics as JSON ("-" for stdout).
    #[arg(long)]
    dump_metrics: Option<PathBuf>,
    /// Write output tensors as text ("-" for stdout).
    #[arg(long)]
    dump_tensors: Option<PathBuf>,
    /// Print a per-stream summary table.
    #[arg(long)]
    dump_streams: bool,
}

#[derive(Args)]
struct SweepArgs {
    /// Model directory (or its model.json).
    model: PathBuf,
    /// PE counts; defaults to 64 and 128.
    #[arg(long)]
    pes: Vec<u32>,
    /// SRAM sizes; defaults to 512KiB, 1MiB and 256MiB.
    #[arg(long, value_parser = parse_size)]
    sram: Vec<u64>,
    /// Parallel modes; defaults to both.
    #[arg(long)]
    mode: Vec<ParallelMode>,
    #[arg(long, default_value = "native")]
    dw_mode: DwMode,
    #[arg(long, default_value = "on")]
    barriers: BarrierMode,
    /// Also write the rows as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Compiled artifact directory.
    artifact: PathBuf,
}

fn parse_size(s: &str) -> std::result::Result<u64, String> {
    let t = s.trim();
    let lower = t.to_ascii_lowercase();
    let (digits, mult) = if let Some(d) = lower.strip_suffix("gib") {
        (d, 1u64 << 30)
    } else if let Some(d) = lower.strip_suffix("mib") {
        (d, 1 << 20)
    } else if let Some(d) = lower.strip_suffix("kib") {
        (d, 1 << 10)
    } else {
        (lower.as_str(), 1)
    };
    let n: u64 = digits
        .trim()
        .parse()
        .map_err(|_| format!("'{s}' is not a size (expected bytes or a KiB/MiB/GiB suffix)"))?;
    n.checked_mul(mult)
        .ok_or_else(|| format!("'{s}' overflows"))
}

fn model_dir(path: &Path) -> PathBuf {
    if path.is_file() {
        path.parent().unwrap_or(Path::new(".")).to_path_buf()
    } else {
        path.to_path_buf()
    }
}

fn default_variant(dw_mode: DwMode) -> IsaVariant {
    IsaVariant {
        pe_count: 64,
        sram_bytes: 256 << 20,
        parallel_mode: ParallelMode::Output,
        dw_mode,
    }
}

fn print_metrics(variant: &IsaVariant, m: &Metrics, cpu_nodes: usize) {
    println!(
        "variant: {} PEs, {} sram, {}-parallel, dw {}",
        variant.pe_count,
        human_bytes(variant.sram_bytes),
        variant.parallel_mode,
        variant.dw_mode
    );
    println!(
        "{:>8}  {:>14}  {:>16}  {:>7}",
        "kind", "cycles", "macs", "util"
    );
    for (kind, lane) in &m.by_class {
        let util = if lane.cycles == 0 {
            0.0
        } else {
            lane.macs as f64 / (variant.pe_count as f64 * lane.cycles as f64)
        };
        println!(
            "{:>8}  {:>14}  {:>16}  {util:>7.4}",
            kind.to_string(),
            lane.cycles,
            lane.macs
        );
    }
    println!(
        "{:>8}  {:>14}  {:>16}  {:>7.4}",
        "total",
        m.cycles,
        m.macs,
        m.utilization(variant.pe_count)
    );
    println!(
        "dma: {} bytes in {} cycles; {} register writes over {} issues; {} cpu fallback node(s)",
        m.dma_bytes, m.dma_cycles, m.register_writes, m.issues, cpu_nodes
    );
}

fn dump_tensor_text(out: &mut String, t: &TensorValue) {
    let dims: Vec<String> = t.desc.shape.iter().map(|d| d.to_string()).collect();
    out.push_str(&format!(
        "{} {} {:?}\n",
        t.desc.name,
        dims.join("x"),
        t.desc.dtype
    ));
    match &t.data {
        TensorData::I8(v) => {
            for x in v {
                out.push_str(&format!("{x}\n"));
            }
        }
        TensorData::I32(v) => {
            for x in v {
                out.push_str(&format!("{x}\n"));
            }
        }
    }
}

fn parse_tensor_text(text: &str, path: &Path) -> Result<TensorValue> {
    let bad = |m: &str| Error::Model(format!("{}: {m}", path.display()));
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| bad("empty tensor file"))?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 3 {
        return Err(bad("header must be '<name> <d0>x<d1>x... <I8|I32>'"));
    }
    let shape: Vec<usize> = parts[1]
        .split('x')
        .map(|d| d.parse().map_err(|_| bad(&format!("bad dimension '{d}'"))))
        .collect::<Result<_>>()?;
    let dtype = match parts[2] {
        "I8" => Dtype::I8,
        "I32" => Dtype::I32,
        other => return Err(bad(&format!("unknown dtype '{other}'"))),
    };
    let desc = TensorDesc {
        name: parts[0].to_string(),
        shape,
        dtype,
        scale: 1.0,
    };
    let values: Vec<i64> = lines
        .map(|l| {
            l.trim()
                .parse::<i64>()
                .map_err(|_| bad(&format!("bad value '{l}'")))
        })
        .collect::<Result<_>>()?;
    if values.len() != desc.elems() {
        return Err(bad(&format!(
            "expected {} values for shape {:?}, found {}",
            desc.elems(),
            desc.shape,
            values.len()
        )));
    }
    let data = match dtype {
        Dtype::I8 => TensorData::I8(
            values
                .iter()
                .map(|&v| i8::try_from(v).map_err(|_| bad(&format!("{v} out of i8 range"))))
                .collect::<Result<_>>()?,
        ),
        Dtype::I32 => TensorData::I32(
            values
                .iter()
                .map(|&v| i32::try_from(v).map_err(|_| bad(&format!("{v} out of i32 range"))))
                .collect::<Result<_>>()?,
        ),
    };
    Ok(TensorValue { desc, data })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if path.as_os_str() == "-" {
        print!("{text}");
        std::io::stdout().flush()?;
    } else {
        fs::write(path, text)?;
    }
    Ok(())
}

fn cmd_fixture(a: &FixtureArgs) -> Result<()> {
    let graph = match a.name.as_str() {
        "mnist" => build_mnist_fixture(),
        "mobilenet-v1" => build_mobilenet_v1_fixture(DwMode::Native),
        other => {
            return Err(Error::Model(format!(
                "unknown fixture '{other}' (try mnist or mobilenet-v1)"
            )))
        }
    };
    fs::create_dir_all(&a.out)?;
    save_model(&graph, &a.out)?;
    println!(
        "wrote {} ({} nodes) to {}",
        graph.name,
        graph.nodes.len(),
        a.out.display()
    );
    Ok(())
}

fn cmd_compile(a: &CompileArgs) -> Result<()> {
    let graph = load_model(&model_dir(&a.model))?;
    let variant = a.variant.apply(default_variant(a.dw_mode));
    let compiled = compile(&graph, &variant, a.barriers)?;
    write_artifact(&a.out, &compiled)?;
    let kinds = |k: SubgraphKind| {
        compiled
            .partition
            .subgraphs
            .iter()
            .filter(|s| s.kind == k)
            .count()
    };
    println!(
        "compiled {}: {} subgraph(s) ({} CONV, {} DEPTH, {} REQUANT, {} OTHER), {} cpu fallback node(s)",
        graph.name,
        compiled.partition.subgraphs.len(),
        kinds(SubgraphKind::Conv),
        kinds(SubgraphKind::Depth),
        kinds(SubgraphKind::Requant),
        kinds(SubgraphKind::Other),
        compiled.partition.cpu_nodes.len(),
    );
    println!("wrote artifact to {}", a.out.display());
    Ok(())
}

/// Re-plan and regenerate streams when run-time flags pick a different
/// variant than the artifact was compiled for.
fn retarget(c: &mut CompiledModel, variant: IsaVariant) -> Result<()> {
    if variant == c.variant {
        return Ok(());
    }
    variant.validate()?;
    let mut plans = Vec::with_capacity(c.partition.subgraphs.len());
    let mut streams = Vec::with_capacity(c.partition.subgraphs.len());
    for sg in &c.partition.subgraphs {
        let plan = plan_subgraph(&c.graph, sg, &variant)?;
        streams.push(generate_command_stream(&c.graph, sg, &plan, &variant)?);
        plans.push(plan);
    }
    c.plans = plans;
    c.streams = streams;
    c.variant = variant;
    Ok(())
}

fn cmd_run(a: &RunArgs) -> Result<()> {
    let mut compiled = load_artifact(&a.artifact)?;
    // dw_mode is baked into the partition; only array/memory flags retarget.
    let variant = a.variant.apply(compiled.variant);
    retarget(&mut compiled, variant)?;

    let inputs: Vec<TensorValue> = if a.input.is_empty() {
        seeded_inputs(&compiled.graph, a.seed)
    } else {
        a.input
            .iter()
            .map(|p| {
                let text = fs::read_to_string(p)
                    .map_err(|e| Error::Model(format!("{}: {e}", p.display())))?;
                parse_tensor_text(&text, p)
            })
            .collect::<Result<_>>()?
    };

    let result = run_end_to_end(
        &compiled.graph,
        &compiled.partition,
        &compiled.streams,
        &inputs,
    )?;

    if a.verify {
        let expect = interpret(&compiled.graph, &inputs)?;
        for (got, want) in result.outputs.iter().zip(&expect) {
            if got.data != want.data {
                return Err(Error::Sim(format!(
                    "verification mismatch on tensor '{}'",
                    want.desc.name
                )));
            }
        }
        println!("verified: bit-exact");
    }

    print_metrics(
        &compiled.variant,
        &result.metrics,
        compiled.partition.cpu_nodes.len(),
    );

    if a.dump_streams {
        println!(
            "{:>4}  {:>8}  {:>7}  {:>10}",
            "id", "kind", "units", "reg_writes"
        );
        for s in &compiled.streams {
            let writes: usize = s.units.iter().map(|u| u.regs.len()).sum();
            println!(
                "{:>4}  {:>8}  {:>7}  {writes:>10}",
                s.subgraph_id,
                s.kind.to_string(),
                s.units.len()
            );
        }
    }
    if let Some(path) = &a.dump_metrics {
        let doc = serde_json::json!({
            "model": compiled.graph.name,
            "variant": compiled.variant,
            "metrics": result.metrics,
        });
        write_text(path, &format!("{}\n", serde_json::to_string_pretty(&doc)?))?;
    }
    if let Some(path) = &a.dump_tensors {
        let mut text = String::new();
        for t in &result.outputs {
            dump_tensor_text(&mut text, t);
        }
        write_text(path, &text)?;
    }
    Ok(())
}

fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    let graph = load_model(&model_dir(&a.model))?;
    let specs: Vec<SweepSpec> = if a.pes.is_empty() && a.sram.is_empty() && a.mode.is_empty() {
        default_grid(a.dw_mode, a.barriers)
    } else {
        let pes = if a.pes.is_empty() {
            vec![64, 128]
        } else {
            a.pes.clone()
        };
        let sram = if a.sram.is_empty() {
            vec![512 << 10, 1 << 20, 256 << 20]
        } else {
            a.sram.clone()
        };
        let modes = if a.mode.is_empty() {
            vec![ParallelMode::Output, ParallelMode::Input]
        } else {
            a.mode.clone()
        };
        let mut specs = Vec::new();
        for &pe_count in &pes {
            for &sram_bytes in &sram {
                for &parallel_mode in &modes {
                    specs.push(SweepSpec {
                        variant: IsaVariant {
                            pe_count,
                            sram_bytes,
                            parallel_mode,
                            dw_mode: a.dw_mode,
                        },
                        barriers: a.barriers,
                    });
                }
            }
        }
        specs
    };
    let rows = sweep(&graph, &specs)?;
    print!("{}", render_table(&rows));
    if let Some(path) = &a.csv {
        let file = fs::File::create(path)?;
        write_csv(&rows, file)?;
        println!("wrote {} rows to {}", rows.len(), path.display());
    }
    Ok(())
}

fn cmd_report(a: &ReportArgs) -> Result<()> {
    let compiled = load_artifact(&a.artifact)?;
    let m = &compiled.manifest;
    println!("model: {}", m.model);
    println!(
        "compiled for: {} PEs, {} sram, {}-parallel, dw {}",
        m.variant.pe_count,
        human_bytes(m.variant.sram_bytes),
        m.variant.parallel_mode,
        m.variant.dw_mode
    );
    println!(
        "subgraphs: {}; cpu fallback nodes: {}",
        m.subgraphs, m.cpu_nodes
    );
    print_metrics(&m.variant, &m.static_metrics, m.cpu_nodes);
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.cmd {
        Cmd::Fixture(a) => cmd_fixture(a),
        Cmd::Compile(a) => cmd_compile(a),
        Cmd::Run(a) => cmd_run(a),
        Cmd::Sweep(a) => cmd_sweep(a),
        Cmd::Report(a) => cmd_report(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e.class() {
                ErrorClass::Input => ExitCode::from(2),
                ErrorClass::Planning => ExitCode::from(3),
                ErrorClass::Internal => ExitCode::from(1),
            }
        }
    }
}
