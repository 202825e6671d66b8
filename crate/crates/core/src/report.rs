//! Configuration sweeps and reporting.
//!
//! A sweep compiles the same model for a grid of device variants and prices
//! every command stream statically. Results come back as flat rows, one per
//! workload class plus a total per configuration, ready for CSV or a text
//! table.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifact::compile;
use crate::error::{Error, ErrorClass, Result};
use crate::graph::Graph;
use crate::isa::{IsaVariant, ParallelMode};
use crate::partition::{BarrierMode, DwMode};
use crate::sim::Metrics;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSpec {
    pub variant: IsaVariant,
    pub barriers: BarrierMode,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub pes: u32,
    pub sram_bytes: u64,
    pub mode: ParallelMode,
    pub dw_mode: DwMode,
    pub barriers: BarrierMode,
    /// `CONV`, `DEPTH`, `REQUANT`, `OTHER` or `total`.
    pub kind: String,
    pub cycles: u64,
    pub macs: u64,
    pub utilization: f64,
    pub dma_bytes: u64,
    pub dma_cycles: u64,
    pub register_writes: u64,
    pub status: String,
}

fn base_row(spec: &SweepSpec, kind: &str, status: &str) -> SweepRow {
    SweepRow {
        pes: spec.variant.pe_count,
        sram_bytes: spec.variant.sram_bytes,
        mode: spec.variant.parallel_mode,
        dw_mode: spec.variant.dw_mode,
        barriers: spec.barriers,
        kind: kind.to_string(),
        cycles: 0,
        macs: 0,
        utilization: 0.0,
        dma_bytes: 0,
        dma_cycles: 0,
        register_writes: 0,
        status: status.to_string(),
    }
}

fn rows_for(spec: &SweepSpec, m: &Metrics) -> Vec<SweepRow> {
    let mut rows = Vec::new();
    for (class, lane) in &m.by_class {
        let mut row = base_row(spec, &format!("{class}"), "ok");
        row.cycles = lane.cycles;
        row.macs = lane.macs;
        row.utilization = if lane.cycles == 0 {
            0.0
        } else {
            lane.macs as f64 / (spec.variant.pe_count as f64 * lane.cycles as f64)
        };
        rows.push(row);
    }
    let mut total = base_row(spec, "total", "ok");
    total.cycles = m.cycles;
    total.macs = m.macs;
    total.utilization = m.utilization(spec.variant.pe_count);
    total.dma_bytes = m.dma_bytes;
    total.dma_cycles = m.dma_cycles;
    total.register_writes = m.register_writes;
    rows.push(total);
    rows
}

fn point(graph: &Graph, spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    match compile(graph, &spec.variant, spec.barriers) {
        Ok(compiled) => Ok(rows_for(spec, &compiled.manifest.static_metrics)),
        Err(e) if e.class() == ErrorClass::Planning => {
            Ok(vec![base_row(spec, "total", "insufficient_sram")])
        }
        Err(e) => Err(e),
    }
}

/// Compile and price `graph` at every spec, in parallel. Configurations that
/// cannot hold the model in SRAM yield a single `insufficient_sram` row; any
/// other failure aborts the sweep.
pub fn sweep(graph: &Graph, specs: &[SweepSpec]) -> Result<Vec<SweepRow>> {
    let results: Vec<Vec<SweepRow>> = specs
        .par_iter()
        .map(|s| point(graph, s))
        .collect::<Result<_>>()?;
    Ok(results.into_iter().flatten().collect())
}

/// The default evaluation grid: {64, 128} PEs x {512 KiB, 1 MiB, 256 MiB}
/// SRAM x both parallel modes, at fixed depthwise and barrier settings.
pub fn default_grid(dw_mode: DwMode, barriers: BarrierMode) -> Vec<SweepSpec> {
    let mut specs = Vec::new();
    for &pe_count in &[64u32, 128] {
        for &sram_bytes in &[512u64 << 10, 1 << 20, 256 << 20] {
            for &parallel_mode in &[ParallelMode::Output, ParallelMode::Input] {
                specs.push(SweepSpec {
                    variant: IsaVariant {
                        pe_count,
                        sram_bytes,
                        parallel_mode,
                        dw_mode,
                    },
                    barriers,
                });
            }
        }
    }
    specs
}

pub fn write_csv<W: std::io::Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)
            .map_err(|e| Error::Io(std::io::Error::other(format!("csv: {e}"))))?;
    }
    w.flush()?;
    Ok(())
}

/// Plain-text table of the same rows, aligned for terminals.
pub fn render_table(rows: &[SweepRow]) -> String {
    let header = [
        "pes",
        "sram",
        "mode",
        "dw",
        "barriers",
        "kind",
        "cycles",
        "macs",
        "util",
        "dma_cycles",
        "status",
    ];
    let mut cells: Vec<[String; 11]> = vec![header.map(str::to_string)];
    for r in rows {
        cells.push([
            r.pes.to_string(),
            human_bytes(r.sram_bytes),
            r.mode.to_string(),
            r.dw_mode.to_string(),
            r.barriers.to_string(),
            r.kind.clone(),
            r.cycles.to_string(),
            r.macs.to_string(),
            format!("{:.4}", r.utilization),
            r.dma_cycles.to_string(),
            r.status.clone(),
        ]);
    }
    let mut widths = [0usize; 11];
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    for row in &cells {
        for (i, (w, c)) in widths.iter().zip(row).enumerate() {
            if i > 0 {
                out.push_str("  ");
            }
            out.push_str(&format!("{c:>w$}"));
        }
        out.push('\n');
    }
    out
}

pub fn human_bytes(b: u64) -> String {
    if b.is_multiple_of(1 << 20) {
        format!("{}MiB", b >> 20)
    } else if b.is_multiple_of(1 << 10) {
        format!("{}KiB", b >> 10)
    } else {
        format!("{b}B")
    }
}
