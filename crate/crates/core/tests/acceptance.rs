//! Acceptance gate. One test per published claim, each printing a single
//! [PASS]/[FAIL] line (visible with `--nocapture`; always in failure output).
//!
//! Anchored cycle counts compare the compiled pipeline's static metrics
//! against the published figures at the stated tolerance; exact values assert
//! the frozen closed-form predictions so regressions are loud even inside a
//! tolerance band.

mod common;

use std::time::Instant;

use common::gen::random_graph;
use common::kernel_checks as kc;
use dlac_core::artifact::compile;
use dlac_core::error::Error;
use dlac_core::fixtures::{build_mnist_fixture, build_mobilenet_v1_fixture};
use dlac_core::graph::Graph;
use dlac_core::interp::{interpret, seeded_inputs};
use dlac_core::isa::{IsaVariant, ParallelMode};
use dlac_core::partition::{BarrierMode, DwMode, SubgraphKind};
use dlac_core::sim::{run_end_to_end, Metrics};

use ParallelMode::{Input, Output};

const KIB: u64 = 1 << 10;
const MIB: u64 = 1 << 20;

fn gate(n: u32, what: &str, ok: bool, detail: &str) {
    let verdict = if ok { "[PASS]" } else { "[FAIL]" };
    println!("{verdict} {n}. {what}: {detail}");
    assert!(ok, "criterion {n} ({what}): {detail}");
}

fn variant(
    pe_count: u32,
    sram_bytes: u64,
    parallel_mode: ParallelMode,
    dw_mode: DwMode,
) -> IsaVariant {
    IsaVariant {
        pe_count,
        sram_bytes,
        parallel_mode,
        dw_mode,
    }
}

fn static_metrics(g: &Graph, v: &IsaVariant) -> Metrics {
    compile(g, v, BarrierMode::On)
        .unwrap()
        .manifest
        .static_metrics
}

fn conv_cycles(g: &Graph, v: &IsaVariant) -> u64 {
    static_metrics(g, v).class(SubgraphKind::Conv).cycles
}

/// Relative gap against a published figure, as a ratio.
fn gap(actual: u64, published: f64) -> f64 {
    (actual as f64 - published).abs() / published
}

fn bit_exact(g: &Graph, v: &IsaVariant, seed: u64) {
    let compiled = compile(g, v, BarrierMode::On).unwrap();
    let inputs = seeded_inputs(g, seed);
    let run = run_end_to_end(g, &compiled.partition, &compiled.streams, &inputs).unwrap();
    let want = interpret(g, &inputs).unwrap();
    for (got, exp) in run.outputs.iter().zip(&want) {
        assert_eq!(got.data, exp.data, "{} diverges on {v}", g.name);
    }
}

fn grid12(dw_mode: DwMode) -> Vec<IsaVariant> {
    let mut out = Vec::new();
    for pe_count in [64u32, 128] {
        for sram_bytes in [512 * KIB, MIB, 256 * MIB] {
            for parallel_mode in [Output, Input] {
                out.push(variant(pe_count, sram_bytes, parallel_mode, dw_mode));
            }
        }
    }
    out
}

#[test]
fn criterion_1_untiled_conv_cycles_match_published_figures() {
    let g = build_mobilenet_v1_fixture(DwMode::Native);
    let started = Instant::now();
    let cases: [(u32, ParallelMode, u64, f64); 4] = [
        (128, Output, 4_762_368, 4.9e6),
        (64, Output, 8_784_640, 8.9e6),
        (128, Input, 8_638_272, 8.8e6),
        (64, Input, 12_459_648, 12.6e6),
    ];
    let mut ok = true;
    let mut detail = String::new();
    for (p, mode, frozen, published) in cases {
        let got = conv_cycles(&g, &variant(p, 256 * MIB, mode, DwMode::Native));
        let g = gap(got, published);
        ok &= got == frozen && g <= 0.05;
        detail.push_str(&format!(
            "P{p}/{mode}: {got} ({:.1}% off {published}); ",
            g * 100.0
        ));
    }
    let elapsed = started.elapsed();
    ok &= elapsed.as_secs_f64() < 1.0;
    detail.push_str(&format!("{elapsed:.0?} elapsed"));
    gate(1, "untiled CONV cycles at 256 MiB", ok, &detail);
}

#[test]
fn criterion_2_emulated_depthwise_is_exact_and_variant_independent() {
    let g = build_mobilenet_v1_fixture(DwMode::Emulated);
    let expected = 17_385_984u64;
    let mut ok = gap(expected, 17.5e6) <= 0.01;
    let mut worst = 0u64;
    for v in grid12(DwMode::Emulated) {
        let got = static_metrics(&g, &v).class(SubgraphKind::Depth).cycles;
        ok &= got == expected;
        worst = worst.max(got.abs_diff(expected));
    }
    let detail = format!(
        "{expected} cycles on all 12 variants (max dev {worst}), {:.2}% off 17.5e6",
        gap(expected, 17.5e6) * 100.0
    );
    gate(2, "emulated depthwise cycles", ok, &detail);
}

#[test]
fn criterion_3_tiled_conv_cycles_in_published_band() {
    let g = build_mobilenet_v1_fixture(DwMode::Native);
    let one = conv_cycles(&g, &variant(128, MIB, Output, DwMode::Native));
    let half = conv_cycles(&g, &variant(128, 512 * KIB, Output, DwMode::Native));
    let (g1, g2) = (gap(one, 8.4e6), gap(half, 26.4e6));
    let ok = g1 <= 0.05 && g2 <= 0.05;
    let detail = format!(
        "1 MiB: {one} ({:.1}% off 8.4e6); 512 KiB: {half} ({:.1}% off 26.4e6)",
        g1 * 100.0,
        g2 * 100.0
    );
    gate(3, "tiled CONV cycles, 128 PEs output-parallel", ok, &detail);
}

#[test]
fn criterion_4_input_parallel_conv_cycles_are_tiling_invariant() {
    let g = build_mobilenet_v1_fixture(DwMode::Native);
    let mut ok = true;
    let mut detail = String::new();
    for p in [128u32, 64] {
        let small = conv_cycles(&g, &variant(p, 512 * KIB, Input, DwMode::Native));
        let large = conv_cycles(&g, &variant(p, 256 * MIB, Input, DwMode::Native));
        ok &= small == large;
        detail.push_str(&format!("P{p}: {small} == {large}; "));
    }
    gate(
        4,
        "input-parallel CONV cycles, 512 KiB vs 256 MiB",
        ok,
        detail.trim_end(),
    );
}

#[test]
fn criterion_5_cycle_orderings() {
    let native = build_mobilenet_v1_fixture(DwMode::Native);
    let emulated = build_mobilenet_v1_fixture(DwMode::Emulated);
    let m = |p: u32, sram: u64, mode: ParallelMode| {
        static_metrics(&native, &variant(p, sram, mode, DwMode::Native))
    };

    let mut ok = true;
    let mut notes = Vec::new();
    let mut check = |what: &str, pass: bool| {
        ok &= pass;
        notes.push(format!("{what} {}", if pass { "ok" } else { "VIOLATED" }));
    };

    for p in [128u32, 64] {
        check(
            &format!("untiled output<input at P{p}"),
            conv_cycles(&native, &variant(p, 256 * MIB, Output, DwMode::Native))
                < conv_cycles(&native, &variant(p, 256 * MIB, Input, DwMode::Native)),
        );
        check(
            &format!("512KiB input total<output total at P{p}"),
            m(p, 512 * KIB, Input).cycles < m(p, 512 * KIB, Output).cycles,
        );
    }
    check(
        "128PE/1MiB total<64PE/256MiB total",
        m(128, MIB, Output).cycles < m(64, 256 * MIB, Output).cycles,
    );
    for p in [128u32, 64] {
        let nat = m(p, 256 * MIB, Output).class(SubgraphKind::Depth).cycles;
        let emu = static_metrics(&emulated, &variant(p, 256 * MIB, Output, DwMode::Emulated))
            .class(SubgraphKind::Depth)
            .cycles;
        check(
            &format!("native depth<=emulated/20 at P{p}"),
            nat <= emu / 20,
        );
    }
    for sram in [512 * KIB, MIB, 256 * MIB] {
        let lo = m(64, sram, Output);
        let hi = m(128, sram, Output);
        check(
            &format!("depth/requant non-increasing in P at {sram}B"),
            hi.class(SubgraphKind::Depth).cycles <= lo.class(SubgraphKind::Depth).cycles
                && hi.class(SubgraphKind::Requant).cycles <= lo.class(SubgraphKind::Requant).cycles,
        );
    }
    gate(5, "cycle orderings", ok, &notes.join("; "));
}

#[test]
fn criterion_6_partition_reproduction() {
    let mnist = build_mnist_fixture();
    let v = variant(128, 256 * MIB, Output, DwMode::Native);
    let compiled = compile(&mnist, &v, BarrierMode::On).unwrap();
    let compute = compiled
        .partition
        .subgraphs
        .iter()
        .filter(|s| s.kind != SubgraphKind::Requant)
        .count();

    let mobilenet = build_mobilenet_v1_fixture(DwMode::Fallback);
    let vf = variant(128, 256 * MIB, Output, DwMode::Fallback);
    let cpu = compile(&mobilenet, &vf, BarrierMode::On)
        .unwrap()
        .partition
        .cpu_nodes
        .len();

    let ok = compute == 3 && cpu == 13;
    gate(
        6,
        "partition shapes",
        ok,
        &format!("mnist barriers-on compute subgraphs: {compute} (want 3); fallback cpu nodes: {cpu} (want 13)"),
    );
}

#[test]
fn criterion_7_golden_model_equivalence() {
    let started = Instant::now();

    // Every kernel family against its independent naive oracle.
    kc::all_kernels(500);

    // Both fixtures through the full pipeline.
    let mnist = build_mnist_fixture();
    for v in grid12(DwMode::Native) {
        bit_exact(&mnist, &v, 1);
    }
    let native = build_mobilenet_v1_fixture(DwMode::Native);
    bit_exact(&native, &variant(128, 256 * MIB, Output, DwMode::Native), 2);
    bit_exact(&native, &variant(128, 512 * KIB, Output, DwMode::Native), 2);
    let emulated = build_mobilenet_v1_fixture(DwMode::Emulated);
    bit_exact(
        &emulated,
        &variant(64, 256 * MIB, Output, DwMode::Emulated),
        2,
    );
    let fallback = build_mobilenet_v1_fixture(DwMode::Fallback);
    bit_exact(
        &fallback,
        &variant(64, 256 * MIB, Input, DwMode::Fallback),
        2,
    );

    // Randomized graphs across the whole variant grid.
    let mut cases = 0usize;
    for seed in 0..200u64 {
        let dw = [DwMode::Fallback, DwMode::Emulated, DwMode::Native][seed as usize % 3];
        let g = random_graph(seed);
        for v in grid12(dw) {
            bit_exact(&g, &v, seed);
            cases += 1;
        }
    }

    let elapsed = started.elapsed();
    let ok = cases >= 200 * 12 && elapsed.as_secs() < 300;
    gate(
        7,
        "golden-model equivalence",
        ok,
        &format!("7 kernel families x 500 oracle instances; fixtures + {cases} random graph/variant runs bit-exact; {elapsed:.1?}"),
    );
}

#[test]
fn criterion_8_planner_sram_boundary() {
    let g = build_mobilenet_v1_fixture(DwMode::Native);
    let starved = compile(
        &g,
        &variant(128, 256 * KIB, Output, DwMode::Native),
        BarrierMode::On,
    );
    let starved_ok = matches!(starved, Err(Error::InsufficientSram { .. }));
    let fits = compile(
        &g,
        &variant(128, 512 * KIB, Output, DwMode::Native),
        BarrierMode::On,
    );
    let detail = format!(
        "256 KiB: {}; 512 KiB: {}",
        starved
            .err()
            .map(|e| e.to_string())
            .unwrap_or_else(|| "compiled".into()),
        if fits.is_ok() { "compiled" } else { "failed" }
    );
    gate(
        8,
        "planner memory boundary",
        starved_ok && fits.is_ok(),
        &detail,
    );
}

#[test]
fn criterion_9_requant_cycle_model() {
    let g = build_mobilenet_v1_fixture(DwMode::Native);
    let rq = |p: u32, sram: u64| {
        static_metrics(&g, &variant(p, sram, Output, DwMode::Native))
            .class(SubgraphKind::Requant)
            .cycles
    };
    let (r64, r128, r256) = (rq(64, 256 * MIB), rq(128, 256 * MIB), rq(256, 256 * MIB));
    let halves_with_p = r64 > r128 && r128 > r256;
    let mut tiling_monotone = true;
    for p in [64u32, 128] {
        let untiled = rq(p, 256 * MIB);
        tiling_monotone &= rq(p, MIB) >= untiled && rq(p, 512 * KIB) >= rq(p, MIB);
    }
    // The published absolute requant counts are not reproducible from the
    // stated model and are deliberately not compared against.
    let ok = halves_with_p && tiling_monotone;
    gate(
        9,
        "requant cycle trends",
        ok,
        &format!(
            "P64/128/256 at 256 MiB: {r64}>{r128}>{r256}; tiling never reduces requant cycles"
        ),
    );
}
