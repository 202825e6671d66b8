//! Device simulator.
//!
//! [`cost_stream`] walks a command stream statically: it tracks the register
//! file, validates every issue (registers written before use, SRAM spans in
//! range) and accumulates the cycle cost model. [`execute_stream`] does the
//! same walk but also moves real bytes between system memory and SRAM and
//! runs the functional units, so its results can be compared bit for bit
//! against the reference interpreter. Both return identical [`Metrics`].
//!
//! Cycle model, with `P` processing elements:
//! * convolution: `oh*ow*kh*kw * cin * ceil(ct/P)` output-parallel,
//!   `oh*ow*kh*kw * ct * ceil(cin/P)` input-parallel (matmul is the 1x1x1
//!   case);
//! * depthwise: `oh*ow*kh*kw * ceil(ct/P)` in either mode;
//! * pool: `oh*ow*k*k * ceil(ct/P)`;
//! * lane ops: `ceil(n/P)`;
//! * requantize: `ceil(16n/P)` plus a fixed 64-cycle setup per issue;
//! * DMA: `ceil(bytes/16)` counted separately from compute cycles.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::arith::{abs_sat_i8, leaky_neg, requantize};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::interp::{eval_node, TensorData, TensorValue};
use crate::isa::{
    CommandStream, IsaVariant, Opcode, ParallelMode, Reg, RegWrite, BUS_BYTES_PER_CYCLE,
    REQUANT_LANE_DIVISOR, REQUANT_SETUP_CYCLES, WEIGHTS_TENSOR,
};
use crate::partition::{PartitionedGraph, ScheduleUnit, SubgraphKind};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LaneMetrics {
    pub cycles: u64,
    pub macs: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Compute cycles; DMA is accounted separately.
    pub cycles: u64,
    pub macs: u64,
    pub dma_bytes: u64,
    pub dma_cycles: u64,
    pub register_writes: u64,
    pub issues: u64,
    /// Compute cycles and MACs split by the workload class of the issue.
    pub by_class: BTreeMap<SubgraphKind, LaneMetrics>,
}

impl Metrics {
    pub fn utilization(&self, pe_count: u32) -> f64 {
        if self.cycles == 0 {
            return 0.0;
        }
        self.macs as f64 / (pe_count as f64 * self.cycles as f64)
    }

    pub fn class(&self, kind: SubgraphKind) -> LaneMetrics {
        self.by_class.get(&kind).copied().unwrap_or_default()
    }

    pub fn merge(&mut self, other: &Metrics) {
        self.cycles += other.cycles;
        self.macs += other.macs;
        self.dma_bytes += other.dma_bytes;
        self.dma_cycles += other.dma_cycles;
        self.register_writes += other.register_writes;
        self.issues += other.issues;
        for (k, v) in &other.by_class {
            let lane = self.by_class.entry(*k).or_default();
            lane.cycles += v.cycles;
            lane.macs += v.macs;
        }
    }
}

struct RegFile {
    vals: [Option<u32>; Reg::COUNT],
}

impl Default for RegFile {
    fn default() -> Self {
        RegFile {
            vals: [None; Reg::COUNT],
        }
    }
}

impl RegFile {
    fn write(&mut self, w: RegWrite) {
        self.vals[w.reg as usize] = Some(w.value);
    }

    fn get(&self, r: Reg) -> Result<u32> {
        self.vals[r as usize].ok_or_else(|| Error::Stream(format!("{r} read before any write")))
    }

    fn get_usize(&self, r: Reg) -> Result<usize> {
        Ok(self.get(r)? as usize)
    }

    fn get_i8(&self, r: Reg) -> Result<i8> {
        let v = crate::isa::decode_i32(self.get(r)?);
        i8::try_from(v).map_err(|_| Error::Stream(format!("{r} value {v} out of i8 range")))
    }

    fn get_shift(&self, r: Reg) -> Result<u32> {
        let v = self.get(r)?;
        if v > 62 {
            return Err(Error::Stream(format!(
                "{r} shift {v} out of range (0..=62)"
            )));
        }
        Ok(v)
    }
}

fn check_span(what: &str, addr: usize, len: u128, sram: u64) -> Result<()> {
    if addr as u128 + len > sram as u128 {
        return Err(Error::Stream(format!(
            "{what} [{addr}, {addr}+{len}) exceeds the {sram}-byte sram"
        )));
    }
    Ok(())
}

struct ConvIssue {
    in_addr: usize,
    in_h: usize,
    in_w: usize,
    in_c: usize,
    out_addr: usize,
    out_h: usize,
    out_w: usize,
    out_c: usize,
    w_addr: usize,
    b_addr: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad_top: usize,
    pad_left: usize,
    requant: Option<(u32, u32, i8, i8)>,
    depthwise: bool,
    relu: bool,
}

struct PoolIssue {
    in_addr: usize,
    in_h: usize,
    in_w: usize,
    channels: usize,
    out_addr: usize,
    out_h: usize,
    out_w: usize,
    avg: Option<(u32, u32)>,
    k: usize,
    stride: usize,
}

struct LaneIssue {
    op: Opcode,
    in_addr: usize,
    src2_addr: Option<usize>,
    out_addr: usize,
    count: usize,
    in_elem: usize,
    out_elem: usize,
    act: Option<(u32, u32)>,
    requant: Option<(u32, u32, i8, i8)>,
}

struct MatMulIssue {
    in_addr: usize,
    features: usize,
    out_addr: usize,
    out_c: usize,
    w_addr: usize,
    b_addr: usize,
}

struct DmaIssue {
    read: bool,
    tensor: u32,
    offset: usize,
    sram_addr: usize,
    row_bytes: usize,
    row_stride: usize,
    row_count: usize,
}

enum Decoded {
    Conv(ConvIssue),
    MatMul(MatMulIssue),
    Pool(PoolIssue),
    Lane(LaneIssue),
    Dma(DmaIssue),
}

fn decode_requant_regs(r: &RegFile) -> Result<(u32, u32, i8, i8)> {
    Ok((
        r.get(Reg::ReqM)?,
        r.get_shift(Reg::ReqShift)?,
        r.get_i8(Reg::ClampLo)?,
        r.get_i8(Reg::ClampHi)?,
    ))
}

fn decode(op: Opcode, r: &RegFile, v: &IsaVariant) -> Result<Decoded> {
    let sram = v.sram_bytes;
    match op {
        Opcode::Conv | Opcode::ConvRelu | Opcode::DepthConv => {
            let depthwise = op == Opcode::DepthConv;
            let requant = match r.get(Reg::ReqEnable)? {
                0 => None,
                1 => Some(decode_requant_regs(r)?),
                other => {
                    return Err(Error::Stream(format!(
                        "REQ_ENABLE value {other} is not 0 or 1"
                    )))
                }
            };
            let p = ConvIssue {
                in_addr: r.get_usize(Reg::InAddr)?,
                in_h: r.get_usize(Reg::InH)?,
                in_w: r.get_usize(Reg::InW)?,
                in_c: r.get_usize(Reg::InC)?,
                out_addr: r.get_usize(Reg::OutAddr)?,
                out_h: r.get_usize(Reg::OutH)?,
                out_w: r.get_usize(Reg::OutW)?,
                out_c: r.get_usize(Reg::OutC)?,
                w_addr: r.get_usize(Reg::WAddr)?,
                b_addr: r.get_usize(Reg::BAddr)?,
                kh: r.get_usize(Reg::KH)?,
                kw: r.get_usize(Reg::KW)?,
                stride: r.get_usize(Reg::Stride)?,
                pad_top: r.get_usize(Reg::PadTop)?,
                pad_left: r.get_usize(Reg::PadLeft)?,
                requant,
                depthwise,
                relu: op == Opcode::ConvRelu,
            };
            if p.kh == 0 || p.kw == 0 || p.stride == 0 || p.in_c == 0 || p.out_c == 0 {
                return Err(Error::Stream(format!("{op} with a zero extent")));
            }
            if depthwise && p.in_c != p.out_c {
                return Err(Error::Stream("depthwise issue with IN_C != OUT_C".into()));
            }
            let taps = (p.kh * p.kw) as u128;
            let w_len = if depthwise {
                taps * p.out_c as u128
            } else {
                taps * (p.in_c * p.out_c) as u128
            };
            let out_elem = if p.requant.is_some() { 1u128 } else { 4 };
            check_span(
                "conv input",
                p.in_addr,
                (p.in_h * p.in_w * p.in_c) as u128,
                sram,
            )?;
            check_span("conv weights", p.w_addr, w_len, sram)?;
            check_span("conv bias", p.b_addr, 4 * p.out_c as u128, sram)?;
            check_span(
                "conv output",
                p.out_addr,
                (p.out_h * p.out_w * p.out_c) as u128 * out_elem,
                sram,
            )?;
            Ok(Decoded::Conv(p))
        }
        Opcode::MatMul => {
            let p = MatMulIssue {
                in_addr: r.get_usize(Reg::InAddr)?,
                features: r.get_usize(Reg::InC)?,
                out_addr: r.get_usize(Reg::OutAddr)?,
                out_c: r.get_usize(Reg::OutC)?,
                w_addr: r.get_usize(Reg::WAddr)?,
                b_addr: r.get_usize(Reg::BAddr)?,
            };
            if p.features == 0 || p.out_c == 0 {
                return Err(Error::Stream("matmul with a zero extent".into()));
            }
            check_span("matmul input", p.in_addr, p.features as u128, sram)?;
            check_span(
                "matmul weights",
                p.w_addr,
                (p.features * p.out_c) as u128,
                sram,
            )?;
            check_span("matmul bias", p.b_addr, 4 * p.out_c as u128, sram)?;
            check_span("matmul output", p.out_addr, 4 * p.out_c as u128, sram)?;
            Ok(Decoded::MatMul(p))
        }
        Opcode::Pool => {
            let avg = match r.get(Reg::PoolMode)? {
                0 => None,
                1 => Some((r.get(Reg::PoolM)?, r.get_shift(Reg::PoolS)?)),
                other => {
                    return Err(Error::Stream(format!(
                        "POOL_MODE value {other} is not 0 or 1"
                    )))
                }
            };
            let p = PoolIssue {
                in_addr: r.get_usize(Reg::InAddr)?,
                in_h: r.get_usize(Reg::InH)?,
                in_w: r.get_usize(Reg::InW)?,
                channels: r.get_usize(Reg::InC)?,
                out_addr: r.get_usize(Reg::OutAddr)?,
                out_h: r.get_usize(Reg::OutH)?,
                out_w: r.get_usize(Reg::OutW)?,
                avg,
                k: r.get_usize(Reg::PoolK)?,
                stride: r.get_usize(Reg::PoolStride)?,
            };
            if p.k == 0 || p.stride == 0 || p.channels == 0 {
                return Err(Error::Stream("pool with a zero extent".into()));
            }
            check_span(
                "pool input",
                p.in_addr,
                (p.in_h * p.in_w * p.channels) as u128,
                sram,
            )?;
            check_span(
                "pool output",
                p.out_addr,
                (p.out_h * p.out_w * p.channels) as u128,
                sram,
            )?;
            Ok(Decoded::Pool(p))
        }
        Opcode::ActRelu
        | Opcode::ActLrelu
        | Opcode::EAbs
        | Opcode::CMin
        | Opcode::CMax
        | Opcode::EAdd
        | Opcode::E32Add
        | Opcode::Requant => {
            let elem = if op == Opcode::E32Add { 4 } else { 1 };
            let (in_elem, out_elem) = if op == Opcode::Requant {
                (4, 1)
            } else {
                (elem, elem)
            };
            let two_input = matches!(
                op,
                Opcode::CMin | Opcode::CMax | Opcode::EAdd | Opcode::E32Add
            );
            let p = LaneIssue {
                op,
                in_addr: r.get_usize(Reg::InAddr)?,
                src2_addr: if two_input {
                    Some(r.get_usize(Reg::Src2Addr)?)
                } else {
                    None
                },
                out_addr: r.get_usize(Reg::OutAddr)?,
                count: r.get_usize(Reg::ElemCount)?,
                in_elem,
                out_elem,
                act: if op == Opcode::ActLrelu {
                    Some((r.get(Reg::ActM)?, r.get_shift(Reg::ActS)?))
                } else {
                    None
                },
                requant: if op == Opcode::Requant {
                    Some(decode_requant_regs(r)?)
                } else {
                    None
                },
            };
            if p.count == 0 {
                return Err(Error::Stream(format!("{op} with ELEM_COUNT 0")));
            }
            check_span("lane input", p.in_addr, (p.count * p.in_elem) as u128, sram)?;
            if let Some(a) = p.src2_addr {
                check_span("lane second input", a, (p.count * p.in_elem) as u128, sram)?;
            }
            check_span(
                "lane output",
                p.out_addr,
                (p.count * p.out_elem) as u128,
                sram,
            )?;
            Ok(Decoded::Lane(p))
        }
        Opcode::DmaRead | Opcode::DmaWrite => {
            let p = DmaIssue {
                read: op == Opcode::DmaRead,
                tensor: r.get(Reg::DmaTensor)?,
                offset: r.get_usize(Reg::DmaOffset)?,
                sram_addr: r.get_usize(Reg::DmaSramAddr)?,
                row_bytes: r.get_usize(Reg::DmaRowBytes)?,
                row_stride: r.get_usize(Reg::DmaRowStride)?,
                row_count: r.get_usize(Reg::DmaRowCount)?,
            };
            if p.row_bytes == 0 || p.row_count == 0 {
                return Err(Error::Stream("dma with zero rows or row bytes".into()));
            }
            if p.row_stride < p.row_bytes {
                return Err(Error::Stream(format!(
                    "dma row stride {} shorter than row bytes {}",
                    p.row_stride, p.row_bytes
                )));
            }
            check_span(
                "dma sram window",
                p.sram_addr,
                (p.row_bytes * p.row_count) as u128,
                sram,
            )?;
            Ok(Decoded::Dma(p))
        }
    }
}

fn group(extent: u64, p: u64) -> u64 {
    extent.div_ceil(p)
}

struct IssueCost {
    cycles: u64,
    macs: u64,
    dma_bytes: u64,
}

fn cost(d: &Decoded, v: &IsaVariant) -> IssueCost {
    let p = v.pe_count as u64;
    match d {
        Decoded::Conv(c) => {
            let spatial_taps = (c.out_h * c.out_w * c.kh * c.kw) as u64;
            let (in_c, out_c) = (c.in_c as u64, c.out_c as u64);
            let (cycles, macs) = if c.depthwise {
                (spatial_taps * group(out_c, p), spatial_taps * out_c)
            } else {
                let cycles = match v.parallel_mode {
                    ParallelMode::Output => spatial_taps * in_c * group(out_c, p),
                    ParallelMode::Input => spatial_taps * out_c * group(in_c, p),
                };
                (cycles, spatial_taps * in_c * out_c)
            };
            IssueCost {
                cycles,
                macs,
                dma_bytes: 0,
            }
        }
        Decoded::MatMul(m) => {
            let (in_c, out_c) = (m.features as u64, m.out_c as u64);
            let cycles = match v.parallel_mode {
                ParallelMode::Output => in_c * group(out_c, p),
                ParallelMode::Input => out_c * group(in_c, p),
            };
            IssueCost {
                cycles,
                macs: in_c * out_c,
                dma_bytes: 0,
            }
        }
        Decoded::Pool(q) => {
            let windows = (q.out_h * q.out_w * q.k * q.k) as u64;
            IssueCost {
                cycles: windows * group(q.channels as u64, p),
                macs: windows * q.channels as u64,
                dma_bytes: 0,
            }
        }
        Decoded::Lane(l) => {
            let n = l.count as u64;
            let cycles = if l.op == Opcode::Requant {
                group(n * REQUANT_LANE_DIVISOR, p) + REQUANT_SETUP_CYCLES
            } else {
                group(n, p)
            };
            IssueCost {
                cycles,
                macs: n,
                dma_bytes: 0,
            }
        }
        Decoded::Dma(t) => IssueCost {
            cycles: 0,
            macs: 0,
            dma_bytes: (t.row_bytes * t.row_count) as u64,
        },
    }
}

/// System-memory model: one byte buffer per boundary tensor, keyed by tensor
/// id, plus the read-only packed weights under [`WEIGHTS_TENSOR`]. Buffers
/// are registered with their full size up front and materialize zeroed on
/// first write.
#[derive(Default)]
pub struct SystemMemory {
    sizes: BTreeMap<u32, usize>,
    buffers: BTreeMap<u32, Vec<u8>>,
}

impl SystemMemory {
    pub fn for_graph(graph: &Graph) -> Self {
        let mut m = SystemMemory::default();
        for (id, t) in graph.tensors.iter().enumerate() {
            m.sizes.insert(id as u32, t.bytes());
        }
        m.sizes.insert(WEIGHTS_TENSOR, graph.weights.len());
        m.buffers.insert(WEIGHTS_TENSOR, graph.weights.clone());
        m
    }

    pub fn insert(&mut self, id: u32, bytes: Vec<u8>) -> Result<()> {
        if id == WEIGHTS_TENSOR {
            return Err(Error::Sim("the weight blob is read-only".into()));
        }
        match self.sizes.get(&id) {
            Some(&size) if size == bytes.len() => {
                self.buffers.insert(id, bytes);
                Ok(())
            }
            Some(&size) => Err(Error::Sim(format!(
                "tensor {id} expects {size} bytes, found {}",
                bytes.len()
            ))),
            None => Err(Error::Sim(format!("tensor {id} is not registered"))),
        }
    }

    pub fn get(&self, id: u32) -> Result<&[u8]> {
        self.buffers
            .get(&id)
            .map(|b| b.as_slice())
            .ok_or_else(|| Error::Sim(format!("tensor {id} read before any write")))
    }

    fn write_target(&mut self, id: u32) -> Result<&mut Vec<u8>> {
        if id == WEIGHTS_TENSOR {
            return Err(Error::Stream("the weight blob is read-only".into()));
        }
        let size = *self
            .sizes
            .get(&id)
            .ok_or_else(|| Error::Sim(format!("tensor {id} is not registered")))?;
        Ok(self.buffers.entry(id).or_insert_with(|| vec![0; size]))
    }
}

fn rd8(sram: &[u8], addr: usize) -> i8 {
    sram[addr] as i8
}

fn rd32(sram: &[u8], addr: usize) -> i32 {
    i32::from_le_bytes(sram[addr..addr + 4].try_into().unwrap())
}

fn wr8(sram: &mut [u8], addr: usize, v: i8) {
    sram[addr] = v as u8;
}

fn wr32(sram: &mut [u8], addr: usize, v: i32) {
    sram[addr..addr + 4].copy_from_slice(&v.to_le_bytes());
}

fn exec_conv(c: &ConvIssue, sram: &mut [u8]) {
    let taps_c = if c.depthwise { 1 } else { c.in_c };
    for oy in 0..c.out_h {
        for ox in 0..c.out_w {
            for oc in 0..c.out_c {
                let mut acc = rd32(sram, c.b_addr + 4 * oc);
                for ky in 0..c.kh {
                    for kx in 0..c.kw {
                        let iy = (oy * c.stride + ky) as isize - c.pad_top as isize;
                        let ix = (ox * c.stride + kx) as isize - c.pad_left as isize;
                        if iy < 0 || ix < 0 || iy >= c.in_h as isize || ix >= c.in_w as isize {
                            continue;
                        }
                        let pix = (iy as usize * c.in_w + ix as usize) * c.in_c;
                        if c.depthwise {
                            let x = rd8(sram, c.in_addr + pix + oc) as i32;
                            let w = rd8(sram, c.w_addr + (ky * c.kw + kx) * c.out_c + oc) as i32;
                            acc = acc.wrapping_add(x * w);
                        } else {
                            for ic in 0..c.in_c {
                                let x = rd8(sram, c.in_addr + pix + ic) as i32;
                                let w = rd8(
                                    sram,
                                    c.w_addr + ((ky * c.kw + kx) * taps_c + ic) * c.out_c + oc,
                                );
                                acc = acc.wrapping_add(x * w as i32);
                            }
                        }
                    }
                }
                let at = (oy * c.out_w + ox) * c.out_c + oc;
                match c.requant {
                    Some((m, s, lo, hi)) => {
                        let mut v = requantize(acc, m, s, lo, hi);
                        if c.relu {
                            v = v.max(0);
                        }
                        wr8(sram, c.out_addr + at, v);
                    }
                    None => {
                        let v = if c.relu { acc.max(0) } else { acc };
                        wr32(sram, c.out_addr + 4 * at, v);
                    }
                }
            }
        }
    }
}

fn exec_matmul(m: &MatMulIssue, sram: &mut [u8]) {
    for o in 0..m.out_c {
        let mut acc = rd32(sram, m.b_addr + 4 * o);
        for f in 0..m.features {
            let x = rd8(sram, m.in_addr + f) as i32;
            let w = rd8(sram, m.w_addr + f * m.out_c + o) as i32;
            acc = acc.wrapping_add(x * w);
        }
        wr32(sram, m.out_addr + 4 * o, acc);
    }
}

fn exec_pool(q: &PoolIssue, sram: &mut [u8]) {
    for oy in 0..q.out_h {
        for ox in 0..q.out_w {
            for ch in 0..q.channels {
                let mut max = i8::MIN;
                let mut sum = 0i32;
                for ky in 0..q.k {
                    for kx in 0..q.k {
                        let v = rd8(
                            sram,
                            q.in_addr
                                + ((oy * q.stride + ky) * q.in_w + ox * q.stride + kx) * q.channels
                                + ch,
                        );
                        max = max.max(v);
                        sum += v as i32;
                    }
                }
                let out = match q.avg {
                    None => max,
                    Some((m, s)) => requantize(sum, m, s, -128, 127),
                };
                wr8(
                    sram,
                    q.out_addr + (oy * q.out_w + ox) * q.channels + ch,
                    out,
                );
            }
        }
    }
}

fn exec_lane(l: &LaneIssue, sram: &mut [u8]) {
    for i in 0..l.count {
        match l.op {
            Opcode::Requant => {
                let (m, s, lo, hi) = l.requant.unwrap();
                let v = requantize(rd32(sram, l.in_addr + 4 * i), m, s, lo, hi);
                wr8(sram, l.out_addr + i, v);
            }
            Opcode::E32Add => {
                let a = rd32(sram, l.in_addr + 4 * i);
                let b = rd32(sram, l.src2_addr.unwrap() + 4 * i);
                wr32(sram, l.out_addr + 4 * i, a.wrapping_add(b));
            }
            Opcode::ActRelu => wr8(sram, l.out_addr + i, rd8(sram, l.in_addr + i).max(0)),
            Opcode::ActLrelu => {
                let (m, s) = l.act.unwrap();
                let v = rd8(sram, l.in_addr + i);
                wr8(
                    sram,
                    l.out_addr + i,
                    if v >= 0 { v } else { leaky_neg(v, m, s) },
                );
            }
            Opcode::EAbs => wr8(sram, l.out_addr + i, abs_sat_i8(rd8(sram, l.in_addr + i))),
            Opcode::CMin | Opcode::CMax | Opcode::EAdd => {
                let a = rd8(sram, l.in_addr + i);
                let b = rd8(sram, l.src2_addr.unwrap() + i);
                let v = match l.op {
                    Opcode::CMin => a.min(b),
                    Opcode::CMax => a.max(b),
                    _ => a.saturating_add(b),
                };
                wr8(sram, l.out_addr + i, v);
            }
            _ => unreachable!("lane dispatch covers every lane opcode"),
        }
    }
}

fn exec_dma(t: &DmaIssue, sram: &mut [u8], sysmem: &mut SystemMemory) -> Result<()> {
    let span_end = t.offset + (t.row_count - 1) * t.row_stride + t.row_bytes;
    if t.read {
        let buf = sysmem.get(t.tensor)?;
        if span_end > buf.len() {
            return Err(Error::Stream(format!(
                "dma read of tensor {} reaches byte {span_end} of a {}-byte buffer",
                t.tensor,
                buf.len()
            )));
        }
        for row in 0..t.row_count {
            let src = t.offset + row * t.row_stride;
            let dst = t.sram_addr + row * t.row_bytes;
            sram[dst..dst + t.row_bytes].copy_from_slice(&buf[src..src + t.row_bytes]);
        }
    } else {
        let buf = sysmem.write_target(t.tensor)?;
        if span_end > buf.len() {
            return Err(Error::Stream(format!(
                "dma write of tensor {} reaches byte {span_end} of a {}-byte buffer",
                t.tensor,
                buf.len()
            )));
        }
        for row in 0..t.row_count {
            let dst = t.offset + row * t.row_stride;
            let src = t.sram_addr + row * t.row_bytes;
            buf[dst..dst + t.row_bytes].copy_from_slice(&sram[src..src + t.row_bytes]);
        }
    }
    Ok(())
}

fn walk(
    stream: &CommandStream,
    mut data: Option<(&mut [u8], &mut SystemMemory)>,
) -> Result<Metrics> {
    stream.variant.validate()?;
    let mut regs = RegFile::default();
    let mut m = Metrics::default();
    let p = stream.variant.pe_count as u64;
    for unit in &stream.units {
        for w in &unit.regs {
            regs.write(*w);
            m.register_writes += 1;
        }
        let d = decode(unit.op, &regs, &stream.variant)?;
        let c = cost(&d, &stream.variant);
        m.issues += 1;
        if unit.op.is_dma() {
            m.dma_bytes += c.dma_bytes;
            m.dma_cycles += c.dma_bytes.div_ceil(BUS_BYTES_PER_CYCLE);
        } else {
            debug_assert!(
                c.macs <= p * c.cycles,
                "{} issue breaks the utilization bound",
                unit.op
            );
            m.cycles += c.cycles;
            m.macs += c.macs;
            let lane = m.by_class.entry(unit.class).or_default();
            lane.cycles += c.cycles;
            lane.macs += c.macs;
        }
        if let Some((sram, sysmem)) = data.as_mut() {
            match &d {
                Decoded::Conv(x) => exec_conv(x, sram),
                Decoded::MatMul(x) => exec_matmul(x, sram),
                Decoded::Pool(x) => exec_pool(x, sram),
                Decoded::Lane(x) => exec_lane(x, sram),
                Decoded::Dma(x) => exec_dma(x, sram, sysmem)?,
            }
        }
    }
    Ok(m)
}

/// Static walk: validate the stream and price it without touching data.
pub fn cost_stream(stream: &CommandStream) -> Result<Metrics> {
    walk(stream, None)
}

/// Functional walk: same validation and pricing, plus real DMA transfers and
/// functional-unit execution against `sysmem`.
pub fn execute_stream(stream: &CommandStream, sysmem: &mut SystemMemory) -> Result<Metrics> {
    let mut sram = vec![0u8; stream.variant.sram_bytes as usize];
    walk(stream, Some((&mut sram, sysmem)))
}

pub struct RunResult {
    pub outputs: Vec<TensorValue>,
    pub metrics: Metrics,
}

fn tensor_from_sysmem(graph: &Graph, sysmem: &SystemMemory, t: usize) -> Result<TensorValue> {
    let desc = graph.tensor(t).clone();
    let data = TensorData::from_le_bytes(desc.dtype, sysmem.get(t as u32)?)?;
    Ok(TensorValue { desc, data })
}

/// Run a compiled model: device subgraphs through the functional simulator,
/// fallback nodes through the reference interpreter, in schedule order.
pub fn run_end_to_end(
    graph: &Graph,
    pg: &PartitionedGraph,
    streams: &[CommandStream],
    inputs: &[TensorValue],
) -> Result<RunResult> {
    if inputs.len() != graph.inputs.len() {
        return Err(Error::Model(format!(
            "graph takes {} input(s), found {}",
            graph.inputs.len(),
            inputs.len()
        )));
    }
    let mut sysmem = SystemMemory::for_graph(graph);
    for (&t, value) in graph.inputs.iter().zip(inputs) {
        let want = graph.tensor(t);
        if value.desc.shape != want.shape || value.desc.dtype != want.dtype {
            return Err(Error::Model(format!(
                "input '{}' expects shape {:?} {:?}",
                want.name, want.shape, want.dtype
            )));
        }
        sysmem.insert(t as u32, value.data.to_le_bytes())?;
    }

    let mut metrics = Metrics::default();
    for unit in &pg.schedule {
        match *unit {
            ScheduleUnit::Accel(id) => {
                let stream = streams
                    .get(id as usize)
                    .ok_or_else(|| Error::Sim(format!("no stream for subgraph {id}")))?;
                metrics.merge(&execute_stream(stream, &mut sysmem)?);
            }
            ScheduleUnit::Cpu(idx) => {
                let node = &graph.nodes[idx];
                let ins = node
                    .inputs
                    .iter()
                    .map(|&t| tensor_from_sysmem(graph, &sysmem, t))
                    .collect::<Result<Vec<_>>>()?;
                let refs: Vec<&TensorValue> = ins.iter().collect();
                let blob = node
                    .weight
                    .map(|w| &graph.weights[w.offset..w.offset + w.len])
                    .unwrap_or(&[]);
                let out = eval_node(&node.id, &node.kind, &refs, blob)?;
                sysmem.insert(node.output as u32, out.data.to_le_bytes())?;
            }
        }
    }

    let outputs = graph
        .outputs
        .iter()
        .map(|&t| tensor_from_sysmem(graph, &sysmem, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(RunResult { outputs, metrics })
}
