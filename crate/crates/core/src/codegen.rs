//! Lowering from planned subgraphs to command streams.
//!
//! Every stream is a flat unit list; a unit is "write these registers, then
//! issue this opcode". The builder tracks the register file and drops writes
//! whose value is already current, so consecutive similar issues (tile loops
//! in particular) only touch the registers that actually change.
//!
//! Two execution shapes exist per subgraph, chosen by the planner:
//! * resident: DMA all boundary inputs and weights in, run every node SRAM to
//!   SRAM, DMA the boundary outputs back;
//! * per-op: each node loads its operands from system memory tile by tile and
//!   stores its result back, with convolution-style nodes tiled along output
//!   channels.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::graph::{pad_before, Graph, Node, NodeKind, QScale, TensorId};
use crate::isa::{
    encode_i32, CommandStream, IsaVariant, Opcode, Reg, RegWrite, StreamUnit, WEIGHTS_TENSOR,
};
use crate::partition::{node_class, DwMode, Subgraph, SubgraphKind};
use crate::plan::{resident_out_bytes, OpPlan, SubgraphPlan};

struct StreamBuilder {
    units: Vec<StreamUnit>,
    regs: [Option<u32>; Reg::COUNT],
    pending: Vec<RegWrite>,
}

impl StreamBuilder {
    fn new() -> Self {
        StreamBuilder {
            units: Vec::new(),
            regs: [None; Reg::COUNT],
            pending: Vec::new(),
        }
    }

    fn set(&mut self, reg: Reg, value: u32) {
        if self.regs[reg as usize] == Some(value) {
            return;
        }
        self.regs[reg as usize] = Some(value);
        self.pending.retain(|w| w.reg != reg);
        self.pending.push(RegWrite { reg, value });
    }

    fn set_wide(&mut self, reg: Reg, value: u64, what: &str) -> Result<()> {
        let v = u32::try_from(value).map_err(|_| {
            Error::Codegen(format!("{what} {value} does not fit a 32-bit register"))
        })?;
        self.set(reg, v);
        Ok(())
    }

    fn issue(&mut self, op: Opcode, class: SubgraphKind) {
        self.units.push(StreamUnit {
            regs: std::mem::take(&mut self.pending),
            op,
            class,
        });
    }
}

fn dims(graph: &Graph, t: TensorId) -> (usize, usize, usize) {
    let s = &graph.tensor(t).shape;
    (s[1], s[2], s[3])
}

#[allow(clippy::too_many_arguments)]
fn emit_dma(
    b: &mut StreamBuilder,
    op: Opcode,
    class: SubgraphKind,
    tensor: u32,
    offset: u64,
    sram: u64,
    row_bytes: u64,
    row_stride: u64,
    row_count: u64,
) -> Result<()> {
    b.set(Reg::DmaTensor, tensor);
    b.set_wide(Reg::DmaOffset, offset, "dma offset")?;
    b.set_wide(Reg::DmaSramAddr, sram, "dma sram address")?;
    b.set_wide(Reg::DmaRowBytes, row_bytes, "dma row bytes")?;
    b.set_wide(Reg::DmaRowStride, row_stride, "dma row stride")?;
    b.set_wide(Reg::DmaRowCount, row_count, "dma row count")?;
    b.issue(op, class);
    Ok(())
}

fn read_contiguous(
    b: &mut StreamBuilder,
    class: SubgraphKind,
    tensor: u32,
    offset: u64,
    sram: u64,
    bytes: u64,
) -> Result<()> {
    emit_dma(
        b,
        Opcode::DmaRead,
        class,
        tensor,
        offset,
        sram,
        bytes,
        bytes,
        1,
    )
}

fn write_contiguous(
    b: &mut StreamBuilder,
    class: SubgraphKind,
    tensor: u32,
    offset: u64,
    sram: u64,
    bytes: u64,
) -> Result<()> {
    emit_dma(
        b,
        Opcode::DmaWrite,
        class,
        tensor,
        offset,
        sram,
        bytes,
        bytes,
        1,
    )
}

fn set_requant(b: &mut StreamBuilder, requant: Option<(QScale, i8, i8)>) {
    match requant {
        Some((q, lo, hi)) => {
            b.set(Reg::ReqEnable, 1);
            b.set(Reg::ReqM, q.m);
            b.set(Reg::ReqShift, q.s);
            b.set(Reg::ClampLo, encode_i32(lo as i32));
            b.set(Reg::ClampHi, encode_i32(hi as i32));
        }
        None => b.set(Reg::ReqEnable, 0),
    }
}

struct ConvIssue {
    op: Opcode,
    class: SubgraphKind,
    in_addr: u64,
    in_h: usize,
    in_w: usize,
    in_c: usize,
    out_addr: u64,
    out_h: usize,
    out_w: usize,
    out_c: usize,
    w_addr: u64,
    b_addr: u64,
    kh: usize,
    kw: usize,
    stride: usize,
    pad_top: usize,
    pad_left: usize,
    requant: Option<(QScale, i8, i8)>,
}

fn emit_conv(b: &mut StreamBuilder, p: ConvIssue) -> Result<()> {
    b.set_wide(Reg::InAddr, p.in_addr, "input address")?;
    b.set(Reg::InH, p.in_h as u32);
    b.set(Reg::InW, p.in_w as u32);
    b.set(Reg::InC, p.in_c as u32);
    b.set_wide(Reg::OutAddr, p.out_addr, "output address")?;
    b.set(Reg::OutH, p.out_h as u32);
    b.set(Reg::OutW, p.out_w as u32);
    b.set(Reg::OutC, p.out_c as u32);
    b.set_wide(Reg::WAddr, p.w_addr, "weight address")?;
    b.set_wide(Reg::BAddr, p.b_addr, "bias address")?;
    b.set(Reg::KH, p.kh as u32);
    b.set(Reg::KW, p.kw as u32);
    b.set(Reg::Stride, p.stride as u32);
    b.set(Reg::PadTop, p.pad_top as u32);
    b.set(Reg::PadLeft, p.pad_left as u32);
    set_requant(b, p.requant);
    b.issue(p.op, p.class);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn emit_matmul(
    b: &mut StreamBuilder,
    class: SubgraphKind,
    in_addr: u64,
    features: usize,
    out_addr: u64,
    out_c: usize,
    w_addr: u64,
    b_addr: u64,
) -> Result<()> {
    b.set_wide(Reg::InAddr, in_addr, "input address")?;
    b.set(Reg::InC, features as u32);
    b.set_wide(Reg::OutAddr, out_addr, "output address")?;
    b.set(Reg::OutC, out_c as u32);
    b.set_wide(Reg::WAddr, w_addr, "weight address")?;
    b.set_wide(Reg::BAddr, b_addr, "bias address")?;
    b.issue(Opcode::MatMul, class);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn emit_requant_pass(
    b: &mut StreamBuilder,
    class: SubgraphKind,
    in_addr: u64,
    out_addr: u64,
    count: u64,
    q: QScale,
    lo: i8,
    hi: i8,
) -> Result<()> {
    b.set_wide(Reg::InAddr, in_addr, "input address")?;
    b.set_wide(Reg::OutAddr, out_addr, "output address")?;
    b.set_wide(Reg::ElemCount, count, "element count")?;
    b.set(Reg::ReqM, q.m);
    b.set(Reg::ReqShift, q.s);
    b.set(Reg::ClampLo, encode_i32(lo as i32));
    b.set(Reg::ClampHi, encode_i32(hi as i32));
    b.issue(Opcode::Requant, class);
    Ok(())
}

/// The lane operators share one register shape: addresses, an element count
/// and for leaky relu the slope scale.
#[allow(clippy::too_many_arguments)]
fn emit_lanes(
    b: &mut StreamBuilder,
    op: Opcode,
    class: SubgraphKind,
    in_addr: u64,
    src2_addr: Option<u64>,
    out_addr: u64,
    count: u64,
    slope: Option<QScale>,
) -> Result<()> {
    b.set_wide(Reg::InAddr, in_addr, "input address")?;
    if let Some(a) = src2_addr {
        b.set_wide(Reg::Src2Addr, a, "second input address")?;
    }
    b.set_wide(Reg::OutAddr, out_addr, "output address")?;
    b.set_wide(Reg::ElemCount, count, "element count")?;
    if let Some(q) = slope {
        b.set(Reg::ActM, q.m);
        b.set(Reg::ActS, q.s);
    }
    b.issue(op, class);
    Ok(())
}

struct PoolIssue {
    class: SubgraphKind,
    in_addr: u64,
    in_h: usize,
    in_w: usize,
    channels: usize,
    out_addr: u64,
    out_h: usize,
    out_w: usize,
    avg: Option<QScale>,
    k: usize,
    stride: usize,
}

fn emit_pool(b: &mut StreamBuilder, p: PoolIssue) -> Result<()> {
    b.set_wide(Reg::InAddr, p.in_addr, "input address")?;
    b.set(Reg::InH, p.in_h as u32);
    b.set(Reg::InW, p.in_w as u32);
    b.set(Reg::InC, p.channels as u32);
    b.set_wide(Reg::OutAddr, p.out_addr, "output address")?;
    b.set(Reg::OutH, p.out_h as u32);
    b.set(Reg::OutW, p.out_w as u32);
    b.set(Reg::PoolMode, p.avg.is_some() as u32);
    b.set(Reg::PoolK, p.k as u32);
    b.set(Reg::PoolStride, p.stride as u32);
    let q = p.avg.unwrap_or(QScale { m: 1, s: 0 });
    b.set(Reg::PoolM, q.m);
    b.set(Reg::PoolS, q.s);
    b.issue(Opcode::Pool, p.class);
    Ok(())
}

fn conv_requant(requant: Option<QScale>, fuse_relu: bool) -> Option<(QScale, i8, i8)> {
    requant.map(|q| (q, if fuse_relu { 0 } else { -128 }, 127))
}

struct TileWalk {
    c0: usize,
}

impl TileWalk {
    fn new() -> Self {
        TileWalk { c0: 0 }
    }

    fn next(&mut self, ct: usize) -> usize {
        let c0 = self.c0;
        self.c0 += ct;
        c0
    }
}

fn emit_conv2d_per_op(
    graph: &Graph,
    node: &Node,
    plan: &OpPlan,
    b: &mut StreamBuilder,
) -> Result<()> {
    let NodeKind::Conv2D {
        kh,
        kw,
        stride,
        pad,
        out_channels,
        requant,
        fuse_relu,
    } = node.kind
    else {
        unreachable!()
    };
    let class = node_class(&node.kind);
    let in_desc = graph.tensor(node.inputs[0]);
    let (in_h, in_w, in_c) = dims(graph, node.inputs[0]);
    let (out_h, out_w, _) = dims(graph, node.output);
    let out_elem = graph.tensor(node.output).dtype.size_bytes() as u64;
    let w = node.weight.expect("validated conv has weights");
    let kernel_rows = (kh * kw * in_c) as u64;
    let kernel_len = kernel_rows * out_channels as u64;
    let in_bytes = in_desc.bytes() as u64;
    let op = if fuse_relu {
        Opcode::ConvRelu
    } else {
        Opcode::Conv
    };

    read_contiguous(b, class, node.inputs[0] as u32, 0, 0, in_bytes)?;
    let mut walk = TileWalk::new();
    for &ct in &plan.tiles {
        let c0 = walk.next(ct) as u64;
        let ct64 = ct as u64;
        let w_sram = in_bytes;
        let b_sram = w_sram + kernel_rows * ct64;
        let out_sram = b_sram + 4 * ct64;
        emit_dma(
            b,
            Opcode::DmaRead,
            class,
            WEIGHTS_TENSOR,
            w.offset as u64 + c0,
            w_sram,
            ct64,
            out_channels as u64,
            kernel_rows,
        )?;
        read_contiguous(
            b,
            class,
            WEIGHTS_TENSOR,
            w.offset as u64 + kernel_len + 4 * c0,
            b_sram,
            4 * ct64,
        )?;
        emit_conv(
            b,
            ConvIssue {
                op,
                class,
                in_addr: 0,
                in_h,
                in_w,
                in_c,
                out_addr: out_sram,
                out_h,
                out_w,
                out_c: ct,
                w_addr: w_sram,
                b_addr: b_sram,
                kh,
                kw,
                stride,
                pad_top: pad_before(in_h, kh, stride, pad),
                pad_left: pad_before(in_w, kw, stride, pad),
                requant: conv_requant(requant, fuse_relu),
            },
        )?;
        emit_dma(
            b,
            Opcode::DmaWrite,
            class,
            node.output as u32,
            out_elem * c0,
            out_sram,
            out_elem * ct64,
            out_elem * out_channels as u64,
            (out_h * out_w) as u64,
        )?;
    }
    Ok(())
}

fn emit_dense_per_op(
    graph: &Graph,
    node: &Node,
    plan: &OpPlan,
    b: &mut StreamBuilder,
) -> Result<()> {
    let NodeKind::Dense {
        out_features,
        requant,
    } = node.kind
    else {
        unreachable!()
    };
    let class = node_class(&node.kind);
    let features = graph.tensor(node.inputs[0]).elems() as u64;
    let w = node.weight.expect("validated dense has weights");
    let kernel_len = features * out_features as u64;

    read_contiguous(b, class, node.inputs[0] as u32, 0, 0, features)?;
    let mut walk = TileWalk::new();
    for &ct in &plan.tiles {
        let c0 = walk.next(ct) as u64;
        let ct64 = ct as u64;
        let w_sram = features;
        let b_sram = w_sram + features * ct64;
        let out_sram = b_sram + 4 * ct64;
        emit_dma(
            b,
            Opcode::DmaRead,
            class,
            WEIGHTS_TENSOR,
            w.offset as u64 + c0,
            w_sram,
            ct64,
            out_features as u64,
            features,
        )?;
        read_contiguous(
            b,
            class,
            WEIGHTS_TENSOR,
            w.offset as u64 + kernel_len + 4 * c0,
            b_sram,
            4 * ct64,
        )?;
        emit_matmul(b, class, 0, features as usize, out_sram, ct, w_sram, b_sram)?;
        match requant {
            Some(q) => {
                // Requantize the i32 accumulators in place, then store the
                // narrowed bytes.
                emit_requant_pass(b, class, out_sram, out_sram, ct64, q, -128, 127)?;
                emit_dma(
                    b,
                    Opcode::DmaWrite,
                    class,
                    node.output as u32,
                    c0,
                    out_sram,
                    ct64,
                    out_features as u64,
                    1,
                )?;
            }
            None => {
                emit_dma(
                    b,
                    Opcode::DmaWrite,
                    class,
                    node.output as u32,
                    4 * c0,
                    out_sram,
                    4 * ct64,
                    4 * out_features as u64,
                    1,
                )?;
            }
        }
    }
    Ok(())
}

fn emit_depthwise_per_op(
    graph: &Graph,
    node: &Node,
    plan: &OpPlan,
    dw_mode: DwMode,
    b: &mut StreamBuilder,
) -> Result<()> {
    let NodeKind::DepthwiseConv2D {
        kh,
        kw,
        stride,
        pad,
        requant,
    } = node.kind
    else {
        unreachable!()
    };
    let class = SubgraphKind::Depth;
    let (in_h, in_w, channels) = dims(graph, node.inputs[0]);
    let (out_h, out_w, _) = dims(graph, node.output);
    let out_elem = graph.tensor(node.output).dtype.size_bytes() as u64;
    let w = node.weight.expect("validated depthwise has weights");
    let kernel_len = (kh * kw * channels) as u64;
    let pad_top = pad_before(in_h, kh, stride, pad);
    let pad_left = pad_before(in_w, kw, stride, pad);

    // Native mode runs plan-sized channel tiles through the depthwise unit;
    // emulated mode runs one single-channel convolution per channel.
    let tiles: Vec<usize> = match dw_mode {
        DwMode::Native => plan.tiles.clone(),
        DwMode::Emulated => vec![1; channels],
        DwMode::Fallback => {
            return Err(Error::Codegen(format!(
                "depthwise node '{}' reached codegen in fallback mode",
                node.id
            )))
        }
    };
    let op = if dw_mode == DwMode::Native {
        Opcode::DepthConv
    } else {
        Opcode::Conv
    };

    let mut walk = TileWalk::new();
    for &ct in &tiles {
        let c0 = walk.next(ct) as u64;
        let ct64 = ct as u64;
        let in_slice = (in_h * in_w) as u64 * ct64;
        let w_sram = in_slice;
        let b_sram = w_sram + (kh * kw) as u64 * ct64;
        let out_sram = b_sram + 4 * ct64;
        emit_dma(
            b,
            Opcode::DmaRead,
            class,
            node.inputs[0] as u32,
            c0,
            0,
            ct64,
            channels as u64,
            (in_h * in_w) as u64,
        )?;
        emit_dma(
            b,
            Opcode::DmaRead,
            class,
            WEIGHTS_TENSOR,
            w.offset as u64 + c0,
            w_sram,
            ct64,
            channels as u64,
            (kh * kw) as u64,
        )?;
        read_contiguous(
            b,
            class,
            WEIGHTS_TENSOR,
            w.offset as u64 + kernel_len + 4 * c0,
            b_sram,
            4 * ct64,
        )?;
        emit_conv(
            b,
            ConvIssue {
                op,
                class,
                in_addr: 0,
                in_h,
                in_w,
                in_c: ct,
                out_addr: out_sram,
                out_h,
                out_w,
                out_c: ct,
                w_addr: w_sram,
                b_addr: b_sram,
                kh,
                kw,
                stride,
                pad_top,
                pad_left,
                requant: conv_requant(requant, false),
            },
        )?;
        emit_dma(
            b,
            Opcode::DmaWrite,
            class,
            node.output as u32,
            out_elem * c0,
            out_sram,
            out_elem * ct64,
            out_elem * channels as u64,
            (out_h * out_w) as u64,
        )?;
    }
    Ok(())
}

fn lane_opcode(kind: &NodeKind) -> Option<Opcode> {
    match kind {
        NodeKind::Requantize { .. } => Some(Opcode::Requant),
        NodeKind::Relu => Some(Opcode::ActRelu),
        NodeKind::LeakyRelu { .. } => Some(Opcode::ActLrelu),
        NodeKind::EwAbs => Some(Opcode::EAbs),
        NodeKind::EwAdd => Some(Opcode::EAdd),
        NodeKind::EwAdd32 => Some(Opcode::E32Add),
        NodeKind::EwMin => Some(Opcode::CMin),
        NodeKind::EwMax => Some(Opcode::CMax),
        _ => None,
    }
}

fn emit_lane_per_op(
    graph: &Graph,
    node: &Node,
    plan: &OpPlan,
    b: &mut StreamBuilder,
) -> Result<()> {
    let op = lane_opcode(&node.kind).expect("caller dispatched a lane operator");
    let class = node_class(&node.kind);
    let out_desc = graph.tensor(node.output);
    let (h, w, channels) = dims(graph, node.output);
    let sp = (h * w) as u64;
    let out_elem = out_desc.dtype.size_bytes() as u64;

    let mut walk = TileWalk::new();
    for &ct in &plan.tiles {
        let c0 = walk.next(ct) as u64;
        let ct64 = ct as u64;
        let mut cursor = 0u64;
        let mut in_addrs = Vec::with_capacity(node.inputs.len());
        for &t in &node.inputs {
            let elem = graph.tensor(t).dtype.size_bytes() as u64;
            emit_dma(
                b,
                Opcode::DmaRead,
                class,
                t as u32,
                elem * c0,
                cursor,
                elem * ct64,
                elem * channels as u64,
                sp,
            )?;
            in_addrs.push(cursor);
            cursor += elem * sp * ct64;
        }
        let out_addr = cursor;
        let count = sp * ct64;
        match &node.kind {
            NodeKind::Requantize {
                q,
                clamp_lo,
                clamp_hi,
                ..
            } => {
                emit_requant_pass(
                    b,
                    class,
                    in_addrs[0],
                    out_addr,
                    count,
                    *q,
                    *clamp_lo,
                    *clamp_hi,
                )?;
            }
            NodeKind::LeakyRelu { slope } => {
                emit_lanes(
                    b,
                    op,
                    class,
                    in_addrs[0],
                    None,
                    out_addr,
                    count,
                    Some(*slope),
                )?;
            }
            _ => {
                emit_lanes(
                    b,
                    op,
                    class,
                    in_addrs[0],
                    in_addrs.get(1).copied(),
                    out_addr,
                    count,
                    None,
                )?;
            }
        }
        emit_dma(
            b,
            Opcode::DmaWrite,
            class,
            node.output as u32,
            out_elem * c0,
            out_addr,
            out_elem * ct64,
            out_elem * channels as u64,
            sp,
        )?;
    }
    Ok(())
}

fn emit_pool_per_op(
    graph: &Graph,
    node: &Node,
    plan: &OpPlan,
    b: &mut StreamBuilder,
) -> Result<()> {
    let (k, stride, avg) = match node.kind {
        NodeKind::MaxPool { k, stride } => (k, stride, None),
        NodeKind::AvgPool { k, stride, divisor } => (k, stride, Some(divisor)),
        _ => unreachable!(),
    };
    let class = node_class(&node.kind);
    let (in_h, in_w, channels) = dims(graph, node.inputs[0]);
    let (out_h, out_w, _) = dims(graph, node.output);
    let sp_in = (in_h * in_w) as u64;
    let sp_out = (out_h * out_w) as u64;

    let mut walk = TileWalk::new();
    for &ct in &plan.tiles {
        let c0 = walk.next(ct) as u64;
        let ct64 = ct as u64;
        let out_addr = sp_in * ct64;
        emit_dma(
            b,
            Opcode::DmaRead,
            class,
            node.inputs[0] as u32,
            c0,
            0,
            ct64,
            channels as u64,
            sp_in,
        )?;
        emit_pool(
            b,
            PoolIssue {
                class,
                in_addr: 0,
                in_h,
                in_w,
                channels: ct,
                out_addr,
                out_h,
                out_w,
                avg,
                k,
                stride,
            },
        )?;
        emit_dma(
            b,
            Opcode::DmaWrite,
            class,
            node.output as u32,
            c0,
            out_addr,
            ct64,
            channels as u64,
            sp_out,
        )?;
    }
    Ok(())
}

fn emit_per_op(
    graph: &Graph,
    plan: &OpPlan,
    variant: &IsaVariant,
    b: &mut StreamBuilder,
) -> Result<()> {
    let node = &graph.nodes[plan.node];
    match &node.kind {
        NodeKind::Conv2D { .. } => emit_conv2d_per_op(graph, node, plan, b),
        NodeKind::Dense { .. } => emit_dense_per_op(graph, node, plan, b),
        NodeKind::DepthwiseConv2D { .. } => {
            emit_depthwise_per_op(graph, node, plan, variant.dw_mode, b)
        }
        NodeKind::MaxPool { .. } | NodeKind::AvgPool { .. } => {
            emit_pool_per_op(graph, node, plan, b)
        }
        _ => emit_lane_per_op(graph, node, plan, b),
    }
}

/// SRAM layout and code for a fully resident region: tensors first (inputs,
/// then node outputs in order), weight blobs after.
fn emit_resident(graph: &Graph, sg: &Subgraph, b: &mut StreamBuilder) -> Result<()> {
    let mut cursor = 0u64;
    let mut t_off: BTreeMap<TensorId, u64> = BTreeMap::new();
    for &t in &sg.inputs {
        t_off.insert(t, cursor);
        cursor += graph.tensor(t).bytes() as u64;
    }
    for &i in &sg.nodes {
        t_off.insert(graph.nodes[i].output, cursor);
        cursor += resident_out_bytes(graph, i);
    }
    let mut w_off: BTreeMap<usize, u64> = BTreeMap::new();
    for &i in &sg.nodes {
        if let Some(w) = graph.nodes[i].weight {
            w_off.insert(i, cursor);
            cursor += w.len as u64;
        }
    }

    for &t in &sg.inputs {
        read_contiguous(
            b,
            sg.kind,
            t as u32,
            0,
            t_off[&t],
            graph.tensor(t).bytes() as u64,
        )?;
    }
    for (&i, &off) in &w_off {
        let w = graph.nodes[i].weight.unwrap();
        read_contiguous(
            b,
            sg.kind,
            WEIGHTS_TENSOR,
            w.offset as u64,
            off,
            w.len as u64,
        )?;
    }

    for &i in &sg.nodes {
        let node = &graph.nodes[i];
        let class = node_class(&node.kind);
        let in_addr = |slot: usize| t_off[&node.inputs[slot]];
        let out_addr = t_off[&node.output];
        match &node.kind {
            NodeKind::Conv2D {
                kh,
                kw,
                stride,
                pad,
                out_channels,
                requant,
                fuse_relu,
            } => {
                let (in_h, in_w, in_c) = dims(graph, node.inputs[0]);
                let (out_h, out_w, _) = dims(graph, node.output);
                let w_addr = w_off[&i];
                emit_conv(
                    b,
                    ConvIssue {
                        op: if *fuse_relu {
                            Opcode::ConvRelu
                        } else {
                            Opcode::Conv
                        },
                        class,
                        in_addr: in_addr(0),
                        in_h,
                        in_w,
                        in_c,
                        out_addr,
                        out_h,
                        out_w,
                        out_c: *out_channels,
                        w_addr,
                        b_addr: w_addr + (kh * kw * in_c * out_channels) as u64,
                        kh: *kh,
                        kw: *kw,
                        stride: *stride,
                        pad_top: pad_before(in_h, *kh, *stride, *pad),
                        pad_left: pad_before(in_w, *kw, *stride, *pad),
                        requant: conv_requant(*requant, *fuse_relu),
                    },
                )?;
            }
            NodeKind::DepthwiseConv2D {
                kh,
                kw,
                stride,
                pad,
                requant,
            } => {
                let (in_h, in_w, channels) = dims(graph, node.inputs[0]);
                let (out_h, out_w, _) = dims(graph, node.output);
                let w_addr = w_off[&i];
                emit_conv(
                    b,
                    ConvIssue {
                        op: Opcode::DepthConv,
                        class,
                        in_addr: in_addr(0),
                        in_h,
                        in_w,
                        in_c: channels,
                        out_addr,
                        out_h,
                        out_w,
                        out_c: channels,
                        w_addr,
                        b_addr: w_addr + (kh * kw * channels) as u64,
                        kh: *kh,
                        kw: *kw,
                        stride: *stride,
                        pad_top: pad_before(in_h, *kh, *stride, *pad),
                        pad_left: pad_before(in_w, *kw, *stride, *pad),
                        requant: conv_requant(*requant, false),
                    },
                )?;
            }
            NodeKind::Dense {
                out_features,
                requant,
            } => {
                let features = graph.tensor(node.inputs[0]).elems();
                let w_addr = w_off[&i];
                emit_matmul(
                    b,
                    class,
                    in_addr(0),
                    features,
                    out_addr,
                    *out_features,
                    w_addr,
                    w_addr + (features * out_features) as u64,
                )?;
                if let Some(q) = requant {
                    emit_requant_pass(
                        b,
                        class,
                        out_addr,
                        out_addr,
                        *out_features as u64,
                        *q,
                        -128,
                        127,
                    )?;
                }
            }
            NodeKind::Requantize {
                q,
                clamp_lo,
                clamp_hi,
                ..
            } => {
                let count = graph.tensor(node.output).elems() as u64;
                emit_requant_pass(
                    b,
                    class,
                    in_addr(0),
                    out_addr,
                    count,
                    *q,
                    *clamp_lo,
                    *clamp_hi,
                )?;
            }
            NodeKind::MaxPool { k, stride } | NodeKind::AvgPool { k, stride, .. } => {
                let avg = match node.kind {
                    NodeKind::AvgPool { divisor, .. } => Some(divisor),
                    _ => None,
                };
                let (in_h, in_w, channels) = dims(graph, node.inputs[0]);
                let (out_h, out_w, _) = dims(graph, node.output);
                emit_pool(
                    b,
                    PoolIssue {
                        class,
                        in_addr: in_addr(0),
                        in_h,
                        in_w,
                        channels,
                        out_addr,
                        out_h,
                        out_w,
                        avg,
                        k: *k,
                        stride: *stride,
                    },
                )?;
            }
            other => {
                let op = lane_opcode(other).expect("remaining operators are lane ops");
                let count = graph.tensor(node.output).elems() as u64;
                let src2 = (node.inputs.len() > 1).then(|| in_addr(1));
                let slope = match other {
                    NodeKind::LeakyRelu { slope } => Some(*slope),
                    _ => None,
                };
                emit_lanes(b, op, class, in_addr(0), src2, out_addr, count, slope)?;
            }
        }
    }

    for &t in &sg.outputs {
        write_contiguous(
            b,
            sg.kind,
            t as u32,
            0,
            t_off[&t],
            graph.tensor(t).bytes() as u64,
        )?;
    }
    Ok(())
}

/// Lower one planned subgraph to a command stream for `variant`.
pub fn generate_command_stream(
    graph: &Graph,
    sg: &Subgraph,
    plan: &SubgraphPlan,
    variant: &IsaVariant,
) -> Result<CommandStream> {
    variant.validate()?;
    let mut b = StreamBuilder::new();
    match plan {
        SubgraphPlan::Resident { .. } => emit_resident(graph, sg, &mut b)?,
        SubgraphPlan::PerOp { ops } => {
            for op in ops {
                emit_per_op(graph, op, variant, &mut b)?;
            }
        }
    }
    Ok(CommandStream {
        variant: *variant,
        subgraph_id: sg.id,
        kind: sg.kind,
        units: b.units,
    })
}
