//! SRAM planning. Decides, per subgraph, whether the whole region fits in
//! device SRAM at once or must run op by op, and for the op-by-op path picks
//! the output-channel tile size for every node.
//!
//! The footprint model mirrors what codegen actually lays out:
//! * convolution and dense keep their entire input resident (every output
//!   channel reads all of it) plus weights, bias and output for the channels
//!   of one tile;
//! * depthwise and the per-element operators touch each channel
//!   independently, so only the channel slices of one tile are resident and
//!   the input can be streamed in per tile.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeKind};
use crate::isa::IsaVariant;
use crate::partition::Subgraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FootprintTerms {
    /// Bytes resident regardless of tile size (the full input map, or 0 for
    /// channel-sliced operators).
    pub base: u64,
    /// Bytes per output channel in a tile: weights, bias, input slices and
    /// output slice.
    pub per_channel: u64,
    /// Extent of the tiled axis.
    pub channels: usize,
}

impl FootprintTerms {
    pub fn bytes_at(&self, c_t: usize) -> u64 {
        self.base + self.per_channel * c_t as u64
    }
}

fn spatial(shape: &[usize]) -> u64 {
    (shape[1] * shape[2]) as u64
}

/// Footprint terms for one node. Panics on unshaped graphs; callers validate
/// first.
pub fn footprint_terms(graph: &Graph, node_idx: usize) -> FootprintTerms {
    let node = &graph.nodes[node_idx];
    let in0 = graph.tensor(node.inputs[0]);
    let out = graph.tensor(node.output);
    let out_elem = out.dtype.size_bytes() as u64;
    match &node.kind {
        NodeKind::Conv2D {
            kh,
            kw,
            out_channels,
            ..
        } => FootprintTerms {
            base: in0.bytes() as u64,
            per_channel: (kh * kw * in0.shape[3]) as u64 + 4 + out_elem * spatial(&out.shape),
            channels: *out_channels,
        },
        // Dense always stages i32 accumulators: a fused requantize runs as a
        // second pass over them in place, so the output slot is 4 bytes per
        // feature either way.
        NodeKind::Dense { out_features, .. } => FootprintTerms {
            base: in0.bytes() as u64,
            per_channel: in0.elems() as u64 + 4 + 4,
            channels: *out_features,
        },
        NodeKind::DepthwiseConv2D { kh, kw, .. } => FootprintTerms {
            base: 0,
            per_channel: spatial(&in0.shape)
                + (kh * kw) as u64
                + 4
                + out_elem * spatial(&out.shape),
            channels: in0.shape[3],
        },
        _ => {
            let in_bytes: u64 = node
                .inputs
                .iter()
                .map(|&t| {
                    let d = graph.tensor(t);
                    d.dtype.size_bytes() as u64 * spatial(&d.shape)
                })
                .sum();
            FootprintTerms {
                base: 0,
                per_channel: in_bytes + out_elem * spatial(&out.shape),
                channels: out.shape[3],
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpPlan {
    /// Index into `graph.nodes`.
    pub node: usize,
    /// Output channels per full tile.
    pub c_t: usize,
    /// Channel count of every tile; sums to the node's channel extent.
    pub tiles: Vec<usize>,
    /// SRAM bytes resident while a full tile runs.
    pub peak_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum SubgraphPlan {
    /// Every tensor and weight of the region fits at once: load inputs and
    /// weights, run all nodes SRAM to SRAM, store the boundary outputs.
    Resident { footprint: u64 },
    /// Run node by node, spilling intermediates to system memory and tiling
    /// each node along its output channels.
    PerOp { ops: Vec<OpPlan> },
}

/// Choose the largest feasible tile for one node. Tiles of at least one PE
/// group are rounded down to a multiple of the PE count so full tiles keep
/// every lane busy; the remainder lands in the last tile.
pub fn plan_op(graph: &Graph, node_idx: usize, variant: &IsaVariant) -> Result<OpPlan> {
    let terms = footprint_terms(graph, node_idx);
    let budget = variant.sram_bytes;
    if terms.bytes_at(1) > budget {
        return Err(Error::InsufficientSram {
            op: graph.nodes[node_idx].id.clone(),
            needed: terms.bytes_at(1),
            budget,
        });
    }
    let mut c_t = ((budget - terms.base) / terms.per_channel) as usize;
    c_t = c_t.min(terms.channels);
    // When the op must be split, align the tile to the PE width so partial
    // groups don't inflate ceil(c_t/P) sums (129-channel tiles on 128 PEs
    // would cost like 256). An op that fits whole stays a single tile.
    let p = variant.pe_count as usize;
    if c_t < terms.channels && c_t >= p {
        c_t -= c_t % p;
    }
    let mut tiles = vec![c_t; terms.channels / c_t];
    if !terms.channels.is_multiple_of(c_t) {
        tiles.push(terms.channels % c_t);
    }
    Ok(OpPlan {
        node: node_idx,
        c_t,
        tiles,
        peak_bytes: terms.bytes_at(c_t),
    })
}

/// SRAM bytes a node's output occupies when its whole region is resident.
/// Dense keeps i32 accumulators even under a fused requantize (see
/// [`footprint_terms`]), everything else is just the tensor.
pub fn resident_out_bytes(graph: &Graph, node_idx: usize) -> u64 {
    let node = &graph.nodes[node_idx];
    let out = graph.tensor(node.output);
    match node.kind {
        NodeKind::Dense { .. } => 4 * out.elems() as u64,
        _ => out.bytes() as u64,
    }
}

/// Bytes needed to keep a whole region resident: every tensor touched by its
/// nodes plus their weight blobs.
pub fn region_resident_footprint(graph: &Graph, nodes: &[usize]) -> u64 {
    let produced: std::collections::BTreeMap<usize, usize> =
        nodes.iter().map(|&i| (graph.nodes[i].output, i)).collect();
    let mut tensors = std::collections::BTreeSet::new();
    let mut weights = 0u64;
    for &i in nodes {
        let n = &graph.nodes[i];
        tensors.extend(n.inputs.iter().copied());
        tensors.insert(n.output);
        weights += n.weight.map_or(0, |w| w.len as u64);
    }
    tensors
        .iter()
        .map(|&t| match produced.get(&t) {
            Some(&i) => resident_out_bytes(graph, i),
            None => graph.tensor(t).bytes() as u64,
        })
        .sum::<u64>()
        + weights
}

pub fn plan_subgraph(graph: &Graph, sg: &Subgraph, variant: &IsaVariant) -> Result<SubgraphPlan> {
    // Emulated depthwise runs channel by channel, streaming each channel's
    // slice through SRAM, so those regions always take the per-op path.
    let emulated_dw = variant.dw_mode == crate::partition::DwMode::Emulated
        && sg
            .nodes
            .iter()
            .any(|&i| matches!(graph.nodes[i].kind, NodeKind::DepthwiseConv2D { .. }));
    let footprint = region_resident_footprint(graph, &sg.nodes);
    if !emulated_dw && footprint <= variant.sram_bytes {
        return Ok(SubgraphPlan::Resident { footprint });
    }
    let ops = sg
        .nodes
        .iter()
        .map(|&i| plan_op(graph, i, variant))
        .collect::<Result<Vec<_>>>()?;
    Ok(SubgraphPlan::PerOp { ops })
}
