//! Partitioning. Walks the (topologically ordered) node list, tags each node
//! as device-supported or not, and greedily merges maximal runs of supported
//! nodes into subgraphs. Barrier requantize nodes cut runs and become
//! single-node REQUANT subgraphs so downstream stages see a stable quantized
//! tensor at every barrier.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeKind, TensorId};

/// How depthwise convolutions are handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DwMode {
    /// Run depthwise nodes on the host CPU.
    Fallback,
    /// Lower each channel to a 1-channel dense convolution on the device.
    Emulated,
    /// Use the dedicated depthwise opcode.
    Native,
}

impl fmt::Display for DwMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DwMode::Fallback => "fallback",
            DwMode::Emulated => "emulated",
            DwMode::Native => "native",
        })
    }
}

impl FromStr for DwMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fallback" => Ok(DwMode::Fallback),
            "emulated" => Ok(DwMode::Emulated),
            "native" => Ok(DwMode::Native),
            other => Err(Error::Model(format!(
                "unknown depthwise mode '{other}' (expected fallback, emulated or native)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BarrierMode {
    On,
    Off,
}

impl fmt::Display for BarrierMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BarrierMode::On => "on",
            BarrierMode::Off => "off",
        })
    }
}

impl FromStr for BarrierMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "on" => Ok(BarrierMode::On),
            "off" => Ok(BarrierMode::Off),
            other => Err(Error::Model(format!(
                "unknown barrier mode '{other}' (expected on or off)"
            ))),
        }
    }
}

/// Dominant workload class of a subgraph; drives tiling and reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SubgraphKind {
    #[serde(rename = "CONV")]
    Conv,
    #[serde(rename = "DEPTH")]
    Depth,
    #[serde(rename = "REQUANT")]
    Requant,
    #[serde(rename = "OTHER")]
    Other,
}

impl fmt::Display for SubgraphKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SubgraphKind::Conv => "CONV",
            SubgraphKind::Depth => "DEPTH",
            SubgraphKind::Requant => "REQUANT",
            SubgraphKind::Other => "OTHER",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subgraph {
    pub id: u32,
    pub kind: SubgraphKind,
    /// Indices into `graph.nodes`, ascending.
    pub nodes: Vec<usize>,
    /// Tensors consumed from outside the subgraph (graph inputs or other units).
    pub inputs: Vec<TensorId>,
    /// Tensors that must survive the subgraph: consumed elsewhere or graph outputs.
    pub outputs: Vec<TensorId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "unit", content = "index", rename_all = "lowercase")]
pub enum ScheduleUnit {
    /// Subgraph id to run on the device.
    Accel(u32),
    /// Node index to run on the host.
    Cpu(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionedGraph {
    pub subgraphs: Vec<Subgraph>,
    pub cpu_nodes: Vec<usize>,
    pub schedule: Vec<ScheduleUnit>,
    pub barrier_mode: BarrierMode,
    pub dw_mode: DwMode,
}

/// Per-node device support under the given depthwise mode. Every operator in
/// the IR has a device lowering except depthwise convolution in fallback mode.
pub fn annotate(graph: &Graph, dw_mode: DwMode) -> Vec<bool> {
    graph
        .nodes
        .iter()
        .map(|n| match n.kind {
            NodeKind::DepthwiseConv2D { .. } => dw_mode != DwMode::Fallback,
            _ => true,
        })
        .collect()
}

/// Workload class of a single operator; subgraphs take the strongest class
/// among their members (`Conv` over `Depth` over `Requant` over `Other`).
pub fn node_class(kind: &NodeKind) -> SubgraphKind {
    match kind {
        NodeKind::Conv2D { .. } | NodeKind::Dense { .. } => SubgraphKind::Conv,
        NodeKind::DepthwiseConv2D { .. } => SubgraphKind::Depth,
        NodeKind::Requantize { .. } => SubgraphKind::Requant,
        _ => SubgraphKind::Other,
    }
}

fn region_kind(graph: &Graph, nodes: &[usize]) -> SubgraphKind {
    nodes
        .iter()
        .map(|&i| node_class(&graph.nodes[i].kind))
        .min()
        .expect("regions are never empty")
}

fn boundary(graph: &Graph, nodes: &[usize]) -> (Vec<TensorId>, Vec<TensorId>) {
    let members: BTreeSet<usize> = nodes.iter().copied().collect();
    let produced: BTreeSet<TensorId> = nodes.iter().map(|&i| graph.nodes[i].output).collect();
    let mut inputs = BTreeSet::new();
    for &i in nodes {
        for &t in &graph.nodes[i].inputs {
            if !produced.contains(&t) {
                inputs.insert(t);
            }
        }
    }
    let graph_outputs: BTreeSet<TensorId> = graph.outputs.iter().copied().collect();
    let mut outputs = BTreeSet::new();
    for &t in &produced {
        let consumed_outside = graph
            .nodes
            .iter()
            .enumerate()
            .any(|(j, n)| !members.contains(&j) && n.inputs.contains(&t));
        if consumed_outside || graph_outputs.contains(&t) {
            outputs.insert(t);
        }
    }
    (inputs.into_iter().collect(), outputs.into_iter().collect())
}

/// Split the graph into device subgraphs and CPU nodes. `supported` comes
/// from [`annotate`]. The node list is walked in order, so every subgraph is
/// a contiguous index range and the resulting schedule is trivially a valid
/// topological order of the quotient graph.
pub fn partition(
    graph: &Graph,
    supported: &[bool],
    barrier_mode: BarrierMode,
    dw_mode: DwMode,
) -> PartitionedGraph {
    assert_eq!(supported.len(), graph.nodes.len());
    let mut subgraphs: Vec<Subgraph> = Vec::new();
    let mut cpu_nodes: Vec<usize> = Vec::new();
    let mut schedule: Vec<ScheduleUnit> = Vec::new();
    let mut run: Vec<usize> = Vec::new();

    let flush =
        |run: &mut Vec<usize>, subgraphs: &mut Vec<Subgraph>, schedule: &mut Vec<ScheduleUnit>| {
            if run.is_empty() {
                return;
            }
            let nodes = std::mem::take(run);
            let (inputs, outputs) = boundary(graph, &nodes);
            let id = subgraphs.len() as u32;
            subgraphs.push(Subgraph {
                id,
                kind: region_kind(graph, &nodes),
                nodes,
                inputs,
                outputs,
            });
            schedule.push(ScheduleUnit::Accel(id));
        };

    for (i, node) in graph.nodes.iter().enumerate() {
        if !supported[i] {
            flush(&mut run, &mut subgraphs, &mut schedule);
            cpu_nodes.push(i);
            schedule.push(ScheduleUnit::Cpu(i));
            continue;
        }
        if barrier_mode == BarrierMode::On && node.kind.is_barrier_requant() {
            flush(&mut run, &mut subgraphs, &mut schedule);
            run.push(i);
            flush(&mut run, &mut subgraphs, &mut schedule);
            continue;
        }
        run.push(i);
    }
    flush(&mut run, &mut subgraphs, &mut schedule);

    PartitionedGraph {
        subgraphs,
        cpu_nodes,
        schedule,
        barrier_mode,
        dw_mode,
    }
}

/// End-to-end convenience: annotate then partition.
pub fn partition_graph(
    graph: &Graph,
    barrier_mode: BarrierMode,
    dw_mode: DwMode,
) -> PartitionedGraph {
    let supported = annotate(graph, dw_mode);
    partition(graph, &supported, barrier_mode, dw_mode)
}

/// Structural checks on a partition: full disjoint coverage of the node list,
/// per-subgraph ordering and boundary correctness, the barrier invariant, and
/// schedulability (every unit only reads tensors produced earlier).
pub fn verify_partition(graph: &Graph, pg: &PartitionedGraph) -> Result<()> {
    let mut owner: Vec<Option<String>> = vec![None; graph.nodes.len()];
    let mut claim = |idx: usize, who: String| -> Result<()> {
        if idx >= owner.len() {
            return Err(Error::Model(format!(
                "{who} references node index {idx} out of range"
            )));
        }
        if let Some(prev) = &owner[idx] {
            return Err(Error::Model(format!(
                "node '{}' assigned to both {prev} and {who}",
                graph.nodes[idx].id
            )));
        }
        owner[idx] = Some(who);
        Ok(())
    };

    for sg in &pg.subgraphs {
        if sg.nodes.is_empty() {
            return Err(Error::Model(format!("subgraph {} is empty", sg.id)));
        }
        if !sg.nodes.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Model(format!(
                "subgraph {} nodes are not in ascending order",
                sg.id
            )));
        }
        for &i in &sg.nodes {
            claim(i, format!("subgraph {}", sg.id))?;
        }
        if sg.kind != region_kind(graph, &sg.nodes) {
            return Err(Error::Model(format!(
                "subgraph {} kind does not match its nodes",
                sg.id
            )));
        }
        let (inputs, outputs) = boundary(graph, &sg.nodes);
        if inputs != sg.inputs || outputs != sg.outputs {
            return Err(Error::Model(format!(
                "subgraph {} boundary tensors are stale",
                sg.id
            )));
        }
        if pg.barrier_mode == BarrierMode::On {
            let has_barrier = sg
                .nodes
                .iter()
                .any(|&i| graph.nodes[i].kind.is_barrier_requant());
            if has_barrier && (sg.nodes.len() != 1 || sg.kind != SubgraphKind::Requant) {
                return Err(Error::Model(format!(
                    "subgraph {} mixes a barrier requantize with other work",
                    sg.id
                )));
            }
        }
    }
    for &i in &pg.cpu_nodes {
        claim(i, "cpu fallback".into())?;
    }
    if let Some(idx) = owner.iter().position(|o| o.is_none()) {
        return Err(Error::Model(format!(
            "node '{}' is not covered by the partition",
            graph.nodes[idx].id
        )));
    }

    let mut scheduled_sg = vec![false; pg.subgraphs.len()];
    let mut scheduled_cpu: BTreeSet<usize> = BTreeSet::new();
    let mut available: BTreeSet<TensorId> = graph.inputs.iter().copied().collect();
    for unit in &pg.schedule {
        let (inputs, outputs): (Vec<TensorId>, Vec<TensorId>) = match *unit {
            ScheduleUnit::Accel(id) => {
                let sg = pg.subgraphs.get(id as usize).ok_or_else(|| {
                    Error::Model(format!("schedule references unknown subgraph {id}"))
                })?;
                if std::mem::replace(&mut scheduled_sg[id as usize], true) {
                    return Err(Error::Model(format!("subgraph {id} scheduled twice")));
                }
                (
                    sg.inputs.clone(),
                    sg.nodes.iter().map(|&i| graph.nodes[i].output).collect(),
                )
            }
            ScheduleUnit::Cpu(idx) => {
                if !pg.cpu_nodes.contains(&idx) {
                    return Err(Error::Model(format!(
                        "schedule runs node index {idx} which is not a cpu node"
                    )));
                }
                if !scheduled_cpu.insert(idx) {
                    return Err(Error::Model(format!(
                        "cpu node index {idx} scheduled twice"
                    )));
                }
                (
                    graph.nodes[idx].inputs.clone(),
                    vec![graph.nodes[idx].output],
                )
            }
        };
        for t in inputs {
            if !available.contains(&t) {
                return Err(Error::Model(format!(
                    "schedule reads tensor '{}' before it is produced",
                    graph.tensor(t).name
                )));
            }
        }
        available.extend(outputs);
    }
    if !scheduled_sg.iter().all(|&s| s) || scheduled_cpu.len() != pg.cpu_nodes.len() {
        return Err(Error::Model("schedule does not cover every unit".into()));
    }
    for &t in &graph.outputs {
        if !available.contains(&t) {
            return Err(Error::Model(format!(
                "graph output '{}' is never produced",
                graph.tensor(t).name
            )));
        }
    }
    Ok(())
}
