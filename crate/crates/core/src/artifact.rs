//! Compiled-model bundles.
//!
//! `compile` runs the whole pipeline (partition, plan, codegen, static
//! validation) in memory; `write_artifact` / `load_artifact` move the result
//! to and from a self-contained directory:
//!
//! ```text
//! <dir>/model.json          the graph
//! <dir>/weights.bin         packed weights
//! <dir>/partition.json      subgraphs, fallback nodes, schedule
//! <dir>/plan.json           per-subgraph SRAM plans
//! <dir>/streams/NNN.json    one command stream per subgraph
//! <dir>/manifest.json       variant, counts, static metrics
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codegen::generate_command_stream;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::isa::{CommandStream, IsaVariant};
use crate::model::{load_model, save_model};
use crate::partition::{partition_graph, verify_partition, BarrierMode, PartitionedGraph};
use crate::plan::{plan_subgraph, SubgraphPlan};
use crate::sim::{cost_stream, Metrics};

pub const PARTITION_FILE: &str = "partition.json";
pub const PLAN_FILE: &str = "plan.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const STREAM_DIR: &str = "streams";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub model: String,
    pub variant: IsaVariant,
    pub subgraphs: usize,
    pub cpu_nodes: usize,
    /// Static cost of every stream, summed; a run reproduces these numbers.
    pub static_metrics: Metrics,
}

#[derive(Debug)]
pub struct CompiledModel {
    pub graph: Graph,
    pub variant: IsaVariant,
    pub partition: PartitionedGraph,
    pub plans: Vec<SubgraphPlan>,
    pub streams: Vec<CommandStream>,
    pub manifest: Manifest,
}

/// Partition, plan and generate command streams for `graph` on `variant`.
/// Every stream is validated and priced before this returns.
pub fn compile(
    graph: &Graph,
    variant: &IsaVariant,
    barriers: BarrierMode,
) -> Result<CompiledModel> {
    variant.validate()?;
    graph.validate()?;
    let partition = partition_graph(graph, barriers, variant.dw_mode);
    verify_partition(graph, &partition)?;

    let mut plans = Vec::with_capacity(partition.subgraphs.len());
    let mut streams = Vec::with_capacity(partition.subgraphs.len());
    let mut static_metrics = Metrics::default();
    for sg in &partition.subgraphs {
        let plan = plan_subgraph(graph, sg, variant)?;
        let stream = generate_command_stream(graph, sg, &plan, variant)?;
        static_metrics.merge(&cost_stream(&stream)?);
        plans.push(plan);
        streams.push(stream);
    }

    let manifest = Manifest {
        model: graph.name.clone(),
        variant: *variant,
        subgraphs: partition.subgraphs.len(),
        cpu_nodes: partition.cpu_nodes.len(),
        static_metrics,
    };
    Ok(CompiledModel {
        graph: graph.clone(),
        variant: *variant,
        partition,
        plans,
        streams,
        manifest,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_artifact(dir: &Path, compiled: &CompiledModel) -> Result<()> {
    fs::create_dir_all(dir.join(STREAM_DIR))?;
    save_model(&compiled.graph, dir)?;
    write_json(&dir.join(PARTITION_FILE), &compiled.partition)?;
    write_json(&dir.join(PLAN_FILE), &compiled.plans)?;
    for stream in &compiled.streams {
        let name = format!("{:03}.json", stream.subgraph_id);
        write_json(&dir.join(STREAM_DIR).join(name), stream)?;
    }
    write_json(&dir.join(MANIFEST_FILE), &compiled.manifest)?;
    Ok(())
}

pub fn load_artifact(dir: &Path) -> Result<CompiledModel> {
    let graph = load_model(dir)?;
    let partition: PartitionedGraph = read_json(&dir.join(PARTITION_FILE))?;
    let plans: Vec<SubgraphPlan> = read_json(&dir.join(PLAN_FILE))?;
    let manifest: Manifest = read_json(&dir.join(MANIFEST_FILE))?;
    verify_partition(&graph, &partition)?;
    if plans.len() != partition.subgraphs.len() {
        return Err(Error::Model(format!(
            "{} plans for {} subgraphs",
            plans.len(),
            partition.subgraphs.len()
        )));
    }
    let mut streams = Vec::with_capacity(partition.subgraphs.len());
    for sg in &partition.subgraphs {
        let name = format!("{:03}.json", sg.id);
        let stream: CommandStream = read_json(&dir.join(STREAM_DIR).join(name))?;
        if stream.subgraph_id != sg.id {
            return Err(Error::Model(format!(
                "stream file for subgraph {} holds subgraph {}",
                sg.id, stream.subgraph_id
            )));
        }
        streams.push(stream);
    }
    let variant = manifest.variant;
    Ok(CompiledModel {
        graph,
        variant,
        partition,
        plans,
        streams,
        manifest,
    })
}
