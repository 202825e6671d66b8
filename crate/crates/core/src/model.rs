//! On-disk model format: `model.json` describing tensors and nodes by name,
//! next to `weights.bin` holding the raw little-endian blob.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Node, NodeKind, TensorDesc, WeightRef};

#[derive(Serialize, Deserialize)]
struct ModelJson {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    name: String,
    tensors: Vec<TensorDesc>,
    nodes: Vec<NodeJson>,
    inputs: Vec<String>,
    outputs: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct NodeJson {
    id: String,
    #[serde(flatten)]
    kind: NodeKind,
    inputs: Vec<String>,
    output: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weight: Option<WeightRef>,
}

pub const MODEL_FILE: &str = "model.json";
pub const WEIGHTS_FILE: &str = "weights.bin";

/// Load a model directory. Nodes may appear in any order in the file; they
/// are stably topo-sorted before validation.
pub fn load_model(dir: &Path) -> Result<Graph> {
    let json = std::fs::read_to_string(dir.join(MODEL_FILE)).map_err(|e| {
        Error::Model(format!(
            "cannot read {}: {e}",
            dir.join(MODEL_FILE).display()
        ))
    })?;
    let weights = std::fs::read(dir.join(WEIGHTS_FILE)).map_err(|e| {
        Error::Model(format!(
            "cannot read {}: {e}",
            dir.join(WEIGHTS_FILE).display()
        ))
    })?;
    model_from_json(&json, weights)
}

pub fn model_from_json(json: &str, weights: Vec<u8>) -> Result<Graph> {
    let m: ModelJson =
        serde_json::from_str(json).map_err(|e| Error::Model(format!("model.json: {e}")))?;

    let mut by_name: HashMap<&str, usize> = HashMap::new();
    for (i, td) in m.tensors.iter().enumerate() {
        if by_name.insert(td.name.as_str(), i).is_some() {
            return Err(Error::Model(format!("duplicate tensor name '{}'", td.name)));
        }
    }
    let resolve = |name: &str, ctx: &str| -> Result<usize> {
        by_name
            .get(name)
            .copied()
            .ok_or_else(|| Error::Model(format!("{ctx} references undefined tensor '{name}'")))
    };

    let mut nodes = Vec::with_capacity(m.nodes.len());
    for nj in &m.nodes {
        let inputs = nj
            .inputs
            .iter()
            .map(|t| resolve(t, &format!("node '{}'", nj.id)))
            .collect::<Result<Vec<_>>>()?;
        let output = resolve(&nj.output, &format!("node '{}'", nj.id))?;
        nodes.push(Node {
            id: nj.id.clone(),
            kind: nj.kind.clone(),
            inputs,
            output,
            weight: nj.weight,
        });
    }

    let inputs = m
        .inputs
        .iter()
        .map(|t| resolve(t, "graph inputs"))
        .collect::<Result<Vec<_>>>()?;
    let outputs = m
        .outputs
        .iter()
        .map(|t| resolve(t, "graph outputs"))
        .collect::<Result<Vec<_>>>()?;

    let mut g = Graph {
        name: m.name,
        tensors: m.tensors,
        nodes: topo_sort(
            nodes,
            &inputs,
            &m.nodes.iter().map(|n| n.id.clone()).collect::<Vec<_>>(),
        )?,
        inputs,
        outputs,
        weights,
    };
    g.validate()?;
    g.infer_shapes()?;
    Ok(g)
}

/// Stable topological sort by tensor dependencies; preserves file order among
/// ready nodes so round-trips cannot reorder an already sorted model.
fn topo_sort(nodes: Vec<Node>, graph_inputs: &[usize], ids: &[String]) -> Result<Vec<Node>> {
    let n = nodes.len();
    let mut ready_tensor: HashMap<usize, bool> = HashMap::new();
    for &t in graph_inputs {
        ready_tensor.insert(t, true);
    }
    let mut emitted = vec![false; n];
    let mut out = Vec::with_capacity(n);
    loop {
        let mut progressed = false;
        for i in 0..n {
            if emitted[i] {
                continue;
            }
            let ok = nodes[i]
                .inputs
                .iter()
                .all(|t| ready_tensor.get(t).copied().unwrap_or(false));
            if ok {
                ready_tensor.insert(nodes[i].output, true);
                emitted[i] = true;
                out.push(nodes[i].clone());
                progressed = true;
            }
        }
        if out.len() == n {
            return Ok(out);
        }
        if !progressed {
            let stuck: Vec<&str> = (0..n)
                .filter(|&i| !emitted[i])
                .map(|i| ids.get(i).map(|s| s.as_str()).unwrap_or("?"))
                .collect();
            return Err(Error::Model(format!(
                "nodes form a cycle or consume unproduced tensors: {}",
                stuck.join(", ")
            )));
        }
    }
}

/// Canonical JSON for a graph (2-space indent, fixed field order, trailing
/// newline). Two emissions of the same graph are byte-identical.
pub fn model_to_json(g: &Graph) -> String {
    let m = ModelJson {
        name: g.name.clone(),
        tensors: g.tensors.clone(),
        nodes: g
            .nodes
            .iter()
            .map(|n| NodeJson {
                id: n.id.clone(),
                kind: n.kind.clone(),
                inputs: n
                    .inputs
                    .iter()
                    .map(|&t| g.tensors[t].name.clone())
                    .collect(),
                output: g.tensors[n.output].name.clone(),
                weight: n.weight,
            })
            .collect(),
        inputs: g
            .inputs
            .iter()
            .map(|&t| g.tensors[t].name.clone())
            .collect(),
        outputs: g
            .outputs
            .iter()
            .map(|&t| g.tensors[t].name.clone())
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&m).expect("model serialization cannot fail");
    s.push('\n');
    s
}

pub fn save_model(g: &Graph, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(MODEL_FILE), model_to_json(g))?;
    std::fs::write(dir.join(WEIGHTS_FILE), &g.weights)?;
    Ok(())
}
