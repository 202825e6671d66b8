//! Quantized network graph: NHWC tensors (N fixed to 1), int8 payloads with
//! int32 accumulators, weights referenced as byte ranges into a flat blob.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TensorId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dtype {
    #[serde(rename = "i8")]
    I8,
    #[serde(rename = "i32")]
    I32,
}

impl Dtype {
    pub fn size_bytes(self) -> usize {
        match self {
            Dtype::I8 => 1,
            Dtype::I32 => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorDesc {
    pub name: String,
    /// NHWC, always rank 4 with N == 1.
    pub shape: Vec<usize>,
    pub dtype: Dtype,
    /// Symmetric per-tensor scale, zero point is always 0. Carried for model
    /// fidelity; the integer semantics below never consult it.
    pub scale: f32,
}

impl TensorDesc {
    pub fn elems(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn bytes(&self) -> usize {
        self.elems() * self.dtype.size_bytes()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PadMode {
    Valid,
    Same,
}

/// A fixed-point multiplier: value * m >> s with round-to-nearest,
/// ties away from zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QScale {
    pub m: u32,
    pub s: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightRef {
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "attrs")]
pub enum NodeKind {
    Conv2D {
        kh: usize,
        kw: usize,
        stride: usize,
        pad: PadMode,
        out_channels: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        requant: Option<QScale>,
        #[serde(default)]
        fuse_relu: bool,
    },
    DepthwiseConv2D {
        kh: usize,
        kw: usize,
        stride: usize,
        pad: PadMode,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        requant: Option<QScale>,
    },
    Dense {
        out_features: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        requant: Option<QScale>,
    },
    Requantize {
        q: QScale,
        clamp_lo: i8,
        clamp_hi: i8,
        /// Barrier requantizes force the value back through system memory and
        /// terminate accelerator regions when the partitioner honors them.
        barrier: bool,
    },
    Relu,
    LeakyRelu {
        slope: QScale,
    },
    MaxPool {
        k: usize,
        stride: usize,
    },
    AvgPool {
        k: usize,
        stride: usize,
        divisor: QScale,
    },
    EwAdd,
    EwAdd32,
    EwAbs,
    EwMin,
    EwMax,
}

impl NodeKind {
    pub fn name(&self) -> &'static str {
        match self {
            NodeKind::Conv2D { .. } => "Conv2D",
            NodeKind::DepthwiseConv2D { .. } => "DepthwiseConv2D",
            NodeKind::Dense { .. } => "Dense",
            NodeKind::Requantize { .. } => "Requantize",
            NodeKind::Relu => "Relu",
            NodeKind::LeakyRelu { .. } => "LeakyRelu",
            NodeKind::MaxPool { .. } => "MaxPool",
            NodeKind::AvgPool { .. } => "AvgPool",
            NodeKind::EwAdd => "EwAdd",
            NodeKind::EwAdd32 => "EwAdd32",
            NodeKind::EwAbs => "EwAbs",
            NodeKind::EwMin => "EwMin",
            NodeKind::EwMax => "EwMax",
        }
    }

    pub fn arity(&self) -> usize {
        match self {
            NodeKind::EwAdd | NodeKind::EwAdd32 | NodeKind::EwMin | NodeKind::EwMax => 2,
            _ => 1,
        }
    }

    pub fn has_weights(&self) -> bool {
        matches!(
            self,
            NodeKind::Conv2D { .. } | NodeKind::DepthwiseConv2D { .. } | NodeKind::Dense { .. }
        )
    }

    pub fn is_barrier_requant(&self) -> bool {
        matches!(self, NodeKind::Requantize { barrier: true, .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: String,
    pub kind: NodeKind,
    pub inputs: Vec<TensorId>,
    pub output: TensorId,
    pub weight: Option<WeightRef>,
}

#[derive(Debug, Clone, Default)]
pub struct Graph {
    pub name: String,
    pub tensors: Vec<TensorDesc>,
    /// Topologically ordered: producers precede consumers.
    pub nodes: Vec<Node>,
    pub inputs: Vec<TensorId>,
    pub outputs: Vec<TensorId>,
    pub weights: Vec<u8>,
}

/// Output extent of one spatial axis.
pub fn conv_out_dim(in_dim: usize, k: usize, stride: usize, pad: PadMode) -> Result<usize> {
    match pad {
        PadMode::Same => Ok(in_dim.div_ceil(stride)),
        PadMode::Valid => {
            if k > in_dim {
                Err(Error::Model(format!(
                    "kernel {k} larger than padded input extent {in_dim}"
                )))
            } else {
                Ok((in_dim - k) / stride + 1)
            }
        }
    }
}

/// Leading padding of one spatial axis (the trailing half is the remainder).
pub fn pad_before(in_dim: usize, k: usize, stride: usize, pad: PadMode) -> usize {
    match pad {
        PadMode::Valid => 0,
        PadMode::Same => {
            let out = in_dim.div_ceil(stride);
            let total = ((out - 1) * stride + k).saturating_sub(in_dim);
            total / 2
        }
    }
}

/// Expected byte length of a node's weight region (kernel i8s then i32 bias
/// per output channel), if the kind carries weights.
pub fn weight_len(kind: &NodeKind, in_shape: &[usize]) -> Option<usize> {
    match kind {
        NodeKind::Conv2D {
            kh,
            kw,
            out_channels,
            ..
        } => Some(kh * kw * in_shape[3] * out_channels + 4 * out_channels),
        NodeKind::DepthwiseConv2D { kh, kw, .. } => Some(kh * kw * in_shape[3] + 4 * in_shape[3]),
        NodeKind::Dense { out_features, .. } => {
            let features: usize = in_shape.iter().product();
            Some(features * out_features + 4 * out_features)
        }
        _ => None,
    }
}

/// Shape and dtype a node produces from the given input descriptors.
pub fn infer_node_output(
    node_id: &str,
    kind: &NodeKind,
    inputs: &[&TensorDesc],
) -> Result<(Vec<usize>, Dtype)> {
    let shape_err = |reason: String| Error::Shape {
        node: node_id.to_string(),
        reason,
    };
    let need_dtype = |desc: &TensorDesc, want: Dtype| -> Result<()> {
        if desc.dtype != want {
            Err(shape_err(format!(
                "input '{}' must be {:?}, found {:?}",
                desc.name, want, desc.dtype
            )))
        } else {
            Ok(())
        }
    };
    if inputs.len() != kind.arity() {
        return Err(shape_err(format!(
            "{} takes {} input(s), found {}",
            kind.name(),
            kind.arity(),
            inputs.len()
        )));
    }
    let a = inputs[0];
    if a.shape.len() != 4 || a.shape[0] != 1 {
        return Err(shape_err(format!(
            "expected NHWC with N=1, found {:?}",
            a.shape
        )));
    }
    match kind {
        NodeKind::Conv2D {
            kh,
            kw,
            stride,
            pad,
            out_channels,
            requant,
            ..
        } => {
            need_dtype(a, Dtype::I8)?;
            let ho = conv_out_dim(a.shape[1], *kh, *stride, *pad)
                .map_err(|e| shape_err(e.to_string()))?;
            let wo = conv_out_dim(a.shape[2], *kw, *stride, *pad)
                .map_err(|e| shape_err(e.to_string()))?;
            let dt = if requant.is_some() {
                Dtype::I8
            } else {
                Dtype::I32
            };
            Ok((vec![1, ho, wo, *out_channels], dt))
        }
        NodeKind::DepthwiseConv2D {
            kh,
            kw,
            stride,
            pad,
            requant,
        } => {
            need_dtype(a, Dtype::I8)?;
            let ho = conv_out_dim(a.shape[1], *kh, *stride, *pad)
                .map_err(|e| shape_err(e.to_string()))?;
            let wo = conv_out_dim(a.shape[2], *kw, *stride, *pad)
                .map_err(|e| shape_err(e.to_string()))?;
            let dt = if requant.is_some() {
                Dtype::I8
            } else {
                Dtype::I32
            };
            Ok((vec![1, ho, wo, a.shape[3]], dt))
        }
        NodeKind::Dense {
            out_features,
            requant,
        } => {
            need_dtype(a, Dtype::I8)?;
            let dt = if requant.is_some() {
                Dtype::I8
            } else {
                Dtype::I32
            };
            Ok((vec![1, 1, 1, *out_features], dt))
        }
        NodeKind::Requantize { .. } => {
            need_dtype(a, Dtype::I32)?;
            Ok((a.shape.clone(), Dtype::I8))
        }
        NodeKind::Relu | NodeKind::LeakyRelu { .. } | NodeKind::EwAbs => {
            need_dtype(a, Dtype::I8)?;
            Ok((a.shape.clone(), Dtype::I8))
        }
        NodeKind::MaxPool { k, stride } | NodeKind::AvgPool { k, stride, .. } => {
            need_dtype(a, Dtype::I8)?;
            if *k > a.shape[1] || *k > a.shape[2] {
                return Err(shape_err(format!(
                    "pool window {k} larger than input {}x{}",
                    a.shape[1], a.shape[2]
                )));
            }
            let ho = (a.shape[1] - k) / stride + 1;
            let wo = (a.shape[2] - k) / stride + 1;
            Ok((vec![1, ho, wo, a.shape[3]], Dtype::I8))
        }
        NodeKind::EwAdd | NodeKind::EwMin | NodeKind::EwMax | NodeKind::EwAdd32 => {
            let want = if matches!(kind, NodeKind::EwAdd32) {
                Dtype::I32
            } else {
                Dtype::I8
            };
            need_dtype(a, want)?;
            need_dtype(inputs[1], want)?;
            if a.shape != inputs[1].shape {
                return Err(shape_err(format!(
                    "elementwise inputs must match exactly (no broadcast): {:?} vs {:?}",
                    a.shape, inputs[1].shape
                )));
            }
            Ok((a.shape.clone(), want))
        }
    }
}

impl Graph {
    pub fn new(name: impl Into<String>) -> Self {
        Graph {
            name: name.into(),
            ..Default::default()
        }
    }

    pub fn add_tensor(&mut self, desc: TensorDesc) -> TensorId {
        self.tensors.push(desc);
        self.tensors.len() - 1
    }

    pub fn add_node(&mut self, node: Node) {
        self.nodes.push(node);
    }

    pub fn tensor(&self, id: TensorId) -> &TensorDesc {
        &self.tensors[id]
    }

    pub fn node_by_id(&self, id: &str) -> Option<&Node> {
        self.nodes.iter().find(|n| n.id == id)
    }

    /// Index of the node producing each tensor, if any.
    pub fn producers(&self) -> Vec<Option<usize>> {
        let mut p = vec![None; self.tensors.len()];
        for (i, n) in self.nodes.iter().enumerate() {
            p[n.output] = Some(i);
        }
        p
    }

    /// Indices of nodes consuming each tensor.
    pub fn consumers(&self) -> Vec<Vec<usize>> {
        let mut c = vec![Vec::new(); self.tensors.len()];
        for (i, n) in self.nodes.iter().enumerate() {
            for &t in &n.inputs {
                c[t].push(i);
            }
        }
        c
    }

    /// Recompute every produced tensor's shape and dtype from its node and
    /// check the result against the declared descriptor. Idempotent.
    pub fn infer_shapes(&mut self) -> Result<()> {
        for i in 0..self.nodes.len() {
            let node = &self.nodes[i];
            let inputs: Vec<&TensorDesc> = node.inputs.iter().map(|&t| &self.tensors[t]).collect();
            let (shape, dtype) = infer_node_output(&node.id, &node.kind, &inputs)?;
            let out = node.output;
            let declared = &self.tensors[out];
            if !declared.shape.is_empty() && declared.shape != shape {
                return Err(Error::Shape {
                    node: node.id.clone(),
                    reason: format!(
                        "declared shape {:?} for '{}' does not match inferred {:?}",
                        declared.shape, declared.name, shape
                    ),
                });
            }
            if declared.dtype != dtype {
                return Err(Error::Shape {
                    node: node.id.clone(),
                    reason: format!(
                        "declared dtype {:?} for '{}' does not match inferred {:?}",
                        declared.dtype, declared.name, dtype
                    ),
                });
            }
            self.tensors[out].shape = shape;
        }
        Ok(())
    }

    /// Structural validation: reference integrity, topological node order,
    /// single producers, dtype/attr legality, weight blob ranges.
    pub fn validate(&self) -> Result<()> {
        let model_err = |m: String| Error::Model(m);
        let mut names = std::collections::HashSet::new();
        for t in &self.tensors {
            if !names.insert(t.name.as_str()) {
                return Err(model_err(format!("duplicate tensor name '{}'", t.name)));
            }
            if t.shape.len() != 4 || t.shape[0] != 1 || t.shape.contains(&0) {
                return Err(model_err(format!(
                    "tensor '{}' must be NHWC with N=1 and nonzero dims, found {:?}",
                    t.name, t.shape
                )));
            }
        }
        let mut ids = std::collections::HashSet::new();
        let mut produced = vec![false; self.tensors.len()];
        let is_input = |t: TensorId| self.inputs.contains(&t);
        for node in &self.nodes {
            if !ids.insert(node.id.as_str()) {
                return Err(model_err(format!("duplicate node id '{}'", node.id)));
            }
            for &t in node.inputs.iter().chain([&node.output]) {
                if t >= self.tensors.len() {
                    return Err(model_err(format!(
                        "node '{}' references tensor index {} out of range",
                        node.id, t
                    )));
                }
            }
            for &t in &node.inputs {
                if !produced[t] && !is_input(t) {
                    return Err(model_err(format!(
                        "node '{}' consumes '{}' before any producer (nodes must be topologically ordered)",
                        node.id,
                        self.tensors[t].name
                    )));
                }
            }
            if produced[node.output] || is_input(node.output) {
                return Err(model_err(format!(
                    "tensor '{}' has more than one producer",
                    self.tensors[node.output].name
                )));
            }
            produced[node.output] = true;

            self.validate_node_attrs(node)?;

            let in_shape = &self.tensors[node.inputs[0]].shape;
            match (weight_len(&node.kind, in_shape), node.weight) {
                (Some(len), Some(w)) => {
                    if w.len != len {
                        return Err(model_err(format!(
                            "node '{}' weight region is {} bytes, expected {}",
                            node.id, w.len, len
                        )));
                    }
                    if w.offset + w.len > self.weights.len() {
                        return Err(model_err(format!(
                            "node '{}' weight region [{}, {}) exceeds blob of {} bytes",
                            node.id,
                            w.offset,
                            w.offset + w.len,
                            self.weights.len()
                        )));
                    }
                }
                (Some(_), None) => {
                    return Err(model_err(format!(
                        "node '{}' is missing its weights",
                        node.id
                    )))
                }
                (None, Some(_)) => {
                    return Err(model_err(format!(
                        "node '{}' ({}) does not take weights",
                        node.id,
                        node.kind.name()
                    )))
                }
                (None, None) => {}
            }
        }
        for (&t, role) in self
            .inputs
            .iter()
            .map(|t| (t, "input"))
            .chain(self.outputs.iter().map(|t| (t, "output")))
        {
            if t >= self.tensors.len() {
                return Err(model_err(format!(
                    "graph {role} tensor index {t} out of range"
                )));
            }
        }
        for &t in &self.outputs {
            if !produced[t] && !is_input(t) {
                return Err(model_err(format!(
                    "graph output '{}' is never produced",
                    self.tensors[t].name
                )));
            }
        }
        Ok(())
    }

    fn validate_node_attrs(&self, node: &Node) -> Result<()> {
        let bad = |reason: String| Error::Model(format!("node '{}': {}", node.id, reason));
        let check_q = |q: &QScale| -> Result<()> {
            if q.m == 0 {
                return Err(bad("multiplier must be positive".into()));
            }
            if q.s > 62 {
                return Err(bad(format!("shift {} out of range 0..=62", q.s)));
            }
            Ok(())
        };
        match &node.kind {
            NodeKind::Conv2D {
                kh,
                kw,
                stride,
                requant,
                fuse_relu,
                out_channels,
                ..
            } => {
                if *kh == 0 || *kw == 0 || *stride == 0 || *out_channels == 0 {
                    return Err(bad("kernel, stride and channels must be nonzero".into()));
                }
                if let Some(q) = requant {
                    check_q(q)?;
                }
                if *fuse_relu && requant.is_none() {
                    return Err(bad("fuse_relu requires a fused requantization".into()));
                }
            }
            NodeKind::DepthwiseConv2D {
                kh,
                kw,
                stride,
                requant,
                ..
            } => {
                if *kh == 0 || *kw == 0 || *stride == 0 {
                    return Err(bad("kernel and stride must be nonzero".into()));
                }
                if let Some(q) = requant {
                    check_q(q)?;
                }
            }
            NodeKind::Dense {
                out_features,
                requant,
            } => {
                if *out_features == 0 {
                    return Err(bad("out_features must be nonzero".into()));
                }
                if let Some(q) = requant {
                    check_q(q)?;
                }
            }
            NodeKind::Requantize {
                q,
                clamp_lo,
                clamp_hi,
                ..
            } => {
                check_q(q)?;
                if clamp_lo > clamp_hi {
                    return Err(bad(format!(
                        "clamp range [{clamp_lo}, {clamp_hi}] is empty"
                    )));
                }
            }
            NodeKind::LeakyRelu { slope } => check_q(slope)?,
            NodeKind::AvgPool { k, stride, divisor } => {
                if *k == 0 || *stride == 0 {
                    return Err(bad("pool window and stride must be nonzero".into()));
                }
                check_q(divisor)?;
            }
            NodeKind::MaxPool { k, stride } if (*k == 0 || *stride == 0) => {
                return Err(bad("pool window and stride must be nonzero".into()));
            }
            _ => {}
        }
        Ok(())
    }
}
