//! Reference interpreter. Executes a graph node by node with plain nested
//! loops; this is the semantic ground truth the device simulator has to
//! match bit for bit.

use crate::arith::{abs_sat_i8, leaky_neg, requantize};
use crate::error::{Error, Result};
use crate::graph::{pad_before, Dtype, Graph, NodeKind, PadMode, TensorDesc};

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    I8(Vec<i8>),
    I32(Vec<i32>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::I8(v) => v.len(),
            TensorData::I32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        match self {
            TensorData::I8(v) => v.iter().map(|&x| x as u8).collect(),
            TensorData::I32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        }
    }

    pub fn from_le_bytes(dtype: Dtype, bytes: &[u8]) -> Result<Self> {
        match dtype {
            Dtype::I8 => Ok(TensorData::I8(bytes.iter().map(|&b| b as i8).collect())),
            Dtype::I32 => {
                if !bytes.len().is_multiple_of(4) {
                    return Err(Error::Model("i32 payload not a multiple of 4 bytes".into()));
                }
                Ok(TensorData::I32(
                    bytes
                        .chunks_exact(4)
                        .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorValue {
    pub desc: TensorDesc,
    pub data: TensorData,
}

impl TensorValue {
    pub fn new_i8(desc: TensorDesc, data: Vec<i8>) -> Self {
        assert_eq!(desc.elems(), data.len());
        TensorValue {
            desc,
            data: TensorData::I8(data),
        }
    }

    pub fn new_i32(desc: TensorDesc, data: Vec<i32>) -> Self {
        assert_eq!(desc.elems(), data.len());
        TensorValue {
            desc,
            data: TensorData::I32(data),
        }
    }

    pub fn as_i8(&self) -> Result<&[i8]> {
        match &self.data {
            TensorData::I8(v) => Ok(v),
            _ => Err(Error::Model(format!(
                "tensor '{}' is not i8",
                self.desc.name
            ))),
        }
    }

    pub fn as_i32(&self) -> Result<&[i32]> {
        match &self.data {
            TensorData::I32(v) => Ok(v),
            _ => Err(Error::Model(format!(
                "tensor '{}' is not i32",
                self.desc.name
            ))),
        }
    }
}

fn split_weights(blob: &[u8], kernel_elems: usize, channels: usize) -> (Vec<i8>, Vec<i32>) {
    let kernel: Vec<i8> = blob[..kernel_elems].iter().map(|&b| b as i8).collect();
    let bias: Vec<i32> = blob[kernel_elems..kernel_elems + 4 * channels]
        .chunks_exact(4)
        .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    (kernel, bias)
}

struct ConvGeometry {
    h: usize,
    w: usize,
    c_in: usize,
    ho: usize,
    wo: usize,
    pt: isize,
    pl: isize,
}

fn conv_geometry(
    in_shape: &[usize],
    kh: usize,
    kw: usize,
    stride: usize,
    pad: PadMode,
    out_shape: &[usize],
) -> ConvGeometry {
    ConvGeometry {
        h: in_shape[1],
        w: in_shape[2],
        c_in: in_shape[3],
        ho: out_shape[1],
        wo: out_shape[2],
        pt: pad_before(in_shape[1], kh, stride, pad) as isize,
        pl: pad_before(in_shape[2], kw, stride, pad) as isize,
    }
}

/// Evaluate a single node. `inputs` follow the node's input order, `weights`
/// is the node's blob region (kernel bytes then per-channel i32 bias).
pub fn eval_node(
    node_id: &str,
    kind: &NodeKind,
    inputs: &[&TensorValue],
    weights: &[u8],
) -> Result<TensorValue> {
    let in_descs: Vec<&TensorDesc> = inputs.iter().map(|t| &t.desc).collect();
    let (out_shape, out_dtype) = crate::graph::infer_node_output(node_id, kind, &in_descs)?;
    let out_desc = TensorDesc {
        name: format!("{node_id}_out"),
        shape: out_shape.clone(),
        dtype: out_dtype,
        scale: 1.0,
    };

    match kind {
        NodeKind::Conv2D {
            kh,
            kw,
            stride,
            pad,
            out_channels,
            requant,
            fuse_relu,
        } => {
            let x = inputs[0].as_i8()?;
            let g = conv_geometry(&inputs[0].desc.shape, *kh, *kw, *stride, *pad, &out_shape);
            let (kernel, bias) =
                split_weights(weights, kh * kw * g.c_in * out_channels, *out_channels);
            let mut acc = vec![0i32; g.ho * g.wo * out_channels];
            for oy in 0..g.ho {
                for ox in 0..g.wo {
                    for oc in 0..*out_channels {
                        let mut a = bias[oc];
                        for ky in 0..*kh {
                            for kx in 0..*kw {
                                let iy = (oy * stride + ky) as isize - g.pt;
                                let ix = (ox * stride + kx) as isize - g.pl;
                                if iy < 0 || ix < 0 || iy >= g.h as isize || ix >= g.w as isize {
                                    continue;
                                }
                                let ibase = (iy as usize * g.w + ix as usize) * g.c_in;
                                let wbase = ((ky * kw + kx) * g.c_in) * out_channels + oc;
                                for ic in 0..g.c_in {
                                    let p = x[ibase + ic] as i32
                                        * kernel[wbase + ic * out_channels] as i32;
                                    a = a.wrapping_add(p);
                                }
                            }
                        }
                        acc[(oy * g.wo + ox) * out_channels + oc] = a;
                    }
                }
            }
            finish_conv(out_desc, acc, *requant, *fuse_relu)
        }
        NodeKind::DepthwiseConv2D {
            kh,
            kw,
            stride,
            pad,
            requant,
        } => {
            let x = inputs[0].as_i8()?;
            let g = conv_geometry(&inputs[0].desc.shape, *kh, *kw, *stride, *pad, &out_shape);
            let c = g.c_in;
            let (kernel, bias) = split_weights(weights, kh * kw * c, c);
            let mut acc = vec![0i32; g.ho * g.wo * c];
            for oy in 0..g.ho {
                for ox in 0..g.wo {
                    for ch in 0..c {
                        let mut a = bias[ch];
                        for ky in 0..*kh {
                            for kx in 0..*kw {
                                let iy = (oy * stride + ky) as isize - g.pt;
                                let ix = (ox * stride + kx) as isize - g.pl;
                                if iy < 0 || ix < 0 || iy >= g.h as isize || ix >= g.w as isize {
                                    continue;
                                }
                                let p = x[(iy as usize * g.w + ix as usize) * c + ch] as i32
                                    * kernel[(ky * kw + kx) * c + ch] as i32;
                                a = a.wrapping_add(p);
                            }
                        }
                        acc[(oy * g.wo + ox) * c + ch] = a;
                    }
                }
            }
            finish_conv(out_desc, acc, *requant, false)
        }
        NodeKind::Dense {
            out_features,
            requant,
        } => {
            let x = inputs[0].as_i8()?;
            let features = x.len();
            let (kernel, bias) = split_weights(weights, features * out_features, *out_features);
            let mut acc = vec![0i32; *out_features];
            for (o, a) in acc.iter_mut().enumerate() {
                let mut s = bias[o];
                for f in 0..features {
                    s = s.wrapping_add(x[f] as i32 * kernel[f * out_features + o] as i32);
                }
                *a = s;
            }
            finish_conv(out_desc, acc, *requant, false)
        }
        NodeKind::Requantize {
            q,
            clamp_lo,
            clamp_hi,
            ..
        } => {
            let x = inputs[0].as_i32()?;
            let out = x
                .iter()
                .map(|&v| requantize(v, q.m, q.s, *clamp_lo, *clamp_hi))
                .collect();
            Ok(TensorValue::new_i8(out_desc, out))
        }
        NodeKind::Relu => {
            let x = inputs[0].as_i8()?;
            Ok(TensorValue::new_i8(
                out_desc,
                x.iter().map(|&v| v.max(0)).collect(),
            ))
        }
        NodeKind::LeakyRelu { slope } => {
            let x = inputs[0].as_i8()?;
            let out = x
                .iter()
                .map(|&v| {
                    if v >= 0 {
                        v
                    } else {
                        leaky_neg(v, slope.m, slope.s)
                    }
                })
                .collect();
            Ok(TensorValue::new_i8(out_desc, out))
        }
        NodeKind::MaxPool { k, stride } => {
            let x = inputs[0].as_i8()?;
            let (h, w, c) = (
                inputs[0].desc.shape[1],
                inputs[0].desc.shape[2],
                inputs[0].desc.shape[3],
            );
            let (ho, wo) = (out_shape[1], out_shape[2]);
            let mut out = vec![0i8; ho * wo * c];
            for oy in 0..ho {
                for ox in 0..wo {
                    for ch in 0..c {
                        let mut best = i8::MIN;
                        for ky in 0..*k {
                            for kx in 0..*k {
                                let v = x[((oy * stride + ky) * w + ox * stride + kx) * c + ch];
                                best = best.max(v);
                            }
                        }
                        out[(oy * wo + ox) * c + ch] = best;
                    }
                }
            }
            let _ = h;
            Ok(TensorValue::new_i8(out_desc, out))
        }
        NodeKind::AvgPool { k, stride, divisor } => {
            let x = inputs[0].as_i8()?;
            let (w, c) = (inputs[0].desc.shape[2], inputs[0].desc.shape[3]);
            let (ho, wo) = (out_shape[1], out_shape[2]);
            let mut out = vec![0i8; ho * wo * c];
            for oy in 0..ho {
                for ox in 0..wo {
                    for ch in 0..c {
                        let mut sum = 0i32;
                        for ky in 0..*k {
                            for kx in 0..*k {
                                sum +=
                                    x[((oy * stride + ky) * w + ox * stride + kx) * c + ch] as i32;
                            }
                        }
                        out[(oy * wo + ox) * c + ch] =
                            requantize(sum, divisor.m, divisor.s, -128, 127);
                    }
                }
            }
            Ok(TensorValue::new_i8(out_desc, out))
        }
        NodeKind::EwAdd => {
            let (a, b) = (inputs[0].as_i8()?, inputs[1].as_i8()?);
            let out = a
                .iter()
                .zip(b)
                .map(|(&x, &y)| x.saturating_add(y))
                .collect();
            Ok(TensorValue::new_i8(out_desc, out))
        }
        NodeKind::EwAdd32 => {
            let (a, b) = (inputs[0].as_i32()?, inputs[1].as_i32()?);
            let out = a.iter().zip(b).map(|(&x, &y)| x.wrapping_add(y)).collect();
            Ok(TensorValue::new_i32(out_desc, out))
        }
        NodeKind::EwAbs => {
            let x = inputs[0].as_i8()?;
            Ok(TensorValue::new_i8(
                out_desc,
                x.iter().map(|&v| abs_sat_i8(v)).collect(),
            ))
        }
        NodeKind::EwMin => {
            let (a, b) = (inputs[0].as_i8()?, inputs[1].as_i8()?);
            Ok(TensorValue::new_i8(
                out_desc,
                a.iter().zip(b).map(|(&x, &y)| x.min(y)).collect(),
            ))
        }
        NodeKind::EwMax => {
            let (a, b) = (inputs[0].as_i8()?, inputs[1].as_i8()?);
            Ok(TensorValue::new_i8(
                out_desc,
                a.iter().zip(b).map(|(&x, &y)| x.max(y)).collect(),
            ))
        }
    }
}

fn finish_conv(
    out_desc: TensorDesc,
    acc: Vec<i32>,
    requant: Option<crate::graph::QScale>,
    fuse_relu: bool,
) -> Result<TensorValue> {
    match requant {
        None => Ok(TensorValue::new_i32(out_desc, acc)),
        Some(q) => {
            let lo = if fuse_relu { 0 } else { -128 };
            let out = acc
                .iter()
                .map(|&v| requantize(v, q.m, q.s, lo, 127))
                .collect();
            Ok(TensorValue::new_i8(out_desc, out))
        }
    }
}

fn bind_inputs(graph: &Graph, inputs: &[TensorValue]) -> Result<Vec<Option<TensorValue>>> {
    if inputs.len() != graph.inputs.len() {
        return Err(Error::Model(format!(
            "graph takes {} input(s), found {}",
            graph.inputs.len(),
            inputs.len()
        )));
    }
    let mut env: Vec<Option<TensorValue>> = vec![None; graph.tensors.len()];
    for (&tid, value) in graph.inputs.iter().zip(inputs) {
        let want = graph.tensor(tid);
        if value.desc.shape != want.shape || value.desc.dtype != want.dtype {
            return Err(Error::Model(format!(
                "input '{}' expects shape {:?} {:?}",
                want.name, want.shape, want.dtype
            )));
        }
        env[tid] = Some(TensorValue {
            desc: want.clone(),
            data: value.data.clone(),
        });
    }
    Ok(env)
}

/// Run the whole graph, returning values for `graph.outputs` in order.
pub fn interpret(graph: &Graph, inputs: &[TensorValue]) -> Result<Vec<TensorValue>> {
    let mut env = bind_inputs(graph, inputs)?;
    for node in &graph.nodes {
        let ins: Vec<&TensorValue> = node
            .inputs
            .iter()
            .map(|&t| env[t].as_ref().expect("validated graphs execute in order"))
            .collect();
        let blob = node
            .weight
            .map(|w| &graph.weights[w.offset..w.offset + w.len])
            .unwrap_or(&[]);
        let mut out = eval_node(&node.id, &node.kind, &ins, blob)?;
        out.desc = graph.tensor(node.output).clone();
        env[node.output] = Some(out);
    }
    graph
        .outputs
        .iter()
        .map(|&t| {
            env[t].clone().ok_or_else(|| {
                Error::Model(format!(
                    "output '{}' was never produced",
                    graph.tensor(t).name
                ))
            })
        })
        .collect()
}

/// Deterministic pseudo-random i8 payloads for a graph's inputs; used by the
/// CLI when no input file is given and by tests that need arbitrary images.
pub fn seeded_inputs(graph: &Graph, seed: u64) -> Vec<TensorValue> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    graph
        .inputs
        .iter()
        .map(|&t| {
            let desc = graph.tensor(t).clone();
            match desc.dtype {
                Dtype::I8 => {
                    let data = (0..desc.elems())
                        .map(|_| rng.random_range(-128..=127i32) as i8)
                        .collect();
                    TensorValue::new_i8(desc, data)
                }
                Dtype::I32 => {
                    let data = (0..desc.elems())
                        .map(|_| rng.random_range(-1 << 20..1 << 20))
                        .collect();
                    TensorValue::new_i32(desc, data)
                }
            }
        })
        .collect()
}
