//! Seeded random small-graph generator for equivalence testing.
//!
//! Graphs are built op by op against `infer_node_output`, so every generated
//! graph validates by construction. Shapes stay small (at most ~10x10x8) to
//! keep thousand-graph sweeps fast, while still exercising every node kind,
//! fused and standalone requantization, multi-consumer tensors, extra graph
//! inputs for binary ops, and i32 boundary tensors.

use dlac_core::graph::{
    infer_node_output, Dtype, Graph, Node, NodeKind, PadMode, QScale, TensorDesc, TensorId,
    WeightRef,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Gen {
    g: Graph,
    rng: ChaCha8Rng,
    next_node: usize,
}

impl Gen {
    fn tensor(&mut self, shape: Vec<usize>, dtype: Dtype) -> TensorId {
        let name = format!("t{}", self.g.tensors.len());
        self.g.add_tensor(TensorDesc {
            name,
            shape,
            dtype,
            scale: 1.0,
        })
    }

    fn extra_input(&mut self, shape: Vec<usize>, dtype: Dtype) -> TensorId {
        let t = self.tensor(shape, dtype);
        self.g.inputs.push(t);
        t
    }

    fn weights(&mut self, kernel_elems: usize, channels: usize) -> WeightRef {
        let offset = self.g.weights.len();
        for _ in 0..kernel_elems {
            let v: i8 = self.rng.random_range(-64..=63);
            self.g.weights.push(v as u8);
        }
        for _ in 0..channels {
            let b: i32 = self.rng.random_range(-1024..=1023);
            self.g.weights.extend_from_slice(&b.to_le_bytes());
        }
        WeightRef {
            offset,
            len: kernel_elems + 4 * channels,
        }
    }

    /// Append a node, inferring and materializing its output tensor.
    fn push(
        &mut self,
        kind: NodeKind,
        inputs: Vec<TensorId>,
        weight: Option<WeightRef>,
    ) -> TensorId {
        let id = format!("n{}", self.next_node);
        self.next_node += 1;
        let descs: Vec<&TensorDesc> = inputs.iter().map(|&t| self.g.tensor(t)).collect();
        let (shape, dtype) =
            infer_node_output(&id, &kind, &descs).expect("generated op must infer");
        let output = self.tensor(shape, dtype);
        self.g.add_node(Node {
            id,
            kind,
            inputs,
            output,
            weight,
        });
        output
    }

    fn qscale(&mut self, taps: usize) -> QScale {
        let bits = usize::BITS - (taps.max(1) - 1).leading_zeros();
        QScale {
            m: self.rng.random_range(1..=7),
            s: bits + self.rng.random_range(7..=10),
        }
    }

    /// A same-shape, same-dtype operand for a binary op: an existing tensor
    /// when one matches (sometimes the probe itself), else a fresh input.
    fn sibling(&mut self, of: TensorId) -> TensorId {
        let want = self.g.tensor(of).clone();
        let mut matches: Vec<TensorId> = (0..self.g.tensors.len())
            .filter(|&t| {
                let d = self.g.tensor(t);
                d.shape == want.shape && d.dtype == want.dtype
            })
            .collect();
        matches.retain(|&t| {
            t == of || self.g.nodes.iter().any(|n| n.output == t) || self.g.inputs.contains(&t)
        });
        if !matches.is_empty() && self.rng.random_bool(0.7) {
            let i = self.rng.random_range(0..matches.len());
            return matches[i];
        }
        self.extra_input(want.shape, want.dtype)
    }
}

fn pick<T: Copy>(rng: &mut ChaCha8Rng, options: &[T]) -> T {
    options[rng.random_range(0..options.len())]
}

/// Build a random, always-valid graph from `seed`.
pub fn random_graph(seed: u64) -> Graph {
    let mut gen = Gen {
        g: Graph::new(format!("gen_{seed}")),
        rng: ChaCha8Rng::seed_from_u64(seed),
        next_node: 0,
    };
    let h = gen.rng.random_range(4..=10);
    let w = gen.rng.random_range(4..=10);
    let c = pick(&mut gen.rng, &[1usize, 2, 3, 4, 8]);
    let mut cur = gen.extra_input(vec![1, h, w, c], Dtype::I8);

    let steps = gen.rng.random_range(3..=8);
    for _ in 0..steps {
        let desc = gen.g.tensor(cur).clone();
        let (_, ih, iw, ic) = (desc.shape[0], desc.shape[1], desc.shape[2], desc.shape[3]);

        if desc.dtype == Dtype::I32 {
            if gen.rng.random_bool(0.25) {
                let rhs = gen.sibling(cur);
                cur = gen.push(NodeKind::EwAdd32, vec![cur, rhs], None);
            } else {
                let q = gen.qscale(64);
                let (lo, hi) = pick(&mut gen.rng, &[(-128i8, 127i8), (0, 127), (-64, 64)]);
                let barrier = gen.rng.random_bool(0.5);
                cur = gen.push(
                    NodeKind::Requantize {
                        q,
                        clamp_lo: lo,
                        clamp_hi: hi,
                        barrier,
                    },
                    vec![cur],
                    None,
                );
            }
            continue;
        }

        match gen.rng.random_range(0..12u32) {
            0 | 1 => {
                let kh = pick(&mut gen.rng, &[1usize, 3]);
                let kw = pick(&mut gen.rng, &[1usize, 3]);
                let stride = pick(&mut gen.rng, &[1usize, 2]);
                let pad = if kh <= ih && kw <= iw && gen.rng.random_bool(0.4) {
                    PadMode::Valid
                } else {
                    PadMode::Same
                };
                let out_channels = gen.rng.random_range(1..=8);
                let requant = gen.rng.random_bool(0.5).then(|| gen.qscale(kh * kw * ic));
                let fuse_relu = requant.is_some() && gen.rng.random_bool(0.5);
                let wref = gen.weights(kh * kw * ic * out_channels, out_channels);
                cur = gen.push(
                    NodeKind::Conv2D {
                        kh,
                        kw,
                        stride,
                        pad,
                        out_channels,
                        requant,
                        fuse_relu,
                    },
                    vec![cur],
                    Some(wref),
                );
            }
            2 => {
                let k = pick(&mut gen.rng, &[1usize, 3]);
                let stride = pick(&mut gen.rng, &[1usize, 2]);
                let pad = if k <= ih && k <= iw && gen.rng.random_bool(0.4) {
                    PadMode::Valid
                } else {
                    PadMode::Same
                };
                let requant = gen.rng.random_bool(0.5).then(|| gen.qscale(k * k));
                let wref = gen.weights(k * k * ic, ic);
                cur = gen.push(
                    NodeKind::DepthwiseConv2D {
                        kh: k,
                        kw: k,
                        stride,
                        pad,
                        requant,
                    },
                    vec![cur],
                    Some(wref),
                );
            }
            3 => {
                let out_features = gen.rng.random_range(1..=10);
                let features = ih * iw * ic;
                let requant = gen.rng.random_bool(0.5).then(|| gen.qscale(features));
                let wref = gen.weights(features * out_features, out_features);
                cur = gen.push(
                    NodeKind::Dense {
                        out_features,
                        requant,
                    },
                    vec![cur],
                    Some(wref),
                );
            }
            4 if ih >= 2 && iw >= 2 => {
                let k = 2 + usize::from(ih >= 3 && iw >= 3 && gen.rng.random_bool(0.3));
                let stride = pick(&mut gen.rng, &[1usize, 2]);
                cur = gen.push(NodeKind::MaxPool { k, stride }, vec![cur], None);
            }
            5 if ih >= 2 && iw >= 2 => {
                let k = 2 + usize::from(ih >= 3 && iw >= 3 && gen.rng.random_bool(0.3));
                let stride = pick(&mut gen.rng, &[1usize, 2]);
                // m/2^10 approximates 1/k^2.
                let divisor = QScale {
                    m: (1024 / (k * k)) as u32,
                    s: 10,
                };
                cur = gen.push(NodeKind::AvgPool { k, stride, divisor }, vec![cur], None);
            }
            6 => cur = gen.push(NodeKind::Relu, vec![cur], None),
            7 => {
                let slope = QScale {
                    m: gen.rng.random_range(1..=3),
                    s: gen.rng.random_range(2..=4),
                };
                cur = gen.push(NodeKind::LeakyRelu { slope }, vec![cur], None);
            }
            8 => cur = gen.push(NodeKind::EwAbs, vec![cur], None),
            9..=11 => {
                let rhs = gen.sibling(cur);
                let kind = match gen.rng.random_range(0..3u32) {
                    0 => NodeKind::EwAdd,
                    1 => NodeKind::EwMin,
                    _ => NodeKind::EwMax,
                };
                cur = gen.push(kind, vec![cur, rhs], None);
            }
            _ => cur = gen.push(NodeKind::Relu, vec![cur], None),
        }
    }

    let final_requant = gen.g.tensor(cur).dtype == Dtype::I32 && gen.rng.random_bool(0.6);
    if final_requant {
        let q = gen.qscale(64);
        let barrier = gen.rng.random_bool(0.5);
        cur = gen.push(
            NodeKind::Requantize {
                q,
                clamp_lo: -128,
                clamp_hi: 127,
                barrier,
            },
            vec![cur],
            None,
        );
    }

    gen.g.outputs = vec![cur];
    // Sometimes also expose an intermediate tensor, so device subgraphs have
    // to store more than their final boundary value.
    if gen.rng.random_bool(0.25) {
        let produced: Vec<TensorId> = gen
            .g
            .nodes
            .iter()
            .map(|n| n.output)
            .filter(|&t| t != cur)
            .collect();
        if !produced.is_empty() {
            let extra = produced[gen.rng.random_range(0..produced.len())];
            gen.g.outputs.push(extra);
        }
    }

    gen.g.validate().expect("generated graph must validate");
    gen.g
        .infer_shapes()
        .expect("generated graph shapes must infer");
    gen.g
}

#[cfg(test)]
mod self_checks {
    use super::*;

    #[test]
    fn generator_is_deterministic_and_diverse() {
        let a = random_graph(42);
        let b = random_graph(42);
        assert_eq!(a.nodes, b.nodes);

        let mut names = std::collections::BTreeSet::new();
        for seed in 0..300 {
            for node in random_graph(seed).nodes {
                names.insert(node.kind.name());
            }
        }
        for want in [
            "Conv2D",
            "DepthwiseConv2D",
            "Dense",
            "Requantize",
            "Relu",
            "LeakyRelu",
            "MaxPool",
            "AvgPool",
            "EwAdd",
            "EwAdd32",
            "EwAbs",
            "EwMin",
            "EwMax",
        ] {
            assert!(names.contains(want), "300 seeds never produced {want}");
        }
    }
}
