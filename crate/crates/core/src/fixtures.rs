//! Built-in networks with deterministic synthetic weights. The weight values
//! only need to be reproducible and non-degenerate; batch-norm style scaling
//! is already folded into the per-layer requantize constants.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{
    Dtype, Graph, Node, NodeKind, PadMode, QScale, TensorDesc, TensorId, WeightRef,
};
use crate::partition::DwMode;

const MNIST_SEED: u64 = 0x6d6e7374;
const MOBILENET_SEED: u64 = 0x6d6f6269;

struct Builder {
    g: Graph,
    rng: ChaCha8Rng,
}

impl Builder {
    fn new(name: &str, seed: u64) -> Self {
        Builder {
            g: Graph::new(name),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn tensor(&mut self, name: &str, shape: &[usize], dtype: Dtype) -> TensorId {
        self.g.add_tensor(TensorDesc {
            name: name.into(),
            shape: shape.to_vec(),
            dtype,
            scale: 1.0,
        })
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

    fn node(
        &mut self,
        id: &str,
        kind: NodeKind,
        inputs: &[TensorId],
        output: TensorId,
        weight: Option<WeightRef>,
    ) {
        self.g.add_node(Node {
            id: id.into(),
            kind,
            inputs: inputs.to_vec(),
            output,
            weight,
        });
    }

    fn finish(mut self, inputs: Vec<TensorId>, outputs: Vec<TensorId>) -> Graph {
        self.g.inputs = inputs;
        self.g.outputs = outputs;
        self.g.validate().expect("fixture must validate");
        self.g.infer_shapes().expect("fixture shapes must infer");
        self.g
    }
}

/// Requantize constants sized so a worst-case accumulator of `taps` products
/// of the synthetic weight/activation ranges lands inside i8.
fn layer_qscale(taps: usize) -> QScale {
    let bits = usize::BITS - (taps.max(1) - 1).leading_zeros();
    QScale { m: 3, s: bits + 8 }
}

fn out_dim_same(d: usize, s: usize) -> usize {
    d.div_ceil(s)
}

/// Small LeNet-style int8 classifier on 28x28x1 images. Every accumulator
/// leaves its layer as i32 and is pushed through a standalone barrier
/// requantize, so activations and pooling run in the i8 domain.
pub fn build_mnist_fixture() -> Graph {
    let mut b = Builder::new("mnist", MNIST_SEED);

    let image = b.tensor("image", &[1, 28, 28, 1], Dtype::I8);

    let conv1_acc = b.tensor("conv1_acc", &[1, 28, 28, 8], Dtype::I32);
    let w1 = b.weights((3 * 3) * 8, 8);
    b.node(
        "conv1",
        NodeKind::Conv2D {
            kh: 3,
            kw: 3,
            stride: 1,
            pad: PadMode::Same,
            out_channels: 8,
            requant: None,
            fuse_relu: false,
        },
        &[image],
        conv1_acc,
        Some(w1),
    );
    let conv1_q = b.tensor("conv1_q", &[1, 28, 28, 8], Dtype::I8);
    b.node(
        "conv1_rq",
        NodeKind::Requantize {
            q: layer_qscale(9),
            clamp_lo: -128,
            clamp_hi: 127,
            barrier: true,
        },
        &[conv1_acc],
        conv1_q,
        None,
    );
    let relu1 = b.tensor("relu1", &[1, 28, 28, 8], Dtype::I8);
    b.node("relu1", NodeKind::Relu, &[conv1_q], relu1, None);
    let pool1 = b.tensor("pool1", &[1, 14, 14, 8], Dtype::I8);
    b.node(
        "pool1",
        NodeKind::MaxPool { k: 2, stride: 2 },
        &[relu1],
        pool1,
        None,
    );

    let conv2_acc = b.tensor("conv2_acc", &[1, 14, 14, 16], Dtype::I32);
    let w2 = b.weights(3 * 3 * 8 * 16, 16);
    b.node(
        "conv2",
        NodeKind::Conv2D {
            kh: 3,
            kw: 3,
            stride: 1,
            pad: PadMode::Same,
            out_channels: 16,
            requant: None,
            fuse_relu: false,
        },
        &[pool1],
        conv2_acc,
        Some(w2),
    );
    let conv2_q = b.tensor("conv2_q", &[1, 14, 14, 16], Dtype::I8);
    b.node(
        "conv2_rq",
        NodeKind::Requantize {
            q: layer_qscale(9 * 8),
            clamp_lo: -128,
            clamp_hi: 127,
            barrier: true,
        },
        &[conv2_acc],
        conv2_q,
        None,
    );
    let relu2 = b.tensor("relu2", &[1, 14, 14, 16], Dtype::I8);
    b.node("relu2", NodeKind::Relu, &[conv2_q], relu2, None);
    let pool2 = b.tensor("pool2", &[1, 7, 7, 16], Dtype::I8);
    b.node(
        "pool2",
        NodeKind::MaxPool { k: 2, stride: 2 },
        &[relu2],
        pool2,
        None,
    );

    let fc_acc = b.tensor("fc_acc", &[1, 1, 1, 10], Dtype::I32);
    let w3 = b.weights(7 * 7 * 16 * 10, 10);
    b.node(
        "fc",
        NodeKind::Dense {
            out_features: 10,
            requant: None,
        },
        &[pool2],
        fc_acc,
        Some(w3),
    );
    let scores = b.tensor("scores", &[1, 1, 1, 10], Dtype::I8);
    b.node(
        "fc_rq",
        NodeKind::Requantize {
            q: layer_qscale(7 * 7 * 16),
            clamp_lo: -128,
            clamp_hi: 127,
            barrier: true,
        },
        &[fc_acc],
        scores,
        None,
    );

    b.finish(vec![image], vec![scores])
}

/// Depthwise-separable blocks of MobileNetV1 width 1.0 as (stride, c_in, c_out).
const MOBILENET_BLOCKS: [(usize, usize, usize); 13] = [
    (1, 32, 64),
    (2, 64, 128),
    (1, 128, 128),
    (2, 128, 256),
    (1, 256, 256),
    (2, 256, 512),
    (1, 512, 512),
    (1, 512, 512),
    (1, 512, 512),
    (1, 512, 512),
    (1, 512, 512),
    (2, 512, 1024),
    (1, 1024, 1024),
];

/// MobileNetV1 (width 1.0, 224x224 input) in its quantized deployment form:
/// every conv / depthwise / dense layer emits i32 and is immediately
/// requantized by a standalone barrier node (ReLU folded into its clamp), so
/// in-pipeline conv+relu fusion stays disabled. `dw_mode` does not change the
/// structure; it is recorded in the graph name for traceability.
pub fn build_mobilenet_v1_fixture(dw_mode: DwMode) -> Graph {
    let suffix = match dw_mode {
        DwMode::Fallback => "fallback",
        DwMode::Emulated => "emulated",
        DwMode::Native => "native",
    };
    let mut b = Builder::new(&format!("mobilenet_v1_{suffix}"), MOBILENET_SEED);

    let input = b.tensor("input", &[1, 224, 224, 3], Dtype::I8);

    // Stem: 3x3 stride-2 conv to 112x112x32.
    let mut h = out_dim_same(224, 2);
    let mut c = 32;
    let acc = b.tensor("conv1_acc", &[1, h, h, c], Dtype::I32);
    let w = b.weights(3 * 3 * 3 * c, c);
    b.node(
        "conv1",
        NodeKind::Conv2D {
            kh: 3,
            kw: 3,
            stride: 2,
            pad: PadMode::Same,
            out_channels: c,
            requant: None,
            fuse_relu: false,
        },
        &[input],
        acc,
        Some(w),
    );
    let mut cur = b.tensor("conv1_q", &[1, h, h, c], Dtype::I8);
    b.node(
        "conv1_rq",
        NodeKind::Requantize {
            q: layer_qscale(27),
            clamp_lo: 0,
            clamp_hi: 127,
            barrier: true,
        },
        &[acc],
        cur,
        None,
    );

    for (i, &(stride, c_in, c_out)) in MOBILENET_BLOCKS.iter().enumerate() {
        let n = i + 1;
        debug_assert_eq!(c, c_in);
        let dw_h = out_dim_same(h, stride);

        let dw_acc = b.tensor(&format!("dw{n}_acc"), &[1, dw_h, dw_h, c_in], Dtype::I32);
        let w = b.weights(3 * 3 * c_in, c_in);
        b.node(
            &format!("dw{n}"),
            NodeKind::DepthwiseConv2D {
                kh: 3,
                kw: 3,
                stride,
                pad: PadMode::Same,
                requant: None,
            },
            &[cur],
            dw_acc,
            Some(w),
        );
        let dw_q = b.tensor(&format!("dw{n}_q"), &[1, dw_h, dw_h, c_in], Dtype::I8);
        b.node(
            &format!("dw{n}_rq"),
            NodeKind::Requantize {
                q: layer_qscale(9),
                clamp_lo: 0,
                clamp_hi: 127,
                barrier: true,
            },
            &[dw_acc],
            dw_q,
            None,
        );

        let pw_acc = b.tensor(&format!("pw{n}_acc"), &[1, dw_h, dw_h, c_out], Dtype::I32);
        let w = b.weights(c_in * c_out, c_out);
        b.node(
            &format!("pw{n}"),
            NodeKind::Conv2D {
                kh: 1,
                kw: 1,
                stride: 1,
                pad: PadMode::Same,
                out_channels: c_out,
                requant: None,
                fuse_relu: false,
            },
            &[dw_q],
            pw_acc,
            Some(w),
        );
        let pw_q = b.tensor(&format!("pw{n}_q"), &[1, dw_h, dw_h, c_out], Dtype::I8);
        b.node(
            &format!("pw{n}_rq"),
            NodeKind::Requantize {
                q: layer_qscale(c_in),
                clamp_lo: 0,
                clamp_hi: 127,
                barrier: true,
            },
            &[pw_acc],
            pw_q,
            None,
        );

        h = dw_h;
        c = c_out;
        cur = pw_q;
    }

    let gap = b.tensor("gap", &[1, 1, 1, c], Dtype::I8);
    b.node(
        "avgpool",
        NodeKind::AvgPool {
            k: 7,
            stride: 7,
            divisor: QScale { m: 669, s: 15 },
        },
        &[cur],
        gap,
        None,
    );

    let fc_acc = b.tensor("fc_acc", &[1, 1, 1, 1000], Dtype::I32);
    let w = b.weights(1024 * 1000, 1000);
    b.node(
        "fc",
        NodeKind::Dense {
            out_features: 1000,
            requant: None,
        },
        &[gap],
        fc_acc,
        Some(w),
    );
    let scores = b.tensor("scores", &[1, 1, 1, 1000], Dtype::I8);
    b.node(
        "fc_rq",
        NodeKind::Requantize {
            q: layer_qscale(1024),
            clamp_lo: -128,
            clamp_hi: 127,
            barrier: true,
        },
        &[fc_acc],
        scores,
        None,
    );

    b.finish(vec![input], vec![scores])
}
