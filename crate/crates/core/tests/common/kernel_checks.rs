//! Parameterized interpreter-vs-oracle checks, shared between the kernel
//! equivalence suite and the acceptance gate. Each function runs `instances`
//! random cases of one kernel family against `common::oracles` and panics on
//! the first divergence.

use super::oracles as ora;
use dlac_core::graph::{Dtype, NodeKind, PadMode, QScale, TensorDesc};
use dlac_core::interp::{eval_node, TensorData, TensorValue};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng_for(kernel: &str) -> ChaCha8Rng {
    let tag: u64 = kernel
        .bytes()
        .fold(0x5eed, |a, b| a.wrapping_mul(31).wrapping_add(b as u64));
    ChaCha8Rng::seed_from_u64(tag)
}

pub fn i8_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> TensorValue {
    let desc = TensorDesc {
        name: "x".into(),
        shape: shape.to_vec(),
        dtype: Dtype::I8,
        scale: 1.0,
    };
    let data: Vec<i8> = (0..desc.elems())
        .map(|_| rng.random_range(-128..=127))
        .collect();
    TensorValue {
        data: TensorData::I8(data),
        desc,
    }
}

pub fn i32_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> TensorValue {
    let desc = TensorDesc {
        name: "x".into(),
        shape: shape.to_vec(),
        dtype: Dtype::I32,
        scale: 1.0,
    };
    let data: Vec<i32> = (0..desc.elems())
        .map(|_| rng.random_range(-(1 << 20)..=(1 << 20)))
        .collect();
    TensorValue {
        data: TensorData::I32(data),
        desc,
    }
}

pub fn lift(t: &TensorValue) -> Vec<i32> {
    match &t.data {
        TensorData::I8(v) => v.iter().map(|&x| x as i32).collect(),
        TensorData::I32(v) => v.clone(),
    }
}

pub fn blob(weights: &[i8], bias: &[i32]) -> Vec<u8> {
    let mut b: Vec<u8> = weights.iter().map(|&w| w as u8).collect();
    for x in bias {
        b.extend_from_slice(&x.to_le_bytes());
    }
    b
}

fn rand_weights(rng: &mut ChaCha8Rng, kernel_elems: usize, channels: usize) -> (Vec<i8>, Vec<i32>) {
    let w: Vec<i8> = (0..kernel_elems)
        .map(|_| rng.random_range(-128..=127))
        .collect();
    let b: Vec<i32> = (0..channels)
        .map(|_| rng.random_range(-65536..=65536))
        .collect();
    (w, b)
}

pub fn conv2d(instances: usize) {
    let mut rng = rng_for("conv2d");
    for i in 0..instances {
        let h = rng.random_range(1..=8);
        let w = rng.random_range(1..=8);
        let c_in = rng.random_range(1..=4);
        let c_out = rng.random_range(1..=6);
        let kh = *[1, 2, 3].get(rng.random_range(0..3)).unwrap();
        let kw = *[1, 2, 3].get(rng.random_range(0..3)).unwrap();
        let stride = rng.random_range(1..=2);
        let same = rng.random_bool(0.5) || kh > h || kw > w;
        let requant = rng.random_bool(0.5).then(|| QScale {
            m: rng.random_range(1..=9),
            s: rng.random_range(8..=20),
        });
        let fuse_relu = requant.is_some() && rng.random_bool(0.5);

        let input = i8_tensor(&mut rng, &[1, h, w, c_in]);
        let (wv, bv) = rand_weights(&mut rng, kh * kw * c_in * c_out, c_out);
        let kind = NodeKind::Conv2D {
            kh,
            kw,
            stride,
            pad: if same { PadMode::Same } else { PadMode::Valid },
            out_channels: c_out,
            requant,
            fuse_relu,
        };
        let got = eval_node("conv", &kind, &[&input], &blob(&wv, &bv)).unwrap();

        let spec = ora::ConvSpec {
            h,
            w,
            c_in,
            c_out,
            kh,
            kw,
            stride,
            same_pad: same,
        };
        let wi: Vec<i32> = wv.iter().map(|&x| x as i32).collect();
        let acc = ora::conv2d(&spec, &lift(&input), &wi, &bv);
        let want: Vec<i32> = match requant {
            None => acc,
            Some(q) => acc
                .iter()
                .map(|&a| {
                    let lo = if fuse_relu { 0 } else { -128 };
                    ora::requant(a, q.m, q.s, lo, 127) as i32
                })
                .collect(),
        };
        assert_eq!(lift(&got), want, "conv2d instance {i}");
    }
}

pub fn depthwise(instances: usize) {
    let mut rng = rng_for("depthwise");
    for i in 0..instances {
        let h = rng.random_range(1..=8);
        let w = rng.random_range(1..=8);
        let c = rng.random_range(1..=6);
        let k = rng.random_range(1..=3);
        let stride = rng.random_range(1..=2);
        let same = rng.random_bool(0.5) || k > h || k > w;
        let requant = rng.random_bool(0.5).then(|| QScale {
            m: rng.random_range(1..=9),
            s: rng.random_range(6..=16),
        });

        let input = i8_tensor(&mut rng, &[1, h, w, c]);
        let (wv, bv) = rand_weights(&mut rng, k * k * c, c);
        let kind = NodeKind::DepthwiseConv2D {
            kh: k,
            kw: k,
            stride,
            pad: if same { PadMode::Same } else { PadMode::Valid },
            requant,
        };
        let got = eval_node("dw", &kind, &[&input], &blob(&wv, &bv)).unwrap();

        let spec = ora::ConvSpec {
            h,
            w,
            c_in: c,
            c_out: c,
            kh: k,
            kw: k,
            stride,
            same_pad: same,
        };
        let wi: Vec<i32> = wv.iter().map(|&x| x as i32).collect();
        let acc = ora::depthwise(&spec, &lift(&input), &wi, &bv);
        let want: Vec<i32> = match requant {
            None => acc,
            Some(q) => acc
                .iter()
                .map(|&a| ora::requant(a, q.m, q.s, -128, 127) as i32)
                .collect(),
        };
        assert_eq!(lift(&got), want, "depthwise instance {i}");
    }
}

pub fn dense(instances: usize) {
    let mut rng = rng_for("dense");
    for i in 0..instances {
        let h = rng.random_range(1..=4);
        let w = rng.random_range(1..=4);
        let c = rng.random_range(1..=8);
        let out_features = rng.random_range(1..=12);
        let features = h * w * c;
        let requant = rng.random_bool(0.5).then(|| QScale {
            m: rng.random_range(1..=9),
            s: rng.random_range(8..=20),
        });

        let input = i8_tensor(&mut rng, &[1, h, w, c]);
        let (wv, bv) = rand_weights(&mut rng, features * out_features, out_features);
        let kind = NodeKind::Dense {
            out_features,
            requant,
        };
        let got = eval_node("fc", &kind, &[&input], &blob(&wv, &bv)).unwrap();

        let wi: Vec<i32> = wv.iter().map(|&x| x as i32).collect();
        let acc = ora::dense(&lift(&input), &wi, &bv, out_features);
        let want: Vec<i32> = match requant {
            None => acc,
            Some(q) => acc
                .iter()
                .map(|&a| ora::requant(a, q.m, q.s, -128, 127) as i32)
                .collect(),
        };
        assert_eq!(lift(&got), want, "dense instance {i}");
    }
}

pub fn requantize(instances: usize) {
    let mut rng = rng_for("requantize");
    for i in 0..instances {
        let n = rng.random_range(1..=64);
        let input = i32_tensor(&mut rng, &[1, 1, 1, n]);
        let q = QScale {
            m: rng.random_range(1..=1000),
            s: rng.random_range(0..=24),
        };
        let lo = rng.random_range(-128..=0);
        let hi = rng.random_range(1..=127);
        let kind = NodeKind::Requantize {
            q,
            clamp_lo: lo,
            clamp_hi: hi,
            barrier: rng.random_bool(0.5),
        };
        let got = eval_node("rq", &kind, &[&input], &[]).unwrap();
        let want: Vec<i32> = lift(&input)
            .iter()
            .map(|&a| ora::requant(a, q.m, q.s, lo, hi) as i32)
            .collect();
        assert_eq!(lift(&got), want, "requantize instance {i}");
    }
}

pub fn activations(instances: usize) {
    let mut rng = rng_for("activations");
    for i in 0..instances {
        let h = rng.random_range(1..=6);
        let w = rng.random_range(1..=6);
        let c = rng.random_range(1..=6);
        let input = i8_tensor(&mut rng, &[1, h, w, c]);

        let got = eval_node("relu", &NodeKind::Relu, &[&input], &[]).unwrap();
        assert_eq!(lift(&got), ora::relu(&lift(&input)), "relu instance {i}");

        let slope = QScale {
            m: rng.random_range(1..=16),
            s: rng.random_range(1..=6),
        };
        let got = eval_node("lrelu", &NodeKind::LeakyRelu { slope }, &[&input], &[]).unwrap();
        assert_eq!(
            lift(&got),
            ora::leaky_relu(&lift(&input), slope.m, slope.s),
            "leaky instance {i}"
        );

        let got = eval_node("abs", &NodeKind::EwAbs, &[&input], &[]).unwrap();
        assert_eq!(
            lift(&got),
            ora::ew_abs_sat(&lift(&input)),
            "abs instance {i}"
        );
    }
}

pub fn pools(instances: usize) {
    let mut rng = rng_for("pools");
    for i in 0..instances {
        let k = rng.random_range(1..=3);
        let h = rng.random_range(k..=8);
        let w = rng.random_range(k..=8);
        let c = rng.random_range(1..=6);
        let stride = rng.random_range(1..=2);
        let input = i8_tensor(&mut rng, &[1, h, w, c]);

        let got = eval_node("mp", &NodeKind::MaxPool { k, stride }, &[&input], &[]).unwrap();
        assert_eq!(
            lift(&got),
            ora::maxpool(h, w, c, k, stride, &lift(&input)),
            "maxpool instance {i}"
        );

        let divisor = QScale {
            m: (1024 / (k * k)) as u32,
            s: 10,
        };
        let got = eval_node(
            "ap",
            &NodeKind::AvgPool { k, stride, divisor },
            &[&input],
            &[],
        )
        .unwrap();
        assert_eq!(
            lift(&got),
            ora::avgpool(h, w, c, k, stride, divisor.m, divisor.s, &lift(&input)),
            "avgpool instance {i}"
        );
    }
}

pub fn elementwise(instances: usize) {
    let mut rng = rng_for("elementwise");
    for i in 0..instances {
        let n = rng.random_range(1..=64);
        let a8 = i8_tensor(&mut rng, &[1, 1, 1, n]);
        let b8 = i8_tensor(&mut rng, &[1, 1, 1, n]);

        let got = eval_node("add", &NodeKind::EwAdd, &[&a8, &b8], &[]).unwrap();
        assert_eq!(
            lift(&got),
            ora::ew_add_sat(&lift(&a8), &lift(&b8)),
            "ew_add instance {i}"
        );

        let got = eval_node("min", &NodeKind::EwMin, &[&a8, &b8], &[]).unwrap();
        assert_eq!(
            lift(&got),
            ora::ew_min(&lift(&a8), &lift(&b8)),
            "ew_min instance {i}"
        );

        let got = eval_node("max", &NodeKind::EwMax, &[&a8, &b8], &[]).unwrap();
        assert_eq!(
            lift(&got),
            ora::ew_max(&lift(&a8), &lift(&b8)),
            "ew_max instance {i}"
        );

        let a32 = i32_tensor(&mut rng, &[1, 1, 1, n]);
        let b32 = i32_tensor(&mut rng, &[1, 1, 1, n]);
        let got = eval_node("add32", &NodeKind::EwAdd32, &[&a32, &b32], &[]).unwrap();
        assert_eq!(
            lift(&got),
            ora::ew_add_wrap32(&lift(&a32), &lift(&b32)),
            "ew_add32 instance {i}"
        );
    }
}

/// Runs every kernel family at `instances` cases each.
pub fn all_kernels(instances: usize) {
    conv2d(instances);
    depthwise(instances);
    dense(instances);
    requantize(instances);
    activations(instances);
    pools(instances);
    elementwise(instances);
}
