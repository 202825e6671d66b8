//! Reference kernels written independently of the library internals.
//!
//! Everything here works on widened integer vectors with naive nested loops
//! and exact wide arithmetic, so the library's fixed-point helpers, layout
//! tricks and SRAM plumbing can be checked against an implementation that is
//! too simple to be wrong in the same way.

/// Round `num / 2^s` to the nearest integer, ties away from zero, using
/// euclidean division on the exact wide value (a different route than the
/// shift-of-magnitude the library uses).
pub fn round_shift_exact(num: i128, s: u32) -> i128 {
    if s == 0 {
        return num;
    }
    let den = 1i128 << s;
    let q = num.div_euclid(den);
    let r = num.rem_euclid(den);
    match (2 * r).cmp(&den) {
        std::cmp::Ordering::Less => q,
        std::cmp::Ordering::Greater => q + 1,
        std::cmp::Ordering::Equal => {
            if num >= 0 {
                q + 1
            } else {
                q
            }
        }
    }
}

pub fn requant(acc: i32, m: u32, s: u32, lo: i8, hi: i8) -> i8 {
    let r = round_shift_exact(acc as i128 * m as i128, s);
    r.clamp(lo as i128, hi as i128) as i8
}

fn clamp_i8(v: i64) -> i8 {
    v.clamp(-128, 127) as i8
}

/// TensorFlow-style padding amounts for `same` mode.
pub fn same_pad(in_dim: usize, k: usize, stride: usize) -> (usize, usize) {
    let out = in_dim.div_ceil(stride);
    let total = ((out - 1) * stride + k).saturating_sub(in_dim);
    (total / 2, total - total / 2)
}

pub fn conv_out_dim(in_dim: usize, k: usize, stride: usize, same: bool) -> usize {
    if same {
        in_dim.div_ceil(stride)
    } else {
        (in_dim - k) / stride + 1
    }
}

pub struct ConvSpec {
    pub h: usize,
    pub w: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub same_pad: bool,
}

/// Plain NHWC convolution. `input` is the widened i8 map, `weights` is
/// [kh][kw][c_in][c_out], `bias` one i32 per output channel. Accumulation is
/// exact in i64 and truncated to i32 at the end, which equals per-step
/// wrapping i32 accumulation mod 2^32.
pub fn conv2d(spec: &ConvSpec, input: &[i32], weights: &[i32], bias: &[i32]) -> Vec<i32> {
    let (ho, wo) = (
        conv_out_dim(spec.h, spec.kh, spec.stride, spec.same_pad),
        conv_out_dim(spec.w, spec.kw, spec.stride, spec.same_pad),
    );
    let (pt, _) = if spec.same_pad {
        same_pad(spec.h, spec.kh, spec.stride)
    } else {
        (0, 0)
    };
    let (pl, _) = if spec.same_pad {
        same_pad(spec.w, spec.kw, spec.stride)
    } else {
        (0, 0)
    };
    let mut out = vec![0i32; ho * wo * spec.c_out];
    for oy in 0..ho {
        for ox in 0..wo {
            for oc in 0..spec.c_out {
                let mut acc = bias[oc] as i64;
                for ky in 0..spec.kh {
                    for kx in 0..spec.kw {
                        let iy = (oy * spec.stride + ky) as isize - pt as isize;
                        let ix = (ox * spec.stride + kx) as isize - pl as isize;
                        if iy < 0 || ix < 0 || iy >= spec.h as isize || ix >= spec.w as isize {
                            continue;
                        }
                        for ic in 0..spec.c_in {
                            let iv = input[(iy as usize * spec.w + ix as usize) * spec.c_in + ic];
                            let wv =
                                weights[((ky * spec.kw + kx) * spec.c_in + ic) * spec.c_out + oc];
                            acc += iv as i64 * wv as i64;
                        }
                    }
                }
                out[(oy * wo + ox) * spec.c_out + oc] = acc as i32;
            }
        }
    }
    out
}

/// Depthwise NHWC convolution, weights [kh][kw][c], bias per channel.
pub fn depthwise(spec: &ConvSpec, input: &[i32], weights: &[i32], bias: &[i32]) -> Vec<i32> {
    assert_eq!(spec.c_in, spec.c_out);
    let c = spec.c_in;
    let (ho, wo) = (
        conv_out_dim(spec.h, spec.kh, spec.stride, spec.same_pad),
        conv_out_dim(spec.w, spec.kw, spec.stride, spec.same_pad),
    );
    let (pt, _) = if spec.same_pad {
        same_pad(spec.h, spec.kh, spec.stride)
    } else {
        (0, 0)
    };
    let (pl, _) = if spec.same_pad {
        same_pad(spec.w, spec.kw, spec.stride)
    } else {
        (0, 0)
    };
    let mut out = vec![0i32; ho * wo * c];
    for oy in 0..ho {
        for ox in 0..wo {
            for ch in 0..c {
                let mut acc = bias[ch] as i64;
                for ky in 0..spec.kh {
                    for kx in 0..spec.kw {
                        let iy = (oy * spec.stride + ky) as isize - pt as isize;
                        let ix = (ox * spec.stride + kx) as isize - pl as isize;
                        if iy < 0 || ix < 0 || iy >= spec.h as isize || ix >= spec.w as isize {
                            continue;
                        }
                        let iv = input[(iy as usize * spec.w + ix as usize) * c + ch];
                        let wv = weights[(ky * spec.kw + kx) * c + ch];
                        acc += iv as i64 * wv as i64;
                    }
                }
                out[(oy * wo + ox) * c + ch] = acc as i32;
            }
        }
    }
    out
}

/// Fully connected layer over the flattened input, weights [features][out].
pub fn dense(input: &[i32], weights: &[i32], bias: &[i32], out_features: usize) -> Vec<i32> {
    let features = input.len();
    (0..out_features)
        .map(|o| {
            let mut acc = bias[o] as i64;
            for f in 0..features {
                acc += input[f] as i64 * weights[f * out_features + o] as i64;
            }
            acc as i32
        })
        .collect()
}

pub fn maxpool(h: usize, w: usize, c: usize, k: usize, stride: usize, input: &[i32]) -> Vec<i32> {
    let ho = (h - k) / stride + 1;
    let wo = (w - k) / stride + 1;
    let mut out = vec![0i32; ho * wo * c];
    for oy in 0..ho {
        for ox in 0..wo {
            for ch in 0..c {
                let mut best = i32::MIN;
                for ky in 0..k {
                    for kx in 0..k {
                        let v = input[((oy * stride + ky) * w + ox * stride + kx) * c + ch];
                        best = best.max(v);
                    }
                }
                out[(oy * wo + ox) * c + ch] = best;
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn avgpool(
    h: usize,
    w: usize,
    c: usize,
    k: usize,
    stride: usize,
    m: u32,
    s: u32,
    input: &[i32],
) -> Vec<i32> {
    let ho = (h - k) / stride + 1;
    let wo = (w - k) / stride + 1;
    let mut out = vec![0i32; ho * wo * c];
    for oy in 0..ho {
        for ox in 0..wo {
            for ch in 0..c {
                let mut sum = 0i64;
                for ky in 0..k {
                    for kx in 0..k {
                        sum += input[((oy * stride + ky) * w + ox * stride + kx) * c + ch] as i64;
                    }
                }
                out[(oy * wo + ox) * c + ch] = requant(sum as i32, m, s, i8::MIN, i8::MAX) as i32;
            }
        }
    }
    out
}

pub fn relu(input: &[i32]) -> Vec<i32> {
    input.iter().map(|&v| v.max(0)).collect()
}

pub fn leaky_relu(input: &[i32], m: u32, s: u32) -> Vec<i32> {
    input
        .iter()
        .map(|&v| {
            if v >= 0 {
                v
            } else {
                round_shift_exact(v as i128 * m as i128, s).clamp(-128, 127) as i32
            }
        })
        .collect()
}

pub fn ew_add_sat(a: &[i32], b: &[i32]) -> Vec<i32> {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| clamp_i8(x as i64 + y as i64) as i32)
        .collect()
}

pub fn ew_add_wrap32(a: &[i32], b: &[i32]) -> Vec<i32> {
    a.iter().zip(b).map(|(&x, &y)| x.wrapping_add(y)).collect()
}

pub fn ew_abs_sat(a: &[i32]) -> Vec<i32> {
    a.iter()
        .map(|&x| (x as i64).abs().min(127) as i32)
        .collect()
}

pub fn ew_min(a: &[i32], b: &[i32]) -> Vec<i32> {
    a.iter().zip(b).map(|(&x, &y)| x.min(y)).collect()
}

pub fn ew_max(a: &[i32], b: &[i32]) -> Vec<i32> {
    a.iter().zip(b).map(|(&x, &y)| x.max(y)).collect()
}

/// Count cycles of an output-parallel conv by actually walking the schedule:
/// every output pixel and kernel tap feeds one input channel to a group of at
/// most `p` PEs covering output channels of the tile.
pub fn pe_cycles_output(
    ho: usize,
    wo: usize,
    kh: usize,
    kw: usize,
    c_in: usize,
    c_t: usize,
    p: usize,
) -> u64 {
    let mut cycles = 0u64;
    for _pixel in 0..ho * wo {
        for _tap in 0..kh * kw {
            for _ic in 0..c_in {
                let mut done = 0;
                while done < c_t {
                    cycles += 1;
                    done += p.min(c_t - done);
                }
            }
        }
    }
    cycles
}

/// Input-parallel variant: groups of at most `p` input channels are reduced
/// per cycle while output channels are visited one at a time.
pub fn pe_cycles_input(
    ho: usize,
    wo: usize,
    kh: usize,
    kw: usize,
    c_in: usize,
    c_t: usize,
    p: usize,
) -> u64 {
    let mut cycles = 0u64;
    for _pixel in 0..ho * wo {
        for _tap in 0..kh * kw {
            for _oc in 0..c_t {
                let mut done = 0;
                while done < c_in {
                    cycles += 1;
                    done += p.min(c_in - done);
                }
            }
        }
    }
    cycles
}

/// Depthwise schedule: channels are both the input and output axis, so PEs
/// group over channels regardless of the parallelism mode.
pub fn pe_cycles_depthwise(
    ho: usize,
    wo: usize,
    kh: usize,
    kw: usize,
    c_t: usize,
    p: usize,
) -> u64 {
    let mut cycles = 0u64;
    for _pixel in 0..ho * wo {
        for _tap in 0..kh * kw {
            let mut done = 0;
            while done < c_t {
                cycles += 1;
                done += p.min(c_t - done);
            }
        }
    }
    cycles
}

/// The MobileNetV1 (width 1.0, 224x224) conv-style layers as
/// (out_h, out_w, k, c_in, c_out, in_h, in_w) rows, written out by hand from
/// the architecture table. The final row is the classifier matmul.
pub const MOBILENET_CONV_LAYERS: [(usize, usize, usize, usize, usize, usize, usize); 15] = [
    (112, 112, 3, 3, 32, 224, 224),
    (112, 112, 1, 32, 64, 112, 112),
    (56, 56, 1, 64, 128, 56, 56),
    (56, 56, 1, 128, 128, 56, 56),
    (28, 28, 1, 128, 256, 28, 28),
    (28, 28, 1, 256, 256, 28, 28),
    (14, 14, 1, 256, 512, 14, 14),
    (14, 14, 1, 512, 512, 14, 14),
    (14, 14, 1, 512, 512, 14, 14),
    (14, 14, 1, 512, 512, 14, 14),
    (14, 14, 1, 512, 512, 14, 14),
    (14, 14, 1, 512, 512, 14, 14),
    (7, 7, 1, 512, 1024, 7, 7),
    (7, 7, 1, 1024, 1024, 7, 7),
    (1, 1, 1, 1024, 1000, 1, 1),
];

/// Depthwise layers as (out_h, out_w, c, in_h, in_w) rows.
pub const MOBILENET_DW_LAYERS: [(usize, usize, usize, usize, usize); 13] = [
    (112, 112, 32, 112, 112),
    (56, 56, 64, 112, 112),
    (56, 56, 128, 56, 56),
    (28, 28, 128, 56, 56),
    (28, 28, 256, 28, 28),
    (14, 14, 256, 28, 28),
    (14, 14, 512, 14, 14),
    (14, 14, 512, 14, 14),
    (14, 14, 512, 14, 14),
    (14, 14, 512, 14, 14),
    (14, 14, 512, 14, 14),
    (7, 7, 512, 14, 14),
    (7, 7, 1024, 7, 7),
];

/// Total depthwise multiply-accumulates in MobileNetV1: sum of
/// out_h*out_w*9*c over the 13 layers above.
pub const MOBILENET_DW_MACS: u64 = 17_385_984;

/// MACs of one 512->512 pointwise layer at 14x14.
pub const MOBILENET_PW_512_MACS: u64 = 51_380_224;

/// Untiled CONV-cycle totals over the 15 conv/matmul layers,
/// sum of ho*wo*k*k*c_in*ceil(c_out/p) (output-parallel) or
/// ho*wo*k*k*c_out*ceil(c_in/p) (input-parallel).
pub const MOBILENET_CONV_CYCLES_P128_OUTPUT: u64 = 4_762_368;
pub const MOBILENET_CONV_CYCLES_P64_OUTPUT: u64 = 8_784_640;
pub const MOBILENET_CONV_CYCLES_P128_INPUT: u64 = 8_638_272;
pub const MOBILENET_CONV_CYCLES_P64_INPUT: u64 = 12_459_648;

/// Output-channel tiling with the documented SRAM footprint model
/// (full input map + per-tile weights, bias and output), evaluated for the
/// MobileNet conv layers. These are the library-model totals, frozen from an
/// independent per-layer evaluation of the published closed forms.
pub const MOBILENET_CONV_CYCLES_P128_OUTPUT_1MIB: u64 = 8_111_616;
pub const MOBILENET_CONV_CYCLES_P128_OUTPUT_512KIB: u64 = 25_384_704;

/// Compute tiled output-parallel conv cycles for the MobileNet layer table
/// with an independently written footprint/tile/cost evaluation.
pub fn mobilenet_tiled_conv_cycles_output(p: u64, sram: u64) -> Option<u64> {
    let mut total = 0u64;
    for &(ho, wo, k, c_in, c_out, ih, iw) in &MOBILENET_CONV_LAYERS {
        let (ho, wo, k, c_in, c_out, ih, iw) = (
            ho as u64,
            wo as u64,
            k as u64,
            c_in as u64,
            c_out as u64,
            ih as u64,
            iw as u64,
        );
        let input_bytes = ih * iw * c_in;
        let per_channel = k * k * c_in + 4 + 4 * ho * wo;
        let fits = |ct: u64| input_bytes + per_channel * ct <= sram;
        if !fits(1) {
            return None;
        }
        let mut ct = c_out;
        while !fits(ct) {
            ct -= 1;
        }
        if ct >= p {
            ct = (ct / p) * p;
        }
        let mut remaining = c_out;
        while remaining > 0 {
            let t = ct.min(remaining);
            total += ho * wo * k * k * c_in * t.div_ceil(p);
            remaining -= t;
        }
    }
    Some(total)
}
