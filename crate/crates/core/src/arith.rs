//! Fixed-point helpers shared by the reference interpreter and the
//! functional simulator so both sides stay bit-identical by construction.

/// Shift `v` right by `s` with round-to-nearest, ties away from zero.
/// Evaluated in i128 so `i32 * u32` products survive the rounding add.
pub fn rshift_round(v: i64, s: u32) -> i64 {
    if s == 0 {
        return v;
    }
    let v = v as i128;
    let half = 1i128 << (s - 1);
    let r = if v >= 0 {
        (v + half) >> s
    } else {
        -((-v + half) >> s)
    };
    r as i64
}

/// Requantize an i32 accumulator: multiply, round-shift, clamp.
pub fn requantize(acc: i32, m: u32, s: u32, lo: i8, hi: i8) -> i8 {
    let r = rshift_round(acc as i64 * m as i64, s);
    r.clamp(lo as i64, hi as i64) as i8
}

/// i8 absolute value saturating at the type bound (|-128| -> 127).
pub fn abs_sat_i8(v: i8) -> i8 {
    v.saturating_abs()
}

/// Negative-side scaling for the leaky activation.
pub fn leaky_neg(v: i8, m: u32, s: u32) -> i8 {
    debug_assert!(v < 0);
    let r = rshift_round(v as i64 * m as i64, s);
    r.clamp(-128, 127) as i8
}
