//! Layer building blocks recorded on a [`Tape`].

use crate::error::{ensure, Result};
use crate::tape::{Tape, Var};

/// `x·W (+ b)` with `b` a `1×out` row.
pub fn linear(tape: &mut Tape, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    match b {
        Some(b) => tape.add_row(y, b),
        None => Ok(y),
    }
}

/// Multi-head scaled dot-product attention. `q` is `Lq×D`, `k` and `v` are
/// `Lk×D`; each head sees a contiguous `D/h` column block and logits are
/// scaled by `1/√(D/h)`.
pub fn attention(tape: &mut Tape, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
    let (_, d) = tape.shape(q);
    ensure!(heads > 0 && d % heads == 0, "model dim {d} is not divisible by {heads} heads");
    ensure!(tape.shape(k).1 == d && tape.shape(v).1 == d, "query/key/value widths differ");
    ensure!(tape.shape(k).0 == tape.shape(v).0, "key and value lengths differ");
    let hd = d / heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice_cols(q, h * hd, hd)?;
        let kh = tape.slice_cols(k, h * hd, hd)?;
        let vh = tape.slice_cols(v, h * hd, hd)?;
        let logits = tape.matmul_nt(qh, kh)?;
        let logits = tape.scale(logits, scale);
        let p = tape.softmax_rows(logits);
        outs.push(tape.matmul(p, vh)?);
    }
    if outs.len() == 1 {
        Ok(outs[0])
    } else {
        tape.concat_cols(&outs)
    }
}

/// RMS normalisation followed by a learned per-channel gain.
pub fn rms_norm(tape: &mut Tape, x: Var, gain: Var) -> Result<Var> {
    let n = tape.rms_norm(x, 1e-6);
    tape.mul_row(n, gain)
}
