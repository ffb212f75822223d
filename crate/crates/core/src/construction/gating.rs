//! Tokenwise FFNs that act only on one side of a column split.
//!
//! A gate neuron reads the positional rows of a token through a direction
//! `v` that separates the positions left of the split from those right of
//! it; scaled by a large constant it dominates any value it is subtracted
//! from. Because the positional encodings lie on a quarter circle, the
//! separating direction is the normal of the midpoint angle between the two
//! positions straddling the split.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::interaction::MAX_CONSTANT;
use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;
use crate::transformer::{FfnLayer, FfnStack, STATIC_ROWS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateSide {
    /// Keep columns `0..split`, zero the chosen rows of `split..ℓ`.
    ZeroRight,
    /// Zero the chosen rows of `0..split`, keep `split..ℓ`.
    ZeroLeft,
}

/// Weights `(w_cos, w_sin)` of a gate neuron that is `0` on the protected
/// side and at least `safety · bound` on the gated side.
pub fn gate_weights(
    split: usize,
    side: GateSide,
    bound: f64,
    len: usize,
    safety: f64,
) -> Result<(f64, f64)> {
    if split == 0 || split >= len {
        return Err(Error::Parameter(format!(
            "no separating direction for split {split} of {len} columns (need 1 ≤ split ≤ ℓ − 1)"
        )));
    }
    let step = std::f64::consts::FRAC_PI_2 / len as f64;
    let mid = (split as f64 + 0.5) * step;
    // s(t) = sin(mid − φ_t) is positive exactly on columns left of the split
    // and at least sin(step / 2) in magnitude.
    let c = safety * bound / (step / 2.0).sin();
    if !(c.is_finite() && c <= MAX_CONSTANT) {
        return Err(Error::Construction(format!(
            "gate constant {c:e} exceeds {MAX_CONSTANT:e}"
        )));
    }
    let (sm, cm) = (mid.sin(), mid.cos());
    Ok(match side {
        GateSide::ZeroRight => (-c * sm, c * cm),
        GateSide::ZeroLeft => (c * sm, -c * cm),
    })
}

fn check_rows(rows: &Range<usize>, d: usize) -> Result<()> {
    if rows.is_empty() || rows.end > d - STATIC_ROWS {
        return Err(Error::Parameter(format!(
            "row range {rows:?} must be nonempty inside the data rows 0..{}",
            d - STATIC_ROWS
        )));
    }
    Ok(())
}

fn layer(out: usize, inp: usize, w: Vec<(usize, usize, f64)>, bias: Vec<f64>) -> Result<FfnLayer> {
    FfnLayer::new(SparseMatrix::from_triplets(out, inp, w)?, bias)
}

/// Three-layer non-residual FFN: identity on protected columns, zero on the
/// gated side in `rows`, identity on every other row.
pub fn build_gating_ffn(
    rows: Range<usize>,
    split: usize,
    side: GateSide,
    h_bound: f64,
    len: usize,
    d: usize,
    safety: f64,
) -> Result<FfnStack> {
    if d <= STATIC_ROWS + 1 {
        return Err(Error::Parameter(format!("d_embed must be ≥ 5, got {d}")));
    }
    check_rows(&rows, d)?;
    let (wc, ws) = gate_weights(split, side, h_bound, len, safety)?;
    let gate = 2 * d;

    // Split every entry into positive and negative parts so the gate can be
    // subtracted from nonnegative quantities. The static rows go through the
    // same split: the positional rows carry tiny negative values at the ends.
    let mut w1 = Vec::new();
    for r in 0..d {
        w1.push((r, r, 1.0));
        w1.push((d + r, r, -1.0));
    }
    w1.push((gate, d - 3, wc));
    w1.push((gate, d - 2, ws));
    let l1 = layer(gate + 1, d, w1, vec![0.0; gate + 1])?;

    let mut w2 = Vec::new();
    for r in 0..d {
        w2.push((r, r, 1.0));
        w2.push((d + r, d + r, 1.0));
        if rows.contains(&r) {
            w2.push((r, gate, -1.0));
            w2.push((d + r, gate, -1.0));
        }
    }
    let l2 = layer(gate, gate + 1, w2, vec![0.0; gate])?;

    let mut w3 = Vec::new();
    for r in 0..d {
        w3.push((r, r, 1.0));
        w3.push((r, d + r, -1.0));
    }
    let l3 = layer(d, gate, w3, vec![0.0; d])?;
    FfnStack::new(vec![l1, l2, l3], false)
}

/// Six-layer residual FFN subtracting `m` from `rows` on the columns of
/// `window` (0-based, half-open) and leaving everything else untouched.
///
/// Layer 1 injects the constant `m` and copies the positional rows, layers
/// 2–3 gate it off right of the window, layers 4–5 left of it, and layer 6
/// negates into `rows`. The output is exactly `−m` or `0`, so the residual
/// sum is `h − m` rounded once.
pub fn build_decrement_ffn(
    rows: Range<usize>,
    window: Range<usize>,
    m: f64,
    len: usize,
    d: usize,
    safety: f64,
) -> Result<FfnStack> {
    if d <= STATIC_ROWS + 1 {
        return Err(Error::Parameter(format!("d_embed must be ≥ 5, got {d}")));
    }
    check_rows(&rows, d)?;
    if window.is_empty() || window.end > len {
        return Err(Error::Parameter(format!(
            "column window {window:?} must be nonempty inside 0..{len}"
        )));
    }
    if !(m >= 0.0 && m.is_finite()) {
        return Err(Error::Parameter(format!("decrement must be finite and ≥ 0, got {m}")));
    }
    let nr = rows.len();
    let (cos_in, sin_in) = (nr, nr + 1);
    let gate = nr + STATIC_ROWS;
    let keep = |w: &mut Vec<(usize, usize, f64)>| {
        for i in 0..gate {
            w.push((i, i, 1.0));
        }
    };

    let mut w1 = Vec::new();
    for s in 0..STATIC_ROWS {
        w1.push((nr + s, d - STATIC_ROWS + s, 1.0));
    }
    let mut b1 = vec![m; nr];
    b1.extend([0.0; STATIC_ROWS]);
    let l1 = layer(gate, d, w1, b1)?;

    let gate_layer = |side: Option<(usize, GateSide)>| -> Result<FfnLayer> {
        let mut w = Vec::new();
        keep(&mut w);
        if let Some((split, side)) = side {
            let (wc, ws) = gate_weights(split, side, m, len, safety)?;
            w.push((gate, cos_in, wc));
            w.push((gate, sin_in, ws));
        }
        layer(gate + 1, gate, w, vec![0.0; gate + 1])
    };
    let subtract = || -> Result<FfnLayer> {
        let mut w = Vec::new();
        keep(&mut w);
        for i in 0..nr {
            w.push((i, gate, -1.0));
        }
        layer(gate, gate + 1, w, vec![0.0; gate])
    };

    let right = (window.end < len).then_some((window.end, GateSide::ZeroRight));
    let left = (window.start > 0).then_some((window.start, GateSide::ZeroLeft));
    let l2 = gate_layer(right)?;
    let l3 = subtract()?;
    let l4 = gate_layer(left)?;
    let l5 = subtract()?;

    let w6 = (0..nr).map(|i| (rows.start + i, i, -1.0)).collect();
    let l6 = layer(d, gate, w6, vec![0.0; d])?;
    FfnStack::new(vec![l1, l2, l3, l4, l5, l6], true)
}
