//! Attention heads that couple one token pair and nothing else.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;
use crate::transformer::{positional_encoding, Activation, AttentionHead, TokenMatrix, STATIC_ROWS};

/// Largest constant the construction will emit.
pub const MAX_CONSTANT: f64 = 1e300;

/// Everything needed to build a head whose output is
/// `ReLU(⟨Q_data h_{t1}, K_data h_{t2}⟩) e_i` in column `t1` and zero
/// elsewhere. Columns and rows are 0-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionRequest {
    pub t1: usize,
    pub t2: usize,
    pub value_row: usize,
    /// `(d − 3) × d`
    pub q_data: SparseMatrix,
    /// `(d − 3) × d`
    pub k_data: SparseMatrix,
    pub len: usize,
    /// Bound on every entry of any `H` the head will see (at least 1, the
    /// static entries).
    pub u_bound: f64,
    /// Bound on every entry of `Q_data` and `K_data`.
    pub kappa_data: f64,
    pub safety_factor: f64,
}

impl InteractionRequest {
    pub fn d_embed(&self) -> usize {
        self.q_data.cols()
    }

    fn validate(&self) -> Result<()> {
        let d = self.d_embed();
        if d < 5 {
            return Err(Error::Parameter(format!("d_embed must be ≥ 5, got {d}")));
        }
        for (name, m) in [("Q_data", &self.q_data), ("K_data", &self.k_data)] {
            if m.rows() != d - STATIC_ROWS || m.cols() != d {
                return Err(Error::Parameter(format!(
                    "{name} is {}x{}, expected {}x{d}",
                    m.rows(),
                    m.cols(),
                    d - STATIC_ROWS
                )));
            }
            if m.max_abs() > self.kappa_data {
                return Err(Error::Parameter(format!(
                    "{name} has an entry above κ_data = {}",
                    self.kappa_data
                )));
            }
        }
        if self.t1 >= self.len || self.t2 >= self.len {
            return Err(Error::Parameter(format!(
                "token pair ({}, {}) outside 0..{}",
                self.t1, self.t2, self.len
            )));
        }
        if self.value_row >= d {
            return Err(Error::Parameter(format!("value row {} outside 0..{d}", self.value_row)));
        }
        if !(self.u_bound > 0.0 && self.kappa_data > 0.0 && self.safety_factor > 0.0) {
            return Err(Error::Parameter("U, κ_data and the safety factor must be positive".into()));
        }
        Ok(())
    }
}

/// `1 − cos(g π / 2ℓ)` minimised over the nonzero gaps `g` of the grid, which
/// lower-bounds both `1 − ‖P_{I_{t2}} I_k‖` (k ≠ t2) and `1 − cos θ` between
/// the rotated query encoding and `I_{t2}` (t ≠ t1).
///
/// Every gap angle `gπ/4ℓ` stays below `π/4`, where `sin²` is increasing, so
/// the minimum sits at `g = 1`.
pub fn min_separation(len: usize) -> f64 {
    if len < 2 {
        return f64::INFINITY;
    }
    let half = std::f64::consts::PI / (4.0 * len as f64);
    2.0 * half.sin().powi(2)
}

/// `C = safety · d⁴ κ_data² U² / min_separation(ℓ)`; depends only on the
/// request's bounds and sizes, never on data.
pub fn interaction_constant(req: &InteractionRequest) -> f64 {
    let d = req.d_embed() as f64;
    let numerator = d.powi(4) * req.kappa_data.powi(2) * req.u_bound.powi(2);
    let denominator = if req.len > 1 { min_separation(req.len) } else { 1.0 };
    req.safety_factor * numerator / denominator
}

/// Canonical column with zero data rows and the static rows of position
/// `col + 1`.
fn static_column(d: usize, col: usize, len: usize) -> Vec<f64> {
    let mut v = vec![0.0; d];
    let (c, s) = positional_encoding(col + 1, len).expect("col in range");
    v[d - 3] = c;
    v[d - 2] = s;
    v[d - 1] = 1.0;
    v
}

pub fn build_interaction_head(req: &InteractionRequest) -> Result<AttentionHead> {
    req.validate()?;
    let c = interaction_constant(req);
    if !(c.is_finite() && c <= MAX_CONSTANT) {
        return Err(Error::Construction(format!(
            "interaction constant {c:e} exceeds {MAX_CONSTANT:e}; use a larger bandwidth"
        )));
    }
    let d = req.d_embed();
    let (cos_r, sin_r) = (d - 3, d - 2);
    let ones = d - 1;
    let len = req.len;
    let (c1, s1) = positional_encoding(req.t1 + 1, len)?;
    let (c2, s2) = positional_encoding(req.t2 + 1, len)?;
    // Rotation taking I_{t1} to I_{t2}, dilated by C.
    let (cd, sd) = (c2 * c1 + s2 * s1, s2 * c1 - c2 * s1);
    let q_pos = vec![
        (cos_r, cos_r, c * cd),
        (cos_r, sin_r, -c * sd),
        (sin_r, cos_r, c * sd),
        (sin_r, sin_r, c * cd),
    ];
    // Projection onto I_{t2}.
    let k_pos = vec![
        (cos_r, cos_r, c2 * c2),
        (cos_r, sin_r, c2 * s2),
        (sin_r, cos_r, s2 * c2),
        (sin_r, sin_r, s2 * s2),
    ];

    // The positional score at (t1, t2) as the forward pass will round it;
    // the ones row subtracts exactly this value so the target pair's score
    // is the data term alone.
    let probe = AttentionHead::relu(
        SparseMatrix::from_triplets(d, d, q_pos.clone())?,
        SparseMatrix::from_triplets(d, d, k_pos.clone())?,
        SparseMatrix::zeros(d, d),
    );
    let mut probe_h = TokenMatrix::zeros(d, 2);
    probe_h.column_mut(0).copy_from_slice(&static_column(d, req.t1, len));
    probe_h.column_mut(1).copy_from_slice(&static_column(d, req.t2, len));
    let peak = probe.score(&probe_h, 0, 1);

    let mut q = q_pos;
    q.push((ones, ones, 1.0));
    q.extend(req.q_data.entries().iter().copied());
    let mut k = k_pos;
    k.push((ones, ones, -peak));
    k.extend(req.k_data.entries().iter().copied());
    let v = SparseMatrix::from_triplets(d, d, vec![(req.value_row, ones, 1.0)])?;
    Ok(AttentionHead {
        q: SparseMatrix::from_triplets(d, d, q)?,
        k: SparseMatrix::from_triplets(d, d, k)?,
        v,
        activation: Activation::Relu,
        interaction: Some((req.t1, req.t2)),
    })
}
