//! The five-block network computing the Nadaraya–Watson estimate exactly.
//!
//! With `D` the ambient dimension, `d = D + 5`, `ℓ = 2n + 1` and 0-based
//! indices: data columns `0..n`, query column `n`, scratch columns
//! `n+1..=2n` (scratch column `n+1+j` is paired with data column `j`); rows
//! `0..D` hold points, row `D` labels and row `D+1` is scratch.
//!
//! 1. copy `x_{n+1} + M₁` into every scratch column, then subtract `M₁`;
//! 2. add `M₁ − x_j` to scratch column `j`, then subtract `M₁`;
//! 3. write `M₂ − ‖x_{n+1} − x_j‖² / h²` into the label row of scratch
//!    column `j`;
//! 4. copy `y_j + M₂` into the scratch row, then subtract `M₂` from both;
//! 5. masked softmax from the query over the scratch columns, weighting
//!    their labels by `exp(−‖x_{n+1} − x_j‖² / h²)`.
//!
//! `M₁` and `M₂` are powers of two so that the decrements round at most
//! once and the offset terms vanish exactly.

use serde::{Deserialize, Serialize};

use super::gating::build_decrement_ffn;
use super::interaction::{build_interaction_head, interaction_constant, InteractionRequest, MAX_CONSTANT};
use crate::error::{Error, Result};
use crate::kernel::Bandwidth;
use crate::sparse::SparseMatrix;
use crate::transformer::{Activation, AttentionHead, Block, FfnStack, TransformerSpec, STATIC_ROWS};

/// Inputs to [`build_kernel_transformer`]; the construction sees nothing
/// else, in particular no prompt data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub n: usize,
    pub ambient_dim: usize,
    pub bandwidth: f64,
    /// `b`: bound on every coordinate of every point.
    pub coord_bound: f64,
    /// `R`: bound on every label.
    pub label_bound: f64,
    pub safety_factor: f64,
}

/// Per-stage bounds that feed the interaction constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageBounds {
    pub u_bound: f64,
    pub kappa_data: f64,
    pub interaction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuiltConstants {
    /// `M₁ ≥ b + 1`, used by the copy and difference stages.
    pub m_copy: f64,
    /// `M₂ ≥ max(4b²D/h², R) + 1`.
    pub m_offset: f64,
    /// Blocks 1–4.
    pub stages: [StageBounds; 4],
    pub safety_factor: f64,
}

impl BuiltConstants {
    /// Largest interaction constant over the stages.
    pub fn c_interaction(&self) -> f64 {
        self.stages.iter().fold(0.0, |m, s| m.max(s.interaction))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelTransformer {
    pub params: KernelParams,
    pub constants: BuiltConstants,
    pub spec: TransformerSpec,
}

impl KernelTransformer {
    /// Reference order of `κ`: `D⁸ n² b⁸ R⁴ / h⁸`.
    pub fn kappa_reference(&self) -> f64 {
        let p = &self.params;
        (p.ambient_dim as f64).powi(8) * (p.n as f64).powi(2) * p.coord_bound.powi(8)
            * p.label_bound.powi(4)
            / p.bandwidth.powi(8)
    }
}

/// Smallest power of two `≥ x`.
pub fn pow2_ceil(x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let mut p = 2f64.powi(x.log2().floor() as i32);
    while p < x {
        p *= 2.0;
    }
    while p / 2.0 >= x {
        p /= 2.0;
    }
    p
}

pub fn build_kernel_transformer(
    n: usize,
    ambient_dim: usize,
    h: Bandwidth,
    b: f64,
    r: f64,
    safety_factor: f64,
) -> Result<KernelTransformer> {
    let params = KernelParams {
        n,
        ambient_dim,
        bandwidth: h.get(),
        coord_bound: b,
        label_bound: r,
        safety_factor,
    };
    build(params)
}

pub fn build(params: KernelParams) -> Result<KernelTransformer> {
    let KernelParams {
        n,
        ambient_dim: dim,
        bandwidth: h,
        coord_bound: b,
        label_bound: r,
        safety_factor: sf,
    } = params;
    if n == 0 || dim == 0 {
        return Err(Error::Parameter(format!("need n ≥ 1 and D ≥ 1, got n = {n}, D = {dim}")));
    }
    let h = Bandwidth::new(h)?.get();
    if !(b > 0.0 && r > 0.0 && b.is_finite() && r.is_finite()) {
        return Err(Error::Parameter(format!("need b, R > 0, got b = {b}, R = {r}")));
    }
    if !(sf > 0.0 && sf.is_finite()) {
        return Err(Error::Parameter(format!("safety factor must be positive, got {sf}")));
    }
    if sf < 1.0 {
        log::warn!("safety factor {sf} < 1: the compiled constants are below the proven bounds");
    }

    let d = dim + 5;
    let len = 2 * n + 1;
    let (row_y, row_z, ones) = (dim, dim + 1, d - 1);
    let query = n;
    let scratch = |j: usize| n + 1 + j;

    let m_copy = pow2_ceil(b + 1.0);
    let m_offset = pow2_ceil((4.0 * b * b * dim as f64 / (h * h)).max(r) + 1.0);
    if !(m_offset.is_finite() && m_offset <= MAX_CONSTANT) {
        return Err(Error::Construction(format!(
            "offset constant {m_offset:e} overflows; use a larger bandwidth"
        )));
    }

    let stage = |u_bound: f64, kappa_data: f64| -> StageBounds {
        let probe = InteractionRequest {
            t1: 0,
            t2: 0,
            value_row: 0,
            q_data: SparseMatrix::zeros(d - STATIC_ROWS, d),
            k_data: SparseMatrix::zeros(d - STATIC_ROWS, d),
            len,
            u_bound,
            kappa_data,
            safety_factor: sf,
        };
        StageBounds {
            u_bound,
            kappa_data,
            interaction: interaction_constant(&probe),
        }
    };
    let stages = [
        stage(b.max(r).max(1.0), m_copy.max(1.0)),
        stage(b.max(r).max(1.0), m_copy.max(1.0)),
        stage((2.0 * b).max(r).max(1.0), (1.0 / h).max(m_offset)),
        stage((2.0 * b).max(r).max(m_offset).max(1.0), m_offset.max(1.0)),
    ];

    let data_matrix = |entries: Vec<(usize, usize, f64)>| SparseMatrix::from_triplets(d - STATIC_ROWS, d, entries);
    let head = |s: &StageBounds, t1: usize, t2: usize, value_row: usize, q: Vec<(usize, usize, f64)>, k: Vec<(usize, usize, f64)>| -> Result<AttentionHead> {
        build_interaction_head(&InteractionRequest {
            t1,
            t2,
            value_row,
            q_data: data_matrix(q)?,
            k_data: data_matrix(k)?,
            len,
            u_bound: s.u_bound,
            kappa_data: s.kappa_data,
            safety_factor: sf,
        })
    };
    let window = (n + 1)..len;

    // Block 1: scratch column j, row i ← (x_{n+1})_i + M₁.
    let mut heads = Vec::with_capacity(n * dim);
    for i in 0..dim {
        for j in 0..n {
            heads.push(head(
                &stages[0],
                scratch(j),
                query,
                i,
                vec![(i, ones, 1.0)],
                vec![(i, i, 1.0), (i, ones, m_copy)],
            )?);
        }
    }
    let b1 = Block {
        heads,
        ffn: build_decrement_ffn(0..dim, window.clone(), m_copy, len, d, sf)?,
    };

    // Block 2: scratch column j, row i += M₁ − (x_j)_i.
    let mut heads = Vec::with_capacity(n * dim);
    for i in 0..dim {
        for j in 0..n {
            heads.push(head(
                &stages[1],
                scratch(j),
                j,
                i,
                vec![(i, ones, -1.0), (row_z, ones, 1.0)],
                vec![(i, i, 1.0), (row_z, row_z, 1.0), (row_z, ones, m_copy)],
            )?);
        }
    }
    let b2 = Block {
        heads,
        ffn: build_decrement_ffn(0..dim, window.clone(), m_copy, len, d, sf)?,
    };

    // Block 3: label row of scratch column j ← M₂ − ‖Δ_j‖² / h².
    let inv_h = 1.0 / h;
    let heads = (0..n)
        .map(|j| {
            let mut q: Vec<_> = (0..dim).map(|k| (k, k, -inv_h)).collect();
            let mut k: Vec<_> = (0..dim).map(|k| (k, k, inv_h)).collect();
            q.push((row_z, ones, 1.0));
            k.push((row_z, ones, m_offset));
            head(&stages[2], scratch(j), scratch(j), row_y, q, k)
        })
        .collect::<Result<Vec<_>>>()?;
    let b3 = Block {
        heads,
        ffn: FfnStack::identity(d),
    };

    // Block 4: scratch row of scratch column j ← y_j + M₂; subtract M₂ from
    // the label and scratch rows.
    let heads = (0..n)
        .map(|j| {
            head(
                &stages[3],
                scratch(j),
                j,
                row_z,
                vec![(row_z, ones, 1.0)],
                vec![(row_z, row_y, 1.0), (row_z, ones, m_offset)],
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let b4 = Block {
        heads,
        ffn: build_decrement_ffn(row_y..row_z + 1, window.clone(), m_offset, len, d, sf)?,
    };

    // Block 5: softmax over scratch logits, values are the copied labels.
    let b5 = Block {
        heads: vec![AttentionHead {
            q: SparseMatrix::from_triplets(d, d, vec![(row_y, ones, 1.0)])?,
            k: SparseMatrix::from_triplets(d, d, vec![(row_y, row_y, 1.0)])?,
            v: SparseMatrix::from_triplets(d, d, vec![(row_y, row_z, 1.0)])?,
            activation: Activation::SoftmaxMasked {
                query,
                mask: window.collect(),
            },
            interaction: None,
        }],
        ffn: FfnStack::identity(d),
    };

    let spec = TransformerSpec::new(vec![b1, b2, b3, b4, b5], (row_y, query), d, len, r)?;
    Ok(KernelTransformer {
        params,
        constants: BuiltConstants {
            m_copy,
            m_offset,
            stages,
            safety_factor: sf,
        },
        spec,
    })
}
