//! ReLU and masked-softmax attention.
//!
//! Scores `⟨Q h_i, K h_j⟩` are accumulated over the rows where both `Q` and
//! `K` are nonzero, static rows first and then data rows, each in increasing
//! order. Fixing this order is what lets the compiled interaction heads
//! cancel their large positional term to exactly zero at the target pair.
//!
//! ReLU heads are evaluated on a pruned set of `(i, j)` pairs when the static
//! part of the score has the separable form `(u·I_i)(v·I_j) + c`: a rigorous
//! bound on the data part then excludes every pair whose score cannot be
//! positive, and the remaining pairs are evaluated with the same arithmetic
//! as the full `O(ℓ²)` sweep. Both paths therefore produce bit-identical
//! output (see the tests).

use serde::{Deserialize, Serialize};

use super::token::{position_angle, TokenMatrix, STATIC_ROWS};
use crate::error::{Error, Result};
use crate::sparse::{row_dot, SparseMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    /// Softmax over the key columns `mask`, producing output only in the
    /// query column.
    SoftmaxMasked { query: usize, mask: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionHead {
    pub q: SparseMatrix,
    pub k: SparseMatrix,
    pub v: SparseMatrix,
    pub activation: Activation,
    /// `(t1, t2)` for heads compiled to couple token `t1` with token `t2`;
    /// used only by diagnostics.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interaction: Option<(usize, usize)>,
}

impl AttentionHead {
    pub fn relu(q: SparseMatrix, k: SparseMatrix, v: SparseMatrix) -> Self {
        Self {
            q,
            k,
            v,
            activation: Activation::Relu,
            interaction: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.q.rows()
    }

    pub fn validate(&self, d: usize, len: usize) -> Result<()> {
        for (name, m) in [("Q", &self.q), ("K", &self.k), ("V", &self.v)] {
            if m.rows() != d || m.cols() != d {
                return Err(Error::Config(format!(
                    "{name} is {}x{}, expected {d}x{d}",
                    m.rows(),
                    m.cols()
                )));
            }
        }
        if let Activation::SoftmaxMasked { query, mask } = &self.activation {
            if mask.is_empty() {
                return Err(Error::Config("softmax head has an empty mask".into()));
            }
            if *query >= len || mask.iter().any(|&j| j >= len) {
                return Err(Error::Config(format!(
                    "softmax head addresses a column outside 0..{len}"
                )));
            }
        }
        if let Some((t1, t2)) = self.interaction {
            if t1 >= len || t2 >= len {
                return Err(Error::Config("interaction label outside the token range".into()));
            }
        }
        Ok(())
    }

    pub fn max_abs_weight(&self) -> f64 {
        self.q.max_abs().max(self.k.max_abs()).max(self.v.max_abs())
    }

    /// Rows contributing to the score, in accumulation order.
    pub(crate) fn score_rows(&self) -> Vec<usize> {
        let d = self.dim();
        let active = |r: usize| !self.q.row(r).is_empty() && !self.k.row(r).is_empty();
        let first_static = d.saturating_sub(STATIC_ROWS);
        (first_static..d)
            .chain(0..first_static)
            .filter(|&r| active(r))
            .collect()
    }

    /// `⟨Q h_i, K h_j⟩` with the canonical accumulation order.
    pub fn score(&self, h: &TokenMatrix, i: usize, j: usize) -> f64 {
        let rows = self.score_rows();
        let qh = project(&self.q, &rows, h.column(i));
        let kh = project(&self.k, &rows, h.column(j));
        dot(&qh, &kh)
    }
}

/// Per-matrix facts shared by every head applied to the same `H`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Context {
    data_bound: f64,
    canonical: bool,
}

impl Context {
    pub(crate) fn new(h: &TokenMatrix) -> Self {
        Self {
            data_bound: h.data_max_abs(),
            canonical: h.has_canonical_static_rows(),
        }
    }
}

#[inline]
fn project(m: &SparseMatrix, rows: &[usize], col: &[f64]) -> Vec<f64> {
    rows.iter().map(|&r| row_dot(m.row(r), col)).collect()
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Output of one head, column `i = Σ_j σ(⟨Q h_i, K h_j⟩) V h_j`.
pub fn attention_apply(head: &AttentionHead, h: &TokenMatrix) -> Result<TokenMatrix> {
    head.validate(h.rows(), h.cols())?;
    let mut out = TokenMatrix::zeros(h.rows(), h.cols());
    head_accumulate(head, h, &Context::new(h), &mut out, false);
    Ok(out)
}

/// Same as [`attention_apply`] but always sweeps all `ℓ²` pairs.
pub fn attention_apply_dense(head: &AttentionHead, h: &TokenMatrix) -> Result<TokenMatrix> {
    head.validate(h.rows(), h.cols())?;
    let mut out = TokenMatrix::zeros(h.rows(), h.cols());
    head_accumulate(head, h, &Context::new(h), &mut out, true);
    Ok(out)
}

/// Masked-softmax head evaluated for `query_col`; all other columns are
/// zero.
pub fn attention_softmax_masked(
    head: &AttentionHead,
    h: &TokenMatrix,
    query_col: usize,
) -> Result<TokenMatrix> {
    let Activation::SoftmaxMasked { mask, .. } = &head.activation else {
        return Err(Error::Config("head is not a masked-softmax head".into()));
    };
    if mask.is_empty() {
        return Err(Error::Config("softmax head has an empty mask".into()));
    }
    if query_col >= h.cols() || mask.iter().any(|&j| j >= h.cols()) {
        return Err(Error::Config("softmax mask or query outside the token range".into()));
    }
    let mut out = TokenMatrix::zeros(h.rows(), h.cols());
    softmax_accumulate(head, h, query_col, mask, &mut out);
    Ok(out)
}

pub(crate) fn head_accumulate(
    head: &AttentionHead,
    h: &TokenMatrix,
    ctx: &Context,
    out: &mut TokenMatrix,
    force_dense: bool,
) {
    match &head.activation {
        Activation::Relu => relu_accumulate(head, h, ctx, out, force_dense),
        Activation::SoftmaxMasked { query, mask } => {
            softmax_accumulate(head, h, *query, mask, out)
        }
    }
}

fn softmax_accumulate(
    head: &AttentionHead,
    h: &TokenMatrix,
    query: usize,
    mask: &[usize],
    out: &mut TokenMatrix,
) {
    let rows = head.score_rows();
    let qh = project(&head.q, &rows, h.column(query));
    let logits: Vec<f64> = mask
        .iter()
        .map(|&j| dot(&qh, &project(&head.k, &rows, h.column(j))))
        .collect();
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let vrows: Vec<_> = head.v.nonempty_rows().collect();
    let mut num = vec![0.0; vrows.len()];
    let mut den = 0.0;
    for (&j, &s) in mask.iter().zip(&logits) {
        let w = (s - m).exp();
        den += w;
        let col = h.column(j);
        for (acc, (_, row)) in num.iter_mut().zip(&vrows) {
            *acc += w * row_dot(row, col);
        }
    }
    for (acc, (r, _)) in num.iter().zip(&vrows) {
        out.add_at(*r, query, acc / den);
    }
}

fn relu_accumulate(
    head: &AttentionHead,
    h: &TokenMatrix,
    ctx: &Context,
    out: &mut TokenMatrix,
    force_dense: bool,
) {
    let rows = head.score_rows();
    let vrows: Vec<_> = head.v.nonempty_rows().collect();
    if rows.is_empty() || vrows.is_empty() {
        return;
    }
    let len = h.cols();
    let pruned = if force_dense || !ctx.canonical {
        None
    } else {
        candidates(head, &rows, ctx.data_bound, len)
    };
    let (queries, keys) = pruned.unwrap_or_else(|| ((0..len).collect(), (0..len).collect()));
    if queries.is_empty() || keys.is_empty() {
        return;
    }

    let nr = rows.len();
    let kh: Vec<f64> = keys
        .iter()
        .flat_map(|&j| project(&head.k, &rows, h.column(j)))
        .collect();
    let mut vh: Vec<Option<Vec<f64>>> = vec![None; keys.len()];
    let mut acc = vec![0.0; vrows.len()];
    for &i in &queries {
        let qh = project(&head.q, &rows, h.column(i));
        acc.iter_mut().for_each(|a| *a = 0.0);
        let mut hit = false;
        for (b, &j) in keys.iter().enumerate() {
            let s = dot(&qh, &kh[b * nr..(b + 1) * nr]);
            if s > 0.0 {
                hit = true;
                let v = vh[b].get_or_insert_with(|| {
                    let col = h.column(j);
                    vrows.iter().map(|(_, row)| row_dot(row, col)).collect()
                });
                for (a, x) in acc.iter_mut().zip(v.iter()) {
                    *a += s * x;
                }
            }
        }
        if hit {
            for (a, (r, _)) in acc.iter().zip(&vrows) {
                out.add_at(*r, i, *a);
            }
        }
    }
}

/// Positional coefficients `(cos, sin, one)` of a static row, or `None` if it
/// reads a data column.
fn static_coeffs(row: &[(usize, usize, f64)], d: usize) -> Option<[f64; 3]> {
    let mut c = [0.0; 3];
    for &(_, col, w) in row {
        if col < d - STATIC_ROWS {
            return None;
        }
        c[col + STATIC_ROWS - d] = w;
    }
    Some(c)
}

/// Superset of the query and key columns that can take part in a positive
/// score, or `None` when the static rows read data columns or no pruning
/// threshold exists.
///
/// The static part of the score is `Ĩ_iᵀ A Ĩ_j` with `Ĩ = (cos, sin, 1)`;
/// it is bounded above by `σ (u·I_i)(v·I_j) + res + c`, where `σ u vᵀ` is
/// the leading singular triple of the positional block of `A` and `res`
/// collects everything else. The data part is bounded by `data_bound`.
fn candidates(
    head: &AttentionHead,
    rows: &[usize],
    data_bound: f64,
    len: usize,
) -> Option<(Vec<usize>, Vec<usize>)> {
    let d = head.dim();
    let first_static = d - STATIC_ROWS;
    let mut a = [[0.0f64; 3]; 3];
    let mut magnitude = 0.0;
    let mut data_sum = 0.0;
    for &r in rows {
        if r >= first_static {
            let qa = static_coeffs(head.q.row(r), d)?;
            let kb = static_coeffs(head.k.row(r), d)?;
            for x in 0..3 {
                for y in 0..3 {
                    a[x][y] += qa[x] * kb[y];
                }
            }
            magnitude += qa.iter().map(|v| v.abs()).sum::<f64>() * kb.iter().map(|v| v.abs()).sum::<f64>();
        } else {
            let ub = |c: usize| if c < first_static { data_bound } else { 1.0 };
            let qb: f64 = head.q.row(r).iter().map(|e| e.2.abs() * ub(e.1)).sum();
            let kb: f64 = head.k.row(r).iter().map(|e| e.2.abs() * ub(e.1)).sum();
            data_sum += qb * kb;
        }
    }
    let (sigma, u, v) = leading_singular([[a[0][0], a[0][1]], [a[1][0], a[1][1]]]);
    let mut res = 0.0f64;
    for x in 0..2 {
        for y in 0..2 {
            res += (a[x][y] - sigma * u[x] * v[y]).powi(2);
        }
    }
    let res = res.sqrt() + a[0][2].hypot(a[1][2]) + a[2][0].hypot(a[2][1]);
    let slack = 1e-9 * (magnitude + data_sum) + f64::MIN_POSITIVE;
    // A positive score needs σ (u·I_i)(v·I_j) > thr.
    let thr = -a[2][2] - res - data_sum - slack;
    if !(thr > 0.0) {
        return None;
    }
    if sigma == 0.0 {
        return Some((Vec::new(), Vec::new()));
    }
    let rho = thr / sigma;
    Some((window(u, rho, len), window(v, rho, len)))
}

/// Leading singular value and unit singular vectors of a 2×2 matrix.
fn leading_singular(m: [[f64; 2]; 2]) -> (f64, [f64; 2], [f64; 2]) {
    let e = (m[0][0] + m[1][1]) / 2.0;
    let f = (m[0][0] - m[1][1]) / 2.0;
    let g = (m[1][0] + m[0][1]) / 2.0;
    let h = (m[1][0] - m[0][1]) / 2.0;
    let sigma = e.hypot(h) + f.hypot(g);
    let a1 = g.atan2(f);
    let a2 = h.atan2(e);
    let theta = (a2 - a1) / 2.0;
    let phi = (a2 + a1) / 2.0;
    (sigma, [phi.cos(), phi.sin()], [theta.cos(), -theta.sin()])
}

/// 0-based columns `t` with `|cos(φ_t − ψ)| ≥ rho` (padded by one position on
/// each side), where `ψ` is the direction of `dir`.
fn window(dir: [f64; 2], rho: f64, len: usize) -> Vec<usize> {
    if rho >= 1.0 + 1e-12 {
        return Vec::new();
    }
    let half = rho.min(1.0).acos();
    let psi = dir[1].atan2(dir[0]);
    let step = position_angle(1, len);
    let top = position_angle(len, len);
    let mut out = Vec::new();
    for k in -2..=2 {
        let c = psi + k as f64 * std::f64::consts::PI;
        let (lo, hi) = (c - half, c + half);
        if hi < 0.0 || lo > top + step {
            continue;
        }
        let p_lo = ((lo / step).floor() as i64 - 1).max(1);
        let p_hi = ((hi / step).ceil() as i64 + 1).min(len as i64);
        out.extend((p_lo..=p_hi).map(|p| (p - 1) as usize));
    }
    out.sort_unstable();
    out.dedup();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_h(d: usize, len: usize) -> TokenMatrix {
        let mut h = TokenMatrix::with_static_rows(d, len).unwrap();
        for c in 0..len {
            for r in 0..d - 3 {
                h.set(r, c, ((r * 7 + c * 3) % 11) as f64 / 5.0 - 1.0);
            }
        }
        h
    }

    #[test]
    fn zero_q_or_v_gives_zero() {
        let d = 6;
        let h = sample_h(d, 5);
        let id = SparseMatrix::from_triplets(d, d, (0..d).map(|i| (i, i, 1.0)).collect()).unwrap();
        let zero = SparseMatrix::zeros(d, d);
        let a = attention_apply(&AttentionHead::relu(zero.clone(), id.clone(), id.clone()), &h).unwrap();
        assert_eq!(a, TokenMatrix::zeros(d, 5));
        let a = attention_apply(&AttentionHead::relu(id.clone(), id, zero), &h).unwrap();
        assert_eq!(a, TokenMatrix::zeros(d, 5));
    }

    #[test]
    fn relu_matches_naive_formula() {
        let d = 6;
        let len = 5;
        let h = sample_h(d, len);
        let q = SparseMatrix::from_dense(d, d, &(0..d * d).map(|i| ((i % 5) as f64 - 2.0) / 3.0).collect::<Vec<_>>()).unwrap();
        let k = SparseMatrix::from_dense(d, d, &(0..d * d).map(|i| ((i % 7) as f64 - 3.0) / 4.0).collect::<Vec<_>>()).unwrap();
        let v = SparseMatrix::from_triplets(d, d, vec![(0, 1, 1.0), (2, 5, -2.0)]).unwrap();
        let head = AttentionHead::relu(q.clone(), k.clone(), v.clone());
        let out = attention_apply(&head, &h).unwrap();
        for i in 0..len {
            let qh = q.mul_vec(h.column(i));
            let mut want = vec![0.0; d];
            for j in 0..len {
                let kh = k.mul_vec(h.column(j));
                let s: f64 = qh.iter().zip(&kh).map(|(a, b)| a * b).sum();
                let vh = v.mul_vec(h.column(j));
                for r in 0..d {
                    want[r] += s.max(0.0) * vh[r];
                }
            }
            for r in 0..d {
                assert!((out.get(r, i) - want[r]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn softmax_uniform_and_singleton() {
        let d = 6;
        let len = 5;
        let h = sample_h(d, len);
        let v = SparseMatrix::from_triplets(d, d, vec![(1, 0, 1.0)]).unwrap();
        let head = AttentionHead {
            q: SparseMatrix::zeros(d, d),
            k: SparseMatrix::zeros(d, d),
            v: v.clone(),
            activation: Activation::SoftmaxMasked { query: 2, mask: vec![1, 3, 4] },
            interaction: None,
        };
        let out = attention_softmax_masked(&head, &h, 2).unwrap();
        let mean = (h.get(0, 1) + h.get(0, 3) + h.get(0, 4)) / 3.0;
        assert!((out.get(1, 2) - mean).abs() < 1e-15);
        assert_eq!(out.get(1, 0), 0.0);

        let single = AttentionHead {
            activation: Activation::SoftmaxMasked { query: 0, mask: vec![4] },
            ..head.clone()
        };
        assert_eq!(attention_softmax_masked(&single, &h, 0).unwrap().get(1, 0), h.get(0, 4));

        let empty = AttentionHead {
            activation: Activation::SoftmaxMasked { query: 0, mask: vec![] },
            ..head
        };
        assert!(matches!(attention_softmax_masked(&empty, &h, 0), Err(Error::Config(_))));
    }

    #[test]
    fn leading_singular_reconstructs_rank_one() {
        let (u, v) = ([0.6, -0.8], [0.28, 0.96]);
        let m = [[3.0 * u[0] * v[0], 3.0 * u[0] * v[1]], [3.0 * u[1] * v[0], 3.0 * u[1] * v[1]]];
        let (s, a, b) = leading_singular(m);
        assert!((s - 3.0).abs() < 1e-12);
        for x in 0..2 {
            for y in 0..2 {
                assert!((s * a[x] * b[y] - m[x][y]).abs() < 1e-12);
            }
        }
        let (s, a, b) = leading_singular([[2.0, 1.0], [-0.5, 0.3]]);
        let (c1, s1) = ((1.1f64).cos(), (1.1f64).sin());
        let quad = |x: [f64; 2], y: [f64; 2]| x[0] * (2.0 * y[0] + y[1]) + x[1] * (-0.5 * y[0] + 0.3 * y[1]);
        assert!(quad([c1, s1], [c1, s1]).abs() <= s + 1e-12);
        assert!((quad(a, b) - s).abs() < 1e-12);
    }

    #[test]
    fn window_covers_direction() {
        let len = 40;
        let p = 13;
        let a = position_angle(p, len);
        let w = window([a.cos(), a.sin()], 0.9999, len);
        assert!(w.contains(&(p - 1)));
        assert!(w.len() < 8);
        assert!(window([1.0, 0.0], 2.0, len).is_empty());
    }
}
