//! Comparison of the compiled network against the direct estimator, stage
//! by stage when something goes wrong.

use serde::{Deserialize, Serialize};

use super::kernel::KernelTransformer;
use crate::error::{Error, Result};
use crate::kernel::{nw_estimate, Bandwidth};
use crate::manifold::{squared_distance, Prompt};
use crate::transformer::{embed_prompt, forward, forward_traced, TokenMatrix, TransformerSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Equivalence {
    pub transformer: f64,
    pub oracle: f64,
    pub abs_diff: f64,
    /// `abs_diff / max(1, |oracle|)`
    pub rel_diff: f64,
}

pub fn verify_equivalence(spec: &TransformerSpec, prompt: &Prompt, h: Bandwidth) -> Result<Equivalence> {
    let transformer = forward(spec, prompt)?;
    let oracle = nw_estimate(prompt, h);
    let abs_diff = (transformer - oracle).abs();
    Ok(Equivalence {
        transformer,
        oracle,
        abs_diff,
        rel_diff: if abs_diff.is_nan() { f64::INFINITY } else { abs_diff / oracle.abs().max(1.0) },
    })
}

/// Ideal intermediate matrices: `attended[k]` is `MHA + H` inside block
/// `k + 1`, `stages[k]` the input of block `k + 1` (so `stages[0]` is the
/// embedding and `stages[5]` the output).
#[derive(Debug, Clone)]
pub struct ExpectedStages {
    pub attended: Vec<TokenMatrix>,
    pub stages: Vec<TokenMatrix>,
}

pub fn expected_stages(kt: &KernelTransformer, prompt: &Prompt) -> Result<ExpectedStages> {
    let p = &kt.params;
    if prompt.n() != p.n || prompt.ambient_dim() != p.ambient_dim {
        return Err(Error::Dimension {
            what: "prompt size (n, D) vs network",
            expected: p.n * 1000 + p.ambient_dim,
            found: prompt.n() * 1000 + prompt.ambient_dim(),
        });
    }
    let (n, dim, h) = (p.n, p.ambient_dim, p.bandwidth);
    let (m1, m2) = (kt.constants.m_copy, kt.constants.m_offset);
    let (row_y, row_z) = (dim, dim + 1);
    let xq = prompt.query();
    let xs = prompt.points();
    let ys = prompt.labels();
    let logit = |j: usize| -squared_distance(xq, &xs[j]) / (h * h);

    let h0 = embed_prompt(prompt);
    let edit = |base: &TokenMatrix, f: &dyn Fn(&mut TokenMatrix, usize)| {
        let mut m = base.clone();
        for j in 0..n {
            f(&mut m, j);
        }
        m
    };
    let a1 = edit(&h0, &|m, j| (0..dim).for_each(|i| m.set(i, n + 1 + j, xq[i] + m1)));
    let h1 = edit(&h0, &|m, j| (0..dim).for_each(|i| m.set(i, n + 1 + j, xq[i])));
    let a2 = edit(&h1, &|m, j| (0..dim).for_each(|i| m.set(i, n + 1 + j, xq[i] - xs[j][i] + m1)));
    let h2 = edit(&h1, &|m, j| (0..dim).for_each(|i| m.set(i, n + 1 + j, xq[i] - xs[j][i])));
    let h3 = edit(&h2, &|m, j| m.set(row_y, n + 1 + j, logit(j) + m2));
    let a4 = edit(&h3, &|m, j| m.set(row_z, n + 1 + j, ys[j] + m2));
    let h4 = edit(&h3, &|m, j| {
        m.set(row_y, n + 1 + j, logit(j));
        m.set(row_z, n + 1 + j, ys[j]);
    });
    let mut h5 = h4.clone();
    h5.set(row_y, n, nw_estimate(prompt, Bandwidth::new(h)?));
    Ok(ExpectedStages {
        attended: vec![a1, a2, h3.clone(), a4, h5.clone()],
        stages: vec![h0, h1, h2, h3, h4, h5],
    })
}

/// First intermediate matrix that departs from its ideal value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageFailure {
    /// 1-based block index.
    pub block: usize,
    /// `"attention"` or `"ffn"`.
    pub sublayer: &'static str,
    pub lemma: &'static str,
    pub max_abs_err: f64,
}

impl std::fmt::Display for StageFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "block {} {} departs from its ideal output by {:.3e}: {} violated",
            self.block, self.sublayer, self.max_abs_err, self.lemma
        )
    }
}

fn mismatch(got: &TokenMatrix, want: &TokenMatrix, tol: f64) -> Option<f64> {
    let mut worst: f64 = 0.0;
    let mut bad = false;
    for c in 0..want.cols() {
        for r in 0..want.rows() {
            let (g, w) = (got.get(r, c), want.get(r, c));
            let e = (g - w).abs();
            if !(e <= tol * w.abs().max(1.0)) {
                bad = true;
            }
            worst = worst.max(if e.is_nan() { f64::INFINITY } else { e });
        }
    }
    bad.then_some(worst)
}

/// Traces the prompt through the network and reports the first sublayer
/// whose output differs from the ideal matrix by more than `tol` (relative
/// to `max(1, |entry|)`).
pub fn diagnose(kt: &KernelTransformer, prompt: &Prompt, tol: f64) -> Result<Option<StageFailure>> {
    let want = expected_stages(kt, prompt)?;
    let trace = forward_traced(&kt.spec, prompt)?;
    for k in 0..trace.attended.len() {
        let block = k + 1;
        if let Some(err) = mismatch(&trace.attended[k], &want.attended[k], tol) {
            let lemma = if block == 5 {
                "masked-softmax readout"
            } else {
                "interaction lemma (ReLU head couples a single token pair)"
            };
            return Ok(Some(StageFailure {
                block,
                sublayer: "attention",
                lemma,
                max_abs_err: err,
            }));
        }
        if let Some(err) = mismatch(&trace.stages[block], &want.stages[block], tol) {
            let lemma = match block {
                1 | 2 | 4 => "decrementing lemma (gated FFN subtracts M on the scratch window)",
                _ => "identity FFN",
            };
            return Ok(Some(StageFailure {
                block,
                sublayer: "ffn",
                lemma,
                max_abs_err: err,
            }));
        }
    }
    Ok(None)
}

/// Interaction heads whose intended pre-activation is negative on this
/// prompt, i.e. where the ReLU would clip a value meant to pass.
pub fn clipped_heads(kt: &KernelTransformer, prompt: &Prompt) -> Result<Vec<(usize, usize, usize, f64)>> {
    let trace = forward_traced(&kt.spec, prompt)?;
    let mut out = Vec::new();
    for (b, block) in kt.spec.blocks.iter().enumerate() {
        for head in &block.heads {
            if let Some((t1, t2)) = head.interaction {
                let s = head.score(&trace.stages[b], t1, t2);
                if s < 0.0 {
                    out.push((b + 1, t1, t2, s));
                }
            }
        }
    }
    Ok(out)
}
