//! Randomised property suites for the three building blocks, used by the
//! `lemmas` subcommand and the acceptance tests. Every check is bit-exact.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gating::{build_decrement_ffn, build_gating_ffn, GateSide};
use super::interaction::{build_interaction_head, InteractionRequest};
use crate::seed;
use crate::sparse::{row_dot, SparseMatrix};
use crate::transformer::{attention_apply, TokenMatrix, STATIC_ROWS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaOutcome {
    pub name: String,
    pub trials: usize,
    pub failures: usize,
    pub first_failure: Option<String>,
}

impl LemmaOutcome {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }

    fn record(&mut self, result: Result<(), String>) {
        self.trials += 1;
        if let Err(msg) = result {
            self.failures += 1;
            self.first_failure.get_or_insert(msg);
        }
    }

    fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            trials: 0,
            failures: 0,
            first_failure: None,
        }
    }
}

/// Deliberate construction faults, for checking that the suites detect them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fault {
    /// Gating FFN built with its split shifted by one column.
    GatingOffByOne,
}

fn random_tokens(rng: &mut ChaCha8Rng, d: usize, len: usize, bound: f64) -> TokenMatrix {
    let mut h = TokenMatrix::with_static_rows(d, len).expect("d ≥ 5");
    for c in 0..len {
        for r in 0..d - STATIC_ROWS {
            h.set(r, c, rng.random_range(-bound..bound));
        }
    }
    h
}

fn random_sparse(rng: &mut ChaCha8Rng, rows: usize, cols: usize, kappa: f64) -> SparseMatrix {
    let density = rng.random_range(0.05..0.5);
    let mut t = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            if rng.random_bool(density) {
                t.push((r, c, rng.random_range(-kappa..kappa)));
            }
        }
    }
    SparseMatrix::from_triplets(rows, cols, t).expect("in range")
}

fn interaction_trial(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let d = rng.random_range(5..=12);
    let len = rng.random_range(2..=24);
    let nd = d - STATIC_ROWS;
    let u: f64 = rng.random_range(0.5..4.0);
    let kappa: f64 = rng.random_range(0.5..4.0);
    let req = InteractionRequest {
        t1: rng.random_range(0..len),
        t2: rng.random_range(0..len),
        value_row: rng.random_range(0..nd),
        q_data: random_sparse(rng, nd, d, kappa),
        k_data: random_sparse(rng, nd, d, kappa),
        len,
        u_bound: u.max(1.0),
        kappa_data: kappa,
        safety_factor: 2.0,
    };
    let head = build_interaction_head(&req).map_err(|e| e.to_string())?;
    let h = random_tokens(rng, d, len, u);
    let out = attention_apply(&head, &h).map_err(|e| e.to_string())?;

    let (hq, hk) = (h.column(req.t1), h.column(req.t2));
    let mut want = 0.0;
    for r in 0..nd {
        want += row_dot(req.q_data.row(r), hq) * row_dot(req.k_data.row(r), hk);
    }
    let want = want.max(0.0);
    for c in 0..len {
        for r in 0..d {
            let expect = if c == req.t1 && r == req.value_row { want } else { 0.0 };
            let got = out.get(r, c);
            if got != expect {
                return Err(format!(
                    "d={d} ℓ={len} (t1,t2)=({},{}) row {r} col {c}: got {got:e}, want {expect:e}",
                    req.t1, req.t2
                ));
            }
        }
    }
    Ok(())
}

fn gating_trial(rng: &mut ChaCha8Rng, fault: Option<Fault>) -> Result<(), String> {
    let d = rng.random_range(5..=12);
    let len = rng.random_range(3..=30);
    let nd = d - STATIC_ROWS;
    let r1 = rng.random_range(0..nd);
    let r2 = rng.random_range(r1 + 1..=nd);
    let split = rng.random_range(1..len);
    let side = if rng.random_bool(0.5) { GateSide::ZeroRight } else { GateSide::ZeroLeft };
    let bound = rng.random_range(0.1..10.0);
    let built_split = match fault {
        Some(Fault::GatingOffByOne) if split + 1 < len => split + 1,
        Some(Fault::GatingOffByOne) => split - 1,
        None => split,
    };
    if built_split == 0 {
        return Err("fault injection needs ℓ ≥ 3".into());
    }
    let ffn = build_gating_ffn(r1..r2, built_split, side, bound, len, d, 2.0).map_err(|e| e.to_string())?;
    let h = random_tokens(rng, d, len, bound);
    let out = ffn.apply(&h).map_err(|e| e.to_string())?;
    for c in 0..len {
        let gated = match side {
            GateSide::ZeroRight => c >= split,
            GateSide::ZeroLeft => c < split,
        };
        for r in 0..d {
            let expect = if gated && (r1..r2).contains(&r) { 0.0 } else { h.get(r, c) };
            let got = out.get(r, c);
            if got != expect {
                return Err(format!(
                    "d={d} ℓ={len} split={split} {side:?} rows {r1}..{r2}: row {r} col {c} got {got:e}, want {expect:e}"
                ));
            }
        }
    }
    Ok(())
}

fn decrement_trial(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let d = rng.random_range(5..=12);
    let len = rng.random_range(1..=30);
    let nd = d - STATIC_ROWS;
    let r1 = rng.random_range(0..nd);
    let r2 = rng.random_range(r1 + 1..=nd);
    let k1 = rng.random_range(0..len);
    let k2 = rng.random_range(k1 + 1..=len);
    let m = 2f64.powi(rng.random_range(-3..=20));
    let ffn = build_decrement_ffn(r1..r2, k1..k2, m, len, d, 2.0).map_err(|e| e.to_string())?;
    // Entries M + x with x a small dyadic rational: h − M is representable,
    // so exact subtraction must reproduce x.
    let mut h = random_tokens(rng, d, len, m);
    let mut offsets = vec![0.0; d * len];
    for c in 0..len {
        for r in 0..nd {
            let x = rng.random_range(-64i32..=64) as f64 * m / 64.0;
            offsets[c * d + r] = x;
            h.set(r, c, m + x);
        }
    }
    let out = ffn.apply(&h).map_err(|e| e.to_string())?;
    for c in 0..len {
        for r in 0..d {
            let hit = (k1..k2).contains(&c) && (r1..r2).contains(&r);
            let expect = if hit { offsets[c * d + r] } else { h.get(r, c) };
            let got = out.get(r, c);
            if got != expect {
                return Err(format!(
                    "d={d} ℓ={len} window {k1}..{k2} rows {r1}..{r2} M={m}: row {r} col {c} got {got:e}, want {expect:e}"
                ));
            }
        }
    }
    Ok(())
}

pub fn interaction_suite(trials: usize, seed: u64) -> LemmaOutcome {
    let mut out = LemmaOutcome::new("interaction");
    for t in 0..trials {
        out.record(interaction_trial(&mut seed::rng(seed, &[1, t as u64])));
    }
    out
}

pub fn gating_suite(trials: usize, seed: u64, fault: Option<Fault>) -> LemmaOutcome {
    let mut out = LemmaOutcome::new("gating");
    for t in 0..trials {
        out.record(gating_trial(&mut seed::rng(seed, &[2, t as u64]), fault));
    }
    out
}

pub fn decrement_suite(trials: usize, seed: u64) -> LemmaOutcome {
    let mut out = LemmaOutcome::new("decrementing");
    for t in 0..trials {
        out.record(decrement_trial(&mut seed::rng(seed, &[3, t as u64])));
    }
    out
}

pub fn run_all(trials: usize, seed: u64, fault: Option<Fault>) -> Vec<LemmaOutcome> {
    vec![
        interaction_suite(trials, seed),
        gating_suite(trials, seed, fault),
        decrement_suite(trials, seed),
    ]
}
