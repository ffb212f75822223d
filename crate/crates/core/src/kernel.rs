//! Reference Nadaraya–Watson estimator and its Monte-Carlo integral form.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::{squared_distance, HolderFunction, IsometricEmbedding, Manifold, Prompt};
use crate::seed;

/// Gaussian kernel bandwidth `h > 0`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Bandwidth(f64);

impl Bandwidth {
    /// Errors for `h ≤ 0`; warns for `h ≥ 1`, outside the regime the theory
    /// covers.
    pub fn new(h: f64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Parameter(format!("bandwidth must be positive, got {h}")));
        }
        if h >= 1.0 {
            warn!("bandwidth h = {h} ≥ 1 lies outside (0, 1)");
        }
        Ok(Self(h))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Bandwidth {
    type Error = Error;

    fn try_from(h: f64) -> Result<Self> {
        Self::new(h)
    }
}

impl From<Bandwidth> for f64 {
    fn from(h: Bandwidth) -> f64 {
        h.0
    }
}

/// `exp(−‖u‖² / h²)`.
pub fn gaussian_kernel(u: &[f64], h: Bandwidth) -> f64 {
    let h = h.get();
    (-u.iter().map(|v| v * v).sum::<f64>() / (h * h)).exp()
}

/// Softmax-weighted mean of `values` with logits `logits`, computed with a
/// max shift; the result is clamped into the hull of `values` since rounding
/// can push a convex combination one ulp outside it.
fn shifted_weighted_mean(logits: &[f64], values: &[f64]) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut num, mut den) = (0.0, 0.0);
    for (&e, &y) in logits.iter().zip(values) {
        let w = (e - m).exp();
        num += w * y;
        den += w;
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (num / den).clamp(lo, hi)
}

/// `Σ K_h(x_{n+1} − x_i) y_i / Σ K_h(x_{n+1} − x_i)`.
pub fn nw_estimate(prompt: &Prompt, h: Bandwidth) -> f64 {
    let h2 = h.get() * h.get();
    let q = prompt.query();
    let logits: Vec<f64> = prompt
        .points()
        .iter()
        .map(|x| -squared_distance(q, x) / h2)
        .collect();
    shifted_weighted_mean(&logits, prompt.labels())
}

/// Monte-Carlo estimate of the integral estimator with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
}

/// A fixed uniform sample of `(E x, f(x))` pairs, reusable across queries
/// and bandwidths.
#[derive(Debug, Clone)]
pub struct MonteCarloReference {
    dim: usize,
    /// Embedded sample points, row-major.
    points: Vec<f64>,
    /// Labels minus `centre`, which keeps the second moments well
    /// conditioned.
    shifted: Vec<f64>,
    centre: f64,
}

impl MonteCarloReference {
    pub fn new(
        manifold: &Manifold,
        embedding: &IsometricEmbedding,
        f: &HolderFunction,
        mc_samples: usize,
        seed: u64,
    ) -> Result<Self> {
        if mc_samples < 1000 {
            return Err(Error::Parameter(format!(
                "mc_samples must be ≥ 1000, got {mc_samples}"
            )));
        }
        if embedding.base_dim() != manifold.base_ambient_dim() {
            return Err(Error::Dimension {
                what: "embedding base dimension",
                expected: manifold.base_ambient_dim(),
                found: embedding.base_dim(),
            });
        }
        let mut rng = seed::rng(seed, &[0x3C]);
        let dim = embedding.target_dim();
        let mut points = Vec::with_capacity(mc_samples * dim);
        let mut values = Vec::with_capacity(mc_samples);
        for _ in 0..mc_samples {
            let x = manifold.sample_point(&mut rng);
            values.push(f.eval_unchecked(&x));
            points.extend(embedding.embed_unchecked(&x));
        }
        let centre = values.iter().sum::<f64>() / mc_samples as f64;
        let shifted = values.iter().map(|y| y - centre).collect();
        Ok(Self {
            dim,
            points,
            shifted,
            centre,
        })
    }

    pub fn len(&self) -> usize {
        self.shifted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shifted.is_empty()
    }

    /// Ratio estimate `mean(K_h f) / mean(K_h)` with its delta-method
    /// standard error, in one streaming pass (weights are rescaled whenever
    /// a larger logit appears).
    pub fn estimate(&self, x_query: &[f64], h: Bandwidth) -> McEstimate {
        let h2 = h.get() * h.get();
        let mut top = f64::NEG_INFINITY;
        let (mut den, mut num) = (0.0, 0.0);
        let (mut q0, mut q1, mut q2) = (0.0, 0.0, 0.0);
        for (x, &z) in self.points.chunks_exact(self.dim).zip(&self.shifted) {
            let e = -squared_distance(x_query, x) / h2;
            if e > top {
                let r = (top - e).exp();
                let r2 = r * r;
                den *= r;
                num *= r;
                q0 *= r2;
                q1 *= r2;
                q2 *= r2;
                top = e;
            }
            let w = (e - top).exp();
            let w2 = w * w;
            den += w;
            num += w * z;
            q0 += w2;
            q1 += w2 * z;
            q2 += w2 * z * z;
        }
        let v = num / den;
        // Σ w² (z − v)²
        let var = (q2 - 2.0 * v * q1 + v * v * q0).max(0.0);
        McEstimate {
            value: self.centre + v,
            std_error: var.sqrt() / den,
        }
    }
}

/// Monte-Carlo value of the integral kernel estimator at `x_query`.
pub fn integral_estimate_mc(
    manifold: &Manifold,
    embedding: &IsometricEmbedding,
    f: &HolderFunction,
    x_query: &[f64],
    h: Bandwidth,
    mc_samples: usize,
    seed: u64,
) -> Result<f64> {
    if x_query.len() != embedding.target_dim() {
        return Err(Error::Dimension {
            what: "query point",
            expected: embedding.target_dim(),
            found: x_query.len(),
        });
    }
    let reference = MonteCarloReference::new(manifold, embedding, f, mc_samples, seed)?;
    Ok(reference.estimate(x_query, h).value)
}

/// `h = n^{−1/(2α+d)}`.
pub fn bandwidth_for(n: usize, alpha: f64, d: usize) -> Result<Bandwidth> {
    if n == 0 {
        return Err(Error::Parameter("bandwidth_for needs n ≥ 1".into()));
    }
    if !(alpha > 0.0) || d == 0 {
        return Err(Error::Parameter(format!("need α > 0 and d ≥ 1, got α = {alpha}, d = {d}")));
    }
    Bandwidth::new((n as f64).powf(-1.0 / (2.0 * alpha + d as f64)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::make_holder_function;

    fn h(v: f64) -> Bandwidth {
        Bandwidth::new(v).unwrap()
    }

    #[test]
    fn kernel_values() {
        assert_eq!(gaussian_kernel(&[0.0, 0.0], h(0.3)), 1.0);
        let e = (-1.0f64).exp();
        assert!((gaussian_kernel(&[0.3, 0.4], h(0.5)) - e).abs() < 1e-15);
        assert!((gaussian_kernel(&[0.0, 0.7], h(0.7)) - 0.367879).abs() < 1e-6);
    }

    #[test]
    fn bandwidth_rejects_nonpositive() {
        assert!(Bandwidth::new(0.0).is_err());
        assert!(Bandwidth::new(-1.0).is_err());
        assert!(Bandwidth::new(f64::NAN).is_err());
        assert!(Bandwidth::new(1.5).is_ok());
    }

    #[test]
    fn nw_hand_examples() {
        let p = Prompt::new(vec![vec![0.0], vec![1.0], vec![0.0]], vec![0.0, 1.0], 0.0).unwrap();
        let e = (-1.0f64).exp();
        assert!((nw_estimate(&p, h(1.0)) - e / (1.0 + e)).abs() < 1e-15);
        assert!((nw_estimate(&p, h(1.0)) - 0.268941).abs() < 1e-6);

        let p = Prompt::new(vec![vec![5.0], vec![-3.0]], vec![0.7], 0.0).unwrap();
        assert_eq!(nw_estimate(&p, h(0.01)), 0.7);

        let p = Prompt::new(vec![vec![0.0], vec![9.0], vec![100.0]], vec![0.25, 0.25], 0.0).unwrap();
        assert_eq!(nw_estimate(&p, h(0.1)), 0.25);
    }

    #[test]
    fn bandwidth_formula() {
        assert_eq!(bandwidth_for(1, 1.0, 1).unwrap().get(), 1.0);
        assert!((bandwidth_for(1024, 1.0, 1).unwrap().get() - 0.09921).abs() < 1e-5);
        // 10^{-4/3}
        assert!((bandwidth_for(10_000, 0.5, 2).unwrap().get() - 0.046_416).abs() < 1e-6);
    }

    #[test]
    fn mc_reproduces_near_constants() {
        let m = Manifold::circle(1.0);
        let f = HolderFunction::new(m, vec![vec![1.0, 0.0]], vec![0.3], 1e-12, 1.0, 1.0).unwrap();
        let e = IsometricEmbedding::random(2, 5, 1).unwrap();
        let q = e.embed(&[0.0, 1.0]).unwrap();
        let v = integral_estimate_mc(&m, &e, &f, &q, h(0.2), 1000, 3).unwrap();
        assert!((v - 0.3).abs() < 1e-6);
        assert!(integral_estimate_mc(&m, &e, &f, &q, h(0.2), 999, 3).is_err());
    }

    #[test]
    fn mc_self_consistency() {
        let m = Manifold::circle(1.0);
        let f = make_holder_function(&m, 1.0, 1.0, 1.0, 8, 2).unwrap();
        let e = IsometricEmbedding::padding(2, 2).unwrap();
        let q = [0.6, 0.8];
        let a = MonteCarloReference::new(&m, &e, &f, 100_000, 1).unwrap().estimate(&q, h(0.2));
        let b = MonteCarloReference::new(&m, &e, &f, 400_000, 2).unwrap().estimate(&q, h(0.2));
        let pooled = a.std_error.hypot(b.std_error);
        assert!((a.value - b.value).abs() <= 3.0 * pooled, "{a:?} vs {b:?}");
    }
}
