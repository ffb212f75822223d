//! Compact manifolds with closed-form geodesics, isometric embeddings into
//! `R^D`, Hölder target functions and prompt generation.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Tolerance for accepting a point as lying on a manifold.
pub const ON_MANIFOLD_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManifoldKind {
    Circle,
    Sphere2,
    CliffordTorus2,
}

impl ManifoldKind {
    pub const ALL: [ManifoldKind; 3] = [
        ManifoldKind::Circle,
        ManifoldKind::Sphere2,
        ManifoldKind::CliffordTorus2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ManifoldKind::Circle => "circle",
            ManifoldKind::Sphere2 => "sphere2",
            ManifoldKind::CliffordTorus2 => "clifford_torus2",
        }
    }
}

impl std::str::FromStr for ManifoldKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "circle" => Ok(ManifoldKind::Circle),
            "sphere" | "sphere2" => Ok(ManifoldKind::Sphere2),
            "torus" | "clifford_torus" | "clifford_torus2" => Ok(ManifoldKind::CliffordTorus2),
            other => Err(Error::Config(format!("unknown manifold `{other}`"))),
        }
    }
}

/// A circle, round 2-sphere, or flat Clifford torus of a given radius,
/// sitting in its base ambient space `R^2`, `R^3` or `R^4`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Manifold {
    pub kind: ManifoldKind,
    pub radius: f64,
}

impl Manifold {
    pub fn new(kind: ManifoldKind, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::Parameter(format!("radius must be positive, got {radius}")));
        }
        Ok(Self { kind, radius })
    }

    pub fn circle(radius: f64) -> Self {
        Self::new(ManifoldKind::Circle, radius).expect("positive radius")
    }

    pub fn sphere(radius: f64) -> Self {
        Self::new(ManifoldKind::Sphere2, radius).expect("positive radius")
    }

    pub fn clifford_torus(radius: f64) -> Self {
        Self::new(ManifoldKind::CliffordTorus2, radius).expect("positive radius")
    }

    pub fn intrinsic_dim(&self) -> usize {
        match self.kind {
            ManifoldKind::Circle => 1,
            ManifoldKind::Sphere2 | ManifoldKind::CliffordTorus2 => 2,
        }
    }

    pub fn base_ambient_dim(&self) -> usize {
        match self.kind {
            ManifoldKind::Circle => 2,
            ManifoldKind::Sphere2 => 3,
            ManifoldKind::CliffordTorus2 => 4,
        }
    }

    /// Reach, recorded rather than computed.
    pub fn reach(&self) -> f64 {
        self.radius
    }

    /// Bound `b` on every ambient coordinate, valid after any linear
    /// isometric embedding: `|(Ex)_k| ≤ ‖x‖`, which is `r` on the circle and
    /// sphere and `√2 r` on the torus.
    pub fn coord_bound(&self) -> f64 {
        match self.kind {
            ManifoldKind::Circle | ManifoldKind::Sphere2 => self.radius,
            ManifoldKind::CliffordTorus2 => self.radius * std::f64::consts::SQRT_2,
        }
    }

    /// Riemannian volume (length for the circle).
    pub fn volume(&self) -> f64 {
        let r = self.radius;
        match self.kind {
            ManifoldKind::Circle => 2.0 * PI * r,
            ManifoldKind::Sphere2 => 4.0 * PI * r * r,
            ManifoldKind::CliffordTorus2 => (2.0 * PI * r).powi(2),
        }
    }

    /// Draws one point from the uniform (Riemannian volume) law.
    pub fn sample_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let r = self.radius;
        match self.kind {
            ManifoldKind::Circle => {
                let a = rng.random_range(0.0..2.0 * PI);
                vec![r * a.cos(), r * a.sin()]
            }
            ManifoldKind::Sphere2 => {
                let p: [f64; 3] = UnitSphere.sample(rng);
                p.iter().map(|c| r * c).collect()
            }
            ManifoldKind::CliffordTorus2 => {
                let a = rng.random_range(0.0..2.0 * PI);
                let b = rng.random_range(0.0..2.0 * PI);
                vec![r * a.cos(), r * a.sin(), r * b.cos(), r * b.sin()]
            }
        }
    }

    /// Checks that `x` lies on the manifold, naming the violated constraint.
    pub fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.base_ambient_dim() {
            return Err(Error::Dimension {
                what: "manifold point",
                expected: self.base_ambient_dim(),
                found: x.len(),
            });
        }
        let r = self.radius;
        let tol = ON_MANIFOLD_TOL * r.max(1.0);
        let bad = |what: &str, norm: f64| {
            Err(Error::Domain(format!(
                "{what} = {norm} but must equal radius {r} for a point on the {}",
                self.kind.name()
            )))
        };
        match self.kind {
            ManifoldKind::Circle | ManifoldKind::Sphere2 => {
                let n = norm(x);
                if (n - r).abs() > tol {
                    return bad("‖x‖", n);
                }
            }
            ManifoldKind::CliffordTorus2 => {
                let n1 = x[0].hypot(x[1]);
                let n2 = x[2].hypot(x[3]);
                if (n1 - r).abs() > tol {
                    return bad("‖(x₁, x₂)‖", n1);
                }
                if (n2 - r).abs() > tol {
                    return bad("‖(x₃, x₄)‖", n2);
                }
            }
        }
        Ok(())
    }

    /// Closed-form geodesic distance between two points of the manifold.
    pub fn geodesic_distance(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        self.check_point(y)?;
        Ok(self.geodesic_unchecked(x, y))
    }

    /// Geodesic distance without on-manifold validation (hot loops over
    /// points that were sampled on the manifold).
    #[inline]
    pub fn geodesic_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        let r = self.radius;
        match self.kind {
            ManifoldKind::Circle => r * planar_angle(x[0], x[1], y[0], y[1]),
            ManifoldKind::Sphere2 => {
                let c = [
                    x[1] * y[2] - x[2] * y[1],
                    x[2] * y[0] - x[0] * y[2],
                    x[0] * y[1] - x[1] * y[0],
                ];
                let dot = x[0] * y[0] + x[1] * y[1] + x[2] * y[2];
                r * norm(&c).atan2(dot)
            }
            ManifoldKind::CliffordTorus2 => {
                let a = planar_angle(x[0], x[1], y[0], y[1]);
                let b = planar_angle(x[2], x[3], y[2], y[3]);
                r * a.hypot(b)
            }
        }
    }
}

/// Angle in `[0, π]` between two nonzero planar vectors.
#[inline]
fn planar_angle(x0: f64, x1: f64, y0: f64, y1: f64) -> f64 {
    (x0 * y1 - x1 * y0).abs().atan2(x0 * y0 + x1 * y1)
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn squared_distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// `count` i.i.d. uniform points on `manifold`, in base ambient coordinates.
pub fn sample_uniform(manifold: &Manifold, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if count == 0 {
        return Err(Error::EmptyBatch("sample_uniform needs count ≥ 1"));
    }
    let mut rng = seed::rng(seed, &[]);
    Ok((0..count).map(|_| manifold.sample_point(&mut rng)).collect())
}

pub fn geodesic_distance(manifold: &Manifold, x: &[f64], y: &[f64]) -> Result<f64> {
    manifold.geodesic_distance(x, y)
}

/// Linear isometry `x ↦ E x` from the base ambient space into `R^D`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsometricEmbedding {
    base_dim: usize,
    target_dim: usize,
    /// Row-major `target_dim × base_dim`.
    matrix: Vec<f64>,
}

impl IsometricEmbedding {
    /// Zero padding: the first `base_dim` coordinates carry `x`.
    pub fn padding(base_dim: usize, target_dim: usize) -> Result<Self> {
        Self::check_dims(base_dim, target_dim)?;
        let mut matrix = vec![0.0; target_dim * base_dim];
        for k in 0..base_dim {
            matrix[k * base_dim + k] = 1.0;
        }
        Ok(Self {
            base_dim,
            target_dim,
            matrix,
        })
    }

    /// Random orthonormal frame: thin QR of a seeded Gaussian matrix.
    pub fn random(base_dim: usize, target_dim: usize, seed: u64) -> Result<Self> {
        Self::check_dims(base_dim, target_dim)?;
        let mut rng = seed::rng(seed, &[0xE3B]);
        let g = DMatrix::<f64>::from_fn(target_dim, base_dim, |_, _| {
            StandardNormal.sample(&mut rng)
        });
        let q = g.qr().q();
        let matrix = (0..target_dim)
            .flat_map(|r| (0..base_dim).map(move |c| (r, c)))
            .map(|(r, c)| q[(r, c)])
            .collect();
        Ok(Self {
            base_dim,
            target_dim,
            matrix,
        })
    }

    fn check_dims(base_dim: usize, target_dim: usize) -> Result<()> {
        if base_dim == 0 || target_dim < base_dim {
            return Err(Error::Parameter(format!(
                "embedding needs 1 ≤ base_dim ≤ target_dim, got {base_dim} → {target_dim}"
            )));
        }
        Ok(())
    }

    pub fn base_dim(&self) -> usize {
        self.base_dim
    }

    pub fn target_dim(&self) -> usize {
        self.target_dim
    }

    pub fn entry(&self, r: usize, c: usize) -> f64 {
        self.matrix[r * self.base_dim + c]
    }

    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.base_dim {
            return Err(Error::Dimension {
                what: "embedding input",
                expected: self.base_dim,
                found: x.len(),
            });
        }
        Ok(self.embed_unchecked(x))
    }

    #[inline]
    pub fn embed_unchecked(&self, x: &[f64]) -> Vec<f64> {
        self.matrix
            .chunks_exact(self.base_dim)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }
}

pub fn embed_ambient(e: &IsometricEmbedding, x: &[f64]) -> Result<Vec<f64>> {
    e.embed(x)
}

/// `f(x) = clamp(min_j (c_j + L d(x, p_j)^α), −R, R)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolderFunction {
    manifold: Manifold,
    anchors: Vec<Vec<f64>>,
    offsets: Vec<f64>,
    holder_const: f64,
    exponent: f64,
    bound: f64,
}

impl HolderFunction {
    pub fn new(
        manifold: Manifold,
        anchors: Vec<Vec<f64>>,
        offsets: Vec<f64>,
        holder_const: f64,
        exponent: f64,
        bound: f64,
    ) -> Result<Self> {
        if !(exponent > 0.0 && exponent <= 1.0) {
            return Err(Error::Parameter(format!("Hölder exponent must lie in (0, 1], got {exponent}")));
        }
        if !(holder_const > 0.0 && holder_const.is_finite()) {
            return Err(Error::Parameter(format!("Hölder constant must be positive, got {holder_const}")));
        }
        if !(bound > 0.0 && bound.is_finite()) {
            return Err(Error::Parameter(format!("bound must be positive, got {bound}")));
        }
        if anchors.is_empty() {
            return Err(Error::EmptyBatch("Hölder function needs at least one anchor"));
        }
        if anchors.len() != offsets.len() {
            return Err(Error::Dimension {
                what: "offsets",
                expected: anchors.len(),
                found: offsets.len(),
            });
        }
        for a in &anchors {
            manifold.check_point(a)?;
        }
        Ok(Self {
            manifold,
            anchors,
            offsets,
            holder_const,
            exponent,
            bound,
        })
    }

    pub fn manifold(&self) -> &Manifold {
        &self.manifold
    }

    pub fn anchors(&self) -> &[Vec<f64>] {
        &self.anchors
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    pub fn holder_const(&self) -> f64 {
        self.holder_const
    }

    pub fn exponent(&self) -> f64 {
        self.exponent
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        self.manifold.check_point(x)?;
        Ok(self.eval_unchecked(x))
    }

    /// Anchors whose chord already pushes `c_j + L d^α` past the upper clamp
    /// cannot change the result (geodesic ≥ chord), so they are skipped
    /// before the geodesic is computed.
    pub fn eval_unchecked(&self, x: &[f64]) -> f64 {
        let m = &self.manifold;
        let (l, a) = (self.holder_const, self.exponent);
        let c_min = self.offsets.iter().copied().fold(f64::INFINITY, f64::min);
        let reach = (self.bound - c_min) / l;
        let cutoff = if reach > 0.0 {
            reach.powf(2.0 / a) * (1.0 + 1e-9)
        } else {
            0.0
        };
        let mut best = f64::INFINITY;
        for (p, &c) in self.anchors.iter().zip(&self.offsets) {
            if squared_distance(x, p) > cutoff {
                continue;
            }
            let d = m.geodesic_unchecked(x, p);
            best = best.min(c + l * if a == 1.0 { d } else { d.powf(a) });
        }
        best.clamp(-self.bound, self.bound)
    }
}

/// Random member of the clamped min-plus family: anchors uniform on the
/// manifold, offsets uniform on `[−R, R]`.
pub fn make_holder_function(
    manifold: &Manifold,
    holder_const: f64,
    exponent: f64,
    bound: f64,
    num_anchors: usize,
    seed: u64,
) -> Result<HolderFunction> {
    if !(exponent > 0.0 && exponent <= 1.0) {
        return Err(Error::Parameter(format!("Hölder exponent must lie in (0, 1], got {exponent}")));
    }
    if num_anchors == 0 {
        return Err(Error::EmptyBatch("num_anchors must be ≥ 1"));
    }
    let mut rng = seed::rng(seed, &[0xF]);
    let anchors = (0..num_anchors).map(|_| manifold.sample_point(&mut rng)).collect();
    let offsets = (0..num_anchors)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    HolderFunction::new(*manifold, anchors, offsets, holder_const, exponent, bound)
}

pub fn eval_holder(f: &HolderFunction, x: &[f64]) -> Result<f64> {
    f.eval(x)
}

/// `n` labelled points plus a query, all in `R^D`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    xs: Vec<Vec<f64>>,
    ys: Vec<f64>,
    hidden_label: f64,
}

impl Prompt {
    /// `xs` holds the `n` labelled points followed by the query.
    pub fn new(xs: Vec<Vec<f64>>, ys: Vec<f64>, hidden_label: f64) -> Result<Self> {
        if ys.is_empty() {
            return Err(Error::EmptyBatch("a prompt needs n ≥ 1 labelled points"));
        }
        if xs.len() != ys.len() + 1 {
            return Err(Error::Dimension {
                what: "prompt points (n labelled + 1 query)",
                expected: ys.len() + 1,
                found: xs.len(),
            });
        }
        let dim = xs[0].len();
        if dim == 0 {
            return Err(Error::Parameter("prompt points must have dimension ≥ 1".into()));
        }
        if let Some(bad) = xs.iter().find(|x| x.len() != dim) {
            return Err(Error::Dimension {
                what: "prompt point",
                expected: dim,
                found: bad.len(),
            });
        }
        Ok(Self {
            xs,
            ys,
            hidden_label,
        })
    }

    pub fn n(&self) -> usize {
        self.ys.len()
    }

    pub fn ambient_dim(&self) -> usize {
        self.xs[0].len()
    }

    /// Labelled points `x_1..x_n`.
    pub fn points(&self) -> &[Vec<f64>] {
        &self.xs[..self.n()]
    }

    pub fn labels(&self) -> &[f64] {
        &self.ys
    }

    pub fn query(&self) -> &[f64] {
        &self.xs[self.n()]
    }

    pub fn hidden_label(&self) -> f64 {
        self.hidden_label
    }

    pub fn all_points(&self) -> &[Vec<f64>] {
        &self.xs
    }

    pub fn with_hidden_label(mut self, y: f64) -> Self {
        self.hidden_label = y;
        self
    }
}

/// Manifold + embedding + target function: everything needed to draw
/// prompts for one regression task.
#[derive(Debug, Clone)]
pub struct ManifoldTask {
    pub embedding: IsometricEmbedding,
    pub function: HolderFunction,
}

impl ManifoldTask {
    pub fn new(embedding: IsometricEmbedding, function: HolderFunction) -> Result<Self> {
        let base = function.manifold().base_ambient_dim();
        if embedding.base_dim() != base {
            return Err(Error::Dimension {
                what: "embedding base dimension",
                expected: base,
                found: embedding.base_dim(),
            });
        }
        Ok(Self {
            embedding,
            function,
        })
    }

    pub fn manifold(&self) -> &Manifold {
        self.function.manifold()
    }

    pub fn prompt(&self, n: usize, seed: u64) -> Result<Prompt> {
        generate_task(self.manifold(), &self.embedding, &self.function, n, seed)
    }

    /// Prompt from explicit base points (labelled points then the query).
    pub fn prompt_from_base(&self, base: &[Vec<f64>]) -> Result<Prompt> {
        let n = base.len().saturating_sub(1);
        let ys = base[..n]
            .iter()
            .map(|x| self.function.eval_unchecked(x))
            .collect();
        let hidden = self.function.eval_unchecked(&base[n]);
        let xs = base.iter().map(|x| self.embedding.embed_unchecked(x)).collect();
        Prompt::new(xs, ys, hidden)
    }
}

/// Draws `n + 1` uniform points, labels the first `n` with `f` and embeds all
/// of them; the query's label is kept as `hidden_label`.
pub fn generate_task(
    manifold: &Manifold,
    embedding: &IsometricEmbedding,
    f: &HolderFunction,
    n: usize,
    seed: u64,
) -> Result<Prompt> {
    if n == 0 {
        return Err(Error::EmptyBatch("generate_task needs n ≥ 1"));
    }
    if f.manifold() != manifold {
        return Err(Error::Parameter("function defined on a different manifold".into()));
    }
    let base = sample_uniform(manifold, n + 1, seed)?;
    ManifoldTask::new(embedding.clone(), f.clone())?.prompt_from_base(&base)
}
