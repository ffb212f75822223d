use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::{Manifold, ManifoldKind};

/// How target functions are drawn for each task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskFamily {
    /// `num_anchors` random anchors, offsets uniform on `[−R, R]`, clamped
    /// at `±R`. Fixed as `n` grows.
    MinPlus,
    /// Anchors on a grid of scale `s·h` with amplitude `L (s h)^α`: the
    /// function has features at the kernel scale for every `n`, so the
    /// squared bias stays of order `h^{2α}` instead of collapsing.
    BandwidthScaled { anchor_scale: f64 },
    /// One anchor with offset `−R`; queries sit on the tip.
    Cone,
}

/// Which estimator produces the prediction in rate and ambient runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// The compiled network's forward pass.
    Transformer,
    /// `nw_estimate` directly.
    Direct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub manifold: ManifoldKind,
    pub radius: f64,
    pub ambient_dim: usize,
    pub alpha: f64,
    pub holder_const: f64,
    pub label_bound: f64,
    pub num_anchors: usize,
    pub family: TaskFamily,
    pub n_grid: Vec<usize>,
    pub h_grid: Vec<f64>,
    /// Ambient dimensions; the equivalence suite crosses it with `n_grid`.
    pub d_grid: Vec<usize>,
    /// Fixed bandwidth; `None` means `bandwidth_for(n, α, d)`.
    pub bandwidth: Option<f64>,
    /// Fixed prompt length for bandwidth and dimension sweeps.
    pub prompt_len: Option<usize>,
    pub tasks_per_point: usize,
    pub queries_per_task: usize,
    pub mc_samples: usize,
    pub seed: u64,
    pub safety_factor: f64,
    pub estimator: Estimator,
    /// Accepted slope interval; `None` reports the slope without judging it.
    pub slope_band: Option<(f64, f64)>,
    /// Caps `tasks · n · D` per grid point of the equivalence suite (never
    /// below 8 tasks).
    pub work_budget: Option<f64>,
    pub output: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            manifold: ManifoldKind::Circle,
            radius: 1.0,
            ambient_dim: 10,
            alpha: 1.0,
            holder_const: 1.0,
            label_bound: 1.0,
            num_anchors: 8,
            family: TaskFamily::MinPlus,
            n_grid: vec![4, 16, 64, 256],
            h_grid: Vec::new(),
            d_grid: Vec::new(),
            bandwidth: None,
            prompt_len: None,
            tasks_per_point: 8,
            queries_per_task: 16,
            mc_samples: 100_000,
            seed: 0,
            safety_factor: 2.0,
            estimator: Estimator::Transformer,
            slope_band: None,
            work_budget: None,
            output: PathBuf::from("out"),
        }
    }
}

fn powers_of_two(lo: u32, hi: u32) -> Vec<usize> {
    (lo..=hi).map(|k| 1usize << k).collect()
}

impl ExperimentConfig {
    /// Circle, `n ∈ {4, 16, 64, 256}`, `D = 10`.
    pub fn equivalence() -> Self {
        Self::default()
    }

    /// `n ∈ {16, …, 2048}` with the bandwidth-scaled family and the exponent
    /// band `−2α/(2α+d) ± 0.15`.
    pub fn rate(kind: ManifoldKind) -> Self {
        let mut c = Self {
            manifold: kind,
            ambient_dim: Manifold::new(kind, 1.0).map(|m| m.base_ambient_dim()).unwrap_or(3),
            family: TaskFamily::BandwidthScaled { anchor_scale: 0.25 },
            n_grid: powers_of_two(4, 11),
            tasks_per_point: 64,
            ..Self::default()
        };
        c.slope_band = Some(c.rate_band());
        c
    }

    /// Cone targets on the circle, `h ∈ {0.4, 0.2, 0.1, 0.05}`, band `α ± 0.25`.
    pub fn bias(alpha: f64) -> Self {
        Self {
            alpha,
            ambient_dim: 2,
            family: TaskFamily::Cone,
            n_grid: Vec::new(),
            h_grid: vec![0.05, 0.1, 0.2, 0.4],
            tasks_per_point: 32,
            queries_per_task: 1,
            slope_band: Some((alpha - 0.25, alpha + 0.25)),
            ..Self::default()
        }
    }

    /// Circle, `h = 0.2`, `n ∈ {32, …, 4096}`, band `−0.5 ± 0.1`.
    pub fn variance() -> Self {
        Self {
            ambient_dim: 2,
            n_grid: powers_of_two(5, 12),
            bandwidth: Some(0.2),
            tasks_per_point: 64,
            mc_samples: 400_000,
            estimator: Estimator::Direct,
            slope_band: Some((-0.6, -0.4)),
            ..Self::default()
        }
    }

    /// Circle at `n = 256` embedded in `D ∈ {3, 10, 30, 100}`.
    pub fn ambient() -> Self {
        Self {
            n_grid: Vec::new(),
            d_grid: vec![3, 10, 30, 100],
            prompt_len: Some(256),
            tasks_per_point: 16,
            queries_per_task: 8,
            ..Self::default()
        }
    }

    /// `−2α/(2α+d) ± 0.15`.
    pub fn rate_band(&self) -> (f64, f64) {
        let d = Manifold::new(self.manifold, 1.0).map(|m| m.intrinsic_dim()).unwrap_or(1) as f64;
        let centre = -2.0 * self.alpha / (2.0 * self.alpha + d);
        (centre - 0.15, centre + 0.15)
    }

    pub fn manifold(&self) -> Result<Manifold> {
        Manifold::new(self.manifold, self.radius)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.manifold()?;
        let positive = [
            ("radius", self.radius),
            ("alpha", self.alpha),
            ("holder_const", self.holder_const),
            ("label_bound", self.label_bound),
            ("safety_factor", self.safety_factor),
        ];
        for (key, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{key} must be positive, got {v}")));
            }
        }
        if self.alpha > 1.0 {
            return Err(Error::Config(format!("alpha must lie in (0, 1], got {}", self.alpha)));
        }
        if self.ambient_dim < m.base_ambient_dim() {
            return Err(Error::Config(format!(
                "ambient_dim {} is below the {} base coordinates of the {}",
                self.ambient_dim,
                m.base_ambient_dim(),
                m.kind.name()
            )));
        }
        if self.tasks_per_point < 8 {
            return Err(Error::Config(format!(
                "tasks_per_point must be ≥ 8, got {}",
                self.tasks_per_point
            )));
        }
        for (key, v) in [
            ("queries_per_task", self.queries_per_task),
            ("num_anchors", self.num_anchors),
            ("mc_samples", self.mc_samples),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{key} must be positive")));
            }
        }
        increasing("n_grid", &self.n_grid.iter().map(|&n| n as f64).collect::<Vec<_>>())?;
        increasing("h_grid", &self.h_grid)?;
        increasing("d_grid", &self.d_grid.iter().map(|&n| n as f64).collect::<Vec<_>>())?;
        if self.n_grid.first() == Some(&0) {
            return Err(Error::Config("n_grid entries must be ≥ 1".into()));
        }
        if let Some(&h) = self.h_grid.first() {
            if !(h > 0.0) {
                return Err(Error::Config(format!("h_grid entries must be positive, got {h}")));
            }
        }
        if let Some(&d) = self.d_grid.first() {
            if d < m.base_ambient_dim() {
                return Err(Error::Config(format!(
                    "d_grid entry {d} is below the base dimension {}",
                    m.base_ambient_dim()
                )));
            }
        }
        if let Some(h) = self.bandwidth {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::Config(format!("bandwidth must be positive, got {h}")));
            }
        }
        if self.prompt_len == Some(0) {
            return Err(Error::Config("prompt_len must be ≥ 1".into()));
        }
        if let TaskFamily::BandwidthScaled { anchor_scale } = self.family {
            if !(anchor_scale > 0.0) {
                return Err(Error::Config(format!("anchor_scale must be positive, got {anchor_scale}")));
            }
        }
        if let Some((lo, hi)) = self.slope_band {
            if !(lo < hi) {
                return Err(Error::Config(format!("slope_band ({lo}, {hi}) is empty")));
            }
        }
        if let Some(b) = self.work_budget {
            if !(b > 0.0) {
                return Err(Error::Config(format!("work_budget must be positive, got {b}")));
            }
        }
        Ok(())
    }

    /// Ambient dimensions to sweep: `d_grid`, or just `ambient_dim`.
    pub fn dims(&self) -> Vec<usize> {
        if self.d_grid.is_empty() {
            vec![self.ambient_dim]
        } else {
            self.d_grid.clone()
        }
    }
}

fn increasing(key: &str, v: &[f64]) -> Result<()> {
    if v.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Config(format!("{key} must be strictly increasing")));
    }
    Ok(())
}
