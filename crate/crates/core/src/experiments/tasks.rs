//! Drawing target functions and prompts for the experiment grids.

use rand::Rng;

use crate::error::Result;
use crate::manifold::{
    make_holder_function, HolderFunction, IsometricEmbedding, Manifold, ManifoldTask, Prompt,
};
use crate::seed;

use super::config::{ExperimentConfig, TaskFamily};

/// Target function of `family` for a run at bandwidth `h`.
pub fn draw_function(cfg: &ExperimentConfig, m: &Manifold, h: f64, seed: u64) -> Result<HolderFunction> {
    let (l, a, r) = (cfg.holder_const, cfg.alpha, cfg.label_bound);
    match cfg.family {
        TaskFamily::MinPlus => make_holder_function(m, l, a, r, cfg.num_anchors, seed),
        TaskFamily::BandwidthScaled { anchor_scale } => {
            let scale = anchor_scale * h;
            let count = (m.volume() / scale.powi(m.intrinsic_dim() as i32)).ceil() as usize;
            let amp = (l * scale.powf(a)).min(r);
            let mut rng = seed::rng(seed, &[0xB5]);
            let anchors = (0..count.max(1)).map(|_| m.sample_point(&mut rng)).collect();
            let offsets = (0..count.max(1)).map(|_| rng.random_range(-amp..=amp)).collect();
            HolderFunction::new(*m, anchors, offsets, l, a, amp)
        }
        TaskFamily::Cone => {
            let mut rng = seed::rng(seed, &[0xC0]);
            HolderFunction::new(*m, vec![m.sample_point(&mut rng)], vec![-r], l, a, r)
        }
    }
}

/// One task at one grid point: function, embedding and a source of prompts
/// sharing the same labelled points across queries.
#[derive(Debug, Clone)]
pub struct TaskDraw {
    pub task: ManifoldTask,
    pub base_points: Vec<Vec<f64>>,
    pub base_queries: Vec<Vec<f64>>,
}

impl TaskDraw {
    /// `n` labelled points and `queries` query points; the embedding seed is
    /// separate so the same base draw can be re-embedded.
    pub fn new(
        cfg: &ExperimentConfig,
        m: &Manifold,
        h: f64,
        n: usize,
        ambient_dim: usize,
        task_seed: u64,
        embed_seed: u64,
    ) -> Result<Self> {
        let function = draw_function(cfg, m, h, seed::derive(task_seed, &[1]))?;
        let embedding = IsometricEmbedding::random(m.base_ambient_dim(), ambient_dim, embed_seed)?;
        let mut rng = seed::rng(task_seed, &[2]);
        let base_points = (0..n).map(|_| m.sample_point(&mut rng)).collect();
        let base_queries = match cfg.family {
            TaskFamily::Cone => vec![function.anchors()[0].clone(); cfg.queries_per_task],
            _ => (0..cfg.queries_per_task).map(|_| m.sample_point(&mut rng)).collect(),
        };
        Ok(Self {
            task: ManifoldTask::new(embedding, function)?,
            base_points,
            base_queries,
        })
    }

    /// Same function and base points in a different frame.
    pub fn reembed(&self, ambient_dim: usize, embed_seed: u64) -> Result<Self> {
        let m = self.task.manifold();
        let embedding = IsometricEmbedding::random(m.base_ambient_dim(), ambient_dim, embed_seed)?;
        Ok(Self {
            task: ManifoldTask::new(embedding, self.task.function.clone())?,
            ..self.clone()
        })
    }

    /// One prompt per query, all sharing the labelled points.
    pub fn prompts(&self) -> Result<Vec<Prompt>> {
        let e = &self.task.embedding;
        let f = &self.task.function;
        let xs: Vec<Vec<f64>> = self.base_points.iter().map(|x| e.embed_unchecked(x)).collect();
        let ys: Vec<f64> = self.base_points.iter().map(|x| f.eval_unchecked(x)).collect();
        self.base_queries
            .iter()
            .map(|q| {
                let mut all = xs.clone();
                all.push(e.embed_unchecked(q));
                Prompt::new(all, ys.clone(), f.eval_unchecked(q))
            })
            .collect()
    }
}
