//! The five experiment drivers. Tasks run in parallel with seeds derived
//! from `(config seed, experiment, grid index, task)`; results are collected
//! in task order and reduced with a fixed summation tree, so reports do not
//! depend on the thread count.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use crate::construction::{build_kernel_transformer, diagnose, verify_equivalence, KernelTransformer};
use crate::error::{Error, Result};
use crate::kernel::{bandwidth_for, nw_estimate, Bandwidth, MonteCarloReference};
use crate::manifold::{generate_task, IsometricEmbedding, Manifold, Prompt};
use crate::seed;
use crate::transformer::{forward, forward_traced};

use super::config::{Estimator, ExperimentConfig, TaskFamily};
use super::fit::{fit_loglog_slope, mean_stderr, pairwise_sum};
use super::report::{ExperimentReport, ReportRow, SlopeSummary};
use super::tasks::{draw_function, TaskDraw};

/// Relative tolerance of the equivalence suite.
pub const EQUIVALENCE_TOL: f64 = 1e-9;
/// Largest allowed max/min MSE ratio across ambient dimensions.
pub const AMBIENT_RATIO: f64 = 1.2;
/// Largest allowed estimate change under a change of frame.
pub const FRAME_TOL: f64 = 1e-10;

const EQUIV: u64 = 1;
const RATE: u64 = 2;
const BIAS: u64 = 3;
const VARIANCE: u64 = 4;
const AMBIENT: u64 = 5;

fn bandwidth(cfg: &ExperimentConfig, n: usize, m: &Manifold) -> Result<Bandwidth> {
    match cfg.bandwidth {
        Some(h) => Bandwidth::new(h),
        None => bandwidth_for(n, cfg.alpha, m.intrinsic_dim()),
    }
}

fn build_for(cfg: &ExperimentConfig, m: &Manifold, n: usize, dim: usize, h: Bandwidth) -> Result<KernelTransformer> {
    build_kernel_transformer(n, dim, h, m.coord_bound(), cfg.label_bound, cfg.safety_factor)
}

fn predict(kt: Option<&KernelTransformer>, p: &Prompt, h: Bandwidth) -> Result<f64> {
    match kt {
        Some(kt) => forward(&kt.spec, p),
        None => Ok(nw_estimate(p, h)),
    }
}

fn tasks_for(cfg: &ExperimentConfig, n: usize, dim: usize) -> usize {
    match cfg.work_budget {
        None => cfg.tasks_per_point,
        Some(b) => ((b / (n * dim) as f64).floor() as usize).clamp(8, cfg.tasks_per_point.max(8)),
    }
}

fn fit_slope(rep: &mut ExperimentReport, band: Option<(f64, f64)>) -> Result<()> {
    let pts: Vec<(f64, f64)> = rep.rows.iter().map(|r| (r.value, r.metric)).collect();
    if pts.len() < 4 {
        return Ok(());
    }
    let fit = fit_loglog_slope(&pts)?;
    rep.slope = Some(SlopeSummary {
        fit,
        band,
        within_band: band.map(|(lo, hi)| lo <= fit.slope && fit.slope <= hi),
    });
    Ok(())
}

fn row(value: f64, metric: f64, stderr: f64, aux: &[(&str, f64)]) -> ReportRow {
    ReportRow {
        value,
        metric,
        stderr,
        aux: aux.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
    }
}

/// Compiles the network once per `(n, D)` and checks it against
/// `nw_estimate` on fresh tasks; failing prompts are diagnosed stage by
/// stage.
pub fn run_equivalence_suite(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let start = Instant::now();
    let m = cfg.manifold()?;
    let mut rep = ExperimentReport::new("equivalence", "n", "max_rel_diff", cfg);
    let mut worst = 0.0f64;
    for (gi, &n) in cfg.n_grid.iter().enumerate() {
        let h = bandwidth(cfg, n, &m)?;
        for (di, &dim) in cfg.dims().iter().enumerate() {
            let kt = build_for(cfg, &m, n, dim, h)?;
            let tasks = tasks_for(cfg, n, dim);
            let results = (0..tasks)
                .into_par_iter()
                .map(|t| {
                    let s = seed::derive(cfg.seed, &[EQUIV, gi as u64, di as u64, t as u64]);
                    let f = draw_function(cfg, &m, h.get(), seed::derive(s, &[1]))?;
                    let e = IsometricEmbedding::random(m.base_ambient_dim(), dim, seed::derive(s, &[2]))?;
                    let p = generate_task(&m, &e, &f, n, seed::derive(s, &[3]))?;
                    let eq = verify_equivalence(&kt.spec, &p, h)?;
                    let note = if eq.rel_diff > EQUIVALENCE_TOL {
                        let cause = match diagnose(&kt, &p, EQUIVALENCE_TOL)? {
                            Some(f) => f.to_string(),
                            None => "no single stage exceeds the tolerance".to_string(),
                        };
                        Some(format!(
                            "n={n} D={dim} task {t}: rel_diff {:.3e}; {cause}",
                            eq.rel_diff
                        ))
                    } else {
                        None
                    };
                    Ok((eq, note))
                })
                .collect::<Result<Vec<_>>>()?;
            let rel: Vec<f64> = results.iter().map(|(e, _)| e.rel_diff).collect();
            let max_rel = rel.iter().copied().fold(0.0, f64::max);
            let max_abs = results.iter().map(|(e, _)| e.abs_diff).fold(0.0, f64::max);
            let (mean_rel, se) = mean_stderr(&rel);
            worst = worst.max(max_rel);
            rep.diagnostics.extend(results.into_iter().filter_map(|(_, note)| note).take(3));
            rep.rows.push(row(
                n as f64,
                max_rel,
                se,
                &[
                    ("ambient_dim", dim as f64),
                    ("bandwidth", h.get()),
                    ("tasks", tasks as f64),
                    ("mean_rel_diff", mean_rel),
                    ("max_abs_diff", max_abs),
                    ("kappa", kt.spec.arch.kappa),
                    ("c_interaction", kt.constants.c_interaction()),
                ],
            ));
        }
    }
    rep.check(
        "max_rel_diff",
        worst,
        format!("≤ {EQUIVALENCE_TOL:e}"),
        worst <= EQUIVALENCE_TOL,
    );
    rep.wall_time_secs = start.elapsed().as_secs_f64();
    rep.finish();
    Ok(rep)
}

/// Squared prediction error against `f(x_{n+1})` with `h = n^{−1/(2α+d)}`.
pub fn run_rate_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let start = Instant::now();
    let m = cfg.manifold()?;
    let mut rep = ExperimentReport::new("rate", "n", "mse", cfg);
    for (gi, &n) in cfg.n_grid.iter().enumerate() {
        let h = bandwidth(cfg, n, &m)?;
        let kt = match cfg.estimator {
            Estimator::Transformer => Some(build_for(cfg, &m, n, cfg.ambient_dim, h)?),
            Estimator::Direct => None,
        };
        let per_task = (0..cfg.tasks_per_point)
            .into_par_iter()
            .map(|t| {
                let s = seed::derive(cfg.seed, &[RATE, gi as u64, t as u64]);
                let draw = TaskDraw::new(cfg, &m, h.get(), n, cfg.ambient_dim, s, seed::derive(s, &[9]))?;
                let se = draw
                    .prompts()?
                    .iter()
                    .map(|p| Ok((predict(kt.as_ref(), p, h)? - p.hidden_label()).powi(2)))
                    .collect::<Result<Vec<f64>>>()?;
                Ok(pairwise_sum(&se) / se.len() as f64)
            })
            .collect::<Result<Vec<f64>>>()?;
        let (mse, se) = mean_stderr(&per_task);
        rep.rows.push(row(
            n as f64,
            mse,
            se,
            &[("bandwidth", h.get()), ("tasks", per_task.len() as f64)],
        ));
    }
    fit_slope(&mut rep, cfg.slope_band)?;
    let inversions = rep.rows.windows(2).filter(|w| w[1].metric > w[0].metric).count();
    rep.check("mse_inversions", inversions as f64, "≤ 1".into(), inversions <= 1);
    rep.wall_time_secs = start.elapsed().as_secs_f64();
    rep.finish();
    Ok(rep)
}

/// `|K̄_h(f; x) − f(x)|` from the Monte-Carlo integral estimator over the
/// bandwidth grid; one sample set per task serves every bandwidth.
pub fn run_bias_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let start = Instant::now();
    let m = cfg.manifold()?;
    if cfg.h_grid.is_empty() {
        return Err(Error::Config("bias experiment needs a nonempty h_grid".into()));
    }
    if let Some(&h) = cfg.h_grid.iter().find(|&&h| h >= m.reach() / 2.0) {
        return Err(Error::Config(format!(
            "h_grid entry {h} is not below half the reach ({})",
            m.reach() / 2.0
        )));
    }
    if matches!(cfg.family, TaskFamily::BandwidthScaled { .. }) {
        return Err(Error::Config(
            "bias experiment needs a bandwidth-independent family (min_plus or cone)".into(),
        ));
    }
    let hs: Vec<Bandwidth> = cfg.h_grid.iter().map(|&h| Bandwidth::new(h)).collect::<Result<_>>()?;
    let mut rep = ExperimentReport::new("bias", "h", "bias", cfg);
    let per_task = (0..cfg.tasks_per_point)
        .into_par_iter()
        .map(|t| {
            let s = seed::derive(cfg.seed, &[BIAS, t as u64]);
            let draw = TaskDraw::new(cfg, &m, hs[0].get(), 0, cfg.ambient_dim, s, seed::derive(s, &[9]))?;
            let (e, f) = (&draw.task.embedding, &draw.task.function);
            let mc = MonteCarloReference::new(&m, e, f, cfg.mc_samples, seed::derive(s, &[4]))?;
            Ok(hs
                .iter()
                .map(|&h| {
                    let (bias, se): (Vec<f64>, Vec<f64>) = draw
                        .base_queries
                        .iter()
                        .map(|q| {
                            let est = mc.estimate(&e.embed_unchecked(q), h);
                            ((est.value - f.eval_unchecked(q)).abs(), est.std_error)
                        })
                        .unzip();
                    let k = bias.len() as f64;
                    (pairwise_sum(&bias) / k, pairwise_sum(&se) / k)
                })
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    for (k, h) in hs.iter().enumerate() {
        let bias: Vec<f64> = per_task.iter().map(|r| r[k].0).collect();
        let mc_se: Vec<f64> = per_task.iter().map(|r| r[k].1).collect();
        let (b, se) = mean_stderr(&bias);
        rep.rows.push(row(h.get(), b, se, &[("mc_stderr", mean_stderr(&mc_se).0)]));
    }
    fit_slope(&mut rep, cfg.slope_band)?;
    rep.wall_time_secs = start.elapsed().as_secs_f64();
    rep.finish();
    Ok(rep)
}

/// Per task: deviations `|K_h − K̄_h|` at fixed queries, for every grid
/// point, with the integral estimator from one Monte-Carlo sample set.
fn variance_deviations(
    cfg: &ExperimentConfig,
    m: &Manifold,
    grid: &[(usize, Bandwidth)],
    t: usize,
) -> Result<Vec<(f64, f64)>> {
    let s = seed::derive(cfg.seed, &[VARIANCE, t as u64]);
    let draw = TaskDraw::new(cfg, m, grid[0].1.get(), 0, cfg.ambient_dim, s, seed::derive(s, &[9]))?;
    let (e, f) = (&draw.task.embedding, &draw.task.function);
    let mc = MonteCarloReference::new(m, e, f, cfg.mc_samples, seed::derive(s, &[4]))?;
    let queries: Vec<Vec<f64>> = draw.base_queries.iter().map(|q| e.embed_unchecked(q)).collect();
    grid.iter()
        .enumerate()
        .map(|(gi, &(n, h))| {
            let mut rng = seed::rng(s, &[3, gi as u64]);
            let xs: Vec<Vec<f64>> = (0..n).map(|_| m.sample_point(&mut rng)).collect();
            let ys: Vec<f64> = xs.iter().map(|x| f.eval_unchecked(x)).collect();
            let exs: Vec<Vec<f64>> = xs.iter().map(|x| e.embed_unchecked(x)).collect();
            let mut dev = Vec::with_capacity(queries.len());
            let mut mc_se = Vec::with_capacity(queries.len());
            for q in &queries {
                let mut all = exs.clone();
                all.push(q.clone());
                let p = Prompt::new(all, ys.clone(), 0.0)?;
                let oracle = mc.estimate(q, h);
                dev.push((nw_estimate(&p, h) - oracle.value).abs());
                mc_se.push(oracle.std_error);
            }
            let k = dev.len() as f64;
            Ok((pairwise_sum(&dev) / k, pairwise_sum(&mc_se) / k))
        })
        .collect()
}

/// Fluctuation of the empirical estimator around its integral form. With
/// `n_grid` and a fixed `bandwidth` this sweeps `n`; with `h_grid` and
/// `prompt_len` it sweeps the bandwidth instead.
pub fn run_variance_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let start = Instant::now();
    let m = cfg.manifold()?;
    let d = m.intrinsic_dim() as i32;
    let h_sweep = !cfg.h_grid.is_empty();
    let grid: Vec<(usize, Bandwidth)> = if h_sweep {
        let n = cfg
            .prompt_len
            .ok_or_else(|| Error::Config("a bandwidth sweep needs prompt_len".into()))?;
        cfg.h_grid.iter().map(|&h| Ok((n, Bandwidth::new(h)?))).collect::<Result<_>>()?
    } else {
        let h = cfg
            .bandwidth
            .ok_or_else(|| Error::Config("an n sweep needs a fixed bandwidth".into()))?;
        let h = Bandwidth::new(h)?;
        if cfg.n_grid.is_empty() {
            return Err(Error::Config("variance experiment needs n_grid or h_grid".into()));
        }
        cfg.n_grid.iter().map(|&n| (n, h)).collect()
    };
    let per_task = (0..cfg.tasks_per_point)
        .into_par_iter()
        .map(|t| variance_deviations(cfg, &m, &grid, t))
        .collect::<Result<Vec<_>>>()?;
    let mut rep = ExperimentReport::new(
        if h_sweep { "variance_h" } else { "variance" },
        if h_sweep { "h" } else { "n" },
        "deviation",
        cfg,
    );
    for (k, &(n, h)) in grid.iter().enumerate() {
        let dev: Vec<f64> = per_task.iter().map(|r| r[k].0).collect();
        let mc_se: Vec<f64> = per_task.iter().map(|r| r[k].1).collect();
        let (mean, se) = mean_stderr(&dev);
        let scale = (n as f64 * h.get().powi(d)).sqrt();
        rep.rows.push(row(
            if h_sweep { h.get() } else { n as f64 },
            mean,
            se,
            &[
                ("mc_stderr", mean_stderr(&mc_se).0),
                ("scaled", mean * scale),
                ("scaled_holder", mean * scale / h.get().powf(cfg.alpha)),
            ],
        ));
    }
    fit_slope(&mut rep, cfg.slope_band)?;
    if h_sweep {
        // Noiseless labels: the spread inside a window is ~L h^α, so the
        // deviation scales as h^α / √(n h^d).
        let scaled: Vec<f64> = rep.rows.iter().map(|r| r.aux["scaled_holder"]).collect();
        let hi = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = scaled.iter().copied().fold(f64::INFINITY, f64::min);
        rep.check("scaled_deviation_spread", hi / lo, "≤ 2".into(), hi / lo <= 2.0);
    }
    rep.wall_time_secs = start.elapsed().as_secs_f64();
    rep.finish();
    Ok(rep)
}

/// MSE at fixed `n` across ambient dimensions. Base points, functions and
/// queries depend only on the task index, so every `D` sees the same
/// regression problem in a different isometric frame.
pub fn run_ambient_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let start = Instant::now();
    let m = cfg.manifold()?;
    let n = cfg.prompt_len.unwrap_or(256);
    let h = bandwidth(cfg, n, &m)?;
    let mut rep = ExperimentReport::new("ambient", "D", "mse", cfg);
    let mut frame_diff = 0.0f64;
    for &dim in &cfg.dims() {
        let kt = build_for(cfg, &m, n, dim, h)?;
        let use_kt = (cfg.estimator == Estimator::Transformer).then_some(&kt);
        let per_task = (0..cfg.tasks_per_point)
            .into_par_iter()
            .map(|t| {
                let s = seed::derive(cfg.seed, &[AMBIENT, t as u64]);
                let draw = TaskDraw::new(cfg, &m, h.get(), n, dim, s, seed::derive(s, &[9, dim as u64]))?;
                let other = draw.reembed(dim, seed::derive(s, &[10, dim as u64]))?;
                let mut se = Vec::new();
                let mut diff = 0.0f64;
                for (p, q) in draw.prompts()?.iter().zip(other.prompts()?) {
                    se.push((predict(use_kt, p, h)? - p.hidden_label()).powi(2));
                    diff = diff.max((nw_estimate(p, h) - nw_estimate(&q, h)).abs());
                }
                Ok((pairwise_sum(&se) / se.len() as f64, diff))
            })
            .collect::<Result<Vec<_>>>()?;
        let mses: Vec<f64> = per_task.iter().map(|r| r.0).collect();
        let diff = per_task.iter().map(|r| r.1).fold(0.0, f64::max);
        frame_diff = frame_diff.max(diff);
        let (mse, se) = mean_stderr(&mses);
        rep.rows.push(row(
            dim as f64,
            mse,
            se,
            &[
                ("bandwidth", h.get()),
                ("kappa", kt.spec.arch.kappa),
                ("frame_diff", diff),
            ],
        ));
    }
    let hi = rep.rows.iter().map(|r| r.metric).fold(f64::NEG_INFINITY, f64::max);
    let lo = rep.rows.iter().map(|r| r.metric).fold(f64::INFINITY, f64::min);
    rep.check("mse_ratio", hi / lo, format!("≤ {AMBIENT_RATIO}"), hi / lo <= AMBIENT_RATIO);
    rep.check("frame_invariance", frame_diff, format!("≤ {FRAME_TOL:e}"), frame_diff <= FRAME_TOL);
    rep.wall_time_secs = start.elapsed().as_secs_f64();
    rep.finish();
    Ok(rep)
}

/// Writes every intermediate token matrix of the first equivalence task at
/// each grid point to `<dir>/n<n>_D<D>/{stage,attended}_<k>.csv`.
pub fn dump_stages(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let m = cfg.manifold()?;
    let mut written = Vec::new();
    for (gi, &n) in cfg.n_grid.iter().enumerate() {
        let h = bandwidth(cfg, n, &m)?;
        for (di, &dim) in cfg.dims().iter().enumerate() {
            let kt = build_for(cfg, &m, n, dim, h)?;
            let s = seed::derive(cfg.seed, &[EQUIV, gi as u64, di as u64, 0]);
            let f = draw_function(cfg, &m, h.get(), seed::derive(s, &[1]))?;
            let e = IsometricEmbedding::random(m.base_ambient_dim(), dim, seed::derive(s, &[2]))?;
            let p = generate_task(&m, &e, &f, n, seed::derive(s, &[3]))?;
            let trace = forward_traced(&kt.spec, &p)?;
            let sub = dir.join(format!("n{n}_D{dim}"));
            fs::create_dir_all(&sub)?;
            for (k, st) in trace.stages.iter().enumerate() {
                let path = sub.join(format!("stage_{k}.csv"));
                st.write_csv(fs::File::create(&path)?)?;
                written.push(path);
            }
            for (k, at) in trace.attended.iter().enumerate() {
                let path = sub.join(format!("attended_{}.csv", k + 1));
                at.write_csv(fs::File::create(&path)?)?;
                written.push(path);
            }
        }
    }
    Ok(written)
}
