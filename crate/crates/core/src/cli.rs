//! `nwformer verify | rates | lemmas`.
//!
//! Exit codes: 0 success, 1 a scientific check failed, 2 usage or
//! configuration error. Configuration comes from a preset per command, then
//! the JSON file given by `--config`, then the flags.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::construction::lemmas::{self, Fault, LemmaOutcome};
use crate::error::{Error, Result};
use crate::experiments::{
    dump_stages, run_ambient_experiment, run_bias_experiment, run_equivalence_suite,
    run_rate_experiment, run_variance_experiment, Estimator, ExperimentConfig, ExperimentReport,
    TaskFamily,
};
use crate::manifold::ManifoldKind;

#[derive(Debug, Parser)]
#[command(name = "nwformer", version, about = "Compile, verify and study transformers that compute Nadaraya-Watson regression")]
pub struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compile the network for each grid point and compare it with the
    /// direct estimator (exit 1 if any relative difference exceeds 1e-9).
    Verify {
        #[command(flatten)]
        common: CommonArgs,
        /// Also write every intermediate token matrix as CSV.
        #[arg(long)]
        dump_stages: bool,
    },
    /// Run a rate, bias, variance or ambient-dimension study (exit 1 if the
    /// fitted slope or a check falls outside its band).
    Rates {
        #[arg(long, value_enum, default_value_t = Which::Rate)]
        which: Which,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Randomised property checks of the interaction head, gating FFN and
    /// decrementing FFN.
    Lemmas {
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, value_enum, hide = true)]
        inject_fault: Option<FaultArg>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Which {
    Rate,
    Bias,
    Variance,
    Ambient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FaultArg {
    GatingOffByOne,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// JSON file with any subset of the experiment configuration keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated prompt lengths.
    #[arg(long, value_delimiter = ',')]
    pub n_grid: Option<Vec<usize>>,
    #[arg(long, value_parser = parse_manifold)]
    pub manifold: Option<ManifoldKind>,
    #[arg(long)]
    pub ambient_dim: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (default `out`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub safety_factor: Option<f64>,
    /// Tasks per grid point.
    #[arg(long)]
    pub tasks: Option<usize>,
}

fn parse_manifold(s: &str) -> std::result::Result<ManifoldKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Every key is optional; unknown keys are rejected.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub manifold: Option<ManifoldKind>,
    pub radius: Option<f64>,
    pub ambient_dim: Option<usize>,
    pub alpha: Option<f64>,
    pub holder_const: Option<f64>,
    pub label_bound: Option<f64>,
    pub num_anchors: Option<usize>,
    pub family: Option<TaskFamily>,
    pub n_grid: Option<Vec<usize>>,
    pub h_grid: Option<Vec<f64>>,
    pub d_grid: Option<Vec<usize>>,
    pub bandwidth: Option<f64>,
    pub prompt_len: Option<usize>,
    pub tasks_per_point: Option<usize>,
    pub queries_per_task: Option<usize>,
    pub mc_samples: Option<usize>,
    pub seed: Option<u64>,
    pub safety_factor: Option<f64>,
    pub estimator: Option<Estimator>,
    pub slope_band: Option<(f64, f64)>,
    pub work_budget: Option<f64>,
    pub output: Option<PathBuf>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            if path == "." {
                Error::Config(e.into_inner().to_string())
            } else {
                Error::Config(format!("key `{path}`: {}", e.into_inner()))
            }
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    fn apply(&self, c: &mut ExperimentConfig) {
        macro_rules! set {
            ($($k:ident),*) => {$(if let Some(v) = &self.$k { c.$k = v.clone(); })*};
        }
        set!(
            manifold, radius, ambient_dim, alpha, holder_const, label_bound, num_anchors, family,
            n_grid, h_grid, d_grid, seed, safety_factor, estimator, tasks_per_point,
            queries_per_task, mc_samples, output
        );
        if self.bandwidth.is_some() {
            c.bandwidth = self.bandwidth;
        }
        if self.prompt_len.is_some() {
            c.prompt_len = self.prompt_len;
        }
        if self.slope_band.is_some() {
            c.slope_band = self.slope_band;
        }
        if self.work_budget.is_some() {
            c.work_budget = self.work_budget;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Verify,
    Rates(Which),
}

/// Preset, then file, then flags. Slope bands that follow from `α` or the
/// manifold are recomputed unless the file pins them.
pub fn resolve_config(preset: Preset, args: &CommonArgs) -> Result<ExperimentConfig> {
    let file = match &args.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let kind = args.manifold.or(file.manifold).unwrap_or(ManifoldKind::Circle);
    let alpha = args.alpha.or(file.alpha).unwrap_or(1.0);
    let mut c = match preset {
        Preset::Verify => ExperimentConfig::equivalence(),
        Preset::Rates(Which::Rate) => ExperimentConfig::rate(kind),
        Preset::Rates(Which::Bias) => ExperimentConfig::bias(alpha),
        Preset::Rates(Which::Variance) => ExperimentConfig::variance(),
        Preset::Rates(Which::Ambient) => ExperimentConfig::ambient(),
    };
    file.apply(&mut c);
    if let Some(v) = &args.n_grid {
        c.n_grid = v.clone();
    }
    c.manifold = kind;
    c.alpha = alpha;
    if let Some(v) = args.ambient_dim {
        c.ambient_dim = v;
    } else if file.ambient_dim.is_none() {
        // Presets pick the smallest frame; keep it valid for the manifold.
        let base = c.manifold()?.base_ambient_dim();
        c.ambient_dim = c.ambient_dim.max(base);
    }
    if let Some(v) = args.seed {
        c.seed = v;
    }
    if let Some(v) = &args.out {
        c.output = v.clone();
    }
    if let Some(v) = args.safety_factor {
        c.safety_factor = v;
    }
    if let Some(v) = args.tasks {
        c.tasks_per_point = v;
    }
    if file.slope_band.is_none() {
        match preset {
            Preset::Rates(Which::Rate) => c.slope_band = Some(c.rate_band()),
            Preset::Rates(Which::Bias) => c.slope_band = Some((alpha - 0.25, alpha + 0.25)),
            _ => {}
        }
    }
    c.validate()?;
    Ok(c)
}

fn report_out(rep: &ExperimentReport) -> Result<()> {
    print!("{}", rep.summary());
    let (csv, json) = rep.write_to(&rep.config.output)?;
    println!("wrote {} and {}", csv.display(), json.display());
    Ok(())
}

fn cmd_verify(common: &CommonArgs, stages: bool) -> Result<bool> {
    let cfg = resolve_config(Preset::Verify, common)?;
    let rep = run_equivalence_suite(&cfg)?;
    report_out(&rep)?;
    if stages {
        let files = dump_stages(&cfg, &cfg.output.join("stages"))?;
        println!("wrote {} stage matrices under {}", files.len(), cfg.output.join("stages").display());
    }
    Ok(rep.passed)
}

fn cmd_rates(which: Which, common: &CommonArgs) -> Result<bool> {
    let cfg = resolve_config(Preset::Rates(which), common)?;
    let rep = match which {
        Which::Rate => run_rate_experiment(&cfg)?,
        Which::Bias => run_bias_experiment(&cfg)?,
        Which::Variance => run_variance_experiment(&cfg)?,
        Which::Ambient => run_ambient_experiment(&cfg)?,
    };
    report_out(&rep)?;
    Ok(rep.passed)
}

fn cmd_lemmas(trials: usize, seed: u64, out: &Path, fault: Option<FaultArg>) -> Result<bool> {
    if trials == 0 {
        return Err(Error::Config("--trials must be ≥ 1".into()));
    }
    let fault = fault.map(|FaultArg::GatingOffByOne| Fault::GatingOffByOne);
    let outcomes: Vec<LemmaOutcome> = lemmas::run_all(trials, seed, fault);
    for o in &outcomes {
        println!(
            "{:<14} {:>6} trials  {:>4} failures  {}",
            o.name,
            o.trials,
            o.failures,
            if o.passed() { "pass" } else { "FAIL" }
        );
        if let Some(f) = &o.first_failure {
            println!("  first failure: {f}");
        }
    }
    fs::create_dir_all(out)?;
    let path = out.join("lemmas.json");
    fs::write(&path, serde_json::to_string_pretty(&outcomes)?)?;
    println!("wrote {}", path.display());
    Ok(outcomes.iter().all(LemmaOutcome::passed))
}

pub fn run(cli: Cli) -> ExitCode {
    let level = if cli.verbose {
        log::LevelFilter::Info
    } else {
        log::LevelFilter::Warn
    };
    let _ = env_logger::Builder::new().filter_level(level).try_init();
    let result = match &cli.command {
        Command::Verify {
            common,
            dump_stages,
        } => cmd_verify(common, *dump_stages),
        Command::Rates { which, common } => cmd_rates(*which, common),
        Command::Lemmas {
            trials,
            seed,
            out,
            inject_fault,
        } => cmd_lemmas(*trials, *seed, out, *inject_fault),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}
