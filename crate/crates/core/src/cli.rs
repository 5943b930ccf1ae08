//! Command-line orchestration: config loading and overrides, the train /
//! eval / probe / compare / export-perturbed-screens subcommands, and the
//! artifacts they write.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::attack::{fgsm_perturb, AttackTargets, AttackVariant};
use crate::config::{ConfigError, ExperimentConfig};
use crate::evaluation::{
    compare_agents, csv_header, epsilon_sweep, loss_landscape_probe, probe_action,
    probe_observation, write_actions_csv, write_comparison_csv, write_probe_csv, write_sweep_csv,
    EvalError, ObsSource,
};
use crate::policy::{checkpoint, PolicyError, PolicyParams};
use crate::scenario::Scenario;
use crate::trainer::{train, write_curve_csv, Algo, TrainError};

/// Environment variable overriding the output root (below `--out`).
pub const OUT_ENV: &str = "C2LAB_OUT";

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("checkpoint {path}: {source}")]
    Checkpoint { path: PathBuf, source: PolicyError },
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },
}

impl CliError {
    /// 2 for configuration problems, 3 for failures during a run.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Checkpoint {
                source: PolicyError::DigestMismatch { .. },
                ..
            } => 2,
            _ => 3,
        }
    }
}

fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> CliError {
    let context = context.into();
    move |source| CliError::Io { context, source }
}

#[derive(Debug, Parser)]
#[command(name = "c2lab", version, about = "Train, attack and probe C2 wargame agents")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (overrides C2LAB_OUT and the config).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Comma-separated perturbation budgets.
    #[arg(long, global = true, value_delimiter = ',')]
    pub epsilon: Option<Vec<f64>>,
    #[arg(long, global = true)]
    pub episodes: Option<usize>,
    #[arg(long, global = true)]
    pub targets: Option<AttackTargets>,
    #[arg(long, global = true)]
    pub variant: Option<AttackVariant>,
    #[arg(long, global = true, value_enum)]
    pub clamp: Option<Switch>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train an agent and write full and partial checkpoints.
    Train {
        #[arg(long)]
        algo: Option<Algo>,
        /// Environment-step budget.
        #[arg(long)]
        budget: Option<u64>,
    },
    /// Roll out a checkpoint at each budget and write sweep tables.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Sample the attack loss around a fixed observation.
    Probe {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        samples: Option<usize>,
        #[command(flatten)]
        obs: ObsArgs,
    },
    /// Relative-reward curves and probe masses for several checkpoints.
    Compare {
        /// Repeat once per agent; at least two.
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
    },
    /// Benign and FGSM-perturbed screens of the probe observation.
    ExportPerturbedScreens {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        obs: ObsArgs,
    },
}

#[derive(Debug, Args)]
pub struct ObsArgs {
    /// Scenario seed of the probe observation.
    #[arg(long)]
    pub obs_seed: Option<u64>,
    /// Steps of Blue holding before the observation is taken.
    #[arg(long)]
    pub timestep: Option<u32>,
    /// Blue control group index.
    #[arg(long)]
    pub group: Option<usize>,
}

impl ObsArgs {
    fn apply(&self, src: &mut ObsSource) {
        if let Some(s) = self.obs_seed {
            src.seed = s;
        }
        if let Some(t) = self.timestep {
            src.timestep = t;
        }
        if let Some(g) = self.group {
            src.group = g;
        }
    }
}

/// Loads the config (or defaults) and applies command-line overrides, then
/// validates the result.
pub fn resolve_config(cli: &Cli, out_env: Option<PathBuf>) -> Result<ExperimentConfig, CliError> {
    let c = &cli.common;
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = c.out.clone().or(out_env) {
        cfg.out_dir = o;
    }
    if let (Some(e), Command::Eval { .. } | Command::Compare { .. }) = (&c.epsilon, &cli.command) {
        cfg.eval.epsilons = e.clone();
    }
    if let Some(n) = c.episodes {
        cfg.eval.episodes = n;
    }
    if let Some(t) = c.targets {
        cfg.attack.targets = t;
        cfg.probe.targets = t;
    }
    if let Some(v) = c.variant {
        cfg.attack.variant = v;
    }
    if let Some(s) = c.clamp {
        cfg.attack.clamp = s == Switch::On;
        cfg.probe.clamp = s == Switch::On;
    }
    match &cli.command {
        Command::Train { algo, budget } => {
            if let Some(a) = algo {
                cfg.trainer.algo = *a;
            }
            if let Some(b) = budget {
                cfg.trainer.budget = *b;
            }
        }
        Command::Probe { samples, obs, .. } => {
            if let Some(n) = samples {
                cfg.probe.n_samples = *n;
            }
            match c.epsilon.as_deref() {
                None => {}
                Some([e]) => cfg.probe.epsilon = *e,
                Some(_) => return Err(ConfigError::Invalid("probe takes a single --epsilon".into()).into()),
            }
            obs.apply(&mut cfg.probe_obs);
        }
        Command::Compare { checkpoints } if checkpoints.len() < 2 => {
            return Err(ConfigError::Invalid("compare needs at least two --checkpoint".into()).into());
        }
        Command::ExportPerturbedScreens { obs, .. } => {
            obs.apply(&mut cfg.probe_obs);
            if let Some(e) = &c.epsilon {
                if let Some(bad) = e.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
                    return Err(ConfigError::Invalid(format!("epsilon {bad} must be finite and >= 0")).into());
                }
            }
        }
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Parses `args`, runs the subcommand and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs one subcommand; returns the files written.
pub fn run(cli: &Cli) -> Result<Vec<PathBuf>, CliError> {
    let out_env = std::env::var_os(OUT_ENV).map(PathBuf::from);
    let cfg = resolve_config(cli, out_env)?;
    match &cli.command {
        Command::Train { .. } => cmd_train(&cfg),
        Command::Eval { checkpoint } => cmd_eval(&cfg, checkpoint),
        Command::Probe { checkpoint, .. } => cmd_probe(&cfg, checkpoint),
        Command::Compare { checkpoints } => cmd_compare(&cfg, checkpoints),
        Command::ExportPerturbedScreens { checkpoint, .. } => {
            let eps = cli.common.epsilon.clone().unwrap_or_else(|| cfg.eval.epsilons.clone());
            cmd_export_screens(&cfg, checkpoint, &eps)
        }
    }
}

fn load_checkpoint(cfg: &ExperimentConfig, path: &Path) -> Result<PolicyParams, CliError> {
    checkpoint::load(path, Some(&cfg.arch())).map_err(|source| CliError::Checkpoint {
        path: path.to_path_buf(),
        source,
    })
}

fn ensure_out_dir(cfg: &ExperimentConfig) -> Result<(), CliError> {
    std::fs::create_dir_all(&cfg.out_dir).map_err(io_err(format!("creating {}", cfg.out_dir.display())))
}

/// Writes through a temporary file so a failed run leaves no partial output.
fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    let ctx = format!("writing {}", path.display());
    let res = File::create(&tmp).and_then(|file| {
        let mut w = BufWriter::new(file);
        f(&mut w)?;
        w.flush()
    });
    res.and_then(|_| std::fs::rename(&tmp, path)).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        io_err(ctx)(e)
    })
}

#[derive(Serialize)]
struct Stamped<'a, T: Serialize> {
    config_digest: &'a str,
    seed: u64,
    command: &'a str,
    result: T,
}

fn write_json<T: Serialize>(cfg: &ExperimentConfig, path: &Path, command: &str, body: T) -> Result<(), CliError> {
    let digest = cfg.digest();
    let doc = Stamped {
        config_digest: &digest,
        seed: cfg.seed,
        command,
        result: body,
    };
    write_file(path, |w| {
        serde_json::to_writer_pretty(&mut *w, &doc).map_err(std::io::Error::other)?;
        writeln!(w)
    })
}

fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(io_err(format!("reading {}", path.display())))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

#[derive(Serialize)]
struct TrainManifest {
    algo: Algo,
    budget: u64,
    full_checkpoint: String,
    full_sha256: String,
    partial_checkpoint: String,
    partial_sha256: String,
    curve_points: usize,
    final_batch_reward: Option<f64>,
    worker_failures: Vec<String>,
}

pub fn cmd_train(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>, CliError> {
    let init = PolicyParams::init(&cfg.arch(), cfg.seed).map_err(|source| CliError::Checkpoint {
        path: PathBuf::from("<init>"),
        source,
    })?;
    let sc = cfg.scenario.clone();
    let outcome = train(
        move || Scenario::new(sc.clone()).expect("scenario validated"),
        init,
        &cfg.trainer,
        cfg.seed,
    )?;
    ensure_out_dir(cfg)?;
    let full = cfg.out_dir.join("full.ckpt");
    let partial = cfg.out_dir.join("partial.ckpt");
    let curve = cfg.out_dir.join("curve.csv");
    let manifest = cfg.out_dir.join("train.json");
    for (p, params) in [(&full, &outcome.params), (&partial, &outcome.partial)] {
        let bytes = checkpoint::to_bytes(params);
        write_file(p, |w| w.write_all(&bytes))?;
    }
    let mut header = csv_header(&cfg.digest(), cfg.seed);
    header.push(format!("algo={}", cfg.trainer.algo));
    if cfg.trainer.algo == Algo::A3c {
        header.push("nondeterministic=asynchronous worker interleaving".into());
    }
    write_file(&curve, |w| write_curve_csv(w, &header, &outcome.curve))?;
    write_json(
        cfg,
        &manifest,
        "train",
        TrainManifest {
            algo: cfg.trainer.algo,
            budget: cfg.trainer.budget,
            full_checkpoint: "full.ckpt".into(),
            full_sha256: sha256_file(&full)?,
            partial_checkpoint: "partial.ckpt".into(),
            partial_sha256: sha256_file(&partial)?,
            curve_points: outcome.curve.len(),
            final_batch_reward: outcome.curve.last().map(|p| p.mean_reward),
            worker_failures: outcome.worker_failures.clone(),
        },
    )?;
    Ok(vec![full, partial, curve, manifest])
}

pub fn cmd_eval(cfg: &ExperimentConfig, ckpt: &Path) -> Result<Vec<PathBuf>, CliError> {
    let params = load_checkpoint(cfg, ckpt)?;
    let sweep = epsilon_sweep(
        &params,
        &cfg.scenario,
        &cfg.attack,
        &cfg.eval.epsilons,
        cfg.eval.episodes,
        cfg.seed,
    )?;
    ensure_out_dir(cfg)?;
    let header = csv_header(&cfg.digest(), cfg.seed);
    let sweep_csv = cfg.out_dir.join("sweep.csv");
    let actions_csv = cfg.out_dir.join("actions.csv");
    let summary = cfg.out_dir.join("summary.json");
    write_file(&sweep_csv, |w| write_sweep_csv(w, &header, &sweep))?;
    write_file(&actions_csv, |w| write_actions_csv(w, &header, &sweep))?;
    write_json(cfg, &summary, "eval", &sweep)?;
    Ok(vec![sweep_csv, actions_csv, summary])
}

pub fn cmd_probe(cfg: &ExperimentConfig, ckpt: &Path) -> Result<Vec<PathBuf>, CliError> {
    let params = load_checkpoint(cfg, ckpt)?;
    let obs = probe_observation(&cfg.scenario, &cfg.probe_obs)?;
    let taken = probe_action(&params, &obs, cfg.seed)?;
    let result = loss_landscape_probe(&params, &obs, taken, &cfg.probe, cfg.seed)?;
    ensure_out_dir(cfg)?;
    let header = csv_header(&cfg.digest(), cfg.seed);
    let csv = cfg.out_dir.join("probe.csv");
    let json = cfg.out_dir.join("probe.json");
    write_file(&csv, |w| write_probe_csv(w, &header, &result.histogram))?;
    #[derive(Serialize)]
    struct Body<'a> {
        obs_source: ObsSource,
        #[serde(flatten)]
        result: &'a crate::evaluation::ProbeResult,
    }
    write_json(
        cfg,
        &json,
        "probe",
        Body {
            obs_source: cfg.probe_obs,
            result: &result,
        },
    )?;
    Ok(vec![csv, json])
}

/// Agent names are the checkpoint file stems, suffixed with their position
/// when two stems coincide.
fn agent_names(paths: &[PathBuf]) -> Vec<String> {
    let stems: Vec<String> = paths
        .iter()
        .map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default())
        .collect();
    stems
        .iter()
        .enumerate()
        .map(|(i, s)| {
            if stems.iter().filter(|t| *t == s).count() > 1 {
                format!("{s}#{i}")
            } else {
                s.clone()
            }
        })
        .collect()
}

pub fn cmd_compare(cfg: &ExperimentConfig, ckpts: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let params = ckpts
        .iter()
        .map(|p| load_checkpoint(cfg, p))
        .collect::<Result<Vec<_>, _>>()?;
    let names = agent_names(ckpts);
    let agents: Vec<(String, &PolicyParams)> = names.into_iter().zip(params.iter()).collect();
    let obs = probe_observation(&cfg.scenario, &cfg.probe_obs)?;
    let cmp = compare_agents(
        &agents,
        &cfg.scenario,
        &cfg.attack,
        &cfg.eval.epsilons,
        cfg.eval.episodes,
        cfg.seed,
        &obs,
        &cfg.probe,
    )?;
    ensure_out_dir(cfg)?;
    let header = csv_header(&cfg.digest(), cfg.seed);
    let csv = cfg.out_dir.join("compare.csv");
    let json = cfg.out_dir.join("compare.json");
    write_file(&csv, |w| write_comparison_csv(w, &header, &cmp))?;
    write_json(cfg, &json, "compare", &cmp)?;
    Ok(vec![csv, json])
}

#[derive(Serialize)]
struct ScreenExport {
    obs_source: ObsSource,
    shape: Vec<usize>,
    benign: Vec<f64>,
    perturbed: Vec<PerturbedScreen>,
}

#[derive(Serialize)]
struct PerturbedScreen {
    epsilon: f64,
    linf: f64,
    changed: usize,
    screen: Vec<f64>,
}

pub fn cmd_export_screens(cfg: &ExperimentConfig, ckpt: &Path, eps_list: &[f64]) -> Result<Vec<PathBuf>, CliError> {
    let params = load_checkpoint(cfg, ckpt)?;
    let obs = probe_observation(&cfg.scenario, &cfg.probe_obs)?;
    let benign = obs.screen.data();
    let mut perturbed = Vec::new();
    for &eps in eps_list {
        let adv = fgsm_perturb(&params, &obs, &cfg.attack.with_epsilon(eps)).map_err(EvalError::from)?;
        let screen = adv.screen.data().to_vec();
        let diffs = benign.iter().zip(&screen).map(|(a, b)| (a - b).abs());
        perturbed.push(PerturbedScreen {
            epsilon: eps,
            linf: diffs.clone().fold(0.0, f64::max),
            changed: diffs.filter(|&d| d > 0.0).count(),
            screen,
        });
    }
    ensure_out_dir(cfg)?;
    let json = cfg.out_dir.join("screens.json");
    write_json(
        cfg,
        &json,
        "export-perturbed-screens",
        ScreenExport {
            obs_source: cfg.probe_obs,
            shape: obs.screen.shape().to_vec(),
            benign: benign.to_vec(),
            perturbed,
        },
    )?;
    Ok(vec![json])
}
