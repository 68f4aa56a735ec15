//! `hlrp` command line: one subcommand per pipeline stage, all outputs under
//! `--out-dir` with fixed names.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::compositor::{render_summary, write_sequence, OverlayConfig};
use crate::error::Error;
use crate::highlights::{
    first_summary, highlights_div_offline, highlights_div_online, highlights_online,
    random_summary, DivParams, HighlightsParams, ImportanceKind, Summary,
};
use crate::lrp::{read_saliency, saliency, saliency_stem, write_saliency, ConvRule};
use crate::net::{forward, load_network, save_network};
use crate::sanity::{run_sanity_with_dumps, RandomizationSchedule, SanityConfig};
use crate::streams::{load_stream, save_stream, validate_stream};
use crate::tensor::state_to_input;
use crate::toyenv::{distill, rollout, rollout_with_net, solve, DistillConfig, GridWorld, RewardSpec, STATE_LIMIT};

pub const ECHO_FILE: &str = "config.echo.json";

#[derive(Debug, Parser, Serialize)]
#[command(name = "hlrp", version, about = "Strategy summaries with saliency maps for Q-network agents")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Serialize)]
pub struct GlobalArgs {
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for per-state stages (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    #[arg(long, global = true, default_value = "info")]
    pub log_level: String,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Select summary trajectories from a stream.
    Summarize(SummarizeArgs),
    /// Write saliency maps for selected records.
    Saliency(SaliencyArgs),
    /// Cascading-randomization check of the saliency method.
    Sanity(SanityArgs),
    /// Render a summary (optionally with saliency) to PNG frames and a GIF.
    Compose(ComposeArgs),
    /// Solve the toy gridworld and record a stream (and optionally a network).
    Toy(ToyArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeArg {
    Online,
    DivOnline,
    DivOffline,
    Random,
    First,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImportanceArg {
    Minmax,
    Second,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuleArg {
    Zplus,
    Argmax,
}

impl From<RuleArg> for ConvRule {
    fn from(r: RuleArg) -> Self {
        match r {
            RuleArg::Zplus => ConvRule::Zplus,
            RuleArg::Argmax => ConvRule::Argmax,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct SummarizeArgs {
    #[arg(long)]
    pub stream: PathBuf,
    #[arg(long, value_enum, default_value = "div-offline")]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
    pub k: u64,
    /// Trajectory length (default 40 online, 21 offline).
    #[arg(long)]
    pub l: Option<usize>,
    /// Minimum spacing between selected states (default 50 online, 10 offline).
    #[arg(long)]
    pub interval: Option<usize>,
    #[arg(long, default_value_t = 10)]
    pub states_after: usize,
    #[arg(long, value_enum, default_value = "second")]
    pub importance: ImportanceArg,
    #[arg(long, default_value_t = 3.0)]
    pub percentile: f64,
    #[arg(long, default_value_t = 1000)]
    pub sample_size: usize,
    /// Only consume the first N episodes (online modes).
    #[arg(long)]
    pub num_simulations: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct SaliencyArgs {
    #[arg(long)]
    pub stream: PathBuf,
    #[arg(long)]
    pub network: PathBuf,
    #[arg(long, value_enum, default_value = "argmax")]
    pub rule: RuleArg,
    /// Comma-separated record indices.
    #[arg(long, value_delimiter = ',', conflicts_with = "summary", required_unless_present = "summary")]
    pub indices: Vec<usize>,
    /// Explain every record of every trajectory in this summary.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    /// Also write one PNG per channel.
    #[arg(long)]
    pub pngs: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct SanityArgs {
    #[arg(long)]
    pub stream: PathBuf,
    #[arg(long)]
    pub network: PathBuf,
    #[arg(long, value_enum, default_value = "argmax")]
    pub rule: RuleArg,
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
    pub n_states: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct ComposeArgs {
    #[arg(long)]
    pub stream: PathBuf,
    #[arg(long)]
    pub summary: PathBuf,
    /// Directory written by `saliency`; omit for plain frames.
    #[arg(long)]
    pub saliency_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 30, value_parser = clap::value_parser!(u32).range(1..))]
    pub fps: u32,
    /// Seconds of black between trajectories.
    #[arg(long, default_value_t = 1.0)]
    pub separator: f64,
    /// Fraction of the frame height blacked out from the bottom.
    #[arg(long, default_value_t = 0.5)]
    pub mask: f64,
    #[arg(long, default_value_t = 1.0)]
    pub gain: f32,
}

#[derive(Debug, Args, Serialize)]
pub struct ToyArgs {
    /// Text map; the built-in map when omitted.
    #[arg(long)]
    pub map: Option<PathBuf>,
    /// Preset name (regular, power-pill, fear-ghosts) or a JSON reward file.
    #[arg(long, default_value = "regular")]
    pub rewards: String,
    #[arg(long, default_value_t = 600)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.99)]
    pub discount: f64,
    #[arg(long, default_value_t = 200)]
    pub step_cap: usize,
    /// Also build a network reproducing the tabular Q-values; the stream
    /// then carries the network's outputs.
    #[arg(long)]
    pub distill: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Run(#[from] Error),
    #[error("internal: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Run(e) if e.is_data_error() => 3,
            CliError::Run(_) | CliError::Internal(_) => 4,
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn require(path: &Path, what: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(usage(format!("{what} {} does not exist", path.display())))
    }
}

/// Validated, merged parameters for `summarize`.
fn summarize_params(a: &SummarizeArgs) -> Result<(HighlightsParams, DivParams), CliError> {
    let mut p = match a.mode {
        ModeArg::DivOffline => HighlightsParams::offline_default(),
        _ => HighlightsParams::online_default(),
    };
    p.k = a.k as usize;
    p.l = a.l.unwrap_or(p.l);
    p.interval_size = a.interval.unwrap_or(p.interval_size);
    p.states_after = a.states_after;
    p.num_simulations = a.num_simulations;
    p.importance = match a.importance {
        ImportanceArg::Minmax => ImportanceKind::Minmax,
        ImportanceArg::Second => ImportanceKind::Second,
    };
    p.validate().map_err(|e| usage(e.to_string()))?;
    Ok((p, DivParams::default()))
}

fn write_echo(cli: &Cli) -> Result<(), CliError> {
    let dir = &cli.global.out_dir;
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    let path = dir.join(ECHO_FILE);
    let text = serde_json::json!({
        "version": env!("CARGO_PKG_VERSION"),
        "global": cli.global,
        "command": cli.command,
    });
    fs::write(&path, serde_json::to_string_pretty(&text).unwrap()).map_err(|e| Error::Io { path, source: e })?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(v).map_err(|e| CliError::Internal(e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

/// Checks arguments, then runs the subcommand on a pool of `--threads` workers.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    preflight(cli)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.global.threads)
        .build()
        .map_err(|e| CliError::Internal(e.to_string()))?;
    write_echo(cli)?;
    pool.install(|| dispatch(cli))
}

/// Argument validation that needs no I/O beyond checking input paths exist.
fn preflight(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Summarize(a) => {
            let (_, mut div) = summarize_params(a)?;
            div.percentile = a.percentile;
            div.sample_size = a.sample_size;
            div.validate().map_err(|e| usage(e.to_string()))?;
            require(&a.stream, "stream")
        }
        Command::Saliency(a) => {
            require(&a.stream, "stream")?;
            require(&a.network, "network")?;
            if let Some(s) = &a.summary {
                require(s, "summary")?;
            }
            Ok(())
        }
        Command::Sanity(a) => {
            require(&a.stream, "stream")?;
            require(&a.network, "network")
        }
        Command::Compose(a) => {
            overlay_config(a).validate().map_err(|e| usage(e.to_string()))?;
            require(&a.stream, "stream")?;
            require(&a.summary, "summary")?;
            if let Some(d) = &a.saliency_dir {
                require(d, "saliency dir")?;
            }
            Ok(())
        }
        Command::Toy(a) => {
            if let Some(m) = &a.map {
                require(m, "map")?;
            }
            if RewardSpec::preset(&a.rewards).is_none() {
                require(Path::new(&a.rewards), "rewards file")?;
            }
            if !(0.0..1.0).contains(&a.discount) {
                return Err(usage(format!("discount must be in [0, 1), got {}", a.discount)));
            }
            if a.step_cap == 0 {
                return Err(usage("step cap must be >= 1"));
            }
            Ok(())
        }
    }
}

fn overlay_config(a: &ComposeArgs) -> OverlayConfig {
    OverlayConfig {
        fps: a.fps,
        separator_seconds: a.separator,
        mask_fraction: a.mask,
        saliency_gain: a.gain,
    }
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    let out = &cli.global.out_dir;
    let seed = cli.global.seed;
    match &cli.command {
        Command::Summarize(a) => cmd_summarize(a, seed, out),
        Command::Saliency(a) => cmd_saliency(a, out),
        Command::Sanity(a) => cmd_sanity(a, seed, out),
        Command::Compose(a) => cmd_compose(a, out),
        Command::Toy(a) => cmd_toy(a, seed, out),
    }
}

fn cmd_summarize(a: &SummarizeArgs, seed: u64, out: &Path) -> Result<(), CliError> {
    let (params, mut div) = summarize_params(a)?;
    div.percentile = a.percentile;
    div.sample_size = a.sample_size;
    div.seed = seed;
    let stream = load_stream(&a.stream)?;
    let summary = match a.mode {
        ModeArg::Online => highlights_online(&stream, &params)?,
        ModeArg::DivOnline => highlights_div_online(&stream, &params, &div)?,
        ModeArg::DivOffline => highlights_div_offline(&stream, &params, &div)?,
        ModeArg::Random => random_summary(&stream, &params, seed)?,
        ModeArg::First => first_summary(&stream, &params)?,
    };
    log::info!(
        "{} trajectories, bases {:?}",
        summary.trajectories.len(),
        summary.base_indices()
    );
    summary.save(&out.join("summary.json"))?;
    Ok(())
}

fn cmd_saliency(a: &SaliencyArgs, out: &Path) -> Result<(), CliError> {
    let stream = load_stream(&a.stream)?;
    let net = load_network(&a.network)?;
    let report = validate_stream(&stream, Some(&net), 0);
    if !report.is_ok() {
        return Err(Error::Stream(format!("{:?}", report.violations)).into());
    }
    let indices: Vec<usize> = match &a.summary {
        Some(p) => {
            let s = Summary::load(p)?;
            let mut v: Vec<usize> = s.trajectories.iter().flat_map(|t| t.indices.clone()).collect();
            v.sort_unstable();
            v.dedup();
            v
        }
        None => a.indices.clone(),
    };
    if let Some(&bad) = indices.iter().find(|&&i| i >= stream.len()) {
        return Err(Error::IndexOutOfRange {
            index: bad,
            len: stream.len(),
        }
        .into());
    }
    let [h, w, c] = stream.meta.state_dims;
    let dir = out.join("saliency");
    let rule = ConvRule::from(a.rule);
    use rayon::prelude::*;
    indices.par_iter().try_for_each(|&i| -> Result<(), Error> {
        let r = stream.record(i);
        let trace = forward(&net, &state_to_input(r.state, (h, w, c))?)?;
        let map = saliency(&net, &trace, usize::from(r.action), rule)?;
        write_saliency(&map, &dir, &saliency_stem(i), Some(i), a.pngs)
    })?;
    log::info!("wrote {} saliency maps to {}", indices.len(), dir.display());
    Ok(())
}

fn cmd_sanity(a: &SanityArgs, seed: u64, out: &Path) -> Result<(), CliError> {
    let stream = load_stream(&a.stream)?;
    let net = load_network(&a.network)?;
    let n = (a.n_states as usize).min(stream.len());
    let schedule = RandomizationSchedule::cascade(&net, seed);
    let cfg = SanityConfig {
        rule: a.rule.into(),
        ..SanityConfig::default()
    };
    let report = run_sanity_with_dumps(&net, &stream, &schedule, n, &cfg, Some(&out.join("sanity_maps")))?;
    report.save(&out.join("sanity.json"))?;
    report.render_chart(&out.join("sanity.png"))?;
    Ok(())
}

fn cmd_compose(a: &ComposeArgs, out: &Path) -> Result<(), CliError> {
    let cfg = overlay_config(a);
    let stream = load_stream(&a.stream)?;
    let summary = Summary::load(&a.summary)?;
    let maps = match &a.saliency_dir {
        Some(dir) => {
            let mut m = HashMap::new();
            for t in &summary.trajectories {
                for &i in &t.indices {
                    if let std::collections::hash_map::Entry::Vacant(e) = m.entry(i) {
                        e.insert(read_saliency(dir, &saliency_stem(i))?.0);
                    }
                }
            }
            Some(m)
        }
        None => None,
    };
    let seq = render_summary(&stream, &summary, maps.as_ref(), &cfg)?;
    write_sequence(&seq, out, &cfg)?;
    log::info!("wrote {} frames to {}", seq.frames.len(), out.display());
    Ok(())
}

fn cmd_toy(a: &ToyArgs, seed: u64, out: &Path) -> Result<(), CliError> {
    let rewards = match RewardSpec::preset(&a.rewards) {
        Some(r) => r,
        None => RewardSpec::load(Path::new(&a.rewards))?,
    };
    let mut env = match &a.map {
        Some(p) => GridWorld::load(p, rewards)?,
        None => GridWorld::default_env(rewards),
    };
    env.step_cap = a.step_cap;
    let enumerated = env.enumerate(STATE_LIMIT)?;
    let policy = solve(&enumerated.mdp, a.discount, 1e-9)?;
    log::info!(
        "{} states, value iteration converged in {} sweeps",
        enumerated.states.len(),
        policy.iterations
    );
    let (stream, stats) = if a.distill {
        let (net, report) = distill(&env, &enumerated, &policy, &DistillConfig::default())?;
        save_network(&net, out.join("network"))?;
        write_json(&out.join("fit.json"), &report)?;
        rollout_with_net(&env, &enumerated, &net, seed, a.steps)?
    } else {
        rollout(&env, &enumerated, &policy, seed, a.steps)?
    };
    save_stream(&stream, out.join("stream"))?;
    write_json(&out.join("rollout.json"), &stats)?;
    Ok(())
}
