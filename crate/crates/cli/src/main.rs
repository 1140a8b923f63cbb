//! `gridmask`: train, evaluate and inspect load-restoration agents.
//!
//! Set `GRIDMASK_VERBOSE=1` for per-episode progress on stderr.

mod config;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use gridmask_core::agent::AgentCheckpoint;
use gridmask_core::grid::{format_states, parse_states, FeederDocument, BUILTIN_NAMES};
use gridmask_core::oracle::{brute_force, decomposed, OracleError, MAX_BREAKERS};
use gridmask_core::trainer::{
    compare, final_mean, write_comparison_csv, write_episodes_csv, REPORT_WINDOW,
};
use gridmask_core::{
    builtin_feeder, check_constraints, execute, load_feeder, solve, validate_feeder,
    AgentMode, Feeder, OracleCache, TrainedModels,
};
use gridmask_core::env::DEFAULT_PENALTY;
use serde::Serialize;

use config::{FileConfig, RunConfig};

#[derive(Parser)]
#[command(name = "gridmask", version, about = "Multi-agent load restoration with invalid-action masking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train agents and write episodes.csv, trace.csv and agent_<i>.json.
    Train(Box<TrainArgs>),
    /// Roll out saved checkpoints greedily and write trace.csv.
    Eval(EvalArgs),
    /// Compute the restoration optimum and write oracle.json.
    Oracle(OracleArgs),
    /// Train several variant configs and write comparison.csv.
    Compare(CompareArgs),
    /// Solve one breaker configuration and report constraint checks.
    Powerflow(PowerflowArgs),
    /// Lint a feeder.
    Validate(ValidateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Multi,
    Single,
}

#[derive(Args)]
struct TrainArgs {
    /// TOML config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in feeder name (ieee13, ieee123) or path to a feeder JSON file.
    #[arg(long)]
    feeder: Option<String>,
    /// RNG seed (required here or in the config file).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    episodes: Option<usize>,
    /// Steps per episode.
    #[arg(long)]
    steps: Option<usize>,
    /// Environment steps between target network syncs.
    #[arg(long)]
    sync_every: Option<usize>,
    /// Invalid-action masking; off switches to the penalty reward.
    #[arg(long, value_enum)]
    mask: Option<Switch>,
    #[arg(long, value_enum)]
    agent_mode: Option<Mode>,
    /// Reward for constraint-violating steps when masking is off.
    #[arg(long, allow_hyphen_values = true)]
    penalty: Option<f64>,
    /// Gradient step size.
    #[arg(long)]
    eta: Option<f64>,
    /// Discount factor.
    #[arg(long)]
    gamma: Option<f64>,
    /// Label blend rate.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Replay buffer capacity.
    #[arg(long)]
    capacity: Option<usize>,
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    eps_min: Option<f64>,
    #[arg(long)]
    eps_max: Option<f64>,
    /// Exponential decay rate of epsilon per episode.
    #[arg(long)]
    eps_lambda: Option<f64>,
    /// Output directory.
    #[arg(long, required_unless_present = "print_config")]
    out: Option<PathBuf>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    print_config: bool,
}

impl TrainArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let file = self.config.as_deref().map(FileConfig::read).transpose()?;
        let mut c = RunConfig::from_file(file)?;
        if let Some(f) = &self.feeder {
            c.feeder = f.clone();
        }
        if self.seed.is_some() {
            c.seed = self.seed;
        }
        let t = &mut c.training;
        let set = |dst: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *dst = v;
            }
        };
        set(&mut t.penalty, self.penalty);
        set(&mut t.hyper.eta, self.eta);
        set(&mut t.hyper.gamma, self.gamma);
        set(&mut t.hyper.alpha, self.alpha);
        set(&mut t.epsilon.eps_min, self.eps_min);
        set(&mut t.epsilon.eps_max, self.eps_max);
        set(&mut t.epsilon.lambda, self.eps_lambda);
        if let Some(v) = self.episodes {
            t.episodes = v;
        }
        if let Some(v) = self.steps {
            t.steps_per_episode = v;
        }
        if let Some(v) = self.sync_every {
            t.sync_every = v;
        }
        if let Some(v) = self.batch_size {
            t.hyper.batch_size = v;
        }
        if let Some(v) = self.capacity {
            t.hyper.capacity = v;
        }
        if let Some(v) = &self.hidden {
            t.hyper.hidden = v.clone();
        }
        if let Some(m) = self.mask {
            t.masking = matches!(m, Switch::On);
        }
        if let Some(m) = self.agent_mode {
            t.agent_mode = match m {
                Mode::Multi => AgentMode::Multi,
                Mode::Single => AgentMode::Single,
            };
        }
        Ok(c)
    }
}

#[derive(Args)]
struct EvalArgs {
    /// Directory holding agent_<i>.json checkpoints.
    #[arg(long)]
    checkpoints: PathBuf,
    /// Feeder the checkpoints were trained on.
    #[arg(long, default_value = "ieee13")]
    feeder: String,
    /// Rollout length.
    #[arg(long, default_value_t = 16)]
    steps: usize,
    /// Reward recorded for violating steps.
    #[arg(long, default_value_t = DEFAULT_PENALTY, allow_hyphen_values = true)]
    penalty: f64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum OracleMethod {
    /// Exhaustive when the breaker count allows, otherwise decomposed.
    Auto,
    Exhaustive,
    /// Independent search per electrically separate component.
    Decomposed,
}

#[derive(Args)]
struct OracleArgs {
    /// Built-in feeder name or path to a feeder JSON file.
    #[arg(long, default_value = "ieee13")]
    feeder: String,
    #[arg(long, value_enum, default_value_t = OracleMethod::Auto)]
    method: OracleMethod,
    /// Output directory; an existing oracle.json for the same feeder is reused.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    /// Variant config files; each variant is named after its file stem.
    #[arg(required = true)]
    variants: Vec<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PowerflowArgs {
    #[arg(long, default_value = "ieee13")]
    feeder: String,
    /// Breaker states in feeder order, e.g. 110000101.
    #[arg(long)]
    states: String,
    /// Optional directory for buses.csv and lines.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    /// Built-in feeder name or path to a feeder JSON file.
    feeder: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(*a),
        Command::Eval(a) => cmd_eval(a),
        Command::Oracle(a) => cmd_oracle(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Powerflow(a) => cmd_powerflow(a),
        Command::Validate(a) => cmd_validate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn verbose() -> bool {
    std::env::var("GRIDMASK_VERBOSE").is_ok_and(|v| !v.is_empty() && v != "0")
}

/// Built-in name first, then a path to a feeder JSON document.
fn resolve_feeder(name: &str) -> Result<Feeder> {
    if BUILTIN_NAMES.contains(&name) {
        return Ok(builtin_feeder(name)?);
    }
    let path = Path::new(name);
    if !path.is_file() {
        bail!(
            "unknown feeder \"{name}\": not a built-in ({}) and no such file",
            BUILTIN_NAMES.join(", ")
        );
    }
    let bytes = fs::read(path).with_context(|| format!("reading feeder {name}"))?;
    load_feeder(&bytes).with_context(|| format!("feeder {name}"))
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, v: &T) -> Result<()> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, v)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn save_models(dir: &Path, models: &TrainedModels, feeder: &Feeder) -> Result<()> {
    for (i, cp) in models.checkpoints(feeder).iter().enumerate() {
        cp.save(&dir.join(format!("agent_{i}.json")))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct RolloutSummary {
    feeder: String,
    final_states: Option<String>,
    final_served_kw: f64,
    best_served_kw: f64,
    violations: usize,
}

fn summarize(feeder: &Feeder, trace: &gridmask_core::RestorationTrace) -> RolloutSummary {
    RolloutSummary {
        feeder: feeder.name().to_string(),
        final_states: trace.final_states().map(format_states),
        final_served_kw: trace.final_served_kw(),
        best_served_kw: trace.best_served_kw(),
        violations: trace.violations(),
    }
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let run = a.resolve()?;
    if a.print_config {
        print!("{}", run.to_toml()?);
        return Ok(());
    }
    let cfg = run.resolved_training()?;
    let feeder = resolve_feeder(&run.feeder)?;
    let out = a.out.as_deref().expect("clap requires --out");
    out_dir(out)?;
    fs::write(out.join("config.toml"), run.to_toml()?)?;

    let loud = verbose();
    let outcome = gridmask_core::trainer::train_with(&feeder, &cfg, |log| {
        if loud {
            eprintln!(
                "episode {:>5}  R {:>9.4}  restored {:>8.1} kW  violations {}  eps {:.3}",
                log.episode, log.reward, log.restored_kw, log.violations, log.epsilon
            );
        }
    })?;
    let mut w = create(out, "episodes.csv")?;
    write_episodes_csv(&outcome.logs, &mut w)?;
    w.flush()?;
    save_models(out, &outcome.models, &feeder)?;

    let trace = execute(&outcome.models, &feeder, cfg.steps_per_episode, cfg.penalty);
    let mut w = create(out, "trace.csv")?;
    trace.write_csv(&mut w)?;
    w.flush()?;
    let summary = summarize(&feeder, &trace);
    write_json(out, "rollout.json", &summary)?;

    println!(
        "trained {} agent(s) for {} episodes; final {}-episode mean reward {:.4}; rollout restores {:.1} kW with {} violation(s)",
        outcome.models.agents.len(),
        cfg.episodes,
        REPORT_WINDOW.min(cfg.episodes),
        final_mean(&outcome.logs, REPORT_WINDOW),
        summary.final_served_kw,
        summary.violations
    );
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let feeder = resolve_feeder(&a.feeder)?;
    let mut paths: Vec<(usize, PathBuf)> = Vec::new();
    let entries = fs::read_dir(&a.checkpoints)
        .with_context(|| format!("reading checkpoint directory {}", a.checkpoints.display()))?;
    for entry in entries {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if let Some(i) = name
            .strip_prefix("agent_")
            .and_then(|s| s.strip_suffix(".json"))
            .and_then(|s| s.parse().ok())
        {
            paths.push((i, path));
        }
    }
    if paths.is_empty() {
        bail!("no agent_<i>.json checkpoints in {}", a.checkpoints.display());
    }
    paths.sort();
    let cps = paths
        .iter()
        .map(|(_, p)| AgentCheckpoint::load(p))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(cp) = cps.iter().find(|c| c.feeder_hash != feeder.content_hash()) {
        bail!(
            "checkpoint for agent {} was trained on a different feeder than {}",
            cp.agent,
            a.feeder
        );
    }
    let models = TrainedModels::from_checkpoints(&feeder, &cps)?;
    let trace = execute(&models, &feeder, a.steps, a.penalty);
    out_dir(&a.out)?;
    let mut w = create(&a.out, "trace.csv")?;
    trace.write_csv(&mut w)?;
    w.flush()?;
    let summary = summarize(&feeder, &trace);
    write_json(&a.out, "rollout.json", &summary)?;
    println!(
        "rollout restores {:.1} kW (best {:.1} kW) with {} violation(s)",
        summary.final_served_kw, summary.best_served_kw, summary.violations
    );
    Ok(())
}

fn cmd_oracle(a: OracleArgs) -> Result<()> {
    let feeder = resolve_feeder(&a.feeder)?;
    out_dir(&a.out)?;
    let path = a.out.join("oracle.json");
    // Per-island search is exact and far cheaper whenever the feeder splits.
    let islands = feeder.breaker_components().len() > 1;
    let method = match a.method {
        OracleMethod::Auto if islands || feeder.breaker_count() > MAX_BREAKERS => "decomposed",
        OracleMethod::Auto | OracleMethod::Exhaustive => "exhaustive",
        OracleMethod::Decomposed => "decomposed",
    };
    if let Some(cache) = OracleCache::load_matching(&path, &feeder)? {
        if cache.method == method {
            println!("{} (cached)", cache.result);
            return Ok(());
        }
    }
    let (method, result) = match (method, a.method) {
        ("exhaustive", _) => (method, brute_force(&feeder)?),
        (_, OracleMethod::Auto) => match decomposed(&feeder) {
            Err(OracleError::DecompositionUnsupported(_)) => ("exhaustive", brute_force(&feeder)?),
            r => (method, r?),
        },
        _ => (method, decomposed(&feeder)?),
    };
    println!("{result}");
    OracleCache::new(&feeder, method, result).save(&path)?;
    Ok(())
}

fn cmd_compare(a: CompareArgs) -> Result<()> {
    let mut feeder_name: Option<String> = None;
    let mut variants = Vec::new();
    for path in &a.variants {
        let run = RunConfig::from_file(Some(FileConfig::read(path)?))?;
        let cfg = run.resolved_training().with_context(|| format!("variant {}", path.display()))?;
        match &feeder_name {
            Some(f) if *f != run.feeder => {
                bail!("variants use different feeders ({f} and {})", run.feeder)
            }
            _ => feeder_name = Some(run.feeder.clone()),
        }
        let name = path
            .file_stem()
            .and_then(|s| s.to_str())
            .context("variant path has no file name")?
            .to_string();
        if variants.iter().any(|(n, _)| *n == name) {
            bail!("duplicate variant name {name}");
        }
        variants.push((name, cfg));
    }
    let feeder = resolve_feeder(feeder_name.as_deref().expect("at least one variant"))?;
    out_dir(&a.out)?;
    let results = compare(&feeder, &variants)?;
    for ((name, _), (_, outcome)) in variants.iter().zip(&results) {
        let dir = a.out.join(name);
        out_dir(&dir)?;
        let mut w = create(&dir, "episodes.csv")?;
        write_episodes_csv(&outcome.logs, &mut w)?;
        w.flush()?;
        save_models(&dir, &outcome.models, &feeder)?;
    }
    let rows: Vec<_> = results.into_iter().map(|(r, _)| r).collect();
    let mut w = create(&a.out, "comparison.csv")?;
    write_comparison_csv(&rows, &mut w)?;
    w.flush()?;
    for r in &rows {
        println!(
            "{:<20} final mean {:>8.4}  std {:>7.4}  violations {:>5}  executed {:>8.1} kW",
            r.name, r.final_mean, r.final_std, r.violations, r.executed_kw
        );
    }
    Ok(())
}

fn cmd_powerflow(a: PowerflowArgs) -> Result<()> {
    let feeder = resolve_feeder(&a.feeder)?;
    let states = parse_states(&a.states, feeder.breaker_count()).map_err(anyhow::Error::msg)?;
    let sol = solve(&feeder, &states)?;
    let report = check_constraints(&feeder, &sol);
    println!(
        "converged in {} iterations: served {:.3} kW, losses {:.3} kW, generation {:.3} kW",
        sol.iterations,
        sol.served_load_kw,
        sol.total_losses_kw,
        sol.total_generation_kw()
    );
    for (name, c) in [
        ("power_balance", &report.power_balance),
        ("voltage", &report.voltage),
        ("gen_p", &report.gen_p),
        ("gen_q", &report.gen_q),
        ("line_s", &report.line_s),
    ] {
        let at = c.element.as_deref().unwrap_or("-");
        println!("{name:<14} {:<5} {at:<12} {:.6}", if c.passed { "ok" } else { "FAIL" }, c.value);
    }
    println!("all constraints {}", if report.all_ok { "satisfied" } else { "NOT satisfied" });
    if let Some(out) = &a.out {
        out_dir(out)?;
        let mut w = create(out, "buses.csv")?;
        sol.write_bus_csv(&feeder, &mut w)?;
        w.flush()?;
        let mut w = create(out, "lines.csv")?;
        sol.write_line_csv(&feeder, &mut w)?;
        w.flush()?;
    }
    Ok(())
}

fn cmd_validate(a: ValidateArgs) -> Result<()> {
    let feeder = if BUILTIN_NAMES.contains(&a.feeder.as_str()) {
        builtin_feeder(&a.feeder)?
    } else {
        // Parse without the validation load_feeder applies, so every
        // violation is listed instead of only the summary error.
        let bytes = fs::read(&a.feeder).with_context(|| format!("unknown feeder \"{}\"", a.feeder))?;
        let doc: FeederDocument = serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", a.feeder))?;
        Feeder::from_document(doc)?
    };
    let report = validate_feeder(&feeder);
    if report.is_ok() {
        println!(
            "{}: ok ({} buses, {} breakers, {} agents, {:.1} kW load, {:.1} kW generation)",
            feeder.name(),
            feeder.buses().len(),
            feeder.breaker_count(),
            feeder.agent_count(),
            feeder.total_load_kw(),
            feeder.generation_capacity_kw()
        );
        return Ok(());
    }
    for v in &report.violations {
        println!("{v}");
    }
    bail!("{}: {} violation(s)", feeder.name(), report.violations.len())
}
