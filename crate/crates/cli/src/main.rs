use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use reprotocol::engine::{batch, optimize, Backends, BatchItem, BatchManifest, CorpusReport, RunOutput};
use reprotocol::synthetic::{ablation_corpus, planted_corpus, write_corpus};
use reprotocol::{
    parse_protocol, FailureMode, GlobalMemory, HttpProvider, OptimizationResult, OutcomeOracle, Provider, ReferenceOracle,
    RemoteOracle, RunConfig, ScoringSpec, ScriptedPlaybook, ScriptedProvider, TrialProtocol,
};

/// Redesigns failed trial protocols against a success-probability oracle.
#[derive(Parser)]
#[command(name = "reprotocol", version)]
struct Cli {
    /// Raise log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize a single trial.
    Optimize(OptimizeArgs),
    /// Optimize every trial of a manifest and write a corpus report.
    Batch(BatchArgs),
    /// Render a corpus report from result documents.
    Report(ReportArgs),
    /// Work with the global memory store.
    Memory {
        #[command(subcommand)]
        command: MemoryCommand,
    },
    /// Write a seeded synthetic corpus with its manifest.
    GenSynthetic(GenArgs),
}

#[derive(Args)]
struct RunFlags {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Global memory file, created if missing.
    #[arg(long)]
    memory: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Disable memory: no guidance, no confidence adjustment, no transfer.
    #[arg(long)]
    no_memory: bool,
    /// Disable the redesign pool.
    #[arg(long)]
    no_pool: bool,
}

#[derive(Args)]
struct OptimizeArgs {
    /// Protocol JSON.
    #[arg(long)]
    trial: PathBuf,
    /// Defaults to the protocol's own failure_reason.
    #[arg(long)]
    failure_mode: Option<FailureMode>,
    /// Result document to write.
    #[arg(long)]
    out: PathBuf,
    /// `ref:<scoring spec>` or `remote:<url>`.
    #[arg(long)]
    oracle: String,
    /// `scripted:<playbook>` or `http`.
    #[arg(long, default_value = "http")]
    provider: String,
    /// Also write per-iteration traces as JSON.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Log every prompt and completion as JSON lines.
    #[arg(long)]
    prompt_log: Option<PathBuf>,
    #[command(flatten)]
    run: RunFlags,
}

#[derive(Args)]
struct BatchArgs {
    /// Manifest JSON; paths inside are relative to it.
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Trials per wave; overrides the config.
    #[arg(long)]
    parallelism: Option<usize>,
    #[command(flatten)]
    run: RunFlags,
}

#[derive(Args)]
struct ReportArgs {
    /// A result document, a directory of them, or a batch output directory.
    #[arg(long)]
    results: PathBuf,
    /// Directory for report.txt, report.json and curve.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum MemoryCommand {
    /// Print the store.
    Inspect {
        path: PathBuf,
        /// Print the raw document instead.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum CorpusKind {
    Planted,
    Ablation,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "planted")]
    kind: CorpusKind,
}

/// A bad flag value; exits with status 2.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Optimize(a) => cmd_optimize(a),
        Command::Batch(a) => cmd_batch(a),
        Command::Report(a) => cmd_report(a),
        Command::Memory {
            command: MemoryCommand::Inspect { path, json },
        } => cmd_memory_inspect(&path, json),
        Command::GenSynthetic(a) => cmd_gen(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.downcast_ref::<UsageError>().is_some() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn load_config(flags: &RunFlags) -> Result<RunConfig> {
    let mut cfg = match &flags.config {
        Some(p) => RunConfig::from_toml(&read(p)?).map_err(|e| anyhow::anyhow!("{}: {e}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(s) = flags.seed {
        cfg.seed = s;
    }
    if flags.no_memory {
        cfg.use_memory = false;
    }
    if flags.no_pool {
        cfg.use_pool = false;
    }
    cfg.validate().map_err(|e| anyhow::anyhow!("invalid configuration: {e}"))?;
    Ok(cfg)
}

fn load_memory(flags: &RunFlags) -> Result<GlobalMemory> {
    match &flags.memory {
        Some(p) => Ok(GlobalMemory::load(p)?),
        None => Ok(GlobalMemory::default()),
    }
}

fn save_memory(flags: &RunFlags, cfg: &RunConfig, global: &GlobalMemory) -> Result<()> {
    if let (Some(p), true) = (&flags.memory, cfg.use_memory) {
        global.save(p)?;
    }
    Ok(())
}

fn resolve(base: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn make_oracle(spec: &str, base: &Path, cfg: &RunConfig) -> Result<Box<dyn OutcomeOracle>> {
    match spec.split_once(':') {
        Some(("ref", path)) => {
            let path = resolve(base, path);
            let scoring = ScoringSpec::from_json(&read(&path)?).with_context(|| format!("scoring spec {}", path.display()))?;
            Ok(Box::new(ReferenceOracle::new(scoring)?))
        }
        Some(("remote", url)) => Ok(Box::new(RemoteOracle::new(url, Duration::from_secs(cfg.oracle_timeout_secs)))),
        _ => Err(usage(format!("--oracle must be ref:<spec> or remote:<url>, got {spec:?}"))),
    }
}

fn make_provider(spec: &str, base: &Path, cfg: &RunConfig) -> Result<Box<dyn Provider>> {
    match spec.split_once(':') {
        Some(("scripted", path)) => {
            let path = resolve(base, path);
            let playbook = ScriptedPlaybook::from_json(&read(&path)?).with_context(|| format!("playbook {}", path.display()))?;
            Ok(Box::new(ScriptedProvider::new(playbook)))
        }
        None if spec == "http" => {
            let p = HttpProvider::from_env(Duration::from_secs(cfg.oracle_timeout_secs.max(60)))?;
            Ok(Box::new(p.with_seed(Some(cfg.seed))))
        }
        _ => Err(usage(format!("--provider must be scripted:<playbook> or http, got {spec:?}"))),
    }
}

fn load_protocol(path: &Path) -> Result<TrialProtocol> {
    parse_protocol(&read(path)?).with_context(|| format!("protocol {}", path.display()))
}

fn write_run_artifacts(out: &RunOutput, trace: Option<&Path>, prompt_log: Option<&Path>) -> Result<()> {
    if let Some(p) = trace {
        let mut text = serde_json::to_string_pretty(&out.traces)?;
        text.push('\n');
        write(p, &text)?;
    }
    if let Some(p) = prompt_log {
        let mut text = String::new();
        for e in &out.prompt_log {
            text.push_str(&serde_json::to_string(e)?);
            text.push('\n');
        }
        write(p, &text)?;
    }
    Ok(())
}

fn cmd_optimize(a: OptimizeArgs) -> Result<()> {
    let mut cfg = load_config(&a.run)?;
    if a.prompt_log.is_some() {
        cfg.log_prompts = true;
    }
    let t0 = load_protocol(&a.trial)?;
    let mode = a.failure_mode.unwrap_or(t0.failure_reason);
    let cwd = Path::new(".");
    let oracle = make_oracle(&a.oracle, cwd, &cfg)?;
    let provider = make_provider(&a.provider, cwd, &cfg)?;
    let mut global = load_memory(&a.run)?;
    let backends = Backends {
        provider: provider.as_ref(),
        oracle: oracle.as_ref(),
        evidence: None,
    };
    let out = optimize(&t0, mode, &mut global, &cfg, backends)?;
    write(&a.out, &out.result.to_json())?;
    write_run_artifacts(&out, a.trace.as_deref(), a.prompt_log.as_deref())?;
    save_memory(&a.run, &cfg, &global)?;
    let r = &out.result;
    println!(
        "{}: p0 {:.4} -> p* {:.4} (delta {:+.4}) after {} iterations, {}",
        r.nct_id, r.p0, r.p_star, r.delta_p, r.iterations, r.termination
    );
    Ok(())
}

fn cmd_batch(a: BatchArgs) -> Result<()> {
    let mut cfg = load_config(&a.run)?;
    if let Some(n) = a.parallelism {
        cfg.parallelism = n;
        cfg.validate().map_err(|e| usage(format!("--parallelism: {e}")))?;
    }
    let manifest = BatchManifest::from_json(&read(&a.manifest)?).with_context(|| format!("manifest {}", a.manifest.display()))?;
    let base = a.manifest.parent().unwrap_or(Path::new("."));
    let mut protocols = Vec::new();
    let mut oracles = Vec::new();
    let mut providers = Vec::new();
    for e in &manifest.trials {
        let t0 = load_protocol(&resolve(base, &e.protocol))?;
        let mode = e.failure_mode.unwrap_or(t0.failure_reason);
        protocols.push((t0, mode));
        oracles.push(make_oracle(&e.oracle, base, &cfg)?);
        providers.push(make_provider(&e.provider, base, &cfg)?);
    }
    let items: Vec<BatchItem> = protocols
        .into_iter()
        .zip(oracles.iter().zip(&providers))
        .map(|((protocol, mode), (o, p))| BatchItem {
            protocol,
            mode,
            backends: Backends {
                provider: p.as_ref(),
                oracle: o.as_ref(),
                evidence: None,
            },
        })
        .collect();
    let mut global = load_memory(&a.run)?;
    let outcome = batch(&items, &mut global, &cfg);
    let results_dir = a.out.join("results");
    for (run, item) in outcome.runs.iter().zip(&items) {
        match run {
            Ok(o) => write(&results_dir.join(format!("{}.json", o.result.nct_id)), &o.result.to_json())?,
            Err(e) => eprintln!("{}: {}", item.protocol.nct_id, e.detail()),
        }
    }
    write_report(&outcome.report, &a.out)?;
    save_memory(&a.run, &cfg, &global)?;
    print!("{}", outcome.report.render_text());
    Ok(())
}

fn write_report(report: &CorpusReport, dir: &Path) -> Result<()> {
    write(&dir.join("report.json"), &report.to_json())?;
    write(&dir.join("report.txt"), &report.render_text())?;
    write(&dir.join("curve.csv"), &report.curve_csv())
}

fn collect_results(path: &Path) -> Result<Vec<OptimizationResult>> {
    let files = if path.is_dir() {
        let dir = if path.join("results").is_dir() { path.join("results") } else { path.to_path_buf() };
        let mut v: Vec<PathBuf> = fs::read_dir(&dir)
            .with_context(|| format!("cannot list {}", dir.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        v.sort();
        v
    } else {
        vec![path.to_path_buf()]
    };
    files
        .iter()
        .map(|f| serde_json::from_str(&read(f)?).with_context(|| format!("result document {}", f.display())))
        .collect()
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    let results = collect_results(&a.results)?;
    if results.is_empty() {
        anyhow::bail!("no result documents under {}", a.results.display());
    }
    let n = results.iter().map(|r| r.config.n_max).max().unwrap_or(0);
    let report = CorpusReport::from_results(&results, n);
    if let Some(dir) = &a.out {
        write_report(&report, dir)?;
    }
    print!("{}", report.render_text());
    Ok(())
}

fn cmd_memory_inspect(path: &Path, json: bool) -> Result<()> {
    let global = GlobalMemory::load(path)?;
    if json {
        print!("{}", global.to_json());
    } else {
        print!("{}", global.render_text());
    }
    Ok(())
}

fn cmd_gen(a: GenArgs) -> Result<()> {
    let trials = match a.kind {
        CorpusKind::Planted => planted_corpus(a.n, a.seed),
        CorpusKind::Ablation => ablation_corpus(a.n, a.seed),
    };
    write_corpus(&a.out, &trials).with_context(|| format!("cannot write corpus to {}", a.out.display()))?;
    println!("wrote {} trials to {}", trials.len(), a.out.display());
    Ok(())
}
