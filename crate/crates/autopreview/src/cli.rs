use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context};
use autopreview::atomic;
use autopreview::core::autopilot::{BrandPreset, BrandRegistry};
use autopreview::core::delegate::{
    collect_dataset, dataset_hash, fidelity, fidelity_on_clips, train_delegate, LearnedDelegate, RuleDelegate,
    TrainConfig,
};
use autopreview::core::rollout::Scenario;
use autopreview::core::study::{build_report, clip_manifest_hash, make_clips, DEFAULT_CLIP_COUNT};
use autopreview::engine::{logged_rollout, rollout_log, Attached};
use autopreview::formats::{self, ClipManifest};
use autopreview::server::{self, ServerConfig};
use autopreview::session::{client_frame, Mode, OutKind, Session, StartSession};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

#[derive(Debug, Parser)]
#[command(name = "autopreview", version, about = "Autopilot preview simulator, delegate trainer and study tools")]
pub struct Cli {
    /// Seed for the command's randomness (world, training or clip windows).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output path.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Print a single-line JSON summary on stdout.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one target-driven rollout and write its trajectory log.
    Rollout(RolloutArgs),
    /// Fit a learned delegate to a brand's labeled frames.
    TrainDelegate(TrainArgs),
    /// Score a delegate against its brand on held-out rollouts or clips.
    EvalFidelity(EvalArgs),
    /// Cut five-second quiz clips around ground-truth lane changes.
    MakeClips(ClipArgs),
    /// Build the study report from prediction records.
    StudyStats(StatsArgs),
    /// Re-emit a trajectory log as state messages.
    Replay(ReplayArgs),
    /// Serve live sessions over WebSocket plus the static UI.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct BrandArgs {
    /// Brand name.
    #[arg(long, default_value = "BrandA")]
    brand: String,
    /// Brand registry JSON; defaults to the built-in BrandA/B/C.
    #[arg(long)]
    brands: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ScenarioArgs {
    /// Simulated seconds per rollout.
    #[arg(long, default_value_t = 120.0)]
    duration: f64,
    /// Traffic vehicles besides the ego.
    #[arg(long, default_value_t = 12)]
    traffic: usize,
}

#[derive(Debug, Args)]
struct RolloutArgs {
    #[command(flatten)]
    brand: BrandArgs,
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Comma-separated brands whose delegates observe the rollout.
    #[arg(long, value_delimiter = ',')]
    attach: Vec<String>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    brand: BrandArgs,
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Labeled frames CSV. Collected from --train-seeds when absent.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Training rollout seeds, as `a..b` or a comma list.
    #[arg(long, default_value = "0..20")]
    train_seeds: String,
    /// Also save the collected dataset here.
    #[arg(long)]
    dataset_out: Option<PathBuf>,
    #[arg(long, default_value_t = TrainConfig::default().lr)]
    lr: f64,
    #[arg(long, default_value_t = TrainConfig::default().epochs)]
    epochs: usize,
    #[arg(long, default_value_t = TrainConfig::default().lambda)]
    lambda: f64,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    brand: BrandArgs,
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Learned model JSON. The rule delegate is scored when absent.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Held-out rollout seeds, as `a..b` or a comma list.
    #[arg(long, default_value = "100..110", conflicts_with = "clips")]
    seeds: String,
    /// Score only inside the windows of this clip directory.
    #[arg(long)]
    clips: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ClipArgs {
    #[command(flatten)]
    brand: BrandArgs,
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Source rollout seeds, as `a..b` or a comma list.
    #[arg(long, default_value = "1000..1030")]
    seed_pool: String,
    #[arg(long, default_value_t = DEFAULT_CLIP_COUNT)]
    n: usize,
    /// Re-scan an existing clip directory instead of writing one.
    #[arg(long)]
    check: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct StatsArgs {
    /// Prediction records CSV.
    #[arg(long)]
    records: PathBuf,
    /// Clip directory the records refer to.
    #[arg(long)]
    clips: PathBuf,
    /// Aggressiveness ratings CSV.
    #[arg(long)]
    ratings: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    /// Trajectory log to replay.
    #[arg(long)]
    log: PathBuf,
    /// Pacing multiplier on the 10 Hz tick rate; 0 replays as fast as possible.
    #[arg(long, default_value_t = 0.0)]
    speed: f64,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    /// Directory of static UI assets.
    #[arg(long = "static")]
    static_dir: Option<PathBuf>,
    /// Brand registry JSON; defaults to the built-in BrandA/B/C.
    #[arg(long)]
    brands: Option<PathBuf>,
    /// Address to bind.
    #[arg(long, default_value = "127.0.0.1")]
    host: std::net::IpAddr,
}

/// Bad input (exit 2) versus failure while doing the work (exit 1).
#[derive(Debug)]
pub enum CliError {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(e) | CliError::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

trait Classify<T> {
    fn invalid(self) -> Result<T, CliError>;
    fn runtime(self) -> Result<T, CliError>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn invalid(self) -> Result<T, CliError> {
        self.map_err(|e| CliError::Validation(e.into()))
    }
    fn runtime(self) -> Result<T, CliError> {
        self.map_err(|e| CliError::Runtime(e.into()))
    }
}

fn parse_seeds(s: &str) -> anyhow::Result<Vec<u64>> {
    let seeds: Vec<u64> = if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse()?, b.trim().parse()?);
        (a..b).collect()
    } else {
        s.split(',').map(|x| x.trim().parse()).collect::<Result<_, _>>()?
    };
    if seeds.is_empty() {
        bail!("seed list {s:?} is empty");
    }
    Ok(seeds)
}

fn brand_from(args: &BrandArgs) -> Result<(BrandRegistry, BrandPreset), CliError> {
    let registry = formats::load_brands(args.brands.as_deref()).invalid()?;
    let brand = registry
        .get(&args.brand)
        .cloned()
        .ok_or_else(|| anyhow!("unknown brand {:?}", args.brand))
        .invalid()?;
    Ok((registry, brand))
}

fn scenario_from(args: &ScenarioArgs) -> Result<Scenario, CliError> {
    if !(args.duration.is_finite() && args.duration > 0.0) {
        return Err(CliError::Validation(anyhow!("--duration must be positive")));
    }
    Ok(Scenario {
        duration_s: args.duration,
        traffic_count: args.traffic,
        ..Scenario::default()
    })
}

fn require_out(out: &Option<PathBuf>) -> Result<&Path, CliError> {
    out.as_deref()
        .ok_or_else(|| CliError::Validation(anyhow!("--out is required")))
}

/// Prints the summary: one JSON line on stdout with --json, readable lines on stderr otherwise.
fn summarize(json_mode: bool, summary: serde_json::Value) {
    if json_mode {
        println!("{summary}");
    } else if let serde_json::Value::Object(map) = summary {
        for (k, v) in map {
            eprintln!("{k}: {v}");
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Rollout(a) => rollout(&cli, a),
        Command::TrainDelegate(a) => train(&cli, a),
        Command::EvalFidelity(a) => eval(&cli, a),
        Command::MakeClips(a) => clips(&cli, a),
        Command::StudyStats(a) => stats(&cli, a),
        Command::Replay(a) => replay(&cli, a),
        Command::Serve(a) => serve(a),
    }
}

fn rollout(cli: &Cli, a: &RolloutArgs) -> Result<(), CliError> {
    let (registry, brand) = brand_from(&a.brand)?;
    let scenario = scenario_from(&a.scenario)?;
    let out = require_out(&cli.out)?;
    let mut attached = a
        .attach
        .iter()
        .map(|name| {
            registry
                .get(name)
                .cloned()
                .map(Attached::rule)
                .ok_or_else(|| anyhow!("unknown brand {name:?} in --attach"))
        })
        .collect::<anyhow::Result<Vec<_>>>()
        .invalid()?;

    let started = Instant::now();
    let mut summary = None;
    let mut notes = Vec::new();
    atomic::write_file(out, |w| {
        let mut io_err = None;
        let result = logged_rollout(
            cli.seed,
            &brand,
            &scenario,
            &mut attached,
            |line| {
                if io_err.is_none() {
                    io_err = w.write_all(line.as_bytes()).and_then(|_| w.write_all(b"\n")).err();
                }
            },
            |n| notes.push(n.clone()),
        );
        if let Some(e) = io_err {
            return Err(e);
        }
        summary = Some(result.map_err(io::Error::other)?);
        Ok(())
    })
    .with_context(|| format!("writing {}", out.display()))
    .runtime()?;
    let summary = summary.expect("set on success");
    summarize(
        cli.json,
        json!({
            "command": "rollout",
            "out": out,
            "seed": summary.seed,
            "brand": summary.brand,
            "ticks": summary.ticks,
            "lane_changes": summary.lane_changes,
            "emergencies": summary.emergencies,
            "clamped_ticks": summary.clamped_ticks,
            "ego_contact_ticks": summary.ego_contact_ticks,
            "notifications": notes.len(),
            "elapsed_s": started.elapsed().as_secs_f64(),
        }),
    );
    Ok(())
}

fn train(cli: &Cli, a: &TrainArgs) -> Result<(), CliError> {
    let (_, brand) = brand_from(&a.brand)?;
    let scenario = scenario_from(&a.scenario)?;
    let out = require_out(&cli.out)?;
    let cfg = TrainConfig {
        lr: a.lr,
        epochs: a.epochs,
        lambda: a.lambda,
        seed: cli.seed,
    };
    if !(cfg.lr.is_finite() && cfg.lr > 0.0 && cfg.lambda.is_finite() && cfg.lambda >= 0.0 && cfg.epochs > 0) {
        return Err(CliError::Validation(anyhow!("--lr and --epochs must be positive, --lambda non-negative")));
    }
    let frames = match &a.dataset {
        Some(path) => formats::read_dataset(path).invalid()?,
        None => {
            let seeds = parse_seeds(&a.train_seeds).context("--train-seeds").invalid()?;
            let frames = collect_dataset(&brand, &seeds, &scenario).runtime()?;
            if let Some(p) = &a.dataset_out {
                formats::write_dataset(p, &frames).runtime()?;
            }
            frames
        }
    };
    let started = Instant::now();
    let outcome = train_delegate(&frames, &cfg, &brand.name).runtime()?;
    let train_s = started.elapsed().as_secs_f64();
    formats::write_model(out, &outcome.model).runtime()?;
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    summarize(
        cli.json,
        json!({
            "command": "train-delegate",
            "out": out,
            "frames": frames.len(),
            "dataset_hash": dataset_hash(&frames),
            "final_loss": outcome.final_loss,
            "train_s": train_s,
            "warnings": outcome.warnings,
        }),
    );
    Ok(())
}

fn eval(cli: &Cli, a: &EvalArgs) -> Result<(), CliError> {
    let (_, brand) = brand_from(&a.brand)?;
    let mut scenario = scenario_from(&a.scenario)?;
    let learned = match &a.model {
        Some(p) => Some(LearnedDelegate::new(formats::read_model(p).invalid()?).invalid()?),
        None => None,
    };
    let rule = RuleDelegate::new(brand.params.clone());
    let report = match &a.clips {
        Some(dir) => {
            let manifest = formats::load_clips_dir(dir).invalid()?;
            scenario = manifest.scenario;
            match &learned {
                Some(d) => fidelity_on_clips(d, &brand, &manifest.clips, &scenario),
                None => fidelity_on_clips(&rule, &brand, &manifest.clips, &scenario),
            }
        }
        None => {
            let seeds = parse_seeds(&a.seeds).context("--seeds").invalid()?;
            match &learned {
                Some(d) => fidelity(d, &brand, &seeds, &scenario),
                None => fidelity(&rule, &brand, &seeds, &scenario),
            }
        }
    }
    .runtime()?;
    let json_report = serde_json::to_string_pretty(&report).expect("reports serialize");
    match &cli.out {
        Some(out) => atomic::write_bytes(out, json_report.as_bytes()).runtime()?,
        None if !cli.json => println!("{json_report}"),
        None => {}
    }
    summarize(
        cli.json,
        json!({
            "command": "eval-fidelity",
            "delegate": if learned.is_some() { "learned" } else { "rule" },
            "frame_agreement": report.frame_agreement,
            "event_precision": report.event_precision,
            "event_recall": report.event_recall,
            "event_timing_mae_s": report.event_timing_mae_s,
        }),
    );
    Ok(())
}

fn clips(cli: &Cli, a: &ClipArgs) -> Result<(), CliError> {
    if let Some(dir) = &a.check {
        let checks = formats::validate_clips_dir(dir).invalid()?;
        let ok = checks.iter().all(|c| c.ok);
        summarize(cli.json, json!({"command": "make-clips", "checked": dir, "ok": ok, "clips": checks}));
        return if ok {
            Ok(())
        } else {
            Err(CliError::Validation(anyhow!("{} failed validation", dir.display())))
        };
    }
    let (_, brand) = brand_from(&a.brand)?;
    let scenario = scenario_from(&a.scenario)?;
    let out = require_out(&cli.out)?;
    let pool = parse_seeds(&a.seed_pool).context("--seed-pool").invalid()?;
    if a.n == 0 {
        return Err(CliError::Validation(anyhow!("--n must be positive")));
    }
    let clips = make_clips(&brand, &pool, a.n, cli.seed, &scenario).runtime()?;
    let mut logs = Vec::with_capacity(clips.len());
    for clip in &clips {
        let (log, _, _) = rollout_log(clip.seed, &brand, &scenario, &mut []).runtime()?;
        logs.push(log);
    }
    let manifest = ClipManifest {
        clip_manifest_hash: clip_manifest_hash(&clips),
        brand: brand.name.clone(),
        window_seed: cli.seed,
        scenario,
        clips,
    };
    formats::write_clips_dir(out, &manifest, &logs).runtime()?;
    let checks = formats::validate_clips_dir(out).runtime()?;
    let ok = checks.iter().all(|c| c.ok);
    summarize(
        cli.json,
        json!({
            "command": "make-clips",
            "out": out,
            "clip_manifest_hash": manifest.clip_manifest_hash,
            "n_clips": manifest.clips.len(),
            "ok": ok,
        }),
    );
    if ok {
        Ok(())
    } else {
        Err(CliError::Runtime(anyhow!("written clips failed validation")))
    }
}

fn stats(cli: &Cli, a: &StatsArgs) -> Result<(), CliError> {
    let records = formats::parse_records(&a.records).invalid()?;
    let manifest = formats::load_clips_dir(&a.clips).invalid()?;
    let ratings = match &a.ratings {
        Some(p) => formats::parse_ratings(p).invalid()?,
        None => Vec::new(),
    };
    let report = build_report(&records, &ratings, &manifest.clips).invalid()?;
    match &cli.out {
        Some(out) => {
            formats::write_report(out, &report).runtime()?;
        }
        None if !cli.json => println!("{}", formats::report_to_json(&report)),
        None => {}
    }
    let between = report.unweighted_error.as_ref();
    summarize(
        cli.json,
        json!({
            "command": "study-stats",
            "records": records.len(),
            "n_clips": report.n_clips,
            "hedges_g": between.and_then(|b| b.hedges_g),
            "u_statistic": between.map(|b| b.u_statistic),
            "p_value": between.map(|b| b.p_value),
        }),
    );
    Ok(())
}

fn replay(cli: &Cli, a: &ReplayArgs) -> Result<(), CliError> {
    if !(a.speed.is_finite() && a.speed >= 0.0) {
        return Err(CliError::Validation(anyhow!("--speed must be zero or positive")));
    }
    let log = std::fs::canonicalize(&a.log)
        .with_context(|| format!("{}", a.log.display()))
        .invalid()?;
    let mut session = Session::new("replay", BrandRegistry::builtin());
    let mut start = StartSession::new(Mode::Replay);
    start.log = Some(log);
    start.speed = a.speed;
    let started = session.handle(&client_frame("start_session", None, 1, &start));
    if let Some(err) = started.iter().find(|m| m.kind == OutKind::Error) {
        return Err(CliError::Validation(anyhow!("{}", err.payload())));
    }

    let mut frames = Vec::new();
    let mut report = None;
    let period = session.tick_interval();
    while !session.is_finished() {
        for m in session.tick() {
            match m.kind {
                OutKind::State => frames.push(m.text),
                OutKind::Report => report = Some(m.payload()),
                _ => {}
            }
        }
        if let (Some(p), None) = (period, &cli.out) {
            std::thread::sleep(p);
        }
    }
    let body = frames.iter().fold(String::new(), |mut s, f| {
        s.push_str(f);
        s.push('\n');
        s
    });
    match &cli.out {
        Some(out) => atomic::write_bytes(out, body.as_bytes()).runtime()?,
        None => io::stdout().write_all(body.as_bytes()).runtime()?,
    }
    let report: serde_json::Value = serde_json::from_str(&report.unwrap_or_else(|| "{}".into())).expect("report is JSON");
    let truncated_at = report.get("truncated_at").cloned().unwrap_or(serde_json::Value::Null);
    if !truncated_at.is_null() {
        eprintln!("warning: log is damaged at tick line {truncated_at}; replayed the ticks before it");
    }
    if cli.json && cli.out.is_some() || !cli.json {
        summarize(
            cli.json,
            json!({
                "command": "replay",
                "ticks": frames.len(),
                "truncated": !truncated_at.is_null(),
                "truncated_at": truncated_at,
            }),
        );
    }
    Ok(())
}

fn serve(a: &ServeArgs) -> Result<(), CliError> {
    let brands = formats::load_brands(a.brands.as_deref()).invalid()?;
    if let Some(dir) = &a.static_dir {
        if !dir.is_dir() {
            return Err(CliError::Validation(anyhow!("--static {} is not a directory", dir.display())));
        }
    }
    let data_dir = std::env::var_os("AUTOPREVIEW_DATA_DIR").map(PathBuf::from);
    let config = ServerConfig {
        brands,
        data_dir,
        static_dir: a.static_dir.clone(),
    };
    let rt = tokio::runtime::Runtime::new().runtime()?;
    rt.block_on(server::serve((a.host, a.port).into(), config)).runtime()
}
