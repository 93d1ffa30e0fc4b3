//! Command-line front end.
//!
//! Every command writes its files atomically into `--out` together with a
//! `manifest.json` that records the effective configuration and its SHA-256
//! hash. JSON outputs also carry the hash in a `config_hash` field.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::diffusion::{
    decode_beam, evaluate_dataset, make_dataset, Checkpoint, DecodeConfig, DecodeMode, Split,
    TaskConfig, TrainConfig, Trainer,
};
use crate::error::Error;
use crate::mixing::{plan_schedule, EulerianTable};
use crate::model::{gradcheck, LossKind, NetConfig, ScoreNet};
use crate::oracle::{self, ORACLE_MAX_N};
use crate::perm::{ObjectList, Permutation};
use crate::reverse::ReverseKind;
use crate::rng::{seeded, stream};
use crate::shuffles::{forward_trajectory, ShuffleKind};

#[derive(Parser, Debug)]
#[command(
    name = "symdiff",
    version,
    about = "Discrete diffusion over symmetric groups"
)]
pub struct Cli {
    /// Random seed; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for parallel sections.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// TV curves and the planned denoising schedule for riffle shuffles.
    AnalyzeMixing(MixingArgs),
    /// Forward trajectories as JSON lines.
    SampleShuffle(ShuffleArgs),
    /// Train a score network from a run config.
    Train(TrainArgs),
    /// Evaluate a checkpoint on its held-out split.
    Eval(EvalArgs),
    /// Decode one list of scalars with a checkpoint.
    Decode(DecodeArgs),
    /// Finite-difference gradient checks for the network heads.
    Gradcheck(GradcheckArgs),
    /// Brute-force oracle suite over S_n.
    Oracle(OracleArgs),
}

#[derive(Args, Debug)]
pub struct MixingArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0.005)]
    pub eps_t: f64,
    #[arg(long, default_value_t = 0.3)]
    pub gap: f64,
    /// Last timestep in the curves; defaults to the planned `T`.
    #[arg(long)]
    pub t_max: Option<u32>,
}

#[derive(Args, Debug)]
pub struct ShuffleArgs {
    #[arg(long, default_value = "RS")]
    pub kind: String,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub steps: usize,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    /// Include the intermediate lists (objects 1..n).
    #[arg(long)]
    pub states: bool,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// `full-trajectory` or `random-timestep`.
    #[arg(long)]
    pub loss: Option<String>,
}

#[derive(Args, Debug, Clone)]
pub struct DecodeFlags {
    /// `greedy` or `beam`.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub outer_beam: Option<usize>,
    #[arg(long)]
    pub inner_beam: Option<usize>,
    #[arg(long)]
    pub restarts: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub decode: DecodeFlags,
    /// Evaluate only the first `limit` held-out samples.
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Args, Debug)]
pub struct DecodeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Comma-separated scalars.
    #[arg(long, allow_hyphen_values = true)]
    pub values: String,
    #[command(flatten)]
    pub decode: DecodeFlags,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// One head (IT, II, IRS, PL, GPL); all heads when omitted.
    #[arg(long)]
    pub head: Option<String>,
    #[arg(long, default_value_t = 4)]
    pub n: usize,
}

#[derive(Args, Debug)]
pub struct OracleArgs {
    #[arg(long, default_value_t = 5)]
    pub n_max: usize,
}

/// Full configuration for `train` (and the defaults `eval` falls back to).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub threads: Option<usize>,
    pub task: TaskConfig,
    #[serde(default)]
    pub model: NetConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub decode: DecodeConfig,
}

/// A failure with its exit code: 1 runtime/IO, 2 usage/config, 3 check.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    fn usage(msg: impl Into<String>) -> Self {
        CliError {
            code: 2,
            message: msg.into(),
        }
    }

    fn check(msg: impl Into<String>) -> Self {
        CliError {
            code: 3,
            message: msg.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_)
            | Error::OutOfRange { .. }
            | Error::InvalidArgument(_)
            | Error::InvalidPermutation(_)
            | Error::SizeMismatch { .. }
            | Error::ShapeMismatch { .. } => 2,
            Error::Io(_) | Error::Serde(_) | Error::Numerical(_) => 1,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// SHA-256 of the canonical (key-sorted, compact) JSON form of `config`.
pub fn config_hash(config: &Value) -> String {
    let canonical = serde_json::to_string(config).expect("json values serialize");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

/// Writes via a temporary sibling file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().and_then(|s| s.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

struct Output {
    dir: PathBuf,
    command: &'static str,
    config: Value,
    hash: String,
    files: Vec<String>,
}

impl Output {
    fn new(dir: PathBuf, command: &'static str, config: Value) -> Self {
        let hash = config_hash(&config);
        Output {
            dir,
            command,
            config,
            hash,
            files: Vec::new(),
        }
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        write_atomic(&self.dir.join(name), bytes).map_err(Error::from)?;
        self.files.push(name.to_string());
        Ok(())
    }

    /// Writes `value` with a `config_hash` field added when it is an object.
    fn write_json(&mut self, name: &str, mut value: Value) -> CliResult<Value> {
        if let Value::Object(map) = &mut value {
            map.insert("config_hash".into(), Value::String(self.hash.clone()));
        }
        let mut text = serde_json::to_string_pretty(&value).map_err(Error::from)?;
        text.push('\n');
        self.write(name, text.as_bytes())?;
        Ok(value)
    }

    fn finish(mut self) -> CliResult<()> {
        let manifest = json!({
            "command": self.command,
            "config": self.config,
            "config_hash": self.hash,
            "files": self.files,
        });
        let mut text = serde_json::to_string_pretty(&manifest).map_err(Error::from)?;
        text.push('\n');
        write_atomic(&self.dir.join("manifest.json"), text.as_bytes()).map_err(Error::from)?;
        self.files.clear();
        Ok(())
    }
}

fn csv(header: &str, rows: impl IntoIterator<Item = String>) -> Vec<u8> {
    let mut s = String::from(header);
    s.push('\n');
    for r in rows {
        s.push_str(&r);
        s.push('\n');
    }
    s.into_bytes()
}

fn perm_field(p: &Permutation) -> String {
    p.to_one_based()
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

fn to_value<T: Serialize>(v: &T) -> CliResult<Value> {
    Ok(serde_json::to_value(v).map_err(Error::from)?)
}

fn out_dir(cli: &Cli, fallback: Option<&PathBuf>) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| fallback.cloned())
        .unwrap_or_else(|| PathBuf::from("symdiff-out"))
}

fn load_run_config(path: &Path) -> CliResult<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| CliError {
        code: 1,
        message: format!("cannot read config {}: {e}", path.display()),
    })?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::usage(format!("invalid config {}: {e}", path.display())))
}

fn load_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    let text = fs::read_to_string(path).map_err(|e| CliError {
        code: 1,
        message: format!("cannot read checkpoint {}: {e}", path.display()),
    })?;
    Ok(Checkpoint::from_json(&text)?)
}

fn apply_decode_flags(base: &DecodeConfig, flags: &DecodeFlags) -> CliResult<DecodeConfig> {
    let mut d = base.clone();
    if let Some(m) = &flags.mode {
        d.mode = match m.as_str() {
            "greedy" => DecodeMode::Greedy,
            "beam" => DecodeMode::Beam,
            other => return Err(CliError::usage(format!("unknown decode mode {other:?}"))),
        };
    }
    if let Some(v) = flags.outer_beam {
        d.outer_beam = v;
    }
    if let Some(v) = flags.inner_beam {
        d.inner_beam = v;
    }
    if let Some(v) = flags.restarts {
        d.restarts = v;
    }
    let (outer, inner) = d.beams();
    if outer == 0 || inner < outer || d.restarts == 0 {
        return Err(CliError::usage(
            "decode needs 1 <= outer_beam <= inner_beam and restarts >= 1",
        ));
    }
    Ok(d)
}

fn analyze_mixing(cli: &Cli, args: &MixingArgs) -> CliResult<()> {
    if args.n < 2 {
        return Err(CliError::usage(format!("--n must be >= 2, got {}", args.n)));
    }
    let valid = |x: f64| x > 0.0 && x < 1.0;
    if !valid(args.eps_t) || !valid(args.gap) {
        return Err(CliError::usage("--eps-t and --gap must lie in (0, 1)"));
    }
    let plan = plan_schedule(args.n, args.eps_t, args.gap)?;
    let t_max = args.t_max.unwrap_or(plan.horizon);
    if t_max == 0 {
        return Err(CliError::usage("--t-max must be >= 1"));
    }
    let table = EulerianTable::new(args.n)?;
    let config = json!({
        "n": args.n, "eps_t": args.eps_t, "gap": args.gap, "t_max": t_max,
    });
    let mut out = Output::new(out_dir(cli, None), "analyze-mixing", config);
    let curve = (1..=t_max).map(|t| format!("{},{},{}", args.n, t, table.tv_to_uniform(t)));
    out.write("tv_to_uniform.csv", &csv("n,t,tv_to_uniform", curve))?;
    let mut pairs = Vec::new();
    for t in 0..=t_max {
        for t2 in 0..=t_max {
            pairs.push(format!("{t},{t2},{}", table.tv_between(t, t2)));
        }
    }
    out.write("tv_pairwise.csv", &csv("t,t_prime,tv", pairs))?;
    let summary = out.write_json("schedule.json", to_value(&plan)?)?;
    println!("{}", serde_json::to_string(&summary).map_err(Error::from)?);
    out.finish()
}

fn sample_shuffle(cli: &Cli, args: &ShuffleArgs) -> CliResult<()> {
    let kind: ShuffleKind = args.kind.parse()?;
    if args.n < 1 || args.count < 1 {
        return Err(CliError::usage("--n and --count must be >= 1"));
    }
    let seed = cli.seed.unwrap_or(0);
    let config = json!({
        "kind": kind, "n": args.n, "steps": args.steps, "count": args.count,
        "states": args.states, "seed": seed,
    });
    let mut out = Output::new(out_dir(cli, None), "sample-shuffle", config);
    let values: Vec<f64> = (1..=args.n).map(|v| v as f64).collect();
    let x0 = ObjectList::from_scalars(&values)?;
    let mut text = String::new();
    for i in 0..args.count {
        let mut rng = stream(seed, i as u64);
        let traj = forward_trajectory(&x0, kind, args.steps, &mut rng);
        text.push_str(&serde_json::to_string(&traj.to_json(args.states)).map_err(Error::from)?);
        text.push('\n');
    }
    out.write("trajectories.jsonl", text.as_bytes())?;
    out.finish()
}

fn run_train(cli: &Cli, args: &TrainArgs) -> CliResult<()> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::usage("train needs --config"))?;
    let mut rc = load_run_config(path)?;
    if let Some(seed) = cli.seed {
        rc.seed = Some(seed);
    }
    let seed = rc.seed.unwrap_or(0);
    rc.seed = Some(seed);
    if let Some(loss) = &args.loss {
        rc.train.loss = loss.parse::<LossKind>()?;
    }
    rc.task.validate()?;
    if let (None, Some(threads)) = (cli.threads, rc.threads) {
        set_threads(threads)?;
    }
    let net = ScoreNet::new(rc.model.clone(), seed)?;
    // rejects bad head/schedule pairs before any step is taken
    let mut trainer = Trainer::new(net, rc.task.clone(), rc.train.clone(), seed)?;
    let dir = out_dir(cli, rc.out.as_ref());
    let mut effective = to_value(&rc)?;
    effective["out"] = Value::Null;
    effective["threads"] = Value::Null;
    let mut out = Output::new(dir, "train", effective);
    log::info!(
        "training n={} head={} schedule={:?} for {} steps",
        rc.task.n,
        rc.model.head,
        trainer.schedule.steps(),
        trainer.total_steps()
    );
    let started = std::time::Instant::now();
    let history = trainer.run()?;
    log::info!("training took {:.1}s", started.elapsed().as_secs_f64());
    let rows = history.iter().map(|r| {
        format!(
            "{},{},{},{},{}",
            r.step, r.epoch, r.batch, r.loss, r.loss_per_step
        )
    });
    out.write(
        "loss_history.csv",
        &csv("step,epoch,batch,loss,loss_per_step", rows),
    )?;
    let ck = trainer.checkpoint();
    out.write("checkpoint.json", ck.to_json()?.as_bytes())?;
    let test = make_dataset(&rc.task, seed, Split::Test)?;
    let heldout = if test.is_empty() {
        Value::Null
    } else {
        let (m, _) = evaluate_dataset(&trainer.net, &test, &trainer.schedule, &rc.decode, seed)?;
        to_value(&m)?
    };
    let last = history.last().cloned();
    let report = json!({
        "n": rc.task.n,
        "head": rc.model.head,
        "schedule": trainer.schedule,
        "steps": history.len(),
        "final_loss": last.as_ref().map(|r| r.loss),
        "final_loss_per_step": last.as_ref().map(|r| r.loss_per_step),
        "decode": rc.decode,
        "heldout_metrics": heldout,
    });
    let report = out.write_json("train_report.json", report)?;
    println!("{}", serde_json::to_string(&report).map_err(Error::from)?);
    out.finish()
}

fn run_eval(cli: &Cli, args: &EvalArgs) -> CliResult<()> {
    let ck = load_checkpoint(&args.checkpoint)?;
    let base = match &cli.config {
        Some(p) => load_run_config(p)?.decode,
        None => DecodeConfig::default(),
    };
    let decode = apply_decode_flags(&base, &args.decode)?;
    let seed = cli.seed.unwrap_or(ck.seed);
    let mut test = make_dataset(&ck.task, ck.seed, Split::Test)?;
    if let Some(limit) = args.limit {
        test.truncate(limit);
    }
    if test.is_empty() {
        return Err(CliError::usage("the held-out split is empty"));
    }
    let (outer, inner) = decode.beams();
    let decode_json = json!({
        "mode": decode.mode, "outer_beam": outer, "inner_beam": inner, "restarts": decode.restarts,
    });
    let config = json!({
        "checkpoint": args.checkpoint.display().to_string(),
        "decode": decode_json,
        "limit": args.limit,
        "seed": seed,
    });
    let mut out = Output::new(out_dir(cli, None), "eval", config);
    let (metrics, samples) = evaluate_dataset(&ck.net, &test, &ck.schedule, &decode, seed)?;
    let rows = samples.iter().map(|s| {
        format!(
            "{},{},{},{},{},{},{}",
            s.index,
            perm_field(&s.predicted),
            perm_field(&s.truth),
            s.log_prob,
            s.metrics.kendall_tau,
            s.metrics.accuracy,
            s.metrics.correctness
        )
    });
    let header = "index,predicted,truth,log_prob,kendall_tau,accuracy,correctness";
    out.write("eval_samples.csv", &csv(header, rows))?;
    let report = json!({
        "n": ck.task.n,
        "model_checkpoint": args.checkpoint.display().to_string(),
        "schedule": ck.schedule,
        "decode": decode_json,
        "metrics": metrics,
        "samples": samples.len(),
        "per_sample_csv": "eval_samples.csv",
    });
    let report = out.write_json("eval_report.json", report)?;
    println!("{}", serde_json::to_string(&report).map_err(Error::from)?);
    out.finish()
}

fn run_decode(cli: &Cli, args: &DecodeArgs) -> CliResult<()> {
    let ck = load_checkpoint(&args.checkpoint)?;
    let values: Vec<f64> = args
        .values
        .split(',')
        .map(|v| v.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| CliError::usage(format!("bad --values: {e}")))?;
    if values.len() != ck.task.n {
        return Err(CliError::usage(format!(
            "the model was trained for n = {}, got {} values",
            ck.task.n,
            values.len()
        )));
    }
    let decode = apply_decode_flags(&DecodeConfig::default(), &args.decode)?;
    let (outer, inner) = decode.beams();
    let seed = cli.seed.unwrap_or(0);
    let objects = ObjectList::from_scalars(&values)?;
    let d = decode_beam(
        &ck.net,
        &objects,
        &ck.schedule,
        outer,
        inner,
        decode.restarts,
        &mut seeded(seed),
    )?;
    let ordered: Vec<f64> = d.perm.apply_slice(&values)?;
    let config = json!({
        "checkpoint": args.checkpoint.display().to_string(),
        "values": values,
        "decode": {"mode": decode.mode, "outer_beam": outer, "inner_beam": inner, "restarts": decode.restarts},
        "seed": seed,
    });
    let mut out = Output::new(out_dir(cli, None), "decode", config);
    let result = json!({
        "permutation": d.perm,
        "ordered_values": ordered,
        "log_prob": d.log_prob,
    });
    let result = out.write_json("decode.json", result)?;
    println!("{}", serde_json::to_string(&result).map_err(Error::from)?);
    out.finish()
}

fn run_gradcheck(cli: &Cli, args: &GradcheckArgs) -> CliResult<()> {
    let heads: Vec<ReverseKind> = match &args.head {
        Some(h) => vec![h.parse()?],
        None => ReverseKind::ALL.to_vec(),
    };
    if args.n < 1 || args.n > 8 {
        return Err(CliError::usage("--n must be in 1..=8"));
    }
    let seed = cli.seed.unwrap_or(0);
    let config = json!({"heads": heads, "n": args.n, "seed": seed});
    let mut out = Output::new(out_dir(cli, None), "gradcheck", config);
    let mut reports = Vec::new();
    for head in heads {
        let r = gradcheck(head, args.n, seed)?;
        println!(
            "{} {:<4} n={} params={} max_rel_error={:.3e}",
            if r.passed { "PASS" } else { "FAIL" },
            r.head,
            r.n,
            r.params_checked,
            r.max_rel_error
        );
        reports.push(r);
    }
    let worst = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    let all_passed = reports.iter().all(|r| r.passed);
    out.write_json(
        "gradcheck.json",
        json!({"reports": reports, "max_rel_error": worst, "passed": all_passed}),
    )?;
    out.finish()?;
    if all_passed {
        Ok(())
    } else {
        Err(CliError::check(format!(
            "gradient check failed: max rel error {worst:.3e}"
        )))
    }
}

fn run_oracle(cli: &Cli, args: &OracleArgs) -> CliResult<()> {
    if args.n_max < 1 || args.n_max > ORACLE_MAX_N {
        return Err(CliError::usage(format!(
            "--n-max must be in 1..={ORACLE_MAX_N}, got {}",
            args.n_max
        )));
    }
    let results = oracle::run_all(args.n_max)?;
    for r in &results {
        println!(
            "{} {} max_error={:e} ({})",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.max_error,
            r.detail
        );
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    let mut out = Output::new(out_dir(cli, None), "oracle", json!({"n_max": args.n_max}));
    out.write_json(
        "oracle.json",
        json!({"n_max": args.n_max, "checks": results, "failed": failed}),
    )?;
    out.finish()?;
    if failed == 0 {
        Ok(())
    } else {
        Err(CliError::check(format!("{failed} oracle checks failed")))
    }
}

fn set_threads(threads: usize) -> CliResult<()> {
    if threads == 0 {
        return Err(CliError::usage("threads must be >= 1"));
    }
    // a second call in the same process keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global();
    Ok(())
}

/// Runs a parsed command line.
pub fn run(cli: &Cli) -> CliResult<()> {
    if let Some(threads) = cli.threads {
        set_threads(threads)?;
    }
    match &cli.command {
        Command::AnalyzeMixing(a) => analyze_mixing(cli, a),
        Command::SampleShuffle(a) => sample_shuffle(cli, a),
        Command::Train(a) => run_train(cli, a),
        Command::Eval(a) => run_eval(cli, a),
        Command::Decode(a) => run_decode(cli, a),
        Command::Gradcheck(a) => run_gradcheck(cli, a),
        Command::Oracle(a) => run_oracle(cli, a),
    }
}

/// Parses `args`, runs, reports errors on stderr and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
