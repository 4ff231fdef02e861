//! Command-line interface: `prepare`, `train`, `eval`, `inspect-graph`,
//! `verify` and `replay`.
//!
//! Every command that writes outputs records a [`RunManifest`] in its output
//! directory before doing any work. Exit codes: 0 success, 1 user or
//! configuration error, 2 internal invariant violation.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dsig::{read_sidecar, write_sidecar, Dsig};
use crate::gimsa::format_matrix;
use crate::model::{IgFormer, Mode};
use crate::skeleton::{
    ntu_label_from_name, parse_ntu, parse_sbu, read_canonical, sbu_label_from_path, write_canonical, BodyPartMap,
    InteractionSample,
};
use crate::trainer::{
    evaluate, evaluate_noisy, split_holdout, synth_dataset, train, Example, METRICS_HEADER,
};
use crate::verify;
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const CONFIG_FILE: &str = "config.toml";
pub const CHECKPOINT_FILE: &str = "model.igfc";
pub const METRICS_FILE: &str = "metrics.tsv";
pub const SAMPLE_EXT: &str = "igf";
pub const SIDECAR_EXT: &str = "igfd";

#[derive(Debug, Parser)]
#[command(name = "igformer", version, about = "Two-person interaction recognition with graph interaction attention")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert raw skeleton files (or generate synthetic ones) into canonical
    /// samples with distance-graph sidecars.
    Prepare(PrepareArgs),
    /// Train a model on a prepared data directory.
    Train(TrainArgs),
    /// Report accuracy and the confusion matrix of a checkpoint.
    Eval(EvalArgs),
    /// Dump the distance matrices and interaction graphs of one sample.
    InspectGraph(InspectArgs),
    /// Run the gradient checks, graph oracle and invariant battery.
    Verify(VerifyArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Ntu,
    Sbu,
    Synth,
}

/// Options shared by the commands that build a model.
#[derive(Debug, Clone, Default, Args)]
pub struct ModelOverrides {
    /// Run configuration file; an absent file means the reference settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub mode: Option<Mode>,
    /// Neighbors per token in the distance graph.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub itb_layers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    #[arg(long, value_enum)]
    pub format: Format,
    /// Directory of raw files; not used for `synth`.
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Number of synthetic samples.
    #[arg(long, default_value_t = 40)]
    pub count: usize,
    /// Number of synthetic classes (1..=4).
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    /// Synthetic sequence length; defaults to the configured frame count.
    #[arg(long)]
    pub frames: Option<usize>,
    #[command(flatten)]
    pub model: ModelOverrides,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Prepared data directory.
    pub data: PathBuf,
    /// Separate prepared validation directory; otherwise a seeded holdout.
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Joint noise standard deviation in metres applied during training.
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[command(flatten)]
    pub model: ModelOverrides,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Configuration of the checkpoint; defaults to `config.toml` next to it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Joint noise standard deviation in metres applied to the inputs.
    #[arg(long, default_value_t = 0.0)]
    pub noise_sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory for the manifest and report.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// Canonical sample file.
    pub sample: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Distance-graph sidecar to use instead of recomputing.
    #[arg(long)]
    pub graph: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Perturbs the analytic gradient of the named check.
    #[arg(long, hide = true)]
    pub corrupt_grad: Option<String>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
    /// Write outputs here instead of the recorded directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    /// Arguments after the program name, as given.
    pub args: Vec<String>,
    pub seed: u64,
    pub inputs: Vec<PathBuf>,
    pub out: Option<PathBuf>,
    pub config: RunConfig,
}

impl RunManifest {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let line = e.span().map_or(1, |s| text[..s.start.min(text.len())].matches('\n').count() + 1);
            Error::parse(line, e.message().to_string())
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }
}

/// Parses `args` (program name first), runs the command and returns the exit
/// code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let recorded: Vec<String> = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(cli.command, &recorded, None) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_user_error() {
                1
            } else {
                2
            }
        }
    }
}

/// Runs one command. `args` are recorded in the manifest; `config` replaces
/// the configuration file when replaying.
pub fn execute(command: Command, args: &[String], config: Option<RunConfig>) -> Result<()> {
    match command {
        Command::Prepare(a) => cmd_prepare(&a, args, config),
        Command::Train(a) => cmd_train(&a, args, config),
        Command::Eval(a) => cmd_eval(&a, args, config),
        Command::InspectGraph(a) => cmd_inspect_graph(&a, args, config),
        Command::Verify(a) => cmd_verify(&a, args),
        Command::Replay(a) => cmd_replay(&a),
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    RunConfig::parse(&text).map_err(|e| match e {
        Error::Parse { line, message } => Error::Parse {
            line,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

/// Applies command-line overrides on top of the file (or replayed) config.
fn resolve_config(o: &ModelOverrides, replayed: Option<RunConfig>) -> Result<RunConfig> {
    let mut cfg = match replayed {
        Some(c) => c,
        None => load_config(o.config.as_deref())?,
    };
    if let Some(seed) = o.seed {
        cfg.train.seed = seed;
    }
    if let Some(mode) = o.mode {
        cfg.model.mode = mode;
    }
    if let Some(k) = o.k {
        cfg.model.k = k;
    }
    if let Some(n) = o.itb_layers {
        cfg.model.itb_layers = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_manifest(out: &Path, command: &str, args: &[String], inputs: Vec<PathBuf>, config: &RunConfig) -> Result<()> {
    create_dir(out)?;
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.to_string(),
        args: args.to_vec(),
        seed: config.train.seed,
        inputs,
        out: Some(out.to_path_buf()),
        config: config.clone(),
    };
    write(&out.join(MANIFEST_FILE), manifest.to_toml())
}

/// Files in `dir` with extension `ext`, sorted by name.
fn files_with_ext(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
            let path = entry.map_err(|e| Error::io(&d, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == ext) {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

fn sample_file_name(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

fn parse_raw(format: Format, root: &Path, path: &Path) -> Result<InteractionSample> {
    let bytes = read(path)?;
    let id = path.strip_prefix(root).unwrap_or(path).with_extension("").to_string_lossy().replace(['/', '\\'], "_");
    match format {
        Format::Ntu => {
            let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            let label = ntu_label_from_name(&name)?;
            parse_ntu(&bytes)?.into_sample(label, id)
        }
        Format::Sbu => parse_sbu(&bytes, sbu_label_from_path(path)?, id),
        Format::Synth => unreachable!("synthetic samples are generated"),
    }
}

fn write_prepared(out: &Path, sample: &InteractionSample, cfg: &RunConfig) -> Result<()> {
    let map = cfg.data.part_map(sample.joints())?;
    let model_graphs = cfg.model.graph_config()?;
    let padded = sample.padded(cfg.model.spm.frames)?;
    let dsig = crate::dsig::build_graphs(&padded, &map, &model_graphs)?.dsig;
    let stem = sample_file_name(&sample.source_id);
    write(&out.join(format!("{stem}.{SAMPLE_EXT}")), write_canonical(sample))?;
    write(&out.join(format!("{stem}.{SIDECAR_EXT}")), write_sidecar(&dsig))
}

pub fn cmd_prepare(a: &PrepareArgs, args: &[String], replayed: Option<RunConfig>) -> Result<()> {
    let cfg = resolve_config(&a.model, replayed)?;
    let inputs: Vec<PathBuf> = a.input.iter().cloned().collect();
    write_manifest(&a.out, "prepare", args, inputs, &cfg)?;
    let (ok, failed) = match a.format {
        Format::Synth => {
            if a.input.is_some() {
                return Err(Error::Config("synth takes no input directory".into()));
            }
            let frames = a.frames.unwrap_or(cfg.model.spm.frames);
            let samples = synth_dataset(a.count, a.classes, frames, cfg.train.seed)?;
            for s in &samples {
                write_prepared(&a.out, s, &cfg)?;
            }
            (samples.len(), 0)
        }
        format => {
            let input = a
                .input
                .as_deref()
                .ok_or_else(|| Error::Config(format!("{format:?} needs an input directory").to_lowercase()))?;
            let ext = if format == Format::Ntu { "skeleton" } else { "txt" };
            let files = files_with_ext(input, ext)?;
            if files.is_empty() {
                return Err(Error::Config(format!("no .{ext} files under {}", input.display())));
            }
            let results = parallel_map(&files, |path| parse_raw(format, input, path).and_then(|s| write_prepared(&a.out, &s, &cfg)));
            let mut ok = 0;
            for (path, r) in files.iter().zip(results) {
                match r {
                    Ok(()) => ok += 1,
                    Err(e) => log::warn!("skipping {}: {e}", path.display()),
                }
            }
            (ok, files.len() - ok)
        }
    };
    println!("prepared {ok} samples, {failed} failed, output in {}", a.out.display());
    if ok == 0 {
        return Err(Error::Config("no sample could be prepared".into()));
    }
    Ok(())
}

/// Applies `f` to every item on scoped worker threads, keeping input order.
fn parallel_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(items.len()).max(1);
    let chunk = items.len().div_ceil(workers).max(1);
    std::thread::scope(|s| {
        let handles: Vec<_> = items.chunks(chunk).map(|c| s.spawn(|| c.iter().map(&f).collect::<Vec<R>>())).collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

/// Canonical samples of a prepared directory with their cached graphs when
/// the sidecar matches the model, rebuilt otherwise.
pub fn load_prepared(dir: &Path, model: &IgFormer) -> Result<Vec<Example>> {
    let files = files_with_ext(dir, SAMPLE_EXT)?;
    if files.is_empty() {
        return Err(Error::Config(format!("no .{SAMPLE_EXT} samples in {}", dir.display())));
    }
    let m = model.tokens()?;
    files
        .iter()
        .map(|path| {
            let sample = read_canonical(&read(path)?)
                .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
                .padded(model.config.spm.frames)?;
            let sidecar = path.with_extension(SIDECAR_EXT);
            let cached = match sidecar.exists() {
                true => Some(read_sidecar(&read(&sidecar)?).map_err(|e| Error::Format(format!("{}: {e}", sidecar.display())))?),
                false => None,
            };
            let dsig = match cached {
                Some(d) if d.tokens() == m && d.k == model.config.k => d,
                other => {
                    if other.is_some() {
                        log::warn!("{}: graph does not match the model, rebuilding", sidecar.display());
                    }
                    model.graphs(&sample)?.dsig
                }
            };
            Ok(Example { sample, dsig })
        })
        .collect()
}

fn part_map_for(cfg: &RunConfig, examples_dir: &Path) -> Result<BodyPartMap> {
    let first = files_with_ext(examples_dir, SAMPLE_EXT)?
        .into_iter()
        .next()
        .ok_or_else(|| Error::Config(format!("no .{SAMPLE_EXT} samples in {}", examples_dir.display())))?;
    let joints = read_canonical(&read(&first)?)?.joints();
    cfg.data.part_map(joints)
}

pub fn cmd_train(a: &TrainArgs, args: &[String], replayed: Option<RunConfig>) -> Result<()> {
    let mut cfg = resolve_config(&a.model, replayed)?;
    if let Some(s) = a.noise_sigma {
        cfg.train.noise_sigma_m = s;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    cfg.validate()?;
    let mut inputs = vec![a.data.clone()];
    inputs.extend(a.val.iter().cloned());
    write_manifest(&a.out, "train", args, inputs, &cfg)?;
    write(&a.out.join(CONFIG_FILE), cfg.to_toml())?;

    let map = part_map_for(&cfg, &a.data)?;
    let mut model = IgFormer::new(cfg.model.clone(), map, cfg.train.seed)?;
    let all = load_prepared(&a.data, &model)?;
    let (train_set, val_set) = match &a.val {
        Some(v) => (all, load_prepared(v, &model)?),
        None => split_holdout(&all, cfg.train.val_fraction, cfg.train.seed),
    };
    log::info!("{} training and {} validation samples, {} parameters", train_set.len(), val_set.len(), crate::model::param_count(&model.params));
    eprintln!("{METRICS_HEADER}");
    let report = train(&mut model, &cfg.train, &train_set, &val_set, |m| eprintln!("{m}"))?;
    write(&a.out.join(METRICS_FILE), report.metrics_log())?;
    write(&a.out.join(CHECKPOINT_FILE), model.to_checkpoint())?;
    println!("wrote {} and {}", a.out.join(CHECKPOINT_FILE).display(), a.out.join(METRICS_FILE).display());
    Ok(())
}

/// Loads a checkpoint with its configuration (explicit, replayed or the
/// `config.toml` next to it) and the part map for `joints`.
fn load_model(checkpoint: &Path, config: Option<&Path>, replayed: Option<RunConfig>, joints: usize) -> Result<(RunConfig, IgFormer)> {
    let cfg = match replayed {
        Some(c) => c,
        None => {
            let fallback = checkpoint.with_file_name(CONFIG_FILE);
            load_config(Some(config.unwrap_or(&fallback)))?
        }
    };
    let map = cfg.data.part_map(joints)?;
    let model = IgFormer::from_checkpoint(cfg.model.clone(), map, &read(checkpoint)?)?;
    Ok((cfg, model))
}

pub fn cmd_eval(a: &EvalArgs, args: &[String], replayed: Option<RunConfig>) -> Result<()> {
    let first = files_with_ext(&a.data, SAMPLE_EXT)?
        .into_iter()
        .next()
        .ok_or_else(|| Error::Config(format!("no .{SAMPLE_EXT} samples in {}", a.data.display())))?;
    let joints = read_canonical(&read(&first)?)?.joints();
    let (mut cfg, model) = load_model(&a.checkpoint, a.config.as_deref(), replayed, joints)?;
    cfg.train.seed = a.seed;
    if let Some(out) = &a.out {
        write_manifest(out, "eval", args, vec![a.data.clone(), a.checkpoint.clone()], &cfg)?;
    }
    let examples = load_prepared(&a.data, &model)?;
    let report = if a.noise_sigma > 0.0 {
        evaluate_noisy(&model, &examples, a.noise_sigma, a.seed)?
    } else {
        evaluate(&model, &examples)?
    };
    print!("{report}");
    if let Some(out) = &a.out {
        write(&out.join("eval.txt"), report.to_string())?;
    }
    Ok(())
}

pub fn cmd_inspect_graph(a: &InspectArgs, args: &[String], replayed: Option<RunConfig>) -> Result<()> {
    let sample = read_canonical(&read(&a.sample)?)?;
    let (cfg, model) = load_model(&a.checkpoint, a.config.as_deref(), replayed, sample.joints())?;
    let mut inputs = vec![a.sample.clone(), a.checkpoint.clone()];
    inputs.extend(a.graph.iter().cloned());
    write_manifest(&a.out, "inspect-graph", args, inputs, &cfg)?;

    let sample = sample.padded(cfg.model.spm.frames)?;
    let graphs = model.graphs(&sample)?;
    let m = model.tokens()?;
    let dsig: Dsig = match &a.graph {
        Some(path) => read_sidecar(&read(path)?)?,
        None => graphs.dsig.clone(),
    };
    if dsig.tokens() != m {
        return Err(Error::Config(format!("graph has {} tokens, model expects {m}", dsig.tokens())));
    }
    let dump = |name: &str, t: &crate::tensor::Tensor| write(&a.out.join(format!("{name}.txt")), format_matrix(t));
    dump("a_mn", &graphs.dist_mn)?;
    dump("a_nm", &graphs.dist_nm)?;
    dump("dsig_mn", &dsig.mn)?;
    dump("dsig_nm", &dsig.nm)?;

    let (logits, trace) = model.trace(&sample, &dsig)?;
    let mut worst: f64 = 0.0;
    for (b, heads) in trace.blocks.iter().enumerate() {
        for (h, head) in heads.iter().enumerate() {
            let prefix = format!("block{b}_head{h}");
            if let Some(s) = &head.sdig_mn {
                dump(&format!("{prefix}_sdig_mn"), s)?;
            }
            if let Some(s) = &head.sdig_nm {
                dump(&format!("{prefix}_sdig_nm"), s)?;
            }
            for (dir, r) in [("mn", &head.r_mn), ("nm", &head.r_nm)] {
                dump(&format!("{prefix}_r_{dir}"), r)?;
                let dev = row_sum_deviation(r);
                println!("{prefix}_r_{dir}: max |row sum - 1| = {dev:.3e}");
                worst = worst.max(dev);
            }
        }
    }
    println!("tokens {m}, k {}, logits {:?}", dsig.k, logits.data());
    if worst > 1e-6 {
        return Err(Error::Verification(format!("attention rows deviate from 1 by {worst:.3e}")));
    }
    Ok(())
}

fn row_sum_deviation(r: &crate::tensor::Tensor) -> f64 {
    let cols = r.shape()[1];
    r.data().chunks(cols).map(|row| (row.iter().sum::<f64>() - 1.0).abs()).fold(0.0, f64::max)
}

pub fn cmd_verify(a: &VerifyArgs, args: &[String]) -> Result<()> {
    if let Some(out) = &a.out {
        let mut cfg = RunConfig::default();
        cfg.train.seed = a.seed;
        write_manifest(out, "verify", args, Vec::new(), &cfg)?;
    }
    let report = verify::run_all(a.seed, a.corrupt_grad.as_deref());
    for o in &report {
        println!("{o}");
    }
    let failed: Vec<&str> = report.iter().filter(|o| !o.passed).map(|o| o.id.as_str()).collect();
    println!("{} checks, {} failed", report.len(), failed.len());
    if let Some(out) = &a.out {
        let text: String = report.iter().map(|o| format!("{o}\n")).collect();
        write(&out.join("verify.txt"), text)?;
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Verification(failed.join(", ")))
    }
}

pub fn cmd_replay(a: &ReplayArgs) -> Result<()> {
    let text = fs::read_to_string(&a.manifest).map_err(|e| Error::io(&a.manifest, e))?;
    let manifest = RunManifest::parse(&text)?;
    let mut argv = vec!["igformer".to_string()];
    argv.extend(manifest.args.iter().cloned());
    let mut cli = Cli::try_parse_from(&argv).map_err(|e| Error::Config(format!("manifest arguments: {e}")))?;
    let out = a.out.clone();
    let mut args = manifest.args.clone();
    if let Some(out) = &out {
        redirect(&mut cli.command, out.clone())?;
        replace_out_arg(&mut args, out);
    }
    if matches!(cli.command, Command::Replay(_)) {
        return Err(Error::Config("a replay manifest cannot record another replay".into()));
    }
    execute(cli.command, &args, Some(manifest.config))
}

fn redirect(command: &mut Command, out: PathBuf) -> Result<()> {
    match command {
        Command::Prepare(a) => a.out = out,
        Command::Train(a) => a.out = out,
        Command::Eval(a) => a.out = Some(out),
        Command::InspectGraph(a) => a.out = out,
        Command::Verify(a) => a.out = Some(out),
        Command::Replay(_) => return Err(Error::Config("cannot redirect a replay".into())),
    }
    Ok(())
}

fn replace_out_arg(args: &mut Vec<String>, out: &Path) {
    let out = out.to_string_lossy().into_owned();
    if let Some(i) = args.iter().position(|a| a == "--out") {
        if i + 1 < args.len() {
            args[i + 1] = out;
            return;
        }
    }
    if let Some(i) = args.iter().position(|a| a.starts_with("--out=")) {
        args[i] = format!("--out={out}");
        return;
    }
    args.push("--out".into());
    args.push(out);
}
