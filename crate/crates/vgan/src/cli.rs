//! Command-line interface: argument definitions and the six subcommands.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use vgan_core::data::{remap_labels, split_dataset, LabelVolume, RegionMaps};
use vgan_core::metrics::{score_maps, RegionScore};
use vgan_core::training::{train_loop, LossReport, TrainObserver, Trainer};

use crate::dataset::{load_dataset, synth_dataset, write_dataset};
use crate::inference::segment;
use crate::reports::{write_scores, MetricLog};
use crate::run::{load_generator, save_checkpoint, DataSource, RunConfig, RunManifest, RunStatus, RunSummary, CONFIG_FILE};
use crate::slices::{gray_slice, label_slice, write_slices};
use crate::volume::{inspect_volume, load_image, load_labels, load_volume, save_image, save_labels, Dtype, VolumeData};

pub const SEED_ENV: &str = "VGAN_SEED";
pub const RUN_MANIFEST: &str = "run.json";
pub const METRIC_LOG: &str = "metrics.csv";

#[derive(Debug, Parser)]
#[command(name = "vgan", version, about = "Transformer-GAN brain tumor segmentation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compare analytic gradients with central differences at 64-bit.
    Gradcheck(GradcheckArgs),
    /// Write a synthetic phantom dataset and its manifest.
    Synth(SynthArgs),
    /// Train the generator and critic.
    Train(TrainArgs),
    /// Segment image volumes with one checkpoint or an ensemble.
    Infer(InferArgs),
    /// Score predicted label volumes against ground truth.
    Eval(EvalArgs),
    /// Write slices of a volume as PPM images.
    ExportSlices(ExportArgs),
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// An operation name or `all`.
    #[arg(default_value = "all")]
    pub scope: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = vgan_core::gradcheck::TOLERANCE)]
    pub tolerance: f64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// `D,H,W`.
    #[arg(long, default_value = "32,32,32", value_parser = parse_extents)]
    pub extents: [usize; 3],
    /// `HGG:LGG` weights.
    #[arg(long, default_value = "4:1", value_parser = parse_ratio)]
    pub grade_ratio: (u32, u32),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON run configuration.
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Built-in configuration: `desk` or `default`.
    #[arg(long)]
    pub preset: Option<String>,
    /// Print the resolved configuration as JSON and exit.
    #[arg(long)]
    pub print_defaults: bool,
    /// Output directory for the run manifest, metric log and checkpoints.
    #[arg(long, required_unless_present = "print_defaults")]
    pub out: Option<PathBuf>,
    /// Train on this dataset manifest instead of the configured source.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub adversarial_weight: Option<f64>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Leave timestamps out of the run manifest so reruns compare equal.
    #[arg(long)]
    pub normalize_timestamps: bool,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Checkpoint directory, or a run directory (its last checkpoint is used).
    #[arg(long, required_unless_present = "ensemble")]
    pub checkpoint: Option<PathBuf>,
    /// Several checkpoints whose probability maps are averaged.
    #[arg(long, num_args = 1.., conflicts_with = "checkpoint")]
    pub ensemble: Vec<PathBuf>,
    /// Image volumes, or directories of them.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Enhancing-tumor threshold; defaults to the checkpoint's setting.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Also write the averaged region probabilities.
    #[arg(long)]
    pub probabilities: bool,
    /// Also write the middle axial slice of each label volume.
    #[arg(long)]
    pub slices: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of predicted label volumes.
    #[arg(long)]
    pub pred: PathBuf,
    /// Directory of ground-truth label volumes with the same file names.
    #[arg(long)]
    pub gt: PathBuf,
    /// Score CSV path; printed to stdout if omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub axis: usize,
    /// Slice indices; the middle slice if omitted.
    #[arg(long, value_delimiter = ',')]
    pub indices: Vec<usize>,
    /// Channel of a float volume to render.
    #[arg(long, default_value_t = 0)]
    pub channel: usize,
}

fn parse_extents(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<&str> = s.split([',', 'x']).collect();
    let parsed: Result<Vec<usize>, _> = parts.iter().map(|p| p.trim().parse::<usize>()).collect();
    match parsed {
        Ok(v) if v.len() == 3 => Ok([v[0], v[1], v[2]]),
        _ => Err(format!("expected three extents like 32,32,32, got {s:?}")),
    }
}

fn parse_ratio(s: &str) -> Result<(u32, u32), String> {
    let err = || format!("expected HGG:LGG weights like 4:1, got {s:?}");
    let (a, b) = s.split_once(':').ok_or_else(err)?;
    let a = a.trim().parse().map_err(|_| err())?;
    let b = b.trim().parse().map_err(|_| err())?;
    if a == 0 && b == 0 {
        return Err(err());
    }
    Ok((a, b))
}

/// A failed command: usage/configuration problems exit with 2, everything
/// else with 1.
#[derive(Debug)]
pub enum CliError {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(e) | CliError::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<vgan_core::Error> for CliError {
    fn from(e: vgan_core::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

impl From<crate::FormatError> for CliError {
    fn from(e: crate::FormatError) -> Self {
        CliError::Runtime(e.into())
    }
}

fn usage(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Usage(e.into())
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Gradcheck(a) => gradcheck(a),
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Infer(a) => infer(a),
        Command::Eval(a) => eval(a),
        Command::ExportSlices(a) => export_slices(a),
    }
}

fn gradcheck(a: GradcheckArgs) -> Result<(), CliError> {
    let rows = match vgan_core::gradcheck::run(&a.scope, a.seed) {
        Ok(rows) => rows,
        Err(e @ vgan_core::Error::Config(_)) => return Err(usage(e)),
        Err(e) => return Err(CliError::Runtime(e.into())),
    };
    println!("{:<24} {:>12} {:>8}  result", "op", "max_rel_err", "coords");
    let mut failures = 0;
    for (name, r) in &rows {
        let ok = r.passed(a.tolerance);
        failures += usize::from(!ok);
        println!(
            "{name:<24} {:>12.3e} {:>8}  {}",
            r.max_rel_error,
            r.coordinates,
            if ok { "pass" } else { "FAIL" }
        );
    }
    println!("{} ops, {failures} failures (tolerance {:e})", rows.len(), a.tolerance);
    if failures > 0 {
        return Err(CliError::Runtime(anyhow!("{failures} gradient checks failed")));
    }
    Ok(())
}

fn synth(a: SynthArgs) -> Result<(), CliError> {
    if a.count == 0 {
        return Err(usage(anyhow!("--count must be positive")));
    }
    let samples = synth_dataset(a.count, a.seed, a.extents, a.grade_ratio).map_err(usage)?;
    let manifest = write_dataset(&a.out, &samples)?;
    println!("{}", manifest.display());
    Ok(())
}

/// The configuration a `train` invocation runs with, and where its seed
/// came from.
pub fn resolve_run_config(a: &TrainArgs, env_seed: Option<&str>) -> Result<(RunConfig, &'static str), CliError> {
    let mut cfg = match (&a.config, &a.preset) {
        (Some(path), _) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))
                .map_err(usage)?;
            serde_json::from_str::<RunConfig>(&text)
                .with_context(|| format!("parsing config {}", path.display()))
                .map_err(usage)?
        }
        (None, Some(name)) => RunConfig::preset(name)
            .ok_or_else(|| usage(anyhow!("unknown preset {name:?}; expected desk or default")))?,
        (None, None) if a.print_defaults => RunConfig::default(),
        (None, None) => return Err(usage(anyhow!("train needs --config FILE or --preset NAME"))),
    };
    let mut source = "config";
    if let Some(s) = env_seed {
        cfg.training.seed = s
            .trim()
            .parse()
            .map_err(|_| usage(anyhow!("{SEED_ENV}={s:?} is not an unsigned integer")))?;
        source = SEED_ENV;
    }
    if let Some(seed) = a.seed {
        cfg.training.seed = seed;
        source = "flag";
    }
    let t = &mut cfg.training;
    if let Some(v) = a.lr {
        t.adam.lr = v;
    }
    if let Some(v) = a.epochs {
        t.epochs = v;
    }
    if let Some(v) = a.max_steps {
        t.max_steps = Some(v);
    }
    if let Some(v) = a.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = a.adversarial_weight {
        t.adversarial_weight = v;
    }
    if let Some(v) = a.checkpoint_every {
        cfg.checkpoint_every = v;
    }
    if let Some(path) = &a.data {
        let split_ratio = match &cfg.data {
            DataSource::Manifest { split_ratio, .. } => *split_ratio,
            DataSource::Phantoms { .. } => None,
        };
        cfg.data = DataSource::Manifest {
            path: path.clone(),
            split_ratio,
        };
    }
    cfg.validate().map_err(usage)?;
    Ok((cfg, source))
}

fn timestamp(normalize: bool) -> Option<String> {
    (!normalize).then(|| chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true))
}

struct RunObserver<'a> {
    out: &'a Path,
    log: MetricLog,
    manifest: &'a mut RunManifest,
    checkpoint_every: usize,
    last_saved: Option<u64>,
}

impl RunObserver<'_> {
    fn checkpoint(&mut self, trainer: &Trainer<f32>) -> vgan_core::Result<()> {
        let rel = PathBuf::from("checkpoints").join(format!("step-{:06}", trainer.steps()));
        save_checkpoint(&self.out.join(&rel), trainer).map_err(|e| vgan_core::Error::Observer(format!("{e:#}")))?;
        self.manifest.checkpoints.push(rel);
        self.last_saved = Some(trainer.steps());
        Ok(())
    }
}

impl TrainObserver<f32> for RunObserver<'_> {
    fn on_step(&mut self, report: &LossReport) -> vgan_core::Result<()> {
        self.log
            .append(report)
            .map_err(|e| vgan_core::Error::Observer(format!("writing metric log: {e}")))?;
        if report.step.is_multiple_of(25) {
            log::info!(
                "step {} loss_G {:.4} loss_D {:.4} dice {:.4}",
                report.step,
                report.loss_g,
                report.loss_d,
                report.dice
            );
        }
        Ok(())
    }

    fn on_epoch(&mut self, epoch: usize, trainer: &Trainer<f32>) -> vgan_core::Result<()> {
        if (epoch + 1).is_multiple_of(self.checkpoint_every) {
            self.checkpoint(trainer)?;
        }
        Ok(())
    }
}

fn train(a: TrainArgs) -> Result<(), CliError> {
    let env_seed = std::env::var(SEED_ENV).ok();
    let (cfg, seed_source) = resolve_run_config(&a, env_seed.as_deref())?;
    if a.print_defaults {
        print!("{}", cfg.to_json());
        return Ok(());
    }
    if seed_source == SEED_ENV {
        log::info!("seed {} taken from {SEED_ENV}", cfg.training.seed);
    }
    let out = a.out.clone().expect("clap requires --out");
    let (train_set, val_set) = match &cfg.data {
        DataSource::Phantoms {
            count,
            seed,
            extents,
            grade_ratio,
        } => (synth_dataset(*count, *seed, *extents, (grade_ratio[0], grade_ratio[1]))?, Vec::new()),
        DataSource::Manifest { path, split_ratio } => {
            let all = load_dataset(path)?;
            match split_ratio {
                Some(r) => split_dataset(all, *r, cfg.training.seed).map_err(anyhow::Error::from)?,
                None => (all, Vec::new()),
            }
        }
    };
    log::info!("{} training and {} validation cases", train_set.len(), val_set.len());

    let mut trainer = Trainer::<f32>::new(cfg.training.clone()).map_err(usage)?;
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let manifest_path = out.join(RUN_MANIFEST);
    let mut manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        seed: cfg.training.seed,
        seed_source: seed_source.to_string(),
        started: timestamp(a.normalize_timestamps),
        finished: None,
        status: RunStatus::Running,
        metric_log: PathBuf::from(METRIC_LOG),
        checkpoints: Vec::new(),
        summary: None,
    };
    manifest.save(&manifest_path)?;

    let log = MetricLog::create(&out.join(METRIC_LOG), &cfg.training).context("creating metric log")?;
    let mut observer = RunObserver {
        out: &out,
        log,
        manifest: &mut manifest,
        checkpoint_every: cfg.checkpoint_every,
        last_saved: None,
    };
    let result = train_loop(&mut trainer, &train_set, &mut observer).and_then(|summary| {
        if observer.last_saved != Some(trainer.steps()) {
            observer.checkpoint(&trainer)?;
        }
        Ok(summary)
    });
    manifest.finished = timestamp(a.normalize_timestamps);
    let summary = match result {
        Ok(s) => s,
        Err(e) => {
            manifest.status = RunStatus::Failed;
            manifest.save(&manifest_path)?;
            return Err(CliError::Runtime(anyhow::Error::from(e).context("training failed")));
        }
    };
    manifest.status = RunStatus::Completed;
    manifest.summary = Some(RunSummary::from(&summary));
    if !val_set.is_empty() {
        let mut cases = Vec::with_capacity(val_set.len());
        for s in &val_set {
            let pred = trainer.predict(&with_batch_axis(&s.image)?)?;
            let pred = RegionMaps::new(drop_batch_axis(pred)?)?;
            cases.push((s.id.clone(), score_maps(&pred, &remap_labels::<f32>(&s.labels))?));
        }
        write_scores(&out.join("val_scores.csv"), &cases)?;
    }
    manifest.save(&manifest_path)?;
    println!("{}", manifest_path.display());
    Ok(())
}

fn with_batch_axis(t: &vgan_core::Tensor<f32>) -> anyhow::Result<vgan_core::Tensor<f32>> {
    let mut shape = vec![1];
    shape.extend_from_slice(t.shape());
    Ok(t.clone().reshape(&shape)?)
}

fn drop_batch_axis(t: vgan_core::Tensor<f32>) -> anyhow::Result<vgan_core::Tensor<f32>> {
    let shape = t.shape()[1..].to_vec();
    Ok(t.reshape(&shape)?)
}

/// A checkpoint directory, or the newest checkpoint of a run directory.
pub fn resolve_checkpoint(path: &Path) -> anyhow::Result<PathBuf> {
    if path.join(CONFIG_FILE).is_file() {
        return Ok(path.to_path_buf());
    }
    let run = path.join(RUN_MANIFEST);
    if run.is_file() {
        let m = RunManifest::load(&run)?;
        let last = m
            .checkpoints
            .last()
            .ok_or_else(|| anyhow!("run {} has no checkpoints", path.display()))?;
        return Ok(path.join(last));
    }
    Err(anyhow!("{} is neither a checkpoint nor a run directory", path.display()))
}

/// Files directly under `path` with a `.vvol` extension, sorted; or `path`
/// itself if it is a file.
fn volume_files(path: &Path) -> anyhow::Result<Vec<PathBuf>> {
    if !path.is_dir() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)
        .with_context(|| format!("listing {}", path.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    files.retain(|p| p.extension().is_some_and(|e| e == "vvol") && !is_probability_file(p));
    files.sort();
    Ok(files)
}

fn is_probability_file(p: &Path) -> bool {
    p.file_name().is_some_and(|n| n.to_string_lossy().ends_with(".probs.vvol"))
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn infer(a: InferArgs) -> Result<(), CliError> {
    let dirs: Vec<PathBuf> = a.checkpoint.iter().chain(&a.ensemble).cloned().collect();
    let models = dirs
        .iter()
        .map(|d| resolve_checkpoint(d).and_then(|d| load_generator(&d)))
        .collect::<anyhow::Result<Vec<_>>>()
        .map_err(usage)?;
    let threshold = a.threshold.unwrap_or(models[0].config.threshold);
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(usage(anyhow!("--threshold {threshold} outside (0, 1)")));
    }
    let mut inputs = Vec::new();
    for p in &a.inputs {
        inputs.extend(volume_files(p)?);
    }
    if inputs.is_empty() {
        return Err(usage(anyhow!("no .vvol inputs found")));
    }
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    for input in &inputs {
        let image = load_image(input).with_context(|| format!("loading {}", input.display()))?;
        let (maps, labels) = segment(&models, &image, threshold)?;
        let name = stem(input);
        save_labels(&a.out.join(format!("{name}.vvol")), &labels.labels)?;
        if a.probabilities {
            save_image(&a.out.join(format!("{name}.probs.vvol")), maps.tensor())?;
        }
        if a.slices {
            let mid = labels.labels.extents()[0] / 2;
            write_slices(&a.out, &name, 0, &[mid], |i| label_slice(&labels.labels, 0, i))?;
        }
        log::info!("{name}: {} nesting fixes", labels.nesting_fixes);
    }
    println!("{} volumes written to {}", inputs.len(), a.out.display());
    Ok(())
}

/// Per-case region scores for every ground-truth volume in `gt`, matched by
/// file name in `pred`.
pub fn score_directories(pred: &Path, gt: &Path) -> anyhow::Result<Vec<(String, [RegionScore; 3])>> {
    let gt_files = volume_files(gt)?;
    anyhow::ensure!(!gt_files.is_empty(), "no ground-truth volumes in {}", gt.display());
    gt_files
        .iter()
        .map(|g| {
            let name = g.file_name().expect("listed file");
            let p = pred.join(name);
            let pl: LabelVolume = load_labels(&p).with_context(|| format!("loading prediction {}", p.display()))?;
            let gl = load_labels(g).with_context(|| format!("loading {}", g.display()))?;
            let scores = score_maps(&remap_labels::<f32>(&pl), &remap_labels::<f32>(&gl))
                .with_context(|| format!("scoring {}", name.to_string_lossy()))?;
            Ok((stem(g), scores))
        })
        .collect()
}

fn eval(a: EvalArgs) -> Result<(), CliError> {
    let cases = score_directories(&a.pred, &a.gt)?;
    match &a.out {
        Some(path) => {
            write_scores(path, &cases)?;
            println!("{}", path.display());
        }
        None => print!("{}", crate::reports::score_csv(&cases)),
    }
    Ok(())
}

fn export_slices(a: ExportArgs) -> Result<(), CliError> {
    let header = inspect_volume(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    if a.axis > 2 {
        return Err(usage(anyhow!("--axis must be 0, 1 or 2")));
    }
    let indices = if a.indices.is_empty() {
        vec![header.extents[a.axis] / 2]
    } else {
        a.indices.clone()
    };
    if let Some(&bad) = indices.iter().find(|&&i| i >= header.extents[a.axis]) {
        return Err(usage(anyhow!(
            "slice {bad} out of range for axis {} of extent {}",
            a.axis,
            header.extents[a.axis]
        )));
    }
    let name = stem(&a.input);
    let volume = load_volume(&a.input)?;
    let written = match (header.dtype, volume.data) {
        (Dtype::U8, _) => {
            let labels = load_labels(&a.input)?;
            write_slices(&a.out, &name, a.axis, &indices, |i| label_slice(&labels, a.axis, i))?
        }
        (Dtype::F32, VolumeData::F32(data)) => {
            if a.channel >= header.channels {
                return Err(usage(anyhow!("--channel {} but the volume has {}", a.channel, header.channels)));
            }
            let n = header.voxels();
            let channel = &data[a.channel * n..(a.channel + 1) * n];
            write_slices(&a.out, &name, a.axis, &indices, |i| gray_slice(channel, header.extents, a.axis, i))?
        }
        (Dtype::F32, VolumeData::U8(_)) => unreachable!("decoded data matches its header"),
    };
    for p in written {
        println!("{}", p.display());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(extra: &[&str]) -> TrainArgs {
        let mut argv = vec!["vgan", "train"];
        argv.extend_from_slice(extra);
        match Cli::parse_from(argv).command {
            Command::Train(a) => a,
            _ => unreachable!(),
        }
    }

    #[test]
    fn extents_and_ratio_parse() {
        assert_eq!(parse_extents("16,24,32"), Ok([16, 24, 32]));
        assert_eq!(parse_extents("16x24x32"), Ok([16, 24, 32]));
        assert!(parse_extents("16,24").is_err());
        assert_eq!(parse_ratio("4:1"), Ok((4, 1)));
        assert!(parse_ratio("0:0").is_err());
    }

    #[test]
    fn flag_beats_env_beats_file() {
        let a = args(&["--preset", "desk", "--out", "x"]);
        let (cfg, src) = resolve_run_config(&a, Some("7")).unwrap();
        assert_eq!((cfg.training.seed, src), (7, SEED_ENV));
        let a = args(&["--preset", "desk", "--out", "x", "--seed", "9"]);
        let (cfg, src) = resolve_run_config(&a, Some("7")).unwrap();
        assert_eq!((cfg.training.seed, src), (9, "flag"));
    }

    #[test]
    fn bad_inputs_are_usage_errors() {
        let a = args(&["--out", "x"]);
        assert_eq!(resolve_run_config(&a, None).unwrap_err().exit_code(), 2);
        let a = args(&["--preset", "desk", "--out", "x"]);
        assert_eq!(resolve_run_config(&a, Some("seven")).unwrap_err().exit_code(), 2);
        let a = args(&["--preset", "desk", "--out", "x", "--lr=-1"]);
        assert_eq!(resolve_run_config(&a, None).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
        let names: Vec<String> = Cli::command().get_subcommands().map(|c| c.get_name().to_string()).collect();
        assert_eq!(names, ["gradcheck", "synth", "train", "infer", "eval", "export-slices"]);
    }
}
