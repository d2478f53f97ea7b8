//! Command-line front end. Exit codes: 0 success, 2 configuration error,
//! 3 data or other error, 4 numeric abort.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::data::{
    binarize_depth, load_dataset, load_depth_png, save_depth_png, save_rgb_png,
    synthesize_dataset, Colormap, DatasetManifest, InputKind, ManifestEntry, PairedSample, Split,
    SynthSpec, DEFAULT_D_MAX, DEFAULT_D_MIN,
};
use crate::error::{Error, Result};
use crate::metrics::{
    attribute_concordance, landmark_eval, recon_metrics, AttributeTable, ImageSet, LandmarkSet,
};
use crate::models::Checkpoint;
use crate::tensor::Tensor;
use crate::training::{generate, TrainConfig, TrainMode, Trainer};

pub const CONFIG_SNAPSHOT: &str = "config.json";

#[derive(Parser, Debug)]
#[command(name = "depth2face", version, about = "Depth-map to RGB face translation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic paired dataset (16-bit depth PNGs, RGB PNGs, manifest).
    SynthData(SynthArgs),
    /// Train a generator (and discriminator) and write a run directory.
    Train(TrainArgs),
    /// Generate RGB faces from depth maps with a trained checkpoint.
    Infer(InferArgs),
    /// Reconstruction metrics between two directories of RGB PNGs.
    EvalRecon(EvalReconArgs),
    /// Attribute concordance between probe outputs on real and generated faces.
    EvalAttrs(EvalAttrsArgs),
    /// Landmark detection accuracy and localization error.
    EvalLandmarks(EvalLandmarksArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ColormapArg {
    Warm,
    Cool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Gan,
    MseOnly,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    Train,
    Test,
    All,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 64)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    blobs_min: usize,
    #[arg(long, default_value_t = 6)]
    blobs_max: usize,
    #[arg(long, value_enum, default_value = "warm")]
    colormap: ColormapArg,
    #[arg(long, default_value_t = 0.6)]
    shading: f64,
}

impl SynthArgs {
    fn spec(&self) -> SynthSpec {
        SynthSpec {
            seed: self.seed,
            count: self.count,
            blobs_min: self.blobs_min,
            blobs_max: self.blobs_max,
            colormap: match self.colormap {
                ColormapArg::Warm => Colormap::Warm,
                ColormapArg::Cool => Colormap::Cool,
            },
            shading: self.shading,
        }
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Run directory; created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Replay a run from its config snapshot; other options are ignored.
    #[arg(long, conflicts_with_all = ["manifest", "resume"])]
    config: Option<PathBuf>,
    /// Dataset manifest; without it a synthetic dataset is generated from --seed.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Size of the generated synthetic dataset.
    #[arg(long, default_value_t = 64)]
    synth_count: usize,
    /// Continue from a checkpoint; its stored configuration is used and only
    /// --steps, --checkpoint-every and --deterministic may change.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Train on thresholded foreground masks instead of depth.
    #[arg(long)]
    binary_maps: bool,
    #[arg(long)]
    binary_threshold: Option<f32>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    k_disc: Option<usize>,
    /// Divides every layer width; a power of two in 1..=32.
    #[arg(long)]
    width_divisor: Option<usize>,
    #[arg(long)]
    checkpoint_every: Option<u64>,
    #[arg(long)]
    log_every: Option<u64>,
    /// Write 0 in the log's wall-time column so logs are byte-identical.
    #[arg(long)]
    deterministic: bool,
}

/// Everything needed to reproduce a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub data: DataSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resume: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    Manifest { path: PathBuf },
    Synth(SynthSpec),
}

impl TrainArgs {
    fn hyperparameters_given(&self) -> Vec<&'static str> {
        let mut given = Vec::new();
        let mut note = |set: bool, name: &'static str| {
            if set {
                given.push(name);
            }
        };
        note(self.mode.is_some(), "--mode");
        note(self.binary_maps, "--binary-maps");
        note(self.binary_threshold.is_some(), "--binary-threshold");
        note(self.lambda.is_some(), "--lambda");
        note(self.lr.is_some(), "--lr");
        note(self.beta1.is_some(), "--beta1");
        note(self.beta2.is_some(), "--beta2");
        note(self.batch_size.is_some(), "--batch-size");
        note(self.seed.is_some(), "--seed");
        note(self.k_disc.is_some(), "--k-disc");
        note(self.width_divisor.is_some(), "--width-divisor");
        note(self.log_every.is_some(), "--log-every");
        given
    }

    fn apply(&self, cfg: &mut TrainConfig) {
        if let Some(m) = self.mode {
            cfg.mode = match m {
                ModeArg::Gan => TrainMode::Gan,
                ModeArg::MseOnly => TrainMode::MseOnly,
            };
        }
        if self.binary_maps {
            cfg.input_kind = InputKind::Binary;
        }
        macro_rules! set {
            ($($f:ident),*) => {$(if let Some(v) = self.$f { cfg.$f = v; })*};
        }
        set!(binary_threshold, lambda, lr, beta1, beta2, batch_size, seed, k_disc, width_divisor, log_every);
        if let Some(v) = self.steps {
            cfg.total_steps = v;
        }
        if let Some(v) = self.checkpoint_every {
            cfg.checkpoint_every = v;
        }
        if self.deterministic {
            cfg.deterministic = true;
        }
    }

    fn run_config(&self) -> Result<RunConfig> {
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            return serde_json::from_str(&text)
                .map_err(|e| Error::config(format!("{}: bad config snapshot: {e}", path.display())));
        }
        let mut train = TrainConfig::default();
        if let Some(ck) = &self.resume {
            let given = self.hyperparameters_given();
            if !given.is_empty() {
                return Err(Error::config(format!(
                    "{} cannot be changed when resuming; the checkpoint's settings are used",
                    given.join(", ")
                )));
            }
            train = stored_config(&Checkpoint::load(ck)?.config)?;
        }
        self.apply(&mut train);
        let data = match &self.manifest {
            Some(p) => DataSource::Manifest { path: p.clone() },
            None => DataSource::Synth(SynthSpec {
                seed: train.seed,
                count: self.synth_count,
                ..SynthSpec::default()
            }),
        };
        Ok(RunConfig {
            train,
            data,
            resume: self.resume.clone(),
        })
    }
}

fn stored_config(config: &serde_json::Value) -> Result<TrainConfig> {
    serde_json::from_value(config.clone())
        .map_err(|e| Error::Checkpoint(format!("checkpoint has no usable training config: {e}")))
}

#[derive(Args, Debug)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, conflicts_with = "depth", required_unless_present = "depth")]
    manifest: Option<PathBuf>,
    /// Which manifest entries to translate.
    #[arg(long, value_enum, default_value = "all")]
    split: SplitArg,
    /// 16-bit depth PNGs.
    #[arg(long, num_args = 1..)]
    depth: Vec<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_D_MIN)]
    d_min: f32,
    #[arg(long, default_value_t = DEFAULT_D_MAX)]
    d_max: f32,
    #[arg(long)]
    out: PathBuf,
    /// Threshold inputs to foreground masks; implied for checkpoints trained
    /// on binary maps.
    #[arg(long)]
    binarize: bool,
}

#[derive(Args, Debug)]
struct EvalReconArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Write the JSON report here instead of standard output.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalAttrsArgs {
    /// Probe predictions on the real faces (reference).
    #[arg(long)]
    real: PathBuf,
    /// Probe predictions on the generated faces.
    #[arg(long)]
    generated: PathBuf,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalLandmarksArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    json: Option<PathBuf>,
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::SynthData(a) => cmd_synth_data(&a.spec(), &a.out),
        Command::Train(a) => {
            let cfg = a.run_config()?;
            cmd_train(&cfg, &a.out)
        }
        Command::Infer(a) => cmd_infer(&a),
        Command::EvalRecon(a) => cmd_eval_recon(&a.pred, &a.gt, a.json.as_deref()),
        Command::EvalAttrs(a) => {
            let report = attribute_concordance(
                &AttributeTable::read_csv(&a.real)?,
                &AttributeTable::read_csv(&a.generated)?,
            )?;
            emit(&report.to_table(), &report, a.json.as_deref())
        }
        Command::EvalLandmarks(a) => {
            let report =
                landmark_eval(&LandmarkSet::read_csv(&a.pred)?, &LandmarkSet::read_csv(&a.gt)?)?;
            emit(&report.to_table(), &report, a.json.as_deref())
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn emit<T: Serialize>(table: &str, report: &T, json: Option<&Path>) -> Result<()> {
    print!("{table}");
    match json {
        Some(p) => write_json(p, report),
        None => {
            println!(
                "{}",
                serde_json::to_string_pretty(report).expect("report serializes")
            );
            Ok(())
        }
    }
}

pub fn cmd_synth_data(spec: &SynthSpec, out: &Path) -> Result<()> {
    let samples = synthesize_dataset(spec)?;
    for sub in ["depth", "rgb"] {
        create_dir(&out.join(sub))?;
    }
    let mut entries = Vec::with_capacity(samples.len());
    for s in &samples {
        let depth = PathBuf::from("depth").join(format!("{}.png", s.id));
        let rgb = PathBuf::from("rgb").join(format!("{}.png", s.id));
        save_depth_png(&out.join(&depth), &s.depth, DEFAULT_D_MIN, DEFAULT_D_MAX)?;
        save_rgb_png(&out.join(&rgb), &s.rgb, 0)?;
        entries.push(ManifestEntry {
            id: Some(s.id.clone()),
            depth,
            rgb,
            split: s.split,
        });
    }
    let manifest = DatasetManifest {
        d_min: DEFAULT_D_MIN,
        d_max: DEFAULT_D_MAX,
        entries,
        base_dir: out.to_path_buf(),
    };
    manifest.save(&out.join("manifest.json"))?;
    println!("wrote {} pairs to {}", samples.len(), out.display());
    Ok(())
}

fn training_samples(source: &DataSource) -> Result<Vec<PairedSample>> {
    let all = match source {
        DataSource::Manifest { path } => load_dataset(&DatasetManifest::load(path)?)?,
        DataSource::Synth(spec) => synthesize_dataset(spec)?,
    };
    let train: Vec<PairedSample> = all.into_iter().filter(|s| s.split == Split::Train).collect();
    if train.is_empty() {
        return Err(Error::config("dataset has no training-split samples"));
    }
    Ok(train)
}

/// Validates the whole configuration before loading data or building
/// networks, writes the snapshot, then trains.
pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<()> {
    cfg.train.validate()?;
    if let DataSource::Synth(spec) = &cfg.data {
        spec.validate()?;
    }
    let mut trainer = match &cfg.resume {
        Some(path) => {
            let mut t = Trainer::from_checkpoint(Checkpoint::load(path)?)?;
            t.config.total_steps = cfg.train.total_steps;
            t.config.checkpoint_every = cfg.train.checkpoint_every;
            t.config.deterministic = cfg.train.deterministic;
            if t.config != cfg.train {
                return Err(Error::config(
                    "resume settings disagree with the checkpoint's stored configuration",
                ));
            }
            t
        }
        None => Trainer::new(cfg.train.clone())?,
    };
    let samples = training_samples(&cfg.data)?;
    create_dir(out)?;
    write_json(&out.join(CONFIG_SNAPSHOT), cfg)?;
    let start = trainer.step;
    let log = trainer.fit(&samples, Some(out))?;
    match log.records().last() {
        Some(r) => println!(
            "steps {}..{}: g_total {:.6} g_mse {:.6}{}",
            start + 1,
            r.step,
            r.g_total,
            r.g_mse,
            r.d_loss.map(|d| format!(" d_loss {d:.6}")).unwrap_or_default()
        ),
        None => println!("no steps run; wrote initial checkpoint"),
    }
    Ok(())
}

fn cmd_infer(a: &InferArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let mut generator = ck.generator;
    if !generator.running_stats_ready() {
        return Err(Error::State(
            "checkpoint generator has no batch-norm running statistics; it was never trained".into(),
        ));
    }
    let stored = stored_config(&ck.config).ok();
    let trained_binary = stored.as_ref().map(|c| c.input_kind) == Some(InputKind::Binary);
    let threshold = stored.map(|c| c.binary_threshold).unwrap_or_default();

    let mut inputs: Vec<(String, Tensor)> = Vec::new();
    if let Some(mpath) = &a.manifest {
        let manifest = DatasetManifest::load(mpath)?;
        for e in &manifest.entries {
            let keep = match a.split {
                SplitArg::All => true,
                SplitArg::Train => e.split == Split::Train,
                SplitArg::Test => e.split == Split::Test,
            };
            if keep {
                let t = load_depth_png(&manifest.resolve(&e.depth), manifest.d_min, manifest.d_max)?;
                inputs.push((e.id(), t));
            }
        }
    } else {
        for p in &a.depth {
            let id = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            inputs.push((id, load_depth_png(p, a.d_min, a.d_max)?));
        }
    }
    if inputs.is_empty() {
        return Err(Error::config("no inputs selected"));
    }
    let refs: Vec<&Tensor> = inputs.iter().map(|(_, t)| t).collect();
    let mut batch = Tensor::stack(&refs)?;
    if a.binarize || trained_binary {
        batch = binarize_depth(&batch, threshold);
    }
    let rgb = generate(&mut generator, &batch)?;
    create_dir(&a.out)?;
    for (i, (id, _)) in inputs.iter().enumerate() {
        save_rgb_png(&a.out.join(format!("{id}.png")), &rgb, i)?;
    }
    println!("wrote {} images to {}", inputs.len(), a.out.display());
    Ok(())
}

fn png_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut files = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("png") {
            if let Some(stem) = path.file_stem() {
                files.insert(stem.to_string_lossy().into_owned(), path);
            }
        }
    }
    Ok(files)
}

fn read_rgb8(path: &Path) -> Result<(u32, u32, Vec<u8>)> {
    let img = image::open(path)
        .map_err(|e| Error::data(path, format!("cannot decode image: {e}")))?
        .to_rgb8();
    Ok((img.width(), img.height(), img.into_raw()))
}

fn cmd_eval_recon(pred_dir: &Path, gt_dir: &Path, json: Option<&Path>) -> Result<()> {
    let pred = png_files(pred_dir)?;
    let gt = png_files(gt_dir)?;
    crate::metrics::check_same_ids("prediction and ground-truth directories", pred.keys(), gt.keys())?;
    if gt.is_empty() {
        return Err(Error::data(gt_dir, "no PNG files"));
    }
    let (mut p_imgs, mut g_imgs) = (Vec::new(), Vec::new());
    for (id, gpath) in &gt {
        let (gw, gh, g) = read_rgb8(gpath)?;
        let (pw, ph, p) = read_rgb8(&pred[id])?;
        if (gw, gh) != (pw, ph) {
            return Err(Error::shape(format!(
                "`{id}`: prediction is {pw}x{ph}, ground truth {gw}x{gh}"
            )));
        }
        p_imgs.push(p);
        g_imgs.push(g);
    }
    let report = recon_metrics(&ImageSet::from_u8(&p_imgs)?, &ImageSet::from_u8(&g_imgs)?)?;
    emit(&report.to_table(), &report, json)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapshot_round_trips() {
        let cfg = RunConfig {
            train: TrainConfig::default(),
            data: DataSource::Synth(SynthSpec::default()),
            resume: None,
        };
        let text = serde_json::to_string(&cfg).unwrap();
        assert!(text.contains("\"source\":\"synth\""));
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), cfg);
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run(["depth2face", "train"]), 2);
        assert_eq!(run(["depth2face", "no-such-command"]), 2);
    }

    #[test]
    fn invalid_values_rejected_before_compute() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let out_s = out.to_str().unwrap();
        assert_eq!(run(["depth2face", "train", "--out", out_s, "--batch-size", "0"]), 2);
        assert_eq!(run(["depth2face", "train", "--out", out_s, "--lambda", "-1"]), 2);
        assert!(!out.exists());
    }
}
