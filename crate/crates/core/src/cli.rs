//! The `dnetpad` command line: argument definitions, layered settings, and one
//! runner per subcommand.

use std::collections::BTreeMap;
use std::fmt::{self, Display};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
use crate::error::Error;
use crate::explain::{self, TsneParams};
use crate::freq::{self, FilterMode, Manipulation, Noise};
use crate::metrics::{self, EvalReport};
use crate::model::{Model, ModelConfig, PA_CLASS};
use crate::pnm::{self, GrayImage};
use crate::synthdata::{self, DatasetSpec, IrisClass, Sample};
use crate::tensor::Tensor;
use crate::train::{self, TrainConfig};

pub const OUT_ENV: &str = "DNETPAD_OUT";
pub const DEFAULT_OUT: &str = "dnetpad_out";

#[derive(Debug, Parser)]
#[command(name = "dnetpad", version, about = "Iris presentation-attack detection with a small DenseNet")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic train/test iris dataset.
    GenData(GenDataArgs),
    /// Train a model on `<data>/train`.
    Train(TrainArgs),
    /// Score a labelled image tree and write the evaluation report.
    Eval(EvalArgs),
    /// Grad-CAM heatmaps per sample and per class.
    Gradcam(GradcamArgs),
    /// t-SNE embeddings of dense-block features.
    Tsne(TsneArgs),
    /// TDR under low-pass filtering at a list of cutoffs.
    FreqSweep(FreqSweepArgs),
    /// TDR and relative decrease under filtering and noise.
    Robustness(RobustnessArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// key=value config file; flags override its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (default: $DNETPAD_OUT, else ./dnetpad_out).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads for per-image stages (default: 1).
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Number of training images (default: 1200).
    #[arg(long)]
    pub train: Option<usize>,
    /// Number of test images (default: 400).
    #[arg(long)]
    pub test: Option<usize>,
    /// Dataset seed (default: 42).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Side of the generated eye images in pixels (default: 96).
    #[arg(long)]
    pub image_size: Option<usize>,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Network input side in pixels (default: 64).
    #[arg(long)]
    pub input_size: Option<usize>,
    /// Channels of the stem convolution (default: 16).
    #[arg(long)]
    pub stem_filters: Option<usize>,
    /// Channels added by each dense layer (default: 8).
    #[arg(long)]
    pub growth_rate: Option<usize>,
    /// Dense layers per block, comma separated (default: 2,2,2,2).
    #[arg(long)]
    pub blocks: Option<String>,
    /// Transition channel compression (default: 0.5).
    #[arg(long)]
    pub compression: Option<f64>,
    /// Bottleneck width as a multiple of the growth rate (default: 2).
    #[arg(long)]
    pub bottleneck_factor: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Dataset root written by gen-data (required).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Training epochs (default: 50).
    #[arg(long)]
    pub epochs: Option<usize>,
    /// SGD learning rate (default: 0.005).
    #[arg(long)]
    pub lr: Option<f64>,
    /// SGD momentum (default: 0.9).
    #[arg(long)]
    pub momentum: Option<f64>,
    /// Mini-batch size (default: 20).
    #[arg(long)]
    pub batch: Option<usize>,
    /// Seed for initialization and shuffling (default: 42).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Save a checkpoint every N epochs, 0 for final only (default: 0).
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Trained model checkpoint (required).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Labelled image tree: <class>/<image> files, optionally below split folders (required).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Only read images below a folder of this name, e.g. test (default: all).
    #[arg(long)]
    pub split: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub input: InputArgs,
    /// Target false detection rate for the threshold (default: 0.002).
    #[arg(long)]
    pub fdr: Option<f64>,
    /// Histogram bins over [0, 1] (default: 20).
    #[arg(long)]
    pub bins: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GradcamArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub input: InputArgs,
    /// Restrict to one class: bonafide, print, artificial_eye, cosmetic_contact (default: all).
    #[arg(long = "class")]
    pub class: Option<String>,
    /// Write only the per-class average maps.
    #[arg(long)]
    pub average: bool,
    /// Dense block to explain, 0-based (default: last block).
    #[arg(long)]
    pub block: Option<usize>,
    /// Output class whose logit is explained: 0 bonafide, 1 PA (default: 1).
    #[arg(long)]
    pub target: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TsneArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub input: InputArgs,
    /// Dense blocks to embed, comma separated (default: every block).
    #[arg(long = "tsne-blocks")]
    pub blocks: Option<String>,
    /// Perplexity (default: 30).
    #[arg(long)]
    pub perplexity: Option<f64>,
    /// Gradient-descent iterations (default: 1000).
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Seed for the initial layout (default: 0).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct FreqSweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub input: InputArgs,
    /// Low-pass cutoffs in FFT bins, comma separated, increasing (default: 20,30,50 scaled to the input size).
    #[arg(long)]
    pub cutoffs: Option<String>,
    /// Target false detection rate (default: 0.002).
    #[arg(long)]
    pub fdr: Option<f64>,
}

#[derive(Debug, Args)]
pub struct RobustnessArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub input: InputArgs,
    /// Low-pass cutoffs in FFT bins (default: 20,30,50 scaled to the input size).
    #[arg(long)]
    pub cutoffs: Option<String>,
    /// Salt-and-pepper density (default: 0.02).
    #[arg(long)]
    pub salt_pepper: Option<f64>,
    /// Gaussian noise standard deviation on the [0, 1] scale (default: 0.1).
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Noise seed (default: 0).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Target false detection rate (default: 0.002).
    #[arg(long)]
    pub fdr: Option<f64>,
}

/// Failure of a command, split by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad or missing input; exit code 2.
    Usage(String),
    /// The pipeline failed while running; exit code 1.
    Runtime(Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    /// `error kind=<kind> message="<text>"` on a single line.
    pub fn line(&self) -> String {
        let (kind, msg) = match self {
            CliError::Usage(m) => ("usage", m.clone()),
            CliError::Runtime(e) => (runtime_kind(e), e.to_string()),
        };
        format!("error kind={kind} message={msg:?}")
    }
}

fn runtime_kind(e: &Error) -> &'static str {
    match e {
        Error::Shape(_) => "shape",
        Error::Input(_) => "input",
        Error::Config(_) => "config",
        Error::Format { .. } => "format",
        Error::Numeric(_) => "numeric",
        Error::Io { .. } => "io",
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(m) => CliError::Usage(m),
            other => CliError::Runtime(other),
        }
    }
}

impl Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.line())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Config file entries layered under command-line flags; every value read is
/// recorded so the effective configuration can be written back out.
#[derive(Debug, Default)]
pub struct Settings {
    file: BTreeMap<String, String>,
    effective: BTreeMap<String, String>,
}

impl Settings {
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut file = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("config line {}: expected key=value", n + 1)))?;
            file.insert(k.trim().replace('-', "_"), v.trim().to_string());
        }
        Ok(Self { file, effective: BTreeMap::new() })
    }

    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
                Self::parse(&text)
            }
        }
    }

    /// Flag value, else config-file value, else `default`.
    pub fn get<T>(&mut self, key: &str, flag: Option<T>, default: T) -> CliResult<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let value = match (flag, self.file.get(key)) {
            (Some(v), _) => v,
            (None, Some(text)) => text
                .parse()
                .map_err(|e| CliError::Usage(format!("config key {key}: {e}")))?,
            (None, None) => default,
        };
        self.effective.insert(key.to_string(), value.to_string());
        Ok(value)
    }

    /// Like [`Settings::get`] without a default; `None` when neither source sets the key.
    pub fn get_opt<T>(&mut self, key: &str, flag: Option<T>) -> CliResult<Option<T>>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let value = match (flag, self.file.get(key)) {
            (Some(v), _) => Some(v),
            (None, Some(text)) => Some(
                text.parse()
                    .map_err(|e| CliError::Usage(format!("config key {key}: {e}")))?,
            ),
            (None, None) => None,
        };
        if let Some(v) = &value {
            self.effective.insert(key.to_string(), v.to_string());
        }
        Ok(value)
    }

    pub fn record(&mut self, key: &str, value: impl Display) {
        self.effective.insert(key.to_string(), value.to_string());
    }

    pub fn effective_text(&self) -> String {
        self.effective.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

fn out_dir(settings: &mut Settings, common: &CommonArgs) -> CliResult<PathBuf> {
    let fallback = std::env::var(OUT_ENV).unwrap_or_else(|_| DEFAULT_OUT.to_string());
    let out = settings.get("out", common.out.as_ref().map(|p| p.display().to_string()), fallback)?;
    Ok(PathBuf::from(out))
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| CliError::Runtime(Error::Io { path: path.to_path_buf(), source: e }))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| CliError::Runtime(Error::Io { path: path.to_path_buf(), source: e }))
}

fn finish(settings: &Settings, out: &Path) -> CliResult<()> {
    write_file(&out.join("run_config.txt"), settings.effective_text())
}

pub fn parse_list<T: FromStr>(key: &str, text: &str) -> CliResult<Vec<T>>
where
    T::Err: Display,
{
    text.split(',')
        .map(|s| s.trim().parse().map_err(|e| CliError::Usage(format!("{key}: cannot parse {s:?}: {e}"))))
        .collect()
}

fn join<T: Display>(values: &[T]) -> String {
    values.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

/// Runs one parsed command and returns the output directory.
pub fn run(cli: Cli) -> CliResult<PathBuf> {
    match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Gradcam(a) => gradcam_cmd(a),
        Command::Tsne(a) => tsne_cmd(a),
        Command::FreqSweep(a) => freq_sweep_cmd(a),
        Command::Robustness(a) => robustness_cmd(a),
    }
}

fn gen_data(a: GenDataArgs) -> CliResult<PathBuf> {
    let mut s = Settings::load(a.common.config.as_deref())?;
    let out = out_dir(&mut s, &a.common)?;
    let d = DatasetSpec::default();
    let spec = DatasetSpec {
        train: s.get("train", a.train, d.train)?,
        test: s.get("test", a.test, d.test)?,
        seed: s.get("seed", a.seed, d.seed)?,
        image_size: s.get("image_size", a.image_size, d.image_size)?,
    };
    if spec.image_size < synthdata::MIN_SIZE {
        return Err(CliError::Usage(format!("image_size must be at least {}", synthdata::MIN_SIZE)));
    }
    synthdata::write_dataset(&spec, &out, a.force).map_err(|e| match e {
        Error::Input(m) => CliError::Usage(m),
        other => CliError::Runtime(other),
    })?;
    finish(&s, &out)?;
    Ok(out)
}

fn model_config(s: &mut Settings, a: &ModelArgs) -> CliResult<ModelConfig> {
    let d = ModelConfig::default();
    let blocks = s.get("blocks", a.blocks.clone(), join(&d.block_layers))?;
    let config = ModelConfig {
        input_size: s.get("input_size", a.input_size, d.input_size)?,
        stem_filters: s.get("stem_filters", a.stem_filters, d.stem_filters)?,
        growth_rate: s.get("growth_rate", a.growth_rate, d.growth_rate)?,
        block_layers: parse_list("blocks", &blocks)?,
        compression: s.get("compression", a.compression, d.compression)?,
        bottleneck_factor: s.get("bottleneck_factor", a.bottleneck_factor, d.bottleneck_factor)?,
        num_classes: d.num_classes,
        ..d
    };
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(config)
}

fn require_dir(key: &str, path: Option<String>) -> CliResult<PathBuf> {
    let path = PathBuf::from(path.ok_or_else(|| CliError::Usage(format!("--{key} is required")))?);
    if !path.is_dir() {
        return Err(CliError::Usage(format!("{key} directory {} does not exist", path.display())));
    }
    Ok(path)
}

/// Loads and crops a labelled tree; sample ids are paths relative to `root`.
fn load_samples(root: &Path, split: Option<&str>, input_size: usize) -> CliResult<Vec<Sample>> {
    let loaded = synthdata::load_dir(root, split)?;
    if let Some(issue) = loaded.issues.first() {
        return Err(CliError::Runtime(Error::Input(format!(
            "cannot load {}: {}",
            issue.path.display(),
            issue.error
        ))));
    }
    let mut samples = synthdata::prepare_samples(&loaded.images, input_size)?;
    for s in &mut samples {
        if let Ok(rel) = Path::new(&s.id).strip_prefix(root) {
            s.id = rel.display().to_string();
        }
    }
    Ok(samples)
}

fn train_cmd(a: TrainArgs) -> CliResult<PathBuf> {
    let mut s = Settings::load(a.common.config.as_deref())?;
    let out = out_dir(&mut s, &a.common)?;
    let data = require_dir("data", s.get_opt("data", a.data.map(|p| p.display().to_string()))?)?;
    let model_cfg = model_config(&mut s, &a.model)?;
    let d = TrainConfig::default();
    let seed = s.get("seed", a.seed, 42)?;
    let cfg = TrainConfig {
        learning_rate: s.get("lr", a.lr, d.learning_rate)?,
        momentum: s.get("momentum", a.momentum, d.momentum)?,
        batch_size: s.get("batch", a.batch, d.batch_size)?,
        epochs: s.get("epochs", a.epochs, d.epochs)?,
        seed,
        checkpoint_every: s.get("checkpoint_every", a.checkpoint_every, d.checkpoint_every)?,
        checkpoint_dir: Some(out.join("checkpoints")),
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let samples = load_samples(&data, Some("train"), model_cfg.input_size)?;
    if samples.is_empty() {
        return Err(CliError::Usage(format!("no training images below {}/train", data.display())));
    }
    create_dir(&out)?;
    let model = Model::new(model_cfg, seed)?;
    let (model, log) = train::train_with_progress(model, &samples, &cfg, |r| {
        eprintln!("epoch {} loss {:.5} accuracy {:.4}", r.epoch, r.mean_loss, r.train_accuracy);
    })?;
    save_checkpoint(&model, CheckpointMeta { epoch: cfg.epochs, seed }, out.join("model.ckpt"))?;
    // Wall time varies run to run; the CSV keeps only the reproducible columns.
    let mut csv = String::from("epoch,mean_loss,train_accuracy\n");
    for r in &log.epochs {
        csv.push_str(&format!("{},{},{}\n", r.epoch, r.mean_loss, r.train_accuracy));
    }
    write_file(&out.join("train_log.csv"), csv)?;
    finish(&s, &out)?;
    Ok(out)
}

struct Inputs {
    model: Model,
    samples: Vec<Sample>,
    jobs: usize,
    out: PathBuf,
    settings: Settings,
}

fn load_inputs(common: &CommonArgs, input: &InputArgs) -> CliResult<Inputs> {
    let mut s = Settings::load(common.config.as_deref())?;
    let out = out_dir(&mut s, common)?;
    let jobs = s.get("jobs", common.jobs, 1)?;
    let ckpt = s
        .get_opt("checkpoint", input.checkpoint.as_ref().map(|p| p.display().to_string()))?
        .ok_or_else(|| CliError::Usage("--checkpoint is required".into()))?;
    if !Path::new(&ckpt).is_file() {
        return Err(CliError::Usage(format!("checkpoint {ckpt} does not exist")));
    }
    let data = require_dir("data", s.get_opt("data", input.data.as_ref().map(|p| p.display().to_string()))?)?;
    let split = s.get_opt("split", input.split.clone())?;
    let model = load_checkpoint(&ckpt)?.model;
    let samples = load_samples(&data, split.as_deref(), model.config().input_size)?;
    if samples.is_empty() {
        return Err(CliError::Usage(format!("no labelled images found below {}", data.display())));
    }
    create_dir(&out)?;
    Ok(Inputs { model, samples, jobs, out, settings: s })
}

fn eval_cmd(a: EvalArgs) -> CliResult<PathBuf> {
    let Inputs { model, samples, jobs, out, settings: mut s } = load_inputs(&a.common, &a.input)?;
    let fdr = s.get("fdr", a.fdr, 0.002)?;
    let bins = s.get("bins", a.bins, 20)?;
    let scored = train::evaluate_scores(&model, &samples, jobs)?;
    let report = EvalReport::from_scores(&scored, fdr, bins)?;
    write_file(&out.join("scores.csv"), train::scores_csv(&scored))?;
    write_file(&out.join("report.csv"), report.to_csv())?;
    write_file(&out.join("report.txt"), report.to_text())?;
    write_file(&out.join("histogram.csv"), report.histogram_csv())?;
    pnm::write_pgm(&report.histogram_image(), out.join("histogram.pgm"))?;
    let (pa, bf): (Vec<_>, Vec<_>) = scored.iter().partition(|x| x.label == PA_CLASS);
    let roc = metrics::roc_points(
        &bf.iter().map(|x| x.score).collect::<Vec<_>>(),
        &pa.iter().map(|x| x.score).collect::<Vec<_>>(),
    )?;
    write_file(&out.join("roc.csv"), metrics::roc_csv(&roc))?;
    println!("{}", report.to_text().lines().take(6).collect::<Vec<_>>().join("\n"));
    finish(&s, &out)?;
    Ok(out)
}

fn file_stem(class: Option<IrisClass>) -> &'static str {
    class.map_or("mixed", IrisClass::name)
}

fn mean_input(samples: &[&Sample]) -> CliResult<Tensor> {
    let first = &samples[0].input;
    let mut acc = Tensor::zeros(first.shape());
    for s in samples {
        for (a, v) in acc.data_mut().iter_mut().zip(s.input.data()) {
            *a += v / samples.len() as f64;
        }
    }
    Ok(acc)
}

fn gradcam_cmd(a: GradcamArgs) -> CliResult<PathBuf> {
    let Inputs { model, samples, jobs, out, settings: mut s } = load_inputs(&a.common, &a.input)?;
    let last = model.num_blocks() - 1;
    let block = s.get("block", a.block, last)?;
    let target = s.get("target", a.target, PA_CLASS)?;
    let classes: Vec<IrisClass> = match s.get_opt("class", a.class.clone())? {
        Some(name) => vec![name.parse().map_err(|e: Error| CliError::Usage(e.to_string()))?],
        None => IrisClass::ALL.to_vec(),
    };
    s.record("average", a.average);
    let dir = out.join("gradcam");
    create_dir(&dir)?;
    let size = model.config().input_size;
    for class in classes {
        let chosen: Vec<Sample> = samples.iter().filter(|x| x.class == class).cloned().collect();
        if chosen.is_empty() {
            continue;
        }
        let maps = explain::grad_cam_batch(&model, &chosen, target, block, jobs)?;
        if !a.average {
            for (i, m) in maps.iter().enumerate() {
                m.write_pgm(&dir.join(format!("{}_{i:04}.pgm", class.name())))?;
            }
        }
        let avg = explain::average_heatmap(&maps)?;
        avg.write_pgm(&dir.join(format!("{}_mean.pgm", file_stem(avg.class))))?;
        let refs: Vec<&Sample> = chosen.iter().collect();
        let background = mean_input(&refs)?.reshape(&[size, size])?;
        pnm::write_ppm(&avg.overlay(&background)?, dir.join(format!("{}_mean.ppm", class.name())))?;
        println!("{}: {} maps, block {block}", class.name(), maps.len());
    }
    finish(&s, &out)?;
    Ok(out)
}

fn tsne_cmd(a: TsneArgs) -> CliResult<PathBuf> {
    let Inputs { model, samples, jobs, out, settings: mut s } = load_inputs(&a.common, &a.input)?;
    let all: Vec<usize> = (0..model.num_blocks()).collect();
    let blocks: Vec<usize> = parse_list("tsne_blocks", &s.get("tsne_blocks", a.blocks.clone(), join(&all))?)?;
    let d = TsneParams::default();
    let params = TsneParams {
        perplexity: s.get("perplexity", a.perplexity, d.perplexity)?,
        iterations: s.get("iterations", a.iterations, d.iterations)?,
        seed: s.get("seed", a.seed, d.seed)?,
        ..d
    };
    s.record("exaggeration", params.exaggeration);
    s.record("exaggeration_iters", params.exaggeration_iters);
    s.record("learning_rate", params.learning_rate);
    s.record("momentum", format!("{}->{}", params.initial_momentum, params.final_momentum));
    let labels: Vec<usize> = samples.iter().map(Sample::label).collect();
    let classes: Vec<usize> = samples
        .iter()
        .map(|x| IrisClass::ALL.iter().position(|c| *c == x.class).expect("known class"))
        .collect();
    let mut summary = String::from("block,silhouette_binary,kl\n");
    for block in blocks {
        let feats = explain::extract_block_features(&model, &samples, block, jobs)?;
        let mut emb = explain::tsne(&feats, &classes, &params)?;
        emb.block = Some(block);
        write_file(&out.join(format!("tsne_block{block}.csv")), explain::embedding_csv(&emb))?;
        let sil = explain::silhouette_score(&emb.coords, &labels)?;
        summary.push_str(&format!("{block},{sil},{}\n", emb.kl));
        println!("block {block}: silhouette {sil:.4}, KL {:.4}", emb.kl);
    }
    write_file(&out.join("tsne_summary.csv"), summary)?;
    finish(&s, &out)?;
    Ok(out)
}

fn cutoffs(s: &mut Settings, flag: Option<String>, input_size: usize) -> CliResult<Vec<f64>> {
    let text = s.get("cutoffs", flag, join(&freq::default_cutoffs(input_size)))?;
    parse_list("cutoffs", &text)
}

fn freq_sweep_cmd(a: FreqSweepArgs) -> CliResult<PathBuf> {
    let Inputs { model, samples, jobs, out, settings: mut s } = load_inputs(&a.common, &a.input)?;
    let size = model.config().input_size;
    let cuts = cutoffs(&mut s, a.cutoffs.clone(), size)?;
    let fdr = s.get("fdr", a.fdr, 0.002)?;
    let sweep = freq::cutoff_sweep(&model, "checkpoint", &samples, &cuts, fdr, jobs)?;
    write_file(&out.join("sweep.csv"), sweep.to_csv())?;

    // Filtered example and spectra for the first image, one pair per cutoff.
    let dir = out.join("freq_examples");
    create_dir(&dir)?;
    let plane = samples[0].input.clone().reshape(&[size, size])?;
    let save = |name: String, t: &Tensor| -> CliResult<()> {
        pnm::write_pgm(&GrayImage::from_unit(size, size, t.data())?, dir.join(name))?;
        Ok(())
    };
    save("original.pgm".into(), &plane)?;
    pnm::write_pgm(&freq::fft2_centered(&plane)?.log_magnitude_image()?, dir.join("original_spectrum.pgm"))?;
    for &c in &cuts {
        let low = freq::radial_filter(&plane, c, FilterMode::Low)?;
        save(format!("lowpass_{c}.pgm"), &low)?;
        pnm::write_pgm(&freq::fft2_centered(&low)?.log_magnitude_image()?, dir.join(format!("lowpass_{c}_spectrum.pgm")))?;
        save(format!("highpass_{c}.pgm"), &freq::radial_filter(&plane, c, FilterMode::High)?)?;
    }
    println!("baseline TDR {:.4}", sweep.baseline_tdr);
    for p in &sweep.points {
        println!("cutoff {} (224-px equivalent {:.1}): TDR {:.4}", p.cutoff, p.reference_cutoff, p.tdr);
    }
    finish(&s, &out)?;
    Ok(out)
}

fn robustness_cmd(a: RobustnessArgs) -> CliResult<PathBuf> {
    let Inputs { model, samples, jobs, out, settings: mut s } = load_inputs(&a.common, &a.input)?;
    let size = model.config().input_size;
    let mut manipulations: Vec<Manipulation> =
        cutoffs(&mut s, a.cutoffs.clone(), size)?.into_iter().map(Manipulation::LowPass).collect();
    let density = s.get("salt_pepper", a.salt_pepper, freq::DEFAULT_SALT_PEPPER)?;
    let sigma = s.get("sigma", a.sigma, freq::DEFAULT_SIGMA)?;
    manipulations.push(Manipulation::Noise(Noise::SaltPepper { density }));
    manipulations.push(Manipulation::Noise(Noise::Gaussian { sigma }));
    let seed = s.get("seed", a.seed, 0)?;
    let fdr = s.get("fdr", a.fdr, 0.002)?;
    let rows = freq::robustness_table(&model, &samples, &manipulations, fdr, seed, jobs)?;
    write_file(&out.join("robustness.csv"), freq::robustness_csv(&rows))?;
    for r in &rows {
        println!("{:<20} TDR {:.4}  decrease {:.2}%", r.name, r.tdr, r.relative_decrease);
    }
    finish(&s, &out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_values() {
        let mut s = Settings::parse("lr = 0.01\n# comment\nepochs=3  # trailing\n").unwrap();
        assert_eq!(s.get("lr", None, 0.005).unwrap(), 0.01);
        assert_eq!(s.get("lr", Some(0.2), 0.005).unwrap(), 0.2);
        assert_eq!(s.get("epochs", None, 50usize).unwrap(), 3);
        assert_eq!(s.get("batch", None, 20usize).unwrap(), 20);
        assert_eq!(s.effective_text(), "batch=20\nepochs=3\nlr=0.2\n");
    }

    #[test]
    fn bad_config_is_a_usage_error() {
        assert!(matches!(Settings::parse("novalue"), Err(CliError::Usage(_))));
        let mut s = Settings::parse("epochs=many").unwrap();
        let err = s.get("epochs", None, 1usize).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.line().starts_with("error kind=usage message="));
    }

    #[test]
    fn lists_parse() {
        assert_eq!(parse_list::<f64>("c", "2, 4,6").unwrap(), vec![2.0, 4.0, 6.0]);
        assert!(parse_list::<usize>("b", "2,x").is_err());
    }

    #[test]
    fn runtime_errors_exit_one() {
        let e = CliError::from(Error::Numeric("nan".into()));
        assert_eq!(e.exit_code(), 1);
        assert_eq!(e.line(), "error kind=numeric message=\"numeric error: nan\"");
    }
}
