//! Subcommands of the `cxrage` binary.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use cxrage::checkpoint::{load_checkpoint, peek_precision, Checkpoint};
use cxrage::dataset::{
    encode_pgm, filter_view, generate_synthetic, load_image, parse_metadata, remove_age_outliers, split,
    write_metadata, LabeledImage, Region, SyntheticSpec, ViewSelector, MAX_AGE_YEARS,
};
use cxrage::metrics::{evaluate, predict_normalized};
use cxrage::saliency::{encode_png, input_gradient, normalize_map, overlay, region_saliency_ratio, saliency_map};
use cxrage::trainer::{train, EpochStats, Objective, TrainConfig};
use cxrage::{Network, Precision, Preset, Real, Tensor};

#[derive(Debug, Parser)]
#[command(name = "cxrage", version, about = "Age regression from chest radiographs")]
pub struct Cli {
    /// Log per-epoch progress to standard error.
    #[arg(long, short, global = true)]
    pub verbose: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded synthetic dataset (PGM images, metadata CSV, region manifest).
    Synth(SynthArgs),
    /// Train a network and write a checkpoint plus per-epoch stats.
    Train(TrainArgs),
    /// Evaluate a checkpoint and write a metrics report.
    Eval(EvalArgs),
    /// Render gradient saliency overlays.
    Saliency(SaliencyArgs),
    /// List cases whose predicted age is off by more than a threshold.
    Disparity(DisparityArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    /// Signal rectangle "r0,c0,r1,c1" (half-open). Defaults to a centred square
    /// of side size/4.
    #[arg(long)]
    pub region: Option<Region>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ObjectiveArg {
    Mse,
    R2,
}

impl From<ObjectiveArg> for Objective {
    fn from(o: ObjectiveArg) -> Self {
        match o {
            ObjectiveArg::Mse => Objective::Mse,
            ObjectiveArg::R2 => Objective::R2,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PrecisionArg {
    F32,
    F64,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Metadata CSV.
    #[arg(long)]
    pub metadata: PathBuf,
    /// Directory holding the images named in the CSV.
    #[arg(long)]
    pub images: PathBuf,
    /// PA, AP or BOTH.
    #[arg(long, default_value = "BOTH", value_parser = parse_view)]
    pub view: ViewSelector,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value = "dense-tiny", value_parser = parse_preset)]
    pub preset: Preset,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Keep each patient's images on one side of the split.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub by_patient: bool,
    #[arg(long, value_enum, default_value_t = ObjectiveArg::Mse)]
    pub objective: ObjectiveArg,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch stats CSV. Defaults to `<out>.stats.csv`.
    #[arg(long)]
    pub stats: Option<PathBuf>,
    #[arg(long, default_value_t = 0.2)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 10)]
    pub patience: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub min_delta: f64,
    /// Fraction of images (or patients) used for training.
    #[arg(long, default_value_t = 0.8)]
    pub train_ratio: f64,
    #[arg(long, value_enum, default_value_t = PrecisionArg::F32)]
    pub precision: PrecisionArg,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Metrics report JSON.
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Debug, Args)]
pub struct SaliencyArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// A single image file.
    #[arg(long, conflicts_with_all = ["metadata", "images"])]
    pub image: Option<PathBuf>,
    #[arg(long, requires = "images")]
    pub metadata: Option<PathBuf>,
    #[arg(long, requires = "metadata")]
    pub images: Option<PathBuf>,
    /// View filter applied to the metadata rows.
    #[arg(long, default_value = "BOTH", value_parser = parse_view)]
    pub filter: ViewSelector,
    /// Use only the first N selected rows.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Region manifest ("r0,c0,r1,c1"); adds the region ratio column.
    #[arg(long)]
    pub region: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DisparityArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 10.0)]
    pub threshold: f64,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_view(s: &str) -> std::result::Result<ViewSelector, String> {
    ViewSelector::parse(s).ok_or_else(|| format!("unknown view {s:?} (expected PA, AP or BOTH)"))
}

fn parse_preset(s: &str) -> std::result::Result<Preset, String> {
    Preset::from_name(s).ok_or_else(|| format!("unknown preset {s:?} (expected one of {:?})", Preset::NAMES))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Train(a) => match a.precision {
            PrecisionArg::F32 => cmd_train::<f32>(&a),
            PrecisionArg::F64 => cmd_train::<f64>(&a),
        },
        Command::Eval(a) => match checkpoint_precision(&a.ckpt)? {
            Precision::F32 => cmd_eval::<f32>(&a),
            Precision::F64 => cmd_eval::<f64>(&a),
        },
        Command::Saliency(a) => match checkpoint_precision(&a.ckpt)? {
            Precision::F32 => cmd_saliency::<f32>(&a),
            Precision::F64 => cmd_saliency::<f64>(&a),
        },
        Command::Disparity(a) => match checkpoint_precision(&a.ckpt)? {
            Precision::F32 => cmd_disparity::<f32>(&a),
            Precision::F64 => cmd_disparity::<f64>(&a),
        },
    }
}

fn checkpoint_precision(path: &Path) -> Result<Precision> {
    peek_precision(path).with_context(|| format!("cannot read checkpoint {}", path.display()))
}

/// Writes `bytes` to a temporary file beside `path`, then renames it.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("cannot write {}", path.display()))?;
    tmp.write_all(bytes)
        .with_context(|| format!("cannot write {}", path.display()))?;
    tmp.persist(path)
        .with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

pub fn default_region(size: usize) -> Region {
    let side = (size / 4).max(1);
    let start = (size - side) / 2;
    Region::new(start, start, start + side, start + side)
}

pub const REGION_MANIFEST: &str = "region.txt";
pub const METADATA_FILE: &str = "metadata.csv";

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let spec = SyntheticSpec {
        image_size: a.size,
        n_samples: a.n,
        noise_sigma: a.noise,
        signal_region: a.region.unwrap_or_else(|| default_region(a.size)),
        seed: a.seed,
    };
    let data = generate_synthetic::<f64>(&spec)?;

    if a.out.exists() && fs::read_dir(&a.out).map(|mut d| d.next().is_some()).unwrap_or(true) {
        bail!("output directory {} exists and is not empty", a.out.display());
    }
    let parent = match a.out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&parent).with_context(|| format!("cannot create {}", parent.display()))?;
    let staging = tempfile::Builder::new()
        .prefix(".synth-")
        .tempdir_in(&parent)
        .with_context(|| format!("cannot write to {}", parent.display()))?;

    let s = spec.image_size;
    for img in &data.images {
        let path = staging.path().join(&img.id);
        fs::write(&path, encode_pgm(img.pixels.data(), s, s))
            .with_context(|| format!("cannot write {}", path.display()))?;
    }
    fs::write(staging.path().join(METADATA_FILE), write_metadata(&data.records()))?;
    fs::write(staging.path().join(REGION_MANIFEST), format!("{}\n", data.region))?;

    if a.out.exists() {
        fs::remove_dir(&a.out).with_context(|| format!("cannot replace {}", a.out.display()))?;
    }
    fs::rename(staging.path(), &a.out).with_context(|| format!("cannot create {}", a.out.display()))?;
    println!("wrote {} images to {}", data.images.len(), a.out.display());
    Ok(())
}

/// Parse → view filter → age-outlier removal → image loading.
pub fn load_dataset<T: Real>(data: &DataArgs, input_size: (usize, usize)) -> Result<Vec<LabeledImage<T>>> {
    let text = fs::read_to_string(&data.metadata)
        .with_context(|| format!("cannot read metadata {}", data.metadata.display()))?;
    let records = parse_metadata(&text).with_context(|| data.metadata.display().to_string())?;
    let records = filter_view(records, data.view);
    ensure!(
        !records.is_empty(),
        "dataset is empty after view filter (view={})",
        data.view.as_str()
    );
    let records = remove_age_outliers(records, MAX_AGE_YEARS);
    ensure!(
        !records.is_empty(),
        "dataset is empty after age outlier filter (age > {MAX_AGE_YEARS})"
    );
    records
        .into_iter()
        .map(|r| {
            let pixels = load_image::<T>(&data.images.join(&r.image_index), input_size)?;
            Ok(LabeledImage::from_record(r, pixels)?)
        })
        .collect()
}

pub fn stats_csv(history: &[EpochStats]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss,val_r2\n");
    for s in history {
        let _ = writeln!(
            out,
            "{},{:.8e},{:.8e},{:.8e}",
            s.epoch, s.train_loss, s.val_loss, s.val_r2
        );
    }
    out
}

pub fn cmd_train<T: Real>(a: &TrainArgs) -> Result<()> {
    let spec = a.preset.spec(a.seed);
    let images = load_dataset::<T>(&a.data, spec.input_size)?;
    let data = split(images, a.train_ratio, a.seed, a.by_patient)?;
    log::info!("split: {} train / {} validation", data.train.len(), data.val.len());
    let config = TrainConfig {
        objective: a.objective.into(),
        learning_rate: a.lr,
        batch_size: a.batch_size,
        max_epochs: a.epochs,
        patience: a.patience,
        min_delta: a.min_delta,
        seed: a.seed,
    };
    let net = Network::<T>::build(spec)?;
    let outcome = train(net, &data, &config)?;

    let stats_path = a.stats.clone().unwrap_or_else(|| {
        let mut p = a.out.as_os_str().to_owned();
        p.push(".stats.csv");
        PathBuf::from(p)
    });
    let ckpt_bytes = outcome.best.encode()?;
    write_atomic(&stats_path, stats_csv(&outcome.history).as_bytes())?;
    write_atomic(&a.out, &ckpt_bytes)?;
    println!(
        "trained {} epochs; best val_loss {:.6} at epoch {}; checkpoint {}",
        outcome.history.len(),
        outcome.best.best_val_loss,
        outcome.best.epoch,
        a.out.display()
    );
    Ok(())
}

fn load_network<T: Real>(path: &Path) -> Result<Network<T>> {
    let ckpt: Checkpoint<T> =
        load_checkpoint(path).with_context(|| format!("cannot load checkpoint {}", path.display()))?;
    Ok(ckpt.into_network()?)
}

pub fn cmd_eval<T: Real>(a: &EvalArgs) -> Result<()> {
    let net = load_network::<T>(&a.ckpt)?;
    let images = load_dataset::<T>(&a.data, net.spec().input_size)?;
    let report = evaluate(&net, &images, a.data.view)?;
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    write_atomic(&a.report, json.as_bytes())?;
    println!("{}", report.summary());
    Ok(())
}

pub fn saliency_file_name(image_index: &str) -> String {
    format!("{image_index}.saliency.png")
}

pub fn read_region_manifest(path: &Path) -> Result<Region> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read region manifest {}", path.display()))?;
    text.trim()
        .parse::<Region>()
        .with_context(|| path.display().to_string())
}

pub fn cmd_saliency<T: Real>(a: &SaliencyArgs) -> Result<()> {
    let net = load_network::<T>(&a.ckpt)?;
    let [c, h, w] = cxrage::GraphModel::<T>::input_dims(&net);
    let region = a.region.as_deref().map(read_region_manifest).transpose()?;

    let selected: Vec<(String, Tensor<T>)> = match (&a.image, &a.metadata, &a.images) {
        (Some(path), _, _) => {
            let name = path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| "image".into());
            vec![(name, load_image::<T>(path, (h, w))?)]
        }
        (None, Some(metadata), Some(images)) => {
            let data = DataArgs {
                metadata: metadata.clone(),
                images: images.clone(),
                view: a.filter,
            };
            let mut items = load_dataset::<T>(&data, (h, w))?;
            if let Some(n) = a.limit {
                items.truncate(n);
            }
            items.into_iter().map(|i| (i.id, i.pixels)).collect()
        }
        _ => bail!("pass either --image or both --metadata and --images"),
    };
    ensure!(c == 1, "saliency expects single-channel networks, got {c} channels");

    let mut rendered = Vec::with_capacity(selected.len());
    let mut csv = String::from("image_index,raw_max,region_ratio\n");
    for (id, pixels) in &selected {
        let batch = pixels.reshape(&[1, c, h, w])?;
        let mut map = saliency_map(&input_gradient(&net, &batch)?)?;
        map.source = Some(id.clone());
        let ratio = region.as_ref().map(|r| region_saliency_ratio(&map, r)).transpose()?;
        let map = normalize_map(map);
        let png = encode_png(&overlay(pixels, &map)?)?;
        let ratio = ratio.map(|r| format!("{r:.8e}")).unwrap_or_default();
        let _ = writeln!(csv, "{id},{:.8e},{ratio}", map.raw_max);
        rendered.push((saliency_file_name(id), png));
    }

    fs::create_dir_all(&a.out).with_context(|| format!("cannot create {}", a.out.display()))?;
    for (name, png) in &rendered {
        write_atomic(&a.out.join(name), png)?;
    }
    write_atomic(&a.out.join("saliency.csv"), csv.as_bytes())?;
    println!("wrote {} overlays to {}", rendered.len(), a.out.display());
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Older,
    Younger,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Older => "OLDER",
            Direction::Younger => "YOUNGER",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DisparityRow {
    pub image_index: String,
    pub real_age: f64,
    pub predicted_age: f64,
    /// predicted − real.
    pub gap_years: f64,
    pub direction: Direction,
}

/// Rows with |predicted − real| strictly above `threshold`, largest gap
/// first (ties broken by image index).
pub fn disparity_rows(cases: &[(String, f64, f64)], threshold: f64) -> Vec<DisparityRow> {
    let mut rows: Vec<DisparityRow> = cases
        .iter()
        .filter_map(|(id, real, pred)| {
            let gap = pred - real;
            (gap.abs() > threshold).then(|| DisparityRow {
                image_index: id.clone(),
                real_age: *real,
                predicted_age: *pred,
                gap_years: gap,
                direction: if gap > 0.0 {
                    Direction::Older
                } else {
                    Direction::Younger
                },
            })
        })
        .collect();
    rows.sort_by(|a, b| {
        b.gap_years
            .abs()
            .total_cmp(&a.gap_years.abs())
            .then_with(|| a.image_index.cmp(&b.image_index))
    });
    rows
}

pub fn disparity_csv(rows: &[DisparityRow]) -> String {
    let mut out = String::from("image_index,real_age,predicted_age,gap_years,direction\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{:.4},{:.4},{}",
            r.image_index,
            r.real_age,
            r.predicted_age,
            r.gap_years,
            r.direction.as_str()
        );
    }
    out
}

pub fn cmd_disparity<T: Real>(a: &DisparityArgs) -> Result<()> {
    ensure!(a.threshold >= 0.0, "threshold must be nonnegative");
    let net = load_network::<T>(&a.ckpt)?;
    let images = load_dataset::<T>(&a.data, net.spec().input_size)?;
    let preds = predict_normalized(&net, &images, 64)?;
    let cases: Vec<(String, f64, f64)> = images
        .iter()
        .zip(&preds)
        .map(|(i, p)| (i.id.clone(), i.age_years, p * MAX_AGE_YEARS))
        .collect();
    let rows = disparity_rows(&cases, a.threshold);
    write_atomic(&a.out, disparity_csv(&rows).as_bytes())?;
    println!(
        "{} of {} cases deviate by more than {} years",
        rows.len(),
        cases.len(),
        a.threshold
    );
    Ok(())
}
