use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use panoqa_core::dataset::{
    build_dataset, reference_path, BuildOptions, DatasetManifest, ImpairmentMode, ImpairmentSpec, Split,
    StimulusRecord, QUALITY_FACTORS,
};
use panoqa_core::metrics::{self, correlation_report, write_reports_csv, write_reports_json, Psnr, ScoreSeries};
use panoqa_core::sphere::{uniform_sphere_samples, SampleGrid, DEFAULT_SPHERE_SAMPLES};
use panoqa_core::subjective::{self, Grouping};
use panoqa_core::synth::synthetic_erp;
use panoqa_core::wavelet::{energy_loss_report, Band, EnergyPair};
use panoqa_core::{Projection, RasterImage};
use panoqa_sapnet::train::{self as training, write_ablation_csv, write_predictions_csv, EpochLoss};
use panoqa_sapnet::{Ablation, ModelConfig, TrainConfig};

use crate::config::{ensure_dir, read_config_file, require, resolve, write_snapshot, Overrides};
use crate::{render, CliError};

#[derive(Debug, Parser)]
#[command(name = "panoqa", version, about = "No-reference quality assessment pipeline for 360° images")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Impair source ERP images (JPEG ladder, projection round trips) and write a manifest.
    Generate(GenerateArgs),
    /// Per-band wavelet energy loss and coefficient histograms of JPEG stimuli.
    AnalyzeWavelet(WaveletArgs),
    /// Full-reference baselines (PSNR, S-PSNR, CPP-PSNR, SSIM) against DMOS.
    BaselineEval(BaselineArgs),
    /// Train SAP-net on the TRAIN split.
    Train(TrainArgs),
    /// Score a split with a trained checkpoint.
    Evaluate(EvaluateArgs),
    /// Train and compare FULL, NO_RSAB and NO_CONCAT under one seed.
    Ablate(AblateArgs),
    /// DMOS boxplot statistics by quality factor and by projection.
    PlotData(PlotArgs),
}

pub fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Generate(a) => generate(a),
        Command::AnalyzeWavelet(a) => analyze_wavelet(a),
        Command::BaselineEval(a) => baseline_eval(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Ablate(a) => ablate(a),
        Command::PlotData(a) => plot_data(a),
    }
}

fn parse_split(s: &str) -> Result<Split, String> {
    match s.to_ascii_uppercase().as_str() {
        "TRAIN" => Ok(Split::Train),
        "TEST" => Ok(Split::Test),
        _ => Err(format!("unknown split '{s}' (expected train or test)")),
    }
}

fn parse_ablation(s: &str) -> Result<Ablation, String> {
    s.parse().map_err(|e: panoqa_core::Error| e.to_string())
}

fn config_file(path: &Option<PathBuf>) -> Result<Option<serde_json::Value>, CliError> {
    path.as_deref().map(read_config_file).transpose()
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::user(format!("cannot create {}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::user(format!("cannot write {}: {e}", path.display())))
}

fn load_manifest(path: &Path) -> Result<(DatasetManifest, PathBuf), CliError> {
    if !path.is_file() {
        return Err(CliError::user(format!(
            "manifest {} not found; run `panoqa generate` first",
            path.display()
        )));
    }
    let manifest = DatasetManifest::load(path)?;
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((manifest, dir))
}

/// Replaces manifest DMOS with values derived from raw subjective scores and
/// writes the MOS/DMOS table to `out`.
fn apply_scores(manifest: &mut DatasetManifest, scores: &Path, out: &Path) -> Result<(), CliError> {
    let file = File::open(scores).map_err(|e| CliError::user(format!("cannot open {}: {e}", scores.display())))?;
    let records = subjective::read_scores_csv(file, &scores.display().to_string())?;
    let table = subjective::compute_dmos(&records, &subjective::reference_map(manifest))?;
    let mut w = create(out)?;
    table.write_csv(&mut w)?;
    w.flush().map_err(|e| CliError::user(e.to_string()))?;
    let merged = manifest.merge_dmos(&table.dmos_map())?;
    info!("DMOS derived for {merged} stimuli from {}", scores.display());
    Ok(())
}

// ---------------------------------------------------------------- generate

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory of pristine ERP images (PNG, JPEG, BMP, TIFF).
    #[arg(long)]
    sources: Option<PathBuf>,
    /// Also render this many synthetic ERP scenes as sources.
    #[arg(long)]
    synthetic: Option<usize>,
    /// Height of synthetic scenes (width is twice the height).
    #[arg(long)]
    synthetic_height: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Seed of the TRAIN/TEST source split.
    #[arg(long)]
    seed: Option<u64>,
    /// Fraction of sources assigned to TRAIN.
    #[arg(long)]
    split_ratio: Option<f64>,
    /// Fill DMOS with per-condition proxy values.
    #[arg(long)]
    proxy_dmos: bool,
    /// Only the JPEG ladder, no projection round trips.
    #[arg(long)]
    jpeg_only: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerateConfig {
    pub sources: Option<PathBuf>,
    pub synthetic: usize,
    pub synthetic_height: usize,
    pub out_dir: Option<PathBuf>,
    pub seed: u64,
    pub split_ratio: f64,
    pub proxy_dmos: bool,
    pub jpeg_only: bool,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            sources: None,
            synthetic: 0,
            synthetic_height: 256,
            out_dir: None,
            seed: 0,
            split_ratio: BuildOptions::default().split_ratio,
            proxy_dmos: false,
            jpeg_only: false,
        }
    }
}

const IMAGE_EXTENSIONS: [&str; 6] = ["png", "jpg", "jpeg", "bmp", "tif", "tiff"];

fn list_images(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = std::fs::read_dir(dir)
        .map_err(|e| CliError::user(format!("cannot read sources directory {}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|x| x.to_str())
                .is_some_and(|x| IMAGE_EXTENSIONS.contains(&x.to_ascii_lowercase().as_str()))
        })
        .collect();
    paths.sort();
    Ok(paths)
}

fn generate(a: GenerateArgs) -> Result<(), CliError> {
    let flags = Overrides::new()
        .set("sources", a.sources)
        .set("synthetic", a.synthetic)
        .set("synthetic_height", a.synthetic_height)
        .set("out_dir", a.out_dir)
        .set("seed", a.seed)
        .set("split_ratio", a.split_ratio)
        .flag("proxy_dmos", a.proxy_dmos)
        .flag("jpeg_only", a.jpeg_only);
    let cfg: GenerateConfig = resolve(&GenerateConfig::default(), config_file(&a.config)?, flags.into_value())?;
    let out = require(&cfg.out_dir, "out-dir")?;
    ensure_dir(out)?;
    write_snapshot(out, "generate", &cfg)?;

    let mut sources = match &cfg.sources {
        Some(dir) => list_images(dir)?,
        None => Vec::new(),
    };
    if cfg.synthetic > 0 {
        let dir = out.join("sources");
        ensure_dir(&dir)?;
        let rendered: Vec<PathBuf> = (0..cfg.synthetic)
            .into_par_iter()
            .map(|i| -> Result<PathBuf, CliError> {
                let path = dir.join(format!("synth_{i:02}.png"));
                synthetic_erp(cfg.synthetic_height, i as u64)?.save(&path)?;
                Ok(path)
            })
            .collect::<Result<_, _>>()?;
        sources.extend(rendered);
    }
    if sources.is_empty() {
        return Err(CliError::user(
            "no source images: pass --sources with a directory of ERP images or --synthetic N",
        ));
    }
    let specs = if cfg.jpeg_only {
        QUALITY_FACTORS
            .iter()
            .map(|&q| ImpairmentSpec::jpeg(q))
            .collect::<Result<Vec<_>, _>>()?
    } else {
        ImpairmentSpec::default_grid()
    };
    let options = BuildOptions {
        split_ratio: cfg.split_ratio,
        seed: cfg.seed,
        proxy_dmos: cfg.proxy_dmos,
    };
    let manifest = build_dataset(&sources, &specs, &options, out)?;
    println!(
        "generated {} stimuli from {} sources ({} TRAIN, {} TEST) -> {}",
        manifest.records.len(),
        manifest.source_ids(Split::Train).len() + manifest.source_ids(Split::Test).len(),
        manifest.source_ids(Split::Train).len(),
        manifest.source_ids(Split::Test).len(),
        out.join("manifest.json").display()
    );
    Ok(())
}

// ---------------------------------------------------------- analyze-wavelet

#[derive(Debug, Args)]
pub struct WaveletArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Decomposition depth.
    #[arg(long)]
    levels: Option<usize>,
    /// Also write SVG histograms.
    #[arg(long)]
    render: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct WaveletConfig {
    pub manifest: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub levels: usize,
    pub render: bool,
}

impl Default for WaveletConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            out_dir: None,
            levels: 1,
            render: false,
        }
    }
}

fn analyze_wavelet(a: WaveletArgs) -> Result<(), CliError> {
    let flags = Overrides::new()
        .set("manifest", a.manifest)
        .set("out_dir", a.out_dir)
        .set("levels", a.levels)
        .flag("render", a.render);
    let cfg: WaveletConfig = resolve(&WaveletConfig::default(), config_file(&a.config)?, flags.into_value())?;
    let (manifest, dir) = load_manifest(require(&cfg.manifest, "manifest")?)?;
    let out = require(&cfg.out_dir, "out-dir")?;
    ensure_dir(out)?;
    write_snapshot(out, "analyze-wavelet", &cfg)?;

    let jpeg: Vec<&StimulusRecord> = manifest
        .records
        .iter()
        .filter(|r| r.mode == ImpairmentMode::JpegOnly)
        .collect();
    if jpeg.is_empty() {
        return Err(CliError::user("the manifest has no JPEG_ONLY stimuli"));
    }
    let pairs: Vec<EnergyPair> = jpeg
        .par_iter()
        .map(|r| -> Result<EnergyPair, CliError> {
            Ok(EnergyPair {
                reference: RasterImage::load(reference_path(&dir, &r.source_id), Projection::Erp)?,
                impaired: RasterImage::load(dir.join(&r.path), Projection::Erp)?,
                quality_factor: r.qf,
            })
        })
        .collect::<Result<_, _>>()?;
    let report = energy_loss_report(&pairs, cfg.levels)?;

    let io = |p: &Path| {
        let p = p.to_path_buf();
        move |e: std::io::Error| CliError::user(format!("cannot write {}: {e}", p.display()))
    };
    let loss_path = out.join("energy_loss.csv");
    let mut w = create(&loss_path)?;
    report.write_csv(&mut w).and_then(|_| w.flush()).map_err(io(&loss_path))?;
    let hist_path = out.join("energy_histograms.csv");
    let mut w = create(&hist_path)?;
    report.write_histogram_csv(&mut w).and_then(|_| w.flush()).map_err(io(&hist_path))?;
    if cfg.render {
        write_text(&out.join("energy_histograms.svg"), &render::histograms_svg(&report.histograms))?;
    }

    println!("mean energy loss (%), {} level(s)", report.levels);
    print!("{:>5}", "band");
    for q in &report.quality_factors {
        print!("{:>10}", format!("q={q}"));
    }
    println!();
    for band in Band::ALL {
        print!("{:>5}", band.name());
        for &q in &report.quality_factors {
            match report.get(band, q) {
                Some(v) => print!("{v:>10.2}"),
                None => print!("{:>10}", "null"),
            }
        }
        println!();
    }
    Ok(())
}

// ------------------------------------------------------------ baseline-eval

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Metric {
    Psnr,
    SPsnr,
    CppPsnr,
    Ssim,
}

impl Metric {
    fn parse(s: &str) -> Result<Self, CliError> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "psnr" => Ok(Metric::Psnr),
            "s-psnr" | "spsnr" => Ok(Metric::SPsnr),
            "cpp-psnr" | "cpppsnr" => Ok(Metric::CppPsnr),
            "ssim" => Ok(Metric::Ssim),
            other => Err(CliError::user(format!(
                "unknown metric '{other}' (expected psnr, s-psnr, cpp-psnr, ssim)"
            ))),
        }
    }

    fn scorer(self) -> &'static str {
        match self {
            Metric::Psnr => "PSNR",
            Metric::SPsnr => "S-PSNR",
            Metric::CppPsnr => "CPP-PSNR",
            Metric::Ssim => "SSIM",
        }
    }

    fn file_stem(self) -> &'static str {
        match self {
            Metric::Psnr => "psnr",
            Metric::SPsnr => "s-psnr",
            Metric::CppPsnr => "cpp-psnr",
            Metric::Ssim => "ssim",
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum MetricValue {
    Psnr(Psnr),
    Ssim(f64),
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Comma-separated subset of psnr,s-psnr,cpp-psnr,ssim.
    #[arg(long, value_delimiter = ',')]
    metrics: Option<Vec<String>>,
    /// Raw subjective scores (subject_id,stimulus_id,score) to derive DMOS from.
    #[arg(long)]
    scores: Option<PathBuf>,
    /// Sphere sample count for S-PSNR.
    #[arg(long)]
    sphere_samples: Option<usize>,
    /// Restrict to one split (default: all stimuli).
    #[arg(long, value_parser = parse_split)]
    split: Option<Split>,
    /// Also write SVG scatter plots.
    #[arg(long)]
    render: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub manifest: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub metrics: Vec<String>,
    pub scores: Option<PathBuf>,
    pub sphere_samples: usize,
    pub split: Option<Split>,
    pub render: bool,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            out_dir: None,
            metrics: ["psnr", "s-psnr", "cpp-psnr", "ssim"].map(String::from).to_vec(),
            scores: None,
            sphere_samples: DEFAULT_SPHERE_SAMPLES,
            split: None,
            render: false,
        }
    }
}

fn score_source(
    dir: &Path,
    records: &[&StimulusRecord],
    metrics: &[Metric],
    grid: Option<&SampleGrid>,
) -> Result<Vec<(String, Vec<MetricValue>)>, CliError> {
    let reference = RasterImage::load(reference_path(dir, &records[0].source_id), Projection::Erp)?;
    records
        .iter()
        .map(|r| {
            let impaired = RasterImage::load(dir.join(&r.path), Projection::Erp)?;
            let values = metrics
                .iter()
                .map(|m| -> Result<MetricValue, CliError> {
                    Ok(match m {
                        Metric::Psnr => MetricValue::Psnr(metrics::psnr(&reference, &impaired)?),
                        Metric::SPsnr => MetricValue::Psnr(metrics::s_psnr(
                            &reference,
                            &impaired,
                            grid.expect("grid built for S-PSNR"),
                        )?),
                        Metric::CppPsnr => MetricValue::Psnr(metrics::cpp_psnr(&reference, &impaired, None)?),
                        Metric::Ssim => MetricValue::Ssim(metrics::ssim(&reference, &impaired)?),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok((r.stimulus_id.clone(), values))
        })
        .collect()
}

fn baseline_eval(a: BaselineArgs) -> Result<(), CliError> {
    let flags = Overrides::new()
        .set("manifest", a.manifest)
        .set("out_dir", a.out_dir)
        .set("metrics", a.metrics)
        .set("scores", a.scores)
        .set("sphere_samples", a.sphere_samples)
        .set("split", a.split)
        .flag("render", a.render);
    let cfg: BaselineConfig = resolve(&BaselineConfig::default(), config_file(&a.config)?, flags.into_value())?;
    let metrics: Vec<Metric> = cfg.metrics.iter().map(|m| Metric::parse(m)).collect::<Result<_, _>>()?;
    if metrics.is_empty() {
        return Err(CliError::user("no metrics requested"));
    }
    let (mut manifest, dir) = load_manifest(require(&cfg.manifest, "manifest")?)?;
    let out = require(&cfg.out_dir, "out-dir")?;
    ensure_dir(out)?;
    write_snapshot(out, "baseline-eval", &cfg)?;
    if let Some(scores) = &cfg.scores {
        apply_scores(&mut manifest, scores, &out.join("dmos.csv"))?;
    }

    let mut by_source: BTreeMap<&str, Vec<&StimulusRecord>> = BTreeMap::new();
    let mut skipped = 0;
    for r in &manifest.records {
        if cfg.split.is_some_and(|s| s != r.split) {
            continue;
        }
        if r.dmos.is_none() {
            skipped += 1;
            continue;
        }
        by_source.entry(&r.source_id).or_default().push(r);
    }
    if skipped > 0 {
        warn!("{skipped} stimuli without DMOS skipped");
    }
    if by_source.is_empty() {
        return Err(CliError::user(
            "no stimuli with DMOS; pass --scores or generate the dataset with --proxy-dmos",
        ));
    }
    let grid = if metrics.contains(&Metric::SPsnr) {
        Some(uniform_sphere_samples(cfg.sphere_samples)?)
    } else {
        None
    };
    let scored: Vec<Vec<(String, Vec<MetricValue>)>> = by_source
        .par_iter()
        .map(|(_, recs)| score_source(&dir, recs, &metrics, grid.as_ref()))
        .collect::<Result<_, _>>()?;
    let values: BTreeMap<String, Vec<MetricValue>> = scored.into_iter().flatten().collect();
    let dmos: BTreeMap<&str, f64> = manifest
        .records
        .iter()
        .filter_map(|r| r.dmos.map(|d| (r.stimulus_id.as_str(), d)))
        .collect();

    let mut reports = Vec::new();
    for (mi, metric) in metrics.iter().enumerate() {
        let series = match metric {
            Metric::Ssim => {
                let (mut ids, mut scores, mut ds) = (Vec::new(), Vec::new(), Vec::new());
                for (id, v) in &values {
                    if let MetricValue::Ssim(s) = v[mi] {
                        ids.push(id.clone());
                        scores.push(s);
                        ds.push(dmos[id.as_str()]);
                    }
                }
                ScoreSeries::new(metric.scorer(), ids, scores, ds)?
            }
            _ => {
                let entries = values
                    .iter()
                    .filter_map(|(id, v)| match v[mi] {
                        MetricValue::Psnr(p) => Some((id.clone(), p, dmos[id.as_str()])),
                        MetricValue::Ssim(_) => None,
                    })
                    .collect();
                ScoreSeries::from_psnr(metric.scorer(), entries)?
            }
        };
        let report = correlation_report(&series)?;
        let path = out.join(format!("scatter_{}.csv", metric.file_stem()));
        let mut w = create(&path)?;
        metrics::write_scatter_csv(&series, &report.logistic, &mut w)?;
        w.flush().map_err(|e| CliError::user(e.to_string()))?;
        if cfg.render {
            write_text(
                &out.join(format!("scatter_{}.svg", metric.file_stem())),
                &render::scatter_svg(&series, &report.logistic),
            )?;
        }
        reports.push(report);
    }

    write_reports(out, "baseline_report", &reports)?;
    print_reports(&reports);
    Ok(())
}

fn write_reports(out: &Path, stem: &str, reports: &[metrics::CorrelationReport]) -> Result<(), CliError> {
    let mut w = create(&out.join(format!("{stem}.csv")))?;
    write_reports_csv(reports, &mut w)?;
    w.flush().map_err(|e| CliError::user(e.to_string()))?;
    let mut w = create(&out.join(format!("{stem}.json")))?;
    write_reports_json(reports, &mut w)?;
    w.flush().map_err(|e| CliError::user(e.to_string()))
}

fn print_reports(reports: &[metrics::CorrelationReport]) {
    println!(
        "{:<10}{:>6}{:>9}{:>9}{:>9}{:>9}{:>9}",
        "scorer", "n", "PLCC", "SROCC", "KROCC", "RMSE", "MAE"
    );
    for r in reports {
        println!(
            "{:<10}{:>6}{:>9.4}{:>9.4}{:>9.4}{:>9.3}{:>9.3}",
            r.scorer, r.n, r.plcc, r.srocc, r.krocc, r.rmse, r.mae
        );
    }
}

// ------------------------------------------------------------- train/ablate

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Architecture defaults (patch 256, 64 channels).
    #[default]
    Full,
    /// Reduced widths at patch 64 for CPU runs.
    Desk,
}

impl Preset {
    fn model(self) -> ModelConfig {
        match self {
            Preset::Full => ModelConfig::default(),
            Preset::Desk => ModelConfig::desk(),
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainingFlags {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Base model configuration; `model` keys in the config file refine it.
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    #[arg(long)]
    patch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    patches_per_stimulus: Option<usize>,
    /// Weight of the score loss.
    #[arg(long)]
    lambda1: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    flags: TrainingFlags,
    /// FULL, NO_RSAB or NO_CONCAT.
    #[arg(long, value_parser = parse_ablation)]
    ablation: Option<Ablation>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    flags: TrainingFlags,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub manifest: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub preset: Preset,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

fn resolve_training(f: TrainingFlags, ablation: Option<Ablation>) -> Result<TrainingConfig, CliError> {
    let file = config_file(&f.config)?;
    let preset = match f.preset {
        Some(p) => p,
        None => match file.as_ref().and_then(|v| v.get("preset")) {
            Some(p) => serde_json::from_value(p.clone())
                .map_err(|e| CliError::user(format!("invalid preset in config file: {e}")))?,
            None => Preset::default(),
        },
    };
    let base = TrainingConfig {
        preset,
        model: preset.model(),
        ..Default::default()
    };
    let flags = Overrides::new()
        .set("manifest", f.manifest)
        .set("out_dir", f.out_dir)
        .set("preset", f.preset)
        .nest("model", Overrides::new().set("patch_size", f.patch_size))
        .nest(
            "train",
            Overrides::new()
                .set("epochs", f.epochs)
                .set("learning_rate", f.learning_rate)
                .set("batch_size", f.batch_size)
                .set("seed", f.seed)
                .set("patches_per_stimulus", f.patches_per_stimulus)
                .set("lambda1", f.lambda1)
                .set("ablation", ablation),
        );
    let cfg: TrainingConfig = resolve(&base, file, flags.into_value())?;
    cfg.model.validate()?;
    cfg.train.validate()?;
    Ok(cfg)
}

fn write_epoch_csv(path: &Path, epochs: &[EpochLoss]) -> Result<(), CliError> {
    let mut w = create(path)?;
    let io = |e: std::io::Error| CliError::user(format!("cannot write {}: {e}", path.display()));
    writeln!(w, "epoch,L,L_e,L_a").map_err(io)?;
    for e in epochs {
        writeln!(w, "{},{},{},{}", e.epoch, e.total, e.enhancement, e.score).map_err(io)?;
    }
    w.flush().map_err(io)
}

fn train(a: TrainArgs) -> Result<(), CliError> {
    let cfg = resolve_training(a.flags, a.ablation)?;
    let (manifest, dir) = load_manifest(require(&cfg.manifest, "manifest")?)?;
    let out = require(&cfg.out_dir, "out-dir")?;
    ensure_dir(out)?;
    write_snapshot(out, "train", &cfg)?;
    let outcome = training::train(&manifest, &dir, &cfg.model, &cfg.train, out)?;
    write_epoch_csv(&out.join("epoch_loss.csv"), &outcome.epochs)?;
    if let Some(last) = outcome.epochs.last() {
        println!(
            "trained {} steps over {} epochs; final epoch L={:.4} L_e={:.4} L_a={:.4}",
            outcome.steps,
            outcome.epochs.len(),
            last.total,
            last.enhancement,
            last.score
        );
    }
    println!("checkpoint: {}", outcome.checkpoint.display());
    Ok(())
}

fn ablate(a: AblateArgs) -> Result<(), CliError> {
    let cfg = resolve_training(a.flags, None)?;
    let (manifest, dir) = load_manifest(require(&cfg.manifest, "manifest")?)?;
    let out = require(&cfg.out_dir, "out-dir")?;
    ensure_dir(out)?;
    write_snapshot(out, "ablate", &cfg)?;
    let rows = training::ablate(&manifest, &dir, &cfg.model, &cfg.train, out)?;
    let mut w = create(&out.join("ablation.csv"))?;
    write_ablation_csv(&rows, &mut w)?;
    w.flush().map_err(|e| CliError::user(e.to_string()))?;
    println!(
        "{:<10}{:>9}{:>9}{:>9}{:>9}{:>9}{:>11}",
        "variant", "PLCC", "SROCC", "KROCC", "RMSE", "MAE", "final L"
    );
    for r in &rows {
        let c = &r.report;
        println!(
            "{:<10}{:>9.4}{:>9.4}{:>9.4}{:>9.3}{:>9.3}{:>11.4}",
            r.ablation.variant_name(),
            c.plcc,
            c.srocc,
            c.krocc,
            c.rmse,
            c.mae,
            r.final_loss
        );
    }
    Ok(())
}

// ----------------------------------------------------------------- evaluate

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Checkpoint written by `panoqa train` (`.ckpt` with its `.json` sidecar).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Split to score (default test).
    #[arg(long, value_parser = parse_split)]
    split: Option<Split>,
    /// Also write an SVG scatter plot.
    #[arg(long)]
    render: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluateConfig {
    pub checkpoint: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub split: Split,
    pub render: bool,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            checkpoint: None,
            manifest: None,
            out_dir: None,
            split: Split::Test,
            render: false,
        }
    }
}

fn evaluate(a: EvaluateArgs) -> Result<(), CliError> {
    let flags = Overrides::new()
        .set("checkpoint", a.checkpoint)
        .set("manifest", a.manifest)
        .set("out_dir", a.out_dir)
        .set("split", a.split)
        .flag("render", a.render);
    let cfg: EvaluateConfig = resolve(&EvaluateConfig::default(), config_file(&a.config)?, flags.into_value())?;
    let ckpt = require(&cfg.checkpoint, "checkpoint")?;
    if !ckpt.is_file() {
        return Err(CliError::user(format!("checkpoint {} not found", ckpt.display())));
    }
    let (manifest, dir) = load_manifest(require(&cfg.manifest, "manifest")?)?;
    let out = require(&cfg.out_dir, "out-dir")?;
    ensure_dir(out)?;
    write_snapshot(out, "evaluate", &cfg)?;

    let (net, meta) = training::load_checkpoint(ckpt)?;
    info!("loaded {} (epoch {}, step {})", ckpt.display(), meta.epoch, meta.step);
    let result = training::evaluate(&net, &manifest, &dir, cfg.split)?;

    let mut w = create(&out.join("predictions.csv"))?;
    write_predictions_csv(&result.stimuli, &mut w)?;
    w.flush().map_err(|e| CliError::user(e.to_string()))?;
    let mut w = create(&out.join("scatter.csv"))?;
    metrics::write_scatter_csv(&result.series, &result.report.logistic, &mut w)?;
    w.flush().map_err(|e| CliError::user(e.to_string()))?;
    if cfg.render {
        write_text(
            &out.join("scatter.svg"),
            &render::scatter_svg(&result.series, &result.report.logistic),
        )?;
    }
    write_reports(out, "eval_report", std::slice::from_ref(&result.report))?;
    print_reports(std::slice::from_ref(&result.report));
    Ok(())
}

// ---------------------------------------------------------------- plot-data

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Raw subjective scores; without it the manifest DMOS are used.
    #[arg(long)]
    scores: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Also write SVG boxplots.
    #[arg(long)]
    render: bool,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PlotConfig {
    pub manifest: Option<PathBuf>,
    pub scores: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub render: bool,
}

fn plot_data(a: PlotArgs) -> Result<(), CliError> {
    let flags = Overrides::new()
        .set("manifest", a.manifest)
        .set("scores", a.scores)
        .set("out_dir", a.out_dir)
        .flag("render", a.render);
    let cfg: PlotConfig = resolve(&PlotConfig::default(), config_file(&a.config)?, flags.into_value())?;
    let (mut manifest, _) = load_manifest(require(&cfg.manifest, "manifest")?)?;
    let out = require(&cfg.out_dir, "out-dir")?;
    ensure_dir(out)?;
    write_snapshot(out, "plot-data", &cfg)?;
    if let Some(scores) = &cfg.scores {
        apply_scores(&mut manifest, scores, &out.join("dmos.csv"))?;
    }
    let dmos: BTreeMap<String, f64> = manifest
        .records
        .iter()
        .filter_map(|r| r.dmos.map(|d| (r.stimulus_id.clone(), d)))
        .collect();
    if dmos.is_empty() {
        return Err(CliError::user(
            "no DMOS available; pass --scores or generate the dataset with --proxy-dmos",
        ));
    }
    for (grouping, stem, title) in [
        (Grouping::ByQf, "boxplot_qf", "DMOS by quality factor"),
        (Grouping::ByProjection, "boxplot_projection", "DMOS by projection"),
    ] {
        let stats = subjective::boxplot_stats(&dmos, &manifest, grouping);
        let mut w = create(&out.join(format!("{stem}.csv")))?;
        subjective::write_boxplot_csv(&stats, &mut w)?;
        w.flush().map_err(|e| CliError::user(e.to_string()))?;
        if cfg.render && !stats.is_empty() {
            write_text(&out.join(format!("{stem}.svg")), &render::boxplot_svg(title, &stats))?;
        }
        for s in &stats {
            println!("{:<8} n={:<4} median={:.2} IQR=[{:.2}, {:.2}]", s.group, s.n, s.median, s.q1, s.q3);
        }
    }
    Ok(())
}
