//! Optimisation loop, checkpointing, patch-averaged evaluation and ablations.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::{info, warn};
use panoqa_core::dataset::{patch_origins, reference_path, DatasetManifest, PatchMode, Split, StimulusRecord};
use panoqa_core::metrics::{correlation_report, CorrelationReport, ScoreSeries};
use panoqa_core::{Error, Projection, RasterImage, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::graph::{dwt_tensor, Graph};
use crate::loss::{total_loss, LossWeights};
use crate::model::{Ablation, ModelConfig, SapNet};
use crate::params::{Adam, AdamConfig, ParamStore};
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub lambda1: f64,
    /// Sub-band weights for `[LL, LH, HL, HH]`.
    pub beta: [f64; 4],
    pub epsilon: f64,
    pub epochs: usize,
    pub seed: u64,
    pub ablation: Ablation,
    /// Random non-overlapping patches drawn from each stimulus per epoch.
    pub patches_per_stimulus: usize,
    /// Start the final FC bias at the mean training DMOS.
    pub init_score_bias: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 8,
            lambda1: 10.0,
            beta: [1.0, 2.0, 2.0, 4.0],
            epsilon: 0.001,
            epochs: 10,
            seed: 0,
            ablation: Ablation::None,
            patches_per_stimulus: 4,
            init_score_bias: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.learning_rate, self.lambda1, self.epsilon];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::arg("learning_rate, lambda1 and epsilon must be positive"));
        }
        if self.beta.iter().any(|b| !(*b > 0.0 && b.is_finite())) {
            return Err(Error::arg("every beta weight must be positive"));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.patches_per_stimulus == 0 {
            return Err(Error::arg("batch_size, epochs and patches_per_stimulus must be positive"));
        }
        Ok(())
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            lambda1: self.lambda1,
            beta: self.beta,
            epsilon: self.epsilon,
        }
    }
}

/// Scalar loss terms of one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLoss {
    pub total: f64,
    pub enhancement: f64,
    pub score: f64,
}

/// Single owner of the parameters during optimisation.
pub struct Trainer {
    pub net: SapNet,
    pub config: TrainConfig,
    adam: Adam,
}

impl Trainer {
    pub fn new(net: SapNet, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let adam = Adam::new(AdamConfig {
            learning_rate: config.learning_rate,
            ..AdamConfig::default()
        });
        Ok(Self { net, config, adam })
    }

    pub fn steps(&self) -> u64 {
        self.adam.step_count()
    }

    /// Loss and gradients of one batch, without updating anything.
    pub fn loss_and_grads(
        net: &SapNet,
        weights: &LossWeights,
        batch: &Tensor,
        target_subbands: &Tensor,
        scores: &[f64],
    ) -> Result<(StepLoss, BTreeMap<String, Vec<f64>>, Graph)> {
        let mut g = Graph::new(true);
        let x = g.input(batch.clone());
        let out = net.forward_graph(&mut g, x)?;
        let l = total_loss(&mut g, &out, target_subbands, scores, weights)?;
        let loss = StepLoss {
            total: g.value(l.total).item(),
            enhancement: g.value(l.enhancement).item(),
            score: g.value(l.score).item(),
        };
        if !loss.total.is_finite() {
            return Ok((loss, BTreeMap::new(), g));
        }
        g.backward(l.total);
        let grads = g.param_grads();
        Ok((loss, grads, g))
    }

    /// Forward, backward and one Adam update. A non-finite loss leaves the
    /// parameters untouched and returns [`Error::Numerical`].
    pub fn step(&mut self, batch: &Tensor, target_subbands: &Tensor, scores: &[f64]) -> Result<StepLoss> {
        let (loss, grads, g) =
            Self::loss_and_grads(&self.net, &self.config.loss_weights(), batch, target_subbands, scores)?;
        if !loss.total.is_finite() || grads.values().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite loss at step {} (L = {}, L_e = {}, L_a = {})",
                self.adam.step_count() + 1,
                loss.total,
                loss.enhancement,
                loss.score
            )));
        }
        self.adam.step(&mut self.net.params, &grads)?;
        let momentum = self.net.config.norm.momentum;
        for obs in g.bn_observations() {
            self.net.params.update_running(&obs.name, &obs.mean, &obs.var, momentum)?;
        }
        Ok(loss)
    }
}

/// Sidecar metadata written next to each parameter file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub ablation: Ablation,
    pub train: TrainConfig,
    pub epoch: usize,
    pub step: u64,
    pub seed: u64,
    pub metrics: BTreeMap<String, f64>,
}

fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn save_checkpoint(net: &SapNet, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    net.params.save(path)?;
    let json = serde_json::to_string_pretty(meta).map_err(|source| Error::Json {
        context: "checkpoint metadata".into(),
        source,
    })?;
    let p = sidecar(path);
    std::fs::write(&p, json + "\n").map_err(|e| Error::io(&p, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(SapNet, CheckpointMeta)> {
    let p = sidecar(path);
    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&text).map_err(|source| Error::Json {
        context: p.display().to_string(),
        source,
    })?;
    let params = ParamStore::load(path)?;
    let net = SapNet::from_params(meta.model.clone(), meta.ablation, params)?;
    Ok((net, meta))
}

/// Crop at `(x, y)` as a `(1, 3, size, size)` tensor.
pub fn patch_tensor(image: &RasterImage, x: usize, y: usize, size: usize) -> Result<Tensor> {
    if image.channels() != 3 {
        return Err(Error::arg(format!("expected an RGB image, got {} channel(s)", image.channels())));
    }
    let crop = image.crop(x, y, size, size)?;
    Ok(Tensor::new(Shape::new(1, 3, size, size), crop.data().to_vec()))
}

struct Stimulus {
    record: StimulusRecord,
    dmos: f64,
    impaired: RasterImage,
    reference: usize,
}

fn load_stimulus_image(manifest_dir: &Path, record: &StimulusRecord) -> Result<RasterImage> {
    let p = manifest_dir.join(&record.path);
    let img = RasterImage::load(&p, Projection::Erp)?;
    if img.channels() != 3 {
        return Err(Error::arg(format!("{}: stimulus is not RGB", record.stimulus_id)));
    }
    Ok(img)
}

fn load_training_set(manifest: &DatasetManifest, manifest_dir: &Path, patch: usize) -> Result<(Vec<Stimulus>, Vec<RasterImage>)> {
    let mut refs: Vec<RasterImage> = Vec::new();
    let mut ref_index: BTreeMap<String, usize> = BTreeMap::new();
    let mut out = Vec::new();
    for r in manifest.split(Split::Train) {
        let dmos = r
            .dmos
            .ok_or_else(|| Error::arg(format!("training stimulus {} has no DMOS", r.stimulus_id)))?;
        let reference = match ref_index.get(&r.source_id) {
            Some(&i) => i,
            None => {
                let p = reference_path(manifest_dir, &r.source_id);
                let img = RasterImage::load(&p, Projection::Erp).map_err(|e| {
                    Error::arg(format!("stimulus {}: reference {} unusable: {e}", r.stimulus_id, p.display()))
                })?;
                refs.push(img);
                ref_index.insert(r.source_id.clone(), refs.len() - 1);
                refs.len() - 1
            }
        };
        let impaired = load_stimulus_image(manifest_dir, r)?;
        let rimg = &refs[reference];
        if (rimg.width(), rimg.height()) != (impaired.width(), impaired.height()) {
            return Err(Error::arg(format!(
                "stimulus {} is {}x{} but its reference is {}x{}",
                r.stimulus_id,
                impaired.width(),
                impaired.height(),
                rimg.width(),
                rimg.height()
            )));
        }
        if impaired.width().min(impaired.height()) < patch {
            return Err(Error::arg(format!("stimulus {} is smaller than one {patch}px patch", r.stimulus_id)));
        }
        out.push(Stimulus {
            record: r.clone(),
            dmos,
            impaired,
            reference,
        });
    }
    if out.is_empty() {
        return Err(Error::arg("the manifest has no TRAIN stimuli"));
    }
    Ok((out, refs))
}

/// Mean loss terms of one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub total: f64,
    pub enhancement: f64,
    pub score: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub net: SapNet,
    pub checkpoint: PathBuf,
    pub epochs: Vec<EpochLoss>,
    pub steps: u64,
}

pub const TRAIN_LOG_HEADER: &str = "step,L,L_e,L_a";

fn write_nan_dump(out_dir: &Path, epoch: usize, step: u64, ids: &[&str], err: &Error, params: &ParamStore) -> Result<PathBuf> {
    let nonfinite: Vec<&str> = params.iter().filter(|(_, t)| !t.is_finite()).map(|(n, _)| n).collect();
    let dump = serde_json::json!({
        "epoch": epoch,
        "step": step,
        "error": err.to_string(),
        "batch_stimuli": ids,
        "nonfinite_parameters": nonfinite,
    });
    let p = out_dir.join("nan_dump.json");
    std::fs::write(&p, serde_json::to_string_pretty(&dump).expect("json value") + "\n").map_err(|e| Error::io(&p, e))?;
    Ok(p)
}

/// Trains on the TRAIN split of `manifest` (paths relative to `manifest_dir`).
/// Writes `train_log.csv` and `checkpoints/epoch_NNN.ckpt` (+ `.json`) under
/// `out_dir`; the last checkpoint is also written as `checkpoint.ckpt`.
pub fn train(
    manifest: &DatasetManifest,
    manifest_dir: &Path,
    model: &ModelConfig,
    config: &TrainConfig,
    out_dir: &Path,
) -> Result<TrainOutcome> {
    config.validate()?;
    model.validate()?;
    let p = model.patch_size;
    let (stimuli, refs) = load_training_set(manifest, manifest_dir, p)?;
    let mut net = SapNet::new(model.clone(), config.ablation, config.seed)?;
    if config.init_score_bias {
        let mean = stimuli.iter().map(|s| s.dmos).sum::<f64>() / stimuli.len() as f64;
        net.params.get_mut("qr.fc2.bias")?.data[0] = mean;
    }
    let mut trainer = Trainer::new(net, config.clone())?;

    let ckpt_dir = out_dir.join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
    let log_path = out_dir.join("train_log.csv");
    let mut log = std::io::BufWriter::new(std::fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?);
    writeln!(log, "{TRAIN_LOG_HEADER}").map_err(|e| Error::io(&log_path, e))?;

    let mut epochs = Vec::new();
    let mut last = ckpt_dir.join("epoch_000.ckpt");
    for epoch in 1..=config.epochs {
        let mut samples: Vec<(usize, (usize, usize))> = Vec::new();
        for (i, s) in stimuli.iter().enumerate() {
            let (w, h) = (s.impaired.width(), s.impaired.height());
            let count = config.patches_per_stimulus.min((w / p) * (h / p));
            let seed = config
                .seed
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add((epoch as u64) << 32)
                .wrapping_add(i as u64);
            for o in patch_origins(w, h, p, count, seed, PatchMode::RandomNonOverlap)? {
                samples.push((i, o));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ (epoch as u64).wrapping_mul(0x5851_F42D_4C95_7F2D));
        samples.shuffle(&mut rng);

        let mut sums = [0.0; 3];
        let mut batches = 0usize;
        for chunk in samples.chunks(config.batch_size) {
            let mut xs = Vec::with_capacity(chunk.len());
            let mut fs = Vec::with_capacity(chunk.len());
            let mut scores = Vec::with_capacity(chunk.len());
            for &(i, (x, y)) in chunk {
                let s = &stimuli[i];
                xs.push(patch_tensor(&s.impaired, x, y, p)?);
                fs.push(dwt_tensor(&patch_tensor(&refs[s.reference], x, y, p)?));
                scores.push(s.dmos);
            }
            let batch = Tensor::stack(&xs);
            let target = Tensor::stack(&fs);
            let loss = match trainer.step(&batch, &target, &scores) {
                Ok(l) => l,
                Err(Error::Numerical(msg)) => {
                    let e = Error::Numerical(msg.clone());
                    let ids: Vec<&str> = chunk.iter().map(|&(i, _)| stimuli[i].record.stimulus_id.as_str()).collect();
                    let dump = write_nan_dump(out_dir, epoch, trainer.steps() + 1, &ids, &e, &trainer.net.params)?;
                    log.flush().map_err(|e| Error::io(&log_path, e))?;
                    return Err(Error::Numerical(format!("{msg}; diagnostics in {}", dump.display())));
                }
                Err(e) => return Err(e),
            };
            writeln!(log, "{},{},{},{}", trainer.steps(), loss.total, loss.enhancement, loss.score)
                .map_err(|e| Error::io(&log_path, e))?;
            sums[0] += loss.total;
            sums[1] += loss.enhancement;
            sums[2] += loss.score;
            batches += 1;
        }
        let e = EpochLoss {
            epoch,
            total: sums[0] / batches as f64,
            enhancement: sums[1] / batches as f64,
            score: sums[2] / batches as f64,
        };
        info!(
            "epoch {epoch}/{}: L = {:.5}, L_e = {:.5}, L_a = {:.4}",
            config.epochs, e.total, e.enhancement, e.score
        );
        epochs.push(e);

        let meta = CheckpointMeta {
            model: model.clone(),
            ablation: config.ablation,
            train: config.clone(),
            epoch,
            step: trainer.steps(),
            seed: config.seed,
            metrics: BTreeMap::from([
                ("L".to_string(), e.total),
                ("L_e".to_string(), e.enhancement),
                ("L_a".to_string(), e.score),
            ]),
        };
        last = ckpt_dir.join(format!("epoch_{epoch:03}.ckpt"));
        save_checkpoint(&trainer.net, &meta, &last)?;
        if epoch == config.epochs {
            save_checkpoint(&trainer.net, &meta, &out_dir.join("checkpoint.ckpt"))?;
        }
    }
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    let steps = trainer.steps();
    Ok(TrainOutcome {
        net: trainer.net,
        checkpoint: out_dir.join("checkpoint.ckpt"),
        epochs,
        steps,
    })
    .inspect(|_| {
        if !last.exists() {
            warn!("no epoch checkpoint was written");
        }
    })
}

/// Inference batch size used when scoring tiles.
const EVAL_BATCH: usize = 8;

/// Arithmetic mean of per-patch scores.
pub fn mean_patch_score(scores: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::arg("no patch scores to average"));
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Scores of every aligned tile of `image`, row-major.
pub fn tile_scores(net: &SapNet, image: &RasterImage) -> Result<Vec<f64>> {
    let p = net.config.patch_size;
    let origins = patch_origins(image.width(), image.height(), p, 0, 0, PatchMode::TileAll)?;
    let mut out = Vec::with_capacity(origins.len());
    for chunk in origins.chunks(EVAL_BATCH) {
        let tiles = chunk
            .iter()
            .map(|&(x, y)| patch_tensor(image, x, y, p))
            .collect::<Result<Vec<_>>>()?;
        out.extend(net.predict(&Tensor::stack(&tiles))?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StimulusScore {
    pub stimulus_id: String,
    pub source_id: String,
    pub qf: u32,
    pub predicted: f64,
    pub dmos: f64,
    pub patches: usize,
}

#[derive(Debug, Clone)]
pub struct EvalResult {
    pub stimuli: Vec<StimulusScore>,
    pub series: ScoreSeries,
    pub report: CorrelationReport,
}

pub const SAPNET_SCORER: &str = "SAP-net";

/// Scores every stimulus of `split` by averaging its tile scores and
/// correlates the result with DMOS.
pub fn evaluate(net: &SapNet, manifest: &DatasetManifest, manifest_dir: &Path, split: Split) -> Result<EvalResult> {
    let records: Vec<&StimulusRecord> = manifest.split(split).collect();
    if records.is_empty() {
        return Err(Error::arg(format!("the manifest has no {split:?} stimuli to evaluate")));
    }
    let stimuli = records
        .par_iter()
        .map(|r| -> Result<StimulusScore> {
            let dmos = r
                .dmos
                .ok_or_else(|| Error::arg(format!("stimulus {} has no DMOS", r.stimulus_id)))?;
            let img = load_stimulus_image(manifest_dir, r)?;
            let scores = tile_scores(net, &img)?;
            Ok(StimulusScore {
                stimulus_id: r.stimulus_id.clone(),
                source_id: r.source_id.clone(),
                qf: r.qf,
                predicted: mean_patch_score(&scores)?,
                dmos,
                patches: scores.len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(bad) = stimuli.iter().find(|s| !s.predicted.is_finite()) {
        return Err(Error::Numerical(format!("non-finite prediction for {}", bad.stimulus_id)));
    }
    let series = ScoreSeries::new(
        SAPNET_SCORER,
        stimuli.iter().map(|s| s.stimulus_id.clone()).collect(),
        stimuli.iter().map(|s| s.predicted).collect(),
        stimuli.iter().map(|s| s.dmos).collect(),
    )?;
    let report = correlation_report(&series)?;
    Ok(EvalResult {
        stimuli,
        series,
        report,
    })
}

pub fn evaluate_checkpoint(checkpoint: &Path, manifest: &DatasetManifest, manifest_dir: &Path) -> Result<EvalResult> {
    let (net, _) = load_checkpoint(checkpoint)?;
    evaluate(&net, manifest, manifest_dir, Split::Test)
}

pub fn write_predictions_csv(stimuli: &[StimulusScore], mut w: impl Write) -> Result<()> {
    let io = |e| Error::io("predictions", e);
    writeln!(w, "stimulus_id,source_id,qf,predicted,dmos,patches").map_err(io)?;
    for s in stimuli {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            s.stimulus_id, s.source_id, s.qf, s.predicted, s.dmos, s.patches
        )
        .map_err(io)?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub ablation: Ablation,
    pub report: CorrelationReport,
    pub final_loss: f64,
}

/// Trains and evaluates FULL, NO_RSAB and NO_CONCAT with identical seeds and
/// budget; each variant's artifacts go to `out_dir/<variant>/`.
pub fn ablate(
    manifest: &DatasetManifest,
    manifest_dir: &Path,
    model: &ModelConfig,
    config: &TrainConfig,
    out_dir: &Path,
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for ablation in Ablation::ALL {
        info!("ablation variant {}", ablation.variant_name());
        let cfg = TrainConfig {
            ablation,
            ..config.clone()
        };
        let dir = out_dir.join(ablation.variant_name().to_lowercase());
        let outcome = train(manifest, manifest_dir, model, &cfg, &dir)?;
        let eval = evaluate(&outcome.net, manifest, manifest_dir, Split::Test)?;
        rows.push(AblationRow {
            ablation,
            report: eval.report,
            final_loss: outcome.epochs.last().map_or(f64::NAN, |e| e.total),
        });
    }
    Ok(rows)
}

pub const ABLATION_CSV_HEADER: &str = "variant,n,plcc,srocc,krocc,rmse,mae,final_loss";

pub fn write_ablation_csv(rows: &[AblationRow], mut w: impl Write) -> Result<()> {
    let io = |e| Error::io("ablation table", e);
    writeln!(w, "{ABLATION_CSV_HEADER}").map_err(io)?;
    for r in rows {
        let c = &r.report;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.ablation.variant_name(),
            c.n,
            c.plcc,
            c.srocc,
            c.krocc,
            c.rmse,
            c.mae,
            r.final_loss
        )
        .map_err(io)?;
    }
    Ok(())
}
