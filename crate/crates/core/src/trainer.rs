//! Mini-batch Adam training, evaluation and lambda sweeps.
//!
//! Every random stream is derived from `TrainConfig::seed`: parameter
//! initialization, patch positions and graph node sampling each have their
//! own stream, so runs that differ only in lambda see identical data.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::data::fundus::{FundusSample, InputMode, PreparedSample};
use crate::data::patches::{extract_patch, sample_patch_origins, Augment, PatchPair, DEFAULT_PATCH};
use crate::error::{Error, Result};
use crate::graph_smoothing::{PatchLaplacians, DEFAULT_SAMPLE_M};
use crate::inference::{predict_probability_map, DEFAULT_STRIDE};
use crate::metrics::{auc_from_scores, confusion, ConfusionCounts, MetricsReport};
use crate::objective::{sigmoid, total_objective, ObjectiveValue, Reduction};
use crate::optim::{adam_step_network, AdamConfig, AdamState};
use crate::raster::Plane;
use crate::real::Real;
use crate::seed::{self, stream};
use crate::segnet::{backward, checkpoint, forward, predict_logits, NetworkConfig, NetworkParams};
use crate::tensor::Tensor4;

pub const EPOCH_LOG_HEADER: &str = "epoch,mean_bce,mean_s,total_objective,val_auc";
pub const LOG_FILE: &str = "epoch_log.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.vgsn";
pub const FINAL_CHECKPOINT_FILE: &str = "final.vgsn";

/// Lambda values evaluated in the reference experiments.
pub const PAPER_LAMBDAS: [f64; 4] = [1e-4, 1e-5, 1e-6, 1e-7];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl std::str::FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(Error::Config(format!("unknown precision `{other}` (f32|f64)"))),
        }
    }
}

impl std::fmt::Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lambda: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub patches_per_epoch: usize,
    /// Sampled graph nodes per region and patch.
    pub sample_m: usize,
    pub seed: u64,
    pub reduction: Reduction,
    /// Selects the scalar type callers instantiate the generic entry points with.
    pub precision: Precision,
    pub widths: [usize; 3],
    pub input_mode: InputMode,
    pub patch_size: usize,
    pub augment: Augment,
    /// Trailing images of the training list held out for per-epoch AUC.
    pub validation_images: usize,
    pub eval_stride: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-6,
            learning_rate: 1e-3,
            epochs: 100,
            batch_size: 32,
            patches_per_epoch: 20_000,
            sample_m: DEFAULT_SAMPLE_M,
            seed: 0,
            reduction: Reduction::Sum,
            precision: Precision::F32,
            widths: [32, 64, 128],
            input_mode: InputMode::Green,
            patch_size: DEFAULT_PATCH,
            augment: Augment::default(),
            validation_images: 0,
            eval_stride: DEFAULT_STRIDE,
        }
    }
}

impl TrainConfig {
    pub fn network(&self) -> NetworkConfig {
        NetworkConfig {
            in_channels: self.input_mode.channels(),
            widths: self.widths,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning rate must be > 0, got {}", self.learning_rate));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return fail(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.patches_per_epoch == 0 {
            return fail("epochs, batch size and patches per epoch must be >= 1".into());
        }
        if self.patch_size == 0 || !self.patch_size.is_multiple_of(4) {
            return fail(format!("patch size {} must be a positive multiple of 4", self.patch_size));
        }
        if self.eval_stride == 0 {
            return fail("evaluation stride must be >= 1".into());
        }
        if self.widths.contains(&0) {
            return fail(format!("widths must be >= 1, got {:?}", self.widths));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Cross-entropy per pixel, averaged over the epoch.
    pub mean_bce: f64,
    /// Smoothing penalty per patch, averaged over the epoch.
    pub mean_s: f64,
    /// Step objective (under the configured reduction) averaged over steps.
    pub total_objective: f64,
    pub val_auc: Option<f64>,
}

impl EpochRecord {
    pub fn csv_row(&self) -> String {
        let auc = self.val_auc.map(|a| a.to_string()).unwrap_or_default();
        format!("{},{},{},{},{}", self.epoch, self.mean_bce, self.mean_s, self.total_objective, auc)
    }
}

pub fn epoch_log_csv(log: &[EpochRecord]) -> String {
    let mut out = String::from(EPOCH_LOG_HEADER);
    out.push('\n');
    for r in log {
        let _ = writeln!(out, "{}", r.csv_row());
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub params: NetworkParams<T>,
    pub log: Vec<EpochRecord>,
}

fn batch_tensors<T: Real>(batch: &[PatchPair]) -> Result<(Tensor4<T>, Tensor4<T>)> {
    let first = &batch[0];
    let (c, s) = (first.channels, first.size);
    let mut x = Vec::with_capacity(batch.len() * c * s * s);
    let mut t = Vec::with_capacity(batch.len() * s * s);
    for p in batch {
        x.extend(p.input.iter().map(|&v| T::from_f64(v)));
        t.extend(p.target.iter().map(|&v| T::from_f64(v)));
    }
    Ok((
        Tensor4::from_vec([batch.len(), c, s, s], x)?,
        Tensor4::from_vec([batch.len(), 1, s, s], t)?,
    ))
}

/// Patch plan for one epoch: `patches_per_epoch` split evenly over the
/// images (earlier images take the remainder), then shuffled.
fn epoch_plan(
    samples: &[PreparedSample],
    config: &TrainConfig,
    rng: &mut seed::Rng,
) -> Result<Vec<(usize, usize, usize, crate::data::Transform)>> {
    let n = samples.len();
    let mut plan = Vec::with_capacity(config.patches_per_epoch);
    for (i, s) in samples.iter().enumerate() {
        let quota = config.patches_per_epoch / n + usize::from(i < config.patches_per_epoch % n);
        for (o, t) in sample_patch_origins(s, i, quota, config.patch_size, &config.augment, rng)? {
            plan.push((i, o.row, o.col, t));
        }
    }
    plan.shuffle(rng);
    Ok(plan)
}

/// One optimizer step on a batch. Returns the objective before the update.
pub fn train_step<T: Real>(
    params: &mut NetworkParams<T>,
    state: &mut AdamState<T>,
    adam: &AdamConfig,
    batch: &[PatchPair],
    config: &TrainConfig,
    graph_rng: &mut seed::Rng,
) -> Result<ObjectiveValue> {
    let (x, t) = batch_tensors::<T>(batch)?;
    let (logits, cache) = forward(params, &x)?;
    let (value, grad) = total_objective(&logits, &t, config.lambda, config.sample_m, config.reduction, graph_rng)?;
    let (grads, _) = backward(params, &cache, &grad)?;
    adam_step_network(params, &grads, state, adam)?;
    Ok(value)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Train a fresh network. With `out_dir`, the epoch log and the latest
/// checkpoint are rewritten after every epoch and `final.vgsn` at the end.
pub fn train<T: Real>(
    config: &TrainConfig,
    samples: &[FundusSample],
    out_dir: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let prepared: Vec<PreparedSample> = samples.iter().map(|s| PreparedSample::new(s, config.input_mode)).collect();
    let held_out = if config.validation_images < prepared.len() {
        config.validation_images
    } else {
        0
    };
    let (train_set, val_set) = prepared.split_at(prepared.len() - held_out);

    let mut params = NetworkParams::<T>::init(&config.network(), &mut seed::stream_rng(config.seed, stream::INIT))?;
    let mut state = AdamState::for_params(&params);
    let adam = AdamConfig::with_lr(config.learning_rate);
    let mut patch_rng = seed::stream_rng(config.seed, stream::PATCHES);
    let mut graph_rng = seed::stream_rng(config.seed, stream::GRAPH);
    let pixels_per_patch = (config.patch_size * config.patch_size) as f64;

    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let plan = epoch_plan(train_set, config, &mut patch_rng)?;
        let (mut bce_sum, mut s_sum, mut obj_sum, mut steps) = (0.0, 0.0, 0.0, 0usize);
        for chunk in plan.chunks(config.batch_size) {
            let batch: Vec<PatchPair> = chunk
                .iter()
                .map(|&(i, r, c, t)| extract_patch(&train_set[i], i, r, c, config.patch_size, t))
                .collect();
            let v = train_step(&mut params, &mut state, &adam, &batch, config, &mut graph_rng)?;
            bce_sum += match config.reduction {
                Reduction::Sum => v.bce,
                Reduction::Mean => v.bce * batch.len() as f64 * pixels_per_patch,
            };
            s_sum += v.smoothing_sum;
            obj_sum += v.total;
            steps += 1;
        }
        let patches = plan.len() as f64;
        let val_auc = if val_set.is_empty() {
            None
        } else {
            Some(evaluate(&params, val_set, 0.5, true, config.patch_size, config.eval_stride)?.pooled.auc)
        };
        let record = EpochRecord {
            epoch,
            mean_bce: bce_sum / (patches * pixels_per_patch),
            mean_s: s_sum / patches,
            total_objective: obj_sum / steps as f64,
            val_auc,
        };
        on_epoch(&record);
        log.push(record);
        if let Some(dir) = out_dir {
            write_file(&dir.join(LOG_FILE), &epoch_log_csv(&log))?;
            checkpoint::save(&params, &dir.join(CHECKPOINT_FILE))?;
        }
    }
    if let Some(dir) = out_dir {
        checkpoint::save(&params, &dir.join(FINAL_CHECKPOINT_FILE))?;
    }
    Ok(TrainOutcome { params, log })
}

#[derive(Debug, Clone)]
pub struct ImageResult {
    pub report: MetricsReport,
    pub probability: Plane<f64>,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub images: Vec<ImageResult>,
    /// Metrics over all evaluated pixels of all images together.
    pub pooled: MetricsReport,
}

/// Predict every image and score it. With `use_mask`, pixels outside a
/// sample's field-of-view mask are excluded.
pub fn evaluate<T: Real>(
    params: &NetworkParams<T>,
    samples: &[PreparedSample],
    threshold: f64,
    use_mask: bool,
    patch_size: usize,
    stride: usize,
) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut images = Vec::with_capacity(samples.len());
    let mut pooled_counts = ConfusionCounts::default();
    let mut pooled_scores = Vec::new();
    for s in samples {
        let prob = predict_probability_map(params, s, patch_size, stride)?;
        let mask = if use_mask { s.fov_mask.as_ref() } else { None };
        let counts = confusion(&prob, &s.label, mask, threshold)?;
        pooled_counts.merge(&counts);
        let scores: Vec<(f64, bool)> = prob
            .data()
            .iter()
            .zip(s.label.data())
            .enumerate()
            .filter(|(i, _)| mask.is_none_or(|m| m.data()[*i] != 0))
            .map(|(_, (&p, &l))| (p, l != 0))
            .collect();
        let report = MetricsReport::from_parts(&counts, auc_from_scores(&scores)?, threshold)?;
        pooled_scores.extend(scores);
        images.push(ImageResult { report, probability: prob });
    }
    let pooled = MetricsReport::from_parts(&pooled_counts, auc_from_scores(&pooled_scores)?, threshold)?;
    Ok(Evaluation { images, pooled })
}

/// Mean smoothing penalty `S` of the network's predictions over random
/// patches of held-out images. Patch positions and node samples depend only
/// on `seed`, so different networks are compared on identical graphs.
pub fn heldout_smoothing<T: Real>(
    params: &NetworkParams<T>,
    samples: &[PreparedSample],
    patches_per_image: usize,
    patch_size: usize,
    sample_m: usize,
    seed_value: u64,
) -> Result<f64> {
    let mut patch_rng = seed::stream_rng(seed_value, stream::EVAL);
    let mut graph_rng = seed::stream_rng(seed_value, stream::GRAPH);
    let mut total = 0.0;
    let mut count = 0usize;
    for (i, s) in samples.iter().enumerate() {
        let patches = crate::data::sample_patches(s, i, patches_per_image, patch_size, &Augment::default(), &mut patch_rng)?;
        for chunk in patches.chunks(32) {
            let (x, _) = batch_tensors::<T>(chunk)?;
            let logits = predict_logits(params, &x)?;
            for (b, p) in chunk.iter().enumerate() {
                let y: Vec<f64> = logits.item(b).iter().map(|v| sigmoid(v.as_f64())).collect();
                let graphs = PatchLaplacians::sample(&p.target, sample_m, &mut graph_rng)?;
                total += graphs.smoothing(&y)?.value;
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::EmptyDataset);
    }
    Ok(total / count as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub lambda: f64,
    pub report: MetricsReport,
}

pub const SWEEP_HEADER: &str = "lambda,se,sp,acc,auc";

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{:e},{:.6},{:.6},{:.6},{:.6}",
            r.lambda, r.report.se, r.report.sp, r.report.acc, r.report.auc
        );
    }
    out
}

/// Train one model per lambda (ascending order, identical seeds and data
/// order) and score each on `test`. With `out_dir`, run `i` writes into
/// `run{i}_lambda{lambda:e}`.
pub fn sweep<T: Real>(
    template: &TrainConfig,
    lambdas: &[f64],
    train_samples: &[FundusSample],
    test_samples: &[FundusSample],
    threshold: f64,
    out_dir: Option<&Path>,
    mut on_epoch: impl FnMut(f64, &EpochRecord),
) -> Result<Vec<SweepRow>> {
    if lambdas.is_empty() {
        return Err(Error::Config("sweep needs at least one lambda".into()));
    }
    let mut sorted = lambdas.to_vec();
    sorted.sort_by(f64::total_cmp);
    let test: Vec<PreparedSample> = test_samples
        .iter()
        .map(|s| PreparedSample::new(s, template.input_mode))
        .collect();

    let mut rows = Vec::with_capacity(sorted.len());
    for (i, &lambda) in sorted.iter().enumerate() {
        let config = TrainConfig {
            lambda,
            ..template.clone()
        };
        let dir = out_dir.map(|d| d.join(format!("run{i}_lambda{lambda:e}")));
        let outcome = train::<T>(&config, train_samples, dir.as_deref(), |r| on_epoch(lambda, r))?;
        let eval = evaluate(&outcome.params, &test, threshold, true, config.patch_size, config.eval_stride)?;
        rows.push(SweepRow {
            lambda,
            report: eval.pooled,
        });
    }
    if let Some(dir) = out_dir {
        write_file(&dir.join("sweep.csv"), &sweep_csv(&rows))?;
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{synth_vessel_sample, SynthConfig};

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            patches_per_epoch: 64,
            batch_size: 16,
            widths: [8, 16, 32],
            seed: 5,
            ..TrainConfig::default()
        }
    }

    fn synth(n: usize, seed_value: u64) -> Vec<FundusSample> {
        let mut rng = seed::rng(seed_value);
        (0..n)
            .map(|_| synth_vessel_sample(&SynthConfig::default(), &mut rng).unwrap())
            .collect()
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { learning_rate: 0.0, ..TrainConfig::default() },
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
            TrainConfig { epochs: 0, ..TrainConfig::default() },
            TrainConfig { lambda: -1.0, ..TrainConfig::default() },
            TrainConfig { patch_size: 50, ..TrainConfig::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn empty_dataset_is_an_error() {
        assert!(matches!(train::<f32>(&tiny_config(), &[], None, |_| {}), Err(Error::EmptyDataset)));
    }

    #[test]
    fn unwritable_output_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("file");
        fs::write(&file, b"x").unwrap();
        let r = train::<f32>(&tiny_config(), &synth(1, 0), Some(&file.join("sub")), |_| {});
        assert!(matches!(r, Err(Error::Io { .. })));
    }

    #[test]
    fn tiny_run_is_deterministic_and_learns() {
        let data = synth(4, 1);
        let a = train::<f64>(&tiny_config(), &data, None, |_| {}).unwrap();
        let b = train::<f64>(&tiny_config(), &data, None, |_| {}).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.params, b.params);
        assert_eq!(a.log.len(), 2);
        assert!(a.log[1].mean_bce < a.log[0].mean_bce, "{:?}", a.log);
    }

    #[test]
    fn writes_log_and_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            patches_per_epoch: 16,
            validation_images: 1,
            ..tiny_config()
        };
        let out = train::<f32>(&cfg, &synth(3, 2), Some(dir.path()), |_| {}).unwrap();
        assert!(out.log[0].val_auc.is_some());
        let log = fs::read_to_string(dir.path().join(LOG_FILE)).unwrap();
        assert!(log.starts_with(EPOCH_LOG_HEADER));
        assert_eq!(log.lines().count(), 2);
        let loaded: NetworkParams<f32> = checkpoint::load(&dir.path().join(FINAL_CHECKPOINT_FILE)).unwrap();
        assert_eq!(loaded, out.params);
    }

    #[test]
    fn sweep_orders_lambdas() {
        let data = synth(2, 3);
        let cfg = TrainConfig {
            epochs: 1,
            patches_per_epoch: 8,
            batch_size: 8,
            widths: [2, 2, 2],
            ..tiny_config()
        };
        let rows = sweep::<f32>(&cfg, &PAPER_LAMBDAS, &data, &data, 0.5, None, |_, _| {}).unwrap();
        let lambdas: Vec<f64> = rows.iter().map(|r| r.lambda).collect();
        assert_eq!(lambdas, vec![1e-7, 1e-6, 1e-5, 1e-4]);

        let rows = sweep::<f32>(&cfg, &[1e-6, 1e-6], &data, &data, 0.5, None, |_, _| {}).unwrap();
        assert_eq!(rows[0], rows[1]);
        assert!(sweep::<f32>(&cfg, &[], &data, &data, 0.5, None, |_, _| {}).is_err());
    }
}
