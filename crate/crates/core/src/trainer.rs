//! Dataset splitting, static pixel-attention weights, the training loops for
//! both stages, and k-fold cross-validation.
//!
//! Every random choice derives from the run seed, so (seed, data, config)
//! determines parameters, history, and reports completely.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::SgdState;
use crate::dataio::{load_sample, load_sample_native, ClassLabel, SampleRecord};
use crate::error::{Error, Result};
use crate::metrics::{
    evaluate_classification, region_metrics, Mask, MetricsReport, SegAccumulator,
};
use crate::nets::builders::{
    build_cov_ctnet, build_cov_raseg, build_segnet_baseline, ClassifierConfig, SegmenterConfig,
};
use crate::nets::pipeline::{classifier_input, segmenter_input};
use crate::nets::ModelGraph;
use crate::ops;
use crate::seeds;
use crate::tensor::{Scalar, Tensor};

// ── Configuration ───────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl Default for Precision {
    fn default() -> Self {
        Precision::F32
    }
}

/// Training hyperparameters; the numeric defaults are the fixed experimental
/// values (learning rate 0.001, 30 epochs, batch size 8, momentum 0.95).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default)]
    pub attention: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub precision: Precision,
    /// Stop once the epoch's validation metric reaches this value.
    #[serde(default)]
    pub target_metric: Option<f64>,
}

fn default_lr() -> f64 {
    0.001
}
fn default_epochs() -> usize {
    30
}
fn default_batch() -> usize {
    8
}
fn default_momentum() -> f64 {
    0.95
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: default_lr(),
            epochs: default_epochs(),
            batch_size: default_batch(),
            momentum: default_momentum(),
            attention: false,
            seed: 0,
            precision: Precision::default(),
            target_metric: None,
        }
    }
}

// ── Splitting ───────────────────────────────────────────────────────────

/// Disjoint, jointly exhaustive sample partitions plus fold assignments over
/// the train+val pool. Identical seed reproduces the identical plan.
#[derive(Clone, Debug, Serialize)]
pub struct SplitPlan {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub folds: Vec<Vec<usize>>,
    pub seed: u64,
    pub stratified: bool,
    pub warnings: Vec<String>,
}

impl SplitPlan {
    /// Degenerate plan that trains on everything (overfit experiments).
    pub fn all_train(n: usize, seed: u64) -> Self {
        SplitPlan {
            train: (0..n).collect(),
            val: Vec::new(),
            test: Vec::new(),
            folds: vec![(0..n).collect()],
            seed,
            stratified: false,
            warnings: Vec::new(),
        }
    }
}

/// Stratified 20% test split, then 20% of the remainder as validation, then
/// k folds over the train+val pool. Strata with fewer than 5 samples drop
/// stratification with a warning.
pub fn make_splits(records: &[SampleRecord], seed: u64, k: usize) -> Result<SplitPlan> {
    let n = records.len();
    if n < 10 {
        return Err(Error::InvalidParameter(format!(
            "splitting needs at least 10 samples, got {n}"
        )));
    }
    if k == 0 {
        return Err(Error::InvalidParameter("fold count must be >= 1".into()));
    }
    let mut warnings = Vec::new();

    // strata keyed by label: healthy, infected, unlabeled
    let mut strata: Vec<Vec<usize>> = vec![Vec::new(); 3];
    for (i, r) in records.iter().enumerate() {
        let key = match r.class_label {
            Some(ClassLabel::Healthy) => 0,
            Some(ClassLabel::Infected) => 1,
            None => 2,
        };
        strata[key].push(i);
    }
    strata.retain(|s| !s.is_empty());
    let mut stratified = strata.len() > 1;
    if stratified && strata.iter().any(|s| s.len() < 5) {
        warnings.push("a class has fewer than 5 samples; falling back to unstratified splitting".into());
        stratified = false;
    }
    if !stratified {
        let mut all: Vec<usize> = (0..n).collect();
        strata = vec![std::mem::take(&mut all)];
    }

    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    let mut folds: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (si, stratum) in strata.iter().enumerate() {
        let mut ids = stratum.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, "split", si as u64));
        ids.shuffle(&mut rng);
        let test_n = (0.2 * ids.len() as f64).round() as usize;
        let rest = ids.len() - test_n;
        let val_n = (0.2 * rest as f64).round() as usize;
        test.extend_from_slice(&ids[..test_n]);
        val.extend_from_slice(&ids[test_n..test_n + val_n]);
        train.extend_from_slice(&ids[test_n + val_n..]);
        for (pos, &id) in ids[test_n..].iter().enumerate() {
            folds[pos % k].push(id);
        }
    }
    Ok(SplitPlan {
        train,
        val,
        test,
        folds,
        seed,
        stratified,
        warnings,
    })
}

// ── Attention weights ───────────────────────────────────────────────────

/// Inverse-frequency class weights over the training masks:
/// w_c = 1 / (K·f_c) with K = 2, so the frequency-weighted mean is 1.
pub fn compute_attention_weights<T: Scalar>(masks: &[&Tensor<T>]) -> Result<[f64; 2]> {
    let mut fg = 0u64;
    let mut total = 0u64;
    for m in masks {
        for &v in m.data() {
            if v.to_f64() == 1.0 {
                fg += 1;
            }
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::Data("no mask pixels to weight".into()));
    }
    let bg = total - fg;
    if fg == 0 || bg == 0 {
        return Err(Error::Data(format!(
            "cannot weight an absent class (fg={fg}, bg={bg})"
        )));
    }
    let f_bg = bg as f64 / total as f64;
    let f_fg = fg as f64 / total as f64;
    Ok([1.0 / (2.0 * f_bg), 1.0 / (2.0 * f_fg)])
}

// ── Datasets in memory ──────────────────────────────────────────────────

/// Classification samples preprocessed to the classifier input.
pub struct ClsDataset<T> {
    pub images: Vec<Tensor<T>>,
    pub labels: Vec<usize>,
    pub ids: Vec<String>,
}

/// Load and enhance every labeled record at native resolution, then resize
/// to the classifier input.
pub fn load_classifier_dataset<T: Scalar>(
    records: &[SampleRecord],
    input: (usize, usize),
) -> Result<ClsDataset<T>> {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    let mut ids = Vec::new();
    for r in records {
        let label = r.class_label.ok_or_else(|| {
            Error::Data(format!(
                "classification needs labels; `{}` has none",
                r.image_path.display()
            ))
        })?;
        let (native, _) = load_sample_native::<T>(r, true)?;
        images.push(classifier_input(&native, input)?);
        labels.push(label.index());
        ids.push(r.image_path.display().to_string());
    }
    Ok(ClsDataset { images, labels, ids })
}

/// Segmentation samples (image + mask) resized to the segmenter input.
pub struct SegDataset<T> {
    pub images: Vec<Tensor<T>>,
    pub masks: Vec<Tensor<T>>,
    pub ids: Vec<String>,
}

pub fn load_segmenter_dataset<T: Scalar>(
    records: &[SampleRecord],
    input: (usize, usize),
) -> Result<SegDataset<T>> {
    let mut images = Vec::new();
    let mut masks = Vec::new();
    let mut ids = Vec::new();
    for r in records {
        if r.mask_path.is_none() {
            return Err(Error::Data(format!(
                "segmentation needs masks; `{}` has none",
                r.image_path.display()
            )));
        }
        let (img, mask) = load_sample::<T>(r, input, true)?;
        let img = segmenter_input(&img, input)?;
        images.push(img);
        masks.push(mask.expect("mask path checked above"));
        ids.push(r.image_path.display().to_string());
    }
    Ok(SegDataset { images, masks, ids })
}

fn stack<T: Scalar>(images: &[Tensor<T>], ids: &[usize]) -> Result<Tensor<T>> {
    let (h, w) = images[ids[0]].dims2()?;
    let mut data = Vec::with_capacity(ids.len() * h * w);
    for &i in ids {
        data.extend_from_slice(images[i].data());
    }
    Tensor::new(vec![ids.len(), 1, h, w], data)
}

// ── History ─────────────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_metric: f64,
}

/// One entry per completed epoch.
#[derive(Clone, Debug, Default, Serialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,val_metric\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{}\n",
                e.epoch, e.train_loss, e.val_loss, e.val_metric
            ));
        }
        out
    }
}

pub struct TrainOutcome<T: Scalar> {
    /// Checkpoint with the best validation metric (earliest epoch on ties).
    pub model: ModelGraph<T>,
    pub history: TrainHistory,
    pub best_epoch: usize,
    pub best_metric: f64,
}

// ── Shared loop machinery ───────────────────────────────────────────────

struct Batcher {
    order: Vec<usize>,
    batch: usize,
}

impl Batcher {
    fn epoch_order(ids: &[usize], seed: u64, epoch: usize, batch: usize) -> Self {
        let mut order = ids.to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, "shuffle", epoch as u64));
        order.shuffle(&mut rng);
        Batcher { order, batch }
    }

    fn chunks(&self) -> std::slice::Chunks<'_, usize> {
        // the last incomplete mini-batch is kept
        self.order.chunks(self.batch)
    }
}

fn sgd_apply<T: Scalar>(
    model: &mut ModelGraph<T>,
    pass: &crate::nets::TrainPass<T>,
    grads: &crate::autodiff::Gradients<T>,
    sgd: &mut SgdState<T>,
) -> Result<()> {
    for (slot, entry) in model.params.entries.iter_mut().enumerate() {
        if !entry.trainable {
            continue;
        }
        if let Some(vid) = pass.param_values[slot] {
            let g = grads.wrt(vid, entry.tensor.shape());
            sgd.step(slot, &mut entry.tensor, &g)?;
        }
    }
    Ok(())
}

fn nan_abort(loss: f64, epoch: usize, batch: usize) -> Result<()> {
    if loss.is_nan() {
        return Err(Error::Numerical {
            layer: "loss".into(),
            detail: format!("NaN loss at epoch {}, batch {}", epoch + 1, batch + 1),
        });
    }
    Ok(())
}

// ── Classifier training ─────────────────────────────────────────────────

/// Per-sample class probabilities of the infected class, batched eval.
pub fn classifier_scores<T: Scalar>(
    model: &ModelGraph<T>,
    ds: &ClsDataset<T>,
    ids: &[usize],
) -> Result<Vec<f64>> {
    let mut scores = Vec::with_capacity(ids.len());
    for chunk in ids.chunks(8) {
        let x = stack(&ds.images, chunk)?;
        let probs = model.forward_eval(&x)?;
        for (i, _) in chunk.iter().enumerate() {
            scores.push(probs.data()[i * 2 + 1].to_f64());
        }
    }
    Ok(scores)
}

fn eval_classifier<T: Scalar>(
    model: &ModelGraph<T>,
    ds: &ClsDataset<T>,
    ids: &[usize],
) -> Result<(f64, f64)> {
    let mut correct = 0usize;
    let mut loss_sum = 0.0;
    for chunk in ids.chunks(8) {
        let x = stack(&ds.images, chunk)?;
        let probs = model.forward_eval(&x)?;
        let targets: Vec<usize> = chunk.iter().map(|&i| ds.labels[i]).collect();
        let (loss, _) = ops::cross_entropy(&probs, &targets, None)?;
        loss_sum += loss.to_f64() * chunk.len() as f64;
        for (i, &sample) in chunk.iter().enumerate() {
            let p_inf = probs.data()[i * 2 + 1].to_f64();
            let pred = usize::from(p_inf >= 0.5);
            if pred == ds.labels[sample] {
                correct += 1;
            }
        }
    }
    Ok((
        loss_sum / ids.len() as f64,
        correct as f64 / ids.len() as f64,
    ))
}

/// Train the residual classifier; per epoch: seeded shuffle, mini-batches,
/// cross-entropy loss, backward, SGD-momentum step. Keeps the checkpoint
/// with the best validation accuracy. An empty validation split falls back
/// to the training set for metrics and selection.
pub fn train_classifier<T: Scalar>(
    ds: &ClsDataset<T>,
    split: &SplitPlan,
    model_cfg: &ClassifierConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    let mut model = build_cov_ctnet::<T>(model_cfg, seeds::derive(cfg.seed, "model", 0))?;
    run_training(
        &mut model,
        cfg,
        &split.train,
        if split.val.is_empty() { &split.train } else { &split.val },
        |model, batch_ids, seed| {
            let x = stack(&ds.images, batch_ids)?;
            let targets: Vec<usize> = batch_ids.iter().map(|&i| ds.labels[i]).collect();
            let mut pass = model.forward_train(&x, seed)?;
            let loss_id = pass.tape.cross_entropy(pass.output, &targets, None)?;
            Ok((pass, loss_id))
        },
        |model, val_ids| eval_classifier(model, ds, val_ids),
    )
}

// ── Segmenter training ──────────────────────────────────────────────────

fn mask_targets<T: Scalar>(masks: &[Tensor<T>], ids: &[usize]) -> Vec<usize> {
    let mut t = Vec::new();
    for &i in ids {
        t.extend(masks[i].data().iter().map(|&v| usize::from(v.to_f64() == 1.0)));
    }
    t
}

/// Mean Dice of the infected class over a set of samples, plus mean loss.
fn eval_segmenter<T: Scalar>(
    model: &ModelGraph<T>,
    ds: &SegDataset<T>,
    ids: &[usize],
    weights: Option<&[T]>,
) -> Result<(f64, f64)> {
    let mut loss_sum = 0.0;
    let mut dice_sum = 0.0;
    for chunk in ids.chunks(4) {
        let x = stack(&ds.images, chunk)?;
        let probs = model.forward_eval(&x)?;
        let targets = mask_targets(&ds.masks, chunk);
        let (loss, _) = ops::cross_entropy(&probs, &targets, weights)?;
        loss_sum += loss.to_f64() * chunk.len() as f64;
        let (_, _, h, w) = probs.dims4()?;
        let plane = h * w;
        for (i, &sample) in chunk.iter().enumerate() {
            let mut pred = vec![false; plane];
            for px in 0..plane {
                let p0 = probs.data()[(i * 2) * plane + px].to_f64();
                let p1 = probs.data()[(i * 2 + 1) * plane + px].to_f64();
                pred[px] = p1 > p0;
            }
            let pred = Mask::new(h, w, pred)?;
            let gt = Mask::from_tensor(&ds.masks[sample])?;
            let region = region_metrics(&pred, &gt)?;
            dice_sum += region[1].dice;
        }
    }
    Ok((loss_sum / ids.len() as f64, dice_sum / ids.len() as f64))
}

/// Predicted binary mask (argmax) for one dataset image.
pub fn predict_mask<T: Scalar>(model: &ModelGraph<T>, image: &Tensor<T>) -> Result<Mask> {
    let (h, w) = image.dims2()?;
    let x = image.reshape(vec![1, 1, h, w])?;
    let probs = model.forward_eval(&x)?;
    let plane = h * w;
    let mut pred = vec![false; plane];
    for px in 0..plane {
        pred[px] = probs.data()[plane + px].to_f64() > probs.data()[px].to_f64();
    }
    Mask::new(h, w, pred)
}

/// Train the segmenter (dual-pooling by default, the max-only baseline when
/// `baseline` is set) with per-pixel, optionally attention-weighted
/// cross-entropy. Keeps the checkpoint with the best validation Dice of the
/// infected class.
pub fn train_segmenter<T: Scalar>(
    ds: &SegDataset<T>,
    split: &SplitPlan,
    model_cfg: &SegmenterConfig,
    baseline: bool,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    let weights: Option<Vec<T>> = if cfg.attention {
        let train_masks: Vec<&Tensor<T>> = split.train.iter().map(|&i| &ds.masks[i]).collect();
        let w = compute_attention_weights(&train_masks)?;
        Some(vec![T::from_f64(w[0]), T::from_f64(w[1])])
    } else {
        None
    };
    let mut model = if baseline {
        build_segnet_baseline::<T>(model_cfg, seeds::derive(cfg.seed, "model", 0))?
    } else {
        build_cov_raseg::<T>(model_cfg, seeds::derive(cfg.seed, "model", 0))?
    };
    run_training(
        &mut model,
        cfg,
        &split.train,
        if split.val.is_empty() { &split.train } else { &split.val },
        |model, batch_ids, seed| {
            let x = stack(&ds.images, batch_ids)?;
            let targets = mask_targets(&ds.masks, batch_ids);
            let mut pass = model.forward_train(&x, seed)?;
            let loss_id = pass.tape.cross_entropy(pass.output, &targets, weights.as_deref())?;
            Ok((pass, loss_id))
        },
        |model, val_ids| eval_segmenter(model, ds, val_ids, weights.as_deref()),
    )
}

/// Epoch/batch skeleton shared by both trainers.
fn run_training<T, FB, FE>(
    model: &mut ModelGraph<T>,
    cfg: &TrainConfig,
    train_ids: &[usize],
    val_ids: &[usize],
    mut run_batch: FB,
    mut evaluate: FE,
) -> Result<TrainOutcome<T>>
where
    T: Scalar,
    FB: FnMut(&mut ModelGraph<T>, &[usize], u64) -> Result<(crate::nets::TrainPass<T>, usize)>,
    FE: FnMut(&ModelGraph<T>, &[usize]) -> Result<(f64, f64)>,
{
    if train_ids.is_empty() {
        return Err(Error::InvalidParameter("empty training split".into()));
    }
    let mut sgd = SgdState::<T>::new(cfg.learning_rate, cfg.momentum)?;
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, usize, ModelGraph<T>)> = None;
    for epoch in 0..cfg.epochs {
        let batcher = Batcher::epoch_order(train_ids, cfg.seed, epoch, cfg.batch_size.max(1));
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for (bi, chunk) in batcher.chunks().enumerate() {
            let dropout_seed =
                seeds::derive(cfg.seed, "batch", (epoch as u64) << 20 | bi as u64);
            let (pass, loss_id) = run_batch(model, chunk, dropout_seed)?;
            let loss = pass.tape.value(loss_id).data()[0].to_f64();
            nan_abort(loss, epoch, bi)?;
            let grads = pass.tape.backward(loss_id)?;
            sgd_apply(model, &pass, &grads, &mut sgd)?;
            loss_sum += loss * chunk.len() as f64;
            seen += chunk.len();
        }
        let (val_loss, val_metric) = evaluate(model, val_ids)?;
        history.epochs.push(EpochStats {
            epoch: epoch + 1,
            train_loss: loss_sum / seen as f64,
            val_loss,
            val_metric,
        });
        let better = match &best {
            None => true,
            Some((m, _, _)) => val_metric > *m,
        };
        if better {
            best = Some((val_metric, epoch + 1, model.clone()));
        }
        if let Some(target) = cfg.target_metric {
            if val_metric >= target {
                break;
            }
        }
    }
    let (best_metric, best_epoch, model) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
        best_metric,
    })
}

// ── Cross-validation ────────────────────────────────────────────────────

#[derive(Clone, Debug, Serialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum FoldOutcome {
    Ok { report: MetricsReport },
    Failed { error: String },
}

#[derive(Clone, Debug, Serialize)]
pub struct CvSummary {
    pub folds: Vec<FoldOutcome>,
    /// Per-metric (mean, sample stddev) over succeeded folds.
    pub mean: std::collections::BTreeMap<String, f64>,
    pub stddev: std::collections::BTreeMap<String, f64>,
}

fn summarize(folds: &[FoldOutcome], keys: &[(&str, fn(&MetricsReport) -> Option<f64>)]) -> CvSummary {
    let mut mean = std::collections::BTreeMap::new();
    let mut stddev = std::collections::BTreeMap::new();
    for (name, getter) in keys {
        let values: Vec<f64> = folds
            .iter()
            .filter_map(|f| match f {
                FoldOutcome::Ok { report } => getter(report),
                FoldOutcome::Failed { .. } => None,
            })
            .collect();
        if values.is_empty() {
            continue;
        }
        let m = values.iter().sum::<f64>() / values.len() as f64;
        let sd = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64)
                .sqrt()
        };
        mean.insert(name.to_string(), m);
        stddev.insert(name.to_string(), sd);
    }
    CvSummary {
        folds: folds.to_vec(),
        mean,
        stddev,
    }
}

/// k-fold cross-validation of the classifier: fold i validates the model
/// trained on the remaining folds. Fold failures are recorded and the rest
/// continue.
pub fn cross_validate_classifier<T: Scalar>(
    ds: &ClsDataset<T>,
    plan: &SplitPlan,
    model_cfg: &ClassifierConfig,
    cfg: &TrainConfig,
) -> Result<CvSummary> {
    let mut outcomes = Vec::new();
    for fold in 0..plan.folds.len() {
        let result = (|| -> Result<MetricsReport> {
            let (train_ids, val_ids) = fold_split(plan, fold);
            let fold_cfg = TrainConfig {
                seed: seeds::derive(cfg.seed, "fold", fold as u64),
                ..cfg.clone()
            };
            let fold_plan = SplitPlan {
                train: train_ids,
                val: val_ids.clone(),
                test: Vec::new(),
                folds: Vec::new(),
                seed: fold_cfg.seed,
                stratified: plan.stratified,
                warnings: Vec::new(),
            };
            let out = train_classifier(ds, &fold_plan, model_cfg, &fold_cfg)?;
            let scores = classifier_scores(&out.model, ds, &val_ids)?;
            let truths: Vec<bool> = val_ids.iter().map(|&i| ds.labels[i] == 1).collect();
            let report = evaluate_classification(
                &scores,
                &truths,
                seeds::derive(cfg.seed, "cv-auc", fold as u64),
            )?;
            Ok(MetricsReport {
                classification: Some(report),
                segmentation: None,
            })
        })();
        outcomes.push(match result {
            Ok(report) => FoldOutcome::Ok { report },
            Err(e) => FoldOutcome::Failed {
                error: e.to_string(),
            },
        });
    }
    Ok(summarize(
        &outcomes,
        &[
            ("accuracy", |r| r.classification.as_ref().map(|c| c.metrics.accuracy)),
            ("mcc", |r| r.classification.as_ref().map(|c| c.metrics.mcc)),
            ("f_score", |r| r.classification.as_ref().map(|c| c.metrics.f_score)),
            ("pr_auc", |r| r.classification.as_ref().map(|c| c.pr_auc)),
        ],
    ))
}

/// k-fold cross-validation of the segmenter.
pub fn cross_validate_segmenter<T: Scalar>(
    ds: &SegDataset<T>,
    plan: &SplitPlan,
    model_cfg: &SegmenterConfig,
    baseline: bool,
    cfg: &TrainConfig,
) -> Result<CvSummary> {
    let mut outcomes = Vec::new();
    for fold in 0..plan.folds.len() {
        let result = (|| -> Result<MetricsReport> {
            let (train_ids, val_ids) = fold_split(plan, fold);
            let fold_cfg = TrainConfig {
                seed: seeds::derive(cfg.seed, "fold", fold as u64),
                ..cfg.clone()
            };
            let fold_plan = SplitPlan {
                train: train_ids,
                val: val_ids.clone(),
                test: Vec::new(),
                folds: Vec::new(),
                seed: fold_cfg.seed,
                stratified: plan.stratified,
                warnings: Vec::new(),
            };
            let out = train_segmenter(ds, &fold_plan, model_cfg, baseline, &fold_cfg)?;
            let mut acc = SegAccumulator::new();
            for &i in &val_ids {
                let pred = predict_mask(&out.model, &ds.images[i])?;
                let gt = Mask::from_tensor(&ds.masks[i])?;
                acc.add_image(&pred, &gt, None)?;
            }
            Ok(MetricsReport {
                classification: None,
                segmentation: Some(acc.finish()?),
            })
        })();
        outcomes.push(match result {
            Ok(report) => FoldOutcome::Ok { report },
            Err(e) => FoldOutcome::Failed {
                error: e.to_string(),
            },
        });
    }
    Ok(summarize(
        &outcomes,
        &[
            ("g_acc", |r| r.segmentation.as_ref().map(|s| s.g_acc)),
            ("m_iou", |r| r.segmentation.as_ref().map(|s| s.m_iou)),
            ("infected_dice", |r| {
                r.segmentation
                    .as_ref()
                    .and_then(|s| s.per_class.iter().find(|c| c.class == "infected"))
                    .map(|c| c.dice)
            }),
        ],
    ))
}

fn fold_split(plan: &SplitPlan, fold: usize) -> (Vec<usize>, Vec<usize>) {
    // k = 1 degenerates to the plain train/val holdout
    if plan.folds.len() == 1 {
        return (plan.train.clone(), plan.val.clone());
    }
    let val = plan.folds[fold].clone();
    let train = plan
        .folds
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != fold)
        .flat_map(|(_, f)| f.iter().copied())
        .collect();
    (train, val)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::phantom::{generate_phantoms, PhantomConfig};

    fn fake_records(healthy: usize, infected: usize) -> Vec<SampleRecord> {
        let mut v = Vec::new();
        for i in 0..healthy + infected {
            v.push(SampleRecord {
                image_path: format!("img{i}.png").into(),
                class_label: Some(if i < healthy {
                    ClassLabel::Healthy
                } else {
                    ClassLabel::Infected
                }),
                mask_path: None,
                split: None,
            });
        }
        v
    }

    #[test]
    fn split_370_matches_published_counts() {
        let recs = fake_records(0, 370);
        let plan = make_splits(&recs, 1, 5).unwrap();
        assert_eq!(plan.test.len(), 74);
        assert!((59..=60).contains(&plan.val.len()), "{}", plan.val.len());
        assert!((236..=237).contains(&plan.train.len()));
        assert_eq!(plan.train.len() + plan.val.len() + plan.test.len(), 370);
    }

    #[test]
    fn split_829_has_166_test_samples() {
        let recs = fake_records(459, 370);
        let plan = make_splits(&recs, 2, 5).unwrap();
        assert_eq!(plan.test.len(), 166);
        assert!(plan.stratified);
    }

    #[test]
    fn folds_partition_the_train_val_pool() {
        let recs = fake_records(40, 30);
        let plan = make_splits(&recs, 3, 5).unwrap();
        let mut pool: Vec<usize> = plan.train.iter().chain(plan.val.iter()).copied().collect();
        pool.sort_unstable();
        let mut folded: Vec<usize> = plan.folds.iter().flatten().copied().collect();
        folded.sort_unstable();
        assert_eq!(pool, folded);
        // pairwise disjoint
        let total: usize = plan.folds.iter().map(|f| f.len()).sum();
        let unique: std::collections::HashSet<usize> = folded.into_iter().collect();
        assert_eq!(total, unique.len());
    }

    #[test]
    fn identical_seed_gives_identical_plan() {
        let recs = fake_records(25, 25);
        let a = make_splits(&recs, 9, 5).unwrap();
        let b = make_splits(&recs, 9, 5).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.val, b.val);
        assert_eq!(a.test, b.test);
        assert_eq!(a.folds, b.folds);
    }

    #[test]
    fn tiny_class_falls_back_to_unstratified_with_warning() {
        let recs = fake_records(20, 3);
        let plan = make_splits(&recs, 0, 5).unwrap();
        assert!(!plan.stratified);
        assert!(!plan.warnings.is_empty());
    }

    #[test]
    fn too_few_samples_rejected() {
        let recs = fake_records(4, 4);
        assert!(make_splits(&recs, 0, 5).is_err());
    }

    #[test]
    fn attention_weights_balanced_and_skewed() {
        let half = Tensor::<f64>::from_fn(&[2, 2], |i| if i < 2 { 1.0 } else { 0.0 });
        let w = compute_attention_weights(&[&half]).unwrap();
        assert!((w[0] - 1.0).abs() < 1e-12);
        assert!((w[1] - 1.0).abs() < 1e-12);

        // 10% foreground
        let skew = Tensor::<f64>::from_fn(&[2, 10], |i| if i < 2 { 1.0 } else { 0.0 });
        let w = compute_attention_weights(&[&skew]).unwrap();
        assert!((w[0] - 1.0 / 1.8).abs() < 1e-9, "{}", w[0]);
        assert!((w[1] - 5.0).abs() < 1e-9, "{}", w[1]);
        // normalization identity: sum f_c * w_c = 1
        assert!((0.9 * w[0] + 0.1 * w[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn attention_rejects_absent_class() {
        let empty = Tensor::<f64>::zeros(&[4, 4]);
        assert!(compute_attention_weights(&[&empty]).is_err());
    }

    fn tiny_cls_run(lr: f64, seed: u64, epochs: usize) -> (TrainOutcome<f32>, ClsDataset<f32>) {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PhantomConfig {
            height: 32,
            width: 32,
            seed: 7,
            ..PhantomConfig::default()
        };
        let (_, recs) = generate_phantoms(&cfg, 8, dir.path()).unwrap();
        let ds = load_classifier_dataset::<f32>(&recs, (32, 32)).unwrap();
        let model_cfg = ClassifierConfig {
            input: (32, 32),
            widths: [4, 8, 8, 8],
            fc_widths: (16, 8),
            dropout: 0.1,
            ..ClassifierConfig::default()
        };
        let tcfg = TrainConfig {
            learning_rate: lr,
            epochs,
            batch_size: 4,
            seed,
            ..TrainConfig::default()
        };
        let split = SplitPlan::all_train(ds.images.len(), seed);
        let out = train_classifier(&ds, &split, &model_cfg, &tcfg).unwrap();
        (out, ds)
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PhantomConfig {
            height: 32,
            width: 32,
            seed: 3,
            ..PhantomConfig::default()
        };
        let (_, recs) = generate_phantoms(&cfg, 4, dir.path()).unwrap();
        let ds = load_classifier_dataset::<f32>(&recs, (32, 32)).unwrap();
        let model_cfg = ClassifierConfig {
            input: (32, 32),
            widths: [4, 4, 4, 4],
            fc_widths: (8, 4),
            dropout: 0.0,
            ..ClassifierConfig::default()
        };
        let tcfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 3,
            seed: 2,
            ..TrainConfig::default()
        };
        let split = SplitPlan::all_train(4, 2);
        let out = train_classifier(&ds, &split, &model_cfg, &tcfg).unwrap();
        let fresh =
            build_cov_ctnet::<f32>(&model_cfg, crate::seeds::derive(2, "model", 0)).unwrap();
        for (a, b) in out.model.params.entries.iter().zip(fresh.params.entries.iter()) {
            if a.trainable {
                assert_eq!(a.tensor, b.tensor, "parameter {} moved at lr 0", a.name);
            }
        }
    }

    #[test]
    fn attention_weights_scale_foreground_loss_tenfold_at_five_percent() {
        // masks with exactly 5% foreground -> w_fg = 1/(2*0.05) = 10 exactly
        let mask = Tensor::<f64>::from_fn(&[5, 20], |i| if i < 5 { 1.0 } else { 0.0 });
        let w = compute_attention_weights(&[&mask]).unwrap();
        assert_eq!(w[1], 10.0);
        assert!((w[0] - 1.0 / 1.9).abs() < 1e-12);

        // the weighted loss decomposes into w_bg * bg part + w_fg * fg part
        let probs = Tensor::<f64>::from_fn(&[1, 2, 5, 20], |i| {
            let v = 0.2 + 0.6 * ((i % 7) as f64 / 7.0);
            if i < 100 {
                v
            } else {
                1.0 - (0.2 + 0.6 * (((i - 100) % 7) as f64 / 7.0))
            }
        });
        let targets: Vec<usize> = mask.data().iter().map(|&v| v as usize).collect();
        let weights = [w[0], w[1]];
        let (weighted, _) = ops::cross_entropy(&probs, &targets, Some(&weights)).unwrap();
        // unweighted parts, split by target class
        let mut bg_part = 0.0;
        let mut fg_part = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            let p = probs.data()[t * 100 + i];
            let term = -(p.max(1e-12).ln()) / targets.len() as f64;
            if t == 0 {
                bg_part += term;
            } else {
                fg_part += term;
            }
        }
        assert!((weighted - (w[0] * bg_part + w[1] * fg_part)).abs() < 1e-12);
    }

    #[test]
    fn attention_training_rejects_all_background_masks() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PhantomConfig {
            height: 32,
            width: 32,
            seed: 5,
            ..PhantomConfig::default()
        };
        // healthy-only records have all-zero masks
        let (_, recs) = generate_phantoms(&cfg, 8, dir.path()).unwrap();
        let healthy: Vec<_> = recs
            .into_iter()
            .filter(|r| r.class_label == Some(ClassLabel::Healthy))
            .collect();
        let ds = load_segmenter_dataset::<f32>(&healthy, (32, 32)).unwrap();
        let model_cfg = SegmenterConfig {
            input: (32, 32),
            widths: [4, 4, 4, 4],
            ..SegmenterConfig::default()
        };
        let tcfg = TrainConfig {
            attention: true,
            epochs: 1,
            ..TrainConfig::default()
        };
        let split = SplitPlan::all_train(ds.images.len(), 0);
        assert!(train_segmenter(&ds, &split, &model_cfg, false, &tcfg).is_err());
    }

    #[test]
    fn full_batch_loss_strictly_decreases_in_early_overfit_epochs() {
        // learning sanity: one full-batch step per epoch, deterministic
        // forward (no dropout), loss on that fixed batch must fall
        let dir = tempfile::tempdir().unwrap();
        let cfg = PhantomConfig {
            height: 32,
            width: 32,
            seed: 41,
            ..PhantomConfig::default()
        };
        let (_, recs) = generate_phantoms(&cfg, 8, dir.path()).unwrap();
        let ds = load_classifier_dataset::<f32>(&recs, (32, 32)).unwrap();
        let model_cfg = ClassifierConfig {
            input: (32, 32),
            widths: [4, 8, 8, 8],
            fc_widths: (16, 8),
            dropout: 0.0,
            ..ClassifierConfig::default()
        };
        let tcfg = TrainConfig {
            epochs: 5,
            batch_size: 8,
            seed: 1,
            ..TrainConfig::default()
        };
        let split = SplitPlan::all_train(8, 1);
        let out = train_classifier(&ds, &split, &model_cfg, &tcfg).unwrap();
        for pair in out.history.epochs.windows(2) {
            assert!(
                pair[1].train_loss < pair[0].train_loss,
                "loss rose from {} to {} at epoch {}",
                pair[0].train_loss,
                pair[1].train_loss,
                pair[1].epoch
            );
        }
    }

    #[test]
    fn same_seed_reproduces_history_exactly() {
        let (a, _) = tiny_cls_run(0.001, 11, 3);
        let (b, _) = tiny_cls_run(0.001, 11, 3);
        assert_eq!(a.history.to_csv(), b.history.to_csv());
        let (c, _) = tiny_cls_run(0.001, 12, 3);
        assert_ne!(a.history.to_csv(), c.history.to_csv());
    }

    #[test]
    fn history_csv_has_expected_header_and_rows() {
        let (out, _) = tiny_cls_run(0.001, 5, 2);
        let csv = out.history.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "epoch,train_loss,val_loss,val_metric");
        assert_eq!(lines.count(), 2);
    }
}
