//! Evaluation metrics: confusion counting, classification scores, region
//! overlap scores, boundary F1, dataset aggregates, PR curves with AUC, and
//! 95% confidence intervals.
//!
//! Counting is done in integers; divisions happen last. Zero denominators
//! yield 0 together with a degenerate flag, except region overlap of two
//! empty masks which scores 1.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// z for a two-sided 95% interval.
pub const Z95: f64 = 1.959964;

// ── Confusion counting ──────────────────────────────────────────────────

/// TP/TN/FP/FN tallies at sample or pixel level.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

/// Exact counting over paired label sequences; works for sample labels and
/// flattened pixel labels alike.
pub fn confusion<L: PartialEq + Copy>(
    predictions: &[L],
    truths: &[L],
    positive: L,
) -> Result<ConfusionCounts> {
    if predictions.len() != truths.len() {
        return Err(Error::ShapeMismatch(format!(
            "confusion: {} predictions vs {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &t) in predictions.iter().zip(truths.iter()) {
        match (p == positive, t == positive) {
            (true, true) => c.tp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

// ── Classification metrics ──────────────────────────────────────────────

#[derive(Clone, Debug, Serialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    pub f_score: f64,
    pub mcc: f64,
    /// Names of metrics whose denominator was zero (value reported as 0).
    pub degenerate: Vec<String>,
}

/// Accuracy, precision, recall, specificity, F-score, and MCC from counts.
pub fn classification_metrics(c: &ConfusionCounts) -> Result<ClassificationMetrics> {
    if c.total() == 0 {
        return Err(Error::InvalidParameter("empty confusion counts".into()));
    }
    let mut degenerate = Vec::new();
    let mut ratio = |name: &str, num: u64, den: u64| -> f64 {
        if den == 0 {
            degenerate.push(name.to_string());
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let accuracy = ratio("accuracy", c.tp + c.tn, c.total());
    let precision = ratio("precision", c.tp, c.tp + c.fp);
    let recall = ratio("recall", c.tp, c.tp + c.fn_);
    let specificity = ratio("specificity", c.tn, c.tn + c.fp);
    let f_score = if precision + recall == 0.0 {
        degenerate.push("f_score".to_string());
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    let (tp, tn, fp, fn_) = (c.tp as f64, c.tn as f64, c.fp as f64, c.fn_ as f64);
    let denom = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
    let mcc = if denom == 0.0 {
        degenerate.push("mcc".to_string());
        0.0
    } else {
        (tp * tn - fp * fn_) / denom
    };
    Ok(ClassificationMetrics {
        accuracy,
        precision,
        recall,
        specificity,
        f_score,
        mcc,
        degenerate,
    })
}

// ── Binary masks and region metrics ─────────────────────────────────────

/// Binary segmentation mask with geometry.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub h: usize,
    pub w: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(h: usize, w: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::ShapeMismatch(format!(
                "mask {h}x{w} needs {} values, got {}",
                h * w,
                data.len()
            )));
        }
        Ok(Mask { h, w, data })
    }

    /// Convert an (H, W) tensor with values exactly in {0, 1}.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Result<Self> {
        let (h, w) = t.dims2()?;
        let mut data = Vec::with_capacity(h * w);
        for &v in t.data() {
            let f = v.to_f64();
            if f == 0.0 {
                data.push(false);
            } else if f == 1.0 {
                data.push(true);
            } else {
                return Err(Error::Data(format!("non-binary mask value {f}")));
            }
        }
        Ok(Mask { h, w, data })
    }

    pub fn count(&self, class: bool) -> u64 {
        self.data.iter().filter(|&&v| v == class).count() as u64
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct RegionClassMetrics {
    /// false = background, true = foreground (infected).
    pub class: bool,
    /// Correctly labeled pixels of this gt class / gt class pixels.
    pub accuracy: f64,
    pub iou: f64,
    pub dice: f64,
}

fn same_geometry(a: &Mask, b: &Mask) -> Result<()> {
    if a.h != b.h || a.w != b.w {
        return Err(Error::ShapeMismatch(format!(
            "mask {}x{} vs {}x{}",
            a.h, a.w, b.h, b.w
        )));
    }
    Ok(())
}

/// Per-class accuracy, IoU, and Dice. Empty-vs-empty regions score 1.
pub fn region_metrics(pred: &Mask, gt: &Mask) -> Result<[RegionClassMetrics; 2]> {
    same_geometry(pred, gt)?;
    let mut out = [RegionClassMetrics {
        class: false,
        accuracy: 0.0,
        iou: 0.0,
        dice: 0.0,
    }; 2];
    for (slot, class) in [false, true].into_iter().enumerate() {
        let mut inter = 0u64;
        let mut pred_n = 0u64;
        let mut gt_n = 0u64;
        for (&p, &g) in pred.data.iter().zip(gt.data.iter()) {
            let pp = p == class;
            let gg = g == class;
            if pp {
                pred_n += 1;
            }
            if gg {
                gt_n += 1;
            }
            if pp && gg {
                inter += 1;
            }
        }
        let union = pred_n + gt_n - inter;
        let (iou, dice) = if union == 0 {
            (1.0, 1.0)
        } else {
            (
                inter as f64 / union as f64,
                2.0 * inter as f64 / (pred_n + gt_n) as f64,
            )
        };
        let accuracy = if gt_n == 0 {
            1.0
        } else {
            inter as f64 / gt_n as f64
        };
        debug_assert!((dice - 2.0 * iou / (1.0 + iou)).abs() < 1e-12);
        out[slot] = RegionClassMetrics {
            class,
            accuracy,
            iou,
            dice,
        };
    }
    Ok(out)
}

// ── Boundary F1 ─────────────────────────────────────────────────────────

/// Default matching tolerance: ceil(0.75% of the image diagonal), at least 1.
pub fn default_bf_tolerance(h: usize, w: usize) -> f64 {
    let diag = ((h * h + w * w) as f64).sqrt();
    (0.0075 * diag).ceil().max(1.0)
}

/// Boundary pixels of a class: class pixels with at least one four-neighbor
/// outside the class (positions beyond the image count as outside).
fn boundary_pixels(mask: &Mask, class: bool) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for y in 0..mask.h {
        for x in 0..mask.w {
            if mask.data[y * mask.w + x] != class {
                continue;
            }
            let mut edge = y == 0 || y == mask.h - 1 || x == 0 || x == mask.w - 1;
            if !edge {
                edge = mask.data[(y - 1) * mask.w + x] != class
                    || mask.data[(y + 1) * mask.w + x] != class
                    || mask.data[y * mask.w + x - 1] != class
                    || mask.data[y * mask.w + x + 1] != class;
            }
            if edge {
                out.push((y, x));
            }
        }
    }
    out
}

fn matched_fraction(from: &[(usize, usize)], to: &[(usize, usize)], tol: f64) -> f64 {
    if from.is_empty() {
        return 0.0;
    }
    let tol2 = tol * tol;
    let mut hits = 0u64;
    for &(ay, ax) in from {
        for &(by, bx) in to {
            let dy = ay as f64 - by as f64;
            let dx = ax as f64 - bx as f64;
            if dy * dy + dx * dx <= tol2 {
                hits += 1;
                break;
            }
        }
    }
    hits as f64 / from.len() as f64
}

/// Boundary F1 for one class: harmonic mean of boundary precision and recall
/// under a Euclidean distance tolerance. Two boundary-free masks score 1.
pub fn bf_score_class(pred: &Mask, gt: &Mask, class: bool, tolerance: f64) -> Result<f64> {
    same_geometry(pred, gt)?;
    let bp = boundary_pixels(pred, class);
    let bg = boundary_pixels(gt, class);
    if bp.is_empty() && bg.is_empty() {
        return Ok(1.0);
    }
    if bp.is_empty() || bg.is_empty() {
        return Ok(0.0);
    }
    let precision = matched_fraction(&bp, &bg, tolerance);
    let recall = matched_fraction(&bg, &bp, tolerance);
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Per-class boundary F1: [background, foreground].
pub fn bf_score(pred: &Mask, gt: &Mask, tolerance: f64) -> Result<[f64; 2]> {
    Ok([
        bf_score_class(pred, gt, false, tolerance)?,
        bf_score_class(pred, gt, true, tolerance)?,
    ])
}

// ── Dataset aggregation ─────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, Default)]
struct ClassAccum {
    intersection: u64,
    pred: u64,
    gt: u64,
    correct_in_gt: u64,
    bf_sum: f64,
    bf_count: u64,
    dice_sum: f64,
    dice_sq_sum: f64,
    dice_count: u64,
}

/// Order-independent accumulator over evaluated images; merge of counts.
#[derive(Clone, Debug, Default)]
pub struct SegAccumulator {
    correct_pixels: u64,
    total_pixels: u64,
    classes: [ClassAccum; 2],
    images: u64,
}

impl SegAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_image(&mut self, pred: &Mask, gt: &Mask, bf_tolerance: Option<f64>) -> Result<()> {
        same_geometry(pred, gt)?;
        let tol = bf_tolerance.unwrap_or_else(|| default_bf_tolerance(gt.h, gt.w));
        for (&p, &g) in pred.data.iter().zip(gt.data.iter()) {
            if p == g {
                self.correct_pixels += 1;
            }
        }
        self.total_pixels += (gt.h * gt.w) as u64;
        let region = region_metrics(pred, gt)?;
        let bf = bf_score(pred, gt, tol)?;
        for (slot, class) in [false, true].into_iter().enumerate() {
            let acc = &mut self.classes[slot];
            for (&pv, &gv) in pred.data.iter().zip(gt.data.iter()) {
                let pp = pv == class;
                let gg = gv == class;
                if pp && gg {
                    acc.intersection += 1;
                    acc.correct_in_gt += 1;
                }
                if pp {
                    acc.pred += 1;
                }
                if gg {
                    acc.gt += 1;
                }
            }
            acc.bf_sum += bf[slot];
            acc.bf_count += 1;
            acc.dice_sum += region[slot].dice;
            acc.dice_sq_sum += region[slot].dice * region[slot].dice;
            acc.dice_count += 1;
        }
        self.images += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &SegAccumulator) {
        self.correct_pixels += other.correct_pixels;
        self.total_pixels += other.total_pixels;
        self.images += other.images;
        for (a, b) in self.classes.iter_mut().zip(other.classes.iter()) {
            a.intersection += b.intersection;
            a.pred += b.pred;
            a.gt += b.gt;
            a.correct_in_gt += b.correct_in_gt;
            a.bf_sum += b.bf_sum;
            a.bf_count += b.bf_count;
            a.dice_sum += b.dice_sum;
            a.dice_sq_sum += b.dice_sq_sum;
            a.dice_count += b.dice_count;
        }
    }

    pub fn images(&self) -> u64 {
        self.images
    }

    pub fn finish(&self) -> Result<SegmentationReport> {
        if self.images == 0 {
            return Err(Error::InvalidParameter("no images evaluated".into()));
        }
        let mut per_class = Vec::with_capacity(2);
        let mut acc_sum = 0.0;
        let mut iou_sum = 0.0;
        let mut w_iou = 0.0;
        let mut bf_mean_sum = 0.0;
        for (slot, class) in [false, true].into_iter().enumerate() {
            let a = &self.classes[slot];
            let union = a.pred + a.gt - a.intersection;
            let iou = if union == 0 {
                1.0
            } else {
                a.intersection as f64 / union as f64
            };
            let dice_agg = if a.pred + a.gt == 0 {
                1.0
            } else {
                2.0 * a.intersection as f64 / (a.pred + a.gt) as f64
            };
            let acc = if a.gt == 0 {
                1.0
            } else {
                a.correct_in_gt as f64 / a.gt as f64
            };
            let bf = if a.bf_count == 0 {
                1.0
            } else {
                a.bf_sum / a.bf_count as f64
            };
            let (dice_mean, dice_ci) = mean_ci95(a.dice_sum, a.dice_sq_sum, a.dice_count);
            per_class.push(RegionClassReport {
                class: if class { "infected" } else { "background" }.to_string(),
                accuracy: acc,
                iou,
                dice: dice_agg,
                bf_score: bf,
                dice_mean,
                dice_ci_low: dice_ci.0,
                dice_ci_high: dice_ci.1,
            });
            acc_sum += acc;
            iou_sum += iou;
            let freq = a.gt as f64 / self.total_pixels as f64;
            w_iou += freq * iou;
            bf_mean_sum += bf;
        }
        Ok(SegmentationReport {
            per_class,
            g_acc: self.correct_pixels as f64 / self.total_pixels as f64,
            m_acc: acc_sum / 2.0,
            m_iou: iou_sum / 2.0,
            w_iou,
            m_bfs: bf_mean_sum / 2.0,
            images: self.images,
        })
    }
}

/// Normal-approximation 95% interval for a mean from (sum, sum of squares, n),
/// clamped to [0,1] since every aggregated metric is a ratio.
fn mean_ci95(sum: f64, sq_sum: f64, n: u64) -> (f64, (f64, f64)) {
    let nf = n as f64;
    let mean = sum / nf;
    if n < 2 {
        return (mean, (mean, mean));
    }
    let var = ((sq_sum - sum * sum / nf) / (nf - 1.0)).max(0.0);
    let half = Z95 * (var / nf).sqrt();
    (mean, ((mean - half).max(0.0), (mean + half).min(1.0)))
}

#[derive(Clone, Debug, Serialize)]
pub struct RegionClassReport {
    pub class: String,
    pub accuracy: f64,
    pub iou: f64,
    pub dice: f64,
    pub bf_score: f64,
    pub dice_mean: f64,
    pub dice_ci_low: f64,
    pub dice_ci_high: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SegmentationReport {
    pub per_class: Vec<RegionClassReport>,
    pub g_acc: f64,
    pub m_acc: f64,
    pub m_iou: f64,
    pub w_iou: f64,
    pub m_bfs: f64,
    pub images: u64,
}

// ── Precision-recall curve and AUC ──────────────────────────────────────

#[derive(Clone, Copy, Debug, Serialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    pub auc: f64,
}

/// Precision/recall at every distinct score threshold (descending) with
/// trapezoidal area over recall, anchored at (recall 0, first precision).
/// Equal scores are grouped into one threshold.
pub fn pr_curve_auc(scores: &[f64], labels: &[bool]) -> Result<PrCurve> {
    if scores.len() != labels.len() {
        return Err(Error::ShapeMismatch("scores/labels length mismatch".into()));
    }
    let pos_total = labels.iter().filter(|&&l| l).count() as u64;
    let neg_total = labels.len() as u64 - pos_total;
    if pos_total == 0 || neg_total == 0 {
        return Err(Error::InvalidParameter(
            "PR curve needs at least one positive and one negative label".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(std::cmp::Ordering::Equal));

    let mut points = Vec::new();
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        // consume the whole tie group
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(PrPoint {
            threshold: t,
            precision: tp as f64 / (tp + fp) as f64,
            recall: tp as f64 / pos_total as f64,
        });
    }

    let mut auc = 0.0;
    let mut prev_r = 0.0;
    let mut prev_p = points[0].precision;
    for pt in &points {
        auc += (pt.recall - prev_r) * (pt.precision + prev_p) / 2.0;
        prev_r = pt.recall;
        prev_p = pt.precision;
    }
    Ok(PrCurve { points, auc })
}

// ── Confidence intervals ────────────────────────────────────────────────

/// Wilson score interval for a binomial proportion at 95%.
pub fn wilson_interval(successes: u64, n: u64) -> Result<(f64, f64)> {
    if n == 0 {
        return Err(Error::InvalidParameter("wilson interval of empty data".into()));
    }
    if successes > n {
        return Err(Error::InvalidParameter("successes exceed trials".into()));
    }
    let nf = n as f64;
    let p = successes as f64 / nf;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = Z95 * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    // the analytic endpoints at p in {0, 1} are exactly 0 and 1
    let lo = if successes == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if successes == n { 1.0 } else { (center + half).min(1.0) };
    Ok((lo, hi))
}

/// Percentile bootstrap CI for PR-AUC: 1000 seeded resamples; degenerate
/// single-class resamples are skipped.
pub fn bootstrap_auc_ci(
    scores: &[f64],
    labels: &[bool],
    resamples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if scores.is_empty() || scores.len() != labels.len() {
        return Err(Error::InvalidParameter("bootstrap needs non-empty paired data".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = scores.len();
    let mut aucs = Vec::with_capacity(resamples);
    let mut s = vec![0.0; n];
    let mut l = vec![false; n];
    for _ in 0..resamples {
        for i in 0..n {
            let j = rng.gen_range(0..n);
            s[i] = scores[j];
            l[i] = labels[j];
        }
        if let Ok(curve) = pr_curve_auc(&s, &l) {
            aucs.push(curve.auc);
        }
    }
    if aucs.is_empty() {
        return Err(Error::InvalidParameter(
            "all bootstrap resamples were single-class".into(),
        ));
    }
    aucs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = |frac: f64| {
        let idx = ((aucs.len() - 1) as f64 * frac).round() as usize;
        aucs[idx]
    };
    Ok((q(0.025), q(0.975)))
}

// ── Combined report ─────────────────────────────────────────────────────

#[derive(Clone, Debug, Serialize)]
pub struct ClassificationReport {
    pub counts: ConfusionCounts,
    pub metrics: ClassificationMetrics,
    pub accuracy_ci_low: f64,
    pub accuracy_ci_high: f64,
    pub pr_auc: f64,
    pub auc_ci_low: f64,
    pub auc_ci_high: f64,
    #[serde(skip)]
    pub pr_points: Vec<PrPoint>,
}

/// Score-based classification evaluation: predictions are score >= 0.5.
pub fn evaluate_classification(
    scores: &[f64],
    truths: &[bool],
    seed: u64,
) -> Result<ClassificationReport> {
    let preds: Vec<bool> = scores.iter().map(|&s| s >= 0.5).collect();
    let counts = confusion(&preds, truths, true)?;
    let metrics = classification_metrics(&counts)?;
    let (acc_lo, acc_hi) = wilson_interval(counts.tp + counts.tn, counts.total())?;
    let curve = pr_curve_auc(scores, truths)?;
    let (auc_lo, auc_hi) = bootstrap_auc_ci(scores, truths, 1000, seed)?;
    Ok(ClassificationReport {
        counts,
        metrics,
        accuracy_ci_low: acc_lo,
        accuracy_ci_high: acc_hi,
        pr_auc: curve.auc,
        auc_ci_low: auc_lo,
        auc_ci_high: auc_hi,
        pr_points: curve.points,
    })
}

/// Top-level evaluation output; either or both sections may be present.
#[derive(Clone, Debug, Serialize, Default)]
pub struct MetricsReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classification: Option<ClassificationReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub segmentation: Option<SegmentationReport>,
}

impl MetricsReport {
    /// Flat `metric,value` CSV rows for spreadsheet-style consumption.
    pub fn to_flat_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        if let Some(c) = &self.classification {
            let m = &c.metrics;
            for (k, v) in [
                ("accuracy", m.accuracy),
                ("precision", m.precision),
                ("recall", m.recall),
                ("specificity", m.specificity),
                ("f_score", m.f_score),
                ("mcc", m.mcc),
                ("accuracy_ci_low", c.accuracy_ci_low),
                ("accuracy_ci_high", c.accuracy_ci_high),
                ("pr_auc", c.pr_auc),
                ("auc_ci_low", c.auc_ci_low),
                ("auc_ci_high", c.auc_ci_high),
            ] {
                out.push_str(&format!("{k},{v}\n"));
            }
        }
        if let Some(s) = &self.segmentation {
            for (k, v) in [
                ("g_acc", s.g_acc),
                ("m_acc", s.m_acc),
                ("m_iou", s.m_iou),
                ("w_iou", s.w_iou),
                ("m_bfs", s.m_bfs),
            ] {
                out.push_str(&format!("{k},{v}\n"));
            }
            for c in &s.per_class {
                for (k, v) in [
                    ("accuracy", c.accuracy),
                    ("iou", c.iou),
                    ("dice", c.dice),
                    ("bf_score", c.bf_score),
                ] {
                    out.push_str(&format!("{}_{k},{v}\n", c.class));
                }
            }
        }
        out
    }

    /// PR points as `threshold,precision,recall` CSV.
    pub fn pr_csv(&self) -> Option<String> {
        let c = self.classification.as_ref()?;
        let mut out = String::from("threshold,precision,recall\n");
        for p in &c.pr_points {
            out.push_str(&format!("{},{},{}\n", p.threshold, p.precision, p.recall));
        }
        Some(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(h: usize, w: usize, v: &[u8]) -> Mask {
        Mask::new(h, w, v.iter().map(|&b| b != 0).collect()).unwrap()
    }

    #[test]
    fn confusion_perfect_and_inverted() {
        let t = [true, false, true, false];
        let c = confusion(&t, &t, true).unwrap();
        assert_eq!((c.tp, c.tn, c.fp, c.fn_), (2, 2, 0, 0));
        let inv: Vec<bool> = t.iter().map(|&v| !v).collect();
        let c = confusion(&inv, &t, true).unwrap();
        assert_eq!((c.tp, c.tn, c.fp, c.fn_), (0, 0, 2, 2));
    }

    #[test]
    fn confusion_rejects_length_mismatch() {
        assert!(confusion(&[true], &[true, false], true).is_err());
    }

    #[test]
    fn perfect_classifier_scores_one_everywhere() {
        let c = ConfusionCounts {
            tp: 50,
            tn: 50,
            fp: 0,
            fn_: 0,
        };
        let m = classification_metrics(&c).unwrap();
        for v in [m.accuracy, m.precision, m.recall, m.specificity, m.f_score, m.mcc] {
            assert_eq!(v, 1.0);
        }
    }

    #[test]
    fn mcc_known_value() {
        // tp=50 tn=40 fp=10 fn=5 -> ~0.7156
        let c = ConfusionCounts {
            tp: 50,
            tn: 40,
            fp: 10,
            fn_: 5,
        };
        let m = classification_metrics(&c).unwrap();
        let expect = (50.0 * 40.0 - 10.0 * 5.0)
            / ((50.0f64 + 10.0) * (50.0 + 5.0) * (40.0 + 10.0) * (40.0 + 5.0)).sqrt();
        assert!((m.mcc - expect).abs() < 1e-12);
        assert!((m.mcc - 0.7156).abs() < 5e-4);
    }

    #[test]
    fn single_class_predictions_flag_mcc_degenerate() {
        let c = confusion(&[true, true, true, true], &[true, false, true, false], true).unwrap();
        let m = classification_metrics(&c).unwrap();
        assert_eq!(m.mcc, 0.0);
        assert!(m.degenerate.iter().any(|d| d == "mcc"));
    }

    #[test]
    fn mcc_symmetric_under_pred_truth_swap() {
        let preds = [true, false, true, true, false, true];
        let truths = [true, true, false, true, false, false];
        let a = classification_metrics(&confusion(&preds, &truths, true).unwrap()).unwrap();
        let b = classification_metrics(&confusion(&truths, &preds, true).unwrap()).unwrap();
        assert!((a.mcc - b.mcc).abs() < 1e-12);
    }

    #[test]
    fn recall_of_positive_equals_specificity_of_negative() {
        let preds = [true, false, true, true, false];
        let truths = [true, true, false, true, false];
        let pos = classification_metrics(&confusion(&preds, &truths, true).unwrap()).unwrap();
        let neg = classification_metrics(&confusion(&preds, &truths, false).unwrap()).unwrap();
        assert!((pos.recall - neg.specificity).abs() < 1e-12);
        assert!((pos.specificity - neg.recall).abs() < 1e-12);
    }

    #[test]
    fn region_identity_scores_one() {
        let m = mask(2, 2, &[1, 0, 0, 1]);
        let r = region_metrics(&m, &m).unwrap();
        for c in r {
            assert_eq!(c.iou, 1.0);
            assert_eq!(c.dice, 1.0);
            assert_eq!(c.accuracy, 1.0);
        }
    }

    #[test]
    fn region_half_coverage() {
        // gt has 100 fg pixels; pred covers exactly half with no fp
        let mut gt = vec![0u8; 200];
        let mut pred = vec![0u8; 200];
        for i in 0..100 {
            gt[i] = 1;
        }
        for i in 0..50 {
            pred[i] = 1;
        }
        let r = region_metrics(&mask(10, 20, &pred), &mask(10, 20, &gt)).unwrap();
        let fg = &r[1];
        assert!((fg.iou - 0.5).abs() < 1e-12);
        assert!((fg.dice - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn region_disjoint_nonempty_scores_zero() {
        let pred = mask(1, 4, &[1, 1, 0, 0]);
        let gt = mask(1, 4, &[0, 0, 1, 1]);
        let r = region_metrics(&pred, &gt).unwrap();
        assert_eq!(r[1].iou, 0.0);
        assert_eq!(r[1].dice, 0.0);
    }

    #[test]
    fn region_empty_vs_empty_scores_one() {
        let empty = mask(2, 2, &[0, 0, 0, 0]);
        let r = region_metrics(&empty, &empty).unwrap();
        assert_eq!(r[1].iou, 1.0);
        assert_eq!(r[1].dice, 1.0);
    }

    #[test]
    fn dice_iou_identity_holds() {
        let pred = mask(2, 4, &[1, 1, 0, 1, 0, 0, 1, 0]);
        let gt = mask(2, 4, &[1, 0, 0, 1, 0, 1, 1, 0]);
        for c in region_metrics(&pred, &gt).unwrap() {
            assert!((c.dice - 2.0 * c.iou / (1.0 + c.iou)).abs() < 1e-12);
            assert!(c.dice >= c.iou);
        }
    }

    #[test]
    fn bf_identical_masks_score_one() {
        let m = mask(4, 4, &[0, 0, 0, 0, 0, 1, 1, 0, 0, 1, 1, 0, 0, 0, 0, 0]);
        let bf = bf_score(&m, &m, 2.0).unwrap();
        assert_eq!(bf, [1.0, 1.0]);
    }

    #[test]
    fn bf_shifted_square_within_tolerance_scores_one() {
        // 2x2 square shifted right by one pixel
        let a = mask(6, 6, &{
            let mut v = vec![0u8; 36];
            for y in 2..4 {
                for x in 1..3 {
                    v[y * 6 + x] = 1;
                }
            }
            v
        });
        let b = mask(6, 6, &{
            let mut v = vec![0u8; 36];
            for y in 2..4 {
                for x in 2..4 {
                    v[y * 6 + x] = 1;
                }
            }
            v
        });
        let bf = bf_score(&a, &b, 2.0).unwrap();
        assert_eq!(bf[1], 1.0);
    }

    #[test]
    fn bf_far_regions_score_zero() {
        let a = mask(8, 8, &{
            let mut v = vec![0u8; 64];
            v[0] = 1;
            v
        });
        let b = mask(8, 8, &{
            let mut v = vec![0u8; 64];
            v[63] = 1;
            v
        });
        assert_eq!(bf_score(&a, &b, 2.0).unwrap()[1], 0.0);
    }

    #[test]
    fn aggregate_perfect_prediction_is_all_ones() {
        let m = mask(4, 4, &[0, 1, 1, 0, 0, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0]);
        let mut acc = SegAccumulator::new();
        acc.add_image(&m, &m, None).unwrap();
        let rep = acc.finish().unwrap();
        assert_eq!(rep.g_acc, 1.0);
        assert_eq!(rep.m_acc, 1.0);
        assert_eq!(rep.m_iou, 1.0);
        assert_eq!(rep.w_iou, 1.0);
        assert_eq!(rep.m_bfs, 1.0);
    }

    #[test]
    fn aggregate_weighted_iou_example() {
        // class IoUs {1.0, 0.5} at gt frequencies {0.9, 0.1}:
        // M_IoU = 0.75, W_IoU = 0.95
        // bg: 90 pixels all correct. fg: 10 gt pixels, pred covers 5 of them
        // and nothing else -> fg IoU 0.5; but bg then has 5 extra pred pixels.
        // Build counts directly to isolate the aggregate arithmetic.
        let mut acc = SegAccumulator::new();
        acc.classes[0] = ClassAccum {
            intersection: 90,
            pred: 90,
            gt: 90,
            correct_in_gt: 90,
            bf_sum: 1.0,
            bf_count: 1,
            dice_sum: 1.0,
            dice_sq_sum: 1.0,
            dice_count: 1,
        };
        acc.classes[1] = ClassAccum {
            intersection: 5,
            pred: 5,
            gt: 10,
            correct_in_gt: 5,
            bf_sum: 1.0,
            bf_count: 1,
            dice_sum: 2.0 / 3.0,
            dice_sq_sum: 4.0 / 9.0,
            dice_count: 1,
        };
        acc.correct_pixels = 95;
        acc.total_pixels = 100;
        acc.images = 1;
        let rep = acc.finish().unwrap();
        assert!((rep.m_iou - 0.75).abs() < 1e-12);
        assert!((rep.w_iou - 0.95).abs() < 1e-12);
    }

    #[test]
    fn aggregate_is_order_invariant() {
        let a = mask(4, 4, &[1, 1, 0, 0, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0]);
        let b = mask(4, 4, &[0, 0, 0, 0, 0, 1, 1, 0, 0, 1, 1, 0, 0, 0, 0, 0]);
        let gt = mask(4, 4, &[1, 0, 0, 0, 1, 1, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0]);
        let mut fwd = SegAccumulator::new();
        fwd.add_image(&a, &gt, None).unwrap();
        fwd.add_image(&b, &gt, None).unwrap();
        let mut rev = SegAccumulator::new();
        rev.add_image(&b, &gt, None).unwrap();
        rev.add_image(&a, &gt, None).unwrap();
        let (fa, fb) = (fwd.finish().unwrap(), rev.finish().unwrap());
        assert_eq!(fa.g_acc, fb.g_acc);
        assert_eq!(fa.m_iou, fb.m_iou);
        assert_eq!(fa.w_iou, fb.w_iou);
        assert_eq!(fa.m_bfs, fb.m_bfs);
    }

    #[test]
    fn pr_perfectly_separated_has_unit_auc() {
        let scores = [0.9, 0.8, 0.7, 0.2, 0.1];
        let labels = [true, true, true, false, false];
        let c = pr_curve_auc(&scores, &labels).unwrap();
        assert_eq!(c.auc, 1.0);
    }

    #[test]
    fn pr_all_equal_scores_single_point_at_prevalence() {
        let scores = [0.5; 6];
        let labels = [true, false, true, false, false, false];
        let c = pr_curve_auc(&scores, &labels).unwrap();
        assert_eq!(c.points.len(), 1);
        assert_eq!(c.points[0].recall, 1.0);
        assert!((c.points[0].precision - 2.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn pr_rejects_single_class_labels() {
        assert!(pr_curve_auc(&[0.1, 0.2], &[true, true]).is_err());
    }

    #[test]
    fn auc_invariant_under_monotone_transform() {
        let scores = [0.3, 0.9, 0.1, 0.55, 0.42, 0.77];
        let labels = [false, true, false, true, false, true];
        let a = pr_curve_auc(&scores, &labels).unwrap().auc;
        let transformed: Vec<f64> = scores.iter().map(|&s| (5.0 * s).exp()).collect();
        let b = pr_curve_auc(&transformed, &labels).unwrap().auc;
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn wilson_half_at_100() {
        let (lo, hi) = wilson_interval(50, 100).unwrap();
        assert!((lo - 0.404).abs() < 1e-3, "{lo}");
        assert!((hi - 0.596).abs() < 1e-3, "{hi}");
    }

    #[test]
    fn wilson_contains_estimate_and_stays_in_unit_interval() {
        for (s, n) in [(0u64, 10u64), (10, 10), (3, 7), (999, 1000)] {
            let (lo, hi) = wilson_interval(s, n).unwrap();
            let p = s as f64 / n as f64;
            assert!(lo >= 0.0 && hi <= 1.0);
            assert!(lo <= p && p <= hi);
        }
    }

    #[test]
    fn wilson_certain_limit() {
        let (lo, hi) = wilson_interval(100_000, 100_000).unwrap();
        assert_eq!(hi, 1.0);
        assert!(lo > 0.9999);
    }

    #[test]
    fn bootstrap_ci_of_perfect_scores_is_unit() {
        let scores = [0.9, 0.8, 0.7, 0.3, 0.2, 0.1];
        let labels = [true, true, true, false, false, false];
        let (lo, hi) = bootstrap_auc_ci(&scores, &labels, 200, 7).unwrap();
        assert_eq!((lo, hi), (1.0, 1.0));
    }
}
