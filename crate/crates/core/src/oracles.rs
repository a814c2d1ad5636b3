//! Brute-force reference implementations used by the test suites.
//!
//! Everything here is written as plain nested loops, independent of the
//! production kernels' lowering (no im2col, no grouped counting), so the two
//! paths can be compared exactly. Summation orders are fixed: convolution
//! accumulates over (channel, kernel row, kernel col) with the bias added
//! last, matching the documented production order so f64 comparisons can be
//! bit-exact.

use crate::metrics::Mask;
use crate::tensor::{nchw_index, Scalar, Tensor};

/// Direct cross-correlation: one output element at a time.
pub fn conv2d_oracle<T: Scalar>(
    x: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    stride: (usize, usize),
    pad: (usize, usize, usize, usize), // top, bottom, left, right
) -> Tensor<T> {
    let (n, cin, h, w) = x.dims4().unwrap();
    let (cout, _, kh, kw) = weights.dims4().unwrap();
    let oh = (h + pad.0 + pad.1 - kh) / stride.0 + 1;
    let ow = (w + pad.2 + pad.3 - kw) / stride.1 + 1;
    let mut out = Tensor::zeros(&[n, cout, oh, ow]);
    for ni in 0..n {
        for oc in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = T::ZERO;
                    for ci in 0..cin {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride.0 + ky) as isize - pad.0 as isize;
                                let ix = (ox * stride.1 + kx) as isize - pad.2 as isize;
                                if iy < 0 || iy >= h as isize || ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let xv = x.data()
                                    [nchw_index(x.shape(), ni, ci, iy as usize, ix as usize)];
                                let wv =
                                    weights.data()[nchw_index(weights.shape(), oc, ci, ky, kx)];
                                acc += wv * xv;
                            }
                        }
                    }
                    out.data_mut()[nchw_index(&[n, cout, oh, ow], ni, oc, oy, ox)] =
                        acc + bias.data()[oc];
                }
            }
        }
    }
    out
}

/// Exhaustive per-window scan; ties keep the first row-major position.
pub fn max_pool2d_oracle<T: Scalar>(x: &Tensor<T>) -> (Tensor<T>, Vec<usize>) {
    let (n, c, h, w) = x.dims4().unwrap();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let mut idx = Vec::with_capacity(n * c * oh * ow);
    for ni in 0..n {
        for ci in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = x.data()[nchw_index(x.shape(), ni, ci, 2 * oy, 2 * ox)];
                    let mut best_at = nchw_index(x.shape(), ni, ci, 2 * oy, 2 * ox);
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let at = nchw_index(x.shape(), ni, ci, 2 * oy + dy, 2 * ox + dx);
                            if x.data()[at] > best {
                                best = x.data()[at];
                                best_at = at;
                            }
                        }
                    }
                    out.data_mut()[nchw_index(&[n, c, oh, ow], ni, ci, oy, ox)] = best;
                    idx.push(best_at);
                }
            }
        }
    }
    (out, idx)
}

pub fn avg_pool2d_oracle<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (n, c, h, w) = x.dims4().unwrap();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    for ni in 0..n {
        for ci in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut s = T::ZERO;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            s += x.data()[nchw_index(x.shape(), ni, ci, 2 * oy + dy, 2 * ox + dx)];
                        }
                    }
                    out.data_mut()[nchw_index(&[n, c, oh, ow], ni, ci, oy, ox)] =
                        s * T::from_f64(0.25);
                }
            }
        }
    }
    out
}

/// Scatter each pooled value back to its recorded flat source position.
pub fn max_unpool_scatter_oracle<T: Scalar>(
    pooled: &Tensor<T>,
    indices: &[usize],
    input_shape: &[usize],
) -> Tensor<T> {
    let mut out = Tensor::zeros(input_shape);
    for (o, &i) in indices.iter().enumerate() {
        out.data_mut()[i] = pooled.data()[o];
    }
    out
}

/// Replicate every value into its 2x2 window.
pub fn avg_unpool_replicate_oracle<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (n, c, h, w) = x.dims4().unwrap();
    let out_shape = [n, c, 2 * h, 2 * w];
    let mut out = Tensor::zeros(&out_shape);
    for ni in 0..n {
        for ci in 0..c {
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    out.data_mut()[nchw_index(&out_shape, ni, ci, y, xx)] =
                        x.data()[nchw_index(x.shape(), ni, ci, y / 2, xx / 2)];
                }
            }
        }
    }
    out
}

/// Plain counting loop over paired boolean labels.
pub fn confusion_tally_oracle(preds: &[bool], truths: &[bool]) -> (u64, u64, u64, u64) {
    let (mut tp, mut tn, mut fp, mut fn_) = (0, 0, 0, 0);
    for i in 0..preds.len() {
        if preds[i] && truths[i] {
            tp += 1;
        }
        if !preds[i] && !truths[i] {
            tn += 1;
        }
        if preds[i] && !truths[i] {
            fp += 1;
        }
        if !preds[i] && truths[i] {
            fn_ += 1;
        }
    }
    (tp, tn, fp, fn_)
}

/// Pixel-counting (accuracy, IoU, Dice) for one class, divisions last.
pub fn region_tally_oracle(pred: &Mask, gt: &Mask, class: bool) -> (f64, f64, f64) {
    let mut inter = 0u64;
    let mut pred_n = 0u64;
    let mut gt_n = 0u64;
    for i in 0..pred.data.len() {
        let p = pred.data[i] == class;
        let g = gt.data[i] == class;
        if p {
            pred_n += 1;
        }
        if g {
            gt_n += 1;
        }
        if p && g {
            inter += 1;
        }
    }
    let union = pred_n + gt_n - inter;
    let iou = if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    };
    let dice = if pred_n + gt_n == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (pred_n + gt_n) as f64
    };
    let acc = if gt_n == 0 {
        1.0
    } else {
        inter as f64 / gt_n as f64
    };
    (acc, iou, dice)
}

/// Boundary F1 by explicit distance maps: boundary pixels are class pixels
/// with a four-neighbor outside the class (image border counts as outside);
/// match fractions computed by a full double loop.
pub fn bf_oracle(pred: &Mask, gt: &Mask, class: bool, tol: f64) -> f64 {
    let boundary = |m: &Mask| -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        let dirs = [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)];
        for y in 0..m.h as i64 {
            for x in 0..m.w as i64 {
                if m.data[(y as usize) * m.w + x as usize] != class {
                    continue;
                }
                let mut is_boundary = false;
                for (dy, dx) in dirs {
                    let (ny, nx) = (y + dy, x + dx);
                    if ny < 0 || nx < 0 || ny >= m.h as i64 || nx >= m.w as i64 {
                        is_boundary = true;
                    } else if m.data[(ny as usize) * m.w + nx as usize] != class {
                        is_boundary = true;
                    }
                }
                if is_boundary {
                    out.push((y as f64, x as f64));
                }
            }
        }
        out
    };
    let bp = boundary(pred);
    let bg = boundary(gt);
    if bp.is_empty() && bg.is_empty() {
        return 1.0;
    }
    if bp.is_empty() || bg.is_empty() {
        return 0.0;
    }
    let frac = |from: &[(f64, f64)], to: &[(f64, f64)]| -> f64 {
        let mut hits = 0usize;
        for a in from {
            let mut best = f64::INFINITY;
            for b in to {
                let d = ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
                if d < best {
                    best = d;
                }
            }
            if best <= tol {
                hits += 1;
            }
        }
        hits as f64 / from.len() as f64
    };
    let p = frac(&bp, &bg);
    let r = frac(&bg, &bp);
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Exhaustive threshold sweep for the PR curve area: every distinct score is
/// a threshold; precision/recall counted from scratch at each; trapezoid
/// anchored at (recall 0, first precision).
pub fn pr_auc_sweep_oracle(scores: &[f64], labels: &[bool]) -> f64 {
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let pos: usize = labels.iter().filter(|&&l| l).count();
    let mut points = Vec::new();
    for &t in &thresholds {
        let mut tp = 0usize;
        let mut fp = 0usize;
        for i in 0..scores.len() {
            if scores[i] >= t {
                if labels[i] {
                    tp += 1;
                } else {
                    fp += 1;
                }
            }
        }
        points.push((tp as f64 / pos as f64, tp as f64 / (tp + fp) as f64));
    }
    let mut auc = 0.0;
    let mut prev = (0.0, points[0].1);
    for &(r, p) in &points {
        auc += (r - prev.0) * (p + prev.1) / 2.0;
        prev = (r, p);
    }
    auc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::{self, ConvParams, Padding};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_t(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn conv_matches_nested_loop_oracle_exactly() {
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(9000 + seed);
            let n = rng.gen_range(1..=2);
            let cin = rng.gen_range(1..=3);
            let cout = rng.gen_range(1..=3);
            let h = rng.gen_range(3..=8);
            let w = rng.gen_range(3..=8);
            let k = rng.gen_range(1..=3.min(h.min(w)));
            let stride = rng.gen_range(1..=2);
            let pad = rng.gen_range(0..=1);
            let x = rand_t(&[n, cin, h, w], seed * 3 + 1);
            let wt = rand_t(&[cout, cin, k, k], seed * 3 + 2);
            let b = rand_t(&[cout], seed * 3 + 3);
            let p = ConvParams::new(
                wt.clone(),
                b.clone(),
                (stride, stride),
                Padding::symmetric(pad, pad),
            )
            .unwrap();
            if (h + 2 * pad) < k || (w + 2 * pad) < k {
                continue;
            }
            let got = ops::conv2d(&x, &p).unwrap();
            let want = conv2d_oracle(&x, &wt, &b, (stride, stride), (pad, pad, pad, pad));
            assert_eq!(got, want, "seed {seed}");
        }
    }

    #[test]
    fn pools_match_oracles_exactly() {
        for seed in 0..50 {
            let x = rand_t(&[2, 3, 8, 8], 500 + seed);
            let (got, gidx) = ops::max_pool2d(&x).unwrap();
            let (want, widx) = max_pool2d_oracle(&x);
            assert_eq!(got, want);
            assert_eq!(gidx.indices, widx);
            assert_eq!(ops::avg_pool2d(&x).unwrap(), avg_pool2d_oracle(&x));

            let unp = ops::max_unpool2d(&got, &gidx).unwrap();
            assert_eq!(
                unp,
                max_unpool_scatter_oracle(&got, &gidx.indices, x.shape())
            );
            let rep = ops::avg_unpool2d(&got, (8, 8)).unwrap();
            assert_eq!(rep, avg_unpool_replicate_oracle(&got));
        }
    }

    #[test]
    fn pr_auc_matches_sweep_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(321);
        for _ in 0..20 {
            let n = rng.gen_range(4..20);
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
            if labels.iter().all(|&l| l) {
                labels[0] = false;
            }
            if labels.iter().all(|&l| !l) {
                labels[0] = true;
            }
            let got = crate::metrics::pr_curve_auc(&scores, &labels).unwrap().auc;
            let want = pr_auc_sweep_oracle(&scores, &labels);
            assert!((got - want).abs() < 1e-12);
        }
    }
}
