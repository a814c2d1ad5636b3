//! Property tests over randomly generated inputs.

use covct_core::metrics::{
    classification_metrics, confusion, pr_curve_auc, region_metrics, wilson_interval, Mask,
};
use covct_core::ops::{self, BatchNormParams, ConvParams, Mode, Padding};
use covct_core::oracles;
use covct_core::tensor::Tensor;
use covct_core::wavelet::{dwt2_haar, enhance_image, idwt2_haar};
use proptest::prelude::*;

fn tensor4(
    n: usize,
    c: usize,
    h: usize,
    w: usize,
) -> impl Strategy<Value = Tensor<f64>> {
    proptest::collection::vec(-1.0..1.0f64, n * c * h * w)
        .prop_map(move |v| Tensor::new(vec![n, c, h, w], v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conv_equals_nested_loop_oracle(
        x in tensor4(2, 3, 8, 8),
        wv in proptest::collection::vec(-1.0..1.0f64, 2 * 3 * 3 * 3),
        bv in proptest::collection::vec(-1.0..1.0f64, 2),
        stride in 1usize..=2,
        pad in 0usize..=1,
    ) {
        let w = Tensor::new(vec![2, 3, 3, 3], wv).unwrap();
        let b = Tensor::new(vec![2], bv).unwrap();
        let p = ConvParams::new(w.clone(), b.clone(), (stride, stride), Padding::symmetric(pad, pad)).unwrap();
        let got = ops::conv2d(&x, &p).unwrap();
        let want = oracles::conv2d_oracle(&x, &w, &b, (stride, stride), (pad, pad, pad, pad));
        prop_assert_eq!(got, want);
    }

    #[test]
    fn pooling_equals_window_scan_oracles(x in tensor4(2, 3, 8, 8)) {
        let (got, gidx) = ops::max_pool2d(&x).unwrap();
        let (want, widx) = oracles::max_pool2d_oracle(&x);
        prop_assert_eq!(&got, &want);
        prop_assert_eq!(&gidx.indices, &widx);
        prop_assert_eq!(ops::avg_pool2d(&x).unwrap(), oracles::avg_pool2d_oracle(&x));

        // unpooling scatters exactly the per-window maxima; sums agree
        let un = ops::max_unpool2d(&got, &gidx).unwrap();
        prop_assert_eq!(
            &un,
            &oracles::max_unpool_scatter_oracle(&got, &gidx.indices, x.shape())
        );
        prop_assert!((un.sum() - got.sum()).abs() < 1e-12);
    }

    #[test]
    fn avg_unpool_equals_replication_oracle(x in tensor4(1, 2, 4, 4)) {
        let got = ops::avg_unpool2d(&x, (8, 8)).unwrap();
        prop_assert_eq!(got, oracles::avg_unpool_replicate_oracle(&x));
    }

    #[test]
    fn softmax_normalizes_along_class_axis(x in tensor4(2, 4, 2, 2)) {
        let p = ops::softmax(&x, 1).unwrap();
        for n in 0..2 {
            for px in 0..4 {
                let mut s = 0.0;
                for c in 0..4 {
                    let v = p.data()[(n * 4 + c) * 4 + px];
                    prop_assert!((0.0..=1.0).contains(&v));
                    s += v;
                }
                prop_assert!((s - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn batch_norm_train_standardizes_channels(x in tensor4(4, 2, 4, 4)) {
        let mut p = BatchNormParams::<f64>::new(2, 1e-12, 0.1).unwrap();
        let (y, _) = ops::batch_norm_train(&x, &mut p).unwrap();
        for c in 0..2 {
            let mut vals = Vec::new();
            for n in 0..4 {
                for px in 0..16 {
                    vals.push(y.data()[(n * 2 + c) * 16 + px]);
                }
            }
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / vals.len() as f64;
            prop_assert!(m.abs() < 1e-5, "channel mean {m}");
            // a constant channel normalizes to all-zeros (variance 0)
            prop_assert!((var - 1.0).abs() < 1e-4 || var.abs() < 1e-9, "channel var {var}");
        }
    }

    #[test]
    fn dropout_is_bit_reproducible(x in tensor4(1, 1, 8, 8), seed in any::<u64>()) {
        let (a, _) = ops::dropout(&x, 0.4, Mode::Train, seed).unwrap();
        let (b, _) = ops::dropout(&x, 0.4, Mode::Train, seed).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn wavelet_roundtrip_and_energy(v in proptest::collection::vec(-1.0..1.0f64, 16 * 16)) {
        let x = Tensor::new(vec![16, 16], v).unwrap();
        let s = dwt2_haar(&x).unwrap();
        let e_in: f64 = x.data().iter().map(|a| a * a).sum();
        let e_out: f64 = [&s.ll, &s.lh, &s.hl, &s.hh]
            .iter()
            .flat_map(|b| b.data().iter())
            .map(|a| a * a)
            .sum();
        prop_assert!(((e_in - e_out) / e_in.max(1e-9)).abs() < 1e-6);
        let y = idwt2_haar(&s).unwrap();
        let max_err = x
            .data()
            .iter()
            .zip(y.data().iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        prop_assert!(max_err < 1e-10);
    }

    #[test]
    fn enhancement_output_stays_in_unit_interval(v in proptest::collection::vec(0.0..1.0f64, 16 * 16)) {
        let x = Tensor::new(vec![16, 16], v).unwrap();
        let e = enhance_image(&x).unwrap();
        prop_assert!(e.data().iter().all(|&p| (0.0..=1.0).contains(&p)));
    }

    #[test]
    fn confusion_equals_tally_and_mcc_is_symmetric(
        preds in proptest::collection::vec(any::<bool>(), 100),
        truths in proptest::collection::vec(any::<bool>(), 100),
    ) {
        let c = confusion(&preds, &truths, true).unwrap();
        let (tp, tn, fp, fn_) = oracles::confusion_tally_oracle(&preds, &truths);
        prop_assert_eq!((c.tp, c.tn, c.fp, c.fn_), (tp, tn, fp, fn_));

        let a = classification_metrics(&c).unwrap();
        let swapped = confusion(&truths, &preds, true).unwrap();
        let b = classification_metrics(&swapped).unwrap();
        prop_assert!((a.mcc - b.mcc).abs() < 1e-12);

        // recall of the positive class is specificity of the negative class
        let neg = classification_metrics(&confusion(&preds, &truths, false).unwrap()).unwrap();
        prop_assert!((a.recall - neg.specificity).abs() < 1e-12);
    }

    #[test]
    fn region_metrics_match_tally_oracle(
        pv in proptest::collection::vec(any::<bool>(), 64),
        gv in proptest::collection::vec(any::<bool>(), 64),
    ) {
        let pred = Mask::new(8, 8, pv).unwrap();
        let gt = Mask::new(8, 8, gv).unwrap();
        let got = region_metrics(&pred, &gt).unwrap();
        for (slot, class) in [false, true].into_iter().enumerate() {
            let (acc, iou, dice) = oracles::region_tally_oracle(&pred, &gt, class);
            prop_assert_eq!(got[slot].accuracy, acc);
            prop_assert_eq!(got[slot].iou, iou);
            prop_assert_eq!(got[slot].dice, dice);
            // exact algebraic identity
            prop_assert!((got[slot].dice - 2.0 * got[slot].iou / (1.0 + got[slot].iou)).abs() < 1e-12);
            prop_assert!(got[slot].dice >= got[slot].iou);
        }
    }

    #[test]
    fn wilson_contains_estimate(successes in 0u64..=50, extra in 0u64..=50) {
        let n = successes + extra;
        prop_assume!(n > 0);
        let (lo, hi) = wilson_interval(successes, n).unwrap();
        let p = successes as f64 / n as f64;
        prop_assert!((0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi));
        prop_assert!(lo <= p && p <= hi);
    }

    #[test]
    fn auc_is_rank_invariant(
        scores in proptest::collection::vec(0.0..1.0f64, 12),
        labels in proptest::collection::vec(any::<bool>(), 12),
        scale in 0.5..4.0f64,
    ) {
        prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
        let a = pr_curve_auc(&scores, &labels).unwrap().auc;
        let transformed: Vec<f64> = scores.iter().map(|&s| (scale * s).exp()).collect();
        let b = pr_curve_auc(&transformed, &labels).unwrap().auc;
        prop_assert!((a - b).abs() < 1e-9);
    }
}
