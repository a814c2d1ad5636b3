//! Orthonormal 2-D Haar wavelet analysis/synthesis and the two-level
//! image-enhancement fusion.
//!
//! Conventions (fixed, since they vary across the literature): the width
//! axis is transformed first, then the height axis; the analysis filters are
//! low = [1/√2, 1/√2] and high = [1/√2, -1/√2] (i.e. high = (first-second)/√2);
//! LH means low-pass along width, high-pass along height; HL the reverse.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// One decomposition level: four equally-shaped half-resolution subbands.
#[derive(Clone, Debug)]
pub struct SubbandSet<T> {
    pub ll: Tensor<T>,
    pub lh: Tensor<T>,
    pub hl: Tensor<T>,
    pub hh: Tensor<T>,
    pub level: u32,
}

impl<T: Scalar> SubbandSet<T> {
    fn check_consistent(&self) -> Result<(usize, usize)> {
        let (h, w) = self.ll.dims2()?;
        for (name, band) in [("lh", &self.lh), ("hl", &self.hl), ("hh", &self.hh)] {
            if band.shape() != self.ll.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "subband {name} shape {:?} differs from ll {:?}",
                    band.shape(),
                    self.ll.shape()
                )));
            }
        }
        Ok((h, w))
    }
}

/// Extend an image to even (or multiple-of-4) extents by edge replication.
fn replicate_pad<T: Scalar>(x: &Tensor<T>, multiple: usize) -> Result<Tensor<T>> {
    let (h, w) = x.dims2()?;
    let nh = h.div_ceil(multiple) * multiple;
    let nw = w.div_ceil(multiple) * multiple;
    if nh == h && nw == w {
        return Ok(x.clone());
    }
    let mut out = Tensor::zeros(&[nh, nw]);
    for y in 0..nh {
        let sy = y.min(h - 1);
        for xx in 0..nw {
            let sx = xx.min(w - 1);
            out.data_mut()[y * nw + xx] = x.data()[sy * w + sx];
        }
    }
    Ok(out)
}

/// Single-level orthonormal Haar analysis of an H x W image. Odd extents are
/// edge-replicated up to even first.
pub fn dwt2_haar<T: Scalar>(x: &Tensor<T>) -> Result<SubbandSet<T>> {
    let (h0, w0) = x.dims2()?;
    if h0 == 0 || w0 == 0 {
        return Err(Error::ShapeMismatch("empty image".into()));
    }
    let x = replicate_pad(x, 2)?;
    let (h, w) = x.dims2()?;
    let (hh2, hw2) = (h / 2, w / 2);
    let inv_sqrt2 = T::from_f64(std::f64::consts::FRAC_1_SQRT_2);

    // width pass: rows of length w -> low/high halves of length w/2
    let mut low_w = vec![T::ZERO; h * hw2];
    let mut high_w = vec![T::ZERO; h * hw2];
    for y in 0..h {
        for j in 0..hw2 {
            let a = x.data()[y * w + 2 * j];
            let b = x.data()[y * w + 2 * j + 1];
            low_w[y * hw2 + j] = (a + b) * inv_sqrt2;
            high_w[y * hw2 + j] = (a - b) * inv_sqrt2;
        }
    }

    // height pass on both halves
    let mut ll = Tensor::zeros(&[hh2, hw2]);
    let mut lh = Tensor::zeros(&[hh2, hw2]);
    let mut hl = Tensor::zeros(&[hh2, hw2]);
    let mut hh = Tensor::zeros(&[hh2, hw2]);
    for i in 0..hh2 {
        for j in 0..hw2 {
            let lt = low_w[(2 * i) * hw2 + j];
            let lb = low_w[(2 * i + 1) * hw2 + j];
            ll.data_mut()[i * hw2 + j] = (lt + lb) * inv_sqrt2;
            lh.data_mut()[i * hw2 + j] = (lt - lb) * inv_sqrt2;
            let ht = high_w[(2 * i) * hw2 + j];
            let hb = high_w[(2 * i + 1) * hw2 + j];
            hl.data_mut()[i * hw2 + j] = (ht + hb) * inv_sqrt2;
            hh.data_mut()[i * hw2 + j] = (ht - hb) * inv_sqrt2;
        }
    }
    Ok(SubbandSet {
        ll,
        lh,
        hl,
        hh,
        level: 1,
    })
}

/// Exact synthesis inverse of `dwt2_haar`.
pub fn idwt2_haar<T: Scalar>(s: &SubbandSet<T>) -> Result<Tensor<T>> {
    let (hh2, hw2) = s.check_consistent()?;
    let inv_sqrt2 = T::from_f64(std::f64::consts::FRAC_1_SQRT_2);
    let (h, w) = (hh2 * 2, hw2 * 2);

    // invert the height pass
    let mut low_w = vec![T::ZERO; h * hw2];
    let mut high_w = vec![T::ZERO; h * hw2];
    for i in 0..hh2 {
        for j in 0..hw2 {
            let l = s.ll.data()[i * hw2 + j];
            let d = s.lh.data()[i * hw2 + j];
            low_w[(2 * i) * hw2 + j] = (l + d) * inv_sqrt2;
            low_w[(2 * i + 1) * hw2 + j] = (l - d) * inv_sqrt2;
            let l = s.hl.data()[i * hw2 + j];
            let d = s.hh.data()[i * hw2 + j];
            high_w[(2 * i) * hw2 + j] = (l + d) * inv_sqrt2;
            high_w[(2 * i + 1) * hw2 + j] = (l - d) * inv_sqrt2;
        }
    }

    // invert the width pass
    let mut out = Tensor::zeros(&[h, w]);
    for y in 0..h {
        for j in 0..hw2 {
            let l = low_w[y * hw2 + j];
            let d = high_w[y * hw2 + j];
            out.data_mut()[y * w + 2 * j] = (l + d) * inv_sqrt2;
            out.data_mut()[y * w + 2 * j + 1] = (l - d) * inv_sqrt2;
        }
    }
    Ok(out)
}

/// Multi-level decomposition (1..=3): each level re-decomposes the previous
/// LL band. Returned sets are ordered coarse-to-fine reversed, i.e. index 0
/// is level 1.
pub fn decompose<T: Scalar>(x: &Tensor<T>, levels: u32) -> Result<Vec<SubbandSet<T>>> {
    if !(1..=3).contains(&levels) {
        return Err(Error::InvalidParameter(format!(
            "decomposition levels must lie in 1..=3, got {levels}"
        )));
    }
    let mut out = Vec::new();
    let mut cur = x.clone();
    for level in 1..=levels {
        let mut s = dwt2_haar(&cur)?;
        s.level = level;
        cur = s.ll.clone();
        out.push(s);
    }
    Ok(out)
}

/// Inverse of `decompose`.
pub fn reconstruct<T: Scalar>(pyramid: &[SubbandSet<T>]) -> Result<Tensor<T>> {
    let mut iter = pyramid.iter().rev();
    let deepest = iter
        .next()
        .ok_or_else(|| Error::InvalidParameter("empty pyramid".into()))?;
    let mut cur = idwt2_haar(deepest)?;
    for s in iter {
        let mut with_ll = s.clone();
        with_ll.ll = cur;
        cur = idwt2_haar(&with_ll)?;
    }
    Ok(cur)
}

fn zeros_like<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    Tensor::zeros(t.shape())
}

/// Two-level enhancement: synthesize image A from LL(LL1) alone and image B
/// from HH(HH1) alone, add them, then min-max rescale into [0,1]. A flat
/// result maps to all zeros. Inputs with extents not divisible by 4 are
/// edge-replicated up and the output cropped back.
pub fn enhance_image<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (h0, w0) = x.dims2()?;
    let xp = replicate_pad(x, 4)?;

    let level1 = dwt2_haar(&xp)?;
    let ll_tree = dwt2_haar(&level1.ll)?;
    let hh_tree = dwt2_haar(&level1.hh)?;

    // image A: LL(LL1) only
    let ll1_approx = idwt2_haar(&SubbandSet {
        ll: ll_tree.ll.clone(),
        lh: zeros_like(&ll_tree.lh),
        hl: zeros_like(&ll_tree.hl),
        hh: zeros_like(&ll_tree.hh),
        level: 2,
    })?;
    let a = idwt2_haar(&SubbandSet {
        ll: ll1_approx,
        lh: zeros_like(&level1.lh),
        hl: zeros_like(&level1.hl),
        hh: zeros_like(&level1.hh),
        level: 1,
    })?;

    // image B: HH(HH1) only
    let hh1_detail = idwt2_haar(&SubbandSet {
        ll: zeros_like(&hh_tree.ll),
        lh: zeros_like(&hh_tree.lh),
        hl: zeros_like(&hh_tree.hl),
        hh: hh_tree.hh.clone(),
        level: 2,
    })?;
    let b = idwt2_haar(&SubbandSet {
        ll: zeros_like(&level1.ll),
        lh: zeros_like(&level1.lh),
        hl: zeros_like(&level1.hl),
        hh: hh1_detail,
        level: 1,
    })?;

    // fuse, crop to the original extents, rescale
    let (_, wp) = a.dims2()?;
    let mut fused = Tensor::zeros(&[h0, w0]);
    for y in 0..h0 {
        for xx in 0..w0 {
            fused.data_mut()[y * w0 + xx] = a.data()[y * wp + xx] + b.data()[y * wp + xx];
        }
    }
    Ok(rescale_unit(&fused))
}

/// Min-max rescale to [0,1]; a flat image maps to all zeros.
pub fn rescale_unit<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (lo, hi) = x.min_max();
    let span = hi - lo;
    if span <= T::ZERO {
        return Tensor::zeros(x.shape());
    }
    x.map(|v| (v - lo) / span)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn img(h: usize, w: usize, v: Vec<f64>) -> Tensor<f64> {
        Tensor::new(vec![h, w], v).unwrap()
    }

    fn random_img(h: usize, w: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(&[h, w], |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn constant_image_has_zero_detail_bands() {
        let c = 0.3;
        let x = img(2, 2, vec![c; 4]);
        let s = dwt2_haar(&x).unwrap();
        assert!((s.ll.data()[0] - 2.0 * c).abs() < 1e-12);
        assert_eq!(s.lh.data()[0], 0.0);
        assert_eq!(s.hl.data()[0], 0.0);
        assert_eq!(s.hh.data()[0], 0.0);
    }

    #[test]
    fn two_by_two_subbands_match_filter_bank() {
        let x = img(2, 2, vec![1., 2., 3., 4.]);
        let s = dwt2_haar(&x).unwrap();
        assert!((s.ll.data()[0] - 5.0).abs() < 1e-12);
        assert!((s.lh.data()[0] + 2.0).abs() < 1e-12);
        assert!((s.hl.data()[0] + 1.0).abs() < 1e-12);
        assert!(s.hh.data()[0].abs() < 1e-12);
    }

    #[test]
    fn synthesis_of_known_subbands_recovers_image() {
        let s = SubbandSet {
            ll: img(1, 1, vec![5.0]),
            lh: img(1, 1, vec![-2.0]),
            hl: img(1, 1, vec![-1.0]),
            hh: img(1, 1, vec![0.0]),
            level: 1,
        };
        let x = idwt2_haar(&s).unwrap();
        for (got, want) in x.data().iter().zip([1., 2., 3., 4.].iter()) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn all_zero_subbands_give_zero_image() {
        let s = SubbandSet {
            ll: Tensor::<f64>::zeros(&[2, 2]),
            lh: Tensor::zeros(&[2, 2]),
            hl: Tensor::zeros(&[2, 2]),
            hh: Tensor::zeros(&[2, 2]),
            level: 1,
        };
        assert!(idwt2_haar(&s).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mismatched_subband_shapes_rejected() {
        let s = SubbandSet {
            ll: Tensor::<f64>::zeros(&[2, 2]),
            lh: Tensor::zeros(&[2, 1]),
            hl: Tensor::zeros(&[2, 2]),
            hh: Tensor::zeros(&[2, 2]),
            level: 1,
        };
        assert!(idwt2_haar(&s).is_err());
    }

    #[test]
    fn energy_is_conserved() {
        let x = random_img(8, 8, 11);
        let s = dwt2_haar(&x).unwrap();
        let e_in: f64 = x.data().iter().map(|v| v * v).sum();
        let e_out: f64 = [&s.ll, &s.lh, &s.hl, &s.hh]
            .iter()
            .flat_map(|b| b.data().iter())
            .map(|v| v * v)
            .sum();
        assert!(((e_in - e_out) / e_in).abs() < 1e-6, "{e_in} vs {e_out}");
    }

    #[test]
    fn roundtrip_is_perfect_reconstruction() {
        for seed in 0..5 {
            let x = random_img(16, 12, seed);
            let y = idwt2_haar(&dwt2_haar(&x).unwrap()).unwrap();
            let max_err = x
                .data()
                .iter()
                .zip(y.data().iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(max_err < 1e-10, "seed {seed}: {max_err}");
        }
    }

    #[test]
    fn roundtrip_f32_within_tolerance() {
        let x64 = random_img(32, 32, 3);
        let x: Tensor<f32> = x64.cast();
        let y = idwt2_haar(&dwt2_haar(&x).unwrap()).unwrap();
        let max_err = x
            .data()
            .iter()
            .zip(y.data().iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(max_err < 1e-5);
    }

    #[test]
    fn multilevel_roundtrip() {
        let x = random_img(16, 16, 4);
        let pyr = decompose(&x, 3).unwrap();
        assert_eq!(pyr.len(), 3);
        assert_eq!(pyr[2].ll.shape(), &[2, 2]);
        let y = reconstruct(&pyr).unwrap();
        let max_err = x
            .data()
            .iter()
            .zip(y.data().iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_err < 1e-10);
    }

    #[test]
    fn enhance_constant_image_maps_to_zeros() {
        let x = img(8, 8, vec![0.7; 64]);
        let e = enhance_image(&x).unwrap();
        assert!(e.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn enhance_output_lies_in_unit_interval() {
        for seed in 0..4 {
            let x = random_img(16, 16, 100 + seed);
            let e = enhance_image(&x).unwrap();
            assert!(e.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn enhance_matches_explicit_subband_composition() {
        let x = random_img(16, 16, 7);
        let got = enhance_image(&x).unwrap();

        // independent composition from the primitives with explicit zeroing
        let l1 = dwt2_haar(&x).unwrap();
        let z = |t: &Tensor<f64>| Tensor::<f64>::zeros(t.shape());
        let ll2 = dwt2_haar(&l1.ll).unwrap();
        let hh2 = dwt2_haar(&l1.hh).unwrap();
        let ll1p = idwt2_haar(&SubbandSet {
            ll: ll2.ll.clone(),
            lh: z(&ll2.lh),
            hl: z(&ll2.hl),
            hh: z(&ll2.hh),
            level: 2,
        })
        .unwrap();
        let a = idwt2_haar(&SubbandSet {
            ll: ll1p,
            lh: z(&l1.lh),
            hl: z(&l1.hl),
            hh: z(&l1.hh),
            level: 1,
        })
        .unwrap();
        let hh1p = idwt2_haar(&SubbandSet {
            ll: z(&hh2.ll),
            lh: z(&hh2.lh),
            hl: z(&hh2.hl),
            hh: hh2.hh.clone(),
            level: 2,
        })
        .unwrap();
        let b = idwt2_haar(&SubbandSet {
            ll: z(&l1.ll),
            lh: z(&l1.lh),
            hl: z(&l1.hl),
            hh: hh1p,
            level: 1,
        })
        .unwrap();
        let mut fused = Tensor::<f64>::zeros(&[16, 16]);
        for i in 0..fused.numel() {
            fused.data_mut()[i] = a.data()[i] + b.data()[i];
        }
        let want = rescale_unit(&fused);
        for (g, w) in got.data().iter().zip(want.data().iter()) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn enhance_pads_and_crops_odd_sizes() {
        let x = random_img(10, 14, 9); // not divisible by 4
        let e = enhance_image(&x).unwrap();
        assert_eq!(e.shape(), &[10, 14]);
        assert!(e.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
