//! The two-stage workflow: wavelet-enhanced classification gates the
//! segmenter; only images classified infected are segmented.

use crate::dataio::{resize_bilinear, resize_nearest, ClassLabel};
use crate::error::Result;
use crate::tensor::{Scalar, Tensor};
use crate::wavelet::enhance_image;

use super::ModelGraph;

/// Classifier preprocessing: enhancement at native resolution, then bilinear
/// resize to the model input.
pub fn classifier_input<T: Scalar>(native: &Tensor<T>, input: (usize, usize)) -> Result<Tensor<T>> {
    let enhanced = enhance_image(native)?;
    resize_image(&enhanced, input)
}

/// Segmenter preprocessing: bilinear resize of the normalized image.
pub fn segmenter_input<T: Scalar>(native: &Tensor<T>, input: (usize, usize)) -> Result<Tensor<T>> {
    resize_image(native, input)
}

fn resize_image<T: Scalar>(img: &Tensor<T>, (th, tw): (usize, usize)) -> Result<Tensor<T>> {
    let (h, w) = img.dims2()?;
    if (h, w) == (th, tw) {
        return Ok(img.clone());
    }
    let src: Vec<f64> = img.data().iter().map(|v| v.to_f64()).collect();
    let out = resize_bilinear(&src, h, w, th, tw);
    Tensor::new(vec![th, tw], out.into_iter().map(T::from_f64).collect())
}

#[derive(Clone, Debug)]
pub struct TwoStagePrediction<T> {
    pub label: ClassLabel,
    pub p_infected: f64,
    /// Binary mask at the native image resolution; all zeros when healthy.
    pub mask: Tensor<T>,
    pub segmenter_ran: bool,
}

/// Enhance + classify; when p(infected) >= 0.5 (the boundary routes to
/// infected), segment and return the per-pixel argmax mask upsampled back to
/// the native resolution. Healthy predictions return an empty mask and skip
/// the segmenter entirely.
pub fn two_stage_predict<T: Scalar>(
    cls: &ModelGraph<T>,
    seg: &ModelGraph<T>,
    native: &Tensor<T>,
) -> Result<TwoStagePrediction<T>> {
    let (nh, nw) = native.dims2()?;
    let cls_in = (cls.meta.input_shape[2], cls.meta.input_shape[3]);
    let x = classifier_input(native, cls_in)?;
    let x = x.reshape(vec![1, 1, cls_in.0, cls_in.1])?;
    let probs = cls.forward_eval(&x)?;
    let p_infected = probs.data()[ClassLabel::Infected.index()].to_f64();

    if p_infected < 0.5 {
        return Ok(TwoStagePrediction {
            label: ClassLabel::Healthy,
            p_infected,
            mask: Tensor::zeros(&[nh, nw]),
            segmenter_ran: false,
        });
    }

    let seg_in = (seg.meta.input_shape[2], seg.meta.input_shape[3]);
    let s = segmenter_input(native, seg_in)?;
    let s = s.reshape(vec![1, 1, seg_in.0, seg_in.1])?;
    let probs = seg.forward_eval(&s)?;
    let (_, _, sh, sw) = probs.dims4()?;
    let plane = sh * sw;
    let mut mask = vec![0.0f64; plane];
    for px in 0..plane {
        let healthy = probs.data()[px].to_f64();
        let infected = probs.data()[plane + px].to_f64();
        if infected > healthy {
            mask[px] = 1.0;
        }
    }
    let native_mask = if (sh, sw) == (nh, nw) {
        mask
    } else {
        resize_nearest(&mask, sh, sw, nh, nw)
    };
    Ok(TwoStagePrediction {
        label: ClassLabel::Infected,
        p_infected,
        mask: Tensor::new(vec![nh, nw], native_mask.into_iter().map(T::from_f64).collect())?,
        segmenter_ran: true,
    })
}
