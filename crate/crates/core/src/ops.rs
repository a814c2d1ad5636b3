//! Layer operations: forward kernels and their exact reverse-mode backwards.
//!
//! Everything here is a pure function of its inputs (plus an explicit seed
//! for dropout); reduction orders are fixed so results are bit-reproducible.
//! Convolutions accumulate over (channel, kernel-row, kernel-col) in that
//! order with the bias added last.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{nchw_index, Scalar, Tensor};

/// Execution mode: training records state (batch statistics, dropout masks)
/// that evaluation does not.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-edge padding. Constructed symmetric almost everywhere; the
/// bottom/right-only form gives 'same' output for even kernels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Padding {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Padding {
    pub const NONE: Padding = Padding {
        top: 0,
        bottom: 0,
        left: 0,
        right: 0,
    };

    pub fn symmetric(h: usize, w: usize) -> Self {
        Padding {
            top: h,
            bottom: h,
            left: w,
            right: w,
        }
    }

    /// 'same' padding for a 2x2 stride-1 kernel: one extra row/col at the
    /// bottom-right.
    pub fn same_even2() -> Self {
        Padding {
            top: 0,
            bottom: 1,
            left: 0,
            right: 1,
        }
    }
}

/// Convolution filter bank plus bias and geometry.
#[derive(Clone, Debug)]
pub struct ConvParams<T> {
    /// (outC, inC, kH, kW)
    pub weights: Tensor<T>,
    /// (outC)
    pub bias: Tensor<T>,
    pub stride: (usize, usize),
    pub padding: Padding,
}

impl<T: Scalar> ConvParams<T> {
    pub fn new(
        weights: Tensor<T>,
        bias: Tensor<T>,
        stride: (usize, usize),
        padding: Padding,
    ) -> Result<Self> {
        let (out_c, _, _, _) = weights.dims4()?;
        if bias.rank() != 1 || bias.numel() != out_c {
            return Err(Error::ShapeMismatch(format!(
                "conv bias must be ({out_c}), got {:?}",
                bias.shape()
            )));
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(Error::InvalidParameter("conv stride must be positive".into()));
        }
        Ok(ConvParams {
            weights,
            bias,
            stride,
            padding,
        })
    }
}

/// Batch normalization parameters and running statistics.
#[derive(Clone, Debug)]
pub struct BatchNormParams<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub epsilon: T,
    pub stat_momentum: T,
}

impl<T: Scalar> BatchNormParams<T> {
    pub fn new(channels: usize, epsilon: f64, stat_momentum: f64) -> Result<Self> {
        if epsilon <= 0.0 {
            return Err(Error::InvalidParameter("batch-norm epsilon must be > 0".into()));
        }
        if stat_momentum <= 0.0 || stat_momentum >= 1.0 {
            return Err(Error::InvalidParameter(
                "batch-norm stat momentum must lie in (0,1)".into(),
            ));
        }
        Ok(BatchNormParams {
            gamma: Tensor::filled(&[channels], T::ONE),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::filled(&[channels], T::ONE),
            epsilon: T::from_f64(epsilon),
            stat_momentum: T::from_f64(stat_momentum),
        })
    }

    pub fn channels(&self) -> usize {
        self.gamma.numel()
    }
}

/// Saved forward context needed by the batch-norm backward pass.
#[derive(Clone, Debug)]
pub struct BnCtx<T> {
    /// Normalized input (before the affine transform), same shape as x.
    pub xhat: Tensor<T>,
    /// Per-channel 1/sqrt(var + eps) actually used.
    pub invstd: Vec<T>,
    /// Whether batch statistics (train) or running statistics (eval) were used.
    pub train: bool,
}

/// Flat source positions recorded by max pooling, for index-driven unpooling.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexMap {
    /// Per output element, the flat NCHW offset of its source in the input.
    pub indices: Vec<usize>,
    pub input_shape: Vec<usize>,
    pub output_shape: Vec<usize>,
}

// ── Convolution ─────────────────────────────────────────────────────────

fn conv_out_extent(input: usize, pad: usize, k: usize, stride: usize) -> Result<usize> {
    let padded = input + pad;
    if padded < k {
        return Err(Error::ShapeMismatch(format!(
            "kernel {k} larger than padded input {padded}"
        )));
    }
    Ok((padded - k) / stride + 1)
}

/// Geometry of one convolution application.
struct ConvGeom {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    k: usize,
}

fn conv_geom<T: Scalar>(x: &Tensor<T>, p: &ConvParams<T>) -> Result<ConvGeom> {
    let (n, cin, h, w) = x.dims4()?;
    let (cout, cin_w, kh, kw) = p.weights.dims4()?;
    if cin != cin_w {
        return Err(Error::ShapeMismatch(format!(
            "conv expects {cin_w} input channels, got {cin}"
        )));
    }
    let oh = conv_out_extent(h, p.padding.top + p.padding.bottom, kh, p.stride.0)?;
    let ow = conv_out_extent(w, p.padding.left + p.padding.right, kw, p.stride.1)?;
    Ok(ConvGeom {
        n,
        cin,
        h,
        w,
        cout,
        kh,
        kw,
        oh,
        ow,
        k: cin * kh * kw,
    })
}

/// Lower one sample into column-major patches: cols[(ci*kh + r)*kw + c][o]
/// for output position o. Out-of-bounds taps read zero.
fn im2col<T: Scalar>(
    x: &[T],
    g: &ConvGeom,
    p: &Padding,
    stride: (usize, usize),
    cols: &mut [T],
) {
    let ohw = g.oh * g.ow;
    for v in cols.iter_mut() {
        *v = T::ZERO;
    }
    for ci in 0..g.cin {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for r in 0..g.kh {
            for c in 0..g.kw {
                let row = (ci * g.kh + r) * g.kw + c;
                let dst = &mut cols[row * ohw..(row + 1) * ohw];
                for oy in 0..g.oh {
                    let iy = (oy * stride.0 + r) as isize - p.top as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src_row = iy as usize * g.w;
                    for ox in 0..g.ow {
                        let ix = (ox * stride.1 + c) as isize - p.left as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        dst[oy * g.ow + ox] = plane[src_row + ix as usize];
                    }
                }
            }
        }
    }
}

/// Cross-correlation of x (NCHW) with the filter bank, bias added last.
pub fn conv2d<T: Scalar>(x: &Tensor<T>, p: &ConvParams<T>) -> Result<Tensor<T>> {
    let g = conv_geom(x, p)?;
    let ohw = g.oh * g.ow;
    let mut out = Tensor::zeros(&[g.n, g.cout, g.oh, g.ow]);
    let mut cols = vec![T::ZERO; g.k * ohw];
    let wdat = p.weights.data();
    let bdat = p.bias.data();
    let in_plane = g.cin * g.h * g.w;
    for n in 0..g.n {
        im2col(
            &x.data()[n * in_plane..(n + 1) * in_plane],
            &g,
            &p.padding,
            p.stride,
            &mut cols,
        );
        let odat = &mut out.data_mut()[n * g.cout * ohw..(n + 1) * g.cout * ohw];
        for oc in 0..g.cout {
            let orow = &mut odat[oc * ohw..(oc + 1) * ohw];
            let wrow = &wdat[oc * g.k..(oc + 1) * g.k];
            for (kk, &wv) in wrow.iter().enumerate() {
                let crow = &cols[kk * ohw..(kk + 1) * ohw];
                for (o, &cv) in orow.iter_mut().zip(crow.iter()) {
                    *o += wv * cv;
                }
            }
            let b = bdat[oc];
            for o in orow.iter_mut() {
                *o += b;
            }
        }
    }
    Ok(out)
}

/// Gradients of conv2d w.r.t. input, weights, and bias.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    p: &ConvParams<T>,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let g = conv_geom(x, p)?;
    let ohw = g.oh * g.ow;
    if dy.shape() != [g.n, g.cout, g.oh, g.ow] {
        return Err(Error::ShapeMismatch(format!(
            "conv backward: dy shape {:?} != {:?}",
            dy.shape(),
            [g.n, g.cout, g.oh, g.ow]
        )));
    }
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(p.weights.shape());
    let mut db = Tensor::zeros(&[g.cout]);
    let mut cols = vec![T::ZERO; g.k * ohw];
    let mut dcols = vec![T::ZERO; g.k * ohw];
    let wdat = p.weights.data();
    let in_plane = g.cin * g.h * g.w;

    for n in 0..g.n {
        im2col(
            &x.data()[n * in_plane..(n + 1) * in_plane],
            &g,
            &p.padding,
            p.stride,
            &mut cols,
        );
        let dydat = &dy.data()[n * g.cout * ohw..(n + 1) * g.cout * ohw];

        // db and dW = dY · colsᵀ
        for oc in 0..g.cout {
            let dyrow = &dydat[oc * ohw..(oc + 1) * ohw];
            let mut s = T::ZERO;
            for &v in dyrow {
                s += v;
            }
            db.data_mut()[oc] += s;
            let dwrow = &mut dw.data_mut()[oc * g.k..(oc + 1) * g.k];
            for kk in 0..g.k {
                let crow = &cols[kk * ohw..(kk + 1) * ohw];
                let mut acc = T::ZERO;
                for (dyv, cv) in dyrow.iter().zip(crow.iter()) {
                    acc += *dyv * *cv;
                }
                dwrow[kk] += acc;
            }
        }

        // dcols = Wᵀ · dY, then scatter back (col2im)
        for v in dcols.iter_mut() {
            *v = T::ZERO;
        }
        for oc in 0..g.cout {
            let dyrow = &dydat[oc * ohw..(oc + 1) * ohw];
            let wrow = &wdat[oc * g.k..(oc + 1) * g.k];
            for (kk, &wv) in wrow.iter().enumerate() {
                let drow = &mut dcols[kk * ohw..(kk + 1) * ohw];
                for (d, &dyv) in drow.iter_mut().zip(dyrow.iter()) {
                    *d += wv * dyv;
                }
            }
        }
        let dxs = &mut dx.data_mut()[n * in_plane..(n + 1) * in_plane];
        for ci in 0..g.cin {
            for r in 0..g.kh {
                for c in 0..g.kw {
                    let row = (ci * g.kh + r) * g.kw + c;
                    let drow = &dcols[row * ohw..(row + 1) * ohw];
                    for oy in 0..g.oh {
                        let iy = (oy * p.stride.0 + r) as isize - p.padding.top as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        for ox in 0..g.ow {
                            let ix = (ox * p.stride.1 + c) as isize - p.padding.left as isize;
                            if ix < 0 || ix >= g.w as isize {
                                continue;
                            }
                            dxs[(ci * g.h + iy as usize) * g.w + ix as usize] +=
                                drow[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
    Ok((dx, dw, db))
}

// ── Batch normalization ─────────────────────────────────────────────────

/// Train-mode batch norm: normalize by batch statistics, update running
/// statistics in place, return the output and the backward context.
pub fn batch_norm_train<T: Scalar>(
    x: &Tensor<T>,
    p: &mut BatchNormParams<T>,
) -> Result<(Tensor<T>, BnCtx<T>)> {
    let (n, c, h, w) = x.dims4()?;
    check_bn_channels(c, p)?;
    let m = n * h * w;
    if m < 2 {
        return Err(Error::DegenerateBatch(format!(
            "batch norm train mode needs >= 2 elements per channel, got {m}"
        )));
    }
    let m_t = T::from_f64(m as f64);
    let mut out = Tensor::zeros(x.shape());
    let mut xhat = Tensor::zeros(x.shape());
    let mut invstd = vec![T::ZERO; c];
    for ci in 0..c {
        let mut mean = T::ZERO;
        for ni in 0..n {
            let base = nchw_index(x.shape(), ni, ci, 0, 0);
            for &v in &x.data()[base..base + h * w] {
                mean += v;
            }
        }
        mean = mean / m_t;
        let mut var = T::ZERO;
        for ni in 0..n {
            let base = nchw_index(x.shape(), ni, ci, 0, 0);
            for &v in &x.data()[base..base + h * w] {
                let d = v - mean;
                var += d * d;
            }
        }
        var = var / m_t;
        let istd = T::ONE / (var + p.epsilon).sqrt();
        invstd[ci] = istd;
        let g = p.gamma.data()[ci];
        let b = p.beta.data()[ci];
        for ni in 0..n {
            let base = nchw_index(x.shape(), ni, ci, 0, 0);
            for i in base..base + h * w {
                let xh = (x.data()[i] - mean) * istd;
                xhat.data_mut()[i] = xh;
                out.data_mut()[i] = g * xh + b;
            }
        }
        let mom = p.stat_momentum;
        let rm = p.running_mean.data()[ci];
        p.running_mean.data_mut()[ci] = (T::ONE - mom) * rm + mom * mean;
        let rv = p.running_var.data()[ci];
        p.running_var.data_mut()[ci] = (T::ONE - mom) * rv + mom * var;
    }
    Ok((
        out,
        BnCtx {
            xhat,
            invstd,
            train: true,
        },
    ))
}

/// Eval-mode batch norm using running statistics.
pub fn batch_norm_eval<T: Scalar>(x: &Tensor<T>, p: &BatchNormParams<T>) -> Result<Tensor<T>> {
    Ok(batch_norm_eval_ctx(x, p)?.0)
}

/// Eval-mode batch norm that also returns the backward context.
pub fn batch_norm_eval_ctx<T: Scalar>(
    x: &Tensor<T>,
    p: &BatchNormParams<T>,
) -> Result<(Tensor<T>, BnCtx<T>)> {
    let (n, c, h, w) = x.dims4()?;
    check_bn_channels(c, p)?;
    let mut out = Tensor::zeros(x.shape());
    let mut xhat = Tensor::zeros(x.shape());
    let mut invstd = vec![T::ZERO; c];
    for ci in 0..c {
        let mean = p.running_mean.data()[ci];
        let istd = T::ONE / (p.running_var.data()[ci] + p.epsilon).sqrt();
        invstd[ci] = istd;
        let g = p.gamma.data()[ci];
        let b = p.beta.data()[ci];
        for ni in 0..n {
            let base = nchw_index(x.shape(), ni, ci, 0, 0);
            for i in base..base + h * w {
                let xh = (x.data()[i] - mean) * istd;
                xhat.data_mut()[i] = xh;
                out.data_mut()[i] = g * xh + b;
            }
        }
    }
    Ok((
        out,
        BnCtx {
            xhat,
            invstd,
            train: false,
        },
    ))
}

fn check_bn_channels<T: Scalar>(c: usize, p: &BatchNormParams<T>) -> Result<()> {
    if p.channels() != c {
        return Err(Error::ShapeMismatch(format!(
            "batch norm expects {} channels, got {c}",
            p.channels()
        )));
    }
    Ok(())
}

/// Gradients of batch norm w.r.t. input, gamma, and beta.
pub fn batch_norm_backward<T: Scalar>(
    ctx: &BnCtx<T>,
    gamma: &Tensor<T>,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, c, h, w) = dy.dims4()?;
    let m = T::from_f64((n * h * w) as f64);
    let mut dx = Tensor::zeros(dy.shape());
    let mut dgamma = Tensor::zeros(&[c]);
    let mut dbeta = Tensor::zeros(&[c]);
    for ci in 0..c {
        let g = gamma.data()[ci];
        let istd = ctx.invstd[ci];
        let mut sum_dy = T::ZERO;
        let mut sum_dy_xhat = T::ZERO;
        for ni in 0..n {
            let base = nchw_index(dy.shape(), ni, ci, 0, 0);
            for i in base..base + h * w {
                let d = dy.data()[i];
                sum_dy += d;
                sum_dy_xhat += d * ctx.xhat.data()[i];
            }
        }
        dgamma.data_mut()[ci] = sum_dy_xhat;
        dbeta.data_mut()[ci] = sum_dy;
        for ni in 0..n {
            let base = nchw_index(dy.shape(), ni, ci, 0, 0);
            for i in base..base + h * w {
                let d = dy.data()[i];
                dx.data_mut()[i] = if ctx.train {
                    // dxhat = dy*g; dx folds in the batch mean/variance terms
                    g * istd / m * (m * d - sum_dy - ctx.xhat.data()[i] * sum_dy_xhat)
                } else {
                    g * istd * d
                };
            }
        }
    }
    Ok((dx, dgamma, dbeta))
}

// ── Activations ─────────────────────────────────────────────────────────

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.maxv(T::ZERO))
}

/// Subgradient 0 at x == 0.
pub fn relu_backward<T: Scalar>(x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = Tensor::zeros(x.shape());
    for ((d, &xv), &dyv) in dx
        .data_mut()
        .iter_mut()
        .zip(x.data().iter())
        .zip(dy.data().iter())
    {
        *d = if xv > T::ZERO { dyv } else { T::ZERO };
    }
    dx
}

// ── Pooling ─────────────────────────────────────────────────────────────

fn pool_geom<T: Scalar>(x: &Tensor<T>) -> Result<(usize, usize, usize, usize)> {
    let (n, c, h, w) = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::ShapeMismatch(format!(
            "2x2 pooling needs even spatial extents, got {h}x{w}"
        )));
    }
    Ok((n, c, h, w))
}

/// 2x2/stride-2 max pooling. Ties resolve to the first occurrence in
/// row-major window order so unpooling indices are deterministic.
pub fn max_pool2d<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, IndexMap)> {
    let (n, c, h, w) = pool_geom(x)?;
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let mut indices = vec![0usize; n * c * oh * ow];
    let mut o = 0;
    for ni in 0..n {
        for ci in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best_idx = nchw_index(x.shape(), ni, ci, 2 * oy, 2 * ox);
                    let mut best = x.data()[best_idx];
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let idx = nchw_index(x.shape(), ni, ci, 2 * oy + dy, 2 * ox + dx);
                            let v = x.data()[idx];
                            if v > best {
                                best = v;
                                best_idx = idx;
                            }
                        }
                    }
                    out.data_mut()[o] = best;
                    indices[o] = best_idx;
                    o += 1;
                }
            }
        }
    }
    Ok((
        out,
        IndexMap {
            indices,
            input_shape: x.shape().to_vec(),
            output_shape: vec![n, c, oh, ow],
        },
    ))
}

pub fn max_pool2d_backward<T: Scalar>(indices: &IndexMap, dy: &Tensor<T>) -> Result<Tensor<T>> {
    if dy.shape() != &indices.output_shape[..] {
        return Err(Error::ShapeMismatch(format!(
            "max pool backward: dy {:?} != recorded {:?}",
            dy.shape(),
            indices.output_shape
        )));
    }
    let mut dx = Tensor::zeros(&indices.input_shape);
    for (o, &idx) in indices.indices.iter().enumerate() {
        dx.data_mut()[idx] += dy.data()[o];
    }
    Ok(dx)
}

/// 2x2/stride-2 average pooling.
pub fn avg_pool2d<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = pool_geom(x)?;
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::from_f64(0.25);
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let mut o = 0;
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
                    out.data_mut()[o] = s * quarter;
                    o += 1;
                }
            }
        }
    }
    Ok(out)
}

pub fn avg_pool2d_backward<T: Scalar>(in_shape: &[usize], dy: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, oh, ow) = dy.dims4()?;
    if in_shape != [n, c, oh * 2, ow * 2] {
        return Err(Error::ShapeMismatch("avg pool backward shape mismatch".into()));
    }
    let quarter = T::from_f64(0.25);
    let mut dx = Tensor::zeros(in_shape);
    let mut o = 0;
    for ni in 0..n {
        for ci in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let g = dy.data()[o] * quarter;
                    o += 1;
                    for dyy in 0..2 {
                        for dxx in 0..2 {
                            dx.data_mut()
                                [nchw_index(in_shape, ni, ci, 2 * oy + dyy, 2 * ox + dxx)] += g;
                        }
                    }
                }
            }
        }
    }
    Ok(dx)
}

/// Scatter pooled values back to their recorded source positions; zeros
/// elsewhere.
pub fn max_unpool2d<T: Scalar>(x: &Tensor<T>, indices: &IndexMap) -> Result<Tensor<T>> {
    if x.shape() != &indices.output_shape[..] {
        return Err(Error::ShapeMismatch(format!(
            "max unpool: input {:?} does not match recorded pool output {:?}",
            x.shape(),
            indices.output_shape
        )));
    }
    let numel: usize = indices.input_shape.iter().product();
    let mut out = Tensor::zeros(&indices.input_shape);
    for (o, &idx) in indices.indices.iter().enumerate() {
        if idx >= numel {
            return Err(Error::CorruptedIndex(format!(
                "index {idx} outside target of {numel} elements"
            )));
        }
        out.data_mut()[idx] = x.data()[o];
    }
    Ok(out)
}

pub fn max_unpool2d_backward<T: Scalar>(indices: &IndexMap, dy: &Tensor<T>) -> Result<Tensor<T>> {
    if dy.shape() != &indices.input_shape[..] {
        return Err(Error::ShapeMismatch("max unpool backward shape mismatch".into()));
    }
    let mut dx = Tensor::zeros(&indices.output_shape);
    for (o, &idx) in indices.indices.iter().enumerate() {
        dx.data_mut()[o] = dy.data()[idx];
    }
    Ok(dx)
}

/// Nearest-neighbor 2x expansion: each value fills its 2x2 window.
pub fn avg_unpool2d<T: Scalar>(x: &Tensor<T>, out_hw: (usize, usize)) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    if out_hw != (2 * h, 2 * w) {
        return Err(Error::ShapeMismatch(format!(
            "avg unpool target {:?} must be twice input {h}x{w}",
            out_hw
        )));
    }
    let out_shape = [n, c, 2 * h, 2 * w];
    let mut out = Tensor::zeros(&out_shape);
    let mut i = 0;
    for ni in 0..n {
        for ci in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    let v = x.data()[i];
                    i += 1;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            out.data_mut()[nchw_index(&out_shape, ni, ci, 2 * y + dy, 2 * xx + dx)] =
                                v;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn avg_unpool2d_backward<T: Scalar>(in_shape: &[usize], dy: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, oh, ow) = dy.dims4()?;
    if in_shape != [n, c, oh / 2, ow / 2] {
        return Err(Error::ShapeMismatch("avg unpool backward shape mismatch".into()));
    }
    let mut dx = Tensor::zeros(in_shape);
    let mut i = 0;
    for ni in 0..n {
        for ci in 0..c {
            for y in 0..oh / 2 {
                for xx in 0..ow / 2 {
                    let mut s = T::ZERO;
                    for dyy in 0..2 {
                        for dxx in 0..2 {
                            s += dy.data()[nchw_index(dy.shape(), ni, ci, 2 * y + dyy, 2 * xx + dxx)];
                        }
                    }
                    dx.data_mut()[i] = s;
                    i += 1;
                }
            }
        }
    }
    Ok(dx)
}

// ── Fully connected ─────────────────────────────────────────────────────

/// Per-sample affine map: y = W·x + b with W of shape (out, in).
pub fn fully_connected<T: Scalar>(
    x: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (n, f) = x.dims2()?;
    let (out, inf) = weights.dims2()?;
    if inf != f {
        return Err(Error::ShapeMismatch(format!(
            "fc expects {inf} input features, got {f}"
        )));
    }
    if bias.numel() != out {
        return Err(Error::ShapeMismatch("fc bias length must equal output size".into()));
    }
    let mut y = Tensor::zeros(&[n, out]);
    for ni in 0..n {
        let xrow = &x.data()[ni * f..(ni + 1) * f];
        let yrow = &mut y.data_mut()[ni * out..(ni + 1) * out];
        for o in 0..out {
            let wrow = &weights.data()[o * f..(o + 1) * f];
            let mut s = T::ZERO;
            for (wv, xv) in wrow.iter().zip(xrow.iter()) {
                s += *wv * *xv;
            }
            yrow[o] = s + bias.data()[o];
        }
    }
    Ok(y)
}

pub fn fully_connected_backward<T: Scalar>(
    x: &Tensor<T>,
    weights: &Tensor<T>,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, f) = x.dims2()?;
    let (out, _) = weights.dims2()?;
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(weights.shape());
    let mut db = Tensor::zeros(&[out]);
    for ni in 0..n {
        let xrow = &x.data()[ni * f..(ni + 1) * f];
        let dyrow = &dy.data()[ni * out..(ni + 1) * out];
        let dxrow = &mut dx.data_mut()[ni * f..(ni + 1) * f];
        for o in 0..out {
            let g = dyrow[o];
            db.data_mut()[o] += g;
            let wrow = &weights.data()[o * f..(o + 1) * f];
            let dwrow = &mut dw.data_mut()[o * f..(o + 1) * f];
            for i in 0..f {
                dwrow[i] += g * xrow[i];
                dxrow[i] += g * wrow[i];
            }
        }
    }
    Ok((dx, dw, db))
}

// ── Dropout ─────────────────────────────────────────────────────────────

/// Inverted dropout: zero with probability `rate`, scale survivors by
/// 1/(1-rate). Eval mode and rate 0 are the identity. Deterministic per seed.
pub fn dropout<T: Scalar>(
    x: &Tensor<T>,
    rate: f64,
    mode: Mode,
    seed: u64,
) -> Result<(Tensor<T>, Vec<bool>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidParameter(format!(
            "dropout rate must lie in [0,1), got {rate}"
        )));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok((x.clone(), vec![true; x.numel()]));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = T::from_f64(1.0 / (1.0 - rate));
    let mut mask = vec![false; x.numel()];
    let mut out = Tensor::zeros(x.shape());
    for i in 0..x.numel() {
        let keep = rng.gen::<f64>() >= rate;
        mask[i] = keep;
        if keep {
            out.data_mut()[i] = x.data()[i] * scale;
        }
    }
    Ok((out, mask))
}

pub fn dropout_backward<T: Scalar>(mask: &[bool], scale: T, dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = Tensor::zeros(dy.shape());
    for (i, (&keep, &g)) in mask.iter().zip(dy.data().iter()).enumerate() {
        if keep {
            dx.data_mut()[i] = g * scale;
        }
    }
    dx
}

// ── Softmax and cross-entropy ───────────────────────────────────────────

/// Max-subtracted exponential normalization along `axis`.
pub fn softmax<T: Scalar>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    if axis >= x.rank() {
        return Err(Error::InvalidParameter(format!(
            "softmax axis {axis} out of range for rank {}",
            x.rank()
        )));
    }
    let shape = x.shape();
    let axis_len = shape[axis];
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out = Tensor::zeros(shape);
    for o in 0..outer {
        for i in 0..inner {
            let at = |a: usize| (o * axis_len + a) * inner + i;
            let mut hi = x.data()[at(0)];
            for a in 1..axis_len {
                hi = hi.maxv(x.data()[at(a)]);
            }
            let mut denom = T::ZERO;
            for a in 0..axis_len {
                let e = (x.data()[at(a)] - hi).exp();
                out.data_mut()[at(a)] = e;
                denom += e;
            }
            for a in 0..axis_len {
                let idx = at(a);
                out.data_mut()[idx] = out.data()[idx] / denom;
            }
        }
    }
    Ok(out)
}

/// Softmax Jacobian-vector product: dx_a = p_a (dy_a - Σ_b dy_b p_b).
pub fn softmax_backward<T: Scalar>(probs: &Tensor<T>, axis: usize, dy: &Tensor<T>) -> Tensor<T> {
    let shape = probs.shape();
    let axis_len = shape[axis];
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let mut dx = Tensor::zeros(shape);
    for o in 0..outer {
        for i in 0..inner {
            let at = |a: usize| (o * axis_len + a) * inner + i;
            let mut dot = T::ZERO;
            for a in 0..axis_len {
                dot += dy.data()[at(a)] * probs.data()[at(a)];
            }
            for a in 0..axis_len {
                let idx = at(a);
                dx.data_mut()[idx] = probs.data()[idx] * (dy.data()[idx] - dot);
            }
        }
    }
    dx
}

/// Floor applied to predicted probabilities inside the log.
pub const CROSS_ENTROPY_FLOOR: f64 = 1e-12;

/// Mean of -w_c·log(p_true) over items. For (N, C) probabilities an item is
/// a sample; for (N, C, H, W) an item is a pixel and targets are laid out in
/// (n, h, w) row-major order. Returns the loss and dLoss/dprobs.
pub fn cross_entropy<T: Scalar>(
    probs: &Tensor<T>,
    targets: &[usize],
    class_weights: Option<&[T]>,
) -> Result<(T, Tensor<T>)> {
    let (items, classes, inner) = match probs.rank() {
        2 => (probs.shape()[0], probs.shape()[1], 1usize),
        4 => {
            let (n, c, h, w) = probs.dims4()?;
            (n * h * w, c, h * w)
        }
        r => {
            return Err(Error::ShapeMismatch(format!(
                "cross entropy expects rank 2 or 4 probabilities, got {r}"
            )))
        }
    };
    if targets.len() != items {
        return Err(Error::ShapeMismatch(format!(
            "cross entropy: {} targets for {items} items",
            targets.len()
        )));
    }
    if let Some(w) = class_weights {
        if w.len() != classes {
            return Err(Error::ShapeMismatch(format!(
                "cross entropy: {} class weights for {classes} classes",
                w.len()
            )));
        }
    }
    let floor = T::from_f64(CROSS_ENTROPY_FLOOR);
    let inv_items = T::from_f64(1.0 / items as f64);
    let mut grad = Tensor::zeros(probs.shape());
    let mut loss = T::ZERO;
    for (item, &t) in targets.iter().enumerate() {
        if t >= classes {
            return Err(Error::InvalidParameter(format!(
                "target class {t} out of range for {classes} classes"
            )));
        }
        // item -> flat offset of (item, class t)
        let idx = if probs.rank() == 2 {
            item * classes + t
        } else {
            let n = item / inner;
            let px = item % inner;
            (n * classes + t) * inner + px
        };
        let w = class_weights.map_or(T::ONE, |ws| ws[t]);
        let p = probs.data()[idx];
        if p >= floor {
            loss += -(w * p.ln());
            grad.data_mut()[idx] = -(w / p) * inv_items;
        } else {
            loss += -(w * floor.ln());
            // clamped region: treat as locally flat
        }
    }
    Ok((loss * inv_items, grad))
}

// ── Elementwise combiners ───────────────────────────────────────────────

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!(
            "add: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = a.clone();
    for (o, &v) in out.data_mut().iter_mut().zip(b.data().iter()) {
        *o += v;
    }
    Ok(out)
}

/// alpha·a + (1-alpha)·b. alpha = 0.5 is the elementwise mean; alpha = 1
/// selects `a` exactly.
pub fn fuse<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, alpha: T) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!(
            "fuse: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let beta = T::ONE - alpha;
    let mut out = Tensor::zeros(a.shape());
    for ((o, &av), &bv) in out
        .data_mut()
        .iter_mut()
        .zip(a.data().iter())
        .zip(b.data().iter())
    {
        *o = alpha * av + beta * bv;
    }
    Ok(out)
}

/// Zero-pad the bottom/right spatial edges of an NCHW tensor.
pub fn zero_pad<T: Scalar>(x: &Tensor<T>, bottom: usize, right: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    let out_shape = [n, c, h + bottom, w + right];
    let mut out = Tensor::zeros(&out_shape);
    for ni in 0..n {
        for ci in 0..c {
            for y in 0..h {
                let src = nchw_index(x.shape(), ni, ci, y, 0);
                let dst = nchw_index(&out_shape, ni, ci, y, 0);
                out.data_mut()[dst..dst + w].copy_from_slice(&x.data()[src..src + w]);
            }
        }
    }
    Ok(out)
}

pub fn zero_pad_backward<T: Scalar>(in_shape: &[usize], dy: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
    let mut dx = Tensor::zeros(in_shape);
    for ni in 0..n {
        for ci in 0..c {
            for y in 0..h {
                let src = nchw_index(dy.shape(), ni, ci, y, 0);
                let dst = nchw_index(in_shape, ni, ci, y, 0);
                dx.data_mut()[dst..dst + w].copy_from_slice(&dy.data()[src..src + w]);
            }
        }
    }
    Ok(dx)
}
