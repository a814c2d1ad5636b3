//! Reverse-mode differentiation over a recorded operation tape, plus the
//! SGD-momentum optimizer.
//!
//! A `GradTape` records every operation of one forward pass in topological
//! order together with whatever context its backward needs (pooling indices,
//! batch statistics, dropout masks). `backward` replays the tape once in
//! reverse, accumulating a gradient buffer per value id. A tape belongs to a
//! single training thread.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::ops::{self, BnCtx, ConvParams, IndexMap, Mode, Padding};
use crate::tensor::{Scalar, Tensor};

/// Identifier of a value recorded on a tape.
pub type ValueId = usize;

enum Node<T: Scalar> {
    Leaf,
    Conv {
        x: ValueId,
        w: ValueId,
        b: ValueId,
        stride: (usize, usize),
        padding: Padding,
    },
    BatchNorm {
        x: ValueId,
        gamma: ValueId,
        beta: ValueId,
        ctx: BnCtx<T>,
    },
    Relu {
        x: ValueId,
    },
    MaxPool {
        x: ValueId,
        indices: Rc<IndexMap>,
    },
    AvgPool {
        x: ValueId,
    },
    MaxUnpool {
        x: ValueId,
        indices: Rc<IndexMap>,
    },
    AvgUnpool {
        x: ValueId,
    },
    Fc {
        x: ValueId,
        w: ValueId,
        b: ValueId,
    },
    Dropout {
        x: ValueId,
        mask: Vec<bool>,
        scale: T,
    },
    Softmax {
        x: ValueId,
        axis: usize,
    },
    CrossEntropy {
        probs: ValueId,
        dprobs: Tensor<T>,
    },
    Add {
        a: ValueId,
        b: ValueId,
    },
    Fuse {
        a: ValueId,
        b: ValueId,
        alpha: T,
    },
    ZeroPad {
        x: ValueId,
    },
    Reshape {
        x: ValueId,
    },
    WeightedSum {
        x: ValueId,
        weights: Tensor<T>,
    },
}

/// Recorded forward pass: values plus the operations that produced them.
pub struct GradTape<T: Scalar> {
    values: Vec<Tensor<T>>,
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for GradTape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> GradTape<T> {
    pub fn new() -> Self {
        GradTape {
            values: Vec::new(),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, id: ValueId) -> &Tensor<T> {
        &self.values[id]
    }

    fn push(&mut self, value: Tensor<T>, node: Node<T>) -> ValueId {
        let id = self.values.len();
        self.values.push(value);
        self.nodes.push(node);
        id
    }

    /// Register an input or parameter value.
    pub fn leaf(&mut self, value: Tensor<T>) -> ValueId {
        self.push(value, Node::Leaf)
    }

    pub fn conv2d_with(
        &mut self,
        x: ValueId,
        w: ValueId,
        b: ValueId,
        stride: (usize, usize),
        padding: Padding,
    ) -> Result<ValueId> {
        let p = ConvParams::new(self.values[w].clone(), self.values[b].clone(), stride, padding)?;
        let y = ops::conv2d(&self.values[x], &p)?;
        Ok(self.push(
            y,
            Node::Conv {
                x,
                w,
                b,
                stride,
                padding,
            },
        ))
    }

    /// Batch norm over tape values; gamma/beta are leaves, the running
    /// statistics live outside the tape and are updated in train mode.
    pub fn batch_norm(
        &mut self,
        x: ValueId,
        gamma: ValueId,
        beta: ValueId,
        params: &mut ops::BatchNormParams<T>,
        mode: Mode,
    ) -> Result<ValueId> {
        params.gamma = self.values[gamma].clone();
        params.beta = self.values[beta].clone();
        let (y, ctx) = match mode {
            Mode::Train => ops::batch_norm_train(&self.values[x], params)?,
            Mode::Eval => ops::batch_norm_eval_ctx(&self.values[x], params)?,
        };
        Ok(self.push(y, Node::BatchNorm { x, gamma, beta, ctx }))
    }

    pub fn relu(&mut self, x: ValueId) -> ValueId {
        let y = ops::relu(&self.values[x]);
        self.push(y, Node::Relu { x })
    }

    pub fn max_pool2d(&mut self, x: ValueId) -> Result<(ValueId, Rc<IndexMap>)> {
        let (y, idx) = ops::max_pool2d(&self.values[x])?;
        let idx = Rc::new(idx);
        let id = self.push(
            y,
            Node::MaxPool {
                x,
                indices: Rc::clone(&idx),
            },
        );
        Ok((id, idx))
    }

    pub fn avg_pool2d(&mut self, x: ValueId) -> Result<ValueId> {
        let y = ops::avg_pool2d(&self.values[x])?;
        Ok(self.push(y, Node::AvgPool { x }))
    }

    pub fn max_unpool2d(&mut self, x: ValueId, indices: Rc<IndexMap>) -> Result<ValueId> {
        let y = ops::max_unpool2d(&self.values[x], &indices)?;
        Ok(self.push(y, Node::MaxUnpool { x, indices }))
    }

    pub fn avg_unpool2d(&mut self, x: ValueId) -> Result<ValueId> {
        let (_, _, h, w) = self.values[x].dims4()?;
        let y = ops::avg_unpool2d(&self.values[x], (2 * h, 2 * w))?;
        Ok(self.push(y, Node::AvgUnpool { x }))
    }

    pub fn fully_connected(&mut self, x: ValueId, w: ValueId, b: ValueId) -> Result<ValueId> {
        let y = ops::fully_connected(&self.values[x], &self.values[w], &self.values[b])?;
        Ok(self.push(y, Node::Fc { x, w, b }))
    }

    pub fn dropout(&mut self, x: ValueId, rate: f64, mode: Mode, seed: u64) -> Result<ValueId> {
        let (y, mask) = ops::dropout(&self.values[x], rate, mode, seed)?;
        let scale = if mode == Mode::Train && rate > 0.0 {
            T::from_f64(1.0 / (1.0 - rate))
        } else {
            T::ONE
        };
        Ok(self.push(y, Node::Dropout { x, mask, scale }))
    }

    pub fn softmax(&mut self, x: ValueId, axis: usize) -> Result<ValueId> {
        let y = ops::softmax(&self.values[x], axis)?;
        Ok(self.push(y, Node::Softmax { x, axis }))
    }

    /// Terminal scalar loss node.
    pub fn cross_entropy(
        &mut self,
        probs: ValueId,
        targets: &[usize],
        class_weights: Option<&[T]>,
    ) -> Result<ValueId> {
        let (loss, dprobs) = ops::cross_entropy(&self.values[probs], targets, class_weights)?;
        let v = Tensor::new(vec![1], vec![loss])?;
        Ok(self.push(v, Node::CrossEntropy { probs, dprobs }))
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let y = ops::add(&self.values[a], &self.values[b])?;
        Ok(self.push(y, Node::Add { a, b }))
    }

    pub fn fuse(&mut self, a: ValueId, b: ValueId, alpha: T) -> Result<ValueId> {
        let y = ops::fuse(&self.values[a], &self.values[b], alpha)?;
        Ok(self.push(y, Node::Fuse { a, b, alpha }))
    }

    pub fn zero_pad(&mut self, x: ValueId, bottom: usize, right: usize) -> Result<ValueId> {
        let y = ops::zero_pad(&self.values[x], bottom, right)?;
        Ok(self.push(y, Node::ZeroPad { x }))
    }

    /// Reshape without copying semantics changes (e.g. NCHW -> (N, C*H*W)).
    pub fn reshape(&mut self, x: ValueId, shape: Vec<usize>) -> Result<ValueId> {
        let y = self.values[x].reshape(shape)?;
        Ok(self.push(y, Node::Reshape { x }))
    }

    /// Scalar Σ x_i·r_i against a constant weight tensor.
    pub fn weighted_sum(&mut self, x: ValueId, weights: Tensor<T>) -> Result<ValueId> {
        if weights.shape() != self.values[x].shape() {
            return Err(Error::ShapeMismatch("weighted sum shape mismatch".into()));
        }
        let mut acc = T::ZERO;
        for (&v, &r) in self.values[x].data().iter().zip(weights.data().iter()) {
            acc += v * r;
        }
        let v = Tensor::new(vec![1], vec![acc])?;
        Ok(self.push(v, Node::WeightedSum { x, weights }))
    }

    /// Scalar sum of all elements.
    pub fn sum_all(&mut self, x: ValueId) -> Result<ValueId> {
        let ones = Tensor::filled(self.values[x].shape(), T::ONE);
        self.weighted_sum(x, ones)
    }

    /// Reverse sweep from a scalar loss: exact gradients for every value.
    pub fn backward(&self, loss: ValueId) -> Result<Gradients<T>> {
        if self.values.is_empty() {
            return Err(Error::EmptyTape);
        }
        if self.values[loss].numel() != 1 {
            return Err(Error::InvalidParameter(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.values[loss].shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.values.len()];
        grads[loss] = Some(Tensor::filled(&[1], T::ONE));

        for id in (0..=loss).rev() {
            let gy = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[id] {
                Node::Leaf => {
                    grads[id] = Some(gy);
                    continue;
                }
                Node::Conv {
                    x,
                    w,
                    b,
                    stride,
                    padding,
                } => {
                    let p = ConvParams::new(
                        self.values[*w].clone(),
                        self.values[*b].clone(),
                        *stride,
                        *padding,
                    )?;
                    let (dx, dw, db) = ops::conv2d_backward(&self.values[*x], &p, &gy)?;
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *w, dw);
                    accumulate(&mut grads, *b, db);
                }
                Node::BatchNorm { x, gamma, beta, ctx } => {
                    let (dx, dgamma, dbeta) =
                        ops::batch_norm_backward(ctx, &self.values[*gamma], &gy)?;
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *gamma, dgamma);
                    accumulate(&mut grads, *beta, dbeta);
                }
                Node::Relu { x } => {
                    let dx = ops::relu_backward(&self.values[*x], &gy);
                    accumulate(&mut grads, *x, dx);
                }
                Node::MaxPool { x, indices } => {
                    let dx = ops::max_pool2d_backward(indices, &gy)?;
                    accumulate(&mut grads, *x, dx);
                }
                Node::AvgPool { x } => {
                    let dx = ops::avg_pool2d_backward(self.values[*x].shape(), &gy)?;
                    accumulate(&mut grads, *x, dx);
                }
                Node::MaxUnpool { x, indices } => {
                    let dx = ops::max_unpool2d_backward(indices, &gy)?;
                    accumulate(&mut grads, *x, dx);
                }
                Node::AvgUnpool { x } => {
                    let dx = ops::avg_unpool2d_backward(self.values[*x].shape(), &gy)?;
                    accumulate(&mut grads, *x, dx);
                }
                Node::Fc { x, w, b } => {
                    let (dx, dw, db) =
                        ops::fully_connected_backward(&self.values[*x], &self.values[*w], &gy)?;
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *w, dw);
                    accumulate(&mut grads, *b, db);
                }
                Node::Dropout { x, mask, scale } => {
                    let dx = ops::dropout_backward(mask, *scale, &gy);
                    accumulate(&mut grads, *x, dx);
                }
                Node::Softmax { x, axis } => {
                    let dx = ops::softmax_backward(&self.values[id], *axis, &gy);
                    accumulate(&mut grads, *x, dx);
                }
                Node::CrossEntropy { probs, dprobs } => {
                    let g = gy.data()[0];
                    let dp = dprobs.map(|v| v * g);
                    accumulate(&mut grads, *probs, dp);
                }
                Node::Add { a, b } => {
                    accumulate(&mut grads, *a, gy.clone());
                    accumulate(&mut grads, *b, gy);
                }
                Node::Fuse { a, b, alpha } => {
                    let da = gy.map(|v| v * *alpha);
                    let db = gy.map(|v| v * (T::ONE - *alpha));
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Node::ZeroPad { x } => {
                    let dx = ops::zero_pad_backward(self.values[*x].shape(), &gy)?;
                    accumulate(&mut grads, *x, dx);
                }
                Node::Reshape { x } => {
                    let dx = gy.reshape(self.values[*x].shape().to_vec())?;
                    accumulate(&mut grads, *x, dx);
                }
                Node::WeightedSum { x, weights } => {
                    let g = gy.data()[0];
                    let dx = weights.map(|r| r * g);
                    accumulate(&mut grads, *x, dx);
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], id: ValueId, g: Tensor<T>) {
    match &mut grads[id] {
        Some(existing) => {
            for (e, &v) in existing.data_mut().iter_mut().zip(g.data().iter()) {
                *e += v;
            }
        }
        slot => *slot = Some(g),
    }
}

/// Gradient buffer produced by one backward sweep, indexed by value id.
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, id: ValueId) -> Option<&Tensor<T>> {
        self.grads.get(id).and_then(|g| g.as_ref())
    }

    /// Gradient for a value that participated in the loss; zeros otherwise.
    pub fn wrt(&self, id: ValueId, shape: &[usize]) -> Tensor<T> {
        match self.get(id) {
            Some(g) => g.clone(),
            None => Tensor::zeros(shape),
        }
    }
}

// ── SGD with classical momentum ─────────────────────────────────────────

/// v <- momentum·v - lr·g;  w <- w + v
#[derive(Clone, Debug)]
pub struct SgdState<T: Scalar> {
    pub learning_rate: T,
    pub momentum: T,
    velocity: Vec<Tensor<T>>,
}

impl<T: Scalar> SgdState<T> {
    pub fn new(learning_rate: f64, momentum: f64) -> Result<Self> {
        if learning_rate < 0.0 {
            return Err(Error::InvalidParameter("learning rate must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidParameter("momentum must lie in [0,1)".into()));
        }
        Ok(SgdState {
            learning_rate: T::from_f64(learning_rate),
            momentum: T::from_f64(momentum),
            velocity: Vec::new(),
        })
    }

    /// Update one parameter identified by its slot index. Velocity buffers
    /// are created on first use and mirror parameter shapes thereafter.
    pub fn step(&mut self, slot: usize, param: &mut Tensor<T>, grad: &Tensor<T>) -> Result<()> {
        if grad.shape() != param.shape() {
            return Err(Error::ShapeMismatch(format!(
                "sgd: grad {:?} vs param {:?}",
                grad.shape(),
                param.shape()
            )));
        }
        while self.velocity.len() <= slot {
            self.velocity.push(Tensor::zeros(&[1]));
        }
        if self.velocity[slot].shape() != param.shape() {
            self.velocity[slot] = Tensor::zeros(param.shape());
        }
        let v = &mut self.velocity[slot];
        for ((vv, &g), w) in v
            .data_mut()
            .iter_mut()
            .zip(grad.data().iter())
            .zip(param.data_mut().iter_mut())
        {
            *vv = self.momentum * *vv - self.learning_rate * g;
            *w += *vv;
        }
        Ok(())
    }
}

// ── Residual block ──────────────────────────────────────────────────────

/// Two conv-BN-ReLU sub-blocks wrapped by a skip link; the skip is the
/// identity when shapes match, otherwise a 1x1 projection conv + BN.
#[derive(Clone, Debug)]
pub struct ResidualBlock<T: Scalar> {
    pub conv1: ConvParams<T>,
    pub bn1: ops::BatchNormParams<T>,
    pub conv2: ConvParams<T>,
    pub bn2: ops::BatchNormParams<T>,
    pub projection: Option<(ConvParams<T>, ops::BatchNormParams<T>)>,
}

/// Value ids of a residual block's parameters on a tape, in declaration order.
pub struct ResidualIds {
    pub w1: ValueId,
    pub b1: ValueId,
    pub g1: ValueId,
    pub be1: ValueId,
    pub w2: ValueId,
    pub b2: ValueId,
    pub g2: ValueId,
    pub be2: ValueId,
    pub proj: Option<(ValueId, ValueId, ValueId, ValueId)>,
}

/// Record a residual block on the tape: out = block(x) + skip(x).
pub fn residual_forward<T: Scalar>(
    tape: &mut GradTape<T>,
    x: ValueId,
    block: &mut ResidualBlock<T>,
    mode: Mode,
) -> Result<(ValueId, ResidualIds)> {
    let w1 = tape.leaf(block.conv1.weights.clone());
    let b1 = tape.leaf(block.conv1.bias.clone());
    let g1 = tape.leaf(block.bn1.gamma.clone());
    let be1 = tape.leaf(block.bn1.beta.clone());
    let w2 = tape.leaf(block.conv2.weights.clone());
    let b2 = tape.leaf(block.conv2.bias.clone());
    let g2 = tape.leaf(block.bn2.gamma.clone());
    let be2 = tape.leaf(block.bn2.beta.clone());

    let c1 = tape.conv2d_with(x, w1, b1, block.conv1.stride, block.conv1.padding)?;
    let n1 = tape.batch_norm(c1, g1, be1, &mut block.bn1, mode)?;
    let r1 = tape.relu(n1);
    let c2 = tape.conv2d_with(r1, w2, b2, block.conv2.stride, block.conv2.padding)?;
    let n2 = tape.batch_norm(c2, g2, be2, &mut block.bn2, mode)?;
    let r2 = tape.relu(n2);

    let (skip, proj_ids) = match &mut block.projection {
        None => (x, None),
        Some((pconv, pbn)) => {
            let pw = tape.leaf(pconv.weights.clone());
            let pb = tape.leaf(pconv.bias.clone());
            let pg = tape.leaf(pbn.gamma.clone());
            let pbeta = tape.leaf(pbn.beta.clone());
            let pc = tape.conv2d_with(x, pw, pb, pconv.stride, pconv.padding)?;
            let pn = tape.batch_norm(pc, pg, pbeta, pbn, mode)?;
            (pn, Some((pw, pb, pg, pbeta)))
        }
    };
    let out = tape.add(r2, skip)?;
    Ok((
        out,
        ResidualIds {
            w1,
            b1,
            g1,
            be1,
            w2,
            b2,
            g2,
            be2,
            proj: proj_ids,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_of_sum_style_loss_gives_unit_gradients() {
        // loss = mean CE with p=softmax; simpler direct check: FC into CE
        let mut tape = GradTape::<f64>::new();
        let x = tape.leaf(Tensor::new(vec![1, 2], vec![0.3, 0.7]).unwrap());
        let loss = tape.cross_entropy(x, &[1], None).unwrap();
        let grads = tape.backward(loss).unwrap();
        let gx = grads.get(x).unwrap();
        // d/dp1 of -ln(p1) = -1/p1
        assert!((gx.data()[1] + 1.0 / 0.7).abs() < 1e-12);
        assert_eq!(gx.data()[0], 0.0);
    }

    #[test]
    fn gradient_of_plain_sum_is_all_ones() {
        let mut tape = GradTape::<f64>::new();
        let x = tape.leaf(Tensor::from_fn(&[2, 3], |i| i as f64));
        let loss = tape.sum_all(x).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(x).unwrap().data().iter().all(|&g| g == 1.0));
    }

    #[test]
    fn backward_on_empty_tape_errors() {
        let tape = GradTape::<f64>::new();
        assert!(matches!(tape.backward(0), Err(Error::EmptyTape)));
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut tape = GradTape::<f64>::new();
        let x = tape.leaf(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn sgd_zero_gradient_keeps_params() {
        let mut sgd = SgdState::<f64>::new(0.001, 0.95).unwrap();
        let mut w = Tensor::new(vec![2], vec![1.0, -1.0]).unwrap();
        let g = Tensor::zeros(&[2]);
        sgd.step(0, &mut w, &g).unwrap();
        assert_eq!(w.data(), &[1.0, -1.0]);
    }

    #[test]
    fn sgd_without_momentum_is_plain_descent() {
        let mut sgd = SgdState::<f64>::new(0.1, 0.0).unwrap();
        let mut w = Tensor::new(vec![1], vec![1.0]).unwrap();
        let g = Tensor::new(vec![1], vec![2.0]).unwrap();
        sgd.step(0, &mut w, &g).unwrap();
        assert!((w.data()[0] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn sgd_momentum_accumulates_velocity() {
        // m=0.95, g=1, lr=0.001: steps shrink w by 0.001 then 0.00195
        let mut sgd = SgdState::<f64>::new(0.001, 0.95).unwrap();
        let mut w = Tensor::new(vec![1], vec![0.0]).unwrap();
        let g = Tensor::new(vec![1], vec![1.0]).unwrap();
        sgd.step(0, &mut w, &g).unwrap();
        assert!((w.data()[0] + 0.001).abs() < 1e-12);
        sgd.step(0, &mut w, &g).unwrap();
        assert!((w.data()[0] + 0.001 + 0.00195).abs() < 1e-12);
    }

    #[test]
    fn residual_block_matches_sequential_composition_plus_skip() {
        use crate::ops::{self, BatchNormParams};
        use rand::{Rng, SeedableRng};
        use rand_chacha::ChaCha8Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut rand_t = |shape: &[usize]| {
            Tensor::<f64>::from_fn(shape, |_| rng.gen_range(-0.5..0.5))
        };
        let conv = |w: Tensor<f64>, b: Tensor<f64>| {
            ConvParams::new(w, b, (1, 1), Padding::symmetric(1, 1)).unwrap()
        };
        let c1 = conv(rand_t(&[3, 3, 3, 3]), rand_t(&[3]));
        let c2 = conv(rand_t(&[3, 3, 3, 3]), rand_t(&[3]));
        let mut block = ResidualBlock {
            conv1: c1.clone(),
            bn1: BatchNormParams::new(3, 1e-5, 0.1).unwrap(),
            conv2: c2.clone(),
            bn2: BatchNormParams::new(3, 1e-5, 0.1).unwrap(),
            projection: None,
        };
        let x = rand_t(&[1, 3, 6, 6]);

        let mut tape = GradTape::<f64>::new();
        let xid = tape.leaf(x.clone());
        let (out, _) = residual_forward(&mut tape, xid, &mut block, Mode::Train).unwrap();
        let got = tape.value(out).clone();

        // sequential sub-block composition via the raw kernels, plus skip
        let mut bn1 = BatchNormParams::<f64>::new(3, 1e-5, 0.1).unwrap();
        let mut bn2 = BatchNormParams::<f64>::new(3, 1e-5, 0.1).unwrap();
        let h = ops::relu(&ops::batch_norm_train(&ops::conv2d(&x, &c1).unwrap(), &mut bn1).unwrap().0);
        let h = ops::relu(&ops::batch_norm_train(&ops::conv2d(&h, &c2).unwrap(), &mut bn2).unwrap().0);
        let want = ops::add(&h, &x).unwrap();
        assert_eq!(got, want);
    }

    #[test]
    fn residual_block_with_zeroed_path_reproduces_skip() {
        use crate::ops::BatchNormParams;
        let zeros_conv = |c: usize| {
            ConvParams::new(
                Tensor::zeros(&[c, c, 3, 3]),
                Tensor::zeros(&[c]),
                (1, 1),
                Padding::symmetric(1, 1),
            )
            .unwrap()
        };
        let mut block = ResidualBlock {
            conv1: zeros_conv(2),
            bn1: BatchNormParams::new(2, 1e-5, 0.1).unwrap(),
            conv2: zeros_conv(2),
            bn2: BatchNormParams::new(2, 1e-5, 0.1).unwrap(),
            projection: None,
        };
        // gamma = 0 silences the residual path entirely
        block.bn2.gamma = Tensor::zeros(&[2]);

        let mut tape = GradTape::<f64>::new();
        let x = tape.leaf(Tensor::from_fn(&[1, 2, 4, 4], |i| (i as f64) * 0.1 - 1.0));
        let (out, _) = residual_forward(&mut tape, x, &mut block, Mode::Train).unwrap();
        assert_eq!(tape.value(out), tape.value(x));
    }
}
