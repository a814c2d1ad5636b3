//! Declarative model graphs and their execution.
//!
//! A `ModelGraph` is a flat, acyclic list of layers (each naming the earlier
//! layers it consumes) plus a named parameter store. Evaluation runs the
//! layers as pure functions; training runs them on a `GradTape` so one
//! backward sweep yields every parameter gradient. Unpooling layers link to
//! the max-pool whose indices they consume.
//!
//! A built graph is immutable during evaluation and may be shared across
//! threads; training updates parameters and batch-norm running statistics in
//! place and therefore owns the model exclusively.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{GradTape, ValueId};
use crate::error::{Error, Result};
use crate::ops::{self, BatchNormParams, ConvParams, IndexMap, Mode, Padding};
use crate::seeds;
use crate::tensor::{Scalar, Tensor};

pub mod builders;
pub mod checkpoint;
pub mod features;
pub mod pipeline;

pub use builders::{build_cov_ctnet, build_cov_raseg, build_segnet_baseline, ArchConfig, ClassifierConfig, SegmenterConfig};
pub use checkpoint::{load_checkpoint, load_checkpoint_expecting, save_checkpoint};
pub use features::{extract_features, FeatureExport};
pub use pipeline::{two_stage_predict, TwoStagePrediction};

/// One layer of a model graph.
#[derive(Clone, Debug)]
pub struct LayerSpec {
    pub kind: LayerKind,
    /// Ids of the layers whose outputs feed this one.
    pub inputs: Vec<usize>,
    pub name: String,
}

#[derive(Clone, Debug)]
pub enum LayerKind {
    Input,
    ZeroPad {
        bottom: usize,
        right: usize,
    },
    Conv {
        weights: usize,
        bias: usize,
        stride: (usize, usize),
        padding: Padding,
    },
    BatchNorm {
        gamma: usize,
        beta: usize,
        running_mean: usize,
        running_var: usize,
        epsilon: f64,
        stat_momentum: f64,
    },
    Relu,
    MaxPool,
    AvgPool,
    /// Scatter back through the indices recorded by the linked max-pool layer.
    MaxUnpool {
        pool: usize,
    },
    AvgUnpool,
    Flatten,
    Fc {
        weights: usize,
        bias: usize,
    },
    Dropout {
        rate: f64,
    },
    Softmax {
        axis: usize,
    },
    /// Elementwise sum of two inputs (residual skip).
    Add,
    /// alpha·first + (1-alpha)·second (max/avg pooling fusion).
    Fuse {
        alpha: f64,
    },
}

/// Named parameter tensor; non-trainable entries are running statistics.
#[derive(Clone, Debug)]
pub struct ParamEntry<T> {
    pub name: String,
    pub tensor: Tensor<T>,
    pub trainable: bool,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    pub entries: Vec<ParamEntry<T>>,
}

impl<T: Scalar> ParamStore<T> {
    fn push(&mut self, name: impl Into<String>, tensor: Tensor<T>, trainable: bool) -> usize {
        self.entries.push(ParamEntry {
            name: name.into(),
            tensor,
            trainable,
        });
        self.entries.len() - 1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Model metadata carried alongside the graph.
#[derive(Clone, Debug)]
pub struct ModelMeta {
    pub arch: ArchConfig,
    pub name: String,
    pub input_shape: Vec<usize>,
    pub class_count: usize,
    pub config_hash: u64,
    /// Layer id of the penultimate fully-connected activation (classifiers).
    pub feature_layer: Option<usize>,
}

/// Executable network: layers, parameters, metadata.
#[derive(Clone, Debug)]
pub struct ModelGraph<T: Scalar> {
    pub layers: Vec<LayerSpec>,
    pub params: ParamStore<T>,
    pub meta: ModelMeta,
}

/// Result of a recorded (training-mode) forward pass.
pub struct TrainPass<T: Scalar> {
    pub tape: GradTape<T>,
    pub output: ValueId,
    /// Tape leaf of each parameter-store entry (None for running statistics).
    pub param_values: Vec<Option<ValueId>>,
}

impl<T: Scalar> ModelGraph<T> {
    /// Total number of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        self.params
            .entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.tensor.numel())
            .sum()
    }

    /// Structural validation: link resolution, acyclicity by construction,
    /// unpool-to-pool pairing, and a dry-run shape check on a zero input.
    pub fn validate(&self) -> Result<()> {
        for (id, layer) in self.layers.iter().enumerate() {
            for &inp in &layer.inputs {
                if inp >= id {
                    return Err(Error::InvalidParameter(format!(
                        "layer {id} ({}) consumes later layer {inp}",
                        layer.name
                    )));
                }
            }
            match &layer.kind {
                LayerKind::Input => {
                    if id != 0 {
                        return Err(Error::InvalidParameter("input must be layer 0".into()));
                    }
                }
                LayerKind::MaxUnpool { pool } => {
                    if *pool >= id
                        || !matches!(self.layers[*pool].kind, LayerKind::MaxPool)
                    {
                        return Err(Error::InvalidParameter(format!(
                            "unpool layer {id} must link one earlier max-pool, links {pool}"
                        )));
                    }
                }
                LayerKind::Add | LayerKind::Fuse { .. } => {
                    if layer.inputs.len() != 2 {
                        return Err(Error::InvalidParameter(format!(
                            "layer {id} ({}) needs exactly two inputs",
                            layer.name
                        )));
                    }
                }
                _ => {}
            }
        }
        // dry run exercises every shape contract including pool/unpool pairing
        let zeros = Tensor::zeros(&self.meta.input_shape);
        self.forward_eval(&zeros)?;
        Ok(())
    }

    /// Evaluation-mode forward pass; pure, thread-safe, no state updates.
    pub fn forward_eval(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let trace = self.forward_trace(x)?;
        Ok(trace.into_iter().last().unwrap())
    }

    /// Evaluation-mode forward pass returning every layer output.
    pub fn forward_trace(&self, x: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        self.check_input(x)?;
        let mut values: Vec<Tensor<T>> = Vec::with_capacity(self.layers.len());
        let mut index_maps: Vec<Option<IndexMap>> = vec![None; self.layers.len()];
        for (id, layer) in self.layers.iter().enumerate() {
            let inp = |k: usize| &values[layer.inputs[k]];
            let out = match &layer.kind {
                LayerKind::Input => x.clone(),
                LayerKind::ZeroPad { bottom, right } => ops::zero_pad(inp(0), *bottom, *right)?,
                LayerKind::Conv {
                    weights,
                    bias,
                    stride,
                    padding,
                } => {
                    let p = ConvParams::new(
                        self.params.entries[*weights].tensor.clone(),
                        self.params.entries[*bias].tensor.clone(),
                        *stride,
                        *padding,
                    )?;
                    ops::conv2d(inp(0), &p)?
                }
                LayerKind::BatchNorm {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                    epsilon,
                    stat_momentum,
                } => {
                    let p = self.assemble_bn(*gamma, *beta, *running_mean, *running_var, *epsilon, *stat_momentum);
                    ops::batch_norm_eval(inp(0), &p)?
                }
                LayerKind::Relu => ops::relu(inp(0)),
                LayerKind::MaxPool => {
                    let (y, idx) = ops::max_pool2d(inp(0))?;
                    index_maps[id] = Some(idx);
                    y
                }
                LayerKind::AvgPool => ops::avg_pool2d(inp(0))?,
                LayerKind::MaxUnpool { pool } => {
                    let idx = index_maps[*pool].as_ref().ok_or_else(|| {
                        Error::InvalidParameter(format!("pool {pool} produced no indices"))
                    })?;
                    ops::max_unpool2d(inp(0), idx)?
                }
                LayerKind::AvgUnpool => {
                    let (_, _, h, w) = inp(0).dims4()?;
                    ops::avg_unpool2d(inp(0), (2 * h, 2 * w))?
                }
                LayerKind::Flatten => {
                    let (n, c, h, w) = inp(0).dims4()?;
                    inp(0).reshape(vec![n, c * h * w])?
                }
                LayerKind::Fc { weights, bias } => ops::fully_connected(
                    inp(0),
                    &self.params.entries[*weights].tensor,
                    &self.params.entries[*bias].tensor,
                )?,
                LayerKind::Dropout { .. } => inp(0).clone(),
                LayerKind::Softmax { axis } => ops::softmax(inp(0), *axis)?,
                LayerKind::Add => ops::add(inp(0), inp(1))?,
                LayerKind::Fuse { alpha } => ops::fuse(inp(0), inp(1), T::from_f64(*alpha))?,
            };
            if out.has_nan() {
                return Err(Error::Numerical {
                    layer: layer.name.clone(),
                    detail: "NaN in layer output".into(),
                });
            }
            values.push(out);
        }
        Ok(values)
    }

    /// Training-mode forward pass recorded on a fresh tape. Updates batch-norm
    /// running statistics in place; dropout seeds derive from `dropout_seed`
    /// per layer.
    pub fn forward_train(&mut self, x: &Tensor<T>, dropout_seed: u64) -> Result<TrainPass<T>> {
        self.check_input(x)?;
        let mut tape = GradTape::new();
        let mut param_values: Vec<Option<ValueId>> = Vec::with_capacity(self.params.len());
        for e in &self.params.entries {
            if e.trainable {
                param_values.push(Some(tape.leaf(e.tensor.clone())));
            } else {
                param_values.push(None);
            }
        }
        let mut node_out: Vec<ValueId> = Vec::with_capacity(self.layers.len());
        let mut index_maps: Vec<Option<Rc<IndexMap>>> = vec![None; self.layers.len()];
        let layers = self.layers.clone();
        for (id, layer) in layers.iter().enumerate() {
            let inp = |k: usize| node_out[layer.inputs[k]];
            let out = match &layer.kind {
                LayerKind::Input => tape.leaf(x.clone()),
                LayerKind::ZeroPad { bottom, right } => tape.zero_pad(inp(0), *bottom, *right)?,
                LayerKind::Conv {
                    weights,
                    bias,
                    stride,
                    padding,
                } => tape.conv2d_with(
                    inp(0),
                    param_values[*weights].unwrap(),
                    param_values[*bias].unwrap(),
                    *stride,
                    *padding,
                )?,
                LayerKind::BatchNorm {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                    epsilon,
                    stat_momentum,
                } => {
                    let mut p = self.assemble_bn(
                        *gamma,
                        *beta,
                        *running_mean,
                        *running_var,
                        *epsilon,
                        *stat_momentum,
                    );
                    let y = tape.batch_norm(
                        inp(0),
                        param_values[*gamma].unwrap(),
                        param_values[*beta].unwrap(),
                        &mut p,
                        Mode::Train,
                    )?;
                    self.params.entries[*running_mean].tensor = p.running_mean;
                    self.params.entries[*running_var].tensor = p.running_var;
                    y
                }
                LayerKind::Relu => tape.relu(inp(0)),
                LayerKind::MaxPool => {
                    let (y, idx) = tape.max_pool2d(inp(0))?;
                    index_maps[id] = Some(idx);
                    y
                }
                LayerKind::AvgPool => tape.avg_pool2d(inp(0))?,
                LayerKind::MaxUnpool { pool } => {
                    let idx = index_maps[*pool].as_ref().ok_or_else(|| {
                        Error::InvalidParameter(format!("pool {pool} produced no indices"))
                    })?;
                    tape.max_unpool2d(inp(0), Rc::clone(idx))?
                }
                LayerKind::AvgUnpool => tape.avg_unpool2d(inp(0))?,
                LayerKind::Flatten => {
                    let (n, c, h, w) = tape.value(inp(0)).dims4()?;
                    tape.reshape(inp(0), vec![n, c * h * w])?
                }
                LayerKind::Fc { weights, bias } => tape.fully_connected(
                    inp(0),
                    param_values[*weights].unwrap(),
                    param_values[*bias].unwrap(),
                )?,
                LayerKind::Dropout { rate } => tape.dropout(
                    inp(0),
                    *rate,
                    Mode::Train,
                    seeds::derive(dropout_seed, "dropout", id as u64),
                )?,
                LayerKind::Softmax { axis } => tape.softmax(inp(0), *axis)?,
                LayerKind::Add => tape.add(inp(0), inp(1))?,
                LayerKind::Fuse { alpha } => tape.fuse(inp(0), inp(1), T::from_f64(*alpha))?,
            };
            if tape.value(out).has_nan() {
                return Err(Error::Numerical {
                    layer: layer.name.clone(),
                    detail: "NaN in layer output".into(),
                });
            }
            node_out.push(out);
        }
        Ok(TrainPass {
            tape,
            output: *node_out.last().unwrap(),
            param_values,
        })
    }

    fn assemble_bn(
        &self,
        gamma: usize,
        beta: usize,
        running_mean: usize,
        running_var: usize,
        epsilon: f64,
        stat_momentum: f64,
    ) -> BatchNormParams<T> {
        BatchNormParams {
            gamma: self.params.entries[gamma].tensor.clone(),
            beta: self.params.entries[beta].tensor.clone(),
            running_mean: self.params.entries[running_mean].tensor.clone(),
            running_var: self.params.entries[running_var].tensor.clone(),
            epsilon: T::from_f64(epsilon),
            stat_momentum: T::from_f64(stat_momentum),
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        // batch extent is free; the rest must match
        if x.rank() != self.meta.input_shape.len()
            || x.shape()[1..] != self.meta.input_shape[1..]
        {
            return Err(Error::ShapeMismatch(format!(
                "model {} expects input (N, {:?}), got {:?}",
                self.meta.name,
                &self.meta.input_shape[1..],
                x.shape()
            )));
        }
        Ok(())
    }

    /// Cast every parameter to another precision (graph structure unchanged).
    pub fn cast<U: Scalar>(&self) -> ModelGraph<U> {
        ModelGraph {
            layers: self.layers.clone(),
            params: ParamStore {
                entries: self
                    .params
                    .entries
                    .iter()
                    .map(|e| ParamEntry {
                        name: e.name.clone(),
                        tensor: e.tensor.cast(),
                        trainable: e.trainable,
                    })
                    .collect(),
            },
            meta: self.meta.clone(),
        }
    }
}

/// Stable 64-bit FNV-1a over the canonical JSON of an architecture config.
pub fn config_hash(arch: &ArchConfig) -> u64 {
    let json = serde_json::to_string(arch).expect("config serializes");
    let mut h: u64 = 0xcbf29ce484222325;
    for b in json.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Serializable snapshot of every architecture hyperparameter.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct CommonBn {
    pub epsilon: f64,
    pub stat_momentum: f64,
}

impl Default for CommonBn {
    fn default() -> Self {
        CommonBn {
            epsilon: 1e-5,
            stat_momentum: 0.1,
        }
    }
}
