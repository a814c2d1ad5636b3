//! Builders for the two network architectures and the SegNet-style baseline.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::Padding;
use crate::seeds;
use crate::tensor::{Scalar, Tensor};

use super::{config_hash, CommonBn, LayerKind, LayerSpec, ModelGraph, ModelMeta, ParamStore};

/// Residual classifier configuration. The stem and four residual stages run
/// at `widths`; each stage downsamples with a stride-2 conv; the head is two
/// FC-ReLU-dropout pairs and a two-way softmax classifier.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct ClassifierConfig {
    pub input: (usize, usize),
    pub widths: [usize; 4],
    pub fc_widths: (usize, usize),
    pub dropout: f64,
    pub classes: usize,
    pub bn: CommonBn,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            input: (82, 82),
            widths: [16, 32, 64, 128],
            fc_widths: (64, 32),
            dropout: 0.5,
            classes: 2,
            bn: CommonBn::default(),
        }
    }
}

/// Encoder-decoder segmenter configuration. `fusion_alpha` weights the max
/// branch of every pooling/unpooling fusion (0.5 = elementwise mean; 1.0
/// reproduces the max-only baseline exactly).
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct SegmenterConfig {
    pub input: (usize, usize),
    pub widths: [usize; 4],
    pub fusion_alpha: f64,
    pub classes: usize,
    pub bn: CommonBn,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        SegmenterConfig {
            input: (64, 64),
            widths: [32, 64, 128, 256],
            fusion_alpha: 0.5,
            classes: 2,
            bn: CommonBn::default(),
        }
    }
}

/// Architecture discriminator stored in checkpoints.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "arch")]
pub enum ArchConfig {
    CovCtNet(ClassifierConfig),
    CovRaSeg(SegmenterConfig),
    SegNetBaseline(SegmenterConfig),
}

impl ArchConfig {
    pub fn name(&self) -> &'static str {
        match self {
            ArchConfig::CovCtNet(_) => "cov_ctnet",
            ArchConfig::CovRaSeg(_) => "cov_raseg",
            ArchConfig::SegNetBaseline(_) => "segnet_baseline",
        }
    }

    pub fn build<T: Scalar>(&self, seed: u64) -> Result<ModelGraph<T>> {
        match self {
            ArchConfig::CovCtNet(c) => build_cov_ctnet(c, seed),
            ArchConfig::CovRaSeg(c) => build_cov_raseg(c, seed),
            ArchConfig::SegNetBaseline(c) => build_segnet_baseline(c, seed),
        }
    }
}

// ── Parameter initialization ────────────────────────────────────────────

/// Zero-mean Gaussian with std sqrt(2/fan_in); biases zero; BN gamma 1,
/// beta 0, running mean 0, running var 1.
struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    fn new(seed: u64) -> Self {
        Init {
            rng: ChaCha8Rng::seed_from_u64(seeds::derive(seed, "init", 0)),
        }
    }

    fn gaussian<T: Scalar>(&mut self, shape: &[usize], fan_in: usize) -> Tensor<T> {
        let std = (2.0 / fan_in as f64).sqrt();
        let dist = Normal::new(0.0, std).expect("std > 0");
        Tensor::from_fn(shape, |_| T::from_f64(dist.sample(&mut self.rng)))
    }
}

/// Incremental graph assembly shared by the builders.
struct GraphBuilder<T: Scalar> {
    layers: Vec<LayerSpec>,
    params: ParamStore<T>,
    init: Init,
    bn: CommonBn,
}

impl<T: Scalar> GraphBuilder<T> {
    fn new(seed: u64, bn: CommonBn) -> Self {
        let mut layers = Vec::new();
        layers.push(LayerSpec {
            kind: LayerKind::Input,
            inputs: vec![],
            name: "input".into(),
        });
        GraphBuilder {
            layers,
            params: ParamStore::default(),
            init: Init::new(seed),
            bn,
        }
    }

    fn add(&mut self, kind: LayerKind, inputs: Vec<usize>, name: String) -> usize {
        self.layers.push(LayerSpec { kind, inputs, name });
        self.layers.len() - 1
    }

    fn conv(
        &mut self,
        x: usize,
        name: &str,
        in_c: usize,
        out_c: usize,
        k: (usize, usize),
        stride: (usize, usize),
        padding: Padding,
    ) -> usize {
        let fan_in = in_c * k.0 * k.1;
        let w = self.params.push(
            format!("{name}.w"),
            self.init.gaussian(&[out_c, in_c, k.0, k.1], fan_in),
            true,
        );
        let b = self
            .params
            .push(format!("{name}.b"), Tensor::zeros(&[out_c]), true);
        self.add(
            LayerKind::Conv {
                weights: w,
                bias: b,
                stride,
                padding,
            },
            vec![x],
            name.to_string(),
        )
    }

    fn batch_norm(&mut self, x: usize, name: &str, channels: usize) -> usize {
        let gamma = self.params.push(
            format!("{name}.gamma"),
            Tensor::filled(&[channels], T::ONE),
            true,
        );
        let beta = self
            .params
            .push(format!("{name}.beta"), Tensor::zeros(&[channels]), true);
        let running_mean = self.params.push(
            format!("{name}.running_mean"),
            Tensor::zeros(&[channels]),
            false,
        );
        let running_var = self.params.push(
            format!("{name}.running_var"),
            Tensor::filled(&[channels], T::ONE),
            false,
        );
        self.add(
            LayerKind::BatchNorm {
                gamma,
                beta,
                running_mean,
                running_var,
                epsilon: self.bn.epsilon,
                stat_momentum: self.bn.stat_momentum,
            },
            vec![x],
            name.to_string(),
        )
    }

    fn relu(&mut self, x: usize, name: &str) -> usize {
        self.add(LayerKind::Relu, vec![x], name.to_string())
    }

    /// conv(3x3, stride 1, pad 1) -> BN -> ReLU
    fn conv_bn_relu(&mut self, x: usize, name: &str, in_c: usize, out_c: usize) -> usize {
        let c = self.conv(
            x,
            &format!("{name}.conv"),
            in_c,
            out_c,
            (3, 3),
            (1, 1),
            Padding::symmetric(1, 1),
        );
        let n = self.batch_norm(c, &format!("{name}.bn"), out_c);
        self.relu(n, &format!("{name}.relu"))
    }

    fn fc(&mut self, x: usize, name: &str, in_f: usize, out_f: usize) -> usize {
        let w = self.params.push(
            format!("{name}.w"),
            self.init.gaussian(&[out_f, in_f], in_f),
            true,
        );
        let b = self
            .params
            .push(format!("{name}.b"), Tensor::zeros(&[out_f]), true);
        self.add(
            LayerKind::Fc { weights: w, bias: b },
            vec![x],
            name.to_string(),
        )
    }
}

// ── Classifier ──────────────────────────────────────────────────────────

/// Spatial extent after one stride-2 3x3 pad-1 conv.
fn halve(s: usize) -> usize {
    (s + 1) / 2
}

/// Extent after the four stride-2 stage-end convs.
fn after_stages(s: usize) -> usize {
    halve(halve(halve(halve(s))))
}

/// Bottom/right padding needed so the extent surviving the four stage
/// downsamples is even (the head max-pool needs that).
fn classifier_pad(s: usize) -> Result<usize> {
    for pad in 0..16 {
        let out = after_stages(s + pad);
        if out % 2 == 0 && out >= 2 {
            return Ok(pad);
        }
    }
    Err(Error::InvalidParameter(format!(
        "no workable padding for classifier input extent {s}"
    )))
}

/// Residual classifier: stem conv-BN-ReLU; four residual stages (two
/// conv-BN-ReLU sub-blocks plus skip, then a stride-2 conv-BN-ReLU); head
/// max-pool, then FC-ReLU-dropout twice and a two-way softmax classifier.
pub fn build_cov_ctnet<T: Scalar>(cfg: &ClassifierConfig, seed: u64) -> Result<ModelGraph<T>> {
    if cfg.classes != 2 {
        return Err(Error::InvalidParameter("classifier is two-way".into()));
    }
    if cfg.widths.iter().any(|&w| w == 0) || cfg.fc_widths.0 == 0 || cfg.fc_widths.1 == 0 {
        return Err(Error::InvalidParameter("zero layer width".into()));
    }
    let (h, w) = cfg.input;
    let (pad_h, pad_w) = (classifier_pad(h)?, classifier_pad(w)?);
    let mut b = GraphBuilder::<T>::new(seed, cfg.bn.clone());

    let mut x = 0usize;
    if pad_h > 0 || pad_w > 0 {
        x = b.add(
            LayerKind::ZeroPad {
                bottom: pad_h,
                right: pad_w,
            },
            vec![x],
            "pad".into(),
        );
    }
    x = b.conv_bn_relu(x, "stem", 1, cfg.widths[0]);

    let mut in_c = cfg.widths[0];
    for (i, &width) in cfg.widths.iter().enumerate() {
        let stage = format!("stage{}", i + 1);
        let stage_in = x;
        let b1 = b.conv_bn_relu(stage_in, &format!("{stage}.block1"), in_c, width);
        let b2 = b.conv_bn_relu(b1, &format!("{stage}.block2"), width, width);
        let skip = if in_c == width {
            stage_in
        } else {
            let pc = b.conv(
                stage_in,
                &format!("{stage}.proj.conv"),
                in_c,
                width,
                (1, 1),
                (1, 1),
                Padding::NONE,
            );
            b.batch_norm(pc, &format!("{stage}.proj.bn"), width)
        };
        x = b.add(LayerKind::Add, vec![b2, skip], format!("{stage}.sum"));
        // stride-2 conv closes the stage
        let dc = b.conv(
            x,
            &format!("{stage}.down.conv"),
            width,
            width,
            (3, 3),
            (2, 2),
            Padding::symmetric(1, 1),
        );
        let dn = b.batch_norm(dc, &format!("{stage}.down.bn"), width);
        x = b.relu(dn, &format!("{stage}.down.relu"));
        in_c = width;
    }

    x = b.add(LayerKind::MaxPool, vec![x], "head.pool".into());
    x = b.add(LayerKind::Flatten, vec![x], "head.flatten".into());

    let s_h = after_stages(h + pad_h) / 2;
    let s_w = after_stages(w + pad_w) / 2;
    let flat = cfg.widths[3] * s_h * s_w;
    x = b.fc(x, "head.fc1", flat, cfg.fc_widths.0);
    x = b.relu(x, "head.fc1.relu");
    x = b.add(
        LayerKind::Dropout { rate: cfg.dropout },
        vec![x],
        "head.fc1.dropout".into(),
    );
    x = b.fc(x, "head.fc2", cfg.fc_widths.0, cfg.fc_widths.1);
    let feature_layer = b.relu(x, "head.fc2.relu");
    x = b.add(
        LayerKind::Dropout { rate: cfg.dropout },
        vec![feature_layer],
        "head.fc2.dropout".into(),
    );
    x = b.fc(x, "head.classifier", cfg.fc_widths.1, cfg.classes);
    b.add(LayerKind::Softmax { axis: 1 }, vec![x], "head.softmax".into());

    let arch = ArchConfig::CovCtNet(cfg.clone());
    let model = ModelGraph {
        layers: b.layers,
        params: b.params,
        meta: ModelMeta {
            config_hash: config_hash(&arch),
            name: arch.name().to_string(),
            arch,
            input_shape: vec![1, 1, h, w],
            class_count: cfg.classes,
            feature_layer: Some(feature_layer),
        },
    };
    model.validate()?;
    Ok(model)
}

// ── Segmenter ───────────────────────────────────────────────────────────

/// `dual_pool` adds the average pooling/unpooling branches fused with the
/// max branches; without it the graph is the plain SegNet-style baseline.
fn build_segmenter<T: Scalar>(
    cfg: &SegmenterConfig,
    seed: u64,
    dual_pool: bool,
    arch: ArchConfig,
) -> Result<ModelGraph<T>> {
    if cfg.classes != 2 {
        return Err(Error::InvalidParameter("segmenter is two-way".into()));
    }
    let (h, w) = cfg.input;
    if h % 16 != 0 || w % 16 != 0 {
        return Err(Error::InvalidParameter(format!(
            "segmenter input {h}x{w} must be divisible by 16"
        )));
    }
    let mut b = GraphBuilder::<T>::new(seed, cfg.bn.clone());
    let mut x = 0usize;
    let mut in_c = 1usize;
    let mut pool_ids = [0usize; 4];

    for (i, &width) in cfg.widths.iter().enumerate() {
        let stage = format!("enc{}", i + 1);
        x = b.conv_bn_relu(x, &format!("{stage}.block1"), in_c, width);
        x = b.conv_bn_relu(x, &format!("{stage}.block2"), width, width);
        let mp = b.add(LayerKind::MaxPool, vec![x], format!("{stage}.maxpool"));
        pool_ids[i] = mp;
        x = if dual_pool {
            let ap = b.add(LayerKind::AvgPool, vec![x], format!("{stage}.avgpool"));
            b.add(
                LayerKind::Fuse {
                    alpha: cfg.fusion_alpha,
                },
                vec![mp, ap],
                format!("{stage}.fuse"),
            )
        } else {
            mp
        };
        in_c = width;
    }

    for i in (0..4).rev() {
        let stage = format!("dec{}", i + 1);
        let width = cfg.widths[i];
        let mu = b.add(
            LayerKind::MaxUnpool { pool: pool_ids[i] },
            vec![x],
            format!("{stage}.maxunpool"),
        );
        x = if dual_pool {
            let au = b.add(LayerKind::AvgUnpool, vec![x], format!("{stage}.avgunpool"));
            b.add(
                LayerKind::Fuse {
                    alpha: cfg.fusion_alpha,
                },
                vec![mu, au],
                format!("{stage}.fuse"),
            )
        } else {
            mu
        };
        let out_c = if i > 0 { cfg.widths[i - 1] } else { cfg.widths[0] };
        x = b.conv_bn_relu(x, &format!("{stage}.block1"), width, width);
        x = b.conv_bn_relu(x, &format!("{stage}.block2"), width, out_c);
        in_c = out_c;
    }

    // 2x2 'same' conv to class scores, then per-pixel class probabilities
    let fc = b.conv(
        x,
        "head.conv",
        in_c,
        cfg.classes,
        (2, 2),
        (1, 1),
        Padding::same_even2(),
    );
    b.add(LayerKind::Softmax { axis: 1 }, vec![fc], "head.softmax".into());

    let model = ModelGraph {
        layers: b.layers,
        params: b.params,
        meta: ModelMeta {
            config_hash: config_hash(&arch),
            name: arch.name().to_string(),
            arch,
            input_shape: vec![1, 1, h, w],
            class_count: cfg.classes,
            feature_layer: None,
        },
    };
    model.validate()?;
    Ok(model)
}

/// Dual-pooling encoder-decoder segmenter: every downsample fuses max and
/// average pooling, every upsample fuses index-driven max-unpooling and
/// nearest-neighbor expansion.
pub fn build_cov_raseg<T: Scalar>(cfg: &SegmenterConfig, seed: u64) -> Result<ModelGraph<T>> {
    build_segmenter(cfg, seed, true, ArchConfig::CovRaSeg(cfg.clone()))
}

/// Identical topology with plain max pooling/unpooling only.
pub fn build_segnet_baseline<T: Scalar>(cfg: &SegmenterConfig, seed: u64) -> Result<ModelGraph<T>> {
    build_segmenter(cfg, seed, false, ArchConfig::SegNetBaseline(cfg.clone()))
}
