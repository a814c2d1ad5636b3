//! Resolved run configuration: defaults, then the JSON config file, then
//! command-line overrides, in that order. The resolved value is echoed into
//! every output artifact for provenance.

use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};

use covct_core::dataio::phantom::PhantomConfig;
use covct_core::nets::builders::{ClassifierConfig, SegmenterConfig};
use covct_core::trainer::{Precision, TrainConfig};

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub classifier: ClassifierConfig,
    pub segmenter: SegmenterConfig,
    pub phantom: PhantomConfig,
}

/// Common override flags shared by most subcommands.
#[derive(Clone, Debug, clap::Args)]
pub struct CommonArgs {
    /// JSON config file; flags override its values
    #[arg(long)]
    pub config: Option<std::path::PathBuf>,
    /// Top-level seed for all randomness
    #[arg(long)]
    pub seed: Option<u64>,
    /// Model input size, e.g. 82x82
    #[arg(long, value_parser = parse_size)]
    pub size: Option<(usize, usize)>,
    /// Numeric precision
    #[arg(long, value_parser = parse_precision)]
    pub precision: Option<Precision>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub momentum: Option<f64>,
    /// Static pixel-attention weighting of the segmentation loss
    #[arg(long)]
    pub attention: bool,
}

pub fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HxW, got `{s}`"))?;
    let h = h.parse().map_err(|_| format!("bad height in `{s}`"))?;
    let w = w.parse().map_err(|_| format!("bad width in `{s}`"))?;
    Ok((h, w))
}

fn parse_precision(s: &str) -> Result<Precision, String> {
    match s {
        "f32" => Ok(Precision::F32),
        "f64" => Ok(Precision::F64),
        _ => Err(format!("expected f32 or f64, got `{s}`")),
    }
}

impl CommonArgs {
    /// defaults <- config file <- flags
    pub fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            None => RunConfig::default(),
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config `{}`", path.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("parsing config `{}`", path.display()))?
            }
        };
        if let Some(seed) = self.seed {
            cfg.train.seed = seed;
            cfg.phantom.seed = seed;
        }
        if let Some(size) = self.size {
            cfg.classifier.input = size;
            cfg.segmenter.input = size;
            cfg.phantom.height = size.0;
            cfg.phantom.width = size.1;
        }
        if let Some(p) = self.precision {
            cfg.train.precision = p;
        }
        if let Some(e) = self.epochs {
            cfg.train.epochs = e;
        }
        if let Some(lr) = self.learning_rate {
            cfg.train.learning_rate = lr;
        }
        if let Some(b) = self.batch_size {
            cfg.train.batch_size = b;
        }
        if let Some(m) = self.momentum {
            cfg.train.momentum = m;
        }
        if self.attention {
            cfg.train.attention = true;
        }
        Ok(cfg)
    }
}

/// Provenance stamp written next to every artifact set.
#[derive(Serialize)]
pub struct RunStamp<'a> {
    pub command: &'a str,
    pub seed: u64,
    pub config: &'a RunConfig,
}

pub fn write_stamp(dir: &Path, command: &str, cfg: &RunConfig) -> anyhow::Result<()> {
    let stamp = RunStamp {
        command,
        seed: cfg.train.seed,
        config: cfg,
    };
    let json = serde_json::to_string_pretty(&stamp)?;
    std::fs::write(dir.join("run.json"), json)?;
    Ok(())
}
