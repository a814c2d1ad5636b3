//! Synthetic lung-phantom generator: a stand-in dataset with ground-truth
//! masks so the whole pipeline can be exercised without clinical data.
//!
//! Healthy phantoms are a smooth two-ellipse lung field plus Gaussian noise;
//! infected phantoms add Gaussian-blob lesions inside the lung fields. The
//! lesion mask is the union of each blob's half-peak contour (a disc of
//! radius sigma*sqrt(2 ln 2), well inside the 2-sigma ellipse), so every
//! mask pixel is attributable to a locally visible lesion.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataio::{write_gray_png, write_manifest, write_mask_png, ClassLabel, SampleRecord};
use crate::error::{Error, Result};
use crate::seeds;
use crate::tensor::Tensor;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomConfig {
    pub height: usize,
    pub width: usize,
    /// Inclusive range of lesion blobs per infected image.
    pub blob_count: (usize, usize),
    /// Peak intensity range of a lesion blob.
    pub blob_intensity: (f64, f64),
    /// Gaussian sigma range of a lesion blob, in pixels.
    pub blob_sigma: (f64, f64),
    /// Required foreground fraction of infected masks; must lie within (0, 0.5).
    pub fg_range: (f64, f64),
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            height: 64,
            width: 64,
            blob_count: (1, 3),
            blob_intensity: (0.35, 0.7),
            blob_sigma: (2.5, 5.0),
            fg_range: (0.01, 0.12),
            noise_sigma: 0.02,
            seed: 0,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fg_range.0 <= 0.0 || self.fg_range.1 >= 0.5 || self.fg_range.0 > self.fg_range.1 {
            return Err(Error::InvalidParameter(format!(
                "foreground fraction range {:?} must lie within (0, 0.5)",
                self.fg_range
            )));
        }
        if self.blob_count.0 == 0 || self.blob_count.0 > self.blob_count.1 {
            return Err(Error::InvalidParameter("invalid blob count range".into()));
        }
        if self.height < 8 || self.width < 8 {
            return Err(Error::InvalidParameter("phantom size too small".into()));
        }
        Ok(())
    }
}

struct Lung {
    cy: f64,
    cx: f64,
    ay: f64,
    ax: f64,
}

#[derive(Clone, Copy)]
struct Blob {
    cy: f64,
    cx: f64,
    sigma: f64,
    amp: f64,
}

/// One generated sample held in memory.
pub struct Phantom {
    pub image: Tensor<f32>,
    pub mask: Tensor<f32>,
    pub label: ClassLabel,
}

fn lungs(h: usize, w: usize, rng: &mut ChaCha8Rng) -> [Lung; 2] {
    let jitter = |rng: &mut ChaCha8Rng| rng.gen_range(-0.02..0.02);
    let make = |cx_frac: f64, rng: &mut ChaCha8Rng| Lung {
        cy: (0.5 + jitter(rng)) * h as f64,
        cx: (cx_frac + jitter(rng)) * w as f64,
        ay: 0.36 * h as f64,
        ax: 0.19 * w as f64,
    };
    [make(0.3, rng), make(0.7, rng)]
}

fn lung_field(h: usize, w: usize, lungs: &[Lung; 2]) -> Vec<f64> {
    let mut img = vec![0.12; h * w];
    for y in 0..h {
        for x in 0..w {
            for lung in lungs {
                let dy = (y as f64 - lung.cy) / lung.ay;
                let dx = (x as f64 - lung.cx) / lung.ax;
                let e = dy * dy + dx * dx;
                if e < 1.0 {
                    img[y * w + x] += 0.55 * (1.0 - e);
                }
            }
        }
    }
    img
}

fn sample_blobs(cfg: &PhantomConfig, lungs: &[Lung; 2], rng: &mut ChaCha8Rng) -> Vec<Blob> {
    let count = rng.gen_range(cfg.blob_count.0..=cfg.blob_count.1);
    (0..count)
        .map(|_| {
            let lung = &lungs[rng.gen_range(0..2usize)];
            let ry = rng.gen_range(-0.55..0.55);
            let rx = rng.gen_range(-0.55..0.55);
            Blob {
                cy: lung.cy + ry * lung.ay,
                cx: lung.cx + rx * lung.ax,
                sigma: rng.gen_range(cfg.blob_sigma.0..=cfg.blob_sigma.1),
                amp: rng.gen_range(cfg.blob_intensity.0..=cfg.blob_intensity.1),
            }
        })
        .collect()
}

/// The mask marks each blob's half-peak contour: the pixels where THAT
/// blob's own field exceeds half its amplitude, i.e. the disc of radius
/// sigma*sqrt(2 ln 2) (~1.18 sigma, inside the 2-sigma ellipse). Keeping the
/// threshold per-blob makes the label a local function of the visible bump,
/// independent of whatever brighter lesion shares the image.
fn lesion_field_and_mask(h: usize, w: usize, blobs: &[Blob]) -> (Vec<f64>, Vec<bool>) {
    let mut field = vec![0.0; h * w];
    let mut mask = vec![false; h * w];
    let r2_factor = 2.0 * std::f64::consts::LN_2;
    for y in 0..h {
        for x in 0..w {
            let mut v = 0.0;
            for b in blobs {
                let dy = y as f64 - b.cy;
                let dx = x as f64 - b.cx;
                let d2 = dy * dy + dx * dx;
                v += b.amp * (-d2 / (2.0 * b.sigma * b.sigma)).exp();
                if d2 < r2_factor * b.sigma * b.sigma {
                    mask[y * w + x] = true;
                }
            }
            field[y * w + x] = v;
        }
    }
    (field, mask)
}

/// Generate one phantom deterministically from a per-sample seed.
pub fn generate_one(cfg: &PhantomConfig, label: ClassLabel, sample_seed: u64) -> Result<Phantom> {
    cfg.validate()?;
    let (h, w) = (cfg.height, cfg.width);
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(sample_seed, "base", 0));
    let lungs = lungs(h, w, &mut rng);
    let mut img = lung_field(h, w, &lungs);

    let mask: Vec<bool> = match label {
        ClassLabel::Healthy => vec![false; h * w],
        ClassLabel::Infected => {
            let mut chosen = None;
            for attempt in 0..64u64 {
                let mut brng =
                    ChaCha8Rng::seed_from_u64(seeds::derive(sample_seed, "blobs", attempt));
                let blobs = sample_blobs(cfg, &lungs, &mut brng);
                let (field, mask) = lesion_field_and_mask(h, w, &blobs);
                let frac = mask.iter().filter(|&&m| m).count() as f64 / (h * w) as f64;
                if frac >= cfg.fg_range.0 && frac <= cfg.fg_range.1 {
                    chosen = Some((field, mask));
                    break;
                }
            }
            let (field, mask) = chosen.ok_or_else(|| {
                Error::Data(format!(
                    "could not hit foreground fraction {:?} in 64 attempts; widen the range or adjust blob parameters",
                    cfg.fg_range
                ))
            })?;
            for (p, &f) in img.iter_mut().zip(field.iter()) {
                *p += f;
            }
            mask
        }
    };

    let noise = Normal::new(0.0, cfg.noise_sigma)
        .map_err(|e| Error::InvalidParameter(format!("noise sigma: {e}")))?;
    let mut nrng = ChaCha8Rng::seed_from_u64(seeds::derive(sample_seed, "noise", 0));
    for p in img.iter_mut() {
        *p = (*p + noise.sample(&mut nrng)).clamp(0.0, 1.0);
    }

    Ok(Phantom {
        image: Tensor::new(vec![h, w], img.iter().map(|&v| v as f32).collect())?,
        mask: Tensor::new(
            vec![h, w],
            mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect(),
        )?,
        label,
    })
}

/// Generate `n` phantoms (alternating healthy/infected), write images, masks,
/// and a manifest CSV into `out_dir`; returns the manifest path and records.
pub fn generate_phantoms(
    cfg: &PhantomConfig,
    n: usize,
    out_dir: &Path,
) -> Result<(PathBuf, Vec<SampleRecord>)> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let mut rows = Vec::with_capacity(n);
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let label = if i % 2 == 0 {
            ClassLabel::Healthy
        } else {
            ClassLabel::Infected
        };
        let sample_seed = seeds::derive(cfg.seed, "phantom", i as u64);
        let ph = generate_one(cfg, label, sample_seed)?;
        let img_name = format!("img_{i:04}.png");
        let mask_name = format!("mask_{i:04}.png");
        write_gray_png(&out_dir.join(&img_name), &ph.image)?;
        write_mask_png(&out_dir.join(&mask_name), &ph.mask)?;
        rows.push((img_name.clone(), Some(label), Some(mask_name.clone())));
        records.push(SampleRecord {
            image_path: out_dir.join(&img_name),
            class_label: Some(label),
            mask_path: Some(out_dir.join(&mask_name)),
            split: None,
        });
    }
    let manifest = out_dir.join("manifest.csv");
    write_manifest(&manifest, &rows)?;
    Ok((manifest, records))
}
