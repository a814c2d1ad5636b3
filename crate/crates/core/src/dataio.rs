//! Dataset ingestion: manifests, image/mask loading, resizing, and
//! normalization.
//!
//! Manifests are CSV files with the header `image,label,mask`; label and/or
//! mask may be empty per row but not both. Relative paths resolve against
//! the manifest's directory. Masks live on disk as single-channel images
//! with {0,255} values and load as {0,1}.

use std::fmt;
use std::path::{Path, PathBuf};

use image::DynamicImage;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub mod phantom;

/// Binary class of a CT sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClassLabel {
    Healthy,
    Infected,
}

impl ClassLabel {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "healthy" => Some(ClassLabel::Healthy),
            "infected" => Some(ClassLabel::Infected),
            _ => None,
        }
    }

    /// Class index used by the models: healthy = 0, infected = 1.
    pub fn index(self) -> usize {
        match self {
            ClassLabel::Healthy => 0,
            ClassLabel::Infected => 1,
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClassLabel::Healthy => "healthy",
            ClassLabel::Infected => "infected",
        })
    }
}

/// One dataset entry: an image plus a class label and/or a mask.
#[derive(Clone, Debug)]
pub struct SampleRecord {
    pub image_path: PathBuf,
    pub class_label: Option<ClassLabel>,
    pub mask_path: Option<PathBuf>,
    pub split: Option<String>,
}

/// Parse and validate a manifest CSV.
pub fn parse_manifest(path: &Path) -> Result<Vec<SampleRecord>> {
    let text = std::fs::read_to_string(path)?;
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == "image,label,mask" => {}
        Some((_, header)) => {
            return Err(Error::Manifest {
                line: 1,
                msg: format!("expected header `image,label,mask`, got `{}`", header.trim()),
            })
        }
        None => {
            return Err(Error::Manifest {
                line: 1,
                msg: "missing header".into(),
            })
        }
    }
    let mut records = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (idx, raw) in lines {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(Error::Manifest {
                line,
                msg: format!("expected 3 fields, got {}", fields.len()),
            });
        }
        if fields[0].is_empty() {
            return Err(Error::Manifest {
                line,
                msg: "empty image path".into(),
            });
        }
        if !seen.insert(fields[0].to_string()) {
            return Err(Error::Manifest {
                line,
                msg: format!("duplicate image path `{}`", fields[0]),
            });
        }
        let class_label = if fields[1].is_empty() {
            None
        } else {
            Some(ClassLabel::parse(fields[1]).ok_or_else(|| Error::Manifest {
                line,
                msg: format!("unknown label `{}` (expected healthy|infected)", fields[1]),
            })?)
        };
        let mask_path = if fields[2].is_empty() {
            None
        } else {
            Some(resolve(dir, fields[2]))
        };
        if class_label.is_none() && mask_path.is_none() {
            return Err(Error::Manifest {
                line,
                msg: "row has neither label nor mask".into(),
            });
        }
        let image_path = resolve(dir, fields[0]);
        if !image_path.exists() {
            return Err(Error::Manifest {
                line,
                msg: format!("image `{}` does not exist", image_path.display()),
            });
        }
        if let Some(m) = &mask_path {
            if !m.exists() {
                return Err(Error::Manifest {
                    line,
                    msg: format!("mask `{}` does not exist", m.display()),
                });
            }
        }
        records.push(SampleRecord {
            image_path,
            class_label,
            mask_path,
            split: None,
        });
    }
    Ok(records)
}

fn resolve(dir: &Path, p: &str) -> PathBuf {
    let pb = PathBuf::from(p);
    if pb.is_absolute() {
        pb
    } else {
        dir.join(pb)
    }
}

/// Serialize records into the manifest CSV format.
pub fn write_manifest(path: &Path, records: &[(String, Option<ClassLabel>, Option<String>)]) -> Result<()> {
    let mut out = String::from("image,label,mask\n");
    for (img, label, mask) in records {
        let l = label.map(|l| l.to_string()).unwrap_or_default();
        let m = mask.clone().unwrap_or_default();
        out.push_str(&format!("{img},{l},{m}\n"));
    }
    std::fs::write(path, out)?;
    Ok(())
}

// ── Image decoding and geometry ─────────────────────────────────────────

/// Decoded planes in [0,1]: 1 (grayscale) or 3 (RGB), each HxW row-major.
struct RawImage {
    h: usize,
    w: usize,
    planes: Vec<Vec<f64>>,
}

fn decode(path: &Path) -> Result<RawImage> {
    let img = image::open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let planes = match img {
        DynamicImage::ImageLuma8(buf) => {
            vec![buf.into_raw().into_iter().map(|v| v as f64 / 255.0).collect()]
        }
        DynamicImage::ImageLuma16(buf) => {
            vec![buf.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect()]
        }
        DynamicImage::ImageRgb8(buf) => {
            let raw = buf.into_raw();
            let mut planes = vec![Vec::with_capacity(h * w); 3];
            for px in raw.chunks_exact(3) {
                for c in 0..3 {
                    planes[c].push(px[c] as f64 / 255.0);
                }
            }
            planes
        }
        DynamicImage::ImageRgb16(buf) => {
            let raw = buf.into_raw();
            let mut planes = vec![Vec::with_capacity(h * w); 3];
            for px in raw.chunks_exact(3) {
                for c in 0..3 {
                    planes[c].push(px[c] as f64 / 65535.0);
                }
            }
            planes
        }
        other => {
            return Err(Error::Data(format!(
                "unsupported pixel format {:?} in {} (need 8/16-bit grayscale or RGB)",
                other.color(),
                path.display()
            )))
        }
    };
    Ok(RawImage { h, w, planes })
}

/// Bilinear resize of one plane. Source coordinates follow the pixel-center
/// convention sx = (dx + 0.5)·sw/dw - 0.5, clamped at the edges.
pub fn resize_bilinear(src: &[f64], sh: usize, sw: usize, dh: usize, dw: usize) -> Vec<f64> {
    let mut out = vec![0.0; dh * dw];
    let sy_scale = sh as f64 / dh as f64;
    let sx_scale = sw as f64 / dw as f64;
    for dy in 0..dh {
        let fy = ((dy as f64 + 0.5) * sy_scale - 0.5).clamp(0.0, (sh - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(sh - 1);
        let ty = fy - y0 as f64;
        for dx in 0..dw {
            let fx = ((dx as f64 + 0.5) * sx_scale - 0.5).clamp(0.0, (sw - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(sw - 1);
            let tx = fx - x0 as f64;
            let top = src[y0 * sw + x0] * (1.0 - tx) + src[y0 * sw + x1] * tx;
            let bot = src[y1 * sw + x0] * (1.0 - tx) + src[y1 * sw + x1] * tx;
            out[dy * dw + dx] = top * (1.0 - ty) + bot * ty;
        }
    }
    out
}

/// Nearest-neighbor resize; preserves the source value set exactly.
pub fn resize_nearest(src: &[f64], sh: usize, sw: usize, dh: usize, dw: usize) -> Vec<f64> {
    let mut out = vec![0.0; dh * dw];
    for dy in 0..dh {
        let sy = (((dy as f64 + 0.5) * sh as f64 / dh as f64).floor() as usize).min(sh - 1);
        for dx in 0..dw {
            let sx = (((dx as f64 + 0.5) * sw as f64 / dw as f64).floor() as usize).min(sw - 1);
            out[dy * dw + dx] = src[sy * sw + sx];
        }
    }
    out
}

fn min_max_normalize(v: &mut [f64]) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &x in v.iter() {
        lo = lo.min(x);
        hi = hi.max(x);
    }
    let span = hi - lo;
    if span <= 0.0 {
        v.iter_mut().for_each(|x| *x = 0.0);
    } else {
        v.iter_mut().for_each(|x| *x = (*x - lo) / span);
    }
}

/// Load, resize, and normalize one sample.
///
/// The image resizes bilinearly to `target` (h, w), converts to grayscale by
/// Rec.601 luminance when `grayscale` is set (luminance and bilinear
/// resampling are both linear, so the order does not change the result), and
/// is min-max normalized to [0,1]. A mask, when present, must match the
/// image's original extents; it resizes by nearest neighbor and binarizes at
/// 0.5. Returns (image, mask): grayscale images are (H, W), RGB (3, H, W).
pub fn load_sample<T: Scalar>(
    rec: &SampleRecord,
    target: (usize, usize),
    grayscale: bool,
) -> Result<(Tensor<T>, Option<Tensor<T>>)> {
    let (th, tw) = target;
    let raw = decode(&rec.image_path)?;
    let planes: Vec<Vec<f64>> = if grayscale && raw.planes.len() == 3 {
        let mut luma = vec![0.0; raw.h * raw.w];
        for i in 0..luma.len() {
            luma[i] =
                0.299 * raw.planes[0][i] + 0.587 * raw.planes[1][i] + 0.114 * raw.planes[2][i];
        }
        vec![luma]
    } else {
        raw.planes
    };
    let mut resized: Vec<Vec<f64>> = planes
        .iter()
        .map(|p| resize_bilinear(p, raw.h, raw.w, th, tw))
        .collect();
    // normalize across the whole image (all channels at once)
    {
        let mut all: Vec<f64> = resized.iter().flatten().copied().collect();
        min_max_normalize(&mut all);
        let n = th * tw;
        for (c, plane) in resized.iter_mut().enumerate() {
            plane.copy_from_slice(&all[c * n..(c + 1) * n]);
        }
    }
    let image = if resized.len() == 1 {
        Tensor::new(
            vec![th, tw],
            resized[0].iter().map(|&v| T::from_f64(v)).collect(),
        )?
    } else {
        Tensor::new(
            vec![resized.len(), th, tw],
            resized
                .iter()
                .flatten()
                .map(|&v| T::from_f64(v))
                .collect(),
        )?
    };

    let mask = match &rec.mask_path {
        None => None,
        Some(mp) => {
            let mraw = decode(mp)?;
            if mraw.planes.len() != 1 {
                return Err(Error::Data(format!(
                    "mask `{}` must be single-channel",
                    mp.display()
                )));
            }
            if (mraw.h, mraw.w) != (raw.h, raw.w) {
                return Err(Error::Data(format!(
                    "mask `{}` is {}x{} but image is {}x{}",
                    mp.display(),
                    mraw.h,
                    mraw.w,
                    raw.h,
                    raw.w
                )));
            }
            let resized = resize_nearest(&mraw.planes[0], mraw.h, mraw.w, th, tw);
            Some(Tensor::new(
                vec![th, tw],
                resized
                    .iter()
                    .map(|&v| if v >= 0.5 { T::ONE } else { T::ZERO })
                    .collect(),
            )?)
        }
    };
    Ok((image, mask))
}

/// Load at native resolution (no resize), grayscale + min-max normalized;
/// the wavelet enhancement step runs at this resolution.
pub fn load_sample_native<T: Scalar>(
    rec: &SampleRecord,
    grayscale: bool,
) -> Result<(Tensor<T>, Option<Tensor<T>>)> {
    let raw = decode(&rec.image_path)?;
    load_sample(rec, (raw.h, raw.w), grayscale)
}

/// Write a [0,1] grayscale tensor as an 8-bit PNG.
pub fn write_gray_png<T: Scalar>(path: &Path, img: &Tensor<T>) -> Result<()> {
    let (h, w) = img.dims2()?;
    let bytes: Vec<u8> = img
        .data()
        .iter()
        .map(|&v| (v.to_f64().clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let buf = image::GrayImage::from_raw(w as u32, h as u32, bytes)
        .ok_or_else(|| Error::Data("gray image buffer construction failed".into()))?;
    buf.save(path)?;
    Ok(())
}

/// Write a {0,1} mask tensor as a {0,255} 8-bit PNG.
pub fn write_mask_png<T: Scalar>(path: &Path, mask: &Tensor<T>) -> Result<()> {
    let (h, w) = mask.dims2()?;
    let bytes: Vec<u8> = mask
        .data()
        .iter()
        .map(|&v| if v.to_f64() >= 0.5 { 255 } else { 0 })
        .collect();
    let buf = image::GrayImage::from_raw(w as u32, h as u32, bytes)
        .ok_or_else(|| Error::Data("mask buffer construction failed".into()))?;
    buf.save(path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(path: &Path, content: &str) {
        std::fs::write(path, content).unwrap();
    }

    fn png_at(dir: &Path, name: &str, h: u32, w: u32, value: u8) -> String {
        let buf = image::GrayImage::from_pixel(w, h, image::Luma([value]));
        let p = dir.join(name);
        buf.save(&p).unwrap();
        name.to_string()
    }

    #[test]
    fn empty_manifest_after_header_is_empty_list() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("m.csv");
        write(&m, "image,label,mask\n");
        assert!(parse_manifest(&m).unwrap().is_empty());
    }

    #[test]
    fn missing_header_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("m.csv");
        write(&m, "img,healthy,\n");
        assert!(matches!(
            parse_manifest(&m),
            Err(Error::Manifest { line: 1, .. })
        ));
    }

    #[test]
    fn duplicate_image_path_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let img = png_at(dir.path(), "a.png", 4, 4, 128);
        let m = dir.path().join("m.csv");
        write(
            &m,
            &format!("image,label,mask\n{img},healthy,\n{img},infected,\n"),
        );
        match parse_manifest(&m) {
            Err(Error::Manifest { line, msg }) => {
                assert_eq!(line, 3);
                assert!(msg.contains("duplicate"));
            }
            other => panic!("expected manifest error, got {other:?}"),
        }
    }

    #[test]
    fn row_without_label_or_mask_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let img = png_at(dir.path(), "a.png", 4, 4, 128);
        let m = dir.path().join("m.csv");
        write(&m, &format!("image,label,mask\n{img},,\n"));
        assert!(matches!(parse_manifest(&m), Err(Error::Manifest { line: 2, .. })));
    }

    #[test]
    fn unknown_label_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let img = png_at(dir.path(), "a.png", 4, 4, 128);
        let m = dir.path().join("m.csv");
        write(&m, &format!("image,label,mask\n{img},sick,\n"));
        assert!(parse_manifest(&m).is_err());
    }

    #[test]
    fn well_formed_rows_parse_verbatim() {
        let dir = tempfile::tempdir().unwrap();
        let a = png_at(dir.path(), "a.png", 4, 4, 10);
        let b = png_at(dir.path(), "b.png", 4, 4, 20);
        let c = png_at(dir.path(), "c.png", 4, 4, 30);
        let mk = png_at(dir.path(), "mk.png", 4, 4, 255);
        let m = dir.path().join("m.csv");
        write(
            &m,
            &format!("image,label,mask\n{a},healthy,\n{b},infected,{mk}\n{c},,{mk}\n"),
        );
        let recs = parse_manifest(&m).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[0].class_label, Some(ClassLabel::Healthy));
        assert!(recs[0].mask_path.is_none());
        assert_eq!(recs[1].class_label, Some(ClassLabel::Infected));
        assert!(recs[1].mask_path.is_some());
        assert!(recs[2].class_label.is_none());
    }

    #[test]
    fn bilinear_checkerboard_matches_hand_interpolation() {
        // 4x4 checkerboard -> 2x2: every output samples the average of a
        // 2x2 block = 0.5
        let src = vec![
            0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.0,
        ];
        let out = resize_bilinear(&src, 4, 4, 2, 2);
        for v in out {
            assert!((v - 0.5).abs() < 1e-12);
        }
        // and a 2x2 -> 1x1 case: plain average
        let out = resize_bilinear(&[1.0, 2.0, 3.0, 4.0], 2, 2, 1, 1);
        assert!((out[0] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn identity_resize_is_exact() {
        let src = vec![0.1, 0.9, 0.4, 0.6, 0.2, 0.8, 0.3, 0.7, 0.5];
        assert_eq!(resize_bilinear(&src, 3, 3, 3, 3), src);
        assert_eq!(resize_nearest(&src, 3, 3, 3, 3), src);
    }

    #[test]
    fn nearest_preserves_value_set() {
        let src = vec![0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0];
        let out = resize_nearest(&src, 3, 3, 7, 5);
        assert!(out.iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn constant_image_normalizes_to_zero() {
        let dir = tempfile::tempdir().unwrap();
        let img = png_at(dir.path(), "c.png", 6, 6, 77);
        let rec = SampleRecord {
            image_path: dir.path().join(img),
            class_label: Some(ClassLabel::Healthy),
            mask_path: None,
            split: None,
        };
        let (t, _): (Tensor<f32>, _) = load_sample(&rec, (4, 4), true).unwrap();
        assert!(t.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mask_resize_keeps_binary_values() {
        let dir = tempfile::tempdir().unwrap();
        let img = png_at(dir.path(), "i.png", 8, 8, 60);
        // half-white mask
        let mut mbuf = image::GrayImage::new(8, 8);
        for y in 0..8 {
            for x in 0..8 {
                mbuf.put_pixel(x, y, image::Luma([if x >= 4 { 255 } else { 0 }]));
            }
        }
        let mpath = dir.path().join("m.png");
        mbuf.save(&mpath).unwrap();
        let rec = SampleRecord {
            image_path: dir.path().join(img),
            class_label: None,
            mask_path: Some(mpath),
            split: None,
        };
        let (_, mask): (Tensor<f64>, _) = load_sample(&rec, (5, 5), true).unwrap();
        let mask = mask.unwrap();
        assert!(mask.data().iter().all(|&v| v == 0.0 || v == 1.0));
        assert!(mask.data().iter().any(|&v| v == 1.0));
    }

    #[test]
    fn mismatched_mask_extents_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let img = png_at(dir.path(), "i.png", 8, 8, 60);
        let msk = png_at(dir.path(), "m.png", 4, 4, 255);
        let rec = SampleRecord {
            image_path: dir.path().join(img),
            class_label: None,
            mask_path: Some(dir.path().join(msk)),
            split: None,
        };
        assert!(load_sample::<f32>(&rec, (8, 8), true).is_err());
    }

    #[test]
    fn reloading_yields_bit_identical_tensors() {
        let dir = tempfile::tempdir().unwrap();
        let mut buf = image::GrayImage::new(9, 9);
        for y in 0..9 {
            for x in 0..9 {
                buf.put_pixel(x, y, image::Luma([((x * 31 + y * 7) % 256) as u8]));
            }
        }
        let p = dir.path().join("i.png");
        buf.save(&p).unwrap();
        let rec = SampleRecord {
            image_path: p,
            class_label: Some(ClassLabel::Infected),
            mask_path: None,
            split: None,
        };
        let (a, _): (Tensor<f32>, _) = load_sample(&rec, (7, 7), true).unwrap();
        let (b, _): (Tensor<f32>, _) = load_sample(&rec, (7, 7), true).unwrap();
        assert_eq!(a, b);
    }
}
