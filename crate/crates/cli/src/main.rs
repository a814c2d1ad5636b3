//! `covct` — batch CLI for the two-stage lung-CT pipeline: synthetic data,
//! wavelet enhancement, training, evaluation, cross-validation, prediction,
//! feature export, and gradient verification.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::bail;
use clap::{Parser, Subcommand};
use serde::Serialize;

use covct_core::dataio::phantom::generate_phantoms;
use covct_core::dataio::{
    load_sample_native, parse_manifest, write_gray_png, write_mask_png, ClassLabel, SampleRecord,
};
use covct_core::gradcheck;
use covct_core::metrics::{evaluate_classification, Mask, MetricsReport, SegAccumulator};
use covct_core::nets::{
    extract_features, load_checkpoint, save_checkpoint, two_stage_predict,
};
use covct_core::seeds;
use covct_core::trainer::{
    classifier_scores, cross_validate_classifier, cross_validate_segmenter,
    load_classifier_dataset, load_segmenter_dataset, make_splits, predict_mask, train_classifier,
    train_segmenter, Precision, SplitPlan,
};
use covct_core::wavelet::enhance_image;
use covct_core::{ErrorCategory, Scalar};

mod config;
use config::{CommonArgs, RunConfig};

#[derive(Parser)]
#[command(
    name = "covct",
    about = "Two-stage lung-CT analysis: wavelet-enhanced classification and dual-pooling segmentation",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic phantom dataset with ground-truth masks
    Synth {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        out: PathBuf,
        /// Number of samples (alternating healthy/infected)
        #[arg(long, default_value_t = 20)]
        count: usize,
    },
    /// Wavelet-enhance one image or every image of a manifest
    Enhance {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, conflicts_with = "manifest")]
        image: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Output PNG (with --image) or output directory (with --manifest)
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the classifier on a labeled manifest
    TrainCls {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the segmenter on a mask-bearing manifest
    TrainSeg {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Train the max-pooling-only baseline instead
        #[arg(long)]
        baseline: bool,
    },
    /// k-fold cross-validation (classification or segmentation)
    Cv {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// cls | seg
        #[arg(long, default_value = "cls")]
        task: String,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long)]
        baseline: bool,
    },
    /// Evaluate a classifier checkpoint
    EvalCls {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// all | train | val | test (splits re-derived from the seed)
        #[arg(long, default_value = "all")]
        split: String,
    },
    /// Evaluate a segmenter checkpoint
    EvalSeg {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "all")]
        split: String,
        /// Boundary-match tolerance in pixels (default: 0.75% of diagonal)
        #[arg(long)]
        bf_tolerance: Option<f64>,
    },
    /// Two-stage prediction on one image
    Predict {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        cls_ckpt: PathBuf,
        #[arg(long)]
        seg_ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export penultimate-layer features projected on two principal components
    Features {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference verification of every layer's gradients
    Gradcheck,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                eprint!("{e}");
                return ExitCode::from(1);
            }
            // --help / --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn exit_code_for(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(core) = cause.downcast_ref::<covct_core::Error>() {
            return match core.category() {
                ErrorCategory::Usage => 1,
                ErrorCategory::Data => 2,
                ErrorCategory::Numerical => 3,
            };
        }
    }
    2
}

/// Dispatch a generic runner on the resolved precision.
macro_rules! with_precision {
    ($common:expr, $f:ident $(, $arg:expr)*) => {{
        let cfg = $common.resolve()?;
        match cfg.train.precision {
            Precision::F32 => $f::<f32>(&cfg $(, $arg)*),
            Precision::F64 => $f::<f64>(&cfg $(, $arg)*),
        }
    }};
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.cmd {
        Command::Synth { common, out, count } => synth(&common, &out, count),
        Command::Enhance {
            common,
            image,
            manifest,
            out,
        } => enhance(&common, image.as_deref(), manifest.as_deref(), &out),
        Command::TrainCls {
            common,
            manifest,
            out,
        } => with_precision!(common, train_cls, &manifest, &out),
        Command::TrainSeg {
            common,
            manifest,
            out,
            baseline,
        } => with_precision!(common, train_seg, &manifest, &out, baseline),
        Command::Cv {
            common,
            manifest,
            out,
            task,
            k,
            baseline,
        } => with_precision!(common, cv, &manifest, &out, &task, k, baseline),
        Command::EvalCls {
            common,
            manifest,
            ckpt,
            out,
            split,
        } => with_precision!(common, eval_cls, &manifest, &ckpt, &out, &split),
        Command::EvalSeg {
            common,
            manifest,
            ckpt,
            out,
            split,
            bf_tolerance,
        } => with_precision!(common, eval_seg, &manifest, &ckpt, &out, &split, bf_tolerance),
        Command::Predict {
            common,
            image,
            cls_ckpt,
            seg_ckpt,
            out,
        } => with_precision!(common, predict, &image, &cls_ckpt, &seg_ckpt, &out),
        Command::Features {
            common,
            manifest,
            ckpt,
            out,
        } => with_precision!(common, features, &manifest, &ckpt, &out),
        Command::Gradcheck => gradcheck_cmd(),
    }
}



// ── synth ───────────────────────────────────────────────────────────────

fn synth(common: &CommonArgs, out: &Path, count: usize) -> anyhow::Result<ExitCode> {
    let cfg = common.resolve()?;
    let (manifest, records) = generate_phantoms(&cfg.phantom, count, out)?;
    config::write_stamp(out, "synth", &cfg)?;
    println!(
        "wrote {} samples ({} infected) and {}",
        records.len(),
        records
            .iter()
            .filter(|r| r.class_label == Some(ClassLabel::Infected))
            .count(),
        manifest.display()
    );
    Ok(ExitCode::SUCCESS)
}

// ── enhance ─────────────────────────────────────────────────────────────

fn enhance(
    common: &CommonArgs,
    image: Option<&Path>,
    manifest: Option<&Path>,
    out: &Path,
) -> anyhow::Result<ExitCode> {
    let cfg = common.resolve()?;
    let enhance_one = |path: &Path, dest: &Path| -> anyhow::Result<()> {
        let rec = SampleRecord {
            image_path: path.to_path_buf(),
            class_label: None,
            mask_path: None,
            split: None,
        };
        let (native, _) = load_sample_native::<f32>(&rec, true)?;
        let enhanced = enhance_image(&native)?;
        write_gray_png(dest, &enhanced)?;
        Ok(())
    };
    match (image, manifest) {
        (Some(img), None) => {
            enhance_one(img, out)?;
            println!("wrote {}", out.display());
        }
        (None, Some(man)) => {
            let records = parse_manifest(man)?;
            std::fs::create_dir_all(out)?;
            for r in &records {
                let stem = r
                    .image_path
                    .file_stem()
                    .map(|s| s.to_string_lossy().to_string())
                    .unwrap_or_else(|| "image".into());
                enhance_one(&r.image_path, &out.join(format!("enh_{stem}.png")))?;
            }
            config::write_stamp(out, "enhance", &cfg)?;
            println!("wrote {} enhanced images to {}", records.len(), out.display());
        }
        _ => bail!(covct_core::Error::InvalidParameter(
            "enhance needs exactly one of --image or --manifest".into()
        )),
    }
    Ok(ExitCode::SUCCESS)
}

// ── shared plumbing ─────────────────────────────────────────────────────

#[derive(Serialize)]
struct ReportEnvelope<'a, R: Serialize> {
    command: &'a str,
    seed: u64,
    config: &'a RunConfig,
    report: R,
}

fn write_report<R: Serialize>(
    dir: &Path,
    command: &str,
    cfg: &RunConfig,
    report: R,
) -> anyhow::Result<()> {
    let envelope = ReportEnvelope {
        command,
        seed: cfg.train.seed,
        config: cfg,
        report,
    };
    std::fs::write(
        dir.join("report.json"),
        serde_json::to_string_pretty(&envelope)?,
    )?;
    Ok(())
}

#[derive(Serialize)]
struct SplitExport<'a> {
    plan: &'a SplitPlan,
    images: Vec<String>,
}

fn write_split(dir: &Path, plan: &SplitPlan, records: &[SampleRecord]) -> anyhow::Result<()> {
    let export = SplitExport {
        plan,
        images: records
            .iter()
            .map(|r| r.image_path.display().to_string())
            .collect(),
    };
    std::fs::write(dir.join("split.json"), serde_json::to_string_pretty(&export)?)?;
    Ok(())
}

/// Records usable for segmentation: mask present, not labeled healthy.
fn seg_records(records: &[SampleRecord]) -> Vec<SampleRecord> {
    records
        .iter()
        .filter(|r| r.mask_path.is_some() && r.class_label != Some(ClassLabel::Healthy))
        .cloned()
        .collect()
}

fn select_split<'a>(plan: &'a SplitPlan, which: &str) -> anyhow::Result<Vec<usize>> {
    Ok(match which {
        "train" => plan.train.clone(),
        "val" => plan.val.clone(),
        "test" => plan.test.clone(),
        "all" => {
            let mut all: Vec<usize> =
                plan.train.iter().chain(&plan.val).chain(&plan.test).copied().collect();
            all.sort_unstable();
            all
        }
        other => bail!(covct_core::Error::InvalidParameter(format!(
            "unknown split `{other}` (expected all|train|val|test)"
        ))),
    })
}

fn print_warnings(plan: &SplitPlan) {
    for w in &plan.warnings {
        eprintln!("warning: {w}");
    }
}

// ── train-cls ───────────────────────────────────────────────────────────

fn train_cls<T: Scalar>(cfg: &RunConfig, manifest: &Path, out: &Path) -> anyhow::Result<ExitCode> {
    let records = parse_manifest(manifest)?;
    let plan = make_splits(&records, cfg.train.seed, 5)?;
    print_warnings(&plan);
    let ds = load_classifier_dataset::<T>(&records, cfg.classifier.input)?;
    let outcome = train_classifier(&ds, &plan, &cfg.classifier, &cfg.train)?;
    std::fs::create_dir_all(out)?;
    save_checkpoint(&outcome.model, &out.join("model.cvrs"))?;
    std::fs::write(out.join("history.csv"), outcome.history.to_csv())?;
    write_split(out, &plan, &records)?;
    config::write_stamp(out, "train-cls", cfg)?;

    if !plan.test.is_empty() {
        let scores = classifier_scores(&outcome.model, &ds, &plan.test)?;
        let truths: Vec<bool> = plan.test.iter().map(|&i| ds.labels[i] == 1).collect();
        let report = evaluate_classification(
            &scores,
            &truths,
            seeds::derive(cfg.train.seed, "eval-auc", 0),
        )?;
        let report = MetricsReport {
            classification: Some(report),
            segmentation: None,
        };
        std::fs::write(out.join("report.csv"), report.to_flat_csv())?;
        if let Some(pr) = report.pr_csv() {
            std::fs::write(out.join("pr.csv"), pr)?;
        }
        write_report(out, "train-cls", cfg, &report)?;
        if let Some(c) = &report.classification {
            println!(
                "test accuracy {:.4} mcc {:.4} auc {:.4}; best val {:.4} at epoch {}",
                c.metrics.accuracy, c.metrics.mcc, c.pr_auc, outcome.best_metric, outcome.best_epoch
            );
        }
    } else {
        println!(
            "best val metric {:.4} at epoch {}",
            outcome.best_metric, outcome.best_epoch
        );
    }
    println!("wrote {}", out.join("model.cvrs").display());
    Ok(ExitCode::SUCCESS)
}

// ── train-seg ───────────────────────────────────────────────────────────

fn train_seg<T: Scalar>(
    cfg: &RunConfig,
    manifest: &Path,
    out: &Path,
    baseline: bool,
) -> anyhow::Result<ExitCode> {
    let records = seg_records(&parse_manifest(manifest)?);
    if records.is_empty() {
        bail!(covct_core::Error::Data(
            "no segmentation-ready records (need masks on non-healthy samples)".into()
        ));
    }
    let plan = make_splits(&records, cfg.train.seed, 5)?;
    print_warnings(&plan);
    let ds = load_segmenter_dataset::<T>(&records, cfg.segmenter.input)?;
    let outcome = train_segmenter(&ds, &plan, &cfg.segmenter, baseline, &cfg.train)?;
    std::fs::create_dir_all(out)?;
    save_checkpoint(&outcome.model, &out.join("model.cvrs"))?;
    std::fs::write(out.join("history.csv"), outcome.history.to_csv())?;
    write_split(out, &plan, &records)?;
    config::write_stamp(out, "train-seg", cfg)?;

    if !plan.test.is_empty() {
        let mut acc = SegAccumulator::new();
        for &i in &plan.test {
            let pred = predict_mask(&outcome.model, &ds.images[i])?;
            let gt = Mask::from_tensor(&ds.masks[i])?;
            acc.add_image(&pred, &gt, None)?;
        }
        let report = MetricsReport {
            classification: None,
            segmentation: Some(acc.finish()?),
        };
        std::fs::write(out.join("report.csv"), report.to_flat_csv())?;
        write_report(out, "train-seg", cfg, &report)?;
        if let Some(s) = &report.segmentation {
            println!(
                "test m_iou {:.4} g_acc {:.4}; best val dice {:.4} at epoch {}",
                s.m_iou, s.g_acc, outcome.best_metric, outcome.best_epoch
            );
        }
    } else {
        println!(
            "best val dice {:.4} at epoch {}",
            outcome.best_metric, outcome.best_epoch
        );
    }
    println!("wrote {}", out.join("model.cvrs").display());
    Ok(ExitCode::SUCCESS)
}

// ── cv ──────────────────────────────────────────────────────────────────

fn cv<T: Scalar>(
    cfg: &RunConfig,
    manifest: &Path,
    out: &Path,
    task: &str,
    k: usize,
    baseline: bool,
) -> anyhow::Result<ExitCode> {
    std::fs::create_dir_all(out)?;
    let summary = match task {
        "cls" => {
            let records = parse_manifest(manifest)?;
            let plan = make_splits(&records, cfg.train.seed, k)?;
            print_warnings(&plan);
            let ds = load_classifier_dataset::<T>(&records, cfg.classifier.input)?;
            cross_validate_classifier(&ds, &plan, &cfg.classifier, &cfg.train)?
        }
        "seg" => {
            let records = seg_records(&parse_manifest(manifest)?);
            let plan = make_splits(&records, cfg.train.seed, k)?;
            print_warnings(&plan);
            let ds = load_segmenter_dataset::<T>(&records, cfg.segmenter.input)?;
            cross_validate_segmenter(&ds, &plan, &cfg.segmenter, baseline, &cfg.train)?
        }
        other => bail!(covct_core::Error::InvalidParameter(format!(
            "unknown task `{other}` (expected cls|seg)"
        ))),
    };
    write_report(out, "cv", cfg, &summary)?;
    config::write_stamp(out, "cv", cfg)?;
    for (metric, mean) in &summary.mean {
        println!(
            "{metric}: mean {:.4} stddev {:.4}",
            mean,
            summary.stddev.get(metric).copied().unwrap_or(0.0)
        );
    }
    Ok(ExitCode::SUCCESS)
}

// ── eval ────────────────────────────────────────────────────────────────

fn eval_cls<T: Scalar>(
    cfg: &RunConfig,
    manifest: &Path,
    ckpt: &Path,
    out: &Path,
    split: &str,
) -> anyhow::Result<ExitCode> {
    let records = parse_manifest(manifest)?;
    let ids = if split == "all" {
        (0..records.len()).collect()
    } else {
        let plan = make_splits(&records, cfg.train.seed, 5)?;
        select_split(&plan, split)?
    };
    let model = load_checkpoint::<T>(ckpt)?;
    let input = (model.meta.input_shape[2], model.meta.input_shape[3]);
    let ds = load_classifier_dataset::<T>(&records, input)?;
    let scores = classifier_scores(&model, &ds, &ids)?;
    let truths: Vec<bool> = ids.iter().map(|&i| ds.labels[i] == 1).collect();
    let report = MetricsReport {
        classification: Some(evaluate_classification(
            &scores,
            &truths,
            seeds::derive(cfg.train.seed, "eval-auc", 0),
        )?),
        segmentation: None,
    };
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("report.csv"), report.to_flat_csv())?;
    if let Some(pr) = report.pr_csv() {
        std::fs::write(out.join("pr.csv"), pr)?;
    }
    write_report(out, "eval-cls", cfg, &report)?;
    config::write_stamp(out, "eval-cls", cfg)?;
    let c = report.classification.as_ref().unwrap();
    println!(
        "accuracy {:.4} [{:.4},{:.4}] mcc {:.4} auc {:.4} [{:.4},{:.4}] on {} samples",
        c.metrics.accuracy,
        c.accuracy_ci_low,
        c.accuracy_ci_high,
        c.metrics.mcc,
        c.pr_auc,
        c.auc_ci_low,
        c.auc_ci_high,
        ids.len()
    );
    Ok(ExitCode::SUCCESS)
}

fn eval_seg<T: Scalar>(
    cfg: &RunConfig,
    manifest: &Path,
    ckpt: &Path,
    out: &Path,
    split: &str,
    bf_tolerance: Option<f64>,
) -> anyhow::Result<ExitCode> {
    let records: Vec<SampleRecord> = parse_manifest(manifest)?
        .into_iter()
        .filter(|r| r.mask_path.is_some())
        .collect();
    if records.is_empty() {
        bail!(covct_core::Error::Data("no mask-bearing records to evaluate".into()));
    }
    let ids: Vec<usize> = if split == "all" {
        (0..records.len()).collect()
    } else {
        let plan = make_splits(&records, cfg.train.seed, 5)?;
        select_split(&plan, split)?
    };
    let model = load_checkpoint::<T>(ckpt)?;
    let input = (model.meta.input_shape[2], model.meta.input_shape[3]);
    let ds = load_segmenter_dataset::<T>(&records, input)?;
    let mut acc = SegAccumulator::new();
    for &i in &ids {
        let pred = predict_mask(&model, &ds.images[i])?;
        let gt = Mask::from_tensor(&ds.masks[i])?;
        acc.add_image(&pred, &gt, bf_tolerance)?;
    }
    let report = MetricsReport {
        classification: None,
        segmentation: Some(acc.finish()?),
    };
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("report.csv"), report.to_flat_csv())?;
    write_report(out, "eval-seg", cfg, &report)?;
    config::write_stamp(out, "eval-seg", cfg)?;
    let s = report.segmentation.as_ref().unwrap();
    println!(
        "g_acc {:.4} m_acc {:.4} m_iou {:.4} w_iou {:.4} m_bfs {:.4} on {} images",
        s.g_acc, s.m_acc, s.m_iou, s.w_iou, s.m_bfs, s.images
    );
    Ok(ExitCode::SUCCESS)
}

// ── predict ─────────────────────────────────────────────────────────────

fn predict<T: Scalar>(
    cfg: &RunConfig,
    image: &Path,
    cls_ckpt: &Path,
    seg_ckpt: &Path,
    out: &Path,
) -> anyhow::Result<ExitCode> {
    let cls = load_checkpoint::<T>(cls_ckpt)?;
    let seg = load_checkpoint::<T>(seg_ckpt)?;
    let rec = SampleRecord {
        image_path: image.to_path_buf(),
        class_label: None,
        mask_path: None,
        split: None,
    };
    let (native, _) = load_sample_native::<T>(&rec, true)?;
    let prediction = two_stage_predict(&cls, &seg, &native)?;
    std::fs::create_dir_all(out)?;
    write_mask_png(&out.join("mask.png"), &prediction.mask)?;
    #[derive(Serialize)]
    struct PredictionOut<'a> {
        image: String,
        label: String,
        p_infected: f64,
        segmenter_ran: bool,
        seed: u64,
        config: &'a RunConfig,
    }
    std::fs::write(
        out.join("prediction.json"),
        serde_json::to_string_pretty(&PredictionOut {
            image: image.display().to_string(),
            label: prediction.label.to_string(),
            p_infected: prediction.p_infected,
            segmenter_ran: prediction.segmenter_ran,
            seed: cfg.train.seed,
            config: cfg,
        })?,
    )?;
    config::write_stamp(out, "predict", cfg)?;
    println!(
        "{} (p_infected {:.4}); wrote {}",
        prediction.label,
        prediction.p_infected,
        out.join("mask.png").display()
    );
    Ok(ExitCode::SUCCESS)
}

// ── features ────────────────────────────────────────────────────────────

fn features<T: Scalar>(
    cfg: &RunConfig,
    manifest: &Path,
    ckpt: &Path,
    out: &Path,
) -> anyhow::Result<ExitCode> {
    let records = parse_manifest(manifest)?;
    let model = load_checkpoint::<T>(ckpt)?;
    let input = (model.meta.input_shape[2], model.meta.input_shape[3]);
    let mut samples = Vec::new();
    for r in &records {
        let (native, _) = load_sample_native::<T>(r, true)?;
        let img = covct_core::nets::pipeline::classifier_input(&native, input)?;
        let label = r
            .class_label
            .map(|l| l.to_string())
            .unwrap_or_else(|| "unlabeled".into());
        let id = r
            .image_path
            .file_stem()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_default();
        samples.push((id, label, img));
    }
    let export = extract_features(&model, &samples)?;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("features.csv"), export.to_csv())?;
    #[derive(Serialize)]
    struct FeatureMeta<'a> {
        explained_variance: (f64, f64),
        samples: usize,
        seed: u64,
        config: &'a RunConfig,
    }
    std::fs::write(
        out.join("features.json"),
        serde_json::to_string_pretty(&FeatureMeta {
            explained_variance: export.explained,
            samples: export.rows.len(),
            seed: cfg.train.seed,
            config: cfg,
        })?,
    )?;
    config::write_stamp(out, "features", cfg)?;
    println!(
        "wrote {} rows; explained variance pc1 {:.4} pc2 {:.4}",
        export.rows.len(),
        export.explained.0,
        export.explained.1
    );
    Ok(ExitCode::SUCCESS)
}

// ── gradcheck ───────────────────────────────────────────────────────────

fn gradcheck_cmd() -> anyhow::Result<ExitCode> {
    let checks = gradcheck::run_full_suite()?;
    let mut all_ok = true;
    for c in &checks {
        println!(
            "{}: max_rel_err {:.3e} over {} checks [{}]",
            c.name,
            c.max_rel_err,
            c.checks,
            if c.passed() { "ok" } else { "FAIL" }
        );
        all_ok &= c.passed();
    }
    if !all_ok {
        eprintln!("error: gradient checks exceeded tolerance {:.0e}", gradcheck::GRAD_TOLERANCE);
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}
