//! One function per subcommand. Each returns `Result<()>`; exit-code
//! mapping lives in `main`.

use crate::plot;
use ecrl_core::augment::{augment, SubLabel};
use ecrl_core::checkpoint::load_checkpoint;
use ecrl_core::config::RunConfig;
use ecrl_core::data::{
    generate_dataset, read_features, read_manifest, DatasetManifest, QueryTokens, Sample,
    SegmentAnnotation, Split,
};
use ecrl_core::error::{Error, Result};
use ecrl_core::eval::{evaluate, ModelPredictor};
use ecrl_core::par::ExecMode;
use ecrl_core::rng::{derive_rng, PURPOSE_AUGMENT};
use ecrl_core::train::{grad_check_full_loss, logs_from_csv, logs_to_csv, train as run_train};
use std::fs;
use std::path::Path;

/// Default ranked-list sizes and IoU thresholds for reports.
const EVAL_N: [usize; 2] = [1, 5];
const EVAL_M: [f64; 3] = [0.3, 0.5, 0.7];

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Guess the split label from a manifest filename; the label is
/// informational only.
fn split_of(path: &Path) -> Split {
    match path.file_stem().and_then(|s| s.to_str()) {
        Some("train") => Split::Train,
        Some("val") => Split::Val,
        _ => Split::Test,
    }
}

fn load_split_samples(manifest: &DatasetManifest) -> Result<Vec<Sample>> {
    ecrl_core::data::load_samples(ExecMode::Parallel, manifest)
}

pub fn gen_data(cfg: &RunConfig, out: &Path, n: usize) -> Result<()> {
    ensure_dir(out)?;
    let splits = generate_dataset(&cfg.synth, n, (0.7, 0.1, 0.2), out)?;
    for m in splits.all() {
        println!(
            "{}: {} samples -> {}",
            m.split.name(),
            m.records.len(),
            out.join(format!("{}.tsv", m.split.name())).display()
        );
    }
    Ok(())
}

pub fn train(cfg: &RunConfig, data: &Path, out: &Path) -> Result<()> {
    let train_manifest = read_manifest(&data.join("train.tsv"), Split::Train)?;
    let val_manifest = read_manifest(&data.join("val.tsv"), Split::Val)?;
    let train_samples = load_split_samples(&train_manifest)?;
    let val_samples = load_split_samples(&val_manifest)?;

    let tcfg = cfg.train_config();
    println!("config_hash={:016x}", tcfg.config_hash);
    println!(
        "training {} epochs on {} samples ({} validation)",
        tcfg.epochs,
        train_samples.len(),
        val_samples.len()
    );

    ensure_dir(out)?;
    write_text(
        &out.join("config.resolved.txt"),
        &format!("# config_hash={:016x}\n{}", tcfg.config_hash, cfg.canonical_text()),
    )?;

    let outcome = run_train(&tcfg, ExecMode::Parallel, &train_samples, &val_samples, None)?;
    write_text(&out.join("train_log.csv"), &logs_to_csv(&outcome.logs))?;
    ecrl_core::checkpoint::save_checkpoint(&out.join("checkpoint.bin"), &outcome.final_record)?;
    ecrl_core::checkpoint::save_checkpoint(
        &out.join("checkpoint_best.bin"),
        &outcome.best_record,
    )?;

    if let Some(last) = outcome.logs.last() {
        println!(
            "final epoch {}: l_overall={:.6} val_r1_05={:.6}",
            last.epoch, last.l_overall, last.val_r1_05
        );
    }
    println!(
        "best val_r1_05={:.6} at epoch {}",
        outcome.best_val, outcome.best_epoch
    );

    // Final recall report on the validation split (train split when no
    // sample landed in validation, mirroring the trainer's fallback).
    let eval_samples = if val_samples.is_empty() { &train_samples } else { &val_samples };
    let predictor = ModelPredictor {
        params: outcome.final_record.params.clone(),
        refine: outcome.final_record.refine,
    };
    let report = evaluate(ExecMode::Parallel, &predictor, eval_samples, &EVAL_N, &EVAL_M)?;
    write_text(&out.join("val_report.csv"), &report.to_csv())?;
    print!("{}", report.to_csv());
    Ok(())
}

pub fn eval(checkpoint: &Path, data: &Path, report_path: &Path) -> Result<()> {
    let record = load_checkpoint(checkpoint)?;
    let manifest = read_manifest(data, split_of(data))?;
    let samples = load_split_samples(&manifest)?;
    let predictor = ModelPredictor { params: record.params, refine: record.refine };
    let report = evaluate(ExecMode::Parallel, &predictor, &samples, &EVAL_N, &EVAL_M)?;

    if let Some(dir) = report_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    write_text(report_path, &report.to_csv())?;
    let detail_path = report_path.with_extension("detail.csv");
    write_text(&detail_path, &report.detail_csv())?;
    print!("{}", report.to_csv());
    println!("detail -> {}", detail_path.display());
    Ok(())
}

fn label_name(l: SubLabel) -> &'static str {
    match l {
        SubLabel::Left => "LEFT",
        SubLabel::Seg => "SEG",
        SubLabel::Right => "RIGHT",
        SubLabel::Pad => "PAD",
    }
}

pub fn augment_preview(cfg: &RunConfig, data: &Path, id: &str, seed: u64) -> Result<()> {
    let manifest = read_manifest(data, split_of(data))?;
    let record = manifest
        .records
        .iter()
        .find(|r| r.id == id)
        .ok_or_else(|| Error::Input(format!("unknown sample id {id:?} in {}", data.display())))?;

    let features = read_features(&manifest.root.join(&record.path))?;
    let tokens = QueryTokens(record.tokens.clone());
    tokens.validate(cfg.synth.vocab_size, cfg.synth.max_query_len)?;
    let annotation = SegmentAnnotation { tau_s: record.tau_s, tau_e: record.tau_e };
    annotation.validate(features.num_frames())?;

    let mut rng = derive_rng(seed, &[PURPOSE_AUGMENT]);
    let aug = augment(&features, &annotation, &cfg.train.augment, &mut rng)?;
    let p = &aug.params;
    println!(
        "# id={id} seed={seed} r_left={:.6} r_seg={:.6} r_right={:.6}",
        p.r_left, p.r_seg, p.r_right
    );
    println!(
        "# tau_s'={} tau_e'={} (original {}..{})",
        aug.annotation.tau_s, aug.annotation.tau_e, annotation.tau_s, annotation.tau_e
    );
    println!("t\ti'\tsub_label");
    for t in 0..aug.tmap.len() {
        println!("{t}\t{}\t{}", aug.tmap.origin(t), label_name(aug.tmap.label(t)));
    }
    Ok(())
}

pub fn grad_check(cfg: &RunConfig, corrupt: bool) -> Result<()> {
    // Contract dimensions: T=6, N=4, D=8, H=4, checked in 64-bit.
    let tcfg = ecrl_core::train::TrainConfig {
        feat_dim: 8,
        hidden: 4,
        vocab_size: 16,
        ..cfg.train.clone()
    };
    let factor = corrupt.then_some(1.02);
    let report = grad_check_full_loss(6, 4, &tcfg, 1e-4, factor, ExecMode::Parallel)?;
    println!("{report}");
    if report.passed() {
        Ok(())
    } else {
        let mut named: Vec<String> = report
            .failures
            .iter()
            .map(|f| format!("{}[{}] rel_err={:.3e}", f.name, f.offset, f.rel_err))
            .collect();
        named.truncate(20);
        Err(Error::GradCheck(format!(
            "{} of {} coordinates failed: {}",
            report.failures.len(),
            report.entries_checked,
            named.join(", ")
        )))
    }
}

pub fn report(log: &Path, out: &Path) -> Result<()> {
    let text = fs::read_to_string(log).map_err(|e| Error::io(log, e))?;
    let logs = logs_from_csv(&text)?;
    ensure_dir(out)?;

    plot::loss_curves(&logs, &out.join("loss_curve.svg"))?;
    plot::recall_curve(&logs, &out.join("recall_curve.svg"))?;

    let last = logs.last().expect("parser rejects empty logs");
    let best = logs
        .iter()
        .enumerate()
        .max_by(|(ia, a), (ib, b)| {
            a.val_r1_05
                .partial_cmp(&b.val_r1_05)
                .expect("parsed metrics are finite")
                // Ties go to the earliest epoch.
                .then(ib.cmp(ia))
        })
        .map(|(_, l)| l)
        .expect("nonempty");
    let min_loss = logs
        .iter()
        .enumerate()
        .min_by(|(ia, a), (ib, b)| {
            a.l_overall
                .partial_cmp(&b.l_overall)
                .expect("parsed metrics are finite")
                .then(ia.cmp(ib))
        })
        .map(|(_, l)| l)
        .expect("nonempty");

    let summary = format!(
        "epochs: {}\n\
         final epoch {}: l_overall={:.6} l_tsg_aug={:.6} l_tsg_orig={:.6} l_cons={:.6} val_r1_05={:.6}\n\
         best val_r1_05={:.6} at epoch {}\n\
         min l_overall={:.6} at epoch {}\n",
        logs.len(),
        last.epoch,
        last.l_overall,
        last.l_tsg_aug,
        last.l_tsg_orig,
        last.l_cons,
        last.val_r1_05,
        best.val_r1_05,
        best.epoch,
        min_loss.l_overall,
        min_loss.epoch,
    );
    write_text(&out.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}
