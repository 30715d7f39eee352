//! The training loop: per epoch, each original sample is paired with a
//! freshly augmented variant, both streams run through the shared
//! network on one tape, and batch-averaged gradients feed Adam.
//!
//! Randomness is derived per (seed, epoch, sample), so results do not
//! depend on execution order and a resumed run continues exactly where
//! the checkpoint left off.

use crate::augment::{augment, AugmentConfig};
use crate::checkpoint::CheckpointRecord;
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::eval::{evaluate, ModelPredictor};
use crate::losses::{
    grounding_loss, overall_loss, sscl_total, ConsistencyConfig, GroundingLossConfig,
    LossBreakdown,
};
use crate::model::{forward_stream, BoundParams, ModelParams, SelfRefineConfig};
use crate::par::{self, ExecMode};
use crate::rng::{derive_rng, PURPOSE_AUGMENT};
use crate::tensor::{adam_step, grad_check, GradCheckReport, Scalar, Tape, Tensor, TensorId};
use std::fmt::Write as _;

/// All the knobs of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Sample pairs per optimizer step.
    pub batch_size: usize,
    pub lr: f64,
    /// Weight of the consistency loss; zero skips it entirely.
    pub lambda: f64,
    pub seed: u64,
    pub feat_dim: usize,
    pub hidden: usize,
    pub vocab_size: u32,
    pub refine: SelfRefineConfig,
    pub consistency: ConsistencyConfig,
    pub grounding: GroundingLossConfig,
    pub augment: AugmentConfig,
    /// Draw one augmentation per sample and reuse it every epoch,
    /// instead of resampling per epoch.
    pub fixed_augmentation: bool,
    /// Provenance hash recorded into checkpoints.
    pub config_hash: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 16,
            lr: 1e-4,
            lambda: 5.0,
            seed: 42,
            feat_dim: 32,
            hidden: 16,
            vocab_size: 64,
            refine: SelfRefineConfig::default(),
            consistency: ConsistencyConfig::default(),
            grounding: GroundingLossConfig::default(),
            augment: AugmentConfig::default(),
            fixed_augmentation: false,
            config_hash: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be nonnegative, got {}", self.lambda)));
        }
        self.refine.validate()?;
        self.consistency.validate()?;
        self.augment.validate()?;
        Ok(())
    }
}

/// One CSV row of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: u32,
    pub l_tsg_aug: f64,
    pub l_tsg_orig: f64,
    pub l_cons: f64,
    pub l_overall: f64,
    pub val_r1_05: f64,
}

pub const TRAIN_LOG_HEADER: &str = "epoch,l_tsg_aug,l_tsg_orig,l_cons,l_overall,val_r1_05";

pub fn logs_to_csv(logs: &[EpochLog]) -> String {
    let mut out = String::from(TRAIN_LOG_HEADER);
    out.push('\n');
    for l in logs {
        writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            l.epoch, l.l_tsg_aug, l.l_tsg_orig, l.l_cons, l.l_overall, l.val_r1_05
        )
        .expect("string write");
    }
    out
}

/// Parse a training log back from CSV. Errors carry the offending line
/// number; a log with no data rows is an error.
pub fn logs_from_csv(text: &str) -> Result<Vec<EpochLog>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == TRAIN_LOG_HEADER => {}
        Some((_, h)) => {
            return Err(Error::Input(format!(
                "line 1: expected header {TRAIN_LOG_HEADER:?}, got {h:?}"
            )))
        }
        None => return Err(Error::Input("empty training log".into())),
    }
    let mut logs = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::Input(format!(
                "line {lineno}: expected 6 fields, got {}",
                fields.len()
            )));
        }
        let num = |i: usize| -> Result<f64> {
            fields[i].trim().parse().map_err(|_| {
                Error::Input(format!("line {lineno}: bad number {:?}", fields[i]))
            })
        };
        let epoch: u32 = fields[0].trim().parse().map_err(|_| {
            Error::Input(format!("line {lineno}: bad epoch {:?}", fields[0]))
        })?;
        logs.push(EpochLog {
            epoch,
            l_tsg_aug: num(1)?,
            l_tsg_orig: num(2)?,
            l_cons: num(3)?,
            l_overall: num(4)?,
            val_r1_05: num(5)?,
        });
    }
    if logs.is_empty() {
        return Err(Error::Input("training log has no data rows".into()));
    }
    Ok(logs)
}

/// Final state plus the best-by-validation snapshot and the full log.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub final_record: CheckpointRecord,
    pub best_record: CheckpointRecord,
    pub best_epoch: u32,
    pub best_val: f64,
    pub logs: Vec<EpochLog>,
}

/// Build the full objective for one (original, augmented) pair on the
/// given tape and report the loss pieces.
pub fn pair_loss<S: Scalar>(
    tape: &mut Tape<S>,
    bound: &BoundParams,
    sample: &Sample,
    augmented: &crate::augment::AugmentedSample,
    cfg: &TrainConfig,
) -> Result<(TensorId, LossBreakdown)> {
    let orig_features = sample.features.frames().cast::<S>();
    let aug_features = augmented.features.frames().cast::<S>();
    let orig = forward_stream(tape, &orig_features, &sample.tokens.0, bound, &cfg.refine)?;
    let aug = forward_stream(tape, &aug_features, &sample.tokens.0, bound, &cfg.refine)?;
    let l_aug = grounding_loss(tape, &aug.scores, &augmented.annotation, &cfg.grounding)?;
    let l_orig = grounding_loss(tape, &orig.scores, &sample.annotation, &cfg.grounding)?;
    let l_cons = if cfg.lambda == 0.0 {
        tape.constant(&Tensor::scalar(S::zero()))
    } else {
        sscl_total(
            tape,
            aug.fused,
            orig.fused,
            &augmented.tmap,
            &sample.annotation,
            &cfg.consistency,
        )?
    };
    overall_loss(tape, l_aug, l_orig, l_cons, cfg.lambda)
}

/// Gradients for one sample pair, flattened in canonical entry order.
fn sample_gradients(
    params: &ModelParams<f32>,
    sample: &Sample,
    cfg: &TrainConfig,
    epoch: u32,
    idx: usize,
) -> Result<(Vec<Tensor<f32>>, LossBreakdown)> {
    let epoch_tag = if cfg.fixed_augmentation { 1 } else { epoch as u64 };
    let mut rng = derive_rng(cfg.seed, &[PURPOSE_AUGMENT, epoch_tag, idx as u64]);
    let augmented = augment(&sample.features, &sample.annotation, &cfg.augment, &mut rng)?;
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let (total, breakdown) = pair_loss(&mut tape, &bound, sample, &augmented, cfg)
        .map_err(|e| annotate_abort(e, epoch, &sample.id))?;
    if !breakdown.l_overall.is_finite() {
        return Err(Error::TrainingAbort(format!(
            "non-finite loss at epoch {epoch} on sample {}: {breakdown:?}",
            sample.id
        )));
    }
    tape.backward(total)?;
    let grads = bound.ids().into_iter().map(|id| tape.grad_or_zero(id)).collect();
    Ok((grads, breakdown))
}

fn annotate_abort(e: Error, epoch: u32, id: &str) -> Error {
    match e {
        Error::TrainingAbort(msg) => {
            Error::TrainingAbort(format!("epoch {epoch}, sample {id}: {msg}"))
        }
        other => other,
    }
}

/// Per-sample gradients and loss breakdowns for one batch. Samples are
/// independent given the stateless augmentation RNG, so the map runs in
/// the requested execution mode; `base` is the batch's starting index
/// within the epoch and keys each sample's augmentation stream.
pub fn batch_gradients(
    mode: ExecMode,
    params: &ModelParams<f32>,
    batch: &[Sample],
    cfg: &TrainConfig,
    epoch: u32,
    base: usize,
) -> Result<Vec<(Vec<Tensor<f32>>, LossBreakdown)>> {
    par::try_map_indexed(mode, batch, |i, sample| {
        sample_gradients(params, sample, cfg, epoch, base + i)
    })
}

/// Validation recall R@1,IoU=0.5; falls back to the training set when
/// no validation samples exist (tiny smoke datasets).
fn validation_recall(
    mode: ExecMode,
    params: &ModelParams<f32>,
    refine: &SelfRefineConfig,
    val: &[Sample],
    train: &[Sample],
) -> Result<f64> {
    let samples = if val.is_empty() { train } else { val };
    let predictor = ModelPredictor { params: params.clone(), refine: *refine };
    let report = evaluate(mode, &predictor, samples, &[1], &[0.5])?;
    Ok(report.recall(1, 0.5).expect("requested cell"))
}

/// Run (or resume) training. `resume` must carry the same config hash;
/// epochs already completed in it are skipped.
pub fn train(
    cfg: &TrainConfig,
    mode: ExecMode,
    train_samples: &[Sample],
    val_samples: &[Sample],
    resume: Option<CheckpointRecord>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_samples.is_empty() {
        return Err(Error::Input("no training samples".into()));
    }
    for s in train_samples {
        if s.features.feat_dim() != cfg.feat_dim {
            return Err(Error::Input(format!(
                "sample {} has feature width {}, config says {}",
                s.id,
                s.features.feat_dim(),
                cfg.feat_dim
            )));
        }
        s.tokens.validate(cfg.vocab_size, usize::MAX)?;
    }

    let mut record = match resume {
        Some(rec) => {
            if rec.config_hash != cfg.config_hash {
                return Err(Error::Checkpoint(format!(
                    "resume config hash {:#x} does not match current {:#x}",
                    rec.config_hash, cfg.config_hash
                )));
            }
            if rec.params.feat_dim() != cfg.feat_dim
                || rec.params.hidden() != cfg.hidden
                || rec.params.vocab_size() != cfg.vocab_size
            {
                return Err(Error::Checkpoint("resume model dims differ from config".into()));
            }
            rec
        }
        None => CheckpointRecord::fresh(
            ModelParams::init(cfg.feat_dim, cfg.hidden, cfg.vocab_size, cfg.seed)?,
            cfg.refine,
            cfg.config_hash,
        ),
    };

    let mut logs = Vec::new();
    let mut best_record = record.clone();
    let mut best_val = f64::NEG_INFINITY;
    let mut best_epoch = record.epoch;

    let start_epoch = record.epoch + 1;
    let end_epoch = cfg.epochs as u32;
    for epoch in start_epoch..=end_epoch {
        let mut sums = (0.0, 0.0, 0.0, 0.0);
        for (batch_idx, batch) in train_samples.chunks(cfg.batch_size).enumerate() {
            let base = batch_idx * cfg.batch_size;
            let per_sample = batch_gradients(mode, &record.params, batch, cfg, epoch, base)?;

            // Deterministic reduction in sample order.
            let mut acc: Vec<Tensor<f32>> = per_sample[0].0.clone();
            for (grads, _) in per_sample.iter().skip(1) {
                for (a, g) in acc.iter_mut().zip(grads) {
                    for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
                        *x += *y;
                    }
                }
            }
            let scale = 1.0 / per_sample.len() as f32;
            for t in acc.iter_mut() {
                for x in t.data_mut() {
                    *x *= scale;
                }
            }

            for (_, b) in &per_sample {
                sums.0 += b.l_tsg_aug;
                sums.1 += b.l_tsg_orig;
                sums.2 += b.l_cons;
                sums.3 += b.l_overall;
            }

            record.adam_t += 1;
            for (st, ((_, p), g)) in record
                .moments
                .iter_mut()
                .zip(record.params.entries_mut().into_iter().zip(&acc))
            {
                st.next_step();
                adam_step(p, g, st, cfg.lr)?;
            }
        }
        record.epoch = epoch;

        if record.params.entries().iter().any(|(_, t)| !t.all_finite()) {
            return Err(Error::TrainingAbort(format!(
                "parameters became non-finite after epoch {epoch}"
            )));
        }
        let n = train_samples.len() as f64;
        let val = validation_recall(mode, &record.params, &cfg.refine, val_samples, train_samples)
            .map_err(|e| match e {
                // Finite but exploded parameters can still put the
                // predictor out of range; that is divergence, not an
                // evaluation bug.
                Error::Contract(msg) => {
                    Error::TrainingAbort(format!("epoch {epoch}: validation failed: {msg}"))
                }
                other => other,
            })?;
        logs.push(EpochLog {
            epoch,
            l_tsg_aug: sums.0 / n,
            l_tsg_orig: sums.1 / n,
            l_cons: sums.2 / n,
            l_overall: sums.3 / n,
            val_r1_05: val,
        });
        if val > best_val {
            best_val = val;
            best_epoch = epoch;
            best_record = record.clone();
        }
    }

    if best_val == f64::NEG_INFINITY {
        // Resumed past the end: nothing ran, best is the final state.
        best_val = validation_recall(mode, &record.params, &cfg.refine, val_samples, train_samples)?;
        best_epoch = record.epoch;
        best_record = record.clone();
    }
    Ok(TrainOutcome {
        final_record: record,
        best_record,
        best_epoch,
        best_val,
        logs,
    })
}

/// Check every parameter gradient of the full objective against central
/// finite differences on a synthetic instance of the given size, in
/// 64-bit precision. `corrupt` scales one matmul backward rule to prove
/// the check catches planted faults.
pub fn grad_check_full_loss(
    t: usize,
    n_tokens: usize,
    cfg: &TrainConfig,
    tolerance: f64,
    corrupt: Option<f64>,
    mode: ExecMode,
) -> Result<GradCheckReport> {
    use crate::data::{FeatureSequence, QueryTokens, SegmentAnnotation};

    let (d, h, vocab) = (cfg.feat_dim, cfg.hidden, cfg.vocab_size);
    cfg.validate()?;

    let mut rng = derive_rng(777, &[PURPOSE_AUGMENT, 0]);
    let mut rng_feat = derive_rng(777, &[1, 2]);
    let features = Tensor::<f32>::randn(t, d, 1.0, &mut rng_feat);
    let tau_s = t / 4;
    let tau_e = (3 * t) / 4;
    let sample = Sample {
        id: "gradcheck".into(),
        features: FeatureSequence::new(features)?,
        tokens: QueryTokens((0..n_tokens as u32).map(|k| 1 + (k % (vocab - 1))).collect()),
        annotation: SegmentAnnotation { tau_s, tau_e },
    };
    let augmented = augment(&sample.features, &sample.annotation, &cfg.augment, &mut rng)?;

    let params = ModelParams::<f64>::init(d, h, vocab, 12345)?;
    let flat = params.flatten();
    let segments = params.segments();

    // Analytic pass (optionally with the planted matmul fault).
    let analytic = {
        let mut tape = Tape::<f64>::new();
        if let Some(factor) = corrupt {
            tape.corrupt_matmul_gradient(factor);
        }
        let bound = params.bind(&mut tape);
        let (total, _) = pair_loss(&mut tape, &bound, &sample, &augmented, cfg)?;
        tape.backward(total)?;
        let mut out = Vec::with_capacity(flat.len());
        for id in bound.ids() {
            out.extend(tape.grad_or_zero(id).to_f64_vec());
        }
        out
    };

    let template = params.clone();
    let loss_fn = move |theta: &[f64]| -> Result<f64> {
        let p = template.unflatten(theta)?;
        let mut tape = Tape::<f64>::new();
        let bound = p.bind(&mut tape);
        let (total, _) = pair_loss(&mut tape, &bound, &sample, &augmented, cfg)?;
        Ok(tape.value(total).item()?)
    };
    grad_check(mode, &flat, &analytic, &segments, loss_fn, tolerance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, SyntheticConfig};
    use crate::data::{FeatureSequence, QueryTokens, SegmentAnnotation};
    use tempfile::tempdir;

    fn tiny_dataset(n: usize, seed: u64) -> Vec<Sample> {
        let dir = tempdir().unwrap();
        let cfg = SyntheticConfig {
            num_frames: 12,
            feat_dim: 6,
            vocab_size: 16,
            num_prototypes: 4,
            max_query_len: 4,
            seed,
            ..SyntheticConfig::default()
        };
        let sets = generate_dataset(&cfg, n, (1.0, 0.0, 0.0), dir.path()).unwrap();
        crate::data::load_samples(ExecMode::Sequential, sets.all()[0]).unwrap()
    }

    fn tiny_config(seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: 2,
            batch_size: 3,
            lr: 1e-3,
            seed,
            feat_dim: 6,
            hidden: 3,
            vocab_size: 16,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn one_epoch_runs_and_logs() {
        let samples = tiny_dataset(5, 1);
        let cfg = TrainConfig { epochs: 1, ..tiny_config(1) };
        let out = train(&cfg, ExecMode::Sequential, &samples, &[], None).unwrap();
        assert_eq!(out.logs.len(), 1);
        let log = &out.logs[0];
        assert_eq!(log.epoch, 1);
        assert!(log.l_overall.is_finite() && log.l_overall > 0.0);
        let expected = log.l_tsg_aug + log.l_tsg_orig + cfg.lambda * log.l_cons;
        assert!((log.l_overall - expected).abs() < 1e-6);
        assert!((0.0..=1.0).contains(&log.val_r1_05));
        assert_eq!(out.final_record.epoch, 1);
        assert_eq!(out.final_record.adam_t, 2); // ceil(5/3) batches
        let csv = logs_to_csv(&out.logs);
        assert!(csv.starts_with("epoch,l_tsg_aug,l_tsg_orig,l_cons,l_overall,val_r1_05\n"));
        assert_eq!(csv.lines().count(), 2);
    }

    #[test]
    fn same_seed_bitwise_identical() {
        let samples = tiny_dataset(4, 2);
        let cfg = tiny_config(7);
        let a = train(&cfg, ExecMode::Sequential, &samples, &[], None).unwrap();
        let b = train(&cfg, ExecMode::Parallel, &samples, &[], None).unwrap();
        assert_eq!(a.logs, b.logs);
        assert_eq!(a.final_record.params, b.final_record.params);
        let c = train(&TrainConfig { seed: 8, ..cfg }, ExecMode::Sequential, &samples, &[], None)
            .unwrap();
        assert!(a.final_record.params != c.final_record.params);
    }

    #[test]
    fn resume_matches_unbroken_run() {
        let samples = tiny_dataset(6, 3);
        let val = tiny_dataset(2, 4);
        let full_cfg = TrainConfig { epochs: 4, ..tiny_config(11) };
        let full = train(&full_cfg, ExecMode::Sequential, &samples, &val, None).unwrap();

        let half_cfg = TrainConfig { epochs: 2, ..full_cfg.clone() };
        let first = train(&half_cfg, ExecMode::Sequential, &samples, &val, None).unwrap();
        let resumed = train(
            &full_cfg,
            ExecMode::Sequential,
            &samples,
            &val,
            Some(first.final_record.clone()),
        )
        .unwrap();
        assert_eq!(resumed.final_record.params, full.final_record.params);
        assert_eq!(resumed.final_record.adam_t, full.final_record.adam_t);
        assert_eq!(resumed.logs, full.logs[2..].to_vec());
    }

    #[test]
    fn resume_rejects_config_mismatch() {
        let samples = tiny_dataset(3, 5);
        let cfg = tiny_config(13);
        let out = train(&cfg, ExecMode::Sequential, &samples, &[], None).unwrap();
        let other = TrainConfig { config_hash: 99, epochs: 3, ..cfg };
        assert!(matches!(
            train(&other, ExecMode::Sequential, &samples, &[], Some(out.final_record)),
            Err(Error::Checkpoint(_))
        ));
    }

    #[test]
    fn lambda_zero_skips_consistency() {
        let samples = tiny_dataset(4, 6);
        let cfg = TrainConfig { lambda: 0.0, epochs: 1, ..tiny_config(17) };
        let out = train(&cfg, ExecMode::Sequential, &samples, &[], None).unwrap();
        assert_eq!(out.logs[0].l_cons, 0.0);
        assert!(out.logs[0].l_overall > 0.0);
    }

    #[test]
    fn fixed_augmentation_mode_runs() {
        let samples = tiny_dataset(4, 8);
        let cfg = TrainConfig { fixed_augmentation: true, ..tiny_config(19) };
        let out = train(&cfg, ExecMode::Sequential, &samples, &[], None).unwrap();
        assert_eq!(out.logs.len(), 2);
    }

    #[test]
    fn loss_decreases_when_overfitting_tiny_set() {
        let samples = tiny_dataset(4, 9);
        let cfg = TrainConfig {
            epochs: 30,
            batch_size: 2,
            lr: 2e-3,
            ..tiny_config(21)
        };
        let out = train(&cfg, ExecMode::Parallel, &samples, &[], None).unwrap();
        let first = out.logs.first().unwrap().l_overall;
        let last = out.logs.last().unwrap().l_overall;
        assert!(last < first, "loss went {first} -> {last}");
    }

    #[test]
    fn divergent_run_aborts_with_sample_id() {
        // batch size 1: the first step blows the parameters up, the
        // second batch's loss goes non-finite and must name its sample.
        let samples = tiny_dataset(3, 10);
        let cfg = TrainConfig {
            lr: 1e25,
            epochs: 30,
            batch_size: 1,
            ..tiny_config(23)
        };
        match train(&cfg, ExecMode::Sequential, &samples, &[], None) {
            Err(Error::TrainingAbort(msg)) => {
                assert!(msg.contains("sample"), "diagnostic lacks sample id: {msg}");
            }
            other => panic!("expected training abort, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_dims_and_empty_data() {
        let samples = tiny_dataset(2, 11);
        let cfg = TrainConfig { feat_dim: 99, ..tiny_config(25) };
        assert!(matches!(
            train(&cfg, ExecMode::Sequential, &samples, &[], None),
            Err(Error::Input(_))
        ));
        assert!(train(&tiny_config(25), ExecMode::Sequential, &[], &[], None).is_err());
        let bad = TrainConfig { epochs: 0, ..tiny_config(25) };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }

    fn gradcheck_cfg() -> TrainConfig {
        TrainConfig { feat_dim: 4, hidden: 2, vocab_size: 16, ..TrainConfig::default() }
    }

    #[test]
    fn full_loss_gradients_match_finite_differences() {
        let report =
            grad_check_full_loss(5, 3, &gradcheck_cfg(), 1e-4, None, ExecMode::Parallel).unwrap();
        assert!(report.passed(), "{report}");
    }

    #[test]
    fn planted_gradient_fault_is_caught() {
        let report =
            grad_check_full_loss(5, 3, &gradcheck_cfg(), 1e-4, Some(1.02), ExecMode::Parallel)
                .unwrap();
        assert!(!report.passed(), "corrupted gradient slipped through");
        assert!(!report.failures.is_empty());
    }

    #[test]
    fn pair_loss_breakdown_identity_holds() {
        let mut rng = derive_rng(31, &[9]);
        let features = Tensor::<f32>::randn(10, 4, 1.0, &mut rng);
        let sample = Sample {
            id: "x".into(),
            features: FeatureSequence::new(features).unwrap(),
            tokens: QueryTokens(vec![1, 2]),
            annotation: SegmentAnnotation { tau_s: 3, tau_e: 7 },
        };
        let cfg = TrainConfig {
            feat_dim: 4,
            hidden: 2,
            vocab_size: 8,
            ..TrainConfig::default()
        };
        let augmented =
            augment(&sample.features, &sample.annotation, &cfg.augment, &mut rng).unwrap();
        let params = ModelParams::<f64>::init(4, 2, 8, 3).unwrap();
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let (total, bd) = pair_loss(&mut tape, &bound, &sample, &augmented, &cfg).unwrap();
        assert!(bd.consistent());
        assert!((tape.value(total).item().unwrap() - bd.l_overall).abs() < 1e-9);
    }

    #[test]
    fn log_csv_roundtrip_and_errors() {
        let logs = vec![
            EpochLog {
                epoch: 1,
                l_tsg_aug: 1.25,
                l_tsg_orig: 1.5,
                l_cons: 0.75,
                l_overall: 6.5,
                val_r1_05: 0.125,
            },
            EpochLog {
                epoch: 2,
                l_tsg_aug: 1.0,
                l_tsg_orig: 1.0,
                l_cons: 0.5,
                l_overall: 4.5,
                val_r1_05: 0.25,
            },
        ];
        let text = logs_to_csv(&logs);
        assert_eq!(logs_from_csv(&text).unwrap(), logs);

        assert!(matches!(logs_from_csv(""), Err(Error::Input(_))));
        assert!(matches!(logs_from_csv(TRAIN_LOG_HEADER), Err(Error::Input(_))));
        let bad = format!("{TRAIN_LOG_HEADER}\n1,0.1,0.2,0.3,0.4,0.5\n2,oops,0,0,0,0\n");
        let err = logs_from_csv(&bad).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        let short = format!("{TRAIN_LOG_HEADER}\n1,2,3\n");
        let err = logs_from_csv(&short).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }
}
