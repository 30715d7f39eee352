//! Training objectives: the Gaussian-prior self-supervised consistency
//! loss between the two video streams, the boundary cross-entropy, and
//! their weighted combination.
//!
//! Loss values are recorded on the [`Tape`] so one backward pass covers
//! the whole objective; [`LossBreakdown`] carries the plain numbers for
//! logging.

use crate::augment::{SubLabel, TimestampMap};
use crate::data::SegmentAnnotation;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Tensor, TensorId};

/// Settings for the consistency loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsistencyConfig {
    /// Width of the timestamp prior Gaussian.
    pub sigma_prior: f64,
    /// Multiplier applied to prior mass on frames from a different
    /// sub-video than the anchor (padding always counts as different).
    pub cross_subvideo_downweight: f64,
    /// Anchor augmented frames against the original sequence.
    pub aug_to_orig: bool,
    /// Anchor original frames against the augmented sequence.
    pub orig_to_aug: bool,
    /// Ablation: collapse the soft prior to a single positive at the
    /// nearest timestamp, treating every other frame as a negative.
    pub one_hot_prior: bool,
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        ConsistencyConfig {
            sigma_prior: 5.0,
            cross_subvideo_downweight: 0.5,
            aug_to_orig: true,
            orig_to_aug: true,
            one_hot_prior: false,
        }
    }
}

impl ConsistencyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_prior > 0.0) {
            return Err(Error::Config(format!(
                "sigma_prior must be positive, got {}",
                self.sigma_prior
            )));
        }
        if !(self.cross_subvideo_downweight > 0.0 && self.cross_subvideo_downweight <= 1.0) {
            return Err(Error::Config(format!(
                "cross_subvideo_downweight must lie in (0,1], got {}",
                self.cross_subvideo_downweight
            )));
        }
        Ok(())
    }
}

/// Prior weights for one anchor against arbitrary target positions:
/// a Gaussian in timestamp distance, down-weighted on targets from a
/// different sub-video, normalized afterwards.
pub fn prior_weights_at(
    anchor_pos: i64,
    anchor_label: SubLabel,
    target_positions: &[i64],
    target_labels: &[SubLabel],
    cfg: &ConsistencyConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if target_positions.len() != target_labels.len() || target_positions.is_empty() {
        return Err(Error::Dimension(format!(
            "{} target positions vs {} labels",
            target_positions.len(),
            target_labels.len()
        )));
    }
    if anchor_label == SubLabel::Pad {
        return Err(Error::Contract("prior anchored at a padding frame".into()));
    }
    if cfg.one_hot_prior {
        let nearest = target_positions
            .iter()
            .enumerate()
            .min_by_key(|(_, &pos)| (anchor_pos - pos).abs())
            .map(|(j, _)| j)
            .expect("nonempty targets");
        let mut w = vec![0.0; target_positions.len()];
        w[nearest] = 1.0;
        return Ok(w);
    }
    let two_sigma_sq = 2.0 * cfg.sigma_prior * cfg.sigma_prior;
    let mut g: Vec<f64> = target_positions
        .iter()
        .zip(target_labels)
        .map(|(&pos, &label)| {
            let d = (anchor_pos - pos) as f64;
            let mut v = (-d * d / two_sigma_sq).exp();
            if label != anchor_label {
                v *= cfg.cross_subvideo_downweight;
            }
            v
        })
        .collect();
    let sum: f64 = g.iter().sum();
    for v in g.iter_mut() {
        *v /= sum;
    }
    Ok(g)
}

/// Prior weights for an anchor with original timestamp `i_prime` over
/// the `T` frames of the original video (positions `0..T`).
pub fn gaussian_prior_weights(
    i_prime: usize,
    sub_i: SubLabel,
    orig_labels: &[SubLabel],
    cfg: &ConsistencyConfig,
) -> Result<Vec<f64>> {
    let t = orig_labels.len();
    if i_prime >= t {
        return Err(Error::Contract(format!(
            "anchor timestamp {i_prime} outside 0..{t}"
        )));
    }
    let positions: Vec<i64> = (0..t as i64).collect();
    prior_weights_at(i_prime as i64, sub_i, &positions, orig_labels, cfg)
}

/// Sub-video labels of the original (untransformed) video.
pub fn original_labels(num_frames: usize, ann: &SegmentAnnotation) -> Result<Vec<SubLabel>> {
    Ok(TimestampMap::identity(num_frames, ann)?.labels().to_vec())
}

fn weights_to_row<S: Scalar>(weights: &[f64]) -> Tensor<S> {
    let data: Vec<S> = weights.iter().map(|&w| S::from_f64(w)).collect();
    Tensor::new(1, data.len(), data).expect("nonempty weights")
}

/// Cross-entropy of one anchor frame against every frame of the other
/// stream: `−Σ_j w_j · log softmax_j cos(anchor, frame_j)`.
pub fn sscl_frame_loss<S: Scalar>(
    tape: &mut Tape<S>,
    anchor: TensorId,
    other_stream: TensorId,
    weights: &[f64],
) -> Result<TensorId> {
    let t = tape.shape(other_stream).0;
    if weights.len() != t {
        return Err(Error::Dimension(format!(
            "{} weights for {t} target frames",
            weights.len()
        )));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-6 || weights.iter().any(|&w| w < 0.0) {
        return Err(Error::Contract(format!(
            "prior weights must be a distribution (sum {sum})"
        )));
    }
    let cos = tape.cosine_matrix(anchor, other_stream)?; // 1×T
    let logp = tape.log_softmax_rows(cos)?;
    let w = tape.constant(&weights_to_row(weights));
    let weighted = tape.mul(w, logp)?;
    let s = tape.sum_all(weighted);
    Ok(tape.scale(s, -1.0))
}

/// One direction of the consistency loss as a weight matrix: row `i`
/// holds the prior for anchor `i`, or zeros when that anchor is skipped.
/// Returns the matrix and the number of active anchors.
fn direction_weights(
    anchor_positions: &[i64],
    anchor_labels: &[SubLabel],
    target_positions: &[i64],
    target_labels: &[SubLabel],
    cfg: &ConsistencyConfig,
) -> Result<(Tensor<f64>, usize)> {
    let t = anchor_positions.len();
    let n = target_positions.len();
    let mut w = Tensor::zeros(t, n);
    let mut active = 0usize;
    for i in 0..t {
        if anchor_labels[i] == SubLabel::Pad {
            continue;
        }
        let row = prior_weights_at(
            anchor_positions[i],
            anchor_labels[i],
            target_positions,
            target_labels,
            cfg,
        )?;
        for (j, v) in row.into_iter().enumerate() {
            w.set(i, j, v);
        }
        active += 1;
    }
    Ok((w, active))
}

fn direction_loss<S: Scalar>(
    tape: &mut Tape<S>,
    anchors: TensorId,
    targets: TensorId,
    weights: &Tensor<f64>,
    active: usize,
) -> Result<TensorId> {
    let cos = tape.cosine_matrix(anchors, targets)?;
    let logp = tape.log_softmax_rows(cos)?;
    let w = tape.constant(&weights.cast::<S>());
    let weighted = tape.mul(w, logp)?;
    let s = tape.sum_all(weighted);
    Ok(tape.scale(s, -1.0 / active as f64))
}

/// The full consistency loss between the fused augmented stream and the
/// fused original stream, averaged per direction over its active
/// anchors. Augmented padding frames never anchor; as targets they
/// carry their virtual timestamps and always take the down-weight.
pub fn sscl_total<S: Scalar>(
    tape: &mut Tape<S>,
    fused_aug: TensorId,
    fused_orig: TensorId,
    tmap: &TimestampMap,
    ann: &SegmentAnnotation,
    cfg: &ConsistencyConfig,
) -> Result<TensorId> {
    cfg.validate()?;
    let (t_aug, d_aug) = tape.shape(fused_aug);
    let (t_orig, d_orig) = tape.shape(fused_orig);
    if d_aug != d_orig || t_aug != tmap.len() {
        return Err(Error::Dimension(format!(
            "stream shapes {t_aug}×{d_aug} / {t_orig}×{d_orig} with map length {}",
            tmap.len()
        )));
    }
    let orig_positions: Vec<i64> = (0..t_orig as i64).collect();
    let orig_labels = original_labels(t_orig, ann)?;

    let mut total: Option<TensorId> = None;
    if cfg.aug_to_orig {
        let (w, active) = direction_weights(
            tmap.origins(),
            tmap.labels(),
            &orig_positions,
            &orig_labels,
            cfg,
        )?;
        if active == 0 {
            return Err(Error::Contract("no non-padding anchors in the augmented stream".into()));
        }
        let l = direction_loss(tape, fused_aug, fused_orig, &w, active)?;
        total = Some(l);
    }
    if cfg.orig_to_aug {
        let (w, active) = direction_weights(
            &orig_positions,
            &orig_labels,
            tmap.origins(),
            tmap.labels(),
            cfg,
        )?;
        let l = direction_loss(tape, fused_orig, fused_aug, &w, active)?;
        total = Some(match total {
            None => l,
            Some(acc) => tape.add(acc, l)?,
        });
    }
    Ok(match total {
        Some(id) => id,
        None => tape.constant(&Tensor::scalar(S::zero())),
    })
}

/// Boundary supervision style.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundingLossConfig {
    /// Spread 0.8/0.1/0.1 label mass over the boundary's neighbors,
    /// folding clipped mass back into the center.
    pub label_smoothing: bool,
    /// Score each frame with an independent binary cross-entropy
    /// instead of a categorical softmax over the time axis.
    pub per_frame_bce: bool,
}

impl Default for GroundingLossConfig {
    fn default() -> Self {
        GroundingLossConfig {
            label_smoothing: false,
            per_frame_bce: false,
        }
    }
}

fn boundary_target(pos: usize, t: usize, smoothing: bool) -> Vec<f64> {
    let mut y = vec![0.0; t];
    if !smoothing {
        y[pos] = 1.0;
        return y;
    }
    let mut center = 0.8;
    for (offset, mass) in [(-1i64, 0.1), (1i64, 0.1)] {
        let j = pos as i64 + offset;
        if j < 0 || j >= t as i64 {
            center += mass; // fold clipped mass back into the boundary
        } else {
            y[j as usize] = mass;
        }
    }
    y[pos] = center;
    y
}

/// Per-frame start/end target distributions for an annotation.
pub fn grounding_labels(
    ann: &SegmentAnnotation,
    num_frames: usize,
    smoothing: bool,
) -> Result<(Vec<f64>, Vec<f64>)> {
    ann.validate(num_frames)?;
    Ok((
        boundary_target(ann.tau_s, num_frames, smoothing),
        boundary_target(ann.tau_e, num_frames, smoothing),
    ))
}

fn categorical_ce<S: Scalar>(
    tape: &mut Tape<S>,
    scores: TensorId,
    target: &[f64],
) -> Result<TensorId> {
    let logp = tape.log_softmax_rows(scores)?;
    let y = tape.constant(&weights_to_row(target));
    let weighted = tape.mul(y, logp)?;
    let s = tape.sum_all(weighted);
    Ok(tape.scale(s, -1.0))
}

fn per_frame_bce<S: Scalar>(
    tape: &mut Tape<S>,
    scores: TensorId,
    target: &[f64],
) -> Result<TensorId> {
    // −[y log σ(x) + (1−y) log(1−σ(x))] summed is Σ softplus(x) − y·x.
    let sp = tape.softplus(scores);
    let y = tape.constant(&weights_to_row(target));
    let yx = tape.mul(y, scores)?;
    let diff = tape.sub(sp, yx)?;
    Ok(tape.sum_all(diff))
}

/// Boundary loss of one stream: the mean over {start, end} of a
/// categorical cross-entropy along the time axis, or (behind the flag)
/// the literal `1/2T` sum of per-frame binary cross-entropies.
pub fn grounding_loss<S: Scalar>(
    tape: &mut Tape<S>,
    scores: &crate::model::ScoreIds,
    ann: &SegmentAnnotation,
    cfg: &GroundingLossConfig,
) -> Result<TensorId> {
    let t = tape.shape(scores.start).1;
    if tape.shape(scores.end).1 != t {
        return Err(Error::Dimension("start/end score lengths differ".into()));
    }
    let (ys, ye) = grounding_labels(ann, t, cfg.label_smoothing)?;
    let (ls, le) = if cfg.per_frame_bce {
        (
            per_frame_bce(tape, scores.start, &ys)?,
            per_frame_bce(tape, scores.end, &ye)?,
        )
    } else {
        (
            categorical_ce(tape, scores.start, &ys)?,
            categorical_ce(tape, scores.end, &ye)?,
        )
    };
    let sum = tape.add(ls, le)?;
    let denom = if cfg.per_frame_bce { 2.0 * t as f64 } else { 2.0 };
    Ok(tape.scale(sum, 1.0 / denom))
}

/// The logged pieces of one objective evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub l_tsg_aug: f64,
    pub l_tsg_orig: f64,
    pub l_cons: f64,
    pub l_overall: f64,
    pub lambda: f64,
}

impl LossBreakdown {
    /// Combine the three terms; any non-finite input aborts training.
    pub fn new(l_tsg_aug: f64, l_tsg_orig: f64, l_cons: f64, lambda: f64) -> Result<Self> {
        let l_overall = l_tsg_aug + l_tsg_orig + lambda * l_cons;
        let b = LossBreakdown {
            l_tsg_aug,
            l_tsg_orig,
            l_cons,
            l_overall,
            lambda,
        };
        if !(l_tsg_aug.is_finite() && l_tsg_orig.is_finite() && l_cons.is_finite() && l_overall.is_finite())
        {
            return Err(Error::TrainingAbort(format!(
                "non-finite loss: aug {l_tsg_aug}, orig {l_tsg_orig}, cons {l_cons}"
            )));
        }
        Ok(b)
    }

    /// The defining identity, re-checked wherever a breakdown escapes.
    pub fn consistent(&self) -> bool {
        (self.l_overall - (self.l_tsg_aug + self.l_tsg_orig + self.lambda * self.l_cons)).abs()
            <= 1e-9
    }
}

/// Combine the per-term tape scalars into the overall objective
/// `L = L¹ + L² + λ·L_cons` and report the values.
pub fn overall_loss<S: Scalar>(
    tape: &mut Tape<S>,
    l_tsg_aug: TensorId,
    l_tsg_orig: TensorId,
    l_cons: TensorId,
    lambda: f64,
) -> Result<(TensorId, LossBreakdown)> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::Config(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    let scaled = tape.scale(l_cons, lambda);
    let grounding = tape.add(l_tsg_aug, l_tsg_orig)?;
    let total = tape.add(grounding, scaled)?;
    let breakdown = LossBreakdown::new(
        tape.value(l_tsg_aug).item()?.into_f64(),
        tape.value(l_tsg_orig).item()?.into_f64(),
        tape.value(l_cons).item()?.into_f64(),
        lambda,
    )?;
    Ok((total, breakdown))
}
