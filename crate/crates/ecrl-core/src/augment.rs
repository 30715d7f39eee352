//! Spatio-temporal augmentation with equivariant boundary labels.
//!
//! A video is split at its annotated segment into left / segment / right
//! sub-videos, each is resampled by an independent random ratio, the
//! pieces are recomposed and fitted back to length `T`, and the new
//! boundary labels plus a per-frame map back to original frame indices
//! (`i′`) are derived from the index bookkeeping. Because resampling is
//! nearest-lower-index selection, every augmented frame is an exact copy
//! of an original frame and `i′` is always well defined.
//!
//! The pipeline tracks `(origin, sub-label)` pairs and only materializes
//! feature rows at the end; empty sub-videos are replaced by zero-feature
//! PAD entries whose origins are virtual timeline positions just outside
//! the original video (left pads below 0, right pads past `T−1`).

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{FeatureSequence, SegmentAnnotation};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Which sub-video an augmented frame came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubLabel {
    Left,
    Seg,
    Right,
    Pad,
}

/// How the three resampling ratios are drawn from `alpha`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RatioRange {
    /// `[1−α, 1+α]`: supports both up- and down-sampling (default).
    Symmetric,
    /// `[1−α, α]` as printed in the method description; only meaningful
    /// for `α > 0.5` and permits down-sampling only.
    Literal,
    /// An explicit `[lo, hi]` range, used for distribution-shift studies.
    Explicit(f64, f64),
}

impl RatioRange {
    pub fn bounds(self, alpha: f64) -> Result<(f64, f64)> {
        if !(0.0 < alpha && alpha < 1.0) {
            return Err(Error::Config(format!("alpha must be in (0,1), got {alpha}")));
        }
        let (lo, hi) = match self {
            RatioRange::Symmetric => (1.0 - alpha, 1.0 + alpha),
            RatioRange::Literal => (1.0 - alpha, alpha),
            RatioRange::Explicit(lo, hi) => (lo, hi),
        };
        if !(0.0 < lo && lo <= hi) {
            return Err(Error::Config(format!(
                "ratio range [{lo}, {hi}] is empty or nonpositive (alpha {alpha})"
            )));
        }
        Ok((lo, hi))
    }
}

/// One draw of augmentation parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformParams {
    pub r_left: f64,
    pub r_seg: f64,
    pub r_right: f64,
    pub alpha: f64,
    pub spatial_noise_scale: f64,
    pub spatial_channel_drop: f64,
}

/// Augmentation settings shared across samples.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    pub alpha: f64,
    pub ratio_range: RatioRange,
    pub spatial_noise_scale: f64,
    pub spatial_channel_drop: f64,
    /// Retries after the first attempt when augmentation erases the
    /// segment.
    pub max_retries: u32,
    /// Zero-feature frames substituted for an empty sub-video.
    pub pad_len: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            alpha: 0.8,
            ratio_range: RatioRange::Symmetric,
            spatial_noise_scale: 0.1,
            spatial_channel_drop: 0.05,
            max_retries: 8,
            pad_len: 2,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        self.ratio_range.bounds(self.alpha)?;
        if self.spatial_noise_scale < 0.0 {
            return Err(Error::Config(format!(
                "spatial_noise_scale must be >= 0, got {}",
                self.spatial_noise_scale
            )));
        }
        if !(0.0..1.0).contains(&self.spatial_channel_drop) {
            return Err(Error::Config(format!(
                "spatial_channel_drop must be in [0,1), got {}",
                self.spatial_channel_drop
            )));
        }
        if self.pad_len == 0 {
            return Err(Error::Config("pad_len must be positive".into()));
        }
        Ok(())
    }
}

/// Per-frame record of where an augmented frame came from.
///
/// `origins[i]` is the original frame index `i′` for non-PAD frames; PAD
/// frames carry virtual positions outside `[0, T_orig)` so that timestamp
/// distances remain meaningful near the video edges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimestampMap {
    origins: Vec<i64>,
    labels: Vec<SubLabel>,
}

impl TimestampMap {
    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    /// Timeline position of augmented frame `i` (virtual for PAD frames).
    pub fn origin(&self, i: usize) -> i64 {
        self.origins[i]
    }

    pub fn label(&self, i: usize) -> SubLabel {
        self.labels[i]
    }

    pub fn origins(&self) -> &[i64] {
        &self.origins
    }

    pub fn labels(&self) -> &[SubLabel] {
        &self.labels
    }

    /// Original frame index underlying augmented frame `i`, or `None`
    /// for PAD frames.
    pub fn original_index(&self, i: usize) -> Option<usize> {
        match self.labels[i] {
            SubLabel::Pad => None,
            _ => Some(self.origins[i] as usize),
        }
    }

    /// The map of an untransformed video: `origins[i] = i` with labels
    /// read off the annotation.
    pub fn identity(num_frames: usize, ann: &SegmentAnnotation) -> Result<Self> {
        ann.validate(num_frames)?;
        let origins = (0..num_frames as i64).collect();
        let labels = (0..num_frames)
            .map(|i| {
                if i < ann.tau_s {
                    SubLabel::Left
                } else if i <= ann.tau_e {
                    SubLabel::Seg
                } else {
                    SubLabel::Right
                }
            })
            .collect();
        Ok(TimestampMap { origins, labels })
    }
}

/// The result of one successful augmentation.
#[derive(Debug, Clone)]
pub struct AugmentedSample {
    pub features: FeatureSequence,
    /// Equivariant boundaries `(τ_s′, τ_e′)` in augmented-frame indices.
    pub annotation: SegmentAnnotation,
    pub tmap: TimestampMap,
    pub params: TransformParams,
}

impl AugmentedSample {
    /// Check the central bookkeeping invariant: frames labeled SEG are
    /// exactly the interval `[τ_s′, τ_e′]`.
    pub fn validate(&self) -> Result<()> {
        for (t, &l) in self.tmap.labels().iter().enumerate() {
            let inside = t >= self.annotation.tau_s && t <= self.annotation.tau_e;
            if (l == SubLabel::Seg) != inside {
                return Err(Error::Contract(format!(
                    "frame {t} label {l:?} disagrees with boundaries [{}, {}]",
                    self.annotation.tau_s, self.annotation.tau_e
                )));
            }
        }
        Ok(())
    }
}

// ── Pipeline stages ──────────────────────────────────────────────────────

/// One sub-video as `(origin, label)` entries; features are materialized
/// only after composition.
#[derive(Debug, Clone)]
pub struct SubVideo {
    part: SubLabel,
    entries: Vec<(i64, SubLabel)>,
}

impl SubVideo {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(i64, SubLabel)] {
        &self.entries
    }
}

/// Draw transform parameters: three independent uniform ratios plus the
/// spatial settings carried through from the config.
pub fn sample_transform_params(cfg: &AugmentConfig, rng: &mut ChaCha8Rng) -> Result<TransformParams> {
    let (lo, hi) = cfg.ratio_range.bounds(cfg.alpha)?;
    let mut draw = || {
        if lo == hi {
            lo
        } else {
            rng.random_range(lo..=hi)
        }
    };
    Ok(TransformParams {
        r_left: draw(),
        r_seg: draw(),
        r_right: draw(),
        alpha: cfg.alpha,
        spatial_noise_scale: cfg.spatial_noise_scale,
        spatial_channel_drop: cfg.spatial_channel_drop,
    })
}

/// Split a `T`-frame video at its annotation into left `[0, τ_s)`,
/// segment `[τ_s, τ_e]`, and right `(τ_e, T)` index runs.
pub fn split_video(num_frames: usize, ann: &SegmentAnnotation) -> Result<[SubVideo; 3]> {
    ann.validate(num_frames)?;
    let part = |label: SubLabel, range: std::ops::Range<usize>| SubVideo {
        part: label,
        entries: range.map(|i| (i as i64, label)).collect(),
    };
    Ok([
        part(SubLabel::Left, 0..ann.tau_s),
        part(SubLabel::Seg, ann.tau_s..ann.tau_e + 1),
        part(SubLabel::Right, ann.tau_e + 1..num_frames),
    ])
}

/// Resample one sub-video by ratio `r` using nearest-lower-index
/// selection: `L_out = max(1, round(r·L_in))`, source index
/// `floor(j·L_in/L_out)`. An empty sub-video is first replaced by
/// `pad_len` PAD entries at virtual positions just outside the original
/// timeline (`t_orig` locates the right edge).
pub fn resample_subvideo(
    sub: &SubVideo,
    r: f64,
    pad_len: usize,
    t_orig: usize,
) -> Result<SubVideo> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::Contract(format!("resample ratio must be positive, got {r}")));
    }
    let padded: Vec<(i64, SubLabel)> = if sub.entries.is_empty() {
        match sub.part {
            SubLabel::Left => (0..pad_len)
                .map(|k| (k as i64 - pad_len as i64, SubLabel::Pad))
                .collect(),
            SubLabel::Right => (0..pad_len)
                .map(|k| (t_orig as i64 + k as i64, SubLabel::Pad))
                .collect(),
            other => {
                return Err(Error::Contract(format!(
                    "{other:?} sub-video cannot be empty"
                )))
            }
        }
    } else {
        sub.entries.clone()
    };
    let l_in = padded.len();
    let l_out = ((r * l_in as f64).round() as usize).max(1);
    let entries = (0..l_out).map(|j| padded[j * l_in / l_out]).collect();
    Ok(SubVideo {
        part: sub.part,
        entries,
    })
}

/// Concatenate the three resampled parts (length `L′`) and select
/// `target_len` frames at composed indices `floor(k·L′/target_len)`.
pub fn compose_and_fit(parts: &[SubVideo; 3], target_len: usize) -> Result<TimestampMap> {
    if target_len == 0 {
        return Err(Error::Contract("target length must be positive".into()));
    }
    let composed: Vec<(i64, SubLabel)> = parts
        .iter()
        .flat_map(|p| p.entries.iter().copied())
        .collect();
    let lp = composed.len();
    if lp == 0 {
        return Err(Error::Contract("composed video is empty".into()));
    }
    let mut origins = Vec::with_capacity(target_len);
    let mut labels = Vec::with_capacity(target_len);
    for k in 0..target_len {
        let (o, l) = composed[k * lp / target_len];
        origins.push(o);
        labels.push(l);
    }
    Ok(TimestampMap { origins, labels })
}

/// Read the equivariant boundaries off a timestamp map: the first and
/// last SEG-labeled frames. If the fit-to-`T` subsampling dropped every
/// SEG frame the sample is degenerate and the caller should redraw.
pub fn map_boundaries(tmap: &TimestampMap) -> Result<SegmentAnnotation> {
    let first = tmap.labels().iter().position(|&l| l == SubLabel::Seg);
    let last = tmap.labels().iter().rposition(|&l| l == SubLabel::Seg);
    match (first, last) {
        (Some(tau_s), Some(tau_e)) => Ok(SegmentAnnotation { tau_s, tau_e }),
        _ => Err(Error::DegenerateSample(
            "no SEG frame survived the fit-to-length subsampling".into(),
        )),
    }
}

/// Copy the selected original frames into an augmented feature matrix;
/// PAD entries become zero rows.
pub fn materialize_features(tmap: &TimestampMap, source: &FeatureSequence) -> Result<Tensor<f32>> {
    let d = source.feat_dim();
    let t_orig = source.num_frames();
    let mut data = vec![0f32; tmap.len() * d];
    for i in 0..tmap.len() {
        if let Some(src) = tmap.original_index(i) {
            if src >= t_orig {
                return Err(Error::Contract(format!(
                    "map origin {src} out of range for {t_orig} original frames"
                )));
            }
            data[i * d..(i + 1) * d].copy_from_slice(source.frames().row(src));
        }
    }
    Tensor::new(tmap.len(), d, data)
}

/// Feature-space stand-in for pixel-level appearance augmentation: add
/// zero-mean Gaussian noise to every non-PAD entry, then zero a random
/// subset of feature channels across the whole sequence. PAD rows stay
/// exactly zero.
pub fn spatial_perturb(
    features: &mut Tensor<f32>,
    labels: &[SubLabel],
    params: &TransformParams,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let (t, d) = features.shape();
    if labels.len() != t {
        return Err(Error::Dimension(format!(
            "{} labels for {t} frames",
            labels.len()
        )));
    }
    if params.spatial_noise_scale > 0.0 {
        for i in 0..t {
            if labels[i] == SubLabel::Pad {
                continue;
            }
            for j in 0..d {
                let noise: f64 = StandardNormal.sample(rng);
                let v = features.get(i, j) as f64 + params.spatial_noise_scale * noise;
                features.set(i, j, v as f32);
            }
        }
    }
    if params.spatial_channel_drop > 0.0 {
        for j in 0..d {
            if rng.random_range(0.0..1.0) < params.spatial_channel_drop {
                for i in 0..t {
                    features.set(i, j, 0.0);
                }
            }
        }
    }
    Ok(())
}

/// Run one attempt of the full pipeline with fixed params.
fn augment_once(
    fs: &FeatureSequence,
    ann: &SegmentAnnotation,
    params: &TransformParams,
    pad_len: usize,
    rng: &mut ChaCha8Rng,
) -> Result<AugmentedSample> {
    let t = fs.num_frames();
    let [left, seg, right] = split_video(t, ann)?;
    let parts = [
        resample_subvideo(&left, params.r_left, pad_len, t)?,
        resample_subvideo(&seg, params.r_seg, pad_len, t)?,
        resample_subvideo(&right, params.r_right, pad_len, t)?,
    ];
    let tmap = compose_and_fit(&parts, t)?;
    let annotation = map_boundaries(&tmap)?;
    let mut features = materialize_features(&tmap, fs)?;
    spatial_perturb(&mut features, tmap.labels(), params, rng)?;
    let sample = AugmentedSample {
        features: FeatureSequence::new(features)?,
        annotation,
        tmap,
        params: *params,
    };
    sample.validate()?;
    Ok(sample)
}

/// Full augmentation with redraw-on-degeneracy: parameters are sampled,
/// the pipeline runs, and if the segment was erased fresh parameters are
/// drawn up to `cfg.max_retries` more times before giving up.
pub fn augment(
    fs: &FeatureSequence,
    ann: &SegmentAnnotation,
    cfg: &AugmentConfig,
    rng: &mut ChaCha8Rng,
) -> Result<AugmentedSample> {
    cfg.validate()?;
    ann.validate(fs.num_frames())?;
    let attempts = 1 + cfg.max_retries;
    for _ in 0..attempts {
        let params = sample_transform_params(cfg, rng)?;
        match augment_once(fs, ann, &params, cfg.pad_len, rng) {
            Ok(sample) => return Ok(sample),
            Err(Error::DegenerateSample(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::Augmentation {
        attempts,
        msg: "every parameter draw erased the segment".into(),
    })
}
