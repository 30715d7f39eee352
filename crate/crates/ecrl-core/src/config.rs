//! Flat `key=value` run configuration.
//!
//! One file drives every command; `--set key=value` overrides
//! individual entries. Unknown keys are rejected up front, values are
//! validated against their owning type, and the canonical rendering is
//! hashed into checkpoints so a model can be traced to its settings.

use crate::augment::RatioRange;
use crate::data::SyntheticConfig;
use crate::error::{Error, Result};
use crate::rng::fnv1a64;
use crate::train::TrainConfig;
use std::fmt::Write as _;
use std::path::Path;

/// Union of all module settings plus evaluation lists.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub synth: SyntheticConfig,
    pub train: TrainConfig,
    pub eval_n: Vec<usize>,
    pub eval_m: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            synth: SyntheticConfig::default(),
            train: TrainConfig::default(),
            eval_n: vec![1, 5],
            eval_m: vec![0.3, 0.5, 0.7],
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| {
        Error::Config(format!("bad value for {key}: {value:?}"))
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(Error::Config(format!("bad value for {key}: {value:?}, want true/false"))),
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(|part| parse(key, part))
        .collect::<Result<Vec<T>>>()
        .and_then(|v| {
            if v.is_empty() {
                Err(Error::Config(format!("{key} must not be empty")))
            } else {
                Ok(v)
            }
        })
}

fn ratio_mode_name(r: RatioRange) -> &'static str {
    match r {
        RatioRange::Symmetric => "symmetric",
        RatioRange::Literal => "literal",
        RatioRange::Explicit(_, _) => "explicit",
    }
}

impl RunConfig {
    /// Apply one `key=value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            // synthetic data
            "num_frames" => self.synth.num_frames = parse(key, v)?,
            "feat_dim" => {
                self.synth.feat_dim = parse(key, v)?;
                self.train.feat_dim = self.synth.feat_dim;
            }
            "vocab_size" => {
                self.synth.vocab_size = parse(key, v)?;
                self.train.vocab_size = self.synth.vocab_size;
            }
            "num_prototypes" => self.synth.num_prototypes = parse(key, v)?,
            "seg_min" => self.synth.seg_len_range.0 = parse(key, v)?,
            "seg_max" => self.synth.seg_len_range.1 = parse(key, v)?,
            "noise_scale" => self.synth.noise_scale = parse(key, v)?,
            "signal_scale" => self.synth.signal_scale = parse(key, v)?,
            "max_query_len" => self.synth.max_query_len = parse(key, v)?,
            "data_seed" => self.synth.seed = parse(key, v)?,
            // training
            "epochs" => self.train.epochs = parse(key, v)?,
            "batch_size" => self.train.batch_size = parse(key, v)?,
            "lr" => self.train.lr = parse(key, v)?,
            "lambda" => self.train.lambda = parse(key, v)?,
            "seed" => self.train.seed = parse(key, v)?,
            "hidden" => self.train.hidden = parse(key, v)?,
            "fixed_augmentation" => self.train.fixed_augmentation = parse_bool(key, v)?,
            // self-refine
            "refine_sigma" => self.train.refine.sigma = parse(key, v)?,
            "refine_iterations" => self.train.refine.iterations = parse(key, v)?,
            "refine_row_normalize" => self.train.refine.row_normalize = parse_bool(key, v)?,
            // consistency
            "sigma_prior" => self.train.consistency.sigma_prior = parse(key, v)?,
            "cross_subvideo_downweight" => {
                self.train.consistency.cross_subvideo_downweight = parse(key, v)?
            }
            "aug_to_orig" => self.train.consistency.aug_to_orig = parse_bool(key, v)?,
            "orig_to_aug" => self.train.consistency.orig_to_aug = parse_bool(key, v)?,
            "one_hot_prior" => self.train.consistency.one_hot_prior = parse_bool(key, v)?,
            // grounding loss
            "label_smoothing" => self.train.grounding.label_smoothing = parse_bool(key, v)?,
            "per_frame_bce" => self.train.grounding.per_frame_bce = parse_bool(key, v)?,
            // augmentation
            "alpha" => self.train.augment.alpha = parse(key, v)?,
            "ratio_mode" => {
                self.train.augment.ratio_range = match v {
                    "symmetric" => RatioRange::Symmetric,
                    "literal" => RatioRange::Literal,
                    "explicit" => {
                        let (lo, hi) = match self.train.augment.ratio_range {
                            RatioRange::Explicit(lo, hi) => (lo, hi),
                            _ => (0.5, 1.5),
                        };
                        RatioRange::Explicit(lo, hi)
                    }
                    _ => {
                        return Err(Error::Config(format!(
                            "bad value for ratio_mode: {v:?}, want symmetric/literal/explicit"
                        )))
                    }
                };
            }
            "ratio_lo" | "ratio_hi" => {
                let x: f64 = parse(key, v)?;
                let (mut lo, mut hi) = match self.train.augment.ratio_range {
                    RatioRange::Explicit(lo, hi) => (lo, hi),
                    _ => {
                        return Err(Error::Config(format!(
                            "{key} requires ratio_mode=explicit first"
                        )))
                    }
                };
                if key == "ratio_lo" {
                    lo = x;
                } else {
                    hi = x;
                }
                self.train.augment.ratio_range = RatioRange::Explicit(lo, hi);
            }
            "spatial_noise_scale" => self.train.augment.spatial_noise_scale = parse(key, v)?,
            "spatial_channel_drop" => self.train.augment.spatial_channel_drop = parse(key, v)?,
            "max_retries" => self.train.augment.max_retries = parse(key, v)?,
            "pad_len" => self.train.augment.pad_len = parse(key, v)?,
            // evaluation
            "eval_n" => self.eval_n = parse_list(key, v)?,
            "eval_m" => self.eval_m = parse_list(key, v)?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Parse a whole config file body (`#` comments and blanks allowed).
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen: Vec<String> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got {line:?}", lineno + 1))
            })?;
            let key = key.trim();
            if seen.iter().any(|k| k == key) {
                return Err(Error::Config(format!("line {}: duplicate key {key:?}", lineno + 1)));
            }
            seen.push(key.to_string());
            cfg.set(key, value)
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
        Self::from_text(&text)
    }

    /// Validate every embedded config against its own invariants.
    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.train.validate()?;
        if self.synth.feat_dim != self.train.feat_dim
            || self.synth.vocab_size != self.train.vocab_size
        {
            return Err(Error::Config(
                "data and model disagree on feat_dim/vocab_size".into(),
            ));
        }
        if self.eval_n.is_empty() || self.eval_n.iter().any(|&n| n == 0) {
            return Err(Error::Config("eval_n must be nonempty positive integers".into()));
        }
        if self.eval_m.is_empty() || self.eval_m.iter().any(|&m| !(0.0..1.0).contains(&m)) {
            return Err(Error::Config("eval_m entries must lie in [0,1)".into()));
        }
        Ok(())
    }

    /// Every key in fixed order with its current value; parsing this
    /// text reproduces the config exactly.
    pub fn canonical_text(&self) -> String {
        let mut s = String::new();
        let a = &self.train.augment;
        let (lo, hi) = match a.ratio_range {
            RatioRange::Explicit(lo, hi) => (lo, hi),
            _ => (0.5, 1.5),
        };
        let mut put = |k: &str, v: String| writeln!(s, "{k}={v}").expect("string write");
        put("num_frames", self.synth.num_frames.to_string());
        put("feat_dim", self.synth.feat_dim.to_string());
        put("vocab_size", self.synth.vocab_size.to_string());
        put("num_prototypes", self.synth.num_prototypes.to_string());
        put("seg_min", self.synth.seg_len_range.0.to_string());
        put("seg_max", self.synth.seg_len_range.1.to_string());
        put("noise_scale", self.synth.noise_scale.to_string());
        put("signal_scale", self.synth.signal_scale.to_string());
        put("max_query_len", self.synth.max_query_len.to_string());
        put("data_seed", self.synth.seed.to_string());
        put("epochs", self.train.epochs.to_string());
        put("batch_size", self.train.batch_size.to_string());
        put("lr", self.train.lr.to_string());
        put("lambda", self.train.lambda.to_string());
        put("seed", self.train.seed.to_string());
        put("hidden", self.train.hidden.to_string());
        put("fixed_augmentation", self.train.fixed_augmentation.to_string());
        put("refine_sigma", self.train.refine.sigma.to_string());
        put("refine_iterations", self.train.refine.iterations.to_string());
        put("refine_row_normalize", self.train.refine.row_normalize.to_string());
        put("sigma_prior", self.train.consistency.sigma_prior.to_string());
        put(
            "cross_subvideo_downweight",
            self.train.consistency.cross_subvideo_downweight.to_string(),
        );
        put("aug_to_orig", self.train.consistency.aug_to_orig.to_string());
        put("orig_to_aug", self.train.consistency.orig_to_aug.to_string());
        put("one_hot_prior", self.train.consistency.one_hot_prior.to_string());
        put("label_smoothing", self.train.grounding.label_smoothing.to_string());
        put("per_frame_bce", self.train.grounding.per_frame_bce.to_string());
        put("alpha", a.alpha.to_string());
        put("ratio_mode", ratio_mode_name(a.ratio_range).to_string());
        if let RatioRange::Explicit(_, _) = a.ratio_range {
            put("ratio_lo", lo.to_string());
            put("ratio_hi", hi.to_string());
        }
        put("spatial_noise_scale", a.spatial_noise_scale.to_string());
        put("spatial_channel_drop", a.spatial_channel_drop.to_string());
        put("max_retries", a.max_retries.to_string());
        put("pad_len", a.pad_len.to_string());
        put(
            "eval_n",
            self.eval_n.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(","),
        );
        put(
            "eval_m",
            self.eval_m.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(","),
        );
        s
    }

    /// Stable hash of the canonical rendering.
    pub fn hash(&self) -> u64 {
        fnv1a64(self.canonical_text().as_bytes())
    }

    /// The hash-stamped training config.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { config_hash: self.hash(), ..self.train.clone() }
    }
}

/// Split a `--set key=value` argument.
pub fn parse_set_arg(arg: &str) -> Result<(&str, &str)> {
    arg.split_once('=')
        .map(|(k, v)| (k.trim(), v))
        .ok_or_else(|| Error::Config(format!("--set needs key=value, got {arg:?}")))
}
