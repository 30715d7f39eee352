//! Synthetic dataset generation and persistence.
//!
//! Each sample is a frame-feature matrix with one planted "activity"
//! segment: frames inside the annotated span carry a fixed prototype
//! vector (scaled by the signal level) plus noise, frames outside carry
//! background prototypes plus noise, and the query tokens encode the
//! prototype id. This stands in for pretrained video/text features while
//! keeping exact ground truth available.

use std::collections::HashSet;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::par;
use crate::rng::{derive_rng, PURPOSE_PROTOTYPE, PURPOSE_SAMPLE};
use crate::tensor::Tensor;

/// Magic bytes opening every feature file.
pub const FEATURE_MAGIC: &[u8; 8] = b"ECRLFEAT";
pub const FEATURE_VERSION: u32 = 1;

// ── Domain types ─────────────────────────────────────────────────────────

/// A `T×D` frame-feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    frames: Tensor<f32>,
}

impl FeatureSequence {
    pub fn new(frames: Tensor<f32>) -> Result<Self> {
        if frames.rows() < 4 {
            return Err(Error::Contract(format!(
                "feature sequence needs T >= 4, got {}",
                frames.rows()
            )));
        }
        if frames.cols() < 2 {
            return Err(Error::Contract(format!(
                "feature sequence needs D >= 2, got {}",
                frames.cols()
            )));
        }
        if !frames.all_finite() {
            return Err(Error::Contract("feature sequence contains non-finite values".into()));
        }
        Ok(FeatureSequence { frames })
    }

    pub fn frames(&self) -> &Tensor<f32> {
        &self.frames
    }

    pub fn num_frames(&self) -> usize {
        self.frames.rows()
    }

    pub fn feat_dim(&self) -> usize {
        self.frames.cols()
    }
}

/// Token-id query of length `1..=max_len`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryTokens(pub Vec<u32>);

impl QueryTokens {
    pub fn validate(&self, vocab_size: u32, max_len: usize) -> Result<()> {
        if self.0.is_empty() || self.0.len() > max_len {
            return Err(Error::Contract(format!(
                "query length {} outside 1..={max_len}",
                self.0.len()
            )));
        }
        if let Some(&t) = self.0.iter().find(|&&t| t >= vocab_size) {
            return Err(Error::Contract(format!(
                "token id {t} outside vocabulary of size {vocab_size}"
            )));
        }
        Ok(())
    }
}

/// Inclusive `[tau_s, tau_e]` frame span of the target moment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmentAnnotation {
    pub tau_s: usize,
    pub tau_e: usize,
}

impl SegmentAnnotation {
    pub fn new(tau_s: usize, tau_e: usize, num_frames: usize) -> Result<Self> {
        let a = SegmentAnnotation { tau_s, tau_e };
        a.validate(num_frames)?;
        Ok(a)
    }

    pub fn validate(&self, num_frames: usize) -> Result<()> {
        if self.tau_s > self.tau_e || self.tau_e >= num_frames {
            return Err(Error::Contract(format!(
                "annotation [{}, {}] invalid for {} frames",
                self.tau_s, self.tau_e, num_frames
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tau_e - self.tau_s + 1
    }

    pub fn is_empty(&self) -> bool {
        false // by construction tau_s <= tau_e
    }
}

/// Which split a manifest belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// One manifest line: where a sample lives and what its labels are.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRecord {
    pub id: String,
    /// Feature-file path relative to the manifest location.
    pub path: PathBuf,
    pub tokens: Vec<u32>,
    pub tau_s: usize,
    pub tau_e: usize,
    pub num_frames: usize,
}

impl ManifestRecord {
    pub fn annotation(&self) -> SegmentAnnotation {
        SegmentAnnotation {
            tau_s: self.tau_s,
            tau_e: self.tau_e,
        }
    }
}

/// A validated set of manifest records sharing one root directory.
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub split: Split,
    /// Directory feature paths are resolved against.
    pub root: PathBuf,
    pub records: Vec<ManifestRecord>,
}

/// A fully loaded sample, ready for the model.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub features: FeatureSequence,
    pub tokens: QueryTokens,
    pub annotation: SegmentAnnotation,
}

/// Generator settings for the synthetic corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    /// Frames per video (T).
    pub num_frames: usize,
    /// Feature dimension (D).
    pub feat_dim: usize,
    pub vocab_size: u32,
    pub num_prototypes: u32,
    /// Segment length as a fraction of T, min..max, both in (0,1).
    pub seg_len_range: (f64, f64),
    pub noise_scale: f64,
    pub signal_scale: f64,
    pub max_query_len: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_frames: 48,
            feat_dim: 32,
            vocab_size: 64,
            num_prototypes: 8,
            seg_len_range: (0.15, 0.45),
            noise_scale: 1.0,
            signal_scale: 5.0,
            max_query_len: 8,
            seed: 42,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_frames < 4 {
            return Err(Error::Config(format!("num_frames must be >= 4, got {}", self.num_frames)));
        }
        if self.feat_dim < 2 {
            return Err(Error::Config(format!("feat_dim must be >= 2, got {}", self.feat_dim)));
        }
        let (lo, hi) = self.seg_len_range;
        if !(0.0 < lo && lo <= hi && hi < 1.0) {
            return Err(Error::Config(format!(
                "segment range (seg_min, seg_max) must satisfy 0 < seg_min <= seg_max < 1, got ({lo}, {hi})"
            )));
        }
        if self.noise_scale < 0.0 || self.signal_scale <= 0.0 {
            return Err(Error::Config(format!(
                "scales must be positive (noise may be 0), got noise {} signal {}",
                self.noise_scale, self.signal_scale
            )));
        }
        if self.num_prototypes == 0 {
            return Err(Error::Config("need at least one prototype".into()));
        }
        // Token 0 is reserved; prototype k is encoded as token 1+k.
        if 1 + self.num_prototypes >= self.vocab_size {
            return Err(Error::Config(format!(
                "vocab_size {} too small for {} prototypes plus reserved token",
                self.vocab_size, self.num_prototypes
            )));
        }
        if self.max_query_len == 0 || self.max_query_len > 20 {
            return Err(Error::Config(format!(
                "max_query_len must be in 1..=20, got {}",
                self.max_query_len
            )));
        }
        Ok(())
    }
}

// ── Generation ───────────────────────────────────────────────────────────

fn draw_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

/// Fixed prototype vector for an activity (`background = false`) or
/// background (`background = true`) id. Depends only on the config seed.
fn prototype(cfg: &SyntheticConfig, id: u32, background: bool) -> Vec<f64> {
    let kind = if background { 1 } else { 0 };
    let mut rng = derive_rng(cfg.seed, &[PURPOSE_PROTOTYPE, kind, id as u64]);
    draw_vector(&mut rng, cfg.feat_dim)
}

/// Generate one sample from an explicit RNG stream.
///
/// Frames in `[tau_s, tau_e]` are `signal_scale · p + noise_scale · η`
/// for the sample's activity prototype `p`; left and right context frames
/// use two background prototypes the same way. `tokens[0]` is `1 +
/// prototype id`, so the query identifies the planted activity; the
/// remaining tokens are filler drawn from the tail of the vocabulary.
pub fn generate_synthetic_pair(
    cfg: &SyntheticConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(FeatureSequence, QueryTokens, SegmentAnnotation)> {
    cfg.validate()?;
    let t = cfg.num_frames;
    let d = cfg.feat_dim;

    let proto_id = rng.random_range(0..cfg.num_prototypes);
    let (lo, hi) = cfg.seg_len_range;
    let frac = rng.random_range(lo..=hi);
    let seg_len = ((t as f64) * frac).round().clamp(1.0, t as f64) as usize;
    let tau_s = rng.random_range(0..=(t - seg_len));
    let tau_e = tau_s + seg_len - 1;

    let activity = prototype(cfg, proto_id, false);
    // Two background activities flank the segment; ids are offset by the
    // sample's prototype so different samples see different contexts.
    let bg_left = prototype(cfg, rng.random_range(0..cfg.num_prototypes), true);
    let bg_right = prototype(cfg, rng.random_range(0..cfg.num_prototypes), true);

    let mut data = vec![0f32; t * d];
    for i in 0..t {
        let base = if i < tau_s {
            &bg_left
        } else if i <= tau_e {
            &activity
        } else {
            &bg_right
        };
        for j in 0..d {
            let noise: f64 = StandardNormal.sample(rng);
            data[i * d + j] = (cfg.signal_scale * base[j] + cfg.noise_scale * noise) as f32;
        }
    }
    let features = FeatureSequence::new(Tensor::new(t, d, data)?)?;

    let n = rng.random_range(2..=cfg.max_query_len);
    let mut tokens = Vec::with_capacity(n);
    tokens.push(1 + proto_id);
    let filler_base = 1 + cfg.num_prototypes;
    for _ in 1..n {
        tokens.push(rng.random_range(filler_base..cfg.vocab_size));
    }
    let query = QueryTokens(tokens);
    query.validate(cfg.vocab_size, cfg.max_query_len)?;

    Ok((features, query, SegmentAnnotation { tau_s, tau_e }))
}

/// Generate the sample with the given index on its own derived stream.
pub fn pair_for_sample(
    cfg: &SyntheticConfig,
    sample_index: u64,
) -> Result<(FeatureSequence, QueryTokens, SegmentAnnotation)> {
    let mut rng = derive_rng(cfg.seed, &[PURPOSE_SAMPLE, sample_index]);
    generate_synthetic_pair(cfg, &mut rng)
}

/// Train/val/test manifests produced by [`generate_dataset`].
#[derive(Debug, Clone)]
pub struct SplitManifests {
    pub train: DatasetManifest,
    pub val: DatasetManifest,
    pub test: DatasetManifest,
}

impl SplitManifests {
    pub fn all(&self) -> [&DatasetManifest; 3] {
        [&self.train, &self.val, &self.test]
    }
}

/// Generate `n_samples` pairs under `root`, write feature files and three
/// split manifests, and return the manifests. Split sizes are
/// `floor(n·frac)` for train and val; test takes the remainder.
pub fn generate_dataset(
    cfg: &SyntheticConfig,
    n_samples: usize,
    split_fracs: (f64, f64, f64),
    root: &Path,
) -> Result<SplitManifests> {
    cfg.validate()?;
    let (ft, fv, fe) = split_fracs;
    if !(ft >= 0.0 && fv >= 0.0 && fe >= 0.0) || ((ft + fv + fe) - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions must be nonnegative and sum to 1, got ({ft}, {fv}, {fe})"
        )));
    }
    if n_samples == 0 {
        return Err(Error::Config("n_samples must be positive".into()));
    }

    let feat_dir = root.join("features");
    fs::create_dir_all(&feat_dir).map_err(|e| Error::io(&feat_dir, e))?;

    // Samples are independent streams, so generation parallelizes.
    let generated = par::try_map_indexed(
        par::ExecMode::Parallel,
        &(0..n_samples as u64).collect::<Vec<_>>(),
        |_, &idx| pair_for_sample(cfg, idx),
    )?;

    let mut records = Vec::with_capacity(n_samples);
    for (idx, (features, query, ann)) in generated.iter().enumerate() {
        let id = format!("sample{idx:05}");
        let rel = PathBuf::from("features").join(format!("{id}.feat"));
        write_features(&root.join(&rel), features)?;
        records.push(ManifestRecord {
            id,
            path: rel,
            tokens: query.0.clone(),
            tau_s: ann.tau_s,
            tau_e: ann.tau_e,
            num_frames: features.num_frames(),
        });
    }

    let n_train = ((n_samples as f64) * ft).floor() as usize;
    let n_val = ((n_samples as f64) * fv).floor() as usize;
    let train: Vec<_> = records[..n_train].to_vec();
    let val: Vec<_> = records[n_train..n_train + n_val].to_vec();
    let test: Vec<_> = records[n_train + n_val..].to_vec();

    let make = |split: Split, recs: Vec<ManifestRecord>| -> Result<DatasetManifest> {
        let m = DatasetManifest {
            split,
            root: root.to_path_buf(),
            records: recs,
        };
        write_manifest(&root.join(format!("{}.tsv", split.name())), &m)?;
        Ok(m)
    };
    Ok(SplitManifests {
        train: make(Split::Train, train)?,
        val: make(Split::Val, val)?,
        test: make(Split::Test, test)?,
    })
}

// ── Feature file I/O ─────────────────────────────────────────────────────

/// Write a feature sequence in the binary container: `"ECRLFEAT"`,
/// version, T, D (as u32 little-endian), then T·D f32 little-endian
/// values in row-major order.
pub fn write_features(path: &Path, fs_: &FeatureSequence) -> Result<()> {
    let t = fs_.num_frames();
    let d = fs_.feat_dim();
    let mut buf = Vec::with_capacity(20 + t * d * 4);
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(t as u32).to_le_bytes());
    buf.extend_from_slice(&(d as u32).to_le_bytes());
    for &v in fs_.frames().data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn format_err(path: &Path, offset: u64, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        offset,
        msg: msg.into(),
    }
}

fn take<'a>(path: &Path, bytes: &'a [u8], offset: &mut u64, n: usize, what: &str) -> Result<&'a [u8]> {
    let start = *offset as usize;
    if start + n > bytes.len() {
        return Err(format_err(
            path,
            bytes.len() as u64,
            format!("truncated while reading {what}: need {n} bytes at offset {start}"),
        ));
    }
    *offset += n as u64;
    Ok(&bytes[start..start + n])
}

/// Read a feature file written by [`write_features`]. Round-trips are
/// bit-exact. Malformed input yields a format error carrying the byte
/// offset of the problem.
pub fn read_features(path: &Path) -> Result<FeatureSequence> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut off = 0u64;
    let magic = take(path, &bytes, &mut off, 8, "magic")?;
    if magic != FEATURE_MAGIC {
        return Err(format_err(
            path,
            0,
            format!("bad magic {magic:?}, expected {FEATURE_MAGIC:?} (\"ECRLFEAT\")"),
        ));
    }
    let ver = u32::from_le_bytes(take(path, &bytes, &mut off, 4, "version")?.try_into().unwrap());
    if ver != FEATURE_VERSION {
        return Err(format_err(path, 8, format!("unsupported version {ver}, expected {FEATURE_VERSION}")));
    }
    let t = u32::from_le_bytes(take(path, &bytes, &mut off, 4, "frame count")?.try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(take(path, &bytes, &mut off, 4, "feature dim")?.try_into().unwrap()) as usize;
    if t == 0 || d == 0 {
        return Err(format_err(path, 12, format!("degenerate shape {t}x{d}")));
    }
    let payload = take(path, &bytes, &mut off, t * d * 4, "payload")?;
    let mut data = Vec::with_capacity(t * d);
    for chunk in payload.chunks_exact(4) {
        data.push(f32::from_le_bytes(chunk.try_into().unwrap()));
    }
    if (off as usize) != bytes.len() {
        return Err(format_err(
            path,
            off,
            format!("{} trailing bytes after payload", bytes.len() - off as usize),
        ));
    }
    FeatureSequence::new(Tensor::new(t, d, data)?)
}

// ── Manifest I/O ─────────────────────────────────────────────────────────

/// Write a manifest: one tab-separated record per line (`id`, relative
/// path, space-separated token ids, `tau_s`, `tau_e`, `T`), with a `#`
/// comment header.
pub fn write_manifest(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!("# split: {}\n", manifest.split.name()));
    out.push_str("# id\tpath\ttokens\ttau_s\ttau_e\tframes\n");
    for r in &manifest.records {
        let toks: Vec<String> = r.tokens.iter().map(|t| t.to_string()).collect();
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            r.id,
            r.path.display(),
            toks.join(" "),
            r.tau_s,
            r.tau_e,
            r.num_frames
        ));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn manifest_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Manifest {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Read and validate a manifest. Feature paths are resolved against the
/// manifest's directory and must exist; annotations must satisfy the
/// segment invariants against the recorded frame count. Parse and
/// validation errors cite the 1-based line number. An empty manifest is
/// allowed (callers may warn).
pub fn read_manifest(path: &Path, split: Split) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));

    let mut records = Vec::new();
    let mut seen_ids = HashSet::new();
    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 6 {
            return Err(manifest_err(
                path,
                lineno,
                format!("expected 6 tab-separated fields, got {}", fields.len()),
            ));
        }
        let id = fields[0].to_string();
        if !seen_ids.insert(id.clone()) {
            return Err(manifest_err(path, lineno, format!("duplicate sample id {id:?}")));
        }
        let rel = PathBuf::from(fields[1]);
        let mut tokens = Vec::new();
        for tok in fields[2].split(' ').filter(|s| !s.is_empty()) {
            let t: u32 = tok
                .parse()
                .map_err(|_| manifest_err(path, lineno, format!("bad token id {tok:?}")))?;
            tokens.push(t);
        }
        if tokens.is_empty() {
            return Err(manifest_err(path, lineno, "record has no query tokens"));
        }
        let parse_usize = |name: &str, s: &str| -> Result<usize> {
            s.parse()
                .map_err(|_| manifest_err(path, lineno, format!("bad {name} {s:?}")))
        };
        let tau_s = parse_usize("tau_s", fields[3])?;
        let tau_e = parse_usize("tau_e", fields[4])?;
        let num_frames = parse_usize("frame count", fields[5])?;
        if tau_s > tau_e || tau_e >= num_frames {
            return Err(manifest_err(
                path,
                lineno,
                format!("annotation [{tau_s}, {tau_e}] invalid for {num_frames} frames"),
            ));
        }
        let resolved = root.join(&rel);
        if !resolved.is_file() {
            return Err(manifest_err(
                path,
                lineno,
                format!("feature file {} does not exist", resolved.display()),
            ));
        }
        records.push(ManifestRecord {
            id,
            path: rel,
            tokens,
            tau_s,
            tau_e,
            num_frames,
        });
    }
    Ok(DatasetManifest {
        split,
        root,
        records,
    })
}

/// Load every sample referenced by a manifest (parallel over records).
/// The on-disk frame count must match the manifest record.
pub fn load_samples(mode: par::ExecMode, manifest: &DatasetManifest) -> Result<Vec<Sample>> {
    par::try_map_indexed(mode, &manifest.records, |_, rec| {
        let full = manifest.root.join(&rec.path);
        let features = read_features(&full)?;
        if features.num_frames() != rec.num_frames {
            return Err(Error::Contract(format!(
                "sample {}: manifest says {} frames but {} holds {}",
                rec.id,
                rec.num_frames,
                full.display(),
                features.num_frames()
            )));
        }
        let annotation = SegmentAnnotation::new(rec.tau_s, rec.tau_e, rec.num_frames)?;
        Ok(Sample {
            id: rec.id.clone(),
            features,
            tokens: QueryTokens(rec.tokens.clone()),
            annotation,
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_rng;

    fn small_cfg() -> SyntheticConfig {
        SyntheticConfig {
            num_frames: 16,
            feat_dim: 6,
            ..SyntheticConfig::default()
        }
    }

    #[test]
    fn zero_noise_frames_equal_prototype() {
        let cfg = SyntheticConfig {
            noise_scale: 0.0,
            signal_scale: 1.0,
            ..small_cfg()
        };
        let mut rng = derive_rng(1, &[0]);
        let (fs_, q, ann) = generate_synthetic_pair(&cfg, &mut rng).unwrap();
        let proto_id = q.0[0] - 1;
        let proto = prototype(&cfg, proto_id, false);
        for i in ann.tau_s..=ann.tau_e {
            for j in 0..cfg.feat_dim {
                assert_eq!(fs_.frames().get(i, j), proto[j] as f32);
            }
        }
    }

    #[test]
    fn same_seed_identical_output() {
        let cfg = small_cfg();
        let a = pair_for_sample(&cfg, 7).unwrap();
        let b = pair_for_sample(&cfg, 7).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        assert_eq!(a.2, b.2);
        let c = pair_for_sample(&cfg, 8).unwrap();
        assert!(a.0 != c.0 || a.1 != c.1 || a.2 != c.2);
    }

    #[test]
    fn in_segment_similarity_beats_cross_similarity() {
        // Monte-Carlo: with signal/noise = 5 the planted structure must
        // dominate. Cosine between two in-segment frames should, on
        // average, clearly exceed cosine between in- and out-of-segment
        // frames.
        let cfg = SyntheticConfig {
            signal_scale: 5.0,
            noise_scale: 1.0,
            ..SyntheticConfig::default()
        };
        let cos = |a: &[f32], b: &[f32]| -> f64 {
            let (mut dot, mut na, mut nb) = (0f64, 0f64, 0f64);
            for (x, y) in a.iter().zip(b) {
                dot += (*x as f64) * (*y as f64);
                na += (*x as f64).powi(2);
                nb += (*y as f64).powi(2);
            }
            dot / (na.sqrt() * nb.sqrt())
        };
        let mut in_in = Vec::new();
        let mut in_out = Vec::new();
        for s in 0..100u64 {
            let (fs_, _, ann) = pair_for_sample(&cfg, s).unwrap();
            let f = fs_.frames();
            let inside: Vec<usize> = (ann.tau_s..=ann.tau_e).collect();
            let outside: Vec<usize> = (0..f.rows()).filter(|i| *i < ann.tau_s || *i > ann.tau_e).collect();
            if inside.len() < 2 || outside.is_empty() {
                continue;
            }
            in_in.push(cos(f.row(inside[0]), f.row(inside[inside.len() - 1])));
            in_out.push(cos(f.row(inside[0]), f.row(outside[0])));
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(
            mean(&in_in) > mean(&in_out) + 0.2,
            "in-in {} vs in-out {}",
            mean(&in_in),
            mean(&in_out)
        );
    }

    #[test]
    fn prototype_id_recoverable_from_tokens() {
        let cfg = small_cfg();
        for s in 0..50u64 {
            let (_, q, _) = pair_for_sample(&cfg, s).unwrap();
            let proto_id = q.0[0].checked_sub(1).expect("token 0 is reserved");
            assert!(proto_id < cfg.num_prototypes);
            // filler tokens never collide with prototype encodings
            for &t in &q.0[1..] {
                assert!(t > cfg.num_prototypes);
            }
        }
    }

    #[test]
    fn feature_roundtrip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = derive_rng(3, &[1]);
        let t = Tensor::<f32>::randn(8, 4, 1.0, &mut rng);
        let fs_ = FeatureSequence::new(t).unwrap();
        let p = dir.path().join("x.feat");
        write_features(&p, &fs_).unwrap();
        let back = read_features(&p).unwrap();
        assert_eq!(fs_.frames().data(), back.frames().data());
    }

    #[test]
    fn truncated_feature_file_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = derive_rng(3, &[2]);
        let fs_ = FeatureSequence::new(Tensor::<f32>::randn(8, 4, 1.0, &mut rng)).unwrap();
        let p = dir.path().join("x.feat");
        write_features(&p, &fs_).unwrap();
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 5]).unwrap();
        match read_features(&p) {
            Err(Error::Format { offset, .. }) => assert!(offset > 0),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn corrupted_magic_names_expected_magic() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = derive_rng(3, &[3]);
        let fs_ = FeatureSequence::new(Tensor::<f32>::randn(8, 4, 1.0, &mut rng)).unwrap();
        let p = dir.path().join("x.feat");
        write_features(&p, &fs_).unwrap();
        let mut bytes = fs::read(&p).unwrap();
        bytes[0] = b'X';
        fs::write(&p, &bytes).unwrap();
        match read_features(&p) {
            Err(Error::Format { offset, msg, .. }) => {
                assert_eq!(offset, 0);
                assert!(msg.contains("ECRLFEAT"), "msg: {msg}");
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn trailing_bytes_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = derive_rng(3, &[4]);
        let fs_ = FeatureSequence::new(Tensor::<f32>::randn(8, 4, 1.0, &mut rng)).unwrap();
        let p = dir.path().join("x.feat");
        write_features(&p, &fs_).unwrap();
        let mut bytes = fs::read(&p).unwrap();
        bytes.push(0);
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_features(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn dataset_split_8_1_1() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_cfg();
        let splits = generate_dataset(&cfg, 10, (0.8, 0.1, 0.1), dir.path()).unwrap();
        assert_eq!(splits.train.records.len(), 8);
        assert_eq!(splits.val.records.len(), 1);
        assert_eq!(splits.test.records.len(), 1);
    }

    #[test]
    fn manifest_roundtrip_validates() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_cfg();
        let splits = generate_dataset(&cfg, 6, (0.5, 0.25, 0.25), dir.path()).unwrap();
        for split in [Split::Train, Split::Val, Split::Test] {
            let m = read_manifest(&dir.path().join(format!("{}.tsv", split.name())), split).unwrap();
            for r in &m.records {
                r.annotation().validate(r.num_frames).unwrap();
            }
            let samples = load_samples(par::ExecMode::Sequential, &m).unwrap();
            assert_eq!(samples.len(), m.records.len());
        }
        assert_eq!(splits.train.records.len(), 3);
    }

    #[test]
    fn same_seed_byte_identical_dataset() {
        let cfg = small_cfg();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        generate_dataset(&cfg, 5, (0.6, 0.2, 0.2), d1.path()).unwrap();
        generate_dataset(&cfg, 5, (0.6, 0.2, 0.2), d2.path()).unwrap();
        for name in ["train.tsv", "val.tsv", "test.tsv"] {
            let a = fs::read(d1.path().join(name)).unwrap();
            let b = fs::read(d2.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs");
        }
        for i in 0..5 {
            let rel = format!("features/sample{i:05}.feat");
            let a = fs::read(d1.path().join(&rel)).unwrap();
            let b = fs::read(d2.path().join(&rel)).unwrap();
            assert_eq!(a, b, "{rel} differs");
        }
    }

    #[test]
    fn bad_annotation_cites_line() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_cfg();
        generate_dataset(&cfg, 3, (1.0, 0.0, 0.0), dir.path()).unwrap();
        let mpath = dir.path().join("train.tsv");
        let text = fs::read_to_string(&mpath).unwrap();
        // Corrupt the second record's tau_e to exceed T.
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let rec_line = lines.iter().position(|l| l.starts_with("sample00001")).unwrap();
        let mut fields: Vec<String> = lines[rec_line].split('\t').map(String::from).collect();
        fields[4] = "999".into();
        lines[rec_line] = fields.join("\t");
        fs::write(&mpath, lines.join("\n")).unwrap();
        match read_manifest(&mpath, Split::Train) {
            Err(Error::Manifest { line, .. }) => assert_eq!(line, rec_line + 1),
            other => panic!("expected manifest error, got {other:?}"),
        }
    }

    #[test]
    fn dangling_path_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mpath = dir.path().join("m.tsv");
        fs::write(&mpath, "s0\tmissing.feat\t1 2\t0\t3\t8\n").unwrap();
        assert!(matches!(
            read_manifest(&mpath, Split::Train),
            Err(Error::Manifest { line: 1, .. })
        ));
    }

    #[test]
    fn empty_manifest_is_ok_and_empty() {
        let dir = tempfile::tempdir().unwrap();
        let mpath = dir.path().join("m.tsv");
        fs::write(&mpath, "# nothing here\n").unwrap();
        let m = read_manifest(&mpath, Split::Val).unwrap();
        assert!(m.records.is_empty());
    }

    #[test]
    fn config_validation_rejects_bad_ranges() {
        let mut cfg = small_cfg();
        cfg.seg_len_range = (0.5, 0.2);
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = small_cfg();
        cfg.vocab_size = cfg.num_prototypes; // no room for token 0 + encodings
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
