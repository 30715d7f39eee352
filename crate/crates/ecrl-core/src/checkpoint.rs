//! Checkpoint serialization.
//!
//! Layout, all little-endian: magic `ECRLCKPT`, version `u32`, config
//! hash `u64`, then named float arrays, each as name length `u32`, name
//! bytes, element count `u64`, elements `f32`. The first array, `meta`,
//! carries epoch, optimizer step, model dimensions and refine settings,
//! so a checkpoint alone is enough to rebuild and run the model.

use crate::error::{Error, Result};
use crate::model::{ModelParams, SelfRefineConfig};
use crate::tensor::AdamState;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ECRLCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Largest integer stored losslessly in an f32 meta slot.
const META_INT_MAX: u64 = 1 << 24;

/// Everything needed to resume training or evaluate.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointRecord {
    /// Last completed epoch (1-based; 0 means untrained).
    pub epoch: u32,
    pub config_hash: u64,
    pub refine: SelfRefineConfig,
    pub params: ModelParams<f32>,
    /// Optimizer moments aligned with `params.entries()`.
    pub moments: Vec<AdamState<f32>>,
    /// Shared Adam step counter.
    pub adam_t: u64,
}

impl CheckpointRecord {
    /// A fresh record for an untrained model.
    pub fn fresh(params: ModelParams<f32>, refine: SelfRefineConfig, config_hash: u64) -> Self {
        let moments = params
            .entries()
            .iter()
            .map(|(_, t)| AdamState::for_param(t))
            .collect();
        CheckpointRecord {
            epoch: 0,
            config_hash,
            refine,
            params,
            moments,
            adam_t: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        let entries = self.params.entries();
        if self.moments.len() != entries.len() {
            return Err(Error::Checkpoint(format!(
                "{} moment buffers for {} parameter tensors",
                self.moments.len(),
                entries.len()
            )));
        }
        for ((name, t), st) in entries.iter().zip(&self.moments) {
            if st.m.shape() != t.shape() || st.v.shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "moment shape mismatch on {name}"
                )));
            }
            if st.t != self.adam_t {
                return Err(Error::Checkpoint(format!(
                    "moment step {} on {name} disagrees with shared step {}",
                    st.t, self.adam_t
                )));
            }
        }
        for v in [self.epoch as u64, self.adam_t] {
            if v > META_INT_MAX {
                return Err(Error::Checkpoint(format!("counter {v} too large to store")));
            }
        }
        Ok(())
    }
}

fn write_array<W: Write>(w: &mut W, name: &str, data: &[f32]) -> std::io::Result<()> {
    w.write_all(&(name.len() as u32).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&(data.len() as u64).to_le_bytes())?;
    for &x in data {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.to_path_buf(), source }
}

pub fn save_checkpoint(path: &Path, rec: &CheckpointRecord) -> Result<()> {
    rec.validate()?;
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    let inner = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&rec.config_hash.to_le_bytes())?;
        let meta = [
            rec.epoch as f32,
            rec.adam_t as f32,
            rec.params.feat_dim() as f32,
            rec.params.hidden() as f32,
            rec.params.vocab_size() as f32,
            rec.refine.sigma as f32,
            rec.refine.iterations as f32,
            if rec.refine.row_normalize { 1.0 } else { 0.0 },
        ];
        write_array(w, "meta", &meta)?;
        for (name, t) in rec.params.entries() {
            write_array(w, &format!("param/{name}"), t.data())?;
        }
        for ((name, _), st) in rec.params.entries().iter().zip(&rec.moments) {
            write_array(w, &format!("adam_m/{name}"), st.m.data())?;
            write_array(w, &format!("adam_v/{name}"), st.v.data())?;
        }
        w.flush()
    };
    inner(&mut w).map_err(|e| io_err(path, e))
}

struct ArrayReader<R> {
    r: R,
    offset: u64,
}

impl<R: Read> ArrayReader<R> {
    fn take(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.r.read_exact(&mut buf).map_err(|_| {
            Error::Checkpoint(format!("truncated reading {what} at offset {}", self.offset))
        })?;
        self.offset += n as u64;
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    /// Read one array; `None` at a clean end of file.
    fn array(&mut self) -> Result<Option<(String, Vec<f32>)>> {
        let mut first = [0u8; 4];
        let mut got = 0usize;
        while got < 4 {
            let n = self
                .r
                .read(&mut first[got..])
                .map_err(|e| Error::Checkpoint(format!("read failed: {e}")))?;
            if n == 0 {
                break;
            }
            got += n;
        }
        if got == 0 {
            return Ok(None);
        }
        if got < 4 {
            return Err(Error::Checkpoint(format!(
                "trailing bytes at offset {}",
                self.offset
            )));
        }
        self.offset += 4;
        let name_len = u32::from_le_bytes(first) as usize;
        if name_len == 0 || name_len > 256 {
            return Err(Error::Checkpoint(format!(
                "implausible name length {name_len} at offset {}",
                self.offset
            )));
        }
        let name_bytes = self.take(name_len, "array name")?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::Checkpoint("array name is not UTF-8".into()))?;
        let count = self.u64(&format!("length of {name}"))? as usize;
        let raw = self.take(count * 4, &format!("data of {name}"))?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok(Some((name, data)))
    }
}

fn meta_usize(v: f32, what: &str) -> Result<usize> {
    if !(v.is_finite() && v >= 0.0 && v.fract() == 0.0 && v <= META_INT_MAX as f32) {
        return Err(Error::Checkpoint(format!("meta field {what} is not a counter: {v}")));
    }
    Ok(v as usize)
}

pub fn load_checkpoint(path: &Path) -> Result<CheckpointRecord> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut r = ArrayReader { r: BufReader::new(file), offset: 0 };

    let magic = r.take(8, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic {:?}, expected ECRLCKPT",
            String::from_utf8_lossy(&magic)
        )));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let config_hash = r.u64("config hash")?;

    let (meta_name, meta) = r
        .array()?
        .ok_or_else(|| Error::Checkpoint("missing meta array".into()))?;
    if meta_name != "meta" || meta.len() != 8 {
        return Err(Error::Checkpoint(format!(
            "expected 8-element meta array first, found {meta_name} with {} elements",
            meta.len()
        )));
    }
    let epoch = meta_usize(meta[0], "epoch")? as u32;
    let adam_t = meta_usize(meta[1], "adam_t")? as u64;
    let feat_dim = meta_usize(meta[2], "feat_dim")?;
    let hidden = meta_usize(meta[3], "hidden")?;
    let vocab = meta_usize(meta[4], "vocab_size")?;
    let refine = SelfRefineConfig {
        sigma: meta[5] as f64,
        iterations: meta_usize(meta[6], "iterations")?,
        row_normalize: meta[7] != 0.0,
    };
    if !(refine.sigma > 0.0) {
        return Err(Error::Checkpoint(format!("bad refine sigma {}", refine.sigma)));
    }

    // Template with the right shapes; every value gets overwritten.
    let mut params = ModelParams::<f32>::init(feat_dim, hidden, vocab as u32, 0)
        .map_err(|e| Error::Checkpoint(format!("meta dims rejected: {e}")))?;
    let names: Vec<String> = params.segments().into_iter().map(|(n, _)| n).collect();

    let fill = |expected: &str, dst: &mut [f32], r: &mut ArrayReader<BufReader<File>>| -> Result<()> {
        let (name, data) = r
            .array()?
            .ok_or_else(|| Error::Checkpoint(format!("missing array {expected}")))?;
        if name != expected {
            return Err(Error::Checkpoint(format!(
                "expected array {expected}, found {name}"
            )));
        }
        if data.len() != dst.len() {
            return Err(Error::Checkpoint(format!(
                "array {name} has {} elements, expected {}",
                data.len(),
                dst.len()
            )));
        }
        dst.copy_from_slice(&data);
        Ok(())
    };

    for (name, t) in params.entries_mut() {
        fill(&format!("param/{name}"), t.data_mut(), &mut r)?;
    }
    let mut moments: Vec<AdamState<f32>> = params
        .entries()
        .iter()
        .map(|(_, t)| AdamState::for_param(t))
        .collect();
    for (name, st) in names.iter().zip(moments.iter_mut()) {
        fill(&format!("adam_m/{name}"), st.m.data_mut(), &mut r)?;
        fill(&format!("adam_v/{name}"), st.v.data_mut(), &mut r)?;
        st.t = adam_t;
    }
    if r.array()?.is_some() {
        return Err(Error::Checkpoint("unexpected extra array after moments".into()));
    }
    let rec = CheckpointRecord {
        epoch,
        config_hash,
        refine,
        params,
        moments,
        adam_t,
    };
    rec.validate()?;
    Ok(rec)
}
