//! Model parameters: plain tensors on the host side, bound handles on a
//! tape during a forward pass.
//!
//! `entries`/`entries_mut`/`bind` must all walk parameters in the same
//! order — optimizers pair gradients with parameters positionally. A
//! unit test pins the three orders together.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rng::{derive_rng, PURPOSE_INIT};
use crate::tensor::{Scalar, Tape, Tensor, TensorId};

/// One LSTM direction: gate order is input, forget, candidate, output
/// along the `4H` axis.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams<S> {
    /// `D_in × 4H`
    pub w_x: Tensor<S>,
    /// `H × 4H`
    pub w_h: Tensor<S>,
    /// `1 × 4H`
    pub b: Tensor<S>,
}

#[derive(Debug, Clone, Copy)]
pub struct LstmBound {
    pub w_x: TensorId,
    pub w_h: TensorId,
    pub b: TensorId,
}

impl<S: Scalar> LstmParams<S> {
    fn init(d_in: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let w_x = Tensor::randn(d_in, 4 * hidden, 1.0 / (d_in as f64).sqrt(), rng);
        let w_h = Tensor::randn(hidden, 4 * hidden, 1.0 / (hidden as f64).sqrt(), rng);
        // Forget-gate bias starts at 1 so early training keeps memory.
        let mut b = Tensor::zeros(1, 4 * hidden);
        for k in hidden..2 * hidden {
            b.set(0, k, S::one());
        }
        LstmParams { w_x, w_h, b }
    }

    pub fn hidden(&self) -> usize {
        self.w_h.rows()
    }

    fn bind(&self, tape: &mut Tape<S>) -> LstmBound {
        LstmBound {
            w_x: tape.param(&self.w_x),
            w_h: tape.param(&self.w_h),
            b: tape.param(&self.b),
        }
    }

    fn entries<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<S>)>) {
        out.push((format!("{prefix}.w_x"), &self.w_x));
        out.push((format!("{prefix}.w_h"), &self.w_h));
        out.push((format!("{prefix}.b"), &self.b));
    }

    fn entries_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<S>)>) {
        out.push((format!("{prefix}.w_x"), &mut self.w_x));
        out.push((format!("{prefix}.w_h"), &mut self.w_h));
        out.push((format!("{prefix}.b"), &mut self.b));
    }
}

/// Forward + backward LSTM directions.
#[derive(Debug, Clone, PartialEq)]
pub struct BiLstmParams<S> {
    pub fwd: LstmParams<S>,
    pub bwd: LstmParams<S>,
}

#[derive(Debug, Clone, Copy)]
pub struct BiLstmBound {
    pub fwd: LstmBound,
    pub bwd: LstmBound,
}

impl<S: Scalar> BiLstmParams<S> {
    fn init(d_in: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        BiLstmParams {
            fwd: LstmParams::init(d_in, hidden, rng),
            bwd: LstmParams::init(d_in, hidden, rng),
        }
    }

    fn bind(&self, tape: &mut Tape<S>) -> BiLstmBound {
        BiLstmBound {
            fwd: self.fwd.bind(tape),
            bwd: self.bwd.bind(tape),
        }
    }

    fn entries<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<S>)>) {
        self.fwd.entries(&format!("{prefix}.fwd"), out);
        self.bwd.entries(&format!("{prefix}.bwd"), out);
    }

    fn entries_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<S>)>) {
        self.fwd.entries_mut(&format!("{prefix}.fwd"), out);
        self.bwd.entries_mut(&format!("{prefix}.bwd"), out);
    }
}

/// Single-head self-attention projections.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams<S> {
    pub w_q: Tensor<S>,
    pub w_k: Tensor<S>,
    pub w_v: Tensor<S>,
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionBound {
    pub w_q: TensorId,
    pub w_k: TensorId,
    pub w_v: TensorId,
}

impl<S: Scalar> AttentionParams<S> {
    fn init(dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let std = 1.0 / (dim as f64).sqrt();
        AttentionParams {
            w_q: Tensor::randn(dim, dim, std, rng),
            w_k: Tensor::randn(dim, dim, std, rng),
            w_v: Tensor::randn(dim, dim, std, rng),
        }
    }

    fn bind(&self, tape: &mut Tape<S>) -> AttentionBound {
        AttentionBound {
            w_q: tape.param(&self.w_q),
            w_k: tape.param(&self.w_k),
            w_v: tape.param(&self.w_v),
        }
    }

    fn entries<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<S>)>) {
        out.push((format!("{prefix}.w_q"), &self.w_q));
        out.push((format!("{prefix}.w_k"), &self.w_k));
        out.push((format!("{prefix}.w_v"), &self.w_v));
    }

    fn entries_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<S>)>) {
        out.push((format!("{prefix}.w_q"), &mut self.w_q));
        out.push((format!("{prefix}.w_k"), &mut self.w_k));
        out.push((format!("{prefix}.w_v"), &mut self.w_v));
    }
}

/// An encoder stage: BiLSTM plus the linear map back to width `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<S> {
    pub lstm: BiLstmParams<S>,
    /// `2H × D`
    pub proj: Tensor<S>,
    /// `1 × D`
    pub proj_b: Tensor<S>,
}

#[derive(Debug, Clone, Copy)]
pub struct EncoderBound {
    pub lstm: BiLstmBound,
    pub proj: TensorId,
    pub proj_b: TensorId,
}

impl<S: Scalar> EncoderParams<S> {
    fn init(d_in: usize, hidden: usize, d_out: usize, rng: &mut ChaCha8Rng) -> Self {
        EncoderParams {
            lstm: BiLstmParams::init(d_in, hidden, rng),
            proj: Tensor::randn(2 * hidden, d_out, 1.0 / ((2 * hidden) as f64).sqrt(), rng),
            proj_b: Tensor::zeros(1, d_out),
        }
    }

    fn bind(&self, tape: &mut Tape<S>) -> EncoderBound {
        EncoderBound {
            lstm: self.lstm.bind(tape),
            proj: tape.param(&self.proj),
            proj_b: tape.param(&self.proj_b),
        }
    }

    fn entries<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<S>)>) {
        self.lstm.entries(&format!("{prefix}.lstm"), out);
        out.push((format!("{prefix}.proj"), &self.proj));
        out.push((format!("{prefix}.proj_b"), &self.proj_b));
    }

    fn entries_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<S>)>) {
        self.lstm.entries_mut(&format!("{prefix}.lstm"), out);
        out.push((format!("{prefix}.proj"), &mut self.proj));
        out.push((format!("{prefix}.proj_b"), &mut self.proj_b));
    }
}

/// One boundary head: a causal LSTM plus the per-frame scoring map over
/// `[v̂_t; h_t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams<S> {
    pub lstm: LstmParams<S>,
    /// `(D+H) × 1`
    pub w: Tensor<S>,
    /// `1 × 1`
    pub b: Tensor<S>,
}

#[derive(Debug, Clone, Copy)]
pub struct HeadBound {
    pub lstm: LstmBound,
    pub w: TensorId,
    pub b: TensorId,
}

impl<S: Scalar> HeadParams<S> {
    fn init(dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        HeadParams {
            lstm: LstmParams::init(dim, hidden, rng),
            w: Tensor::randn(dim + hidden, 1, 1.0 / ((dim + hidden) as f64).sqrt(), rng),
            b: Tensor::zeros(1, 1),
        }
    }

    fn bind(&self, tape: &mut Tape<S>) -> HeadBound {
        HeadBound {
            lstm: self.lstm.bind(tape),
            w: tape.param(&self.w),
            b: tape.param(&self.b),
        }
    }

    fn entries<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<S>)>) {
        self.lstm.entries(&format!("{prefix}.lstm"), out);
        out.push((format!("{prefix}.w"), &self.w));
        out.push((format!("{prefix}.b"), &self.b));
    }

    fn entries_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<S>)>) {
        self.lstm.entries_mut(&format!("{prefix}.lstm"), out);
        out.push((format!("{prefix}.w"), &mut self.w));
        out.push((format!("{prefix}.b"), &mut self.b));
    }
}

/// Every trainable tensor in the network. Both video streams (original
/// and augmented) run through one instance, so the fusion projection and
/// the grounding heads are shared by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<S> {
    /// `V × D` token embedding table.
    pub embed: Tensor<S>,
    pub att_video: AttentionParams<S>,
    pub att_query: AttentionParams<S>,
    pub enc_video: EncoderParams<S>,
    pub enc_query: EncoderParams<S>,
    /// `D × D` fusion projection applied to the query (the shared W_S).
    pub w_s: Tensor<S>,
    /// Fusion stage over the `T×4D` concatenation.
    pub enc_fuse: EncoderParams<S>,
    pub head_start: HeadParams<S>,
    pub head_end: HeadParams<S>,
}

/// Tape handles for one bound forward pass.
#[derive(Debug, Clone, Copy)]
pub struct BoundParams {
    pub embed: TensorId,
    pub att_video: AttentionBound,
    pub att_query: AttentionBound,
    pub enc_video: EncoderBound,
    pub enc_query: EncoderBound,
    pub w_s: TensorId,
    pub enc_fuse: EncoderBound,
    pub head_start: HeadBound,
    pub head_end: HeadBound,
}

impl<S: Scalar> ModelParams<S> {
    /// Initialize all parameters from the given seed. Weight tensors are
    /// Gaussian with standard deviation `1/√fan_in`; biases are zero
    /// except LSTM forget gates (one).
    pub fn init(feat_dim: usize, hidden: usize, vocab_size: u32, seed: u64) -> Result<Self> {
        if feat_dim < 2 || hidden < 1 || vocab_size < 2 {
            return Err(Error::Config(format!(
                "bad model dims: D={feat_dim}, H={hidden}, vocab={vocab_size}"
            )));
        }
        let mut rng = derive_rng(seed, &[PURPOSE_INIT]);
        let d = feat_dim;
        let h = hidden;
        Ok(ModelParams {
            embed: Tensor::randn(vocab_size as usize, d, 1.0, &mut rng),
            att_video: AttentionParams::init(d, &mut rng),
            att_query: AttentionParams::init(d, &mut rng),
            enc_video: EncoderParams::init(d, h, d, &mut rng),
            enc_query: EncoderParams::init(d, h, d, &mut rng),
            w_s: Tensor::randn(d, d, 1.0 / (d as f64).sqrt(), &mut rng),
            enc_fuse: EncoderParams::init(4 * d, h, d, &mut rng),
            head_start: HeadParams::init(d, h, &mut rng),
            head_end: HeadParams::init(d, h, &mut rng),
        })
    }

    pub fn feat_dim(&self) -> usize {
        self.embed.cols()
    }

    pub fn hidden(&self) -> usize {
        self.head_start.lstm.hidden()
    }

    pub fn vocab_size(&self) -> u32 {
        self.embed.rows() as u32
    }

    /// Put every parameter on a tape as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape<S>) -> BoundParams {
        BoundParams {
            embed: tape.param(&self.embed),
            att_video: self.att_video.bind(tape),
            att_query: self.att_query.bind(tape),
            enc_video: self.enc_video.bind(tape),
            enc_query: self.enc_query.bind(tape),
            w_s: tape.param(&self.w_s),
            enc_fuse: self.enc_fuse.bind(tape),
            head_start: self.head_start.bind(tape),
            head_end: self.head_end.bind(tape),
        }
    }

    /// Named parameter tensors in the canonical order.
    pub fn entries(&self) -> Vec<(String, &Tensor<S>)> {
        let mut out = Vec::new();
        out.push(("embed".to_string(), &self.embed));
        self.att_video.entries("att_video", &mut out);
        self.att_query.entries("att_query", &mut out);
        self.enc_video.entries("enc_video", &mut out);
        self.enc_query.entries("enc_query", &mut out);
        out.push(("w_s".to_string(), &self.w_s));
        self.enc_fuse.entries("enc_fuse", &mut out);
        self.head_start.entries("head_start", &mut out);
        self.head_end.entries("head_end", &mut out);
        out
    }

    /// Mutable view in the same canonical order as [`Self::entries`].
    pub fn entries_mut(&mut self) -> Vec<(String, &mut Tensor<S>)> {
        let mut out = Vec::new();
        out.push(("embed".to_string(), &mut self.embed));
        self.att_video.entries_mut("att_video", &mut out);
        self.att_query.entries_mut("att_query", &mut out);
        self.enc_video.entries_mut("enc_video", &mut out);
        self.enc_query.entries_mut("enc_query", &mut out);
        out.push(("w_s".to_string(), &mut self.w_s));
        self.enc_fuse.entries_mut("enc_fuse", &mut out);
        self.head_start.entries_mut("head_start", &mut out);
        self.head_end.entries_mut("head_end", &mut out);
        out
    }

    /// Total number of scalar parameters.
    pub fn num_params(&self) -> usize {
        self.entries().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Flatten all parameters into one vector (canonical order).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (_, t) in self.entries() {
            out.extend(t.to_f64_vec());
        }
        out
    }

    /// Segment labels matching [`Self::flatten`] for diagnostics.
    pub fn segments(&self) -> Vec<(String, usize)> {
        self.entries()
            .into_iter()
            .map(|(n, t)| (n, t.numel()))
            .collect()
    }

    /// Rebuild parameters from a flat vector (canonical order).
    pub fn unflatten(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.num_params() {
            return Err(Error::Dimension(format!(
                "unflatten: expected {} values, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let mut out = self.clone();
        let mut off = 0;
        for (_, t) in out.entries_mut() {
            let n = t.numel();
            for (k, v) in flat[off..off + n].iter().enumerate() {
                t.data_mut()[k] = S::from_f64(*v);
            }
            off += n;
        }
        Ok(out)
    }

    pub fn cast<T: Scalar>(&self) -> ModelParams<T> {
        ModelParams {
            embed: self.embed.cast(),
            att_video: AttentionParams {
                w_q: self.att_video.w_q.cast(),
                w_k: self.att_video.w_k.cast(),
                w_v: self.att_video.w_v.cast(),
            },
            att_query: AttentionParams {
                w_q: self.att_query.w_q.cast(),
                w_k: self.att_query.w_k.cast(),
                w_v: self.att_query.w_v.cast(),
            },
            enc_video: cast_encoder(&self.enc_video),
            enc_query: cast_encoder(&self.enc_query),
            w_s: self.w_s.cast(),
            enc_fuse: cast_encoder(&self.enc_fuse),
            head_start: cast_head(&self.head_start),
            head_end: cast_head(&self.head_end),
        }
    }
}

fn cast_lstm<S: Scalar, T: Scalar>(p: &LstmParams<S>) -> LstmParams<T> {
    LstmParams {
        w_x: p.w_x.cast(),
        w_h: p.w_h.cast(),
        b: p.b.cast(),
    }
}

fn cast_encoder<S: Scalar, T: Scalar>(p: &EncoderParams<S>) -> EncoderParams<T> {
    EncoderParams {
        lstm: BiLstmParams {
            fwd: cast_lstm(&p.lstm.fwd),
            bwd: cast_lstm(&p.lstm.bwd),
        },
        proj: p.proj.cast(),
        proj_b: p.proj_b.cast(),
    }
}

fn cast_head<S: Scalar, T: Scalar>(p: &HeadParams<S>) -> HeadParams<T> {
    HeadParams {
        lstm: cast_lstm(&p.lstm),
        w: p.w.cast(),
        b: p.b.cast(),
    }
}

impl BoundParams {
    /// Tape ids in the same canonical order as [`ModelParams::entries`].
    pub fn ids(&self) -> Vec<TensorId> {
        let lstm = |l: &LstmBound, out: &mut Vec<TensorId>| {
            out.extend([l.w_x, l.w_h, l.b]);
        };
        let att = |a: &AttentionBound, out: &mut Vec<TensorId>| {
            out.extend([a.w_q, a.w_k, a.w_v]);
        };
        let enc = |e: &EncoderBound, out: &mut Vec<TensorId>| {
            lstm(&e.lstm.fwd, out);
            lstm(&e.lstm.bwd, out);
            out.extend([e.proj, e.proj_b]);
        };
        let head = |h: &HeadBound, out: &mut Vec<TensorId>| {
            lstm(&h.lstm, out);
            out.extend([h.w, h.b]);
        };
        let mut out = vec![self.embed];
        att(&self.att_video, &mut out);
        att(&self.att_query, &mut out);
        enc(&self.enc_video, &mut out);
        enc(&self.enc_query, &mut out);
        out.push(self.w_s);
        enc(&self.enc_fuse, &mut out);
        head(&self.head_start, &mut out);
        head(&self.head_end, &mut out);
        out
    }
}
