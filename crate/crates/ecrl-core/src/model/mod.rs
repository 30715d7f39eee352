//! The grounding network: self-refine smoothing, a self-attention +
//! BiLSTM encoder per modality, co-attention fusion, and per-frame
//! start/end scoring heads.
//!
//! Every operation records onto a caller-supplied [`Tape`], so one
//! forward pass over the original and augmented streams shares a single
//! parameter binding and backward produces joint gradients.

mod params;

pub use params::{
    AttentionBound, AttentionParams, BiLstmBound, BiLstmParams, BoundParams, EncoderBound,
    EncoderParams, HeadBound, HeadParams, LstmBound, LstmParams, ModelParams,
};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Tensor, TensorId};

/// Denominator guard for self-refine row normalization.
pub const REFINE_EPS: f64 = 1e-8;

/// Settings for the iterative self-refine smoothing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelfRefineConfig {
    /// Width of the temporal Gaussian kernel.
    pub sigma: f64,
    pub iterations: usize,
    /// Clamp negative affinities to zero and normalize each row; the
    /// unnormalized literal update is available by turning this off.
    pub row_normalize: bool,
}

impl Default for SelfRefineConfig {
    fn default() -> Self {
        SelfRefineConfig {
            sigma: 5.0,
            iterations: 3,
            row_normalize: true,
        }
    }
}

impl SelfRefineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) {
            return Err(Error::Config(format!("sigma must be positive, got {}", self.sigma)));
        }
        Ok(())
    }
}

/// The temporal affinity kernel `exp(−(i−j)²/2σ²)` as a constant.
fn temporal_kernel<S: Scalar>(t: usize, sigma: f64) -> Tensor<S> {
    let mut data = Vec::with_capacity(t * t);
    for i in 0..t {
        for j in 0..t {
            let d = i as f64 - j as f64;
            data.push(S::from_f64((-d * d / (2.0 * sigma * sigma)).exp()));
        }
    }
    Tensor::new(t, t, data).expect("t >= 1")
}

/// Iteratively smooth frame features over a fully connected frame graph:
/// affinity is the elementwise product of a temporal Gaussian and
/// pairwise cosine similarity, re-derived from the current features each
/// round, then applied as `ṽ_i = Σ_j E_ij v_j`.
pub fn self_refine<S: Scalar>(
    tape: &mut Tape<S>,
    v: TensorId,
    cfg: &SelfRefineConfig,
) -> Result<TensorId> {
    cfg.validate()?;
    let (t, _) = tape.shape(v);
    let e_tem = tape.constant(&temporal_kernel(t, cfg.sigma));
    let mut cur = v;
    for _ in 0..cfg.iterations {
        let e_sem = tape.cosine_matrix(cur, cur)?;
        let e = tape.mul(e_tem, e_sem)?;
        let e = if cfg.row_normalize {
            let clamped = tape.relu(e);
            let sums = tape.row_sums(clamped);
            tape.div_rows_eps(clamped, sums, REFINE_EPS)?
        } else {
            e
        };
        cur = tape.matmul(e, cur)?;
    }
    Ok(cur)
}

/// Single-head scaled dot-product self-attention with a residual
/// connection: `x + softmax(xW_q (xW_k)ᵀ / √D) · xW_v`.
pub fn self_attention<S: Scalar>(
    tape: &mut Tape<S>,
    x: TensorId,
    att: &AttentionBound,
) -> Result<TensorId> {
    let (_, d) = tape.shape(x);
    let q = tape.matmul(x, att.w_q)?;
    let k = tape.matmul(x, att.w_k)?;
    let v = tape.matmul(x, att.w_v)?;
    let kt = tape.transpose(k);
    let scores = tape.matmul(q, kt)?;
    let scaled = tape.scale(scores, 1.0 / (d as f64).sqrt());
    let weights = tape.softmax_rows(scaled)?;
    let ctx = tape.matmul(weights, v)?;
    tape.add(x, ctx)
}

/// One LSTM step. `x` is `1×D_in`, `h`/`c` are `1×H`; gate order along
/// the packed `4H` axis is input, forget, candidate, output.
pub fn lstm_cell<S: Scalar>(
    tape: &mut Tape<S>,
    x: TensorId,
    h_prev: TensorId,
    c_prev: TensorId,
    p: &LstmBound,
) -> Result<(TensorId, TensorId)> {
    let hidden = tape.shape(h_prev).1;
    let zx = tape.matmul(x, p.w_x)?;
    let zh = tape.matmul(h_prev, p.w_h)?;
    let z = tape.add(zx, zh)?;
    let z = tape.add(z, p.b)?;
    let i_gate = tape.slice_cols(z, 0, hidden)?;
    let f_gate = tape.slice_cols(z, hidden, 2 * hidden)?;
    let g_gate = tape.slice_cols(z, 2 * hidden, 3 * hidden)?;
    let o_gate = tape.slice_cols(z, 3 * hidden, 4 * hidden)?;
    let i = tape.sigmoid(i_gate);
    let f = tape.sigmoid(f_gate);
    let g = tape.tanh(g_gate);
    let o = tape.sigmoid(o_gate);
    let fc = tape.mul(f, c_prev)?;
    let ig = tape.mul(i, g)?;
    let c = tape.add(fc, ig)?;
    let tc = tape.tanh(c);
    let h = tape.mul(o, tc)?;
    Ok((h, c))
}

/// Run one LSTM direction over all rows of `x`, returning hidden states
/// in time order (index `t` of the result is frame `t` regardless of
/// direction).
pub fn lstm_sequence<S: Scalar>(
    tape: &mut Tape<S>,
    x: TensorId,
    p: &LstmBound,
    reverse: bool,
) -> Result<Vec<TensorId>> {
    let (t, _) = tape.shape(x);
    if t == 0 {
        return Err(Error::Dimension("lstm over an empty sequence".into()));
    }
    let hidden = tape.shape(p.w_h).0;
    let zero = Tensor::zeros(1, hidden);
    let mut h = tape.constant(&zero);
    let mut c = tape.constant(&zero);
    let mut out = vec![None; t];
    let steps: Vec<usize> = if reverse {
        (0..t).rev().collect()
    } else {
        (0..t).collect()
    };
    for step in steps {
        let xt = tape.row(x, step)?;
        let (nh, nc) = lstm_cell(tape, xt, h, c, p)?;
        h = nh;
        c = nc;
        out[step] = Some(h);
    }
    Ok(out.into_iter().map(|o| o.expect("all steps visited")).collect())
}

/// Bidirectional LSTM: `T×D_in` to `T×2H`, forward hidden states in the
/// left half and backward in the right.
pub fn bilstm<S: Scalar>(tape: &mut Tape<S>, x: TensorId, p: &BiLstmBound) -> Result<TensorId> {
    let fwd = lstm_sequence(tape, x, &p.fwd, false)?;
    let bwd = lstm_sequence(tape, x, &p.bwd, true)?;
    let rows: Vec<TensorId> = fwd
        .into_iter()
        .zip(bwd)
        .map(|(f, b)| tape.concat_cols(&[f, b]))
        .collect::<Result<_>>()?;
    tape.stack_rows(&rows)
}

/// BiLSTM plus the learned linear map back to width `D`.
fn encoder_stage<S: Scalar>(tape: &mut Tape<S>, x: TensorId, enc: &EncoderBound) -> Result<TensorId> {
    let seq = bilstm(tape, x, &enc.lstm)?;
    let proj = tape.matmul(seq, enc.proj)?;
    tape.add_bias(proj, enc.proj_b)
}

/// Video encoder: self-refine, then self-attention, then BiLSTM with a
/// projection back to `D`. Output is `T×D`.
pub fn encode_video<S: Scalar>(
    tape: &mut Tape<S>,
    features: &Tensor<S>,
    bound: &BoundParams,
    refine: &SelfRefineConfig,
) -> Result<TensorId> {
    let v = tape.constant(features);
    let refined = self_refine(tape, v, refine)?;
    let attended = self_attention(tape, refined, &bound.att_video)?;
    encoder_stage(tape, attended, &bound.enc_video)
}

/// Query encoder: embedding lookup, self-attention, BiLSTM with
/// projection. Output is `N×D`.
pub fn encode_query<S: Scalar>(
    tape: &mut Tape<S>,
    tokens: &[u32],
    bound: &BoundParams,
) -> Result<TensorId> {
    if tokens.is_empty() {
        return Err(Error::Input("query has no tokens".into()));
    }
    let vocab = tape.shape(bound.embed).0;
    let rows: Vec<TensorId> = tokens
        .iter()
        .map(|&tok| {
            if (tok as usize) >= vocab {
                return Err(Error::Input(format!(
                    "token id {tok} outside vocabulary of size {vocab}"
                )));
            }
            tape.row(bound.embed, tok as usize)
        })
        .collect::<Result<_>>()?;
    let embedded = tape.stack_rows(&rows)?;
    let attended = self_attention(tape, embedded, &bound.att_query)?;
    encoder_stage(tape, attended, &bound.enc_query)
}

/// Intermediate co-attention quantities, exposed for oracle tests.
pub struct CoAttentionParts {
    /// `T×N` similarity `Ṽ′(QW_S)ᵀ`.
    pub s: TensorId,
    /// Row-softmax of `s`.
    pub s_row: TensorId,
    /// Column-softmax of `s`.
    pub s_col: TensorId,
    /// Video-to-query attended features `S_r(QW_S)`, `T×D`.
    pub a: TensorId,
    /// Query-routed video features `S_r S_cᵀ Ṽ′`, `T×D`.
    pub b: TensorId,
}

/// The attention core of the fusion: project the query with the shared
/// `W_S`, score every frame against every word, and build the two
/// attended feature maps.
pub fn co_attention_parts<S: Scalar>(
    tape: &mut Tape<S>,
    video: TensorId,
    query: TensorId,
    w_s: TensorId,
) -> Result<CoAttentionParts> {
    let qp = tape.matmul(query, w_s)?;
    let qpt = tape.transpose(qp);
    let s = tape.matmul(video, qpt)?;
    let s_row = tape.softmax_rows(s)?;
    let s_col = tape.softmax_cols(s)?;
    let a = tape.matmul(s_row, qp)?;
    let sct = tape.transpose(s_col);
    let routed = tape.matmul(s_row, sct)?;
    let b = tape.matmul(routed, video)?;
    Ok(CoAttentionParts { s, s_row, s_col, a, b })
}

/// Query-guided fusion: co-attention, concatenation
/// `[Ṽ′; A; Ṽ′⊙A; Ṽ′⊙B]`, and a BiLSTM stage back to `T×D`.
pub fn co_attention_fuse<S: Scalar>(
    tape: &mut Tape<S>,
    video: TensorId,
    query: TensorId,
    bound: &BoundParams,
) -> Result<TensorId> {
    let parts = co_attention_parts(tape, video, query, bound.w_s)?;
    let va = tape.mul(video, parts.a)?;
    let vb = tape.mul(video, parts.b)?;
    let cat = tape.concat_cols(&[video, parts.a, va, vb])?;
    encoder_stage(tape, cat, &bound.enc_fuse)
}

/// Per-frame boundary scores recorded on the tape (`1×T` each).
#[derive(Debug, Clone, Copy)]
pub struct ScoreIds {
    pub start: TensorId,
    pub end: TensorId,
}

/// Plain-value boundary scores.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundingScores {
    pub start: Vec<f64>,
    pub end: Vec<f64>,
}

fn head_scores<S: Scalar>(tape: &mut Tape<S>, fused: TensorId, head: &HeadBound) -> Result<TensorId> {
    let states = lstm_sequence(tape, fused, &head.lstm, false)?;
    let (t, _) = tape.shape(fused);
    let mut scores = Vec::with_capacity(t);
    for (step, h) in states.into_iter().enumerate() {
        let xt = tape.row(fused, step)?;
        let cat = tape.concat_cols(&[xt, h])?;
        let s = tape.matmul(cat, head.w)?;
        let s = tape.add(s, head.b)?;
        scores.push(s);
    }
    tape.concat_cols(&scores)
}

/// Score every frame as a start and as an end: a causal LSTM runs over
/// the fused features and each frame's score is a linear map of
/// `[v̂_t; h_t]`. The same parameters serve both video streams.
pub fn grounding_head<S: Scalar>(
    tape: &mut Tape<S>,
    fused: TensorId,
    bound: &BoundParams,
) -> Result<ScoreIds> {
    Ok(ScoreIds {
        start: head_scores(tape, fused, &bound.head_start)?,
        end: head_scores(tape, fused, &bound.head_end)?,
    })
}

/// Everything one stream produces.
pub struct StreamOutput {
    /// Encoded video `Ṽ` (or `Ṽ′`), `T×D`.
    pub encoded: TensorId,
    /// Fused query-guided features `V̂` (or `V̂′`), `T×D`.
    pub fused: TensorId,
    pub scores: ScoreIds,
}

/// Full forward pass of one (video, query) stream.
pub fn forward_stream<S: Scalar>(
    tape: &mut Tape<S>,
    features: &Tensor<S>,
    tokens: &[u32],
    bound: &BoundParams,
    refine: &SelfRefineConfig,
) -> Result<StreamOutput> {
    let encoded = encode_video(tape, features, bound, refine)?;
    let query = encode_query(tape, tokens, bound)?;
    let fused = co_attention_fuse(tape, encoded, query, bound)?;
    let scores = grounding_head(tape, fused, bound)?;
    Ok(StreamOutput {
        encoded,
        fused,
        scores,
    })
}

/// Read score values off the tape.
pub fn scores_to_values<S: Scalar>(tape: &Tape<S>, ids: &ScoreIds) -> GroundingScores {
    GroundingScores {
        start: tape.value(ids.start).to_f64_vec(),
        end: tape.value(ids.end).to_f64_vec(),
    }
}

/// One predicted span with its summed boundary score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpanPrediction {
    pub s: usize,
    pub e: usize,
    pub confidence: f64,
}

/// Rank all spans `s ≤ e` by `C^s_s + C^e_e` and keep the best `n`.
/// Ties break toward the smaller start, then the smaller end.
pub fn predict_topn(scores: &GroundingScores, n: usize) -> Result<Vec<SpanPrediction>> {
    if n == 0 {
        return Err(Error::Contract("predict_topn needs n >= 1".into()));
    }
    let t = scores.start.len();
    if t == 0 || scores.end.len() != t {
        return Err(Error::Dimension(format!(
            "scores have lengths {} and {}",
            t,
            scores.end.len()
        )));
    }
    if scores.start.iter().chain(&scores.end).any(|v| !v.is_finite()) {
        return Err(Error::Contract("non-finite boundary scores".into()));
    }
    let mut spans = Vec::with_capacity(t * (t + 1) / 2);
    for s in 0..t {
        for e in s..t {
            spans.push(SpanPrediction {
                s,
                e,
                confidence: scores.start[s] + scores.end[e],
            });
        }
    }
    spans.sort_by(|a, b| {
        b.confidence
            .total_cmp(&a.confidence)
            .then(a.s.cmp(&b.s))
            .then(a.e.cmp(&b.e))
    });
    spans.truncate(n);
    Ok(spans)
}
