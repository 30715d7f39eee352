//! Recall evaluation: temporal IoU on inclusive frame spans and the
//! R@n,IoU=m harness over a list of samples.

use crate::data::{Sample, SegmentAnnotation};
use crate::error::{Error, Result};
use crate::model::{
    forward_stream, predict_topn, scores_to_values, ModelParams, SelfRefineConfig, SpanPrediction,
};
use crate::par::{self, ExecMode};
use crate::tensor::{Scalar, Tape};
use std::fmt::Write as _;

/// Intersection-over-union of two inclusive frame spans.
pub fn temporal_iou(a: &SegmentAnnotation, b: &SegmentAnnotation) -> f64 {
    let inter_lo = a.tau_s.max(b.tau_s);
    let inter_hi = a.tau_e.min(b.tau_e);
    if inter_hi < inter_lo {
        return 0.0;
    }
    let inter = (inter_hi - inter_lo + 1) as f64;
    let union = (a.tau_e - a.tau_s + 1) + (b.tau_e - b.tau_s + 1);
    inter / (union as f64 - inter)
}

/// Anything that proposes ranked spans for a sample.
pub trait SpanPredictor: Sync {
    fn predict(&self, sample: &Sample, n: usize) -> Result<Vec<SpanPrediction>>;
}

/// Runs the trained network on the sample's original features.
pub struct ModelPredictor<S: Scalar> {
    pub params: ModelParams<S>,
    pub refine: SelfRefineConfig,
}

impl<S: Scalar> SpanPredictor for ModelPredictor<S> {
    fn predict(&self, sample: &Sample, n: usize) -> Result<Vec<SpanPrediction>> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let features = sample.features.frames().cast::<S>();
        let out = forward_stream(&mut tape, &features, &sample.tokens.0, &bound, &self.refine)?;
        predict_topn(&scores_to_values(&tape, &out.scores), n)
    }
}

/// One evaluated sample: its ranked spans and their IoUs in rank order.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleEval {
    pub id: String,
    pub spans: Vec<SpanPrediction>,
    pub ious: Vec<f64>,
}

impl SampleEval {
    /// Best IoU among the first `n` spans.
    pub fn best_iou(&self, n: usize) -> f64 {
        self.ious.iter().take(n).cloned().fold(0.0, f64::max)
    }
}

/// One (n, m) cell of the recall table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalRow {
    pub n: usize,
    pub m: f64,
    pub recall: f64,
}

/// The full recall table plus per-sample detail.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub samples: Vec<SampleEval>,
}

impl EvalReport {
    /// Recall for one cell, if present.
    pub fn recall(&self, n: usize, m: f64) -> Option<f64> {
        self.rows.iter().find(|r| r.n == n && r.m == m).map(|r| r.recall)
    }

    /// Recall is non-decreasing in n (more guesses) and non-increasing
    /// in m (laxer threshold passes a superset).
    pub fn validate(&self) -> Result<()> {
        for a in &self.rows {
            for b in &self.rows {
                if a.m == b.m && a.n <= b.n && a.recall > b.recall + 1e-12 {
                    return Err(Error::Eval(format!(
                        "recall not monotone in n: R@{},{} = {} > R@{},{} = {}",
                        a.n, a.m, a.recall, b.n, b.m, b.recall
                    )));
                }
                if a.n == b.n && a.m <= b.m && a.recall + 1e-12 < b.recall {
                    return Err(Error::Eval(format!(
                        "recall not monotone in m: R@{},{} = {} < R@{},{} = {}",
                        a.n, a.m, a.recall, b.n, b.m, b.recall
                    )));
                }
            }
        }
        Ok(())
    }

    /// The `n,m,recall` table.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,m,recall\n");
        for r in &self.rows {
            writeln!(out, "{},{},{:.6}", r.n, r.m, r.recall).expect("string write");
        }
        out
    }

    /// Per-sample detail: each ranked span with its IoU.
    pub fn detail_csv(&self) -> String {
        let mut out = String::from("id,rank,s,e,confidence,iou\n");
        for s in &self.samples {
            for (rank, (span, iou)) in s.spans.iter().zip(&s.ious).enumerate() {
                writeln!(
                    out,
                    "{},{},{},{},{:.6},{:.6}",
                    s.id,
                    rank + 1,
                    span.s,
                    span.e,
                    span.confidence,
                    iou
                )
                .expect("string write");
            }
        }
        out
    }
}

/// Score a predictor over samples: for each (n, m), the fraction of
/// samples where any of the top-n spans has IoU strictly greater
/// than m with the ground truth.
pub fn evaluate<P: SpanPredictor>(
    mode: ExecMode,
    predictor: &P,
    samples: &[Sample],
    n_list: &[usize],
    m_list: &[f64],
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Eval("no samples to evaluate".into()));
    }
    if n_list.is_empty() || m_list.is_empty() {
        return Err(Error::Eval("empty n or m list".into()));
    }
    if n_list.iter().any(|&n| n == 0) {
        return Err(Error::Eval("n must be at least 1".into()));
    }
    if m_list.iter().any(|&m| !(0.0..1.0).contains(&m)) {
        return Err(Error::Eval("IoU thresholds must lie in [0,1)".into()));
    }
    let n_max = *n_list.iter().max().expect("nonempty");
    let evals: Vec<SampleEval> = par::try_map_indexed(mode, samples, |_, sample| {
        let spans = predictor.predict(sample, n_max)?;
        let ious = spans
            .iter()
            .map(|p| {
                temporal_iou(
                    &SegmentAnnotation { tau_s: p.s, tau_e: p.e },
                    &sample.annotation,
                )
            })
            .collect();
        Ok(SampleEval {
            id: sample.id.clone(),
            spans,
            ious,
        })
    })?;
    let mut rows = Vec::with_capacity(n_list.len() * m_list.len());
    for &n in n_list {
        for &m in m_list {
            let hits = evals.iter().filter(|s| s.best_iou(n) > m).count();
            rows.push(EvalRow {
                n,
                m,
                recall: hits as f64 / evals.len() as f64,
            });
        }
    }
    let report = EvalReport { rows, samples: evals };
    report.validate()?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{FeatureSequence, QueryTokens};
    use crate::rng::derive_rng;
    use crate::tensor::Tensor;
    use rand::Rng;
    use std::sync::Mutex;

    fn ann(s: usize, e: usize) -> SegmentAnnotation {
        SegmentAnnotation { tau_s: s, tau_e: e }
    }

    #[test]
    fn iou_identity_and_disjoint() {
        assert_eq!(temporal_iou(&ann(3, 9), &ann(3, 9)), 1.0);
        assert_eq!(temporal_iou(&ann(0, 4), &ann(5, 9)), 0.0);
        assert_eq!(temporal_iou(&ann(5, 9), &ann(0, 4)), 0.0);
    }

    #[test]
    fn iou_worked_example() {
        // [10,19] vs [15,24]: overlap 5 frames, union 15 frames.
        let got = temporal_iou(&ann(10, 19), &ann(15, 24));
        assert!((got - 5.0 / 15.0).abs() < 1e-15);
    }

    /// Count-over-frames reference.
    fn iou_set_oracle(a: &SegmentAnnotation, b: &SegmentAnnotation) -> f64 {
        let hi = a.tau_e.max(b.tau_e);
        let mut inter = 0usize;
        let mut union = 0usize;
        for f in 0..=hi {
            let in_a = f >= a.tau_s && f <= a.tau_e;
            let in_b = f >= b.tau_s && f <= b.tau_e;
            if in_a && in_b {
                inter += 1;
            }
            if in_a || in_b {
                union += 1;
            }
        }
        inter as f64 / union as f64
    }

    #[test]
    fn iou_matches_set_oracle_randomized() {
        let mut rng = derive_rng(60, &[1]);
        for _ in 0..1000 {
            let t = rng.random_range(2..60usize);
            let s1 = rng.random_range(0..t);
            let e1 = rng.random_range(s1..t);
            let s2 = rng.random_range(0..t);
            let e2 = rng.random_range(s2..t);
            let (a, b) = (ann(s1, e1), ann(s2, e2));
            let got = temporal_iou(&a, &b);
            let want = iou_set_oracle(&a, &b);
            assert!((got - want).abs() < 1e-12, "{a:?} {b:?}");
            assert!((0.0..=1.0).contains(&got));
        }
    }

    fn toy_sample(id: &str, t: usize, s: usize, e: usize) -> Sample {
        let feats = Tensor::new(t, 2, vec![0.5f32; t * 2]).unwrap();
        Sample {
            id: id.into(),
            features: FeatureSequence::new(feats).unwrap(),
            tokens: QueryTokens(vec![1]),
            annotation: ann(s, e),
        }
    }

    /// Always answers the ground truth first, then shifted decoys.
    struct OraclePredictor;
    impl SpanPredictor for OraclePredictor {
        fn predict(&self, sample: &Sample, n: usize) -> Result<Vec<SpanPrediction>> {
            let mut out = vec![SpanPrediction {
                s: sample.annotation.tau_s,
                e: sample.annotation.tau_e,
                confidence: 1.0,
            }];
            for k in 1..n {
                out.push(SpanPrediction { s: 0, e: k.min(3), confidence: 0.0 });
            }
            Ok(out)
        }
    }

    #[test]
    fn oracle_predictor_scores_one_everywhere() {
        let samples: Vec<Sample> =
            (0..10).map(|i| toy_sample(&format!("s{i}"), 20, 4 + i % 3, 11)).collect();
        let report = evaluate(
            ExecMode::Sequential,
            &OraclePredictor,
            &samples,
            &[1, 5],
            &[0.3, 0.5, 0.7],
        )
        .unwrap();
        for row in &report.rows {
            assert_eq!(row.recall, 1.0, "R@{},{}", row.n, row.m);
        }
    }

    /// Uniform random valid spans, deterministic per (sample, call).
    struct RandomSpanPredictor {
        t: usize,
        seed: u64,
        calls: Mutex<u64>,
    }
    impl SpanPredictor for RandomSpanPredictor {
        fn predict(&self, _sample: &Sample, n: usize) -> Result<Vec<SpanPrediction>> {
            let call = {
                let mut c = self.calls.lock().unwrap();
                *c += 1;
                *c
            };
            let mut rng = derive_rng(self.seed, &[call]);
            Ok((0..n)
                .map(|k| {
                    let s = rng.random_range(0..self.t);
                    let e = rng.random_range(s..self.t);
                    SpanPrediction { s, e, confidence: -(k as f64) }
                })
                .collect())
        }
    }

    #[test]
    fn random_predictor_tracks_monte_carlo_baseline() {
        // The recall of a uniform-random span must agree with a direct
        // Monte-Carlo estimate of P(IoU > m) for the same ground truth.
        let t = 48;
        let gt = ann(14, 30);
        let samples: Vec<Sample> =
            (0..2000).map(|i| toy_sample(&format!("s{i}"), t, 14, 30)).collect();
        let predictor = RandomSpanPredictor { t, seed: 123, calls: Mutex::new(0) };
        let report =
            evaluate(ExecMode::Sequential, &predictor, &samples, &[1, 5], &[0.5, 0.7]).unwrap();

        let mut rng = derive_rng(7777, &[1]);
        let mut hits_05 = 0usize;
        let mut hits_07 = 0usize;
        let trials = 200_000;
        for _ in 0..trials {
            let s = rng.random_range(0..t);
            let e = rng.random_range(s..t);
            let iou = temporal_iou(&ann(s, e), &gt);
            if iou > 0.5 {
                hits_05 += 1;
            }
            if iou > 0.7 {
                hits_07 += 1;
            }
        }
        let base_05 = hits_05 as f64 / trials as f64;
        let base_07 = hits_07 as f64 / trials as f64;
        // 2000 Bernoulli trials: allow ~4 standard deviations.
        let slack = |p: f64| 4.0 * (p * (1.0 - p) / 2000.0).sqrt() + 1e-3;
        let r1_05 = report.recall(1, 0.5).unwrap();
        let r1_07 = report.recall(1, 0.7).unwrap();
        assert!((r1_05 - base_05).abs() < slack(base_05), "{r1_05} vs {base_05}");
        assert!((r1_07 - base_07).abs() < slack(base_07), "{r1_07} vs {base_07}");
        // More guesses never hurt.
        assert!(report.recall(5, 0.5).unwrap() >= r1_05);
        assert!(report.recall(5, 0.7).unwrap() >= r1_07);
        report.validate().unwrap();
    }

    #[test]
    fn strict_inequality_at_threshold() {
        // A span with IoU exactly m must NOT count as a hit.
        struct Fixed;
        impl SpanPredictor for Fixed {
            fn predict(&self, _s: &Sample, _n: usize) -> Result<Vec<SpanPrediction>> {
                Ok(vec![SpanPrediction { s: 0, e: 4, confidence: 1.0 }])
            }
        }
        // gt [0,9], pred [0,4]: IoU = 5/10 = 0.5 exactly.
        let samples = vec![toy_sample("x", 10, 0, 9)];
        let report = evaluate(ExecMode::Sequential, &Fixed, &samples, &[1], &[0.5]).unwrap();
        assert_eq!(report.recall(1, 0.5).unwrap(), 0.0);
        let report = evaluate(ExecMode::Sequential, &Fixed, &samples, &[1], &[0.49]).unwrap();
        assert_eq!(report.recall(1, 0.49).unwrap(), 1.0);
    }

    #[test]
    fn parallel_and_sequential_reports_agree() {
        let samples: Vec<Sample> =
            (0..40).map(|i| toy_sample(&format!("s{i}"), 24, i % 10, 12 + i % 8)).collect();
        let a = evaluate(ExecMode::Sequential, &OraclePredictor, &samples, &[1, 5], &[0.3, 0.7])
            .unwrap();
        let b = evaluate(ExecMode::Parallel, &OraclePredictor, &samples, &[1, 5], &[0.3, 0.7])
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_inputs_rejected() {
        let samples = vec![toy_sample("x", 10, 2, 5)];
        assert!(matches!(
            evaluate(ExecMode::Sequential, &OraclePredictor, &[], &[1], &[0.5]),
            Err(Error::Eval(_))
        ));
        assert!(evaluate(ExecMode::Sequential, &OraclePredictor, &samples, &[], &[0.5]).is_err());
        assert!(evaluate(ExecMode::Sequential, &OraclePredictor, &samples, &[1], &[]).is_err());
        assert!(evaluate(ExecMode::Sequential, &OraclePredictor, &samples, &[0], &[0.5]).is_err());
        assert!(evaluate(ExecMode::Sequential, &OraclePredictor, &samples, &[1], &[1.0]).is_err());
    }

    #[test]
    fn model_predictor_runs_end_to_end() {
        let params = ModelParams::<f64>::init(4, 2, 16, 99).unwrap();
        let predictor = ModelPredictor { params, refine: SelfRefineConfig::default() };
        let mut rng = derive_rng(61, &[2]);
        let feats: Vec<f32> = (0..12 * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let sample = Sample {
            id: "m0".into(),
            features: FeatureSequence::new(Tensor::new(12, 4, feats).unwrap()).unwrap(),
            tokens: QueryTokens(vec![2, 5, 9]),
            annotation: ann(3, 8),
        };
        let spans = predictor.predict(&sample, 5).unwrap();
        assert_eq!(spans.len(), 5);
        assert!(spans.iter().all(|p| p.s <= p.e && p.e < 12));
        let report =
            evaluate(ExecMode::Parallel, &predictor, &[sample], &[1, 5], &[0.1, 0.5]).unwrap();
        report.validate().unwrap();
        assert_eq!(report.samples.len(), 1);
        assert!(report.to_csv().starts_with("n,m,recall\n"));
        assert!(report.detail_csv().lines().count() == 6);
    }

    #[test]
    fn csv_outputs_are_stable() {
        let samples = vec![toy_sample("a", 10, 2, 5), toy_sample("b", 10, 1, 7)];
        let r1 = evaluate(ExecMode::Sequential, &OraclePredictor, &samples, &[1], &[0.5]).unwrap();
        let r2 = evaluate(ExecMode::Parallel, &OraclePredictor, &samples, &[1], &[0.5]).unwrap();
        assert_eq!(r1.to_csv(), r2.to_csv());
        assert_eq!(r1.detail_csv(), r2.detail_csv());
    }
}
