//! Boundary-importance search: grow a shuffled prefix (or suffix) one frame
//! at a time while linear-evaluation accuracy keeps improving.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::augment::SegmentPosition;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval::{linear_eval_model, EvalConfig};
use crate::model::ModelConfig;
use crate::trainer::{pretrain_with, PairSource, PretrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopRule {
    /// Return the first `k` whose accuracy did not improve.
    #[default]
    PaperLiteral,
    /// Return the last `k` that improved.
    Peak,
}

impl std::str::FromStr for StopRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper_literal" => Ok(StopRule::PaperLiteral),
            "peak" => Ok(StopRule::Peak),
            other => Err(Error::arg(format!("unknown stop rule {other:?} (expected paper_literal or peak)"))),
        }
    }
}

/// Accuracy of pretraining with the first/last `k` frames shuffled.
pub trait SegmentEvaluator {
    fn evaluate(&mut self, k: usize, position: SegmentPosition) -> Result<f64>;
}

impl<F: FnMut(usize, SegmentPosition) -> Result<f64>> SegmentEvaluator for F {
    fn evaluate(&mut self, k: usize, position: SegmentPosition) -> Result<f64> {
        self(k, position)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub k: usize,
    pub accuracy: f64,
}

/// Greedy search over `k = 1, 2, ...` with a strict `>` comparison. Returns
/// the chosen `k` and every `(k, accuracy)` visited; exactly one evaluation
/// per visited `k`.
pub fn find_optimal_k(
    eval: &mut dyn SegmentEvaluator,
    n: usize,
    position: SegmentPosition,
    rule: StopRule,
) -> Result<(usize, Vec<TracePoint>)> {
    if n < 2 {
        return Err(Error::arg(format!("boundary search needs at least 2 frames, got {n}")));
    }
    let mut trace = Vec::new();
    let mut visit = |k: usize, trace: &mut Vec<TracePoint>| -> Result<f64> {
        let accuracy = eval.evaluate(k, position)?;
        if !(0.0..=1.0).contains(&accuracy) {
            return Err(Error::Numeric(format!("accuracy {accuracy} at k = {k} outside [0, 1]")));
        }
        trace.push(TracePoint { k, accuracy });
        Ok(accuracy)
    };
    let mut k = 1;
    let mut a_prev = visit(k, &mut trace)?;
    k = 2;
    let mut a_curr = visit(k, &mut trace)?;
    while k < n && a_curr > a_prev {
        a_prev = a_curr;
        k += 1;
        a_curr = visit(k, &mut trace)?;
    }
    let chosen = match rule {
        StopRule::PaperLiteral => k,
        // Leaving through the k < n guard means k itself still improved.
        StopRule::Peak if a_curr > a_prev => k,
        StopRule::Peak => k - 1,
    };
    Ok((chosen, trace))
}

/// Evaluates every `k` in `1..=n`.
pub fn sweep(eval: &mut dyn SegmentEvaluator, n: usize, position: SegmentPosition) -> Result<Vec<TracePoint>> {
    (1..=n)
        .map(|k| Ok(TracePoint { k, accuracy: eval.evaluate(k, position)? }))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryResult {
    pub n_frames: usize,
    pub ks_star: usize,
    pub ke_star: usize,
    pub stop_rule: StopRule,
    pub trace_first: Vec<TracePoint>,
    pub trace_last: Vec<TracePoint>,
}

pub const TRACE_HEADER: &str = "k,accuracy";

pub fn trace_csv(trace: &[TracePoint]) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for p in trace {
        let _ = writeln!(out, "{},{}", p.k, p.accuracy);
    }
    out
}

pub fn search_boundary(eval: &mut dyn SegmentEvaluator, n: usize, rule: StopRule) -> Result<BoundaryResult> {
    let (ks_star, trace_first) = find_optimal_k(eval, n, SegmentPosition::First, rule)?;
    let (ke_star, trace_last) = find_optimal_k(eval, n, SegmentPosition::Last, rule)?;
    Ok(BoundaryResult {
        n_frames: n,
        ks_star,
        ke_star,
        stop_rule: rule,
        trace_first,
        trace_last,
    })
}

/// `(⌈n/3⌉, ⌈n/4⌉)`.
pub fn default_boundaries(n: usize) -> Result<(usize, usize)> {
    if n < 3 {
        return Err(Error::arg(format!("default boundaries need at least 3 frames, got {n}")));
    }
    Ok((n.div_ceil(3), n.div_ceil(4)))
}

/// Pretrains with segment-shuffled pairs on `train` and returns the mean
/// top-1 linear-probe accuracy on `test`.
#[allow(clippy::too_many_arguments)]
pub fn segment_eval(
    k: usize,
    train: &Dataset,
    test: &Dataset,
    position: SegmentPosition,
    model: &ModelConfig,
    pretrain: &PretrainConfig,
    eval: &EvalConfig,
) -> Result<f64> {
    for (name, ds) in [("train", train), ("test", test)] {
        if !ds.is_labeled() || ds.is_empty() {
            return Err(Error::arg(format!("segment evaluation needs a labeled, non-empty {name} set")));
        }
    }
    let n = train.max_len;
    if k < 1 || k > n {
        return Err(Error::arg(format!("segment length {k} outside [1, {n}]")));
    }
    let (ckpt, _) = pretrain_with(train, model, None, pretrain, &PairSource::Segment { k, position })?;
    Ok(linear_eval_model(&ckpt.model, train, test, eval)?.top1_mean)
}

/// [`segment_eval`] with fixed data and settings, memoized per `(position, k)`.
/// Every `k` shares the same pretraining seed, so accuracy differences
/// come from the shuffled segment length alone.
pub struct TrainedSegmentEvaluator<'a> {
    pub train: &'a Dataset,
    pub test: &'a Dataset,
    pub model: ModelConfig,
    pub pretrain: PretrainConfig,
    pub eval: EvalConfig,
    cache: BTreeMap<(SegmentPosition, usize), f64>,
    calls: usize,
}

impl<'a> TrainedSegmentEvaluator<'a> {
    pub fn new(train: &'a Dataset, test: &'a Dataset, model: ModelConfig, pretrain: PretrainConfig, eval: EvalConfig) -> Self {
        Self {
            train,
            test,
            model,
            pretrain,
            eval,
            cache: BTreeMap::new(),
            calls: 0,
        }
    }

    /// Number of trainings actually run (cache misses).
    pub fn trainings(&self) -> usize {
        self.calls
    }
}

impl SegmentEvaluator for TrainedSegmentEvaluator<'_> {
    fn evaluate(&mut self, k: usize, position: SegmentPosition) -> Result<f64> {
        if let Some(&a) = self.cache.get(&(position, k)) {
            return Ok(a);
        }
        let a = segment_eval(k, self.train, self.test, position, &self.model, &self.pretrain, &self.eval)?;
        self.calls += 1;
        self.cache.insert((position, k), a);
        Ok(a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mock(acc: Vec<f64>) -> impl FnMut(usize, SegmentPosition) -> Result<f64> {
        move |k, _| Ok(acc[k - 1])
    }

    #[test]
    fn traces_the_greedy_loop() {
        let seq = vec![0.2, 0.3, 0.4, 0.35, 0.5, 0.6];
        let (k, trace) = find_optimal_k(&mut mock(seq.clone()), 6, SegmentPosition::First, StopRule::PaperLiteral).unwrap();
        assert_eq!(k, 4);
        assert_eq!(trace.len(), 4);
        let (k, _) = find_optimal_k(&mut mock(seq), 6, SegmentPosition::First, StopRule::Peak).unwrap();
        assert_eq!(k, 3);
    }

    #[test]
    fn early_and_late_stops() {
        let (k, t) = find_optimal_k(&mut mock(vec![0.5, 0.5, 0.9]), 3, SegmentPosition::Last, StopRule::PaperLiteral).unwrap();
        assert_eq!((k, t.len()), (2, 2));
        let (k, _) = find_optimal_k(&mut mock(vec![0.5, 0.4, 0.9]), 3, SegmentPosition::Last, StopRule::Peak).unwrap();
        assert_eq!(k, 1);
        let rising = vec![0.1, 0.2, 0.3, 0.4, 0.5];
        let (k, t) = find_optimal_k(&mut mock(rising.clone()), 5, SegmentPosition::First, StopRule::PaperLiteral).unwrap();
        assert_eq!((k, t.len()), (5, 5));
        let (k, _) = find_optimal_k(&mut mock(rising), 5, SegmentPosition::First, StopRule::Peak).unwrap();
        assert_eq!(k, 5);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(find_optimal_k(&mut mock(vec![0.5]), 1, SegmentPosition::First, StopRule::Peak).is_err());
        assert!(find_optimal_k(&mut mock(vec![0.5, 1.5]), 2, SegmentPosition::First, StopRule::Peak).is_err());
        assert!(default_boundaries(2).is_err());
    }

    #[test]
    fn default_boundary_arithmetic() {
        assert_eq!(default_boundaries(64).unwrap(), (22, 16));
        assert_eq!(default_boundaries(12).unwrap(), (4, 3));
        assert_eq!(default_boundaries(3).unwrap(), (1, 1));
        assert_eq!(default_boundaries(24).unwrap(), (8, 6));
    }

    #[test]
    fn csv_trace() {
        let t = vec![TracePoint { k: 1, accuracy: 0.25 }, TracePoint { k: 2, accuracy: 0.5 }];
        assert_eq!(trace_csv(&t), "k,accuracy\n1,0.25\n2,0.5\n");
    }
}
