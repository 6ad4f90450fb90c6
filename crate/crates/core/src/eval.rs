//! Downstream protocols: linear probe on a frozen encoder, semi-supervised
//! fine-tuning, transfer, intra-class inertia, top-k accuracy and a 2-D PCA
//! export.

use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::checkpoint::Checkpoint;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{encode_graph, Mode, Model, SequenceBatch};
use crate::optim::{sgd_update, warmup_decay_lr, Sgd};
use crate::rng::{derive_seed_tagged, rng_from_seed, tagged_rng, Rng};
use crate::tape::{Graph, Mat};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeOn {
    /// Encoder output `y`.
    #[default]
    Representation,
    /// Projection-head output `z`.
    Projection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub probe_epochs: usize,
    pub probe_learning_rate: f64,
    pub probe_momentum: f64,
    pub probe_batch_size: usize,
    /// Z-score probe inputs with training-set statistics.
    pub standardize_features: bool,
    pub probe_on: ProbeOn,
    pub finetune_epochs: usize,
    pub finetune_learning_rate: f64,
    pub finetune_momentum: f64,
    pub finetune_batch_size: usize,
    pub warmup_steps: usize,
    pub label_fraction: f64,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            probe_epochs: 100,
            probe_learning_rate: 0.01,
            probe_momentum: 0.9,
            probe_batch_size: 32,
            standardize_features: true,
            probe_on: ProbeOn::Representation,
            finetune_epochs: 1000,
            finetune_learning_rate: 0.01,
            finetune_momentum: 0.9,
            finetune_batch_size: 32,
            warmup_steps: 600,
            label_fraction: 0.3,
            repeats: 8,
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.probe_epochs < 1 || self.probe_batch_size < 1 {
            return Err(Error::arg("probe_epochs and probe_batch_size must be positive"));
        }
        if self.finetune_epochs < 1 || self.finetune_batch_size < 1 {
            return Err(Error::arg("finetune_epochs and finetune_batch_size must be positive"));
        }
        for (name, lr) in [("probe_learning_rate", self.probe_learning_rate), ("finetune_learning_rate", self.finetune_learning_rate)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::arg(format!("{name} {lr} must be positive")));
            }
        }
        for (name, m) in [("probe_momentum", self.probe_momentum), ("finetune_momentum", self.finetune_momentum)] {
            if !(0.0..1.0).contains(&m) {
                return Err(Error::arg(format!("{name} {m} outside [0, 1)")));
            }
        }
        if !(self.label_fraction > 0.0 && self.label_fraction <= 1.0) {
            return Err(Error::arg(format!("label_fraction {} outside (0, 1]", self.label_fraction)));
        }
        if self.repeats < 1 {
            return Err(Error::arg("repeats must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub top1: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub top5: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    pub class_count: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub top1_mean: f64,
    pub top1_ci95: f64,
    /// Omitted for fewer than 5 classes.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub top5_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub top5_ci95: Option<f64>,
    /// Intra-class inertia of the test-set representations.
    pub inertia: f64,
    /// Embedding std of the test-set representations.
    pub embedding_std: f64,
    pub runs: Vec<RunResult>,
}

/// Mean and Student-t 95% half-width. The half-width is 0 for one value.
pub fn mean_ci95(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975);
    (mean, t * (var / n as f64).sqrt())
}

/// Fraction of rows whose label is among the `k` highest scores. Equal
/// scores rank the lower class index first.
pub fn top_k_accuracy(scores: &Mat, labels: &[usize], k: usize) -> Result<f64> {
    let (m, c) = scores.dim();
    if k < 1 || k > c {
        return Err(Error::arg(format!("k = {k} outside [1, {c}]")));
    }
    if labels.len() != m || m == 0 {
        return Err(Error::arg(format!("{} labels for {m} score rows", labels.len())));
    }
    let mut hits = 0usize;
    for (row, &l) in scores.rows().into_iter().zip(labels) {
        if l >= c {
            return Err(Error::arg(format!("label {l} outside [0, {c})")));
        }
        let s = row[l];
        let rank = row
            .iter()
            .enumerate()
            .filter(|&(j, &v)| v > s || (v == s && j < l))
            .count();
        if rank < k {
            hits += 1;
        }
    }
    Ok(hits as f64 / m as f64)
}

/// Sum over classes of squared distances to the class centroid.
pub fn intra_class_inertia(embeddings: &Mat, labels: &[usize]) -> Result<f64> {
    let (m, d) = embeddings.dim();
    if m == 0 {
        return Err(Error::arg("inertia of an empty embedding set"));
    }
    if labels.len() != m {
        return Err(Error::arg(format!("{} labels for {m} embeddings", labels.len())));
    }
    let classes = labels.iter().max().map_or(0, |&l| l + 1);
    let mut sums = Mat::zeros((classes, d));
    let mut counts = vec![0usize; classes];
    for (row, &l) in embeddings.rows().into_iter().zip(labels) {
        let mut s = sums.row_mut(l);
        s += &row;
        counts[l] += 1;
    }
    for (mut s, &c) in sums.rows_mut().into_iter().zip(&counts) {
        if c > 0 {
            s /= c as f64;
        }
    }
    Ok(embeddings
        .rows()
        .into_iter()
        .zip(labels)
        .map(|(row, &l)| row.iter().zip(sums.row(l)).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
        .sum())
}

fn check_pair(model: &Model, train: &Dataset, test: &Dataset) -> Result<()> {
    for (name, ds) in [("train", train), ("test", test)] {
        if ds.is_empty() {
            return Err(Error::arg(format!("{name} dataset is empty")));
        }
        if !ds.is_labeled() {
            return Err(Error::arg(format!("{name} dataset must be labeled")));
        }
        if ds.frame_size() != model.config.encoder.input_dim {
            return Err(Error::arg(format!(
                "{name} dataset has {} values per frame ({} landmarks x {}), the checkpoint expects {}",
                ds.frame_size(),
                ds.landmark_count,
                ds.coord_dim,
                model.config.encoder.input_dim
            )));
        }
        if ds.max_len > model.config.encoder.max_len {
            return Err(Error::arg(format!(
                "{name} dataset max_len {} exceeds the checkpoint's {}",
                ds.max_len, model.config.encoder.max_len
            )));
        }
    }
    if train.class_count != test.class_count {
        return Err(Error::arg(format!(
            "train has {} classes, test has {}",
            train.class_count, test.class_count
        )));
    }
    Ok(())
}

/// Eval-mode features of every sample in `ds`.
pub fn extract_features(model: &Model, ds: &Dataset, on: ProbeOn) -> Result<Mat> {
    let norm = ds.normalized()?;
    let seqs: Vec<_> = norm.samples.iter().map(|s| &s.sequence).collect();
    model.represent(&seqs, on == ProbeOn::Projection)
}

fn standardize(train: &Mat, test: &Mat) -> (Mat, Mat) {
    let n = train.nrows() as f64;
    let mean = train.sum_axis(ndarray::Axis(0)) / n;
    let mut std = train
        .columns()
        .into_iter()
        .zip(mean.iter())
        .map(|(c, &m)| (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt())
        .collect::<ndarray::Array1<f64>>();
    std.mapv_inplace(|s| if s > 1e-8 { s } else { 1.0 });
    let f = |x: &Mat| (x - &mean) / &std;
    (f(train), f(test))
}

/// Trained linear classifier `x·W + b`.
#[derive(Debug, Clone)]
pub struct LinearProbe {
    pub weight: Mat,
    pub bias: Mat,
}

impl LinearProbe {
    pub fn scores(&self, x: &Mat) -> Mat {
        x.dot(&self.weight) + &self.bias
    }
}

fn softmax_grad(scores: &Mat, labels: &[usize]) -> Mat {
    let mut d = scores.clone();
    for (mut row, &l) in d.rows_mut().into_iter().zip(labels) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
        row[l] -= 1.0;
    }
    d / labels.len() as f64
}

/// Minibatch SGD on softmax cross-entropy.
pub fn train_linear_probe(x: &Mat, labels: &[usize], classes: usize, cfg: &EvalConfig, rng: &mut Rng) -> LinearProbe {
    let d = x.ncols();
    let mut weight = Mat::from_shape_fn((d, classes), |_| rng.random_range(-0.01..0.01));
    let mut bias = Mat::zeros((1, classes));
    let (mut bw, mut bb) = (Mat::zeros(weight.dim()), Mat::zeros(bias.dim()));
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    for _ in 0..cfg.probe_epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.probe_batch_size) {
            let xb = x.select(ndarray::Axis(0), chunk);
            let lb: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let g = softmax_grad(&(xb.dot(&weight) + &bias), &lb);
            let gw = xb.t().dot(&g);
            let gb = g.sum_axis(ndarray::Axis(0)).insert_axis(ndarray::Axis(0));
            sgd_update(&mut weight, &mut bw, &gw, cfg.probe_learning_rate, cfg.probe_momentum);
            sgd_update(&mut bias, &mut bb, &gb, cfg.probe_learning_rate, cfg.probe_momentum);
        }
    }
    LinearProbe { weight, bias }
}

fn run_result(scores: &Mat, labels: &[usize], classes: usize, seed: u64) -> Result<RunResult> {
    Ok(RunResult {
        seed,
        top1: top_k_accuracy(scores, labels, 1)?,
        top5: if classes >= 5 { Some(top_k_accuracy(scores, labels, 5)?) } else { None },
    })
}

fn assemble(protocol: &str, classes: usize, train_size: usize, test: (&Mat, &[usize]), runs: Vec<RunResult>) -> Result<EvalReport> {
    let top1: Vec<f64> = runs.iter().map(|r| r.top1).collect();
    let (top1_mean, top1_ci95) = mean_ci95(&top1);
    let (top5_mean, top5_ci95) = if classes >= 5 {
        let t5: Vec<f64> = runs.iter().map(|r| r.top5.expect("top5 recorded")).collect();
        let (m, c) = mean_ci95(&t5);
        (Some(m), Some(c))
    } else {
        (None, None)
    };
    let (emb, labels) = test;
    Ok(EvalReport {
        protocol: protocol.to_string(),
        source: None,
        target: None,
        class_count: classes,
        train_size,
        test_size: labels.len(),
        top1_mean,
        top1_ci95,
        top5_mean,
        top5_ci95,
        inertia: intra_class_inertia(emb, labels)?,
        embedding_std: if emb.nrows() >= 2 { crate::trainer::embedding_std(emb)? } else { 0.0 },
        runs,
    })
}

fn run_seed(cfg: &EvalConfig, tag: &str, r: usize) -> u64 {
    derive_seed_tagged(cfg.seed, tag, &[r as u64])
}

/// Linear probe on frozen features from `model`.
pub fn linear_eval_model(model: &Model, train: &Dataset, test: &Dataset, cfg: &EvalConfig) -> Result<EvalReport> {
    cfg.validate()?;
    check_pair(model, train, test)?;
    let classes = train.class_count;
    let (ytr, yte) = (train.labels()?, test.labels()?);
    let ftr = extract_features(model, train, cfg.probe_on)?;
    let fte = extract_features(model, test, cfg.probe_on)?;
    let rep_te = if cfg.probe_on == ProbeOn::Representation {
        fte.clone()
    } else {
        extract_features(model, test, ProbeOn::Representation)?
    };
    let (xtr, xte) = if cfg.standardize_features { standardize(&ftr, &fte) } else { (ftr, fte) };
    let mut runs = Vec::with_capacity(cfg.repeats);
    for r in 0..cfg.repeats {
        let seed = run_seed(cfg, "probe", r);
        let probe = train_linear_probe(&xtr, &ytr, classes, cfg, &mut rng_from_seed(seed));
        runs.push(run_result(&probe.scores(&xte), &yte, classes, seed)?);
    }
    assemble("linear", classes, train.len(), (&rep_te, &yte), runs)
}

pub fn linear_eval(ckpt: &Checkpoint, train: &Dataset, test: &Dataset, cfg: &EvalConfig) -> Result<EvalReport> {
    linear_eval_model(&ckpt.model, train, test, cfg)
}

/// Linear evaluation of a backbone pretrained elsewhere, tagged with the
/// source and target dataset names.
pub fn transfer_eval(
    ckpt: &Checkpoint,
    train: &Dataset,
    test: &Dataset,
    cfg: &EvalConfig,
    source: &str,
    target: &str,
) -> Result<EvalReport> {
    let mut report = linear_eval(ckpt, train, test, cfg)?;
    report.protocol = "transfer".into();
    report.source = Some(source.into());
    report.target = Some(target.into());
    Ok(report)
}

/// Per class, a seeded shuffle keeps `round(fraction × class size)`
/// samples. Fails naming any class left empty.
pub fn stratified_subset(ds: &Dataset, fraction: f64, rng: &mut Rng) -> Result<Dataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::arg(format!("label_fraction {fraction} outside (0, 1]")));
    }
    let labels = ds.labels()?;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.class_count];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let mut keep = Vec::new();
    for (class, mut idx) in by_class.into_iter().enumerate() {
        let take = (fraction * idx.len() as f64).round() as usize;
        if take == 0 {
            return Err(Error::arg(format!(
                "class {class} gets no labeled samples at label_fraction {fraction} ({} available)",
                idx.len()
            )));
        }
        idx.shuffle(rng);
        keep.extend_from_slice(&idx[..take]);
    }
    keep.sort_unstable();
    Ok(ds.subset(&keep))
}

/// Semi-supervised protocol: a stratified labeled fraction trains the whole
/// encoder plus a fresh linear head under warmup-then-decay SGD.
pub fn finetune(ckpt: &Checkpoint, train: &Dataset, test: &Dataset, cfg: &EvalConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let model = &ckpt.model;
    check_pair(model, train, test)?;
    let classes = train.class_count;
    let yte = test.labels()?;
    let test_norm = test.normalized()?;
    let test_seqs: Vec<_> = test_norm.samples.iter().map(|s| &s.sequence).collect();

    let mut runs = Vec::with_capacity(cfg.repeats);
    let mut first_rep = None;
    for r in 0..cfg.repeats {
        let seed = run_seed(cfg, "finetune", r);
        let subset = stratified_subset(train, cfg.label_fraction, &mut tagged_rng(seed, "subset", &[]))?.normalized()?;
        let (tuned, head) = finetune_once(model, &subset, classes, cfg, seed)?;
        let y = tuned.represent(&test_seqs, false)?;
        let scores = y.dot(&head.weight) + &head.bias;
        runs.push(run_result(&scores, &yte, classes, seed)?);
        if first_rep.is_none() {
            first_rep = Some(y);
        }
    }
    let rep = first_rep.expect("at least one repeat");
    let train_size = runs.len().min(1) * stratified_size(train, cfg.label_fraction)?;
    assemble("finetune", classes, train_size, (&rep, &yte), runs)
}

fn stratified_size(ds: &Dataset, fraction: f64) -> Result<usize> {
    let labels = ds.labels()?;
    let mut counts = vec![0usize; ds.class_count];
    for l in labels {
        counts[l] += 1;
    }
    Ok(counts.iter().map(|&c| (fraction * c as f64).round() as usize).sum())
}

fn finetune_once(model: &Model, train: &Dataset, classes: usize, cfg: &EvalConfig, seed: u64) -> Result<(Model, LinearProbe)> {
    let mut tuned = model.clone();
    let mut rng = tagged_rng(seed, "order", &[]);
    let mut dropout_rng = tagged_rng(seed, "dropout", &[]);
    let e = model.config.encoder.embed_dim;
    let mut head = LinearProbe {
        weight: Mat::from_shape_fn((e, classes), |_| rng.random_range(-0.01..0.01)),
        bias: Mat::zeros((1, classes)),
    };
    let (mut bw, mut bb) = (Mat::zeros(head.weight.dim()), Mat::zeros(head.bias.dim()));
    let mut opt = Sgd::new(cfg.finetune_momentum);
    let labels = train.labels()?;
    let steps_per_epoch = train.len().div_ceil(cfg.finetune_batch_size);
    let total = cfg.finetune_epochs * steps_per_epoch;
    if cfg.warmup_steps >= total {
        return Err(Error::arg(format!(
            "warmup_steps {} must be below the {total} fine-tuning iterations",
            cfg.warmup_steps
        )));
    }
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0;
    for _ in 0..cfg.finetune_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.finetune_batch_size) {
            let lr = warmup_decay_lr(step, cfg.warmup_steps, total, cfg.finetune_learning_rate);
            let seqs: Vec<_> = chunk.iter().map(|&i| &train.samples[i].sequence).collect();
            let lb: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let batch = SequenceBatch::from_sequences(&seqs)?;
            let mut g = Graph::new();
            let pv = tuned.params.register(&mut g, true);
            let input = g.constant(batch.data);
            let y = encode_graph(&mut g, &pv, &tuned.config.encoder, input, &batch.layout, &mut Mode::Train(&mut dropout_rng))?;
            let w = g.leaf(head.weight.clone(), true);
            let b = g.leaf(head.bias.clone(), true);
            let logits = g.linear(y, w, b);
            let loss = g.cross_entropy(logits, &lb);
            if !g.scalar(loss).is_finite() {
                return Err(Error::Numeric(format!("non-finite fine-tuning loss at step {step}")));
            }
            let mut grads = g.backward(loss);
            let gw = grads.take(w).expect("head weight gradient");
            let gb = grads.take(b).expect("head bias gradient");
            let pg = pv.collect_grads(&g, &mut grads);
            opt.step(&mut tuned.params, &pg, lr);
            sgd_update(&mut head.weight, &mut bw, &gw, lr, cfg.finetune_momentum);
            sgd_update(&mut head.bias, &mut bb, &gb, lr, cfg.finetune_momentum);
            step += 1;
        }
    }
    Ok((tuned, head))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingPoint {
    pub sample_id: String,
    pub label: Option<usize>,
    pub u: f64,
    pub v: f64,
}

/// Centers `x` and projects it onto its top two principal axes. Each axis
/// is signed so that its largest-magnitude entry is positive.
pub fn pca_2d(x: &Mat) -> Result<Mat> {
    let (m, d) = x.dim();
    if m < 2 {
        return Err(Error::arg(format!("PCA needs at least 2 samples, got {m}")));
    }
    if d < 2 {
        return Err(Error::arg("PCA to 2-D needs embeddings with at least 2 dimensions"));
    }
    let mean = x.sum_axis(ndarray::Axis(0)) / m as f64;
    let centered = x - &mean;
    let cov = centered.t().dot(&centered) / (m - 1) as f64;
    let cov = DMatrix::from_fn(d, d, |i, j| cov[[i, j]]);
    let eig = SymmetricEigen::new(cov);
    let mut idx: Vec<usize> = (0..d).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut basis = Mat::zeros((d, 2));
    for (k, &col) in idx.iter().take(2).enumerate() {
        let v = eig.eigenvectors.column(col);
        let pivot = v.iter().copied().fold(0.0f64, |acc, e| if e.abs() > acc.abs() { e } else { acc });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for i in 0..d {
            basis[[i, k]] = sign * v[i];
        }
    }
    Ok(centered.dot(&basis))
}

pub fn export_embeddings_2d(model: &Model, ds: &Dataset, on: ProbeOn) -> Result<Vec<EmbeddingPoint>> {
    if ds.len() < 2 {
        return Err(Error::arg(format!("embedding export needs at least 2 samples, got {}", ds.len())));
    }
    let feats = extract_features(model, ds, on)?;
    let uv = pca_2d(&feats)?;
    Ok(ds
        .samples
        .iter()
        .zip(uv.rows())
        .map(|(s, r)| EmbeddingPoint {
            sample_id: s.id.clone(),
            label: s.label,
            u: r[0],
            v: r[1],
        })
        .collect())
}

pub const EMBEDDINGS_HEADER: &str = "sample_id,label,u,v";

pub fn embeddings_csv(points: &[EmbeddingPoint]) -> String {
    let mut out = String::from(EMBEDDINGS_HEADER);
    out.push('\n');
    for p in points {
        let label = p.label.map(|l| l.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{label},{:e},{:e}", p.sample_id, p.u, p.v);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn top_k_analytic() {
        let s = array![[0.5, 0.3, 0.2], [0.1, 0.8, 0.1]];
        assert_eq!(top_k_accuracy(&s, &[0, 0], 1).unwrap(), 0.5);
        // Row 2 ties classes 0 and 2 at 0.1; class 0 takes second place.
        assert_eq!(top_k_accuracy(&s, &[0, 0], 2).unwrap(), 1.0);
        assert_eq!(top_k_accuracy(&s, &[0, 2], 2).unwrap(), 0.5);
        assert_eq!(top_k_accuracy(&s, &[0, 0], 3).unwrap(), 1.0);
        assert!(top_k_accuracy(&s, &[0, 0], 0).is_err());
        assert!(top_k_accuracy(&s, &[0, 0], 4).is_err());
        // Ties go to the lower index: class 0 beats class 2 at equal score.
        let tie = array![[0.4, 0.2, 0.4]];
        assert_eq!(top_k_accuracy(&tie, &[0], 1).unwrap(), 1.0);
        assert_eq!(top_k_accuracy(&tie, &[2], 1).unwrap(), 0.0);
    }

    #[test]
    fn inertia_analytic() {
        let e = array![[0.0, 0.0], [2.0, 0.0]];
        assert_eq!(intra_class_inertia(&e, &[0, 0]).unwrap(), 2.0);
        assert_eq!(intra_class_inertia(&e, &[0, 1]).unwrap(), 0.0);
        assert!(intra_class_inertia(&e, &[0]).is_err());
    }

    #[test]
    fn ci_uses_student_t() {
        let (m, c) = mean_ci95(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        // t(0.975, 2) = 4.302653, s = 1, n = 3
        assert!((c - 4.302_652_729_911 / 3f64.sqrt()).abs() < 1e-6);
        assert_eq!(mean_ci95(&[0.7]).1, 0.0);
    }

    #[test]
    fn pca_orders_components() {
        let mut rng = rng_from_seed(1);
        let x = Mat::from_shape_fn((50, 4), |(_, j)| rng.random_range(-1.0..1.0) * (4 - j) as f64);
        let uv = pca_2d(&x).unwrap();
        let var = |c: usize| uv.column(c).mapv(|v| v * v).sum();
        assert!(var(0) >= var(1));
        assert!(pca_2d(&x.slice(ndarray::s![..1, ..]).to_owned()).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(EvalConfig::default().validate().is_ok());
        assert!(EvalConfig { label_fraction: 0.0, ..Default::default() }.validate().is_err());
        assert!(EvalConfig { label_fraction: 1.5, ..Default::default() }.validate().is_err());
        assert!(EvalConfig { repeats: 0, ..Default::default() }.validate().is_err());
    }
}
