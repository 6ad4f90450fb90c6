//! Self-supervised pretraining loop, collapse monitoring and the ablation
//! suite.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::augment::{make_positive_pair, segment_permutation_pair, AugmentConfig, SegmentPosition};
use crate::checkpoint::Checkpoint;
use crate::data::{Dataset, SkeletonSequence};
use crate::error::{Error, Result};
use crate::loss::{loss_graph, AblationFlags, LossBreakdown};
use crate::model::{forward_three_branch, Mode, Model, ModelConfig, SequenceBatch};
use crate::optim::Sgd;
use crate::rng::{hash_str, tagged_rng, Rng, RngState};
use crate::tape::{Graph, Mat};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub epochs: usize,
    /// Clamped to the dataset size when larger.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub augmentation: AugmentConfig,
    pub ablation: AblationFlags,
    /// Remove the input-stage layer norms from the encoder.
    pub no_layernorm: bool,
    /// Scale embeddings to unit length before the MSE terms.
    pub normalize_embeddings: bool,
    pub seed: u64,
    /// Steps between embedding-std measurements.
    pub collapse_log_every: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 512,
            learning_rate: 0.001,
            momentum: 0.9,
            augmentation: AugmentConfig::default(),
            ablation: AblationFlags::default(),
            no_layernorm: false,
            normalize_embeddings: false,
            seed: 0,
            collapse_log_every: 1,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::arg("epochs must be at least 1"));
        }
        if self.batch_size < 2 {
            return Err(Error::arg("batch_size must be at least 2"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::arg(format!("learning_rate {} must be positive", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::arg(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if self.collapse_log_every < 1 {
            return Err(Error::arg("collapse_log_every must be at least 1"));
        }
        self.ablation.validate()?;
        self.augmentation.classical.validate()
    }

    /// The model configuration actually trained under these settings.
    pub fn effective_model(&self, model: &ModelConfig) -> ModelConfig {
        let mut m = model.clone();
        if self.no_layernorm {
            m.encoder.input_layernorm_count = 0;
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub total: f64,
    /// Present on every `collapse_log_every`-th step and on the last step.
    pub embedding_std: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<StepRecord>,
    pub wall_clock_secs: f64,
}

pub const TRAIN_LOG_HEADER: &str = "step,l1,l2,l3,total,embedding_std";

impl TrainLog {
    /// CSV with columns `step,l1,l2,l3,total,embedding_std`; steps without a
    /// std measurement leave the last cell empty. Wall-clock time is not
    /// part of the CSV.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(TRAIN_LOG_HEADER);
        out.push('\n');
        for r in &self.records {
            let std = r.embedding_std.map(|s| format!("{s:e}")).unwrap_or_default();
            let _ = writeln!(out, "{},{:e},{:e},{:e},{:e},{std}", r.step, r.l1, r.l2, r.l3, r.total);
        }
        out
    }

    pub fn final_embedding_std(&self) -> Option<f64> {
        self.records.iter().rev().find_map(|r| r.embedding_std)
    }

    /// Mean total loss over the first (or last) `n` records.
    pub fn mean_total(&self, n: usize, last: bool) -> f64 {
        let n = n.min(self.records.len()).max(1);
        let slice = if last {
            &self.records[self.records.len() - n..]
        } else {
            &self.records[..n]
        };
        slice.iter().map(|r| r.total).sum::<f64>() / slice.len() as f64
    }
}

/// Per-dimension population std across the batch rows, averaged over
/// dimensions.
pub fn embedding_std(z: &Mat) -> Result<f64> {
    let (b, n) = z.dim();
    if b < 2 {
        return Err(Error::arg(format!("embedding_std needs at least 2 rows, got {b}")));
    }
    if n == 0 {
        return Err(Error::arg("embedding_std of zero-width embeddings"));
    }
    let mut acc = 0.0;
    for col in z.columns() {
        let mean = col.sum() / b as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / b as f64;
        acc += var.sqrt();
    }
    Ok(acc / n as f64)
}

/// How each training sample is turned into a positive pair.
#[derive(Debug, Clone, PartialEq)]
pub enum PairSource {
    Augment(AugmentConfig),
    /// Two independent shuffles of the first or last `k` frames.
    Segment { k: usize, position: SegmentPosition },
}

impl PairSource {
    fn pair(&self, seq: &SkeletonSequence, rng: &mut Rng) -> Result<(SkeletonSequence, SkeletonSequence)> {
        match self {
            PairSource::Augment(cfg) => make_positive_pair(seq, cfg, rng),
            PairSource::Segment { k, position } => segment_permutation_pair(seq, *k, *position, rng),
        }
    }
}

/// Pretrains a freshly initialized model with pairs from `cfg.augmentation`.
pub fn pretrain(dataset: &Dataset, model: &ModelConfig, cfg: &PretrainConfig) -> Result<(Checkpoint, TrainLog)> {
    pretrain_with(dataset, model, None, cfg, &PairSource::Augment(cfg.augmentation.clone()))
}

/// Full control: optional starting parameters and an explicit pair source.
pub fn pretrain_with(
    dataset: &Dataset,
    model_cfg: &ModelConfig,
    init: Option<&Model>,
    cfg: &PretrainConfig,
    pairs: &PairSource,
) -> Result<(Checkpoint, TrainLog)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::arg("cannot pretrain on an empty dataset"));
    }
    if dataset.len() < 2 {
        return Err(Error::arg("pretraining needs at least 2 samples"));
    }
    let mcfg = cfg.effective_model(model_cfg);
    mcfg.validate()?;
    if mcfg.encoder.input_dim != dataset.frame_size() {
        return Err(Error::arg(format!(
            "model expects {} values per frame, dataset has {}",
            mcfg.encoder.input_dim,
            dataset.frame_size()
        )));
    }
    if dataset.max_len > mcfg.encoder.max_len {
        return Err(Error::arg(format!(
            "dataset max_len {} exceeds the encoder's {}",
            dataset.max_len, mcfg.encoder.max_len
        )));
    }
    let data = dataset.normalized()?;
    let start = Instant::now();

    let mut model = match init {
        Some(m) => {
            if m.config != mcfg {
                return Err(Error::arg("initial model configuration differs from the training configuration"));
            }
            m.clone()
        }
        None => Model::init(mcfg.clone(), &mut tagged_rng(cfg.seed, "init", &[]))?,
    };
    let mut opt = Sgd::new(cfg.momentum);
    let batch = cfg.batch_size.min(data.len());
    let per_epoch = data.len() / batch;
    let total_steps = cfg.epochs * per_epoch;
    let predictor = cfg.ablation.predictor_input();
    let mut dropout_rng = tagged_rng(cfg.seed, "dropout", &[]);
    let mut log = TrainLog::default();
    let mut step: u64 = 0;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut tagged_rng(cfg.seed, "order", &[epoch as u64]));
        for chunk in order.chunks_exact(batch) {
            let mut x = Vec::with_capacity(batch);
            let mut v1 = Vec::with_capacity(batch);
            let mut v2 = Vec::with_capacity(batch);
            for &i in chunk {
                let s = &data.samples[i];
                let mut prng = tagged_rng(cfg.seed, "pair", &[epoch as u64, hash_str(&s.id)]);
                let (a, b) = pairs.pair(&s.sequence, &mut prng)?;
                x.push(&s.sequence);
                v1.push(a);
                v2.push(b);
            }
            let xb = SequenceBatch::from_sequences(&x)?;
            let b1 = SequenceBatch::from_sequences(&v1.iter().collect::<Vec<_>>())?;
            let b2 = SequenceBatch::from_sequences(&v2.iter().collect::<Vec<_>>())?;

            let mut g = Graph::new();
            let pv = model.params.register(&mut g, true);
            let out = forward_three_branch(
                &mut g,
                &pv,
                &model.config,
                &xb,
                &b1,
                &b2,
                predictor,
                &mut Mode::Train(&mut dropout_rng),
            )?;
            let lv = loss_graph(&mut g, &out, cfg.ablation, cfg.normalize_embeddings)?;
            let losses: LossBreakdown = lv.breakdown(&g);
            if !losses.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss at step {step}: l1={} l2={} l3={} total={}",
                    losses.l1, losses.l2, losses.l3, losses.total
                )));
            }
            let is_last = step + 1 == total_steps as u64;
            let std = if step % cfg.collapse_log_every as u64 == 0 || is_last {
                Some(embedding_std(g.value(out.z))?)
            } else {
                None
            };
            let mut grads = g.backward(lv.total);
            let grads = pv.collect_grads(&g, &mut grads);
            opt.step(&mut model.params, &grads, cfg.learning_rate);
            if !model.params.all_finite() {
                return Err(Error::Numeric(format!("parameters became non-finite at step {step}")));
            }
            log.records.push(StepRecord {
                step,
                l1: losses.l1,
                l2: losses.l2,
                l3: losses.l3,
                total: losses.total,
                embedding_std: std,
            });
            step += 1;
        }
    }
    log.wall_clock_secs = start.elapsed().as_secs_f64();
    let ckpt = Checkpoint {
        model,
        step,
        rng_state: RngState::capture(&dropout_rng),
    };
    Ok((ckpt, log))
}

/// Named ablation settings compared in the collapse study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    Full,
    #[serde(rename = "without_p_and_LN")]
    WithoutPAndLn,
    #[serde(rename = "without_p_with_LN")]
    WithoutPWithLn,
    WithoutO,
    Perm,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 5] = [
        AblationVariant::Full,
        AblationVariant::WithoutPAndLn,
        AblationVariant::WithoutPWithLn,
        AblationVariant::WithoutO,
        AblationVariant::Perm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationVariant::Full => "full",
            AblationVariant::WithoutPAndLn => "without_p_and_LN",
            AblationVariant::WithoutPWithLn => "without_p_with_LN",
            AblationVariant::WithoutO => "without_o",
            AblationVariant::Perm => "perm",
        }
    }

    /// `base` with this variant's flags; all other settings are kept.
    pub fn apply(self, base: &PretrainConfig) -> PretrainConfig {
        let mut cfg = base.clone();
        cfg.ablation = AblationFlags::default();
        cfg.no_layernorm = false;
        match self {
            AblationVariant::Full => {}
            AblationVariant::WithoutPAndLn => {
                cfg.ablation.no_predictor = true;
                cfg.no_layernorm = true;
            }
            AblationVariant::WithoutPWithLn => cfg.ablation.no_predictor = true,
            AblationVariant::WithoutO => cfg.ablation.no_original = true,
            AblationVariant::Perm => cfg.ablation.permuted_branches = true,
        }
        cfg
    }
}

pub type AblationResults = BTreeMap<AblationVariant, (Checkpoint, TrainLog)>;

/// Pretrains every ablation variant with the same seed.
pub fn run_ablation_suite(dataset: &Dataset, model: &ModelConfig, base: &PretrainConfig) -> Result<AblationResults> {
    AblationVariant::ALL
        .iter()
        .map(|&v| Ok((v, pretrain(dataset, model, &v.apply(base))?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng as _;

    #[test]
    fn std_analytic_cases() {
        assert_eq!(embedding_std(&array![[1.0, 0.0], [0.0, 1.0]]).unwrap(), 0.5);
        assert_eq!(embedding_std(&array![[0.3, -2.0], [0.3, -2.0], [0.3, -2.0]]).unwrap(), 0.0);
        assert!(embedding_std(&array![[1.0, 2.0]]).is_err());
    }

    #[test]
    fn std_matches_two_pass_oracle() {
        let mut rng = crate::rng::rng_from_seed(4);
        let z = Mat::from_shape_fn((17, 9), |_| rng.random_range(-3.0..3.0));
        let mut oracle = 0.0;
        for j in 0..9 {
            let mut mean = 0.0;
            for i in 0..17 {
                mean += z[[i, j]];
            }
            mean /= 17.0;
            let mut ss = 0.0;
            for i in 0..17 {
                ss += (z[[i, j]] - mean).powi(2);
            }
            oracle += (ss / 17.0).sqrt();
        }
        oracle /= 9.0;
        assert!((embedding_std(&z).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        let ok = PretrainConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            PretrainConfig { epochs: 0, ..ok.clone() },
            PretrainConfig { batch_size: 1, ..ok.clone() },
            PretrainConfig { learning_rate: 0.0, ..ok.clone() },
            PretrainConfig { collapse_log_every: 0, ..ok.clone() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Argument(_))));
        }
    }

    #[test]
    fn variants_are_distinct() {
        let base = PretrainConfig::default();
        let cfgs: Vec<_> = AblationVariant::ALL.iter().map(|v| v.apply(&base)).collect();
        for i in 0..cfgs.len() {
            assert!(cfgs[i].validate().is_ok());
            for j in i + 1..cfgs.len() {
                assert_ne!(cfgs[i], cfgs[j]);
            }
        }
        assert_eq!(AblationVariant::Full.apply(&base), base);
        assert_eq!(serde_json::to_string(&AblationVariant::WithoutPAndLn).unwrap(), "\"without_p_and_LN\"");
    }

    #[test]
    fn csv_layout() {
        let log = TrainLog {
            records: vec![
                StepRecord { step: 0, l1: 1.0, l2: 0.5, l3: 0.25, total: 1.75, embedding_std: Some(0.1) },
                StepRecord { step: 1, l1: 1.0, l2: 0.5, l3: 0.25, total: 1.75, embedding_std: None },
            ],
            wall_clock_secs: 3.0,
        };
        let csv = log.to_csv();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], TRAIN_LOG_HEADER);
        assert_eq!(lines[1], "0,1e0,5e-1,2.5e-1,1.75e0,1e-1");
        assert!(lines[2].ends_with(','));
        assert_eq!(log.final_embedding_std(), Some(0.1));
    }
}
