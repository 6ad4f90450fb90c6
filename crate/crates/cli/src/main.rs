use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::Value;

use signssl::augment::AugmentMode;
use signssl::boundary::{search_boundary, trace_csv, StopRule, TrainedSegmentEvaluator};
use signssl::checkpoint::Checkpoint;
use signssl::data::{generate_synthetic, load_dataset, save_dataset, Dataset, Split, SyntheticConfig};
use signssl::eval::{embeddings_csv, export_embeddings_2d, finetune, linear_eval, linear_eval_model, transfer_eval, ProbeOn};
use signssl::trainer::{pretrain, run_ablation_suite};

mod config;

use config::{hash_tree, read_patch, resolve, Profile, RunConfig, RunRecord, RUN_RECORD_FILE};

#[derive(Parser)]
#[command(name = "signssl", version, about = "Self-supervised pretraining and evaluation for skeleton sign-language sequences")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run config merged over the profile defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Defaults profile: paper or tiny.
    #[arg(long, default_value = "paper")]
    profile: Profile,
    /// Output directory; every artifact and run.json go here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for pretraining and evaluation.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Training dataset directory.
    #[arg(long)]
    train: Option<PathBuf>,
    /// Test dataset directory.
    #[arg(long)]
    test: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labelled synthetic dataset with a planted informative window.
    SynthData {
        #[arg(long, default_value_t = 10)]
        classes: usize,
        #[arg(long, default_value_t = 20)]
        per_class: usize,
        /// Frames per sequence.
        #[arg(long, default_value_t = 24)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Fraction of leading noise frames.
        #[arg(long, default_value_t = 1.0 / 3.0)]
        signal_start: f64,
        /// Fraction of trailing noise frames.
        #[arg(long, default_value_t = 0.25)]
        signal_end: f64,
        #[arg(long, default_value_t = 8)]
        landmarks: usize,
        #[arg(long, default_value_t = 2)]
        coord_dim: usize,
        #[arg(long, default_value_t = 0.5)]
        noise: f64,
        /// Class-prototype family; splits of one task share it.
        #[arg(long, default_value_t = 0)]
        family: u64,
        /// train, test or unlabeled.
        #[arg(long, default_value = "train")]
        split: Split,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain an encoder with the three-branch objective.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        /// Positive-pair augmentation: part_permutation, classical or combined.
        #[arg(long)]
        augmentation: Option<AugmentMode>,
    },
    /// Search for the informative boundaries by retraining per segment length.
    BoundarySearch {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        /// paper_literal or peak.
        #[arg(long)]
        stop_rule: Option<StopRule>,
    },
    /// Linear probe on frozen features.
    LinearEval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Fine-tune encoder and classifier on a labelled fraction.
    Finetune {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Linear evaluation of a checkpoint on another dataset.
    Transfer {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        source_name: Option<String>,
        #[arg(long)]
        target_name: Option<String>,
    },
    /// Pretrain every ablation variant and record collapse statistics.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Project representations to 2-D with PCA.
    ExportEmbeddings {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        dataset: PathBuf,
        /// Project the projection-head output instead of the representation.
        #[arg(long)]
        projection: bool,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let usage = e.chain().any(|c| c.downcast_ref::<signssl::Error>().is_some_and(|e| e.is_usage_error()));
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}

struct Run {
    cfg: RunConfig,
    patch: Value,
    profile: Profile,
    out: PathBuf,
}

impl Run {
    fn new(common: &Common, data: Option<&DataArgs>, checkpoint: Option<&PathBuf>) -> anyhow::Result<Self> {
        let patch = match &common.config {
            Some(path) => read_patch(path)?,
            None => Value::Object(Default::default()),
        };
        let mut cfg = resolve(common.profile, patch.clone())?;
        if let Some(seed) = common.seed {
            cfg.seed = Some(seed);
            cfg.resolve_seed();
        }
        if let Some(d) = data {
            if d.train.is_some() {
                cfg.data.train = d.train.clone();
            }
            if d.test.is_some() {
                cfg.data.test = d.test.clone();
            }
        }
        if let Some(c) = checkpoint {
            cfg.data.checkpoint = Some(c.clone());
        }
        if let Some(o) = &common.out {
            cfg.output_dir = Some(o.clone());
        }
        let out = cfg
            .output_dir
            .clone()
            .ok_or_else(|| signssl::Error::Argument("no output directory: pass --out or set output_dir".into()))?;
        Ok(Self { cfg, patch, profile: common.profile, out })
    }

    fn dataset(&self, path: &Option<PathBuf>, what: &str) -> anyhow::Result<Dataset> {
        let path = path
            .as_ref()
            .ok_or_else(|| signssl::Error::Argument(format!("no {what} dataset: pass --{what} or set data.{what}")))?;
        if !path.exists() {
            return Err(signssl::Error::Argument(format!("{what} dataset {} does not exist", path.display())).into());
        }
        Ok(load_dataset(path).with_context(|| format!("loading {what} dataset {}", path.display()))?)
    }

    fn checkpoint(&self) -> anyhow::Result<Checkpoint> {
        let path = self
            .cfg
            .data
            .checkpoint
            .as_ref()
            .ok_or_else(|| signssl::Error::Argument("no checkpoint: pass --checkpoint or set data.checkpoint".into()))?;
        if !path.exists() {
            return Err(signssl::Error::Argument(format!("checkpoint {} does not exist", path.display())).into());
        }
        Ok(Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?)
    }

    /// Adopts the dataset's frame size and length unless the config fixed them.
    fn fit_model_to(&mut self, ds: &Dataset) -> anyhow::Result<()> {
        let explicit = |key: &str| self.patch.pointer(&format!("/model/encoder/{key}")).is_some();
        let enc = &mut self.cfg.model.encoder;
        if enc.input_dim != ds.frame_size() {
            if explicit("input_dim") {
                return Err(signssl::Error::Argument(format!(
                    "model.encoder.input_dim {} does not match the dataset frame size {}",
                    enc.input_dim,
                    ds.frame_size()
                ))
                .into());
            }
            enc.input_dim = ds.frame_size();
        }
        if enc.max_len < ds.max_len {
            if explicit("max_len") {
                return Err(signssl::Error::Argument(format!(
                    "model.encoder.max_len {} is shorter than the dataset length {}",
                    enc.max_len, ds.max_len
                ))
                .into());
            }
            enc.max_len = ds.max_len;
        }
        Ok(())
    }

    fn prepare(&self) -> anyhow::Result<()> {
        self.cfg.validate()?;
        std::fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        Ok(())
    }

    fn write(&self, rel: &str, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
        let path = self.out.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
    }

    fn write_json(&self, rel: &str, value: &impl Serialize) -> anyhow::Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(rel, text)
    }

    fn finish(&self, command: &str) -> anyhow::Result<()> {
        let record = RunRecord {
            command: command.into(),
            profile: self.profile,
            config: self.cfg.clone(),
            artifacts: hash_tree(&self.out)?,
        };
        self.write_json(RUN_RECORD_FILE, &record)
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::SynthData {
            classes,
            per_class,
            n,
            seed,
            signal_start,
            signal_end,
            landmarks,
            coord_dim,
            noise,
            family,
            split,
            out,
        } => {
            let cfg = SyntheticConfig {
                class_count: classes,
                samples_per_class: per_class,
                n_frames: n,
                landmark_count: landmarks,
                coord_dim,
                signal_start_fraction: signal_start,
                signal_end_fraction: signal_end,
                noise_scale: noise,
                seed,
                family,
                split,
                max_len: None,
            };
            let ds = generate_synthetic(&cfg)?;
            save_dataset(&ds, &out)?;
            #[derive(Serialize)]
            struct SynthRecord {
                command: &'static str,
                synthetic: SyntheticConfig,
                artifacts: std::collections::BTreeMap<String, String>,
            }
            let record = SynthRecord { command: "synth-data", synthetic: cfg, artifacts: hash_tree(&out)? };
            let mut text = serde_json::to_string_pretty(&record)?;
            text.push('\n');
            std::fs::write(out.join(RUN_RECORD_FILE), text)?;
            println!("wrote {} samples to {}", ds.len(), out.display());
        }
        Command::Pretrain { common, data, augmentation } => {
            let mut run = Run::new(&common, Some(&data), None)?;
            if let Some(mode) = augmentation {
                run.cfg.pretrain.augmentation.mode = mode;
            }
            let train = run.dataset(&run.cfg.data.train.clone(), "train")?;
            run.fit_model_to(&train)?;
            run.prepare()?;
            let (ckpt, log) = pretrain(&train, &run.cfg.model, &run.cfg.pretrain)?;
            ckpt.save(run.out.join("checkpoint"))?;
            run.write("train_log.csv", log.to_csv())?;
            run.finish("pretrain")?;
            println!(
                "pretrained {} steps; final loss {:.6e}",
                ckpt.step,
                log.records.last().map_or(f64::NAN, |r| r.total)
            );
        }
        Command::BoundarySearch { common, data, stop_rule } => {
            let mut run = Run::new(&common, Some(&data), None)?;
            if let Some(rule) = stop_rule {
                run.cfg.boundary.stop_rule = rule;
            }
            let train = run.dataset(&run.cfg.data.train.clone(), "train")?;
            let test = run.dataset(&run.cfg.data.test.clone(), "test")?;
            run.fit_model_to(&train)?;
            run.prepare()?;
            let pretrain_cfg = signssl::trainer::PretrainConfig { epochs: run.cfg.boundary.epochs, ..run.cfg.pretrain.clone() };
            let mut evaluator = TrainedSegmentEvaluator::new(&train, &test, run.cfg.model.clone(), pretrain_cfg, run.cfg.eval.clone());
            let result = search_boundary(&mut evaluator, train.max_len, run.cfg.boundary.stop_rule)?;
            run.write_json("boundary.json", &result)?;
            run.write("trace_first.csv", trace_csv(&result.trace_first))?;
            run.write("trace_last.csv", trace_csv(&result.trace_last))?;
            run.finish("boundary-search")?;
            println!("ks* = {}, ke* = {} ({} trainings)", result.ks_star, result.ke_star, evaluator.trainings());
        }
        Command::LinearEval { common, data, checkpoint } => {
            let run = Run::new(&common, Some(&data), checkpoint.as_ref())?;
            let (ckpt, train, test) = eval_inputs(&run)?;
            run.prepare()?;
            let report = linear_eval(&ckpt, &train, &test, &run.cfg.eval)?;
            run.write_json("report.json", &report)?;
            run.finish("linear-eval")?;
            println!("top-1 {:.4} ± {:.4}", report.top1_mean, report.top1_ci95);
        }
        Command::Finetune { common, data, checkpoint } => {
            let run = Run::new(&common, Some(&data), checkpoint.as_ref())?;
            let (ckpt, train, test) = eval_inputs(&run)?;
            run.prepare()?;
            let report = finetune(&ckpt, &train, &test, &run.cfg.eval)?;
            run.write_json("report.json", &report)?;
            run.finish("finetune")?;
            println!("top-1 {:.4} ± {:.4}", report.top1_mean, report.top1_ci95);
        }
        Command::Transfer { common, data, checkpoint, source_name, target_name } => {
            let mut run = Run::new(&common, Some(&data), checkpoint.as_ref())?;
            if let Some(s) = source_name {
                run.cfg.transfer.source = s;
            }
            if let Some(t) = target_name {
                run.cfg.transfer.target = t;
            }
            let (ckpt, train, test) = eval_inputs(&run)?;
            run.prepare()?;
            let t = &run.cfg.transfer;
            let report = transfer_eval(&ckpt, &train, &test, &run.cfg.eval, &t.source, &t.target)?;
            run.write_json("report.json", &report)?;
            run.finish("transfer")?;
            println!("{} -> {}: top-1 {:.4} ± {:.4}", t.source, t.target, report.top1_mean, report.top1_ci95);
        }
        Command::Ablate { common, data } => {
            let mut run = Run::new(&common, Some(&data), None)?;
            let train = run.dataset(&run.cfg.data.train.clone(), "train")?;
            let test = match &run.cfg.data.test {
                Some(_) => Some(run.dataset(&run.cfg.data.test.clone(), "test")?),
                None => None,
            };
            run.fit_model_to(&train)?;
            run.prepare()?;
            let results = run_ablation_suite(&train, &run.cfg.model, &run.cfg.pretrain)?;
            #[derive(Serialize)]
            struct VariantSummary {
                variant: String,
                final_embedding_std: Option<f64>,
                final_total_loss: Option<f64>,
                top1_mean: Option<f64>,
            }
            let mut summary = Vec::new();
            for (variant, (ckpt, log)) in &results {
                let name = variant.name();
                ckpt.save(run.out.join(name).join("checkpoint"))?;
                run.write(&format!("{name}/train_log.csv"), log.to_csv())?;
                let top1 = match &test {
                    Some(t) => Some(linear_eval_model(&ckpt.model, &train, t, &run.cfg.eval)?.top1_mean),
                    None => None,
                };
                summary.push(VariantSummary {
                    variant: name.to_string(),
                    final_embedding_std: log.final_embedding_std(),
                    final_total_loss: log.records.last().map(|r| r.total),
                    top1_mean: top1,
                });
                println!("{name}: final std {:?}", log.final_embedding_std());
            }
            run.write_json("ablation.json", &summary)?;
            run.finish("ablate")?;
        }
        Command::ExportEmbeddings { common, checkpoint, dataset, projection } => {
            let run = Run::new(&common, None, checkpoint.as_ref())?;
            let ckpt = run.checkpoint()?;
            let ds = run.dataset(&Some(dataset), "dataset")?;
            run.prepare()?;
            let on = if projection { ProbeOn::Projection } else { ProbeOn::Representation };
            let points = export_embeddings_2d(&ckpt.model, &ds, on)?;
            run.write("embeddings.csv", embeddings_csv(&points))?;
            run.finish("export-embeddings")?;
            println!("exported {} points", points.len());
        }
    }
    Ok(())
}

fn eval_inputs(run: &Run) -> anyhow::Result<(Checkpoint, Dataset, Dataset)> {
    let ckpt = run.checkpoint()?;
    let train = run.dataset(&run.cfg.data.train, "train")?;
    let test = run.dataset(&run.cfg.data.test, "test")?;
    Ok((ckpt, train, test))
}

