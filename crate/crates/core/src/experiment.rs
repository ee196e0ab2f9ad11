//! The two-stage pipeline: contrastive pre-training of encoder and mixture
//! head, then a linear classifier on the frozen encoder.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{group_digest, Checkpoint};
use crate::data::{self, AugmentConfig, Dataset, Sample, SyntheticDatasetConfig};
use crate::digest::json_sha256;
use crate::error::{Error, Result};
use crate::grad::{AdamConfig, AdamState, OneCycle, Tape};
use crate::losses::{asl_loss, AslConfig, ContrastiveLossConfig, Similarity};
use crate::metrics::{pr_f1_report, Metrics, MetricsReport, PredictionSet, DEFAULT_THRESHOLD};
use crate::model::{classifier_forward, encoder_forward, record_classifier, Group, ModelConfig, ModelParams};
use crate::objective::record_total_loss;
use crate::overlap::{LabelVector, OverlapMeasure};
use crate::rng::derive_seed;

/// All three keys are required when a stage table is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub epochs: usize,
    /// Source samples per step; a contrastive step sees twice as many views.
    pub batch_size: usize,
    pub peak_lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Fraction of the dataset held out for evaluation.
    pub test_frac: f64,
    pub threshold: f64,
    pub dataset: SyntheticDatasetConfig,
    pub model: ModelConfig,
    pub loss: ContrastiveLossConfig,
    pub asl: AslConfig,
    pub augment: AugmentConfig,
    pub adam: AdamConfig,
    pub schedule: OneCycle,
    pub contrastive: StageConfig,
    pub classifier: StageConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let dataset = SyntheticDatasetConfig::default();
        let model = ModelConfig {
            input_dim: dataset.input_dim,
            encoder_hidden: vec![32],
            embed_dim: 16,
            mixture_dim: 4,
            num_classes: dataset.num_classes,
            mdn_hidden: vec![64, 32],
            ..Default::default()
        };
        Self {
            seed: 0,
            test_frac: 0.2,
            threshold: DEFAULT_THRESHOLD,
            dataset,
            model,
            loss: ContrastiveLossConfig::default(),
            asl: AslConfig::default(),
            augment: AugmentConfig::default(),
            adam: AdamConfig::default(),
            schedule: OneCycle::default(),
            contrastive: StageConfig { epochs: 20, batch_size: 64, peak_lr: 3e-3 },
            classifier: StageConfig { epochs: 10, batch_size: 64, peak_lr: 1e-2 },
        }
    }
}

fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Hex SHA-256 of the full effective config, seed included.
    pub fn hash(&self) -> String {
        json_sha256(self)
    }

    pub fn validate(&self) -> Result<()> {
        let as_config = |e: Error| match e {
            Error::Input(m) => Error::Config(m),
            other => other,
        };
        if self.seed > i64::MAX as u64 || self.dataset.seed > i64::MAX as u64 {
            return config_err(format!("seeds must be at most {}", i64::MAX));
        }
        if !(0.0..1.0).contains(&self.test_frac) || self.test_frac * (self.dataset.num_samples as f64) < 0.5 {
            return config_err("test_frac must be in [0,1) and hold out at least one sample");
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return config_err("threshold must be in (0,1)");
        }
        self.dataset.validate()?;
        self.model.validate().map_err(as_config)?;
        if self.model.input_dim != self.dataset.input_dim || self.model.num_classes != self.dataset.num_classes {
            return config_err("model input_dim and num_classes must match the dataset");
        }
        self.loss.validate().map_err(as_config)?;
        if self.loss.sim != Similarity::Correlation {
            return config_err("training needs the differentiable correlation similarity");
        }
        self.asl.validate().map_err(as_config)?;
        self.augment.validate()?;
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return config_err("adam needs betas in [0,1) and eps > 0");
        }
        let s = &self.schedule;
        if !(0.0..=1.0).contains(&s.warmup_frac) || !(s.initial_div >= 1.0) || !(s.final_div >= 1.0) {
            return config_err("schedule needs warmup_frac in [0,1] and divisors ≥ 1");
        }
        for (name, st) in [("contrastive", &self.contrastive), ("classifier", &self.classifier)] {
            if st.epochs == 0 || st.batch_size == 0 || !(st.peak_lr > 0.0 && st.peak_lr.is_finite()) {
                return config_err(format!("{name} stage needs epochs ≥ 1, batch_size ≥ 1, peak_lr > 0"));
            }
        }
        Ok(())
    }

    fn split(&self, ds: &Dataset) -> Result<(Vec<usize>, Vec<usize>)> {
        data::train_test_split(ds.samples.len(), self.test_frac, derive_seed(self.dataset.seed, 0x5711))
    }
}

/// A tunable loss hyperparameter for sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Tau,
    Alpha,
    Lambda,
    Measure,
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tau" => Ok(Self::Tau),
            "alpha" => Ok(Self::Alpha),
            "lambda" => Ok(Self::Lambda),
            "measure" => Ok(Self::Measure),
            _ => config_err(format!("unknown sweep parameter {s:?}; expected tau, alpha, lambda or measure")),
        }
    }
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            Self::Tau => "tau",
            Self::Alpha => "alpha",
            Self::Lambda => "lambda",
            Self::Measure => "measure",
        }
    }

    /// Copy of `base` with this parameter set from its textual value.
    pub fn apply(self, base: &ExperimentConfig, value: &str) -> Result<ExperimentConfig> {
        let mut cfg = base.clone();
        let num = || value.parse::<f64>().map_err(|_| Error::Config(format!("{value:?} is not a number")));
        match self {
            Self::Tau => cfg.loss.tau = num()?,
            Self::Alpha => cfg.loss.alpha = num()?,
            Self::Lambda => cfg.loss.lambda = num()?,
            Self::Measure => cfg.loss.measure = value.parse::<OverlapMeasure>().map_err(|e| Error::Config(e.to_string()))?,
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub total: f64,
    pub nll: f64,
    pub pcl: f64,
    pub mean_positive_set_size: f64,
    /// Learning rate at the last step of the epoch.
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveRun {
    pub checkpoint: Checkpoint,
    pub curve: Vec<EpochRecord>,
}

impl ContrastiveRun {
    /// Mean positive-set size over every training step.
    pub fn mean_positive_set_size(&self) -> f64 {
        self.curve.iter().map(|r| r.mean_positive_set_size).sum::<f64>() / self.curve.len() as f64
    }
}

fn batches(indices: &[usize], batch_size: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order = indices.to_vec();
    order.shuffle(&mut crate::rng::seeded(seed));
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

fn at_step(step: usize, e: Error) -> Error {
    match e {
        Error::Numeric(m) => Error::Numeric(format!("step {step}: {m}")),
        other => other,
    }
}

/// Stage one: encoder and mixture head on `NLL + λ·PCL`.
pub fn train_contrastive(cfg: &ExperimentConfig) -> Result<ContrastiveRun> {
    cfg.validate()?;
    let ds = data::generate_synthetic(&cfg.dataset)?;
    let (train, _) = cfg.split(&ds)?;
    let mut params = ModelParams::init(&cfg.model, derive_seed(cfg.seed, 1))?;
    let mask = params.mask(&[Group::Encoder, Group::Mdn]);
    let mut adam = AdamState::new(params.num_trainable(), cfg.adam);
    let steps_per_epoch = train.len().div_ceil(cfg.contrastive.batch_size);
    let total_steps = cfg.contrastive.epochs * steps_per_epoch;
    let mut tape = Tape::new();
    let mut curve = Vec::with_capacity(cfg.contrastive.epochs);
    let mut step = 0;
    for epoch in 0..cfg.contrastive.epochs {
        let mut sums = [0.0; 4];
        let mut lr = 0.0;
        let epoch_seed = derive_seed(cfg.seed, 0x1000 + epoch as u64);
        let order = batches(&train, cfg.contrastive.batch_size, epoch_seed);
        for (b, idx) in order.iter().enumerate() {
            let samples: Vec<Sample> = idx.iter().map(|&i| ds.samples[i].clone()).collect();
            let batch = data::make_contrastive_batch(&samples, &cfg.augment, derive_seed(epoch_seed, b as u64))?;
            tape.clear();
            let vars = tape.leaves(&params.data);
            let (out, parts) = record_total_loss(&mut tape, &params, &vars, &batch.views, &batch.labels, &cfg.loss)
                .map_err(|e| at_step(step, e))?;
            let grads = tape.backward(out).map_err(|e| at_step(step, e))?.collect(&vars);
            lr = cfg.schedule.lr(step, total_steps, cfg.contrastive.peak_lr)?;
            adam.step(&mut params.data, &grads, lr, Some(&mask))?;
            if params.data.iter().any(|w| !w.is_finite()) {
                return Err(Error::Numeric(format!("step {step}: parameters became non-finite")));
            }
            for (s, v) in sums.iter_mut().zip([parts.total, parts.nll, parts.pcl, parts.mean_positive_set_size]) {
                *s += v;
            }
            step += 1;
        }
        let n = order.len() as f64;
        curve.push(EpochRecord {
            epoch: epoch + 1,
            total: sums[0] / n,
            nll: sums[1] / n,
            pcl: sums[2] / n,
            mean_positive_set_size: sums[3] / n,
            lr,
        });
    }
    Ok(ContrastiveRun { checkpoint: Checkpoint { params, config_hash: cfg.hash() }, curve })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierRun {
    /// Encoder and classifier; the mixture head is gone.
    pub checkpoint: Checkpoint,
    pub curve: Vec<EpochRecord>,
    pub report: MetricsReport,
}

fn check_checkpoint(cfg: &ExperimentConfig, ck: &Checkpoint) -> Result<()> {
    if ck.params.config != cfg.model {
        return config_err("checkpoint model does not match the config");
    }
    if ck.config_hash != cfg.hash() {
        return config_err(format!(
            "checkpoint was produced by config {} but this config hashes to {}",
            ck.config_hash,
            cfg.hash()
        ));
    }
    Ok(())
}

fn embed(params: &ModelParams, samples: &[Sample], idx: &[usize]) -> Result<Vec<Vec<f64>>> {
    idx.iter().map(|&i| encoder_forward(params, &samples[i].x)).collect()
}

/// Stage two: ASL-trained linear head on frozen embeddings, evaluated on
/// the held-out split.
pub fn train_classifier(cfg: &ExperimentConfig, ck: &Checkpoint) -> Result<ClassifierRun> {
    cfg.validate()?;
    check_checkpoint(cfg, ck)?;
    let ds = data::generate_synthetic(&cfg.dataset)?;
    let (train, test) = cfg.split(&ds)?;
    let mut params = ck.params.without(Group::Mdn);
    let frozen = group_digest(&params, Group::Encoder);
    let embeddings = embed(&params, &ds.samples, &train)?;
    let mask = params.mask(&[Group::Classifier]);
    let mut adam = AdamState::new(params.num_trainable(), cfg.adam);
    let positions: Vec<usize> = (0..train.len()).collect();
    let steps_per_epoch = train.len().div_ceil(cfg.classifier.batch_size);
    let total_steps = cfg.classifier.epochs * steps_per_epoch;
    let mut tape = Tape::new();
    let mut curve = Vec::with_capacity(cfg.classifier.epochs);
    let mut step = 0;
    for epoch in 0..cfg.classifier.epochs {
        let mut sum = 0.0;
        let mut lr = 0.0;
        let order = batches(&positions, cfg.classifier.batch_size, derive_seed(cfg.seed, 0x2000 + epoch as u64));
        for idx in &order {
            tape.clear();
            let vars = tape.leaves(&params.data);
            let mut probs = Vec::with_capacity(idx.len());
            let mut labels: Vec<LabelVector> = Vec::with_capacity(idx.len());
            for &p in idx {
                probs.push(record_classifier(&mut tape, &params, &vars, &embeddings[p])?);
                labels.push(ds.samples[train[p]].y.clone());
            }
            let values: Vec<Vec<f64>> = probs.iter().map(|p| tape.values(p)).collect();
            let asl = asl_loss(&values, &labels, &cfg.asl).map_err(|e| at_step(step, e))?;
            let partials: Vec<_> = probs
                .iter()
                .flatten()
                .copied()
                .zip(asl.grads.iter().flatten().copied())
                .collect();
            let out = tape.custom("asl", asl.loss, &partials);
            let grads = tape.backward(out).map_err(|e| at_step(step, e))?.collect(&vars);
            lr = cfg.schedule.lr(step, total_steps, cfg.classifier.peak_lr)?;
            adam.step(&mut params.data, &grads, lr, Some(&mask))?;
            sum += asl.loss;
            step += 1;
        }
        let mean = sum / order.len() as f64;
        curve.push(EpochRecord { epoch: epoch + 1, total: mean, nll: 0.0, pcl: 0.0, mean_positive_set_size: 0.0, lr });
    }
    if group_digest(&params, Group::Encoder) != frozen {
        return Err(Error::Numeric("encoder weights changed during classifier training".into()));
    }
    let report = evaluate_on(&params, &ds.samples, &test, cfg.threshold)?;
    Ok(ClassifierRun { checkpoint: Checkpoint { params, config_hash: cfg.hash() }, curve, report })
}

/// Which samples of the configured dataset to score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Split {
    Train,
    #[default]
    Test,
    All,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Self::Train),
            "test" => Ok(Self::Test),
            "all" => Ok(Self::All),
            _ => config_err(format!("unknown split {s:?}; expected train, test or all")),
        }
    }
}

/// Scores `idx` with a classifier checkpoint's parameters.
pub fn evaluate_on(params: &ModelParams, samples: &[Sample], idx: &[usize], threshold: f64) -> Result<MetricsReport> {
    let mut scores = Vec::with_capacity(idx.len());
    let mut truths = Vec::with_capacity(idx.len());
    for &i in idx {
        let h = encoder_forward(params, &samples[i].x)?;
        scores.push(classifier_forward(params, &h)?);
        truths.push(samples[i].y.clone());
    }
    pr_f1_report(&PredictionSet::new(scores, truths)?, threshold)
}

/// Evaluates a classifier checkpoint on a split of the configured dataset,
/// or on every sample of `dataset` when one is given.
pub fn evaluate(cfg: &ExperimentConfig, ck: &Checkpoint, dataset: Option<&Dataset>, split: Split) -> Result<MetricsReport> {
    cfg.validate()?;
    check_checkpoint(cfg, ck)?;
    if !ck.params.has_group(Group::Classifier) || !ck.params.has_group(Group::Encoder) {
        return config_err("checkpoint lacks an encoder or classifier");
    }
    if let Some(ds) = dataset {
        if ds.input_dim != cfg.model.input_dim || ds.num_classes != cfg.model.num_classes {
            return config_err("dataset shape does not match the model");
        }
        let all: Vec<usize> = (0..ds.samples.len()).collect();
        return evaluate_on(&ck.params, &ds.samples, &all, cfg.threshold);
    }
    let ds = data::generate_synthetic(&cfg.dataset)?;
    let (train, test) = cfg.split(&ds)?;
    let idx = match split {
        Split::Train => train,
        Split::Test => test,
        Split::All => (0..ds.samples.len()).collect(),
    };
    evaluate_on(&ck.params, &ds.samples, &idx, cfg.threshold)
}

/// Both stages back to back.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<(ContrastiveRun, ClassifierRun)> {
    let stage1 = train_contrastive(cfg)?;
    let stage2 = train_classifier(cfg, &stage1.checkpoint)?;
    Ok((stage1, stage2))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: String,
    pub config_hash: String,
    pub outcome: std::result::Result<(f64, Metrics), String>,
}

/// Runs the full pipeline once per value. A failing value is recorded and
/// the sweep moves on.
pub fn ablate(base: &ExperimentConfig, param: SweepParam, values: &[String]) -> Result<Vec<SweepRow>> {
    base.validate()?;
    if values.len() < 2 {
        return config_err("a sweep needs at least two values");
    }
    let configs = values.iter().map(|v| param.apply(base, v)).collect::<Result<Vec<_>>>()?;
    Ok(values
        .iter()
        .zip(configs)
        .map(|(value, cfg)| {
            let outcome = run_pipeline(&cfg)
                .map(|(s1, s2)| (s1.mean_positive_set_size(), s2.report.metrics))
                .map_err(|e| e.to_string());
            SweepRow { value: value.clone(), config_hash: cfg.hash(), outcome }
        })
        .collect())
}

fn provenance(config_hash: &str, seed: u64) -> String {
    format!("# config_hash={config_hash} seed={seed}\n")
}

pub fn loss_csv(curve: &[EpochRecord], config_hash: &str, seed: u64) -> String {
    let mut s = provenance(config_hash, seed);
    s.push_str("epoch,total,nll,pcl,mean_positive_set_size,lr\n");
    for r in curve {
        writeln!(s, "{},{},{},{},{},{}", r.epoch, r.total, r.nll, r.pcl, r.mean_positive_set_size, r.lr).unwrap();
    }
    s
}

pub fn sweep_csv(param: SweepParam, rows: &[SweepRow], base_hash: &str, seed: u64) -> String {
    let mut s = provenance(base_hash, seed);
    s.push_str("param,value,status,mean_positive_set_size,");
    s.push_str(&Metrics::KEYS.join(","));
    s.push_str(",config_hash\n");
    for row in rows {
        match &row.outcome {
            Ok((size, m)) => {
                let vals: Vec<String> = m.values().iter().map(f64::to_string).collect();
                writeln!(s, "{},{},ok,{},{},{}", param.name(), row.value, size, vals.join(","), row.config_hash).unwrap();
            }
            Err(_) => {
                writeln!(s, "{},{},failed,,,,,,,,,{}", param.name(), row.value, row.config_hash).unwrap();
            }
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Small enough to train in well under a second.
    pub(crate) fn tiny() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.dataset.num_samples = 120;
        cfg.dataset.num_classes = 4;
        cfg.dataset.input_dim = 6;
        cfg.model = ModelConfig {
            input_dim: 6,
            encoder_hidden: vec![8],
            embed_dim: 6,
            mixture_dim: 2,
            num_classes: 4,
            mdn_hidden: vec![8, 6],
            ..Default::default()
        };
        cfg.contrastive = StageConfig { epochs: 3, batch_size: 16, peak_lr: 3e-3 };
        cfg.classifier = StageConfig { epochs: 3, batch_size: 16, peak_lr: 1e-2 };
        cfg
    }

    #[test]
    fn default_config_round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml().unwrap();
        let back = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert_eq!(ExperimentConfig::from_toml("").unwrap(), cfg);
    }

    #[test]
    fn invalid_configs_rejected() {
        for text in ["seed = -1", "bogus = 1", "[loss]\nlamda = 0.0", "[augment]\njiter = 0.0", "[loss]\ntau = 0.0", "[model]\nnum_classes = 3", "[contrastive]\nepochs = 0\nbatch_size = 4\npeak_lr = 0.1", "[classifier]\nepochs = 2"] {
            assert!(matches!(ExperimentConfig::from_toml(text), Err(Error::Config(_))), "{text}");
        }
        let mc = "[loss.sim]\nkind = \"bhattacharyya_mc\"\nsamples = 10\nseed = 1";
        assert!(ExperimentConfig::from_toml(mc).is_err());
    }

    #[test]
    fn seed_changes_hash() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig { seed: 1, ..a.clone() };
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn pipeline_is_deterministic_and_freezes_encoder() {
        let cfg = tiny();
        let (s1, s2) = run_pipeline(&cfg).unwrap();
        let (t1, t2) = run_pipeline(&cfg).unwrap();
        assert_eq!(s1.checkpoint.encode().unwrap(), t1.checkpoint.encode().unwrap());
        assert_eq!(s2.checkpoint.encode().unwrap(), t2.checkpoint.encode().unwrap());
        assert_eq!(s2.report, t2.report);
        assert_eq!(
            group_digest(&s1.checkpoint.params, Group::Encoder),
            group_digest(&s2.checkpoint.params, Group::Encoder)
        );
        assert!(!s2.checkpoint.params.has_group(Group::Mdn));
        // stage one leaves the classifier at its initial values
        let init = ModelParams::init(&cfg.model, derive_seed(cfg.seed, 1)).unwrap();
        assert_eq!(s1.checkpoint.params.tensor("classifier.weight").unwrap(), init.tensor("classifier.weight").unwrap());
    }

    #[test]
    fn mismatched_checkpoint_rejected() {
        let cfg = tiny();
        let s1 = train_contrastive(&cfg).unwrap();
        let other = ExperimentConfig { seed: 5, ..cfg };
        assert!(matches!(train_classifier(&other, &s1.checkpoint), Err(Error::Config(_))));
    }

    #[test]
    fn alpha_sweep_positive_sets_shrink() {
        let cfg = tiny();
        let values: Vec<String> = ["0.1", "0.5", "0.9"].iter().map(|s| s.to_string()).collect();
        let rows = ablate(&cfg, SweepParam::Alpha, &values).unwrap();
        let sizes: Vec<f64> = rows.iter().map(|r| r.outcome.as_ref().unwrap().0).collect();
        assert!(sizes.windows(2).all(|w| w[1] <= w[0]), "{sizes:?}");
        let csv = sweep_csv(SweepParam::Alpha, &rows, &cfg.hash(), cfg.seed);
        assert_eq!(csv.lines().count(), 5);
    }

    #[test]
    fn bad_sweep_values_are_config_errors() {
        let cfg = tiny();
        assert!(ablate(&cfg, SweepParam::Tau, &["0.2".into()]).is_err());
        assert!(ablate(&cfg, SweepParam::Tau, &["0.2".into(), "x".into()]).is_err());
        assert!(ablate(&cfg, SweepParam::Measure, &["jaccard".into(), "dice".into()]).is_err());
    }
}
