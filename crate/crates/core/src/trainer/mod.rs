//! Alternating three-step optimization with per-group freezing.

mod checkpoint;
mod history;
mod steps;

use ndarray::Axis;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, load_checkpoint_matching, save_checkpoint, CHECKPOINT_VERSION};
pub use history::{ChecksumRecord, IterationRecord, TrainHistory};
pub use steps::{step1, step2, step3, Batch, StepReport, StepSettings};

use crate::augment;
use crate::datagen::{derive_seed, DomainDataset, ReadMode};
use crate::error::{Error, Result};
use crate::eval::{self, EvalHead};
use crate::models::{GroupId, Head, ModelBundle, ModelConfig};
use crate::nn::{GroupOptimizer, OptimizerKind, Real};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Mixing ratio for the intermediate domains.
    pub lambda: f64,
    /// Learning rate of the feature generator and the regressor heads.
    pub lr_main: f64,
    pub lr_discriminator: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub seed: u64,
    /// Interval (in iterations) of history evaluations and checksum records.
    pub eval_every: usize,
    /// Size of the fixed target subset used for history evaluations.
    pub eval_samples: usize,
    /// Weight of the soft-similarity (or L1) term.
    pub w_s: f64,
    /// Weight of the adversarial term in the generator update.
    pub w_adv: f64,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: augment::DEFAULT_LAMBDA,
            lr_main: 1e-3,
            lr_discriminator: 1e-3,
            batch_size: 128,
            iterations: 3000,
            seed: 0,
            eval_every: 100,
            eval_samples: 1000,
            w_s: 1.0,
            w_adv: 1.0,
            optimizer: OptimizerKind::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        augment::check_lambda(self.lambda).map_err(|_| Error::config("train.lambda", "must lie in (0.5, 1]"))?;
        for (field, v) in [("train.lr_main", self.lr_main), ("train.lr_discriminator", self.lr_discriminator)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(field, "must be a positive finite rate"));
            }
        }
        for (field, v) in [
            ("train.batch_size", self.batch_size),
            ("train.eval_every", self.eval_every),
            ("train.eval_samples", self.eval_samples),
        ] {
            if v == 0 {
                return Err(Error::config(field, "must be at least 1"));
            }
        }
        for (field, v) in [("train.w_s", self.w_s), ("train.w_adv", self.w_adv)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(field, "must be a non-negative finite weight"));
            }
        }
        match self.optimizer {
            OptimizerKind::Adam { beta1, beta2, eps } => {
                if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0) {
                    return Err(Error::config("train.optimizer", "adam needs betas in [0, 1) and eps > 0"));
                }
            }
            OptimizerKind::SgdMomentum { momentum } => {
                if !(0.0..1.0).contains(&momentum) {
                    return Err(Error::config("train.optimizer", "momentum must lie in [0, 1)"));
                }
            }
        }
        Ok(())
    }

    pub fn step_settings(&self, schedule: Schedule) -> StepSettings {
        StepSettings {
            lambda: self.lambda,
            w_s: self.w_s,
            w_adv: self.w_adv,
            schedule,
        }
    }
}

/// How the two heads' disagreement is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Discrepancy {
    /// Soft-similarity of the conditional vectors.
    SoftSimilarity,
    /// Mean absolute difference of the coordinate predictions.
    L1,
}

/// Which inputs the discriminator compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alignment {
    /// Source-similar vs target-similar mixtures, each routed through its own head.
    MixedDomains,
    /// Raw source vs raw target features, no coordinates.
    RawDomains,
}

/// Which parts of the three-step loop run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    /// Train both heads (otherwise only the hat head exists for training purposes).
    pub dual_heads: bool,
    /// Step 2 and the discrepancy it uses.
    pub discrepancy_step: Option<Discrepancy>,
    /// Discrepancy term in the generator update of step 3.
    pub feature_discrepancy: Option<Discrepancy>,
    pub adversarial: Option<Alignment>,
}

impl Schedule {
    pub const FULL: Schedule = Schedule {
        dual_heads: true,
        discrepancy_step: Some(Discrepancy::SoftSimilarity),
        feature_discrepancy: Some(Discrepancy::SoftSimilarity),
        adversarial: Some(Alignment::MixedDomains),
    };

    pub const SOURCE_ONLY: Schedule = Schedule {
        dual_heads: true,
        discrepancy_step: None,
        feature_discrepancy: None,
        adversarial: None,
    };

    pub fn heads(&self) -> &'static [Head] {
        if self.dual_heads {
            &[Head::Hat, Head::Tilde]
        } else {
            &[Head::Hat]
        }
    }

    pub fn runs_step3(&self) -> bool {
        self.adversarial.is_some() || self.feature_discrepancy.is_some()
    }

    fn validate(&self) -> Result<()> {
        let needs_both = self.discrepancy_step.is_some()
            || self.feature_discrepancy.is_some()
            || self.adversarial == Some(Alignment::MixedDomains);
        if needs_both && !self.dual_heads {
            return Err(Error::contract("discrepancy terms and mixed alignment need both heads"));
        }
        Ok(())
    }
}

/// One optimizer per parameter group, so frozen groups keep their moments untouched.
#[derive(Debug, Clone)]
pub struct OptimizerState<R: Real> {
    groups: Vec<GroupOptimizer<R>>,
}

impl<R: Real> OptimizerState<R> {
    pub fn new(config: &TrainConfig) -> Self {
        let groups = GroupId::ALL
            .iter()
            .map(|&id| {
                let lr = if id == GroupId::D {
                    config.lr_discriminator
                } else {
                    config.lr_main
                };
                GroupOptimizer::new(config.optimizer, lr)
            })
            .collect();
        Self { groups }
    }

    pub fn group(&self, id: GroupId) -> &GroupOptimizer<R> {
        &self.groups[id.index()]
    }

    /// Applies `grads` to the listed groups only.
    pub fn update(&mut self, bundle: &mut ModelBundle<R>, grads: &ModelBundle<R>, groups: &[GroupId]) {
        for &id in groups {
            self.groups[id.index()].step(bundle.group_mut(id), grads.group(id));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    Supervised,
    Discrepancy,
    Adversarial,
}

impl StepKind {
    pub fn name(self) -> &'static str {
        match self {
            StepKind::Supervised => "step1",
            StepKind::Discrepancy => "step2",
            StepKind::Adversarial => "step3",
        }
    }
}

/// Hooks around every step; the default methods do nothing.
pub trait TrainObserver<R: Real> {
    fn before_step(&mut self, _step: StepKind, _iteration: usize, _bundle: &ModelBundle<R>, _opt: &OptimizerState<R>) {}

    fn after_step(
        &mut self,
        _step: StepKind,
        _iteration: usize,
        _bundle: &ModelBundle<R>,
        _opt: &OptimizerState<R>,
        _report: &StepReport,
    ) {
    }

    /// Called at every `eval_every` boundary after the history row is written.
    fn on_checkpoint(&mut self, _iteration: usize, _bundle: &ModelBundle<R>, _history: &TrainHistory) -> Result<()> {
        Ok(())
    }
}

/// Observer that does nothing.
pub struct NoObserver;

impl<R: Real> TrainObserver<R> for NoObserver {}

/// Epoch-shuffled index sampler.
struct Sampler {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
}

impl Sampler {
    fn new(len: usize, seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: (0..len).collect(),
            cursor: len,
        }
    }

    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let size = size.min(self.order.len());
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.cursor == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            let take = (size - out.len()).min(self.order.len() - self.cursor);
            out.extend_from_slice(&self.order[self.cursor..self.cursor + take]);
            self.cursor += take;
        }
        out
    }
}

fn finite(report: &StepReport, step: StepKind, iteration: usize) -> Result<()> {
    let losses = [
        ("L_r", report.l_r),
        ("L_s", report.l_s),
        ("L_l1", report.l_l1),
        ("L_adv", report.l_adv),
    ];
    for (name, v) in losses {
        if let Some(v) = v {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    step: step.name(),
                    loss: name,
                    iteration,
                });
            }
        }
    }
    Ok(())
}

/// Fixed evaluation subset of the target domain, if it carries evaluation labels.
fn eval_subset(target: &DomainDataset, config: &TrainConfig) -> Result<Option<DomainDataset>> {
    let reader = target.reader(ReadMode::Eval);
    if !reader.has_labels() {
        return Ok(None);
    }
    let mut idx: Vec<usize> = (0..target.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "eval-subset")));
    idx.truncate(config.eval_samples);
    idx.sort_unstable();
    Ok(Some(target.select(&idx)))
}

fn check_datasets(model: &ModelConfig, source: &DomainDataset, target: &DomainDataset) -> Result<()> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::contract("training needs nonempty source and target datasets"));
    }
    for ds in [source, target] {
        if ds.input != model.input {
            return Err(Error::contract(format!(
                "dataset {} has input {:?}, model expects {:?}",
                ds.name, ds.input, model.input
            )));
        }
    }
    if source.label_dim() != model.label_dim() {
        return Err(Error::contract(format!(
            "source labels have {} coordinates, model expects {}",
            source.label_dim(),
            model.label_dim()
        )));
    }
    Ok(())
}

/// Trains a fresh bundle with the given schedule.
///
/// The target dataset is only read for inputs during training; its labels
/// (when present in the file) feed the history evaluations.
pub fn train_with<O: TrainObserver<f32>>(
    config: &TrainConfig,
    model: &ModelConfig,
    schedule: Schedule,
    source: &DomainDataset,
    target: &DomainDataset,
    observer: &mut O,
) -> Result<(ModelBundle<f32>, TrainHistory)> {
    config.validate()?;
    model.validate()?;
    schedule.validate()?;
    check_datasets(model, source, target)?;

    let mut bundle = ModelBundle::<f32>::build(model, derive_seed(config.seed, "init"))?;
    let mut opt = OptimizerState::new(config);
    let settings = config.step_settings(schedule);
    let mut history = TrainHistory::default();
    history.record_checksums(0, &bundle);

    let src = source.reader(ReadMode::Train);
    let src_x = src.inputs();
    let src_y = src.labels()?;
    let tgt = target.reader(ReadMode::Train);
    let tgt_x = tgt.inputs();
    let eval_set = eval_subset(target, config)?;
    let eval_head = if schedule.dual_heads { EvalHead::Mean } else { EvalHead::Hat };

    let mut source_sampler = Sampler::new(source.len(), derive_seed(config.seed, "source-sampler"));
    let mut target_sampler = Sampler::new(target.len(), derive_seed(config.seed, "target-sampler"));
    let mut mixing_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "mixing"));

    for iteration in 1..=config.iterations {
        let si = source_sampler.next_batch(config.batch_size);
        let source_batch = Batch::labeled(src_x.select(Axis(0), &si), src_y.select(Axis(0), &si));
        let needs_target = schedule.discrepancy_step.is_some() || schedule.runs_step3();
        let target_batch = if needs_target {
            let ti = target_sampler.next_batch(config.batch_size);
            Some(Batch::unlabeled(tgt_x.select(Axis(0), &ti)))
        } else {
            None
        };

        let mut record = IterationRecord::new(iteration);

        let kind = StepKind::Supervised;
        observer.before_step(kind, iteration, &bundle, &opt);
        let report = step1(&mut bundle, &mut opt, &settings, &source_batch)?;
        finite(&report, kind, iteration)?;
        observer.after_step(kind, iteration, &bundle, &opt, &report);
        record.absorb(&report);

        if let Some(target_batch) = &target_batch {
            if schedule.discrepancy_step.is_some() {
                let kind = StepKind::Discrepancy;
                observer.before_step(kind, iteration, &bundle, &opt);
                let report = step2(&mut bundle, &mut opt, &settings, &source_batch, target_batch)?;
                finite(&report, kind, iteration)?;
                observer.after_step(kind, iteration, &bundle, &opt, &report);
                record.absorb(&report);
            }
            if schedule.runs_step3() {
                let kind = StepKind::Adversarial;
                observer.before_step(kind, iteration, &bundle, &opt);
                let report = step3(
                    &mut bundle,
                    &mut opt,
                    &settings,
                    &source_batch,
                    target_batch,
                    &mut mixing_rng,
                )?;
                finite(&report, kind, iteration)?;
                observer.after_step(kind, iteration, &bundle, &opt, &report);
                // step 3 reports the similarity seen by the generator; keep step 2's value
                let report = StepReport {
                    l_s: None,
                    l_l1: None,
                    ..report
                };
                record.absorb(&report);
            }
        }

        if iteration % config.eval_every == 0 || iteration == config.iterations {
            if let Some(eval_set) = &eval_set {
                let m = eval::evaluate(&bundle, &eval_set.reader(ReadMode::Eval), eval_head)?;
                record.target_mse = Some(m.mse);
                record.target_mae = Some(m.mae);
            }
            history.push(record);
            history.record_checksums(iteration, &bundle);
            observer.on_checkpoint(iteration, &bundle, &history)?;
        } else {
            history.push(record);
        }
    }
    Ok((bundle, history))
}

/// Full three-step training.
pub fn train(
    config: &TrainConfig,
    model: &ModelConfig,
    source: &DomainDataset,
    target: &DomainDataset,
) -> Result<(ModelBundle<f32>, TrainHistory)> {
    train_with(config, model, Schedule::FULL, source, target, &mut NoObserver)
}
