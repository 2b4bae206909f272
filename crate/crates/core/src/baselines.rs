//! Comparison methods and ablations, all expressed as schedules of the shared trainer.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datagen::DomainDataset;
use crate::error::{Error, Result};
use crate::eval::EvalHead;
use crate::models::{ModelBundle, ModelConfig};
use crate::trainer::{
    train_with, Alignment, Discrepancy, NoObserver, Schedule, TrainConfig, TrainHistory, TrainObserver,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    SourceOnly,
    DannLite,
    McdLite,
    Abrnet,
    AbrnetWoCbrd,
    AbrnetWoDadg,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::SourceOnly,
        Method::DannLite,
        Method::McdLite,
        Method::Abrnet,
        Method::AbrnetWoCbrd,
        Method::AbrnetWoDadg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::SourceOnly => "source_only",
            Method::DannLite => "dann_lite",
            Method::McdLite => "mcd_lite",
            Method::Abrnet => "abrnet",
            Method::AbrnetWoCbrd => "abrnet_wo_cbrd",
            Method::AbrnetWoDadg => "abrnet_wo_dadg",
        }
    }

    pub fn schedule(self) -> Schedule {
        match self {
            Method::SourceOnly => Schedule::SOURCE_ONLY,
            Method::DannLite => Schedule {
                dual_heads: false,
                discrepancy_step: None,
                feature_discrepancy: None,
                adversarial: Some(Alignment::RawDomains),
            },
            Method::McdLite => Schedule {
                dual_heads: true,
                discrepancy_step: Some(Discrepancy::L1),
                feature_discrepancy: Some(Discrepancy::L1),
                adversarial: None,
            },
            Method::Abrnet => Schedule::FULL,
            Method::AbrnetWoCbrd => Schedule {
                discrepancy_step: None,
                feature_discrepancy: None,
                ..Schedule::FULL
            },
            Method::AbrnetWoDadg => Schedule {
                adversarial: None,
                ..Schedule::FULL
            },
        }
    }

    /// Head used for reported metrics: the single head of DANN-lite, otherwise the mean.
    pub fn eval_head(self) -> EvalHead {
        if self.schedule().dual_heads {
            EvalHead::Mean
        } else {
            EvalHead::Hat
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
                Error::config("method.name", format!("unknown method {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

/// A method plus optional overrides of the training weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub name: Method,
    /// Overrides `TrainConfig::w_s` (similarity or L1 weight).
    #[serde(default)]
    pub w_s: Option<f64>,
    /// Overrides `TrainConfig::w_adv`.
    #[serde(default)]
    pub w_adv: Option<f64>,
}

impl MethodSpec {
    pub fn new(name: Method) -> Self {
        Self {
            name,
            w_s: None,
            w_adv: None,
        }
    }

    pub fn apply(&self, config: &TrainConfig) -> TrainConfig {
        TrainConfig {
            w_s: self.w_s.unwrap_or(config.w_s),
            w_adv: self.w_adv.unwrap_or(config.w_adv),
            ..config.clone()
        }
    }
}

impl From<Method> for MethodSpec {
    fn from(name: Method) -> Self {
        Self::new(name)
    }
}

pub type TrainedModel = (ModelBundle<f32>, TrainHistory);

/// Trains `spec` with an observer attached.
pub fn train_method_with<O: TrainObserver<f32>>(
    spec: &MethodSpec,
    config: &TrainConfig,
    model: &ModelConfig,
    source: &DomainDataset,
    target: &DomainDataset,
    observer: &mut O,
) -> Result<TrainedModel> {
    let config = spec.apply(config);
    train_with(&config, model, spec.name.schedule(), source, target, observer)
}

pub fn train_method(
    spec: &MethodSpec,
    config: &TrainConfig,
    model: &ModelConfig,
    source: &DomainDataset,
    target: &DomainDataset,
) -> Result<TrainedModel> {
    train_method_with(spec, config, model, source, target, &mut NoObserver)
}

/// Step 1 only; the reference for degradation under shift.
pub fn train_source_only(
    config: &TrainConfig,
    model: &ModelConfig,
    source: &DomainDataset,
    target: &DomainDataset,
) -> Result<TrainedModel> {
    train_method(&Method::SourceOnly.into(), config, model, source, target)
}

/// Single regressor plus a feature-level discriminator on the raw domains.
pub fn train_dann_lite(
    config: &TrainConfig,
    model: &ModelConfig,
    source: &DomainDataset,
    target: &DomainDataset,
) -> Result<TrainedModel> {
    train_method(&Method::DannLite.into(), config, model, source, target)
}

/// Three-step loop with the L1 prediction gap in place of the soft-similarity and no discriminator.
pub fn train_mcd_lite(
    config: &TrainConfig,
    model: &ModelConfig,
    source: &DomainDataset,
    target: &DomainDataset,
) -> Result<TrainedModel> {
    train_method(&Method::McdLite.into(), config, model, source, target)
}

pub fn train_abrnet(
    config: &TrainConfig,
    model: &ModelConfig,
    source: &DomainDataset,
    target: &DomainDataset,
) -> Result<TrainedModel> {
    train_method(&Method::Abrnet.into(), config, model, source, target)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// Drops step 2 and the similarity term of step 3; keeps mixing and the discriminator.
    WoCbrd,
    /// Drops mixing and the discriminator; keeps steps 1, 2 and the similarity term of step 3.
    WoDadg,
}

pub fn train_ablation(
    which: Ablation,
    config: &TrainConfig,
    model: &ModelConfig,
    source: &DomainDataset,
    target: &DomainDataset,
) -> Result<TrainedModel> {
    let method = match which {
        Ablation::WoCbrd => Method::AbrnetWoCbrd,
        Ablation::WoDadg => Method::AbrnetWoDadg,
    };
    train_method(&method.into(), config, model, source, target)
}
