//! Experiment configuration: one TOML file, environment overrides, then flags.

use std::path::{Path, PathBuf};

use abrnet::baselines::{Method, MethodSpec};
use abrnet::datagen::{ImageSpec, RfSpec};
use abrnet::eval::{EvalHead, DEFAULT_CELL_SIZE, DEFAULT_SWEEP};
use abrnet::models::{InputKind, ModelConfig};
use abrnet::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const SEED_ENV: &str = "ABRNET_SEED";
pub const OUTPUT_DIR_ENV: &str = "ABRNET_OUTPUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Simulated RF fingerprint localization with moved furniture.
    Rf,
    /// Disc images with flat vs textured backgrounds.
    Image,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub task: Task,
    /// Seed of the generated environment and trajectories (fixed across training seeds).
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub rf: RfSpec,
    #[serde(default)]
    pub image: ImageSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub feature_dim: usize,
    pub condition_dim: usize,
    pub discriminator_hidden: usize,
    pub conv_widths: [usize; 3],
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            feature_dim: 128,
            condition_dim: 64,
            discriminator_hidden: 64,
            conv_widths: [8, 16, 32],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Head used for metrics; each method's own default when absent.
    pub head: Option<EvalHead>,
    pub cell_size: f64,
    pub sweep: Vec<f64>,
    pub sweep_method: Method,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            head: None,
            cell_size: DEFAULT_CELL_SIZE,
            sweep: DEFAULT_SWEEP.to_vec(),
            sweep_method: Method::Abrnet,
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_methods() -> Vec<MethodSpec> {
    vec![MethodSpec::new(Method::Abrnet)]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Training seeds; `compare` runs every method once per seed.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_methods")]
    pub methods: Vec<MethodSpec>,
    #[serde(default)]
    pub eval: EvalSection,
}

/// Command-line values that take precedence over the file and the environment.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Schema(e.to_string()))?;
        Ok(config)
    }

    /// Reads, applies environment then flag overrides, and validates.
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(path.to_path_buf(), e))?;
        let mut config = Self::from_toml(&text).map_err(|e| match e {
            CliError::Schema(msg) => CliError::Schema(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        config.apply_env(|k| std::env::var(k).ok())?;
        config.apply(overrides);
        config.validate()?;
        Ok(config)
    }

    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) -> Result<(), CliError> {
        if let Some(v) = var(SEED_ENV) {
            let seed = v
                .trim()
                .parse()
                .map_err(|_| CliError::Schema(format!("{SEED_ENV}: {v:?} is not an unsigned integer")))?;
            self.set_seed(seed);
        }
        if let Some(v) = var(OUTPUT_DIR_ENV) {
            self.output_dir = PathBuf::from(v);
        }
        Ok(())
    }

    pub fn apply(&mut self, overrides: &Overrides) {
        if let Some(seed) = overrides.seed {
            self.set_seed(seed);
        }
        if let Some(dir) = &overrides.output_dir {
            self.output_dir = dir.clone();
        }
    }

    /// A single seed replaces the seed list.
    fn set_seed(&mut self, seed: u64) {
        self.seeds = vec![seed];
        self.train.seed = seed;
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.seeds.is_empty() {
            return Err(field("seeds", "need at least one seed"));
        }
        if self.methods.is_empty() {
            return Err(field("methods", "need at least one method"));
        }
        for m in &self.methods {
            for (name, w) in [("methods.w_s", m.w_s), ("methods.w_adv", m.w_adv)] {
                if w.is_some_and(|w| !(w >= 0.0 && w.is_finite())) {
                    return Err(field(name, "must be a non-negative finite weight"));
                }
            }
        }
        if !(self.eval.cell_size > 0.0) {
            return Err(field("eval.cell_size", "must be positive"));
        }
        for &l in &self.eval.sweep {
            abrnet::augment::check_lambda(l).map_err(|_| field("eval.sweep", format!("{l} is outside (0.5, 1]")))?;
        }
        self.train.validate()?;
        match self.data.task {
            Task::Rf => self.data.rf.validate()?,
            Task::Image => self.data.image.validate()?,
        }
        self.model_config().validate()?;
        Ok(())
    }

    pub fn input_kind(&self) -> InputKind {
        match self.data.task {
            Task::Rf => self.data.rf.input_kind(),
            Task::Image => self.data.image.input_kind(),
        }
    }

    pub fn label_extents(&self) -> Vec<f64> {
        match self.data.task {
            Task::Rf => self.data.rf.extents.to_vec(),
            Task::Image => vec![1.0; 3],
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            input: self.input_kind(),
            feature_dim: self.model.feature_dim,
            condition_dim: self.model.condition_dim,
            label_extents: self.label_extents(),
            discriminator_hidden: self.model.discriminator_hidden,
            conv_widths: self.model.conv_widths,
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            ..self.train.clone()
        }
    }

    pub fn eval_head(&self, method: Method) -> EvalHead {
        self.eval.head.unwrap_or_else(|| method.eval_head())
    }
}

fn field(name: &str, reason: impl Into<String>) -> CliError {
    CliError::Core(abrnet::Error::Config {
        field: name.into(),
        reason: reason.into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[data]
task = "rf"
"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        c.validate().unwrap();
        assert_eq!(c.seeds, vec![0]);
        assert_eq!(c.methods, vec![MethodSpec::new(Method::Abrnet)]);
        assert_eq!(c.train.lambda, 0.7);
        assert!(c.eval.sweep.contains(&0.7));
        assert_eq!(c.model_config().label_dim(), 2);
    }

    #[test]
    fn unknown_keys_name_the_location() {
        let err = ExperimentConfig::from_toml("[data]\ntask = \"rf\"\n[train]\nlamda = 0.7\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("lamda"), "{msg}");
        assert!(msg.contains("line 4"), "{msg}");
    }

    #[test]
    fn invalid_values_name_the_field() {
        let mut c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        c.train.lambda = 0.4;
        assert!(c.validate().unwrap_err().to_string().contains("train.lambda"));
        let mut c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        c.data.rf.window_length = 0;
        assert!(c.validate().unwrap_err().to_string().contains("data.window_length"));
    }

    #[test]
    fn flags_beat_environment_beat_file() {
        let mut c = ExperimentConfig::from_toml("seeds = [1, 2]\noutput_dir = \"a\"\n[data]\ntask = \"rf\"\n").unwrap();
        c.apply_env(|k| match k {
            SEED_ENV => Some("5".into()),
            OUTPUT_DIR_ENV => Some("b".into()),
            _ => None,
        })
        .unwrap();
        assert_eq!((c.seeds.clone(), c.output_dir.clone()), (vec![5], PathBuf::from("b")));
        c.apply(&Overrides {
            seed: Some(9),
            output_dir: None,
        });
        assert_eq!((c.seeds.clone(), c.output_dir.clone()), (vec![9], PathBuf::from("b")));
        assert!(c.apply_env(|k| (k == SEED_ENV).then(|| "x".into())).is_err());
    }

    #[test]
    fn method_specs_parse() {
        let c = ExperimentConfig::from_toml(
            "[data]\ntask = \"image\"\n[[methods]]\nname = \"dann_lite\"\nw_adv = 0.5\n[[methods]]\nname = \"source_only\"\n",
        )
        .unwrap();
        assert_eq!(c.methods[0].name, Method::DannLite);
        assert_eq!(c.methods[0].w_adv, Some(0.5));
        assert!(ExperimentConfig::from_toml("[data]\ntask = \"rf\"\n[[methods]]\nname = \"tca\"\n").is_err());
    }
}
