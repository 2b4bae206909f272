//! Metrics, spatial error maps, λ sweeps and report files.

mod grid;
mod plot;
mod report;

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

pub use grid::{grid_error_map, GridCell, GridErrorMap, DEFAULT_CELL_SIZE};
pub use plot::{plot_grid_map, plot_lambda_sweep, plot_loss_curves};
pub use report::{emit_report, load_report, EvalReport, RunSummary, REPORT_SCHEMA_VERSION};

use crate::datagen::{DatasetReader, DomainDataset, ReadMode};
use crate::error::{Error, Result};
use crate::models::{Head, ModelBundle, ModelConfig};
use crate::nn::Real;
use crate::trainer::{self, Schedule, TrainConfig};

/// Rows per forward pass during evaluation.
const EVAL_CHUNK: usize = 512;

/// Which regressor produces the predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalHead {
    Hat,
    Tilde,
    /// Average of both heads' coordinate predictions.
    #[default]
    Mean,
}

impl FromStr for EvalHead {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hat" => Ok(EvalHead::Hat),
            "tilde" => Ok(EvalHead::Tilde),
            "mean" => Ok(EvalHead::Mean),
            other => Err(Error::config("eval.head", format!("unknown head {other:?} (hat, tilde, mean)"))),
        }
    }
}

impl fmt::Display for EvalHead {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalHead::Hat => "hat",
            EvalHead::Tilde => "tilde",
            EvalHead::Mean => "mean",
        })
    }
}

/// Squared-unit MSE and unit MAE, both averaged over samples and coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    pub mae: f64,
}

/// Coordinate predictions for every row of `inputs`.
pub fn predict<R: Real>(bundle: &ModelBundle<R>, inputs: &ArrayView2<R>, head: EvalHead) -> Result<Array2<R>> {
    let mut out = Array2::zeros((inputs.nrows(), bundle.config().label_dim()));
    let mut start = 0;
    while start < inputs.nrows() {
        let end = (start + EVAL_CHUNK).min(inputs.nrows());
        let features = bundle.extract_features(&inputs.slice(s![start..end, ..]))?;
        let pred = match head {
            EvalHead::Hat => bundle.forward_regressor(Head::Hat, &features.view())?.l,
            EvalHead::Tilde => bundle.forward_regressor(Head::Tilde, &features.view())?.l,
            EvalHead::Mean => {
                let a = bundle.forward_regressor(Head::Hat, &features.view())?.l;
                let b = bundle.forward_regressor(Head::Tilde, &features.view())?.l;
                (a + b) * R::lit(0.5)
            }
        };
        out.slice_mut(s![start..end, ..]).assign(&pred);
        start = end;
    }
    Ok(out)
}

/// Metrics of `predictions` against `labels`, accumulated in f64.
pub fn metrics<R: Real>(predictions: &ArrayView2<R>, labels: &ArrayView2<R>) -> Result<Metrics> {
    if predictions.dim() != labels.dim() {
        return Err(Error::contract(format!(
            "predictions {:?} and labels {:?} differ in shape",
            predictions.dim(),
            labels.dim()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::contract("cannot evaluate an empty dataset"));
    }
    let (mut se, mut ae) = (0.0, 0.0);
    for (p, y) in predictions.iter().zip(labels.iter()) {
        let d = p.to_f64().unwrap_or(f64::NAN) - y.to_f64().unwrap_or(f64::NAN);
        se += d * d;
        ae += d.abs();
    }
    let n = predictions.len() as f64;
    Ok(Metrics { mse: se / n, mae: ae / n })
}

/// Target-domain metrics of a trained bundle; the reader must expose labels.
pub fn evaluate(bundle: &ModelBundle<f32>, reader: &DatasetReader<'_>, head: EvalHead) -> Result<Metrics> {
    if reader.is_empty() {
        return Err(Error::contract(format!("dataset {} is empty", reader.dataset().name)));
    }
    let labels = reader.labels()?;
    let pred = predict(bundle, &reader.inputs(), head)?;
    metrics(&pred.view(), &labels)
}

/// Predictions and metrics of one dataset, for report and grid-map plumbing.
pub fn evaluate_dataset(
    bundle: &ModelBundle<f32>,
    dataset: &DomainDataset,
    head: EvalHead,
) -> Result<(Metrics, Array2<f32>)> {
    let reader = dataset.reader(ReadMode::Eval);
    let labels = reader.labels()?;
    let pred = predict(bundle, &reader.inputs(), head)?;
    Ok((metrics(&pred.view(), &labels)?, pred))
}

/// Labels of a dataset as f64, with rows in dataset order.
pub fn labels_f64(dataset: &DomainDataset) -> Result<Array2<f64>> {
    Ok(dataset.reader(ReadMode::Eval).labels()?.mapv(f64::from))
}

/// Default λ grid of the sweep.
pub const DEFAULT_SWEEP: [f64; 6] = [0.55, 0.6, 0.7, 0.8, 0.9, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub target_mse: f64,
    pub target_mae: f64,
}

/// Trains once per λ on the same pair and seed and evaluates on the target labels.
pub fn lambda_sweep(
    config: &TrainConfig,
    model: &ModelConfig,
    schedule: Schedule,
    source: &DomainDataset,
    target: &DomainDataset,
    values: &[f64],
    head: EvalHead,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::config("sweep.values", "need at least one λ"));
    }
    let mut rows = Vec::with_capacity(values.len());
    for &lambda in values {
        let cfg = TrainConfig {
            lambda,
            ..config.clone()
        };
        let (bundle, _) = trainer::train_with(&cfg, model, schedule, source, target, &mut trainer::NoObserver)?;
        let m = evaluate(&bundle, &target.reader(ReadMode::Eval), head)?;
        log::info!("lambda {lambda}: target mse {:.4}", m.mse);
        rows.push(SweepRow {
            lambda,
            target_mse: m.mse,
            target_mae: m.mae,
        });
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("lambda,target_mse,target_mae\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.lambda, r.target_mse, r.target_mae));
    }
    out
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Per-row mean squared error across coordinates.
pub(crate) fn row_squared_errors(predictions: &ArrayView2<f64>, labels: &ArrayView2<f64>) -> Vec<f64> {
    let d = predictions - labels;
    (d.mapv(|v| v * v)).mean_axis(Axis(1)).expect("nonempty rows").to_vec()
}
