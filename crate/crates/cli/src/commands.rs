use std::path::{Path, PathBuf};

use abrnet::baselines::{train_method, MethodSpec};
use abrnet::datagen::{generate_image_task, make_domain_pair, DomainDataset, Manifest, DATASET_VERSION};
use abrnet::eval::{
    emit_report, evaluate_dataset, grid_error_map, labels_f64, lambda_sweep, mean_std, EvalHead, EvalReport,
    GridErrorMap, Metrics, RunSummary,
};
use abrnet::models::ModelBundle;
use abrnet::trainer::{load_checkpoint, save_checkpoint, TrainHistory};

use crate::config::{ExperimentConfig, Task};
use crate::error::CliError;

/// Source train/test and target splits of one experiment.
pub struct ExperimentData {
    pub source_train: DomainDataset,
    pub source_test: DomainDataset,
    pub target: DomainDataset,
    pub manifest_path: PathBuf,
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(dir.to_path_buf(), e))
}

/// Generates the data of `config` and writes the dataset files plus a manifest under `<output>/data`.
pub fn cmd_gen_data(config: &ExperimentConfig) -> Result<ExperimentData, CliError> {
    let dir = config.output_dir.join("data");
    create_dir(&dir)?;
    let seed = config.data.seed;
    let (source_train, source_test, target, spec, standardizer) = match config.data.task {
        Task::Rf => {
            let pair = make_domain_pair(&config.data.rf, seed)?;
            let spec = serde_json::to_value(&config.data.rf).expect("spec serializes");
            (pair.source_train, pair.source_test, pair.target, spec, Some(pair.standardizer))
        }
        Task::Image => {
            let (source, target) = generate_image_task(&config.data.image, seed)?;
            // hold out the last tenth of the source images
            let cut = source.len() - (source.len() / 10).max(1);
            let idx: Vec<usize> = (0..source.len()).collect();
            let mut train = source.select(&idx[..cut]);
            let mut test = source.select(&idx[cut..]);
            train.name = "source_train".into();
            test.name = "source_test".into();
            let spec = serde_json::to_value(&config.data.image).expect("spec serializes");
            (train, test, target, spec, None)
        }
    };
    let files = ["source_train.abrd", "source_test.abrd", "target.abrd"];
    for (ds, file) in [&source_train, &source_test, &target].into_iter().zip(files) {
        ds.save(&dir.join(file))?;
    }
    let manifest = Manifest {
        format_version: DATASET_VERSION,
        task: serde_json::to_value(config.data.task)
            .ok()
            .and_then(|v| v.as_str().map(String::from))
            .unwrap_or_default(),
        seed,
        source_train: files[0].into(),
        source_test: files[1].into(),
        target: files[2].into(),
        spec,
        standardizer,
    };
    let manifest_path = dir.join("manifest.json");
    manifest.save(&manifest_path)?;
    log::info!(
        "wrote {} / {} / {} samples to {}",
        source_train.len(),
        source_test.len(),
        target.len(),
        dir.display()
    );
    Ok(ExperimentData {
        source_train,
        source_test,
        target,
        manifest_path,
    })
}

/// Loads the three splits named by a manifest.
pub fn load_data(manifest_path: &Path) -> Result<ExperimentData, CliError> {
    let m = Manifest::load(manifest_path)?;
    Ok(ExperimentData {
        source_train: DomainDataset::load(&m.resolve(manifest_path, &m.source_train))?,
        source_test: DomainDataset::load(&m.resolve(manifest_path, &m.source_test))?,
        target: DomainDataset::load(&m.resolve(manifest_path, &m.target))?,
        manifest_path: manifest_path.to_path_buf(),
    })
}

/// Outcome of one method/seed cell.
pub struct RunOutcome {
    pub summary: RunSummary,
    pub bundle: ModelBundle<f32>,
    pub grid: Option<GridErrorMap>,
}

fn run_label(spec: &MethodSpec, seed: u64) -> String {
    format!("{}_seed{seed}", spec.name)
}

fn grid_for(
    config: &ExperimentConfig,
    dataset: &DomainDataset,
    predictions: &ndarray::Array2<f32>,
) -> Result<Option<GridErrorMap>, CliError> {
    if config.data.task != Task::Rf {
        return Ok(None);
    }
    let labels = labels_f64(dataset)?;
    let extents = config.data.rf.extents;
    Ok(Some(grid_error_map(
        &predictions.mapv(f64::from).view(),
        &labels.view(),
        extents,
        config.eval.cell_size,
    )?))
}

/// Trains one method with one seed and evaluates it on the target and source-test splits.
pub fn run_cell(
    config: &ExperimentConfig,
    data: &ExperimentData,
    spec: &MethodSpec,
    seed: u64,
    run_dir: &Path,
) -> Result<RunOutcome, CliError> {
    create_dir(run_dir)?;
    let train = config.train_config(seed);
    let model = config.model_config();
    log::info!("training {} (seed {seed}, {} iterations)", spec.name, train.iterations);
    let (bundle, history) = train_method(spec, &train, &model, &data.source_train, &data.target)?;
    save_checkpoint(&bundle, &history, &run_dir.join("checkpoint.bin"))?;
    history.write_csv(&run_dir.join("history.csv"))?;

    let head = config.eval_head(spec.name);
    let (target, predictions) = evaluate_dataset(&bundle, &data.target, head)?;
    let (source_test, _) = evaluate_dataset(&bundle, &data.source_test, head)?;
    let grid = grid_for(config, &data.target, &predictions)?;
    log::info!(
        "{}: target mse {:.4}, source test mse {:.4}",
        spec.name,
        target.mse,
        source_test.mse
    );
    Ok(RunOutcome {
        summary: RunSummary {
            label: run_label(spec, seed),
            method: spec.name.to_string(),
            seed,
            target,
            source_test: Some(source_test),
            history,
        },
        bundle,
        grid,
    })
}

fn single_report(outcome: RunOutcome) -> EvalReport {
    let mut report = EvalReport::new();
    if let Some(g) = outcome.grid {
        report.grids.push((outcome.summary.label.clone(), g));
    }
    report.runs.push(outcome.summary);
    report
}

/// Trains the first configured method with the first seed.
pub fn cmd_train(config: &ExperimentConfig) -> Result<PathBuf, CliError> {
    let data = cmd_gen_data(config)?;
    let spec = config.methods[0];
    let seed = config.seeds[0];
    let run_dir = config.output_dir.join("train").join(run_label(&spec, seed));
    let outcome = run_cell(config, &data, &spec, seed, &run_dir)?;
    emit_report(&single_report(outcome), &run_dir)?;
    Ok(run_dir)
}

/// Evaluates a checkpoint on a labeled dataset file and writes a report with its grid map.
pub fn cmd_eval(
    checkpoint: &Path,
    dataset: &Path,
    head: EvalHead,
    cell_size: f64,
    output: &Path,
) -> Result<Metrics, CliError> {
    let (bundle, history): (ModelBundle<f32>, TrainHistory) = load_checkpoint(checkpoint)?;
    let data = DomainDataset::load(dataset)?;
    let (metrics, predictions) = evaluate_dataset(&bundle, &data, head)?;
    let mut report = EvalReport::new();
    let label = "eval".to_string();
    if data.label_dim() == 2 {
        let extents = [data.label_extents[0], data.label_extents[1]];
        let labels = labels_f64(&data)?;
        let grid = grid_error_map(&predictions.mapv(f64::from).view(), &labels.view(), extents, cell_size)?;
        report.grids.push((label.clone(), grid));
    }
    report.runs.push(RunSummary {
        label,
        method: "checkpoint".into(),
        seed: 0,
        target: metrics,
        source_test: None,
        history,
    });
    emit_report(&report, output)?;
    Ok(metrics)
}

/// Aggregated `mean ± std` per method over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub method: String,
    pub target_mse: (f64, f64),
    pub target_mae: (f64, f64),
    pub source_test_mse: (f64, f64),
}

pub fn compare_table(rows: &[CompareRow]) -> String {
    let mut out = String::from("method,target_mse_mean,target_mse_std,target_mae_mean,target_mae_std,source_test_mse_mean,source_test_mse_std\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.method,
            r.target_mse.0,
            r.target_mse.1,
            r.target_mae.0,
            r.target_mae.1,
            r.source_test_mse.0,
            r.source_test_mse.1
        ));
    }
    out
}

/// Human-readable `mean±std` table.
pub fn compare_text(rows: &[CompareRow]) -> String {
    let mut out = format!("{:<16} {:>16} {:>16} {:>16}\n", "method", "target MSE", "target MAE", "source MSE");
    for r in rows {
        let cell = |(m, s): (f64, f64)| format!("{m:.3}±{s:.3}");
        out.push_str(&format!(
            "{:<16} {:>16} {:>16} {:>16}\n",
            r.method,
            cell(r.target_mse),
            cell(r.target_mae),
            cell(r.source_test_mse)
        ));
    }
    out
}

/// Every method once per seed, each in its own directory, plus an aggregated table.
pub fn cmd_compare(config: &ExperimentConfig) -> Result<Vec<CompareRow>, CliError> {
    let data = cmd_gen_data(config)?;
    let dir = config.output_dir.join("compare");
    let mut report = EvalReport::new();
    let mut rows = Vec::new();
    for spec in &config.methods {
        let mut cells = Vec::new();
        for &seed in &config.seeds {
            let outcome = run_cell(config, &data, spec, seed, &dir.join(run_label(spec, seed)))?;
            if let Some(g) = outcome.grid {
                report.grids.push((outcome.summary.label.clone(), g));
            }
            cells.push(outcome.summary.clone());
            report.runs.push(outcome.summary);
        }
        let pick = |f: fn(&RunSummary) -> f64| mean_std(&cells.iter().map(f).collect::<Vec<_>>());
        rows.push(CompareRow {
            method: spec.name.to_string(),
            target_mse: pick(|r| r.target.mse),
            target_mae: pick(|r| r.target.mae),
            source_test_mse: pick(|r| r.source_test.map_or(f64::NAN, |m| m.mse)),
        });
    }
    emit_report(&report, &dir)?;
    let path = dir.join("comparison.csv");
    std::fs::write(&path, compare_table(&rows)).map_err(|e| CliError::Io(path.clone(), e))?;
    let path = dir.join("comparison.txt");
    std::fs::write(&path, compare_text(&rows)).map_err(|e| CliError::Io(path.clone(), e))?;
    Ok(rows)
}

/// λ sweep of `eval.sweep_method` with the first seed.
pub fn cmd_sweep(config: &ExperimentConfig) -> Result<PathBuf, CliError> {
    let data = cmd_gen_data(config)?;
    let dir = config.output_dir.join("sweep");
    let method = config.eval.sweep_method;
    let spec = config
        .methods
        .iter()
        .copied()
        .find(|m| m.name == method)
        .unwrap_or_else(|| MethodSpec::new(method));
    let train = spec.apply(&config.train_config(config.seeds[0]));
    let rows = lambda_sweep(
        &train,
        &config.model_config(),
        method.schedule(),
        &data.source_train,
        &data.target,
        &config.eval.sweep,
        config.eval_head(method),
    )?;
    let mut report = EvalReport::new();
    report.sweep = Some(rows);
    emit_report(&report, &dir)?;
    Ok(dir)
}
