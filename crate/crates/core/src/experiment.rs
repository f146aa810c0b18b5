//! Experiment orchestration: load/generate, split, train, evaluate, persist.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::config::ExperimentConfig;
use crate::data::{generate_synthetic_lt, load_csv_dataset};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::metrics::regression::pearson_correlation;
use crate::metrics::{format_json_f64, MetricReport};
use crate::nn::trainer::{evaluate, train, EvalContext, TrainOutput};
use crate::rng::RngState;
use crate::splits::{split_dataset, SplitResult};

/// Everything a finished run leaves behind.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub report: MetricReport,
    pub split: SplitResult,
    pub history_csv: String,
    pub report_path: PathBuf,
}

/// Load the configured dataset (CSV or synthetic).
pub fn load_dataset(config: &ExperimentConfig) -> Result<Dataset> {
    if let Some(spec) = config.synthetic_spec()? {
        let rng = RngState::new(config.seed).fork_named("data");
        return generate_synthetic_lt(&spec, &rng);
    }
    let path = config
        .dataset
        .path
        .as_ref()
        .expect("validation guarantees a source");
    load_csv_dataset(Path::new(path), &config.label_schema()?)
}

/// History rows as CSV; the metric column is named after the task.
pub fn history_to_csv(output: &TrainOutput, is_regression: bool) -> String {
    let metric_name = if is_regression { "valid_MAE" } else { "valid_BA" };
    let mut text = format!("epoch,train_loss,{metric_name},lr\n");
    for record in &output.history {
        text.push_str(&format!(
            "{},{},{},{}\n",
            record.epoch,
            format_json_f64(record.train_loss),
            format_json_f64(record.valid_metric),
            format_json_f64(record.lr),
        ));
    }
    text
}

/// Run the full pipeline and write `report.json`, `history.csv`,
/// `split.json`, `config-echo.json` and `checkpoint.json` under `out_dir`.
///
/// Outputs are staged in a sibling directory and moved into place on
/// success, so a failed run never leaves a partially written report
/// directory behind.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path) -> Result<RunArtifacts> {
    let staging = staging_dir(out_dir);
    if staging.exists() {
        fs::remove_dir_all(&staging)?;
    }
    fs::create_dir_all(&staging)?;
    let result = run_into(config, &staging, out_dir);
    match result {
        Ok(artifacts) => {
            if out_dir.exists() {
                fs::remove_dir_all(out_dir)?;
            }
            fs::rename(&staging, out_dir)?;
            Ok(artifacts)
        }
        Err(e) => {
            let _ = fs::remove_dir_all(&staging);
            Err(e)
        }
    }
}

fn staging_dir(out_dir: &Path) -> PathBuf {
    let name = out_dir
        .file_name()
        .map(|n| n.to_string_lossy().to_string())
        .unwrap_or_else(|| "run".into());
    out_dir.with_file_name(format!("{name}.partial"))
}

fn run_into(config: &ExperimentConfig, staging: &Path, final_dir: &Path) -> Result<RunArtifacts> {
    let task = config.task_kind()?;

    let dataset = load_dataset(config).map_err(|e| e.in_stage("load"))?;

    let plan = config.split_plan()?;
    let split = split_dataset(&dataset, &plan).map_err(|e| e.in_stage("split"))?;

    let train_options = config
        .train_options(Some(staging))
        .map_err(|e| e.in_stage("train"))?;
    let output = train(&dataset, &split, &train_options).map_err(|e| e.in_stage("train"))?;

    let ctx = EvalContext {
        split_name: plan.method.name(),
        seed: config.seed,
        regression_bins: train_options.regression.bins,
        bin_strategy: train_options.regression.strategy,
    };
    let report = evaluate(
        &output.model,
        &dataset,
        &split,
        task,
        output.open_head.as_ref(),
        &ctx,
    )
    .map_err(|e| e.in_stage("evaluate"))?;

    let history_csv = history_to_csv(&output, task.is_regression());
    persist(config, &split, &output, &report, &history_csv, staging)
        .map_err(|e| e.in_stage("persist"))?;

    Ok(RunArtifacts {
        report,
        split,
        history_csv,
        report_path: final_dir.join("report.json"),
    })
}

fn persist(
    config: &ExperimentConfig,
    split: &SplitResult,
    output: &TrainOutput,
    report: &MetricReport,
    history_csv: &str,
    dir: &Path,
) -> Result<()> {
    write_file(&dir.join("report.json"), &report.to_json_string())?;
    write_file(&dir.join("history.csv"), history_csv)?;
    write_file(&dir.join("split.json"), &split.to_json_string())?;
    write_file(
        &dir.join("config-echo.json"),
        &crate::config::serialize_config(config),
    )?;
    write_file(
        &dir.join("checkpoint.json"),
        &output.model.to_checkpoint_json(),
    )?;
    Ok(())
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    let mut file = fs::File::create(path)?;
    file.write_all(content.as_bytes())?;
    Ok(())
}

/// Tabulate shared metrics across runs into a CSV, one row per report. When
/// the reports span exactly two split protocols (or `splits` names them),
/// a final row carries the per-metric Pearson correlation between the two
/// split groups, pairing runs by their order within each group.
pub fn compare_runs(report_paths: &[PathBuf], splits: Option<(&str, &str)>) -> Result<String> {
    if report_paths.len() < 2 {
        return Err(Error::NotEnoughReports(report_paths.len()));
    }
    let mut reports = Vec::with_capacity(report_paths.len());
    for path in report_paths {
        let text = fs::read_to_string(path)?;
        reports.push((path.clone(), MetricReport::from_json_str(&text)?));
    }

    // Shared metric keys, sorted.
    let mut shared: Option<Vec<String>> = None;
    for (_, report) in &reports {
        let keys: Vec<String> = report.values().keys().cloned().collect();
        shared = Some(match shared {
            None => keys,
            Some(prev) => prev.into_iter().filter(|k| keys.contains(k)).collect(),
        });
    }
    let shared = shared.unwrap_or_default();
    if shared.is_empty() {
        return Err(Error::NoSharedMetrics);
    }

    let mut csv = String::from("run,split");
    for key in &shared {
        csv.push(',');
        csv.push_str(key);
    }
    csv.push('\n');
    for (path, report) in &reports {
        csv.push_str(&format!(
            "{},{}",
            path.display(),
            report.meta.split.clone().unwrap_or_default()
        ));
        for key in &shared {
            csv.push(',');
            csv.push_str(&format_json_f64(report.get(key).unwrap_or(f64::NAN)));
        }
        csv.push('\n');
    }

    // Group by split name for the cross-split correlation.
    let mut groups: BTreeMap<String, Vec<&MetricReport>> = BTreeMap::new();
    for (_, report) in &reports {
        groups
            .entry(report.meta.split.clone().unwrap_or_default())
            .or_default()
            .push(report);
    }
    let pair = match splits {
        Some((a, b)) => Some((a.to_string(), b.to_string())),
        None if groups.len() == 2 => {
            let names: Vec<String> = groups.keys().cloned().collect();
            Some((names[0].clone(), names[1].clone()))
        }
        None => None,
    };
    if let Some((a, b)) = pair {
        let (Some(group_a), Some(group_b)) = (groups.get(&a), groups.get(&b)) else {
            return Ok(csv);
        };
        if group_a.len() == group_b.len() && group_a.len() >= 2 {
            csv.push_str(&format!("pearson:{a}|{b},"));
            for key in &shared {
                let xs: Vec<f64> = group_a.iter().map(|r| r.get(key).unwrap_or(f64::NAN)).collect();
                let ys: Vec<f64> = group_b.iter().map(|r| r.get(key).unwrap_or(f64::NAN)).collect();
                csv.push(',');
                csv.push_str(&format_json_f64(pearson_correlation(&xs, &ys)));
            }
            csv.push('\n');
        }
    }
    Ok(csv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    fn smoke_config(out: &Path) -> ExperimentConfig {
        let json = format!(
            r#"{{
            "dataset": {{
                "synthetic": {{"num_class": 4, "imbalance_ratio": 10.0, "n_total": 400, "dim": 8}},
                "task": "classification",
                "split": {{"method": "random"}}
            }},
            "loss": {{"type": "BalancedSoftmax"}},
            "train": {{"batch_size": 32, "epochs": 3, "hidden_dims": [16]}},
            "setting": {{"type": "LT Classification", "num_class": 4}},
            "seed": 11,
            "output": "{}"
        }}"#,
            out.display()
        );
        parse_config(&json).unwrap()
    }

    #[test]
    fn smoke_run_writes_all_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run1");
        let config = smoke_config(&out);
        let artifacts = run_experiment(&config, &out).unwrap();
        for name in [
            "report.json",
            "history.csv",
            "split.json",
            "config-echo.json",
            "checkpoint.json",
        ] {
            assert!(out.join(name).exists(), "{name} missing");
        }
        assert!(artifacts.report.get("balanced_accuracy").is_some());
        assert!(!out.with_file_name("run1.partial").exists());
    }

    #[test]
    fn rerun_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let config = smoke_config(&out);
        run_experiment(&config, &out).unwrap();
        let first = fs::read(out.join("report.json")).unwrap();
        run_experiment(&config, &out).unwrap();
        let second = fs::read(out.join("report.json")).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn failed_run_leaves_no_partial_directory() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("bad");
        let mut config = smoke_config(&out);
        // Point at a missing CSV to fail in the load stage.
        config.dataset.synthetic = None;
        config.dataset.path = Some(dir.path().join("missing.csv").display().to_string());
        let err = run_experiment(&config, &out).unwrap_err();
        assert!(matches!(err, Error::Stage { stage: "load", .. }));
        assert!(!out.exists());
        assert!(!out.with_file_name("bad.partial").exists());
    }

    #[test]
    fn compare_runs_tabulates_and_correlates() {
        let dir = tempfile::tempdir().unwrap();
        let mut paths = Vec::new();
        for (i, (split, ba, acc)) in [
            ("standard", 0.8, 0.9),
            ("standard", 0.6, 0.7),
            ("random", 0.79, 0.88),
            ("random", 0.61, 0.72),
        ]
        .iter()
        .enumerate()
        {
            let mut report = MetricReport::new();
            report.insert("balanced_accuracy", *ba);
            report.insert("accuracy", *acc);
            report.meta.split = Some(split.to_string());
            let path = dir.path().join(format!("r{i}.json"));
            fs::write(&path, report.to_json_string()).unwrap();
            paths.push(path);
        }
        let csv = compare_runs(&paths, None).unwrap();
        assert!(csv.lines().count() >= 6);
        assert!(csv.contains("pearson:random|standard"));

        // Identical reports correlate perfectly.
        let text = csv
            .lines()
            .last()
            .unwrap()
            .split(',')
            .nth(3)
            .unwrap()
            .to_string();
        let r: f64 = text.parse().unwrap();
        assert!((r - 1.0).abs() < 1e-9);

        assert!(matches!(
            compare_runs(&paths[..1], None),
            Err(Error::NotEnoughReports(1))
        ));
    }
}
