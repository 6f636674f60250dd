//! `train` and `eval`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use rpn::data::{Normalizer, Split};
use rpn::train::{evaluate, fit, TrainOutcome};
use serde::{Deserialize, Serialize};

use crate::config::{self, Loaded};
use crate::CliError;

/// Best parameters of one (seed, fold) run.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub seed: u64,
    pub fold: usize,
    pub param_count: usize,
    pub params: Vec<f64>,
}

#[derive(Debug, Serialize)]
struct RunSummary {
    seed: u64,
    fold: usize,
    best_epoch: usize,
    best_test_metric: f64,
    final_test_metric: f64,
}

#[derive(Debug, Serialize)]
struct Summary {
    name: Option<String>,
    metric: String,
    param_count: usize,
    seeds: Vec<u64>,
    folds: usize,
    runs: Vec<RunSummary>,
    mean: f64,
    std: f64,
}

/// Mean and population standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn prepared_splits(loaded: &Loaded, seed: u64) -> rpn::Result<Vec<Split>> {
    let splits = loaded.config.data.load(seed)?;
    Ok(splits
        .iter()
        .map(|s| Normalizer::apply(&loaded.config.normalizer, s))
        .collect())
}

fn train_seed(loaded: &Loaded, seed: u64) -> rpn::Result<Vec<TrainOutcome>> {
    let mut cfg = loaded.config.train.clone();
    cfg.seed = seed;
    prepared_splits(loaded, seed)?
        .iter()
        .map(|split| fit(&loaded.model, split, &cfg))
        .collect()
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Usage(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

pub fn train(path: &Path, seed: Option<u64>, out: Option<PathBuf>, threads: usize) -> Result<(), CliError> {
    let loaded = config::load(path)?;
    let mut seeds = match seed {
        Some(s) => vec![s],
        None => loaded.config.seeds.clone(),
    };
    seeds.sort_unstable();
    seeds.dedup();
    let out = out.unwrap_or_else(|| loaded.config.out.clone());
    let started = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let clock = Instant::now();

    // seeds run in parallel; collect keeps seed order
    let results: Vec<Vec<TrainOutcome>> = seeds
        .par_iter()
        .map(|&s| train_seed(&loaded, s))
        .collect::<rpn::Result<_>>()?;

    fs::create_dir_all(out.join("checkpoints"))?;
    let metric = loaded.config.train.loss.metric_name();
    let param_count = loaded.model.param_count();
    let folds = results.first().map_or(0, Vec::len);
    let mut report = String::new();
    let mut history = format!("seed,fold,epoch,train_loss,train_{metric},test_loss,test_{metric}\n");
    let mut runs = Vec::new();
    let mut walls = Vec::new();
    for (&seed, outcomes) in seeds.iter().zip(&results) {
        for (fold, o) in outcomes.iter().enumerate() {
            let r = &o.report;
            writeln!(report, "# seed {seed} fold {fold}").unwrap();
            report.push_str(&r.to_lines());
            for e in &r.epochs {
                writeln!(
                    history,
                    "{seed},{fold},{},{:e},{:e},{:e},{:e}",
                    e.epoch, e.train_loss, e.train_metric, e.test_loss, e.test_metric
                )
                .unwrap();
            }
            runs.push(RunSummary {
                seed,
                fold,
                best_epoch: r.best_epoch,
                best_test_metric: r.best_test_metric,
                final_test_metric: r.epochs.last().map_or(f64::NAN, |e| e.test_metric),
            });
            walls.push(serde_json::json!({"seed": seed, "fold": fold, "wall_seconds": o.wall_seconds}));
            write_json(
                &out.join("checkpoints").join(format!("seed{seed}_fold{fold}.json")),
                &Checkpoint {
                    seed,
                    fold,
                    param_count,
                    params: o.best_params.clone(),
                },
            )?;
        }
    }

    let best: Vec<f64> = runs.iter().map(|r| r.best_test_metric).collect();
    let (mean, std) = mean_std(&best);
    let mut table = format!(
        "{:>6} {:>5} {:>10} {:>16}\n",
        "seed",
        "fold",
        "best_epoch",
        format!("best_{metric}")
    );
    for r in &runs {
        writeln!(
            table,
            "{:>6} {:>5} {:>10} {:>16.6e}",
            r.seed, r.fold, r.best_epoch, r.best_test_metric
        )
        .unwrap();
    }
    let headline = format!(
        "test {metric} (best over all epochs): {mean:.6e} ± {std:.6e} (mean ± std over {} runs: {} seeds x {folds} folds) params={param_count}",
        runs.len(),
        seeds.len(),
    );
    let report = format!("{report}\n{table}{headline}\n");
    fs::write(out.join("report.txt"), &report)?;
    fs::write(out.join("history.csv"), &history)?;
    write_json(
        &out.join("summary.json"),
        &Summary {
            name: loaded.config.name.clone(),
            metric: metric.to_string(),
            param_count,
            seeds: seeds.clone(),
            folds,
            runs,
            mean,
            std,
        },
    )?;
    write_json(
        &out.join("meta.json"),
        &serde_json::json!({
            "config": loaded.source.display().to_string(),
            "started_unix": started,
            "wall_seconds": clock.elapsed().as_secs_f64(),
            "runs": walls,
            "threads": threads,
            "version": env!("CARGO_PKG_VERSION"),
        }),
    )?;
    print!("{table}");
    println!("{headline}");
    println!("wrote {}", out.display());
    Ok(())
}

pub fn eval(path: &Path, checkpoint: &Path) -> Result<(), CliError> {
    let loaded = config::load(path)?;
    let text = fs::read_to_string(checkpoint)?;
    let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| rpn::Error::Format {
        path: checkpoint.to_path_buf(),
        message: e.to_string(),
    })?;
    if ck.params.len() != loaded.model.param_len() {
        return Err(rpn::Error::Format {
            path: checkpoint.to_path_buf(),
            message: format!(
                "checkpoint has {} parameters, model stores {}",
                ck.params.len(),
                loaded.model.param_len()
            ),
        }
        .into());
    }
    let splits = prepared_splits(&loaded, ck.seed)?;
    let split = splits.get(ck.fold).ok_or_else(|| {
        CliError::Usage(format!(
            "checkpoint fold {} but the data has {} folds",
            ck.fold,
            splits.len()
        ))
    })?;
    let kind = loaded.config.train.loss;
    let m = kind.metric_name();
    let (train_loss, train_metric) = evaluate(&loaded.model, &ck.params, &split.train, kind)?;
    let (test_loss, test_metric) = evaluate(&loaded.model, &ck.params, &split.test, kind)?;
    println!(
        "seed={} fold={} params={}",
        ck.seed,
        ck.fold,
        loaded.model.param_count()
    );
    println!("train_loss={train_loss:e} train_{m}={train_metric:e}");
    println!("test_loss={test_loss:e} test_{m}={test_metric:e}");
    Ok(())
}
