//! `gradcheck`, `equiv` and `gen-data`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rpn::catalog::{gradient_sweep_with, SweepResult};
use rpn::data::{self, Dataset, Normalizer};
use rpn::train::{batch_gradient, evaluate, grad_check_with, DEFAULT_CHUNK};
use rpn::unify::{self, EQUIV_TARGETS};
use rpn::Rng;

use crate::config;
use crate::CliError;

const CONFIG_SAMPLES: usize = 8;

fn sweep_csv(results: &[SweepResult]) -> String {
    let mut s = String::from("expansion,reconciliation,remainder,m,n,d,max_rel_err,worst_param,passed\n");
    for r in results {
        writeln!(
            s,
            "{},{},{},{},{},{},{:e},{},{}",
            r.expansion,
            r.reconciliation,
            r.remainder,
            r.m,
            r.n,
            r.d,
            r.max_rel_err,
            r.worst_param.map_or(String::new(), |i| i.to_string()),
            r.passed
        )
        .unwrap();
    }
    s
}

fn catalog_check(seed: u64, h: f64, tol: f64, corrupt: bool, out: Option<&Path>) -> Result<(), CliError> {
    let results = gradient_sweep_with(seed, h, tol, corrupt)?;
    if let Some(path) = out {
        std::fs::write(path, sweep_csv(&results))?;
    }
    let failed: Vec<&SweepResult> = results.iter().filter(|r| !r.passed).collect();
    for r in &failed {
        println!(
            "FAIL {}/{}/{} m={} n={} D={} max_rel_err={:e} worst_param={}",
            r.expansion,
            r.reconciliation,
            r.remainder,
            r.m,
            r.n,
            r.d,
            r.max_rel_err,
            r.worst_param.map_or("-".to_string(), |i| i.to_string())
        );
    }
    let worst = results
        .iter()
        .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
        .expect("sweep is never empty");
    println!(
        "worst: {}/{}/{} max_rel_err={:e} worst_param={}",
        worst.expansion,
        worst.reconciliation,
        worst.remainder,
        worst.max_rel_err,
        worst.worst_param.map_or("-".to_string(), |i| i.to_string())
    );
    println!(
        "{}/{} triples pass at tol {tol:e} (h={h:e})",
        results.len() - failed.len(),
        results.len()
    );
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failed(format!("{} triples exceed tol {tol:e}", failed.len())))
    }
}

fn config_check(path: &Path, seed: u64, h: f64, tol: f64, corrupt: bool) -> Result<(), CliError> {
    let loaded = config::load(path)?;
    let split = loaded.config.data.load(seed)?.swap_remove(0);
    let split = Normalizer::apply(&loaded.config.normalizer, &split);
    let take: Vec<usize> = (0..split.train.len().min(CONFIG_SAMPLES)).collect();
    let batch: Dataset = split.train.subset(&take);
    let model = &loaded.model;
    let kind = loaded.config.train.loss;
    let params = model.init_params(&mut Rng::new(seed).fork(1));
    let (_, _, mut analytic) = batch_gradient(model, &params, &batch, &take, kind, DEFAULT_CHUNK)?;
    if corrupt {
        if let Some(g) = analytic.first_mut() {
            *g = *g * 1.01 + 1e-3;
        }
    }
    let report = grad_check_with(&params, &analytic, |p| Ok(evaluate(model, p, &batch, kind)?.0), h, tol)?;
    for w in &report.worst {
        println!(
            "param {} analytic={:e} numeric={:e} rel_err={:e}",
            w.index, w.analytic, w.numeric, w.rel_err
        );
    }
    let worst = report.worst.first().map_or("-".to_string(), |w| w.index.to_string());
    println!(
        "{} parameters checked, max_rel_err={:e} worst_param={worst} tol={tol:e}",
        report.checked, report.max_rel_err
    );
    if report.passed {
        Ok(())
    } else {
        Err(CliError::Failed(format!("max relative error {:e}", report.max_rel_err)))
    }
}

pub fn gradcheck(
    config: Option<&Path>,
    seed: u64,
    h: f64,
    tol: f64,
    corrupt: bool,
    out: Option<&Path>,
) -> Result<(), CliError> {
    if !(h > 0.0 && tol > 0.0) {
        return Err(CliError::Usage("--h and --tol must be positive".into()));
    }
    match config {
        Some(path) => config_check(path, seed, h, tol, corrupt),
        None => catalog_check(seed, h, tol, corrupt, out),
    }
}

pub fn equiv(target: &str, seed: u64) -> Result<(), CliError> {
    let targets: Vec<&str> = if target == "all" {
        EQUIV_TARGETS.to_vec()
    } else {
        vec![target]
    };
    let mut failed = Vec::new();
    for t in targets {
        let r = unify::equiv(t, seed)?;
        println!(
            "{} {}={:e} threshold={:e} {}",
            r.target,
            r.measure,
            r.value,
            r.threshold,
            if r.passed { "PASS" } else { "FAIL" }
        );
        if !r.passed {
            failed.push(r.target);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failed(format!("not equivalent: {}", failed.join(", "))))
    }
}

pub fn gen_data(
    function: Option<String>,
    n: Option<usize>,
    out: Option<PathBuf>,
    seed: u64,
    list: bool,
) -> Result<(), CliError> {
    if list {
        for f in data::builtin_functions() {
            let vars: Vec<String> = f
                .vars
                .iter()
                .map(|v| format!("{} in [{}, {}]", v.name, v.lo, v.hi))
                .collect();
            println!("{:<10} {}    {}", f.id, f.formula, vars.join(", "));
        }
        return Ok(());
    }
    let (Some(id), Some(n), Some(out)) = (function, n, out) else {
        return Err(CliError::Usage(
            "gen-data needs --function, --n and --out (or --list)".into(),
        ));
    };
    let def = data::find_function(&id)?;
    let split = data::gen_function_dataset(&def, n, seed)?;
    let mut all = split.train;
    all.x.extend(split.test.x);
    all.y.extend(split.test.y);
    all.write_csv(&out)?;
    println!("wrote {n} samples of {id} to {}", out.display());
    Ok(())
}
