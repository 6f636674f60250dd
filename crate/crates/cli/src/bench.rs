//! Cost sweeps: parameter counts against closed forms, and wall-time
//! growth against the predicted exponent.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rpn::model::{Fabricated, HeadSpec, Model, ModelSpec};
use rpn::reconcile::{mask_count, ReconciliationSpec};
use rpn::remainder::RemainderSpec;
use rpn::{ExpansionSpec, Rng};

use crate::CliError;

pub const SWEEPS: [&str; 3] = ["recon", "taylor", "inner"];

/// Allowed gap between a measured log-log time slope and its prediction.
pub const SLOPE_TOL: f64 = 0.3;

const TIMING_BUDGET: f64 = 0.05;
const TRIALS: usize = 7;

struct Sweep {
    lines: Vec<String>,
    csv: String,
    failures: Vec<String>,
}

/// Least-squares slope and intercept of `y` on `x`.
pub fn fit_line(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Fastest of several trials, in seconds per call of `f`. The minimum is
/// the least disturbed by other load on the machine.
fn time_per_call(mut f: impl FnMut()) -> f64 {
    let mut trials = Vec::with_capacity(TRIALS);
    for _ in 0..TRIALS {
        let start = Instant::now();
        let mut calls = 0usize;
        while start.elapsed().as_secs_f64() < TIMING_BUDGET {
            f();
            calls += 1;
        }
        trials.push(start.elapsed().as_secs_f64() / calls as f64);
    }
    trials.into_iter().fold(f64::INFINITY, f64::min)
}

fn recon_sweep() -> Result<Sweep, CliError> {
    use ReconciliationSpec as R;
    let n = 4usize;
    let ds = [8usize, 16, 32, 64, 128, 256];
    type Formula = fn(usize, usize) -> usize;
    let kinds: Vec<(&str, R, Formula)> = vec![
        ("identity", R::Identity {}, |n, d| n * d),
        ("lorr r=2", R::Lorr { r: 2 }, |n, d| 2 * (n + d)),
        ("hm p=q=2", R::Hm { p: 2, q: 2 }, |n, d| 4 + (n / 2) * (d / 2)),
        ("lphm p=q=2 r=1", R::Lphm { p: 2, q: 2, r: 1 }, |n, d| 4 + n / 2 + d / 2),
        ("dual_lphm p=q=2 r=1", R::DualLphm { p: 2, q: 2, r: 1 }, |n, d| {
            2 + 2 + n / 2 + d / 2
        }),
        (
            "duplicated_padding p=q=2",
            R::DuplicatedPadding { p: 2, q: 2, c: None },
            |n, d| (n / 2) * (d / 2),
        ),
        ("masking 0.5", R::Masking { ratio: 0.5, seed: 0 }, |n, d| {
            mask_count(0.5, n * d)
        }),
        (
            "hypernet l=16",
            R::Hypernet {
                l: 16,
                hidden: 8,
                seed: 0,
            },
            |_, _| 16,
        ),
    ];
    let mut s = Sweep {
        lines: vec![format!(
            "{:<26} {:>10} {:>10} {:>14} {:>7}",
            "reconciliation (n=4)", "slope", "intercept", "loglog slope", "formula"
        )],
        csv: String::from("kind,n,d,required_length,formula\n"),
        failures: Vec::new(),
    };
    for (name, spec, formula) in kinds {
        let mut exact = true;
        let mut ls = Vec::new();
        for &d in &ds {
            let l = spec.required_length(n, d)?;
            let want = formula(n, d);
            exact &= l == want;
            ls.push(l);
            writeln!(s.csv, "{name},{n},{d},{l},{want}").unwrap();
        }
        let (hi, lo) = (ds.len() - 1, 0);
        let slope = (ls[hi] as f64 - ls[lo] as f64) / (ds[hi] - ds[lo]) as f64;
        let intercept = ls[lo] as f64 - slope * ds[lo] as f64;
        let loglog =
            ((ls[hi] as f64).log2() - (ls[lo] as f64).log2()) / ((ds[hi] as f64).log2() - (ds[lo] as f64).log2());
        s.lines.push(format!(
            "{name:<26} {slope:>10} {intercept:>10} {loglog:>14.6} {:>7}",
            if exact { "exact" } else { "MISMATCH" }
        ));
        if !exact {
            s.failures
                .push(format!("{name}: required_length differs from the closed form"));
        }
        if name == "identity" && loglog != 1.0 {
            s.failures.push(format!("identity log-log slope {loglog} is not 1"));
        }
        if name.starts_with("lorr") && (slope != 2.0 || intercept != (2 * n) as f64) {
            s.failures.push(format!(
                "lorr fit slope {slope} intercept {intercept}, want 2 and {}",
                2 * n
            ));
        }
    }
    Ok(s)
}

fn timing_sweep(
    title: &str,
    sizes: &[usize],
    exponent: f64,
    build: impl Fn(usize) -> Result<(Model, usize, usize), CliError>,
    work: fn(&Model, &Fabricated, &[f64]),
) -> Result<Sweep, CliError> {
    let mut s = Sweep {
        lines: vec![format!(
            "{:<10} {:>12} {:>12} {:>14}",
            title, "params", "formula", "sec/call"
        )],
        csv: format!("{title},param_count,formula,seconds_per_call\n"),
        failures: Vec::new(),
    };
    let mut rng = Rng::new(0);
    let (mut xs, mut ts) = (Vec::new(), Vec::new());
    for &size in sizes {
        let (model, formula, m) = build(size)?;
        let params = model.init_params(&mut rng);
        let x: Vec<f64> = (0..m).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let fab = model.fabricate(&params)?;
        let t = time_per_call(|| work(&model, &fab, std::hint::black_box(&x)));
        let count = model.param_count();
        if count != formula {
            s.failures
                .push(format!("{title}={size}: param count {count}, closed form {formula}"));
        }
        s.lines.push(format!("{size:<10} {count:>12} {formula:>12} {t:>14.4e}"));
        writeln!(s.csv, "{size},{count},{formula},{t:e}").unwrap();
        xs.push((size as f64).ln());
        ts.push(t.ln());
    }
    let (slope, _) = fit_line(&xs, &ts);
    let ok = (slope - exponent).abs() <= SLOPE_TOL;
    s.lines.push(format!(
        "time log-log slope {slope:.3}, predicted {exponent} ± {SLOPE_TOL}: {}",
        if ok { "ok" } else { "OUT OF RANGE" }
    ));
    if !ok {
        s.failures
            .push(format!("{title} time slope {slope:.3}, predicted {exponent}"));
    }
    Ok(s)
}

fn head(expansion: ExpansionSpec) -> HeadSpec {
    HeadSpec::new(expansion, ReconciliationSpec::Identity {}, RemainderSpec::Zero {})
}

fn forward(model: &Model, fab: &Fabricated, x: &[f64]) {
    std::hint::black_box(model.forward_fab(fab, x).unwrap());
}

fn taylor_expansion(_: &Model, _: &Fabricated, x: &[f64]) {
    std::hint::black_box(ExpansionSpec::taylor(2).forward(x).unwrap());
}

/// Taylor(2) on `m` inputs: `D = m + m^2` parameters per output, and the
/// expansion itself takes time quadratic in `m`. Every size puts the
/// feature vector between 128 KiB and 2 MiB: above the allocator's mmap
/// threshold and inside cache, so each point pays the same cost per byte.
fn taylor_sweep() -> Result<Sweep, CliError> {
    timing_sweep(
        "m",
        &[128, 192, 256, 384, 512],
        2.0,
        |m| {
            let model = Model::build(&ModelSpec::stack(&[m, 1], &head(ExpansionSpec::taylor(2))))?;
            Ok((model, m + m * m, m))
        },
        taylor_expansion,
    )
}

/// Identity expansion of 256 inputs into `n` outputs over 2 channels:
/// `C n D` parameters, time linear in `n`.
fn inner_sweep() -> Result<Sweep, CliError> {
    let m = 256;
    timing_sweep(
        "n",
        &[16, 32, 64, 128],
        1.0,
        |n| {
            let h = head(ExpansionSpec::identity()).with_channels(2);
            let model = Model::build(&ModelSpec::stack(&[m, n], &h))?;
            Ok((model, 2 * n * m, m))
        },
        forward,
    )
}

pub fn run(sweep: &str, out: Option<&Path>) -> Result<(), CliError> {
    let names: Vec<&str> = match sweep {
        "all" => SWEEPS.to_vec(),
        s if SWEEPS.contains(&s) => vec![s],
        other => {
            return Err(CliError::Usage(format!(
                "unknown sweep {other:?}; expected one of {SWEEPS:?} or all"
            )))
        }
    };
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
    }
    let mut failures = Vec::new();
    for name in names {
        let s = match name {
            "recon" => recon_sweep()?,
            "taylor" => taylor_sweep()?,
            _ => inner_sweep()?,
        };
        println!("== {name}");
        for l in &s.lines {
            println!("{l}");
        }
        if let Some(dir) = out {
            std::fs::write(dir.join(format!("{name}.csv")), &s.csv)?;
        }
        failures.extend(s.failures);
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failed(failures.join("; ")))
    }
}
