//! One representative configuration of every expansion, reconciliation and
//! remainder kind, for sweeps such as the gradient check.

use rayon::prelude::*;
use serde::Serialize;

use crate::data::Dataset;
use crate::error::Result;
use crate::expand::{ExpansionKind, ExpansionSpec};
use crate::model::{HeadSpec, Model, ModelSpec};
use crate::prob::{Distribution, Mvn};
use crate::process::Processor;
use crate::reconcile::ReconciliationSpec;
use crate::remainder::RemainderSpec;
use crate::rng::Rng;
use crate::train::{batch_gradient, evaluate, grad_check_with, loss, LossSpec, DEFAULT_CHUNK};

/// An expansion together with an input interval on which it is smooth.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpansionCase {
    pub spec: ExpansionSpec,
    pub lo: f64,
    pub hi: f64,
}

fn case(spec: impl Into<ExpansionSpec>, lo: f64, hi: f64) -> ExpansionCase {
    ExpansionCase {
        spec: spec.into(),
        lo,
        hi,
    }
}

fn rbf_defaults() -> (Option<Vec<f64>>, usize, [f64; 2], f64) {
    (None, 5, [-1.0, 1.0], 1.5)
}

/// Every expansion kind for input dimension `m <= 6`, each with output
/// dimension at most 60.
pub fn expansion_cases(m: usize) -> Vec<ExpansionCase> {
    use ExpansionKind as K;
    let (centers, count, range, epsilon) = rbf_defaults();
    let mut out = vec![
        case(ExpansionSpec::identity(), -1.0, 1.0),
        case(K::Reciprocal {}, 0.5, 2.0),
        case(
            K::Linear {
                scale: 1.5,
                c_pre: None,
                c_post: None,
            },
            -1.0,
            1.0,
        ),
        case(ExpansionSpec::taylor(2), -1.0, 1.0),
        case(ExpansionSpec::fourier(2.0, 2), -1.0, 1.0),
        case(ExpansionSpec::bspline(3, 2), -0.95, 0.95),
        case(ExpansionSpec::chebyshev(3), -1.0, 1.0),
        case(
            K::Jacobi {
                d: 3,
                alpha: 0.5,
                beta: -0.3,
            },
            -1.0,
            1.0,
        ),
        case(K::Trig {}, -1.0, 1.0),
        case(K::ArcTrig {}, -0.9, 0.9),
        case(K::Hyperbolic {}, -1.0, 1.0),
        case(K::ArcHyperbolic {}, 1.2, 3.0),
        case(
            K::GaussianRbf {
                centers: centers.clone(),
                count,
                range,
                epsilon,
            },
            -1.0,
            1.0,
        ),
        case(
            K::InverseQuadraticRbf {
                centers,
                count,
                range,
                epsilon,
            },
            -1.0,
            1.0,
        ),
        case(ExpansionSpec::combinatorial(m.min(2)), -1.0, 1.0),
        case(
            K::NaiveProb {
                distributions: vec![
                    Distribution::Gaussian { mean: 0.1, std: 0.8 },
                    Distribution::Laplace { loc: 3.0, scale: 1.2 },
                    Distribution::Cauchy { loc: -0.2, scale: 0.5 },
                ],
                per_feature: false,
            },
            -1.0,
            1.0,
        ),
        case(
            ExpansionSpec::from(K::NaiveProb {
                distributions: vec![
                    Distribution::Exponential { rate: 1.5 },
                    Distribution::Chi2 { k: 3.0 },
                    Distribution::Gamma { shape: 2.0, scale: 0.7 },
                ],
                per_feature: false,
            })
            .with_pre(Processor::Softplus),
            -1.0,
            1.0,
        ),
        case(
            K::NaiveProb {
                distributions: (0..m)
                    .map(|i| Distribution::Gaussian {
                        mean: 0.2 * i as f64 - 0.5,
                        std: 0.5 + 0.1 * i as f64,
                    })
                    .collect(),
                per_feature: true,
            },
            -1.0,
            1.0,
        ),
        case(
            K::CombinatorialProb {
                d: m.min(2),
                distributions: Some(
                    (1..=m.min(2))
                        .map(|k| {
                            let mut mvn = Mvn::standard(k);
                            mvn.mean = (0..k).map(|i| 0.1 * i as f64).collect();
                            if k == 2 {
                                mvn.cov = vec![vec![1.0, 0.3], vec![0.3, 0.8]];
                            }
                            mvn
                        })
                        .collect(),
                ),
            },
            -1.0,
            1.0,
        ),
        case(
            ExpansionSpec::nested(vec![
                ExpansionSpec::new(K::Hyperbolic {}),
                ExpansionSpec::new(K::Trig {}),
            ]),
            -1.0,
            1.0,
        ),
        case(
            ExpansionSpec::extended(vec![ExpansionSpec::identity(), ExpansionSpec::new(K::Trig {})]),
            -1.0,
            1.0,
        ),
        case(
            ExpansionSpec::taylor(2)
                .with_pre(Processor::LayerNorm)
                .with_post(Processor::Silu),
            -1.0,
            1.0,
        ),
        case(ExpansionSpec::chebyshev(2).with_pre(Processor::Sigmoid), -2.0, 2.0),
    ];
    out.retain(|c| c.spec.out_dim(m).is_ok());
    out
}

fn small_divisor(k: usize) -> usize {
    (2..=k).find(|p| k % p == 0).unwrap_or(1)
}

/// Every reconciliation kind for an `n x d` target.
pub fn reconciliation_cases(n: usize, d: usize) -> Vec<ReconciliationSpec> {
    use ReconciliationSpec as R;
    let (p, q) = (small_divisor(n), small_divisor(d));
    vec![
        R::Constant { value: 0.3, eye: false },
        R::Identity {},
        R::Masking { ratio: 0.5, seed: 11 },
        R::DuplicatedPadding { p, q, c: None },
        R::Lorr { r: 2 },
        R::Hm { p, q },
        R::Lphm { p, q, r: 1 },
        R::DualLphm { p, q, r: 1 },
        R::Hypernet {
            l: 6,
            hidden: 8,
            seed: 5,
        },
    ]
}

/// Every remainder kind. `Identity` is only included when `m == n`.
pub fn remainder_cases(m: usize, n: usize) -> Vec<RemainderSpec> {
    let mut out = vec![
        RemainderSpec::Zero {},
        RemainderSpec::Constant { c: vec![0.25] },
        RemainderSpec::linear(Processor::Silu),
        RemainderSpec::Complementary {
            head: Box::new(HeadSpec::new(
                ExpansionSpec::chebyshev(2),
                ReconciliationSpec::Lorr { r: 1 },
                RemainderSpec::Zero {},
            )),
        },
    ];
    if m == n {
        out.push(RemainderSpec::Identity {
            activation: Processor::Sigmoid,
        });
    }
    out
}

/// Outcome of checking one (expansion, reconciliation, remainder) triple.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepResult {
    pub expansion: &'static str,
    pub reconciliation: &'static str,
    pub remainder: &'static str,
    pub m: usize,
    pub n: usize,
    pub d: usize,
    /// Worst relative error over parameter and input gradients.
    pub max_rel_err: f64,
    /// Parameter index with the largest error, if the head has any.
    pub worst_param: Option<usize>,
    pub passed: bool,
}

/// Central-difference check of parameter and input gradients for every
/// triple of kinds, on random shapes with `m <= 6`, `n <= 4`, two channels
/// and a three-sample MSE batch.
pub fn gradient_sweep(seed: u64, h: f64, tol: f64) -> Result<Vec<SweepResult>> {
    gradient_sweep_with(seed, h, tol, false)
}

/// As [`gradient_sweep`]; with `corrupt` the first analytic parameter
/// gradient is perturbed, which every triple with parameters must catch.
pub fn gradient_sweep_with(seed: u64, h: f64, tol: f64, corrupt: bool) -> Result<Vec<SweepResult>> {
    let mut rng = Rng::new(seed);
    let mut jobs = Vec::new();
    for e in 0..expansion_cases(6).len() {
        for r in 0..reconciliation_cases(1, 1).len() {
            for k in 0..remainder_cases(1, 1).len() {
                let job_seed = rng.below(u32::MAX as usize) as u64;
                jobs.push((e, r, k, job_seed));
            }
        }
    }
    jobs.into_par_iter()
        .map(|(e, r, k, job_seed)| check_triple(e, r, k, job_seed, h, tol, corrupt))
        .collect()
}

fn check_triple(e: usize, r: usize, k: usize, seed: u64, h: f64, tol: f64, corrupt: bool) -> Result<SweepResult> {
    let mut rng = Rng::new(seed);
    // the identity remainder is the last kind and needs m == n
    let identity_rem = k == remainder_cases(1, 1).len() - 1;
    let (m, n) = if identity_rem {
        let n = 1 + rng.below(4);
        (n, n)
    } else {
        (1 + rng.below(6), 1 + rng.below(4))
    };
    let ecase = expansion_cases(m).swap_remove(e);
    let d = ecase.spec.out_dim(m)?;
    let rspec = reconciliation_cases(n, d).swap_remove(r);
    let mspec = remainder_cases(m, n).swap_remove(k);
    let (en, rn, mn) = (ecase.spec.name(), rspec.name(), mspec.name());
    let head = HeadSpec::new(ecase.spec, rspec, mspec).with_channels(2);
    let model = Model::build(&ModelSpec::stack(&[m, n], &head))?;
    let params = model.init_params(&mut rng);
    let x: Vec<Vec<f64>> = (0..3)
        .map(|_| (0..m).map(|_| rng.uniform_in(ecase.lo, ecase.hi)).collect())
        .collect();
    let y: Vec<Vec<f64>> = (0..3).map(|_| (0..n).map(|_| rng.normal()).collect()).collect();
    let data = Dataset::new(x, y)?;
    let idx: Vec<usize> = (0..data.len()).collect();
    let (_, _, mut analytic) = batch_gradient(&model, &params, &data, &idx, LossSpec::Mse, DEFAULT_CHUNK)?;
    if corrupt {
        if let Some(g) = analytic.first_mut() {
            *g = *g * 1.01 + 1e-3;
        }
    }
    let batch_loss = |p: &[f64]| -> Result<f64> { Ok(evaluate(&model, p, &data, LossSpec::Mse)?.0) };
    let report = grad_check_with(&params, &analytic, batch_loss, h, tol)?;
    let worst_param = report.worst.first().map(|w| w.index);
    let mut worst = report.max_rel_err;
    for (x, y) in data.x.iter().zip(&data.y) {
        let pred = model.predict(&params, x)?;
        let (_, g) = loss(&pred, y, LossSpec::Mse)?;
        let (_, gx) = model.gradient(&params, x, &g)?;
        let f = |xs: &[f64]| -> Result<f64> { Ok(loss(&model.predict(&params, xs)?, y, LossSpec::Mse)?.0) };
        worst = worst.max(grad_check_with(x, &gx, f, h, tol)?.max_rel_err);
    }
    Ok(SweepResult {
        expansion: en,
        reconciliation: rn,
        remainder: mn,
        m,
        n,
        d,
        max_rel_err: worst,
        worst_param,
        passed: worst < tol && worst.is_finite(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reconcile::Reconciler;

    #[test]
    fn every_kind_is_present_and_small() {
        for m in 1..=6 {
            let cases = expansion_cases(m);
            let want = if m == 1 { 21 } else { 23 };
            assert!(cases.len() >= want, "m={m}: {}", cases.len());
            for c in &cases {
                let d = c.spec.out_dim(m).unwrap();
                assert!(d <= 60, "{} gives D={d} at m={m}", c.spec.name());
                for n in 1..=4 {
                    for r in reconciliation_cases(n, d) {
                        Reconciler::build(&r, n, d).unwrap();
                    }
                }
            }
        }
        assert_eq!(reconciliation_cases(4, 10).len(), 9);
        assert_eq!(remainder_cases(3, 3).len(), 5);
    }
}
