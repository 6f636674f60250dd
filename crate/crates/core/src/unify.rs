//! Classic models written as layer configurations, next to small
//! first-principles reference implementations that share no code with the
//! model module.

use crate::data::Dataset;
use crate::error::{config, shape, Result};
use crate::expand::{subsets, ExpansionKind, ExpansionSpec};
use crate::model::{HeadSpec, LayerSpec, Model, ModelSpec, Role};
use crate::prob::{Distribution, Mvn};
use crate::process::Processor;
use crate::reconcile::ReconciliationSpec;
use crate::remainder::RemainderSpec;
use crate::rng::Rng;

/// MLP without biases. Hidden activations are applied as pre-processing
/// of the next layer's identity expansion, so the last layer's output is
/// left linear.
pub fn mlp_config(dims: &[usize], activation: Processor) -> ModelSpec {
    let layers = dims
        .windows(2)
        .enumerate()
        .map(|(k, w)| {
            let exp = if k == 0 {
                ExpansionSpec::identity()
            } else {
                ExpansionSpec::identity().with_pre(activation)
            };
            LayerSpec {
                in_dim: w[0],
                out_dim: w[1],
                heads: vec![HeadSpec::new(
                    exp,
                    ReconciliationSpec::Identity {},
                    RemainderSpec::Zero {},
                )],
            }
        })
        .collect();
    ModelSpec { layers }
}

/// KAN: B-spline expansion, identity reconciliation and a SiLU linear
/// remainder per layer.
pub fn kan_config(dims: &[usize], t: usize, d: usize, range: [f64; 2]) -> ModelSpec {
    ModelSpec::stack(
        dims,
        &HeadSpec::new(
            ExpansionSpec::bspline_on(t, d, range[0], range[1]),
            ReconciliationSpec::Identity {},
            RemainderSpec::linear(Processor::Silu),
        ),
    )
}

/// Splits a flat parameter vector of a single-head, single-channel model
/// into per-layer `(W, W')` pairs.
pub fn layer_weights(model: &Model, params: &[f64]) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut out = vec![(Vec::new(), Vec::new()); model.layers().len()];
    for s in model.segments() {
        let v = params[s.offset..s.offset + s.len].to_vec();
        match s.role {
            Role::Channel(_) => out[s.layer].0 = v,
            Role::Remainder => out[s.layer].1 = v,
        }
    }
    out
}

/// Kernel with an explicit finite feature map.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kernel {
    /// `aᵀb`
    Linear,
    /// `(aᵀb)²`
    Quadratic,
}

impl Kernel {
    pub fn eval(self, a: &[f64], b: &[f64]) -> f64 {
        let ip: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        match self {
            Kernel::Linear => ip,
            Kernel::Quadratic => ip * ip,
        }
    }
}

/// The two-feature map `[x1², √2 x1 x2, x2²]` of the quadratic kernel.
pub fn quadratic_feature_map(x: [f64; 2]) -> [f64; 3] {
    [x[0] * x[0], std::f64::consts::SQRT_2 * x[0] * x[1], x[1] * x[1]]
}

/// Dual-form kernel classifier `sign(Σ_i a_i K(s_i, x) + b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelSvm {
    pub kernel: Kernel,
    pub support: Vec<Vec<f64>>,
    /// `α_i y_i` per support vector.
    pub coef: Vec<f64>,
    pub bias: f64,
}

impl KernelSvm {
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.support
            .iter()
            .zip(&self.coef)
            .map(|(s, a)| a * self.kernel.eval(s, x))
            .sum::<f64>()
            + self.bias
    }

    /// Kernel perceptron with a bias term; on separable data it stops once
    /// every training point is on the right side of the margin.
    pub fn train_perceptron(kernel: Kernel, data: &Dataset, epochs: usize) -> Self {
        let mut svm = KernelSvm {
            kernel,
            support: data.x.clone(),
            coef: vec![0.0; data.len()],
            bias: 0.0,
        };
        for _ in 0..epochs {
            let mut mistakes = 0;
            for (i, (x, y)) in data.x.iter().zip(&data.y).enumerate() {
                let y = y[0];
                if y * svm.decision(x) <= 0.0 {
                    svm.coef[i] += y;
                    svm.bias += y;
                    mistakes += 1;
                }
            }
            if mistakes == 0 {
                break;
            }
        }
        svm
    }
}

/// Single-layer model computing the SVM decision value, with its
/// parameters. Linear kernels use the identity expansion; the quadratic
/// kernel uses second-order Taylor features with zero first-order weights.
pub fn ksvm_config(svm: &KernelSvm) -> Result<(ModelSpec, Vec<f64>)> {
    let m = match svm.support.first() {
        Some(s) => s.len(),
        None => return config("kernel svm needs at least one support vector"),
    };
    if svm.coef.len() != svm.support.len() {
        return shape("one coefficient per support vector is required");
    }
    let (exp, w) = match svm.kernel {
        Kernel::Linear => {
            let mut w = vec![0.0; m];
            for (s, a) in svm.support.iter().zip(&svm.coef) {
                for i in 0..m {
                    w[i] += a * s[i];
                }
            }
            (ExpansionSpec::identity(), w)
        }
        Kernel::Quadratic => {
            let mut w = vec![0.0; m + m * m];
            for (s, a) in svm.support.iter().zip(&svm.coef) {
                for i in 0..m {
                    for j in 0..m {
                        w[m + i * m + j] += a * s[i] * s[j];
                    }
                }
            }
            (ExpansionSpec::taylor(2), w)
        }
    };
    let spec = ModelSpec::stack(
        &[m, 1],
        &HeadSpec::new(
            exp,
            ReconciliationSpec::Identity {},
            RemainderSpec::Constant { c: vec![svm.bias] },
        ),
    );
    Ok((spec, w))
}

/// Per-class, per-feature Gaussians fitted by maximum likelihood.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianNb {
    pub priors: Vec<f64>,
    /// `(mean, std)` per class and feature.
    pub stats: Vec<Vec<(f64, f64)>>,
}

/// Lower bound on fitted standard deviations.
const MIN_STD: f64 = 1e-6;

impl GaussianNb {
    pub fn fit(data: &Dataset, classes: usize) -> Result<Self> {
        let m = data.in_dim();
        let labels = data.labels();
        let mut stats = Vec::with_capacity(classes);
        let mut priors = Vec::with_capacity(classes);
        for c in 0..classes {
            let rows: Vec<&Vec<f64>> = data
                .x
                .iter()
                .zip(&labels)
                .filter(|(_, &l)| l == c)
                .map(|(x, _)| x)
                .collect();
            if rows.is_empty() {
                return config(format!("class {c} has no training rows"));
            }
            let n = rows.len() as f64;
            priors.push(n / data.len() as f64);
            stats.push(
                (0..m)
                    .map(|j| {
                        let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
                        let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
                        (mean, var.sqrt().max(MIN_STD))
                    })
                    .collect(),
            );
        }
        Ok(Self { priors, stats })
    }
}

/// One single-layer model per class scoring `Σ_i log p(x_i | y)`.
#[derive(Clone, Debug)]
pub struct NaiveBayesRpn {
    pub models: Vec<Model>,
    pub log_priors: Vec<f64>,
}

impl NaiveBayesRpn {
    pub fn scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.models
            .iter()
            .zip(&self.log_priors)
            .map(|(m, lp)| Ok(m.predict(&[], x)?[0] + lp))
            .collect()
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(crate::train::argmax(&self.scores(x)?))
    }
}

pub fn naive_bayes_config(nb: &GaussianNb) -> Vec<ModelSpec> {
    nb.stats
        .iter()
        .map(|feats| {
            let distributions = feats
                .iter()
                .map(|&(mean, std)| Distribution::Gaussian { mean, std })
                .collect();
            ModelSpec::stack(
                &[feats.len(), 1],
                &HeadSpec::new(
                    ExpansionKind::NaiveProb {
                        distributions,
                        per_feature: true,
                    }
                    .into(),
                    ReconciliationSpec::Constant { value: 1.0, eye: false },
                    RemainderSpec::Zero {},
                ),
            )
        })
        .collect()
}

pub fn naive_bayes_rpn(nb: &GaussianNb) -> Result<NaiveBayesRpn> {
    Ok(NaiveBayesRpn {
        models: naive_bayes_config(nb).iter().map(Model::build).collect::<Result<_>>()?,
        log_priors: nb.priors.iter().map(|p| p.ln()).collect(),
    })
}

/// Bayesian-network-style scorer: a weighted sum of multivariate normal
/// log-likelihoods over every feature subset of size at most `d`.
pub fn bayesnet_config(m: usize, d: usize, distributions: Option<Vec<Mvn>>) -> ModelSpec {
    ModelSpec::stack(
        &[m, 1],
        &HeadSpec::new(
            ExpansionKind::CombinatorialProb { d, distributions }.into(),
            ReconciliationSpec::Identity {},
            RemainderSpec::Zero {},
        ),
    )
}

/// The `k` largest positive subset coefficients of a trained
/// [`bayesnet_config`] model, largest first. Ties keep subset order.
pub fn top_k_subsets(m: usize, d: usize, weights: &[f64], k: usize) -> Result<Vec<(Vec<usize>, f64)>> {
    let all: Vec<Vec<usize>> = (1..=d).flat_map(|s| subsets(m, s)).collect();
    if all.len() != weights.len() {
        return shape(format!("{} subsets but {} weights", all.len(), weights.len()));
    }
    let mut pairs: Vec<(Vec<usize>, f64)> = all
        .into_iter()
        .zip(weights.iter().copied())
        .filter(|(_, w)| *w > 0.0)
        .collect();
    pairs.sort_by(|a, b| b.1.total_cmp(&a.1));
    pairs.truncate(k);
    Ok(pairs)
}

/// Reference implementations, written independently of the model module.
#[derive(Clone, Debug, PartialEq)]
pub enum ReferenceModel {
    /// Weight matrices `n_k x n_{k-1}`, row-major; `activation` between
    /// layers when set.
    Mlp {
        weights: Vec<(usize, usize, Vec<f64>)>,
        sigmoid: bool,
    },
    /// One KAN layer: `y_j = Σ_i Σ_b c[j][i][b] B_b(x_i) + silu(Σ_i x_i base[i][j])`.
    KanLayer {
        t: usize,
        degree: usize,
        range: [f64; 2],
        coef: Vec<Vec<Vec<f64>>>,
        base: Vec<Vec<f64>>,
    },
    Ksvm(KernelSvm),
    NaiveBayes(GaussianNb),
}

fn ref_sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn ref_silu(v: f64) -> f64 {
    v / (1.0 + (-v).exp())
}

/// Cox-de Boor recursion on the uniform knot vector that extends `d`
/// intervals past each end of `[lo, hi]`.
fn ref_bspline(x: f64, t: usize, degree: usize, lo: f64, hi: f64) -> Vec<f64> {
    let h = (hi - lo) / t as f64;
    let knot = |j: usize| lo + (j as f64 - degree as f64) * h;
    let count0 = t + 2 * degree;
    let mut b: Vec<f64> = (0..count0)
        .map(|j| if knot(j) <= x && x < knot(j + 1) { 1.0 } else { 0.0 })
        .collect();
    for p in 1..=degree {
        b = (0..count0 - p)
            .map(|j| {
                let left = (x - knot(j)) / (knot(j + p) - knot(j)) * b[j];
                let right = (knot(j + p + 1) - x) / (knot(j + p + 1) - knot(j + 1)) * b[j + 1];
                left + right
            })
            .collect();
    }
    b
}

fn ref_gaussian_pdf(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    (-0.5 * z * z).exp() / (std * (2.0 * std::f64::consts::PI).sqrt())
}

impl ReferenceModel {
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        match self {
            ReferenceModel::Mlp { weights, sigmoid } => {
                let mut h = x.to_vec();
                for (k, (rows, cols, w)) in weights.iter().enumerate() {
                    if k > 0 && *sigmoid {
                        h = h.iter().map(|&v| ref_sigmoid(v)).collect();
                    }
                    h = (0..*rows)
                        .map(|r| (0..*cols).map(|c| w[r * cols + c] * h[c]).sum())
                        .collect();
                }
                h
            }
            ReferenceModel::KanLayer {
                t,
                degree,
                range,
                coef,
                base,
            } => {
                let basis: Vec<Vec<f64>> = x
                    .iter()
                    .map(|&v| ref_bspline(v, *t, *degree, range[0], range[1]))
                    .collect();
                (0..coef.len())
                    .map(|j| {
                        let spline: f64 = (0..x.len())
                            .map(|i| coef[j][i].iter().zip(&basis[i]).map(|(c, b)| c * b).sum::<f64>())
                            .sum();
                        let lin: f64 = (0..x.len()).map(|i| x[i] * base[i][j]).sum();
                        spline + ref_silu(lin)
                    })
                    .collect()
            }
            ReferenceModel::Ksvm(svm) => vec![svm.decision(x)],
            ReferenceModel::NaiveBayes(nb) => nb
                .stats
                .iter()
                .zip(&nb.priors)
                .map(|(feats, prior)| {
                    prior
                        * x.iter()
                            .zip(feats)
                            .map(|(&v, &(mu, sd))| ref_gaussian_pdf(v, mu, sd))
                            .product::<f64>()
                })
                .collect(),
        }
    }

    /// The MLP reference for a [`mlp_config`] model and its parameters.
    pub fn mlp_from(model: &Model, params: &[f64], sigmoid: bool) -> Self {
        let weights = layer_weights(model, params)
            .into_iter()
            .zip(model.layers())
            .map(|((w, _), l)| (l.out_dim(), l.in_dim(), w))
            .collect();
        ReferenceModel::Mlp { weights, sigmoid }
    }

    /// The KAN reference for the first layer of a [`kan_config`] model.
    pub fn kan_from(model: &Model, params: &[f64], t: usize, degree: usize, range: [f64; 2]) -> Self {
        let layer = &model.layers()[0];
        let (m, n) = (layer.in_dim(), layer.out_dim());
        let nb = t + degree;
        let (w, rem) = layer_weights(model, params).swap_remove(0);
        let dd = m * nb;
        let coef = (0..n)
            .map(|j| {
                (0..m)
                    .map(|i| (0..nb).map(|b| w[j * dd + b * m + i]).collect())
                    .collect()
            })
            .collect();
        let base = (0..m).map(|i| rem[i * n..(i + 1) * n].to_vec()).collect();
        ReferenceModel::KanLayer {
            t,
            degree,
            range,
            coef,
            base,
        }
    }
}

/// One line of an equivalence report.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct EquivResult {
    pub target: &'static str,
    pub measure: &'static str,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
}

fn diff_result(target: &'static str, value: f64, threshold: f64) -> EquivResult {
    EquivResult {
        target,
        measure: "max_abs_diff",
        value,
        threshold,
        passed: value < threshold,
    }
}

fn agreement_result(target: &'static str, value: f64) -> EquivResult {
    EquivResult {
        target,
        measure: "argmax_agreement",
        value,
        threshold: 1.0,
        passed: value == 1.0,
    }
}

/// MLP `[2,3,1]` with sigmoid against the reference, over `draws` random
/// weight draws with ten inputs each.
pub fn equiv_mlp(draws: usize, seed: u64) -> Result<EquivResult> {
    let model = Model::build(&mlp_config(&[2, 3, 1], Processor::Sigmoid))?;
    let mut rng = Rng::new(seed);
    let mut worst = 0.0f64;
    for _ in 0..draws {
        let p = model.init_params(&mut rng);
        let reference = ReferenceModel::mlp_from(&model, &p, true);
        for _ in 0..10 {
            let x = [2.0 * rng.normal(), 2.0 * rng.normal()];
            let a = model.predict(&p, &x)?;
            worst = worst.max((a[0] - reference.forward(&x)[0]).abs());
        }
    }
    Ok(diff_result("mlp", worst, 1e-12))
}

/// One KAN layer `2 -> 3` against the reference on random weights.
pub fn equiv_kan(draws: usize, seed: u64) -> Result<EquivResult> {
    let (t, d, range) = (5, 3, [-1.0, 1.0]);
    let model = Model::build(&kan_config(&[2, 3], t, d, range))?;
    let mut rng = Rng::new(seed);
    let mut worst = 0.0f64;
    for _ in 0..draws {
        let p = model.init_params(&mut rng);
        let reference = ReferenceModel::kan_from(&model, &p, t, d, range);
        for _ in 0..10 {
            let x = [rng.uniform_in(-1.0, 1.0), rng.uniform_in(-1.0, 1.0)];
            let a = model.predict(&p, &x)?;
            for (u, v) in a.iter().zip(reference.forward(&x)) {
                worst = worst.max((u - v).abs());
            }
        }
    }
    Ok(diff_result("kan", worst, 1e-10))
}

/// `⟨φ(a), φ(b)⟩ = (aᵀb)²` for the quadratic feature map on random pairs.
pub fn equiv_kernel(pairs: usize, seed: u64) -> EquivResult {
    let mut rng = Rng::new(seed);
    let mut worst = 0.0f64;
    for _ in 0..pairs {
        let a = [rng.normal(), rng.normal()];
        let b = [rng.normal(), rng.normal()];
        let (pa, pb) = (quadratic_feature_map(a), quadratic_feature_map(b));
        let lhs: f64 = pa.iter().zip(&pb).map(|(x, y)| x * y).sum();
        worst = worst.max((lhs - Kernel::Quadratic.eval(&a, &b)).abs());
    }
    diff_result("kernel_map", worst, 1e-12)
}

/// A quadratic-kernel perceptron on a separable ring-shaped toy set; sign
/// agreement between the model and the dual-form reference on fresh
/// points.
pub fn equiv_ksvm(points: usize, seed: u64) -> Result<EquivResult> {
    let mut rng = Rng::new(seed);
    let mut sample = |n: usize| {
        let mut x = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        while x.len() < n {
            let p = vec![rng.uniform_in(-2.0, 2.0), rng.uniform_in(-2.0, 2.0)];
            let r2 = p[0] * p[0] + p[1] * p[1];
            // keep a margin around the circle r = 1.2
            if (r2 - 1.44).abs() < 0.3 {
                continue;
            }
            y.push(vec![if r2 < 1.44 { 1.0 } else { -1.0 }]);
            x.push(p);
        }
        Dataset { x, y }
    };
    let train = sample(100);
    let test = sample(points);
    let svm = KernelSvm::train_perceptron(Kernel::Quadratic, &train, 1000);
    let (spec, w) = ksvm_config(&svm)?;
    let model = Model::build(&spec)?;
    let mut agree = 0;
    for x in &test.x {
        let a = model.predict(&w, x)?[0];
        if (a > 0.0) == (svm.decision(x) > 0.0) {
            agree += 1;
        }
    }
    Ok(agreement_result("ksvm", agree as f64 / points as f64))
}

/// Synthetic three-class Gaussian data with four features.
pub fn gaussian_classes(n: usize, rng: &mut Rng) -> Dataset {
    let means = [[0.0, 1.0, -1.0, 0.5], [1.0, -0.5, 0.0, 1.5], [-1.0, 0.0, 1.0, -0.5]];
    let stds = [[1.0, 0.7, 1.2, 0.9], [0.8, 1.1, 0.6, 1.0], [1.3, 0.9, 1.0, 0.7]];
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let c = rng.below(3);
        x.push((0..4).map(|j| means[c][j] + stds[c][j] * rng.normal()).collect());
        y.push(vec![c as f64]);
    }
    Dataset { x, y }
}

/// Naive Bayes fitted on 500 synthetic points; argmax agreement with the
/// brute-force product-of-densities oracle on `points` fresh ones.
pub fn equiv_naive_bayes(points: usize, seed: u64) -> Result<EquivResult> {
    let mut rng = Rng::new(seed);
    let train = gaussian_classes(500, &mut rng);
    let test = gaussian_classes(points, &mut rng);
    let nb = GaussianNb::fit(&train, 3)?;
    let rpn = naive_bayes_rpn(&nb)?;
    let oracle = ReferenceModel::NaiveBayes(nb);
    let mut agree = 0;
    for x in &test.x {
        if rpn.predict(x)? == crate::train::argmax(&oracle.forward(x)) {
            agree += 1;
        }
    }
    Ok(agreement_result("naive_bayes", agree as f64 / points as f64))
}

pub const EQUIV_TARGETS: [&str; 5] = ["mlp", "kan", "kernel", "ksvm", "nb"];

pub fn equiv(target: &str, seed: u64) -> Result<EquivResult> {
    match target {
        "mlp" => equiv_mlp(50, seed),
        "kan" => equiv_kan(50, seed),
        "kernel" => Ok(equiv_kernel(1000, seed)),
        "ksvm" => equiv_ksvm(500, seed),
        "nb" => equiv_naive_bayes(500, seed),
        other => config(format!(
            "unknown equivalence target {other:?}; expected one of {EQUIV_TARGETS:?}"
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mlp_matches_reference() {
        let spec = mlp_config(&[2, 3, 1], Processor::Sigmoid);
        let model = Model::build(&spec).unwrap();
        assert_eq!(model.param_count(), 2 * 3 + 3);
        let mut rng = Rng::new(1);
        let p = model.init_params(&mut rng);
        let reference = ReferenceModel::mlp_from(&model, &p, true);
        for _ in 0..20 {
            let x = [rng.normal(), rng.normal()];
            let a = model.predict(&p, &x).unwrap();
            let b = reference.forward(&x);
            assert!((a[0] - b[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_mlp_is_a_matrix_chain() {
        let model = Model::build(&mlp_config(&[3, 2, 2], Processor::None)).unwrap();
        let p = model.init_params(&mut Rng::new(2));
        let w = layer_weights(&model, &p);
        let x = [0.5, -1.0, 2.0];
        let h: Vec<f64> = (0..2).map(|r| (0..3).map(|c| w[0].0[r * 3 + c] * x[c]).sum()).collect();
        let y: Vec<f64> = (0..2).map(|r| (0..2).map(|c| w[1].0[r * 2 + c] * h[c]).sum()).collect();
        let out = model.predict(&p, &x).unwrap();
        assert!(out.iter().zip(&y).all(|(a, b)| (a - b).abs() < 1e-14));
    }

    #[test]
    fn kan_matches_reference() {
        let (t, d, range) = (5, 3, [-1.0, 1.0]);
        let model = Model::build(&kan_config(&[2, 2, 1], t, d, range)).unwrap();
        assert_eq!(model.layers()[0].heads()[0].expansion_dim(), 2 * (t + d));
        let mut rng = Rng::new(3);
        let p = model.init_params(&mut rng);
        let first = Model::build(&kan_config(&[2, 2], t, d, range)).unwrap();
        let p1 = p[..first.param_len()].to_vec();
        let reference = ReferenceModel::kan_from(&first, &p1, t, d, range);
        for _ in 0..50 {
            let x = [rng.uniform_in(-1.0, 1.0), rng.uniform_in(-1.0, 1.0)];
            let a = first.predict(&p1, &x).unwrap();
            let b = reference.forward(&x);
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() < 1e-10, "{u} vs {v}");
            }
        }
        // zero spline weights leave the SiLU-linear path
        let mut p0 = p1.clone();
        let wl = first.layers()[0].heads()[0].reconciler().storage_len();
        p0[..wl].iter_mut().for_each(|v| *v = 0.0);
        let x = [0.3, -0.7];
        let out = first.predict(&p0, &x).unwrap();
        let rem = &p1[wl..];
        for j in 0..2 {
            assert!((out[j] - ref_silu(x[0] * rem[j] + x[1] * rem[2 + j])).abs() < 1e-14);
        }
    }

    #[test]
    fn quadratic_kernel_identity() {
        let mut rng = Rng::new(4);
        for _ in 0..100 {
            let a = [rng.normal(), rng.normal()];
            let b = [rng.normal(), rng.normal()];
            let (pa, pb) = (quadratic_feature_map(a), quadratic_feature_map(b));
            let lhs: f64 = pa.iter().zip(&pb).map(|(x, y)| x * y).sum();
            assert!((lhs - Kernel::Quadratic.eval(&a, &b)).abs() < 1e-12 * (1.0 + lhs.abs()));
        }
    }

    #[test]
    fn ksvm_matches_dual_form() {
        let mut rng = Rng::new(5);
        for kernel in [Kernel::Linear, Kernel::Quadratic] {
            let svm = KernelSvm {
                kernel,
                support: (0..6).map(|_| vec![rng.normal(), rng.normal(), rng.normal()]).collect(),
                coef: (0..6).map(|_| rng.normal()).collect(),
                bias: 0.4,
            };
            let (spec, w) = ksvm_config(&svm).unwrap();
            let model = Model::build(&spec).unwrap();
            for _ in 0..20 {
                let x = [rng.normal(), rng.normal(), rng.normal()];
                let a = model.predict(&w, &x).unwrap()[0];
                assert!((a - svm.decision(&x)).abs() < 1e-12);
            }
        }
        let zero = KernelSvm {
            kernel: Kernel::Linear,
            support: vec![vec![1.0, 2.0]],
            coef: vec![0.0],
            bias: -0.5,
        };
        let (spec, w) = ksvm_config(&zero).unwrap();
        let model = Model::build(&spec).unwrap();
        assert_eq!(model.predict(&w, &[9.0, -3.0]).unwrap(), vec![-0.5]);
    }

    #[test]
    fn single_class_bayes_always_wins() {
        let data = Dataset::new(vec![vec![0.0, 1.0], vec![1.0, 2.0]], vec![vec![0.0]; 2]).unwrap();
        let nb = GaussianNb::fit(&data, 1).unwrap();
        let rpn = naive_bayes_rpn(&nb).unwrap();
        assert_eq!(rpn.predict(&[5.0, -5.0]).unwrap(), 0);
    }

    #[test]
    fn bayesnet_readout() {
        let model = Model::build(&bayesnet_config(3, 2, None)).unwrap();
        assert_eq!(model.param_count(), 6);
        assert_eq!(model.predict(&[0.0; 6], &[0.1, 0.2, 0.3]).unwrap(), vec![0.0]);
        let top = top_k_subsets(3, 2, &[0.1, -1.0, 0.5, 2.0, 0.0, 0.5], 3).unwrap();
        assert_eq!(top, vec![(vec![0, 1], 2.0), (vec![2], 0.5), (vec![1, 2], 0.5)]);
    }

    #[test]
    fn harness_targets_pass() {
        for t in EQUIV_TARGETS {
            let r = equiv(t, 7).unwrap();
            assert!(r.passed, "{r:?}");
        }
        assert!(equiv("svm", 0).is_err());
    }

    #[test]
    fn reference_bspline_partition_of_unity() {
        for x in [-0.99, -0.3, 0.0, 0.42, 0.999] {
            let b = ref_bspline(x, 5, 3, -1.0, 1.0);
            assert_eq!(b.len(), 8);
            assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
