//! Data expansion functions `κ: R^m -> R^D`.
//!
//! Every kind lays out its output basis-major: all `m` features for the
//! first basis function, then all `m` for the second, and so on. Fourier
//! interleaves a cosine block and a sine block per harmonic.

use serde::{Deserialize, Serialize};

use crate::error::{config, shape, Error, Result};
use crate::prob::{Distribution, Mvn};
use crate::process::Processor;
use crate::tensor::kron_vec;

/// Arc-function derivatives are taken at `x` clipped this far inside the
/// boundary so they stay finite.
pub const ARC_CLIP: f64 = 1e-9;

const MAX_COMBINATORIAL_PROB_ORDER: usize = 3;

fn one() -> f64 {
    1.0
}

fn unit_range() -> [f64; 2] {
    [-1.0, 1.0]
}

fn default_centers() -> usize {
    5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpansionSpec {
    #[serde(flatten)]
    pub kind: ExpansionKind,
    #[serde(default, skip_serializing_if = "Processor::is_none")]
    pub pre: Processor,
    #[serde(default, skip_serializing_if = "Processor::is_none")]
    pub post: Processor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExpansionKind {
    Identity {},
    Reciprocal {},
    /// `scale * x`, or `scale * x C_post`, or `scale * (C_pre xᵀ)ᵀ`.
    Linear {
        #[serde(default = "one")]
        scale: f64,
        #[serde(default)]
        c_pre: Option<Vec<Vec<f64>>>,
        #[serde(default)]
        c_post: Option<Vec<Vec<f64>>>,
    },
    Taylor {
        d: usize,
    },
    Fourier {
        period: f64,
        harmonics: usize,
    },
    Bspline {
        t: usize,
        d: usize,
        #[serde(default = "unit_range")]
        range: [f64; 2],
    },
    Chebyshev {
        d: usize,
    },
    Jacobi {
        d: usize,
        alpha: f64,
        beta: f64,
    },
    Trig {},
    ArcTrig {},
    Hyperbolic {},
    /// `[arccosh, sinh, tanh]`, defined for `x >= 1`.
    ArcHyperbolic {},
    GaussianRbf {
        /// Explicit centers; when absent, `count` evenly spaced over `range`.
        #[serde(default)]
        centers: Option<Vec<f64>>,
        #[serde(default = "default_centers")]
        count: usize,
        #[serde(default = "unit_range")]
        range: [f64; 2],
        #[serde(default = "one")]
        epsilon: f64,
    },
    InverseQuadraticRbf {
        #[serde(default)]
        centers: Option<Vec<f64>>,
        #[serde(default = "default_centers")]
        count: usize,
        #[serde(default = "unit_range")]
        range: [f64; 2],
        #[serde(default = "one")]
        epsilon: f64,
    },
    Combinatorial {
        d: usize,
    },
    /// Log-likelihood of each feature under each distribution. With
    /// `per_feature`, distribution `i` scores feature `i` only.
    NaiveProb {
        distributions: Vec<Distribution>,
        #[serde(default)]
        per_feature: bool,
    },
    /// Multivariate normal log-likelihood of every feature subset up to
    /// size `d`; entry `i - 1` of `distributions` scores size-`i` subsets.
    CombinatorialProb {
        d: usize,
        #[serde(default)]
        distributions: Option<Vec<Mvn>>,
    },
    Nested {
        children: Vec<ExpansionSpec>,
    },
    Extended {
        children: Vec<ExpansionSpec>,
    },
}

impl From<ExpansionKind> for ExpansionSpec {
    fn from(kind: ExpansionKind) -> Self {
        Self {
            kind,
            pre: Processor::None,
            post: Processor::None,
        }
    }
}

impl ExpansionSpec {
    pub fn new(kind: ExpansionKind) -> Self {
        kind.into()
    }

    pub fn with_pre(mut self, p: Processor) -> Self {
        self.pre = p;
        self
    }

    pub fn with_post(mut self, p: Processor) -> Self {
        self.post = p;
        self
    }

    pub fn identity() -> Self {
        ExpansionKind::Identity {}.into()
    }

    pub fn taylor(d: usize) -> Self {
        ExpansionKind::Taylor { d }.into()
    }

    pub fn bspline(t: usize, d: usize) -> Self {
        ExpansionKind::Bspline {
            t,
            d,
            range: unit_range(),
        }
        .into()
    }

    pub fn bspline_on(t: usize, d: usize, lo: f64, hi: f64) -> Self {
        ExpansionKind::Bspline { t, d, range: [lo, hi] }.into()
    }

    pub fn chebyshev(d: usize) -> Self {
        ExpansionKind::Chebyshev { d }.into()
    }

    pub fn fourier(period: f64, harmonics: usize) -> Self {
        ExpansionKind::Fourier { period, harmonics }.into()
    }

    pub fn combinatorial(d: usize) -> Self {
        ExpansionKind::Combinatorial { d }.into()
    }

    pub fn nested(children: Vec<ExpansionSpec>) -> Self {
        ExpansionKind::Nested { children }.into()
    }

    pub fn extended(children: Vec<ExpansionSpec>) -> Self {
        ExpansionKind::Extended { children }.into()
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    /// Output dimension for input dimension `m`; also validates the spec.
    pub fn out_dim(&self, m: usize) -> Result<usize> {
        if m == 0 {
            return config("expansion input dimension must be positive");
        }
        if let ExpansionKind::NaiveProb { distributions, .. } = &self.kind {
            if !self.pre.is_positive() {
                if let Some(d) = distributions.iter().find(|d| d.needs_positive_input()) {
                    return config(format!("{d:?} needs a positive pre-processor (softplus or sigmoid)"));
                }
            }
        }
        self.kind.out_dim(m)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let u = self.pre.apply(x);
        let v = self.kind.eval(&u)?;
        if self.post.is_none() {
            return Ok(v);
        }
        Ok(self.post.apply(&v))
    }

    /// `Jᵀ grad` where `J` is the Jacobian of [`forward`](Self::forward) at `x`.
    pub fn vjp(&self, x: &[f64], grad: &[f64]) -> Result<Vec<f64>> {
        let u = self.pre.apply(x);
        let g_v = if self.post.is_none() {
            grad.to_vec()
        } else {
            let v = self.kind.eval(&u)?;
            self.post.vjp(&v, grad)
        };
        let g_u = self.kind.back(&u, &g_v)?;
        Ok(self.pre.vjp(x, &g_u))
    }
}

impl ExpansionKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExpansionKind::Identity {} => "identity",
            ExpansionKind::Reciprocal {} => "reciprocal",
            ExpansionKind::Linear { .. } => "linear",
            ExpansionKind::Taylor { .. } => "taylor",
            ExpansionKind::Fourier { .. } => "fourier",
            ExpansionKind::Bspline { .. } => "bspline",
            ExpansionKind::Chebyshev { .. } => "chebyshev",
            ExpansionKind::Jacobi { .. } => "jacobi",
            ExpansionKind::Trig {} => "trig",
            ExpansionKind::ArcTrig {} => "arc_trig",
            ExpansionKind::Hyperbolic {} => "hyperbolic",
            ExpansionKind::ArcHyperbolic {} => "arc_hyperbolic",
            ExpansionKind::GaussianRbf { .. } => "gaussian_rbf",
            ExpansionKind::InverseQuadraticRbf { .. } => "inverse_quadratic_rbf",
            ExpansionKind::Combinatorial { .. } => "combinatorial",
            ExpansionKind::NaiveProb { .. } => "naive_prob",
            ExpansionKind::CombinatorialProb { .. } => "combinatorial_prob",
            ExpansionKind::Nested { .. } => "nested",
            ExpansionKind::Extended { .. } => "extended",
        }
    }

    fn out_dim(&self, m: usize) -> Result<usize> {
        use ExpansionKind::*;
        let need_order = |d: usize| {
            if d == 0 {
                config(format!("{} order d must be at least 1", self.name()))
            } else {
                Ok(())
            }
        };
        Ok(match self {
            Identity {} | Reciprocal {} => m,
            Linear { c_pre, c_post, .. } => {
                if c_pre.is_some() && c_post.is_some() {
                    return config("linear expansion takes at most one of c_pre, c_post");
                }
                if let Some(c) = c_pre.as_ref().or(c_post.as_ref()) {
                    if c.len() != m || c.iter().any(|r| r.len() != m) {
                        return config(format!("linear expansion matrix must be {m}x{m}"));
                    }
                }
                m
            }
            Taylor { d } => {
                need_order(*d)?;
                (1..=*d as u32).map(|i| m.pow(i)).sum()
            }
            Fourier { period, harmonics } => {
                if !(*period > 0.0) || *harmonics == 0 {
                    return config("fourier needs period > 0 and harmonics >= 1");
                }
                2 * m * harmonics
            }
            Bspline { t, d, range } => {
                if *t == 0 || !(range[1] > range[0]) {
                    return config("bspline needs t >= 1 and range hi > lo");
                }
                m * (t + d)
            }
            Chebyshev { d } => {
                need_order(*d)?;
                m * d
            }
            Jacobi { d, alpha, beta } => {
                need_order(*d)?;
                if !(*alpha > -1.0 && *beta > -1.0) {
                    return config("jacobi needs alpha, beta > -1");
                }
                m * d
            }
            Trig {} | ArcTrig {} | Hyperbolic {} | ArcHyperbolic {} => 3 * m,
            GaussianRbf { epsilon, .. } | InverseQuadraticRbf { epsilon, .. } => {
                if !(*epsilon > 0.0) {
                    return config("rbf width epsilon must be positive");
                }
                let c = self.rbf_centers();
                if c.is_empty() {
                    return config("rbf needs at least one center");
                }
                m * c.len()
            }
            Combinatorial { d } => {
                need_order(*d)?;
                if *d > m {
                    return config(format!("combinatorial order {d} exceeds input dim {m}"));
                }
                (1..=*d).map(|i| i * binomial(m, i)).sum()
            }
            NaiveProb {
                distributions,
                per_feature,
            } => {
                if distributions.is_empty() {
                    return config("naive_prob needs at least one distribution");
                }
                for dist in distributions {
                    dist.validate()?;
                }
                if *per_feature {
                    if distributions.len() != m {
                        return config(format!(
                            "per-feature naive_prob needs {m} distributions, got {}",
                            distributions.len()
                        ));
                    }
                    m
                } else {
                    m * distributions.len()
                }
            }
            CombinatorialProb { d, distributions } => {
                need_order(*d)?;
                if *d > MAX_COMBINATORIAL_PROB_ORDER || *d > m {
                    return config(format!("combinatorial_prob order must be at most min(3, m), got {d}"));
                }
                if let Some(ds) = distributions {
                    if ds.len() != *d {
                        return config(format!("combinatorial_prob needs {d} distributions"));
                    }
                    for (i, mvn) in ds.iter().enumerate() {
                        if mvn.dim() != i + 1 {
                            return config(format!(
                                "combinatorial_prob distribution {i} must have dimension {}",
                                i + 1
                            ));
                        }
                        mvn.cholesky()?;
                    }
                }
                (1..=*d).map(|i| binomial(m, i)).sum()
            }
            Nested { children } => {
                if children.is_empty() {
                    return config("nested expansion needs children");
                }
                let mut dim = m;
                for c in children {
                    dim = c.out_dim(dim)?;
                }
                dim
            }
            Extended { children } => {
                if children.is_empty() {
                    return config("extended expansion needs children");
                }
                let mut total = 0;
                for c in children {
                    total += c.out_dim(m)?;
                }
                total
            }
        })
    }

    fn rbf_centers(&self) -> Vec<f64> {
        match self {
            ExpansionKind::GaussianRbf {
                centers, count, range, ..
            }
            | ExpansionKind::InverseQuadraticRbf {
                centers, count, range, ..
            } => match centers {
                Some(c) => c.clone(),
                None => linspace(range[0], range[1], *count),
            },
            _ => Vec::new(),
        }
    }

    fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        use ExpansionKind::*;
        let m = x.len();
        match self {
            Identity {} => Ok(x.to_vec()),
            Reciprocal {} => {
                check(x, "reciprocal", |v| v != 0.0)?;
                Ok(x.iter().map(|v| 1.0 / v).collect())
            }
            Linear { scale, c_pre, c_post } => {
                let y = linear_apply(x, c_pre.as_deref(), c_post.as_deref(), false);
                Ok(y.into_iter().map(|v| scale * v).collect())
            }
            Taylor { d } => {
                let mut out = Vec::with_capacity((1..=*d as u32).map(|i| m.pow(i)).sum());
                out.extend_from_slice(x);
                // each order is x ⊗ (previous order), written in place
                let mut start = 0;
                for _ in 1..*d {
                    let end = out.len();
                    out.resize(end + m * (end - start), 0.0);
                    let (done, next) = out.split_at_mut(end);
                    let prev = &done[start..];
                    for (&a, block) in x.iter().zip(next.chunks_mut(prev.len())) {
                        for (o, &p) in block.iter_mut().zip(prev) {
                            *o = a * p;
                        }
                    }
                    start = end;
                }
                Ok(out)
            }
            Fourier { period, harmonics } => {
                let mut out = Vec::with_capacity(2 * m * harmonics);
                for i in 1..=*harmonics {
                    let w = 2.0 * std::f64::consts::PI * i as f64 / period;
                    out.extend(x.iter().map(|v| (w * v).cos()));
                    out.extend(x.iter().map(|v| (w * v).sin()));
                }
                Ok(out)
            }
            Bspline { t, d, range } => {
                check(x, "bspline", |v| !v.is_nan())?;
                let nb = t + d;
                let mut out = vec![0.0; m * nb];
                for (j, &v) in x.iter().enumerate() {
                    let (vals, _) = bspline_basis(v, *t, *d, range[0], range[1]);
                    for (i, b) in vals.into_iter().enumerate() {
                        out[i * m + j] = b;
                    }
                }
                Ok(out)
            }
            Chebyshev { d } => Ok(basis_major(x, *d, |v| chebyshev(v, *d).0)),
            Jacobi { d, alpha, beta } => Ok(basis_major(x, *d, |v| jacobi(v, *d, *alpha, *beta)[1..].to_vec())),
            Trig {} => Ok(triple(x, f64::cos, f64::sin, f64::tan)),
            ArcTrig {} => {
                check(x, "arc_trig", |v| (-1.0..=1.0).contains(&v))?;
                Ok(triple(x, f64::acos, f64::asin, f64::atan))
            }
            Hyperbolic {} => Ok(triple(x, f64::cosh, f64::sinh, f64::tanh)),
            ArcHyperbolic {} => {
                check(x, "arc_hyperbolic", |v| v >= 1.0)?;
                Ok(triple(x, f64::acosh, f64::sinh, f64::tanh))
            }
            GaussianRbf { epsilon, .. } => {
                let c = self.rbf_centers();
                Ok(basis_major(x, c.len(), |v| {
                    c.iter().map(|ci| (-(epsilon * (v - ci)).powi(2)).exp()).collect()
                }))
            }
            InverseQuadraticRbf { epsilon, .. } => {
                let c = self.rbf_centers();
                Ok(basis_major(x, c.len(), |v| {
                    c.iter().map(|ci| 1.0 / (1.0 + (epsilon * (v - ci)).powi(2))).collect()
                }))
            }
            Combinatorial { d } => {
                let mut out = Vec::new();
                for k in 1..=*d {
                    for s in subsets(m, k) {
                        out.extend(s.iter().map(|&i| x[i]));
                    }
                }
                Ok(out)
            }
            NaiveProb {
                distributions,
                per_feature,
            } => {
                if *per_feature {
                    if distributions.len() != m {
                        return shape("per-feature naive_prob input length differs from distributions");
                    }
                    Ok(x.iter().zip(distributions).map(|(&v, dist)| dist.log_pdf(v)).collect())
                } else {
                    let mut out = Vec::with_capacity(m * distributions.len());
                    for dist in distributions {
                        out.extend(x.iter().map(|&v| dist.log_pdf(v)));
                    }
                    Ok(out)
                }
            }
            CombinatorialProb { d, distributions } => {
                let mut out = Vec::new();
                for k in 1..=*d {
                    let mvn = mvn_for(distributions.as_deref(), k);
                    let chol = mvn.cholesky()?;
                    for s in subsets(m, k) {
                        let xs: Vec<f64> = s.iter().map(|&i| x[i]).collect();
                        out.push(mvn.log_pdf_grad(&chol, &xs).0);
                    }
                }
                Ok(out)
            }
            Nested { children } => {
                let mut h = x.to_vec();
                for c in children {
                    h = c.forward(&h)?;
                }
                Ok(h)
            }
            Extended { children } => {
                let mut out = Vec::new();
                for c in children {
                    out.extend(c.forward(x)?);
                }
                Ok(out)
            }
        }
    }

    fn back(&self, x: &[f64], g: &[f64]) -> Result<Vec<f64>> {
        use ExpansionKind::*;
        let m = x.len();
        let expect = self.out_dim(m)?;
        if g.len() != expect {
            return shape(format!(
                "{} vjp: gradient length {} but output dim {expect}",
                self.name(),
                g.len()
            ));
        }
        let mut gx = vec![0.0; m];
        match self {
            Identity {} => gx.copy_from_slice(g),
            Reciprocal {} => {
                check(x, "reciprocal", |v| v != 0.0)?;
                for j in 0..m {
                    gx[j] = -g[j] / (x[j] * x[j]);
                }
            }
            Linear { scale, c_pre, c_post } => {
                let y = linear_apply(g, c_pre.as_deref(), c_post.as_deref(), true);
                for j in 0..m {
                    gx[j] = scale * y[j];
                }
            }
            Taylor { d } => {
                // powers[k] = P_{k+1}
                let mut powers = vec![x.to_vec()];
                for _ in 1..*d {
                    let next = kron_vec(x, powers.last().unwrap());
                    powers.push(next);
                }
                let mut offset = expect;
                let mut carry: Vec<f64> = Vec::new();
                for k in (1..=*d).rev() {
                    let len = powers[k - 1].len();
                    offset -= len;
                    let mut adj = g[offset..offset + len].to_vec();
                    if !carry.is_empty() {
                        for (a, c) in adj.iter_mut().zip(&carry) {
                            *a += c;
                        }
                    }
                    if k == 1 {
                        for j in 0..m {
                            gx[j] += adj[j];
                        }
                        break;
                    }
                    // P_k = x ⊗ P_{k-1}
                    let prev = &powers[k - 2];
                    let inner = prev.len();
                    let mut next_carry = vec![0.0; inner];
                    for i in 0..m {
                        let block = &adj[i * inner..(i + 1) * inner];
                        gx[i] += block.iter().zip(prev).map(|(a, b)| a * b).sum::<f64>();
                        for (nc, b) in next_carry.iter_mut().zip(block) {
                            *nc += x[i] * b;
                        }
                    }
                    carry = next_carry;
                }
            }
            Fourier { period, harmonics } => {
                for i in 1..=*harmonics {
                    let w = 2.0 * std::f64::consts::PI * i as f64 / period;
                    let base = 2 * m * (i - 1);
                    for j in 0..m {
                        let a = w * x[j];
                        gx[j] += -w * a.sin() * g[base + j] + w * a.cos() * g[base + m + j];
                    }
                }
            }
            Bspline { t, d, range } => {
                check(x, "bspline", |v| !v.is_nan())?;
                for j in 0..m {
                    let (_, dvals) = bspline_basis(x[j], *t, *d, range[0], range[1]);
                    gx[j] = dvals.iter().enumerate().map(|(i, db)| db * g[i * m + j]).sum();
                }
            }
            Chebyshev { d } => {
                for j in 0..m {
                    let (_, dt) = chebyshev(x[j], *d);
                    gx[j] = (0..*d).map(|k| dt[k] * g[k * m + j]).sum();
                }
            }
            Jacobi { d, alpha, beta } => {
                for j in 0..m {
                    // d/dx P_k^(a,b) = (k + a + b + 1)/2 * P_{k-1}^(a+1,b+1)
                    let shifted = jacobi(x[j], d - 1, alpha + 1.0, beta + 1.0);
                    gx[j] = (1..=*d)
                        .map(|k| 0.5 * (k as f64 + alpha + beta + 1.0) * shifted[k - 1] * g[(k - 1) * m + j])
                        .sum();
                }
            }
            Trig {} => {
                for j in 0..m {
                    let v = x[j];
                    let tan = v.tan();
                    gx[j] = -v.sin() * g[j] + v.cos() * g[m + j] + (1.0 + tan * tan) * g[2 * m + j];
                }
            }
            ArcTrig {} => {
                check(x, "arc_trig", |v| (-1.0..=1.0).contains(&v))?;
                for j in 0..m {
                    let v = x[j].clamp(-1.0 + ARC_CLIP, 1.0 - ARC_CLIP);
                    let s = 1.0 / (1.0 - v * v).sqrt();
                    gx[j] = -s * g[j] + s * g[m + j] + g[2 * m + j] / (1.0 + x[j] * x[j]);
                }
            }
            Hyperbolic {} => {
                for j in 0..m {
                    let v = x[j];
                    let th = v.tanh();
                    gx[j] = v.sinh() * g[j] + v.cosh() * g[m + j] + (1.0 - th * th) * g[2 * m + j];
                }
            }
            ArcHyperbolic {} => {
                check(x, "arc_hyperbolic", |v| v >= 1.0)?;
                for j in 0..m {
                    let v = x[j];
                    let c = v.max(1.0 + ARC_CLIP);
                    let th = v.tanh();
                    gx[j] = g[j] / (c * c - 1.0).sqrt() + v.cosh() * g[m + j] + (1.0 - th * th) * g[2 * m + j];
                }
            }
            GaussianRbf { epsilon, .. } => {
                let e2 = epsilon * epsilon;
                for (i, c) in self.rbf_centers().iter().enumerate() {
                    for j in 0..m {
                        let r = x[j] - c;
                        gx[j] += -2.0 * e2 * r * (-e2 * r * r).exp() * g[i * m + j];
                    }
                }
            }
            InverseQuadraticRbf { epsilon, .. } => {
                let e2 = epsilon * epsilon;
                for (i, c) in self.rbf_centers().iter().enumerate() {
                    for j in 0..m {
                        let r = x[j] - c;
                        let q = 1.0 + e2 * r * r;
                        gx[j] += -2.0 * e2 * r / (q * q) * g[i * m + j];
                    }
                }
            }
            Combinatorial { d } => {
                let mut pos = 0;
                for k in 1..=*d {
                    for s in subsets(m, k) {
                        for &i in &s {
                            gx[i] += g[pos];
                            pos += 1;
                        }
                    }
                }
            }
            NaiveProb {
                distributions,
                per_feature,
            } => {
                if *per_feature {
                    for j in 0..m {
                        gx[j] = distributions[j].log_pdf_grad(x[j]).1 * g[j];
                    }
                } else {
                    for (i, dist) in distributions.iter().enumerate() {
                        for j in 0..m {
                            gx[j] += dist.log_pdf_grad(x[j]).1 * g[i * m + j];
                        }
                    }
                }
            }
            CombinatorialProb { d, distributions } => {
                let mut pos = 0;
                for k in 1..=*d {
                    let mvn = mvn_for(distributions.as_deref(), k);
                    let chol = mvn.cholesky()?;
                    for s in subsets(m, k) {
                        let xs: Vec<f64> = s.iter().map(|&i| x[i]).collect();
                        let (_, grad) = mvn.log_pdf_grad(&chol, &xs);
                        for (&i, gi) in s.iter().zip(grad) {
                            gx[i] += gi * g[pos];
                        }
                        pos += 1;
                    }
                }
            }
            Nested { children } => {
                let mut inputs = vec![x.to_vec()];
                for c in &children[..children.len() - 1] {
                    let next = c.forward(inputs.last().unwrap())?;
                    inputs.push(next);
                }
                let mut grad = g.to_vec();
                for (c, input) in children.iter().zip(&inputs).rev() {
                    grad = c.vjp(input, &grad)?;
                }
                gx = grad;
            }
            Extended { children } => {
                let mut offset = 0;
                for c in children {
                    let dim = c.out_dim(m)?;
                    let part = c.vjp(x, &g[offset..offset + dim])?;
                    for (a, b) in gx.iter_mut().zip(part) {
                        *a += b;
                    }
                    offset += dim;
                }
            }
        }
        Ok(gx)
    }
}

fn check(x: &[f64], function: &'static str, ok: impl Fn(f64) -> bool) -> Result<()> {
    match x.iter().position(|&v| !ok(v)) {
        Some(index) => Err(Error::Domain {
            function,
            index,
            value: x[index],
        }),
        None => Ok(()),
    }
}

fn triple(x: &[f64], f: fn(f64) -> f64, g: fn(f64) -> f64, h: fn(f64) -> f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(3 * x.len());
    out.extend(x.iter().map(|&v| f(v)));
    out.extend(x.iter().map(|&v| g(v)));
    out.extend(x.iter().map(|&v| h(v)));
    out
}

/// Lays out `nb` per-feature values basis-major.
fn basis_major(x: &[f64], nb: usize, per: impl Fn(f64) -> Vec<f64>) -> Vec<f64> {
    let m = x.len();
    let mut out = vec![0.0; m * nb];
    for (j, &v) in x.iter().enumerate() {
        for (i, b) in per(v).into_iter().enumerate() {
            out[i * m + j] = b;
        }
    }
    out
}

/// Applies the linear expansion matrix, or its transpose when `adjoint`.
fn linear_apply(x: &[f64], c_pre: Option<&[Vec<f64>]>, c_post: Option<&[Vec<f64>]>, adjoint: bool) -> Vec<f64> {
    let m = x.len();
    // x C_post reads columns; C_pre x reads rows.
    let by_rows = match (c_pre, c_post) {
        (Some(c), _) => Some((c, !adjoint)),
        (None, Some(c)) => Some((c, adjoint)),
        (None, None) => None,
    };
    match by_rows {
        None => x.to_vec(),
        Some((c, true)) => (0..m).map(|i| (0..m).map(|j| c[i][j] * x[j]).sum()).collect(),
        Some((c, false)) => (0..m).map(|j| (0..m).map(|i| x[i] * c[i][j]).sum()).collect(),
    }
}

fn mvn_for(distributions: Option<&[Mvn]>, k: usize) -> Mvn {
    distributions
        .map(|ds| ds[k - 1].clone())
        .unwrap_or_else(|| Mvn::standard(k))
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

/// All `k`-element subsets of `0..m` in lexicographic order.
pub fn subsets(m: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::with_capacity(binomial(m, k));
    if k == 0 || k > m {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let mut i = k;
        while i > 0 && idx[i - 1] == m - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return out;
        }
        idx[i - 1] += 1;
        for p in i..k {
            idx[p] = idx[p - 1] + 1;
        }
    }
}

/// `T_1..T_d` and their derivatives at `x`.
fn chebyshev(x: f64, d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut t = Vec::with_capacity(d);
    let mut dt = Vec::with_capacity(d);
    let (mut t_prev, mut t_cur) = (1.0, x);
    // U_{k-1}, with T_k' = k U_{k-1}
    let (mut u_prev, mut u_cur) = (0.0, 1.0);
    for k in 1..=d {
        t.push(t_cur);
        dt.push(k as f64 * u_cur);
        let t_next = 2.0 * x * t_cur - t_prev;
        let u_next = if k == 1 { 2.0 * x } else { 2.0 * x * u_cur - u_prev };
        t_prev = t_cur;
        t_cur = t_next;
        u_prev = u_cur;
        u_cur = u_next;
    }
    (t, dt)
}

/// `P_0..P_d` of the Jacobi family at `x`.
fn jacobi(x: f64, d: usize, a: f64, b: f64) -> Vec<f64> {
    let mut p = Vec::with_capacity(d + 1);
    p.push(1.0);
    if d == 0 {
        return p;
    }
    p.push((a + 1.0) + (a + b + 2.0) * (x - 1.0) / 2.0);
    for k in 2..=d {
        let k_ = k as f64;
        let s = 2.0 * k_ + a + b;
        let c1 = 2.0 * k_ * (k_ + a + b) * (s - 2.0);
        let c2 = (s - 1.0) * (s * (s - 2.0) * x + a * a - b * b);
        let c3 = 2.0 * (k_ + a - 1.0) * (k_ + b - 1.0) * s;
        let next = (c2 * p[k - 1] - c3 * p[k - 2]) / c1;
        p.push(next);
    }
    p
}

/// Values and derivatives of the `t + d` B-spline bases at `x`.
///
/// Knots are uniform with spacing `(hi - lo) / t`, extended by `d` knots
/// past each end of the range.
pub fn bspline_basis(x: f64, t: usize, d: usize, lo: f64, hi: f64) -> (Vec<f64>, Vec<f64>) {
    let h = (hi - lo) / t as f64;
    let knot = |j: usize| lo + (j as f64 - d as f64) * h;
    let n0 = t + 2 * d;
    let mut level: Vec<f64> = (0..n0)
        .map(|j| if x >= knot(j) && x < knot(j + 1) { 1.0 } else { 0.0 })
        .collect();
    if d == 0 && x == hi {
        level[t - 1] = 1.0;
    }
    let mut below = Vec::new();
    for k in 1..=d {
        let next: Vec<f64> = (0..n0 - k)
            .map(|j| {
                let left = (x - knot(j)) / (knot(j + k) - knot(j)) * level[j];
                let right = (knot(j + k + 1) - x) / (knot(j + k + 1) - knot(j + 1)) * level[j + 1];
                left + right
            })
            .collect();
        below = std::mem::replace(&mut level, next);
    }
    let deriv = if d == 0 {
        vec![0.0; t]
    } else {
        (0..t + d).map(|j| (below[j] - below[j + 1]) / h).collect()
    };
    (level, deriv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prob::Distribution;

    fn close_all(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    fn kind(k: ExpansionKind) -> ExpansionSpec {
        k.into()
    }

    #[test]
    fn out_dim_examples() {
        assert_eq!(ExpansionSpec::taylor(2).out_dim(2).unwrap(), 6);
        assert_eq!(ExpansionSpec::fourier(1.0, 3).out_dim(2).unwrap(), 12);
        assert_eq!(ExpansionSpec::combinatorial(2).out_dim(3).unwrap(), 9);
        let ext = ExpansionSpec::extended(vec![ExpansionSpec::taylor(2), ExpansionSpec::bspline(5, 3)]);
        assert_eq!(ext.out_dim(2).unwrap(), 22);
        let nst = ExpansionSpec::nested(vec![ExpansionSpec::taylor(2), ExpansionSpec::taylor(2)]);
        assert_eq!(nst.out_dim(2).unwrap(), 42);
        let cp = kind(ExpansionKind::CombinatorialProb {
            d: 2,
            distributions: None,
        });
        assert_eq!(cp.out_dim(4).unwrap(), 10);
    }

    #[test]
    fn taylor_examples() {
        let t = ExpansionSpec::taylor(2);
        assert_eq!(t.forward(&[2.0, 3.0]).unwrap(), vec![2.0, 3.0, 4.0, 6.0, 6.0, 9.0]);
        assert_eq!(ExpansionSpec::taylor(3).forward(&[1.0]).unwrap(), vec![1.0; 3]);
        assert!(ExpansionSpec::taylor(3)
            .forward(&[0.0; 3])
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
        assert!(ExpansionSpec::taylor(0).out_dim(2).is_err());
    }

    #[test]
    fn fourier_examples() {
        let f = ExpansionSpec::fourier(1.0, 1);
        assert!(close_all(&f.forward(&[0.25]).unwrap(), &[0.0, 1.0], 1e-15));
        let f = ExpansionSpec::fourier(2.5, 3);
        assert_eq!(f.forward(&[0.0]).unwrap(), vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        let a = f.forward(&[0.37, -1.1]).unwrap();
        let b = f.forward(&[0.37 + 2.5, -1.1 + 2.5]).unwrap();
        assert!(close_all(&a, &b, 1e-12));
    }

    #[test]
    fn bspline_degree_zero_is_one_hot() {
        let b = ExpansionSpec::bspline_on(4, 0, 0.0, 1.0);
        assert_eq!(b.forward(&[0.6]).unwrap(), vec![0.0, 0.0, 1.0, 0.0]);
        assert_eq!(b.forward(&[1.0]).unwrap(), vec![0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn bspline_hat_at_knot() {
        // t=4 on [0,1], d=1: bases peak at knots 0, .25, .5, .75, 1
        let b = ExpansionSpec::bspline_on(4, 1, 0.0, 1.0);
        let v = b.forward(&[0.5]).unwrap();
        assert!(close_all(&v, &[0.0, 0.0, 1.0, 0.0, 0.0], 1e-15));
    }

    #[test]
    fn bspline_partition_of_unity() {
        for d in 0..=3 {
            let b = ExpansionSpec::bspline_on(5, d, -2.0, 3.0);
            for i in 0..=200 {
                let x = -2.0 + 5.0 * i as f64 / 200.0;
                let s: f64 = b.forward(&[x]).unwrap().iter().sum();
                assert!((s - 1.0).abs() < 1e-10, "d={d} x={x} sum={s}");
            }
        }
    }

    #[test]
    fn bspline_nan_is_domain_error() {
        let b = ExpansionSpec::bspline(3, 2);
        match b.forward(&[0.1, f64::NAN]) {
            Err(Error::Domain { index, .. }) => assert_eq!(index, 1),
            other => panic!("expected domain error, got {other:?}"),
        }
        // outside the range is evaluated, not rejected
        assert!(b.forward(&[5.0]).is_ok());
    }

    #[test]
    fn chebyshev_examples() {
        let c = ExpansionSpec::chebyshev(3);
        assert!(close_all(&c.forward(&[0.5]).unwrap(), &[0.5, -0.5, -1.0], 1e-15));
        assert_eq!(ExpansionSpec::chebyshev(5).forward(&[1.0]).unwrap(), vec![1.0; 5]);
    }

    #[test]
    fn chebyshev_matches_cosine_form() {
        let c = ExpansionSpec::chebyshev(6);
        for i in 0..=50 {
            let x = -1.0 + 2.0 * i as f64 / 50.0;
            let got = c.forward(&[x]).unwrap();
            for (k, g) in got.iter().enumerate() {
                let want = ((k + 1) as f64 * x.acos()).cos();
                assert!((g - want).abs() < 1e-10);
                assert!(g.abs() <= 1.0 + 1e-12);
            }
        }
    }

    fn legendre(x: f64, d: usize) -> Vec<f64> {
        // (k+1) P_{k+1} = (2k+1) x P_k - k P_{k-1}
        let mut p = vec![1.0, x];
        for k in 1..d {
            let kf = k as f64;
            p.push(((2.0 * kf + 1.0) * x * p[k] - kf * p[k - 1]) / (kf + 1.0));
        }
        p[1..=d].to_vec()
    }

    #[test]
    fn jacobi_examples_and_legendre_oracle() {
        let j = |d| {
            kind(ExpansionKind::Jacobi {
                d,
                alpha: 0.0,
                beta: 0.0,
            })
        };
        assert_eq!(j(1).forward(&[0.5]).unwrap(), vec![0.5]);
        assert!(close_all(&j(2).forward(&[1.0]).unwrap(), &[1.0, 1.0], 1e-15));
        for d in 1..=5 {
            for i in 0..=20 {
                let x = -1.0 + i as f64 / 10.0;
                assert!(close_all(&j(d).forward(&[x]).unwrap(), &legendre(x, d), 1e-12));
            }
        }
        assert!(kind(ExpansionKind::Jacobi {
            d: 2,
            alpha: -1.0,
            beta: 0.0
        })
        .out_dim(1)
        .is_err());
    }

    #[test]
    fn pointwise_examples() {
        assert_eq!(
            ExpansionSpec::identity().forward(&[1.5, -2.0]).unwrap(),
            vec![1.5, -2.0]
        );
        assert_eq!(kind(ExpansionKind::Reciprocal {}).forward(&[2.0]).unwrap(), vec![0.5]);
        assert_eq!(
            kind(ExpansionKind::Hyperbolic {}).forward(&[0.0]).unwrap(),
            vec![1.0, 0.0, 0.0]
        );
        let lin = kind(ExpansionKind::Linear {
            scale: 3.0,
            c_pre: None,
            c_post: None,
        });
        assert_eq!(lin.forward(&[1.0, -2.0]).unwrap(), vec![3.0, -6.0]);
    }

    #[test]
    fn linear_matrix_forms() {
        let c = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        let pre = kind(ExpansionKind::Linear {
            scale: 1.0,
            c_pre: Some(c.clone()),
            c_post: None,
        });
        let post = kind(ExpansionKind::Linear {
            scale: 1.0,
            c_pre: None,
            c_post: Some(c),
        });
        assert_eq!(pre.forward(&[1.0, 1.0]).unwrap(), vec![3.0, 7.0]);
        assert_eq!(post.forward(&[1.0, 1.0]).unwrap(), vec![4.0, 6.0]);
    }

    #[test]
    fn domain_errors_name_the_feature() {
        let cases = [
            (kind(ExpansionKind::Reciprocal {}), vec![1.0, 0.0], 1),
            (kind(ExpansionKind::ArcTrig {}), vec![0.2, 0.3, 1.5], 2),
            (kind(ExpansionKind::ArcHyperbolic {}), vec![0.5], 0),
        ];
        for (spec, x, idx) in cases {
            match spec.forward(&x) {
                Err(Error::Domain { index, .. }) => assert_eq!(index, idx),
                other => panic!("{}: {other:?}", spec.name()),
            }
        }
    }

    #[test]
    fn rbf_examples() {
        let g = kind(ExpansionKind::GaussianRbf {
            centers: Some(vec![0.0, 1.0]),
            count: 0,
            range: unit_range(),
            epsilon: 1.0,
        });
        let v = g.forward(&[1.0]).unwrap();
        assert!((v[0] - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(v[1], 1.0);
        let q = kind(ExpansionKind::InverseQuadraticRbf {
            centers: None,
            count: 7,
            range: [-2.0, 2.0],
            epsilon: 2.0,
        });
        assert_eq!(q.out_dim(3).unwrap(), 21);
        assert!(q
            .forward(&[0.3, -4.0, 9.0])
            .unwrap()
            .iter()
            .all(|&v| v > 0.0 && v <= 1.0));
    }

    #[test]
    fn combinatorial_examples() {
        let x = [1.0, 2.0, 3.0];
        assert_eq!(ExpansionSpec::combinatorial(1).forward(&x).unwrap(), x.to_vec());
        assert_eq!(
            ExpansionSpec::combinatorial(2).forward(&x).unwrap(),
            vec![1.0, 2.0, 3.0, 1.0, 2.0, 1.0, 3.0, 2.0, 3.0]
        );
        assert_eq!(
            ExpansionSpec::combinatorial(2).forward(&[1.0, 2.0]).unwrap(),
            vec![1.0, 2.0, 1.0, 2.0]
        );
        assert!(ExpansionSpec::combinatorial(4).out_dim(3).is_err());
    }

    #[test]
    fn subsets_are_lexicographic() {
        assert_eq!(
            subsets(4, 2),
            vec![vec![0, 1], vec![0, 2], vec![0, 3], vec![1, 2], vec![1, 3], vec![2, 3]]
        );
        for m in 1..7 {
            for k in 1..=m {
                assert_eq!(subsets(m, k).len(), binomial(m, k));
            }
        }
    }

    #[test]
    fn naive_prob_examples() {
        let spec = kind(ExpansionKind::NaiveProb {
            distributions: vec![
                Distribution::Gaussian { mean: 0.0, std: 1.0 },
                Distribution::Laplace { loc: 0.0, scale: 1.0 },
            ],
            per_feature: false,
        });
        assert_eq!(spec.out_dim(3).unwrap(), 6);
        let v = spec.forward(&[0.0, 0.0, 0.0]).unwrap();
        assert!((v[0] + 0.918_939).abs() < 1e-6);
        assert!((v[3] + 0.693_147).abs() < 1e-6);
        let exp = kind(ExpansionKind::NaiveProb {
            distributions: vec![Distribution::Exponential { rate: 1.0 }],
            per_feature: false,
        });
        assert!(exp.out_dim(1).is_err());
        assert!(exp.clone().with_pre(Processor::Softplus).out_dim(1).is_ok());
        let direct = ExpansionKind::NaiveProb {
            distributions: vec![Distribution::Exponential { rate: 1.0 }],
            per_feature: false,
        };
        assert_eq!(direct.eval(&[1.0]).unwrap(), vec![-1.0]);
    }

    #[test]
    fn combinatorial_prob_examples() {
        let d1 = kind(ExpansionKind::CombinatorialProb {
            d: 1,
            distributions: None,
        });
        let v = d1.forward(&[0.0, 0.0]).unwrap();
        assert!(close_all(&v, &[-0.918_939, -0.918_939], 1e-6));
        let d2 = kind(ExpansionKind::CombinatorialProb {
            d: 2,
            distributions: None,
        });
        let v = d2.forward(&[0.0, 0.0]).unwrap();
        assert!((v[2] + 1.837_877).abs() < 1e-6);
        assert!(kind(ExpansionKind::CombinatorialProb {
            d: 4,
            distributions: None
        })
        .out_dim(5)
        .is_err());
    }

    #[test]
    fn combinator_identity_laws() {
        let x = [0.3, -0.7];
        let id2 = ExpansionSpec::nested(vec![ExpansionSpec::identity(), ExpansionSpec::identity()]);
        assert_eq!(id2.forward(&x).unwrap(), x.to_vec());
        let t = ExpansionSpec::taylor(3);
        let single_n = ExpansionSpec::nested(vec![t.clone()]);
        let single_e = ExpansionSpec::extended(vec![t.clone()]);
        assert_eq!(single_n.forward(&x).unwrap(), t.forward(&x).unwrap());
        assert_eq!(single_e.forward(&x).unwrap(), t.forward(&x).unwrap());
        assert!(ExpansionSpec::nested(vec![]).out_dim(2).is_err());
    }

    #[test]
    fn trivial_vjps() {
        let g = [0.3, -1.0, 2.0];
        let x = [0.1, 0.2, 0.3];
        assert_eq!(ExpansionSpec::identity().vjp(&x, &g).unwrap(), g.to_vec());
        assert_eq!(ExpansionSpec::taylor(1).vjp(&x, &g).unwrap(), g.to_vec());
        assert!(ExpansionSpec::taylor(2).vjp(&x, &g).is_err());
    }

    #[test]
    fn config_round_trip() {
        let spec = ExpansionSpec::extended(vec![
            ExpansionSpec::taylor(2).with_pre(Processor::Sigmoid),
            ExpansionSpec::bspline(5, 3).with_post(Processor::LayerNorm),
        ]);
        let text = serde_json::to_string(&spec).unwrap();
        let back: ExpansionSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);
        let bad = r#"{"kind":"taylor","d":2,"order":3}"#;
        assert!(serde_json::from_str::<ExpansionSpec>(bad).is_err());
    }
}
