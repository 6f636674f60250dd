//! Parameter reconciliation functions `ψ: R^l -> R^{n x D}`.
//!
//! A [`ReconciliationSpec`] is shape-free; [`Reconciler::build`] binds it
//! to a target `n x D`, checks divisibility, and draws any frozen state
//! (masks, hypernet weights). Matrices are row-major throughout and a
//! parameter vector is split in declaration order: `A` then `B`, or
//! `P, Q` then `S, T`.

use serde::{Deserialize, Serialize};

use crate::error::{config, shape, Result};
use crate::process::{sigmoid, silu};
use crate::rng::Rng;

fn default_hidden() -> usize {
    64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReconciliationSpec {
    /// Every entry equals `value`, or the identity matrix when `eye`.
    Constant {
        #[serde(default)]
        value: f64,
        #[serde(default)]
        eye: bool,
    },
    Identity {},
    Masking {
        ratio: f64,
        #[serde(default)]
        seed: u64,
    },
    /// `C ⊗ W` with `C` a `p x q` matrix, all ones unless given.
    DuplicatedPadding {
        p: usize,
        q: usize,
        #[serde(default)]
        c: Option<Vec<Vec<f64>>>,
    },
    Lorr {
        r: usize,
    },
    Hm {
        p: usize,
        q: usize,
    },
    Lphm {
        p: usize,
        q: usize,
        r: usize,
    },
    DualLphm {
        p: usize,
        q: usize,
        r: usize,
    },
    /// Frozen random network from `R^l` to `R^{nD}`.
    Hypernet {
        l: usize,
        #[serde(default = "default_hidden")]
        hidden: usize,
        #[serde(default)]
        seed: u64,
    },
}

impl ReconciliationSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ReconciliationSpec::Constant { .. } => "constant",
            ReconciliationSpec::Identity {} => "identity",
            ReconciliationSpec::Masking { .. } => "masking",
            ReconciliationSpec::DuplicatedPadding { .. } => "duplicated_padding",
            ReconciliationSpec::Lorr { .. } => "lorr",
            ReconciliationSpec::Hm { .. } => "hm",
            ReconciliationSpec::Lphm { .. } => "lphm",
            ReconciliationSpec::DualLphm { .. } => "dual_lphm",
            ReconciliationSpec::Hypernet { .. } => "hypernet",
        }
    }

    /// Learnable parameter count for an `n x d` target.
    pub fn required_length(&self, n: usize, d: usize) -> Result<usize> {
        use ReconciliationSpec::*;
        if n == 0 || d == 0 {
            return config("reconciliation target must be non-empty");
        }
        let divides = |p: usize, q: usize| {
            if p == 0 || q == 0 || n % p != 0 || d % q != 0 {
                config(format!(
                    "{}: block counts p={p}, q={q} must divide n={n}, D={d}",
                    self.name()
                ))
            } else {
                Ok(())
            }
        };
        let rank = |r: usize| {
            if r == 0 {
                config(format!("{}: rank must be at least 1", self.name()))
            } else {
                Ok(())
            }
        };
        Ok(match *self {
            Constant { eye, .. } => {
                if eye && n != d {
                    return config(format!("eye reconciliation needs n == D, got {n}x{d}"));
                }
                0
            }
            Identity {} => n * d,
            Masking { ratio, .. } => {
                if !(0.0..=1.0).contains(&ratio) {
                    return config(format!("masking ratio must lie in [0, 1], got {ratio}"));
                }
                mask_count(ratio, n * d)
            }
            DuplicatedPadding { p, q, ref c } => {
                divides(p, q)?;
                if let Some(c) = c {
                    if c.len() != p || c.iter().any(|row| row.len() != q) {
                        return config(format!("duplicated_padding C must be {p}x{q}"));
                    }
                }
                (n / p) * (d / q)
            }
            Lorr { r } => {
                rank(r)?;
                (n + d) * r
            }
            Hm { p, q } => {
                divides(p, q)?;
                p * q + (n / p) * (d / q)
            }
            Lphm { p, q, r } => {
                divides(p, q)?;
                rank(r)?;
                p * q + r * (n / p + d / q)
            }
            DualLphm { p, q, r } => {
                divides(p, q)?;
                rank(r)?;
                r * (p + q + n / p + d / q)
            }
            Hypernet { l, hidden, .. } => {
                if l == 0 || hidden == 0 {
                    return config("hypernet needs l >= 1 and hidden >= 1");
                }
                l
            }
        })
    }
}

/// Round-half-up count of learnable entries under masking.
pub fn mask_count(ratio: f64, total: usize) -> usize {
    ((ratio * total as f64) + 0.5).floor() as usize
}

#[derive(Clone, Debug)]
struct Hypernet {
    hidden: usize,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
}

impl Hypernet {
    fn new(l: usize, hidden: usize, out: usize, seed: u64) -> Self {
        let mut rng = Rng::new(seed).fork(0x4859_5045);
        let mut draw = |len: usize, fan_in: usize| -> Vec<f64> {
            let s = 1.0 / (fan_in as f64).sqrt();
            (0..len).map(|_| s * rng.normal()).collect()
        };
        let w1 = draw(hidden * l, l);
        let b1 = draw(hidden, l);
        let w2 = draw(out * hidden, hidden);
        let b2 = draw(out, hidden);
        Self { hidden, w1, b1, w2, b2 }
    }

    fn pre_activation(&self, w: &[f64]) -> Vec<f64> {
        let l = w.len();
        (0..self.hidden)
            .map(|i| self.b1[i] + dot(&self.w1[i * l..(i + 1) * l], w))
            .collect()
    }

    fn forward(&self, w: &[f64]) -> Vec<f64> {
        let h: Vec<f64> = self.pre_activation(w).into_iter().map(silu).collect();
        let k = self.hidden;
        self.b2
            .iter()
            .enumerate()
            .map(|(o, b)| b + dot(&self.w2[o * k..(o + 1) * k], &h))
            .collect()
    }

    fn vjp(&self, w: &[f64], g: &[f64]) -> Vec<f64> {
        let l = w.len();
        let k = self.hidden;
        let a = self.pre_activation(w);
        let mut gh = vec![0.0; k];
        for (o, &go) in g.iter().enumerate() {
            if go != 0.0 {
                for (ghi, wi) in gh.iter_mut().zip(&self.w2[o * k..(o + 1) * k]) {
                    *ghi += go * wi;
                }
            }
        }
        let mut gw = vec![0.0; l];
        for i in 0..k {
            let s = sigmoid(a[i]);
            let ga = gh[i] * s * (1.0 + a[i] * (1.0 - s));
            for (gwj, w1) in gw.iter_mut().zip(&self.w1[i * l..(i + 1) * l]) {
                *gwj += ga * w1;
            }
        }
        gw
    }
}

/// A reconciliation bound to an `n x D` target.
#[derive(Clone, Debug)]
pub struct Reconciler {
    spec: ReconciliationSpec,
    n: usize,
    d: usize,
    l: usize,
    mask: Option<Vec<bool>>,
    hypernet: Option<Hypernet>,
}

impl Reconciler {
    pub fn build(spec: &ReconciliationSpec, n: usize, d: usize) -> Result<Self> {
        let l = spec.required_length(n, d)?;
        let mut mask = None;
        let mut hypernet = None;
        match *spec {
            ReconciliationSpec::Masking { ratio, seed } => {
                let total = n * d;
                let mut rng = Rng::new(seed).fork(0x4D41_534B);
                let mut keep = vec![false; total];
                for &i in rng.permutation(total).iter().take(mask_count(ratio, total)) {
                    keep[i] = true;
                }
                mask = Some(keep);
            }
            ReconciliationSpec::Hypernet { l, hidden, seed } => {
                hypernet = Some(Hypernet::new(l, hidden, n * d, seed));
            }
            _ => {}
        }
        Ok(Self {
            spec: spec.clone(),
            n,
            d,
            l,
            mask,
            hypernet,
        })
    }

    pub fn spec(&self) -> &ReconciliationSpec {
        &self.spec
    }

    pub fn rows(&self) -> usize {
        self.n
    }

    pub fn cols(&self) -> usize {
        self.d
    }

    /// Learnable parameter count.
    pub fn required_length(&self) -> usize {
        self.l
    }

    /// Length of the stored parameter vector. Differs from
    /// [`required_length`](Self::required_length) only for masking, which
    /// keeps a dense buffer and never updates masked entries.
    pub fn storage_len(&self) -> usize {
        match self.spec {
            ReconciliationSpec::Masking { .. } => self.n * self.d,
            _ => self.l,
        }
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    /// Fabricates the row-major `n x D` matrix.
    pub fn forward(&self, w: &[f64]) -> Result<Vec<f64>> {
        use ReconciliationSpec::*;
        self.check_len(w)?;
        let (n, d) = (self.n, self.d);
        Ok(match &self.spec {
            Constant { value, eye } => {
                if *eye {
                    let mut out = vec![0.0; n * d];
                    for i in 0..n {
                        out[i * d + i] = 1.0;
                    }
                    out
                } else {
                    vec![*value; n * d]
                }
            }
            Identity {} => w.to_vec(),
            Masking { .. } => {
                let mask = self.mask.as_ref().expect("mask drawn at build");
                w.iter().zip(mask).map(|(&v, &k)| if k { v } else { 0.0 }).collect()
            }
            DuplicatedPadding { p, q, c } => {
                let cm = padding_matrix(*p, *q, c.as_deref());
                kron(&cm, *p, *q, w, n / p, d / q)
            }
            Lorr { r } => {
                let (a, b) = w.split_at(n * r);
                matmul_nt(a, b, n, d, *r)
            }
            Hm { p, q } => {
                let (a, b) = w.split_at(p * q);
                kron(a, *p, *q, b, n / p, d / q)
            }
            Lphm { p, q, r } => {
                let (s_, t_) = (n / p, d / q);
                let (a, rest) = w.split_at(p * q);
                let (s, t) = rest.split_at(s_ * r);
                let b = matmul_nt(s, t, s_, t_, *r);
                kron(a, *p, *q, &b, s_, t_)
            }
            DualLphm { p, q, r } => {
                let (s_, t_) = (n / p, d / q);
                let (pm, rest) = w.split_at(p * r);
                let (qm, rest) = rest.split_at(q * r);
                let (s, t) = rest.split_at(s_ * r);
                let a = matmul_nt(pm, qm, *p, *q, *r);
                let b = matmul_nt(s, t, s_, t_, *r);
                kron(&a, *p, *q, &b, s_, t_)
            }
            Hypernet { .. } => self.hypernet.as_ref().expect("net drawn at build").forward(w),
        })
    }

    /// `∂L/∂w` given `∂L/∂W`.
    pub fn vjp(&self, w: &[f64], grad: &[f64]) -> Result<Vec<f64>> {
        use ReconciliationSpec::*;
        self.check_len(w)?;
        let (n, d) = (self.n, self.d);
        if grad.len() != n * d {
            return shape(format!(
                "reconciliation vjp: gradient length {} but target is {n}x{d}",
                grad.len()
            ));
        }
        Ok(match &self.spec {
            Constant { .. } => Vec::new(),
            Identity {} => grad.to_vec(),
            Masking { .. } => {
                let mask = self.mask.as_ref().expect("mask drawn at build");
                grad.iter().zip(mask).map(|(&g, &k)| if k { g } else { 0.0 }).collect()
            }
            DuplicatedPadding { p, q, c } => {
                let cm = padding_matrix(*p, *q, c.as_deref());
                let (_, gb) = kron_vjp(&cm, *p, *q, w, n / p, d / q, grad);
                gb
            }
            Lorr { r } => {
                let (a, b) = w.split_at(n * r);
                let (ga, gb) = matmul_nt_vjp(a, b, n, d, *r, grad);
                [ga, gb].concat()
            }
            Hm { p, q } => {
                let (a, b) = w.split_at(p * q);
                let (ga, gb) = kron_vjp(a, *p, *q, b, n / p, d / q, grad);
                [ga, gb].concat()
            }
            Lphm { p, q, r } => {
                let (s_, t_) = (n / p, d / q);
                let (a, rest) = w.split_at(p * q);
                let (s, t) = rest.split_at(s_ * r);
                let b = matmul_nt(s, t, s_, t_, *r);
                let (ga, gb) = kron_vjp(a, *p, *q, &b, s_, t_, grad);
                let (gs, gt) = matmul_nt_vjp(s, t, s_, t_, *r, &gb);
                [ga, gs, gt].concat()
            }
            DualLphm { p, q, r } => {
                let (s_, t_) = (n / p, d / q);
                let (pm, rest) = w.split_at(p * r);
                let (qm, rest) = rest.split_at(q * r);
                let (s, t) = rest.split_at(s_ * r);
                let a = matmul_nt(pm, qm, *p, *q, *r);
                let b = matmul_nt(s, t, s_, t_, *r);
                let (ga, gb) = kron_vjp(&a, *p, *q, &b, s_, t_, grad);
                let (gp, gq) = matmul_nt_vjp(pm, qm, *p, *q, *r, &ga);
                let (gs, gt) = matmul_nt_vjp(s, t, s_, t_, *r, &gb);
                [gp, gq, gs, gt].concat()
            }
            Hypernet { .. } => self.hypernet.as_ref().expect("net drawn at build").vjp(w, grad),
        })
    }

    fn check_len(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.storage_len() {
            return shape(format!(
                "{} reconciliation expects {} parameters, got {}",
                self.spec.name(),
                self.storage_len(),
                w.len()
            ));
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn padding_matrix(p: usize, q: usize, c: Option<&[Vec<f64>]>) -> Vec<f64> {
    match c {
        Some(rows) => rows.concat(),
        None => vec![1.0; p * q],
    }
}

/// `A Bᵀ` for `A: rows x r`, `B: cols x r`.
fn matmul_nt(a: &[f64], b: &[f64], rows: usize, cols: usize, r: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        let ai = &a[i * r..(i + 1) * r];
        for j in 0..cols {
            out[i * cols + j] = dot(ai, &b[j * r..(j + 1) * r]);
        }
    }
    out
}

/// Adjoints of `A Bᵀ`: `(G B, Gᵀ A)`.
fn matmul_nt_vjp(a: &[f64], b: &[f64], rows: usize, cols: usize, r: usize, g: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut ga = vec![0.0; rows * r];
    let mut gb = vec![0.0; cols * r];
    for i in 0..rows {
        for j in 0..cols {
            let gij = g[i * cols + j];
            if gij == 0.0 {
                continue;
            }
            for k in 0..r {
                ga[i * r + k] += gij * b[j * r + k];
                gb[j * r + k] += gij * a[i * r + k];
            }
        }
    }
    (ga, gb)
}

/// `A ⊗ B` for `A: p x q`, `B: s x t`.
fn kron(a: &[f64], p: usize, q: usize, b: &[f64], s: usize, t: usize) -> Vec<f64> {
    let cols = q * t;
    let mut out = vec![0.0; p * s * cols];
    for i in 0..p {
        for j in 0..q {
            let aij = a[i * q + j];
            for k in 0..s {
                let row = (i * s + k) * cols + j * t;
                for l in 0..t {
                    out[row + l] = aij * b[k * t + l];
                }
            }
        }
    }
    out
}

fn kron_vjp(a: &[f64], p: usize, q: usize, b: &[f64], s: usize, t: usize, g: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let cols = q * t;
    let mut ga = vec![0.0; p * q];
    let mut gb = vec![0.0; s * t];
    for i in 0..p {
        for j in 0..q {
            let aij = a[i * q + j];
            let mut acc = 0.0;
            for k in 0..s {
                let row = (i * s + k) * cols + j * t;
                for l in 0..t {
                    let gv = g[row + l];
                    acc += gv * b[k * t + l];
                    gb[k * t + l] += aij * gv;
                }
            }
            ga[i * q + j] = acc;
        }
    }
    (ga, gb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn build(spec: ReconciliationSpec, n: usize, d: usize) -> Reconciler {
        Reconciler::build(&spec, n, d).unwrap()
    }

    fn random(rng: &mut Rng, len: usize) -> Vec<f64> {
        (0..len).map(|_| rng.normal()).collect()
    }

    #[test]
    fn reference_lengths() {
        let (n, d) = (4, 10);
        let l = |s: ReconciliationSpec| s.required_length(n, d).unwrap();
        assert_eq!(l(ReconciliationSpec::Identity {}), 40);
        assert_eq!(l(ReconciliationSpec::Lorr { r: 1 }), 14);
        assert_eq!(l(ReconciliationSpec::Hm { p: 2, q: 2 }), 14);
        assert_eq!(l(ReconciliationSpec::Lphm { p: 2, q: 2, r: 1 }), 4 + 2 + 5);
        assert_eq!(l(ReconciliationSpec::DualLphm { p: 2, q: 2, r: 1 }), 11);
        assert_eq!(l(ReconciliationSpec::DuplicatedPadding { p: 2, q: 2, c: None }), 10);
        assert_eq!(l(ReconciliationSpec::Constant { value: 1.0, eye: false }), 0);
        assert_eq!(l(ReconciliationSpec::Masking { ratio: 0.5, seed: 0 }), 20);
    }

    #[test]
    fn divisibility_and_rank_errors() {
        assert!(ReconciliationSpec::Hm { p: 3, q: 2 }.required_length(4, 10).is_err());
        assert!(ReconciliationSpec::DualLphm { p: 2, q: 2, r: 0 }
            .required_length(4, 10)
            .is_err());
        assert!(ReconciliationSpec::Constant { value: 0.0, eye: true }
            .required_length(2, 3)
            .is_err());
        assert!(ReconciliationSpec::Masking { ratio: 1.5, seed: 0 }
            .required_length(2, 3)
            .is_err());
    }

    #[test]
    fn mask_count_rounds_half_up() {
        assert_eq!(mask_count(0.5, 20), 10);
        assert_eq!(mask_count(0.5, 5), 3);
        assert_eq!(mask_count(0.25, 6), 2);
        assert_eq!(mask_count(0.0, 7), 0);
    }

    #[test]
    fn constant_examples() {
        let c = build(ReconciliationSpec::Constant { value: 1.0, eye: false }, 2, 3);
        assert_eq!(c.forward(&[]).unwrap(), vec![1.0; 6]);
        let z = build(ReconciliationSpec::Constant { value: 0.0, eye: false }, 2, 3);
        assert_eq!(z.forward(&[]).unwrap(), vec![0.0; 6]);
        let e = build(ReconciliationSpec::Constant { value: 0.0, eye: true }, 3, 3);
        assert_eq!(e.forward(&[]).unwrap(), Tensor::identity(3).into_data());
        assert!(c.vjp(&[], &[1.0; 6]).unwrap().is_empty());
    }

    #[test]
    fn identity_is_reshape() {
        let r = build(ReconciliationSpec::Identity {}, 2, 2);
        assert_eq!(r.forward(&[1.0, 2.0, 3.0, 4.0]).unwrap(), vec![1.0, 2.0, 3.0, 4.0]);
        assert!(r.forward(&[1.0]).is_err());
    }

    #[test]
    fn masking_examples() {
        let mut rng = Rng::new(3);
        let w = random(&mut rng, 20);
        let full = build(ReconciliationSpec::Masking { ratio: 1.0, seed: 1 }, 4, 5);
        assert_eq!(full.forward(&w).unwrap(), w);
        let none = build(ReconciliationSpec::Masking { ratio: 0.0, seed: 1 }, 4, 5);
        assert!(none.forward(&w).unwrap().iter().all(|&v| v == 0.0));
        assert!(none.vjp(&w, &w).unwrap().iter().all(|&v| v == 0.0));
        let half = build(ReconciliationSpec::Masking { ratio: 0.5, seed: 9 }, 4, 5);
        let out = half.forward(&w).unwrap();
        assert_eq!(out.iter().filter(|&&v| v != 0.0).count(), 10);
        let again = build(ReconciliationSpec::Masking { ratio: 0.5, seed: 9 }, 4, 5);
        assert_eq!(half.mask(), again.mask());
        assert_eq!(half.storage_len(), 20);
        assert_eq!(half.required_length(), 10);
    }

    #[test]
    fn duplicated_padding_examples() {
        let r = build(ReconciliationSpec::DuplicatedPadding { p: 2, q: 1, c: None }, 2, 2);
        assert_eq!(r.forward(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0, 1.0, 2.0]);
        let mut rng = Rng::new(5);
        let w = random(&mut rng, 6);
        let one = build(ReconciliationSpec::DuplicatedPadding { p: 1, q: 1, c: None }, 2, 3);
        assert_eq!(one.forward(&w).unwrap(), w);
        let big = build(ReconciliationSpec::DuplicatedPadding { p: 3, q: 2, c: None }, 6, 6);
        let out = big.forward(&w).unwrap();
        for bi in 0..3 {
            for bj in 0..2 {
                for k in 0..2 {
                    for l in 0..3 {
                        assert_eq!(out[(bi * 2 + k) * 6 + bj * 3 + l], w[k * 3 + l]);
                    }
                }
            }
        }
    }

    #[test]
    fn lorr_outer_product() {
        let r = build(ReconciliationSpec::Lorr { r: 1 }, 2, 3);
        let w = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(r.forward(&w).unwrap(), vec![3.0, 4.0, 5.0, 6.0, 8.0, 10.0]);
        assert!(r.forward(&[0.0; 5]).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hm_matches_kron_oracle() {
        let mut rng = Rng::new(11);
        let a = random(&mut rng, 4);
        let b = random(&mut rng, 4);
        let r = build(ReconciliationSpec::Hm { p: 2, q: 2 }, 4, 4);
        let got = r.forward(&[a.clone(), b.clone()].concat()).unwrap();
        let ta = Tensor::matrix(2, 2, a).unwrap();
        let tb = Tensor::matrix(2, 2, b.clone()).unwrap();
        assert_eq!(got, ta.kron(&tb).unwrap().into_data());
        let scalar = build(ReconciliationSpec::Hm { p: 1, q: 1 }, 2, 2);
        let doubled = scalar.forward(&[[2.0].as_slice(), &b].concat()).unwrap();
        assert_eq!(doubled, b.iter().map(|v| 2.0 * v).collect::<Vec<_>>());
    }

    #[test]
    fn lphm_equals_hm_with_low_rank_b() {
        let mut rng = Rng::new(12);
        let (n, d, p, q, r) = (4, 6, 2, 3, 2);
        let w = random(&mut rng, p * q + r * (n / p + d / q));
        let lphm = build(ReconciliationSpec::Lphm { p, q, r }, n, d);
        let (a, rest) = w.split_at(p * q);
        let (s, t) = rest.split_at((n / p) * r);
        let st = Tensor::matrix(n / p, r, s.to_vec())
            .unwrap()
            .matmul(&Tensor::matrix(d / q, r, t.to_vec()).unwrap().transpose().unwrap())
            .unwrap();
        let hm = build(ReconciliationSpec::Hm { p, q }, n, d);
        let via_hm = hm.forward(&[a, st.data()].concat()).unwrap();
        let got = lphm.forward(&w).unwrap();
        assert!(got.iter().zip(&via_hm).all(|(x, y)| (x - y).abs() < 1e-14));
    }

    #[test]
    fn dual_lphm_matches_oracle() {
        let mut rng = Rng::new(13);
        let (n, d, p, q, r) = (4, 6, 2, 3, 1);
        let w = random(&mut rng, r * (p + q + n / p + d / q));
        let got = build(ReconciliationSpec::DualLphm { p, q, r }, n, d)
            .forward(&w)
            .unwrap();
        let mut it = w.iter().copied();
        let mut take = |rows, cols| Tensor::matrix(rows, cols, it.by_ref().take(rows * cols).collect()).unwrap();
        let pm = take(p, r);
        let qm = take(q, r);
        let sm = take(n / p, r);
        let tm = take(d / q, r);
        let a = pm.matmul(&qm.transpose().unwrap()).unwrap();
        let b = sm.matmul(&tm.transpose().unwrap()).unwrap();
        let want = a.kron(&b).unwrap();
        assert!(got.iter().zip(want.data()).all(|(x, y)| (x - y).abs() < 1e-14));
        let zero = build(ReconciliationSpec::DualLphm { p, q, r }, n, d);
        assert!(zero.forward(&vec![0.0; w.len()]).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hypernet_is_deterministic() {
        let spec = ReconciliationSpec::Hypernet {
            l: 3,
            hidden: 8,
            seed: 4,
        };
        let a = build(spec.clone(), 2, 5);
        let b = build(spec, 2, 5);
        let w = [0.1, -0.2, 0.3];
        let out = a.forward(&w).unwrap();
        assert_eq!(out.len(), 10);
        assert_eq!(out, b.forward(&w).unwrap());
    }

    fn all_specs() -> Vec<(ReconciliationSpec, usize, usize)> {
        vec![
            (ReconciliationSpec::Constant { value: 0.5, eye: false }, 3, 4),
            (ReconciliationSpec::Identity {}, 3, 4),
            (ReconciliationSpec::Masking { ratio: 0.6, seed: 2 }, 3, 4),
            (ReconciliationSpec::DuplicatedPadding { p: 3, q: 2, c: None }, 3, 4),
            (
                ReconciliationSpec::DuplicatedPadding {
                    p: 1,
                    q: 2,
                    c: Some(vec![vec![1.0, 0.0]]),
                },
                3,
                4,
            ),
            (ReconciliationSpec::Lorr { r: 2 }, 3, 4),
            (ReconciliationSpec::Hm { p: 1, q: 2 }, 3, 4),
            (ReconciliationSpec::Lphm { p: 3, q: 2, r: 1 }, 3, 4),
            (ReconciliationSpec::DualLphm { p: 2, q: 2, r: 2 }, 4, 6),
            (
                ReconciliationSpec::Hypernet {
                    l: 5,
                    hidden: 6,
                    seed: 1,
                },
                3,
                4,
            ),
        ]
    }

    #[test]
    fn vjp_matches_central_differences() {
        let mut rng = Rng::new(21);
        let h = 1e-6;
        for (spec, n, d) in all_specs() {
            let r = build(spec.clone(), n, d);
            let w = random(&mut rng, r.storage_len());
            let g = random(&mut rng, n * d);
            let loss = |w: &[f64]| -> f64 { dot(&r.forward(w).unwrap(), &g) };
            let analytic = r.vjp(&w, &g).unwrap();
            assert_eq!(analytic.len(), if spec.name() == "constant" { 0 } else { w.len() });
            for i in 0..analytic.len() {
                let mut wp = w.clone();
                let mut wm = w.clone();
                wp[i] += h;
                wm[i] -= h;
                let num = (loss(&wp) - loss(&wm)) / (2.0 * h);
                let err = (num - analytic[i]).abs() / num.abs().max(analytic[i].abs()).max(1.0);
                assert!(err < 1e-7, "{spec:?} param {i}: {num} vs {}", analytic[i]);
            }
        }
    }

    #[test]
    fn parameter_efficiency_at_defaults() {
        let (n, d) = (8, 12);
        for spec in [
            ReconciliationSpec::Masking { ratio: 0.5, seed: 0 },
            ReconciliationSpec::DuplicatedPadding { p: 2, q: 2, c: None },
            ReconciliationSpec::Lorr { r: 1 },
            ReconciliationSpec::Hm { p: 2, q: 2 },
            ReconciliationSpec::Lphm { p: 2, q: 2, r: 1 },
            ReconciliationSpec::DualLphm { p: 2, q: 2, r: 1 },
        ] {
            assert!(spec.required_length(n, d).unwrap() < n * d, "{spec:?}");
        }
    }
}
