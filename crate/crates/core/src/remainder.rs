//! Remainder functions `π: R^m -> R^n`.

use serde::{Deserialize, Serialize};

use crate::error::{config, shape, Result};
use crate::model::{Head, HeadSpec};
use crate::process::Processor;
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RemainderSpec {
    Zero {},
    /// Fixed vector `c`; a single value broadcasts to every output.
    Constant {
        c: Vec<f64>,
    },
    /// `σ(x)`; needs `m == n`.
    Identity {
        #[serde(default)]
        activation: Processor,
    },
    /// `σ(x W')` with learnable `W'` of shape `m x n`.
    Linear {
        #[serde(default)]
        activation: Processor,
    },
    /// A further head whose own remainder is zero.
    Complementary {
        head: Box<HeadSpec>,
    },
}

impl Default for RemainderSpec {
    fn default() -> Self {
        RemainderSpec::Zero {}
    }
}

impl RemainderSpec {
    pub fn name(&self) -> &'static str {
        match self {
            RemainderSpec::Zero {} => "zero",
            RemainderSpec::Constant { .. } => "constant",
            RemainderSpec::Identity { .. } => "identity",
            RemainderSpec::Linear { .. } => "linear",
            RemainderSpec::Complementary { .. } => "complementary",
        }
    }

    pub fn linear(activation: Processor) -> Self {
        RemainderSpec::Linear { activation }
    }
}

/// A remainder bound to input dimension `m` and output dimension `n`.
#[derive(Clone, Debug)]
pub enum Remainder {
    Zero,
    Constant(Vec<f64>),
    Identity(Processor),
    Linear { m: usize, n: usize, act: Processor },
    Complementary(Box<Head>),
}

impl Remainder {
    pub fn build(spec: &RemainderSpec, m: usize, n: usize) -> Result<Self> {
        Ok(match spec {
            RemainderSpec::Zero {} => Remainder::Zero,
            RemainderSpec::Constant { c } => match c.len() {
                1 => Remainder::Constant(vec![c[0]; n]),
                len if len == n => Remainder::Constant(c.clone()),
                len => return config(format!("constant remainder has {len} values, expected {n}")),
            },
            RemainderSpec::Identity { activation } => {
                if m != n {
                    return config(format!("identity remainder needs m == n, got {m} and {n}"));
                }
                Remainder::Identity(*activation)
            }
            RemainderSpec::Linear { activation } => Remainder::Linear { m, n, act: *activation },
            RemainderSpec::Complementary { head } => {
                if !matches!(head.remainder, RemainderSpec::Zero {}) {
                    return config("complementary remainder head must have a zero remainder");
                }
                Remainder::Complementary(Box::new(Head::build(head, m, n)?))
            }
        })
    }

    /// Stored parameter count.
    pub fn param_len(&self) -> usize {
        match self {
            Remainder::Linear { m, n, .. } => m * n,
            Remainder::Complementary(h) => h.param_len(),
            _ => 0,
        }
    }

    /// Learnable parameter count.
    pub fn param_count(&self) -> usize {
        match self {
            Remainder::Complementary(h) => h.param_count(),
            other => other.param_len(),
        }
    }

    pub fn init(&self, rng: &mut Rng) -> Vec<f64> {
        match self {
            Remainder::Linear { m, n, .. } => {
                let s = 1.0 / (*m as f64).sqrt();
                (0..m * n).map(|_| s * rng.normal()).collect()
            }
            Remainder::Complementary(h) => h.init(rng),
            _ => Vec::new(),
        }
    }

    pub fn forward(&self, x: &[f64], params: &[f64], n: usize) -> Result<Vec<f64>> {
        if params.len() != self.param_len() {
            return shape(format!(
                "remainder expects {} parameters, got {}",
                self.param_len(),
                params.len()
            ));
        }
        Ok(match self {
            Remainder::Zero => vec![0.0; n],
            Remainder::Constant(c) => c.clone(),
            Remainder::Identity(act) => act.apply(x),
            Remainder::Linear { m, n, act } => act.apply(&linear_map(x, params, *m, *n)),
            Remainder::Complementary(h) => h.forward(x, params)?,
        })
    }

    /// Returns `(∂L/∂x, ∂L/∂params)`.
    pub fn vjp(&self, x: &[f64], params: &[f64], g: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let m = x.len();
        Ok(match self {
            Remainder::Zero | Remainder::Constant(_) => (vec![0.0; m], Vec::new()),
            Remainder::Identity(act) => (act.vjp(x, g), Vec::new()),
            Remainder::Linear { m, n, act } => {
                let z = linear_map(x, params, *m, *n);
                let gz = act.vjp(&z, g);
                linear_map_vjp(x, params, *m, *n, &gz)
            }
            Remainder::Complementary(h) => h.vjp(x, params, g)?,
        })
    }
}

/// `x W` for row-major `W: m x n`.
pub(crate) fn linear_map(x: &[f64], w: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut z = vec![0.0; n];
    for i in 0..m {
        let xi = x[i];
        if xi == 0.0 {
            continue;
        }
        for (zj, wij) in z.iter_mut().zip(&w[i * n..(i + 1) * n]) {
            *zj += xi * wij;
        }
    }
    z
}

/// `(W gz, xᵀ gz)` for `z = x W`.
pub(crate) fn linear_map_vjp(x: &[f64], w: &[f64], m: usize, n: usize, gz: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; m];
    let mut gw = vec![0.0; m * n];
    for i in 0..m {
        let row = &w[i * n..(i + 1) * n];
        gx[i] = row.iter().zip(gz).map(|(a, b)| a * b).sum();
        for (gwij, gzj) in gw[i * n..(i + 1) * n].iter_mut().zip(gz) {
            *gwij = x[i] * gzj;
        }
    }
    (gx, gw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expand::ExpansionSpec;
    use crate::reconcile::ReconciliationSpec;

    #[test]
    fn simple_forms() {
        let z = Remainder::build(&RemainderSpec::Zero {}, 3, 2).unwrap();
        assert_eq!(z.forward(&[1.0, 2.0, 3.0], &[], 2).unwrap(), vec![0.0, 0.0]);
        let id = Remainder::build(
            &RemainderSpec::Identity {
                activation: Processor::None,
            },
            2,
            2,
        )
        .unwrap();
        assert_eq!(id.forward(&[1.0, 2.0], &[], 2).unwrap(), vec![1.0, 2.0]);
        let c = Remainder::build(&RemainderSpec::Constant { c: vec![0.5] }, 3, 2).unwrap();
        assert_eq!(c.forward(&[0.0; 3], &[], 2).unwrap(), vec![0.5, 0.5]);
        let lin = Remainder::build(&RemainderSpec::linear(Processor::None), 2, 2).unwrap();
        assert_eq!(
            lin.forward(&[3.0, -1.0], &[1.0, 0.0, 0.0, 1.0], 2).unwrap(),
            vec![3.0, -1.0]
        );
    }

    #[test]
    fn shape_rules() {
        let id = RemainderSpec::Identity {
            activation: Processor::None,
        };
        assert!(Remainder::build(&id, 2, 3).is_err());
        assert!(Remainder::build(&RemainderSpec::Constant { c: vec![1.0, 2.0] }, 2, 3).is_err());
        let inner = HeadSpec::new(
            ExpansionSpec::identity(),
            ReconciliationSpec::Identity {},
            RemainderSpec::linear(Processor::None),
        );
        let comp = RemainderSpec::Complementary { head: Box::new(inner) };
        assert!(Remainder::build(&comp, 2, 2).is_err());
    }

    #[test]
    fn config_rejects_unknown_fields() {
        let r: std::result::Result<RemainderSpec, _> = serde_json::from_str(r#"{"kind":"zero","bogus":1}"#);
        assert!(r.is_err());
        let ok: RemainderSpec = serde_json::from_str(r#"{"kind":"linear","activation":"silu"}"#).unwrap();
        assert_eq!(ok, RemainderSpec::linear(Processor::Silu));
    }

    #[test]
    fn linear_adjoint() {
        // gx = W gz and gW = x gzᵀ
        let lin = Remainder::build(&RemainderSpec::linear(Processor::None), 2, 3).unwrap();
        let w = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let (gx, gw) = lin.vjp(&[1.0, -1.0], &w, &[1.0, 0.0, 2.0]).unwrap();
        assert_eq!(gx, vec![7.0, 16.0]);
        assert_eq!(gw, vec![1.0, 0.0, 2.0, -1.0, 0.0, -2.0]);
    }

    #[test]
    fn zero_gives_zero_gradients() {
        let z = Remainder::build(&RemainderSpec::Zero {}, 2, 2).unwrap();
        let (gx, gp) = z.vjp(&[1.0, 2.0], &[], &[3.0, 4.0]).unwrap();
        assert_eq!(gx, vec![0.0, 0.0]);
        assert!(gp.is_empty());
    }

    #[test]
    fn vjp_matches_central_differences() {
        let child = HeadSpec::new(
            ExpansionSpec::taylor(2),
            ReconciliationSpec::Lorr { r: 1 },
            RemainderSpec::Zero {},
        );
        let specs = [
            RemainderSpec::Identity {
                activation: Processor::Silu,
            },
            RemainderSpec::linear(Processor::Sigmoid),
            RemainderSpec::linear(Processor::Relu),
            RemainderSpec::Complementary { head: Box::new(child) },
        ];
        let mut rng = Rng::new(8);
        let h = 1e-6;
        for spec in specs {
            let r = Remainder::build(&spec, 3, 3).unwrap();
            let p = r.init(&mut rng);
            let x: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
            let g: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
            let f =
                |x: &[f64], p: &[f64]| -> f64 { r.forward(x, p, 3).unwrap().iter().zip(&g).map(|(a, b)| a * b).sum() };
            let (gx, gp) = r.vjp(&x, &p, &g).unwrap();
            for i in 0..3 {
                let (mut xp, mut xm) = (x.clone(), x.clone());
                xp[i] += h;
                xm[i] -= h;
                let num = (f(&xp, &p) - f(&xm, &p)) / (2.0 * h);
                assert!((num - gx[i]).abs() < 1e-6, "{spec:?} x{i}: {num} vs {}", gx[i]);
            }
            for i in 0..p.len() {
                let (mut pp, mut pm) = (p.clone(), p.clone());
                pp[i] += h;
                pm[i] -= h;
                let num = (f(&x, &pp) - f(&x, &pm)) / (2.0 * h);
                assert!((num - gp[i]).abs() < 1e-6, "{spec:?} p{i}: {num} vs {}", gp[i]);
            }
        }
    }
}
