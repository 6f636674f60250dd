//! Optional activation and normalization functions applied around an
//! expansion (before it, after it) or inside a remainder.

use serde::{Deserialize, Serialize};

/// Epsilon added to the variance in layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Processor {
    #[default]
    None,
    Sigmoid,
    Relu,
    Silu,
    /// `ln(1 + e^x)`; maps any input to the positive half-line.
    Softplus,
    /// Per-vector standardization without learnable affine terms.
    LayerNorm,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

impl Processor {
    pub fn is_none(&self) -> bool {
        matches!(self, Processor::None)
    }

    /// True when every output is strictly positive.
    pub fn is_positive(&self) -> bool {
        matches!(self, Processor::Sigmoid | Processor::Softplus)
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Processor::None => x.to_vec(),
            Processor::Sigmoid => x.iter().map(|&v| sigmoid(v)).collect(),
            Processor::Relu => x.iter().map(|&v| v.max(0.0)).collect(),
            Processor::Silu => x.iter().map(|&v| silu(v)).collect(),
            Processor::Softplus => x.iter().map(|&v| softplus(v)).collect(),
            Processor::LayerNorm => {
                let (mean, inv_std) = moments(x);
                x.iter().map(|&v| (v - mean) * inv_std).collect()
            }
        }
    }

    /// Vector-Jacobian product at input `x`.
    pub fn vjp(&self, x: &[f64], grad: &[f64]) -> Vec<f64> {
        match self {
            Processor::None => grad.to_vec(),
            Processor::Sigmoid => x
                .iter()
                .zip(grad)
                .map(|(&v, &g)| {
                    let s = sigmoid(v);
                    g * s * (1.0 - s)
                })
                .collect(),
            Processor::Relu => x
                .iter()
                .zip(grad)
                .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
                .collect(),
            Processor::Silu => x
                .iter()
                .zip(grad)
                .map(|(&v, &g)| {
                    let s = sigmoid(v);
                    g * s * (1.0 + v * (1.0 - s))
                })
                .collect(),
            Processor::Softplus => x.iter().zip(grad).map(|(&v, &g)| g * sigmoid(v)).collect(),
            Processor::LayerNorm => {
                let (mean, inv_std) = moments(x);
                let n = x.len() as f64;
                let y: Vec<f64> = x.iter().map(|&v| (v - mean) * inv_std).collect();
                let g_mean = grad.iter().sum::<f64>() / n;
                let gy_mean = grad.iter().zip(&y).map(|(g, y)| g * y).sum::<f64>() / n;
                grad.iter()
                    .zip(&y)
                    .map(|(&g, &yi)| inv_std * (g - g_mean - yi * gy_mean))
                    .collect()
            }
        }
    }
}

fn moments(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, 1.0 / (var + LAYER_NORM_EPS).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    const ALL: [Processor; 6] = [
        Processor::None,
        Processor::Sigmoid,
        Processor::Relu,
        Processor::Silu,
        Processor::Softplus,
        Processor::LayerNorm,
    ];

    #[test]
    fn pointwise_values() {
        assert_eq!(Processor::Sigmoid.apply(&[0.0]), vec![0.5]);
        assert_eq!(Processor::Relu.apply(&[-1.0, 2.0]), vec![0.0, 2.0]);
        assert!((Processor::Softplus.apply(&[0.0])[0] - 2f64.ln()).abs() < 1e-15);
        assert_eq!(Processor::Silu.apply(&[0.0]), vec![0.0]);
    }

    #[test]
    fn layer_norm_standardizes() {
        let y = Processor::LayerNorm.apply(&[1.0, 2.0, 3.0, 4.0]);
        let mean: f64 = y.iter().sum::<f64>() / 4.0;
        let var: f64 = y.iter().map(|v| v * v).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-4);
    }

    #[test]
    fn vjp_matches_central_differences() {
        let x = [0.3, -1.2, 0.7, 2.1];
        let g = [0.5, -0.25, 1.5, 0.75];
        let h = 1e-6;
        for p in ALL {
            let analytic = p.vjp(&x, &g);
            for i in 0..x.len() {
                let mut xp = x;
                let mut xm = x;
                xp[i] += h;
                xm[i] -= h;
                let fp: f64 = p.apply(&xp).iter().zip(&g).map(|(a, b)| a * b).sum();
                let fm: f64 = p.apply(&xm).iter().zip(&g).map(|(a, b)| a * b).sum();
                let numeric = (fp - fm) / (2.0 * h);
                assert!(
                    (numeric - analytic[i]).abs() < 1e-7,
                    "{p:?} at {i}: {numeric} vs {}",
                    analytic[i]
                );
            }
        }
    }
}
