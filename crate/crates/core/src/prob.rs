//! Log-densities used by the probabilistic expansions.

use serde::{Deserialize, Serialize};

use crate::error::{config, Result};

/// Lower clamp for every log-density, roughly `ln` of the smallest normal
/// double. Clamped points get a zero derivative.
pub const LOG_PDF_FLOOR: f64 = -745.0;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum Distribution {
    Gaussian { mean: f64, std: f64 },
    Exponential { rate: f64 },
    Laplace { loc: f64, scale: f64 },
    Cauchy { loc: f64, scale: f64 },
    Chi2 { k: f64 },
    Gamma { shape: f64, scale: f64 },
}

impl Distribution {
    pub fn validate(&self) -> Result<()> {
        let (name, v) = match *self {
            Distribution::Gaussian { std, .. } => ("gaussian std", std),
            Distribution::Exponential { rate } => ("exponential rate", rate),
            Distribution::Laplace { scale, .. } => ("laplace scale", scale),
            Distribution::Cauchy { scale, .. } => ("cauchy scale", scale),
            Distribution::Chi2 { k } => ("chi2 k", k),
            Distribution::Gamma { shape, scale } => {
                if !(scale > 0.0 && scale.is_finite()) {
                    return config(format!("gamma scale must be positive, got {scale}"));
                }
                ("gamma shape", shape)
            }
        };
        if !(v > 0.0 && v.is_finite()) {
            return config(format!("{name} must be positive, got {v}"));
        }
        Ok(())
    }

    /// Supported only on `x >= 0`.
    pub fn needs_positive_input(&self) -> bool {
        matches!(
            self,
            Distribution::Exponential { .. } | Distribution::Chi2 { .. } | Distribution::Gamma { .. }
        )
    }

    pub fn log_pdf(&self, x: f64) -> f64 {
        self.log_pdf_grad(x).0
    }

    /// Log-density and its derivative in `x`, clamped at [`LOG_PDF_FLOOR`].
    pub fn log_pdf_grad(&self, x: f64) -> (f64, f64) {
        let (lp, dlp) = match *self {
            Distribution::Gaussian { mean, std } => {
                let z = (x - mean) / std;
                (-0.5 * LN_2PI - std.ln() - 0.5 * z * z, -z / std)
            }
            Distribution::Exponential { rate } => {
                if x < 0.0 {
                    (f64::NEG_INFINITY, 0.0)
                } else {
                    (rate.ln() - rate * x, -rate)
                }
            }
            Distribution::Laplace { loc, scale } => {
                let diff = x - loc;
                let slope = if diff > 0.0 {
                    -1.0 / scale
                } else if diff < 0.0 {
                    1.0 / scale
                } else {
                    0.0
                };
                (-(2.0 * scale).ln() - diff.abs() / scale, slope)
            }
            Distribution::Cauchy { loc, scale } => {
                let z = (x - loc) / scale;
                (
                    -(std::f64::consts::PI * scale).ln() - (z * z).ln_1p(),
                    -2.0 * z / (scale * (1.0 + z * z)),
                )
            }
            Distribution::Chi2 { k } => {
                if x <= 0.0 {
                    (f64::NEG_INFINITY, 0.0)
                } else {
                    let a = 0.5 * k;
                    (
                        (a - 1.0) * x.ln() - 0.5 * x - a * std::f64::consts::LN_2 - libm::lgamma(a),
                        (a - 1.0) / x - 0.5,
                    )
                }
            }
            Distribution::Gamma { shape, scale } => {
                if x <= 0.0 {
                    (f64::NEG_INFINITY, 0.0)
                } else {
                    (
                        (shape - 1.0) * x.ln() - x / scale - shape * scale.ln() - libm::lgamma(shape),
                        (shape - 1.0) / x - 1.0 / scale,
                    )
                }
            }
        };
        if lp.is_nan() || lp < LOG_PDF_FLOOR {
            (LOG_PDF_FLOOR, 0.0)
        } else {
            (lp, dlp)
        }
    }
}

/// Multivariate normal over a subset of features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mvn {
    pub mean: Vec<f64>,
    /// Row-major `k x k` covariance.
    pub cov: Vec<Vec<f64>>,
}

impl Mvn {
    pub fn standard(k: usize) -> Self {
        let cov = (0..k)
            .map(|i| (0..k).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        Self {
            mean: vec![0.0; k],
            cov,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Lower Cholesky factor, row-major.
    pub fn cholesky(&self) -> Result<Vec<f64>> {
        let k = self.dim();
        if self.cov.len() != k || self.cov.iter().any(|r| r.len() != k) {
            return config(format!("covariance must be {k}x{k}"));
        }
        let mut l = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..=i {
                let mut s = self.cov[i][j];
                for p in 0..j {
                    s -= l[i * k + p] * l[j * k + p];
                }
                if i == j {
                    if !(s > 0.0) {
                        return config("covariance is not positive definite");
                    }
                    l[i * k + i] = s.sqrt();
                } else {
                    l[i * k + j] = s / l[j * k + j];
                }
            }
        }
        Ok(l)
    }

    /// Log-density and gradient given a precomputed Cholesky factor.
    pub fn log_pdf_grad(&self, chol: &[f64], x: &[f64]) -> (f64, Vec<f64>) {
        let k = self.dim();
        // forward solve L z = x - mean
        let mut z = vec![0.0; k];
        for i in 0..k {
            let mut s = x[i] - self.mean[i];
            for p in 0..i {
                s -= chol[i * k + p] * z[p];
            }
            z[i] = s / chol[i * k + i];
        }
        // back solve L^T y = z, so y = cov^-1 (x - mean)
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let mut s = z[i];
            for p in i + 1..k {
                s -= chol[p * k + i] * y[p];
            }
            y[i] = s / chol[i * k + i];
        }
        let log_det: f64 = (0..k).map(|i| 2.0 * chol[i * k + i].ln()).sum();
        let quad: f64 = z.iter().map(|v| v * v).sum();
        let lp = -0.5 * (k as f64 * LN_2PI + log_det + quad);
        if lp.is_nan() || lp < LOG_PDF_FLOOR {
            (LOG_PDF_FLOOR, vec![0.0; k])
        } else {
            (lp, y.into_iter().map(|v| -v).collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn log_pdf_reference_points() {
        let g = Distribution::Gaussian { mean: 0.0, std: 1.0 };
        assert!(close(g.log_pdf(0.0), -0.918_938_533_204_672_7, 1e-12));
        let l = Distribution::Laplace { loc: 0.0, scale: 1.0 };
        assert!(close(l.log_pdf(0.0), -std::f64::consts::LN_2, 1e-12));
        let e = Distribution::Exponential { rate: 1.0 };
        assert!(close(e.log_pdf(1.0), -1.0, 1e-12));
        let c = Distribution::Cauchy { loc: 0.0, scale: 1.0 };
        assert!(close(c.log_pdf(0.0), -std::f64::consts::PI.ln(), 1e-12));
    }

    #[test]
    fn chi2_and_gamma_agree_where_equal() {
        // chi2(k) is gamma(k/2, 2)
        let c = Distribution::Chi2 { k: 3.0 };
        let g = Distribution::Gamma { shape: 1.5, scale: 2.0 };
        for x in [0.1, 0.7, 2.5, 9.0] {
            assert!(close(c.log_pdf(x), g.log_pdf(x), 1e-12));
        }
        // chi2(2) density is exp(-x/2)/2
        let c2 = Distribution::Chi2 { k: 2.0 };
        assert!(close(c2.log_pdf(1.0), -0.5 - std::f64::consts::LN_2, 1e-12));
    }

    #[test]
    fn zero_density_hits_floor() {
        let e = Distribution::Exponential { rate: 1.0 };
        assert_eq!(e.log_pdf_grad(-1.0), (LOG_PDF_FLOOR, 0.0));
        let g = Distribution::Gaussian { mean: 0.0, std: 1e-3 };
        assert_eq!(g.log_pdf(10.0), LOG_PDF_FLOOR);
    }

    #[test]
    fn derivatives_match_differences() {
        let ds = [
            Distribution::Gaussian { mean: 0.3, std: 0.7 },
            Distribution::Exponential { rate: 1.5 },
            Distribution::Laplace { loc: -0.2, scale: 0.5 },
            Distribution::Cauchy { loc: 0.1, scale: 2.0 },
            Distribution::Chi2 { k: 3.0 },
            Distribution::Gamma { shape: 2.5, scale: 0.8 },
        ];
        let h = 1e-6;
        for d in &ds {
            for x in [0.4, 1.3, 2.2] {
                let num = (d.log_pdf(x + h) - d.log_pdf(x - h)) / (2.0 * h);
                let (_, ana) = d.log_pdf_grad(x);
                assert!(close(num, ana, 1e-6), "{d:?} at {x}: {num} vs {ana}");
            }
        }
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(Distribution::Gaussian { mean: 0.0, std: 0.0 }.validate().is_err());
        assert!(Distribution::Gamma {
            shape: 1.0,
            scale: -1.0
        }
        .validate()
        .is_err());
        assert!(Distribution::Chi2 { k: 2.0 }.validate().is_ok());
    }

    #[test]
    fn mvn_standard_bivariate_at_mode() {
        let m = Mvn::standard(2);
        let l = m.cholesky().unwrap();
        let (lp, g) = m.log_pdf_grad(&l, &[0.0, 0.0]);
        assert!(close(lp, -LN_2PI, 1e-12));
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn mvn_matches_explicit_2x2_inverse() {
        let m = Mvn {
            mean: vec![0.5, -1.0],
            cov: vec![vec![2.0, 0.6], vec![0.6, 1.0]],
        };
        let l = m.cholesky().unwrap();
        let x = [1.2, 0.3];
        let (lp, g) = m.log_pdf_grad(&l, &x);
        let det = 2.0 * 1.0 - 0.6 * 0.6;
        let inv = [[1.0 / det, -0.6 / det], [-0.6 / det, 2.0 / det]];
        let d = [x[0] - 0.5, x[1] + 1.0];
        let y = [inv[0][0] * d[0] + inv[0][1] * d[1], inv[1][0] * d[0] + inv[1][1] * d[1]];
        let quad = d[0] * y[0] + d[1] * y[1];
        let expect = -0.5 * (2.0 * LN_2PI + det.ln() + quad);
        assert!(close(lp, expect, 1e-12));
        assert!(close(g[0], -y[0], 1e-12) && close(g[1], -y[1], 1e-12));
    }

    #[test]
    fn mvn_rejects_indefinite() {
        let m = Mvn {
            mean: vec![0.0, 0.0],
            cov: vec![vec![1.0, 2.0], vec![2.0, 1.0]],
        };
        assert!(m.cholesky().is_err());
    }
}
