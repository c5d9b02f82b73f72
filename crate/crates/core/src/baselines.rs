//! Reference count-regression fits: log-link Poisson regression and Gaussian
//! regression on `log(y + 1)`.

use nalgebra::DMatrix;
use statrs::function::beta::beta_reg;
use statrs::function::gamma::ln_gamma;

use crate::error::{Result, StarError};
use crate::inference::LrtResult;
use crate::linalg::{select_columns, WeightedLeastSquares};
use crate::special::norm_log_pdf;

const IRLS_MAX_ITER: usize = 100;
const IRLS_TOL: f64 = 1e-12;

fn dot_row(x: &DMatrix<f64>, i: usize, beta: &[f64]) -> f64 {
    beta.iter().enumerate().map(|(k, b)| x[(i, k)] * b).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoissonFit {
    pub coef: Vec<f64>,
    pub loglik: f64,
    pub converged: bool,
    pub n_iter: usize,
}

impl PoissonFit {
    pub fn mean(&self, x: &DMatrix<f64>) -> Vec<f64> {
        (0..x.nrows()).map(|i| dot_row(x, i, &self.coef).exp()).collect()
    }

    pub fn log_likelihood(&self, x: &DMatrix<f64>, y: &[u32]) -> f64 {
        poisson_loglik(&self.mean(x), y)
    }
}

pub fn poisson_loglik(mean: &[f64], y: &[u32]) -> f64 {
    mean.iter()
        .zip(y)
        .map(|(&m, &yi)| {
            let yf = yi as f64;
            let term = if yi == 0 { 0.0 } else { yf * m.ln() };
            term - m - ln_gamma(yf + 1.0)
        })
        .sum()
}

/// Poisson regression with log link by iteratively reweighted least squares.
pub fn fit_poisson_irls(x: &DMatrix<f64>, y: &[u32]) -> Result<PoissonFit> {
    if x.nrows() != y.len() {
        return Err(StarError::Dimension(format!(
            "{} design rows but {} responses",
            x.nrows(),
            y.len()
        )));
    }
    if y.is_empty() {
        return Err(StarError::EmptySample);
    }
    let n = y.len();
    let mut mu: Vec<f64> = y.iter().map(|&v| v as f64 + 0.1).collect();
    let mut eta: Vec<f64> = mu.iter().map(|m| m.ln()).collect();
    let mut coef = vec![0.0; x.ncols()];
    let mut ll = f64::NEG_INFINITY;
    let mut converged = false;
    let mut n_iter = 0;
    while n_iter < IRLS_MAX_ITER {
        n_iter += 1;
        let z: Vec<f64> = (0..n).map(|i| eta[i] + (y[i] as f64 - mu[i]) / mu[i]).collect();
        coef = WeightedLeastSquares::new(x, Some(&mu))?.solve(&z)?;
        eta = (0..n).map(|i| dot_row(x, i, &coef)).collect();
        mu = eta.iter().map(|e| e.exp()).collect();
        if mu.iter().any(|m| !m.is_finite() || *m <= 0.0) {
            break;
        }
        let next = poisson_loglik(&mu, y);
        if (next - ll).abs() < IRLS_TOL * (1.0 + next.abs()) {
            ll = next;
            converged = true;
            break;
        }
        ll = next;
    }
    Ok(PoissonFit {
        coef,
        loglik: ll,
        converged,
        n_iter,
    })
}

/// Single-column-drop likelihood-ratio p-values for a Poisson fit.
pub fn poisson_p_values(full: &PoissonFit, x: &DMatrix<f64>, y: &[u32]) -> Result<Vec<f64>> {
    (0..x.ncols())
        .map(|k| {
            let keep: Vec<usize> = (0..x.ncols()).filter(|&j| j != k).collect();
            let restricted = fit_poisson_irls(&select_columns(x, &keep), y)?;
            LrtResult::from_logliks(full.loglik, restricted.loglik, 1).map(|r| r.p_value)
        })
        .collect()
}

/// Gaussian linear model for `log(y + 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussLogFit {
    pub coef: Vec<f64>,
    /// Maximum-likelihood residual scale `sqrt(RSS / n)`.
    pub sigma: f64,
    /// Count-scale log-likelihood (includes the change-of-variables term).
    pub loglik: f64,
    /// Two-sided t-test p-values with `n - p` degrees of freedom.
    pub p_values: Vec<f64>,
}

impl GaussLogFit {
    /// Back-transformed means `exp(mu + sigma^2 / 2) - 1`.
    pub fn mean(&self, x: &DMatrix<f64>) -> Vec<f64> {
        let half_var = 0.5 * self.sigma * self.sigma;
        (0..x.nrows())
            .map(|i| (dot_row(x, i, &self.coef) + half_var).exp() - 1.0)
            .collect()
    }

    pub fn log_likelihood(&self, x: &DMatrix<f64>, y: &[u32]) -> f64 {
        (0..x.nrows())
            .map(|i| {
                let ly = (y[i] as f64 + 1.0).ln();
                let r = (ly - dot_row(x, i, &self.coef)) / self.sigma;
                norm_log_pdf(r) - self.sigma.ln() - ly
            })
            .sum()
    }
}

/// Two-sided Student-t tail probability.
fn t_two_sided(t: f64, df: f64) -> f64 {
    if !t.is_finite() {
        return 0.0;
    }
    beta_reg(0.5 * df, 0.5, df / (df + t * t))
}

pub fn fit_gauss_log(x: &DMatrix<f64>, y: &[u32]) -> Result<GaussLogFit> {
    let (n, p) = x.shape();
    if n != y.len() {
        return Err(StarError::Dimension(format!("{n} design rows but {} responses", y.len())));
    }
    if y.is_empty() {
        return Err(StarError::EmptySample);
    }
    let ly: Vec<f64> = y.iter().map(|&v| (v as f64 + 1.0).ln()).collect();
    let coef = WeightedLeastSquares::new(x, None)?.solve(&ly)?;
    let rss: f64 = (0..n).map(|i| (ly[i] - dot_row(x, i, &coef)).powi(2)).sum();
    let sigma = (rss / n as f64).sqrt();
    let p_values = if n > p && rss > 0.0 {
        let df = (n - p) as f64;
        let s2 = rss / df;
        let xtx = x.transpose() * x;
        let inv = xtx
            .try_inverse()
            .ok_or(StarError::SingularDesign { columns: Vec::new() })?;
        (0..p)
            .map(|k| t_two_sided(coef[k] / (s2 * inv[(k, k)]).sqrt(), df))
            .collect()
    } else {
        vec![f64::NAN; p]
    };
    let mut fit = GaussLogFit {
        coef,
        sigma,
        loglik: 0.0,
        p_values,
    };
    fit.loglik = if sigma > 0.0 {
        fit.log_likelihood(x, y)
    } else {
        f64::INFINITY
    };
    Ok(fit)
}
