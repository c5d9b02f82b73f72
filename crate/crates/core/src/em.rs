//! Maximum likelihood for `(theta, sigma)` by EM: truncated-normal moments of
//! the latent data in the E-step, weighted least squares in the M-step.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, StarError};
use crate::linalg::WeightedLeastSquares;
use crate::model::StarModel;
use crate::rounding::RoundingScheme;
use crate::special::{log_norm_cdf_diff, standard_truncated};
use crate::transform::{
    box_cox_transform, fit_nonparametric_transform, mark_estimated, parametric_cdf_transform,
    CountFamily, Transformation,
};

/// Latent variance floor; reaching it on two consecutive iterations aborts.
pub const SIGMA2_FLOOR: f64 = 1e-10;
/// Lower bound on the initial latent standard deviation.
const SIGMA_INIT_FLOOR: f64 = 1e-3;
const POLISH_STEPS: usize = 10;
const POLISH_GRAD_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmConfig {
    /// Stop once the log-likelihood changes by less than this.
    pub tol: f64,
    pub max_iter: usize,
    pub n_starts: usize,
    pub seed: u64,
    /// Finish a converged run with Newton steps on the log-likelihood so the
    /// score is negligible (EM itself converges only linearly).
    pub polish: bool,
}

impl EmConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            tol: 1e-10,
            max_iter: 500,
            n_starts: 1,
            seed,
            polish: true,
        }
    }

    pub fn with_tol(self, tol: f64) -> Self {
        Self { tol, ..self }
    }

    pub fn with_max_iter(self, max_iter: usize) -> Self {
        Self { max_iter, ..self }
    }

    pub fn with_starts(self, n_starts: usize) -> Self {
        Self { n_starts, ..self }
    }

    pub fn with_polish(self, polish: bool) -> Self {
        Self { polish, ..self }
    }

    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(StarError::Domain(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 || self.n_starts == 0 {
            return Err(StarError::Domain("max_iter and n_starts must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: StarModel,
    pub loglik: f64,
    /// Log-likelihood at the initial values, one entry per EM iteration,
    /// then one per accepted Newton refinement step.
    pub loglik_trace: Vec<f64>,
    pub converged: bool,
    /// EM iterations (refinement steps not included).
    pub n_iter: usize,
    pub n_obs: usize,
    /// Coefficients + `sigma` + transformation parameters.
    pub n_params: usize,
    pub aic: f64,
    pub bic: f64,
}

impl FitResult {
    fn new(model: StarModel, trace: Vec<f64>, converged: bool, n_iter: usize, n_obs: usize) -> Self {
        let loglik = *trace.last().expect("trace is never empty");
        let n_params = model.n_coef() + 1 + model.transform.n_params();
        let k = n_params as f64;
        Self {
            model,
            loglik,
            loglik_trace: trace,
            converged,
            n_iter,
            n_obs,
            n_params,
            aic: -2.0 * loglik + 2.0 * k,
            bic: -2.0 * loglik + k * (n_obs as f64).ln(),
        }
    }
}

/// Conditional moments `E[z_i*]` and `E[z_i*^2]` given the observed counts.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentMoments {
    pub z1: Vec<f64>,
    pub z2: Vec<f64>,
}

/// The fixed ingredients of a fit: transformed cells `g(A_{y_i})` and
/// per-observation weights.
#[derive(Debug, Clone)]
pub(crate) struct Cells {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub weights: Option<Vec<f64>>,
}

impl Cells {
    pub fn new(
        y: &[u32],
        transform: &Transformation,
        scheme: &RoundingScheme,
        weights: Option<&[f64]>,
    ) -> Result<Self> {
        if let Some(w) = weights {
            if w.len() != y.len() {
                return Err(StarError::Dimension(format!(
                    "{} weights for {} observations",
                    w.len(),
                    y.len()
                )));
            }
            if w.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
                return Err(StarError::Domain("weights must be positive and finite".into()));
            }
        }
        let mut lower = Vec::with_capacity(y.len());
        let mut upper = Vec::with_capacity(y.len());
        for (i, &yi) in y.iter().enumerate() {
            scheme.check_response(i, yi as i64)?;
            let (lo, hi) = transform.cell(scheme, yi);
            if !(lo < hi) {
                return Err(StarError::DegenerateTruncation { row: Some(i) });
            }
            lower.push(lo);
            upper.push(hi);
        }
        Ok(Self {
            lower,
            upper,
            weights: weights.map(<[f64]>::to_vec),
        })
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn scale(&self, sigma: f64, i: usize) -> f64 {
        match &self.weights {
            Some(w) => sigma / w[i].sqrt(),
            None => sigma,
        }
    }

    fn standardized(&self, i: usize, mu: f64, s: f64) -> (f64, f64) {
        ((self.lower[i] - mu) / s, (self.upper[i] - mu) / s)
    }

    pub fn loglik(&self, mu: &[f64], sigma: f64) -> f64 {
        (0..self.len())
            .map(|i| {
                let (a, b) = self.standardized(i, mu[i], self.scale(sigma, i));
                log_norm_cdf_diff(a, b)
            })
            .sum()
    }

    pub fn e_step(&self, mu: &[f64], sigma: f64) -> Result<LatentMoments> {
        let n = self.len();
        let mut z1 = Vec::with_capacity(n);
        let mut z2 = Vec::with_capacity(n);
        for i in 0..n {
            let s = self.scale(sigma, i);
            let (a, b) = self.standardized(i, mu[i], s);
            let (m, v) =
                standard_truncated(a, b).ok_or(StarError::DegenerateTruncation { row: Some(i) })?;
            let first = mu[i] + s * m;
            z1.push(first);
            z2.push(first * first + s * s * v);
        }
        Ok(LatentMoments { z1, z2 })
    }

    /// Gradient of the log-likelihood in `(theta, sigma)`.
    pub fn score(&self, x: &DMatrix<f64>, mu: &[f64], sigma: f64) -> Vec<f64> {
        let p = x.ncols();
        let mut grad = vec![0.0; p + 1];
        for i in 0..self.len() {
            let s = self.scale(sigma, i);
            let (a, b) = self.standardized(i, mu[i], s);
            let Some((m, v)) = standard_truncated(a, b) else {
                continue;
            };
            let d_mu = m / s;
            for (k, g) in grad.iter_mut().take(p).enumerate() {
                *g += x[(i, k)] * d_mu;
            }
            grad[p] += (v + m * m - 1.0) / sigma;
        }
        grad
    }

    /// Moment-style starting latent values: cell midpoints on the latent
    /// scale, with an open end replaced by the finite edge moved one median
    /// cell width outward.
    pub fn midpoints(&self) -> Vec<f64> {
        let mut widths: Vec<f64> = self
            .lower
            .iter()
            .zip(&self.upper)
            .filter(|(l, u)| l.is_finite() && u.is_finite())
            .map(|(l, u)| u - l)
            .collect();
        let width = if widths.is_empty() {
            1.0
        } else {
            widths.sort_by(f64::total_cmp);
            widths[widths.len() / 2]
        };
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(&l, &u)| match (l.is_finite(), u.is_finite()) {
                (true, true) => 0.5 * (l + u),
                (false, true) => u - 0.5 * width,
                (true, false) => l + 0.5 * width,
                (false, false) => 0.0,
            })
            .collect()
    }
}

fn linear_predictor(x: &DMatrix<f64>, theta: &[f64], offset: Option<&[f64]>) -> Vec<f64> {
    (0..x.nrows())
        .map(|i| {
            let base = offset.map_or(0.0, |o| o[i]);
            theta.iter().enumerate().fold(base, |acc, (k, b)| acc + x[(i, k)] * b)
        })
        .collect()
}

/// E-step: truncated-normal moments of each latent `z_i*` under `model`.
pub fn e_step(model: &StarModel, x: &DMatrix<f64>, y: &[u32]) -> Result<LatentMoments> {
    check_dims(x, y, model.n_coef())?;
    let cells = Cells::new(y, &model.transform, &model.scheme, model.weights.as_deref())?;
    let mu = linear_predictor(x, &model.theta, None);
    cells.e_step(&mu, model.sigma)
}

fn sigma2_update(mu: &[f64], moments: &LatentMoments, weights: Option<&[f64]>) -> f64 {
    let n = mu.len() as f64;
    let total: f64 = (0..mu.len())
        .map(|i| {
            let w = weights.map_or(1.0, |w| w[i]);
            w * (moments.z2[i] - 2.0 * mu[i] * moments.z1[i] + mu[i] * mu[i])
        })
        .sum();
    total / n
}

/// M-step: `theta` by weighted least squares on `z1`, then the closed-form
/// `sigma^2 = n^{-1} sum_i w_i (z2_i - 2 mu_i z1_i + mu_i^2)`.
pub fn m_step(
    x: &DMatrix<f64>,
    moments: &LatentMoments,
    weights: Option<&[f64]>,
) -> Result<(Vec<f64>, f64)> {
    let solver = WeightedLeastSquares::new(x, weights)?;
    let theta = solver.solve(&moments.z1)?;
    let mu = linear_predictor(x, &theta, None);
    let sigma2 = sigma2_update(&mu, moments, weights);
    // Anything at rounding level relative to the second moments is zero.
    let scale = moments.z2.iter().map(|v| v.abs()).sum::<f64>() / mu.len() as f64;
    if !(sigma2 > 16.0 * f64::EPSILON * scale) {
        return Err(StarError::NonPositiveVariance(sigma2));
    }
    Ok((theta, sigma2))
}

fn check_dims(x: &DMatrix<f64>, y: &[u32], p: usize) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(StarError::Dimension(format!(
            "{} design rows but {} responses",
            x.nrows(),
            y.len()
        )));
    }
    if x.ncols() != p {
        return Err(StarError::Dimension(format!(
            "design has {} columns, expected {p}",
            x.ncols()
        )));
    }
    if y.is_empty() {
        return Err(StarError::EmptySample);
    }
    Ok(())
}

/// Extra controls for [`fit_em_with`].
#[derive(Debug, Clone, Default)]
pub struct FitOptions {
    /// Known component added to every linear predictor (e.g. a coefficient
    /// held fixed while profiling).
    pub offset: Option<Vec<f64>>,
    /// Starting `(theta, sigma)`; overrides the default initialization for
    /// the first start.
    pub start: Option<(Vec<f64>, f64)>,
}

struct RunOutcome {
    theta: Vec<f64>,
    sigma: f64,
    trace: Vec<f64>,
    converged: bool,
    n_iter: usize,
}

struct Problem<'a> {
    x: &'a DMatrix<f64>,
    cells: Cells,
    solver: WeightedLeastSquares,
    offset: Option<&'a [f64]>,
}

impl Problem<'_> {
    fn mu(&self, theta: &[f64]) -> Vec<f64> {
        linear_predictor(self.x, theta, self.offset)
    }

    fn default_start(&self) -> Result<(Vec<f64>, f64)> {
        let mut target = self.cells.midpoints();
        if let Some(o) = self.offset {
            for (t, oi) in target.iter_mut().zip(o) {
                *t -= oi;
            }
        }
        let theta = self.solver.solve(&target)?;
        let mu = self.mu(&theta);
        let n = mu.len() as f64;
        let w = self.cells.weights.as_deref();
        let rss: f64 = self
            .cells
            .midpoints()
            .iter()
            .zip(&mu)
            .enumerate()
            .map(|(i, (z, m))| w.map_or(1.0, |w| w[i]) * (z - m) * (z - m))
            .sum();
        let sigma = (rss / n).sqrt().max(SIGMA_INIT_FLOOR);
        Ok((theta, sigma))
    }

    fn loglik_at(&self, v: &[f64]) -> f64 {
        let p = v.len() - 1;
        self.cells.loglik(&self.mu(&v[..p]), v[p])
    }

    fn score_at(&self, v: &[f64]) -> Vec<f64> {
        let p = v.len() - 1;
        self.cells.score(self.x, &self.mu(&v[..p]), v[p])
    }

    /// Damped Newton ascent in `(theta, sigma)` from an EM solution. Every
    /// accepted step raises the log-likelihood and is appended to `trace`.
    fn polish(&self, theta: Vec<f64>, sigma: f64, trace: &mut Vec<f64>) -> (Vec<f64>, f64) {
        let mut v = theta;
        v.push(sigma);
        let dim = v.len();
        let mut ll = *trace.last().expect("trace is never empty");
        for _ in 0..POLISH_STEPS {
            let grad = self.score_at(&v);
            if grad.iter().all(|g| g.abs() < POLISH_GRAD_TOL) {
                break;
            }
            let mut neg_hess = DMatrix::zeros(dim, dim);
            for k in 0..dim {
                let h = 1e-6 * (1.0 + v[k].abs());
                let mut up = v.clone();
                up[k] += h;
                let mut down = v.clone();
                down[k] -= h;
                let (gu, gd) = (self.score_at(&up), self.score_at(&down));
                for j in 0..dim {
                    neg_hess[(j, k)] = -(gu[j] - gd[j]) / (2.0 * h);
                }
            }
            let neg_hess = (&neg_hess + neg_hess.transpose()) * 0.5;
            let Some(chol) = neg_hess.cholesky() else {
                break;
            };
            let step = chol.solve(&nalgebra::DVector::from_vec(grad));
            let mut t = 1.0;
            let mut accepted = None;
            for _ in 0..30 {
                let cand: Vec<f64> = v.iter().zip(step.iter()).map(|(a, d)| a + t * d).collect();
                if cand[dim - 1] > 0.0 {
                    let cand_ll = self.loglik_at(&cand);
                    if cand_ll >= ll {
                        accepted = Some((cand, cand_ll));
                        break;
                    }
                }
                t *= 0.5;
            }
            let Some((cand, cand_ll)) = accepted else {
                break;
            };
            v = cand;
            ll = cand_ll;
            trace.push(ll);
        }
        let sigma = v.pop().expect("sigma entry");
        (v, sigma)
    }

    fn run(&self, theta0: Vec<f64>, sigma0: f64, config: &EmConfig) -> Result<RunOutcome> {
        let mut theta = theta0;
        let mut sigma = sigma0;
        let mut mu = self.mu(&theta);
        let mut ll = self.cells.loglik(&mu, sigma);
        let mut trace = vec![ll];
        let mut floor_hits = 0;
        let mut converged = false;
        let mut n_iter = 0;
        let weights = self.cells.weights.as_deref();
        while n_iter < config.max_iter {
            n_iter += 1;
            let moments = self.cells.e_step(&mu, sigma)?;
            let target: Vec<f64> = match self.offset {
                Some(o) => moments.z1.iter().zip(o).map(|(z, oi)| z - oi).collect(),
                None => moments.z1.clone(),
            };
            theta = self.solver.solve(&target)?;
            mu = self.mu(&theta);
            let raw = sigma2_update(&mu, &moments, weights);
            if !raw.is_finite() {
                return Err(StarError::NonPositiveVariance(raw));
            }
            let sigma2 = if raw < SIGMA2_FLOOR {
                floor_hits += 1;
                if floor_hits >= 2 {
                    return Err(StarError::VarianceCollapse { iteration: n_iter });
                }
                SIGMA2_FLOOR
            } else {
                floor_hits = 0;
                raw
            };
            sigma = sigma2.sqrt();
            let next = self.cells.loglik(&mu, sigma);
            trace.push(next);
            let change = (next - ll).abs();
            ll = next;
            if change < config.tol {
                converged = true;
                break;
            }
        }
        if converged && config.polish {
            let (t, s) = self.polish(theta, sigma, &mut trace);
            theta = t;
            sigma = s;
        }
        Ok(RunOutcome {
            theta,
            sigma,
            trace,
            converged,
            n_iter,
        })
    }
}

/// Fit `(theta, sigma)` by EM with the transformation held fixed.
pub fn fit_em(
    x: &DMatrix<f64>,
    y: &[u32],
    transform: &Transformation,
    scheme: &RoundingScheme,
    weights: Option<&[f64]>,
    config: &EmConfig,
) -> Result<FitResult> {
    fit_em_with(x, y, transform, scheme, weights, config, &FitOptions::default())
}

pub fn fit_em_with(
    x: &DMatrix<f64>,
    y: &[u32],
    transform: &Transformation,
    scheme: &RoundingScheme,
    weights: Option<&[f64]>,
    config: &EmConfig,
    options: &FitOptions,
) -> Result<FitResult> {
    config.validate()?;
    check_dims(x, y, x.ncols())?;
    if let Some(o) = &options.offset {
        if o.len() != y.len() {
            return Err(StarError::Dimension(format!(
                "offset has length {}, expected {}",
                o.len(),
                y.len()
            )));
        }
    }
    let problem = Problem {
        x,
        cells: Cells::new(y, transform, scheme, weights)?,
        solver: WeightedLeastSquares::new(x, weights)?,
        offset: options.offset.as_deref(),
    };
    let (theta0, sigma0) = match &options.start {
        Some((t, s)) => {
            if t.len() != x.ncols() || !(*s > 0.0) {
                return Err(StarError::Dimension("invalid starting values".into()));
            }
            (t.clone(), *s)
        }
        None => problem.default_start()?,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best: Option<RunOutcome> = None;
    for start in 0..config.n_starts {
        let (theta, sigma) = if start == 0 {
            (theta0.clone(), sigma0)
        } else {
            random_start(&theta0, sigma0, &mut rng)
        };
        let outcome = problem.run(theta, sigma, config)?;
        let better = best
            .as_ref()
            .is_none_or(|b| outcome.trace.last() > b.trace.last());
        if better {
            best = Some(outcome);
        }
    }
    let best = best.expect("at least one start");
    let model = StarModel::new(
        best.theta,
        best.sigma,
        transform.clone(),
        scheme.clone(),
        weights.map(<[f64]>::to_vec),
    )?;
    Ok(FitResult::new(model, best.trace, best.converged, best.n_iter, y.len()))
}

/// Dispersed starting values around the default initialization.
fn random_start<R: Rng>(theta0: &[f64], sigma0: f64, rng: &mut R) -> (Vec<f64>, f64) {
    let theta = theta0
        .iter()
        .map(|t| {
            let e: f64 = rng.sample(StandardNormal);
            t + sigma0 * e
        })
        .collect();
    let sigma = sigma0 * (2.0 * rng.random::<f64>() - 1.0).exp();
    (theta, sigma)
}

/// Analytic gradient of the log-likelihood in `(theta, sigma)` at `model`.
pub fn score(model: &StarModel, x: &DMatrix<f64>, y: &[u32]) -> Result<Vec<f64>> {
    check_dims(x, y, model.n_coef())?;
    let cells = Cells::new(y, &model.transform, &model.scheme, model.weights.as_deref())?;
    let mu = linear_predictor(x, &model.theta, None);
    Ok(cells.score(x, &mu, model.sigma))
}

/// How the transformation is obtained before EM.
#[derive(Debug, Clone, PartialEq)]
pub enum TransformSpec {
    /// Smoothed rescaled ECDF of the response.
    Nonparametric,
    /// Box-Cox with `lambda` chosen by profiling the likelihood over
    /// `{0, 0.01, ..., 1.50}`.
    BoxCoxProfile,
    /// Box-Cox with a fixed exponent (0 = log, 0.5 = sqrt, 1 = identity).
    BoxCox(f64),
    /// Moment-matched parametric CDF.
    Parametric(CountFamily),
    /// A transformation supplied by the caller.
    Given(Transformation),
}

impl TransformSpec {
    pub fn build(
        &self,
        y: &[u32],
        scheme: &RoundingScheme,
        weights: Option<&[f64]>,
    ) -> Result<Option<Transformation>> {
        Ok(match self {
            TransformSpec::Nonparametric => Some(fit_nonparametric_transform(y, scheme, weights)?),
            TransformSpec::BoxCox(lambda) => Some(box_cox_transform(*lambda, (0.0, 1.0), scheme)?),
            TransformSpec::Parametric(family) => Some(parametric_cdf_transform(*family, y, scheme)?),
            TransformSpec::Given(t) => Some(t.clone()),
            TransformSpec::BoxCoxProfile => None,
        })
    }
}

/// Grid searched when profiling the Box-Cox exponent.
pub fn box_cox_grid() -> Vec<f64> {
    (0..=150).map(|k| k as f64 / 100.0).collect()
}

/// Tolerance for the grid sweep; the selected exponent is refit at the
/// configured tolerance.
const PROFILE_TOL: f64 = 1e-6;

/// Estimate the transformation from `y`, then fit by EM.
pub fn fit_star(
    x: &DMatrix<f64>,
    y: &[u32],
    spec: &TransformSpec,
    scheme: &RoundingScheme,
    weights: Option<&[f64]>,
    config: &EmConfig,
) -> Result<FitResult> {
    if let Some(transform) = spec.build(y, scheme, weights)? {
        return fit_em(x, y, &transform, scheme, weights, config);
    }
    let sweep = config
        .with_tol(config.tol.max(PROFILE_TOL))
        .with_starts(1)
        .with_polish(false);
    let mut start: Option<(Vec<f64>, f64)> = None;
    let mut best: Option<(f64, f64, (Vec<f64>, f64))> = None;
    for lambda in box_cox_grid() {
        let transform = box_cox_transform(lambda, (0.0, 1.0), scheme)?;
        // Warm starts are only valid within one scale; the first fit of each
        // run initializes from the data.
        let options = FitOptions {
            offset: None,
            start: start.clone(),
        };
        let fit = fit_em_with(x, y, &transform, scheme, weights, &sweep, &options)?;
        start = Some((fit.model.theta.clone(), fit.model.sigma));
        if best.as_ref().is_none_or(|b| fit.loglik > b.0) {
            best = Some((fit.loglik, lambda, (fit.model.theta.clone(), fit.model.sigma)));
        }
    }
    let (_, lambda, warm) = best.expect("grid is non-empty");
    let transform = mark_estimated(box_cox_transform(lambda, (0.0, 1.0), scheme)?);
    let options = FitOptions {
        offset: None,
        start: Some(warm),
    };
    fit_em_with(x, y, &transform, scheme, weights, config, &options)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::{norm_cdf, norm_pdf};

    fn design(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, 3, |_, j| {
            if j == 0 {
                1.0
            } else {
                rng.sample::<f64, _>(StandardNormal)
            }
        })
    }

    fn simulated(n: usize, seed: u64) -> (DMatrix<f64>, Vec<u32>, Transformation, RoundingScheme) {
        let x = design(n, seed);
        let scheme = RoundingScheme::bounded(20).unwrap();
        let g = box_cox_transform(0.0, (0.0, 1.0), &scheme).unwrap();
        let truth = StarModel::new(vec![1.2, 0.4, -0.3], 0.6, g.clone(), scheme.clone(), None)
            .unwrap();
        let y = truth.sample(&x, seed + 100).unwrap();
        (x, y, g, scheme)
    }

    #[test]
    fn e_step_symmetric_cell_and_one_sided() {
        let scheme = RoundingScheme::unbounded();
        let g = box_cox_transform(1.0, (0.0, 1.0), &scheme).unwrap();
        // identity: cell of y = 3 is [2, 3) in z, centre 2.5
        let m = StarModel::new(vec![2.5], 0.4, g, scheme, None).unwrap();
        let x = DMatrix::from_element(2, 1, 1.0);
        let mo = e_step(&m, &x, &[3, 0]).unwrap();
        assert!((mo.z1[0] - 2.5).abs() < 1e-12);
        assert!(mo.z1[1] < 0.0);
        assert!(mo.z2[0] > mo.z1[0] * mo.z1[0]);
    }

    #[test]
    fn e_step_matches_quadrature() {
        let (x, y, g, scheme) = simulated(12, 3);
        let m = StarModel::new(vec![1.0, 0.2, 0.1], 0.8, g, scheme, None).unwrap();
        let mo = e_step(&m, &x, &y).unwrap();
        for i in 0..y.len() {
            let mu = m.mean_row(&x, i);
            let (lo, hi) = m.cell(y[i]);
            let lo = lo.max(mu - 14.0 * 0.8);
            let hi = hi.min(mu + 14.0 * 0.8);
            let steps = 40_000;
            let h = (hi - lo) / steps as f64;
            let (mut p0, mut p1, mut p2) = (0.0, 0.0, 0.0);
            for k in 0..=steps {
                let z = lo + k as f64 * h;
                let c = if k == 0 || k == steps { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
                let d = c * norm_pdf((z - mu) / 0.8);
                p0 += d;
                p1 += d * z;
                p2 += d * z * z;
            }
            assert!((mo.z1[i] - p1 / p0).abs() < 1e-8);
            assert!((mo.z2[i] - p2 / p0).abs() < 1e-8);
        }
    }

    #[test]
    fn m_step_algebra() {
        let x = design(30, 5);
        let theta0 = [0.5, -1.0, 2.0];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e: Vec<f64> = (0..30).map(|_| 0.1 * rng.sample::<f64, _>(StandardNormal)).collect();
        let z1: Vec<f64> = (0..30)
            .map(|i| (0..3).map(|k| x[(i, k)] * theta0[k]).sum::<f64>() + e[i])
            .collect();
        let z2: Vec<f64> = z1.iter().map(|z| z * z + 0.25).collect();
        let moments = LatentMoments { z1: z1.clone(), z2 };
        let (theta, sigma2) = m_step(&x, &moments, None).unwrap();
        let resid: Vec<f64> = (0..30)
            .map(|i| z1[i] - (0..3).map(|k| x[(i, k)] * theta[k]).sum::<f64>())
            .collect();
        let mse = resid.iter().map(|r| r * r).sum::<f64>() / 30.0;
        assert!((sigma2 - (mse + 0.25)).abs() < 1e-12);

        let exact = LatentMoments {
            z1: (0..30).map(|i| x[(i, 1)]).collect(),
            z2: (0..30).map(|i| x[(i, 1)] * x[(i, 1)]).collect(),
        };
        assert!(matches!(
            m_step(&x, &exact, None),
            Err(StarError::NonPositiveVariance(_))
        ));

        let ones = DMatrix::from_element(4, 1, 1.0);
        let mo = LatentMoments {
            z1: vec![1.0, 2.0, 3.0, 4.0],
            z2: vec![2.0, 5.0, 10.0, 17.0],
        };
        let (t, _) = m_step(&ones, &mo, Some(&[1.0, 1.0, 2.0, 4.0])).unwrap();
        assert!((t[0] - (1.0 + 2.0 + 6.0 + 16.0) / 8.0).abs() < 1e-14);
    }

    #[test]
    fn trace_is_monotone_and_converges() {
        let (x, y, g, scheme) = simulated(300, 7);
        let fit = fit_em(&x, &y, &g, &scheme, None, &EmConfig::new(1)).unwrap();
        assert!(fit.converged);
        for w in fit.loglik_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-8);
        }
        assert!(fit.loglik_trace.len() > fit.n_iter);
        let g = score(&fit.model, &x, &y).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-6), "{g:?}");
        let direct = fit.model.log_likelihood(&x, &y).unwrap();
        assert!((direct - fit.loglik).abs() < 1e-9);
        assert!((fit.aic - (-2.0 * fit.loglik + 8.0)).abs() < 1e-9);
    }

    #[test]
    fn infinite_tolerance_stops_after_one_iteration() {
        let (x, y, g, scheme) = simulated(50, 8);
        let config = EmConfig::new(1).with_tol(f64::INFINITY);
        let fit = fit_em(&x, &y, &g, &scheme, None, &config).unwrap();
        assert!(fit.converged);
        assert_eq!(fit.n_iter, 1);
    }

    #[test]
    fn score_matches_finite_differences() {
        let (x, y, g, scheme) = simulated(80, 9);
        let m = StarModel::new(vec![1.0, 0.3, -0.1], 0.7, g, scheme, None).unwrap();
        let grad = score(&m, &x, &y).unwrap();
        let h = 1e-6;
        for k in 0..4 {
            let bump = |d: f64| {
                let mut mm = m.clone();
                if k < 3 {
                    mm.theta[k] += d;
                } else {
                    mm.sigma += d;
                }
                mm.log_likelihood(&x, &y).unwrap()
            };
            let fd = (bump(h) - bump(-h)) / (2.0 * h);
            assert!((fd - grad[k]).abs() < 1e-5 * (1.0 + fd.abs()), "k={k}: {fd} vs {}", grad[k]);
        }
    }

    #[test]
    fn offset_matches_shifted_intercept() {
        let (x, y, g, scheme) = simulated(100, 10);
        let config = EmConfig::new(1);
        let options = FitOptions {
            offset: Some(vec![0.3; 100]),
            start: None,
        };
        let a = fit_em_with(&x, &y, &g, &scheme, None, &config, &options).unwrap();
        let b = fit_em(&x, &y, &g, &scheme, None, &config).unwrap();
        assert!((a.loglik - b.loglik).abs() < 1e-8);
        assert!((a.model.theta[0] + 0.3 - b.model.theta[0]).abs() < 1e-5);
    }

    #[test]
    fn weight_scaling_leaves_theta() {
        let (x, y, g, scheme) = simulated(120, 11);
        let w: Vec<f64> = (0..120).map(|i| 0.5 + (i % 7) as f64 / 4.0).collect();
        let w3: Vec<f64> = w.iter().map(|v| 3.0 * v).collect();
        let config = EmConfig::new(1);
        let a = fit_em(&x, &y, &g, &scheme, Some(&w), &config).unwrap();
        let b = fit_em(&x, &y, &g, &scheme, Some(&w3), &config).unwrap();
        for (s, t) in a.model.theta.iter().zip(&b.model.theta) {
            assert!((s - t).abs() < 1e-6);
        }
        let ratio = b.model.sigma.powi(2) / a.model.sigma.powi(2);
        assert!((ratio - 3.0).abs() < 1e-5);
    }

    #[test]
    fn zero_cell_probability_formula_at_fit() {
        let (x, y, g, scheme) = simulated(60, 12);
        let fit = fit_em(&x, &y, &g, &scheme, None, &EmConfig::new(2)).unwrap();
        let m = &fit.model;
        let x0: Vec<f64> = (0..3).map(|k| x[(0, k)]).collect();
        let mu = m.linear_predictor(&x0);
        let p0 = m.log_pmf(&x0, 0).unwrap().exp();
        assert!((p0 - norm_cdf((m.cell(0).1 - mu) / m.sigma)).abs() < 1e-14);
    }

    #[test]
    fn box_cox_profile_marks_lambda() {
        let (x, y, _, scheme) = simulated(150, 13);
        let fit = fit_star(&x, &y, &TransformSpec::BoxCoxProfile, &scheme, None, &EmConfig::new(3))
            .unwrap();
        let lambda = fit.model.transform.lambda().unwrap();
        assert!(lambda <= 0.25, "lambda = {lambda}");
        assert_eq!(fit.model.transform.n_params(), 1);
    }
}
