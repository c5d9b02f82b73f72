//! Simulation study: AR(1) Gaussian designs, the Mixture-CDF STAR and
//! Negative Binomial generators, and a harness comparing STAR fits with the
//! Poisson and Gauss-log baselines on prediction, held-out likelihood and
//! per-coefficient testing.

use std::fmt::Write as _;
use std::io::Write;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{fit_gauss_log, fit_poisson_irls, poisson_p_values};
use crate::em::{fit_star, EmConfig, FitResult, TransformSpec};
use crate::error::{Result, StarError};
use crate::inference::drop_one_lrt;
use crate::io::format_float;
use crate::model::StarModel;
use crate::rounding::RoundingScheme;
use crate::transform::{count_cdf, transform_from_cdf, CountFamily, TransformKind, Transformation};

/// Upper bound of the Mixture-CDF support.
pub const MIXTURE_Y_MAX: u32 = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Generator {
    MixtureCdf,
    Negbin,
}

impl Generator {
    pub fn label(&self) -> &'static str {
        match self {
            Generator::MixtureCdf => "mixture-cdf",
            Generator::Negbin => "negbin",
        }
    }

    /// Rounding scheme used by the STAR fits for this generator.
    pub fn scheme(&self) -> RoundingScheme {
        match self {
            Generator::MixtureCdf => {
                RoundingScheme::bounded(MIXTURE_Y_MAX).expect("positive bound")
            }
            Generator::Negbin => RoundingScheme::unbounded(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    StarNp,
    StarBc,
    StarSqrt,
    Poisson,
    GaussLog,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::StarNp,
        Method::StarBc,
        Method::StarSqrt,
        Method::Poisson,
        Method::GaussLog,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Method::StarNp => "star-np",
            Method::StarBc => "star-bc",
            Method::StarSqrt => "star-sqrt",
            Method::Poisson => "poisson",
            Method::GaussLog => "gauss-log",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.label() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSpec {
    pub generator: Generator,
    pub n: usize,
    pub p: usize,
    pub beta_star: Vec<f64>,
    /// NegBin size `r*`.
    pub r_star: f64,
    /// Latent standard deviation of the Mixture-CDF generator.
    pub sigma_latent: f64,
    pub rho: f64,
    pub n_reps: usize,
    pub n_test: usize,
    pub seed: u64,
    pub alpha: f64,
    pub methods: Vec<Method>,
}

impl SimulationSpec {
    pub fn new(generator: Generator, seed: u64) -> Self {
        let p = 10;
        Self {
            generator,
            n: 500,
            p,
            beta_star: true_coefficients(p).expect("even p"),
            r_star: 3.0,
            sigma_latent: 0.7,
            rho: 0.75,
            n_reps: 100,
            n_test: 1000,
            seed,
            alpha: 0.10,
            methods: Method::ALL.to_vec(),
        }
    }

    /// Change `p` and reset the coefficients to their default pattern.
    pub fn with_p(mut self, p: usize) -> Result<Self> {
        self.beta_star = true_coefficients(p)?;
        self.p = p;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(StarError::Usage(m.to_string()));
        if self.n == 0 || self.n_test == 0 || self.n_reps == 0 || self.p == 0 {
            return bad("n, n_test, n_reps and p must be positive");
        }
        if self.beta_star.len() != self.p + 1 {
            return bad("beta_star must have p + 1 entries (intercept first)");
        }
        if !(self.rho.abs() < 1.0) {
            return bad("rho must lie in (-1, 1)");
        }
        if !(self.r_star > 0.0) || !(self.sigma_latent > 0.0) {
            return bad("r_star and sigma_latent must be positive");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)");
        }
        if self.n <= self.p + 1 {
            return bad("n must exceed the number of coefficients");
        }
        if self.methods.is_empty() {
            return bad("no methods selected");
        }
        Ok(())
    }
}

/// `[log 1.5, log 1.25 x p/2, 0 x p/2]`.
pub fn true_coefficients(p: usize) -> Result<Vec<f64>> {
    if p % 2 != 0 {
        return Err(StarError::Usage(format!("p must be even, got {p}")));
    }
    let mut beta = vec![1.5f64.ln()];
    beta.extend(std::iter::repeat_n(1.25f64.ln(), p / 2));
    beta.extend(std::iter::repeat_n(0.0, p / 2));
    Ok(beta)
}

/// `n` rows with AR(1) correlated standard normal covariates,
/// `Cor(x_j, x_k) = rho^|j-k|`, columns reordered by `perm` and an intercept
/// prepended. Each row is the Cholesky factor of the correlation matrix
/// applied to independent normals, which for AR(1) is the recursion
/// `x_1 = e_1`, `x_j = rho x_{j-1} + sqrt(1 - rho^2) e_j`.
pub fn ar1_design<R: Rng + ?Sized>(n: usize, rho: f64, perm: &[usize], rng: &mut R) -> DMatrix<f64> {
    let p = perm.len();
    let innov = (1.0 - rho * rho).sqrt();
    let mut x = DMatrix::zeros(n, p + 1);
    let mut row = vec![0.0; p];
    for i in 0..n {
        for j in 0..p {
            let e: f64 = rng.sample(StandardNormal);
            row[j] = if j == 0 { e } else { rho * row[j - 1] + innov * e };
        }
        x[(i, 0)] = 1.0;
        for (dest, &src) in perm.iter().enumerate() {
            x[(i, dest + 1)] = row[src];
        }
    }
    x
}

pub fn random_permutation<R: Rng + ?Sized>(p: usize, rng: &mut R) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..p).collect();
    perm.shuffle(rng);
    perm
}

/// Seeded design with a random column permutation.
pub fn make_design(n: usize, p: usize, rho: f64, seed: u64) -> Result<DMatrix<f64>> {
    if n == 0 || p == 0 {
        return Err(StarError::Usage("n and p must be positive".into()));
    }
    if !(rho.abs() < 1.0) {
        return Err(StarError::Usage(format!("rho must lie in (-1, 1), got {rho}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let perm = random_permutation(p, &mut rng);
    Ok(ar1_design(n, rho, &perm, &mut rng))
}

/// CDF on `{0, ..., 30}` of the mixture putting 1/2 mass on Poisson(10),
/// 1/4 uniformly on the heaps `{5, 10, 15, 20, 25}` and 1/4 uniformly on
/// the boundaries `{0, 30}`.
pub fn mixture_cdf() -> Vec<f64> {
    let pois = count_cdf(CountFamily::Poisson, 10.0, f64::INFINITY, MIXTURE_Y_MAX);
    (0..=MIXTURE_Y_MAX)
        .map(|j| {
            let heaps = (1..=5).filter(|h| 5 * h <= j).count() as f64;
            let bounds = if j >= MIXTURE_Y_MAX { 2.0 } else { 1.0 };
            0.5 * pois[j as usize] + 0.25 * heaps / 5.0 + 0.25 * bounds / 2.0
        })
        .collect()
}

/// The Mixture-CDF transformation: the mixture CDF mapped through
/// `Phi^{-1}` at the cell edges `a_{j+1}`, `j = 0..29`, and smoothed by the
/// monotone spline (anchors `mu_z = 0`, `sigma_z = 1`).
pub fn mixture_transform() -> Transformation {
    let scheme = Generator::MixtureCdf.scheme();
    let cdf = mixture_cdf();
    transform_from_cdf(
        TransformKind::Cdf,
        &cdf[..MIXTURE_Y_MAX as usize],
        (0.0, 1.0),
        &scheme,
    )
    .expect("mixture CDF is strictly increasing inside (0, 1)")
}

/// The data-generating STAR model of the Mixture-CDF design.
pub fn mixture_model(beta: &[f64], sigma: f64) -> Result<StarModel> {
    StarModel::new(
        beta.to_vec(),
        sigma,
        mixture_transform(),
        Generator::MixtureCdf.scheme(),
        None,
    )
}

/// Exact mean `sum_j j P(y = j)` of a bounded STAR model.
fn full_mean(model: &StarModel, mu: f64) -> f64 {
    let y_max = model.scheme.y_max().expect("bounded scheme");
    model
        .pmf_table(mu, model.sigma, y_max)
        .iter()
        .enumerate()
        .map(|(j, p)| j as f64 * p)
        .sum()
}

/// Draw Mixture-CDF responses and their true conditional means.
pub fn gen_mixture_cdf<R: Rng + ?Sized>(
    x: &DMatrix<f64>,
    beta: &[f64],
    sigma: f64,
    rng: &mut R,
) -> Result<(Vec<u32>, Vec<f64>)> {
    let model = mixture_model(beta, sigma)?;
    let y = model.sample_with(x, rng)?;
    let mean = (0..x.nrows())
        .map(|i| full_mean(&model, model.mean_row(x, i)))
        .collect();
    Ok((y, mean))
}

/// Draw `y ~ NB(r, lambda / (r + lambda))`, `log lambda = x'beta`, as a
/// gamma-Poisson mixture (shape `r`, scale `lambda / r`).
pub fn gen_negbin<R: Rng + ?Sized>(
    x: &DMatrix<f64>,
    beta: &[f64],
    r: f64,
    rng: &mut R,
) -> Result<(Vec<u32>, Vec<f64>)> {
    let mut y = Vec::with_capacity(x.nrows());
    let mut mean = Vec::with_capacity(x.nrows());
    for i in 0..x.nrows() {
        let eta: f64 = beta.iter().enumerate().map(|(k, b)| x[(i, k)] * b).sum();
        let lambda = eta.exp();
        let gamma = Gamma::new(r, lambda / r)
            .map_err(|e| StarError::Domain(format!("gamma parameters: {e}")))?;
        let rate: f64 = gamma.sample(rng);
        let count = if rate > 0.0 {
            Poisson::new(rate)
                .map_err(|e| StarError::Domain(format!("Poisson rate: {e}")))?
                .sample(rng) as u32
        } else {
            0
        };
        y.push(count);
        mean.push(lambda);
    }
    Ok((y, mean))
}

/// Everything one replication draws: training and test data with truths.
#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub x: DMatrix<f64>,
    pub y: Vec<u32>,
    pub mean: Vec<f64>,
    pub x_test: DMatrix<f64>,
    pub y_test: Vec<u32>,
}

/// Random stream for replication `rep`: the base seed with stream `rep`, so
/// any replication can be regenerated in isolation.
pub fn replication_rng(seed: u64, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep as u64);
    rng
}

/// Draw the data of replication `rep`. Training and test designs share one
/// column permutation.
pub fn simulate_data(spec: &SimulationSpec, rep: usize) -> Result<SimulatedData> {
    let mut rng = replication_rng(spec.seed, rep);
    let perm = random_permutation(spec.p, &mut rng);
    let x = ar1_design(spec.n, spec.rho, &perm, &mut rng);
    let x_test = ar1_design(spec.n_test, spec.rho, &perm, &mut rng);
    let draw = |x: &DMatrix<f64>, rng: &mut ChaCha8Rng| match spec.generator {
        Generator::MixtureCdf => gen_mixture_cdf(x, &spec.beta_star, spec.sigma_latent, rng),
        Generator::Negbin => gen_negbin(x, &spec.beta_star, spec.r_star, rng),
    };
    let (y, mean) = draw(&x, &mut rng)?;
    let (y_test, _) = draw(&x_test, &mut rng)?;
    Ok(SimulatedData {
        x,
        y,
        mean,
        x_test,
        y_test,
    })
}

/// Per-method results of one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodOutcome {
    pub method: Method,
    pub rmse: f64,
    /// `-2 log-likelihood` on the test set at the training estimates.
    pub test_neg2ll: f64,
    /// Rejection of `H0: beta_j = 0` at level `alpha`, `j = 1..=p`.
    pub rejections: Vec<bool>,
    /// Present when the fit failed; the other fields are then meaningless.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationResult {
    pub rep: usize,
    pub outcomes: Vec<MethodOutcome>,
}

fn rmse(fitted: &[f64], truth: &[f64]) -> f64 {
    let n = fitted.len() as f64;
    (fitted.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n).sqrt()
}

fn star_spec(method: Method) -> TransformSpec {
    match method {
        Method::StarNp => TransformSpec::Nonparametric,
        Method::StarBc => TransformSpec::BoxCoxProfile,
        Method::StarSqrt => TransformSpec::BoxCox(0.5),
        _ => unreachable!("not a STAR method"),
    }
}

fn star_outcome(
    method: Method,
    spec: &SimulationSpec,
    data: &SimulatedData,
    config: &EmConfig,
) -> Result<(f64, f64, Vec<bool>)> {
    let scheme = spec.generator.scheme();
    let fit: FitResult = fit_star(&data.x, &data.y, &star_spec(method), &scheme, None, config)?;
    let fitted = fit.model.fitted_values(&data.x)?;
    let test_ll = fit.model.log_likelihood(&data.x_test, &data.y_test)?;
    let rejections = (1..=spec.p)
        .map(|j| drop_one_lrt(&fit, &data.x, &data.y, j, config).map(|r| r.p_value < spec.alpha))
        .collect::<Result<Vec<_>>>()?;
    Ok((rmse(&fitted, &data.mean), -2.0 * test_ll, rejections))
}

fn evaluate(
    method: Method,
    spec: &SimulationSpec,
    data: &SimulatedData,
    config: &EmConfig,
) -> Result<(f64, f64, Vec<bool>)> {
    match method {
        Method::StarNp | Method::StarBc | Method::StarSqrt => star_outcome(method, spec, data, config),
        Method::Poisson => {
            let fit = fit_poisson_irls(&data.x, &data.y)?;
            if !fit.converged {
                return Err(StarError::Domain("Poisson IRLS did not converge".into()));
            }
            let p = poisson_p_values(&fit, &data.x, &data.y)?;
            Ok((
                rmse(&fit.mean(&data.x), &data.mean),
                -2.0 * fit.log_likelihood(&data.x_test, &data.y_test),
                p[1..].iter().map(|&v| v < spec.alpha).collect(),
            ))
        }
        Method::GaussLog => {
            let fit = fit_gauss_log(&data.x, &data.y)?;
            Ok((
                rmse(&fit.mean(&data.x), &data.mean),
                -2.0 * fit.log_likelihood(&data.x_test, &data.y_test),
                fit.p_values[1..].iter().map(|&v| v < spec.alpha).collect(),
            ))
        }
    }
}

/// Run one replication of every configured method.
pub fn run_replication(spec: &SimulationSpec, rep: usize) -> Result<ReplicationResult> {
    let data = simulate_data(spec, rep)?;
    let config = EmConfig::new(spec.seed.wrapping_add(rep as u64));
    let outcomes = spec
        .methods
        .iter()
        .map(|&method| match evaluate(method, spec, &data, &config) {
            Ok((rmse, test_neg2ll, rejections)) => MethodOutcome {
                method,
                rmse,
                test_neg2ll,
                rejections,
                error: None,
            },
            Err(e) => MethodOutcome {
                method,
                rmse: f64::NAN,
                test_neg2ll: f64::NAN,
                rejections: Vec::new(),
                error: Some(e.to_string()),
            },
        })
        .collect();
    Ok(ReplicationResult { rep, outcomes })
}

/// Thread count: `STAR_THREADS` if set to a positive integer, else the
/// machine's parallelism.
pub fn thread_count() -> usize {
    std::env::var("STAR_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&t| t > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    Rmse,
    TestNeg2ll,
    TypeI,
    Power,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Rmse, Metric::TestNeg2ll, Metric::TypeI, Metric::Power];

    pub fn label(&self) -> &'static str {
        match self {
            Metric::Rmse => "rmse",
            Metric::TestNeg2ll => "test_neg2ll",
            Metric::TypeI => "type1",
            Metric::Power => "power",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: Method,
    pub metric: Metric,
    pub mean: f64,
    /// Monte Carlo standard error across replications (`NaN` for one).
    pub mc_se: f64,
    pub n_ok: usize,
    pub n_failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub spec: SimulationSpec,
    pub rows: Vec<ReportRow>,
    pub replications: Vec<ReplicationResult>,
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

impl SimulationReport {
    pub fn from_replications(spec: SimulationSpec, replications: Vec<ReplicationResult>) -> Self {
        let signal: Vec<bool> = spec.beta_star[1..].iter().map(|b| *b != 0.0).collect();
        let mut rows = Vec::new();
        for &method in &spec.methods {
            let outcomes: Vec<&MethodOutcome> = replications
                .iter()
                .flat_map(|r| r.outcomes.iter().filter(|o| o.method == method))
                .collect();
            let ok: Vec<&&MethodOutcome> = outcomes.iter().filter(|o| o.error.is_none()).collect();
            let n_failed = outcomes.len() - ok.len();
            let rate = |want_signal: bool| -> Vec<f64> {
                ok.iter()
                    .filter_map(|o| {
                        let picked: Vec<f64> = o
                            .rejections
                            .iter()
                            .zip(&signal)
                            .filter(|(_, s)| **s == want_signal)
                            .map(|(r, _)| f64::from(u8::from(*r)))
                            .collect();
                        (!picked.is_empty())
                            .then(|| picked.iter().sum::<f64>() / picked.len() as f64)
                    })
                    .collect()
            };
            for metric in Metric::ALL {
                let values: Vec<f64> = match metric {
                    Metric::Rmse => ok.iter().map(|o| o.rmse).collect(),
                    Metric::TestNeg2ll => ok.iter().map(|o| o.test_neg2ll).collect(),
                    Metric::TypeI => rate(false),
                    Metric::Power => rate(true),
                };
                let (mean, mc_se) = mean_and_se(&values);
                rows.push(ReportRow {
                    method,
                    metric,
                    mean,
                    mc_se,
                    n_ok: values.len(),
                    n_failed,
                });
            }
        }
        Self {
            spec,
            rows,
            replications,
        }
    }

    pub fn get(&self, method: Method, metric: Metric) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.method == method && r.metric == metric)
    }

    /// One CSV row per method and metric.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["generator", "method", "metric", "mean", "mc_se", "n_ok", "n_failed"])?;
        for r in &self.rows {
            w.write_record([
                self.spec.generator.label().to_string(),
                r.method.label().to_string(),
                r.metric.label().to_string(),
                format_float(r.mean),
                format_float(r.mc_se),
                r.n_ok.to_string(),
                r.n_failed.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Human-readable summary: methods as rows, metrics as columns.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{} data: n = {}, p = {}, {} replications, alpha = {}",
            self.spec.generator.label(),
            self.spec.n,
            self.spec.p,
            self.spec.n_reps,
            self.spec.alpha
        );
        let _ = writeln!(
            s,
            "{:<10} {:>18} {:>22} {:>16} {:>16} {:>7}",
            "method", "rmse", "test -2loglik", "type I", "power", "failed"
        );
        for &method in &self.spec.methods {
            let cell = |metric: Metric, prec: usize| {
                self.get(method, metric).map_or(String::new(), |r| {
                    if r.mc_se.is_nan() {
                        format!("{:.*}", prec, r.mean)
                    } else {
                        format!("{:.*} ({:.*})", prec, r.mean, prec, r.mc_se)
                    }
                })
            };
            let failed = self.get(method, Metric::Rmse).map_or(0, |r| r.n_failed);
            let _ = writeln!(
                s,
                "{:<10} {:>18} {:>22} {:>16} {:>16} {:>7}",
                method.label(),
                cell(Metric::Rmse, 3),
                cell(Metric::TestNeg2ll, 1),
                cell(Metric::TypeI, 3),
                cell(Metric::Power, 3),
                failed
            );
        }
        s
    }
}

/// Run every replication (in parallel, capped by [`thread_count`]) and
/// aggregate in replication order.
pub fn run_simulation(spec: &SimulationSpec) -> Result<SimulationReport> {
    spec.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count())
        .build()
        .map_err(|e| StarError::Usage(format!("thread pool: {e}")))?;
    let replications = pool.install(|| {
        (0..spec.n_reps)
            .into_par_iter()
            .map(|rep| run_replication(spec, rep))
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(SimulationReport::from_replications(spec.clone(), replications))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coefficients() {
        let b = true_coefficients(10).unwrap();
        assert_eq!(b.len(), 11);
        assert!((b[0] - 0.405_465_108_108_164_4).abs() < 1e-15);
        assert!(b[1..6].iter().all(|v| (v - 0.223_143_551_314_209_76).abs() < 1e-15));
        assert!(b[6..].iter().all(|&v| v == 0.0));
        assert_eq!(true_coefficients(2).unwrap().len(), 3);
        assert!(true_coefficients(3).is_err());
    }

    #[test]
    fn design_is_deterministic_with_intercept() {
        let a = make_design(50, 4, 0.75, 3).unwrap();
        let b = make_design(50, 4, 0.75, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.column(0).iter().all(|&v| v == 1.0));
        assert_eq!(a.ncols(), 5);
    }

    #[test]
    fn adjacent_correlation_before_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 20_000;
        let x = ar1_design(n, 0.75, &[0, 1, 2], &mut rng);
        let corr = |a: usize, b: usize| {
            let (ca, cb) = (x.column(a), x.column(b));
            let ma = ca.mean();
            let mb = cb.mean();
            let cov: f64 = ca.iter().zip(cb.iter()).map(|(u, v)| (u - ma) * (v - mb)).sum();
            let va: f64 = ca.iter().map(|u| (u - ma).powi(2)).sum();
            let vb: f64 = cb.iter().map(|v| (v - mb).powi(2)).sum();
            cov / (va * vb).sqrt()
        };
        let tol = 4.0 / (n as f64).sqrt();
        assert!((corr(1, 2) - 0.75).abs() < tol);
        assert!((corr(1, 3) - 0.5625).abs() < tol);
        let x0 = ar1_design(n, 0.0, &[0, 1, 2], &mut rng);
        let c: f64 = {
            let (ca, cb) = (x0.column(1), x0.column(2));
            ca.dot(&cb) / n as f64
        };
        assert!(c.abs() < tol);
    }

    #[test]
    fn mixture_cdf_shape() {
        let f = mixture_cdf();
        assert_eq!(f.len(), 31);
        assert!((f[30] - 1.0).abs() < 1e-6);
        assert!(f.windows(2).all(|w| w[1] > w[0]));
        // P(y = 0) = 1/8 + Poisson(10) mass at zero / 2
        assert!((f[0] - (0.125 + 0.5 * (-10.0f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn mixture_marginal_heaps() {
        // with mu = 0 and sigma = 1 the latent z is N(0, 1), so y follows
        // the mixture law exactly at the knots
        let n = 100_000;
        let x = DMatrix::from_element(n, 1, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (y, mean) = gen_mixture_cdf(&x, &[0.0], 1.0, &mut rng).unwrap();
        assert!(y.iter().all(|&v| v <= 30));
        let heap = y.iter().filter(|&&v| v > 0 && v < 30 && v % 5 == 0).count() as f64 / n as f64;
        let cdf = mixture_cdf();
        let pmf = |j: usize| cdf[j] - cdf[j - 1];
        let expected: f64 = [5, 10, 15, 20, 25].iter().map(|&j| pmf(j)).sum();
        let se = (expected * (1.0 - expected) / n as f64).sqrt();
        assert!((heap - expected).abs() < 4.0 * se, "{heap} vs {expected}");
        assert!(expected > 0.25);
        // the top cell absorbs the Poisson tail beyond 30
        let full: f64 = (1..30).map(|j| j as f64 * pmf(j)).sum::<f64>() + 30.0 * (1.0 - cdf[29]);
        assert!((mean[0] - full).abs() < 1e-10);
    }

    #[test]
    fn negbin_moments() {
        let n = 400_000;
        let x = DMatrix::from_element(n, 1, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (y, mean) = gen_negbin(&x, &[2.0f64.ln()], 3.0, &mut rng).unwrap();
        assert!((mean[0] - 2.0).abs() < 1e-12);
        let m = y.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
        let v = y.iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let var = 2.0 * (1.0 + 2.0 / 3.0);
        assert!((m - 2.0).abs() < 3.0 * (var / n as f64).sqrt());
        // Var of the sample variance for NB is ~ (mu4 - var^2)/n; a loose
        // 3% band is well beyond 3 MC standard errors at this n.
        assert!((v - var).abs() / var < 0.03);
        let (y, _) = gen_negbin(&x, &[2.0f64.ln()], 1e6, &mut rng).unwrap();
        let m = y.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
        let v = y.iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        assert!((v / m - 1.0).abs() < 0.02);
    }

    #[test]
    fn replication_is_reproducible() {
        let mut spec = SimulationSpec::new(Generator::Negbin, 4);
        spec.n = 80;
        spec.n_test = 50;
        spec.n_reps = 1;
        spec.methods = vec![Method::StarSqrt, Method::Poisson, Method::GaussLog];
        let a = run_replication(&spec, 0).unwrap();
        let b = run_replication(&spec, 0).unwrap();
        assert_eq!(a, b);
        let report = SimulationReport::from_replications(spec.clone(), vec![a.clone()]);
        let row = report.get(Method::Poisson, Metric::Rmse).unwrap();
        assert_eq!(row.mean, a.outcomes[1].rmse);
        assert!(row.mc_se.is_nan());
    }
}
