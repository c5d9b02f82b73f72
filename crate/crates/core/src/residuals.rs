//! Dunn–Smyth randomized quantile residuals and the normality checks used to
//! read them.
//!
//! For a discrete response, `u_i = P(y = y_i) U_i + P(y < y_i)` with
//! `U_i ~ Uniform(0, 1)` is exactly uniform under the fitted model, so
//! `r_i = Phi^{-1}(u_i)` is standard normal when the model is right.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};

use crate::error::{Result, StarError};
use crate::model::StarModel;
use crate::special::{log_norm_cdf_diff, norm_cdf, norm_quantile, norm_quantile_upper, norm_sf};

/// The three-way split of probability around an observed count: mass below,
/// at, and above `y_i`. Keeping both tails avoids cancellation in `1 - u`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CountProbabilities {
    pub below: f64,
    pub at: f64,
    pub above: f64,
}

/// Cell probabilities of each observed count under a STAR model.
pub fn star_probabilities(model: &StarModel, x: &DMatrix<f64>, y: &[u32]) -> Result<Vec<CountProbabilities>> {
    check_rows(x.nrows(), y.len())?;
    if x.ncols() != model.n_coef() {
        return Err(StarError::Dimension(format!(
            "design has {} columns, model has {} coefficients",
            x.ncols(),
            model.n_coef()
        )));
    }
    y.iter()
        .enumerate()
        .map(|(i, &yi)| {
            model.scheme.check_response(i, yi as i64)?;
            let mu = model.mean_row(x, i);
            let scale = model.scale_of(i);
            let (lo, hi) = model.cell(yi);
            let (a, b) = ((lo - mu) / scale, (hi - mu) / scale);
            Ok(CountProbabilities {
                below: norm_cdf(a),
                at: log_norm_cdf_diff(a, b).exp(),
                above: norm_sf(b),
            })
        })
        .collect()
}

/// Cell probabilities of each observed count under Poisson means `mean`.
pub fn poisson_probabilities(mean: &[f64], y: &[u32]) -> Result<Vec<CountProbabilities>> {
    check_rows(mean.len(), y.len())?;
    mean.iter()
        .zip(y)
        .map(|(&m, &yi)| {
            if !(m > 0.0) || !m.is_finite() {
                return Err(StarError::Domain(format!("Poisson mean must be positive, got {m}")));
            }
            let k = yi as f64;
            Ok(CountProbabilities {
                below: if yi == 0 { 0.0 } else { gamma_ur(k, m) },
                at: (k * m.ln() - m - ln_gamma(k + 1.0)).exp(),
                above: gamma_lr(k + 1.0, m),
            })
        })
        .collect()
}

fn check_rows(rows: usize, responses: usize) -> Result<()> {
    if rows != responses {
        return Err(StarError::Dimension(format!("{rows} rows but {responses} responses")));
    }
    Ok(())
}

/// One randomized quantile residual from a uniform draw `v`.
pub fn randomized_residual(p: CountProbabilities, v: f64) -> f64 {
    let lower = p.below + p.at * v;
    let upper = p.above + p.at * (1.0 - v);
    // Invert through the smaller tail; clamp so that cells with underflowed
    // mass still give a finite residual.
    let r = if lower <= upper {
        norm_quantile(lower.clamp(f64::MIN_POSITIVE, 0.5))
    } else {
        norm_quantile_upper(upper.clamp(f64::MIN_POSITIVE, 0.5))
    };
    r.expect("probability clamped into (0, 0.5]")
}

/// `n × n_sets` residual matrix. Set `k` draws its uniforms from stream `k`
/// of a ChaCha generator seeded with `seed`, so a set does not depend on how
/// many others are requested.
pub fn randomized_quantile_residuals(probs: &[CountProbabilities], n_sets: usize, seed: u64) -> Result<DMatrix<f64>> {
    if n_sets == 0 {
        return Err(StarError::Domain("at least one residual set is required".into()));
    }
    let mut out = DMatrix::zeros(probs.len(), n_sets);
    for k in 0..n_sets {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        for (i, &p) in probs.iter().enumerate() {
            out[(i, k)] = randomized_residual(p, rng.random::<f64>());
        }
    }
    Ok(out)
}

/// Dunn–Smyth residuals of a fitted STAR model.
pub fn dunn_smyth_residuals(
    model: &StarModel,
    x: &DMatrix<f64>,
    y: &[u32],
    n_sets: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    randomized_quantile_residuals(&star_probabilities(model, x, y)?, n_sets, seed)
}

/// One-sample Kolmogorov–Smirnov test against the standard normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsTest {
    pub statistic: f64,
    /// Stephens' finite-sample approximation
    /// `Q((sqrt(n) + 0.12 + 0.11 / sqrt(n)) D)`.
    pub p_value: f64,
}

pub fn ks_normality(sample: &[f64]) -> Result<KsTest> {
    if sample.is_empty() {
        return Err(StarError::EmptySample);
    }
    if sample.iter().any(|v| v.is_nan()) {
        return Err(StarError::Domain("sample contains NaN".into()));
    }
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let statistic = s
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = norm_cdf(v);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max);
    let rn = n.sqrt();
    let p_value = kolmogorov_sf((rn + 0.12 + 0.11 / rn) * statistic);
    Ok(KsTest { statistic, p_value })
}

/// Survival function of the Kolmogorov distribution.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if !(lambda > 0.0) {
        return 1.0;
    }
    if lambda < 1.18 {
        // Jacobi theta form converges fast for small arguments.
        let c = std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let cdf: f64 = (1..=6)
            .map(|k| {
                let m = (2 * k - 1) as f64;
                (-m * m * c).exp()
            })
            .sum::<f64>()
            * (2.0 * std::f64::consts::PI).sqrt()
            / lambda;
        (1.0 - cdf).clamp(0.0, 1.0)
    } else {
        let mut total = 0.0;
        for k in 1..=100 {
            let kf = k as f64;
            let term = (-2.0 * kf * kf * lambda * lambda).exp();
            total += if k % 2 == 1 { term } else { -term };
            if term < 1e-17 * total.abs() {
                break;
            }
        }
        (2.0 * total).clamp(0.0, 1.0)
    }
}

/// Normal QQ-plot coordinates `(theoretical, sample)` with plotting
/// positions `(i - a) / (n + 1 - 2a)`, `a = 3/8` for `n <= 10` and `1/2`
/// otherwise.
pub fn qq_points(sample: &[f64]) -> Vec<(f64, f64)> {
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    let a = if n <= 10 { 0.375 } else { 0.5 };
    s.into_iter()
        .enumerate()
        .map(|(i, v)| {
            let p = (i as f64 + 1.0 - a) / (n as f64 + 1.0 - 2.0 * a);
            (norm_quantile(p).expect("plotting position inside (0, 1)"), v)
        })
        .collect()
}
