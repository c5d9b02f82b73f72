//! Likelihood-ratio tests, profile-likelihood confidence intervals and
//! information-criterion variable selection. The transformation is always
//! held at its full-model estimate, so every compared likelihood is on the
//! same scale.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::em::{fit_em_with, score, EmConfig, FitOptions, FitResult};
use crate::error::{Result, StarError};
use crate::linalg::select_columns;
use crate::special::{chisq_quantile, chisq_sf};

/// A statistic below this is an optimization failure, not rounding noise.
const NEGATIVE_LRT_TOL: f64 = 1e-6;
/// Bisection stops once the bracket is this narrow (coefficient units).
const CI_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrtResult {
    /// `-2 log Lambda`, clamped at zero.
    pub stat: f64,
    pub df: usize,
    pub p_value: f64,
    pub full_loglik: f64,
    pub restricted_loglik: f64,
}

impl LrtResult {
    pub fn from_logliks(full: f64, restricted: f64, df: usize) -> Result<Self> {
        let raw = 2.0 * (full - restricted);
        if raw < -NEGATIVE_LRT_TOL {
            return Err(StarError::NegativeLrt(raw));
        }
        let stat = raw.max(0.0);
        let p_value = if df == 0 { 1.0 } else { chisq_sf(stat, df as u32) };
        Ok(Self {
            stat,
            df,
            p_value,
            full_loglik: full,
            restricted_loglik: restricted,
        })
    }
}

fn restricted_start(full: &FitResult, keep: &[usize]) -> (Vec<f64>, f64) {
    (
        keep.iter().map(|&k| full.model.theta[k]).collect(),
        full.model.sigma,
    )
}

/// Refit `full` using only the columns `keep` of `x` (same transformation,
/// weights and scheme).
pub fn refit_subset(
    full: &FitResult,
    x: &DMatrix<f64>,
    y: &[u32],
    keep: &[usize],
    config: &EmConfig,
) -> Result<FitResult> {
    check_subset(keep, x.ncols())?;
    let xs = select_columns(x, keep);
    let options = FitOptions {
        offset: None,
        start: Some(restricted_start(full, keep)),
    };
    let m = &full.model;
    fit_em_with(&xs, y, &m.transform, &m.scheme, m.weights.as_deref(), config, &options)
}

fn check_subset(keep: &[usize], p: usize) -> Result<()> {
    if keep.is_empty() {
        return Err(StarError::Domain("restricted model needs at least one column".into()));
    }
    if keep.windows(2).any(|w| w[0] >= w[1]) || keep.iter().any(|&k| k >= p) {
        return Err(StarError::Domain(format!(
            "restricted columns {keep:?} must be increasing indices below {p}"
        )));
    }
    Ok(())
}

/// Likelihood-ratio test of the submodel using columns `keep` of `x`
/// against `full`.
pub fn lrt(
    full: &FitResult,
    x: &DMatrix<f64>,
    y: &[u32],
    keep: &[usize],
    config: &EmConfig,
) -> Result<LrtResult> {
    let df = x.ncols() - keep.len();
    if df == 0 {
        check_subset(keep, x.ncols())?;
        return LrtResult::from_logliks(full.loglik, full.loglik, 0);
    }
    let restricted = refit_subset(full, x, y, keep, config)?;
    LrtResult::from_logliks(full.loglik, restricted.loglik, df)
}

/// Test `H0: theta_coef = 0` by dropping that column.
pub fn drop_one_lrt(
    full: &FitResult,
    x: &DMatrix<f64>,
    y: &[u32],
    coef: usize,
    config: &EmConfig,
) -> Result<LrtResult> {
    let keep: Vec<usize> = (0..x.ncols()).filter(|&k| k != coef).collect();
    lrt(full, x, y, &keep, config)
}

/// Single-column-drop LRT p-values for every coefficient.
pub fn marginal_p_values(
    full: &FitResult,
    x: &DMatrix<f64>,
    y: &[u32],
    config: &EmConfig,
) -> Result<Vec<f64>> {
    (0..x.ncols())
        .map(|k| drop_one_lrt(full, x, y, k, config).map(|r| r.p_value))
        .collect()
}

/// Log-likelihood maximized over everything except `theta_coef`, which is
/// fixed at `value` through an offset.
pub struct Profile<'a> {
    full: &'a FitResult,
    y: &'a [u32],
    coef: usize,
    reduced: DMatrix<f64>,
    column: Vec<f64>,
    config: EmConfig,
}

impl<'a> Profile<'a> {
    pub fn new(
        full: &'a FitResult,
        x: &DMatrix<f64>,
        y: &'a [u32],
        coef: usize,
        config: &EmConfig,
    ) -> Result<Self> {
        if coef >= x.ncols() {
            return Err(StarError::Domain(format!("no coefficient {coef}")));
        }
        let keep: Vec<usize> = (0..x.ncols()).filter(|&k| k != coef).collect();
        Ok(Self {
            full,
            y,
            coef,
            reduced: select_columns(x, &keep),
            column: x.column(coef).iter().copied().collect(),
            config: *config,
        })
    }

    pub fn loglik(&self, value: f64) -> Result<f64> {
        let m = &self.full.model;
        let offset: Vec<f64> = self.column.iter().map(|c| c * value).collect();
        if self.reduced.ncols() == 0 {
            let mut model = m.clone();
            model.theta = vec![value];
            let x = DMatrix::from_column_slice(self.column.len(), 1, &self.column);
            return model.log_likelihood(&x, self.y);
        }
        let start: Vec<f64> = (0..m.theta.len())
            .filter(|&k| k != self.coef)
            .map(|k| m.theta[k])
            .collect();
        let options = FitOptions {
            offset: Some(offset),
            start: Some((start, m.sigma)),
        };
        let fit = fit_em_with(
            &self.reduced,
            self.y,
            &m.transform,
            &m.scheme,
            m.weights.as_deref(),
            &self.config,
            &options,
        )?;
        Ok(fit.loglik)
    }
}

/// Observed information for `(theta, sigma)` from central differences of
/// the analytic score.
pub fn observed_information(fit: &FitResult, x: &DMatrix<f64>, y: &[u32]) -> Result<DMatrix<f64>> {
    let p = fit.model.n_coef();
    let mut info = DMatrix::zeros(p + 1, p + 1);
    for k in 0..=p {
        let base = if k < p { fit.model.theta[k] } else { fit.model.sigma };
        let h = 1e-5 * base.abs().max(fit.model.sigma).max(1e-3);
        let shifted = |delta: f64| -> Result<Vec<f64>> {
            let mut m = fit.model.clone();
            if k < p {
                m.theta[k] += delta;
            } else {
                m.sigma += delta;
            }
            score(&m, x, y)
        };
        let up = shifted(h)?;
        let down = shifted(-h)?;
        for j in 0..=p {
            info[(j, k)] = -(up[j] - down[j]) / (2.0 * h);
        }
    }
    let sym = (&info + info.transpose()) * 0.5;
    Ok(sym)
}

/// Asymptotic standard errors of `(theta, sigma)` from the inverse observed
/// information.
pub fn standard_errors(fit: &FitResult, x: &DMatrix<f64>, y: &[u32]) -> Result<Vec<f64>> {
    let info = observed_information(fit, x, y)?;
    let inv = info
        .try_inverse()
        .ok_or_else(|| StarError::Domain("observed information is singular".into()))?;
    Ok((0..inv.nrows()).map(|k| inv[(k, k)].max(0.0).sqrt()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub coef: usize,
    pub level: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Profile-likelihood interval `{b : l_p(b) > l_max - chi2_{level,1}/2}`.
pub fn confidence_interval(
    full: &FitResult,
    x: &DMatrix<f64>,
    y: &[u32],
    coef: usize,
    level: f64,
    config: &EmConfig,
) -> Result<ConfidenceInterval> {
    let se = standard_errors(full, x, y)?;
    confidence_interval_with_se(full, x, y, coef, level, se[coef], config)
}

/// As [`confidence_interval`], with a known standard error for bracketing.
pub fn confidence_interval_with_se(
    full: &FitResult,
    x: &DMatrix<f64>,
    y: &[u32],
    coef: usize,
    level: f64,
    se: f64,
    config: &EmConfig,
) -> Result<ConfidenceInterval> {
    if !(level > 0.0 && level < 1.0) {
        return Err(StarError::Domain(format!("level must lie in (0, 1), got {level}")));
    }
    if !(se > 0.0) || !se.is_finite() {
        return Err(StarError::Domain(format!("standard error must be positive, got {se}")));
    }
    let profile = Profile::new(full, x, y, coef, config)?;
    let center = full.model.theta[coef];
    let target = full.loglik - 0.5 * chisq_quantile(level, 1)?;
    let mut ends = [0.0; 2];
    for (slot, dir) in [-1.0f64, 1.0].iter().enumerate() {
        let mut inner = 0.0;
        let mut mult = 4.0;
        let outer = loop {
            let value = profile.loglik(center + dir * mult * se)?;
            if value <= target {
                break mult;
            }
            if mult >= 20.0 {
                return Err(StarError::UnboundedProfile { coef });
            }
            inner = mult;
            mult = (mult * 2.0).min(20.0);
        };
        let (mut lo, mut hi) = (inner * se, outer * se);
        while hi - lo > CI_TOL {
            let mid = 0.5 * (lo + hi);
            if profile.loglik(center + dir * mid)? > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        ends[slot] = center + dir * 0.5 * (lo + hi);
    }
    Ok(ConfidenceInterval {
        coef,
        level,
        lower: ends[0],
        upper: ends[1],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Aic,
    Bic,
}

impl Criterion {
    pub fn of(&self, fit: &FitResult) -> f64 {
        match self {
            Criterion::Aic => fit.aic,
            Criterion::Bic => fit.bic,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EliminationStep {
    pub columns: Vec<usize>,
    /// Column removed to reach this step (`None` for the starting model).
    pub dropped: Option<usize>,
    pub criterion: f64,
}

#[derive(Debug, Clone)]
pub struct Selection {
    pub columns: Vec<usize>,
    pub fit: FitResult,
    pub trace: Vec<EliminationStep>,
}

/// Greedy backward elimination from `full`: repeatedly drop the column whose
/// removal lowers the criterion the most, until no removal helps. Columns in
/// `protected` (typically the intercept) are never dropped.
pub fn backward_elimination(
    full: &FitResult,
    x: &DMatrix<f64>,
    y: &[u32],
    criterion: Criterion,
    protected: &[usize],
    config: &EmConfig,
) -> Result<Selection> {
    let mut columns: Vec<usize> = (0..x.ncols()).collect();
    let mut current = full.clone();
    let mut value = criterion.of(&current);
    let mut trace = vec![EliminationStep {
        columns: columns.clone(),
        dropped: None,
        criterion: value,
    }];
    loop {
        let mut best: Option<(usize, FitResult, f64)> = None;
        for (pos, &col) in columns.iter().enumerate() {
            if protected.contains(&col) || columns.len() == 1 {
                continue;
            }
            let keep_local: Vec<usize> = (0..columns.len()).filter(|&k| k != pos).collect();
            let xs = select_columns(x, &columns);
            let fit = refit_subset(&current, &xs, y, &keep_local, config)?;
            let c = criterion.of(&fit);
            if best.as_ref().is_none_or(|b| c < b.2) {
                best = Some((pos, fit, c));
            }
        }
        match best {
            Some((pos, fit, c)) if c < value => {
                let dropped = columns.remove(pos);
                current = fit;
                value = c;
                trace.push(EliminationStep {
                    columns: columns.clone(),
                    dropped: Some(dropped),
                    criterion: c,
                });
            }
            _ => break,
        }
    }
    Ok(Selection {
        columns,
        fit: current,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::em::fit_em;
    use crate::model::StarModel;
    use crate::rounding::RoundingScheme;
    use crate::transform::box_cox_transform;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn data(n: usize, theta: &[f64], seed: u64) -> (DMatrix<f64>, Vec<u32>, FitResult) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = theta.len();
        let x = DMatrix::from_fn(n, p, |_, j| {
            if j == 0 {
                1.0
            } else {
                StandardNormal.sample(&mut rng)
            }
        });
        let scheme = RoundingScheme::bounded(25).unwrap();
        let g = box_cox_transform(0.0, (0.0, 1.0), &scheme).unwrap();
        let truth = StarModel::new(theta.to_vec(), 0.5, g.clone(), scheme.clone(), None).unwrap();
        let y = truth.sample(&x, seed + 1000).unwrap();
        let fit = fit_em(&x, &y, &g, &scheme, None, &EmConfig::new(seed)).unwrap();
        (x, y, fit)
    }

    #[test]
    fn no_restriction_is_trivial() {
        let (x, y, fit) = data(100, &[1.0, 0.3], 1);
        let r = lrt(&fit, &x, &y, &[0, 1], &EmConfig::new(1)).unwrap();
        assert_eq!(r.stat, 0.0);
        assert_eq!(r.p_value, 1.0);
        assert_eq!(r.df, 0);
    }

    #[test]
    fn strong_signal_is_rejected_and_additive() {
        let (x, y, fit) = data(300, &[1.0, 0.5, 0.0, 0.2], 2);
        let config = EmConfig::new(2);
        let r = drop_one_lrt(&fit, &x, &y, 1, &config).unwrap();
        assert!(r.p_value < 1e-6);
        let b = refit_subset(&fit, &x, &y, &[0, 1, 3], &config).unwrap();
        let full_a = lrt(&fit, &x, &y, &[0, 1], &config).unwrap();
        let full_b = lrt(&fit, &x, &y, &[0, 1, 3], &config).unwrap();
        let xb = select_columns(&x, &[0, 1, 3]);
        let b_a = lrt(&b, &xb, &y, &[0, 1], &config).unwrap();
        assert!((full_a.stat - full_b.stat - b_a.stat).abs() < 1e-6);
    }

    #[test]
    fn p_values_invariant_to_rescaling() {
        let (x, y, fit) = data(200, &[0.8, 0.1, -0.2], 3);
        let config = EmConfig::new(3);
        let p = marginal_p_values(&fit, &x, &y, &config).unwrap();
        let mut x2 = x.clone();
        x2.column_mut(1).scale_mut(2.0);
        let m = &fit.model;
        let fit2 = fit_em(&x2, &y, &m.transform, &m.scheme, None, &config).unwrap();
        let p2 = marginal_p_values(&fit2, &x2, &y, &config).unwrap();
        for (a, b) in p.iter().zip(&p2) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn intervals_nest_and_cover_estimate() {
        let (x, y, fit) = data(250, &[1.0, 0.4, 0.0], 4);
        let config = EmConfig::new(4);
        let se = standard_errors(&fit, &x, &y).unwrap();
        let mut prev: Option<ConfidenceInterval> = None;
        for level in [0.8, 0.9, 0.95] {
            let ci = confidence_interval_with_se(&fit, &x, &y, 1, level, se[1], &config).unwrap();
            assert!(ci.lower < fit.model.theta[1] && fit.model.theta[1] < ci.upper);
            if let Some(p) = prev {
                assert!(ci.lower < p.lower && ci.upper > p.upper);
            }
            prev = Some(ci);
        }
        let ci = prev.unwrap();
        assert!(ci.lower > 0.0);
        // endpoints solve the profile equation
        let profile = Profile::new(&fit, &x, &y, 1, &config).unwrap();
        let target = fit.loglik - 0.5 * chisq_quantile(0.95, 1).unwrap();
        for end in [ci.lower, ci.upper] {
            assert!((profile.loglik(end).unwrap() - target).abs() < 1e-3);
        }
    }

    #[test]
    fn elimination_drops_noise_and_keeps_intercept() {
        let (x, y, fit) = data(300, &[1.0, 0.6, 0.0, 0.0], 5);
        let sel = backward_elimination(&fit, &x, &y, Criterion::Bic, &[0], &EmConfig::new(5))
            .unwrap();
        assert!(sel.columns.contains(&0) && sel.columns.contains(&1));
        for w in sel.trace.windows(2) {
            assert!(w[1].criterion < w[0].criterion);
        }
    }
}
