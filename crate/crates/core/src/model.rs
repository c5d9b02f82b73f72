//! The STAR probability model: a Gaussian linear model for the latent
//! `z* = x'theta + eps`, mapped to counts by `y = h(g^{-1}(z*))`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, StarError};
use crate::rounding::RoundingScheme;
use crate::special::{log_norm_cdf_diff, norm_quantile};
use crate::transform::Transformation;

/// Quantile used to truncate the fitted-value summation.
pub const EXPECTED_COUNT_QUANTILE: f64 = 0.9999;

#[derive(Debug, Clone, PartialEq)]
pub struct StarModel {
    pub theta: Vec<f64>,
    pub sigma: f64,
    pub transform: Transformation,
    pub scheme: RoundingScheme,
    /// Per-observation precision weights: `eps_i ~ N(0, sigma^2 / w_i)`.
    pub weights: Option<Vec<f64>>,
}

impl StarModel {
    pub fn new(
        theta: Vec<f64>,
        sigma: f64,
        transform: Transformation,
        scheme: RoundingScheme,
        weights: Option<Vec<f64>>,
    ) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(StarError::Domain(format!("sigma must be positive, got {sigma}")));
        }
        if !transform.matches_scheme(&scheme) {
            return Err(StarError::Domain(
                "transformation support does not match the rounding scheme".into(),
            ));
        }
        if let Some(w) = &weights {
            if w.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
                return Err(StarError::Domain("weights must be positive".into()));
            }
        }
        Ok(Self {
            theta,
            sigma,
            transform,
            scheme,
            weights,
        })
    }

    pub fn n_coef(&self) -> usize {
        self.theta.len()
    }

    /// `x'theta`.
    pub fn linear_predictor(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.theta).map(|(a, b)| a * b).sum()
    }

    /// `x_i'theta` for row `i` of a design.
    pub fn mean_row(&self, x: &DMatrix<f64>, i: usize) -> f64 {
        self.theta.iter().enumerate().map(|(k, b)| x[(i, k)] * b).sum()
    }

    /// Latent scale of observation `i` (`sigma / sqrt(w_i)`).
    pub fn scale_of(&self, i: usize) -> f64 {
        match &self.weights {
            Some(w) => self.sigma / w[i].sqrt(),
            None => self.sigma,
        }
    }

    fn check_x(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.theta.len() {
            return Err(StarError::Dimension(format!(
                "covariate vector has length {}, model has {} coefficients",
                x.len(),
                self.theta.len()
            )));
        }
        Ok(())
    }

    fn check_design(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.ncols() != self.theta.len() {
            return Err(StarError::Dimension(format!(
                "design has {} columns, model has {} coefficients",
                x.ncols(),
                self.theta.len()
            )));
        }
        if let Some(w) = &self.weights {
            if w.len() != x.nrows() {
                return Err(StarError::Dimension(format!(
                    "{} weights for {} rows",
                    w.len(),
                    x.nrows()
                )));
            }
        }
        Ok(())
    }

    /// Transformed edges `(g(a_j), g(a_{j+1}))` of cell `j`.
    pub fn cell(&self, j: u32) -> (f64, f64) {
        self.transform.cell(&self.scheme, j)
    }

    fn log_cell_prob(&self, j: u32, mu: f64, scale: f64) -> f64 {
        let (lo, hi) = self.cell(j);
        log_norm_cdf_diff((lo - mu) / scale, (hi - mu) / scale)
    }

    /// `log P(y = j | x)` at unit weight.
    pub fn log_pmf(&self, x: &[f64], j: i64) -> Result<f64> {
        self.log_pmf_scaled(x, j, self.sigma)
    }

    /// `log P(y = j | x)` with latent scale `scale`.
    pub fn log_pmf_scaled(&self, x: &[f64], j: i64, scale: f64) -> Result<f64> {
        self.check_x(x)?;
        if !self.scheme.contains(j) {
            return Err(StarError::Domain(format!("count {j} is outside the support")));
        }
        Ok(self.log_cell_prob(j as u32, self.linear_predictor(x), scale))
    }

    /// Log-likelihood of counts `y` at design `x` (a pseudo-log-likelihood
    /// when the model carries weights).
    pub fn log_likelihood(&self, x: &DMatrix<f64>, y: &[u32]) -> Result<f64> {
        self.check_design(x)?;
        if x.nrows() != y.len() {
            return Err(StarError::Dimension(format!(
                "{} rows but {} responses",
                x.nrows(),
                y.len()
            )));
        }
        let mut total = 0.0;
        for (i, &yi) in y.iter().enumerate() {
            self.scheme.check_response(i, yi as i64)?;
            let mu = self.mean_row(x, i);
            total += self.log_cell_prob(yi, mu, self.scale_of(i));
        }
        Ok(total)
    }

    /// `P(y = j | x)` for `j = 0..=last` at latent scale `scale`.
    pub fn pmf_table(&self, mu: f64, scale: f64, last: u32) -> Vec<f64> {
        (0..=last)
            .map(|j| self.log_cell_prob(j, mu, scale).exp())
            .collect()
    }

    /// Count quantile `h(g^{-1}(mu + scale * Phi^{-1}(q)))`.
    pub fn latent_quantile_at(&self, mu: f64, scale: f64, q: f64) -> Result<u32> {
        let z = mu + scale * norm_quantile(q)?;
        Ok(self.scheme.round_value(self.transform.inverse(z)))
    }

    pub fn latent_quantile(&self, x: &[f64], q: f64) -> Result<u32> {
        self.check_x(x)?;
        self.latent_quantile_at(self.linear_predictor(x), self.sigma, q)
    }

    /// Fitted mean `sum_j j P(y = j)` truncated at the 99.99th count
    /// quantile. Returns the value and a bound on the truncation error
    /// (`None` when the support is unbounded).
    pub fn expected_count_at(&self, mu: f64, scale: f64) -> (f64, Option<f64>) {
        let top = self
            .latent_quantile_at(mu, scale, EXPECTED_COUNT_QUANTILE)
            .expect("quantile level is inside (0, 1)");
        let top = self.scheme.y_max().map_or(top, |m| top.min(m));
        let value: f64 = (1..=top)
            .map(|j| j as f64 * self.log_cell_prob(j, mu, scale).exp())
            .sum();
        let bound = self.scheme.y_max().map(|m| {
            if top < m {
                (1.0 - EXPECTED_COUNT_QUANTILE) * m as f64
            } else {
                0.0
            }
        });
        (value, bound)
    }

    pub fn expected_count(&self, x: &[f64]) -> Result<f64> {
        self.check_x(x)?;
        Ok(self.expected_count_at(self.linear_predictor(x), self.sigma).0)
    }

    /// Fitted means for every row of `x`, using each row's latent scale.
    pub fn fitted_values(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        self.check_design(x)?;
        Ok((0..x.nrows())
            .map(|i| {
                let mu = self.mean_row(x, i);
                self.expected_count_at(mu, self.scale_of(i)).0
            })
            .collect())
    }

    /// Draw counts for every row of `x` from the model.
    pub fn sample(&self, x: &DMatrix<f64>, seed: u64) -> Result<Vec<u32>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(x, &mut rng)
    }

    pub fn sample_with<R: Rng + ?Sized>(&self, x: &DMatrix<f64>, rng: &mut R) -> Result<Vec<u32>> {
        self.check_design(x)?;
        Ok((0..x.nrows())
            .map(|i| {
                let mu = self.mean_row(x, i);
                let eps: f64 = rng.sample(StandardNormal);
                let z = mu + self.scale_of(i) * eps;
                self.scheme.round_value(self.transform.inverse(z))
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::{norm_cdf, norm_pdf};
    use crate::transform::{box_cox_transform, fit_nonparametric_transform};

    fn log_model(theta: Vec<f64>, sigma: f64, y_max: Option<u32>) -> StarModel {
        let scheme = match y_max {
            Some(m) => RoundingScheme::bounded(m).unwrap(),
            None => RoundingScheme::unbounded(),
        };
        let g = box_cox_transform(0.0, (0.0, 1.0), &scheme).unwrap();
        StarModel::new(theta, sigma, g, scheme, None).unwrap()
    }

    #[test]
    fn zero_probability_under_log() {
        let m = log_model(vec![0.0], 1.0, None);
        let lp = m.log_pmf(&[1.0], 0).unwrap();
        assert!((lp - 0.5f64.ln()).abs() < 1e-12);
        let x = DMatrix::from_element(1, 1, 1.0);
        assert!((m.log_likelihood(&x, &[0]).unwrap() + std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn log_likelihood_is_additive() {
        let m = log_model(vec![0.3, -0.2], 0.8, Some(10));
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 1.0, -1.5]);
        let both = m.log_likelihood(&x, &[2, 5]).unwrap();
        let a = m.log_pmf(&[1.0, 0.5], 2).unwrap();
        let b = m.log_pmf(&[1.0, -1.5], 5).unwrap();
        assert!((both - a - b).abs() < 1e-12);
    }

    #[test]
    fn pmf_normalizes_and_zero_formula() {
        let m = log_model(vec![1.2], 0.9, Some(30));
        let total: f64 = (0..=30).map(|j| m.log_pmf(&[1.0], j).unwrap().exp()).sum();
        assert!((total - 1.0).abs() < 1e-10);
        let (_, g1) = m.cell(0);
        let p0 = m.log_pmf(&[1.0], 0).unwrap().exp();
        assert!((p0 - norm_cdf((g1 - 1.2) / 0.9)).abs() < 1e-14);
        assert!(m.log_pmf(&[1.0], 31).is_err());
    }

    #[test]
    fn half_mass_at_zero_when_mean_at_first_edge() {
        let scheme = RoundingScheme::bounded(30).unwrap();
        let y: Vec<u32> = (0..40).map(|i| (i * 7 % 31) as u32).collect();
        let g = fit_nonparametric_transform(&y, &scheme, None).unwrap();
        let g1 = g.evaluate(1.0);
        let m = StarModel::new(vec![g1], 2.0, g, scheme, None).unwrap();
        assert!((m.log_pmf(&[1.0], 0).unwrap().exp() - 0.5).abs() < 1e-14);
    }

    #[test]
    fn likelihood_matches_quadrature() {
        let m = log_model(vec![0.4, 0.7], 0.6, Some(4));
        let rows = [[1.0, -0.3], [1.0, 0.8], [1.0, 1.9], [1.0, 0.0], [1.0, -1.2]];
        let y = [1u32, 2, 4, 0, 3];
        let x = DMatrix::from_fn(5, 2, |i, j| rows[i][j]);
        let mut oracle = 0.0;
        for (r, &yi) in rows.iter().zip(&y) {
            let mu = 0.4 * r[0] + 0.7 * r[1];
            let (lo, hi) = m.cell(yi);
            let lo = lo.max(mu - 12.0);
            let hi = hi.min(mu + 12.0);
            let n = 20_000;
            let h = (hi - lo) / n as f64;
            let mut s = 0.0;
            for k in 0..=n {
                let z = lo + k as f64 * h;
                let wgt = if k == 0 || k == n {
                    1.0
                } else if k % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                s += wgt * norm_pdf((z - mu) / 0.6) / 0.6;
            }
            oracle += (s * h / 3.0).ln();
        }
        assert!((m.log_likelihood(&x, &y).unwrap() - oracle).abs() < 1e-9);
    }

    #[test]
    fn out_of_support_names_row() {
        let m = log_model(vec![0.0], 1.0, Some(3));
        let x = DMatrix::from_element(2, 1, 1.0);
        let err = m.log_likelihood(&x, &[1, 4]).unwrap_err();
        assert!(matches!(err, StarError::OutOfSupport { row: 1, .. }));
    }

    #[test]
    fn expected_count_degenerate_and_truncated() {
        let m = log_model(vec![(3.5f64).ln()], 1e-6, Some(30));
        assert!((m.expected_count(&[1.0]).unwrap() - 3.0).abs() < 1e-9);
        let m = log_model(vec![2.0], 1.3, Some(30));
        let (value, bound) = m.expected_count_at(2.0, 1.3);
        let full: f64 = (0..=30u32)
            .map(|j| j as f64 * m.log_pmf(&[1.0], j as i64).unwrap().exp())
            .sum();
        assert!(value <= 30.0);
        assert!((value - full).abs() <= bound.unwrap() + 1e-12);
    }

    #[test]
    fn quantile_matches_pmf_accumulation() {
        let m = log_model(vec![1.1], 0.8, Some(30));
        for &q in &[0.05, 0.3, 0.5, 0.77, 0.95, 0.9999] {
            let pmf = m.pmf_table(1.1, 0.8, 30);
            let mut acc = 0.0;
            let mut oracle = 30;
            for (j, p) in pmf.iter().enumerate() {
                acc += p;
                if acc >= q {
                    oracle = j as u32;
                    break;
                }
            }
            assert_eq!(m.latent_quantile(&[1.0], q).unwrap(), oracle, "q={q}");
        }
        assert_eq!(m.latent_quantile(&[1.0], 1.0 - 1e-15).unwrap(), 30);
        assert!(m.latent_quantile(&[1.0], 1.0).is_err());
    }

    #[test]
    fn sampling_is_seeded_and_bounded() {
        let m = log_model(vec![2.5], 1.5, Some(12));
        let x = DMatrix::from_element(500, 1, 1.0);
        let a = m.sample(&x, 9).unwrap();
        let b = m.sample(&x, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|&v| v <= 12));
        let tiny = log_model(vec![(4.2f64).ln()], 1e-9, Some(12));
        assert!(tiny.sample(&x, 1).unwrap().iter().all(|&v| v == 4));
    }
}
