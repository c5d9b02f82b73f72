//! Weighted least squares through a column-pivoted QR factorization.
//!
//! The EM M-step solves the same weighted problem with a new right-hand side
//! at every iteration, so the factorization is computed once and reused.

use nalgebra::{ColPivQR, DMatrix, DVector, Dyn, RowDVector};

use crate::error::{Result, StarError};

/// Relative threshold on `|R_kk| / |R_00|` below which a column is treated as
/// linearly dependent on the ones before it.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct WeightedLeastSquares {
    qr: ColPivQR<f64, Dyn, Dyn>,
    r: DMatrix<f64>,
    /// `pivot[k]` is the original column sitting at position `k` of `XP`.
    pivot: Vec<usize>,
    sqrt_w: Option<DVector<f64>>,
    nrows: usize,
}

impl WeightedLeastSquares {
    pub fn new(x: &DMatrix<f64>, weights: Option<&[f64]>) -> Result<Self> {
        let (n, p) = x.shape();
        if p == 0 {
            return Err(StarError::Dimension("design has no columns".into()));
        }
        if n < p {
            return Err(StarError::SingularDesign {
                columns: (n..p).collect(),
            });
        }
        let sqrt_w = match weights {
            Some(w) => {
                if w.len() != n {
                    return Err(StarError::Dimension(format!("{} weights for {n} rows", w.len())));
                }
                if w.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
                    return Err(StarError::Domain("weights must be positive and finite".into()));
                }
                Some(DVector::from_iterator(n, w.iter().map(|v| v.sqrt())))
            }
            None => None,
        };
        let mut a = x.clone();
        if let Some(s) = &sqrt_w {
            for mut col in a.column_iter_mut() {
                col.component_mul_assign(s);
            }
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(StarError::Domain("design contains non-finite values".into()));
        }
        let qr = a.col_piv_qr();
        let r = qr.r();
        let mut order = RowDVector::from_iterator(p, (0..p).map(|k| k as f64));
        qr.p().permute_columns(&mut order);
        let pivot: Vec<usize> = order.iter().map(|&v| v as usize).collect();

        let scale = r[(0, 0)].abs();
        let dependent: Vec<usize> = (0..p)
            .filter(|&k| !(r[(k, k)].abs() > RANK_TOL * scale))
            .map(|k| pivot[k])
            .collect();
        if scale == 0.0 || !dependent.is_empty() {
            let mut columns = if scale == 0.0 { (0..p).collect() } else { dependent };
            columns.sort_unstable();
            return Err(StarError::SingularDesign { columns });
        }
        Ok(Self {
            qr,
            r,
            pivot,
            sqrt_w,
            nrows: n,
        })
    }

    pub fn ncols(&self) -> usize {
        self.pivot.len()
    }

    /// `argmin_theta sum_i w_i (d_i - x_i'theta)^2`.
    pub fn solve(&self, d: &[f64]) -> Result<Vec<f64>> {
        if d.len() != self.nrows {
            return Err(StarError::Dimension(format!(
                "{} responses for {} rows",
                d.len(),
                self.nrows
            )));
        }
        let mut b = DVector::from_column_slice(d);
        if let Some(s) = &self.sqrt_w {
            b.component_mul_assign(s);
        }
        self.qr.q_tr_mul(&mut b);
        let p = self.ncols();
        let mut coef = vec![0.0; p];
        for k in (0..p).rev() {
            let mut acc = b[k];
            for j in k + 1..p {
                acc -= self.r[(k, j)] * coef[j];
            }
            coef[k] = acc / self.r[(k, k)];
        }
        let mut theta = vec![0.0; p];
        for (k, &col) in self.pivot.iter().enumerate() {
            theta[col] = coef[k];
        }
        Ok(theta)
    }
}

/// One-shot weighted least squares.
pub fn weighted_least_squares(
    x: &DMatrix<f64>,
    d: &[f64],
    weights: Option<&[f64]>,
) -> Result<Vec<f64>> {
    WeightedLeastSquares::new(x, weights)?.solve(d)
}

/// Keep the listed columns of `x`, in order.
pub fn select_columns(x: &DMatrix<f64>, columns: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), columns.len(), |i, k| x[(i, columns[k])])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Normal equations solved by Gauss-Jordan elimination with partial
    /// pivoting, in compensated (double-double style) accumulation.
    fn normal_equations_oracle(x: &DMatrix<f64>, d: &[f64], w: &[f64]) -> Vec<f64> {
        let p = x.ncols();
        let mut a = vec![vec![0.0f64; p + 1]; p];
        for j in 0..p {
            for k in 0..p {
                a[j][k] = kahan((0..x.nrows()).map(|i| w[i] * x[(i, j)] * x[(i, k)]));
            }
            a[j][p] = kahan((0..x.nrows()).map(|i| w[i] * x[(i, j)] * d[i]));
        }
        for c in 0..p {
            let piv = (c..p)
                .max_by(|&i, &j| a[i][c].abs().partial_cmp(&a[j][c].abs()).unwrap())
                .unwrap();
            a.swap(c, piv);
            for r in 0..p {
                if r != c {
                    let f = a[r][c] / a[c][c];
                    for k in c..=p {
                        a[r][k] -= f * a[c][k];
                    }
                }
            }
        }
        (0..p).map(|j| a[j][p] / a[j][j]).collect()
    }

    fn kahan(it: impl Iterator<Item = f64>) -> f64 {
        let (mut s, mut c) = (0.0, 0.0);
        for v in it {
            let y = v - c;
            let t = s + y;
            c = (t - s) - y;
            s = t;
        }
        s
    }

    #[test]
    fn intercept_only_is_mean() {
        let x = DMatrix::from_element(4, 1, 1.0);
        let theta = weighted_least_squares(&x, &[1.0, 2.0, 3.0, 6.0], None).unwrap();
        assert!((theta[0] - 3.0).abs() < 1e-14);
        let theta = weighted_least_squares(&x, &[1.0, 2.0, 3.0, 6.0], Some(&[1.0, 1.0, 1.0, 3.0]))
            .unwrap();
        assert!((theta[0] - 24.0 / 6.0).abs() < 1e-14);
    }

    #[test]
    fn exact_recovery_in_column_space() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 5.0]);
        let d: Vec<f64> = (0..4).map(|i| 0.5 - 2.0 * x[(i, 1)]).collect();
        let theta = weighted_least_squares(&x, &d, None).unwrap();
        assert!((theta[0] - 0.5).abs() < 1e-13 && (theta[1] + 2.0).abs() < 1e-13);
    }

    #[test]
    fn random_instance_matches_oracle_and_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (n, p) = (50, 6);
        let x = DMatrix::from_fn(n, p, |_, j| if j == 0 { 1.0 } else { rng.random::<f64>() * 4.0 - 2.0 });
        let d: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 10.0).collect();
        let w: Vec<f64> = (0..n).map(|_| 0.2 + rng.random::<f64>()).collect();
        let theta = weighted_least_squares(&x, &d, Some(&w)).unwrap();
        let oracle = normal_equations_oracle(&x, &d, &w);
        for (a, b) in theta.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
        let norm_d = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        for j in 0..p {
            let dot: f64 = (0..n)
                .map(|i| {
                    let fit: f64 = (0..p).map(|k| x[(i, k)] * theta[k]).sum();
                    w[i] * x[(i, j)] * (d[i] - fit)
                })
                .sum();
            assert!(dot.abs() < 1e-8 * norm_d);
        }
    }

    #[test]
    fn singular_design_names_dependent_column() {
        let x = DMatrix::from_row_slice(
            4,
            3,
            &[1.0, 1.0, 2.0, 1.0, 2.0, 4.0, 1.0, 3.0, 6.0, 1.0, 4.0, 8.0],
        );
        match WeightedLeastSquares::new(&x, None) {
            Err(StarError::SingularDesign { columns }) => {
                assert_eq!(columns.len(), 1);
                assert!(columns[0] == 1 || columns[0] == 2);
            }
            other => panic!("expected singular design, got {other:?}"),
        }
    }

    #[test]
    fn select_columns_keeps_order() {
        let x = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let s = select_columns(&x, &[2, 0]);
        assert_eq!(s, DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 6.0, 4.0]));
    }
}
