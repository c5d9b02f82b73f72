//! The rounding operator: a fixed partition of the real line into cells
//! `[a_j, a_{j+1})`, one per count value.

use serde::{Deserialize, Serialize};

use crate::error::{Result, StarError};

/// Partition `a_0 = -inf < a_1 < ... < a_{y_max} < a_{y_max+1} = +inf`.
///
/// By default `a_j = j` for `j >= 1`. A finite `y_max` closes the top cell at
/// `+inf`, which bounds the support; right-censoring at `C` is the bounded
/// scheme with `y_max = C`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundingScheme {
    /// Interior breakpoints `a_1, ..., a_{y_max}` when they differ from the
    /// default `a_j = j`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    interior: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    y_max: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    censored_at: Option<u32>,
}

impl Default for RoundingScheme {
    fn default() -> Self {
        Self::unbounded()
    }
}

impl RoundingScheme {
    /// Support `{0, 1, 2, ...}` with `a_j = j`.
    pub fn unbounded() -> Self {
        Self {
            interior: None,
            y_max: None,
            censored_at: None,
        }
    }

    /// Support `{0, ..., y_max}` with `a_j = j` and `a_{y_max+1} = +inf`.
    pub fn bounded(y_max: u32) -> Result<Self> {
        if y_max == 0 {
            return Err(StarError::Domain("y_max must be at least 1".into()));
        }
        Ok(Self {
            interior: None,
            y_max: Some(y_max),
            censored_at: None,
        })
    }

    /// Observations recorded as "`c` or more": identical to the bounded scheme
    /// with `y_max = c`.
    pub fn censored(c: u32) -> Result<Self> {
        let mut scheme = Self::bounded(c)?;
        scheme.censored_at = Some(c);
        Ok(scheme)
    }

    /// Bounded scheme with custom interior breakpoints `a_1 < ... < a_{y_max}`.
    pub fn with_breakpoints(interior: Vec<f64>) -> Result<Self> {
        if interior.is_empty() {
            return Err(StarError::Domain("need at least one interior breakpoint".into()));
        }
        if interior.iter().any(|v| !v.is_finite()) || interior.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(StarError::Domain(
                "interior breakpoints must be finite and strictly increasing".into(),
            ));
        }
        let y_max = interior.len() as u32;
        Ok(Self {
            interior: Some(interior),
            y_max: Some(y_max),
            censored_at: None,
        })
    }

    pub fn y_max(&self) -> Option<u32> {
        self.y_max
    }

    pub fn censored_at(&self) -> Option<u32> {
        self.censored_at
    }

    pub fn is_bounded(&self) -> bool {
        self.y_max.is_some()
    }

    pub fn contains(&self, j: i64) -> bool {
        j >= 0 && self.y_max.is_none_or(|m| j <= m as i64)
    }

    /// Breakpoint `a_j`.
    pub fn breakpoint(&self, j: u32) -> f64 {
        if j == 0 {
            return f64::NEG_INFINITY;
        }
        if let Some(m) = self.y_max {
            if j > m {
                return f64::INFINITY;
            }
        }
        match &self.interior {
            Some(a) => a[(j - 1) as usize],
            None => j as f64,
        }
    }

    /// Lower edge of the transformation's support, `a_1`.
    pub fn support_lower(&self) -> f64 {
        self.breakpoint(1)
    }

    /// Nominal location of the upper edge of cell `j`, used to place
    /// interpolation knots. Equals `a_{j+1}` except for the top cell of a
    /// bounded scheme, where `a_{y_max+1} = +inf` and the location one unit
    /// past `a_{y_max}` is used instead.
    pub fn knot_location(&self, j: u32) -> f64 {
        let upper = self.breakpoint(j + 1);
        if upper.is_finite() {
            upper
        } else {
            self.breakpoint(j) + 1.0
        }
    }

    /// Upper edge of the support in `t`-space: `a_{y_max}+1` (the point at
    /// and beyond which the transformation is `+inf`), or `+inf`.
    pub fn support_upper(&self) -> f64 {
        match self.y_max {
            Some(m) => self.knot_location(m),
            None => f64::INFINITY,
        }
    }

    /// The rounding operator `h`: the `j` with `a_j <= y_star < a_{j+1}`.
    pub fn round_value(&self, y_star: f64) -> u32 {
        let raw = match &self.interior {
            Some(a) => a.partition_point(|&b| b <= y_star) as u64,
            None => {
                if y_star.is_nan() || y_star < 1.0 {
                    0
                } else if y_star >= u32::MAX as f64 {
                    u32::MAX as u64
                } else {
                    y_star.floor() as u64
                }
            }
        };
        match self.y_max {
            Some(m) => raw.min(m as u64) as u32,
            None => raw as u32,
        }
    }

    /// Re-check the invariants of a deserialized scheme.
    pub(crate) fn validated(self) -> Result<Self> {
        let mut scheme = match (&self.interior, self.y_max) {
            (Some(a), Some(m)) if a.len() == m as usize => Self::with_breakpoints(a.clone())?,
            (Some(_), _) => {
                return Err(StarError::Domain(
                    "interior breakpoints must number y_max".into(),
                ))
            }
            (None, Some(m)) => Self::bounded(m)?,
            (None, None) => Self::unbounded(),
        };
        match self.censored_at {
            Some(c) if Some(c) != scheme.y_max => {
                return Err(StarError::Domain("censoring point must equal y_max".into()))
            }
            c => scheme.censored_at = c,
        }
        Ok(scheme)
    }

    /// Validate a response value against the support.
    pub fn check_response(&self, row: usize, value: i64) -> Result<u32> {
        if self.contains(value) {
            Ok(value as u32)
        } else {
            Err(StarError::OutOfSupport {
                row,
                value,
                y_max: self
                    .y_max
                    .map_or_else(|| "inf".to_string(), |m| m.to_string()),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_default() {
        let s = RoundingScheme::unbounded();
        assert_eq!(s.round_value(2.7), 2);
        assert_eq!(s.round_value(-5.0), 0);
        assert_eq!(s.round_value(0.999), 0);
        assert_eq!(s.round_value(1.0), 1);
    }

    #[test]
    fn round_bounded() {
        let s = RoundingScheme::bounded(30).unwrap();
        assert_eq!(s.round_value(31.2), 30);
        assert_eq!(s.round_value(1e300), 30);
        assert_eq!(s.breakpoint(31), f64::INFINITY);
        assert_eq!(s.breakpoint(30), 30.0);
        assert_eq!(s.support_upper(), 31.0);
        assert!(RoundingScheme::bounded(0).is_err());
    }

    #[test]
    fn censoring_is_bounded_scheme() {
        let c = RoundingScheme::censored(10).unwrap();
        let b = RoundingScheme::bounded(10).unwrap();
        for j in 0..=12 {
            assert_eq!(c.breakpoint(j), b.breakpoint(j));
        }
        assert_eq!(c.censored_at(), Some(10));
    }

    #[test]
    fn custom_breakpoints() {
        let s = RoundingScheme::with_breakpoints(vec![0.5, 2.0, 4.0]).unwrap();
        assert_eq!(s.y_max(), Some(3));
        assert_eq!(s.round_value(0.49), 0);
        assert_eq!(s.round_value(0.5), 1);
        assert_eq!(s.round_value(3.9), 2);
        assert_eq!(s.round_value(100.0), 3);
        assert!(RoundingScheme::with_breakpoints(vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn response_check() {
        let s = RoundingScheme::bounded(30).unwrap();
        assert!(s.check_response(3, 31).is_err());
        assert!(s.check_response(3, -1).is_err());
        assert_eq!(s.check_response(3, 30).unwrap(), 30);
    }
}
