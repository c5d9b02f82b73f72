use thiserror::Error;

/// Errors raised anywhere in the fitting, inference and I/O pipeline.
#[derive(Debug, Error)]
pub enum StarError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate interval [{lower}, {upper}]")]
    DegenerateInterval { lower: f64, upper: f64 },

    #[error("degenerate truncation{}: interval carries no representable mass", row_suffix(*.row))]
    DegenerateTruncation { row: Option<usize> },

    #[error("degenerate response: sample standard deviation is zero")]
    DegenerateResponse,

    #[error("empty sample")]
    EmptySample,

    #[error("underdispersed for NegBin moments: variance {variance} <= mean {mean}")]
    Underdispersed { mean: f64, variance: f64 },

    #[error("invalid spline knots: {0}")]
    InvalidKnots(String),

    #[error("response {value} at row {row} is outside the support {{0, ..., {y_max}}}")]
    OutOfSupport { row: usize, value: i64, y_max: String },

    #[error("singular design: dependent columns {columns:?}")]
    SingularDesign { columns: Vec<usize> },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("M-step variance is not positive ({0:e}); E-step moments are inconsistent")]
    NonPositiveVariance(f64),

    #[error("latent variance collapsed to the floor on consecutive iterations (iteration {iteration})")]
    VarianceCollapse { iteration: usize },

    #[error("likelihood ratio statistic {0:e} is negative: restricted fit beat the full fit")]
    NegativeLrt(f64),

    #[error("unbounded profile for coefficient {coef}: no crossing within +/-20 standard errors")]
    UnboundedProfile { coef: usize },

    #[error("data error at row {row}: {message}")]
    Data { row: usize, message: String },

    #[error("column mismatch: missing {missing:?}, extra {extra:?}")]
    ColumnMismatch {
        missing: Vec<String>,
        extra: Vec<String>,
    },

    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn row_suffix(row: Option<usize>) -> String {
    match row {
        Some(r) => format!(" at observation {r}"),
        None => String::new(),
    }
}

pub type Result<T> = std::result::Result<T, StarError>;
