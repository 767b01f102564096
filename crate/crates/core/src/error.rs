use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("point ({x}, {y}, {t}) lies outside the window")]
    OutsideWindow { x: f64, y: f64, t: f64 },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("design matrix is rank deficient: column {column} is collinear with earlier columns")]
    RankDeficient { column: usize },

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
