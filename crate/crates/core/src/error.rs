use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("grid error: {0}")]
    Grid(String),

    #[error("non-finite evaluation at t = {t}{}", point_suffix(*.x, *.y))]
    Evaluation { t: f64, x: Option<f64>, y: Option<f64> },

    #[error("{method} diverged after {} iterations (best residual {best:e})", history.len())]
    Diverged {
        method: &'static str,
        best: f64,
        history: Vec<f64>,
    },

    #[error("{method} did not converge in {} iterations (residual {residual:e})", history.len())]
    NoConvergence {
        method: &'static str,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("singular linear system at pivot {0}")]
    Singular(usize),

    #[error("line search failed at residual {0:e}")]
    LineSearch(f64),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("parse error at offset {pos}: {msg}")]
    Parse { pos: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn point_suffix(x: Option<f64>, y: Option<f64>) -> String {
    match (x, y) {
        (Some(x), Some(y)) => format!(", x = {x}, y = {y}"),
        (Some(x), None) => format!(", x = {x}"),
        _ => String::new(),
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Returns `v` when finite, otherwise an evaluation error at `(t, x, y)`.
pub(crate) fn finite_at(v: f64, t: f64, x: f64, y: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Evaluation {
            t,
            x: Some(x),
            y: Some(y),
        })
    }
}
