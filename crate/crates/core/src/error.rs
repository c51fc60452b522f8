use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A state left the finite range (or exceeded the divergence bound) during integration.
    #[error("trajectory diverged at step {step}")]
    Diverged { step: usize },

    #[error("term library for {vars} variables up to order {order} exceeds addressable size")]
    Capacity { vars: usize, order: u32 },

    #[error("parse error at line {line}{}: {msg}", field.as_ref().map(|f| format!(" (field `{f}`)")).unwrap_or_default())]
    Parse {
        line: usize,
        field: Option<String>,
        msg: String,
    },

    #[error("unknown system `{0}`")]
    NotFound(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("insufficient data: need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("initiation interval {ii} is below the carried dependency distance {distance} of nest `{nest}`")]
    InfeasibleIi { nest: String, ii: u32, distance: u32 },

    #[error("non-finite parameters after update (epoch {epoch}, batch {batch}); loss history {history:?}")]
    NonFinite {
        epoch: usize,
        batch: usize,
        history: Vec<f64>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn parse(line: usize, field: Option<&str>, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            field: field.map(str::to_owned),
            msg: msg.into(),
        }
    }
}
