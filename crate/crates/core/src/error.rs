use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("uniform deviate u1 = {0} outside (0, 1]")]
    InvalidUniform(f64),

    #[error("time step {dt} exceeds the stability bound {dt_max}")]
    StepSize { dt: f64, dt_max: f64 },

    #[error("integration diverged at t = {t}: |{component}| = {magnitude}")]
    Divergence {
        t: f64,
        component: &'static str,
        magnitude: f64,
    },

    #[error("series is empty")]
    EmptySeries,

    #[error("correlation undefined: channel {channel} has zero variance")]
    UndefinedCorrelation { channel: u8 },

    #[error("delay {tau} is not a multiple of the sampling interval {dt}")]
    DelayOffGrid { tau: f64, dt: f64 },

    #[error("delay {tau} leaves no overlap in a window of {n} samples")]
    DelayTooLong { tau: f64, n: usize },

    #[error("curves are defined on different grids")]
    GridMismatch,

    #[error("scale unidentifiable: {0}")]
    Unidentifiable(String),

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("{0}")]
    Validation(String),

    #[error("csv {path} line {line}: {message}")]
    Csv {
        path: String,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
