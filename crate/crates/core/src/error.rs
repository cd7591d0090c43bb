use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid scenario at `{path}`: {message}")]
    Schema { path: String, message: String },

    #[error("eikonal solver did not converge after {sweeps} sweeps (residual {residual:e})")]
    NonConvergence { sweeps: usize, residual: f64 },

    #[error("density {value} in cell {cell} left [0, {rho_max}] at t = {time} (time step too large?)")]
    Monotonicity {
        cell: usize,
        value: f64,
        rho_max: f64,
        time: f64,
    },

    #[error("point ({0}, {1}) lies outside the domain")]
    OutsideDomain(f64, f64),

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}
