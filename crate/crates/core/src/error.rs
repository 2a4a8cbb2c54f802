use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("derivative order {requested} exceeds supported maximum {max}")]
    UnsupportedOrder { requested: usize, max: usize },

    #[error("no feasible Gevrey constants for alpha = {alpha} up to order {k_max} within the search bounds")]
    GevreyFitFailure { alpha: f64, k_max: usize },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("spectral gap collapsed at s = {s}: gap {gap:e} is below {threshold:e}")]
    GapCollapse { s: f64, gap: f64, threshold: f64 },

    #[error("band tracking ambiguous at s = {s}: {detail}; refine the grid")]
    Tracking { s: f64, detail: String },

    #[error("point z = {re} + {im}i lies within {distance:e} of the spectrum")]
    NearSingular { re: f64, im: f64, distance: f64 },

    #[error("integrator step size underflow at s = {s} (h = {h:e}); reduce tau or the dimension")]
    Stiffness { s: f64, h: f64 },

    #[error("value out of representable range: {0}")]
    Range(String),

    #[error("truncation infeasible: {0}")]
    InfeasibleTruncation(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("run time {tau:e} at gap {gap} exceeds the integrator budget {budget:e}{}", largest_feasible_gap.map(|g| format!(" (largest feasible gap {g})")).unwrap_or_default())]
    Budget {
        tau: f64,
        gap: f64,
        budget: f64,
        largest_feasible_gap: Option<f64>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("csv output {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
