use thiserror::Error;

/// Errors produced by the workbench.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("empty signal: {0}")]
    EmptySignal(&'static str),

    #[error("length mismatch: {what} ({left} vs {right})")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error("index {index} out of range (len {len})")]
    Index { index: usize, len: usize },

    #[error("degenerate region {region}: basis column {column} is rank deficient")]
    DegenerateRegion { region: usize, column: usize },

    #[error("degenerate region {region}: {rows} rows for {cols} coefficients")]
    UnderdeterminedRegion {
        region: usize,
        rows: usize,
        cols: usize,
    },

    #[error("matrix is not positive definite (pivot {0})")]
    NotPositiveDefinite(usize),

    #[error("learning diverged at iteration {iteration}: error power rose {rise_db:.1} dB")]
    Divergence {
        iteration: usize,
        rise_db: f64,
        trace: Vec<crate::dpd::IterationRecord>,
    },

    #[error("alignment failed: normalized correlation peak {peak:.3} below 0.2")]
    Alignment { peak: f64 },

    #[error("insufficient bandwidth: sample rate {sample_rate} Hz < {required} Hz")]
    InsufficientBandwidth { sample_rate: f64, required: f64 },

    #[error("zero-energy reference signal")]
    ZeroEnergy,

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("format error: {0}")]
    Format(String),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// True for errors caused by numerical degeneracy of the data.
    pub fn is_degenerate(&self) -> bool {
        matches!(
            self,
            Error::DegenerateRegion { .. }
                | Error::UnderdeterminedRegion { .. }
                | Error::NotPositiveDefinite(_)
                | Error::ZeroEnergy
                | Error::Alignment { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
