use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("matrix is not symmetric (relative asymmetry {0:.3e})")]
    Asymmetric(f64),

    #[error("columns are not orthonormal (|VtV - I|_F = {0:.3e})")]
    NotOrthonormal(f64),

    #[error("eigensolver did not converge (achieved residual {residual:.3e})")]
    Convergence { residual: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("all {pairs} observation pairs are degenerate")]
    DegenerateSample { pairs: usize },

    #[error("degenerate observation pair ({i}, {j})")]
    DegeneratePair { i: usize, j: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("partition error: {0}")]
    Partition(String),

    #[error("protocol error{}: {reason}", fmt_machine(.machine_id))]
    Protocol {
        machine_id: Option<u32>,
        reason: String,
    },

    #[error("machine {machine_id}: {source}")]
    Worker {
        machine_id: u32,
        #[source]
        source: Box<Error>,
    },

    #[error("wire format: {0}")]
    Wire(String),

    #[error("numerical check failed: {0}")]
    Numerical(String),

    #[error("csv: {0}")]
    Csv(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn fmt_machine(id: &Option<u32>) -> String {
    match id {
        Some(id) => format!(" (machine {id})"),
        None => String::new(),
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
