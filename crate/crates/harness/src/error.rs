use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    /// Bad config, incompatible checkpoint, unreadable input.
    #[error("config error: {0}")]
    Config(String),

    /// Divergence, degenerate precoder, ill-conditioned estimate.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Io(_) => 2,
            HarnessError::Numerical(_) => 3,
        }
    }
}

impl From<isac_core::Error> for HarnessError {
    fn from(e: isac_core::Error) -> Self {
        use isac_core::Error as E;
        match e {
            E::Divergence { .. } | E::NonFinite(_) | E::DegenerateOutput | E::IllConditioned(_) => {
                HarnessError::Numerical(e.to_string())
            }
            E::Io(io) => HarnessError::Io(io),
            other => HarnessError::Config(other.to_string()),
        }
    }
}

impl From<csv::Error> for HarnessError {
    fn from(e: csv::Error) -> Self {
        HarnessError::Config(format!("csv: {e}"))
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
