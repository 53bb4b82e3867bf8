use thiserror::Error;

pub type Result<T, E = MterError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum MterError {
    #[error("{file}:{line}: {msg}")]
    Parse { file: String, line: usize, msg: String },
    #[error("structural error: {0}")]
    Structural(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("{stage} did not converge after {iterations} iterations (residual {residual:e})")]
    Convergence {
        stage: &'static str,
        iterations: usize,
        residual: f64,
    },
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<MterError>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl MterError {
    /// Tags an error with the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ MterError::Stage { .. } => e,
            e => MterError::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// Strips stage annotations.
    pub fn root(&self) -> &MterError {
        match self {
            MterError::Stage { source, .. } => source.root(),
            e => e,
        }
    }
}
