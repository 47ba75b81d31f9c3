use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] podhjb::Error),

    #[error("configuration: {0}")]
    Config(String),

    #[error("{what} not found at {path}; run `podhjb {stage}` first")]
    NotFound {
        what: &'static str,
        path: PathBuf,
        stage: &'static str,
    },

    #[error("{path} was built with different settings ({fields}); rerun `podhjb {stage}`")]
    Stale {
        path: PathBuf,
        fields: String,
        stage: &'static str,
    },

    #[error("value iteration stopped after {iterations} sweeps with residual {residual:e} (stop tolerance {stop_tol:e})")]
    NotConverged {
        iterations: usize,
        residual: f64,
        stop_tol: f64,
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
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    /// 2 for invalid input, 3 for numerical failure, 1 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_numerical() => 3,
            CliError::NotConverged { .. } => 3,
            CliError::Core(_) | CliError::Config(_) | CliError::NotFound { .. } | CliError::Stale { .. } => 2,
            CliError::Io { .. } | CliError::Json { .. } => 1,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Config("x".into()).exit_code(), 2);
        assert_eq!(CliError::Core(podhjb::Error::RankOutOfRange { r: 9, d: 3 }).exit_code(), 2);
        let riccati = podhjb::Error::Riccati {
            reason: "x".into(),
            history: vec![],
        };
        assert_eq!(CliError::Core(riccati).exit_code(), 3);
        let nc = CliError::NotConverged {
            iterations: 1,
            residual: 1.0,
            stop_tol: 0.1,
        };
        assert_eq!(nc.exit_code(), 3);
    }
}
