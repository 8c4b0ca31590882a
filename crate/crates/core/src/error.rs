use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SmdError {
    /// Bad argument value: wrong dimension, infeasible point, non-finite entry.
    #[error("input error: {0}")]
    Input(String),
    /// Unsupported or inconsistent configuration.
    #[error("configuration error: {0}")]
    Config(String),
    /// A run produced a non-finite value.
    #[error("numerical error at step {step}: {message}")]
    Numerical { step: u64, message: String },
    /// A Monte Carlo trial failed; wraps the trial's own error.
    #[error("trial {trial}: {source}")]
    Trial {
        trial: u64,
        #[source]
        source: Box<SmdError>,
    },
    /// A comparison was declined because its preconditions failed.
    #[error("refused: {0}")]
    Refused(String),
}

impl SmdError {
    pub fn input(msg: impl Into<String>) -> Self {
        SmdError::Input(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        SmdError::Config(msg.into())
    }

    /// True for errors caused by arithmetic blow-up rather than bad input.
    pub fn is_numerical(&self) -> bool {
        match self {
            SmdError::Numerical { .. } => true,
            SmdError::Trial { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, SmdError>;

pub(crate) fn check_finite(v: &[f64], what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(SmdError::input(format!("{what} has non-finite entries")))
    }
}

pub(crate) fn check_dim(v: &[f64], dim: usize, what: &str) -> Result<()> {
    if v.len() == dim {
        Ok(())
    } else {
        Err(SmdError::input(format!(
            "{what} has dimension {}, expected {dim}",
            v.len()
        )))
    }
}
