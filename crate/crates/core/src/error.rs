use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid {field}: {reason}")]
    InvalidInput { field: &'static str, reason: String },

    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("antenna allocation on RF chain uses {used} antennas but only {available} exist")]
    AntennaBudget { used: usize, available: usize },

    #[error("coalition formation did not converge after {sweeps} sweeps ({operations} accepted operations)")]
    NotConverged { sweeps: usize, operations: usize },

    #[error("exhaustive search needs {predicted} evaluations, above the cap of {cap}")]
    SearchTooLarge { predicted: f64, cap: f64 },

    #[error("effective channels of coalition {coalition} are all zero")]
    DegenerateChannel { coalition: usize },

    #[error("equivalent channel matrix is ill-conditioned (condition number {condition:.3e})")]
    IllConditioned { condition: f64 },

    #[error("QoS constraints are infeasible for users {users:?}")]
    InfeasibleQos { users: Vec<usize> },

    #[error("SIC decoding constraints are infeasible on chains {chains:?}")]
    InfeasibleSic { chains: Vec<usize> },

    #[error("interior-point solver failed: {0}")]
    Solver(String),

    #[error("drop {drop}")]
    Drop {
        drop: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn input(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidInput {
            field,
            reason: reason.into(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Attaches the Monte Carlo drop index to an error.
    pub fn in_drop(self, drop: u64) -> Self {
        Error::Drop {
            drop,
            source: Box::new(self),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
