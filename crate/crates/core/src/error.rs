use thiserror::Error;

pub type Result<T> = std::result::Result<T, SwgeeError>;

/// Every failure the library can report.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum SwgeeError {
    #[error("input error: {0}")]
    Input(String),
    #[error("schema error at row {row}: {message}")]
    Schema { row: usize, message: String },
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("variance degeneracy: mean {mean} at period {period} is on the boundary of (0, 1)")]
    VarianceDegeneracy { period: usize, mean: f64 },
    #[error("infeasible correlation parameters{}: {message}", cluster_suffix(.cluster))]
    InfeasibleParameters { cluster: Option<usize>, message: String },
    #[error("limit correlation undefined when alpha0 = 0")]
    UndefinedLimit,
    #[error("individual-level expansion of {size} outcomes exceeds the oracle guard of {limit}")]
    OracleScale { size: usize, limit: usize },
    #[error("unidentified parameter: {0}")]
    Unidentified(String),
    #[error("leverage degeneracy in cluster {cluster}: I - H is singular")]
    LeverageDegeneracy { cluster: usize },
    #[error("no convergence: {message}")]
    NonConvergence { message: String, trace: Vec<f64> },
    #[error("numerical conditioning: {0}")]
    Numerical(String),
    #[error("degrees of freedom: {0}")]
    DegreesOfFreedom(String),
    #[error("degenerate design: {0}")]
    DegenerateDesign(String),
    #[error("generator feasibility violated at index {index}: conditional mean {value}")]
    Feasibility { index: usize, value: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

fn cluster_suffix(cluster: &Option<usize>) -> String {
    match cluster {
        Some(c) => format!(" in cluster {c}"),
        None => String::new(),
    }
}
