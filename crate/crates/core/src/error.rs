use thiserror::Error;

/// Errors raised across the crate.
///
/// Support and feasibility failures inside likelihood code are not errors: they are mapped to an
/// infinite negative log-likelihood so that optimizers can reject the point.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value for {0}")]
    NonFinite(&'static str),

    #[error("probability {0} is outside (0, 1)")]
    Probability(f64),

    #[error("value {value} is outside the GEV support{}", site_suffix(.site, .block))]
    Support {
        value: f64,
        site: Option<String>,
        block: Option<usize>,
    },

    #[error("invalid marginal parameter at site {site}: {detail}")]
    InvalidMarginal { site: String, detail: String },

    #[error("dispersion matrix is not symmetric positive definite")]
    NotPositiveDefinite,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("infeasible starting point: {0}")]
    Infeasible(String),

    #[error("ill-conditioned matrix (condition number {cond:.3e}); {hint}")]
    IllConditioned { cond: f64, hint: String },

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn site_suffix(site: &Option<String>, block: &Option<usize>) -> String {
    match (site, block) {
        (Some(s), Some(b)) => format!(" (site {s}, block {b})"),
        (Some(s), None) => format!(" (site {s})"),
        (None, Some(b)) => format!(" (block {b})"),
        (None, None) => String::new(),
    }
}

impl Error {
    /// Process exit code used by the command line tool: 3 for data errors, 4 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::IllConditioned { .. }
            | Error::Numeric(_)
            | Error::Infeasible(_)
            | Error::NotPositiveDefinite => 4,
            _ => 3,
        }
    }

    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NonFinite(_) => "non_finite",
            Error::Probability(_) => "probability",
            Error::Support { .. } => "support",
            Error::InvalidMarginal { .. } => "invalid_marginal",
            Error::NotPositiveDefinite => "not_positive_definite",
            Error::Dimension(_) => "dimension",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Infeasible(_) => "infeasible",
            Error::IllConditioned { .. } => "ill_conditioned",
            Error::Numeric(_) => "numeric",
            Error::Parse { .. } => "parse",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
