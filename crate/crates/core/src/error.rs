use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("Newton iteration did not converge at time step {step} (residual {residual:.3e})")]
    NewtonDivergence { step: usize, residual: f64 },

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("snapshot set is identically zero")]
    ZeroSnapshots,

    #[error("rank {requested} exceeds available rank {available}")]
    RankTooLarge { requested: usize, available: usize },

    #[error("infeasible feedback gain: {0}")]
    InfeasibleGain(String),

    #[error("alpha formula breakdown: denominator {0:.3e} is not positive")]
    FormulaBreakdown(f64),

    #[error("no stabilizing horizon found up to N = {0}")]
    HorizonNotFound(usize),

    #[error("error term undefined: reduced state norm below floor at every time")]
    UndefinedErrorTerm,

    #[error("open-loop solve failed at MPC step {step}: {source}")]
    MpcStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub(crate) fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            got,
        })
    }
}
