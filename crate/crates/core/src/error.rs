use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("invalid resolution: {0}")]
    InvalidResolution(String),

    #[error("parse error in `{expr}` at column {column}: {message}")]
    Parse { expr: String, column: usize, message: String },

    #[error("spec error at line {line}, column {column}: {message}")]
    Spec { line: usize, column: usize, message: String },

    #[error("invalid problem data: {0}")]
    InvalidData(String),

    #[error("expression `{expr}` evaluated to {value} at {point:?}")]
    Evaluation { expr: String, point: Vec<f64>, value: f64 },

    #[error("evaluation failed on cell {cell}: {source}")]
    CellEvaluation {
        cell: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("comparability violated at {point:?} in direction {direction:?}: <xi,P xi> = {p_form:e}, <xi,Q xi> = {q_form:e}")]
    Comparability { point: Vec<f64>, direction: Vec<f64>, p_form: f64, q_form: f64 },

    #[error("adjoint assembly does not match the transpose (relative mismatch {0:e})")]
    TransposeMismatch(f64),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("coercivity could not be verified (comparability constant or defect {0:e})")]
    CoercivityFailure(f64),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("invalid request: {0}")]
    InvalidRequest(String),

    #[error("no Poincare inequality: smallest nonzero eigenvalue {0:e} is below threshold")]
    NoPoincare(f64),

    #[error("invalid ball: {0}")]
    InvalidBall(String),

    #[error("all {0} sampled pairs were degenerate")]
    DegenerateSampling(usize),

    #[error("not a subsolution: rows {rows:?} have positive residual (max {max_violation:e})")]
    NotSubsolution { rows: Vec<usize>, max_violation: f64 },

    #[error("unknown {kind} `{name}` (available: {available})")]
    UnknownStrategy { kind: &'static str, name: String, available: String },

    #[error("backend `{backend}` does not support {what}")]
    Unsupported { backend: &'static str, what: &'static str },

    #[error("iteration did not converge: {0}")]
    NoConvergence(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
