use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("graph is disconnected; no spanning tree exists")]
    DisconnectedGraph,

    #[error("cycle space is empty (corank 0)")]
    EmptyCycleSpace,

    #[error("operation requires an undirected network")]
    NotUndirected,

    #[error("intertwiner must have at least 2 columns, got {0}")]
    DimensionTooSmall(usize),

    #[error("intertwiner is rank deficient (sigma_min / sigma_max = {ratio:e})")]
    RankDeficientIntertwiner { ratio: f64 },

    #[error("intertwiner does not annihilate the all-ones vector (|S e| = {residual:e})")]
    IntertwinerKernel { residual: f64 },

    #[error("matrix rows do not sum to zero (|D e| = {residual:e})")]
    NotZeroRowSum { residual: f64 },

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("eigenvalue iteration failed to converge")]
    EigenSolverFailed,

    #[error("coupling has {0} zero eigenvalues; expected exactly one")]
    MultipleZeroEVs(usize),

    #[error("negated coupling is not positive semidefinite (eigenvalue {0:e})")]
    Indefinite(f64),

    #[error("matrix is not normal (commutator norm {0:e})")]
    NotNormal(f64),

    #[error("protocol is not convergent")]
    NotConvergent,

    #[error("schedule is not uniformly dissipative (margin {0:e})")]
    PreconditionNotDissipative(f64),

    #[error("state norm exceeded {limit:e} at t = {time}")]
    BlowUp { time: f64, limit: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
