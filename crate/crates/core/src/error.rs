use thiserror::Error;

/// Errors shared across the linear-algebra, trajectory, model and protocol layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown subsystem label `{0}`")]
    UnknownLabel(String),
    #[error("duplicate subsystem label `{0}`")]
    DuplicateLabel(String),
    #[error("subsystem `{label}` has dimension {dim}, need at least 2")]
    SubsystemTooSmall { label: String, dim: usize },
    #[error("dimension mismatch: {context} (expected {expected}, got {got})")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("state spaces do not match: {0}")]
    SpaceMismatch(&'static str),
    #[error("state has zero norm")]
    ZeroNormState,
    #[error("state is not normalized (|norm - 1| = {deviation:e})")]
    NotNormalized { deviation: f64 },
    #[error("amplitudes are not finite")]
    NonFiniteAmplitude,
    #[error("projectors do not sum to identity (max deviation {deviation:e})")]
    IncompleteProjectors { deviation: f64 },
    #[error("projectors are not mutually orthogonal (max cross term {deviation:e})")]
    NonOrthogonalProjectors { deviation: f64 },
    #[error("integration step increased the squared norm by a relative {growth:e} at t = {t}")]
    StepInstability { t: f64, growth: f64 },
    #[error("all jump rates vanish at the crossing time t = {t}")]
    AllJumpRatesZero { t: f64 },
    #[error("invalid integrator configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid physical parameters: {0}")]
    InvalidParams(String),
    #[error("pulse design reached its budget below the transfer target: achieved {achieved}")]
    PulseDesignBelowTarget { achieved: f64 },
    #[error("gate left residual cavity population {population:e} above tolerance {tolerance:e}")]
    ResidualCavityPopulation { population: f64, tolerance: f64 },
    #[error("channel input lies outside the declared sector: {0}")]
    SectorViolation(String),
    #[error("channel extraction residual {residual:e} exceeds tolerance")]
    ExtractionResidual { residual: f64 },
    #[error("gate layout is inconsistent: {0}")]
    LayoutError(String),
    #[error("symmetrization precondition violated: residual e amplitude {0:e}")]
    ResidualEAmplitude(f64),
    #[error("qubit amplitudes are not normalizable: {0}")]
    BadQubit(String),
    #[error("pulse schedule is invalid: {0}")]
    BadPulseSchedule(String),
    #[error("environment model is invalid: {0}")]
    BadEnvironment(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
