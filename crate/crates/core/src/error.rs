use thiserror::Error;

/// Errors produced by the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("basis size error: 3^{n_atoms} states exceeds the cap of n_atoms <= {cap}")]
    BasisTooLarge { n_atoms: usize, cap: usize },

    #[error("invalid system: {0}")]
    InvalidSystem(String),

    #[error("invalid pulse: {0}")]
    InvalidPulse(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("invalid integrator configuration: {0}")]
    InvalidIntegrator(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("initial state is not normalized (norm = {0})")]
    NotNormalized(f64),

    #[error(
        "integration diverged: norm drift {drift:.3e} at t = {time:.6} us exceeds 1e-4; \
         try a smaller dt (current {dt:.3e} us)"
    )]
    IntegrationDiverged { drift: f64, time: f64, dt: f64 },

    #[error(
        "observable did not converge after {halvings} halvings: last change {last_change:.3e} \
         at dt = {dt:.3e} us (history: {history:?})"
    )]
    NotConverged {
        halvings: usize,
        last_change: f64,
        dt: f64,
        history: Vec<(f64, f64)>,
    },

    #[error("entanglement observables need at least 2 atoms, got {0}")]
    EntanglementUndefined(usize),

    #[error("no crossing: {0}")]
    NoCrossing(String),

    #[error("singular effective model: {0}")]
    Singular(String),

    #[error("invalid sweep grid: {0}")]
    InvalidGrid(String),

    #[error("wrong protocol: {0}")]
    WrongProtocol(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code: 1 for configuration problems, 2 for numerical or
    /// runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::BasisTooLarge { .. }
            | Error::InvalidSystem(_)
            | Error::InvalidPulse(_)
            | Error::Geometry(_)
            | Error::InvalidIntegrator(_)
            | Error::DimensionMismatch { .. }
            | Error::InvalidGrid(_)
            | Error::WrongProtocol(_)
            | Error::Config(_)
            | Error::Json(_) => 1,
            Error::NotNormalized(_)
            | Error::IntegrationDiverged { .. }
            | Error::NotConverged { .. }
            | Error::EntanglementUndefined(_)
            | Error::NoCrossing(_)
            | Error::Singular(_)
            | Error::Numerical(_)
            | Error::Io(_) => 2,
        }
    }
}
