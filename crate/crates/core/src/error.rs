use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid Gevrey order s = {0} (need s > 1)")]
    InvalidOrder(f64),

    #[error("Taylor extension order {0} unsupported (use 1 or 2)")]
    ExtensionOrder(u32),

    #[error("grid size {0} is not a power of two")]
    GridSize(usize),

    #[error("invalid grid: {0}")]
    Grid(String),

    #[error(
        "under-resolved grid: Nyquist frequency {nyquist:.4} < symbol extent {extent:.4}; need N >= {required_n}"
    )]
    Resolution {
        nyquist: f64,
        extent: f64,
        required_n: usize,
    },

    #[error("invalid semiclassical parameter h = {0} (need 0 < h <= 1)")]
    InvalidH(f64),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("dense solver did not converge (info = {info}); matrix dumped to {}", dump.display())]
    NoConvergence { info: i32, dump: PathBuf },

    #[error("linear algebra failure: {0}")]
    Linalg(String),

    #[error("matrix size {n} exceeds the dense budget {max}")]
    Budget { n: usize, max: usize },

    #[error("pseudospectrum lattice {nx}x{ny} exceeds 512x512; try --res {suggest}")]
    LatticeBudget { nx: usize, ny: usize, suggest: usize },

    #[error("no eigenvalues left after boundary filtering (grid too small)")]
    EmptySpectrum,

    #[error("flow step invalid: {0}")]
    Flow(String),

    #[error("no phase-space points found with |p - z0| <= {delta}")]
    EmptyZeroSet { delta: f64 },

    #[error("escape construction failed: margin {margin:.3e} at zero point ({x:.4}, {xi:.4})")]
    EscapeFailure { margin: f64, x: f64, xi: f64 },

    #[error("deformation parameter t = {0} must be negative")]
    DeformationParameter(f64),

    #[error("deformed ellipticity failed: gamma = {gamma:.3e} at ({x:.4}, {xi:.4})")]
    DeformationFailure { gamma: f64, x: f64, xi: f64 },

    #[error("Bargmann grid too small: {0}")]
    GridExtent(String),

    #[error("escape lattice does not cover ({x:.4}, {xi:.4}) where G is non-zero")]
    Coverage { x: f64, xi: f64 },

    #[error("ellipticity precondition violated at x = {re:.4}{im:+.4}i: |a| = {value:.3e}")]
    Ellipticity { re: f64, im: f64, value: f64 },

    #[error("power-law fit needs at least 4 positive samples, got {0}")]
    FitPoints(usize),

    #[error("config error: {0}")]
    Config(String),

    #[error("unknown model tag {0:?}")]
    UnknownModel(String),

    #[error("I/O error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end: 2 for configuration
    /// problems, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::UnknownModel(_)
            | Error::InvalidOrder(_)
            | Error::InvalidH(_)
            | Error::GridSize(_)
            | Error::Grid(_)
            | Error::Resolution { .. }
            | Error::Budget { .. }
            | Error::LatticeBudget { .. }
            | Error::Io { .. } => 2,
            _ => 3,
        }
    }
}
