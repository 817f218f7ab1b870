use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),

    #[error("invalid extent on axis {axis}: [{lo}, {hi}]")]
    InvalidExtent { axis: usize, lo: f64, hi: f64 },

    #[error("CFL violation: ratio {ratio:.6} exceeds bound {bound:.6}")]
    Cfl { ratio: f64, bound: f64 },

    #[error("point {0:?} lies in the closed domain; it must be strictly outside")]
    PointInsideDomain(Vec<f64>),

    #[error("conductivity is not positive definite at node {node} (axis {axis}: {value})")]
    NotPositiveDefinite { node: usize, axis: usize, value: f64 },

    #[error("weight function has a critical point at node {0}")]
    CriticalPoint(usize),

    #[error("Dirichlet data incompatible with initial displacement at node {node}: |h - phi| = {gap:e}")]
    Incompatible { node: usize, gap: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("empty region: {0}")]
    EmptyRegion(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("blow-up suspected: amplitude {amplitude:e} exceeds cap {cap:e} at iteration {iteration}")]
    BlowUp { amplitude: f64, cap: f64, iteration: usize },

    #[error("fixed point not converged after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("boundary input is nonzero off the observation boundary at node {0}")]
    InputOffGamma0(usize),

    #[error("input norm {norm:e} exceeds the admissible bound {bound:e}")]
    InputTooLarge { norm: f64, bound: f64 },

    #[error("conjugate gradient stagnated at iteration {iteration} (relative residual {residual:e})")]
    Stagnation { iteration: usize, residual: f64 },

    #[error("under-resolved oscillation: dx*tau = {product:.4} exceeds {limit:.4}")]
    Resolution { product: f64, limit: f64 },

    #[error("normal equations ill-conditioned (condition estimate {0:e}); increase regularization")]
    IllConditioned(f64),

    #[error("step size {0:e} below cancellation guard")]
    StepTooSmall(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn in_stage(self, stage: impl Into<String>) -> Error {
        Error::Stage { stage: stage.into(), source: Box::new(self) }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Stage { source, .. } => source.is_numerical(),
            Error::BlowUp { .. }
            | Error::NotConverged { .. }
            | Error::Stagnation { .. }
            | Error::IllConditioned(_)
            | Error::NonFinite(_) => true,
            _ => false,
        }
    }
}
