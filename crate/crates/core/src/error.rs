use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("total jump intensity too large: Λ·dt = {total_rate_dt} must be < 1")]
    IntensityTooLarge { total_rate_dt: f64 },

    #[error("weight floor violated at step {k} ({state}): a² = {a2} < ε = {epsilon}")]
    FloorViolation {
        k: usize,
        state: String,
        a2: f64,
        epsilon: f64,
    },

    #[error("cumulative weight A is path-dependent at step {k}; weights must make A a function of the lattice node")]
    PathDependentWeights { k: usize },

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("Picard iteration did not converge at step {k}, state {state} after {iterations} iterations (contraction estimate {contraction:.3e}){hint}")]
    NoConvergence {
        k: usize,
        state: usize,
        iterations: usize,
        contraction: f64,
        hint: &'static str,
    },

    #[error("inapplicable: {hypothesis} fails at step {k}, state {state}: {detail}")]
    Inapplicable {
        hypothesis: &'static str,
        k: usize,
        state: String,
        detail: String,
    },

    #[error("invalid obstacle: L_N = {obstacle} > ξ = {terminal} at terminal state {state}")]
    InvalidObstacle {
        state: String,
        obstacle: f64,
        terminal: f64,
    },

    #[error("β = {beta} is not above the a priori threshold {threshold}")]
    BetaBelowThreshold { beta: f64, threshold: f64 },

    #[error("exact tree evaluation needs {paths} paths, above the limit {limit}")]
    PathLimit { paths: f64, limit: u64 },
}
