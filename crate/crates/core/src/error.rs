use thiserror::Error;

/// Errors raised by model construction, solvers, estimators and the executor.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("parameter {name} must be strictly positive and finite, got {value}")]
    InvalidParameter { name: String, value: f64 },

    #[error("expected {expected} parameters for {model}, got {actual}")]
    ParameterCount {
        model: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("mass matrix is singular or ill-conditioned (condition estimate {condition:e})")]
    IllConditionedMass { condition: f64 },

    #[error("system matrix M + dt*K is singular at step {step}")]
    SingularStep { step: usize },

    #[error("time grid mismatch: {0}")]
    Grid(String),

    #[error("parareal failed on interval {interval} in iteration {iteration}: {source}")]
    Parareal {
        interval: usize,
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("trajectory ends at {end} s, before the QoI horizon {horizon} s")]
    ShortTrajectory { end: f64, horizon: f64 },

    #[error("insufficient cores for per-sample parallelism ({cores} cores, {samples} samples)")]
    InsufficientCores { cores: usize, samples: usize },

    #[error("task of width {width} does not fit into {cores} cores")]
    TaskTooWide { width: usize, cores: usize },

    #[error("sample (level {level}, index {index}) failed: {message}")]
    Sample {
        level: usize,
        index: u64,
        message: String,
    },

    #[error("task (level {level}, index {index}) scheduled twice")]
    DuplicateTask { level: usize, index: u64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;
