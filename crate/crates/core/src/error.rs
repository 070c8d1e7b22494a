use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("generation {k} exceeds the cap K_max = {k_max}")]
    GenerationCap { k: usize, k_max: usize },
    #[error("invalid system: {0}")]
    InvalidSystem(String),
    #[error("index family mismatch: {0}")]
    FamilyMismatch(&'static str),
    #[error("primed cubes do not exist at generation 0")]
    PrimedAtZero,
    #[error("point outside the domain of {0}")]
    OutsideDomain(&'static str),
    #[error("point outside the image of {0}")]
    OutsideImage(&'static str),
    #[error("tentacle constraint violated: {0}")]
    Constraint(String),
    #[error("routing infeasible: {0}")]
    Routing(String),
    #[error("jacobian {0} is not positive; orientation violated upstream")]
    NonPositiveJacobian(f64),
    #[error("quadrature too coarse: error estimate {estimate:.3e} exceeds {requested:.3e}; need resolution >= {required}")]
    TooCoarse { estimate: f64, requested: f64, required: usize },
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("family does not converge: {0}")]
    NoConvergence(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
