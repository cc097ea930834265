use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("state graph is not irreducible: {components} connected components")]
    Irreducibility { components: usize },

    #[error("edge {a}-{b} has saddle height below an endpoint")]
    InvalidSaddle { a: usize, b: usize },

    #[error("degenerate exponents: {0}")]
    Degeneracy(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("generator is not reversible: {0}")]
    NotReversible(String),

    #[error("group closure exceeds {limit} elements")]
    GroupTooLarge { limit: usize },

    #[error("accidental degeneracy: {0}")]
    NonDegeneracy(String),

    #[error("unsupported group: {0}")]
    UnsupportedGroup(String),

    #[error("invalid character table: {0}")]
    InvalidTable(String),

    #[error("representative choice does not span the isotypic subspace: {0}")]
    RepresentativeChoice(String),

    #[error("epsilon {epsilon} too large: contraction factor {factor:.3} >= 0.5")]
    EpsilonTooLarge { epsilon: f64, factor: f64 },

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("step budget exhausted after {completed} of {requested} samples")]
    Timeout {
        completed: usize,
        requested: usize,
        partial_mean: f64,
    },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("continuation failed: {0}")]
    Continuation(String),

    #[error("saddle connectivity: {0}")]
    Connectivity(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
