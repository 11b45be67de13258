use thiserror::Error;

use crate::solver::SolveState;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("cone violation: {0}")]
    ConeViolation(String),

    #[error("spacelike violation: |Du| = {gradient_norm} {}", location_suffix(.node))]
    Spacelike {
        gradient_norm: f64,
        node: Option<Vec<i64>>,
    },

    #[error("admissibility violation at node {node:?}: {message}")]
    Admissibility { node: Vec<i64>, message: String },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("resolution error: {0}")]
    Resolution(String),

    #[error("unsupported shape: {0}")]
    UnsupportedShape(String),

    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },

    #[error("arity error: {0}")]
    Arity(String),

    #[error("evaluation error at node {path}: {message}")]
    Evaluation { path: String, message: String },

    #[error("positivity violation: sampled inf psi = {inf_psi}")]
    Positivity { inf_psi: f64 },

    #[error("initialization failure: {0}")]
    Initialization(String),

    #[error("precondition not met: {0}")]
    Precondition(String),

    #[error("solver did not converge: {reason}")]
    NonConvergence {
        reason: String,
        state: Box<SolveState>,
    },

    #[error("left the admissible cone: {reason}")]
    ConeExit {
        reason: String,
        state: Box<SolveState>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn location_suffix(node: &Option<Vec<i64>>) -> String {
    match node {
        Some(idx) => format!("at node {idx:?}"),
        None => String::new(),
    }
}
