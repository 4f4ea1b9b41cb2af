use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("element {element} references vertex {vertex}, but the mesh has {count} vertices")]
    IndexOutOfRange {
        element: usize,
        vertex: i64,
        count: usize,
    },

    #[error("element {element} is degenerate: measure {measure:e} is below {threshold:e}")]
    DegenerateElement {
        element: usize,
        measure: f64,
        threshold: f64,
    },

    #[error("topology: {0}")]
    Topology(String),

    #[error("shape mismatch: expected {expected} rows, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },

    #[error(
        "connected component {component} (contains vertex {vertex}) has no pinned vertex; \
         the global step would be singular"
    )]
    UnpinnedComponent { component: usize, vertex: usize },

    #[error("sparse factorization failed: {0}")]
    Factorization(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
