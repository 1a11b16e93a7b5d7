use thiserror::Error;

pub type Result<T> = std::result::Result<T, PgoError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PgoError {
    /// A correction vector or β argument fell outside the unit ball.
    #[error("argument outside the unit ball: norm {norm} exceeds 1 by {excess}")]
    Domain { norm: f64, excess: f64 },

    #[error("matrix too close to singular for rotation projection (smallest singular value {sigma_min:e}){}", vertex_suffix(*.vertex))]
    Degenerate {
        sigma_min: f64,
        vertex: Option<usize>,
    },

    #[error("matrix is not a rotation: {0}")]
    NotARotation(String),

    #[error("pose graph is not connected: {} components {components:?}", components.len())]
    Disconnected { components: Vec<Vec<i64>> },

    #[error("edge {edge} is a self-loop on vertex {vertex}")]
    SelfLoop { edge: usize, vertex: i64 },

    #[error("edge {edge} references vertex {vertex} outside 0..{vertex_count}")]
    VertexOutOfRange {
        edge: usize,
        vertex: usize,
        vertex_count: usize,
    },

    #[error("edge {edge} has a non-positive or non-finite weight ({name} = {value})")]
    InvalidWeight {
        edge: usize,
        name: &'static str,
        value: f64,
    },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("invalid options: {0}")]
    InvalidOptions(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("i/o error: {0}")]
    Io(String),

    /// The normal matrix of a least-squares solve was not numerically positive definite.
    #[error("linear system is ill-conditioned: {0}")]
    Conditioning(String),

    #[error("graphs do not share a topology: {0}")]
    TopologyMismatch(String),
}

fn vertex_suffix(vertex: Option<usize>) -> String {
    match vertex {
        Some(v) => format!(" at vertex {v}"),
        None => String::new(),
    }
}

impl PgoError {
    /// Whether the error stems from bad input (as opposed to a numerical failure).
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            PgoError::Disconnected { .. }
                | PgoError::SelfLoop { .. }
                | PgoError::VertexOutOfRange { .. }
                | PgoError::InvalidWeight { .. }
                | PgoError::InvalidGraph(_)
                | PgoError::InvalidOptions(_)
                | PgoError::Parse { .. }
                | PgoError::Io(_)
                | PgoError::TopologyMismatch(_)
                | PgoError::NotARotation(_)
        )
    }
}

impl From<std::io::Error> for PgoError {
    fn from(e: std::io::Error) -> Self {
        PgoError::Io(e.to_string())
    }
}
