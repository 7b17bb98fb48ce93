use thiserror::Error;

pub type Result<T, E = DragError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum DragError {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("position ({x}, {y}) outside field of width {width} and height {height}")]
    Bounds {
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },

    #[error("invalid scenario: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("tracker training diverged at iteration {iteration} (loss {loss:.3e} vs initial {initial:.3e}); try a smaller step_size")]
    TrainingDiverged {
        iteration: usize,
        loss: f64,
        initial: f64,
    },

    #[error("supervision patch for point {0} is fully out of bounds")]
    DegeneratePatch(usize),

    #[error("scenario {0} has no semantic oracle for point {1}")]
    UnsupportedScenario(String, usize),

    #[error("session is {0}, operation not allowed")]
    InvalidState(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("image encoding failed: {0}")]
    Image(String),
}

impl DragError {
    pub fn is_validation(&self) -> bool {
        matches!(self, DragError::Validation(_))
    }
}
