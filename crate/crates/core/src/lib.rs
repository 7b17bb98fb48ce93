pub mod baseline;
pub mod engine;
pub mod error;
pub mod field;
pub mod geom;
pub mod metrics;
pub mod record;
pub mod render;
pub mod scenario;
pub mod supervision;
pub mod tensor;
pub mod tracker;

pub use error::{DragError, Result};
