pub mod classes;
pub mod gradcheck;
pub mod io;
pub mod loss;
pub mod masking;
pub mod metrics;
pub mod model;
pub mod segments;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod velocity;

pub use classes::{CLASS_NAMES, N_CLASSES};
pub use model::{Model, ModelConfig, SignalWindow};
pub use segments::{Segment, SegmentList};
pub use tensor::{Tape, Tensor, TensorError, Var};
