//! A small double-precision tensor and reverse-mode differentiation engine
//! with the transformer building blocks used by the rewriter, re-ranker and
//! reader models.

pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod params;
pub mod tensor;
pub mod transformer;

pub use checkpoint::{read_checkpoint, restore_into, write_checkpoint, CheckpointHeader, CHECKPOINT_VERSION};
pub use error::{NeuralError, Result};
pub use gradcheck::{gradient_check, numeric_gradient, relative_error, GradCheckReport};
pub use graph::{sigmoid, Graph, Mask, NodeId};
pub use params::{GradientSet, ParamId, Parameter, ParameterStore};
pub use tensor::Tensor;
pub use transformer::{decoder_forward, encoder_forward, init_transformer, DecoderOutput, TransformerConfig};
