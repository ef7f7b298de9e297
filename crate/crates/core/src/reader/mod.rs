pub mod model;
pub mod span;

pub use model::{gold_positions, ReaderConfig, ReaderExample, ReaderModel, SpanPrediction, DEFAULT_MAX_SPAN_LEN};
pub use span::{predict_span, SpanChoice};
