//! Conversational question answering by rewriting: data formats, text
//! analysis, the rewriter, BM25 retrieval with re-ranking, span extraction,
//! metrics and the error break-down.

pub mod breakdown;
pub mod data;
pub mod error;
pub mod eval;
pub mod fsutil;
pub mod model_io;
pub mod pair;
pub mod pipeline;
pub mod reader;
pub mod retrieval;
pub mod rewriter;
pub mod synthetic;
pub mod text;
pub mod train;

pub use error::{Error, Result};
