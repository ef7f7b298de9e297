pub mod cross_encoder;
pub mod index;
pub mod persist;
pub mod rerank;

pub use cross_encoder::{sample_training_pairs, CrossEncoder, PairExample};
pub use index::{bm25_idf, bm25_term, InvertedIndex, RetrievalConfig};
pub use persist::{load_index, save_index};
pub use rerank::{rerank, Scorer};
