pub mod analyzer;
pub mod tokenize;
pub mod vocab;

pub use analyzer::Analyzer;
pub use tokenize::{normalize, tokenize, words, Token, TokenKind};
pub use vocab::Vocabulary;
