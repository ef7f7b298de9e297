pub mod baselines;
pub mod context;
pub mod model;

pub use baselines::{baseline_kdt, baseline_kdt_star, baseline_original, DEFAULT_IDF_THRESHOLD};
pub use context::{assemble_context, HistoryMode, RewriteContext, DEFAULT_WINDOW};
pub use model::{
    is_copy, training_examples, RewriteExample, RewriteResult, RewriterConfig, RewriterModel,
};
