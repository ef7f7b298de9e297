pub mod extractive;
pub mod retrieval;
pub mod rewrite;

pub use extractive::{answer_em, answer_f1, evaluate_answers, normalize_answer, ExtractiveEval};
pub use retrieval::{
    average_precision, evaluate_run, interpolated_pr, ndcg_at_k, pr_curve, pr_curve_csv, precision_at_1,
    reciprocal_rank, EvalConfig, RetrievalEval,
};
pub use rewrite::{evaluate_rewrite, rouge1_recall, rewrite_exact_match, similarity, BagOfWords, Embedder, RewriteEval};
