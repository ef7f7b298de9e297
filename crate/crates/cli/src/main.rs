use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use qrqa_core::pipeline::{self, PassageSource, PipelineConfig, QrVariant};
use qrqa_core::rewriter::HistoryMode;
use qrqa_core::synthetic::SyntheticConfig;

/// Rewrite conversational questions, then retrieve passages and extract answers.
#[derive(Debug, Parser)]
#[command(name = "qrqa", version)]
struct Cli {
    #[command(flatten)]
    global: Overrides,
    #[command(subcommand)]
    command: Command,
}

/// Flags that override the config file. Flags win.
#[derive(Debug, Args)]
struct Overrides {
    /// TOML pipeline config; relative paths inside it are taken from its directory
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Worker thread cap (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Passage collection (TSV: passage_id, text)
    #[arg(long, global = true)]
    collection: Option<PathBuf>,
    /// Dialogues to rewrite, retrieve for and evaluate
    #[arg(long, global = true)]
    dialogues: Option<PathBuf>,
    /// Dialogues with human rewrites used for training
    #[arg(long, global = true)]
    train_dialogues: Option<PathBuf>,
    /// TREC qrels
    #[arg(long, global = true)]
    qrels: Option<PathBuf>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    index_dir: Option<PathBuf>,
    /// Dialogue file format: canard-json or cast-json
    #[arg(long, global = true, value_parser = parse_serde::<qrqa_core::data::DialogueFormat>)]
    format: Option<qrqa_core::data::DialogueFormat>,
    /// BM25 term-frequency saturation
    #[arg(long, global = true)]
    k1: Option<f64>,
    /// BM25 length normalization
    #[arg(long, global = true)]
    b: Option<f64>,
    /// Passages kept per query by BM25
    #[arg(long, global = true)]
    top_k: Option<usize>,
    /// Skip the cross-encoder; downstream stages read the BM25 run
    #[arg(long, global = true)]
    no_rerank: bool,
    /// BM25 candidates re-scored by the cross-encoder
    #[arg(long, global = true)]
    rerank_depth: Option<usize>,
    /// Previous turns visible to the rewriter
    #[arg(long, global = true)]
    window: Option<usize>,
    /// Put answers into the rewriter context (true/false)
    #[arg(long, global = true)]
    include_answers: Option<bool>,
    /// Mixture components of the rewriter head
    #[arg(long, global = true)]
    mixtures: Option<usize>,
    /// Maximum rewrite length in tokens
    #[arg(long, global = true)]
    max_len: Option<usize>,
    /// Rewriter history: recursive, gold-history or original
    #[arg(long, global = true, value_parser = parse_serde::<HistoryMode>)]
    history: Option<HistoryMode>,
    /// Longest answer span in tokens
    #[arg(long, global = true)]
    max_span_len: Option<usize>,
    /// Reader passage: gold or retrieved
    #[arg(long, global = true, value_parser = parse_serde::<PassageSource>)]
    passage_source: Option<PassageSource>,
    /// Minimum grade counted as relevant
    #[arg(long, global = true)]
    cutoff_grade: Option<u8>,
    /// Ranks considered by the retrieval metrics
    #[arg(long, global = true)]
    depth: Option<usize>,
    /// Binarize NDCG gains at the cutoff grade
    #[arg(long, global = true)]
    ndcg_binarize: bool,
    /// Training steps for the model being trained
    #[arg(long, global = true)]
    steps: Option<usize>,
    #[arg(long, global = true)]
    learning_rate: Option<f64>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
}

#[derive(Debug, Args)]
struct QrArg {
    /// QR variant: original, kdt, kdt-star, transformer or human
    #[arg(long, value_parser = parse_variant)]
    qr: Option<QrVariant>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the BM25 inverted index
    Index,
    /// Train the question rewriter
    TrainQr,
    /// Rewrite every question of the dialogues
    Rewrite(QrArg),
    /// BM25 candidate retrieval for the rewrites
    Retrieve(QrArg),
    /// Train the cross-encoder re-ranker
    TrainReranker,
    /// Re-rank the BM25 run with the cross-encoder
    Rerank(QrArg),
    /// Train the span reader
    TrainReader,
    /// Extract answers for the rewrites
    Read(QrArg),
    /// Compare rewrites with the human rewrites
    EvalQr(QrArg),
    /// MAP, MRR, NDCG and P@1 of the final run, plus the PR curve
    EvalRetrieval(QrArg),
    /// EM and F1 of the predicted answers
    EvalExtractive(QrArg),
    /// Attribute errors to rewriting or answering
    Breakdown {
        /// Model variant compared against original and human questions
        #[arg(long, value_parser = parse_variant)]
        variant: Option<QrVariant>,
    },
    /// Run every stage for a QR variant and the break-down
    Pipeline(QrArg),
    /// Write a synthetic corpus and a matching pipeline.toml
    Synthetic {
        /// Target directory
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        entities: Option<usize>,
        #[arg(long)]
        train_dialogues_count: Option<usize>,
        #[arg(long)]
        test_dialogues_count: Option<usize>,
    },
}

fn parse_variant(s: &str) -> std::result::Result<QrVariant, String> {
    s.parse().map_err(|e: qrqa_core::Error| e.to_string())
}

fn parse_serde<T: serde::de::DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn load_config(o: &Overrides) -> Result<PipelineConfig> {
    let mut cfg = match &o.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    macro_rules! set {
        ($src:expr, $dst:expr) => {
            if let Some(v) = $src.clone() {
                $dst = v;
            }
        };
    }
    set!(o.seed, cfg.seed);
    set!(o.format, cfg.dialogue_format);
    set!(o.collection, cfg.paths.collection);
    set!(o.dialogues, cfg.paths.dialogues);
    set!(o.train_dialogues, cfg.paths.train_dialogues);
    set!(o.qrels, cfg.paths.qrels);
    set!(o.output_dir, cfg.paths.output_dir);
    if o.index_dir.is_some() {
        cfg.paths.index_dir = o.index_dir.clone();
    }
    set!(o.k1, cfg.retrieval.k1);
    set!(o.b, cfg.retrieval.b);
    set!(o.top_k, cfg.retrieval.top_k);
    if o.no_rerank {
        cfg.reranker.enabled = false;
    }
    set!(o.rerank_depth, cfg.reranker.depth);
    set!(o.window, cfg.rewriter.model.window);
    if o.include_answers.is_some() {
        cfg.rewriter.include_answers = o.include_answers;
    }
    set!(o.mixtures, cfg.rewriter.model.mixtures);
    set!(o.max_len, cfg.rewriter.model.max_len);
    set!(o.history, cfg.rewriter.history);
    set!(o.max_span_len, cfg.reader.model.max_span_len);
    set!(o.passage_source, cfg.reader.passage_source);
    set!(o.cutoff_grade, cfg.eval.metrics.cutoff_grade);
    set!(o.depth, cfg.eval.metrics.depth);
    if o.ndcg_binarize {
        cfg.eval.metrics.ndcg_binarize = true;
    }
    for train in [&mut cfg.rewriter.train, &mut cfg.reranker.train, &mut cfg.reader.train] {
        set!(o.steps, train.steps);
        set!(o.learning_rate, train.learning_rate);
        set!(o.batch_size, train.batch_size);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.global.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let cfg = load_config(&cli.global)?;
    let variant = |a: &QrArg| a.qr.unwrap_or(cfg.qr.variant);
    std::fs::create_dir_all(&cfg.paths.output_dir)
        .with_context(|| format!("creating {}", cfg.paths.output_dir.display()))?;
    match &cli.command {
        Command::Index => println!("{}", pipeline::stage_index(&cfg)?),
        Command::TrainQr => println!("{}", pipeline::stage_train_qr(&cfg)?),
        Command::Rewrite(a) => println!("{}", pipeline::stage_rewrite(&cfg, variant(a))?),
        Command::Retrieve(a) => println!("{}", pipeline::stage_retrieve(&cfg, variant(a))?),
        Command::TrainReranker => println!("{}", pipeline::stage_train_reranker(&cfg)?),
        Command::Rerank(a) => println!("{}", pipeline::stage_rerank(&cfg, variant(a))?),
        Command::TrainReader => println!("{}", pipeline::stage_train_reader(&cfg)?),
        Command::Read(a) => println!("{}", pipeline::stage_read(&cfg, variant(a))?),
        Command::EvalQr(a) => {
            let r = pipeline::stage_eval_qr(&cfg, variant(a))?;
            println!(
                "{}: {} turns, {} copied, ROUGE-1 recall {:.4}, EM {:.4}, similarity {:.4}",
                r.variant, r.turns, r.copied, r.rouge1_recall, r.exact_match, r.similarity
            );
        }
        Command::EvalRetrieval(a) => {
            let e = pipeline::stage_eval_retrieval(&cfg, variant(a))?;
            print_json(&serde_json::json!({
                "queries": e.queries,
                "map": e.map,
                "mrr": e.mrr,
                "ndcg": e.ndcg,
                "p1": e.p1,
                "unjudged_queries": e.unjudged_queries,
                "missing_queries": e.missing_queries,
                "ndcg_excluded": e.ndcg_excluded,
            }))?;
        }
        Command::EvalExtractive(a) => {
            let e = pipeline::stage_eval_extractive(&cfg, variant(a))?;
            print_json(&serde_json::json!({
                "questions": e.questions,
                "unanswerable": e.unanswerable,
                "em": e.em,
                "f1": e.f1,
                "na_acc": e.na_acc,
            }))?;
        }
        Command::Breakdown { variant } => {
            let mut cfg = cfg.clone();
            if let Some(v) = variant {
                cfg.eval.breakdown_variant = *v;
            }
            pipeline::stage_breakdown(&cfg)?;
            print!("{}", std::fs::read_to_string(cfg.paths.output_dir.join("breakdown.txt"))?);
        }
        Command::Pipeline(a) => pipeline::run_pipeline(&cfg, variant(a), &mut |line| println!("{line}"))?,
        Command::Synthetic {
            out,
            entities,
            train_dialogues_count,
            test_dialogues_count,
        } => {
            let mut s = SyntheticConfig {
                seed: cfg.seed,
                ..SyntheticConfig::default()
            };
            if let Some(n) = entities {
                s.entities = *n;
            }
            if let Some(n) = train_dialogues_count {
                s.train_dialogues = *n;
            }
            if let Some(n) = test_dialogues_count {
                s.test_dialogues = *n;
            }
            std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
            pipeline::write_synthetic(out, &s)?;
            println!("synthetic corpus -> {}", out.display());
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<qrqa_core::Error>() {
        Some(e) if !e.is_data_error() => 3,
        Some(_) => 2,
        None if err.downcast_ref::<std::io::Error>().is_some() => 2,
        None => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
