//! Pipeline configuration and the stages behind every CLI subcommand.
//!
//! Artifacts live in `paths.output_dir` under fixed names, so each stage can
//! find the output of the stage before it.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::breakdown::{breakdown_table, join_outcomes, BreakdownTable, Threshold};
use crate::data::{
    load_collection, load_dialogues, load_qrels, query_id, read_jsonl, read_run, write_jsonl, write_run, Dialogue,
    DialogueFormat, Passage, PredictionRecord, RankedList, RewriteRecord,
};
use crate::error::{Error, Result};
use crate::eval::{
    evaluate_answers, evaluate_rewrite, evaluate_run, pr_curve, pr_curve_csv, BagOfWords, EvalConfig, Embedder,
    ExtractiveEval, RetrievalEval, RewriteEval,
};
use crate::fsutil;
use crate::reader::{ReaderConfig, ReaderExample, ReaderModel};
use crate::retrieval::{
    load_index, rerank, sample_training_pairs, save_index, CrossEncoder, InvertedIndex, RetrievalConfig,
};
use crate::rewriter::{
    baseline_kdt, baseline_kdt_star, baseline_original, is_copy, training_examples, HistoryMode, RewriterConfig,
    RewriterModel, DEFAULT_IDF_THRESHOLD,
};
use crate::text::{Analyzer, Vocabulary};
use crate::train::TrainConfig;

/// Which text stands in for each question downstream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QrVariant {
    Original,
    Kdt,
    KdtStar,
    Transformer,
    Human,
}

impl QrVariant {
    pub const ALL: [QrVariant; 5] = [
        QrVariant::Original,
        QrVariant::Kdt,
        QrVariant::KdtStar,
        QrVariant::Transformer,
        QrVariant::Human,
    ];

    pub fn name(self) -> &'static str {
        match self {
            QrVariant::Original => "original",
            QrVariant::Kdt => "kdt",
            QrVariant::KdtStar => "kdt-star",
            QrVariant::Transformer => "transformer",
            QrVariant::Human => "human",
        }
    }
}

impl fmt::Display for QrVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for QrVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        QrVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown QR variant `{s}`")))
    }
}

/// Passage handed to the reader.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PassageSource {
    /// The passage of the turn's gold span, or of the dialogue's first span.
    Gold,
    /// Top passage of the final run.
    Retrieved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub collection: PathBuf,
    /// Dialogues with human rewrites and answers used for training.
    pub train_dialogues: PathBuf,
    /// Dialogues to rewrite, retrieve for, read and evaluate.
    pub dialogues: PathBuf,
    pub qrels: PathBuf,
    /// Replaces the shipped stopword list when set.
    pub stopwords: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub index_dir: Option<PathBuf>,
    pub rewriter_checkpoint: Option<PathBuf>,
    pub reranker_checkpoint: Option<PathBuf>,
    pub reader_checkpoint: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            collection: "collection.tsv".into(),
            train_dialogues: "train.json".into(),
            dialogues: "dialogues.json".into(),
            qrels: "qrels.txt".into(),
            stopwords: None,
            output_dir: "out".into(),
            index_dir: None,
            rewriter_checkpoint: None,
            reranker_checkpoint: None,
            reader_checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewriterSettings {
    pub model: RewriterConfig,
    /// Overrides the default taken from the dialogue format.
    pub include_answers: Option<bool>,
    pub history: HistoryMode,
    pub vocab_size: usize,
    pub train: TrainConfig,
}

impl Default for RewriterSettings {
    fn default() -> Self {
        RewriterSettings {
            model: RewriterConfig::default(),
            include_answers: None,
            history: HistoryMode::Recursive,
            vocab_size: 5000,
            train: TrainConfig {
                steps: 1000,
                learning_rate: 1e-3,
                batch_size: 16,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RerankerSettings {
    pub enabled: bool,
    pub transformer: qrqa_neural::TransformerConfig,
    /// BM25 candidates re-scored per query.
    pub depth: usize,
    pub negatives_per_query: usize,
    pub vocab_size: usize,
    pub train: TrainConfig,
}

impl Default for RerankerSettings {
    fn default() -> Self {
        RerankerSettings {
            enabled: true,
            transformer: qrqa_neural::TransformerConfig::toy(false),
            depth: 10,
            negatives_per_query: 3,
            vocab_size: 20000,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReaderSettings {
    pub model: ReaderConfig,
    pub passage_source: PassageSource,
    /// Question text used when training the reader.
    pub train_input: QrVariant,
    pub vocab_size: usize,
    pub train: TrainConfig,
}

impl Default for ReaderSettings {
    fn default() -> Self {
        ReaderSettings {
            model: ReaderConfig::default(),
            passage_source: PassageSource::Gold,
            train_input: QrVariant::Human,
            vocab_size: 20000,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    #[serde(flatten)]
    pub metrics: EvalConfig,
    pub retrieval_thresholds: Vec<String>,
    pub extractive_thresholds: Vec<String>,
    /// Model variant compared against original and human in the break-down.
    pub breakdown_variant: QrVariant,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            metrics: EvalConfig::default(),
            retrieval_thresholds: vec!["P@1=1".into(), "NDCG@3>0".into(), "NDCG@3>=0.5".into(), "NDCG@3=1".into()],
            extractive_thresholds: vec!["F1>0".into(), "F1>=0.5".into(), "F1=1".into()],
            breakdown_variant: QrVariant::Transformer,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QrSettings {
    pub variant: QrVariant,
    pub kdt_k: usize,
    pub idf_threshold: f64,
}

impl Default for QrSettings {
    fn default() -> Self {
        QrSettings {
            variant: QrVariant::Transformer,
            kdt_k: 3,
            idf_threshold: DEFAULT_IDF_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub dialogue_format: DialogueFormat,
    /// Reduce index terms to their stems.
    pub stem: bool,
    pub paths: Paths,
    pub retrieval: RetrievalConfig,
    pub qr: QrSettings,
    pub rewriter: RewriterSettings,
    pub reranker: RerankerSettings,
    pub reader: ReaderSettings,
    pub eval: EvalSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 13,
            dialogue_format: DialogueFormat::CanardJson,
            stem: false,
            paths: Paths::default(),
            retrieval: RetrievalConfig::default(),
            qr: QrSettings::default(),
            rewriter: RewriterSettings::default(),
            reranker: RerankerSettings::default(),
            reader: ReaderSettings::default(),
            eval: EvalSettings::default(),
        }
    }
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file; relative paths in it are taken from the file's
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_toml(&fsutil::read_to_string(path)?)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let p = &mut cfg.paths;
        for q in [&mut p.collection, &mut p.train_dialogues, &mut p.dialogues, &mut p.qrels, &mut p.output_dir] {
            rebase(base, q);
        }
        for q in [
            &mut p.stopwords,
            &mut p.index_dir,
            &mut p.rewriter_checkpoint,
            &mut p.reranker_checkpoint,
            &mut p.reader_checkpoint,
        ]
        .into_iter()
        .flatten()
        {
            rebase(base, q);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.retrieval.validate()?;
        self.rewriter.model.validate()?;
        self.reranker.transformer.validate()?;
        self.reader.model.transformer.validate()?;
        for t in self.eval.retrieval_thresholds.iter().chain(&self.eval.extractive_thresholds) {
            t.parse::<Threshold>()?;
        }
        Ok(())
    }

    fn out(&self, name: &str) -> PathBuf {
        self.paths.output_dir.join(name)
    }

    pub fn index_dir(&self) -> PathBuf {
        self.paths.index_dir.clone().unwrap_or_else(|| self.out("index"))
    }

    pub fn rewriter_checkpoint(&self) -> PathBuf {
        self.paths.rewriter_checkpoint.clone().unwrap_or_else(|| self.out("rewriter.ckpt"))
    }

    pub fn reranker_checkpoint(&self) -> PathBuf {
        self.paths.reranker_checkpoint.clone().unwrap_or_else(|| self.out("reranker.ckpt"))
    }

    pub fn reader_checkpoint(&self) -> PathBuf {
        self.paths.reader_checkpoint.clone().unwrap_or_else(|| self.out("reader.ckpt"))
    }

    pub fn rewrites_path(&self, v: QrVariant) -> PathBuf {
        self.out(&format!("rewrites-{v}.jsonl"))
    }

    pub fn bm25_run_path(&self, v: QrVariant) -> PathBuf {
        self.out(&format!("run-{v}.bm25.txt"))
    }

    pub fn rerank_run_path(&self, v: QrVariant) -> PathBuf {
        self.out(&format!("run-{v}.rerank.txt"))
    }

    /// The run downstream stages read: re-ranked when the re-ranker is on.
    pub fn final_run_path(&self, v: QrVariant) -> PathBuf {
        if self.reranker.enabled {
            self.rerank_run_path(v)
        } else {
            self.bm25_run_path(v)
        }
    }

    pub fn predictions_path(&self, v: QrVariant) -> PathBuf {
        self.out(&format!("predictions-{v}.jsonl"))
    }

    pub fn report_path(&self, kind: &str, v: QrVariant) -> PathBuf {
        self.out(&format!("eval-{kind}-{v}.json"))
    }

    fn include_answers(&self) -> bool {
        self.rewriter
            .include_answers
            .unwrap_or_else(|| self.dialogue_format.has_answers())
    }

    fn analyzer(&self) -> Result<Analyzer> {
        match &self.paths.stopwords {
            Some(p) => Analyzer::from_file(p, self.stem),
            None => Ok(Analyzer::new(crate::text::analyzer::parse_stopwords(crate::text::analyzer::DEFAULT_STOPWORDS), self.stem)),
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    fsutil::write_atomic(path, s.as_bytes())
}

fn dialogues(cfg: &PipelineConfig) -> Result<Vec<Dialogue>> {
    load_dialogues(&cfg.paths.dialogues, cfg.dialogue_format)
}

fn train_dialogues(cfg: &PipelineConfig) -> Result<Vec<Dialogue>> {
    load_dialogues(&cfg.paths.train_dialogues, cfg.dialogue_format)
}

/// Qrels of the evaluated dialogues; judgments of training queries may share
/// the file.
fn eval_qrels(cfg: &PipelineConfig) -> Result<crate::data::Qrels> {
    let qrels = load_qrels(&cfg.paths.qrels)?;
    let ids: Vec<String> = dialogues(cfg)?
        .iter()
        .flat_map(|d| d.turns.iter().map(|t| query_id(&d.topic_id, t.turn_id)))
        .collect();
    Ok(qrels.restrict(ids.iter().map(String::as_str)))
}

fn collection(cfg: &PipelineConfig) -> Result<Vec<Passage>> {
    load_collection(&cfg.paths.collection)?.collect()
}

// ---------------------------------------------------------------- index

pub fn stage_index(cfg: &PipelineConfig) -> Result<String> {
    let analyzer = cfg.analyzer()?;
    let index = InvertedIndex::build(load_collection(&cfg.paths.collection)?, analyzer)?;
    let dir = cfg.index_dir();
    save_index(&index, &dir)?;
    Ok(format!(
        "indexed {} passages, {} terms -> {}",
        index.num_docs(),
        index.terms().count(),
        dir.display()
    ))
}

fn open_index(cfg: &PipelineConfig) -> Result<InvertedIndex> {
    load_index(&cfg.index_dir())
}

// ---------------------------------------------------------------- rewriting

fn rewriter_model_config(cfg: &PipelineConfig) -> RewriterConfig {
    let mut m = cfg.rewriter.model.clone();
    m.include_answers = cfg.include_answers();
    m
}

pub fn stage_train_qr(cfg: &PipelineConfig) -> Result<String> {
    let dialogues = train_dialogues(cfg)?;
    let model_cfg = rewriter_model_config(cfg);
    let texts: Vec<&str> = dialogues
        .iter()
        .flat_map(|d| &d.turns)
        .flat_map(|t| {
            let answer = t.answer_text.as_deref().filter(|_| model_cfg.include_answers);
            [Some(t.question.as_str()), t.rewrite.as_deref(), answer]
        })
        .flatten()
        .collect();
    let vocab = Vocabulary::build(texts, cfg.rewriter.vocab_size)?;
    let mut model = RewriterModel::new(model_cfg, vocab, cfg.seed)?;
    let (examples, skipped) = training_examples(&model, &dialogues)?;
    if examples.is_empty() {
        return Err(Error::invalid("no turn with a human rewrite to train the rewriter on"));
    }
    let report = model.train(&examples, &cfg.rewriter.train, cfg.seed)?;
    let path = cfg.rewriter_checkpoint();
    model.save(&path)?;
    Ok(format!(
        "trained rewriter on {} examples ({skipped} over-long skipped), final loss {:.4} -> {}",
        examples.len(),
        report.final_loss().unwrap_or(f64::NAN),
        path.display()
    ))
}

/// Question texts of one dialogue under a variant.
pub fn rewrite_dialogue_texts(
    cfg: &PipelineConfig,
    variant: QrVariant,
    d: &Dialogue,
    index: Option<&InvertedIndex>,
    model: Option<&RewriterModel>,
) -> Result<Vec<(String, bool)>> {
    let n = d.turns.len();
    let copy = |i: usize, s: String| {
        let c = is_copy(&s, &d.turns[i].question);
        (s, c)
    };
    Ok(match variant {
        QrVariant::Original => (0..n).map(|i| copy(i, baseline_original(d, i))).collect(),
        QrVariant::Kdt => (0..n).map(|i| copy(i, baseline_kdt(d, i, cfg.qr.kdt_k))).collect(),
        QrVariant::KdtStar => {
            let index = index.ok_or_else(|| Error::Invariant("kdt-star needs the index".into()))?;
            (0..n)
                .map(|i| copy(i, baseline_kdt_star(d, i, cfg.qr.kdt_k, index, cfg.qr.idf_threshold)))
                .collect()
        }
        QrVariant::Human => d
            .turns
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let r = t.rewrite.clone().ok_or_else(|| {
                    Error::invalid(format!("{}: no human rewrite", query_id(&d.topic_id, t.turn_id)))
                })?;
                Ok(copy(i, r))
            })
            .collect::<Result<_>>()?,
        QrVariant::Transformer => {
            let model = model.ok_or_else(|| Error::Invariant("transformer variant needs a model".into()))?;
            model
                .rewrite_dialogue(d, cfg.rewriter.history)?
                .into_iter()
                .map(|r| (r.rewritten_question, r.was_copied))
                .collect()
        }
    })
}

pub fn stage_rewrite(cfg: &PipelineConfig, variant: QrVariant) -> Result<String> {
    let dialogues = dialogues(cfg)?;
    let index = match variant {
        QrVariant::KdtStar => Some(open_index(cfg)?),
        _ => None,
    };
    let model = match variant {
        QrVariant::Transformer => {
            let mut m = RewriterModel::load(&cfg.rewriter_checkpoint())?;
            m.config.window = cfg.rewriter.model.window;
            m.config.include_answers = cfg.include_answers();
            Some(m)
        }
        _ => None,
    };
    let per_dialogue: Vec<Vec<(String, bool)>> = dialogues
        .par_iter()
        .map(|d| rewrite_dialogue_texts(cfg, variant, d, index.as_ref(), model.as_ref()))
        .collect::<Result<_>>()?;
    let mut records = Vec::new();
    for (d, texts) in dialogues.iter().zip(per_dialogue) {
        for (t, (rewrite, was_copied)) in d.turns.iter().zip(texts) {
            records.push(RewriteRecord {
                topic_id: d.topic_id.clone(),
                turn_id: t.turn_id,
                rewrite,
                was_copied,
            });
        }
    }
    let path = cfg.rewrites_path(variant);
    write_jsonl(&records, &path)?;
    let copies = records.iter().filter(|r| r.was_copied).count();
    Ok(format!(
        "{variant}: {} rewrites ({copies} copied) -> {}",
        records.len(),
        path.display()
    ))
}

fn read_rewrites(cfg: &PipelineConfig, variant: QrVariant) -> Result<Vec<RewriteRecord>> {
    let path = cfg.rewrites_path(variant);
    fsutil::require(&path, "rewrite")?;
    read_jsonl(&path)
}

// ---------------------------------------------------------------- retrieval

pub fn stage_retrieve(cfg: &PipelineConfig, variant: QrVariant) -> Result<String> {
    let index = open_index(cfg)?;
    let rewrites = read_rewrites(cfg, variant)?;
    let run: Vec<RankedList> = rewrites
        .par_iter()
        .map(|r| {
            let hits = index.retrieve(&r.rewrite, &cfg.retrieval);
            RankedList::from_scored(query_id(&r.topic_id, r.turn_id), "bm25", hits)
        })
        .collect();
    let path = cfg.bm25_run_path(variant);
    write_run(&run, &path)?;
    Ok(format!("{variant}: retrieved for {} queries -> {}", run.len(), path.display()))
}

fn pair_vocab(cfg: &PipelineConfig, train: &[Dialogue], max_size: usize) -> Result<Vocabulary> {
    let passages = collection(cfg)?;
    let texts = passages.iter().map(|p| p.text.as_str()).chain(
        train
            .iter()
            .flat_map(|d| &d.turns)
            .flat_map(|t| [Some(t.question.as_str()), t.rewrite.as_deref()])
            .flatten(),
    );
    Vocabulary::build(texts, max_size)
}

pub fn stage_train_reranker(cfg: &PipelineConfig) -> Result<String> {
    let train = train_dialogues(cfg)?;
    let qrels = load_qrels(&cfg.paths.qrels)?;
    let index = open_index(cfg)?;
    let queries: Vec<(String, String)> = train
        .iter()
        .flat_map(|d| {
            d.turns.iter().map(|t| {
                let text = t.rewrite.clone().unwrap_or_else(|| t.question.clone());
                (query_id(&d.topic_id, t.turn_id), text)
            })
        })
        .collect();
    let examples = sample_training_pairs(
        &queries,
        &qrels,
        &index,
        &cfg.retrieval,
        cfg.eval.metrics.cutoff_grade,
        cfg.reranker.negatives_per_query,
        cfg.seed,
    );
    let vocab = pair_vocab(cfg, &train, cfg.reranker.vocab_size)?;
    let mut model = CrossEncoder::new(cfg.reranker.transformer.clone(), vocab, cfg.seed)?;
    let report = model.train(&examples, &cfg.reranker.train, cfg.seed)?;
    let path = cfg.reranker_checkpoint();
    model.save(&path)?;
    Ok(format!(
        "trained re-ranker on {} pairs, final loss {:.4} -> {}",
        examples.len(),
        report.final_loss().unwrap_or(f64::NAN),
        path.display()
    ))
}

pub fn stage_rerank(cfg: &PipelineConfig, variant: QrVariant) -> Result<String> {
    let index = open_index(cfg)?;
    let model = CrossEncoder::load(&cfg.reranker_checkpoint())?;
    let bm25 = cfg.bm25_run_path(variant);
    fsutil::require(&bm25, "retrieve")?;
    let run = read_run(&bm25)?;
    let questions: BTreeMap<String, String> = read_rewrites(cfg, variant)?
        .into_iter()
        .map(|r| (query_id(&r.topic_id, r.turn_id), r.rewrite))
        .collect();
    let reranked: Vec<RankedList> = run
        .par_iter()
        .map(|list| {
            let q = questions
                .get(&list.query_id)
                .ok_or_else(|| Error::invalid(format!("run query `{}` has no rewrite", list.query_id)))?;
            let mut top = list.clone();
            top.entries.truncate(cfg.reranker.depth);
            rerank(q, &top, &model, |p| index.text(p), "rerank")
        })
        .collect::<Result<_>>()?;
    let path = cfg.rerank_run_path(variant);
    write_run(&reranked, &path)?;
    Ok(format!("{variant}: re-ranked {} queries -> {}", reranked.len(), path.display()))
}

// ---------------------------------------------------------------- reading

/// Gold passage of a turn: its own span's passage, else the first span
/// passage of the dialogue.
fn gold_passage(d: &Dialogue, turn: usize) -> Option<&str> {
    d.turns[turn]
        .answer_span
        .as_ref()
        .or_else(|| d.turns.iter().find_map(|t| t.answer_span.as_ref()))
        .map(|s| s.passage_id.as_str())
}

fn question_for(cfg: &PipelineConfig, variant: QrVariant, d: &Dialogue, i: usize) -> Result<String> {
    Ok(match variant {
        QrVariant::Original => baseline_original(d, i),
        QrVariant::Kdt => baseline_kdt(d, i, cfg.qr.kdt_k),
        QrVariant::Human => d.turns[i].rewrite.clone().unwrap_or_else(|| d.turns[i].question.clone()),
        other => {
            return Err(Error::Config(format!(
                "reader training input must be original, kdt or human, not {other}"
            )))
        }
    })
}

pub fn stage_train_reader(cfg: &PipelineConfig) -> Result<String> {
    let train = train_dialogues(cfg)?;
    let passages: BTreeMap<String, String> = collection(cfg)?.into_iter().map(|p| (p.passage_id, p.text)).collect();
    let mut examples = Vec::new();
    let mut no_passage = 0;
    for d in &train {
        for (i, t) in d.turns.iter().enumerate() {
            let Some(text) = gold_passage(d, i).and_then(|p| passages.get(p)) else {
                no_passage += 1;
                continue;
            };
            let answer = match (&t.answer_span, t.answerable) {
                (Some(s), true) => Some((s.start, s.end)),
                (None, false) => None,
                _ => {
                    no_passage += 1;
                    continue;
                }
            };
            examples.push(ReaderExample {
                question: question_for(cfg, cfg.reader.train_input, d, i)?,
                passage: text.clone(),
                answer,
            });
        }
    }
    let vocab = pair_vocab(cfg, &train, cfg.reader.vocab_size)?;
    let mut model = ReaderModel::new(cfg.reader.model.clone(), vocab, cfg.seed)?;
    let (report, truncated) = model.train(&examples, &cfg.reader.train, cfg.seed)?;
    let path = cfg.reader_checkpoint();
    model.save(&path)?;
    Ok(format!(
        "trained reader on {} examples ({truncated} truncated away, {no_passage} without passage), final loss {:.4} -> {}",
        examples.len(),
        report.final_loss().unwrap_or(f64::NAN),
        path.display()
    ))
}

pub fn stage_read(cfg: &PipelineConfig, variant: QrVariant) -> Result<String> {
    let dialogues = dialogues(cfg)?;
    let model = ReaderModel::load(&cfg.reader_checkpoint())?;
    let index = open_index(cfg)?;
    let rewrites: BTreeMap<String, String> = read_rewrites(cfg, variant)?
        .into_iter()
        .map(|r| (query_id(&r.topic_id, r.turn_id), r.rewrite))
        .collect();
    let top1: BTreeMap<String, String> = match cfg.reader.passage_source {
        PassageSource::Gold => BTreeMap::new(),
        PassageSource::Retrieved => {
            let run_path = cfg.final_run_path(variant);
            fsutil::require(&run_path, if cfg.reranker.enabled { "rerank" } else { "retrieve" })?;
            read_run(&run_path)?
                .into_iter()
                .filter_map(|l| l.entries.first().map(|e| (l.query_id.clone(), e.passage_id.clone())))
                .collect()
        }
    };
    let mut jobs = Vec::new();
    for d in &dialogues {
        for (i, t) in d.turns.iter().enumerate() {
            let qid = query_id(&d.topic_id, t.turn_id);
            let question = rewrites
                .get(&qid)
                .ok_or_else(|| Error::invalid(format!("no `{variant}` rewrite for {qid}")))?;
            let pid = match cfg.reader.passage_source {
                PassageSource::Gold => gold_passage(d, i),
                PassageSource::Retrieved => top1.get(&qid).map(String::as_str),
            };
            jobs.push((d.topic_id.clone(), t.turn_id, question.clone(), pid.map(str::to_string)));
        }
    }
    let records: Vec<PredictionRecord> = jobs
        .par_iter()
        .map(|(topic, turn, question, pid)| {
            let text = pid.as_deref().and_then(|p| index.text(p));
            let (answer, score) = match text {
                Some(text) => {
                    let p = model.predict(question, text)?;
                    ((!p.is_no_answer).then_some(p.answer_text), p.score)
                }
                None => (None, 0.0),
            };
            Ok(PredictionRecord {
                topic_id: topic.clone(),
                turn_id: *turn,
                qa_input_mode: variant.name().to_string(),
                answer,
                score: crate::data::trec::round_score(score),
            })
        })
        .collect::<Result<_>>()?;
    let path = cfg.predictions_path(variant);
    write_jsonl(&records, &path)?;
    Ok(format!("{variant}: {} predictions -> {}", records.len(), path.display()))
}

// ---------------------------------------------------------------- evaluation

#[derive(Debug, Clone, Serialize)]
pub struct QrReport {
    pub variant: QrVariant,
    pub turns: usize,
    pub copied: usize,
    pub rouge1_recall: f64,
    pub exact_match: f64,
    pub similarity: f64,
    pub per_turn: BTreeMap<String, RewriteEval>,
}

pub fn stage_eval_qr(cfg: &PipelineConfig, variant: QrVariant) -> Result<QrReport> {
    let dialogues = dialogues(cfg)?;
    let rewrites = read_rewrites(cfg, variant)?;
    let refs: BTreeMap<String, &str> = dialogues
        .iter()
        .flat_map(|d| {
            d.turns
                .iter()
                .filter_map(move |t| t.rewrite.as_deref().map(|r| (query_id(&d.topic_id, t.turn_id), r)))
        })
        .collect();
    if refs.is_empty() {
        return Err(Error::invalid("dialogues carry no human rewrites to compare against"));
    }
    let embedder = BagOfWords::fit(refs.values().copied().chain(rewrites.iter().map(|r| r.rewrite.as_str())));
    let mut per_turn = BTreeMap::new();
    let mut copied = 0;
    for r in &rewrites {
        let qid = query_id(&r.topic_id, r.turn_id);
        if let Some(reference) = refs.get(&qid) {
            per_turn.insert(qid, evaluate_rewrite(&r.rewrite, reference, Some(&embedder as &dyn Embedder)));
            copied += usize::from(r.was_copied);
        }
    }
    let n = per_turn.len().max(1) as f64;
    let report = QrReport {
        variant,
        turns: per_turn.len(),
        copied,
        rouge1_recall: per_turn.values().map(|e| e.rouge1_recall).sum::<f64>() / n,
        exact_match: per_turn.values().map(|e| e.exact_match).sum::<f64>() / n,
        similarity: per_turn.values().filter_map(|e| e.similarity).sum::<f64>() / n,
        per_turn,
    };
    write_json(&cfg.report_path("qr", variant), &report)?;
    Ok(report)
}

pub fn stage_eval_retrieval(cfg: &PipelineConfig, variant: QrVariant) -> Result<RetrievalEval> {
    let qrels = eval_qrels(cfg)?;
    let run_path = cfg.final_run_path(variant);
    fsutil::require(&run_path, if cfg.reranker.enabled { "rerank" } else { "retrieve" })?;
    let run = read_run(&run_path)?;
    let eval = evaluate_run(&run, &qrels, &cfg.eval.metrics)?;
    write_json(&cfg.report_path("retrieval", variant), &eval)?;
    let curve = pr_curve(&run, &qrels, &cfg.eval.metrics)?;
    fsutil::write_atomic(&cfg.out(&format!("pr-{variant}.csv")), pr_curve_csv(&curve).as_bytes())?;
    Ok(eval)
}

fn gold_answers(d: &Dialogue) -> Vec<(String, Option<Option<String>>)> {
    d.turns
        .iter()
        .map(|t| {
            let gold = match (t.answerable, &t.answer_text) {
                (false, _) => Some(None),
                (true, Some(a)) => Some(Some(a.clone())),
                (true, None) => None,
            };
            (query_id(&d.topic_id, t.turn_id), gold)
        })
        .collect()
}

pub fn stage_eval_extractive(cfg: &PipelineConfig, variant: QrVariant) -> Result<ExtractiveEval> {
    let dialogues = dialogues(cfg)?;
    let path = cfg.predictions_path(variant);
    fsutil::require(&path, "read")?;
    let preds: BTreeMap<String, Option<String>> = read_jsonl::<PredictionRecord>(&path)?
        .into_iter()
        .map(|p| (query_id(&p.topic_id, p.turn_id), p.answer))
        .collect();
    let mut items = Vec::new();
    for d in &dialogues {
        for (qid, gold) in gold_answers(d) {
            let Some(gold) = gold else { continue };
            let pred = preds
                .get(&qid)
                .ok_or_else(|| Error::invalid(format!("no prediction for {qid} in {}", path.display())))?;
            items.push((qid, pred.clone(), gold));
        }
    }
    let eval = evaluate_answers(&items);
    write_json(&cfg.report_path("extractive", variant), &eval)?;
    Ok(eval)
}

// ---------------------------------------------------------------- break-down

fn retrieval_metric(m: &crate::eval::retrieval::QueryMetrics, name: &str) -> Result<f64> {
    Ok(match name.to_ascii_uppercase().as_str() {
        "P@1" => m.p1,
        "AP" | "MAP" => m.ap,
        "RR" | "MRR" => m.rr,
        n if n.starts_with("NDCG") => m.ndcg.unwrap_or(0.0),
        _ => return Err(Error::Config(format!("unknown retrieval metric `{name}`"))),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct BreakdownReport {
    pub variant: QrVariant,
    pub retrieval: BreakdownTable,
    pub extractive: Option<BreakdownTable>,
}

pub fn stage_breakdown(cfg: &PipelineConfig) -> Result<BreakdownReport> {
    let model = cfg.eval.breakdown_variant;
    let copied: BTreeMap<String, bool> = read_rewrites(cfg, model)?
        .into_iter()
        .map(|r| (query_id(&r.topic_id, r.turn_id), r.was_copied))
        .collect();
    let variants = [QrVariant::Original, model, QrVariant::Human];

    let qrels = eval_qrels(cfg)?;
    let mut evals = Vec::new();
    for v in variants {
        let p = cfg.final_run_path(v);
        fsutil::require(&p, if cfg.reranker.enabled { "rerank" } else { "retrieve" })?;
        evals.push(evaluate_run(&read_run(&p)?, &qrels, &cfg.eval.metrics)?);
    }
    let mut columns = Vec::new();
    let mut total = 0;
    for t in &cfg.eval.retrieval_thresholds {
        let th: Threshold = t.parse()?;
        let pick = |e: &RetrievalEval| -> Result<BTreeMap<String, f64>> {
            e.per_query
                .iter()
                .map(|(k, m)| Ok((k.clone(), retrieval_metric(m, &th.metric)?)))
                .collect()
        };
        let outcomes = join_outcomes(&pick(&evals[0])?, &pick(&evals[1])?, &pick(&evals[2])?, &copied)?;
        let table = breakdown_table(&outcomes, &[th])?;
        total = table.total;
        columns.extend(table.columns);
    }
    let retrieval = BreakdownTable { total, columns };

    let extractive = if variants.iter().all(|&v| cfg.predictions_path(v).exists()) {
        let mut per_variant = Vec::new();
        for v in variants {
            let e = stage_eval_extractive(cfg, v)?;
            per_variant.push(e.per_question.into_iter().map(|s| (s.key, s.f1)).collect::<BTreeMap<_, _>>());
        }
        let ths: Vec<Threshold> = cfg
            .eval
            .extractive_thresholds
            .iter()
            .map(|t| t.parse())
            .collect::<Result<_>>()?;
        if let Some(bad) = ths.iter().find(|t| !t.metric.eq_ignore_ascii_case("F1")) {
            return Err(Error::Config(format!("extractive thresholds use F1, not `{}`", bad.metric)));
        }
        let outcomes = join_outcomes(&per_variant[0], &per_variant[1], &per_variant[2], &copied)?;
        Some(breakdown_table(&outcomes, &ths)?)
    } else {
        None
    };

    let mut text = format!("Retrieval ({model} vs original and human, {} questions)\n", retrieval.total);
    text.push_str(&retrieval.to_text());
    fsutil::write_atomic(&cfg.out("breakdown-retrieval.csv"), retrieval.to_csv().as_bytes())?;
    if let Some(e) = &extractive {
        text.push_str(&format!("\nExtractive ({model} vs original and human, {} questions)\n", e.total));
        text.push_str(&e.to_text());
        fsutil::write_atomic(&cfg.out("breakdown-extractive.csv"), e.to_csv().as_bytes())?;
    }
    fsutil::write_atomic(&cfg.out("breakdown.txt"), text.as_bytes())?;
    let report = BreakdownReport {
        variant: model,
        retrieval,
        extractive,
    };
    write_json(&cfg.out("breakdown.json"), &report)?;
    Ok(report)
}

// ---------------------------------------------------------------- pipeline

/// Index and models are built when missing; every variant needed by the
/// chosen one and the break-down is then rewritten, retrieved, re-ranked,
/// read and evaluated.
pub fn run_pipeline(cfg: &PipelineConfig, variant: QrVariant, log: &mut dyn FnMut(&str)) -> Result<()> {
    cfg.validate()?;
    if !cfg.index_dir().join("VERSION").exists() {
        log(&stage_index(cfg)?);
    }
    let mut variants = vec![variant, QrVariant::Original, cfg.eval.breakdown_variant, QrVariant::Human];
    variants.sort();
    variants.dedup();
    if variants.contains(&QrVariant::Transformer) && !cfg.rewriter_checkpoint().exists() {
        log(&stage_train_qr(cfg)?);
    }
    if cfg.reranker.enabled && !cfg.reranker_checkpoint().exists() {
        log(&stage_train_reranker(cfg)?);
    }
    if !cfg.reader_checkpoint().exists() {
        log(&stage_train_reader(cfg)?);
    }
    for &v in &variants {
        log(&stage_rewrite(cfg, v)?);
        log(&stage_retrieve(cfg, v)?);
        if cfg.reranker.enabled {
            log(&stage_rerank(cfg, v)?);
        }
        log(&stage_read(cfg, v)?);
        let qr = stage_eval_qr(cfg, v)?;
        let r = stage_eval_retrieval(cfg, v)?;
        let e = stage_eval_extractive(cfg, v)?;
        log(&format!(
            "{v}: ROUGE-1 {:.4}  MAP {:.4}  MRR {:.4}  NDCG@{} {:.4}  P@1 {:.4}  EM {:.4}  F1 {:.4}",
            qr.rouge1_recall, r.map, r.mrr, cfg.eval.metrics.ndcg_k, r.ndcg, r.p1, e.em, e.f1
        ));
    }
    let b = stage_breakdown(cfg)?;
    log(&format!("break-down over {} questions -> {}", b.retrieval.total, cfg.out("breakdown.txt").display()));
    Ok(())
}

/// Writes a generated corpus and a matching config into `dir`.
pub fn write_synthetic(dir: &Path, synth: &crate::synthetic::SyntheticConfig) -> Result<PipelineConfig> {
    let corpus = crate::synthetic::generate(synth)?;
    let cfg = PipelineConfig {
        seed: synth.seed,
        paths: Paths {
            collection: "collection.tsv".into(),
            train_dialogues: "train.json".into(),
            dialogues: "test.json".into(),
            qrels: "qrels.txt".into(),
            output_dir: "out".into(),
            ..Paths::default()
        },
        ..PipelineConfig::default()
    };
    fsutil::write_atomic(
        &dir.join("collection.tsv"),
        crate::data::collection_to_string(&corpus.passages).as_bytes(),
    )?;
    crate::data::write_dialogues(&corpus.train, &dir.join("train.json"))?;
    crate::data::write_dialogues(&corpus.test, &dir.join("test.json"))?;
    fsutil::write_atomic(
        &dir.join("qrels.txt"),
        crate::data::trec::qrels_to_string(&corpus.qrels).as_bytes(),
    )?;
    fsutil::write_atomic(&dir.join("pipeline.toml"), cfg.to_toml().as_bytes())?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_toml() {
        let cfg = PipelineConfig::default();
        let back = PipelineConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(PipelineConfig::from_toml("sed = 1").is_err());
        let cfg = PipelineConfig::from_toml("[retrieval]\nk1 = 1.2\n").unwrap();
        assert_eq!(cfg.retrieval.k1, 1.2);
        assert_eq!(cfg.retrieval.b, 0.68);
    }

    #[test]
    fn variant_names() {
        for v in QrVariant::ALL {
            assert_eq!(v.name().parse::<QrVariant>().unwrap(), v);
        }
        assert!("gpt".parse::<QrVariant>().is_err());
    }
}
