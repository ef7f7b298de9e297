use proptest::prelude::*;
use qrqa_core::data::Passage;
use qrqa_core::retrieval::{load_index, save_index, InvertedIndex, RetrievalConfig};
use qrqa_core::text::{normalize, Analyzer, Vocabulary};

const WORDS: [&str; 10] = ["xi'an", "gdp", "river", "the", "of", "what", "its", "capital", "china", "wei"];

fn sentence() -> impl Strategy<Value = String> {
    proptest::collection::vec(0usize..WORDS.len(), 1..12)
        .prop_map(|ix| ix.into_iter().map(|i| WORDS[i]).collect::<Vec<_>>().join(" "))
}

fn build(texts: &[String]) -> InvertedIndex {
    let passages = texts
        .iter()
        .enumerate()
        .map(|(i, t)| Ok(Passage::new(format!("d{i:02}"), t.clone())));
    InvertedIndex::build(passages, Analyzer::default()).unwrap()
}

proptest! {
    #[test]
    fn decode_inverts_encode_in_vocabulary(s in sentence()) {
        let vocab = Vocabulary::build([WORDS.join(" ").as_str()], 100).unwrap();
        let ids = vocab.encode(&s);
        prop_assert!(!ids.contains(&Vocabulary::UNK_ID));
        prop_assert_eq!(vocab.decode(&ids).unwrap(), normalize(&s));
    }

    #[test]
    fn analyzer_ignores_case(s in "[A-Za-z' ?.,]{0,40}") {
        let a = Analyzer::default();
        prop_assert_eq!(a.analyze(&s), a.analyze(&s.to_lowercase()));
        prop_assert_eq!(a.analyze(&s), a.analyze(&s.to_uppercase()));
    }

    #[test]
    fn retrieval_matches_exhaustive_scoring(texts in proptest::collection::vec(sentence(), 1..12), q in sentence()) {
        let index = build(&texts);
        let cfg = RetrievalConfig::default();
        let terms = index.analyzer().analyze(&q);
        let mut oracle: Vec<(String, f64)> = index
            .passage_ids()
            .iter()
            .map(|p| (p.clone(), index.bm25_score(&terms, p, &cfg).unwrap()))
            .filter(|(_, s)| *s > 0.0)
            .collect();
        oracle.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        prop_assert_eq!(index.retrieve(&q, &cfg), oracle);
    }

    #[test]
    fn length_independent_without_b(text in sentence(), q in sentence()) {
        let cfg = RetrievalConfig { b: 0.0, ..RetrievalConfig::default() };
        let pad = "zzz ".repeat(7);
        let short = build(&[text.clone(), "qqq".into()]);
        let long = build(&[format!("{text} {pad}"), "qqq".into()]);
        let terms = short.analyzer().analyze(&q);
        let a = short.bm25_score(&terms, "d00", &cfg).unwrap();
        let b = long.bm25_score(&terms, "d00", &cfg).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn persisted_index_answers_identically(texts in proptest::collection::vec(sentence(), 0..10), q in sentence()) {
        let index = build(&texts);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("idx");
        save_index(&index, &path).unwrap();
        let back = load_index(&path).unwrap();
        prop_assert_eq!(back.passage_ids(), index.passage_ids());
        prop_assert_eq!(back.num_docs(), index.num_docs());
        prop_assert_eq!(back.avgdl(), index.avgdl());
        let terms: Vec<&str> = index.terms().collect();
        prop_assert_eq!(back.terms().collect::<Vec<_>>(), terms.clone());
        for t in terms {
            prop_assert_eq!(back.postings(t), index.postings(t));
        }
        for p in index.passage_ids() {
            prop_assert_eq!(back.text(p), index.text(p));
            prop_assert_eq!(back.doc_length(p), index.doc_length(p));
        }
        let cfg = RetrievalConfig::default();
        prop_assert_eq!(back.retrieve(&q, &cfg), index.retrieve(&q, &cfg));
    }
}

#[test]
fn three_passage_fixture_counts() {
    let index = build(&["wei river river xi'an".into(), "china capital".into(), "xi'an china".into()]);
    assert_eq!(index.num_docs(), 3);
    assert_eq!(index.df("xi'an"), 2);
    assert_eq!(index.df("river"), 1);
    assert_eq!(index.postings("river"), &[(0, 2)]);
    assert_eq!(index.doc_length("d00"), Some(4));
    assert!((index.avgdl() - 8.0 / 3.0).abs() < 1e-12);
}
