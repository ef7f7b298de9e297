use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use proptest::prelude::*;
use qrqa_core::data::trec::{qrels_to_string, round_score, run_to_string};
use qrqa_core::data::{
    collection_to_string, dialogues_to_string, load_collection, parse_dialogues, parse_qrels, parse_run, AnswerSpan,
    Dialogue, Passage, RankedList, Turn,
};

fn text() -> impl Strategy<Value = String> {
    "[A-Za-z'?,. ]{1,30}".prop_filter("non-blank", |s| !s.trim().is_empty())
}

fn turn() -> impl Strategy<Value = Turn> {
    (
        text(),
        proptest::option::of(text()),
        proptest::option::of(text()),
        proptest::option::of(("[a-z0-9]{1,6}", 0usize..20, 0usize..10)),
    )
        .prop_map(|(question, rewrite, answer_text, span)| Turn {
            turn_id: 0,
            question,
            rewrite,
            answer_text,
            answer_span: span.map(|(passage_id, start, len)| AnswerSpan {
                passage_id,
                start,
                end: start + len + 1,
            }),
            answerable: true,
        })
}

fn dialogue() -> impl Strategy<Value = Dialogue> {
    ("[a-z0-9]{1,5}", proptest::collection::vec((turn(), 1u32..4), 1..6)).prop_map(|(topic_id, turns)| {
        let mut id = 0;
        let turns = turns
            .into_iter()
            .map(|(mut t, gap)| {
                id += gap;
                t.turn_id = id;
                t
            })
            .collect();
        Dialogue { topic_id, turns }
    })
}

proptest! {
    #[test]
    fn dialogue_round_trip_is_byte_identical(ds in proptest::collection::vec(dialogue(), 0..5)) {
        let text = dialogues_to_string(&ds);
        let back = parse_dialogues(&text, Path::new("t.json")).unwrap();
        prop_assert_eq!(&back, &ds);
        prop_assert_eq!(dialogues_to_string(&back), text);
    }

    #[test]
    fn run_round_trip(lists in proptest::collection::vec(
        ("[a-z0-9_]{1,6}", proptest::collection::vec(("[a-z0-9]{1,5}", -1e4f64..1e4), 0..8)), 1..6)
    ) {
        let mut seen = HashSet::new();
        let run: Vec<RankedList> = lists
            .into_iter()
            .filter(|(q, _)| seen.insert(q.clone()))
            .map(|(q, docs)| {
                let mut pids = HashSet::new();
                let mut scored: Vec<(String, f64)> = docs
                    .into_iter()
                    .filter(|(p, _)| pids.insert(p.clone()))
                    .map(|(p, s)| (p, round_score(s)))
                    .collect();
                scored.sort_by(|a, b| b.1.total_cmp(&a.1));
                RankedList::from_scored(q, "tag", scored)
            })
            .filter(|l| !l.entries.is_empty())
            .collect();
        let text = run_to_string(&run);
        let back = parse_run(&text, Path::new("run")).unwrap();
        prop_assert_eq!(back, run);
    }

    #[test]
    fn qrels_round_trip(lines in proptest::collection::btree_map(("[a-z0-9_]{1,4}", "[a-z0-9]{1,4}"), 0u8..=4, 0..20)) {
        let text: String = lines.iter().map(|((q, p), g)| format!("{q} 0 {p} {g}\n")).collect();
        let qrels = parse_qrels(&text, Path::new("qrels")).unwrap();
        let again = parse_qrels(&qrels_to_string(&qrels), Path::new("qrels")).unwrap();
        prop_assert_eq!(&again, &qrels);
        for ((q, p), g) in &lines {
            prop_assert_eq!(qrels.grade(q, p), *g);
        }
    }
}

#[test]
fn ten_thousand_line_collection_streams_in_order() {
    let mut file = tempfile::NamedTempFile::new().unwrap();
    for i in 0..10_000 {
        writeln!(file, "p{i}\tpassage number {i} with\ttabs inside").unwrap();
    }
    file.flush().unwrap();
    let passages: Vec<Passage> = load_collection(file.path()).unwrap().map(Result::unwrap).collect();
    assert_eq!(passages.len(), 10_000);
    let ids: HashSet<&str> = passages.iter().map(|p| p.passage_id.as_str()).collect();
    assert_eq!(ids.len(), 10_000);
    assert_eq!(passages[9_999].passage_id, "p9999");
    assert_eq!(passages[3].text, "passage number 3 with\ttabs inside");
    let round = collection_to_string(&passages);
    assert_eq!(round, std::fs::read_to_string(file.path()).unwrap());
}

#[test]
fn duplicate_qrels_collapse_and_conflicts_fail() {
    let ok = parse_qrels("q 0 p 2\nq 0 p 2\n", Path::new("x")).unwrap();
    assert_eq!(ok.len(), 1);
    let err = parse_qrels("q 0 p 2\nq 0 p 3\n", Path::new("x")).unwrap_err();
    assert!(err.to_string().contains(":2:"), "{err}");
}
