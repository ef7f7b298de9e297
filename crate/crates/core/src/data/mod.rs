pub mod collection;
pub mod dialogue;
pub mod records;
pub mod trec;

pub use collection::{collection_to_string, load_collection, CollectionReader, Passage};
pub use dialogue::{
    dialogues_to_string, load_dialogues, parse_dialogues, query_id, write_dialogues, AnswerSpan, Dialogue,
    DialogueFormat, Turn,
};
pub use records::{read_jsonl, write_jsonl, PredictionRecord, RewriteRecord};
pub use trec::{load_qrels, parse_qrels, parse_run, read_run, write_run, Qrels, RankedList, RunEntry};
