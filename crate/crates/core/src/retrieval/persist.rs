//! On-disk index layout, one directory per index:
//!
//! ```text
//! VERSION         format version, a single integer line
//! stats.json      {"format_version", "num_docs", "total_terms", "num_terms", "stem"}
//! stopwords.txt   analyzer stopwords, one per line
//! docs.tsv        passage_id<TAB>text, in document-number order
//! doclen.tsv      passage_id<TAB>analyzed length
//! terms.tsv       term<TAB>df, sorted by term
//! postings.tsv    term<TAB>doc:tf doc:tf ..., same order as terms.tsv
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::index::{InvertedIndex, Posting};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::text::analyzer::{parse_stopwords, Analyzer};

pub const INDEX_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Stats {
    format_version: u32,
    num_docs: usize,
    total_terms: u64,
    num_terms: usize,
    stem: bool,
}

fn write(dir: &Path, name: &str, body: String) -> Result<()> {
    let p = dir.join(name);
    fs::write(&p, body).map_err(|e| Error::io(&p, e))
}

pub fn save_index(index: &InvertedIndex, dir: &Path) -> Result<()> {
    fsutil::write_dir_atomic(dir, |tmp| {
        write(tmp, "VERSION", format!("{INDEX_FORMAT_VERSION}\n"))?;
        let stats = Stats {
            format_version: INDEX_FORMAT_VERSION,
            num_docs: index.num_docs(),
            total_terms: index.total_terms,
            num_terms: index.postings.len(),
            stem: index.analyzer.stems(),
        };
        let mut s = serde_json::to_string_pretty(&stats).expect("stats serialize");
        s.push('\n');
        write(tmp, "stats.json", s)?;
        write(tmp, "stopwords.txt", index.analyzer.stopwords_text())?;

        let mut docs = String::new();
        let mut lens = String::new();
        for ((pid, text), len) in index.passage_ids.iter().zip(&index.texts).zip(&index.doc_len) {
            docs.push_str(&format!("{pid}\t{text}\n"));
            lens.push_str(&format!("{pid}\t{len}\n"));
        }
        write(tmp, "docs.tsv", docs)?;
        write(tmp, "doclen.tsv", lens)?;

        let mut terms = String::new();
        let mut postings = String::new();
        for (term, list) in &index.postings {
            terms.push_str(&format!("{term}\t{}\n", list.len()));
            let body: Vec<String> = list.iter().map(|(d, tf)| format!("{d}:{tf}")).collect();
            postings.push_str(&format!("{term}\t{}\n", body.join(" ")));
        }
        write(tmp, "terms.tsv", terms)?;
        write(tmp, "postings.tsv", postings)
    })
}

fn read(dir: &Path, name: &str) -> Result<(std::path::PathBuf, String)> {
    let p = dir.join(name);
    let s = fsutil::read_to_string(&p)?;
    Ok((p, s))
}

fn tab_split<'a>(path: &Path, line_no: usize, line: &'a str) -> Result<(&'a str, &'a str)> {
    line.split_once('\t')
        .ok_or_else(|| Error::parse(path, line_no, "expected a TAB-separated pair"))
}

pub fn load_index(dir: &Path) -> Result<InvertedIndex> {
    fsutil::require(&dir.join("VERSION"), "index")?;
    let (vp, version) = read(dir, "VERSION")?;
    if version.trim() != INDEX_FORMAT_VERSION.to_string() {
        return Err(Error::parse(&vp, 1, format!("unsupported index version `{}`", version.trim())));
    }
    let (sp, stats) = read(dir, "stats.json")?;
    let stats: Stats = serde_json::from_str(&stats).map_err(|e| Error::parse(&sp, e.line(), e.to_string()))?;
    let (_, stop) = read(dir, "stopwords.txt")?;
    let analyzer = Analyzer::new(parse_stopwords(&stop), stats.stem);

    let (dp, docs) = read(dir, "docs.tsv")?;
    let mut passage_ids = Vec::with_capacity(stats.num_docs);
    let mut texts = Vec::with_capacity(stats.num_docs);
    for (i, line) in docs.lines().enumerate() {
        let (pid, text) = tab_split(&dp, i + 1, line)?;
        passage_ids.push(pid.to_string());
        texts.push(text.to_string());
    }
    let (lp, lens) = read(dir, "doclen.tsv")?;
    let mut doc_len = Vec::with_capacity(stats.num_docs);
    for (i, line) in lens.lines().enumerate() {
        let (pid, len) = tab_split(&lp, i + 1, line)?;
        if passage_ids.get(i).map(String::as_str) != Some(pid) {
            return Err(Error::parse(&lp, i + 1, format!("`{pid}` out of step with docs.tsv")));
        }
        doc_len.push(len.parse().map_err(|_| Error::parse(&lp, i + 1, "bad length"))?);
    }
    if passage_ids.len() != stats.num_docs || doc_len.len() != stats.num_docs {
        return Err(Error::invalid(format!("{}: document count disagrees with stats.json", dir.display())));
    }

    let (tp, terms) = read(dir, "terms.tsv")?;
    let (pp, post) = read(dir, "postings.tsv")?;
    let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
    let mut term_lines = terms.lines();
    for (i, line) in post.lines().enumerate() {
        let (term, body) = tab_split(&pp, i + 1, line)?;
        let tline = term_lines
            .next()
            .ok_or_else(|| Error::parse(&tp, i + 1, "fewer terms than postings"))?;
        let (tterm, df) = tab_split(&tp, i + 1, tline)?;
        let list: Vec<Posting> = body
            .split(' ')
            .map(|e| {
                let (d, tf) = e.split_once(':')?;
                let d: u32 = d.parse().ok()?;
                ((d as usize) < stats.num_docs).then_some(())?;
                Some((d, tf.parse().ok()?))
            })
            .collect::<Option<_>>()
            .ok_or_else(|| Error::parse(&pp, i + 1, "bad posting"))?;
        if tterm != term || df.parse::<usize>().ok() != Some(list.len()) {
            return Err(Error::parse(&tp, i + 1, format!("term `{tterm}` disagrees with postings.tsv")));
        }
        if list.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::parse(&pp, i + 1, "postings not sorted by document"));
        }
        postings.insert(term.to_string(), list);
    }
    if term_lines.next().is_some() || postings.len() != stats.num_terms {
        return Err(Error::invalid(format!("{}: term count disagrees with stats.json", dir.display())));
    }
    Ok(InvertedIndex::from_parts(passage_ids, texts, doc_len, postings, analyzer))
}
