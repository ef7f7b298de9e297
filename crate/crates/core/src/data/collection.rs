//! Passage collections: `passage_id<TAB>text`, one per line.

use std::fs::File;
use std::io::{BufRead, BufReader, Lines};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Passage {
    pub passage_id: String,
    pub text: String,
}

impl Passage {
    pub fn new(passage_id: impl Into<String>, text: impl Into<String>) -> Self {
        Passage {
            passage_id: passage_id.into(),
            text: text.into(),
        }
    }
}

/// Streaming reader over a collection file. Yields passages in file order.
pub struct CollectionReader<R> {
    lines: Lines<R>,
    path: PathBuf,
    line_no: usize,
}

impl<R: BufRead> CollectionReader<R> {
    pub fn new(reader: R, path: impl Into<PathBuf>) -> Self {
        CollectionReader {
            lines: reader.lines(),
            path: path.into(),
            line_no: 0,
        }
    }
}

impl<R: BufRead> Iterator for CollectionReader<R> {
    type Item = Result<Passage>;

    fn next(&mut self) -> Option<Self::Item> {
        let line = match self.lines.next()? {
            Ok(l) => l,
            Err(e) => return Some(Err(Error::io(&self.path, e))),
        };
        self.line_no += 1;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        Some(match line.split_once('\t') {
            Some((id, text)) if !id.is_empty() => Ok(Passage::new(id, text)),
            Some(_) => Err(Error::parse(&self.path, self.line_no, "empty passage id")),
            None => Err(Error::parse(&self.path, self.line_no, "expected `id<TAB>text`")),
        })
    }
}

pub fn load_collection(path: &Path) -> Result<CollectionReader<BufReader<File>>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(CollectionReader::new(BufReader::new(f), path))
}

pub fn collection_to_string(passages: &[Passage]) -> String {
    let mut out = String::new();
    for p in passages {
        out.push_str(&p.passage_id);
        out.push('\t');
        out.push_str(&p.text);
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read(s: &str) -> Vec<Result<Passage>> {
        CollectionReader::new(s.as_bytes(), "c.tsv").collect()
    }

    #[test]
    fn single_line() {
        let ps: Vec<Passage> = read("p1\thello world\n").into_iter().map(|r| r.unwrap()).collect();
        assert_eq!(ps, vec![Passage::new("p1", "hello world")]);
    }

    #[test]
    fn empty_file() {
        assert!(read("").is_empty());
    }

    #[test]
    fn missing_tab_reports_line() {
        let out = read("p1\tok\nbroken line\n");
        let err = out[1].as_ref().unwrap_err().to_string();
        assert!(err.starts_with("c.tsv:2:"), "{err}");
    }

    #[test]
    fn text_may_contain_tabs() {
        let p = read("a\tx\ty\n").remove(0).unwrap();
        assert_eq!(p.text, "x\ty");
    }
}
