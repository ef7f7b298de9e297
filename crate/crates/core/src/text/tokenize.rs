//! Word-level tokenizer shared by the neural models, the analyzer and the
//! metrics.

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const BOS: &str = "[BOS]";
pub const EOS: &str = "[EOS]";

/// In id order.
pub const SPECIALS: [&str; 6] = [PAD, UNK, CLS, SEP, BOS, EOS];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    /// Letters and digits, possibly with internal apostrophes.
    Word,
    Punct,
    Special,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    /// Lowercased surface form (specials keep their spelling).
    pub text: String,
    pub kind: TokenKind,
    /// Char offsets into the input, end exclusive.
    pub start: usize,
    pub end: usize,
}

fn is_apostrophe(c: char) -> bool {
    c == '\'' || c == '\u{2019}'
}

/// Splits `text` into words, single punctuation characters and bracketed
/// special markers such as `[SEP]`.
pub fn tokenize(text: &str) -> Vec<Token> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c == '[' {
            if let Some(sp) = SPECIALS.iter().find(|s| {
                let n = s.chars().count();
                i + n <= chars.len() && chars[i..i + n].iter().copied().eq(s.chars())
            }) {
                let n = sp.chars().count();
                out.push(Token {
                    text: sp.to_string(),
                    kind: TokenKind::Special,
                    start: i,
                    end: i + n,
                });
                i += n;
                continue;
            }
        }
        if c.is_alphanumeric() {
            let start = i;
            i += 1;
            loop {
                if i < chars.len() && chars[i].is_alphanumeric() {
                    i += 1;
                } else if i + 1 < chars.len() && is_apostrophe(chars[i]) && chars[i + 1].is_alphanumeric() {
                    i += 2;
                } else {
                    break;
                }
            }
            let word: String = chars[start..i]
                .iter()
                .map(|&c| if c == '\u{2019}' { '\'' } else { c })
                .collect::<String>()
                .to_lowercase();
            out.push(Token {
                text: word,
                kind: TokenKind::Word,
                start,
                end: i,
            });
            continue;
        }
        out.push(Token {
            text: c.to_lowercase().collect(),
            kind: TokenKind::Punct,
            start: i,
            end: i + 1,
        });
        i += 1;
    }
    out
}

/// Lowercased word tokens only.
pub fn words(text: &str) -> Vec<String> {
    tokenize(text)
        .into_iter()
        .filter(|t| t.kind == TokenKind::Word)
        .map(|t| t.text)
        .collect()
}

/// Token texts joined by single spaces; what `decode(encode(x))` yields for
/// in-vocabulary text.
pub fn normalize(text: &str) -> String {
    tokenize(text).into_iter().map(|t| t.text).collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(s: &str) -> Vec<String> {
        tokenize(s).into_iter().map(|t| t.text).collect()
    }

    #[test]
    fn splits_words_and_punctuation() {
        assert_eq!(texts("What is GDP?"), ["what", "is", "gdp", "?"]);
        assert_eq!(texts("Xi'an's  GDP,"), ["xi'an's", "gdp", ","]);
        assert_eq!(texts("rock 'n' roll"), ["rock", "'", "n", "'", "roll"]);
    }

    #[test]
    fn recognizes_specials() {
        assert_eq!(texts("a [SEP] b[CLS]"), ["a", "[SEP]", "b", "[CLS]"]);
        assert_eq!(texts("[sep]"), ["[", "sep", "]"]);
    }

    #[test]
    fn offsets_are_chars() {
        let t = tokenize("Ärger über");
        assert_eq!((t[1].start, t[1].end), (6, 10));
        assert_eq!(t[0].text, "ärger");
    }
}
