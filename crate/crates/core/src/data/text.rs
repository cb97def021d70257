use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Dense symbol ids, assigned in order of first occurrence.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Vocab {
    symbols: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn new() -> Self {
        Vocab::default()
    }

    pub fn from_symbols<I, S>(symbols: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Vocab::new();
        for s in symbols {
            let s = s.into();
            if v.index.contains_key(&s) {
                return Err(Error::Data(format!("duplicate vocabulary symbol {s:?}")));
            }
            v.insert(&s);
        }
        Ok(v)
    }

    /// Returns the id of `symbol`, adding it if unseen.
    pub fn insert(&mut self, symbol: &str) -> usize {
        if let Some(&id) = self.index.get(symbol) {
            return id;
        }
        let id = self.symbols.len();
        self.symbols.push(symbol.to_owned());
        self.index.insert(symbol.to_owned(), id);
        id
    }

    pub fn id(&self, symbol: &str) -> Option<usize> {
        self.index.get(symbol).copied()
    }

    pub fn symbol(&self, id: usize) -> Option<&str> {
        self.symbols.get(id).map(String::as_str)
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    /// Ids for a sequence of symbols; unknown symbols are an error.
    pub fn encode<'a>(&self, symbols: impl IntoIterator<Item = &'a str>) -> Result<Vec<usize>> {
        symbols
            .into_iter()
            .map(|s| {
                self.id(s)
                    .ok_or_else(|| Error::Data(format!("unknown symbol {s:?}")))
            })
            .collect()
    }
}

fn read_text(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    String::from_utf8(bytes).map_err(|e| Error::format(path, format!("not UTF-8: {e}")))
}

/// Lowercases `text`, keeps at most `max_chars` characters and assigns ids.
pub fn char_ids(text: &str, max_chars: Option<usize>) -> Result<(Vocab, Vec<usize>)> {
    let mut vocab = Vocab::new();
    let mut ids = Vec::new();
    let mut buf = [0u8; 4];
    for ch in text.chars().flat_map(char::to_lowercase) {
        if max_chars.is_some_and(|m| ids.len() >= m) {
            break;
        }
        ids.push(vocab.insert(ch.encode_utf8(&mut buf)));
    }
    if ids.is_empty() {
        return Err(Error::Data("empty corpus".into()));
    }
    Ok((vocab, ids))
}

pub fn char_corpus(path: impl AsRef<Path>, max_chars: Option<usize>) -> Result<(Vocab, Vec<usize>)> {
    char_ids(&read_text(path.as_ref())?, max_chars)
}

/// Lowercase word tokens. Runs of letters, digits and apostrophes form a
/// word; any other non-space character is a token of its own.
pub fn word_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars().flat_map(char::to_lowercase) {
        if ch.is_alphanumeric() || ch == '\'' {
            cur.push(ch);
            continue;
        }
        if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
        if !ch.is_whitespace() {
            out.push(ch.to_string());
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Word-level corpus. `max_chars` truncates the raw text before tokenizing.
pub fn word_corpus(path: impl AsRef<Path>, max_chars: Option<usize>) -> Result<(Vocab, Vec<usize>)> {
    let text = read_text(path.as_ref())?;
    let text: String = match max_chars {
        Some(m) => text.chars().take(m).collect(),
        None => text,
    };
    word_ids(&word_tokens(&text))
}

pub fn word_ids(tokens: &[String]) -> Result<(Vocab, Vec<usize>)> {
    if tokens.is_empty() {
        return Err(Error::Data("empty corpus".into()));
    }
    let mut vocab = Vocab::new();
    let ids = tokens.iter().map(|t| vocab.insert(t)).collect();
    Ok((vocab, ids))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_case() {
        let (v, ids) = char_ids("AbaB", None).unwrap();
        assert_eq!(v.symbols(), &["a", "b"]);
        assert_eq!(ids, vec![0, 1, 0, 1]);
    }

    #[test]
    fn round_trip_and_errors() {
        let (v, ids) = char_ids("hello, world", None).unwrap();
        let back: String = ids.iter().map(|&i| v.symbol(i).unwrap()).collect();
        assert_eq!(back, "hello, world");
        for (i, s) in v.symbols().iter().enumerate() {
            assert_eq!(v.id(s), Some(i));
        }
        assert!(char_ids("", None).is_err());
        assert!(v.encode(["h", "z"]).is_err());
        assert!(Vocab::from_symbols(["a", "a"]).is_err());
    }

    #[test]
    fn max_chars_slices() {
        let (v, ids) = char_ids("abcdef", Some(3)).unwrap();
        assert_eq!(ids.len(), 3);
        assert_eq!(v.len(), 3);
    }

    #[test]
    fn words() {
        assert_eq!(
            word_tokens("The cat's hat, the END."),
            vec!["the", "cat's", "hat", ",", "the", "end", "."]
        );
        let (v, ids) = word_ids(&word_tokens("a b a")).unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(ids, vec![0, 1, 0]);
    }

    #[test]
    fn reads_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.txt");
        fs::write(&p, "Ab ab").unwrap();
        let (v, ids) = char_corpus(&p, None).unwrap();
        assert_eq!(v.len(), 3);
        assert_eq!(ids, vec![0, 1, 2, 0, 1]);
        assert!(matches!(char_corpus(dir.path().join("missing"), None), Err(Error::Io { .. })));
    }
}
