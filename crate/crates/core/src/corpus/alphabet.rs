use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered character set with a CTC blank appended after the last symbol.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "AlphabetRecord", into = "AlphabetRecord")]
pub struct Alphabet {
    symbols: Vec<char>,
}

#[derive(Serialize, Deserialize)]
struct AlphabetRecord {
    symbols: String,
    blank_index: usize,
    size: usize,
}

impl TryFrom<AlphabetRecord> for Alphabet {
    type Error = Error;

    fn try_from(rec: AlphabetRecord) -> Result<Self> {
        let alphabet = Alphabet::new(rec.symbols.chars())?;
        if rec.blank_index != alphabet.blank() || rec.size != alphabet.size() {
            return Err(Error::Format {
                what: "alphabet",
                detail: format!(
                    "blank_index {} / size {} inconsistent with {} symbols",
                    rec.blank_index,
                    rec.size,
                    alphabet.symbols.len()
                ),
            });
        }
        Ok(alphabet)
    }
}

impl From<Alphabet> for AlphabetRecord {
    fn from(a: Alphabet) -> Self {
        AlphabetRecord {
            blank_index: a.blank(),
            size: a.size(),
            symbols: a.symbols.into_iter().collect(),
        }
    }
}

impl Alphabet {
    pub fn new(symbols: impl IntoIterator<Item = char>) -> Result<Self> {
        let symbols: Vec<char> = symbols.into_iter().collect();
        if symbols.is_empty() {
            return Err(Error::InvalidArgument(
                "alphabet needs at least one symbol".into(),
            ));
        }
        for (i, c) in symbols.iter().enumerate() {
            if symbols[..i].contains(c) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate alphabet symbol {c:?}"
                )));
            }
        }
        Ok(Alphabet { symbols })
    }

    /// `a`..`z`, blank at index 26.
    pub fn lowercase() -> Self {
        Alphabet {
            symbols: ('a'..='z').collect(),
        }
    }

    /// Number of classes including the blank.
    pub fn size(&self) -> usize {
        self.symbols.len() + 1
    }

    pub fn blank(&self) -> usize {
        self.symbols.len()
    }

    pub fn symbols(&self) -> &[char] {
        &self.symbols
    }

    pub fn index_of(&self, c: char) -> Option<usize> {
        self.symbols.iter().position(|&s| s == c)
    }

    pub fn symbol(&self, index: usize) -> Option<char> {
        self.symbols.get(index).copied()
    }

    pub fn contains(&self, c: char) -> bool {
        self.index_of(c).is_some()
    }

    /// Maps text to class indices, rejecting the first unknown character.
    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        text.chars()
            .map(|c| self.index_of(c).ok_or(Error::UnknownCharacter(c)))
            .collect()
    }

    /// Inverse of [`Alphabet::encode`]; blanks and out-of-range indices are skipped.
    pub fn decode(&self, indices: &[usize]) -> String {
        indices.iter().filter_map(|&i| self.symbol(i)).collect()
    }

    /// First character of `text` outside the alphabet, if any.
    pub fn first_unknown(&self, text: &str) -> Option<char> {
        text.chars().find(|&c| !self.contains(c))
    }
}

/// Row-major one-hot matrix, one row per character, `alphabet.size()` columns.
#[derive(Clone, Debug, PartialEq)]
pub struct OneHot {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl OneHot {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, k: usize) -> &[f32] {
        &self.data[k * self.cols..(k + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }
}

/// One-hot encodes a transcript over `alphabet` (text matrix of the text condition).
pub fn encode_label(text: &str, alphabet: &Alphabet) -> Result<OneHot> {
    if text.is_empty() {
        return Err(Error::EmptyText);
    }
    let indices = alphabet.encode(text)?;
    let cols = alphabet.size();
    let mut data = vec![0.0; indices.len() * cols];
    for (row, &idx) in indices.iter().enumerate() {
        data[row * cols + idx] = 1.0;
    }
    Ok(OneHot {
        rows: indices.len(),
        cols,
        data,
    })
}
