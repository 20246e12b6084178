//! Normalization, URL splitting and character tri-gram word hashing.
//!
//! Words are wrapped in `#` boundary markers and decomposed into all
//! consecutive character tri-grams. The alphabet is closed (`#`, `a`-`z`,
//! `0`-`9`), so every tri-gram is enumerated to a unique index in
//! `[0, 37^3)` and there are no hash collisions.

use std::sync::Arc;

use crate::autodiff::SparseVector;
use crate::error::{Error, Result};

/// Number of symbols: the boundary marker, 26 letters and 10 digits.
pub const ALPHABET_SIZE: usize = 37;
/// `37^3` tri-gram dimensions.
pub const TRIGRAM_DIM: usize = ALPHABET_SIZE * ALPHABET_SIZE * ALPHABET_SIZE;
pub const BOUNDARY: char = '#';

/// The tri-gram index space over the closed 37-symbol alphabet.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TrigramSpace;

impl TrigramSpace {
    pub fn dim(&self) -> usize {
        TRIGRAM_DIM
    }

    /// Position of a symbol in the alphabet: `#` = 0, letters 1..=26, digits 27..=36.
    pub fn ord(&self, c: char) -> Option<usize> {
        match c {
            BOUNDARY => Some(0),
            'a'..='z' => Some(c as usize - 'a' as usize + 1),
            '0'..='9' => Some(c as usize - '0' as usize + 27),
            _ => None,
        }
    }

    pub fn symbol(&self, ord: usize) -> Option<char> {
        match ord {
            0 => Some(BOUNDARY),
            1..=26 => char::from_u32('a' as u32 + ord as u32 - 1),
            27..=36 => char::from_u32('0' as u32 + ord as u32 - 27),
            _ => None,
        }
    }

    pub fn index(&self, c0: char, c1: char, c2: char) -> Option<usize> {
        let n = ALPHABET_SIZE;
        Some(self.ord(c0)? * n * n + self.ord(c1)? * n + self.ord(c2)?)
    }

    /// Inverse of [`TrigramSpace::index`].
    pub fn trigram(&self, index: usize) -> Option<[char; 3]> {
        if index >= TRIGRAM_DIM {
            return None;
        }
        let n = ALPHABET_SIZE;
        Some([
            self.symbol(index / (n * n))?,
            self.symbol(index / n % n)?,
            self.symbol(index % n)?,
        ])
    }

    /// Sparse tri-gram count vector of a nonempty alphanumeric word.
    pub fn hash_word(&self, word: &str) -> Result<SparseVector> {
        if word.is_empty() {
            return Err(Error::data("cannot hash an empty word"));
        }
        let mut chars = Vec::with_capacity(word.len() + 2);
        chars.push(BOUNDARY);
        for c in word.chars() {
            if c == BOUNDARY || self.ord(c).is_none() {
                return Err(Error::data(format!(
                    "word {word:?} has characters outside the alphabet"
                )));
            }
            chars.push(c);
        }
        chars.push(BOUNDARY);
        let mut indices: Vec<u32> = chars
            .windows(3)
            .map(|w| self.index(w[0], w[1], w[2]).unwrap() as u32)
            .collect();
        indices.sort_unstable();
        let mut entries: Vec<(u32, f64)> = Vec::new();
        for i in indices {
            match entries.last_mut() {
                Some((j, v)) if *j == i => *v += 1.0,
                _ => entries.push((i, 1.0)),
            }
        }
        SparseVector::new(TRIGRAM_DIM, entries)
    }
}

/// Normalized tokens, possibly truncated to a per-field cap.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TokenSequence {
    pub tokens: Vec<String>,
    /// Number of real tokens after any truncation.
    pub true_length: usize,
    pub max_length: Option<usize>,
}

impl TokenSequence {
    fn from_tokens(tokens: Vec<String>) -> Self {
        TokenSequence {
            true_length: tokens.len(),
            tokens,
            max_length: None,
        }
    }

    pub fn truncated(mut self, max_length: usize) -> Self {
        self.tokens.truncate(max_length);
        self.true_length = self.tokens.len();
        self.max_length = Some(max_length);
        self
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn join(&self) -> String {
        self.tokens.join(" ")
    }
}

/// Lowercases and splits on every run of characters outside `[a-z0-9]`.
pub fn normalize(text: &str) -> TokenSequence {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        let c = c.to_ascii_lowercase();
        if c.is_ascii_lowercase() || c.is_ascii_digit() {
            current.push(c);
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    TokenSequence::from_tokens(tokens)
}

/// Splits a URL on every non-alphanumeric character (scheme separators,
/// dots, slashes and hyphens all break tokens).
pub fn split_url(url: &str) -> TokenSequence {
    normalize(url)
}

/// A fixed-length sequence of hashed words followed by empty padding vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedText {
    pub vectors: Arc<[SparseVector]>,
    pub true_length: usize,
}

impl EncodedText {
    /// All-padding sequence of the given length.
    pub fn padding(max_length: usize) -> Self {
        EncodedText {
            vectors: vec![SparseVector::empty(TRIGRAM_DIM); max_length].into(),
            true_length: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn is_padding(&self) -> bool {
        self.true_length == 0
    }
}

/// Hashes the first `max_length` tokens and pads to exactly `max_length`.
pub fn encode_tokens(
    tokens: &TokenSequence,
    max_length: usize,
    space: &TrigramSpace,
) -> EncodedText {
    let mut vectors: Vec<SparseVector> = tokens
        .tokens
        .iter()
        .take(max_length)
        .map(|w| {
            space
                .hash_word(w)
                .expect("normalized tokens are alphanumeric")
        })
        .collect();
    let true_length = vectors.len();
    vectors.resize(max_length, SparseVector::empty(space.dim()));
    EncodedText {
        vectors: vectors.into(),
        true_length,
    }
}

pub fn encode_text(text: &str, max_length: usize, space: &TrigramSpace) -> EncodedText {
    encode_tokens(&normalize(text), max_length, space)
}
