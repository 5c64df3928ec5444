use std::collections::HashMap;

use crate::corpus_synth::Corpus;
use crate::error::{Error, Result};

/// Ordered word list with occurrence counts.
///
/// Vocabularies built from a corpus are in canonical order: descending count,
/// ties broken lexicographically. Vocabularies read from embedding files keep
/// the file's order and carry zero counts.
#[derive(Clone, Debug, Default)]
pub struct Vocabulary {
    words: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, usize>,
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.words == other.words && self.counts == other.counts
    }
}

impl Vocabulary {
    pub fn new(words: Vec<String>, counts: Vec<u64>) -> Result<Self> {
        if words.len() != counts.len() {
            return Err(Error::Shape("vocabulary words and counts differ in length".into()));
        }
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate vocabulary word {w:?}")));
            }
        }
        Ok(Self { words, counts, index })
    }

    pub fn from_words(words: Vec<String>) -> Result<Self> {
        let n = words.len();
        Self::new(words, vec![0; n])
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn word(&self, i: usize) -> &str {
        &self.words[i]
    }

    pub fn get(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    /// Permutation that sorts this vocabulary canonically.
    pub fn canonical_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| {
            self.counts[b]
                .cmp(&self.counts[a])
                .then_with(|| self.words[a].cmp(&self.words[b]))
        });
        order
    }

    pub fn canonicalized(&self) -> Self {
        let order = self.canonical_order();
        let words = order.iter().map(|&i| self.words[i].clone()).collect();
        let counts = order.iter().map(|&i| self.counts[i]).collect();
        Self::new(words, counts).expect("permutation keeps words unique")
    }
}

/// Words occurring at least `min_count` times, canonically ordered.
pub fn build_vocab(corpus: &Corpus, min_count: usize) -> Result<Vocabulary> {
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for t in corpus.tokens() {
        *counts.entry(t).or_default() += 1;
    }
    let (words, counts): (Vec<String>, Vec<u64>) = counts
        .into_iter()
        .filter(|&(_, c)| c >= min_count as u64)
        .map(|(w, c)| (w.to_string(), c))
        .unzip();
    if words.is_empty() {
        return Err(Error::EmptyVocabulary { min_count });
    }
    Ok(Vocabulary::new(words, counts)?.canonicalized())
}
