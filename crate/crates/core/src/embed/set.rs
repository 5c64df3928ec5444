//! The embedding matrix type and its text / binary file formats.
//!
//! Text: a header line `N d`, then `N` lines `word v1 … vd`.
//! Binary: the same header line, then per row the word, one space, `d`
//! little-endian `f32`s and a newline (the classic word2vec `.bin` layout).

use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsio;
use crate::numeric::Tensor;

use super::sgns::SgnsParams;
use super::vocab::Vocabulary;

pub const DEFAULT_DIM: usize = 50;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMeta {
    pub seed: u64,
    pub corpus_id: String,
    pub trainer: Option<SgnsParams>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet {
    pub vocab: Vocabulary,
    pub matrix: Tensor<f32>,
    pub meta: EmbeddingMeta,
}

impl EmbeddingSet {
    pub fn new(vocab: Vocabulary, matrix: Tensor<f32>, meta: EmbeddingMeta) -> Result<Self> {
        if matrix.rows() != vocab.len() {
            return Err(Error::Shape(format!(
                "{} embedding rows for {} words",
                matrix.rows(),
                vocab.len()
            )));
        }
        if !matrix.is_finite() {
            return Err(Error::NumericDivergence(
                "embedding matrix has non-finite entries".into(),
            ));
        }
        Ok(Self { vocab, matrix, meta })
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn words(&self) -> &[String] {
        self.vocab.words()
    }

    pub fn vector(&self, word: &str) -> Option<&[f32]> {
        self.vocab.get(word).map(|i| self.matrix.row(i))
    }

    /// Same words, new matrix.
    pub fn with_matrix(&self, matrix: Tensor<f32>) -> Result<Self> {
        Self::new(self.vocab.clone(), matrix, self.meta.clone())
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.len(), self.dim());
        for (i, w) in self.words().iter().enumerate() {
            out.push_str(w);
            for v in self.matrix.row(i) {
                out.push(' ');
                // Shortest representation that parses back to the same f32.
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }

    pub fn to_binary(&self) -> Vec<u8> {
        let mut out = format!("{} {}\n", self.len(), self.dim()).into_bytes();
        for (i, w) in self.words().iter().enumerate() {
            out.extend_from_slice(w.as_bytes());
            out.push(b' ');
            for v in self.matrix.row(i) {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.push(b'\n');
        }
        out
    }

    pub fn save(&self, path: &Path, binary: bool) -> Result<()> {
        if binary {
            fsio::atomic_write(path, &self.to_binary())
        } else {
            fsio::atomic_write(path, self.to_text().as_bytes())
        }
    }

    pub fn load(path: &Path, binary: bool) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = BufReader::new(file);
        if binary {
            parse_binary(&mut reader, path)
        } else {
            parse_text(&mut reader, path)
        }
    }

    pub fn from_text(text: &str) -> Result<Self> {
        parse_text(&mut text.as_bytes(), Path::new("<memory>"))
    }
}

fn parse_header(line: &str, path: &Path) -> Result<(usize, usize)> {
    let mut it = line.split_whitespace();
    let parse = |s: Option<&str>| s.and_then(|s| s.parse::<usize>().ok());
    match (parse(it.next()), parse(it.next()), it.next()) {
        (Some(n), Some(d), None) if d > 0 => Ok((n, d)),
        _ => Err(Error::format(path, format!("malformed header {line:?}"))),
    }
}

fn finish(words: Vec<String>, data: Vec<f32>, n: usize, d: usize, path: &Path) -> Result<EmbeddingSet> {
    let vocab = Vocabulary::from_words(words).map_err(|e| Error::format(path, e.to_string()))?;
    let matrix = Tensor::from_vec(n, d, data)?;
    EmbeddingSet::new(vocab, matrix, EmbeddingMeta::default()).map_err(|e| Error::format(path, e.to_string()))
}

fn parse_text(reader: &mut impl BufRead, path: &Path) -> Result<EmbeddingSet> {
    let mut lines = reader.lines();
    let header = match lines.next() {
        Some(l) => l.map_err(|e| Error::io(path, e))?,
        None => return Err(Error::format(path, "empty file")),
    };
    let (n, d) = parse_header(&header, path)?;
    let mut words = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * d);
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        if words.len() == n {
            return Err(Error::format(path, format!("more than {n} rows")));
        }
        let mut it = line.split(' ');
        let word = it.next().unwrap_or_default().to_string();
        let before = data.len();
        for tok in it.filter(|t| !t.is_empty()) {
            let v: f32 = tok
                .parse()
                .map_err(|_| Error::format(path, format!("line {}: bad float {tok:?}", i + 2)))?;
            data.push(v);
        }
        if data.len() - before != d {
            return Err(Error::format(
                path,
                format!("line {}: {} values under header dim {d}", i + 2, data.len() - before),
            ));
        }
        words.push(word);
    }
    if words.len() != n {
        return Err(Error::format(
            path,
            format!("header says {n} rows, found {}", words.len()),
        ));
    }
    finish(words, data, n, d, path)
}

fn parse_binary(reader: &mut impl BufRead, path: &Path) -> Result<EmbeddingSet> {
    let mut header = String::new();
    reader.read_line(&mut header).map_err(|e| Error::io(path, e))?;
    let (n, d) = parse_header(header.trim_end(), path)?;
    let mut words = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * d);
    let mut buf = vec![0u8; 4 * d];
    for row in 0..n {
        let mut word = Vec::new();
        reader.read_until(b' ', &mut word).map_err(|e| Error::io(path, e))?;
        if word.pop() != Some(b' ') {
            return Err(Error::format(path, format!("row {row}: truncated word")));
        }
        reader
            .read_exact(&mut buf)
            .map_err(|_| Error::format(path, format!("row {row}: fewer than {d} values")))?;
        data.extend(
            buf.chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])),
        );
        let mut nl = [0u8; 1];
        if reader.read_exact(&mut nl).is_err() || nl[0] != b'\n' {
            return Err(Error::format(
                path,
                format!("row {row}: row length does not match dim {d}"),
            ));
        }
        let word = String::from_utf8(word).map_err(|_| Error::format(path, "word is not UTF-8"))?;
        words.push(word);
    }
    let mut rest = Vec::new();
    reader.read_to_end(&mut rest).map_err(|e| Error::io(path, e))?;
    if !rest.is_empty() {
        return Err(Error::format(path, "trailing data after last row"));
    }
    finish(words, data, n, d, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> EmbeddingSet {
        let vocab = Vocabulary::from_words(vec!["a".into(), "bb".into()]).unwrap();
        let m = Tensor::from_vec(2, 3, vec![0.1, -2.5e-8, 3.0, 1.0 / 3.0, 0.0, -7.25]).unwrap();
        EmbeddingSet::new(vocab, m, EmbeddingMeta::default()).unwrap()
    }

    #[test]
    fn text_round_trip_is_exact() {
        let e = sample();
        let back = EmbeddingSet::from_text(&e.to_text()).unwrap();
        assert_eq!(back.words(), e.words());
        assert_eq!(back.matrix, e.matrix);
    }

    #[test]
    fn header_line() {
        assert!(sample().to_text().starts_with("2 3\n"));
    }

    #[test]
    fn short_row_is_format_error() {
        let text = "1 3\nw 1 2\n";
        assert!(matches!(EmbeddingSet::from_text(text), Err(Error::Format { .. })));
        assert!(matches!(EmbeddingSet::from_text("x y\n"), Err(Error::Format { .. })));
        assert!(matches!(
            EmbeddingSet::from_text("2 1\nw 1\n"),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn binary_round_trip_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.bin");
        let e = sample();
        e.save(&p, true).unwrap();
        let back = EmbeddingSet::load(&p, true).unwrap();
        assert_eq!(back.words(), e.words());
        assert_eq!(back.matrix, e.matrix);

        let mut bytes = e.to_binary();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&p, bytes).unwrap();
        assert!(matches!(EmbeddingSet::load(&p, true), Err(Error::Format { .. })));
    }

    #[test]
    fn rejects_non_finite() {
        let vocab = Vocabulary::from_words(vec!["a".into()]).unwrap();
        let m = Tensor::from_vec(1, 1, vec![f32::NAN]).unwrap();
        assert!(EmbeddingSet::new(vocab, m, EmbeddingMeta::default()).is_err());
    }
}
