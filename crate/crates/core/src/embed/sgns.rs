//! Skip-gram with negative sampling.
//!
//! Every centre word predicts the words inside a randomly shrunk window around
//! it against `negatives` noise words drawn from the unigram^0.75
//! distribution. Plain SGD, learning rate decaying linearly with training
//! progress. Input vectors are the returned embedding.
//!
//! Input vectors are initialised per word from `(seed, word)`, so two runs
//! that share a seed start every shared word from the same point no matter
//! how their vocabularies are ordered.

use std::sync::atomic::{AtomicU32, Ordering};

use rand::Rng as _;
use rand_distr::{Distribution, WeightedAliasIndex};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus_synth::Corpus;
use crate::error::{Error, Result};
use crate::numeric::Tensor;
use crate::seed;

use super::set::{EmbeddingMeta, EmbeddingSet, DEFAULT_DIM};
use super::vocab::Vocabulary;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgnsParams {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub min_count: usize,
    pub subsample_t: f64,
    /// 1 is bit-reproducible. More threads run lock-free (Hogwild) updates
    /// whose interleaving, and therefore the result, varies run to run.
    #[serde(default = "one")]
    pub threads: usize,
}

fn one() -> usize {
    1
}

/// word2vec-style defaults: window 5, 5 negatives, 5 epochs, lr 0.025 → 1e-4.
impl Default for SgnsParams {
    fn default() -> Self {
        Self {
            dim: DEFAULT_DIM,
            window: 5,
            negatives: 5,
            epochs: 5,
            lr_start: 0.025,
            lr_end: 1e-4,
            min_count: 1,
            subsample_t: 0.0,
            threads: 1,
        }
    }
}

impl SgnsParams {
    /// Shorter, gentler training for the 100-token synthetic corpora: 2 epochs from lr 0.01.
    pub fn synthetic() -> Self {
        Self {
            epochs: 2,
            lr_start: 0.01,
            ..Self::default()
        }
    }

    pub fn real_text() -> Self {
        Self {
            min_count: 5,
            subsample_t: 1e-3,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.window == 0 || self.negatives == 0 || self.threads == 0 {
            return Err(Error::InvalidConfig(
                "dim, window, negatives and threads must be at least 1".into(),
            ));
        }
        if !(self.lr_end > 0.0 && self.lr_start >= self.lr_end) {
            return Err(Error::InvalidConfig("need lr_start >= lr_end > 0".into()));
        }
        if self.subsample_t < 0.0 {
            return Err(Error::InvalidConfig("subsample_t must be non-negative".into()));
        }
        Ok(())
    }
}

/// Weight storage seen by the update kernel.
trait Weights {
    fn dot(&self, w: usize, c: usize, dim: usize) -> f32;
    /// `acc += g·C[c]`, then `C[c] += g·W[w]`.
    fn update_context(&mut self, w: usize, c: usize, g: f32, acc: &mut [f32]);
    fn add_input(&mut self, w: usize, acc: &[f32]);
}

struct Owned<'a> {
    input: &'a mut [f32],
    output: &'a mut [f32],
}

impl Weights for Owned<'_> {
    #[inline]
    fn dot(&self, w: usize, c: usize, dim: usize) -> f32 {
        dot(
            &self.input[w * dim..(w + 1) * dim],
            &self.output[c * dim..(c + 1) * dim],
        )
    }

    #[inline]
    fn update_context(&mut self, w: usize, c: usize, g: f32, acc: &mut [f32]) {
        let dim = acc.len();
        let a = &self.input[w * dim..(w + 1) * dim];
        let b = &mut self.output[c * dim..(c + 1) * dim];
        for ((s, bv), &av) in acc.iter_mut().zip(b.iter_mut()).zip(a) {
            *s += g * *bv;
            *bv += g * av;
        }
    }

    #[inline]
    fn add_input(&mut self, w: usize, acc: &[f32]) {
        let dim = acc.len();
        for (a, &s) in self.input[w * dim..(w + 1) * dim].iter_mut().zip(acc) {
            *a += s;
        }
    }
}

/// Relaxed atomics: racy by design but free of undefined behaviour.
#[derive(Clone, Copy)]
struct Shared<'a> {
    input: &'a [AtomicU32],
    output: &'a [AtomicU32],
}

#[inline]
fn ld(a: &AtomicU32) -> f32 {
    f32::from_bits(a.load(Ordering::Relaxed))
}

#[inline]
fn st(a: &AtomicU32, v: f32) {
    a.store(v.to_bits(), Ordering::Relaxed)
}

impl Weights for Shared<'_> {
    fn dot(&self, w: usize, c: usize, dim: usize) -> f32 {
        (0..dim)
            .map(|k| ld(&self.input[w * dim + k]) * ld(&self.output[c * dim + k]))
            .sum()
    }

    fn update_context(&mut self, w: usize, c: usize, g: f32, acc: &mut [f32]) {
        let dim = acc.len();
        for (k, s) in acc.iter_mut().enumerate() {
            let cv = &self.output[c * dim + k];
            let old = ld(cv);
            *s += g * old;
            st(cv, old + g * ld(&self.input[w * dim + k]));
        }
    }

    fn add_input(&mut self, w: usize, acc: &[f32]) {
        let dim = acc.len();
        for (k, &s) in acc.iter().enumerate() {
            let a = &self.input[w * dim + k];
            st(a, ld(a) + s);
        }
    }
}

/// Eight independent accumulators so the reduction vectorises.
#[inline]
fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0f32; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f32 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    acc.iter().sum::<f32>() + tail
}

#[inline]
fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

struct Schedule {
    lr_start: f64,
    lr_end: f64,
    total: f64,
}

impl Schedule {
    fn at(&self, done: usize) -> f32 {
        let p = (done as f64 / self.total).min(1.0);
        (self.lr_start - (self.lr_start - self.lr_end) * p) as f32
    }
}

struct Kernel<'a> {
    params: &'a SgnsParams,
    noise: &'a WeightedAliasIndex<f64>,
    keep_prob: &'a [f64],
    schedule: &'a Schedule,
}

impl Kernel<'_> {
    /// Trains on one token span; `done` is the global token counter at its start.
    fn run(&self, span: &[u32], done: usize, weights: &mut impl Weights, rng: &mut seed::Rng) {
        let dim = self.params.dim;
        let mut acc = vec![0f32; dim];
        let sentence: Vec<u32> = if self.params.subsample_t > 0.0 {
            span.iter()
                .copied()
                .filter(|&w| rng.gen::<f64>() < self.keep_prob[w as usize])
                .collect()
        } else {
            span.to_vec()
        };
        let n = sentence.len();
        let scale = span.len() as f64 / n.max(1) as f64;
        for pos in 0..n {
            let lr = self.schedule.at(done + (pos as f64 * scale) as usize);
            let shrink = rng.gen_range(0..self.params.window);
            let reach = self.params.window - shrink;
            let center = sentence[pos] as usize;
            let lo = pos.saturating_sub(reach);
            let hi = (pos + reach).min(n - 1);
            for ctx_pos in lo..=hi {
                if ctx_pos == pos {
                    continue;
                }
                let context = sentence[ctx_pos] as usize;
                acc.iter_mut().for_each(|a| *a = 0.0);
                for k in 0..=self.params.negatives {
                    let (target, label) = if k == 0 {
                        (context, 1.0)
                    } else {
                        let t = self.noise.sample(rng);
                        if t == context {
                            continue;
                        }
                        (t, 0.0)
                    };
                    let f = weights.dot(center, target, dim);
                    let g = (label - sigmoid(f)) * lr;
                    weights.update_context(center, target, g, &mut acc);
                }
                weights.add_input(center, &acc);
            }
        }
    }
}

fn init_input(vocab: &Vocabulary, dim: usize, seed: u64) -> Vec<f32> {
    let bound = 0.5 / dim as f32;
    let mut data = Vec::with_capacity(vocab.len() * dim);
    for w in vocab.words() {
        let mut rng = seed::rng(seed::derive(seed, w, 0));
        data.extend((0..dim).map(|_| rng.gen_range(-bound..bound)));
    }
    data
}

fn encode(corpus: &Corpus, vocab: &Vocabulary) -> Vec<Vec<u32>> {
    corpus
        .lines
        .iter()
        .map(|line| {
            line.iter()
                .filter_map(|t| vocab.get(t).map(|i| i as u32))
                .collect::<Vec<_>>()
        })
        .filter(|l| !l.is_empty())
        .collect()
}

/// Splits every line into at most `parts` contiguous spans of near-equal size.
fn spans(lines: &[Vec<u32>], parts: usize) -> Vec<(&[u32], usize)> {
    let total: usize = lines.iter().map(Vec::len).sum();
    let target = total.div_ceil(parts.max(1)).max(1);
    let mut out = Vec::new();
    let mut offset = 0;
    for line in lines {
        for chunk in line.chunks(target) {
            out.push((chunk, offset));
            offset += chunk.len();
        }
    }
    out
}

pub fn train_sgns(corpus: &Corpus, vocab: &Vocabulary, params: &SgnsParams, seed: u64) -> Result<EmbeddingSet> {
    params.validate()?;
    if vocab.is_empty() {
        return Err(Error::EmptyVocabulary {
            min_count: params.min_count,
        });
    }
    let dim = params.dim;
    let lines = encode(corpus, vocab);
    let n_tokens: usize = lines.iter().map(Vec::len).sum();
    let mut input = init_input(vocab, dim, seed);
    let mut output = vec![0f32; vocab.len() * dim];

    let weights: Vec<f64> = vocab.counts().iter().map(|&c| (c.max(1) as f64).powf(0.75)).collect();
    let noise = WeightedAliasIndex::new(weights).map_err(|e| Error::Data(format!("noise distribution: {e}")))?;
    let total_count: f64 = vocab.counts().iter().map(|&c| c as f64).sum::<f64>().max(1.0);
    let keep_prob: Vec<f64> = vocab
        .counts()
        .iter()
        .map(|&c| {
            if params.subsample_t <= 0.0 || c == 0 {
                1.0
            } else {
                let f = c as f64;
                let t = params.subsample_t * total_count;
                ((f / t).sqrt() + 1.0) * t / f
            }
        })
        .collect();
    let schedule = Schedule {
        lr_start: params.lr_start,
        lr_end: params.lr_end,
        total: (params.epochs * n_tokens).max(1) as f64,
    };
    let kernel = Kernel {
        params,
        noise: &noise,
        keep_prob: &keep_prob,
        schedule: &schedule,
    };

    for epoch in 0..params.epochs {
        let base = epoch * n_tokens;
        if params.threads == 1 {
            let mut rng = seed::rng(seed::derive(seed, "sgns-epoch", epoch as u64));
            let mut w = Owned {
                input: &mut input,
                output: &mut output,
            };
            let mut done = base;
            for line in &lines {
                kernel.run(line, done, &mut w, &mut rng);
                done += line.len();
            }
        } else {
            let shared_in: Vec<AtomicU32> = input.iter().map(|v| AtomicU32::new(v.to_bits())).collect();
            let shared_out: Vec<AtomicU32> = output.iter().map(|v| AtomicU32::new(v.to_bits())).collect();
            let view = Shared {
                input: &shared_in,
                output: &shared_out,
            };
            spans(&lines, params.threads)
                .into_par_iter()
                .enumerate()
                .for_each(|(i, (span, off))| {
                    let mut rng = seed::rng(seed::derive(seed, "sgns-span", (epoch * 1_000_003 + i) as u64));
                    let mut w = view;
                    kernel.run(span, base + off, &mut w, &mut rng);
                });
            input = shared_in.iter().map(ld).collect();
            output = shared_out.iter().map(ld).collect();
        }
        if input.iter().any(|v| !v.is_finite()) || output.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericDivergence(format!(
                "SGNS parameters became non-finite in epoch {epoch}"
            )));
        }
    }

    let matrix = Tensor::from_vec(vocab.len(), dim, input)?;
    EmbeddingSet::new(
        vocab.clone(),
        matrix,
        EmbeddingMeta {
            seed,
            corpus_id: String::new(),
            trainer: Some(*params),
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::build_vocab;

    fn toy_corpus() -> Corpus {
        Corpus::parse("a b c a b c a b c d e f d e f d e f\n")
    }

    #[test]
    fn shape_and_finiteness() {
        let c = toy_corpus();
        let v = build_vocab(&c, 1).unwrap();
        let e = train_sgns(&c, &v, &SgnsParams::default(), 3).unwrap();
        assert_eq!(e.matrix.shape(), [6, 50]);
        assert!(e.matrix.is_finite());
    }

    #[test]
    fn single_thread_is_deterministic() {
        let c = toy_corpus();
        let v = build_vocab(&c, 1).unwrap();
        let p = SgnsParams::default();
        let a = train_sgns(&c, &v, &p, 9).unwrap();
        let b = train_sgns(&c, &v, &p, 9).unwrap();
        assert_eq!(a.matrix, b.matrix);
        let other = train_sgns(&c, &v, &p, 10).unwrap();
        assert_ne!(a.matrix, other.matrix);
    }

    #[test]
    fn parallel_mode_runs() {
        let c = toy_corpus();
        let v = build_vocab(&c, 1).unwrap();
        let p = SgnsParams {
            threads: 3,
            ..SgnsParams::default()
        };
        let e = train_sgns(&c, &v, &p, 1).unwrap();
        assert!(e.matrix.is_finite());
    }

    #[test]
    fn word_init_depends_on_word_not_position() {
        let v1 = Vocabulary::from_words(vec!["x".into(), "y".into()]).unwrap();
        let v2 = Vocabulary::from_words(vec!["y".into(), "x".into()]).unwrap();
        let a = init_input(&v1, 4, 5);
        let b = init_input(&v2, 4, 5);
        assert_eq!(a[..4], b[4..]);
    }

    #[test]
    fn invalid_params_rejected() {
        let c = toy_corpus();
        let v = build_vocab(&c, 1).unwrap();
        let p = SgnsParams {
            lr_end: 1.0,
            ..SgnsParams::default()
        };
        assert!(matches!(train_sgns(&c, &v, &p, 0), Err(Error::InvalidConfig(_))));
    }
}
