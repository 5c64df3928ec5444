//! Frozen-embedding text classification: mean-pooled embeddings, one hidden
//! ReLU layer, softmax output. Also builds a synthetic labelled task whose
//! label tokens swap graph neighbourhoods under drift.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus_synth::{token_name, walk_nodes, CooccurrenceGraph};
use crate::data_ingest::{tokenize_text, ReviewRecord};
use crate::embed::EmbeddingSet;
use crate::error::{Error, Result};
use crate::fsio;
use crate::numeric::{AdamConfig, Linear, ParamStore, Tape, Tensor};
use crate::seed;

pub const TRAIN_FRACTION: f64 = 0.8;
pub const MAX_SEQ_LEN: usize = 150;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub tokens: Vec<String>,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub labels: Vec<String>,
    pub examples: Vec<LabeledExample>,
}

#[derive(Deserialize)]
struct ExampleLine {
    #[serde(default)]
    tokens: Option<Vec<String>>,
    #[serde(default)]
    text: Option<String>,
    label: serde_json::Value,
}

fn label_string(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

impl LabeledDataset {
    pub fn validate(&self) -> Result<()> {
        if let Some(e) = self.examples.iter().find(|e| e.label >= self.labels.len()) {
            return Err(Error::Data(format!(
                "label index {} outside the {} labels",
                e.label,
                self.labels.len()
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Builds a dataset from `(tokens, label name)` pairs; label indices follow sorted names.
    pub fn from_pairs(pairs: Vec<(Vec<String>, String)>) -> Self {
        let labels: Vec<String> = pairs
            .iter()
            .map(|(_, l)| l.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let examples = pairs
            .into_iter()
            .map(|(tokens, l)| LabeledExample {
                tokens,
                label: labels.binary_search(&l).expect("label collected above"),
            })
            .collect();
        Self { labels, examples }
    }

    /// Labelled reviews, tokenised; unlabelled records are skipped.
    pub fn from_records(records: &[ReviewRecord]) -> Self {
        Self::from_pairs(
            records
                .iter()
                .filter_map(|r| Some((tokenize_text(&r.text), r.label_name()?)))
                .collect(),
        )
    }

    /// JSON lines with `label` and either `tokens` or raw `text`.
    pub fn parse_jsonl(text: &str, path: &Path) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let ex: ExampleLine =
                serde_json::from_str(line).map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))?;
            let tokens = match (ex.tokens, ex.text) {
                (Some(t), _) => t,
                (None, Some(text)) => tokenize_text(&text),
                (None, None) => return Err(Error::format(path, format!("line {}: needs tokens or text", i + 1))),
            };
            pairs.push((tokens, label_string(&ex.label)));
        }
        Ok(Self::from_pairs(pairs))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse_jsonl(&fsio::read_to_string(path)?, path)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.examples {
            let line = serde_json::json!({ "tokens": e.tokens, "label": self.labels[e.label] });
            out.push_str(&line.to_string());
            out.push('\n');
        }
        out
    }

    /// Seeded shuffle, then the first `round(0.8·n)` examples train and the rest test.
    pub fn split(&self, seed: u64) -> (Self, Self) {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut seed::rng(seed::derive(seed, "split", 0)));
        let n_train = (TRAIN_FRACTION * self.len() as f64).round() as usize;
        let pick = |idx: &[usize]| Self {
            labels: self.labels.clone(),
            examples: idx.iter().map(|&i| self.examples[i].clone()).collect(),
        };
        (pick(&order[..n_train]), pick(&order[n_train..]))
    }

    /// Copy with labels permuted at random, destroying any signal.
    pub fn label_shuffled(&self, seed: u64) -> Self {
        let mut labels: Vec<usize> = self.examples.iter().map(|e| e.label).collect();
        labels.shuffle(&mut seed::rng(seed::derive(seed, "label_shuffle", 0)));
        Self {
            labels: self.labels.clone(),
            examples: self
                .examples
                .iter()
                .zip(labels)
                .map(|(e, label)| LabeledExample {
                    tokens: e.tokens.clone(),
                    label,
                })
                .collect(),
        }
    }
}

/// Mean of the embeddings of the first `max_len` tokens, skipping unknown
/// tokens; `None` when no token is known.
pub fn pool(emb: &EmbeddingSet, tokens: &[String], max_len: usize) -> Option<Vec<f32>> {
    let mut acc = vec![0.0f64; emb.dim()];
    let mut n = 0usize;
    for t in tokens.iter().take(max_len) {
        if let Some(v) = emb.vector(t) {
            for (a, &x) in acc.iter_mut().zip(v) {
                *a += x as f64;
            }
            n += 1;
        }
    }
    (n > 0).then(|| acc.into_iter().map(|a| (a / n as f64) as f32).collect())
}

fn pool_all(emb: &EmbeddingSet, data: &LabeledDataset, max_len: usize) -> (Tensor<f32>, Vec<usize>, usize) {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for e in &data.examples {
        if let Some(p) = pool(emb, &e.tokens, max_len) {
            rows.extend(p);
            labels.push(e.label);
        }
    }
    let dropped = data.len() - labels.len();
    let features = Tensor::from_vec(labels.len(), emb.dim(), rows).expect("pooled rows have embedding width");
    (features, labels, dropped)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            epochs: 100,
            batch: 64,
            lr: 1e-3,
            max_len: MAX_SEQ_LEN,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Classifier {
    pub params: ParamStore<f32>,
    pub fc1: Linear,
    pub fc2: Linear,
    pub max_len: usize,
}

impl Classifier {
    fn logits(&self, tape: &mut Tape<f32>, x: Tensor<f32>) -> crate::numeric::Var {
        let x = tape.constant(x);
        let h = self.fc1.forward(tape, &self.params, x);
        let h = tape.relu(h);
        self.fc2.forward(tape, &self.params, h)
    }

    fn predict_features(&self, x: Tensor<f32>) -> Vec<usize> {
        let mut tape = Tape::new();
        let out = self.logits(&mut tape, x);
        let logits = tape.value(out);
        (0..logits.rows())
            .map(|r| {
                let row = logits.row(r);
                (0..row.len()).fold(0, |best, j| if row[j] > row[best] { j } else { best })
            })
            .collect()
    }

    /// Predicted label per example; `None` where no token is in the vocabulary.
    pub fn predict(&self, emb: &EmbeddingSet, examples: &[Vec<String>]) -> Vec<Option<usize>> {
        examples
            .iter()
            .map(|t| {
                let p = pool(emb, t, self.max_len)?;
                let x = Tensor::from_vec(1, p.len(), p).expect("pooled row");
                Some(self.predict_features(x)[0])
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct ClassifierOutcome {
    pub classifier: Classifier,
    pub accuracy: f64,
    pub n_test: usize,
    pub n_train: usize,
    pub dropped: usize,
}

/// Splits `data` 80/20, trains the classifier on frozen `emb` with Adam and
/// cross-entropy, and reports held-out accuracy. Examples with no known token
/// are dropped from both sides.
pub fn train_classifier(
    emb: &EmbeddingSet,
    data: &LabeledDataset,
    cfg: &ClassifierConfig,
) -> Result<ClassifierOutcome> {
    data.validate()?;
    if cfg.batch == 0 || cfg.hidden == 0 {
        return Err(Error::InvalidConfig(
            "classifier batch and hidden width must be positive".into(),
        ));
    }
    let (train, test) = data.split(cfg.seed);
    let (x_train, y_train, drop_train) = pool_all(emb, &train, cfg.max_len);
    let (x_test, y_test, drop_test) = pool_all(emb, &test, cfg.max_len);
    if drop_train + drop_test > 0 {
        log::warn!(
            "dropped {} examples with no in-vocabulary token",
            drop_train + drop_test
        );
    }
    if y_train.is_empty() {
        return Err(Error::Data("no training example has an in-vocabulary token".into()));
    }
    let n_classes = data.labels.len().max(2);
    let mut rng = seed::rng(seed::derive(cfg.seed, "classifier", 0));
    let mut params = ParamStore::new();
    let fc1 = Linear::new(&mut params, "fc1", emb.dim(), cfg.hidden, true, &mut rng);
    let fc2 = Linear::new(&mut params, "fc2", cfg.hidden, n_classes, true, &mut rng);
    let mut clf = Classifier {
        params,
        fc1,
        fc2,
        max_len: cfg.max_len,
    };
    let adam = AdamConfig::default();
    let mut order: Vec<usize> = (0..y_train.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for (b, batch) in order.chunks(cfg.batch).enumerate() {
            let x = x_train.gather_rows(batch);
            let y: Vec<usize> = batch.iter().map(|&i| y_train[i]).collect();
            let mut tape = Tape::new();
            let logits = clf.logits(&mut tape, x);
            let loss = tape.softmax_cross_entropy(logits, &y);
            if !tape.value(loss).is_finite() {
                return Err(Error::NumericDivergence(format!(
                    "classifier loss at epoch {epoch}, batch {b}"
                )));
            }
            let grads = tape.backward(loss)?;
            clf.params.zero_grad();
            clf.params.accumulate(&grads);
            clf.params.adam_step(cfg.lr, &adam)?;
        }
    }
    let correct = if y_test.is_empty() {
        0
    } else {
        clf.predict_features(x_test)
            .iter()
            .zip(&y_test)
            .filter(|(p, y)| p == y)
            .count()
    };
    Ok(ClassifierOutcome {
        accuracy: correct as f64 / y_test.len().max(1) as f64,
        n_test: y_test.len(),
        n_train: y_train.len(),
        dropped: drop_train + drop_test,
        classifier: clf,
    })
}

/// Two disjoint groups of label tokens, paired index by index, each with a
/// context group of the same size it forms a dense community with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedGroups {
    pub a: Vec<usize>,
    pub b: Vec<usize>,
    pub ctx_a: Vec<usize>,
    pub ctx_b: Vec<usize>,
}

impl PlantedGroups {
    pub fn choose(n_nodes: usize, group_size: usize, seed: u64) -> Result<Self> {
        if group_size == 0 || 4 * group_size > n_nodes {
            return Err(Error::InvalidConfig(format!(
                "cannot plant four groups of {group_size} among {n_nodes} nodes"
            )));
        }
        let mut nodes: Vec<usize> = (0..n_nodes).collect();
        nodes.shuffle(&mut seed::rng(seed::derive(seed, "groups", 0)));
        let mut chunks = nodes.chunks(group_size).map(<[usize]>::to_vec);
        let mut next = || chunks.next().expect("four groups fit");
        Ok(Self {
            a: next(),
            b: next(),
            ctx_a: next(),
            ctx_b: next(),
        })
    }

    /// Sets every edge inside `a ∪ ctx_a` and inside `b ∪ ctx_b` to `weight`.
    pub fn plant(&self, g: &CooccurrenceGraph, weight: f64) -> Result<CooccurrenceGraph> {
        if !(weight > 0.0 && weight.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "community weight {weight} must be positive"
            )));
        }
        if self
            .a
            .iter()
            .chain(&self.b)
            .chain(&self.ctx_a)
            .chain(&self.ctx_b)
            .any(|&v| v >= g.n_nodes)
        {
            return Err(Error::InvalidConfig("planted group node outside the graph".into()));
        }
        let mut edges: BTreeMap<(usize, usize), f64> = g.edges.iter().map(|&(s, d, w)| ((s, d), w)).collect();
        for (group, ctx) in [(&self.a, &self.ctx_a), (&self.b, &self.ctx_b)] {
            let members: Vec<usize> = group.iter().chain(ctx).copied().collect();
            for &u in &members {
                for &v in &members {
                    if u != v {
                        edges.insert((u, v), weight);
                    }
                }
            }
        }
        let out = CooccurrenceGraph {
            n_nodes: g.n_nodes,
            edges: edges.into_iter().map(|((s, d), w)| (s, d, w)).collect(),
            seed: g.seed,
        };
        out.validate()?;
        Ok(out)
    }
}

/// Exchanges the edge neighbourhoods of the first `round(fraction·len)` pairs
/// `(a_i, b_i)`: every edge touching `a_i` moves to `b_i` and vice versa.
pub fn swap_neighborhoods(g: &CooccurrenceGraph, groups: &PlantedGroups, fraction: f64) -> Result<CooccurrenceGraph> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidConfig(format!("swap fraction {fraction} outside [0, 1]")));
    }
    let n_swap = (fraction * groups.a.len() as f64).round() as usize;
    let mut relabel: Vec<usize> = (0..g.n_nodes).collect();
    for (&a, &b) in groups.a.iter().zip(&groups.b).take(n_swap) {
        relabel.swap(a, b);
    }
    let mut edges: Vec<(usize, usize, f64)> = g.edges.iter().map(|&(s, d, w)| (relabel[s], relabel[d], w)).collect();
    edges.sort_by_key(|x| (x.0, x.1));
    let out = CooccurrenceGraph {
        n_nodes: g.n_nodes,
        edges,
        seed: g.seed,
    };
    out.validate()?;
    Ok(out)
}

/// Walks on `graph`, each labelled by whichever planted group contributes more
/// tokens; walks with a tie are discarded. Labels are `"a"` and `"b"`.
pub fn make_synthetic_labeled(
    graph: &CooccurrenceGraph,
    groups: &PlantedGroups,
    n_examples: usize,
    walk_len: usize,
    seed: u64,
) -> Result<LabeledDataset> {
    graph.validate()?;
    if groups.a.iter().chain(&groups.b).any(|&v| v >= graph.n_nodes) {
        return Err(Error::InvalidConfig("planted group node outside the graph".into()));
    }
    if walk_len == 0 {
        return Err(Error::InvalidConfig("walk length must be at least 1".into()));
    }
    let mut in_a = vec![false; graph.n_nodes];
    let mut in_b = vec![false; graph.n_nodes];
    groups.a.iter().for_each(|&v| in_a[v] = true);
    groups.b.iter().for_each(|&v| in_b[v] = true);
    let mut rng = seed::rng(seed::derive(seed, "labeled", 0));
    let mut examples = Vec::with_capacity(n_examples);
    let max_attempts = 1000 * n_examples.max(1);
    for _ in 0..max_attempts {
        if examples.len() == n_examples {
            break;
        }
        let walk = walk_nodes(graph, walk_len, rng.gen());
        let na = walk.iter().filter(|&&v| in_a[v]).count();
        let nb = walk.iter().filter(|&&v| in_b[v]).count();
        if na == nb {
            continue;
        }
        examples.push(LabeledExample {
            tokens: walk.into_iter().map(token_name).collect(),
            label: usize::from(nb > na),
        });
    }
    if examples.len() < n_examples {
        return Err(Error::Data("could not draw enough untied walks".into()));
    }
    Ok(LabeledDataset {
        labels: vec!["a".into(), "b".into()],
        examples,
    })
}
