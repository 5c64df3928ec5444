//! Cosine and nearest-neighbour metrics, suite reports and CSV exports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::drift_model::{DriftInstance, PredictorModel};
use crate::embed::{EmbeddingSet, Vocabulary};
use crate::error::{Error, Result};
use crate::fsio;

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_K: usize = 30;
pub const DEFAULT_PROBE_WORDS: [&str; 8] = ["well", "place", "great", "time", "nice", "customer", "happy", "people"];

fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt()
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

fn nonzero_norm(word: &str, v: &[f32]) -> Result<f64> {
    let n = norm(v);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::DegenerateRow {
            word: word.to_string(),
            norm: n,
        });
    }
    Ok(n)
}

/// Mean cosine between rows of `pred` and `target` over their common words.
pub fn mean_cosine(pred: &EmbeddingSet, target: &EmbeddingSet) -> Result<f64> {
    if pred.dim() != target.dim() {
        return Err(Error::Alignment(format!(
            "dimension {} vs {}",
            pred.dim(),
            target.dim()
        )));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, word) in pred.words().iter().enumerate() {
        let Some(t) = target.vector(word) else { continue };
        let p = pred.matrix.row(i);
        let np = nonzero_norm(word, p)?;
        let nt = nonzero_norm(word, t)?;
        sum += (dot(p, t) / (np * nt)).clamp(-1.0, 1.0);
        count += 1;
    }
    if count == 0 {
        return Err(Error::Alignment("no common words".into()));
    }
    Ok(sum / count as f64)
}

fn canonical_rank(vocab: &Vocabulary) -> Vec<usize> {
    let mut rank = vec![0; vocab.len()];
    for (r, i) in vocab.canonical_order().into_iter().enumerate() {
        rank[i] = r;
    }
    rank
}

/// The `k` words closest to `word` by cosine, excluding `word` itself; ties
/// go to the word earlier in canonical vocabulary order.
pub fn top_k_neighbors(set: &EmbeddingSet, word: &str, k: usize) -> Result<Vec<(String, f64)>> {
    let idx = set
        .vocab
        .get(word)
        .ok_or_else(|| Error::UnknownWord(word.to_string()))?;
    if k >= set.len() {
        return Err(Error::InvalidConfig(format!(
            "k = {k} must be below the vocabulary size {}",
            set.len()
        )));
    }
    let q = set.matrix.row(idx);
    let nq = nonzero_norm(word, q)?;
    let rank = canonical_rank(&set.vocab);
    let mut scored = Vec::with_capacity(set.len() - 1);
    for (i, w) in set.words().iter().enumerate() {
        if i == idx {
            continue;
        }
        let v = set.matrix.row(i);
        scored.push((i, dot(q, v) / (nq * nonzero_norm(w, v)?)));
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(rank[a.0].cmp(&rank[b.0])));
    Ok(scored
        .into_iter()
        .take(k)
        .map(|(i, c)| (set.words()[i].clone(), c))
        .collect())
}

/// Size of the intersection of `word`'s top-`k` neighbourhoods in both sets.
pub fn nn_overlap(pred: &EmbeddingSet, target: &EmbeddingSet, word: &str, k: usize) -> Result<usize> {
    let a = top_k_neighbors(pred, word, k)?;
    let b = top_k_neighbors(target, word, k)?;
    Ok(a.iter().filter(|(w, _)| b.iter().any(|(v, _)| v == w)).count())
}

/// The `n` most frequent words (canonical order), used as probes on synthetic data.
pub fn synthetic_probe_words(vocab: &Vocabulary, n: usize) -> Vec<String> {
    vocab
        .canonical_order()
        .into_iter()
        .take(n)
        .map(|i| vocab.words()[i].clone())
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub mean_cosine: f64,
    pub per_instance: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DownstreamEntry {
    pub dataset: String,
    pub embedding_source: String,
    pub seed: u64,
    pub accuracy: f64,
    pub n_test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub per_model: BTreeMap<String, ModelMetrics>,
    /// word → model → overlap count.
    pub nn_overlap: BTreeMap<String, BTreeMap<String, usize>>,
    pub k: usize,
    /// Mean cosine of the small-context predictor at each small-sample percentage.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub small_pct: BTreeMap<String, ModelMetrics>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub downstream: Vec<DownstreamEntry>,
    /// Input or config name → SHA-256 hex digest.
    pub config_hash: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
    pub timestamp: String,
}

impl MetricsReport {
    pub fn new(k: usize) -> Self {
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            per_model: BTreeMap::new(),
            nn_overlap: BTreeMap::new(),
            k,
            small_pct: BTreeMap::new(),
            downstream: Vec::new(),
            config_hash: BTreeMap::new(),
            seeds: BTreeMap::new(),
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, m) in self.per_model.iter().chain(&self.small_pct) {
            if !(-1.0..=1.0).contains(&m.mean_cosine) {
                return Err(Error::Data(format!(
                    "{name}: mean cosine {} outside [-1, 1]",
                    m.mean_cosine
                )));
            }
        }
        for (word, counts) in &self.nn_overlap {
            if let Some((model, c)) = counts.iter().find(|(_, &c)| c > self.k) {
                return Err(Error::Data(format!(
                    "{word}/{model}: overlap {c} exceeds k = {}",
                    self.k
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        fsio::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let report: Self = fsio::read_json(path)?;
        report.validate()?;
        Ok(report)
    }
}

pub fn metrics_from(per_instance: Vec<f64>) -> ModelMetrics {
    let mean_cosine = per_instance.iter().sum::<f64>() / per_instance.len().max(1) as f64;
    ModelMetrics {
        mean_cosine,
        per_instance,
    }
}

fn instance_set(words: &[String], matrix: crate::numeric::Tensor<f32>, id: &str) -> Result<EmbeddingSet> {
    EmbeddingSet::new(
        Vocabulary::from_words(words.to_vec())?,
        matrix,
        crate::embed::EmbeddingMeta {
            seed: 0,
            corpus_id: id.to_string(),
            trainer: None,
        },
    )
}

/// Predictions of one model on the first test instance, kept for export.
#[derive(Clone, Debug)]
pub struct SuiteExport {
    pub model: String,
    pub predicted: EmbeddingSet,
}

/// Scores every named model on `instances`; neighbour overlap and exports use
/// the first instance. Probe words missing from that instance are skipped.
pub fn evaluate_suite(
    models: &[(String, &PredictorModel)],
    instances: &[DriftInstance],
    probe_words: &[String],
    k: usize,
) -> Result<(MetricsReport, Vec<SuiteExport>)> {
    let first = instances
        .first()
        .ok_or_else(|| Error::Data("no evaluation instances".into()))?;
    let target = instance_set(&first.words, first.target()?.clone(), "target")?;
    let mut report = MetricsReport::new(k);
    let mut exports = Vec::new();
    for (name, model) in models {
        let per = instances
            .par_iter()
            .map(|inst| {
                let pred = instance_set(&inst.words, model.predict(inst)?, name)?;
                let tgt = instance_set(&inst.words, inst.target()?.clone(), "target")?;
                mean_cosine(&pred, &tgt)
            })
            .collect::<Result<Vec<f64>>>()?;
        report.per_model.insert(name.clone(), metrics_from(per));
        let predicted = instance_set(&first.words, model.predict(first)?, name)?;
        for word in probe_words.iter().filter(|w| target.vocab.contains(w)) {
            let c = nn_overlap(&predicted, &target, word, k)?;
            report
                .nn_overlap
                .entry(word.clone())
                .or_default()
                .insert(name.clone(), c);
        }
        exports.push(SuiteExport {
            model: name.clone(),
            predicted,
        });
    }
    exports.push(SuiteExport {
        model: "target".into(),
        predicted: target,
    });
    Ok((report, exports))
}

/// `word,rank,neighbor,cosine` rows for each probe word present in `set`.
pub fn neighbors_csv(set: &EmbeddingSet, probe_words: &[String], k: usize) -> Result<String> {
    let mut out = String::from("word,rank,neighbor,cosine\n");
    for word in probe_words.iter().filter(|w| set.vocab.contains(w)) {
        for (rank, (n, c)) in top_k_neighbors(set, word, k)?.into_iter().enumerate() {
            writeln!(out, "{word},{},{n},{c}", rank + 1).expect("string write");
        }
    }
    Ok(out)
}

/// `word,v1..vd` header followed by one row per word.
pub fn embeddings_csv(set: &EmbeddingSet) -> String {
    let mut out = String::from("word");
    for j in 1..=set.dim() {
        write!(out, ",v{j}").expect("string write");
    }
    out.push('\n');
    for (i, w) in set.words().iter().enumerate() {
        out.push_str(w);
        for x in set.matrix.row(i) {
            write!(out, ",{x}").expect("string write");
        }
        out.push('\n');
    }
    out
}

/// Writes `neighbors_<model>.csv` and `embeddings_<model>.csv` for each export.
pub fn write_exports(dir: &Path, exports: &[SuiteExport], probe_words: &[String], k: usize) -> Result<()> {
    for e in exports {
        fsio::atomic_write(
            &dir.join(format!("neighbors_{}.csv", e.model)),
            neighbors_csv(&e.predicted, probe_words, k)?.as_bytes(),
        )?;
        fsio::atomic_write(
            &dir.join(format!("embeddings_{}.csv", e.model)),
            embeddings_csv(&e.predicted).as_bytes(),
        )?;
    }
    Ok(())
}
