//! Stage implementations shared by the subcommands.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use driftlab::corpus_synth::{
    generate_graph, make_instance_corpora, sample_walk, small_len, CooccurrenceGraph, Corpus,
};
use driftlab::downstream::{make_synthetic_labeled, swap_neighborhoods, train_classifier, PlantedGroups};
use driftlab::drift_model::{train_model, DriftInstance, History, PredictorKind, PredictorModel};
use driftlab::embed::{build_vocab, embed_corpus, intersect_align, EmbeddingSet};
use driftlab::eval::{
    evaluate_suite, synthetic_probe_words, write_exports, DownstreamEntry, MetricsReport, SuiteExport,
    DEFAULT_PROBE_WORDS,
};
use driftlab::seed::derive;
use driftlab::{fsio, Error, Result};

use crate::config::{file_hash, pct_tag, RunConfig};

pub fn instance_dir(root: &Path, i: usize) -> PathBuf {
    root.join("instances").join(format!("{i:04}"))
}

pub fn small_corpus_name(pct: f64) -> String {
    format!("d2_small_{}.txt", pct_tag(pct))
}

pub fn small_embedding_name(pct: f64) -> String {
    format!("e2_small_{}.txt", pct_tag(pct))
}

/// SGNS seeds for past (`t`) and future (`t+1`) corpora; fixed across instances.
pub fn sgns_seeds(cfg: &RunConfig) -> (u64, u64) {
    (derive(cfg.seed, "sgns_past", 0), derive(cfg.seed, "sgns_future", 0))
}

fn prefix(corpus: &Corpus, n_tokens: usize) -> Corpus {
    let line: Vec<String> = corpus.tokens().take(n_tokens).map(str::to_string).collect();
    Corpus::from_lines(if line.is_empty() { Vec::new() } else { vec![line] })
}

/// Writes graphs and corpora for every instance under `root/instances/`.
pub fn synth(cfg: &RunConfig, root: &Path) -> Result<()> {
    let s = &cfg.synth;
    let max_pct = s.small_pcts.iter().copied().fold(0.0, f64::max);
    (0..s.n_instances).into_par_iter().try_for_each(|i| {
        let spec = s.drift_spec(derive(cfg.seed, "drift", i as u64));
        let ic = make_instance_corpora(
            s.n_nodes,
            s.edge_prob,
            s.walk_len,
            max_pct,
            &spec,
            derive(cfg.seed, "instance", i as u64),
        )?;
        let dir = instance_dir(root, i);
        fsio::atomic_dir(&dir, |tmp| {
            ic.save(tmp)?;
            std::fs::remove_file(tmp.join("d2_small.txt")).map_err(|e| Error::io(tmp.join("d2_small.txt"), e))?;
            for &pct in &s.small_pcts {
                prefix(&ic.d2_small, small_len(s.walk_len, pct)).save(&tmp.join(small_corpus_name(pct)))?;
            }
            Ok(())
        })
    })?;
    log::info!("synthesised {} instances", s.n_instances);
    Ok(())
}

/// Embeds `d1.txt` with the past seed and `d2.txt` plus small corpora with the future seed.
pub fn embed_instances(cfg: &RunConfig, root: &Path) -> Result<()> {
    let (past, future) = sgns_seeds(cfg);
    (0..cfg.synth.n_instances).into_par_iter().try_for_each(|i| {
        let dir = instance_dir(root, i);
        let run = |corpus: &str, out: &str, seed: u64| -> Result<()> {
            let c = Corpus::load(&dir.join(corpus))?;
            if c.is_empty() {
                return Ok(());
            }
            embed_corpus(&c, &cfg.embed, seed, corpus)?.save(&dir.join(out), false)
        };
        run("d1.txt", "e1.txt", past)?;
        run("d2.txt", "e2.txt", future)?;
        for &pct in &cfg.synth.small_pcts {
            run(&small_corpus_name(pct), &small_embedding_name(pct), future)?;
        }
        Ok::<(), Error>(())
    })?;
    log::info!("embedded {} instances", cfg.synth.n_instances);
    Ok(())
}

/// Row-aligned instance from one instance directory; `small_pct` 0 means no small context.
pub fn load_instance(dir: &Path, small_pct: f64) -> Result<DriftInstance> {
    let e1 = EmbeddingSet::load(&dir.join("e1.txt"), false)?;
    let e2 = EmbeddingSet::load(&dir.join("e2.txt"), false)?;
    let small_path = dir.join(small_embedding_name(small_pct));
    let small = if small_pct > 0.0 && small_path.exists() {
        Some(EmbeddingSet::load(&small_path, false)?)
    } else if small_pct > 0.0 && !dir.join(small_corpus_name(small_pct)).exists() {
        return Err(Error::Data(format!(
            "{}: no small-context data at {}%",
            dir.display(),
            pct_tag(small_pct)
        )));
    } else {
        None
    };
    let aligned = intersect_align(&e1, &e2, small.as_ref())?;
    let mut inst = DriftInstance::from_aligned(&aligned)?;
    if small_pct > 0.0 && inst.small.is_none() {
        let n = inst.len();
        inst.small = Some((driftlab::numeric::Tensor::zeros(n, inst.dim()), vec![false; n]));
    }
    Ok(inst)
}

pub fn load_instances(root: &Path, n: usize, small_pct: f64) -> Result<Vec<DriftInstance>> {
    (0..n)
        .into_par_iter()
        .map(|i| load_instance(&instance_dir(root, i), small_pct))
        .collect()
}

/// Number of instances in `root/instances/`.
pub fn count_instances(root: &Path) -> Result<usize> {
    let dir = root.join("instances");
    let entries = std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
    let n = entries.filter_map(|e| e.ok()).filter(|e| e.path().is_dir()).count();
    if n == 0 {
        return Err(Error::Data(format!("{}: no instances", dir.display())));
    }
    Ok(n)
}

/// Instance-index order: training first, then validation, then test.
pub fn split_counts(n: usize, val_fraction: f64, test_fraction: f64) -> (usize, usize, usize) {
    let n_test = (test_fraction * n as f64).round() as usize;
    let n_val = (val_fraction * n as f64).round() as usize;
    let n_train = n.saturating_sub(n_test + n_val);
    (n_train, n_val, n - n_train - n_val)
}

pub struct Splits {
    pub train: Vec<DriftInstance>,
    pub val: Vec<DriftInstance>,
    pub test: Vec<DriftInstance>,
}

pub fn split_instances(cfg: &RunConfig, mut all: Vec<DriftInstance>) -> Result<Splits> {
    let (n_train, n_val, _) = split_counts(all.len(), cfg.train.val_fraction, cfg.train.test_fraction);
    if n_train == 0 {
        return Err(Error::InvalidConfig(format!(
            "{} instances leave no training data",
            all.len()
        )));
    }
    let test = all.split_off(n_train + n_val);
    let val = all.split_off(n_train);
    Ok(Splits { train: all, val, test })
}

/// Sidecar written next to a checkpoint.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingInfo {
    pub kind: PredictorKind,
    pub small_pct: f64,
    pub instances: PathBuf,
    pub config_hash: String,
    pub best_epoch: Option<usize>,
    pub best_val_cosine: Option<f64>,
}

pub fn save_trained(dir: &Path, model: &PredictorModel, history: &History, info: &TrainingInfo) -> Result<()> {
    model.save(dir)?;
    fsio::atomic_write(&dir.join("history.jsonl"), history.to_jsonl().as_bytes())?;
    fsio::write_json(&dir.join("training.json"), info)
}

pub fn load_trained(dir: &Path) -> Result<(PredictorModel, TrainingInfo)> {
    Ok((PredictorModel::load(dir)?, fsio::read_json(&dir.join("training.json"))?))
}

pub fn train_one(
    cfg: &RunConfig,
    root: &Path,
    kind: PredictorKind,
    small_pct: f64,
    out: &Path,
) -> Result<(PredictorModel, History)> {
    let pct = if kind == PredictorKind::TransDrift {
        small_pct
    } else {
        0.0
    };
    let all = load_instances(root, count_instances(root)?, pct)?;
    let splits = split_instances(cfg, all)?;
    let (model, history) = train_model(cfg.train.model_config(kind, cfg.seed), &splits.train, &splits.val)?;
    let info = TrainingInfo {
        kind,
        small_pct: pct,
        instances: root.to_path_buf(),
        config_hash: cfg.hash(),
        best_epoch: history.best_epoch,
        best_val_cosine: history.best_val_cosine(),
    };
    save_trained(out, &model, &history, &info)?;
    log::info!("trained {kind} (small {pct}): best val {:?}", history.best_val_cosine());
    Ok((model, history))
}

/// A trained model to evaluate, with the small-context percentage it consumes.
pub struct NamedModel {
    pub name: String,
    pub model: PredictorModel,
    pub small_pct: f64,
}

/// Scores models on the test split; models sharing a small-context percentage share instances.
pub fn evaluate(cfg: &RunConfig, root: &Path, models: &[NamedModel], out_dir: &Path) -> Result<MetricsReport> {
    let n = count_instances(root)?;
    let mut cache: BTreeMap<String, Vec<DriftInstance>> = BTreeMap::new();
    let mut report = MetricsReport::new(cfg.eval.k);
    let mut exports: Vec<SuiteExport> = Vec::new();
    let mut probes: Option<Vec<String>> = cfg.eval.probe_words.clone();
    for m in models {
        let key = pct_tag(m.small_pct);
        if !cache.contains_key(&key) {
            let splits = split_instances(cfg, load_instances(root, n, m.small_pct)?)?;
            if splits.test.is_empty() {
                return Err(Error::InvalidConfig("test split is empty".into()));
            }
            cache.insert(key.clone(), splits.test);
        }
        let test = &cache[&key];
        let probe_words = match &mut probes {
            Some(p) => p,
            None => probes.insert(default_probe_words(&instance_dir(root, n - test.len()))?),
        };
        let (r, ex) = evaluate_suite(&[(m.name.clone(), &m.model)], test, probe_words, cfg.eval.k)?;
        report.per_model.extend(r.per_model);
        for (w, counts) in r.nn_overlap {
            report.nn_overlap.entry(w).or_default().extend(counts);
        }
        for e in ex {
            if !exports.iter().any(|x| x.model == e.model) {
                exports.push(e);
            }
        }
    }
    if let Some(p) = &probes {
        write_exports(out_dir, &exports, p, cfg.eval.k)?;
    }
    report.seeds.insert("run".into(), cfg.seed);
    let (past, future) = sgns_seeds(cfg);
    report.seeds.insert("sgns_past".into(), past);
    report.seeds.insert("sgns_future".into(), future);
    report.config_hash.insert("run".into(), cfg.hash());
    Ok(report)
}

/// The eight most frequent tokens of the instance's past corpus, or the
/// review-data defaults when the directory holds no corpus.
pub fn default_probe_words(dir: &Path) -> Result<Vec<String>> {
    let path = dir.join("d1.txt");
    if !path.exists() {
        return Ok(DEFAULT_PROBE_WORDS.iter().map(|w| w.to_string()).collect());
    }
    Ok(synthetic_probe_words(&build_vocab(&Corpus::load(&path)?, 1)?, 8))
}

/// Canonical model names used in reports.
pub fn model_name(kind: PredictorKind, small_pct: f64) -> String {
    if small_pct > 0.0 {
        format!("{}_small_{}", kind.name(), pct_tag(small_pct))
    } else {
        kind.name().to_string()
    }
}

fn embed_graph_walk(
    cfg: &RunConfig,
    g: &CooccurrenceGraph,
    len: usize,
    walk_seed: u64,
    sgns_seed: u64,
) -> Result<EmbeddingSet> {
    embed_corpus(&sample_walk(g, len, walk_seed)?, &cfg.embed, sgns_seed, "downstream")
}

/// Planted-drift classification over `cfg.downstream.seeds` seeds; one entry per
/// (seed, embedding source): `no_drift` (past embeddings), `transdrift`
/// (predicted from past + small future sample) and `target` (full future corpus).
pub fn downstream_synthetic(
    cfg: &RunConfig,
    predictor: &PredictorModel,
    small_pct: f64,
) -> Result<Vec<DownstreamEntry>> {
    let d = &cfg.downstream;
    let s = &cfg.synth;
    let (past, future) = sgns_seeds(cfg);
    let per_seed = (0..d.seeds as u64)
        .into_par_iter()
        .map(|k| -> Result<Vec<DownstreamEntry>> {
            let groups = PlantedGroups::choose(s.n_nodes, d.group_size, derive(cfg.seed, "ds_groups", k))?;
            let base = groups.plant(
                &generate_graph(s.n_nodes, s.edge_prob, derive(cfg.seed, "ds_graph", k))?,
                d.community_weight,
            )?;
            let drifted = swap_neighborhoods(&base, &groups, d.swap_fraction)?;
            let e1 = embed_graph_walk(cfg, &base, s.walk_len, derive(cfg.seed, "ds_d1", k), past)?;
            let e2 = embed_graph_walk(cfg, &drifted, s.walk_len, derive(cfg.seed, "ds_d2", k), future)?;
            let n_small = small_len(s.walk_len, small_pct);
            let small = if small_pct > 0.0 && n_small > 0 {
                Some(embed_graph_walk(
                    cfg,
                    &drifted,
                    n_small,
                    derive(cfg.seed, "ds_small", k),
                    future,
                )?)
            } else {
                None
            };
            let aligned = intersect_align(&e1, &e1, small.as_ref())?;
            let pred = predictor.predict_set(&aligned.a, aligned.small.as_ref())?;
            let data = make_synthetic_labeled(
                &drifted,
                &groups,
                d.n_examples,
                d.example_len,
                derive(cfg.seed, "ds_data", k),
            )?;
            let clf = driftlab::downstream::ClassifierConfig {
                seed: derive(cfg.seed, "ds_classifier", k),
                ..d.classifier.clone()
            };
            [("no_drift", &e1), ("transdrift", &pred), ("target", &e2)]
                .into_iter()
                .map(|(source, emb)| {
                    let out = train_classifier(emb, &data, &clf)?;
                    Ok(DownstreamEntry {
                        dataset: "synthetic_planted".into(),
                        embedding_source: source.into(),
                        seed: k,
                        accuracy: out.accuracy,
                        n_test: out.n_test,
                    })
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_seed.into_iter().flatten().collect())
}

/// End-to-end synthetic benchmark under `root`: instances, embeddings, all
/// predictors, the small-context sweep and (optionally) the downstream task.
pub fn repro_synthetic(cfg: &RunConfig, root: &Path) -> Result<MetricsReport> {
    cfg.write_resolved(root)?;
    synth(cfg, root)?;
    embed_instances(cfg, root)?;
    let models_dir = root.join("models");
    let mut models = Vec::new();
    for kind in PredictorKind::ALL {
        let name = model_name(kind, 0.0);
        let (model, _) = train_one(cfg, root, kind, 0.0, &models_dir.join(&name))?;
        models.push(NamedModel {
            name,
            model,
            small_pct: 0.0,
        });
    }
    for &pct in cfg.synth.small_pcts.iter().filter(|&&p| p > 0.0) {
        let name = model_name(PredictorKind::TransDrift, pct);
        let (model, _) = train_one(cfg, root, PredictorKind::TransDrift, pct, &models_dir.join(&name))?;
        models.push(NamedModel {
            name,
            model,
            small_pct: pct,
        });
    }
    let mut report = evaluate(cfg, root, &models, root)?;
    let td = |pct: f64| {
        report
            .per_model
            .get(&model_name(PredictorKind::TransDrift, pct))
            .cloned()
    };
    let mut small = BTreeMap::new();
    for pct in std::iter::once(0.0).chain(cfg.synth.small_pcts.iter().copied()) {
        if let Some(m) = td(pct) {
            small.insert(pct_tag(pct), m);
        }
    }
    report.small_pct = small;
    if cfg.downstream.synthetic {
        let pct = cfg.downstream.small_pct;
        let chosen = models
            .iter()
            .find(|m| m.name == model_name(PredictorKind::TransDrift, pct))
            .or_else(|| {
                models
                    .iter()
                    .find(|m| m.name == model_name(PredictorKind::TransDrift, 0.0))
            })
            .expect("transdrift is always trained");
        report.downstream = downstream_synthetic(cfg, &chosen.model, chosen.small_pct)?;
    }
    for m in &models {
        let dir = models_dir.join(&m.name);
        report
            .config_hash
            .insert(format!("model:{}", m.name), file_hash(&dir.join("config.json"))?);
    }
    report.save(&root.join("report.json"))?;
    Ok(report)
}

/// Mean accuracy per embedding source over the downstream entries.
pub fn downstream_means(entries: &[DownstreamEntry]) -> BTreeMap<String, f64> {
    let mut acc: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for e in entries {
        acc.entry(e.embedding_source.clone()).or_default().push(e.accuracy);
    }
    acc.into_iter()
        .map(|(k, v)| (k, v.iter().sum::<f64>() / v.len() as f64))
        .collect()
}
