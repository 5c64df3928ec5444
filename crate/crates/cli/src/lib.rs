//! The `driftlab` command line: configuration, provenance and the pipeline stages.

pub mod config;
pub mod pipeline;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use driftlab::corpus_synth::Corpus;
use driftlab::data_ingest::{load_records, records_to_jsonl, split_records, tokenize, SplitMode};
use driftlab::downstream::{train_classifier, ClassifierConfig, LabeledDataset};
use driftlab::drift_model::PredictorKind;
use driftlab::embed::{embed_corpus, intersect_align, EmbeddingSet};
use driftlab::eval::{DownstreamEntry, MetricsReport};
use driftlab::{fsio, Error, Result};

use config::{file_hash, RunConfig, Scale, SplitKind};
use pipeline::NamedModel;

#[derive(Parser, Debug)]
#[command(name = "driftlab", version, about = "Predict drifted word embeddings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON run configuration; keys override the profile defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Default profile the configuration file and flags are applied to.
    #[arg(long, value_enum, default_value = "desk", global = true)]
    pub scale: Scale,
    /// Global seed (overrides the configuration).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate synthetic drift instances (graphs and corpora).
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        n_instances: Option<usize>,
        #[arg(long)]
        walk_len: Option<usize>,
    },
    /// Train skip-gram embeddings for every instance, or for a single corpus.
    Embed {
        #[command(flatten)]
        common: Common,
        /// Instance tree produced by `synth`.
        #[arg(long, conflicts_with = "corpus")]
        instances: Option<PathBuf>,
        #[arg(long, requires = "out")]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Use the review-text SGNS settings instead of the synthetic ones.
        #[arg(long)]
        text: bool,
        #[arg(long)]
        binary: bool,
    },
    /// Train one predictor on an embedded instance tree.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        instances: PathBuf,
        #[arg(long)]
        kind: Option<PredictorKind>,
        #[arg(long)]
        small_pct: Option<f64>,
        /// Checkpoint directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict next-step embeddings with a trained checkpoint.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        e1: PathBuf,
        #[arg(long)]
        small: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        binary: bool,
    },
    /// Score checkpoints on the test split and export neighbour and embedding CSVs.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        instances: PathBuf,
        /// `name=checkpoint_dir`, repeatable.
        #[arg(long = "model", required = true)]
        models: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split a reviews.jsonl file into past, future and small-future corpora.
    Split {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        reviews: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Split by season (summer vs winter) instead of by date.
        #[arg(long, conflicts_with = "boundary")]
        season: bool,
        #[arg(long)]
        boundary: Option<chrono::NaiveDate>,
        #[arg(long)]
        pct: Option<f64>,
    },
    /// Train a frozen-embedding classifier per embedding source and record accuracies.
    Downstream {
        #[command(flatten)]
        common: Common,
        /// Labelled JSON lines (`tokens` or `text`, plus `label`).
        #[arg(long)]
        dataset: PathBuf,
        /// `name=embedding_file`, repeatable.
        #[arg(long = "embeddings", required = true)]
        embeddings: Vec<String>,
        /// Report to append to (created if missing).
        #[arg(long)]
        report: PathBuf,
    },
    /// Full synthetic benchmark: instances, embeddings, all predictors, report.
    ReproSynthetic {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn resolve(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(common.scale, common.config.as_deref())?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn output_dir(cfg: &mut RunConfig, flag: Option<PathBuf>) -> Result<PathBuf> {
    if let Some(out) = flag {
        cfg.output_dir = Some(out);
    }
    cfg.output_dir
        .clone()
        .ok_or_else(|| Error::Usage("an output directory is required (--out or output_dir)".into()))
}

fn parse_named(items: &[String]) -> Result<Vec<(String, PathBuf)>> {
    items
        .iter()
        .map(|s| match s.split_once('=') {
            Some((name, path)) if !name.is_empty() && !path.is_empty() => Ok((name.to_string(), PathBuf::from(path))),
            _ => Err(Error::Usage(format!("expected name=path, got {s:?}"))),
        })
        .collect()
}

fn write_config_beside(cfg: &RunConfig, file: &Path) -> Result<()> {
    let dir = file
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    cfg.write_resolved(dir)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            common,
            out,
            n_instances,
            walk_len,
        } => {
            let mut cfg = resolve(&common)?;
            if let Some(n) = n_instances {
                cfg.synth.n_instances = n;
            }
            if let Some(w) = walk_len {
                cfg.synth.walk_len = w;
            }
            cfg.validate()?;
            let out = output_dir(&mut cfg, out)?;
            cfg.write_resolved(&out)?;
            pipeline::synth(&cfg, &out)
        }
        Command::Embed {
            common,
            instances,
            corpus,
            out,
            text,
            binary,
        } => {
            let cfg = resolve(&common)?;
            match (instances, corpus, out) {
                (Some(root), None, _) => {
                    let mut cfg = cfg;
                    cfg.synth.n_instances = pipeline::count_instances(&root)?;
                    pipeline::embed_instances(&cfg, &root)?;
                    fsio::atomic_write(&root.join("resolved_config.embed.json"), cfg.to_json().as_bytes())
                }
                (None, Some(corpus), Some(out)) => {
                    let params = if text { cfg.embed_text } else { cfg.embed };
                    let c = Corpus::load(&corpus)?;
                    let id = corpus.display().to_string();
                    embed_corpus(&c, &params, cfg.seed, &id)?.save(&out, binary)?;
                    write_config_beside(&cfg, &out)
                }
                _ => Err(Error::Usage(
                    "give either --instances DIR or --corpus FILE --out FILE".into(),
                )),
            }
        }
        Command::Train {
            common,
            instances,
            kind,
            small_pct,
            out,
        } => {
            let mut cfg = resolve(&common)?;
            if let Some(k) = kind {
                cfg.train.kind = k;
            }
            if let Some(p) = small_pct {
                cfg.train.small_pct = p;
            }
            cfg.validate()?;
            pipeline::train_one(&cfg, &instances, cfg.train.kind, cfg.train.small_pct, &out)?;
            fsio::atomic_write(&out.join("resolved_config.json"), cfg.to_json().as_bytes())
        }
        Command::Predict {
            model,
            e1,
            small,
            out,
            binary,
        } => {
            let (model, _) = pipeline::load_trained(&model)?;
            let e1 = EmbeddingSet::load(&e1, false)?;
            let small = small.map(|p| EmbeddingSet::load(&p, false)).transpose()?;
            let aligned = intersect_align(&e1, &e1, small.as_ref())?;
            let pred = model.predict_set(&aligned.a, aligned.small.as_ref())?;
            pred.save(&out, binary)
        }
        Command::Eval {
            common,
            instances,
            models,
            out,
        } => {
            let cfg = resolve(&common)?;
            let mut named = Vec::new();
            let mut hashes = Vec::new();
            for (name, dir) in parse_named(&models)? {
                let (model, info) = pipeline::load_trained(&dir)?;
                hashes.push((format!("model:{name}"), file_hash(&dir.join("config.json"))?));
                named.push(NamedModel {
                    name,
                    model,
                    small_pct: info.small_pct,
                });
            }
            let mut report = pipeline::evaluate(&cfg, &instances, &named, &out)?;
            report.config_hash.extend(hashes);
            cfg.write_resolved(&out)?;
            report.save(&out.join("report.json"))
        }
        Command::Split {
            common,
            reviews,
            out,
            season,
            boundary,
            pct,
        } => {
            let mut cfg = resolve(&common)?;
            if season {
                cfg.split.mode = SplitKind::Season;
            }
            if let Some(b) = boundary {
                cfg.split.mode = SplitKind::Time;
                cfg.split.boundary = b;
            }
            if let Some(p) = pct {
                cfg.split.small_pct = p;
            }
            cfg.validate()?;
            let records = load_records(&reviews)?;
            let mode = match cfg.split.mode {
                SplitKind::Time => SplitMode::Time {
                    boundary: cfg.split.boundary,
                },
                SplitKind::Season => SplitMode::Season,
            };
            let split = split_records(&records, mode, cfg.split.small_pct, cfg.seed)?;
            fsio::atomic_dir(&out, |tmp| {
                for (name, recs) in [("d1", &split.d1), ("d2", &split.d2), ("d2_small", &split.d2_small)] {
                    fsio::atomic_write(&tmp.join(format!("{name}.jsonl")), records_to_jsonl(recs).as_bytes())?;
                    tokenize(recs).save(&tmp.join(format!("{name}.txt")))?;
                }
                cfg.write_resolved(tmp)
            })
        }
        Command::Downstream {
            common,
            dataset,
            embeddings,
            report,
        } => {
            let cfg = resolve(&common)?;
            let data = LabeledDataset::load(&dataset)?;
            let name = dataset
                .file_stem()
                .map_or_else(|| "dataset".to_string(), |s| s.to_string_lossy().into_owned());
            let mut rep = if report.exists() {
                MetricsReport::load(&report)?
            } else {
                MetricsReport::new(cfg.eval.k)
            };
            let clf = ClassifierConfig {
                seed: cfg.seed,
                ..cfg.downstream.classifier.clone()
            };
            for (source, path) in parse_named(&embeddings)? {
                let emb = EmbeddingSet::load(&path, false)?;
                let outcome = train_classifier(&emb, &data, &clf)?;
                rep.config_hash
                    .insert(format!("embeddings:{source}"), file_hash(&path)?);
                rep.downstream
                    .retain(|e| !(e.dataset == name && e.embedding_source == source && e.seed == cfg.seed));
                rep.downstream.push(DownstreamEntry {
                    dataset: name.clone(),
                    embedding_source: source,
                    seed: cfg.seed,
                    accuracy: outcome.accuracy,
                    n_test: outcome.n_test,
                });
            }
            rep.config_hash.insert(format!("dataset:{name}"), file_hash(&dataset)?);
            rep.config_hash.insert("downstream".into(), cfg.hash());
            rep.seeds.insert("downstream".into(), cfg.seed);
            rep.save(&report)
        }
        Command::ReproSynthetic { common, out } => {
            let mut cfg = resolve(&common)?;
            let out = output_dir(&mut cfg, out)?;
            let report = pipeline::repro_synthetic(&cfg, &out)?;
            for (name, m) in &report.per_model {
                println!("{name}\t{:.4}", m.mean_cosine);
            }
            Ok(())
        }
    }
}

/// Caps the global thread pool at `DRIFTLAB_THREADS` when set.
pub fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("DRIFTLAB_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::InvalidConfig(format!("DRIFTLAB_THREADS={v:?} is not a positive integer")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    }
    Ok(())
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).try_init();
    match init_threads().and_then(|()| run(cli)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
