//! Run configuration: profile defaults, JSON file overrides, flag overrides.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use driftlab::corpus_synth::DriftSpec;
use driftlab::downstream::ClassifierConfig;
use driftlab::drift_model::{AdditiveConfig, MlpConfig, ModelConfig, PredictorKind, TransDriftConfig};
use driftlab::embed::SgnsParams;
use driftlab::eval::DEFAULT_K;
use driftlab::{fsio, Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    /// 200 instances, 100k-token walks, full training schedules.
    Desk,
    /// 12 instances, 5k-token walks, a few epochs; for smoke tests.
    Smoke,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n_instances: usize,
    pub n_nodes: usize,
    pub edge_prob: f64,
    pub walk_len: usize,
    pub drift_fraction: f64,
    pub drift_scale: f64,
    pub edge_add_prob: f64,
    /// Small-sample percentages (as fractions) written for every instance.
    pub small_pcts: Vec<f64>,
}

impl SynthConfig {
    pub fn drift_spec(&self, seed: u64) -> DriftSpec {
        DriftSpec {
            drift_fraction: self.drift_fraction,
            drift_scale: self.drift_scale,
            edge_add_prob: self.edge_add_prob,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub kind: PredictorKind,
    /// Small-context percentage fed to TransDrift; 0 trains without small context.
    pub small_pct: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub transdrift: TransDriftConfig,
    pub mlp: MlpConfig,
    pub additive: AdditiveConfig,
}

impl TrainConfig {
    /// Model config for `kind`, with its seed derived from the run seed.
    pub fn model_config(&self, kind: PredictorKind, seed: u64) -> ModelConfig {
        let s = driftlab::seed::derive(seed, kind.name(), 0);
        match kind {
            PredictorKind::TransDrift => ModelConfig::TransDrift(TransDriftConfig {
                seed: s,
                ..self.transdrift.clone()
            }),
            PredictorKind::Mlp => ModelConfig::Mlp(MlpConfig {
                seed: s,
                ..self.mlp.clone()
            }),
            PredictorKind::Additive => ModelConfig::Additive(AdditiveConfig {
                seed: s,
                ..self.additive.clone()
            }),
            PredictorKind::NoDrift => ModelConfig::NoDrift {
                emb_dim: self.transdrift.emb_dim,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub k: usize,
    /// Defaults to the eight most frequent tokens on synthetic data.
    pub probe_words: Option<Vec<String>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    Time,
    Season,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub mode: SplitKind,
    pub boundary: NaiveDate,
    pub small_pct: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DownstreamConfig {
    /// Run the synthetic planted-drift task inside `repro-synthetic`.
    pub synthetic: bool,
    pub seeds: usize,
    pub n_examples: usize,
    pub example_len: usize,
    pub group_size: usize,
    /// Edge weight inside each planted label/context community.
    pub community_weight: f64,
    pub swap_fraction: f64,
    pub small_pct: f64,
    pub classifier: ClassifierConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub format_version: u32,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub synth: SynthConfig,
    /// SGNS settings for synthetic instances.
    pub embed: SgnsParams,
    /// SGNS settings for tokenised review text.
    pub embed_text: SgnsParams,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub split: SplitConfig,
    pub downstream: DownstreamConfig,
}

impl RunConfig {
    pub fn profile(scale: Scale) -> Self {
        let desk = Self {
            format_version: FORMAT_VERSION,
            seed: 0,
            output_dir: None,
            synth: SynthConfig {
                n_instances: 200,
                n_nodes: 100,
                edge_prob: 0.1,
                walk_len: 100_000,
                drift_fraction: 0.3,
                drift_scale: 1.0,
                edge_add_prob: 0.02,
                small_pcts: vec![0.2, 0.3],
            },
            embed: SgnsParams::synthetic(),
            embed_text: SgnsParams::real_text(),
            train: TrainConfig {
                kind: PredictorKind::TransDrift,
                small_pct: 0.0,
                val_fraction: 0.1,
                test_fraction: 0.1,
                transdrift: TransDriftConfig::synthetic(),
                mlp: MlpConfig::synthetic(),
                additive: AdditiveConfig::synthetic(),
            },
            eval: EvalConfig {
                k: DEFAULT_K,
                probe_words: None,
            },
            split: SplitConfig {
                mode: SplitKind::Time,
                boundary: NaiveDate::from_ymd_opt(2016, 1, 1).expect("valid date"),
                small_pct: 0.3,
            },
            downstream: DownstreamConfig {
                synthetic: true,
                seeds: 5,
                n_examples: 2000,
                example_len: 10,
                group_size: 20,
                community_weight: 0.5,
                swap_fraction: 1.0,
                small_pct: 0.3,
                classifier: ClassifierConfig::default(),
            },
        };
        match scale {
            Scale::Desk => desk,
            Scale::Smoke => {
                let mut c = desk;
                c.synth.n_instances = 12;
                c.synth.walk_len = 5_000;
                c.train.transdrift.model_dim = 16;
                c.train.transdrift.n_layers = 1;
                c.train.transdrift.max_epochs = 3;
                c.train.transdrift.warmup_epochs = 2;
                c.train.transdrift.batch_instances = 4;
                c.train.mlp.max_epochs = 3;
                c.train.mlp.batch_instances = 4;
                c.train.additive.max_epochs = 3;
                c.train.additive.batch_instances = 4;
                c.eval.k = 10;
                c.downstream.seeds = 1;
                c.downstream.n_examples = 100;
                c.downstream.classifier.epochs = 3;
                c
            }
        }
    }

    /// Profile defaults overridden key by key by the JSON file, if any.
    pub fn load(scale: Scale, file: Option<&Path>) -> Result<Self> {
        let base = serde_json::to_value(Self::profile(scale))?;
        let merged = match file {
            Some(path) => {
                let over: Value = serde_json::from_str(&fsio::read_to_string(path)?)
                    .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
                if !over.is_object() {
                    return Err(Error::InvalidConfig(format!(
                        "{}: expected a JSON object",
                        path.display()
                    )));
                }
                merge(base, over)
            }
            None => base,
        };
        let cfg: Self = serde_json::from_value(merged).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::InvalidConfig(format!(
                "format_version {} is not supported (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        self.synth.drift_spec(0).validate()?;
        self.embed.validate()?;
        self.embed_text.validate()?;
        self.train.transdrift.validate()?;
        let pcts = self.synth.small_pcts.iter().chain([
            &self.train.small_pct,
            &self.split.small_pct,
            &self.downstream.small_pct,
        ]);
        for &p in pcts {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!("percentage {p} outside [0, 1]")));
            }
        }
        let held_out = self.train.val_fraction + self.train.test_fraction;
        if !(0.0..1.0).contains(&held_out) || self.train.val_fraction < 0.0 || self.train.test_fraction < 0.0 {
            return Err(Error::InvalidConfig(
                "val_fraction + test_fraction must lie in [0, 1)".into(),
            ));
        }
        if self.synth.n_instances == 0 {
            return Err(Error::InvalidConfig("n_instances must be positive".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        sha256_hex(self.to_json().as_bytes())
    }

    /// Writes `resolved_config.json` into `dir`.
    pub fn write_resolved(&self, dir: &Path) -> Result<()> {
        fsio::atomic_write(&dir.join("resolved_config.json"), self.to_json().as_bytes())
    }
}

/// Recursive object merge; non-object values in `over` replace those in `base`.
fn merge(base: Value, over: Value) -> Value {
    match (base, over) {
        (Value::Object(mut b), Value::Object(o)) => {
            for (k, v) in o {
                let merged = match b.remove(&k) {
                    Some(old) => merge(old, v),
                    None => v,
                };
                b.insert(k, merged);
            }
            Value::Object(b)
        }
        (_, o) => o,
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Percentage tag used in file names: `0.3` → `30`.
pub fn pct_tag(pct: f64) -> String {
    format!("{:02}", (pct * 100.0).round() as u32)
}
