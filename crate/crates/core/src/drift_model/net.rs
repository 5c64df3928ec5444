//! Forward passes of the four predictors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{LayerNorm, Linear, ParamId, ParamStore, Scalar, Tape, Tensor, TransformerLayer, Var};
use crate::seed;

use super::instance::DriftInstance;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    #[serde(rename = "transdrift")]
    TransDrift,
    Additive,
    Mlp,
    NoDrift,
}

impl PredictorKind {
    pub const ALL: [PredictorKind; 4] = [
        PredictorKind::NoDrift,
        PredictorKind::Additive,
        PredictorKind::Mlp,
        PredictorKind::TransDrift,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PredictorKind::TransDrift => "transdrift",
            PredictorKind::Additive => "additive",
            PredictorKind::Mlp => "mlp",
            PredictorKind::NoDrift => "no_drift",
        }
    }
}

impl std::str::FromStr for PredictorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown model kind {s:?}")))
    }
}

impl std::fmt::Display for PredictorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransDriftConfig {
    pub model_dim: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub emb_dim: usize,
    pub max_epochs: usize,
    pub batch_instances: usize,
    pub peak_lr: f64,
    pub warmup_epochs: usize,
    pub seed: u64,
}

impl TransDriftConfig {
    /// Synthetic benchmark: model-dim 100, 1 head, 4 layers, lr 5e-4, batch 100, 100 epochs.
    pub fn synthetic() -> Self {
        Self {
            model_dim: 100,
            n_heads: 1,
            n_layers: 4,
            emb_dim: 50,
            max_epochs: 100,
            batch_instances: 100,
            peak_lr: 5e-4,
            warmup_epochs: 30,
            seed: 0,
        }
    }

    /// Real review data: model-dim 192, 4 heads, 4 layers; 8 instances per batch.
    pub fn real_text() -> Self {
        Self {
            model_dim: 192,
            n_heads: 4,
            batch_instances: 8,
            ..Self::synthetic()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || !self.model_dim.is_multiple_of(self.n_heads) {
            return Err(Error::InvalidConfig(format!(
                "model_dim {} must be divisible by n_heads {}",
                self.model_dim, self.n_heads
            )));
        }
        if self.emb_dim == 0 || self.n_layers == 0 || self.batch_instances == 0 {
            return Err(Error::InvalidConfig(
                "emb_dim, n_layers and batch_instances must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpConfig {
    pub emb_dim: usize,
    pub hidden: usize,
    pub max_epochs: usize,
    pub batch_instances: usize,
    pub peak_lr: f64,
    pub warmup_epochs: usize,
    pub seed: u64,
}

impl MlpConfig {
    /// 50→200→50 (20,250 parameters), 50 epochs.
    pub fn synthetic() -> Self {
        Self {
            emb_dim: 50,
            hidden: 200,
            max_epochs: 50,
            batch_instances: 100,
            peak_lr: 5e-4,
            warmup_epochs: 30,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdditiveLoss {
    Cosine,
    Squared,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdditiveConfig {
    pub emb_dim: usize,
    pub loss: AdditiveLoss,
    pub max_epochs: usize,
    pub batch_instances: usize,
    pub peak_lr: f64,
    pub warmup_epochs: usize,
    pub seed: u64,
}

impl AdditiveConfig {
    pub fn synthetic() -> Self {
        Self {
            emb_dim: 50,
            loss: AdditiveLoss::Cosine,
            max_epochs: 100,
            batch_instances: 100,
            peak_lr: 5e-4,
            warmup_epochs: 30,
            seed: 0,
        }
    }
}

/// Everything needed to rebuild a predictor; stored as a checkpoint's `config.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    #[serde(rename = "transdrift")]
    TransDrift(TransDriftConfig),
    Mlp(MlpConfig),
    Additive(AdditiveConfig),
    NoDrift {
        emb_dim: usize,
    },
}

/// Optimisation settings shared by every trainable predictor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub max_epochs: usize,
    pub batch_instances: usize,
    pub peak_lr: f64,
    pub warmup_epochs: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn kind(&self) -> PredictorKind {
        match self {
            ModelConfig::TransDrift(_) => PredictorKind::TransDrift,
            ModelConfig::Mlp(_) => PredictorKind::Mlp,
            ModelConfig::Additive(_) => PredictorKind::Additive,
            ModelConfig::NoDrift { .. } => PredictorKind::NoDrift,
        }
    }

    pub fn emb_dim(&self) -> usize {
        match self {
            ModelConfig::TransDrift(c) => c.emb_dim,
            ModelConfig::Mlp(c) => c.emb_dim,
            ModelConfig::Additive(c) => c.emb_dim,
            ModelConfig::NoDrift { emb_dim } => *emb_dim,
        }
    }

    pub fn schedule(&self) -> Option<Schedule> {
        let s = |max_epochs, batch_instances, peak_lr, warmup_epochs, seed| Schedule {
            max_epochs,
            batch_instances,
            peak_lr,
            warmup_epochs,
            seed,
        };
        match self {
            ModelConfig::TransDrift(c) => Some(s(c.max_epochs, c.batch_instances, c.peak_lr, c.warmup_epochs, c.seed)),
            ModelConfig::Mlp(c) => Some(s(c.max_epochs, c.batch_instances, c.peak_lr, c.warmup_epochs, c.seed)),
            ModelConfig::Additive(c) => Some(s(c.max_epochs, c.batch_instances, c.peak_lr, c.warmup_epochs, c.seed)),
            ModelConfig::NoDrift { .. } => None,
        }
    }

    pub fn synthetic(kind: PredictorKind) -> Self {
        match kind {
            PredictorKind::TransDrift => ModelConfig::TransDrift(TransDriftConfig::synthetic()),
            PredictorKind::Mlp => ModelConfig::Mlp(MlpConfig::synthetic()),
            PredictorKind::Additive => ModelConfig::Additive(AdditiveConfig::synthetic()),
            PredictorKind::NoDrift => ModelConfig::NoDrift { emb_dim: 50 },
        }
    }

    fn seed(&self) -> u64 {
        self.schedule().map(|s| s.seed).unwrap_or(0)
    }
}

/// Token encoder + positionless transformer stack + output projection.
#[derive(Clone, Debug)]
pub struct TransDriftNet {
    pub in_proj: Linear,
    pub small_proj: Linear,
    /// Row 0: past-only token, row 1: token with a small-sample embedding.
    pub type_embed: ParamId,
    pub layers: Vec<TransformerLayer>,
    pub final_ln: LayerNorm,
    pub out_proj: Linear,
}

impl TransDriftNet {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, cfg: &TransDriftConfig, rng: &mut seed::Rng) -> Result<Self> {
        cfg.validate()?;
        let (d, m) = (cfg.emb_dim, cfg.model_dim);
        let in_proj = Linear::new(store, "in_proj", d, m, true, rng);
        let small_proj = Linear::new(store, "small_proj", d, m, false, rng);
        let type_embed = store.add("type_embed", Tensor::zeros(2, m));
        let layers = (0..cfg.n_layers)
            .map(|i| TransformerLayer::new(store, &format!("layer{i}"), m, cfg.n_heads, rng))
            .collect::<Result<Vec<_>>>()?;
        let final_ln = LayerNorm::new(store, "final_ln", m);
        let out_proj = Linear::new(store, "out_proj", m, d, true, rng);
        Ok(Self {
            in_proj,
            small_proj,
            type_embed,
            layers,
            final_ln,
            out_proj,
        })
    }

    /// Per-token inputs to the first transformer layer:
    /// `InProj(e1) + SmallProj(small·mask) + TypeEmbed[mask]`.
    pub fn token_inputs<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, inst: &DriftInstance) -> Var {
        let n = inst.len();
        let e1 = tape.constant(inst.e1.cast());
        let mut h = self.in_proj.forward(tape, store, e1);
        let mask: Vec<bool> = match &inst.small {
            Some((s, mask)) => {
                let masked = Tensor::from_fn(
                    n,
                    s.cols(),
                    |r, c| {
                        if mask[r] {
                            T::of(s.get(r, c) as f64)
                        } else {
                            T::zero()
                        }
                    },
                );
                let sv = tape.constant(masked);
                let sp = self.small_proj.forward(tape, store, sv);
                h = tape.add(h, sp);
                mask.clone()
            }
            None => vec![false; n],
        };
        let onehot = Tensor::from_fn(n, 2, |r, c| if (c == 1) == mask[r] { T::one() } else { T::zero() });
        let onehot = tape.constant(onehot);
        let table = tape.param(store, self.type_embed);
        let types = tape.matmul(onehot, table);
        tape.add(h, types)
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, inst: &DriftInstance) -> Var {
        let mut h = self.token_inputs(tape, store, inst);
        for layer in &self.layers {
            h = layer.forward(tape, store, h);
        }
        let h = self.final_ln.forward(tape, store, h);
        self.out_proj.forward(tape, store, h)
    }
}

/// Per-word two-layer ReLU network; no interaction between words.
#[derive(Clone, Debug)]
pub struct MlpNet {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl MlpNet {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, cfg: &MlpConfig, rng: &mut seed::Rng) -> Self {
        Self {
            fc1: Linear::new(store, "fc1", cfg.emb_dim, cfg.hidden, true, rng),
            fc2: Linear::new(store, "fc2", cfg.hidden, cfg.emb_dim, true, rng),
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, inst: &DriftInstance) -> Var {
        let e1 = tape.constant(inst.e1.cast());
        let h = self.fc1.forward(tape, store, e1);
        let h = tape.relu(h);
        self.fc2.forward(tape, store, h)
    }
}

/// The architecture of a predictor, bound to parameter ids in a [`ParamStore`].
#[derive(Clone, Debug)]
pub enum Network {
    TransDrift(TransDriftNet),
    Mlp(MlpNet),
    /// `e1 + Δ` with `Δ` a single `1×d` row.
    Additive {
        delta: ParamId,
    },
    NoDrift,
}

impl Network {
    /// Builds the architecture for `cfg`, initialising parameters from the config seed.
    pub fn build<T: Scalar>(cfg: &ModelConfig, store: &mut ParamStore<T>) -> Result<Self> {
        let mut rng = seed::rng(seed::derive(cfg.seed(), "init", 0));
        Ok(match cfg {
            ModelConfig::TransDrift(c) => Network::TransDrift(TransDriftNet::new(store, c, &mut rng)?),
            ModelConfig::Mlp(c) => Network::Mlp(MlpNet::new(store, c, &mut rng)),
            ModelConfig::Additive(c) => Network::Additive {
                delta: store.add("delta", Tensor::zeros(1, c.emb_dim)),
            },
            ModelConfig::NoDrift { .. } => Network::NoDrift,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, inst: &DriftInstance) -> Var {
        match self {
            Network::TransDrift(net) => net.forward(tape, store, inst),
            Network::Mlp(net) => net.forward(tape, store, inst),
            Network::Additive { delta } => {
                let e1 = tape.constant(inst.e1.cast());
                let d = tape.param(store, *delta);
                tape.add_row(e1, d)
            }
            Network::NoDrift => tape.constant(inst.e1.cast()),
        }
    }
}
