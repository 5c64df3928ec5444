//! Trained predictors: prediction, loss, fitting and persistence.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed::{EmbeddingMeta, EmbeddingSet, SmallContext};
use crate::error::{Error, Result};
use crate::numeric::{load_checkpoint, save_checkpoint, warmup_lr, AdamConfig, Gradients, ParamStore, Tape, Tensor};
use crate::seed;

use super::instance::DriftInstance;
use super::net::{AdditiveLoss, ModelConfig, Network, PredictorKind, Schedule};

/// Added to both norms in the cosine loss.
pub const COSINE_EPS: f64 = 1e-8;
/// Target rows shorter than this are rejected.
pub const DEGENERATE_NORM: f64 = 1e-12;

fn row_norm(row: &[f32]) -> f64 {
    row.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
}

fn check_targets(words: Option<&[String]>, target: &Tensor<f32>) -> Result<()> {
    for r in 0..target.rows() {
        let norm = row_norm(target.row(r));
        if norm < DEGENERATE_NORM {
            let word = words.map_or_else(|| format!("row {r}"), |w| w[r].clone());
            return Err(Error::DegenerateRow { word, norm });
        }
    }
    Ok(())
}

/// Mean over rows of `1 − cos(pred_row, target_row)`, with [`COSINE_EPS`] added to each norm.
pub fn cosine_embedding_loss(pred: &Tensor<f32>, target: &Tensor<f32>) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    check_targets(None, target)?;
    if pred.rows() == 0 {
        return Ok(0.0);
    }
    let total: f64 = (0..pred.rows())
        .map(|r| {
            let (p, t) = (pred.row(r), target.row(r));
            let dot: f64 = p.iter().zip(t).map(|(&a, &b)| a as f64 * b as f64).sum();
            1.0 - dot / ((row_norm(p) + COSINE_EPS) * (row_norm(t) + COSINE_EPS))
        })
        .sum();
    Ok(total / pred.rows() as f64)
}

fn mean_row_cosine(pred: &Tensor<f32>, target: &Tensor<f32>) -> f64 {
    1.0 - cosine_embedding_loss(pred, target).unwrap_or(f64::NAN)
}

/// One line of the training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_cosine: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept; `None` when nothing was trained.
    pub best_epoch: Option<usize>,
}

impl History {
    pub fn best_val_cosine(&self) -> Option<f64> {
        self.best_epoch.map(|e| self.epochs[e].val_cosine)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for rec in &self.epochs {
            out.push_str(&serde_json::to_string(rec).expect("history record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let epochs = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<Vec<EpochRecord>, _>>()?;
        let best_epoch = epochs
            .iter()
            .enumerate()
            .fold(None, |best: Option<(usize, f64)>, (i, r)| match best {
                Some((_, v)) if v >= r.val_cosine => best,
                _ => Some((i, r.val_cosine)),
            })
            .map(|(i, _)| i);
        Ok(Self { epochs, best_epoch })
    }
}

/// A predictor with its parameters. Immutable after training.
#[derive(Clone, Debug)]
pub struct PredictorModel {
    pub config: ModelConfig,
    pub params: ParamStore<f32>,
    pub net: Network,
}

impl PredictorModel {
    /// Fresh model with parameters initialised from the config seed.
    pub fn new(config: ModelConfig) -> Result<Self> {
        let mut params = ParamStore::new();
        let net = Network::build(&config, &mut params)?;
        Ok(Self { config, params, net })
    }

    pub fn kind(&self) -> PredictorKind {
        self.config.kind()
    }

    fn check_instance(&self, inst: &DriftInstance) -> Result<()> {
        inst.validate()?;
        if inst.dim() != self.config.emb_dim() {
            return Err(Error::Alignment(format!(
                "instance dimension {} does not match model dimension {}",
                inst.dim(),
                self.config.emb_dim()
            )));
        }
        Ok(())
    }

    /// Predicted `t+1` embeddings, rows aligned with `inst.words`.
    pub fn predict(&self, inst: &DriftInstance) -> Result<Tensor<f32>> {
        self.check_instance(inst)?;
        if self.kind() == PredictorKind::NoDrift {
            return Ok(inst.e1.clone());
        }
        let mut tape = Tape::new();
        let out = self.net.forward(&mut tape, &self.params, inst);
        let pred = tape.value(out).clone();
        if !pred.is_finite() {
            return Err(Error::NumericDivergence("non-finite prediction".into()));
        }
        Ok(pred)
    }

    pub fn predict_set(&self, e1: &EmbeddingSet, small: Option<&SmallContext>) -> Result<EmbeddingSet> {
        let inst = DriftInstance::for_prediction(e1, small)?;
        let pred = self.predict(&inst)?;
        EmbeddingSet::new(
            e1.vocab.clone(),
            pred,
            EmbeddingMeta {
                seed: e1.meta.seed,
                corpus_id: format!("{}:{}", self.kind(), e1.meta.corpus_id),
                trainer: None,
            },
        )
    }

    /// Mean over instances of the per-instance mean row cosine.
    pub fn mean_cosine(&self, instances: &[DriftInstance]) -> Result<f64> {
        let per = self.instance_cosines(instances)?;
        Ok(per.iter().sum::<f64>() / per.len().max(1) as f64)
    }

    pub fn instance_cosines(&self, instances: &[DriftInstance]) -> Result<Vec<f64>> {
        instances
            .par_iter()
            .map(|inst| {
                let target = inst.target()?;
                check_targets(Some(&inst.words), target)?;
                Ok(mean_row_cosine(&self.predict(inst)?, target))
            })
            .collect()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        save_checkpoint(dir, &self.params, &serde_json::to_value(&self.config)?)
    }

    /// Rebuilds the architecture from `config.json` and fills it from `params.bin`.
    pub fn load(dir: &Path) -> Result<Self> {
        let (stored, config) = load_checkpoint(dir)?;
        let config: ModelConfig = serde_json::from_value(config)?;
        let mut model = Self::new(config)?;
        let path = dir.join("params.bin");
        if stored.len() != model.params.len() {
            return Err(Error::format(
                &path,
                format!("{} tensors stored, {} expected", stored.len(), model.params.len()),
            ));
        }
        for id in model.params.ids().collect::<Vec<_>>() {
            let name = model.params.name(id).to_string();
            let src = stored
                .id(&name)
                .ok_or_else(|| Error::format(&path, format!("missing tensor {name}")))?;
            let value = stored.value(src);
            if value.shape() != model.params.value(id).shape() {
                return Err(Error::format(
                    &path,
                    format!("tensor {name} has shape {:?}", value.shape()),
                ));
            }
            *model.params.value_mut(id) = value.clone();
        }
        Ok(model)
    }
}

/// Squared-loss closed form: mean over instances and words of `e2_row − e1_row`.
pub fn additive_delta_closed_form(instances: &[DriftInstance]) -> Result<Vec<f64>> {
    let first = instances
        .first()
        .ok_or_else(|| Error::InvalidConfig("no training instances".into()))?;
    let d = first.dim();
    let mut sum = vec![0.0f64; d];
    let mut count = 0usize;
    for inst in instances {
        let target = inst.target()?;
        if inst.dim() != d {
            return Err(Error::Alignment("instances differ in dimension".into()));
        }
        for r in 0..inst.len() {
            for (s, (&a, &b)) in sum.iter_mut().zip(inst.e1.row(r).iter().zip(target.row(r))) {
                *s += b as f64 - a as f64;
            }
        }
        count += inst.len();
    }
    if count == 0 {
        return Err(Error::Data("training instances have no rows".into()));
    }
    Ok(sum.into_iter().map(|s| s / count as f64).collect())
}

/// Learns the additive shift `Δ`.
pub fn fit_additive(train: &[DriftInstance], loss: AdditiveLoss) -> Result<Vec<f64>> {
    match loss {
        AdditiveLoss::Squared => additive_delta_closed_form(train),
        AdditiveLoss::Cosine => {
            let mut cfg = super::net::AdditiveConfig::synthetic();
            cfg.emb_dim = train.first().map_or(cfg.emb_dim, |i| i.dim());
            let (model, _) = train_model(ModelConfig::Additive(cfg), train, &[])?;
            let Network::Additive { delta } = model.net else {
                unreachable!("additive config builds an additive network")
            };
            Ok(model.params.value(delta).data().iter().map(|&x| x as f64).collect())
        }
    }
}

fn instance_loss_and_grads(
    net: &Network,
    params: &ParamStore<f32>,
    inst: &DriftInstance,
) -> Result<(f64, Gradients<f32>)> {
    let target = inst.target()?;
    let mut tape = Tape::new();
    let pred = net.forward(&mut tape, params, inst);
    let t = tape.constant(target.clone());
    let cos = tape.row_cosine(pred, t, COSINE_EPS as f32);
    let mean = tape.mean(cos);
    let loss = tape.affine(mean, -1.0, 1.0);
    let value = tape.value(loss).get(0, 0) as f64;
    Ok((value, tape.backward(loss)?))
}

/// Trains a predictor with Adam under linear warmup, keeping the parameters of
/// the epoch with the best validation mean cosine (the last epoch when `val` is empty).
pub fn train_model(
    config: ModelConfig,
    train: &[DriftInstance],
    val: &[DriftInstance],
) -> Result<(PredictorModel, History)> {
    if train.is_empty() {
        return Err(Error::InvalidConfig("no training instances".into()));
    }
    let mut model = PredictorModel::new(config)?;
    for inst in train.iter().chain(val) {
        model.check_instance(inst)?;
        check_targets(Some(&inst.words), inst.target()?)?;
    }
    let mut history = History::default();
    if let ModelConfig::Additive(c) = &model.config {
        if c.loss == AdditiveLoss::Squared {
            let delta = additive_delta_closed_form(train)?;
            let Network::Additive { delta: id } = model.net else {
                unreachable!("additive config builds an additive network")
            };
            *model.params.value_mut(id) = Tensor::from_vec(1, delta.len(), delta.iter().map(|&x| x as f32).collect())?;
            return Ok((model, history));
        }
    }
    let Some(sched) = model.config.schedule() else {
        return Ok((model, history));
    };
    sched_check(&sched)?;
    let adam = AdamConfig::default();
    let mut best: Option<(f64, ParamStore<f32>)> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..sched.max_epochs {
        let lr = warmup_lr(sched.peak_lr, sched.warmup_epochs, epoch);
        let mut rng = seed::rng(seed::derive(sched.seed, "shuffle", epoch as u64));
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        let mut loss_sum = 0.0;
        for (b, batch) in order.chunks(sched.batch_instances).enumerate() {
            let results: Vec<Result<(f64, Gradients<f32>)>> = batch
                .par_iter()
                .map(|&i| instance_loss_and_grads(&model.net, &model.params, &train[i]))
                .collect();
            model.params.zero_grad();
            for r in results {
                let (loss, grads) = r?;
                if !loss.is_finite() {
                    return Err(Error::NumericDivergence(format!(
                        "non-finite loss at epoch {epoch}, batch {b}"
                    )));
                }
                loss_sum += loss;
                model.params.accumulate(&grads);
            }
            model.params.scale_grads(1.0 / batch.len() as f32);
            model
                .params
                .adam_step(lr, &adam)
                .map_err(|e| Error::NumericDivergence(format!("epoch {epoch}, batch {b}: {e}")))?;
        }
        let train_loss = loss_sum / train.len() as f64;
        let val_cosine = if val.is_empty() {
            1.0 - train_loss
        } else {
            model.mean_cosine(val)?
        };
        if !val_cosine.is_finite() {
            return Err(Error::NumericDivergence(format!(
                "non-finite validation cosine at epoch {epoch}"
            )));
        }
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_cosine,
            lr,
        });
        let improved = val.is_empty() || best.as_ref().is_none_or(|(v, _)| val_cosine > *v);
        if improved {
            history.best_epoch = Some(epoch);
            best = Some((val_cosine, model.params.clone()));
        }
        log::debug!(
            "{} epoch {epoch}: loss {train_loss:.5} val {val_cosine:.5}",
            model.kind()
        );
    }
    if let Some((_, params)) = best {
        model.params = params;
    }
    Ok((model, history))
}

fn sched_check(s: &Schedule) -> Result<()> {
    if s.batch_instances == 0 {
        return Err(Error::InvalidConfig("batch_instances must be positive".into()));
    }
    if !(s.peak_lr.is_finite() && s.peak_lr > 0.0) {
        return Err(Error::InvalidConfig(format!("peak_lr {} must be positive", s.peak_lr)));
    }
    Ok(())
}
