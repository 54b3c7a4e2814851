use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{derive_seed, Sample};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::models::net::update_running;
use crate::models::bind;
use crate::models::{
    encode_inputs, graph_loss, LossTerms, Mode, ModelConfig, Network, Targets, DB_OFFSET, DB_SCALE,
    HEIGHT_SCALE,
};
use crate::nn::{Adam, Graph, ParamStore, Tensor};
use crate::propagation::{Band, Beam, SignalMap};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Shuffling seed.
    pub seed: u64,
    /// Optional cap on optimizer steps.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 8,
            lr: 1e-3,
            seed: 0,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.batch_size < 2 {
            v.push(format!("batch_size {} must be >= 2 for batch norm", self.batch_size));
        }
        if !(self.lr > 0.0) {
            v.push("lr must be > 0".into());
        }
        if self.epochs == 0 {
            v.push("epochs must be positive".into());
        }
        v
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub total: f64,
    pub ss: f64,
    pub seg: Option<f64>,
    pub cov: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_total: f64,
    pub val_total: Option<f64>,
    pub val_ss: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: Vec<StepLog>,
    pub epochs: Vec<EpochLog>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
}

/// Trained structure, weights and metadata.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub network: Network,
    pub params: ParamStore<f32>,
}

impl Checkpoint {
    pub fn metadata(&self, extra: serde_json::Value) -> serde_json::Value {
        serde_json::json!({
            "model": self.network.config,
            "input_layout": self.network.config.input_layout().iter().map(|p| p.name()).collect::<Vec<_>>(),
            "normalization": {
                "db_offset": DB_OFFSET,
                "db_scale": DB_SCALE,
                "height_scale": HEIGHT_SCALE,
            },
            "extra": extra,
        })
    }

    pub fn save(&self, path: &Path, extra: serde_json::Value) -> Result<()> {
        self.params.save(path, &self.metadata(extra))
    }

    pub fn load(path: &Path) -> Result<(Self, serde_json::Value)> {
        let (params, meta) = ParamStore::load(path)?;
        let cfg: ModelConfig = serde_json::from_value(meta["model"].clone()).map_err(|e| Error::Corrupt {
            offset: 0,
            reason: format!("checkpoint model config: {e}"),
        })?;
        let (network, fresh) = Network::new(&cfg)?;
        let same = fresh.len() == params.len()
            && fresh
                .iter()
                .zip(params.iter())
                .all(|((_, a), (_, b))| a.name == b.name && a.value.shape() == b.value.shape() && a.trainable == b.trainable);
        if !same {
            return Err(Error::Corrupt {
                offset: 0,
                reason: "checkpoint tensors do not match the model configuration".into(),
            });
        }
        Ok((Self { network, params }, meta))
    }
}

/// Model output for one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub directions: Vec<SignalMap>,
    pub nlos_prob: Option<Grid<f32>>,
    pub coverage: Option<SignalMap>,
}

fn batch_terms(
    net: &Network,
    store: &ParamStore<f32>,
    inputs: &[&Tensor<f32>],
    samples: &[&Sample],
    mode: Mode,
) -> Result<(Graph<f32>, crate::nn::Var, LossTerms<f32>, crate::models::Bound, Vec<crate::models::BnBatch>)> {
    let mut g = Graph::new();
    let bound = bind(&mut g, store);
    let owned: Vec<Tensor<f32>> = inputs.iter().map(|t| (*t).clone()).collect();
    let x = g.constant(Tensor::stack(&owned)?);
    let fwd = net.forward(&mut g, store, &bound, x, mode)?;
    let targets = Targets::from_samples(samples)?;
    let (loss, terms) = graph_loss(&mut g, &fwd, &targets, &net.config)?;
    Ok((g, loss, terms, bound, fwd.bn_batch))
}

fn finite_or_abort(terms: &LossTerms<f32>, step: usize, epoch: usize) -> Result<()> {
    if terms.total.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!(
            "loss at step {step} (epoch {epoch}): total {} ss {} seg {:?} cov {:?}",
            terms.total, terms.ss, terms.seg, terms.cov
        )))
    }
}

/// Mean loss terms over `samples` with eval-mode batch norm.
pub fn evaluate_loss(ckpt: &Checkpoint, samples: &[Sample]) -> Result<Option<(f64, f64)>> {
    if samples.is_empty() {
        return Ok(None);
    }
    let mut total = 0.0;
    let mut ss = 0.0;
    for chunk in samples.chunks(8) {
        let inputs = chunk
            .iter()
            .map(|s| encode_inputs(s, &ckpt.network.config))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Tensor<f32>> = inputs.iter().collect();
        let srefs: Vec<&Sample> = chunk.iter().collect();
        let (_, _, terms, _, _) = batch_terms(&ckpt.network, &ckpt.params, &refs, &srefs, Mode::Eval)?;
        total += terms.total as f64 * chunk.len() as f64;
        ss += terms.ss as f64 * chunk.len() as f64;
    }
    let n = samples.len() as f64;
    Ok(Some((total / n, ss / n)))
}

/// Adam training with per-epoch seeded shuffling. The parameters of the
/// epoch with the lowest validation loss are returned (the last epoch when
/// there is no validation data). A trailing batch of one is dropped.
pub fn train(
    train_set: &[Sample],
    val_set: &[Sample],
    model: &ModelConfig,
    tc: &TrainConfig,
) -> Result<(Checkpoint, TrainReport)> {
    let mut v = model.violations();
    v.extend(tc.violations());
    if !v.is_empty() {
        return Err(Error::InvalidParam(v.join("; ")));
    }
    if train_set.len() < 2 {
        return Err(Error::InvalidParam("training needs at least two samples".into()));
    }
    let (network, mut store) = Network::new(model)?;
    let inputs = train_set
        .iter()
        .map(|s| encode_inputs(s, model))
        .collect::<Result<Vec<_>>>()?;
    let mut opt = Adam::new(tc.lr);
    let mut report = TrainReport::default();
    let mut best: Option<(f64, ParamStore<f32>)> = None;
    let mut step = 0usize;

    'epochs: for epoch in 0..tc.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(tc.seed, epoch as u64)));
        let mut epoch_sum = 0.0;
        let mut epoch_n = 0usize;
        for batch in order.chunks(tc.batch_size) {
            if batch.len() < 2 {
                continue;
            }
            if tc.max_steps.is_some_and(|m| step >= m) {
                break 'epochs;
            }
            let xs: Vec<&Tensor<f32>> = batch.iter().map(|&i| &inputs[i]).collect();
            let ss: Vec<&Sample> = batch.iter().map(|&i| &train_set[i]).collect();
            let (g, loss, terms, bound, bn) = batch_terms(&network, &store, &xs, &ss, Mode::Train)?;
            finite_or_abort(&terms, step, epoch)?;
            let mut grads = g.backward(loss)?;
            let grads = bound.collect(&mut grads, &store);
            drop(g);
            opt.step(&mut store, &grads)?;
            let (h, w) = train_set[batch[0]].dims();
            update_running(&mut store, &bn, batch.len() * h * w);
            if !store.all_finite() {
                return Err(Error::NonFinite(format!("parameters after step {step} (epoch {epoch})")));
            }
            report.steps.push(StepLog {
                step,
                epoch,
                total: terms.total as f64,
                ss: terms.ss as f64,
                seg: terms.seg.map(f64::from),
                cov: terms.cov.map(f64::from),
            });
            epoch_sum += terms.total as f64 * batch.len() as f64;
            epoch_n += batch.len();
            step += 1;
        }
        let snapshot = Checkpoint {
            network: network.clone(),
            params: store.clone(),
        };
        let val = evaluate_loss(&snapshot, val_set)?;
        report.epochs.push(EpochLog {
            epoch,
            train_total: if epoch_n > 0 { epoch_sum / epoch_n as f64 } else { f64::NAN },
            val_total: val.map(|v| v.0),
            val_ss: val.map(|v| v.1),
        });
        if let Some((vt, _)) = val {
            if !vt.is_finite() {
                return Err(Error::NonFinite(format!("validation loss after epoch {epoch}")));
            }
            if best.as_ref().is_none_or(|(b, _)| vt < *b) {
                best = Some((vt, store.clone()));
                report.best_epoch = epoch;
            }
        } else {
            report.best_epoch = epoch;
        }
    }
    let params = match best {
        Some((_, p)) => p,
        None => store,
    };
    Ok((Checkpoint { network, params }, report))
}

/// Eval-mode predictions; pure with respect to the checkpoint.
pub fn predict(ckpt: &Checkpoint, samples: &[Sample]) -> Result<Vec<Prediction>> {
    let net = &ckpt.network;
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(4) {
        let inputs = chunk
            .iter()
            .map(|s| encode_inputs(s, &net.config))
            .collect::<Result<Vec<_>>>()?;
        let mut g = Graph::new();
        let bound = bind(&mut g, &ckpt.params);
        let x = g.constant(Tensor::stack(&inputs)?);
        let fwd = net.forward(&mut g, &ckpt.params, &bound, x, Mode::Eval)?;
        let (n, _, h, w) = g.value(fwd.ss).dims4()?;
        let plane = h * w;
        let ss = g.value(fwd.ss).data();
        for b in 0..n {
            let directions = (0..8)
                .map(|d| {
                    let base = (b * 8 + d) * plane;
                    SignalMap {
                        values: Grid::from_vec(h, w, ss[base..base + plane].to_vec()).expect("plane"),
                        band: Band::High,
                        beam: Beam::Direction(d as u8),
                    }
                })
                .collect();
            let one = |v: crate::nn::Var| {
                let data = g.value(v).data();
                Grid::from_vec(h, w, data[b * plane..(b + 1) * plane].to_vec()).expect("plane")
            };
            out.push(Prediction {
                directions,
                nlos_prob: fwd.seg.map(one),
                coverage: fwd.cov.map(|v| SignalMap {
                    values: one(v),
                    band: Band::Low,
                    beam: Beam::Omni,
                }),
            });
        }
    }
    Ok(out)
}
