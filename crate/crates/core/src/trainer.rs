//! Teacher-forcing training with Adam, validation-accuracy model selection
//! and JSON checkpoints.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::PAD;
use crate::error::{Error, Result};
use crate::models::{example_loss_and_grad, validate_params, Example, Model, ModelConfig};
use crate::smoothing::loss_floor;
use crate::tensor::{Gradients, ParamStore, Rng, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Slack for the per-epoch loss-floor assertion (summation round-off).
pub const FLOOR_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm clip.
    pub clip_norm: f64,
    pub seed: u64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 16,
            learning_rate: 1e-3,
            optimizer: Optimizer::Adam,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: 5.0,
            seed: 0,
            epsilon: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::config("learning_rate must be positive"));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::config(format!(
                "epsilon {} outside [0, 1]",
                self.epsilon
            )));
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return Err(Error::config("clip_norm must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_nats: f64,
    pub val_acc: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    /// `epoch,loss_nats,val_acc,seconds`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss_nats,val_acc,seconds\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.epoch, r.loss_nats, r.val_acc, r.seconds
            ));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Best validation accuracy; ties resolve to the earliest epoch.
    pub fn best(&self) -> Option<&EpochRecord> {
        let mut best: Option<&EpochRecord> = None;
        for r in &self.records {
            if best.is_none_or(|b| r.val_acc > b.val_acc) {
                best = Some(r);
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub config: TrainConfig,
    pub epoch: usize,
    pub val_acc: f64,
}

/// On-disk model snapshot; parameter names serialize in sorted order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: ModelConfig,
    pub params: BTreeMap<String, Tensor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainState>,
}

impl Checkpoint {
    pub fn from_model(model: &Model, train: Option<TrainState>) -> Self {
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            config: model.config.clone(),
            params: model
                .params
                .iter()
                .map(|(k, v)| (k.to_string(), v.clone()))
                .collect(),
            train,
        }
    }

    pub fn to_model(&self) -> Result<Model> {
        let mut params = ParamStore::new();
        for (k, v) in &self.params {
            params.insert(k.clone(), v.clone())?;
        }
        validate_params(&self.config, &params)?;
        Ok(Model {
            config: self.config.clone(),
            params,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| Error::data(format!("malformed checkpoint: {e}")))?;
        let version = raw
            .get("format_version")
            .and_then(serde_json::Value::as_u64);
        if version != Some(CHECKPOINT_VERSION as u64) {
            return Err(Error::data(format!(
                "unsupported checkpoint format_version {version:?}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let ckpt: Checkpoint = serde_json::from_value(raw)
            .map_err(|e| Error::data(format!("malformed checkpoint: {e}")))?;
        for (name, t) in &ckpt.params {
            if t.shape().iter().product::<usize>() != t.len() {
                return Err(Error::data(format!(
                    "parameter {name}: shape and data disagree"
                )));
            }
        }
        ckpt.to_model()?;
        Ok(ckpt)
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    fs::write(path, ckpt.to_json()?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_json(&text)
}

/// Fraction of non-PAD gold positions whose teacher-forced argmax is correct.
pub fn validation_token_accuracy(model: &Model, corpus: &[Example]) -> Result<f64> {
    if corpus.is_empty() {
        return Err(Error::data("validation corpus is empty"));
    }
    let counts: Vec<(usize, usize)> = corpus
        .par_iter()
        .map(|ex| {
            let z = model.logits(&ex.code, ex.ast.as_deref(), ex.prefix())?;
            let mut hit = 0;
            let mut total = 0;
            for (i, &gold) in ex.gold().iter().enumerate() {
                if gold == PAD {
                    continue;
                }
                total += 1;
                let row = z.row(i);
                let mut best = 0;
                for (k, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = k;
                    }
                }
                if best == gold {
                    hit += 1;
                }
            }
            Ok((hit, total))
        })
        .collect::<Result<_>>()?;
    let (hit, total) = counts.iter().fold((0, 0), |(h, t), (a, b)| (h + a, t + b));
    if total == 0 {
        return Err(Error::data("validation corpus has no target tokens"));
    }
    Ok(hit as f64 / total as f64)
}

struct Adam {
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
    step: i32,
}

impl Adam {
    fn new(params: &ParamStore) -> Self {
        let zeros: BTreeMap<String, Vec<f64>> = params
            .iter()
            .map(|(k, t)| (k.to_string(), vec![0.0; t.len()]))
            .collect();
        Adam {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    fn update(&mut self, params: &mut ParamStore, c: &TrainConfig) {
        self.step += 1;
        let bc1 = 1.0 - c.beta1.powi(self.step);
        let bc2 = 1.0 - c.beta2.powi(self.step);
        let (m, v) = (&mut self.m, &mut self.v);
        params.for_each_mut(|name, p, g| {
            let m = m.get_mut(name).expect("adam state");
            let v = v.get_mut(name).expect("adam state");
            for (((pv, gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mv = c.beta1 * *mv + (1.0 - c.beta1) * gv;
                *vv = c.beta2 * *vv + (1.0 - c.beta2) * gv * gv;
                *pv -= c.learning_rate * (*mv / bc1) / ((*vv / bc2).sqrt() + c.adam_eps);
            }
        });
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TrainOptions {
    /// Record wall-clock seconds per epoch; otherwise the column is 0.
    pub timing: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: Checkpoint,
    pub history: TrainHistory,
    pub final_model: Model,
}

/// Trains `model` in place for `config.epochs` epochs and keeps the snapshot
/// with the highest validation token accuracy (earliest on ties).
pub fn train(
    mut model: Model,
    train_set: &[Example],
    val_set: &[Example],
    config: &TrainConfig,
    options: TrainOptions,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::data("training corpus is empty"));
    }
    if val_set.is_empty() {
        return Err(Error::data("validation corpus is empty"));
    }
    let floor = loss_floor(config.epsilon, model.config.tgt_vocab);
    let mut adam = Adam::new(&model.params);
    let mut history = TrainHistory::default();
    let mut best: Option<Checkpoint> = None;
    let mut best_acc = f64::NEG_INFINITY;

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        Rng::derive(config.seed, &[0xe90c, epoch as u64]).shuffle(&mut order);
        let mut epoch_loss = 0.0;
        let mut epoch_tokens = 0usize;

        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let results: Vec<(f64, usize, Gradients)> = batch
                .par_iter()
                .map(|&i| {
                    let mut rng = Rng::derive(config.seed, &[0xd0, epoch as u64, i as u64]);
                    example_loss_and_grad(
                        &model.config,
                        &model.params,
                        &train_set[i],
                        config.epsilon,
                        Some(&mut rng),
                    )
                })
                .collect::<Result<_>>()
                .map_err(|e| match e {
                    Error::Numeric(m) => Error::numeric(format!("epoch {epoch}, batch {b}: {m}")),
                    other => other,
                })?;
            let loss: f64 = results.iter().map(|r| r.0).sum();
            let tokens: usize = results.iter().map(|r| r.1).sum();
            if !loss.is_finite() {
                return Err(Error::numeric(format!(
                    "epoch {epoch}, batch {b}: loss diverged"
                )));
            }
            epoch_loss += loss;
            epoch_tokens += tokens;
            if tokens == 0 {
                continue;
            }
            model.params.zero_grad();
            for r in &results {
                model.params.accumulate(&r.2, 1.0 / tokens as f64);
            }
            let norm = model.params.grad_norm();
            if !norm.is_finite() {
                return Err(Error::numeric(format!(
                    "epoch {epoch}, batch {b}: gradient norm diverged"
                )));
            }
            if norm > config.clip_norm {
                model.params.scale_grads(config.clip_norm / norm);
            }
            adam.update(&mut model.params, config);
        }

        let loss_nats = epoch_loss / epoch_tokens.max(1) as f64;
        if loss_nats < floor - FLOOR_SLACK {
            return Err(Error::numeric(format!(
                "epoch {epoch}: loss {loss_nats} below the smoothing floor {floor}"
            )));
        }
        let val_acc = validation_token_accuracy(&model, val_set)?;
        let seconds = if options.timing {
            started.elapsed().as_secs_f64()
        } else {
            0.0
        };
        history.records.push(EpochRecord {
            epoch,
            loss_nats,
            val_acc,
            seconds,
        });
        if val_acc > best_acc {
            best_acc = val_acc;
            best = Some(Checkpoint::from_model(
                &model,
                Some(TrainState {
                    config: config.clone(),
                    epoch,
                    val_acc,
                }),
            ));
        }
    }

    Ok(TrainOutcome {
        best: best.expect("at least one epoch"),
        history,
        final_model: model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{END, START};
    use crate::models::{build_model, Arch};
    use approx::assert_abs_diff_eq;

    fn cfg(arch: Arch) -> ModelConfig {
        ModelConfig {
            embed_dim: 8,
            hidden_dim: 8,
            code_len: 6,
            ast_len: None,
            comment_len: 5,
            heads: 2,
            layers: 1,
            dropout_rate: 0.0,
            ..ModelConfig::new(arch, 12, 10)
        }
    }

    fn data() -> Vec<Example> {
        (0..6)
            .map(|i| Example {
                code: vec![4 + i % 4, 5 + i % 3, 0, 0],
                ast: None,
                target: vec![START, 4 + i % 4, 5 + i % 5, END, 0],
            })
            .collect()
    }

    fn tc(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 2,
            learning_rate: 1e-2,
            seed: 9,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn training_is_deterministic() {
        let m = build_model(&cfg(Arch::Attendgru), 1).unwrap();
        let d = data();
        let a = train(m.clone(), &d, &d, &tc(3), TrainOptions::default()).unwrap();
        let b = train(m, &d, &d, &tc(3), TrainOptions::default()).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.best, b.best);
        assert_eq!(a.final_model, b.final_model);
        assert_eq!(a.history.records.len(), 3);
    }

    #[test]
    fn best_checkpoint_is_max_accuracy_earliest() {
        let m = build_model(&cfg(Arch::Transformer), 1).unwrap();
        let d = data();
        let out = train(m, &d, &d, &tc(6), TrainOptions::default()).unwrap();
        let best = out.history.best().unwrap();
        let st = out.best.train.as_ref().unwrap();
        assert_eq!(st.epoch, best.epoch);
        assert_eq!(st.val_acc, best.val_acc);
        let max = out
            .history
            .records
            .iter()
            .map(|r| r.val_acc)
            .fold(f64::MIN, f64::max);
        assert_eq!(st.val_acc, max);
        assert!(out.history.records[..st.epoch - 1]
            .iter()
            .all(|r| r.val_acc < max));
        let reloaded = out.best.to_model().unwrap();
        let acc = validation_token_accuracy(&reloaded, &d).unwrap();
        assert_abs_diff_eq!(acc, st.val_acc, epsilon = 1e-9);
    }

    #[test]
    fn pad_targets_carry_no_loss() {
        let c = cfg(Arch::Attendgru);
        let m = build_model(&c, 2).unwrap();
        let short = Example {
            code: vec![4, 5],
            ast: None,
            target: vec![START, 6, END],
        };
        let padded = Example {
            target: vec![START, 6, END, PAD, PAD],
            ..short.clone()
        };
        let (a, na, ga) = example_loss_and_grad(&c, &m.params, &short, 0.1, None).unwrap();
        let (b, nb, gb) = example_loss_and_grad(&c, &m.params, &padded, 0.1, None).unwrap();
        assert_eq!(na, nb);
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        for (name, g) in ga.iter() {
            for (x, y) in g.data().iter().zip(gb.get(name).unwrap().data()) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn loss_never_below_floor() {
        let m = build_model(&cfg(Arch::Attendgru), 3).unwrap();
        let d = data();
        let c = TrainConfig {
            epsilon: 0.4,
            ..tc(5)
        };
        let out = train(m, &d, &d, &c, TrainOptions::default()).unwrap();
        let floor = loss_floor(0.4, 10);
        assert!(out.history.records.iter().all(|r| r.loss_nats >= floor));
    }

    #[test]
    fn accuracy_bounds_and_errors() {
        let m = build_model(&cfg(Arch::Attendgru), 4).unwrap();
        let acc = validation_token_accuracy(&m, &data()).unwrap();
        assert!((0.0..=1.0).contains(&acc));
        assert!(matches!(
            validation_token_accuracy(&m, &[]),
            Err(Error::Data(_))
        ));
        assert!(train(m.clone(), &[], &data(), &tc(1), TrainOptions::default()).is_err());
        let bad = TrainConfig { epochs: 0, ..tc(1) };
        assert!(matches!(
            train(m, &data(), &data(), &bad, TrainOptions::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn checkpoint_round_trip_is_byte_stable() {
        let m = build_model(&cfg(Arch::Transformer), 5).unwrap();
        let ck = Checkpoint::from_model(
            &m,
            Some(TrainState {
                config: tc(1),
                epoch: 1,
                val_acc: 0.25,
            }),
        );
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.json");
        save_checkpoint(&ck, &p).unwrap();
        let loaded = load_checkpoint(&p).unwrap();
        assert_eq!(loaded, ck);
        let q = dir.path().join("b.json");
        save_checkpoint(&loaded, &q).unwrap();
        assert_eq!(fs::read(&p).unwrap(), fs::read(&q).unwrap());
        let m2 = loaded.to_model().unwrap();
        let code = [4, 5, 6];
        assert_eq!(
            m.forward_step(&code, None, &[START, 4]).unwrap(),
            m2.forward_step(&code, None, &[START, 4]).unwrap()
        );
        assert_eq!(
            m.greedy_decode(&code, None, 4).unwrap(),
            m2.greedy_decode(&code, None, 4).unwrap()
        );
    }

    #[test]
    fn corrupted_checkpoints_are_rejected() {
        let m = build_model(&cfg(Arch::Attendgru), 5).unwrap();
        let json = Checkpoint::from_model(&m, None).to_json().unwrap();
        let bad_shape = json.replacen("\"shape\":[12,8]", "\"shape\":[12,9]", 1);
        assert_ne!(bad_shape, json);
        assert!(matches!(
            Checkpoint::from_json(&bad_shape),
            Err(Error::Data(_))
        ));
        let bad_version = json.replacen("\"format_version\":1", "\"format_version\":7", 1);
        assert!(matches!(
            Checkpoint::from_json(&bad_version),
            Err(Error::Data(_))
        ));
        assert!(matches!(Checkpoint::from_json("{"), Err(Error::Data(_))));
        let mut v: serde_json::Value = serde_json::from_str(&json).unwrap();
        v["params"].as_object_mut().unwrap().remove("out.b");
        assert!(Checkpoint::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn history_csv_layout() {
        let h = TrainHistory {
            records: vec![EpochRecord {
                epoch: 1,
                loss_nats: 0.5,
                val_acc: 0.25,
                seconds: 0.0,
            }],
        };
        assert_eq!(
            h.to_csv(),
            "epoch,loss_nats,val_acc,seconds\n1,0.5,0.25,0\n"
        );
    }
}
