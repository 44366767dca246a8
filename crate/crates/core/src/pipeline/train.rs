use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_model, evaluate, Dataset, PipelineError, Result};
use crate::autodiff::{Graph, TensorError};
use crate::models::{Model, ModelError, SceneContext};

/// Optimiser and schedule settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Epochs without a dev macro-F1 improvement before stopping; `None`
    /// runs every epoch.
    pub patience: Option<usize>,
    /// Seeds the scene order.
    pub seed: u64,
    /// Utterances per update. Only 1 is supported.
    pub batch: usize,
    /// Dropout rate. Only 0 is supported.
    pub dropout: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            learning_rate: 0.01,
            patience: Some(5),
            seed: 0,
            batch: 1,
            dropout: 0.0,
        }
    }
}

/// Tracks the best dev score; ties keep the earlier epoch.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: Option<usize>,
    best: Option<(usize, f64)>,
}

impl EarlyStopping {
    pub fn new(patience: Option<usize>) -> Self {
        EarlyStopping {
            patience,
            best: None,
        }
    }

    /// Records `score` for `epoch` and reports whether it is a new best.
    pub fn observe(&mut self, epoch: usize, score: f64) -> bool {
        let improved = self.best.is_none_or(|(_, b)| score > b);
        if improved {
            self.best = Some((epoch, score));
        }
        improved
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.map(|(e, _)| e)
    }

    pub fn should_stop(&self, epoch: usize) -> bool {
        match (self.patience, self.best) {
            (Some(p), Some((b, _))) => epoch >= b + p,
            _ => false,
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc7: f64,
    pub dev_acc7: f64,
    pub dev_acc3: f64,
    pub dev_f1_7: f64,
    pub dev_f1_3: f64,
    /// Dev macro-F1 strictly improved on every earlier epoch.
    pub improved: bool,
    /// This epoch's weights are the ones kept.
    pub best: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub seed: u64,
    pub config: serde_json::Value,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainLog {
    /// One JSON object per epoch, each carrying the seed and config.
    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        for r in &self.epochs {
            let mut v = serde_json::to_value(r).expect("record serialises");
            v["seed"] = self.seed.into();
            v["config"] = self.config.clone();
            out.push_str(&v.to_string());
            out.push('\n');
        }
        out
    }
}

fn diverged(epoch: usize, utterance: &str, e: ModelError) -> PipelineError {
    match e {
        ModelError::Tensor(TensorError::NonFinite { op }) => PipelineError::Divergence {
            epoch,
            utterance: utterance.to_string(),
            detail: format!("non-finite value produced by {op}"),
        },
        other => PipelineError::Model(other),
    }
}

/// Trains `model` in place with per-utterance SGD and leaves the weights
/// of the best dev epoch in it. Scenes are visited in a seeded shuffled
/// order and utterances in dialogue order, so each utterance sees the
/// feature vectors of its real predecessors. `config` is copied into the
/// log verbatim.
pub fn train(
    model: &mut Model,
    train_set: &Dataset,
    dev_set: &Dataset,
    cfg: &TrainConfig,
    config: serde_json::Value,
) -> Result<TrainLog> {
    if cfg.batch != 1 {
        return Err(PipelineError::Argument(format!(
            "batch size {} is not supported; use 1",
            cfg.batch
        )));
    }
    if cfg.dropout != 0.0 {
        return Err(PipelineError::Argument(format!(
            "dropout {} is not supported; use 0",
            cfg.dropout
        )));
    }
    if cfg.epochs == 0 {
        return Err(PipelineError::Argument("epochs must be positive".into()));
    }
    if !(cfg.learning_rate.is_finite() && cfg.learning_rate > 0.0) {
        return Err(PipelineError::Argument(format!(
            "learning rate {} must be positive",
            cfg.learning_rate
        )));
    }
    if train_set.is_empty() || dev_set.is_empty() {
        return Err(PipelineError::Argument(
            "train and dev partitions must be non-empty".into(),
        ));
    }
    train_set.require_labels()?;
    dev_set.require_labels()?;
    check_model(model, train_set)?;
    check_model(model, dev_set)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.scenes.len()).collect();
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best_params = model.params().clone();
    let mut records = Vec::new();
    let mut stopped_early = false;
    let window = model.config().window;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for &si in &order {
            let scene = &train_set.scenes[si];
            let mut ctx = SceneContext::new(window);
            for ex in &scene.examples {
                let gold = ex.gold.expect("labels checked").index();
                let mut g = Graph::new();
                let f = model
                    .forward(&mut g, &ex.x, ctx.history())
                    .map_err(|e| diverged(epoch, &ex.id, e))?;
                let loss = g
                    .softmax_xent(f.logits, gold)
                    .map_err(|e| diverged(epoch, &ex.id, e.into()))?;
                let grads = g
                    .backward(loss)
                    .map_err(|e| diverged(epoch, &ex.id, e.into()))?;
                loss_sum += g.value(loss).item();
                if g.probabilities(loss)
                    .is_some_and(|p| super::argmax(p) == gold)
                {
                    correct += 1;
                }
                let params = model.params_mut();
                params.zero_grad();
                grads.accumulate_into(params);
                params.sgd_step(cfg.learning_rate);
                if let Some(p) = params
                    .iter()
                    .find(|p| p.value.data().iter().any(|v| !v.is_finite()))
                {
                    return Err(PipelineError::Divergence {
                        epoch,
                        utterance: ex.id.clone(),
                        detail: format!("parameter `{}` became non-finite", p.name),
                    });
                }
                ctx.push(g.value(f.h).clone());
            }
        }
        let n = train_set.len() as f64;
        if !loss_sum.is_finite() {
            return Err(PipelineError::Divergence {
                epoch,
                utterance: String::new(),
                detail: format!("epoch loss {loss_sum}"),
            });
        }
        let dev = evaluate(model, dev_set)?;
        let improved = stopper.observe(epoch, dev.f1_7);
        if improved {
            best_params = model.params().clone();
        }
        log::info!(
            "epoch {epoch}: loss {:.4} train acc {:.4} dev acc7 {:.4} dev f1_7 {:.4}{}",
            loss_sum / n,
            correct as f64 / n,
            dev.acc7,
            dev.f1_7,
            if improved { " *" } else { "" }
        );
        records.push(EpochRecord {
            epoch,
            train_loss: loss_sum / n,
            train_acc7: correct as f64 / n,
            dev_acc7: dev.acc7,
            dev_acc3: dev.acc3,
            dev_f1_7: dev.f1_7,
            dev_f1_3: dev.f1_3,
            improved,
            best: false,
        });
        if stopper.should_stop(epoch) {
            stopped_early = epoch < cfg.epochs;
            break;
        }
    }

    let best_epoch = stopper.best_epoch().expect("at least one epoch");
    records[best_epoch - 1].best = true;
    *model.params_mut() = best_params;
    Ok(TrainLog {
        seed: cfg.seed,
        config,
        epochs: records,
        best_epoch,
        stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_scores_stop_at_best_plus_patience() {
        let mut s = EarlyStopping::new(Some(3));
        let mut stopped = None;
        for epoch in 1..=20 {
            s.observe(epoch, 0.5);
            if s.should_stop(epoch) {
                stopped = Some(epoch);
                break;
            }
        }
        assert_eq!(s.best_epoch(), Some(1));
        assert_eq!(stopped, Some(4));
    }

    #[test]
    fn ties_keep_the_earliest_epoch() {
        let mut s = EarlyStopping::new(None);
        assert!(s.observe(1, 0.2));
        assert!(s.observe(2, 0.4));
        assert!(!s.observe(3, 0.4));
        assert_eq!(s.best_epoch(), Some(2));
        assert!(!s.should_stop(100));
    }
}
