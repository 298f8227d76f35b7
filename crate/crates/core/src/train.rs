//! Mini-batch training with Adam, best-validation model selection and
//! JSON-lines epoch logs.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{make_batches, Batch, Utterance};
use crate::error::{invalid, Error, Result};
use crate::metrics::EvalReport;
use crate::model::{loss, ForwardPass, Model, ModelInput, Prediction};
use crate::nn::{Adam, Module, Real};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip: Option<f64>,
    /// Stop after this many epochs without a better validation UA.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 32,
            lr: 0.001,
            seed: 0,
            clip: None,
            patience: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(invalid!("batch size must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(invalid!("learning rate must be positive, got {}", self.lr));
        }
        if let Some(c) = self.clip {
            if !(c > 0.0) {
                return Err(invalid!("clip norm must be positive, got {c}"));
            }
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub steps: usize,
    /// Mean loss over the epoch's training utterances.
    pub loss: f64,
    /// Accuracies of the predictions made while training (before each update).
    pub train_wa: f64,
    pub train_ua: f64,
    pub val_wa: Option<f64>,
    pub val_ua: Option<f64>,
    pub best: bool,
}

/// Owns the model and optimizer and enforces forward-then-backward order.
#[derive(Debug)]
pub struct Trainer<F> {
    pub model: Model<F>,
    pub adam: Adam<F>,
    pub clip: Option<f64>,
    pending: Option<Pending<F>>,
}

#[derive(Debug)]
struct Pending<F> {
    pass: ForwardPass<F>,
    target: usize,
}

impl<F: Real> Trainer<F> {
    pub fn new(model: Model<F>, lr: f64, clip: Option<f64>) -> Self {
        Trainer {
            model,
            adam: Adam::new(lr),
            clip,
            pending: None,
        }
    }

    /// Forward pass whose activations are kept for the next [`backward`](Self::backward).
    pub fn forward(&mut self, input: &ModelInput<'_, F>, target: usize) -> Result<(f64, Prediction<F>)> {
        let pass = self.model.forward(input)?;
        let l = loss(&pass.prediction, target)?;
        let pred = pass.prediction.clone();
        self.pending = Some(Pending { pass, target });
        Ok((l.value, pred))
    }

    /// Accumulates `scale * dL/dθ` for the most recent forward pass.
    pub fn backward(&mut self, input: &ModelInput<'_, F>, scale: F) -> Result<()> {
        let p = self
            .pending
            .take()
            .ok_or_else(|| Error::State("backward called without a preceding forward".into()))?;
        self.model.backward(input, &p.pass, p.target, scale)
    }

    pub fn zero_grad(&mut self) {
        self.pending = None;
        self.model.zero_grad();
    }

    /// Optional clipping then one Adam update.
    pub fn step(&mut self) -> Result<()> {
        if let Some(c) = self.clip {
            self.model.clip_grad_norm(c);
        }
        self.adam.step(self.model.params_mut())
    }

    /// One optimizer step on the mean loss of `batch`. Returns the per-member
    /// losses and predicted labels.
    pub fn train_batch(&mut self, batch: &Batch<F>, corpus: &[Utterance<F>]) -> Result<Vec<(f64, usize)>> {
        self.zero_grad();
        let scale = F::one() / F::lit(batch.len() as f64);
        let mut out = Vec::with_capacity(batch.len());
        for (b, &idx) in batch.indices.iter().enumerate() {
            let utt = &corpus[idx];
            let (features, embeddings) = (batch.member_features(b), batch.member_embeddings(b));
            let input = ModelInput {
                features: &features,
                frames: batch.frame_lens[b],
                embeddings: &embeddings,
                words: batch.token_lens[b],
                token_ids: &utt.token_ids,
                spans: utt.spans.as_deref(),
            };
            let run = |t: &mut Self| -> Result<(f64, usize)> {
                let (l, pred) = t.forward(&input, utt.label)?;
                t.backward(&input, scale)?;
                Ok((l, pred.label))
            };
            out.push(run(self).map_err(|e| e.in_utterance(&utt.id))?);
        }
        self.step()?;
        Ok(out)
    }
}

/// Predictions of `model` on `utts`, in order.
pub fn predict<F: Real>(model: &Model<F>, utts: &[Utterance<F>]) -> Result<Vec<Prediction<F>>> {
    utts.par_iter().map(|u| model.forward_full(u).map(|(_, p)| p)).collect()
}

pub fn evaluate<F: Real>(model: &Model<F>, utts: &[Utterance<F>]) -> Result<EvalReport> {
    let preds = predict(model, utts)?;
    let truth: Vec<usize> = utts.iter().map(|u| u.label).collect();
    let labels: Vec<usize> = preds.iter().map(|p| p.label).collect();
    EvalReport::from_predictions(&truth, &labels)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<F> {
    /// Weights with the best validation UA (the final weights when there is
    /// no validation set).
    pub best: Model<F>,
    pub best_epoch: usize,
    pub logs: Vec<EpochLog>,
    pub stopped_early: bool,
}

/// Trains `model` on `train`, selecting by UA on `val`. `on_epoch` sees each
/// log line as it is produced.
pub fn train<F: Real>(
    model: Model<F>,
    train_set: &[Utterance<F>],
    val_set: &[Utterance<F>],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog) -> Result<()>,
) -> Result<TrainOutcome<F>> {
    cfg.validate()?;
    if train_set.is_empty() && cfg.epochs > 0 {
        return Err(invalid!("training set is empty"));
    }
    if model.variant().needs_spans() {
        if let Some(u) = train_set.iter().chain(val_set).find(|u| u.spans.is_none()) {
            return Err(invalid!("utterance {} has no word spans, which the hard variant needs", u.id));
        }
    }
    let mut trainer = Trainer::new(model, cfg.lr, cfg.clip);
    let mut best = trainer.model.clone();
    let (mut best_epoch, mut best_ua) = (0, f64::NEG_INFINITY);
    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut stale = 0;
    let mut stopped_early = false;
    let mut step = 0;

    for epoch in 1..=cfg.epochs {
        let batches = make_batches(train_set, cfg.batch_size, cfg.seed, epoch);
        let (mut total, mut truth, mut predicted) = (0.0, Vec::new(), Vec::new());
        for batch in &batches {
            step += 1;
            let results = trainer.train_batch(batch, train_set)?;
            for (&(l, p), &y) in results.iter().zip(&batch.labels) {
                if !l.is_finite() {
                    return Err(Error::Numeric(format!("non-finite loss at epoch {epoch}, step {step}")));
                }
                total += l;
                truth.push(y);
                predicted.push(p);
            }
            if trainer.model.params().iter().any(|p| !p.value.is_finite()) {
                return Err(Error::Numeric(format!("non-finite weights after epoch {epoch}, step {step}")));
            }
        }
        let train_report = EvalReport::from_predictions(&truth, &predicted)?;
        let val_report = if val_set.is_empty() {
            None
        } else {
            Some(evaluate(&trainer.model, val_set)?)
        };
        let improved = match &val_report {
            Some(r) => r.ua > best_ua,
            None => true,
        };
        if improved {
            best_ua = val_report.as_ref().map_or(f64::NEG_INFINITY, |r| r.ua);
            best = trainer.model.clone();
            best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
        }
        let log = EpochLog {
            epoch,
            steps: step,
            loss: total / truth.len() as f64,
            train_wa: train_report.wa,
            train_ua: train_report.ua,
            val_wa: val_report.as_ref().map(|r| r.wa),
            val_ua: val_report.as_ref().map(|r| r.ua),
            best: improved,
        };
        log::info!(
            "epoch {epoch}: loss {:.4} train WA {:.4} val UA {}",
            log.loss,
            log.train_wa,
            log.val_ua.map_or("-".into(), |v| format!("{v:.4}"))
        );
        on_epoch(&log)?;
        logs.push(log);
        if val_report.is_some() && stale >= cfg.patience {
            stopped_early = epoch < cfg.epochs;
            break;
        }
    }
    Ok(TrainOutcome {
        best,
        best_epoch,
        logs,
        stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, Variant};
    use crate::nn::Tensor;
    use crate::rng::substream;
    use rand::Rng as _;

    fn corpus(n: usize) -> Vec<Utterance<f64>> {
        let mut rng = substream(1, "test/corpus");
        (0..n)
            .map(|i| {
                let frames = 4 + i % 3;
                let label = i % 4;
                let mut f: Vec<f64> = (0..frames * 5).map(|_| rng.gen_range(-0.5..0.5)).collect();
                f[label] += 2.0;
                let e: Vec<f64> = (0..2 * 4).map(|_| rng.gen_range(-0.5..0.5)).collect();
                Utterance {
                    id: format!("u{i}"),
                    features: Tensor::from_vec(&[frames, 5], f).unwrap(),
                    tokens: vec!["a".into(), "b".into()],
                    token_ids: vec![None, None],
                    embeddings: Tensor::from_vec(&[2, 4], e).unwrap(),
                    spans: Some(vec![(1, 2), (3, frames)]),
                    label,
                    session: None,
                }
            })
            .collect()
    }

    fn model(v: Variant) -> Model<f64> {
        Model::new(
            ModelConfig {
                variant: v,
                hidden: 4,
                heads: 2,
                feature_dim: 5,
                embed_dim: 4,
                classes: 4,
            },
            7,
        )
        .unwrap()
    }

    #[test]
    fn backward_before_forward_is_a_state_error() {
        let c = corpus(1);
        let mut t = Trainer::new(model(Variant::Proposed), 1e-3, None);
        let input = ModelInput::from_utterance(&c[0]);
        assert!(matches!(t.backward(&input, 1.0), Err(Error::State(_))));
        t.forward(&input, 0).unwrap();
        t.backward(&input, 1.0).unwrap();
        assert!(matches!(t.backward(&input, 1.0), Err(Error::State(_))));
    }

    #[test]
    fn zero_epochs_returns_initial_weights() {
        let m = model(Variant::Concat);
        let out = train(m.clone(), &corpus(4), &[], &TrainConfig { epochs: 0, ..Default::default() }, |_| Ok(())).unwrap();
        assert!(out.logs.is_empty());
        assert_eq!(out.best.head.value, m.head.value);
    }

    #[test]
    fn same_seed_same_logs() {
        let c = corpus(8);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 3,
            ..Default::default()
        };
        let a = train(model(Variant::Proposed), &c, &c[..2], &cfg, |_| Ok(())).unwrap();
        let b = train(model(Variant::Proposed), &c, &c[..2], &cfg, |_| Ok(())).unwrap();
        assert_eq!(a.logs, b.logs);
        assert_eq!(a.best.head.value, b.best.head.value);
    }

    #[test]
    fn loss_goes_down() {
        let c = corpus(8);
        let cfg = TrainConfig {
            epochs: 30,
            batch_size: 4,
            lr: 0.01,
            ..Default::default()
        };
        let out = train(model(Variant::SpeechOnly), &c, &[], &cfg, |_| Ok(())).unwrap();
        assert!(out.logs.last().unwrap().loss < out.logs[0].loss * 0.7);
    }

    #[test]
    fn patience_stops_training() {
        let c = corpus(8);
        let cfg = TrainConfig {
            epochs: 50,
            batch_size: 8,
            patience: 2,
            ..Default::default()
        };
        let out = train(model(Variant::TextOnly), &c, &c[..4], &cfg, |_| Ok(())).unwrap();
        assert!(out.logs.len() < 50 && out.stopped_early);
        assert!(out.logs.iter().filter(|l| l.best).count() >= 1);
    }

    #[test]
    fn bad_configs_are_rejected() {
        let c = corpus(2);
        for cfg in [
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { lr: -1.0, ..Default::default() },
            TrainConfig { clip: Some(0.0), ..Default::default() },
        ] {
            assert!(train(model(Variant::Concat), &c, &[], &cfg, |_| Ok(())).is_err());
        }
    }
}
