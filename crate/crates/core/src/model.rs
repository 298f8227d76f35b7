//! Fusion network, classifier head and the comparison variants.
//!
//! Every variant maps one utterance (frame features plus token embeddings)
//! to four class probabilities through `z = relu(Wᵀ pooled)` and a softmax:
//!
//! * `proposed`: soft attention aligns speech states to each word, a fusion
//!   BiLSTM runs over `[aligned_j; text_j]`, max-pool over words.
//! * `hard`: like `proposed` but each word averages the frames of its
//!   ground-truth span.
//! * `concat`: max-pool each modality separately and concatenate.
//! * `speech-only` / `text-only`: one encoder, attention pooling with a
//!   learned query standing in for the text state.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::align::{
    attend, attend_backward, concat_pool, concat_pool_backward, hard_align, hard_align_backward, AttendTrace,
    AttentionMap, AttentionParams, ConcatTrace,
};
use crate::data::{EmbeddingTable, Utterance, NUM_CLASSES};
use crate::dsp::FEATURE_DIM;
use crate::encoders::{BiLstm, BiLstmTrace, HiddenSequence};
use crate::error::{invalid, shape_err, Error, Result};
use crate::nn::checkpoint::Checkpoint;
use crate::nn::ops::{cross_entropy_logits, dense, dense_backward, log_sum_exp, max_pool_time, max_pool_time_backward, relu, relu_backward, softmax};
use crate::nn::{Module, Parameter, Real, Tensor};
use crate::rng::substream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Proposed,
    Hard,
    Concat,
    SpeechOnly,
    TextOnly,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Proposed,
        Variant::Hard,
        Variant::Concat,
        Variant::SpeechOnly,
        Variant::TextOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Proposed => "proposed",
            Variant::Hard => "hard",
            Variant::Concat => "concat",
            Variant::SpeechOnly => "speech-only",
            Variant::TextOnly => "text-only",
        }
    }

    pub fn uses_speech(self) -> bool {
        self != Variant::TextOnly
    }

    pub fn uses_text(self) -> bool {
        self != Variant::SpeechOnly
    }

    pub fn is_multimodal(self) -> bool {
        self.uses_speech() && self.uses_text()
    }

    pub fn needs_spans(self) -> bool {
        self == Variant::Hard
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "proposed" | "attention" => Ok(Variant::Proposed),
            "hard" | "hard-align" => Ok(Variant::Hard),
            "concat" => Ok(Variant::Concat),
            "speech-only" | "speech" => Ok(Variant::SpeechOnly),
            "text-only" | "text" => Ok(Variant::TextOnly),
            _ => Err(invalid!(
                "unknown variant {s:?} (expected proposed, hard, concat, speech-only or text-only)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Units per LSTM direction.
    pub hidden: usize,
    pub heads: usize,
    pub feature_dim: usize,
    pub embed_dim: usize,
    pub classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::Proposed,
            hidden: 100,
            heads: 5,
            feature_dim: FEATURE_DIM,
            embed_dim: crate::data::EMBED_DIM,
            classes: NUM_CLASSES,
        }
    }
}

impl ModelConfig {
    pub fn state_width(&self) -> usize {
        2 * self.hidden
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.heads == 0 || self.feature_dim == 0 || self.embed_dim == 0 || self.classes < 2 {
            return Err(invalid!("model dimensions must be positive (and at least 2 classes)"));
        }
        if self.state_width() % self.heads != 0 {
            return Err(invalid!(
                "{} heads do not evenly split the {}-wide states",
                self.heads,
                self.state_width()
            ));
        }
        Ok(())
    }

    fn head_inputs(&self) -> usize {
        match self.variant {
            Variant::Concat => 2 * self.state_width(),
            _ => self.state_width(),
        }
    }
}

/// Fusion BiLSTM output, one row per word.
pub type FusedSequence<F> = HiddenSequence<F>;

#[derive(Debug, Clone)]
pub struct FuseTrace<F> {
    input: Tensor<F>,
    lstm: BiLstmTrace<F>,
}

/// Runs the fusion BiLSTM over `[aligned_j; text_j]`.
pub fn fuse<F: Real>(
    fusion: &BiLstm<F>,
    aligned: &Tensor<F>,
    aligned_len: usize,
    text: &HiddenSequence<F>,
) -> Result<(FusedSequence<F>, FuseTrace<F>)> {
    if aligned_len != text.valid_len {
        return Err(shape_err!(
            "fuse: {} aligned speech rows for {} words",
            aligned_len,
            text.valid_len
        ));
    }
    if aligned.rows() < aligned_len {
        return Err(shape_err!("fuse: aligned tensor has only {} rows", aligned.rows()));
    }
    let (wa, wt) = (aligned.cols(), text.width());
    let mut input = Tensor::zeros(&[text.values.rows(), wa + wt]);
    for j in 0..text.valid_len {
        let row = input.row_mut(j);
        row[..wa].copy_from_slice(aligned.row(j));
        row[wa..].copy_from_slice(text.row(j));
    }
    let (fused, lstm) = fusion.forward(&input, text.valid_len)?;
    Ok((fused, FuseTrace { input, lstm }))
}

/// Returns `(d_aligned, d_text)`.
pub fn fuse_backward<F: Real>(fusion: &mut BiLstm<F>, trace: &FuseTrace<F>, d_fused: &Tensor<F>, aligned_width: usize) -> (Tensor<F>, Tensor<F>) {
    let dx = fusion.backward(&trace.input, &trace.lstm, d_fused);
    let rows = dx.rows();
    let wt = dx.cols() - aligned_width;
    let mut da = Tensor::zeros(&[rows, aligned_width]);
    let mut dt = Tensor::zeros(&[rows, wt]);
    for j in 0..rows {
        da.row_mut(j).copy_from_slice(&dx.row(j)[..aligned_width]);
        dt.row_mut(j).copy_from_slice(&dx.row(j)[aligned_width..]);
    }
    (da, dt)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction<F> {
    pub probs: Vec<f64>,
    pub label: usize,
    pub pooled: Vec<F>,
    /// Post-ReLU scores fed to the softmax.
    pub logits: Vec<F>,
    pre_activation: Vec<F>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub target: usize,
}

/// Head on an already pooled vector.
pub fn classify_pooled<F: Real>(head: &Tensor<F>, pooled: Vec<F>) -> Result<Prediction<F>> {
    let pre_activation = dense(head, &pooled, None)?;
    let logits = relu(&pre_activation);
    let probs: Vec<f64> = softmax(&logits).into_iter().map(|p| p.as_f64()).collect();
    let label = argmax(&probs);
    Ok(Prediction {
        probs,
        label,
        pooled,
        logits,
        pre_activation,
    })
}

/// Max-pool over valid words, then the head. Also returns the pooling
/// argmax rows.
pub fn classify<F: Real>(head: &Tensor<F>, fused: &FusedSequence<F>) -> Result<(Prediction<F>, Vec<usize>)> {
    let (pooled, arg) = max_pool_time(&fused.values, fused.valid_len)?;
    Ok((classify_pooled(head, pooled)?, arg))
}

/// Cross entropy from the logits via log-sum-exp.
pub fn loss<F: Real>(pred: &Prediction<F>, target: usize) -> Result<LossValue> {
    if target >= pred.logits.len() {
        return Err(invalid!("target class {target} out of range"));
    }
    let value = (log_sum_exp(&pred.logits) - pred.logits[target]).as_f64();
    Ok(LossValue { value, target })
}

/// Accumulates `dW` and returns `dL/dpooled`.
fn head_backward<F: Real>(head: &mut Parameter<F>, pred: &Prediction<F>, target: usize) -> Vec<F> {
    let (_, dz) = cross_entropy_logits(&pred.logits, target);
    let dpre = relu_backward(&pred.pre_activation, &dz);
    dense_backward(&head.value, &pred.pooled, &dpre, &mut head.grad)
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// One utterance as the model consumes it. Rows past the valid lengths are
/// padding.
#[derive(Debug, Clone, Copy)]
pub struct ModelInput<'a, F> {
    pub features: &'a Tensor<F>,
    pub frames: usize,
    pub embeddings: &'a Tensor<F>,
    pub words: usize,
    pub token_ids: &'a [Option<usize>],
    pub spans: Option<&'a [(usize, usize)]>,
}

impl<'a, F: Real> ModelInput<'a, F> {
    pub fn from_utterance(u: &'a Utterance<F>) -> Self {
        ModelInput {
            features: &u.features,
            frames: u.frames(),
            embeddings: &u.embeddings,
            words: u.words(),
            token_ids: &u.token_ids,
            spans: u.spans.as_deref(),
        }
    }
}

#[derive(Debug, Clone)]
enum Stage<F> {
    Attend {
        attend: AttendTrace<F>,
        fuse: FuseTrace<F>,
        fused: FusedSequence<F>,
        pool_arg: Vec<usize>,
    },
    Hard {
        fuse: FuseTrace<F>,
        fused: FusedSequence<F>,
        pool_arg: Vec<usize>,
    },
    Concat(ConcatTrace),
    Pool {
        attend: AttendTrace<F>,
        query: HiddenSequence<F>,
    },
}

/// Activations retained for [`Model::backward`].
#[derive(Debug, Clone)]
pub struct ForwardPass<F> {
    pub prediction: Prediction<F>,
    /// Word-to-frame (or query-to-position) weights, where the variant has any.
    pub attention: Option<AttentionMap<F>>,
    text_input: Option<Tensor<F>>,
    speech: Option<(HiddenSequence<F>, BiLstmTrace<F>)>,
    text: Option<(HiddenSequence<F>, BiLstmTrace<F>)>,
    stage: Stage<F>,
}

impl<F: Real> ForwardPass<F> {
    pub fn fused(&self) -> Option<&FusedSequence<F>> {
        match &self.stage {
            Stage::Attend { fused, .. } | Stage::Hard { fused, .. } => Some(fused),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Model<F> {
    pub config: ModelConfig,
    pub speech_enc: Option<BiLstm<F>>,
    pub text_enc: Option<BiLstm<F>>,
    /// `align.*` for the proposed variant, `pool.*` for unimodal pooling.
    pub attention: Option<AttentionParams<F>>,
    pub pool_query: Option<Parameter<F>>,
    pub fusion: Option<BiLstm<F>>,
    pub head: Parameter<F>,
    /// Trainable copy of the embedding table when embeddings are not frozen.
    pub embedding: Option<Parameter<F>>,
}

impl<F: Real> Model<F> {
    /// Fresh weights; every component draws from its own named stream.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let v = config.variant;
        let (h, w) = (config.hidden, config.state_width());
        let dh = w / config.heads;
        let speech_enc = v
            .uses_speech()
            .then(|| BiLstm::new("speech_enc", config.feature_dim, h, &mut substream(seed, "init/speech_enc")));
        let text_enc = v
            .uses_text()
            .then(|| BiLstm::new("text_enc", config.embed_dim, h, &mut substream(seed, "init/text_enc")));
        let attention = match v {
            Variant::Proposed => Some(AttentionParams::new("align", config.heads, dh, &mut substream(seed, "init/align"))),
            Variant::SpeechOnly | Variant::TextOnly => {
                Some(AttentionParams::new("pool", config.heads, dh, &mut substream(seed, "init/pool")))
            }
            _ => None,
        };
        let pool_query = (!v.is_multimodal())
            .then(|| Parameter::uniform("pool.query", &[1, w], w, &mut substream(seed, "init/pool.query")));
        let fusion = matches!(v, Variant::Proposed | Variant::Hard)
            .then(|| BiLstm::new("fusion", 2 * w, h, &mut substream(seed, "init/fusion")));
        let n_in = config.head_inputs();
        let head = Parameter::uniform("head.W", &[n_in, config.classes], n_in, &mut substream(seed, "init/head"));
        Ok(Model {
            config,
            speech_enc,
            text_enc,
            attention,
            pool_query,
            fusion,
            head,
            embedding: None,
        })
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    /// Makes the embedding table a trainable parameter (`embed.table`).
    /// Token ids in the input index its rows.
    pub fn unfreeze_embeddings(&mut self, table: &EmbeddingTable) -> Result<()> {
        if table.dim() != self.config.embed_dim {
            return Err(shape_err!(
                "embedding table is {}-dimensional, model expects {}",
                table.dim(),
                self.config.embed_dim
            ));
        }
        let mut p = Parameter::zeros("embed.table", &[table.len(), table.dim()]);
        p.value = table.matrix();
        self.embedding = Some(p);
        Ok(())
    }

    pub fn embeddings_frozen(&self) -> bool {
        self.embedding.is_none()
    }

    fn text_input(&self, input: &ModelInput<'_, F>) -> Result<Option<Tensor<F>>> {
        let Some(table) = &self.embedding else {
            return Ok(None);
        };
        let mut e = Tensor::zeros(input.embeddings.shape());
        for (j, id) in input.token_ids.iter().take(input.words).enumerate() {
            if let Some(i) = *id {
                if i >= table.value.rows() {
                    return Err(shape_err!("token id {i} outside the {}-word table", table.value.rows()));
                }
                e.row_mut(j).copy_from_slice(table.value.row(i));
            }
        }
        Ok(Some(e))
    }

    pub fn forward(&self, input: &ModelInput<'_, F>) -> Result<ForwardPass<F>> {
        let cfg = &self.config;
        let speech = match &self.speech_enc {
            Some(enc) => {
                if input.features.cols() != cfg.feature_dim {
                    return Err(shape_err!(
                        "features are {}-dimensional, model expects {}",
                        input.features.cols(),
                        cfg.feature_dim
                    ));
                }
                if input.frames == 0 {
                    return Err(invalid!("utterance has no frames"));
                }
                Some(enc.forward(input.features, input.frames)?)
            }
            None => None,
        };
        let text_input = self.text_input(input)?;
        let text = match &self.text_enc {
            Some(enc) => {
                let e = text_input.as_ref().unwrap_or(input.embeddings);
                if e.cols() != cfg.embed_dim {
                    return Err(shape_err!(
                        "embeddings are {}-dimensional, model expects {}",
                        e.cols(),
                        cfg.embed_dim
                    ));
                }
                if input.words == 0 {
                    return Err(invalid!("utterance has no tokens"));
                }
                Some(enc.forward(e, input.words)?)
            }
            None => None,
        };

        let head = &self.head.value;
        let (prediction, attention, stage) = match cfg.variant {
            Variant::Proposed => {
                let (s, t) = (&speech.as_ref().expect("speech").0, &text.as_ref().expect("text").0);
                let params = self.attention.as_ref().expect("attention");
                let (aligned, map, attend_trace) = attend(params, s, t)?;
                let (fused, fuse_trace) = fuse(self.fusion.as_ref().expect("fusion"), &aligned.values, aligned.valid_len, t)?;
                let (pred, pool_arg) = classify(head, &fused)?;
                let stage = Stage::Attend {
                    attend: attend_trace,
                    fuse: fuse_trace,
                    fused,
                    pool_arg,
                };
                (pred, Some(map), stage)
            }
            Variant::Hard => {
                let (s, t) = (&speech.as_ref().expect("speech").0, &text.as_ref().expect("text").0);
                let spans = input
                    .spans
                    .ok_or_else(|| invalid!("the hard variant needs word spans"))?;
                if spans.len() != input.words {
                    return Err(invalid!("{} spans for {} words", spans.len(), input.words));
                }
                let aligned = hard_align(s, spans)?;
                let (fused, fuse_trace) = fuse(self.fusion.as_ref().expect("fusion"), &aligned.values, aligned.valid_len, t)?;
                let (pred, pool_arg) = classify(head, &fused)?;
                (
                    pred,
                    None,
                    Stage::Hard {
                        fuse: fuse_trace,
                        fused,
                        pool_arg,
                    },
                )
            }
            Variant::Concat => {
                let (s, t) = (&speech.as_ref().expect("speech").0, &text.as_ref().expect("text").0);
                let (pooled, trace) = concat_pool(s, t)?;
                (classify_pooled(head, pooled)?, None, Stage::Concat(trace))
            }
            Variant::SpeechOnly | Variant::TextOnly => {
                let seq = &speech.as_ref().or(text.as_ref()).expect("one encoder").0;
                let query = HiddenSequence::full(self.pool_query.as_ref().expect("query").value.clone());
                let (pooled, map, trace) = attend(self.attention.as_ref().expect("pool"), seq, &query)?;
                let pred = classify_pooled(head, pooled.values.row(0).to_vec())?;
                (pred, Some(map), Stage::Pool { attend: trace, query })
            }
        };
        if prediction.logits.iter().any(|z| !z.is_finite()) {
            return Err(Error::Numeric("non-finite logits".into()));
        }
        Ok(ForwardPass {
            prediction,
            attention,
            text_input,
            speech,
            text,
            stage,
        })
    }

    /// Adds `dL/dθ` of the cross entropy at `target` to every parameter
    /// gradient, scaled by `scale` (for batch means).
    pub fn backward(&mut self, input: &ModelInput<'_, F>, pass: &ForwardPass<F>, target: usize, scale: F) -> Result<()> {
        if target >= self.config.classes {
            return Err(invalid!("target class {target} out of range"));
        }
        let mut d_pooled = head_backward_scaled(&mut self.head, &pass.prediction, target, scale);
        let w = self.config.state_width();
        let mut d_speech: Option<Tensor<F>> = None;
        let mut d_text: Option<Tensor<F>> = None;
        match &pass.stage {
            Stage::Attend {
                attend: attend_trace,
                fuse,
                fused,
                pool_arg,
            } => {
                let mut d_fused = Tensor::zeros(fused.values.shape());
                max_pool_time_backward(pool_arg, &d_pooled, &mut d_fused);
                let (d_aligned, dt) = fuse_backward(self.fusion.as_mut().expect("fusion"), fuse, &d_fused, w);
                let (s, t) = (&pass.speech.as_ref().expect("speech").0, &pass.text.as_ref().expect("text").0);
                let (ds, dt2) = attend_backward(self.attention.as_mut().expect("attention"), s, t, attend_trace, &d_aligned);
                d_speech = Some(ds);
                d_text = Some(add(dt, &dt2));
            }
            Stage::Hard { fuse, fused, pool_arg } => {
                let mut d_fused = Tensor::zeros(fused.values.shape());
                max_pool_time_backward(pool_arg, &d_pooled, &mut d_fused);
                let (d_aligned, dt) = fuse_backward(self.fusion.as_mut().expect("fusion"), fuse, &d_fused, w);
                let s = &pass.speech.as_ref().expect("speech").0;
                d_speech = Some(hard_align_backward(s, input.spans.expect("spans"), &d_aligned));
                d_text = Some(dt);
            }
            Stage::Concat(trace) => {
                let (s, t) = (&pass.speech.as_ref().expect("speech").0, &pass.text.as_ref().expect("text").0);
                let (ds, dt) = concat_pool_backward(s, t, trace, &d_pooled);
                d_speech = Some(ds);
                d_text = Some(dt);
            }
            Stage::Pool { attend: trace, query } => {
                let seq = &pass.speech.as_ref().or(pass.text.as_ref()).expect("one encoder").0;
                let d_aligned = Tensor::from_vec(&[1, w], std::mem::take(&mut d_pooled))?;
                let (d_seq, d_query) = attend_backward(self.attention.as_mut().expect("pool"), seq, query, trace, &d_aligned);
                let q = self.pool_query.as_mut().expect("query");
                q.grad.data_mut().iter_mut().zip(d_query.data()).for_each(|(g, &d)| *g += d);
                if self.variant() == Variant::SpeechOnly {
                    d_speech = Some(d_seq);
                } else {
                    d_text = Some(d_seq);
                }
            }
        }
        if let (Some(enc), Some(ds)) = (self.speech_enc.as_mut(), d_speech) {
            let (_, trace) = pass.speech.as_ref().expect("speech trace");
            enc.backward(input.features, trace, &ds);
        }
        if let (Some(enc), Some(dt)) = (self.text_enc.as_mut(), d_text) {
            let (_, trace) = pass.text.as_ref().expect("text trace");
            let e = pass.text_input.as_ref().unwrap_or(input.embeddings);
            let de = enc.backward(e, trace, &dt);
            if let Some(table) = self.embedding.as_mut() {
                for (j, id) in input.token_ids.iter().take(input.words).enumerate() {
                    if let Some(i) = *id {
                        table.grad.row_mut(i).iter_mut().zip(de.row(j)).for_each(|(g, &d)| *g += d);
                    }
                }
            }
        }
        Ok(())
    }

    /// Loss and prediction for one prepared utterance. Errors carry the id.
    pub fn forward_full(&self, utt: &Utterance<F>) -> Result<(LossValue, Prediction<F>)> {
        let run = || -> Result<(LossValue, Prediction<F>)> {
            let pass = self.forward(&ModelInput::from_utterance(utt))?;
            let l = loss(&pass.prediction, utt.label)?;
            Ok((l, pass.prediction))
        };
        run().map_err(|e| e.in_utterance(&utt.id))
    }

    /// Forward plus backward on one utterance; returns the loss.
    pub fn accumulate(&mut self, utt: &Utterance<F>, scale: F) -> Result<(LossValue, Prediction<F>)> {
        let run = |m: &mut Self| -> Result<(LossValue, Prediction<F>)> {
            let input = ModelInput::from_utterance(utt);
            let pass = m.forward(&input)?;
            let l = loss(&pass.prediction, utt.label)?;
            m.backward(&input, &pass, utt.label, scale)?;
            Ok((l, pass.prediction))
        };
        run(self).map_err(|e| e.in_utterance(&utt.id))
    }

    pub fn to_checkpoint(&self, extra: Vec<(String, String)>) -> Checkpoint {
        let c = &self.config;
        let mut meta = vec![
            ("variant".to_string(), c.variant.to_string()),
            ("hidden".to_string(), c.hidden.to_string()),
            ("heads".to_string(), c.heads.to_string()),
            ("feature_dim".to_string(), c.feature_dim.to_string()),
            ("embed_dim".to_string(), c.embed_dim.to_string()),
            ("classes".to_string(), c.classes.to_string()),
        ];
        if let Some(t) = &self.embedding {
            meta.push(("embed_vocab".to_string(), t.value.rows().to_string()));
        }
        meta.extend(extra);
        Checkpoint::from_params(meta, &self.params())
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let get = |k: &str| -> Result<&str> {
            ckpt.meta(k)
                .ok_or_else(|| Error::Checkpoint(format!("missing metadata {k:?}")))
        };
        let num = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::Checkpoint(format!("metadata {k:?} is not a count")))
        };
        let config = ModelConfig {
            variant: get("variant")?.parse()?,
            hidden: num("hidden")?,
            heads: num("heads")?,
            feature_dim: num("feature_dim")?,
            embed_dim: num("embed_dim")?,
            classes: num("classes")?,
        };
        let mut model = Model::new(config, 0)?;
        if ckpt.meta("embed_vocab").is_some() {
            let rows = num("embed_vocab")?;
            model.embedding = Some(Parameter::zeros("embed.table", &[rows, model.config.embed_dim]));
        }
        ckpt.restore(model.params_mut())?;
        Ok(model)
    }
}

fn head_backward_scaled<F: Real>(head: &mut Parameter<F>, pred: &Prediction<F>, target: usize, scale: F) -> Vec<F> {
    if scale == F::one() {
        return head_backward(head, pred, target);
    }
    let (_, mut dz) = cross_entropy_logits(&pred.logits, target);
    dz.iter_mut().for_each(|d| *d *= scale);
    let dpre = relu_backward(&pred.pre_activation, &dz);
    dense_backward(&head.value, &pred.pooled, &dpre, &mut head.grad)
}

fn add<F: Real>(mut a: Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
    a.data_mut().iter_mut().zip(b.data()).for_each(|(x, &y)| *x += y);
    a
}

impl<F: Real> Module<F> for Model<F> {
    fn params(&self) -> Vec<&Parameter<F>> {
        let mut out = Vec::new();
        if let Some(m) = &self.speech_enc {
            out.extend(m.params());
        }
        if let Some(m) = &self.text_enc {
            out.extend(m.params());
        }
        if let Some(m) = &self.attention {
            out.extend(m.params());
        }
        if let Some(p) = &self.pool_query {
            out.push(p);
        }
        if let Some(m) = &self.fusion {
            out.extend(m.params());
        }
        out.push(&self.head);
        if let Some(p) = &self.embedding {
            out.push(p);
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<F>> {
        let mut out = Vec::new();
        if let Some(m) = &mut self.speech_enc {
            out.extend(m.params_mut());
        }
        if let Some(m) = &mut self.text_enc {
            out.extend(m.params_mut());
        }
        if let Some(m) = &mut self.attention {
            out.extend(m.params_mut());
        }
        if let Some(p) = &mut self.pool_query {
            out.push(p);
        }
        if let Some(m) = &mut self.fusion {
            out.extend(m.params_mut());
        }
        out.push(&mut self.head);
        if let Some(p) = &mut self.embedding {
            out.push(p);
        }
        out
    }
}
