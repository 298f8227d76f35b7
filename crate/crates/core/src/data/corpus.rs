use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::embeddings::EmbeddingTable;
use super::manifest::UtteranceRecord;
use crate::dsp::{extract_features, FrameSpec};
use crate::error::{invalid, Result};
use crate::nn::{Real, Tensor};
use crate::rng::substream;

/// A model-ready utterance: standardized features and embedded tokens.
#[derive(Debug, Clone)]
pub struct Utterance<F> {
    pub id: String,
    /// `N × 34`, standardized per column over the utterance.
    pub features: Tensor<F>,
    pub tokens: Vec<String>,
    /// Row of each token in the embedding table, if known.
    pub token_ids: Vec<Option<usize>>,
    /// `M × dim`
    pub embeddings: Tensor<F>,
    pub spans: Option<Vec<(usize, usize)>>,
    pub label: usize,
    pub session: Option<u8>,
}

impl<F: Real> Utterance<F> {
    pub fn frames(&self) -> usize {
        self.features.rows()
    }

    pub fn words(&self) -> usize {
        self.tokens.len()
    }

    pub fn cast<G: Real>(&self) -> Utterance<G> {
        Utterance {
            id: self.id.clone(),
            features: self.features.cast(),
            tokens: self.tokens.clone(),
            token_ids: self.token_ids.clone(),
            embeddings: self.embeddings.cast(),
            spans: self.spans.clone(),
            label: self.label,
            session: self.session,
        }
    }
}

/// Loads audio, extracts and standardizes features and embeds the tokens.
pub fn prepare_utterance(record: &UtteranceRecord, table: &EmbeddingTable, spec: &FrameSpec) -> Result<Utterance<f64>> {
    let inner = || -> Result<Utterance<f64>> {
        let audio = record.audio.load()?;
        let feats = extract_features(&audio, spec)?;
        let n = feats.frames();
        if let Some(spans) = &record.spans {
            if let Some((j, _)) = spans.iter().enumerate().find(|(_, &(_, e))| e > n) {
                return Err(invalid!("span of word {j} ends past the last frame ({n})"));
            }
        }
        Ok(Utterance {
            id: record.id.clone(),
            features: feats.standardized(),
            tokens: record.tokens.clone(),
            token_ids: record.tokens.iter().map(|t| table.index_of(t)).collect(),
            embeddings: table.embed(&record.tokens).values,
            spans: record.spans.clone(),
            label: record.label.index(),
            session: record.session,
        })
    };
    inner().map_err(|e| e.in_utterance(&record.id))
}

/// [`prepare_utterance`] over a corpus, in parallel, preserving order.
pub fn prepare_corpus(records: &[UtteranceRecord], table: &EmbeddingTable, spec: &FrameSpec) -> Result<Vec<Utterance<f64>>> {
    records.par_iter().map(|r| prepare_utterance(r, table, spec)).collect()
}

/// `(train, test)`: test holds `test_session`; utterances without a session
/// tag are training data.
pub fn split_by_session<F: Clone>(utts: Vec<Utterance<F>>, test_session: u8) -> (Vec<Utterance<F>>, Vec<Utterance<F>>) {
    utts.into_iter().partition(|u| u.session != Some(test_session))
}

/// Seeded hold-out of `fraction` of `utts` (at least one when there are two
/// or more) as a validation set. Order within each part follows the input.
pub fn validation_split<F: Clone>(utts: Vec<Utterance<F>>, fraction: f64, seed: u64) -> (Vec<Utterance<F>>, Vec<Utterance<F>>) {
    let n = utts.len();
    let mut n_val = (n as f64 * fraction).round() as usize;
    if n_val == 0 && n >= 2 && fraction > 0.0 {
        n_val = 1;
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut substream(seed, "validation-split"));
    let mut is_val = vec![false; n];
    for &i in &idx[..n_val] {
        is_val[i] = true;
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (u, v) in utts.into_iter().zip(is_val) {
        if v {
            val.push(u);
        } else {
            train.push(u);
        }
    }
    (train, val)
}
