//! Corpus plumbing: labels, manifests, embedding tables, batching and the
//! synthetic benchmark corpus.

mod batch;
mod corpus;
mod embeddings;
mod manifest;
pub mod synth;

use std::fmt;
use std::str::FromStr;

pub use batch::{make_batches, Batch};
pub use corpus::{prepare_corpus, prepare_utterance, split_by_session, validation_split, Utterance};
pub use embeddings::{load_embeddings, EmbeddingTable, TokenEmbeddingSequence, EMBED_DIM};
pub use manifest::{load_manifest, write_manifest, AudioSource, UtteranceRecord};

use crate::error::{invalid, Error};

pub const NUM_CLASSES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Emotion {
    Angry,
    Happy,
    Neutral,
    Sad,
}

impl Emotion {
    pub const ALL: [Emotion; NUM_CLASSES] = [Emotion::Angry, Emotion::Happy, Emotion::Neutral, Emotion::Sad];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Emotion::Angry => "angry",
            Emotion::Happy => "happy",
            Emotion::Neutral => "neutral",
            Emotion::Sad => "sad",
        }
    }
}

impl fmt::Display for Emotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Emotion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "angry" | "ang" => Ok(Emotion::Angry),
            "happy" | "hap" => Ok(Emotion::Happy),
            "neutral" | "neu" => Ok(Emotion::Neutral),
            "sad" => Ok(Emotion::Sad),
            _ => Err(invalid!("unknown label {s:?}")),
        }
    }
}

/// Lowercases, strips punctuation and splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().filter_map(normalize_token).collect()
}

/// Lowercased token with punctuation removed; `None` if nothing is left.
pub fn normalize_token(token: &str) -> Option<String> {
    let t: String = token
        .chars()
        .filter(|c| !c.is_ascii_punctuation() || *c == '\'')
        .flat_map(char::to_lowercase)
        .collect();
    let t = t.trim_matches('\'').to_string();
    (!t.is_empty()).then_some(t)
}
