//! JSON-lines corpus manifests.
//!
//! One object per line:
//! `{"id": "u1", "audio": "wavs/u1.wav", "tokens": ["i", "am", "fine"],
//!   "label": "neutral", "spans": [[1, 12], [13, 20], [21, 40]], "session": 2}`
//!
//! `audio` may instead be inline: `{"sample_rate": 16000, "samples": [...]}`.
//! `text` may replace `tokens`, in which case it is tokenized. Relative audio
//! paths resolve against the manifest's directory. Spans are 1-based,
//! inclusive frame ranges, one per token.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{normalize_token, tokenize, Emotion};
use crate::dsp::wav::read_wav;
use crate::dsp::AudioBuffer;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum AudioSource {
    File(PathBuf),
    Inline(AudioBuffer),
}

impl AudioSource {
    pub fn load(&self) -> Result<AudioBuffer> {
        match self {
            AudioSource::File(p) => read_wav(p),
            AudioSource::Inline(a) => Ok(a.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceRecord {
    pub id: String,
    pub audio: AudioSource,
    pub tokens: Vec<String>,
    pub label: Emotion,
    pub spans: Option<Vec<(usize, usize)>>,
    pub session: Option<u8>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum AudioField {
    Path(String),
    Inline { sample_rate: u32, samples: Vec<f64> },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Line {
    id: String,
    audio: AudioField,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tokens: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    spans: Option<Vec<(usize, usize)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    session: Option<u8>,
}

fn validate_spans(spans: &[(usize, usize)], n_tokens: usize) -> std::result::Result<(), String> {
    if spans.len() != n_tokens {
        return Err(format!("{} spans for {} tokens", spans.len(), n_tokens));
    }
    let mut prev_end = 0;
    for (j, &(s, e)) in spans.iter().enumerate() {
        if s == 0 || s > e || s <= prev_end {
            return Err(format!("span {j} ({s}, {e}) is empty, 0-based or overlaps its predecessor"));
        }
        prev_end = e;
    }
    Ok(())
}

fn parse_line(line: &str, base: &Path) -> std::result::Result<UtteranceRecord, String> {
    let raw: Line = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let tokens: Vec<String> = match (raw.tokens, raw.text) {
        (Some(t), None) => t
            .iter()
            .map(|w| normalize_token(w).ok_or_else(|| format!("token {w:?} is empty after normalization")))
            .collect::<std::result::Result<_, _>>()?,
        (None, Some(text)) => tokenize(&text),
        (Some(_), Some(_)) => return Err("give either tokens or text, not both".into()),
        (None, None) => return Err("missing field `tokens`".into()),
    };
    if tokens.is_empty() {
        return Err("no tokens".into());
    }
    let label: Emotion = raw.label.parse().map_err(|e: Error| e.to_string())?;
    if let Some(spans) = &raw.spans {
        validate_spans(spans, tokens.len())?;
    }
    let audio = match raw.audio {
        AudioField::Path(p) => {
            let p = PathBuf::from(p);
            AudioSource::File(if p.is_absolute() { p } else { base.join(p) })
        }
        AudioField::Inline { sample_rate, samples } => {
            AudioSource::Inline(AudioBuffer::new(samples, sample_rate).map_err(|e| e.to_string())?)
        }
    };
    Ok(UtteranceRecord {
        id: raw.id,
        audio,
        tokens,
        label,
        spans: raw.spans,
        session: raw.session,
    })
}

/// Reads and validates a manifest. An empty file is an empty corpus.
pub fn load_manifest(path: &Path) -> Result<Vec<UtteranceRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let rec = parse_line(line, base).map_err(err)?;
        if !seen.insert(rec.id.clone()) {
            return Err(err(format!("duplicate id {:?}", rec.id)));
        }
        records.push(rec);
    }
    Ok(records)
}

/// Writes records as JSON lines. File audio paths are written relative to
/// `path`'s directory when possible.
pub fn write_manifest(path: &Path, records: &[UtteranceRecord]) -> Result<()> {
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for r in records {
        let audio = match &r.audio {
            AudioSource::File(p) => AudioField::Path(p.strip_prefix(base).unwrap_or(p).to_string_lossy().into_owned()),
            AudioSource::Inline(a) => AudioField::Inline {
                sample_rate: a.sample_rate(),
                samples: a.samples().to_vec(),
            },
        };
        let line = Line {
            id: r.id.clone(),
            audio,
            tokens: Some(r.tokens.clone()),
            text: None,
            label: r.label.name().to_string(),
            spans: r.spans.clone(),
            session: r.session,
        };
        serde_json::to_writer(&mut out, &line).expect("manifest line serializes");
        out.push(b'\n');
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| Error::io(path, e))
}
