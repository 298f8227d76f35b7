//! Seeded synthetic speech/text emotion corpus.
//!
//! Each utterance is a short sequence of "words". Every word gets a harmonic
//! tone of random pitch plus background noise, so the audio of a word says
//! nothing about which word it is. Exactly one word per utterance is a
//! trigger word. Trigger words come in two groups (two synonyms each) and
//! the trigger's audio segment additionally carries one of two spectral cue
//! signatures. The label is `2 * group + cue`:
//!
//! | group | cue A   | cue B |
//! |-------|---------|-------|
//! | 0     | angry   | happy |
//! | 1     | neutral | sad   |
//!
//! The transcript alone reveals the group, the audio alone reveals the cue,
//! and only both together determine the label.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::embeddings::{EmbeddingTable, EMBED_DIM};
use super::manifest::{write_manifest, AudioSource, UtteranceRecord};
use super::{Emotion, NUM_CLASSES};
use crate::dsp::wav::write_wav;
use crate::dsp::{AudioBuffer, FrameSpec};
use crate::error::{invalid, Error, Result};
use crate::rng::{substream, Rng};

/// Cue tone pairs (Hz): A and B.
pub const CUE_TONES: [[f64; 2]; 2] = [[1200.0, 2400.0], [1800.0, 3600.0]];
const WORD_PITCH_HZ: (f64, f64) = (150.0, 400.0);
const WORD_AMPLITUDE: f64 = 0.3;
const FADE_MS: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_utterances: usize,
    /// Inclusive range.
    pub words_per_utterance: (usize, usize),
    /// Inclusive range.
    pub frames_per_word: (usize, usize),
    pub content_words: Vec<String>,
    /// Two synonyms for group 0 followed by two for group 1.
    pub trigger_words: [String; 4],
    /// Amplitude of the cue tones under the trigger word.
    pub cue_strength: f64,
    /// Standard deviation of the additive Gaussian noise.
    pub noise_level: f64,
    pub sample_rate: u32,
    pub window_ms: f64,
    pub hop_ms: f64,
    pub embed_dim: usize,
    pub sessions: u8,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        let content = [
            "the", "a", "we", "it", "was", "then", "there", "today", "just", "about", "call", "back", "home",
            "time", "with", "they",
        ];
        SyntheticSpec {
            n_utterances: 200,
            words_per_utterance: (3, 6),
            frames_per_word: (4, 8),
            content_words: content.iter().map(|s| s.to_string()).collect(),
            trigger_words: ["furious", "livid", "calm", "quiet"].map(String::from),
            cue_strength: 0.4,
            noise_level: 0.02,
            sample_rate: 16000,
            window_ms: 20.0,
            hop_ms: 10.0,
            embed_dim: EMBED_DIM,
            sessions: 5,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn frame_spec(&self) -> FrameSpec {
        FrameSpec {
            window_ms: self.window_ms,
            hop_ms: self.hop_ms,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (w0, w1) = self.words_per_utterance;
        let (f0, f1) = self.frames_per_word;
        if self.n_utterances == 0 || w0 == 0 || w0 > w1 || f0 == 0 || f0 > f1 {
            return Err(invalid!("synthetic spec: counts must be positive and ranges ordered"));
        }
        if w1 > 1 && self.content_words.is_empty() {
            return Err(invalid!("synthetic spec: multi-word utterances need content words"));
        }
        if !(self.noise_level >= 0.0) || !(self.cue_strength >= 0.0) {
            return Err(invalid!("synthetic spec: noise_level and cue_strength must be non-negative"));
        }
        if self.sample_rate < 8000 {
            return Err(invalid!("synthetic spec: cue tones need a sample rate of at least 8000 Hz"));
        }
        if self.sessions == 0 || self.embed_dim == 0 {
            return Err(invalid!("synthetic spec: sessions and embed_dim must be positive"));
        }
        self.frame_spec().validate()?;
        let mut vocab: Vec<&String> = self.content_words.iter().chain(&self.trigger_words).collect();
        vocab.sort();
        vocab.dedup();
        if vocab.len() != self.content_words.len() + 4 {
            return Err(invalid!("synthetic spec: vocabulary words must be distinct"));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            msg: e.to_string(),
        })
    }
}

/// One generated utterance with its ground truth.
#[derive(Debug, Clone)]
pub struct SynthUtterance {
    pub record: UtteranceRecord,
    /// Index of the trigger word in the token list.
    pub trigger: usize,
    pub cue: usize,
}

impl SynthUtterance {
    pub fn spans(&self) -> &[(usize, usize)] {
        self.record.spans.as_deref().expect("synthetic records carry spans")
    }
}

/// Label of a trigger group and cue.
pub fn label_of(group: usize, cue: usize) -> Emotion {
    Emotion::from_index(2 * group + cue).expect("group and cue are binary")
}

fn tone_into(buf: &mut [f64], freq: f64, amp: f64, phase: f64, sr: f64, fade: usize) {
    let n = buf.len();
    for (t, y) in buf.iter_mut().enumerate() {
        let env = if fade == 0 {
            1.0
        } else {
            (t.min(n - 1 - t) as f64 / fade as f64).min(1.0)
        };
        *y += env * amp * (2.0 * PI * freq * t as f64 / sr + phase).sin();
    }
}

fn utterance(spec: &SyntheticSpec, index: usize, label: Emotion, session: u8) -> SynthUtterance {
    let mut rng: Rng = substream(spec.seed, &format!("synth/utterance/{index}"));
    let (group, cue) = (label.index() / 2, label.index() % 2);
    let n_words = rng.gen_range(spec.words_per_utterance.0..=spec.words_per_utterance.1);
    let trigger = rng.gen_range(0..n_words);
    let tokens: Vec<String> = (0..n_words)
        .map(|j| {
            if j == trigger {
                spec.trigger_words[2 * group + rng.gen_range(0..2)].clone()
            } else {
                spec.content_words.choose(&mut rng).expect("content words").clone()
            }
        })
        .collect();
    let frames: Vec<usize> = (0..n_words)
        .map(|_| rng.gen_range(spec.frames_per_word.0..=spec.frames_per_word.1))
        .collect();

    let fs = spec.frame_spec();
    let (w, hop) = (fs.window_samples(spec.sample_rate), fs.hop_samples(spec.sample_rate));
    let total_frames: usize = frames.iter().sum();
    // word k covers frames whose centre falls in its segment
    let lead = (w - hop) / 2;
    let len = total_frames * hop + (w - hop);
    let sr = f64::from(spec.sample_rate);
    let fade = (FADE_MS * sr / 1000.0) as usize;
    let noise = Normal::new(0.0, spec.noise_level.max(f64::MIN_POSITIVE)).expect("valid noise");
    let mut samples: Vec<f64> = (0..len)
        .map(|_| if spec.noise_level > 0.0 { noise.sample(&mut rng) } else { 0.0 })
        .collect();

    let mut spans = Vec::with_capacity(n_words);
    let mut start_frame = 0;
    for (j, &f) in frames.iter().enumerate() {
        spans.push((start_frame + 1, start_frame + f));
        let a = lead + start_frame * hop;
        let seg = &mut samples[a..a + f * hop];
        let pitch = rng.gen_range(WORD_PITCH_HZ.0..WORD_PITCH_HZ.1);
        tone_into(seg, pitch, WORD_AMPLITUDE, rng.gen_range(0.0..2.0 * PI), sr, fade);
        tone_into(seg, 2.0 * pitch, WORD_AMPLITUDE / 2.0, rng.gen_range(0.0..2.0 * PI), sr, fade);
        if j == trigger && spec.cue_strength > 0.0 {
            for &freq in &CUE_TONES[cue] {
                tone_into(seg, freq, spec.cue_strength / 2.0, rng.gen_range(0.0..2.0 * PI), sr, fade);
            }
        }
        start_frame += f;
    }
    samples.iter_mut().for_each(|s| *s = s.clamp(-1.0, 1.0));

    SynthUtterance {
        record: UtteranceRecord {
            id: format!("synth{index:05}"),
            audio: AudioSource::Inline(AudioBuffer::new(samples, spec.sample_rate).expect("finite audio")),
            tokens,
            label,
            spans: Some(spans),
            session: Some(session),
        },
        trigger,
        cue,
    }
}

/// Generates the corpus in memory (inline audio).
pub fn synthesize(spec: &SyntheticSpec) -> Result<Vec<SynthUtterance>> {
    spec.validate()?;
    let n = spec.n_utterances;
    let mut labels: Vec<Emotion> = (0..n).map(|i| Emotion::ALL[i % NUM_CLASSES]).collect();
    labels.shuffle(&mut substream(spec.seed, "synth/labels"));
    let mut sessions: Vec<u8> = (0..n).map(|i| (i % spec.sessions as usize) as u8 + 1).collect();
    sessions.shuffle(&mut substream(spec.seed, "synth/sessions"));
    Ok((0..n).map(|i| utterance(spec, i, labels[i], sessions[i])).collect())
}

/// Word vectors for the synthetic vocabulary. Synonymous trigger words share
/// a group direction.
pub fn synthetic_embeddings(spec: &SyntheticSpec) -> EmbeddingTable {
    let mut rng = substream(spec.seed, "synth/embeddings");
    let normal = Normal::new(0.0, 0.3).expect("valid std");
    let draw = |rng: &mut Rng| -> Vec<f64> { (0..spec.embed_dim).map(|_| normal.sample(rng)).collect() };
    let mut table = EmbeddingTable::new(spec.embed_dim);
    for w in &spec.content_words {
        let v: Vec<f32> = draw(&mut rng).into_iter().map(|x| x as f32).collect();
        table.insert(w, &v);
    }
    let groups = [draw(&mut rng), draw(&mut rng)];
    for (k, w) in spec.trigger_words.iter().enumerate() {
        let jitter = draw(&mut rng);
        let v: Vec<f32> = groups[k / 2].iter().zip(jitter).map(|(g, j)| (g + 0.3 * j) as f32).collect();
        table.insert(w, &v);
    }
    table
}

/// Paths written by [`generate_synthetic`].
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub manifest: PathBuf,
    pub embeddings: PathBuf,
    pub spans: PathBuf,
    pub utterances: Vec<SynthUtterance>,
}

#[derive(Serialize, Deserialize)]
pub struct SpanLine {
    pub id: String,
    pub spans: Vec<(usize, usize)>,
    pub trigger: usize,
    pub cue: usize,
}

/// Writes `wavs/*.wav`, `manifest.jsonl`, `spans.jsonl` and `embeddings.txt`
/// under `out_dir`.
pub fn generate_synthetic(spec: &SyntheticSpec, out_dir: &Path) -> Result<SynthCorpus> {
    let mut utts = synthesize(spec)?;
    let wav_dir = out_dir.join("wavs");
    fs::create_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;
    let mut span_lines = String::new();
    for u in &mut utts {
        let path = wav_dir.join(format!("{}.wav", u.record.id));
        if let AudioSource::Inline(audio) = &u.record.audio {
            write_wav(&path, audio)?;
        }
        u.record.audio = AudioSource::File(path);
        let line = SpanLine {
            id: u.record.id.clone(),
            spans: u.spans().to_vec(),
            trigger: u.trigger,
            cue: u.cue,
        };
        span_lines.push_str(&serde_json::to_string(&line).expect("span line serializes"));
        span_lines.push('\n');
    }
    let manifest = out_dir.join("manifest.jsonl");
    let records: Vec<UtteranceRecord> = utts.iter().map(|u| u.record.clone()).collect();
    write_manifest(&manifest, &records)?;
    let spans = out_dir.join("spans.jsonl");
    fs::write(&spans, span_lines).map_err(|e| Error::io(&spans, e))?;
    let embeddings = out_dir.join("embeddings.txt");
    synthetic_embeddings(spec).save(&embeddings)?;
    Ok(SynthCorpus {
        manifest,
        embeddings,
        spans,
        utterances: utts,
    })
}

/// Reads a `spans.jsonl` ground-truth file keyed by utterance id.
pub fn load_span_file(path: &Path) -> Result<HashMap<String, SpanLine>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let s: SpanLine = serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
            })?;
            Ok((s.id.clone(), s))
        })
        .collect()
}

/// One cell of the generator's joint distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelCell {
    /// Index into `trigger_words`.
    pub trigger_word: usize,
    pub cue: usize,
    pub label: Emotion,
    pub prob: f64,
}

/// Joint distribution of (trigger word, cue, label) the generator samples
/// from: balanced labels, synonyms equally likely.
pub fn label_table() -> Vec<LabelCell> {
    let mut cells = Vec::new();
    for trigger_word in 0..4 {
        for cue in 0..2 {
            cells.push(LabelCell {
                trigger_word,
                cue,
                label: label_of(trigger_word / 2, cue),
                prob: 1.0 / 8.0,
            });
        }
    }
    cells
}

/// Best achievable accuracy for a classifier that only sees `observe(cell)`.
pub fn bayes_ceiling<K: Eq + std::hash::Hash>(cells: &[LabelCell], observe: impl Fn(&LabelCell) -> K) -> f64 {
    let mut joint: HashMap<K, [f64; NUM_CLASSES]> = HashMap::new();
    for c in cells {
        joint.entry(observe(c)).or_insert([0.0; NUM_CLASSES])[c.label.index()] += c.prob;
    }
    joint.values().map(|p| p.iter().copied().fold(0.0, f64::max)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ceilings {
    pub text_only: f64,
    pub speech_only: f64,
    pub multimodal: f64,
}

/// Accuracy ceilings of each view of a corpus generated from `spec`. Without
/// cue energy the audio carries no label information.
pub fn ceilings(spec: &SyntheticSpec) -> Ceilings {
    let cells = label_table();
    let audible = spec.cue_strength > 0.0;
    let cue = |c: &LabelCell| if audible { Some(c.cue) } else { None };
    Ceilings {
        text_only: bayes_ceiling(&cells, |c| c.trigger_word),
        speech_only: bayes_ceiling(&cells, cue),
        multimodal: bayes_ceiling(&cells, |c| (c.trigger_word, cue(c))),
    }
}
