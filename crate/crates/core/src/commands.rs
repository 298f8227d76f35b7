//! End-to-end operations behind the `crossalign` binary. Each returns a
//! value for callers that want it and writes its artifacts under the given
//! paths.

use std::collections::HashSet;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::synth::{generate_synthetic, load_span_file, synthesize, synthetic_embeddings, SynthCorpus, SyntheticSpec};
use crate::data::{
    load_embeddings, load_manifest, prepare_corpus, prepare_utterance, split_by_session, validation_split, EmbeddingTable,
    Utterance, UtteranceRecord, EMBED_DIM,
};
use crate::dsp::wav::read_wav;
use crate::dsp::{extract_features, FrameSpec, FEATURE_DIM};
use crate::error::{invalid, Error, Result};
use crate::metrics::EvalReport;
use crate::model::{Model, ModelConfig, ModelInput, Variant};
use crate::nn::checkpoint::Checkpoint;
use crate::nn::{grad_check, GradCheckConfig, GradCheckReport, Module, Pass, Real};
use crate::train::{evaluate, train, EpochLog, TrainConfig};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOG_FILE: &str = "train_log.jsonl";
pub const CONFIG_FILE: &str = "config.json";
pub const TEST_REPORT_FILE: &str = "test_report.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "f32" | "single" | "32" => Ok(Precision::F32),
            "f64" | "double" | "64" => Ok(Precision::F64),
            _ => Err(invalid!("unknown precision {s:?} (expected f32 or f64)")),
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub variant: Variant,
    pub manifest: PathBuf,
    pub embeddings: PathBuf,
    pub out: PathBuf,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    pub hidden: usize,
    pub heads: usize,
    pub precision: Precision,
    pub freeze_embeddings: bool,
    pub clip: Option<f64>,
    pub patience: usize,
    pub val_fraction: f64,
    /// Utterances tagged with this session are held out for testing.
    pub test_session: u8,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let m = ModelConfig::default();
        RunConfig {
            variant: Variant::Proposed,
            manifest: PathBuf::new(),
            embeddings: PathBuf::new(),
            out: PathBuf::from("run"),
            epochs: t.epochs,
            batch: t.batch_size,
            lr: t.lr,
            seed: 0,
            hidden: m.hidden,
            heads: m.heads,
            precision: Precision::F32,
            freeze_embeddings: true,
            clip: None,
            patience: t.patience,
            val_fraction: 0.1,
            test_session: 5,
        }
    }
}

impl RunConfig {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            variant: self.variant,
            hidden: self.hidden,
            heads: self.heads,
            feature_dim: FEATURE_DIM,
            embed_dim: EMBED_DIM,
            classes: crate::data::NUM_CLASSES,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch,
            lr: self.lr,
            seed: self.seed,
            clip: self.clip,
            patience: self.patience,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub train_size: usize,
    pub val_size: usize,
    pub test: Option<EvalReport>,
}

fn vocabulary(records: &[UtteranceRecord]) -> HashSet<String> {
    records.iter().flat_map(|r| r.tokens.iter().cloned()).collect()
}

/// Frozen runs only keep the manifest's words; trainable tables keep the
/// whole file so row indices do not depend on the manifest.
fn embeddings_for(path: &Path, records: &[UtteranceRecord], full: bool) -> Result<EmbeddingTable> {
    let vocab = vocabulary(records);
    let table = load_embeddings(path, EMBED_DIM, (!full).then_some(&vocab))?;
    let oov = vocab.iter().filter(|w| table.index_of(w).is_none()).count();
    if oov > 0 {
        log::warn!("{oov} of {} manifest words have no embedding and map to zeros", vocab.len());
    }
    Ok(table)
}

fn load_corpus(manifest: &Path, table_path: &Path, full_table: bool) -> Result<(Vec<Utterance<f64>>, EmbeddingTable)> {
    let records = load_manifest(manifest)?;
    let table = embeddings_for(table_path, &records, full_table)?;
    let corpus = prepare_corpus(&records, &table, &FrameSpec::default())?;
    Ok((corpus, table))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable") + "\n";
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary> {
    cfg.train_config().validate()?;
    cfg.model_config().validate()?;
    if !(0.0..1.0).contains(&cfg.val_fraction) {
        return Err(invalid!("validation fraction must be in [0, 1)"));
    }
    let (corpus, table) = load_corpus(&cfg.manifest, &cfg.embeddings, !cfg.freeze_embeddings)?;
    if corpus.is_empty() {
        return Err(invalid!("manifest {} has no utterances", cfg.manifest.display()));
    }
    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    write_json(&cfg.out.join(CONFIG_FILE), cfg)?;
    match cfg.precision {
        Precision::F32 => run_train::<f32>(cfg, corpus, &table),
        Precision::F64 => run_train::<f64>(cfg, corpus, &table),
    }
}

fn run_train<F: Real>(cfg: &RunConfig, corpus: Vec<Utterance<f64>>, table: &EmbeddingTable) -> Result<TrainSummary> {
    let corpus: Vec<Utterance<F>> = corpus.iter().map(Utterance::cast).collect();
    let (train_set, test_set) = split_by_session(corpus, cfg.test_session);
    let (train_set, val_set) = validation_split(train_set, cfg.val_fraction, cfg.seed);
    log::info!(
        "{} training, {} validation, {} test utterances",
        train_set.len(),
        val_set.len(),
        test_set.len()
    );
    let mut model = Model::<F>::new(cfg.model_config(), cfg.seed)?;
    if !cfg.freeze_embeddings {
        model.unfreeze_embeddings(table)?;
    }

    let log_path = cfg.out.join(LOG_FILE);
    let file = File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut log = BufWriter::new(file);
    let outcome = train(model, &train_set, &val_set, &cfg.train_config(), |l: &EpochLog| {
        let line = serde_json::to_string(l).expect("serializable");
        writeln!(log, "{line}")
            .and_then(|_| log.flush())
            .map_err(|e| Error::io(&log_path, e))
    })?;
    drop(log);

    let checkpoint = cfg.out.join(CHECKPOINT_FILE);
    let meta = vec![
        ("seed".to_string(), cfg.seed.to_string()),
        ("best_epoch".to_string(), outcome.best_epoch.to_string()),
    ];
    outcome.best.to_checkpoint(meta).save(&checkpoint)?;

    let test = if test_set.is_empty() {
        None
    } else {
        let report = evaluate(&outcome.best, &test_set)?;
        write_json(&cfg.out.join(TEST_REPORT_FILE), &report)?;
        Some(report)
    };
    Ok(TrainSummary {
        checkpoint,
        log: log_path,
        best_epoch: outcome.best_epoch,
        epochs_run: outcome.logs.len(),
        train_size: train_set.len(),
        val_size: val_set.len(),
        test,
    })
}

#[derive(Debug, Clone)]
pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub manifest: PathBuf,
    pub embeddings: PathBuf,
    pub precision: Precision,
    /// Where to write the JSON report.
    pub out: Option<PathBuf>,
}

fn load_model<F: Real>(path: &Path) -> Result<Model<F>> {
    let ckpt = Checkpoint::load(path)?;
    Model::from_checkpoint(&ckpt)
}

/// Prepared corpus matching the checkpoint's embedding handling.
fn corpus_for<F: Real>(model: &Model<F>, manifest: &Path, embeddings: &Path) -> Result<Vec<Utterance<F>>> {
    let (corpus, table) = load_corpus(manifest, embeddings, !model.embeddings_frozen())?;
    if let Some(e) = &model.embedding {
        if e.value.rows() != table.len() {
            return Err(Error::Checkpoint(format!(
                "embed.table has {} rows but {} holds {} words",
                e.value.rows(),
                embeddings.display(),
                table.len()
            )));
        }
    }
    Ok(corpus.iter().map(Utterance::cast).collect())
}

pub fn cmd_eval(args: &EvalArgs) -> Result<EvalReport> {
    let report = match args.precision {
        Precision::F32 => run_eval::<f32>(args),
        Precision::F64 => run_eval::<f64>(args),
    }?;
    if let Some(out) = &args.out {
        if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        write_json(out, &report)?;
    }
    Ok(report)
}

fn run_eval<F: Real>(args: &EvalArgs) -> Result<EvalReport> {
    let model = load_model::<F>(&args.checkpoint)?;
    let corpus = corpus_for(&model, &args.manifest, &args.embeddings)?;
    evaluate(&model, &corpus)
}

#[derive(Debug, Clone)]
pub struct AlignArgs {
    pub checkpoint: PathBuf,
    pub manifest: PathBuf,
    pub embeddings: PathBuf,
    pub precision: Precision,
    pub out_dir: PathBuf,
    /// Ground truth from the synthetic generator (`spans.jsonl`).
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AlignSummary {
    pub utterances: usize,
    /// Mean attention mass a word puts inside its own span, over all words
    /// of utterances that carry spans.
    pub span_mass: Option<f64>,
    /// Same, trigger words only.
    pub trigger_span_mass: Option<f64>,
    /// What uniform attention would give for the trigger words.
    pub trigger_uniform_mass: Option<f64>,
}

pub const ALIGN_SUMMARY_FILE: &str = "summary.json";

/// Writes one `<id>.txt` per utterance: one line per word, the token
/// followed by its head-averaged weights over the frames.
pub fn cmd_align(args: &AlignArgs) -> Result<AlignSummary> {
    match args.precision {
        Precision::F32 => run_align::<f32>(args),
        Precision::F64 => run_align::<f64>(args),
    }
}

fn mass(weights: &[f64], (start, end): (usize, usize)) -> f64 {
    weights[start - 1..end.min(weights.len())].iter().sum()
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn run_align<F: Real>(args: &AlignArgs) -> Result<AlignSummary> {
    let model = load_model::<F>(&args.checkpoint)?;
    if model.variant() != Variant::Proposed {
        return Err(invalid!(
            "alignment dumps need a model with cross-modal attention; this checkpoint is {}",
            model.variant()
        ));
    }
    let truth = args.truth.as_deref().map(load_span_file).transpose()?;
    let corpus = corpus_for(&model, &args.manifest, &args.embeddings)?;
    fs::create_dir_all(&args.out_dir).map_err(|e| Error::io(&args.out_dir, e))?;

    let rows: Vec<(Vec<f64>, Vec<(f64, f64)>)> = corpus
        .par_iter()
        .map(|u| -> Result<_> {
            let pass = model
                .forward(&ModelInput::from_utterance(u))
                .map_err(|e| e.in_utterance(&u.id))?;
            let map = pass.attention.expect("proposed variant attends");
            let avg = map.head_average();
            let mut text = String::new();
            for (tok, row) in u.tokens.iter().zip(&avg) {
                text.push_str(tok);
                for w in row {
                    text.push_str(&format!(" {w:.6}"));
                }
                text.push('\n');
            }
            let path = args.out_dir.join(format!("{}.txt", u.id));
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;

            let spans = truth
                .as_ref()
                .and_then(|t| t.get(&u.id))
                .map(|s| s.spans.clone())
                .or_else(|| u.spans.clone());
            let word_mass = spans
                .as_ref()
                .map(|s| s.iter().zip(&avg).map(|(&sp, row)| mass(row, sp)).collect())
                .unwrap_or_default();
            let trigger = truth.as_ref().and_then(|t| t.get(&u.id)).map(|s| {
                let sp = s.spans[s.trigger];
                (mass(&avg[s.trigger], sp), (sp.1 - sp.0 + 1) as f64 / u.frames() as f64)
            });
            Ok((word_mass, trigger.into_iter().collect()))
        })
        .collect::<Result<_>>()?;

    let words: Vec<f64> = rows.iter().flat_map(|r| r.0.iter().copied()).collect();
    let triggers: Vec<(f64, f64)> = rows.iter().flat_map(|r| r.1.iter().copied()).collect();
    let summary = AlignSummary {
        utterances: corpus.len(),
        span_mass: mean(&words),
        trigger_span_mass: mean(&triggers.iter().map(|t| t.0).collect::<Vec<_>>()),
        trigger_uniform_mass: mean(&triggers.iter().map(|t| t.1).collect::<Vec<_>>()),
    };
    write_json(&args.out_dir.join(ALIGN_SUMMARY_FILE), &summary)?;
    Ok(summary)
}

/// Model size used by [`cmd_gradcheck`]: 3 units per direction and two heads
/// over the 6-wide states.
pub fn gradcheck_config(variant: Variant) -> ModelConfig {
    ModelConfig {
        variant,
        hidden: 3,
        heads: 2,
        ..ModelConfig::default()
    }
}

/// Finite-difference check of every parameter of a tiny model on one short
/// synthetic utterance, in double precision.
pub fn cmd_gradcheck(variant: Variant, seed: u64) -> Result<GradCheckReport> {
    let spec = SyntheticSpec {
        n_utterances: 1,
        words_per_utterance: (2, 3),
        frames_per_word: (2, 3),
        seed,
        ..SyntheticSpec::default()
    };
    let synth = synthesize(&spec)?;
    let table = synthetic_embeddings(&spec);
    let utt = prepare_utterance(&synth[0].record, &table, &spec.frame_spec())?;
    let mut model = Model::<f64>::new(gradcheck_config(variant), seed)?;
    grad_check(
        &mut model,
        |m, pass| match pass {
            Pass::Loss => Ok(m.forward_full(&utt)?.0.value),
            Pass::LossAndGrad => {
                m.zero_grad();
                Ok(m.accumulate(&utt, 1.0)?.0.value)
            }
        },
        &GradCheckConfig::default(),
    )
}

/// Per-parameter table of a gradient check.
pub fn render_gradcheck(report: &GradCheckReport) -> String {
    let mut s = format!(
        "{:<22} {:>7} {:>12} {:>12} {:>6}\n",
        "parameter", "probed", "max rel err", "max abs err", "ok"
    );
    for p in &report.params {
        s.push_str(&format!(
            "{:<22} {:>7} {:>12.3e} {:>12.3e} {:>6}\n",
            p.name,
            p.probed,
            p.max_rel_error,
            p.max_abs_error,
            if p.passed(report.tolerance) { "yes" } else { "NO" }
        ));
    }
    s.push_str(&format!(
        "tolerance {:.0e}, loss {:.6}, finite-difference noise ~{:.1e}\n",
        report.tolerance, report.loss, report.noise_floor
    ));
    s
}

/// Raw (unstandardized) features as CSV. `input` is a WAV file or a
/// directory of them; for a directory `out` is a directory too.
pub fn cmd_extract(input: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let spec = FrameSpec::default();
    let jobs: Vec<(PathBuf, PathBuf)> = if input.is_dir() {
        let mut wavs: Vec<PathBuf> = fs::read_dir(input)
            .map_err(|e| Error::io(input, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
            .collect();
        wavs.sort();
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        wavs.into_iter()
            .map(|w| {
                let csv = out.join(w.file_stem().expect("file name")).with_extension("csv");
                (w, csv)
            })
            .collect()
    } else {
        let csv = if out.is_dir() {
            out.join(input.file_stem().ok_or_else(|| invalid!("{} is not a file", input.display()))?)
                .with_extension("csv")
        } else {
            out.to_path_buf()
        };
        vec![(input.to_path_buf(), csv)]
    };
    jobs.par_iter()
        .map(|(wav, csv)| {
            let audio = read_wav(wav)?;
            let feats = extract_features(&audio, &spec).map_err(|e| e.in_utterance(&wav.display().to_string()))?;
            let file = File::create(csv).map_err(|e| Error::io(csv, e))?;
            let mut w = BufWriter::new(file);
            feats
                .write_csv(&mut w)
                .and_then(|_| w.flush())
                .map_err(|e| Error::io(csv, e))?;
            Ok(csv.clone())
        })
        .collect()
}

/// Generates a synthetic corpus from a JSON spec file (defaults when `None`).
pub fn cmd_synth(spec_file: Option<&Path>, overrides: impl FnOnce(&mut SyntheticSpec), out_dir: &Path) -> Result<SynthCorpus> {
    let mut spec = match spec_file {
        Some(p) => SyntheticSpec::load(p)?,
        None => SyntheticSpec::default(),
    };
    overrides(&mut spec);
    let corpus = generate_synthetic(&spec, out_dir)?;
    write_json(&out_dir.join("spec.json"), &spec)?;
    Ok(corpus)
}
