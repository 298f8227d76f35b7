use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use log::warn;

use crate::error::{Error, Result};
use crate::nn::{Real, Tensor};

pub const EMBED_DIM: usize = 300;

/// Word vectors. Unknown words embed as the zero vector.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingTable {
    dim: usize,
    words: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Vec<f32>,
}

/// Embedded transcript, `M × dim`.
#[derive(Debug, Clone)]
pub struct TokenEmbeddingSequence<F> {
    pub values: Tensor<F>,
    pub tokens: Vec<String>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable {
            dim,
            ..Default::default()
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    /// Inserts or replaces `word`. Returns true if it replaced an entry.
    pub fn insert(&mut self, word: &str, vector: &[f32]) -> bool {
        assert_eq!(vector.len(), self.dim, "embedding dimension");
        match self.index.get(word) {
            Some(&i) => {
                self.vectors[i * self.dim..(i + 1) * self.dim].copy_from_slice(vector);
                true
            }
            None => {
                self.index.insert(word.to_string(), self.words.len());
                self.words.push(word.to_string());
                self.vectors.extend_from_slice(vector);
                false
            }
        }
    }

    pub fn get(&self, word: &str) -> Option<&[f32]> {
        self.index_of(word).map(|i| &self.vectors[i * self.dim..(i + 1) * self.dim])
    }

    /// Vector for `word`, or zeros when out of vocabulary.
    pub fn lookup(&self, word: &str) -> Vec<f32> {
        self.get(word).map_or_else(|| vec![0.0; self.dim], <[f32]>::to_vec)
    }

    /// The full table as a `V × dim` matrix, in insertion order.
    pub fn matrix<F: Real>(&self) -> Tensor<F> {
        let data = self.vectors.iter().map(|&v| F::lit(f64::from(v))).collect();
        Tensor::from_vec(&[self.words.len(), self.dim], data).expect("table is rectangular")
    }

    pub fn embed<F: Real>(&self, tokens: &[String]) -> TokenEmbeddingSequence<F> {
        let mut values = Tensor::zeros(&[tokens.len(), self.dim]);
        for (j, t) in tokens.iter().enumerate() {
            if let Some(v) = self.get(t) {
                for (dst, &x) in values.row_mut(j).iter_mut().zip(v) {
                    *dst = F::lit(f64::from(x));
                }
            }
        }
        TokenEmbeddingSequence {
            values,
            tokens: tokens.to_vec(),
        }
    }

    /// Writes the table in the whitespace-separated text format.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (i, w) in self.words.iter().enumerate() {
            out.push_str(w);
            for v in &self.vectors[i * self.dim..(i + 1) * self.dim] {
                out.push(' ');
                out.push_str(&format!("{v:.6}"));
            }
            out.push('\n');
        }
        File::create(path)
            .and_then(|mut f| f.write_all(out.as_bytes()))
            .map_err(|e| Error::io(path, e))
    }
}

/// Loads `word v1 ... v_dim` lines. With `filter`, only listed words are
/// kept. A repeated word keeps its last vector and logs a warning.
pub fn load_embeddings(path: &Path, dim: usize, filter: Option<&HashSet<String>>) -> Result<EmbeddingTable> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut table = EmbeddingTable::new(dim);
    let mut vec = Vec::with_capacity(dim);
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else { continue };
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        if filter.is_some_and(|f| !f.contains(word)) {
            // still validate the width so a corrupt file fails regardless of filter
            let n = parts.count();
            if n != dim {
                return Err(parse_err(format!("{word:?} has {n} values, expected {dim}")));
            }
            continue;
        }
        vec.clear();
        for p in parts {
            let v: f32 = p.parse().map_err(|_| parse_err(format!("bad number {p:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(format!("non-finite value in {word:?}")));
            }
            vec.push(v);
        }
        if vec.len() != dim {
            return Err(parse_err(format!("{word:?} has {} values, expected {dim}", vec.len())));
        }
        if table.insert(word, &vec) {
            warn!("{}:{}: duplicate embedding for {word:?}, keeping the last one", path.display(), i + 1);
        }
    }
    Ok(table)
}
