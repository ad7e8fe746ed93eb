use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::skipgram::{char_ngrams, ngram_bucket};
use super::{DenseVector, Vocabulary};
use crate::error::{Error, Result};
use crate::textprep::TokenSeq;

/// Hashed character n-gram rows attached to a subword table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubwordTable {
    pub n_min: usize,
    pub n_max: usize,
    pub buckets: u32,
    /// Materialized bucket id to row offset in `vectors`.
    pub index: BTreeMap<u32, usize>,
    pub vectors: Vec<f64>,
}

/// Token vectors, optionally composed with hashed character n-grams.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub vocab: Vocabulary,
    pub dim: usize,
    /// Row-major `vocab.len() x dim` whole-token matrix.
    pub vectors: Vec<f64>,
    pub subword: Option<SubwordTable>,
}

impl EmbeddingTable {
    pub fn new(vocab: Vocabulary, dim: usize, vectors: Vec<f64>) -> Result<Self> {
        if vectors.len() != vocab.len() * dim {
            return Err(Error::precondition(format!(
                "embedding matrix has {} values, expected {} x {}",
                vectors.len(),
                vocab.len(),
                dim
            )));
        }
        Ok(EmbeddingTable {
            vocab,
            dim,
            vectors,
            subword: None,
        })
    }

    pub fn row(&self, index: usize) -> &[f64] {
        &self.vectors[index * self.dim..(index + 1) * self.dim]
    }

    /// The vector for `token`, or `None` when nothing in the table covers it.
    pub fn token_vector(&self, token: &str) -> Option<Vec<f64>> {
        let word = self.vocab.get(token);
        let Some(sub) = &self.subword else {
            return word.map(|i| self.row(i).to_vec());
        };
        let mut acc = vec![0.0; self.dim];
        let mut parts = 0usize;
        if let Some(i) = word {
            add(&mut acc, self.row(i));
            parts += 1;
        }
        for gram in char_ngrams(token, sub.n_min, sub.n_max) {
            if let Some(&r) = sub.index.get(&ngram_bucket(&gram, sub.buckets)) {
                add(&mut acc, &sub.vectors[r * self.dim..(r + 1) * self.dim]);
                parts += 1;
            }
        }
        if parts == 0 {
            return None;
        }
        let inv = 1.0 / parts as f64;
        acc.iter_mut().for_each(|v| *v *= inv);
        Some(acc)
    }

    /// "V d" header followed by one `token v1 .. vd` line per vocabulary entry.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} {}", self.vocab.len(), self.dim);
        for (i, token) in self.vocab.tokens().iter().enumerate() {
            let v = match self.subword {
                Some(_) => self.token_vector(token).unwrap_or_else(|| self.row(i).to_vec()),
                None => self.row(i).to_vec(),
            };
            out.push_str(token);
            for x in v {
                let _ = write!(out, " {x}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(content: &str) -> Result<Self> {
        let mut lines = content.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| Error::data("embedding file is empty"))?;
        let mut parts = header.split_whitespace();
        let parse_usize = |s: Option<&str>| -> Result<usize> {
            s.and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::data("embedding header must be `V d`"))
        };
        let n = parse_usize(parts.next())?;
        let dim = parse_usize(parts.next())?;
        let mut tokens = Vec::with_capacity(n);
        let mut vectors = Vec::with_capacity(n * dim);
        for (lineno, line) in lines {
            let mut fields = line.split(' ').filter(|f| !f.is_empty());
            let token = fields.next().unwrap_or_default().to_string();
            let values: Vec<f64> = fields
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::data(format!("bad float at line {}: {e}", lineno + 1)))?;
            if values.len() != dim {
                return Err(Error::data(format!(
                    "line {} has {} values, expected {dim}",
                    lineno + 1,
                    values.len()
                )));
            }
            tokens.push(token);
            vectors.extend(values);
        }
        if tokens.len() != n {
            return Err(Error::data(format!("header declares {n} tokens, found {}", tokens.len())));
        }
        Self::new(Vocabulary::from_tokens(tokens)?, dim, vectors)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_text(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

fn add(acc: &mut [f64], row: &[f64]) {
    acc.iter_mut().zip(row).for_each(|(a, b)| *a += b);
}

/// Mean of the available token vectors; the zero vector when none are available.
pub fn embed_sentence(tokens: &TokenSeq, table: &EmbeddingTable) -> DenseVector {
    let mut acc = vec![0.0; table.dim];
    let mut n = 0usize;
    for t in tokens.iter() {
        if let Some(v) = table.token_vector(t) {
            add(&mut acc, &v);
            n += 1;
        }
    }
    if n > 0 {
        let inv = 1.0 / n as f64;
        acc.iter_mut().for_each(|v| *v *= inv);
    }
    DenseVector::from(acc)
}
