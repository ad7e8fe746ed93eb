//! Document featurization: bag-of-words counts, TF-IDF, skip-gram and
//! subword embeddings, sentence pooling, and SMOTE oversampling.

mod embedding;
mod skipgram;
mod smote;
mod tfidf;
mod vocab;

pub use embedding::{embed_sentence, EmbeddingTable, SubwordTable};
pub use skipgram::{char_ngrams, train_skipgram, train_subword, SkipGramConfig, SubwordConfig, TrainedEmbedding};
pub use smote::{smote_balance, SmoteConfig, SmoteOutput, SmoteReport, SmoteTarget, SyntheticOrigin};
pub use tfidf::{count_vectorize, fit_tfidf, smoothed_idf, tfidf_transform, TfIdfModel};
pub use vocab::{build_vocab, Vocabulary};

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sparse vector with strictly increasing indices and no stored zeros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    dim: usize,
    entries: Vec<(usize, f64)>,
}

impl SparseVector {
    pub fn zeros(dim: usize) -> Self {
        SparseVector {
            dim,
            entries: Vec::new(),
        }
    }

    /// Builds from arbitrary (index, value) pairs, summing duplicates and dropping zeros.
    pub fn from_pairs(dim: usize, mut pairs: Vec<(usize, f64)>) -> Result<Self> {
        pairs.sort_by_key(|&(i, _)| i);
        let mut entries: Vec<(usize, f64)> = Vec::with_capacity(pairs.len());
        for (i, v) in pairs {
            if i >= dim {
                return Err(Error::precondition(format!("index {i} out of range for dimension {dim}")));
            }
            match entries.last_mut() {
                Some((j, acc)) if *j == i => *acc += v,
                _ => entries.push((i, v)),
            }
        }
        entries.retain(|&(_, v)| v != 0.0);
        Ok(SparseVector { dim, entries })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|(_, v)| v * v).sum::<f64>().sqrt()
    }

    pub fn to_dense(&self) -> DenseVector {
        let mut v = vec![0.0; self.dim];
        for &(i, x) in &self.entries {
            v[i] = x;
        }
        DenseVector(v)
    }
}

/// Dense real vector with finite entries.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DenseVector(Vec<f64>);

impl DenseVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite value at position {i}")));
        }
        Ok(DenseVector(values))
    }

    pub fn zeros(dim: usize) -> Self {
        DenseVector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for DenseVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for DenseVector {
    fn from(v: Vec<f64>) -> Self {
        debug_assert!(v.iter().all(|x| x.is_finite()));
        DenseVector(v)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
