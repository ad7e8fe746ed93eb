//! Skip-gram with negative sampling, with an optional hashed character
//! n-gram input layer for subword embeddings.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::embedding::{EmbeddingTable, SubwordTable};
use super::{dot, Vocabulary};
use crate::error::{Error, Result};
use crate::textprep::TokenSeq;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SkipGramConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub lr0: f64,
    pub seed: u64,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        SkipGramConfig {
            dim: 100,
            window: 5,
            negatives: 5,
            epochs: 5,
            lr0: 0.025,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SubwordConfig {
    pub dim: usize,
    pub n_min: usize,
    pub n_max: usize,
    pub buckets: u32,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub lr0: f64,
    pub seed: u64,
}

impl Default for SubwordConfig {
    fn default() -> Self {
        SubwordConfig {
            dim: 100,
            n_min: 3,
            n_max: 6,
            buckets: 1 << 21,
            window: 5,
            negatives: 5,
            epochs: 5,
            lr0: 0.025,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedEmbedding {
    pub table: EmbeddingTable,
    /// Mean negative-sampling loss per training pair, one entry per epoch.
    pub epoch_losses: Vec<f64>,
}

/// Character n-grams of `token` with lengths in `[n_min, n_max]`, shorter than the token itself.
pub fn char_ngrams(token: &str, n_min: usize, n_max: usize) -> Vec<String> {
    let chars: Vec<char> = token.chars().collect();
    let mut out = Vec::new();
    for n in n_min.max(1)..=n_max.min(chars.len().saturating_sub(1)) {
        for w in chars.windows(n) {
            out.push(w.iter().collect());
        }
    }
    out
}

/// FNV-1a over the UTF-8 bytes, reduced modulo the bucket count.
pub(crate) fn ngram_bucket(gram: &str, buckets: u32) -> u32 {
    let mut h: u32 = 2_166_136_261;
    for b in gram.bytes() {
        h ^= b as u32;
        h = h.wrapping_mul(16_777_619);
    }
    h % buckets.max(1)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

struct NegativeTable {
    cumulative: Vec<f64>,
}

impl NegativeTable {
    fn new(counts: &[u64]) -> Self {
        let mut acc = 0.0;
        let cumulative = counts
            .iter()
            .map(|&c| {
                acc += (c as f64).powf(0.75);
                acc
            })
            .collect();
        NegativeTable { cumulative }
    }

    fn sample(&self, rng: &mut impl Rng) -> usize {
        let total = *self.cumulative.last().unwrap_or(&0.0);
        let u = rng.gen::<f64>() * total;
        self.cumulative.partition_point(|&c| c <= u).min(self.cumulative.len() - 1)
    }
}

struct SgnsSetup<'a> {
    dim: usize,
    window: usize,
    negatives: usize,
    epochs: usize,
    lr0: f64,
    /// Input rows composing each vocabulary entry.
    inputs: &'a [Vec<usize>],
    input_rows: usize,
}

/// Returns the trained input matrix and per-epoch mean losses.
fn train_sgns(
    docs: &[Vec<usize>],
    counts: &[u64],
    setup: &SgnsSetup<'_>,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = setup.dim;
    let has_pairs = setup.window > 0 && docs.iter().any(|doc| doc.len() >= 2);
    if !has_pairs || setup.epochs == 0 {
        return Err(Error::Training("no training pairs".into()));
    }
    let v = counts.len();
    let bound = 0.5 / d as f64;
    let mut input: Vec<f64> = (0..setup.input_rows * d).map(|_| rng.gen_range(-bound..bound)).collect();
    let mut output = vec![0.0; v * d];
    let negatives = NegativeTable::new(counts);

    let total_steps = (setup.epochs * docs.iter().map(Vec::len).sum::<usize>()).max(1) as f64;
    let mut step = 0usize;
    let mut hidden = vec![0.0; d];
    let mut grad_hidden = vec![0.0; d];
    let mut losses = Vec::with_capacity(setup.epochs);

    for _ in 0..setup.epochs {
        let mut epoch_loss = 0.0;
        let mut pairs = 0usize;
        for doc in docs {
            for (pos, &center) in doc.iter().enumerate() {
                let lr = setup.lr0 * (1.0 - step as f64 / total_steps).max(1e-4);
                step += 1;
                let reach = setup.window - rng.gen_range(0..setup.window);
                let lo = pos.saturating_sub(reach);
                let hi = (pos + reach).min(doc.len() - 1);
                let rows = &setup.inputs[center];
                let scale = 1.0 / rows.len() as f64;
                for ctx_pos in lo..=hi {
                    if ctx_pos == pos {
                        continue;
                    }
                    let context = doc[ctx_pos];
                    hidden.iter_mut().for_each(|h| *h = 0.0);
                    for &r in rows {
                        for (h, x) in hidden.iter_mut().zip(&input[r * d..(r + 1) * d]) {
                            *h += x * scale;
                        }
                    }
                    grad_hidden.iter_mut().for_each(|g| *g = 0.0);
                    let mut pair_loss = 0.0;
                    for k in 0..=setup.negatives {
                        let (target, label) = if k == 0 {
                            (context, 1.0)
                        } else {
                            let t = negatives.sample(rng);
                            if t == context {
                                continue;
                            }
                            (t, 0.0)
                        };
                        let out_row = &mut output[target * d..(target + 1) * d];
                        let score = sigmoid(dot(&hidden, out_row));
                        pair_loss -= if label > 0.0 {
                            score.max(1e-12).ln()
                        } else {
                            (1.0 - score).max(1e-12).ln()
                        };
                        let g = score - label;
                        for ((gh, o), h) in grad_hidden.iter_mut().zip(out_row.iter_mut()).zip(&hidden) {
                            *gh += g * *o;
                            *o -= lr * g * h;
                        }
                    }
                    for &r in rows {
                        for (x, gh) in input[r * d..(r + 1) * d].iter_mut().zip(&grad_hidden) {
                            *x -= lr * gh * scale;
                        }
                    }
                    epoch_loss += pair_loss;
                    pairs += 1;
                }
            }
        }
        let mean = epoch_loss / pairs.max(1) as f64;
        if !mean.is_finite() {
            return Err(Error::Training(format!("embedding loss diverged at epoch {}", losses.len() + 1)));
        }
        losses.push(mean);
    }
    Ok((input, losses))
}

fn index_docs(docs: &[TokenSeq], vocab: &Vocabulary) -> (Vec<Vec<usize>>, Vec<u64>) {
    let mut counts = vec![0u64; vocab.len()];
    let ids = docs
        .iter()
        .map(|doc| {
            doc.iter()
                .filter_map(|t| vocab.get(t))
                .inspect(|&i| counts[i] += 1)
                .collect()
        })
        .collect();
    (ids, counts)
}

pub fn train_skipgram(docs: &[TokenSeq], vocab: &Vocabulary, config: &SkipGramConfig) -> Result<TrainedEmbedding> {
    if vocab.is_empty() {
        return Err(Error::precondition("skip-gram training needs a non-empty vocabulary"));
    }
    let (ids, counts) = index_docs(docs, vocab);
    let inputs: Vec<Vec<usize>> = (0..vocab.len()).map(|i| vec![i]).collect();
    let setup = SgnsSetup {
        dim: config.dim,
        window: config.window,
        negatives: config.negatives,
        epochs: config.epochs,
        lr0: config.lr0,
        inputs: &inputs,
        input_rows: vocab.len(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (matrix, epoch_losses) = train_sgns(&ids, &counts, &setup, &mut rng)?;
    Ok(TrainedEmbedding {
        table: EmbeddingTable::new(vocab.clone(), config.dim, matrix)?,
        epoch_losses,
    })
}

pub fn train_subword(docs: &[TokenSeq], vocab: &Vocabulary, config: &SubwordConfig) -> Result<TrainedEmbedding> {
    if vocab.is_empty() {
        return Err(Error::precondition("subword training needs a non-empty vocabulary"));
    }
    let (ids, counts) = index_docs(docs, vocab);
    let token_buckets: Vec<Vec<u32>> = vocab
        .tokens()
        .iter()
        .map(|t| {
            char_ngrams(t, config.n_min, config.n_max)
                .iter()
                .map(|g| ngram_bucket(g, config.buckets))
                .collect()
        })
        .collect();
    let used: BTreeSet<u32> = token_buckets.iter().flatten().copied().collect();
    let bucket_row: BTreeMap<u32, usize> = used.iter().enumerate().map(|(i, &b)| (b, i)).collect();
    let v = vocab.len();
    let inputs: Vec<Vec<usize>> = token_buckets
        .iter()
        .enumerate()
        .map(|(i, buckets)| {
            std::iter::once(i)
                .chain(buckets.iter().map(|b| v + bucket_row[b]))
                .collect()
        })
        .collect();
    let setup = SgnsSetup {
        dim: config.dim,
        window: config.window,
        negatives: config.negatives,
        epochs: config.epochs,
        lr0: config.lr0,
        inputs: &inputs,
        input_rows: v + bucket_row.len(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (mut matrix, epoch_losses) = train_sgns(&ids, &counts, &setup, &mut rng)?;
    let bucket_vectors = matrix.split_off(v * config.dim);
    let mut table = EmbeddingTable::new(vocab.clone(), config.dim, matrix)?;
    table.subword = Some(SubwordTable {
        n_min: config.n_min,
        n_max: config.n_max,
        buckets: config.buckets,
        index: bucket_row,
        vectors: bucket_vectors,
    });
    Ok(TrainedEmbedding { table, epoch_losses })
}
