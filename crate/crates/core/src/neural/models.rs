use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::ModelGraph;
use super::layers::{Activation, LayerSpec, Mode, Value};
use super::tensor::Mat;
use super::train::predict_proba;
use crate::corpus::NUM_CLASSES;
use crate::error::Result;
use crate::features::{DenseVector, Vocabulary};
use crate::textprep::TokenSeq;

pub const PAD_ID: usize = 0;
pub const CLS_ID: usize = 1;
pub const UNK_ID: usize = 2;
const RESERVED: usize = 3;

/// Token to id mapping with reserved pad, start and unknown ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct TokenIndex {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl From<Vec<String>> for TokenIndex {
    fn from(tokens: Vec<String>) -> Self {
        let ids = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i + RESERVED)).collect();
        TokenIndex { tokens, ids }
    }
}

impl From<TokenIndex> for Vec<String> {
    fn from(t: TokenIndex) -> Self {
        t.tokens
    }
}

impl TokenIndex {
    pub fn from_vocab(vocab: &Vocabulary) -> Self {
        TokenIndex::from(vocab.tokens().to_vec())
    }

    /// Number of ids including the reserved ones.
    pub fn size(&self) -> usize {
        self.tokens.len() + RESERVED
    }

    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(UNK_ID)
    }

    /// Ids truncated to `max_len`, optionally led by the start token. An empty
    /// sequence becomes the lone start token.
    pub fn encode(&self, tokens: &TokenSeq, max_len: usize, with_cls: bool) -> Vec<usize> {
        let mut ids = Vec::with_capacity(max_len);
        if with_cls {
            ids.push(CLS_ID);
        }
        ids.extend(tokens.iter().map(|t| self.id(t)));
        ids.truncate(max_len);
        if ids.is_empty() {
            ids.push(CLS_ID);
        }
        ids
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub max_len: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub blocks: usize,
    pub ff_dim: usize,
    pub dropout: f64,
    pub classes: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            vocab_size: RESERVED,
            max_len: 64,
            model_dim: 64,
            heads: 2,
            blocks: 2,
            ff_dim: 128,
            dropout: 0.1,
            classes: NUM_CLASSES,
        }
    }
}

/// Transformer encoder plus a classification head used to train it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextualEncoder {
    pub config: EncoderConfig,
    pub index: TokenIndex,
    pub graph: ModelGraph,
}

impl ContextualEncoder {
    pub fn new(index: TokenIndex, config: EncoderConfig, seed: u64) -> Result<Self> {
        let config = EncoderConfig {
            vocab_size: index.size(),
            ..config
        };
        let mut specs = vec![LayerSpec::Embedding {
            vocab: config.vocab_size,
            dim: config.model_dim,
            max_len: Some(config.max_len),
            pad_id: Some(PAD_ID),
        }];
        for _ in 0..config.blocks {
            specs.push(LayerSpec::SelfAttentionBlock {
                model_dim: config.model_dim,
                heads: config.heads,
                ff_dim: config.ff_dim,
            });
        }
        specs.push(LayerSpec::MeanPool);
        specs.extend(softmax_head_specs(config.model_dim, config.classes, config.dropout));
        let graph = ModelGraph::new(specs, None, seed)?.with_config(serde_json::to_value(config)?);
        Ok(ContextualEncoder { config, index, graph })
    }

    pub fn dim(&self) -> usize {
        self.config.model_dim
    }

    pub fn input(&self, tokens: &TokenSeq) -> Value {
        Value::Ids(self.index.encode(tokens, self.config.max_len, true))
    }

    /// Mean-pooled sentence vector.
    pub fn encode(&self, tokens: &TokenSeq) -> Result<DenseVector> {
        self.encode_ids(&self.input(tokens))
    }

    pub fn encode_ids(&self, input: &Value) -> Result<DenseVector> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pooled = self.graph.forward_prefix(input, self.config.blocks + 2, Mode::Infer, &mut rng)?;
        Ok(DenseVector::from(pooled.data))
    }

    /// Final-block states of the non-pad positions, start token first.
    pub fn token_states(&self, tokens: &TokenSeq) -> Result<Mat> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        self.graph
            .forward_prefix(&self.input(tokens), self.config.blocks + 1, Mode::Infer, &mut rng)
    }
}

fn softmax_head_specs(input: usize, classes: usize, dropout: f64) -> Vec<LayerSpec> {
    vec![
        LayerSpec::Dropout { rate: dropout },
        LayerSpec::Dense {
            input,
            units: classes,
            activation: Activation::Identity,
        },
    ]
}

/// Dropout then a dense layer over a fixed input vector.
pub fn softmax_head(input: usize, classes: usize, dropout: f64, seed: u64) -> Result<ModelGraph> {
    ModelGraph::new(softmax_head_specs(input, classes, dropout), Some(input), seed)
}

/// What a sequence model reads at each position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SequenceInput {
    /// Token ids through a learned embedding.
    Tokens { vocab_size: usize },
    /// Precomputed vectors of this width, one per position.
    Vectors { dim: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HybridConfig {
    pub embed_dim: usize,
    pub max_len: usize,
    pub kernel: usize,
    pub filters: usize,
    pub pool: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub classes: usize,
}

impl Default for HybridConfig {
    fn default() -> Self {
        HybridConfig {
            embed_dim: 100,
            max_len: 64,
            kernel: 3,
            filters: 64,
            pool: 2,
            hidden: 64,
            dropout: 0.1,
            classes: NUM_CLASSES,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceArch {
    /// Convolution, max-pool, then LSTM.
    Hybrid,
    Rnn,
    Lstm,
}

fn input_specs(cfg: &HybridConfig, input: SequenceInput) -> (Vec<LayerSpec>, usize) {
    match input {
        SequenceInput::Tokens { vocab_size } => (
            vec![LayerSpec::Embedding {
                vocab: vocab_size,
                dim: cfg.embed_dim,
                max_len: None,
                pad_id: Some(PAD_ID),
            }],
            cfg.embed_dim,
        ),
        SequenceInput::Vectors { dim } => (Vec::new(), dim),
    }
}

pub fn build_sequence_model(arch: SequenceArch, cfg: &HybridConfig, input: SequenceInput, seed: u64) -> Result<ModelGraph> {
    let (mut specs, width) = input_specs(cfg, input);
    match arch {
        SequenceArch::Hybrid => {
            specs.push(LayerSpec::Conv1d {
                input: width,
                filters: cfg.filters,
                width: cfg.kernel,
                activation: Activation::Relu,
            });
            specs.push(LayerSpec::MaxPool1d { width: cfg.pool });
            specs.push(LayerSpec::LstmCell {
                input: cfg.filters,
                hidden: cfg.hidden,
            });
        }
        SequenceArch::Rnn => specs.push(LayerSpec::RnnCell {
            input: width,
            hidden: cfg.hidden,
        }),
        SequenceArch::Lstm => specs.push(LayerSpec::LstmCell {
            input: width,
            hidden: cfg.hidden,
        }),
    }
    specs.extend(softmax_head_specs(cfg.hidden, cfg.classes, cfg.dropout));
    let first_width = match input {
        SequenceInput::Tokens { .. } => None,
        SequenceInput::Vectors { dim } => Some(dim),
    };
    let echo = serde_json::json!({ "arch": arch, "input": input, "hybrid": cfg });
    Ok(ModelGraph::new(specs, first_width, seed)?.with_config(echo))
}

pub fn build_hybrid(cfg: &HybridConfig, input: SequenceInput, seed: u64) -> Result<ModelGraph> {
    build_sequence_model(SequenceArch::Hybrid, cfg, input, seed)
}

/// Class distribution of a token-input sequence model.
pub fn hybrid_forward(tokens: &TokenSeq, index: &TokenIndex, model: &ModelGraph, max_len: usize) -> Result<DenseVector> {
    predict_proba(model, &Value::Ids(index.encode(tokens, max_len, false)))
}

#[cfg(test)]
mod tests {
    use super::super::gradcheck::grad_check;
    use super::super::train::Example;
    use super::*;
    use crate::features::cosine;

    fn index() -> TokenIndex {
        TokenIndex::from(vec!["ক".to_string(), "খ".to_string(), "গ".to_string()])
    }

    fn seq(words: &[&str]) -> TokenSeq {
        words.iter().collect()
    }

    #[test]
    fn token_ids() {
        let idx = index();
        assert_eq!(idx.size(), 6);
        assert_eq!(idx.encode(&seq(&["খ", "z"]), 64, true), vec![CLS_ID, 4, UNK_ID]);
        assert_eq!(idx.encode(&seq(&[]), 64, false), vec![CLS_ID]);
        assert_eq!(idx.encode(&seq(&["ক", "ক", "ক"]), 2, true), vec![CLS_ID, 3]);
    }

    #[test]
    fn encoder_shape_masking_and_seeds() {
        let enc = ContextualEncoder::new(index(), EncoderConfig::default(), 1).unwrap();
        let v = enc.encode(&seq(&["ক", "গ"])).unwrap();
        assert_eq!(v.dim(), 64);
        let mut padded = enc.input(&seq(&["ক", "গ"]));
        if let Value::Ids(ids) = &mut padded {
            ids.extend([PAD_ID; 5]);
        }
        assert_eq!(enc.encode_ids(&padded).unwrap(), v);
        let empty = enc.encode(&seq(&[])).unwrap();
        assert_eq!(empty.dim(), 64);
        let other = ContextualEncoder::new(index(), EncoderConfig::default(), 2).unwrap();
        assert!(cosine(&v, &other.encode(&seq(&["ক", "গ"])).unwrap()) < 0.999);
        assert_eq!(enc.token_states(&seq(&["ক", "গ"])).unwrap().rows, 3);
    }

    #[test]
    fn hybrid_outputs_distribution() {
        let idx = index();
        let cfg = HybridConfig::default();
        let model = build_hybrid(&cfg, SequenceInput::Tokens { vocab_size: idx.size() }, 3).unwrap();
        let p = hybrid_forward(&seq(&["ক", "খ", "গ"]), &idx, &model, cfg.max_len).unwrap();
        assert_eq!(p.dim(), 8);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert_eq!(p, hybrid_forward(&seq(&["ক", "খ", "গ"]), &idx, &model, cfg.max_len).unwrap());
    }

    #[test]
    fn hybrid_gradients() {
        let idx = index();
        let model = build_hybrid(&HybridConfig::default(), SequenceInput::Tokens { vocab_size: idx.size() }, 4).unwrap();
        let batch = vec![Example::new(Value::Ids(vec![3, 5]), 2)];
        let err = grad_check(&model, &batch, 1e-5).unwrap();
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn encoder_block_gradients() {
        let cfg = EncoderConfig {
            blocks: 1,
            ..Default::default()
        };
        let enc = ContextualEncoder::new(index(), cfg, 5).unwrap();
        let batch = vec![Example::new(enc.input(&seq(&["ক", "গ", "খ"])), 6)];
        let err = grad_check(&enc.graph, &batch, 1e-5).unwrap();
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn baselines_build_for_vectors() {
        for arch in [SequenceArch::Rnn, SequenceArch::Lstm, SequenceArch::Hybrid] {
            let m = build_sequence_model(arch, &HybridConfig::default(), SequenceInput::Vectors { dim: 7 }, 1).unwrap();
            let x = Value::Seq(Mat::from_vec(3, 7, vec![0.1; 21]));
            assert_eq!(predict_proba(&m, &x).unwrap().dim(), 8);
        }
    }
}
