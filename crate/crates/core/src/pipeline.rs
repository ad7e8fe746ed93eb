//! Feature spaces, model kinds and the trained pipeline artifact shared by the
//! grid runner and the command line.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::boosting::{boost_fit, BoostConfig, BoostedEnsemble};
use crate::corpus::{Corpus, EmotionLabel, Split, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::features::{
    build_vocab, count_vectorize, embed_sentence, fit_tfidf, smote_balance, tfidf_transform, train_skipgram,
    train_subword, DenseVector, EmbeddingTable, SkipGramConfig, SmoteConfig, SmoteReport, SubwordConfig, TfIdfModel,
    Vocabulary,
};
use crate::learners::{derive_seed, fit_weak_learner, LearnerHyper, WeakLearner, WeakLearnerKind};
use crate::manifest::RunManifest;
use crate::neural::{
    build_sequence_model, predict_proba, train_supervised, ContextualEncoder, EncoderConfig, Example, HybridConfig,
    Mat, ModelGraph, SequenceArch, SequenceInput, TokenIndex, TrainConfig, Value,
};
use crate::textprep::{Preprocessor, TokenSeq};

pub const PIPELINE_VERSION: &str = "emoforge-pipeline/1";

/// Flag recorded when a sequence model reads a repeated sentence vector.
pub const FLAG_REPEATED_INPUT: &str = "sequence_model_on_repeated_sentence_vector";
/// Flag recorded when naive Bayes features were shifted to be nonnegative.
pub const FLAG_NB_SHIFT: &str = "naive_bayes_min_shift";
/// Flag recorded when synthetic sequences were interpolated position by position.
pub const FLAG_SEQUENCE_SMOTE: &str = "smote_sequences_from_pooled_origins";

macro_rules! named_enum {
    ($name:ident, $what:literal { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                $name::ALL
                    .iter()
                    .copied()
                    .find(|k| k.as_str() == s)
                    .ok_or_else(|| {
                        let known: Vec<&str> = $name::ALL.iter().map(|k| k.as_str()).collect();
                        Error::data(format!(concat!("unknown ", $what, " `{}`, expected one of {}"), s, known.join(", ")))
                    })
            }
        }
    };
}

named_enum!(FeatureKind, "feature" {
    Count => "count",
    Tfidf => "tfidf",
    Skipgram => "skipgram",
    Subword => "subword",
    Contextual => "contextual",
});

named_enum!(ModelKind, "model" {
    Dt => "dt",
    Rf => "rf",
    Svm => "svm",
    Nb => "nb",
    Rnn => "rnn",
    Lstm => "lstm",
    Hybrid => "hybrid",
    Ensemble => "ensemble",
});

impl ModelKind {
    fn sequence_arch(self) -> Option<SequenceArch> {
        match self {
            ModelKind::Rnn => Some(SequenceArch::Rnn),
            ModelKind::Lstm => Some(SequenceArch::Lstm),
            ModelKind::Hybrid => Some(SequenceArch::Hybrid),
            _ => None,
        }
    }
}

/// Every tunable default, as read from a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed used when no seed is given on the command line.
    pub seed: u64,
    pub min_freq: u64,
    pub skipgram: SkipGramConfig,
    pub subword: SubwordConfig,
    pub encoder: EncoderConfig,
    pub encoder_train: TrainConfig,
    pub hybrid: HybridConfig,
    pub sequence_train: TrainConfig,
    pub learners: LearnerHyper,
    pub boost: BoostConfig,
    pub smote: SmoteConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let ens = crate::boosting::EnsembleConfig::default();
        ExperimentConfig {
            seed: 0,
            min_freq: 1,
            skipgram: SkipGramConfig::default(),
            subword: SubwordConfig::default(),
            encoder: ens.encoder,
            encoder_train: ens.encoder_train,
            hybrid: HybridConfig::default(),
            sequence_train: TrainConfig {
                lr: 1e-3,
                ..TrainConfig::default()
            },
            learners: LearnerHyper {
                head: ens.head,
                ..LearnerHyper::default()
            },
            boost: ens.boost,
            smote: SmoteConfig::default(),
        }
    }
}

/// Labeled documents of one split.
#[derive(Debug, Clone, Default)]
pub struct LabeledSet {
    pub docs: Vec<TokenSeq>,
    pub labels: Vec<usize>,
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }
}

#[derive(Debug, Clone, Default)]
pub struct SplitData {
    pub train: LabeledSet,
    pub val: LabeledSet,
    pub test: LabeledSet,
}

/// Labeled samples grouped by split, tokenized with `pre` (or by whitespace when `None`).
pub fn split_data(corpus: &Corpus, pre: Option<&Preprocessor>) -> Result<SplitData> {
    let mut out = SplitData::default();
    let mut any_split = false;
    for s in corpus.samples() {
        let Some(label) = s.label else { continue };
        let Some(split) = s.split else { continue };
        any_split = true;
        let docs = match pre {
            Some(p) => p.tokens(&s.text),
            None => s.text.split_whitespace().collect(),
        };
        let set = match split {
            Split::Train => &mut out.train,
            Split::Val => &mut out.val,
            Split::Test => &mut out.test,
        };
        set.docs.push(docs);
        set.labels.push(label.index());
    }
    if !any_split {
        return Err(Error::precondition("corpus has no labeled samples assigned to a split"));
    }
    if out.train.is_empty() {
        return Err(Error::precondition("training split is empty"));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Featurizer {
    Count { vocab: Vocabulary },
    Tfidf { model: TfIdfModel },
    Skipgram { table: EmbeddingTable },
    Subword { table: EmbeddingTable },
    Contextual { encoder: Box<ContextualEncoder> },
}

fn table_sequence(table: &EmbeddingTable, tokens: &TokenSeq) -> Mat {
    let rows: Vec<Vec<f64>> = tokens.iter().filter_map(|t| table.token_vector(t)).collect();
    if rows.is_empty() {
        Mat::zeros(1, table.dim)
    } else {
        Mat::from_rows(&rows)
    }
}

impl Featurizer {
    /// Fits the feature space on the training split; the contextual encoder is
    /// trained on the labels with early stopping on `val`.
    pub fn fit(kind: FeatureKind, train: &LabeledSet, val: &LabeledSet, cfg: &ExperimentConfig, seed: u64) -> Result<Self> {
        let vocab = build_vocab(&train.docs, cfg.min_freq)?;
        Ok(match kind {
            FeatureKind::Count => Featurizer::Count { vocab },
            FeatureKind::Tfidf => Featurizer::Tfidf {
                model: fit_tfidf(&train.docs, &vocab),
            },
            FeatureKind::Skipgram => {
                let c = SkipGramConfig {
                    seed,
                    ..cfg.skipgram.clone()
                };
                Featurizer::Skipgram {
                    table: train_skipgram(&train.docs, &vocab, &c)?.table,
                }
            }
            FeatureKind::Subword => {
                let c = SubwordConfig {
                    seed,
                    ..cfg.subword.clone()
                };
                Featurizer::Subword {
                    table: train_subword(&train.docs, &vocab, &c)?.table,
                }
            }
            FeatureKind::Contextual => {
                let encoder = ContextualEncoder::new(TokenIndex::from_vocab(&vocab), cfg.encoder, derive_seed(seed, 1))?;
                let examples = |set: &LabeledSet| -> Vec<Example> {
                    set.docs
                        .iter()
                        .zip(&set.labels)
                        .map(|(d, &y)| Example::new(encoder.input(d), y))
                        .collect()
                };
                let tc = TrainConfig {
                    seed: derive_seed(seed, 2),
                    ..cfg.encoder_train
                };
                let trained = train_supervised(&encoder.graph, &examples(train), &examples(val), &tc)?;
                Featurizer::Contextual {
                    encoder: Box::new(ContextualEncoder {
                        graph: trained.model,
                        ..encoder
                    }),
                }
            }
        })
    }

    pub fn kind(&self) -> FeatureKind {
        match self {
            Featurizer::Count { .. } => FeatureKind::Count,
            Featurizer::Tfidf { .. } => FeatureKind::Tfidf,
            Featurizer::Skipgram { .. } => FeatureKind::Skipgram,
            Featurizer::Subword { .. } => FeatureKind::Subword,
            Featurizer::Contextual { .. } => FeatureKind::Contextual,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Featurizer::Count { vocab } => vocab.len(),
            Featurizer::Tfidf { model } => model.vocab.len(),
            Featurizer::Skipgram { table } | Featurizer::Subword { table } => table.dim,
            Featurizer::Contextual { encoder } => encoder.dim(),
        }
    }

    pub fn sentence_vector(&self, tokens: &TokenSeq) -> Result<DenseVector> {
        Ok(match self {
            Featurizer::Count { vocab } => count_vectorize(tokens, vocab).to_dense(),
            Featurizer::Tfidf { model } => tfidf_transform(tokens, model).to_dense(),
            Featurizer::Skipgram { table } | Featurizer::Subword { table } => embed_sentence(tokens, table),
            Featurizer::Contextual { encoder } => encoder.encode(tokens)?,
        })
    }

    /// Whether [`Featurizer::sequence`] repeats a sentence vector rather than reading tokens.
    pub fn sequence_is_repeated(&self) -> bool {
        matches!(self, Featurizer::Count { .. } | Featurizer::Tfidf { .. })
    }

    /// One row per position, at most `max_len` rows.
    pub fn sequence(&self, tokens: &TokenSeq, max_len: usize) -> Result<Mat> {
        let mut m = match self {
            Featurizer::Count { .. } | Featurizer::Tfidf { .. } => {
                let v = self.sentence_vector(tokens)?;
                let n = tokens.len().clamp(1, max_len.max(1));
                Mat::from_rows(&vec![v.into_inner(); n])
            }
            Featurizer::Skipgram { table } | Featurizer::Subword { table } => table_sequence(table, tokens),
            Featurizer::Contextual { encoder } => encoder.token_states(tokens)?,
        };
        if m.rows > max_len {
            m = Mat::from_vec(max_len, m.cols, m.data[..max_len * m.cols].to_vec());
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainedModel {
    Learner {
        learner: WeakLearner,
        /// Added to every feature (then clamped at 0) before naive Bayes sees it.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        shift: Option<Vec<f64>>,
    },
    Sequence {
        arch: SequenceArch,
        graph: ModelGraph,
    },
    Ensemble {
        ensemble: BoostedEnsemble,
    },
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub model: TrainedModel,
    pub smote: Option<SmoteReport>,
    pub flags: Vec<String>,
}

fn learner_kind(model: ModelKind) -> Option<WeakLearnerKind> {
    match model {
        ModelKind::Dt => Some(WeakLearnerKind::DecisionTree),
        ModelKind::Rf => Some(WeakLearnerKind::RandomForest),
        ModelKind::Svm => Some(WeakLearnerKind::LinearSvm),
        ModelKind::Nb => Some(WeakLearnerKind::NaiveBayes),
        _ => None,
    }
}

fn interpolate_rows(base: &Mat, neighbor: &Mat, lambda: f64) -> Mat {
    let mut out = base.clone();
    for t in 0..base.rows {
        let nr = neighbor.row(t % neighbor.rows);
        for (v, n) in out.row_mut(t).iter_mut().zip(nr) {
            *v += lambda * (n - *v);
        }
    }
    out
}

/// Fits `model` on `featurizer`'s view of the training split, optionally SMOTE-balanced.
pub fn fit_model(
    model: ModelKind,
    featurizer: &Featurizer,
    train: &LabeledSet,
    val: &LabeledSet,
    cfg: &ExperimentConfig,
    balance: bool,
    seed: u64,
) -> Result<FitOutcome> {
    let mut flags = Vec::new();
    let pooled: Vec<DenseVector> = train
        .docs
        .iter()
        .map(|d| featurizer.sentence_vector(d))
        .collect::<Result<_>>()?;
    let smote_cfg = SmoteConfig {
        seed: derive_seed(seed, 7),
        ..cfg.smote
    };
    let balanced = if balance {
        Some(smote_balance(&pooled, &train.labels, NUM_CLASSES, &smote_cfg)?)
    } else {
        None
    };
    let report = balanced.as_ref().map(|b| b.report.clone());

    if let Some(arch) = model.sequence_arch() {
        let max_len = cfg.hybrid.max_len;
        if featurizer.sequence_is_repeated() {
            flags.push(FLAG_REPEATED_INPUT.to_string());
        }
        let mut seqs: Vec<Mat> = train
            .docs
            .iter()
            .map(|d| featurizer.sequence(d, max_len))
            .collect::<Result<_>>()?;
        let mut labels = train.labels.clone();
        if let Some(b) = &balanced {
            flags.push(FLAG_SEQUENCE_SMOTE.to_string());
            let synthetic: Vec<Mat> = b
                .origins
                .iter()
                .map(|o| interpolate_rows(&seqs[o.base], &seqs[o.neighbor], o.lambda))
                .collect();
            seqs.extend(synthetic);
            labels = b.y.clone();
        }
        let examples: Vec<Example> = seqs
            .into_iter()
            .zip(labels)
            .map(|(m, y)| Example::new(Value::Seq(m), y))
            .collect();
        let val_examples: Vec<Example> = val
            .docs
            .iter()
            .zip(&val.labels)
            .map(|(d, &y)| Ok(Example::new(Value::Seq(featurizer.sequence(d, max_len)?), y)))
            .collect::<Result<_>>()?;
        let graph = build_sequence_model(
            arch,
            &cfg.hybrid,
            SequenceInput::Vectors { dim: featurizer.dim() },
            derive_seed(seed, 3),
        )?;
        let tc = TrainConfig {
            seed: derive_seed(seed, 4),
            ..cfg.sequence_train
        };
        let trained = train_supervised(&graph, &examples, &val_examples, &tc)?;
        return Ok(FitOutcome {
            model: TrainedModel::Sequence {
                arch,
                graph: trained.model,
            },
            smote: report,
            flags,
        });
    }

    let (x, y) = match balanced {
        Some(b) => (b.x, b.y),
        None => (pooled, train.labels.clone()),
    };
    let weights = vec![1.0; x.len()];
    if model == ModelKind::Ensemble {
        let hyper = cfg.learners;
        let factory =
            |x: &[DenseVector], y: &[usize], w: &[f64], s: u64| fit_weak_learner(WeakLearnerKind::SoftmaxHead, x, y, w, NUM_CLASSES, &hyper, s);
        let boost = BoostConfig {
            seed: derive_seed(seed, 5),
            num_classes: NUM_CLASSES,
            ..cfg.boost
        };
        let ensemble = boost_fit(factory, &x, &y, &boost)?;
        return Ok(FitOutcome {
            model: TrainedModel::Ensemble { ensemble },
            smote: report,
            flags,
        });
    }

    let kind = learner_kind(model).expect("classical model kind");
    let mut shift = None;
    let mut x = x;
    if kind == WeakLearnerKind::NaiveBayes {
        let dim = featurizer.dim();
        let mut min = vec![0.0f64; dim];
        for v in &x {
            for (m, &a) in min.iter_mut().zip(v.iter()) {
                *m = m.min(a);
            }
        }
        if min.iter().any(|&m| m < 0.0) {
            flags.push(FLAG_NB_SHIFT.to_string());
            let s: Vec<f64> = min.iter().map(|m| -m).collect();
            x = x.iter().map(|v| apply_shift(v, &s)).collect();
            shift = Some(s);
        }
    }
    let learner = fit_weak_learner(kind, &x, &y, &weights, NUM_CLASSES, &cfg.learners, derive_seed(seed, 6))?;
    if learner.degenerate {
        flags.push("degenerate_single_class".to_string());
    }
    Ok(FitOutcome {
        model: TrainedModel::Learner { learner, shift },
        smote: report,
        flags,
    })
}

fn apply_shift(v: &[f64], shift: &[f64]) -> DenseVector {
    DenseVector::from(v.iter().zip(shift).map(|(a, s)| (a + s).max(0.0)).collect::<Vec<f64>>())
}

impl TrainedModel {
    /// Class distribution; for an ensemble, the normalized weighted vote.
    pub fn distribution(&self, featurizer: &Featurizer, tokens: &TokenSeq, max_len: usize) -> Result<DenseVector> {
        match self {
            TrainedModel::Learner { learner, shift } => {
                let v = featurizer.sentence_vector(tokens)?;
                match shift {
                    Some(s) => learner.predict_distribution(&apply_shift(&v, s)),
                    None => learner.predict_distribution(&v),
                }
            }
            TrainedModel::Sequence { graph, .. } => {
                predict_proba(graph, &Value::Seq(featurizer.sequence(tokens, max_len)?))
            }
            TrainedModel::Ensemble { ensemble } => {
                let v = featurizer.sentence_vector(tokens)?;
                let votes = ensemble.member_votes(&v)?;
                let mut score = vec![0.0; ensemble.config.num_classes];
                for (m, &c) in ensemble.members.iter().zip(&votes) {
                    score[c] += m.alpha;
                }
                let z: f64 = score.iter().sum();
                Ok(DenseVector::from(score.into_iter().map(|s| s / z).collect::<Vec<f64>>()))
            }
        }
    }

    pub fn predict(&self, featurizer: &Featurizer, tokens: &TokenSeq, max_len: usize) -> Result<usize> {
        Ok(crate::learners::argmax(&self.distribution(featurizer, tokens, max_len)?))
    }
}

/// Everything needed to label raw text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pipeline {
    pub version: String,
    pub manifest: RunManifest,
    pub feature: FeatureKind,
    pub model_kind: ModelKind,
    pub balanced: bool,
    pub max_len: usize,
    pub preprocessor: Preprocessor,
    pub featurizer: Featurizer,
    pub model: TrainedModel,
    #[serde(default)]
    pub smote: Option<SmoteReport>,
    #[serde(default)]
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub label: EmotionLabel,
    pub distribution: Vec<f64>,
}

impl Pipeline {
    #[allow(clippy::too_many_arguments)]
    pub fn train(
        corpus: &Corpus,
        preprocessor: Preprocessor,
        feature: FeatureKind,
        model_kind: ModelKind,
        balance: bool,
        cfg: &ExperimentConfig,
        seed: u64,
        manifest: RunManifest,
    ) -> Result<Self> {
        let data = split_data(corpus, Some(&preprocessor))?;
        let featurizer = Featurizer::fit(feature, &data.train, &data.val, cfg, derive_seed(seed, 100))?;
        let fit = fit_model(model_kind, &featurizer, &data.train, &data.val, cfg, balance, derive_seed(seed, 200))?;
        Ok(Pipeline {
            version: PIPELINE_VERSION.to_string(),
            manifest,
            feature,
            model_kind,
            balanced: balance,
            max_len: cfg.hybrid.max_len,
            preprocessor,
            featurizer,
            model: fit.model,
            smote: fit.smote,
            flags: fit.flags,
        })
    }

    pub fn predict_tokens(&self, tokens: &TokenSeq) -> Result<Prediction> {
        let d = self.model.distribution(&self.featurizer, tokens, self.max_len)?;
        Ok(Prediction {
            label: EmotionLabel::from_index(crate::learners::argmax(&d))?,
            distribution: d.into_inner(),
        })
    }

    pub fn predict_text(&self, raw: &str) -> Result<Prediction> {
        self.predict_tokens(&self.preprocessor.tokens(raw))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: Pipeline = serde_json::from_str(text)?;
        if p.version != PIPELINE_VERSION {
            return Err(Error::data(format!("unsupported pipeline version `{}`", p.version)));
        }
        Ok(p)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }
}
