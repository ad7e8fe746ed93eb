//! Classical weak learners behind one weighted-fit, probabilistic-predict interface.

mod forest;
mod nb;
mod svm;
mod tree;

pub use forest::{ForestConfig, RandomForest};
pub use nb::NaiveBayes;
pub use svm::{LinearSvm, SvmConfig};
pub use tree::{DecisionTree, FeatureSubset, Node, TreeConfig};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::DenseVector;
use crate::neural::{predict_proba, softmax_head, train_supervised, Example, Mat, ModelGraph, TrainConfig, Value};

/// SplitMix64 step over `seed ^ k`, for independent child seeds.
pub fn derive_seed(seed: u64, k: u64) -> u64 {
    let mut z = seed ^ k.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(0x6a09_e667_f3bc_c909);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeakLearnerKind {
    NaiveBayes,
    DecisionTree,
    RandomForest,
    LinearSvm,
    SoftmaxHead,
}

impl WeakLearnerKind {
    pub const ALL: [WeakLearnerKind; 5] = [
        WeakLearnerKind::NaiveBayes,
        WeakLearnerKind::DecisionTree,
        WeakLearnerKind::RandomForest,
        WeakLearnerKind::LinearSvm,
        WeakLearnerKind::SoftmaxHead,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            WeakLearnerKind::NaiveBayes => "naive_bayes",
            WeakLearnerKind::DecisionTree => "decision_tree",
            WeakLearnerKind::RandomForest => "random_forest",
            WeakLearnerKind::LinearSvm => "linear_svm",
            WeakLearnerKind::SoftmaxHead => "softmax_head",
        }
    }
}

impl fmt::Display for WeakLearnerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for WeakLearnerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        WeakLearnerKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Lookup(format!("unknown learner kind `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeadConfig {
    pub dropout: f64,
    pub train: TrainConfig,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            dropout: 0.1,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerHyper {
    pub tree: TreeConfig,
    pub forest: ForestConfig,
    pub svm: SvmConfig,
    pub head: HeadConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum FittedModel {
    NaiveBayes(NaiveBayes),
    DecisionTree(DecisionTree),
    RandomForest(RandomForest),
    LinearSvm(LinearSvm),
    SoftmaxHead(ModelGraph),
    /// Only one class carried weight during fitting.
    Constant { class: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakLearner {
    pub kind: WeakLearnerKind,
    pub num_classes: usize,
    pub dim: usize,
    pub seed: u64,
    pub degenerate: bool,
    pub fitted: FittedModel,
}

fn check_inputs(x: &[DenseVector], y: &[usize], w: &[f64], num_classes: usize) -> Result<()> {
    if x.is_empty() || x.len() != y.len() || x.len() != w.len() {
        return Err(Error::precondition(format!(
            "need equal non-empty inputs, got {} vectors, {} labels, {} weights",
            x.len(),
            y.len(),
            w.len()
        )));
    }
    let dim = x[0].dim();
    if let Some(i) = x.iter().position(|v| v.dim() != dim) {
        return Err(Error::precondition(format!("vector {i} has dimension {}, expected {dim}", x[i].dim())));
    }
    if let Some(&c) = y.iter().find(|&&c| c >= num_classes) {
        return Err(Error::Index {
            index: c,
            len: num_classes,
        });
    }
    if let Some(bad) = w.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::precondition(format!("invalid sample weight {bad}")));
    }
    if !(w.iter().sum::<f64>() > 0.0) {
        return Err(Error::precondition("sample weights sum to zero"));
    }
    Ok(())
}

fn is_uniform(w: &[f64]) -> bool {
    w.iter().all(|&v| v == w[0])
}

/// Smallest positive weight becomes 1, so doubling a weight matches duplicating a sample.
fn scale_to_min(w: &[f64]) -> Vec<f64> {
    let min = w.iter().copied().filter(|&v| v > 0.0).fold(f64::INFINITY, f64::min);
    w.iter().map(|v| v / min).collect()
}

/// Weights rescaled to mean 1; exactly uniform weights become exactly 1.
fn scale_to_mean(w: &[f64]) -> Vec<f64> {
    if is_uniform(w) {
        return vec![1.0; w.len()];
    }
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    w.iter().map(|v| v / mean).collect()
}

pub fn fit_weak_learner(
    kind: WeakLearnerKind,
    x: &[DenseVector],
    y: &[usize],
    w: &[f64],
    num_classes: usize,
    hyper: &LearnerHyper,
    seed: u64,
) -> Result<WeakLearner> {
    check_inputs(x, y, w, num_classes)?;
    let dim = x[0].dim();
    let mut present: Vec<usize> = y.iter().zip(w).filter(|(_, &wi)| wi > 0.0).map(|(&c, _)| c).collect();
    present.sort_unstable();
    present.dedup();
    let learner = |fitted, degenerate| WeakLearner {
        kind,
        num_classes,
        dim,
        seed,
        degenerate,
        fitted,
    };
    if present.len() == 1 {
        return Ok(learner(FittedModel::Constant { class: present[0] }, true));
    }
    let fitted = match kind {
        WeakLearnerKind::NaiveBayes => FittedModel::NaiveBayes(NaiveBayes::fit(x, y, &scale_to_min(w), num_classes)?),
        WeakLearnerKind::DecisionTree => {
            let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
            FittedModel::DecisionTree(DecisionTree::fit_rows(
                x,
                y,
                &scale_to_mean(w),
                (0..x.len()).collect(),
                num_classes,
                &hyper.tree,
                &mut rng,
            ))
        }
        WeakLearnerKind::RandomForest => {
            if hyper.forest.trees == 0 {
                return Err(Error::precondition("a forest needs at least one tree"));
            }
            FittedModel::RandomForest(RandomForest::fit(x, y, &scale_to_mean(w), num_classes, &hyper.forest, seed))
        }
        WeakLearnerKind::LinearSvm => {
            FittedModel::LinearSvm(LinearSvm::fit(x, y, &scale_to_mean(w), num_classes, &hyper.svm, seed))
        }
        WeakLearnerKind::SoftmaxHead => {
            let ws = scale_to_mean(w);
            let train: Vec<Example> = x
                .iter()
                .zip(y)
                .zip(&ws)
                .map(|((xi, &label), &weight)| Example {
                    input: Value::Seq(Mat::row_vector(xi)),
                    label,
                    weight,
                })
                .collect();
            FittedModel::SoftmaxHead(fit_head(&train, &[], dim, num_classes, &hyper.head, seed)?)
        }
    };
    Ok(learner(fitted, false))
}

/// Trains a dropout-dense head; `val` may be empty, in which case the train loss is monitored.
pub fn fit_head(
    train: &[Example],
    val: &[Example],
    dim: usize,
    num_classes: usize,
    cfg: &HeadConfig,
    seed: u64,
) -> Result<ModelGraph> {
    let graph = softmax_head(dim, num_classes, cfg.dropout, seed)?;
    let tc = TrainConfig { seed, ..cfg.train };
    Ok(train_supervised(&graph, train, val, &tc)?.model)
}

impl WeakLearner {
    pub fn predict_distribution(&self, x: &[f64]) -> Result<DenseVector> {
        if x.len() != self.dim {
            return Err(Error::precondition(format!(
                "{} learner expects dimension {}, got {}",
                self.kind,
                self.dim,
                x.len()
            )));
        }
        let dist = match &self.fitted {
            FittedModel::NaiveBayes(m) => m.predict_distribution(x),
            FittedModel::DecisionTree(m) => m.predict_distribution(x).to_vec(),
            FittedModel::RandomForest(m) => m.predict_distribution(x),
            FittedModel::LinearSvm(m) => m.predict_distribution(x),
            FittedModel::SoftmaxHead(g) => predict_proba(g, &Value::Seq(Mat::row_vector(x)))?.into_inner(),
            FittedModel::Constant { class } => {
                let mut d = vec![0.0; self.num_classes];
                d[*class] = 1.0;
                d
            }
        };
        Ok(DenseVector::from(dist))
    }

    /// Argmax of the distribution, ties to the lower class.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.predict_distribution(x)?))
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
