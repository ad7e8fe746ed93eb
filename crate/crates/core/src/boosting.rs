//! Multiclass AdaBoost (SAMME) over weighted weak learners.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{smote_balance, DenseVector, SmoteConfig, SmoteReport};
use crate::learners::{
    argmax, derive_seed, fit_weak_learner, HeadConfig, LearnerHyper, WeakLearner, WeakLearnerKind,
};
use crate::neural::{train_supervised, ContextualEncoder, EncoderConfig, Example, TokenIndex, TrainConfig};
use crate::textprep::TokenSeq;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoostConfig {
    pub rounds: usize,
    pub num_classes: usize,
    /// Consecutive rejected attempts at one round tolerated before giving up.
    pub max_rejections: usize,
    pub alpha_cap: f64,
    pub seed: u64,
}

impl Default for BoostConfig {
    fn default() -> Self {
        BoostConfig {
            rounds: 10,
            num_classes: crate::corpus::NUM_CLASSES,
            max_rejections: 3,
            alpha_cap: 1e10f64.ln(),
            seed: 0,
        }
    }
}

impl BoostConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds < 1 {
            return Err(Error::precondition("boosting needs at least one round"));
        }
        if self.num_classes < 2 {
            return Err(Error::precondition("boosting needs at least two classes"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Member {
    pub alpha: f64,
    pub learner: WeakLearner,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundDiagnostic {
    pub round: usize,
    pub attempt: usize,
    pub seed: u64,
    pub error: f64,
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedEnsemble {
    pub config: BoostConfig,
    pub members: Vec<Member>,
    pub diagnostics: Vec<RoundDiagnostic>,
}

/// `sum_i w_i * [pred_i != y_i]`
pub fn weighted_error_from_predictions(pred: &[usize], y: &[usize], w: &[f64]) -> f64 {
    pred.iter().zip(y).zip(w).filter(|((p, t), _)| p != t).map(|(_, wi)| wi).sum()
}

pub fn weighted_error(h: &WeakLearner, x: &[DenseVector], y: &[usize], w: &[f64]) -> Result<f64> {
    let pred = predictions(h, x)?;
    Ok(weighted_error_from_predictions(&pred, y, w))
}

fn predictions(h: &WeakLearner, x: &[DenseVector]) -> Result<Vec<usize>> {
    x.iter().map(|xi| h.predict(xi)).collect()
}

/// SAMME stage weight, capped; `None` when the learner is no better than chance.
pub fn alpha_from_error(error: f64, k: usize, cap: f64) -> Option<f64> {
    let chance = 1.0 - 1.0 / k as f64;
    if !(error >= 0.0) || error >= chance {
        return None;
    }
    if error == 0.0 {
        return Some(cap);
    }
    Some((((1.0 - error) / error).ln() + ((k - 1) as f64).ln()).min(cap))
}

/// Correct samples scaled by `e^(-alpha/2)`, errors by `e^(alpha/2)`, then renormalized
/// to sum 1. After normalization this equals up-weighting errors by `e^alpha`.
pub fn update_weights_from_correct(w: &[f64], correct: &[bool], alpha: f64) -> Vec<f64> {
    let (down, up) = ((-alpha / 2.0).exp(), (alpha / 2.0).exp());
    let raw: Vec<f64> = w
        .iter()
        .zip(correct)
        .map(|(wi, &ok)| wi * if ok { down } else { up })
        .collect();
    let z: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / z).collect()
}

pub fn update_weights(w: &[f64], h: &WeakLearner, x: &[DenseVector], y: &[usize], alpha: f64) -> Result<Vec<f64>> {
    let pred = predictions(h, x)?;
    let correct: Vec<bool> = pred.iter().zip(y).map(|(p, t)| p == t).collect();
    Ok(update_weights_from_correct(w, &correct, alpha))
}

/// `argmax_j sum_t alpha_t [votes_t = j]`, ties to the lower class.
pub fn weighted_vote(alphas: &[f64], votes: &[usize], k: usize) -> usize {
    let mut score = vec![0.0; k];
    for (a, &v) in alphas.iter().zip(votes) {
        score[v] += a;
    }
    argmax(&score)
}

/// Boosts learners produced by `factory(x, y, weights, round_seed)`.
///
/// Stops early once a member makes no weighted error.
pub fn boost_fit<F>(mut factory: F, x: &[DenseVector], y: &[usize], cfg: &BoostConfig) -> Result<BoostedEnsemble>
where
    F: FnMut(&[DenseVector], &[usize], &[f64], u64) -> Result<WeakLearner>,
{
    cfg.validate()?;
    if x.len() < 2 || x.len() != y.len() {
        return Err(Error::precondition(format!("need at least two samples, got {} and {} labels", x.len(), y.len())));
    }
    let mut classes = y.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::precondition("boosting needs at least two classes present"));
    }
    let m = x.len();
    let mut w = vec![1.0 / m as f64; m];
    let mut members = Vec::new();
    let mut diagnostics = Vec::new();
    let mut attempt = 0usize;
    let mut rejected = 0usize;
    while members.len() < cfg.rounds {
        let round = members.len() + 1;
        let seed = derive_seed(cfg.seed, attempt as u64);
        attempt += 1;
        let h = factory(x, y, &w, seed)?;
        let pred = predictions(&h, x)?;
        let error = weighted_error_from_predictions(&pred, y, &w);
        let alpha = alpha_from_error(error, cfg.num_classes, cfg.alpha_cap);
        diagnostics.push(RoundDiagnostic {
            round,
            attempt,
            seed,
            error,
            alpha,
        });
        let Some(alpha) = alpha else {
            rejected += 1;
            if rejected >= cfg.max_rejections {
                let trail: Vec<String> = diagnostics
                    .iter()
                    .map(|d| format!("round {} attempt {}: error {:.6}", d.round, d.attempt, d.error))
                    .collect();
                return Err(Error::Boosting(format!(
                    "round {round} rejected {rejected} times in a row, no better than chance ({})",
                    trail.join("; ")
                )));
            }
            continue;
        };
        rejected = 0;
        let correct: Vec<bool> = pred.iter().zip(y).map(|(p, t)| p == t).collect();
        w = update_weights_from_correct(&w, &correct, alpha);
        members.push(Member { alpha, learner: h });
        if error == 0.0 {
            break;
        }
    }
    Ok(BoostedEnsemble {
        config: *cfg,
        members,
        diagnostics,
    })
}

impl BoostedEnsemble {
    pub fn member_votes(&self, x: &[f64]) -> Result<Vec<usize>> {
        self.members.iter().map(|m| m.learner.predict(x)).collect()
    }

    pub fn alphas(&self) -> Vec<f64> {
        self.members.iter().map(|m| m.alpha).collect()
    }
}

pub fn boost_predict(ensemble: &BoostedEnsemble, x: &[f64]) -> Result<usize> {
    if ensemble.members.is_empty() {
        return Err(Error::precondition("ensemble has no members"));
    }
    let votes = ensemble.member_votes(x)?;
    Ok(weighted_vote(&ensemble.alphas(), &votes, ensemble.config.num_classes))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleConfig {
    pub encoder: EncoderConfig,
    /// Task-supervised training of the encoder before it is frozen.
    pub encoder_train: TrainConfig,
    pub head: HeadConfig,
    pub boost: BoostConfig,
    /// SMOTE in encoder-embedding space before boosting, when set.
    pub balance: Option<SmoteConfig>,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            encoder: EncoderConfig::default(),
            encoder_train: TrainConfig {
                lr: 1e-3,
                max_epochs: 40,
                ..TrainConfig::default()
            },
            head: HeadConfig {
                train: TrainConfig {
                    lr: 2e-5,
                    ..TrainConfig::default()
                },
                ..HeadConfig::default()
            },
            boost: BoostConfig::default(),
            balance: None,
        }
    }
}

/// Frozen contextual encoder plus boosted softmax heads over its sentence vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderEnsemble {
    pub encoder: ContextualEncoder,
    pub ensemble: BoostedEnsemble,
    pub smote: Option<SmoteReport>,
}

impl EncoderEnsemble {
    pub fn predict(&self, tokens: &TokenSeq) -> Result<usize> {
        boost_predict(&self.ensemble, &self.encoder.encode(tokens)?)
    }
}

/// Trains the encoder once on `train`, freezes it, then boosts softmax heads over its embeddings.
pub fn fit_encoder_ensemble(
    index: TokenIndex,
    train: &[(TokenSeq, usize)],
    val: &[(TokenSeq, usize)],
    cfg: &EnsembleConfig,
    seed: u64,
) -> Result<EncoderEnsemble> {
    let encoder = ContextualEncoder::new(index, cfg.encoder, derive_seed(seed, 1))?;
    let to_examples = |set: &[(TokenSeq, usize)]| -> Vec<Example> {
        set.iter().map(|(t, y)| Example::new(encoder.input(t), *y)).collect()
    };
    let tc = TrainConfig {
        seed: derive_seed(seed, 2),
        ..cfg.encoder_train
    };
    let trained = train_supervised(&encoder.graph, &to_examples(train), &to_examples(val), &tc)?;
    let encoder = ContextualEncoder {
        graph: trained.model,
        ..encoder
    };

    let mut x: Vec<DenseVector> = train.iter().map(|(t, _)| encoder.encode(t)).collect::<Result<_>>()?;
    let mut y: Vec<usize> = train.iter().map(|(_, c)| *c).collect();
    let mut smote = None;
    if let Some(sc) = &cfg.balance {
        let out = smote_balance(&x, &y, cfg.boost.num_classes, sc)?;
        x = out.x;
        y = out.y;
        smote = Some(out.report);
    }
    let hyper = LearnerHyper {
        head: cfg.head,
        ..LearnerHyper::default()
    };
    let boost = BoostConfig {
        seed: derive_seed(seed, 3),
        ..cfg.boost
    };
    let k = boost.num_classes;
    let factory = |x: &[DenseVector], y: &[usize], w: &[f64], s: u64| {
        fit_weak_learner(WeakLearnerKind::SoftmaxHead, x, y, w, k, &hyper, s)
    };
    let ensemble = boost_fit(factory, &x, &y, &boost)?;
    Ok(EncoderEnsemble {
        encoder,
        ensemble,
        smote,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::{FittedModel, TreeConfig};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn constant(class: usize, k: usize) -> WeakLearner {
        WeakLearner {
            kind: WeakLearnerKind::DecisionTree,
            num_classes: k,
            dim: 1,
            seed: 0,
            degenerate: true,
            fitted: FittedModel::Constant { class },
        }
    }

    #[test]
    fn error_examples() {
        assert_eq!(weighted_error_from_predictions(&[0, 0, 0, 1], &[0, 0, 0, 0], &[0.25; 4]), 0.25);
        assert_eq!(weighted_error_from_predictions(&[1, 2], &[1, 2], &[0.5, 0.5]), 0.0);
        let e = weighted_error_from_predictions(&[0, 1, 1, 1], &[0, 0, 0, 0], &[0.7, 0.1, 0.1, 0.1]);
        assert!((e - 0.3).abs() < 1e-15);
    }

    #[test]
    fn alpha_examples() {
        let a = alpha_from_error(0.25, 8, 1e10f64.ln()).unwrap();
        assert!((a - (3.0f64.ln() + 7.0f64.ln())).abs() < 1e-12);
        assert!((a - 3.044_522).abs() < 1e-6);
        assert_eq!(alpha_from_error(0.875, 8, 10.0), None);
        assert_eq!(alpha_from_error(0.0, 8, 1e10f64.ln()), Some(1e10f64.ln()));
    }

    #[test]
    fn update_example() {
        let w = update_weights_from_correct(&[0.25; 4], &[true, true, true, false], 3.0f64.ln());
        for (got, want) in w.iter().zip([1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0, 0.5]) {
            assert!((got - want).abs() < 1e-12);
        }
        let same = update_weights_from_correct(&[0.25; 4], &[true; 4], 1.3);
        assert!(same.iter().all(|v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn vote_examples() {
        assert_eq!(weighted_vote(&[2.0, 1.0], &[0, 1], 2), 0);
        assert_eq!(weighted_vote(&[1.0, 1.0], &[1, 0], 2), 0);
    }

    #[test]
    fn single_member_is_its_argmax() {
        let x: Vec<DenseVector> = (0..6).map(|i| DenseVector::from(vec![i as f64])).collect();
        let y = vec![0, 0, 1, 1, 2, 2];
        let hyper = LearnerHyper {
            tree: TreeConfig {
                max_depth: 1,
                ..Default::default()
            },
            ..Default::default()
        };
        let cfg = BoostConfig {
            rounds: 1,
            num_classes: 3,
            ..Default::default()
        };
        let ens = boost_fit(
            |x, y, w, s| fit_weak_learner(WeakLearnerKind::DecisionTree, x, y, w, 3, &hyper, s),
            &x,
            &y,
            &cfg,
        )
        .unwrap();
        assert_eq!(ens.members.len(), 1);
        for xi in &x {
            assert_eq!(boost_predict(&ens, xi).unwrap(), ens.members[0].learner.predict(xi).unwrap());
        }
    }

    #[test]
    fn rejection_policy_aborts() {
        let x: Vec<DenseVector> = (0..4).map(|i| DenseVector::from(vec![i as f64])).collect();
        let y = vec![0, 1, 0, 1];
        let cfg = BoostConfig {
            num_classes: 2,
            ..Default::default()
        };
        let mut calls = 0;
        let err = boost_fit(
            |_, _, _, _| {
                calls += 1;
                Ok(constant(1, 2))
            },
            &x,
            &y,
            &cfg,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Boosting(ref m) if m.contains("round 1 attempt 3")));
        assert_eq!(calls, 3);
    }

    proptest! {
        #[test]
        fn weights_stay_normalized(w in proptest::collection::vec(0.01f64..1.0, 2..30), flips in proptest::collection::vec(any::<bool>(), 30), alpha in 0.01f64..20.0) {
            let z: f64 = w.iter().sum();
            let w: Vec<f64> = w.iter().map(|v| v / z).collect();
            let out = update_weights_from_correct(&w, &flips[..w.len()], alpha);
            prop_assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(out.iter().all(|&v| v >= 0.0));
        }

        #[test]
        fn vote_matches_brute_force_and_scale(votes in proptest::collection::vec(0usize..3, 5), alphas in proptest::collection::vec(0.1f64..5.0, 5), c in 0.1f64..10.0) {
            let mut best = (f64::NEG_INFINITY, 0);
            for j in 0..3 {
                let s: f64 = (0..5).filter(|&t| votes[t] == j).map(|t| alphas[t]).sum();
                if s > best.0 {
                    best = (s, j);
                }
            }
            prop_assert_eq!(weighted_vote(&alphas, &votes, 3), best.1);
            let scaled: Vec<f64> = alphas.iter().map(|a| a * c).collect();
            prop_assert_eq!(weighted_vote(&scaled, &votes, 3), best.1);
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<DenseVector> = (0..30).map(|_| DenseVector::from(vec![rng.gen(), rng.gen()])).collect();
        let y: Vec<usize> = x.iter().map(|v| usize::from(v[0] > 0.5) + usize::from(v[1] > 0.5)).collect();
        let hyper = LearnerHyper {
            tree: TreeConfig {
                max_depth: 1,
                ..Default::default()
            },
            ..Default::default()
        };
        let cfg = BoostConfig {
            rounds: 8,
            num_classes: 3,
            seed: 4,
            ..Default::default()
        };
        let run = || {
            boost_fit(
                |x, y, w, s| fit_weak_learner(WeakLearnerKind::DecisionTree, x, y, w, 3, &hyper, s),
                &x,
                &y,
                &cfg,
            )
            .unwrap()
        };
        assert_eq!(run(), run());
    }
}
