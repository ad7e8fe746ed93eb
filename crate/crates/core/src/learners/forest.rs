use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tree::{DecisionTree, FeatureSubset, TreeConfig};
use super::derive_seed;
use crate::features::DenseVector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub trees: usize,
    pub bootstrap: bool,
    pub tree: TreeConfig,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            trees: 100,
            bootstrap: true,
            tree: TreeConfig {
                max_features: FeatureSubset::Sqrt,
                ..TreeConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub trees: Vec<DecisionTree>,
}

impl RandomForest {
    pub fn fit(x: &[DenseVector], y: &[usize], w: &[f64], num_classes: usize, cfg: &ForestConfig, seed: u64) -> Self {
        let fit_one = |t: usize| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, t as u64));
            if cfg.bootstrap {
                // Weighted resampling; the drawn rows then count once each.
                let pick = WeightedIndex::new(w).expect("weights validated by the caller");
                let idx: Vec<usize> = (0..x.len()).map(|_| pick.sample(&mut rng)).collect();
                let ones = vec![1.0; w.len()];
                DecisionTree::fit_rows(x, y, &ones, idx, num_classes, &cfg.tree, &mut rng)
            } else {
                DecisionTree::fit_rows(x, y, w, (0..x.len()).collect(), num_classes, &cfg.tree, &mut rng)
            }
        };
        let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(cfg.trees.max(1));
        let trees = std::thread::scope(|s| {
            let handles: Vec<_> = (0..workers)
                .map(|k| {
                    let fit_one = &fit_one;
                    s.spawn(move || {
                        (k..cfg.trees)
                            .step_by(workers)
                            .map(|t| (t, fit_one(t)))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            let mut all: Vec<(usize, DecisionTree)> = handles
                .into_iter()
                .flat_map(|h| h.join().expect("tree worker panicked"))
                .collect();
            all.sort_by_key(|(t, _)| *t);
            all.into_iter().map(|(_, tree)| tree).collect()
        });
        RandomForest { trees }
    }

    pub fn predict_distribution(&self, x: &[f64]) -> Vec<f64> {
        let mut acc = vec![0.0; self.trees[0].predict_distribution(x).len()];
        for t in &self.trees {
            for (a, p) in acc.iter_mut().zip(t.predict_distribution(x)) {
                *a += p;
            }
        }
        let n = self.trees.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }
}
