use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::features::DenseVector;

/// Features considered at each split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSubset {
    #[default]
    All,
    /// A fresh random subset of ceil(sqrt(V)) features per split.
    Sqrt,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeConfig {
    pub max_depth: usize,
    pub min_leaf_mass: f64,
    pub max_features: FeatureSubset,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig {
            max_depth: 20,
            min_leaf_mass: 1e-6,
            max_features: FeatureSubset::All,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    Leaf {
        dist: Vec<f64>,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// CART classifier with weighted Gini impurity; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub dim: usize,
    pub nodes: Vec<Node>,
}

fn gini(mass: &[f64], total: f64) -> f64 {
    if total <= 0.0 {
        return 0.0;
    }
    1.0 - mass.iter().map(|m| (m / total) * (m / total)).sum::<f64>()
}

struct Builder<'a> {
    x: &'a [DenseVector],
    y: &'a [usize],
    w: &'a [f64],
    k: usize,
    cfg: TreeConfig,
    nodes: Vec<Node>,
}

struct Best {
    feature: usize,
    threshold: f64,
    impurity: f64,
}

impl Builder<'_> {
    fn class_mass(&self, idx: &[usize]) -> Vec<f64> {
        let mut m = vec![0.0; self.k];
        for &i in idx {
            m[self.y[i]] += self.w[i];
        }
        m
    }

    fn best_split(&self, idx: &[usize], features: &[usize], parent: &[f64]) -> Option<Best> {
        let total: f64 = parent.iter().sum();
        let mut best: Option<Best> = None;
        let mut order: Vec<(f64, usize)> = Vec::with_capacity(idx.len());
        for &f in features {
            order.clear();
            order.extend(idx.iter().map(|&i| (self.x[i][f], i)));
            order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            if order[0].0 == order[order.len() - 1].0 {
                continue;
            }
            let mut left = vec![0.0; self.k];
            let mut wl = 0.0;
            for s in 0..order.len() - 1 {
                let i = order[s].1;
                left[self.y[i]] += self.w[i];
                wl += self.w[i];
                let (v, next) = (order[s].0, order[s + 1].0);
                if v == next {
                    continue;
                }
                let wr = total - wl;
                if wl < self.cfg.min_leaf_mass || wr < self.cfg.min_leaf_mass {
                    continue;
                }
                let right: Vec<f64> = parent.iter().zip(&left).map(|(p, l)| p - l).collect();
                let impurity = (wl * gini(&left, wl) + wr * gini(&right, wr)) / total;
                if best.as_ref().is_none_or(|b| impurity < b.impurity) {
                    best = Some(Best {
                        feature: f,
                        threshold: v + (next - v) / 2.0,
                        impurity,
                    });
                }
            }
        }
        best
    }

    fn leaf(&mut self, mass: &[f64]) -> usize {
        let total: f64 = mass.iter().sum();
        let dist = if total > 0.0 {
            mass.iter().map(|m| m / total).collect()
        } else {
            vec![1.0 / self.k as f64; self.k]
        };
        self.nodes.push(Node::Leaf { dist });
        self.nodes.len() - 1
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let mass = self.class_mass(&idx);
        let total: f64 = mass.iter().sum();
        let pure = mass.iter().filter(|&&m| m > 0.0).count() <= 1;
        if pure || depth >= self.cfg.max_depth || total < 2.0 * self.cfg.min_leaf_mass {
            return self.leaf(&mass);
        }
        let dim = self.x[idx[0]].dim();
        let features: Vec<usize> = match self.cfg.max_features {
            FeatureSubset::All => (0..dim).collect(),
            FeatureSubset::Sqrt => {
                let m = ((dim as f64).sqrt().ceil() as usize).clamp(1, dim);
                let mut f = sample(rng, dim, m).into_vec();
                f.sort_unstable();
                f
            }
        };
        let Some(best) = self.best_split(&idx, &features, &mass) else {
            return self.leaf(&mass);
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| self.x[i][best.feature] <= best.threshold);
        let at = self.nodes.len();
        self.nodes.push(Node::Leaf { dist: Vec::new() });
        let left = self.grow(l, depth + 1, rng);
        let right = self.grow(r, depth + 1, rng);
        self.nodes[at] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
        };
        at
    }
}

impl DecisionTree {
    /// `idx` selects the training rows (repeats allowed).
    pub fn fit_rows(
        x: &[DenseVector],
        y: &[usize],
        w: &[f64],
        idx: Vec<usize>,
        num_classes: usize,
        cfg: &TreeConfig,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut b = Builder {
            x,
            y,
            w,
            k: num_classes,
            cfg: *cfg,
            nodes: Vec::new(),
        };
        b.grow(idx, 0, rng);
        DecisionTree {
            dim: x[0].dim(),
            nodes: b.nodes,
        }
    }

    pub fn predict_distribution(&self, x: &[f64]) -> &[f64] {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { dist } => return dist,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match &nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}
