use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::features::{dot, DenseVector};
use crate::neural::softmax;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmConfig {
    pub lambda: f64,
    pub epochs: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            lambda: 1e-4,
            epochs: 10,
        }
    }
}

/// One-vs-rest linear SVM; the last weight of each row is a bias on a constant input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSvm {
    pub weights: Vec<Vec<f64>>,
}

impl LinearSvm {
    /// Pegasos sub-gradient descent on the weighted hinge loss with L2 regularization.
    pub fn fit(x: &[DenseVector], y: &[usize], w: &[f64], num_classes: usize, cfg: &SvmConfig, seed: u64) -> Self {
        let dim = x[0].dim();
        let mut weights = vec![vec![0.0; dim + 1]; num_classes];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..x.len()).collect();
        let mut t = 0u64;
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            for &i in &order {
                t += 1;
                let eta = 1.0 / (cfg.lambda * t as f64);
                let shrink = 1.0 - eta * cfg.lambda;
                let xi = &x[i];
                for (c, wc) in weights.iter_mut().enumerate() {
                    let target = if y[i] == c { 1.0 } else { -1.0 };
                    let margin = dot(&wc[..dim], xi) + wc[dim];
                    wc.iter_mut().for_each(|v| *v *= shrink);
                    if target * margin < 1.0 && w[i] > 0.0 {
                        let step = eta * w[i] * target;
                        for (v, xv) in wc[..dim].iter_mut().zip(xi.iter()) {
                            *v += step * xv;
                        }
                        wc[dim] += step;
                    }
                }
            }
        }
        LinearSvm { weights }
    }

    pub fn dim(&self) -> usize {
        self.weights[0].len() - 1
    }

    pub fn margins(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim();
        self.weights.iter().map(|wc| dot(&wc[..d], x) + wc[d]).collect()
    }

    pub fn predict_distribution(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.margins(x)).expect("finite margins").into_inner()
    }
}
