use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::DenseVector;

/// Multinomial naive Bayes with add-one smoothing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaiveBayes {
    /// `None` for classes with no training mass.
    pub log_prior: Vec<Option<f64>>,
    /// Per class, per feature.
    pub log_likelihood: Vec<Vec<f64>>,
}

impl NaiveBayes {
    /// Weights are expected already rescaled so the smallest positive weight is 1.
    pub fn fit(x: &[DenseVector], y: &[usize], w: &[f64], num_classes: usize) -> Result<Self> {
        let dim = x[0].dim();
        let mut mass = vec![0.0; num_classes];
        let mut counts = vec![vec![0.0; dim]; num_classes];
        for ((xi, &c), &wi) in x.iter().zip(y).zip(w) {
            if let Some(j) = xi.iter().position(|&v| v < 0.0) {
                return Err(Error::precondition(format!(
                    "naive Bayes needs nonnegative features, found {} at feature {j}",
                    xi[j]
                )));
            }
            if wi == 0.0 {
                continue;
            }
            mass[c] += wi;
            for (acc, v) in counts[c].iter_mut().zip(xi.iter()) {
                *acc += wi * v;
            }
        }
        let total: f64 = mass.iter().sum();
        let log_prior = mass
            .iter()
            .map(|&m| (m > 0.0).then(|| (m / total).ln()))
            .collect();
        let log_likelihood = counts
            .iter()
            .map(|row| {
                let denom = row.iter().sum::<f64>() + dim as f64;
                row.iter().map(|c| ((c + 1.0) / denom).ln()).collect()
            })
            .collect();
        Ok(NaiveBayes {
            log_prior,
            log_likelihood,
        })
    }

    pub fn dim(&self) -> usize {
        self.log_likelihood.first().map_or(0, Vec::len)
    }

    pub fn joint_log(&self, x: &[f64]) -> Vec<Option<f64>> {
        self.log_prior
            .iter()
            .zip(&self.log_likelihood)
            .map(|(p, ll)| p.map(|p| p + ll.iter().zip(x).map(|(l, v)| l * v).sum::<f64>()))
            .collect()
    }

    pub fn predict_distribution(&self, x: &[f64]) -> Vec<f64> {
        let joint = self.joint_log(x);
        let max = joint.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = joint.iter().map(|j| j.map_or(0.0, |v| (v - max).exp())).collect();
        let z: f64 = exp.iter().sum();
        exp.into_iter().map(|e| e / z).collect()
    }
}
