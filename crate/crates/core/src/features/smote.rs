use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{squared_distance, DenseVector};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoteTarget {
    /// Every class is raised to the size of the largest class.
    #[default]
    Largest,
    /// Classes smaller than this count are raised to it.
    Count(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmoteConfig {
    pub k: usize,
    pub seed: u64,
    pub target: SmoteTarget,
}

impl Default for SmoteConfig {
    fn default() -> Self {
        SmoteConfig {
            k: 5,
            seed: 7,
            target: SmoteTarget::Largest,
        }
    }
}

/// Where a synthetic point came from: `x[base] + lambda * (x[neighbor] - x[base])`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticOrigin {
    pub base: usize,
    pub neighbor: usize,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SmoteReport {
    pub before: Vec<usize>,
    pub after: Vec<usize>,
    pub synthetic: usize,
}

#[derive(Debug, Clone)]
pub struct SmoteOutput {
    /// Originals first and unchanged, then synthetic points grouped by class.
    pub x: Vec<DenseVector>,
    pub y: Vec<usize>,
    /// One entry per synthetic point, aligned with `x[originals..]`.
    pub origins: Vec<SyntheticOrigin>,
    pub report: SmoteReport,
}

/// Indices of the `k` nearest members to `members[at]`, closest first, ties by index.
fn nearest(x: &[DenseVector], members: &[usize], at: usize, k: usize) -> Vec<usize> {
    let me = members[at];
    let mut d: Vec<(f64, usize)> = members
        .iter()
        .filter(|&&j| j != me)
        .map(|&j| (squared_distance(&x[me], &x[j]), j))
        .collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d.into_iter().take(k).map(|(_, j)| j).collect()
}

/// Oversamples every class below the target by interpolating towards same-class neighbours.
pub fn smote_balance(x: &[DenseVector], y: &[usize], num_classes: usize, config: &SmoteConfig) -> Result<SmoteOutput> {
    if x.len() != y.len() {
        return Err(Error::precondition(format!("{} vectors but {} labels", x.len(), y.len())));
    }
    if config.k < 1 {
        return Err(Error::precondition("SMOTE needs k >= 1"));
    }
    if let Some(first) = x.first() {
        if let Some(bad) = x.iter().position(|v| v.dim() != first.dim()) {
            return Err(Error::precondition(format!(
                "vector {bad} has dimension {}, expected {}",
                x[bad].dim(),
                first.dim()
            )));
        }
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &c) in y.iter().enumerate() {
        members
            .get_mut(c)
            .ok_or(Error::Index {
                index: c,
                len: num_classes,
            })?
            .push(i);
    }
    let before: Vec<usize> = members.iter().map(Vec::len).collect();
    let target = match config.target {
        SmoteTarget::Largest => before.iter().copied().max().unwrap_or(0),
        SmoteTarget::Count(n) => n,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut out_x = x.to_vec();
    let mut out_y = y.to_vec();
    let mut origins = Vec::new();
    for (class, m) in members.iter().enumerate() {
        if m.is_empty() || m.len() >= target {
            continue;
        }
        if m.len() < 2 {
            return Err(Error::Balancing {
                class: class.to_string(),
                detail: "a class needs at least two samples to interpolate".into(),
            });
        }
        let k = config.k.min(m.len() - 1);
        let neighbours: Vec<Vec<usize>> = (0..m.len()).map(|i| nearest(x, m, i, k)).collect();
        for _ in m.len()..target {
            let pick = rng.gen_range(0..m.len());
            let base = m[pick];
            let neighbor = neighbours[pick][rng.gen_range(0..k)];
            let lambda: f64 = rng.gen();
            let point: Vec<f64> = x[base]
                .iter()
                .zip(x[neighbor].iter())
                .map(|(a, b)| a + lambda * (b - a))
                .collect();
            out_x.push(DenseVector::from(point));
            out_y.push(class);
            origins.push(SyntheticOrigin { base, neighbor, lambda });
        }
    }
    let mut after = vec![0usize; num_classes];
    for &c in &out_y {
        after[c] += 1;
    }
    Ok(SmoteOutput {
        x: out_x,
        y: out_y,
        report: SmoteReport {
            before,
            after,
            synthetic: origins.len(),
        },
        origins,
    })
}
