use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::ModelGraph;
use super::train::{batch_loss_grads, Example};
use crate::error::Result;

/// Parameters probed when a model has more than this many.
pub const GRAD_CHECK_SAMPLE: usize = 600;

fn dropout_seeds(batch: &[Example]) -> Vec<(&Example, u64)> {
    batch.iter().enumerate().map(|(i, e)| (e, 0x5eed + i as u64)).collect()
}

/// Largest relative error between analytic gradients and central differences.
///
/// Dropout masks are reseeded identically for every evaluation, so a model in
/// train mode is a fixed function of its parameters here.
pub fn grad_check(model: &ModelGraph, batch: &[Example], eps: f64) -> Result<f64> {
    let seeded = dropout_seeds(batch);
    let (_, analytic) = batch_loss_grads(model, &seeded)?;

    let sizes: Vec<usize> = model.param_arrays().iter().map(|p| p.len()).collect();
    let total: usize = sizes.iter().sum();
    let mut coords: Vec<(usize, usize)> = Vec::new();
    if total <= GRAD_CHECK_SAMPLE {
        for (a, &n) in sizes.iter().enumerate() {
            coords.extend((0..n).map(|i| (a, i)));
        }
    } else {
        // Every array is probed at least once, the rest uniformly.
        let mut rng = ChaCha8Rng::seed_from_u64(0xc0ffee);
        for (a, &n) in sizes.iter().enumerate() {
            coords.push((a, rng.gen_range(0..n)));
        }
        while coords.len() < GRAD_CHECK_SAMPLE {
            let mut flat = rng.gen_range(0..total);
            let mut a = 0;
            while flat >= sizes[a] {
                flat -= sizes[a];
                a += 1;
            }
            coords.push((a, flat));
        }
    }

    let mut probe = model.clone();
    let mut worst = 0.0f64;
    for (a, i) in coords {
        let orig = probe.param_arrays()[a][i];
        probe.param_arrays_mut()[a][i] = orig + eps;
        let (plus, _) = batch_loss_grads(&probe, &seeded)?;
        probe.param_arrays_mut()[a][i] = orig - eps;
        let (minus, _) = batch_loss_grads(&probe, &seeded)?;
        probe.param_arrays_mut()[a][i] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let an = analytic[a][i];
        let rel = (an - numeric).abs() / (an.abs() + numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::super::layers::{Activation, LayerSpec, Value};
    use super::super::tensor::Mat;
    use super::*;

    fn seq(rows: usize, cols: usize, seed: u64) -> Value {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Value::Seq(Mat::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()))
    }

    fn check(specs: Vec<LayerSpec>, input: Vec<Value>, width: Option<usize>) -> f64 {
        let model = ModelGraph::new(specs, width, 11).unwrap();
        let batch: Vec<Example> = input
            .into_iter()
            .enumerate()
            .map(|(i, v)| Example {
                input: v,
                label: i % 3,
                weight: 0.5 + i as f64,
            })
            .collect();
        grad_check(&model, &batch, 1e-5).unwrap()
    }

    fn head(input: usize) -> LayerSpec {
        LayerSpec::Dense {
            input,
            units: 3,
            activation: Activation::Identity,
        }
    }

    #[test]
    fn dense_only() {
        let specs = vec![
            LayerSpec::Dense {
                input: 4,
                units: 5,
                activation: Activation::Tanh,
            },
            head(5),
        ];
        let err = check(specs, vec![seq(1, 4, 1), seq(1, 4, 2), seq(1, 4, 3)], Some(4));
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn each_layer_kind() {
        let cases: Vec<(&str, Vec<LayerSpec>, usize)> = vec![
            (
                "conv",
                vec![
                    LayerSpec::Conv1d {
                        input: 3,
                        filters: 4,
                        width: 3,
                        activation: Activation::Tanh,
                    },
                    LayerSpec::MeanPool,
                    head(4),
                ],
                3,
            ),
            (
                "pool",
                vec![LayerSpec::MaxPool1d { width: 2 }, LayerSpec::MeanPool, head(3)],
                3,
            ),
            ("rnn", vec![LayerSpec::RnnCell { input: 3, hidden: 4 }, head(4)], 3),
            ("lstm", vec![LayerSpec::LstmCell { input: 3, hidden: 4 }, head(4)], 3),
            (
                "dropout",
                vec![LayerSpec::Dropout { rate: 0.3 }, LayerSpec::MeanPool, head(3)],
                3,
            ),
            (
                "attention",
                vec![
                    LayerSpec::SelfAttentionBlock {
                        model_dim: 4,
                        heads: 2,
                        ff_dim: 6,
                    },
                    LayerSpec::MeanPool,
                    head(4),
                ],
                4,
            ),
        ];
        for (name, specs, w) in cases {
            let err = check(specs, vec![seq(5, w, 4), seq(3, w, 5)], Some(w));
            assert!(err < 1e-4, "{name}: {err}");
        }
    }

    #[test]
    fn embedding_with_positions() {
        let specs = vec![
            LayerSpec::Embedding {
                vocab: 6,
                dim: 4,
                max_len: Some(5),
                pad_id: Some(0),
            },
            LayerSpec::MeanPool,
            head(4),
        ];
        let ids = vec![Value::Ids(vec![1, 3, 0, 5]), Value::Ids(vec![2, 2])];
        let err = check(specs, ids, None);
        assert!(err < 1e-4, "{err}");
    }
}
