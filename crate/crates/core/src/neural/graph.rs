use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Cache, Layer, LayerSpec, Mode, Value};
use super::tensor::Mat;
use crate::error::{Error, Result};

pub const MODEL_VERSION: &str = "emoforge-model/1";

/// An ordered stack of layers with their parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelGraph {
    pub version: String,
    pub seed: u64,
    /// Free-form echo of the builder configuration.
    #[serde(default)]
    pub config: serde_json::Value,
    pub layers: Vec<Layer>,
}

pub struct ForwardTrace {
    pub output: Mat,
    caches: Vec<Cache>,
}

impl ModelGraph {
    /// Builds and initializes a graph. `input_width` is `None` when the first layer consumes token ids.
    pub fn new(specs: Vec<LayerSpec>, input_width: Option<usize>, seed: u64) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::precondition("a model needs at least one layer"));
        }
        let mut width = input_width;
        for (i, spec) in specs.iter().enumerate() {
            spec.validate(i)?;
            width = Some(spec.output_width(i, width)?);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = specs.into_iter().map(|s| Layer::init(s, &mut rng)).collect();
        Ok(ModelGraph {
            version: MODEL_VERSION.to_string(),
            seed,
            config: serde_json::Value::Null,
            layers,
        })
    }

    pub fn with_config(mut self, config: serde_json::Value) -> Self {
        self.config = config;
        self
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().flat_map(|l| &l.params).map(|p| p.values.len()).sum()
    }

    pub fn output_width(&self) -> usize {
        self.layers
            .iter()
            .rev()
            .find_map(|l| l.spec.fixed_output_width())
            .unwrap_or(0)
    }

    /// Flat views over every parameter array, in layer order.
    pub fn param_arrays(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| l.params.iter().map(|p| p.values.as_slice()))
            .collect()
    }

    pub fn param_arrays_mut(&mut self) -> Vec<&mut Vec<f64>> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.params.iter_mut().map(|p| &mut p.values))
            .collect()
    }

    pub fn zero_grads(&self) -> Vec<Vec<f64>> {
        self.param_arrays().iter().map(|p| vec![0.0; p.len()]).collect()
    }

    pub fn forward(&self, input: &Value, mode: Mode, rng: &mut ChaCha8Rng) -> Result<Mat> {
        self.forward_prefix(input, self.layers.len(), mode, rng)
    }

    /// Runs the first `n` layers.
    pub fn forward_prefix(&self, input: &Value, n: usize, mode: Mode, rng: &mut ChaCha8Rng) -> Result<Mat> {
        let mut cur = input.clone();
        for (i, layer) in self.layers.iter().take(n).enumerate() {
            cur = layer.forward(i, &cur, mode, rng)?.0;
        }
        match cur {
            Value::Seq(m) => Ok(m),
            Value::Ids(_) => Err(Error::Dimension {
                layer: 0,
                detail: "model produced no vectors".into(),
            }),
        }
    }

    pub fn forward_cached(&self, input: &Value, mode: Mode, rng: &mut ChaCha8Rng) -> Result<ForwardTrace> {
        let mut cur = input.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let (out, cache) = layer.forward(i, &cur, mode, rng)?;
            caches.push(cache);
            cur = out;
        }
        let output = cur.as_mat(self.layers.len())?.clone();
        Ok(ForwardTrace { output, caches })
    }

    /// Accumulates parameter gradients for one traced example.
    pub fn backward(&self, trace: &ForwardTrace, grad_output: &Mat, grads: &mut [Vec<f64>]) -> Result<Option<Mat>> {
        if trace.caches.len() != self.layers.len() {
            return Err(Error::State(trace.caches.len()));
        }
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for l in &self.layers {
            offsets.push(off);
            off += l.params.len();
        }
        let mut g = grad_output.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let slot = &mut grads[offsets[i]..offsets[i] + layer.params.len()];
            match layer.backward(i, &trace.caches[i], &g, slot)? {
                Some(dx) => g = dx,
                None => return Ok(None),
            }
        }
        Ok(Some(g))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let g: ModelGraph = serde_json::from_str(text)?;
        if g.version != MODEL_VERSION {
            return Err(Error::data(format!("unsupported model version `{}`", g.version)));
        }
        for (i, l) in g.layers.iter().enumerate() {
            l.spec.validate(i)?;
            let fresh = Layer::init(l.spec.clone(), &mut ChaCha8Rng::seed_from_u64(0));
            let shapes_ok = fresh.params.len() == l.params.len()
                && fresh
                    .params
                    .iter()
                    .zip(&l.params)
                    .all(|(a, b)| a.shape == b.shape && b.values.len() == b.shape.iter().product::<usize>());
            if !shapes_ok {
                return Err(Error::Dimension {
                    layer: i,
                    detail: "stored parameters do not match the layer spec".into(),
                });
            }
        }
        Ok(g)
    }
}
