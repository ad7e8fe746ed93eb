use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{linear, linear_backward, matvec, matvec_backward, Mat};
use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation's output.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Token ids to vectors. Positions holding `pad_id` are masked out of the sequence.
    Embedding {
        vocab: usize,
        dim: usize,
        max_len: Option<usize>,
        pad_id: Option<usize>,
    },
    Dense {
        input: usize,
        units: usize,
        activation: Activation,
    },
    Dropout {
        rate: f64,
    },
    /// Same-padded 1-D convolution over positions.
    Conv1d {
        input: usize,
        filters: usize,
        width: usize,
        activation: Activation,
    },
    MaxPool1d {
        width: usize,
    },
    /// Tanh recurrence returning the final state.
    RnnCell {
        input: usize,
        hidden: usize,
    },
    /// LSTM recurrence returning the final hidden state.
    LstmCell {
        input: usize,
        hidden: usize,
    },
    /// Pre-norm transformer block: self-attention then a ReLU feed-forward, both residual.
    SelfAttentionBlock {
        model_dim: usize,
        heads: usize,
        ff_dim: usize,
    },
    MeanPool,
}

impl LayerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Embedding { .. } => "embedding",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Conv1d { .. } => "conv1d",
            LayerSpec::MaxPool1d { .. } => "max_pool1d",
            LayerSpec::RnnCell { .. } => "rnn_cell",
            LayerSpec::LstmCell { .. } => "lstm_cell",
            LayerSpec::SelfAttentionBlock { .. } => "self_attention_block",
            LayerSpec::MeanPool => "mean_pool",
        }
    }

    pub(crate) fn validate(&self, layer: usize) -> Result<()> {
        let dims: Vec<usize> = match *self {
            LayerSpec::Embedding { vocab, dim, max_len, .. } => {
                let mut d = vec![vocab, dim];
                d.extend(max_len);
                d
            }
            LayerSpec::Dense { input, units, .. } => vec![input, units],
            LayerSpec::Dropout { rate } => {
                if !(0.0..1.0).contains(&rate) {
                    return Err(dim_err(layer, format!("dropout rate {rate} outside [0,1)")));
                }
                vec![]
            }
            LayerSpec::Conv1d { input, filters, width, .. } => vec![input, filters, width],
            LayerSpec::MaxPool1d { width } => vec![width],
            LayerSpec::RnnCell { input, hidden } | LayerSpec::LstmCell { input, hidden } => vec![input, hidden],
            LayerSpec::SelfAttentionBlock { model_dim, heads, ff_dim } => {
                if heads == 0 || model_dim % heads != 0 {
                    return Err(dim_err(layer, format!("model dim {model_dim} not divisible by {heads} heads")));
                }
                vec![model_dim, heads, ff_dim]
            }
            LayerSpec::MeanPool => vec![],
        };
        if dims.contains(&0) {
            return Err(dim_err(layer, format!("{} has a zero dimension", self.name())));
        }
        Ok(())
    }

    /// Output width when it does not depend on the input.
    pub(crate) fn fixed_output_width(&self) -> Option<usize> {
        match *self {
            LayerSpec::Embedding { dim, .. } => Some(dim),
            LayerSpec::Dense { units, .. } => Some(units),
            LayerSpec::Conv1d { filters, .. } => Some(filters),
            LayerSpec::RnnCell { hidden, .. } | LayerSpec::LstmCell { hidden, .. } => Some(hidden),
            LayerSpec::SelfAttentionBlock { model_dim, .. } => Some(model_dim),
            LayerSpec::Dropout { .. } | LayerSpec::MaxPool1d { .. } | LayerSpec::MeanPool => None,
        }
    }

    /// Output width given the input width, checking compatibility.
    pub(crate) fn output_width(&self, layer: usize, input: Option<usize>) -> Result<usize> {
        let need = |expected: usize| -> Result<()> {
            match input {
                Some(w) if w != expected => Err(dim_err(layer, format!("expects width {expected}, got {w}"))),
                None => Err(dim_err(layer, "expects vector input, got token ids".to_string())),
                _ => Ok(()),
            }
        };
        match *self {
            LayerSpec::Embedding { dim, .. } => {
                if input.is_some() {
                    return Err(dim_err(layer, "embedding must consume token ids".to_string()));
                }
                Ok(dim)
            }
            LayerSpec::Dense { input: i, units, .. } => need(i).map(|_| units),
            LayerSpec::Conv1d { input: i, filters, .. } => need(i).map(|_| filters),
            LayerSpec::RnnCell { input: i, hidden } | LayerSpec::LstmCell { input: i, hidden } => need(i).map(|_| hidden),
            LayerSpec::SelfAttentionBlock { model_dim, .. } => need(model_dim).map(|_| model_dim),
            LayerSpec::Dropout { .. } | LayerSpec::MaxPool1d { .. } | LayerSpec::MeanPool => {
                input.ok_or_else(|| dim_err(layer, "expects vector input, got token ids".to_string()))
            }
        }
    }
}

fn dim_err(layer: usize, detail: String) -> Error {
    Error::Dimension { layer, detail }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Layer input or output.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Ids(Vec<usize>),
    Seq(Mat),
}

impl Value {
    pub fn as_mat(&self, layer: usize) -> Result<&Mat> {
        match self {
            Value::Seq(m) => Ok(m),
            Value::Ids(_) => Err(dim_err(layer, "expects vector input, got token ids".to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub spec: LayerSpec,
    pub params: Vec<Param>,
}

fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize, n: usize) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| rng.gen_range(-limit..limit)).collect()
}

fn uniform(rng: &mut ChaCha8Rng, bound: f64, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
}

fn param(name: &str, shape: &[usize], values: Vec<f64>) -> Param {
    Param {
        name: name.to_string(),
        shape: shape.to_vec(),
        values,
    }
}

impl Layer {
    pub fn init(spec: LayerSpec, rng: &mut ChaCha8Rng) -> Self {
        let params = match spec {
            LayerSpec::Embedding { vocab, dim, max_len, .. } => {
                let mut p = vec![param("table", &[vocab, dim], uniform(rng, 0.1, vocab * dim))];
                if let Some(len) = max_len {
                    p.push(param("position", &[len, dim], uniform(rng, 0.1, len * dim)));
                }
                p
            }
            LayerSpec::Dense { input, units, .. } => vec![
                param("weight", &[units, input], glorot(rng, input, units, units * input)),
                param("bias", &[units], vec![0.0; units]),
            ],
            LayerSpec::Conv1d {
                input, filters, width, ..
            } => vec![
                param(
                    "weight",
                    &[filters, width, input],
                    glorot(rng, width * input, width * filters, filters * width * input),
                ),
                param("bias", &[filters], vec![0.0; filters]),
            ],
            LayerSpec::RnnCell { input, hidden } => vec![
                param("w_input", &[hidden, input], uniform(rng, 0.1, hidden * input)),
                param("w_hidden", &[hidden, hidden], uniform(rng, 0.1, hidden * hidden)),
                param("bias", &[hidden], vec![0.0; hidden]),
            ],
            LayerSpec::LstmCell { input, hidden } => {
                let mut bias = vec![0.0; 4 * hidden];
                bias[hidden..2 * hidden].iter_mut().for_each(|b| *b = 1.0);
                vec![
                    param("w_input", &[4 * hidden, input], uniform(rng, 0.1, 4 * hidden * input)),
                    param("w_hidden", &[4 * hidden, hidden], uniform(rng, 0.1, 4 * hidden * hidden)),
                    param("bias", &[4 * hidden], bias),
                ]
            }
            LayerSpec::SelfAttentionBlock { model_dim: d, ff_dim: f, .. } => vec![
                param("ln1_gain", &[d], vec![1.0; d]),
                param("ln1_bias", &[d], vec![0.0; d]),
                param("wq", &[d, d], glorot(rng, d, d, d * d)),
                param("bq", &[d], vec![0.0; d]),
                param("wk", &[d, d], glorot(rng, d, d, d * d)),
                param("bk", &[d], vec![0.0; d]),
                param("wv", &[d, d], glorot(rng, d, d, d * d)),
                param("bv", &[d], vec![0.0; d]),
                param("wo", &[d, d], glorot(rng, d, d, d * d)),
                param("bo", &[d], vec![0.0; d]),
                param("ln2_gain", &[d], vec![1.0; d]),
                param("ln2_bias", &[d], vec![0.0; d]),
                param("w1", &[f, d], glorot(rng, d, f, f * d)),
                param("b1", &[f], vec![0.0; f]),
                param("w2", &[d, f], glorot(rng, f, d, d * f)),
                param("b2", &[d], vec![0.0; d]),
            ],
            LayerSpec::Dropout { .. } | LayerSpec::MaxPool1d { .. } | LayerSpec::MeanPool => vec![],
        };
        Layer { spec, params }
    }

    fn p(&self, i: usize) -> &[f64] {
        &self.params[i].values
    }

    pub fn forward(&self, idx: usize, input: &Value, mode: Mode, rng: &mut ChaCha8Rng) -> Result<(Value, Cache)> {
        match self.spec {
            LayerSpec::Embedding {
                vocab,
                dim,
                max_len,
                pad_id,
            } => {
                let Value::Ids(ids) = input else {
                    return Err(dim_err(idx, "embedding expects token ids".to_string()));
                };
                let kept: Vec<(usize, usize)> =
                    ids.iter().copied().enumerate().filter(|&(_, id)| Some(id) != pad_id).collect();
                if kept.is_empty() {
                    return Err(dim_err(idx, "empty sequence after masking".to_string()));
                }
                let mut out = Mat::zeros(kept.len(), dim);
                for (r, &(pos, id)) in kept.iter().enumerate() {
                    if id >= vocab {
                        return Err(dim_err(idx, format!("token id {id} outside vocabulary of {vocab}")));
                    }
                    let row = out.row_mut(r);
                    row.copy_from_slice(&self.p(0)[id * dim..(id + 1) * dim]);
                    if let Some(len) = max_len {
                        if pos >= len {
                            return Err(dim_err(idx, format!("position {pos} beyond max length {len}")));
                        }
                        for (a, b) in row.iter_mut().zip(&self.p(1)[pos * dim..(pos + 1) * dim]) {
                            *a += b;
                        }
                    }
                }
                Ok((Value::Seq(out), Cache::Embedding { kept }))
            }
            LayerSpec::Dense { input: i, units, activation } => {
                let x = input.as_mat(idx)?;
                check_width(idx, x, i)?;
                let mut y = linear(self.p(0), self.p(1), x, units);
                y.data.iter_mut().for_each(|v| *v = activation.apply(*v));
                Ok((
                    Value::Seq(y.clone()),
                    Cache::Dense {
                        input: x.clone(),
                        output: y,
                    },
                ))
            }
            LayerSpec::Dropout { rate } => {
                let x = input.as_mat(idx)?;
                if mode == Mode::Infer || rate == 0.0 {
                    return Ok((Value::Seq(x.clone()), Cache::Dropout { mask: None }));
                }
                let scale = 1.0 / (1.0 - rate);
                let mask: Vec<f64> = (0..x.data.len())
                    .map(|_| if rng.gen::<f64>() >= rate { scale } else { 0.0 })
                    .collect();
                let y = Mat::from_vec(x.rows, x.cols, x.data.iter().zip(&mask).map(|(a, m)| a * m).collect());
                Ok((Value::Seq(y), Cache::Dropout { mask: Some(mask) }))
            }
            LayerSpec::Conv1d {
                input: c_in,
                filters,
                width,
                activation,
            } => {
                let x = input.as_mat(idx)?;
                check_width(idx, x, c_in)?;
                let (w, b) = (self.p(0), self.p(1));
                let half = (width - 1) / 2;
                let mut y = Mat::zeros(x.rows, filters);
                for t in 0..x.rows {
                    for f in 0..filters {
                        let mut acc = b[f];
                        for k in 0..width {
                            let Some(src) = (t + k).checked_sub(half).filter(|&s| s < x.rows) else {
                                continue;
                            };
                            let wr = &w[(f * width + k) * c_in..(f * width + k + 1) * c_in];
                            acc += wr.iter().zip(x.row(src)).map(|(a, b)| a * b).sum::<f64>();
                        }
                        y.data[t * filters + f] = activation.apply(acc);
                    }
                }
                Ok((
                    Value::Seq(y.clone()),
                    Cache::Conv1d {
                        input: x.clone(),
                        output: y,
                    },
                ))
            }
            LayerSpec::MaxPool1d { width } => {
                let x = input.as_mat(idx)?;
                if x.rows == 0 {
                    return Err(dim_err(idx, "empty sequence".to_string()));
                }
                let out_rows = x.rows.div_ceil(width);
                let mut y = Mat::zeros(out_rows, x.cols);
                let mut argmax = vec![0usize; out_rows * x.cols];
                for r in 0..out_rows {
                    for c in 0..x.cols {
                        let (mut best, mut at) = (f64::NEG_INFINITY, r * width);
                        for src in r * width..((r + 1) * width).min(x.rows) {
                            let v = x.get(src, c);
                            if v > best {
                                best = v;
                                at = src;
                            }
                        }
                        y.data[r * x.cols + c] = best;
                        argmax[r * x.cols + c] = at;
                    }
                }
                Ok((
                    Value::Seq(y),
                    Cache::MaxPool {
                        argmax,
                        input_rows: x.rows,
                    },
                ))
            }
            LayerSpec::RnnCell { input: i, hidden } => {
                let x = input.as_mat(idx)?;
                check_width(idx, x, i)?;
                check_nonempty(idx, x)?;
                let mut states = vec![vec![0.0; hidden]];
                for t in 0..x.rows {
                    let a = matvec(self.p(0), x.row(t), hidden);
                    let r = matvec(self.p(1), &states[t], hidden);
                    let h: Vec<f64> = (0..hidden).map(|j| (a[j] + r[j] + self.p(2)[j]).tanh()).collect();
                    states.push(h);
                }
                let last = states.last().expect("non-empty").clone();
                Ok((
                    Value::Seq(Mat::row_vector(&last)),
                    Cache::Rnn {
                        input: x.clone(),
                        states,
                    },
                ))
            }
            LayerSpec::LstmCell { input: i, hidden: h } => {
                let x = input.as_mat(idx)?;
                check_width(idx, x, i)?;
                check_nonempty(idx, x)?;
                let mut hs = vec![vec![0.0; h]];
                let mut cs = vec![vec![0.0; h]];
                let mut gates = Vec::with_capacity(x.rows);
                for t in 0..x.rows {
                    let zx = matvec(self.p(0), x.row(t), 4 * h);
                    let zh = matvec(self.p(1), &hs[t], 4 * h);
                    let z: Vec<f64> = (0..4 * h).map(|j| zx[j] + zh[j] + self.p(2)[j]).collect();
                    let mut g = vec![0.0; 4 * h];
                    let mut c = vec![0.0; h];
                    let mut hn = vec![0.0; h];
                    for j in 0..h {
                        let ig = sigmoid(z[j]);
                        let fg = sigmoid(z[h + j]);
                        let cg = z[2 * h + j].tanh();
                        let og = sigmoid(z[3 * h + j]);
                        c[j] = fg * cs[t][j] + ig * cg;
                        hn[j] = og * c[j].tanh();
                        g[j] = ig;
                        g[h + j] = fg;
                        g[2 * h + j] = cg;
                        g[3 * h + j] = og;
                    }
                    gates.push(g);
                    cs.push(c);
                    hs.push(hn);
                }
                let last = hs.last().expect("non-empty").clone();
                Ok((
                    Value::Seq(Mat::row_vector(&last)),
                    Cache::Lstm {
                        input: x.clone(),
                        hs,
                        cs,
                        gates,
                    },
                ))
            }
            LayerSpec::SelfAttentionBlock { model_dim, heads, ff_dim } => {
                let x = input.as_mat(idx)?;
                check_width(idx, x, model_dim)?;
                check_nonempty(idx, x)?;
                let (y, cache) = self.attention_forward(x, heads, ff_dim);
                Ok((Value::Seq(y), Cache::Attention(Box::new(cache))))
            }
            LayerSpec::MeanPool => {
                let x = input.as_mat(idx)?;
                check_nonempty(idx, x)?;
                let mut y = vec![0.0; x.cols];
                for t in 0..x.rows {
                    for (a, b) in y.iter_mut().zip(x.row(t)) {
                        *a += b;
                    }
                }
                let inv = 1.0 / x.rows as f64;
                y.iter_mut().for_each(|v| *v *= inv);
                Ok((Value::Seq(Mat::row_vector(&y)), Cache::MeanPool { rows: x.rows }))
            }
        }
    }

    /// Adds parameter gradients into `grads` and returns the input gradient
    /// (`None` when the input was token ids).
    pub fn backward(&self, idx: usize, cache: &Cache, gy: &Mat, grads: &mut [Vec<f64>]) -> Result<Option<Mat>> {
        match (&self.spec, cache) {
            (LayerSpec::Embedding { dim, max_len, .. }, Cache::Embedding { kept }) => {
                let dim = *dim;
                for (r, &(pos, id)) in kept.iter().enumerate() {
                    let g = gy.row(r);
                    for (a, b) in grads[0][id * dim..(id + 1) * dim].iter_mut().zip(g) {
                        *a += b;
                    }
                    if max_len.is_some() {
                        for (a, b) in grads[1][pos * dim..(pos + 1) * dim].iter_mut().zip(g) {
                            *a += b;
                        }
                    }
                }
                Ok(None)
            }
            (LayerSpec::Dense { activation, .. }, Cache::Dense { input, output }) => {
                let gz = activation_grad(*activation, output, gy);
                let (dw, rest) = grads.split_at_mut(1);
                Ok(Some(linear_backward(self.p(0), input, &gz, &mut dw[0], &mut rest[0])))
            }
            (LayerSpec::Dropout { .. }, Cache::Dropout { mask }) => Ok(Some(match mask {
                None => gy.clone(),
                Some(m) => Mat::from_vec(gy.rows, gy.cols, gy.data.iter().zip(m).map(|(g, k)| g * k).collect()),
            })),
            (
                LayerSpec::Conv1d {
                    input: c_in,
                    filters,
                    width,
                    activation,
                },
                Cache::Conv1d { input, output },
            ) => {
                let (c_in, filters, width) = (*c_in, *filters, *width);
                let gz = activation_grad(*activation, output, gy);
                let half = (width - 1) / 2;
                let w = self.p(0);
                let mut dx = Mat::zeros(input.rows, c_in);
                let (dw, db) = grads.split_at_mut(1);
                for t in 0..input.rows {
                    for f in 0..filters {
                        let g = gz.data[t * filters + f];
                        if g == 0.0 {
                            continue;
                        }
                        db[0][f] += g;
                        for k in 0..width {
                            let Some(src) = (t + k).checked_sub(half).filter(|&s| s < input.rows) else {
                                continue;
                            };
                            let off = (f * width + k) * c_in;
                            let xr = input.row(src);
                            for c in 0..c_in {
                                dw[0][off + c] += g * xr[c];
                            }
                            let dxr = dx.row_mut(src);
                            for c in 0..c_in {
                                dxr[c] += g * w[off + c];
                            }
                        }
                    }
                }
                Ok(Some(dx))
            }
            (LayerSpec::MaxPool1d { .. }, Cache::MaxPool { argmax, input_rows }) => {
                let mut dx = Mat::zeros(*input_rows, gy.cols);
                for (i, &src) in argmax.iter().enumerate() {
                    let c = i % gy.cols;
                    dx.data[src * gy.cols + c] += gy.data[i];
                }
                Ok(Some(dx))
            }
            (LayerSpec::RnnCell { input: i, hidden }, Cache::Rnn { input, states }) => {
                let (inp, hidden) = (*i, *hidden);
                let mut dx = Mat::zeros(input.rows, inp);
                let mut dh = gy.row(0).to_vec();
                let (dwx, rest) = grads.split_at_mut(1);
                let (dwh, db) = rest.split_at_mut(1);
                for t in (0..input.rows).rev() {
                    let h = &states[t + 1];
                    let da: Vec<f64> = (0..hidden).map(|j| dh[j] * (1.0 - h[j] * h[j])).collect();
                    for j in 0..hidden {
                        db[0][j] += da[j];
                    }
                    let gx = matvec_backward(self.p(0), input.row(t), &da, &mut dwx[0]);
                    dx.row_mut(t).copy_from_slice(&gx);
                    dh = matvec_backward(self.p(1), &states[t], &da, &mut dwh[0]);
                }
                Ok(Some(dx))
            }
            (LayerSpec::LstmCell { input: i, hidden }, Cache::Lstm { input, hs, cs, gates }) => {
                let (inp, h) = (*i, *hidden);
                let mut dx = Mat::zeros(input.rows, inp);
                let mut dh = gy.row(0).to_vec();
                let mut dc = vec![0.0; h];
                let (dwx, rest) = grads.split_at_mut(1);
                let (dwh, db) = rest.split_at_mut(1);
                for t in (0..input.rows).rev() {
                    let g = &gates[t];
                    let c = &cs[t + 1];
                    let c_prev = &cs[t];
                    let mut dz = vec![0.0; 4 * h];
                    for j in 0..h {
                        let (ig, fg, cg, og) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
                        let tc = c[j].tanh();
                        let d_o = dh[j] * tc;
                        dc[j] += dh[j] * og * (1.0 - tc * tc);
                        let d_i = dc[j] * cg;
                        let d_g = dc[j] * ig;
                        let d_f = dc[j] * c_prev[j];
                        dz[j] = d_i * ig * (1.0 - ig);
                        dz[h + j] = d_f * fg * (1.0 - fg);
                        dz[2 * h + j] = d_g * (1.0 - cg * cg);
                        dz[3 * h + j] = d_o * og * (1.0 - og);
                        dc[j] *= fg;
                    }
                    for (a, b) in db[0].iter_mut().zip(&dz) {
                        *a += b;
                    }
                    let gx = matvec_backward(self.p(0), input.row(t), &dz, &mut dwx[0]);
                    dx.row_mut(t).copy_from_slice(&gx);
                    dh = matvec_backward(self.p(1), &hs[t], &dz, &mut dwh[0]);
                }
                Ok(Some(dx))
            }
            (LayerSpec::SelfAttentionBlock { heads, .. }, Cache::Attention(c)) => {
                Ok(Some(self.attention_backward(c, *heads, gy, grads)))
            }
            (LayerSpec::MeanPool, Cache::MeanPool { rows }) => {
                let inv = 1.0 / *rows as f64;
                let mut dx = Mat::zeros(*rows, gy.cols);
                for t in 0..*rows {
                    for (a, b) in dx.row_mut(t).iter_mut().zip(gy.row(0)) {
                        *a = b * inv;
                    }
                }
                Ok(Some(dx))
            }
            _ => Err(Error::State(idx)),
        }
    }

    fn attention_forward(&self, x: &Mat, heads: usize, ff_dim: usize) -> (Mat, AttentionCache) {
        let d = x.cols;
        let t_len = x.rows;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let ln1 = layer_norm(x, self.p(0), self.p(1));
        let q = linear(self.p(2), self.p(3), &ln1.out, d);
        let k = linear(self.p(4), self.p(5), &ln1.out, d);
        let v = linear(self.p(6), self.p(7), &ln1.out, d);
        let mut probs = Vec::with_capacity(heads);
        let mut ctx = Mat::zeros(t_len, d);
        for head in 0..heads {
            let off = head * dh;
            let mut p = Mat::zeros(t_len, t_len);
            for i in 0..t_len {
                let qi = &q.row(i)[off..off + dh];
                let row = p.row_mut(i);
                for j in 0..t_len {
                    let kj = &k.row(j)[off..off + dh];
                    row[j] = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                }
                softmax_in_place(row);
            }
            for i in 0..t_len {
                for j in 0..t_len {
                    let pij = p.get(i, j);
                    let vj = &v.row(j)[off..off + dh];
                    let ci = &mut ctx.row_mut(i)[off..off + dh];
                    for (c, vv) in ci.iter_mut().zip(vj) {
                        *c += pij * vv;
                    }
                }
            }
            probs.push(p);
        }
        let attn = linear(self.p(8), self.p(9), &ctx, d);
        let mut x1 = x.clone();
        x1.add_assign(&attn);
        let ln2 = layer_norm(&x1, self.p(10), self.p(11));
        let mut hidden = linear(self.p(12), self.p(13), &ln2.out, ff_dim);
        hidden.data.iter_mut().for_each(|v| *v = v.max(0.0));
        let ff = linear(self.p(14), self.p(15), &hidden, d);
        let mut y = x1.clone();
        y.add_assign(&ff);
        (
            y,
            AttentionCache {
                x: x.clone(),
                ln1,
                q,
                k,
                v,
                probs,
                ctx,
                ln2,
                hidden,
            },
        )
    }

    fn attention_backward(&self, c: &AttentionCache, heads: usize, gy: &Mat, grads: &mut [Vec<f64>]) -> Mat {
        let d = c.x.cols;
        let t_len = c.x.rows;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();

        // Feed-forward branch.
        let d_hidden = linear_backward_at(self.p(14), &c.hidden, gy, grads, 14);
        let d_hidden = relu_grad(&c.hidden, &d_hidden);
        let d_ln2 = linear_backward_at(self.p(12), &c.ln2.out, &d_hidden, grads, 12);
        let mut dx1 = layer_norm_backward_at(&c.ln2, self.p(10), &d_ln2, grads, 10);
        dx1.add_assign(gy);

        // Attention branch.
        let d_ctx = linear_backward_at(self.p(8), &c.ctx, &dx1, grads, 8);
        let mut dq = Mat::zeros(t_len, d);
        let mut dk = Mat::zeros(t_len, d);
        let mut dv = Mat::zeros(t_len, d);
        for (head, p) in c.probs.iter().enumerate() {
            let off = head * dh;
            for i in 0..t_len {
                let dci = &d_ctx.row(i)[off..off + dh];
                let mut dp = vec![0.0; t_len];
                for j in 0..t_len {
                    let vj = &c.v.row(j)[off..off + dh];
                    dp[j] = dci.iter().zip(vj).map(|(a, b)| a * b).sum();
                    let pij = p.get(i, j);
                    for (a, b) in dv.row_mut(j)[off..off + dh].iter_mut().zip(dci) {
                        *a += pij * b;
                    }
                }
                let dot: f64 = (0..t_len).map(|j| p.get(i, j) * dp[j]).sum();
                for j in 0..t_len {
                    let ds = p.get(i, j) * (dp[j] - dot) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let kj = c.k.row(j)[off..off + dh].to_vec();
                    let qi = c.q.row(i)[off..off + dh].to_vec();
                    for (a, b) in dq.row_mut(i)[off..off + dh].iter_mut().zip(&kj) {
                        *a += ds * b;
                    }
                    for (a, b) in dk.row_mut(j)[off..off + dh].iter_mut().zip(&qi) {
                        *a += ds * b;
                    }
                }
            }
        }
        let mut d_ln1 = linear_backward_at(self.p(2), &c.ln1.out, &dq, grads, 2);
        d_ln1.add_assign(&linear_backward_at(self.p(4), &c.ln1.out, &dk, grads, 4));
        d_ln1.add_assign(&linear_backward_at(self.p(6), &c.ln1.out, &dv, grads, 6));
        let mut dx = layer_norm_backward_at(&c.ln1, self.p(0), &d_ln1, grads, 0);
        dx.add_assign(&dx1);
        dx
    }
}

/// Weight and bias gradients stored at `at` and `at + 1`.
fn pair_at(grads: &mut [Vec<f64>], at: usize) -> (&mut [f64], &mut [f64]) {
    let (a, b) = grads[at..].split_at_mut(1);
    (&mut a[0], &mut b[0])
}

fn linear_backward_at(w: &[f64], x: &Mat, gy: &Mat, grads: &mut [Vec<f64>], at: usize) -> Mat {
    let (dw, db) = pair_at(grads, at);
    linear_backward(w, x, gy, dw, db)
}

fn layer_norm_backward_at(c: &NormCache, gain: &[f64], gy: &Mat, grads: &mut [Vec<f64>], at: usize) -> Mat {
    let (dg, db) = pair_at(grads, at);
    layer_norm_backward(c, gain, gy, dg, db)
}

fn check_width(idx: usize, x: &Mat, expected: usize) -> Result<()> {
    if x.cols != expected {
        return Err(dim_err(idx, format!("expects width {expected}, got {}", x.cols)));
    }
    Ok(())
}

fn check_nonempty(idx: usize, x: &Mat) -> Result<()> {
    if x.rows == 0 {
        return Err(dim_err(idx, "empty sequence".to_string()));
    }
    Ok(())
}

fn activation_grad(act: Activation, output: &Mat, gy: &Mat) -> Mat {
    Mat::from_vec(
        gy.rows,
        gy.cols,
        gy.data
            .iter()
            .zip(&output.data)
            .map(|(g, y)| g * act.derivative_from_output(*y))
            .collect(),
    )
}

fn relu_grad(output: &Mat, gy: &Mat) -> Mat {
    activation_grad(Activation::Relu, output, gy)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

#[derive(Debug, Clone)]
pub struct NormCache {
    out: Mat,
    xhat: Mat,
    inv_std: Vec<f64>,
}

fn layer_norm(x: &Mat, gain: &[f64], bias: &[f64]) -> NormCache {
    let d = x.cols;
    let mut out = Mat::zeros(x.rows, d);
    let mut xhat = Mat::zeros(x.rows, d);
    let mut inv_std = Vec::with_capacity(x.rows);
    for t in 0..x.rows {
        let r = x.row(t);
        let mean = r.iter().sum::<f64>() / d as f64;
        let var = r.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + LN_EPS).sqrt();
        inv_std.push(is);
        for j in 0..d {
            let h = (r[j] - mean) * is;
            xhat.data[t * d + j] = h;
            out.data[t * d + j] = gain[j] * h + bias[j];
        }
    }
    NormCache { out, xhat, inv_std }
}

fn layer_norm_backward(c: &NormCache, gain: &[f64], gy: &Mat, dgain: &mut [f64], dbias: &mut [f64]) -> Mat {
    let d = gy.cols;
    let mut dx = Mat::zeros(gy.rows, d);
    for t in 0..gy.rows {
        let g = gy.row(t);
        let h = c.xhat.row(t);
        let mut dh = vec![0.0; d];
        for j in 0..d {
            dgain[j] += g[j] * h[j];
            dbias[j] += g[j];
            dh[j] = g[j] * gain[j];
        }
        let mean_dh = dh.iter().sum::<f64>() / d as f64;
        let mean_dh_h = dh.iter().zip(h).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        let row = dx.row_mut(t);
        for j in 0..d {
            row[j] = c.inv_std[t] * (dh[j] - mean_dh - h[j] * mean_dh_h);
        }
    }
    dx
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    x: Mat,
    ln1: NormCache,
    q: Mat,
    k: Mat,
    v: Mat,
    probs: Vec<Mat>,
    ctx: Mat,
    ln2: NormCache,
    hidden: Mat,
}

/// Forward state needed by [`Layer::backward`].
#[derive(Debug, Clone)]
pub enum Cache {
    Embedding { kept: Vec<(usize, usize)> },
    Dense { input: Mat, output: Mat },
    Dropout { mask: Option<Vec<f64>> },
    Conv1d { input: Mat, output: Mat },
    MaxPool { argmax: Vec<usize>, input_rows: usize },
    Rnn { input: Mat, states: Vec<Vec<f64>> },
    Lstm {
        input: Mat,
        hs: Vec<Vec<f64>>,
        cs: Vec<Vec<f64>>,
        gates: Vec<Vec<f64>>,
    },
    Attention(Box<AttentionCache>),
    MeanPool { rows: usize },
}
