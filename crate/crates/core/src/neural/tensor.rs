use serde::{Deserialize, Serialize};

/// Row-major matrix; sequences are stored one position per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data does not match its shape");
        Mat { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Mat::from_vec(rows.len(), cols, data)
    }

    /// A single row.
    pub fn row_vector(values: &[f64]) -> Self {
        Mat::from_vec(1, values.len(), values.to_vec())
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn add_assign(&mut self, other: &Mat) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// `y[t] = W x[t] + b` for every row, with `W` stored `out x in`.
pub(crate) fn linear(w: &[f64], b: &[f64], x: &Mat, out: usize) -> Mat {
    let inp = x.cols;
    let mut y = Mat::zeros(x.rows, out);
    for t in 0..x.rows {
        let xr = x.row(t);
        let yr = y.row_mut(t);
        for o in 0..out {
            let wr = &w[o * inp..(o + 1) * inp];
            let mut acc = b[o];
            for (wi, xi) in wr.iter().zip(xr) {
                acc += wi * xi;
            }
            yr[o] = acc;
        }
    }
    y
}

/// Accumulates weight and bias gradients of [`linear`] and returns the input gradient.
pub(crate) fn linear_backward(w: &[f64], x: &Mat, gy: &Mat, dw: &mut [f64], db: &mut [f64]) -> Mat {
    let inp = x.cols;
    let out = gy.cols;
    let mut dx = Mat::zeros(x.rows, inp);
    for t in 0..x.rows {
        let xr = x.row(t);
        let gr = gy.row(t);
        let dxr = dx.row_mut(t);
        for o in 0..out {
            let g = gr[o];
            if g == 0.0 {
                continue;
            }
            db[o] += g;
            let wr = &w[o * inp..(o + 1) * inp];
            let dwr = &mut dw[o * inp..(o + 1) * inp];
            for i in 0..inp {
                dwr[i] += g * xr[i];
                dxr[i] += g * wr[i];
            }
        }
    }
    dx
}

/// `W v` for a single vector.
pub(crate) fn matvec(w: &[f64], v: &[f64], out: usize) -> Vec<f64> {
    let inp = v.len();
    (0..out)
        .map(|o| w[o * inp..(o + 1) * inp].iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

/// Accumulates `g v^T` into `dw` and returns `W^T g`.
pub(crate) fn matvec_backward(w: &[f64], v: &[f64], g: &[f64], dw: &mut [f64]) -> Vec<f64> {
    let inp = v.len();
    let mut dv = vec![0.0; inp];
    for (o, &go) in g.iter().enumerate() {
        if go == 0.0 {
            continue;
        }
        let wr = &w[o * inp..(o + 1) * inp];
        let dwr = &mut dw[o * inp..(o + 1) * inp];
        for i in 0..inp {
            dwr[i] += go * v[i];
            dv[i] += go * wr[i];
        }
    }
    dv
}
