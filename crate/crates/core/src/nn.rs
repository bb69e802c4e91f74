//! Small dense networks with hand-written backpropagation and an Adam optimizer.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fully connected network with ReLU between layers and a linear output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    /// `weights[i]` has shape `(sizes[i], sizes[i + 1])`.
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

/// Inputs seen by each layer during a forward pass.
pub struct Activations {
    inputs: Vec<Array2<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpGrad {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Mlp {
    /// Orthogonal init scaled by `sqrt(2)` for hidden layers and `output_gain` for the last
    /// layer; zero biases.
    pub fn new(sizes: &[usize], output_gain: f64, rng: &mut impl Rng) -> Mlp {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let n = sizes.len() - 1;
        let weights = (0..n)
            .map(|i| {
                let gain = if i + 1 == n {
                    output_gain
                } else {
                    2f64.sqrt()
                };
                orthogonal(sizes[i], sizes[i + 1], rng) * gain
            })
            .collect();
        let biases = (0..n).map(|i| Array1::zeros(sizes[i + 1])).collect();
        Mlp {
            sizes: sizes.to_vec(),
            weights,
            biases,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("non-empty sizes")
    }

    pub fn n_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: cols,
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(x.ncols())?;
        let mut h = x.to_owned();
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            h = h.dot(w) + b;
            if i + 1 < self.weights.len() {
                h.mapv_inplace(|v| v.max(0.0));
            }
        }
        Ok(h)
    }

    pub fn forward_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, x.len()), x).expect("row view");
        Ok(self.forward(x)?.into_raw_vec_and_offset().0)
    }

    pub fn forward_train(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, Activations)> {
        self.check_input(x.ncols())?;
        let mut inputs = Vec::with_capacity(self.weights.len());
        let mut h = x.to_owned();
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = h.dot(w) + b;
            if i + 1 < self.weights.len() {
                z.mapv_inplace(|v| v.max(0.0));
            }
            inputs.push(h);
            h = z;
        }
        Ok((h, Activations { inputs }))
    }

    /// Gradient of a loss with respect to the parameters, given `dout = dL/d(output)`.
    pub fn backward(&self, acts: &Activations, dout: Array2<f64>) -> MlpGrad {
        let n = self.weights.len();
        let mut gw = Vec::with_capacity(n);
        let mut gb = Vec::with_capacity(n);
        let mut g = dout;
        for i in (0..n).rev() {
            let input = &acts.inputs[i];
            gw.push(input.t().dot(&g));
            gb.push(g.sum_axis(Axis(0)));
            if i > 0 {
                let mut prev = g.dot(&self.weights[i].t());
                prev.zip_mut_with(input, |d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
                g = prev;
            }
        }
        gw.reverse();
        gb.reverse();
        MlpGrad {
            weights: gw,
            biases: gb,
        }
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::DimensionMismatch {
                expected: self.n_params(),
                got: flat.len(),
            });
        }
        let mut at = 0;
        for (w, b) in self.weights.iter_mut().zip(&mut self.biases) {
            for v in w.iter_mut().chain(b.iter_mut()) {
                *v = flat[at];
                at += 1;
            }
        }
        Ok(())
    }
}

impl MlpGrad {
    pub fn zeros_like(net: &Mlp) -> MlpGrad {
        MlpGrad {
            weights: net.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: net.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &MlpGrad) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }

    pub fn scale(&mut self, k: f64) {
        for w in &mut self.weights {
            *w *= k;
        }
        for b in &mut self.biases {
            *b *= k;
        }
    }

    pub fn norm_sq(&self) -> f64 {
        self.weights.iter().map(|w| w.iter().map(|v| v * v).sum::<f64>()).sum::<f64>()
            + self.biases.iter().map(|b| b.iter().map(|v| v * v).sum::<f64>()).sum::<f64>()
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

/// Scale a set of gradients so that their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [&mut MlpGrad], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g.norm_sq()).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        for g in grads.iter_mut() {
            g.scale(max_norm / norm);
        }
    }
    norm
}

/// Matrix with orthonormal rows or columns, whichever are fewer.
fn orthogonal(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    let (long, short) = (rows.max(cols), rows.min(cols));
    let mut basis: Vec<Array1<f64>> = Vec::with_capacity(short);
    while basis.len() < short {
        let mut v: Array1<f64> = (0..long).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        for b in &basis {
            let d = v.dot(b);
            v.scaled_add(-d, b);
        }
        let n = v.dot(&v).sqrt();
        if n > 1e-8 {
            basis.push(v / n);
        }
    }
    let mut m = Array2::zeros((rows, cols));
    for (k, b) in basis.iter().enumerate() {
        if rows >= cols {
            m.column_mut(k).assign(b);
        } else {
            m.row_mut(k).assign(b);
        }
    }
    m
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64, n_params: usize) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    /// One descent step on `net` along `grad`.
    pub fn step(&mut self, net: &mut Mlp, grad: &MlpGrad) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let mut at = 0;
        let mut update = |p: &mut f64, g: f64| {
            let m = &mut self.m[at];
            let v = &mut self.v[at];
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
            at += 1;
        };
        for i in 0..net.weights.len() {
            for (p, g) in net.weights[i].iter_mut().zip(grad.weights[i].iter()) {
                update(p, *g);
            }
            for (p, g) in net.biases[i].iter_mut().zip(grad.biases[i].iter()) {
                update(p, *g);
            }
        }
    }
}

/// Stack equal-length rows into a matrix.
pub fn stack_rows<'a>(rows: impl IntoIterator<Item = &'a [f64]>, cols: usize) -> Array2<f64> {
    let mut data = Vec::new();
    let mut n = 0;
    for r in rows {
        debug_assert_eq!(r.len(), cols);
        data.extend_from_slice(r);
        n += 1;
    }
    Array2::from_shape_vec((n, cols), data).expect("rows of equal length")
}
