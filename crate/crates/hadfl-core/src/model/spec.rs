//! Model architectures, losses and analytic gradients.
//!
//! Three small architectures cover the protocol experiments: linear
//! regression, logistic regression, and a one-hidden-layer tanh MLP. All of
//! them are differentiable by hand and small enough for finite-difference
//! oracles in the test suite.

use crate::error::{Error, Result};
use crate::model::data::Sample;
use crate::model::vector::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    LinearRegression,
    LogisticRegression,
    Mlp1Hidden,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    SquaredError,
    CrossEntropy,
}

/// Architecture plus loss. `hidden_dim` is used by the MLP only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub loss: LossKind,
}

impl ModelSpec {
    pub fn linear_regression(input_dim: usize) -> Self {
        ModelSpec {
            kind: ModelKind::LinearRegression,
            input_dim,
            hidden_dim: 0,
            output_dim: 1,
            loss: LossKind::SquaredError,
        }
    }

    pub fn logistic_regression(input_dim: usize) -> Self {
        ModelSpec {
            kind: ModelKind::LogisticRegression,
            input_dim,
            hidden_dim: 0,
            output_dim: 1,
            loss: LossKind::CrossEntropy,
        }
    }

    pub fn mlp(input_dim: usize, hidden_dim: usize, output_dim: usize, loss: LossKind) -> Self {
        ModelSpec {
            kind: ModelKind::Mlp1Hidden,
            input_dim,
            hidden_dim,
            output_dim,
            loss,
        }
    }

    /// Parameter layout: dense layers store `[W row-major, b]` per layer.
    pub fn param_count(&self) -> usize {
        match self.kind {
            ModelKind::LinearRegression | ModelKind::LogisticRegression => {
                self.output_dim * self.input_dim + self.output_dim
            }
            ModelKind::Mlp1Hidden => {
                self.hidden_dim * self.input_dim
                    + self.hidden_dim
                    + self.output_dim * self.hidden_dim
                    + self.output_dim
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::invalid("model dims", "input/output dims must be positive"));
        }
        if self.kind == ModelKind::Mlp1Hidden && self.hidden_dim == 0 {
            return Err(Error::invalid("hidden_dim", "mlp requires hidden_dim >= 1"));
        }
        if self.kind == ModelKind::LogisticRegression && self.loss != LossKind::CrossEntropy {
            return Err(Error::invalid("loss", "logistic regression uses cross-entropy"));
        }
        Ok(())
    }

    fn check_inputs(&self, w: &ParamVector, x: &[f64]) -> Result<()> {
        if w.dim() != self.param_count() {
            return Err(Error::DimMismatch {
                expected: self.param_count(),
                got: w.dim(),
            });
        }
        if x.len() != self.input_dim {
            return Err(Error::DimMismatch {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Raw model outputs (pre-link scores) for one sample.
    pub fn forward(&self, w: &ParamVector, x: &[f64]) -> Result<Vec<f64>> {
        self.check_inputs(w, x)?;
        let p = w.as_slice();
        Ok(match self.kind {
            ModelKind::LinearRegression | ModelKind::LogisticRegression => {
                dense(p, 0, x, self.input_dim, self.output_dim)
            }
            ModelKind::Mlp1Hidden => {
                let mut h = dense(p, 0, x, self.input_dim, self.hidden_dim);
                for v in &mut h {
                    *v = v.tanh();
                }
                let off = self.hidden_dim * self.input_dim + self.hidden_dim;
                dense(p, off, &h, self.hidden_dim, self.output_dim)
            }
        })
    }

    /// Per-sample loss.
    pub fn sample_loss(&self, w: &ParamVector, s: &Sample) -> Result<f64> {
        let z = self.forward(w, &s.features)?;
        let loss = self.loss_on_scores(&z, s.label);
        if !loss.is_finite() {
            return Err(Error::NonFinite { context: "loss" });
        }
        Ok(loss)
    }

    fn loss_on_scores(&self, z: &[f64], label: f64) -> f64 {
        match self.loss {
            LossKind::SquaredError => {
                let target = self.target_vector(label);
                0.5 * z
                    .iter()
                    .zip(&target)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
            }
            LossKind::CrossEntropy => {
                if self.output_dim == 1 {
                    // stable binary cross-entropy on the logit
                    let t = z[0];
                    t.max(0.0) - t * label + (-t.abs()).exp().ln_1p()
                } else {
                    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let log_sum: f64 = z.iter().map(|v| (v - m).exp()).sum::<f64>().ln() + m;
                    log_sum - z[label as usize]
                }
            }
        }
    }

    fn target_vector(&self, label: f64) -> Vec<f64> {
        if self.output_dim == 1 {
            vec![label]
        } else {
            let mut t = vec![0.0; self.output_dim];
            t[label as usize] = 1.0;
            t
        }
    }

    /// dL/dz for one sample: the error signal at the output layer.
    fn output_delta(&self, z: &[f64], label: f64) -> Vec<f64> {
        match self.loss {
            LossKind::SquaredError => {
                let target = self.target_vector(label);
                z.iter().zip(&target).map(|(a, b)| a - b).collect()
            }
            LossKind::CrossEntropy => {
                if self.output_dim == 1 {
                    vec![sigmoid(z[0]) - label]
                } else {
                    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
                    let sum: f64 = exps.iter().sum();
                    let mut d: Vec<f64> = exps.iter().map(|e| e / sum).collect();
                    d[label as usize] -= 1.0;
                    d
                }
            }
        }
    }

    /// Accumulates one sample's gradient into `grad` and returns its loss.
    pub(crate) fn accumulate_gradient(
        &self,
        w: &ParamVector,
        s: &Sample,
        grad: &mut [f64],
    ) -> Result<f64> {
        self.check_inputs(w, &s.features)?;
        let p = w.as_slice();
        let x = &s.features;
        match self.kind {
            ModelKind::LinearRegression | ModelKind::LogisticRegression => {
                let z = dense(p, 0, x, self.input_dim, self.output_dim);
                let delta = self.output_delta(&z, s.label);
                dense_backward(grad, 0, x, &delta, self.input_dim, self.output_dim);
                Ok(self.loss_on_scores(&z, s.label))
            }
            ModelKind::Mlp1Hidden => {
                let pre_h = dense(p, 0, x, self.input_dim, self.hidden_dim);
                let h: Vec<f64> = pre_h.iter().map(|v| v.tanh()).collect();
                let off2 = self.hidden_dim * self.input_dim + self.hidden_dim;
                let z = dense(p, off2, &h, self.hidden_dim, self.output_dim);
                let delta_z = self.output_delta(&z, s.label);
                dense_backward(grad, off2, &h, &delta_z, self.hidden_dim, self.output_dim);
                // back through W2 and tanh
                let mut delta_h = vec![0.0; self.hidden_dim];
                for (o, dz) in delta_z.iter().enumerate() {
                    let row = off2 + o * self.hidden_dim;
                    for j in 0..self.hidden_dim {
                        delta_h[j] += p[row + j] * dz;
                    }
                }
                for (j, dh) in delta_h.iter_mut().enumerate() {
                    *dh *= 1.0 - h[j] * h[j];
                }
                dense_backward(grad, 0, x, &delta_h, self.input_dim, self.hidden_dim);
                Ok(self.loss_on_scores(&z, s.label))
            }
        }
    }

    /// Predicted class for classification specs; `None` for regression.
    /// Binary decisions break the exact 0.5 tie toward class 0, which keeps
    /// evaluation deterministic.
    pub fn predict_class(&self, z: &[f64]) -> Option<usize> {
        match self.loss {
            LossKind::SquaredError => None,
            LossKind::CrossEntropy => {
                if self.output_dim == 1 {
                    Some(usize::from(sigmoid(z[0]) > 0.5))
                } else {
                    let mut best = 0;
                    for (i, v) in z.iter().enumerate() {
                        if *v > z[best] {
                            best = i;
                        }
                    }
                    Some(best)
                }
            }
        }
    }
}

pub(crate) fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `W x + b` where `W` is `rows x cols` row-major at `params[offset..]`,
/// followed by `b` of length `rows`.
fn dense(params: &[f64], offset: usize, x: &[f64], cols: usize, rows: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = offset + r * cols;
        let mut acc = params[offset + rows * cols + r]; // bias
        for (j, xj) in x.iter().enumerate() {
            acc += params[row + j] * xj;
        }
        out.push(acc);
    }
    out
}

/// Accumulates `delta x^T` into the weight block and `delta` into the bias.
fn dense_backward(
    grad: &mut [f64],
    offset: usize,
    x: &[f64],
    delta: &[f64],
    cols: usize,
    rows: usize,
) {
    for (r, d) in delta.iter().enumerate() {
        let row = offset + r * cols;
        for (j, xj) in x.iter().enumerate() {
            grad[row + j] += d * xj;
        }
        grad[offset + rows * cols + r] += d;
    }
}
