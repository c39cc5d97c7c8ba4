//! Minimal CPU neural-network toolkit with explicit backward passes.
//!
//! Activations are batch-major `Array2<f32>` (one row per sample). Layers are
//! immutable during backward: gradients come back as values, so trained
//! models can be shared read-only while attacks differentiate through them.

mod adam;
mod conv;
mod dense;

pub use adam::Adam;
pub use conv::{Conv2d, ConvCache, ConvGeom, ConvTCache, ConvTranspose2d};
pub use dense::Dense;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Parameter gradients in the same order as a model's `params_mut`.
#[derive(Debug, Clone, Default)]
pub struct Grads(pub Vec<Vec<f32>>);

impl Grads {
    pub fn push(&mut self, g: Vec<f32>) {
        self.0.push(g);
    }

    pub fn extend(&mut self, other: Grads) {
        self.0.extend(other.0);
    }

    pub fn scale(&mut self, k: f32) {
        for g in &mut self.0 {
            g.iter_mut().for_each(|v| *v *= k);
        }
    }
}

/// Named flat parameter tensor, used by checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl NamedArray {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Self {
        Self {
            name: name.into(),
            shape,
            data,
        }
    }
}

pub(crate) fn take_array(
    arrays: &mut Vec<NamedArray>,
    name: &str,
    shape: &[usize],
) -> crate::Result<Vec<f32>> {
    let pos = arrays
        .iter()
        .position(|a| a.name == name)
        .ok_or_else(|| crate::Error::Checkpoint(format!("missing array `{name}`")))?;
    let a = arrays.swap_remove(pos);
    if a.shape != shape || a.data.len() != shape.iter().product::<usize>() {
        return Err(crate::Error::Checkpoint(format!(
            "array `{name}` has shape {:?}, expected {shape:?}",
            a.shape
        )));
    }
    Ok(a.data)
}

pub(crate) fn he_init<R: Rng>(rng: &mut R, fan_in: usize, len: usize, gain: f32) -> Vec<f32> {
    let std = gain * (2.0 / fan_in as f32).sqrt();
    let normal = Normal::new(0.0f32, std).expect("finite std");
    (0..len).map(|_| normal.sample(rng)).collect()
}

pub fn relu(x: &Array2<f32>) -> Array2<f32> {
    x.mapv(|v| v.max(0.0))
}

pub fn relu_backward(pre: &Array2<f32>, gy: &Array2<f32>) -> Array2<f32> {
    let mut g = gy.clone();
    g.zip_mut_with(pre, |g, &p| {
        if p <= 0.0 {
            *g = 0.0
        }
    });
    g
}

fn sigmoid_scalar(v: f32) -> f32 {
    1.0 / (1.0 + (-v).exp())
}

pub fn silu(x: &Array2<f32>) -> Array2<f32> {
    x.mapv(|v| v * sigmoid_scalar(v))
}

pub fn silu_backward(pre: &Array2<f32>, gy: &Array2<f32>) -> Array2<f32> {
    let mut g = gy.clone();
    g.zip_mut_with(pre, |g, &p| {
        let s = sigmoid_scalar(p);
        *g *= s * (1.0 + p * (1.0 - s));
    });
    g
}

pub fn sigmoid(x: &Array2<f32>) -> Array2<f32> {
    x.mapv(sigmoid_scalar)
}

/// Backward through a sigmoid given its *output*.
pub fn sigmoid_backward(out: &Array2<f32>, gy: &Array2<f32>) -> Array2<f32> {
    let mut g = gy.clone();
    g.zip_mut_with(out, |g, &s| *g *= s * (1.0 - s));
    g
}

/// Row-wise softmax.
pub fn softmax(logits: &Array2<f32>) -> Array2<f32> {
    let mut out = logits.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let m = row.fold(f32::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    out
}

/// Mean cross-entropy over rows and its gradient w.r.t. the logits.
pub fn softmax_cross_entropy(logits: &Array2<f32>, labels: &[usize]) -> (f64, Array2<f32>) {
    let probs = softmax(logits);
    let n = labels.len() as f32;
    let mut loss = 0.0f64;
    let mut grad = probs.clone();
    for (i, &y) in labels.iter().enumerate() {
        loss -= f64::from(probs[[i, y]].max(1e-30)).ln();
        grad[[i, y]] -= 1.0;
    }
    grad.mapv_inplace(|v| v / n);
    (loss / labels.len() as f64, grad)
}

/// Mean squared error over all elements and its gradient w.r.t. `pred`.
pub fn mse_loss(pred: &Array2<f32>, target: &Array2<f32>) -> (f64, Array2<f32>) {
    let n = pred.len() as f32;
    let diff = pred - target;
    let loss = diff.iter().map(|&d| f64::from(d) * f64::from(d)).sum::<f64>() / pred.len() as f64;
    (loss, diff.mapv(|d| 2.0 * d / n))
}

pub(crate) fn add_bias(y: &mut Array2<f32>, b: &Array1<f32>) {
    for mut row in y.axis_iter_mut(Axis(0)) {
        row += b;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn softmax_rows_sum_to_one() {
        let p = softmax(&array![[1.0f32, 2.0, 3.0], [0.0, 0.0, 1000.0]]);
        for row in p.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-6);
        }
        assert!((p[[1, 2]] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn activation_gradients_match_finite_differences() {
        let x = array![[-1.3f32, -0.2, 0.4, 2.1]];
        let gy = Array2::ones((1, 4));
        let h = 1e-3f32;
        let g_silu = silu_backward(&x, &gy);
        let g_sig = sigmoid_backward(&sigmoid(&x), &gy);
        for j in 0..4 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[[0, j]] += h;
            xm[[0, j]] -= h;
            let fd = (silu(&xp)[[0, j]] - silu(&xm)[[0, j]]) / (2.0 * h);
            assert!((fd - g_silu[[0, j]]).abs() < 1e-3);
            let fd = (sigmoid(&xp)[[0, j]] - sigmoid(&xm)[[0, j]]) / (2.0 * h);
            assert!((fd - g_sig[[0, j]]).abs() < 1e-3);
        }
    }

    #[test]
    fn cross_entropy_gradient() {
        let logits = array![[0.5f32, -0.3, 1.2], [0.1, 0.2, -0.7]];
        let labels = [2usize, 0];
        let (_, g) = softmax_cross_entropy(&logits, &labels);
        let h = 1e-3f32;
        for i in 0..2 {
            for j in 0..3 {
                let mut lp = logits.clone();
                let mut lm = logits.clone();
                lp[[i, j]] += h;
                lm[[i, j]] -= h;
                let fd = (softmax_cross_entropy(&lp, &labels).0
                    - softmax_cross_entropy(&lm, &labels).0)
                    / (2.0 * f64::from(h));
                assert!((fd as f32 - g[[i, j]]).abs() < 1e-3);
            }
        }
    }
}
