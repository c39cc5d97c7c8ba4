use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use super::{add_bias, he_init, take_array, Grads, NamedArray};

/// Fully connected layer `y = x W + b`, `W` stored as `(in, out)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Array2<f32>,
    pub b: Array1<f32>,
}

impl Dense {
    pub fn new<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize, gain: f32) -> Self {
        let w = Array2::from_shape_vec(
            (fan_in, fan_out),
            he_init(rng, fan_in, fan_in * fan_out, gain),
        )
        .expect("shape");
        Self {
            w,
            b: Array1::zeros(fan_out),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            w: Array2::zeros((fan_in, fan_out)),
            b: Array1::zeros(fan_out),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.w.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.w.ncols()
    }

    pub fn forward(&self, x: &Array2<f32>) -> Array2<f32> {
        let mut y = x.dot(&self.w);
        add_bias(&mut y, &self.b);
        y
    }

    /// Returns the input gradient and appends `[dW, db]` to `grads`.
    pub fn backward(&self, x: &Array2<f32>, gy: &Array2<f32>, grads: &mut Grads) -> Array2<f32> {
        let gw = x.t().dot(gy);
        let gb = gy.sum_axis(Axis(0));
        grads.push(gw.iter().copied().collect());
        grads.push(gb.to_vec());
        self.input_grad(gy)
    }

    pub fn input_grad(&self, gy: &Array2<f32>) -> Array2<f32> {
        gy.dot(&self.w.t())
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f32]> {
        vec![
            self.w.as_slice_mut().expect("standard layout"),
            self.b.as_slice_mut().expect("standard layout"),
        ]
    }

    pub fn export(&self, prefix: &str, out: &mut Vec<NamedArray>) {
        out.push(NamedArray::new(
            format!("{prefix}.w"),
            vec![self.fan_in(), self.fan_out()],
            self.w.iter().copied().collect(),
        ));
        out.push(NamedArray::new(
            format!("{prefix}.b"),
            vec![self.fan_out()],
            self.b.to_vec(),
        ));
    }

    pub fn import(
        prefix: &str,
        fan_in: usize,
        fan_out: usize,
        arrays: &mut Vec<NamedArray>,
    ) -> crate::Result<Self> {
        let w = take_array(arrays, &format!("{prefix}.w"), &[fan_in, fan_out])?;
        let b = take_array(arrays, &format!("{prefix}.b"), &[fan_out])?;
        Ok(Self {
            w: Array2::from_shape_vec((fan_in, fan_out), w).expect("checked shape"),
            b: Array1::from_vec(b),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut layer = Dense::new(&mut rng, 5, 3, 1.0);
        layer.b = Array1::from_vec(vec![0.1, -0.2, 0.3]);
        let x = Array2::from_shape_fn((2, 5), |(i, j)| (i as f32 - j as f32) * 0.3);
        let gy = Array2::from_shape_fn((2, 3), |(i, j)| 0.5 + i as f32 - 0.25 * j as f32);
        let loss = |l: &Dense, x: &Array2<f32>| -> f32 { (l.forward(x) * &gy).sum() };
        let mut grads = Grads::default();
        let gx = layer.backward(&x, &gy, &mut grads);
        let h = 1e-2f32;
        for (i, j) in [(0, 0), (1, 4), (0, 2)] {
            let mut xp = x.clone();
            xp[[i, j]] += h;
            let mut xm = x.clone();
            xm[[i, j]] -= h;
            let fd = (loss(&layer, &xp) - loss(&layer, &xm)) / (2.0 * h);
            assert!((fd - gx[[i, j]]).abs() < 1e-2, "{fd} vs {}", gx[[i, j]]);
        }
        for (idx, &g) in grads.0[0].iter().enumerate().step_by(4) {
            let mut lp = layer.clone();
            lp.w.as_slice_mut().unwrap()[idx] += h;
            let mut lm = layer.clone();
            lm.w.as_slice_mut().unwrap()[idx] -= h;
            let fd = (loss(&lp, &x) - loss(&lm, &x)) / (2.0 * h);
            assert!((fd - g).abs() < 1e-2);
        }
        assert_eq!(grads.0[1], gy.sum_axis(Axis(0)).to_vec());
    }
}
