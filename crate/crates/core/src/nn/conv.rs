use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use super::{he_init, take_array, Grads, NamedArray};

/// Geometry of a square-kernel 2-D convolution on a channel-major image
/// `(channels, height, width)` flattened into one row per sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn in_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    fn positions(&self) -> usize {
        self.out_height() * self.out_width()
    }

    fn patch_len(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    /// `(batch, C*H*W)` to `(batch*positions, C*k*k)` patch matrix.
    fn im2col(&self, x: &Array2<f32>) -> Array2<f32> {
        let (oh, ow, k) = (self.out_height(), self.out_width(), self.kernel);
        let batch = x.nrows();
        let mut cols = Array2::<f32>::zeros((batch * oh * ow, self.patch_len()));
        for (n, sample) in x.axis_iter(Axis(0)).enumerate() {
            let sample = sample.as_slice().expect("contiguous rows");
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut row = cols.row_mut(n * oh * ow + oy * ow + ox);
                    let row = row.as_slice_mut().expect("contiguous");
                    for c in 0..self.channels {
                        for ky in 0..k {
                            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                            if iy < 0 || iy >= self.height as isize {
                                continue;
                            }
                            let base = (c * self.height + iy as usize) * self.width;
                            for kx in 0..k {
                                let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                                if ix < 0 || ix >= self.width as isize {
                                    continue;
                                }
                                row[(c * k + ky) * k + kx] = sample[base + ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    /// Adjoint of `im2col`: scatter-add patches back into images.
    fn col2im(&self, cols: &Array2<f32>, batch: usize) -> Array2<f32> {
        let (oh, ow, k) = (self.out_height(), self.out_width(), self.kernel);
        let mut x = Array2::<f32>::zeros((batch, self.in_len()));
        for n in 0..batch {
            let mut sample = x.row_mut(n);
            let sample = sample.as_slice_mut().expect("contiguous");
            for oy in 0..oh {
                for ox in 0..ow {
                    let row = cols.row(n * oh * ow + oy * ow + ox);
                    let row = row.as_slice().expect("contiguous");
                    for c in 0..self.channels {
                        for ky in 0..k {
                            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                            if iy < 0 || iy >= self.height as isize {
                                continue;
                            }
                            let base = (c * self.height + iy as usize) * self.width;
                            for kx in 0..k {
                                let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                                if ix < 0 || ix >= self.width as isize {
                                    continue;
                                }
                                sample[base + ix as usize] += row[(c * k + ky) * k + kx];
                            }
                        }
                    }
                }
            }
        }
        x
    }
}

/// `(batch*positions, channels)` to `(batch, channels*positions)`.
fn rows_to_channel_major(rows: &Array2<f32>, batch: usize) -> Array2<f32> {
    let channels = rows.ncols();
    let positions = rows.nrows() / batch;
    let mut out = Array2::<f32>::zeros((batch, channels * positions));
    for n in 0..batch {
        for p in 0..positions {
            let r = rows.row(n * positions + p);
            for c in 0..channels {
                out[[n, c * positions + p]] = r[c];
            }
        }
    }
    out
}

fn channel_major_to_rows(x: &Array2<f32>, channels: usize) -> Array2<f32> {
    let batch = x.nrows();
    let positions = x.ncols() / channels;
    let mut rows = Array2::<f32>::zeros((batch * positions, channels));
    for n in 0..batch {
        for c in 0..channels {
            for p in 0..positions {
                rows[[n * positions + p, c]] = x[[n, c * positions + p]];
            }
        }
    }
    rows
}

/// Strided convolution, weights `(C_in*k*k, C_out)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub geom: ConvGeom,
    pub w: Array2<f32>,
    pub b: Array1<f32>,
}

/// Forward cache for `Conv2d::backward`.
pub struct ConvCache {
    cols: Array2<f32>,
}

impl Conv2d {
    pub fn new<R: Rng>(rng: &mut R, geom: ConvGeom, out_channels: usize) -> Self {
        let fan_in = geom.patch_len();
        let w = Array2::from_shape_vec(
            (fan_in, out_channels),
            he_init(rng, fan_in, fan_in * out_channels, 1.0),
        )
        .expect("shape");
        Self {
            geom,
            w,
            b: Array1::zeros(out_channels),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.w.ncols()
    }

    pub fn out_len(&self) -> usize {
        self.out_channels() * self.geom.positions()
    }

    pub fn forward(&self, x: &Array2<f32>) -> (Array2<f32>, ConvCache) {
        let cols = self.geom.im2col(x);
        let mut y = cols.dot(&self.w);
        super::add_bias(&mut y, &self.b);
        (rows_to_channel_major(&y, x.nrows()), ConvCache { cols })
    }

    pub fn backward(&self, cache: &ConvCache, gy: &Array2<f32>, grads: &mut Grads) -> Array2<f32> {
        let gy_rows = channel_major_to_rows(gy, self.out_channels());
        grads.push(cache.cols.t().dot(&gy_rows).iter().copied().collect());
        grads.push(gy_rows.sum_axis(Axis(0)).to_vec());
        self.geom.col2im(&gy_rows.dot(&self.w.t()), gy.nrows())
    }

    pub fn input_grad(&self, gy: &Array2<f32>) -> Array2<f32> {
        let gy_rows = channel_major_to_rows(gy, self.out_channels());
        self.geom.col2im(&gy_rows.dot(&self.w.t()), gy.nrows())
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
            vec![self.w.nrows(), self.w.ncols()],
            self.w.iter().copied().collect(),
        ));
        out.push(NamedArray::new(
            format!("{prefix}.b"),
            vec![self.b.len()],
            self.b.to_vec(),
        ));
    }

    pub fn import(
        prefix: &str,
        geom: ConvGeom,
        out_channels: usize,
        arrays: &mut Vec<NamedArray>,
    ) -> crate::Result<Self> {
        let rows = geom.patch_len();
        let w = take_array(arrays, &format!("{prefix}.w"), &[rows, out_channels])?;
        let b = take_array(arrays, &format!("{prefix}.b"), &[out_channels])?;
        Ok(Self {
            geom,
            w: Array2::from_shape_vec((rows, out_channels), w).expect("checked shape"),
            b: Array1::from_vec(b),
        })
    }
}

/// Transposed convolution: the adjoint of a `Conv2d` with geometry `geom`,
/// mapping a `(in_channels, out_h, out_w)` map up to
/// `(geom.channels, geom.height, geom.width)`. Weights `(C_in, C_out*k*k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvTranspose2d {
    pub geom: ConvGeom,
    pub w: Array2<f32>,
    pub b: Array1<f32>,
}

pub struct ConvTCache {
    x_rows: Array2<f32>,
}

impl ConvTranspose2d {
    pub fn new<R: Rng>(rng: &mut R, geom: ConvGeom, in_channels: usize, gain: f32) -> Self {
        // each output pixel receives about in_channels * (k/stride)^2 terms
        let fan_in = (in_channels * geom.kernel * geom.kernel / (geom.stride * geom.stride)).max(1);
        let cols = geom.patch_len();
        let w = Array2::from_shape_vec(
            (in_channels, cols),
            he_init(rng, fan_in, in_channels * cols, gain),
        )
        .expect("shape");
        Self {
            geom,
            w,
            b: Array1::zeros(geom.channels),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.w.nrows()
    }

    pub fn in_len(&self) -> usize {
        self.in_channels() * self.geom.positions()
    }

    pub fn forward(&self, x: &Array2<f32>) -> (Array2<f32>, ConvTCache) {
        let batch = x.nrows();
        let x_rows = channel_major_to_rows(x, self.in_channels());
        let cols = x_rows.dot(&self.w);
        let mut y = self.geom.col2im(&cols, batch);
        let hw = self.geom.height * self.geom.width;
        for mut row in y.axis_iter_mut(Axis(0)) {
            for (c, &bias) in self.b.iter().enumerate() {
                row.slice_mut(ndarray::s![c * hw..(c + 1) * hw])
                    .mapv_inplace(|v| v + bias);
            }
        }
        (y, ConvTCache { x_rows })
    }

    pub fn backward(
        &self,
        cache: &ConvTCache,
        gy: &Array2<f32>,
        grads: &mut Grads,
    ) -> Array2<f32> {
        let batch = gy.nrows();
        let gcols = self.geom.im2col(gy);
        grads.push(cache.x_rows.t().dot(&gcols).iter().copied().collect());
        let hw = self.geom.height * self.geom.width;
        let mut gb = vec![0.0f32; self.geom.channels];
        for row in gy.axis_iter(Axis(0)) {
            for (c, g) in gb.iter_mut().enumerate() {
                *g += row.slice(ndarray::s![c * hw..(c + 1) * hw]).sum();
            }
        }
        grads.push(gb);
        rows_to_channel_major(&gcols.dot(&self.w.t()), batch)
    }

    pub fn input_grad(&self, gy: &Array2<f32>) -> Array2<f32> {
        let gcols = self.geom.im2col(gy);
        rows_to_channel_major(&gcols.dot(&self.w.t()), gy.nrows())
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
            vec![self.w.nrows(), self.w.ncols()],
            self.w.iter().copied().collect(),
        ));
        out.push(NamedArray::new(
            format!("{prefix}.b"),
            vec![self.b.len()],
            self.b.to_vec(),
        ));
    }

    pub fn import(
        prefix: &str,
        geom: ConvGeom,
        in_channels: usize,
        arrays: &mut Vec<NamedArray>,
    ) -> crate::Result<Self> {
        let cols = geom.patch_len();
        let w = take_array(arrays, &format!("{prefix}.w"), &[in_channels, cols])?;
        let b = take_array(arrays, &format!("{prefix}.b"), &[geom.channels])?;
        Ok(Self {
            geom,
            w: Array2::from_shape_vec((in_channels, cols), w).expect("checked shape"),
            b: Array1::from_vec(b),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn geom() -> ConvGeom {
        ConvGeom {
            channels: 2,
            height: 6,
            width: 6,
            kernel: 3,
            stride: 2,
            pad: 1,
        }
    }

    #[test]
    fn output_size() {
        let g = ConvGeom {
            channels: 1,
            height: 28,
            width: 28,
            kernel: 3,
            stride: 2,
            pad: 1,
        };
        assert_eq!((g.out_height(), g.out_width()), (14, 14));
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), c> == <x, col2im(c)>
        let g = geom();
        let x = Array2::from_shape_fn((2, g.in_len()), |(i, j)| ((i * 7 + j * 3) % 11) as f32 - 5.0);
        let cols_shape = (2 * g.positions(), g.patch_len());
        let c = Array2::from_shape_fn(cols_shape, |(i, j)| ((i * 5 + j) % 7) as f32 - 3.0);
        let lhs = (&g.im2col(&x) * &c).sum();
        let rhs = (&x * &g.col2im(&c, 2)).sum();
        assert!((lhs - rhs).abs() < 1e-3);
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let conv = Conv2d::new(&mut rng, geom(), 3);
        let x = Array2::from_shape_fn((2, geom().in_len()), |(i, j)| ((i + j) as f32 * 0.37).sin());
        let (y, cache) = conv.forward(&x);
        let gy = Array2::from_shape_fn(y.dim(), |(i, j)| ((i * 3 + j) as f32 * 0.11).cos());
        let mut grads = Grads::default();
        let gx = conv.backward(&cache, &gy, &mut grads);
        let f = |c: &Conv2d, x: &Array2<f32>| (c.forward(x).0 * &gy).sum();
        let h = 1e-2;
        for j in [0usize, 13, 40, 71] {
            let mut xp = x.clone();
            xp[[1, j]] += h;
            let mut xm = x.clone();
            xm[[1, j]] -= h;
            let fd = (f(&conv, &xp) - f(&conv, &xm)) / (2.0 * h);
            assert!((fd - gx[[1, j]]).abs() < 2e-2, "x[{j}]: {fd} vs {}", gx[[1, j]]);
        }
        for idx in [0usize, 17, 50] {
            let mut cp = conv.clone();
            cp.w.as_slice_mut().unwrap()[idx] += h;
            let mut cm = conv.clone();
            cm.w.as_slice_mut().unwrap()[idx] -= h;
            let fd = (f(&cp, &x) - f(&cm, &x)) / (2.0 * h);
            assert!((fd - grads.0[0][idx]).abs() < 2e-2);
        }
        assert_eq!(conv.input_grad(&gy), gx);
    }

    #[test]
    fn transposed_conv_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let ct = ConvTranspose2d::new(&mut rng, geom(), 3, 1.0);
        let x = Array2::from_shape_fn((2, ct.in_len()), |(i, j)| ((i + 2 * j) as f32 * 0.21).sin());
        let (y, cache) = ct.forward(&x);
        assert_eq!(y.ncols(), geom().in_len());
        let gy = Array2::from_shape_fn(y.dim(), |(i, j)| ((i * 5 + j) as f32 * 0.07).cos());
        let mut grads = Grads::default();
        let gx = ct.backward(&cache, &gy, &mut grads);
        let f = |c: &ConvTranspose2d, x: &Array2<f32>| (c.forward(x).0 * &gy).sum();
        let h = 1e-2;
        for j in [0usize, 8, 20, 26] {
            let mut xp = x.clone();
            xp[[0, j]] += h;
            let mut xm = x.clone();
            xm[[0, j]] -= h;
            let fd = (f(&ct, &xp) - f(&ct, &xm)) / (2.0 * h);
            assert!((fd - gx[[0, j]]).abs() < 2e-2);
        }
        for idx in [0usize, 9, 30] {
            let mut cp = ct.clone();
            cp.w.as_slice_mut().unwrap()[idx] += h;
            let mut cm = ct.clone();
            cm.w.as_slice_mut().unwrap()[idx] -= h;
            let fd = (f(&cp, &x) - f(&cm, &x)) / (2.0 * h);
            assert!((fd - grads.0[0][idx]).abs() < 2e-2);
        }
        let mut bp = ct.clone();
        bp.b[1] += h;
        let mut bm = ct.clone();
        bm.b[1] -= h;
        let fd = (f(&bp, &x) - f(&bm, &x)) / (2.0 * h);
        assert!((fd - grads.0[1][1]).abs() < 2e-2);
    }
}
