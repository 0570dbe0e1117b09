//! Dense 3D convolution over small voxel grids.
//!
//! Activations are channels-last: `[R, W, H, L, C]` with `R` the batch of
//! grids. Weights are stored tap-major as `[k, k, k, Cin, Cout]`, which
//! makes the flattened weight matrix exactly the `[k^3*Cin, Cout]` operand
//! im2col needs, with no repacking.

use rand_chacha::ChaCha8Rng;

use super::gemm::{gemm_add, gemm_at_add};
use super::init::kaiming_uniform;
use super::tensor::Tensor;
use crate::{invalid_arg, invalid_state, Result, Scalar};

/// 3D convolution, stride 1, zero padding `(k - 1) / 2` so spatial shape
/// is preserved. Kernel size must be odd.
pub struct Conv3d<S: Scalar> {
    weight: Tensor<S>,
    bias: Tensor<S>,
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    padding: usize,
    cache: Option<Tensor<S>>,
}

impl<S: Scalar> Conv3d<S> {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 {
            return Err(invalid_arg!("conv3d channels must be positive"));
        }
        if kernel == 0 || kernel.is_multiple_of(2) {
            return Err(invalid_arg!("conv3d kernel size {kernel} must be odd"));
        }
        let fan_in = in_channels * kernel * kernel * kernel;
        let mut weight = Tensor::from_vec(
            &[kernel, kernel, kernel, in_channels, out_channels],
            kaiming_uniform(rng, fan_in, fan_in * out_channels),
        )?;
        weight.enable_grad();
        Ok(Conv3d {
            weight,
            bias: Tensor::param(&[out_channels]),
            in_channels,
            out_channels,
            kernel,
            padding: (kernel - 1) / 2,
            cache: None,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    fn check_input(&self, x: &Tensor<S>) -> Result<(usize, usize, usize, usize)> {
        let s = x.shape();
        if s.len() != 5 {
            return Err(invalid_arg!("conv3d expects [R, W, H, L, C], got {:?}", s));
        }
        let (r, w, h, l, c) = (s[0], s[1], s[2], s[3], s[4]);
        if c != self.in_channels {
            return Err(invalid_arg!(
                "conv3d input has {c} channels, layer expects {}",
                self.in_channels
            ));
        }
        if w == 0 || h == 0 || l == 0 {
            return Err(invalid_arg!("conv3d spatial dims must be positive, got {:?}", s));
        }
        Ok((r, w, h, l))
    }

    /// Runs the convolution. `train` caches the input for `backward`.
    pub fn forward(&mut self, x: &Tensor<S>, train: bool) -> Result<Tensor<S>> {
        let (r, w, h, l) = self.check_input(x)?;
        let spatial = w * h * l;
        let ktaps = self.kernel * self.kernel * self.kernel * self.in_channels;
        let mut out = Tensor::zeros(&[r, w, h, l, self.out_channels]);
        // Bias pre-fill; gemm accumulates on top.
        {
            let ob = out.data_mut();
            for row in 0..r * spatial {
                ob[row * self.out_channels..(row + 1) * self.out_channels]
                    .copy_from_slice(self.bias.data());
            }
        }
        let mut col = vec![S::zero(); spatial * ktaps];
        for region in 0..r {
            let xr = &x.data()[region * spatial * self.in_channels..][..spatial * self.in_channels];
            self.im2col(xr, (w, h, l), &mut col);
            let or = &mut out.data_mut()[region * spatial * self.out_channels..]
                [..spatial * self.out_channels];
            gemm_add(&col, self.weight.data(), or, spatial, ktaps, self.out_channels);
        }
        self.cache = if train { Some(x.clone()) } else { None };
        Ok(out)
    }

    /// Gradient pass. Accumulates into weight/bias grads and returns the
    /// input gradient. Consumes the cached input.
    pub fn backward(&mut self, dout: &Tensor<S>) -> Result<Tensor<S>> {
        let x = self
            .cache
            .take()
            .ok_or_else(|| invalid_state!("conv3d backward without cached forward"))?;
        let (r, w, h, l) = self.check_input(&x)?;
        let spatial = w * h * l;
        if dout.shape() != [r, w, h, l, self.out_channels] {
            return Err(invalid_state!(
                "conv3d upstream gradient shape {:?} does not match forward output",
                dout.shape()
            ));
        }
        let ktaps = self.kernel * self.kernel * self.kernel * self.in_channels;
        let cout = self.out_channels;

        // Bias gradient: column sums of dout.
        {
            let bg = self.bias.grad_mut();
            for row in 0..r * spatial {
                let drow = &dout.data()[row * cout..(row + 1) * cout];
                for (g, &d) in bg.iter_mut().zip(drow) {
                    *g = *g + d;
                }
            }
        }

        // Transposed weights for the input gradient.
        let mut wt = vec![S::zero(); ktaps * cout];
        for kk in 0..ktaps {
            for co in 0..cout {
                wt[co * ktaps + kk] = self.weight.data()[kk * cout + co];
            }
        }

        let mut dx = Tensor::zeros(x.shape());
        let mut col = vec![S::zero(); spatial * ktaps];
        let mut dcol = vec![S::zero(); spatial * ktaps];
        for region in 0..r {
            let xr = &x.data()[region * spatial * self.in_channels..][..spatial * self.in_channels];
            let dor = &dout.data()[region * spatial * cout..][..spatial * cout];
            self.im2col(xr, (w, h, l), &mut col);
            gemm_at_add(&col, dor, self.weight.grad_mut(), spatial, ktaps, cout);
            dcol.iter_mut().for_each(|v| *v = S::zero());
            gemm_add(dor, &wt, &mut dcol, spatial, cout, ktaps);
            let dxr = &mut dx.data_mut()[region * spatial * self.in_channels..]
                [..spatial * self.in_channels];
            self.col2im(&dcol, (w, h, l), dxr);
        }
        Ok(dx)
    }

    /// Gathers the receptive field of every output voxel into `col`
    /// (`[spatial, k^3 * Cin]`), zero-filling out-of-bounds taps.
    fn im2col(&self, x: &[S], dims: (usize, usize, usize), col: &mut [S]) {
        let (w, h, l) = dims;
        let (k, p, cin) = (self.kernel, self.padding as isize, self.in_channels);
        let ktaps = k * k * k * cin;
        let mut m = 0usize;
        for ox in 0..w as isize {
            for oy in 0..h as isize {
                for oz in 0..l as isize {
                    let crow = &mut col[m * ktaps..(m + 1) * ktaps];
                    let mut t = 0usize;
                    for dx in 0..k as isize {
                        let sx = ox + dx - p;
                        for dy in 0..k as isize {
                            let sy = oy + dy - p;
                            let row_ok = sx >= 0
                                && sx < w as isize
                                && sy >= 0
                                && sy < h as isize;
                            for dz in 0..k as isize {
                                let sz = oz + dz - p;
                                let dst = &mut crow[t * cin..(t + 1) * cin];
                                if row_ok && sz >= 0 && sz < l as isize {
                                    let src = ((sx as usize * h + sy as usize) * l
                                        + sz as usize)
                                        * cin;
                                    dst.copy_from_slice(&x[src..src + cin]);
                                } else {
                                    dst.iter_mut().for_each(|v| *v = S::zero());
                                }
                                t += 1;
                            }
                        }
                    }
                    m += 1;
                }
            }
        }
    }

    /// Scatter-adds column gradients back to input positions; the adjoint
    /// of `im2col`.
    fn col2im(&self, dcol: &[S], dims: (usize, usize, usize), dx: &mut [S]) {
        let (w, h, l) = dims;
        let (k, p, cin) = (self.kernel, self.padding as isize, self.in_channels);
        let ktaps = k * k * k * cin;
        let mut m = 0usize;
        for ox in 0..w as isize {
            for oy in 0..h as isize {
                for oz in 0..l as isize {
                    let crow = &dcol[m * ktaps..(m + 1) * ktaps];
                    let mut t = 0usize;
                    for dx_ in 0..k as isize {
                        let sx = ox + dx_ - p;
                        for dy in 0..k as isize {
                            let sy = oy + dy - p;
                            let row_ok = sx >= 0
                                && sx < w as isize
                                && sy >= 0
                                && sy < h as isize;
                            for dz in 0..k as isize {
                                let sz = oz + dz - p;
                                if row_ok && sz >= 0 && sz < l as isize {
                                    let src = ((sx as usize * h + sy as usize) * l
                                        + sz as usize)
                                        * cin;
                                    let grad = &crow[t * cin..(t + 1) * cin];
                                    for (o, &g) in dx[src..src + cin].iter_mut().zip(grad) {
                                        *o = *o + g;
                                    }
                                }
                                t += 1;
                            }
                        }
                    }
                    m += 1;
                }
            }
        }
    }

    pub fn named_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor<S>)> {
        vec![
            (format!("{prefix}.weight"), &mut self.weight),
            (format!("{prefix}.bias"), &mut self.bias),
        ]
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut Tensor<S>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;

    fn ident_conv(k: usize, c: usize) -> Conv3d<f64> {
        // Weight tensor set to pass channel c through the center tap.
        let mut rng = seeded_rng(0);
        let mut conv = Conv3d::new(c, c, k, &mut rng).unwrap();
        let cout = c;
        let w = conv.weight.data_mut();
        w.iter_mut().for_each(|v| *v = 0.0);
        let center = (k / 2 * k * k) + (k / 2 * k) + k / 2;
        for ci in 0..c {
            w[(center * c + ci) * cout + ci] = 1.0;
        }
        conv.bias.data_mut().iter_mut().for_each(|v| *v = 0.0);
        conv
    }

    #[test]
    fn center_tap_identity_preserves_input() {
        for k in [1, 3, 5] {
            let mut conv = ident_conv(k, 2);
            let x = Tensor::from_vec(
                &[1, 3, 3, 3, 2],
                (0..54).map(|i| i as f64 * 0.5 - 7.0).collect(),
            )
            .unwrap();
            let y = conv.forward(&x, false).unwrap();
            assert_eq!(y.shape(), x.shape());
            assert_eq!(y.data(), x.data(), "kernel {k}");
        }
    }

    #[test]
    fn all_ones_kernel_counts_neighbors() {
        // Ones input, ones 3x3x3 kernel: each output voxel equals the
        // number of in-bounds taps; the grid center sees all 27.
        let mut rng = seeded_rng(0);
        let mut conv = Conv3d::<f64>::new(1, 1, 3, &mut rng).unwrap();
        conv.weight.data_mut().iter_mut().for_each(|v| *v = 1.0);
        conv.bias.data_mut().iter_mut().for_each(|v| *v = 0.0);
        let x = Tensor::filled(&[1, 3, 3, 3, 1], 1.0);
        let y = conv.forward(&x, false).unwrap();
        let at = |i: usize, j: usize, kq: usize| y.data()[(i * 3 + j) * 3 + kq];
        assert_eq!(at(1, 1, 1), 27.0);
        assert_eq!(at(0, 0, 0), 8.0);
        assert_eq!(at(1, 1, 0), 18.0);
        assert_eq!(at(1, 0, 0), 12.0);
    }

    #[test]
    fn bias_reaches_every_voxel() {
        let mut rng = seeded_rng(1);
        let mut conv = Conv3d::<f64>::new(1, 2, 1, &mut rng).unwrap();
        conv.weight.data_mut().iter_mut().for_each(|v| *v = 0.0);
        conv.bias.data_mut().copy_from_slice(&[3.0, -1.0]);
        let x = Tensor::filled(&[2, 2, 2, 2, 1], 9.0);
        let y = conv.forward(&x, false).unwrap();
        for row in y.data().chunks(2) {
            assert_eq!(row, &[3.0, -1.0]);
        }
    }

    #[test]
    fn rejects_even_kernel_and_bad_shapes() {
        let mut rng = seeded_rng(0);
        assert!(Conv3d::<f64>::new(1, 1, 2, &mut rng).is_err());
        assert!(Conv3d::<f64>::new(0, 1, 3, &mut rng).is_err());
        let mut conv = Conv3d::<f64>::new(2, 1, 3, &mut rng).unwrap();
        let x = Tensor::zeros(&[1, 3, 3, 3, 1]);
        assert!(conv.forward(&x, false).is_err());
        let x = Tensor::zeros(&[3, 3, 3, 2]);
        assert!(conv.forward(&x, false).is_err());
    }

    #[test]
    fn backward_requires_forward_cache() {
        let mut rng = seeded_rng(0);
        let mut conv = Conv3d::<f64>::new(1, 1, 3, &mut rng).unwrap();
        let d = Tensor::zeros(&[1, 2, 2, 2, 1]);
        assert!(conv.backward(&d).is_err());
        let x = Tensor::filled(&[1, 2, 2, 2, 1], 1.0);
        conv.forward(&x, false).unwrap();
        // Eval-mode forward does not cache either.
        assert!(conv.backward(&d).is_err());
    }
}
