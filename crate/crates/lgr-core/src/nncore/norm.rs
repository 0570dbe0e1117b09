//! Batch normalization over the channel (last) axis.

use super::tensor::Tensor;
use crate::{invalid_arg, invalid_state, Result, Scalar};

/// Per-channel batch norm. Works on any channels-last tensor by folding
/// all leading axes into rows: grids normalize over batch and spatial
/// positions, point sets over points.
///
/// Batch statistics use the biased variance (divide by row count), both
/// for normalization and for the running averages; the two therefore
/// agree in expectation. Running averages update as
/// `running = momentum * running + (1 - momentum) * batch`.
pub struct BatchNorm<S: Scalar> {
    gamma: Tensor<S>,
    beta: Tensor<S>,
    running_mean: Tensor<S>,
    running_var: Tensor<S>,
    channels: usize,
    momentum: f64,
    eps: f64,
    frozen: bool,
    cache: Option<Cache<S>>,
}

struct Cache<S: Scalar> {
    xhat: Vec<S>,
    inv_std: Vec<S>,
    rows: usize,
    frozen: bool,
}

impl<S: Scalar> BatchNorm<S> {
    pub fn new(channels: usize) -> Result<Self> {
        if channels == 0 {
            return Err(invalid_arg!("batch norm needs at least one channel"));
        }
        Ok(BatchNorm {
            gamma: {
                let mut g = Tensor::filled(&[channels], S::one());
                g.enable_grad();
                g
            },
            beta: Tensor::param(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::filled(&[channels], S::one()),
            channels,
            momentum: 0.9,
            eps: 1e-5,
            frozen: false,
            cache: None,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Freeze the running statistics: from now on train-mode forwards
    /// normalize with the stored running averages (like eval mode) instead
    /// of batch statistics, and leave the running averages untouched.
    /// Gamma and beta stay trainable. Normalizing every scene with the same
    /// constants keeps the train-time computation identical to the
    /// eval-time one, which per-scene batch statistics cannot guarantee.
    pub fn freeze_stats(&mut self) {
        self.frozen = true;
    }

    fn check_input(&self, x: &Tensor<S>) -> Result<usize> {
        let (rows, cols) = x.as_rows();
        if cols != self.channels {
            return Err(invalid_arg!(
                "batch norm input has {cols} channels, layer expects {}",
                self.channels
            ));
        }
        if rows == 0 {
            return Err(invalid_arg!("batch norm input has no rows"));
        }
        Ok(rows)
    }

    /// Train mode normalizes with batch statistics, updates the running
    /// averages, and caches for backward. Eval mode uses the running
    /// averages and caches nothing.
    pub fn forward(&mut self, x: &Tensor<S>, train: bool) -> Result<Tensor<S>> {
        let rows = self.check_input(x)?;
        let c = self.channels;
        let xd = x.data();
        let mut out = Tensor::zeros(x.shape());

        let use_batch_stats = train && !self.frozen;
        let (mean, var) = if use_batch_stats {
            // Two-pass moments in f64: deterministic and stable even for
            // f32 activations over large row counts.
            let mut mean = vec![0.0f64; c];
            for row in xd.chunks_exact(c) {
                for (m, &v) in mean.iter_mut().zip(row) {
                    *m += v.as_f64();
                }
            }
            mean.iter_mut().for_each(|m| *m /= rows as f64);
            let mut var = vec![0.0f64; c];
            for row in xd.chunks_exact(c) {
                for ((vv, &v), m) in var.iter_mut().zip(row).zip(&mean) {
                    let d = v.as_f64() - *m;
                    *vv += d * d;
                }
            }
            var.iter_mut().for_each(|v| *v /= rows as f64);
            let (rm, rv) = (self.running_mean.data_mut(), self.running_var.data_mut());
            for ch in 0..c {
                rm[ch] = S::of(self.momentum * rm[ch].as_f64() + (1.0 - self.momentum) * mean[ch]);
                rv[ch] = S::of(self.momentum * rv[ch].as_f64() + (1.0 - self.momentum) * var[ch]);
            }
            (mean, var)
        } else {
            (
                self.running_mean.data().iter().map(|v| v.as_f64()).collect(),
                self.running_var.data().iter().map(|v| v.as_f64()).collect(),
            )
        };

        let mean_s: Vec<S> = mean.iter().map(|&m| S::of(m)).collect();
        let inv_std: Vec<S> =
            var.iter().map(|&v| S::of(1.0 / (v + self.eps).sqrt())).collect();
        let (gd, bd) = (self.gamma.data(), self.beta.data());
        let mut xhat = if train { vec![S::zero(); xd.len()] } else { Vec::new() };
        for (r, (row, orow)) in
            xd.chunks_exact(c).zip(out.data_mut().chunks_exact_mut(c)).enumerate()
        {
            for ch in 0..c {
                let xh = (row[ch] - mean_s[ch]) * inv_std[ch];
                if train {
                    xhat[r * c + ch] = xh;
                }
                orow[ch] = gd[ch] * xh + bd[ch];
            }
        }
        self.cache = if train {
            Some(Cache { xhat, inv_std, rows, frozen: self.frozen })
        } else {
            None
        };
        Ok(out)
    }

    pub fn backward(&mut self, dout: &Tensor<S>) -> Result<Tensor<S>> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| invalid_state!("batch norm backward without train-mode forward"))?;
        let c = self.channels;
        let rows = cache.rows;
        if dout.numel() != rows * c {
            return Err(invalid_state!(
                "batch norm upstream gradient shape {:?} does not match forward input",
                dout.shape()
            ));
        }
        let dd = dout.data();
        // Channel sums of dy and dy * xhat, in f64 for stability.
        let mut sum_dy = vec![0.0f64; c];
        let mut sum_dy_xhat = vec![0.0f64; c];
        for (row, xrow) in dd.chunks_exact(c).zip(cache.xhat.chunks_exact(c)) {
            for ch in 0..c {
                let dy = row[ch].as_f64();
                sum_dy[ch] += dy;
                sum_dy_xhat[ch] += dy * xrow[ch].as_f64();
            }
        }
        {
            let gg = self.gamma.grad_mut();
            for ch in 0..c {
                gg[ch] = gg[ch] + S::of(sum_dy_xhat[ch]);
            }
            let bg = self.beta.grad_mut();
            for ch in 0..c {
                bg[ch] = bg[ch] + S::of(sum_dy[ch]);
            }
        }
        let gd = self.gamma.data();
        let mut dx = Tensor::zeros(dout.shape());
        if cache.frozen {
            // Mean and variance were constants, so the input gradient is the
            // plain affine chain without the batch-coupling terms.
            for (row, orow) in dd.chunks_exact(c).zip(dx.data_mut().chunks_exact_mut(c)) {
                for ch in 0..c {
                    orow[ch] = gd[ch] * cache.inv_std[ch] * row[ch];
                }
            }
            return Ok(dx);
        }
        let n = rows as f64;
        let mean_dy: Vec<S> = sum_dy.iter().map(|&v| S::of(v / n)).collect();
        let mean_dy_xhat: Vec<S> = sum_dy_xhat.iter().map(|&v| S::of(v / n)).collect();
        for ((row, xrow), orow) in dd
            .chunks_exact(c)
            .zip(cache.xhat.chunks_exact(c))
            .zip(dx.data_mut().chunks_exact_mut(c))
        {
            for ch in 0..c {
                orow[ch] = gd[ch]
                    * cache.inv_std[ch]
                    * (row[ch] - mean_dy[ch] - xrow[ch] * mean_dy_xhat[ch]);
            }
        }
        Ok(dx)
    }

    pub fn named_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor<S>)> {
        vec![
            (format!("{prefix}.gamma"), &mut self.gamma),
            (format!("{prefix}.beta"), &mut self.beta),
            (format!("{prefix}.running_mean"), &mut self.running_mean),
            (format!("{prefix}.running_var"), &mut self.running_var),
        ]
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut Tensor<S>> {
        vec![&mut self.gamma, &mut self.beta]
    }
}
