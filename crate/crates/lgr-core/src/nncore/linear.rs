//! Fully connected layer applied along the last axis.

use rand_chacha::ChaCha8Rng;

use super::gemm::{gemm_add, gemm_at_add};
use super::init::kaiming_uniform;
use super::tensor::Tensor;
use crate::{invalid_arg, invalid_state, Result, Scalar};

/// `y = x W + b` with `W` stored `[in, out]` row-major. Leading axes pass
/// through, so the same layer serves `[N, C]` point features and
/// `[P, K, C]` per-member cluster features.
pub struct Linear<S: Scalar> {
    weight: Tensor<S>,
    bias: Tensor<S>,
    in_features: usize,
    out_features: usize,
    cache: Option<Tensor<S>>,
}

impl<S: Scalar> Linear<S> {
    pub fn new(in_features: usize, out_features: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if in_features == 0 || out_features == 0 {
            return Err(invalid_arg!("linear dimensions must be positive"));
        }
        let mut weight = Tensor::from_vec(
            &[in_features, out_features],
            kaiming_uniform(rng, in_features, in_features * out_features),
        )?;
        weight.enable_grad();
        Ok(Linear {
            weight,
            bias: Tensor::param(&[out_features]),
            in_features,
            out_features,
            cache: None,
        })
    }

    pub fn in_features(&self) -> usize {
        self.in_features
    }

    pub fn out_features(&self) -> usize {
        self.out_features
    }

    /// Zeroes weights and bias; used for heads that must start as the
    /// identity contribution (votes start at their seeds).
    pub fn zero_init(&mut self) {
        self.weight.data_mut().iter_mut().for_each(|v| *v = S::zero());
        self.bias.data_mut().iter_mut().for_each(|v| *v = S::zero());
    }

    pub fn forward(&mut self, x: &Tensor<S>, train: bool) -> Result<Tensor<S>> {
        let (rows, cols) = x.as_rows();
        if cols != self.in_features {
            return Err(invalid_arg!(
                "linear input has {cols} features, layer expects {}",
                self.in_features
            ));
        }
        let mut out_shape = x.shape().to_vec();
        *out_shape.last_mut().unwrap() = self.out_features;
        let mut out = Tensor::zeros(&out_shape);
        {
            let od = out.data_mut();
            for row in 0..rows {
                od[row * self.out_features..(row + 1) * self.out_features]
                    .copy_from_slice(self.bias.data());
            }
        }
        gemm_add(
            x.data(),
            self.weight.data(),
            out.data_mut(),
            rows,
            self.in_features,
            self.out_features,
        );
        self.cache = if train { Some(x.clone()) } else { None };
        Ok(out)
    }

    pub fn backward(&mut self, dout: &Tensor<S>) -> Result<Tensor<S>> {
        let x = self
            .cache
            .take()
            .ok_or_else(|| invalid_state!("linear backward without cached forward"))?;
        let (rows, _) = x.as_rows();
        let (drows, dcols) = dout.as_rows();
        if drows != rows || dcols != self.out_features {
            return Err(invalid_state!(
                "linear upstream gradient shape {:?} does not match forward output",
                dout.shape()
            ));
        }
        {
            let bg = self.bias.grad_mut();
            for row in dout.data().chunks_exact(self.out_features) {
                for (g, &d) in bg.iter_mut().zip(row) {
                    *g = *g + d;
                }
            }
        }
        gemm_at_add(
            x.data(),
            dout.data(),
            self.weight.grad_mut(),
            rows,
            self.in_features,
            self.out_features,
        );
        let mut wt = vec![S::zero(); self.in_features * self.out_features];
        for i in 0..self.in_features {
            for o in 0..self.out_features {
                wt[o * self.in_features + i] = self.weight.data()[i * self.out_features + o];
            }
        }
        let mut dx = Tensor::zeros(x.shape());
        gemm_add(
            dout.data(),
            &wt,
            dx.data_mut(),
            rows,
            self.out_features,
            self.in_features,
        );
        Ok(dx)
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
