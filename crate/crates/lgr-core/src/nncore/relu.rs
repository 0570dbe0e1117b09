//! Rectified linear activation.

use super::tensor::Tensor;
use crate::{invalid_state, Result, Scalar};

/// Elementwise max(x, 0). The derivative at exactly 0 is taken as 0.
#[derive(Default)]
pub struct Relu {
    mask: Option<Vec<bool>>,
}

impl Relu {
    pub fn new() -> Self {
        Relu { mask: None }
    }

    pub fn forward<S: Scalar>(&mut self, x: &Tensor<S>, train: bool) -> Tensor<S> {
        let mut out = Tensor::zeros(x.shape());
        let od = out.data_mut();
        if train {
            let mut mask = vec![false; x.numel()];
            for (i, &v) in x.data().iter().enumerate() {
                if v > S::zero() {
                    od[i] = v;
                    mask[i] = true;
                }
            }
            self.mask = Some(mask);
        } else {
            for (o, &v) in od.iter_mut().zip(x.data()) {
                if v > S::zero() {
                    *o = v;
                }
            }
            self.mask = None;
        }
        out
    }

    pub fn backward<S: Scalar>(&mut self, dout: &Tensor<S>) -> Result<Tensor<S>> {
        let mask = self
            .mask
            .take()
            .ok_or_else(|| invalid_state!("relu backward without train-mode forward"))?;
        if mask.len() != dout.numel() {
            return Err(invalid_state!(
                "relu upstream gradient has {} elements, forward saw {}",
                dout.numel(),
                mask.len()
            ));
        }
        let mut dx = Tensor::zeros(dout.shape());
        let dd = dx.data_mut();
        for (i, (&d, &m)) in dout.data().iter().zip(&mask).enumerate() {
            if m {
                dd[i] = d;
            }
        }
        Ok(dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamps_and_gates() {
        let mut relu = Relu::new();
        let x = Tensor::from_vec(&[4], vec![-1.0, 0.0, 2.0, -0.5]).unwrap();
        let y = relu.forward(&x, true);
        assert_eq!(y.data(), &[0.0, 0.0, 2.0, 0.0]);
        let d = Tensor::filled(&[4], 3.0);
        let dx = relu.backward(&d).unwrap();
        assert_eq!(dx.data(), &[0.0, 0.0, 3.0, 0.0]);
        // Cache is consumed.
        assert!(relu.backward(&d).is_err());
    }
}
