//! Max pooling over the middle axis of `[B, M, C]` tensors.
//!
//! Covers both uses in the network: global spatial pooling of rendered
//! grids (`[R, W*H*L, C]`) and pooling over region members in proposal
//! clusters (`[P, K, C]`). Ties keep the lowest pooled index so gradients
//! route deterministically.

use super::tensor::Tensor;
use crate::{invalid_arg, invalid_state, Result, Scalar};

/// Argmax record for the backward pass.
pub struct MaxPoolCache {
    argmax: Vec<usize>,
    input_shape: Vec<usize>,
}

/// Folds `x` as `[B, M, C]` (B = first axis, C = last axis, M = the rest)
/// and maxes over M. Returns `[B, C]` plus the routing cache.
pub fn max_pool_middle<S: Scalar>(x: &Tensor<S>) -> Result<(Tensor<S>, MaxPoolCache)> {
    let s = x.shape();
    if s.len() < 3 {
        return Err(invalid_arg!("max pool expects at least 3 axes, got {:?}", s));
    }
    let b = s[0];
    let c = s[s.len() - 1];
    let m: usize = s[1..s.len() - 1].iter().product();
    if m == 0 || c == 0 {
        return Err(invalid_arg!("max pool axis is empty: {:?}", s));
    }
    let mut out = Tensor::zeros(&[b, c]);
    let mut argmax = vec![0usize; b * c];
    let xd = x.data();
    let od = out.data_mut();
    for bi in 0..b {
        let base = bi * m * c;
        od[bi * c..(bi + 1) * c].copy_from_slice(&xd[base..base + c]);
        for mi in 1..m {
            let row = &xd[base + mi * c..base + (mi + 1) * c];
            for ch in 0..c {
                if row[ch] > od[bi * c + ch] {
                    od[bi * c + ch] = row[ch];
                    argmax[bi * c + ch] = mi;
                }
            }
        }
    }
    Ok((out, MaxPoolCache { argmax, input_shape: s.to_vec() }))
}

/// Routes `dout[B, C]` back to the argmax positions.
pub fn max_pool_middle_backward<S: Scalar>(
    cache: &MaxPoolCache,
    dout: &Tensor<S>,
) -> Result<Tensor<S>> {
    let s = &cache.input_shape;
    let b = s[0];
    let c = s[s.len() - 1];
    let m: usize = s[1..s.len() - 1].iter().product();
    if dout.shape() != [b, c] {
        return Err(invalid_state!(
            "max pool upstream gradient shape {:?}, expected [{b}, {c}]",
            dout.shape()
        ));
    }
    let mut dx = Tensor::zeros(s);
    let dd = dx.data_mut();
    for bi in 0..b {
        for ch in 0..c {
            let mi = cache.argmax[bi * c + ch];
            dd[(bi * m + mi) * c + ch] =
                dd[(bi * m + mi) * c + ch] + dout.data()[bi * c + ch];
        }
    }
    Ok(dx)
}
