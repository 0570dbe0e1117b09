//! Minimal dense-tensor layer stack with explicit backward passes.
//!
//! Layers are plain structs that own their parameters and cache whatever
//! the backward pass needs during a training-mode forward. There is no
//! graph or tape: composites call `forward` in order and `backward` in
//! reverse order, threading gradient tensors by hand. Activations are
//! stored channels-last (`[.., W, H, L, C]` for grids, `[N, C]` for point
//! sets) so per-channel loops run over contiguous memory.

mod adam;
mod checkpoint;
mod conv;
mod gemm;
mod init;
mod linear;
mod norm;
mod pool;
mod relu;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{load_state, save_state, StateEntry};
pub use conv::Conv3d;
pub use gemm::{gemm_add, gemm_at_add};
pub use init::kaiming_uniform;
pub use linear::Linear;
pub use norm::BatchNorm;
pub use pool::{max_pool_middle, max_pool_middle_backward, MaxPoolCache};
pub use relu::Relu;
pub use tensor::Tensor;
