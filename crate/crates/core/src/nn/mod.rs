//! Minimal tensor and reverse-mode autodiff engine.

mod adam;
pub mod gradcheck;
mod graph;
pub mod ops;
mod param;
mod scalar;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use graph::{BnStats, BnUpdate, Gradients, Graph, Mode, Var, BN_EPS};
pub use ops::PoolSpec;
pub use param::{Buffer, BufferId, ParamId, ParamStore, Parameter};
pub use scalar::Real;
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("duplicate parameter name `{0}`")]
    DuplicateName(String),
}

/// Flush-to-zero and denormals-are-zero for the calling thread; a no-op off
/// x86-64.
#[allow(deprecated)]
pub fn flush_denormals() {
    #[cfg(all(target_arch = "x86_64", target_feature = "sse"))]
    // SAFETY: only the FTZ (bit 15) and DAZ (bit 6) flags of MXCSR change.
    unsafe {
        use std::arch::x86_64::{_mm_getcsr, _mm_setcsr};
        _mm_setcsr(_mm_getcsr() | 0x8040);
    }
}
