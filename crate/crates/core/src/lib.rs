//! Memory-efficient cross-entropy for large item catalogs.
//!
//! The crate provides two fused loss kernels, blockwise linear + log-sum-exp
//! over the full catalog ([`cce`]) and over per-row sampled items ([`ccem`]),
//! together with naive reference losses ([`oracle`]), negative samplers,
//! and a logical memory accountant. It needs only `alloc`.
#![no_std]
extern crate alloc;

pub mod accountant;
pub mod cce;
pub mod ccem;
pub mod error;
pub mod exec;
pub mod inds;
pub mod lse;
pub mod matrix;
pub mod memory;
pub mod oracle;
pub mod real;
pub mod rng;
pub mod sampler;

pub use accountant::{Accountant, MemClass, MemoryReport};
pub use cce::{cce_backward, cce_forward, CceConfig, CceGrad};
pub use ccem::{ccem_backward, ccem_backward_weighted, ccem_forward, estimate_flops, FlopEstimate, LossBackend};
pub use error::{Error, Result};
pub use exec::{Env, Executor, Sequential};
pub use inds::NegIndexMatrix;
pub use lse::{logsumexp_row, online_lse_update, LseState};
pub use matrix::{dot, matmul_block, DenseMatrix, MatrixView};
pub use memory::{peak_bytes, MemoryModel, PeakBytes};
pub use oracle::{
    bce_forward_backward, ce_full_backward, ce_full_forward, ce_sampled_backward, ce_sampled_forward, GradPair,
    LossOutput,
};
pub use real::Real;
pub use rng::Rng;
pub use sampler::{sample_popularity, sample_uniform, PopularitySampler, PopularityTable};
