//! Concrete problems.

pub mod enc_dec;
pub mod idx;
pub mod mlp;
pub mod qp;
