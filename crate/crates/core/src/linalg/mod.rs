//! Dense linear algebra substrate: matrices, Kronecker machinery, SVD and the
//! seeded random stream.

mod kron;
mod matrix;
mod rng;
mod svd;

pub use kron::{kron, rearrange, unrearrange, unvec, vec};
pub use matrix::Matrix;
pub use rng::Rng;
pub use svd::{svd_full, svd_truncated, SvdResult, POWER_MAX_ITERS, POWER_TOL};
