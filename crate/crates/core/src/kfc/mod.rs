//! Kronecker fully-connected layers: structure, initialization, factored
//! evaluation and cost accounting.

mod accounting;
mod eval;
mod spec;
mod weights;

pub use accounting::{count_macs, count_params, FlopReport};
pub use eval::{backward, forward, forward_counted, KfcGrads};
pub use spec::{near_sqrt_divisor, pad_dims, FactorShape, Formulation, InputKind, KfcGroup, KfcSpec};
pub use weights::{init_bound, init_weights, materialize, KfcWeights, KronTerm};
