//! Feed-forward training: layers, softmax cross-entropy, SGD/Adam and the
//! epoch loop with minimum-validation snapshots.

pub mod gradcheck;
mod layer;
mod loss;
mod model;
mod optim;
pub mod presets;
mod trainer;

pub use layer::Layer;
pub use loss::{dropout_forward, softmax_xent};
pub use model::{parse_factor_shape, Model, Trace};
pub use optim::{OptimState, OptimizerKind};
pub use presets::{GroupSpec, ModelConfig, Preset};
pub use trainer::{
    error_count, evaluate, evaluate_partitioned, streams, train, Dataset, EpochStats, TrainConfig, TrainOutcome,
};
