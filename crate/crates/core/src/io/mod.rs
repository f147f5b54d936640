//! External formats: IDX datasets, `KFCCKPT` checkpoints, run configuration
//! and report tables.

pub mod checkpoint;
pub mod config;
pub mod idx;
pub mod report;

pub use checkpoint::{
    check_topology, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, Meta,
};
pub use config::{parse_config, RunConfig};
pub use idx::{load_mnist, parse_idx, read_idx, write_idx, IdxFile, Mnist, MNIST_FILES};
pub use report::{emit_report, emit_report_tsv, human_count, layer_params, ReportRow};
