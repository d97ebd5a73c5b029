//! Command-line layer over the core crate: dataset loading, the small
//! training nets, the optimizers, and the verification subcommands.

pub mod compare;
pub mod data;
pub mod model;
pub mod optim;
pub mod probe;
pub mod train;

pub use compare::{compare, write_artifacts, Comparison};
pub use data::{gen_synthetic, load_cifar10, DataError, Dataset, SynthSpec};
pub use model::SpikeNet;
pub use optim::{OptimKind, Optimizer};
pub use probe::{run_gradcheck, run_probe, ProbeMode};
pub use train::{train, DatasetKind, FinalReport, Precision, RunConfig};
