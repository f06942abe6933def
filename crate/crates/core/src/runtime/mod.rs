//! Quantized CNN inference on the simulated machine.

pub mod exec;
pub mod fixed;
pub mod model;
pub mod oracle;
pub mod plan;
pub mod toy;

pub use exec::{run_model, Machine, RunOptions, RunOutput};
pub use fixed::{quantize, BatchNorm, FixedAffine};
pub use model::{Layer, LayerKind, LayerSpec, ModelSpec, Network, Shape, TensorFile};
pub use plan::{plan_mapping, ArchConfig, MappingPlan};
pub use toy::{toy_model, Toy, ToyConfig};
