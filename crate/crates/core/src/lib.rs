//! Functional simulator for a NAND-SPIN processing-in-MRAM accelerator.

pub mod cost;
pub mod device;
pub mod error;
pub mod meter;
pub mod primitives;
pub mod runtime;
pub mod schedule;
pub mod subarray;

pub use cost::{Category, CostLedger, CostParams, LaneId, OpKind, Report};
pub use device::{ControlSignals, DeviceOp, MtjState, NandSpinDevice, ProgramCheck};
pub use error::{Error, Result};
pub use meter::{Meter, Recorder, TraceRecord};
pub use subarray::{BitRow, Routing, Subarray, SubarrayGeometry};
pub use primitives::{BitPlaneTensor, FixedPointTensor, Signedness};
pub use runtime::{run_model, ArchConfig, ModelSpec, Network, RunOptions, RunOutput};
