//! Run configuration, checkpoints, the dataset container and surface field
//! files. All binary formats are little-endian with a CRC32 per payload.

mod bytes;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod field;

pub use checkpoint::{Checkpoint, NamedTensor, TensorData};
pub use config::{config_hash, hex, ClipSettings, EvalSettings, LagSettings, RunConfig, VsmaeSettings};
pub use dataset::{write_dataset, DatasetReader};
pub use field::{read_field, write_field};
