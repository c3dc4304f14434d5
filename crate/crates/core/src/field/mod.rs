//! The coordinate network, its optimizer and checkpoint format.

mod adam;
mod checkpoint;
mod mlp;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, MANIFEST};
pub use mlp::{
    parameter_count, FieldBatch, FieldOutput, FieldOutputs, FieldTopology, ForwardCache, MlpField,
    SKIP_LAYER, TRUNK_DEPTH,
};
