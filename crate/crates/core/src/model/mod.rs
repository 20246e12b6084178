//! The multi-field ranking network, its configuration and checkpoints.

mod checkpoint;
mod config;
mod network;

pub use checkpoint::{from_json, load_checkpoint, save_checkpoint, to_json};
pub use config::{allowed_strides, ConvConfig, FieldConfig, ModelConfig, QueryMode, Scoring};
pub use network::{
    aggregate_field, field_dropout, DocRepr, FieldInput, Mode, Model, Pass, PreparedDocument,
    PreparedQuery,
};
