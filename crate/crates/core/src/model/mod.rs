//! Column-embedding transformer for binary traffic classification.

mod config;
mod io;
mod network;

pub use config::ModelConfig;
pub use io::{Manifest, ModelBundle, TensorEntry, MODEL_FORMAT_VERSION};
pub use network::{
    bce_loss, ColumnEmbeddings, ForwardCache, Introspection, ItctModel, Mode, ModelInput, StageSummary,
    TransformerBlock, PROB_EPS,
};
