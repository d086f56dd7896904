//! Loading, standardization, partitioning and synthetic generation of
//! tabular record data.

mod load;
mod partition;
mod schema;
mod synth;

pub use load::{load_links, load_records, load_records_into, write_links, write_records, TextFormat};
pub use partition::{partition, LinkedDataset, Splits};
pub use schema::{
    standardize, AttributeId, EntityId, LinkedPairSet, Provenance, Record, RecordSet, Schema,
    ValueDictionary, ValueId,
};
pub use synth::{
    generate_synthetic, AttributeSpec, Corruption, EvolutionRule, SynthConfig, SyntheticData,
    Vocabulary,
};
pub(crate) use synth::toml_error;
