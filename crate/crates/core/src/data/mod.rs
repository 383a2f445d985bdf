//! Dataset ingestion, normalization, splitting and test-set corruption.

mod dataset;
mod loaders;
mod split;
pub mod synthetic;

pub use dataset::{ContextTable, QoSDataset, Triplet, Vocabulary};
pub use loaders::{load_triplets_csv, load_wsdream, LoadReport};
pub use split::{
    corrupt_test, corrupt_triplets, floor_count, make_split, make_split_with, CorruptedTestSet,
    Section, Split, VALIDATION_FRACTION,
};
