//! Shared fixtures for the kernel benchmarks.

use qosdiff_core::data::make_split;
use qosdiff_core::data::synthetic::{low_rank, SyntheticSpec};
use qosdiff_core::{QoSDataset, Section, Triplet};

/// Normalized low-rank dataset with the default attribute layout.
pub fn dataset(num_users: usize, num_services: usize, observed: f64) -> QoSDataset {
    low_rank(&SyntheticSpec {
        num_users,
        num_services,
        observed,
        ..SyntheticSpec::default()
    })
    .expect("valid synthetic spec")
    .normalize()
}

/// Training and test triplets at `density`.
pub fn train_test(ds: &QoSDataset, density: f64, seed: u64) -> (Vec<Triplet>, Vec<Triplet>) {
    let split = make_split(ds, density, seed).expect("enough observations");
    (split.triplets(ds, Section::Train), split.triplets(ds, Section::Test))
}
