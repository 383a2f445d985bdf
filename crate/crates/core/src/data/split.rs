use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dataset::{QoSDataset, Triplet};
use crate::error::{Error, Result};

/// Validation share of the full matrix.
pub const VALIDATION_FRACTION: f64 = 0.05;

/// `⌊fraction · total⌋`, robust to products that land a rounding error below
/// an integer.
pub fn floor_count(fraction: f64, total: usize) -> usize {
    let x = fraction * total as f64;
    (x + x.abs() * 1e-12).floor().max(0.0) as usize
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Section {
    Train,
    Val,
    Test,
}

impl Section {
    pub fn as_str(self) -> &'static str {
        match self {
            Section::Train => "train",
            Section::Val => "val",
            Section::Test => "test",
        }
    }
}

/// Disjoint train/validation/test index lists into a dataset's triplets.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub density: f64,
    pub seed: u64,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn indices(&self, section: Section) -> &[usize] {
        match section {
            Section::Train => &self.train,
            Section::Val => &self.val,
            Section::Test => &self.test,
        }
    }

    pub fn triplets(&self, ds: &QoSDataset, section: Section) -> Vec<Triplet> {
        ds.select(self.indices(section))
    }

    /// Audit manifest with one `index,section` row per triplet, in index order.
    pub fn to_manifest_csv(&self) -> String {
        let mut rows: Vec<(usize, Section)> = Vec::new();
        for s in [Section::Train, Section::Val, Section::Test] {
            rows.extend(self.indices(s).iter().map(|&i| (i, s)));
        }
        rows.sort_by_key(|r| r.0);
        let mut out = String::from("index,section\n");
        for (i, s) in rows {
            out.push_str(&format!("{i},{}\n", s.as_str()));
        }
        out
    }
}

/// Permutes the observed entries once and prefix-partitions them into
/// `⌊density·mn⌋` training, `⌊0.05·mn⌋` validation and the rest test.
pub fn make_split(ds: &QoSDataset, density: f64, seed: u64) -> Result<Split> {
    make_split_with(ds, density, VALIDATION_FRACTION, seed)
}

pub fn make_split_with(
    ds: &QoSDataset,
    density: f64,
    val_fraction: f64,
    seed: u64,
) -> Result<Split> {
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "density must lie in (0, 1], got {density}"
        )));
    }
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::InvalidArgument(format!(
            "validation fraction must lie in [0, 1), got {val_fraction}"
        )));
    }
    let mn = ds.matrix_size();
    let n_train = floor_count(density, mn);
    let n_val = floor_count(val_fraction, mn);
    let available = ds.len();
    if n_train + n_val > available {
        return Err(Error::InsufficientObservations {
            required: n_train + n_val,
            available,
        });
    }
    let mut perm: Vec<usize> = (0..available).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    perm.shuffle(&mut rng);
    let test = perm.split_off(n_train + n_val);
    let val = perm.split_off(n_train);
    Ok(Split {
        density,
        seed,
        train: perm,
        val,
        test,
    })
}

/// Test triplets with a subset of identities replaced uniformly at random.
#[derive(Clone, Debug, PartialEq)]
pub struct CorruptedTestSet {
    pub noise_ratio: f64,
    /// Positions within the test list that were re-identified, ascending.
    pub perturbed: Vec<usize>,
    pub triplets: Vec<Triplet>,
}

/// Re-identifies `⌊p/100 · N_test⌋` test triplets with uniform users and
/// services while keeping every value.
pub fn corrupt_test(split: &Split, ds: &QoSDataset, p: f64, seed: u64) -> Result<CorruptedTestSet> {
    corrupt_triplets(&split.triplets(ds, Section::Test), ds.num_users, ds.num_services, p, seed)
}

pub fn corrupt_triplets(
    clean: &[Triplet],
    num_users: usize,
    num_services: usize,
    p: f64,
    seed: u64,
) -> Result<CorruptedTestSet> {
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::InvalidArgument(format!(
            "noise ratio must lie in [0, 100], got {p}"
        )));
    }
    let mut triplets = clean.to_vec();
    let count = floor_count(p / 100.0, triplets.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positions: Vec<usize> = (0..triplets.len()).collect();
    positions.shuffle(&mut rng);
    positions.truncate(count);
    positions.sort_unstable();
    for &pos in &positions {
        triplets[pos].user = rng.random_range(0..num_users);
        triplets[pos].service = rng.random_range(0..num_services);
    }
    Ok(CorruptedTestSet {
        noise_ratio: p,
        perturbed: positions,
        triplets,
    })
}
