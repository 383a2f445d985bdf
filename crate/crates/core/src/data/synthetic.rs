//! Generated datasets for tests, benchmarks and demos.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::dataset::{ContextTable, QoSDataset, Triplet};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub num_users: usize,
    pub num_services: usize,
    pub rank: usize,
    /// Probability that a cell is observed.
    pub observed: f64,
    /// Vocabulary sizes (excluding the reserved index) of user attributes.
    pub user_attrs: Vec<usize>,
    pub service_attrs: Vec<usize>,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_users: 40,
            num_services: 60,
            rank: 3,
            observed: 0.6,
            user_attrs: vec![4],
            service_attrs: vec![5, 3],
            noise: 0.05,
            seed: 7,
        }
    }
}

/// Positive low-rank matrix with attribute-correlated factors and
/// multiplicative noise, observed at random.
pub fn low_rank(spec: &SyntheticSpec) -> Result<QoSDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let context = |count: usize, vocab: &[usize], rng: &mut ChaCha8Rng| {
        let rows: Vec<Vec<usize>> = (0..count)
            .map(|_| vocab.iter().map(|&v| rng.random_range(1..=v.max(1))).collect())
            .collect();
        ContextTable {
            fields: (0..vocab.len()).map(|k| format!("attr{k}")).collect(),
            rows,
            vocab_sizes: vocab.iter().map(|v| v.max(&1) + 1).collect(),
        }
    };
    let uctx = context(spec.num_users, &spec.user_attrs, &mut rng);
    let sctx = context(spec.num_services, &spec.service_attrs, &mut rng);

    // Factors are partly driven by the first attribute so context carries
    // signal.
    let factor = |ctx: &ContextTable, count: usize, rng: &mut ChaCha8Rng| {
        let groups = ctx.vocab_sizes.first().copied().unwrap_or(1);
        let centers: Vec<Vec<f64>> = (0..groups)
            .map(|_| (0..spec.rank).map(|_| normal.sample(rng)).collect())
            .collect();
        (0..count)
            .map(|e| {
                let g = ctx.rows[e].first().copied().unwrap_or(0);
                (0..spec.rank)
                    .map(|r| 0.7 * centers[g][r] + 0.5 * normal.sample(rng))
                    .collect::<Vec<f64>>()
            })
            .collect::<Vec<_>>()
    };
    let uf = factor(&uctx, spec.num_users, &mut rng);
    let sf = factor(&sctx, spec.num_services, &mut rng);

    let mut triplets = Vec::new();
    for (u, pu) in uf.iter().enumerate() {
        for (s, qs) in sf.iter().enumerate() {
            if rng.random::<f64>() >= spec.observed {
                continue;
            }
            let dot: f64 = pu.iter().zip(qs).map(|(a, b)| a * b).sum();
            let noise = spec.noise * normal.sample(&mut rng);
            let value = (0.4 * dot / (spec.rank as f64).sqrt() + noise).exp();
            triplets.push(Triplet {
                user: u,
                service: s,
                value,
            });
        }
    }
    QoSDataset::new(
        "synthetic",
        spec.num_users,
        spec.num_services,
        triplets,
        uctx,
        sctx,
    )
}
