//! The assembled QoSDiff predictor: embedding bank, generator and
//! discriminator sharing one parameter store.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::aaim::{build_real_batch, AaimConfig, Discriminator, Generator};
use crate::autodiff::{ParamId, ParamStore};
use crate::data::QoSDataset;
use crate::delm::EmbeddingBank;
use crate::error::Result;
use crate::eval::QosPredictor;

/// Pairs scored per generator pass during prediction.
const PREDICT_CHUNK: usize = 2048;

#[derive(Clone, Debug)]
pub struct QoSDiff {
    pub config: AaimConfig,
    pub store: ParamStore,
    pub bank: EmbeddingBank,
    pub generator: Generator,
    pub discriminator: Discriminator,
}

impl QoSDiff {
    /// Builds a freshly initialized model for the entities and context of `ds`.
    pub fn new(ds: &QoSDataset, config: &AaimConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let bank = EmbeddingBank::new(
            &mut store,
            &ds.user_context,
            &ds.service_context,
            config.dim,
            config.heads,
            &mut rng,
        )?;
        let generator = Generator::new(&mut store, config, &mut rng)?;
        let discriminator = Discriminator::new(&mut store, config, &mut rng)?;
        Ok(QoSDiff {
            config: config.clone(),
            store,
            bank,
            generator,
            discriminator,
        })
    }

    /// Embedding tables, denoisers and generator: everything the generator
    /// phase updates.
    pub fn generator_params(&self) -> Vec<ParamId> {
        let mut p = self.bank.params();
        p.extend(self.generator.params());
        p
    }

    /// Trainable discriminator parameters; running statistics excluded.
    pub fn discriminator_params(&self) -> Vec<ParamId> {
        self.discriminator.params()
    }

    pub fn num_users(&self) -> usize {
        self.bank.users.count()
    }

    pub fn num_services(&self) -> usize {
        self.bank.services.count()
    }
}

impl QosPredictor for QoSDiff {
    /// Evaluation-mode predictions: refined vectors without noise, generator
    /// applied in parallel chunks.
    fn predict(&self, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
        let users = self.bank.users.refine_all(&self.store, &self.bank.schedule)?;
        let services = self.bank.services.refine_all(&self.store, &self.bank.schedule)?;
        let chunks = pairs
            .par_chunks(PREDICT_CHUNK)
            .map(|chunk| {
                let (u, s): (Vec<usize>, Vec<usize>) = chunk.iter().copied().unzip();
                let batch = build_real_batch(&u, &s, &users, &services)?;
                self.generator.predict(&self.store, &batch)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(chunks.concat())
    }
}
