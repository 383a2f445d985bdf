//! Diffusion-refined embeddings.
//!
//! Every identity and attribute embedding row is treated as the noisy state
//! after one forward diffusion step whose noise variance matches the Kaiming
//! initialization variance `2/d`. A per-table attention denoiser predicts the
//! noise, one reverse step recovers a refined row, and the refined components
//! of an entity are summed and layer-normalized.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autodiff::{gaussian, Graph, ParamId, ParamStore, Tensor, Var};
use crate::data::ContextTable;
use crate::error::{Error, Result};
use crate::nn::{LayerNorm, Linear, Mode, MultiHeadAttention};

/// Epsilon of the aggregation layer norm. Kept tiny so normalized vectors
/// have unit variance to within 1e-6 even for small-norm inputs.
pub const AGGREGATE_LN_EPS: f64 = 1e-12;

/// Single-step noise schedule `β₁ = 2/d`, `α₁ = 1 - 2/d`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiffusionSchedule {
    pub dim: usize,
    pub beta: f64,
    pub alpha: f64,
}

impl DiffusionSchedule {
    pub fn new(dim: usize) -> Result<Self> {
        if dim <= 2 {
            return Err(Error::DegenerateSchedule(dim));
        }
        let beta = 2.0 / dim as f64;
        Ok(DiffusionSchedule {
            dim,
            beta,
            alpha: 1.0 - beta,
        })
    }

    /// Variance of the Kaiming-initialized table entries, equal to `β₁`.
    pub fn init_variance(&self) -> f64 {
        self.beta
    }
}

/// `rows x d` table with i.i.d. `N(0, 2/d)` entries.
pub fn kaiming_init(rows: usize, dim: usize, seed: u64) -> Result<Tensor> {
    let sched = DiffusionSchedule::new(dim)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(gaussian(rows, dim, sched.init_variance(), &mut rng))
}

/// Noise predictor `ε_θ(x) = Linear(MHA(x, x, x))`.
#[derive(Clone, Debug)]
pub struct DenoiserNet {
    pub attention: MultiHeadAttention,
    pub linear: Linear,
}

impl DenoiserNet {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let variance = 2.0 / dim as f64;
        Ok(DenoiserNet {
            attention: MultiHeadAttention::new(store, &format!("{name}.attn"), dim, heads, variance, rng)?,
            linear: Linear::new(store, &format!("{name}.linear"), dim, dim, variance, rng),
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.attention.forward(g, store, x, x, x)?;
        self.linear.forward(g, store, h)
    }

    /// Noise estimate for a single vector.
    pub fn predict_noise(&self, store: &ParamStore, e: &[f64]) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let x = g.input(Tensor::row(e.to_vec()));
        let y = self.forward(&mut g, store, x)?;
        Ok(g.value(y).data().to_vec())
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.attention.params();
        p.extend(self.linear.params());
        p
    }
}

/// Deterministic part of the reverse step, `(e - √β₁ ε̂(e)) / √α₁`, plus
/// `√β₁ z` when `z` is given.
pub fn single_step_reconstruct(
    g: &mut Graph,
    store: &ParamStore,
    net: &DenoiserNet,
    sched: &DiffusionSchedule,
    e: Var,
    z: Option<&Tensor>,
    table: &str,
) -> Result<Var> {
    let eps_hat = net.forward(g, store, e)?;
    let scaled = g.scale(eps_hat, sched.beta.sqrt());
    let diff = g.sub(e, scaled)?;
    let mut out = g.scale(diff, 1.0 / sched.alpha.sqrt());
    if let Some(z) = z {
        let noise = z.map(|v| v * sched.beta.sqrt());
        out = g.add_const(out, &noise)?;
    }
    g.check_finite(out, &format!("refinement of table `{table}`"))?;
    Ok(out)
}

/// Single-vector form of [`single_step_reconstruct`].
pub fn reconstruct_vector(
    store: &ParamStore,
    net: &DenoiserNet,
    sched: &DiffusionSchedule,
    e: &[f64],
    z: &[f64],
) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let x = g.input(Tensor::row(e.to_vec()));
    let z = Tensor::row(z.to_vec());
    let y = single_step_reconstruct(&mut g, store, net, sched, x, Some(&z), "vector")?;
    Ok(g.value(y).data().to_vec())
}

/// One embedding table with its own denoiser.
#[derive(Clone, Debug)]
pub struct EmbeddingTable {
    pub name: String,
    pub param: ParamId,
    pub denoiser: DenoiserNet,
}

impl EmbeddingTable {
    fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: String,
        rows: usize,
        dim: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let param = store.add_gaussian(name.clone(), rows, dim, 2.0 / dim as f64, rng);
        let denoiser = DenoiserNet::new(store, &format!("{name}.denoiser"), dim, heads, rng)?;
        Ok(EmbeddingTable {
            name,
            param,
            denoiser,
        })
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = vec![self.param];
        p.extend(self.denoiser.params());
        p
    }
}

/// Identity and attribute tables of one entity kind plus the aggregation norm.
#[derive(Clone, Debug)]
pub struct EntityEmbedding {
    pub identity: EmbeddingTable,
    pub attributes: Vec<EmbeddingTable>,
    pub norm: LayerNorm,
    pub context: ContextTable,
}

impl EntityEmbedding {
    fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        kind: &str,
        count: usize,
        context: &ContextTable,
        dim: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let identity = EmbeddingTable::new(store, format!("{kind}.id"), count, dim, heads, rng)?;
        let attributes = context
            .fields
            .iter()
            .zip(&context.vocab_sizes)
            .enumerate()
            .map(|(k, (field, &vocab))| {
                let name = format!("{kind}.attr{k}.{}", field.to_lowercase().replace(' ', "_"));
                EmbeddingTable::new(store, name, vocab, dim, heads, rng)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EntityEmbedding {
            identity,
            attributes,
            norm: LayerNorm::new(store, &format!("{kind}.norm"), dim, AGGREGATE_LN_EPS),
            context: context.clone(),
        })
    }

    pub fn count(&self) -> usize {
        self.context.rows.len()
    }

    /// `ê^ID + Σ_k ê^(k)` for each entity in `entities`, before normalization.
    ///
    /// Attribute rows shared by several entities are denoised once; the
    /// stochastic term is still drawn per entity and component.
    pub fn aggregate<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        sched: &DiffusionSchedule,
        entities: &[usize],
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        let n = entities.len();
        let d = sched.dim;
        let noise = |rng: &mut R| match mode {
            Mode::Train => Some(gaussian(n, d, 1.0, rng)),
            Mode::Eval => None,
        };
        let id_rows = g.gather(store, self.identity.param, entities)?;
        let z = noise(rng);
        let mut acc = single_step_reconstruct(
            g,
            store,
            &self.identity.denoiser,
            sched,
            id_rows,
            z.as_ref(),
            &self.identity.name,
        )?;
        for (k, table) in self.attributes.iter().enumerate() {
            let (unique, positions) = dedup(entities.iter().map(|&e| self.context.rows[e][k]));
            let rows = g.gather(store, table.param, &unique)?;
            let refined =
                single_step_reconstruct(g, store, &table.denoiser, sched, rows, None, &table.name)?;
            let mut per_entity = g.gather_rows(refined, &positions)?;
            if let Some(z) = noise(rng) {
                per_entity = g.add_const(per_entity, &z.map(|v| v * sched.beta.sqrt()))?;
            }
            acc = g.add(acc, per_entity)?;
        }
        Ok(acc)
    }

    /// Refined latent vectors `LayerNorm(ê^ID + Σ_k ê^(k))`, one row per entity.
    pub fn refine<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        sched: &DiffusionSchedule,
        entities: &[usize],
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        if let Some(&bad) = entities.iter().find(|&&e| e >= self.count()) {
            return Err(Error::IndexOutOfRange {
                what: "entity",
                index: bad,
                limit: self.count(),
            });
        }
        let sum = self.aggregate(g, store, sched, entities, mode, rng)?;
        self.norm.forward(g, store, sum)
    }

    /// Evaluation-mode refinement of every entity, computed in parallel chunks.
    pub fn refine_all(&self, store: &ParamStore, sched: &DiffusionSchedule) -> Result<Tensor> {
        const CHUNK: usize = 512;
        let ids: Vec<usize> = (0..self.count()).collect();
        let chunks = ids
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut g = Graph::new();
                // Evaluation mode draws nothing from the generator.
                let mut rng = ChaCha8Rng::seed_from_u64(0);
                let v = self.refine(&mut g, store, sched, chunk, Mode::Eval, &mut rng)?;
                Ok(g.value(v).data().to_vec())
            })
            .collect::<Result<Vec<_>>>()?;
        Tensor::new(self.count(), sched.dim, chunks.concat())
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.identity.params();
        for t in &self.attributes {
            p.extend(t.params());
        }
        p.extend(self.norm.params());
        p
    }

    pub fn tables(&self) -> impl Iterator<Item = &EmbeddingTable> {
        std::iter::once(&self.identity).chain(self.attributes.iter())
    }
}

/// Unique values in first-appearance order and each input's position among them.
fn dedup(values: impl Iterator<Item = usize>) -> (Vec<usize>, Vec<usize>) {
    let mut unique = Vec::new();
    let mut index = std::collections::HashMap::new();
    let positions = values
        .map(|v| {
            *index.entry(v).or_insert_with(|| {
                unique.push(v);
                unique.len() - 1
            })
        })
        .collect();
    (unique, positions)
}

/// All embedding tables and denoisers of both entity kinds.
#[derive(Clone, Debug)]
pub struct EmbeddingBank {
    pub dim: usize,
    pub heads: usize,
    pub schedule: DiffusionSchedule,
    pub users: EntityEmbedding,
    pub services: EntityEmbedding,
}

impl EmbeddingBank {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        user_context: &ContextTable,
        service_context: &ContextTable,
        dim: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let schedule = DiffusionSchedule::new(dim)?;
        let users = EntityEmbedding::new(
            store,
            "user",
            user_context.rows.len(),
            user_context,
            dim,
            heads,
            rng,
        )?;
        let services = EntityEmbedding::new(
            store,
            "service",
            service_context.rows.len(),
            service_context,
            dim,
            heads,
            rng,
        )?;
        Ok(EmbeddingBank {
            dim,
            heads,
            schedule,
            users,
            services,
        })
    }

    /// Number of denoisers, one per table.
    pub fn num_denoisers(&self) -> usize {
        self.users.tables().count() + self.services.tables().count()
    }

    pub fn refine_user<R: Rng + ?Sized>(
        &self,
        store: &ParamStore,
        user: usize,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let v = self.users.refine(&mut g, store, &self.schedule, &[user], mode, rng)?;
        Ok(g.value(v).data().to_vec())
    }

    pub fn refine_service<R: Rng + ?Sized>(
        &self,
        store: &ParamStore,
        service: usize,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let v = self.services.refine(&mut g, store, &self.schedule, &[service], mode, rng)?;
        Ok(g.value(v).data().to_vec())
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.users.params();
        p.extend(self.services.params());
        p
    }
}

#[cfg(test)]
mod tests;
