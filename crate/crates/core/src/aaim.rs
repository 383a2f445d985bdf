//! Adversarial interaction module: real/fake interaction batches, the
//! bidirectional hybrid attention generator and the scalar discriminator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::autodiff::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::delm::EmbeddingBank;
use crate::error::{Error, Result};
use crate::nn::{dropout, BatchNorm, LayerNorm, Linear, Mode, MultiHeadAttention};

/// Layer-norm epsilon inside the generator's feed-forward stages.
pub const GENERATOR_LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct AaimConfig {
    /// Embedding dimension `d`; interaction rows have width `2d`.
    pub dim: usize,
    pub heads: usize,
    /// `d_h`, width of the two projected representations.
    pub hidden: usize,
    /// `d_g`, first feed-forward width.
    pub ff: usize,
    /// `d_o`, second feed-forward width.
    pub out: usize,
    /// `d_D`, discriminator hidden width.
    pub disc_hidden: usize,
    pub tau: f64,
    pub gamma: f64,
    pub leaky_slope: f64,
    pub keep_prob: f64,
}

impl Default for AaimConfig {
    fn default() -> Self {
        AaimConfig {
            dim: 256,
            heads: 1,
            hidden: 128,
            ff: 128,
            out: 64,
            disc_hidden: 64,
            tau: 0.5,
            gamma: 1.0,
            leaky_slope: 0.2,
            keep_prob: 0.7,
        }
    }
}

impl AaimConfig {
    /// Checks every width and scalar without building anything.
    pub fn validate(&self) -> Result<()> {
        if self.dim <= 2 {
            return Err(Error::DegenerateSchedule(self.dim));
        }
        for (name, v) in [
            ("heads", self.heads),
            ("hidden", self.hidden),
            ("ff", self.ff),
            ("out", self.out),
            ("disc_hidden", self.disc_hidden),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        for (name, width) in [("dim", self.dim), ("hidden", self.hidden)] {
            if width % self.heads != 0 {
                return Err(Error::Config(format!(
                    "{name} = {width} is not divisible by {} heads",
                    self.heads
                )));
            }
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("τ must be non-negative, got {}", self.tau)));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("γ must be positive, got {}", self.gamma)));
        }
        if !self.leaky_slope.is_finite() {
            return Err(Error::Config("leaky slope must be finite".into()));
        }
        if !(self.keep_prob > 0.0 && self.keep_prob <= 1.0) {
            return Err(Error::Config(format!(
                "dropout keep probability must be in (0, 1], got {}",
                self.keep_prob
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Real,
    Fake,
}

/// `B x 2d` interaction matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionBatch {
    pub matrix: Tensor,
    pub branch: Branch,
    pub pairs: Option<Vec<(usize, usize)>>,
}

/// Rows `z_u ‖ z_s` from precomputed user and service vectors.
pub fn build_real_batch(
    users: &[usize],
    services: &[usize],
    user_vectors: &Tensor,
    service_vectors: &Tensor,
) -> Result<InteractionBatch> {
    if users.len() != services.len() {
        return Err(Error::InvalidArgument(format!(
            "{} users but {} services",
            users.len(),
            services.len()
        )));
    }
    if user_vectors.cols() != service_vectors.cols() {
        return Err(Error::shape(
            "build_real_batch",
            format!(
                "user width {} vs service width {}",
                user_vectors.cols(),
                service_vectors.cols()
            ),
        ));
    }
    let d = user_vectors.cols();
    let mut data = Vec::with_capacity(users.len() * 2 * d);
    for (&u, &s) in users.iter().zip(services) {
        if u >= user_vectors.rows() {
            return Err(Error::IndexOutOfRange {
                what: "user",
                index: u,
                limit: user_vectors.rows(),
            });
        }
        if s >= service_vectors.rows() {
            return Err(Error::IndexOutOfRange {
                what: "service",
                index: s,
                limit: service_vectors.rows(),
            });
        }
        data.extend_from_slice(user_vectors.row_slice(u));
        data.extend_from_slice(service_vectors.row_slice(s));
    }
    Ok(InteractionBatch {
        matrix: Tensor::new(users.len(), 2 * d, data)?,
        branch: Branch::Real,
        pairs: Some(users.iter().copied().zip(services.iter().copied()).collect()),
    })
}

/// `F = N + τ·ε` with `N ~ N(0,1)` and `ε ~ U(-1,1)`, both `B x 2d`.
pub fn sample_fake(batch: usize, dim: usize, tau: f64, seed: u64) -> Result<InteractionBatch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(InteractionBatch {
        matrix: sample_fake_with(batch, dim, tau, &mut rng)?,
        branch: Branch::Fake,
        pairs: None,
    })
}

pub fn sample_fake_with<R: Rng + ?Sized>(
    batch: usize,
    dim: usize,
    tau: f64,
    rng: &mut R,
) -> Result<Tensor> {
    if !(tau >= 0.0) {
        return Err(Error::InvalidArgument(format!("τ must be non-negative, got {tau}")));
    }
    let n = batch * 2 * dim;
    let base: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    let uniform = Uniform::new(-1.0, 1.0).expect("valid range");
    let data = base
        .into_iter()
        .map(|v| v + tau * uniform.sample(rng))
        .collect();
    Tensor::new(batch, 2 * dim, data)
}

/// Bidirectional hybrid attention generator.
#[derive(Clone, Debug)]
pub struct Generator {
    pub proj_user_to_service: Linear,
    pub proj_service_to_user: Linear,
    pub attn_user_to_service: MultiHeadAttention,
    pub attn_service_to_user: MultiHeadAttention,
    pub ff1: Linear,
    pub ln1: LayerNorm,
    pub ff2: Linear,
    pub ln2: LayerNorm,
    pub head: Linear,
}

/// Intermediate values of one generator pass, for inspection.
#[derive(Clone, Copy, Debug)]
pub struct GeneratorTrace {
    pub h_user_to_service: Var,
    pub h_service_to_user: Var,
    pub attended_user_to_service: Var,
    pub attended_service_to_user: Var,
    pub output: Var,
}

impl Generator {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        cfg: &AaimConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let width = 2 * cfg.dim;
        let attn_var = 2.0 / cfg.hidden as f64;
        Ok(Generator {
            proj_user_to_service: Linear::kaiming(store, "gen.w1", width, cfg.hidden, rng),
            proj_service_to_user: Linear::kaiming(store, "gen.w2", width, cfg.hidden, rng),
            attn_user_to_service: MultiHeadAttention::new(
                store, "gen.mha_us", cfg.hidden, cfg.heads, attn_var, rng,
            )?,
            attn_service_to_user: MultiHeadAttention::new(
                store, "gen.mha_su", cfg.hidden, cfg.heads, attn_var, rng,
            )?,
            ff1: Linear::kaiming(store, "gen.w3", 2 * cfg.hidden, cfg.ff, rng),
            ln1: LayerNorm::new(store, "gen.ln1", cfg.ff, GENERATOR_LN_EPS),
            ff2: Linear::kaiming(store, "gen.w4", cfg.ff, cfg.out, rng),
            ln2: LayerNorm::new(store, "gen.ln2", cfg.out, GENERATOR_LN_EPS),
            head: Linear::kaiming(store, "gen.w5", cfg.out, 1, rng),
        })
    }

    pub fn input_width(&self) -> usize {
        self.proj_user_to_service.in_dim
    }

    /// `B x 2d` interactions to `B x 1` predictions in `(0, 1)`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, t: Var) -> Result<Var> {
        Ok(self.forward_traced(g, store, t)?.output)
    }

    pub fn forward_traced(&self, g: &mut Graph, store: &ParamStore, t: Var) -> Result<GeneratorTrace> {
        let width = g.shape(t)[1];
        if width != self.input_width() {
            return Err(Error::shape(
                "generator",
                format!("batch width {width}, expected {}", self.input_width()),
            ));
        }
        let h_us = self.proj_user_to_service.forward(g, store, t)?;
        let h_us = g.relu(h_us);
        let h_su = self.proj_service_to_user.forward(g, store, t)?;
        let h_su = g.relu(h_su);
        g.check_finite(h_us, "generator projection U→S")?;
        g.check_finite(h_su, "generator projection S→U")?;

        // Each row is a one-step sequence: query and key come from the own
        // direction, value from the opposite one.
        let a_us = self.attn_user_to_service.forward(g, store, h_us, h_us, h_su)?;
        let a_su = self.attn_service_to_user.forward(g, store, h_su, h_su, h_us)?;
        g.check_finite(a_us, "generator attention U→S")?;
        g.check_finite(a_su, "generator attention S→U")?;

        let cat = g.concat_cols(a_us, a_su)?;
        let g1 = self.ff1.forward(g, store, cat)?;
        let g1 = g.relu(g1);
        let g1 = self.ln1.forward(g, store, g1)?;
        let g2 = self.ff2.forward(g, store, g1)?;
        let g2 = g.relu(g2);
        let g2 = self.ln2.forward(g, store, g2)?;
        g.check_finite(g2, "generator feed-forward")?;
        let logit = self.head.forward(g, store, g2)?;
        let y = g.sigmoid(logit);
        g.check_finite(y, "generator output")?;
        Ok(GeneratorTrace {
            h_user_to_service: h_us,
            h_service_to_user: h_su,
            attended_user_to_service: a_us,
            attended_service_to_user: a_su,
            output: y,
        })
    }

    /// Predictions for a whole batch without recording gradients.
    pub fn predict(&self, store: &ParamStore, batch: &InteractionBatch) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let t = g.input(batch.matrix.clone());
        let y = self.forward(&mut g, store, t)?;
        Ok(g.value(y).data().to_vec())
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = Vec::new();
        p.extend(self.proj_user_to_service.params());
        p.extend(self.proj_service_to_user.params());
        p.extend(self.attn_user_to_service.params());
        p.extend(self.attn_service_to_user.params());
        p.extend(self.ff1.params());
        p.extend(self.ln1.params());
        p.extend(self.ff2.params());
        p.extend(self.ln2.params());
        p.extend(self.head.params());
        p
    }
}

/// Two leaky-ReLU / batch-norm / dropout blocks and a `γ`-scaled sigmoid.
#[derive(Clone, Debug)]
pub struct Discriminator {
    pub l1: Linear,
    pub bn1: BatchNorm,
    pub l2: Linear,
    pub bn2: BatchNorm,
    pub out: Linear,
    pub gamma: f64,
    pub leaky_slope: f64,
    pub keep_prob: f64,
}

impl Discriminator {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        cfg: &AaimConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if !(cfg.gamma > 0.0) {
            return Err(Error::Config(format!("γ must be positive, got {}", cfg.gamma)));
        }
        Ok(Discriminator {
            l1: Linear::kaiming(store, "disc.w1", 1, cfg.disc_hidden, rng),
            bn1: BatchNorm::new(store, "disc.bn1", cfg.disc_hidden),
            l2: Linear::kaiming(store, "disc.w2", cfg.disc_hidden, cfg.disc_hidden, rng),
            bn2: BatchNorm::new(store, "disc.bn2", cfg.disc_hidden),
            out: Linear::kaiming(store, "disc.w3", cfg.disc_hidden, 1, rng),
            gamma: cfg.gamma,
            leaky_slope: cfg.leaky_slope,
            keep_prob: cfg.keep_prob,
        })
    }

    /// `B x 1` scores to `B x 1` outputs in `(0, γ)`.
    ///
    /// Training mode needs `B ≥ 2` for batch statistics and stages running
    /// statistics on the graph.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        scores: Var,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        let [b, w] = g.shape(scores);
        if w != 1 {
            return Err(Error::shape("discriminator", format!("expected B x 1 scores, got {b}x{w}")));
        }
        if mode == Mode::Train && b < 2 {
            return Err(Error::InvalidArgument(format!(
                "discriminator training mode needs a batch of at least 2, got {b}"
            )));
        }
        g.check_finite(scores, "discriminator input")?;
        let mut h = scores;
        for (lin, bn) in [(&self.l1, &self.bn1), (&self.l2, &self.bn2)] {
            h = lin.forward(g, store, h)?;
            h = g.leaky_relu(h, self.leaky_slope);
            h = bn.forward(g, store, h, mode)?;
            h = dropout(g, h, self.keep_prob, mode, rng)?;
        }
        let logit = self.out.forward(g, store, h)?;
        let s = g.sigmoid(logit);
        Ok(g.scale(s, self.gamma))
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = Vec::new();
        p.extend(self.l1.params());
        p.extend(self.bn1.params());
        p.extend(self.l2.params());
        p.extend(self.bn2.params());
        p.extend(self.out.params());
        p
    }
}

/// The four quantities returned by one AAIM forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardOutputs {
    pub y_real: Var,
    pub y_fake: Var,
    pub d_real: Var,
    pub d_fake: Var,
}

/// Real interaction matrix `T` for the given pairs, built from refined
/// embeddings inside `g` so gradients reach the embedding bank.
pub fn real_interactions<R: Rng + ?Sized>(
    g: &mut Graph,
    store: &ParamStore,
    bank: &EmbeddingBank,
    users: &[usize],
    services: &[usize],
    mode: Mode,
    rng: &mut R,
) -> Result<Var> {
    if users.len() != services.len() {
        return Err(Error::InvalidArgument(format!(
            "{} users but {} services",
            users.len(),
            services.len()
        )));
    }
    if users.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let (uu, upos) = unique_positions(users);
    let (us, spos) = unique_positions(services);
    let zu = bank.users.refine(g, store, &bank.schedule, &uu, mode, rng)?;
    let zs = bank.services.refine(g, store, &bank.schedule, &us, mode, rng)?;
    let zu = g.gather_rows(zu, &upos)?;
    let zs = g.gather_rows(zs, &spos)?;
    g.concat_cols(zu, zs)
}

fn unique_positions(ids: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut unique: Vec<usize> = ids.to_vec();
    unique.sort_unstable();
    unique.dedup();
    let positions = ids
        .iter()
        .map(|id| unique.binary_search(id).expect("present"))
        .collect();
    (unique, positions)
}

/// Real and fake generator predictions and their discriminator scores.
#[allow(clippy::too_many_arguments)]
pub fn aaim_forward<R: Rng + ?Sized>(
    g: &mut Graph,
    store: &ParamStore,
    bank: &EmbeddingBank,
    generator: &Generator,
    discriminator: &Discriminator,
    users: &[usize],
    services: &[usize],
    tau: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<ForwardOutputs> {
    let t_real = real_interactions(g, store, bank, users, services, mode, rng)?;
    let fake = sample_fake_with(users.len(), bank.dim, tau, rng)?;
    let t_fake = g.input(fake);
    let y_real = generator.forward(g, store, t_real)?;
    let y_fake = generator.forward(g, store, t_fake)?;
    let d_real = discriminator.forward(g, store, y_real, mode, rng)?;
    let d_fake = discriminator.forward(g, store, y_fake, mode, rng)?;
    Ok(ForwardOutputs {
        y_real,
        y_fake,
        d_real,
        d_fake,
    })
}
