//! Classical collaborative-filtering predictors: Pearson neighbourhood models
//! (UPCC, IPCC, UIPCC) and SGD matrix factorization (PMF, BiasMF).

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::data::Triplet;
use crate::error::{Error, Result};
use crate::eval::QosPredictor;

/// Pearson correlation over the co-observed positions of two sparse rows.
///
/// Rows are `(index, value)` lists sorted by index. Returns 0 for fewer than
/// two co-observations or a zero variance on either side.
pub fn pearson(a: &[(usize, f64)], b: &[(usize, f64)]) -> f64 {
    let mut pairs = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                pairs.push((a[i].1, b[j].1));
                i += 1;
                j += 1;
            }
        }
    }
    pearson_pairs(&pairs)
}

/// Pearson correlation of paired samples, 0 when degenerate.
pub fn pearson_pairs(pairs: &[(f64, f64)]) -> f64 {
    if pairs.len() < 2 {
        return 0.0;
    }
    let n = pairs.len() as f64;
    let ma = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mb = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for &(x, y) in pairs {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    (sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Similarity {
    /// Neighbours are users (UPCC).
    User,
    /// Neighbours are services (IPCC).
    Service,
}

/// Top-k Pearson neighbourhood predictor.
///
/// Internally everything is stored from the point of view of the "entity"
/// axis: users for UPCC, services for IPCC. `rows[e]` lists the observations
/// of entity `e` over the other axis.
#[derive(Clone, Debug)]
pub struct NeighborModel {
    pub kind: Similarity,
    pub top_k: usize,
    rows: Vec<Vec<(usize, f64)>>,
    means: Vec<Option<f64>>,
    global_mean: f64,
}

pub const DEFAULT_TOP_K: usize = 10;

impl NeighborModel {
    pub fn fit(
        train: &[Triplet],
        num_users: usize,
        num_services: usize,
        kind: Similarity,
        top_k: usize,
    ) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::NoObservations);
        }
        if top_k == 0 {
            return Err(Error::Config("top_k must be at least 1".into()));
        }
        let entities = match kind {
            Similarity::User => num_users,
            Similarity::Service => num_services,
        };
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); entities];
        for t in train {
            check_triplet(t, num_users, num_services)?;
            let (e, o) = orient(kind, t.user, t.service);
            rows[e].push((o, t.value));
        }
        for r in &mut rows {
            r.sort_by_key(|p| p.0);
            r.dedup_by_key(|p| p.0);
        }
        let means = rows
            .iter()
            .map(|r| (!r.is_empty()).then(|| r.iter().map(|p| p.1).sum::<f64>() / r.len() as f64))
            .collect();
        let global_mean = train.iter().map(|t| t.value).sum::<f64>() / train.len() as f64;
        Ok(NeighborModel {
            kind,
            top_k,
            rows,
            means,
            global_mean,
        })
    }

    pub fn similarity(&self, a: usize, b: usize) -> f64 {
        pearson(&self.rows[a], &self.rows[b])
    }

    pub fn mean(&self, entity: usize) -> Option<f64> {
        self.means.get(entity).copied().flatten()
    }

    pub fn global_mean(&self) -> f64 {
        self.global_mean
    }

    fn value(&self, entity: usize, other: usize) -> Option<f64> {
        let r = &self.rows[entity];
        r.binary_search_by_key(&other, |p| p.0).ok().map(|i| r[i].1)
    }

    /// Similarities of `entity` to every other entity.
    pub fn similarity_row(&self, entity: usize) -> Vec<f64> {
        (0..self.rows.len())
            .map(|v| if v == entity { 0.0 } else { self.similarity(entity, v) })
            .collect()
    }

    /// Prediction from a precomputed similarity row of the entity.
    fn predict_with(&self, entity: usize, other: usize, sims: &[f64]) -> f64 {
        let base = match self.mean(entity) {
            Some(m) => m,
            None => return self.global_mean,
        };
        let mut candidates: Vec<(f64, usize, f64)> = sims
            .iter()
            .enumerate()
            .filter(|&(v, &s)| v != entity && s > 0.0)
            .filter_map(|(v, &s)| self.value(v, other).map(|r| (s, v, r)))
            .collect();
        // Highest similarity first; ties broken by index for determinism.
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        candidates.truncate(self.top_k);
        let (mut num, mut den) = (0.0, 0.0);
        for (s, v, r) in candidates {
            num += s * (r - self.mean(v).expect("observed neighbour"));
            den += s.abs();
        }
        if den == 0.0 {
            base
        } else {
            base + num / den
        }
    }

    /// Prediction for `(user, service)`.
    pub fn predict_one(&self, user: usize, service: usize) -> Result<f64> {
        let (e, o) = orient(self.kind, user, service);
        self.check(e)?;
        Ok(self.predict_with(e, o, &self.similarity_row(e)))
    }

    fn check(&self, entity: usize) -> Result<()> {
        if entity >= self.rows.len() {
            return Err(Error::IndexOutOfRange {
                what: match self.kind {
                    Similarity::User => "user",
                    Similarity::Service => "service",
                },
                index: entity,
                limit: self.rows.len(),
            });
        }
        Ok(())
    }
}

fn check_triplet(t: &Triplet, num_users: usize, num_services: usize) -> Result<()> {
    if t.user >= num_users {
        return Err(Error::IndexOutOfRange {
            what: "user",
            index: t.user,
            limit: num_users,
        });
    }
    if t.service >= num_services {
        return Err(Error::IndexOutOfRange {
            what: "service",
            index: t.service,
            limit: num_services,
        });
    }
    Ok(())
}

fn orient(kind: Similarity, user: usize, service: usize) -> (usize, usize) {
    match kind {
        Similarity::User => (user, service),
        Similarity::Service => (service, user),
    }
}

impl QosPredictor for NeighborModel {
    /// Similarity rows are computed once per distinct entity, in parallel.
    fn predict(&self, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
        let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
        for (pos, &(u, s)) in pairs.iter().enumerate() {
            let (e, _) = orient(self.kind, u, s);
            self.check(e)?;
            groups.entry(e).or_default().push(pos);
        }
        let mut groups: Vec<(usize, Vec<usize>)> = groups.into_iter().collect();
        groups.sort_by_key(|g| g.0);
        let results: Vec<Vec<(usize, f64)>> = groups
            .par_iter()
            .map(|(e, positions)| {
                let sims = self.similarity_row(*e);
                positions
                    .iter()
                    .map(|&p| {
                        let (_, o) = orient(self.kind, pairs[p].0, pairs[p].1);
                        (p, self.predict_with(*e, o, &sims))
                    })
                    .collect()
            })
            .collect();
        let mut out = vec![0.0; pairs.len()];
        for (p, v) in results.into_iter().flatten() {
            out[p] = v;
        }
        Ok(out)
    }
}

/// Convex blend `w·UPCC + (1 - w)·IPCC`.
#[derive(Clone, Debug)]
pub struct Uipcc {
    pub user: NeighborModel,
    pub service: NeighborModel,
    pub weight: f64,
}

pub const DEFAULT_UIPCC_WEIGHT: f64 = 0.5;

impl Uipcc {
    pub fn new(user: NeighborModel, service: NeighborModel, weight: f64) -> Result<Self> {
        if user.kind != Similarity::User || service.kind != Similarity::Service {
            return Err(Error::InvalidArgument(
                "UIPCC needs a user model and a service model".into(),
            ));
        }
        if !(0.0..=1.0).contains(&weight) {
            return Err(Error::Config(format!("UIPCC weight must lie in [0, 1], got {weight}")));
        }
        Ok(Uipcc {
            user,
            service,
            weight,
        })
    }

    pub fn predict_one(&self, user: usize, service: usize) -> Result<f64> {
        Ok(uipcc_blend(
            self.user.predict_one(user, service)?,
            self.service.predict_one(user, service)?,
            self.weight,
        ))
    }
}

pub fn uipcc_blend(upcc: f64, ipcc: f64, weight: f64) -> f64 {
    weight * upcc + (1.0 - weight) * ipcc
}

impl QosPredictor for Uipcc {
    fn predict(&self, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
        let u = self.user.predict(pairs)?;
        let s = self.service.predict(pairs)?;
        Ok(u
            .into_iter()
            .zip(s)
            .map(|(a, b)| uipcc_blend(a, b, self.weight))
            .collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FactorVariant {
    Pmf,
    BiasMf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FactorConfig {
    pub factors: usize,
    pub reg: f64,
    pub lr: f64,
    pub epochs: usize,
    /// Standard deviation of the initial factor entries.
    pub init_std: f64,
}

impl Default for FactorConfig {
    fn default() -> Self {
        FactorConfig {
            factors: 10,
            reg: 0.01,
            lr: 0.01,
            epochs: 100,
            init_std: 0.1,
        }
    }
}

/// Objective value above which training is declared divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1e6;

/// Latent-factor model `r̂ = pᵤᵀqₛ` (PMF) or `μ + bᵤ + bₛ + pᵤᵀqₛ` (BiasMF).
#[derive(Clone, Debug)]
pub struct FactorModel {
    pub variant: FactorVariant,
    pub factors: usize,
    pub user_factors: Vec<Vec<f64>>,
    pub service_factors: Vec<Vec<f64>>,
    pub user_bias: Vec<f64>,
    pub service_bias: Vec<f64>,
    pub global_bias: f64,
}

impl FactorModel {
    pub fn predict_one(&self, user: usize, service: usize) -> Result<f64> {
        if user >= self.user_factors.len() {
            return Err(Error::IndexOutOfRange {
                what: "user",
                index: user,
                limit: self.user_factors.len(),
            });
        }
        if service >= self.service_factors.len() {
            return Err(Error::IndexOutOfRange {
                what: "service",
                index: service,
                limit: self.service_factors.len(),
            });
        }
        Ok(self.raw(user, service))
    }

    fn raw(&self, u: usize, s: usize) -> f64 {
        let dot: f64 = self.user_factors[u]
            .iter()
            .zip(&self.service_factors[s])
            .map(|(a, b)| a * b)
            .sum();
        match self.variant {
            FactorVariant::Pmf => dot,
            FactorVariant::BiasMf => self.global_bias + self.user_bias[u] + self.service_bias[s] + dot,
        }
    }

    /// Regularized squared-error objective over `train`.
    pub fn objective(&self, train: &[Triplet], reg: f64) -> f64 {
        let sq: f64 = train
            .iter()
            .map(|t| {
                let e = self.raw(t.user, t.service) - t.value;
                e * e
            })
            .sum();
        let norm = |m: &[Vec<f64>]| m.iter().flatten().map(|v| v * v).sum::<f64>();
        let mut penalty = norm(&self.user_factors) + norm(&self.service_factors);
        if self.variant == FactorVariant::BiasMf {
            penalty += self.user_bias.iter().map(|b| b * b).sum::<f64>();
            penalty += self.service_bias.iter().map(|b| b * b).sum::<f64>();
        }
        sq + reg * penalty
    }
}

impl QosPredictor for FactorModel {
    fn predict(&self, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
        pairs.iter().map(|&(u, s)| self.predict_one(u, s)).collect()
    }
}

/// SGD over shuffled training triplets minimizing
/// `Σ (r̂ - y)² + reg·‖params‖²`, the global bias left unregularized.
pub fn factor_fit(
    train: &[Triplet],
    num_users: usize,
    num_services: usize,
    variant: FactorVariant,
    config: &FactorConfig,
    seed: u64,
) -> Result<FactorModel> {
    if train.is_empty() {
        return Err(Error::NoObservations);
    }
    if config.factors == 0 {
        return Err(Error::Config("factor count must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, config.init_std)
        .map_err(|e| Error::Config(format!("initial factor deviation: {e}")))?;
    let mut init = |count: usize| -> Vec<Vec<f64>> {
        (0..count)
            .map(|_| (0..config.factors).map(|_| normal.sample(&mut rng)).collect())
            .collect()
    };
    let user_factors = init(num_users);
    let service_factors = init(num_services);
    let global_bias = match variant {
        FactorVariant::Pmf => 0.0,
        FactorVariant::BiasMf => train.iter().map(|t| t.value).sum::<f64>() / train.len() as f64,
    };
    let mut model = FactorModel {
        variant,
        factors: config.factors,
        user_factors,
        service_factors,
        user_bias: vec![0.0; num_users],
        service_bias: vec![0.0; num_services],
        global_bias,
    };
    for t in train {
        check_triplet(t, num_users, num_services)?;
    }
    let (lr, reg) = (config.lr, config.reg);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let t = train[i];
            let err = model.raw(t.user, t.service) - t.value;
            if variant == FactorVariant::BiasMf {
                model.user_bias[t.user] -= lr * (err + reg * model.user_bias[t.user]);
                model.service_bias[t.service] -= lr * (err + reg * model.service_bias[t.service]);
            }
            for k in 0..config.factors {
                let p = model.user_factors[t.user][k];
                let q = model.service_factors[t.service][k];
                model.user_factors[t.user][k] -= lr * (err * q + reg * p);
                model.service_factors[t.service][k] -= lr * (err * p + reg * q);
            }
        }
        let loss = model.objective(train, reg);
        if !loss.is_finite() || loss > DIVERGENCE_THRESHOLD {
            return Err(Error::Divergence(format!(
                "factor training objective reached {loss:e} at epoch {}; lower the learning rate (currently {lr})",
                epoch + 1
            )));
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests;
