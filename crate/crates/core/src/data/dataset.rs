use std::collections::HashMap;

use crate::error::{Error, Result};

/// One observed `(user, service, value)` entry.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Triplet {
    pub user: usize,
    pub service: usize,
    pub value: f64,
}

/// Categorical context attributes of one entity kind.
///
/// `rows[e][k]` is the vocabulary index of field `k` for entity `e`. Index 0
/// of every field is reserved for values never seen while loading.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ContextTable {
    pub fields: Vec<String>,
    pub rows: Vec<Vec<usize>>,
    pub vocab_sizes: Vec<usize>,
}

impl ContextTable {
    /// A table with no fields for `count` entities.
    pub fn empty(count: usize) -> Self {
        ContextTable {
            fields: Vec::new(),
            rows: vec![Vec::new(); count],
            vocab_sizes: Vec::new(),
        }
    }

    pub fn num_fields(&self) -> usize {
        self.fields.len()
    }

    pub fn column(&self, field: usize) -> impl Iterator<Item = usize> + '_ {
        self.rows.iter().map(move |r| r[field])
    }

    fn validate(&self, count: usize, what: &str) -> Result<()> {
        if self.rows.len() != count {
            return Err(Error::Config(format!(
                "{what} context has {} rows for {count} entities",
                self.rows.len()
            )));
        }
        if self.vocab_sizes.len() != self.fields.len() {
            return Err(Error::Config(format!(
                "{what} context lists {} fields but {} vocabularies",
                self.fields.len(),
                self.vocab_sizes.len()
            )));
        }
        for (e, row) in self.rows.iter().enumerate() {
            if row.len() != self.fields.len() {
                return Err(Error::Config(format!(
                    "{what} {e} has {} attributes, expected {}",
                    row.len(),
                    self.fields.len()
                )));
            }
            for (k, &v) in row.iter().enumerate() {
                if v >= self.vocab_sizes[k] {
                    return Err(Error::IndexOutOfRange {
                        what: "context index",
                        index: v,
                        limit: self.vocab_sizes[k],
                    });
                }
            }
        }
        Ok(())
    }
}

/// First-appearance vocabulary with index 0 reserved for unseen values.
#[derive(Clone, Debug, Default)]
pub struct Vocabulary {
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub const UNKNOWN: usize = 0;

    pub fn intern(&mut self, value: &str) -> usize {
        let next = self.index.len() + 1;
        *self.index.entry(value.to_string()).or_insert(next)
    }

    pub fn lookup(&self, value: &str) -> usize {
        self.index.get(value).copied().unwrap_or(Self::UNKNOWN)
    }

    /// Number of indices including the reserved one.
    pub fn size(&self) -> usize {
        self.index.len() + 1
    }
}

/// Sparse QoS observations with entity context.
#[derive(Clone, Debug, PartialEq)]
pub struct QoSDataset {
    pub name: String,
    pub num_users: usize,
    pub num_services: usize,
    pub triplets: Vec<Triplet>,
    /// Maximum raw value; retained after normalization for denormalizing.
    pub global_max: f64,
    pub user_context: ContextTable,
    pub service_context: ContextTable,
    normalized: bool,
}

impl QoSDataset {
    /// Validates and assembles a raw (unnormalized) dataset.
    pub fn new(
        name: impl Into<String>,
        num_users: usize,
        num_services: usize,
        triplets: Vec<Triplet>,
        user_context: ContextTable,
        service_context: ContextTable,
    ) -> Result<Self> {
        if triplets.is_empty() {
            return Err(Error::NoObservations);
        }
        for t in &triplets {
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
            if !(t.value > 0.0 && t.value.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "observed value must be positive and finite, got {}",
                    t.value
                )));
            }
        }
        user_context.validate(num_users, "user")?;
        service_context.validate(num_services, "service")?;
        let global_max = triplets.iter().map(|t| t.value).fold(f64::MIN, f64::max);
        Ok(QoSDataset {
            name: name.into(),
            num_users,
            num_services,
            triplets,
            global_max,
            user_context,
            service_context,
            normalized: false,
        })
    }

    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Number of cells of the full user x service matrix.
    pub fn matrix_size(&self) -> usize {
        self.num_users * self.num_services
    }

    /// Values divided by the global maximum, so the maximum maps to 1.
    pub fn normalize(&self) -> QoSDataset {
        if self.normalized {
            return self.clone();
        }
        let mut out = self.clone();
        for t in &mut out.triplets {
            t.value /= self.global_max;
        }
        out.normalized = true;
        out
    }

    pub fn denormalize(&self) -> QoSDataset {
        if !self.normalized {
            return self.clone();
        }
        let mut out = self.clone();
        for t in &mut out.triplets {
            t.value *= self.global_max;
        }
        out.normalized = false;
        out
    }

    /// Factor that maps stored values back to the raw scale.
    pub fn raw_scale(&self) -> f64 {
        if self.normalized {
            self.global_max
        } else {
            1.0
        }
    }

    pub fn select(&self, indices: &[usize]) -> Vec<Triplet> {
        indices.iter().map(|&i| self.triplets[i]).collect()
    }
}
