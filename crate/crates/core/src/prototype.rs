use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::l2_norm;

/// Per-class mean representations in projection space.
///
/// A client-side set may lack classes the client never saw; a global set
/// broadcast by the server has every class present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeSet {
    dim: usize,
    vectors: Vec<Option<Vec<f64>>>,
}

impl PrototypeSet {
    pub fn empty(num_classes: usize, dim: usize) -> Self {
        PrototypeSet {
            dim,
            vectors: vec![None; num_classes],
        }
    }

    /// A complete set from one vector per class.
    pub fn from_vectors(vectors: Vec<Vec<f64>>) -> Result<Self> {
        let dim = vectors
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::Usage("prototype set needs at least one class".into()))?;
        let mut set = PrototypeSet::empty(vectors.len(), dim);
        for (k, v) in vectors.into_iter().enumerate() {
            set.set(k, v)?;
        }
        Ok(set)
    }

    pub fn set(&mut self, class: usize, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::shape(
                format!("prototype for class {class}"),
                &[self.dim],
                &[vector.len()],
            ));
        }
        let slot = self
            .vectors
            .get_mut(class)
            .ok_or_else(|| Error::Usage(format!("class {class} out of range")))?;
        *slot = Some(vector);
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.vectors.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, class: usize) -> Option<&[f64]> {
        self.vectors.get(class).and_then(|v| v.as_deref())
    }

    pub fn is_present(&self, class: usize) -> bool {
        self.get(class).is_some()
    }

    pub fn present_classes(&self) -> Vec<usize> {
        (0..self.num_classes()).filter(|&k| self.is_present(k)).collect()
    }

    pub fn is_complete(&self) -> bool {
        self.vectors.iter().all(Option::is_some)
    }
}

/// A complete prototype set with each vector scaled to unit length, ready
/// for repeated cosine-similarity evaluation.
#[derive(Debug, Clone)]
pub struct UnitPrototypes {
    dim: usize,
    /// Row-major `(K, Q)`.
    rows: Vec<f64>,
}

impl UnitPrototypes {
    pub fn new(set: &PrototypeSet) -> Result<Self> {
        let mut rows = Vec::with_capacity(set.num_classes() * set.dim());
        for k in 0..set.num_classes() {
            let v = set
                .get(k)
                .ok_or_else(|| Error::Protocol(format!("prototype for class {k} is missing")))?;
            let norm = l2_norm(v);
            if !(norm.is_finite() && norm > 0.0) {
                return Err(Error::Degenerate(format!("prototype for class {k} has norm {norm}")));
            }
            rows.extend(v.iter().map(|x| x / norm));
        }
        Ok(UnitPrototypes { dim: set.dim(), rows })
    }

    pub fn num_classes(&self) -> usize {
        self.rows.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.rows[k * self.dim..(k + 1) * self.dim]
    }
}
