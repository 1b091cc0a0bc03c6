//! Named parameter collections, their gradients, SGD, and the checkpoint file.
//!
//! Checkpoint layout (all integers little-endian):
//!
//! ```text
//! magic     b"FPCK"
//! version   u8 = 1
//! count     u32            number of entries
//! marker    u32            index of the first output-layer entry
//! entries   count × { name_len u32, name utf8, ndim u32, dims u64×ndim, data f64×len }
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FPCK";
pub const CHECKPOINT_VERSION: u8 = 1;

/// All learnable weights of a network, in a fixed order.
///
/// Entries before `partition_marker` belong to the feature extractor
/// (encoder and projection head); the rest belong to the output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    entries: Vec<(String, Tensor)>,
    partition_marker: usize,
}

impl ModelParameters {
    pub fn new(entries: Vec<(String, Tensor)>, partition_marker: usize) -> Result<Self> {
        if partition_marker > entries.len() {
            return Err(Error::Config(format!(
                "partition marker {partition_marker} beyond {} entries",
                entries.len()
            )));
        }
        Ok(ModelParameters {
            entries,
            partition_marker,
        })
    }

    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.entries.iter().map(|(_, t)| t)
    }

    pub fn tensor(&self, i: usize) -> &Tensor {
        &self.entries[i].1
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.entries[i].1
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn partition_marker(&self) -> usize {
        self.partition_marker
    }

    /// Feature-extractor entries (encoder + projection head).
    pub fn feature_entries(&self) -> &[(String, Tensor)] {
        &self.entries[..self.partition_marker]
    }

    /// Output-layer entries.
    pub fn classifier_entries(&self) -> &[(String, Tensor)] {
        &self.entries[self.partition_marker..]
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().map(Tensor::len).sum()
    }

    /// True when `other` has the same names, order, shapes and split.
    pub fn same_layout(&self, other: &ModelParameters) -> bool {
        self.partition_marker == other.partition_marker
            && self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|((na, ta), (nb, tb))| na == nb && ta.shape() == tb.shape())
    }

    /// A copy with every value set to zero.
    pub fn zeros_like(&self) -> ModelParameters {
        ModelParameters {
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), Tensor::zeros(t.shape())))
                .collect(),
            partition_marker: self.partition_marker,
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.num_scalars() * 8);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.push(CHECKPOINT_VERSION);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.partition_marker as u32).to_le_bytes());
        for (name, tensor) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
            for &d in tensor.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(r.err("bad checkpoint magic"));
        }
        let version = r.take(1)?[0];
        if version != CHECKPOINT_VERSION {
            return Err(r.err(&format!("unsupported checkpoint version {version}")));
        }
        let count = r.u32()? as usize;
        let marker = r.u32()? as usize;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|_| r.err("entry name is not utf-8"))?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let len: usize = shape.iter().product();
            let data = r
                .take(len * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            entries.push((name, Tensor::new(shape, data).map_err(|e| r.err(&e.to_string()))?));
        }
        if r.pos != bytes.len() {
            return Err(r.err("trailing bytes after last entry"));
        }
        ModelParameters::new(entries, marker)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        f.write_all(&self.to_bytes())
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_bytes(&bytes).map_err(|e| e.with_context(path.display().to_string()))
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn err(&self, message: &str) -> Error {
        Error::Ingestion {
            path: "<checkpoint>".into(),
            offset: self.pos as u64,
            message: message.to_string(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err("truncated checkpoint"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// `∂loss/∂w` for each entry of a [`ModelParameters`], in the same order.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    grads: Vec<Tensor>,
}

impl GradientSet {
    pub fn zeros_for(params: &ModelParameters) -> Self {
        GradientSet {
            grads: params.tensors().map(|t| Tensor::zeros(t.shape())).collect(),
        }
    }

    pub fn from_tensors(grads: Vec<Tensor>) -> Self {
        GradientSet { grads }
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.grads
    }

    pub fn get(&self, i: usize) -> &Tensor {
        &self.grads[i]
    }

    pub(crate) fn accumulate(&mut self, i: usize, grad: &Tensor) {
        self.grads[i].scaled_add(1.0, grad);
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.grads.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn matches(&self, params: &ModelParameters) -> bool {
        self.grads.len() == params.len()
            && self
                .grads
                .iter()
                .zip(params.tensors())
                .all(|(g, p)| g.shape() == p.shape())
    }
}

/// Plain SGD: `w ← w − lr·g` for every entry.
pub fn sgd_step(params: &ModelParameters, grads: &GradientSet, lr: f64) -> Result<ModelParameters> {
    let mut next = params.clone();
    sgd_step_in_place(&mut next, grads, lr)?;
    Ok(next)
}

pub fn sgd_step_in_place(params: &mut ModelParameters, grads: &GradientSet, lr: f64) -> Result<()> {
    if !(lr.is_finite() && lr > 0.0) {
        return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
    }
    if !grads.matches(params) {
        return Err(Error::Usage("gradient set does not match parameters".into()));
    }
    for (i, g) in grads.tensors().iter().enumerate() {
        params.tensor_mut(i).scaled_add(-lr, g);
    }
    Ok(())
}
