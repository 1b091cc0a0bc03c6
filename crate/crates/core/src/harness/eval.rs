use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::federation::EVAL_CHUNK;
use crate::losses::cosine_similarity;
use crate::model::Network;
use crate::params::ModelParameters;
use crate::prototype::PrototypeSet;

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Top-1 accuracy of `params` on `test`.
pub fn evaluate(network: &Network, params: &ModelParameters, test: &LabeledDataset) -> Result<f64> {
    let indices: Vec<usize> = (0..test.len()).collect();
    let mut correct = 0usize;
    for chunk in indices.chunks(EVAL_CHUNK) {
        let logits = network.forward_full(params, &test.batch_tensor(chunk))?.s;
        for (row, &i) in chunk.iter().enumerate() {
            if argmax(logits.row(row)) == test.labels()[i] {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / test.len() as f64)
}

/// Mean cosine similarity of test representations to their own-class
/// prototype, and to every other class's prototype.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrototypeAlignment {
    pub own_class: f64,
    pub other_class: f64,
}

impl PrototypeAlignment {
    pub fn gap(&self) -> f64 {
        self.own_class - self.other_class
    }
}

pub fn prototype_alignment(
    network: &Network,
    params: &ModelParameters,
    prototypes: &PrototypeSet,
    test: &LabeledDataset,
) -> Result<PrototypeAlignment> {
    if !prototypes.is_complete() {
        return Err(Error::Protocol("alignment needs a complete prototype set".into()));
    }
    let k = prototypes.num_classes();
    let z = network.extract_representation(params, &test.all_features())?;
    let (mut own, mut other) = (0.0, 0.0);
    let mut other_count = 0usize;
    for (i, &y) in test.labels().iter().enumerate() {
        for c in 0..k {
            let sim = cosine_similarity(z.row(i), prototypes.get(c).unwrap())?;
            if c == y {
                own += sim;
            } else {
                other += sim;
                other_count += 1;
            }
        }
    }
    Ok(PrototypeAlignment {
        own_class: own / test.len() as f64,
        other_class: other / other_count.max(1) as f64,
    })
}
