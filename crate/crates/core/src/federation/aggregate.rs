use crate::error::{Error, Result};
use crate::params::ModelParameters;
use crate::prototype::PrototypeSet;

use super::ClientUpdate;

/// Updates in ascending client-id order, so sums are order-independent.
fn canonical(updates: &[ClientUpdate]) -> Vec<&ClientUpdate> {
    let mut sorted: Vec<&ClientUpdate> = updates.iter().collect();
    sorted.sort_by_key(|u| u.client_id);
    sorted
}

fn masked_mean(updates: &[&ClientUpdate], class: usize, dim: usize) -> Option<Vec<f64>> {
    let mut sum = vec![0.0; dim];
    let mut present = 0usize;
    for u in updates {
        if let Some(v) = u.new_prototypes.get(class) {
            for (s, x) in sum.iter_mut().zip(v) {
                *s += x;
            }
            present += 1;
        }
    }
    (present > 0).then(|| sum.into_iter().map(|s| s / present as f64).collect())
}

fn check_prototype_layout(updates: &[&ClientUpdate]) -> Result<(usize, usize)> {
    let first = updates
        .first()
        .ok_or_else(|| Error::Protocol("no client updates to aggregate".into()))?;
    let (k, q) = (first.new_prototypes.num_classes(), first.new_prototypes.dim());
    for u in updates {
        if u.new_prototypes.num_classes() != k || u.new_prototypes.dim() != q {
            return Err(Error::Protocol(format!(
                "client {} sent prototypes of a different layout",
                u.client_id
            )));
        }
    }
    Ok((k, q))
}

/// Per class, the unweighted mean over the clients that hold that class.
pub fn aggregate_prototypes(updates: &[ClientUpdate]) -> Result<PrototypeSet> {
    let updates = canonical(updates);
    let (k, q) = check_prototype_layout(&updates)?;
    let mut out = PrototypeSet::empty(k, q);
    for class in 0..k {
        let mean = masked_mean(&updates, class, q)
            .ok_or_else(|| Error::Protocol(format!("class {class} is absent from every participating client")))?;
        out.set(class, mean)?;
    }
    Ok(out)
}

/// Like [`aggregate_prototypes`], but a class no participant holds keeps
/// its vector from `previous`.
pub fn aggregate_prototypes_or_keep(updates: &[ClientUpdate], previous: &PrototypeSet) -> Result<PrototypeSet> {
    let updates = canonical(updates);
    let (k, q) = check_prototype_layout(&updates)?;
    if previous.num_classes() != k || previous.dim() != q || !previous.is_complete() {
        return Err(Error::Protocol(
            "previous global prototypes do not match the updates".into(),
        ));
    }
    let mut out = PrototypeSet::empty(k, q);
    for class in 0..k {
        let v = masked_mean(&updates, class, q).unwrap_or_else(|| previous.get(class).unwrap().to_vec());
        out.set(class, v)?;
    }
    Ok(out)
}

/// Entry-wise `Σ (|D_i| / Σ_j |D_j|) · w_i` over the given updates.
pub fn aggregate_weights(updates: &[ClientUpdate]) -> Result<ModelParameters> {
    let updates = canonical(updates);
    let first = updates
        .first()
        .ok_or_else(|| Error::Protocol("no client updates to aggregate".into()))?;
    for u in &updates {
        if !u.new_params.same_layout(&first.new_params) {
            return Err(Error::Protocol(format!(
                "client {} sent parameters with a different layout",
                u.client_id
            )));
        }
    }
    let total: usize = updates.iter().map(|u| u.num_samples).sum();
    if total == 0 {
        return Err(Error::Protocol("participating clients hold no samples".into()));
    }
    // w_1 + Σ_{i>1} share_i·(w_i − w_1): the same weighted mean, and exact
    // when every client returns the same weights
    let mut out = first.new_params.clone();
    for u in &updates[1..] {
        let share = u.num_samples as f64 / total as f64;
        for (i, (t, base)) in u.new_params.tensors().zip(first.new_params.tensors()).enumerate() {
            for ((o, w), w1) in out.tensor_mut(i).data_mut().iter_mut().zip(t.data()).zip(base.data()) {
                *o += share * (w - w1);
            }
        }
    }
    Ok(out)
}
