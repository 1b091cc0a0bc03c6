//! Per-sample loss terms and the round-dependent blend between them.
//!
//! The prototypical contrastive term has no temperature. Its denominator
//! covers the own-class term plus every other class, which is a plain
//! softmax over all K similarities, so it reduces to
//! `logsumexp(sim) − sim_y` and is evaluated that way.

use crate::error::{Error, Result};
use crate::prototype::{PrototypeSet, UnitPrototypes};
use crate::tensor::{dot, l2_norm, log_sum_exp, softmax};

/// Position of a local-training phase within the experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoundSchedule {
    pub round: usize,
    pub total_rounds: usize,
}

impl RoundSchedule {
    pub fn new(round: usize, total_rounds: usize) -> Result<Self> {
        alpha(round, total_rounds)?;
        Ok(RoundSchedule { round, total_rounds })
    }

    pub fn alpha(&self) -> f64 {
        1.0 - self.round as f64 / self.total_rounds as f64
    }
}

/// Blend weight `1 − t/T` of the contrastive term in round `t` of `T`.
pub fn alpha(round: usize, total_rounds: usize) -> Result<f64> {
    if round >= total_rounds {
        return Err(Error::Usage(format!(
            "round {round} outside schedule of {total_rounds} rounds"
        )));
    }
    Ok(1.0 - round as f64 / total_rounds as f64)
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("cosine similarity", &[a.len()], &[b.len()]));
    }
    let (na, nb) = (l2_norm(a), l2_norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Degenerate("cosine similarity of a zero-norm vector".into()));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

pub fn cross_entropy(logits: &[f64], label: usize) -> Result<f64> {
    cross_entropy_with_grad(logits, label).map(|(loss, _)| loss)
}

/// Softmax cross-entropy and its gradient with respect to the logits.
pub fn cross_entropy_with_grad(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if logits.len() < 2 {
        return Err(Error::Usage(format!(
            "cross-entropy needs K >= 2, got {}",
            logits.len()
        )));
    }
    if label >= logits.len() {
        return Err(Error::Usage(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let loss = log_sum_exp(logits) - logits[label];
    let mut grad = softmax(logits);
    grad[label] -= 1.0;
    Ok((loss, grad))
}

pub fn gpc_loss(z: &[f64], label: usize, prototypes: &PrototypeSet) -> Result<f64> {
    let unit = UnitPrototypes::new(prototypes)?;
    gpc_loss_with_grad(z, label, &unit).map(|(loss, _)| loss)
}

/// Prototypical contrastive loss for one representation and its gradient
/// with respect to `z`. Prototypes are constants.
pub fn gpc_loss_with_grad(z: &[f64], label: usize, prototypes: &UnitPrototypes) -> Result<(f64, Vec<f64>)> {
    let k = prototypes.num_classes();
    if label >= k {
        return Err(Error::Usage(format!("label {label} out of range for {k} prototypes")));
    }
    if z.len() != prototypes.dim() {
        return Err(Error::shape("representation", &[prototypes.dim()], &[z.len()]));
    }
    let norm = l2_norm(z);
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::Degenerate(format!("representation has norm {norm}")));
    }
    let unit_z: Vec<f64> = z.iter().map(|v| v / norm).collect();
    let sims: Vec<f64> = (0..k).map(|c| dot(&unit_z, prototypes.row(c))).collect();
    let loss = log_sum_exp(&sims) - sims[label];

    // d sim_c / dz = (ĉ_c − sim_c·ẑ) / ‖z‖
    let mut coeff = softmax(&sims);
    coeff[label] -= 1.0;
    let mut grad = vec![0.0; z.len()];
    let mut radial = 0.0;
    for c in 0..k {
        if coeff[c] == 0.0 {
            continue;
        }
        radial += coeff[c] * sims[c];
        for (g, p) in grad.iter_mut().zip(prototypes.row(c)) {
            *g += coeff[c] * p;
        }
    }
    for (g, u) in grad.iter_mut().zip(&unit_z) {
        *g = (*g - radial * u) / norm;
    }
    Ok((loss, grad))
}

/// `α·gpc + (1−α)·ce` for a single sample.
pub fn blended_loss(
    z: &[f64],
    logits: &[f64],
    label: usize,
    prototypes: &PrototypeSet,
    schedule: RoundSchedule,
) -> Result<f64> {
    let a = schedule.alpha();
    Ok(a * gpc_loss(z, label, prototypes)? + (1.0 - a) * cross_entropy(logits, label)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn orthonormal(k: usize) -> PrototypeSet {
        PrototypeSet::from_vectors(
            (0..k)
                .map(|i| (0..k).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 2.0]).unwrap(), 0.0);
        let v = cosine_similarity(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((v - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!(matches!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn gpc_orthonormal_case() {
        // −log(e / (e + 2)) from a separate scalar evaluation
        let l = gpc_loss(&[1.0, 0.0, 0.0], 0, &orthonormal(3)).unwrap();
        assert!((l - 0.551444).abs() < 1e-6, "{l}");
    }

    #[test]
    fn gpc_symmetric_case_is_log_k() {
        // z orthogonal to all three prototypes
        let protos = PrototypeSet::from_vectors(vec![
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 0.0],
        ])
        .unwrap();
        let l = gpc_loss(&[0.0, 0.0, 0.0, 3.0], 1, &protos).unwrap();
        assert!((l - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn gpc_errors() {
        let mut protos = PrototypeSet::empty(2, 2);
        protos.set(0, vec![1.0, 0.0]).unwrap();
        assert!(matches!(gpc_loss(&[1.0, 1.0], 0, &protos), Err(Error::Protocol(_))));
        protos.set(1, vec![0.0, 1.0]).unwrap();
        assert!(matches!(gpc_loss(&[0.0, 0.0], 0, &protos), Err(Error::Degenerate(_))));
        protos.set(1, vec![0.0, 0.0]).unwrap();
        assert!(matches!(gpc_loss(&[1.0, 0.0], 0, &protos), Err(Error::Degenerate(_))));
    }

    #[test]
    fn cross_entropy_examples() {
        let uniform = cross_entropy(&[0.3; 10], 4).unwrap();
        assert!((uniform - 10f64.ln()).abs() < 1e-12);

        let mut saturated = vec![0.0; 5];
        saturated[2] = 50.0;
        assert!(cross_entropy(&saturated, 2).unwrap() < 1e-9);

        let l = cross_entropy(&[1.0, 2.0, 3.0], 2).unwrap();
        assert!((l - 0.407606).abs() < 1e-6);

        assert!(matches!(cross_entropy(&[1.0, 2.0], 2), Err(Error::Usage(_))));
        assert!(matches!(cross_entropy(&[1.0], 0), Err(Error::Usage(_))));
    }

    #[test]
    fn alpha_schedule() {
        assert_eq!(alpha(0, 100).unwrap(), 1.0);
        assert_eq!(alpha(50, 100).unwrap(), 0.5);
        assert!((alpha(99, 100).unwrap() - 0.01).abs() < 1e-15);
        assert!(alpha(100, 100).is_err());
        for t in 1..100 {
            assert!(alpha(t, 100).unwrap() < alpha(t - 1, 100).unwrap());
        }
    }

    #[test]
    fn blend_endpoints() {
        let protos = orthonormal(3);
        let z = [0.3, -0.2, 0.9];
        let s = [0.1, 1.5, -0.4];
        let gpc = gpc_loss(&z, 2, &protos).unwrap();
        let ce = cross_entropy(&s, 2).unwrap();
        let first = blended_loss(&z, &s, 2, &protos, RoundSchedule::new(0, 10).unwrap()).unwrap();
        assert_eq!(first, gpc);
        let mid = blended_loss(&z, &s, 2, &protos, RoundSchedule::new(5, 10).unwrap()).unwrap();
        assert!((mid - 0.5 * (gpc + ce)).abs() < 1e-15);
    }
}
