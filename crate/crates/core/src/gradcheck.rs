//! Central finite-difference checks of the reverse-mode gradients.
//!
//! The numeric side evaluates the loss through a plain forward pass and the
//! scalar loss functions, never through the autodiff graph. A probe whose
//! ±h step flips a ReLU or max-pool decision is skipped: the loss has a kink
//! there and a central difference does not estimate the derivative.

use std::sync::Arc;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{ClientDataset, LabeledDataset};
use crate::error::Result;
use crate::federation::{loss_and_gradients, Objective};
use crate::losses::{cross_entropy, gpc_loss};
use crate::model::{Network, NetworkSpec};
use crate::params::ModelParameters;
use crate::prototype::{PrototypeSet, UnitPrototypes};
use crate::seed::derive_seed;

pub const FD_STEP: f64 = 1e-5;
pub const MAX_RELATIVE_ERROR: f64 = 1e-4;
/// Denominator floor for the relative error, so components that are
/// zero analytically are judged on absolute error instead.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

/// Which loss a check differentiates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CheckedLoss {
    CrossEntropy,
    Contrastive,
    Blend(f64),
}

impl CheckedLoss {
    pub fn label(&self) -> String {
        match self {
            CheckedLoss::CrossEntropy => "ce".into(),
            CheckedLoss::Contrastive => "gpc".into(),
            CheckedLoss::Blend(a) => format!("blend(alpha={a})"),
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Mean per-sample loss computed without the graph.
pub fn reference_loss(
    network: &Network,
    params: &ModelParameters,
    data: &LabeledDataset,
    prototypes: &PrototypeSet,
    loss: CheckedLoss,
) -> Result<f64> {
    reference_loss_with_pattern(network, params, data, prototypes, loss).map(|(l, _)| l)
}

fn reference_loss_with_pattern(
    network: &Network,
    params: &ModelParameters,
    data: &LabeledDataset,
    prototypes: &PrototypeSet,
    loss: CheckedLoss,
) -> Result<(f64, Vec<u64>)> {
    let (act, pattern) = network.forward_with_pattern(params, &data.all_features())?;
    let mut total = 0.0;
    for (i, &y) in data.labels().iter().enumerate() {
        let (z, s) = (act.z.row(i), act.s.row(i));
        total += match loss {
            CheckedLoss::CrossEntropy => cross_entropy(s, y)?,
            CheckedLoss::Contrastive => gpc_loss(z, y, prototypes)?,
            CheckedLoss::Blend(a) => a * gpc_loss(z, y, prototypes)? + (1.0 - a) * cross_entropy(s, y)?,
        };
    }
    Ok((total / data.len() as f64, pattern))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointReport {
    pub components_checked: usize,
    /// Probed components whose ±h step crossed a ReLU or max-pool switch,
    /// where a central difference does not estimate the derivative.
    pub kinks_skipped: usize,
    pub max_relative_error: f64,
    /// Parameter entry name and flat index of the worst component.
    pub worst: (String, usize),
}

/// Compares analytic and central-difference gradients at one parameter
/// point. `per_entry` limits how many components of each entry are probed
/// (chosen at random); `None` probes all of them. Components whose step
/// changes the network's activation pattern are skipped and, when sampling,
/// replaced by another random component of the same entry.
pub fn check_point(
    network: &Network,
    params: &ModelParameters,
    data: &LabeledDataset,
    prototypes: &PrototypeSet,
    loss: CheckedLoss,
    per_entry: Option<usize>,
    rng: &mut ChaCha8Rng,
) -> Result<PointReport> {
    let client = ClientDataset::new(0, data.clone());
    let batch: Vec<usize> = (0..data.len()).collect();
    let objective = match loss {
        CheckedLoss::CrossEntropy => Objective::CrossEntropy,
        CheckedLoss::Contrastive => Objective::Blended {
            alpha: 1.0,
            prototypes: Arc::new(UnitPrototypes::new(prototypes)?),
        },
        CheckedLoss::Blend(alpha) => Objective::Blended {
            alpha,
            prototypes: Arc::new(UnitPrototypes::new(prototypes)?),
        },
    };
    let (_, grads) = loss_and_gradients(network, params, &client, &batch, &objective)?;

    let (_, base_pattern) = reference_loss_with_pattern(network, params, data, prototypes, loss)?;
    let mut report = PointReport {
        components_checked: 0,
        kinks_skipped: 0,
        max_relative_error: 0.0,
        worst: (String::new(), 0),
    };
    let mut probe = params.clone();
    for (e, (name, tensor)) in params.entries().iter().enumerate() {
        let n = tensor.len();
        // random order when sampling; walk past kinks until `want` are checked
        let (order, want): (Vec<usize>, usize) = match per_entry {
            Some(k) if k < n => (sample(rng, n, n).into_vec(), k),
            _ => ((0..n).collect(), n),
        };
        let mut checked = 0;
        for j in order {
            if checked == want {
                break;
            }
            let original = tensor.data()[j];
            probe.tensor_mut(e).data_mut()[j] = original + FD_STEP;
            let (up, up_pattern) = reference_loss_with_pattern(network, &probe, data, prototypes, loss)?;
            probe.tensor_mut(e).data_mut()[j] = original - FD_STEP;
            let (down, down_pattern) = reference_loss_with_pattern(network, &probe, data, prototypes, loss)?;
            probe.tensor_mut(e).data_mut()[j] = original;
            if up_pattern != base_pattern || down_pattern != base_pattern {
                report.kinks_skipped += 1;
                continue;
            }
            checked += 1;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let err = relative_error(grads.get(e).data()[j], numeric);
            report.components_checked += 1;
            if err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst = (name.clone(), j);
            }
        }
    }
    Ok(report)
}

/// One network/loss combination checked at several random points.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseReport {
    pub name: String,
    pub points: Vec<PointReport>,
}

impl CaseReport {
    pub fn max_relative_error(&self) -> f64 {
        self.points.iter().map(|p| p.max_relative_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_relative_error() <= MAX_RELATIVE_ERROR
    }

    pub fn components_checked(&self) -> usize {
        self.points.iter().map(|p| p.components_checked).sum()
    }

    pub fn kinks_skipped(&self) -> usize {
        self.points.iter().map(|p| p.kinks_skipped).sum()
    }
}

/// Small networks used by the suite: an MLP (every component checked) and
/// the two-convolution CNN on 16×16×3 input (a random sample per entry).
pub fn suite_networks() -> Vec<(&'static str, NetworkSpec, Option<usize>)> {
    vec![
        ("mlp", NetworkSpec::mlp(6, vec![7, 5], 4, 3), None),
        (
            "small_cnn",
            NetworkSpec::small_cnn([16, 16, 3], vec![10, 8], 6, 4),
            Some(12),
        ),
    ]
}

pub fn suite_losses() -> Vec<CheckedLoss> {
    vec![
        CheckedLoss::CrossEntropy,
        CheckedLoss::Contrastive,
        CheckedLoss::Blend(0.0),
        CheckedLoss::Blend(0.5),
        CheckedLoss::Blend(1.0),
    ]
}

/// Random inputs, labels covering every class, and random prototypes.
fn random_problem(network: &Network, batch: usize, rng: &mut ChaCha8Rng) -> Result<(LabeledDataset, PrototypeSet)> {
    let spec = network.spec();
    let width: usize = spec.input_shape.iter().product();
    let k = spec.num_classes;
    let features = (0..batch * width).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let labels = (0..batch).map(|i| i % k).collect();
    let data = LabeledDataset::new(spec.input_shape.clone(), features, labels, k)?;
    let protos = PrototypeSet::from_vectors(
        (0..k)
            .map(|_| (0..spec.projection_dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect(),
    )?;
    Ok((data, protos))
}

/// Every suite network × every suite loss, at `points` random parameter
/// points each.
pub fn run_suite(points: usize, seed: u64) -> Result<Vec<CaseReport>> {
    let mut reports = Vec::new();
    for (net_idx, (net_name, spec, per_entry)) in suite_networks().into_iter().enumerate() {
        let network = Network::new(spec)?;
        for (loss_idx, loss) in suite_losses().into_iter().enumerate() {
            let mut case = CaseReport {
                name: format!("{net_name}/{}", loss.label()),
                points: Vec::with_capacity(points),
            };
            for p in 0..points {
                let point_seed = derive_seed(seed, &[net_idx as u64, loss_idx as u64, p as u64]);
                let mut rng = ChaCha8Rng::seed_from_u64(point_seed);
                let params = network.init_params(rng.gen());
                let batch = network.spec().num_classes + 1;
                let (data, protos) = random_problem(&network, batch, &mut rng)?;
                case.points.push(check_point(
                    &network, &params, &data, &protos, loss, per_entry, &mut rng,
                )?);
            }
            reports.push(case);
        }
    }
    Ok(reports)
}
