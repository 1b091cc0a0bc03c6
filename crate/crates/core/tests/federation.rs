use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fedproc::data::{dirichlet_partition, generate_blobs, ClientDataset, LabeledDataset, PartitionConfig};
use fedproc::federation::{
    aggregate_prototypes, aggregate_weights, client_local_training, compute_prototypes, sample_clients, ClientUpdate,
    LocalTrainingConfig,
};
use fedproc::gradcheck::{reference_loss, relative_error, CheckedLoss};
use fedproc::harness::{argmax, evaluate, prototype_alignment};
use fedproc::{Error, Federation, ModelParameters, Network, NetworkSpec, PrototypeSet, StrategyKind, Tensor};

fn local(strategy: StrategyKind, lr: f64, epochs: usize, batch: usize) -> LocalTrainingConfig {
    LocalTrainingConfig {
        strategy,
        epochs,
        batch_size: batch,
        learning_rate: lr,
        total_rounds: 4,
        alpha_override: None,
        seed: 13,
    }
}

fn toy_clients(m: usize, seed: u64) -> (Vec<ClientDataset>, LabeledDataset) {
    let (train, test) = generate_blobs(3, 4, 30, 0.3, seed)
        .unwrap()
        .split(0.2, seed + 1)
        .unwrap();
    let clients = dirichlet_partition(
        &train,
        &PartitionConfig {
            num_clients: m,
            beta: 1.0,
            seed: seed + 2,
        },
    )
    .unwrap();
    (clients, test)
}

fn toy_network() -> Network {
    Network::new(NetworkSpec::mlp(4, vec![6], 5, 3)).unwrap()
}

fn random_protos(rng: &mut ChaCha8Rng, k: usize, q: usize) -> PrototypeSet {
    PrototypeSet::from_vectors(
        (0..k)
            .map(|_| (0..q).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect(),
    )
    .unwrap()
}

fn update_with(id: usize, n: usize, params: ModelParameters, protos: PrototypeSet) -> ClientUpdate {
    ClientUpdate {
        client_id: id,
        new_params: params,
        new_prototypes: protos,
        num_samples: n,
        mean_train_loss: 0.0,
    }
}

/// Network whose layers are all the 2×2 identity, so z = x for x ≥ 0.
fn identity_network() -> (Network, ModelParameters) {
    let net = Network::new(NetworkSpec::mlp(2, vec![2], 2, 2)).unwrap();
    let mut params = net.init_params(0).zeros_like();
    for e in 0..params.len() {
        if params.tensor(e).shape().len() == 2 {
            params.tensor_mut(e).data_mut().copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        }
    }
    (net, params)
}

#[test]
fn constant_extractor_gives_constant_prototypes() {
    let net = toy_network();
    let mut params = net.init_params(0);
    let v = [0.5, -1.0, 2.0, 0.0, 3.0];
    // zero every feature-side weight, put v in the last projection bias
    let last_bias = params.partition_marker() - 1;
    for e in 0..params.partition_marker() {
        params.tensor_mut(e).data_mut().fill(0.0);
    }
    params.tensor_mut(last_bias).data_mut().copy_from_slice(&v);
    let (clients, _) = toy_clients(2, 1);
    for c in &clients {
        let protos = compute_prototypes(&net, &params, c).unwrap();
        for class in protos.present_classes() {
            assert_eq!(protos.get(class).unwrap(), &v);
        }
    }
}

#[test]
fn two_point_prototype_mean() {
    let (net, params) = identity_network();
    let data = LabeledDataset::new(vec![2], vec![1.0, 0.0, 0.0, 1.0, 3.0, 3.0], vec![0, 0, 1], 2).unwrap();
    let protos = compute_prototypes(&net, &params, &ClientDataset::new(0, data)).unwrap();
    assert_eq!(protos.get(0).unwrap(), &[0.5, 0.5]);
    assert_eq!(protos.get(1).unwrap(), &[3.0, 3.0]);
}

#[test]
fn prototypes_match_accumulate_and_divide() {
    let net = Network::new(NetworkSpec::mlp(3, vec![7], 4, 5)).unwrap();
    let params = net.init_params(8);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let labels: Vec<usize> = (0..50).map(|_| rng.gen_range(0..4)).collect(); // class 4 absent
    let features: Vec<f64> = (0..150).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let ds = ClientDataset::new(0, LabeledDataset::new(vec![3], features, labels.clone(), 5).unwrap());
    let got = compute_prototypes(&net, &params, &ds).unwrap();
    assert!(!got.is_present(4));
    for class in 0..4 {
        let mut sum = [0.0; 4];
        let mut n = 0.0;
        for i in (0..50).filter(|&i| labels[i] == class) {
            let x = Tensor::new(vec![1, 3], ds.data.features(i).to_vec()).unwrap();
            let z = net.forward_full(&params, &x).unwrap().z;
            for (s, v) in sum.iter_mut().zip(z.data()) {
                *s += v;
            }
            n += 1.0;
        }
        for (a, s) in got.get(class).unwrap().iter().zip(sum) {
            assert!((a - s / n).abs() <= 1e-12);
        }
    }
}

#[test]
fn masked_prototype_mean_over_holders_only() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let net = toy_network();
    let (k, q) = (3, 2);
    let updates: Vec<ClientUpdate> = (0..4)
        .map(|i| {
            let mut protos = random_protos(&mut rng, k, q);
            if i == 0 || i == 2 {
                // class 1 held by clients 1 and 3 only
                let mut p = PrototypeSet::empty(k, q);
                for c in [0, 2] {
                    p.set(c, protos.get(c).unwrap().to_vec()).unwrap();
                }
                protos = p;
            }
            update_with(i, 10 + i, net.init_params(i as u64), protos)
        })
        .collect();
    let agg = aggregate_prototypes(&updates).unwrap();
    let (a, b) = (
        updates[1].new_prototypes.get(1).unwrap(),
        updates[3].new_prototypes.get(1).unwrap(),
    );
    for d in 0..q {
        assert!((agg.get(1).unwrap()[d] - (a[d] + b[d]) / 2.0).abs() <= 1e-12);
    }
}

#[test]
fn aggregation_is_order_free_and_convex() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let net = toy_network();
    for _ in 0..20 {
        let m = rng.gen_range(2..7);
        let mut updates: Vec<ClientUpdate> = (0..m)
            .map(|i| {
                update_with(
                    i,
                    rng.gen_range(1..100),
                    net.init_params(rng.gen()),
                    random_protos(&mut rng, 3, 5),
                )
            })
            .collect();
        let w = aggregate_weights(&updates).unwrap();
        let c = aggregate_prototypes(&updates).unwrap();
        updates.shuffle(&mut rng);
        assert_eq!(aggregate_weights(&updates).unwrap(), w);
        assert_eq!(aggregate_prototypes(&updates).unwrap(), c);

        let flats: Vec<Vec<f64>> = updates.iter().map(|u| u.new_params.flatten()).collect();
        for (j, v) in w.flatten().iter().enumerate() {
            let lo = flats.iter().map(|f| f[j]).fold(f64::INFINITY, f64::min);
            let hi = flats.iter().map(|f| f[j]).fold(f64::NEG_INFINITY, f64::max);
            let slack = 4.0 * f64::EPSILON * lo.abs().max(hi.abs());
            assert!(*v >= lo - slack && *v <= hi + slack);
        }
    }
}

#[test]
fn missing_class_everywhere_is_named() {
    let net = toy_network();
    let mut p = PrototypeSet::empty(3, 5);
    p.set(0, vec![1.0; 5]).unwrap();
    p.set(2, vec![1.0; 5]).unwrap();
    let err = aggregate_prototypes(&[update_with(0, 1, net.init_params(0), p)]).unwrap_err();
    assert!(matches!(err.root(), Error::Protocol(m) if m.contains("class 1")));
}

#[test]
fn zero_learning_rate_is_a_no_op() {
    let net = toy_network();
    let (clients, _) = toy_clients(2, 6);
    let global = net.init_params(1);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let protos = random_protos(&mut rng, 3, 5);
    for strategy in [StrategyKind::FedProc, StrategyKind::FedAvg] {
        let u = client_local_training(
            &net,
            1,
            0,
            &global,
            Some(&protos),
            &clients[1],
            &local(strategy, 0.0, 2, 8),
        )
        .unwrap();
        assert_eq!(u.new_params, global);
        assert_eq!(
            u.new_prototypes,
            compute_prototypes(&net, &global, &clients[1]).unwrap()
        );
        assert_eq!(u.num_samples, clients[1].len());
    }
}

#[test]
fn single_batch_step_is_gradient_descent() {
    let net = toy_network();
    let (clients, _) = toy_clients(1, 7);
    let ds = &clients[0];
    let global = net.init_params(2);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let protos = random_protos(&mut rng, 3, 5);
    let lr = 0.05;
    // round 2 of 4: alpha = 0.5
    let cfg = local(StrategyKind::FedProc, lr, 1, ds.len());
    let u = client_local_training(&net, 0, 2, &global, Some(&protos), ds, &cfg).unwrap();

    let loss = CheckedLoss::Blend(0.5);
    let h = 1e-6;
    let mut probe = global.clone();
    let mut checked = 0;
    for e in 0..global.len() {
        for j in 0..global.tensor(e).len() {
            let w = global.tensor(e).data()[j];
            probe.tensor_mut(e).data_mut()[j] = w + h;
            let up = reference_loss(&net, &probe, &ds.data, &protos, loss).unwrap();
            probe.tensor_mut(e).data_mut()[j] = w - h;
            let down = reference_loss(&net, &probe, &ds.data, &protos, loss).unwrap();
            probe.tensor_mut(e).data_mut()[j] = w;
            let fd = (up - down) / (2.0 * h);
            let implied = (w - u.new_params.tensor(e).data()[j]) / lr;
            assert!(relative_error(implied, fd) < 1e-4, "entry {e}[{j}]: {implied} vs {fd}");
            checked += 1;
        }
    }
    assert_eq!(checked, global.num_scalars());
}

#[test]
fn fedavg_ignores_prototypes() {
    let net = toy_network();
    let (clients, _) = toy_clients(2, 8);
    let global = net.init_params(3);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cfg = local(StrategyKind::FedAvg, 0.1, 2, 8);
    let a = client_local_training(
        &net,
        0,
        1,
        &global,
        Some(&random_protos(&mut rng, 3, 5)),
        &clients[0],
        &cfg,
    )
    .unwrap();
    let b = client_local_training(
        &net,
        0,
        1,
        &global,
        Some(&random_protos(&mut rng, 3, 5)),
        &clients[0],
        &cfg,
    )
    .unwrap();
    let c = client_local_training(&net, 0, 1, &global, None, &clients[0], &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a, c);
}

#[test]
fn fedproc_needs_prototypes() {
    let net = toy_network();
    let (clients, _) = toy_clients(1, 9);
    let cfg = local(StrategyKind::FedProc, 0.1, 1, 8);
    assert!(client_local_training(&net, 0, 0, &net.init_params(0), None, &clients[0], &cfg).is_err());
}

#[test]
fn client_sampling() {
    assert_eq!(sample_clients(7, 1.0, 3).unwrap(), (0..7).collect::<Vec<_>>());
    let picked = sample_clients(100, 0.2, 11).unwrap();
    assert_eq!(picked.len(), 20);
    assert!(picked.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(picked, sample_clients(100, 0.2, 11).unwrap());
    assert_eq!(sample_clients(10, 0.01, 0).unwrap().len(), 1);
}

#[test]
fn single_client_round_adopts_its_update() {
    let net = toy_network();
    let (clients, test) = toy_clients(1, 10);
    let cfg = local(StrategyKind::FedProc, 0.1, 2, 8);
    let fed = Federation::new(net.clone(), clients.clone(), test, cfg.clone(), 1.0).unwrap();
    let state = fed.initial_state().unwrap();
    let (next, metrics) = fed.run_round(0, &state).unwrap();
    let direct = client_local_training(
        &net,
        0,
        0,
        &state.global_params,
        state.global_prototypes.as_ref(),
        &clients[0],
        &cfg,
    )
    .unwrap();
    assert_eq!(next.global_params, direct.new_params);
    assert_eq!(next.global_prototypes.as_ref(), Some(&direct.new_prototypes));
    assert_eq!(metrics.participants, vec![0]);
    assert_eq!(metrics.mean_train_loss, direct.mean_train_loss);
}

#[test]
fn zero_learning_rate_round_is_a_fixed_point() {
    let (clients, test) = toy_clients(3, 11);
    for strategy in [StrategyKind::FedProc, StrategyKind::FedAvg, StrategyKind::Solo] {
        let fed = Federation::new(
            toy_network(),
            clients.clone(),
            test.clone(),
            local(strategy, 0.0, 1, 8),
            1.0,
        )
        .unwrap();
        let state = fed.initial_state().unwrap();
        let (next, _) = fed.run_round(0, &state).unwrap();
        assert_eq!(next.global_params, state.global_params, "{strategy}");
        assert_eq!(next.solo_params, state.solo_params);
    }
}

#[test]
fn fedavg_round_matches_sequential_oracle() {
    let net = toy_network();
    let (clients, test) = toy_clients(3, 12);
    let cfg = local(StrategyKind::FedAvg, 0.1, 2, 8);
    let fed = Federation::new(net.clone(), clients.clone(), test.clone(), cfg.clone(), 1.0)
        .unwrap()
        .with_parallel(false);
    let state = fed.initial_state().unwrap();
    let (next, metrics) = fed.run_round(1, &state).unwrap();

    let trained: Vec<ModelParameters> = clients
        .iter()
        .map(|c| {
            client_local_training(&net, c.client_id, 1, &state.global_params, None, c, &cfg)
                .unwrap()
                .new_params
        })
        .collect();
    let total: usize = clients.iter().map(ClientDataset::len).sum();
    let flats: Vec<Vec<f64>> = trained.iter().map(ModelParameters::flatten).collect();
    for (j, v) in next.global_params.flatten().iter().enumerate() {
        let want: f64 = clients
            .iter()
            .zip(&flats)
            .map(|(c, f)| c.len() as f64 * f[j])
            .sum::<f64>()
            / total as f64;
        assert!((v - want).abs() <= 1e-12);
    }
    assert_eq!(
        metrics.top1_accuracy,
        evaluate(&net, &next.global_params, &test).unwrap()
    );
    assert_eq!(metrics.alpha, 0.75);
}

#[test]
fn partial_participation_uses_sampled_clients() {
    let (clients, test) = toy_clients(6, 13);
    let fed = Federation::new(
        toy_network(),
        clients,
        test,
        local(StrategyKind::FedProc, 0.1, 1, 8),
        0.5,
    )
    .unwrap();
    let state = fed.initial_state().unwrap();
    let (next, metrics) = fed.run_round(0, &state).unwrap();
    assert_eq!(metrics.participants.len(), 3);
    assert!(next.global_prototypes.unwrap().is_complete());
}

#[test]
fn constant_predictor_scores_one_over_k() {
    let net = Network::new(NetworkSpec::mlp(2, vec![3], 2, 4)).unwrap();
    let mut params = net.init_params(0).zeros_like();
    let bias = params.len() - 1;
    params
        .tensor_mut(bias)
        .data_mut()
        .copy_from_slice(&[0.0, 0.0, 5.0, 0.0]);
    let labels: Vec<usize> = (0..40).map(|i| i % 4).collect();
    let test = LabeledDataset::new(vec![2], vec![0.3; 80], labels, 4).unwrap();
    assert_eq!(evaluate(&net, &params, &test).unwrap(), 0.25);
}

#[test]
fn perfect_lookup_scores_one() {
    // identity network: logits equal the (non-negative) input
    let (net, params) = identity_network();
    let test = LabeledDataset::new(vec![2], vec![1.0, 0.0, 0.0, 2.0, 3.0, 1.0], vec![0, 1, 0], 2).unwrap();
    assert_eq!(evaluate(&net, &params, &test).unwrap(), 1.0);
}

#[test]
fn accuracy_matches_brute_force_count() {
    let net = Network::new(NetworkSpec::mlp(5, vec![8], 4, 6)).unwrap();
    let params = net.init_params(14);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let features: Vec<f64> = (0..1000).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let labels: Vec<usize> = (0..200).map(|_| rng.gen_range(0..6)).collect();
    let test = LabeledDataset::new(vec![5], features, labels.clone(), 6).unwrap();
    let mut correct = 0;
    for (i, &y) in labels.iter().enumerate() {
        let x = Tensor::new(vec![1, 5], test.features(i).to_vec()).unwrap();
        let s = net.forward_full(&params, &x).unwrap().s;
        let mut best = 0;
        for c in 1..6 {
            if s.data()[c] > s.data()[best] {
                best = c;
            }
        }
        correct += usize::from(best == y);
    }
    assert_eq!(evaluate(&net, &params, &test).unwrap(), correct as f64 / 200.0);
    assert_eq!(argmax(&[2.0, 2.0, 1.0]), 0);
}

#[test]
fn one_round_pulls_toward_own_prototype() {
    let (train, test) = generate_blobs(4, 8, 60, 0.1, 15).unwrap().split(0.2, 16).unwrap();
    let clients = dirichlet_partition(
        &train,
        &PartitionConfig {
            num_clients: 4,
            beta: 0.5,
            seed: 17,
        },
    )
    .unwrap();
    let net = Network::new(NetworkSpec::mlp(8, vec![16], 8, 4)).unwrap();
    let fed = Federation::new(net, clients, test, local(StrategyKind::FedProc, 0.1, 2, 16), 1.0).unwrap();
    let state = fed.initial_state().unwrap();
    let (next, _) = fed.run_round(0, &state).unwrap();
    let protos = next.global_prototypes.as_ref().unwrap();
    let al = prototype_alignment(fed.network(), &next.global_params, protos, fed.test_set()).unwrap();
    assert!(al.own_class > al.other_class, "{al:?}");
}
