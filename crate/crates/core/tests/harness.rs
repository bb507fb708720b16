mod common;

use common::small_config;
use plab::harness::{
    probe_plasticity, probe_plasticity_decoded, q_values, run_bandit_dqn, run_iterated_training, run_offset_dose_response,
    run_seed_grid, run_task_switch_microscope, BanditConfig, DoseConfig, MicroscopeConfig, ProbeConfig, RecordKind,
    ReplayBuffer, DEFAULT_REPLAY_CAPACITY,
};
use plab::io::parse_config;
use plab::nn::{ActivationKind, Network, NetworkSpec, NormPlacement, TwoHotCodec};
use plab::par::Exec;
use plab::rng::{substream, Stream};
use plab::harness::LossKind;
use plab::tasks::{synth_dataset, BanditMDP};
use plab::Error;
use serde_json::json;

fn config(mode: serde_json::Value, spt: u64, tasks: usize) -> plab::harness::ExperimentConfig {
    parse_config(&small_config(mode, spt, tasks)).unwrap().value
}

#[test]
fn reruns_are_identical() {
    let c = config(json!({"kind": "random_labels", "epsilon": 0.5}), 30, 3);
    let a = run_iterated_training(&c, 1).unwrap();
    let b = run_iterated_training(&c, 1).unwrap();
    assert_eq!(a, b);
    assert!(!a.heavy.is_empty());
    let grid = run_seed_grid(&c, Exec::Parallel);
    assert_eq!(grid.len(), 2);
    assert_eq!(grid[1].1.as_ref().unwrap(), &a);
}

#[test]
fn zero_tasks_logs_nothing() {
    let c = config(json!({"kind": "stationary"}), 10, 0);
    let log = run_iterated_training(&c, 0).unwrap();
    assert!(log.records.is_empty() && log.heavy.is_empty());
}

#[test]
fn stationary_task_is_learned() {
    let c = config(json!({"kind": "stationary"}), 600, 1);
    let log = run_iterated_training(&c, 0).unwrap();
    let last = log.records.last().unwrap();
    assert_eq!(last.kind, RecordKind::Final);
    assert_eq!(last.step, 600);
    assert!(last.accuracy.unwrap() > 0.95, "{last:?}");
}

#[test]
fn switches_produce_paired_records_in_step_order() {
    let c = config(json!({"kind": "permute_classes"}), 25, 4);
    let log = run_iterated_training(&c, 0).unwrap();
    assert!(log.records.windows(2).all(|w| w[0].step < w[1].step));
    let pairs = log.boundaries();
    assert_eq!(pairs.len(), 3);
    for (k, (before, after)) in pairs.iter().enumerate() {
        assert_eq!(before.task, k);
        assert_eq!(after.task, k + 1);
        assert_eq!(before.step + 1, after.step);
        assert_eq!(after.step, 25 * (k as u64 + 1) + 1);
    }
    assert_eq!(log.task_finals().len(), 4);
}

fn probe_net() -> (Network, plab::Tensor) {
    let ds = synth_dataset(4, 8, 16, 2).unwrap();
    let spec = NetworkSpec::mlp(8, &[64, 64], 3, ActivationKind::Relu, NormPlacement::None);
    (Network::init(&spec, 5).unwrap(), ds.inputs)
}

#[test]
fn probe_starts_at_rho_squared_and_scales_quadratically() {
    let (net, x) = probe_net();
    for rho in [0.5, 1.0, 3.0] {
        let p = ProbeConfig {
            rho,
            steps: 1,
            ..Default::default()
        };
        let r = probe_plasticity(&net, &p, &x).unwrap();
        assert!((r.initial_loss - rho * rho).abs() < 1e-10 * rho * rho);
        let double = ProbeConfig { rho: 2.0 * rho, ..p };
        let r2 = probe_plasticity(&net, &double, &x).unwrap();
        assert!((r2.initial_loss / r.initial_loss - 4.0).abs() < 1e-10);
    }
}

#[test]
fn probe_leaves_checkpoint_alone_and_fresh_net_fits() {
    let (net, x) = probe_net();
    let before = net.flat_params();
    let r = probe_plasticity(&net, &ProbeConfig::default(), &x).unwrap();
    assert_eq!(net.flat_params(), before);
    assert!(!r.diverged);
    assert!(r.final_loss < 0.5, "{:?}", r.curve);
    assert_eq!(r.curve.first().unwrap().0, 0);
    assert_eq!(r.curve.last().unwrap().0, 2000);
}

#[test]
fn decoded_probe_measures_value_space() {
    let codec = TwoHotCodec::new(4, 0.1).unwrap();
    let spec = NetworkSpec::mlp(8, &[32], 2 * codec.num_atoms(), ActivationKind::Relu, NormPlacement::None);
    let net = Network::init(&spec, 1).unwrap();
    let x = synth_dataset(4, 8, 8, 2).unwrap().inputs;
    let p = ProbeConfig {
        steps: 300,
        ..Default::default()
    };
    let r = probe_plasticity_decoded(&net, &codec, &p, &x).unwrap();
    assert!((r.initial_loss - 1.0).abs() < 1e-10);
    assert!(r.final_loss < 0.5 * r.initial_loss, "{:?}", r.curve);
    let wrong = TwoHotCodec::new(5, 0.0).unwrap();
    assert!(probe_plasticity_decoded(&net, &wrong, &p, &x).is_err());
}

#[test]
fn replay_buffer_evicts_oldest_at_capacity() {
    let mut b = ReplayBuffer::new(DEFAULT_REPLAY_CAPACITY).unwrap();
    for i in 0..DEFAULT_REPLAY_CAPACITY {
        assert!(b.push(i).is_none());
    }
    for i in 0..10 {
        assert_eq!(b.push(DEFAULT_REPLAY_CAPACITY + i), Some(i));
    }
    assert_eq!(b.len(), DEFAULT_REPLAY_CAPACITY);
    assert_eq!(*b.iter().next().unwrap(), 10);
    let mut rng = substream(0, Stream::Bandit, 9);
    assert!(b.sample(&mut rng, 64).iter().all(|&&v| v >= 10));
    assert!(ReplayBuffer::<u8>::new(0).is_err());
}

#[test]
fn myopic_two_hot_agent_learns_the_reward() {
    let alpha = 1.0;
    let ds = synth_dataset(4, 8, 25, 0).unwrap();
    let mdp = BanditMDP::new(ds.clone(), alpha, 0.0).unwrap();
    let cfg = BanditConfig {
        hidden: vec![64, 64],
        head: LossKind::TwoHot {
            bound: 2,
            smoothing: 0.0,
        },
        steps: 6000,
        batch_size: 64,
        target_period: 100,
        cadence: 500,
        checkpoint_every: Some(1000),
        ..Default::default()
    };
    let run = run_bandit_dqn(&mdp, &cfg).unwrap();
    assert_eq!(run.checkpoints.len(), 6);
    let q = q_values(&run.net, run.codec.as_ref(), &ds.inputs, 4).unwrap();
    let labels = ds.labels().unwrap();
    let mut worst: f64 = 0.0;
    for (i, &l) in labels.iter().enumerate() {
        worst = worst.max((q.row(i)[l] - alpha).abs());
        let greedy = q.row(i).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!((greedy - alpha).abs() < 0.1 * alpha, "state {i}: {:?}", q.row(i));
    }
    assert!(worst < 0.1 * alpha, "{worst}");
}

#[test]
fn two_hot_bound_must_cover_the_value_range() {
    let mdp = BanditMDP::new(synth_dataset(3, 4, 5, 0).unwrap(), 1.0, 0.99).unwrap();
    let cfg = BanditConfig {
        head: LossKind::TwoHot {
            bound: 50,
            smoothing: 0.1,
        },
        ..Default::default()
    };
    match run_bandit_dqn(&mdp, &cfg) {
        Err(Error::TwoHotRange { bound: 50, value }) => assert!((value - 100.0).abs() < 1e-9),
        other => panic!("{:?}", other.map(|r| r.records)),
    }
}

#[test]
fn dose_rows_cover_every_offset_and_seed() {
    let cfg = DoseConfig {
        hidden: vec![16, 16],
        samples: 128,
        offsets: vec![8.0, 0.0],
        seeds: vec![0, 1],
        pretrain_steps: 20,
        finetune_steps: 20,
        batch_size: 32,
        ..Default::default()
    };
    let rows = run_offset_dose_response(&cfg, Exec::Parallel).unwrap();
    assert_eq!(rows.iter().map(|r| r.offset).collect::<Vec<_>>(), vec![0.0, 8.0]);
    for r in &rows {
        assert_eq!(r.per_seed.len(), 2);
        let mean = r.per_seed.iter().map(|s| s.2).sum::<f64>() / 2.0;
        assert!((mean - r.finetune_loss).abs() < 1e-12);
    }
    assert_eq!(rows, run_offset_dose_response(&cfg, Exec::Sequential).unwrap());
    // A large pretraining offset leaves a large loss before fine-tuning adapts.
    assert!(rows[1].pretrain_loss > rows[0].pretrain_loss);
}

#[test]
fn microscope_logs_both_variants_from_one_checkpoint() {
    let cfg = MicroscopeConfig {
        hidden: vec![32, 32],
        num_classes: 4,
        input_dim: 8,
        n_per_class: 20,
        pretrain_steps: 200,
        steps: 15,
        batch_size: 32,
        probe_size: 80,
        ..Default::default()
    };
    let r = run_task_switch_microscope(&cfg).unwrap();
    assert_eq!(r.persisted.len(), 16);
    assert_eq!(r.reset.len(), 16);
    // Step 0 is the shared checkpoint on the new labels.
    assert_eq!(r.persisted[0], r.reset[0]);
    assert_ne!(r.persisted[1].loss, r.reset[1].loss);
    assert!(r.persisted.iter().all(|m| (0.0..=1.0).contains(&m.accuracy)));
}
