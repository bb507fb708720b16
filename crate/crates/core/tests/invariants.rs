mod common;

use common::{gaussians, random_matrix};
use plab::diagnostics::{census_from_trace, entk_gram, feature_matrix_svd, unit_census};
use plab::harness::ReplayBuffer;
use plab::io::{checkpoint_from_str, checkpoint_to_string, Checkpoint};
use plab::nn::{ActivationKind, LayerSpec, Mode, Network, NetworkSpec, NormPlacement, TwoHotCodec};
use plab::optim::{apply_l2, redo_reset, rescale_weights_to_init, unit_activity, OptimizerConfig, OptimizerState};
use plab::par::Exec;
use plab::rng::{substream, Stream};
use plab::tasks::{randomize_labels, synth_dataset, RegressionTargetGen, TargetKind, TaskMode, TaskStream};
use plab::Tensor;
use proptest::prelude::*;

const ACTS: [ActivationKind; 6] = [
    ActivationKind::Relu,
    ActivationKind::LeakyRelu(0.01),
    ActivationKind::Gelu,
    ActivationKind::Tanh,
    ActivationKind::Abs,
    ActivationKind::Identity,
];

fn mlp(d: usize, h: usize, o: usize, act: usize, norm: NormPlacement, seed: u64) -> Network {
    Network::init(&NetworkSpec::mlp(d, &[h, h], o, ACTS[act], norm), seed).unwrap()
}

fn config() -> ProptestConfig {
    ProptestConfig::with_cases(48)
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn layer_norm_standardizes_each_sample(n in 1usize..10, d in 2usize..20, seed: u64, shift in -50.0f64..50.0) {
        let spec = NetworkSpec {
            input_shape: vec![d],
            layers: vec![LayerSpec::LayerNorm { eps: 1e-14, affine: false }],
            init: Default::default(),
        };
        let net = Network::init(&spec, 0).unwrap();
        let x = random_matrix(n, d, seed).map(|v| 3.0 * v + shift);
        let y = net.predict(&x).unwrap();
        for i in 0..n {
            let row = y.row(i);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            prop_assert!(mean.abs() < 1e-10);
            prop_assert!((var - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn eval_forward_is_pure(act in 0usize..6, seed: u64, norm in 0usize..4) {
        let norm = [NormPlacement::None, NormPlacement::LayerNorm, NormPlacement::BatchNorm, NormPlacement::Both][norm];
        let mut net = mlp(4, 8, 3, act, norm, seed);
        let x = random_matrix(6, 4, seed ^ 1);
        let a = net.predict(&x).unwrap();
        let (_, trace) = net.forward(&random_matrix(6, 4, seed ^ 2), Mode::Train).unwrap();
        let b = net.predict(&x).unwrap();
        prop_assert_eq!(a.data(), b.data());
        net.update_running_stats(&trace);
        let snapshot = net.clone();
        let c = net.predict(&x).unwrap();
        let d = snapshot.predict(&x).unwrap();
        prop_assert_eq!(c.data(), d.data());
    }

    #[test]
    fn two_hot_encodings_are_distributions(bound in 1u32..200, smoothing in 0.0f64..0.5, u in 0.0f64..=1.0) {
        let codec = TwoHotCodec::new(bound, smoothing).unwrap();
        let c = (2.0 * u - 1.0) * bound as f64;
        let p = codec.encode(c).unwrap();
        prop_assert_eq!(p.len(), 2 * bound as usize + 1);
        prop_assert!(p.iter().all(|&v| v >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(codec.encode(bound as f64 + 0.5).is_err());
    }

    #[test]
    fn optimizer_moments_track_parameter_shapes(seed: u64, steps in 1usize..6, adam: bool) {
        let mut net = mlp(3, 5, 2, 0, NormPlacement::LayerNorm, seed);
        let cfg = if adam { OptimizerConfig::adam(1e-2) } else { OptimizerConfig::sgd(1e-2) };
        let mut opt = OptimizerState::new(cfg, net.params());
        let x = random_matrix(4, 3, seed);
        for _ in 0..steps {
            let (out, trace) = net.forward_train(&x).unwrap();
            let g = net.backward(&trace, &out).unwrap().params;
            opt.apply(net.params_mut(), &g).unwrap();
        }
        prop_assert_eq!(opt.step, steps as u64);
        for (m, p) in opt.first_moment.iter().zip(net.params()) {
            prop_assert_eq!(m.shape(), p.value.shape());
        }
        prop_assert!(opt.second_moment.iter().all(|v| v.data().iter().all(|&s| s >= 0.0)));
    }

    #[test]
    fn l2_leaves_zero_weights_alone(seed: u64, lambda in 0.0f64..1.0) {
        let mut net = mlp(3, 4, 2, 0, NormPlacement::None, seed);
        net.params_mut()[0].value.data_mut()[0] = 0.0;
        let mut grads: Vec<Tensor> = net.params().iter().map(|p| p.value.map(|v| v * 0.5 + 0.1)).collect();
        let before = grads[0].data()[0];
        apply_l2(&mut grads, net.params(), lambda);
        prop_assert_eq!(grads[0].data()[0], before);
    }

    #[test]
    fn rescaling_a_fresh_network_is_the_identity(seed: u64, act in 0usize..6) {
        let mut net = mlp(5, 7, 3, act, NormPlacement::None, seed);
        let x = random_matrix(8, 5, seed ^ 3);
        let before = net.predict(&x).unwrap();
        rescale_weights_to_init(&mut net);
        prop_assert!(net.predict(&x).unwrap().max_abs_diff(&before) < 1e-12);
    }

    #[test]
    fn redo_with_zero_threshold_keeps_active_units(seed: u64) {
        let mut net = mlp(4, 6, 2, 3, NormPlacement::None, seed);
        let x = random_matrix(16, 4, seed ^ 5);
        let (_, trace) = net.forward(&x, Mode::Eval).unwrap();
        let activity = unit_activity(&net, &trace);
        prop_assume!(activity.iter().all(|a| a.scores().iter().all(|&s| s > 0.0)));
        let before = net.flat_params();
        let mut rng = substream(seed, Stream::Init, 1);
        prop_assert_eq!(redo_reset(&mut net, &activity, None, 0.0, &mut rng).unwrap(), 0);
        prop_assert_eq!(net.flat_params(), before);
    }

    #[test]
    fn label_randomization_keeps_inputs(eps in 0.0f64..=1.0, seed: u64) {
        let ds = synth_dataset(5, 6, 12, seed).unwrap();
        let out = randomize_labels(&ds, eps, seed ^ 9).unwrap();
        prop_assert_eq!(out.len(), ds.len());
        prop_assert_eq!(out.inputs.data(), ds.inputs.data());
        prop_assert!(out.labels().unwrap().iter().all(|&l| l < 5));
        let changed = out.labels().unwrap().iter().zip(ds.labels().unwrap()).filter(|(a, b)| a != b).count();
        prop_assert!(changed <= (eps * ds.len() as f64).floor() as usize);
    }

    #[test]
    fn task_streams_replay_and_leave_the_base_alone(seed: u64, mode in 0usize..5) {
        let mode = [
            TaskMode::RandomLabels { epsilon: 0.3 },
            TaskMode::PermuteClasses,
            TaskMode::PermutePixels,
            TaskMode::Continual { fraction: 0.5 },
            TaskMode::Composite { fraction: 0.5 },
        ][mode];
        let base = synth_dataset(3, 5, 10, seed).unwrap();
        let stream = TaskStream::new(base.clone(), mode, 5, 4, seed).unwrap();
        let a: Vec<_> = stream.iter().map(|t| t.unwrap()).collect();
        let b: Vec<_> = stream.iter().map(|t| t.unwrap()).collect();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(stream.next_task(2).unwrap(), a[2].clone());
        prop_assert_eq!(&synth_dataset(3, 5, 10, seed).unwrap(), &base);
    }

    #[test]
    fn offsets_shift_only_the_mean(seed: u64, b in -40.0f64..40.0) {
        let x = random_matrix(64, 6, seed);
        let gen = |offset| RegressionTargetGen::new(TargetKind::OffsetSine { frequency: 1e5, offset }, seed ^ 4);
        let zero = gen(0.0).generate(&x, 0).unwrap();
        let shifted = gen(b).generate(&x, 0).unwrap();
        for (z, s) in zero.data().iter().zip(shifted.data()) {
            prop_assert!((s - z - b).abs() < 1e-9);
        }
    }

    #[test]
    fn census_units_are_never_both_dead_and_zombie(act in 0usize..6, seed: u64, bias in -3.0f64..3.0) {
        let mut net = mlp(4, 10, 2, act, NormPlacement::None, seed);
        for p in net.params_mut().iter_mut().filter(|p| p.name.ends_with("bias")) {
            p.value.data_mut().iter_mut().for_each(|v| *v = bias);
        }
        let x = random_matrix(40, 4, seed ^ 6);
        let census = unit_census(&net, &x).unwrap();
        for layer in &census.layers {
            prop_assert!(layer.units.iter().all(|u| !(u.dead && u.zombie)));
            prop_assert!((0.0..=1.0).contains(&layer.dead_fraction));
            prop_assert!((0.0..=1.0).contains(&layer.zombie_fraction));
        }
        let (_, trace) = net.forward(&x, Mode::Train).unwrap();
        prop_assert_eq!(census_from_trace(&net, &trace), census);
    }

    #[test]
    fn entk_is_symmetric_psd_with_bounded_cosines(act in 0usize..6, seed: u64, n in 2usize..12) {
        let net = mlp(3, 6, 2, act, NormPlacement::LayerNorm, seed);
        let r = entk_gram(&net, &random_matrix(n, 3, seed ^ 7), 0, Exec::Sequential).unwrap();
        for i in 0..n {
            for j in 0..n {
                prop_assert!((r.gram[i * n + j] - r.gram[j * n + i]).abs() < 1e-10);
                prop_assert!(r.cosine[i * n + j].abs() <= 1.0 + 1e-10);
            }
            if r.cosine_defined[i] {
                prop_assert!((r.cosine[i * n + i] - 1.0).abs() < 1e-10);
            }
        }
        prop_assert!(r.eigenvalues.iter().all(|&e| e >= -1e-8));
    }

    #[test]
    fn singular_values_ignore_row_order(seed: u64, n in 2usize..20, d in 1usize..10) {
        let f = random_matrix(n, d, seed);
        let mut order: Vec<usize> = (0..n).collect();
        order.reverse();
        order.rotate_left(seed as usize % n);
        let a = feature_matrix_svd(&f, None, 0.01).singular_values;
        let b = feature_matrix_svd(&f.select_rows(&order), None, 0.01).singular_values;
        prop_assert!(a.windows(2).all(|w| w[0] >= w[1]) && a.iter().all(|&s| s >= 0.0));
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-8);
        }
    }

    #[test]
    fn replay_buffers_stay_bounded(cap in 1usize..50, pushes in 0usize..200) {
        let mut buf = ReplayBuffer::new(cap).unwrap();
        for i in 0..pushes {
            let evicted = buf.push(i);
            prop_assert_eq!(evicted, (i >= cap).then(|| i - cap));
            prop_assert!(buf.len() <= cap);
        }
        let expect: Vec<usize> = (pushes.saturating_sub(cap)..pushes).collect();
        prop_assert_eq!(buf.iter().copied().collect::<Vec<_>>(), expect);
    }

    #[test]
    fn checkpoints_reproduce_every_float(seed: u64, scale in -300i32..300) {
        let mut net = mlp(3, 4, 2, 2, NormPlacement::BatchNorm, seed);
        let values: Vec<f64> = gaussians(net.num_scalars(), seed).iter().map(|v| v * 10f64.powi(scale)).collect();
        prop_assume!(values.iter().all(|v| v.is_finite()));
        net.set_flat_params(&values).unwrap();
        let ck = Checkpoint { network: net, optimizer: None, seed, step: 1 };
        let back = checkpoint_from_str(&checkpoint_to_string(&ck).unwrap()).unwrap();
        let bits = |v: Vec<f64>| v.into_iter().map(f64::to_bits).collect::<Vec<_>>();
        prop_assert_eq!(bits(back.network.flat_params()), bits(values));
    }
}
