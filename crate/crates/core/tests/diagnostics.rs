mod common;

use common::{jacobi_eigenvalues, lm_diag_rank1_oracle, random_matrix, random_psd};
use plab::diagnostics::{
    diag_rank1_residual, entk_gram, feature_matrix_svd, gradient_alignment_census, rank_bound_check,
    sharpness_top_eig, unit_census, SharpnessOptions,
};
use plab::nn::{mse_loss, ActivationKind, InitScheme, LayerSpec, Mode, Network, NetworkSpec, NormPlacement};
use plab::par::Exec;
use plab::{Error, Tensor};

fn explicit_jacobian(net: &Network, x: &Tensor, h: f64) -> Vec<Vec<f64>> {
    let theta = net.flat_params();
    let mut rows = vec![vec![0.0; theta.len()]; x.rows()];
    let mut probe = net.clone();
    for p in 0..theta.len() {
        let mut t = theta.clone();
        t[p] += h;
        probe.set_flat_params(&t).unwrap();
        let up = probe.predict(x).unwrap();
        t[p] -= 2.0 * h;
        probe.set_flat_params(&t).unwrap();
        let down = probe.predict(x).unwrap();
        for (i, row) in rows.iter_mut().enumerate() {
            row[p] = (up.row(i)[0] - down.row(i)[0]) / (2.0 * h);
        }
    }
    rows
}

#[test]
fn entk_matches_explicit_jacobian_product() {
    let spec = NetworkSpec::mlp(3, &[6], 2, ActivationKind::Tanh, NormPlacement::None);
    let net = Network::init(&spec, 17).unwrap();
    let x = random_matrix(8, 3, 4);
    let report = entk_gram(&net, &x, 0, Exec::default()).unwrap();
    let j = explicit_jacobian(&net, &x, 1e-5);
    for a in 0..8 {
        for b in 0..8 {
            let jj: f64 = j[a].iter().zip(&j[b]).map(|(p, q)| p * q).sum();
            assert!((report.gram[a * 8 + b] - jj).abs() < 1e-7);
            assert_eq!(report.gram[a * 8 + b], report.gram[b * 8 + a]);
        }
        assert!((report.cosine[a * 8 + a] - 1.0).abs() < 1e-15);
    }
    assert!(*report.eigenvalues.last().unwrap() >= -1e-8);
}

#[test]
fn scalar_linear_entk_is_input_gram() {
    let spec = NetworkSpec {
        input_shape: vec![3],
        layers: vec![LayerSpec::Dense {
            input: 3,
            output: 1,
            bias: false,
        }],
        init: InitScheme::FanInGaussian,
    };
    let net = Network::init(&spec, 2).unwrap();
    let x = random_matrix(5, 3, 9);
    let r = entk_gram(&net, &x, 0, Exec::Sequential).unwrap();
    for a in 0..5 {
        for b in 0..5 {
            let xx: f64 = x.row(a).iter().zip(x.row(b)).map(|(p, q)| p * q).sum();
            assert!((r.gram[a * 5 + b] - xx).abs() < 1e-12);
        }
    }
}

#[test]
fn entk_rejects_large_batches_and_masks_zero_gradients() {
    let spec = NetworkSpec::mlp(2, &[3], 1, ActivationKind::Relu, NormPlacement::None);
    let net = Network::init(&spec, 1).unwrap();
    assert!(entk_gram(&net, &random_matrix(65, 2, 1), 0, Exec::default()).is_err());

    let lin = NetworkSpec {
        input_shape: vec![2],
        layers: vec![LayerSpec::Dense {
            input: 2,
            output: 1,
            bias: false,
        }],
        init: InitScheme::FanInGaussian,
    };
    let lin = Network::init(&lin, 1).unwrap();
    let x = Tensor::new(vec![2, 2], vec![0.0, 0.0, 1.0, 2.0]).unwrap();
    let r = entk_gram(&lin, &x, 0, Exec::default()).unwrap();
    assert_eq!(r.cosine_defined, vec![false, true]);
    assert_eq!(r.cosine[0], 0.0);
}

#[test]
fn diag_rank1_agrees_with_restart_oracle() {
    for seed in 0..5 {
        let k = random_psd(8, seed);
        let ours = diag_rank1_residual(8, &k);
        let oracle = lm_diag_rank1_oracle(8, &k, 20, seed);
        assert!((ours - oracle).abs() < 1e-6, "seed {seed}: {ours} vs {oracle}");
    }
}

#[test]
fn sharpness_matches_dense_eigensolver() {
    for seed in 0..5u64 {
        let n = 5 + 9 * seed as usize;
        let a = common::random_symmetric(n, seed);
        let eig = jacobi_eigenvalues(n, &a);
        let dominant = eig.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        let theta = vec![0.1; n];
        let grad = |t: &[f64]| -> plab::Result<Vec<f64>> {
            Ok((0..n).map(|i| (0..n).map(|j| a[i * n + j] * t[j]).sum()).collect())
        };
        let r = sharpness_top_eig(
            &theta,
            grad,
            SharpnessOptions {
                iters: 20_000,
                tol: 1e-12,
                seed,
            },
        )
        .unwrap();
        assert!((r.eigenvalue - dominant).abs() < 1e-3, "n {n}: {} vs {dominant}", r.eigenvalue);
    }
}

#[test]
fn sharpness_independent_of_start_vector() {
    let grad = |t: &[f64]| -> plab::Result<Vec<f64>> { Ok(vec![3.0 * t[0], t[1], 0.5 * t[2]]) };
    for seed in 0..5 {
        let r = sharpness_top_eig(&[1.0, 2.0, 3.0], grad, SharpnessOptions { seed, ..Default::default() }).unwrap();
        assert!((r.eigenvalue - 3.0).abs() < 1e-3);
    }
}

#[test]
fn linear_network_rank_bound() {
    let spec = NetworkSpec {
        input_shape: vec![6],
        layers: vec![
            LayerSpec::dense(6, 5),
            LayerSpec::act(ActivationKind::Identity),
            LayerSpec::dense(5, 4),
            LayerSpec::act(ActivationKind::Identity),
            LayerSpec::dense(4, 1),
        ],
        init: InitScheme::FanInGaussian,
    };
    let net = Network::init(&spec, 4).unwrap();
    let x = common::low_rank_inputs(8, 6, 3, 11);
    let r = rank_bound_check(&net, &x, 0, Exec::default()).unwrap();
    assert!(r.bound_holds, "{r:?}");
    assert!(r.rank_k <= 4);
}

#[test]
fn scalar_linear_rank_equals_input_rank() {
    let spec = NetworkSpec {
        input_shape: vec![6],
        layers: vec![LayerSpec::Dense {
            input: 6,
            output: 1,
            bias: false,
        }],
        init: InitScheme::FanInGaussian,
    };
    let net = Network::init(&spec, 4).unwrap();
    for r in 1..=4 {
        let x = common::low_rank_inputs(8, 6, r, r as u64);
        let b = rank_bound_check(&net, &x, 0, Exec::default()).unwrap();
        assert_eq!((b.rank_k, b.rank_x), (r, r));
    }
}

#[test]
fn mixed_relu_patterns_fail_the_precondition() {
    let spec = NetworkSpec::mlp(4, &[8], 1, ActivationKind::Relu, NormPlacement::None);
    let net = Network::init(&spec, 3).unwrap();
    let x = random_matrix(16, 4, 2);
    assert!(matches!(
        rank_bound_check(&net, &x, 0, Exec::default()),
        Err(Error::Precondition(_))
    ));
}

#[test]
fn svd_matches_gram_eigenvalues_and_ignores_row_order() {
    let f = random_matrix(12, 5, 8);
    let r = feature_matrix_svd(&f, None, 0.01);
    let mut gram = vec![0.0; 25];
    for a in 0..5 {
        for b in 0..5 {
            gram[a * 5 + b] = (0..12).map(|i| f.row(i)[a] * f.row(i)[b]).sum();
        }
    }
    let mut eig = jacobi_eigenvalues(5, &gram);
    eig.sort_by(|a, b| b.total_cmp(a));
    for (s, e) in r.singular_values.iter().zip(&eig) {
        assert!((s - e.max(0.0).sqrt()).abs() < 1e-8);
    }
    let reversed: Vec<usize> = (0..12).rev().collect();
    let r2 = feature_matrix_svd(&f.select_rows(&reversed), None, 0.01);
    for (a, b) in r.singular_values.iter().zip(&r2.singular_values) {
        assert!((a - b).abs() < 1e-8);
    }
}

#[test]
fn abs_initialized_mlp_has_zombie_second_layer() {
    let spec = NetworkSpec::mlp(10, &[32, 32], 3, ActivationKind::Relu, NormPlacement::None);
    let mut net = Network::init(&spec, 6).unwrap();
    for p in net.params_mut() {
        p.value = p.value.map(f64::abs);
    }
    let x = random_matrix(64, 10, 5).map(f64::abs);
    let census = unit_census(&net, &x).unwrap();
    assert_eq!(census.layers[1].zombie_fraction, 1.0);
    for layer in &census.layers {
        for u in &layer.units {
            assert!(!(u.dead && u.zombie));
        }
    }
}

#[test]
fn dead_units_receive_no_weight_gradient() {
    let spec = NetworkSpec::mlp(4, &[16], 2, ActivationKind::Relu, NormPlacement::None);
    let mut net = Network::init(&spec, 3).unwrap();
    let b = net.bias_index(0).unwrap();
    for u in [1, 5, 9] {
        net.params_mut()[b].value.data_mut()[u] = -50.0;
    }
    let x = random_matrix(40, 4, 7);
    let census = unit_census(&net, &x).unwrap();
    let (out, trace) = net.forward(&x, Mode::Train).unwrap();
    let (_, g) = mse_loss(&out, &random_matrix(40, 2, 1)).unwrap();
    let grads = net.backward(&trace, &g).unwrap();
    let w = net.weight_index(0).unwrap();
    for (u, status) in census.layers[0].units.iter().enumerate() {
        let row = &grads.params[w].data()[u * 4..u * 4 + 4];
        if status.dead {
            assert!(row.iter().all(|&v| v == 0.0));
        }
    }
    assert!(census.layers[0].units[1].dead);
    let align = gradient_alignment_census(&net, &trace, &g).unwrap();
    assert!(align[0].positive_fraction + align[0].negative_fraction <= 1.0);
}
