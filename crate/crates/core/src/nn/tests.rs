use super::*;

fn random_batch(m: usize, n: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = crate::seed::rng(seed);
    DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.5..1.5))
}

/// Central differences of `f` around `params`, one coordinate at a time.
fn finite_differences(params: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = params.to_vec();
    (0..params.len())
        .map(|k| {
            let orig = p[k];
            p[k] = orig + h;
            let up = f(&p);
            p[k] = orig - h;
            let down = f(&p);
            p[k] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

/// Scalar loss `sum(output .* weights)` and its analytic parameter gradient.
fn check_net(net: &DenseNet, batch: &DMatrix<f64>, mode: Mode, seed: u64) -> f64 {
    let (out, tape) = net.forward(batch, mode).unwrap();
    let proj = random_batch(out.nrows(), out.ncols(), seed);
    let (grads, _) = net.backward(&tape, &proj).unwrap();
    let numeric = finite_differences(&net.params(), 1e-5, |p| {
        let mut n = net.clone();
        n.set_params(p).unwrap();
        n.forward(batch, mode).unwrap().0.component_mul(&proj).sum()
    });
    max_rel_error(&grads.flatten(), &numeric)
}

#[test]
fn identity_layer_passes_input_through() {
    let net = DenseNet::from_layers(vec![Dense {
        weights: DMatrix::identity(3, 3),
        bias: DVector::zeros(3),
        activation: Activation::Linear,
        batch_norm: None,
    }])
    .unwrap();
    let x = random_batch(4, 3, 1);
    assert_eq!(net.forward(&x, Mode::Eval).unwrap().0, x);
}

#[test]
fn train_batch_norm_standardizes() {
    let spec = NetSpec {
        in_dim: 5,
        layers: vec![LayerSpec {
            out_dim: 7,
            activation: Activation::Linear,
            batch_norm: true,
        }],
        bn_momentum: 0.9,
        bn_epsilon: 1e-10,
    };
    let net = init_net(&spec, 3).unwrap();
    let x = random_batch(32, 5, 2);
    let (out, _) = net.forward(&x, Mode::Train).unwrap();
    for j in 0..7 {
        let col = out.column(j);
        let mean = col.mean();
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 32.0;
        assert!(mean.abs() < 1e-6);
        assert!((var - 1.0).abs() < 1e-5, "{var}");
    }
}

#[test]
fn batch_norm_variance_tight_for_large_spread() {
    let spec = NetSpec {
        in_dim: 2,
        layers: vec![LayerSpec {
            out_dim: 2,
            activation: Activation::Linear,
            batch_norm: true,
        }],
        bn_momentum: 0.9,
        bn_epsilon: 1e-5,
    };
    let net = init_net(&spec, 3).unwrap();
    let x = random_batch(64, 2, 2) * 100.0;
    let (out, _) = net.forward(&x, Mode::Train).unwrap();
    for j in 0..2 {
        let col = out.column(j);
        let var = col.iter().map(|v| v * v).sum::<f64>() / 64.0;
        assert!((var - 1.0).abs() < 1e-5);
    }
}

#[test]
fn two_layer_forward_matches_scalar_evaluation() {
    let w1 = [[0.5, -0.25, 1.0, 0.0], [0.1, 0.2, -0.3, 0.4]];
    let b1 = [0.05, -0.1];
    let w2 = [[1.5, -2.0]];
    let b2 = [0.25];
    let net = DenseNet::from_layers(vec![
        Dense {
            weights: DMatrix::from_fn(2, 4, |r, c| w1[r][c]),
            bias: DVector::from_row_slice(&b1),
            activation: Activation::LeakyRelu(0.2),
            batch_norm: None,
        },
        Dense {
            weights: DMatrix::from_fn(1, 2, |r, c| w2[r][c]),
            bias: DVector::from_row_slice(&b2),
            activation: Activation::Sigmoid,
            batch_norm: None,
        },
    ])
    .unwrap();
    let x = [
        [1.0, 2.0, -1.0, 0.5],
        [-0.5, 0.0, 0.3, 2.0],
        [0.0, -1.0, -1.0, -1.0],
    ];
    let (out, _) = net
        .forward(&DMatrix::from_fn(3, 4, |r, c| x[r][c]), Mode::Eval)
        .unwrap();
    for (i, row) in x.iter().enumerate() {
        let mut h = [0.0; 2];
        for r in 0..2 {
            let z: f64 = (0..4).map(|c| w1[r][c] * row[c]).sum::<f64>() + b1[r];
            h[r] = if z > 0.0 { z } else { 0.2 * z };
        }
        let z = w2[0][0] * h[0] + w2[0][1] * h[1] + b2[0];
        let expected = 1.0 / (1.0 + (-z).exp());
        assert!((out[(i, 0)] - expected).abs() < 1e-15);
    }
    // row 0 by hand: z1 = 0.5-0.5-1+0.05 = -0.95 -> -0.19; z2 = 0.1+0.4+0.3+0.2-0.1 = 0.9
    // out = sigmoid(1.5*-0.19 - 2*0.9 + 0.25) = sigmoid(-1.835)
    assert!((out[(0, 0)] - 1.0 / (1.0 + 1.835f64.exp())).abs() < 1e-15);
}

#[test]
fn gradients_match_finite_differences() {
    let configs = [
        (Activation::Relu, true, Mode::Train),
        (Activation::LeakyRelu(0.2), true, Mode::Train),
        (Activation::LeakyRelu(0.2), true, Mode::Eval),
        (Activation::Relu, false, Mode::Eval),
        (Activation::Sigmoid, true, Mode::Train),
    ];
    for (k, (act, bn, mode)) in configs.into_iter().enumerate() {
        let spec = NetSpec::mlp(4, &[6, 5], act, 3, Activation::Sigmoid, bn);
        let mut net = init_net(&spec, k as u64).unwrap();
        if bn {
            // non-trivial running stats and affine parameters
            for l in net.layers_mut() {
                if let Some(bn) = &mut l.batch_norm {
                    bn.running_mean
                        .iter_mut()
                        .enumerate()
                        .for_each(|(i, v)| *v = 0.1 * i as f64);
                    bn.running_var
                        .iter_mut()
                        .enumerate()
                        .for_each(|(i, v)| *v = 0.5 + 0.2 * i as f64);
                    bn.gamma
                        .iter_mut()
                        .enumerate()
                        .for_each(|(i, v)| *v = 1.0 + 0.1 * i as f64);
                    bn.beta
                        .iter_mut()
                        .enumerate()
                        .for_each(|(i, v)| *v = 0.05 * i as f64 - 0.1);
                }
            }
        }
        let x = random_batch(8, 4, 10 + k as u64);
        let err = check_net(&net, &x, mode, 20 + k as u64);
        assert!(err < 1e-4, "config {k}: {err}");
    }
}

#[test]
fn full_sized_net_gradient_sample() {
    // 4 x 100 body; check a deterministic subset of coordinates
    let spec = NetSpec::mlp(
        10,
        &[100, 100, 100, 100],
        Activation::LeakyRelu(0.2),
        1,
        Activation::Sigmoid,
        true,
    );
    let net = init_net(&spec, 99).unwrap();
    let x = random_batch(16, 10, 5);
    let (out, tape) = net.forward(&x, Mode::Train).unwrap();
    let proj = random_batch(out.nrows(), 1, 6);
    let analytic = net.backward(&tape, &proj).unwrap().0.flatten();
    let base = net.params();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for k in (0..base.len()).step_by(397) {
        let mut p = base.clone();
        let eval = |p: &[f64]| {
            let mut n = net.clone();
            n.set_params(p).unwrap();
            n.forward(&x, Mode::Train)
                .unwrap()
                .0
                .component_mul(&proj)
                .sum()
        };
        p[k] += h;
        let up = eval(&p);
        p[k] -= 2.0 * h;
        let down = eval(&p);
        let numeric = (up - down) / (2.0 * h);
        worst = worst.max(max_rel_error(&[analytic[k]], &[numeric]));
    }
    assert!(worst < 1e-4, "{worst}");
}

#[test]
fn input_gradient_matches_finite_differences() {
    let spec = NetSpec::mlp(
        3,
        &[5],
        Activation::LeakyRelu(0.2),
        2,
        Activation::Linear,
        true,
    );
    let net = init_net(&spec, 8).unwrap();
    let x = random_batch(5, 3, 9);
    let proj = random_batch(5, 2, 10);
    let (_, tape) = net.forward(&x, Mode::Train).unwrap();
    let (_, dx) = net.backward(&tape, &proj).unwrap();
    let numeric = finite_differences(x.as_slice(), 1e-5, |v| {
        let xb = DMatrix::from_column_slice(5, 3, v);
        net.forward(&xb, Mode::Train)
            .unwrap()
            .0
            .component_mul(&proj)
            .sum()
    });
    assert!(max_rel_error(dx.as_slice(), &numeric) < 1e-4);
}

#[test]
fn zero_output_gradient_gives_zero_gradients() {
    let spec = NetSpec::mlp(3, &[4, 4], Activation::Relu, 2, Activation::Linear, true);
    let net = init_net(&spec, 1).unwrap();
    let x = random_batch(6, 3, 2);
    let (_, tape) = net.forward(&x, Mode::Train).unwrap();
    let (g, dx) = net.backward(&tape, &DMatrix::zeros(6, 2)).unwrap();
    assert!(g.flatten().iter().all(|&v| v == 0.0));
    assert!(dx.iter().all(|&v| v == 0.0));
}

#[test]
fn linear_layer_weight_gradient_closed_form() {
    let spec = NetSpec::mlp(3, &[], Activation::Linear, 2, Activation::Linear, false);
    let net = init_net(&spec, 4).unwrap();
    let x = random_batch(5, 3, 6);
    let g = random_batch(5, 2, 7);
    let (_, tape) = net.forward(&x, Mode::Train).unwrap();
    let (grads, _) = net.backward(&tape, &g).unwrap();
    assert_eq!(grads.layers[0].weights, g.transpose() * &x);
    assert_eq!(grads.layers[0].bias, g.row_sum().transpose());
}

#[test]
fn leaky_relu_with_zero_slope_is_relu() {
    let a = init_net(
        &NetSpec::mlp(3, &[8], Activation::Relu, 2, Activation::Linear, true),
        5,
    )
    .unwrap();
    let mut b = a.clone();
    for l in b.layers_mut() {
        if l.activation == Activation::Relu {
            l.activation = Activation::LeakyRelu(0.0);
        }
    }
    let x = random_batch(7, 3, 1);
    let (oa, ta) = a.forward(&x, Mode::Train).unwrap();
    let (ob, tb) = b.forward(&x, Mode::Train).unwrap();
    assert_eq!(oa, ob);
    let g = random_batch(7, 2, 2);
    assert_eq!(
        a.backward(&ta, &g).unwrap().0,
        b.backward(&tb, &g).unwrap().0
    );
}

#[test]
fn eval_forward_is_pure_and_train_commit_updates_stats() {
    let mut net = init_net(
        &NetSpec::mlp(3, &[4], Activation::Relu, 1, Activation::Sigmoid, true),
        2,
    )
    .unwrap();
    let before = net.clone();
    let x = random_batch(6, 3, 3);
    let (a, _) = net.forward(&x, Mode::Eval).unwrap();
    let (b, _) = net.forward(&x, Mode::Eval).unwrap();
    assert_eq!(a, b);
    assert_eq!(net, before);
    let (_, tape) = net.forward(&x, Mode::Train).unwrap();
    net.commit_batch_stats(&tape).unwrap();
    assert_eq!(net.params(), before.params());
    let bn = net.layers()[0].batch_norm.as_ref().unwrap();
    assert_ne!(
        bn.running_mean,
        before.layers()[0].batch_norm.as_ref().unwrap().running_mean
    );
    assert!(bn.running_var.iter().all(|&v| v > 0.0));
}

#[test]
fn batch_too_small_and_shape_errors() {
    let net = init_net(
        &NetSpec::mlp(3, &[4], Activation::Relu, 1, Activation::Sigmoid, true),
        2,
    )
    .unwrap();
    assert!(matches!(
        net.forward(&random_batch(1, 3, 0), Mode::Train),
        Err(Error::BatchTooSmall(1))
    ));
    assert!(net.forward(&random_batch(1, 3, 0), Mode::Eval).is_ok());
    assert!(matches!(
        net.forward(&random_batch(4, 2, 0), Mode::Eval),
        Err(Error::ShapeMismatch(_))
    ));
    let other = init_net(
        &NetSpec::mlp(3, &[5], Activation::Relu, 1, Activation::Sigmoid, true),
        2,
    )
    .unwrap();
    let (_, tape) = other.forward(&random_batch(4, 3, 0), Mode::Train).unwrap();
    assert!(matches!(
        net.backward(&tape, &DMatrix::zeros(4, 1)),
        Err(Error::TapeMismatch(_))
    ));
}

#[test]
fn init_is_deterministic_and_scaled() {
    let spec = NetSpec::mlp(100, &[100], Activation::Relu, 1, Activation::Sigmoid, true);
    assert_eq!(init_net(&spec, 7).unwrap(), init_net(&spec, 7).unwrap());
    assert_ne!(init_net(&spec, 7).unwrap(), init_net(&spec, 8).unwrap());
    let net = init_net(&spec, 7).unwrap();
    let w = &net.layers()[0].weights;
    assert_eq!(w.len(), 10_000);
    let mean = w.mean();
    let std = (w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / w.len() as f64).sqrt();
    let target = (2.0f64 / 100.0).sqrt();
    assert!((std - target).abs() < 0.2 * target, "{std} vs {target}");
    assert!(net.layers()[0].bias.iter().all(|&b| b == 0.0));
    let bn = net.layers()[0].batch_norm.as_ref().unwrap();
    assert!(bn.gamma.iter().all(|&g| g == 1.0) && bn.beta.iter().all(|&b| b == 0.0));
}

#[test]
fn empty_spec_is_invalid() {
    let spec = NetSpec {
        in_dim: 3,
        layers: vec![],
        bn_momentum: 0.9,
        bn_epsilon: 1e-5,
    };
    assert!(matches!(init_net(&spec, 0), Err(Error::InvalidSpec(_))));
}

#[test]
fn adam_runs_are_bitwise_reproducible() {
    let run = || {
        let mut net = init_net(
            &NetSpec::mlp(3, &[5], Activation::Relu, 1, Activation::Linear, true),
            4,
        )
        .unwrap();
        let mut state = AdamState::new(net.n_params(), AdamConfig::with_learning_rate(0.01));
        for step in 0..5 {
            let x = random_batch(8, 3, step);
            let (out, tape) = net.forward(&x, Mode::Train).unwrap();
            let (g, _) = net.backward(&tape, &out).unwrap();
            net.apply_adam(&g, &mut state).unwrap();
            net.commit_batch_stats(&tape).unwrap();
        }
        net
    };
    let a = run();
    let b = run();
    assert_eq!(
        a.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
}

#[test]
fn container_round_trip() {
    let net = init_net(
        &NetSpec::mlp(
            3,
            &[5, 4],
            Activation::LeakyRelu(0.2),
            2,
            Activation::Sigmoid,
            true,
        ),
        4,
    )
    .unwrap();
    let mut w = Writer::new(b"TEST", 1);
    net.write_to(&mut w);
    let bytes = w.finish();
    let (mut r, _) = Reader::open(&bytes, b"TEST").unwrap();
    let back = DenseNet::read_from(&mut r).unwrap();
    r.finish().unwrap();
    assert_eq!(back, net);
}
