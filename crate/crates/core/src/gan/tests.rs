use super::*;
use crate::basis::{fit_pca, ShapeMatrix};
use crate::cloud::xyz_schema;

fn tiny_config(seed: u64) -> GanConfig {
    GanConfig {
        z_dim: 3,
        hidden_layers: 2,
        hidden_width: 5,
        batch_size: 4,
        epochs: 3,
        seed,
        ..GanConfig::default()
    }
}

fn random_rows(m: usize, n: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = crate::seed::rng(seed);
    DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0))
}

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

#[test]
fn constant_half_discriminator_gives_two_log_half() {
    let v = vanilla_objective(&[0.5; 4], &[0.5; 4]);
    assert!((v - 2.0 * 0.5f64.ln()).abs() < 1e-15);
    assert!((v + 1.3863).abs() < 1e-4);
}

#[test]
fn perfect_discriminator_objective_is_near_zero() {
    let v = vanilla_objective(&[1.0 - 1e-9; 3], &[1e-9; 3]);
    assert!(v <= 0.0 && v > -1e-8);
}

#[test]
fn feature_matching_one_dimensional_toy() {
    let real = DMatrix::from_row_slice(2, 1, &[0.0, 2.0]);
    let fake = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
    let (value, _) = feature_matching_loss(&real, &fake).unwrap();
    assert!((value - 1.0).abs() < 1e-15);
}

#[test]
fn feature_matching_zero_on_identical_batches() {
    let f = random_rows(6, 4, 3);
    let (value, grad) = feature_matching_loss(&f, &f).unwrap();
    assert_eq!(value, 0.0);
    assert!(grad.iter().all(|g| g.abs() < 1e-15));
}

#[test]
fn feature_matching_gradient_matches_differences() {
    let real = random_rows(5, 3, 4);
    let fake = random_rows(5, 3, 5);
    let (_, grad) = feature_matching_loss(&real, &fake).unwrap();
    let numeric = finite_differences(fake.as_slice(), 1e-5, |p| {
        feature_matching_loss(&real, &DMatrix::from_column_slice(5, 3, p))
            .unwrap()
            .0
    });
    assert!(max_rel_error(grad.as_slice(), &numeric) < 1e-4);
}

#[test]
fn feature_matching_rejects_single_row() {
    let a = random_rows(1, 2, 1);
    assert!(matches!(
        feature_matching_loss(&a, &a),
        Err(Error::BatchTooSmall(1))
    ));
}

#[test]
fn discriminator_loss_matches_scalar_reimplementation() {
    let model = GanModel::new(2, tiny_config(7)).unwrap();
    let real = random_rows(4, 2, 8);
    let z = random_rows(4, 3, 9);
    let loss = model.discriminator_loss(&real, &z).unwrap();
    let (fake, _) = model.generator().forward(&z, Mode::Train).unwrap();
    let joint = stack_rows(&real, &fake);
    let (out, _) = model.discriminator().forward(&joint, Mode::Train).unwrap();
    let mut expected = 0.0;
    for i in 0..4 {
        expected += out[(i, 0)].ln() / 4.0;
        expected += (1.0 - out[(i + 4, 0)]).ln() / 4.0;
    }
    assert!((loss.objective - expected).abs() < 1e-12);
    let mut correct = 0;
    for i in 0..4 {
        correct += usize::from(out[(i, 0)] > 0.5) + usize::from(out[(i + 4, 0)] < 0.5);
    }
    assert_eq!(loss.accuracy, correct as f64 / 8.0);
}

#[test]
fn discriminator_gradient_matches_differences() {
    let model = GanModel::new(3, tiny_config(11)).unwrap();
    let real = random_rows(4, 3, 12);
    let z = random_rows(4, 3, 13);
    let loss = model.discriminator_loss(&real, &z).unwrap();
    let numeric = finite_differences(&model.discriminator().params(), 1e-5, |p| {
        let mut m = model.clone();
        m.discriminator_mut().set_params(p).unwrap();
        -m.discriminator_loss(&real, &z).unwrap().objective
    });
    assert!(max_rel_error(&loss.grads.flatten(), &numeric) < 1e-4);
}

#[test]
fn generator_gradient_matches_differences() {
    let model = GanModel::new(3, tiny_config(14)).unwrap();
    let real = random_rows(4, 3, 15);
    let z = random_rows(4, 3, 16);
    let loss = model.generator_loss(&real, &z).unwrap();
    let numeric = finite_differences(&model.generator().params(), 1e-5, |p| {
        let mut m = model.clone();
        m.generator_mut().set_params(p).unwrap();
        m.generator_loss(&real, &z).unwrap().value
    });
    assert!(max_rel_error(&loss.grads.flatten(), &numeric) < 1e-4);
}

#[test]
fn losses_reject_bad_batches() {
    let model = GanModel::new(2, tiny_config(1)).unwrap();
    let z = random_rows(4, 3, 1);
    assert!(matches!(
        model.discriminator_loss(&random_rows(1, 2, 1), &z),
        Err(Error::BatchTooSmall(1))
    ));
    assert!(matches!(
        model.generator_loss(&random_rows(4, 5, 1), &z),
        Err(Error::DimensionMismatch { .. })
    ));
}

#[test]
fn zero_gate_freezes_discriminator() {
    let mut config = tiny_config(21);
    config.disc_accuracy_gate = 0.0;
    let mut model = GanModel::new(2, config).unwrap();
    let before = model.discriminator().clone();
    let gen_before = model.generator().params();
    model.train(&random_rows(12, 2, 22)).unwrap();
    assert_eq!(model.discriminator(), &before);
    assert_ne!(model.generator().params(), gen_before);
    assert!(model.history().iter().all(|r| r.disc_updates == 0));
}

#[test]
fn gate_skips_update_when_accuracy_is_high() {
    let mut model = GanModel::new(2, tiny_config(23)).unwrap();
    let real = random_rows(4, 2, 24);
    let z1 = random_rows(4, 3, 25);
    let z2 = random_rows(4, 3, 26);
    for _ in 0..20 {
        let before = model.discriminator().clone();
        let report = model.train_step(&real, &z1, &z2).unwrap();
        if report.disc_accuracy >= model.config().disc_accuracy_gate {
            assert!(!report.disc_updated);
            assert_eq!(model.discriminator(), &before);
        } else {
            assert!(report.disc_updated);
            assert_ne!(model.discriminator(), &before);
        }
    }
}

#[test]
fn training_is_deterministic() {
    let coeffs = random_rows(12, 2, 30);
    let mut a = GanModel::new(2, tiny_config(31)).unwrap();
    let mut b = GanModel::new(2, tiny_config(31)).unwrap();
    a.train(&coeffs).unwrap();
    b.train(&coeffs).unwrap();
    assert_eq!(a.history(), b.history());
    assert_eq!(a, b);
    assert_eq!(a.history().len(), 3);
    assert_eq!(a.history()[0].steps, 3);
}

#[test]
fn training_needs_a_full_batch() {
    let mut model = GanModel::new(2, tiny_config(1)).unwrap();
    assert!(matches!(
        model.train(&random_rows(3, 2, 1)),
        Err(Error::EmptyDataset(_))
    ));
}

#[test]
fn non_finite_data_diverges_after_three_steps() {
    let mut coeffs = random_rows(16, 2, 40);
    coeffs.fill(f64::NAN);
    let mut model = GanModel::new(2, tiny_config(41)).unwrap();
    match model.train(&coeffs) {
        Err(Error::Diverged { epoch: 0, step: 2 }) => {}
        other => panic!("expected divergence, got {other:?}"),
    }
}

fn toy_basis() -> PcaBasis {
    let data = random_rows(5, 6, 50).transpose();
    let m = ShapeMatrix::from_columns(data, 2, 3, xyz_schema()).unwrap();
    fit_pca(&m, 2).unwrap()
}

#[test]
fn generation_is_row_independent() {
    let model = GanModel::new(2, tiny_config(51)).unwrap();
    let many = model.generate_coefficients(7, 3).unwrap();
    let few = model.generate_coefficients(2, 3).unwrap();
    assert_eq!(many.rows(0, 2), few.rows(0, 2));
    assert_eq!(model.generate_coefficients(0, 3).unwrap().nrows(), 0);
    assert!(model.generate(&toy_basis(), 0, 1).unwrap().is_empty());
}

#[test]
fn zero_generator_output_yields_mean_shape() {
    let mut model = GanModel::new(2, tiny_config(52)).unwrap();
    let last = model.generator_mut().layers_mut().last_mut().unwrap();
    last.weights.fill(0.0);
    last.bias.fill(0.0);
    let basis = toy_basis();
    let mean = basis.to_cloud(basis.mean()).unwrap();
    for cloud in model.generate(&basis, 3, 9).unwrap() {
        assert_eq!(cloud, mean);
    }
}

#[test]
fn interpolation_endpoints_match_generation() {
    let model = GanModel::new(2, tiny_config(53)).unwrap();
    let basis = toy_basis();
    let z = model.latent_codes(2, 4);
    let (z1, z2) = (z.row(0).transpose(), z.row(1).transpose());
    let path = model.interpolate(&basis, &z1, &z2, 5).unwrap();
    assert_eq!(path.len(), 5);
    assert_eq!(path[0], model.generate_at(&basis, &z1).unwrap());
    assert_eq!(path[4], model.generate_at(&basis, &z2).unwrap());
    let same = model.interpolate(&basis, &z1, &z1, 3).unwrap();
    assert!(same.iter().all(|c| c == &same[0]));
    assert!(model.interpolate(&basis, &z1, &z2, 1).is_err());
}

#[test]
fn container_round_trip_and_basis_binding() {
    let mut model = GanModel::new(2, tiny_config(60)).unwrap();
    model.train(&random_rows(8, 2, 61)).unwrap();
    let basis = toy_basis();
    model.bind_basis(&basis).unwrap();
    let restored = GanModel::from_bytes(&model.to_bytes()).unwrap();
    assert_eq!(restored, model);
    let other = fit_pca(
        &ShapeMatrix::from_columns(random_rows(5, 6, 62).transpose(), 2, 3, xyz_schema()).unwrap(),
        2,
    )
    .unwrap();
    assert!(matches!(
        restored.generate(&other, 1, 0),
        Err(Error::BasisHashMismatch { .. })
    ));
    assert!(restored.generate(&basis, 1, 0).is_ok());
    let mut bytes = model.to_bytes();
    bytes[0] = b'X';
    assert!(GanModel::from_bytes(&bytes).is_err());
}

#[test]
fn config_validation() {
    let mut c = GanConfig::default();
    assert!(c.validate().is_ok());
    c.gen_lr = 0.0;
    assert!(c.validate().is_err());
    c = GanConfig {
        disc_accuracy_gate: 1.5,
        ..GanConfig::default()
    };
    assert!(c.validate().is_err());
    c = GanConfig {
        feature_layer: Some(4),
        ..GanConfig::default()
    };
    assert!(c.validate().is_err());
}
