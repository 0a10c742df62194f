//! Feature-matching GAN over shape-basis coefficients.
//!
//! The discriminator maximizes `E[log D(x)] + E[log(1 - D(G(z)))]` (it descends
//! the binary cross-entropy). It sees real and generated rows in one joint
//! batch so both share batch-norm statistics, and it is only updated while its
//! accuracy on the current batches is below the gate. The generator minimizes
//! the squared gap between the mean and covariance (divisor `M`) of the
//! discriminator's feature-layer activations on real and generated batches; for
//! this loss the discriminator runs in eval mode so real features are constant.

mod store;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::basis::PcaBasis;
use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::nn::{
    init_net, sigmoid, softplus, Activation, AdamConfig, AdamState, DenseNet, Mode, NetGrads,
    NetSpec, Tape,
};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GanConfig {
    pub z_dim: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub disc_lr: f64,
    pub gen_lr: f64,
    /// The discriminator is updated only while its batch accuracy is below
    /// this value.
    pub disc_accuracy_gate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub leaky_slope: f64,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
    /// Discriminator layer whose activations feed the generator loss;
    /// `None` means the last hidden layer.
    pub feature_layer: Option<usize>,
}

impl Default for GanConfig {
    fn default() -> Self {
        GanConfig {
            z_dim: 100,
            hidden_layers: 4,
            hidden_width: 100,
            disc_lr: 1e-4,
            gen_lr: 0.0025,
            disc_accuracy_gate: 0.8,
            batch_size: 64,
            epochs: 1000,
            seed: 0,
            leaky_slope: 0.2,
            bn_momentum: 0.9,
            bn_epsilon: 1e-5,
            feature_layer: None,
        }
    }
}

impl GanConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.z_dim == 0 || self.hidden_layers == 0 || self.hidden_width == 0 {
            return bad("latent size, hidden layer count and width must be positive");
        }
        if !(self.disc_lr > 0.0 && self.gen_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        // a zero gate is accepted: it freezes the discriminator
        if !(0.0..=1.0).contains(&self.disc_accuracy_gate) {
            return bad("discriminator accuracy gate must lie in [0, 1]");
        }
        if self.batch_size < 2 {
            return bad("batch size must be at least 2");
        }
        if let Some(f) = self.feature_layer {
            if f >= self.hidden_layers {
                return bad("feature layer must be a hidden layer");
            }
        }
        Ok(())
    }

    pub fn feature_layer_index(&self) -> usize {
        self.feature_layer.unwrap_or(self.hidden_layers - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean of the discriminator objective (log-likelihood form, at most 0).
    pub disc_objective: f64,
    pub gen_loss: f64,
    pub disc_accuracy: f64,
    pub disc_updates: usize,
    pub steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub disc_objective: f64,
    pub gen_loss: f64,
    pub disc_accuracy: f64,
    pub disc_updated: bool,
}

pub struct DiscriminatorLoss {
    /// `mean log D(real) + mean log(1 - D(fake))`.
    pub objective: f64,
    pub accuracy: f64,
    /// Gradients of `-objective` with respect to discriminator parameters.
    pub grads: NetGrads,
    pub tape: Tape,
}

pub struct GeneratorLoss {
    pub value: f64,
    /// Gradients with respect to generator parameters.
    pub grads: NetGrads,
    pub tape: Tape,
}

/// Vanilla discriminator objective from probabilities.
pub fn vanilla_objective(d_real: &[f64], d_fake: &[f64]) -> f64 {
    let real = d_real.iter().map(|d| d.ln()).sum::<f64>() / d_real.len() as f64;
    let fake = d_fake.iter().map(|d| (1.0 - d).ln()).sum::<f64>() / d_fake.len() as f64;
    real + fake
}

/// Column means and biased (divisor `M`) covariance of `f`.
pub fn feature_statistics(f: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let m = f.nrows() as f64;
    let mean = f.row_mean().transpose();
    let mut centred = f.clone();
    for mut row in centred.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = centred.tr_mul(&centred) / m;
    (mean, cov)
}

/// `|mean(real) - mean(fake)|^2 + |cov(real) - cov(fake)|_F^2` and its
/// gradient with respect to the fake features.
pub fn feature_matching_loss(
    real: &DMatrix<f64>,
    fake: &DMatrix<f64>,
) -> Result<(f64, DMatrix<f64>)> {
    if real.ncols() != fake.ncols() {
        return Err(Error::dims(real.ncols(), fake.ncols()));
    }
    if real.nrows() < 2 || fake.nrows() < 2 {
        return Err(Error::BatchTooSmall(real.nrows().min(fake.nrows())));
    }
    let (mr, cr) = feature_statistics(real);
    let (mf, cf) = feature_statistics(fake);
    let mean_gap = &mr - &mf;
    let cov_gap = &cf - &cr;
    let value = mean_gap.norm_squared() + cov_gap.norm_squared();
    let m = fake.nrows() as f64;
    let mut centred = fake.clone();
    for mut row in centred.row_iter_mut() {
        row -= mf.transpose();
    }
    // d/dF of the covariance term is (4/M) Fc (Cf - Cr); the mean term adds
    // -(2/M)(mr - mf) to every row
    let mut grad = centred * &cov_gap * (4.0 / m);
    for mut row in grad.row_iter_mut() {
        row -= mean_gap.transpose() * (2.0 / m);
    }
    Ok((value, grad))
}

fn stack_rows(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let m = a.nrows();
    DMatrix::from_fn(m + b.nrows(), a.ncols(), |i, j| {
        if i < m {
            a[(i, j)]
        } else {
            b[(i - m, j)]
        }
    })
}

fn describe(values: &[f64]) -> String {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let bad = values.iter().filter(|v| !v.is_finite()).count();
    format!("logits in [{min}, {max}], {bad} non-finite")
}

#[derive(Debug, Clone, PartialEq)]
pub struct GanModel {
    generator: DenseNet,
    discriminator: DenseNet,
    config: GanConfig,
    coeff_dim: usize,
    gen_adam: AdamState,
    disc_adam: AdamState,
    history: Vec<EpochRecord>,
    basis_hash: Option<String>,
}

impl GanModel {
    /// Generator `z_dim -> hidden.. -> coeff_dim` (ReLU, linear output);
    /// discriminator `coeff_dim -> hidden.. -> 1` (LeakyReLU, sigmoid output).
    /// Hidden layers are batch-normalized, output layers are not.
    pub fn new(coeff_dim: usize, config: GanConfig) -> Result<Self> {
        config.validate()?;
        if coeff_dim == 0 {
            return Err(Error::InvalidConfig(
                "coefficient dimension must be positive".into(),
            ));
        }
        let hidden = vec![config.hidden_width; config.hidden_layers];
        let mut gen_spec = NetSpec::mlp(
            config.z_dim,
            &hidden,
            Activation::Relu,
            coeff_dim,
            Activation::Linear,
            true,
        );
        let mut disc_spec = NetSpec::mlp(
            coeff_dim,
            &hidden,
            Activation::LeakyRelu(config.leaky_slope),
            1,
            Activation::Sigmoid,
            true,
        );
        for spec in [&mut gen_spec, &mut disc_spec] {
            spec.bn_momentum = config.bn_momentum;
            spec.bn_epsilon = config.bn_epsilon;
        }
        let generator = init_net(&gen_spec, seed::derive(config.seed, "generator-init", 0))?;
        let discriminator = init_net(
            &disc_spec,
            seed::derive(config.seed, "discriminator-init", 0),
        )?;
        Self::from_parts(generator, discriminator, config)
    }

    pub fn from_parts(
        generator: DenseNet,
        discriminator: DenseNet,
        config: GanConfig,
    ) -> Result<Self> {
        config.validate()?;
        let coeff_dim = generator.out_dim();
        if generator.in_dim() != config.z_dim {
            return Err(Error::dims(config.z_dim, generator.in_dim()));
        }
        if discriminator.in_dim() != coeff_dim {
            return Err(Error::dims(coeff_dim, discriminator.in_dim()));
        }
        if discriminator.out_dim() != 1 {
            return Err(Error::dims(1, discriminator.out_dim()));
        }
        if config.feature_layer_index() >= discriminator.layers().len() - 1 {
            return Err(Error::InvalidConfig(
                "feature layer is not a hidden layer".into(),
            ));
        }
        Ok(GanModel {
            gen_adam: AdamState::new(
                generator.n_params(),
                AdamConfig::with_learning_rate(config.gen_lr),
            ),
            disc_adam: AdamState::new(
                discriminator.n_params(),
                AdamConfig::with_learning_rate(config.disc_lr),
            ),
            generator,
            discriminator,
            config,
            coeff_dim,
            history: Vec::new(),
            basis_hash: None,
        })
    }

    pub fn generator(&self) -> &DenseNet {
        &self.generator
    }

    pub fn generator_mut(&mut self) -> &mut DenseNet {
        &mut self.generator
    }

    pub fn discriminator(&self) -> &DenseNet {
        &self.discriminator
    }

    pub fn discriminator_mut(&mut self) -> &mut DenseNet {
        &mut self.discriminator
    }

    pub fn config(&self) -> &GanConfig {
        &self.config
    }

    pub fn coeff_dim(&self) -> usize {
        self.coeff_dim
    }

    pub fn z_dim(&self) -> usize {
        self.config.z_dim
    }

    pub fn history(&self) -> &[EpochRecord] {
        &self.history
    }

    pub fn basis_hash(&self) -> Option<&str> {
        self.basis_hash.as_deref()
    }

    /// Ties the model to a basis; generation against any other basis fails.
    pub fn bind_basis(&mut self, basis: &PcaBasis) -> Result<()> {
        if basis.basis_size() != self.coeff_dim {
            return Err(Error::dims(self.coeff_dim, basis.basis_size()));
        }
        self.basis_hash = Some(basis.content_hash());
        Ok(())
    }

    pub fn check_basis(&self, basis: &PcaBasis) -> Result<()> {
        if basis.basis_size() != self.coeff_dim {
            return Err(Error::dims(self.coeff_dim, basis.basis_size()));
        }
        if let Some(expected) = &self.basis_hash {
            let actual = basis.content_hash();
            if &actual != expected {
                return Err(Error::BasisHashMismatch {
                    expected: expected.clone(),
                    actual,
                });
            }
        }
        Ok(())
    }

    fn check_batches(&self, real: &DMatrix<f64>, z: &DMatrix<f64>) -> Result<()> {
        if real.ncols() != self.coeff_dim {
            return Err(Error::dims(self.coeff_dim, real.ncols()));
        }
        if z.ncols() != self.config.z_dim {
            return Err(Error::dims(self.config.z_dim, z.ncols()));
        }
        if real.nrows() < 2 || z.nrows() < 2 {
            return Err(Error::BatchTooSmall(real.nrows().min(z.nrows())));
        }
        Ok(())
    }

    /// Feature-layer activations of the discriminator.
    pub fn features(&self, x: &DMatrix<f64>, mode: Mode) -> Result<DMatrix<f64>> {
        let (_, tape) = self.discriminator.forward(x, mode)?;
        Ok(tape.activation(self.config.feature_layer_index()).clone())
    }

    pub fn discriminator_loss(
        &self,
        real: &DMatrix<f64>,
        z: &DMatrix<f64>,
    ) -> Result<DiscriminatorLoss> {
        self.check_batches(real, z)?;
        let (fake, _) = self.generator.forward(z, Mode::Train)?;
        let joint = stack_rows(real, &fake);
        let (_, tape) = self.discriminator.forward(&joint, Mode::Train)?;
        let last = tape.n_layers() - 1;
        let logits: Vec<f64> = tape
            .pre_activation(last)
            .column(0)
            .iter()
            .copied()
            .collect();
        let (m_real, m_fake) = (real.nrows(), fake.nrows());
        let mut objective = 0.0;
        let mut correct = 0usize;
        let mut dlogits = DMatrix::zeros(logits.len(), 1);
        for (i, &a) in logits.iter().enumerate() {
            let p = sigmoid(a);
            if i < m_real {
                objective -= softplus(-a) / m_real as f64;
                dlogits[(i, 0)] = (p - 1.0) / m_real as f64;
                correct += usize::from(p > 0.5);
            } else {
                objective -= softplus(a) / m_fake as f64;
                dlogits[(i, 0)] = p / m_fake as f64;
                correct += usize::from(p < 0.5);
            }
        }
        if !objective.is_finite() {
            return Err(Error::NonFiniteLoss(format!(
                "discriminator objective: {}",
                describe(&logits)
            )));
        }
        let (grads, _) = self.discriminator.backward_from_logits(&tape, &dlogits)?;
        if !grads.is_finite() {
            return Err(Error::NonFiniteLoss(format!(
                "discriminator gradients: {}",
                describe(&logits)
            )));
        }
        Ok(DiscriminatorLoss {
            objective,
            accuracy: correct as f64 / logits.len() as f64,
            grads,
            tape,
        })
    }

    pub fn generator_loss(&self, real: &DMatrix<f64>, z: &DMatrix<f64>) -> Result<GeneratorLoss> {
        self.check_batches(real, z)?;
        let layer = self.config.feature_layer_index();
        let (fake, gen_tape) = self.generator.forward(z, Mode::Train)?;
        let (_, real_tape) = self.discriminator.forward(real, Mode::Eval)?;
        let (_, fake_tape) = self.discriminator.forward(&fake, Mode::Eval)?;
        let (value, dfeat) =
            feature_matching_loss(real_tape.activation(layer), fake_tape.activation(layer))?;
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss(format!(
                "generator loss: {}",
                describe(fake.as_slice())
            )));
        }
        let (_, dfake) = self
            .discriminator
            .backward_from_layer(&fake_tape, layer, &dfeat)?;
        let (grads, _) = self.generator.backward(&gen_tape, &dfake)?;
        if !grads.is_finite() {
            return Err(Error::NonFiniteLoss("generator gradients".into()));
        }
        Ok(GeneratorLoss {
            value,
            grads,
            tape: gen_tape,
        })
    }

    /// One training step: gated discriminator update, then a generator update
    /// on a fresh latent batch.
    pub fn train_step(
        &mut self,
        real: &DMatrix<f64>,
        z_disc: &DMatrix<f64>,
        z_gen: &DMatrix<f64>,
    ) -> Result<StepReport> {
        let d = self.discriminator_loss(real, z_disc)?;
        let disc_updated = d.accuracy < self.config.disc_accuracy_gate;
        if disc_updated {
            self.discriminator
                .apply_adam(&d.grads, &mut self.disc_adam)?;
            self.discriminator.commit_batch_stats(&d.tape)?;
        }
        let g = self.generator_loss(real, z_gen)?;
        self.generator.apply_adam(&g.grads, &mut self.gen_adam)?;
        self.generator.commit_batch_stats(&g.tape)?;
        Ok(StepReport {
            disc_objective: d.objective,
            gen_loss: g.value,
            disc_accuracy: d.accuracy,
            disc_updated,
        })
    }

    /// `count x z_dim` latent codes, uniform on `(-1, 1)`.
    pub fn sample_latent<R: Rng>(&self, count: usize, rng: &mut R) -> DMatrix<f64> {
        // row-major draw order so row k depends only on the first k rows
        let z = self.config.z_dim;
        let mut data = Vec::with_capacity(count * z);
        for _ in 0..count * z {
            data.push(rng.random_range(-1.0..1.0));
        }
        DMatrix::from_row_slice(count, z, &data)
    }

    /// Trains for `config.epochs` epochs over the rows of `coeffs` (`S x B`).
    pub fn train(&mut self, coeffs: &DMatrix<f64>) -> Result<&[EpochRecord]> {
        let epochs = self.config.epochs;
        self.train_epochs(coeffs, epochs)
    }

    pub fn train_epochs(&mut self, coeffs: &DMatrix<f64>, epochs: usize) -> Result<&[EpochRecord]> {
        let batch = self.config.batch_size;
        if coeffs.ncols() != self.coeff_dim {
            return Err(Error::dims(self.coeff_dim, coeffs.ncols()));
        }
        if coeffs.nrows() < batch {
            return Err(Error::EmptyDataset(format!(
                "{} training rows for batch size {batch}",
                coeffs.nrows()
            )));
        }
        let start = self.history.len();
        let mut rng = seed::derived_rng(self.config.seed, "gan-train", start as u64);
        let mut order: Vec<usize> = (0..coeffs.nrows()).collect();
        let steps = coeffs.nrows() / batch;
        let mut bad_steps = 0;
        for epoch in start..start + epochs {
            order.shuffle(&mut rng);
            let mut rec = EpochRecord {
                epoch,
                disc_objective: 0.0,
                gen_loss: 0.0,
                disc_accuracy: 0.0,
                disc_updates: 0,
                steps: 0,
            };
            for step in 0..steps {
                let rows = &order[step * batch..(step + 1) * batch];
                let real = DMatrix::from_fn(batch, self.coeff_dim, |i, j| coeffs[(rows[i], j)]);
                let z_disc = self.sample_latent(batch, &mut rng);
                let z_gen = self.sample_latent(batch, &mut rng);
                match self.train_step(&real, &z_disc, &z_gen) {
                    Ok(r) => {
                        bad_steps = 0;
                        rec.disc_objective += r.disc_objective;
                        rec.gen_loss += r.gen_loss;
                        rec.disc_accuracy += r.disc_accuracy;
                        rec.disc_updates += usize::from(r.disc_updated);
                        rec.steps += 1;
                    }
                    Err(Error::NonFiniteLoss(_)) => {
                        bad_steps += 1;
                        if bad_steps >= 3 {
                            return Err(Error::Diverged { epoch, step });
                        }
                    }
                    Err(e) => return Err(e),
                }
            }
            if rec.steps > 0 {
                let n = rec.steps as f64;
                rec.disc_objective /= n;
                rec.gen_loss /= n;
                rec.disc_accuracy /= n;
            }
            self.history.push(rec);
        }
        Ok(&self.history[start..])
    }

    /// Eval-mode generator output for one latent code.
    pub fn coefficients_at(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        if z.len() != self.config.z_dim {
            return Err(Error::dims(self.config.z_dim, z.len()));
        }
        let (out, _) = self.generator.forward(
            &DMatrix::from_row_slice(1, z.len(), z.as_slice()),
            Mode::Eval,
        )?;
        Ok(out.row(0).transpose())
    }

    /// Latent codes for `count` samples under `seed`.
    pub fn latent_codes(&self, count: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = seed::derived_rng(seed, "latent", 0);
        self.sample_latent(count, &mut rng)
    }

    /// Generated coefficient vectors, one row per sample. Each row is computed
    /// on its own, so sample `k` is identical whatever `count` is.
    pub fn generate_coefficients(&self, count: usize, seed: u64) -> Result<DMatrix<f64>> {
        let z = self.latent_codes(count, seed);
        let mut out = DMatrix::zeros(count, self.coeff_dim);
        for i in 0..count {
            let c = self.coefficients_at(&z.row(i).transpose())?;
            out.row_mut(i).copy_from(&c.transpose());
        }
        Ok(out)
    }

    pub fn generate(&self, basis: &PcaBasis, count: usize, seed: u64) -> Result<Vec<PointCloud>> {
        self.check_basis(basis)?;
        let coeffs = self.generate_coefficients(count, seed)?;
        (0..count)
            .map(|i| basis.to_cloud(&basis.reconstruct(&coeffs.row(i).transpose())?))
            .collect()
    }

    pub fn generate_at(&self, basis: &PcaBasis, z: &DVector<f64>) -> Result<PointCloud> {
        self.check_basis(basis)?;
        basis.to_cloud(&basis.reconstruct(&self.coefficients_at(z)?)?)
    }

    /// Shapes at `z(t) = (1 - t) z1 + t z2` for `steps` evenly spaced `t` in
    /// `[0, 1]`. Coordinates where `z1` and `z2` agree are copied, so equal
    /// endpoints give identical shapes.
    pub fn interpolate(
        &self,
        basis: &PcaBasis,
        z1: &DVector<f64>,
        z2: &DVector<f64>,
        steps: usize,
    ) -> Result<Vec<PointCloud>> {
        if steps < 2 {
            return Err(Error::InvalidConfig(
                "interpolation needs at least 2 steps".into(),
            ));
        }
        if z2.len() != z1.len() {
            return Err(Error::dims(z1.len(), z2.len()));
        }
        (0..steps)
            .map(|k| {
                let t = k as f64 / (steps - 1) as f64;
                let z = z1.zip_map(z2, |a, b| if a == b { a } else { (1.0 - t) * a + t * b });
                self.generate_at(basis, &z)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests;
