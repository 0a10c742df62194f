use std::fs;
use std::path::Path;

use kdshape::gan::GanConfig;
use kdshape::ordering::{OrderingStrategy, SwapSchedule};
use kdshape::synth::{SynthConfig, SyntheticFamily};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum AttrMode {
    #[default]
    #[serde(rename = "xyz")]
    Xyz,
    #[serde(rename = "xyz+normal")]
    XyzNormal,
}

/// Every tunable of the pipeline. Config files are flat TOML (`key = value`
/// per line); any field left out keeps its default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub n_points: usize,
    pub attributes: AttrMode,
    pub ordering: OrderingStrategy,
    /// Defaults to 100 for positions and 200 with normals.
    pub basis_size: Option<usize>,
    pub swaps_per_shape: usize,
    pub outer_iterations: usize,
    pub point_format: String,
    pub spectrum_rows: Option<usize>,

    pub z_dim: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub disc_lr: f64,
    pub gen_lr: f64,
    pub disc_accuracy_gate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub leaky_slope: f64,
    pub feature_layer: Option<usize>,

    pub n_samples: usize,
    pub steps: usize,

    pub synth_family: SyntheticFamily,
    pub synth_shapes: usize,
    pub synth_mode_weight: f64,
    pub synth_coeff_dim: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let gan = GanConfig::default();
        let swap = SwapSchedule::default();
        PipelineConfig {
            seed: 0,
            n_points: 1000,
            attributes: AttrMode::Xyz,
            ordering: OrderingStrategy::default(),
            basis_size: None,
            swaps_per_shape: swap.swaps_per_shape,
            outer_iterations: swap.outer_iterations,
            point_format: "ply".into(),
            spectrum_rows: None,
            z_dim: gan.z_dim,
            hidden_layers: gan.hidden_layers,
            hidden_width: gan.hidden_width,
            disc_lr: gan.disc_lr,
            gen_lr: gan.gen_lr,
            disc_accuracy_gate: gan.disc_accuracy_gate,
            batch_size: gan.batch_size,
            epochs: gan.epochs,
            leaky_slope: gan.leaky_slope,
            feature_layer: gan.feature_layer,
            n_samples: 500,
            steps: 8,
            synth_family: SyntheticFamily::BoxAspect,
            synth_shapes: 200,
            synth_mode_weight: 0.5,
            synth_coeff_dim: 2,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let config: PipelineConfig =
            toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Usage(m.to_string()));
        if self.n_points == 0 {
            return bad("n_points must be positive");
        }
        if self.basis_size == Some(0) {
            return bad("basis_size must be positive");
        }
        if let Some(b) = self.basis_size {
            if b > self.attr_dim() * self.n_points {
                return bad("basis_size exceeds the vector dimension D*N");
            }
        }
        self.point_format()?;
        self.swap_schedule().validate()?;
        self.gan_config().validate()?;
        Ok(())
    }

    pub fn attr_dim(&self) -> usize {
        match self.attributes {
            AttrMode::Xyz => 3,
            AttrMode::XyzNormal => 6,
        }
    }

    pub fn basis_size(&self) -> usize {
        self.basis_size.unwrap_or(match self.attributes {
            AttrMode::Xyz => kdshape::basis::DEFAULT_BASIS_SIZE,
            AttrMode::XyzNormal => kdshape::basis::DEFAULT_BASIS_SIZE_WITH_NORMALS,
        })
    }

    pub fn point_format(&self) -> Result<kdshape::io::PointFormat, CliError> {
        match self.point_format.as_str() {
            "ply" => Ok(kdshape::io::PointFormat::Ply),
            "xyz" => Ok(kdshape::io::PointFormat::Xyz),
            other => Err(CliError::Usage(format!(
                "point_format must be \"ply\" or \"xyz\", got {other:?}"
            ))),
        }
    }

    pub fn swap_schedule(&self) -> SwapSchedule {
        SwapSchedule {
            swaps_per_shape: self.swaps_per_shape,
            outer_iterations: self.outer_iterations,
            seed: self.seed,
        }
    }

    pub fn gan_config(&self) -> GanConfig {
        GanConfig {
            z_dim: self.z_dim,
            hidden_layers: self.hidden_layers,
            hidden_width: self.hidden_width,
            disc_lr: self.disc_lr,
            gen_lr: self.gen_lr,
            disc_accuracy_gate: self.disc_accuracy_gate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
            leaky_slope: self.leaky_slope,
            feature_layer: self.feature_layer,
            ..GanConfig::default()
        }
    }

    pub fn synth_config(&self, family: SyntheticFamily) -> SynthConfig {
        let base = match family {
            SyntheticFamily::BoxAspect => SynthConfig::box_aspect(self.synth_shapes, self.n_points),
            SyntheticFamily::TwoClusterChairsToy => {
                SynthConfig::chairs(self.synth_shapes, self.n_points)
            }
            SyntheticFamily::BimodalCoeff => SynthConfig::bimodal_coeff(self.synth_shapes),
        };
        SynthConfig {
            mode_weight: self.synth_mode_weight,
            coeff_dim: self.synth_coeff_dim,
            ..base.with_seed(self.seed)
        }
    }

    /// Provenance lines embedded in every output file.
    pub fn provenance(&self, command: &str) -> Vec<String> {
        vec![
            format!("kdshape {command}"),
            format!("seed {}", self.seed),
            format!(
                "config {}",
                serde_json::to_string(self).expect("config serializes")
            ),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_toml_overrides_defaults() {
        let c = PipelineConfig::from_toml(
            "seed = 7\nn_points = 256\nattributes = \"xyz+normal\"\nordering = \"scan-xyz-sum\"\nepochs = 3\n",
        )
        .unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.attr_dim(), 6);
        assert_eq!(c.basis_size(), 200);
        assert_eq!(c.ordering, OrderingStrategy::ScanXyzSum);
        assert_eq!(c.gan_config().epochs, 3);
        assert_eq!(c.z_dim, 100);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_usage_errors() {
        for text in [
            "bogus = 1",
            "n_points = 0",
            "disc_lr = -1.0",
            "point_format = \"obj\"",
            "n_points = 10\nbasis_size = 31",
        ] {
            assert!(
                matches!(PipelineConfig::from_toml(text), Err(CliError::Usage(_))),
                "{text}"
            );
        }
    }

    #[test]
    fn provenance_round_trips() {
        let c = PipelineConfig::default();
        let lines = c.provenance("fit");
        let json = lines[2].strip_prefix("config ").unwrap();
        let back: PipelineConfig = serde_json::from_str(json).unwrap();
        assert_eq!(back, c);
    }
}
