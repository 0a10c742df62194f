use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kdshape::ordering::OrderingStrategy;
use kdshape::synth::SyntheticFamily;
use kdshape_cli::commands::{self, Endpoints, TrainingData};
use kdshape_cli::{CliError, PipelineConfig};

#[derive(Parser)]
#[command(
    name = "kdshape",
    version,
    about = "kd-tree ordered point-cloud shape generation"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Flat TOML config; flags below override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Sample every .obj mesh in a directory into a normalized dataset.
    Sample {
        input: PathBuf,
        #[arg(long)]
        n_points: Option<usize>,
    },
    /// Reorder every cloud of a dataset.
    Sort {
        dataset: PathBuf,
        #[arg(long)]
        ordering: Option<OrderingStrategy>,
    },
    /// Fit a PCA basis and write the singular-value spectrum.
    Fit {
        dataset: PathBuf,
        #[arg(long)]
        basis_size: Option<usize>,
    },
    /// Swap-optimize point orderings against the basis.
    Optimize {
        dataset: PathBuf,
        #[arg(long)]
        basis_size: Option<usize>,
    },
    /// Train the coefficient GAN.
    TrainGan {
        dataset: Option<PathBuf>,
        #[arg(long, required_unless_present = "coefficients")]
        basis: Option<PathBuf>,
        /// Train on a coefficient CSV instead of a dataset.
        #[arg(long, conflicts_with_all = ["dataset", "basis"])]
        coefficients: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Fit the PPCA baseline.
    TrainPpca {
        dataset: PathBuf,
        #[arg(long)]
        basis_size: Option<usize>,
    },
    /// Draw shapes from a trained model.
    Generate {
        model: PathBuf,
        #[arg(long)]
        basis: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long)]
        renormalize_normals: bool,
    },
    /// Decode a straight line between two latent codes.
    Interpolate {
        model: PathBuf,
        #[arg(long)]
        basis: PathBuf,
        #[arg(long, num_args = 2, value_names = ["A", "B"], required_unless_present = "z")]
        seeds: Option<Vec<u64>>,
        /// Two files holding latent vectors.
        #[arg(long, num_args = 2, value_names = ["A", "B"], conflicts_with = "seeds")]
        z: Option<Vec<PathBuf>>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Set-distance report of models against a training dataset.
    Evaluate {
        dataset: PathBuf,
        #[arg(long, required = true, num_args = 1..)]
        models: Vec<PathBuf>,
        #[arg(long)]
        basis: Option<PathBuf>,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Generate a synthetic dataset.
    Synth {
        family: SyntheticFamily,
        #[arg(long)]
        shapes: Option<usize>,
        #[arg(long)]
        n_points: Option<usize>,
    },
}

fn set<T>(field: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *field = v;
    }
}

fn run(cli: Cli) -> Result<Vec<PathBuf>, CliError> {
    let mut config = match &cli.global.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    set(&mut config.seed, cli.global.seed);
    match &cli.command {
        Command::Sample { n_points, .. } => set(&mut config.n_points, *n_points),
        Command::Sort { ordering, .. } => set(&mut config.ordering, *ordering),
        Command::Fit { basis_size, .. }
        | Command::Optimize { basis_size, .. }
        | Command::TrainPpca { basis_size, .. } => {
            if basis_size.is_some() {
                config.basis_size = *basis_size;
            }
        }
        Command::TrainGan { epochs, .. } => set(&mut config.epochs, *epochs),
        Command::Interpolate { steps, .. } => set(&mut config.steps, *steps),
        Command::Evaluate { samples, .. } => set(&mut config.n_samples, *samples),
        Command::Synth {
            shapes, n_points, ..
        } => {
            set(&mut config.synth_shapes, *shapes);
            set(&mut config.n_points, *n_points);
        }
        Command::Generate { .. } => {}
    }
    config.validate()?;
    if let Some(n) = cli.global.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("--threads: {e}")))?;
    }

    let out = cli.global.out.as_path();
    match cli.command {
        Command::Sample { input, .. } => commands::cmd_sample(&input, out, &config),
        Command::Sort { dataset, .. } => commands::cmd_sort(&dataset, out, &config),
        Command::Fit { dataset, .. } => commands::cmd_fit(&dataset, out, &config),
        Command::Optimize { dataset, .. } => commands::cmd_optimize(&dataset, out, &config),
        Command::TrainGan {
            dataset,
            basis,
            coefficients,
            ..
        } => {
            let data = match (&coefficients, &dataset, &basis) {
                (Some(c), _, _) => TrainingData::Coefficients(c),
                (None, Some(d), Some(b)) => TrainingData::Dataset {
                    dataset: d,
                    basis: b,
                },
                _ => {
                    return Err(CliError::Usage(
                        "train-gan needs DATASET --basis or --coefficients".into(),
                    ))
                }
            };
            commands::cmd_train_gan(data, out, &config)
        }
        Command::TrainPpca { dataset, .. } => commands::cmd_train_ppca(&dataset, out, &config),
        Command::Generate {
            model,
            basis,
            count,
            renormalize_normals,
        } => commands::cmd_generate(
            &model,
            basis.as_deref(),
            count,
            renormalize_normals,
            out,
            &config,
        ),
        Command::Interpolate {
            model,
            basis,
            seeds,
            z,
            ..
        } => {
            let endpoints = match (seeds, z) {
                (Some(s), _) => Endpoints::Seeds(s[0], s[1]),
                (None, Some(z)) => {
                    Endpoints::Vectors(commands::read_vector(&z[0])?, commands::read_vector(&z[1])?)
                }
                (None, None) => {
                    return Err(CliError::Usage("interpolate needs --seeds or --z".into()))
                }
            };
            commands::cmd_interpolate(&model, &basis, endpoints, config.steps, out, &config)
        }
        Command::Evaluate {
            dataset,
            models,
            basis,
            ..
        } => commands::cmd_evaluate(&dataset, &models, basis.as_deref(), out, &config).map(
            |(files, report)| {
                print!("{}", report.to_csv());
                files
            },
        ),
        Command::Synth { family, .. } => commands::cmd_synth(family, out, &config),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(files) => {
            for f in files {
                eprintln!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("kdshape: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
