//! Generative modelling of 3D shapes as kd-tree ordered point clouds.
//!
//! The pipeline is: sample meshes into fixed-size clouds ([`sampling`]),
//! normalize and spatially sort them ([`cloud`], [`ordering`]), fit a linear
//! shape basis ([`basis`]), optionally refine point orderings against that
//! basis, then learn the distribution of basis coefficients with a small
//! feature-matching GAN ([`gan`], built on [`nn`]). [`ppca`] provides the
//! Gaussian baseline and [`eval`] the set distance used to compare them.

pub mod basis;
pub mod cloud;
mod container;
pub mod error;
pub mod eval;
pub mod gan;
pub mod io;
pub mod nn;
pub mod ordering;
pub mod ppca;
pub mod sampling;
pub mod seed;
pub mod synth;

pub use basis::{fit_pca, singular_spectrum, PcaBasis, ShapeMatrix};
pub use cloud::{normalize_cloud, PointCloud, ShapeDataset};
pub use error::{Error, Result};
pub use eval::{set_distance, ShapeSet};
pub use gan::{GanConfig, GanModel};

pub use ordering::{optimize_ordering, sort_cloud, OrderingStrategy, SwapSchedule};
pub use ppca::{fit_ppca, PpcaModel};

pub use sampling::{sample_surface, SamplingConfig, TriangleMesh};
