//! Spatial orderings of point clouds and their refinement.

mod sort;
mod swap;

pub use sort::{locality_score, sort_cloud, sort_permutation, OrderingStrategy};
pub use swap::{descend_shape, optimize_ordering, OptimizeOutcome, ShapeDescent, SwapSchedule};
