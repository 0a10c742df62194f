use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};

/// How a cloud is linearized.
///
/// The kd variants split the current subset after sorting it along one axis;
/// the left half gets `ceil(n/2)` points. Ties on the split axis are broken by
/// the next two axes in cyclic order, then by the remaining attributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum OrderingStrategy {
    /// Split axis cycles x, y, z with depth.
    #[default]
    KdAlternating,
    /// Split along the longest bounding-box side of the current subset
    /// (lowest axis index on ties).
    KdLongestDim,
    /// Sort by `x + y + z`, ties by x, y, z.
    ScanXyzSum,
}

impl OrderingStrategy {
    pub fn name(self) -> &'static str {
        match self {
            OrderingStrategy::KdAlternating => "kd-alternating",
            OrderingStrategy::KdLongestDim => "kd-longest-dim",
            OrderingStrategy::ScanXyzSum => "scan-xyz-sum",
        }
    }
}

impl fmt::Display for OrderingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OrderingStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kd-alternating" | "kd" => Ok(OrderingStrategy::KdAlternating),
            "kd-longest-dim" => Ok(OrderingStrategy::KdLongestDim),
            "scan-xyz-sum" | "xyz-sum" => Ok(OrderingStrategy::ScanXyzSum),
            other => Err(Error::InvalidConfig(format!(
                "unknown ordering strategy {other:?}"
            ))),
        }
    }
}

fn compare_on_axis(a: &[f64], b: &[f64], axis: usize) -> Ordering {
    (0..3)
        .map(|k| (axis + k) % 3)
        .chain(3..a.len())
        .map(|k| a[k].total_cmp(&b[k]))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

fn longest_axis(cloud: &PointCloud, idx: &[usize]) -> usize {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in idx {
        let p = cloud.point(i);
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let mut best = 0;
    for k in 1..3 {
        if hi[k] - lo[k] > hi[best] - lo[best] {
            best = k;
        }
    }
    best
}

fn kd_order(cloud: &PointCloud, idx: &mut [usize], depth: usize, longest: bool) {
    if idx.len() <= 1 {
        return;
    }
    let axis = if longest {
        longest_axis(cloud, idx)
    } else {
        depth % 3
    };
    idx.sort_by(|&a, &b| compare_on_axis(cloud.point(a), cloud.point(b), axis));
    let mid = idx.len().div_ceil(2);
    let (left, right) = idx.split_at_mut(mid);
    kd_order(cloud, left, depth + 1, longest);
    kd_order(cloud, right, depth + 1, longest);
}

/// The permutation that `strategy` imposes: output position `k` holds input
/// point `perm[k]`.
pub fn sort_permutation(cloud: &PointCloud, strategy: OrderingStrategy) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..cloud.n_points()).collect();
    match strategy {
        OrderingStrategy::KdAlternating => kd_order(cloud, &mut idx, 0, false),
        OrderingStrategy::KdLongestDim => kd_order(cloud, &mut idx, 0, true),
        OrderingStrategy::ScanXyzSum => idx.sort_by(|&a, &b| {
            let (pa, pb) = (cloud.point(a), cloud.point(b));
            (pa[0] + pa[1] + pa[2])
                .total_cmp(&(pb[0] + pb[1] + pb[2]))
                .then_with(|| compare_on_axis(pa, pb, 0))
        }),
    }
    idx
}

pub fn sort_cloud(cloud: &PointCloud, strategy: OrderingStrategy) -> PointCloud {
    cloud
        .permuted(&sort_permutation(cloud, strategy))
        .expect("sort_permutation yields a permutation")
}

/// Mean xyz distance between consecutive points of `ordering`.
pub fn locality_score(cloud: &PointCloud, ordering: &[usize]) -> Result<f64> {
    let ordered = cloud.permuted(ordering)?;
    let n = ordered.n_points();
    if n < 2 {
        return Ok(0.0);
    }
    let total: f64 = (1..n)
        .map(|i| {
            let (a, b) = (ordered.xyz(i - 1), ordered.xyz(i));
            ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
        })
        .sum();
    Ok(total / (n - 1) as f64)
}
