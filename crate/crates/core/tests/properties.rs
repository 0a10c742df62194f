use kdshape::cloud::{xyz_normal_schema, xyz_schema};
use kdshape::eval::ShapeSet;
use kdshape::io::{format_points, parse_points, PointFormat};
use kdshape::ordering::sort_permutation;
use kdshape::{
    fit_pca, normalize_cloud, set_distance, sort_cloud, OrderingStrategy, PcaBasis, PointCloud,
    ShapeMatrix,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

const STRATEGIES: [OrderingStrategy; 3] = [
    OrderingStrategy::KdAlternating,
    OrderingStrategy::KdLongestDim,
    OrderingStrategy::ScanXyzSum,
];

fn coords(max_points: usize) -> impl Strategy<Value = Vec<[f64; 3]>> {
    prop::collection::vec(prop::array::uniform3(-10.0..10.0f64), 1..max_points)
}

fn set_pair(max_len: usize, dim: usize) -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let shape = prop::collection::vec(-1.0..1.0f64, dim);
    (
        prop::collection::vec(shape.clone(), 1..max_len),
        prop::collection::vec(shape, 1..max_len),
    )
}

fn shape_set(label: &str, rows: &[Vec<f64>]) -> ShapeSet {
    let v: Vec<DVector<f64>> = rows.iter().map(|r| DVector::from_column_slice(r)).collect();
    ShapeSet::new(label, &v).unwrap()
}

fn naive_directed(from: &[Vec<f64>], to: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for a in from {
        let mut best = f64::INFINITY;
        for b in to {
            let mut sq = 0.0;
            for k in 0..a.len() {
                sq += (a[k] - b[k]) * (a[k] - b[k]);
            }
            best = best.min(sq.sqrt());
        }
        total += best;
    }
    total / from.len() as f64
}

fn sorted_bits(c: &PointCloud) -> Vec<[u64; 3]> {
    let mut v: Vec<[u64; 3]> = (0..c.n_points())
        .map(|i| c.xyz(i).map(f64::to_bits))
        .collect();
    v.sort();
    v
}

proptest! {
    #[test]
    fn sorting_permutes_points(points in coords(200)) {
        let c = PointCloud::from_xyz(&points).unwrap();
        for s in STRATEGIES {
            let mut perm = sort_permutation(&c, s);
            perm.sort();
            prop_assert_eq!(perm, (0..c.n_points()).collect::<Vec<_>>());
            prop_assert_eq!(sorted_bits(&sort_cloud(&c, s)), sorted_bits(&c));
        }
    }

    #[test]
    fn sorting_ignores_input_order(points in coords(120), rot in 0usize..1000) {
        let c = PointCloud::from_xyz(&points).unwrap();
        let mut shuffled = points.clone();
        let k = rot % shuffled.len();
        shuffled.rotate_left(k);
        shuffled.reverse();
        let d = PointCloud::from_xyz(&shuffled).unwrap();
        for s in STRATEGIES {
            prop_assert_eq!(sort_cloud(&c, s), sort_cloud(&d, s));
        }
    }

    #[test]
    fn normalized_clouds_fit_the_unit_box(points in coords(100), shift in -50.0..50.0f64, scale in 0.01..100.0f64) {
        let moved: Vec<[f64; 3]> = points.iter().map(|p| p.map(|x| x * scale + shift)).collect();
        let c = PointCloud::from_xyz(&moved).unwrap();
        let (lo, hi) = c.bounding_box();
        prop_assume!((0..3).any(|k| hi[k] - lo[k] > 1e-9 * scale));
        let n = normalize_cloud(&c).unwrap();
        let (lo, hi) = n.bounding_box();
        let longest = (0..3).map(|k| hi[k] - lo[k]).fold(0.0, f64::max);
        prop_assert!((longest - 1.0).abs() < 1e-9);
        for k in 0..3 {
            prop_assert!((lo[k] + hi[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn pca_error_is_monotone_in_basis_size(
        data in prop::collection::vec(-1.0..1.0f64, 12 * 7),
    ) {
        let m = ShapeMatrix::from_columns(DMatrix::from_vec(12, 7, data), 4, 3, xyz_schema()).unwrap();
        let mut previous = f64::INFINITY;
        for b in 0..=7 {
            let basis = fit_pca(&m, b).unwrap();
            let e: f64 = (0..7).map(|s| basis.reconstruction_error(&m.column(s)).unwrap()).sum();
            prop_assert!(e <= previous + 1e-12);
            previous = e;
        }
        prop_assert!(previous < 1e-20);
    }

    #[test]
    fn basis_round_trips_and_stays_orthonormal(
        data in prop::collection::vec(-1.0..1.0f64, 9 * 6),
        b in 1usize..6,
    ) {
        let m = ShapeMatrix::from_columns(DMatrix::from_vec(9, 6, data), 3, 3, xyz_schema()).unwrap();
        let basis = fit_pca(&m, b).unwrap();
        let u = basis.components();
        let gram = u * u.transpose();
        for i in 0..b {
            for j in 0..b {
                let target = if i == j { 1.0 } else { 0.0 };
                prop_assert!((gram[(i, j)] - target).abs() < 1e-8);
            }
        }
        let back = PcaBasis::from_bytes(&basis.to_bytes()).unwrap();
        prop_assert_eq!(&back, &basis);
        prop_assert_eq!(back.content_hash(), basis.content_hash());
        let c = DVector::from_fn(b, |i, _| i as f64 - 0.5);
        let again = basis.project(&basis.reconstruct(&c).unwrap()).unwrap();
        prop_assert!((again - c).amax() < 1e-10);
    }

    #[test]
    fn text_formats_round_trip(points in coords(60), dirs in prop::collection::vec(prop::array::uniform3(-1.0..1.0f64), 60)) {
        let plain = PointCloud::from_xyz(&points).unwrap();
        let mut data = Vec::new();
        for (p, d) in points.iter().zip(&dirs) {
            let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            let n = if len > 1e-3 { d.map(|x| x / len) } else { [0.0, 0.0, 1.0] };
            data.extend_from_slice(p);
            data.extend_from_slice(&n);
        }
        let with_normals = PointCloud::new(data, 6, xyz_normal_schema()).unwrap();
        for cloud in [&plain, &with_normals] {
            for format in [PointFormat::Xyz, PointFormat::Ply] {
                let text = format_points(cloud, format, &["seed 1".to_string()]).unwrap();
                let back = parse_points(&text, format).unwrap();
                prop_assert_eq!(back.schema(), cloud.schema());
                let err = back.as_slice().iter().zip(cloud.as_slice())
                    .map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                prop_assert!(err < 1e-8, "{:?}: {}", format, err);
            }
        }
    }

    #[test]
    fn set_distance_matches_naive_oracle((t, s) in set_pair(20, 12)) {
        let (ts, ss) = (shape_set("t", &t), shape_set("s", &s));
        let d = set_distance(&ts, &ss).unwrap();
        let t_to_s = naive_directed(&t, &s);
        let s_to_t = naive_directed(&s, &t);
        prop_assert!((d.training_to_generated - t_to_s).abs() < 1e-12);
        prop_assert!((d.generated_to_training - s_to_t).abs() < 1e-12);
        prop_assert!((d.total - (t_to_s + s_to_t)).abs() < 1e-12);
    }

    #[test]
    fn set_distance_symmetry_and_invariance((t, s) in set_pair(15, 6), k in 0usize..100) {
        let forward = set_distance(&shape_set("t", &t), &shape_set("s", &s)).unwrap();
        let backward = set_distance(&shape_set("s", &s), &shape_set("t", &t)).unwrap();
        prop_assert!((forward.total - backward.total).abs() < 1e-12);
        prop_assert_eq!(set_distance(&shape_set("t", &t), &shape_set("t", &t)).unwrap().total, 0.0);
        let mut shuffled = s.clone();
        let r = k % shuffled.len();
        shuffled.rotate_left(r);
        shuffled.reverse();
        let permuted = set_distance(&shape_set("t", &t), &shape_set("s", &shuffled)).unwrap();
        prop_assert!((permuted.total - forward.total).abs() < 1e-12);
        prop_assert!(forward.total >= 0.0);
    }
}
