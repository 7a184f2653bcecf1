//! Set-to-set distance metrics: chamfer, F-score, density-aware chamfer.
//!
//! All nearest-neighbor queries go through the exact KD-tree; results must
//! agree with O(n^2) brute force to 1e-9, so no approximation is allowed.

use super::{KdTree, PointCloud};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChamferVariant {
    /// Mean Euclidean distance per direction.
    L1,
    /// Mean squared Euclidean distance per direction.
    L2,
}

/// Two-sided chamfer distance: the a->b directional mean plus the b->a
/// directional mean (un-halved).
pub fn chamfer(a: &PointCloud, b: &PointCloud, variant: ChamferVariant) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("chamfer on empty cloud"));
    }
    let ta = KdTree::build(a.points());
    let tb = KdTree::build(b.points());
    Ok(directional(a, &tb, variant) + directional(b, &ta, variant))
}

fn directional(from: &PointCloud, to_tree: &KdTree, variant: ChamferVariant) -> f64 {
    let mut sum = 0.0;
    for p in from.points() {
        let (_, d2) = to_tree.nearest(p);
        sum += match variant {
            ChamferVariant::L2 => d2,
            ChamferVariant::L1 => d2.sqrt(),
        };
    }
    sum / from.len() as f64
}

/// F-score at distance threshold `tau`: harmonic mean of precision (pred
/// points within tau of gt) and recall (gt points within tau of pred).
pub fn fscore(pred: &PointCloud, gt: &PointCloud, tau: f64) -> Result<f64> {
    if pred.is_empty() || gt.is_empty() {
        return Err(Error::invalid("fscore on empty cloud"));
    }
    if !(tau > 0.0) {
        return Err(Error::invalid("fscore tau must be > 0"));
    }
    let tau2 = tau * tau;
    let tree_gt = KdTree::build(gt.points());
    let tree_pred = KdTree::build(pred.points());
    let p_hits = pred
        .points()
        .iter()
        .filter(|p| tree_gt.nearest(p).1 <= tau2)
        .count();
    let r_hits = gt
        .points()
        .iter()
        .filter(|p| tree_pred.nearest(p).1 <= tau2)
        .count();
    let p = p_hits as f64 / pred.len() as f64;
    let r = r_hits as f64 / gt.len() as f64;
    if p + r == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * p * r / (p + r))
}

/// Density-aware chamfer distance in [0, 1].
///
/// Per direction, each query point x with nearest neighbor y contributes
/// 1 - (1/n_y) exp(-alpha |x-y|^2), where n_y counts how many queries from
/// this direction selected y. The two directional means are averaged.
pub fn dcd(a: &PointCloud, b: &PointCloud, alpha: f64) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("dcd on empty cloud"));
    }
    if !(alpha > 0.0) {
        return Err(Error::invalid("dcd alpha must be > 0"));
    }
    let ta = KdTree::build(a.points());
    let tb = KdTree::build(b.points());
    Ok(0.5 * (dcd_directional(a, b, &tb, alpha) + dcd_directional(b, a, &ta, alpha)))
}

fn dcd_directional(from: &PointCloud, to: &PointCloud, to_tree: &KdTree, alpha: f64) -> f64 {
    let nn: Vec<(usize, f64)> = from.points().iter().map(|p| to_tree.nearest(p)).collect();
    let mut counts = vec![0usize; to.len()];
    for &(j, _) in &nn {
        counts[j] += 1;
    }
    let sum: f64 = nn
        .iter()
        .map(|&(j, d2)| 1.0 - (-alpha * d2).exp() / counts[j] as f64)
        .sum();
    sum / from.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Vec3;
    use rand::Rng;

    fn cloud(pts: Vec<Vec3>) -> PointCloud {
        PointCloud::new(pts).unwrap()
    }

    fn random_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = crate::rng::rng_from_seed(seed);
        cloud(
            (0..n)
                .map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen()))
                .collect(),
        )
    }

    /// O(n^2) brute-force chamfer, the oracle for the KD-tree path.
    fn brute_chamfer(a: &PointCloud, b: &PointCloud, variant: ChamferVariant) -> f64 {
        let dir = |x: &PointCloud, y: &PointCloud| {
            let mut sum = 0.0;
            for p in x.points() {
                let d2 = y
                    .points()
                    .iter()
                    .map(|q| (p - q).norm_squared())
                    .fold(f64::INFINITY, f64::min);
                sum += match variant {
                    ChamferVariant::L2 => d2,
                    ChamferVariant::L1 => d2.sqrt(),
                };
            }
            sum / x.len() as f64
        };
        dir(a, b) + dir(b, a)
    }

    /// Brute-force DCD directly from the published formulation.
    fn brute_dcd(a: &PointCloud, b: &PointCloud, alpha: f64) -> f64 {
        let dir = |x: &PointCloud, y: &PointCloud| {
            let nn: Vec<(usize, f64)> = x
                .points()
                .iter()
                .map(|p| {
                    let mut best = (usize::MAX, f64::INFINITY);
                    for (j, q) in y.points().iter().enumerate() {
                        let d2 = (p - q).norm_squared();
                        if (d2, j) < (best.1, best.0) {
                            best = (j, d2);
                        }
                    }
                    best
                })
                .collect();
            let mut counts = vec![0usize; y.len()];
            for &(j, _) in &nn {
                counts[j] += 1;
            }
            nn.iter()
                .map(|&(j, d2)| 1.0 - (-alpha * d2).exp() / counts[j] as f64)
                .sum::<f64>()
                / x.len() as f64
        };
        0.5 * (dir(a, b) + dir(b, a))
    }

    #[test]
    fn chamfer_identical_zero() {
        let a = random_cloud(40, 1);
        assert_eq!(chamfer(&a, &a, ChamferVariant::L2).unwrap(), 0.0);
        assert_eq!(chamfer(&a, &a, ChamferVariant::L1).unwrap(), 0.0);
    }

    #[test]
    fn chamfer_single_pair() {
        let a = cloud(vec![Vec3::zeros()]);
        let b = cloud(vec![Vec3::new(1.0, 0.0, 0.0)]);
        assert!((chamfer(&a, &b, ChamferVariant::L2).unwrap() - 2.0).abs() < 1e-15);
        assert!((chamfer(&a, &b, ChamferVariant::L1).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn chamfer_matches_brute_force() {
        for seed in 0..10 {
            let a = random_cloud(50, 100 + seed);
            let b = random_cloud(50, 200 + seed);
            for v in [ChamferVariant::L1, ChamferVariant::L2] {
                let fast = chamfer(&a, &b, v).unwrap();
                let slow = brute_chamfer(&a, &b, v);
                assert!((fast - slow).abs() < 1e-9, "seed {seed}: {fast} vs {slow}");
            }
        }
    }

    #[test]
    fn chamfer_symmetric() {
        let a = random_cloud(30, 5);
        let b = random_cloud(25, 6);
        let ab = chamfer(&a, &b, ChamferVariant::L2).unwrap();
        let ba = chamfer(&b, &a, ChamferVariant::L2).unwrap();
        assert_eq!(ab, ba);
    }

    #[test]
    fn fscore_identical_is_one() {
        let a = random_cloud(30, 9);
        assert_eq!(fscore(&a, &a, 0.01).unwrap(), 1.0);
    }

    #[test]
    fn fscore_disjoint_is_zero() {
        let tau = 0.05;
        let a = cloud(vec![Vec3::zeros(), Vec3::new(0.01, 0.0, 0.0)]);
        let b = cloud(vec![Vec3::new(10.0 * tau, 0.0, 0.0)]);
        assert_eq!(fscore(&a, &b, tau).unwrap(), 0.0);
    }

    #[test]
    fn fscore_half_precision_full_recall() {
        // pred: two points on gt, two points far away; gt fully covered.
        let gt = cloud(vec![Vec3::zeros(), Vec3::new(0.001, 0.0, 0.0)]);
        let pred = cloud(vec![
            Vec3::zeros(),
            Vec3::new(0.001, 0.0, 0.0),
            Vec3::new(5.0, 0.0, 0.0),
            Vec3::new(6.0, 0.0, 0.0),
        ]);
        let f = fscore(&pred, &gt, 0.01).unwrap();
        assert!((f - 2.0 / 3.0).abs() < 1e-12, "F = {f}");
    }

    #[test]
    fn fscore_symmetric_in_swapped_roles() {
        let a = random_cloud(30, 12);
        let b = random_cloud(40, 13);
        let f1 = fscore(&a, &b, 0.2).unwrap();
        let f2 = fscore(&b, &a, 0.2).unwrap();
        assert_eq!(f1, f2);
    }

    #[test]
    fn fscore_rejects_bad_tau() {
        let a = random_cloud(5, 1);
        assert!(fscore(&a, &a, 0.0).is_err());
        assert!(fscore(&a, &a, -1.0).is_err());
    }

    #[test]
    fn dcd_identical_zero() {
        let a = random_cloud(25, 3);
        let d = dcd(&a, &a, 40.0).unwrap();
        assert!(d.abs() < 1e-12, "dcd identical = {d}");
    }

    #[test]
    fn dcd_separated_approaches_one() {
        let a = random_cloud(20, 4);
        let b = cloud(
            random_cloud(20, 5)
                .points()
                .iter()
                .map(|p| p + Vec3::new(100.0, 0.0, 0.0))
                .collect(),
        );
        let d = dcd(&a, &b, 40.0).unwrap();
        assert!(d > 0.999, "dcd separated = {d}");
    }

    #[test]
    fn dcd_matches_brute_force() {
        for seed in 0..10 {
            let a = random_cloud(30, 300 + seed);
            let b = random_cloud(30, 400 + seed);
            let fast = dcd(&a, &b, 40.0).unwrap();
            let slow = brute_dcd(&a, &b, 40.0);
            assert!((fast - slow).abs() < 1e-9, "seed {seed}: {fast} vs {slow}");
        }
    }

    #[test]
    fn dcd_bounded_and_symmetric() {
        let a = random_cloud(30, 31);
        let b = random_cloud(20, 32);
        let d1 = dcd(&a, &b, 40.0).unwrap();
        let d2 = dcd(&b, &a, 40.0).unwrap();
        assert_eq!(d1, d2);
        assert!((0.0..=1.0).contains(&d1));
    }
}
