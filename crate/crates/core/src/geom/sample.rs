//! Farthest point sampling and KNN patch grouping.

use super::{KdTree, PatchSet, PointCloud};
use crate::error::{Error, Result};

/// Farthest point sampling: `m` indices starting from `seed_index`, each
/// successive pick maximizing its minimum distance to the selected set.
/// Distance ties resolve to the lower index, so the sequence is a pure
/// function of (cloud, m, seed_index).
pub fn fps(cloud: &PointCloud, m: usize, seed_index: usize) -> Result<Vec<usize>> {
    let n = cloud.len();
    if n == 0 {
        return Err(Error::invalid("fps on empty cloud"));
    }
    if m == 0 || m > n {
        return Err(Error::invalid(format!("fps m={m} out of range 1..={n}")));
    }
    if seed_index >= n {
        return Err(Error::invalid(format!("fps seed_index {seed_index} out of range")));
    }
    let pts = cloud.points();
    let mut selected = Vec::with_capacity(m);
    let mut min_d2 = vec![f64::INFINITY; n];
    let mut current = seed_index;
    selected.push(current);
    for _ in 1..m {
        let cp = pts[current];
        let mut best = (f64::NEG_INFINITY, 0usize);
        for (i, p) in pts.iter().enumerate() {
            let d2 = (p - cp).norm_squared();
            if d2 < min_d2[i] {
                min_d2[i] = d2;
            }
            if min_d2[i] > best.0 {
                best = (min_d2[i], i);
            }
        }
        current = best.1;
        min_d2[current] = f64::NEG_INFINITY; // never re-selected
        selected.push(current);
    }
    Ok(selected)
}

/// Groups the `k` nearest points (self included) around each center.
pub fn knn_group(cloud: &PointCloud, centers: &[usize], k: usize) -> Result<PatchSet> {
    let n = cloud.len();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("knn k={k} out of range 1..={n}")));
    }
    if let Some(&bad) = centers.iter().find(|&&c| c >= n) {
        return Err(Error::invalid(format!("center index {bad} out of range")));
    }
    let tree = KdTree::build(cloud.points());
    let mut groups = Vec::with_capacity(centers.len());
    for &c in centers {
        let nn = tree.k_nearest(&cloud.points()[c], k);
        groups.push(nn.into_iter().map(|(i, _)| i).collect());
    }
    Ok(PatchSet {
        centers: centers.iter().map(|&c| cloud.points()[c]).collect(),
        center_indices: centers.to_vec(),
        groups,
        k_neighbors: k,
    })
}
