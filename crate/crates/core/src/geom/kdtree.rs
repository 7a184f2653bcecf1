//! Exact KD-tree for 3D nearest-neighbor queries.
//!
//! Metric oracles demand exactness, so there is no approximation anywhere:
//! queries return the true nearest neighbors with ties broken by lower
//! point index.

use super::Vec3;

struct Node {
    /// Index into the original point slice.
    point: usize,
    axis: usize,
    left: Option<usize>,
    right: Option<usize>,
}

pub struct KdTree {
    points: Vec<Vec3>,
    nodes: Vec<Node>,
    root: Option<usize>,
}

fn dist2(a: &Vec3, b: &Vec3) -> f64 {
    (a - b).norm_squared()
}

impl KdTree {
    pub fn build(points: &[Vec3]) -> Self {
        let mut tree = KdTree {
            points: points.to_vec(),
            nodes: Vec::with_capacity(points.len()),
            root: None,
        };
        let mut indices: Vec<usize> = (0..points.len()).collect();
        tree.root = tree.build_rec(&mut indices);
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn build_rec(&mut self, indices: &mut [usize]) -> Option<usize> {
        if indices.is_empty() {
            return None;
        }
        // Split along the widest axis of this subset.
        let mut lo = self.points[indices[0]];
        let mut hi = lo;
        for &i in indices.iter() {
            let p = self.points[i];
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let ext = hi - lo;
        let axis = if ext[0] >= ext[1] && ext[0] >= ext[2] {
            0
        } else if ext[1] >= ext[2] {
            1
        } else {
            2
        };
        let mid = indices.len() / 2;
        // Total order (coordinate, index) keeps builds deterministic.
        indices.select_nth_unstable_by(mid, |&a, &b| {
            (self.points[a][axis], a)
                .partial_cmp(&(self.points[b][axis], b))
                .unwrap()
        });
        let point = indices[mid];
        let node_id = self.nodes.len();
        self.nodes.push(Node { point, axis, left: None, right: None });
        let (left_part, rest) = indices.split_at_mut(mid);
        let right_part = &mut rest[1..];
        let left = self.build_rec(left_part);
        let right = self.build_rec(right_part);
        self.nodes[node_id].left = left;
        self.nodes[node_id].right = right;
        Some(node_id)
    }

    /// Exact nearest neighbor: (index, squared distance).
    /// Panics on an empty tree.
    pub fn nearest(&self, query: &Vec3) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        self.nearest_rec(self.root, query, &mut best);
        best
    }

    fn nearest_rec(&self, node: Option<usize>, query: &Vec3, best: &mut (usize, f64)) {
        let Some(id) = node else { return };
        let n = &self.nodes[id];
        let d2 = dist2(query, &self.points[n.point]);
        if (d2, n.point) < (best.1, best.0) {
            *best = (n.point, d2);
        }
        let delta = query[n.axis] - self.points[n.point][n.axis];
        let (near, far) = if delta < 0.0 { (n.left, n.right) } else { (n.right, n.left) };
        self.nearest_rec(near, query, best);
        // <= so equal-distance points on the far side can win on index.
        if delta * delta <= best.1 {
            self.nearest_rec(far, query, best);
        }
    }

    /// Exact k nearest neighbors sorted by (squared distance, index).
    /// Returns fewer than `k` only when the tree holds fewer points.
    pub fn k_nearest(&self, query: &Vec3, k: usize) -> Vec<(usize, f64)> {
        if k == 0 {
            return Vec::new();
        }
        // Max-heap on (d2, index); the lexicographic order implements the
        // lower-index tie rule.
        let mut heap: std::collections::BinaryHeap<(ordered::OrdF64, usize)> =
            std::collections::BinaryHeap::with_capacity(k + 1);
        self.k_nearest_rec(self.root, query, k, &mut heap);
        let mut out: Vec<(usize, f64)> =
            heap.into_iter().map(|(d, i)| (i, d.0)).collect();
        out.sort_by(|a, b| (a.1, a.0).partial_cmp(&(b.1, b.0)).unwrap());
        out
    }

    fn k_nearest_rec(
        &self,
        node: Option<usize>,
        query: &Vec3,
        k: usize,
        heap: &mut std::collections::BinaryHeap<(ordered::OrdF64, usize)>,
    ) {
        let Some(id) = node else { return };
        let n = &self.nodes[id];
        let d2 = dist2(query, &self.points[n.point]);
        let cand = (ordered::OrdF64(d2), n.point);
        if heap.len() < k {
            heap.push(cand);
        } else if let Some(top) = heap.peek() {
            if cand < *top {
                heap.pop();
                heap.push(cand);
            }
        }
        let delta = query[n.axis] - self.points[n.point][n.axis];
        let (near, far) = if delta < 0.0 { (n.left, n.right) } else { (n.right, n.left) };
        self.k_nearest_rec(near, query, k, heap);
        let worst = if heap.len() < k {
            f64::INFINITY
        } else {
            heap.peek().unwrap().0 .0
        };
        if delta * delta <= worst {
            self.k_nearest_rec(far, query, k, heap);
        }
    }

    /// Indices of all points with squared distance <= `r2`, ascending by index.
    pub fn within_radius(&self, query: &Vec3, r2: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.within_rec(self.root, query, r2, &mut out);
        out.sort_unstable();
        out
    }

    fn within_rec(&self, node: Option<usize>, query: &Vec3, r2: f64, out: &mut Vec<usize>) {
        let Some(id) = node else { return };
        let n = &self.nodes[id];
        if dist2(query, &self.points[n.point]) <= r2 {
            out.push(n.point);
        }
        let delta = query[n.axis] - self.points[n.point][n.axis];
        let (near, far) = if delta < 0.0 { (n.left, n.right) } else { (n.right, n.left) };
        self.within_rec(near, query, r2, out);
        if delta * delta <= r2 {
            self.within_rec(far, query, r2, out);
        }
    }
}

/// Total-order wrapper for finite f64 heap keys.
mod ordered {
    #[derive(PartialEq, PartialOrd)]
    pub struct OrdF64(pub f64);
    impl Eq for OrdF64 {}
    #[allow(clippy::derive_ord_xor_partial_ord)]
    impl Ord for OrdF64 {
        fn cmp(&self, other: &Self) -> std::cmp::Ordering {
            self.partial_cmp(other).unwrap()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_points(n: usize, seed: u64) -> Vec<Vec3> {
        let mut rng = crate::rng::rng_from_seed(seed);
        (0..n)
            .map(|_| Vec3::new(rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()))
            .collect()
    }

    fn brute_k_nearest(points: &[Vec3], q: &Vec3, k: usize) -> Vec<(usize, f64)> {
        let mut d: Vec<(usize, f64)> = points
            .iter()
            .enumerate()
            .map(|(i, p)| (i, dist2(q, p)))
            .collect();
        d.sort_by(|a, b| (a.1, a.0).partial_cmp(&(b.1, b.0)).unwrap());
        d.truncate(k);
        d
    }

    #[test]
    fn matches_brute_force() {
        let pts = random_points(200, 42);
        let tree = KdTree::build(&pts);
        let queries = random_points(50, 43);
        for q in &queries {
            let (bi, bd) = tree.nearest(q);
            let brute = brute_k_nearest(&pts, q, 5);
            assert_eq!((bi, bd), brute[0]);
            assert_eq!(tree.k_nearest(q, 5), brute);
        }
    }

    #[test]
    fn tie_breaks_by_lower_index() {
        // Duplicate positions: index 1 and 3 coincide.
        let pts = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(2.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
        ];
        let tree = KdTree::build(&pts);
        let (i, _) = tree.nearest(&Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(i, 1);
        // Query equidistant from indices 0 and 2.
        let knn = tree.k_nearest(&Vec3::new(1.0, 1.0, 0.0), 4);
        assert_eq!(knn[0].0, 1);
        assert_eq!(knn[1].0, 3);
        assert_eq!(knn[2].0, 0); // ties with 2, lower index first
        assert_eq!(knn[3].0, 2);
    }

    #[test]
    fn within_radius_exact() {
        let pts = random_points(100, 7);
        let tree = KdTree::build(&pts);
        let q = Vec3::new(0.5, 0.5, 0.5);
        let r2 = 0.1;
        let got = tree.within_radius(&q, r2);
        let expect: Vec<usize> = pts
            .iter()
            .enumerate()
            .filter(|(_, p)| dist2(&q, p) <= r2)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(got, expect);
    }
}
