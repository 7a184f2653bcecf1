//! 3D convex hull (quickhull) returning hull vertex indices.
//!
//! Degenerate inputs fall back by rank: coincident sets report one
//! representative, collinear sets their two extremes, coplanar sets the 2D
//! hull in the spanning plane. Thresholds scale with the input extent.

use std::collections::HashMap;

use super::Vec3;
use crate::error::{Error, Result};

struct Face {
    v: [usize; 3],
    normal: Vec3,
    offset: f64,
    /// Neighbor across edge (v[i], v[(i+1)%3]).
    adj: [usize; 3],
    outside: Vec<usize>,
    alive: bool,
}

impl Face {
    fn dist(&self, p: &Vec3) -> f64 {
        self.normal.dot(p) - self.offset
    }

    fn edge(&self, i: usize) -> (usize, usize) {
        (self.v[i], self.v[(i + 1) % 3])
    }

    fn slot_of_edge(&self, a: usize, b: usize) -> usize {
        for i in 0..3 {
            if self.edge(i) == (a, b) {
                return i;
            }
        }
        unreachable!("edge not on face");
    }
}

fn plane(points: &[Vec3], v: [usize; 3]) -> (Vec3, f64) {
    let n = (points[v[1]] - points[v[0]]).cross(&(points[v[2]] - points[v[0]]));
    let n = n.normalize();
    (n, n.dot(&points[v[0]]))
}

/// Vertex indices of the convex hull of `points`, sorted ascending.
///
/// Exact duplicates contribute only their lowest index. Points strictly
/// inside, or within the scale-relative tolerance of a face, are not
/// reported as vertices.
pub fn convex_hull_vertices(points: &[Vec3]) -> Result<Vec<usize>> {
    hull_vertices_impl(points, false)
}

/// As [`convex_hull_vertices`], with an O(faces * points) post-check that
/// every input point lies on or inside the result. Test-suite helper.
pub fn convex_hull_vertices_checked(points: &[Vec3]) -> Result<Vec<usize>> {
    hull_vertices_impl(points, true)
}

fn hull_vertices_impl(points: &[Vec3], validate: bool) -> Result<Vec<usize>> {
    if points.is_empty() {
        return Err(Error::invalid("convex hull of empty point set"));
    }
    if points.len() == 1 {
        return Ok(vec![0]);
    }

    let mut lo = points[0];
    let mut hi = points[0];
    for p in points {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let scale = (hi - lo).norm().max(f64::MIN_POSITIVE);
    let eps = 1e-9 * scale;

    // Farthest pair among the six axis extremes.
    let mut extremes = Vec::with_capacity(6);
    for a in 0..3 {
        let (mut imin, mut imax) = (0usize, 0usize);
        for (i, p) in points.iter().enumerate() {
            if p[a] < points[imin][a] {
                imin = i;
            }
            if p[a] > points[imax][a] {
                imax = i;
            }
        }
        extremes.push(imin);
        extremes.push(imax);
    }
    let (mut e0, mut e1, mut best) = (extremes[0], extremes[0], -1.0);
    for &i in &extremes {
        for &j in &extremes {
            let d = (points[i] - points[j]).norm_squared();
            if d > best {
                best = d;
                e0 = i;
                e1 = j;
            }
        }
    }
    if best.sqrt() <= eps {
        // Rank 0: all points coincide.
        return Ok(vec![0]);
    }

    // Farthest point from the line e0-e1.
    let dir = (points[e1] - points[e0]).normalize();
    let line_d = |p: &Vec3| {
        let w = p - points[e0];
        (w - dir * w.dot(&dir)).norm()
    };
    let (mut e2, mut d2) = (usize::MAX, eps);
    for (i, p) in points.iter().enumerate() {
        let d = line_d(p);
        if d > d2 {
            d2 = d;
            e2 = i;
        }
    }
    if e2 == usize::MAX {
        return Ok(collinear_hull(points, &dir));
    }

    // Farthest point from the plane e0-e1-e2.
    let (pn, po) = plane(points, [e0, e1, e2]);
    let (mut e3, mut d3) = (usize::MAX, eps);
    for (i, p) in points.iter().enumerate() {
        let d = (pn.dot(p) - po).abs();
        if d > d3 {
            d3 = d;
            e3 = i;
        }
    }
    if e3 == usize::MAX {
        return Ok(planar_hull(points, &pn, eps));
    }

    quickhull(points, [e0, e1, e2, e3], eps, validate)
}

/// Rank-1 fallback: extreme projections along the spanning direction.
fn collinear_hull(points: &[Vec3], dir: &Vec3) -> Vec<usize> {
    let (mut imin, mut imax) = (0usize, 0usize);
    for (i, p) in points.iter().enumerate() {
        let t = p.dot(dir);
        if t < points[imin].dot(dir) {
            imin = i;
        }
        if t > points[imax].dot(dir) {
            imax = i;
        }
    }
    let mut out = vec![imin, imax];
    out.sort_unstable();
    out.dedup();
    out
}

/// Rank-2 fallback: Andrew monotone chain in the spanning plane.
fn planar_hull(points: &[Vec3], normal: &Vec3, eps: f64) -> Vec<usize> {
    // Orthonormal basis of the plane.
    let mut u = normal.cross(&Vec3::new(1.0, 0.0, 0.0));
    if u.norm() < 1e-6 {
        u = normal.cross(&Vec3::new(0.0, 1.0, 0.0));
    }
    let u = u.normalize();
    let v = normal.cross(&u);
    let proj: Vec<(f64, f64, usize)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| (p.dot(&u), p.dot(&v), i))
        .collect();
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| proj[a].partial_cmp(&proj[b]).unwrap());
    order.dedup_by(|&mut a, &mut b| {
        (proj[a].0 - proj[b].0).abs() <= eps && (proj[a].1 - proj[b].1).abs() <= eps
    });
    if order.len() <= 2 {
        let mut out = order;
        out.sort_unstable();
        return out;
    }
    let cross = |o: usize, a: usize, b: usize| {
        (proj[a].0 - proj[o].0) * (proj[b].1 - proj[o].1)
            - (proj[a].1 - proj[o].1) * (proj[b].0 - proj[o].0)
    };
    let eps_area = eps * eps;
    let mut chain = |iter: &mut dyn Iterator<Item = usize>| {
        let mut half: Vec<usize> = Vec::new();
        for i in iter {
            while half.len() >= 2 && cross(half[half.len() - 2], half[half.len() - 1], i) <= eps_area
            {
                half.pop();
            }
            half.push(i);
        }
        half.pop();
        half
    };
    let mut hull = chain(&mut order.iter().copied());
    hull.extend(chain(&mut order.iter().rev().copied()));
    hull.sort_unstable();
    hull.dedup();
    hull
}

fn quickhull(points: &[Vec3], seed: [usize; 4], eps: f64, validate: bool) -> Result<Vec<usize>> {
    let mut faces: Vec<Face> = Vec::new();
    let centroid = (points[seed[0]] + points[seed[1]] + points[seed[2]] + points[seed[3]]) / 4.0;
    for v in [
        [seed[0], seed[1], seed[2]],
        [seed[0], seed[1], seed[3]],
        [seed[0], seed[2], seed[3]],
        [seed[1], seed[2], seed[3]],
    ] {
        let mut v = v;
        let (mut n, mut o) = plane(points, v);
        if n.dot(&centroid) - o > 0.0 {
            v.swap(1, 2);
            (n, o) = plane(points, v);
        }
        faces.push(Face { v, normal: n, offset: o, adj: [usize::MAX; 3], outside: Vec::new(), alive: true });
    }
    link_all(&mut faces, &[0, 1, 2, 3])?;

    // Distribute points to the first face that sees them.
    for (i, p) in points.iter().enumerate() {
        if seed.contains(&i) {
            continue;
        }
        for f in faces.iter_mut() {
            if f.dist(p) > eps {
                f.outside.push(i);
                break;
            }
        }
    }

    let mut queue: std::collections::VecDeque<usize> =
        (0..faces.len()).filter(|&f| !faces[f].outside.is_empty()).collect();
    let max_iter = 16 * points.len() + 64;
    let mut iter = 0usize;

    while let Some(fid) = queue.pop_front() {
        if !faces[fid].alive || faces[fid].outside.is_empty() {
            continue;
        }
        iter += 1;
        if iter > max_iter {
            return Err(Error::DegenerateGeometry("convex hull did not converge".into()));
        }

        // Farthest outside point; ties go to the lower index.
        let eye = {
            let f = &faces[fid];
            let mut best = (f64::NEG_INFINITY, usize::MAX);
            for &i in &f.outside {
                let d = f.dist(&points[i]);
                if d > best.0 || (d == best.0 && i < best.1) {
                    best = (d, i);
                }
            }
            best.1
        };
        let eye_p = points[eye];

        // Visible region BFS; horizon edges recorded oriented as seen from
        // the hidden (kept) side.
        let mut visible = vec![fid];
        let mut seen: HashMap<usize, bool> = HashMap::new();
        seen.insert(fid, true);
        let mut stack = vec![fid];
        let mut horizon: Vec<(usize, usize, usize)> = Vec::new(); // (tail, head, hidden face)
        while let Some(cur) = stack.pop() {
            for slot in 0..3 {
                let nb = faces[cur].adj[slot];
                let vis = *seen
                    .entry(nb)
                    .or_insert_with(|| faces[nb].dist(&eye_p) > eps);
                if vis {
                    if !visible.contains(&nb) {
                        visible.push(nb);
                        stack.push(nb);
                    }
                } else {
                    let (a, b) = faces[cur].edge(slot);
                    // Hidden face sees this edge as (b, a).
                    horizon.push((b, a, nb));
                }
            }
        }

        // Collect orphaned points before killing faces.
        let mut orphans: Vec<usize> = Vec::new();
        for &vf in &visible {
            orphans.extend(faces[vf].outside.drain(..));
            faces[vf].alive = false;
        }
        orphans.retain(|&i| i != eye);
        orphans.sort_unstable();
        orphans.dedup();

        // Cone of new faces over the horizon.
        let mut new_ids = Vec::with_capacity(horizon.len());
        for &(tail, head, hidden) in &horizon {
            // Hidden face keeps edge (tail, head); the new face runs against it.
            let v = [head, tail, eye];
            let (n, o) = plane(points, v);
            let id = faces.len();
            faces.push(Face { v, normal: n, offset: o, adj: [usize::MAX; 3], outside: Vec::new(), alive: true });
            let hid_slot = faces[hidden].slot_of_edge(tail, head);
            faces[hidden].adj[hid_slot] = id;
            faces[id].adj[0] = hidden; // edge (head, tail)
            new_ids.push(id);
        }
        // Link the cone ring: edge (tail, eye) of one face meets
        // edge (eye, head) of the next.
        let mut by_tail: HashMap<usize, usize> = HashMap::new();
        for &id in &new_ids {
            by_tail.insert(faces[id].v[0], id); // head vertex of the horizon edge
        }
        for &id in &new_ids {
            let tail = faces[id].v[1];
            let prev = *by_tail
                .get(&tail)
                .ok_or_else(|| Error::DegenerateGeometry("open horizon ring".into()))?;
            // this face edge 1 = (tail, eye); prev face edge 2 = (eye, head=tail)
            faces[id].adj[1] = prev;
            faces[prev].adj[2] = id;
        }

        // Reassign orphans.
        for i in orphans {
            let p = &points[i];
            for &id in &new_ids {
                if faces[id].dist(p) > eps {
                    faces[id].outside.push(i);
                    break;
                }
            }
        }
        for &id in &new_ids {
            if !faces[id].outside.is_empty() {
                queue.push_back(id);
            }
        }
    }

    let mut verts: Vec<usize> = faces
        .iter()
        .filter(|f| f.alive)
        .flat_map(|f| f.v.iter().copied())
        .collect();
    verts.sort_unstable();
    verts.dedup();
    if validate {
        validate_hull(points, &faces, eps)?;
    }
    Ok(verts)
}

/// Exhaustive check: no input point may lie outside any surviving face.
fn validate_hull(points: &[Vec3], faces: &[Face], eps: f64) -> Result<()> {
    for f in faces.iter().filter(|f| f.alive) {
        for (i, p) in points.iter().enumerate() {
            let d = f.dist(p);
            if d > 64.0 * eps {
                return Err(Error::DegenerateGeometry(format!(
                    "hull face {:?} leaves point {i} outside by {d:e}",
                    f.v
                )));
            }
        }
    }
    Ok(())
}

/// Builds adjacency for an initial closed set of faces via an edge map.
fn link_all(faces: &mut [Face], ids: &[usize]) -> Result<()> {
    let mut map: HashMap<(usize, usize), (usize, usize)> = HashMap::new();
    for &id in ids {
        for slot in 0..3 {
            let (a, b) = faces[id].edge(slot);
            map.insert((a, b), (id, slot));
        }
    }
    for &id in ids {
        for slot in 0..3 {
            let (a, b) = faces[id].edge(slot);
            let &(nb, _) = map
                .get(&(b, a))
                .ok_or_else(|| Error::DegenerateGeometry("unmatched hull edge".into()))?;
            faces[id].adj[slot] = nb;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn tetrahedron_plus_interior() {
        let pts = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
            Vec3::new(0.2, 0.2, 0.2), // interior
        ];
        assert_eq!(convex_hull_vertices(&pts).unwrap(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn cube_with_center() {
        let mut pts = Vec::new();
        for x in [0.0, 1.0] {
            for y in [0.0, 1.0] {
                for z in [0.0, 1.0] {
                    pts.push(Vec3::new(x, y, z));
                }
            }
        }
        pts.push(Vec3::new(0.5, 0.5, 0.5));
        assert_eq!(convex_hull_vertices(&pts).unwrap(), (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn sphere_points_all_vertices() {
        let mut rng = crate::rng::rng_from_seed(11);
        let pts: Vec<Vec3> = (0..300)
            .map(|_| {
                let v = Vec3::new(
                    rng.gen::<f64>() - 0.5,
                    rng.gen::<f64>() - 0.5,
                    rng.gen::<f64>() - 0.5,
                );
                v.normalize()
            })
            .collect();
        let hull = convex_hull_vertices(&pts).unwrap();
        assert_eq!(hull.len(), pts.len());
    }

    #[test]
    fn interior_points_excluded_randomized() {
        let mut rng = crate::rng::rng_from_seed(5);
        // Cube corners plus strictly interior points.
        let mut pts = Vec::new();
        for x in [0.0, 1.0] {
            for y in [0.0, 1.0] {
                for z in [0.0, 1.0] {
                    pts.push(Vec3::new(x, y, z));
                }
            }
        }
        for _ in 0..100 {
            pts.push(Vec3::new(
                0.05 + 0.9 * rng.gen::<f64>(),
                0.05 + 0.9 * rng.gen::<f64>(),
                0.05 + 0.9 * rng.gen::<f64>(),
            ));
        }
        assert_eq!(convex_hull_vertices(&pts).unwrap(), (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn coplanar_square() {
        let pts = vec![
            Vec3::new(0.0, 0.0, 2.0),
            Vec3::new(1.0, 0.0, 2.0),
            Vec3::new(1.0, 1.0, 2.0),
            Vec3::new(0.0, 1.0, 2.0),
            Vec3::new(0.5, 0.5, 2.0),
        ];
        assert_eq!(convex_hull_vertices(&pts).unwrap(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn collinear_segment() {
        let pts = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(0.5, 0.0, 0.0),
            Vec3::new(2.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
        ];
        assert_eq!(convex_hull_vertices(&pts).unwrap(), vec![0, 2]);
    }

    #[test]
    fn hpr_style_inverted_cap_is_consistent() {
        // The hidden-point-removal workload: sphere samples inverted across a
        // large sphere, plus the origin. Exercises thin-shell conditioning.
        let mut rng = crate::rng::rng_from_seed(21);
        let samples: Vec<Vec3> = (0..500)
            .map(|_| {
                let v = Vec3::new(
                    rng.gen::<f64>() - 0.5,
                    rng.gen::<f64>() - 0.5,
                    rng.gen::<f64>() - 0.5,
                )
                .normalize();
                v
            })
            .collect();
        let viewpoint = Vec3::new(0.0, 0.0, 5.0);
        let translated: Vec<Vec3> = samples.iter().map(|p| p - viewpoint).collect();
        let max_norm = translated.iter().map(|q| q.norm()).fold(0.0, f64::max);
        let radius = 100.0 * max_norm;
        let mut inverted: Vec<Vec3> = translated
            .iter()
            .map(|q| {
                let n = q.norm();
                q * ((2.0 * radius - n) / n)
            })
            .collect();
        inverted.push(Vec3::zeros());
        let hull = convex_hull_vertices_checked(&inverted).unwrap();
        assert!(hull.contains(&500), "origin must be a hull vertex");
        assert!(hull.len() > 100);
    }

    #[test]
    fn random_hulls_validate() {
        let mut rng = crate::rng::rng_from_seed(77);
        for _ in 0..20 {
            let pts: Vec<Vec3> = (0..200)
                .map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen()))
                .collect();
            convex_hull_vertices_checked(&pts).unwrap();
        }
    }

    #[test]
    fn coincident_points() {
        let pts = vec![Vec3::new(1.0, 1.0, 1.0); 5];
        assert_eq!(convex_hull_vertices(&pts).unwrap(), vec![0]);
    }

    #[test]
    fn two_points() {
        let pts = vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.0, 3.0, 0.0)];
        assert_eq!(convex_hull_vertices(&pts).unwrap(), vec![0, 1]);
    }
}
