//! Hidden-point-removal visibility and viewpoint selection.
//!
//! Spherical inversion plus convex hull: translate so the viewpoint sits at
//! the origin, reflect every point across the sphere of radius R, and mark a
//! point visible when its reflection is a hull vertex of the reflected set
//! together with the origin.

use super::{convex_hull_vertices, PointCloud, Vec3};
use crate::error::{Error, Result};

/// Default sphere-radius multiplier for the inversion (R = factor * max
/// distance from the viewpoint).
pub const DEFAULT_HPR_RADIUS_FACTOR: f64 = 100.0;

/// Indices visible from `viewpoint`, ascending.
pub fn hpr_visible(
    cloud: &PointCloud,
    viewpoint: &Vec3,
    radius_factor: f64,
) -> Result<Vec<usize>> {
    if cloud.is_empty() {
        return Err(Error::invalid("hpr on empty cloud"));
    }
    if !(radius_factor >= 1.0) {
        return Err(Error::invalid("hpr radius_factor must be >= 1"));
    }
    let pts = cloud.points();
    let mut max_norm: f64 = 0.0;
    let mut translated = Vec::with_capacity(pts.len());
    for p in pts {
        let q = p - viewpoint;
        let n = q.norm();
        if n == 0.0 {
            return Err(Error::invalid("viewpoint coincides with a cloud point"));
        }
        max_norm = max_norm.max(n);
        translated.push(q);
    }
    let radius = radius_factor * max_norm;

    // Spherical inversion: p' = p + 2 (R - |p|) p/|p|.
    let mut inverted: Vec<Vec3> = translated
        .iter()
        .map(|q| {
            let n = q.norm();
            q * ((2.0 * radius - n) / n)
        })
        .collect();
    inverted.push(Vec3::zeros()); // the viewpoint itself

    let hull = convex_hull_vertices(&inverted)?;
    Ok(hull.into_iter().filter(|&i| i < pts.len()).collect())
}

/// Candidate viewpoint with the most HPR-visible points; ties keep the
/// earliest candidate. Uses the default radius factor.
pub fn select_viewpoint(cloud: &PointCloud, candidates: &[Vec3]) -> Result<Vec3> {
    if candidates.is_empty() {
        return Err(Error::invalid("no candidate viewpoints"));
    }
    let mut best = (0usize, 0usize); // (count, candidate index)
    let mut found = false;
    for (ci, vp) in candidates.iter().enumerate() {
        let count = hpr_visible(cloud, vp, DEFAULT_HPR_RADIUS_FACTOR)?.len();
        if !found || count > best.0 {
            best = (count, ci);
            found = true;
        }
    }
    Ok(candidates[best.1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Ray-casting oracle against the analytic unit sphere at the origin: a
    /// sample point is visible iff the first intersection of its viewing ray
    /// with the sphere surface is no more than `capture` in front of it.
    /// `capture` reflects the sampling density; occlusion shallower than one
    /// sample spacing is not resolvable from point samples.
    fn ray_visible_sphere(pts: &[Vec3], viewpoint: &Vec3, capture: f64) -> Vec<bool> {
        pts.iter()
            .map(|p| {
                let dir = (p - viewpoint).normalize();
                // |viewpoint + t*dir| = 1
                let b = 2.0 * viewpoint.dot(&dir);
                let c = viewpoint.norm_squared() - 1.0;
                let disc = b * b - 4.0 * c;
                if disc <= 0.0 {
                    return true; // grazing ray, nothing in front
                }
                let t_first = (-b - disc.sqrt()) / 2.0;
                let t_p = (p - viewpoint).norm();
                t_p <= t_first + capture
            })
            .collect()
    }

    fn unit_sphere_points(n: usize, seed: u64) -> Vec<Vec3> {
        let mut rng = crate::rng::rng_from_seed(seed);
        (0..n)
            .map(|_| {
                loop {
                    let v = Vec3::new(
                        2.0 * rng.gen::<f64>() - 1.0,
                        2.0 * rng.gen::<f64>() - 1.0,
                        2.0 * rng.gen::<f64>() - 1.0,
                    );
                    let n = v.norm();
                    if n > 1e-3 && n <= 1.0 {
                        return v / n;
                    }
                }
            })
            .collect()
    }

    #[test]
    fn single_point_visible() {
        let cloud = PointCloud::new(vec![Vec3::new(0.0, 0.0, 1.0)]).unwrap();
        let vis = hpr_visible(&cloud, &Vec3::new(0.0, 0.0, 5.0), 100.0).unwrap();
        assert_eq!(vis, vec![0]);
    }

    #[test]
    fn coincident_viewpoint_rejected() {
        let cloud = PointCloud::new(vec![Vec3::new(0.0, 0.0, 1.0)]).unwrap();
        assert!(hpr_visible(&cloud, &Vec3::new(0.0, 0.0, 1.0), 100.0).is_err());
    }

    #[test]
    fn sphere_front_hemisphere_matches_raycast() {
        let pts = unit_sphere_points(500, 21);
        let cloud = PointCloud::new(pts.clone()).unwrap();
        let vp = Vec3::new(0.0, 0.0, 5.0);
        let vis = hpr_visible(&cloud, &vp, 100.0).unwrap();
        let mut flags = vec![false; pts.len()];
        for &i in &vis {
            flags[i] = true;
        }
        // Mean sample spacing on the unit sphere: sqrt(4*pi/500) ~ 0.158.
        let oracle = ray_visible_sphere(&pts, &vp, 0.158);
        let agree = flags
            .iter()
            .zip(oracle.iter())
            .filter(|(a, b)| a == b)
            .count();
        let agreement = agree as f64 / pts.len() as f64;
        assert!(
            agreement >= 0.95,
            "HPR vs ray-cast agreement {agreement:.3} < 0.95"
        );
        // The whole camera-facing cap must be found.
        let front_found = vis.iter().filter(|&&i| pts[i].z > 0.3).count();
        let front_total = pts.iter().filter(|p| p.z > 0.3).count();
        assert_eq!(front_found, front_total, "front-cap points missing");
    }

    #[test]
    fn plane_fully_visible() {
        let mut pts = Vec::new();
        for ix in 0..10 {
            for iy in 0..10 {
                pts.push(Vec3::new(ix as f64 * 0.1, iy as f64 * 0.1, 1.0));
            }
        }
        let cloud = PointCloud::new(pts.clone()).unwrap();
        let vp = Vec3::new(0.45, 0.45, 4.0);
        let vis = hpr_visible(&cloud, &vp, 100.0).unwrap();
        assert_eq!(vis.len(), pts.len(), "plane points should all be visible");
    }

    #[test]
    fn occluded_interior_point_hidden() {
        // Dense front shell plus one point strictly behind it.
        let mut pts = unit_sphere_points(400, 33);
        pts.push(Vec3::new(0.0, 0.0, 0.0)); // center, occluded from any view
        let cloud = PointCloud::new(pts.clone()).unwrap();
        let vis = hpr_visible(&cloud, &Vec3::new(0.0, 0.0, 6.0), 100.0).unwrap();
        assert!(!vis.contains(&(pts.len() - 1)), "interior point must stay hidden");
    }

    #[test]
    fn select_viewpoint_prefers_open_side() {
        // Hemisphere shell (dome, z >= 0): the concave opening side sees every
        // point, the convex side self-occludes the rim band.
        let pts: Vec<Vec3> = unit_sphere_points(300, 9)
            .into_iter()
            .map(|p| Vec3::new(p.x, p.y, p.z.abs()))
            .collect();
        let cloud = PointCloud::new(pts).unwrap();
        let convex_side = Vec3::new(0.0, 0.0, 4.0);
        let open_side = Vec3::new(0.0, 0.0, -4.0);
        let n_convex = hpr_visible(&cloud, &convex_side, 100.0).unwrap().len();
        let n_open = hpr_visible(&cloud, &open_side, 100.0).unwrap().len();
        assert!(n_open > n_convex, "open {n_open} !> convex {n_convex}");
        let picked = select_viewpoint(&cloud, &[convex_side, open_side]).unwrap();
        assert_eq!(picked, open_side);
    }

    #[test]
    fn select_viewpoint_single_candidate() {
        let cloud = PointCloud::new(vec![Vec3::new(0.0, 0.0, 1.0)]).unwrap();
        let vp = Vec3::new(1.0, 2.0, 3.0);
        assert_eq!(select_viewpoint(&cloud, &[vp]).unwrap(), vp);
    }

    #[test]
    fn select_viewpoint_tie_takes_first() {
        // Symmetric two-point cloud seen from symmetric candidates.
        let cloud = PointCloud::new(vec![
            Vec3::new(0.0, 0.0, 1.0),
            Vec3::new(0.0, 0.0, -1.0),
        ])
        .unwrap();
        let a = Vec3::new(0.0, 0.0, 5.0);
        let b = Vec3::new(0.0, 0.0, -5.0);
        assert_eq!(select_viewpoint(&cloud, &[a, b]).unwrap(), a);
        assert_eq!(select_viewpoint(&cloud, &[b, a]).unwrap(), b);
    }

    #[test]
    fn empty_candidates_rejected() {
        let cloud = PointCloud::new(vec![Vec3::new(0.0, 0.0, 1.0)]).unwrap();
        assert!(select_viewpoint(&cloud, &[]).is_err());
    }
}
