//! Task-weighted similarity registration and candidate fusion.
//!
//! The solver aligns a generated cloud to the partial input by minimizing
//! CD(target, T(source)) + w_task * CD(target_task, T(source_task)) over a
//! uniform scale, rotation, and translation. Each iteration rebuilds
//! two-directional nearest-neighbor correspondences (task pairs weighted by
//! w_task) and solves the weighted similarity Procrustes problem in closed
//! form, which keeps the objective non-increasing.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{chamfer, fps, ChamferVariant, KdTree, PointCloud, Vec3};

/// Uniform scale k, proper rotation, and translation; applied as
/// p -> R * (k * p) + t.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * (p * self.scale) + self.translation
    }

    pub fn apply_cloud(&self, cloud: &PointCloud) -> Result<PointCloud> {
        cloud.map_points(|p| self.apply(p))
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        let k = 1.0 / self.scale;
        Self {
            scale: k,
            rotation: rt,
            translation: -(rt * self.translation) * k,
        }
    }

    /// Rotation orthonormal with determinant +1 within `tol`, scale positive.
    pub fn is_valid(&self, tol: f64) -> bool {
        let r = &self.rotation;
        let should_be_i = r.transpose() * r - Matrix3::identity();
        should_be_i.iter().all(|v| v.abs() <= tol)
            && (r.determinant() - 1.0).abs() <= tol
            && self.scale > 0.0
    }

    /// 13 scalars: scale, row-major rotation, translation.
    pub fn to_flat(&self) -> [f64; 13] {
        let r = &self.rotation;
        [
            self.scale,
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            self.translation.x,
            self.translation.y,
            self.translation.z,
        ]
    }

    pub fn from_flat(f: &[f64; 13]) -> Self {
        Self {
            scale: f[0],
            rotation: Matrix3::new(f[1], f[2], f[3], f[4], f[5], f[6], f[7], f[8], f[9]),
            translation: Vec3::new(f[10], f[11], f[12]),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IcpConfig {
    pub max_iterations: usize,
    /// Stop when the objective decrease falls below this absolute value.
    pub tolerance: f64,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            tolerance: 1e-7,
        }
    }
}

/// Default weight for the task-region chamfer term.
pub const DEFAULT_W_TASK: f64 = 2.0;

#[derive(Debug, Clone)]
pub struct RegistrationResult {
    pub transform: SimilarityTransform,
    /// Final objective value.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after initialization and after each accepted iteration;
    /// non-increasing by construction.
    pub trace: Vec<f64>,
}

struct Pair {
    source: Vec3,
    target: Vec3,
    weight: f64,
}

/// Closed-form weighted similarity Procrustes (scale + rotation +
/// translation minimizing the weighted sum of squared residuals).
fn weighted_similarity(pairs: &[Pair]) -> Result<SimilarityTransform> {
    let w_sum: f64 = pairs.iter().map(|p| p.weight).sum();
    if w_sum <= 0.0 || pairs.is_empty() {
        return Err(Error::DegenerateGeometry("no correspondences".into()));
    }
    let mut mu_s = Vec3::zeros();
    let mut mu_t = Vec3::zeros();
    for p in pairs {
        mu_s += p.source * p.weight;
        mu_t += p.target * p.weight;
    }
    mu_s /= w_sum;
    mu_t /= w_sum;

    let mut cov = Matrix3::zeros();
    let mut var_s = 0.0;
    for p in pairs {
        let s = p.source - mu_s;
        let t = p.target - mu_t;
        cov += p.weight * t * s.transpose();
        var_s += p.weight * s.norm_squared();
    }
    cov /= w_sum;
    var_s /= w_sum;
    if var_s < 1e-18 {
        return Err(Error::DegenerateGeometry(
            "source points are coincident".into(),
        ));
    }

    let svd = nalgebra::SVD::new(cov, true, true);
    let u = svd
        .u
        .ok_or_else(|| Error::DegenerateGeometry("SVD failed".into()))?;
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::DegenerateGeometry("SVD failed".into()))?;
    // Reflection correction keeps the solution in SO(3).
    let flip = (u.determinant() * v_t.determinant()) < 0.0;
    let mut s_diag = Vec3::new(1.0, 1.0, 1.0);
    if flip {
        s_diag.z = -1.0;
    }
    let rotation = u * Matrix3::from_diagonal(&s_diag) * v_t;
    let sing = svd.singular_values;
    let trace = sing[0] * s_diag.x + sing[1] * s_diag.y + sing[2] * s_diag.z;
    let scale = trace / var_s;
    if !(scale > 0.0) {
        return Err(Error::DegenerateGeometry(format!(
            "non-positive similarity scale {scale}"
        )));
    }
    let translation = mu_t - rotation * (mu_s * scale);
    Ok(SimilarityTransform {
        scale,
        rotation,
        translation,
    })
}

fn push_direction_pairs(
    pairs: &mut Vec<Pair>,
    source: &PointCloud,
    target: &PointCloud,
    target_tree: &KdTree,
    source_tree: &KdTree,
    transform: &SimilarityTransform,
    weight_scale: f64,
) {
    let inv = transform.inverse();
    let w_st = weight_scale / source.len() as f64;
    for s in source.points() {
        let moved = transform.apply(s);
        let (j, _) = target_tree.nearest(&moved);
        pairs.push(Pair {
            source: *s,
            target: target.points()[j],
            weight: w_st,
        });
    }
    let w_ts = weight_scale / target.len() as f64;
    for t in target.points() {
        // Nearest transformed source point, found in source space.
        let back = inv.apply(t);
        let (i, _) = source_tree.nearest(&back);
        pairs.push(Pair {
            source: source.points()[i],
            target: *t,
            weight: w_ts,
        });
    }
}

fn objective_value(
    target: &PointCloud,
    source: &PointCloud,
    target_task: Option<&PointCloud>,
    source_task: Option<&PointCloud>,
    w_task: f64,
    transform: &SimilarityTransform,
) -> Result<f64> {
    let moved = transform.apply_cloud(source)?;
    let mut obj = chamfer(target, &moved, ChamferVariant::L2)?;
    if let (Some(tt), Some(st)) = (target_task, source_task) {
        let moved_task = transform.apply_cloud(st)?;
        obj += w_task * chamfer(tt, &moved_task, ChamferVariant::L2)?;
    }
    Ok(obj)
}

/// Aligns `source` to `target` with the task-weighted similarity ICP.
///
/// Task sub-clouds may be empty; the task term then vanishes. With
/// `w_task = 0` the task clouds are ignored entirely and the solver is
/// standard scaled ICP.
pub fn task_weighted_icp(
    target: &PointCloud,
    source: &PointCloud,
    target_task: &PointCloud,
    source_task: &PointCloud,
    w_task: f64,
    config: &IcpConfig,
) -> Result<RegistrationResult> {
    if target.is_empty() || source.is_empty() {
        return Err(Error::invalid("icp on empty cloud"));
    }
    if w_task < 0.0 {
        return Err(Error::invalid("w_task must be non-negative"));
    }
    let use_task = w_task > 0.0 && !target_task.is_empty() && !source_task.is_empty();
    let (t_task, s_task) = if use_task {
        (Some(target_task), Some(source_task))
    } else {
        (None, None)
    };

    let source_diag = source.bbox_diagonal()?;
    if source_diag <= 0.0 {
        return Err(Error::DegenerateGeometry(
            "source points are coincident".into(),
        ));
    }
    let target_diag = target.bbox_diagonal()?;

    // Init: bounding-box scale ratio, identity rotation, centroids aligned.
    let scale0 = if target_diag > 0.0 {
        target_diag / source_diag
    } else {
        1.0
    };
    let mut transform = SimilarityTransform {
        scale: scale0,
        rotation: Matrix3::identity(),
        translation: target.centroid()? - source.centroid()? * scale0,
    };

    let target_tree = KdTree::build(target.points());
    let source_tree = KdTree::build(source.points());
    let (task_target_tree, task_source_tree) = if use_task {
        (
            Some(KdTree::build(target_task.points())),
            Some(KdTree::build(source_task.points())),
        )
    } else {
        (None, None)
    };

    let mut objective = objective_value(target, source, t_task, s_task, w_task, &transform)?;
    let mut trace = vec![objective];
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..config.max_iterations {
        let mut pairs = Vec::with_capacity(2 * (source.len() + target.len()));
        push_direction_pairs(
            &mut pairs,
            source,
            target,
            &target_tree,
            &source_tree,
            &transform,
            1.0,
        );
        if use_task {
            push_direction_pairs(
                &mut pairs,
                source_task,
                target_task,
                task_target_tree.as_ref().unwrap(),
                task_source_tree.as_ref().unwrap(),
                &transform,
                w_task,
            );
        }
        let candidate = weighted_similarity(&pairs)?;
        let cand_obj = objective_value(target, source, t_task, s_task, w_task, &candidate)?;
        if cand_obj > objective {
            // Numerically stalled; keep the previous transform.
            converged = true;
            break;
        }
        iterations += 1;
        let decrease = objective - cand_obj;
        transform = candidate;
        objective = cand_obj;
        trace.push(objective);
        if decrease < config.tolerance {
            converged = true;
            break;
        }
    }

    Ok(RegistrationResult {
        transform,
        objective,
        iterations,
        converged,
        trace,
    })
}

/// Standard scaled ICP: the task-weighted solver with the task term off.
pub fn scaled_icp(
    target: &PointCloud,
    source: &PointCloud,
    config: &IcpConfig,
) -> Result<RegistrationResult> {
    let empty = PointCloud::new(Vec::new())?;
    task_weighted_icp(target, source, &empty, &empty, 0.0, config)
}

/// Where a fused point came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FuseOrigin {
    /// Index into the partial input cloud.
    Input(usize),
    /// Index into the aligned generated cloud.
    Generated(usize),
}

#[derive(Debug, Clone)]
pub struct FuseResult {
    pub cloud: PointCloud,
    /// Per output point, which source point survived into it.
    pub provenance: Vec<FuseOrigin>,
}

/// Concatenates the input and aligned generated clouds, removes
/// near-duplicates (input points take precedence), and resamples to exactly
/// `n_out` points with FPS. Undershoot after deduplication is padded by
/// cycling the survivors.
pub fn fuse(
    input_cloud: &PointCloud,
    aligned_gen: &PointCloud,
    n_out: usize,
) -> Result<FuseResult> {
    fuse_with_radius(input_cloud, aligned_gen, n_out, None)
}

/// Merge radius defaults to 0.5% of the combined bounding-box diagonal.
pub fn fuse_with_radius(
    input_cloud: &PointCloud,
    aligned_gen: &PointCloud,
    n_out: usize,
    merge_radius: Option<f64>,
) -> Result<FuseResult> {
    if input_cloud.is_empty() || aligned_gen.is_empty() {
        return Err(Error::invalid("fuse on empty cloud"));
    }
    if n_out < 1 {
        return Err(Error::invalid("fuse n_out must be >= 1"));
    }
    let combined = input_cloud.concat(aligned_gen);
    let radius = match merge_radius {
        Some(r) => r,
        None => 0.005 * combined.bbox_diagonal()?,
    };
    let origin = |i: usize| {
        if i < input_cloud.len() {
            FuseOrigin::Input(i)
        } else {
            FuseOrigin::Generated(i - input_cloud.len())
        }
    };

    // Greedy dedup in concat order; input points come first and therefore
    // survive preferentially.
    let survivors: Vec<usize> = if radius > 0.0 {
        let r2 = radius * radius;
        let cell = radius;
        let key = |p: &Vec3| {
            (
                (p.x / cell).floor() as i64,
                (p.y / cell).floor() as i64,
                (p.z / cell).floor() as i64,
            )
        };
        let mut grid: std::collections::HashMap<(i64, i64, i64), Vec<usize>> =
            std::collections::HashMap::new();
        let mut kept = Vec::new();
        'next: for (i, p) in combined.points().iter().enumerate() {
            let (kx, ky, kz) = key(p);
            for dx in -1..=1 {
                for dy in -1..=1 {
                    for dz in -1..=1 {
                        if let Some(bucket) = grid.get(&(kx + dx, ky + dy, kz + dz)) {
                            for &j in bucket {
                                if (combined.points()[j] - p).norm_squared() < r2 {
                                    continue 'next;
                                }
                            }
                        }
                    }
                }
            }
            grid.entry((kx, ky, kz)).or_default().push(i);
            kept.push(i);
        }
        kept
    } else {
        (0..combined.len()).collect()
    };

    let deduped = combined.select(&survivors);
    let chosen: Vec<usize> = if deduped.len() > n_out {
        fps(&deduped, n_out, 0)?
    } else {
        // Pad by cycling the survivors.
        (0..n_out).map(|i| i % deduped.len()).collect()
    };

    let cloud = deduped.select(&chosen);
    let provenance = chosen.iter().map(|&i| origin(survivors[i])).collect();
    Ok(FuseResult { cloud, provenance })
}
