//! Procedural objects, partial-view simulation, and sabotage datasets.

pub mod lexicon;
mod shapes;
mod solid;

pub use shapes::{
    generate_shape, region_id, region_name, ProceduralSolid, ShapeKind, ShapeParams,
    REGION_BLADE, REGION_BODY, REGION_HANDLE, REGION_HEAD, REGION_NECK, REGION_SPOUT,
};
pub use solid::{Frame, Part, PrimShape};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{
    chamfer, hpr_visible, knn_group, ChamferVariant, PointCloud, Vec3,
    DEFAULT_HPR_RADIUS_FACTOR,
};
use crate::rng::{derive_seed, rng_from_seed};

/// A manipulation instruction bound to an object category.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_text: String,
    pub category: String,
    /// Region name the task implies contact with.
    pub target_region: String,
}

impl TaskSpec {
    /// Resolves the target region through the lexicon.
    pub fn new(category: &str, task_text: &str) -> Result<Self> {
        let region = lexicon::lookup(category, task_text)?;
        Ok(Self {
            task_text: task_text.to_string(),
            category: category.to_string(),
            target_region: region.to_string(),
        })
    }

    pub fn region_label(&self) -> Result<u32> {
        region_id(&self.target_region)
            .ok_or_else(|| Error::invalid(format!("unknown region {:?}", self.target_region)))
    }
}

/// Simulated scan of a shape cloud: HPR visibility from `viewpoint`,
/// foreground sphere occluders, then isotropic jitter clamped at 3 sigma.
pub fn render_partial(
    shape_cloud: &PointCloud,
    viewpoint: &Vec3,
    noise_sigma: f64,
    occluder_count: usize,
    seed: u64,
) -> Result<PointCloud> {
    Ok(render_partial_traced(shape_cloud, viewpoint, noise_sigma, occluder_count, seed)?.0)
}

/// As [`render_partial`], also returning the surviving source indices.
pub fn render_partial_traced(
    shape_cloud: &PointCloud,
    viewpoint: &Vec3,
    noise_sigma: f64,
    occluder_count: usize,
    seed: u64,
) -> Result<(PointCloud, Vec<usize>)> {
    if shape_cloud.is_empty() {
        return Err(Error::invalid("render_partial on empty cloud"));
    }
    let (lo, hi) = shape_cloud.bbox()?;
    if (0..3).all(|a| viewpoint[a] >= lo[a] && viewpoint[a] <= hi[a]) {
        return Err(Error::invalid(
            "viewpoint lies inside the object bounding box",
        ));
    }
    let visible = hpr_visible(shape_cloud, viewpoint, DEFAULT_HPR_RADIUS_FACTOR)?;
    let mut rng = rng_from_seed(seed);
    let kept = delete_occluded(shape_cloud, &visible, viewpoint, occluder_count, &mut rng);
    let cloud = jitter(&shape_cloud.select(&kept), noise_sigma, &mut rng)?;
    Ok((cloud, kept))
}

/// Partial view that keeps the task region intact: visibility and occluders
/// apply only to non-task points, so every task-region point survives
/// (jittered like the rest).
pub fn render_partial_preserving(
    shape_cloud: &PointCloud,
    task_label: u32,
    viewpoint: &Vec3,
    noise_sigma: f64,
    occluder_count: usize,
    seed: u64,
) -> Result<(PointCloud, Vec<usize>)> {
    if shape_cloud.is_empty() {
        return Err(Error::invalid("render_partial on empty cloud"));
    }
    let visible = hpr_visible(shape_cloud, viewpoint, DEFAULT_HPR_RADIUS_FACTOR)?;
    let mut rng = rng_from_seed(seed);
    let deleted = delete_occluded(shape_cloud, &visible, viewpoint, occluder_count, &mut rng);
    let mut kept: Vec<usize> = deleted
        .into_iter()
        .chain(
            (0..shape_cloud.len()).filter(|&i| shape_cloud.label(i) == task_label),
        )
        .collect();
    kept.sort_unstable();
    kept.dedup();
    let cloud = jitter(&shape_cloud.select(&kept), noise_sigma, &mut rng)?;
    Ok((cloud, kept))
}

fn delete_occluded(
    cloud: &PointCloud,
    visible: &[usize],
    viewpoint: &Vec3,
    occluder_count: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let mut kept: Vec<usize> = visible.to_vec();
    if occluder_count == 0 || kept.is_empty() {
        return kept;
    }
    let diag = cloud.bbox_diagonal().unwrap_or(1.0);
    for _ in 0..occluder_count {
        if kept.is_empty() {
            break;
        }
        // Anchor the occluder on a surviving visible point and pull it
        // toward the camera; the anchor always falls inside the sphere.
        let anchor = cloud.points()[kept[rng.gen_range(0..kept.len())]];
        let radius = diag * (0.05 + 0.10 * rng.gen::<f64>());
        let toward = (viewpoint - anchor).normalize();
        let center = anchor + toward * (0.5 * radius);
        let r2 = radius * radius;
        kept.retain(|&i| (cloud.points()[i] - center).norm_squared() > r2);
    }
    kept
}

fn jitter(cloud: &PointCloud, sigma: f64, rng: &mut ChaCha8Rng) -> Result<PointCloud> {
    if sigma == 0.0 {
        return Ok(cloud.clone());
    }
    let normal = rand_distr::Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let points = cloud
        .points()
        .iter()
        .map(|p| {
            let mut d = Vec3::new(rng.sample(normal), rng.sample(normal), rng.sample(normal));
            let n = d.norm();
            let cap = 3.0 * sigma;
            if n > cap {
                d *= cap / n;
            }
            p + d
        })
        .collect();
    match cloud.labels() {
        Some(ls) => PointCloud::with_labels(points, ls.to_vec()),
        None => PointCloud::new(points),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SabotageOp {
    RemoveTaskRegion,
    AddNoise,
    PerturbPatches,
}

/// What a sabotage pass actually did; serialized into dataset manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionRecord {
    pub op: SabotageOp,
    /// Operation-specific magnitude (removal fraction, outlier fraction,
    /// displacement as a fraction of the bounding-box diagonal).
    pub magnitude: f64,
    /// Points removed, added, or displaced.
    pub count: usize,
}

/// Corrupts a labeled cloud into an implausible sample.
///
/// remove_task_region deletes >= 80% of the task region; add_noise injects
/// 5-15% uniform outliers in the inflated bounding box; perturb_patches
/// rigidly displaces 2-5 KNN patches by 5-15% of the diagonal. Ops apply in
/// that order regardless of input order.
pub fn sabotage(
    sample: &PointCloud,
    task: &TaskSpec,
    ops: &[SabotageOp],
    seed: u64,
) -> Result<(PointCloud, Vec<CorruptionRecord>)> {
    if ops.is_empty() {
        return Err(Error::invalid(
            "an implausible sample needs at least one sabotage op",
        ));
    }
    let label = task.region_label()?;
    if sample.indices_with_label(label).is_empty() {
        return Err(Error::invalid(format!(
            "target region {:?} not present in sample labels",
            task.target_region
        )));
    }
    let mut ops: Vec<SabotageOp> = ops.to_vec();
    ops.sort_unstable();
    ops.dedup();

    let mut rng = rng_from_seed(seed);
    let mut cloud = sample.clone();
    let mut records = Vec::new();
    let diag = sample.bbox_diagonal()?;

    for op in ops {
        match op {
            SabotageOp::RemoveTaskRegion => {
                let region = cloud.indices_with_label(label);
                let frac = 0.8 + 0.2 * rng.gen::<f64>();
                let n_remove = ((region.len() as f64 * frac).ceil() as usize).min(region.len());
                let mut shuffled = region.clone();
                shuffled.shuffle(&mut rng);
                let remove: std::collections::HashSet<usize> =
                    shuffled.into_iter().take(n_remove).collect();
                let keep: Vec<usize> = (0..cloud.len()).filter(|i| !remove.contains(i)).collect();
                cloud = cloud.select(&keep);
                records.push(CorruptionRecord {
                    op,
                    magnitude: frac,
                    count: n_remove,
                });
            }
            SabotageOp::AddNoise => {
                let frac = 0.05 + 0.10 * rng.gen::<f64>();
                let n_add = (cloud.len() as f64 * frac).round() as usize;
                let (lo, hi) = cloud.bbox()?;
                let c = (lo + hi) / 2.0;
                let half = (hi - lo) / 2.0 * 1.2;
                let mut pts: Vec<Vec3> = cloud.points().to_vec();
                let mut labels: Vec<u32> = (0..cloud.len()).map(|i| cloud.label(i)).collect();
                for _ in 0..n_add {
                    pts.push(Vec3::new(
                        c.x + half.x * (2.0 * rng.gen::<f64>() - 1.0),
                        c.y + half.y * (2.0 * rng.gen::<f64>() - 1.0),
                        c.z + half.z * (2.0 * rng.gen::<f64>() - 1.0),
                    ));
                    labels.push(0);
                }
                cloud = PointCloud::with_labels(pts, labels)?;
                records.push(CorruptionRecord {
                    op,
                    magnitude: frac,
                    count: n_add,
                });
            }
            SabotageOp::PerturbPatches => {
                let n_patches = rng.gen_range(2..=5usize);
                let k = (cloud.len() / 50).max(8).min(cloud.len());
                let mut moved = 0usize;
                let mut pts: Vec<Vec3> = cloud.points().to_vec();
                let labels: Vec<u32> = (0..cloud.len()).map(|i| cloud.label(i)).collect();
                let mag = 0.05 + 0.10 * rng.gen::<f64>();
                for _ in 0..n_patches {
                    let center = rng.gen_range(0..cloud.len());
                    let patch = knn_group(&cloud, &[center], k)?;
                    let dir = random_unit(&mut rng);
                    let shift = dir * (mag * diag);
                    for &i in &patch.groups[0] {
                        pts[i] += shift;
                        moved += 1;
                    }
                }
                cloud = PointCloud::with_labels(pts, labels)?;
                records.push(CorruptionRecord {
                    op,
                    magnitude: mag,
                    count: moved,
                });
            }
        }
    }
    Ok((cloud, records))
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            2.0 * rng.gen::<f64>() - 1.0,
            2.0 * rng.gen::<f64>() - 1.0,
            2.0 * rng.gen::<f64>() - 1.0,
        );
        let n = v.norm();
        if n > 1e-4 && n <= 1.0 {
            return v / n;
        }
    }
}

/// One training sample: a partial (or sabotaged) observation with its
/// ground truth, task, and class label.
#[derive(Debug, Clone)]
pub struct DatasetSample {
    pub partial: PointCloud,
    pub ground_truth: PointCloud,
    pub task: TaskSpec,
    pub plausible: bool,
    pub corruption_record: Vec<CorruptionRecord>,
    pub kind: ShapeKind,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetConfig {
    /// Surface samples per ground-truth cloud.
    pub gt_density: usize,
    /// Scan jitter, in units of the normalized (unit-diagonal) frame.
    pub noise_sigma: f64,
    /// Relative spread of per-sample shape dimension jitter.
    pub param_spread: f64,
    pub max_occluders: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            gt_density: 2048,
            noise_sigma: 0.004,
            param_spread: 0.12,
            max_occluders: 2,
        }
    }
}

/// Builds a class-balanced dataset: plausible task-preserving partial views
/// and sabotaged implausible clouds, deterministic in `seed`.
pub fn build_dataset(
    n_plausible: usize,
    n_implausible: usize,
    seed: u64,
    config: &DatasetConfig,
) -> Result<Vec<DatasetSample>> {
    if n_plausible < 1 || n_implausible < 1 {
        return Err(Error::invalid("dataset needs at least one sample per class"));
    }
    let mut samples = Vec::with_capacity(n_plausible + n_implausible);
    for i in 0..n_plausible {
        samples.push(make_sample(i as u64, true, seed, config)?);
    }
    for i in 0..n_implausible {
        samples.push(make_sample((n_plausible + i) as u64, false, seed, config)?);
    }

    // Geometric separation sanity: corrupted clouds must sit farther from
    // their ground truth than the preserved task regions do.
    let mut cd_implausible = 0.0;
    let mut cd_task = 0.0;
    for s in &samples {
        if s.plausible {
            let label = s.task.region_label()?;
            let part_task = s.partial.select(&s.partial.indices_with_label(label));
            let gt_task = s
                .ground_truth
                .select(&s.ground_truth.indices_with_label(label));
            cd_task += chamfer(&part_task, &gt_task, ChamferVariant::L2)?;
        } else {
            cd_implausible += chamfer(&s.partial, &s.ground_truth, ChamferVariant::L2)?;
        }
    }
    cd_implausible /= n_implausible as f64;
    cd_task /= n_plausible as f64;
    if cd_implausible <= cd_task {
        return Err(Error::InvalidState(format!(
            "dataset separation failed: implausible CD {cd_implausible} <= task CD {cd_task}"
        )));
    }
    Ok(samples)
}

fn make_sample(
    index: u64,
    plausible: bool,
    root_seed: u64,
    config: &DatasetConfig,
) -> Result<DatasetSample> {
    let sample_seed = derive_seed(root_seed, "gen-data", index);
    let mut rng = rng_from_seed(sample_seed);
    let kind = ShapeKind::ALL[(index as usize) % ShapeKind::ALL.len()];
    let params = ShapeParams::jittered(kind, config.param_spread, rng.gen());
    let (_, gt_cloud) = generate_shape(kind, &params, config.gt_density, rng.gen())?;

    let tasks = lexicon::tasks_for(kind.name());
    let (task_text, _) = tasks[rng.gen_range(0..tasks.len())];
    let task = TaskSpec::new(kind.name(), task_text)?;
    let label = task.region_label()?;

    if plausible {
        let viewpoint = random_unit(&mut rng) * 2.5;
        let occluders = rng.gen_range(0..=config.max_occluders);
        let (partial, _) = render_partial_preserving(
            &gt_cloud,
            label,
            &viewpoint,
            config.noise_sigma,
            occluders,
            rng.gen(),
        )?;
        Ok(DatasetSample {
            partial,
            ground_truth: gt_cloud,
            task,
            plausible: true,
            corruption_record: Vec::new(),
            kind,
            seed: sample_seed,
        })
    } else {
        let all_ops = [
            SabotageOp::RemoveTaskRegion,
            SabotageOp::AddNoise,
            SabotageOp::PerturbPatches,
        ];
        // Non-empty random subset.
        let mask = rng.gen_range(1..8u8);
        let ops: Vec<SabotageOp> = all_ops
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, op)| *op)
            .collect();
        let (corrupted, records) = sabotage(&gt_cloud, &task, &ops, rng.gen())?;
        Ok(DatasetSample {
            partial: corrupted,
            ground_truth: gt_cloud,
            task,
            plausible: false,
            corruption_record: records,
            kind,
            seed: sample_seed,
        })
    }
}
