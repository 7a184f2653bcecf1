//! Candidate generation: pluggable generative backends, task-region
//! resolution, and alignment + fusion into fixed-size completion candidates.
//!
//! The backend seam stands where a foundation-model pipeline would sit: it
//! receives the partial cloud, category, task, and a per-candidate scale
//! knob, and must return labeled clouds. The in-repo backend retrieves the
//! catalog shape for the category and corrupts it in a scale-dependent way:
//! low scales deform globally and grow spurious bumps, high scales stay
//! faithful to the catalog shape but reproduce the partial view's missing
//! regions.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{KdTree, PointCloud, Vec3};
use crate::register::{
    fuse, task_weighted_icp, FuseOrigin, IcpConfig, RegistrationResult, DEFAULT_W_TASK,
};
use crate::rng::{derive_seed, rng_from_seed};
use crate::synth::{generate_shape, lexicon, region_id, ShapeKind, ShapeParams, TaskSpec};

/// Number of points in every finished candidate cloud.
pub const DEFAULT_N_CAN: usize = 2048;
/// Default number of candidates per request.
pub const DEFAULT_N_CANDIDATES: usize = 4;

#[derive(Debug, Clone)]
pub struct CandidateRequest {
    pub partial: PointCloud,
    pub task: TaskSpec,
    /// One generated cloud per perturbation scale.
    pub perturb_scales: Vec<f64>,
    /// Output size of each fused candidate.
    pub n_can: usize,
}

impl CandidateRequest {
    pub fn new(partial: PointCloud, task: TaskSpec, perturb_scales: Vec<f64>) -> Result<Self> {
        if partial.is_empty() {
            return Err(Error::invalid("candidate request with empty partial"));
        }
        if perturb_scales.is_empty() {
            return Err(Error::invalid("candidate request with no scales"));
        }
        if perturb_scales.iter().any(|s| !(*s > 0.0 && *s <= 1.0)) {
            return Err(Error::invalid("perturb scales must lie in (0, 1]"));
        }
        Ok(Self {
            partial,
            task,
            perturb_scales,
            n_can: DEFAULT_N_CAN,
        })
    }

    pub fn n_candidates(&self) -> usize {
        self.perturb_scales.len()
    }
}

/// A fused completion candidate.
#[derive(Debug, Clone)]
pub struct Candidate {
    /// Exactly `n_can` points, labels carried from whichever fused source
    /// point survived.
    pub cloud: PointCloud,
    /// The perturbation scale that produced the generated cloud.
    pub source_scale: f64,
    pub alignment: RegistrationResult,
    /// Indices of task-region points inside `cloud`.
    pub task_mask: Vec<usize>,
    /// Count of fused points that originate from the partial input.
    pub n_from_partial: usize,
}

/// Per-candidate outcome; failures occupy their slot so downstream
/// selection always sees a fixed-arity list.
#[derive(Debug, Clone)]
pub enum CandidateSlot {
    Ok(Box<Candidate>),
    Failed { scale: f64, reason: String },
}

impl CandidateSlot {
    pub fn as_ok(&self) -> Option<&Candidate> {
        match self {
            CandidateSlot::Ok(c) => Some(c),
            CandidateSlot::Failed { .. } => None,
        }
    }
}

/// Generative backend interface (the foundation-model seam).
pub trait GeneratorBackend: Sync {
    fn name(&self) -> &str;

    /// Exactly `request.n_candidates()` labeled clouds.
    fn generate(&self, request: &CandidateRequest, seed: u64) -> Result<Vec<PointCloud>>;

    /// Whether concurrent `generate` calls are safe; serial backends are
    /// invoked one request at a time.
    fn concurrent_safe(&self) -> bool {
        true
    }
}

/// Catalog of canonical shapes the stub backend retrieves from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShapeCatalog {
    /// Dimension jitter applied to catalog entries, mimicking generator
    /// shape-guess error.
    pub param_spread: f64,
    /// Surface samples per generated cloud.
    pub density: usize,
}

impl Default for ShapeCatalog {
    fn default() -> Self {
        Self {
            param_spread: 0.05,
            density: 2048,
        }
    }
}

/// Deterministic stand-in for the generative path.
pub struct StubBackend {
    pub catalog: ShapeCatalog,
}

impl StubBackend {
    pub fn new(catalog: ShapeCatalog) -> Self {
        Self { catalog }
    }
}

impl GeneratorBackend for StubBackend {
    fn name(&self) -> &str {
        "stub"
    }

    fn generate(&self, request: &CandidateRequest, seed: u64) -> Result<Vec<PointCloud>> {
        stub_backend_generate(request, &self.catalog, seed)
    }
}

/// Retrieves the catalog shape for the request category and corrupts it per
/// perturbation scale. Low scale: smooth global deformation plus spurious
/// bumps. High scale: faithful geometry, but points uncovered by the partial
/// view are dropped with probability equal to the scale (the generator
/// "faithfully reproduces missing-region artifacts").
pub fn stub_backend_generate(
    request: &CandidateRequest,
    catalog: &ShapeCatalog,
    seed: u64,
) -> Result<Vec<PointCloud>> {
    let kind = ShapeKind::from_name(&request.task.category)
        .ok_or_else(|| Error::CategoryNotFound(request.task.category.clone()))?;
    let diag = request.partial.bbox_diagonal()?;
    let coverage_radius = 0.04 * diag;
    let partial_tree = KdTree::build(request.partial.points());

    let mut out = Vec::with_capacity(request.perturb_scales.len());
    for (ci, &scale) in request.perturb_scales.iter().enumerate() {
        let cand_seed = derive_seed(seed, "stub-backend", ci as u64);
        let mut rng = rng_from_seed(cand_seed);
        let params = ShapeParams::jittered(kind, catalog.param_spread, rng.gen());
        let (_, base) = generate_shape(kind, &params, catalog.density, rng.gen())?;

        // Global deformation, inversely related to the scale knob.
        let amp = 0.15 * (1.0 - scale) * diag;
        let phase = Vec3::new(
            rng.gen::<f64>() * 6.28,
            rng.gen::<f64>() * 6.28,
            rng.gen::<f64>() * 6.28,
        );
        let freq = 5.0 + 3.0 * rng.gen::<f64>();
        let mut deformed = base.map_points(|p| {
            if amp == 0.0 {
                return *p;
            }
            p + Vec3::new(
                (freq * p.y + phase.x).sin(),
                (freq * p.z + phase.y).sin(),
                (freq * p.x + phase.z).sin(),
            ) * amp
        })?;

        // Spurious bumps for unfaithful scales.
        let n_bumps = ((1.0 - scale) * 4.0).round() as usize;
        for _ in 0..n_bumps {
            let center = deformed.points()[rng.gen_range(0..deformed.len())];
            let radius = diag * (0.06 + 0.06 * rng.gen::<f64>());
            let dir_seed = rng.gen::<u64>();
            let mut drng = rng_from_seed(dir_seed);
            let push: Vec3 = loop {
                let v = Vec3::new(
                    2.0 * drng.gen::<f64>() - 1.0,
                    2.0 * drng.gen::<f64>() - 1.0,
                    2.0 * drng.gen::<f64>() - 1.0,
                );
                if v.norm() > 1e-4 && v.norm() <= 1.0 {
                    break v.normalize();
                }
            };
            let r2 = radius * radius;
            deformed = deformed.map_points(|p| {
                let d2 = (p - center).norm_squared();
                if d2 < r2 {
                    let w = 1.0 - (d2 / r2);
                    p + push * (0.5 * radius * w)
                } else {
                    *p
                }
            })?;
        }

        // Missing-region artifacts for faithful scales: drop points the
        // partial view does not cover, with probability `scale`.
        let mut keep = Vec::with_capacity(deformed.len());
        for (i, p) in deformed.points().iter().enumerate() {
            let covered = partial_tree.nearest(p).1 <= coverage_radius * coverage_radius;
            if covered || rng.gen::<f64>() >= scale {
                keep.push(i);
            }
        }
        // A pathological draw could empty the cloud; keep at least one point.
        if keep.is_empty() {
            keep.push(0);
        }
        out.push(deformed.select(&keep));
    }
    Ok(out)
}

/// Indices whose label matches the lexicon region for the task. An
/// unlabeled cloud resolves to the empty set; an unknown task errors.
pub fn resolve_task_region(cloud: &PointCloud, task: &TaskSpec) -> Result<Vec<usize>> {
    let region = lexicon::lookup(&task.category, &task.task_text)?;
    let label = region_id(region)
        .ok_or_else(|| Error::invalid(format!("region {region:?} has no label id")))?;
    Ok(cloud.indices_with_label(label))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandgenConfig {
    pub w_task: f64,
    pub icp: IcpConfig,
}

impl Default for CandgenConfig {
    fn default() -> Self {
        Self {
            w_task: DEFAULT_W_TASK,
            icp: IcpConfig::default(),
        }
    }
}

/// Runs the full candidate pipeline: generate, resolve task regions, align
/// with the task-weighted ICP, and fuse to `n_can` points. Candidate order
/// follows `perturb_scales`; per-candidate failures fill their slot instead
/// of aborting the request.
pub fn make_candidates(
    request: &CandidateRequest,
    backend: &dyn GeneratorBackend,
    config: &CandgenConfig,
    seed: u64,
) -> Result<Vec<CandidateSlot>> {
    let generated = backend.generate(request, seed)?;
    if generated.len() != request.n_candidates() {
        return Err(Error::InvalidState(format!(
            "backend {} returned {} clouds for {} scales",
            backend.name(),
            generated.len(),
            request.n_candidates()
        )));
    }
    let partial_task_idx = resolve_task_region(&request.partial, &request.task)?;
    let partial_task = request.partial.select(&partial_task_idx);

    let mut slots = Vec::with_capacity(generated.len());
    for (ci, gen_cloud) in generated.into_iter().enumerate() {
        let scale = request.perturb_scales[ci];
        match build_candidate(
            request,
            &partial_task,
            gen_cloud,
            scale,
            config,
        ) {
            Ok(c) => slots.push(CandidateSlot::Ok(Box::new(c))),
            Err(e) => slots.push(CandidateSlot::Failed {
                scale,
                reason: e.to_string(),
            }),
        }
    }
    Ok(slots)
}

fn build_candidate(
    request: &CandidateRequest,
    partial_task: &PointCloud,
    gen_cloud: PointCloud,
    scale: f64,
    config: &CandgenConfig,
) -> Result<Candidate> {
    let gen_task_idx = resolve_task_region(&gen_cloud, &request.task)?;
    let gen_task = gen_cloud.select(&gen_task_idx);
    let alignment = task_weighted_icp(
        &request.partial,
        &gen_cloud,
        partial_task,
        &gen_task,
        config.w_task,
        &config.icp,
    )?;
    let aligned = alignment.transform.apply_cloud(&gen_cloud)?;
    let fused = fuse(&request.partial, &aligned, request.n_can)?;
    let n_from_partial = fused
        .provenance
        .iter()
        .filter(|o| matches!(o, FuseOrigin::Input(_)))
        .count();
    let task_mask = resolve_task_region(&fused.cloud, &request.task)?;
    Ok(Candidate {
        cloud: fused.cloud,
        source_scale: scale,
        alignment,
        task_mask,
        n_from_partial,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{chamfer, ChamferVariant};
    use crate::synth::render_partial;

    fn mug_fixture(seed: u64) -> (PointCloud, PointCloud, TaskSpec) {
        let params = ShapeParams::default_for(ShapeKind::Mug);
        let (_, gt) = generate_shape(ShapeKind::Mug, &params, 2048, seed).unwrap();
        let partial = render_partial(&gt, &Vec3::new(2.0, 0.4, 0.6), 0.0, 0, seed).unwrap();
        let task = TaskSpec::new("mug", "pick up by handle").unwrap();
        (gt, partial, task)
    }

    #[test]
    fn stub_faithful_mode_close_to_catalog_with_full_coverage() {
        // Partial covering the full shape: faithful mode loses nothing.
        let params = ShapeParams::default_for(ShapeKind::Mug);
        let (_, gt) = generate_shape(ShapeKind::Mug, &params, 2048, 3).unwrap();
        let task = TaskSpec::new("mug", "pick up by handle").unwrap();
        let request = CandidateRequest::new(gt.clone(), task, vec![1.0]).unwrap();
        let catalog = ShapeCatalog {
            param_spread: 0.0,
            density: 2048,
        };
        let clouds = stub_backend_generate(&request, &catalog, 5).unwrap();
        let cd = chamfer(&clouds[0], &gt, ChamferVariant::L2).unwrap();
        assert!(cd < 1e-3, "faithful-mode CD {cd} too large");
    }

    #[test]
    fn stub_returns_one_cloud_per_scale() {
        let (_, partial, task) = mug_fixture(1);
        let request = CandidateRequest::new(partial, task, vec![0.3, 0.6, 1.0]).unwrap();
        let clouds = stub_backend_generate(&request, &ShapeCatalog::default(), 9).unwrap();
        assert_eq!(clouds.len(), 3);
        assert!(clouds.iter().all(|c| c.is_labeled()));
    }

    #[test]
    fn stub_deterministic() {
        let (_, partial, task) = mug_fixture(2);
        let request = CandidateRequest::new(partial, task, vec![0.4, 0.9]).unwrap();
        let a = stub_backend_generate(&request, &ShapeCatalog::default(), 11).unwrap();
        let b = stub_backend_generate(&request, &ShapeCatalog::default(), 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn stub_unknown_category_errors() {
        let (_, partial, _) = mug_fixture(3);
        let task = TaskSpec {
            task_text: "pick up by handle".into(),
            category: "spaceship".into(),
            target_region: "handle".into(),
        };
        let request = CandidateRequest::new(partial, task, vec![0.5]).unwrap();
        assert!(matches!(
            stub_backend_generate(&request, &ShapeCatalog::default(), 1),
            Err(Error::CategoryNotFound(_))
        ));
    }

    #[test]
    fn resolve_task_region_matches_labels() {
        let (gt, _, task) = mug_fixture(4);
        let idx = resolve_task_region(&gt, &task).unwrap();
        let expected = gt.indices_with_label(crate::synth::REGION_HANDLE);
        assert_eq!(idx, expected);
        assert!(!idx.is_empty());
    }

    #[test]
    fn resolve_lexicon_pour_maps_to_handle() {
        let (gt, _, _) = mug_fixture(5);
        let pour = TaskSpec::new("mug", "pour water").unwrap();
        let idx = resolve_task_region(&gt, &pour).unwrap();
        assert_eq!(idx, gt.indices_with_label(crate::synth::REGION_HANDLE));
    }

    #[test]
    fn resolve_unlabeled_cloud_is_empty() {
        let (gt, _, task) = mug_fixture(6);
        let unlabeled = PointCloud::new(gt.points().to_vec()).unwrap();
        assert!(resolve_task_region(&unlabeled, &task).unwrap().is_empty());
    }

    #[test]
    fn resolve_unknown_task_errors() {
        let (gt, _, _) = mug_fixture(7);
        let task = TaskSpec {
            task_text: "levitate".into(),
            category: "mug".into(),
            target_region: "handle".into(),
        };
        assert!(matches!(
            resolve_task_region(&gt, &task),
            Err(Error::UnknownTask(_, _))
        ));
    }

    #[test]
    fn candidates_have_exact_size_and_partial_points() {
        let (gt, partial, task) = mug_fixture(8);
        let request = CandidateRequest::new(partial.clone(), task, vec![0.5, 1.0]).unwrap();
        let backend = StubBackend::new(ShapeCatalog::default());
        let slots =
            make_candidates(&request, &backend, &CandgenConfig::default(), 13).unwrap();
        assert_eq!(slots.len(), 2);
        for slot in &slots {
            let c = slot.as_ok().expect("candidate should succeed");
            assert_eq!(c.cloud.len(), DEFAULT_N_CAN);
            assert!(c.n_from_partial >= 1, "fusion dropped the observation");
            // Registration never hurts the objective.
            assert!(c.alignment.objective <= c.alignment.trace[0] + 1e-12);
        }
        // Fused candidate should be closer to GT than the raw partial.
        let c0 = slots[1].as_ok().unwrap();
        let cd_cand = chamfer(&c0.cloud, &gt, ChamferVariant::L2).unwrap();
        let cd_partial = chamfer(&partial, &gt, ChamferVariant::L2).unwrap();
        assert!(
            cd_cand < cd_partial,
            "candidate CD {cd_cand} !< partial CD {cd_partial}"
        );
    }

    #[test]
    fn failed_registration_marks_slot() {
        struct DegenerateBackend;
        impl GeneratorBackend for DegenerateBackend {
            fn name(&self) -> &str {
                "degenerate"
            }
            fn generate(&self, req: &CandidateRequest, _seed: u64) -> Result<Vec<PointCloud>> {
                // All points coincident: registration must fail.
                let cloud =
                    PointCloud::with_labels(vec![Vec3::zeros(); 16], vec![1; 16]).unwrap();
                Ok(vec![cloud; req.n_candidates()])
            }
        }
        let (_, partial, task) = mug_fixture(9);
        let request = CandidateRequest::new(partial, task, vec![0.5, 0.8]).unwrap();
        let slots = make_candidates(
            &request,
            &DegenerateBackend,
            &CandgenConfig::default(),
            17,
        )
        .unwrap();
        assert_eq!(slots.len(), 2);
        for slot in &slots {
            assert!(matches!(slot, CandidateSlot::Failed { .. }));
        }
    }

    #[test]
    fn pipeline_deterministic() {
        let (_, partial, task) = mug_fixture(10);
        let request = CandidateRequest::new(partial, task, vec![0.5, 1.0]).unwrap();
        let backend = StubBackend::new(ShapeCatalog::default());
        let cfg = CandgenConfig::default();
        let a = make_candidates(&request, &backend, &cfg, 23).unwrap();
        let b = make_candidates(&request, &backend, &cfg, 23).unwrap();
        for (x, y) in a.iter().zip(&b) {
            match (x, y) {
                (CandidateSlot::Ok(cx), CandidateSlot::Ok(cy)) => {
                    assert_eq!(cx.cloud, cy.cloud);
                    assert_eq!(cx.task_mask, cy.task_mask);
                }
                _ => panic!("slot mismatch"),
            }
        }
    }

    #[test]
    fn request_validation() {
        let (_, partial, task) = mug_fixture(11);
        assert!(CandidateRequest::new(partial.clone(), task.clone(), vec![]).is_err());
        assert!(CandidateRequest::new(partial.clone(), task.clone(), vec![1.5]).is_err());
        let empty = PointCloud::new(vec![]).unwrap();
        assert!(CandidateRequest::new(empty, task, vec![0.5]).is_err());
    }
}
