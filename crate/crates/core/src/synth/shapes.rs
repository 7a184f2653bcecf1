//! Parametric object shapes with labeled regions.
//!
//! Every shape is a union of posed primitives, normalized so the sampled
//! surface has unit bounding-box diagonal and centroid at the origin. The
//! signed distance stays available in the normalized frame, which is what
//! grasp synthesis and penetration evaluation query.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::solid::{Frame, Part, PrimShape};
use crate::error::{Error, Result};
use crate::geom::{PointCloud, Vec3};
use crate::rng::rng_from_seed;

pub const REGION_BODY: u32 = 1;
pub const REGION_HANDLE: u32 = 2;
pub const REGION_HEAD: u32 = 3;
pub const REGION_NECK: u32 = 4;
pub const REGION_BLADE: u32 = 5;
pub const REGION_SPOUT: u32 = 6;

pub fn region_name(label: u32) -> &'static str {
    match label {
        REGION_BODY => "body",
        REGION_HANDLE => "handle",
        REGION_HEAD => "head",
        REGION_NECK => "neck",
        REGION_BLADE => "blade",
        REGION_SPOUT => "spout",
        _ => "unlabeled",
    }
}

pub fn region_id(name: &str) -> Option<u32> {
    match name {
        "body" => Some(REGION_BODY),
        "handle" => Some(REGION_HANDLE),
        "head" => Some(REGION_HEAD),
        "neck" => Some(REGION_NECK),
        "blade" => Some(REGION_BLADE),
        "spout" => Some(REGION_SPOUT),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Mug,
    Hammer,
    Bottle,
    Pan,
    Knife,
    Teapot,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 6] = [
        ShapeKind::Mug,
        ShapeKind::Hammer,
        ShapeKind::Bottle,
        ShapeKind::Pan,
        ShapeKind::Knife,
        ShapeKind::Teapot,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ShapeKind::Mug => "mug",
            ShapeKind::Hammer => "hammer",
            ShapeKind::Bottle => "bottle",
            ShapeKind::Pan => "pan",
            ShapeKind::Knife => "knife",
            ShapeKind::Teapot => "teapot",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|k| k.name() == name)
    }
}

/// Per-kind dimension scalars (meters, before normalization).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShapeParams {
    pub values: Vec<f64>,
}

impl ShapeParams {
    /// Default dimensions for a kind.
    pub fn default_for(kind: ShapeKind) -> Self {
        let values = match kind {
            // body radius, body height, handle major radius, handle tube radius
            ShapeKind::Mug => vec![0.040, 0.100, 0.030, 0.008],
            // handle radius, handle length, head radius, head length
            ShapeKind::Hammer => vec![0.012, 0.220, 0.022, 0.090],
            // body radius, body height, neck radius, neck height
            ShapeKind::Bottle => vec![0.035, 0.140, 0.012, 0.050],
            // pan radius, wall height, handle length, handle radius
            ShapeKind::Pan => vec![0.090, 0.025, 0.120, 0.008],
            // blade length, blade width, handle length, handle radius
            ShapeKind::Knife => vec![0.120, 0.022, 0.090, 0.009],
            // body radius, spout length, handle major radius, handle tube radius
            ShapeKind::Teapot => vec![0.060, 0.070, 0.045, 0.009],
        };
        Self { values }
    }

    /// Randomly scales every dimension by up to +-`spread` (relative).
    pub fn jittered(kind: ShapeKind, spread: f64, seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let mut p = Self::default_for(kind);
        for v in &mut p.values {
            *v *= 1.0 + spread * (2.0 * rng.gen::<f64>() - 1.0);
        }
        p
    }
}

/// A labeled union-of-primitives solid, normalized to unit bounding-box
/// diagonal with centroid at the origin.
#[derive(Debug, Clone)]
pub struct ProceduralSolid {
    pub kind: ShapeKind,
    pub params: ShapeParams,
    parts: Vec<Part>,
    /// Raw-frame surface centroid.
    center: Vec3,
    /// Raw-frame bounding-box diagonal (the normalization divisor).
    diag: f64,
}

impl ProceduralSolid {
    /// Builds the solid for `kind`; errors on non-physical dimensions.
    pub fn build(kind: ShapeKind, params: &ShapeParams) -> Result<Self> {
        if params.values.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::invalid(format!(
                "non-physical shape parameter in {:?}",
                params.values
            )));
        }
        let parts = build_parts(kind, params)?;

        // Normalization from a fixed-seed probe; deterministic per
        // (kind, params) and independent of caller density/seed.
        let probe = sample_raw(&parts, 4096, 0xFEED_5EED);
        let mut lo = probe[0];
        let mut hi = probe[0];
        let mut sum = Vec3::zeros();
        for p in &probe {
            sum += *p;
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let center = sum / probe.len() as f64;
        let diag = (hi - lo).norm();
        Ok(Self {
            kind,
            params: params.clone(),
            parts,
            center,
            diag,
        })
    }

    /// Region labels present on this shape.
    pub fn regions(&self) -> Vec<u32> {
        let mut labels: Vec<u32> = self.parts.iter().map(|p| p.label).collect();
        labels.sort_unstable();
        labels.dedup();
        labels
    }

    pub fn has_region(&self, label: u32) -> bool {
        self.parts.iter().any(|p| p.label == label)
    }

    /// Signed distance in the normalized frame.
    pub fn sdf(&self, p: &Vec3) -> f64 {
        let raw = p * self.diag + self.center;
        let d = self
            .parts
            .iter()
            .map(|part| part.sdf(&raw))
            .fold(f64::INFINITY, f64::min);
        d / self.diag
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        self.sdf(p) < 0.0
    }

    /// Normalized-frame bounding box of the solid.
    pub fn bbox(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
        let mut hi = -lo;
        for part in &self.parts {
            let (plo, phi) = part.bbox();
            for a in 0..3 {
                lo[a] = lo[a].min(plo[a]);
                hi[a] = hi[a].max(phi[a]);
            }
        }
        (
            (lo - self.center) / self.diag,
            (hi - self.center) / self.diag,
        )
    }

    /// Labeled surface samples in the normalized frame; exactly `density`
    /// points, deterministic given `seed`.
    pub fn sample_surface(&self, density: usize, seed: u64) -> Result<PointCloud> {
        if density < 1 {
            return Err(Error::invalid("density must be >= 1"));
        }
        let mut rng = rng_from_seed(seed);
        let areas: Vec<f64> = self.parts.iter().map(|p| p.shape.area()).collect();
        let total: f64 = areas.iter().sum();
        // Largest-remainder allocation keeps counts exact.
        let mut counts: Vec<usize> = areas
            .iter()
            .map(|a| (a / total * density as f64).floor() as usize)
            .collect();
        let mut rem: Vec<(f64, usize)> = areas
            .iter()
            .enumerate()
            .map(|(i, a)| (a / total * density as f64, i))
            .map(|(x, i)| (x - x.floor(), i))
            .collect();
        rem.sort_by(|a, b| (b.0, a.1).partial_cmp(&(a.0, b.1)).unwrap());
        let mut missing = density - counts.iter().sum::<usize>();
        for &(_, i) in rem.iter().cycle() {
            if missing == 0 {
                break;
            }
            counts[i] += 1;
            missing -= 1;
        }

        let mut points = Vec::with_capacity(density);
        let mut labels = Vec::with_capacity(density);
        for (i, part) in self.parts.iter().enumerate() {
            let mut accepted = 0;
            let mut attempts = 0usize;
            while accepted < counts[i] {
                attempts += 1;
                if attempts > 1000 * counts[i] + 1000 {
                    return Err(Error::DegenerateGeometry(format!(
                        "surface sampling starved on part {i} of {:?}",
                        self.kind
                    )));
                }
                let local = part.shape.sample(&mut rng);
                let world = part.frame.to_world(&local);
                // Reject samples buried inside a sibling primitive.
                // Inside a sibling, or on a shared internal interface plane.
                let buried = self
                    .parts
                    .iter()
                    .enumerate()
                    .any(|(j, other)| j != i && other.sdf(&world) < 1e-9);
                if buried {
                    continue;
                }
                points.push((world - self.center) / self.diag);
                labels.push(part.label);
                accepted += 1;
            }
        }
        PointCloud::with_labels(points, labels)
    }
}

fn sample_raw(parts: &[Part], density: usize, seed: u64) -> Vec<Vec3> {
    let mut rng = rng_from_seed(seed);
    let areas: Vec<f64> = parts.iter().map(|p| p.shape.area()).collect();
    let total: f64 = areas.iter().sum();
    let mut out = Vec::with_capacity(density);
    for (i, part) in parts.iter().enumerate() {
        let n = ((areas[i] / total) * density as f64).ceil() as usize;
        let mut accepted = 0;
        let mut attempts = 0;
        while accepted < n && attempts < 100 * n + 100 {
            attempts += 1;
            let world = part.frame.to_world(&part.shape.sample(&mut rng));
            let buried = parts
                .iter()
                .enumerate()
                .any(|(j, other)| j != i && other.sdf(&world) < 1e-9);
            if !buried {
                out.push(world);
                accepted += 1;
            }
        }
    }
    out
}

fn build_parts(kind: ShapeKind, params: &ShapeParams) -> Result<Vec<Part>> {
    let v = &params.values;
    let need = |n: usize| {
        if v.len() < n {
            Err(Error::invalid(format!(
                "{} expects {n} parameters, got {}",
                kind.name(),
                v.len()
            )))
        } else {
            Ok(())
        }
    };
    let parts = match kind {
        ShapeKind::Mug => {
            need(4)?;
            let (body_r, body_h, handle_major, handle_minor) = (v[0], v[1], v[2], v[3]);
            vec![
                Part {
                    shape: PrimShape::Cylinder {
                        radius: body_r,
                        half_height: body_h / 2.0,
                    },
                    frame: Frame::identity(),
                    label: REGION_BODY,
                },
                // Half-torus handle in the xz-plane, bulging outward +x;
                // endpoints embed in the body wall.
                Part {
                    shape: PrimShape::TorusArc {
                        major: handle_major,
                        minor: handle_minor,
                        half_angle: std::f64::consts::FRAC_PI_2,
                        sample_ends: false,
                    },
                    frame: Frame {
                        // local xy-plane -> world xz-plane
                        rotation: nalgebra::Matrix3::new(
                            1.0, 0.0, 0.0, //
                            0.0, 0.0, -1.0, //
                            0.0, 1.0, 0.0,
                        ),
                        translation: Vec3::new(body_r, 0.0, 0.0),
                    },
                    label: REGION_HANDLE,
                },
            ]
        }
        ShapeKind::Hammer => {
            need(4)?;
            let (handle_r, handle_l, head_r, head_l) = (v[0], v[1], v[2], v[3]);
            vec![
                Part {
                    shape: PrimShape::Capsule {
                        radius: handle_r,
                        half_height: handle_l / 2.0,
                    },
                    frame: Frame::identity(),
                    label: REGION_HANDLE,
                },
                // Head cylinder perpendicular to the handle at the top.
                Part {
                    shape: PrimShape::Cylinder {
                        radius: head_r,
                        half_height: head_l / 2.0,
                    },
                    frame: Frame::z_toward(
                        Vec3::new(1.0, 0.0, 0.0),
                        Vec3::new(0.0, 0.0, handle_l / 2.0),
                    ),
                    label: REGION_HEAD,
                },
            ]
        }
        ShapeKind::Bottle => {
            need(4)?;
            let (body_r, body_h, neck_r, neck_h) = (v[0], v[1], v[2], v[3]);
            let shoulder_h = body_r; // smooth taper
            vec![
                Part {
                    shape: PrimShape::Cylinder {
                        radius: body_r,
                        half_height: body_h / 2.0,
                    },
                    frame: Frame::identity(),
                    label: REGION_BODY,
                },
                Part {
                    shape: PrimShape::Frustum {
                        r_bottom: body_r,
                        r_top: neck_r,
                        half_height: shoulder_h / 2.0,
                        sample_bottom: false,
                        sample_top: false,
                    },
                    frame: Frame::at(Vec3::new(0.0, 0.0, body_h / 2.0 + shoulder_h / 2.0)),
                    label: REGION_BODY,
                },
                Part {
                    shape: PrimShape::Cylinder {
                        radius: neck_r,
                        half_height: neck_h / 2.0,
                    },
                    frame: Frame::at(Vec3::new(
                        0.0,
                        0.0,
                        body_h / 2.0 + shoulder_h + neck_h / 2.0,
                    )),
                    label: REGION_NECK,
                },
            ]
        }
        ShapeKind::Pan => {
            need(4)?;
            let (pan_r, wall_h, handle_l, handle_r) = (v[0], v[1], v[2], v[3]);
            vec![
                Part {
                    shape: PrimShape::Cylinder {
                        radius: pan_r,
                        half_height: wall_h / 2.0,
                    },
                    frame: Frame::identity(),
                    label: REGION_BODY,
                },
                // Straight rod handle off the rim.
                Part {
                    shape: PrimShape::Capsule {
                        radius: handle_r,
                        half_height: handle_l / 2.0,
                    },
                    frame: Frame::z_toward(
                        Vec3::new(1.0, 0.0, 0.0),
                        Vec3::new(pan_r + handle_l / 2.0 - handle_r, 0.0, wall_h / 2.0),
                    ),
                    label: REGION_HANDLE,
                },
            ]
        }
        ShapeKind::Knife => {
            need(4)?;
            let (blade_l, blade_w, handle_l, handle_r) = (v[0], v[1], v[2], v[3]);
            let blade_t = (blade_w * 0.12).max(0.0015);
            vec![
                Part {
                    shape: PrimShape::Cuboid {
                        half: Vec3::new(blade_t / 2.0, blade_w / 2.0, blade_l / 2.0),
                    },
                    frame: Frame::at(Vec3::new(0.0, 0.0, blade_l / 2.0)),
                    label: REGION_BLADE,
                },
                Part {
                    shape: PrimShape::Capsule {
                        radius: handle_r,
                        half_height: handle_l / 2.0,
                    },
                    frame: Frame::at(Vec3::new(0.0, 0.0, -handle_l / 2.0 + handle_r)),
                    label: REGION_HANDLE,
                },
            ]
        }
        ShapeKind::Teapot => {
            need(4)?;
            let (body_r, spout_l, handle_major, handle_minor) = (v[0], v[1], v[2], v[3]);
            vec![
                Part {
                    shape: PrimShape::Sphere { radius: body_r },
                    frame: Frame::identity(),
                    label: REGION_BODY,
                },
                // Spout: tapered tube angled up from the side.
                Part {
                    shape: PrimShape::Frustum {
                        r_bottom: 0.35 * body_r,
                        r_top: 0.15 * body_r,
                        half_height: spout_l / 2.0,
                        sample_bottom: false,
                        sample_top: true,
                    },
                    frame: Frame::z_toward(
                        Vec3::new(1.0, 0.0, 0.6),
                        Vec3::new(body_r * 0.8, 0.0, body_r * 0.3) * 1.12,
                    ),
                    label: REGION_SPOUT,
                },
                // Handle: torus arc opposite the spout.
                Part {
                    shape: PrimShape::TorusArc {
                        major: handle_major,
                        minor: handle_minor,
                        half_angle: 0.6 * std::f64::consts::PI,
                        sample_ends: false,
                    },
                    frame: Frame {
                        rotation: nalgebra::Matrix3::new(
                            -1.0, 0.0, 0.0, //
                            0.0, 0.0, -1.0, //
                            0.0, -1.0, 0.0,
                        ),
                        translation: Vec3::new(-body_r * 0.9, 0.0, 0.0),
                    },
                    label: REGION_HANDLE,
                },
            ]
        }
    };
    Ok(parts)
}

/// Builds a shape and samples its labeled surface cloud.
///
/// `density >= 256` per the dataset contract; deterministic in
/// (kind, params, seed).
pub fn generate_shape(
    kind: ShapeKind,
    params: &ShapeParams,
    density: usize,
    seed: u64,
) -> Result<(ProceduralSolid, PointCloud)> {
    if density < 256 {
        return Err(Error::invalid("shape density must be >= 256"));
    }
    let solid = ProceduralSolid::build(kind, params)?;
    let cloud = solid.sample_surface(density, seed)?;
    Ok((solid, cloud))
}
