//! Primitive solids: signed distance, surface area, surface sampling.
//!
//! Shapes are unions of primitives posed by rigid frames. Every primitive is
//! defined in a canonical frame (axis along +z, centered at the origin) and
//! provides an exact signed distance, so the composed solids support
//! inside/outside tests and penetration depths analytically.

use nalgebra::Matrix3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::geom::Vec3;

/// Rigid pose of a primitive inside an object.
#[derive(Debug, Clone)]
pub struct Frame {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

impl Frame {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn at(translation: Vec3) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Frame whose local +z maps onto `dir`.
    pub fn z_toward(dir: Vec3, translation: Vec3) -> Self {
        let z = dir.normalize();
        let helper = if z.x.abs() < 0.9 {
            Vec3::new(1.0, 0.0, 0.0)
        } else {
            Vec3::new(0.0, 1.0, 0.0)
        };
        let x = helper.cross(&z).normalize();
        let y = z.cross(&x);
        Self {
            rotation: Matrix3::from_columns(&[x, y, z]),
            translation,
        }
    }

    pub fn to_local(&self, p: &Vec3) -> Vec3 {
        self.rotation.transpose() * (p - self.translation)
    }

    pub fn to_world(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }
}

/// Canonical-frame primitive geometry.
#[derive(Debug, Clone)]
pub enum PrimShape {
    /// Capped cylinder along z: radius, half height.
    Cylinder { radius: f64, half_height: f64 },
    /// Axis-aligned box: half extents.
    Cuboid { half: Vec3 },
    Sphere { radius: f64 },
    /// Capsule along z: radius, half height of the straight segment.
    Capsule { radius: f64, half_height: f64 },
    /// Capped cone along z: radius at -hh, radius at +hh, half height.
    /// Lateral surface always sampled; caps only when flagged (embedded
    /// caps are covered by the neighbor primitive).
    Frustum {
        r_bottom: f64,
        r_top: f64,
        half_height: f64,
        sample_bottom: bool,
        sample_top: bool,
    },
    /// Torus arc in the xy-plane, swept symmetrically around +x by
    /// `half_angle`, with spherical end caps.
    TorusArc {
        major: f64,
        minor: f64,
        half_angle: f64,
        sample_ends: bool,
    },
}

impl PrimShape {
    pub fn sdf(&self, p: &Vec3) -> f64 {
        match *self {
            PrimShape::Cylinder {
                radius,
                half_height,
            } => {
                let dx = (p.x * p.x + p.y * p.y).sqrt() - radius;
                let dz = p.z.abs() - half_height;
                let ox = dx.max(0.0);
                let oz = dz.max(0.0);
                (ox * ox + oz * oz).sqrt() + dx.max(dz).min(0.0)
            }
            PrimShape::Cuboid { half } => {
                let q = Vec3::new(p.x.abs() - half.x, p.y.abs() - half.y, p.z.abs() - half.z);
                let outside = Vec3::new(q.x.max(0.0), q.y.max(0.0), q.z.max(0.0));
                outside.norm() + q.x.max(q.y).max(q.z).min(0.0)
            }
            PrimShape::Sphere { radius } => p.norm() - radius,
            PrimShape::Capsule {
                radius,
                half_height,
            } => {
                let dz = (p.z.abs() - half_height).max(0.0);
                (p.x * p.x + p.y * p.y + dz * dz).sqrt() - radius
            }
            PrimShape::Frustum {
                r_bottom,
                r_top,
                half_height,
                ..
            } => sd_capped_cone(p, r_bottom, r_top, half_height),
            PrimShape::TorusArc {
                major,
                minor,
                half_angle,
                ..
            } => {
                let ang = p.y.atan2(p.x);
                if ang.abs() <= half_angle {
                    let ring = (p.x * p.x + p.y * p.y).sqrt() - major;
                    (ring * ring + p.z * p.z).sqrt() - minor
                } else {
                    let (s, c) = half_angle.sin_cos();
                    let e1 = Vec3::new(major * c, major * s, 0.0);
                    let e2 = Vec3::new(major * c, -major * s, 0.0);
                    (p - e1).norm().min((p - e2).norm()) - minor
                }
            }
        }
    }

    pub fn area(&self) -> f64 {
        use std::f64::consts::PI;
        match *self {
            PrimShape::Cylinder {
                radius,
                half_height,
            } => 2.0 * PI * radius * (2.0 * half_height) + 2.0 * PI * radius * radius,
            PrimShape::Cuboid { half } => {
                8.0 * (half.x * half.y + half.y * half.z + half.x * half.z)
            }
            PrimShape::Sphere { radius } => 4.0 * PI * radius * radius,
            PrimShape::Capsule {
                radius,
                half_height,
            } => 2.0 * PI * radius * (2.0 * half_height) + 4.0 * PI * radius * radius,
            PrimShape::Frustum {
                r_bottom,
                r_top,
                half_height,
                sample_bottom,
                sample_top,
            } => {
                let slant =
                    ((r_bottom - r_top).powi(2) + (2.0 * half_height).powi(2)).sqrt();
                let mut a = PI * (r_bottom + r_top) * slant;
                if sample_bottom {
                    a += PI * r_bottom * r_bottom;
                }
                if sample_top {
                    a += PI * r_top * r_top;
                }
                a
            }
            PrimShape::TorusArc {
                major,
                minor,
                half_angle,
                sample_ends,
            } => {
                let mut a = (2.0 * half_angle) * major * (2.0 * PI * minor);
                if sample_ends {
                    a += 4.0 * PI * minor * minor;
                }
                a
            }
        }
    }

    /// Uniform surface sample in the canonical frame.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Vec3 {
        use std::f64::consts::PI;
        match *self {
            PrimShape::Cylinder {
                radius,
                half_height,
            } => {
                let lateral = 2.0 * PI * radius * (2.0 * half_height);
                let cap = PI * radius * radius;
                let pick = rng.gen::<f64>() * (lateral + 2.0 * cap);
                if pick < lateral {
                    let th = rng.gen::<f64>() * 2.0 * PI;
                    let z = (rng.gen::<f64>() * 2.0 - 1.0) * half_height;
                    Vec3::new(radius * th.cos(), radius * th.sin(), z)
                } else {
                    let z = if pick < lateral + cap {
                        half_height
                    } else {
                        -half_height
                    };
                    let r = radius * rng.gen::<f64>().sqrt();
                    let th = rng.gen::<f64>() * 2.0 * PI;
                    Vec3::new(r * th.cos(), r * th.sin(), z)
                }
            }
            PrimShape::Cuboid { half } => {
                let areas = [
                    half.y * half.z, // x faces
                    half.x * half.z, // y faces
                    half.x * half.y, // z faces
                ];
                let total = areas.iter().sum::<f64>();
                let pick = rng.gen::<f64>() * total;
                let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                let (u, v) = (rng.gen::<f64>() * 2.0 - 1.0, rng.gen::<f64>() * 2.0 - 1.0);
                if pick < areas[0] {
                    Vec3::new(sign * half.x, u * half.y, v * half.z)
                } else if pick < areas[0] + areas[1] {
                    Vec3::new(u * half.x, sign * half.y, v * half.z)
                } else {
                    Vec3::new(u * half.x, v * half.y, sign * half.z)
                }
            }
            PrimShape::Sphere { radius } => sample_unit_sphere(rng) * radius,
            PrimShape::Capsule {
                radius,
                half_height,
            } => {
                let lateral = 2.0 * PI * radius * (2.0 * half_height);
                let caps = 4.0 * PI * radius * radius;
                let pick = rng.gen::<f64>() * (lateral + caps);
                if pick < lateral {
                    let th = rng.gen::<f64>() * 2.0 * PI;
                    let z = (rng.gen::<f64>() * 2.0 - 1.0) * half_height;
                    Vec3::new(radius * th.cos(), radius * th.sin(), z)
                } else {
                    let s = sample_unit_sphere(rng) * radius;
                    let shift = if s.z >= 0.0 { half_height } else { -half_height };
                    Vec3::new(s.x, s.y, s.z + shift)
                }
            }
            PrimShape::Frustum {
                r_bottom,
                r_top,
                half_height,
                sample_bottom,
                sample_top,
            } => {
                let slant =
                    ((r_bottom - r_top).powi(2) + (2.0 * half_height).powi(2)).sqrt();
                let lateral = PI * (r_bottom + r_top) * slant;
                let a_bot = if sample_bottom {
                    PI * r_bottom * r_bottom
                } else {
                    0.0
                };
                let a_top = if sample_top { PI * r_top * r_top } else { 0.0 };
                let pick = rng.gen::<f64>() * (lateral + a_bot + a_top);
                if pick < lateral {
                    // Rejection on t keeps the lateral density uniform.
                    let rmax = r_bottom.max(r_top);
                    loop {
                        let t = rng.gen::<f64>();
                        let r = r_bottom + (r_top - r_bottom) * t;
                        if rng.gen::<f64>() * rmax <= r {
                            let th = rng.gen::<f64>() * 2.0 * PI;
                            let z = (2.0 * t - 1.0) * half_height;
                            return Vec3::new(r * th.cos(), r * th.sin(), z);
                        }
                    }
                } else {
                    let (r_cap, z) = if pick < lateral + a_bot {
                        (r_bottom, -half_height)
                    } else {
                        (r_top, half_height)
                    };
                    let r = r_cap * rng.gen::<f64>().sqrt();
                    let th = rng.gen::<f64>() * 2.0 * PI;
                    Vec3::new(r * th.cos(), r * th.sin(), z)
                }
            }
            PrimShape::TorusArc {
                major,
                minor,
                half_angle,
                sample_ends,
            } => {
                let tube = (2.0 * half_angle) * major * (2.0 * PI * minor);
                let ends = if sample_ends {
                    4.0 * PI * minor * minor
                } else {
                    0.0
                };
                // Tube points near the cut plane sit inside the spherical end
                // caps (and cap points can sit inside the tube); re-draw until
                // the candidate is on the union surface.
                loop {
                    let pick = rng.gen::<f64>() * (tube + ends);
                    let candidate = if pick < tube {
                        // phi density proportional to (major + minor cos phi).
                        loop {
                            let th = (rng.gen::<f64>() * 2.0 - 1.0) * half_angle;
                            let phi = rng.gen::<f64>() * 2.0 * PI;
                            let w = major + minor * phi.cos();
                            if rng.gen::<f64>() * (major + minor) <= w {
                                let ring = major + minor * phi.cos();
                                break Vec3::new(
                                    ring * th.cos(),
                                    ring * th.sin(),
                                    minor * phi.sin(),
                                );
                            }
                        }
                    } else {
                        let (s, c) = half_angle.sin_cos();
                        let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                        let center = Vec3::new(major * c, sign * major * s, 0.0);
                        center + sample_unit_sphere(rng) * minor
                    };
                    if self.sdf(&candidate) > -1e-9 {
                        return candidate;
                    }
                }
            }
        }
    }

    /// Axis-aligned bounding box in the canonical frame.
    pub fn local_bbox(&self) -> (Vec3, Vec3) {
        match *self {
            PrimShape::Cylinder {
                radius,
                half_height,
            } => (
                Vec3::new(-radius, -radius, -half_height),
                Vec3::new(radius, radius, half_height),
            ),
            PrimShape::Cuboid { half } => (-half, half),
            PrimShape::Sphere { radius } => (
                Vec3::new(-radius, -radius, -radius),
                Vec3::new(radius, radius, radius),
            ),
            PrimShape::Capsule {
                radius,
                half_height,
            } => (
                Vec3::new(-radius, -radius, -half_height - radius),
                Vec3::new(radius, radius, half_height + radius),
            ),
            PrimShape::Frustum {
                r_bottom,
                r_top,
                half_height,
                ..
            } => {
                let r = r_bottom.max(r_top);
                (
                    Vec3::new(-r, -r, -half_height),
                    Vec3::new(r, r, half_height),
                )
            }
            PrimShape::TorusArc { major, minor, .. } => {
                let r = major + minor;
                (Vec3::new(-r, -r, -minor), Vec3::new(r, r, minor))
            }
        }
    }
}

fn sample_unit_sphere(rng: &mut ChaCha8Rng) -> Vec3 {
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

fn sd_capped_cone(p: &Vec3, r1: f64, r2: f64, h: f64) -> f64 {
    let q = nalgebra::Vector2::new((p.x * p.x + p.y * p.y).sqrt(), p.z);
    let k1 = nalgebra::Vector2::new(r2, h);
    let k2 = nalgebra::Vector2::new(r2 - r1, 2.0 * h);
    let ca = nalgebra::Vector2::new(
        q.x - q.x.min(if q.y < 0.0 { r1 } else { r2 }),
        q.y.abs() - h,
    );
    let t = ((k1 - q).dot(&k2) / k2.dot(&k2)).clamp(0.0, 1.0);
    let cb = q - k1 + k2 * t;
    let s = if cb.x < 0.0 && ca.y < 0.0 { -1.0 } else { 1.0 };
    s * ca.norm_squared().min(cb.norm_squared()).sqrt()
}

/// A posed, labeled primitive.
#[derive(Debug, Clone)]
pub struct Part {
    pub shape: PrimShape,
    pub frame: Frame,
    pub label: u32,
}

impl Part {
    pub fn sdf(&self, p: &Vec3) -> f64 {
        self.shape.sdf(&self.frame.to_local(p))
    }

    /// World-frame bounding box (conservative: box of the rotated corners).
    pub fn bbox(&self) -> (Vec3, Vec3) {
        let (lo, hi) = self.shape.local_bbox();
        let mut out_lo = Vec3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
        let mut out_hi = -out_lo;
        for &x in &[lo.x, hi.x] {
            for &y in &[lo.y, hi.y] {
                for &z in &[lo.z, hi.z] {
                    let w = self.frame.to_world(&Vec3::new(x, y, z));
                    for a in 0..3 {
                        out_lo[a] = out_lo[a].min(w[a]);
                        out_hi[a] = out_hi[a].max(w[a]);
                    }
                }
            }
        }
        (out_lo, out_hi)
    }
}
