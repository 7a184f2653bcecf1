//! Point-cloud geometry: carriers, sampling, visibility, set metrics.

mod hull;
mod kdtree;
mod metrics;
mod sample;
mod visibility;

pub use hull::{convex_hull_vertices, convex_hull_vertices_checked};
pub use kdtree::KdTree;
pub use metrics::{chamfer, dcd, fscore, ChamferVariant};
pub use sample::{fps, knn_group};
pub use visibility::{hpr_visible, select_viewpoint, DEFAULT_HPR_RADIUS_FACTOR};

use crate::error::{Error, Result};

pub type Vec3 = nalgebra::Vector3<f64>;

/// Label value that marks an unlabeled point.
pub const LABEL_NONE: u32 = 0;

/// N x 3 positions with optional per-point region labels.
///
/// The universal geometry carrier: partial inputs, generated shapes,
/// candidates, restorations, and ground truth are all `PointCloud`s.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Vec3>,
    labels: Option<Vec<u32>>,
}

impl PointCloud {
    /// Builds an unlabeled cloud. Rejects non-finite coordinates.
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        if points.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::invalid("point cloud contains non-finite coordinates"));
        }
        Ok(Self { points, labels: None })
    }

    /// Builds a labeled cloud; `labels` must match point count.
    pub fn with_labels(points: Vec<Vec3>, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != points.len() {
            return Err(Error::invalid(format!(
                "label count {} != point count {}",
                labels.len(),
                points.len()
            )));
        }
        let mut cloud = Self::new(points)?;
        cloud.labels = Some(labels);
        Ok(cloud)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn is_labeled(&self) -> bool {
        self.labels.is_some()
    }

    /// Label of point `i`; `LABEL_NONE` when the cloud is unlabeled.
    pub fn label(&self, i: usize) -> u32 {
        self.labels.as_ref().map_or(LABEL_NONE, |l| l[i])
    }

    /// Indices of points carrying `label`.
    pub fn indices_with_label(&self, label: u32) -> Vec<usize> {
        match &self.labels {
            None => Vec::new(),
            Some(ls) => ls
                .iter()
                .enumerate()
                .filter(|(_, l)| **l == label)
                .map(|(i, _)| i)
                .collect(),
        }
    }

    /// Sub-cloud at `indices`, labels carried over.
    pub fn select(&self, indices: &[usize]) -> Self {
        let points = indices.iter().map(|&i| self.points[i]).collect();
        let labels = self
            .labels
            .as_ref()
            .map(|ls| indices.iter().map(|&i| ls[i]).collect());
        Self { points, labels }
    }

    /// Axis-aligned bounding box as (min, max). Errors on empty cloud.
    pub fn bbox(&self) -> Result<(Vec3, Vec3)> {
        if self.is_empty() {
            return Err(Error::invalid("bbox of empty cloud"));
        }
        let mut lo = self.points[0];
        let mut hi = self.points[0];
        for p in &self.points {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        Ok((lo, hi))
    }

    /// Bounding-box diagonal length.
    pub fn bbox_diagonal(&self) -> Result<f64> {
        let (lo, hi) = self.bbox()?;
        Ok((hi - lo).norm())
    }

    pub fn centroid(&self) -> Result<Vec3> {
        if self.is_empty() {
            return Err(Error::invalid("centroid of empty cloud"));
        }
        let sum: Vec3 = self.points.iter().sum();
        Ok(sum / self.points.len() as f64)
    }

    /// Applies `f` to every point, keeping labels.
    pub fn map_points(&self, f: impl Fn(&Vec3) -> Vec3) -> Result<Self> {
        let points: Vec<Vec3> = self.points.iter().map(|p| f(p)).collect();
        let mut cloud = Self::new(points)?;
        cloud.labels = self.labels.clone();
        Ok(cloud)
    }

    /// Concatenates two clouds. The result is labeled if either input is;
    /// missing labels become `LABEL_NONE`.
    pub fn concat(&self, other: &Self) -> Self {
        let mut points = self.points.clone();
        points.extend_from_slice(&other.points);
        let labels = if self.labels.is_some() || other.labels.is_some() {
            let mut ls: Vec<u32> = (0..self.len()).map(|i| self.label(i)).collect();
            ls.extend((0..other.len()).map(|i| other.label(i)));
            Some(ls)
        } else {
            None
        };
        Self { points, labels }
    }
}

/// FPS centers with their KNN point groups.
#[derive(Debug, Clone)]
pub struct PatchSet {
    /// Positions of the patch centers (a subset of the source cloud).
    pub centers: Vec<Vec3>,
    /// Indices of the centers in the source cloud.
    pub center_indices: Vec<usize>,
    /// For each center, indices of its `k_neighbors` nearest points.
    pub groups: Vec<Vec<usize>>,
    pub k_neighbors: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite() {
        let bad = vec![Vec3::new(0.0, f64::NAN, 0.0)];
        assert!(PointCloud::new(bad).is_err());
    }

    #[test]
    fn rejects_label_mismatch() {
        let pts = vec![Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0)];
        assert!(PointCloud::with_labels(pts, vec![1]).is_err());
    }

    #[test]
    fn select_keeps_labels() {
        let pts = vec![Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), Vec3::new(2.0, 0.0, 0.0)];
        let cloud = PointCloud::with_labels(pts, vec![1, 2, 3]).unwrap();
        let sub = cloud.select(&[2, 0]);
        assert_eq!(sub.labels().unwrap(), &[3, 1]);
        assert_eq!(sub.points()[0], Vec3::new(2.0, 0.0, 0.0));
    }

    #[test]
    fn bbox_and_centroid() {
        let pts = vec![Vec3::new(-1.0, 0.0, 0.0), Vec3::new(1.0, 2.0, 0.0)];
        let cloud = PointCloud::new(pts).unwrap();
        let (lo, hi) = cloud.bbox().unwrap();
        assert_eq!(lo, Vec3::new(-1.0, 0.0, 0.0));
        assert_eq!(hi, Vec3::new(1.0, 2.0, 0.0));
        assert_eq!(cloud.centroid().unwrap(), Vec3::new(0.0, 1.0, 0.0));
    }
}
