//! Metric point clouds from disparity, with invalid-point removal,
//! statistical denoising and region-of-interest cropping.
//!
//! All coordinates are millimetres in the left rectified camera frame:
//! z forward, x right, y down.

use std::fmt;
use std::str::FromStr;

use nalgebra::Point3;

use crate::calib::RectifiedGeometry;
use crate::kdtree::NeighborIndex;
use crate::stereo::DisparityMap;

/// Default working-distance window for [`remove_invalid`], mm.
pub const DEFAULT_Z_RANGE: (f64, f64) = (300.0, 2000.0);

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3<f64>>,
    /// Source pixel `(u, v)` of each point, when known.
    pub pixels: Option<Vec<(u32, u32)>>,
}

impl PointCloud {
    pub fn from_points(points: Vec<Point3<f64>>) -> Self {
        Self { points, pixels: None }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn retain_by(&self, keep: impl Fn(usize, &Point3<f64>) -> bool) -> Self {
        let mask: Vec<bool> = self.points.iter().enumerate().map(|(i, p)| keep(i, p)).collect();
        let points = self
            .points
            .iter()
            .zip(&mask)
            .filter(|(_, k)| **k)
            .map(|(p, _)| *p)
            .collect();
        let pixels = self.pixels.as_ref().map(|px| {
            px.iter()
                .zip(&mask)
                .filter(|(_, k)| **k)
                .map(|(p, _)| *p)
                .collect()
        });
        Self { points, pixels }
    }

    pub fn transformed(&self, f: impl FnMut(&Point3<f64>) -> Point3<f64>) -> Self {
        Self {
            points: self.points.iter().map(f).collect(),
            pixels: self.pixels.clone(),
        }
    }
}

/// Triangulates every valid disparity: `Z = f·B/d`, `X = (u − cx)·Z/f`,
/// `Y = (v − cy)·Z/f`.
pub fn reproject(map: &DisparityMap, geometry: &RectifiedGeometry) -> PointCloud {
    reproject_strided(map, geometry, 1)
}

/// [`reproject`] restricted to pixels on a `stride`-spaced grid.
pub fn reproject_strided(map: &DisparityMap, geometry: &RectifiedGeometry, stride: usize) -> PointCloud {
    let stride = stride.max(1);
    let fb = geometry.f * geometry.baseline;
    let mut points = Vec::new();
    let mut pixels = Vec::new();
    for v in (0..map.height()).step_by(stride) {
        for u in (0..map.width()).step_by(stride) {
            let Some(d) = map.get(u, v) else { continue };
            if d <= 0.0 {
                continue;
            }
            let z = fb / d;
            points.push(Point3::new(
                (u as f64 - geometry.cx) * z / geometry.f,
                (v as f64 - geometry.cy) * z / geometry.f,
                z,
            ));
            pixels.push((u as u32, v as u32));
        }
    }
    PointCloud {
        points,
        pixels: Some(pixels),
    }
}

/// Drops non-finite points and points outside the inclusive depth window.
pub fn remove_invalid(cloud: &PointCloud, z_range: (f64, f64)) -> PointCloud {
    cloud.retain_by(|_, p| {
        p.x.is_finite() && p.y.is_finite() && p.z.is_finite() && p.z >= z_range.0 && p.z <= z_range.1
    })
}

#[derive(Clone, Debug, PartialEq)]
pub enum DenoiseWarning {
    TooFewPoints { points: usize, k: usize },
}

impl fmt::Display for DenoiseWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DenoiseWarning::TooFewPoints { points, k } => {
                write!(f, "denoise skipped: {points} points is not more than k = {k}")
            }
        }
    }
}

/// Mean distance from each point to its `k` nearest neighbours (itself
/// excluded).
pub fn mean_neighbor_distances(cloud: &PointCloud, k: usize) -> Vec<f64> {
    let index = NeighborIndex::new(&cloud.points);
    crate::par::map_indexed(cloud.len(), |i| {
        let nn = index.k_nearest(&cloud.points[i], k, Some(i));
        nn.iter().map(|n| n.dist_sq.sqrt()).sum::<f64>() / nn.len().max(1) as f64
    })
}

/// Statistical outlier removal: drops points whose mean k-NN distance
/// exceeds `μ + stddev_mult·σ` of that statistic over the cloud.
pub fn denoise_statistical(cloud: &PointCloud, k: usize, stddev_mult: f64) -> (PointCloud, Option<DenoiseWarning>) {
    if k == 0 || cloud.len() <= k {
        return (
            cloud.clone(),
            Some(DenoiseWarning::TooFewPoints { points: cloud.len(), k }),
        );
    }
    let means = mean_neighbor_distances(cloud, k);
    let n = means.len() as f64;
    let mu = means.iter().sum::<f64>() / n;
    let sigma = (means.iter().map(|m| (m - mu) * (m - mu)).sum::<f64>() / n).sqrt();
    let limit = mu + stddev_mult * sigma;
    (cloud.retain_by(|i, _| means[i] <= limit), None)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RoiBox {
    Full,
    /// Inclusive axis-aligned box in the camera frame.
    Box { min: Point3<f64>, max: Point3<f64> },
}

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("invalid ROI `{0}`: expected `full` or x0:y0:z0:x1:y1:z1 with min < max")]
pub struct RoiParseError(String);

impl RoiBox {
    pub fn new(min: Point3<f64>, max: Point3<f64>) -> Result<Self, RoiParseError> {
        if (0..3).all(|a| min[a] < max[a]) {
            Ok(RoiBox::Box { min, max })
        } else {
            Err(RoiParseError(format!("{min:?} .. {max:?}")))
        }
    }

    pub fn contains(&self, p: &Point3<f64>) -> bool {
        match self {
            RoiBox::Full => true,
            RoiBox::Box { min, max } => (0..3).all(|a| p[a] >= min[a] && p[a] <= max[a]),
        }
    }

    /// Box test on x and y only.
    pub fn contains_xy(&self, x: f64, y: f64) -> bool {
        match self {
            RoiBox::Full => true,
            RoiBox::Box { min, max } => x >= min.x && x <= max.x && y >= min.y && y <= max.y,
        }
    }
}

impl FromStr for RoiBox {
    type Err = RoiParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s == "full" {
            return Ok(RoiBox::Full);
        }
        let vals: Vec<f64> = s
            .split(':')
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| RoiParseError(s.to_string()))?;
        if vals.len() != 6 || vals.iter().any(|v| !v.is_finite()) {
            return Err(RoiParseError(s.to_string()));
        }
        RoiBox::new(
            Point3::new(vals[0], vals[1], vals[2]),
            Point3::new(vals[3], vals[4], vals[5]),
        )
        .map_err(|_| RoiParseError(s.to_string()))
    }
}

impl fmt::Display for RoiBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RoiBox::Full => f.write_str("full"),
            RoiBox::Box { min, max } => write!(f, "{}:{}:{}:{}:{}:{}", min.x, min.y, min.z, max.x, max.y, max.z),
        }
    }
}

pub fn crop_roi(cloud: &PointCloud, roi: &RoiBox) -> PointCloud {
    match roi {
        RoiBox::Full => cloud.clone(),
        _ => cloud.retain_by(|_, p| roi.contains(p)),
    }
}
