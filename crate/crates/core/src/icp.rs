//! Point-to-point iterative closest point registration.

use nalgebra::{Matrix3, Point3, Rotation3, Vector3};
use serde::Serialize;

use crate::cloud::PointCloud;
use crate::kdtree::NeighborIndex;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum IcpError {
    #[error("kabsch needs at least 3 point pairs of equal count (got {src} and {dst})")]
    TooFewPairs { src: usize, dst: usize },
    #[error("degenerate point configuration: rotation is not determined")]
    Degenerate,
    #[error("cloud has {points} points, need at least {min}")]
    TooFewPoints { points: usize, min: usize },
    #[error("only {accepted} correspondences survived rejection, need {min}")]
    TooFewCorrespondences { accepted: usize, min: usize },
    #[error("invalid ICP parameters: {0}")]
    Parameter(String),
}

/// `p ↦ rotation·p + translation`, millimetres.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn apply(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Rotation angle in degrees.
    pub fn angle_deg(&self) -> f64 {
        let c = ((self.rotation.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        c.acos().to_degrees()
    }

    /// max |RᵀR − I| entry and |det R − 1|.
    pub fn orthonormality_error(&self) -> f64 {
        let e = (self.rotation.transpose() * self.rotation - Matrix3::identity()).abs().max();
        e.max((self.rotation.determinant() - 1.0).abs())
    }

    /// Rotation of `angle_deg` about `axis` through `center`, then a shift.
    pub fn about_point(axis: &Vector3<f64>, angle_deg: f64, center: &Point3<f64>, shift: &Vector3<f64>) -> Self {
        let r = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(*axis), angle_deg.to_radians());
        let rotation = *r.matrix();
        RigidTransform {
            rotation,
            translation: center.coords - rotation * center.coords + shift,
        }
    }
}

fn centroid(points: &[Point3<f64>]) -> Vector3<f64> {
    points.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords) / points.len() as f64
}

/// Least-squares rigid transform taking `src[i]` onto `dst[i]`.
pub fn kabsch(src: &[Point3<f64>], dst: &[Point3<f64>]) -> Result<RigidTransform, IcpError> {
    if src.len() != dst.len() || src.len() < 3 {
        return Err(IcpError::TooFewPairs {
            src: src.len(),
            dst: dst.len(),
        });
    }
    let sc = centroid(src);
    let dc = centroid(dst);
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (s.coords - sc) * (d.coords - dc).transpose();
    }
    let svd = h.svd(true, true);
    let sv = svd.singular_values;
    // rank ≤ 1 leaves a free rotation about the remaining axis
    if !(sv[0] > 0.0) || sv[1] <= 1e-12 * sv[0] {
        return Err(IcpError::Degenerate);
    }
    let u = svd.u.ok_or(IcpError::Degenerate)?;
    let v = svd.v_t.ok_or(IcpError::Degenerate)?.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let rotation = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    Ok(RigidTransform {
        rotation,
        translation: dc - rotation * sc,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IcpParams {
    pub max_iterations: usize,
    /// Stop once successive RMSE values differ by less than this, mm.
    pub rmse_tol: f64,
    /// Pairs farther than `reject_mult × median` pair distance are ignored
    /// by the fit; 0 disables rejection.
    pub reject_mult: f64,
    pub min_correspondences: usize,
    /// Evenly thin the source to at most this many points; 0 keeps all.
    pub max_source_points: usize,
    /// Try 2×, 4×, … multiples of each least-squares step and keep the one
    /// that lowers the (capped) RMSE most.
    pub line_search: bool,
}

impl Default for IcpParams {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            rmse_tol: 1e-4,
            reject_mult: 3.0,
            min_correspondences: 100,
            max_source_points: 0,
            line_search: true,
        }
    }
}

impl IcpParams {
    pub fn validate(&self) -> Result<(), IcpError> {
        if self.max_iterations == 0 {
            return Err(IcpError::Parameter("max_iterations must be at least 1".into()));
        }
        if !(self.rmse_tol > 0.0) {
            return Err(IcpError::Parameter("rmse_tol must be positive".into()));
        }
        if !(self.reject_mult >= 0.0) {
            return Err(IcpError::Parameter("reject_mult must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IcpResult {
    /// Maps original source coordinates into the reference frame.
    pub transform: RigidTransform,
    pub rmse: f64,
    /// Number of transform updates performed.
    pub iterations: usize,
    pub converged: bool,
    /// RMSE over the full correspondence set at the start and after each
    /// update.
    pub rmse_history: Vec<f64>,
}

pub fn icp_align(source: &PointCloud, reference: &PointCloud, params: &IcpParams) -> Result<IcpResult, IcpError> {
    params.validate()?;
    if reference.len() < params.min_correspondences.max(3) {
        return Err(IcpError::TooFewPoints {
            points: reference.len(),
            min: params.min_correspondences.max(3),
        });
    }
    icp_align_indexed(source, &NeighborIndex::new(&reference.points), params)
}

/// [`icp_align`] against a prebuilt reference index, so many frames can
/// share one.
pub fn icp_align_indexed(source: &PointCloud, reference: &NeighborIndex, params: &IcpParams) -> Result<IcpResult, IcpError> {
    params.validate()?;
    let min = params.min_correspondences.max(3);
    for n in [source.len(), reference.len()] {
        if n < min {
            return Err(IcpError::TooFewPoints { points: n, min });
        }
    }
    let src: Vec<Point3<f64>> = if params.max_source_points > 0 && source.len() > params.max_source_points {
        let stride = source.len().div_ceil(params.max_source_points);
        source.points.iter().step_by(stride).copied().collect()
    } else {
        source.points.clone()
    };

    let correspond = |t: &RigidTransform| -> Matching {
        let pairs = crate::par::map_indexed(src.len(), |i| {
            let p = t.apply(&src[i]);
            let nn = reference.nearest(&p).expect("reference is non-empty");
            (p, nn.index, nn.dist_sq)
        });
        let mut m = Matching {
            moved: Vec::with_capacity(src.len()),
            matched: Vec::with_capacity(src.len()),
            rmse: 0.0,
        };
        let mut sum = 0.0;
        for (p, j, d) in pairs {
            m.moved.push(p);
            m.matched.push((j, d));
            sum += d;
        }
        m.rmse = (sum / src.len() as f64).sqrt();
        m
    };

    let mut transform = RigidTransform::identity();
    let mut current = correspond(&transform);
    let mut history = vec![current.rmse];
    let mut iterations = 0;
    let mut converged = false;
    for _ in 0..params.max_iterations {
        let limit = if params.reject_mult > 0.0 {
            let mut d: Vec<f64> = current.matched.iter().map(|m| m.1.sqrt()).collect();
            let mid = d.len() / 2;
            let (_, median, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
            params.reject_mult * *median
        } else {
            f64::INFINITY
        };
        let mut a = Vec::with_capacity(src.len());
        let mut b = Vec::with_capacity(src.len());
        for (p, &(j, d)) in current.moved.iter().zip(&current.matched) {
            if d.sqrt() <= limit {
                a.push(*p);
                b.push(reference.point(j));
            }
        }
        if a.len() < min {
            return Err(IcpError::TooFewCorrespondences { accepted: a.len(), min });
        }
        let step = kabsch(&a, &b)?;
        let mut best_t = step.compose(&transform);
        let mut best = correspond(&best_t);
        if params.line_search {
            // stretch the step about the moved source's centroid while it helps
            let c = centroid(&current.moved);
            let omega = Rotation3::from_matrix_unchecked(step.rotation).scaled_axis();
            let shift = step.rotation * c + step.translation - c;
            let mut best_obj = best.objective(limit);
            let mut lambda = 2.0;
            while lambda <= MAX_STRETCH {
                let r = Rotation3::from_scaled_axis(omega * lambda).into_inner();
                let t = RigidTransform::new(r, c + shift * lambda - r * c).compose(&transform);
                let cand = correspond(&t);
                let obj = cand.objective(limit);
                if obj >= best_obj {
                    break;
                }
                (best_t, best, best_obj) = (t, cand, obj);
                lambda *= 2.0;
            }
        }
        transform = best_t;
        iterations += 1;
        history.push(best.rmse);
        let settled = (current.rmse - best.rmse).abs() < params.rmse_tol;
        current = best;
        if settled {
            converged = true;
            break;
        }
    }
    Ok(IcpResult {
        transform,
        rmse: current.rmse,
        iterations,
        converged,
        rmse_history: history,
    })
}

const MAX_STRETCH: f64 = 64.0;

struct Matching {
    moved: Vec<Point3<f64>>,
    /// Reference index and squared distance per source point.
    matched: Vec<(usize, f64)>,
    rmse: f64,
}

impl Matching {
    /// RMS distance with each pair capped at `limit`.
    fn objective(&self, limit: f64) -> f64 {
        if limit.is_infinite() {
            return self.rmse;
        }
        let cap = limit * limit;
        (self.matched.iter().map(|m| m.1.min(cap)).sum::<f64>() / self.matched.len() as f64).sqrt()
    }
}
