//! Stereo camera model, rectification maps and disparity-to-depth conversion.
//!
//! Conventions: a point `X_l` in the left camera frame (x right, y down, z
//! forward, millimetres) appears in the right camera frame as
//! `X_r = rotation * X_l + translation`. A standard rig with the right camera
//! 60 mm to the right of the left one therefore has `translation = (-60, 0, 0)`.

use std::path::Path;

use nalgebra::{Matrix3, Rotation3, Vector3, SVD};

use crate::image::GrayImage;
use crate::kv::{parse_floats, KvError, KvFile};

#[derive(Debug, thiserror::Error)]
pub enum CalibError {
    #[error("cannot read calibration {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("calibration config error: {0}")]
    Config(String),
    #[error("calibration validation error: {0}")]
    Validation(String),
    #[error("rectification geometry error: {0}")]
    Geometry(String),
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("invalid disparity {0} (must be > 0)")]
    InvalidDisparity(f64),
}

/// Rotations closer than this to orthonormal are accepted as-is.
pub const ORTHONORMAL_TOL: f64 = 1e-9;
/// Rotations within this distance are projected back onto SO(3); beyond it
/// they are rejected.
pub const REORTHONORMALIZE_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PinholeIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub k1: f64,
    pub k2: f64,
}

impl PinholeIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self, CalibError> {
        Self::with_distortion(fx, fy, cx, cy, 0.0, 0.0)
    }

    pub fn with_distortion(fx: f64, fy: f64, cx: f64, cy: f64, k1: f64, k2: f64) -> Result<Self, CalibError> {
        let all_finite = [fx, fy, cx, cy, k1, k2].iter().all(|v| v.is_finite());
        if !all_finite || fx <= 0.0 || fy <= 0.0 {
            return Err(CalibError::Validation(format!(
                "focal lengths must be positive and finite (fx={fx}, fy={fy})"
            )));
        }
        Ok(Self { fx, fy, cx, cy, k1, k2 })
    }

    fn radial_scale(&self, r2: f64) -> f64 {
        1.0 + self.k1 * r2 + self.k2 * r2 * r2
    }

    /// Projects a camera-frame point to distorted pixel coordinates.
    pub fn project(&self, p: &Vector3<f64>) -> Option<(f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        let (x, y) = (p.x / p.z, p.y / p.z);
        let s = self.radial_scale(x * x + y * y);
        Some((self.fx * x * s + self.cx, self.fy * y * s + self.cy))
    }

    /// Normalized undistorted coordinates of a pixel (fixed-point inversion of
    /// the radial model).
    pub fn unproject(&self, u: f64, v: f64) -> (f64, f64) {
        let xd = (u - self.cx) / self.fx;
        let yd = (v - self.cy) / self.fy;
        let (mut x, mut y) = (xd, yd);
        if self.k1 != 0.0 || self.k2 != 0.0 {
            for _ in 0..50 {
                let s = self.radial_scale(x * x + y * y);
                x = xd / s;
                y = yd / s;
            }
        }
        (x, y)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StereoRig {
    left: PinholeIntrinsics,
    right: PinholeIntrinsics,
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

fn orthonormality_error(r: &Matrix3<f64>) -> f64 {
    (r.transpose() * r - Matrix3::identity()).abs().max()
}

impl StereoRig {
    /// Validates the extrinsics; a rotation with drift below
    /// [`REORTHONORMALIZE_TOL`] is snapped back onto SO(3).
    pub fn new(
        left: PinholeIntrinsics,
        right: PinholeIntrinsics,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Result<Self, CalibError> {
        if rotation.iter().chain(translation.iter()).any(|v| !v.is_finite()) {
            return Err(CalibError::Validation("non-finite extrinsics".into()));
        }
        if rotation.determinant() <= 0.0 {
            return Err(CalibError::Validation(format!(
                "rotation has determinant {:.6}; reflections are not rigid motions",
                rotation.determinant()
            )));
        }
        let err = orthonormality_error(&rotation);
        let rotation = if err <= ORTHONORMAL_TOL {
            rotation
        } else if err < REORTHONORMALIZE_TOL {
            let svd = SVD::new(rotation, true, true);
            svd.u.unwrap() * svd.v_t.unwrap()
        } else {
            return Err(CalibError::Validation(format!(
                "rotation is not orthonormal (max |RᵀR - I| = {err:.3e})"
            )));
        };
        if translation.norm() <= 0.0 {
            return Err(CalibError::Validation("baseline must be positive".into()));
        }
        Ok(Self {
            left,
            right,
            rotation,
            translation,
        })
    }

    /// Rectified rig: identical intrinsics, no rotation, right camera
    /// `baseline` mm along +x.
    pub fn fronto_parallel(intrinsics: PinholeIntrinsics, baseline: f64) -> Result<Self, CalibError> {
        Self::new(
            intrinsics,
            intrinsics,
            Matrix3::identity(),
            Vector3::new(-baseline, 0.0, 0.0),
        )
    }

    pub fn left(&self) -> &PinholeIntrinsics {
        &self.left
    }

    pub fn right(&self) -> &PinholeIntrinsics {
        &self.right
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Distance between the optical centres, mm.
    pub fn baseline(&self) -> f64 {
        self.translation.norm()
    }

    pub fn to_kv(&self) -> KvFile {
        let mut kv = KvFile::default();
        for (suffix, k) in [("l", &self.left), ("r", &self.right)] {
            kv.insert(format!("fx_{suffix}"), k.fx);
            kv.insert(format!("fy_{suffix}"), k.fy);
            kv.insert(format!("cx_{suffix}"), k.cx);
            kv.insert(format!("cy_{suffix}"), k.cy);
            kv.insert(format!("k1_{suffix}"), k.k1);
            kv.insert(format!("k2_{suffix}"), k.k2);
        }
        let r = &self.rotation;
        let rot: Vec<String> = (0..3)
            .flat_map(|i| (0..3).map(move |j| r[(i, j)].to_string()))
            .collect();
        kv.insert("rot", rot.join(" "));
        let t = &self.translation;
        kv.insert("trans", format!("{} {} {}", t.x, t.y, t.z));
        kv
    }

    pub fn from_kv(kv: &KvFile) -> Result<Self, CalibError> {
        const KNOWN: [&str; 14] = [
            "fx_l", "fy_l", "cx_l", "cy_l", "k1_l", "k2_l", "fx_r", "fy_r", "cx_r", "cy_r", "k1_r",
            "k2_r", "rot", "trans",
        ];
        if let Some(k) = kv.keys().find(|k| !KNOWN.contains(k)) {
            return Err(CalibError::Config(format!("unknown key `{k}`")));
        }
        let scalar = |key: &str, default: Option<f64>| -> Result<f64, CalibError> {
            match (kv.get(key), default) {
                (Some(v), _) => v
                    .parse()
                    .map_err(|_| CalibError::Config(format!("key `{key}` is not a number: {v:?}"))),
                (None, Some(d)) => Ok(d),
                (None, None) => Err(CalibError::Config(format!("missing key `{key}`"))),
            }
        };
        let intrinsics = |s: &str| -> Result<PinholeIntrinsics, CalibError> {
            PinholeIntrinsics::with_distortion(
                scalar(&format!("fx_{s}"), None)?,
                scalar(&format!("fy_{s}"), None)?,
                scalar(&format!("cx_{s}"), None)?,
                scalar(&format!("cy_{s}"), None)?,
                scalar(&format!("k1_{s}"), Some(0.0))?,
                scalar(&format!("k2_{s}"), Some(0.0))?,
            )
        };
        let left = intrinsics("l")?;
        let right = intrinsics("r")?;
        let list = |key: &str, n: usize| -> Result<Vec<f64>, CalibError> {
            let v = kv
                .get(key)
                .ok_or_else(|| CalibError::Config(format!("missing key `{key}`")))?;
            parse_floats(v)
                .filter(|vals| vals.len() == n)
                .ok_or_else(|| CalibError::Config(format!("key `{key}` needs {n} numbers")))
        };
        let rot = list("rot", 9)?;
        let trans = list("trans", 3)?;
        Self::new(
            left,
            right,
            Matrix3::from_row_slice(&rot),
            Vector3::new(trans[0], trans[1], trans[2]),
        )
    }
}

pub fn load_calibration(path: &Path) -> Result<StereoRig, CalibError> {
    let kv = KvFile::read(path).map_err(|e| match e {
        KvError::Io { path, source } => CalibError::Io { path, source },
        other => CalibError::Config(other.to_string()),
    })?;
    StereoRig::from_kv(&kv)
}

/// Shared geometry of the rectified camera pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RectifiedGeometry {
    /// Focal length in pixels, both cameras.
    pub f: f64,
    pub cx: f64,
    pub cy: f64,
    /// mm; the right rectified camera sits at `(baseline, 0, 0)` in the left
    /// rectified frame.
    pub baseline: f64,
}

impl RectifiedGeometry {
    pub fn project(&self, p: &Vector3<f64>) -> Option<(f64, f64)> {
        (p.z > 0.0).then(|| (self.f * p.x / p.z + self.cx, self.f * p.y / p.z + self.cy))
    }
}

/// For each rectified pixel, where to sample the original image (NaN when the
/// ray points behind the camera).
#[derive(Clone, Debug, PartialEq)]
pub struct SampleMap {
    width: usize,
    height: usize,
    coords: Vec<[f64; 2]>,
}

impl SampleMap {
    pub fn identity(width: usize, height: usize) -> Self {
        Self::from_fn(width, height, |u, v| [u as f64, v as f64])
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f64; 2]) -> Self {
        let mut coords = Vec::with_capacity(width * height);
        for v in 0..height {
            for u in 0..width {
                coords.push(f(u, v));
            }
        }
        Self {
            width,
            height,
            coords,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, u: usize, v: usize) -> [f64; 2] {
        self.coords[v * self.width + u]
    }

    /// Bilinearly interpolated source position at a fractional rectified pixel.
    pub fn sample(&self, u: f64, v: f64) -> Option<(f64, f64)> {
        let (fu, fv) = (u.floor(), v.floor());
        if fu < 0.0 || fv < 0.0 || u > (self.width - 1) as f64 || v > (self.height - 1) as f64 {
            return None;
        }
        let u0 = (fu as usize).min(self.width.saturating_sub(2));
        let v0 = (fv as usize).min(self.height.saturating_sub(2));
        let (au, av) = (u - u0 as f64, v - v0 as f64);
        let u1 = (u0 + 1).min(self.width - 1);
        let v1 = (v0 + 1).min(self.height - 1);
        let mut out = [0.0; 2];
        for (c, o) in out.iter_mut().enumerate() {
            let top = self.get(u0, v0)[c] * (1.0 - au) + self.get(u1, v0)[c] * au;
            let bottom = self.get(u0, v1)[c] * (1.0 - au) + self.get(u1, v1)[c] * au;
            *o = top * (1.0 - av) + bottom * av;
        }
        out.iter().all(|c| c.is_finite()).then_some((out[0], out[1]))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RectificationMaps {
    pub left: SampleMap,
    pub right: SampleMap,
    pub geometry: RectifiedGeometry,
    /// Rotates left-camera coordinates into the left rectified frame.
    pub left_rotation: Matrix3<f64>,
    /// Rotates right-camera coordinates into the right rectified frame.
    pub right_rotation: Matrix3<f64>,
}

/// Rotation taking unit direction `from` onto unit direction `to`.
fn align(from: &Vector3<f64>, to: &Vector3<f64>) -> Matrix3<f64> {
    let axis = from.cross(to);
    let s = axis.norm();
    let c = from.dot(to);
    if s < 1e-15 {
        // callers guarantee the vectors are not anti-parallel
        return Matrix3::identity();
    }
    Rotation3::from_scaled_axis(axis / s * s.atan2(c)).into_inner()
}

/// Rectifying rotations and maps for a stereo rig: the relative rotation is
/// split evenly between both cameras, then both are turned so the baseline
/// becomes the x axis.
pub fn compute_rectification(rig: &StereoRig, width: usize, height: usize) -> Result<RectificationMaps, CalibError> {
    if width == 0 || height == 0 {
        return Err(CalibError::Parameter("image size must be positive".into()));
    }
    let baseline = rig.baseline();
    if baseline < 1e-6 {
        return Err(CalibError::Geometry(format!(
            "degenerate rig: baseline {baseline:e} mm"
        )));
    }
    let half = Rotation3::from_matrix_unchecked(rig.rotation).scaled_axis() * 0.5;
    let half = Rotation3::from_scaled_axis(half).into_inner();
    // Both half-rotated cameras share orientation; right = left + t_mid.
    let t_mid = half.transpose() * rig.translation;
    if t_mid.x >= 0.0 {
        return Err(CalibError::Geometry(
            "right camera must lie on the +x side of the left camera".into(),
        ));
    }
    let target = Vector3::new(-1.0, 0.0, 0.0);
    let r_align = align(&t_mid.normalize(), &target);
    let r_left = r_align * half;
    let r_right = r_align * half.transpose();

    let f = (rig.left.fx + rig.left.fy + rig.right.fx + rig.right.fy) / 4.0;

    // Centre the rectified views on where the original image corners land.
    let corners = [
        (0.0, 0.0),
        ((width - 1) as f64, 0.0),
        (0.0, (height - 1) as f64),
        ((width - 1) as f64, (height - 1) as f64),
    ];
    let mut sum = (0.0, 0.0);
    let mut count = 0.0;
    for (k, r) in [(&rig.left, &r_left), (&rig.right, &r_right)] {
        for &(u, v) in &corners {
            let (x, y) = k.unproject(u, v);
            let p = r * Vector3::new(x, y, 1.0);
            if p.z <= 0.0 {
                return Err(CalibError::Geometry(
                    "image corner rotates behind the rectified camera".into(),
                ));
            }
            sum.0 += f * p.x / p.z;
            sum.1 += f * p.y / p.z;
            count += 1.0;
        }
    }
    let geometry = RectifiedGeometry {
        f,
        cx: (width - 1) as f64 / 2.0 - sum.0 / count,
        cy: (height - 1) as f64 / 2.0 - sum.1 / count,
        baseline,
    };

    let build = |k: &PinholeIntrinsics, r: &Matrix3<f64>| {
        let back = r.transpose();
        SampleMap::from_fn(width, height, |u, v| {
            let ray = back
                * Vector3::new(
                    (u as f64 - geometry.cx) / f,
                    (v as f64 - geometry.cy) / f,
                    1.0,
                );
            match k.project(&ray) {
                Some((x, y)) => [x, y],
                None => [f64::NAN, f64::NAN],
            }
        })
    };
    Ok(RectificationMaps {
        left: build(&rig.left, &r_left),
        right: build(&rig.right, &r_right),
        geometry,
        left_rotation: r_left,
        right_rotation: r_right,
    })
}

const EDGE_EPS: f64 = 1e-6;

/// Bilinear resampling through `map`; samples outside the source become 0.
pub fn rectify_image(img: &GrayImage, map: &SampleMap) -> Result<GrayImage, CalibError> {
    if img.width() != map.width || img.height() != map.height {
        return Err(CalibError::Parameter(format!(
            "map is {}x{} but image is {}x{}",
            map.width,
            map.height,
            img.width(),
            img.height()
        )));
    }
    let (w, h) = (img.width(), img.height());
    let (wmax, hmax) = ((w - 1) as f64, (h - 1) as f64);
    let data = map
        .coords
        .iter()
        .map(|&[sx, sy]| {
            if !(sx >= -EDGE_EPS && sy >= -EDGE_EPS && sx <= wmax + EDGE_EPS && sy <= hmax + EDGE_EPS) {
                return 0;
            }
            let sx = sx.clamp(0.0, wmax);
            let sy = sy.clamp(0.0, hmax);
            let x0 = (sx.floor() as usize).min(w.saturating_sub(2));
            let y0 = (sy.floor() as usize).min(h.saturating_sub(2));
            let x1 = (x0 + 1).min(w - 1);
            let y1 = (y0 + 1).min(h - 1);
            let (ax, ay) = (sx - x0 as f64, sy - y0 as f64);
            let p = |x, y| img.get(x, y) as f64;
            let top = p(x0, y0) * (1.0 - ax) + p(x1, y0) * ax;
            let bottom = p(x0, y1) * (1.0 - ax) + p(x1, y1) * ax;
            (top * (1.0 - ay) + bottom * ay).round().clamp(0.0, 255.0) as u8
        })
        .collect();
    Ok(GrayImage::new(w, h, data).expect("same dimensions as input"))
}

/// Metric depth (mm) of a rectified disparity: `Z = f * B / d`.
pub fn disparity_to_depth(disparity: f64, rectified_f: f64, baseline: f64) -> Result<f64, CalibError> {
    if !(disparity > 0.0) || !disparity.is_finite() {
        return Err(CalibError::InvalidDisparity(disparity));
    }
    Ok(rectified_f * baseline / disparity)
}
