//! Synthetic breathing-chest stereo sequences with exact ground truth.
//!
//! The scene is a textured backdrop plane with a smooth elliptical bump in
//! front of it. Breathing pushes the bump toward the camera by `e(x, y)·g(t)`,
//! where `e` is a flat-topped envelope and `g` the breathing waveform. Both
//! views are ray-cast in rectified geometry, so corresponding points share
//! image rows exactly.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::calib::{PinholeIntrinsics, RectifiedGeometry, StereoRig};
use crate::cloud::RoiBox;
use crate::frames::{FrameError, FrameProvider, StereoFrame};
use crate::image::GrayImage;
use crate::stereo::DisparityMap;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid synthetic scene parameter: {0}")]
    Parameter(String),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Spike {
    pub time: f64,
    pub amplitude: f64,
    /// Gaussian standard deviation, s.
    pub width: f64,
}

/// Breathing displacement `g(t)` in mm, positive toward the camera.
#[derive(Clone, Debug, PartialEq)]
pub enum Waveform {
    Sine { amplitude: f64, freq: f64 },
    /// `A·max(0, sin 2πft)`: the chest never sinks below rest.
    HalfRectified { amplitude: f64, freq: f64 },
    TwoTone { a1: f64, f1: f64, a2: f64, f2: f64 },
    /// `first` until `switch`, then `second` restarted at `switch`.
    Sequential { first: Box<Waveform>, second: Box<Waveform>, switch: f64 },
    /// `base` plus transient Gaussian spikes.
    Spiked { base: Box<Waveform>, spikes: Vec<Spike> },
}

impl Waveform {
    pub fn value(&self, t: f64) -> f64 {
        match self {
            Waveform::Sine { amplitude, freq } => amplitude * (2.0 * PI * freq * t).sin(),
            Waveform::HalfRectified { amplitude, freq } => amplitude * (2.0 * PI * freq * t).sin().max(0.0),
            Waveform::TwoTone { a1, f1, a2, f2 } => {
                a1 * (2.0 * PI * f1 * t).sin() + a2 * (2.0 * PI * f2 * t).sin()
            }
            Waveform::Sequential { first, second, switch } => {
                if t < *switch {
                    first.value(t)
                } else {
                    second.value(t - switch)
                }
            }
            Waveform::Spiked { base, spikes } => {
                base.value(t)
                    + spikes
                        .iter()
                        .map(|s| s.amplitude * (-0.5 * ((t - s.time) / s.width).powi(2)).exp())
                        .sum::<f64>()
            }
        }
    }

    pub fn max_frequency(&self) -> f64 {
        match self {
            Waveform::Sine { freq, .. } | Waveform::HalfRectified { freq, .. } => *freq,
            Waveform::TwoTone { f1, f2, .. } => f1.max(*f2),
            Waveform::Sequential { first, second, .. } => first.max_frequency().max(second.max_frequency()),
            Waveform::Spiked { base, .. } => base.max_frequency(),
        }
    }

    /// Largest displacement magnitude the waveform can reach.
    pub fn peak_amplitude(&self) -> f64 {
        match self {
            Waveform::Sine { amplitude, .. } | Waveform::HalfRectified { amplitude, .. } => amplitude.abs(),
            Waveform::TwoTone { a1, a2, .. } => a1.abs() + a2.abs(),
            Waveform::Sequential { first, second, .. } => first.peak_amplitude().max(second.peak_amplitude()),
            Waveform::Spiked { base, spikes } => {
                base.peak_amplitude() + spikes.iter().map(|s| s.amplitude.abs()).sum::<f64>()
            }
        }
    }

    /// Times of breath maxima in `[0, duration)`, when they follow from the
    /// waveform definition (cough spikes are not breaths).
    pub fn breath_times(&self, duration: f64) -> Option<Vec<f64>> {
        match self {
            Waveform::Sine { freq, amplitude } | Waveform::HalfRectified { freq, amplitude } => {
                if *amplitude == 0.0 {
                    return Some(Vec::new());
                }
                Some(
                    (0..)
                        .map(|k| (k as f64 + 0.25) / freq)
                        .take_while(|t| *t < duration)
                        .collect(),
                )
            }
            Waveform::TwoTone { .. } => None,
            Waveform::Sequential { first, second, switch } => {
                let mut times = first.breath_times(duration.min(*switch))?;
                let rest = second.breath_times((duration - switch).max(0.0))?;
                times.extend(rest.into_iter().map(|t| t + switch));
                Some(times)
            }
            Waveform::Spiked { base, .. } => base.breath_times(duration),
        }
    }
}

/// Backdrop plane plus breathing chest bump, mm in the left rectified
/// camera frame.
#[derive(Clone, Debug, PartialEq)]
pub struct ChestModel {
    /// Backdrop depth D.
    pub standoff: f64,
    /// How far the bump's apex stands in front of the backdrop.
    pub bump_height: f64,
    /// Bump semi-axes along x and y.
    pub semi_axes: (f64, f64),
    pub center: (f64, f64),
    /// Normalised radius up to which the breathing envelope stays at 1.
    pub flat_radius: f64,
    pub waveform: Waveform,
    pub texture_seed: u64,
    /// Intensity swing of the texture around mid-grey.
    pub contrast: f64,
}

impl ChestModel {
    pub fn new(waveform: Waveform) -> Self {
        Self {
            standoff: 1000.0,
            bump_height: 80.0,
            semi_axes: (130.0, 100.0),
            center: (0.0, 0.0),
            flat_radius: 0.6,
            waveform,
            texture_seed: 0x5eed,
            contrast: 90.0,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let far = self.standoff;
        let near = self.standoff - self.bump_height - self.waveform.peak_amplitude();
        if !(near > 300.0 && far < 2000.0) {
            return Err(SynthError::Parameter(format!(
                "scene depth range [{near}, {far}] mm leaves the (300, 2000) mm working window"
            )));
        }
        if !(self.semi_axes.0 > 0.0 && self.semi_axes.1 > 0.0) {
            return Err(SynthError::Parameter("bump semi-axes must be positive".into()));
        }
        if !(self.flat_radius >= 0.0 && self.flat_radius < 1.0) {
            return Err(SynthError::Parameter("flat_radius must lie in [0, 1)".into()));
        }
        if !(self.bump_height >= 0.0 && self.contrast >= 0.0) {
            return Err(SynthError::Parameter("bump height and contrast must be non-negative".into()));
        }
        Ok(())
    }

    fn radius_sq(&self, x: f64, y: f64) -> f64 {
        ((x - self.center.0) / self.semi_axes.0).powi(2) + ((y - self.center.1) / self.semi_axes.1).powi(2)
    }

    /// Resting surface depth z₀.
    pub fn base_depth(&self, x: f64, y: f64) -> f64 {
        let r2 = self.radius_sq(x, y);
        if r2 >= 1.0 {
            self.standoff
        } else {
            self.standoff - self.bump_height * (1.0 - r2).powi(2)
        }
    }

    /// Breathing weight: 1 on the flat top, smoothly down to 0 at the rim.
    pub fn envelope(&self, x: f64, y: f64) -> f64 {
        let r = self.radius_sq(x, y).sqrt();
        if r >= 1.0 {
            0.0
        } else if r <= self.flat_radius {
            1.0
        } else {
            let s = (1.0 - r) / (1.0 - self.flat_radius);
            s * s * (3.0 - 2.0 * s)
        }
    }

    fn depth_at(&self, x: f64, y: f64, g: f64) -> f64 {
        self.base_depth(x, y) - self.envelope(x, y) * g
    }

    /// Surface depth at `(x, y)` and time `t`; outside the bump this is the
    /// backdrop depth.
    pub fn chest_depth(&self, x: f64, y: f64, t: f64) -> f64 {
        self.depth_at(x, y, self.waveform.value(t))
    }

    /// Texture intensity (before quantisation) at a surface point.
    pub fn texture(&self, x: f64, y: f64) -> f64 {
        const OCTAVES: [(f64, f64); 3] = [(32.0, 0.5), (16.0, 0.3), (8.0, 0.2)];
        let n: f64 = OCTAVES
            .iter()
            .enumerate()
            .map(|(o, &(scale, weight))| weight * value_noise(x / scale, y / scale, self.texture_seed ^ (o as u64 + 1)))
            .sum();
        128.0 + self.contrast * n
    }

    /// Depth of the first surface hit along the ray `(ox + z·a, z·b, z)`,
    /// or `None` if the fixed-point iteration fails to settle.
    fn cast(&self, ox: f64, a: f64, b: f64, g: f64) -> Option<(f64, f64, f64)> {
        let mut z = self.standoff;
        for _ in 0..200 {
            let (x, y) = (ox + z * a, z * b);
            let next = self.depth_at(x, y, g);
            if (next - z).abs() < 1e-4 {
                return Some((ox + next * a, next * b, next));
            }
            z = next;
        }
        None
    }
}

fn hash_lattice(ix: i64, iy: i64, seed: u64) -> f64 {
    let mut h = seed
        ^ (ix as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ (iy as u64).wrapping_mul(0xc2b2_ae3d_27d4_eb4f);
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h = h.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    h ^= h >> 33;
    (h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

/// Smoothly interpolated lattice noise in [-1, 1].
fn value_noise(x: f64, y: f64, seed: u64) -> f64 {
    let (fx, fy) = (x.floor(), y.floor());
    let (ix, iy) = (fx as i64, fy as i64);
    let fade = |t: f64| t * t * t * (t * (t * 6.0 - 15.0) + 10.0);
    let (sx, sy) = (fade(x - fx), fade(y - fy));
    let v00 = hash_lattice(ix, iy, seed);
    let v10 = hash_lattice(ix + 1, iy, seed);
    let v01 = hash_lattice(ix, iy + 1, seed);
    let v11 = hash_lattice(ix + 1, iy + 1, seed);
    let top = v00 + (v10 - v00) * sx;
    let bottom = v01 + (v11 - v01) * sx;
    top + (bottom - top) * sy
}

/// Per-frame truth for the left view.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    /// Row-major surface depth, NaN where the ray did not settle.
    pub depth: Vec<f64>,
    pub disparity: DisparityMap,
    pub displacement: f64,
}

/// Default synthetic camera: 320×240, f = 420 px, 100 mm baseline, already
/// rectified.
pub fn default_geometry() -> RectifiedGeometry {
    RectifiedGeometry {
        f: 420.0,
        cx: 159.5,
        cy: 119.5,
        baseline: 100.0,
    }
}

pub const DEFAULT_SIZE: (usize, usize) = (320, 240);

/// Distortion-free fronto-parallel rig whose rectification is the identity.
pub fn rig_for(geometry: &RectifiedGeometry) -> StereoRig {
    let k = PinholeIntrinsics::new(geometry.f, geometry.f, geometry.cx, geometry.cy).expect("valid synthetic intrinsics");
    StereoRig::fronto_parallel(k, geometry.baseline).expect("valid synthetic rig")
}

fn quantize(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Renders one stereo pair at time `t`. Intensity noise is drawn from a
/// generator seeded with `noise_seed`.
pub fn render_stereo(
    model: &ChestModel,
    geometry: &RectifiedGeometry,
    size: (usize, usize),
    t: f64,
    noise_sigma: f64,
    noise_seed: u64,
) -> Result<(GrayImage, GrayImage, GroundTruth), SynthError> {
    model.validate()?;
    if !(noise_sigma >= 0.0) {
        return Err(SynthError::Parameter("noise_sigma must be non-negative".into()));
    }
    let (w, h) = size;
    let g = model.waveform.value(t);
    let fb = geometry.f * geometry.baseline;
    let mut depth = vec![f64::NAN; w * h];
    let mut disparity = DisparityMap::invalid(w, h);
    let mut left = vec![0.0; w * h];
    let mut right = vec![0.0; w * h];
    for v in 0..h {
        let b = (v as f64 - geometry.cy) / geometry.f;
        for u in 0..w {
            let a = (u as f64 - geometry.cx) / geometry.f;
            let i = v * w + u;
            left[i] = match model.cast(0.0, a, b, g) {
                Some((x, y, z)) => {
                    depth[i] = z;
                    disparity.set(u, v, Some(fb / z));
                    model.texture(x, y)
                }
                None => model.texture(model.standoff * a, model.standoff * b),
            };
            right[i] = match model.cast(geometry.baseline, a, b, g) {
                Some((x, y, _)) => model.texture(x, y),
                None => model.texture(geometry.baseline + model.standoff * a, model.standoff * b),
            };
        }
    }
    if noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
        let normal = Normal::new(0.0, noise_sigma).map_err(|e| SynthError::Parameter(e.to_string()))?;
        for p in left.iter_mut().chain(right.iter_mut()) {
            *p += normal.sample(&mut rng);
        }
    }
    let to_image = |px: Vec<f64>| GrayImage::new(w, h, px.into_iter().map(quantize).collect()).expect("sized buffer");
    Ok((
        to_image(left),
        to_image(right),
        GroundTruth {
            depth,
            disparity,
            displacement: g,
        },
    ))
}

/// A breathing scene sampled at a fixed frame rate; frames are rendered on
/// demand, so the whole sequence never has to sit in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSequence {
    pub model: ChestModel,
    pub geometry: RectifiedGeometry,
    pub size: (usize, usize),
    pub fps: f64,
    pub duration: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SyntheticSequence {
    pub fn new(
        model: ChestModel,
        geometry: RectifiedGeometry,
        size: (usize, usize),
        fps: f64,
        duration: f64,
        noise_sigma: f64,
        seed: u64,
    ) -> Result<Self, SynthError> {
        model.validate()?;
        if !(fps > 0.0 && duration > 0.0) {
            return Err(SynthError::Parameter("fps and duration must be positive".into()));
        }
        let f_max = model.waveform.max_frequency();
        if !(fps > 2.0 * f_max) {
            return Err(SynthError::Parameter(format!(
                "{fps} fps cannot sample a {f_max} Hz waveform (Nyquist)"
            )));
        }
        if size.0 == 0 || size.1 == 0 {
            return Err(SynthError::Parameter("image size must be positive".into()));
        }
        Ok(Self {
            model,
            geometry,
            size,
            fps,
            duration,
            noise_sigma,
            seed,
        })
    }

    pub fn frame_count(&self) -> usize {
        // frames at t = i/fps for t < duration
        (self.fps * self.duration - 1e-9).ceil().max(0.0) as usize
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 / self.fps
    }

    pub fn render(&self, i: usize) -> Result<(StereoFrame, GroundTruth), SynthError> {
        let (l, r, gt) = render_stereo(
            &self.model,
            &self.geometry,
            self.size,
            self.time(i),
            self.noise_sigma,
            self.seed ^ i as u64,
        )?;
        let frame = StereoFrame::new(l, r, i, self.fps).map_err(|e| SynthError::Parameter(e.to_string()))?;
        Ok((frame, gt))
    }

    /// `g(i/fps)` for every frame.
    pub fn ground_truth(&self) -> Vec<f64> {
        (0..self.frame_count()).map(|i| self.model.waveform.value(self.time(i))).collect()
    }

    pub fn rig(&self) -> StereoRig {
        rig_for(&self.geometry)
    }

    /// Box over the flat top of the envelope, in front of the backdrop.
    pub fn chest_roi(&self) -> RoiBox {
        let m = &self.model;
        let (hx, hy) = (
            m.semi_axes.0 * m.flat_radius / std::f64::consts::SQRT_2,
            m.semi_axes.1 * m.flat_radius / std::f64::consts::SQRT_2,
        );
        let near = m.standoff - m.bump_height - 2.0 * m.waveform.peak_amplitude() - 50.0;
        RoiBox::new(
            nalgebra::Point3::new(m.center.0 - hx, m.center.1 - hy, near.max(300.0)),
            nalgebra::Point3::new(m.center.0 + hx, m.center.1 + hy, m.standoff - 10.0),
        )
        .expect("non-empty box")
    }

    /// Disparity search range covering the scene with some slack.
    pub fn disparity_range(&self) -> (usize, usize) {
        let fb = self.geometry.f * self.geometry.baseline;
        let m = &self.model;
        let near = m.standoff - m.bump_height - m.waveform.peak_amplitude();
        let lo = (fb / (m.standoff * 1.15)).floor().max(0.0) as usize;
        let hi = (fb / (near * 0.9)).ceil() as usize;
        (lo, hi.max(lo + 1))
    }
}

impl FrameProvider for SyntheticSequence {
    fn len(&self) -> usize {
        self.frame_count()
    }

    fn fps(&self) -> f64 {
        self.fps
    }

    fn frame(&self, index: usize) -> Result<StereoFrame, FrameError> {
        if index >= self.frame_count() {
            return Err(FrameError::Parameter(format!(
                "frame {index} out of range 0..{}",
                self.frame_count()
            )));
        }
        self.render(index)
            .map(|(f, _)| f)
            .map_err(|e| FrameError::Parameter(e.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scenario {
    Normal,
    Deep,
    Shallow,
    Mixed,
    Cough,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [
        Scenario::Normal,
        Scenario::Deep,
        Scenario::Shallow,
        Scenario::Mixed,
        Scenario::Cough,
    ];

    pub const FPS: f64 = 15.0;
    pub const DURATION: f64 = 60.0;
    pub const NOISE_SIGMA: f64 = 2.0;

    fn normal() -> Waveform {
        Waveform::Sine {
            amplitude: 6.0,
            freq: 0.33,
        }
    }

    fn shallow() -> Waveform {
        Waveform::HalfRectified {
            amplitude: 2.5,
            freq: 0.7,
        }
    }

    pub fn waveform(&self, duration: f64, seed: u64) -> Waveform {
        match self {
            Scenario::Normal => Self::normal(),
            Scenario::Deep => Waveform::Sine {
                amplitude: 12.0,
                freq: 0.15,
            },
            Scenario::Shallow => Self::shallow(),
            Scenario::Mixed => {
                // last rising zero crossing of the first half: both pieces
                // pass through zero upward there, so the join is smooth
                let f = 0.33;
                let switch = (duration / 2.0 * f).floor() / f;
                Waveform::Sequential {
                    first: Box::new(Self::normal()),
                    second: Box::new(Self::shallow()),
                    switch,
                }
            }
            Scenario::Cough => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc0_06);
                let when = Uniform::new(0.2 * duration, 0.8 * duration).expect("valid range");
                let mut times = [when.sample(&mut rng), when.sample(&mut rng)];
                times.sort_by(f64::total_cmp);
                Waveform::Spiked {
                    base: Box::new(Self::normal()),
                    spikes: times
                        .iter()
                        .map(|&time| Spike {
                            time,
                            amplitude: 9.0,
                            width: 0.1,
                        })
                        .collect(),
                }
            }
        }
    }

    pub fn sequence(&self, seed: u64) -> SyntheticSequence {
        let mut model = ChestModel::new(self.waveform(Self::DURATION, seed));
        model.texture_seed ^= seed;
        SyntheticSequence::new(
            model,
            default_geometry(),
            DEFAULT_SIZE,
            Self::FPS,
            Self::DURATION,
            Self::NOISE_SIGMA,
            seed,
        )
        .expect("presets are valid")
    }
}

impl FromStr for Scenario {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scenario::ALL
            .into_iter()
            .find(|k| k.to_string() == s.trim())
            .ok_or_else(|| SynthError::Parameter(format!("unknown scenario `{s}`")))
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::Normal => "normal",
            Scenario::Deep => "deep",
            Scenario::Shallow => "shallow",
            Scenario::Mixed => "mixed",
            Scenario::Cough => "cough",
        })
    }
}
