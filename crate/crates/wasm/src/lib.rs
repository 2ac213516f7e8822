//! Browser bindings: breath counting on a generated signal, stereo matching
//! of a rendered chest, and ICP on a perturbed chest cloud.
//!
//! The `*_json` functions are plain Rust so they can be tested natively;
//! the `#[wasm_bindgen]` wrappers only convert errors.

use nalgebra::{Point3, Vector3};
use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::Serialize;
use wasm_bindgen::prelude::*;

use breathscope::cloud::PointCloud;
use breathscope::icp::{icp_align, IcpParams, RigidTransform};
use breathscope::pipeline::{analyze_series, BandChoice, PipelineConfig};
use breathscope::signal::AgeBand;
use breathscope::stereo::{compute_disparity, filter_disparity, FilterParams};
use breathscope::synth::{default_geometry, render_stereo, ChestModel, Scenario, DEFAULT_SIZE};

fn js(e: String) -> JsError {
    JsError::new(&e)
}

#[derive(Serialize)]
struct SignalResult {
    breath_count: usize,
    bpm: f64,
    classification: String,
    dominant_hz: f64,
    band: (f64, f64),
    raw: Vec<f64>,
    filtered: Vec<f64>,
    peaks: Vec<usize>,
    truth: Vec<f64>,
    warnings: Vec<String>,
}

/// Scenario waveform sampled at `fs`, plus Gaussian noise, then analysed.
pub fn signal_demo_json(scenario: &str, seconds: f64, fs: f64, noise_mm: f64, age: &str, seed: u64) -> Result<String, String> {
    let scenario: Scenario = scenario.parse().map_err(|e: breathscope::synth::SynthError| e.to_string())?;
    let age: AgeBand = age.parse().map_err(|e: breathscope::signal::SignalError| e.to_string())?;
    if !(seconds > 0.0 && seconds <= 600.0 && fs > 2.0 && fs <= 100.0 && noise_mm >= 0.0) {
        return Err("duration must be in (0, 600] s, rate in (2, 100] Hz, noise non-negative".into());
    }
    let waveform = scenario.waveform(seconds, seed);
    let n = (seconds * fs).round() as usize;
    let noise = Normal::new(0.0, noise_mm.max(1e-12)).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth: Vec<f64> = (0..n).map(|i| waveform.value(i as f64 / fs)).collect();
    let noisy: Vec<f64> = truth.iter().map(|v| v + noise.sample(&mut rng)).collect();
    let config = PipelineConfig {
        age,
        band: BandChoice::Auto,
        ..PipelineConfig::default()
    };
    let a = analyze_series(&noisy, fs, &config).map_err(|e| e.to_string())?;
    let result = SignalResult {
        breath_count: a.breath.breath_count,
        bpm: a.breath.bpm,
        classification: a.breath.classification.to_string(),
        dominant_hz: a.dominant_frequency,
        band: (a.band.f_lo, a.band.f_hi),
        raw: a.series.values.clone(),
        filtered: a.filtered.values.clone(),
        peaks: a.peaks.clone(),
        truth,
        warnings: a.warnings.clone(),
    };
    serde_json::to_string(&result).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn signal_demo(scenario: &str, seconds: f64, fs: f64, noise_mm: f64, age: &str, seed: u64) -> Result<String, JsError> {
    signal_demo_json(scenario, seconds, fs, noise_mm, age, seed).map_err(js)
}

/// A rendered stereo pair and its disparity map, as RGBA images.
#[wasm_bindgen]
pub struct StereoView {
    width: usize,
    height: usize,
    left: Vec<u8>,
    disparity: Vec<u8>,
    stats: String,
}

#[wasm_bindgen]
impl StereoView {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn left_rgba(&self) -> Vec<u8> {
        self.left.clone()
    }

    pub fn disparity_rgba(&self) -> Vec<u8> {
        self.disparity.clone()
    }

    /// JSON: valid fraction, error against the rendered ground truth.
    pub fn stats(&self) -> String {
        self.stats.clone()
    }
}

fn ramp(t: f64) -> [u8; 3] {
    const STOPS: [[f64; 3]; 5] = [
        [68.0, 1.0, 84.0],
        [59.0, 82.0, 139.0],
        [33.0, 145.0, 140.0],
        [94.0, 201.0, 98.0],
        [253.0, 231.0, 37.0],
    ];
    let x = t.clamp(0.0, 1.0) * 4.0;
    let i = (x.floor() as usize).min(3);
    let f = x - i as f64;
    let c = |k: usize| (STOPS[i][k] + (STOPS[i + 1][k] - STOPS[i][k]) * f).round() as u8;
    [c(0), c(1), c(2)]
}

pub fn stereo_view(scenario: &str, t: f64, noise_sigma: f64, contrast: f64, seed: u64) -> Result<StereoView, String> {
    let scenario: Scenario = scenario.parse().map_err(|e: breathscope::synth::SynthError| e.to_string())?;
    let seq = scenario.sequence(seed);
    let mut model: ChestModel = seq.model.clone();
    model.contrast = contrast;
    let geometry = default_geometry();
    let (w, h) = DEFAULT_SIZE;
    let (left, right, truth) =
        render_stereo(&model, &geometry, (w, h), t, noise_sigma, seed).map_err(|e| e.to_string())?;
    let (lo, hi) = seq.disparity_range();
    let mut params = breathscope::pipeline::dataset::suggested_config(&seq).matching;
    params.min_disparity = lo;
    params.max_disparity = hi;
    let map = compute_disparity(&left, &right, &params).map_err(|e| e.to_string())?;
    let map = filter_disparity(&map, &FilterParams::default());

    let mut gray = Vec::with_capacity(w * h * 4);
    let mut disp = Vec::with_capacity(w * h * 4);
    let (mut sq, mut n, mut bad) = (0.0, 0usize, 0usize);
    for y in 0..h {
        for x in 0..w {
            let g = left.get(x, y);
            gray.extend_from_slice(&[g, g, g, 255]);
            match map.get(x, y) {
                Some(d) => {
                    let [r, gg, b] = ramp((d - lo as f64) / (hi - lo) as f64);
                    disp.extend_from_slice(&[r, gg, b, 255]);
                    if let Some(td) = truth.disparity.get(x, y) {
                        let e = d - td;
                        sq += e * e;
                        n += 1;
                        bad += usize::from(e.abs() > 1.0);
                    }
                }
                None => disp.extend_from_slice(&[0, 0, 0, 255]),
            }
        }
    }
    let stats = serde_json::json!({
        "valid_fraction": map.valid_fraction(),
        "rms_error_px": if n > 0 { (sq / n as f64).sqrt() } else { f64::NAN },
        "errors_over_1px": bad,
        "disparity_range": [lo, hi],
        "displacement_mm": truth.displacement,
    });
    Ok(StereoView {
        width: w,
        height: h,
        left: gray,
        disparity: disp,
        stats: stats.to_string(),
    })
}

#[wasm_bindgen]
pub fn render_stereo_view(scenario: &str, t: f64, noise_sigma: f64, contrast: f64, seed: u64) -> Result<StereoView, JsError> {
    stereo_view(scenario, t, noise_sigma, contrast, seed).map_err(js)
}

#[derive(Serialize)]
struct IcpDemo {
    points: usize,
    iterations: usize,
    converged: bool,
    rotation_error_deg: f64,
    translation_error_mm: f64,
    rmse_history: Vec<f64>,
}

/// Perturbs a sampled chest surface by a known motion and aligns it back.
pub fn icp_demo_json(angle_deg: f64, shift_mm: f64, jitter_mm: f64, line_search: bool, seed: u64) -> Result<String, String> {
    if !(angle_deg.abs() <= 90.0 && shift_mm.abs() <= 500.0 && jitter_mm >= 0.0) {
        return Err("angle must be within ±90°, shift within ±500 mm, jitter non-negative".into());
    }
    let model = ChestModel::new(Scenario::Normal.waveform(60.0, seed));
    let (ax, ay) = model.semi_axes;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ux = Uniform::new(-1.5 * ax, 1.5 * ax).map_err(|e| e.to_string())?;
    let uy = Uniform::new(-1.5 * ay, 1.5 * ay).map_err(|e| e.to_string())?;
    let reference: Vec<Point3<f64>> = (0..2500)
        .map(|_| {
            let (x, y) = (ux.sample(&mut rng), uy.sample(&mut rng));
            Point3::new(x, y, model.chest_depth(x, y, 0.0))
        })
        .collect();
    let centroid = Point3::from(reference.iter().map(|p| p.coords).sum::<Vector3<f64>>() / reference.len() as f64);
    let perturb = RigidTransform::about_point(
        &Vector3::new(0.3, 1.0, 0.2),
        angle_deg,
        &centroid,
        &(Vector3::new(1.0, -0.5, 0.4).normalize() * shift_mm),
    );
    let noise = Normal::new(0.0, jitter_mm.max(1e-12)).map_err(|e| e.to_string())?;
    let source: Vec<Point3<f64>> = reference
        .iter()
        .map(|p| perturb.apply(p) + Vector3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng)))
        .collect();
    let params = IcpParams {
        reject_mult: 0.0,
        line_search,
        ..IcpParams::default()
    };
    let r = icp_align(&PointCloud::from_points(source), &PointCloud::from_points(reference.clone()), &params)
        .map_err(|e| e.to_string())?;
    let residual = r.transform.compose(&perturb);
    let demo = IcpDemo {
        points: reference.len(),
        iterations: r.iterations,
        converged: r.converged,
        rotation_error_deg: residual.angle_deg(),
        translation_error_mm: (residual.apply(&centroid) - centroid).norm(),
        rmse_history: r.rmse_history,
    };
    serde_json::to_string(&demo).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn icp_demo(angle_deg: f64, shift_mm: f64, jitter_mm: f64, line_search: bool, seed: u64) -> Result<String, JsError> {
    icp_demo_json(angle_deg, shift_mm, jitter_mm, line_search, seed).map_err(js)
}
