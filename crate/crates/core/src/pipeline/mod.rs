//! End-to-end analysis: stereo frames in, breathing report out.

pub mod config;
pub mod dataset;
pub mod output;
pub mod ply;

use serde::Serialize;

use crate::calib::{compute_rectification, rectify_image, CalibError, RectificationMaps, StereoRig};
use crate::cloud::{crop_roi, denoise_statistical, remove_invalid, reproject_strided, PointCloud, RoiBox};
use crate::frames::{Downsampled, FrameError, FrameProvider, StereoFrame};
use crate::icp::icp_align_indexed;
use crate::kdtree::NeighborIndex;
use crate::signal::{
    bandpass, breath_peaks, build_series, depth_delta, depth_grid_from_cloud, fft, max_excursion, select_band,
    BandSelection, BreathReport, DepthGrid, Lattice, RespSeries, SignalError, Spectrum,
};
use crate::stereo::{compute_disparity, filter_disparity};

pub use config::{BandChoice, ConfigError, PipelineConfig, ReferenceMode};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("input: {0}")]
    Input(#[from] FrameError),
    #[error("calibration: {0}")]
    Calibration(#[from] CalibError),
    #[error("{stage}: {message}")]
    Stage { stage: &'static str, message: String },
    #[error("{failed} of {total} frames failed, more than the allowed {:.0}%", limit * 100.0)]
    TooManyFailures { failed: usize, total: usize, limit: f64 },
    #[error("signal: {0}")]
    Signal(#[from] SignalError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn stage(stage: &'static str, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Stage {
        stage,
        message: e.to_string(),
    }
}

/// Cleaned metric cloud of one frame plus what it took to get there.
#[derive(Clone, Debug)]
pub struct FrameCloud {
    pub cloud: PointCloud,
    pub valid_fraction: f64,
    pub warnings: Vec<String>,
}

/// Rectify, match, filter, reproject and denoise one frame.
pub fn frame_cloud(frame: &StereoFrame, maps: &RectificationMaps, config: &PipelineConfig) -> Result<FrameCloud, PipelineError> {
    let left = rectify_image(&frame.left, &maps.left).map_err(|e| stage("rectify", e))?;
    let right = rectify_image(&frame.right, &maps.right).map_err(|e| stage("rectify", e))?;
    let raw = compute_disparity(&left, &right, &config.matching).map_err(|e| stage("disparity", e))?;
    let disparity = filter_disparity(&raw, &config.filter);
    let cloud = reproject_strided(&disparity, &maps.geometry, config.pixel_stride);
    let cloud = remove_invalid(&cloud, config.z_range);
    let (cloud, warning) = denoise_statistical(&cloud, config.denoise_k, config.denoise_mult);
    Ok(FrameCloud {
        cloud,
        valid_fraction: disparity.valid_fraction(),
        warnings: warning.map(|w| format!("frame {}: {w}", frame.index)).into_iter().collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FrameStats {
    pub frame: usize,
    pub valid_fraction: f64,
    pub points: usize,
    pub icp_iterations: usize,
    pub icp_rmse_mm: f64,
    pub icp_converged: bool,
    /// Depth change against the reference; absent for failed frames.
    pub delta_mm: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MixedBreathing {
    pub first_half_hz: f64,
    pub second_half_hz: f64,
    /// The halves peak in non-overlapping bands.
    pub detected: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunReport {
    #[serde(flatten)]
    pub breath: BreathReport,
    pub dominant_frequency_hz: f64,
    pub band_mode: String,
    pub band_hz: BandSelection,
    pub mixed_breathing: Option<MixedBreathing>,
    pub peak_times_s: Vec<f64>,
    pub frames: usize,
    pub fps: f64,
    pub reference_frame: usize,
    pub failed_frames: Vec<usize>,
    pub frame_diagnostics: Vec<FrameStats>,
    pub warnings: Vec<String>,
}

/// Spectral half of the analysis, usable on any depth series.
#[derive(Clone, Debug, PartialEq)]
pub struct SignalAnalysis {
    /// Zero-mean depth series.
    pub series: RespSeries,
    pub spectrum: Spectrum,
    pub dominant_frequency: f64,
    pub band: BandSelection,
    pub filtered: RespSeries,
    pub peaks: Vec<usize>,
    pub mixed: Option<MixedBreathing>,
    pub breath: BreathReport,
    pub warnings: Vec<String>,
}

fn strongest_frequency(values: &[f64], fs: f64, config: &PipelineConfig) -> Option<f64> {
    let s = build_series(values, fs).ok()?;
    let spec = fft(&s).ok()?;
    select_band(&spec, config.plausible, config.band_margin).ok().map(|(_, f)| f)
}

/// Series → spectrum → band → band-pass → peaks → classification.
pub fn analyze_series(deltas: &[f64], fs: f64, config: &PipelineConfig) -> Result<SignalAnalysis, PipelineError> {
    let mut warnings = Vec::new();
    let series = build_series(deltas, fs)?;
    let duration = series.duration();
    let needed = 2.0 / config.plausible.0;
    if duration < needed {
        warnings.push(format!(
            "insufficient duration: {duration:.1} s is shorter than two periods of the slowest plausible breathing rate ({needed:.1} s)"
        ));
    }
    let spectrum = fft(&series)?;
    let nyquist = fs / 2.0;
    let plausible = (config.plausible.0, config.plausible.1.min(nyquist));
    let peak = select_band(&spectrum, plausible, config.band_margin);

    let half = series.len() / 2;
    let mixed = if half >= 2 {
        match (
            strongest_frequency(&series.values[..half], fs, config),
            strongest_frequency(&series.values[half..], fs, config),
        ) {
            (Some(a), Some(b)) => Some(MixedBreathing {
                first_half_hz: a,
                second_half_hz: b,
                detected: (a - b).abs() > 2.0 * config.band_margin,
            }),
            _ => None,
        }
    } else {
        None
    };

    let (band, dominant) = match config.band {
        BandChoice::Auto => {
            let (mut band, f) = peak.map_err(|e| stage("band selection", e))?;
            if let Some(m) = mixed.as_ref().filter(|m| m.detected) {
                // cover both regimes so neither half is filtered away
                let lo = (m.first_half_hz.min(m.second_half_hz) - config.band_margin).max(plausible.0);
                let hi = (m.first_half_hz.max(m.second_half_hz) + config.band_margin).min(plausible.1);
                band = BandSelection::new(lo.min(band.f_lo), hi.max(band.f_hi), fs)?;
                warnings.push(format!(
                    "mixed breathing: halves peak at {:.3} Hz and {:.3} Hz",
                    m.first_half_hz, m.second_half_hz
                ));
            }
            (band, f)
        }
        BandChoice::Fixed { lo, hi } => {
            let band = BandSelection::new(lo, hi.min(nyquist), fs)?;
            let f = spectrum
                .magnitudes()
                .into_iter()
                .filter(|(f, _)| band.contains(*f))
                .fold((lo, -1.0), |best, (f, m)| if m > best.1 { (f, m) } else { best })
                .0;
            (band, f)
        }
    };
    let filtered = bandpass(&series, &band);
    let peaks = breath_peaks(&filtered, &config.peaks);
    let breath = BreathReport::new(peaks.len(), duration, config.age, max_excursion(&filtered))?;
    Ok(SignalAnalysis {
        series,
        spectrum,
        dominant_frequency: dominant,
        band,
        filtered,
        peaks,
        mixed,
        breath,
        warnings,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Analysis {
    pub signal: SignalAnalysis,
    pub report: RunReport,
}

/// Linear interpolation over missing samples; ends take the nearest value.
pub fn fill_gaps(values: &[Option<f64>]) -> Option<Vec<f64>> {
    let known: Vec<(usize, f64)> = values.iter().enumerate().filter_map(|(i, v)| v.map(|v| (i, v))).collect();
    if known.is_empty() {
        return None;
    }
    let mut out = Vec::with_capacity(values.len());
    let mut k = 0;
    for i in 0..values.len() {
        while k + 1 < known.len() && known[k + 1].0 <= i {
            k += 1;
        }
        let (i0, v0) = known[k];
        out.push(if i <= i0 || k + 1 == known.len() {
            v0
        } else {
            let (i1, v1) = known[k + 1];
            v0 + (v1 - v0) * (i - i0) as f64 / (i1 - i0) as f64
        });
    }
    Some(out)
}

/// Lattice over the reference cloud, restricted to the ROI when one is set.
fn reference_lattice(reference: &PointCloud, roi: &RoiBox, cell: f64) -> Result<Lattice, PipelineError> {
    let cropped = crop_roi(reference, roi);
    let base = if cropped.is_empty() { reference } else { &cropped };
    Ok(Lattice::covering(base, cell)?)
}

struct FrameOutcome {
    grid: Option<DepthGrid>,
    stats: FrameStats,
    warnings: Vec<String>,
}

pub fn analyze(provider: &dyn FrameProvider, rig: &StereoRig, config: &PipelineConfig) -> Result<Analysis, PipelineError> {
    config.validate()?;
    let downsampled;
    let provider: &dyn FrameProvider = if config.downsample > 1 {
        downsampled = Downsampled::new(provider, config.downsample)?;
        &downsampled
    } else {
        provider
    };
    let n = provider.len();
    if n < 2 {
        return Err(stage("input", format!("need at least 2 frames, found {n}")));
    }
    let fps = provider.fps();
    let first = provider.frame(0)?;
    let maps = compute_rectification(rig, first.left.width(), first.left.height())?;

    let reference = frame_cloud(&first, &maps, config)?;
    let min_points = config.icp.min_correspondences.max(3);
    if reference.cloud.len() < min_points {
        return Err(stage(
            "point cloud",
            format!("reference frame has {} points, need {min_points}", reference.cloud.len()),
        ));
    }
    let index = NeighborIndex::new(&reference.cloud.points);
    let lattice = reference_lattice(&reference.cloud, &config.roi, config.cell_size)?;
    let reference_grid = depth_grid_from_cloud(&reference.cloud, &lattice);

    let outcomes: Vec<Result<FrameOutcome, PipelineError>> = crate::par::map_indexed(n, |i| {
        let mut stats = FrameStats {
            frame: i,
            valid_fraction: reference.valid_fraction,
            points: reference.cloud.len(),
            icp_iterations: 0,
            icp_rmse_mm: 0.0,
            icp_converged: true,
            delta_mm: None,
            error: None,
        };
        if i == 0 {
            return Ok(FrameOutcome {
                grid: Some(reference_grid.clone()),
                stats,
                warnings: reference.warnings.clone(),
            });
        }
        let frame = provider.frame(i)?;
        let fc = frame_cloud(&frame, &maps, config)?;
        stats.valid_fraction = fc.valid_fraction;
        stats.points = fc.cloud.len();
        match icp_align_indexed(&fc.cloud, &index, &config.icp) {
            Ok(r) => {
                stats.icp_iterations = r.iterations;
                stats.icp_rmse_mm = r.rmse;
                stats.icp_converged = r.converged;
                let aligned = fc.cloud.transformed(|p| r.transform.apply(p));
                Ok(FrameOutcome {
                    grid: Some(depth_grid_from_cloud(&aligned, &lattice)),
                    stats,
                    warnings: fc.warnings,
                })
            }
            Err(e) => {
                stats.icp_converged = false;
                stats.error = Some(format!("icp: {e}"));
                Ok(FrameOutcome {
                    grid: None,
                    stats,
                    warnings: fc.warnings,
                })
            }
        }
    });
    let mut grids = Vec::with_capacity(n);
    let mut stats = Vec::with_capacity(n);
    let mut warnings = Vec::new();
    for o in outcomes {
        let o = o?;
        grids.push(o.grid);
        stats.push(o.stats);
        warnings.extend(o.warnings);
    }

    let delta_against = |r: usize, stats: &mut [FrameStats]| -> Vec<Option<f64>> {
        let Some(ref_grid) = grids[r].as_ref() else {
            return vec![None; n];
        };
        grids
            .iter()
            .zip(stats.iter_mut())
            .map(|(g, s)| {
                let g = g.as_ref()?;
                match depth_delta(g, ref_grid, &config.roi) {
                    Ok(d) => {
                        s.delta_mm = Some(d);
                        s.error = None;
                        Some(d)
                    }
                    Err(e) => {
                        s.delta_mm = None;
                        s.error = Some(format!("depth delta: {e}"));
                        None
                    }
                }
            })
            .collect()
    };
    let mut deltas = delta_against(0, &mut stats);
    let mut reference_frame = 0;
    if config.reference == ReferenceMode::Auto {
        // frame nearest the middle of the opening excursion range
        let window: Vec<(usize, f64)> = deltas
            .iter()
            .enumerate()
            .take_while(|(i, _)| (*i as f64 / fps) < config.reference_window)
            .filter_map(|(i, d)| d.map(|d| (i, d)))
            .collect();
        if let (Some(lo), Some(hi)) = (
            window.iter().map(|w| w.1).reduce(f64::min),
            window.iter().map(|w| w.1).reduce(f64::max),
        ) {
            let mid = (lo + hi) / 2.0;
            reference_frame = window
                .iter()
                .fold((0, f64::INFINITY), |best, &(i, d)| {
                    if (d - mid).abs() < best.1 { (i, (d - mid).abs()) } else { best }
                })
                .0;
            if reference_frame != 0 {
                deltas = delta_against(reference_frame, &mut stats);
            }
        }
    }

    let failed: Vec<usize> = deltas.iter().enumerate().filter(|(_, d)| d.is_none()).map(|(i, _)| i).collect();
    if failed.len() as f64 > config.max_failed_fraction * n as f64 {
        return Err(PipelineError::TooManyFailures {
            failed: failed.len(),
            total: n,
            limit: config.max_failed_fraction,
        });
    }
    for &i in &failed {
        let why = stats[i].error.clone().unwrap_or_else(|| "no data".into());
        warnings.push(format!("frame {i} interpolated ({why})"));
    }
    let filled = fill_gaps(&deltas).ok_or_else(|| stage("depth delta", "no frame produced a depth value"))?;

    let signal = analyze_series(&filled, fps, config)?;
    warnings.extend(signal.warnings.iter().cloned());
    let report = RunReport {
        breath: signal.breath.clone(),
        dominant_frequency_hz: signal.dominant_frequency,
        band_mode: config.band.to_string(),
        band_hz: signal.band,
        mixed_breathing: signal.mixed.clone(),
        peak_times_s: signal.peaks.iter().map(|&p| signal.filtered.time(p)).collect(),
        frames: n,
        fps,
        reference_frame,
        failed_frames: failed,
        frame_diagnostics: stats,
        warnings,
    };
    Ok(Analysis { signal, report })
}

/// The cleaned cloud of one frame, in left rectified camera coordinates.
pub fn export_cloud(provider: &dyn FrameProvider, rig: &StereoRig, config: &PipelineConfig, index: usize) -> Result<PointCloud, PipelineError> {
    let frame = provider.frame(index)?;
    let maps = compute_rectification(rig, frame.left.width(), frame.left.height())?;
    Ok(frame_cloud(&frame, &maps, config)?.cloud)
}
