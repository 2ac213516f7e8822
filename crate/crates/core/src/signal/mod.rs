//! Respiratory signal: depth series, spectrum, band selection, brick-wall
//! band-pass, breath counting and rate classification.

pub mod fft;
pub mod grid;

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

pub use grid::{depth_delta, depth_grid_from_cloud, DepthGrid, Lattice};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum SignalError {
    #[error("invalid signal parameter: {0}")]
    Parameter(String),
    #[error("no spectral energy inside the plausible breathing band")]
    NoSignal,
    #[error("only {overlap} of {reference} reference cells overlap this frame")]
    Coverage { overlap: usize, reference: usize },
}

/// Default plausible breathing band, Hz.
pub const PLAUSIBLE_BAND: (f64, f64) = (0.08, 1.5);
pub const DEFAULT_MARGIN: f64 = 0.1;

/// Uniformly sampled depth signal, mm.
#[derive(Clone, Debug, PartialEq)]
pub struct RespSeries {
    pub values: Vec<f64>,
    pub fs: f64,
}

impl RespSeries {
    pub fn new(values: Vec<f64>, fs: f64) -> Result<Self, SignalError> {
        if !(fs > 0.0) || !fs.is_finite() {
            return Err(SignalError::Parameter(format!("sampling rate must be positive (got {fs})")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SignalError::Parameter("series contains non-finite samples".into()));
        }
        Ok(Self { values, fs })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 / self.fs
    }

    pub fn duration(&self) -> f64 {
        self.values.len() as f64 / self.fs
    }
}

/// Samples at `t = i/fs` with the mean removed.
pub fn build_series(deltas: &[f64], fs: f64) -> Result<RespSeries, SignalError> {
    if deltas.is_empty() {
        return Err(SignalError::Parameter("empty depth series".into()));
    }
    let mean = deltas.iter().sum::<f64>() / deltas.len() as f64;
    RespSeries::new(deltas.iter().map(|d| d - mean).collect(), fs)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    /// All `n` bins of the zero-padded transform.
    pub bins: Vec<Complex64>,
    /// Transform length after padding.
    pub n: usize,
    /// Series length before padding.
    pub n_true: usize,
    pub fs: f64,
}

impl Spectrum {
    pub fn frequency(&self, k: usize) -> f64 {
        k as f64 * self.fs / self.n as f64
    }

    /// `(frequency, |X_k|)` for the non-negative half, `k = 0..=n/2`.
    pub fn magnitudes(&self) -> Vec<(f64, f64)> {
        (0..=self.n / 2).map(|k| (self.frequency(k), self.bins[k].norm())).collect()
    }
}

/// Forward transform of the series zero-padded to the next power of two.
pub fn fft(series: &RespSeries) -> Result<Spectrum, SignalError> {
    if series.len() < 2 {
        return Err(SignalError::Parameter("spectrum needs at least 2 samples".into()));
    }
    let n = series.len().next_power_of_two();
    let mut bins = vec![Complex64::new(0.0, 0.0); n];
    for (b, v) in bins.iter_mut().zip(&series.values) {
        b.re = *v;
    }
    fft::fft_pow2(&mut bins, false);
    Ok(Spectrum {
        bins,
        n,
        n_true: series.len(),
        fs: series.fs,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BandSelection {
    pub f_lo: f64,
    pub f_hi: f64,
}

impl BandSelection {
    pub fn new(f_lo: f64, f_hi: f64, fs: f64) -> Result<Self, SignalError> {
        if !(f_lo > 0.0 && f_lo < f_hi && f_hi <= fs / 2.0) {
            return Err(SignalError::Parameter(format!(
                "band [{f_lo}, {f_hi}] Hz must satisfy 0 < lo < hi <= {}",
                fs / 2.0
            )));
        }
        Ok(Self { f_lo, f_hi })
    }

    pub fn contains(&self, f: f64) -> bool {
        f >= self.f_lo && f <= self.f_hi
    }
}

/// Band of `±margin` around the strongest bin inside `plausible`, clamped
/// to `plausible`. Returns the band and the peak frequency.
pub fn select_band(spec: &Spectrum, plausible: (f64, f64), margin: f64) -> Result<(BandSelection, f64), SignalError> {
    let (lo, hi) = plausible;
    if !(lo > 0.0 && lo < hi && hi <= spec.fs / 2.0) {
        return Err(SignalError::Parameter(format!(
            "plausible band ({lo}, {hi}) must lie within (0, {}]",
            spec.fs / 2.0
        )));
    }
    if !(margin > 0.0) {
        return Err(SignalError::Parameter("band margin must be positive".into()));
    }
    let mags = spec.magnitudes();
    let global = mags.iter().map(|m| m.1).fold(0.0, f64::max);
    let mut best: Option<(f64, f64)> = None;
    for &(f, m) in mags.iter().filter(|(f, _)| *f >= lo && *f <= hi) {
        if best.is_none_or(|(_, bm)| m > bm) {
            best = Some((f, m));
        }
    }
    match best {
        Some((f, m)) if m > 0.0 && m > 1e-9 * global => {
            let band = BandSelection::new((f - margin).max(lo), (f + margin).min(hi), spec.fs)?;
            Ok((band, f))
        }
        _ => Err(SignalError::NoSignal),
    }
}

/// Brick-wall band-pass: the exact-length DFT of the series has every bin
/// outside `band` (by absolute frequency) zeroed before inverting.
pub fn bandpass(series: &RespSeries, band: &BandSelection) -> RespSeries {
    let n = series.len();
    if n == 0 {
        return series.clone();
    }
    let x: Vec<Complex64> = series.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let mut spec = fft::dft(&x);
    for (k, b) in spec.iter_mut().enumerate() {
        let signed = if 2 * k <= n { k as f64 } else { k as f64 - n as f64 };
        if !band.contains(signed.abs() * series.fs / n as f64) {
            *b = Complex64::new(0.0, 0.0);
        }
    }
    let out = fft::idft(&spec);
    let scale = series.values.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    debug_assert!(
        out.iter().all(|c| c.im.abs() < 1e-9 * scale),
        "band-pass left an imaginary residual"
    );
    RespSeries {
        values: out.into_iter().map(|c| c.re).collect(),
        fs: series.fs,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PeakParams {
    /// Minimum prominence as a multiple of the series' standard deviation.
    pub min_prominence_mult: f64,
    /// Minimum spacing between counted peaks, s.
    pub min_spacing: f64,
}

impl Default for PeakParams {
    fn default() -> Self {
        Self {
            min_prominence_mult: 0.5,
            min_spacing: 1.0,
        }
    }
}

/// Local maxima; a flat-topped maximum is reported at its middle sample.
fn local_maxima(x: &[f64]) -> Vec<usize> {
    let mut peaks = Vec::new();
    let n = x.len();
    let mut i = 1;
    while i + 1 < n {
        if x[i - 1] < x[i] {
            let mut ahead = i + 1;
            while ahead + 1 < n && x[ahead] == x[i] {
                ahead += 1;
            }
            if x[ahead] < x[i] {
                peaks.push((i + ahead - 1) / 2);
                i = ahead;
                continue;
            }
        }
        i += 1;
    }
    peaks
}

/// Height above the higher of the two lowest points reached before the
/// signal rises above the peak on either side.
fn prominence(x: &[f64], p: usize) -> f64 {
    let h = x[p];
    let mut left_min = h;
    for &v in x[..p].iter().rev() {
        if v > h {
            break;
        }
        left_min = left_min.min(v);
    }
    let mut right_min = h;
    for &v in &x[p + 1..] {
        if v > h {
            break;
        }
        right_min = right_min.min(v);
    }
    h - left_min.max(right_min)
}

/// Indices of counted breaths, ascending.
pub fn breath_peaks(series: &RespSeries, params: &PeakParams) -> Vec<usize> {
    let x = &series.values;
    if x.is_empty() {
        return Vec::new();
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let std = (x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    let threshold = params.min_prominence_mult * std;
    let mut candidates: Vec<usize> = local_maxima(x)
        .into_iter()
        .filter(|&p| {
            let prom = prominence(x, p);
            prom > 0.0 && prom >= threshold
        })
        .collect();
    // higher peaks claim their neighbourhood first; ties go to the earlier one
    candidates.sort_by(|&a, &b| x[b].total_cmp(&x[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for p in candidates {
        let clear = kept
            .iter()
            .all(|&q| (p as f64 - q as f64).abs() / series.fs >= params.min_spacing - 1e-12);
        if clear {
            kept.push(p);
        }
    }
    kept.sort_unstable();
    kept
}

pub fn count_breaths(series: &RespSeries, params: &PeakParams) -> usize {
    breath_peaks(series, params).len()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum AgeBand {
    #[serde(rename = "under6")]
    Under6,
    #[serde(rename = "6to12")]
    SixToTwelve,
    #[default]
    #[serde(rename = "unspecified")]
    Unspecified,
}

impl FromStr for AgeBand {
    type Err = SignalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "under6" => Ok(AgeBand::Under6),
            "6to12" => Ok(AgeBand::SixToTwelve),
            "unspecified" => Ok(AgeBand::Unspecified),
            other => Err(SignalError::Parameter(format!(
                "unknown age band `{other}` (expected under6, 6to12 or unspecified)"
            ))),
        }
    }
}

impl fmt::Display for AgeBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AgeBand::Under6 => "under6",
            AgeBand::SixToTwelve => "6to12",
            AgeBand::Unspecified => "unspecified",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    BelowRange,
    Normal,
    AboveRange,
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Classification::BelowRange => "below_range",
            Classification::Normal => "normal",
            Classification::AboveRange => "above_range",
        })
    }
}

/// Normal breathing rate for an age band, breaths per minute.
pub fn normal_range_bpm(age: AgeBand) -> Option<(f64, f64)> {
    match age {
        AgeBand::Under6 => Some((22.0, 34.0)),
        AgeBand::SixToTwelve => Some((18.0, 30.0)),
        AgeBand::Unspecified => None,
    }
}

pub fn classify(count: usize, duration: f64, age: AgeBand) -> Result<Classification, SignalError> {
    if !(duration > 0.0) {
        return Err(SignalError::Parameter("duration must be positive".into()));
    }
    let (value, lo, hi) = match normal_range_bpm(age) {
        Some((lo, hi)) => (count as f64 * 60.0 / duration, lo, hi),
        // breaths per 30 s window
        None => (count as f64 * 30.0 / duration, 10.0, 17.0),
    };
    Ok(if value < lo {
        Classification::BelowRange
    } else if value > hi {
        Classification::AboveRange
    } else {
        Classification::Normal
    })
}

/// Largest positive deviation from the zero-mean resting level, mm.
pub fn max_excursion(series: &RespSeries) -> f64 {
    series.values.iter().copied().fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BreathReport {
    pub breath_count: usize,
    pub duration_s: f64,
    pub bpm: f64,
    pub age_band: AgeBand,
    pub classification: Classification,
    pub max_excursion_mm: f64,
}

impl BreathReport {
    pub fn new(breath_count: usize, duration_s: f64, age_band: AgeBand, max_excursion_mm: f64) -> Result<Self, SignalError> {
        Ok(Self {
            breath_count,
            duration_s,
            bpm: breath_count as f64 * 60.0 / duration_s,
            age_band,
            classification: classify(breath_count, duration_s, age_band)?,
            max_excursion_mm,
        })
    }
}
