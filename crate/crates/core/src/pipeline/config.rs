//! Every pipeline tunable, read from and written to key=value files.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use crate::cloud::{RoiBox, DEFAULT_Z_RANGE};
use crate::icp::IcpParams;
use crate::kv::KvFile;
use crate::signal::{AgeBand, PeakParams, DEFAULT_MARGIN, PLAUSIBLE_BAND};
use crate::stereo::{FilterParams, MatchParams};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
#[error("config: {0}")]
pub struct ConfigError(pub String);

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum BandChoice {
    Auto,
    Fixed { lo: f64, hi: f64 },
}

impl FromStr for BandChoice {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s == "auto" {
            return Ok(BandChoice::Auto);
        }
        let bad = || ConfigError(format!("band `{s}`: expected auto or LO:HI in Hz"));
        let (lo, hi) = s.split_once(':').ok_or_else(bad)?;
        let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
        let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
        if !(lo > 0.0 && lo < hi) {
            return Err(bad());
        }
        Ok(BandChoice::Fixed { lo, hi })
    }
}

impl fmt::Display for BandChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BandChoice::Auto => f.write_str("auto"),
            BandChoice::Fixed { lo, hi } => write!(f, "{lo}:{hi}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceMode {
    First,
    Auto,
}

impl FromStr for ReferenceMode {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "first" => Ok(ReferenceMode::First),
            "auto" => Ok(ReferenceMode::Auto),
            other => Err(ConfigError(format!("reference `{other}`: expected first or auto"))),
        }
    }
}

impl fmt::Display for ReferenceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReferenceMode::First => "first",
            ReferenceMode::Auto => "auto",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub matching: MatchParams,
    pub filter: FilterParams,
    /// Reproject every n-th pixel in each direction.
    pub pixel_stride: usize,
    pub z_range: (f64, f64),
    pub denoise_k: usize,
    pub denoise_mult: f64,
    pub icp: IcpParams,
    /// Depth lattice cell size, mm.
    pub cell_size: f64,
    pub band: BandChoice,
    pub plausible: (f64, f64),
    pub band_margin: f64,
    pub peaks: PeakParams,
    pub age: AgeBand,
    pub roi: RoiBox,
    pub downsample: usize,
    pub reference: ReferenceMode,
    /// Length of the opening stretch searched by `reference = auto`, s.
    pub reference_window: f64,
    /// Abort when more than this fraction of frames fail.
    pub max_failed_fraction: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            matching: MatchParams::default(),
            filter: FilterParams::default(),
            pixel_stride: 2,
            z_range: DEFAULT_Z_RANGE,
            denoise_k: 16,
            denoise_mult: 1.5,
            icp: IcpParams {
                max_source_points: 4000,
                ..IcpParams::default()
            },
            cell_size: 8.0,
            band: BandChoice::Auto,
            plausible: PLAUSIBLE_BAND,
            band_margin: DEFAULT_MARGIN,
            peaks: PeakParams::default(),
            age: AgeBand::Unspecified,
            roi: RoiBox::Full,
            downsample: 1,
            reference: ReferenceMode::First,
            reference_window: 12.5,
            max_failed_fraction: 0.2,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value
        .trim()
        .parse()
        .map_err(|_| ConfigError(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(ConfigError(format!("`{key}`: expected true or false, got `{value}`"))),
    }
}

impl PipelineConfig {
    /// Starts from the defaults; unknown keys are an error.
    pub fn from_kv(kv: &KvFile) -> Result<Self, ConfigError> {
        let mut c = PipelineConfig::default();
        for (key, value) in kv.iter() {
            let v = value;
            match key {
                "min_disparity" => c.matching.min_disparity = parse(key, v)?,
                "max_disparity" => c.matching.max_disparity = parse(key, v)?,
                "block_radius" => c.matching.block_radius = parse(key, v)?,
                "uniqueness_ratio" => c.matching.uniqueness_ratio = parse(key, v)?,
                "lr_tolerance" => c.matching.lr_consistency_tol = parse(key, v)?,
                "texture_threshold" => c.matching.texture_threshold = parse(key, v)?,
                "median_radius" => c.filter.median_radius = parse(key, v)?,
                "speckle_max_area" => c.filter.speckle_max_area = parse(key, v)?,
                "speckle_tolerance" => c.filter.speckle_tol = parse(key, v)?,
                "pixel_stride" => c.pixel_stride = parse(key, v)?,
                "z_min" => c.z_range.0 = parse(key, v)?,
                "z_max" => c.z_range.1 = parse(key, v)?,
                "denoise_k" => c.denoise_k = parse(key, v)?,
                "denoise_mult" => c.denoise_mult = parse(key, v)?,
                "icp_max_iterations" => c.icp.max_iterations = parse(key, v)?,
                "icp_rmse_tol" => c.icp.rmse_tol = parse(key, v)?,
                "icp_reject_mult" => c.icp.reject_mult = parse(key, v)?,
                "icp_min_correspondences" => c.icp.min_correspondences = parse(key, v)?,
                "icp_max_points" => c.icp.max_source_points = parse(key, v)?,
                "icp_line_search" => c.icp.line_search = parse_bool(key, v)?,
                "cell_size" => c.cell_size = parse(key, v)?,
                "band" => c.band = v.parse()?,
                "plausible_lo" => c.plausible.0 = parse(key, v)?,
                "plausible_hi" => c.plausible.1 = parse(key, v)?,
                "band_margin" => c.band_margin = parse(key, v)?,
                "peak_prominence" => c.peaks.min_prominence_mult = parse(key, v)?,
                "peak_spacing" => c.peaks.min_spacing = parse(key, v)?,
                "age" => c.age = v.parse().map_err(|e: crate::signal::SignalError| ConfigError(e.to_string()))?,
                "roi" => c.roi = v.parse().map_err(|e: crate::cloud::RoiParseError| ConfigError(e.to_string()))?,
                "downsample" => c.downsample = parse(key, v)?,
                "reference" => c.reference = v.parse()?,
                "reference_window" => c.reference_window = parse(key, v)?,
                "max_failed_fraction" => c.max_failed_fraction = parse(key, v)?,
                other => return Err(ConfigError(format!("unknown key `{other}`"))),
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn read(path: &Path) -> Result<Self, ConfigError> {
        let kv = KvFile::read(path).map_err(|e| ConfigError(e.to_string()))?;
        Self::from_kv(&kv)
    }

    pub fn to_kv(&self) -> KvFile {
        let mut kv = KvFile::default();
        kv.insert("min_disparity", self.matching.min_disparity);
        kv.insert("max_disparity", self.matching.max_disparity);
        kv.insert("block_radius", self.matching.block_radius);
        kv.insert("uniqueness_ratio", self.matching.uniqueness_ratio);
        kv.insert("lr_tolerance", self.matching.lr_consistency_tol);
        kv.insert("texture_threshold", self.matching.texture_threshold);
        kv.insert("median_radius", self.filter.median_radius);
        kv.insert("speckle_max_area", self.filter.speckle_max_area);
        kv.insert("speckle_tolerance", self.filter.speckle_tol);
        kv.insert("pixel_stride", self.pixel_stride);
        kv.insert("z_min", self.z_range.0);
        kv.insert("z_max", self.z_range.1);
        kv.insert("denoise_k", self.denoise_k);
        kv.insert("denoise_mult", self.denoise_mult);
        kv.insert("icp_max_iterations", self.icp.max_iterations);
        kv.insert("icp_rmse_tol", self.icp.rmse_tol);
        kv.insert("icp_reject_mult", self.icp.reject_mult);
        kv.insert("icp_min_correspondences", self.icp.min_correspondences);
        kv.insert("icp_max_points", self.icp.max_source_points);
        kv.insert("icp_line_search", self.icp.line_search);
        kv.insert("cell_size", self.cell_size);
        kv.insert("band", self.band);
        kv.insert("plausible_lo", self.plausible.0);
        kv.insert("plausible_hi", self.plausible.1);
        kv.insert("band_margin", self.band_margin);
        kv.insert("peak_prominence", self.peaks.min_prominence_mult);
        kv.insert("peak_spacing", self.peaks.min_spacing);
        kv.insert("age", self.age);
        kv.insert("roi", self.roi);
        kv.insert("downsample", self.downsample);
        kv.insert("reference", self.reference);
        kv.insert("reference_window", self.reference_window);
        kv.insert("max_failed_fraction", self.max_failed_fraction);
        kv
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.matching.validate().map_err(|e| ConfigError(e.to_string()))?;
        self.icp.validate().map_err(|e| ConfigError(e.to_string()))?;
        let checks: [(bool, &str); 10] = [
            (self.pixel_stride >= 1, "pixel_stride must be at least 1"),
            (self.z_range.0 < self.z_range.1, "z_min must be below z_max"),
            (self.denoise_mult >= 0.0, "denoise_mult must be non-negative"),
            (self.cell_size > 0.0, "cell_size must be positive"),
            (self.plausible.0 > 0.0 && self.plausible.0 < self.plausible.1, "plausible band must satisfy 0 < lo < hi"),
            (self.band_margin > 0.0, "band_margin must be positive"),
            (self.peaks.min_prominence_mult >= 0.0 && self.peaks.min_spacing >= 0.0, "peak parameters must be non-negative"),
            (self.downsample >= 1, "downsample must be at least 1"),
            (self.reference_window > 0.0, "reference_window must be positive"),
            ((0.0..=1.0).contains(&self.max_failed_fraction), "max_failed_fraction must lie in [0, 1]"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(ConfigError((*msg).to_string())),
            None => Ok(()),
        }
    }
}
