//! Writes a synthetic sequence to disk in the same layout real captures use.

use std::fmt::Write as _;
use std::path::Path;

use super::{PipelineConfig, PipelineError};
use crate::frames::{Layout, SequenceManifest};
use crate::image::encode_pgm;
use crate::kv::KvFile;
use crate::synth::{Scenario, SyntheticSequence, Waveform};

pub const MANIFEST: &str = "manifest.txt";
pub const CALIB: &str = "calib.txt";
pub const GROUND_TRUTH: &str = "ground_truth.csv";
pub const CONFIG: &str = "pipeline.cfg";
pub const SCENE: &str = "scene.txt";
pub const LEFT_PATTERN: &str = "left_{n}.pgm";
pub const RIGHT_PATTERN: &str = "right_{n}.pgm";

fn frame_name(pattern: &str, i: usize) -> String {
    pattern.replace("{n}", &format!("{i:04}"))
}

/// Analysis settings suited to the scene: its disparity range and chest ROI.
pub fn suggested_config(seq: &SyntheticSequence) -> PipelineConfig {
    let mut c = PipelineConfig::default();
    let (lo, hi) = seq.disparity_range();
    c.matching.min_disparity = lo;
    c.matching.max_disparity = hi;
    c.roi = seq.chest_roi();
    c
}

fn describe_waveform(kv: &mut KvFile, prefix: &str, w: &Waveform) {
    let key = |k: &str| format!("{prefix}{k}");
    match w {
        Waveform::Sine { amplitude, freq } => {
            kv.insert(key("waveform"), "sine");
            kv.insert(key("amplitude_mm"), amplitude);
            kv.insert(key("freq_hz"), freq);
        }
        Waveform::HalfRectified { amplitude, freq } => {
            kv.insert(key("waveform"), "half_rectified_sine");
            kv.insert(key("amplitude_mm"), amplitude);
            kv.insert(key("freq_hz"), freq);
        }
        Waveform::TwoTone { a1, f1, a2, f2 } => {
            kv.insert(key("waveform"), "two_tone");
            kv.insert(key("amplitude1_mm"), a1);
            kv.insert(key("freq1_hz"), f1);
            kv.insert(key("amplitude2_mm"), a2);
            kv.insert(key("freq2_hz"), f2);
        }
        Waveform::Sequential { first, second, switch } => {
            kv.insert(key("waveform"), "sequential");
            kv.insert(key("switch_s"), switch);
            describe_waveform(kv, &key("first."), first);
            describe_waveform(kv, &key("second."), second);
        }
        Waveform::Spiked { base, spikes } => {
            kv.insert(key("waveform"), "spiked");
            let list = |f: fn(&crate::synth::Spike) -> f64| {
                spikes.iter().map(|s| format!("{}", f(s))).collect::<Vec<_>>().join(" ")
            };
            kv.insert(key("spike_times_s"), list(|s| s.time));
            kv.insert(key("spike_amplitudes_mm"), list(|s| s.amplitude));
            kv.insert(key("spike_widths_s"), list(|s| s.width));
            describe_waveform(kv, &key("base."), base);
        }
    }
}

/// Scene parameters, for the record.
pub fn scene_description(seq: &SyntheticSequence, scenario: Option<Scenario>) -> KvFile {
    let m = &seq.model;
    let mut kv = KvFile::default();
    if let Some(s) = scenario {
        kv.insert("scenario", s);
    }
    kv.insert("seed", seq.seed);
    kv.insert("fps", seq.fps);
    kv.insert("duration_s", seq.duration);
    kv.insert("frames", seq.frame_count());
    kv.insert("width", seq.size.0);
    kv.insert("height", seq.size.1);
    kv.insert("noise_sigma", seq.noise_sigma);
    kv.insert("standoff_mm", m.standoff);
    kv.insert("bump_height_mm", m.bump_height);
    kv.insert("semi_axes_mm", format!("{} {}", m.semi_axes.0, m.semi_axes.1));
    kv.insert("center_mm", format!("{} {}", m.center.0, m.center.1));
    kv.insert("texture_seed", m.texture_seed);
    kv.insert("contrast", m.contrast);
    describe_waveform(&mut kv, "", &m.waveform);
    kv
}

pub fn ground_truth_csv(seq: &SyntheticSequence) -> String {
    let mut s = String::from("t_s,displacement_mm\n");
    for (i, g) in seq.ground_truth().iter().enumerate() {
        let _ = writeln!(s, "{:.6},{:.6}", seq.time(i), g);
    }
    s
}

/// Frames as separate left/right PGM files plus manifest, calibration,
/// ground truth, a matching pipeline config and the scene description.
pub fn write_dataset(dir: &Path, seq: &SyntheticSequence, scenario: Option<Scenario>) -> Result<(), PipelineError> {
    let io = |path: &Path, source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    };
    std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let written = crate::par::map_indexed(seq.frame_count(), |i| -> Result<(), PipelineError> {
        let (frame, _) = seq.render(i).map_err(|e| super::stage("synth", e))?;
        for (pattern, img) in [(LEFT_PATTERN, &frame.left), (RIGHT_PATTERN, &frame.right)] {
            let path = dir.join(frame_name(pattern, i));
            std::fs::write(&path, encode_pgm(img)).map_err(|e| io(&path, e))?;
        }
        Ok(())
    });
    written.into_iter().collect::<Result<Vec<()>, _>>()?;

    let manifest = SequenceManifest {
        fps: seq.fps,
        layout: Layout::Separate,
        pattern_left: LEFT_PATTERN.into(),
        pattern_right: Some(RIGHT_PATTERN.into()),
    };
    for (name, body) in [
        (MANIFEST, manifest.to_kv().to_string()),
        (CALIB, seq.rig().to_kv().to_string()),
        (GROUND_TRUTH, ground_truth_csv(seq)),
        (CONFIG, suggested_config(seq).to_kv().to_string()),
        (SCENE, scene_description(seq, scenario).to_string()),
    ] {
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(|e| io(&path, e))?;
    }
    Ok(())
}
