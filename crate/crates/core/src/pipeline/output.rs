//! Files written by an analysis run.

use std::fmt::Write as _;
use std::path::Path;

use super::{Analysis, PipelineError};
use crate::signal::{normal_range_bpm, Classification};

pub const SERIES_CSV: &str = "series.csv";
pub const SPECTRUM_CSV: &str = "spectrum.csv";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TXT: &str = "report.txt";
pub const PLOT_SVG: &str = "plot.svg";

pub fn series_csv(a: &Analysis) -> String {
    let s = &a.signal;
    let mut out = String::from("t_s,raw_mm,filtered_mm\n");
    for (i, (raw, filt)) in s.series.values.iter().zip(&s.filtered.values).enumerate() {
        let _ = writeln!(out, "{:.6},{:.6},{:.6}", s.series.time(i), raw, filt);
    }
    out
}

pub fn spectrum_csv(a: &Analysis) -> String {
    let mut out = String::from("freq_hz,magnitude\n");
    for (f, m) in a.signal.spectrum.magnitudes() {
        let _ = writeln!(out, "{f:.6},{m:.6}");
    }
    out
}

pub fn report_json(a: &Analysis) -> String {
    let mut s = serde_json::to_string_pretty(&a.report).expect("report serializes");
    s.push('\n');
    s
}

pub fn report_txt(a: &Analysis) -> String {
    let r = &a.report;
    let b = &r.breath;
    let mut out = String::new();
    let _ = writeln!(out, "Breathing analysis");
    let _ = writeln!(out, "------------------");
    let _ = writeln!(out, "Frames:             {} at {:.3} fps", r.frames, r.fps);
    let _ = writeln!(out, "Duration:           {:.1} s", b.duration_s);
    let _ = writeln!(out, "Breaths counted:    {}", b.breath_count);
    let _ = writeln!(out, "Rate:               {:.1} breaths/min", b.bpm);
    let _ = writeln!(out, "Dominant frequency: {:.3} Hz", r.dominant_frequency_hz);
    let _ = writeln!(out, "Pass band:          {:.3} to {:.3} Hz ({})", r.band_hz.f_lo, r.band_hz.f_hi, r.band_mode);
    let _ = writeln!(out, "Max excursion:      {:.2} mm", b.max_excursion_mm);
    match normal_range_bpm(b.age_band) {
        Some((lo, hi)) => {
            let _ = writeln!(out, "Age band:           {} (normal {lo:.0} to {hi:.0} breaths/min)", b.age_band);
        }
        None => {
            let _ = writeln!(out, "Age band:           {}", b.age_band);
        }
    }
    let note = match b.classification {
        Classification::Normal => "rate within the normal range",
        Classification::BelowRange => "rate below the normal range: symptoms flag",
        Classification::AboveRange => "rate above the normal range: symptoms flag",
    };
    let _ = writeln!(out, "Classification:     {} ({note})", b.classification);
    if let Some(m) = &r.mixed_breathing {
        let _ = writeln!(
            out,
            "Halves:             {:.3} Hz / {:.3} Hz{}",
            m.first_half_hz,
            m.second_half_hz,
            if m.detected { " (mixed breathing)" } else { "" }
        );
    }
    let _ = writeln!(out, "Reference frame:    {}", r.reference_frame);
    let _ = writeln!(out, "Failed frames:      {}", r.failed_frames.len());
    if !r.warnings.is_empty() {
        let _ = writeln!(out, "\nWarnings:");
        for w in &r.warnings {
            let _ = writeln!(out, "  - {w}");
        }
    }
    let _ = writeln!(
        out,
        "\nThis is a research tool, not a medical device. Its output must not be used for diagnosis or treatment."
    );
    out
}

/// Raw and filtered series over time, detected peaks marked.
pub fn plot_svg(a: &Analysis) -> String {
    let (w, h, pad) = (900.0, 300.0, 40.0);
    let s = &a.signal;
    let n = s.series.len();
    let t_max = s.series.time(n.saturating_sub(1)).max(1e-9);
    let y_max = s
        .series
        .values
        .iter()
        .chain(&s.filtered.values)
        .fold(1e-9f64, |m, v| m.max(v.abs()));
    let x = |i: usize| pad + (w - 2.0 * pad) * s.series.time(i) / t_max;
    let y = |v: f64| h / 2.0 - (h / 2.0 - pad) * v / y_max;
    let line = |vals: &[f64]| {
        vals.iter()
            .enumerate()
            .map(|(i, &v)| format!("{:.2},{:.2}", x(i), y(v)))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let mut out = String::new();
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r##"<line x1="{pad}" y1="{:.2}" x2="{}" y2="{:.2}" stroke="#bbb"/>"##,
        h / 2.0,
        w - pad,
        h / 2.0
    );
    let _ = writeln!(out, r##"<polyline fill="none" stroke="#9ab" stroke-width="1" points="{}"/>"##, line(&s.series.values));
    let _ = writeln!(out, r##"<polyline fill="none" stroke="#036" stroke-width="1.5" points="{}"/>"##, line(&s.filtered.values));
    for &p in &s.peaks {
        let _ = writeln!(out, r##"<circle cx="{:.2}" cy="{:.2}" r="3" fill="#c30"/>"##, x(p), y(s.filtered.values[p]));
    }
    let _ = writeln!(
        out,
        r#"<text x="{pad}" y="20" font-family="sans-serif" font-size="13">depth change (mm) over {t_max:.1} s, {} breaths, ±{y_max:.1} mm</text>"#,
        s.peaks.len()
    );
    out.push_str("</svg>\n");
    out
}

/// Writes series.csv, spectrum.csv, report.json, report.txt and plot.svg.
pub fn write_outputs(dir: &Path, a: &Analysis) -> Result<(), PipelineError> {
    let io = |path: &Path, source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    };
    std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    for (name, body) in [
        (SERIES_CSV, series_csv(a)),
        (SPECTRUM_CSV, spectrum_csv(a)),
        (REPORT_JSON, report_json(a)),
        (REPORT_TXT, report_txt(a)),
        (PLOT_SVG, plot_svg(a)),
    ] {
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(|e| io(&path, e))?;
    }
    Ok(())
}
