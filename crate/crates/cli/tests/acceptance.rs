//! Acceptance suite. Each test prints one PASS/FAIL line straight to the
//! process stdout, so the lines show up even when output is captured.

use std::io::Write as _;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use nalgebra::{Point3, Vector3};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use breathscope::calib::compute_rectification;
use breathscope::cloud::PointCloud;
use breathscope::frames::FrameProvider;
use breathscope::icp::{icp_align, IcpParams, IcpResult, RigidTransform};
use breathscope::image::GrayImage;
use breathscope::par::with_threads;
use breathscope::pipeline::dataset::suggested_config;
use breathscope::pipeline::{analyze, frame_cloud};
use breathscope::signal::fft::{dft, fft_pow2};
use breathscope::signal::{bandpass, classify, fft, AgeBand, BandSelection, Classification, RespSeries};
use breathscope::stereo::{compute_disparity, integer_disparities, MatchParams};
use breathscope::synth::{default_geometry, ChestModel, Scenario, SyntheticSequence, Waveform, DEFAULT_SIZE};

fn verdict(criterion: u32, name: &str, pass: bool, detail: &str) {
    let line = format!(
        "acceptance {criterion} {name}: {} ({detail})\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    assert!(pass, "criterion {criterion} failed: {detail}");
}

/// Number of sine maxima `(k + 1/4)/f` inside `[0, duration)`.
fn sine_peak_count(freq: f64, duration: f64) -> usize {
    let mut k = 0;
    while (k as f64 + 0.25) / freq < duration {
        k += 1;
    }
    k
}

#[test]
fn c1_frequency_recovery() {
    let (freq, amplitude, seed) = (0.3, 6.0, 11);
    let mut model = ChestModel::new(Waveform::Sine { amplitude, freq });
    model.texture_seed ^= seed;
    let seq = SyntheticSequence::new(model, default_geometry(), DEFAULT_SIZE, 15.0, 60.0, 2.0, seed).unwrap();
    assert_eq!(seq.size, (320, 240));
    let config = suggested_config(&seq);
    let start = Instant::now();
    // a single worker, as on one laptop core
    let a = with_threads(Some(1), || analyze(&seq, &seq.rig(), &config)).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let expected = sine_peak_count(freq, 60.0);
    assert_eq!(expected, 18);
    let r = &a.report;
    let f_err = (r.dominant_frequency_hz - freq).abs();
    let count_err = (r.breath.breath_count as i64 - expected as i64).abs();
    verdict(
        1,
        "frequency recovery",
        f_err <= 0.02 && count_err <= 1 && secs < 300.0,
        &format!(
            "f = {:.4} Hz (truth {freq}), breaths = {} (truth {expected}), {secs:.1} s on one worker",
            r.dominant_frequency_hz, r.breath.breath_count
        ),
    );
}

#[test]
fn c2_excursion_recovery() {
    let seq = Scenario::Deep.sequence(3);
    let truth = match &seq.model.waveform {
        Waveform::Sine { amplitude, .. } => *amplitude,
        other => panic!("unexpected deep waveform {other:?}"),
    };
    assert_eq!(truth, 12.0);
    let a = analyze(&seq, &seq.rig(), &suggested_config(&seq)).unwrap();
    let exc = a.report.breath.max_excursion_mm;
    verdict(
        2,
        "excursion recovery",
        (exc - truth).abs() <= 0.2 * truth,
        &format!("max excursion {exc:.2} mm, truth {truth} mm, limit ±20%"),
    );
}

/// Smoothed uniform noise image.
fn random_texture(w: usize, h: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let raw: Vec<f64> = (0..(w + 2) * (h + 2)).map(|_| rng.random_range(0.0..255.0)).collect();
    let at = |x: usize, y: usize| raw[y * (w + 2) + x];
    let mut out = Vec::with_capacity(w * h);
    for y in 1..=h {
        for x in 1..=w {
            out.push(0.4 * at(x, y) + 0.15 * (at(x - 1, y) + at(x + 1, y) + at(x, y - 1) + at(x, y + 1)));
        }
    }
    out
}

fn exhaustive_sad(l: &GrayImage, rt: &GrayImage, x: usize, y: usize, d: usize, r: usize) -> u32 {
    let mut s = 0u32;
    for yy in y - r..=y + r {
        for xx in x - r..=x + r {
            s += (l.get(xx, yy) as i32 - rt.get(xx - d, yy) as i32).unsigned_abs();
        }
    }
    s
}

/// Full search at every pixel whose candidate windows all fit, with the
/// texture, uniqueness and left-right gates evaluated from scratch.
fn exhaustive_disparities(l: &GrayImage, rt: &GrayImage, p: &MatchParams) -> Vec<Option<u32>> {
    let (w, h, r) = (l.width(), l.height(), p.block_radius);
    let n = ((2 * r + 1) * (2 * r + 1)) as i64;
    let mut out = vec![None; w * h];
    for y in r..h - r {
        for x in p.max_disparity + r..w - r {
            let (mut s, mut s2) = (0i64, 0i64);
            for yy in y - r..=y + r {
                for xx in x - r..=x + r {
                    let v = l.get(xx, yy) as i64;
                    s += v;
                    s2 += v * v;
                }
            }
            let variance = (n * s2 - s * s) as f64 / (n * n) as f64;
            if variance < p.texture_threshold {
                continue;
            }
            let costs: Vec<u32> = (p.min_disparity..=p.max_disparity)
                .map(|d| exhaustive_sad(l, rt, x, y, d, r))
                .collect();
            let mut best = 0;
            for (i, &c) in costs.iter().enumerate() {
                if c < costs[best] {
                    best = i;
                }
            }
            let second = costs
                .iter()
                .enumerate()
                .filter(|(i, _)| i.abs_diff(best) > 1)
                .map(|(_, &c)| c)
                .min();
            if second.is_some_and(|s| costs[best] as f64 * p.uniqueness_ratio > s as f64) {
                continue;
            }
            let d_best = p.min_disparity + best;
            let xr = x - d_best;
            let mut back: Option<(usize, u32)> = None;
            for d in p.min_disparity..=p.max_disparity {
                if xr + d + r >= w {
                    break;
                }
                let c = exhaustive_sad(l, rt, xr + d, y, d, r);
                if back.is_none_or(|(_, bc)| c < bc) {
                    back = Some((d, c));
                }
            }
            let (d_back, _) = back.unwrap();
            if d_back.abs_diff(d_best) as f64 > p.lr_consistency_tol {
                continue;
            }
            out[y * w + x] = Some(d_best as u32);
        }
    }
    out
}

#[test]
fn c3_disparity_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let params = MatchParams {
        min_disparity: 0,
        max_disparity: 16,
        block_radius: 3,
        ..MatchParams::default()
    };
    let (w, h) = (64, 64);
    let mut identical = 0;
    let mut valid = 0;
    for _ in 0..20 {
        let tex = random_texture(w + 30, h, &mut rng);
        // two depth layers plus sensor noise
        let (d_top, d_bottom) = (rng.random_range(2..14usize), rng.random_range(2..14usize));
        let noise = Normal::new(0.0, 2.0).unwrap();
        let left = GrayImage::from_fn(w, h, |x, y| tex[y * (w + 30) + x + 10].round() as u8);
        let right = GrayImage::from_fn(w, h, |x, y| {
            let d = if y < h / 2 { d_top } else { d_bottom };
            (tex[y * (w + 30) + x + 10 + d] + noise.sample(&mut rng)).round().clamp(0.0, 255.0) as u8
        });
        let got = integer_disparities(&left, &right, &params).unwrap();
        let want = exhaustive_disparities(&left, &right, &params);
        valid += want.iter().filter(|d| d.is_some()).count();
        identical += usize::from(got == want);
    }

    // constant shifts, integer and fractional, of a smooth texture
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for &shift in &[3.0, 6.0, 9.0, 4.25, 7.5, 10.75] {
        let f = |x: f64, y: f64| {
            128.0 + 50.0 * (0.9 * x + 0.3 * y).sin() + 40.0 * (0.37 * x - 0.61 * y + 1.0).sin() + 25.0 * (1.7 * x + 0.2).cos()
        };
        let left = GrayImage::from_fn(w, h, |x, y| f(x as f64, y as f64).round() as u8);
        let right = GrayImage::from_fn(w, h, |x, y| f(x as f64 + shift, y as f64).round() as u8);
        let map = compute_disparity(&left, &right, &params).unwrap();
        for y in 0..h {
            for x in 0..w {
                if let Some(d) = map.get(x, y) {
                    worst = worst.max((d - shift).abs());
                    checked += 1;
                }
            }
        }
    }
    verdict(
        3,
        "disparity oracle",
        identical == 20 && valid > 20 * 500 && worst <= 0.25 && checked > 6 * 1000,
        &format!("{identical}/20 pairs bitwise equal ({valid} matched pixels); subpixel worst error {worst:.3} px over {checked} pixels"),
    );
}

/// The t = 0 chest surface sampled at random x, y over ±1.5 semi-axes.
fn chest_cloud(n: usize, rng: &mut ChaCha8Rng) -> Vec<Point3<f64>> {
    let model = ChestModel::new(Waveform::Sine {
        amplitude: 6.0,
        freq: 0.3,
    });
    let (ax, ay) = model.semi_axes;
    (0..n)
        .map(|_| {
            let x = rng.random_range(-1.5 * ax..1.5 * ax);
            let y = rng.random_range(-1.5 * ay..1.5 * ay);
            Point3::new(x, y, model.chest_depth(x, y, 0.0))
        })
        .collect()
}

fn rejection_off() -> IcpParams {
    IcpParams {
        reject_mult: 0.0,
        ..IcpParams::default()
    }
}

/// atan2 form: stays accurate for tiny angles, unlike acos of the trace.
fn rotation_angle_deg(t: &RigidTransform) -> f64 {
    let r = &t.rotation;
    let skew = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]).norm() / 2.0;
    let cos = (r.trace() - 1.0) / 2.0;
    skew.atan2(cos).to_degrees()
}

struct Trial {
    rotation_err_deg: f64,
    translation_err_mm: f64,
    result: IcpResult,
}

/// Random perturbations of the chest cloud; ICP aligns each back.
fn icp_trials(jitter: f64, seed: u64) -> Vec<Trial> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let reference = chest_cloud(2500, &mut rng);
    let centroid = Point3::from(reference.iter().map(|p| p.coords).sum::<Vector3<f64>>() / reference.len() as f64);
    let noise = Normal::new(0.0, jitter.max(1e-300)).unwrap();
    (0..50)
        .map(|_| {
            let axis = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0f64),
            );
            let angle = rng.random_range(0.0..15.0);
            let shift_dir = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0f64),
            )
            .normalize();
            let shift = shift_dir * rng.random_range(0.0..20.0);
            let perturb = RigidTransform::about_point(&axis, angle, &centroid, &shift);
            let source: Vec<Point3<f64>> = reference
                .iter()
                .map(|p| {
                    let q = perturb.apply(p);
                    if jitter > 0.0 {
                        q + Vector3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng))
                    } else {
                        q
                    }
                })
                .collect();
            let result = icp_align(
                &PointCloud::from_points(source),
                &PointCloud::from_points(reference.clone()),
                &rejection_off(),
            )
            .unwrap();
            // residual motion after undoing the perturbation
            let residual = result.transform.compose(&perturb);
            Trial {
                rotation_err_deg: rotation_angle_deg(&residual),
                translation_err_mm: (residual.apply(&centroid) - centroid).norm(),
                result,
            }
        })
        .collect()
}

#[test]
fn c4_icp_recovery() {
    let clean = icp_trials(0.0, 44);
    let noisy = icp_trials(0.5, 45);
    let worst = |t: &[Trial], f: fn(&Trial) -> f64| t.iter().map(f).fold(0.0, f64::max);
    let (cr, ct) = (worst(&clean, |t| t.rotation_err_deg), worst(&clean, |t| t.translation_err_mm));
    let (nr, nt) = (worst(&noisy, |t| t.rotation_err_deg), worst(&noisy, |t| t.translation_err_mm));
    let max_iter = clean.iter().map(|t| t.result.iterations).max().unwrap();
    let pass = cr < 0.01 && ct < 0.1 && max_iter <= 50 && nr < 0.5 && nt < 1.0;
    verdict(
        4,
        "icp recovery",
        pass,
        &format!(
            "noiseless worst {cr:.2e} deg / {ct:.2e} mm, max {max_iter} iterations; 0.5 mm jitter worst {nr:.3} deg / {nt:.3} mm"
        ),
    );
}

fn naive_dft(x: &[Complex64]) -> Vec<Complex64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            x.iter()
                .enumerate()
                .map(|(j, v)| {
                    let phase = -2.0 * std::f64::consts::PI * ((j * k) % n) as f64 / n as f64;
                    v * Complex64::new(phase.cos(), phase.sin())
                })
                .sum()
        })
        .collect()
}

fn rel_err(a: &[Complex64], b: &[Complex64]) -> f64 {
    let scale = b.iter().map(|v| v.norm()).fold(0.0, f64::max).max(1e-300);
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max) / scale
}

fn parseval_err(x: &[Complex64], big_x: &[Complex64]) -> f64 {
    let time: f64 = x.iter().map(|v| v.norm_sqr()).sum();
    let freq: f64 = big_x.iter().map(|v| v.norm_sqr()).sum::<f64>() / big_x.len() as f64;
    (time - freq).abs() / time.max(1e-300)
}

#[test]
fn c5_spectral_correctness() {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let (mut worst_fft, mut worst_parseval, mut worst_idem) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..50 {
        let n = rng.random_range(2..=2048usize);
        let values: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();

        // padded spectrum used for peak finding
        let series = RespSeries::new(values.clone(), 15.0).unwrap();
        let spec = fft(&series).unwrap();
        let mut padded: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        padded.resize(n.next_power_of_two(), Complex64::new(0.0, 0.0));
        let want = naive_dft(&padded);
        worst_fft = worst_fft.max(rel_err(&spec.bins, &want));
        worst_parseval = worst_parseval.max(parseval_err(&padded, &spec.bins));

        // exact-length transform used by the band-pass
        let exact: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let got = dft(&exact);
        worst_fft = worst_fft.max(rel_err(&got, &naive_dft(&exact)));
        worst_parseval = worst_parseval.max(parseval_err(&exact, &got));

        let mut pow2 = padded.clone();
        fft_pow2(&mut pow2, false);
        worst_parseval = worst_parseval.max(parseval_err(&padded, &pow2));

        if n >= 8 {
            let lo = rng.random_range(0.2..3.0);
            let band = BandSelection::new(lo, lo + rng.random_range(0.5..4.0), 15.0).unwrap();
            let once = bandpass(&series, &band);
            let twice = bandpass(&once, &band);
            let scale = once.values.iter().map(|v| v.abs()).fold(1e-300, f64::max);
            let diff = once.values.iter().zip(&twice.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            worst_idem = worst_idem.max(diff / scale);
        }
    }
    verdict(
        5,
        "spectral correctness",
        worst_fft < 1e-9 && worst_parseval < 1e-9 && worst_idem < 1e-9,
        &format!("transform vs naive DFT {worst_fft:.2e}, Parseval {worst_parseval:.2e}, band-pass idempotence {worst_idem:.2e}"),
    );
}

#[test]
fn c6_classification_table() {
    let cases = [
        // (breaths, seconds, age, expected)
        (24, 60.0, AgeBand::Under6, Classification::Normal),
        (20, 30.0, AgeBand::Unspecified, Classification::AboveRange),
        (8, 30.0, AgeBand::Unspecified, Classification::BelowRange),
        (22, 60.0, AgeBand::Under6, Classification::Normal),
        (34, 60.0, AgeBand::Under6, Classification::Normal),
    ];
    let wrong: Vec<String> = cases
        .iter()
        .filter_map(|&(count, secs, age, want)| {
            let got = classify(count, secs, age).unwrap();
            (got != want).then(|| format!("{count}/{secs}s {age}: {got}, expected {want}"))
        })
        .collect();
    verdict(
        6,
        "classification table",
        wrong.is_empty(),
        &if wrong.is_empty() {
            format!("{} cases exact", cases.len())
        } else {
            wrong.join("; ")
        },
    );
}

#[test]
fn c7_mixed_breathing() {
    let seq = Scenario::Mixed.sequence(7);
    let truth = seq.model.waveform.breath_times(seq.duration).unwrap().len();
    let a = analyze(&seq, &seq.rig(), &suggested_config(&seq)).unwrap();
    let r = &a.report;
    let m = r.mixed_breathing.clone().expect("halves analysed");
    let count_err = (r.breath.breath_count as i64 - truth as i64).abs();
    verdict(
        7,
        "mixed breathing",
        m.detected && count_err <= 1,
        &format!(
            "halves {:.3} / {:.3} Hz, flagged {}, breaths {} (truth {truth})",
            m.first_half_hz, m.second_half_hz, m.detected, r.breath.breath_count
        ),
    );
}

fn run_cli(args: &[&str], threads: Option<&str>) -> std::process::Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_breathscope"));
    cmd.args(args);
    match threads {
        Some(t) => cmd.env("BREATHSCOPE_THREADS", t),
        None => cmd.env_remove("BREATHSCOPE_THREADS"),
    };
    cmd.output().unwrap()
}

#[test]
fn c8_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let data_s = data.to_str().unwrap();
    let out = run_cli(&["synth", "cough", "--seed", "8", "--duration", "24", "--out", data_s], None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let calib = data.join("calib.txt");
    let config = data.join("pipeline.cfg");
    let files = ["series.csv", "spectrum.csv", "report.json", "report.txt", "plot.svg"];
    let read_all = |dir: &Path| files.map(|f| std::fs::read(dir.join(f)).unwrap());
    let mut runs = Vec::new();
    for (i, threads) in [None, Some("1"), Some("2"), Some("4"), Some("1")].into_iter().enumerate() {
        let dir = tmp.path().join(format!("out{i}"));
        let out = run_cli(
            &[
                "analyze",
                "--input",
                data_s,
                "--calib",
                calib.to_str().unwrap(),
                "--config",
                config.to_str().unwrap(),
                "--out",
                dir.to_str().unwrap(),
            ],
            threads,
        );
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        runs.push(read_all(&dir));
    }
    let identical = runs.iter().all(|r| r == &runs[0]);
    verdict(
        8,
        "determinism",
        identical,
        &format!("{} analyze runs with BREATHSCOPE_THREADS unset, 1, 2, 4, 1: outputs identical = {identical}", runs.len()),
    );
}

fn monotone_violations(history: &[f64]) -> usize {
    history
        .windows(2)
        .filter(|w| w[1] > w[0] + 1e-9 * w[0].max(1.0))
        .count()
}

#[test]
fn c9_icp_monotone() {
    let mut alignments = 0;
    let mut violations = 0;
    for (jitter, seed) in [(0.0, 44), (0.5, 45), (0.0, 91), (1.0, 92)] {
        for t in icp_trials(jitter, seed) {
            alignments += 1;
            violations += monotone_violations(&t.result.rmse_history);
        }
    }
    // clouds from rendered stereo frames, aligned to the first frame
    for scenario in [Scenario::Normal, Scenario::Deep, Scenario::Cough] {
        let seq = scenario.sequence(9);
        let config = suggested_config(&seq);
        let maps = compute_rectification(&seq.rig(), seq.size.0, seq.size.1).unwrap();
        let cloud = |i: usize| frame_cloud(&seq.frame(i).unwrap(), &maps, &config).unwrap().cloud;
        let reference = cloud(0);
        let params = IcpParams {
            max_source_points: 4000,
            ..rejection_off()
        };
        let results = breathscope::par::map_indexed(12, |k| icp_align(&cloud(5 + 37 * k), &reference, &params).unwrap());
        for r in results {
            alignments += 1;
            violations += monotone_violations(&r.rmse_history);
        }
    }
    verdict(
        9,
        "icp monotone rmse",
        violations == 0,
        &format!("{alignments} alignments with rejection off, {violations} increases"),
    );
}
