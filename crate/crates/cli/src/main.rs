use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use breathscope::calib::{load_calibration, StereoRig};
use breathscope::cloud::RoiBox;
use breathscope::frames::{FrameSource, SequenceManifest};
use breathscope::pipeline::dataset::{write_dataset, MANIFEST};
use breathscope::pipeline::output::write_outputs;
use breathscope::pipeline::ply::ply_string;
use breathscope::pipeline::{analyze, export_cloud, BandChoice, PipelineConfig, ReferenceMode};
use breathscope::signal::AgeBand;
use breathscope::synth::Scenario;

const THREADS_ENV: &str = "BREATHSCOPE_THREADS";

#[derive(Parser)]
#[command(name = "breathscope", version, about = "Respiratory motion from stereo image sequences")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Count breaths in a stereo sequence and write the report files.
    Analyze(AnalyzeArgs),
    /// Render a synthetic breathing sequence with ground truth.
    Synth(SynthArgs),
    /// Write the cleaned point cloud of one frame as ASCII PLY.
    ExportPly(ExportArgs),
}

#[derive(Args)]
struct InputArgs {
    /// Directory holding the frames and manifest.txt.
    #[arg(long)]
    input: PathBuf,
    /// Stereo calibration (key = value).
    #[arg(long)]
    calib: PathBuf,
    /// Pipeline settings (key = value); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Keep every N-th frame.
    #[arg(long, value_name = "N")]
    fps_downsample: Option<usize>,
    /// x0:y0:z0:x1:y1:z1 in mm, or `full`.
    #[arg(long)]
    roi: Option<RoiBox>,
    /// `auto` or LO:HI in Hz.
    #[arg(long)]
    band: Option<BandChoice>,
    /// under6, 6to12 or unspecified.
    #[arg(long)]
    age: Option<AgeBand>,
    /// first or auto.
    #[arg(long)]
    reference: Option<ReferenceMode>,
    /// Also write frame N's cloud to frame_N.ply in the output directory.
    #[arg(long, value_name = "N")]
    export_ply: Option<usize>,
}

#[derive(Args)]
struct SynthArgs {
    /// normal, deep, shallow, mixed or cough.
    scenario: Scenario,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sequence length in seconds.
    #[arg(long, default_value_t = Scenario::DURATION)]
    duration: f64,
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Frame index (after downsampling, if configured).
    #[arg(long, visible_alias = "export-ply", value_name = "N")]
    frame: usize,
    /// Output .ply file.
    #[arg(long)]
    out: PathBuf,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl std::fmt::Display) -> Self {
        Self {
            code,
            message: message.to_string(),
        }
    }
}

fn general(e: impl std::fmt::Display) -> Failure {
    Failure::new(1, e)
}

fn require_file(path: &Path, what: &str) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::new(2, format!("{what} not found: {}", path.display())))
    }
}

struct Inputs {
    source: FrameSource,
    rig: StereoRig,
    config: PipelineConfig,
}

fn open_inputs(args: &InputArgs) -> Result<Inputs, Failure> {
    if !args.input.is_dir() {
        return Err(Failure::new(2, format!("input directory not found: {}", args.input.display())));
    }
    let manifest_path = args.input.join(MANIFEST);
    require_file(&manifest_path, "manifest")?;
    require_file(&args.calib, "calibration file")?;
    let rig = load_calibration(&args.calib).map_err(|e| general(format!("calibration {}: {e}", args.calib.display())))?;
    let config = match &args.config {
        Some(path) => {
            require_file(path, "config file")?;
            PipelineConfig::read(path).map_err(|e| general(format!("{}: {e}", path.display())))?
        }
        None => PipelineConfig::default(),
    };
    let manifest = SequenceManifest::read(&manifest_path).map_err(|e| general(format!("input: {e}")))?;
    let source = FrameSource::open(&args.input, manifest).map_err(|e| general(format!("input: {e}")))?;
    Ok(Inputs { source, rig, config })
}

fn run_analyze(args: AnalyzeArgs) -> Result<(), Failure> {
    let Inputs { source, rig, mut config } = open_inputs(&args.input)?;
    if let Some(n) = args.fps_downsample {
        config.downsample = n;
    }
    if let Some(roi) = args.roi {
        config.roi = roi;
    }
    if let Some(band) = args.band {
        config.band = band;
    }
    if let Some(age) = args.age {
        config.age = age;
    }
    if let Some(reference) = args.reference {
        config.reference = reference;
    }
    config.validate().map_err(general)?;
    let frames = source.len().div_ceil(config.downsample);
    if let Some(n) = args.export_ply {
        if n >= frames {
            return Err(Failure::new(3, format!("frame {n} out of range: the sequence has {frames} frames")));
        }
    }

    let analysis = analyze(&source, &rig, &config).map_err(general)?;
    write_outputs(&args.out, &analysis).map_err(general)?;
    if let Some(n) = args.export_ply {
        let path = args.out.join(format!("frame_{n}.ply"));
        write_ply(&source, &rig, &config, n, &path)?;
    }
    let r = &analysis.report;
    for w in &r.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "{} breaths in {:.1} s ({:.1}/min, {}), dominant {:.3} Hz, max excursion {:.2} mm",
        r.breath.breath_count,
        r.breath.duration_s,
        r.breath.bpm,
        r.breath.classification,
        r.dominant_frequency_hz,
        r.breath.max_excursion_mm
    );
    println!("reports written to {}", args.out.display());
    Ok(())
}

fn write_ply(source: &FrameSource, rig: &StereoRig, config: &PipelineConfig, n: usize, path: &Path) -> Result<(), Failure> {
    let down = breathscope::frames::Downsampled::new(source, config.downsample).map_err(general)?;
    let cloud = export_cloud(&down, rig, config, n).map_err(general)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| general(format!("cannot create {}: {e}", dir.display())))?;
    }
    std::fs::write(path, ply_string(&cloud)).map_err(|e| general(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

fn run_export(args: ExportArgs) -> Result<(), Failure> {
    let Inputs { source, rig, config } = open_inputs(&args.input)?;
    let frames = source.len().div_ceil(config.downsample);
    if args.frame >= frames {
        return Err(Failure::new(
            3,
            format!("frame {} out of range: the sequence has {frames} frames", args.frame),
        ));
    }
    write_ply(&source, &rig, &config, args.frame, &args.out)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn run_synth(args: SynthArgs) -> Result<(), Failure> {
    let mut seq = args.scenario.sequence(args.seed);
    if args.duration != seq.duration {
        if args.duration.is_nan() || args.duration <= 0.0 {
            return Err(general("--duration must be positive"));
        }
        seq.model.waveform = args.scenario.waveform(args.duration, args.seed);
        seq.duration = args.duration;
    }
    write_dataset(&args.out, &seq, Some(args.scenario)).map_err(general)?;
    println!(
        "wrote {} frames of the {} scenario to {}",
        seq.frame_count(),
        args.scenario,
        args.out.display()
    );
    Ok(())
}

fn threads() -> Result<Option<usize>, Failure> {
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(general(format!("{THREADS_ENV} must be a positive integer, got `{v}`"))),
        },
        _ => Ok(None),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = threads().and_then(|t| {
        breathscope::par::with_threads(t, || match cli.command {
            Command::Analyze(a) => run_analyze(a),
            Command::Synth(s) => run_synth(s),
            Command::ExportPly(e) => run_export(e),
        })
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
