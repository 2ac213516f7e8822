//! Stereo frame sequences: manifests, numbered image files, side-by-side
//! splitting and temporal downsampling.

use std::path::{Path, PathBuf};

use crate::image::{read_gray, GrayImage};
use crate::kv::{KvError, KvFile};

#[derive(Debug, thiserror::Error)]
pub enum FrameError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error("sequence error: {0}")]
    Sequence(String),
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("manifest error: {0}")]
    Manifest(String),
}

impl From<KvError> for FrameError {
    fn from(e: KvError) -> Self {
        FrameError::Manifest(e.to_string())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StereoFrame {
    pub left: GrayImage,
    pub right: GrayImage,
    pub index: usize,
    /// Seconds since the first frame (`index / fps`).
    pub timestamp: f64,
}

impl StereoFrame {
    pub fn new(left: GrayImage, right: GrayImage, index: usize, fps: f64) -> Result<Self, FrameError> {
        if left.width() != right.width() || left.height() != right.height() {
            return Err(FrameError::Format(format!(
                "frame {index}: left is {}x{} but right is {}x{}",
                left.width(),
                left.height(),
                right.width(),
                right.height()
            )));
        }
        Ok(Self {
            left,
            right,
            index,
            timestamp: index as f64 / fps,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence {
    frames: Vec<StereoFrame>,
    fps: f64,
}

impl FrameSequence {
    /// Frames are renumbered 0.. in the given order.
    pub fn new(pairs: Vec<(GrayImage, GrayImage)>, fps: f64) -> Result<Self, FrameError> {
        check_fps(fps)?;
        let mut frames = Vec::with_capacity(pairs.len());
        let mut dims = None;
        for (i, (l, r)) in pairs.into_iter().enumerate() {
            let frame = StereoFrame::new(l, r, i, fps)?;
            let d = (frame.left.width(), frame.left.height());
            if *dims.get_or_insert(d) != d {
                return Err(FrameError::Format(format!(
                    "frame {i} is {}x{}, earlier frames are {}x{}",
                    d.0,
                    d.1,
                    dims.unwrap().0,
                    dims.unwrap().1
                )));
            }
            frames.push(frame);
        }
        Ok(Self { frames, fps })
    }

    pub fn frames(&self) -> &[StereoFrame] {
        &self.frames
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

fn check_fps(fps: f64) -> Result<(), FrameError> {
    if fps.is_finite() && fps > 0.0 {
        Ok(())
    } else {
        Err(FrameError::Parameter(format!("fps must be positive, got {fps}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layout {
    /// One composite image per frame, left half = left camera.
    SideBySide,
    /// Separate files for the two cameras.
    Separate,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceManifest {
    pub fps: f64,
    pub layout: Layout,
    /// File name patterns with a `{n}` frame-number placeholder. For
    /// side-by-side layouts only the first is used.
    pub pattern_left: String,
    pub pattern_right: Option<String>,
}

impl SequenceManifest {
    pub fn from_kv(kv: &KvFile) -> Result<Self, FrameError> {
        for key in kv.keys() {
            if !matches!(key, "fps" | "layout" | "pattern" | "pattern_left" | "pattern_right") {
                return Err(FrameError::Manifest(format!("unknown key `{key}`")));
            }
        }
        let fps: f64 = kv
            .get("fps")
            .ok_or_else(|| FrameError::Manifest("missing key `fps`".into()))?
            .parse()
            .map_err(|_| FrameError::Manifest("`fps` is not a number".into()))?;
        check_fps(fps).map_err(|e| FrameError::Manifest(e.to_string()))?;
        let layout = match kv.get("layout") {
            Some("side_by_side") => Layout::SideBySide,
            Some("separate") => Layout::Separate,
            Some(other) => {
                return Err(FrameError::Manifest(format!(
                    "`layout` must be side_by_side or separate, got `{other}`"
                )))
            }
            None => return Err(FrameError::Manifest("missing key `layout`".into())),
        };
        let check = |p: &str| -> Result<String, FrameError> {
            if p.matches("{n}").count() != 1 || p.contains('/') {
                return Err(FrameError::Manifest(format!(
                    "pattern `{p}` must be a file name with exactly one {{n}} placeholder"
                )));
            }
            Ok(p.to_string())
        };
        let (pattern_left, pattern_right) = match layout {
            Layout::SideBySide => {
                let p = kv
                    .get("pattern")
                    .ok_or_else(|| FrameError::Manifest("missing key `pattern`".into()))?;
                (check(p)?, None)
            }
            Layout::Separate => {
                let l = kv
                    .get("pattern_left")
                    .ok_or_else(|| FrameError::Manifest("missing key `pattern_left`".into()))?;
                let r = kv
                    .get("pattern_right")
                    .ok_or_else(|| FrameError::Manifest("missing key `pattern_right`".into()))?;
                (check(l)?, Some(check(r)?))
            }
        };
        Ok(Self {
            fps,
            layout,
            pattern_left,
            pattern_right,
        })
    }

    pub fn read(path: &Path) -> Result<Self, FrameError> {
        Self::from_kv(&KvFile::read(path)?)
    }

    pub fn to_kv(&self) -> KvFile {
        let mut kv = KvFile::default();
        kv.insert("fps", self.fps);
        match self.layout {
            Layout::SideBySide => {
                kv.insert("layout", "side_by_side");
                kv.insert("pattern", &self.pattern_left);
            }
            Layout::Separate => {
                kv.insert("layout", "separate");
                kv.insert("pattern_left", &self.pattern_left);
                if let Some(r) = &self.pattern_right {
                    kv.insert("pattern_right", r);
                }
            }
        }
        kv
    }
}

/// Numbered files on disk, listed but not yet decoded.
#[derive(Clone, Debug)]
pub struct FrameSource {
    manifest: SequenceManifest,
    /// (left or composite, right) path per frame, in frame order.
    files: Vec<(PathBuf, Option<PathBuf>)>,
}

fn numbered_files(dir: &Path, pattern: &str) -> Result<Vec<(u64, PathBuf)>, FrameError> {
    let (prefix, suffix) = pattern.split_once("{n}").expect("validated pattern");
    let entries = std::fs::read_dir(dir).map_err(|source| FrameError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let mut found = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|source| FrameError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        let Some(mid) = name
            .strip_prefix(prefix)
            .and_then(|rest| rest.strip_suffix(suffix))
        else {
            continue;
        };
        if mid.is_empty() || !mid.bytes().all(|b| b.is_ascii_digit()) {
            continue;
        }
        let n: u64 = mid
            .parse()
            .map_err(|_| FrameError::Sequence(format!("frame number too large in {name}")))?;
        found.push((n, entry.path()));
    }
    found.sort();
    for pair in found.windows(2) {
        if pair[0].0 == pair[1].0 {
            return Err(FrameError::Sequence(format!(
                "frame number {} appears twice ({} and {})",
                pair[0].0,
                pair[0].1.display(),
                pair[1].1.display()
            )));
        }
        if pair[1].0 != pair[0].0 + 1 {
            return Err(FrameError::Sequence(format!(
                "missing frame {} between {} and {}",
                pair[0].0 + 1,
                pair[0].1.display(),
                pair[1].1.display()
            )));
        }
    }
    Ok(found)
}

impl FrameSource {
    pub fn open(dir: &Path, manifest: SequenceManifest) -> Result<Self, FrameError> {
        let left = numbered_files(dir, &manifest.pattern_left)?;
        if left.is_empty() {
            return Err(FrameError::Sequence(format!(
                "no files matching `{}` in {}",
                manifest.pattern_left,
                dir.display()
            )));
        }
        let files = match (&manifest.layout, &manifest.pattern_right) {
            (Layout::Separate, Some(pr)) => {
                let right = numbered_files(dir, pr)?;
                let lnums: Vec<u64> = left.iter().map(|(n, _)| *n).collect();
                let rnums: Vec<u64> = right.iter().map(|(n, _)| *n).collect();
                if lnums != rnums {
                    return Err(FrameError::Sequence(format!(
                        "left frames {}..={} and right frames {:?}..={:?} do not pair up",
                        lnums[0],
                        lnums[lnums.len() - 1],
                        rnums.first(),
                        rnums.last()
                    )));
                }
                left.into_iter()
                    .zip(right)
                    .map(|((_, l), (_, r))| (l, Some(r)))
                    .collect()
            }
            _ => left.into_iter().map(|(_, p)| (p, None)).collect(),
        };
        Ok(Self { manifest, files })
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    pub fn fps(&self) -> f64 {
        self.manifest.fps
    }

    pub fn manifest(&self) -> &SequenceManifest {
        &self.manifest
    }

    /// Decodes frame `index` (0-based position in the sequence).
    pub fn load(&self, index: usize) -> Result<StereoFrame, FrameError> {
        let (first, second) = self.files.get(index).ok_or_else(|| {
            FrameError::Parameter(format!("frame {index} out of range 0..{}", self.files.len()))
        })?;
        let (left, right) = match second {
            Some(r) => (read_gray(first)?, read_gray(r)?),
            None => split_side_by_side(&read_gray(first)?)?,
        };
        StereoFrame::new(left, right, index, self.manifest.fps)
    }

    pub fn load_all(&self) -> Result<FrameSequence, FrameError> {
        let frames = crate::par::map_indexed(self.len(), |i| self.load(i));
        let pairs = frames
            .into_iter()
            .map(|f| f.map(|f| (f.left, f.right)))
            .collect::<Result<Vec<_>, _>>()?;
        FrameSequence::new(pairs, self.manifest.fps)
    }
}

pub fn load_frame_sequence(dir: &Path, manifest: &SequenceManifest) -> Result<FrameSequence, FrameError> {
    FrameSource::open(dir, manifest.clone())?.load_all()
}

pub fn split_side_by_side(composite: &GrayImage) -> Result<(GrayImage, GrayImage), FrameError> {
    let w = composite.width();
    if !w.is_multiple_of(2) {
        return Err(FrameError::Format(format!(
            "side-by-side frame width must be even, got {w}"
        )));
    }
    let half = w / 2;
    let h = composite.height();
    let mut left = Vec::with_capacity(half * h);
    let mut right = Vec::with_capacity(half * h);
    for y in 0..h {
        let row = composite.row(y);
        left.extend_from_slice(&row[..half]);
        right.extend_from_slice(&row[half..]);
    }
    Ok((GrayImage::new(half, h, left)?, GrayImage::new(half, h, right)?))
}

pub fn concat_side_by_side(left: &GrayImage, right: &GrayImage) -> Result<GrayImage, FrameError> {
    if left.height() != right.height() {
        return Err(FrameError::Format("heights differ".into()));
    }
    let w = left.width() + right.width();
    let mut data = Vec::with_capacity(w * left.height());
    for y in 0..left.height() {
        data.extend_from_slice(left.row(y));
        data.extend_from_slice(right.row(y));
    }
    GrayImage::new(w, left.height(), data)
}

/// Random access to the frames of a sequence, however they are stored.
pub trait FrameProvider: Sync {
    fn len(&self) -> usize;
    fn fps(&self) -> f64;
    fn frame(&self, index: usize) -> Result<StereoFrame, FrameError>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl FrameProvider for FrameSource {
    fn len(&self) -> usize {
        self.files.len()
    }

    fn fps(&self) -> f64 {
        self.manifest.fps
    }

    fn frame(&self, index: usize) -> Result<StereoFrame, FrameError> {
        self.load(index)
    }
}

impl FrameProvider for FrameSequence {
    fn len(&self) -> usize {
        self.frames.len()
    }

    fn fps(&self) -> f64 {
        self.fps
    }

    fn frame(&self, index: usize) -> Result<StereoFrame, FrameError> {
        self.frames
            .get(index)
            .cloned()
            .ok_or_else(|| FrameError::Parameter(format!("frame {index} out of range 0..{}", self.frames.len())))
    }
}

/// Every `factor`-th frame of another provider, renumbered from 0.
pub struct Downsampled<'a, P: FrameProvider + ?Sized> {
    inner: &'a P,
    factor: usize,
}

impl<'a, P: FrameProvider + ?Sized> Downsampled<'a, P> {
    pub fn new(inner: &'a P, factor: usize) -> Result<Self, FrameError> {
        if factor == 0 {
            return Err(FrameError::Parameter("downsample factor must be >= 1".into()));
        }
        Ok(Self { inner, factor })
    }
}

impl<P: FrameProvider + ?Sized> FrameProvider for Downsampled<'_, P> {
    fn len(&self) -> usize {
        self.inner.len().div_ceil(self.factor)
    }

    fn fps(&self) -> f64 {
        self.inner.fps() / self.factor as f64
    }

    fn frame(&self, index: usize) -> Result<StereoFrame, FrameError> {
        if index >= self.len() {
            return Err(FrameError::Parameter(format!("frame {index} out of range 0..{}", self.len())));
        }
        let mut f = self.inner.frame(index * self.factor)?;
        f.index = index;
        f.timestamp = index as f64 / self.fps();
        Ok(f)
    }
}

/// Keeps every `factor`-th frame. Fractional factors are not supported.
pub fn downsample_sequence(seq: &FrameSequence, factor: usize) -> Result<FrameSequence, FrameError> {
    if factor == 0 {
        return Err(FrameError::Parameter("downsample factor must be >= 1".into()));
    }
    let fps = seq.fps / factor as f64;
    let frames = seq
        .frames
        .iter()
        .step_by(factor)
        .enumerate()
        .map(|(i, f)| StereoFrame {
            left: f.left.clone(),
            right: f.right.clone(),
            index: i,
            timestamp: i as f64 / fps,
        })
        .collect();
    Ok(FrameSequence { frames, fps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::encode_pgm;
    use proptest::prelude::*;

    fn write(dir: &Path, name: &str, img: &GrayImage) {
        std::fs::write(dir.join(name), encode_pgm(img)).unwrap();
    }

    fn separate_manifest(fps: f64) -> SequenceManifest {
        SequenceManifest {
            fps,
            layout: Layout::Separate,
            pattern_left: "l{n}.pgm".into(),
            pattern_right: Some("r{n}.pgm".into()),
        }
    }

    #[test]
    fn loads_separate_files() {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..3 {
            write(dir.path(), &format!("l{i}.pgm"), &GrayImage::filled(4, 2, i as u8));
            write(dir.path(), &format!("r{i}.pgm"), &GrayImage::filled(4, 2, 10 + i as u8));
        }
        let seq = load_frame_sequence(dir.path(), &separate_manifest(30.0)).unwrap();
        assert_eq!(seq.len(), 3);
        assert_eq!(seq.fps(), 30.0);
        assert_eq!(seq.frames()[2].left.get(0, 0), 2);
        assert_eq!(seq.frames()[2].right.get(0, 0), 12);
        assert_eq!(seq.frames()[1].timestamp, 1.0 / 30.0);
    }

    #[test]
    fn numeric_not_lexicographic_order() {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..12 {
            write(dir.path(), &format!("l{i}.pgm"), &GrayImage::filled(2, 2, i as u8));
            write(dir.path(), &format!("r{i}.pgm"), &GrayImage::filled(2, 2, i as u8));
        }
        let seq = load_frame_sequence(dir.path(), &separate_manifest(15.0)).unwrap();
        let firsts: Vec<u8> = seq.frames().iter().map(|f| f.left.get(0, 0)).collect();
        assert_eq!(firsts, (0..12).collect::<Vec<u8>>());
    }

    #[test]
    fn side_by_side_layout() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "f0.pgm", &GrayImage::filled(8, 4, 100));
        let manifest = SequenceManifest::from_kv(
            &KvFile::parse("fps = 30\nlayout = side_by_side\npattern = f{n}.pgm").unwrap(),
        )
        .unwrap();
        let seq = load_frame_sequence(dir.path(), &manifest).unwrap();
        let f = &seq.frames()[0];
        assert_eq!(f.left, GrayImage::filled(4, 4, 100));
        assert_eq!(f.right, GrayImage::filled(4, 4, 100));
    }

    #[test]
    fn timestamps_follow_manifest_fps() {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..30 {
            write(dir.path(), &format!("l{i}.pgm"), &GrayImage::filled(2, 2, 0));
            write(dir.path(), &format!("r{i}.pgm"), &GrayImage::filled(2, 2, 0));
        }
        let seq = load_frame_sequence(dir.path(), &separate_manifest(15.0)).unwrap();
        assert_eq!(seq.len(), 30);
        for (i, f) in seq.frames().iter().enumerate() {
            assert_eq!(f.index, i);
            assert_eq!(f.timestamp, i as f64 / 15.0);
        }
    }

    #[test]
    fn gap_is_a_sequence_error() {
        let dir = tempfile::tempdir().unwrap();
        for i in [0, 1, 3] {
            write(dir.path(), &format!("l{i}.pgm"), &GrayImage::filled(2, 2, 0));
            write(dir.path(), &format!("r{i}.pgm"), &GrayImage::filled(2, 2, 0));
        }
        let err = load_frame_sequence(dir.path(), &separate_manifest(30.0)).unwrap_err();
        assert!(matches!(err, FrameError::Sequence(ref m) if m.contains("missing frame 2")), "{err}");
    }

    #[test]
    fn dimension_mismatch_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "l0.pgm", &GrayImage::filled(2, 2, 0));
        write(dir.path(), "r0.pgm", &GrayImage::filled(2, 2, 0));
        write(dir.path(), "l1.pgm", &GrayImage::filled(3, 2, 0));
        write(dir.path(), "r1.pgm", &GrayImage::filled(3, 2, 0));
        let err = load_frame_sequence(dir.path(), &separate_manifest(30.0)).unwrap_err();
        assert!(matches!(err, FrameError::Format(_)), "{err}");
    }

    #[test]
    fn manifest_validation() {
        let bad = [
            "layout = separate\npattern_left = a{n}\npattern_right = b{n}",
            "fps = 0\nlayout = separate\npattern_left = a{n}\npattern_right = b{n}",
            "fps = 30\nlayout = stacked\npattern = a{n}",
            "fps = 30\nlayout = side_by_side\npattern = a.pgm",
            "fps = 30\nlayout = side_by_side\npattern = a{n}\ncolour = yes",
        ];
        for text in bad {
            let kv = KvFile::parse(text).unwrap();
            assert!(SequenceManifest::from_kv(&kv).is_err(), "{text}");
        }
        let m = separate_manifest(30.0);
        assert_eq!(SequenceManifest::from_kv(&m.to_kv()).unwrap(), m);
    }

    #[test]
    fn smallest_split() {
        let img = GrayImage::new(2, 1, vec![7, 9]).unwrap();
        let (l, r) = split_side_by_side(&img).unwrap();
        assert_eq!(l.data(), &[7]);
        assert_eq!(r.data(), &[9]);
    }

    #[test]
    fn composite_480x1280_splits_into_640x480() {
        let img = GrayImage::filled(1280, 480, 3);
        let (l, r) = split_side_by_side(&img).unwrap();
        assert_eq!((l.width(), l.height()), (640, 480));
        assert_eq!((r.width(), r.height()), (640, 480));
    }

    #[test]
    fn odd_width_rejected() {
        assert!(matches!(
            split_side_by_side(&GrayImage::filled(3, 2, 0)),
            Err(FrameError::Format(_))
        ));
    }

    fn sequence(n: usize, fps: f64) -> FrameSequence {
        let pairs = (0..n)
            .map(|i| (GrayImage::filled(2, 1, i as u8), GrayImage::filled(2, 1, i as u8)))
            .collect();
        FrameSequence::new(pairs, fps).unwrap()
    }

    #[test]
    fn downsample_basics() {
        let seq = sequence(90, 30.0);
        assert_eq!(downsample_sequence(&seq, 1).unwrap(), seq);
        let half = downsample_sequence(&seq, 2).unwrap();
        assert_eq!(half.fps(), 15.0);
        assert_eq!(half.len(), 45);
        let kept: Vec<u8> = half.frames().iter().map(|f| f.left.get(0, 0)).take(3).collect();
        assert_eq!(kept, vec![0, 2, 4]);
        assert!(matches!(downsample_sequence(&seq, 0), Err(FrameError::Parameter(_))));
    }

    #[test]
    fn integer_factors_bracket_low_rate() {
        // 30 Hz / 6.7 Hz ~ 4.5 is not an integer; the nearest factors give
        // 7.5 Hz and 6 Hz.
        let seq = sequence(90, 30.0);
        let f4 = downsample_sequence(&seq, 4).unwrap().fps();
        let f5 = downsample_sequence(&seq, 5).unwrap().fps();
        assert_eq!((f4, f5), (7.5, 6.0));
        assert!(f5 < 6.7 && 6.7 < f4);
    }

    proptest! {
        #[test]
        fn split_then_concat_is_identity(half in 1usize..20, h in 1usize..10, seed in any::<u64>()) {
            let img = GrayImage::from_fn(2 * half, h, |x, y| {
                (seed.wrapping_mul(x as u64 * 31 + y as u64 * 17 + 1) >> 7) as u8
            });
            let (l, r) = split_side_by_side(&img).unwrap();
            prop_assert_eq!(concat_side_by_side(&l, &r).unwrap(), img);
        }

        #[test]
        fn downsample_composes(n in 1usize..60, a in 1usize..5, b in 1usize..5) {
            let seq = sequence(n, 30.0);
            let once = downsample_sequence(&seq, a * b).unwrap();
            let twice = downsample_sequence(&downsample_sequence(&seq, a).unwrap(), b).unwrap();
            prop_assert_eq!(once, twice);
        }
    }

    #[test]
    fn downsampled_provider_matches_eager_downsampling() {
        let pairs: Vec<_> = (0..7u8)
            .map(|i| (GrayImage::filled(4, 2, i), GrayImage::filled(4, 2, 100 + i)))
            .collect();
        let seq = FrameSequence::new(pairs, 30.0).unwrap();
        let eager = downsample_sequence(&seq, 3).unwrap();
        let lazy = Downsampled::new(&seq, 3).unwrap();
        assert_eq!(FrameProvider::len(&lazy), eager.len());
        assert_eq!(FrameProvider::fps(&lazy), eager.fps());
        for i in 0..eager.len() {
            assert_eq!(lazy.frame(i).unwrap(), eager.frames()[i]);
        }
        assert!(lazy.frame(3).is_err());
        assert!(Downsampled::new(&seq, 0).is_err());
    }
}
