//! SAD block matching on rectified pairs and disparity post-filtering.
//!
//! Disparity convention: a left pixel at column `x` with disparity `d`
//! matches the right pixel at column `x - d` on the same row.

use std::collections::VecDeque;

use crate::image::GrayImage;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum StereoError {
    #[error("parameter error: {0}")]
    Parameter(String),
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct MatchParams {
    pub min_disparity: usize,
    pub max_disparity: usize,
    /// Window is `(2r+1)²` pixels.
    pub block_radius: usize,
    /// Best cost × ratio must not exceed the best cost found more than one
    /// pixel away from the winner.
    pub uniqueness_ratio: f64,
    /// Max |left→right − right→left| integer disagreement, pixels.
    pub lr_consistency_tol: f64,
    /// Minimum intensity variance of the left window.
    pub texture_threshold: f64,
}

impl Default for MatchParams {
    fn default() -> Self {
        Self {
            min_disparity: 0,
            max_disparity: 64,
            block_radius: 5,
            uniqueness_ratio: 1.05,
            lr_consistency_tol: 1.0,
            texture_threshold: 10.0,
        }
    }
}

impl MatchParams {
    pub fn validate(&self) -> Result<(), StereoError> {
        if self.min_disparity >= self.max_disparity {
            return Err(StereoError::Parameter(format!(
                "empty disparity range [{}, {}]",
                self.min_disparity, self.max_disparity
            )));
        }
        if self.block_radius < 1 {
            return Err(StereoError::Parameter("block_radius must be >= 1".into()));
        }
        if !(self.uniqueness_ratio >= 1.0) || !self.uniqueness_ratio.is_finite() {
            return Err(StereoError::Parameter("uniqueness_ratio must be >= 1".into()));
        }
        if !(self.lr_consistency_tol >= 0.0) || !(self.texture_threshold >= 0.0) {
            return Err(StereoError::Parameter(
                "lr_consistency_tol and texture_threshold must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Per-pixel disparity in pixels; NaN marks invalid pixels.
#[derive(Clone, Debug)]
pub struct DisparityMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl PartialEq for DisparityMap {
    fn eq(&self, other: &Self) -> bool {
        self.width == other.width
            && self.height == other.height
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a == b || (a.is_nan() && b.is_nan()))
    }
}

impl DisparityMap {
    pub fn invalid(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![f64::NAN; width * height],
        }
    }

    /// Non-finite entries are treated as invalid.
    pub fn from_values(width: usize, height: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), width * height, "disparity buffer size");
        let values = values
            .into_iter()
            .map(|v| if v.is_finite() { v } else { f64::NAN })
            .collect();
        Self {
            width,
            height,
            values,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        let v = self.values[y * self.width + x];
        v.is_finite().then_some(v)
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: Option<f64>) {
        self.values[y * self.width + x] = v.filter(|v| v.is_finite()).unwrap_or(f64::NAN);
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn valid_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_finite()).count()
    }

    pub fn valid_fraction(&self) -> f64 {
        self.valid_count() as f64 / self.values.len().max(1) as f64
    }

    /// Debug dump: 16-bit PGM with `round(d * 256)`, invalid = 0.
    pub fn to_pgm16(&self) -> Vec<u8> {
        let samples: Vec<u16> = self
            .values
            .iter()
            .map(|v| if v.is_finite() { (v * 256.0).round().clamp(0.0, 65535.0) as u16 } else { 0 })
            .collect();
        crate::image::encode_pgm16(self.width, self.height, &samples)
    }
}

const UNAVAILABLE: u32 = u32::MAX;

/// Window variance of an 8-bit image via integral images.
struct WindowStats {
    w: usize,
    sum: Vec<u64>,
    sum_sq: Vec<u64>,
}

impl WindowStats {
    fn new(img: &GrayImage) -> Self {
        let (w, h) = (img.width(), img.height());
        let stride = w + 1;
        let mut sum = vec![0u64; stride * (h + 1)];
        let mut sum_sq = vec![0u64; stride * (h + 1)];
        for y in 0..h {
            let mut row = 0u64;
            let mut row_sq = 0u64;
            for (x, &p) in img.row(y).iter().enumerate() {
                row += p as u64;
                row_sq += (p as u64) * (p as u64);
                sum[(y + 1) * stride + x + 1] = sum[y * stride + x + 1] + row;
                sum_sq[(y + 1) * stride + x + 1] = sum_sq[y * stride + x + 1] + row_sq;
            }
        }
        Self { w, sum, sum_sq }
    }

    fn variance(&self, x: usize, y: usize, r: usize) -> f64 {
        let stride = self.w + 1;
        let (x0, x1, y0, y1) = (x - r, x + r + 1, y - r, y + r + 1);
        let boxed = |t: &[u64]| t[y1 * stride + x1] + t[y0 * stride + x0] - t[y0 * stride + x1] - t[y1 * stride + x0];
        let n = ((2 * r + 1) * (2 * r + 1)) as u128;
        let s = boxed(&self.sum) as u128;
        let s2 = boxed(&self.sum_sq) as u128;
        (n * s2 - s * s) as f64 / (n * n) as f64
    }
}

/// Streams SAD costs one image row at a time: `costs[x * nd + (d - dmin)]`
/// for every candidate whose left and right windows both fit, else
/// `UNAVAILABLE`.
struct CostRows<'a> {
    left: &'a GrayImage,
    right: &'a GrayImage,
    r: usize,
    dmin: usize,
    nd: usize,
    /// Vertical window sums per candidate, `colsum[di * w + x]`.
    colsum: Vec<u32>,
    costs: Vec<u32>,
    next_y: usize,
}

impl<'a> CostRows<'a> {
    fn new(left: &'a GrayImage, right: &'a GrayImage, r: usize, dmin: usize, dmax: usize) -> Self {
        let nd = dmax - dmin + 1;
        let w = left.width();
        Self {
            left,
            right,
            r,
            dmin,
            nd,
            colsum: vec![0; nd * w],
            costs: vec![UNAVAILABLE; nd * w],
            next_y: r,
        }
    }

    fn accumulate_row(&mut self, y: usize, add: bool) {
        let w = self.left.width();
        let lrow = self.left.row(y);
        let rrow = self.right.row(y);
        for di in 0..self.nd {
            let d = self.dmin + di;
            if d >= w {
                continue;
            }
            let col = &mut self.colsum[di * w..(di + 1) * w];
            for x in d..w {
                let diff = lrow[x].abs_diff(rrow[x - d]) as u32;
                if add {
                    col[x] += diff;
                } else {
                    col[x] -= diff;
                }
            }
        }
    }

    /// Advances to the next row with a full vertical window; returns its index.
    fn advance(&mut self) -> Option<usize> {
        let (w, h, r) = (self.left.width(), self.left.height(), self.r);
        let y = self.next_y;
        if y + r >= h {
            return None;
        }
        if y == r {
            for row in 0..=2 * r {
                self.accumulate_row(row, true);
            }
        } else {
            self.accumulate_row(y + r, true);
            self.accumulate_row(y - r - 1, false);
        }
        self.costs.fill(UNAVAILABLE);
        let nd = self.nd;
        for di in 0..nd {
            let d = self.dmin + di;
            if d + 2 * r >= w {
                continue;
            }
            let col = &self.colsum[di * w..(di + 1) * w];
            let mut s: u32 = col[d..=d + 2 * r].iter().sum();
            let mut x = d + r;
            loop {
                self.costs[x * nd + di] = s;
                if x + r + 1 >= w {
                    break;
                }
                s = s + col[x + r + 1] - col[x - r];
                x += 1;
            }
        }
        self.next_y = y + 1;
        Some(y)
    }

    #[inline]
    fn cost(&self, x: usize, d: usize) -> u32 {
        self.costs[x * self.nd + (d - self.dmin)]
    }
}

/// Outcome of the integer search at one pixel.
#[derive(Clone, Copy, Debug, PartialEq)]
struct PixelMatch {
    disparity: usize,
    subpixel: f64,
}

fn match_pixel(rows: &CostRows, stats: &WindowStats, x: usize, y: usize, p: &MatchParams) -> Option<PixelMatch> {
    let (dmin, dmax, r) = (p.min_disparity, p.max_disparity, p.block_radius);
    if stats.variance(x, y, r) < p.texture_threshold {
        return None;
    }
    let mut best = dmin;
    let mut best_cost = rows.cost(x, dmin);
    for d in dmin + 1..=dmax {
        let c = rows.cost(x, d);
        if c < best_cost {
            best = d;
            best_cost = c;
        }
    }
    let second = (dmin..=dmax)
        .filter(|&d| d.abs_diff(best) > 1)
        .map(|d| rows.cost(x, d))
        .min();
    if let Some(second) = second {
        if best_cost as f64 * p.uniqueness_ratio > second as f64 {
            return None;
        }
    }
    // right-to-left search from the matched right pixel
    let xr = x - best;
    let w = rows.left.width();
    let mut rbest = None::<(usize, u32)>;
    for d in dmin..=dmax {
        if xr + d + r >= w {
            break;
        }
        let c = rows.cost(xr + d, d);
        if rbest.is_none_or(|(_, bc)| c < bc) {
            rbest = Some((d, c));
        }
    }
    let (rd, _) = rbest.expect("the forward match is always a candidate");
    if rd.abs_diff(best) as f64 > p.lr_consistency_tol {
        return None;
    }
    let mut subpixel = best as f64;
    if best > dmin && best < dmax {
        let cm = rows.cost(x, best - 1) as f64;
        let c0 = best_cost as f64;
        let cp = rows.cost(x, best + 1) as f64;
        let denom = cm - 2.0 * c0 + cp;
        if denom > 0.0 {
            subpixel += (cm - cp) / (2.0 * denom);
        }
    }
    Some(PixelMatch {
        disparity: best,
        subpixel,
    })
}

fn run_matcher(
    left: &GrayImage,
    right: &GrayImage,
    params: &MatchParams,
    mut emit: impl FnMut(usize, usize, PixelMatch),
) -> Result<(), StereoError> {
    params.validate()?;
    if left.width() != right.width() || left.height() != right.height() {
        return Err(StereoError::Parameter(format!(
            "left is {}x{} but right is {}x{}",
            left.width(),
            left.height(),
            right.width(),
            right.height()
        )));
    }
    let (w, r, dmax) = (left.width(), params.block_radius, params.max_disparity);
    let stats = WindowStats::new(left);
    let mut rows = CostRows::new(left, right, r, params.min_disparity, dmax);
    while let Some(y) = rows.advance() {
        // every candidate's right window must fit
        for x in dmax + r..w.saturating_sub(r) {
            if let Some(m) = match_pixel(&rows, &stats, x, y, params) {
                emit(x, y, m);
            }
        }
    }
    Ok(())
}

/// Integer stage of the matcher: the winning disparity of every pixel that
/// passes the texture, uniqueness and left-right gates, row-major.
pub fn integer_disparities(left: &GrayImage, right: &GrayImage, params: &MatchParams) -> Result<Vec<Option<u32>>, StereoError> {
    let w = left.width();
    let mut out = vec![None; w * left.height()];
    run_matcher(left, right, params, |x, y, m| out[y * w + x] = Some(m.disparity as u32))?;
    Ok(out)
}

/// Block matching with parabolic subpixel refinement.
pub fn compute_disparity(left: &GrayImage, right: &GrayImage, params: &MatchParams) -> Result<DisparityMap, StereoError> {
    let mut map = DisparityMap::invalid(left.width(), left.height());
    run_matcher(left, right, params, |x, y, m| map.set(x, y, Some(m.subpixel)))?;
    Ok(map)
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct FilterParams {
    /// 0 disables the median stage.
    pub median_radius: usize,
    /// Components smaller than this many pixels are removed.
    pub speckle_max_area: usize,
    pub speckle_tol: f64,
}

impl Default for FilterParams {
    fn default() -> Self {
        Self {
            median_radius: 1,
            speckle_max_area: 40,
            speckle_tol: 1.0,
        }
    }
}

/// Median over valid neighbours, then removal of small connected patches.
/// Invalid pixels never become valid.
pub fn filter_disparity(map: &DisparityMap, params: &FilterParams) -> DisparityMap {
    let (w, h) = (map.width, map.height);
    let r = params.median_radius;
    let mut out = DisparityMap::invalid(w, h);
    if r == 0 {
        out.values.clone_from(&map.values);
    } else {
        let mut window = Vec::with_capacity((2 * r + 1) * (2 * r + 1));
        for y in 0..h {
            for x in 0..w {
                if map.get(x, y).is_none() {
                    continue;
                }
                window.clear();
                let ys = y.saturating_sub(r)..=(y + r).min(h - 1);
                let xs = x.saturating_sub(r)..=(x + r).min(w - 1);
                // windows are clipped at the image border
                let area = ys.clone().count() * xs.clone().count();
                for ny in ys {
                    for nx in xs.clone() {
                        if let Some(v) = map.get(nx, ny) {
                            window.push(v);
                        }
                    }
                }
                if 2 * window.len() < area {
                    continue;
                }
                window.sort_by(f64::total_cmp);
                let n = window.len();
                let med = if n % 2 == 1 {
                    window[n / 2]
                } else {
                    0.5 * (window[n / 2 - 1] + window[n / 2])
                };
                out.set(x, y, Some(med));
            }
        }
    }
    remove_speckles(&mut out, params.speckle_max_area, params.speckle_tol);
    out
}

fn remove_speckles(map: &mut DisparityMap, max_area: usize, tol: f64) {
    if max_area == 0 {
        return;
    }
    let (w, h) = (map.width, map.height);
    let mut label = vec![usize::MAX; w * h];
    let mut queue = VecDeque::new();
    let mut members = Vec::new();
    for start in 0..w * h {
        if label[start] != usize::MAX || !map.values[start].is_finite() {
            continue;
        }
        label[start] = start;
        queue.push_back(start);
        members.clear();
        while let Some(i) = queue.pop_front() {
            members.push(i);
            let (x, y) = (i % w, i / w);
            let v = map.values[i];
            let mut visit = |j: usize| {
                if label[j] == usize::MAX && map.values[j].is_finite() && (map.values[j] - v).abs() <= tol {
                    label[j] = start;
                    queue.push_back(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        if members.len() < max_area {
            for &i in &members {
                map.values[i] = f64::NAN;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Deterministic textured image (hash noise, smoothed a little so SAD
    /// costs are parabola-shaped around the true shift).
    pub(crate) fn textured(w: usize, h: usize, seed: u64) -> GrayImage {
        let hash = |x: i64, y: i64| -> f64 {
            let mut z = seed ^ (x as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (y as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
            ((z ^ (z >> 31)) >> 11) as f64 / (1u64 << 53) as f64
        };
        GrayImage::from_fn(w, h, |x, y| {
            let (x, y) = (x as i64, y as i64);
            let v = 0.4 * hash(x, y) + 0.2 * (hash(x - 1, y) + hash(x + 1, y)) + 0.1 * (hash(x, y - 1) + hash(x, y + 1));
            (v * 255.0) as u8
        })
    }

    /// right(x) = left(x + shift): every left pixel has disparity `shift`.
    fn shifted(left: &GrayImage, shift: usize, fill_seed: u64) -> GrayImage {
        let fill = textured(left.width(), left.height(), fill_seed);
        GrayImage::from_fn(left.width(), left.height(), |x, y| {
            if x + shift < left.width() {
                left.get(x + shift, y)
            } else {
                fill.get(x, y)
            }
        })
    }

    /// Direct per-pixel exhaustive search: the independent oracle for the
    /// streamed cost rows.
    fn naive_sad(l: &GrayImage, rt: &GrayImage, x: usize, y: usize, d: usize, r: usize) -> u32 {
        let mut s = 0;
        for wy in y - r..=y + r {
            for wx in x - r..=x + r {
                s += l.get(wx, wy).abs_diff(rt.get(wx - d, wy)) as u32;
            }
        }
        s
    }

    pub(crate) fn oracle_integer(l: &GrayImage, rt: &GrayImage, p: &MatchParams) -> Vec<Option<u32>> {
        let (w, h, r) = (l.width(), l.height(), p.block_radius);
        let n = ((2 * r + 1) * (2 * r + 1)) as f64;
        let mut out = vec![None; w * h];
        for y in r..h.saturating_sub(r) {
            for x in p.max_disparity + r..w.saturating_sub(r) {
                let vals: Vec<f64> = (y - r..=y + r)
                    .flat_map(|yy| (x - r..=x + r).map(move |xx| (xx, yy)))
                    .map(|(xx, yy)| l.get(xx, yy) as f64)
                    .collect();
                let mean = vals.iter().sum::<f64>() / n;
                let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                if var < p.texture_threshold - 1e-9 {
                    continue;
                }
                let costs: Vec<(usize, u32)> = (p.min_disparity..=p.max_disparity)
                    .map(|d| (d, naive_sad(l, rt, x, y, d, r)))
                    .collect();
                let (best, bc) = *costs.iter().min_by_key(|(d, c)| (*c, *d)).unwrap();
                let second = costs.iter().filter(|(d, _)| d.abs_diff(best) > 1).map(|(_, c)| *c).min();
                if second.is_some_and(|s| bc as f64 * p.uniqueness_ratio > s as f64) {
                    continue;
                }
                let xr = x - best;
                let rcosts: Vec<(usize, u32)> = (p.min_disparity..=p.max_disparity)
                    .filter(|d| xr + d + r < w)
                    .map(|d| (d, naive_sad(l, rt, xr + d, y, d, r)))
                    .collect();
                let (rbest, _) = *rcosts.iter().min_by_key(|(d, c)| (*c, *d)).unwrap();
                if rbest.abs_diff(best) as f64 > p.lr_consistency_tol {
                    continue;
                }
                out[y * w + x] = Some(best as u32);
            }
        }
        out
    }

    fn small_params() -> MatchParams {
        MatchParams {
            max_disparity: 16,
            block_radius: 3,
            ..MatchParams::default()
        }
    }

    #[test]
    fn identical_images_give_zero() {
        let img = textured(48, 32, 3);
        let map = compute_disparity(&img, &img, &small_params()).unwrap();
        assert!(map.valid_count() > 0);
        for v in map.values().iter().filter(|v| v.is_finite()) {
            assert_eq!(*v, 0.0);
        }
    }

    #[test]
    fn constant_shift_recovered() {
        let left = textured(64, 48, 11);
        let right = shifted(&left, 5, 99);
        let map = compute_disparity(&left, &right, &small_params()).unwrap();
        let mut n = 0;
        for y in 0..48 {
            for x in 0..58 {
                if let Some(d) = map.get(x, y) {
                    assert!((d - 5.0).abs() <= 0.25, "({x},{y}) -> {d}");
                    n += 1;
                }
            }
        }
        assert!(n > 400, "only {n} valid pixels");
    }

    #[test]
    fn textureless_is_invalid() {
        let img = GrayImage::filled(40, 30, 128);
        let map = compute_disparity(&img, &img, &small_params()).unwrap();
        assert_eq!(map.valid_count(), 0);
    }

    #[test]
    fn parameter_errors() {
        let a = GrayImage::filled(10, 10, 0);
        let b = GrayImage::filled(11, 10, 0);
        assert!(compute_disparity(&a, &b, &small_params()).is_err());
        let empty = MatchParams {
            min_disparity: 5,
            max_disparity: 5,
            ..small_params()
        };
        assert!(compute_disparity(&a, &a, &empty).is_err());
    }

    #[test]
    fn matches_oracle_on_random_pairs() {
        for seed in 0..4 {
            let left = textured(64, 64, seed);
            let right = shifted(&left, 3 + seed as usize, seed + 100);
            let p = small_params();
            assert_eq!(integer_disparities(&left, &right, &p).unwrap(), oracle_integer(&left, &right, &p));
        }
    }

    #[test]
    fn constant_offset_invariance() {
        let left = textured(64, 40, 5);
        let right = shifted(&left, 4, 6);
        let bump = |img: &GrayImage| GrayImage::from_fn(img.width(), img.height(), |x, y| img.get(x, y) / 2 + 60);
        let halve = |img: &GrayImage| GrayImage::from_fn(img.width(), img.height(), |x, y| img.get(x, y) / 2);
        let p = MatchParams {
            texture_threshold: 0.0,
            ..small_params()
        };
        assert_eq!(
            integer_disparities(&halve(&left), &halve(&right), &p).unwrap(),
            integer_disparities(&bump(&left), &bump(&right), &p).unwrap()
        );
    }

    #[test]
    fn salt_pixel_replaced_by_median() {
        let mut map = DisparityMap::from_values(7, 7, vec![10.0; 49]);
        map.set(3, 3, Some(40.0));
        let out = filter_disparity(&map, &FilterParams::default());
        assert_eq!(out.get(3, 3), Some(10.0));
    }

    #[test]
    fn isolated_blob_removed() {
        let mut map = DisparityMap::invalid(10, 10);
        for x in 4..7 {
            map.set(x, 5, Some(30.0));
        }
        // a large component of its own survives
        for y in 0..3 {
            for x in 0..5 {
                map.set(x, y, Some(12.0));
            }
        }
        let out = filter_disparity(
            &map,
            &FilterParams {
                median_radius: 0,
                speckle_max_area: 10,
                speckle_tol: 1.0,
            },
        );
        for x in 4..7 {
            assert_eq!(out.get(x, 5), None);
        }
        assert_eq!(out.valid_count(), 15);
    }

    #[test]
    fn uniform_map_unchanged() {
        let map = DisparityMap::from_values(12, 9, vec![7.25; 108]);
        assert_eq!(filter_disparity(&map, &FilterParams::default()), map);
        let empty = DisparityMap::invalid(5, 5);
        assert_eq!(filter_disparity(&empty, &FilterParams::default()), empty);
    }

    #[test]
    fn pgm16_dump() {
        let map = DisparityMap::from_values(2, 1, vec![1.5, f64::NAN]);
        let bytes = map.to_pgm16();
        assert!(bytes.starts_with(b"P5\n2 1\n65535\n"));
        assert_eq!(&bytes[bytes.len() - 4..], &[1, 128, 0, 0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn valid_outputs_within_range(seed in any::<u64>(), shift in 0usize..12) {
            let left = textured(48, 24, seed);
            let right = shifted(&left, shift, seed ^ 1);
            let p = MatchParams { min_disparity: 2, max_disparity: 14, block_radius: 2, ..MatchParams::default() };
            let map = compute_disparity(&left, &right, &p).unwrap();
            for v in map.values().iter().filter(|v| v.is_finite()) {
                prop_assert!(*v >= 2.0 && *v <= 14.0);
            }
        }

        #[test]
        fn filter_never_revalidates(vals in proptest::collection::vec(proptest::option::of(0.0f64..20.0), 64), r in 0usize..3) {
            let map = DisparityMap::from_values(8, 8, vals.iter().map(|v| v.unwrap_or(f64::NAN)).collect());
            let out = filter_disparity(&map, &FilterParams { median_radius: r, speckle_max_area: 4, speckle_tol: 1.0 });
            for (a, b) in map.values().iter().zip(out.values()) {
                prop_assert!(a.is_finite() || !b.is_finite());
            }
        }
    }
}
