//! Per-frame depth lattice and the frame-to-reference depth delta.

use crate::cloud::{PointCloud, RoiBox};
use crate::signal::SignalError;
use nalgebra::Point3;

/// Regular x–y lattice; cell `(i, j)` covers
/// `[x0 + i·cell, x0 + (i+1)·cell) × [y0 + j·cell, y0 + (j+1)·cell)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lattice {
    pub x0: f64,
    pub y0: f64,
    pub cell: f64,
    pub nx: usize,
    pub ny: usize,
}

impl Lattice {
    pub fn new(x0: f64, y0: f64, cell: f64, nx: usize, ny: usize) -> Result<Self, SignalError> {
        if !(cell > 0.0) || !x0.is_finite() || !y0.is_finite() {
            return Err(SignalError::Parameter(format!("lattice cell size must be positive (got {cell})")));
        }
        Ok(Self { x0, y0, cell, nx, ny })
    }

    /// Smallest lattice of the given cell size covering every point's x–y.
    pub fn covering(cloud: &PointCloud, cell: f64) -> Result<Self, SignalError> {
        if cloud.is_empty() {
            return Lattice::new(0.0, 0.0, cell, 0, 0);
        }
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in &cloud.points {
            lo = [lo[0].min(p.x), lo[1].min(p.y)];
            hi = [hi[0].max(p.x), hi[1].max(p.y)];
        }
        let x0 = (lo[0] / cell).floor() * cell;
        let y0 = (lo[1] / cell).floor() * cell;
        let nx = ((hi[0] - x0) / cell).floor() as usize + 1;
        let ny = ((hi[1] - y0) / cell).floor() as usize + 1;
        Lattice::new(x0, y0, cell, nx, ny)
    }

    pub fn cell_of(&self, x: f64, y: f64) -> Option<usize> {
        let i = ((x - self.x0) / self.cell).floor();
        let j = ((y - self.y0) / self.cell).floor();
        if i >= 0.0 && j >= 0.0 && (i as usize) < self.nx && (j as usize) < self.ny {
            Some(j as usize * self.nx + i as usize)
        } else {
            None
        }
    }

    pub fn center(&self, idx: usize) -> (f64, f64) {
        let (i, j) = (idx % self.nx, idx / self.nx);
        (
            self.x0 + (i as f64 + 0.5) * self.cell,
            self.y0 + (j as f64 + 0.5) * self.cell,
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DepthGrid {
    pub lattice: Lattice,
    /// Row-major mean z per cell.
    pub cells: Vec<Option<f64>>,
}

impl DepthGrid {
    pub fn valid_count(&self) -> usize {
        self.cells.iter().filter(|c| c.is_some()).count()
    }
}

pub fn depth_grid_from_cloud(cloud: &PointCloud, lattice: &Lattice) -> DepthGrid {
    let n = lattice.nx * lattice.ny;
    let mut sum = vec![0.0; n];
    let mut count = vec![0usize; n];
    for p in &cloud.points {
        if let Some(c) = lattice.cell_of(p.x, p.y) {
            sum[c] += p.z;
            count[c] += 1;
        }
    }
    DepthGrid {
        lattice: *lattice,
        cells: sum
            .iter()
            .zip(&count)
            .map(|(&s, &c)| (c > 0).then(|| s / c as f64))
            .collect(),
    }
}

/// Fraction of the reference's in-ROI valid cells that must also be valid
/// in the frame.
pub const MIN_OVERLAP: f64 = 0.25;

/// Median of `reference.z − frame.z` over cells valid in both and inside
/// `roi` (tested at the cell centre and reference depth). Positive means
/// the surface moved toward the camera.
pub fn depth_delta(frame: &DepthGrid, reference: &DepthGrid, roi: &RoiBox) -> Result<f64, SignalError> {
    if frame.lattice != reference.lattice {
        return Err(SignalError::Parameter("depth grids use different lattices".into()));
    }
    let mut reference_valid = 0;
    let mut diffs = Vec::new();
    for (idx, (r, f)) in reference.cells.iter().zip(&frame.cells).enumerate() {
        let Some(r) = *r else { continue };
        let (x, y) = reference.lattice.center(idx);
        if !roi.contains(&Point3::new(x, y, r)) {
            continue;
        }
        reference_valid += 1;
        if let Some(f) = *f {
            diffs.push(r - f);
        }
    }
    if reference_valid == 0 || (diffs.len() as f64) < MIN_OVERLAP * reference_valid as f64 {
        return Err(SignalError::Coverage {
            overlap: diffs.len(),
            reference: reference_valid,
        });
    }
    Ok(median(&mut diffs))
}

/// Median with the mean of the two middle values for even counts.
pub(crate) fn median(v: &mut [f64]) -> f64 {
    let n = v.len();
    let mid = n / 2;
    let (lower, m, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    let m = *m;
    if n % 2 == 1 {
        m
    } else {
        let below = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (below + m) / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lattice() -> Lattice {
        Lattice::new(-100.0, -100.0, 10.0, 20, 20).unwrap()
    }

    #[test]
    fn single_point_and_means() {
        let g = depth_grid_from_cloud(&PointCloud::from_points(vec![Point3::new(0.0, 0.0, 1000.0)]), &lattice());
        assert_eq!(g.valid_count(), 1);
        assert_eq!(g.cells[lattice().cell_of(0.0, 0.0).unwrap()], Some(1000.0));

        let two = PointCloud::from_points(vec![Point3::new(1.0, 1.0, 900.0), Point3::new(2.0, 3.0, 910.0)]);
        let g = depth_grid_from_cloud(&two, &lattice());
        assert_eq!(g.cells[lattice().cell_of(1.0, 1.0).unwrap()], Some(905.0));

        let empty = depth_grid_from_cloud(&PointCloud::default(), &lattice());
        assert_eq!(empty.valid_count(), 0);
    }

    fn plane(z: f64) -> PointCloud {
        PointCloud::from_points(
            (0..200)
                .flat_map(|i| (0..200).map(move |j| Point3::new(-99.5 + i as f64, -99.5 + j as f64, z)))
                .collect(),
        )
    }

    #[test]
    fn dense_plane() {
        let g = depth_grid_from_cloud(&plane(800.0), &lattice());
        assert_eq!(g.valid_count(), 400);
        assert!(g.cells.iter().all(|c| (c.unwrap() - 800.0).abs() < 1e-9));
    }

    #[test]
    fn delta_of_shifted_grid() {
        let r = depth_grid_from_cloud(&plane(800.0), &lattice());
        assert_eq!(depth_delta(&r, &r, &RoiBox::Full).unwrap(), 0.0);
        let f = depth_grid_from_cloud(&plane(793.0), &lattice());
        assert!((depth_delta(&f, &r, &RoiBox::Full).unwrap() - 7.0).abs() < 1e-9);
    }

    #[test]
    fn delta_matches_sorted_median() {
        let reference = depth_grid_from_cloud(&plane(900.0), &lattice());
        for split in [150, 200, 260] {
            let mut frame = reference.clone();
            for (i, c) in frame.cells.iter_mut().enumerate() {
                *c = c.map(|z| if i < split { z - 4.0 } else { z - 10.0 });
            }
            let mut all: Vec<f64> = (0..400).map(|i| if i < split { 4.0 } else { 10.0 }).collect();
            all.sort_by(f64::total_cmp);
            let expect = (all[199] + all[200]) / 2.0;
            assert_eq!(depth_delta(&frame, &reference, &RoiBox::Full).unwrap(), expect);
        }
    }

    #[test]
    fn roi_and_coverage() {
        let reference = depth_grid_from_cloud(&plane(900.0), &lattice());
        let mut frame = reference.clone();
        for (i, c) in frame.cells.iter_mut().enumerate() {
            *c = if i % 5 == 0 { c.map(|z| z - 3.0) } else { None };
        }
        // 20% overlap
        assert_eq!(
            depth_delta(&frame, &reference, &RoiBox::Full),
            Err(SignalError::Coverage { overlap: 80, reference: 400 })
        );
        // ROI of a single column of cells, all present in the frame
        let roi: RoiBox = "-100:-100:0:-95:100:2000".parse().unwrap();
        assert_eq!(depth_delta(&frame, &reference, &roi).unwrap(), 3.0);
    }

    proptest! {
        #[test]
        fn median_matches_sort(mut v in proptest::collection::vec(-1e3f64..1e3, 1..60)) {
            let mut s = v.clone();
            s.sort_by(f64::total_cmp);
            let n = s.len();
            let expect = if n % 2 == 1 { s[n / 2] } else { (s[n / 2 - 1] + s[n / 2]) / 2.0 };
            prop_assert_eq!(median(&mut v), expect);
        }
    }
}
