//! Balanced 3-d tree for exact nearest-neighbour queries.

use nalgebra::Point3;

const LEAF_SIZE: usize = 8;

#[derive(Clone, Debug)]
enum Node {
    Leaf { start: u32, end: u32 },
    Split { axis: u8, value: f64, left: u32, right: u32 },
}

/// Immutable after construction; `Sync`, so one index can serve many
/// concurrent queries.
#[derive(Clone, Debug)]
pub struct NeighborIndex {
    points: Vec<[f64; 3]>,
    order: Vec<u32>,
    nodes: Vec<Node>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub dist_sq: f64,
}

impl NeighborIndex {
    pub fn new(points: &[Point3<f64>]) -> Self {
        assert!(points.len() < u32::MAX as usize, "too many points");
        let mut index = Self {
            points: points.iter().map(|p| [p.x, p.y, p.z]).collect(),
            order: (0..points.len() as u32).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            index.build(0, points.len());
        }
        index
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> Point3<f64> {
        let p = self.points[i];
        Point3::new(p[0], p[1], p[2])
    }

    fn build(&mut self, start: usize, end: usize) -> u32 {
        let id = self.nodes.len() as u32;
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf {
                start: start as u32,
                end: end as u32,
            });
            return id;
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in &self.order[start..end] {
            let p = self.points[i as usize];
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let axis = (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .unwrap();
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a as usize][axis].total_cmp(&points[b as usize][axis])
        });
        let value = self.points[self.order[mid] as usize][axis];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id as usize] = Node::Split {
            axis: axis as u8,
            value,
            left,
            right,
        };
        id
    }

    #[inline]
    fn dist_sq(&self, i: u32, q: &[f64; 3]) -> f64 {
        let p = &self.points[i as usize];
        let (dx, dy, dz) = (p[0] - q[0], p[1] - q[1], p[2] - q[2]);
        dx * dx + dy * dy + dz * dz
    }

    /// Closest point; ties go to the lower index.
    pub fn nearest(&self, q: &Point3<f64>) -> Option<Neighbor> {
        if self.points.is_empty() {
            return None;
        }
        let q = [q.x, q.y, q.z];
        let mut best = (f64::INFINITY, u32::MAX);
        self.nearest_in(0, &q, &mut best);
        Some(Neighbor {
            index: best.1 as usize,
            dist_sq: best.0,
        })
    }

    fn nearest_in(&self, node: u32, q: &[f64; 3], best: &mut (f64, u32)) {
        match self.nodes[node as usize] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start as usize..end as usize] {
                    let d = self.dist_sq(i, q);
                    if d < best.0 || (d == best.0 && i < best.1) {
                        *best = (d, i);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis as usize] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.nearest_in(near, q, best);
                if diff * diff <= best.0 {
                    self.nearest_in(far, q, best);
                }
            }
        }
    }

    /// The `k` closest points in ascending distance (ties by index),
    /// optionally skipping one index (the query point itself).
    pub fn k_nearest(&self, q: &Point3<f64>, k: usize, exclude: Option<usize>) -> Vec<Neighbor> {
        let mut found: Vec<(f64, u32)> = Vec::with_capacity(k + 1);
        if k > 0 && !self.points.is_empty() {
            let skip = exclude.map_or(u32::MAX, |e| e as u32);
            self.knn_in(0, &[q.x, q.y, q.z], k, skip, &mut found);
        }
        found
            .into_iter()
            .map(|(d, i)| Neighbor {
                index: i as usize,
                dist_sq: d,
            })
            .collect()
    }

    fn knn_in(&self, node: u32, q: &[f64; 3], k: usize, skip: u32, found: &mut Vec<(f64, u32)>) {
        match self.nodes[node as usize] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start as usize..end as usize] {
                    if i == skip {
                        continue;
                    }
                    let cand = (self.dist_sq(i, q), i);
                    if found.len() == k {
                        let worst = found[k - 1];
                        if cand.0 > worst.0 || (cand.0 == worst.0 && cand.1 > worst.1) {
                            continue;
                        }
                        found.pop();
                    }
                    let pos = found.partition_point(|&(d, j)| d < cand.0 || (d == cand.0 && j < cand.1));
                    found.insert(pos, cand);
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis as usize] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.knn_in(near, q, k, skip, found);
                if found.len() < k || diff * diff <= found[k - 1].0 {
                    self.knn_in(far, q, k, skip, found);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;
    use rand_core::SeedableRng;
    use rand_distr::{Distribution, Uniform};

    fn linear_knn(points: &[Point3<f64>], q: &Point3<f64>, k: usize, exclude: Option<usize>) -> Vec<(f64, usize)> {
        let mut all: Vec<(f64, usize)> = points
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != exclude)
            .map(|(i, p)| ((p - q).norm_squared(), i))
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        all.truncate(k);
        all
    }

    #[test]
    fn matches_linear_scan_on_random_clouds() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let coord = Uniform::new(-500.0, 500.0).unwrap();
        for trial in 0..100 {
            let n = 1 + (trial * 37) % 2000;
            let points: Vec<Point3<f64>> = (0..n)
                .map(|_| Point3::new(coord.sample(&mut rng), coord.sample(&mut rng), coord.sample(&mut rng) * 0.1))
                .collect();
            let index = NeighborIndex::new(&points);
            for _ in 0..20 {
                let q = Point3::new(coord.sample(&mut rng), coord.sample(&mut rng), coord.sample(&mut rng) * 0.1);
                let expect = linear_knn(&points, &q, 1, None)[0];
                let got = index.nearest(&q).unwrap();
                assert_eq!((got.dist_sq, got.index), expect);
                let k = 1 + trial % 17;
                let got: Vec<(f64, usize)> = index.k_nearest(&q, k, None).iter().map(|n| (n.dist_sq, n.index)).collect();
                assert_eq!(got, linear_knn(&points, &q, k, None));
            }
            let self_q = trial % n;
            let got: Vec<(f64, usize)> = index
                .k_nearest(&points[self_q], 8, Some(self_q))
                .iter()
                .map(|n| (n.dist_sq, n.index))
                .collect();
            assert_eq!(got, linear_knn(&points, &points[self_q], 8, Some(self_q)));
        }
    }

    #[test]
    fn duplicates_and_ties_resolve_to_lowest_index() {
        let points = vec![Point3::new(1.0, 0.0, 0.0); 20];
        let index = NeighborIndex::new(&points);
        assert_eq!(index.nearest(&Point3::origin()).unwrap().index, 0);
        let knn: Vec<usize> = index.k_nearest(&Point3::origin(), 3, Some(0)).iter().map(|n| n.index).collect();
        assert_eq!(knn, vec![1, 2, 3]);
    }

    #[test]
    fn empty_index() {
        let index = NeighborIndex::new(&[]);
        assert!(index.nearest(&Point3::origin()).is_none());
        assert!(index.k_nearest(&Point3::origin(), 4, None).is_empty());
    }
}
