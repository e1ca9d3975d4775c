//! Minimal 3D kd-tree for nearest-neighbor and k-nearest queries.
//!
//! Ties are broken toward the smaller point index so queries are fully
//! deterministic.

use nalgebra::Point3;

#[derive(Debug, Clone)]
struct Node {
    /// Index into the original point slice.
    point: u32,
    axis: u8,
    left: i32,
    right: i32,
}

#[derive(Debug, Clone)]
pub struct KdTree {
    nodes: Vec<Node>,
    points: Vec<Point3<f64>>,
    root: i32,
}

fn sq_dist(a: &Point3<f64>, b: &Point3<f64>) -> f64 {
    (a - b).norm_squared()
}

impl KdTree {
    pub fn build(points: &[Point3<f64>]) -> Self {
        let mut indices: Vec<u32> = (0..points.len() as u32).collect();
        let mut tree = KdTree {
            nodes: Vec::with_capacity(points.len()),
            points: points.to_vec(),
            root: -1,
        };
        let n = indices.len();
        tree.root = tree.build_rec(&mut indices[..], 0, n);
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn build_rec(&mut self, indices: &mut [u32], lo: usize, hi: usize) -> i32 {
        if lo >= hi {
            return -1;
        }
        // split on the widest axis of this subset
        let slice = &indices[lo..hi];
        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        for &i in slice.iter() {
            let p = &self.points[i as usize];
            for a in 0..3 {
                min[a] = min[a].min(p[a]);
                max[a] = max[a].max(p[a]);
            }
        }
        let mut axis = 0usize;
        for a in 1..3 {
            if max[a] - min[a] > max[axis] - min[axis] {
                axis = a;
            }
        }
        let mid = (hi - lo) / 2;
        let points = &self.points;
        indices[lo..hi].select_nth_unstable_by(mid, |&a, &b| {
            let pa = points[a as usize][axis];
            let pb = points[b as usize][axis];
            pa.total_cmp(&pb).then(a.cmp(&b))
        });
        let point = indices[lo + mid];
        let node_idx = self.nodes.len() as i32;
        self.nodes.push(Node {
            point,
            axis: axis as u8,
            left: -1,
            right: -1,
        });
        let left = self.build_rec(indices, lo, lo + mid);
        let right = self.build_rec(indices, lo + mid + 1, hi);
        self.nodes[node_idx as usize].left = left;
        self.nodes[node_idx as usize].right = right;
        node_idx
    }

    /// Index and squared distance of the nearest point, or `None` if empty.
    pub fn nearest(&self, query: &Point3<f64>) -> Option<(usize, f64)> {
        if self.root < 0 {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.nearest_rec(self.root, query, &mut best);
        Some(best)
    }

    fn nearest_rec(&self, node: i32, query: &Point3<f64>, best: &mut (usize, f64)) {
        if node < 0 {
            return;
        }
        let n = &self.nodes[node as usize];
        let idx = n.point as usize;
        let d = sq_dist(query, &self.points[idx]);
        if d < best.1 || (d == best.1 && idx < best.0) {
            *best = (idx, d);
        }
        let axis = n.axis as usize;
        let diff = query[axis] - self.points[idx][axis];
        let (near, far) = if diff <= 0.0 {
            (n.left, n.right)
        } else {
            (n.right, n.left)
        };
        self.nearest_rec(near, query, best);
        if diff * diff <= best.1 {
            self.nearest_rec(far, query, best);
        }
    }

    /// The `k` nearest points, sorted by (squared distance, index).
    pub fn k_nearest(&self, query: &Point3<f64>, k: usize) -> Vec<(usize, f64)> {
        if k == 0 || self.root < 0 {
            return Vec::new();
        }
        // small k: a sorted vec beats a heap
        let mut best: Vec<(usize, f64)> = Vec::with_capacity(k + 1);
        self.k_nearest_rec(self.root, query, k, &mut best);
        best
    }

    fn k_nearest_rec(
        &self,
        node: i32,
        query: &Point3<f64>,
        k: usize,
        best: &mut Vec<(usize, f64)>,
    ) {
        if node < 0 {
            return;
        }
        let n = &self.nodes[node as usize];
        let idx = n.point as usize;
        let d = sq_dist(query, &self.points[idx]);
        let pos = best.partition_point(|&(bi, bd)| bd < d || (bd == d && bi < idx));
        if pos < k {
            best.insert(pos, (idx, d));
            best.truncate(k);
        }
        let axis = n.axis as usize;
        let diff = query[axis] - self.points[idx][axis];
        let (near, far) = if diff <= 0.0 {
            (n.left, n.right)
        } else {
            (n.right, n.left)
        };
        self.k_nearest_rec(near, query, k, best);
        let worst = if best.len() < k {
            f64::INFINITY
        } else {
            best[best.len() - 1].1
        };
        if diff * diff <= worst {
            self.k_nearest_rec(far, query, k, best);
        }
    }
}
