//! Static 3-D kd-tree for exact k-nearest-neighbor queries.
//!
//! Exactness is a contract here: results must equal an exhaustive scan
//! under the (squared distance, index) ordering, so pruning keeps the far
//! subtree whenever it could still hold an equal-distance, smaller-index
//! point.

use crate::Scalar;
use std::collections::BinaryHeap;

struct KdNode {
    /// Row into the point array.
    point: u32,
    axis: u8,
    left: i32,
    right: i32,
}

pub struct KdTree<'a> {
    positions: &'a [Scalar],
    nodes: Vec<KdNode>,
    root: i32,
}

#[derive(PartialEq)]
struct Cand {
    d2: Scalar,
    idx: u32,
}

impl Eq for Cand {}

impl PartialOrd for Cand {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Cand {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.d2
            .partial_cmp(&other.d2)
            .expect("finite distance")
            .then(self.idx.cmp(&other.idx))
    }
}

fn coord(positions: &[Scalar], i: u32, axis: usize) -> Scalar {
    positions[3 * i as usize + axis]
}

impl<'a> KdTree<'a> {
    /// `positions` is N×3 row-major; all values must be finite.
    pub fn build(positions: &'a [Scalar]) -> KdTree<'a> {
        let n = positions.len() / 3;
        let mut order: Vec<u32> = (0..n as u32).collect();
        let mut tree = KdTree {
            positions,
            nodes: Vec::with_capacity(n),
            root: -1,
        };
        let root = tree.build_rec(&mut order, 0);
        tree.root = root;
        tree
    }

    fn build_rec(&mut self, rows: &mut [u32], depth: usize) -> i32 {
        if rows.is_empty() {
            return -1;
        }
        let axis = depth % 3;
        let mid = rows.len() / 2;
        // (coordinate, index) keys keep splits deterministic under ties.
        rows.select_nth_unstable_by(mid, |&a, &b| {
            coord(self.positions, a, axis)
                .partial_cmp(&coord(self.positions, b, axis))
                .expect("finite coordinate")
                .then(a.cmp(&b))
        });
        let point = rows[mid];
        let node_at = self.nodes.len();
        self.nodes.push(KdNode {
            point,
            axis: axis as u8,
            left: -1,
            right: -1,
        });
        let (lo, hi) = rows.split_at_mut(mid);
        let left = self.build_rec(lo, depth + 1);
        let right = self.build_rec(&mut hi[1..], depth + 1);
        self.nodes[node_at].left = left;
        self.nodes[node_at].right = right;
        node_at as i32
    }

    /// The k nearest points to `q` under (squared distance, index) order,
    /// nearest first. `k` must not exceed the point count.
    pub fn knn(&self, q: [Scalar; 3], k: usize) -> Vec<u32> {
        let mut heap: BinaryHeap<Cand> = BinaryHeap::with_capacity(k + 1);
        self.search(self.root, q, k, &mut heap);
        let mut got: Vec<Cand> = heap.into_vec();
        got.sort_unstable_by(|a, b| a.cmp(b));
        got.into_iter().map(|c| c.idx).collect()
    }

    fn search(&self, at: i32, q: [Scalar; 3], k: usize, heap: &mut BinaryHeap<Cand>) {
        if at < 0 {
            return;
        }
        let node = &self.nodes[at as usize];
        let i = node.point;
        let dx = coord(self.positions, i, 0) - q[0];
        let dy = coord(self.positions, i, 1) - q[1];
        let dz = coord(self.positions, i, 2) - q[2];
        let cand = Cand {
            d2: dx * dx + dy * dy + dz * dz,
            idx: i,
        };
        if heap.len() < k {
            heap.push(cand);
        } else if let Some(worst) = heap.peek() {
            if cand < *worst {
                heap.pop();
                heap.push(cand);
            }
        }
        let axis = node.axis as usize;
        let delta = q[axis] - coord(self.positions, i, axis);
        let (near, far) = if delta < 0.0 {
            (node.left, node.right)
        } else {
            (node.right, node.left)
        };
        self.search(near, q, k, heap);
        let visit_far = match heap.peek() {
            _ if heap.len() < k => true,
            Some(worst) => delta * delta <= worst.d2,
            None => true,
        };
        if visit_far {
            self.search(far, q, k, heap);
        }
    }
}
