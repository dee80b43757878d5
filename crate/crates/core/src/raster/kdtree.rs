//! Balanced 2-D k-d tree with deterministic tie-breaking.
//!
//! Neighbors are ordered by squared Euclidean distance, then by insertion
//! index, so query results are identical to a sorted linear scan.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

const NONE: u32 = u32::MAX;

#[derive(Debug, Clone)]
struct Node {
    point: u32,
    left: u32,
    right: u32,
    /// 0 splits on x, 1 on y.
    axis: u8,
}

/// One query result: insertion index of the point and its squared distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub dist2: f64,
}

impl Neighbor {
    pub fn distance(&self) -> f64 {
        self.dist2.sqrt()
    }

    fn key_cmp(&self, other: &Self) -> Ordering {
        self.dist2
            .total_cmp(&other.dist2)
            .then(self.index.cmp(&other.index))
    }
}

// Max-heap by (dist2, index) so the worst candidate sits on top.
struct HeapItem(Neighbor);

impl PartialEq for HeapItem {
    fn eq(&self, other: &Self) -> bool {
        self.0.key_cmp(&other.0) == Ordering::Equal
    }
}
impl Eq for HeapItem {}
impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.key_cmp(&other.0)
    }
}

#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<[f64; 2]>,
    nodes: Vec<Node>,
    root: u32,
}

impl KdTree {
    /// Builds a tree over `points`; the position in the slice is the insertion index.
    ///
    /// Coordinates must be finite.
    pub fn build(points: &[[f64; 2]]) -> Self {
        assert!(points.len() < NONE as usize, "too many points for a k-d tree");
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let mut nodes = Vec::with_capacity(points.len());
        let root = build_rec(points, &mut order, 0, &mut nodes);
        Self {
            points: points.to_vec(),
            nodes,
            root,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, index: usize) -> [f64; 2] {
        self.points[index]
    }

    /// The `k` nearest points to `(x, y)`, closest first.
    pub fn nearest(&self, x: f64, y: f64, k: usize) -> Vec<Neighbor> {
        if k == 0 || self.root == NONE {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.knn_rec(self.root, [x, y], k, &mut heap);
        let mut out: Vec<Neighbor> = heap.into_iter().map(|h| h.0).collect();
        out.sort_by(Neighbor::key_cmp);
        out
    }

    /// All points within `radius` (inclusive) of `(x, y)`, closest first.
    pub fn within_radius(&self, x: f64, y: f64, radius: f64) -> Vec<Neighbor> {
        let mut out = Vec::new();
        if self.root != NONE && radius >= 0.0 {
            self.radius_rec(self.root, [x, y], radius * radius, &mut out);
        }
        out.sort_by(Neighbor::key_cmp);
        out
    }

    fn knn_rec(&self, node: u32, q: [f64; 2], k: usize, heap: &mut BinaryHeap<HeapItem>) {
        let n = &self.nodes[node as usize];
        let p = self.points[n.point as usize];
        let cand = Neighbor {
            index: n.point as usize,
            dist2: dist2(p, q),
        };
        if heap.len() < k {
            heap.push(HeapItem(cand));
        } else if cand.key_cmp(&heap.peek().unwrap().0) == Ordering::Less {
            heap.pop();
            heap.push(HeapItem(cand));
        }

        let axis = n.axis as usize;
        let diff = q[axis] - p[axis];
        let (near, far) = if diff < 0.0 { (n.left, n.right) } else { (n.right, n.left) };
        if near != NONE {
            self.knn_rec(near, q, k, heap);
        }
        if far != NONE {
            // Visit on equality: an equal-distance point on the far side may
            // still win on insertion index.
            let plane = diff * diff;
            if heap.len() < k || plane <= heap.peek().unwrap().0.dist2 {
                self.knn_rec(far, q, k, heap);
            }
        }
    }

    fn radius_rec(&self, node: u32, q: [f64; 2], r2: f64, out: &mut Vec<Neighbor>) {
        let n = &self.nodes[node as usize];
        let p = self.points[n.point as usize];
        let d2 = dist2(p, q);
        if d2 <= r2 {
            out.push(Neighbor {
                index: n.point as usize,
                dist2: d2,
            });
        }
        let axis = n.axis as usize;
        let diff = q[axis] - p[axis];
        let (near, far) = if diff < 0.0 { (n.left, n.right) } else { (n.right, n.left) };
        if near != NONE {
            self.radius_rec(near, q, r2, out);
        }
        if far != NONE && diff * diff <= r2 {
            self.radius_rec(far, q, r2, out);
        }
    }
}

#[inline]
fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

fn build_rec(points: &[[f64; 2]], order: &mut [u32], depth: usize, nodes: &mut Vec<Node>) -> u32 {
    if order.is_empty() {
        return NONE;
    }
    let axis = depth % 2;
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        points[a as usize][axis]
            .total_cmp(&points[b as usize][axis])
            .then(a.cmp(&b))
    });
    let pivot = order[mid];
    let id = nodes.len() as u32;
    nodes.push(Node {
        point: pivot,
        left: NONE,
        right: NONE,
        axis: axis as u8,
    });
    let (lo, rest) = order.split_at_mut(mid);
    let hi = &mut rest[1..];
    let left = build_rec(points, lo, depth + 1, nodes);
    let right = build_rec(points, hi, depth + 1, nodes);
    nodes[id as usize].left = left;
    nodes[id as usize].right = right;
    id
}
