//! Exact nearest-neighbor search over small fixed-dimension points.
//!
//! Distances are squared Euclidean accumulated in axis order, the same
//! arithmetic as [`squared_distance`], so indexed and exhaustive searches
//! return bit-identical values. Ties are broken toward the lower point index.

use std::cmp::Ordering;

#[inline]
pub fn squared_distance<const D: usize>(a: &[f64; D], b: &[f64; D]) -> f64 {
    let mut acc = 0.0;
    for k in 0..D {
        let d = a[k] - b[k];
        acc += d * d;
    }
    acc
}

const LEAF_SIZE: usize = 16;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { left: usize, right: usize },
}

#[derive(Debug, Clone)]
pub struct KdTree<const D: usize> {
    points: Vec<[f64; D]>,
    /// Point indices permuted so every leaf owns a contiguous slice.
    order: Vec<usize>,
    /// `points` laid out in `order`, for cache-friendly leaf scans.
    packed: Vec<[f64; D]>,
    nodes: Vec<Node>,
    /// Tight bounding box `(lo, hi)` of every node's points.
    boxes: Vec<([f64; D], [f64; D])>,
}

/// `(squared distance, index)` ordered by distance then index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub dist2: f64,
    pub index: usize,
}

impl Neighbor {
    fn cmp_key(&self, other: &Self) -> Ordering {
        self.dist2.total_cmp(&other.dist2).then(self.index.cmp(&other.index))
    }
}

impl<const D: usize> KdTree<D> {
    pub fn new(points: Vec<[f64; D]>) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::new();
        let mut boxes = Vec::new();
        if !points.is_empty() {
            let n = points.len();
            build(&points, &mut order, 0, n, &mut nodes, &mut boxes);
        }
        let packed = order.iter().map(|&i| points[i]).collect();
        Self { points, order, packed, nodes, boxes }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64; D] {
        &self.points[i]
    }

    /// Closest point, or `None` for an empty tree.
    pub fn nearest(&self, query: &[f64; D]) -> Option<Neighbor> {
        self.knn(query, 1).into_iter().next()
    }

    /// Up to `k` closest points sorted by `(dist2, index)`.
    pub fn knn(&self, query: &[f64; D], k: usize) -> Vec<Neighbor> {
        let mut best: Vec<Neighbor> = Vec::with_capacity(k + 1);
        if k == 0 || self.nodes.is_empty() {
            return best;
        }
        self.search(0, query, k, f64::INFINITY, &mut best);
        best
    }

    /// Like [`KdTree::knn`] but ignores points farther than `sqrt(max_dist2)`.
    pub fn knn_within(&self, query: &[f64; D], k: usize, max_dist2: f64) -> Vec<Neighbor> {
        let mut best: Vec<Neighbor> = Vec::with_capacity(k + 1);
        if k == 0 || self.nodes.is_empty() {
            return best;
        }
        self.search(0, query, k, max_dist2, &mut best);
        best
    }

    /// Squared distance from `query` to node's box. Summed in axis order like
    /// [`squared_distance`], so it never exceeds the distance to any point inside.
    fn box_distance(&self, node: usize, query: &[f64; D]) -> f64 {
        let (lo, hi) = &self.boxes[node];
        let mut acc = 0.0;
        for a in 0..D {
            let gap = if query[a] < lo[a] {
                lo[a] - query[a]
            } else if query[a] > hi[a] {
                query[a] - hi[a]
            } else {
                0.0
            };
            acc += gap * gap;
        }
        acc
    }

    fn search(&self, node: usize, query: &[f64; D], k: usize, limit: f64, best: &mut Vec<Neighbor>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for (slot, p) in self.packed[start..end].iter().enumerate() {
                    let cand = Neighbor { dist2: squared_distance(query, p), index: self.order[start + slot] };
                    if cand.dist2 > limit {
                        continue;
                    }
                    if best.len() == k && cand.cmp_key(&best[k - 1]) != Ordering::Less {
                        continue;
                    }
                    let pos = best.partition_point(|b| b.cmp_key(&cand) == Ordering::Less);
                    best.insert(pos, cand);
                    best.truncate(k);
                }
            }
            Node::Split { left, right } => {
                let (dl, dr) = (self.box_distance(left, query), self.box_distance(right, query));
                let order = if dl <= dr { [(left, dl), (right, dr)] } else { [(right, dr), (left, dl)] };
                for (child, bound) in order {
                    // `<=` keeps equal-distance candidates reachable for the index tie-break.
                    let worst = if best.len() < k { limit } else { best[k - 1].dist2.min(limit) };
                    if bound <= worst {
                        self.search(child, query, k, limit, best);
                    }
                }
            }
        }
    }
}

fn build<const D: usize>(
    points: &[[f64; D]],
    order: &mut [usize],
    start: usize,
    end: usize,
    nodes: &mut Vec<Node>,
    boxes: &mut Vec<([f64; D], [f64; D])>,
) -> usize {
    let id = nodes.len();
    let slice = &mut order[start..end];
    let mut lo = [f64::INFINITY; D];
    let mut hi = [f64::NEG_INFINITY; D];
    for &i in slice.iter() {
        for k in 0..D {
            lo[k] = lo[k].min(points[i][k]);
            hi[k] = hi[k].max(points[i][k]);
        }
    }
    boxes.push((lo, hi));
    if end - start <= LEAF_SIZE {
        nodes.push(Node::Leaf { start, end });
        return id;
    }
    let axis = (0..D)
        .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])).then(b.cmp(&a)))
        .unwrap_or(0);
    if hi[axis] - lo[axis] <= 0.0 {
        // All points coincide.
        nodes.push(Node::Leaf { start, end });
        return id;
    }
    let mid = slice.len() / 2;
    slice.select_nth_unstable_by(mid, |&a, &b| points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b)));
    nodes.push(Node::Leaf { start: 0, end: 0 });
    let left = build(points, order, start, start + mid, nodes, boxes);
    let right = build(points, order, start + mid, end, nodes, boxes);
    nodes[id] = Node::Split { left, right };
    id
}
