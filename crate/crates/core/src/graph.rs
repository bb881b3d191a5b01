//! Superpoint graph over ranked candidates, weighted-sum feature aggregation
//! and farthest point sampling in merged-feature space.
//!
//! Edges join each node to its `k` nearest candidates under location
//! distance plus chamfer distance (directed lists are symmetrized by union).
//! An edge weighs `exp(-(D_l + D_c))`; every node is its own neighbor with
//! weight 1.

use rayon::prelude::*;

use crate::cloud::{PointCloud, Prediction};
use crate::error::{Error, Result};
use crate::partition::dominant_class;
use crate::spatial::{squared_distance, KdTree};

/// Above this many point pairs chamfer distance switches to kd-tree lookups.
pub const CHAMFER_INDEX_PAIRS: usize = 1_000_000;

/// Same switch inside graph construction, where node trees are prebuilt.
const CHAMFER_TREE_PAIRS: usize = 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct SuperpointFeature {
    pub superpoint: usize,
    pub feature: Vec<f64>,
    pub centroid: [f64; 3],
    pub points: Vec<[f64; 3]>,
}

/// Mean feature over the points predicted as the region's dominant predicted
/// class; centroid over the whole region.
pub fn superpoint_feature(
    superpoint: usize,
    region: &[usize],
    cloud: &PointCloud,
    prediction: &Prediction,
) -> Result<SuperpointFeature> {
    let preds = prediction.pred_labels();
    let dominant = dominant_class(region, preds)?;
    let dim = prediction.feature_dim();
    let mut feature = vec![0.0; dim];
    let mut majority = 0usize;
    let mut centroid = [0.0; 3];
    let mut points = Vec::with_capacity(region.len());
    for &i in region {
        let pos = cloud.points()[i].position;
        points.push(pos);
        for a in 0..3 {
            centroid[a] += pos[a];
        }
        if preds[i] == dominant {
            majority += 1;
            for (f, x) in feature.iter_mut().zip(prediction.feature_row(i)) {
                *f += x;
            }
        }
    }
    for f in &mut feature {
        *f /= majority as f64;
    }
    for c in &mut centroid {
        *c /= region.len() as f64;
    }
    Ok(SuperpointFeature { superpoint, feature, centroid, points })
}

/// Euclidean distance between centroids.
pub fn location_distance(a: &SuperpointFeature, b: &SuperpointFeature) -> f64 {
    squared_distance(&a.centroid, &b.centroid).sqrt()
}

fn check_sets(a: &[[f64; 3]], b: &[[f64; 3]]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("chamfer distance of an empty point set"));
    }
    Ok(())
}

/// Mean over `from` of the squared distance to the nearest point of `to`, exhaustive.
fn directed_brute(from: &[[f64; 3]], to: &[[f64; 3]]) -> f64 {
    let sum: f64 = from
        .iter()
        .map(|p| to.iter().map(|q| squared_distance(p, q)).fold(f64::INFINITY, f64::min))
        .sum();
    sum / from.len() as f64
}

fn directed_indexed(from: &[[f64; 3]], to: &KdTree<3>) -> f64 {
    let sum: f64 = from
        .iter()
        .map(|p| to.nearest(p).map_or(f64::INFINITY, |n| n.dist2))
        .sum();
    sum / from.len() as f64
}

/// Symmetric chamfer distance with squared Euclidean point distances, exhaustive search.
pub fn chamfer_distance_brute(a: &[[f64; 3]], b: &[[f64; 3]]) -> Result<f64> {
    check_sets(a, b)?;
    Ok(directed_brute(a, b) + directed_brute(b, a))
}

/// Same value as [`chamfer_distance_brute`], bit for bit, using kd-tree lookups.
pub fn chamfer_distance_indexed(a: &[[f64; 3]], b: &[[f64; 3]]) -> Result<f64> {
    check_sets(a, b)?;
    let ta = KdTree::new(a.to_vec());
    let tb = KdTree::new(b.to_vec());
    Ok(directed_indexed(a, &tb) + directed_indexed(b, &ta))
}

pub fn chamfer_distance(a: &[[f64; 3]], b: &[[f64; 3]]) -> Result<f64> {
    if a.len().saturating_mul(b.len()) > CHAMFER_INDEX_PAIRS {
        chamfer_distance_indexed(a, b)
    } else {
        chamfer_distance_brute(a, b)
    }
}

/// `exp(-(location + chamfer))`, floored at the smallest positive normal
/// float so far-apart pairs keep a positive weight.
pub fn edge_weight(location: f64, chamfer: f64) -> Result<f64> {
    if !(location.is_finite() && chamfer.is_finite() && location >= 0.0 && chamfer >= 0.0) {
        return Err(Error::invalid(format!("edge distances must be finite and nonnegative: ({location}, {chamfer})")));
    }
    Ok((-(location + chamfer)).exp().max(f64::MIN_POSITIVE))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuperpointGraph {
    nodes: Vec<SuperpointFeature>,
    /// Per node, `(neighbor, weight)` sorted by neighbor; self excluded.
    adjacency: Vec<Vec<(usize, f64)>>,
}

impl SuperpointGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[SuperpointFeature] {
        &self.nodes
    }

    /// Neighbors of `i` other than `i` itself.
    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.adjacency[i]
    }

    /// `N_i` including `i` with weight 1.
    pub fn neighborhood(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        std::iter::once((i, 1.0)).chain(self.adjacency[i].iter().copied())
    }

    pub fn weight(&self, i: usize, j: usize) -> Option<f64> {
        if i == j {
            return Some(1.0);
        }
        self.adjacency[i]
            .binary_search_by_key(&j, |&(n, _)| n)
            .ok()
            .map(|p| self.adjacency[i][p].1)
    }

    pub fn features(&self) -> Vec<Vec<f64>> {
        self.nodes.iter().map(|n| n.feature.clone()).collect()
    }

    pub fn num_edges(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }
}

/// Symmetrized `k`-nearest-neighbor graph under location plus chamfer distance.
/// `k` is clamped to `nodes - 1`.
pub fn build_graph(candidates: Vec<SuperpointFeature>, k: usize) -> Result<SuperpointGraph> {
    let n = candidates.len();
    if n == 0 {
        return Err(Error::invalid("graph needs at least one candidate"));
    }
    let dim = candidates[0].feature.len();
    if candidates.iter().any(|c| c.feature.len() != dim || c.points.is_empty()) {
        return Err(Error::invalid("candidates must share feature dimension and be non-empty"));
    }
    let k = k.min(n - 1);

    // One tree per node serves all of its pairs; indexed and exhaustive
    // chamfer agree bit for bit.
    let trees: Vec<KdTree<3>> = candidates.par_iter().map(|c| KdTree::new(c.points.clone())).collect();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let distances: Vec<(f64, f64)> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let (a, b) = (&candidates[i].points, &candidates[j].points);
            let dl = location_distance(&candidates[i], &candidates[j]);
            let dc = if a.len() * b.len() > CHAMFER_TREE_PAIRS {
                directed_indexed(a, &trees[j]) + directed_indexed(b, &trees[i])
            } else {
                directed_brute(a, b) + directed_brute(b, a)
            };
            (dl, dc)
        })
        .collect();
    let mut matrix = vec![(0.0, 0.0); n * n];
    for (&(i, j), &d) in pairs.iter().zip(&distances) {
        matrix[i * n + j] = d;
        matrix[j * n + i] = d;
    }

    let mut linked = vec![vec![false; n]; n];
    for i in 0..n {
        let mut others: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| {
                let (dl, dc) = matrix[i * n + j];
                (dl + dc, j)
            })
            .collect();
        others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, j) in others.iter().take(k) {
            linked[i][j] = true;
            linked[j][i] = true;
        }
    }
    let mut adjacency = vec![Vec::new(); n];
    for i in 0..n {
        for j in 0..n {
            if linked[i][j] {
                let (dl, dc) = matrix[i * n + j];
                adjacency[i].push((j, edge_weight(dl, dc)?));
            }
        }
    }
    Ok(SuperpointGraph { nodes: candidates, adjacency })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggNodes {
    All,
    /// The `n` nodes with the highest acquisition score.
    Top(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AggregateOptions {
    pub rounds: usize,
    pub nodes: AggNodes,
    /// Divide each merged feature by the neighborhood's total weight.
    pub normalize: bool,
}

impl Default for AggregateOptions {
    fn default() -> Self {
        Self { rounds: 1, nodes: AggNodes::All, normalize: false }
    }
}

/// Indices of the aggregation nodes, ascending.
pub fn aggregation_nodes(scores: &[f64], nodes: AggNodes) -> Vec<usize> {
    match nodes {
        AggNodes::All => (0..scores.len()).collect(),
        AggNodes::Top(count) => {
            let mut idx: Vec<usize> = (0..scores.len()).collect();
            idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
            idx.truncate(count);
            idx.sort_unstable();
            idx
        }
    }
}

/// Weighted-sum aggregation, repeated `rounds` times. Nodes outside the
/// aggregation set keep their features. `scores` ranks nodes for [`AggNodes::Top`].
pub fn aggregate(
    graph: &SuperpointGraph,
    features: &[Vec<f64>],
    scores: &[f64],
    opts: &AggregateOptions,
) -> Result<Vec<Vec<f64>>> {
    if opts.rounds == 0 {
        return Err(Error::invalid("aggregation needs at least one round"));
    }
    if features.len() != graph.len() || scores.len() != graph.len() {
        return Err(Error::invalid("feature/score count does not match graph"));
    }
    let mut is_agg = vec![false; graph.len()];
    for i in aggregation_nodes(scores, opts.nodes) {
        is_agg[i] = true;
    }
    let mut current = features.to_vec();
    for _ in 0..opts.rounds {
        current = (0..graph.len())
            .into_par_iter()
            .map(|i| {
                if !is_agg[i] {
                    return current[i].clone();
                }
                let mut out = vec![0.0; current[i].len()];
                let mut total = 0.0;
                for (j, w) in graph.neighborhood(i) {
                    total += w;
                    for (o, f) in out.iter_mut().zip(&current[j]) {
                        *o += w * f;
                    }
                }
                if opts.normalize {
                    for o in &mut out {
                        *o /= total;
                    }
                }
                out
            })
            .collect();
    }
    Ok(current)
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Greedy farthest point sampling from `start`: each step adds the unselected
/// row with the largest distance to its nearest selected row, lowest index on ties.
pub fn fps_select(features: &[Vec<f64>], count: usize, start: usize) -> Result<Vec<usize>> {
    let n = features.len();
    if count == 0 || count > n {
        return Err(Error::invalid(format!("cannot select {count} of {n} rows")));
    }
    if start >= n {
        return Err(Error::invalid(format!("start index {start} out of range")));
    }
    let mut selected = vec![false; n];
    let mut order = Vec::with_capacity(count);
    let mut min_dist = vec![f64::INFINITY; n];
    let mut next = start;
    loop {
        selected[next] = true;
        order.push(next);
        if order.len() == count {
            break;
        }
        for (i, row) in features.iter().enumerate() {
            if !selected[i] {
                min_dist[i] = min_dist[i].min(euclidean(row, &features[next]));
            }
        }
        let mut best: Option<usize> = None;
        for i in 0..n {
            if !selected[i] && best.is_none_or(|b| min_dist[i] > min_dist[b]) {
                best = Some(i);
            }
        }
        next = best.expect("count <= n leaves an unselected row");
    }
    Ok(order)
}

/// Which nodes FPS picks from when only some nodes are aggregated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FpsScope {
    AllNodes,
    AggregationNodes,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphParams {
    pub k: usize,
    pub aggregate: AggregateOptions,
    /// Candidate pool size is `pool_factor * batch`.
    pub pool_factor: usize,
    pub fps_scope: FpsScope,
}

impl Default for GraphParams {
    fn default() -> Self {
        Self { k: 5, aggregate: AggregateOptions::default(), pool_factor: 3, fps_scope: FpsScope::AllNodes }
    }
}

/// Graph reasoning over ranked candidates (`scores` aligned with `candidates`,
/// highest first is not required). Returns up to `batch` candidate positions in
/// selection order, starting from the highest-scoring candidate.
pub fn select_diverse(
    candidates: Vec<SuperpointFeature>,
    scores: &[f64],
    batch: usize,
    params: &GraphParams,
) -> Result<Vec<usize>> {
    if candidates.len() != scores.len() {
        return Err(Error::invalid("scores must align with candidates"));
    }
    let graph = build_graph(candidates, params.k)?;
    let merged = aggregate(&graph, &graph.features(), scores, &params.aggregate)?;
    let pool: Vec<usize> = match params.fps_scope {
        FpsScope::AllNodes => (0..graph.len()).collect(),
        FpsScope::AggregationNodes => aggregation_nodes(scores, params.aggregate.nodes),
    };
    let rows: Vec<Vec<f64>> = pool.iter().map(|&i| merged[i].clone()).collect();
    let start = pool
        .iter()
        .enumerate()
        .max_by(|a, b| scores[*a.1].total_cmp(&scores[*b.1]).then(b.0.cmp(&a.0)))
        .map(|(pos, _)| pos)
        .ok_or_else(|| Error::invalid("no nodes to sample from"))?;
    let picked = fps_select(&rows, batch.min(rows.len()), start)?;
    Ok(picked.into_iter().map(|p| pool[p]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::Point;
    use proptest::prelude::*;

    const TOL: f64 = 1e-6;

    fn node(id: usize, feature: Vec<f64>, points: Vec<[f64; 3]>) -> SuperpointFeature {
        let n = points.len() as f64;
        let mut centroid = [0.0; 3];
        for p in &points {
            for a in 0..3 {
                centroid[a] += p[a] / n;
            }
        }
        SuperpointFeature { superpoint: id, feature, centroid, points }
    }

    fn prediction(labels: &[usize], feats: &[[f64; 2]]) -> Prediction {
        let mut probs = Vec::new();
        for &l in labels {
            probs.extend((0..2).map(|c| if c == l { 1.0 } else { 0.0 }));
        }
        Prediction::new(2, probs, 2, feats.iter().flatten().copied().collect()).unwrap()
    }

    fn line_cloud(n: usize) -> PointCloud {
        let pts = (0..n).map(|i| Point { position: [i as f64, 0.0, 0.0], color: [0.0; 3], gt_label: 0 }).collect();
        PointCloud::new(pts, 2).unwrap()
    }

    #[test]
    fn feature_over_full_pure_region() {
        let f = superpoint_feature(0, &[0, 1], &line_cloud(2), &prediction(&[0, 0], &[[1.0, 0.0], [3.0, 0.0]])).unwrap();
        assert_eq!(f.feature, vec![2.0, 0.0]);
        assert_eq!(f.centroid, [0.5, 0.0, 0.0]);
    }

    #[test]
    fn feature_excludes_minority() {
        let pred = prediction(&[1, 1, 0], &[[1.0, 1.0], [3.0, 1.0], [100.0, 100.0]]);
        let f = superpoint_feature(0, &[0, 1, 2], &line_cloud(3), &pred).unwrap();
        assert_eq!(f.feature, vec![2.0, 1.0]);
        let single = superpoint_feature(0, &[2], &line_cloud(3), &pred).unwrap();
        assert_eq!(single.feature, vec![100.0, 100.0]);
        assert!(superpoint_feature(0, &[], &line_cloud(3), &pred).is_err());
    }

    #[test]
    fn location_examples() {
        let a = node(0, vec![], vec![[0.0; 3]]);
        let b = node(1, vec![], vec![[3.0, 4.0, 0.0]]);
        assert_eq!(location_distance(&a, &a), 0.0);
        assert_eq!(location_distance(&a, &b), 5.0);
        assert_eq!(location_distance(&b, &a), 5.0);
    }

    #[test]
    fn chamfer_examples() {
        let a = [[0.0, 0.0, 0.0]];
        assert_eq!(chamfer_distance(&a, &a).unwrap(), 0.0);
        assert!((chamfer_distance(&a, &[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]).unwrap() - 2.0).abs() < TOL);
        assert!((chamfer_distance(&a, &[[2.0, 0.0, 0.0]]).unwrap() - 8.0).abs() < TOL);
        assert!(chamfer_distance(&a, &[]).is_err());
    }

    #[test]
    fn edge_weight_examples() {
        assert_eq!(edge_weight(0.0, 0.0).unwrap(), 1.0);
        assert!((edge_weight(1.0, 2.0).unwrap() - 0.049787).abs() < TOL);
        assert!(edge_weight(1.0, 0.0).unwrap() > edge_weight(2.0, 0.0).unwrap());
        assert!(edge_weight(5000.0, 0.0).unwrap() > 0.0);
        assert!(edge_weight(-1.0, 0.0).is_err());
        assert!(edge_weight(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn single_node_graph() {
        let g = build_graph(vec![node(0, vec![1.0], vec![[0.0; 3]])], 5).unwrap();
        assert_eq!(g.neighborhood(0).collect::<Vec<_>>(), vec![(0, 1.0)]);
    }

    #[test]
    fn chain_k1_graph() {
        let nodes = vec![
            node(0, vec![0.0], vec![[0.0; 3]]),
            node(1, vec![0.0], vec![[1.0, 0.0, 0.0]]),
            node(2, vec![0.0], vec![[3.0, 0.0, 0.0]]),
        ];
        let g = build_graph(nodes, 1).unwrap();
        // Singleton chamfer is 2d^2, so D(0,1) = 3, D(1,2) = 10, D(0,2) = 21.
        // Directed: 0->1, 1->0, 2->1. Union: {0-1, 1-2}.
        assert_eq!(g.neighbors(0).iter().map(|e| e.0).collect::<Vec<_>>(), vec![1]);
        assert_eq!(g.neighbors(1).iter().map(|e| e.0).collect::<Vec<_>>(), vec![0, 2]);
        assert_eq!(g.neighbors(2).iter().map(|e| e.0).collect::<Vec<_>>(), vec![1]);
        assert!((g.weight(0, 1).unwrap() - (-3.0f64).exp()).abs() < 1e-15);
        assert!((g.weight(1, 2).unwrap() - (-10.0f64).exp()).abs() < 1e-15);
        assert_eq!(g.weight(0, 2), None);
    }

    #[test]
    fn aggregate_examples() {
        let iso = build_graph(vec![node(0, vec![1.0, 2.0], vec![[0.0; 3]])], 0).unwrap();
        let out = aggregate(&iso, &iso.features(), &[0.0], &AggregateOptions::default()).unwrap();
        assert_eq!(out, vec![vec![1.0, 2.0]]);

        // D_l = D_c/4 when one point each: place at distance d with d + d^2*2 = ln 2.
        let d = (-1.0 + (1.0 + 8.0 * 2f64.ln()).sqrt()) / 4.0;
        let g = build_graph(
            vec![node(0, vec![1.0, 0.0], vec![[0.0; 3]]), node(1, vec![0.0, 2.0], vec![[d, 0.0, 0.0]])],
            1,
        )
        .unwrap();
        assert!((g.weight(0, 1).unwrap() - 0.5).abs() < 1e-12);
        let out = aggregate(&g, &g.features(), &[1.0, 0.0], &AggregateOptions::default()).unwrap();
        assert!((out[0][0] - 1.0).abs() < 1e-12 && (out[0][1] - 1.0).abs() < 1e-12);

        let zeros = vec![vec![0.0, 0.0]; 2];
        assert_eq!(aggregate(&g, &zeros, &[1.0, 0.0], &AggregateOptions::default()).unwrap(), zeros);

        // Only node 0 aggregates; node 1 keeps its own feature.
        let top = AggregateOptions { nodes: AggNodes::Top(1), ..Default::default() };
        let out = aggregate(&g, &g.features(), &[1.0, 0.0], &top).unwrap();
        assert_eq!(out[1], vec![0.0, 2.0]);

        let norm = AggregateOptions { normalize: true, ..Default::default() };
        let out = aggregate(&g, &g.features(), &[1.0, 0.0], &norm).unwrap();
        assert!((out[0][0] - 1.0 / 1.5).abs() < 1e-12);

        assert!(aggregate(&g, &g.features(), &[1.0, 0.0], &AggregateOptions { rounds: 0, ..Default::default() }).is_err());
    }

    #[test]
    fn fps_examples() {
        let rows: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64]).collect();
        assert_eq!(fps_select(&rows, 3, 0).unwrap(), vec![0, 3, 1]);
        let mut all = fps_select(&rows, 4, 2).unwrap();
        all.sort();
        assert_eq!(all, vec![0, 1, 2, 3]);
        assert!(fps_select(&rows, 0, 0).is_err());
        assert!(fps_select(&rows, 5, 0).is_err());
        assert!(fps_select(&rows, 2, 4).is_err());
    }

    #[test]
    fn fps_skips_duplicates_of_selected() {
        let rows = vec![vec![0.0], vec![0.0], vec![5.0], vec![5.0], vec![2.0]];
        assert_eq!(fps_select(&rows, 3, 0).unwrap(), vec![0, 2, 4]);
        // Once distinct rows run out the duplicates follow.
        assert_eq!(fps_select(&rows, 5, 0).unwrap(), vec![0, 2, 4, 1, 3]);
    }

    #[test]
    fn select_diverse_clamps_to_pool() {
        let nodes: Vec<SuperpointFeature> = (0..3).map(|i| node(i, vec![i as f64], vec![[i as f64, 0.0, 0.0]])).collect();
        let picked = select_diverse(nodes, &[0.1, 0.9, 0.5], 10, &GraphParams::default()).unwrap();
        assert_eq!(picked.len(), 3);
        assert_eq!(picked[0], 1);
    }

    fn arb_set() -> impl Strategy<Value = Vec<[f64; 3]>> {
        prop::collection::vec(prop::array::uniform3(0.0..10.0f64), 1..30)
    }

    proptest! {
        #[test]
        fn chamfer_symmetric_and_indexed_agrees(a in arb_set(), b in arb_set()) {
            let ab = chamfer_distance_brute(&a, &b).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, chamfer_distance_brute(&b, &a).unwrap());
            prop_assert_eq!(ab.to_bits(), chamfer_distance_indexed(&a, &b).unwrap().to_bits());
            prop_assert_eq!(chamfer_distance(&a, &a).unwrap(), 0.0);
        }

        #[test]
        fn graph_is_symmetric_with_positive_weights(
            sets in prop::collection::vec(arb_set(), 1..12),
            k in 0usize..6,
        ) {
            let nodes: Vec<SuperpointFeature> = sets.into_iter().enumerate().map(|(i, s)| node(i, vec![i as f64], s)).collect();
            let g = build_graph(nodes, k).unwrap();
            for i in 0..g.len() {
                prop_assert!(g.neighbors(i).len() >= k.min(g.len() - 1));
                for &(j, w) in g.neighbors(i) {
                    prop_assert!(w > 0.0 && w <= 1.0);
                    prop_assert_eq!(g.weight(j, i), Some(w));
                }
            }
        }

        #[test]
        fn aggregate_is_linear(
            sets in prop::collection::vec(arb_set(), 2..8),
            alpha in -2.0..2.0f64,
            beta in -2.0..2.0f64,
            seed in 0u64..1000,
        ) {
            let n = sets.len();
            let nodes: Vec<SuperpointFeature> = sets.into_iter().enumerate().map(|(i, s)| node(i, vec![0.0; 3], s)).collect();
            let g = build_graph(nodes, 2).unwrap();
            let f: Vec<Vec<f64>> = (0..n).map(|i| (0..3).map(|d| ((seed as usize + i * 7 + d) % 11) as f64).collect()).collect();
            let h: Vec<Vec<f64>> = (0..n).map(|i| (0..3).map(|d| ((seed as usize * 3 + i + d * 5) % 13) as f64 - 6.0).collect()).collect();
            let mix: Vec<Vec<f64>> = f.iter().zip(&h).map(|(a, b)| a.iter().zip(b).map(|(x, y)| alpha * x + beta * y).collect()).collect();
            let scores = vec![0.0; n];
            let opts = AggregateOptions { rounds: 2, ..Default::default() };
            let af = aggregate(&g, &f, &scores, &opts).unwrap();
            let ah = aggregate(&g, &h, &scores, &opts).unwrap();
            let am = aggregate(&g, &mix, &scores, &opts).unwrap();
            for i in 0..n {
                for d in 0..3 {
                    let expect = alpha * af[i][d] + beta * ah[i][d];
                    prop_assert!((am[i][d] - expect).abs() <= 1e-9 * (1.0 + expect.abs()));
                }
            }
        }
    }

    #[test]
    fn shared_neighborhoods_merge_identically() {
        // Nodes 0 and 1 have identical point sets, so they see the same neighbors with the same weights.
        let shape = vec![[0.0, 0.0, 0.0], [0.5, 0.0, 0.0]];
        let nodes = vec![
            node(0, vec![1.0, 1.0], shape.clone()),
            node(1, vec![1.0, 1.0], shape),
            node(2, vec![4.0, 0.0], vec![[1.0, 1.0, 0.0]]),
        ];
        let g = build_graph(nodes, 2).unwrap();
        let out = aggregate(&g, &g.features(), &[0.0; 3], &AggregateOptions::default()).unwrap();
        assert_eq!(out[0], out[1]);
    }
}
