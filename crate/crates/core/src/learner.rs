//! Lightweight segmentation learners behind a train/predict seam.
//!
//! `Knn` votes among the `k` nearest labeled points in normalized
//! position + color space with add-one smoothing. `NoisyOracle` ignores the
//! labeled set and answers from ground truth, correct with probability `rho`.
//! Both emit per-point features `probs ++ normalized position ++ color`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cloud::{PointCloud, Prediction};
use crate::error::{Error, Result};
use crate::labeling::LabeledRegion;
use crate::spatial::KdTree;

/// Add-one smoothing for neighbor votes.
pub const KNN_SMOOTHING: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LearnerKind {
    Knn { k: usize },
    NoisyOracle { rho: f64, c_hi: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearnerSpec {
    pub kind: LearnerKind,
    pub seed: u64,
}

impl Default for LearnerSpec {
    fn default() -> Self {
        Self { kind: LearnerKind::Knn { k: 5 }, seed: 0 }
    }
}

impl LearnerSpec {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        match self.kind {
            LearnerKind::Knn { k: 0 } => Err(Error::config("learner.k must be at least 1")),
            LearnerKind::NoisyOracle { rho, .. } if !(0.0..=1.0).contains(&rho) => {
                Err(Error::config("learner.rho must lie in [0, 1]"))
            }
            LearnerKind::NoisyOracle { c_hi, .. }
                if !(c_hi > 1.0 / num_classes as f64 && c_hi <= 1.0) =>
            {
                Err(Error::config(format!("learner.c_hi must lie in (1/{num_classes}, 1]")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Model {
    Knn { k: usize, num_classes: usize, tree: KdTree<6>, labels: Vec<usize> },
    NoisyOracle { rho: f64, c_hi: f64, seed: u64, num_classes: usize },
}

/// Normalized position followed by color.
fn geometry_rows(cloud: &PointCloud) -> Vec<[f64; 6]> {
    cloud
        .normalized_positions()
        .into_iter()
        .zip(cloud.points())
        .map(|(p, pt)| [p[0], p[1], p[2], pt.color[0], pt.color[1], pt.color[2]])
        .collect()
}

pub fn train(spec: &LearnerSpec, cloud: &PointCloud, labeled: &[LabeledRegion]) -> Result<Model> {
    let num_classes = cloud.num_classes();
    spec.validate(num_classes)?;
    match spec.kind {
        LearnerKind::Knn { k } => {
            let geometry = geometry_rows(cloud);
            let mut owned: Vec<(usize, usize)> =
                labeled.iter().flat_map(|r| r.points.iter().map(move |&p| (p, r.class))).collect();
            if owned.is_empty() {
                return Err(Error::invalid("knn learner needs at least one labeled point"));
            }
            // Tree indices follow point ids, so distance ties go to the lower point id.
            owned.sort_unstable();
            let refs = owned.iter().map(|&(p, _)| geometry[p]).collect();
            let labels = owned.iter().map(|&(_, c)| c).collect();
            Ok(Model::Knn { k, num_classes, tree: KdTree::new(refs), labels })
        }
        LearnerKind::NoisyOracle { rho, c_hi } => Ok(Model::NoisyOracle { rho, c_hi, seed: spec.seed, num_classes }),
    }
}

fn vote_row(votes: impl Iterator<Item = usize>, num_classes: usize) -> Vec<f64> {
    let mut row = vec![KNN_SMOOTHING; num_classes];
    let mut n = 0usize;
    for c in votes {
        row[c] += 1.0;
        n += 1;
    }
    let total = n as f64 + num_classes as f64 * KNN_SMOOTHING;
    row.iter_mut().for_each(|v| *v /= total);
    row
}

fn assemble(rows: Vec<Vec<f64>>, geometry: &[[f64; 6]], num_classes: usize) -> Result<Prediction> {
    let mut probs = Vec::with_capacity(rows.len() * num_classes);
    let dim = num_classes + 6;
    let mut features = Vec::with_capacity(rows.len() * dim);
    for (row, g) in rows.iter().zip(geometry) {
        probs.extend_from_slice(row);
        features.extend_from_slice(row);
        features.extend_from_slice(g);
    }
    Prediction::new(num_classes, probs, dim, features)
}

pub fn predict(model: &Model, cloud: &PointCloud) -> Result<Prediction> {
    let num_classes = cloud.num_classes();
    let geometry = geometry_rows(cloud);
    let rows: Vec<Vec<f64>> = match model {
        Model::Knn { k, num_classes: c, tree, labels } => {
            if *c != num_classes {
                return Err(Error::invalid("model and cloud disagree on the number of classes"));
            }
            geometry
                .par_iter()
                .map(|g| vote_row(tree.knn(g, *k).iter().map(|n| labels[n.index]), num_classes))
                .collect()
        }
        Model::NoisyOracle { rho, c_hi, seed, num_classes: c } => {
            if *c != num_classes {
                return Err(Error::invalid("model and cloud disagree on the number of classes"));
            }
            cloud
                .points()
                .par_iter()
                .enumerate()
                .map(|(i, p)| oracle_row(p.gt_label, num_classes, *rho, *c_hi, *seed, i as u64))
                .collect()
        }
    };
    assemble(rows, &geometry, num_classes)
}

/// Knn learner for a labeled set that only grows.
///
/// Each point keeps its `k` nearest labeled points as `(dist2, point id)`.
/// An update searches only the newly labeled points and merges, which gives
/// exactly the prediction of a full [`train`] and [`predict`] on all regions.
#[derive(Debug, Clone)]
pub struct IncrementalKnn {
    k: usize,
    num_classes: usize,
    geometry: Vec<[f64; 6]>,
    labels: Vec<Option<usize>>,
    neighbors: Vec<Vec<(f64, usize)>>,
    consumed: usize,
}

impl IncrementalKnn {
    pub fn new(k: usize, cloud: &PointCloud) -> Result<Self> {
        if k == 0 {
            return Err(Error::config("learner.k must be at least 1"));
        }
        Ok(Self {
            k,
            num_classes: cloud.num_classes(),
            geometry: geometry_rows(cloud),
            labels: vec![None; cloud.len()],
            neighbors: vec![Vec::new(); cloud.len()],
            consumed: 0,
        })
    }

    /// Absorbs `labeled[n..]`, where `n` is the length seen by the previous call.
    pub fn update(&mut self, labeled: &[LabeledRegion]) -> Result<()> {
        if labeled.len() < self.consumed {
            return Err(Error::invalid("labeled regions can only be appended"));
        }
        let mut fresh: Vec<usize> = Vec::new();
        for r in &labeled[self.consumed..] {
            for &p in &r.points {
                if p >= self.labels.len() || r.class >= self.num_classes {
                    return Err(Error::invalid("labeled region does not fit the cloud"));
                }
                if self.labels[p].replace(r.class).is_some() {
                    return Err(Error::invalid(format!("point {p} labeled twice")));
                }
                fresh.push(p);
            }
        }
        self.consumed = labeled.len();
        if fresh.is_empty() {
            return Ok(());
        }
        fresh.sort_unstable();
        let tree = KdTree::new(fresh.iter().map(|&p| self.geometry[p]).collect());
        let k = self.k;
        self.neighbors.par_iter_mut().zip(self.geometry.par_iter()).for_each(|(list, g)| {
            // A full list only admits points no farther than its current last entry.
            let limit = if list.len() == k { list[k - 1].0 } else { f64::INFINITY };
            list.extend(tree.knn_within(g, k, limit).iter().map(|n| (n.dist2, fresh[n.index])));
            list.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            list.truncate(k);
        });
        Ok(())
    }

    pub fn predict(&self) -> Result<Prediction> {
        if self.consumed == 0 || self.labels.iter().all(Option::is_none) {
            return Err(Error::invalid("knn learner needs at least one labeled point"));
        }
        let rows = self
            .neighbors
            .par_iter()
            .map(|list| vote_row(list.iter().map(|&(_, p)| self.labels[p].expect("neighbor is labeled")), self.num_classes))
            .collect();
        assemble(rows, &self.geometry, self.num_classes)
    }
}

fn oracle_row(gt: usize, num_classes: usize, rho: f64, c_hi: f64, seed: u64, point: u64) -> Vec<f64> {
    if num_classes == 1 {
        return vec![1.0];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(point);
    let top = if rng.random::<f64>() < rho {
        gt
    } else {
        let wrong = rng.random_range(0..num_classes - 1);
        if wrong >= gt { wrong + 1 } else { wrong }
    };
    let rest = (1.0 - c_hi) / (num_classes - 1) as f64;
    (0..num_classes).map(|c| if c == top { c_hi } else { rest }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::Point;

    fn cloud(rows: &[([f64; 3], usize)], c: usize) -> PointCloud {
        let pts = rows.iter().map(|&(position, gt_label)| Point { position, color: [0.0; 3], gt_label }).collect();
        PointCloud::new(pts, c).unwrap()
    }

    fn region(points: Vec<usize>, class: usize) -> LabeledRegion {
        LabeledRegion { superpoint: 0, points, class }
    }

    #[test]
    fn knn_laplace_example() {
        let c = cloud(&[([0.0; 3], 0), ([10.0, 0.0, 0.0], 1), ([1.0, 0.0, 0.0], 0)], 2);
        let spec = LearnerSpec { kind: LearnerKind::Knn { k: 1 }, seed: 0 };
        let model = train(&spec, &c, &[region(vec![0], 0), region(vec![1], 1)]).unwrap();
        let pred = predict(&model, &c).unwrap();
        let row = pred.prob_row(2);
        assert!((row[0] - 2.0 / 3.0).abs() < 1e-12 && (row[1] - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(pred.feature_dim(), 8);
        // Labeled points predict their own label with k = 1.
        assert_eq!(&pred.pred_labels()[..2], &[0, 1]);
    }

    #[test]
    fn knn_single_reference_and_empty() {
        let c = cloud(&[([0.0; 3], 1), ([1.0; 3], 0)], 2);
        let spec = LearnerSpec { kind: LearnerKind::Knn { k: 3 }, seed: 0 };
        let model = train(&spec, &c, &[region(vec![0], 1)]).unwrap();
        match &model {
            Model::Knn { tree, .. } => assert_eq!(tree.len(), 1),
            _ => unreachable!(),
        }
        assert_eq!(predict(&model, &c).unwrap().pred_labels(), &[1, 1]);
        assert!(train(&spec, &c, &[]).is_err());
    }

    #[test]
    fn noisy_oracle_limits() {
        let rows: Vec<([f64; 3], usize)> = (0..300).map(|i| ([i as f64, 0.0, 0.0], i % 3)).collect();
        let c = cloud(&rows, 3);
        let perfect = LearnerSpec { kind: LearnerKind::NoisyOracle { rho: 1.0, c_hi: 0.9 }, seed: 4 };
        let pred = predict(&train(&perfect, &c, &[]).unwrap(), &c).unwrap();
        assert_eq!(pred.pred_labels(), c.gt_labels().as_slice());
        let row = pred.prob_row(0);
        assert!((row[0] - 0.9).abs() < 1e-12 && (row[1] - 0.05).abs() < 1e-12 && (row[2] - 0.05).abs() < 1e-12);

        let adversarial = LearnerSpec { kind: LearnerKind::NoisyOracle { rho: 0.0, c_hi: 0.9 }, seed: 4 };
        let pred = predict(&train(&adversarial, &c, &[]).unwrap(), &c).unwrap();
        assert!(pred.pred_labels().iter().zip(c.gt_labels()).all(|(p, g)| *p != g));
    }

    #[test]
    fn noisy_oracle_accuracy_tracks_rho() {
        let rows: Vec<([f64; 3], usize)> = (0..20_000).map(|i| ([i as f64, 0.0, 0.0], i % 4)).collect();
        let c = cloud(&rows, 4);
        for rho in [0.3, 0.75] {
            let spec = LearnerSpec { kind: LearnerKind::NoisyOracle { rho, c_hi: 0.6 }, seed: 11 };
            let pred = predict(&train(&spec, &c, &[]).unwrap(), &c).unwrap();
            let hits = pred.pred_labels().iter().zip(c.gt_labels()).filter(|(p, g)| **p == *g).count();
            assert!((hits as f64 / 20_000.0 - rho).abs() <= 0.02);
        }
    }

    #[test]
    fn same_seed_same_predictions() {
        let rows: Vec<([f64; 3], usize)> = (0..500).map(|i| ([i as f64, (i % 7) as f64, 0.0], i % 3)).collect();
        let c = cloud(&rows, 3);
        let spec = LearnerSpec { kind: LearnerKind::NoisyOracle { rho: 0.5, c_hi: 0.5 }, seed: 9 };
        let a = predict(&train(&spec, &c, &[]).unwrap(), &c).unwrap();
        let b = predict(&train(&spec, &c, &[]).unwrap(), &c).unwrap();
        assert_eq!(a, b);
        for row in a.prob_rows() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9 && row.iter().all(|p| *p >= 0.0));
        }
    }

    #[test]
    fn spec_validation() {
        let knn0 = LearnerSpec { kind: LearnerKind::Knn { k: 0 }, seed: 0 };
        assert!(knn0.validate(3).is_err());
        let low = LearnerSpec { kind: LearnerKind::NoisyOracle { rho: 0.5, c_hi: 0.3 }, seed: 0 };
        assert!(low.validate(3).is_err());
        let bad_rho = LearnerSpec { kind: LearnerKind::NoisyOracle { rho: 1.5, c_hi: 0.9 }, seed: 0 };
        assert!(bad_rho.validate(3).is_err());
    }

    proptest::proptest! {
        #[test]
        fn incremental_matches_full_retrain(
            coords in proptest::collection::vec((0u8..6, 0u8..6, 0u8..3), 8..60),
            batches in proptest::collection::vec(1usize..6, 1..5),
            k in 1usize..6,
        ) {
            // Coarse integer coordinates force distance ties.
            let rows: Vec<([f64; 3], usize)> =
                coords.iter().map(|&(x, y, z)| ([x as f64, y as f64, z as f64], (x as usize + y as usize) % 3)).collect();
            let c = cloud(&rows, 3);
            let spec = LearnerSpec { kind: LearnerKind::Knn { k }, seed: 0 };
            let mut inc = IncrementalKnn::new(k, &c).unwrap();
            let mut regions = Vec::new();
            let mut next = 0;
            for size in batches {
                let end = (next + size).min(rows.len());
                if next == end {
                    break;
                }
                // Reverse order inside a region checks that ties follow point ids.
                regions.push(region((next..end).rev().collect(), rows[next].1));
                next = end;
                inc.update(&regions).unwrap();
                let full = predict(&train(&spec, &c, &regions).unwrap(), &c).unwrap();
                proptest::prop_assert_eq!(inc.predict().unwrap(), full);
            }
        }
    }
}
