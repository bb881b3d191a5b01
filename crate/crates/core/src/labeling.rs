//! Click-budgeted annotation of selected superpoints.
//!
//! One click assigns a class to one region, and one click splits a superpoint
//! into prediction-pure sub-regions. The budget is checked before each
//! candidate only, so the last candidate processed can overshoot it.

use std::collections::BTreeSet;

use crate::cloud::SuperpointPartition;
use crate::error::{Error, Result};
use crate::partition::{dominant_class, majority};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClickLedger {
    used: usize,
    budget: usize,
}

impl ClickLedger {
    pub fn new(budget: usize) -> Result<Self> {
        if budget == 0 {
            return Err(Error::config("click budget must be positive"));
        }
        Ok(Self { used: 0, budget })
    }

    pub fn used(&self) -> usize {
        self.used
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn has_budget(&self) -> bool {
        self.used < self.budget
    }

    fn click(&mut self) {
        self.used += 1;
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledRegion {
    /// Superpoint the region came from.
    pub superpoint: usize,
    pub points: Vec<usize>,
    pub class: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiscardedRegion {
    pub superpoint: usize,
    pub points: Vec<usize>,
}

/// Labeled, discarded and still-unlabeled bookkeeping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationState {
    labeled: Vec<LabeledRegion>,
    unlabeled: BTreeSet<usize>,
    discarded: Vec<DiscardedRegion>,
}

impl AnnotationState {
    /// Every superpoint unlabeled.
    pub fn new(num_superpoints: usize) -> Self {
        Self { labeled: Vec::new(), unlabeled: (0..num_superpoints).collect(), discarded: Vec::new() }
    }

    pub fn labeled(&self) -> &[LabeledRegion] {
        &self.labeled
    }

    pub fn unlabeled(&self) -> &BTreeSet<usize> {
        &self.unlabeled
    }

    pub fn discarded(&self) -> &[DiscardedRegion] {
        &self.discarded
    }

    pub fn is_unlabeled(&self, superpoint: usize) -> bool {
        self.unlabeled.contains(&superpoint)
    }

    /// Superpoints with at least one labeled region.
    pub fn labeled_superpoints(&self) -> BTreeSet<usize> {
        self.labeled.iter().map(|r| r.superpoint).collect()
    }

    pub fn labeled_point_count(&self) -> usize {
        self.labeled.iter().map(|r| r.points.len()).sum()
    }

    /// Assigned class per point, `None` where unlabeled or discarded.
    pub fn point_labels(&self, num_points: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; num_points];
        for r in &self.labeled {
            for &p in &r.points {
                out[p] = Some(r.class);
            }
        }
        out
    }

    /// Labeled points whose assigned class differs from ground truth.
    pub fn mislabeled_points(&self, gt_labels: &[usize]) -> usize {
        self.labeled
            .iter()
            .map(|r| r.points.iter().filter(|&&p| gt_labels[p] != r.class).count())
            .sum()
    }

    /// True when labeled, discarded and unlabeled-member point sets are pairwise disjoint.
    pub fn is_disjoint(&self, partition: &SuperpointPartition) -> bool {
        let mut seen = vec![false; partition.num_points()];
        let mark = |p: usize| !std::mem::replace(&mut seen[p], true);
        let labeled = self.labeled.iter().flat_map(|r| r.points.iter().copied());
        let discarded = self.discarded.iter().flat_map(|r| r.points.iter().copied());
        let unlabeled = self.unlabeled.iter().flat_map(|&s| partition.members(s).iter().copied());
        labeled.chain(discarded).chain(unlabeled).all(mark)
    }

    fn take_unlabeled(&mut self, superpoint: usize) -> Result<()> {
        if !self.unlabeled.remove(&superpoint) {
            return Err(Error::invalid(format!("superpoint {superpoint} is not in the unlabeled set")));
        }
        Ok(())
    }
}

/// Prediction-pure piece of a superpoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubRegion {
    pub parent: usize,
    pub points: Vec<usize>,
    pub predicted_class: usize,
}

/// One sub-region per predicted class present, ordered by class id.
pub fn split_subregions(parent: usize, members: &[usize], pred_labels: &[usize]) -> Vec<SubRegion> {
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for &p in members {
        groups.entry(pred_labels[p]).or_default().push(p);
    }
    groups
        .into_iter()
        .map(|(predicted_class, points)| SubRegion { parent, points, predicted_class })
        .collect()
}

/// Labels the whole superpoint with its ground-truth dominant class for one click.
pub fn dominant_labeling(
    superpoint: usize,
    members: &[usize],
    gt_labels: &[usize],
    ledger: &mut ClickLedger,
) -> Result<LabeledRegion> {
    if !ledger.has_budget() {
        return Err(Error::BudgetExhausted { used: ledger.used, budget: ledger.budget });
    }
    let class = dominant_class(members, gt_labels)?;
    ledger.click();
    Ok(LabeledRegion { superpoint, points: members.to_vec(), class })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LabelStrategy {
    Dominant,
    NoiseAware { theta: f64 },
}

/// Candidates handled in one labeling pass.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelingOutcome {
    /// Candidates removed from the unlabeled set, in processing order.
    pub processed: Vec<usize>,
    /// Candidates left unlabeled because the budget ran out.
    pub returned: Vec<usize>,
    pub discarded_regions: usize,
}

/// Dominant labeling over an ordered batch under the per-candidate budget guard.
pub fn dominant_labeling_batch(
    candidates: &[usize],
    partition: &SuperpointPartition,
    gt_labels: &[usize],
    state: &mut AnnotationState,
    ledger: &mut ClickLedger,
) -> Result<LabelingOutcome> {
    let mut outcome = LabelingOutcome::default();
    for &s in candidates {
        if !ledger.has_budget() {
            outcome.returned.push(s);
            continue;
        }
        state.take_unlabeled(s)?;
        let region = dominant_labeling(s, partition.members(s), gt_labels, ledger)?;
        state.labeled.push(region);
        outcome.processed.push(s);
    }
    Ok(outcome)
}

/// Batch-mode noise-aware iterative labeling.
///
/// For each candidate while clicks remain: a superpoint with ground-truth
/// purity at least `theta` is annotated whole (1 click). Otherwise it is split
/// by predicted class (1 click) and each sub-region with purity at least
/// `theta` is annotated (1 click each); the rest are discarded for good.
/// Every processed candidate leaves the unlabeled set.
pub fn noise_aware_labeling(
    candidates: &[usize],
    theta: f64,
    partition: &SuperpointPartition,
    gt_labels: &[usize],
    pred_labels: &[usize],
    state: &mut AnnotationState,
    ledger: &mut ClickLedger,
) -> Result<LabelingOutcome> {
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(Error::config(format!("theta must lie in (0, 1], got {theta}")));
    }
    let mut outcome = LabelingOutcome::default();
    for &s in candidates {
        if !ledger.has_budget() {
            outcome.returned.push(s);
            continue;
        }
        state.take_unlabeled(s)?;
        let members = partition.members(s);
        let (class, count) = majority(members, gt_labels)?;
        if count as f64 / members.len() as f64 >= theta {
            ledger.click();
            state.labeled.push(LabeledRegion { superpoint: s, points: members.to_vec(), class });
        } else {
            ledger.click();
            for sub in split_subregions(s, members, pred_labels) {
                let (class, count) = majority(&sub.points, gt_labels)?;
                if count as f64 / sub.points.len() as f64 >= theta {
                    ledger.click();
                    state.labeled.push(LabeledRegion { superpoint: s, points: sub.points, class });
                } else {
                    outcome.discarded_regions += 1;
                    state.discarded.push(DiscardedRegion { superpoint: s, points: sub.points });
                }
            }
        }
        outcome.processed.push(s);
    }
    Ok(outcome)
}

/// Runs the configured strategy over an ordered batch.
pub fn label_batch(
    strategy: LabelStrategy,
    candidates: &[usize],
    partition: &SuperpointPartition,
    gt_labels: &[usize],
    pred_labels: &[usize],
    state: &mut AnnotationState,
    ledger: &mut ClickLedger,
) -> Result<LabelingOutcome> {
    match strategy {
        LabelStrategy::Dominant => dominant_labeling_batch(candidates, partition, gt_labels, state, ledger),
        LabelStrategy::NoiseAware { theta } => {
            noise_aware_labeling(candidates, theta, partition, gt_labels, pred_labels, state, ledger)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::purity;
    use proptest::prelude::*;

    /// Builds a partition from consecutive superpoint sizes.
    fn partition(sizes: &[usize]) -> SuperpointPartition {
        let ids: Vec<usize> = sizes.iter().enumerate().flat_map(|(s, &n)| std::iter::repeat_n(s, n)).collect();
        SuperpointPartition::from_assignment(&ids)
    }

    #[test]
    fn dominant_examples() {
        let mut ledger = ClickLedger::new(5).unwrap();
        let r = dominant_labeling(0, &[0, 1, 2], &[1, 1, 2], &mut ledger).unwrap();
        assert_eq!((r.class, r.points.len(), ledger.used()), (1, 3, 1));
        assert_eq!(r.points.iter().filter(|&&p| [1, 1, 2][p] != r.class).count(), 1);

        let r = dominant_labeling(0, &[0, 1, 2], &[1, 1, 1], &mut ledger).unwrap();
        assert_eq!((r.class, ledger.used()), (1, 2));

        let r = dominant_labeling(0, &[0, 1], &[0, 1], &mut ledger).unwrap();
        assert_eq!(r.class, 0);

        let mut empty = ClickLedger::new(1).unwrap();
        dominant_labeling(0, &[0], &[0], &mut empty).unwrap();
        assert!(matches!(dominant_labeling(0, &[0], &[0], &mut empty), Err(Error::BudgetExhausted { .. })));
    }

    #[test]
    fn split_examples() {
        let one = split_subregions(3, &[0, 1, 2], &[4, 4, 4]);
        assert_eq!(one, vec![SubRegion { parent: 3, points: vec![0, 1, 2], predicted_class: 4 }]);
        let two = split_subregions(0, &[0, 1, 2], &[0, 0, 1]);
        assert_eq!(two.iter().map(|r| r.points.len()).collect::<Vec<_>>(), vec![2, 1]);
        let three = split_subregions(0, &[0, 1, 2], &[0, 1, 2]);
        assert!(three.iter().all(|r| r.points.len() == 1) && three.len() == 3);
    }

    #[test]
    fn split_with_pure_subregions() {
        let part = partition(&[10]);
        let gt = [0, 0, 0, 0, 0, 0, 1, 1, 1, 1];
        let mut state = AnnotationState::new(1);
        let mut ledger = ClickLedger::new(100).unwrap();
        noise_aware_labeling(&[0], 0.9, &part, &gt, &gt, &mut state, &mut ledger).unwrap();
        assert_eq!(ledger.used(), 3);
        assert_eq!(state.labeled_point_count(), 10);
        assert_eq!(state.mislabeled_points(&gt), 0);
    }

    #[test]
    fn prediction_blind_split_discards() {
        let part = partition(&[10]);
        let gt = [0, 0, 0, 0, 0, 0, 0, 0, 1, 1];
        let preds = [0; 10];
        let mut state = AnnotationState::new(1);
        let mut ledger = ClickLedger::new(100).unwrap();
        let out = noise_aware_labeling(&[0], 0.9, &part, &gt, &preds, &mut state, &mut ledger).unwrap();
        assert_eq!(ledger.used(), 1);
        assert_eq!(state.labeled_point_count(), 0);
        assert_eq!(out.discarded_regions, 1);
        assert!(state.unlabeled().is_empty());
    }

    #[test]
    fn budget_overshoot_returns_rest() {
        let part = partition(&[10, 3, 3]);
        let mut gt = vec![0, 0, 0, 0, 0, 0, 1, 1, 1, 1];
        gt.extend([0; 6]);
        let mut state = AnnotationState::new(3);
        let mut ledger = ClickLedger::new(2).unwrap();
        let out = noise_aware_labeling(&[0, 1, 2], 0.9, &part, &gt, &gt, &mut state, &mut ledger).unwrap();
        assert_eq!(ledger.used(), 3);
        assert_eq!(out.processed, vec![0]);
        assert_eq!(out.returned, vec![1, 2]);
        assert_eq!(state.unlabeled().iter().copied().collect::<Vec<_>>(), vec![1, 2]);
    }

    #[test]
    fn invalid_theta_and_foreign_candidate() {
        let part = partition(&[2]);
        let mut state = AnnotationState::new(1);
        let mut ledger = ClickLedger::new(5).unwrap();
        assert!(noise_aware_labeling(&[0], 0.0, &part, &[0, 0], &[0, 0], &mut state, &mut ledger).is_err());
        assert!(noise_aware_labeling(&[0], 1.5, &part, &[0, 0], &[0, 0], &mut state, &mut ledger).is_err());
        noise_aware_labeling(&[0], 1.0, &part, &[0, 0], &[0, 0], &mut state, &mut ledger).unwrap();
        assert!(noise_aware_labeling(&[0], 1.0, &part, &[0, 0], &[0, 0], &mut state, &mut ledger).is_err());
    }

    /// Sizes, gt labels and predictions for a handful of superpoints.
    fn arb_fixture() -> impl Strategy<Value = (Vec<usize>, Vec<usize>, Vec<usize>)> {
        prop::collection::vec(1usize..12, 1..8).prop_flat_map(|sizes| {
            let n: usize = sizes.iter().sum();
            (Just(sizes), prop::collection::vec(0usize..3, n), prop::collection::vec(0usize..3, n))
        })
    }

    proptest! {
        #[test]
        fn noise_aware_invariants((sizes, gt, preds) in arb_fixture(), theta in prop::sample::select(vec![0.5, 0.7, 0.9, 1.0]), budget in 1usize..30) {
            let part = partition(&sizes);
            let mut state = AnnotationState::new(sizes.len());
            let mut ledger = ClickLedger::new(budget).unwrap();
            let order: Vec<usize> = (0..sizes.len()).rev().collect();
            let mut expected_clicks = 0;
            for &s in &order {
                if expected_clicks >= budget { break; }
                let m = part.members(s);
                expected_clicks += if purity(m, &gt).unwrap() >= theta {
                    1
                } else {
                    1 + split_subregions(s, m, &preds).iter().filter(|r| purity(&r.points, &gt).unwrap() >= theta).count()
                };
            }
            noise_aware_labeling(&order, theta, &part, &gt, &preds, &mut state, &mut ledger).unwrap();
            prop_assert_eq!(ledger.used(), expected_clicks);
            prop_assert!(ledger.used() <= budget + 3);
            prop_assert!(state.is_disjoint(&part));
            for r in state.labeled() {
                let wrong = r.points.iter().filter(|&&p| gt[p] != r.class).count();
                prop_assert!(wrong as f64 <= (1.0 - theta) * r.points.len() as f64 + 1e-9);
            }
            if theta == 1.0 {
                prop_assert_eq!(state.mislabeled_points(&gt), 0);
            }
        }
    }
}
