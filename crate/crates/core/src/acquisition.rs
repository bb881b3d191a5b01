//! Point and superpoint uncertainty, class-balanced weighting and ranking.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cloud::check_prob_row;
use crate::error::{Error, Result};
use crate::partition::dominant_class;

/// Per-point uncertainty measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointMeasure {
    /// Second-best over best probability.
    Bvsb,
    Entropy,
    /// Least confidence, `1 - max p`.
    Lc,
}

impl PointMeasure {
    pub fn score(self, row: &[f64]) -> Result<f64> {
        match self {
            PointMeasure::Bvsb => point_uncertainty_bvsb(row),
            PointMeasure::Entropy => point_uncertainty_entropy(row),
            PointMeasure::Lc => point_uncertainty_lc(row),
        }
    }
}

/// How point scores are pooled into one superpoint score.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SuperpointMode {
    Mean,
    /// Dominant-class sum minus the rest.
    Margin,
}

pub fn point_uncertainty_bvsb(row: &[f64]) -> Result<f64> {
    check_prob_row(row)?;
    if row.len() < 2 {
        return Err(Error::invalid("best-versus-second-best needs at least two classes"));
    }
    let (mut best, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &p in row {
        if p > best {
            second = best;
            best = p;
        } else if p > second {
            second = p;
        }
    }
    if best <= 0.0 {
        return Ok(1.0);
    }
    Ok(second / best)
}

pub fn point_uncertainty_entropy(row: &[f64]) -> Result<f64> {
    check_prob_row(row)?;
    Ok(-row.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>())
}

pub fn point_uncertainty_lc(row: &[f64]) -> Result<f64> {
    check_prob_row(row)?;
    Ok(1.0 - row.iter().copied().fold(0.0, f64::max))
}

/// Scores every row with `measure`.
pub fn point_scores<'a>(rows: impl Iterator<Item = &'a [f64]>, measure: PointMeasure) -> Result<Vec<f64>> {
    rows.map(|r| measure.score(r)).collect()
}

/// Arithmetic mean of the point scores over `region`.
pub fn superpoint_uncertainty_mean(scores: &[f64], region: &[usize]) -> Result<f64> {
    if region.is_empty() {
        return Err(Error::invalid("empty region"));
    }
    let sum: f64 = region.iter().map(|&i| scores[i]).sum();
    Ok(sum / region.len() as f64)
}

/// Sum of scores of points predicted as the region's dominant predicted class,
/// minus the sum over all other points. Can be negative.
pub fn superpoint_uncertainty_margin(scores: &[f64], pred_labels: &[usize], region: &[usize]) -> Result<f64> {
    let dominant = dominant_class(region, pred_labels)?;
    let (mut agree, mut disagree) = (0.0, 0.0);
    for &i in region {
        if pred_labels[i] == dominant {
            agree += scores[i];
        } else {
            disagree += scores[i];
        }
    }
    Ok(agree - disagree)
}

pub fn superpoint_uncertainty(
    mode: SuperpointMode,
    scores: &[f64],
    pred_labels: &[usize],
    region: &[usize],
) -> Result<f64> {
    match mode {
        SuperpointMode::Mean => superpoint_uncertainty_mean(scores, region),
        SuperpointMode::Margin => superpoint_uncertainty_margin(scores, pred_labels, region),
    }
}

/// Class weights `w(c) = exp(-n_c / n)` where `n_c` counts entries of
/// `dominant_classes` equal to `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeights(Vec<f64>);

impl ClassWeights {
    pub fn get(&self, class: usize) -> f64 {
        self.0[class]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub fn class_weights(dominant_classes: &[usize], num_classes: usize) -> Result<ClassWeights> {
    if dominant_classes.is_empty() {
        return Err(Error::invalid("class weights need at least one superpoint"));
    }
    let mut counts = vec![0usize; num_classes];
    for &c in dominant_classes {
        if c >= num_classes {
            return Err(Error::invalid(format!("class {c} out of range")));
        }
        counts[c] += 1;
    }
    let total = dominant_classes.len() as f64;
    Ok(ClassWeights(counts.into_iter().map(|n| (-(n as f64) / total).exp()).collect()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuperpointScore {
    pub superpoint: usize,
    pub uncertainty: f64,
    /// Dominant predicted class.
    pub dominant: usize,
    pub score: f64,
}

/// Candidate for [`classbal_rank`]: superpoint id, its uncertainty and dominant predicted class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub superpoint: usize,
    pub uncertainty: f64,
    pub dominant: usize,
}

/// Scores candidates by `u(s) * w(Do(s))` and returns the best `pool_size`,
/// descending, ties toward the lower superpoint id.
pub fn classbal_rank(candidates: &[Candidate], weights: &ClassWeights, pool_size: usize) -> Result<Vec<SuperpointScore>> {
    if candidates.is_empty() {
        return Err(Error::EmptyPool);
    }
    if pool_size == 0 {
        return Err(Error::invalid("pool size must be at least 1"));
    }
    let scored: Vec<SuperpointScore> = candidates
        .iter()
        .map(|c| SuperpointScore {
            superpoint: c.superpoint,
            uncertainty: c.uncertainty,
            dominant: c.dominant,
            score: c.uncertainty * weights.get(c.dominant),
        })
        .collect();
    Ok(rank_descending(scored, pool_size))
}

/// Sorts by descending score, ties toward the lower superpoint id, and keeps `keep` entries.
pub fn rank_descending(mut scored: Vec<SuperpointScore>, keep: usize) -> Vec<SuperpointScore> {
    scored.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.superpoint.cmp(&b.superpoint)));
    scored.truncate(keep);
    scored
}

/// Uniform sample of `count` ids without replacement, in draw order.
pub fn random_select(pool: &[usize], count: usize, seed: u64) -> Result<Vec<usize>> {
    if count > pool.len() {
        return Err(Error::invalid(format!("cannot draw {count} from a pool of {}", pool.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(index::sample(&mut rng, pool.len(), count).into_iter().map(|i| pool[i]).collect())
}
