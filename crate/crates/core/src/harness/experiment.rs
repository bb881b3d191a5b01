//! Acquisition cycles: train, predict, score, select, label, evaluate.
//!
//! Cycle 0 records the seed set. Every later cycle selects from the
//! prediction of the model trained on the previous labeled set, labels under
//! a fresh per-cycle click budget, retrains and evaluates. Everything is a
//! pure function of the config, so logs are byte-identical across repeats
//! and thread counts.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::acquisition::{
    class_weights, classbal_rank, point_scores, random_select, rank_descending, superpoint_uncertainty, Candidate,
    PointMeasure, SuperpointMode, SuperpointScore,
};
use crate::cloud::{load_point_cloud_with_partition, PointCloud, Prediction, SuperpointPartition};
use crate::error::{Error, Result};
use crate::graph::{select_diverse, superpoint_feature};
use crate::harness::config::{DataSource, RunConfig, Strategy, Target, TargetMetric};
use crate::harness::metrics::{evaluate, Metrics};
use crate::harness::scene::generate_scene;
use crate::labeling::{
    dominant_labeling_batch, label_batch, split_subregions, AnnotationState, ClickLedger, LabeledRegion,
};
use crate::learner::{predict, train, IncrementalKnn, LearnerKind, LearnerSpec};
use crate::partition::{dominant_class, generate_superpoints};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CycleRecord {
    pub cycle: usize,
    pub clicks_cycle: usize,
    pub clicks_total: usize,
    pub labeled_superpoints: usize,
    pub labeled_superpoint_fraction: f64,
    pub labeled_point_fraction: f64,
    pub mislabeled_points: usize,
    pub discarded_regions: usize,
    pub unlabeled_superpoints: usize,
    pub accuracy: f64,
    pub miou: f64,
    pub per_class_iou: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub strategy: &'static str,
    pub num_points: usize,
    pub num_superpoints: usize,
    pub seed_clicks: usize,
    pub cycles_run: usize,
    pub total_clicks: usize,
    pub final_accuracy: f64,
    pub final_miou: f64,
    /// Metric of a model trained on every point's true label.
    pub reference_metric: Option<f64>,
    pub target: Option<f64>,
    /// Cumulative clicks at the first record meeting the target.
    pub clicks_to_target: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub records: Vec<CycleRecord>,
    pub summary: Summary,
}

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum LogLine<'a> {
    Cycle(&'a CycleRecord),
    Summary(&'a Summary),
}

impl RunLog {
    /// One JSON object per line: every cycle record, then the summary.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, &LogLine::Cycle(r))?;
            writeln!(out)?;
        }
        serde_json::to_writer(&mut out, &LogLine::Summary(&self.summary))?;
        writeln!(out)
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }
}

/// Labels `ceil(fraction * superpoints)` uniformly drawn superpoints with their
/// ground-truth dominant class, one click each. Returns the state and clicks spent.
pub fn seed_labeled_set(
    partition: &SuperpointPartition,
    fraction: f64,
    seed: u64,
    gt_labels: &[usize],
) -> Result<(AnnotationState, usize)> {
    let n = partition.num_superpoints();
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::config("seed fraction must lie in (0, 1]"));
    }
    // Guard against 0.005 * 1000 landing a hair above 5.
    let count = ((fraction * n as f64) - 1e-9).ceil().clamp(0.0, n as f64) as usize;
    if count == 0 {
        return Err(Error::config(format!("seed fraction {fraction} selects no superpoint out of {n}")));
    }
    let pool: Vec<usize> = (0..n).collect();
    let mut picked = random_select(&pool, count, seed)?;
    picked.sort_unstable();
    let mut state = AnnotationState::new(n);
    let mut ledger = ClickLedger::new(count)?;
    dominant_labeling_batch(&picked, partition, gt_labels, &mut state, &mut ledger)?;
    Ok((state, ledger.used()))
}

fn mix_seed(seed: u64, salt: u64) -> u64 {
    seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17)
}

pub struct Experiment<'a> {
    config: &'a RunConfig,
    cloud: &'a PointCloud,
    partition: &'a SuperpointPartition,
    gt_labels: Vec<usize>,
    state: AnnotationState,
    prediction: Prediction,
    /// Set for knn learners, which are refreshed incrementally.
    knn: Option<IncrementalKnn>,
    clicks_total: usize,
    cycle: usize,
}

impl<'a> Experiment<'a> {
    /// Seeds the labeled set and trains the first model.
    pub fn new(config: &'a RunConfig, cloud: &'a PointCloud, partition: &'a SuperpointPartition) -> Result<Self> {
        config.validate()?;
        let gt_labels = cloud.gt_labels();
        let (state, seed_clicks) = seed_labeled_set(partition, config.seed_fraction, mix_seed(config.seed, 1), &gt_labels)?;
        let mut knn = match config.learner.kind {
            LearnerKind::Knn { k } => Some(IncrementalKnn::new(k, cloud)?),
            LearnerKind::NoisyOracle { .. } => None,
        };
        let prediction = refit(&config.learner, &mut knn, cloud, state.labeled())?;
        Ok(Self { config, cloud, partition, gt_labels, state, prediction, knn, clicks_total: seed_clicks, cycle: 0 })
    }

    pub fn state(&self) -> &AnnotationState {
        &self.state
    }

    pub fn prediction(&self) -> &Prediction {
        &self.prediction
    }

    pub fn clicks_total(&self) -> usize {
        self.clicks_total
    }

    pub fn record(&self, clicks_cycle: usize) -> Result<CycleRecord> {
        let metrics = evaluate(self.prediction.pred_labels(), &self.gt_labels, self.cloud.num_classes())?;
        let labeled_superpoints = self.state.labeled_superpoints().len();
        Ok(CycleRecord {
            cycle: self.cycle,
            clicks_cycle,
            clicks_total: self.clicks_total,
            labeled_superpoints,
            labeled_superpoint_fraction: labeled_superpoints as f64 / self.partition.num_superpoints() as f64,
            labeled_point_fraction: self.state.labeled_point_count() as f64 / self.cloud.len() as f64,
            mislabeled_points: self.state.mislabeled_points(&self.gt_labels),
            discarded_regions: self.state.discarded().len(),
            unlabeled_superpoints: self.state.unlabeled().len(),
            accuracy: metrics.accuracy,
            miou: metrics.miou,
            per_class_iou: metrics.per_class_iou,
        })
    }

    /// Ordered candidate superpoints for this cycle under the configured strategy.
    pub fn select(&self) -> Result<Vec<usize>> {
        let pool: Vec<usize> = self.state.unlabeled().iter().copied().collect();
        if pool.is_empty() {
            return Err(Error::EmptyPool);
        }
        let batch = self.config.batch.min(pool.len());
        let rows = || self.prediction.prob_rows();
        let preds = self.prediction.pred_labels();
        let strategy = self.config.strategy;
        let ranked = |measure: PointMeasure, mode: SuperpointMode| -> Result<Vec<Candidate>> {
            let scores = point_scores(rows(), measure)?;
            pool.par_iter()
                .map(|&s| {
                    let members = self.partition.members(s);
                    Ok(Candidate {
                        superpoint: s,
                        uncertainty: superpoint_uncertainty(mode, &scores, preds, members)?,
                        dominant: dominant_class(members, preds)?,
                    })
                })
                .collect()
        };
        match strategy {
            Strategy::Random => random_select(&pool, batch, mix_seed(self.config.seed, 1000 + self.cycle as u64)),
            Strategy::Entropy | Strategy::Lc | Strategy::Bvsb => {
                let measure = match strategy {
                    Strategy::Entropy => PointMeasure::Entropy,
                    Strategy::Lc => PointMeasure::Lc,
                    _ => PointMeasure::Bvsb,
                };
                let mode = self.config.uncertainty.unwrap_or(SuperpointMode::Mean);
                let scored = ranked(measure, mode)?
                    .into_iter()
                    .map(|c| SuperpointScore { superpoint: c.superpoint, uncertainty: c.uncertainty, dominant: c.dominant, score: c.uncertainty })
                    .collect();
                Ok(rank_descending(scored, batch).into_iter().map(|s| s.superpoint).collect())
            }
            Strategy::ClassBal | Strategy::Ssdr => {
                let default_mode = if strategy == Strategy::Ssdr { SuperpointMode::Margin } else { SuperpointMode::Mean };
                let candidates = ranked(PointMeasure::Bvsb, self.config.uncertainty.unwrap_or(default_mode))?;
                // Unlabeled superpoints count with their predicted class, labeled regions with their annotation.
                let dominants: Vec<usize> = candidates
                    .iter()
                    .map(|c| c.dominant)
                    .chain(self.state.labeled().iter().map(|r| r.class))
                    .collect();
                let weights = class_weights(&dominants, self.cloud.num_classes())?;
                if strategy == Strategy::ClassBal {
                    return Ok(classbal_rank(&candidates, &weights, batch)?.into_iter().map(|s| s.superpoint).collect());
                }
                let pool_size = self.config.graph.pool_factor.saturating_mul(self.config.batch);
                let top = classbal_rank(&candidates, &weights, pool_size)?;
                let features = top
                    .par_iter()
                    .map(|s| superpoint_feature(s.superpoint, self.partition.members(s.superpoint), self.cloud, &self.prediction))
                    .collect::<Result<Vec<_>>>()?;
                let scores: Vec<f64> = top.iter().map(|s| s.score).collect();
                let picked = select_diverse(features, &scores, batch, &self.config.graph)?;
                Ok(picked.into_iter().map(|i| top[i].superpoint).collect())
            }
        }
    }

    /// One full cycle; fails with [`Error::EmptyPool`] once every superpoint is spent.
    pub fn run_cycle(&mut self) -> Result<CycleRecord> {
        let candidates = self.select()?;
        let mut ledger = ClickLedger::new(self.config.budget)?;
        label_batch(
            self.config.label_strategy(),
            &candidates,
            self.partition,
            &self.gt_labels,
            self.prediction.pred_labels(),
            &mut self.state,
            &mut ledger,
        )?;
        self.clicks_total += ledger.used();
        self.cycle += 1;
        if !self.state.labeled().is_empty() {
            self.prediction = refit(&self.config.learner, &mut self.knn, self.cloud, self.state.labeled())?;
        }
        self.record(ledger.used())
    }
}

fn refit(
    spec: &LearnerSpec,
    knn: &mut Option<IncrementalKnn>,
    cloud: &PointCloud,
    labeled: &[LabeledRegion],
) -> Result<Prediction> {
    match knn {
        Some(model) => {
            model.update(labeled)?;
            model.predict()
        }
        None => fit_predict(spec, cloud, labeled),
    }
}

fn fit_predict(spec: &LearnerSpec, cloud: &PointCloud, labeled: &[LabeledRegion]) -> Result<Prediction> {
    predict(&train(spec, cloud, labeled)?, cloud)
}

/// Metrics of a learner trained on every point's true label.
pub fn reference_metrics(spec: &LearnerSpec, cloud: &PointCloud, partition: &SuperpointPartition) -> Result<Metrics> {
    let gt = cloud.gt_labels();
    let regions: Vec<LabeledRegion> = (0..partition.num_superpoints())
        .flat_map(|s| {
            split_subregions(s, partition.members(s), &gt)
                .into_iter()
                .map(move |r| LabeledRegion { superpoint: s, class: r.predicted_class, points: r.points })
        })
        .collect();
    let pred = fit_predict(spec, cloud, &regions)?;
    evaluate(pred.pred_labels(), &gt, cloud.num_classes())
}

fn metric_of(metric: TargetMetric, accuracy: f64, miou: f64) -> f64 {
    match metric {
        TargetMetric::Miou => miou,
        TargetMetric::Accuracy => accuracy,
    }
}

/// Loads or generates the scene and its partition.
pub fn prepare_data(config: &RunConfig) -> Result<(PointCloud, SuperpointPartition)> {
    let (cloud, partition) = match &config.data {
        DataSource::Cloud { path, num_classes } => load_point_cloud_with_partition(path, *num_classes)?,
        DataSource::Scene(spec) => (generate_scene(spec)?, None),
    };
    let partition = match partition {
        Some(p) => p,
        None => generate_superpoints(&cloud, &config.partition)?,
    };
    if partition.num_points() != cloud.len() {
        return Err(Error::invalid("partition does not match the cloud"));
    }
    Ok((cloud, partition))
}

/// Runs cycles on prepared data until the cycle count or the unlabeled pool runs out.
pub fn run_on(config: &RunConfig, cloud: &PointCloud, partition: &SuperpointPartition) -> Result<RunLog> {
    let reference_metric = match config.target {
        Target::Reference(_) => {
            let m = reference_metrics(&config.learner, cloud, partition)?;
            Some(metric_of(config.target_metric, m.accuracy, m.miou))
        }
        _ => None,
    };
    let target = match config.target {
        Target::None => None,
        Target::Absolute(v) => Some(v),
        Target::Reference(f) => reference_metric.map(|r| f * r),
    };
    let meets = |r: &CycleRecord| target.is_some_and(|t| metric_of(config.target_metric, r.accuracy, r.miou) >= t);

    let mut exp = Experiment::new(config, cloud, partition)?;
    let seed_clicks = exp.clicks_total();
    let mut records = vec![exp.record(seed_clicks)?];
    for _ in 0..config.cycles {
        if exp.state().unlabeled().is_empty() || (config.stop_at_target && meets(records.last().expect("seed record"))) {
            break;
        }
        records.push(exp.run_cycle()?);
    }
    let clicks_to_target = records.iter().find(|r| meets(r)).map(|r| r.clicks_total);
    let last = records.last().expect("seed record");
    let summary = Summary {
        strategy: config.strategy.name(),
        num_points: cloud.len(),
        num_superpoints: partition.num_superpoints(),
        seed_clicks,
        cycles_run: records.len() - 1,
        total_clicks: last.clicks_total,
        final_accuracy: last.accuracy,
        final_miou: last.miou,
        reference_metric,
        target,
        clicks_to_target,
    };
    Ok(RunLog { records, summary })
}

pub fn run_experiment(config: &RunConfig) -> Result<RunLog> {
    config.validate()?;
    let (cloud, partition) = prepare_data(config)?;
    run_on(config, &cloud, &partition)
}
