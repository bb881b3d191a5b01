//! Flat `section.key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are
//! rejected so typos surface as configuration errors.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::acquisition::SuperpointMode;
use crate::error::{Error, Result};
use crate::graph::{AggNodes, AggregateOptions, FpsScope, GraphParams};
use crate::harness::scene::SceneSpec;
use crate::labeling::LabelStrategy;
use crate::learner::{LearnerKind, LearnerSpec};
use crate::partition::PartitionerParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Random,
    Entropy,
    Lc,
    Bvsb,
    ClassBal,
    Ssdr,
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "random" => Strategy::Random,
            "entropy" => Strategy::Entropy,
            "lc" => Strategy::Lc,
            "bvsb" => Strategy::Bvsb,
            "classbal" => Strategy::ClassBal,
            "ssdr" => Strategy::Ssdr,
            other => return Err(Error::config(format!("unknown strategy {other:?}"))),
        })
    }
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::Entropy => "entropy",
            Strategy::Lc => "lc",
            Strategy::Bvsb => "bvsb",
            Strategy::ClassBal => "classbal",
            Strategy::Ssdr => "ssdr",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetMetric {
    Miou,
    Accuracy,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    None,
    /// Fraction of the full-label reference run's metric.
    Reference(f64),
    Absolute(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Cloud { path: PathBuf, num_classes: usize },
    Scene(SceneSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub strategy: Strategy,
    /// Superpoints selected per cycle.
    pub batch: usize,
    /// Click budget per cycle.
    pub budget: usize,
    pub seed_fraction: f64,
    pub cycles: usize,
    /// `None` picks noise-aware labeling for `ssdr` and dominant labeling otherwise.
    pub label: Option<LabelStrategy>,
    pub theta: f64,
    /// Overrides the superpoint pooling of `classbal` (mean) and `ssdr` (margin).
    pub uncertainty: Option<SuperpointMode>,
    pub graph: GraphParams,
    pub learner: LearnerSpec,
    pub partition: PartitionerParams,
    pub data: DataSource,
    pub target: Target,
    pub target_metric: TargetMetric,
    /// End the run at the first record meeting the target.
    pub stop_at_target: bool,
    pub seed: u64,
    pub output: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Ssdr,
            batch: 20,
            budget: 20,
            seed_fraction: 0.005,
            cycles: 10,
            label: None,
            theta: 0.9,
            uncertainty: None,
            graph: GraphParams::default(),
            learner: LearnerSpec::default(),
            partition: PartitionerParams::default(),
            data: DataSource::Scene(SceneSpec::default()),
            target: Target::Reference(0.9),
            target_metric: TargetMetric::Miou,
            stop_at_target: false,
            seed: 0,
            output: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.seed_fraction > 0.0 && self.seed_fraction < 1.0) {
            return Err(Error::config("run.seed_fraction must lie in (0, 1)"));
        }
        if self.batch == 0 {
            return Err(Error::config("run.batch must be at least 1"));
        }
        if self.budget == 0 {
            return Err(Error::config("label.budget must be at least 1"));
        }
        if self.cycles == 0 {
            return Err(Error::config("run.cycles must be at least 1"));
        }
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return Err(Error::config("label.theta must lie in (0, 1]"));
        }
        if let Some(LabelStrategy::NoiseAware { theta }) = self.label {
            if !(theta > 0.0 && theta <= 1.0) {
                return Err(Error::config("label.theta must lie in (0, 1]"));
            }
        }
        if self.graph.aggregate.rounds == 0 {
            return Err(Error::config("graph.rounds must be at least 1"));
        }
        if self.graph.pool_factor == 0 {
            return Err(Error::config("graph.pool_factor must be at least 1"));
        }
        match self.target {
            Target::Reference(f) if !(f > 0.0 && f <= 1.0) => {
                return Err(Error::config("run.target_fraction must lie in (0, 1]"))
            }
            Target::Absolute(v) if !(0.0..=1.0).contains(&v) => {
                return Err(Error::config("run.target must lie in [0, 1]"))
            }
            _ => {}
        }
        self.partition.validate()?;
        match &self.data {
            DataSource::Scene(spec) => {
                spec.validate()?;
                self.learner.validate(spec.class_weights.len())
            }
            DataSource::Cloud { num_classes, .. } => {
                if *num_classes == 0 {
                    return Err(Error::config("data.classes must be positive"));
                }
                self.learner.validate(*num_classes)
            }
        }
    }

    pub fn label_strategy(&self) -> LabelStrategy {
        self.label.unwrap_or(match self.strategy {
            Strategy::Ssdr => LabelStrategy::NoiseAware { theta: self.theta },
            _ => LabelStrategy::Dominant,
        })
    }

    pub fn num_classes(&self) -> usize {
        match &self.data {
            DataSource::Cloud { num_classes, .. } => *num_classes,
            DataSource::Scene(spec) => spec.class_weights.len(),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Parses config text; relative paths resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut kv = KeyValues::parse(text)?;
        let mut cfg = RunConfig::default();

        if let Some(s) = kv.take("run.strategy") {
            cfg.strategy = s.parse()?;
        }
        kv.set("run.batch", &mut cfg.batch)?;
        kv.set("label.budget", &mut cfg.budget)?;
        kv.set("run.seed_fraction", &mut cfg.seed_fraction)?;
        kv.set("run.cycles", &mut cfg.cycles)?;
        kv.set("run.seed", &mut cfg.seed)?;
        kv.set("label.theta", &mut cfg.theta)?;
        if let Some(out) = kv.take("run.output") {
            cfg.output = Some(base_dir.join(out));
        }
        cfg.label = match kv.take("label.strategy").as_deref() {
            None | Some("auto") => None,
            Some("dominant") => Some(LabelStrategy::Dominant),
            Some("noise_aware") => Some(LabelStrategy::NoiseAware { theta: cfg.theta }),
            Some(other) => return Err(Error::config(format!("unknown label.strategy {other:?}"))),
        };
        cfg.uncertainty = match kv.take("acq.uncertainty").as_deref() {
            None | Some("auto") => None,
            Some("mean") => Some(SuperpointMode::Mean),
            Some("margin") => Some(SuperpointMode::Margin),
            Some(other) => return Err(Error::config(format!("unknown acq.uncertainty {other:?}"))),
        };

        let mut agg = AggregateOptions::default();
        kv.set("graph.k", &mut cfg.graph.k)?;
        kv.set("graph.rounds", &mut agg.rounds)?;
        kv.set("graph.normalize", &mut agg.normalize)?;
        kv.set("graph.pool_factor", &mut cfg.graph.pool_factor)?;
        if let Some(v) = kv.take("graph.agg_nodes") {
            agg.nodes = match v.as_str() {
                "all" => AggNodes::All,
                n => AggNodes::Top(n.parse().map_err(|_| Error::config(format!("graph.agg_nodes: expected `all` or an integer, got {n:?}")))?),
            };
        }
        if let Some(v) = kv.take("graph.fps_scope") {
            cfg.graph.fps_scope = match v.as_str() {
                "all" => FpsScope::AllNodes,
                "aggregated" => FpsScope::AggregationNodes,
                other => return Err(Error::config(format!("unknown graph.fps_scope {other:?}"))),
            };
        }
        cfg.graph.aggregate = agg;

        let kind = kv.take("learner.kind").unwrap_or_else(|| "knn".into());
        let mut k = 5usize;
        let mut rho = 0.9f64;
        let mut c_hi = 0.9f64;
        kv.set("learner.k", &mut k)?;
        kv.set("learner.rho", &mut rho)?;
        kv.set("learner.c_hi", &mut c_hi)?;
        kv.set("learner.seed", &mut cfg.learner.seed)?;
        cfg.learner.kind = match kind.as_str() {
            "knn" => LearnerKind::Knn { k },
            "noisy_oracle" => LearnerKind::NoisyOracle { rho, c_hi },
            other => return Err(Error::config(format!("unknown learner.kind {other:?}"))),
        };

        kv.set("partition.voxel_size", &mut cfg.partition.voxel_size)?;
        kv.set("partition.color_threshold", &mut cfg.partition.color_threshold)?;
        kv.set("partition.normal_threshold", &mut cfg.partition.normal_threshold)?;
        kv.set("partition.min_region", &mut cfg.partition.min_region)?;
        kv.set("partition.max_extent", &mut cfg.partition.max_extent)?;
        kv.set("partition.seed", &mut cfg.partition.rng_seed)?;

        let mut fraction = 0.9;
        kv.set("run.target_fraction", &mut fraction)?;
        cfg.target = match kv.take("run.target").as_deref() {
            None | Some("auto") => Target::Reference(fraction),
            Some("none") => Target::None,
            Some(v) => Target::Absolute(v.parse().map_err(|_| Error::config(format!("run.target: bad value {v:?}")))?),
        };
        kv.set("run.stop_at_target", &mut cfg.stop_at_target)?;
        cfg.target_metric = match kv.take("run.target_metric").as_deref() {
            None | Some("miou") => TargetMetric::Miou,
            Some("accuracy") => TargetMetric::Accuracy,
            Some(other) => return Err(Error::config(format!("unknown run.target_metric {other:?}"))),
        };

        if let Some(path) = kv.take("data.cloud") {
            let mut num_classes = 0usize;
            kv.set("data.classes", &mut num_classes)?;
            if num_classes == 0 {
                return Err(Error::config("data.classes is required with data.cloud"));
            }
            cfg.data = DataSource::Cloud { path: base_dir.join(path), num_classes };
        } else {
            cfg.data = DataSource::Scene(scene_from(&mut kv)?);
        }

        kv.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Reads the `scene.*` keys of a flat key/value file.
pub fn parse_scene_spec(text: &str) -> Result<SceneSpec> {
    let mut kv = KeyValues::parse(text)?;
    let spec = scene_from(&mut kv)?;
    kv.finish()?;
    spec.validate()?;
    Ok(spec)
}

fn scene_from(kv: &mut KeyValues) -> Result<SceneSpec> {
    let mut spec = SceneSpec::default();
    kv.set("scene.extent", &mut spec.extent)?;
    kv.set("scene.height", &mut spec.height)?;
    kv.set("scene.points", &mut spec.num_points)?;
    kv.set("scene.clutter", &mut spec.clutter)?;
    kv.set("scene.noise", &mut spec.noise)?;
    kv.set("scene.seed", &mut spec.seed)?;
    if let Some(w) = kv.take("scene.weights") {
        spec.class_weights = w
            .split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|_| Error::config(format!("scene.weights: bad number {s:?}"))))
            .collect::<Result<_>>()?;
    }
    Ok(spec)
}

struct KeyValues(BTreeMap<String, String>);

impl KeyValues {
    fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected `section.key = value`", i + 1)))?;
            let key = key.trim();
            if key.is_empty() || !key.contains('.') {
                return Err(Error::config(format!("line {}: key {key:?} is not of the form section.key", i + 1)));
            }
            if map.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(Error::config(format!("line {}: duplicate key {key}", i + 1)));
            }
        }
        Ok(Self(map))
    }

    fn take(&mut self, key: &str) -> Option<String> {
        self.0.remove(key)
    }

    fn set<T: FromStr>(&mut self, key: &str, slot: &mut T) -> Result<()> {
        if let Some(v) = self.take(key) {
            *slot = v.parse().map_err(|_| Error::config(format!("{key}: cannot parse {v:?}")))?;
        }
        Ok(())
    }

    fn finish(self) -> Result<()> {
        match self.0.keys().next() {
            Some(k) => Err(Error::config(format!("unknown key {k}"))),
            None => Ok(()),
        }
    }
}
