//! Scene, partition and prediction containers plus the plain-text cloud format.
//!
//! One point per line: `x y z r g b label [superpoint]`, whitespace separated,
//! `#` starts a comment line. Reals are written with 9 significant digits.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Tolerance on the sum of a probability row.
pub const PROB_SUM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub position: [f64; 3],
    /// RGB in `[0, 1]`.
    pub color: [f64; 3],
    pub gt_label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point>,
    num_classes: usize,
}

impl PointCloud {
    pub fn new(points: Vec<Point>, num_classes: usize) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::invalid("number of classes must be positive"));
        }
        if points.is_empty() {
            return Err(Error::invalid("point cloud is empty"));
        }
        for (i, p) in points.iter().enumerate() {
            if p.position.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("point {i}: non-finite coordinate")));
            }
            if p.color.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::invalid(format!("point {i}: color outside [0,1]")));
            }
            if p.gt_label >= num_classes {
                return Err(Error::invalid(format!(
                    "point {i}: label {} >= number of classes {num_classes}",
                    p.gt_label
                )));
            }
        }
        Ok(Self { points, num_classes })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn positions(&self) -> impl Iterator<Item = [f64; 3]> + '_ {
        self.points.iter().map(|p| p.position)
    }

    pub fn gt_labels(&self) -> Vec<usize> {
        self.points.iter().map(|p| p.gt_label).collect()
    }

    /// Axis-aligned bounding box `(min, max)`.
    pub fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &self.points {
            for a in 0..3 {
                lo[a] = lo[a].min(p.position[a]);
                hi[a] = hi[a].max(p.position[a]);
            }
        }
        (lo, hi)
    }

    /// Positions min-max normalized per axis to `[0, 1]`; a flat axis maps to 0.
    pub fn normalized_positions(&self) -> Vec<[f64; 3]> {
        let (lo, hi) = self.bounds();
        self.points
            .iter()
            .map(|p| {
                let mut out = [0.0; 3];
                for a in 0..3 {
                    let span = hi[a] - lo[a];
                    out[a] = if span > 0.0 { (p.position[a] - lo[a]) / span } else { 0.0 };
                }
                out
            })
            .collect()
    }
}

/// Total assignment of points to superpoints.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuperpointPartition {
    assignment: Vec<usize>,
    superpoints: Vec<Vec<usize>>,
}

impl SuperpointPartition {
    /// Builds member lists from a per-point id vector. Ids are renumbered densely
    /// in ascending order of the original id, so the result never has empty superpoints.
    pub fn from_assignment(ids: &[usize]) -> Self {
        let mut remap = BTreeMap::new();
        for &id in ids {
            remap.entry(id).or_insert(0usize);
        }
        for (dense, v) in remap.values_mut().enumerate() {
            *v = dense;
        }
        let assignment: Vec<usize> = ids.iter().map(|id| remap[id]).collect();
        let mut superpoints = vec![Vec::new(); remap.len()];
        for (i, &s) in assignment.iter().enumerate() {
            superpoints[s].push(i);
        }
        Self { assignment, superpoints }
    }

    /// Unchecked constructor; run [`validate_partition`] on the result.
    pub fn from_raw(assignment: Vec<usize>, superpoints: Vec<Vec<usize>>) -> Self {
        Self { assignment, superpoints }
    }

    /// Every point in its own superpoint.
    pub fn identity(n: usize) -> Self {
        Self::from_raw((0..n).collect(), (0..n).map(|i| vec![i]).collect())
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn superpoints(&self) -> &[Vec<usize>] {
        &self.superpoints
    }

    pub fn members(&self, id: usize) -> &[usize] {
        &self.superpoints[id]
    }

    pub fn num_superpoints(&self) -> usize {
        self.superpoints.len()
    }

    pub fn num_points(&self) -> usize {
        self.assignment.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    /// Assignment vector length differs from the point count.
    LengthMismatch { points: usize, assignment: usize },
    /// Point appears in no member list.
    Uncovered { point: usize },
    /// Point appears in more than one member list (or twice in one).
    Overlap { point: usize, superpoints: Vec<usize> },
    EmptySuperpoint { superpoint: usize },
    /// Member list refers to a point index outside the cloud.
    PointOutOfRange { superpoint: usize, point: usize },
    /// Per-point id disagrees with the member list containing the point.
    AssignmentMismatch { point: usize, assigned: usize, member_of: usize },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks coverage, disjointness and non-emptiness of `partition` against `cloud`.
pub fn validate_partition(partition: &SuperpointPartition, cloud: &PointCloud) -> ValidationReport {
    let n = cloud.len();
    let mut violations = Vec::new();
    if partition.assignment.len() != n {
        violations.push(Violation::LengthMismatch { points: n, assignment: partition.assignment.len() });
    }
    let mut owners: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (s, members) in partition.superpoints.iter().enumerate() {
        if members.is_empty() {
            violations.push(Violation::EmptySuperpoint { superpoint: s });
        }
        for &p in members {
            if p >= n {
                violations.push(Violation::PointOutOfRange { superpoint: s, point: p });
            } else {
                owners[p].push(s);
            }
        }
    }
    for (p, owned) in owners.iter().enumerate() {
        match owned.as_slice() {
            [] => violations.push(Violation::Uncovered { point: p }),
            [s] => {
                if let Some(&a) = partition.assignment.get(p) {
                    if a != *s {
                        violations.push(Violation::AssignmentMismatch { point: p, assigned: a, member_of: *s });
                    }
                }
            }
            many => violations.push(Violation::Overlap { point: p, superpoints: many.to_vec() }),
        }
    }
    ValidationReport { violations }
}

/// Per-point class distributions, argmax labels and feature rows from a learner.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    num_classes: usize,
    probs: Vec<f64>,
    pred_labels: Vec<usize>,
    feature_dim: usize,
    features: Vec<f64>,
}

impl Prediction {
    /// `probs` and `features` are row-major with `num_classes` and `feature_dim` columns.
    pub fn new(num_classes: usize, probs: Vec<f64>, feature_dim: usize, features: Vec<f64>) -> Result<Self> {
        if num_classes == 0 || !probs.len().is_multiple_of(num_classes) {
            return Err(Error::invalid("probability matrix shape mismatch"));
        }
        let n = probs.len() / num_classes;
        if features.len() != n * feature_dim {
            return Err(Error::invalid("feature matrix shape mismatch"));
        }
        let mut pred_labels = Vec::with_capacity(n);
        for (i, row) in probs.chunks_exact(num_classes).enumerate() {
            check_prob_row(row).map_err(|e| Error::invalid(format!("point {i}: {e}")))?;
            pred_labels.push(argmax(row));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite feature"));
        }
        Ok(Self { num_classes, probs, pred_labels, feature_dim, features })
    }

    pub fn len(&self) -> usize {
        self.pred_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pred_labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn prob_row(&self, i: usize) -> &[f64] {
        &self.probs[i * self.num_classes..(i + 1) * self.num_classes]
    }

    pub fn prob_rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.probs.chunks_exact(self.num_classes)
    }

    pub fn pred_labels(&self) -> &[usize] {
        &self.pred_labels
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn feature_row(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Nonnegative, finite, and summing to 1 within [`PROB_SUM_TOL`].
pub fn check_prob_row(row: &[f64]) -> Result<()> {
    if row.is_empty() {
        return Err(Error::invalid("empty probability row"));
    }
    if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::invalid("probability row has negative or non-finite entry"));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > PROB_SUM_TOL {
        return Err(Error::invalid(format!("probability row sums to {sum}")));
    }
    Ok(())
}

/// Formats `v` rounded to 9 significant digits using the shortest decimal that reads back identically.
pub fn format_real(v: f64) -> String {
    let rounded: f64 = format!("{v:.8e}").parse().expect("formatted float parses");
    let s = format!("{rounded}");
    if s == "-0" {
        "0".to_string()
    } else {
        s
    }
}

/// Reads a cloud; a partition is attached when every line carries the 8th column.
pub fn load_point_cloud_with_partition(
    path: &Path,
    num_classes: usize,
) -> Result<(PointCloud, Option<SuperpointPartition>)> {
    let file = File::open(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    parse_point_cloud(BufReader::new(file), path, num_classes)
}

pub fn load_point_cloud(path: &Path, num_classes: usize) -> Result<PointCloud> {
    load_point_cloud_with_partition(path, num_classes).map(|(c, _)| c)
}

pub fn parse_point_cloud<R: BufRead>(
    reader: R,
    path: &Path,
    num_classes: usize,
) -> Result<(PointCloud, Option<SuperpointPartition>)> {
    let parse_err = |line: usize, msg: String| Error::Parse { path: path.to_path_buf(), line, msg };
    let mut points = Vec::new();
    let mut sp_ids = Vec::new();
    let mut columns: Option<usize> = None;
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 7 && fields.len() != 8 {
            return Err(parse_err(lineno, format!("expected 7 or 8 fields, found {}", fields.len())));
        }
        match columns {
            None => columns = Some(fields.len()),
            Some(c) if c != fields.len() => {
                return Err(parse_err(lineno, format!("expected {c} fields like earlier lines, found {}", fields.len())))
            }
            _ => {}
        }
        let mut reals = [0.0; 6];
        for (k, slot) in reals.iter_mut().enumerate() {
            *slot = fields[k]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(lineno, format!("field {} is not a finite number: {:?}", k + 1, fields[k])))?;
        }
        let label: usize = fields[6]
            .parse()
            .map_err(|_| parse_err(lineno, format!("label is not a nonnegative integer: {:?}", fields[6])))?;
        if label >= num_classes {
            return Err(parse_err(lineno, format!("label {label} >= number of classes {num_classes}")));
        }
        if fields.len() == 8 {
            let id: usize = fields[7]
                .parse()
                .map_err(|_| parse_err(lineno, format!("superpoint id is not a nonnegative integer: {:?}", fields[7])))?;
            sp_ids.push(id);
        }
        if reals[3..].iter().any(|c| *c < 0.0) {
            return Err(parse_err(lineno, "negative color channel".into()));
        }
        points.push(Point {
            position: [reals[0], reals[1], reals[2]],
            color: [reals[3], reals[4], reals[5]],
            gt_label: label,
        });
    }
    if points.is_empty() {
        return Err(parse_err(0, "file contains no points".into()));
    }
    // 0..255 colors are detected per file.
    if points.iter().any(|p| p.color.iter().any(|c| *c > 1.0)) {
        for p in &mut points {
            for c in &mut p.color {
                *c /= 255.0;
            }
        }
        if points.iter().any(|p| p.color.iter().any(|c| *c > 1.0)) {
            return Err(parse_err(0, "color channel exceeds 255".into()));
        }
    }
    let cloud = PointCloud::new(points, num_classes)?;
    let partition = (!sp_ids.is_empty()).then(|| SuperpointPartition::from_assignment(&sp_ids));
    Ok((cloud, partition))
}

pub fn write_point_cloud<W: Write>(
    mut out: W,
    cloud: &PointCloud,
    partition: Option<&SuperpointPartition>,
) -> std::io::Result<()> {
    writeln!(out, "# x y z r g b label{}", if partition.is_some() { " superpoint" } else { "" })?;
    for (i, p) in cloud.points().iter().enumerate() {
        let [x, y, z] = p.position;
        let [r, g, b] = p.color;
        write!(
            out,
            "{} {} {} {} {} {} {}",
            format_real(x),
            format_real(y),
            format_real(z),
            format_real(r),
            format_real(g),
            format_real(b),
            p.gt_label
        )?;
        if let Some(part) = partition {
            write!(out, " {}", part.assignment()[i])?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn save_point_cloud(path: &Path, cloud: &PointCloud, partition: Option<&SuperpointPartition>) -> Result<()> {
    let io_err = |source| Error::Io { path: path.to_path_buf(), source };
    let file = File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    write_point_cloud(&mut w, cloud, partition).map_err(io_err)?;
    w.flush().map_err(io_err)
}
