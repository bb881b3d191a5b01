//! Superpoint generation by voxel seeding and greedy region growing, plus
//! region purity statistics.
//!
//! Each occupied voxel is an atom. Regions grow breadth-first over the
//! 26-connected voxel adjacency, admitting an atom when its normal stays
//! within `normal_threshold` of the seed normal, its mean color stays within
//! `color_threshold` of the region's running mean color, and its centroid
//! lies within `max_extent` of the seed centroid. Regions below `min_region`
//! points are then folded into the adjacent region with the nearest centroid.
//! Atoms are never split, so coverage and disjointness hold by construction.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cloud::{PointCloud, SuperpointPartition};
use crate::error::{Error, Result};
use crate::spatial::KdTree;

/// Neighborhood size for plane-fit normals.
pub const NORMAL_NEIGHBORS: usize = 10;
const UP: [f64; 3] = [0.0, 0.0, 1.0];

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionerParams {
    /// Voxel edge length in meters.
    pub voxel_size: f64,
    /// Largest allowed distance between an atom's mean color and the region mean, in `[0, sqrt(3)]`.
    pub color_threshold: f64,
    /// Largest allowed angle between an atom normal and the seed normal, radians.
    pub normal_threshold: f64,
    pub min_region: usize,
    /// Largest distance from the seed centroid an admitted atom centroid may have, meters.
    pub max_extent: f64,
    pub rng_seed: u64,
}

impl Default for PartitionerParams {
    fn default() -> Self {
        Self {
            voxel_size: 0.1,
            color_threshold: 0.15,
            normal_threshold: 0.35,
            min_region: 8,
            max_extent: 0.35,
            rng_seed: 0,
        }
    }
}

impl PartitionerParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.voxel_size > 0.0 && self.voxel_size.is_finite()) {
            return Err(Error::config("partition.voxel_size must be positive and finite"));
        }
        if !(0.0..=3f64.sqrt() + 1e-12).contains(&self.color_threshold) {
            return Err(Error::config("partition.color_threshold must lie in [0, sqrt(3)]"));
        }
        if self.normal_threshold.is_nan() || self.normal_threshold < 0.0 {
            return Err(Error::config("partition.normal_threshold must be nonnegative"));
        }
        if self.min_region == 0 {
            return Err(Error::config("partition.min_region must be at least 1"));
        }
        if self.max_extent.is_nan() || self.max_extent < 0.0 {
            return Err(Error::config("partition.max_extent must be nonnegative"));
        }
        Ok(())
    }
}

/// Unit normals from a plane fit over each point's nearest neighbors (itself included).
pub fn estimate_normals(cloud: &PointCloud) -> Vec<[f64; 3]> {
    let positions: Vec<[f64; 3]> = cloud.positions().collect();
    let tree = KdTree::new(positions.clone());
    positions
        .par_iter()
        .map(|p| {
            let nbrs = tree.knn(p, NORMAL_NEIGHBORS);
            let pts: Vec<[f64; 3]> = nbrs.iter().map(|n| *tree.point(n.index)).collect();
            plane_normal(&pts)
        })
        .collect()
}

/// Smallest-variance direction of `pts`; the up axis when the spread has rank < 2.
pub fn plane_normal(pts: &[[f64; 3]]) -> [f64; 3] {
    if pts.len() < 3 {
        return UP;
    }
    let n = pts.len() as f64;
    let mut mean = Vector3::zeros();
    for p in pts {
        mean += Vector3::from(*p);
    }
    mean /= n;
    let mut cov = Matrix3::zeros();
    for p in pts {
        let d = Vector3::from(*p) - mean;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = SymmetricEigen::new(cov);
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let largest = eig.eigenvalues[idx[0]];
    let middle = eig.eigenvalues[idx[1]];
    if largest <= 0.0 || middle <= largest * 1e-10 {
        return UP;
    }
    let v = eig.eigenvectors.column(idx[2]);
    let norm = v.norm();
    if norm.is_nan() || norm <= 0.0 {
        return UP;
    }
    let mut out = [v[0] / norm, v[1] / norm, v[2] / norm];
    canonical_sign(&mut out);
    out
}

/// Flips `n` so its first nonzero component is positive.
fn canonical_sign(n: &mut [f64; 3]) {
    if let Some(&first) = n.iter().find(|c| **c != 0.0) {
        if first < 0.0 {
            for c in n.iter_mut() {
                *c = -*c;
            }
        }
    }
}

/// Unoriented angle between two unit vectors, in `[0, pi/2]`.
fn normal_angle(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dot = (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]).abs().min(1.0);
    dot.acos()
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    crate::spatial::squared_distance(a, b).sqrt()
}

type VoxelKey = [i64; 3];

struct Atom {
    key: VoxelKey,
    members: Vec<usize>,
    centroid: [f64; 3],
    color: [f64; 3],
    normal: [f64; 3],
}

fn build_atoms(cloud: &PointCloud, normals: &[[f64; 3]], voxel: f64) -> Vec<Atom> {
    let (lo, _) = cloud.bounds();
    let mut voxels: BTreeMap<VoxelKey, Vec<usize>> = BTreeMap::new();
    for (i, p) in cloud.points().iter().enumerate() {
        let key = [0, 1, 2].map(|a| ((p.position[a] - lo[a]) / voxel).floor() as i64);
        voxels.entry(key).or_default().push(i);
    }
    voxels
        .into_iter()
        .map(|(key, members)| {
            let n = members.len() as f64;
            let mut centroid = [0.0; 3];
            let mut color = [0.0; 3];
            let mut normal = [0.0; 3];
            let reference = normals[members[0]];
            for &i in &members {
                let p = &cloud.points()[i];
                let ni = normals[i];
                let sign = if ni[0] * reference[0] + ni[1] * reference[1] + ni[2] * reference[2] < 0.0 { -1.0 } else { 1.0 };
                for a in 0..3 {
                    centroid[a] += p.position[a];
                    color[a] += p.color[a];
                    normal[a] += sign * ni[a];
                }
            }
            for a in 0..3 {
                centroid[a] /= n;
                color[a] /= n;
            }
            let len = (normal[0] * normal[0] + normal[1] * normal[1] + normal[2] * normal[2]).sqrt();
            let normal = if len > 0.0 { normal.map(|c| c / len) } else { UP };
            Atom { key, members, centroid, color, normal }
        })
        .collect()
}

fn atom_adjacency(atoms: &[Atom]) -> Vec<Vec<usize>> {
    let index: BTreeMap<VoxelKey, usize> = atoms.iter().enumerate().map(|(i, a)| (a.key, i)).collect();
    atoms
        .iter()
        .map(|atom| {
            let mut out = Vec::new();
            for dx in -1..=1 {
                for dy in -1..=1 {
                    for dz in -1..=1 {
                        if dx == 0 && dy == 0 && dz == 0 {
                            continue;
                        }
                        let k = [atom.key[0] + dx, atom.key[1] + dy, atom.key[2] + dz];
                        if let Some(&j) = index.get(&k) {
                            out.push(j);
                        }
                    }
                }
            }
            out
        })
        .collect()
}

/// Groups `cloud` into superpoints. Deterministic for fixed `params`.
pub fn generate_superpoints(cloud: &PointCloud, params: &PartitionerParams) -> Result<SuperpointPartition> {
    params.validate()?;
    if cloud.is_empty() {
        return Err(Error::invalid("cannot partition an empty cloud"));
    }
    let normals = estimate_normals(cloud);
    let atoms = build_atoms(cloud, &normals, params.voxel_size);
    let adjacency = atom_adjacency(&atoms);

    let mut seeds: Vec<usize> = (0..atoms.len()).collect();
    seeds.shuffle(&mut ChaCha8Rng::seed_from_u64(params.rng_seed));

    const UNASSIGNED: usize = usize::MAX;
    let mut region_of = vec![UNASSIGNED; atoms.len()];
    let mut regions = 0usize;
    let mut queue = VecDeque::new();
    for &seed in &seeds {
        if region_of[seed] != UNASSIGNED {
            continue;
        }
        let region = regions;
        regions += 1;
        region_of[seed] = region;
        let seed_atom = &atoms[seed];
        let mut color_sum = seed_atom.color.map(|c| c * seed_atom.members.len() as f64);
        let mut count = seed_atom.members.len() as f64;
        queue.clear();
        queue.push_back(seed);
        while let Some(cur) = queue.pop_front() {
            for &nb in &adjacency[cur] {
                if region_of[nb] != UNASSIGNED {
                    continue;
                }
                let atom = &atoms[nb];
                let mean_color = color_sum.map(|c| c / count);
                if normal_angle(&atom.normal, &seed_atom.normal) > params.normal_threshold
                    || dist(&atom.color, &mean_color) > params.color_threshold
                    || dist(&atom.centroid, &seed_atom.centroid) > params.max_extent
                {
                    continue;
                }
                region_of[nb] = region;
                let m = atom.members.len() as f64;
                for (sum, c) in color_sum.iter_mut().zip(atom.color) {
                    *sum += c * m;
                }
                count += m;
                queue.push_back(nb);
            }
        }
    }

    merge_small_regions(&atoms, &adjacency, &mut region_of, regions, params.min_region);

    let mut assignment = vec![0usize; cloud.len()];
    for (a, atom) in atoms.iter().enumerate() {
        for &i in &atom.members {
            assignment[i] = region_of[a];
        }
    }
    Ok(SuperpointPartition::from_assignment(&assignment))
}

fn merge_small_regions(
    atoms: &[Atom],
    adjacency: &[Vec<usize>],
    region_of: &mut [usize],
    regions: usize,
    min_region: usize,
) {
    let mut atoms_of: Vec<Vec<usize>> = vec![Vec::new(); regions];
    for (a, &r) in region_of.iter().enumerate() {
        atoms_of[r].push(a);
    }
    let mut size = vec![0usize; regions];
    let mut sum = vec![[0.0f64; 3]; regions];
    for (a, atom) in atoms.iter().enumerate() {
        let r = region_of[a];
        size[r] += atom.members.len();
        for (s, c) in sum[r].iter_mut().zip(atom.centroid) {
            *s += c * atom.members.len() as f64;
        }
    }
    let centroid = |r: usize, size: &[usize], sum: &[[f64; 3]]| sum[r].map(|c| c / size[r] as f64);

    // Smallest first, lowest id on ties. Entries go stale when a region
    // grows or vanishes and are skipped on pop. A region with no adjacent
    // region is its own connected component and stays as it is.
    let mut queue: BinaryHeap<Reverse<(usize, usize)>> =
        (0..regions).filter(|&r| size[r] > 0 && size[r] < min_region).map(|r| Reverse((size[r], r))).collect();
    while let Some(Reverse((popped, small))) = queue.pop() {
        if size[small] != popped {
            continue;
        }
        let here = centroid(small, &size, &sum);
        let mut target: Option<(f64, usize)> = None;
        for &a in &atoms_of[small] {
            for &nb in &adjacency[a] {
                let r = region_of[nb];
                if r == small {
                    continue;
                }
                let d = dist(&here, &centroid(r, &size, &sum));
                let better = match target {
                    None => true,
                    Some((bd, br)) => d < bd || (d == bd && r < br),
                };
                if better {
                    target = Some((d, r));
                }
            }
        }
        if let Some((_, into)) = target {
            let moved = std::mem::take(&mut atoms_of[small]);
            for &a in &moved {
                region_of[a] = into;
            }
            atoms_of[into].extend(moved);
            size[into] += size[small];
            size[small] = 0;
            let s = sum[small];
            for k in 0..3 {
                sum[into][k] += s[k];
            }
            sum[small] = [0.0; 3];
            if size[into] < min_region {
                queue.push(Reverse((size[into], into)));
            }
        }
    }
}

/// Label histogram keyed by class id.
fn histogram(region: &[usize], labels: &[usize]) -> BTreeMap<usize, usize> {
    let mut counts = BTreeMap::new();
    for &i in region {
        *counts.entry(labels[i]).or_insert(0) += 1;
    }
    counts
}

/// Most frequent label in `region` with its count; lowest class id on ties.
pub fn majority(region: &[usize], labels: &[usize]) -> Result<(usize, usize)> {
    if region.is_empty() {
        return Err(Error::invalid("empty region"));
    }
    let mut best = (0, 0);
    // BTreeMap iterates classes ascending, so strict `>` keeps the lowest id.
    for (class, count) in histogram(region, labels) {
        if count > best.1 {
            best = (class, count);
        }
    }
    Ok(best)
}

pub fn dominant_class(region: &[usize], labels: &[usize]) -> Result<usize> {
    majority(region, labels).map(|(c, _)| c)
}

/// Share of the region carrying its most frequent ground-truth label.
pub fn purity(region: &[usize], gt_labels: &[usize]) -> Result<f64> {
    majority(region, gt_labels).map(|(_, count)| count as f64 / region.len() as f64)
}
