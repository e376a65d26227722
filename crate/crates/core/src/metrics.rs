//! Point-sampled evaluation of 3D line maps: M1 (accuracy, completeness,
//! precision, recall, F1 at junction and line level) and M2 (track length
//! recall and inlier percentage).

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{LineSegment3D, PlanarPrimitive, Vec3};

pub const M1_SAMPLES: usize = 100;
pub const M2_SAMPLES: usize = 1000;
pub const DEFAULT_TAU: f64 = 0.05;
/// Mesh sampling density, points per unit area.
pub const DEFAULT_MESH_DENSITY: f64 = 1e4;

/// `n >= 2` evenly spaced points from `u` to `v`, both endpoints included.
pub fn sample_line_points(line: &LineSegment3D, n: usize) -> Result<Vec<Vec3>> {
    if n < 2 {
        return Err(Error::Config(format!("need at least 2 samples per line, got {n}")));
    }
    let d = line.v - line.u;
    Ok((0..n).map(|i| if i + 1 == n { line.v } else { line.u + d * (i as f64 / (n - 1) as f64) }).collect())
}

/// Balanced 3D KD-tree over a point set, stored implicitly: every slice's
/// median is its node, split on the axis `depth % 3`.
#[derive(Clone, Debug)]
pub struct KdTree {
    pts: Vec<Vec3>,
}

impl KdTree {
    pub fn build(points: &[Vec3]) -> Self {
        let mut pts = points.to_vec();
        build_rec(&mut pts, 0);
        Self { pts }
    }

    pub fn len(&self) -> usize {
        self.pts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pts.is_empty()
    }

    /// Distance to the nearest stored point, `None` when empty.
    pub fn nearest_distance(&self, q: &Vec3) -> Option<f64> {
        let mut best = f64::INFINITY;
        search(&self.pts, 0, q, &mut best);
        best.is_finite().then(|| best.sqrt())
    }
}

fn build_rec(p: &mut [Vec3], depth: usize) {
    if p.len() <= 1 {
        return;
    }
    let axis = depth % 3;
    let mid = p.len() / 2;
    p.select_nth_unstable_by(mid, |a, b| a[axis].total_cmp(&b[axis]));
    let (l, r) = p.split_at_mut(mid);
    build_rec(l, depth + 1);
    build_rec(&mut r[1..], depth + 1);
}

fn search(p: &[Vec3], depth: usize, q: &Vec3, best: &mut f64) {
    if p.is_empty() {
        return;
    }
    let axis = depth % 3;
    let mid = p.len() / 2;
    let d2 = (p[mid] - q).norm_squared();
    if d2 < *best {
        *best = d2;
    }
    let diff = q[axis] - p[mid][axis];
    let (near, far) = if diff < 0.0 { (&p[..mid], &p[mid + 1..]) } else { (&p[mid + 1..], &p[..mid]) };
    search(near, depth + 1, q, best);
    if diff * diff < *best {
        search(far, depth + 1, q, best);
    }
}

/// Nearest-neighbor distance from every query to `targets`, through a
/// KD-tree or by exhaustive scan.
pub fn nearest_distances(queries: &[Vec3], targets: &[Vec3], use_index: bool) -> Vec<f64> {
    if use_index {
        let tree = KdTree::build(targets);
        queries.par_iter().map(|q| tree.nearest_distance(q).unwrap_or(f64::INFINITY)).collect()
    } else {
        queries
            .par_iter()
            .map(|q| targets.iter().map(|t| (t - q).norm_squared()).fold(f64::INFINITY, f64::min).sqrt())
            .collect()
    }
}

/// Ground-truth geometry as a point set.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub points: Vec<Vec3>,
}

impl GroundTruth {
    pub fn from_points(points: Vec<Vec3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyInput("ground-truth points"));
        }
        Ok(Self { points })
    }

    /// `per_line` samples along every line.
    pub fn from_lines(lines: &[LineSegment3D], per_line: usize) -> Result<Self> {
        let mut points = Vec::with_capacity(lines.len() * per_line);
        for l in lines {
            points.extend(sample_line_points(l, per_line)?);
        }
        Self::from_points(points)
    }

    /// Area-weighted uniform samples of a triangle mesh, `density` points per
    /// unit area (at least one).
    pub fn from_mesh(triangles: &[[Vec3; 3]], density: f64, seed: u64) -> Result<Self> {
        if !(density > 0.0) {
            return Err(Error::Config(format!("mesh density must be positive, got {density}")));
        }
        let areas: Vec<f64> = triangles.iter().map(|[a, b, c]| 0.5 * (b - a).cross(&(c - a)).norm()).collect();
        let total: f64 = areas.iter().sum();
        if triangles.is_empty() || !(total > 0.0) {
            return Err(Error::EmptyInput("mesh"));
        }
        let n = ((total * density).round() as usize).max(1);
        let cdf: Vec<f64> = areas
            .iter()
            .scan(0.0, |acc, a| {
                *acc += a;
                Some(*acc / total)
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points = (0..n)
            .map(|_| {
                let x: f64 = rng.random();
                let k = cdf.partition_point(|c| *c < x).min(triangles.len() - 1);
                let [a, b, c] = triangles[k];
                let (mut s, mut t): (f64, f64) = (rng.random(), rng.random());
                if s + t > 1.0 {
                    (s, t) = (1.0 - s, 1.0 - t);
                }
                a + (b - a) * s + (c - a) * t
            })
            .collect();
        Self::from_points(points)
    }

    /// Samples the rectangles of a plane set as a mesh.
    pub fn from_planes(planes: &[PlanarPrimitive], density: f64, seed: u64) -> Result<Self> {
        let tris: Vec<[Vec3; 3]> = planes
            .iter()
            .flat_map(|p| {
                let v = p.vertices();
                [[v[0], v[1], v[2]], [v[0], v[2], v[3]]]
            })
            .collect();
        Self::from_mesh(&tris, density, seed)
    }
}

/// One level of the M1 metrics.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct M1Block {
    pub acc: f64,
    pub comp: f64,
    pub prec: f64,
    pub recall: f64,
    pub f1: f64,
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn frac_within(xs: &[f64], tau: f64) -> f64 {
    xs.iter().filter(|d| **d <= tau).count() as f64 / xs.len() as f64
}

/// M1 block of predicted points against ground-truth points.
pub fn m1_block(pred: &[Vec3], gt: &[Vec3], tau: f64, use_index: bool) -> Result<M1Block> {
    if pred.is_empty() {
        return Err(Error::EmptyInput("predicted points"));
    }
    if gt.is_empty() {
        return Err(Error::EmptyInput("ground-truth points"));
    }
    let d_pred = nearest_distances(pred, gt, use_index);
    let d_gt = nearest_distances(gt, pred, use_index);
    let (prec, recall) = (frac_within(&d_pred, tau), frac_within(&d_gt, tau));
    Ok(M1Block { acc: mean(&d_pred), comp: mean(&d_gt), prec, recall, f1: f1(prec, recall) })
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct M1Report {
    pub tau: f64,
    pub junction: M1Block,
    pub line: M1Block,
    pub lines: usize,
}

/// Junction level uses the two endpoints of every line, line level 100
/// samples per line.
pub fn m1_metrics(pred: &[LineSegment3D], gt: &GroundTruth, tau: f64, use_index: bool) -> Result<M1Report> {
    if pred.is_empty() {
        return Err(Error::EmptyInput("predicted lines"));
    }
    let ends: Vec<Vec3> = pred.iter().flat_map(|l| [l.u, l.v]).collect();
    let mut samples = Vec::with_capacity(pred.len() * M1_SAMPLES);
    for l in pred {
        samples.extend(sample_line_points(l, M1_SAMPLES)?);
    }
    Ok(M1Report {
        tau,
        junction: m1_block(&ends, &gt.points, tau, use_index)?,
        line: m1_block(&samples, &gt.points, tau, use_index)?,
        lines: pred.len(),
    })
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct M2Report {
    pub thresholds: Vec<f64>,
    /// Length of line portions within each threshold.
    pub recall: Vec<f64>,
    /// Percentage of lines with any sample within each threshold.
    pub precision: Vec<f64>,
    pub avg_image_supports: f64,
    pub avg_line_supports: f64,
}

pub fn m2_metrics(pred: &[LineSegment3D], gt: &GroundTruth, thresholds: &[f64], use_index: bool) -> Result<M2Report> {
    if pred.is_empty() {
        return Err(Error::EmptyInput("predicted lines"));
    }
    if gt.points.is_empty() {
        return Err(Error::EmptyInput("ground-truth points"));
    }
    let tree = use_index.then(|| KdTree::build(&gt.points));
    let per_line: Vec<Vec<f64>> = pred
        .par_iter()
        .map(|l| {
            let pts = sample_line_points(l, M2_SAMPLES).expect("sample count is at least 2");
            match &tree {
                Some(t) => pts.iter().map(|p| t.nearest_distance(p).unwrap_or(f64::INFINITY)).collect(),
                None => nearest_distances(&pts, &gt.points, false),
            }
        })
        .collect();
    let m = pred.len() as f64;
    let mut recall = Vec::with_capacity(thresholds.len());
    let mut precision = Vec::with_capacity(thresholds.len());
    for &tau in thresholds {
        let ratios: Vec<f64> = per_line.iter().map(|d| frac_within(d, tau)).collect();
        recall.push(pred.iter().zip(&ratios).map(|(l, r)| l.length() * r).sum());
        precision.push(100.0 * ratios.iter().filter(|r| **r > 0.0).count() as f64 / m);
    }
    Ok(M2Report {
        thresholds: thresholds.to_vec(),
        recall,
        precision,
        avg_image_supports: pred.iter().map(|l| l.image_supports() as f64).sum::<f64>() / m,
        avg_line_supports: pred.iter().map(|l| l.track.len() as f64).sum::<f64>() / m,
    })
}

/// Fraction of each GT line's `n` samples lying within `tau` of the
/// predicted lines (sampled at `n` points each as well).
pub fn line_coverage(gt: &[LineSegment3D], pred: &[LineSegment3D], tau: f64, n: usize) -> Result<Vec<f64>> {
    if pred.is_empty() {
        return Ok(vec![0.0; gt.len()]);
    }
    let mut targets = Vec::with_capacity(pred.len() * n);
    for l in pred {
        targets.extend(sample_line_points(l, n)?);
    }
    let tree = KdTree::build(&targets);
    gt.iter()
        .map(|g| {
            let pts = sample_line_points(g, n)?;
            Ok(frac_within(&pts.iter().map(|p| tree.nearest_distance(p).unwrap_or(f64::INFINITY)).collect::<Vec<_>>(), tau))
        })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub m1: M1Report,
    pub m2: Option<M2Report>,
    /// Free-form unit note written into the header.
    pub units: String,
}

impl MetricsReport {
    /// Flat `key=value` text, one entry per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# units={}", if self.units.is_empty() { "world" } else { &self.units });
        let _ = writeln!(s, "tau={}", self.m1.tau);
        let _ = writeln!(s, "lines={}", self.m1.lines);
        for (level, b) in [("J", &self.m1.junction), ("L", &self.m1.line)] {
            for (k, v) in [("ACC", b.acc), ("COMP", b.comp), ("PREC", b.prec), ("RECALL", b.recall), ("F1", b.f1)] {
                let _ = writeln!(s, "{k}-{level}={v}");
            }
        }
        if let Some(m2) = &self.m2 {
            for ((t, r), p) in m2.thresholds.iter().zip(&m2.recall).zip(&m2.precision) {
                let _ = writeln!(s, "R@{t}={r}");
                let _ = writeln!(s, "P@{t}={p}");
            }
            let _ = writeln!(s, "avg_image_supports={}", m2.avg_image_supports);
            let _ = writeln!(s, "avg_line_supports={}", m2.avg_line_supports);
        }
        s
    }
}
