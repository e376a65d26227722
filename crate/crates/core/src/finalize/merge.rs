//! Local and global merging of redundant 3D lines.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{Matrix3, SymmetricEigen};

use super::LineMap3D;
use crate::geometry::{LineRef, LineSegment3D, Vec3};

/// Points sampled per line for the line-to-line distance.
pub const DISTANCE_SAMPLES: usize = 10;

pub struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self { parent: (0..n).collect(), rank: vec![0; n] }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        while self.parent[x] != root {
            let next = self.parent[x];
            self.parent[x] = root;
            x = next;
        }
        root
    }

    pub fn union(&mut self, a: usize, b: usize) {
        let (mut a, mut b) = (self.find(a), self.find(b));
        if a == b {
            return;
        }
        if self.rank[a] < self.rank[b] {
            std::mem::swap(&mut a, &mut b);
        }
        self.parent[b] = a;
        if self.rank[a] == self.rank[b] {
            self.rank[a] += 1;
        }
    }

    /// Components as sorted member lists, ordered by smallest member.
    pub fn components(&mut self) -> Vec<Vec<usize>> {
        let mut by_root: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for i in 0..self.parent.len() {
            let r = self.find(i);
            by_root.entry(r).or_default().push(i);
        }
        let mut comps: Vec<Vec<usize>> = by_root.into_values().collect();
        comps.sort_by_key(|c| c[0]);
        comps
    }
}

/// DBSCAN over `n` items; returns the cluster of each item, `None` for noise.
pub fn dbscan(n: usize, eps: f64, min_pts: usize, dist: impl Fn(usize, usize) -> f64) -> Vec<Option<usize>> {
    let neighbors = |i: usize| (0..n).filter(|&j| dist(i, j) <= eps).collect::<Vec<_>>();
    let mut label: Vec<Option<usize>> = vec![None; n];
    let mut visited = vec![false; n];
    let mut next = 0;
    for i in 0..n {
        if visited[i] {
            continue;
        }
        visited[i] = true;
        let nb = neighbors(i);
        if nb.len() < min_pts {
            continue;
        }
        let c = next;
        next += 1;
        label[i] = Some(c);
        let mut queue = nb;
        while let Some(j) = queue.pop() {
            if label[j].is_none() {
                label[j] = Some(c);
            }
            if visited[j] {
                continue;
            }
            visited[j] = true;
            let nj = neighbors(j);
            if nj.len() >= min_pts {
                queue.extend(nj);
            }
        }
    }
    label
}

fn point_line_distance_3d(p: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let d = b - a;
    let l = d.norm();
    if l == 0.0 {
        return (p - a).norm();
    }
    (p - a).cross(&d).norm() / l
}

/// Mean perpendicular distance of evenly spaced points of `a` to the support
/// line of `b`, symmetrized by taking the larger direction.
pub fn line_distance(a: &LineSegment3D, b: &LineSegment3D) -> f64 {
    let one_way = |x: &LineSegment3D, y: &LineSegment3D| {
        (0..DISTANCE_SAMPLES)
            .map(|i| {
                let s = i as f64 / (DISTANCE_SAMPLES - 1) as f64;
                point_line_distance_3d(&(x.u + (x.v - x.u) * s), &y.u, &y.v)
            })
            .sum::<f64>()
            / DISTANCE_SAMPLES as f64
    };
    one_way(a, b).max(one_way(b, a))
}

fn union_refs<'a>(lists: impl Iterator<Item = &'a Vec<LineRef>>) -> Vec<LineRef> {
    lists.flatten().copied().collect::<BTreeSet<_>>().into_iter().collect()
}

/// Fits one segment to all endpoints of `members`: the principal direction
/// through their mean, spanning the extreme endpoint projections.
pub fn pca_merge(members: &[&LineSegment3D]) -> LineSegment3D {
    assert!(!members.is_empty());
    let pts: Vec<Vec3> = members.iter().flat_map(|l| [l.u, l.v]).collect();
    let mean = pts.iter().sum::<Vec3>() / pts.len() as f64;
    let mut cov = Matrix3::zeros();
    for p in &pts {
        let d = p - mean;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let k = eig.eigenvalues.imax();
    let mut dir: Vec3 = eig.eigenvectors.column(k).into_owned();
    // canonical sign: largest component positive
    if dir[dir.iamax()] < 0.0 {
        dir = -dir;
    }
    let (mut tmin, mut tmax) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in &pts {
        let t = (p - mean).dot(&dir);
        tmin = tmin.min(t);
        tmax = tmax.max(t);
    }
    let first = members.iter().min_by_key(|l| (l.plane, l.edge)).expect("nonempty");
    LineSegment3D {
        u: mean + dir * tmin,
        v: mean + dir * tmax,
        plane: first.plane,
        edge: first.edge,
        track: union_refs(members.iter().map(|l| &l.track)),
        sources: union_refs(members.iter().map(|l| &l.sources)),
    }
}

fn groups_by_source(map: &LineMap3D) -> BTreeMap<LineRef, Vec<usize>> {
    let mut groups: BTreeMap<LineRef, Vec<usize>> = BTreeMap::new();
    for (i, l) in map.lines.iter().enumerate() {
        for s in l.sources.iter().collect::<BTreeSet<_>>() {
            groups.entry(*s).or_default().push(i);
        }
    }
    groups
}

fn merge_group(map: &LineMap3D, idx: &[usize]) -> LineSegment3D {
    if idx.len() == 1 {
        return map.lines[idx[0]].clone();
    }
    let members: Vec<&LineSegment3D> = idx.iter().map(|&i| &map.lines[i]).collect();
    pca_merge(&members)
}

/// Merges the lines produced by each detection into one segment per
/// detection. Lines without sources pass through unchanged.
pub fn local_merge(map: &LineMap3D) -> LineMap3D {
    let groups = groups_by_source(map);
    let mut seen: BTreeSet<Vec<usize>> = BTreeSet::new();
    let mut lines = Vec::new();
    for members in groups.values() {
        if seen.insert(members.clone()) {
            lines.push(merge_group(map, members));
        }
    }
    lines.extend(map.lines.iter().filter(|l| l.sources.is_empty()).cloned());
    LineMap3D { lines }
}

/// Clusters the lines of each detection with DBSCAN (`minPts = 1`), links
/// clusters sharing lines across detections into global groups, and fits one
/// segment per group.
pub fn global_merge(map: &LineMap3D, tau: f64) -> LineMap3D {
    let mut uf = UnionFind::new(map.lines.len());
    for members in groups_by_source(map).values() {
        let labels = dbscan(members.len(), tau, 1, |a, b| line_distance(&map.lines[members[a]], &map.lines[members[b]]));
        let mut first_of: BTreeMap<usize, usize> = BTreeMap::new();
        for (k, lab) in labels.iter().enumerate() {
            let Some(c) = lab else { continue };
            match first_of.get(c) {
                Some(&f) => uf.union(f, members[k]),
                None => {
                    first_of.insert(*c, members[k]);
                }
            }
        }
    }
    let lines = uf.components().iter().map(|c| merge_group(map, c)).collect();
    LineMap3D { lines }
}
