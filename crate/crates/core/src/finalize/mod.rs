//! Line map finalization: inlier extraction of plane edges, multi-view track
//! building and line merging.

pub mod measures;
pub mod merge;

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;

use crate::assign::{build_assignments, project_edges};
use crate::geometry::{CameraView, EdgeIndex, LineRef, LineSegment3D, PlanarPrimitive, PlaneId, Vec2};
pub use measures::{angle_distance, max_orthogonal_distance, overlap_ratio};
pub use merge::{global_merge, local_merge, pca_merge};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Thresholds {
    /// Extraction: maximum endpoint distance (pixels).
    pub extract_tau_d: f64,
    /// Extraction: maximum angle (radians).
    pub extract_tau_alpha: f64,
    /// Tracking: angle must be below this (radians).
    pub track_tau_a: f64,
    /// Tracking: endpoint distance must be below this (pixels).
    pub track_tau_d: f64,
    /// Tracking: overlap ratio must exceed this.
    pub track_tau_o: f64,
    /// Merging: DBSCAN radius in world units.
    pub tau_dbscan: f64,
    /// Extraction: distinct views that must contain a passing assignment.
    pub min_support_views: usize,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            extract_tau_d: 1.0,
            extract_tau_alpha: 0.01,
            track_tau_a: 0.01,
            track_tau_d: 2.0,
            track_tau_o: 0.2,
            tau_dbscan: 0.01,
            min_support_views: 1,
        }
    }
}

/// Finalized 3D line segments.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LineMap3D {
    pub lines: Vec<LineSegment3D>,
}

impl LineMap3D {
    pub fn len(&self) -> usize {
        self.lines.len()
    }
    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }
}

/// `true` when the projected edge is an inlier of the detection.
pub fn passes_extraction(proj: (&Vec2, &Vec2), det: (&Vec2, &Vec2), th: &Thresholds) -> bool {
    let Ok(ang) = angle_distance(det, proj) else { return false };
    let Ok(dist) = max_orthogonal_distance(proj, det) else { return false };
    ang <= th.extract_tau_alpha && dist <= th.extract_tau_d
}

/// Keeps every plane edge that explains at least one detection within the
/// extraction thresholds, in at least `min_support_views` distinct views.
pub fn extract_line_map(
    planes: &[PlanarPrimitive],
    views: &[CameraView],
    th: &Thresholds,
    lambda: f64,
) -> LineMap3D {
    let per_view: Vec<Vec<(PlaneId, EdgeIndex, LineRef)>> = views
        .iter()
        .map(|view| {
            let mut cache: BTreeMap<usize, Option<[(Vec2, Vec2); 4]>> = BTreeMap::new();
            let mut out = Vec::new();
            for a in build_assignments(view, planes, lambda) {
                let proj = *cache.entry(a.plane_index).or_insert_with(|| project_edges(&planes[a.plane_index], view).ok());
                let Some(proj) = proj else { continue };
                let Some(det) = view.lines.iter().find(|l| l.index == a.line.line) else { continue };
                let (pa, pb) = &proj[(a.edge.get() - 1) as usize];
                if passes_extraction((pa, pb), (&det.a, &det.b), th) {
                    out.push((a.plane, a.edge, a.line));
                }
            }
            out
        })
        .collect();

    let mut passing: BTreeMap<(PlaneId, EdgeIndex), BTreeSet<LineRef>> = BTreeMap::new();
    for (plane, edge, src) in per_view.into_iter().flatten() {
        passing.entry((plane, edge)).or_default().insert(src);
    }
    let by_id: BTreeMap<PlaneId, &PlanarPrimitive> = planes.iter().map(|p| (p.id, p)).collect();
    let lines = passing
        .into_iter()
        .filter(|(_, srcs)| srcs.iter().map(|s| s.view).collect::<BTreeSet<_>>().len() >= th.min_support_views.max(1))
        .map(|((plane, edge), srcs)| {
            let mut l = by_id[&plane].edges()[(edge.get() - 1) as usize].clone();
            l.sources = srcs.into_iter().collect();
            l
        })
        .collect();
    LineMap3D { lines }
}

/// Whether detection `det` supports a line whose projection is `proj`.
pub fn track_supports(proj: (&Vec2, &Vec2), det: (&Vec2, &Vec2), th: &Thresholds) -> bool {
    let (Ok(ang), Ok(dist), Ok(ov)) =
        (angle_distance(det, proj), max_orthogonal_distance(proj, det), overlap_ratio(proj, det))
    else {
        return false;
    };
    ang < th.track_tau_a && dist < th.track_tau_d && ov > th.track_tau_o
}

/// Replaces every line's track with the detections satisfying all three
/// track criteria.
pub fn build_tracks(map: &LineMap3D, views: &[CameraView], th: &Thresholds) -> LineMap3D {
    let lines = map
        .lines
        .par_iter()
        .map(|line| {
            let mut track = Vec::new();
            for view in views {
                let (Ok((pu, _)), Ok((pv, _))) = (view.project_point(&line.u), view.project_point(&line.v)) else {
                    continue;
                };
                for det in &view.lines {
                    if track_supports((&pu, &pv), (&det.a, &det.b), th) {
                        track.push(LineRef { view: view.id, line: det.index });
                    }
                }
            }
            track.sort();
            LineSegment3D { track, ..line.clone() }
        })
        .collect();
    LineMap3D { lines }
}
