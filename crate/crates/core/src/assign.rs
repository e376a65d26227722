//! Per-pixel association of detected 2D lines with 3D plane edges.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::finalize::measures::{angle_distance, max_orthogonal_distance, point_segment_distance};
use crate::geometry::{CameraView, EdgeIndex, LineRef, LineSegment2D, PlanarPrimitive, PlaneId, Ray, Vec2};
use crate::jet::V3;
use crate::raster::{intersect_t, splat_weight_t, ScreenIndex, WEIGHT_FILTER};

/// Segments shorter than this (pixels) have no region.
pub const MIN_SEGMENT_LENGTH: f64 = 1e-6;

/// Pixels whose centers lie within one pixel of a detected segment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PixelRegion {
    pub line: LineRef,
    /// `(u, v)` pairs in row-major order.
    pub pixels: Vec<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Assignment {
    pub line: LineRef,
    pub plane: PlaneId,
    /// Position of the plane in the slice the assignment was built from.
    pub plane_index: usize,
    pub edge: EdgeIndex,
    pub pixel: (usize, usize),
}

pub fn one_pixel_region(line: &LineSegment2D, view: usize, width: usize, height: usize) -> Result<PixelRegion> {
    let len = line.length();
    if !(len >= MIN_SEGMENT_LENGTH) {
        return Err(Error::DegenerateSegment { length: len });
    }
    let (lo, hi) = (line.a.inf(&line.b), line.a.sup(&line.b));
    // centers at +0.5 within one pixel of the bounding box
    let first = |x: f64| (x - 1.5).ceil().max(0.0);
    let last = |x: f64, n: usize| (x + 0.5).floor().min(n as f64 - 1.0);
    let (u0, u1) = (first(lo.x), last(hi.x, width));
    let (v0, v1) = (first(lo.y), last(hi.y, height));
    let mut pixels = Vec::new();
    if u0 <= u1 && v0 <= v1 {
        for v in v0 as usize..=v1 as usize {
            for u in u0 as usize..=u1 as usize {
                let c = Vec2::new(u as f64 + 0.5, v as f64 + 0.5);
                if point_segment_distance(&c, &line.a, &line.b) <= 1.0 {
                    pixels.push((u, v));
                }
            }
        }
    }
    if pixels.is_empty() {
        return Err(Error::EmptyRegion);
    }
    Ok(PixelRegion { line: LineRef { view, line: line.index }, pixels })
}

/// Nearest plane along `ray` whose splat weight passes the render filter.
pub fn first_hit_in(
    planes: &[PlanarPrimitive],
    candidates: impl Iterator<Item = usize>,
    ray: &Ray,
    lambda: f64,
) -> Option<usize> {
    let mut best: Option<(f64, PlaneId, usize)> = None;
    for i in candidates {
        let p = &planes[i];
        let frame = p.frame();
        let Some(t) = intersect_t(&ray.origin, &ray.dir, &frame) else { continue };
        let x = ray.origin + ray.dir * t;
        if splat_weight_t(&frame, &V3::cst(&x), lambda) < WEIGHT_FILTER {
            continue;
        }
        let better = match best {
            None => true,
            Some((bt, bid, _)) => t < bt || (t == bt && p.id < bid),
        };
        if better {
            best = Some((t, p.id, i));
        }
    }
    best.map(|(_, _, i)| i)
}

pub fn first_hit(planes: &[PlanarPrimitive], ray: &Ray, lambda: f64) -> Option<PlaneId> {
    first_hit_in(planes, 0..planes.len(), ray, lambda).map(|i| planes[i].id)
}

/// Projected endpoints of all four edges.
pub fn project_edges(plane: &PlanarPrimitive, view: &CameraView) -> Result<[(Vec2, Vec2); 4]> {
    let verts = plane.vertices();
    let mut px = [Vec2::zeros(); 4];
    for (p, v) in px.iter_mut().zip(verts.iter()) {
        *p = view.project_point(v).map_err(|_| Error::ProjectionDegenerate)?.0;
    }
    Ok(EdgeIndex::ALL.map(|e| {
        let (a, b) = e.vertex_pair();
        (px[a], px[b])
    }))
}

/// Picks the edge best explaining `line`: the two edges closest in angle
/// survive, and the one with the smaller maximum endpoint distance wins.
/// Ties go to the lower edge index.
pub fn select_edge(plane: &PlanarPrimitive, line: &LineSegment2D, view: &CameraView) -> Result<Option<EdgeIndex>> {
    let proj = project_edges(plane, view)?;
    let det = (&line.a, &line.b);
    let mut ranked: Vec<(f64, usize)> = Vec::with_capacity(4);
    for (i, (a, b)) in proj.iter().enumerate() {
        if let Ok(ang) = angle_distance((a, b), det) {
            ranked.push((ang, i));
        }
    }
    if ranked.is_empty() {
        return Ok(None);
    }
    ranked.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
    ranked.truncate(2);
    let mut best: Option<(f64, usize)> = None;
    for &(_, i) in &ranked {
        let (a, b) = &proj[i];
        let d = max_orthogonal_distance((a, b), det)?;
        if best.is_none_or(|(bd, bi)| d < bd || (d == bd && i < bi)) {
            best = Some((d, i));
        }
    }
    Ok(best.map(|(_, i)| EdgeIndex::ALL[i]))
}

fn assignments_for_line(
    view: &CameraView,
    line: &LineSegment2D,
    planes: &[PlanarPrimitive],
    index: &ScreenIndex,
    lambda: f64,
) -> Vec<Assignment> {
    let Ok(region) = one_pixel_region(line, view.id, view.width(), view.height()) else {
        return Vec::new();
    };
    let mut edge_cache: Vec<(usize, Option<EdgeIndex>)> = Vec::new();
    let mut out = Vec::new();
    for &(u, v) in &region.pixels {
        let ray = view.camera.pixel_ray(u as i64, v as i64, view.id).expect("region inside image");
        let Some(pi) = first_hit_in(planes, index.candidates(u, v), &ray, lambda) else { continue };
        let edge = match edge_cache.iter().find(|(i, _)| *i == pi) {
            Some(&(_, e)) => e,
            None => {
                let e = select_edge(&planes[pi], line, view).ok().flatten();
                edge_cache.push((pi, e));
                e
            }
        };
        if let Some(edge) = edge {
            out.push(Assignment { line: region.line, plane: planes[pi].id, plane_index: pi, edge, pixel: (u, v) });
        }
    }
    out
}

/// All assignments of a view, ordered by line index then row-major pixel.
pub fn build_assignments(view: &CameraView, planes: &[PlanarPrimitive], lambda: f64) -> Vec<Assignment> {
    if planes.is_empty() || view.lines.is_empty() {
        return Vec::new();
    }
    let index = ScreenIndex::build(planes, &view.camera, lambda);
    build_assignments_with(view, planes, lambda, &index)
}

pub fn build_assignments_with(
    view: &CameraView,
    planes: &[PlanarPrimitive],
    lambda: f64,
    index: &ScreenIndex,
) -> Vec<Assignment> {
    let mut lines: Vec<&LineSegment2D> = view.lines.iter().collect();
    lines.sort_by_key(|l| l.index);
    let per_line: Vec<Vec<Assignment>> =
        lines.par_iter().map(|l| assignments_for_line(view, l, planes, index, lambda)).collect();
    per_line.into_iter().flatten().collect()
}
