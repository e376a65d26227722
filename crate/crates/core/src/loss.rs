//! Training objectives and their gradients w.r.t. plane parameters.
//!
//! Normal terms of the render loss are evaluated in the camera frame, so
//! every loss is invariant to a rigid motion of the whole scene.

use std::collections::BTreeMap;

use nalgebra::Matrix3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::assign::{build_assignments_with, Assignment};
use crate::error::{Error, Result};
use crate::geometry::{CameraView, EdgeIndex, LineRef, PlanarPrimitive, PlaneFrame, PlaneId, PlaneJet, Vec2, Vec3, PLANE_PARAMS};
use crate::jet::{Jet, Real, V2, V3};
use crate::raster::{
    blend, blend_backward, intersect_t, select_intersections, splat_weight_t, RenderedView, ScreenIndex, DEFAULT_BLEND,
};

pub type PlaneGrad = [f64; PLANE_PARAMS];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub alpha_d: f64,
    pub alpha_n: f64,
    /// Weight of both normal terms of the render loss.
    pub alpha_1: f64,
    /// Weight of the depth term of the render loss.
    pub alpha_2: f64,
    /// Parsed for completeness; no term uses it.
    pub alpha_3: f64,
    pub alpha_pi: f64,
    pub alpha_l: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha_d: 5.0, alpha_n: 1.0, alpha_1: 5.0, alpha_2: 1.0, alpha_3: 2.0, alpha_pi: 10.0, alpha_l: 0.1 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha_d, self.alpha_n, self.alpha_1, self.alpha_2, self.alpha_3, self.alpha_pi, self.alpha_l];
        if all.iter().all(|a| *a > 0.0 && a.is_finite()) {
            Ok(())
        } else {
            Err(Error::Config(format!("loss weights must be positive: {self:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossOptions {
    /// Intersections blended per pixel.
    pub blend: usize,
    /// Assignments sampled per detected line for the group term.
    pub group_cap: usize,
    pub seed: u64,
}

impl Default for LossOptions {
    fn default() -> Self {
        Self { blend: DEFAULT_BLEND, group_cap: 64, seed: 0 }
    }
}

/// Loss terms of one view and the gradient of `total`.
#[derive(Clone, Debug, PartialEq)]
pub struct LossBreakdown {
    pub render: f64,
    pub euc2d: f64,
    pub ort2d: f64,
    pub group: f64,
    pub total: f64,
    /// Gradient of `total`, aligned with the plane slice.
    pub grads: Vec<PlaneGrad>,
    pub plane_ids: Vec<PlaneId>,
    pub assignments: usize,
}

impl LossBreakdown {
    pub fn gradient(&self, id: PlaneId) -> Option<&PlaneGrad> {
        self.plane_ids.iter().position(|p| *p == id).map(|i| &self.grads[i])
    }
}

fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Value of one pixel and its derivatives w.r.t. rendered depth and
/// camera-frame normal.
fn pixel_term(d: f64, n: &Vec3, td: f64, tn: &Vec3, w: &LossWeights) -> (f64, f64, Vec3) {
    let cos = 1.0 - n.dot(tn);
    let diff = n - tn;
    let value = w.alpha_1 * cos.abs() + w.alpha_1 * diff.abs().sum() + w.alpha_2 * (d - td).abs();
    let gn = tn * (-w.alpha_1 * sgn(cos)) + diff.map(sgn) * w.alpha_1;
    (value, w.alpha_2 * sgn(d - td), gn)
}

/// Render loss of already rendered maps against the supervision of `view`,
/// summed over pixels with valid target depth.
pub fn render_loss(rendered: &RenderedView, view: &CameraView, w: &LossWeights) -> Result<f64> {
    let n = view.width() * view.height();
    if rendered.width != view.width() || rendered.height != view.height() || rendered.depth.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "rendered {}x{} vs target {}x{}",
            rendered.width,
            rendered.height,
            view.width(),
            view.height()
        )));
    }
    let r = view.camera.rotation_matrix();
    let mut total = 0.0;
    for i in 0..n {
        if view.depth[i] > 0.0 {
            let (v, _, _) = pixel_term(rendered.depth[i], &(r * rendered.normals[i]), view.depth[i], &(r * view.normals[i]), w);
            total += v;
        }
    }
    Ok(total)
}

pub fn euc_loss_t<T: Real>(l1: &V2<T>, l2: &V2<T>, v1: &V2<T>, v2: &V2<T>) -> T {
    let straight = (*v1 - *l1).norm() + (*v2 - *l2).norm();
    let swapped = (*v1 - *l2).norm() + (*v2 - *l1).norm();
    straight.min(swapped)
}

pub fn ort_loss_t<T: Real>(l1: &V2<T>, l2: &V2<T>, v1: &V2<T>, v2: &V2<T>) -> T {
    let d = *l2 - *l1;
    let len = d.norm();
    d.cross(&(*v1 - *l1)).abs() / len + d.cross(&(*v2 - *l1)).abs() / len
}

/// Endpoint distance of a projected edge to a detection, minimized over
/// the two endpoint pairings.
pub fn euc_loss(det: (&Vec2, &Vec2), proj: (&Vec2, &Vec2)) -> f64 {
    euc_loss_t(&V2::cst(det.0), &V2::cst(det.1), &V2::cst(proj.0), &V2::cst(proj.1))
}

/// Perpendicular distances of both projected endpoints to the detection's
/// supporting line.
pub fn ort_loss(det: (&Vec2, &Vec2), proj: (&Vec2, &Vec2)) -> Result<f64> {
    let len = (det.1 - det.0).norm();
    if !(len > 0.0) {
        return Err(Error::DegenerateSegment { length: len });
    }
    Ok(ort_loss_t(&V2::cst(det.0), &V2::cst(det.1), &V2::cst(proj.0), &V2::cst(proj.1)))
}

fn point_line_t<T: Real>(p: &V3<T>, a: &V3<T>, b: &V3<T>) -> T {
    let d = *b - *a;
    (*p - *a).cross(&d).norm() / d.norm()
}

/// Symmetric 3D distance between two edges: the four endpoint distances to
/// the other edge's supporting line.
pub fn edge_pair_distance_t<T: Real>(a: &[V3<T>; 2], b: &[V3<T>; 2]) -> T {
    point_line_t(&a[0], &b[0], &b[1])
        + point_line_t(&a[1], &b[0], &b[1])
        + point_line_t(&b[0], &a[0], &a[1])
        + point_line_t(&b[1], &a[0], &a[1])
}

pub fn edge_pair_distance(a: (&Vec3, &Vec3), b: (&Vec3, &Vec3)) -> f64 {
    edge_pair_distance_t(&[V3::cst(a.0), V3::cst(a.1)], &[V3::cst(b.0), V3::cst(b.1)])
}

fn edge_vertices<T: Real>(frame: &PlaneFrame<T>, edge: EdgeIndex) -> [V3<T>; 2] {
    let v = frame.vertices();
    let (i, j) = edge.vertex_pair();
    [v[i], v[j]]
}

fn add_scaled(g: &mut PlaneGrad, d: &[f64; PLANE_PARAMS], s: f64) {
    for k in 0..PLANE_PARAMS {
        g[k] += s * d[k];
    }
}

struct Terms {
    render: f64,
    euc: f64,
    ort: f64,
    group: f64,
    render_grad: Vec<PlaneGrad>,
    line_grad: Vec<PlaneGrad>,
}

fn jet_frames(planes: &[PlanarPrimitive], index: &ScreenIndex) -> Vec<Option<PlaneFrame<PlaneJet>>> {
    planes.par_iter().enumerate().map(|(i, p)| index.reaches_image(i).then(|| p.jet_frame())).collect()
}

fn render_terms(
    planes: &[PlanarPrimitive],
    view: &CameraView,
    lambda: f64,
    w: &LossWeights,
    opts: &LossOptions,
    index: &ScreenIndex,
    frames: &[Option<PlaneFrame<PlaneJet>>],
) -> (f64, Vec<PlaneGrad>) {
    let (width, height) = (view.width(), view.height());
    let r: Matrix3<f64> = view.camera.rotation_matrix();
    let per_pixel: Vec<(f64, Vec<(usize, PlaneGrad)>)> = (0..width * height)
        .into_par_iter()
        .map(|i| {
            if view.depth[i] <= 0.0 {
                return (0.0, Vec::new());
            }
            let (u, v) = (i % width, i / width);
            let ray = view.camera.pixel_ray(u as i64, v as i64, view.id).expect("in bounds");
            let px = blend(select_intersections(planes, index.candidates(u, v), &ray, lambda, opts.blend));
            let tn = r * view.normals[i];
            let (value, gd, gn_cam) = pixel_term(px.depth, &(r * px.normal), view.depth[i], &tn, w);
            let gn = r.transpose() * gn_cam;
            let cgrads = blend_backward(&px.contributions, gd, &gn);
            let o = V3::cst(&ray.origin);
            let dir = V3::cst(&ray.dir);
            let grads = px
                .contributions
                .iter()
                .zip(cgrads)
                .map(|(c, cg)| {
                    let frame = frames[c.index].as_ref().expect("visible plane has a frame");
                    let mut g = [0.0; PLANE_PARAMS];
                    if let Some(t) = intersect_t(&ray.origin, &ray.dir, frame) {
                        let x = o + dir.scale(t);
                        let wt = splat_weight_t(frame, &x, lambda);
                        let depth = t * ray.depth_per_t;
                        add_scaled(&mut g, &wt.d, cg.weight);
                        add_scaled(&mut g, &depth.d, cg.depth);
                        for k in 0..3 {
                            add_scaled(&mut g, &frame.n.0[k].d, cg.normal[k]);
                        }
                    }
                    (c.index, g)
                })
                .collect();
            (value, grads)
        })
        .collect();
    let mut total = 0.0;
    let mut grads = vec![[0.0; PLANE_PARAMS]; planes.len()];
    for (value, gs) in per_pixel {
        total += value;
        for (i, g) in gs {
            add_scaled(&mut grads[i], &g, 1.0);
        }
    }
    (total, grads)
}

fn group_rng(seed: u64, line: LineRef) -> ChaCha8Rng {
    let key = ((line.view as u64) << 32) ^ line.line as u64;
    ChaCha8Rng::seed_from_u64(seed ^ key.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Distinct `(plane index, edge)` pairs of one detection with multiplicities.
fn unique_edges<'a>(members: impl Iterator<Item = &'a Assignment>) -> Vec<((usize, EdgeIndex), f64)> {
    let mut m: BTreeMap<(usize, EdgeIndex), f64> = BTreeMap::new();
    for a in members {
        *m.entry((a.plane_index, a.edge)).or_default() += 1.0;
    }
    m.into_iter().collect()
}

/// Assignments entering the group term of one detection: all of them, or a
/// seeded uniform subset of `cap`.
fn group_members<'a>(members: &[&'a Assignment], cap: usize, seed: u64) -> Vec<&'a Assignment> {
    if members.len() <= cap {
        return members.to_vec();
    }
    let mut rng = group_rng(seed, members[0].line);
    let mut idx = rand::seq::index::sample(&mut rng, members.len(), cap).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| members[i]).collect()
}

fn by_line(assignments: &[Assignment]) -> BTreeMap<LineRef, Vec<&Assignment>> {
    let mut m: BTreeMap<LineRef, Vec<&Assignment>> = BTreeMap::new();
    for a in assignments {
        m.entry(a.line).or_default().push(a);
    }
    m
}

#[derive(Default)]
struct LineTerms {
    values: [f64; 3],
    grads: Vec<(usize, usize, PlaneGrad)>,
}

/// Endpoint, orthogonal and group terms with their per-term gradients.
fn line_terms(
    planes: &[PlanarPrimitive],
    view: &CameraView,
    assignments: &[Assignment],
    opts: &LossOptions,
) -> [(f64, Vec<PlaneGrad>); 3] {
    let groups = by_line(assignments);
    let per_line: Vec<LineTerms> = groups
        .par_iter()
        .map(|(line, members)| {
            let det = view.lines.iter().find(|l| l.index == line.line).expect("assignment refers to a detection");
            let (l1, l2) = (V2::cst(&det.a), V2::cst(&det.b));
            let mut out = LineTerms::default();
            for ((pi, edge), count) in unique_edges(members.iter().copied()) {
                let [a, b] = edge_vertices(&planes[pi].jet_frame(), edge);
                let (pa, _) = view.camera.project_t(&a);
                let (pb, _) = view.camera.project_t(&b);
                for (term, e) in [euc_loss_t(&l1, &l2, &pa, &pb), ort_loss_t(&l1, &l2, &pa, &pb)].into_iter().enumerate() {
                    out.values[term] += count * e.v;
                    out.grads.push((term, pi, e.d.map(|d| count * d)));
                }
            }
            let sampled = unique_edges(group_members(members, opts.group_cap, opts.seed).into_iter());
            let lift = |pi: usize, e: EdgeIndex, off: usize| -> [V3<Jet<22>>; 2] {
                edge_vertices(&planes[pi].jet_frame(), e).map(|v| V3(v.0.map(|c| c.lift::<22>(off))))
            };
            for (x, &((pa, ea), ma)) in sampled.iter().enumerate() {
                for &((pb, eb), mb) in &sampled[x + 1..] {
                    let d = edge_pair_distance_t(&lift(pa, ea, 0), &lift(pb, eb, PLANE_PARAMS));
                    let m = ma * mb;
                    out.values[2] += m * d.v;
                    out.grads.push((2, pa, std::array::from_fn(|k| m * d.d[k])));
                    out.grads.push((2, pb, std::array::from_fn(|k| m * d.d[PLANE_PARAMS + k])));
                }
            }
            out
        })
        .collect();
    let mut out: [(f64, Vec<PlaneGrad>); 3] = std::array::from_fn(|_| (0.0, vec![[0.0; PLANE_PARAMS]; planes.len()]));
    for t in per_line {
        for k in 0..3 {
            out[k].0 += t.values[k];
        }
        for (term, i, g) in t.grads {
            add_scaled(&mut out[term].1[i], &g, 1.0);
        }
    }
    out
}

/// Group term alone for a set of assignments.
pub fn group_loss(planes: &[PlanarPrimitive], assignments: &[Assignment], opts: &LossOptions) -> f64 {
    let mut total = 0.0;
    for members in by_line(assignments).values() {
        let sampled = unique_edges(group_members(members, opts.group_cap, opts.seed).into_iter());
        for (x, &((pa, ea), ma)) in sampled.iter().enumerate() {
            for &((pb, eb), mb) in &sampled[x + 1..] {
                let a = edge_vertices(&planes[pa].frame(), ea);
                let b = edge_vertices(&planes[pb].frame(), eb);
                total += ma * mb * edge_pair_distance_t(&a, &b);
            }
        }
    }
    total
}

fn compute_terms(
    planes: &[PlanarPrimitive],
    view: &CameraView,
    lambda: f64,
    w: &LossWeights,
    opts: &LossOptions,
    assignments: Option<&[Assignment]>,
) -> (Terms, usize) {
    let index = ScreenIndex::build(planes, &view.camera, lambda);
    let frames = jet_frames(planes, &index);
    let (render, render_grad) = render_terms(planes, view, lambda, w, opts, &index, &frames);
    let built;
    let assignments = match assignments {
        Some(a) => a,
        None => {
            built = build_assignments_with(view, planes, lambda, &index);
            &built
        }
    };
    let [(euc, ge), (ort, go), (group, gg)] = line_terms(planes, view, assignments, opts);
    let line_grad = ge
        .iter()
        .zip(&go)
        .zip(&gg)
        .map(|((a, b), c)| std::array::from_fn(|k| a[k] + b[k] + c[k]))
        .collect();
    (Terms { render, euc, ort, group, render_grad, line_grad }, assignments.len())
}

fn combine(planes: &[PlanarPrimitive], t: Terms, n: usize, w: &LossWeights) -> LossBreakdown {
    let grads = t
        .render_grad
        .iter()
        .zip(&t.line_grad)
        .map(|(r, l)| std::array::from_fn(|k| w.alpha_pi * r[k] + w.alpha_l * l[k]))
        .collect();
    LossBreakdown {
        render: t.render,
        euc2d: t.euc,
        ort2d: t.ort,
        group: t.group,
        total: w.alpha_pi * t.render + w.alpha_l * (t.euc + t.ort + t.group),
        grads,
        plane_ids: planes.iter().map(|p| p.id).collect(),
        assignments: n,
    }
}

/// Total loss of one view with assignments rebuilt for the current planes.
pub fn total_loss(
    view: &CameraView,
    planes: &[PlanarPrimitive],
    w: &LossWeights,
    lambda: f64,
    opts: &LossOptions,
) -> LossBreakdown {
    let (t, n) = compute_terms(planes, view, lambda, w, opts, None);
    combine(planes, t, n, w)
}

/// Total loss with a fixed assignment set.
pub fn total_loss_with_assignments(
    view: &CameraView,
    planes: &[PlanarPrimitive],
    assignments: &[Assignment],
    w: &LossWeights,
    lambda: f64,
    opts: &LossOptions,
) -> LossBreakdown {
    let (t, n) = compute_terms(planes, view, lambda, w, opts, Some(assignments));
    combine(planes, t, n, w)
}

/// Render, endpoint, orthogonal and group terms with separate unweighted
/// gradients.
pub fn term_gradients(
    view: &CameraView,
    planes: &[PlanarPrimitive],
    assignments: &[Assignment],
    w: &LossWeights,
    lambda: f64,
    opts: &LossOptions,
) -> [(f64, Vec<PlaneGrad>); 4] {
    let index = ScreenIndex::build(planes, &view.camera, lambda);
    let frames = jet_frames(planes, &index);
    let render = render_terms(planes, view, lambda, w, opts, &index, &frames);
    let [e, o, g] = line_terms(planes, view, assignments, opts);
    [render, e, o, g]
}
