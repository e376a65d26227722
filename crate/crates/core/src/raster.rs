//! Ray/plane intersection, the plane splatting function and front-to-back
//! blended rendering of depth and normal maps.

use rayon::prelude::*;

use crate::geometry::{Camera, CameraView, PlanarPrimitive, PlaneFrame, PlaneId, Ray, Vec3};
use crate::jet::{Real, V3};

/// Intersections whose splat weight falls below this value are discarded.
pub const WEIGHT_FILTER: f64 = 1e-4;
/// Number of nearest intersections blended per ray.
pub const DEFAULT_BLEND: usize = 5;
/// Rays with `|d·n|` at or below this are treated as parallel to the plane.
pub const PARALLEL_EPS: f64 = 1e-8;
pub const LAMBDA_MAX: f64 = 300.0;

/// `-logit(WEIGHT_FILTER / 2)`: sigmoid arguments below the negation of this
/// produce weights under [`WEIGHT_FILTER`].
const FILTER_LOGIT: f64 = 9.903_437_551_286_085;

/// Sharpness of the splatting function at global iteration `ite`.
pub fn lambda_schedule(ite: u64) -> f64 {
    (20.0 * (-(1.0 - 0.001 * ite as f64)).exp()).min(LAMBDA_MAX)
}

/// λ together with the iteration that produced it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplatSchedule {
    pub ite: u64,
    pub lambda: f64,
}

impl SplatSchedule {
    pub fn at(ite: u64) -> Self {
        Self { ite, lambda: lambda_schedule(ite) }
    }
    pub fn advance(&mut self) {
        *self = Self::at(self.ite + 1);
    }
}

/// Intersection of a ray with the infinite supporting plane of a primitive.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intersection {
    pub point: Vec3,
    pub t: f64,
    pub plane: PlaneId,
    pub weight: f64,
}

/// Ray parameter of the hit with the supporting plane, `None` for grazing
/// rays and hits at or behind the origin.
pub fn intersect_t<T: Real>(origin: &Vec3, dir: &Vec3, frame: &PlaneFrame<T>) -> Option<T> {
    let o = V3::<T>::cst(origin);
    let d = V3::<T>::cst(dir);
    let denom = d.dot(&frame.n);
    if denom.val().abs() <= PARALLEL_EPS {
        return None;
    }
    let t = (frame.center - o).dot(&frame.n) / denom;
    (t.val() > 0.0).then_some(t)
}

/// Splat weight before clamping.
pub fn splat_weight_raw_t<T: Real>(frame: &PlaneFrame<T>, x: &V3<T>, lambda: f64) -> T {
    let rel = *x - frame.center;
    let px = rel.dot(&frame.vx);
    let py = rel.dot(&frame.vy);
    let rx = if px.val() > 0.0 { frame.radii[0] } else { frame.radii[1] };
    let ry = if py.val() > 0.0 { frame.radii[2] } else { frame.radii[3] };
    let k = 5.0 * lambda;
    let wx = ((rx - px.abs()) * k).sigmoid() * 2.0;
    let wy = ((ry - py.abs()) * k).sigmoid() * 2.0;
    if wx.val() < wy.val() {
        wx
    } else {
        wy
    }
}

/// Splat weight clamped to `[0, 1]`.
pub fn splat_weight_t<T: Real>(frame: &PlaneFrame<T>, x: &V3<T>, lambda: f64) -> T {
    let w = splat_weight_raw_t(frame, x, lambda);
    if w.val() > 1.0 {
        T::cst(1.0)
    } else {
        w
    }
}

pub fn intersect(ray: &Ray, plane: &PlanarPrimitive) -> Option<(Vec3, f64)> {
    let t = intersect_t(&ray.origin, &ray.dir, &plane.frame())?;
    Some((ray.origin + ray.dir * t, t))
}

pub fn splat_weight(plane: &PlanarPrimitive, x: &Vec3, lambda: f64) -> f64 {
    splat_weight_t(&plane.frame(), &V3::cst(x), lambda)
}

pub fn splat_weight_raw(plane: &PlanarPrimitive, x: &Vec3, lambda: f64) -> f64 {
    splat_weight_raw_t(&plane.frame(), &V3::cst(x), lambda)
}

/// Intersection plus clamped weight, `None` when the ray misses.
pub fn weighted_intersection(ray: &Ray, plane: &PlanarPrimitive, lambda: f64) -> Option<Intersection> {
    let frame = plane.frame();
    let t = intersect_t(&ray.origin, &ray.dir, &frame)?;
    let point = ray.origin + ray.dir * t;
    let weight = splat_weight_t(&frame, &V3::cst(&point), lambda);
    Some(Intersection { point, t, plane: plane.id, weight })
}

/// One blended intersection of a rendered pixel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Contribution {
    /// Position of the plane in the slice passed to the renderer.
    pub index: usize,
    pub plane: PlaneId,
    pub t: f64,
    /// Camera depth of the intersection.
    pub depth: f64,
    pub weight: f64,
    pub transmittance: f64,
    pub normal: Vec3,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PixelRender {
    pub depth: f64,
    pub normal: Vec3,
    pub valid: bool,
    pub contributions: Vec<Contribution>,
}

/// Filters, depth-sorts (plane id breaks ties) and keeps the `m` nearest
/// intersections of `ray` among the planes at `candidates`.
pub fn select_intersections(
    planes: &[PlanarPrimitive],
    candidates: impl Iterator<Item = usize>,
    ray: &Ray,
    lambda: f64,
    m: usize,
) -> Vec<Contribution> {
    let mut hits: Vec<Contribution> = candidates
        .filter_map(|i| {
            let p = &planes[i];
            let frame = p.frame();
            let t = intersect_t(&ray.origin, &ray.dir, &frame)?;
            let x = ray.origin + ray.dir * t;
            let w = splat_weight_t(&frame, &V3::cst(&x), lambda);
            (w >= WEIGHT_FILTER).then(|| Contribution {
                index: i,
                plane: p.id,
                t,
                depth: t * ray.depth_per_t,
                weight: w,
                transmittance: 0.0,
                normal: frame.n.value(),
            })
        })
        .collect();
    hits.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.plane.cmp(&b.plane)));
    hits.truncate(m);
    let mut trans = 1.0;
    for h in hits.iter_mut() {
        h.transmittance = trans;
        trans *= 1.0 - h.weight;
    }
    hits
}

pub fn blend(contributions: Vec<Contribution>) -> PixelRender {
    let mut depth = 0.0;
    let mut normal = Vec3::zeros();
    for c in &contributions {
        let a = c.transmittance * c.weight;
        depth += a * c.depth;
        normal += c.normal * a;
    }
    PixelRender { depth, normal, valid: !contributions.is_empty(), contributions }
}

/// Renders a single ray against every plane.
pub fn render_pixel(planes: &[PlanarPrimitive], ray: &Ray, lambda: f64, m: usize) -> PixelRender {
    blend(select_intersections(planes, 0..planes.len(), ray, lambda, m))
}

/// Partial derivatives of a loss w.r.t. one blended intersection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContributionGrad {
    pub weight: f64,
    pub depth: f64,
    pub normal: Vec3,
}

/// Backpropagates `dL/dD` and `dL/dN` through the blending equations.
pub fn blend_backward(contributions: &[Contribution], grad_depth: f64, grad_normal: &Vec3) -> Vec<ContributionGrad> {
    let n = contributions.len();
    let mut out = vec![ContributionGrad { weight: 0.0, depth: 0.0, normal: Vec3::zeros() }; n];
    // behind_*: blended value of everything after j, as seen with unit transmittance
    let mut behind_depth = 0.0;
    let mut behind_normal = Vec3::zeros();
    for j in (0..n).rev() {
        let c = &contributions[j];
        let a = c.transmittance * c.weight;
        let dw_depth = c.transmittance * (c.depth - behind_depth);
        let dw_normal = (c.normal - behind_normal) * c.transmittance;
        out[j] = ContributionGrad {
            weight: grad_depth * dw_depth + grad_normal.dot(&dw_normal),
            depth: grad_depth * a,
            normal: grad_normal * a,
        };
        behind_depth = c.weight * c.depth + (1.0 - c.weight) * behind_depth;
        behind_normal = c.normal * c.weight + behind_normal * (1.0 - c.weight);
    }
    out
}

/// Rendered depth and normal maps, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedView {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<f64>,
    pub normals: Vec<Vec3>,
    pub valid: Vec<bool>,
}

const TILE: usize = 8;

/// Conservative per-tile candidate lists: a plane is listed for every tile
/// its `weight >= WEIGHT_FILTER` footprint can reach.
pub struct ScreenIndex {
    width: usize,
    height: usize,
    tiles_x: usize,
    tiles: Vec<Vec<u32>>,
    /// Inclusive pixel bounds `(u0, v0, u1, v1)` per plane.
    bounds: Vec<Option<(usize, usize, usize, usize)>>,
}

const NEAR: f64 = 1e-6;

fn clip_near(poly: &[Vec3]) -> Vec<Vec3> {
    let mut out = Vec::with_capacity(poly.len() + 2);
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        let (ina, inb) = (a.z >= NEAR, b.z >= NEAR);
        if ina {
            out.push(a);
        }
        if ina != inb {
            let s = (NEAR - a.z) / (b.z - a.z);
            out.push(a + (b - a) * s);
        }
    }
    out
}

impl ScreenIndex {
    pub fn build(planes: &[PlanarPrimitive], camera: &Camera, lambda: f64) -> Self {
        let (w, h) = (camera.width, camera.height);
        let tiles_x = w.div_ceil(TILE);
        let tiles_y = h.div_ceil(TILE);
        let margin = FILTER_LOGIT / (5.0 * lambda) * (1.0 + 1e-9) + 1e-12;
        let k = camera.intrinsics;
        let bounds: Vec<_> = planes
            .par_iter()
            .map(|p| {
                let f = p.frame();
                let (c, vx, vy) = (f.center.value(), f.vx.value(), f.vy.value());
                let [xp, xn, yp, yn] = p.radii;
                let corners = [
                    c + vx * (xp + margin) + vy * (yp + margin),
                    c + vx * (xp + margin) - vy * (yn + margin),
                    c - vx * (xn + margin) - vy * (yn + margin),
                    c - vx * (xn + margin) + vy * (yp + margin),
                ]
                .map(|x| camera.to_camera(&x));
                let poly = clip_near(&corners);
                if poly.is_empty() {
                    return None;
                }
                let (mut u0, mut v0, mut u1, mut v1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
                for q in &poly {
                    let u = k.fx * q.x / q.z + k.cx;
                    let v = k.fy * q.y / q.z + k.cy;
                    u0 = u0.min(u);
                    u1 = u1.max(u);
                    v0 = v0.min(v);
                    v1 = v1.max(v);
                }
                // pixel centers sit at +0.5; one pixel of slack on each side
                let lo = |x: f64| ((x - 1.5).floor().max(0.0)) as usize;
                let hi = |x: f64, n: usize| (x + 0.5).ceil().min(n as f64 - 1.0);
                let (u1, v1) = (hi(u1, w), hi(v1, h));
                if u1 < 0.0 || v1 < 0.0 || !u0.is_finite() || !v0.is_finite() {
                    return None;
                }
                let (u0, v0) = (lo(u0), lo(v0));
                let (u1, v1) = (u1 as usize, v1 as usize);
                (u0 <= u1 && v0 <= v1).then_some((u0, v0, u1, v1))
            })
            .collect();
        let mut tiles = vec![Vec::new(); tiles_x * tiles_y];
        for (i, b) in bounds.iter().enumerate() {
            if let Some((u0, v0, u1, v1)) = *b {
                for ty in v0 / TILE..=v1 / TILE {
                    for tx in u0 / TILE..=u1 / TILE {
                        tiles[ty * tiles_x + tx].push(i as u32);
                    }
                }
            }
        }
        Self { width: w, height: h, tiles_x, tiles, bounds }
    }

    /// Planes that may reach pixel `(u, v)`, in ascending plane order.
    pub fn candidates(&self, u: usize, v: usize) -> impl Iterator<Item = usize> + '_ {
        debug_assert!(u < self.width && v < self.height);
        self.tiles[(v / TILE) * self.tiles_x + u / TILE].iter().map(|&i| i as usize).filter(move |&i| {
            matches!(self.bounds[i], Some((u0, v0, u1, v1)) if u >= u0 && u <= u1 && v >= v0 && v <= v1)
        })
    }

    /// `false` when the plane cannot contribute anywhere in the image.
    pub fn reaches_image(&self, index: usize) -> bool {
        self.bounds[index].is_some()
    }
}

fn render_with<F>(view: &CameraView, pixel: F) -> RenderedView
where
    F: Fn(&Ray) -> PixelRender + Sync,
{
    let (w, h) = (view.width(), view.height());
    let pixels: Vec<PixelRender> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let ray = view.camera.pixel_ray((i % w) as i64, (i / w) as i64, view.id).expect("in bounds");
            pixel(&ray)
        })
        .collect();
    RenderedView {
        width: w,
        height: h,
        depth: pixels.iter().map(|p| p.depth).collect(),
        normals: pixels.iter().map(|p| p.normal).collect(),
        valid: pixels.iter().map(|p| p.valid).collect(),
    }
}

/// Renders every pixel of `view`, culling planes with a [`ScreenIndex`].
pub fn render_view(planes: &[PlanarPrimitive], view: &CameraView, lambda: f64, m: usize) -> RenderedView {
    let index = ScreenIndex::build(planes, &view.camera, lambda);
    render_with(view, |ray| {
        blend(select_intersections(planes, index.candidates(ray.pixel.0, ray.pixel.1), ray, lambda, m))
    })
}

/// Same as [`render_view`] without culling.
pub fn render_view_exhaustive(planes: &[PlanarPrimitive], view: &CameraView, lambda: f64, m: usize) -> RenderedView {
    render_with(view, |ray| render_pixel(planes, ray, lambda, m))
}
