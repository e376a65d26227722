//! Synthetic box rooms with exact depth, normals and line detections.
//!
//! Depth and normals are ray-cast in closed form against the box and share
//! no code with the splatting renderer, which they are used to check.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geometry::{
    rotation_from_z, Camera, CameraView, EdgeIndex, Intrinsics, LineSegment2D, LineSegment3D, PlanarPrimitive, PlaneId,
    Vec2, Vec3,
};

pub const DEFAULT_RESOLUTION: usize = 64;
/// Points per edge for the occlusion test.
pub const OCCLUSION_SAMPLES: usize = 32;
pub const OCCLUSION_TOL: f64 = 1e-4;
/// Projected segments shorter than this are not reported.
pub const MIN_DETECTION_PX: f64 = 2.0;
const NEAR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScene {
    pub dims: Vec3,
    /// The six walls, normals pointing into the room.
    pub planes: Vec<PlanarPrimitive>,
    pub lines: Vec<LineSegment3D>,
    pub cameras: Vec<Camera>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DegradationSpec {
    /// Endpoint noise, pixels.
    pub jitter_sigma: f64,
    pub fragment_prob: f64,
    pub fragment_count: usize,
    pub dropout_prob: f64,
    /// Spurious detections per view as a fraction of the true ones.
    pub spurious_rate: f64,
    /// Depth noise, world units.
    pub depth_noise_sigma: f64,
    pub seed: u64,
}

impl Default for DegradationSpec {
    fn default() -> Self {
        Self {
            jitter_sigma: 0.0,
            fragment_prob: 0.0,
            fragment_count: 2,
            dropout_prob: 0.0,
            spurious_rate: 0.0,
            depth_noise_sigma: 0.0,
            seed: 0,
        }
    }
}

impl DegradationSpec {
    pub fn validate(&self) -> Result<()> {
        let rates = [self.fragment_prob, self.dropout_prob, self.spurious_rate];
        if rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::Config("degradation rates must lie in [0, 1]".into()));
        }
        if !(self.jitter_sigma >= 0.0) || !(self.depth_noise_sigma >= 0.0) {
            return Err(Error::Config("noise levels must be nonnegative".into()));
        }
        Ok(())
    }
}

/// A 2D detection with the GT line it was generated from, `None` for
/// spurious ones.
#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    pub segment: LineSegment2D,
    pub label: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GtMaps {
    pub depth: Vec<f64>,
    pub normals: Vec<Vec3>,
}

fn wall(id: u64, axis: usize, sign: f64, half: &Vec3) -> PlanarPrimitive {
    let mut center = Vec3::zeros();
    center[axis] = sign * half[axis];
    let mut normal = Vec3::zeros();
    normal[axis] = -sign;
    let q = rotation_from_z(&normal);
    let (vx, vy) = (q * Vec3::x(), q * Vec3::y());
    let extent = |a: Vec3| a.iter().zip(half.iter()).map(|(c, h)| c.abs() * h).sum::<f64>();
    let (ex, ey) = (extent(vx), extent(vy));
    PlanarPrimitive::from_rotation(PlaneId(id), center, &q, [ex, ex, ey, ey])
}

/// Box room centered at the origin with `cams` cameras on a ring inside
/// it, each looking through the center, rendered at 64×64.
pub fn make_box_scene(dims: Vec3, cams: usize) -> Result<SyntheticScene> {
    make_box_scene_with(dims, cams, DEFAULT_RESOLUTION, DEFAULT_RESOLUTION)
}

pub fn make_box_scene_with(dims: Vec3, cams: usize, width: usize, height: usize) -> Result<SyntheticScene> {
    if dims.iter().any(|d| !(*d > 0.0) || !d.is_finite()) {
        return Err(Error::BadDims(format!("box dimensions must be positive, got {dims:?}")));
    }
    if cams < 2 {
        return Err(Error::BadDims(format!("need at least 2 cameras, got {cams}")));
    }
    let half = dims / 2.0;
    let mut planes = Vec::new();
    for axis in 0..3 {
        for sign in [-1.0, 1.0] {
            planes.push(wall(planes.len() as u64, axis, sign, &half));
        }
    }

    let mut lines = Vec::new();
    for axis in 0..3 {
        let (b, c) = ((axis + 1) % 3, (axis + 2) % 3);
        for sb in [-1.0, 1.0] {
            for sc in [-1.0, 1.0] {
                let mut u = Vec3::zeros();
                u[axis] = -half[axis];
                u[b] = sb * half[b];
                u[c] = sc * half[c];
                let mut v = u;
                v[axis] = half[axis];
                // provenance: the wall edge lying on this box edge
                let (plane, edge) = planes
                    .iter()
                    .flat_map(|p| p.edges().into_iter().map(move |e| (p.id, e)))
                    .map(|(id, e)| {
                        let d = ((e.u - u).norm() + (e.v - v).norm()).min((e.u - v).norm() + (e.v - u).norm());
                        (d, id, e.edge)
                    })
                    .min_by(|x, y| x.0.total_cmp(&y.0))
                    .map(|(_, id, e)| (id, e))
                    .expect("box has walls");
                lines.push(LineSegment3D::new(u, v, plane, edge));
            }
        }
    }

    let rho = 0.25 * dims.x.min(dims.y);
    let k = Intrinsics { fx: width as f64 / 2.0, fy: width as f64 / 2.0, cx: width as f64 / 2.0, cy: height as f64 / 2.0 };
    let cameras = (0..cams)
        .map(|i| {
            let th = std::f64::consts::TAU * (i as f64 + 0.5) / cams as f64;
            let eye = Vec3::new(rho * th.cos(), rho * th.sin(), 0.0);
            Camera::look_at(k, eye, Vec3::zeros(), Vec3::z(), width, height)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticScene { dims, planes, lines, cameras })
}

/// Distance along `dir` from an interior point `o` to the box boundary,
/// with the inward normal of the wall hit.
fn box_exit(o: &Vec3, dir: &Vec3, half: &Vec3) -> Option<(f64, Vec3)> {
    let mut best: Option<(f64, usize)> = None;
    for i in 0..3 {
        if dir[i] == 0.0 {
            continue;
        }
        let bound = if dir[i] > 0.0 { half[i] } else { -half[i] };
        let t = (bound - o[i]) / dir[i];
        if t > 0.0 && best.is_none_or(|(bt, _)| t < bt) {
            best = Some((t, i));
        }
    }
    best.map(|(t, i)| {
        let mut n = Vec3::zeros();
        n[i] = -dir[i].signum();
        (t, n)
    })
}

fn camera_ray(cam: &Camera, u: f64, v: f64) -> (Vec3, Vec3) {
    let k = &cam.intrinsics;
    let r = cam.rotation_matrix();
    let eye = -(r.transpose() * cam.pose.translation.vector);
    // camera-space z component 1, so the ray parameter is the camera depth
    let dir = r.transpose() * Vec3::new((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
    (eye, dir)
}

/// Exact first-hit depth and normal maps of every camera.
pub fn render_gt_views(scene: &SyntheticScene) -> Vec<GtMaps> {
    let half = scene.dims / 2.0;
    scene
        .cameras
        .iter()
        .map(|cam| {
            let (w, h) = (cam.width, cam.height);
            let mut depth = vec![0.0; w * h];
            let mut normals = vec![Vec3::zeros(); w * h];
            for v in 0..h {
                for u in 0..w {
                    let (o, d) = camera_ray(cam, u as f64 + 0.5, v as f64 + 0.5);
                    if let Some((t, n)) = box_exit(&o, &d, &half) {
                        depth[v * w + u] = t;
                        normals[v * w + u] = n;
                    }
                }
            }
            GtMaps { depth, normals }
        })
        .collect()
}

/// Clips the camera-space segment `a`–`b` to the viewing frustum.
fn clip_to_frustum(a: Vec3, b: Vec3, cam: &Camera) -> Option<(Vec3, Vec3)> {
    let k = &cam.intrinsics;
    let (w, h) = (cam.width as f64, cam.height as f64);
    // each constraint is f(p) >= 0, linear in p
    let constraints: [Box<dyn Fn(&Vec3) -> f64>; 5] = [
        Box::new(|p| p.z - NEAR),
        Box::new(move |p| k.fx * p.x + k.cx * p.z),
        Box::new(move |p| (w - k.cx) * p.z - k.fx * p.x),
        Box::new(move |p| k.fy * p.y + k.cy * p.z),
        Box::new(move |p| (h - k.cy) * p.z - k.fy * p.y),
    ];
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for f in &constraints {
        let (fa, fb) = (f(&a), f(&b));
        if fa < 0.0 && fb < 0.0 {
            return None;
        }
        if fa < 0.0 {
            t0 = t0.max(fa / (fa - fb));
        } else if fb < 0.0 {
            t1 = t1.min(fa / (fa - fb));
        }
    }
    (t0 < t1).then(|| (a + (b - a) * t0, a + (b - a) * t1))
}

/// Exact projections of the visible parts of every GT line in camera `cam`,
/// labelled with the line index.
fn visible_projections(scene: &SyntheticScene, cam: &Camera) -> Vec<(Vec2, Vec2, usize)> {
    let half = scene.dims / 2.0;
    let r = cam.rotation_matrix();
    let eye = -(r.transpose() * cam.pose.translation.vector);
    let project = |p: &Vec3| {
        let k = &cam.intrinsics;
        Vec2::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy)
    };
    let mut out = Vec::new();
    for (li, line) in scene.lines.iter().enumerate() {
        let Some((ca, cb)) = clip_to_frustum(cam.to_camera(&line.u), cam.to_camera(&line.v), cam) else { continue };
        let (wa, wb) = (r.transpose() * (ca - cam.pose.translation.vector), r.transpose() * (cb - cam.pose.translation.vector));
        let visible: Vec<bool> = (0..OCCLUSION_SAMPLES)
            .map(|i| {
                let p = wa + (wb - wa) * (i as f64 / (OCCLUSION_SAMPLES - 1) as f64);
                let d = p - eye;
                let dist = d.norm();
                box_exit(&eye, &(d / dist), &half).is_some_and(|(t, _)| t >= dist - OCCLUSION_TOL)
            })
            .collect();
        let mut i = 0;
        while i < visible.len() {
            if !visible[i] {
                i += 1;
                continue;
            }
            let start = i;
            while i < visible.len() && visible[i] {
                i += 1;
            }
            let s = |j: usize| j as f64 / (OCCLUSION_SAMPLES - 1) as f64;
            let (pa, pb) = (ca + (cb - ca) * s(start), ca + (cb - ca) * s(i - 1));
            let (a2, b2) = (project(&pa), project(&pb));
            if (b2 - a2).norm() >= MIN_DETECTION_PX {
                out.push((a2, b2, li));
            }
        }
    }
    out
}

fn seeded(seed: u64, view: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (view as u64 + 1).wrapping_mul(0xA076_1D64_78BD_642F))
}

fn clamp_to_image(p: Vec2, w: f64, h: f64) -> Vec2 {
    Vec2::new(p.x.clamp(0.0, w), p.y.clamp(0.0, h))
}

/// Projected GT lines per camera, degraded by `spec`.
pub fn project_gt_lines(scene: &SyntheticScene, spec: &DegradationSpec) -> Vec<Vec<Detection>> {
    scene
        .cameras
        .iter()
        .enumerate()
        .map(|(view, cam)| {
            let (w, h) = (cam.width as f64, cam.height as f64);
            let mut rng = seeded(spec.seed, view);
            let jitter = Normal::new(0.0, spec.jitter_sigma.max(0.0)).expect("finite sigma");
            let mut pieces: Vec<(Vec2, Vec2, Option<usize>)> = Vec::new();
            let exact = visible_projections(scene, cam);
            for (a, b, li) in &exact {
                if spec.dropout_prob > 0.0 && rng.random::<f64>() < spec.dropout_prob {
                    continue;
                }
                if spec.fragment_prob > 0.0 && spec.fragment_count >= 2 && rng.random::<f64>() < spec.fragment_prob {
                    let n = spec.fragment_count as f64;
                    for i in 0..spec.fragment_count {
                        let (s0, s1) = ((i as f64 + 0.05) / n, (i as f64 + 0.95) / n);
                        pieces.push((a + (b - a) * s0, a + (b - a) * s1, Some(*li)));
                    }
                } else {
                    pieces.push((*a, *b, Some(*li)));
                }
            }
            let spurious = (spec.spurious_rate * exact.len() as f64).round() as usize;
            for _ in 0..spurious {
                let c = Vec2::new(rng.random_range(0.0..w), rng.random_range(0.0..h));
                let ang = rng.random_range(0.0..std::f64::consts::PI);
                let half_len = 0.5 * rng.random_range(8.0..24.0);
                let d = Vec2::new(ang.cos(), ang.sin()) * half_len;
                pieces.push((c - d, c + d, None));
            }
            let mut out = Vec::new();
            for (a, b, label) in pieces {
                let (a, b) = if spec.jitter_sigma > 0.0 {
                    let mut j = || Vec2::new(jitter.sample(&mut rng), jitter.sample(&mut rng));
                    (a + j(), b + j())
                } else {
                    (a, b)
                };
                let (a, b) = (clamp_to_image(a, w, h), clamp_to_image(b, w, h));
                if (b - a).norm() >= 1e-6 {
                    out.push(Detection { segment: LineSegment2D::new(a, b, out.len()), label });
                }
            }
            out
        })
        .collect()
}

/// Adds seeded Gaussian noise to valid depths, keeping them positive.
pub fn degrade_depth(maps: &mut [GtMaps], spec: &DegradationSpec) {
    if spec.depth_noise_sigma <= 0.0 {
        return;
    }
    let noise = Normal::new(0.0, spec.depth_noise_sigma).expect("finite sigma");
    for (view, m) in maps.iter_mut().enumerate() {
        let mut rng = seeded(spec.seed ^ 0x5EED, view);
        for d in m.depth.iter_mut().filter(|d| **d > 0.0) {
            *d = (*d + noise.sample(&mut rng)).max(1e-6);
        }
    }
}

/// Posed views carrying the GT maps and the given detections.
pub fn build_views(scene: &SyntheticScene, maps: &[GtMaps], detections: &[Vec<Detection>]) -> Result<Vec<CameraView>> {
    scene
        .cameras
        .iter()
        .zip(maps)
        .zip(detections)
        .enumerate()
        .map(|(id, ((cam, m), dets))| {
            let lines = dets.iter().map(|d| d.segment.clone()).collect();
            CameraView::new(id, cam.clone(), m.depth.clone(), m.normals.clone(), lines)
        })
        .collect()
}

/// Scene, views and labelled detections in one call.
pub fn synthesize(dims: Vec3, cams: usize, spec: &DegradationSpec) -> Result<(SyntheticScene, Vec<CameraView>, Vec<Vec<Detection>>)> {
    spec.validate()?;
    let scene = make_box_scene(dims, cams)?;
    let mut maps = render_gt_views(&scene);
    degrade_depth(&mut maps, spec);
    let dets = project_gt_lines(&scene, spec);
    let views = build_views(&scene, &maps, &dets)?;
    Ok((scene, views, dets))
}

/// Index of the GT line lying on edge `edge` of wall `plane`. Every box edge
/// is shared by two walls and matches from either side.
pub fn gt_line_of(scene: &SyntheticScene, plane: PlaneId, edge: EdgeIndex) -> Option<usize> {
    let wall = scene.planes.iter().find(|p| p.id == plane)?;
    let e = &wall.edges()[(edge.get() - 1) as usize];
    let tol = 1e-9 * scene.dims.norm();
    scene.lines.iter().position(|l| {
        ((l.u - e.u).norm() < tol && (l.v - e.v).norm() < tol) || ((l.u - e.v).norm() < tol && (l.v - e.u).norm() < tol)
    })
}
