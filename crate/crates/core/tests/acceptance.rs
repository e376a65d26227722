//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Everything runs inside one test so the timed criteria do not compete
//! with each other for cores. Oracles here are written independently of the
//! library: closed forms, nalgebra solves and brute-force scans.

use std::io::Write as _;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{Matrix3, UnitQuaternion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lineplane::assign::{build_assignments, project_edges};
use lineplane::finalize::measures::point_line_distance;
use lineplane::finalize::{
    angle_distance, build_tracks, extract_line_map, global_merge, max_orthogonal_distance, overlap_ratio,
    track_supports, Thresholds,
};
use lineplane::finalize::LineMap3D;
use lineplane::loss::{edge_pair_distance, euc_loss, ort_loss, term_gradients, LossOptions, LossWeights};
use lineplane::metrics::{line_coverage, m1_metrics, m2_metrics, GroundTruth};
use lineplane::optim::{optimize_scene, OptimConfig};
use lineplane::raster::{intersect, lambda_schedule, render_pixel, splat_weight, DEFAULT_BLEND};
use lineplane::synth::{synthesize, DegradationSpec};
use lineplane::{
    Camera, CameraView, EdgeIndex, Intrinsics, LineRef, LineSegment2D, LineSegment3D, PlanarPrimitive, PlaneId,
    Ray, Vec2, Vec3,
};

// tolerances and limits fixed by the criteria
const ORACLE_TOL: f64 = 1e-6;
const ORACLE_INSTANCES: usize = 500;
const ORACLE_BUDGET: Duration = Duration::from_secs(60);
const FD_H: f64 = 1e-5;
const FD_TOL: f64 = 1e-3;
const FD_CONFIGS: usize = 100;
const FD_BUDGET: Duration = Duration::from_secs(120);
const LAMBDA_TOL: f64 = 1e-9;
const RECOVERY_ACC: f64 = 0.01;
const RECOVERY_RECALL: f64 = 0.9;
const EVAL_TAU: f64 = 0.05;
const RECOVERY_BUDGET: Duration = Duration::from_secs(600);
const SPURIOUS_MAX: f64 = 0.05;
const DEGRADED_RECALL: f64 = 0.8;
const MERGE_TOL: f64 = 1e-9;
/// A GT edge counts as matched when half of its samples lie within τ of
/// the extracted lines.
const MATCH_COVERAGE: f64 = 0.5;

fn report(id: u32, name: &str, pass: bool, detail: &str) -> bool {
    let line = format!("[{}] criterion {id}: {name} | {detail}\n", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    pass
}

fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / b.abs().max(1e-12)
    }
}

fn v3(rng: &mut ChaCha8Rng, r: f64) -> Vec3 {
    Vec3::new(rng.random_range(-r..r), rng.random_range(-r..r), rng.random_range(-r..r))
}

fn v2(rng: &mut ChaCha8Rng, r: f64) -> Vec2 {
    Vec2::new(rng.random_range(-r..r), rng.random_range(-r..r))
}

fn random_plane(rng: &mut ChaCha8Rng, id: u64, center: Vec3) -> PlanarPrimitive {
    let q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
    let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
    let radii = std::array::from_fn(|_| rng.random_range(0.2..1.5));
    PlanarPrimitive::new(PlaneId(id), center, q.map(|x| x / n), radii)
}

/// Rotation matrix of a plane's quaternion, through nalgebra.
fn rot(p: &PlanarPrimitive) -> Matrix3<f64> {
    let [w, x, y, z] = p.rotation;
    UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(w, x, y, z)).to_rotation_matrix().into_inner()
}

/// Ray parameter by solving `o + t d = c + a vx + b vy` as a 3×3 system.
fn oracle_intersect(o: &Vec3, d: &Vec3, p: &PlanarPrimitive) -> Option<(f64, f64, f64)> {
    let r = rot(p);
    if d.dot(&r.column(2)).abs() <= 1e-8 {
        return None;
    }
    let m = Matrix3::from_columns(&[*d, -r.column(0).into_owned(), -r.column(1).into_owned()]);
    let s = m.lu().solve(&(p.center - o))?;
    (s[0] > 0.0).then_some((s[0], s[1], s[2]))
}

fn oracle_weight(p: &PlanarPrimitive, a: f64, b: f64, lambda: f64) -> f64 {
    let rx = if a > 0.0 { p.radii[0] } else { p.radii[1] };
    let ry = if b > 0.0 { p.radii[2] } else { p.radii[3] };
    let s = |z: f64| 2.0 / (1.0 + (-5.0 * lambda * z).exp());
    s(rx - a.abs()).min(s(ry - b.abs())).min(1.0)
}

fn oracle_point_line(p: &Vec2, a: &Vec2, b: &Vec2) -> f64 {
    // implicit form αx + βy + γ = 0
    let (al, be) = (b.y - a.y, a.x - b.x);
    let ga = -(al * a.x + be * a.y);
    (al * p.x + be * p.y + ga).abs() / al.hypot(be)
}

fn oracle_point_line_3d(p: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let d = (b - a).normalize();
    let w = p - a;
    (w - d * w.dot(&d)).norm()
}

fn linspace(l: &LineSegment3D, n: usize) -> Vec<Vec3> {
    (0..n).map(|i| l.u.lerp(&l.v, i as f64 / (n - 1) as f64)).collect()
}

fn brute_nearest(q: &Vec3, pts: &[Vec3]) -> f64 {
    pts.iter().map(|p| (p - q).norm()).fold(f64::INFINITY, f64::min)
}

fn random_lines(rng: &mut ChaCha8Rng, n: usize, r: f64) -> Vec<LineSegment3D> {
    (0..n)
        .map(|i| {
            let u = v3(rng, r);
            LineSegment3D::new(u, u + v3(rng, r).normalize() * rng.random_range(0.2..2.0), PlaneId(i as u64), EdgeIndex::ALL[0])
        })
        .collect()
}

struct Tally {
    name: &'static str,
    n: usize,
    worst: f64,
}

impl Tally {
    fn new(name: &'static str) -> Self {
        Self { name, n: 0, worst: 0.0 }
    }
    fn add(&mut self, got: f64, want: f64) {
        self.n += 1;
        let e = rel_err(got, want);
        self.worst = if e.is_nan() { f64::INFINITY } else { self.worst.max(e) };
    }
    fn fail(&mut self) {
        self.n += 1;
        self.worst = f64::INFINITY;
    }
}

fn criterion_1() -> bool {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut t_int = Tally::new("intersect");
    let mut t_w = Tally::new("splat_weight");
    let mut t_l = Tally::new("lambda_schedule");
    let mut t_r = Tally::new("render_pixel");
    let mut t_ang = Tally::new("angle");
    let mut t_ort = Tally::new("orthogonal");
    let mut t_ov = Tally::new("overlap");
    let mut t_euc = Tally::new("L_euc");
    let mut t_lo = Tally::new("L_ort");
    let mut t_g = Tally::new("L_group");
    let mut t_m1 = Tally::new("M1");
    let mut t_m2 = Tally::new("M2");

    while t_int.n < ORACLE_INSTANCES || t_w.n < ORACLE_INSTANCES {
        let c = v3(&mut rng, 2.0);
        let p = random_plane(&mut rng, 0, c);
        let o = v3(&mut rng, 4.0);
        let d = v3(&mut rng, 1.0).normalize();
        let ray = Ray { origin: o, dir: d, pixel: (0, 0), view: 0, depth_per_t: 1.0 };
        let lambda = rng.random_range(5.0..300.0);
        match (intersect(&ray, &p), oracle_intersect(&o, &d, &p)) {
            (Some((x, t)), Some((ot, a, b))) => {
                t_int.add(t, ot);
                let ox = o + d * ot;
                for k in 0..3 {
                    t_int.add(x[k], ox[k]);
                }
                // weights at the hit and at a point near the boundary
                t_w.add(splat_weight(&p, &x, lambda), oracle_weight(&p, a, b, lambda));
                let r = rot(&p);
                let (a2, b2) = (p.radii[0] + rng.random_range(-0.05..0.05), rng.random_range(-p.radii[3]..p.radii[2]));
                let y = p.center + r.column(0) * a2 + r.column(1) * b2;
                t_w.add(splat_weight(&p, &y, lambda), oracle_weight(&p, a2, b2, lambda));
            }
            (None, None) => {}
            _ => t_int.fail(),
        }
    }

    while t_l.n < ORACLE_INSTANCES {
        let ite: u64 = rng.random_range(0..10_000);
        t_l.add(lambda_schedule(ite), (20.0 * (-(1.0 - 0.001 * ite as f64)).exp()).min(300.0));
    }

    let k = Intrinsics { fx: 40.0, fy: 40.0, cx: 16.0, cy: 16.0 };
    while t_r.n < ORACLE_INSTANCES {
        let eye = v3(&mut rng, 1.0);
        let fwd = v3(&mut rng, 1.0).normalize();
        let cam = Camera::look_at(k, eye, eye + fwd, Vec3::z(), 32, 32).unwrap();
        let planes: Vec<PlanarPrimitive> = (0..12)
            .map(|_| {
                let id = rng.random_range(0..6);
                let c = eye + fwd * rng.random_range(1.5..4.0) + v3(&mut rng, 0.8);
                random_plane(&mut rng, id, c)
            })
            .enumerate()
            .map(|(i, mut p)| {
                p.id = PlaneId(p.id.0 * 100 + i as u64);
                p
            })
            .collect();
        let lambda = rng.random_range(5.0..300.0);
        for _ in 0..8 {
            let (u, v) = (rng.random_range(0..32), rng.random_range(0..32));
            let ray = cam.pixel_ray(u, v, 0).unwrap();
            let px = render_pixel(&planes, &ray, lambda, DEFAULT_BLEND);
            let mut hits: Vec<(f64, PlaneId, f64, f64, Vec3)> = planes
                .iter()
                .filter_map(|p| {
                    let (t, a, b) = oracle_intersect(&ray.origin, &ray.dir, p)?;
                    let w = oracle_weight(p, a, b, lambda);
                    let z = cam.pose.transform_point(&(ray.origin + ray.dir * t).into()).z;
                    (w >= 1e-4).then(|| (t, p.id, w, z, rot(p).column(2).into_owned()))
                })
                .collect();
            hits.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
            hits.truncate(DEFAULT_BLEND);
            let (mut depth, mut normal, mut trans) = (0.0, Vec3::zeros(), 1.0);
            for (_, _, w, z, n) in &hits {
                depth += trans * w * z;
                normal += n * (trans * w);
                trans *= 1.0 - w;
            }
            if px.contributions.len() != hits.len() {
                t_r.fail();
                continue;
            }
            t_r.add(px.depth, depth);
            for k in 0..3 {
                t_r.add(px.normal[k], normal[k]);
            }
        }
    }

    while t_ang.n < ORACLE_INSTANCES {
        let (a0, a1, b0, b1) = (v2(&mut rng, 50.0), v2(&mut rng, 50.0), v2(&mut rng, 50.0), v2(&mut rng, 50.0));
        let (da, db) = (a1 - a0, b1 - b0);
        let theta = (da.x * db.y - da.y * db.x).abs().atan2(da.dot(&db));
        t_ang.add(angle_distance((&a0, &a1), (&b0, &b1)).unwrap(), theta.min(std::f64::consts::PI - theta));
        let ort = oracle_point_line(&a0, &b0, &b1).max(oracle_point_line(&a1, &b0, &b1));
        t_ort.add(max_orthogonal_distance((&a0, &a1), (&b0, &b1)).unwrap(), ort);
        t_ort.add(point_line_distance(&a0, &b0, &b1).unwrap(), oracle_point_line(&a0, &b0, &b1));
        // overlap: shrink the target's parameter interval onto the projection of a
        let s = |p: &Vec2| (p - b0).dot(&db) / db.norm_squared();
        let (lo, hi) = (s(&a0).min(s(&a1)), s(&a0).max(s(&a1)));
        let ov = (hi.min(1.0) - lo.max(0.0)).max(0.0);
        t_ov.add(overlap_ratio((&a0, &a1), (&b0, &b1)).unwrap(), ov);

        let euc = ((b0 - a0).norm() + (b1 - a1).norm()).min((b0 - a1).norm() + (b1 - a0).norm());
        t_euc.add(euc_loss((&a0, &a1), (&b0, &b1)), euc);
        t_lo.add(ort_loss((&a0, &a1), (&b0, &b1)).unwrap(), oracle_point_line(&b0, &a0, &a1) + oracle_point_line(&b1, &a0, &a1));

        let (p0, p1, q0, q1) = (v3(&mut rng, 3.0), v3(&mut rng, 3.0), v3(&mut rng, 3.0), v3(&mut rng, 3.0));
        let g = oracle_point_line_3d(&p0, &q0, &q1)
            + oracle_point_line_3d(&p1, &q0, &q1)
            + oracle_point_line_3d(&q0, &p0, &p1)
            + oracle_point_line_3d(&q1, &p0, &p1);
        t_g.add(edge_pair_distance((&p0, &p1), (&q0, &q1)), g);
    }

    while t_m1.n < ORACLE_INSTANCES * 5 {
        let n = rng.random_range(1..4);
        let pred = random_lines(&mut rng, n, 1.0);
        let n = rng.random_range(1..4);
        let gt_lines = random_lines(&mut rng, n, 1.0);
        let gt_pts: Vec<Vec3> = gt_lines.iter().flat_map(|l| linspace(l, 60)).collect();
        let gt = GroundTruth::from_points(gt_pts.clone()).unwrap();
        let tau = rng.random_range(0.01..0.5);
        let r = m1_metrics(&pred, &gt, tau, true).unwrap();
        for (pts, block) in [
            (pred.iter().flat_map(|l| [l.u, l.v]).collect::<Vec<_>>(), &r.junction),
            (pred.iter().flat_map(|l| linspace(l, 100)).collect(), &r.line),
        ] {
            let dp: Vec<f64> = pts.iter().map(|q| brute_nearest(q, &gt_pts)).collect();
            let dg: Vec<f64> = gt_pts.iter().map(|q| brute_nearest(q, &pts)).collect();
            let frac = |d: &[f64]| d.iter().filter(|x| **x <= tau).count() as f64 / d.len() as f64;
            let (p, rc) = (frac(&dp), frac(&dg));
            t_m1.add(block.acc, dp.iter().sum::<f64>() / dp.len() as f64);
            t_m1.add(block.comp, dg.iter().sum::<f64>() / dg.len() as f64);
            t_m1.add(block.prec, p);
            t_m1.add(block.recall, rc);
            t_m1.add(block.f1, if p + rc > 0.0 { 2.0 * p * rc / (p + rc) } else { 0.0 });
        }

        let taus = [tau, 2.0 * tau];
        let m2 = m2_metrics(&pred, &gt, &taus, true).unwrap();
        for (k, t) in taus.iter().enumerate() {
            let ratios: Vec<f64> = pred
                .iter()
                .map(|l| linspace(l, 1000).iter().filter(|q| brute_nearest(q, &gt_pts) <= *t).count() as f64 / 1000.0)
                .collect();
            let rt: f64 = pred.iter().zip(&ratios).map(|(l, r)| (l.v - l.u).norm() * r).sum();
            let pt = 100.0 * ratios.iter().filter(|r| **r > 0.0).count() as f64 / pred.len() as f64;
            t_m2.add(m2.recall[k], rt);
            t_m2.add(m2.precision[k], pt);
        }
    }

    let tallies = [&t_int, &t_w, &t_l, &t_r, &t_ang, &t_ort, &t_ov, &t_euc, &t_lo, &t_g, &t_m1, &t_m2];
    let elapsed = start.elapsed();
    let ok = tallies.iter().all(|t| t.n >= ORACLE_INSTANCES && t.worst <= ORACLE_TOL) && elapsed < ORACLE_BUDGET;
    let worst = tallies.iter().map(|t| format!("{}={:.1e}/{}", t.name, t.worst, t.n)).collect::<Vec<_>>().join(" ");
    report(1, "formula oracles", ok, &format!("worst rel err/instances: {worst}; {:.1}s", elapsed.as_secs_f64()))
}

/// Two tilted overlapping rectangles in front of a camera, noisy depth and
/// normal targets, detections jittered off the projected edges.
fn gradient_scene(rng: &mut ChaCha8Rng) -> (CameraView, Vec<PlanarPrimitive>) {
    let (w, h) = (20, 20);
    let k = Intrinsics { fx: 16.0, fy: 16.0, cx: 10.0, cy: 10.0 };
    let cam = Camera::new(k, nalgebra::Isometry3::identity(), w, h).unwrap();
    let planes: Vec<PlanarPrimitive> = (0..2)
        .map(|i| {
            let axis = nalgebra::Unit::new_normalize(v3(rng, 1.0));
            let q = UnitQuaternion::from_axis_angle(&axis, rng.random_range(-0.6..0.6));
            let c = Vec3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), 3.0 + 0.4 * i as f64);
            let r = std::array::from_fn(|_| rng.random_range(0.5..1.2));
            let mut p = PlanarPrimitive::from_rotation(PlaneId(i), c, &q, r);
            p.rotation = p.rotation.map(|x| x * rng.random_range(0.8..1.2));
            p
        })
        .collect();
    let depth = (0..w * h).map(|_| rng.random_range(2.0..4.0)).collect();
    let normals = (0..w * h).map(|_| Vec3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), -1.0).normalize()).collect();
    let probe = CameraView::new(0, cam.clone(), vec![0.0; w * h], vec![Vec3::zeros(); w * h], vec![]).unwrap();
    let mut lines = Vec::new();
    for p in &planes {
        if let Ok(proj) = project_edges(p, &probe) {
            for (a, b) in proj {
                let j = v2(rng, 0.7);
                let n = lines.len();
                lines.push(LineSegment2D::new(a + j, b - j, n));
            }
        }
    }
    (CameraView::new(0, cam, depth, normals, lines).unwrap(), planes)
}

fn vec_rel_err(g: &[f64], fd: &[f64]) -> f64 {
    let num = g.iter().zip(fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    num / fd.iter().map(|b| b * b).sum::<f64>().sqrt().max(1e-12)
}

fn criterion_2() -> bool {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (w, opts) = (LossWeights::default(), LossOptions::default());
    let names = ["render", "euc", "ort", "group"];
    let mut counts = [0usize; 4];
    let mut worst = [0.0f64; 4];
    let mut fails = [0usize; 4];
    let mut kinked = [0usize; 4];
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    while counts.iter().any(|c| *c < FD_CONFIGS) {
        let (view, planes) = gradient_scene(&mut rng);
        let lambda = rng.random_range(5.0..40.0);
        let asg = build_assignments(&view, &planes, lambda);
        let terms = term_gradients(&view, &planes, &asg, &w, lambda, &opts);
        let eval = |pi: usize, j: usize, delta: f64| {
            let mut ps = planes.clone();
            let mut x = ps[pi].params();
            x[j] += delta;
            ps[pi].set_params(&x);
            term_gradients(&view, &ps, &asg, &w, lambda, &opts).map(|t| t.0)
        };
        let mut fd = [Vec::new(), Vec::new(), Vec::new(), Vec::new()];
        let mut fine = [Vec::new(), Vec::new(), Vec::new(), Vec::new()];
        for pi in 0..planes.len() {
            for j in 0..lineplane::geometry::PLANE_PARAMS {
                for (h, out) in [(FD_H, &mut fd), (FD_H / 10.0, &mut fine)] {
                    let (p, m) = (eval(pi, j, h), eval(pi, j, -h));
                    for k in 0..4 {
                        out[k].push((p[k] - m[k]) / (2.0 * h));
                    }
                }
            }
        }
        for k in 0..4 {
            let g: Vec<f64> = terms[k].1.iter().flatten().copied().collect();
            // a term with no value or no gradient is a degenerate configuration
            if counts[k] >= FD_CONFIGS || terms[k].0 <= 0.0 || g.iter().all(|x| *x == 0.0) {
                continue;
            }
            // so is one whose stencil straddles a kink: the loss alone gives
            // different central differences at h and h/10
            if (0..fd[k].len()).any(|i| (fd[k][i] - fine[k][i]).abs() > FD_TOL * fine[k][i].abs().max(1e-6 * norm(&fine[k]))) {
                kinked[k] += 1;
                continue;
            }
            let e = vec_rel_err(&g, &fd[k]);
            counts[k] += 1;
            worst[k] = worst[k].max(e);
            fails[k] += usize::from(!(e < FD_TOL));
        }
    }
    let elapsed = start.elapsed();
    let ok = fails.iter().all(|f| *f == 0) && elapsed < FD_BUDGET;
    let detail = (0..4).map(|k| format!("{}: {}/{} ok, worst {:.1e}, {} kinked skipped", names[k], counts[k] - fails[k], counts[k], worst[k], kinked[k])).collect::<Vec<_>>();
    report(2, "gradient finite differences", ok, &format!("{}; {:.1}s", detail.join(", "), elapsed.as_secs_f64()))
}

fn criterion_3() -> bool {
    let direct = |i: u64| (20.0 * (-(1.0 - 0.001 * i as f64)).exp()).min(300.0);
    let l0 = lambda_schedule(0);
    let mut ok = (l0 - direct(0)).abs() <= LAMBDA_TOL && (l0 - 7.3576).abs() < 5e-5;
    ok &= (lambda_schedule(1000) - 20.0).abs() <= LAMBDA_TOL && (lambda_schedule(1000) - direct(1000)).abs() <= LAMBDA_TOL;
    for i in [3708u64, 3709, 4000, 10_000, 1_000_000, u64::MAX] {
        ok &= (lambda_schedule(i) - 300.0).abs() <= LAMBDA_TOL;
    }
    ok &= lambda_schedule(3707) < 300.0;
    let cap = 1000.0 * (1.0 + 15f64.ln());
    report(
        3,
        "lambda schedule",
        ok,
        &format!(
            "λ(0)={l0:.10} λ(1000)={} λ(3707)={:.6} λ(3708)={:.9} λ(3709)={}; formula reaches 300 at ite={cap:.4}",
            lambda_schedule(1000),
            lambda_schedule(3707),
            lambda_schedule(3708),
            lambda_schedule(3709)
        ),
    )
}

fn criterion_4() -> bool {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let start = Instant::now();
    let out = pool.install(|| {
        let (scene, views, _) = synthesize(Vec3::new(1.0, 1.0, 1.0), 8, &DegradationSpec::default()).unwrap();
        let cfg = OptimConfig { epochs: 60, initial_planes: 2000, ..OptimConfig::default() };
        let res = optimize_scene(&views, &cfg).unwrap();
        let th = Thresholds::default();
        let map = build_tracks(&extract_line_map(&res.planes, &views, &th, lineplane::raster::LAMBDA_MAX), &views, &th);
        (scene, map, res.planes.len())
    });
    let elapsed = start.elapsed();
    let (scene, map, planes) = out;
    let gt = GroundTruth::from_lines(&scene.lines, 1000).unwrap();
    let (acc, recall) = match m1_metrics(&map.lines, &gt, EVAL_TAU, true) {
        Ok(r) => (r.line.acc, r.line.recall),
        Err(_) => (f64::INFINITY, 0.0),
    };
    let matched = line_coverage(&scene.lines, &map.lines, EVAL_TAU, 1000).unwrap().iter().filter(|c| **c >= MATCH_COVERAGE).count();
    let ok = acc <= RECOVERY_ACC && recall >= RECOVERY_RECALL && matched == scene.lines.len() && elapsed <= RECOVERY_BUDGET;
    report(
        4,
        "synthetic clean recovery",
        ok,
        &format!(
            "ACC-L={acc:.4} RECALL-L={recall:.3} matched {matched}/{} lines={} planes={planes}; {:.0}s single-threaded",
            scene.lines.len(),
            map.lines.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_5() -> bool {
    let th = Thresholds { extract_tau_d: 1.0, extract_tau_alpha: 0.01, ..Thresholds::default() };
    let mut worst_false: f64 = 0.0;
    let mut worst_recall: f64 = 1.0;
    for seed in 0..5 {
        let spec = DegradationSpec { jitter_sigma: 0.5, spurious_rate: 0.1, seed, ..DegradationSpec::default() };
        let (scene, views, dets) = synthesize(Vec3::new(1.0, 1.0, 1.0), 8, &spec).unwrap();
        // extraction against the converged state: the box walls themselves
        let map = extract_line_map(&scene.planes, &views, &th, lineplane::raster::LAMBDA_MAX);
        let spurious = map.lines.iter().filter(|l| l.sources.iter().all(|s| dets[s.view][s.line].label.is_none())).count();
        let frac = if map.lines.is_empty() { 0.0 } else { spurious as f64 / map.lines.len() as f64 };
        let gt = GroundTruth::from_lines(&scene.lines, 1000).unwrap();
        let recall = m1_metrics(&map.lines, &gt, EVAL_TAU, true).map(|r| r.line.recall).unwrap_or(0.0);
        worst_false = worst_false.max(frac);
        worst_recall = worst_recall.min(recall);
    }
    let ok = worst_false <= SPURIOUS_MAX && worst_recall >= DEGRADED_RECALL;
    report(5, "degradation robustness", ok, &format!("over 5 seeds: max spurious-line fraction {worst_false:.3}, min RECALL-L {worst_recall:.3}"))
}

fn criterion_6() -> bool {
    let th = Thresholds::default();
    let det = (Vec2::new(0.0, 0.0), Vec2::new(100.0, 0.0));
    let d = (&det.0, &det.1);
    let eps = 1e-9;
    let mut rows = Vec::new();
    // angle: a short segment rotated about a point on the detection
    for (s, want) in [(1.0 - 1e-6, true), (1.0 + 1e-6, false)] {
        let a = th.track_tau_a * s;
        let dir = Vec2::new(a.cos(), a.sin()) * 20.0;
        let c = Vec2::new(50.0, 0.0);
        rows.push(("angle", track_supports((&(c - dir), &(c + dir)), d, &th) == want));
    }
    // orthogonal distance: a parallel offset
    for (off, want) in [(th.track_tau_d - eps, true), (th.track_tau_d + eps, false)] {
        rows.push(("distance", track_supports((&Vec2::new(10.0, off), &Vec2::new(60.0, off)), d, &th) == want));
    }
    // overlap: a collinear piece covering a fraction of the detection
    for (len, want) in [(100.0 * th.track_tau_o + 1e-7, true), (100.0 * th.track_tau_o - 1e-7, false), (100.0 * th.track_tau_o, false)] {
        rows.push(("overlap", track_supports((&Vec2::new(30.0, 0.5), &Vec2::new(30.0 + len, 0.5)), d, &th) == want));
    }
    let ok = rows.iter().all(|r| r.1);
    let bad: Vec<&str> = rows.iter().filter(|r| !r.1).map(|r| r.0).collect();
    report(6, "track thresholds flip at the threshold", ok, &format!("{} cases, wrong: {bad:?}", rows.len()))
}

fn seg(u: [f64; 3], v: [f64; 3], plane: u64, sources: &[(usize, usize)]) -> LineSegment3D {
    let mut l = LineSegment3D::new(Vec3::from(u), Vec3::from(v), PlaneId(plane), EdgeIndex::ALL[0]);
    l.sources = sources.iter().map(|&(view, line)| LineRef { view, line }).collect();
    l
}

fn same_segment(a: &LineSegment3D, b: &LineSegment3D, tol: f64) -> bool {
    ((a.u - b.u).norm() <= tol && (a.v - b.v).norm() <= tol) || ((a.u - b.v).norm() <= tol && (a.v - b.u).norm() <= tol)
}

fn same_map(a: &LineMap3D, b: &LineMap3D, tol: f64) -> bool {
    let mut used = vec![false; b.lines.len()];
    a.lines.len() == b.lines.len()
        && a.lines.iter().all(|x| {
            let hit = b.lines.iter().enumerate().position(|(i, y)| !used[i] && same_segment(x, y, tol));
            hit.map(|i| used[i] = true).is_some()
        })
}

fn criterion_7() -> bool {
    let tau = Thresholds::default().tau_dbscan;
    // A and B share detection (1, 0); B and C share (2, 0); A and C are too far apart
    let chain = LineMap3D {
        lines: vec![
            seg([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], 0, &[(1, 0)]),
            seg([0.0, 0.006, 0.0], [1.0, 0.006, 0.0], 1, &[(1, 0), (2, 0)]),
            seg([0.0, 0.012, 0.0], [1.0, 0.012, 0.0], 2, &[(2, 0)]),
        ],
    };
    let chained = global_merge(&chain, tau).lines.len() == 1;
    let frags = LineMap3D { lines: vec![seg([0.0; 3], [1.0, 0.0, 0.0], 0, &[(0, 0)]), seg([0.5, 0.0, 0.0], [2.0, 0.0, 0.0], 1, &[(0, 0)])] };
    let merged = global_merge(&frags, tau);
    let want = seg([0.0; 3], [2.0, 0.0, 0.0], 0, &[]);
    let collinear = merged.lines.len() == 1 && same_segment(&merged.lines[0], &want, MERGE_TOL);

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut idem = 0;
    for _ in 0..100 {
        let mut lines = Vec::new();
        for c in 0..rng.random_range(1..6) {
            let base = random_lines(&mut rng, 1, 3.0).pop().unwrap();
            let shift = Vec3::new(4.0 * c as f64, 0.0, 0.0);
            for _ in 0..rng.random_range(1..5) {
                let j = v3(&mut rng, 0.002);
                let srcs: Vec<(usize, usize)> = (0..rng.random_range(1..3)).map(|_| (rng.random_range(0..3), rng.random_range(0..4))).collect();
                lines.push(seg((base.u + shift + j).into(), (base.v + shift + j).into(), lines.len() as u64, &srcs));
            }
        }
        let once = global_merge(&LineMap3D { lines }, tau);
        idem += usize::from(same_map(&global_merge(&once, tau), &once, MERGE_TOL));
    }
    let ok = chained && collinear && idem == 100;
    let got = merged.lines.first().map(|l| format!("({:.3},{:.3},{:.3})-({:.3},{:.3},{:.3})", l.u.x, l.u.y, l.u.z, l.v.x, l.v.y, l.v.z));
    report(7, "global merging", ok, &format!("chain groups to one: {chained}; fragments -> {got:?}; idempotent on {idem}/100"))
}

fn criterion_8() -> bool {
    let d = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_lineplane");
    let run = |args: &[&str]| Command::new(bin).args(args).output().map(|o| o.status.success()).unwrap_or(false);
    let p = |n: &str| d.path().join(n).to_string_lossy().into_owned();
    std::fs::write(p("cfg.txt"), "epochs=3\ninitial_planes=300\n").unwrap();
    let mut ok = run(&["synth", "--cams", "4", "--seed", "5", "--jitter", "0.3", "--spurious", "0.1", "--out", &p("scene")]);
    for (out, threads) in [("a.txt", "1"), ("b.txt", "2")] {
        ok &= run(&["optimize", "--threads", threads, "--scene", &p("scene"), "--config", &p("cfg.txt"), "--seed", "11", "--out", &p(out)]);
    }
    let (a, b) = (std::fs::read(p("a.txt")).unwrap_or_default(), std::fs::read(p("b.txt")).unwrap_or_default());
    let ok = ok && !a.is_empty() && a == b;
    report(8, "determinism", ok, &format!("plane files {} and {} bytes, identical: {}", a.len(), b.len(), a == b))
}

fn criterion_9() -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut bad = Vec::new();
    for pair in 0..50 {
        let n = rng.random_range(1..5);
        let pred = random_lines(&mut rng, n, 1.0);
        let n = rng.random_range(1..5);
        let gt_lines = random_lines(&mut rng, n, 1.0);
        let pts: Vec<Vec3> = gt_lines.iter().flat_map(|l| linspace(l, 200)).collect();
        let gt = GroundTruth::from_points(pts.clone()).unwrap();
        let mut taus: Vec<f64> = (0..6).map(|_| rng.random_range(0.001..0.5)).collect();
        taus.sort_by(f64::total_cmp);
        let m1: Vec<_> = taus.iter().map(|t| m1_metrics(&pred, &gt, *t, true).unwrap()).collect();
        let m2 = m2_metrics(&pred, &gt, &taus, true).unwrap();
        for k in 1..taus.len() {
            let (a, b) = (&m1[k - 1], &m1[k]);
            let mono = b.line.prec >= a.line.prec
                && b.line.recall >= a.line.recall
                && b.junction.prec >= a.junction.prec
                && b.junction.recall >= a.junction.recall
                && m2.recall[k] >= m2.recall[k - 1]
                && m2.precision[k] >= m2.precision[k - 1];
            if !mono {
                bad.push(format!("pair {pair}: monotonicity"));
            }
        }
        let s = rng.random_range(0.1..10.0);
        let scaled: Vec<LineSegment3D> = pred.iter().map(|l| LineSegment3D { u: l.u * s, v: l.v * s, ..l.clone() }).collect();
        let sgt = GroundTruth::from_points(pts.iter().map(|p| p * s).collect()).unwrap();
        let tau = taus[2];
        let (a, b) = (&m1[2], m1_metrics(&scaled, &sgt, s * tau, true).unwrap());
        let cov = |x: f64, y: f64| (x * s - y).abs() <= 1e-9 * y.abs().max(1.0);
        let ok = [(&a.line, &b.line), (&a.junction, &b.junction)]
            .iter()
            .all(|(x, y)| cov(x.acc, y.acc) && cov(x.comp, y.comp) && x.prec == y.prec && x.recall == y.recall);
        if !ok {
            bad.push(format!("pair {pair}: scale {s:.3}"));
        }
    }
    report(9, "metric monotonicity and scale covariance", bad.is_empty(), &format!("50 pairs, violations: {bad:?}"))
}

#[test]
fn acceptance() {
    let results = [
        criterion_1(),
        criterion_2(),
        criterion_3(),
        criterion_4(),
        criterion_5(),
        criterion_6(),
        criterion_7(),
        criterion_8(),
        criterion_9(),
    ];
    let failed = results.iter().filter(|r| !**r).count();
    assert_eq!(failed, 0, "{failed} acceptance criteria failed");
}
