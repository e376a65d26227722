//! Per-scene training: initialization from depth samples, Adam updates,
//! per-epoch pruning and splitting.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{rotation_from_z, CameraView, PlanarPrimitive, PlaneId, Vec3, PLANE_PARAMS};
use crate::loss::{total_loss, LossOptions, LossWeights, PlaneGrad};
use crate::raster::{blend, lambda_schedule, select_intersections, ScreenIndex, DEFAULT_BLEND, WEIGHT_FILTER};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimConfig {
    pub epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub split_threshold: f64,
    pub blend: usize,
    pub weight_filter: f64,
    pub initial_planes: usize,
    pub group_cap: usize,
    pub seed: u64,
    pub weights: LossWeights,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            split_threshold: 0.2,
            blend: DEFAULT_BLEND,
            weight_filter: WEIGHT_FILTER,
            initial_planes: 2000,
            group_cap: 64,
            seed: 0,
            weights: LossWeights::default(),
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.split_threshold > 0.0) {
            return Err(Error::Config("split_threshold must be positive".into()));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0)
        {
            return Err(Error::Config("invalid Adam hyperparameters".into()));
        }
        if self.blend == 0 || self.initial_planes < 2 {
            return Err(Error::Config("blend and initial_planes must be positive".into()));
        }
        self.weights.validate()
    }
}

/// Adam moments of one plane.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AdamSlot {
    pub m: PlaneGrad,
    pub v: PlaneGrad,
    pub t: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    /// Aligned with the plane set.
    pub slots: Vec<AdamSlot>,
    pub steps: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self { slots: vec![AdamSlot::default(); n], steps: 0 }
    }
}

/// One bias-corrected Adam update of every plane, followed by quaternion
/// renormalization and radius flooring. Planes with non-finite gradients
/// are left untouched. Returns the ids of the skipped planes.
pub fn adam_step(planes: &mut [PlanarPrimitive], grads: &[PlaneGrad], state: &mut AdamState, cfg: &OptimConfig) -> Vec<PlaneId> {
    assert_eq!(planes.len(), grads.len());
    assert_eq!(planes.len(), state.slots.len());
    let mut skipped = Vec::new();
    for ((p, g), s) in planes.iter_mut().zip(grads).zip(state.slots.iter_mut()) {
        if g.iter().any(|x| !x.is_finite()) {
            log::warn!("{}: {}", Error::NaNGradient(p.id.0).code(), Error::NaNGradient(p.id.0));
            skipped.push(p.id);
            continue;
        }
        s.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(s.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(s.t as i32);
        let mut x = p.params();
        for k in 0..PLANE_PARAMS {
            s.m[k] = cfg.beta1 * s.m[k] + (1.0 - cfg.beta1) * g[k];
            s.v[k] = cfg.beta2 * s.v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
            let mh = s.m[k] / bc1;
            let vh = s.v[k] / bc2;
            x[k] -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
        }
        p.set_params(&x);
        p.normalize();
    }
    state.steps += 1;
    skipped
}

/// Splits `plane` in two when its epoch-averaged radius gradients exceed
/// `threshold`. An X trigger cuts along the Y axis and takes precedence.
/// `avg` is `(x, y)`; `next_id` supplies ids for the children.
pub fn maybe_split(
    plane: &PlanarPrimitive,
    avg: (f64, f64),
    threshold: f64,
    next_id: &mut u64,
) -> Vec<PlanarPrimitive> {
    let f = plane.frame();
    let (vx, vy) = (f.vx.value(), f.vy.value());
    let [xp, xn, yp, yn] = plane.radii;
    let halves = |axis: Vec3, pos: f64, neg: f64| {
        let (mid, quarter) = ((pos - neg) / 2.0, (pos + neg) / 4.0);
        [plane.center + axis * (mid + quarter), plane.center + axis * (mid - quarter)].map(|c| (c, quarter))
    };
    let children: Vec<(Vec3, [f64; 4])> = if avg.0 > threshold {
        halves(vx, xp, xn).into_iter().map(|(c, q)| (c, [q, q, yp, yn])).collect()
    } else if avg.1 > threshold {
        halves(vy, yp, yn).into_iter().map(|(c, q)| (c, [xp, xn, q, q])).collect()
    } else {
        return vec![plane.clone()];
    };
    children
        .into_iter()
        .map(|(center, radii)| {
            let id = PlaneId(*next_id);
            *next_id += 1;
            PlanarPrimitive { id, center, rotation: plane.rotation, radii }
        })
        .collect()
}

/// Largest blended contribution `T * w` of each plane over every pixel of
/// every view.
pub fn max_contributions(planes: &[PlanarPrimitive], views: &[CameraView], lambda: f64, m: usize) -> Vec<f64> {
    let mut best = vec![0.0f64; planes.len()];
    for view in views {
        let index = ScreenIndex::build(planes, &view.camera, lambda);
        let w = view.width();
        let per_pixel: Vec<Vec<(usize, f64)>> = (0..w * view.height())
            .into_par_iter()
            .map(|i| {
                let ray = view.camera.pixel_ray((i % w) as i64, (i / w) as i64, view.id).expect("in bounds");
                let px = blend(select_intersections(planes, index.candidates(i % w, i / w), &ray, lambda, m));
                px.contributions.iter().map(|c| (c.index, c.transmittance * c.weight)).collect()
            })
            .collect();
        for (i, a) in per_pixel.into_iter().flatten() {
            best[i] = best[i].max(a);
        }
    }
    best
}

/// Drops planes whose blended contribution never reaches `filter`. Returns
/// the kept indices.
pub fn prune_planes(planes: &[PlanarPrimitive], views: &[CameraView], lambda: f64, m: usize, filter: f64) -> Vec<usize> {
    max_contributions(planes, views, lambda, m)
        .iter()
        .enumerate()
        .filter(|(_, a)| **a >= filter)
        .map(|(i, _)| i)
        .collect()
}

/// Surface samples `(point, normal)` back-projected from valid depth
/// pixels, a seeded uniform subset of at most `count`.
pub fn coarse_surface_samples(views: &[CameraView], count: usize, seed: u64) -> Vec<(Vec3, Vec3)> {
    let valid: Vec<(usize, usize)> = views
        .iter()
        .enumerate()
        .flat_map(|(k, v)| v.depth.iter().enumerate().filter(|(_, d)| **d > 0.0).map(move |(i, _)| (k, i)))
        .collect();
    let pick: Vec<usize> = if valid.len() <= count {
        (0..valid.len()).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = rand::seq::index::sample(&mut rng, valid.len(), count).into_vec();
        idx.sort_unstable();
        idx
    };
    pick.into_iter()
        .map(|j| {
            let (k, i) = valid[j];
            let view = &views[k];
            let w = view.width();
            let ray = view.camera.pixel_ray((i % w) as i64, (i / w) as i64, view.id).expect("in bounds");
            (ray.origin + ray.dir * (view.depth[i] / ray.depth_per_t), view.normals[i])
        })
        .collect()
}

/// One square plane per sample, oriented by the sample normal, with every
/// radius half the distance to the nearest other sample.
pub fn initialize_planes(samples: &[(Vec3, Vec3)]) -> Result<Vec<PlanarPrimitive>> {
    if samples.len() < 2 {
        return Err(Error::TooFewSamples(samples.len()));
    }
    let nn: Vec<f64> = samples
        .par_iter()
        .enumerate()
        .map(|(i, (p, _))| {
            samples
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, (q, _))| (p - q).norm())
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    Ok(samples
        .iter()
        .zip(nn)
        .enumerate()
        .map(|(i, ((p, n), d))| PlanarPrimitive::from_rotation(PlaneId(i as u64), *p, &rotation_from_z(n), [0.5 * d; 4]))
        .collect())
}

/// Loss values of one iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    pub iteration: u64,
    pub view: usize,
    pub lambda: f64,
    pub render: f64,
    pub euc2d: f64,
    pub ort2d: f64,
    pub group: f64,
    pub total: f64,
    pub planes: usize,
    pub assignments: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimResult {
    pub planes: Vec<PlanarPrimitive>,
    pub history: Vec<LossRecord>,
    /// Iterations run, the argument of the λ schedule for the final state.
    pub iterations: u64,
}

impl OptimResult {
    pub fn final_lambda(&self) -> f64 {
        lambda_schedule(self.iterations)
    }
}

fn valid_pixels(view: &CameraView) -> usize {
    view.depth.iter().filter(|d| **d > 0.0).count().max(1)
}

/// Average radius gradients `(x, y)` from per-radius sums of gradient
/// magnitudes over `n` iterations.
pub fn split_statistic(sums: [f64; 4], n: u32) -> (f64, f64) {
    let n = f64::from(n.max(1));
    (0.5 * (sums[0] + sums[1]) / n, 0.5 * (sums[2] + sums[3]) / n)
}

/// Runs `epochs` passes over `views` starting from `planes`.
pub fn optimize_planes(mut planes: Vec<PlanarPrimitive>, views: &[CameraView], cfg: &OptimConfig) -> Result<OptimResult> {
    cfg.validate()?;
    let mut order: Vec<&CameraView> = views.iter().collect();
    order.sort_by_key(|v| v.id);
    let mut state = AdamState::new(planes.len());
    let mut history = Vec::new();
    let mut ite: u64 = 0;
    let mut next_id = planes.iter().map(|p| p.id.0 + 1).max().unwrap_or(0);
    for epoch in 0..cfg.epochs {
        // sums of |dL/dr| per radius and the number of iterations seen
        let mut radius_stats = vec![([0.0; 4], 0u32); planes.len()];
        for view in &order {
            ite += 1;
            let lambda = lambda_schedule(ite);
            let opts = LossOptions { blend: cfg.blend, group_cap: cfg.group_cap, seed: cfg.seed ^ ite };
            let b = total_loss(view, &planes, &cfg.weights, lambda, &opts);
            if !b.total.is_finite() {
                return Err(Error::NaNGradient(ite));
            }
            // radius gradients of the per-pixel mean loss
            let scale = 1.0 / valid_pixels(view) as f64;
            for (s, g) in radius_stats.iter_mut().zip(&b.grads) {
                for k in 0..4 {
                    s.0[k] += g[7 + k].abs() * scale;
                }
                s.1 += 1;
            }
            adam_step(&mut planes, &b.grads, &mut state, cfg);
            history.push(LossRecord {
                epoch,
                iteration: ite,
                view: view.id,
                lambda,
                render: b.render,
                euc2d: b.euc2d,
                ort2d: b.ort2d,
                group: b.group,
                total: b.total,
                planes: planes.len(),
                assignments: b.assignments,
            });
        }
        let lambda = lambda_schedule(ite);
        let keep = prune_planes(&planes, views, lambda, cfg.blend, cfg.weight_filter);
        let pruned = planes.len() - keep.len();
        if log::log_enabled!(log::Level::Debug) {
            let mut xs: Vec<f64> = radius_stats.iter().map(|s| {
                let (x, y) = split_statistic(s.0, s.1);
                x.max(y)
            }).collect();
            xs.sort_by(f64::total_cmp);
            let q = |f: f64| xs[((xs.len() - 1) as f64 * f) as usize];
            log::debug!("split statistic quantiles 10/50/90/99%: {:.3} {:.3} {:.3} {:.3}", q(0.1), q(0.5), q(0.9), q(0.99));
        }
        let mut splits = 0;
        let mut next_planes = Vec::with_capacity(planes.len());
        let mut next_slots = Vec::with_capacity(planes.len());
        for i in keep {
            let (sums, n) = radius_stats[i];
            let children = maybe_split(&planes[i], split_statistic(sums, n), cfg.split_threshold, &mut next_id);
            if children.len() == 1 {
                next_slots.push(state.slots[i]);
            } else {
                splits += 1;
                next_slots.extend(children.iter().map(|_| AdamSlot::default()));
            }
            next_planes.extend(children);
        }
        log::info!(
            "epoch {epoch}: {} planes ({pruned} pruned, {splits} split), lambda {lambda:.3}, loss {:.4}",
            next_planes.len(),
            history.last().map_or(0.0, |r: &LossRecord| r.total)
        );
        planes = next_planes;
        state.slots = next_slots;
    }
    Ok(OptimResult { planes, history, iterations: ite })
}

/// Full training run: samples the initial planes from the depth maps and
/// optimizes them.
pub fn optimize_scene(views: &[CameraView], cfg: &OptimConfig) -> Result<OptimResult> {
    if views.is_empty() {
        return Err(Error::EmptyInput("views"));
    }
    cfg.validate()?;
    let samples = coarse_surface_samples(views, cfg.initial_planes, cfg.seed);
    let planes = initialize_planes(&samples)?;
    optimize_planes(planes, views, cfg)
}
