//! On-disk formats: camera text files, binary float maps, detection lists,
//! plane sets, line maps, viewer exports and flat key=value configs.
//!
//! Floats in text files are written in Rust's shortest round-trip form, so
//! every writer/reader pair reproduces the values bit for bit.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Isometry3, Matrix3, Rotation3, Translation3, UnitQuaternion};

use crate::error::{Error, Result};
use crate::finalize::{LineMap3D, Thresholds};
use crate::geometry::{
    Camera, CameraView, EdgeIndex, Intrinsics, LineRef, LineSegment2D, LineSegment3D, PlanarPrimitive, PlaneId, Vec2, Vec3,
};
use crate::loss::LossWeights;
use crate::optim::{LossRecord, OptimConfig};

pub const DEPTH_MAGIC: [u8; 4] = *b"LPD1";
pub const NORMAL_WORLD_MAGIC: [u8; 4] = *b"LPNW";
pub const NORMAL_CAMERA_MAGIC: [u8; 4] = *b"LPNC";
const HEADER: usize = 16;

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, s: &str) -> Result<()> {
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), msg: msg.into() }
}

fn numbers(path: &Path, line: &str) -> Result<Vec<f64>> {
    line.split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| parse_err(path, format!("not a number: {t:?}"))))
        .collect()
}

/// Non-empty lines that are not `#` comments.
fn content_lines(s: &str) -> impl Iterator<Item = &str> {
    s.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'))
}

// ---- cameras ----

/// `fx fy cx cy` on the first line, then the 3×4 world-to-camera matrix
/// row by row. Image size is not stored; it comes from the maps.
pub fn camera_to_text(cam: &Camera) -> String {
    let k = &cam.intrinsics;
    let r = cam.rotation_matrix();
    let t = cam.pose.translation.vector;
    let mut s = format!("{} {} {} {}\n", k.fx, k.fy, k.cx, k.cy);
    for i in 0..3 {
        let _ = writeln!(s, "{} {} {} {}", r[(i, 0)], r[(i, 1)], r[(i, 2)], t[i]);
    }
    s
}

pub fn write_camera(path: &Path, cam: &Camera) -> Result<()> {
    write_text(path, &camera_to_text(cam))
}

pub fn read_camera(path: &Path, width: usize, height: usize) -> Result<Camera> {
    if !path.exists() {
        return Err(Error::MissingCamera(path.to_path_buf()));
    }
    let text = read_text(path)?;
    let rows: Vec<Vec<f64>> = content_lines(&text).map(|l| numbers(path, l)).collect::<Result<_>>()?;
    if rows.len() != 4 || rows[0].len() != 4 || rows[1..].iter().any(|r| r.len() != 4) {
        return Err(parse_err(path, "expected `fx fy cx cy` and three rows of 4 numbers"));
    }
    let k = Intrinsics { fx: rows[0][0], fy: rows[0][1], cx: rows[0][2], cy: rows[0][3] };
    let r = Matrix3::from_fn(|i, j| rows[i + 1][j]);
    if !((r * r.transpose() - Matrix3::identity()).norm() < 1e-6 && r.determinant() > 0.0) {
        return Err(parse_err(path, "rotation block is not a rotation"));
    }
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
    let t = Translation3::new(rows[1][3], rows[2][3], rows[3][3]);
    Camera::new(k, Isometry3::from_parts(t, q), width, height)
}

// ---- float maps ----

/// Little-endian `f32` map with a 16-byte header: magic, width, height and
/// channel count as `u32`.
pub fn encode_map(magic: [u8; 4], width: usize, height: usize, channels: usize, data: &[f32]) -> Vec<u8> {
    assert_eq!(data.len(), width * height * channels);
    let mut out = Vec::with_capacity(HEADER + 4 * data.len());
    out.extend_from_slice(&magic);
    for v in [width, height, channels] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for x in data {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct FloatMap {
    pub magic: [u8; 4],
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

pub fn decode_map(path: &Path, bytes: &[u8]) -> Result<FloatMap> {
    if bytes.len() < HEADER {
        return Err(parse_err(path, "truncated header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().expect("4 bytes")) as usize;
    let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
    if ![DEPTH_MAGIC, NORMAL_WORLD_MAGIC, NORMAL_CAMERA_MAGIC].contains(&magic) {
        return Err(parse_err(path, format!("unknown magic {magic:?}")));
    }
    let (width, height, channels) = (word(1), word(2), word(3));
    let n = width * height * channels;
    if bytes.len() != HEADER + 4 * n {
        return Err(parse_err(path, format!("expected {} data bytes, found {}", 4 * n, bytes.len() - HEADER)));
    }
    let data = bytes[HEADER..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
    Ok(FloatMap { magic, width, height, channels, data })
}

fn read_map(path: &Path) -> Result<FloatMap> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_map(path, &bytes)
}

pub fn write_depth(path: &Path, width: usize, height: usize, depth: &[f64]) -> Result<()> {
    let data: Vec<f32> = depth.iter().map(|d| *d as f32).collect();
    fs::write(path, encode_map(DEPTH_MAGIC, width, height, 1, &data)).map_err(|e| Error::io(path, e))
}

pub fn read_depth(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    if !path.exists() {
        return Err(Error::MissingDepth(path.to_path_buf()));
    }
    let m = read_map(path)?;
    if m.magic != DEPTH_MAGIC || m.channels != 1 {
        return Err(parse_err(path, "not a depth map"));
    }
    Ok((m.width, m.height, m.data.iter().map(|d| f64::from(*d)).collect()))
}

/// World-frame normals, written as such.
pub fn write_normals(path: &Path, width: usize, height: usize, normals: &[Vec3]) -> Result<()> {
    let data: Vec<f32> = normals.iter().flat_map(|n| [n.x as f32, n.y as f32, n.z as f32]).collect();
    fs::write(path, encode_map(NORMAL_WORLD_MAGIC, width, height, 3, &data)).map_err(|e| Error::io(path, e))
}

/// Reads a normal map, rotating camera-frame maps into the world frame.
pub fn read_normals(path: &Path, cam: &Camera) -> Result<(usize, usize, Vec<Vec3>)> {
    if !path.exists() {
        return Err(Error::MissingNormal(path.to_path_buf()));
    }
    let m = read_map(path)?;
    if m.channels != 3 || m.magic == DEPTH_MAGIC {
        return Err(parse_err(path, "not a normal map"));
    }
    let rt = cam.rotation_matrix().transpose();
    let normals = m
        .data
        .chunks_exact(3)
        .map(|c| {
            let n = Vec3::new(f64::from(c[0]), f64::from(c[1]), f64::from(c[2]));
            if m.magic == NORMAL_CAMERA_MAGIC {
                rt * n
            } else {
                n
            }
        })
        .collect();
    Ok((m.width, m.height, normals))
}

// ---- detections ----

pub fn detections_to_text(lines: &[LineSegment2D]) -> String {
    lines.iter().map(|l| format!("{} {} {} {}\n", l.a.x, l.a.y, l.b.x, l.b.y)).collect()
}

/// One `x1 y1 x2 y2` segment per line; indices follow file order.
pub fn read_detections(path: &Path) -> Result<Vec<LineSegment2D>> {
    let text = read_text(path)?;
    content_lines(&text)
        .enumerate()
        .map(|(i, l)| {
            let v = numbers(path, l)?;
            if v.len() != 4 {
                return Err(parse_err(path, format!("segment {i}: expected 4 numbers")));
            }
            Ok(LineSegment2D::new(Vec2::new(v[0], v[1]), Vec2::new(v[2], v[3]), i))
        })
        .collect()
}

// ---- plane sets ----

pub const PLANES_HEADER: &str = "# planes: id cx cy cz qw qx qy qz rx+ rx- ry+ ry-";

pub fn planes_to_text(planes: &[PlanarPrimitive]) -> String {
    let mut s = format!("{PLANES_HEADER}\n");
    for p in planes {
        let _ = write!(s, "{}", p.id.0);
        for x in p.center.iter().chain(&p.rotation).chain(&p.radii) {
            let _ = write!(s, " {x}");
        }
        s.push('\n');
    }
    s
}

pub fn planes_from_text(path: &Path, text: &str) -> Result<Vec<PlanarPrimitive>> {
    content_lines(text)
        .map(|l| {
            let mut it = l.split_whitespace();
            let id = it
                .next()
                .and_then(|t| t.parse::<u64>().ok())
                .ok_or_else(|| parse_err(path, format!("bad plane id in {l:?}")))?;
            let v = numbers(path, &it.collect::<Vec<_>>().join(" "))?;
            if v.len() != 11 {
                return Err(parse_err(path, format!("plane {id}: expected 11 numbers, got {}", v.len())));
            }
            let p = PlanarPrimitive {
                id: PlaneId(id),
                center: Vec3::new(v[0], v[1], v[2]),
                rotation: [v[3], v[4], v[5], v[6]],
                radii: [v[7], v[8], v[9], v[10]],
            };
            if !p.is_finite() {
                return Err(parse_err(path, format!("plane {id}: non-finite value")));
            }
            Ok(p)
        })
        .collect()
}

pub fn write_planes(path: &Path, planes: &[PlanarPrimitive]) -> Result<()> {
    write_text(path, &planes_to_text(planes))
}

pub fn read_planes(path: &Path) -> Result<Vec<PlanarPrimitive>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    planes_from_text(path, &read_text(path)?)
}

// ---- line maps ----

fn refs_to_text(s: &mut String, refs: &[LineRef]) {
    let _ = write!(s, " {}", refs.len());
    for r in refs {
        let _ = write!(s, " {} {}", r.view, r.line);
    }
}

/// One segment per line: `ux uy uz vx vy vz plane edge`, then the source
/// and track lists, each as a count followed by `view line` pairs.
pub fn line_map_to_text(map: &LineMap3D) -> String {
    let mut s = String::from("# lines: u v plane edge n_sources (view line)* n_track (view line)*\n");
    for l in &map.lines {
        let _ = write!(s, "{} {} {} {} {} {} {} {}", l.u.x, l.u.y, l.u.z, l.v.x, l.v.y, l.v.z, l.plane.0, l.edge.get());
        refs_to_text(&mut s, &l.sources);
        refs_to_text(&mut s, &l.track);
        s.push('\n');
    }
    s
}

pub fn line_map_from_text(path: &Path, text: &str) -> Result<LineMap3D> {
    let lines = content_lines(text)
        .map(|l| {
            let t: Vec<&str> = l.split_whitespace().collect();
            let bad = || parse_err(path, format!("malformed line record {l:?}"));
            if t.len() < 10 {
                return Err(bad());
            }
            let f = |i: usize| t[i].parse::<f64>().map_err(|_| bad());
            let u = |i: usize| t.get(i).and_then(|x| x.parse::<usize>().ok()).ok_or_else(bad);
            let plane = t[6].parse::<u64>().map_err(|_| bad())?;
            let edge = t[7].parse::<u8>().ok().and_then(EdgeIndex::new).ok_or_else(bad)?;
            let mut pos = 8;
            let mut refs = || -> Result<Vec<LineRef>> {
                let n = u(pos)?;
                let r = (0..n).map(|k| Ok(LineRef { view: u(pos + 1 + 2 * k)?, line: u(pos + 2 + 2 * k)? })).collect();
                pos += 1 + 2 * n;
                r
            };
            let sources = refs()?;
            let track = refs()?;
            if pos != t.len() {
                return Err(bad());
            }
            Ok(LineSegment3D {
                u: Vec3::new(f(0)?, f(1)?, f(2)?),
                v: Vec3::new(f(3)?, f(4)?, f(5)?),
                plane: PlaneId(plane),
                edge,
                track,
                sources,
            })
        })
        .collect::<Result<_>>()?;
    Ok(LineMap3D { lines })
}

pub fn write_line_map(path: &Path, map: &LineMap3D) -> Result<()> {
    write_text(path, &line_map_to_text(map))
}

pub fn read_line_map(path: &Path) -> Result<LineMap3D> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    line_map_from_text(path, &read_text(path)?)
}

// ---- viewer export ----

/// `v x y z` vertices and 1-based `l i j` polylines.
pub fn lines_to_obj(lines: &[LineSegment3D]) -> String {
    let mut s = String::new();
    for l in lines {
        let _ = writeln!(s, "v {} {} {}", l.u.x, l.u.y, l.u.z);
        let _ = writeln!(s, "v {} {} {}", l.v.x, l.v.y, l.v.z);
    }
    for i in 0..lines.len() {
        let _ = writeln!(s, "l {} {}", 2 * i + 1, 2 * i + 2);
    }
    s
}

/// Planes as quads: four `v` records and one `f` record each.
pub fn planes_to_obj(planes: &[PlanarPrimitive]) -> String {
    let mut s = String::new();
    for p in planes {
        for v in p.vertices() {
            let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
        }
    }
    for i in 0..planes.len() {
        let b = 4 * i;
        let _ = writeln!(s, "f {} {} {} {}", b + 1, b + 2, b + 3, b + 4);
    }
    s
}

/// Segments from the `v`/`l` records of an OBJ-style file. Provenance is
/// the record index.
pub fn lines_from_obj(path: &Path, text: &str) -> Result<Vec<LineSegment3D>> {
    let mut verts = Vec::new();
    let mut out = Vec::new();
    for l in content_lines(text) {
        let (tag, rest) = l.split_once(char::is_whitespace).unwrap_or((l, ""));
        match tag {
            "v" => {
                let v = numbers(path, rest)?;
                if v.len() != 3 {
                    return Err(parse_err(path, format!("bad vertex {l:?}")));
                }
                verts.push(Vec3::new(v[0], v[1], v[2]));
            }
            "l" => {
                let idx: Vec<usize> = rest
                    .split_whitespace()
                    .map(|t| t.parse::<usize>().ok().filter(|i| *i >= 1 && *i <= verts.len()))
                    .collect::<Option<_>>()
                    .ok_or_else(|| parse_err(path, format!("bad polyline {l:?}")))?;
                for w in idx.windows(2) {
                    let id = PlaneId(out.len() as u64);
                    out.push(LineSegment3D::new(verts[w[0] - 1], verts[w[1] - 1], id, EdgeIndex::ALL[0]));
                }
            }
            _ => {}
        }
    }
    Ok(out)
}

pub fn read_obj_lines(path: &Path) -> Result<Vec<LineSegment3D>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    lines_from_obj(path, &read_text(path)?)
}

// ---- loss log ----

pub fn loss_log_to_text(history: &[LossRecord]) -> String {
    let mut s = String::from("epoch iteration view lambda render euc2d ort2d group total planes assignments\n");
    for h in history {
        let _ = writeln!(
            s,
            "{} {} {} {} {} {} {} {} {} {} {}",
            h.epoch, h.iteration, h.view, h.lambda, h.render, h.euc2d, h.ort2d, h.group, h.total, h.planes, h.assignments
        );
    }
    s
}

// ---- config ----

/// Every tunable of the pipeline, addressable by key.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PipelineConfig {
    pub optim: OptimConfig,
    pub thresholds: Thresholds,
    /// λ at which extraction casts its first-hit rays.
    pub extract_lambda: f64,
    /// M1 distance threshold.
    pub eval_tau: f64,
    /// GT samples per line when the ground truth is a line set.
    pub gt_samples_per_line: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            optim: OptimConfig::default(),
            thresholds: Thresholds::default(),
            extract_lambda: crate::raster::LAMBDA_MAX,
            eval_tau: crate::metrics::DEFAULT_TAU,
            gt_samples_per_line: crate::metrics::M2_SAMPLES,
        }
    }
}

enum Slot<'a> {
    F(&'a mut f64),
    U(&'a mut usize),
    U64(&'a mut u64),
}

impl PipelineConfig {
    fn slots(&mut self) -> BTreeMap<&'static str, Slot<'_>> {
        let o = &mut self.optim;
        let w: &mut LossWeights = &mut o.weights;
        let t = &mut self.thresholds;
        BTreeMap::from([
            ("epochs", Slot::U(&mut o.epochs)),
            ("lr", Slot::F(&mut o.lr)),
            ("beta1", Slot::F(&mut o.beta1)),
            ("beta2", Slot::F(&mut o.beta2)),
            ("eps", Slot::F(&mut o.eps)),
            ("split_threshold", Slot::F(&mut o.split_threshold)),
            ("blend", Slot::U(&mut o.blend)),
            ("weight_filter", Slot::F(&mut o.weight_filter)),
            ("initial_planes", Slot::U(&mut o.initial_planes)),
            ("group_cap", Slot::U(&mut o.group_cap)),
            ("seed", Slot::U64(&mut o.seed)),
            ("alpha_d", Slot::F(&mut w.alpha_d)),
            ("alpha_n", Slot::F(&mut w.alpha_n)),
            ("alpha_1", Slot::F(&mut w.alpha_1)),
            ("alpha_2", Slot::F(&mut w.alpha_2)),
            ("alpha_3", Slot::F(&mut w.alpha_3)),
            ("alpha_pi", Slot::F(&mut w.alpha_pi)),
            ("alpha_l", Slot::F(&mut w.alpha_l)),
            ("extract_tau_d", Slot::F(&mut t.extract_tau_d)),
            ("extract_tau_alpha", Slot::F(&mut t.extract_tau_alpha)),
            ("track_tau_a", Slot::F(&mut t.track_tau_a)),
            ("track_tau_d", Slot::F(&mut t.track_tau_d)),
            ("track_tau_o", Slot::F(&mut t.track_tau_o)),
            ("tau_dbscan", Slot::F(&mut t.tau_dbscan)),
            ("min_support_views", Slot::U(&mut t.min_support_views)),
            ("extract_lambda", Slot::F(&mut self.extract_lambda)),
            ("eval_tau", Slot::F(&mut self.eval_tau)),
            ("gt_samples_per_line", Slot::U(&mut self.gt_samples_per_line)),
        ])
    }

    /// Sets `key` from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = || Error::Config(format!("bad value {value:?} for {key}"));
        match self.slots().remove(key) {
            Some(Slot::F(x)) => *x = value.parse().map_err(|_| bad())?,
            Some(Slot::U(x)) => *x = value.parse().map_err(|_| bad())?,
            Some(Slot::U64(x)) => *x = value.parse().map_err(|_| bad())?,
            None => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.optim.validate()?;
        if !(self.extract_lambda > 0.0) || !(self.eval_tau > 0.0) || self.gt_samples_per_line < 2 {
            return Err(Error::Config("extract_lambda and eval_tau must be positive, gt_samples_per_line ≥ 2".into()));
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults. Unknown keys and
    /// repeated keys are errors.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::BTreeSet::new();
        for line in content_lines(text) {
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Config(format!("expected key=value, got {line:?}")))?;
            let k = k.trim();
            if !seen.insert(k.to_string()) {
                return Err(Error::Config(format!("duplicate key {k:?}")));
            }
            cfg.set(k, v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut copy = *self;
        let mut s = String::new();
        for (k, slot) in copy.slots() {
            let _ = match slot {
                Slot::F(x) => writeln!(s, "{k}={x}"),
                Slot::U(x) => writeln!(s, "{k}={x}"),
                Slot::U64(x) => writeln!(s, "{k}={x}"),
            };
        }
        s
    }

    pub fn read(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_text(&read_text(path)?)
    }
}

// ---- scene directories ----

pub fn camera_path(root: &Path, id: usize) -> PathBuf {
    root.join(format!("cam_{id:04}.txt"))
}
pub fn depth_path(root: &Path, id: usize) -> PathBuf {
    root.join(format!("depth_{id:04}.bin"))
}
pub fn normal_path(root: &Path, id: usize) -> PathBuf {
    root.join(format!("normal_{id:04}.bin"))
}
pub fn detections_path(root: &Path, id: usize) -> PathBuf {
    root.join(format!("lines_{id:04}.txt"))
}
pub fn gt_lines_path(root: &Path) -> PathBuf {
    root.join("gt_lines.obj")
}

/// Writes the per-view files of `views` under `root`.
pub fn write_scene(root: &Path, views: &[CameraView]) -> Result<()> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    for v in views {
        write_camera(&camera_path(root, v.id), &v.camera)?;
        write_depth(&depth_path(root, v.id), v.width(), v.height(), &v.depth)?;
        write_normals(&normal_path(root, v.id), v.width(), v.height(), &v.normals)?;
        write_text(&detections_path(root, v.id), &detections_to_text(&v.lines))?;
    }
    Ok(())
}

/// Loads views `0, 1, …` for as long as camera files exist. Every view
/// needs its depth, normal and detection files with matching sizes.
pub fn read_scene(root: &Path) -> Result<Vec<CameraView>> {
    if !root.is_dir() {
        return Err(Error::MissingFile(root.to_path_buf()));
    }
    let mut views = Vec::new();
    while camera_path(root, views.len()).exists() {
        let id = views.len();
        let (w, h, depth) = read_depth(&depth_path(root, id))?;
        let cam = read_camera(&camera_path(root, id), w, h)?;
        let (nw, nh, normals) = read_normals(&normal_path(root, id), &cam)?;
        if (nw, nh) != (w, h) {
            return Err(Error::ShapeMismatch(format!("view {id}: depth {w}x{h}, normals {nw}x{nh}")));
        }
        let dpath = detections_path(root, id);
        if !dpath.exists() {
            return Err(Error::MissingFile(dpath));
        }
        let lines = read_detections(&dpath)?;
        views.push(CameraView::new(id, cam, depth, normals, lines)?);
    }
    if views.is_empty() {
        return Err(Error::MissingCamera(camera_path(root, 0)));
    }
    Ok(views)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{synthesize, DegradationSpec};

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn maps_round_trip_exactly() {
        let d = tmp();
        let p = d.path().join("d.bin");
        let depth: Vec<f64> = (0..12).map(|i| f64::from(i as f32 * 0.37f32)).collect();
        write_depth(&p, 4, 3, &depth).unwrap();
        assert_eq!(read_depth(&p).unwrap(), (4, 3, depth));
        let bytes = fs::read(&p).unwrap();
        assert_eq!(bytes.len(), 16 + 48);
        assert_eq!(&bytes[..4], b"LPD1");
        assert!(matches!(decode_map(&p, &bytes[..20]), Err(Error::Parse { .. })));
        assert!(matches!(read_depth(&d.path().join("none.bin")), Err(Error::MissingDepth(_))));
    }

    #[test]
    fn camera_frame_normals_are_rotated_to_world() {
        let d = tmp();
        let k = Intrinsics { fx: 2.0, fy: 2.0, cx: 1.0, cy: 1.0 };
        let cam = Camera::look_at(k, Vec3::zeros(), Vec3::x(), Vec3::z(), 2, 1).unwrap();
        let world = Vec3::new(-1.0, 0.0, 0.0);
        let c = cam.rotation_matrix() * world;
        let data: Vec<f32> = [c, c].iter().flat_map(|n| [n.x as f32, n.y as f32, n.z as f32]).collect();
        let p = d.path().join("n.bin");
        fs::write(&p, encode_map(NORMAL_CAMERA_MAGIC, 2, 1, 3, &data)).unwrap();
        let (_, _, ns) = read_normals(&p, &cam).unwrap();
        assert!(ns.iter().all(|n| (n - world).norm() < 1e-6));
    }

    #[test]
    fn scene_round_trip() {
        let d = tmp();
        let spec = DegradationSpec { jitter_sigma: 0.3, seed: 4, ..DegradationSpec::default() };
        let (_, views, _) = synthesize(Vec3::new(1.0, 1.0, 1.0), 3, &spec).unwrap();
        write_scene(d.path(), &views).unwrap();
        let back = read_scene(d.path()).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in views.iter().zip(&back) {
            assert_eq!(a.camera.intrinsics, b.camera.intrinsics);
            assert_eq!(a.camera.pose.translation, b.camera.pose.translation);
            assert!((a.camera.rotation_matrix() - b.camera.rotation_matrix()).norm() < 1e-15);
            assert_eq!(a.lines, b.lines);
            let f32s = |x: &[f64]| x.iter().map(|v| *v as f32).collect::<Vec<_>>();
            assert_eq!(f32s(&a.depth), f32s(&b.depth));
        }
        fs::remove_file(depth_path(d.path(), 1)).unwrap();
        let e = read_scene(d.path()).unwrap_err();
        assert_eq!(e.code(), "E_MISSING_DEPTH");
        assert_eq!(e.exit_code(), 3);
    }

    #[test]
    fn planes_and_lines_round_trip_bitwise() {
        let planes = vec![
            PlanarPrimitive::new(PlaneId(3), Vec3::new(0.1, -2.0 / 3.0, 1e-17), [0.6, 0.8, 0.0, 0.0], [0.1, 0.2, 0.3, 1.0 / 3.0]),
            PlanarPrimitive::new(PlaneId(u64::MAX), Vec3::new(1e300, -0.0, 5.5), [1.0, 0.0, 0.0, 0.0], [1e-4; 4]),
        ];
        let p = Path::new("mem");
        let text = planes_to_text(&planes);
        assert_eq!(planes_from_text(p, &text).unwrap(), planes);
        assert_eq!(planes_to_text(&planes_from_text(p, &text).unwrap()), text);

        let mut l = LineSegment3D::new(Vec3::new(0.1, 0.2, 0.3), Vec3::new(-1.0 / 7.0, 2.0, 3.0), PlaneId(9), EdgeIndex::ALL[2]);
        l.sources = vec![LineRef { view: 0, line: 4 }];
        l.track = vec![LineRef { view: 1, line: 2 }, LineRef { view: 3, line: 0 }];
        let map = LineMap3D { lines: vec![l.clone(), LineSegment3D::new(Vec3::zeros(), Vec3::x(), PlaneId(0), EdgeIndex::ALL[0])] };
        assert_eq!(line_map_from_text(p, &line_map_to_text(&map)).unwrap(), map);
        assert!(line_map_from_text(p, "1 2 3 4 5 6 0 9 0 0").is_err());

        let obj = lines_to_obj(&map.lines);
        let back = lines_from_obj(p, &obj).unwrap();
        assert_eq!(back.iter().map(|x| (x.u, x.v)).collect::<Vec<_>>(), map.lines.iter().map(|x| (x.u, x.v)).collect::<Vec<_>>());
        assert_eq!(planes_to_obj(&planes).lines().filter(|x| x.starts_with("f ")).count(), 2);
    }

    #[test]
    fn config_keys() {
        let c = PipelineConfig::from_text("# comment\nepochs = 5\nalpha_l=0.5\nmin_support_views=2\nseed=7\n").unwrap();
        assert_eq!((c.optim.epochs, c.optim.weights.alpha_l, c.thresholds.min_support_views, c.optim.seed), (5, 0.5, 2, 7));
        assert!(PipelineConfig::from_text("nope=1").is_err());
        assert!(PipelineConfig::from_text("epochs=1\nepochs=2").is_err());
        assert!(PipelineConfig::from_text("lr=abc").is_err());
        let d = PipelineConfig::default();
        assert_eq!(PipelineConfig::from_text(&d.to_text()).unwrap(), d);
        assert_eq!(d.to_text().lines().count(), 28);
    }

    #[test]
    fn detections_parse() {
        let p = Path::new("mem");
        let d = tmp();
        let f = d.path().join("l.txt");
        fs::write(&f, "1 2 3 4\n\n# c\n5.5 6 7 8\n").unwrap();
        let l = read_detections(&f).unwrap();
        assert_eq!(l.len(), 2);
        assert_eq!((l[1].a, l[1].index), (Vec2::new(5.5, 6.0), 1));
        fs::write(&f, "1 2 3\n").unwrap();
        assert!(read_detections(&f).is_err());
        let _ = p;
    }
}
