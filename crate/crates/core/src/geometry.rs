//! Domain types and camera/plane geometry.

use std::fmt;

use nalgebra::{Isometry3, Matrix3, Translation3, UnitQuaternion};

use crate::error::{Error, Result};
use crate::jet::{Jet, Real, V2, V3};

pub type Vec2 = nalgebra::Vector2<f64>;
pub type Vec3 = nalgebra::Vector3<f64>;

/// Smallest admissible plane radius in world units.
pub const RADIUS_FLOOR: f64 = 1e-4;

/// Number of learnable scalars per plane: center (3), quaternion (4), radii (4).
pub const PLANE_PARAMS: usize = 11;

pub type PlaneJet = Jet<PLANE_PARAMS>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PlaneId(pub u64);

impl fmt::Display for PlaneId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Edge number in `1..=4`, following the vertex cycle v1→v2→v3→v4→v1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EdgeIndex(u8);

impl EdgeIndex {
    pub const ALL: [EdgeIndex; 4] = [EdgeIndex(1), EdgeIndex(2), EdgeIndex(3), EdgeIndex(4)];

    pub fn new(i: u8) -> Option<Self> {
        (1..=4).contains(&i).then_some(Self(i))
    }
    pub fn get(self) -> u8 {
        self.0
    }
    /// Indices into the vertex array of the two endpoints.
    pub fn vertex_pair(self) -> (usize, usize) {
        let a = (self.0 - 1) as usize;
        (a, (a + 1) % 4)
    }
}

/// A detected 2D line identified by `(view id, line index)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LineRef {
    pub view: usize,
    pub line: usize,
}

/// A learnable finite rectangle.
///
/// The rotation is stored as a raw `(w, x, y, z)` quaternion; every derived
/// quantity uses its normalized version, and the optimizer projects it back
/// onto the unit sphere after each update.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanarPrimitive {
    pub id: PlaneId,
    pub center: Vec3,
    pub rotation: [f64; 4],
    /// `(x+, x-, y+, y-)`.
    pub radii: [f64; 4],
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlaneAxes {
    pub x: Vec3,
    pub y: Vec3,
    pub normal: Vec3,
}

/// Center, axes and radii of a plane over a generic scalar.
#[derive(Clone, Copy, Debug)]
pub struct PlaneFrame<T> {
    pub center: V3<T>,
    pub vx: V3<T>,
    pub vy: V3<T>,
    pub n: V3<T>,
    pub radii: [T; 4],
}

impl<T: Real> PlaneFrame<T> {
    pub fn from_params(p: &[T; PLANE_PARAMS]) -> Self {
        let center = V3::new(p[0], p[1], p[2]);
        let qn = (p[3] * p[3] + p[4] * p[4] + p[5] * p[5] + p[6] * p[6]).sqrt();
        let (w, x, y, z) = (p[3] / qn, p[4] / qn, p[5] / qn, p[6] / qn);
        let one = T::cst(1.0);
        let vx = V3::new(
            one - (y * y + z * z) * 2.0,
            (x * y + w * z) * 2.0,
            (x * z - w * y) * 2.0,
        );
        let vy = V3::new(
            (x * y - w * z) * 2.0,
            one - (x * x + z * z) * 2.0,
            (y * z + w * x) * 2.0,
        );
        let n = V3::new(
            (x * z + w * y) * 2.0,
            (y * z - w * x) * 2.0,
            one - (x * x + y * y) * 2.0,
        );
        Self { center, vx, vy, n, radii: [p[7], p[8], p[9], p[10]] }
    }

    pub fn vertices(&self) -> [V3<T>; 4] {
        let [xp, xn, yp, yn] = self.radii;
        let c = self.center;
        [
            c + self.vx.scale(xp) + self.vy.scale(yp),
            c + self.vx.scale(xp) - self.vy.scale(yn),
            c - self.vx.scale(xn) - self.vy.scale(yn),
            c - self.vx.scale(xn) + self.vy.scale(yp),
        ]
    }
}

impl PlanarPrimitive {
    pub fn new(id: PlaneId, center: Vec3, rotation: [f64; 4], radii: [f64; 4]) -> Self {
        let mut p = Self { id, center, rotation, radii };
        p.normalize();
        p
    }

    /// Builds a plane from a rotation given as a unit quaternion.
    pub fn from_rotation(id: PlaneId, center: Vec3, q: &UnitQuaternion<f64>, radii: [f64; 4]) -> Self {
        Self::new(id, center, [q.w, q.i, q.j, q.k], radii)
    }

    /// Renormalizes the quaternion and floors the radii.
    pub fn normalize(&mut self) {
        let n = self.rotation.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 && n.is_finite() {
            for v in self.rotation.iter_mut() {
                *v /= n;
            }
        } else {
            self.rotation = [1.0, 0.0, 0.0, 0.0];
        }
        for r in self.radii.iter_mut() {
            *r = r.max(RADIUS_FLOOR);
        }
    }

    pub fn params(&self) -> [f64; PLANE_PARAMS] {
        let c = self.center;
        let q = self.rotation;
        let r = self.radii;
        [c.x, c.y, c.z, q[0], q[1], q[2], q[3], r[0], r[1], r[2], r[3]]
    }

    pub fn set_params(&mut self, p: &[f64; PLANE_PARAMS]) {
        self.center = Vec3::new(p[0], p[1], p[2]);
        self.rotation = [p[3], p[4], p[5], p[6]];
        self.radii = [p[7], p[8], p[9], p[10]];
    }

    pub fn frame(&self) -> PlaneFrame<f64> {
        PlaneFrame::from_params(&self.params())
    }

    /// Frame whose tangents are the derivatives w.r.t. this plane's parameters.
    pub fn jet_frame(&self) -> PlaneFrame<PlaneJet> {
        let p = self.params();
        let vars: [PlaneJet; PLANE_PARAMS] = std::array::from_fn(|i| Jet::var(p[i], i));
        PlaneFrame::from_params(&vars)
    }

    pub fn unit_quaternion(&self) -> UnitQuaternion<f64> {
        let [w, x, y, z] = self.rotation;
        UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(w, x, y, z))
    }

    pub fn axes(&self) -> PlaneAxes {
        plane_axes(self)
    }

    pub fn vertices(&self) -> [Vec3; 4] {
        plane_vertices(self)
    }

    pub fn edges(&self) -> [LineSegment3D; 4] {
        plane_edges(self)
    }

    /// `true` when every parameter is finite.
    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|v| v.is_finite())
    }
}

pub fn plane_axes(plane: &PlanarPrimitive) -> PlaneAxes {
    let f = plane.frame();
    PlaneAxes { x: f.vx.value(), y: f.vy.value(), normal: f.n.value() }
}

pub fn plane_vertices(plane: &PlanarPrimitive) -> [Vec3; 4] {
    plane.frame().vertices().map(|v| v.value())
}

pub fn plane_edges(plane: &PlanarPrimitive) -> [LineSegment3D; 4] {
    let v = plane_vertices(plane);
    EdgeIndex::ALL.map(|e| {
        let (a, b) = e.vertex_pair();
        LineSegment3D::new(v[a], v[b], plane.id, e)
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LineSegment2D {
    pub a: Vec2,
    pub b: Vec2,
    pub index: usize,
}

impl LineSegment2D {
    pub fn new(a: Vec2, b: Vec2, index: usize) -> Self {
        Self { a, b, index }
    }
    pub fn length(&self) -> f64 {
        (self.b - self.a).norm()
    }
    pub fn direction(&self) -> Vec2 {
        self.b - self.a
    }
}

/// A reconstructed 3D segment with provenance and multi-view support.
#[derive(Clone, Debug, PartialEq)]
pub struct LineSegment3D {
    pub u: Vec3,
    pub v: Vec3,
    pub plane: PlaneId,
    pub edge: EdgeIndex,
    /// Detections consistent with this line under the track criteria.
    pub track: Vec<LineRef>,
    /// Detections whose assignments produced this line during extraction.
    pub sources: Vec<LineRef>,
}

impl LineSegment3D {
    pub fn new(u: Vec3, v: Vec3, plane: PlaneId, edge: EdgeIndex) -> Self {
        Self { u, v, plane, edge, track: Vec::new(), sources: Vec::new() }
    }
    pub fn length(&self) -> f64 {
        (self.v - self.u).norm()
    }
    /// Number of distinct views in the track.
    pub fn image_supports(&self) -> usize {
        let mut views: Vec<usize> = self.track.iter().map(|r| r.view).collect();
        views.sort_unstable();
        views.dedup();
        views.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }
}

/// Pinhole camera with a world-to-camera pose.
///
/// Pixel `(u, v)` spans `[u, u+1) x [v, v+1)` in continuous image
/// coordinates; its center is `(u + 0.5, v + 0.5)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub intrinsics: Intrinsics,
    pub pose: Isometry3<f64>,
    pub width: usize,
    pub height: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
    pub pixel: (usize, usize),
    pub view: usize,
    /// Camera-frame depth gained per unit of travel along `dir`.
    pub depth_per_t: f64,
}

impl Camera {
    pub fn new(intrinsics: Intrinsics, pose: Isometry3<f64>, width: usize, height: usize) -> Result<Self> {
        if !(intrinsics.fx > 0.0 && intrinsics.fy > 0.0) {
            return Err(Error::InvalidView(format!(
                "focal lengths must be positive, got fx={} fy={}",
                intrinsics.fx, intrinsics.fy
            )));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidView("empty image".into()));
        }
        Ok(Self { intrinsics, pose, width, height })
    }

    /// Camera looking from `eye` towards `target`, image y pointing along `-up`.
    pub fn look_at(intrinsics: Intrinsics, eye: Vec3, target: Vec3, up: Vec3, width: usize, height: usize) -> Result<Self> {
        let fwd = (target - eye).normalize();
        let right = fwd.cross(&up).normalize();
        let down = fwd.cross(&right);
        // rows of the world-to-camera rotation are the camera axes
        let r = Matrix3::from_rows(&[right.transpose(), down.transpose(), fwd.transpose()]);
        let rot = UnitQuaternion::from_matrix(&r);
        let t = -(rot * eye);
        Self::new(intrinsics, Isometry3::from_parts(Translation3::from(t), rot), width, height)
    }

    pub fn center(&self) -> Vec3 {
        self.pose.inverse_transform_point(&nalgebra::Point3::origin()).coords
    }

    pub fn to_camera(&self, x: &Vec3) -> Vec3 {
        self.pose.transform_point(&nalgebra::Point3::from(*x)).coords
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.pose.rotation.to_rotation_matrix().into_inner()
    }

    pub fn project_point(&self, x: &Vec3) -> Result<(Vec2, f64)> {
        let c = self.to_camera(x);
        if c.z <= 0.0 {
            return Err(Error::BehindCamera { depth: c.z });
        }
        let k = &self.intrinsics;
        Ok((Vec2::new(k.fx * c.x / c.z + k.cx, k.fy * c.y / c.z + k.cy), c.z))
    }

    /// Projection over a generic scalar; returns pixel and camera depth
    /// without checking the sign of the depth.
    pub fn project_t<T: Real>(&self, x: &V3<T>) -> (V2<T>, T) {
        let r = self.rotation_matrix();
        let t = self.pose.translation.vector;
        let row = |i: usize| x.0[0] * r[(i, 0)] + x.0[1] * r[(i, 1)] + x.0[2] * r[(i, 2)] + t[i];
        let (cx, cy, cz) = (row(0), row(1), row(2));
        let k = &self.intrinsics;
        (V2::new(cx / cz * k.fx + k.cx, cy / cz * k.fy + k.cy), cz)
    }

    pub fn pixel_ray(&self, u: i64, v: i64, view: usize) -> Result<Ray> {
        if u < 0 || v < 0 || u as usize >= self.width || v as usize >= self.height {
            return Err(Error::OutOfBounds { u, v, width: self.width, height: self.height });
        }
        Ok(self.ray_through(Vec2::new(u as f64 + 0.5, v as f64 + 0.5), (u as usize, v as usize), view))
    }

    /// Ray through an arbitrary continuous image point.
    pub fn ray_through(&self, p: Vec2, pixel: (usize, usize), view: usize) -> Ray {
        let k = &self.intrinsics;
        let dc = Vec3::new((p.x - k.cx) / k.fx, (p.y - k.cy) / k.fy, 1.0);
        let n = dc.norm();
        let dir = self.pose.rotation.inverse_transform_vector(&(dc / n));
        Ray { origin: self.center(), dir, pixel, view, depth_per_t: 1.0 / n }
    }
}

/// One posed input view with its supervision maps and detections.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraView {
    pub id: usize,
    pub camera: Camera,
    /// Row-major camera depth, `0` marks invalid pixels.
    pub depth: Vec<f64>,
    /// Row-major world-frame unit normals.
    pub normals: Vec<Vec3>,
    pub lines: Vec<LineSegment2D>,
}

impl CameraView {
    pub fn new(
        id: usize,
        camera: Camera,
        depth: Vec<f64>,
        normals: Vec<Vec3>,
        lines: Vec<LineSegment2D>,
    ) -> Result<Self> {
        let n = camera.width * camera.height;
        if depth.len() != n || normals.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "view {id}: expected {n} pixels, depth has {}, normals {}",
                depth.len(),
                normals.len()
            )));
        }
        if let Some(d) = depth.iter().find(|d| !(**d >= 0.0) || !d.is_finite()) {
            return Err(Error::InvalidView(format!("view {id}: invalid depth value {d}")));
        }
        for (d, nrm) in depth.iter().zip(&normals) {
            if *d > 0.0 && (nrm.norm() - 1.0).abs() > 1e-4 {
                return Err(Error::InvalidView(format!("view {id}: normal {nrm:?} is not unit length")));
            }
        }
        if let Some(l) = lines.iter().find(|l| !(l.length() > 0.0)) {
            return Err(Error::DegenerateSegment { length: l.length() });
        }
        Ok(Self { id, camera, depth, normals, lines })
    }

    pub fn width(&self) -> usize {
        self.camera.width
    }
    pub fn height(&self) -> usize {
        self.camera.height
    }
    pub fn project_point(&self, x: &Vec3) -> Result<(Vec2, f64)> {
        self.camera.project_point(x)
    }
    pub fn pixel_ray(&self, u: i64, v: i64) -> Result<Ray> {
        self.camera.pixel_ray(u, v, self.id)
    }
}

/// Minimal rotation taking `+Z` onto `normal`.
pub fn rotation_from_z(normal: &Vec3) -> UnitQuaternion<f64> {
    let n = normal.normalize();
    if n.z < -1.0 + 1e-12 {
        // half turn about X
        return UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(0.0, 1.0, 0.0, 0.0));
    }
    let q = nalgebra::Quaternion::new(1.0 + n.z, -n.y, n.x, 0.0);
    UnitQuaternion::from_quaternion(q)
}
