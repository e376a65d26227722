//! Scale-invariant consistency measures between a projected edge and a
//! detected 2D segment.

use crate::error::{Error, Result};
use crate::geometry::Vec2;

fn nondegenerate(a: &Vec2, b: &Vec2) -> Result<f64> {
    let l = (b - a).norm();
    if l > 0.0 && l.is_finite() {
        Ok(l)
    } else {
        Err(Error::DegenerateSegment { length: l })
    }
}

/// Unsigned angle between the supporting lines, in `[0, π/2]`.
pub fn angle_distance(a: (&Vec2, &Vec2), b: (&Vec2, &Vec2)) -> Result<f64> {
    let la = nondegenerate(a.0, a.1)?;
    let lb = nondegenerate(b.0, b.1)?;
    let cos = ((a.1 - a.0).dot(&(b.1 - b.0)) / (la * lb)).abs();
    Ok(cos.clamp(-1.0, 1.0).acos())
}

/// Perpendicular distance from `p` to the infinite line through `a`, `b`.
pub fn point_line_distance(p: &Vec2, a: &Vec2, b: &Vec2) -> Result<f64> {
    let l = nondegenerate(a, b)?;
    let (u, v) = (p - a, p - b);
    Ok((u.x * v.y - u.y * v.x).abs() / l)
}

/// Larger of the two endpoint distances of `seg` to the support of `line`.
pub fn max_orthogonal_distance(seg: (&Vec2, &Vec2), line: (&Vec2, &Vec2)) -> Result<f64> {
    let d1 = point_line_distance(seg.0, line.0, line.1)?;
    let d2 = point_line_distance(seg.1, line.0, line.1)?;
    Ok(d1.max(d2))
}

/// Fraction of `target` covered by the orthogonal projection of `seg` onto it.
pub fn overlap_ratio(seg: (&Vec2, &Vec2), target: (&Vec2, &Vec2)) -> Result<f64> {
    let l = nondegenerate(target.0, target.1)?;
    let dir = (target.1 - target.0) / l;
    let s0 = (seg.0 - target.0).dot(&dir);
    let s1 = (seg.1 - target.0).dot(&dir);
    let (lo, hi) = (s0.min(s1).max(0.0), s0.max(s1).min(l));
    Ok(((hi - lo).max(0.0) / l).clamp(0.0, 1.0))
}

/// Euclidean distance from `p` to the closed segment `a`–`b`.
pub fn point_segment_distance(p: &Vec2, a: &Vec2, b: &Vec2) -> f64 {
    let ab = b - a;
    let l2 = ab.norm_squared();
    if l2 == 0.0 {
        return (p - a).norm();
    }
    let s = ((p - a).dot(&ab) / l2).clamp(0.0, 1.0);
    (p - (a + ab * s)).norm()
}
