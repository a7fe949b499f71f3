//! Planar geometry: points, arc-length parameterized polylines and oriented boxes.

use serde::{Deserialize, Serialize};
use std::ops::{Add, Mul, Sub};

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn from_heading(heading: f64) -> Self {
        Self::new(heading.cos(), heading.sin())
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the 3D cross product; positive when `other` is to the left.
    pub fn cross(self, other: Vec2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn left_normal(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }
}

impl From<[f64; 2]> for Vec2 {
    fn from(v: [f64; 2]) -> Self {
        Vec2::new(v[0], v[1])
    }
}

impl From<Vec2> for [f64; 2] {
    fn from(v: Vec2) -> Self {
        [v.x, v.y]
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut r = a % two_pi;
    if r <= -std::f64::consts::PI {
        r += two_pi;
    } else if r > std::f64::consts::PI {
        r -= two_pi;
    }
    r
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PolylineError {
    #[error("polyline needs at least 2 points, got {0}")]
    TooShort(usize),
    #[error("consecutive points {0} and {1} coincide")]
    Duplicate(usize, usize),
}

/// Result of projecting a point onto a polyline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Arc length of the foot point. May fall outside `[0, len]` when the
    /// point lies beyond either end; the end segments are extended.
    pub s: f64,
    /// Signed lateral offset, positive to the left of travel direction.
    pub d: f64,
    pub heading: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    points: Vec<Vec2>,
    cumulative: Vec<f64>,
}

impl Polyline {
    pub fn new(points: Vec<Vec2>) -> Result<Self, PolylineError> {
        if points.len() < 2 {
            return Err(PolylineError::TooShort(points.len()));
        }
        let mut cumulative = Vec::with_capacity(points.len());
        cumulative.push(0.0);
        for i in 1..points.len() {
            let seg = (points[i] - points[i - 1]).norm();
            if seg <= 1e-9 {
                return Err(PolylineError::Duplicate(i - 1, i));
            }
            cumulative.push(cumulative[i - 1] + seg);
        }
        Ok(Self { points, cumulative })
    }

    pub fn points(&self) -> &[Vec2] {
        &self.points
    }

    pub fn length(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    fn segment_index(&self, s: f64) -> usize {
        let n = self.points.len() - 1;
        match self
            .cumulative
            .binary_search_by(|c| c.partial_cmp(&s).unwrap_or(std::cmp::Ordering::Less))
        {
            Ok(i) => i.min(n - 1),
            Err(i) => i.saturating_sub(1).min(n - 1),
        }
    }

    fn segment_heading(&self, i: usize) -> f64 {
        let d = self.points[i + 1] - self.points[i];
        d.y.atan2(d.x)
    }

    /// Point and heading at arc length `s`, extrapolating linearly past the ends.
    pub fn pose_at(&self, s: f64) -> (Vec2, f64) {
        let i = self.segment_index(s);
        let a = self.points[i];
        let b = self.points[i + 1];
        let seg = self.cumulative[i + 1] - self.cumulative[i];
        let t = (s - self.cumulative[i]) / seg;
        (a + (b - a) * t, self.segment_heading(i))
    }

    /// Point at arc length `s` offset laterally by `d` (left positive).
    pub fn point_at(&self, s: f64, d: f64) -> Vec2 {
        let (p, h) = self.pose_at(s);
        p + Vec2::from_heading(h).left_normal() * d
    }

    pub fn heading_at(&self, s: f64) -> f64 {
        self.segment_heading(self.segment_index(s))
    }

    /// Signed curvature estimated from the heading change across a window around `s`.
    pub fn curvature_at(&self, s: f64) -> f64 {
        let h = 1.0;
        let a = self.heading_at(s - h);
        let b = self.heading_at(s + h);
        wrap_angle(b - a) / (2.0 * h)
    }

    pub fn project(&self, p: Vec2) -> Projection {
        let n = self.points.len() - 1;
        let mut best: Option<(f64, Projection)> = None;
        for i in 0..n {
            let a = self.points[i];
            let b = self.points[i + 1];
            let ab = b - a;
            let len = self.cumulative[i + 1] - self.cumulative[i];
            let mut t = (p - a).dot(ab) / (len * len);
            if i > 0 {
                t = t.max(0.0);
            }
            if i < n - 1 {
                t = t.min(1.0);
            }
            let foot = a + ab * t;
            let dist = (p - foot).norm();
            let dir = ab * (1.0 / len);
            let d = dir.cross(p - foot);
            let proj = Projection {
                s: self.cumulative[i] + t * len,
                d,
                heading: ab.y.atan2(ab.x),
            };
            if best.as_ref().is_none_or(|(bd, _)| dist < *bd - 1e-12) {
                best = Some((dist, proj));
            }
        }
        best.unwrap().1
    }
}

/// Oriented bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obb {
    pub center: Vec2,
    pub heading: f64,
    pub half_length: f64,
    pub half_width: f64,
}

impl Obb {
    pub fn corners(&self) -> [Vec2; 4] {
        let f = Vec2::from_heading(self.heading);
        let l = f.left_normal();
        let a = f * self.half_length;
        let b = l * self.half_width;
        [
            self.center + a + b,
            self.center + a - b,
            self.center - a - b,
            self.center - a + b,
        ]
    }

    /// Separating-axis overlap test. Touching edges do not count as overlap.
    pub fn overlaps(&self, other: &Obb) -> bool {
        let axes = [
            Vec2::from_heading(self.heading),
            Vec2::from_heading(self.heading).left_normal(),
            Vec2::from_heading(other.heading),
            Vec2::from_heading(other.heading).left_normal(),
        ];
        let ca = self.corners();
        let cb = other.corners();
        for axis in axes {
            let (amin, amax) = extent(&ca, axis);
            let (bmin, bmax) = extent(&cb, axis);
            if amax <= bmin || bmax <= amin {
                return false;
            }
        }
        true
    }
}

fn extent(corners: &[Vec2; 4], axis: Vec2) -> (f64, f64) {
    corners.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| {
        let v = c.dot(axis);
        (lo.min(v), hi.max(v))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line() -> Polyline {
        Polyline::new(vec![Vec2::new(0.0, 0.0), Vec2::new(10.0, 0.0), Vec2::new(10.0, 10.0)]).unwrap()
    }

    #[test]
    fn rejects_degenerate() {
        assert_eq!(Polyline::new(vec![Vec2::new(0.0, 0.0)]), Err(PolylineError::TooShort(1)));
        assert_eq!(
            Polyline::new(vec![Vec2::new(0.0, 0.0), Vec2::new(0.0, 0.0)]),
            Err(PolylineError::Duplicate(0, 1))
        );
    }

    #[test]
    fn pose_and_projection() {
        let p = line();
        assert_eq!(p.length(), 20.0);
        let (pt, h) = p.pose_at(15.0);
        assert!((pt.x - 10.0).abs() < 1e-12 && (pt.y - 5.0).abs() < 1e-12);
        assert!((h - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        let pr = p.project(Vec2::new(5.0, 1.0));
        assert!((pr.s - 5.0).abs() < 1e-12);
        assert!((pr.d - 1.0).abs() < 1e-12);
        let before = p.project(Vec2::new(-3.0, -0.5));
        assert!((before.s + 3.0).abs() < 1e-12);
        assert!((before.d + 0.5).abs() < 1e-12);
    }

    #[test]
    fn obb_overlap_cases() {
        let a = Obb { center: Vec2::new(0.0, 0.0), heading: 0.0, half_length: 2.0, half_width: 1.0 };
        let b = Obb { center: Vec2::new(3.5, 0.0), heading: 0.0, half_length: 2.0, half_width: 1.0 };
        let c = Obb { center: Vec2::new(10.0, 0.0), heading: 0.3, half_length: 2.0, half_width: 1.0 };
        assert!(a.overlaps(&b));
        assert!(!a.overlaps(&c));
        let rotated = Obb { center: Vec2::new(2.9, 2.9), heading: 0.785, half_length: 2.0, half_width: 0.5 };
        assert_eq!(a.overlaps(&rotated), rotated.overlaps(&a));
    }

    proptest! {
        #[test]
        fn overlap_is_symmetric(
            ax in -10.0..10.0f64, ay in -10.0..10.0f64, ah in -3.2..3.2f64,
            bx in -10.0..10.0f64, by in -10.0..10.0f64, bh in -3.2..3.2f64,
        ) {
            let a = Obb { center: Vec2::new(ax, ay), heading: ah, half_length: 2.3, half_width: 0.9 };
            let b = Obb { center: Vec2::new(bx, by), heading: bh, half_length: 1.0, half_width: 0.4 };
            prop_assert_eq!(a.overlaps(&b), b.overlaps(&a));
        }

        #[test]
        fn point_at_projects_back(s in 0.5..19.5f64, d in -0.4..0.4f64) {
            let p = line();
            let pt = p.point_at(s, d);
            let pr = p.project(pt);
            prop_assert!((pr.s - s).abs() < 1e-9 || (s - 10.0).abs() < 0.5);
            prop_assert!((pr.d - d).abs() < 1e-9 || (s - 10.0).abs() < 0.5);
        }
    }
}
