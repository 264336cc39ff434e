//! Planar geometry in the scenario's local East-North-Up frame.
//!
//! Road geometry is horizontal: every distance and heading here ignores the
//! `up` component. Headings are measured counterclockwise from East, in
//! radians, normalized to `[0, 2π)`.

use std::f64::consts::TAU;

use nalgebra::Matrix2;

use crate::error::GeometryError;

/// A point in the local East-North-Up frame, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EnuPoint {
    pub east: f64,
    pub north: f64,
    pub up: f64,
}

impl EnuPoint {
    pub const fn new(east: f64, north: f64, up: f64) -> Self {
        Self { east, north, up }
    }

    pub const fn horizontal(east: f64, north: f64) -> Self {
        Self { east, north, up: 0.0 }
    }

    pub fn is_finite(&self) -> bool {
        self.east.is_finite() && self.north.is_finite() && self.up.is_finite()
    }

    /// Horizontal distance to `other`.
    pub fn distance_2d(&self, other: &EnuPoint) -> f64 {
        (self.east - other.east).hypot(self.north - other.north)
    }

    /// Full 3-D distance to `other`.
    pub fn distance(&self, other: &EnuPoint) -> f64 {
        let de = self.east - other.east;
        let dn = self.north - other.north;
        let du = self.up - other.up;
        (de * de + dn * dn + du * du).sqrt()
    }

    pub fn midpoint(&self, other: &EnuPoint) -> EnuPoint {
        EnuPoint::new(
            0.5 * (self.east + other.east),
            0.5 * (self.north + other.north),
            0.5 * (self.up + other.up),
        )
    }

    /// Linear interpolation `self + t (other - self)`.
    pub fn lerp(&self, other: &EnuPoint, t: f64) -> EnuPoint {
        EnuPoint::new(
            self.east + t * (other.east - self.east),
            self.north + t * (other.north - self.north),
            self.up + t * (other.up - self.up),
        )
    }
}

/// A straight road piece between two distinct points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub a: EnuPoint,
    pub b: EnuPoint,
    pub length: f64,
    pub heading: f64,
    pub midpoint: EnuPoint,
}

impl Segment {
    /// Builds a segment from `a` to `b`; rejects non-finite or coincident
    /// endpoints (horizontal length zero).
    pub fn new(a: EnuPoint, b: EnuPoint) -> Result<Self, GeometryError> {
        if !a.is_finite() || !b.is_finite() {
            return Err(GeometryError::NonFinite);
        }
        let length = a.distance_2d(&b);
        if length <= 0.0 {
            return Err(GeometryError::DegenerateSegment {
                east: a.east,
                north: a.north,
            });
        }
        Ok(Self {
            a,
            b,
            length,
            heading: normalize_angle((b.north - a.north).atan2(b.east - a.east)),
            midpoint: a.midpoint(&b),
        })
    }

    /// Unit direction vector `(east, north)` from `a` to `b`.
    pub fn direction(&self) -> (f64, f64) {
        (self.heading.cos(), self.heading.sin())
    }

    /// Same geometry traversed from `b` to `a`.
    pub fn reversed(&self) -> Segment {
        Segment::new(self.b, self.a).expect("reversal of a valid segment")
    }

    /// Closest point of the segment to `p` (horizontal plane) and its
    /// parameter `t ∈ [0, 1]` along `a → b`.
    pub fn closest_point(&self, p: &EnuPoint) -> (EnuPoint, f64) {
        let de = self.b.east - self.a.east;
        let dn = self.b.north - self.a.north;
        let len2 = de * de + dn * dn;
        let t = (((p.east - self.a.east) * de + (p.north - self.a.north) * dn) / len2).clamp(0.0, 1.0);
        (self.a.lerp(&self.b, t), t)
    }

    /// Point at arc length `s` from `a`, clamped to the segment.
    pub fn point_at(&self, s: f64) -> EnuPoint {
        self.a.lerp(&self.b, (s / self.length).clamp(0.0, 1.0))
    }
}

/// Wraps an angle into `[0, 2π)`.
pub fn normalize_angle(theta: f64) -> f64 {
    let r = theta.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Euclidean distance between `p` and the closest point of `s`, in the
/// horizontal plane.
pub fn point_segment_distance(p: &EnuPoint, s: &Segment) -> f64 {
    let (c, _) = s.closest_point(p);
    p.distance_2d(&c)
}

/// Heading mismatch cost `1 - |cos(θ_user - θ_road)|`.
///
/// The absolute value makes both travel directions along a road equally
/// good, so the cost has period π in either argument.
pub fn heading_cost(theta_user: f64, theta_road: f64) -> f64 {
    (1.0 - (theta_user - theta_road).cos().abs()).clamp(0.0, 1.0)
}

/// Clockwise rotation into the road frame: `[[cos θ, sin θ], [-sin θ, cos θ]]`.
///
/// Row 0 yields the component parallel to the road, row 1 the perpendicular
/// component.
pub fn rotation_to_road(theta_road: f64) -> Matrix2<f64> {
    let (s, c) = theta_road.sin_cos();
    Matrix2::new(c, s, -s, c)
}
