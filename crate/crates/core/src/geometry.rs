//! Poincaré disk model of the hyperbolic plane with curvature −1.
//!
//! Points are stored in disk coordinates. The boundary circle is
//! parametrized by an angle, and the Busemann function is realized through
//! the Poisson kernel `P(x, b) = (1 − |x|²) / |x − e^{iθ}|²`.

use std::f64::consts::PI;

use num_complex::Complex64;
use thiserror::Error;

/// Spectral shift for the curvature −1 normalization.
pub const RHO: f64 = 0.5;

/// Points closer than this to the unit circle are rejected.
pub const BOUNDARY_GUARD: f64 = 1e-12;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum GeometryError {
    #[error("radius must be positive, got {0}")]
    NonPositiveRadius(f64),
    #[error("point ({u}, {v}) lies outside the open unit disk")]
    OutsideDisk { u: f64, v: f64 },
    #[error("point at euclidean radius {0} is too close to the boundary circle")]
    NearBoundary(f64),
    #[error("circle needs at least 8 nodes, got {0}")]
    TooFewNodes(usize),
}

/// Parameters of the model space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpaceParams {
    pub d: usize,
    pub rho: f64,
    pub plancherel_scale: f64,
    pub r_max: f64,
}

impl SpaceParams {
    pub fn new(plancherel_scale: f64, r_max: f64) -> Self {
        Self { d: 2, rho: RHO, plancherel_scale, r_max }
    }
}

/// A point of the open unit disk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub u: f64,
    pub v: f64,
}

impl Point {
    pub fn new(u: f64, v: f64) -> Result<Self, GeometryError> {
        if !(u * u + v * v < 1.0) {
            return Err(GeometryError::OutsideDisk { u, v });
        }
        Ok(Self { u, v })
    }

    pub const fn origin() -> Self {
        Self { u: 0.0, v: 0.0 }
    }

    /// Point at geodesic distance `r` from the origin in direction `angle`.
    pub fn from_polar(r: f64, angle: f64) -> Self {
        let t = (0.5 * r).tanh();
        Self { u: t * angle.cos(), v: t * angle.sin() }
    }

    pub fn from_complex(z: Complex64) -> Result<Self, GeometryError> {
        Self::new(z.re, z.im)
    }

    pub fn to_complex(self) -> Complex64 {
        Complex64::new(self.u, self.v)
    }

    pub fn norm_sqr(self) -> f64 {
        self.u * self.u + self.v * self.v
    }

    /// Geodesic polar coordinates `(r, angle)` about the origin.
    pub fn polar(self) -> (f64, f64) {
        let t = self.norm_sqr().sqrt();
        (2.0 * t.atanh(), self.v.atan2(self.u))
    }
}

/// A point of the boundary circle, `θ ∈ [0, 2π)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryPoint {
    pub theta: f64,
}

impl BoundaryPoint {
    pub fn new(theta: f64) -> Self {
        let t = theta.rem_euclid(2.0 * PI);
        Self { theta: if t >= 2.0 * PI { 0.0 } else { t } }
    }
}

/// Hyperbolic distance, evaluated as `2 asinh(|x−y| / sqrt((1−|x|²)(1−|y|²)))`
/// which is stable for nearby points.
pub fn distance(x: Point, y: Point) -> f64 {
    let du = x.u - y.u;
    let dv = x.v - y.v;
    let num = (du * du + dv * dv).sqrt();
    let den = ((1.0 - x.norm_sqr()) * (1.0 - y.norm_sqr())).sqrt();
    2.0 * (num / den).asinh()
}

/// Length of the circle of radius `r`.
pub fn sphere_area(r: f64) -> Result<f64, GeometryError> {
    if !(r > 0.0) {
        return Err(GeometryError::NonPositiveRadius(r));
    }
    Ok(2.0 * PI * r.sinh())
}

/// Area of the disk of radius `r`, `2π(cosh r − 1)`.
pub fn ball_volume(r: f64) -> Result<f64, GeometryError> {
    if !(r > 0.0) {
        return Err(GeometryError::NonPositiveRadius(r));
    }
    let h = (0.5 * r).sinh();
    Ok(4.0 * PI * h * h)
}

/// Ratio `B(3r) / B(r/4)` bounding the multiplicity of an r-ball cover.
pub fn multiplicity_ratio(r: f64) -> Result<f64, GeometryError> {
    Ok(ball_volume(3.0 * r)? / ball_volume(0.25 * r)?)
}

/// Supremum of [`multiplicity_ratio`] over `0 < r < 1`, scanned on a grid of step `step`.
pub fn multiplicity_bound(step: f64) -> f64 {
    let n = (1.0 / step).round() as usize;
    (1..n)
        .map(|i| multiplicity_ratio(i as f64 * step).unwrap_or(0.0))
        .fold(0.0, f64::max)
}

/// Poisson kernel `P(x, b)`.
pub fn poisson_kernel(x: Point, b: BoundaryPoint) -> f64 {
    let du = x.u - b.theta.cos();
    let dv = x.v - b.theta.sin();
    (1.0 - x.norm_sqr()) / (du * du + dv * dv)
}

/// Busemann function `A(x, b) = log P(x, b)`.
pub fn busemann(x: Point, b: BoundaryPoint) -> f64 {
    poisson_kernel(x, b).ln()
}

/// Poisson kernel in geodesic polar form, `ψ` the angle between `x` and `b`.
pub fn poisson_polar(r: f64, psi: f64) -> f64 {
    1.0 / (r.cosh() - r.sinh() * psi.cos())
}

/// Disk isometry `z ↦ (z + a)/(1 + conj(a) z)` sending the origin to `a`.
pub fn transport(a: Point, z: Point) -> Point {
    let a = a.to_complex();
    let z = z.to_complex();
    let w = (z + a) / (Complex64::new(1.0, 0.0) + a.conj() * z);
    Point { u: w.re, v: w.im }
}

/// Inverse of [`transport`]: sends `a` to the origin.
pub fn transport_inverse(a: Point, z: Point) -> Point {
    let a = a.to_complex();
    let z = z.to_complex();
    let w = (z - a) / (Complex64::new(1.0, 0.0) - a.conj() * z);
    Point { u: w.re, v: w.im }
}

/// `m` points equally spaced on the circle of radius `tau` about `center`.
pub fn circle_points(center: Point, tau: f64, m: usize) -> Result<Vec<Point>, GeometryError> {
    if !(tau > 0.0) {
        return Err(GeometryError::NonPositiveRadius(tau));
    }
    if m < 8 {
        return Err(GeometryError::TooFewNodes(m));
    }
    let c = center.norm_sqr().sqrt();
    if c > 1.0 - BOUNDARY_GUARD {
        return Err(GeometryError::NearBoundary(c));
    }
    let t = (0.5 * tau).tanh();
    let pts: Vec<Point> = (0..m)
        .map(|j| {
            let a = 2.0 * PI * j as f64 / m as f64;
            transport(center, Point { u: t * a.cos(), v: t * a.sin() })
        })
        .collect();
    if let Some(p) = pts.iter().find(|p| p.norm_sqr().sqrt() > 1.0 - BOUNDARY_GUARD) {
        return Err(GeometryError::NearBoundary(p.norm_sqr().sqrt()));
    }
    Ok(pts)
}
