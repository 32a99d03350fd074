//! Convex domains with their ray geometry, and the quadrature grids built on them.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Half-width of the band around `θ·n = 0` treated as tangential.
pub const TOL_TANGENT: f64 = 1e-9;
/// Distance from the boundary accepted by [`classify_boundary`].
pub const TOL_BOUNDARY: f64 = 1e-9;

#[inline]
pub fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
pub fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub fn add_scaled(a: Point, s: f64, b: Point) -> Point {
    [a[0] + s * b[0], a[1] + s * b[1]]
}

#[inline]
pub fn norm(a: Point) -> f64 {
    a[0].hypot(a[1])
}

#[inline]
pub fn unit(angle: f64) -> Point {
    let (s, c) = angle.sin_cos();
    [c, s]
}

/// Angle of a unit vector in `[0, 2π)`.
#[inline]
pub fn angle_of(v: Point) -> f64 {
    v[1].atan2(v[0]).rem_euclid(2.0 * PI)
}

/// Signed geodesic angle from `b` to `a` on S¹, in `(-π, π]`.
#[inline]
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    if d > PI {
        d - 2.0 * PI
    } else {
        d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum Shape {
    Disk { center: Point, radius: f64 },
    Rectangle { lo: Point, hi: Point },
}

/// A bounded convex region of the plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Domain {
    shape: Shape,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// Forward exit: `x + τ₊θ ∈ ∂X`.
    Plus,
    /// Backward exit: `x − τ₋θ ∈ ∂X`.
    Minus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryClass {
    Inflow,
    Outflow,
    Tangential,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryPoint {
    pub position: Point,
    pub normal: Point,
    pub class: BoundaryClass,
}

impl Domain {
    pub fn new(shape: Shape) -> Result<Self> {
        match shape {
            Shape::Disk { radius, .. } if !(radius > 0.0 && radius.is_finite()) => {
                Err(Error::Domain(format!("disk radius must be positive, got {radius}")))
            }
            Shape::Rectangle { lo, hi } if !(lo[0] < hi[0] && lo[1] < hi[1]) => {
                Err(Error::Domain(format!("rectangle needs lo < hi, got {lo:?} / {hi:?}")))
            }
            _ => Ok(Self { shape }),
        }
    }

    pub fn unit_disk() -> Self {
        Self { shape: Shape::Disk { center: [0.0, 0.0], radius: 1.0 } }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn dimension(&self) -> usize {
        2
    }

    pub fn diameter(&self) -> f64 {
        match self.shape {
            Shape::Disk { radius, .. } => 2.0 * radius,
            Shape::Rectangle { lo, hi } => norm(sub(hi, lo)),
        }
    }

    pub fn area(&self) -> f64 {
        match self.shape {
            Shape::Disk { radius, .. } => PI * radius * radius,
            Shape::Rectangle { lo, hi } => (hi[0] - lo[0]) * (hi[1] - lo[1]),
        }
    }

    pub fn perimeter(&self) -> f64 {
        match self.shape {
            Shape::Disk { radius, .. } => 2.0 * PI * radius,
            Shape::Rectangle { lo, hi } => 2.0 * ((hi[0] - lo[0]) + (hi[1] - lo[1])),
        }
    }

    pub fn bounding_box(&self) -> (Point, Point) {
        match self.shape {
            Shape::Disk { center: c, radius: r } => ([c[0] - r, c[1] - r], [c[0] + r, c[1] + r]),
            Shape::Rectangle { lo, hi } => (lo, hi),
        }
    }

    pub fn contains_strict(&self, x: Point) -> bool {
        match self.shape {
            Shape::Disk { center, radius } => norm(sub(x, center)) < radius,
            Shape::Rectangle { lo, hi } => x[0] > lo[0] && x[0] < hi[0] && x[1] > lo[1] && x[1] < hi[1],
        }
    }

    fn contains_closed(&self, x: Point, tol: f64) -> bool {
        match self.shape {
            Shape::Disk { center, radius } => norm(sub(x, center)) <= radius + tol,
            Shape::Rectangle { lo, hi } => {
                x[0] >= lo[0] - tol && x[0] <= hi[0] + tol && x[1] >= lo[1] - tol && x[1] <= hi[1] + tol
            }
        }
    }

    /// Nearest point of the closed domain.
    pub fn project(&self, x: Point) -> Point {
        match self.shape {
            Shape::Disk { center, radius } => {
                let d = sub(x, center);
                let r = norm(d);
                if r <= radius {
                    x
                } else {
                    add_scaled(center, radius / r, d)
                }
            }
            Shape::Rectangle { lo, hi } => [x[0].clamp(lo[0], hi[0]), x[1].clamp(lo[1], hi[1])],
        }
    }

    /// Distance from `x` (in the closed domain) to `∂X` travelling along `θ`.
    /// Unchecked hot-path version of [`exit_time`]; never negative.
    #[inline]
    pub fn forward_distance(&self, x: Point, theta: Point) -> f64 {
        match self.shape {
            Shape::Disk { center, radius } => {
                let rel = sub(x, center);
                let b = dot(rel, theta);
                let disc = (b * b + radius * radius - dot(rel, rel)).max(0.0);
                (disc.sqrt() - b).max(0.0)
            }
            Shape::Rectangle { lo, hi } => {
                let mut t = f64::INFINITY;
                for k in 0..2 {
                    if theta[k] > 0.0 {
                        t = t.min((hi[k] - x[k]) / theta[k]);
                    } else if theta[k] < 0.0 {
                        t = t.min((lo[k] - x[k]) / theta[k]);
                    }
                }
                t.max(0.0)
            }
        }
    }

    /// `τ₊` or `τ₋` for an interior point; `τ₊(x,θ) = τ₋(x,−θ)` by construction.
    #[inline]
    pub fn tau(&self, x: Point, theta: Point, side: Side) -> f64 {
        match side {
            Side::Plus => self.forward_distance(x, theta),
            Side::Minus => self.forward_distance(x, [-theta[0], -theta[1]]),
        }
    }

    /// Outward unit normal at a boundary point (nearest face for rectangles).
    pub fn normal_at(&self, b: Point) -> Point {
        match self.shape {
            Shape::Disk { center, radius } => {
                let d = sub(b, center);
                [d[0] / radius, d[1] / radius]
            }
            Shape::Rectangle { lo, hi } => {
                let dists = [b[0] - lo[0], hi[0] - b[0], b[1] - lo[1], hi[1] - b[1]];
                let normals = [[-1.0, 0.0], [1.0, 0.0], [0.0, -1.0], [0.0, 1.0]];
                let mut best = 0;
                for k in 1..4 {
                    if dists[k].abs() < dists[best].abs() {
                        best = k;
                    }
                }
                normals[best]
            }
        }
    }

    fn boundary_distance(&self, b: Point) -> f64 {
        match self.shape {
            Shape::Disk { center, radius } => (norm(sub(b, center)) - radius).abs(),
            Shape::Rectangle { lo, hi } => {
                let outside = norm(sub(b, self.project(b)));
                if outside > 0.0 {
                    outside
                } else {
                    (b[0] - lo[0]).min(hi[0] - b[0]).min(b[1] - lo[1]).min(hi[1] - b[1])
                }
            }
        }
    }
}

fn check_unit(theta: Point) -> Result<()> {
    if (norm(theta) - 1.0).abs() > 1e-12 {
        return Err(Error::arg(format!("direction {theta:?} is not a unit vector")));
    }
    Ok(())
}

/// Exit time `τ±(x, θ)` for `x` in the closed domain (up to `TOL_BOUNDARY`).
pub fn exit_time(domain: &Domain, x: Point, theta: Point, side: Side) -> Result<f64> {
    check_unit(theta)?;
    if !domain.contains_closed(x, TOL_BOUNDARY) {
        return Err(Error::Domain(format!("point {x:?} lies outside the domain")));
    }
    Ok(domain.tau(x, theta, side))
}

pub fn classify_boundary(domain: &Domain, b: Point, theta: Point) -> Result<BoundaryPoint> {
    check_unit(theta)?;
    if domain.boundary_distance(b) > TOL_BOUNDARY {
        return Err(Error::arg(format!("point {b:?} is not on the boundary")));
    }
    let normal = domain.normal_at(b);
    let c = dot(theta, normal);
    let class = if c < -TOL_TANGENT {
        BoundaryClass::Inflow
    } else if c > TOL_TANGENT {
        BoundaryClass::Outflow
    } else {
        BoundaryClass::Tangential
    };
    Ok(BoundaryPoint { position: b, normal, class })
}

/// Family of parallel lines `y·normal = offset + m·spacing`, `m ∈ ℤ`.
/// Used to keep chord sub-intervals from straddling sign changes of
/// oscillatory integrands.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignPlanes {
    pub normal: Point,
    pub spacing: f64,
    pub offset: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChordSample {
    /// Distance travelled backwards from `x`.
    pub t: f64,
    pub point: Point,
    pub weight: f64,
    /// Index of the breakpoint-free sub-interval the sample belongs to;
    /// samples on a cut appear once per adjacent sub-interval.
    pub piece: usize,
}

/// Composite trapezoid rule on the backward chord `x − tθ`, `t ∈ [0, τ₋]`.
pub fn chord_quadrature(
    domain: &Domain,
    x: Point,
    theta: Point,
    max_step: f64,
    breakpoints: Option<&SignPlanes>,
) -> Result<Vec<ChordSample>> {
    if !(max_step > 0.0) {
        return Err(Error::arg("max_step must be positive"));
    }
    let tau = exit_time(domain, x, theta, Side::Minus)?;
    let mut cuts = vec![0.0, tau];
    if let Some(planes) = breakpoints {
        if !(planes.spacing > 0.0) {
            return Err(Error::arg("breakpoint spacing must be positive"));
        }
        // (x − tθ)·n = offset + m·spacing
        let rate = -dot(theta, planes.normal);
        if rate.abs() > 1e-14 {
            let s0 = (dot(x, planes.normal) - planes.offset) / planes.spacing;
            let s1 = (dot(add_scaled(x, -tau, theta), planes.normal) - planes.offset) / planes.spacing;
            let (a, b) = if s0 < s1 { (s0, s1) } else { (s1, s0) };
            let mut m = a.ceil();
            while m <= b {
                let t = (planes.offset + m * planes.spacing - dot(x, planes.normal)) / (rate);
                if t > 0.0 && t < tau {
                    cuts.push(t);
                }
                m += 1.0;
            }
        }
        cuts.sort_by(|a, b| a.total_cmp(b));
        cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
    }
    let mut out = Vec::new();
    for (piece, w) in cuts.windows(2).enumerate() {
        let (t0, t1) = (w[0], w[1]);
        let len = t1 - t0;
        if len <= 0.0 {
            continue;
        }
        let n = (len / max_step).ceil().max(1.0) as usize;
        let dt = len / n as f64;
        for i in 0..=n {
            let t = t0 + i as f64 * dt;
            let wgt = if i == 0 || i == n { 0.5 * dt } else { dt };
            out.push(ChordSample { t, point: add_scaled(x, -t, theta), weight: wgt, piece });
        }
    }
    Ok(out)
}

/// Uniform direction grid on S¹; closed under reflection θ → −θ.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionGrid {
    angles: Vec<f64>,
    dirs: Vec<Point>,
    weight: f64,
}

impl DirectionGrid {
    pub fn new(n: usize) -> Result<Self> {
        if n < 4 || !n.is_multiple_of(2) {
            return Err(Error::arg(format!("direction count must be even and >= 4, got {n}")));
        }
        let angles: Vec<f64> = (0..n).map(|j| 2.0 * PI * j as f64 / n as f64).collect();
        let dirs = angles.iter().map(|&a| unit(a)).collect();
        Ok(Self { angles, dirs, weight: 2.0 * PI / n as f64 })
    }

    pub fn len(&self) -> usize {
        self.dirs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dirs.is_empty()
    }

    pub fn angle(&self, j: usize) -> f64 {
        self.angles[j]
    }

    pub fn dir(&self, j: usize) -> Point {
        self.dirs[j]
    }

    pub fn dirs(&self) -> &[Point] {
        &self.dirs
    }

    /// Quadrature weight (identical for every direction).
    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn spacing(&self) -> f64 {
        self.weight
    }

    /// Index of `−θ_j`.
    pub fn reflect(&self, j: usize) -> usize {
        (j + self.len() / 2) % self.len()
    }

    /// Periodic linear interpolation weights `(j0, j1, frac)` for an arbitrary angle.
    pub fn bracket(&self, angle: f64) -> (usize, usize, f64) {
        let n = self.len();
        let s = angle.rem_euclid(2.0 * PI) / self.weight;
        let j0 = (s.floor() as usize) % n;
        (j0, (j0 + 1) % n, s - s.floor())
    }
}

/// Cartesian lattice over the bounding box with `n` cells per axis.
///
/// All `(n+1)²` lattice nodes carry values so that bilinear interpolation
/// works up to the boundary; nodes outside the open domain are ghosts whose
/// values are computed at their projection onto `∂X`. Only nodes strictly
/// inside carry volume weight.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGrid {
    lo: Point,
    spacing: f64,
    n: usize,
    positions: Vec<Point>,
    eval_positions: Vec<Point>,
    active: Vec<bool>,
    weights: Vec<f64>,
    active_ids: Vec<usize>,
}

impl SpatialGrid {
    pub fn new(domain: &Domain, n: usize) -> Result<Self> {
        if n < 4 {
            return Err(Error::arg(format!("spatial grid needs >= 4 cells per axis, got {n}")));
        }
        let (lo, hi) = domain.bounding_box();
        let side = (hi[0] - lo[0]).max(hi[1] - lo[1]);
        let spacing = side / n as f64;
        let m = n + 1;
        let mut positions = Vec::with_capacity(m * m);
        let mut eval_positions = Vec::with_capacity(m * m);
        let mut active = Vec::with_capacity(m * m);
        let mut weights = Vec::with_capacity(m * m);
        let mut active_ids = Vec::new();
        for iy in 0..m {
            for ix in 0..m {
                let p = [lo[0] + ix as f64 * spacing, lo[1] + iy as f64 * spacing];
                let inside = domain.contains_strict(p);
                positions.push(p);
                eval_positions.push(if inside { p } else { domain.project(p) });
                if inside {
                    active_ids.push(iy * m + ix);
                }
                active.push(inside);
                weights.push(if inside { spacing * spacing } else { 0.0 });
            }
        }
        Ok(Self { lo, spacing, n, positions, eval_positions, active, weights, active_ids })
    }

    pub fn cells(&self) -> usize {
        self.n
    }

    /// Nodes per axis (`cells + 1`).
    pub fn side(&self) -> usize {
        self.n + 1
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn lo(&self) -> Point {
        self.lo
    }

    pub fn position(&self, id: usize) -> Point {
        self.positions[id]
    }

    pub fn eval_position(&self, id: usize) -> Point {
        self.eval_positions[id]
    }

    pub fn eval_positions(&self) -> &[Point] {
        &self.eval_positions
    }

    pub fn is_active(&self, id: usize) -> bool {
        self.active[id]
    }

    pub fn weight(&self, id: usize) -> f64 {
        self.weights[id]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn active_ids(&self) -> &[usize] {
        &self.active_ids
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn node(&self, ix: usize, iy: usize) -> usize {
        iy * self.side() + ix
    }

    /// Base node index and fractional offsets for bilinear interpolation,
    /// clamped to the lattice.
    #[inline]
    pub fn locate(&self, p: Point) -> (usize, f64, f64) {
        let m = self.side();
        let fx = ((p[0] - self.lo[0]) / self.spacing).clamp(0.0, self.n as f64);
        let fy = ((p[1] - self.lo[1]) / self.spacing).clamp(0.0, self.n as f64);
        let ix = (fx.floor() as usize).min(self.n - 1);
        let iy = (fy.floor() as usize).min(self.n - 1);
        (iy * m + ix, fx - ix as f64, fy - iy as f64)
    }

    #[inline]
    pub fn interp(&self, values: &[f64], p: Point) -> f64 {
        let (base, fx, fy) = self.locate(p);
        let m = self.side();
        let v00 = values[base];
        let v10 = values[base + 1];
        let v01 = values[base + m];
        let v11 = values[base + m + 1];
        (1.0 - fy) * ((1.0 - fx) * v00 + fx * v10) + fy * ((1.0 - fx) * v01 + fx * v11)
    }
}

/// Boundary samples uniform in arc length.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryGrid {
    points: Vec<Point>,
    normals: Vec<Point>,
    weight: f64,
}

impl BoundaryGrid {
    pub fn new(domain: &Domain, n: usize) -> Result<Self> {
        if n < 4 {
            return Err(Error::arg(format!("boundary grid needs >= 4 points, got {n}")));
        }
        let perimeter = domain.perimeter();
        let ds = perimeter / n as f64;
        let mut points = Vec::with_capacity(n);
        let mut normals = Vec::with_capacity(n);
        for k in 0..n {
            let s = (k as f64 + 0.5) * ds;
            let (p, nrm) = match domain.shape() {
                Shape::Disk { center, radius } => {
                    let u = unit(s / radius);
                    (add_scaled(center, radius, u), u)
                }
                Shape::Rectangle { lo, hi } => {
                    let (w, h) = (hi[0] - lo[0], hi[1] - lo[1]);
                    if s < w {
                        ([lo[0] + s, lo[1]], [0.0, -1.0])
                    } else if s < w + h {
                        ([hi[0], lo[1] + (s - w)], [1.0, 0.0])
                    } else if s < 2.0 * w + h {
                        ([hi[0] - (s - w - h), hi[1]], [0.0, 1.0])
                    } else {
                        ([lo[0], hi[1] - (s - 2.0 * w - h)], [-1.0, 0.0])
                    }
                }
            };
            points.push(p);
            normals.push(nrm);
        }
        Ok(Self { points, normals, weight: ds })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, k: usize) -> Point {
        self.points[k]
    }

    pub fn normal(&self, k: usize) -> Point {
        self.normals[k]
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }
}

/// All discretisation grids for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Grids {
    pub domain: Domain,
    pub directions: DirectionGrid,
    pub space: SpatialGrid,
    pub boundary: BoundaryGrid,
}

pub fn build_grids(domain: &Domain, n_theta: usize, n_x: usize, n_b: usize) -> Result<Grids> {
    Ok(Grids {
        domain: *domain,
        directions: DirectionGrid::new(n_theta)?,
        space: SpatialGrid::new(domain, n_x)?,
        boundary: BoundaryGrid::new(domain, n_b)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn disk_exit_times() {
        let d = Domain::unit_disk();
        for k in 0..7 {
            let th = unit(k as f64 * 0.9);
            assert_abs_diff_eq!(exit_time(&d, [0.0, 0.0], th, Side::Plus).unwrap(), 1.0, epsilon = 1e-15);
            assert_abs_diff_eq!(exit_time(&d, [0.0, 0.0], th, Side::Minus).unwrap(), 1.0, epsilon = 1e-15);
        }
        let x = [0.5, 0.0];
        assert_abs_diff_eq!(exit_time(&d, x, [1.0, 0.0], Side::Plus).unwrap(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(exit_time(&d, x, [1.0, 0.0], Side::Minus).unwrap(), 1.5, epsilon = 1e-15);
        let y = [0.0, 0.5];
        let r = 0.75f64.sqrt();
        assert_abs_diff_eq!(exit_time(&d, y, [1.0, 0.0], Side::Plus).unwrap(), r, epsilon = 1e-15);
        assert_abs_diff_eq!(exit_time(&d, y, [1.0, 0.0], Side::Minus).unwrap(), r, epsilon = 1e-15);
    }

    #[test]
    fn exit_time_errors() {
        let d = Domain::unit_disk();
        assert!(matches!(exit_time(&d, [2.0, 0.0], [1.0, 0.0], Side::Plus), Err(Error::Domain(_))));
        assert!(matches!(exit_time(&d, [0.0, 0.0], [1.0, 1.0], Side::Plus), Err(Error::Argument(_))));
    }

    #[test]
    fn rectangle_exit_times() {
        let d = Domain::new(Shape::Rectangle { lo: [0.0, 0.0], hi: [2.0, 1.0] }).unwrap();
        assert_abs_diff_eq!(d.diameter(), 5f64.sqrt());
        let x = [0.5, 0.5];
        assert_abs_diff_eq!(d.tau(x, [1.0, 0.0], Side::Plus), 1.5);
        assert_abs_diff_eq!(d.tau(x, [1.0, 0.0], Side::Minus), 0.5);
        let th = unit(PI / 4.0);
        assert_abs_diff_eq!(d.tau(x, th, Side::Plus), 0.5 * 2f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn invalid_domains() {
        assert!(Domain::new(Shape::Disk { center: [0.0, 0.0], radius: 0.0 }).is_err());
        assert!(Domain::new(Shape::Rectangle { lo: [0.0, 0.0], hi: [1.0, 0.0] }).is_err());
    }

    #[test]
    fn boundary_classes() {
        let d = Domain::unit_disk();
        let b = [1.0, 0.0];
        assert_eq!(classify_boundary(&d, b, [1.0, 0.0]).unwrap().class, BoundaryClass::Outflow);
        assert_eq!(classify_boundary(&d, b, [-1.0, 0.0]).unwrap().class, BoundaryClass::Inflow);
        assert_eq!(classify_boundary(&d, b, [0.0, 1.0]).unwrap().class, BoundaryClass::Tangential);
        assert!(classify_boundary(&d, [0.5, 0.0], [1.0, 0.0]).is_err());
    }

    #[test]
    fn chord_constant_and_cosine() {
        let d = Domain::unit_disk();
        let s = chord_quadrature(&d, [0.5, 0.0], [1.0, 0.0], 0.01, None).unwrap();
        let total: f64 = s.iter().map(|c| c.weight).sum();
        assert_abs_diff_eq!(total, 1.5, epsilon = 1e-9);

        // chord of length 1: from the centre along θ
        let s = chord_quadrature(&d, [0.0, 0.0], [1.0, 0.0], 0.001, None).unwrap();
        let q: f64 = s.iter().map(|c| c.weight * (10.0 * c.t).cos()).sum();
        assert_abs_diff_eq!(q, 10f64.sin() / 10.0, epsilon = 1e-6);
    }

    #[test]
    fn chord_sign_flips_cancel_with_breakpoints() {
        let d = Domain::unit_disk();
        let h = 0.1;
        // x = 0, θ = (1,0): backward chord covers y₁ ∈ [-1, 0]
        let planes = SignPlanes { normal: [1.0, 0.0], spacing: h, offset: 0.0 };
        let s = chord_quadrature(&d, [0.0, 0.0], [1.0, 0.0], 0.0337, Some(&planes)).unwrap();
        let mut mids = std::collections::HashMap::new();
        for c in &s {
            let e = mids.entry(c.piece).or_insert((f64::INFINITY, f64::NEG_INFINITY));
            e.0 = e.0.min(c.t);
            e.1 = e.1.max(c.t);
        }
        let q: f64 = s
            .iter()
            .map(|c| {
                let (a, b) = mids[&c.piece];
                let k = ((0.5 * (a + b)) / h).floor() as i64;
                c.weight * if k.rem_euclid(2) == 0 { 1.0 } else { -1.0 }
            })
            .sum();
        assert_abs_diff_eq!(q, 0.0, epsilon = 1e-12);
        let cuts: Vec<f64> = s.iter().map(|c| c.t).collect();
        // every plane crossing is a partition point
        for m in 1..10 {
            let t = m as f64 * h;
            assert!(cuts.iter().any(|&c| (c - t).abs() < 1e-12), "missing cut at {t}");
        }
    }

    #[test]
    fn chord_quadrature_is_second_order() {
        let d = Domain::unit_disk();
        let x = [0.1, 0.2];
        let th = unit(0.7);
        let f = |p: Point| (2.0 * p[0]).sin() * (p[1] + 1.5).ln();
        let dense = chord_quadrature(&d, x, th, 1e-5, None).unwrap();
        let exact: f64 = dense.iter().map(|c| c.weight * f(c.point)).sum();
        let err = |step: f64| {
            let s = chord_quadrature(&d, x, th, step, None).unwrap();
            (s.iter().map(|c| c.weight * f(c.point)).sum::<f64>() - exact).abs()
        };
        let r = err(0.04) / err(0.02);
        assert!((3.5..=4.5).contains(&r), "ratio {r}");
    }

    #[test]
    fn direction_grid() {
        let g = DirectionGrid::new(8).unwrap();
        assert_abs_diff_eq!(g.weight(), PI / 4.0);
        for j in 0..8 {
            assert_abs_diff_eq!(g.angle(j), 2.0 * PI * j as f64 / 8.0);
            let r = g.dir(g.reflect(j));
            assert_abs_diff_eq!(r[0], -g.dir(j)[0], epsilon = 1e-15);
            assert_abs_diff_eq!(r[1], -g.dir(j)[1], epsilon = 1e-15);
        }
        assert!(DirectionGrid::new(7).is_err());
        let w: f64 = (0..64).map(|_| DirectionGrid::new(64).unwrap().weight()).sum();
        assert_abs_diff_eq!(w, 2.0 * PI, epsilon = 1e-12);
    }

    #[test]
    fn spatial_grid_area() {
        let d = Domain::unit_disk();
        let g = SpatialGrid::new(&d, 64).unwrap();
        assert!((g.total_weight() / PI - 1.0).abs() < 0.005);
        for &id in g.active_ids() {
            assert!(d.contains_strict(g.position(id)));
        }
    }

    #[test]
    fn bilinear_reproduces_linear_fields() {
        let d = Domain::unit_disk();
        let g = SpatialGrid::new(&d, 16).unwrap();
        let vals: Vec<f64> = (0..g.len()).map(|i| 2.0 * g.position(i)[0] - g.position(i)[1] + 0.3).collect();
        for p in [[0.13, -0.41], [0.77, 0.05], [-0.99, 0.99]] {
            assert_abs_diff_eq!(g.interp(&vals, p), 2.0 * p[0] - p[1] + 0.3, epsilon = 1e-12);
        }
    }

    #[test]
    fn boundary_grid_on_boundary() {
        let d = Domain::unit_disk();
        let b = BoundaryGrid::new(&d, 32).unwrap();
        for k in 0..b.len() {
            assert_abs_diff_eq!(norm(b.point(k)), 1.0, epsilon = 1e-14);
            assert_abs_diff_eq!(dot(b.point(k), b.normal(k)), 1.0, epsilon = 1e-14);
        }
        assert_abs_diff_eq!(b.weight() * b.len() as f64, 2.0 * PI, epsilon = 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn exit_time_invariants(r in 0.0f64..0.999, a in 0.0f64..std::f64::consts::TAU, t in 0.0f64..std::f64::consts::TAU) {
                let d = Domain::unit_disk();
                let x = [r * a.cos(), r * a.sin()];
                let th = unit(t);
                let neg = [-th[0], -th[1]];
                let tp = d.tau(x, th, Side::Plus);
                let tm = d.tau(x, th, Side::Minus);
                prop_assert_eq!(tp, d.tau(x, neg, Side::Minus));
                prop_assert!(tp > 0.0 && tm > 0.0);
                prop_assert!(tp + tm <= d.diameter() + 1e-12);
                prop_assert!((norm(add_scaled(x, tp, th)) - 1.0).abs() <= 1e-10);
            }
        }
    }
}
