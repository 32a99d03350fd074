use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use crate::geometry::{angle_diff, dot, sub, unit, Point};

/// Angular profile `θ ↦ f(θ)` given by the direction's polar angle.
pub type AngularFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Boundary data `f(b, θ)`; used as inflow data on Γ₋ for forward solves
/// and as outflow data on Γ₊ for adjoint solves.
#[derive(Clone)]
pub enum BoundarySource {
    Constant(f64),
    /// `mean + amplitude·cos(θ − phase)`.
    Cosine { mean: f64, amplitude: f64, phase: f64 },
    Angular(AngularFn),
    /// `amplitude` on the geodesic cap `|θ − θ₀| < h`, zero elsewhere.
    Concentrated { theta0: f64, h: f64, amplitude: f64 },
    /// `amplitude·s(ξ/h + ½)` on the cap `|θ − θ₁| < h`, where
    /// `ξ = (b − origin)·θ^⊥` is the frame coordinate across the ray and
    /// `θ^⊥ = (θ₂, −θ₁)`. `mirror` negates `ξ` (the reflected source).
    Oscillatory { theta1: f64, h: f64, amplitude: f64, origin: Point, mirror: bool },
}

impl fmt::Debug for BoundarySource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoundarySource::Constant(c) => write!(f, "Constant({c})"),
            BoundarySource::Cosine { mean, amplitude, phase } => {
                write!(f, "Cosine {{ mean: {mean}, amplitude: {amplitude}, phase: {phase} }}")
            }
            BoundarySource::Angular(_) => write!(f, "Angular(<fn>)"),
            BoundarySource::Concentrated { theta0, h, amplitude } => {
                write!(f, "Concentrated {{ theta0: {theta0}, h: {h}, amplitude: {amplitude} }}")
            }
            BoundarySource::Oscillatory { theta1, h, amplitude, origin, mirror } => write!(
                f,
                "Oscillatory {{ theta1: {theta1}, h: {h}, amplitude: {amplitude}, origin: {origin:?}, mirror: {mirror} }}"
            ),
        }
    }
}

/// `+1` if `⌊t⌋` is even, `−1` otherwise.
#[inline]
pub fn square_wave(t: f64) -> f64 {
    if (t.floor() as i64).rem_euclid(2) == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Frame coordinate `(b − origin)·θ^⊥` with `θ^⊥ = (θ₂, −θ₁)`.
#[inline]
pub fn frame_coordinate(b: Point, origin: Point, theta: Point) -> f64 {
    dot(sub(b, origin), [theta[1], -theta[0]])
}

impl BoundarySource {
    /// Value at boundary point `b` for direction angle `angle`.
    #[inline]
    pub fn eval(&self, b: Point, angle: f64) -> f64 {
        match self {
            BoundarySource::Constant(c) => *c,
            BoundarySource::Cosine { mean, amplitude, phase } => mean + amplitude * (angle - phase).cos(),
            BoundarySource::Angular(f) => f(angle),
            BoundarySource::Concentrated { theta0, h, amplitude } => {
                if angle_diff(angle, *theta0).abs() < *h {
                    *amplitude
                } else {
                    0.0
                }
            }
            BoundarySource::Oscillatory { theta1, h, amplitude, origin, mirror } => {
                if angle_diff(angle, *theta1).abs() < *h {
                    let xi = frame_coordinate(b, *origin, unit(angle));
                    let xi = if *mirror { -xi } else { xi };
                    amplitude * square_wave(xi / h + 0.5)
                } else {
                    0.0
                }
            }
        }
    }

    /// Data seen by the reflected problem: `f̃(b, θ) = f(b, −θ)`.
    pub fn reflected(&self) -> BoundarySource {
        match self {
            BoundarySource::Constant(c) => BoundarySource::Constant(*c),
            BoundarySource::Cosine { mean, amplitude, phase } => {
                BoundarySource::Cosine { mean: *mean, amplitude: *amplitude, phase: phase + PI }
            }
            BoundarySource::Angular(f) => {
                let f = f.clone();
                BoundarySource::Angular(Arc::new(move |a| f(a + PI)))
            }
            BoundarySource::Concentrated { theta0, h, amplitude } => {
                BoundarySource::Concentrated { theta0: theta0 + PI, h: *h, amplitude: *amplitude }
            }
            BoundarySource::Oscillatory { theta1, h, amplitude, origin, mirror } => BoundarySource::Oscillatory {
                theta1: theta1 + PI,
                h: *h,
                amplitude: *amplitude,
                origin: *origin,
                mirror: !mirror,
            },
        }
    }

    /// Angular support `(centre, half-width)` for cap-supported sources.
    pub fn cap(&self) -> Option<(f64, f64)> {
        match self {
            BoundarySource::Concentrated { theta0, h, .. } => Some((*theta0, *h)),
            BoundarySource::Oscillatory { theta1, h, .. } => Some((*theta1, *h)),
            _ => None,
        }
    }

    pub fn is_oscillatory(&self) -> bool {
        matches!(self, BoundarySource::Oscillatory { .. })
    }

    /// Largest `|f|`.
    pub fn sup_norm(&self) -> f64 {
        match self {
            BoundarySource::Constant(c) => c.abs(),
            BoundarySource::Cosine { mean, amplitude, .. } => mean.abs() + amplitude.abs(),
            BoundarySource::Angular(f) => (0..4096).map(|i| f(i as f64 * 2.0 * PI / 4096.0).abs()).fold(0.0, f64::max),
            BoundarySource::Concentrated { amplitude, .. } | BoundarySource::Oscillatory { amplitude, .. } => {
                amplitude.abs()
            }
        }
    }

    /// `‖f(b, ·)‖_{L¹(S¹)}` for fixed `b`.
    pub fn l1_norm(&self) -> f64 {
        match self {
            BoundarySource::Constant(c) => 2.0 * PI * c.abs(),
            BoundarySource::Concentrated { h, amplitude, .. } | BoundarySource::Oscillatory { h, amplitude, .. } => {
                2.0 * h * amplitude.abs()
            }
            _ => {
                let n = 4096;
                let w = 2.0 * PI / n as f64;
                (0..n).map(|i| self.eval([0.0, 0.0], i as f64 * w).abs() * w).sum()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_wave_parity() {
        assert_eq!(square_wave(0.5), 1.0);
        assert_eq!(square_wave(1.5), -1.0);
        assert_eq!(square_wave(-0.5), -1.0);
        assert_eq!(square_wave(2.0), 1.0);
    }

    #[test]
    fn concentrated_support_and_reflection() {
        let f = BoundarySource::Concentrated { theta0: 0.3, h: 0.1, amplitude: 2.0 };
        assert_eq!(f.eval([1.0, 0.0], 0.35), 2.0);
        assert_eq!(f.eval([1.0, 0.0], 0.45), 0.0);
        assert_eq!(f.eval([1.0, 0.0], 0.3 + 2.0 * PI), 2.0);
        let r = f.reflected();
        assert_eq!(r.eval([1.0, 0.0], 0.35 + PI), 2.0);
        assert_eq!(r.eval([1.0, 0.0], 0.35), 0.0);
        assert!((f.l1_norm() - 0.4).abs() < 1e-15);
    }

    #[test]
    fn oscillatory_frame_and_mirror() {
        let h = 0.05;
        let g = BoundarySource::Oscillatory { theta1: PI / 2.0, h, amplitude: 20.0, origin: [0.0, 0.0], mirror: false };
        // θ = (0,1): θ^⊥ = (1,0), frame coordinate is x₁
        assert_eq!(g.eval([0.01, -1.0], PI / 2.0), 20.0);
        assert_eq!(g.eval([0.03, -1.0], PI / 2.0), -20.0);
        assert_eq!(g.eval([-0.03, -1.0], PI / 2.0), -20.0);
        assert_eq!(g.eval([0.01, -1.0], 0.0), 0.0);
        let r = g.reflected();
        for b in [[0.01, 1.0], [0.03, 1.0], [-0.07, 1.0]] {
            assert_eq!(r.eval(b, 1.5 * PI + 0.01), g.eval(b, 0.5 * PI + 0.01));
        }
    }

    #[test]
    fn cosine_reflection() {
        let f = BoundarySource::Cosine { mean: 1.0, amplitude: 0.5, phase: 0.2 };
        let r = f.reflected();
        for a in [0.0, 1.0, 2.5] {
            assert!((r.eval([0.0, 1.0], a) - f.eval([0.0, 1.0], a + PI)).abs() < 1e-14);
        }
    }
}
