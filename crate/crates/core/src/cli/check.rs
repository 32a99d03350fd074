//! Invariant smoke checks shared by the `check` subcommand and the acceptance suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::functional::solution_pairing;
use crate::geometry::Point;
use crate::transport::{apply_a, pairing, BoundarySource, Solver, TransportField};

/// Random trigonometric field `Σ c·cos(a·x + m·θ + φ)` with a handful of
/// low-frequency modes.
pub fn random_smooth_field(solver: &Solver, rng: &mut impl Rng) -> TransportField {
    let modes: Vec<(f64, Point, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.random_range(-1.0..1.0),
                [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)],
                f64::from(rng.random_range(-2i32..=2)),
                rng.random_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    TransportField::from_fn(solver, |x, theta| {
        modes.iter().map(|&(c, a, m, p)| c * (a[0] * x[0] + a[1] * x[1] + m * theta + p).cos()).sum()
    })
}

/// `|⟨Aa,b⟩ − ⟨a,Ab⟩| / (‖a‖‖b‖)` for `pairs` seeded random field pairs.
pub fn duality_defects(solver: &Solver, seed: u64, pairs: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..pairs)
        .map(|_| {
            let a = random_smooth_field(solver, &mut rng);
            let b = random_smooth_field(solver, &mut rng);
            let lhs = pairing(solver, &apply_a(solver, &a).values, &b.values);
            let rhs = pairing(solver, &a.values, &apply_a(solver, &b).values);
            let na = pairing(solver, &a.values, &a.values).sqrt();
            let nb = pairing(solver, &b.values, &b.values).sqrt();
            (lhs - rhs).abs() / (na * nb)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GreenResidual {
    /// Boundary pairing of `u` (forward, data `f`) with `v` (adjoint, data `g`).
    pub pairing: f64,
    pub u_sup: f64,
    pub v_sup: f64,
    /// `|pairing| / (‖u‖_∞‖v‖_∞)` with the norms taken over boundary traces.
    pub relative: f64,
}

pub fn green_residual(solver: &Solver, f: &BoundarySource, g: &BoundarySource) -> Result<GreenResidual> {
    let u = solver.solve_forward(f)?;
    let v = solver.solve_adjoint(g)?;
    let sup = |t: Vec<f64>| t.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let u_sup = sup(u.boundary_traces());
    let v_sup = sup(v.boundary_traces());
    let p = solution_pairing(&u, &v)?;
    Ok(GreenResidual { pairing: p, u_sup, v_sup, relative: p.abs() / (u_sup * v_sup) })
}
