//! Collision-expansion solver for the stationary transport equation and the
//! operators it is assembled from.

use std::sync::Arc;

use rayon::prelude::*;

use crate::geometry::{chord_quadrature, dot, SignPlanes};

mod solution;
mod solver;
pub mod source;

pub(crate) use solution::gauss_legendre_nodes;
pub use solution::{SolveDiagnostics, Solution};
pub use solver::{Solver, SolverOptions};
pub use source::{square_wave, BoundarySource};

use crate::error::Result;
use crate::geometry::Point;

/// Closed-form field `(x, angle) ↦ w`.
pub type FieldFn = Arc<dyn Fn(Point, f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum Analytic {
    /// `Jf`, or `J̃f` when `adjoint` is set.
    Ballistic { source: BoundarySource, adjoint: bool },
    /// Arbitrary closure; `planes` marks jump discontinuities in space.
    Closure { f: FieldFn, planes: Option<SignPlanes> },
}

/// Values on the (direction, node) grid, layout `[dir][node]`, plus an
/// optional closed-form part evaluated on demand.
#[derive(Clone)]
pub struct TransportField {
    pub values: Vec<f64>,
    pub analytic: Option<Analytic>,
}

impl TransportField {
    pub fn zeros(solver: &Solver) -> Self {
        Self { values: vec![0.0; solver.n_dirs() * solver.n_nodes()], analytic: None }
    }

    /// Grid field sampled from a closure at node evaluation positions.
    pub fn from_fn(solver: &Solver, f: impl Fn(Point, f64) -> f64 + Sync) -> Self {
        let nn = solver.n_nodes();
        let mut values = vec![0.0; solver.n_dirs() * nn];
        values.par_chunks_mut(nn).enumerate().for_each(|(i, row)| {
            let a = solver.grids.directions.angle(i);
            for (n, r) in row.iter_mut().enumerate() {
                *r = f(solver.grids.space.eval_position(n), a);
            }
        });
        Self { values, analytic: None }
    }

    /// Purely closed-form field.
    pub fn analytic(solver: &Solver, analytic: Analytic) -> Self {
        Self { values: vec![0.0; solver.n_dirs() * solver.n_nodes()], analytic: Some(analytic) }
    }

    /// Closed-form part at an arbitrary point.
    pub fn analytic_at(&self, solver: &Solver, x: Point, angle: f64) -> f64 {
        match &self.analytic {
            None => 0.0,
            Some(Analytic::Ballistic { source, adjoint: false }) => solver.ballistic(source, x, angle),
            Some(Analytic::Ballistic { source, adjoint: true }) => {
                solver.ballistic(&source.reflected(), x, angle + std::f64::consts::PI)
            }
            Some(Analytic::Closure { f, .. }) => f(x, angle),
        }
    }

    pub fn at(&self, solver: &Solver, i: usize, n: usize) -> f64 {
        let g = self.values[i * solver.n_nodes() + n];
        match self.analytic {
            None => g,
            Some(_) => {
                g + self.analytic_at(solver, solver.grids.space.eval_position(n), solver.grids.directions.angle(i))
            }
        }
    }

    /// All values at grid points, closed-form parts included.
    pub fn sampled(&self, solver: &Solver) -> Vec<f64> {
        if self.analytic.is_none() {
            return self.values.clone();
        }
        let nn = solver.n_nodes();
        let mut out = vec![0.0; self.values.len()];
        out.par_chunks_mut(nn).enumerate().for_each(|(i, row)| {
            for (n, r) in row.iter_mut().enumerate() {
                *r = self.at(solver, i, n);
            }
        });
        out
    }

    pub fn sup_norm(&self, solver: &Solver) -> f64 {
        self.sampled(solver).iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `∫|w(x_n, θ)| dθ` at node `n`.
    pub fn l1_theta(&self, solver: &Solver, n: usize) -> f64 {
        let w = solver.grids.directions.weight();
        (0..solver.n_dirs()).map(|i| self.at(solver, i, n).abs() * w).sum()
    }
}

/// Volume × direction quadrature pairing `⟨a, b⟩` over active nodes.
pub fn pairing(solver: &Solver, a: &[f64], b: &[f64]) -> f64 {
    let nn = solver.n_nodes();
    let w = solver.grids.directions.weight();
    let sp = &solver.grids.space;
    (0..solver.n_dirs())
        .map(|i| sp.active_ids().iter().map(|&n| a[i * nn + n] * b[i * nn + n] * sp.weight(n)).sum::<f64>())
        .sum::<f64>()
        * w
}

/// `Jf(x,θ) = exp(−∫₀^{τ₋} σ(x − sθ) ds)·f(x − τ₋θ, θ)`.
pub fn apply_j(solver: &Solver, source: &BoundarySource) -> TransportField {
    let analytic = Analytic::Ballistic { source: source.clone(), adjoint: false };
    if source.cap().is_some() {
        return TransportField::analytic(solver, analytic);
    }
    let field = TransportField::analytic(solver, analytic);
    TransportField { values: field.sampled(solver), analytic: None }
}

/// `J̃f(x,θ) = exp(−∫₀^{τ₊} σ(x + sθ) ds)·f(x + τ₊θ, θ)` for data on Γ₊.
pub fn apply_jtilde(solver: &Solver, source: &BoundarySource) -> TransportField {
    let analytic = Analytic::Ballistic { source: source.clone(), adjoint: true };
    if source.cap().is_some() {
        return TransportField::analytic(solver, analytic);
    }
    let field = TransportField::analytic(solver, analytic);
    TransportField { values: field.sampled(solver), analytic: None }
}

/// `A₂w(x,θ) = ∫ k(x,θ,θ′) w(x,θ′) dθ′`; cap-supported ballistic parts are
/// integrated with Gauss–Legendre points across the cap.
pub fn apply_a2(solver: &Solver, field: &TransportField) -> TransportField {
    let mut values = solver.a2_grid(&field.values);
    match &field.analytic {
        None => {}
        Some(Analytic::Ballistic { source, adjoint }) if source.cap().is_some() => {
            let (c, h) = source.cap().unwrap();
            let c = if *adjoint { c + std::f64::consts::PI } else { c };
            let sub = gauss_legendre_nodes(solver.opts.m_sub, c - h, c + h);
            add_angular_quadrature(solver, field, &sub, &mut values);
        }
        Some(_) => {
            let dirs = &solver.grids.directions;
            let sub: Vec<(f64, f64)> = (0..dirs.len()).map(|j| (dirs.angle(j), dirs.weight())).collect();
            add_angular_quadrature(solver, field, &sub, &mut values);
        }
    }
    TransportField { values, analytic: None }
}

fn add_angular_quadrature(solver: &Solver, field: &TransportField, sub: &[(f64, f64)], values: &mut [f64]) {
    let nn = solver.n_nodes();
    let nd = solver.n_dirs();
    let closed: Vec<Vec<f64>> = (0..nn)
        .into_par_iter()
        .map(|n| {
            let x = solver.grids.space.eval_position(n);
            sub.iter().map(|&(a, w)| w * field.analytic_at(solver, x, a)).collect()
        })
        .collect();
    values.par_chunks_mut(nn).enumerate().for_each(|(i, row)| {
        let th = solver.grids.directions.dir(i);
        let phases: Vec<f64> = sub.iter().map(|&(a, _)| solver.medium.phase(dot(th, crate::geometry::unit(a)))).collect();
        for (n, r) in row.iter_mut().enumerate() {
            let s: f64 = phases.iter().zip(&closed[n]).map(|(p, c)| p * c).sum();
            *r += solver.kappa[n] * s;
        }
    });
    debug_assert_eq!(values.len(), nd * nn);
}

/// `T₁⁻¹w(x,θ) = ∫₀^{τ₋} exp(−∫₀ᵗ σ(x − sθ) ds) w(x − tθ, θ) dt`.
///
/// Gridded values are swept with bilinear interpolation; closed-form parts
/// are integrated along each chord with exact attenuation, splitting the
/// chord at `planes` and using steps of at most a quarter plane spacing.
pub fn apply_t1inv(solver: &Solver, field: &TransportField) -> Result<TransportField> {
    let mut values = solver.t1inv_grid(&field.values);
    if let Some(analytic) = &field.analytic {
        let planes = match analytic {
            Analytic::Closure { planes, .. } => *planes,
            Analytic::Ballistic { .. } => None,
        };
        let base = solver.lattice.step;
        let step = planes.map_or(base, |p| base.min(p.spacing / 4.0));
        let nn = solver.n_nodes();
        let rows: Vec<Result<Vec<f64>>> = (0..solver.n_dirs())
            .into_par_iter()
            .map(|i| {
                let th = solver.grids.directions.dir(i);
                let a = solver.grids.directions.angle(i);
                let back = [-th[0], -th[1]];
                (0..nn)
                    .map(|n| {
                        let x = solver.grids.space.eval_position(n);
                        let samples = chord_quadrature(&solver.grids.domain, x, th, step, planes.as_ref())?;
                        let nudge = 1e-9 * step;
                        Ok((0..samples.len())
                            .map(|k| {
                                let c = &samples[k];
                                // evaluate piece endpoints on their own side of a jump
                                let first = k == 0 || samples[k - 1].piece != c.piece;
                                let last = k + 1 == samples.len() || samples[k + 1].piece != c.piece;
                                let t = match (first, last) {
                                    (true, false) => c.t + nudge,
                                    (false, true) => c.t - nudge,
                                    _ => c.t,
                                };
                                let att = (-solver.medium.line_integral(x, back, c.t)).exp();
                                c.weight * att * field.analytic_at(solver, crate::geometry::add_scaled(x, -t, th), a)
                            })
                            .sum())
                    })
                    .collect()
            })
            .collect();
        for (i, row) in rows.into_iter().enumerate() {
            for (n, v) in row?.into_iter().enumerate() {
                values[i * nn + n] += v;
            }
        }
    }
    Ok(TransportField { values, analytic: None })
}

/// `Aw = −σw + A₂w`.
pub fn apply_a(solver: &Solver, field: &TransportField) -> TransportField {
    let mut out = apply_a2(solver, field);
    let sampled = field.sampled(solver);
    let nn = solver.n_nodes();
    for (idx, v) in out.values.iter_mut().enumerate() {
        *v -= solver.sigma[idx % nn] * sampled[idx];
    }
    out
}

/// Outgoing trace `𝒜f = u|Γ₊` on the boundary grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AlbedoTrace {
    /// `[dir][boundary point]`; zero where `n·θ ≤ 0`.
    pub values: Vec<f64>,
    pub n_points: usize,
}

impl AlbedoTrace {
    pub fn at(&self, i: usize, k: usize) -> f64 {
        self.values[i * self.n_points + k]
    }
}

/// Albedo `𝒜f` on the boundary grid from a forward solution.
pub fn albedo(solution: &Solution) -> AlbedoTrace {
    let solver = solution.solver();
    let traces = solution.boundary_traces();
    let nb = solver.grids.boundary.len();
    let values = traces
        .iter()
        .enumerate()
        .map(|(idx, &v)| {
            let (i, k) = (idx / nb, idx % nb);
            if dot(solver.grids.boundary.normal(k), solver.grids.directions.dir(i)) > 0.0 {
                v
            } else {
                0.0
            }
        })
        .collect();
    AlbedoTrace { values, n_points: nb }
}

#[cfg(test)]
mod tests;
