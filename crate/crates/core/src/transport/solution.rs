use std::f64::consts::PI;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{add_scaled, unit, Point};

use super::solver::{Lattice, Solver};
use super::source::BoundarySource;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveDiagnostics {
    pub terms_used: usize,
    pub contraction_observed: f64,
    pub tail_bound: f64,
    /// Set when `j_max` was reached with `tail_bound > 10·tol_series`.
    pub tail_warning: bool,
    /// `‖Kʲ(Jf)‖_∞` for `j = 1, …, terms_used`.
    pub term_norms: Vec<f64>,
}

const GL16: [(f64, f64); 8] = [
    (0.095_012_509_837_637_44, 0.189_450_610_455_068_5),
    (0.281_603_550_779_258_9, 0.182_603_415_044_923_6),
    (0.458_016_777_657_227_4, 0.169_156_519_395_002_5),
    (0.617_876_244_402_643_7, 0.149_595_988_816_576_7),
    (0.755_404_408_355_003, 0.124_628_971_255_533_9),
    (0.865_631_202_387_831_7, 0.095_158_511_682_492_8),
    (0.944_575_023_073_232_6, 0.062_253_523_938_647_9),
    (0.989_400_934_991_649_9, 0.027_152_459_411_754_1),
];

/// Gauss–Legendre nodes and weights on `[a, b]`; 16 points use tabulated
/// values, other counts use Newton iteration on `P_m`.
pub(crate) fn gauss_legendre_nodes(m: usize, a: f64, b: f64) -> Vec<(f64, f64)> {
    let mut unit_rule: Vec<(f64, f64)> = if m == 16 {
        GL16.iter().flat_map(|&(x, w)| [(-x, w), (x, w)]).collect()
    } else {
        (0..m)
            .map(|i| {
                let mut x = (PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
                let mut dp = 1.0;
                for _ in 0..100 {
                    let (mut p0, mut p1) = (1.0, x);
                    for k in 2..=m {
                        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                        p0 = p1;
                        p1 = p2;
                    }
                    let pm = if m == 1 { x } else { p1 };
                    let pm1 = if m == 1 { 1.0 } else { p0 };
                    dp = m as f64 * (x * pm - pm1) / (x * x - 1.0);
                    let dx = pm / dp;
                    x -= dx;
                    if dx.abs() < 1e-16 {
                        break;
                    }
                }
                (x, 2.0 / ((1.0 - x * x) * dp * dp))
            })
            .collect()
    };
    unit_rule.sort_by(|p, q| p.0.total_cmp(&q.0));
    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
    unit_rule.into_iter().map(|(x, w)| (mid + half * x, half * w)).collect()
}

/// Quadratic Lagrange basis on `c − h, c, c + h` at angle `a`.
#[inline]
fn lagrange3(a: f64, c: f64, h: f64) -> [f64; 3] {
    let s = (a - c) / h;
    [0.5 * s * (s - 1.0), 1.0 - s * s, 0.5 * s * (s + 1.0)]
}

/// First scatter `A₂(Jf)` of a cap-supported source:
/// `S₁(y,θ) = κ(y)·Σ_l p(θ·θ′_l)·G_l(y)` with `G_l` sampled on `lattice`.
pub(crate) struct CapScatter {
    pub centre: f64,
    pub h: f64,
    pub sub: Vec<(f64, f64)>,
    pub lattice: Option<Lattice>,
    pub g: [Vec<f64>; 3],
    pub kappa: Vec<f64>,
}

/// A forward solution `u = Jf + Σ_{j≥1} Kʲ(Jf)`, optionally viewed through
/// the reflection `θ → −θ` (adjoint solutions).
pub struct Solution<'s> {
    pub(crate) solver: &'s Solver<'s>,
    pub(crate) source: BoundarySource,
    pub(crate) reflected: bool,
    /// Smooth part on the grid, `[dir][node]`: `Jf + u_s` for smooth
    /// sources, `u_s` for cap sources.
    pub(crate) ug: Vec<f64>,
    pub(crate) us: Vec<f64>,
    /// `A₂u` on the grid.
    pub(crate) s_total: Vec<f64>,
    pub(crate) cap: Option<CapScatter>,
    pub(crate) diagnostics: SolveDiagnostics,
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

impl<'s> Solver<'s> {
    /// Ballistic part `Jf(x,θ)` for a source in forward coordinates.
    #[inline]
    pub(crate) fn ballistic(&self, source: &BoundarySource, x: Point, angle: f64) -> f64 {
        let th = unit(angle);
        let back = [-th[0], -th[1]];
        let t = self.grids.domain.forward_distance(x, back);
        let f = source.eval(add_scaled(x, -t, th), angle);
        if f == 0.0 {
            return 0.0;
        }
        f * (-self.medium.line_integral(x, back, t)).exp()
    }

    fn gridded_ballistic(&self, source: &BoundarySource) -> Vec<f64> {
        let (nd, nn) = (self.n_dirs(), self.n_nodes());
        let mut out = vec![0.0; nd * nn];
        out.par_chunks_mut(nn).enumerate().for_each(|(i, row)| {
            let a = self.grids.directions.angle(i);
            let th = self.grids.directions.dir(i);
            for (n, r) in row.iter_mut().enumerate() {
                let x = self.grids.space.eval_position(n);
                let b = add_scaled(x, -self.tau[i * nn + n], th);
                *r = source.eval(b, a) * self.exp_neg_od[i * nn + n];
            }
        });
        out
    }

    fn cap_scatter(&self, source: &BoundarySource, centre: f64, h: f64) -> Result<CapScatter> {
        let sub = gauss_legendre_nodes(self.opts.m_sub, centre - h, centre + h);
        let lattice = if source.is_oscillatory() {
            let base = self.grids.space.spacing();
            let factor = (base / (h / 4.0)).ceil().max(1.0) as usize;
            let fine = base / factor as f64;
            let step = self.opts.max_step.map_or(fine, |s| s.min(fine));
            Some(Lattice::new(&self.grids.domain, self.grids.space.cells(), factor, step, &self.grids.directions)?)
        } else {
            None
        };
        let grid = lattice.as_ref().map_or(&self.grids.space, |l| &l.grid);
        let pos = grid.eval_positions();
        let weights: Vec<[f64; 3]> = sub.iter().map(|&(a, w)| lagrange3(a, centre, h).map(|l| l * w)).collect();
        let per_node: Vec<[f64; 3]> = pos
            .par_iter()
            .map(|&y| {
                let mut g = [0.0; 3];
                for (&(a, _), lw) in sub.iter().zip(&weights) {
                    let j = self.ballistic(source, y, a);
                    if j != 0.0 {
                        for l in 0..3 {
                            g[l] += lw[l] * j;
                        }
                    }
                }
                g
            })
            .collect();
        let g = [0, 1, 2].map(|l| per_node.iter().map(|v| v[l]).collect::<Vec<f64>>());
        let kappa = pos.iter().map(|&y| self.medium.kappa(y)).collect();
        Ok(CapScatter { centre, h, sub, lattice, g, kappa })
    }

    /// `S₁` for direction `i` on the cap lattice.
    fn cap_s1_on_lattice(&self, cap: &CapScatter, i: usize) -> Vec<f64> {
        let a = self.grids.directions.angle(i);
        let p = [cap.centre - cap.h, cap.centre, cap.centre + cap.h].map(|al| self.medium.phase((a - al).cos()));
        (0..cap.kappa.len())
            .map(|n| cap.kappa[n] * (p[0] * cap.g[0][n] + p[1] * cap.g[1][n] + p[2] * cap.g[2][n]))
            .collect()
    }

    /// Collision expansion for inflow data `f` on Γ₋.
    pub fn solve_forward(&'s self, source: &BoundarySource) -> Result<Solution<'s>> {
        self.solve_impl(source.clone(), false)
    }

    /// Adjoint solution with outflow data `g` on Γ₊, obtained by solving the
    /// forward problem for `g̃(b,θ) = g(b,−θ)` and reflecting back.
    pub fn solve_adjoint(&'s self, source: &BoundarySource) -> Result<Solution<'s>> {
        self.solve_impl(source.reflected(), true)
    }

    fn solve_impl(&'s self, source: BoundarySource, reflected: bool) -> Result<Solution<'s>> {
        let (nd, nn) = (self.n_dirs(), self.n_nodes());
        let side = self.grids.space.side();
        let cap = match source.cap() {
            Some((c, h)) => Some(self.cap_scatter(&source, c, h)?),
            None => None,
        };
        let jf = if cap.is_none() { Some(self.gridded_ballistic(&source)) } else { None };
        let jf_sup = jf.as_deref().map_or(source.sup_norm(), sup);

        // gridded first scatter and its sweep
        let (s1, w1) = match &cap {
            None => {
                let s1 = self.a2_grid(jf.as_deref().unwrap());
                let w1 = self.t1inv_grid(&s1);
                (s1, w1)
            }
            Some(cap) => {
                let lattice = cap.lattice.as_ref().unwrap_or(&self.lattice);
                let mut s1 = vec![0.0; nd * nn];
                let mut w1 = vec![0.0; nd * nn];
                s1.par_chunks_mut(nn).zip(w1.par_chunks_mut(nn)).enumerate().for_each(|(i, (s_row, w_row))| {
                    let s = self.cap_s1_on_lattice(cap, i);
                    for (n, r) in s_row.iter_mut().enumerate() {
                        *r = s[lattice.lift(side, n)];
                    }
                    let e = match &cap.lattice {
                        Some(l) => self.exp_od_on(i, l),
                        None => self.exp_od[i * nn..(i + 1) * nn].to_vec(),
                    };
                    let p: Vec<f64> = s.iter().zip(&e).map(|(a, b)| a * b).collect();
                    self.sweep_premultiplied(i, lattice, &p, w_row);
                });
                (s1, w1)
            }
        };

        let mut us = vec![0.0; nd * nn];
        let mut norms = Vec::new();
        let mut contraction: f64 = 0.0;
        let mut tail_warning = false;
        let scattering = self.medium.has_scattering();
        if scattering {
            let mut w = w1;
            let mut prev = if cap.is_none() { jf_sup } else { f64::NAN };
            loop {
                let nw = sup(&w);
                if prev.is_finite() && prev > 0.0 && nw > 0.0 {
                    contraction = contraction.max(nw / prev);
                }
                for (u, v) in us.iter_mut().zip(&w) {
                    *u += v;
                }
                norms.push(nw);
                let total = jf_sup.max(sup(&us));
                if nw <= self.opts.tol_series * total || nw == 0.0 {
                    break;
                }
                if norms.len() >= self.opts.j_max {
                    break;
                }
                if norms.len() >= 3 && contraction >= 1.0 {
                    return Err(Error::Divergence { contraction });
                }
                prev = nw;
                w = self.t1inv_grid(&self.a2_grid(&w));
            }
            if contraction >= 1.0 {
                return Err(Error::Divergence { contraction });
            }
        }
        let terms = norms.len();
        let tail_bound = if terms == 0 || contraction == 0.0 {
            0.0
        } else {
            contraction.powi(terms as i32) / (1.0 - contraction) * norms[0]
        };
        if terms >= self.opts.j_max && tail_bound > 10.0 * self.opts.tol_series {
            tail_warning = true;
            log::warn!("collision expansion stopped at j_max = {} with tail bound {tail_bound:.3e}", self.opts.j_max);
        }
        let ug = match &jf {
            Some(j) => j.iter().zip(&us).map(|(a, b)| a + b).collect(),
            None => us.clone(),
        };
        let a2us = self.a2_grid(&us);
        let s_total = s1.iter().zip(&a2us).map(|(a, b)| a + b).collect();
        Ok(Solution {
            solver: self,
            source,
            reflected,
            ug,
            us,
            s_total,
            cap,
            diagnostics: SolveDiagnostics {
                terms_used: terms,
                contraction_observed: contraction,
                tail_bound,
                tail_warning,
                term_norms: norms,
            },
        })
    }
}

impl<'s> Solution<'s> {
    pub fn diagnostics(&self) -> &SolveDiagnostics {
        &self.diagnostics
    }

    pub fn solver(&self) -> &'s Solver<'s> {
        self.solver
    }

    pub fn is_adjoint(&self) -> bool {
        self.reflected
    }

    /// Source of the underlying forward problem (reflected for adjoints).
    pub fn forward_source(&self) -> &BoundarySource {
        &self.source
    }

    #[inline]
    fn fwd_angle(&self, angle: f64) -> f64 {
        if self.reflected {
            angle + PI
        } else {
            angle
        }
    }

    #[inline]
    fn fwd_dir(&self, i: usize) -> usize {
        if self.reflected {
            self.solver.grids.directions.reflect(i)
        } else {
            i
        }
    }

    /// Ballistic part `Jf` (or `J̃g` for adjoints), evaluated in closed form.
    pub fn ballistic(&self, x: Point, angle: f64) -> f64 {
        self.solver.ballistic(&self.source, x, self.fwd_angle(angle))
    }

    /// Scattered part `u − Jf` at grid direction `i` and node `n`.
    pub fn scattered_node(&self, i: usize, n: usize) -> f64 {
        self.us[self.fwd_dir(i) * self.solver.n_nodes() + n]
    }

    /// Total field at grid direction `i` and node `n`.
    pub fn node_value(&self, i: usize, n: usize) -> f64 {
        let nn = self.solver.n_nodes();
        let j = self.fwd_dir(i);
        match self.cap {
            None => self.ug[j * nn + n],
            Some(_) => {
                let x = self.solver.grids.space.eval_position(n);
                self.solver.ballistic(&self.source, x, self.solver.grids.directions.angle(j)) + self.us[j * nn + n]
            }
        }
    }

    /// Sup norm of `u − Jf` over the grid.
    pub fn scattered_sup(&self) -> f64 {
        sup(&self.us)
    }

    fn interp_angle(&self, field: &[f64], x: Point, fwd_angle: f64) -> f64 {
        let nn = self.solver.n_nodes();
        let (j0, j1, fr) = self.solver.grids.directions.bracket(fwd_angle);
        let sp = &self.solver.grids.space;
        (1.0 - fr) * sp.interp(&field[j0 * nn..(j0 + 1) * nn], x) + fr * sp.interp(&field[j1 * nn..(j1 + 1) * nn], x)
    }

    /// `u − Jf` at an arbitrary point, bilinear in space and linear in angle.
    pub fn scattered(&self, x: Point, angle: f64) -> f64 {
        self.interp_angle(&self.us, x, self.fwd_angle(angle))
    }

    /// Smooth gridded part (`u` for smooth sources, `u − Jf` for caps).
    pub(crate) fn smooth(&self, x: Point, angle: f64) -> f64 {
        self.interp_angle(&self.ug, x, self.fwd_angle(angle))
    }

    pub fn value(&self, x: Point, angle: f64) -> f64 {
        match self.cap {
            None => self.smooth(x, angle),
            Some(_) => self.ballistic(x, angle) + self.scattered(x, angle),
        }
    }

    /// First scatter `A₂(Jf)` at `x` by direct sub-quadrature over the cap.
    fn first_scatter_exact(&self, cap: &CapScatter, x: Point, fwd_angle: f64) -> f64 {
        let s = self.solver;
        let k = s.medium.kappa(x);
        if k == 0.0 {
            return 0.0;
        }
        cap.sub
            .iter()
            .map(|&(a, w)| s.medium.phase((fwd_angle - a).cos()) * w * s.ballistic(&self.source, x, a))
            .sum::<f64>()
            * k
    }

    /// `A₂u(x,θ)` at an arbitrary point and direction.
    pub fn scatter_source(&self, x: Point, angle: f64) -> f64 {
        let s = self.solver;
        let a = self.fwd_angle(angle);
        let k = s.medium.kappa(x);
        if k == 0.0 {
            return 0.0;
        }
        let pw = s.phase_weights(unit(a));
        let nn = s.n_nodes();
        let smooth: f64 = pw
            .iter()
            .enumerate()
            .map(|(j, w)| w * s.grids.space.interp(&self.ug[j * nn..(j + 1) * nn], x))
            .sum::<f64>()
            * k;
        match &self.cap {
            None => smooth,
            Some(cap) => smooth + self.first_scatter_exact(cap, x, a),
        }
    }

    /// Integrand `A₂u(y,θ)` along chords, using the sampled first scatter.
    fn chord_source(&self, y: Point, fwd: f64, pw: &[f64]) -> f64 {
        let s = self.solver;
        let k = s.medium.kappa(y);
        if k == 0.0 {
            return 0.0;
        }
        let nn = s.n_nodes();
        let mut acc: f64 =
            pw.iter().enumerate().map(|(j, w)| w * s.grids.space.interp(&self.ug[j * nn..(j + 1) * nn], y)).sum();
        if let Some(cap) = &self.cap {
            let grid = cap.lattice.as_ref().map_or(&s.grids.space, |l| &l.grid);
            for (l, al) in [cap.centre - cap.h, cap.centre, cap.centre + cap.h].into_iter().enumerate() {
                acc += s.medium.phase((fwd - al).cos()) * grid.interp(&cap.g[l], y);
            }
        }
        k * acc
    }

    /// `u(x,θ)` at a point of the closed domain: closed-form ballistic part
    /// plus a chord integral of `A₂u` with exact attenuation.
    pub fn trace(&self, x: Point, angle: f64) -> f64 {
        let s = self.solver;
        let fwd = self.fwd_angle(angle);
        let th = unit(fwd);
        let back = [-th[0], -th[1]];
        let tau = s.grids.domain.forward_distance(x, back);
        let mut total = s.ballistic(&self.source, x, fwd);
        if !s.medium.has_scattering() || tau <= 0.0 {
            return total;
        }
        let step = self.cap.as_ref().and_then(|c| c.lattice.as_ref()).map_or(s.lattice.step, |l| l.step);
        let pw = s.phase_weights(th);
        let n = (tau / step).ceil().max(1.0) as usize;
        let dt = tau / n as f64;
        let mut acc = 0.0;
        for k in 0..=n {
            let t = k as f64 * dt;
            let y = add_scaled(x, -t, th);
            let att = (-s.medium.line_integral(x, back, t)).exp();
            let w = if k == 0 || k == n { 0.5 * dt } else { dt };
            acc += w * att * self.chord_source(y, fwd, &pw);
        }
        total += acc;
        total
    }

    /// `u(b_k, θ_i)` for every boundary-grid point and grid direction,
    /// `[dir][point]`, consistent with the solver's integrating-factor sweep.
    pub fn boundary_traces(&self) -> Vec<f64> {
        let s = self.solver;
        let (nd, nn, nb) = (s.n_dirs(), s.n_nodes(), s.grids.boundary.len());
        let mut out = vec![0.0; nd * nb];
        out.par_chunks_mut(nb).enumerate().for_each(|(i, row)| {
            let a_user = s.grids.directions.angle(i);
            if self.cap.as_ref().is_some_and(|c| c.lattice.is_some()) {
                for (k, r) in row.iter_mut().enumerate() {
                    *r = self.trace(s.grids.boundary.point(k), a_user);
                }
                return;
            }
            let j = self.fwd_dir(i);
            let th = s.grids.directions.dir(j);
            let a = s.grids.directions.angle(j);
            let p: Vec<f64> = (0..nn).map(|n| s.exp_od[j * nn + n] * self.s_total[j * nn + n]).collect();
            for (k, r) in row.iter_mut().enumerate() {
                let b = s.grids.boundary.point(k);
                let od_b = s.od_boundary[j * nb + k];
                let tau = s.grids.domain.forward_distance(b, [-th[0], -th[1]]);
                let ballistic = match self.cap {
                    None => self.source.eval(add_scaled(b, -tau, th), a) * (-od_b).exp(),
                    Some(_) => s.ballistic(&self.source, b, a),
                };
                let scattered = if s.medium.has_scattering() {
                    (-od_b).exp() * s.lattice.chord_sum(j, th, &p, b, None, tau)
                } else {
                    0.0
                };
                *r = ballistic + scattered;
            }
        });
        out
    }
}
