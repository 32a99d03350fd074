use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{add_scaled, dot, DirectionGrid, Domain, Grids, Point, SpatialGrid};
use crate::media::{check_admissibility, AdmissibilityReport, Medium};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Relative truncation tolerance of the collision expansion.
    pub tol_series: f64,
    pub j_max: usize,
    /// Chord step cap; the lattice spacing is used when larger.
    pub max_step: Option<f64>,
    /// Gauss–Legendre points across a source cap.
    pub m_sub: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol_series: 1e-8, j_max: 60, max_step: None, m_sub: 16 }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol_series > 0.0 && self.tol_series < 1.0) {
            return Err(Error::arg(format!("tol_series must lie in (0, 1), got {}", self.tol_series)));
        }
        if self.j_max == 0 {
            return Err(Error::arg("j_max must be positive"));
        }
        if let Some(s) = self.max_step {
            if !(s > 0.0) {
                return Err(Error::arg("max_step must be positive"));
            }
        }
        if self.m_sub < 2 {
            return Err(Error::arg("m_sub must be at least 2"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Tap {
    off: isize,
    /// Bilinear weights of the four surrounding nodes.
    w: [f64; 4],
}

/// A Cartesian lattice refining the solver grid by an integer factor,
/// with precomputed bilinear taps along each direction's chords.
///
/// For a lattice node, the sample `x − k·step·θ` has the same fractional
/// offset for every node, so chord sums reduce to fixed-offset gathers.
#[derive(Debug, Clone)]
pub(crate) struct Lattice {
    pub grid: SpatialGrid,
    pub factor: usize,
    pub step: f64,
    taps: Vec<Vec<Tap>>,
}

impl Lattice {
    pub fn new(domain: &Domain, base_cells: usize, factor: usize, step: f64, dirs: &DirectionGrid) -> Result<Self> {
        let grid = SpatialGrid::new(domain, base_cells * factor)?;
        let m = grid.side() as isize;
        let ratio = step / grid.spacing();
        let kmax = (domain.diameter() / step).ceil() as usize + 2;
        let taps = (0..dirs.len())
            .map(|i| {
                let th = dirs.dir(i);
                (0..=kmax)
                    .map(|k| {
                        let ox = -(k as f64) * ratio * th[0];
                        let oy = -(k as f64) * ratio * th[1];
                        let (dx, dy) = (ox.floor(), oy.floor());
                        let (fx, fy) = (ox - dx, oy - dy);
                        Tap {
                            off: dy as isize * m + dx as isize,
                            w: [(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy],
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(Self { grid, factor, step, taps })
    }

    /// Lattice index of solver-grid node `(ix, iy)`.
    #[inline]
    pub fn lift(&self, base_side: usize, node: usize) -> usize {
        let (ix, iy) = (node % base_side, node / base_side);
        self.grid.node(ix * self.factor, iy * self.factor)
    }

    #[inline]
    fn tap(&self, p: &[f64], base: usize, t: &Tap) -> f64 {
        let m = self.grid.side();
        let idx = (base as isize + t.off) as usize;
        let q = &p[idx..idx + m + 2];
        t.w[0] * q[0] + t.w[1] * q[1] + t.w[2] * q[m] + t.w[3] * q[m + 1]
    }

    /// `Σ_{k=1}^{K−1}` of the tapped samples, the interior trapezoid nodes.
    #[inline]
    fn tap_interior(&self, p: &[f64], base: usize, taps: &[Tap]) -> f64 {
        let m = self.grid.side();
        let mut acc = 0.0;
        for t in taps {
            let idx = (base as isize + t.off) as usize;
            let q = &p[idx..idx + m + 2];
            acc += t.w[0] * q[0] + t.w[1] * q[1] + t.w[2] * q[m] + t.w[3] * q[m + 1];
        }
        acc
    }

    /// Trapezoid rule for `∫₀^τ P(x − tθ_i) dt` with bilinear `P`.
    /// `node` is the lattice index of `x` when `x` is a lattice node strictly
    /// inside the domain; otherwise the samples are located individually.
    pub fn chord_sum(&self, dir: usize, theta: Point, p: &[f64], x: Point, node: Option<usize>, tau: f64) -> f64 {
        if tau <= 0.0 {
            return 0.0;
        }
        let step = self.step;
        let k_full = ((tau / step) * (1.0 - 1e-12)).floor() as usize;
        let sample = |k: usize| match node {
            Some(base) => self.tap(p, base, &self.taps[dir][k]),
            None => self.grid.interp(p, add_scaled(x, -(k as f64) * step, theta)),
        };
        let mut acc = 0.0;
        let v_last = if k_full > 0 {
            let v0 = sample(0);
            let inner = match node {
                Some(base) if k_full > 1 => self.tap_interior(p, base, &self.taps[dir][1..k_full]),
                _ => (1..k_full).map(sample).sum(),
            };
            let vk = sample(k_full);
            acc += step * (0.5 * v0 + inner + 0.5 * vk);
            vk
        } else {
            sample(0)
        };
        let rem = tau - k_full as f64 * step;
        if rem > 0.0 {
            let v_end = self.grid.interp(p, add_scaled(x, -tau, theta));
            acc += 0.5 * rem * (v_last + v_end);
        }
        acc
    }
}

/// Per-medium precomputation shared by every solve on fixed grids:
/// backward exit distances, optical depths, coefficient samples and the
/// circulant angular quadrature of the kernel.
pub struct Solver<'a> {
    pub(crate) medium: &'a Medium,
    pub(crate) grids: &'a Grids,
    pub(crate) opts: SolverOptions,
    pub(crate) report: AdmissibilityReport,
    /// `τ₋` from each node's evaluation position, `[dir][node]`.
    pub(crate) tau: Vec<f64>,
    pub(crate) od: Vec<f64>,
    pub(crate) exp_od: Vec<f64>,
    pub(crate) exp_neg_od: Vec<f64>,
    /// Backward optical depth from each boundary-grid point, `[dir][point]`.
    pub(crate) od_boundary: Vec<f64>,
    pub(crate) sigma: Vec<f64>,
    pub(crate) kappa: Vec<f64>,
    /// `p(cos(dΔθ))·Δθ`.
    pub(crate) circ: Vec<f64>,
    pub(crate) lattice: Lattice,
}

impl<'a> Solver<'a> {
    /// Fails with an inadmissibility error when neither subcriticality
    /// condition holds on the grid samples.
    pub fn new(medium: &'a Medium, grids: &'a Grids, opts: SolverOptions) -> Result<Self> {
        let nodes = grids.space.eval_positions();
        let dirs = &grids.directions;
        let od: Vec<f64> = (0..dirs.len())
            .into_par_iter()
            .flat_map_iter(|i| {
                let th = dirs.dir(i);
                let back = [-th[0], -th[1]];
                nodes.iter().map(move |&x| {
                    let t = grids.domain.forward_distance(x, back);
                    medium.line_integral(x, back, t)
                })
            })
            .collect();
        let od_boundary = boundary_depths(grids, |x, back, t| medium.line_integral(x, back, t));
        Self::with_optical_depth(medium, grids, opts, od, od_boundary)
    }

    /// Uses caller-supplied optical depths (`[dir][node]` and
    /// `[dir][boundary point]`) instead of integrating σ.
    pub fn with_optical_depth(
        medium: &'a Medium,
        grids: &'a Grids,
        opts: SolverOptions,
        od: Vec<f64>,
        od_boundary: Vec<f64>,
    ) -> Result<Self> {
        opts.validate()?;
        let nd = grids.directions.len();
        let nn = grids.space.len();
        if od.len() != nd * nn || od_boundary.len() != nd * grids.boundary.len() {
            return Err(Error::arg("optical depth table does not match the grids"));
        }
        let report = check_admissibility(medium, &grids.domain, &grids.directions, &grids.space)?;
        let nodes = grids.space.eval_positions();
        let mut tau = Vec::with_capacity(nd * nn);
        for i in 0..nd {
            let th = grids.directions.dir(i);
            tau.extend(nodes.iter().map(|&x| grids.domain.forward_distance(x, [-th[0], -th[1]])));
        }
        let exp_od: Vec<f64> = od.iter().map(|v| v.exp()).collect();
        let exp_neg_od: Vec<f64> = od.iter().map(|v| (-v).exp()).collect();
        let sigma = nodes.iter().map(|&x| medium.sigma(x)).collect();
        let kappa = nodes.iter().map(|&x| medium.kappa(x)).collect();
        let w = grids.directions.weight();
        let circ = (0..nd).map(|d| medium.phase((d as f64 * w).cos()) * w).collect();
        let h = grids.space.spacing();
        let step = opts.max_step.map_or(h, |s| s.min(h));
        let lattice = Lattice::new(&grids.domain, grids.space.cells(), 1, step, &grids.directions)?;
        Ok(Self { medium, grids, opts, report, tau, od, exp_od, exp_neg_od, od_boundary, sigma, kappa, circ, lattice })
    }

    pub fn medium(&self) -> &Medium {
        self.medium
    }

    pub fn grids(&self) -> &Grids {
        self.grids
    }

    pub fn options(&self) -> &SolverOptions {
        &self.opts
    }

    pub fn admissibility(&self) -> &AdmissibilityReport {
        &self.report
    }

    #[inline]
    pub(crate) fn n_nodes(&self) -> usize {
        self.grids.space.len()
    }

    #[inline]
    pub(crate) fn n_dirs(&self) -> usize {
        self.grids.directions.len()
    }

    /// Grid scattering operator `A₂` by circulant direction quadrature.
    pub(crate) fn a2_grid(&self, w: &[f64]) -> Vec<f64> {
        let (nd, nn) = (self.n_dirs(), self.n_nodes());
        let mut out = vec![0.0; nd * nn];
        if self.medium.kernel_preset().is_isotropic() {
            let mut col = vec![0.0; nn];
            for j in 0..nd {
                for (c, v) in col.iter_mut().zip(&w[j * nn..(j + 1) * nn]) {
                    *c += v;
                }
            }
            let c0 = self.circ[0];
            for n in 0..nn {
                let v = self.kappa[n] * c0 * col[n];
                for i in 0..nd {
                    out[i * nn + n] = v;
                }
            }
            return out;
        }
        out.par_chunks_mut(nn).enumerate().for_each(|(i, row)| {
            for j in 0..nd {
                let c = self.circ[(i + nd - j) % nd];
                for (o, v) in row.iter_mut().zip(&w[j * nn..(j + 1) * nn]) {
                    *o += c * v;
                }
            }
            for (o, k) in row.iter_mut().zip(&self.kappa) {
                *o *= k;
            }
        });
        out
    }

    /// `T₁⁻¹` on a gridded field via the integrating factor `e^{OD}`.
    pub(crate) fn t1inv_grid(&self, w: &[f64]) -> Vec<f64> {
        let (nd, nn) = (self.n_dirs(), self.n_nodes());
        let mut out = vec![0.0; nd * nn];
        out.par_chunks_mut(nn).enumerate().for_each(|(i, row)| {
            let p: Vec<f64> = (0..nn).map(|n| self.exp_od[i * nn + n] * w[i * nn + n]).collect();
            self.sweep_premultiplied(i, &self.lattice, &p, row);
        });
        out
    }

    /// `row[n] = e^{−OD(x_n)}·∫₀^{τ₋} P(x_n − tθ_i) dt` where `P` lives on `lattice`.
    pub(crate) fn sweep_premultiplied(&self, i: usize, lattice: &Lattice, p: &[f64], row: &mut [f64]) {
        let nn = self.n_nodes();
        let th = self.grids.directions.dir(i);
        let side = self.grids.space.side();
        for n in 0..nn {
            let tau = self.tau[i * nn + n];
            let node = if self.grids.space.is_active(n) { Some(lattice.lift(side, n)) } else { None };
            let x = self.grids.space.eval_position(n);
            row[n] = self.exp_neg_od[i * nn + n] * lattice.chord_sum(i, th, p, x, node, tau);
        }
    }

    /// `e^{OD_i}` sampled on a refined lattice by bilinear interpolation.
    pub(crate) fn exp_od_on(&self, i: usize, lattice: &Lattice) -> Vec<f64> {
        let nn = self.n_nodes();
        let od = &self.od[i * nn..(i + 1) * nn];
        lattice.grid.eval_positions().iter().map(|&y| self.grids.space.interp(od, y).exp()).collect()
    }

    /// `∫ k(x, θ, θ_j) w_j dθ_j`-weights for an arbitrary direction.
    pub(crate) fn phase_weights(&self, theta: Point) -> Vec<f64> {
        let dirs = &self.grids.directions;
        let w = dirs.weight();
        (0..dirs.len()).map(|j| self.medium.phase(dot(theta, dirs.dir(j))) * w).collect()
    }
}

pub(crate) fn boundary_depths(grids: &Grids, f: impl Fn(Point, Point, f64) -> f64 + Sync) -> Vec<f64> {
    let dirs = &grids.directions;
    let mut out = Vec::with_capacity(dirs.len() * grids.boundary.len());
    for i in 0..dirs.len() {
        let th = dirs.dir(i);
        let back = [-th[0], -th[1]];
        for k in 0..grids.boundary.len() {
            let b = grids.boundary.point(k);
            let t = grids.domain.forward_distance(b, back);
            out.push(f(b, back, t));
        }
    }
    out
}
