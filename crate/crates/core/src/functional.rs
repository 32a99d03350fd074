//! Simulated acousto-optic measurements, Fourier synthesis of the internal
//! functional `H(x) = ∫ Au·v dθ` and a direct internal oracle for it.

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{add_scaled, angle_diff, dot, Grids, Point};
use crate::media::{modulate, Medium};
use crate::table::Table;
use crate::transport::{gauss_legendre_nodes, BoundarySource, Solution, Solver};

pub const MEASUREMENT_HEADER: [&str; 5] = ["q1", "q2", "phi", "epsilon", "M"];
pub const FIELD_HEADER: [&str; 3] = ["x1", "x2", "H"];

/// How an internal functional was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    /// Direct evaluation from interior solutions.
    Oracle,
    /// Synthesis from modulated boundary measurements.
    Fourier,
}

/// One modulated boundary pairing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    /// Integer frequency index `m`, with `q = 2πm/L`.
    pub index: [i64; 2],
    pub q: Point,
    pub phi: f64,
    pub m: f64,
}

/// Pairings `M(q, φ)` for every `q` on the dual grid of the bounding box and
/// `φ ∈ {0, π/2}`, in row-major `(m₁, m₂, φ)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    pub epsilon: f64,
    pub n_q: usize,
    /// Lower corner and side length of the bounding box.
    pub lo: Point,
    pub length: f64,
    pub entries: Vec<Measurement>,
}

/// Dual-grid frequency index range `[−N/2, N/2)`.
fn frequency_indices(n_q: usize) -> impl Iterator<Item = i64> {
    let half = (n_q / 2) as i64;
    -half..(n_q as i64 - half)
}

fn in_range(n_q: usize, m: i64) -> bool {
    let half = (n_q / 2) as i64;
    m >= -half && m < n_q as i64 - half
}

impl MeasurementSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_table(&self) -> Table {
        let mut t = Table::new(&MEASUREMENT_HEADER);
        for e in &self.entries {
            t.push(vec![e.q[0], e.q[1], e.phi, self.epsilon, e.m]);
        }
        t
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        self.to_table().write(path)
    }

    /// Reads a set written by [`MeasurementSet::write_csv`] for the bounding
    /// box `(lo, length)`.
    pub fn read_csv(path: &Path, lo: Point, length: f64) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let table = Table::parse(&text, &MEASUREMENT_HEADER)?;
        let epsilon = table.rows.first().map_or(0.0, |r| r[3]);
        let scale = length / (2.0 * PI);
        let entries: Vec<Measurement> = table
            .rows
            .iter()
            .map(|r| Measurement {
                index: [(r[0] * scale).round() as i64, (r[1] * scale).round() as i64],
                q: [r[0], r[1]],
                phi: r[2],
                m: r[4],
            })
            .collect();
        let n_q = ((entries.len() / 2) as f64).sqrt().round() as usize;
        Ok(Self { epsilon, n_q, lo, length, entries })
    }
}

/// `H` sampled at points of `X`.
#[derive(Debug, Clone, PartialEq)]
pub struct InternalFunctionalField {
    pub points: Vec<Point>,
    pub values: Vec<f64>,
    pub provenance: Route,
}

impl InternalFunctionalField {
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn check_same_points(&self, other: &Self) -> Result<()> {
        if self.points != other.points {
            return Err(Error::arg("internal functionals are sampled at different points"));
        }
        Ok(())
    }

    /// `‖self − other‖_∞`.
    pub fn sup_distance(&self, other: &Self) -> Result<f64> {
        self.check_same_points(other)?;
        Ok(self.values.iter().zip(&other.values).fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    /// `‖self − reference‖₂ / ‖reference‖₂` over the common sample points.
    pub fn relative_l2(&self, reference: &Self) -> Result<f64> {
        self.check_same_points(reference)?;
        let num: f64 = self.values.iter().zip(&reference.values).map(|(a, b)| (a - b).powi(2)).sum();
        let den: f64 = reference.values.iter().map(|b| b * b).sum();
        Ok((num / den).sqrt())
    }

    pub fn to_table(&self) -> Table {
        let mut t = Table::new(&FIELD_HEADER);
        for (p, v) in self.points.iter().zip(&self.values) {
            t.push(vec![p[0], p[1], *v]);
        }
        t
    }
}

/// `∫_{∂X×S¹} u v (n·θ)` from traces laid out `[dir][boundary point]`.
pub fn boundary_pairing(grids: &Grids, u: &[f64], v: &[f64]) -> Result<f64> {
    let (nd, nb) = (grids.directions.len(), grids.boundary.len());
    if u.len() != nd * nb || v.len() != nd * nb {
        return Err(Error::arg(format!(
            "trace lengths {} and {} do not match the {nd}×{nb} boundary grid",
            u.len(),
            v.len()
        )));
    }
    let mut acc = 0.0;
    for i in 0..nd {
        let th = grids.directions.dir(i);
        for k in 0..nb {
            acc += u[i * nb + k] * v[i * nb + k] * dot(grids.boundary.normal(k), th);
        }
    }
    Ok(acc * grids.directions.weight() * grids.boundary.weight())
}

/// GL nodes over a cap and over the overlap of two caps, in the caller's
/// angle convention.
#[derive(Debug, Clone, Default)]
struct CapRule {
    u: Vec<(f64, f64)>,
    v: Vec<(f64, f64)>,
    both: Vec<(f64, f64)>,
}

impl CapRule {
    fn new(cap_u: Option<(f64, f64)>, cap_v: Option<(f64, f64)>, m: usize) -> Self {
        let nodes = |c: Option<(f64, f64)>| c.map_or(Vec::new(), |(c, h)| gauss_legendre_nodes(m, c - h, c + h));
        let both = match (cap_u, cap_v) {
            (Some((cu, hu)), Some((cv, hv))) => {
                let cv = cu + angle_diff(cv, cu);
                let (lo, hi) = ((cu - hu).max(cv - hv), (cu + hu).min(cv + hv));
                if hi > lo {
                    gauss_legendre_nodes(m, lo, hi)
                } else {
                    Vec::new()
                }
            }
            _ => Vec::new(),
        };
        Self { u: nodes(cap_u), v: nodes(cap_v), both }
    }
}

/// Boundary trace of one solution split into a part smooth in angle,
/// sampled at grid directions, and a cap-supported ballistic part sampled
/// at quadrature nodes.
struct BoundaryData {
    /// `[dir][point]`: `u − u_b` for cap sources, `u` otherwise.
    smooth: Vec<f64>,
    /// Ballistic part at the solution's own cap nodes, `[node][point]`.
    own: Vec<f64>,
    /// Ballistic part at the overlap nodes, `[node][point]`.
    both: Vec<f64>,
}

impl BoundaryData {
    fn new(sol: &Solution, own: &[(f64, f64)], both: &[(f64, f64)]) -> Self {
        let grids = sol.solver().grids();
        let nb = grids.boundary.len();
        let mut smooth = sol.boundary_traces();
        let capped = user_cap(sol).is_some();
        if capped {
            for (idx, v) in smooth.iter_mut().enumerate() {
                let (i, k) = (idx / nb, idx % nb);
                *v -= sol.ballistic(grids.boundary.point(k), grids.directions.angle(i));
            }
        }
        let sample = |nodes: &[(f64, f64)]| -> Vec<f64> {
            nodes
                .iter()
                .flat_map(|&(a, _)| (0..nb).map(move |k| sol.ballistic(grids.boundary.point(k), a)))
                .collect()
        };
        Self { smooth, own: sample(own), both: sample(both) }
    }

    fn smooth_at(&self, grids: &Grids, a: f64, k: usize) -> f64 {
        let nb = grids.boundary.len();
        let (j0, j1, fr) = grids.directions.bracket(a);
        (1.0 - fr) * self.smooth[j0 * nb + k] + fr * self.smooth[j1 * nb + k]
    }
}

/// `∫_{∂X×S¹} u v (n·θ)` with cap-supported ballistic parts integrated by
/// Gauss–Legendre nodes over their caps.
fn hybrid_pairing(grids: &Grids, rule: &CapRule, u: &BoundaryData, v: &BoundaryData) -> Result<f64> {
    let nb = grids.boundary.len();
    let mut acc = boundary_pairing(grids, &u.smooth, &v.smooth)?;
    let wb = grids.boundary.weight();
    let cap_sum = |nodes: &[(f64, f64)], f: &dyn Fn(usize, f64, usize) -> f64| -> f64 {
        nodes
            .iter()
            .enumerate()
            .map(|(l, &(a, w))| {
                let th = crate::geometry::unit(a);
                (0..nb).map(|k| f(l, a, k) * dot(grids.boundary.normal(k), th)).sum::<f64>() * w
            })
            .sum::<f64>()
            * wb
    };
    acc += cap_sum(&rule.u, &|l, a, k| u.own[l * nb + k] * v.smooth_at(grids, a, k));
    acc += cap_sum(&rule.v, &|l, a, k| v.own[l * nb + k] * u.smooth_at(grids, a, k));
    acc += cap_sum(&rule.both, &|l, _, k| u.both[l * nb + k] * v.both[l * nb + k]);
    Ok(acc)
}

/// `∫_{∂X×S¹} u v (n·θ)` for a forward solution `u` and an adjoint
/// solution `v`, resolving source caps narrower than the direction grid.
pub fn solution_pairing(u: &Solution, v: &Solution) -> Result<f64> {
    let rule = CapRule::new(user_cap(u), user_cap(v), u.solver().options().m_sub);
    let ud = BoundaryData::new(u, &rule.u, &rule.both);
    let vd = BoundaryData::new(v, &rule.v, &rule.both);
    hybrid_pairing(u.solver().grids(), &rule, &ud, &vd)
}

/// Fixed ingredients of a measurement campaign: the unmodulated solver,
/// the adjoint traces of `v` and the unmodulated pairing used as baseline.
pub struct Campaign<'s> {
    base: &'s Solver<'s>,
    source: BoundarySource,
    rule: CapRule,
    v_data: BoundaryData,
    baseline: f64,
}

impl<'s> Campaign<'s> {
    /// Solves for `u₀` (forward, data `f`) and `v` (adjoint, data `g`) once.
    pub fn new(base: &'s Solver<'s>, f: &BoundarySource, g: &BoundarySource) -> Result<Self> {
        if base.medium().modulation().is_some() {
            return Err(Error::arg("campaign needs the unmodulated medium"));
        }
        let v = base.solve_adjoint(g)?;
        let u0 = base.solve_forward(f)?;
        let rule = CapRule::new(user_cap(&u0), user_cap(&v), base.options().m_sub);
        let v_data = BoundaryData::new(&v, &rule.v, &rule.both);
        let u_data = BoundaryData::new(&u0, &rule.u, &rule.both);
        let baseline = hybrid_pairing(base.grids(), &rule, &u_data, &v_data)?;
        Ok(Self { base, source: f.clone(), rule, v_data, baseline })
    }

    /// Residual of the Green identity for the unmodulated medium.
    pub fn baseline(&self) -> f64 {
        self.baseline
    }

    /// `M(q,φ)`: the boundary pairing of `u_ε` against `v`, minus the
    /// unmodulated pairing.
    pub fn measure(&self, epsilon: f64, q: Point, phi: f64) -> Result<f64> {
        let medium = modulate(self.base.medium(), epsilon, q, phi, self.base.admissibility())?;
        let solver = Solver::new(&medium, self.base.grids(), *self.base.options())?;
        self.pair(&solver)
    }

    fn pair(&self, solver: &Solver) -> Result<f64> {
        let u = solver.solve_forward(&self.source)?;
        let u_data = BoundaryData::new(&u, &self.rule.u, &self.rule.both);
        Ok(hybrid_pairing(solver.grids(), &self.rule, &u_data, &self.v_data)? - self.baseline)
    }

    /// Modulated solver whose optical depths are assembled from the
    /// precomputed `∫σ₀ e^{iq·y} ds` tables.
    fn modulated(&self, medium: &Medium, depths: &PlaneWaveDepths, epsilon: f64, phi: f64, conj: bool) -> Result<f64> {
        let rot = Complex64::from_polar(epsilon, phi);
        let part = |base: &[f64], table: &[Complex64]| -> Vec<f64> {
            base.iter()
                .zip(table)
                .map(|(b, c)| b + (rot * if conj { c.conj() } else { *c }).re)
                .collect()
        };
        let od = part(&self.base.od, &depths.nodes);
        let od_boundary = part(&self.base.od_boundary, &depths.boundary);
        let solver = Solver::with_optical_depth(medium, self.base.grids(), *self.base.options(), od, od_boundary)?;
        self.pair(&solver)
    }

    /// Full measurement sets on the `n_q × n_q` dual grid, one per `ε`.
    ///
    /// Experiments that coincide physically (`φ = 0` at `±q`) are solved
    /// once; the plane-wave depth tables are shared between `±q`, both
    /// phases and every `ε`.
    pub fn measure_all(&self, epsilons: &[f64], n_q: usize) -> Result<Vec<MeasurementSet>> {
        if n_q < 2 || !n_q.is_multiple_of(2) {
            return Err(Error::arg(format!("N_q must be even and at least 2, got {n_q}")));
        }
        if epsilons.is_empty() {
            return Err(Error::arg("no modulation amplitudes given"));
        }
        let grids = self.base.grids();
        let (lo, hi) = grids.domain.bounding_box();
        let length = hi[0] - lo[0];
        if ((hi[1] - lo[1]) - length).abs() > 1e-12 {
            return Err(Error::arg("Fourier route needs a square bounding box"));
        }
        let dq = 2.0 * PI / length;
        let idx: Vec<i64> = frequency_indices(n_q).collect();
        // canonical representatives of {m, −m}
        let keys: Vec<[i64; 2]> = idx
            .iter()
            .flat_map(|&a| idx.iter().map(move |&b| [a, b]))
            .filter(|&[a, b]| {
                let neg_in = in_range(n_q, -a) && in_range(n_q, -b);
                !neg_in || (a, b) >= (-a, -b)
            })
            .collect();
        let ne = epsilons.len();
        type KeyResult = Vec<([i64; 2], usize, Vec<f64>)>;
        let per_key: Vec<Result<KeyResult>> = keys
            .par_iter()
            .map(|&key| {
                let q = [key[0] as f64 * dq, key[1] as f64 * dq];
                let depths = PlaneWaveDepths::new(self.base.medium(), grids, q);
                let neg = [-key[0], -key[1]];
                let mut out = Vec::new();
                let mut run = |m: [i64; 2], qv: Point, phi_k: usize, conj: bool| -> Result<()> {
                    let phi = phi_k as f64 * PI / 2.0;
                    let vals = epsilons
                        .iter()
                        .map(|&eps| {
                            let medium = modulate(self.base.medium(), eps, qv, phi, self.base.admissibility())?;
                            self.modulated(&medium, &depths, eps, phi, conj)
                        })
                        .collect::<Result<Vec<f64>>>()?;
                    out.push((m, phi_k, vals));
                    Ok(())
                };
                run(key, q, 0, false)?;
                run(key, q, 1, false)?;
                if neg != key && in_range(n_q, neg[0]) && in_range(n_q, neg[1]) {
                    let qn = [-q[0], -q[1]];
                    run(neg, qn, 1, true)?;
                    let same = out[0].2.clone();
                    out.push((neg, 0, same));
                }
                Ok(out)
            })
            .collect();
        let mut table = vec![vec![f64::NAN; ne]; 2 * n_q * n_q];
        let half = (n_q / 2) as i64;
        let slot = |m: [i64; 2], phi_k: usize| (((m[0] + half) as usize * n_q + (m[1] + half) as usize) * 2) + phi_k;
        for r in per_key {
            for (m, phi_k, vals) in r? {
                table[slot(m, phi_k)] = vals;
            }
        }
        Ok((0..ne)
            .map(|e| {
                let mut entries = Vec::with_capacity(2 * n_q * n_q);
                for &a in &idx {
                    for &b in &idx {
                        for phi_k in 0..2 {
                            entries.push(Measurement {
                                index: [a, b],
                                q: [a as f64 * dq, b as f64 * dq],
                                phi: phi_k as f64 * PI / 2.0,
                                m: table[slot([a, b], phi_k)][e],
                            });
                        }
                    }
                }
                MeasurementSet { epsilon: epsilons[e], n_q, lo, length, entries }
            })
            .collect())
    }
}

/// `∫₀^{τ₋} σ₀(y) e^{iq·y} ds` along backward chords, `y = x − sθ`, from
/// nodes and boundary points of the grids.
struct PlaneWaveDepths {
    nodes: Vec<Complex64>,
    boundary: Vec<Complex64>,
}

impl PlaneWaveDepths {
    fn new(medium: &Medium, grids: &Grids, q: Point) -> Self {
        let qn = q[0].hypot(q[1]);
        let panel = if qn > 0.0 { (PI / qn).min(0.25) } else { 0.25 };
        let rule = gauss_legendre_nodes(8, 0.0, 1.0);
        let sigma = medium.sigma_preset();
        let chord = |x: Point, back: Point, t: f64| -> Complex64 {
            if t <= 0.0 {
                return Complex64::new(0.0, 0.0);
            }
            let n = (t / panel).ceil().max(1.0) as usize;
            let len = t / n as f64;
            let mut acc = Complex64::new(0.0, 0.0);
            for p in 0..n {
                for &(r, w) in &rule {
                    let y = add_scaled(x, (p as f64 + r) * len, back);
                    acc += Complex64::from_polar(w * sigma.eval(y), dot(q, y));
                }
            }
            acc * len
        };
        let dirs = &grids.directions;
        let nodes = (0..dirs.len())
            .flat_map(|i| {
                let th = dirs.dir(i);
                let back = [-th[0], -th[1]];
                grids.space.eval_positions().iter().map(move |&x| (x, back))
            })
            .map(|(x, back)| chord(x, back, grids.domain.forward_distance(x, back)))
            .collect();
        let boundary = (0..dirs.len())
            .flat_map(|i| {
                let th = dirs.dir(i);
                let back = [-th[0], -th[1]];
                (0..grids.boundary.len()).map(move |k| (grids.boundary.point(k), back))
            })
            .map(|(b, back)| chord(b, back, grids.domain.forward_distance(b, back)))
            .collect();
        Self { nodes, boundary }
    }
}

/// Sample points of the Fourier route: the `n_q × n_q` DFT grid of the
/// bounding box, `x_j = lo + j·L/n_q`.
fn dft_points(lo: Point, length: f64, n_q: usize) -> Vec<Point> {
    let d = length / n_q as f64;
    (0..n_q).flat_map(|a| (0..n_q).map(move |b| [lo[0] + a as f64 * d, lo[1] + b as f64 * d])).collect()
}

/// DFT grid points lying in the open domain.
pub fn fourier_points(grids: &Grids, n_q: usize) -> Vec<Point> {
    let (lo, hi) = grids.domain.bounding_box();
    dft_points(lo, hi[0] - lo[0], n_q).into_iter().filter(|&p| grids.domain.contains_strict(p)).collect()
}

/// `Ĥ(q)` in FFT index order from a complete measurement set.
fn spectrum(set: &MeasurementSet) -> Result<Vec<Complex64>> {
    let n = set.n_q;
    if set.entries.len() != 2 * n * n {
        return Err(Error::arg(format!("expected {} measurements, found {}", 2 * n * n, set.entries.len())));
    }
    if !(set.epsilon > 0.0) {
        return Err(Error::arg("measurement set has no positive ε"));
    }
    let mut spec = vec![Complex64::new(0.0, 0.0); n * n];
    let mut seen = vec![0u8; n * n];
    for e in &set.entries {
        if !(in_range(n, e.index[0]) && in_range(n, e.index[1])) || !e.m.is_finite() {
            return Err(Error::arg(format!("measurement at index {:?} is invalid", e.index)));
        }
        let k = e.index.map(|m| m.rem_euclid(n as i64) as usize);
        let at = k[0] * n + k[1];
        let phase_k = if e.phi.abs() < 1e-9 {
            0
        } else if (e.phi - PI / 2.0).abs() < 1e-9 {
            1
        } else {
            return Err(Error::arg(format!("unsupported phase {}", e.phi)));
        };
        if phase_k == 0 {
            spec[at].re = e.m / set.epsilon;
        } else {
            spec[at].im = -e.m / set.epsilon;
        }
        seen[at] |= 1 << phase_k;
    }
    if seen.iter().any(|&s| s != 3) {
        return Err(Error::arg("measurement set does not cover every (q, φ) pair"));
    }
    Ok(spec)
}

/// `Ĥ(q) = C(q) + i·S(q)` with `C = M(q,0)/ε`, `S = −M(q,π/2)/ε`, inverted
/// as `H(x) = L⁻² Σ_q Ĥ(q) e^{−iq·x}` on the DFT grid and restricted to `X`.
pub fn recover_h_fourier(set: &MeasurementSet, grids: &Grids) -> Result<InternalFunctionalField> {
    let n = set.n_q;
    let mut spec = spectrum(set)?;
    // fold the e^{−iq·lo} phase in, then a forward 2-D DFT gives Σ e^{−2πi mj/N}
    let dq = 2.0 * PI / set.length;
    for a in 0..n {
        for b in 0..n {
            let m = [signed(a, n), signed(b, n)];
            let phase = -(m[0] as f64 * dq * set.lo[0] + m[1] as f64 * dq * set.lo[1]);
            spec[a * n + b] *= Complex64::from_polar(1.0, phase);
        }
    }
    fft2(&mut spec, n, false);
    let scale = 1.0 / (set.length * set.length);
    let all = dft_points(set.lo, set.length, n);
    let mut points = Vec::new();
    let mut values = Vec::new();
    for (p, c) in all.into_iter().zip(&spec) {
        if grids.domain.contains_strict(p) {
            points.push(p);
            values.push(c.re * scale);
        }
    }
    Ok(InternalFunctionalField { points, values, provenance: Route::Fourier })
}

/// `H(x) = L⁻² Σ_q Ĥ(q) e^{−iq·x}` summed directly at arbitrary points.
pub fn recover_h_fourier_at(set: &MeasurementSet, points: &[Point]) -> Result<InternalFunctionalField> {
    let spec = spectrum(set)?;
    let n = set.n_q;
    let dq = 2.0 * PI / set.length;
    let scale = 1.0 / (set.length * set.length);
    let values = points
        .par_iter()
        .map(|&x| {
            let mut acc = 0.0;
            for a in 0..n {
                let qa = signed(a, n) as f64 * dq * x[0];
                for b in 0..n {
                    let phase = -(qa + signed(b, n) as f64 * dq * x[1]);
                    acc += (spec[a * n + b] * Complex64::from_polar(1.0, phase)).re;
                }
            }
            acc * scale
        })
        .collect();
    Ok(InternalFunctionalField { points: points.to_vec(), values, provenance: Route::Fourier })
}

fn signed(k: usize, n: usize) -> i64 {
    if k < n / 2 {
        k as i64
    } else {
        k as i64 - n as i64
    }
}

/// In-place 2-D DFT of a row-major `n × n` array (`inverse` flips the sign).
fn fft2(data: &mut [Complex64], n: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let fft = if inverse { planner.plan_fft_inverse(n) } else { planner.plan_fft_forward(n) };
    for row in data.chunks_mut(n) {
        fft.process(row);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); n];
    for b in 0..n {
        for a in 0..n {
            col[a] = data[a * n + b];
        }
        fft.process(&mut col);
        for a in 0..n {
            data[a * n + b] = col[a];
        }
    }
}

/// Exact measurements `M(q,φ) = ε∫cos(q·x + φ)H dx` of a field given on
/// the DFT grid (zero outside `X`), by the discrete forward transform.
pub fn synthesize_measurements(
    grids: &Grids,
    n_q: usize,
    epsilon: f64,
    h: impl Fn(Point) -> f64,
) -> MeasurementSet {
    let (lo, hi) = grids.domain.bounding_box();
    let length = hi[0] - lo[0];
    let d = length / n_q as f64;
    let mut data: Vec<Complex64> = dft_points(lo, length, n_q)
        .into_iter()
        .map(|p| Complex64::new(if grids.domain.contains_strict(p) { h(p) } else { 0.0 }, 0.0))
        .collect();
    // Σ_j H_j e^{+2πi mj/N} via the inverse DFT, then the e^{iq·lo} phase
    fft2(&mut data, n_q, true);
    let dq = 2.0 * PI / length;
    let mut entries = Vec::with_capacity(2 * n_q * n_q);
    for a in frequency_indices(n_q) {
        for b in frequency_indices(n_q) {
            let k = [a.rem_euclid(n_q as i64) as usize, b.rem_euclid(n_q as i64) as usize];
            let q = [a as f64 * dq, b as f64 * dq];
            let hat = data[k[0] * n_q + k[1]] * Complex64::from_polar(d * d, q[0] * lo[0] + q[1] * lo[1]);
            entries.push(Measurement { index: [a, b], q, phi: 0.0, m: epsilon * hat.re });
            entries.push(Measurement { index: [a, b], q, phi: PI / 2.0, m: -epsilon * hat.im });
        }
    }
    MeasurementSet { epsilon, n_q, lo, length, entries }
}

/// Cap of a solution's source in the caller's angle convention.
fn user_cap(s: &Solution) -> Option<(f64, f64)> {
    s.forward_source().cap().map(|(c, h)| if s.is_adjoint() { (c + PI, h) } else { (c, h) })
}

/// `H(x) = ∫ (A₂u − σu)·v dθ` at one point.
///
/// Cap-supported ballistic parts `u_b`, `v_b` are integrated with
/// Gauss–Legendre points over their caps; smooth parts use the direction
/// grid:
/// `Σ_i (A₂u − σu_g)v_g + ∫_{cap v}(A₂u − σu_g)v_b − ∫_{cap u}σ u_b v_g − ∫_{cap u ∩ cap v}σ u_b v_b`.
pub fn functional_at(u: &Solution, v: &Solution, x: Point) -> f64 {
    let solver = u.solver();
    let sigma = solver.medium().sigma(x);
    let dirs = &solver.grids().directions;
    let m_sub = solver.options().m_sub;
    let smooth_au = |a: f64| u.scatter_source(x, a) - sigma * u.smooth(x, a);
    let mut total: f64 = (0..dirs.len())
        .map(|i| {
            let a = dirs.angle(i);
            smooth_au(a) * v.smooth(x, a)
        })
        .sum::<f64>()
        * dirs.weight();
    let cap_u = user_cap(u);
    let cap_v = user_cap(v);
    if let Some((c, h)) = cap_v {
        total += gauss_legendre_nodes(m_sub, c - h, c + h)
            .into_iter()
            .map(|(a, w)| w * smooth_au(a) * v.ballistic(x, a))
            .sum::<f64>();
    }
    if let Some((c, h)) = cap_u {
        total -= sigma
            * gauss_legendre_nodes(m_sub, c - h, c + h)
                .into_iter()
                .map(|(a, w)| w * u.ballistic(x, a) * v.smooth(x, a))
                .sum::<f64>();
    }
    if let (Some((cu, hu)), Some((cv, hv))) = (cap_u, cap_v) {
        let cv = cu + angle_diff(cv, cu);
        let lo = (cu - hu).max(cv - hv);
        let hi = (cu + hu).min(cv + hv);
        if hi > lo {
            total -= sigma
                * gauss_legendre_nodes(m_sub, lo, hi)
                    .into_iter()
                    .map(|(a, w)| w * u.ballistic(x, a) * v.ballistic(x, a))
                    .sum::<f64>();
        }
    }
    total
}

/// `H` at `points` from a forward solution `u` and an adjoint solution `v`.
pub fn oracle_h_at(u: &Solution, v: &Solution, points: &[Point]) -> InternalFunctionalField {
    let values = points.par_iter().map(|&x| functional_at(u, v, x)).collect();
    InternalFunctionalField { points: points.to_vec(), values, provenance: Route::Oracle }
}

/// Solves `u` (forward, data `f`) and `v` (adjoint, data `g`) and evaluates
/// `H` at `points`.
pub fn oracle_h(solver: &Solver, f: &BoundarySource, g: &BoundarySource, points: &[Point]) -> Result<InternalFunctionalField> {
    if solver.medium().modulation().is_some() {
        return Err(Error::arg("the internal functional is defined for the unmodulated medium"));
    }
    let u = solver.solve_forward(f)?;
    let v = solver.solve_adjoint(g)?;
    Ok(oracle_h_at(&u, &v, points))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilityReport {
    /// `‖H₁ − H₂‖_∞`.
    pub h_difference: f64,
    /// `‖g‖_{L¹}·‖𝒜¹_ε f − 𝒜²_ε f‖ + ‖f‖_{L¹}·‖𝒜¹ g − 𝒜² g‖_∞`.
    pub data_bound: f64,
    /// `h_difference / data_bound`, zero when both vanish.
    pub ratio: f64,
}

/// Compares the functional difference with the boundary-data surrogate.
pub fn stability_metric(
    h1: &InternalFunctionalField,
    h2: &InternalFunctionalField,
    albedo_f_difference: f64,
    albedo_g_difference: f64,
    f_l1: f64,
    g_l1: f64,
) -> Result<StabilityReport> {
    let h_difference = h1.sup_distance(h2)?;
    let data_bound = g_l1 * albedo_f_difference + f_l1 * albedo_g_difference;
    let ratio = if h_difference == 0.0 { 0.0 } else { h_difference / data_bound };
    Ok(StabilityReport { h_difference, data_bound, ratio })
}

/// Sup norm of the difference between two albedo traces on `Γ₊`.
pub fn albedo_difference(a: &crate::transport::AlbedoTrace, b: &crate::transport::AlbedoTrace) -> Result<f64> {
    if a.values.len() != b.values.len() || a.n_points != b.n_points {
        return Err(Error::arg("albedo traces live on different grids"));
    }
    Ok(a.values.iter().zip(&b.values).fold(0.0, |m, (x, y)| m.max((x - y).abs())))
}
