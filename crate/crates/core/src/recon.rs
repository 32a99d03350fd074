//! Algebraic reconstruction of σ and k from internal functionals, with the
//! study drivers built on it.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::functional::{functional_at, recover_h_fourier_at, Campaign, Route};
use crate::geometry::{add_scaled, angle_diff, unit, Grids, Point, Side};
use crate::media::{Bump, Medium};
use crate::table::Table;
use crate::transport::{BoundarySource, Solver, SolverOptions};

pub const SIGMA_HEADER: [&str; 5] = ["x1", "x2", "sigma_true", "sigma_hat", "rel_err"];
pub const KERNEL_HEADER: [&str; 7] = ["x1", "x2", "theta1", "theta2", "k_true", "k_hat", "rel_err"];
pub const STUDY_HEADER: [&str; 4] = ["param", "error", "ratio", "order"];
pub const STABILITY_HEADER: [&str; 4] = ["delta", "coefficient_diff", "h_diff", "ratio"];

fn check_h(h: f64) -> Result<()> {
    if !(h > 0.0 && h < PI / 4.0) {
        return Err(Error::arg(format!("h must lie in (0, π/4), got {h}")));
    }
    Ok(())
}

/// `f_h = h^{−1/2}` on the cap `|θ − θ₀| < h`.
pub fn make_f_h(theta0: f64, h: f64) -> Result<BoundarySource> {
    check_h(h)?;
    Ok(BoundarySource::Concentrated { theta0, h, amplitude: h.powf(-0.5) })
}

/// `g_h = h^{−1/2}·f_h·s(ξ/h + ½)` with frame coordinate `ξ` taken about `origin`.
pub fn make_g_h(theta1: f64, h: f64, origin: Point) -> Result<BoundarySource> {
    check_h(h)?;
    Ok(BoundarySource::Oscillatory { theta1, h, amplitude: 1.0 / h, origin, mirror: false })
}

/// Settings for evaluating `H` through modulated boundary measurements.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FourierSettings {
    pub n_q: usize,
    pub epsilon: f64,
}

/// `H(f, g)` at `points` through the chosen route.
pub fn functional_values(
    solver: &Solver,
    f: &BoundarySource,
    g: &BoundarySource,
    points: &[Point],
    route: Route,
    fourier: FourierSettings,
) -> Result<Vec<f64>> {
    match route {
        Route::Oracle => {
            let u = solver.solve_forward(f)?;
            let v = solver.solve_adjoint(g)?;
            Ok(points.par_iter().map(|&x| functional_at(&u, &v, x)).collect())
        }
        Route::Fourier => {
            let campaign = Campaign::new(solver, f, g)?;
            let set = campaign.measure_all(&[fourier.epsilon], fourier.n_q)?.remove(0);
            Ok(recover_h_fourier_at(&set, points)?.values)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SigmaPoint {
    pub x: Point,
    pub sigma_true: f64,
    pub sigma_hat: f64,
    /// `−H(f_h, f_h)(x)`.
    pub numerator: f64,
    /// `2·h^{1/2}·𝒜₀(f_h)(x + τ₊θ₀, θ₀)`.
    pub denominator: f64,
}

impl SigmaPoint {
    pub fn relative_error(&self) -> f64 {
        ((self.sigma_hat - self.sigma_true) / self.sigma_true).abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SigmaReconstruction {
    pub h: f64,
    pub theta0: f64,
    pub route: Route,
    pub points: Vec<SigmaPoint>,
    /// Evaluation points whose denominator fell below the floor.
    pub flagged: Vec<Point>,
}

impl SigmaReconstruction {
    pub fn max_relative_error(&self) -> f64 {
        self.points.iter().map(SigmaPoint::relative_error).fold(0.0, f64::max)
    }

    pub fn to_table(&self) -> Table {
        let mut t = Table::new(&SIGMA_HEADER);
        for p in &self.points {
            t.push(vec![p.x[0], p.x[1], p.sigma_true, p.sigma_hat, p.relative_error()]);
        }
        t
    }
}

/// `σ̂(x) = −H(f_h,f_h)(x) / (2·h^{1/2}·𝒜₀(f_h)(x + τ₊(x,θ₀)θ₀, θ₀))`.
///
/// The albedo is read off the forward solution at the exit point of the
/// ray through `x`. Points whose `h^{1/2}𝒜₀(f_h)` drops below
/// `½e^{−σ_max·diam}` are flagged instead of returned.
pub fn recover_sigma(
    solver: &Solver,
    theta0: f64,
    h: f64,
    points: &[Point],
    route: Route,
    fourier: FourierSettings,
) -> Result<SigmaReconstruction> {
    let f = make_f_h(theta0, h)?;
    for &x in points {
        if !solver.grids().domain.contains_strict(x) {
            return Err(Error::arg(format!("evaluation point {x:?} is not interior")));
        }
    }
    let hv = functional_values(solver, &f, &f, points, route, fourier)?;
    let u = solver.solve_forward(&f)?;
    let domain = &solver.grids().domain;
    let th = unit(theta0);
    let sigma_max = solver.sigma.iter().cloned().fold(0.0, f64::max);
    let floor = 0.5 * (-sigma_max * domain.diameter()).exp();
    let mut out = Vec::new();
    let mut flagged = Vec::new();
    for (&x, &hx) in points.iter().zip(&hv) {
        let exit = add_scaled(x, domain.tau(x, th, Side::Plus), th);
        let albedo = h.sqrt() * u.trace(exit, theta0);
        if albedo < floor {
            flagged.push(x);
            continue;
        }
        let numerator = -hx;
        let denominator = 2.0 * albedo;
        out.push(SigmaPoint {
            x,
            sigma_true: solver.medium().sigma(x),
            sigma_hat: numerator / denominator,
            numerator,
            denominator,
        });
    }
    Ok(SigmaReconstruction { h, theta0, route, points: out, flagged })
}

/// Evaluation point `x` with incoming direction `θ₁` and outgoing `θ₂`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSample {
    pub x: Point,
    pub theta1: f64,
    pub theta2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KernelPoint {
    pub sample: KernelSample,
    pub k_true: f64,
    pub k_hat: f64,
    pub functional: f64,
}

impl KernelPoint {
    pub fn relative_error(&self) -> f64 {
        ((self.k_hat - self.k_true) / self.k_true).abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelReconstruction {
    pub h: f64,
    pub route: Route,
    pub points: Vec<KernelPoint>,
}

impl KernelReconstruction {
    pub fn max_relative_error(&self) -> f64 {
        self.points.iter().map(KernelPoint::relative_error).fold(0.0, f64::max)
    }

    pub fn to_table(&self) -> Table {
        let mut t = Table::new(&KERNEL_HEADER);
        for p in &self.points {
            let s = p.sample;
            t.push(vec![s.x[0], s.x[1], s.theta1, s.theta2, p.k_true, p.k_hat, p.relative_error()]);
        }
        t
    }
}

/// Smallest admissible angle between `θ₁` and `θ₂` for a given `h`.
pub fn separation_guard(h: f64) -> f64 {
    2.0 * h.sqrt()
}

/// `k̂(x,θ₂,θ₁) = ¼·|H(g^{θ₁}_h, g^{θ₂}_h)(x)·exp(∫₀^{τ₊(x,θ₂)}σ(x+sθ₂)ds + ∫₀^{τ₋(x,θ₁)}σ(x−sθ₁)ds)|`
/// with both sources framed about `x` and the exponentials taken from
/// `sigma_known`.
pub fn recover_k(
    solver: &Solver,
    sigma_known: &Medium,
    samples: &[KernelSample],
    h: f64,
    route: Route,
    fourier: FourierSettings,
) -> Result<KernelReconstruction> {
    check_h(h)?;
    for s in samples {
        let sep = angle_diff(s.theta1, s.theta2).abs();
        if sep < separation_guard(h) {
            return Err(Error::arg(format!(
                "directions {} and {} are {sep:.4} rad apart, below the guard 2√h = {:.4}",
                s.theta1,
                s.theta2,
                separation_guard(h)
            )));
        }
        if !solver.grids().domain.contains_strict(s.x) {
            return Err(Error::arg(format!("evaluation point {:?} is not interior", s.x)));
        }
    }
    let domain = &solver.grids().domain;
    let points = samples
        .iter()
        .map(|s| {
            let g1 = make_g_h(s.theta1, h, s.x)?;
            let g2 = make_g_h(s.theta2, h, s.x)?;
            let hv = functional_values(solver, &g1, &g2, &[s.x], route, fourier)?[0];
            let (t1, t2) = (unit(s.theta1), unit(s.theta2));
            let depth = sigma_known.line_integral(s.x, t2, domain.tau(s.x, t2, Side::Plus))
                + sigma_known.line_integral(s.x, [-t1[0], -t1[1]], domain.tau(s.x, t1, Side::Minus));
            Ok(KernelPoint {
                sample: *s,
                k_true: solver.medium().k(s.x, t2, t1),
                k_hat: 0.25 * (hv * depth.exp()).abs(),
                functional: hv,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(KernelReconstruction { h, route, points })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    /// `‖u − Jf‖_∞` for unit-amplitude caps.
    Ballistic,
    /// Sup, cap-complement and fixed-point `L¹` norms of `u − Jg_h`.
    Oscillatory,
    /// Worst relative σ error.
    Sigma,
    /// Worst relative k error.
    Kernel,
    /// Relative `L²` distance between the Fourier and oracle functionals.
    Epsilon,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StudyRow {
    pub param: f64,
    pub error: f64,
    /// `error_prev / error`; `NaN` on the first row.
    pub ratio: f64,
    /// `log(ratio) / log(param_prev / param)`; `NaN` on the first row.
    pub order: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Study {
    pub kind: StudyKind,
    /// Quantity measured, e.g. `sup` or `cap_complement`.
    pub name: String,
    pub rows: Vec<StudyRow>,
}

impl Study {
    fn from_errors(kind: StudyKind, name: &str, params: &[f64], errors: &[f64]) -> Self {
        let rows = params
            .iter()
            .zip(errors)
            .enumerate()
            .map(|(k, (&p, &e))| {
                if k == 0 {
                    StudyRow { param: p, error: e, ratio: f64::NAN, order: f64::NAN }
                } else {
                    let ratio = errors[k - 1] / e;
                    StudyRow { param: p, error: e, ratio, order: ratio.ln() / (params[k - 1] / p).ln() }
                }
            })
            .collect();
        Self { kind, name: name.to_string(), rows }
    }

    pub fn errors(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.error).collect()
    }

    pub fn ratios(&self) -> Vec<f64> {
        self.rows.iter().skip(1).map(|r| r.ratio).collect()
    }

    pub fn to_table(&self) -> Table {
        let mut t = Table::new(&STUDY_HEADER);
        for r in &self.rows {
            t.push(vec![r.param, r.error, r.ratio, r.order]);
        }
        t
    }
}

/// Everything a study needs besides its parameter list.
#[derive(Debug, Clone)]
pub struct StudySetup<'a> {
    pub medium: &'a Medium,
    pub grids: &'a Grids,
    pub options: SolverOptions,
    /// Cap direction of `f_h`.
    pub theta0: f64,
    /// Cap direction of `g_h`, framed about `frame_origin`.
    pub theta1: f64,
    pub frame_origin: Point,
    /// σ evaluation points; the first one doubles as the fixed point of
    /// the oscillatory `L¹` row.
    pub points: Vec<Point>,
    pub kernel_samples: Vec<KernelSample>,
    /// `h` used by studies whose parameter is not `h`.
    pub h: f64,
    pub fourier: FourierSettings,
    /// Source pair of the ε study.
    pub f: BoundarySource,
    pub g: BoundarySource,
}

/// Convergence table(s) over `params` (values of `h`, or of `ε` for the
/// `epsilon` kind).
pub fn run_convergence_study(kind: StudyKind, params: &[f64], setup: &StudySetup) -> Result<Vec<Study>> {
    if params.len() < 3 {
        return Err(Error::arg(format!("a convergence study needs at least 3 parameter values, got {}", params.len())));
    }
    let solver = Solver::new(setup.medium, setup.grids, setup.options)?;
    match kind {
        StudyKind::Ballistic => {
            let errors = params
                .iter()
                .map(|&h| {
                    check_h(h)?;
                    let f = BoundarySource::Concentrated { theta0: setup.theta0, h, amplitude: 1.0 };
                    Ok(solver.solve_forward(&f)?.scattered_sup())
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(vec![Study::from_errors(kind, "sup", params, &errors)])
        }
        StudyKind::Oscillatory => {
            let x = *setup.points.first().ok_or_else(|| Error::arg("no evaluation point for the L¹ row"))?;
            let dirs = &setup.grids.directions;
            let space = &setup.grids.space;
            let mut sup = Vec::new();
            let mut cap_complement = Vec::new();
            let mut l1 = Vec::new();
            for &h in params {
                let g = make_g_h(setup.theta1, h, setup.frame_origin)?;
                let u = solver.solve_forward(&g)?;
                sup.push(u.scattered_sup());
                let far: Vec<usize> =
                    (0..dirs.len()).filter(|&i| angle_diff(dirs.angle(i), setup.theta1).abs() > h.sqrt()).collect();
                let w = far
                    .par_iter()
                    .map(|&i| space.active_ids().iter().fold(0.0f64, |m, &n| m.max(u.scattered_node(i, n).abs())))
                    .reduce(|| 0.0, f64::max);
                cap_complement.push(w);
                l1.push((0..dirs.len()).map(|i| u.scattered(x, dirs.angle(i)).abs()).sum::<f64>() * dirs.weight());
            }
            Ok(vec![
                Study::from_errors(kind, "sup", params, &sup),
                Study::from_errors(kind, "cap_complement", params, &cap_complement),
                Study::from_errors(kind, "fixed_point_l1", params, &l1),
            ])
        }
        StudyKind::Sigma => {
            let errors = params
                .iter()
                .map(|&h| {
                    let r = recover_sigma(&solver, setup.theta0, h, &setup.points, Route::Oracle, setup.fourier)?;
                    Ok(r.max_relative_error())
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(vec![Study::from_errors(kind, "max_rel_err", params, &errors)])
        }
        StudyKind::Kernel => {
            let errors = params
                .iter()
                .map(|&h| {
                    let r = recover_k(&solver, setup.medium, &setup.kernel_samples, h, Route::Oracle, setup.fourier)?;
                    Ok(r.max_relative_error())
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(vec![Study::from_errors(kind, "max_rel_err", params, &errors)])
        }
        StudyKind::Epsilon => {
            let e = epsilon_errors(&solver, &setup.f, &setup.g, params, setup.fourier.n_q)?;
            Ok(vec![
                Study::from_errors(kind, "raw", params, &e.raw),
                Study::from_errors(kind, "floor_subtracted", params, &e.above_floor),
            ])
        }
    }
}

/// Fourier-route errors against the oracle for several `ε`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpsilonErrors {
    /// `‖H_F(ε) − H_O‖₂/‖H_O‖₂`.
    pub raw: Vec<f64>,
    /// `‖H_F(ε) − F₀‖₂/‖H_O‖₂` where `F₀` is the Richardson extrapolation
    /// `2H_F(ε_a) − H_F(ε_b)` from the two smallest `ε` (`ε_b = 2ε_a`).
    pub above_floor: Vec<f64>,
    /// `‖F₀ − H_O‖₂/‖H_O‖₂`.
    pub floor: f64,
}

pub fn epsilon_errors(
    solver: &Solver,
    f: &BoundarySource,
    g: &BoundarySource,
    epsilons: &[f64],
    n_q: usize,
) -> Result<EpsilonErrors> {
    let mut order: Vec<usize> = (0..epsilons.len()).collect();
    order.sort_by(|&a, &b| epsilons[a].total_cmp(&epsilons[b]));
    let (a, b) = match order.as_slice() {
        [a, b, ..] => (*a, *b),
        _ => return Err(Error::arg("need at least two ε values")),
    };
    if ((epsilons[b] / epsilons[a]) - 2.0).abs() > 1e-9 {
        return Err(Error::arg("the two smallest ε values must differ by a factor 2"));
    }
    let campaign = Campaign::new(solver, f, g)?;
    let sets = campaign.measure_all(epsilons, n_q)?;
    let fields = sets.iter().map(|s| crate::functional::recover_h_fourier(s, solver.grids())).collect::<Result<Vec<_>>>()?;
    let oracle = crate::functional::oracle_h(solver, f, g, &fields[0].points)?;
    let norm = oracle.values.iter().map(|v| v * v).sum::<f64>().sqrt();
    let floor: Vec<f64> = fields[a].values.iter().zip(&fields[b].values).map(|(x, y)| 2.0 * x - y).collect();
    let dist = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt() / norm;
    Ok(EpsilonErrors {
        raw: fields.iter().map(|h| dist(&h.values, &oracle.values)).collect(),
        above_floor: fields.iter().map(|h| dist(&h.values, &floor)).collect(),
        floor: dist(&floor, &oracle.values),
    })
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilityRow {
    pub delta: f64,
    /// `‖c₁ − c₂‖_∞` of the perturbed coefficient over the evaluation points.
    pub coefficient_diff: f64,
    /// `‖H₁ − H₂‖_∞` over the evaluation points.
    pub h_diff: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityStudy {
    pub sigma: Vec<StabilityRow>,
    pub kernel: Vec<StabilityRow>,
}

fn stability_table(rows: &[StabilityRow]) -> Table {
    let mut t = Table::new(&STABILITY_HEADER);
    for r in rows {
        t.push(vec![r.delta, r.coefficient_diff, r.h_diff, r.ratio]);
    }
    t
}

impl StabilityStudy {
    pub fn sigma_table(&self) -> Table {
        stability_table(&self.sigma)
    }

    pub fn kernel_table(&self) -> Table {
        stability_table(&self.kernel)
    }
}

/// Perturbs σ (and separately κ) by `δ·bump` and compares coefficient
/// differences with differences of `H(f_h,f_h)` (resp. `H(g^{θ₁}_h, g^{θ₂}_h)`).
pub fn run_stability_study(deltas: &[f64], bump: Bump, setup: &StudySetup) -> Result<StabilityStudy> {
    if deltas.len() < 2 {
        return Err(Error::arg("a stability study needs at least two perturbation magnitudes"));
    }
    let h = setup.h;
    let f = make_f_h(setup.theta0, h)?;
    let sigma_h = |m: &Medium| -> Result<Vec<f64>> {
        let s = Solver::new(m, setup.grids, setup.options)?;
        functional_values(&s, &f, &f, &setup.points, Route::Oracle, setup.fourier)
    };
    let kernel_h = |m: &Medium| -> Result<Vec<f64>> {
        let s = Solver::new(m, setup.grids, setup.options)?;
        setup
            .kernel_samples
            .iter()
            .map(|k| {
                let g1 = make_g_h(k.theta1, h, k.x)?;
                let g2 = make_g_h(k.theta2, h, k.x)?;
                Ok(functional_values(&s, &g1, &g2, &[k.x], Route::Oracle, setup.fourier)?[0])
            })
            .collect()
    };
    let sup_diff = |a: &[f64], b: &[f64]| a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let row = |delta: f64, c: f64, hd: f64| StabilityRow {
        delta,
        coefficient_diff: c,
        h_diff: hd,
        ratio: if hd == 0.0 { 0.0 } else { c / hd },
    };
    let h_sigma0 = sigma_h(setup.medium)?;
    let h_kernel0 = if setup.kernel_samples.is_empty() { Vec::new() } else { kernel_h(setup.medium)? };
    let mut sigma = Vec::new();
    let mut kernel = Vec::new();
    for &delta in deltas {
        let b = Bump { amplitude: delta, ..bump };
        let m2 = setup.medium.with_sigma(setup.medium.sigma_preset().perturbed(b))?;
        let c = sup_diff(
            &setup.points.iter().map(|&x| setup.medium.sigma(x)).collect::<Vec<_>>(),
            &setup.points.iter().map(|&x| m2.sigma(x)).collect::<Vec<_>>(),
        );
        sigma.push(row(delta, c, sup_diff(&h_sigma0, &sigma_h(&m2)?)));
        if !setup.kernel_samples.is_empty() {
            let kp = setup.medium.kernel_preset();
            let m3 = setup.medium.with_kernel(kp.with_kappa(kp.kappa().perturbed(b)))?;
            let kval = |m: &Medium| -> Vec<f64> {
                setup.kernel_samples.iter().map(|k| m.k(k.x, unit(k.theta2), unit(k.theta1))).collect()
            };
            let c = sup_diff(&kval(setup.medium), &kval(&m3));
            kernel.push(row(delta, c, sup_diff(&h_kernel0, &kernel_h(&m3)?)));
        }
    }
    Ok(StabilityStudy { sigma, kernel })
}
