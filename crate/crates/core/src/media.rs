//! Attenuation and scattering coefficients together with their admissibility
//! checks and acoustic modulation.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{add_scaled, dot, norm, sub, DirectionGrid, Domain, Point, Side, SpatialGrid};

/// Largest accepted modulation amplitude.
pub const MAX_EPSILON: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bump {
    pub amplitude: f64,
    pub center: Point,
    /// `w` in `exp(−|x − c|²/w)`.
    pub width: f64,
}

impl Bump {
    #[inline]
    fn eval(&self, x: Point) -> f64 {
        let d = sub(x, self.center);
        self.amplitude * (-dot(d, d) / self.width).exp()
    }

    /// `|d + s·dir|² = (s + b)² + c` with `b = d·dir`, `c = |d|² − b²`.
    fn line_integral(&self, x: Point, dir: Point, t: f64) -> f64 {
        let d = sub(x, self.center);
        let b = dot(d, dir);
        let c = (dot(d, d) - b * b).max(0.0);
        let r = self.width.sqrt();
        let span = libm::erf((t + b) / r) - libm::erf(b / r);
        self.amplitude * (-c / self.width).exp() * 0.5 * PI.sqrt() * r * span
    }
}

/// Analytic scalar field on X.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldPreset {
    Constant { value: f64 },
    GaussianBump { base: f64, amplitude: f64, center: Point, width: f64 },
    Bumps { base: f64, bumps: Vec<Bump> },
}

impl FieldPreset {
    #[inline]
    pub fn eval(&self, x: Point) -> f64 {
        match self {
            FieldPreset::Constant { value } => *value,
            FieldPreset::GaussianBump { base, amplitude, center, width } => {
                base + Bump { amplitude: *amplitude, center: *center, width: *width }.eval(x)
            }
            FieldPreset::Bumps { base, bumps } => base + bumps.iter().map(|b| b.eval(x)).sum::<f64>(),
        }
    }

    /// Closed-form `∫₀ᵗ f(x + s·dir) ds` for a unit vector `dir`.
    pub fn line_integral(&self, x: Point, dir: Point, t: f64) -> f64 {
        match self {
            FieldPreset::Constant { value } => value * t,
            FieldPreset::GaussianBump { base, amplitude, center, width } => {
                base * t + Bump { amplitude: *amplitude, center: *center, width: *width }.line_integral(x, dir, t)
            }
            FieldPreset::Bumps { base, bumps } => {
                base * t + bumps.iter().map(|b| b.line_integral(x, dir, t)).sum::<f64>()
            }
        }
    }

    pub fn constant_value(&self) -> Option<f64> {
        match self {
            FieldPreset::Constant { value } => Some(*value),
            FieldPreset::Bumps { base, bumps } if bumps.is_empty() => Some(*base),
            _ => None,
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        let widths_ok = match self {
            FieldPreset::Constant { .. } => true,
            FieldPreset::GaussianBump { width, .. } => *width > 0.0,
            FieldPreset::Bumps { bumps, .. } => bumps.iter().all(|b| b.width > 0.0),
        };
        if !widths_ok {
            return Err(Error::Config(format!("{name}: bump widths must be positive")));
        }
        Ok(())
    }

    /// The same field with `bump` added.
    pub fn perturbed(&self, bump: Bump) -> FieldPreset {
        let (base, mut bumps) = match self {
            FieldPreset::Constant { value } => (*value, vec![]),
            FieldPreset::GaussianBump { base, amplitude, center, width } => {
                (*base, vec![Bump { amplitude: *amplitude, center: *center, width: *width }])
            }
            FieldPreset::Bumps { base, bumps } => (*base, bumps.clone()),
        };
        bumps.push(bump);
        FieldPreset::Bumps { base, bumps }
    }
}

/// Scattering kernel `k(x,θ,θ′) = κ(x)·p(θ·θ′)` with `∫p dθ′ = 1`.
/// Depends on the directions only through their angle, so reciprocity
/// `k(x,θ,θ′) = k(x,−θ′,−θ)` holds by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelPreset {
    Isotropic { kappa: FieldPreset },
    HenyeyGreenstein { kappa: FieldPreset, g: f64 },
}

impl KernelPreset {
    pub fn kappa(&self) -> &FieldPreset {
        match self {
            KernelPreset::Isotropic { kappa } | KernelPreset::HenyeyGreenstein { kappa, .. } => kappa,
        }
    }

    /// Angular profile as a function of `cos ψ`.
    #[inline]
    pub fn phase(&self, cos_psi: f64) -> f64 {
        match self {
            KernelPreset::Isotropic { .. } => 1.0 / (2.0 * PI),
            KernelPreset::HenyeyGreenstein { g, .. } => {
                (1.0 - g * g) / (2.0 * PI * (1.0 + g * g - 2.0 * g * cos_psi))
            }
        }
    }

    pub fn is_isotropic(&self) -> bool {
        matches!(self, KernelPreset::Isotropic { .. })
    }

    /// The same angular profile with scattering coefficient `kappa`.
    pub fn with_kappa(&self, kappa: FieldPreset) -> KernelPreset {
        match self {
            KernelPreset::Isotropic { .. } => KernelPreset::Isotropic { kappa },
            KernelPreset::HenyeyGreenstein { g, .. } => KernelPreset::HenyeyGreenstein { kappa, g: *g },
        }
    }

    fn validate(&self) -> Result<()> {
        self.kappa().validate("kappa")?;
        if let KernelPreset::HenyeyGreenstein { g, .. } = self {
            if !(g.abs() < 1.0) {
                return Err(Error::Config(format!("Henyey-Greenstein g must satisfy |g| < 1, got {g}")));
            }
        }
        Ok(())
    }

    pub fn scaled(&self, lambda: f64) -> KernelPreset {
        let scale = |f: &FieldPreset| match f {
            FieldPreset::Constant { value } => FieldPreset::Constant { value: value * lambda },
            FieldPreset::GaussianBump { base, amplitude, center, width } => FieldPreset::GaussianBump {
                base: base * lambda,
                amplitude: amplitude * lambda,
                center: *center,
                width: *width,
            },
            FieldPreset::Bumps { base, bumps } => FieldPreset::Bumps {
                base: base * lambda,
                bumps: bumps.iter().map(|b| Bump { amplitude: b.amplitude * lambda, ..*b }).collect(),
            },
        };
        match self {
            KernelPreset::Isotropic { kappa } => KernelPreset::Isotropic { kappa: scale(kappa) },
            KernelPreset::HenyeyGreenstein { kappa, g } => {
                KernelPreset::HenyeyGreenstein { kappa: scale(kappa), g: *g }
            }
        }
    }
}

/// Standing acoustic plane wave `1 + ε cos(q·x + φ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Modulation {
    pub epsilon: f64,
    pub q: Point,
    pub phi: f64,
}

impl Modulation {
    #[inline]
    pub fn factor(&self, x: Point) -> f64 {
        1.0 + self.epsilon * (dot(self.q, x) + self.phi).cos()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Medium {
    sigma: FieldPreset,
    kernel: KernelPreset,
    modulation: Option<Modulation>,
}

impl Medium {
    pub fn new(sigma: FieldPreset, kernel: KernelPreset) -> Result<Self> {
        sigma.validate("sigma")?;
        kernel.validate()?;
        Ok(Self { sigma, kernel, modulation: None })
    }

    /// `σ ≡ sigma`, isotropic `κ ≡ kappa`.
    pub fn constant(sigma: f64, kappa: f64) -> Self {
        Self {
            sigma: FieldPreset::Constant { value: sigma },
            kernel: KernelPreset::Isotropic { kappa: FieldPreset::Constant { value: kappa } },
            modulation: None,
        }
    }

    pub fn sigma_preset(&self) -> &FieldPreset {
        &self.sigma
    }

    pub fn kernel_preset(&self) -> &KernelPreset {
        &self.kernel
    }

    pub fn modulation(&self) -> Option<Modulation> {
        self.modulation
    }

    /// The same coefficients without acoustic modulation.
    pub fn unmodulated(&self) -> Medium {
        Medium { modulation: None, ..self.clone() }
    }

    #[inline]
    fn mod_factor(&self, x: Point) -> f64 {
        self.modulation.map_or(1.0, |m| m.factor(x))
    }

    #[inline]
    pub fn sigma(&self, x: Point) -> f64 {
        self.sigma.eval(x) * self.mod_factor(x)
    }

    /// Total scattering strength `κ(x) = ∫k(x,θ,θ′)dθ′`.
    #[inline]
    pub fn kappa(&self, x: Point) -> f64 {
        self.kernel.kappa().eval(x) * self.mod_factor(x)
    }

    #[inline]
    pub fn phase(&self, cos_psi: f64) -> f64 {
        self.kernel.phase(cos_psi)
    }

    #[inline]
    pub fn k(&self, x: Point, theta: Point, theta_prime: Point) -> f64 {
        self.kappa(x) * self.phase(dot(theta, theta_prime))
    }

    /// Constant attenuation value when σ is spatially uniform.
    pub fn constant_sigma(&self) -> Option<f64> {
        if self.modulation.is_some() {
            return None;
        }
        self.sigma.constant_value()
    }

    pub fn has_scattering(&self) -> bool {
        match self.kernel.kappa() {
            FieldPreset::Constant { value } => *value != 0.0,
            FieldPreset::GaussianBump { base, amplitude, .. } => *base != 0.0 || *amplitude != 0.0,
            FieldPreset::Bumps { base, bumps } => *base != 0.0 || bumps.iter().any(|b| b.amplitude != 0.0),
        }
    }

    /// Panel length for Gauss–Legendre line integrals of σ.
    fn panel_length(&self) -> f64 {
        let base: f64 = 0.05;
        match self.modulation {
            Some(m) if norm(m.q) > 0.0 => base.min(2.0 * PI / norm(m.q) / 8.0),
            _ => base,
        }
    }

    /// `∫₀ᵗ σ(x + s·dir) ds` with no range checks.
    pub fn line_integral(&self, x: Point, dir: Point, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        if let Some(c) = self.constant_sigma() {
            return c * t;
        }
        if self.modulation.is_none() {
            return self.sigma.line_integral(x, dir, t);
        }
        gauss_legendre(|s| self.sigma(add_scaled(x, s, dir)), t, self.panel_length())
    }

    pub fn with_sigma(&self, sigma: FieldPreset) -> Result<Medium> {
        sigma.validate("sigma")?;
        Ok(Medium { sigma, ..self.clone() })
    }

    pub fn with_kernel(&self, kernel: KernelPreset) -> Result<Medium> {
        kernel.validate()?;
        Ok(Medium { kernel, ..self.clone() })
    }
}

const GL4_NODES: [f64; 4] = [-0.861_136_311_594_052_6, -0.339_981_043_584_856_3, 0.339_981_043_584_856_3, 0.861_136_311_594_052_6];
const GL4_WEIGHTS: [f64; 4] = [0.347_854_845_137_453_9, 0.652_145_154_862_546_1, 0.652_145_154_862_546_1, 0.347_854_845_137_453_9];

/// Composite 4-point Gauss–Legendre on `[0, t]`.
pub(crate) fn gauss_legendre(f: impl Fn(f64) -> f64, t: f64, panel: f64) -> f64 {
    let n = (t / panel).ceil().max(1.0) as usize;
    let h = t / n as f64;
    let mut acc = 0.0;
    for p in 0..n {
        let mid = (p as f64 + 0.5) * h;
        for k in 0..4 {
            acc += GL4_WEIGHTS[k] * f(mid + 0.5 * h * GL4_NODES[k]);
        }
    }
    0.5 * h * acc
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Absorption,
    Smallness,
    Both,
    Neither,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdmissibilityReport {
    pub rho: f64,
    pub tau: f64,
    pub tau_rho: f64,
    pub sigma_min: f64,
    /// `inf(σ − ρ)`.
    pub alpha: f64,
    pub condition_met: Condition,
    /// Upper bound on `‖K‖_∞`: `ρ·min(τ, 1/inf σ)`.
    pub contraction_estimate: f64,
}

impl AdmissibilityReport {
    pub fn describe_failure(&self) -> String {
        format!(
            "absorption: inf(σ − ρ) = {:.4} ≤ 0; smallness: τρ = {:.4} ≥ 1",
            self.alpha, self.tau_rho
        )
    }
}

/// `ρ = sup_{x,θ} ∫|k(x,θ,θ′)|dθ′` over the grid samples.
pub fn rho(medium: &Medium, directions: &DirectionGrid, space: &SpatialGrid) -> f64 {
    let n = directions.len();
    let w = directions.weight();
    let angular = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| medium.phase(dot(directions.dir(i), directions.dir(j))).abs() * w)
                .sum::<f64>()
        })
        .fold(0.0, f64::max);
    let kappa_max = space
        .eval_positions()
        .iter()
        .map(|&x| medium.kappa(x).abs())
        .fold(0.0, f64::max);
    kappa_max * angular
}

pub fn check_admissibility(
    medium: &Medium,
    domain: &Domain,
    directions: &DirectionGrid,
    space: &SpatialGrid,
) -> Result<AdmissibilityReport> {
    let report = admissibility(medium, domain, directions, space);
    if report.condition_met == Condition::Neither {
        return Err(Error::Inadmissible(report.describe_failure()));
    }
    Ok(report)
}

/// Same as [`check_admissibility`] but never fails.
pub fn admissibility(
    medium: &Medium,
    domain: &Domain,
    directions: &DirectionGrid,
    space: &SpatialGrid,
) -> AdmissibilityReport {
    let rho = rho(medium, directions, space);
    let tau = domain.diameter();
    let sigma_min = space.eval_positions().iter().map(|&x| medium.sigma(x)).fold(f64::INFINITY, f64::min);
    let alpha = sigma_min - rho;
    let tau_rho = tau * rho;
    let absorption = alpha > 0.0;
    let smallness = tau_rho < 1.0;
    let condition_met = match (absorption, smallness) {
        (true, true) => Condition::Both,
        (true, false) => Condition::Absorption,
        (false, true) => Condition::Smallness,
        (false, false) => Condition::Neither,
    };
    let reach = if sigma_min > 0.0 { tau.min(1.0 / sigma_min) } else { tau };
    AdmissibilityReport {
        rho,
        tau,
        tau_rho,
        sigma_min,
        alpha,
        condition_met,
        contraction_estimate: rho * reach,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    /// `∫₀ᵗ σ(x − sθ) ds`, towards Γ₋.
    Backward,
    /// `∫₀ᵗ σ(x + sθ) ds`, towards Γ₊.
    Forward,
}

pub fn optical_depth(
    medium: &Medium,
    domain: &Domain,
    x: Point,
    theta: Point,
    t: f64,
    orientation: Orientation,
) -> Result<f64> {
    let (side, dir) = match orientation {
        Orientation::Backward => (Side::Minus, [-theta[0], -theta[1]]),
        Orientation::Forward => (Side::Plus, theta),
    };
    let reach = crate::geometry::exit_time(domain, x, theta, side)?;
    if !(t >= 0.0 && t <= reach * (1.0 + 1e-12) + 1e-15) {
        return Err(Error::arg(format!("path length {t} outside [0, {reach}]")));
    }
    Ok(medium.line_integral(x, dir, t))
}

/// Multiplies σ and k by `1 + ε cos(q·x + φ)`.
///
/// `base` is the admissibility report of the unmodulated medium; the
/// modulated medium is accepted when the worst-case scaled coefficients
/// still satisfy one of the two conditions.
pub fn modulate(medium: &Medium, epsilon: f64, q: Point, phi: f64, base: &AdmissibilityReport) -> Result<Medium> {
    if !(epsilon > 0.0 && epsilon <= MAX_EPSILON) {
        return Err(Error::arg(format!("modulation amplitude must lie in (0, {MAX_EPSILON}], got {epsilon}")));
    }
    if medium.modulation.is_some() {
        return Err(Error::arg("medium is already modulated"));
    }
    let smallness = (1.0 + epsilon) * base.tau_rho < 1.0;
    let absorption = (1.0 - epsilon) * base.sigma_min - (1.0 + epsilon) * base.rho > 0.0;
    if !smallness && !absorption {
        return Err(Error::Inadmissible(format!(
            "modulated medium (ε = {epsilon}): (1+ε)τρ = {:.4} >= 1 and (1−ε)inf σ − (1+ε)ρ = {:.4} <= 0",
            (1.0 + epsilon) * base.tau_rho,
            (1.0 - epsilon) * base.sigma_min - (1.0 + epsilon) * base.rho
        )));
    }
    Ok(Medium { modulation: Some(Modulation { epsilon, q, phi }), ..medium.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{unit, DirectionGrid, SpatialGrid};
    use approx::assert_abs_diff_eq;

    fn grids(n_theta: usize, n_x: usize) -> (Domain, DirectionGrid, SpatialGrid) {
        let d = Domain::unit_disk();
        (d, DirectionGrid::new(n_theta).unwrap(), SpatialGrid::new(&d, n_x).unwrap())
    }

    #[test]
    fn rho_examples() {
        let (_, dirs, space) = grids(32, 16);
        assert_abs_diff_eq!(rho(&Medium::constant(1.0, 0.3), &dirs, &space), 0.3, epsilon = 1e-10);
        assert_eq!(rho(&Medium::constant(1.0, 0.0), &dirs, &space), 0.0);
        let hg = Medium::new(
            FieldPreset::Constant { value: 1.0 },
            KernelPreset::HenyeyGreenstein { kappa: FieldPreset::Constant { value: 0.3 }, g: 0.5 },
        )
        .unwrap();
        assert_abs_diff_eq!(rho(&hg, &dirs, &space), 0.3, epsilon = 1e-6);
    }

    #[test]
    fn hg_normalisation_dense_oracle() {
        let kernel = KernelPreset::HenyeyGreenstein { kappa: FieldPreset::Constant { value: 1.0 }, g: 0.5 };
        // dense midpoint rule, independent of the direction grid
        let n = 200_000;
        let s: f64 = (0..n)
            .map(|i| kernel.phase(((i as f64 + 0.5) * 2.0 * PI / n as f64).cos()) * 2.0 * PI / n as f64)
            .sum();
        assert_abs_diff_eq!(s, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn rho_scales_linearly() {
        let (_, dirs, space) = grids(16, 8);
        let m = Medium::new(
            FieldPreset::Constant { value: 1.0 },
            KernelPreset::HenyeyGreenstein {
                kappa: FieldPreset::GaussianBump { base: 0.2, amplitude: 0.1, center: [0.0, 0.0], width: 0.1 },
                g: 0.3,
            },
        )
        .unwrap();
        let r1 = rho(&m, &dirs, &space);
        let m2 = m.with_kernel(m.kernel_preset().scaled(2.5)).unwrap();
        assert_abs_diff_eq!(rho(&m2, &dirs, &space), 2.5 * r1, epsilon = 1e-12);
    }

    #[test]
    fn admissibility_examples() {
        let (d, dirs, space) = grids(16, 8);
        let r = check_admissibility(&Medium::constant(0.5, 0.3), &d, &dirs, &space).unwrap();
        assert_abs_diff_eq!(r.tau_rho, 0.6, epsilon = 1e-10);
        assert_abs_diff_eq!(r.alpha, 0.2, epsilon = 1e-10);
        assert_eq!(r.condition_met, Condition::Both);

        let err = check_admissibility(&Medium::constant(0.1, 0.6), &d, &dirs, &space).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("absorption") && msg.contains("smallness") && msg.contains("1.2"), "{msg}");
        let r = admissibility(&Medium::constant(0.1, 0.6), &d, &dirs, &space);
        assert_abs_diff_eq!(r.alpha, -0.5, epsilon = 1e-10);

        let r = check_admissibility(&Medium::constant(0.0, 0.4), &d, &dirs, &space).unwrap();
        assert_abs_diff_eq!(r.tau_rho, 0.8, epsilon = 1e-10);
        assert_eq!(r.condition_met, Condition::Smallness);
    }

    #[test]
    fn optical_depth_examples() {
        let d = Domain::unit_disk();
        let m = Medium::constant(0.5, 0.3);
        let od = optical_depth(&m, &d, [0.5, 0.0], [1.0, 0.0], 1.5, Orientation::Backward).unwrap();
        assert_abs_diff_eq!(od, 0.75, epsilon = 1e-15);
        let zero = Medium::constant(0.0, 0.3);
        assert_eq!(optical_depth(&zero, &d, [0.1, 0.2], unit(1.0), 0.4, Orientation::Forward).unwrap(), 0.0);
        assert!(optical_depth(&m, &d, [0.5, 0.0], [1.0, 0.0], 0.6, Orientation::Forward).is_err());
    }

    #[test]
    fn optical_depth_gaussian_against_richardson_oracle() {
        let d = Domain::unit_disk();
        let sigma = FieldPreset::GaussianBump { base: 0.6, amplitude: 0.2, center: [0.0, 0.0], width: 0.1 };
        let m = Medium::new(sigma.clone(), KernelPreset::Isotropic { kappa: FieldPreset::Constant { value: 0.3 } })
            .unwrap();
        // backward from the origin along θ = (1,0): σ(−s, 0) for s ∈ [0,1]
        let trap = |n: usize| {
            let h = 1.0 / n as f64;
            let f = |s: f64| sigma.eval([-s, 0.0]);
            h * (0.5 * f(0.0) + (1..n).map(|i| f(i as f64 * h)).sum::<f64>() + 0.5 * f(1.0))
        };
        let oracle = (4.0 * trap(40_000) - trap(20_000)) / 3.0;
        let od = optical_depth(&m, &d, [0.0, 0.0], [1.0, 0.0], 1.0, Orientation::Backward).unwrap();
        assert_abs_diff_eq!(od, oracle, epsilon = 1e-8);
    }

    #[test]
    fn analytic_line_integral_matches_panels() {
        let sigma = FieldPreset::Bumps {
            base: 0.4,
            bumps: vec![
                Bump { amplitude: 0.3, center: [0.2, -0.1], width: 0.05 },
                Bump { amplitude: -0.1, center: [-0.4, 0.3], width: 0.2 },
            ],
        };
        for (x, a, t) in [([0.1, 0.2], 0.3, 0.9), ([-0.5, -0.5], 2.0, 1.2), ([0.0, 0.0], 4.0, 0.01)] {
            let dir = unit(a);
            let panels = gauss_legendre(|s| sigma.eval(add_scaled(x, s, dir)), t, 0.01);
            assert_abs_diff_eq!(sigma.line_integral(x, dir, t), panels, epsilon = 1e-12);
        }
    }

    #[test]
    fn modulation_examples() {
        let (d, dirs, space) = grids(16, 8);
        let m = Medium::constant(0.5, 0.3);
        let rep = check_admissibility(&m, &d, &dirs, &space).unwrap();
        let mm = modulate(&m, 0.1, [PI, 0.0], 0.0, &rep).unwrap();
        assert_abs_diff_eq!(mm.sigma([1.0, 0.0]), 0.45, epsilon = 1e-15);
        let flat = modulate(&m, 0.1, [0.0, 0.0], 0.0, &rep).unwrap();
        assert_abs_diff_eq!(flat.sigma([0.3, -0.2]), 0.55, epsilon = 1e-15);
        assert_abs_diff_eq!(flat.kappa([0.3, -0.2]), 0.33, epsilon = 1e-15);
        let tiny = modulate(&m, 1e-14, [3.0, 1.0], 0.7, &rep).unwrap();
        assert_abs_diff_eq!(tiny.sigma([0.2, 0.1]), 0.5, epsilon = 1e-13);
        assert!(modulate(&m, 0.0, [1.0, 0.0], 0.0, &rep).is_err());
        assert!(modulate(&m, 0.3, [1.0, 0.0], 0.0, &rep).is_err());
        // τρ = 0.96: (1 + 0.1)·0.96 >= 1 and no absorption margin
        let tight = Medium::constant(0.2, 0.48);
        let rep = check_admissibility(&tight, &d, &dirs, &space).unwrap();
        assert!(matches!(modulate(&tight, 0.1, [1.0, 0.0], 0.0, &rep), Err(Error::Inadmissible(_))));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn reciprocity(x0 in -0.7f64..0.7, x1 in -0.7f64..0.7, a in 0.0f64..6.3, b in 0.0f64..6.3, g in -0.9f64..0.9) {
                let m = Medium::new(
                    FieldPreset::Constant { value: 1.0 },
                    KernelPreset::HenyeyGreenstein {
                        kappa: FieldPreset::GaussianBump { base: 0.2, amplitude: 0.1, center: [0.1, 0.0], width: 0.2 },
                        g,
                    },
                ).unwrap();
                let (t, tp) = (unit(a), unit(b));
                let lhs = m.k([x0, x1], t, tp);
                let rhs = m.k([x0, x1], [-tp[0], -tp[1]], [-t[0], -t[1]]);
                prop_assert!((lhs - rhs).abs() <= 1e-15 * lhs.abs().max(1.0));
            }

            #[test]
            fn modulation_consistency(x0 in -1.0f64..1.0, x1 in -1.0f64..1.0, eps in 0.001f64..0.2, q0 in -40.0f64..40.0, phi in 0.0f64..6.3) {
                let base = Medium::new(
                    FieldPreset::GaussianBump { base: 0.6, amplitude: 0.2, center: [0.0, 0.0], width: 0.1 },
                    KernelPreset::Isotropic { kappa: FieldPreset::Constant { value: 0.3 } },
                ).unwrap();
                let rep = AdmissibilityReport { rho: 0.3, tau: 2.0, tau_rho: 0.6, sigma_min: 0.6, alpha: 0.3, condition_met: Condition::Both, contraction_estimate: 0.5 };
                let m = modulate(&base, eps, [q0, 1.0], phi, &rep).unwrap();
                let x = [x0, x1];
                let expect = (1.0 + eps * (q0 * x0 + x1 + phi).cos()) * base.sigma(x);
                prop_assert!((m.sigma(x) - expect).abs() <= 1e-15);
            }
        }
    }
}
