//! TOML scenarios.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{build_grids, Domain, Grids, Point, Shape};
use crate::media::{check_admissibility, AdmissibilityReport, Bump, FieldPreset, KernelPreset, Medium, MAX_EPSILON};
use crate::recon::{make_f_h, make_g_h, FourierSettings, KernelSample, StudyKind, StudySetup};
use crate::transport::{BoundarySource, SolverOptions};

pub const MAX_N_THETA: usize = 1024;
pub const MAX_N_X: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MediumSpec {
    pub sigma: FieldPreset,
    pub kernel: KernelPreset,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub n_theta: usize,
    pub n_x: usize,
    pub n_b: usize,
    pub n_q: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { n_theta: 64, n_x: 96, n_b: 384, n_q: 32 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSpec {
    pub tol_series: f64,
    pub j_max: usize,
    pub max_step: Option<f64>,
    pub m_sub: usize,
}

impl Default for SolverSpec {
    fn default() -> Self {
        let d = SolverOptions::default();
        Self { tol_series: d.tol_series, j_max: d.j_max, max_step: d.max_step, m_sub: d.m_sub }
    }
}

/// Boundary data named in a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceSpec {
    Constant { value: f64 },
    Cosine { mean: f64, amplitude: f64, phase: f64 },
    /// `f_h` about `theta0`.
    Concentrated { theta0: f64, h: f64 },
    /// `g_h` about `theta1`, framed at `origin`.
    Oscillatory { theta1: f64, h: f64, origin: Point },
}

impl SourceSpec {
    pub fn build(&self) -> Result<BoundarySource> {
        Ok(match *self {
            SourceSpec::Constant { value } => BoundarySource::Constant(value),
            SourceSpec::Cosine { mean, amplitude, phase } => BoundarySource::Cosine { mean, amplitude, phase },
            SourceSpec::Concentrated { theta0, h } => make_f_h(theta0, h)?,
            SourceSpec::Oscillatory { theta1, h, origin } => make_g_h(theta1, h, origin)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    /// Cap half-widths, largest first.
    pub h: Vec<f64>,
    pub epsilon: Vec<f64>,
    pub theta0: f64,
    pub theta1: f64,
    pub frame_origin: Point,
    pub points: Vec<Point>,
    pub kernel_samples: Vec<KernelSample>,
    /// Forward data for `forward`, `albedo`, `measure` and `recover-h`.
    pub f: SourceSpec,
    /// Adjoint data for `measure` and `recover-h`.
    pub g: SourceSpec,
    pub studies: Vec<StudyKind>,
    pub deltas: Vec<f64>,
    /// Shape of the stability perturbation; its amplitude is scaled by each δ.
    pub perturbation: Bump,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        let grid = [-0.4, 0.0, 0.4];
        Self {
            h: vec![0.08, 0.04, 0.02],
            epsilon: vec![0.05],
            theta0: 0.3,
            theta1: PI / 2.0,
            frame_origin: [0.0, 0.0],
            points: grid.iter().flat_map(|&a| grid.map(|b| [a, b])).collect(),
            kernel_samples: [PI / 3.0, PI / 2.0, 2.0 * PI / 3.0]
                .iter()
                .map(|&d| KernelSample { x: [0.0, 0.0], theta1: 0.2, theta2: 0.2 + d })
                .collect(),
            f: SourceSpec::Cosine { mean: 1.0, amplitude: 0.5, phase: 0.3 },
            g: SourceSpec::Cosine { mean: 1.0, amplitude: 0.5, phase: 1.4 },
            studies: vec![StudyKind::Ballistic, StudyKind::Oscillatory, StudyKind::Sigma, StudyKind::Kernel],
            deltas: vec![0.02, 0.04],
            perturbation: Bump { amplitude: 1.0, center: [0.1, -0.1], width: 0.1 },
        }
    }
}

fn unit_disk_shape() -> Shape {
    Shape::Disk { center: [0.0, 0.0], radius: 1.0 }
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "unit_disk_shape")]
    pub domain: Shape,
    pub medium: MediumSpec,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub experiment: ExperimentSpec,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Seed of the randomised fields used by `check`.
    #[serde(default)]
    pub seed: u64,
}

/// A validated scenario with its built objects.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub scenario: Scenario,
    /// SHA-256 of the scenario file bytes.
    pub hash: String,
    pub medium: Medium,
    pub grids: Grids,
    pub options: SolverOptions,
    pub admissibility: AdmissibilityReport,
}

fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| config(e.to_string()))
    }

    pub fn options(&self) -> SolverOptions {
        SolverOptions {
            tol_series: self.solver.tol_series,
            j_max: self.solver.j_max,
            max_step: self.solver.max_step,
            m_sub: self.solver.m_sub,
        }
    }

    /// Checks list contents and grid bounds.
    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        if !(4..=MAX_N_THETA).contains(&g.n_theta) {
            return Err(config(format!("n_theta must lie in [4, {MAX_N_THETA}], got {}", g.n_theta)));
        }
        if !(2..=MAX_N_X).contains(&g.n_x) {
            return Err(config(format!("n_x must lie in [2, {MAX_N_X}], got {}", g.n_x)));
        }
        if g.n_b < 8 {
            return Err(config(format!("n_b must be at least 8, got {}", g.n_b)));
        }
        if g.n_q < 2 || !g.n_q.is_multiple_of(2) {
            return Err(config(format!("n_q must be even and at least 2, got {}", g.n_q)));
        }
        let e = &self.experiment;
        for (name, empty) in [
            ("h", e.h.is_empty()),
            ("epsilon", e.epsilon.is_empty()),
            ("points", e.points.is_empty()),
            ("kernel_samples", e.kernel_samples.is_empty()),
            ("studies", e.studies.is_empty()),
            ("deltas", e.deltas.is_empty()),
        ] {
            if empty {
                return Err(config(format!("experiment.{name} must not be empty")));
            }
        }
        if let Some(&h) = e.h.iter().find(|&&h| !(h > 0.0 && h < PI / 4.0)) {
            return Err(config(format!("experiment.h values must lie in (0, π/4), got {h}")));
        }
        if let Some(&eps) = e.epsilon.iter().find(|&&v| !(v > 0.0 && v <= MAX_EPSILON)) {
            return Err(config(format!("experiment.epsilon values must lie in (0, {MAX_EPSILON}], got {eps}")));
        }
        if let Some(&d) = e.deltas.iter().find(|&&d| !(d >= 0.0 && d.is_finite())) {
            return Err(config(format!("experiment.deltas must be non-negative, got {d}")));
        }
        e.f.build()?;
        e.g.build()?;
        Ok(())
    }

    /// Smallest `h` of the list.
    pub fn finest_h(&self) -> f64 {
        self.experiment.h.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn fourier(&self) -> FourierSettings {
        let eps = self.experiment.epsilon.iter().cloned().fold(f64::INFINITY, f64::min);
        FourierSettings { n_q: self.grid.n_q, epsilon: eps }
    }
}

impl Loaded {
    /// Parses scenario text and validates it, medium admissibility included.
    pub fn from_text(text: &str) -> Result<Self> {
        let scenario = Scenario::parse(text)?;
        scenario.validate()?;
        let domain = Domain::new(scenario.domain).map_err(|e| config(e.to_string()))?;
        let medium = Medium::new(scenario.medium.sigma.clone(), scenario.medium.kernel.clone())
            .map_err(|e| config(e.to_string()))?;
        let g = scenario.grid;
        let grids = build_grids(&domain, g.n_theta, g.n_x, g.n_b).map_err(|e| config(e.to_string()))?;
        let options = scenario.options();
        options.validate().map_err(|e| config(e.to_string()))?;
        let admissibility = check_admissibility(&medium, &grids.domain, &grids.directions, &grids.space)?;
        let hash = Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect();
        Ok(Self { scenario, hash, medium, grids, options, admissibility })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config(format!("cannot read scenario {}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    pub fn study_setup(&self) -> Result<StudySetup<'_>> {
        let e = &self.scenario.experiment;
        Ok(StudySetup {
            medium: &self.medium,
            grids: &self.grids,
            options: self.options,
            theta0: e.theta0,
            theta1: e.theta1,
            frame_origin: e.frame_origin,
            points: e.points.clone(),
            kernel_samples: e.kernel_samples.clone(),
            h: self.scenario.finest_h(),
            fourier: self.scenario.fourier(),
            f: e.f.build()?,
            g: e.g.build()?,
        })
    }
}
