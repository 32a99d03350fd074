//! Scenario-driven command-line front end.
//!
//! Every subcommand loads a TOML scenario, writes its tables as CSV into the
//! output directory and finishes with `manifest.json`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::functional::{fourier_points, oracle_h_at, recover_h_fourier, Campaign, Route, FIELD_HEADER};
use crate::recon::{recover_k, recover_sigma, run_convergence_study, run_stability_study, StudyKind};
use crate::table::Table;
use crate::transport::{albedo, Solver};

pub mod check;
pub mod config;

pub use config::{Loaded, Scenario, SourceSpec};

pub const FORWARD_HEADER: [&str; 4] = ["x1", "x2", "theta", "u"];
pub const ALBEDO_HEADER: [&str; 4] = ["b1", "b2", "theta", "albedo"];

/// Contraction allowance above `τρ` accepted by `check`.
pub const CONTRACTION_SLACK: f64 = 0.05;
/// Largest relative Green residual accepted by `check`.
pub const GREEN_TOLERANCE: f64 = 5e-4;
/// Largest relative duality defect accepted by `check`.
pub const DUALITY_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Parser)]
#[command(name = "rte-aot", version, about = "Acousto-optic inverse transport toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Scenario file (TOML).
    #[arg(long)]
    pub scenario: PathBuf,
    /// Output directory; overrides the scenario's `output_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads; defaults to the number of available cores.
    #[arg(long)]
    pub threads: Option<usize>,
    /// How internal functionals are evaluated.
    #[arg(long, value_enum, default_value_t = Route::Oracle)]
    pub route: Route,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Forward solution at the evaluation points, all grid directions.
    Forward(RunArgs),
    /// Outgoing boundary trace of the forward solution.
    Albedo(RunArgs),
    /// Modulated boundary measurements for every ε of the scenario.
    Measure(RunArgs),
    /// Internal functional through both routes.
    RecoverH(RunArgs),
    RecoverSigma(RunArgs),
    RecoverK(RunArgs),
    /// Convergence and stability tables.
    Study(RunArgs),
    /// Admissibility and invariant smoke checks.
    Check(RunArgs),
}

impl Command {
    pub fn args(&self) -> &RunArgs {
        match self {
            Command::Forward(a)
            | Command::Albedo(a)
            | Command::Measure(a)
            | Command::RecoverH(a)
            | Command::RecoverSigma(a)
            | Command::RecoverK(a)
            | Command::Study(a)
            | Command::Check(a) => a,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Command::Forward(_) => "forward",
            Command::Albedo(_) => "albedo",
            Command::Measure(_) => "measure",
            Command::RecoverH(_) => "recover-h",
            Command::RecoverSigma(_) => "recover-sigma",
            Command::RecoverK(_) => "recover-k",
            Command::Study(_) => "study",
            Command::Check(_) => "check",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

/// Reproducibility record written as `manifest.json`.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub scenario_hash: String,
    pub version: String,
    pub subcommand: String,
    pub route: Route,
    pub threads: usize,
    pub wall_clock_seconds: f64,
    pub timings: Vec<StageTiming>,
    pub admissibility: Value,
    pub diagnostics: BTreeMap<String, Value>,
    pub outputs: Vec<String>,
    /// Failure message when the subcommand did not succeed.
    pub error: Option<String>,
}

struct Run<'a> {
    loaded: &'a Loaded,
    out: PathBuf,
    route: Route,
    timings: Vec<StageTiming>,
    diagnostics: BTreeMap<String, Value>,
    outputs: Vec<String>,
}

impl Run<'_> {
    fn stage<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let t = Instant::now();
        let r = f()?;
        let seconds = t.elapsed().as_secs_f64();
        log::info!("{name}: {seconds:.2} s");
        self.timings.push(StageTiming { stage: name.to_string(), seconds });
        Ok(r)
    }

    fn write(&mut self, name: &str, table: &Table) -> Result<()> {
        table.write(&self.out.join(name))?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    fn record(&mut self, key: &str, value: impl Serialize) {
        self.diagnostics.insert(key.to_string(), serde_json::to_value(value).unwrap_or(Value::Null));
    }
}

/// Parses arguments, runs the subcommand and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli.command) {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs one subcommand and returns the manifest it wrote.
pub fn run(command: &Command) -> Result<RunManifest> {
    let args = command.args();
    if let Some(n) = args.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be positive".into()));
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("thread pool already initialised: {e}");
        }
    }
    let start = Instant::now();
    let loaded = Loaded::from_path(&args.scenario)?;
    let out = args.out.clone().unwrap_or_else(|| loaded.scenario.output_dir.clone());
    std::fs::create_dir_all(&out)?;
    let mut run = Run {
        loaded: &loaded,
        out,
        route: args.route,
        timings: Vec::new(),
        diagnostics: BTreeMap::new(),
        outputs: Vec::new(),
    };
    let outcome = match command {
        Command::Forward(_) => forward(&mut run),
        Command::Albedo(_) => albedo_trace(&mut run),
        Command::Measure(_) => measure(&mut run),
        Command::RecoverH(_) => recover_h(&mut run),
        Command::RecoverSigma(_) => sigma(&mut run),
        Command::RecoverK(_) => kernel(&mut run),
        Command::Study(_) => study(&mut run),
        Command::Check(_) => smoke_check(&mut run),
    };
    let manifest = RunManifest {
        scenario_hash: loaded.hash.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        subcommand: command.name().to_string(),
        route: run.route,
        threads: rayon::current_num_threads(),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        timings: run.timings,
        admissibility: serde_json::to_value(loaded.admissibility).unwrap_or(Value::Null),
        diagnostics: run.diagnostics,
        outputs: run.outputs,
        error: outcome.as_ref().err().map(ToString::to_string),
    };
    write_manifest(&run.out, &manifest)?;
    outcome.map(|_| manifest)
}

fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    std::fs::write(dir.join("manifest.json"), text + "\n")?;
    Ok(())
}

fn solver<'a>(l: &'a Loaded) -> Result<Solver<'a>> {
    Solver::new(&l.medium, &l.grids, l.options)
}

fn forward(run: &mut Run) -> Result<()> {
    let l = run.loaded;
    let s = solver(l)?;
    let f = l.scenario.experiment.f.build()?;
    let u = run.stage("solve_forward", || s.solve_forward(&f))?;
    let dirs = &l.grids.directions;
    let mut t = Table::new(&FORWARD_HEADER);
    for &x in &l.scenario.experiment.points {
        for i in 0..dirs.len() {
            let a = dirs.angle(i);
            t.push(vec![x[0], x[1], a, u.value(x, a)]);
        }
    }
    run.record("solve", u.diagnostics());
    run.write("forward.csv", &t)
}

fn albedo_trace(run: &mut Run) -> Result<()> {
    let l = run.loaded;
    let s = solver(l)?;
    let f = l.scenario.experiment.f.build()?;
    let u = run.stage("solve_forward", || s.solve_forward(&f))?;
    let trace = albedo(&u);
    let (dirs, b) = (&l.grids.directions, &l.grids.boundary);
    let mut t = Table::new(&ALBEDO_HEADER);
    for i in 0..dirs.len() {
        for k in 0..b.len() {
            if crate::geometry::dot(b.normal(k), dirs.dir(i)) > 0.0 {
                let p = b.point(k);
                t.push(vec![p[0], p[1], dirs.angle(i), trace.at(i, k)]);
            }
        }
    }
    run.record("solve", u.diagnostics());
    run.write("albedo.csv", &t)
}

fn measure(run: &mut Run) -> Result<()> {
    let l = run.loaded;
    let s = solver(l)?;
    let e = &l.scenario.experiment;
    let (f, g) = (e.f.build()?, e.g.build()?);
    let campaign = run.stage("baseline", || Campaign::new(&s, &f, &g))?;
    let sets = run.stage("measurements", || campaign.measure_all(&e.epsilon, l.scenario.grid.n_q))?;
    let mut all = Table::new(&crate::functional::MEASUREMENT_HEADER);
    for set in &sets {
        all.rows.extend(set.to_table().rows);
    }
    run.record("baseline", campaign.baseline());
    run.record("measurement_count", all.rows.len());
    run.write("measurements.csv", &all)
}

fn recover_h(run: &mut Run) -> Result<()> {
    let l = run.loaded;
    let s = solver(l)?;
    let e = &l.scenario.experiment;
    let (f, g) = (e.f.build()?, e.g.build()?);
    let n_q = l.scenario.grid.n_q;
    let points = fourier_points(&l.grids, n_q);
    let oracle = run.stage("oracle", || {
        let u = s.solve_forward(&f)?;
        let v = s.solve_adjoint(&g)?;
        Ok(oracle_h_at(&u, &v, &points))
    })?;
    let campaign = run.stage("baseline", || Campaign::new(&s, &f, &g))?;
    let sets = run.stage("measurements", || campaign.measure_all(&e.epsilon, n_q))?;
    let mut norms = Vec::new();
    let mut finest: Option<(f64, Table)> = None;
    for set in &sets {
        let h = recover_h_fourier(set, &l.grids)?;
        norms.push(json!({
            "epsilon": set.epsilon,
            "relative_l2": h.relative_l2(&oracle)?,
            "sup_distance": h.sup_distance(&oracle)?,
        }));
        if finest.as_ref().is_none_or(|(eps, _)| set.epsilon < *eps) {
            finest = Some((set.epsilon, h.to_table()));
        }
    }
    run.record("oracle_sup", oracle.sup_norm());
    run.record("differences", norms);
    run.write("h_oracle.csv", &oracle.to_table())?;
    let (_, table) = finest.expect("epsilon list is non-empty");
    debug_assert_eq!(table.header, FIELD_HEADER);
    run.write("h_fourier.csv", &table)
}

fn sigma(run: &mut Run) -> Result<()> {
    let l = run.loaded;
    let s = solver(l)?;
    let e = &l.scenario.experiment;
    let h = l.scenario.finest_h();
    let route = run.route;
    let r = run.stage("recover_sigma", || recover_sigma(&s, e.theta0, h, &e.points, route, l.scenario.fourier()))?;
    run.record("h", h);
    run.record("max_rel_err", r.max_relative_error());
    run.record("flagged", &r.flagged);
    run.write("sigma.csv", &r.to_table())
}

fn kernel(run: &mut Run) -> Result<()> {
    let l = run.loaded;
    let s = solver(l)?;
    let e = &l.scenario.experiment;
    let h = l.scenario.finest_h();
    let route = run.route;
    let r = run.stage("recover_k", || recover_k(&s, &l.medium, &e.kernel_samples, h, route, l.scenario.fourier()))?;
    run.record("h", h);
    run.record("max_rel_err", r.max_relative_error());
    run.write("kernel.csv", &r.to_table())
}

fn kind_name(kind: StudyKind) -> Value {
    serde_json::to_value(kind).unwrap_or(Value::Null)
}

fn study(run: &mut Run) -> Result<()> {
    let l = run.loaded;
    let e = &l.scenario.experiment;
    let setup = l.study_setup()?;
    let mut summary = Vec::new();
    for &kind in &e.studies {
        let params = if kind == StudyKind::Epsilon { &e.epsilon } else { &e.h };
        let label = kind_name(kind);
        let label = label.as_str().unwrap_or("study").to_string();
        let studies = run.stage(&format!("study_{label}"), || run_convergence_study(kind, params, &setup))?;
        for st in &studies {
            summary.push(json!({ "kind": label, "name": st.name, "errors": st.errors(), "ratios": st.ratios() }));
            run.write(&format!("study_{label}_{}.csv", st.name), &st.to_table())?;
        }
    }
    let stability = run.stage("stability", || run_stability_study(&e.deltas, e.perturbation, &setup))?;
    run.record("convergence", summary);
    run.record("stability", &stability);
    run.write("stability_sigma.csv", &stability.sigma_table())?;
    run.write("stability_kernel.csv", &stability.kernel_table())
}

fn smoke_check(run: &mut Run) -> Result<()> {
    let l = run.loaded;
    let s = solver(l)?;
    let e = &l.scenario.experiment;
    let f = e.f.build()?;
    let g = e.g.build()?;
    let u = run.stage("solve_forward", || s.solve_forward(&f))?;
    let d = u.diagnostics().clone();
    let bound = l.admissibility.tau_rho.min(l.admissibility.contraction_estimate) + CONTRACTION_SLACK;
    let green = run.stage("green_identity", || check::green_residual(&s, &f, &g))?;
    let duality = run.stage("duality", || Ok(check::duality_defects(&s, l.scenario.seed, 5)))?;
    let worst_duality = duality.iter().cloned().fold(0.0, f64::max);
    run.record("contraction_observed", d.contraction_observed);
    run.record("contraction_bound", bound);
    run.record("terms_used", d.terms_used);
    run.record("tail_bound", d.tail_bound);
    run.record("green_identity", green);
    run.record("duality_defects", &duality);
    let mut failures = Vec::new();
    if d.contraction_observed > bound {
        failures.push(format!("contraction {:.4} exceeds {bound:.4}", d.contraction_observed));
    }
    if d.tail_warning {
        failures.push(format!("series tail bound {:.3e} above tolerance", d.tail_bound));
    }
    if green.relative > GREEN_TOLERANCE {
        failures.push(format!("Green residual {:.3e} exceeds {GREEN_TOLERANCE:.0e}", green.relative));
    }
    if worst_duality > DUALITY_TOLERANCE {
        failures.push(format!("duality defect {worst_duality:.3e} exceeds {DUALITY_TOLERANCE:.0e}"));
    }
    run.record("failures", &failures);
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Error::Check(failures.join("; ")))
    }
}
