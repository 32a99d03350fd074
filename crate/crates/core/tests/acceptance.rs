//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rte_aot::cli::check::{duality_defects, green_residual};
use rte_aot::cli::Loaded;
use rte_aot::functional::boundary_pairing;
use rte_aot::geometry::build_grids;
use rte_aot::media::KernelPreset;
use rte_aot::recon::{
    epsilon_errors, log_log_slope, recover_k, recover_sigma, run_convergence_study, run_stability_study, StudyKind,
};
use rte_aot::transport::{BoundarySource, Solver};

struct Outcome {
    pass: bool,
    detail: String,
}

type Criterion = (&'static str, fn() -> Outcome);

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn reference() -> Loaded {
    Loaded::from_path(&manifest_dir().join("scenarios/reference.toml")).expect("reference scenario loads")
}

fn cosine(phase: f64) -> BoundarySource {
    BoundarySource::Cosine { mean: 1.0, amplitude: 0.5, phase }
}

fn within(values: &[f64], lo: f64, hi: f64) -> bool {
    values.iter().all(|v| (lo..=hi).contains(v))
}

fn strictly_decreasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] < w[0])
}

fn spread(values: &[f64]) -> f64 {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (hi - lo) / lo.abs()
}

fn green_identity() -> Outcome {
    let l = reference();
    let mut residuals = Vec::new();
    for k in [1, 2] {
        let g = build_grids(&l.grids.domain, 64 * k, 96 * k, 384 * k).unwrap();
        let s = Solver::new(&l.medium, &g, l.options).unwrap();
        let u = s.solve_forward(&cosine(0.3)).unwrap();
        let v = s.solve_adjoint(&cosine(1.4)).unwrap();
        let (ut, vt) = (u.boundary_traces(), v.boundary_traces());
        let sup = |t: &[f64]| t.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        residuals.push(boundary_pairing(&g, &ut, &vt).unwrap().abs() / (sup(&ut) * sup(&vt)));
    }
    let hybrid = green_residual(&Solver::new(&l.medium, &l.grids, l.options).unwrap(), &cosine(0.3), &cosine(1.4))
        .unwrap()
        .relative;
    let reduction = residuals[0] / residuals[1];
    outcome(
        residuals[0] <= 5e-4 && reduction >= 2.0,
        format!(
            "relative residual {:.3e} (hybrid pairing {hybrid:.3e}), refined {:.3e}, reduction {reduction:.2}",
            residuals[0], residuals[1]
        ),
    )
}

fn duality() -> Outcome {
    let l = reference();
    let s = Solver::new(&l.medium, &l.grids, l.options).unwrap();
    let d = duality_defects(&s, l.scenario.seed, 5);
    let worst = d.iter().cloned().fold(0.0, f64::max);
    outcome(worst <= 1e-6, format!("worst relative defect {worst:.3e} over {} pairs", d.len()))
}

fn contraction() -> Outcome {
    let l = reference();
    let s = Solver::new(&l.medium, &l.grids, l.options).unwrap();
    let u = s.solve_forward(&cosine(0.3)).unwrap();
    let d = u.diagnostics();
    let bound = l.admissibility.tau_rho + 0.05;
    outcome(
        d.contraction_observed <= bound && d.tail_bound < 1e-6,
        format!(
            "contraction {:.4} (bound {bound:.2}), tail {:.3e}, {} terms",
            d.contraction_observed, d.tail_bound, d.terms_used
        ),
    )
}

fn ballistic() -> Outcome {
    let l = reference();
    let setup = l.study_setup().unwrap();
    let st = run_convergence_study(StudyKind::Ballistic, &l.scenario.experiment.h, &setup).unwrap().remove(0);
    let r = st.ratios();
    outcome(within(&r, 1.6, 2.4), format!("errors {:.4?}, ratios {r:.3?}", st.errors()))
}

fn oscillatory() -> Outcome {
    let l = reference();
    let setup = l.study_setup().unwrap();
    let studies = run_convergence_study(StudyKind::Oscillatory, &l.scenario.experiment.h, &setup).unwrap();
    let mut pass = true;
    let mut detail = Vec::new();
    for st in &studies {
        let r = st.ratios();
        let ok = if st.name == "sup" { within(&r, 0.8, 1.25) } else { r.iter().all(|&v| v > 2.0) };
        pass &= ok;
        detail.push(format!("{} ratios {r:.3?}", st.name));
    }
    outcome(pass, detail.join("; "))
}

fn functional_recovery() -> Outcome {
    let l = reference();
    let grids = build_grids(&l.grids.domain, 32, 32, 128).unwrap();
    let s = Solver::new(&l.medium, &grids, l.options).unwrap();
    let eps = [0.1, 0.05, 0.025];
    let e = epsilon_errors(&s, &cosine(0.3), &cosine(1.4), &eps, 32).unwrap();
    let slope = log_log_slope(&eps, &e.above_floor);
    outcome(
        (0.8..=1.2).contains(&slope) && e.raw[1] <= 0.1,
        format!(
            "raw {:.4?}, floor-subtracted {:.4?}, slope {slope:.3}, floor {:.4}",
            e.raw, e.above_floor, e.floor
        ),
    )
}

fn sigma_reconstruction() -> Outcome {
    let l = reference();
    let s = Solver::new(&l.medium, &l.grids, l.options).unwrap();
    let ex = &l.scenario.experiment;
    let runs: Vec<_> = ex
        .h
        .iter()
        .map(|&h| {
            recover_sigma(&s, ex.theta0, h, &ex.points, rte_aot::functional::Route::Oracle, l.scenario.fourier())
                .unwrap()
        })
        .collect();
    let errors: Vec<f64> = runs.iter().map(|r| r.max_relative_error()).collect();
    let flagged = runs.iter().any(|r| !r.flagged.is_empty());
    let n = runs[0].points.len();
    let (mut num, mut den) = (0.0f64, 0.0f64);
    for p in 0..n {
        num = num.max(spread(&runs.iter().map(|r| r.points[p].numerator).collect::<Vec<_>>()));
        den = den.max(spread(&runs.iter().map(|r| r.points[p].denominator).collect::<Vec<_>>()));
    }
    outcome(
        !flagged && errors[errors.len() - 1] <= 0.05 && strictly_decreasing(&errors) && num < 0.3 && den < 0.3,
        format!("max errors {errors:.4?}, numerator spread {num:.3}, denominator spread {den:.3}"),
    )
}

fn kernel_reconstruction() -> Outcome {
    let l = reference();
    let ex = &l.scenario.experiment;
    let route = rte_aot::functional::Route::Oracle;
    let iso = Solver::new(&l.medium, &l.grids, l.options).unwrap();
    let iso_errors: Vec<f64> = ex
        .h
        .iter()
        .map(|&h| recover_k(&iso, &l.medium, &ex.kernel_samples, h, route, l.scenario.fourier()).unwrap().max_relative_error())
        .collect();
    let hg_medium = l
        .medium
        .with_kernel(KernelPreset::HenyeyGreenstein { kappa: l.medium.kernel_preset().kappa().clone(), g: 0.5 })
        .unwrap();
    let hg = Solver::new(&hg_medium, &l.grids, l.options).unwrap();
    let h = l.scenario.finest_h();
    let hg_error = recover_k(&hg, &hg_medium, &ex.kernel_samples, h, route, l.scenario.fourier()).unwrap().max_relative_error();
    outcome(
        iso_errors[iso_errors.len() - 1] <= 0.10 && strictly_decreasing(&iso_errors) && hg_error <= 0.15,
        format!("isotropic errors {iso_errors:.4?}, Henyey-Greenstein error {hg_error:.4}"),
    )
}

fn stability() -> Outcome {
    let l = reference();
    let ex = &l.scenario.experiment;
    let setup = l.study_setup().unwrap();
    let st = run_stability_study(&ex.deltas, ex.perturbation, &setup).unwrap();
    let ratios: Vec<f64> = st.sigma.iter().map(|r| r.ratio).collect();
    let growth = st.sigma[1].h_diff / st.sigma[0].h_diff;
    outcome(
        spread(&ratios) < 0.4 && (1.6..=2.4).contains(&growth),
        format!("σ ratios {ratios:.4?} (spread {:.3}), H-difference growth {growth:.3}", spread(&ratios)),
    )
}

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_rte-aot")).args(args).output().expect("binary runs")
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap_or_default()
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = manifest_dir().join("scenarios/reference.toml");
    let scenario = scenario.to_str().unwrap();
    let mut detail = Vec::new();
    let mut pass = true;
    let headers = [
        ("forward", "forward.csv", "x1,x2,theta,u"),
        ("recover-sigma", "sigma.csv", "x1,x2,sigma_true,sigma_hat,rel_err"),
    ];
    for (sub, file, header) in headers {
        let dirs: Vec<PathBuf> = (0..2).map(|k| tmp.path().join(format!("{sub}{k}"))).collect();
        for d in &dirs {
            let out = cli(&[sub, "--scenario", scenario, "--out", d.to_str().unwrap()]);
            pass &= out.status.code() == Some(0);
        }
        let (a, b) = (read(&dirs[0], file), read(&dirs[1], file));
        let same = !a.is_empty() && a == b;
        let schema = a.split(|&c| c == b'\n').next() == Some(header.as_bytes());
        pass &= same && schema && dirs[0].join("manifest.json").exists();
        detail.push(format!("{file} identical {same}, schema {schema}"));
    }
    let check = cli(&["check", "--scenario", scenario, "--out", tmp.path().join("check").to_str().unwrap()]);
    let check_ok = check.status.code() == Some(0);
    let bad = manifest_dir().join("scenarios/inadmissible.toml");
    let rejected = cli(&["check", "--scenario", bad.to_str().unwrap(), "--out", tmp.path().join("bad").to_str().unwrap()]);
    let message = String::from_utf8_lossy(&rejected.stderr).to_string();
    let rejected_ok = rejected.status.code() == Some(2) && message.contains("smallness");
    pass &= check_ok && rejected_ok;
    detail.push(format!("check exit {:?}", check.status.code()));
    detail.push(format!("inadmissible exit {:?}: {}", rejected.status.code(), message.trim()));
    outcome(pass, detail.join("; "))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("1 Green identity", green_identity),
        ("2 operator duality", duality),
        ("3 contraction", contraction),
        ("4 ballistic estimate", ballistic),
        ("5 oscillatory estimates", oscillatory),
        ("6 internal functional recovery", functional_recovery),
        ("7 sigma reconstruction", sigma_reconstruction),
        ("8 kernel reconstruction", kernel_reconstruction),
        ("9 Lipschitz stability", stability),
        ("10 determinism and schema", determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let t = Instant::now();
        let o = run();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {name}: {verdict} ({:.1} s) {}", t.elapsed().as_secs_f64(), o.detail);
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {failed} criteria failed");
    if failed > 0 {
        std::process::exit(1);
    }
}
