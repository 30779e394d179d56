//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line
//! (written straight to stderr so it shows even when output is captured)
//! and then asserts. Tolerances and budgets are fixed here.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use growfrag::branching::{grow, StoppingLine};
use growfrag::cli::{self, ExperimentConfig, Invocation, Task};
use growfrag::diagnostics::{
    criterion_check, many_to_one_check, martingale_check, profile_cross_validation,
    scale_to_harmonic, stopping_line_check, strong_malthus_check, CheckReport, CriterionOptions,
    Verdict,
};
use growfrag::model::{BinaryKernel, FissionRate, GrowthRate, ModelConfig, RatioLaw};
use growfrag::numerics::log_grid;
use growfrag::observable::TestFn;
use growfrag::rng::StreamFamily;
use growfrag::spectral::{estimate_h, malthus_exponent, solve, MalthusOptions, SpectralOptions, SpectralSolution};
use growfrag::spine::{build_spine_model, check_condition_main, estimate_nu_spine, SpineOptions};
use growfrag::{Error, ModelSpec};

const SEED: u64 = 20240611;

fn announce(title: &str, pass: bool, elapsed: Duration, detail: &str) {
    let line = format!(
        "[{}] {title} ({:.1}s): {detail}\n",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    let _ = std::io::stderr().lock().write_all(line.as_bytes());
}

fn family(name: &str) -> ModelSpec {
    ModelConfig::family(name).build().unwrap()
}

fn standard_fns() -> Vec<TestFn> {
    vec![
        TestFn::one(),
        TestFn::identity(),
        TestFn::square(),
        TestFn::bump(0.5, 2.0, 1.0),
    ]
}

fn failing_items(r: &CheckReport) -> String {
    let bad: Vec<String> = r
        .items
        .iter()
        .filter(|i| i.verdict != Verdict::Pass)
        .map(|i| format!("{} ({:.3})", i.label, i.statistic))
        .collect();
    if bad.is_empty() {
        format!("worst statistic/tolerance {:.3}", r.statistic)
    } else {
        format!("failing: {}", bad.join(", "))
    }
}

#[test]
fn no_fission_is_exact() {
    let start = Instant::now();
    let x0 = 0.7;
    let ts = [0.5, 1.0, 2.0, 5.0];
    let models = [
        ModelSpec::new(
            GrowthRate::Hump { a: 3.0 },
            FissionRate::Constant { b: 0.0 },
            BinaryKernel::new(RatioLaw::Beta { alpha: 2.0 }).unwrap(),
        ),
        ModelSpec::new(
            GrowthRate::Saturating { a: 1.0 },
            FissionRate::Constant { b: 0.0 },
            BinaryKernel::half(),
        ),
    ];
    let mut worst_snapshot = 0.0f64;
    let mut worst_identity = 0.0f64;
    let mut single_atom = true;
    for m in &models {
        let g = grow(m, x0, 5.0, 10, &mut StreamFamily::new(SEED, "exact").stream(0)).unwrap();
        for &t in &ts {
            let s = g.snapshot(m, t);
            single_atom &= s.atoms.len() == 1;
            let exact = m.flow(x0, t).unwrap();
            worst_snapshot = worst_snapshot.max((s.atoms[0].mass - exact).abs() / exact);
        }
        let r = many_to_one_check(m, x0, &standard_fns(), &ts, 50, 10, &StreamFamily::new(SEED, "exact")).unwrap();
        for i in &r.items {
            let scale = i.rhs.mean.abs().max(f64::MIN_POSITIVE);
            worst_identity = worst_identity.max((i.lhs.mean - i.rhs.mean).abs() / scale);
        }
    }
    let elapsed = start.elapsed();
    let pass = single_atom && worst_snapshot <= 1e-8 && worst_identity <= 1e-8 && elapsed < Duration::from_secs(1);
    announce(
        "degenerate exactness (no fission)",
        pass,
        elapsed,
        &format!("single atom {single_atom}, snapshot rel err {worst_snapshot:.2e}, identity rel err {worst_identity:.2e} (tol 1e-8, budget 1 s)"),
    );
    assert!(pass);
}

#[test]
fn linear_growth_mass_law() {
    let start = Instant::now();
    let a = 0.7;
    let x0 = 1.3;
    let models = [
        family("linear"),
        ModelSpec::linear(
            a,
            FissionRate::Hill { b: 3.0 },
            BinaryKernel::new(RatioLaw::Beta { alpha: 2.0 }).unwrap(),
        ),
    ];
    let ts: Vec<f64> = (0..=50).map(|i| 0.1 * i as f64).collect();
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    let mut capped = 0usize;
    for (k, m) in models.iter().enumerate() {
        let streams = StreamFamily::new(SEED, &format!("mass-law-{k}"));
        for i in 0..1000 {
            let (g, until) = match grow(m, x0, 5.0, 1_000_000, &mut streams.stream(i)) {
                Ok(g) => (g, 5.0),
                Err(Error::Explosion { partial, time, .. }) => {
                    capped += 1;
                    (partial.genealogy, time)
                }
                Err(e) => panic!("{e}"),
            };
            for &t in ts.iter().filter(|&&t| t < until || t == 5.0 && until == 5.0) {
                let mass = g.snapshot(m, t).total_mass();
                let exact = x0 * (a * t).exp();
                worst = worst.max((mass - exact).abs() / exact);
                checked += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = worst < 1e-6 && elapsed < Duration::from_secs(30);
    announce(
        "pathwise mass law under linear growth",
        pass,
        elapsed,
        &format!("2 x 1000 paths, {checked} snapshots, {capped} capped, max rel err {worst:.2e} (tol 1e-6, budget 30 s)"),
    );
    assert!(pass);
}

#[test]
fn linear_spectral_recovery() {
    let start = Instant::now();
    let a = 0.7;
    let m = family("linear");
    let opts = MalthusOptions {
        n_init: 100_000,
        n_max: 100_000,
        ..MalthusOptions::default()
    };
    let streams = StreamFamily::new(SEED, "linear-spectral");
    let l = malthus_exponent(&m, 1.0, &opts, &streams.child("lambda")).unwrap();
    let lambda_tol = (3.0 * l.stderr).max(1e-3);
    let lambda_ok = (l.lambda - a).abs() <= lambda_tol;
    let grid = log_grid(0.1, 10.0, 16);
    let h = estimate_h(&m, l.lambda, 1.0, &grid, 100_000, 200.0, &streams.child("h")).unwrap();
    let ell = h.ell();
    let (lo, hi) = ell.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let spread = hi / lo - 1.0;
    let elapsed = start.elapsed();
    let pass = lambda_ok && spread <= 0.02 && elapsed < Duration::from_secs(600);
    announce(
        "linear-case spectral recovery",
        pass,
        elapsed,
        &format!(
            "lambda {:.6} +- {:.1e} vs {a} (tol {lambda_tol:.1e}); h(x)/x spread {:.3}% over 16 points (tol 2%)",
            l.lambda,
            l.stderr,
            100.0 * spread
        ),
    );
    assert!(pass);
}

#[test]
fn many_to_one_agreement() {
    let start = Instant::now();
    let mut details = Vec::new();
    let mut pass = true;
    for name in ["saturating", "hump"] {
        let r = many_to_one_check(
            &family(name),
            1.0,
            &standard_fns(),
            &[0.5, 1.0, 2.0],
            100_000,
            1_000_000,
            &StreamFamily::new(SEED, &format!("many-to-one-{name}")),
        )
        .unwrap();
        pass &= r.verdict == Verdict::Pass;
        details.push(format!("{name}: {} {}", r.verdict.as_str(), failing_items(&r)));
    }
    let elapsed = start.elapsed();
    pass &= elapsed < Duration::from_secs(600);
    announce(
        "many-to-one agreement (n = 1e5 per side, 3 stderr)",
        pass,
        elapsed,
        &details.join("; "),
    );
    assert!(pass);
}

#[test]
fn stopping_line_agreement() {
    let start = Instant::now();
    let one_jump_model = ModelSpec::linear(0.7, FissionRate::Constant { b: 1.3 }, BinaryKernel::half());
    let r1 = stopping_line_check(
        &one_jump_model,
        1.0,
        &StoppingLine::JumpCount { k: 1 },
        &standard_fns(),
        3.0,
        100_000,
        1_000_000,
        &StreamFamily::new(SEED, "line-jump"),
    )
    .unwrap();
    let closed_form_items = r1.items.iter().filter(|i| i.label.contains("closed form")).count();
    let r2 = stopping_line_check(
        &family("saturating"),
        1.0,
        &StoppingLine::entrance_above(2.0),
        &standard_fns(),
        6.0,
        100_000,
        1_000_000,
        &StreamFamily::new(SEED, "line-entrance"),
    )
    .unwrap();
    let elapsed = start.elapsed();
    let pass = r1.verdict == Verdict::Pass
        && closed_form_items == 8
        && r2.verdict == Verdict::Pass
        && elapsed < Duration::from_secs(300);
    announce(
        "stopping-line agreement",
        pass,
        elapsed,
        &format!(
            "jump-count 1 vs closed form: {} {} ; first entrance into [2, inf): {} {}",
            r1.verdict.as_str(),
            failing_items(&r1),
            r2.verdict.as_str(),
            failing_items(&r2)
        ),
    );
    assert!(pass);
}

/// Spectral triple for `hump` with the shipped defaults, shared by the
/// martingale, profile and strong-convergence tests.
fn hump_solution() -> &'static (SpectralSolution, Duration) {
    static SOL: OnceLock<(SpectralSolution, Duration)> = OnceLock::new();
    SOL.get_or_init(|| {
        let start = Instant::now();
        let sol = solve(
            &family("hump"),
            &SpectralOptions::default(),
            &StreamFamily::new(SEED, "spectral"),
        )
        .unwrap();
        (sol, start.elapsed())
    })
}

#[test]
fn intrinsic_martingale() {
    let (sol, solve_time) = hump_solution();
    let start = Instant::now();
    let m = family("hump");
    let cond = check_condition_main(&m, &sol.lambda);
    let r = martingale_check(
        &m,
        sol,
        1.0,
        &[1.0, 2.0, 4.0, 8.0],
        10_000,
        1_000_000,
        Some(cond.verdict),
        &StreamFamily::new(SEED, "martingale"),
    )
    .unwrap();
    let elapsed = start.elapsed() + *solve_time;
    let pass = cond.verdict == Verdict::Pass
        && !r.informational
        && r.verdict == Verdict::Pass
        && elapsed < Duration::from_secs(900);
    announce(
        "intrinsic martingale (hump, n = 1e4)",
        pass,
        elapsed,
        &format!(
            "condition {}, lambda {:.5} +- {:.1e}, h(x0) {:.5}; {} {}",
            cond.verdict.as_str(),
            sol.lambda.lambda,
            sol.lambda.stderr,
            sol.h(1.0),
            r.verdict.as_str(),
            failing_items(&r)
        ),
    );
    assert!(pass, "{}", r.render_text());
}

#[test]
fn profile_cross_validation_hump() {
    let (sol, solve_time) = hump_solution();
    let start = Instant::now();
    let m = family("hump");
    let spine = build_spine_model(&m, &sol.h_interp).unwrap();
    let prof = estimate_nu_spine(
        &spine,
        1.0,
        &sol.nu.profile.grid,
        &SpineOptions::default(),
        &StreamFamily::new(SEED, "spine"),
    )
    .unwrap();
    let r = profile_cross_validation(&sol.nu, &prof, 0.05).unwrap();
    let elapsed = start.elapsed() + *solve_time;
    let pass = r.verdict == Verdict::Pass && elapsed < Duration::from_secs(900);
    announce(
        "profile cross-validation (finite-difference vs spine)",
        pass,
        elapsed,
        &format!(
            "relative L1 {:.4} (tol 0.05), raw <nu,h> {:.4}, spine outside fraction {:.4}",
            r.items[0].statistic,
            sol.nu.raw_pairing,
            prof.outside_fraction
        ),
    );
    assert!(pass, "{}", r.render_text());
}

#[test]
fn strong_malthusian_behaviour() {
    let (sol, solve_time) = hump_solution();
    let start = Instant::now();
    let m = family("hump");
    let f = scale_to_harmonic(TestFn::bump(0.5, 2.0, 1.0), sol);
    let r = strong_malthus_check(
        &m,
        sol,
        1.0,
        &[f],
        &[1.0, 2.0, 4.0, 8.0],
        10_000,
        1_000_000,
        0.05,
        &StreamFamily::new(SEED, "strong"),
    )
    .unwrap();
    let ratios: Vec<String> = r
        .values
        .iter()
        .filter(|(k, _)| k.starts_with("ratio"))
        .map(|(_, v)| format!("{v:.4}"))
        .collect();
    let elapsed = start.elapsed() + *solve_time;
    let pass = r.verdict == Verdict::Pass && r.items.len() == 4 && elapsed < Duration::from_secs(1200);
    announce(
        "strong Malthusian behaviour (hump, bump on [0.5, 2])",
        pass,
        elapsed,
        &format!(
            "E|R_t|/E[W_t] at t = 1, 2, 4, 8: [{}] (final tol 0.05); {} {}",
            ratios.join(", "),
            r.verdict.as_str(),
            failing_items(&r)
        ),
    );
    assert!(pass, "{}", r.render_text());
}

#[test]
fn positivity_criterion() {
    let start = Instant::now();
    let opts = CriterionOptions::default();
    let (hump_report, hump) = criterion_check(&family("hump"), &opts);
    let pure_linear = ModelSpec::linear(0.7, FissionRate::Constant { b: 0.5 }, BinaryKernel::half());
    let (lin_report, lin) = criterion_check(&pure_linear, &opts);
    let no_fission = ModelSpec::linear(0.7, FissionRate::Constant { b: 0.0 }, BinaryKernel::half());
    let (_, none) = criterion_check(&no_fission, &opts);
    let elapsed = start.elapsed();
    let pass = hump.certified()
        && hump_report.verdict == Verdict::Pass
        && lin.infinity_side.is_none()
        && lin_report.verdict == Verdict::Fail
        && none.infinity_side.is_none()
        && elapsed < Duration::from_secs(60);
    let cert = |c: &Option<growfrag::diagnostics::Certificate>| {
        c.map_or("none".to_string(), |c| format!("q {:.3}, x {:.3e}", c.q, c.x))
    };
    announce(
        "positivity criterion",
        pass,
        elapsed,
        &format!(
            "hump: infinity side {}, zero side {}; pure linear infinity side {}; no fission infinity side {}",
            cert(&hump.infinity_side),
            cert(&hump.zero_side),
            cert(&lin.infinity_side),
            cert(&none.infinity_side)
        ),
    );
    assert!(pass);
}

fn run_config(base: &Path, name: &str, overrides: &[&str], task: Task, workers: usize) -> BTreeMap<String, Vec<u8>> {
    let inv = Invocation {
        task: Some(task),
        model: Some("hump".into()),
        seed: Some(SEED),
        output: Some(base.join(name)),
        overrides: overrides.iter().map(|s| s.to_string()).collect(),
        ..Default::default()
    };
    let cfg: ExperimentConfig = cli::load_config(&inv).unwrap();
    let out = cli::run(&cfg, workers, true).unwrap();
    fs::read_dir(&out.dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| {
            let n = p.file_name().unwrap().to_string_lossy();
            n.ends_with(".csv") || n == "summary.json" || n == "checks.json"
        })
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect()
}

#[test]
fn reproducible_outputs() {
    let start = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let jobs: [(&str, Task, &[&str]); 3] = [
        (
            "spectral",
            Task::Spectral,
            &[
                "spectral.n_h=4000",
                "spectral.n_nu=4000",
                "spectral.malthus.n_max=65536",
                "spectral.malthus.tolerance=0.01",
            ],
        ),
        ("check", Task::Check, &["check.suite=[\"many_to_one\", \"stopping_line\"]", "check.n=2000", "check.line_horizon=4.0"]),
        ("simulate", Task::Simulate, &["simulate.paths=200", "simulate.horizon=4.0"]),
    ];
    let mut compared = 0;
    let mut mismatches = Vec::new();
    for (name, task, overrides) in jobs {
        let a = run_config(tmp.path(), &format!("{name}-a"), overrides, task, 1);
        let b = run_config(tmp.path(), &format!("{name}-b"), overrides, task, 1);
        let c = run_config(tmp.path(), &format!("{name}-c"), overrides, task, 8);
        assert!(!a.is_empty());
        for (file, bytes) in &a {
            compared += 1;
            if b.get(file) != Some(bytes) {
                mismatches.push(format!("{name}/{file} (repeat)"));
            }
            if c.get(file) != Some(bytes) {
                mismatches.push(format!("{name}/{file} (8 workers)"));
            }
        }
        if a.len() != b.len() || a.len() != c.len() {
            mismatches.push(format!("{name}: differing file sets"));
        }
    }
    let elapsed = start.elapsed();
    let pass = mismatches.is_empty() && elapsed < Duration::from_secs(300);
    announce(
        "reproducibility (repeat and 1 vs 8 workers)",
        pass,
        elapsed,
        &format!("{compared} output files compared, mismatches: {mismatches:?}"),
    );
    assert!(pass);
}
