//! Batch experiment runner: config loading, task orchestration and output.
//!
//! A run writes one directory holding `manifest.json`, the effective
//! `config.toml`, `summary.json`, task CSVs and `run.log`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::branching::{grow, simulate_population, write_event_log, write_snapshots, StoppingLine};
use crate::diagnostics::{
    condition_check, criterion_check, many_to_one_check, martingale_check,
    profile_cross_validation, scale_to_harmonic, stopping_line_check, strong_malthus_check, tightness_probe,
    CheckReport, CriterionOptions, Verdict,
};
use crate::error::{Error, Result};
use crate::io::{fmt_f64, sha256_hex, write_json, CsvTable};
use crate::model::{registry, ModelConfig, ModelSpec};
use crate::numerics::log_grid;
use crate::observable::TestFn;
use crate::par::{replicate, with_workers};
use crate::pdmp::dump_path;
use crate::rng::StreamFamily;
use crate::spectral::{
    estimate_h, estimate_nu_fd, malthus_exponent, HarmonicEstimate, HarmonicInterp,
    MalthusEstimate, SpectralOptions, SpectralSolution,
};
use crate::spine::{
    build_spine_model, check_condition_main, estimate_nu_spine, ConditionReport, SpineOptions,
    SpineProfile,
};
use crate::stats::MeanEstimate;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_FAIL: i32 = 2;
pub const EXIT_INCONCLUSIVE: i32 = 3;
pub const EXIT_TASK_ERROR: i32 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Simulate,
    Spectral,
    Spine,
    Check,
}

impl Task {
    pub fn parse(s: &str) -> Option<Task> {
        match s {
            "simulate" => Some(Task::Simulate),
            "spectral" => Some(Task::Spectral),
            "spine" => Some(Task::Spine),
            "check" => Some(Task::Check),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Simulate => "simulate",
            Task::Spectral => "spectral",
            Task::Spine => "spine",
            Task::Check => "check",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    ManyToOne,
    StoppingLine,
    Criterion,
    Condition,
    Martingale,
    StrongMalthus,
    Tightness,
    Profile,
}

impl CheckKind {
    pub const ALL: [CheckKind; 8] = [
        CheckKind::ManyToOne,
        CheckKind::StoppingLine,
        CheckKind::Criterion,
        CheckKind::Condition,
        CheckKind::Martingale,
        CheckKind::StrongMalthus,
        CheckKind::Tightness,
        CheckKind::Profile,
    ];

    /// Accepts `many-to-one` as well as `many_to_one`.
    pub fn parse(s: &str) -> Option<CheckKind> {
        let norm = s.replace('-', "_");
        Self::ALL.into_iter().find(|k| k.name() == norm)
    }

    pub fn name(self) -> &'static str {
        match self {
            CheckKind::ManyToOne => "many_to_one",
            CheckKind::StoppingLine => "stopping_line",
            CheckKind::Criterion => "criterion",
            CheckKind::Condition => "condition",
            CheckKind::Martingale => "martingale",
            CheckKind::StrongMalthus => "strong_malthus",
            CheckKind::Tightness => "tightness",
            CheckKind::Profile => "profile",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub paths: usize,
    pub horizon: f64,
    pub cap: usize,
    /// Observation times; empty means 11 equally spaced times on `[0, horizon]`.
    pub times: Vec<f64>,
    /// Replicate whose event log and snapshots are written out.
    pub trace_replicate: u64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            paths: 1,
            horizon: 5.0,
            cap: 1_000_000,
            times: Vec::new(),
            trace_replicate: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpineConfig {
    /// Histogram bins `(lo, hi, edges)`, log-spaced; defaults to the `nu` grid.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub edges: Option<(f64, f64, usize)>,
    pub horizon: f64,
    pub replicates: usize,
    pub burn_in_fraction: f64,
    pub mixing_tolerance: f64,
}

impl Default for SpineConfig {
    fn default() -> Self {
        let o = SpineOptions::default();
        Self {
            edges: None,
            horizon: o.horizon,
            replicates: o.replicates,
            burn_in_fraction: o.burn_in_fraction,
            mixing_tolerance: o.mixing_tolerance,
        }
    }
}

impl SpineConfig {
    pub fn options(&self) -> SpineOptions {
        SpineOptions {
            horizon: self.horizon,
            replicates: self.replicates,
            burn_in_fraction: self.burn_in_fraction,
            mixing_tolerance: self.mixing_tolerance,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckConfig {
    pub suite: Vec<CheckKind>,
    /// Paths per side for every population-based check.
    pub n: usize,
    pub cap: usize,
    /// Test functions: `one`, `id`, `square`, `bump(lo,hi)` or `bump(lo,hi,height)`.
    pub functions: Vec<String>,
    pub times: Vec<f64>,
    pub line: StoppingLine,
    pub line_horizon: f64,
    pub martingale_times: Vec<f64>,
    pub strong_functions: Vec<String>,
    /// Rescale each strong-check function so that `sup |f/h| = 1`.
    pub strong_scale_to_h: bool,
    pub strong_times: Vec<f64>,
    pub strong_tolerance: f64,
    pub tightness_times: Vec<f64>,
    pub tightness_eps: f64,
    pub profile_tolerance: f64,
    pub criterion: CriterionOptions,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            suite: vec![CheckKind::ManyToOne],
            n: 10_000,
            cap: 1_000_000,
            functions: ["one", "id", "square", "bump(0.5,2)"].map(String::from).to_vec(),
            times: vec![0.5, 1.0, 2.0],
            line: StoppingLine::JumpCount { k: 1 },
            line_horizon: 50.0,
            martingale_times: vec![1.0, 2.0, 4.0, 8.0],
            strong_functions: vec!["bump(0.5,2)".into()],
            strong_scale_to_h: true,
            strong_times: vec![1.0, 2.0, 4.0, 8.0],
            strong_tolerance: 0.05,
            tightness_times: vec![2.0, 4.0, 8.0],
            tightness_eps: 0.05,
            profile_tolerance: 0.05,
            criterion: CriterionOptions::default(),
        }
    }
}

/// One experiment.
///
/// ```toml
/// seed = 7
/// task = "spectral"
/// x0 = 1.0
///
/// [model]
/// family = "hump"
///
/// [spectral]
/// n_h = 50000
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<Task>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default = "default_x0")]
    pub x0: f64,
    pub model: ModelConfig,
    #[serde(default)]
    pub simulate: SimulateConfig,
    #[serde(default)]
    pub spectral: SpectralOptions,
    #[serde(default)]
    pub spine: SpineConfig,
    #[serde(default)]
    pub check: CheckConfig,
}

fn default_x0() -> f64 {
    1.0
}

const TOP_LEVEL_KEYS: [&str; 9] = [
    "seed", "task", "output", "x0", "model", "simulate", "spectral", "spine", "check",
];

/// Where the base config comes from plus command-line adjustments.
#[derive(Clone, Debug, Default)]
pub struct Invocation {
    pub config: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub task: Option<Task>,
    pub checks: Vec<CheckKind>,
    pub model: Option<String>,
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    /// `key=value`; keys not starting with a top-level key go under `model`.
    pub overrides: Vec<String>,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_toml(text: &str, origin: &str) -> Result<toml::Table> {
    text.parse::<toml::Table>()
        .map_err(|e| Error::config(origin, e.to_string()))
}

/// The config embedded in a manifest written by a previous run.
pub fn config_from_manifest(path: &Path) -> Result<String> {
    let text = read_text(path)?;
    let v: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
    v.get("config")
        .and_then(|c| c.as_str())
        .map(str::to_string)
        .ok_or_else(|| Error::config(path.display().to_string(), "no `config` string in manifest"))
}

fn parse_override_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Set a dotted key in a TOML tree, creating tables on the way.
pub fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(assignment, "override must look like key=value"))?;
    let key = key.trim();
    let mut path: Vec<&str> = key.split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::config(key, "empty key segment"));
    }
    if !TOP_LEVEL_KEYS.contains(&path[0]) {
        path.insert(0, "model");
    }
    let value = parse_override_value(raw.trim());
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut table = root;
    for (i, seg) in parents.iter().enumerate() {
        let entry = table
            .entry(seg.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry.as_table_mut().ok_or_else(|| {
            Error::config(path[..=i].join("."), "is not a table")
        })?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

/// Assemble and validate the effective configuration.
pub fn load_config(inv: &Invocation) -> Result<ExperimentConfig> {
    let mut root = match (&inv.config, &inv.manifest) {
        (Some(_), Some(_)) => {
            return Err(Error::config("command line", "give either a config or a manifest"))
        }
        (Some(p), None) => parse_toml(&read_text(p)?, &p.display().to_string())?,
        (None, Some(p)) => parse_toml(&config_from_manifest(p)?, &p.display().to_string())?,
        (None, None) => toml::Table::new(),
    };
    if let Some(family) = &inv.model {
        let current = root
            .get("model")
            .and_then(|m| m.get("family"))
            .and_then(|f| f.as_str());
        if current != Some(family.as_str()) {
            let mut m = toml::Table::new();
            m.insert("family".into(), toml::Value::String(family.clone()));
            root.insert("model".into(), toml::Value::Table(m));
        }
    }
    if let Some(seed) = inv.seed {
        let seed = i64::try_from(seed).map_err(|_| Error::config("seed", "must fit in 63 bits"))?;
        root.insert("seed".into(), toml::Value::Integer(seed));
    }
    if let Some(task) = inv.task {
        root.insert("task".into(), toml::Value::String(task.name().into()));
    }
    if let Some(out) = &inv.output {
        root.insert("output".into(), toml::Value::String(out.display().to_string()));
    }
    if !inv.checks.is_empty() {
        let suite = inv
            .checks
            .iter()
            .map(|k| toml::Value::String(k.name().into()))
            .collect();
        let check = root
            .entry("check")
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::config("check", "is not a table"))?;
        check.insert("suite".into(), toml::Value::Array(suite));
    }
    for o in &inv.overrides {
        apply_override(&mut root, o)?;
    }
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(toml::Value::Table(root))
        .map_err(|e| {
            let path = e.path().to_string();
            Error::config(if path == "." { "config".into() } else { path }, e.into_inner().to_string())
        })?;
    cfg.effective()
}

fn positive(loc: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(loc, format!("must be positive and finite, got {v}")))
    }
}

fn nonzero(loc: &str, v: usize) -> Result<()> {
    if v > 0 {
        Ok(())
    } else {
        Err(Error::config(loc, "must be at least 1"))
    }
}

fn times_ok(loc: &str, ts: &[f64]) -> Result<()> {
    if ts.iter().any(|t| !(*t >= 0.0 && t.is_finite())) || ts.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::config(loc, "times must be finite, >= 0 and nondecreasing"));
    }
    Ok(())
}

fn grid_ok(loc: &str, g: (f64, f64, usize)) -> Result<()> {
    if g.0 > 0.0 && g.1 > g.0 && g.1.is_finite() && g.2 >= 2 {
        Ok(())
    } else {
        Err(Error::config(loc, "grid needs 0 < lo < hi and at least 2 points"))
    }
}

impl ExperimentConfig {
    /// Check budgets, fill defaults, and make `spectral.x0` agree with `x0`.
    pub fn effective(mut self) -> Result<Self> {
        if self.seed.is_none() {
            return Err(Error::config("seed", "missing: every run must be seeded"));
        }
        if self.task.is_none() {
            return Err(Error::config(
                "task",
                "missing: one of simulate, spectral, spine, check",
            ));
        }
        positive("x0", self.x0)?;
        let default_spectral_x0 = SpectralOptions::default().x0;
        if self.spectral.x0 != self.x0 && self.spectral.x0 != default_spectral_x0 {
            return Err(Error::config("spectral.x0", "conflicts with x0; set the top-level x0"));
        }
        self.spectral.x0 = self.x0;
        self.model = self.model.resolved()?;
        self.model.build()?;

        let s = &self.simulate;
        nonzero("simulate.paths", s.paths)?;
        positive("simulate.horizon", s.horizon)?;
        nonzero("simulate.cap", s.cap)?;
        times_ok("simulate.times", &s.times)?;
        if s.times.iter().any(|&t| t > s.horizon) {
            return Err(Error::config("simulate.times", "times must not exceed the horizon"));
        }
        if s.trace_replicate >= s.paths as u64 {
            return Err(Error::config("simulate.trace_replicate", "must be below paths"));
        }

        let sp = &self.spectral;
        nonzero("spectral.n_h", sp.n_h)?;
        nonzero("spectral.n_nu", sp.n_nu)?;
        positive("spectral.horizon", sp.horizon)?;
        grid_ok("spectral.h_grid", sp.h_grid)?;
        grid_ok("spectral.nu_grid", sp.nu_grid)?;
        if let Some(dq) = sp.dq {
            positive("spectral.dq", dq)?;
        }
        let m = &sp.malthus;
        positive("spectral.malthus.tolerance", m.tolerance)?;
        nonzero("spectral.malthus.n_init", m.n_init)?;
        if m.n_max < m.n_init {
            return Err(Error::config("spectral.malthus.n_max", "must be >= n_init"));
        }
        positive("spectral.malthus.horizon", m.horizon)?;
        if m.horizon_max < m.horizon {
            return Err(Error::config("spectral.malthus.horizon_max", "must be >= horizon"));
        }
        positive("spectral.malthus.z", m.z)?;

        if self.spine.edges.is_none() {
            self.spine.edges = Some(self.spectral.nu_grid);
        }
        grid_ok("spine.edges", self.spine.edges.unwrap())?;
        positive("spine.horizon", self.spine.horizon)?;
        nonzero("spine.replicates", self.spine.replicates)?;
        if !(0.0..1.0).contains(&self.spine.burn_in_fraction) {
            return Err(Error::config("spine.burn_in_fraction", "must be in [0, 1)"));
        }

        let c = &mut self.check;
        c.suite.sort();
        c.suite.dedup();
        nonzero("check.n", c.n)?;
        nonzero("check.cap", c.cap)?;
        positive("check.line_horizon", c.line_horizon)?;
        positive("check.strong_tolerance", c.strong_tolerance)?;
        positive("check.tightness_eps", c.tightness_eps)?;
        positive("check.profile_tolerance", c.profile_tolerance)?;
        for (loc, ts) in [
            ("check.times", &c.times),
            ("check.martingale_times", &c.martingale_times),
            ("check.strong_times", &c.strong_times),
            ("check.tightness_times", &c.tightness_times),
        ] {
            if ts.is_empty() {
                return Err(Error::config(loc, "needs at least one time"));
            }
            times_ok(loc, ts)?;
        }
        for (i, f) in c.functions.iter().enumerate() {
            parse_test_fn(f).map_err(|m| Error::config(format!("check.functions[{i}]"), m))?;
        }
        for (i, f) in c.strong_functions.iter().enumerate() {
            parse_test_fn(f).map_err(|m| Error::config(format!("check.strong_functions[{i}]"), m))?;
        }
        Ok(self)
    }

    pub fn seed(&self) -> u64 {
        self.seed.expect("validated")
    }

    pub fn task(&self) -> Task {
        self.task.expect("validated")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hash of everything that affects results (the output path does not).
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = None;
        sha256_hex(c.to_toml().as_bytes())
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output.clone().unwrap_or_else(|| {
            PathBuf::from("runs").join(format!("{}-{}", self.task().name(), &self.hash()[..12]))
        })
    }
}

/// `one`, `id`, `square`, `bump(lo,hi)` or `bump(lo,hi,height)`.
pub fn parse_test_fn(spec: &str) -> std::result::Result<TestFn, String> {
    let s: String = spec.chars().filter(|c| !c.is_whitespace()).collect();
    match s.as_str() {
        "one" | "1" => return Ok(TestFn::one()),
        "id" | "x" => return Ok(TestFn::identity()),
        "square" | "x^2" | "x2" => return Ok(TestFn::square()),
        _ => {}
    }
    let args = s
        .strip_prefix("bump(")
        .and_then(|r| r.strip_suffix(')'))
        .ok_or_else(|| format!("unknown test function `{spec}`"))?;
    let nums = args
        .split(',')
        .map(|a| a.parse::<f64>().map_err(|_| format!("bad number `{a}` in `{spec}`")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let (lo, hi, height) = match nums[..] {
        [lo, hi] => (lo, hi, 1.0),
        [lo, hi, height] => (lo, hi, height),
        _ => return Err(format!("`{spec}`: bump takes (lo,hi) or (lo,hi,height)")),
    };
    if !(lo > 0.0 && hi > lo && hi.is_finite() && height.is_finite()) {
        return Err(format!("`{spec}`: need 0 < lo < hi and finite height"));
    }
    Ok(TestFn::bump(lo, hi, height))
}

/// Lines go to `run.log` and, unless quiet, to stderr.
struct RunLog {
    file: fs::File,
    quiet: bool,
    start: Instant,
}

impl RunLog {
    fn create(dir: &Path, quiet: bool) -> Result<Self> {
        let path = dir.join("run.log");
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            file,
            quiet,
            start: Instant::now(),
        })
    }

    fn line(&mut self, msg: &str) {
        let text = format!("[{:9.3}s] {msg}", self.start.elapsed().as_secs_f64());
        let _ = writeln!(self.file, "{text}");
        if !self.quiet {
            eprintln!("{text}");
        }
    }
}

/// Spectral stages computed on demand, sharing streams with the `spectral` task.
struct Pipeline<'a> {
    model: &'a ModelSpec,
    opts: &'a SpectralOptions,
    streams: StreamFamily,
    lambda: Option<MalthusEstimate>,
    h: Option<(HarmonicEstimate, HarmonicInterp)>,
    solution: Option<SpectralSolution>,
    runtimes: BTreeMap<String, f64>,
}

impl<'a> Pipeline<'a> {
    fn new(model: &'a ModelSpec, opts: &'a SpectralOptions, seed: u64) -> Self {
        Self {
            model,
            opts,
            streams: StreamFamily::new(seed, "spectral"),
            lambda: None,
            h: None,
            solution: None,
            runtimes: BTreeMap::new(),
        }
    }

    fn lambda(&mut self, log: &mut RunLog) -> Result<MalthusEstimate> {
        if self.lambda.is_none() {
            let t = Instant::now();
            let l = malthus_exponent(self.model, self.opts.x0, &self.opts.malthus, &self.streams.child("lambda"))?;
            log.line(&format!(
                "lambda = {:.6} +- {:.2e} (n = {}, horizon = {}, converged = {})",
                l.lambda, l.stderr, l.n, l.horizon, l.converged
            ));
            self.runtimes.insert("lambda".into(), t.elapsed().as_secs_f64());
            self.lambda = Some(l);
        }
        Ok(self.lambda.clone().unwrap())
    }

    fn harmonic(&mut self, log: &mut RunLog) -> Result<(HarmonicEstimate, HarmonicInterp)> {
        if self.h.is_none() {
            let lambda = self.lambda(log)?.lambda;
            let t = Instant::now();
            let (lo, hi, k) = self.opts.h_grid;
            let h = estimate_h(
                self.model,
                lambda,
                self.opts.x0,
                &log_grid(lo, hi, k),
                self.opts.n_h,
                self.opts.horizon,
                &self.streams.child("h"),
            )?;
            let interp = h.interpolant()?;
            log.line(&format!("h estimated on {k} points"));
            self.runtimes.insert("h".into(), t.elapsed().as_secs_f64());
            self.h = Some((h, interp));
        }
        Ok(self.h.clone().unwrap())
    }

    fn solution(&mut self, log: &mut RunLog) -> Result<SpectralSolution> {
        if self.solution.is_none() {
            let lambda = self.lambda(log)?;
            let (h, h_interp) = self.harmonic(log)?;
            let t = Instant::now();
            let (lo, hi, k) = self.opts.nu_grid;
            let dq = self.opts.dq.unwrap_or(self.opts.malthus.tolerance.max(1e-3));
            let nu = estimate_nu_fd(
                self.model,
                lambda.lambda,
                &h_interp,
                &log_grid(lo, hi, k),
                self.opts.n_nu,
                dq,
                self.opts.horizon,
                &self.streams.child("nu"),
            )?;
            log.line(&format!("nu estimated on {k} points (raw <nu,h> = {:.4})", nu.raw_pairing));
            self.runtimes.insert("nu".into(), t.elapsed().as_secs_f64());
            let normalization = nu.profile.pairing(|y| h_interp.h(y));
            self.solution = Some(SpectralSolution {
                lambda,
                h,
                h_interp,
                nu,
                normalization,
            });
        }
        Ok(self.solution.clone().unwrap())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct OutputFile {
    pub file: String,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub task: Task,
    pub seed: u64,
    pub config_sha256: String,
    pub workers: usize,
    pub runtimes: BTreeMap<String, f64>,
    pub outputs: Vec<OutputFile>,
    /// Effective config; `run --manifest` replays it.
    pub config: String,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub exit_code: i32,
    pub reports: Vec<CheckReport>,
    pub summary: serde_json::Value,
}

/// 0 when every asserted report passes, 2 on any failure, 3 otherwise.
pub fn exit_code(reports: &[CheckReport]) -> i32 {
    let v = Verdict::all(reports.iter().filter(|r| !r.informational).map(|r| r.verdict));
    match v {
        Verdict::Pass => EXIT_OK,
        Verdict::Fail => EXIT_FAIL,
        Verdict::Inconclusive => EXIT_INCONCLUSIVE,
    }
}

/// Execute the configured task with `workers` threads (0 = all cores).
pub fn run(cfg: &ExperimentConfig, workers: usize, quiet: bool) -> Result<RunOutcome> {
    let dir = cfg.output_dir();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut log = RunLog::create(&dir, quiet)?;
    let started = Instant::now();
    log.line(&format!(
        "task {} seed {} config {}",
        cfg.task().name(),
        cfg.seed(),
        &cfg.hash()[..12]
    ));
    let config_text = cfg.to_toml();
    let cfg_path = dir.join("config.toml");
    fs::write(&cfg_path, &config_text).map_err(|e| Error::io(&cfg_path, e))?;
    let model = cfg.model.build()?;
    let mut runtimes = BTreeMap::new();
    let (summary, reports) = with_workers(workers, || -> Result<_> {
        match cfg.task() {
            Task::Simulate => run_simulate(cfg, &model, &dir, &mut log).map(|s| (s, Vec::new())),
            Task::Spectral => run_spectral(cfg, &model, &dir, &mut log, &mut runtimes).map(|s| (s, Vec::new())),
            Task::Spine => run_spine(cfg, &model, &dir, &mut log, &mut runtimes).map(|s| (s, Vec::new())),
            Task::Check => run_checks(cfg, &model, &dir, &mut log, &mut runtimes),
        }
    })?;
    write_json(&dir.join("summary.json"), &summary)?;
    runtimes.insert("total".into(), started.elapsed().as_secs_f64());
    let manifest = Manifest {
        tool: "growfrag",
        version: env!("CARGO_PKG_VERSION"),
        task: cfg.task(),
        seed: cfg.seed(),
        config_sha256: cfg.hash(),
        workers,
        runtimes,
        outputs: hash_outputs(&dir)?,
        config: config_text,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    let code = exit_code(&reports);
    log.line(&format!("done, exit code {code}"));
    Ok(RunOutcome {
        dir,
        exit_code: code,
        reports,
        summary,
    })
}

fn hash_outputs(dir: &Path) -> Result<Vec<OutputFile>> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n != "manifest.json" && n != "run.log")
        .collect();
    names.sort();
    names
        .into_iter()
        .map(|file| {
            let p = dir.join(&file);
            let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
            Ok(OutputFile {
                file,
                sha256: sha256_hex(&bytes),
            })
        })
        .collect()
}

fn write_with<F>(path: &Path, f: F) -> Result<()>
where
    F: FnOnce(&mut std::io::BufWriter<fs::File>) -> std::io::Result<()>,
{
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

fn run_simulate(
    cfg: &ExperimentConfig,
    model: &ModelSpec,
    dir: &Path,
    log: &mut RunLog,
) -> Result<serde_json::Value> {
    let s = &cfg.simulate;
    let times = if s.times.is_empty() {
        (0..=10).map(|i| s.horizon * i as f64 / 10.0).collect()
    } else {
        s.times.clone()
    };
    let streams = StreamFamily::new(cfg.seed(), "simulate");
    let fs_ = [TestFn::one(), TestFn::identity()];
    let per_path: Vec<Option<Vec<Vec<f64>>>> = replicate(0, s.paths as u64, |i| {
        match grow(model, cfg.x0, s.horizon, s.cap, &mut streams.stream(i)) {
            Ok(g) => Ok(Some(times.iter().map(|&t| g.observe_many(model, t, &fs_)).collect())),
            Err(Error::Explosion { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    })
    .into_iter()
    .collect::<Result<_>>()?;

    let mut table = CsvTable::new(&["replicate", "time", "count", "total_mass", "capped"]);
    for (i, p) in per_path.iter().enumerate() {
        for (k, &t) in times.iter().enumerate() {
            let (count, mass) = p.as_ref().map_or((f64::NAN, f64::NAN), |v| (v[k][0], v[k][1]));
            table.push(vec![
                i.to_string(),
                fmt_f64(t),
                fmt_f64(count),
                fmt_f64(mass),
                u8::from(p.is_none()).to_string(),
            ]);
        }
    }
    table.write(&dir.join("paths.csv"))?;

    let trace = simulate_population(
        model,
        cfg.x0,
        s.horizon,
        s.cap,
        &times,
        &mut streams.stream(s.trace_replicate),
    );
    match trace {
        Ok(run) => {
            let events = run.genealogy.event_log();
            write_with(&dir.join("events.csv"), |w| write_event_log(w, &events))?;
            write_with(&dir.join("snapshots.csv"), |w| write_snapshots(w, &run.snapshots))?;
        }
        Err(Error::Explosion { partial, time, .. }) => {
            log.line(&format!("trace replicate hit the cap at t = {time}; writing the partial log"));
            let events = partial.genealogy.event_log();
            write_with(&dir.join("events.csv"), |w| write_event_log(w, &events))?;
        }
        Err(e) => return Err(e),
    }

    let capped = per_path.iter().filter(|p| p.is_none()).count();
    let mut rows = Vec::new();
    for (k, &t) in times.iter().enumerate() {
        let col = |j: usize| -> Vec<f64> { per_path.iter().flatten().map(|p| p[k][j]).collect() };
        let count = MeanEstimate::from_samples(&col(0));
        let mass = MeanEstimate::from_samples(&col(1));
        rows.push(serde_json::json!({"time": t, "count": count, "total_mass": mass}));
    }
    log.line(&format!("{} paths, {capped} capped", s.paths));
    Ok(serde_json::json!({
        "task": "simulate",
        "paths": s.paths,
        "capped": capped,
        "cap_rate": capped as f64 / s.paths as f64,
        "means": rows,
    }))
}

fn lambda_summary(l: &MalthusEstimate) -> serde_json::Value {
    serde_json::json!({
        "lambda": l.lambda,
        "stderr": l.stderr,
        "ci_3se": l.ci(3.0),
        "bracket": l.bracket,
        "n": l.n,
        "horizon": l.horizon,
        "derivative": l.derivative,
        "truncated_fraction": l.truncated_fraction,
        "plug_in_tail": l.plug_in_tail,
        "converged": l.converged,
    })
}

fn run_spectral(
    cfg: &ExperimentConfig,
    model: &ModelSpec,
    dir: &Path,
    log: &mut RunLog,
    runtimes: &mut BTreeMap<String, f64>,
) -> Result<serde_json::Value> {
    let mut p = Pipeline::new(model, &cfg.spectral, cfg.seed());
    let sol = p.solution(log)?;
    runtimes.extend(p.runtimes);
    sol.write_csvs(dir)?;
    let cond = check_condition_main(model, &sol.lambda);
    log.line(&format!("limsup condition: {}", cond.verdict.as_str()));
    Ok(serde_json::json!({
        "task": "spectral",
        "malthus": lambda_summary(&sol.lambda),
        "h_x0": sol.h(cfg.x0),
        "nu_raw_pairing": sol.nu.raw_pairing,
        "nu_normalization": sol.normalization,
        "nu_max_truncated_fraction": sol.nu.truncated_fraction.iter().cloned().fold(0.0, f64::max),
        "condition": cond,
    }))
}

fn spine_profile(
    cfg: &ExperimentConfig,
    model: &ModelSpec,
    h: &HarmonicInterp,
    edges: &[f64],
) -> Result<SpineProfile> {
    let spine = build_spine_model(model, h)?;
    estimate_nu_spine(
        &spine,
        cfg.x0,
        edges,
        &cfg.spine.options(),
        &StreamFamily::new(cfg.seed(), "spine"),
    )
}

fn run_spine(
    cfg: &ExperimentConfig,
    model: &ModelSpec,
    dir: &Path,
    log: &mut RunLog,
    runtimes: &mut BTreeMap<String, f64>,
) -> Result<serde_json::Value> {
    let mut p = Pipeline::new(model, &cfg.spectral, cfg.seed());
    let lambda = p.lambda(log)?;
    let (h, interp) = p.harmonic(log)?;
    runtimes.extend(p.runtimes);
    h.write_csv(&dir.join("h.csv"))?;
    let (lo, hi, k) = cfg.spine.edges.expect("filled by effective()");
    let t = Instant::now();
    let prof = spine_profile(cfg, model, &interp, &log_grid(lo, hi, k))?;
    runtimes.insert("spine".into(), t.elapsed().as_secs_f64());
    prof.write_csv(&dir.join("spine_nu.csv"))?;
    log.line(&format!(
        "spine: outside fraction {:.4}, mixing gap {:.4}, escaped {}",
        prof.outside_fraction, prof.mixing_gap, prof.escaped_replicates
    ));
    Ok(serde_json::json!({
        "task": "spine",
        "malthus": lambda_summary(&lambda),
        "outside_fraction": prof.outside_fraction,
        "mixing_gap": prof.mixing_gap,
        "mixing_warning": prof.mixing_warning,
        "escaped_replicates": prof.escaped_replicates,
        "replicates": prof.replicates,
        "mean_return_time": prof.mean_return_time,
        "total_time": prof.total_time,
    }))
}

fn run_checks(
    cfg: &ExperimentConfig,
    model: &ModelSpec,
    dir: &Path,
    log: &mut RunLog,
    runtimes: &mut BTreeMap<String, f64>,
) -> Result<(serde_json::Value, Vec<CheckReport>)> {
    let c = &cfg.check;
    let seed = cfg.seed();
    let streams = |kind: CheckKind| StreamFamily::new(seed, &format!("check/{}", kind.name()));
    let fns = |specs: &[String]| -> Vec<TestFn> {
        specs.iter().map(|s| parse_test_fn(s).expect("validated")).collect()
    };
    let mut pipe = Pipeline::new(model, &cfg.spectral, seed);
    let mut condition: Option<ConditionReport> = None;
    let mut reports = Vec::new();
    for &kind in &c.suite {
        log.line(&format!("check {}", kind.name()));
        let report = match kind {
            CheckKind::ManyToOne => many_to_one_check(
                model,
                cfg.x0,
                &fns(&c.functions),
                &c.times,
                c.n,
                c.cap,
                &streams(kind),
            )?,
            CheckKind::StoppingLine => stopping_line_check(
                model,
                cfg.x0,
                &c.line,
                &fns(&c.functions),
                c.line_horizon,
                c.n,
                c.cap,
                &streams(kind),
            )?,
            CheckKind::Criterion => criterion_check(model, &c.criterion).0,
            CheckKind::Condition => {
                let l = pipe.lambda(log)?;
                let cond = check_condition_main(model, &l);
                let r = condition_check(model, &cond);
                condition = Some(cond);
                r
            }
            CheckKind::Martingale => {
                let sol = pipe.solution(log)?;
                let cond = condition
                    .get_or_insert_with(|| check_condition_main(model, &sol.lambda))
                    .verdict;
                martingale_check(
                    model,
                    &sol,
                    cfg.x0,
                    &c.martingale_times,
                    c.n,
                    c.cap,
                    Some(cond),
                    &streams(kind),
                )?
            }
            CheckKind::StrongMalthus => {
                let sol = pipe.solution(log)?;
                let cond = condition
                    .get_or_insert_with(|| check_condition_main(model, &sol.lambda))
                    .verdict;
                let fs_: Vec<TestFn> = fns(&c.strong_functions)
                    .into_iter()
                    .map(|f| if c.strong_scale_to_h { scale_to_harmonic(f, &sol) } else { f })
                    .collect();
                let mut r = strong_malthus_check(
                    model,
                    &sol,
                    cfg.x0,
                    &fs_,
                    &c.strong_times,
                    c.n,
                    c.cap,
                    c.strong_tolerance,
                    &streams(kind),
                )?;
                mark_informational(&mut r, cond);
                r
            }
            CheckKind::Tightness => {
                let sol = pipe.solution(log)?;
                let cond = condition
                    .get_or_insert_with(|| check_condition_main(model, &sol.lambda))
                    .verdict;
                let mut r = tightness_probe(
                    model,
                    &sol,
                    cfg.x0,
                    &c.tightness_times,
                    c.tightness_eps,
                    c.n,
                    c.cap,
                    &streams(kind),
                )?;
                mark_informational(&mut r, cond);
                r
            }
            CheckKind::Profile => {
                let sol = pipe.solution(log)?;
                let t = Instant::now();
                let prof = spine_profile(cfg, model, &sol.h_interp, &sol.nu.profile.grid)?;
                runtimes.insert("spine".into(), t.elapsed().as_secs_f64());
                prof.write_csv(&dir.join("spine_nu.csv"))?;
                profile_cross_validation(&sol.nu, &prof, c.profile_tolerance)?
            }
        };
        log.line(&format!(
            "  {}: {}{}",
            report.name,
            report.verdict.as_str(),
            if report.informational { " (informational)" } else { "" }
        ));
        runtimes.insert(format!("check_{}", kind.name()), report.runtime_secs);
        reports.push(report);
    }
    runtimes.extend(pipe.runtimes.clone());
    if let Some(sol) = &pipe.solution {
        sol.write_csvs(dir)?;
    }
    write_check_outputs(dir, &reports)?;
    let verdict = Verdict::all(reports.iter().filter(|r| !r.informational).map(|r| r.verdict));
    let summary = serde_json::json!({
        "task": "check",
        "verdict": verdict,
        "malthus": pipe.lambda.as_ref().map(lambda_summary),
        "checks": reports.iter().map(|r| serde_json::json!({
            "name": r.name,
            "verdict": r.verdict,
            "informational": r.informational,
            "statistic": r.statistic,
        })).collect::<Vec<_>>(),
    });
    Ok((summary, reports))
}

fn mark_informational(r: &mut CheckReport, condition: Verdict) {
    if condition != Verdict::Pass && !r.informational {
        r.informational = true;
        r.notes
            .push("limsup condition not verified as pass: report is informational".into());
    }
}

fn write_check_outputs(dir: &Path, reports: &[CheckReport]) -> Result<()> {
    let mut t = CsvTable::new(&[
        "check", "item", "lhs", "lhs_stderr", "rhs", "rhs_stderr", "statistic", "tolerance", "verdict",
    ]);
    for r in reports {
        for i in &r.items {
            t.push(vec![
                r.name.clone(),
                format!("\"{}\"", i.label.replace('"', "'")),
                fmt_f64(i.lhs.mean),
                fmt_f64(i.lhs.stderr),
                fmt_f64(i.rhs.mean),
                fmt_f64(i.rhs.stderr),
                fmt_f64(i.statistic),
                fmt_f64(i.tolerance),
                i.verdict.as_str().into(),
            ]);
        }
    }
    t.write(&dir.join("checks.csv"))?;
    let text: String = reports.iter().map(|r| r.render_text()).collect();
    let p = dir.join("report.txt");
    fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
    // timings vary between runs, so they live in the manifest only
    let stable: Vec<CheckReport> = reports
        .iter()
        .cloned()
        .map(|mut r| {
            r.runtime_secs = 0.0;
            r
        })
        .collect();
    write_json(&dir.join("checks.json"), &stable)
}

/// Registry listing as text.
pub fn list_models_text() -> String {
    let mut s = String::new();
    for f in registry() {
        s.push_str(&format!("{}\n  growth:    {}\n  params:    {}\n  condition: {}\n", f.name, f.growth, f.parameters, f.condition_note));
    }
    s
}

/// Write one tagged-cell path as CSV.
pub fn run_dump_path<W: std::io::Write>(
    model: &ModelSpec,
    seed: u64,
    x0: f64,
    horizon: f64,
    replicate: u64,
    out: &mut W,
    out_name: &Path,
) -> Result<()> {
    if !(x0 > 0.0 && x0.is_finite()) {
        return Err(Error::config("x0", "must be positive and finite"));
    }
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(Error::config("horizon", "must be finite and >= 0"));
    }
    let mut rng = StreamFamily::new(seed, "dump_path").stream(replicate);
    dump_path(model, x0, horizon, &mut rng, out)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(out_name, e))
}
