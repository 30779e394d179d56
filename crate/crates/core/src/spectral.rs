//! Monte Carlo estimation of `L_{x,y}(q)`, the Malthus exponent, the
//! harmonic function `h` and the asymptotic profile `nu`.
//!
//! Hitting samples are independent of `q`, so one batch evaluates the whole
//! map `q -> L(q)` with common random numbers: each per-sample integrand is
//! decreasing and convex in `q`, hence so is the estimate.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{fmt_f64, CsvTable};
use crate::model::{check_mass, ModelSpec};
use crate::numerics::Pchip;
use crate::par::replicate;
use crate::pdmp::{sample_hitting, HittingSample};
use crate::rng::StreamFamily;
use crate::stats::MeanEstimate;

/// Bounds on `L(q)` that account for paths still running at the horizon.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    /// Truncated paths counted as 0.
    pub lower: f64,
    /// Truncated paths counted at their pathwise bound when `q >= gamma`,
    /// else at their no-further-jump continuation (see `upper_is_bound`).
    pub upper: Option<f64>,
    pub upper_stderr: Option<f64>,
    /// False when `upper` is a plug-in estimate rather than a bound.
    pub upper_is_bound: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaplaceEstimate {
    pub q: f64,
    pub x: f64,
    pub y: f64,
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
    pub truncated_fraction: f64,
    pub envelope: Envelope,
}

/// A growable batch of hitting samples for a fixed `(x, y, horizon)`.
#[derive(Clone, Debug)]
pub struct HittingBatch {
    pub x: f64,
    pub y: f64,
    pub horizon: f64,
    gamma: f64,
    streams: StreamFamily,
    samples: Vec<HittingSample>,
}

impl HittingBatch {
    pub fn simulate(
        model: &ModelSpec,
        x: f64,
        y: f64,
        horizon: f64,
        n: usize,
        streams: &StreamFamily,
    ) -> Result<Self> {
        check_mass(x)?;
        check_mass(y)?;
        if !(horizon > 0.0) {
            return Err(Error::domain(format!("horizon must be positive, got {horizon}")));
        }
        let mut batch = Self {
            x,
            y,
            horizon,
            gamma: model.gamma(),
            streams: streams.clone(),
            samples: Vec::new(),
        };
        batch.extend(model, n);
        Ok(batch)
    }

    /// Grow to `n` samples; existing samples are kept.
    pub fn extend(&mut self, model: &ModelSpec, n: usize) {
        let have = self.samples.len() as u64;
        if (n as u64) <= have {
            return;
        }
        let (x, y, t) = (self.x, self.y, self.horizon);
        let streams = &self.streams;
        let more = replicate(have, n as u64, |i| {
            sample_hitting(model, x, y, t, &mut streams.stream(i))
        });
        self.samples.extend(more);
    }

    /// Re-simulate every replicate with a longer horizon. Replicate `i`
    /// reuses stream `i`, so paths agree with the old ones up to the old
    /// horizon.
    pub fn set_horizon(&mut self, model: &ModelSpec, horizon: f64) {
        let n = self.samples.len();
        self.horizon = horizon;
        self.samples.clear();
        self.extend(model, n);
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[HittingSample] {
        &self.samples
    }

    pub fn truncated_fraction(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().filter(|s| s.truncated).count() as f64 / self.samples.len() as f64
    }

    pub fn laplace(&self, q: f64) -> LaplaceEstimate {
        let vals: Vec<f64> = self.samples.iter().map(|s| s.integrand(q)).collect();
        let est = MeanEstimate::from_samples(&vals);
        let tf = self.truncated_fraction();
        let (upper, upper_stderr, upper_is_bound) = if tf == 0.0 {
            (Some(est.mean), Some(est.stderr), true)
        } else {
            let is_bound = q >= self.gamma;
            let up: Vec<f64> = self
                .samples
                .iter()
                .zip(&vals)
                .map(|(s, v)| {
                    v + match s.tail_bound(q, self.horizon, self.gamma) {
                        Some(b) if is_bound => b,
                        _ => s.tail_plug_in(q, self.horizon, self.y),
                    }
                })
                .collect();
            let e = MeanEstimate::from_samples(&up);
            (Some(e.mean), Some(e.stderr), is_bound)
        };
        LaplaceEstimate {
            q,
            x: self.x,
            y: self.y,
            mean: est.mean,
            stderr: est.stderr,
            n: est.n,
            truncated_fraction: tf,
            envelope: Envelope {
                lower: est.mean,
                upper,
                upper_stderr,
                upper_is_bound,
            },
        }
    }

    /// Pathwise derivative `dL/dq`.
    pub fn derivative(&self, q: f64) -> MeanEstimate {
        let vals: Vec<f64> = self
            .samples
            .iter()
            .map(|s| s.integrand_derivative(q))
            .collect();
        MeanEstimate::from_samples(&vals)
    }

    /// Central difference `(L(q+dq) - L(q-dq)) / (2 dq)` on the shared samples.
    pub fn central_difference(&self, q: f64, dq: f64) -> MeanEstimate {
        let vals: Vec<f64> = self
            .samples
            .iter()
            .map(|s| (s.integrand(q + dq) - s.integrand(q - dq)) / (2.0 * dq))
            .collect();
        MeanEstimate::from_samples(&vals)
    }
}

pub fn estimate_laplace(
    model: &ModelSpec,
    x: f64,
    y: f64,
    q: f64,
    n: usize,
    horizon: f64,
    streams: &StreamFamily,
) -> Result<LaplaceEstimate> {
    if n == 0 {
        return Err(Error::domain("n must be at least 1"));
    }
    Ok(HittingBatch::simulate(model, x, y, horizon, n, streams)?.laplace(q))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MalthusOptions {
    /// Stop bisecting once the certified bracket is this narrow.
    pub tolerance: f64,
    pub n_init: usize,
    pub n_max: usize,
    /// After bracketing, keep doubling `n` until the standard error of the
    /// root is below this (bounded by `n_max`).
    pub target_stderr: Option<f64>,
    pub horizon: f64,
    pub horizon_max: f64,
    /// Width of the confidence band, in standard errors.
    pub z: f64,
    pub bracket: Option<(f64, f64)>,
}

impl Default for MalthusOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-3,
            n_init: 4096,
            n_max: 1 << 22,
            target_stderr: None,
            horizon: 50.0,
            horizon_max: 3200.0,
            z: 3.0,
            bracket: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Above,
    Below,
    Undecided,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BisectionStep {
    pub q: f64,
    pub n: usize,
    pub horizon: f64,
    pub estimate: f64,
    pub stderr: f64,
    pub side: Side,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MalthusEstimate {
    pub lambda: f64,
    pub stderr: f64,
    /// Certified bracket: `L > 1` at the left end, `L < 1` at the right end.
    pub bracket: (f64, f64),
    pub x0: f64,
    pub n: usize,
    pub horizon: f64,
    /// `dL/dq` at the root.
    pub derivative: f64,
    pub truncated_fraction: f64,
    /// Whether some bracket decision relied on a plug-in tail estimate.
    pub plug_in_tail: bool,
    /// False when the bracket could not be narrowed to the tolerance.
    pub converged: bool,
    pub trace: Vec<BisectionStep>,
}

impl MalthusEstimate {
    pub fn ci(&self, z: f64) -> (f64, f64) {
        (self.lambda - z * self.stderr, self.lambda + z * self.stderr)
    }
}

struct Bisector<'a> {
    model: &'a ModelSpec,
    opts: &'a MalthusOptions,
    batch: HittingBatch,
    trace: Vec<BisectionStep>,
    plug_in_tail: bool,
}

impl Bisector<'_> {
    /// Plug-in upper envelopes are accepted only once the horizon is maxed.
    fn classify(&self, q: f64) -> (Side, LaplaceEstimate) {
        let e = self.batch.laplace(q);
        let z = self.opts.z;
        let env = &e.envelope;
        let upper_usable = env.upper_is_bound || self.batch.horizon >= self.opts.horizon_max;
        let side = if env.lower - z * e.stderr > 1.0 {
            Side::Above
        } else {
            match (env.upper, env.upper_stderr) {
                (Some(u), Some(s)) if upper_usable && u + z * s < 1.0 => Side::Below,
                _ => Side::Undecided,
            }
        };
        (side, e)
    }

    /// Classify `q`, growing the horizon or the sample size while undecided.
    fn decide(&mut self, q: f64) -> Side {
        loop {
            let (side, e) = self.classify(q);
            self.trace.push(BisectionStep {
                q,
                n: self.batch.len(),
                horizon: self.batch.horizon,
                estimate: e.mean,
                stderr: e.stderr,
                side,
            });
            if side == Side::Below && !e.envelope.upper_is_bound {
                self.plug_in_tail = true;
            }
            if side != Side::Undecided {
                return side;
            }
            let can_grow_horizon = self.batch.horizon < self.opts.horizon_max
                && e.truncated_fraction > 0.0;
            if !e.envelope.upper_is_bound && can_grow_horizon {
                let h = (self.batch.horizon * 2.0).min(self.opts.horizon_max);
                self.batch.set_horizon(self.model, h);
            } else if self.batch.len() < self.opts.n_max {
                let n = (self.batch.len() * 2).min(self.opts.n_max);
                self.batch.extend(self.model, n);
            } else if can_grow_horizon {
                let h = (self.batch.horizon * 2.0).min(self.opts.horizon_max);
                self.batch.set_horizon(self.model, h);
            } else {
                return Side::Undecided;
            }
        }
    }
}

/// Root of `L_{x0,x0}(q) = 1` by bisection that only moves an end point
/// when the confidence band at the midpoint excludes 1.
pub fn malthus_exponent(
    model: &ModelSpec,
    x0: f64,
    opts: &MalthusOptions,
    streams: &StreamFamily,
) -> Result<MalthusEstimate> {
    if !(opts.tolerance > 0.0) || opts.n_init == 0 || opts.n_max < opts.n_init {
        return Err(Error::domain("invalid bisection options"));
    }
    let batch = HittingBatch::simulate(model, x0, x0, opts.horizon, opts.n_init, streams)?;
    let mut b = Bisector {
        model,
        opts,
        batch,
        trace: Vec::new(),
        plug_in_tail: false,
    };
    let gamma = model.gamma();

    let (mut lo, mut hi) = match opts.bracket {
        Some((lo, hi)) => {
            if !(lo < hi) {
                return Err(Error::domain(format!("empty bracket [{lo}, {hi}]")));
            }
            if b.decide(lo) != Side::Above {
                return Err(no_root(&b, format!("L({lo}) is not certified above 1")));
            }
            if b.decide(hi) != Side::Below {
                return Err(no_root(&b, format!("L({hi}) is not certified below 1")));
            }
            (lo, hi)
        }
        None => auto_bracket(&mut b, gamma)?,
    };

    let mut converged = true;
    while hi - lo > opts.tolerance {
        let mid = 0.5 * (lo + hi);
        match b.decide(mid) {
            Side::Above => lo = mid,
            Side::Below => hi = mid,
            Side::Undecided => {
                // the root is within the band around `mid`: try a bracket of
                // width `tolerance` centred on the point estimate instead
                let r = root_on_batch(&b.batch, lo, hi);
                let w = 0.499 * opts.tolerance;
                let (a, c) = ((r - w).max(lo), (r + w).min(hi));
                if b.decide(a) == Side::Above && b.decide(c) == Side::Below {
                    lo = a;
                    hi = c;
                } else {
                    converged = false;
                }
                break;
            }
        }
    }

    let mut root = root_on_batch(&b.batch, lo, hi);
    if let Some(target) = opts.target_stderr {
        while root_stderr(&b.batch, root) > target && b.batch.len() < opts.n_max {
            let n = (b.batch.len() * 2).min(opts.n_max);
            b.batch.extend(model, n);
            root = root_on_batch(&b.batch, lo, hi);
        }
    }
    let d = b.batch.derivative(root);
    Ok(MalthusEstimate {
        lambda: root,
        stderr: root_stderr(&b.batch, root),
        bracket: (lo, hi),
        x0,
        n: b.batch.len(),
        horizon: b.batch.horizon,
        derivative: d.mean,
        truncated_fraction: b.batch.truncated_fraction(),
        plug_in_tail: b.plug_in_tail,
        converged,
        trace: b.trace,
    })
}

fn no_root(b: &Bisector<'_>, why: String) -> Error {
    let last = b.trace.last();
    Error::NoRoot(match last {
        Some(s) => format!(
            "{why} (last: q={}, L={}+-{}, n={}, horizon={}, truncated={})",
            s.q,
            s.estimate,
            s.stderr,
            s.n,
            s.horizon,
            b.batch.truncated_fraction()
        ),
        None => why,
    })
}

const MAX_BRACKET_STEPS: usize = 12;

fn auto_bracket(b: &mut Bisector<'_>, gamma: f64) -> Result<(f64, f64)> {
    // L(q) <= P(return) <= 1 for q >= gamma, so the right end sits just above gamma.
    let mut step = b.opts.tolerance.max(0.01 * gamma.abs()).max(1e-3);
    let mut hi = gamma + step;
    let mut found = false;
    for _ in 0..MAX_BRACKET_STEPS {
        if b.decide(hi) == Side::Below {
            found = true;
            break;
        }
        step *= 2.0;
        hi = gamma + step;
    }
    if !found {
        return Err(no_root(b, format!("no q >= {gamma} certified with L(q) < 1")));
    }
    let mut step = (hi - gamma).max(0.05 * gamma.abs()).max(0.05);
    let mut lo = hi - step;
    for _ in 0..MAX_BRACKET_STEPS {
        match b.decide(lo) {
            Side::Above => return Ok((lo, hi)),
            Side::Below => hi = lo,
            Side::Undecided => {}
        }
        step *= 2.0;
        lo = hi - step;
    }
    Err(no_root(b, format!("no q >= {lo} certified with L(q) > 1")))
}

/// Solve `L_hat(q) = 1` on the batch, inside a bracket where it changes
/// sign. Falls back to the bracket end nearest the crossing.
fn root_on_batch(batch: &HittingBatch, lo: f64, hi: f64) -> f64 {
    let f = |q: f64| batch.laplace(q).mean - 1.0;
    let (mut a, mut c) = (lo, hi);
    let (fa, fc) = (f(a), f(c));
    if fa <= 0.0 {
        return a;
    }
    if fc >= 0.0 {
        return c;
    }
    for _ in 0..200 {
        let m = 0.5 * (a + c);
        if m <= a || m >= c {
            break;
        }
        if f(m) > 0.0 {
            a = m;
        } else {
            c = m;
        }
    }
    0.5 * (a + c)
}

/// Delta-method standard error of the root: `se(L_hat(q)) / |L'(q)|`.
fn root_stderr(batch: &HittingBatch, q: f64) -> f64 {
    let d = batch.derivative(q).mean.abs();
    if d == 0.0 {
        return f64::INFINITY;
    }
    batch.laplace(q).stderr / d
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarmonicEstimate {
    pub x0: f64,
    pub lambda: f64,
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub stderr: Vec<f64>,
    pub truncated_fraction: Vec<f64>,
    pub n: usize,
    pub horizon: f64,
}

impl HarmonicEstimate {
    /// `ell(x) = h(x)/x` on the grid.
    pub fn ell(&self) -> Vec<f64> {
        self.grid.iter().zip(&self.values).map(|(x, h)| h / x).collect()
    }

    /// Monotone cubic interpolation of `ln ell` against `ln x`, constant
    /// beyond the grid.
    pub fn interpolant(&self) -> Result<HarmonicInterp> {
        for (&x, &h) in self.grid.iter().zip(&self.values) {
            if !(h > 0.0) || !h.is_finite() {
                return Err(Error::InvalidHarmonic { x, value: h });
            }
        }
        let lx = self.grid.iter().map(|x| x.ln()).collect();
        let ll = self.ell().iter().map(|l| l.ln()).collect();
        Ok(HarmonicInterp {
            log_ell: Pchip::new(lx, ll),
        })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut t = CsvTable::new(&["x", "h", "stderr", "ell", "truncated_fraction"]);
        for i in 0..self.grid.len() {
            t.push_floats(&[
                self.grid[i],
                self.values[i],
                self.stderr[i],
                self.values[i] / self.grid[i],
                self.truncated_fraction[i],
            ]);
        }
        t.write(path)
    }
}

/// Positive interpolant `h(x) = x ell(x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarmonicInterp {
    log_ell: Pchip,
}

impl HarmonicInterp {
    pub fn from_fn(grid: &[f64], h: impl Fn(f64) -> f64) -> Result<Self> {
        let values: Vec<f64> = grid.iter().map(|&x| h(x)).collect();
        HarmonicEstimate {
            x0: f64::NAN,
            lambda: f64::NAN,
            grid: grid.to_vec(),
            stderr: vec![0.0; grid.len()],
            truncated_fraction: vec![0.0; grid.len()],
            values,
            n: 0,
            horizon: f64::NAN,
        }
        .interpolant()
    }

    #[inline]
    pub fn ell(&self, x: f64) -> f64 {
        self.log_ell.eval(x.ln()).exp()
    }

    #[inline]
    pub fn h(&self, x: f64) -> f64 {
        x * self.ell(x)
    }

    pub fn ell_bounds(&self) -> (f64, f64) {
        let (_, ys) = self.log_ell.knots();
        let lo = ys.iter().cloned().fold(f64::INFINITY, f64::min).exp();
        let hi = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max).exp();
        (lo, hi)
    }

    pub fn knots(&self) -> (Vec<f64>, Vec<f64>) {
        let (xs, ys) = self.log_ell.knots();
        (
            xs.iter().map(|x| x.exp()).collect(),
            ys.iter().map(|y| y.exp()).collect(),
        )
    }

    pub fn span(&self) -> (f64, f64) {
        let (xs, _) = self.log_ell.knots();
        (xs[0].exp(), xs[xs.len() - 1].exp())
    }
}

/// `h(x) = x L_{x,x0}(lambda)` on `grid`, all grid points sharing the same
/// replicate streams.
pub fn estimate_h(
    model: &ModelSpec,
    lambda: f64,
    x0: f64,
    grid: &[f64],
    n: usize,
    horizon: f64,
    streams: &StreamFamily,
) -> Result<HarmonicEstimate> {
    check_mass(x0)?;
    if grid.is_empty() || n == 0 {
        return Err(Error::domain("estimate_h needs a non-empty grid and n >= 1"));
    }
    let mut values = Vec::with_capacity(grid.len());
    let mut stderr = Vec::with_capacity(grid.len());
    let mut truncated = Vec::with_capacity(grid.len());
    for &x in grid {
        let batch = HittingBatch::simulate(model, x, x0, horizon, n, streams)?;
        let e = batch.laplace(lambda);
        values.push(x * e.mean);
        stderr.push(x * e.stderr);
        truncated.push(e.truncated_fraction);
    }
    Ok(HarmonicEstimate {
        x0,
        lambda,
        grid: grid.to_vec(),
        values,
        stderr,
        truncated_fraction: truncated,
        n,
        horizon,
    })
}

/// A density on `(0, inf)` known at log-spaced nodes, integrated by the
/// trapezoid rule in `ln y`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileEstimate {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub stderr: Vec<f64>,
}

impl ProfileEstimate {
    /// `int g(y) nu(y) dy` over the grid span.
    pub fn pairing(&self, g: impl Fn(f64) -> f64) -> f64 {
        self.bin_masses_with_weight(g).iter().sum()
    }

    /// Mass of each interval `[grid[i], grid[i+1]]`.
    pub fn bin_masses(&self) -> Vec<f64> {
        self.bin_masses_with_weight(|_| 1.0)
    }

    /// Masses of `g(y) nu(dy)` between consecutive grid points.
    pub fn bin_masses_with_weight(&self, g: impl Fn(f64) -> f64) -> Vec<f64> {
        let v: Vec<f64> = self
            .grid
            .iter()
            .zip(&self.density)
            .map(|(&y, &d)| d * g(y) * y)
            .collect();
        self.grid
            .windows(2)
            .zip(v.windows(2))
            .map(|(y, f)| 0.5 * (f[0] + f[1]) * (y[1] / y[0]).ln())
            .collect()
    }

    /// Scale so that `<nu, h> = 1`; returns the factor applied.
    pub fn normalize(&mut self, h: &HarmonicInterp) -> f64 {
        let p = self.pairing(|y| h.h(y));
        let k = 1.0 / p;
        for d in self.density.iter_mut() {
            *d *= k;
        }
        for s in self.stderr.iter_mut() {
            *s *= k;
        }
        k
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut t = CsvTable::new(&["y", "density", "stderr"]);
        for i in 0..self.grid.len() {
            t.push_floats(&[self.grid[i], self.density[i], self.stderr[i]]);
        }
        t.write(path)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FdProfile {
    pub profile: ProfileEstimate,
    /// `dL_{y,y}/dq` at lambda, Richardson-extrapolated.
    pub derivative: Vec<f64>,
    pub derivative_stderr: Vec<f64>,
    /// `|D(dq) - D(dq/2)|` relative to `|D(dq/2)|`.
    pub richardson_gap: Vec<f64>,
    pub truncated_fraction: Vec<f64>,
    /// `<nu, h>` before normalization; close to 1 when the grid covers the mass.
    pub raw_pairing: f64,
    pub dq: f64,
}

/// `nu(y) = 1 / (h(y) c(y) |L'_{y,y}(lambda)|)` with the derivative taken by
/// central differences on common random numbers, then scaled to
/// `<nu, h> = 1`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_nu_fd(
    model: &ModelSpec,
    lambda: f64,
    h: &HarmonicInterp,
    grid: &[f64],
    n: usize,
    dq: f64,
    horizon: f64,
    streams: &StreamFamily,
) -> Result<FdProfile> {
    if !(dq > 0.0) {
        return Err(Error::domain(format!("dq must be positive, got {dq}")));
    }
    let mut density = Vec::with_capacity(grid.len());
    let mut stderr = Vec::with_capacity(grid.len());
    let mut deriv = Vec::with_capacity(grid.len());
    let mut deriv_se = Vec::with_capacity(grid.len());
    let mut gap = Vec::with_capacity(grid.len());
    let mut truncated = Vec::with_capacity(grid.len());
    for &y in grid {
        let batch = HittingBatch::simulate(model, y, y, horizon, n, streams)?;
        let d1 = batch.central_difference(lambda, dq);
        let d2 = batch.central_difference(lambda, 0.5 * dq);
        let d = (4.0 * d2.mean - d1.mean) / 3.0;
        let se = d2.stderr;
        if !(d + 3.0 * se < 0.0) {
            return Err(Error::IllConditionedDerivative {
                y,
                estimate: d,
                stderr: se,
            });
        }
        let nu = 1.0 / (h.h(y) * model.c(y) * d.abs());
        density.push(nu);
        stderr.push(nu * se / d.abs());
        deriv.push(d);
        deriv_se.push(se);
        gap.push((d1.mean - d2.mean).abs() / d2.mean.abs());
        truncated.push(batch.truncated_fraction());
    }
    let mut profile = ProfileEstimate {
        grid: grid.to_vec(),
        density,
        stderr,
    };
    let k = profile.normalize(h);
    Ok(FdProfile {
        profile,
        derivative: deriv,
        derivative_stderr: deriv_se,
        richardson_gap: gap,
        truncated_fraction: truncated,
        raw_pairing: 1.0 / k,
        dq,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectralOptions {
    pub x0: f64,
    pub malthus: MalthusOptions,
    /// Grid for `h`: `(lo, hi, points)`, log-spaced. It should be wide
    /// enough that the spine tilt is accurate where the spine spends time.
    pub h_grid: (f64, f64, usize),
    /// Grid for `nu`, log-spaced. Finite-difference estimates degrade where
    /// return times are long, so this is usually narrower than `h_grid`.
    pub nu_grid: (f64, f64, usize),
    pub n_h: usize,
    pub n_nu: usize,
    pub horizon: f64,
    /// Finite-difference step; defaults to `max(1e-3, tolerance)`.
    pub dq: Option<f64>,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        Self {
            x0: 1.0,
            malthus: MalthusOptions::default(),
            h_grid: (0.02, 100.0, 40),
            nu_grid: (0.3, 4.0, 12),
            n_h: 100_000,
            n_nu: 100_000,
            horizon: 200.0,
            dq: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralSolution {
    pub lambda: MalthusEstimate,
    pub h: HarmonicEstimate,
    pub h_interp: HarmonicInterp,
    pub nu: FdProfile,
    /// `<nu, h>` after normalization.
    pub normalization: f64,
}

impl SpectralSolution {
    pub fn h(&self, x: f64) -> f64 {
        self.h_interp.h(x)
    }

    pub fn write_csvs(&self, dir: &Path) -> Result<()> {
        self.h.write_csv(&dir.join("h.csv"))?;
        self.nu.profile.write_csv(&dir.join("nu.csv"))?;
        let mut t = CsvTable::new(&["q", "n", "horizon", "estimate", "stderr", "side"]);
        for s in &self.lambda.trace {
            let side = match s.side {
                Side::Above => "above",
                Side::Below => "below",
                Side::Undecided => "undecided",
            };
            t.push(vec![
                fmt_f64(s.q),
                s.n.to_string(),
                fmt_f64(s.horizon),
                fmt_f64(s.estimate),
                fmt_f64(s.stderr),
                side.to_string(),
            ]);
        }
        t.write(&dir.join("bisection.csv"))
    }
}

/// Full pipeline: `lambda`, then `h` on the grid, then `nu`.
pub fn solve(
    model: &ModelSpec,
    opts: &SpectralOptions,
    streams: &StreamFamily,
) -> Result<SpectralSolution> {
    let lambda = malthus_exponent(model, opts.x0, &opts.malthus, &streams.child("lambda"))?;
    let (lo, hi, k) = opts.h_grid;
    let h_grid = crate::numerics::log_grid(lo, hi, k);
    let (lo, hi, k) = opts.nu_grid;
    let nu_grid = crate::numerics::log_grid(lo, hi, k);
    let h = estimate_h(
        model,
        lambda.lambda,
        opts.x0,
        &h_grid,
        opts.n_h,
        opts.horizon,
        &streams.child("h"),
    )?;
    let h_interp = h.interpolant()?;
    let dq = opts.dq.unwrap_or(opts.malthus.tolerance.max(1e-3));
    let nu = estimate_nu_fd(
        model,
        lambda.lambda,
        &h_interp,
        &nu_grid,
        opts.n_nu,
        dq,
        opts.horizon,
        &streams.child("nu"),
    )?;
    let normalization = nu.profile.pairing(|y| h_interp.h(y));
    Ok(SpectralSolution {
        lambda,
        h,
        h_interp,
        nu,
        normalization,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BinaryKernel, FissionRate, GrowthRate, RatioLaw};

    fn linear() -> ModelSpec {
        ModelSpec::linear(
            0.7,
            FissionRate::Saturating { b: 2.0 },
            BinaryKernel::half(),
        )
    }

    #[test]
    fn no_fission_is_deterministic() {
        let m = ModelSpec::new(
            GrowthRate::Saturating { a: 1.0 },
            FissionRate::Constant { b: 0.0 },
            BinaryKernel::half(),
        );
        let fam = StreamFamily::new(1, "s");
        let e = estimate_laplace(&m, 0.5, 2.0, 0.4, 50, 100.0, &fam).unwrap();
        let s = m.flow_time(0.5, 2.0).unwrap();
        assert!((e.mean - (-0.4 * s).exp() * 4.0).abs() < 1e-12);
        assert_eq!(e.stderr, 0.0);
    }

    #[test]
    fn crn_estimate_is_monotone_and_convex() {
        let m = linear();
        let fam = StreamFamily::new(2, "s");
        let b = HittingBatch::simulate(&m, 1.0, 1.0, 100.0, 2000, &fam).unwrap();
        let qs: Vec<f64> = (0..30).map(|i| 0.2 + 0.05 * i as f64).collect();
        let l: Vec<f64> = qs.iter().map(|&q| b.laplace(q).mean).collect();
        for w in l.windows(2) {
            assert!(w[1] <= w[0]);
        }
        for w in l.windows(3) {
            assert!(w[0] - 2.0 * w[1] + w[2] >= -1e-12);
        }
    }

    #[test]
    fn linear_root_is_growth_rate() {
        let m = linear();
        let fam = StreamFamily::new(3, "s");
        let est = malthus_exponent(&m, 1.0, &MalthusOptions::default(), &fam).unwrap();
        assert!((est.lambda - 0.7).abs() <= 1e-3f64.max(3.0 * est.stderr), "{est:?}");
    }

    #[test]
    fn no_fission_has_no_root() {
        let m = ModelSpec::linear(0.7, FissionRate::Constant { b: 0.0 }, BinaryKernel::half());
        let fam = StreamFamily::new(4, "s");
        let opts = MalthusOptions {
            n_init: 16,
            n_max: 64,
            horizon_max: 100.0,
            ..Default::default()
        };
        assert!(matches!(
            malthus_exponent(&m, 1.0, &opts, &fam),
            Err(Error::NoRoot(_))
        ));
    }

    #[test]
    fn profile_normalization() {
        let h = HarmonicInterp::from_fn(&[0.5, 1.0, 2.0], |x| x).unwrap();
        let mut p = ProfileEstimate {
            grid: vec![0.5, 1.0, 2.0],
            density: vec![1.0, 2.0, 1.0],
            stderr: vec![0.0; 3],
        };
        p.normalize(&h);
        assert!((p.pairing(|y| h.h(y)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_kernel_model_runs() {
        let m = ModelSpec::new(
            GrowthRate::Saturating { a: 1.0 },
            FissionRate::Constant { b: 1.0 },
            BinaryKernel::new(RatioLaw::Uniform { r_min: 0.0 }).unwrap(),
        );
        let fam = StreamFamily::new(5, "s");
        let e = estimate_laplace(&m, 1.0, 1.0, 0.5, 500, 200.0, &fam).unwrap();
        assert!(e.mean > 0.0 && e.envelope.lower <= e.mean);
    }
}
