//! The spine: the tagged cell under the `h`-tilted law. It fragments at
//! rate `w(x) B(x) / h(x)` with `w(x) = E[h(r x) + h((1-r) x)]`, and
//! follows the daughter `p x` with probability proportional to `h(p x)`.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::diagnostics::Verdict;
use crate::error::{Error, Result};
use crate::model::{check_mass, ModelSpec};
use crate::numerics::{log_grid, GaussRule};
use crate::par::replicate;
use crate::rng::StreamFamily;
use crate::spectral::{HarmonicInterp, MalthusEstimate};
use crate::stats::{relative_l1, MeanEstimate};

#[derive(Clone, Debug)]
pub struct SpineModel {
    pub base: ModelSpec,
    pub h: HarmonicInterp,
    ell_min: f64,
    ell_max: f64,
    /// Dominating rate of the thinning clock.
    rate_bound: f64,
    /// Interpolation knots of `h`; band `k` is `[knots[k-1], knots[k])`.
    knots: Vec<f64>,
    /// Thinning rate valid inside each band.
    band_rates: Vec<f64>,
    /// Masses the spine may visit before the run is flagged.
    range: (f64, f64),
}

pub fn build_spine_model(model: &ModelSpec, h: &HarmonicInterp) -> Result<SpineModel> {
    let (ell_min, ell_max) = h.ell_bounds();
    if !(ell_min > 0.0) || !ell_max.is_finite() {
        let (lo, _) = h.span();
        return Err(Error::InvalidHarmonic {
            x: lo,
            value: ell_min,
        });
    }
    let (lo, hi) = h.span();
    let (knots, ells) = h.knots();
    // In band [k_{i-1}, k_i) a daughter lies below k_i, so
    // ell(p x) / ell(x) <= max_{y <= k_i} ell / min_band ell.
    let b_max = model.b_max();
    let mut band_rates = Vec::with_capacity(knots.len() + 1);
    band_rates.push(b_max);
    let mut running_max = ells[0];
    for i in 1..knots.len() {
        running_max = running_max.max(ells[i]);
        band_rates.push(b_max * running_max / ells[i - 1].min(ells[i]));
    }
    band_rates.push(b_max * ell_max / ells[ells.len() - 1]);
    Ok(SpineModel {
        base: model.clone(),
        h: h.clone(),
        ell_min,
        ell_max,
        rate_bound: model.b_max() * ell_max / ell_min,
        knots,
        band_rates,
        range: (lo / 10.0, hi * 10.0),
    })
}

impl SpineModel {
    pub fn with_range(mut self, lo: f64, hi: f64) -> Self {
        self.range = (lo, hi);
        self
    }

    pub fn range(&self) -> (f64, f64) {
        self.range
    }

    /// Extremes of `ell = h/x` over the interpolation knots.
    pub fn ell_bounds(&self) -> (f64, f64) {
        (self.ell_min, self.ell_max)
    }

    /// `sup B_tilde <= ||ell|| ||B|| / ell_min`.
    pub fn rate_bound(&self) -> f64 {
        self.rate_bound
    }

    #[inline]
    pub fn h(&self, x: f64) -> f64 {
        self.h.h(x)
    }

    /// `w(x) = E[h(r x) + h((1-r) x)]`.
    pub fn w(&self, x: f64) -> f64 {
        self.base
            .kernel
            .expect(x, |r| self.h(r * x) + self.h((1.0 - r) * x))
    }

    pub fn tilted_rate(&self, x: f64) -> f64 {
        self.w(x) * self.base.b(x) / self.h(x)
    }

    /// Probability of following daughter `r x` given ratio `r`.
    pub fn pick_probability(&self, x: f64, r: f64) -> f64 {
        let a = self.h(r * x);
        a / (a + self.h((1.0 - r) * x))
    }

    /// Next spine jump within `limit` from mass `m`: `(elapsed, pre, post)`.
    ///
    /// Proposals at a band-wise constant rate `R` carry `r ~ kernel` and a
    /// size-biased pick `p`; acceptance `B(x) ell(p x) / (ell(x) R)` turns
    /// the proposal intensity `R p` into `B(x) h(p x) / h(x)`.
    pub fn next_jump<R: Rng + ?Sized>(
        &self,
        m: f64,
        limit: f64,
        rng: &mut R,
    ) -> Option<(f64, f64, f64)> {
        if self.rate_bound <= 0.0 {
            return None;
        }
        // flow restarts from the band entry point (start, t_start)
        let mut start = m;
        let mut t_start = 0.0;
        let mut band = self.knots.partition_point(|&k| k <= m);
        let mut band_exit = self.band_exit(start, band);
        let mut cum = 0.0;
        loop {
            let rate = self.band_rates[band];
            let e: f64 = Exp1.sample(rng);
            let proposal = cum + e / rate;
            let exit_at = t_start + band_exit;
            if exit_at < proposal && exit_at < limit {
                // memoryless clock: restart in the next band
                start = self.knots[band];
                t_start = exit_at;
                cum = exit_at;
                band += 1;
                band_exit = self.band_exit(start, band);
                continue;
            }
            cum = proposal;
            if cum > limit {
                return None;
            }
            let x = self.base.flow_unchecked(start, cum - t_start);
            let r = self.base.kernel.sample(x, rng);
            let p = if rng.gen::<f64>() < r { r } else { 1.0 - r };
            let accept = self.base.b(x) * self.h.ell(p * x) / (self.h.ell(x) * rate);
            if rng.gen::<f64>() < accept {
                return Some((cum, x, p * x));
            }
        }
    }

    fn band_exit(&self, start: f64, band: usize) -> f64 {
        match self.knots.get(band) {
            Some(&k) if k > start => self.base.flow_time_unchecked(start, k),
            Some(_) => 0.0,
            None => f64::INFINITY,
        }
    }
}

/// Time and `1/h`-weighted time spent in each mass bin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Occupation {
    pub edges: Vec<f64>,
    /// `int 1{X in bin} ds`
    pub time: Vec<f64>,
    /// `int 1{X in bin} / h(X) ds`
    pub inv_h: Vec<f64>,
    /// Jumps taken from inside each bin.
    pub jumps: Vec<u64>,
    pub outside_time: f64,
    pub total_time: f64,
}

impl Occupation {
    pub fn new(edges: &[f64]) -> Self {
        let k = edges.len().saturating_sub(1);
        Self {
            edges: edges.to_vec(),
            time: vec![0.0; k],
            inv_h: vec![0.0; k],
            jumps: vec![0; k],
            outside_time: 0.0,
            total_time: 0.0,
        }
    }

    pub fn merge(&mut self, other: &Occupation) {
        for (a, b) in self.time.iter_mut().zip(&other.time) {
            *a += b;
        }
        for (a, b) in self.inv_h.iter_mut().zip(&other.inv_h) {
            *a += b;
        }
        for (a, b) in self.jumps.iter_mut().zip(&other.jumps) {
            *a += b;
        }
        self.outside_time += other.outside_time;
        self.total_time += other.total_time;
    }

    fn bin_of(&self, x: f64) -> Option<usize> {
        if x < self.edges[0] || x >= self.edges[self.edges.len() - 1] {
            return None;
        }
        Some(self.edges.partition_point(|&e| e <= x) - 1)
    }

    /// Add the upward flow segment `m1 -> m2` lasting `dt`.
    fn add_segment(&mut self, spine: &SpineModel, m1: f64, m2: f64, dt: f64, gl: &GaussRule) {
        self.total_time += dt;
        let mut inside = 0.0;
        let first = self.edges.partition_point(|&e| e <= m1).saturating_sub(1);
        for b in first..self.time.len() {
            let (lo, hi) = (self.edges[b], self.edges[b + 1]);
            if lo >= m2 {
                break;
            }
            let a = m1.max(lo);
            let c = m2.min(hi);
            if c <= a {
                continue;
            }
            let t = spine.base.flow_time_unchecked(a, c);
            self.time[b] += t;
            inside += t;
            // ds = dx / c(x) = d(ln x) / (c(x)/x)
            self.inv_h[b] += gl.integrate(a.ln(), c.ln(), |u| {
                let x = u.exp();
                x / (spine.base.c(x) * spine.h(x))
            });
        }
        self.outside_time += (dt - inside).max(0.0);
    }

    fn add_jump(&mut self, pre: f64) {
        if let Some(b) = self.bin_of(pre) {
            self.jumps[b] += 1;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpineOptions {
    pub horizon: f64,
    pub replicates: usize,
    pub burn_in_fraction: f64,
    /// Relative L1 gap between the two half-run histograms that triggers a
    /// mixing warning.
    pub mixing_tolerance: f64,
}

impl Default for SpineOptions {
    fn default() -> Self {
        Self {
            horizon: 20_000.0,
            replicates: 32,
            burn_in_fraction: 0.2,
            mixing_tolerance: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpineRun {
    /// Occupation over the first and second halves of the post-burn-in window.
    pub halves: [Occupation; 2],
    pub jumps: u64,
    pub escaped: bool,
    pub final_mass: f64,
    pub max_mass: f64,
    /// Times between successive upward passages through `x0`.
    pub return_times: Vec<f64>,
}

impl SpineRun {
    pub fn occupation(&self) -> Occupation {
        let mut o = self.halves[0].clone();
        o.merge(&self.halves[1]);
        o
    }
}

pub fn simulate_spine<R: Rng + ?Sized>(
    spine: &SpineModel,
    x0: f64,
    horizon: f64,
    burn_in_fraction: f64,
    edges: &[f64],
    rng: &mut R,
) -> Result<SpineRun> {
    check_mass(x0)?;
    if !(horizon > 0.0) || !(0.0..1.0).contains(&burn_in_fraction) || edges.len() < 2 {
        return Err(Error::domain("simulate_spine: invalid horizon, burn-in or bins"));
    }
    let gl = GaussRule::new(4);
    let t_burn = burn_in_fraction * horizon;
    let t_mid = 0.5 * (t_burn + horizon);
    let windows = [(t_burn, t_mid), (t_mid, horizon)];
    let mut halves = [Occupation::new(edges), Occupation::new(edges)];
    let (lo, hi) = spine.range;
    let mut m = x0;
    let mut t = 0.0;
    let mut jumps = 0;
    let mut max_mass = x0;
    let mut returns = Vec::new();
    let mut last_pass: Option<f64> = None;
    let mut escaped = false;

    loop {
        let limit = horizon - t;
        let step = spine.next_jump(m, limit, rng);
        let (dt, pre) = match step {
            Some((dt, pre, _)) => (dt, pre),
            None => (limit, spine.base.flow_unchecked(m, limit)),
        };
        // upward passage through x0 during this segment
        if m < x0 && pre >= x0 {
            let tp = t + spine.base.flow_time_unchecked(m, x0);
            if let Some(prev) = last_pass {
                returns.push(tp - prev);
            }
            last_pass = Some(tp);
        }
        for (w, occ) in windows.iter().zip(halves.iter_mut()) {
            let a = t.max(w.0);
            let b = (t + dt).min(w.1);
            if b > a {
                let ma = if a > t { spine.base.flow_unchecked(m, a - t) } else { m };
                let mb = if b < t + dt { spine.base.flow_unchecked(m, b - t) } else { pre };
                occ.add_segment(spine, ma, mb, b - a, &gl);
            }
        }
        max_mass = max_mass.max(pre);
        if pre > hi {
            escaped = true;
            m = pre;
            break;
        }
        match step {
            None => {
                m = pre;
                break;
            }
            Some((_, _, post)) => {
                t += dt;
                jumps += 1;
                for (w, occ) in windows.iter().zip(halves.iter_mut()) {
                    if t >= w.0 && t < w.1 {
                        occ.add_jump(pre);
                    }
                }
                m = post;
                if m < lo {
                    escaped = true;
                    break;
                }
            }
        }
    }
    Ok(SpineRun {
        halves,
        jumps,
        escaped,
        final_mass: m,
        max_mass,
        return_times: returns,
    })
}

/// Spine masses at increasing times; `None` once the run leaves the
/// operational range.
pub fn spine_positions_at<R: Rng + ?Sized>(
    spine: &SpineModel,
    x0: f64,
    times: &[f64],
    rng: &mut R,
) -> Vec<Option<f64>> {
    let (lo, hi) = spine.range;
    let mut out = Vec::with_capacity(times.len());
    let mut m = x0;
    let mut t = 0.0;
    let mut alive = true;
    for &target in times {
        while alive {
            match spine.next_jump(m, target - t, rng) {
                Some((dt, _, post)) => {
                    t += dt;
                    m = post;
                    if m < lo {
                        alive = false;
                    }
                }
                None => {
                    m = spine.base.flow_unchecked(m, target - t);
                    t = target;
                    if m > hi {
                        alive = false;
                    }
                    break;
                }
            }
        }
        out.push(if alive { Some(m) } else { None });
    }
    out
}

/// Profile `nu = pi / h` from spine occupation, binned on `edges`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpineProfile {
    pub edges: Vec<f64>,
    /// `pi` mass per bin, normalized to total 1 over the bins.
    pub pi_mass: Vec<f64>,
    /// `nu` mass per bin on the same scale, so `<nu, h> = sum pi_mass = 1`.
    pub nu_mass: Vec<f64>,
    pub nu_stderr: Vec<f64>,
    /// Fraction of post-burn-in time spent outside the bins.
    pub outside_fraction: f64,
    pub replicates: usize,
    pub escaped_replicates: usize,
    /// Relative L1 gap between the half-run `pi` histograms.
    pub mixing_gap: f64,
    pub mixing_warning: bool,
    pub jumps: Vec<u64>,
    pub total_time: f64,
    pub mean_return_time: f64,
}

impl SpineProfile {
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut t = crate::io::CsvTable::new(&[
            "bin_left",
            "bin_right",
            "mass_fraction",
            "nu_mass",
            "nu_stderr",
        ]);
        for b in 0..self.pi_mass.len() {
            t.push_floats(&[
                self.edges[b],
                self.edges[b + 1],
                self.pi_mass[b],
                self.nu_mass[b],
                self.nu_stderr[b],
            ]);
        }
        t.write(path)
    }
}

pub fn estimate_nu_spine(
    spine: &SpineModel,
    x0: f64,
    edges: &[f64],
    opts: &SpineOptions,
    streams: &StreamFamily,
) -> Result<SpineProfile> {
    if opts.replicates == 0 {
        return Err(Error::domain("need at least one spine replicate"));
    }
    let runs = replicate(0, opts.replicates as u64, |i| {
        simulate_spine(
            spine,
            x0,
            opts.horizon,
            opts.burn_in_fraction,
            edges,
            &mut streams.stream(i),
        )
    });
    let runs: Vec<SpineRun> = runs.into_iter().collect::<Result<_>>()?;
    let kept: Vec<&SpineRun> = runs.iter().filter(|r| !r.escaped).collect();
    let escaped = runs.len() - kept.len();
    if kept.is_empty() {
        return Err(Error::domain("every spine replicate left the operational range"));
    }
    let mut halves = [Occupation::new(edges), Occupation::new(edges)];
    let mut all = Occupation::new(edges);
    let mut returns = Vec::new();
    for r in &kept {
        halves[0].merge(&r.halves[0]);
        halves[1].merge(&r.halves[1]);
        all.merge(&r.occupation());
        returns.extend_from_slice(&r.return_times);
    }
    let inside: f64 = all.time.iter().sum();
    let pi_mass: Vec<f64> = all.time.iter().map(|t| t / inside).collect();
    let nu_mass: Vec<f64> = all.inv_h.iter().map(|v| v / inside).collect();

    // replicate-level spread of the ratio estimator
    let k = edges.len() - 1;
    let mut nu_stderr = vec![0.0; k];
    if kept.len() > 1 {
        for (b, se) in nu_stderr.iter_mut().enumerate() {
            let per: Vec<f64> = kept
                .iter()
                .map(|r| {
                    let o = r.occupation();
                    let tin: f64 = o.time.iter().sum();
                    o.inv_h[b] - nu_mass[b] * tin
                })
                .collect();
            let e = MeanEstimate::from_samples(&per);
            *se = e.stderr / (inside / kept.len() as f64);
        }
    }
    let norm = |o: &Occupation| -> Vec<f64> {
        let s: f64 = o.time.iter().sum();
        o.time.iter().map(|t| t / s).collect()
    };
    let mixing_gap = relative_l1(&norm(&halves[0]), &norm(&halves[1]));
    Ok(SpineProfile {
        edges: edges.to_vec(),
        pi_mass,
        nu_mass,
        nu_stderr,
        outside_fraction: all.outside_time / all.total_time,
        replicates: kept.len(),
        escaped_replicates: escaped,
        mixing_gap,
        mixing_warning: mixing_gap > opts.mixing_tolerance,
        jumps: all.jumps,
        total_time: all.total_time,
        mean_return_time: if returns.is_empty() {
            f64::NAN
        } else {
            returns.iter().sum::<f64>() / returns.len() as f64
        },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EndBehaviour {
    /// Largest `c(x)/x` on the probe window.
    pub sup_ratio: f64,
    pub window: (f64, f64),
    /// `lambda - sup_ratio`
    pub margin: f64,
    /// `c/x` reaches `sup c/x` here, so `lambda <= sup` forbids a strict gap.
    pub at_global_sup: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub lambda: f64,
    pub lambda_stderr: f64,
    pub gamma: f64,
    pub near_zero: EndBehaviour,
    pub near_infinity: EndBehaviour,
    pub verdict: Verdict,
    pub note: String,
}

const PROBE_POINTS: usize = 201;
const Z: f64 = 3.0;

/// Compare `c/x` near 0 (on `[1e-8, 1e-6]`) and near infinity (on
/// `[1e6, 1e8]`) against the Malthus exponent.
pub fn check_condition_main(model: &ModelSpec, lambda: &MalthusEstimate) -> ConditionReport {
    let gamma = model.gamma();
    let probe = |lo: f64, hi: f64| {
        let sup = log_grid(lo, hi, PROBE_POINTS)
            .into_iter()
            .map(|x| model.c(x) / x)
            .fold(f64::NEG_INFINITY, f64::max);
        EndBehaviour {
            sup_ratio: sup,
            window: (lo, hi),
            margin: lambda.lambda - sup,
            at_global_sup: sup >= gamma * (1.0 - 1e-9),
        }
    };
    let near_zero = probe(1e-8, 1e-6);
    let near_infinity = probe(1e6, 1e8);
    let se = lambda.stderr.max(0.0);
    let ends = [&near_zero, &near_infinity];
    let (verdict, note) = if ends.iter().any(|e| e.at_global_sup) {
        (
            Verdict::Fail,
            "c/x attains its supremum at an end; since lambda <= sup c/x the strict inequality cannot hold"
                .to_string(),
        )
    } else if ends.iter().any(|e| e.margin < -Z * se) {
        (Verdict::Fail, "c/x exceeds lambda at an end".to_string())
    } else if ends.iter().all(|e| e.margin > Z * se) {
        (
            Verdict::Pass,
            format!(
                "margins {:.4e} (near 0) and {:.4e} (near infinity) exceed 3 stderr",
                near_zero.margin, near_infinity.margin
            ),
        )
    } else {
        (
            Verdict::Inconclusive,
            "a margin lies within the confidence band of lambda".to_string(),
        )
    };
    ConditionReport {
        lambda: lambda.lambda,
        lambda_stderr: se,
        gamma,
        near_zero,
        near_infinity,
        verdict,
        note,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BinaryKernel, FissionRate, GrowthRate, RatioLaw};

    fn hump() -> ModelSpec {
        ModelSpec::new(
            GrowthRate::Hump { a: 3.0 },
            FissionRate::Saturating { b: 4.0 },
            BinaryKernel::new(RatioLaw::Beta { alpha: 2.0 }).unwrap(),
        )
    }

    #[test]
    fn linear_h_gives_untilted_rates() {
        let m = ModelSpec::linear(0.7, FissionRate::Constant { b: 1.5 }, BinaryKernel::new(RatioLaw::Uniform { r_min: 0.0 }).unwrap());
        let h = HarmonicInterp::from_fn(&log_grid(0.01, 100.0, 9), |x| x).unwrap();
        let s = build_spine_model(&m, &h).unwrap();
        for &x in &[0.1, 1.0, 7.0] {
            assert!((s.tilted_rate(x) - 1.5).abs() < 1e-10);
            assert!((s.pick_probability(x, 0.2) - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_split_picks_evenly() {
        let h = HarmonicInterp::from_fn(&log_grid(0.01, 100.0, 9), |x| x * (1.0 + x) / (2.0 + x)).unwrap();
        let m = ModelSpec::linear(0.7, FissionRate::Constant { b: 1.5 }, BinaryKernel::half());
        let s = build_spine_model(&m, &h).unwrap();
        assert_eq!(s.pick_probability(3.0, 0.5), 0.5);
    }

    #[test]
    fn jump_counts_match_tilted_compensator() {
        // given the path, jumps from a bin are Poisson with mean int B_tilde ds
        let h = HarmonicInterp::from_fn(&log_grid(0.05, 20.0, 12), |x| x * (1.0 + 0.5 * x) / (1.0 + x)).unwrap();
        let m = hump();
        let s = build_spine_model(&m, &h).unwrap();
        let edges = log_grid(0.3, 3.0, 4);
        let gl = GaussRule::new(6);
        let fam = StreamFamily::new(9, "spine");
        let mut jumps = vec![0.0; 3];
        let mut comp = vec![0.0; 3];
        for i in 0..4 {
            let mut rng = fam.stream(i);
            let (mut mass, mut t, horizon) = (1.0, 0.0, 300.0);
            while t < horizon {
                let step = s.next_jump(mass, horizon - t, &mut rng);
                let (dt, pre) = match step {
                    Some((dt, pre, _)) => (dt, pre),
                    None => (horizon - t, m.flow(mass, horizon - t).unwrap()),
                };
                for b in 0..3 {
                    let (lo, hi) = (mass.max(edges[b]), pre.min(edges[b + 1]));
                    if hi > lo {
                        comp[b] += gl.integrate(lo.ln(), hi.ln(), |u| {
                            let x = u.exp();
                            s.tilted_rate(x) * x / m.c(x)
                        });
                    }
                    if step.is_some() && pre >= edges[b] && pre < edges[b + 1] {
                        jumps[b] += 1.0;
                    }
                }
                t += dt;
                if let Some((_, _, post)) = step {
                    mass = post;
                }
            }
        }
        for b in 0..3 {
            let z = (jumps[b] - comp[b]) / comp[b].sqrt();
            assert!(comp[b] > 100.0 && z.abs() < 4.5, "bin {b}: {} vs {}", jumps[b], comp[b]);
        }
    }

    #[test]
    fn no_fission_spine_flows_out() {
        let m = ModelSpec::linear(0.7, FissionRate::Constant { b: 0.0 }, BinaryKernel::half());
        let h = HarmonicInterp::from_fn(&log_grid(0.1, 10.0, 5), |x| x).unwrap();
        let s = build_spine_model(&m, &h).unwrap();
        let r = simulate_spine(&s, 1.0, 100.0, 0.2, &log_grid(0.1, 10.0, 5), &mut StreamFamily::new(1, "s").stream(0)).unwrap();
        assert!(r.escaped);
        assert_eq!(r.jumps, 0);
    }

    #[test]
    fn condition_linear_fails_hump_passes() {
        let est = |l: f64| MalthusEstimate {
            lambda: l,
            stderr: 1e-3,
            bracket: (l, l),
            x0: 1.0,
            n: 1,
            horizon: 1.0,
            derivative: -1.0,
            truncated_fraction: 0.0,
            plug_in_tail: false,
            converged: true,
            trace: vec![],
        };
        let lin = ModelSpec::linear(0.7, FissionRate::Constant { b: 1.0 }, BinaryKernel::half());
        assert_eq!(check_condition_main(&lin, &est(0.7)).verdict, Verdict::Fail);
        let r = check_condition_main(&hump(), &est(1.15));
        assert_eq!(r.verdict, Verdict::Pass);
        assert!(r.near_zero.sup_ratio < 1e-5 && r.near_infinity.sup_ratio < 1e-5);
    }
}
