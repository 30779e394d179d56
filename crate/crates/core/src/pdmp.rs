//! The tagged-cell process `X`: deterministic flow, downward jumps at rate
//! `B(x)`, size-biased choice of the daughter, and its Feynman-Kac weight
//! `E_t = exp(int_0^t c(X_s)/X_s ds)`.
//!
//! Along a flow segment `int c(x(s))/x(s) ds = ln(end/start)`, so the weight
//! is tracked exactly as a sum of log mass ratios and never needs
//! quadrature. The weight is continuous at jumps.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::branching::StoppingLine;
use crate::error::Result;
use crate::model::{check_mass, ModelSpec};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Jump {
    pub time: f64,
    pub pre_mass: f64,
    /// Ratio `post/pre` of the daughter that was followed.
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightedPathState {
    pub x0: f64,
    pub mass: f64,
    /// `ln E_t`
    pub log_weight: f64,
    pub time: f64,
    pub jumps: u32,
    /// `sum over jumps of ln(pre/post)`
    pub log_jump_factor: f64,
    pub jump_history: Option<Vec<Jump>>,
}

impl WeightedPathState {
    pub fn new(x0: f64) -> Result<Self> {
        check_mass(x0)?;
        Ok(Self::start(x0))
    }

    #[inline]
    pub(crate) fn start(x0: f64) -> Self {
        Self {
            x0,
            mass: x0,
            log_weight: 0.0,
            time: 0.0,
            jumps: 0,
            log_jump_factor: 0.0,
            jump_history: None,
        }
    }

    pub fn with_history(mut self) -> Self {
        self.jump_history = Some(Vec::new());
        self
    }

    pub fn weight(&self) -> f64 {
        self.log_weight.exp()
    }

    #[inline]
    fn flow_by(&mut self, new_mass: f64, dt: f64) {
        self.log_weight += (new_mass / self.mass).ln();
        self.mass = new_mass;
        self.time += dt;
    }

    #[inline]
    fn jump_to(&mut self, ratio: f64) {
        if let Some(h) = self.jump_history.as_mut() {
            h.push(Jump {
                time: self.time,
                pre_mass: self.mass,
                ratio,
            });
        }
        self.mass *= ratio;
        self.jumps += 1;
        self.log_jump_factor -= ratio.ln();
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    Jumped,
    Horizon,
}

/// Next accepted jump within `limit` time units from mass `m`, by thinning a
/// rate-`B_max` clock. Returns `(elapsed, pre-jump mass)`.
#[inline]
pub(crate) fn next_jump<R: Rng + ?Sized>(
    model: &ModelSpec,
    m: f64,
    limit: f64,
    rng: &mut R,
) -> Option<(f64, f64)> {
    let b_max = model.b_max();
    if b_max <= 0.0 {
        return None;
    }
    let mut cum = 0.0;
    loop {
        let e: f64 = Exp1.sample(rng);
        cum += e / b_max;
        if cum > limit {
            return None;
        }
        let x = model.flow_unchecked(m, cum);
        if rng.gen::<f64>() * b_max < model.b(x) {
            return Some((cum, x));
        }
    }
}

/// Size-biased daughter: ratio `r` with probability `r`, else `1 - r`.
#[inline]
pub(crate) fn size_biased_ratio<R: Rng + ?Sized>(model: &ModelSpec, mass: f64, rng: &mut R) -> f64 {
    let r = model.kernel.sample(mass, rng);
    if rng.gen::<f64>() < r {
        r
    } else {
        1.0 - r
    }
}

/// Advance to the next jump, or to `horizon` if no jump occurs before it.
pub fn step_pdmp<R: Rng + ?Sized>(
    model: &ModelSpec,
    state: &mut WeightedPathState,
    horizon: f64,
    rng: &mut R,
) -> StepOutcome {
    let limit = horizon - state.time;
    if limit <= 0.0 {
        return StepOutcome::Horizon;
    }
    match next_jump(model, state.mass, limit, rng) {
        None => {
            let m = model.flow_unchecked(state.mass, limit);
            state.flow_by(m, limit);
            state.time = horizon;
            StepOutcome::Horizon
        }
        Some((dt, pre)) => {
            state.flow_by(pre, dt);
            let ratio = size_biased_ratio(model, pre, rng);
            state.jump_to(ratio);
            StepOutcome::Jumped
        }
    }
}

/// Run the path up to exactly time `t`.
pub fn advance_to<R: Rng + ?Sized>(
    model: &ModelSpec,
    state: &mut WeightedPathState,
    t: f64,
    rng: &mut R,
) {
    while step_pdmp(model, state, t, rng) == StepOutcome::Jumped {}
}

/// Outcome of one weighted first-passage simulation. It does not depend on
/// `q`, so one batch of samples serves every `q` (common random numbers).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HittingSample {
    pub hit: bool,
    /// `H(y)` if hit.
    pub hitting_time: f64,
    /// `ln E_{H(y)}` if hit.
    pub log_weight_at_hit: f64,
    pub truncated: bool,
    /// `ln E_horizon` when truncated.
    pub log_weight_at_horizon: f64,
    /// Mass at the horizon when truncated.
    pub mass_at_horizon: f64,
    /// Flow time from the horizon mass up to `y` (0 if already above).
    pub flow_time_to_target: f64,
}

impl HittingSample {
    /// `exp(-q H) E_H 1{H < horizon}`
    #[inline]
    pub fn integrand(&self, q: f64) -> f64 {
        if self.hit {
            (self.log_weight_at_hit - q * self.hitting_time).exp()
        } else {
            0.0
        }
    }

    /// `-H exp(-q H) E_H`, the pathwise derivative in `q`.
    #[inline]
    pub fn integrand_derivative(&self, q: f64) -> f64 {
        if self.hit {
            -self.hitting_time * self.integrand(q)
        } else {
            0.0
        }
    }

    /// Contribution of a truncated path if it flowed to `y` without any
    /// further jump. An estimate, not a bound.
    #[inline]
    pub fn tail_plug_in(&self, q: f64, horizon: f64, y: f64) -> f64 {
        if !self.truncated {
            return 0.0;
        }
        let ratio = (y / self.mass_at_horizon).max(1.0);
        (self.log_weight_at_horizon + ratio.ln() - q * (horizon + self.flow_time_to_target)).exp()
    }

    /// Pathwise bound on what a truncated path could still contribute:
    /// `E_H <= E_T exp(gamma (H - T))` gives `exp(-qH) E_H <= exp(-qT) E_T`
    /// whenever `q >= gamma`. `None` when no bound applies.
    #[inline]
    pub fn tail_bound(&self, q: f64, horizon: f64, gamma: f64) -> Option<f64> {
        if !self.truncated {
            Some(0.0)
        } else if q >= gamma {
            Some((self.log_weight_at_horizon - q * horizon).exp())
        } else {
            None
        }
    }
}

/// First passage at `y` from `x`: first-return semantics when `x == y`
/// (the start does not count), first passage otherwise. Passage happens
/// only by upward flow through `y`; landing exactly on `y` by a jump is a
/// null event for kernels with densities and is ignored.
pub fn sample_hitting<R: Rng + ?Sized>(
    model: &ModelSpec,
    x: f64,
    y: f64,
    horizon: f64,
    rng: &mut R,
) -> HittingSample {
    let mut m = x;
    let mut t = 0.0;
    let mut logw = 0.0;
    loop {
        let to_hit = if m < y {
            model.flow_time_unchecked(m, y)
        } else {
            f64::INFINITY
        };
        let remaining = horizon - t;
        let limit = to_hit.min(remaining);
        match next_jump(model, m, limit, rng) {
            Some((dt, pre)) => {
                logw += (pre / m).ln();
                t += dt;
                m = pre * size_biased_ratio(model, pre, rng);
            }
            None if to_hit <= remaining => {
                return HittingSample {
                    hit: true,
                    hitting_time: t + to_hit,
                    log_weight_at_hit: logw + (y / m).ln(),
                    truncated: false,
                    log_weight_at_horizon: f64::NAN,
                    mass_at_horizon: f64::NAN,
                    flow_time_to_target: 0.0,
                };
            }
            None => {
                let end = model.flow_unchecked(m, remaining);
                return HittingSample {
                    hit: false,
                    hitting_time: f64::INFINITY,
                    log_weight_at_hit: f64::NAN,
                    truncated: true,
                    log_weight_at_horizon: logw + (end / m).ln(),
                    mass_at_horizon: end,
                    flow_time_to_target: if end < y {
                        model.flow_time_unchecked(end, y)
                    } else {
                        0.0
                    },
                };
            }
        }
    }
}

/// State of the tagged cell at a simple stopping line, if reached before
/// `horizon`: `(T, X_T, ln E_T)`.
pub fn stopped_at<R: Rng + ?Sized>(
    model: &ModelSpec,
    x0: f64,
    line: &StoppingLine,
    horizon: f64,
    rng: &mut R,
) -> Option<(f64, f64, f64)> {
    let mut s = WeightedPathState::start(x0);
    match *line {
        StoppingLine::FixedTime { t } => {
            if t > horizon {
                return None;
            }
            advance_to(model, &mut s, t, rng);
            Some((t, s.mass, s.log_weight))
        }
        StoppingLine::JumpCount { k } => {
            while s.jumps < k {
                if step_pdmp(model, &mut s, horizon, rng) == StepOutcome::Horizon {
                    return None;
                }
            }
            Some((s.time, s.mass, s.log_weight))
        }
        StoppingLine::FirstEntrance { lo, hi } => loop {
            if s.mass >= lo && s.mass <= hi {
                return Some((s.time, s.mass, s.log_weight));
            }
            let to_entry = if s.mass < lo {
                model.flow_time_unchecked(s.mass, lo)
            } else {
                f64::INFINITY
            };
            let remaining = horizon - s.time;
            match next_jump(model, s.mass, to_entry.min(remaining), rng) {
                Some((dt, pre)) => {
                    s.flow_by(pre, dt);
                    let ratio = size_biased_ratio(model, pre, rng);
                    s.jump_to(ratio);
                }
                None if to_entry <= remaining => {
                    s.flow_by(lo, to_entry);
                    return Some((s.time, s.mass, s.log_weight));
                }
                None => return None,
            }
        },
    }
}

/// Value of the weighted functional `x0 f(X_t) E_t / X_t` at several
/// increasing times along one path.
pub fn weighted_functional_at<R: Rng + ?Sized>(
    model: &ModelSpec,
    x0: f64,
    times: &[f64],
    rng: &mut R,
    mut record: impl FnMut(usize, &WeightedPathState),
) {
    let mut s = WeightedPathState::start(x0);
    for (i, &t) in times.iter().enumerate() {
        advance_to(model, &mut s, t, rng);
        record(i, &s);
    }
}

/// Simulate a path and dump it as CSV `time,mass,log_weight,event`.
pub fn dump_path<R: Rng + ?Sized, W: Write>(
    model: &ModelSpec,
    x0: f64,
    horizon: f64,
    rng: &mut R,
    out: &mut W,
) -> std::io::Result<WeightedPathState> {
    use crate::io::fmt_f64;
    let mut s = WeightedPathState::start(x0).with_history();
    writeln!(out, "time,mass,log_weight,event")?;
    let row = |out: &mut W, s: &WeightedPathState, ev: &str| {
        writeln!(
            out,
            "{},{},{},{ev}",
            fmt_f64(s.time),
            fmt_f64(s.mass),
            fmt_f64(s.log_weight)
        )
    };
    row(out, &s, "start")?;
    loop {
        let limit = horizon - s.time;
        match next_jump(model, s.mass, limit, rng) {
            None => {
                let m = model.flow_unchecked(s.mass, limit);
                s.flow_by(m, limit);
                s.time = horizon;
                row(out, &s, "horizon")?;
                return Ok(s);
            }
            Some((dt, pre)) => {
                s.flow_by(pre, dt);
                row(out, &s, "pre_jump")?;
                let ratio = size_biased_ratio(model, pre, rng);
                s.jump_to(ratio);
                row(out, &s, "post_jump")?;
            }
        }
    }
}
