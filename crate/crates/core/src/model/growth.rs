use std::fmt;
use std::sync::Arc;

use crate::numerics::Pchip;

pub type RateFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Deterministic growth speed `c(x)` of an individual of mass `x`.
#[derive(Clone)]
pub enum GrowthRate {
    /// `c(x) = a x`
    Linear { a: f64 },
    /// `c(x) = a x / (1 + x)`
    Saturating { a: f64 },
    /// `c(x) = a x^2 / (1 + x^2)`, so `c(x)/x = a x / (1 + x^2)`
    Hump { a: f64 },
    /// `c(x) = a x^p`
    Power { a: f64, p: f64 },
    /// Monotone cubic interpolation of `ln c` against `ln x`; beyond the
    /// table `c(x)/x` is held at its end values.
    Table(LogLogTable),
    Custom(RateFn),
}

impl fmt::Debug for GrowthRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Linear { a } => write!(f, "Linear {{ a: {a} }}"),
            Self::Saturating { a } => write!(f, "Saturating {{ a: {a} }}"),
            Self::Hump { a } => write!(f, "Hump {{ a: {a} }}"),
            Self::Power { a, p } => write!(f, "Power {{ a: {a}, p: {p} }}"),
            Self::Table(t) => write!(f, "Table({} knots)", t.len()),
            Self::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl GrowthRate {
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Self::Linear { a } => a * x,
            Self::Saturating { a } => a * x / (1.0 + x),
            Self::Hump { a } => {
                let x2 = x * x;
                a * x2 / (1.0 + x2)
            }
            Self::Power { a, p } => a * x.powf(*p),
            Self::Table(t) => t.eval(x),
            Self::Custom(f) => f(x),
        }
    }

    /// Closed-form `sup c(x)/x` when the family has one.
    pub fn exact_sup_ratio(&self) -> Option<f64> {
        match self {
            Self::Linear { a } | Self::Saturating { a } => Some(*a),
            Self::Hump { a } => Some(0.5 * a),
            Self::Power { a, p } if *p == 1.0 => Some(*a),
            _ => None,
        }
    }

    pub fn has_closed_form(&self) -> bool {
        matches!(
            self,
            Self::Linear { .. } | Self::Saturating { .. } | Self::Hump { .. } | Self::Power { .. }
        )
    }

    /// Flow `x(t)` from `x0` using the antiderivative of `1/c`, when known.
    /// The outer `None` means no closed form; the inner `None` means the
    /// flow leaves `(0, inf)` before `t`.
    pub(crate) fn flow_closed(&self, x0: f64, t: f64) -> Option<Option<f64>> {
        let v = match self {
            Self::Linear { a } => x0 * (a * t).exp(),
            Self::Saturating { a } => {
                // x = x0 e^u with x0 (e^u - 1) + u = a t
                let target = a * t;
                let mut u = (target / x0).ln_1p();
                for _ in 0..100 {
                    let em1 = u.exp_m1();
                    let g = x0 * em1 + u - target;
                    let dg = x0 * (em1 + 1.0) + 1.0;
                    let du = g / dg;
                    u -= du;
                    if du.abs() <= 1e-16 * u.abs().max(1e-300) {
                        break;
                    }
                }
                x0 * u.exp()
            }
            Self::Hump { a } => {
                // z - 1/z = x0 - 1/x0 + a t
                let k = x0 - 1.0 / x0 + a * t;
                let s = (k * k + 4.0).sqrt();
                if k >= 0.0 {
                    0.5 * (k + s)
                } else {
                    2.0 / (s - k)
                }
            }
            Self::Power { a, p } => {
                if *p == 1.0 {
                    x0 * (a * t).exp()
                } else {
                    let e = 1.0 - p;
                    let base = x0.powf(e) + a * e * t;
                    if base <= 0.0 {
                        return Some(None);
                    }
                    base.powf(1.0 / e)
                }
            }
            Self::Table(_) | Self::Custom(_) => return None,
        };
        Some(v.is_finite().then_some(v))
    }

    /// `int_x^y dz / c(z)` in closed form, when known.
    pub(crate) fn flow_time_closed(&self, x: f64, y: f64) -> Option<f64> {
        match self {
            Self::Linear { a } => Some((y / x).ln() / a),
            Self::Saturating { a } => Some(((y - x) + (y / x).ln()) / a),
            Self::Hump { a } => Some((y - x) * (1.0 + 1.0 / (x * y)) / a),
            Self::Power { a, p } => {
                if *p == 1.0 {
                    Some((y / x).ln() / a)
                } else {
                    let e = 1.0 - p;
                    Some((y.powf(e) - x.powf(e)) / (a * e))
                }
            }
            Self::Table(_) | Self::Custom(_) => None,
        }
    }
}

/// Log-log monotone table used for tabulated growth rates.
#[derive(Clone, Debug)]
pub struct LogLogTable {
    interp: Pchip,
    lo: (f64, f64),
    hi: (f64, f64),
}

impl LogLogTable {
    pub fn new(masses: &[f64], values: &[f64]) -> Self {
        let lx: Vec<f64> = masses.iter().map(|m| m.ln()).collect();
        let ly: Vec<f64> = values.iter().map(|v| v.ln()).collect();
        let n = masses.len();
        Self {
            interp: Pchip::new(lx, ly),
            lo: (masses[0], values[0]),
            hi: (masses[n - 1], values[n - 1]),
        }
    }

    pub fn len(&self) -> usize {
        self.interp.knots().0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn eval(&self, x: f64) -> f64 {
        if x <= self.lo.0 {
            self.lo.1 * x / self.lo.0
        } else if x >= self.hi.0 {
            self.hi.1 * x / self.hi.0
        } else {
            self.interp.eval(x.ln()).exp()
        }
    }
}
