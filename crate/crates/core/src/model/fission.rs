use std::fmt;

use crate::numerics::Pchip;

use super::growth::RateFn;

/// Fission rate `B(x)` with a declared upper bound used for thinning.
#[derive(Clone)]
pub enum FissionRate {
    Constant { b: f64 },
    /// `B(x) = b x / (1 + x)`
    Saturating { b: f64 },
    /// `B(x) = b x^2 / (1 + x^2)`
    Hill { b: f64 },
    /// Monotone cubic interpolation of `B` against `ln x`, constant beyond
    /// the table.
    Table { interp: Pchip, bound: f64 },
    Custom { rate: RateFn, bound: f64 },
}

impl fmt::Debug for FissionRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant { b } => write!(f, "Constant {{ b: {b} }}"),
            Self::Saturating { b } => write!(f, "Saturating {{ b: {b} }}"),
            Self::Hill { b } => write!(f, "Hill {{ b: {b} }}"),
            Self::Table { bound, .. } => write!(f, "Table {{ bound: {bound} }}"),
            Self::Custom { bound, .. } => write!(f, "Custom {{ bound: {bound} }}"),
        }
    }
}

impl FissionRate {
    pub fn table(masses: &[f64], values: &[f64]) -> Self {
        let lx = masses.iter().map(|m| m.ln()).collect();
        let bound = values.iter().cloned().fold(0.0, f64::max);
        Self::Table {
            interp: Pchip::new(lx, values.to_vec()),
            bound,
        }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Self::Constant { b } => *b,
            Self::Saturating { b } => b * x / (1.0 + x),
            Self::Hill { b } => {
                let x2 = x * x;
                b * x2 / (1.0 + x2)
            }
            Self::Table { interp, .. } => interp.eval(x.ln()).max(0.0),
            Self::Custom { rate, .. } => rate(x),
        }
    }

    /// Declared `||B||_inf`.
    pub fn bound(&self) -> f64 {
        match self {
            Self::Constant { b } | Self::Saturating { b } | Self::Hill { b } => *b,
            Self::Table { bound, .. } | Self::Custom { bound, .. } => *bound,
        }
    }

    pub fn is_constant(&self) -> Option<f64> {
        match self {
            Self::Constant { b } => Some(*b),
            _ => None,
        }
    }
}
