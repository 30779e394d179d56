//! Growth-fragmentation model: growth speed `c`, fission rate `B` and a
//! binary fragmentation kernel, plus the deterministic flow between
//! fissions.

mod config;
mod fission;
mod growth;
mod kernel;

pub use config::{registry, FamilyInfo, FissionConfig, GridConfig, KernelConfig, ModelConfig};
pub use fission::FissionRate;
pub use growth::{GrowthRate, LogLogTable, RateFn};
pub use kernel::{BinaryKernel, RatioLaw};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{integrate_adaptive, integrate_ode, log_grid};

/// Relative tolerance of the numerical flow and quadrature fallbacks.
pub const FLOW_RTOL: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct ModelSpec {
    pub growth: GrowthRate,
    pub fission: FissionRate,
    pub kernel: BinaryKernel,
    validation_grid: Vec<f64>,
    gamma: f64,
}

impl ModelSpec {
    pub fn new(growth: GrowthRate, fission: FissionRate, kernel: BinaryKernel) -> Self {
        Self::with_grid(growth, fission, kernel, log_grid(1e-6, 1e6, 512))
    }

    pub fn with_grid(
        growth: GrowthRate,
        fission: FissionRate,
        kernel: BinaryKernel,
        validation_grid: Vec<f64>,
    ) -> Self {
        let gamma = growth.exact_sup_ratio().unwrap_or_else(|| {
            validation_grid
                .iter()
                .map(|&x| growth.eval(x) / x)
                .fold(f64::NEG_INFINITY, f64::max)
        });
        Self {
            growth,
            fission,
            kernel,
            validation_grid,
            gamma,
        }
    }

    /// `c(x) = a x`, constant fission `b`, kernel `kernel`.
    pub fn linear(a: f64, fission: FissionRate, kernel: BinaryKernel) -> Self {
        Self::new(GrowthRate::Linear { a }, fission, kernel)
    }

    pub fn validation_grid(&self) -> &[f64] {
        &self.validation_grid
    }

    /// `gamma = sup c(x)/x`, exact for closed-form families, otherwise the
    /// maximum over the validation grid.
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn b_max(&self) -> f64 {
        self.fission.bound()
    }

    #[inline]
    pub fn c(&self, x: f64) -> f64 {
        self.growth.eval(x)
    }

    #[inline]
    pub fn b(&self, x: f64) -> f64 {
        self.fission.eval(x)
    }

    /// Mass at time `t` of an individual of initial mass `x0` that has not
    /// split, i.e. the solution of `x' = c(x)`, `x(0) = x0`.
    pub fn flow(&self, x0: f64, t: f64) -> Result<f64> {
        check_mass(x0)?;
        if !(t >= 0.0) {
            return Err(Error::domain(format!("flow duration must be >= 0, got {t}")));
        }
        if t == 0.0 {
            return Ok(x0);
        }
        let fail = |reason: &str| Error::Integration {
            x0,
            t,
            reason: reason.to_string(),
        };
        match self.growth.flow_closed(x0, t) {
            Some(Some(x)) => Ok(x),
            Some(None) => Err(fail("closed-form flow left (0, inf)")),
            None => {
                // integrate in log-mass, where c(x)/x is bounded
                let g = |u: f64| {
                    let x = u.exp();
                    self.growth.eval(x) / x
                };
                integrate_ode(g, x0.ln(), t, FLOW_RTOL * 0.1)
                    .map(f64::exp)
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| fail("non-finite state"))
            }
        }
    }

    /// Time `s(x, y) = int_x^y dz / c(z)` for the flow to rise from `x` to `y`.
    pub fn flow_time(&self, x: f64, y: f64) -> Result<f64> {
        check_mass(x)?;
        check_mass(y)?;
        if x > y {
            return Err(Error::domain(format!(
                "flow is increasing: cannot go from {x} down to {y}"
            )));
        }
        Ok(self.flow_time_unchecked(x, y))
    }

    #[inline]
    pub(crate) fn flow_time_unchecked(&self, x: f64, y: f64) -> f64 {
        if x == y {
            return 0.0;
        }
        match self.growth.flow_time_closed(x, y) {
            Some(s) => s,
            None => integrate_adaptive(x.ln(), y.ln(), FLOW_RTOL * 0.1, |u| {
                let z = u.exp();
                z / self.growth.eval(z)
            }),
        }
    }

    #[inline]
    pub(crate) fn flow_unchecked(&self, x0: f64, t: f64) -> f64 {
        match self.growth.flow_closed(x0, t) {
            Some(Some(x)) => x,
            _ => self.flow(x0, t).unwrap_or(f64::INFINITY),
        }
    }

    /// Probability of no fission during `[0, t]` from mass `x0`:
    /// `exp(-int_{x0}^{x(t)} B(y)/c(y) dy)`.
    pub fn survival_probability(&self, x0: f64, t: f64) -> Result<f64> {
        let xt = self.flow(x0, t)?;
        if let Some(b) = self.fission.is_constant() {
            return Ok((-b * t).exp());
        }
        if xt == x0 {
            return Ok(1.0);
        }
        let hazard = integrate_adaptive(x0.ln(), xt.ln(), FLOW_RTOL * 0.1, |u| {
            let z = u.exp();
            self.fission.eval(z) * z / self.growth.eval(z)
        });
        Ok((-hazard).exp())
    }

    /// Numerical check of the standing assumptions on the validation grid.
    pub fn validate(&self) -> ValidationReport {
        let grid = &self.validation_grid;
        let mut items = Vec::new();
        let ratios: Vec<f64> = grid.iter().map(|&x| self.c(x) / x).collect();

        let positive = grid.iter().all(|&x| {
            let c = self.c(x);
            c > 0.0 && c.is_finite()
        });
        items.push(ValidationItem::new(
            "growth_positive",
            positive,
            "c(x) > 0 and finite on the validation grid".into(),
        ));

        let (imax, gamma_grid) = ratios
            .iter()
            .cloned()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, v)| {
                if v > acc.1 {
                    (i, v)
                } else {
                    acc
                }
            });
        // A maximum sitting at a grid edge while c/x is still moving there
        // means the supremum over (0, inf) is not captured by the grid.
        let n = grid.len();
        let edge_slope = |i: usize, j: usize| {
            (ratios[j].ln() - ratios[i].ln()).abs() / (grid[j].ln() - grid[i].ln()).abs()
        };
        let unbounded = gamma_grid.is_finite()
            && ((imax == 0 && edge_slope(0, 1.min(n - 1)) > 0.05)
                || (imax == n - 1 && edge_slope(n - 2, n - 1) > 0.05));
        items.push(ValidationItem::new(
            "growth_ratio_bounded",
            gamma_grid.is_finite() && !unbounded,
            format!("sup c(x)/x on grid = {gamma_grid:.6e} at x = {:.3e}", grid[imax]),
        ));

        let b_max = self.b_max();
        let mut b_sup = 0.0f64;
        let mut b_ok = b_max.is_finite() && b_max >= 0.0;
        for &x in grid {
            let b = self.b(x);
            b_sup = b_sup.max(b);
            if !(b >= 0.0 && b <= b_max * (1.0 + 1e-12)) {
                b_ok = false;
            }
        }
        items.push(ValidationItem::new(
            "fission_bounded",
            b_ok,
            format!("0 <= B(x) <= {b_max} on grid; grid sup = {b_sup:.6e}"),
        ));

        ValidationReport {
            gamma_estimate: gamma_grid,
            b_sup,
            items,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ValidationItem {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl ValidationItem {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.into(),
            passed,
            detail,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ValidationReport {
    pub gamma_estimate: f64,
    pub b_sup: f64,
    pub items: Vec<ValidationItem>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.items.iter().all(|i| i.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ValidationItem> {
        self.items.iter().filter(|i| !i.passed)
    }
}

pub(crate) fn check_mass(x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("mass must be positive and finite, got {x}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    fn saturating(a: f64, b: FissionRate) -> ModelSpec {
        ModelSpec::new(GrowthRate::Saturating { a }, b, BinaryKernel::half())
    }

    fn custom_growth(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> ModelSpec {
        ModelSpec::new(
            GrowthRate::Custom(Arc::new(f)),
            FissionRate::Constant { b: 1.0 },
            BinaryKernel::half(),
        )
    }

    #[test]
    fn linear_flow_is_exponential() {
        let m = ModelSpec::linear(0.7, FissionRate::Constant { b: 1.0 }, BinaryKernel::half());
        assert!((m.flow(1.0, 1.0).unwrap() - 0.7f64.exp()).abs() < 1e-15);
        assert_eq!(m.flow(2.5, 0.0).unwrap(), 2.5);
        let s = m.flow_time(1.0, 3.0).unwrap();
        assert!((s - 3f64.ln() / 0.7).abs() < 1e-15);
    }

    #[test]
    fn saturating_flow_matches_independent_integration() {
        // x + ln x = 1 + 2 at t = 2 from x0 = 1; oracle: RK at 1e-12 on the
        // raw ODE in mass coordinates.
        let m = saturating(1.0, FissionRate::Constant { b: 0.0 });
        let oracle = integrate_ode(|x| x / (1.0 + x), 1.0, 2.0, 1e-12).unwrap();
        let x = m.flow(1.0, 2.0).unwrap();
        assert!((x - oracle).abs() / oracle < 1e-9, "{x} vs {oracle}");
        assert!((x + x.ln() - 3.0).abs() < 1e-12);
        // the custom (numerical) path agrees too
        let c = custom_growth(|x| x / (1.0 + x));
        let xc = c.flow(1.0, 2.0).unwrap();
        assert!((xc - oracle).abs() / oracle < 1e-8, "{xc} vs {oracle}");
    }

    #[test]
    fn saturating_flow_time_matches_quadrature() {
        let m = saturating(1.0, FissionRate::Constant { b: 0.0 });
        let quad = integrate_adaptive(1.0, 2.0, 1e-13, |z| (1.0 + z) / z);
        assert!((m.flow_time(1.0, 2.0).unwrap() - quad).abs() < 1e-12);
        let c = custom_growth(|x| x / (1.0 + x));
        assert!((c.flow_time(1.0, 2.0).unwrap() - quad).abs() / quad < 1e-9);
        assert_eq!(m.flow_time(1.5, 1.5).unwrap(), 0.0);
        assert!(matches!(m.flow_time(2.0, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn rejects_non_positive_mass() {
        let m = saturating(1.0, FissionRate::Constant { b: 1.0 });
        assert!(m.flow(0.0, 1.0).is_err());
        assert!(m.flow(-1.0, 1.0).is_err());
        assert!(m.flow(1.0, -1.0).is_err());
    }

    #[test]
    fn numerical_blow_up_is_an_integration_error() {
        let m = ModelSpec::new(
            GrowthRate::Power { a: 1.0, p: 2.0 },
            FissionRate::Constant { b: 0.0 },
            BinaryKernel::half(),
        );
        assert!(matches!(m.flow(1.0, 2.0), Err(Error::Integration { .. })));
    }

    #[test]
    fn survival_probability_cases() {
        let zero = saturating(1.0, FissionRate::Constant { b: 0.0 });
        assert_eq!(zero.survival_probability(1.0, 3.0).unwrap(), 1.0);
        let constant = saturating(1.0, FissionRate::Constant { b: 0.8 });
        assert!((constant.survival_probability(1.0, 2.0).unwrap() - (-1.6f64).exp()).abs() < 1e-15);
        // c(x) = x, B(x) = x / (1 + x): exp(-int_1^e dy / (1 + y))
        let m = ModelSpec::linear(1.0, FissionRate::Saturating { b: 1.0 }, BinaryKernel::half());
        let oracle = (-integrate_adaptive(1.0, 1f64.exp(), 1e-13, |y| 1.0 / (1.0 + y))).exp();
        let p = m.survival_probability(1.0, 1.0).unwrap();
        assert!((p - oracle).abs() < 1e-10);
        assert!((p - (2.0 / (1.0 + 1f64.exp()))).abs() < 1e-10);
        assert_eq!(m.survival_probability(1.0, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn validation_reports() {
        let lin = ModelSpec::linear(0.7, FissionRate::Constant { b: 1.0 }, BinaryKernel::half());
        let r = lin.validate();
        assert!(r.passed());
        assert!((r.gamma_estimate - 0.7).abs() < 1e-12);

        let sqrt = ModelSpec::new(
            GrowthRate::Power { a: 1.0, p: 0.5 },
            FissionRate::Constant { b: 1.0 },
            BinaryKernel::half(),
        );
        let r = sqrt.validate();
        assert!(!r.passed());
        assert!(r.failures().any(|i| i.name == "growth_ratio_bounded"));

        let sat = saturating(1.0, FissionRate::Constant { b: 1.0 });
        let r = sat.validate();
        assert!(r.passed());
        assert!((r.gamma_estimate - 1.0).abs() < 1e-5);
        assert_eq!(r.b_sup, 1.0);
    }
}
