use rand::Rng;
use rand_distr::{Beta, Distribution};

use crate::numerics::GaussRule;

/// Binary fragmentation kernel `rho(x, dr)` on `(0, 1/2]`. A fission at mass
/// `x` with ratio `r` produces daughters `(1 - r) x` and `r x`.
#[derive(Clone, Debug)]
pub struct BinaryKernel {
    law: RatioLaw,
    rule: GaussRule,
    beta: Option<Beta<f64>>,
    beta_norm: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum RatioLaw {
    /// Point mass at `r`.
    Atom { r: f64 },
    /// Uniform on `[r_min, 1/2]`.
    Uniform { r_min: f64 },
    /// Symmetric `Beta(alpha, alpha)` on `(0, 1)` folded onto `(0, 1/2]`.
    Beta { alpha: f64 },
}

const PANELS: usize = 16;

impl BinaryKernel {
    pub fn new(law: RatioLaw) -> Result<Self, String> {
        let rule = GaussRule::new(12);
        let mut beta = None;
        let mut beta_norm = 1.0;
        match law {
            RatioLaw::Atom { r } => {
                if !(r > 0.0 && r <= 0.5) {
                    return Err(format!("atom ratio {r} outside (0, 1/2]"));
                }
            }
            RatioLaw::Uniform { r_min } => {
                if !(0.0..0.5).contains(&r_min) {
                    return Err(format!("r_min {r_min} outside [0, 1/2)"));
                }
            }
            RatioLaw::Beta { alpha } => {
                if !(alpha >= 1.0 && alpha.is_finite()) {
                    return Err(format!("beta alpha {alpha} must be >= 1"));
                }
                beta = Some(Beta::new(alpha, alpha).map_err(|e| e.to_string())?);
                beta_norm =
                    rule.integrate_composite(0.0, 0.5, PANELS, |r| beta_weight(alpha, r));
            }
        }
        Ok(Self {
            law,
            rule,
            beta,
            beta_norm,
        })
    }

    pub fn half() -> Self {
        Self::new(RatioLaw::Atom { r: 0.5 }).unwrap()
    }

    pub fn law(&self) -> &RatioLaw {
        &self.law
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, _mass: f64, rng: &mut R) -> f64 {
        match self.law {
            RatioLaw::Atom { r } => r,
            RatioLaw::Uniform { r_min } => {
                // (0, 1] mapped onto (r_min, 1/2]
                let u: f64 = 1.0 - rng.gen::<f64>();
                r_min + (0.5 - r_min) * u
            }
            RatioLaw::Beta { .. } => loop {
                let v = self.beta.as_ref().unwrap().sample(rng);
                let r = v.min(1.0 - v);
                if r > 0.0 {
                    break r;
                }
            },
        }
    }

    /// `int g(r) rho(x, dr)` by quadrature (exact for atoms).
    pub fn expect(&self, _mass: f64, mut g: impl FnMut(f64) -> f64) -> f64 {
        match self.law {
            RatioLaw::Atom { r } => g(r),
            RatioLaw::Uniform { r_min } => {
                self.rule.integrate_composite(r_min, 0.5, PANELS, &mut g) / (0.5 - r_min)
            }
            RatioLaw::Beta { alpha } => {
                self.rule
                    .integrate_composite(0.0, 0.5, PANELS, |r| g(r) * beta_weight(alpha, r))
                    / self.beta_norm
            }
        }
    }

    /// Daughter mass ratios `(1 - r, r)`.
    pub fn partition(r: f64) -> [f64; 2] {
        [1.0 - r, r]
    }
}

fn beta_weight(alpha: f64, r: f64) -> f64 {
    (r * (1.0 - r)).powf(alpha - 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamFamily;

    #[test]
    fn samples_stay_in_half_interval() {
        let mut rng = StreamFamily::new(1, "kernel").stream(0);
        for law in [
            RatioLaw::Atom { r: 1.0 / 3.0 },
            RatioLaw::Uniform { r_min: 0.0 },
            RatioLaw::Uniform { r_min: 0.2 },
            RatioLaw::Beta { alpha: 2.0 },
        ] {
            let k = BinaryKernel::new(law).unwrap();
            for _ in 0..10_000 {
                let r = k.sample(1.0, &mut rng);
                assert!(r > 0.0 && r <= 0.5);
                let p = BinaryKernel::partition(r);
                assert!(((p[0] + p[1]) - 1.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn quadrature_matches_closed_forms() {
        let u = BinaryKernel::new(RatioLaw::Uniform { r_min: 0.0 }).unwrap();
        // E[r] = 1/4, E[r^2] = 1/12 for uniform (0, 1/2]
        assert!((u.expect(1.0, |r| r) - 0.25).abs() < 1e-13);
        assert!((u.expect(1.0, |r| r * r) - 1.0 / 12.0).abs() < 1e-13);
        let b = BinaryKernel::new(RatioLaw::Beta { alpha: 2.0 }).unwrap();
        // folded density 12 r (1 - r) on (0, 1/2]: E[r] = 12 (1/24 - 1/64) = 5/16
        assert!((b.expect(1.0, |_| 1.0) - 1.0).abs() < 1e-13);
        assert!((b.expect(1.0, |r| r) - 5.0 / 16.0).abs() < 1e-13);
    }

    #[test]
    fn beta_sampler_matches_quadrature_mean() {
        let b = BinaryKernel::new(RatioLaw::Beta { alpha: 2.0 }).unwrap();
        let mut rng = StreamFamily::new(3, "kernel").stream(0);
        let n = 200_000;
        let m: f64 = (0..n).map(|_| b.sample(1.0, &mut rng)).sum::<f64>() / n as f64;
        assert!((m - 5.0 / 16.0).abs() < 4.0 * 0.1 / (n as f64).sqrt());
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(BinaryKernel::new(RatioLaw::Atom { r: 0.7 }).is_err());
        assert!(BinaryKernel::new(RatioLaw::Uniform { r_min: 0.5 }).is_err());
        assert!(BinaryKernel::new(RatioLaw::Beta { alpha: 0.5 }).is_err());
    }
}
