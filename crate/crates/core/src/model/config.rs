use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::log_grid;

use super::{BinaryKernel, FissionRate, GrowthRate, LogLogTable, ModelSpec, RatioLaw};

/// Model section of an experiment config.
///
/// ```toml
/// [model]
/// family = "hump"
/// a = 3.0
/// fission = { kind = "saturating", b = 4.0 }
/// kernel = { kind = "beta", alpha = 2.0 }
/// ```
///
/// Omitted parameters take the registry defaults of the family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub family: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    /// Tabulated growth: knots and values of `c`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masses: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub growth: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fission: Option<FissionConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation_grid: Option<GridConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum FissionConfig {
    Zero,
    Constant { b: f64 },
    Saturating { b: f64 },
    Hill { b: f64 },
    Table { masses: Vec<f64>, values: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum KernelConfig {
    Half,
    Atom { r: f64 },
    Uniform {
        #[serde(default)]
        r_min: f64,
    },
    Beta { alpha: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            lo: 1e-6,
            hi: 1e6,
            n: 512,
        }
    }
}

/// Registry entry for a built-in growth family.
#[derive(Clone, Debug, Serialize)]
pub struct FamilyInfo {
    pub name: &'static str,
    pub growth: &'static str,
    pub parameters: &'static str,
    pub default_a: f64,
    pub default_fission: FissionConfig,
    pub default_kernel: KernelConfig,
    pub condition_note: &'static str,
}

pub fn registry() -> Vec<FamilyInfo> {
    vec![
        FamilyInfo {
            name: "linear",
            growth: "c(x) = a x",
            parameters: "a > 0 growth rate; fission default B(x) = b x/(1+x) with b = 2; kernel r = 1/2",
            default_a: 0.7,
            default_fission: FissionConfig::Saturating { b: 2.0 },
            default_kernel: KernelConfig::Half,
            condition_note: "c/x = a = lambda everywhere: the limsup condition fails (equality), \
                             h(x) = x and W is constant",
        },
        FamilyInfo {
            name: "saturating",
            growth: "c(x) = a x / (1 + x)",
            parameters: "a > 0; fission default B = b constant with b = 1; kernel uniform on (0, 1/2]",
            default_a: 1.0,
            default_fission: FissionConfig::Constant { b: 1.0 },
            default_kernel: KernelConfig::Uniform { r_min: 0.0 },
            condition_note: "c/x -> a = sup c/x >= lambda as x -> 0: the limsup condition fails \
                             at 0; used for many-to-one and stopping-line checks",
        },
        FamilyInfo {
            name: "hump",
            growth: "c(x) = a x^2 / (1 + x^2), i.e. c/x = a x / (1 + x^2)",
            parameters: "a > 0; fission default B(x) = b x/(1+x) with b = 4; kernel folded Beta(2, 2)",
            default_a: 3.0,
            default_fission: FissionConfig::Saturating { b: 4.0 },
            default_kernel: KernelConfig::Beta { alpha: 2.0 },
            condition_note: "c/x -> 0 at both ends: the limsup condition holds whenever lambda > 0; \
                             defaults are the ones used by the acceptance suite",
        },
        FamilyInfo {
            name: "power",
            growth: "c(x) = a x^p",
            parameters: "a > 0, p (p != 1 makes sup c/x infinite); fission default constant b = 1",
            default_a: 1.0,
            default_fission: FissionConfig::Constant { b: 1.0 },
            default_kernel: KernelConfig::Half,
            condition_note: "only p = 1 satisfies sup c/x < inf; provided for validation",
        },
        FamilyInfo {
            name: "table",
            growth: "c tabulated on `masses`/`growth`, log-log monotone cubic, c/x held constant outside",
            parameters: "masses, growth (required); fission and kernel required",
            default_a: f64::NAN,
            default_fission: FissionConfig::Constant { b: 1.0 },
            default_kernel: KernelConfig::Half,
            condition_note: "checked numerically on the validation grid",
        },
    ]
}

impl ModelConfig {
    pub fn family(name: &str) -> Self {
        Self {
            family: name.to_string(),
            a: None,
            p: None,
            masses: None,
            growth: None,
            fission: None,
            kernel: None,
            validation_grid: None,
        }
    }

    /// Fill every omitted parameter with the family default.
    pub fn resolved(&self) -> Result<Self> {
        let info = registry()
            .into_iter()
            .find(|f| f.name == self.family)
            .ok_or_else(|| {
                Error::config(
                    "model.family",
                    format!(
                        "unknown family `{}` (expected linear, saturating, hump, power, table)",
                        self.family
                    ),
                )
            })?;
        let mut out = self.clone();
        if out.family != "table" && out.a.is_none() {
            out.a = Some(info.default_a);
        }
        if out.family == "power" && out.p.is_none() {
            out.p = Some(1.0);
        }
        if out.fission.is_none() {
            out.fission = Some(info.default_fission.clone());
        }
        if out.kernel.is_none() {
            out.kernel = Some(info.default_kernel.clone());
        }
        if out.validation_grid.is_none() {
            out.validation_grid = Some(GridConfig::default());
        }
        Ok(out)
    }

    pub fn build(&self) -> Result<ModelSpec> {
        let cfg = self.resolved()?;
        let positive = |name: &str, v: Option<f64>| -> Result<f64> {
            match v {
                Some(v) if v > 0.0 && v.is_finite() => Ok(v),
                Some(v) => Err(Error::config(
                    format!("model.{name}"),
                    format!("must be positive and finite, got {v}"),
                )),
                None => Err(Error::config(format!("model.{name}"), "missing")),
            }
        };
        let growth = match cfg.family.as_str() {
            "linear" => GrowthRate::Linear {
                a: positive("a", cfg.a)?,
            },
            "saturating" => GrowthRate::Saturating {
                a: positive("a", cfg.a)?,
            },
            "hump" => GrowthRate::Hump {
                a: positive("a", cfg.a)?,
            },
            "power" => GrowthRate::Power {
                a: positive("a", cfg.a)?,
                p: cfg.p.unwrap_or(1.0),
            },
            "table" => {
                let masses = cfg
                    .masses
                    .as_ref()
                    .ok_or_else(|| Error::config("model.masses", "required for family `table`"))?;
                let values = cfg
                    .growth
                    .as_ref()
                    .ok_or_else(|| Error::config("model.growth", "required for family `table`"))?;
                check_table("model", masses, values, true)?;
                GrowthRate::Table(LogLogTable::new(masses, values))
            }
            _ => unreachable!("family checked in resolved()"),
        };
        let fission = match cfg.fission.as_ref().unwrap() {
            FissionConfig::Zero => FissionRate::Constant { b: 0.0 },
            FissionConfig::Constant { b } => FissionRate::Constant {
                b: non_negative("model.fission.b", *b)?,
            },
            FissionConfig::Saturating { b } => FissionRate::Saturating {
                b: non_negative("model.fission.b", *b)?,
            },
            FissionConfig::Hill { b } => FissionRate::Hill {
                b: non_negative("model.fission.b", *b)?,
            },
            FissionConfig::Table { masses, values } => {
                check_table("model.fission", masses, values, false)?;
                FissionRate::table(masses, values)
            }
        };
        let law = match cfg.kernel.as_ref().unwrap() {
            KernelConfig::Half => RatioLaw::Atom { r: 0.5 },
            KernelConfig::Atom { r } => RatioLaw::Atom { r: *r },
            KernelConfig::Uniform { r_min } => RatioLaw::Uniform { r_min: *r_min },
            KernelConfig::Beta { alpha } => RatioLaw::Beta { alpha: *alpha },
        };
        let kernel = BinaryKernel::new(law).map_err(|m| Error::config("model.kernel", m))?;
        let grid = cfg.validation_grid.clone().unwrap_or_default();
        if !(grid.lo > 0.0 && grid.hi > grid.lo && grid.n >= 2) {
            return Err(Error::config(
                "model.validation_grid",
                "need 0 < lo < hi and n >= 2",
            ));
        }
        Ok(ModelSpec::with_grid(
            growth,
            fission,
            kernel,
            log_grid(grid.lo, grid.hi, grid.n),
        ))
    }
}

fn non_negative(loc: &str, v: f64) -> Result<f64> {
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::config(loc, format!("must be >= 0 and finite, got {v}")))
    }
}

fn check_table(loc: &str, masses: &[f64], values: &[f64], strictly_positive: bool) -> Result<()> {
    if masses.len() < 2 || masses.len() != values.len() {
        return Err(Error::config(
            loc,
            "table needs at least two knots and matching lengths",
        ));
    }
    if !masses.windows(2).all(|w| w[0] < w[1]) || masses[0] <= 0.0 {
        return Err(Error::config(loc, "table masses must be positive and increasing"));
    }
    let ok = values
        .iter()
        .all(|v| v.is_finite() && if strictly_positive { *v > 0.0 } else { *v >= 0.0 });
    if !ok {
        return Err(Error::config(loc, "table values out of range"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_lists_builtin_families() {
        let names: Vec<_> = registry().iter().map(|f| f.name).collect();
        for n in ["linear", "saturating", "hump"] {
            assert!(names.contains(&n));
        }
        assert!(registry().iter().all(|f| !f.condition_note.is_empty()));
    }

    #[test]
    fn parses_toml_and_fills_defaults() {
        let cfg: ModelConfig = toml::from_str(
            r#"
            family = "hump"
            kernel = { kind = "uniform", r_min = 0.1 }
            "#,
        )
        .unwrap();
        let r = cfg.resolved().unwrap();
        assert_eq!(r.a, Some(3.0));
        assert_eq!(r.fission, Some(FissionConfig::Saturating { b: 4.0 }));
        let m = cfg.build().unwrap();
        assert_eq!(m.gamma(), 1.5);
        assert!(m.validate().passed());
    }

    #[test]
    fn table_model_interpolates() {
        let masses = vec![0.1, 1.0, 10.0];
        let cfg = ModelConfig {
            masses: Some(masses.clone()),
            growth: Some(masses.iter().map(|m| 0.5 * m).collect()),
            fission: Some(FissionConfig::Table {
                masses: masses.clone(),
                values: vec![0.0, 1.0, 1.0],
            }),
            ..ModelConfig::family("table")
        };
        let m = cfg.build().unwrap();
        for x in [0.01, 0.3, 2.0, 50.0] {
            assert!((m.c(x) / (0.5 * x) - 1.0).abs() < 1e-12);
        }
        assert!(m.b(0.01) == 0.0 && m.b(100.0) == 1.0);
        assert!((m.flow(1.0, 2.0).unwrap() - 1f64.exp()).abs() < 1e-8);
    }

    #[test]
    fn errors_carry_locations() {
        let bad = ModelConfig::family("nope").build().unwrap_err();
        assert!(bad.to_string().contains("model.family"));
        let cfg = ModelConfig {
            a: Some(-1.0),
            ..ModelConfig::family("linear")
        };
        assert!(cfg.build().unwrap_err().to_string().contains("model.a"));
        let err = toml::from_str::<ModelConfig>("family = \"hump\"\nbogus = 1").unwrap_err();
        assert!(err.to_string().contains("bogus"));
    }
}
