//! TOML experiment specifications.
//!
//! A spec fixes the model, the exit domain, the sampling scheme, and the
//! (eps, T) grid, for example:
//!
//! ```toml
//! name = "table-linear"
//!
//! [model]
//! kind = "linear"
//! c = 1.0
//! sigma_bar = 1.0
//!
//! [domain]
//! kind = "two-sided"
//! a1 = -1.0
//! a2 = 1.0
//!
//! [scheme]
//! kind = "mollified-linear"
//! m = 4.0
//! xhat = 1.0
//!
//! [grid]
//! eps = [0.20, 0.13, 0.09]
//! horizons = [1.0, 2.5, 5.0, 10.0]
//! n = 100000
//! dt = 1e-3
//! seed = 20260824
//! ```
//!
//! M is given either fixed (`m`) or scaled as M = 2 c xhat^2 /
//! (sigma_bar^2 eps^{2 kappa}) (`kappa`); xhat either fixed (`xhat`) or
//! scaled as eps^lambda (`lambda`). When both scale, lambda < kappa is
//! required so the handoff geometry survives as eps shrinks.

use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use exitprob::subsolution::SchemeKind;
use exitprob::{ExitDomain, GridSpec, MRule, ProcessModel, SchemeSpec, XhatRule};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: Option<String>,
    /// Default output directory; overridden by --out.
    pub out: Option<String>,
    pub model: ModelSpec,
    pub domain: DomainSpec,
    pub scheme: SchemeSection,
    pub grid: GridSection,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSpec {
    Linear { c: f64, sigma_bar: f64 },
    DoubleWell,
    Polynomial {
        name: String,
        drift_coeffs: Vec<f64>,
        diff_coeffs: Vec<f64>,
        rest_point: f64,
    },
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DomainSpec {
    TwoSided { a1: f64, a2: f64 },
    OneSided { a2: f64 },
    /// Endpoints placed on the quasipotential level set S = 2 level.
    Level { level: f64 },
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeSection {
    pub kind: String,
    pub m: Option<f64>,
    pub kappa: Option<f64>,
    pub xhat: Option<f64>,
    pub lambda: Option<f64>,
    pub delta: Option<f64>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub eps: Vec<f64>,
    pub horizons: Vec<f64>,
    pub n: u64,
    pub dt: f64,
    pub seed: u64,
}

/// Everything resolved and validated, ready to run.
pub struct ResolvedSpec {
    pub name: String,
    pub out: Option<String>,
    pub model: ProcessModel,
    pub domain: ExitDomain,
    pub scheme: SchemeSpec,
    pub grid: GridSpec,
}

impl ExperimentSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading spec file {}", path.display()))?;
        let spec: ExperimentSpec =
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        Ok(spec)
    }

    pub fn resolve(&self) -> Result<ResolvedSpec> {
        let model = match &self.model {
            ModelSpec::Linear { c, sigma_bar } => ProcessModel::linear(*c, *sigma_bar),
            ModelSpec::DoubleWell => ProcessModel::double_well(),
            ModelSpec::Polynomial {
                name,
                drift_coeffs,
                diff_coeffs,
                rest_point,
            } => ProcessModel::polynomial(name.clone(), drift_coeffs, diff_coeffs, *rest_point),
        }
        .context("model")?;

        let domain = match &self.domain {
            DomainSpec::TwoSided { a1, a2 } => ExitDomain::two_sided(&model, *a1, *a2),
            DomainSpec::OneSided { a2 } => ExitDomain::one_sided(&model, *a2),
            DomainSpec::Level { level } => ExitDomain::from_level(&model, *level),
        }
        .context("domain")?;

        let kind = SchemeKind::from_str(&self.scheme.kind)
            .map_err(|e| anyhow::anyhow!("scheme.kind: {e}"))?;
        let (c, sb) = model.linearize();
        let m_rule = match (self.scheme.m, self.scheme.kappa) {
            (Some(_), Some(_)) => bail!("scheme: give at most one of m and kappa"),
            (Some(m), None) => MRule::Fixed(m),
            (None, Some(kappa)) => MRule::Scaled { kappa },
            (None, None) => MRule::Fixed(5.0 * c / (sb * sb)),
        };
        let xhat = match (self.scheme.xhat, self.scheme.lambda) {
            (Some(_), Some(_)) => bail!("scheme: give at most one of xhat and lambda"),
            (Some(x), None) => XhatRule::Fixed(x),
            (None, Some(lambda)) => XhatRule::Scaled { lambda },
            (None, None) => XhatRule::Fixed(domain.a2() - model.rest_point()),
        };
        let scheme = SchemeSpec {
            kind,
            m_rule,
            xhat,
            delta: self.scheme.delta,
        };
        scheme
            .validate()
            .map_err(|e| anyhow::anyhow!("scheme: {e}"))?;

        if self.grid.eps.is_empty() {
            bail!("grid.eps: at least one value required");
        }
        if self.grid.horizons.is_empty() {
            bail!("grid.horizons: at least one value required");
        }
        if !(self.grid.dt > 0.0) {
            bail!("grid.dt: must be positive, got {}", self.grid.dt);
        }
        if self.grid.n == 0 {
            bail!("grid.n: at least one sample required");
        }
        for &e in &self.grid.eps {
            if !(e > 0.0) {
                bail!("grid.eps: values must be positive, got {e}");
            }
        }
        for &t in &self.grid.horizons {
            if !(t > 0.0) {
                bail!("grid.horizons: values must be positive, got {t}");
            }
        }

        Ok(ResolvedSpec {
            name: self.name.clone().unwrap_or_else(|| "experiment".into()),
            out: self.out.clone(),
            model,
            domain,
            scheme,
            grid: GridSpec {
                eps: self.grid.eps.clone(),
                horizons: self.grid.horizons.clone(),
                n: self.grid.n,
                dt: self.grid.dt,
                seed: self.grid.seed,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"
name = "table-linear"

[model]
kind = "linear"
c = 1.0
sigma_bar = 1.0

[domain]
kind = "two-sided"
a1 = -1.0
a2 = 1.0

[scheme]
kind = "mollified-linear"
m = 4.0
xhat = 1.0

[grid]
eps = [0.20, 0.13]
horizons = [1.0, 2.5]
n = 1000
dt = 1e-3
seed = 7
"#;

    #[test]
    fn example_parses_and_resolves() {
        let spec: ExperimentSpec = toml::from_str(EXAMPLE).unwrap();
        let r = spec.resolve().unwrap();
        assert_eq!(r.grid.eps.len(), 2);
        assert_eq!(r.domain.level(), 0.5);
        assert!(matches!(r.scheme.m_rule, MRule::Fixed(m) if m == 4.0));
    }

    #[test]
    fn empty_horizons_rejected() {
        let text = EXAMPLE.replace("horizons = [1.0, 2.5]", "horizons = []");
        let spec: ExperimentSpec = toml::from_str(&text).unwrap();
        let err = match spec.resolve() {
            Err(e) => e.to_string(),
            Ok(_) => panic!("empty horizon list should be rejected"),
        };
        assert!(err.contains("horizons"), "{err}");
    }

    #[test]
    fn lambda_must_be_below_kappa() {
        let text = EXAMPLE
            .replace("m = 4.0", "kappa = 0.25")
            .replace("xhat = 1.0", "lambda = 0.4");
        let spec: ExperimentSpec = toml::from_str(&text).unwrap();
        assert!(spec.resolve().is_err());
        let ok = EXAMPLE
            .replace("m = 4.0", "kappa = 0.25")
            .replace("xhat = 1.0", "lambda = 0.1");
        let spec: ExperimentSpec = toml::from_str(&ok).unwrap();
        assert!(spec.resolve().is_ok());
    }

    #[test]
    fn unknown_fields_rejected() {
        let text = EXAMPLE.replace("seed = 7", "seed = 7\nbogus = 1");
        assert!(toml::from_str::<ExperimentSpec>(&text).is_err());
    }

    #[test]
    fn level_domain_resolves_symmetric_endpoints() {
        let text = EXAMPLE.replace(
            "kind = \"two-sided\"\na1 = -1.0\na2 = 1.0",
            "kind = \"level\"\nlevel = 0.5",
        );
        let spec: ExperimentSpec = toml::from_str(&text).unwrap();
        let r = spec.resolve().unwrap();
        assert!((r.domain.a2() - 1.0).abs() < 1e-9);
        assert!((r.domain.a1() + 1.0).abs() < 1e-9);
    }
}
