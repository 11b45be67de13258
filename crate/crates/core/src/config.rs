//! Run configuration, read from JSON.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{parse, PsiSpec};
use crate::grid::{BoundaryData, Domain, Grid, Shape};
use crate::solver::{Problem, SolverOptions};
use crate::verify::{LuProbe, Proposal};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainConfig {
    #[serde(flatten)]
    pub shape: Shape,
    /// Origin when omitted.
    #[serde(default)]
    pub center: Option<Vec<f64>>,
}

/// One grid spacing for `solve`/`verify`, several for `sweep`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Spacing {
    One(f64),
    Many(Vec<f64>),
}

/// A bare number is a constant, a bare string an expression, anything else a
/// catalog entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PsiConfig {
    Constant(f64),
    Expr(String),
    Catalog(PsiSpec),
}

impl PsiConfig {
    pub fn spec(&self) -> PsiSpec {
        match self {
            PsiConfig::Constant(c) => PsiSpec::Constant(*c),
            PsiConfig::Expr(s) => PsiSpec::Expr(s.clone()),
            PsiConfig::Catalog(p) => p.clone(),
        }
    }
}

/// Affine coefficients `a.x + b` or an expression in `x`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PhiConfig {
    Affine { slope: Vec<f64>, offset: f64 },
    Expr(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LuProbeConfig {
    pub k: usize,
    pub n: usize,
    pub l: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub delta0: f64,
    pub trials: usize,
    #[serde(default = "one")]
    pub xi_scale: f64,
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

fn default_beta() -> f64 {
    4.0
}

/// Which reports `verify` produces, and their parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    #[serde(default = "yes")]
    pub gradient: bool,
    #[serde(default = "yes")]
    pub c0: bool,
    #[serde(default = "yes")]
    pub comparison: bool,
    #[serde(default = "yes")]
    pub identity: bool,
    #[serde(default = "yes")]
    pub curvature: bool,
    /// Inset of the interior region for curvature reports; a quarter of the
    /// smallest half-extent when omitted.
    #[serde(default)]
    pub inset: Option<f64>,
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// Pointwise tolerance of the comparison and sandwich checks; ten times
    /// the solver tolerance when omitted.
    #[serde(default)]
    pub tolerance: Option<f64>,
    /// Random `Gamma_k` samples added to the identity suite. Needs a seed.
    #[serde(default)]
    pub synthetic_samples: usize,
    #[serde(default)]
    pub proposal: Proposal,
    /// Needs a seed.
    #[serde(default)]
    pub lu_probe: Option<LuProbeConfig>,
}

impl VerifyConfig {
    /// Whether any enabled report reads a solution field.
    pub fn needs_solution(&self) -> bool {
        self.gradient || self.c0 || self.comparison || self.curvature || (self.identity && self.synthetic_samples == 0)
    }
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            gradient: true,
            c0: true,
            comparison: true,
            identity: true,
            curvature: true,
            inset: None,
            beta: default_beta(),
            tolerance: None,
            synthetic_samples: 0,
            proposal: Proposal::Gaussian,
            lu_probe: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub n: usize,
    pub domain: DomainConfig,
    pub k: usize,
    pub h: Spacing,
    pub psi: PsiConfig,
    pub phi: PhiConfig,
    /// Exact solution in `x`, when known; enables error columns.
    #[serde(default)]
    pub exact: Option<String>,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub verify: VerifyConfig,
    /// Output directory, relative to the working directory.
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_json_with_seed(text, None)
    }

    /// `seed` replaces the configured seed before validation.
    pub fn from_json_with_seed(text: &str, seed: Option<u64>) -> Result<Self> {
        let mut cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        if seed.is_some() {
            cfg.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path, seed: Option<u64>) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json_with_seed(&text, seed)
    }

    /// Schema checks that do not need a grid.
    pub fn validate(&self) -> Result<()> {
        if !(2..=3).contains(&self.n) {
            return Err(Error::Config(format!("n = {} must be 2 or 3", self.n)));
        }
        if self.k < 1 || self.k > self.n {
            return Err(Error::Config(format!("order k = {} must lie in [1, {}]", self.k, self.n)));
        }
        if let Some(c) = &self.domain.center {
            if c.len() != self.n {
                return Err(Error::Config(format!("domain center has {} entries, n = {}", c.len(), self.n)));
            }
        }
        if self.spacings().iter().any(|h| !(*h > 0.0)) || self.spacings().is_empty() {
            return Err(Error::Config("grid spacings must be positive".into()));
        }
        self.solver.validate()?;
        if let Some(e) = &self.exact {
            let e = parse(e)?;
            e.check_dimension(self.n)?;
            if e.depends_on_u() || e.depends_on_p() {
                return Err(Error::Config("the exact solution may depend on x only".into()));
            }
        }
        if self.needs_seed() && self.seed.is_none() {
            return Err(Error::Config("this config samples random data and needs a seed".into()));
        }
        Ok(())
    }

    pub fn needs_seed(&self) -> bool {
        self.verify.synthetic_samples > 0 || self.verify.lu_probe.is_some()
    }

    pub fn spacings(&self) -> Vec<f64> {
        match &self.h {
            Spacing::One(h) => vec![*h],
            Spacing::Many(v) => v.clone(),
        }
    }

    /// The single spacing of a `solve` or `verify` run.
    pub fn single_spacing(&self) -> Result<f64> {
        match self.spacings().as_slice() {
            [h] => Ok(*h),
            v => Err(Error::Config(format!("expected one grid spacing, got {}", v.len()))),
        }
    }

    pub fn domain(&self) -> Result<Domain> {
        let center = self.domain.center.clone().unwrap_or_else(|| vec![0.0; self.n]);
        Domain::new(self.domain.shape.clone(), center)
    }

    pub fn boundary_data(&self) -> Result<BoundaryData> {
        Ok(match &self.phi {
            PhiConfig::Affine { slope, offset } => BoundaryData::Affine { slope: slope.clone(), offset: *offset },
            PhiConfig::Expr(s) => BoundaryData::Expr(parse(s)?),
        })
    }

    pub fn grid(&self, h: f64) -> Result<Arc<Grid>> {
        Grid::build(self.domain()?, h, &self.boundary_data()?)
    }

    pub fn problem(&self, h: f64) -> Result<Problem> {
        Problem::new(self.grid(h)?, self.k, &self.psi.spec(), self.boundary_data()?, self.solver.clone())
    }

    pub fn inset(&self) -> Result<f64> {
        match self.verify.inset {
            Some(v) => Ok(v),
            None => Ok(0.25 * self.domain()?.half_extents().into_iter().fold(f64::INFINITY, f64::min)),
        }
    }

    pub fn tolerance(&self) -> f64 {
        self.verify.tolerance.unwrap_or(10.0 * self.solver.tol_residual)
    }

    pub fn lu_probe(&self) -> Option<LuProbe> {
        let p = self.verify.lu_probe.as_ref()?;
        Some(LuProbe {
            k: p.k,
            n: p.n,
            l: p.l,
            epsilon: p.epsilon,
            delta: p.delta,
            delta0: p.delta0,
            trials: p.trials,
            xi_scale: p.xi_scale,
            seed: self.seed.unwrap_or_default(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"{
        "n": 2, "k": 2, "h": 0.04375,
        "domain": {"shape": "ball", "radius": 0.7},
        "psi": 1.0,
        "phi": "sqrt(1 + x1^2 + x2^2)"
    }"#;

    fn with(key: &str, value: &str) -> String {
        let mut v: serde_json::Value = serde_json::from_str(BASE).unwrap();
        v[key] = serde_json::from_str(value).unwrap();
        v.to_string()
    }

    #[test]
    fn minimal_config() {
        let c = RunConfig::from_json(BASE).unwrap();
        assert_eq!(c.psi.spec(), PsiSpec::Constant(1.0));
        assert_eq!(c.solver, SolverOptions::default());
        assert!(c.verify.gradient && c.verify.c0);
        assert_eq!(c.single_spacing().unwrap(), 0.04375);
        assert!((c.inset().unwrap() - 0.175).abs() < 1e-15);
        assert_eq!(c.problem(0.04375).unwrap().k, 2);
    }

    #[test]
    fn psi_and_phi_forms() {
        let c = RunConfig::from_json(&with("psi", r#""1 + 0.1*x1""#)).unwrap();
        assert_eq!(c.psi.spec(), PsiSpec::Expr("1 + 0.1*x1".into()));
        let c = RunConfig::from_json(&with("psi", r#"{"radial": {"radius": 2.0}}"#)).unwrap();
        assert_eq!(c.psi.spec(), PsiSpec::Radial { radius: 2.0 });
        let c = RunConfig::from_json(&with("phi", r#"{"slope": [0.1, 0.2], "offset": 1.0}"#)).unwrap();
        assert!(c.boundary_data().unwrap().as_affine().is_some());
    }

    #[test]
    fn guards() {
        assert!(RunConfig::from_json(&with("k", "3")).is_err());
        assert!(RunConfig::from_json(&with("n", "4")).is_err());
        assert!(RunConfig::from_json(&with("h", "[]")).is_err());
        assert!(RunConfig::from_json(&with("unknown", "1")).is_err());
        assert!(RunConfig::from_json(&with("exact", r#""u + 1""#)).is_err());
        let c = RunConfig::from_json(&with("h", "[0.04375, 0.021875]")).unwrap();
        assert!(c.single_spacing().is_err());
        let sampled = with("verify", r#"{"synthetic_samples": 100}"#);
        assert!(matches!(RunConfig::from_json(&sampled), Err(Error::Config(_))));
        let mut v: serde_json::Value = serde_json::from_str(&sampled).unwrap();
        v["seed"] = 3.into();
        assert!(RunConfig::from_json(&v.to_string()).is_ok());
    }
}
