//! Experiment configuration: a JSON document mirroring [`ExperimentConfig`]
//! field names exactly. Unknown keys are rejected. Built-in presets provide
//! CI-friendly desk-scale parameters and the full-scale reference parameters
//! for every named experiment.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use exitlab::models::{Domain, SdeModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Fig1,
    Fig2,
    Pathology,
    AlphaSweep,
    CovLimit,
    PdeCheck,
    Custom,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::Fig1 => "fig1",
            ExperimentKind::Fig2 => "fig2",
            ExperimentKind::Pathology => "pathology",
            ExperimentKind::AlphaSweep => "alpha-sweep",
            ExperimentKind::CovLimit => "cov-limit",
            ExperimentKind::PdeCheck => "pde-check",
            ExperimentKind::Custom => "custom",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ThetaSpec {
    /// Driftless motion.
    Zero,
    /// Scalar mean reversion `-theta x`.
    Scalar { value: f64 },
    /// The built-in symmetric positive definite tridiagonal matrix.
    Tridiag,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DomainSpec {
    Ball { radius: f64 },
    Interval { a: f64, b: f64 },
    Annulus { r_inner: f64, r_outer: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorName {
    Mc,
    Cov,
    Pcov,
    RiskSensitive,
}

impl EstimatorName {
    pub fn as_str(&self) -> &'static str {
        match self {
            EstimatorName::Mc => "mc",
            EstimatorName::Cov => "cov",
            EstimatorName::Pcov => "pcov",
            EstimatorName::RiskSensitive => "risk-sensitive",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// CI-runnable scale.
    Desk,
    /// Full reference scale.
    Paper,
}

impl Preset {
    pub fn as_str(&self) -> &'static str {
        match self {
            Preset::Desk => "desk",
            Preset::Paper => "paper",
        }
    }
}

/// Full experiment description. The JSON config file uses exactly these
/// field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    /// State dimension.
    pub n: usize,
    pub theta: ThetaSpec,
    /// Noise scale; diffusion is `sqrt(2 eps) I`.
    pub eps: f64,
    pub domain: DomainSpec,
    pub estimators: Vec<EstimatorName>,
    /// Trajectories per run (N).
    pub n_trajectories: usize,
    /// Independent runs per estimate (M).
    pub m_runs: usize,
    pub dt: f64,
    pub max_steps: u64,
    pub seed: u64,
    /// Initial radii (or 1-D start offsets) to sweep.
    pub radii: Vec<f64>,
    /// Risk levels for the risk-sensitive experiments.
    pub alphas: Vec<f64>,
    /// Gradient perturbation amplitudes for the perturbed control variate.
    pub deltas: Vec<f64>,
    /// Additive cost regularisation.
    pub regularization_c: f64,
    /// Interior node count of the 1-D PDE grids.
    pub grid_nodes: usize,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> anyhow::Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).context("failed to parse experiment config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization")
    }

    /// Built-in parameter sets for the named experiments.
    pub fn preset(kind: ExperimentKind, preset: Preset) -> Self {
        let desk = matches!(preset, Preset::Desk);
        let out = |name: &str| PathBuf::from(format!("out/{name}"));
        match kind {
            ExperimentKind::Fig1 => ExperimentConfig {
                experiment: kind,
                n: 100,
                theta: ThetaSpec::Zero,
                eps: 0.05,
                domain: DomainSpec::Ball { radius: 10.0 },
                estimators: vec![EstimatorName::Mc, EstimatorName::Cov, EstimatorName::Pcov],
                n_trajectories: 10,
                m_runs: if desk { 20 } else { 100 },
                dt: if desk { 1e-3 } else { 1e-4 },
                max_steps: if desk { 500_000 } else { 5_000_000 },
                seed: 42,
                radii: (0..10).map(|r| r as f64).collect(),
                alphas: vec![],
                deltas: vec![0.25, 1.0],
                regularization_c: 0.0,
                grid_nodes: 1999,
                output_dir: out("fig1"),
            },
            ExperimentKind::Fig2 => ExperimentConfig {
                experiment: kind,
                n: if desk { 10 } else { 100 },
                theta: ThetaSpec::Tridiag,
                eps: 0.05,
                domain: DomainSpec::Ball {
                    radius: if desk { 1.6 } else { 10.0 },
                },
                estimators: vec![EstimatorName::Mc, EstimatorName::Cov],
                n_trajectories: 10,
                m_runs: if desk { 20 } else { 100 },
                dt: 1e-3,
                max_steps: 2_000_000,
                seed: 42,
                radii: if desk {
                    vec![0.0, 0.4, 0.8, 1.2]
                } else {
                    (0..10).map(|r| r as f64).collect()
                },
                alphas: vec![],
                deltas: vec![],
                regularization_c: 0.0,
                grid_nodes: 1999,
                output_dir: out("fig2"),
            },
            ExperimentKind::Pathology => ExperimentConfig {
                experiment: kind,
                n: 1,
                theta: ThetaSpec::Zero,
                eps: 0.05,
                domain: DomainSpec::Interval { a: -1.0, b: 1.0 },
                estimators: vec![EstimatorName::Mc],
                n_trajectories: 100,
                m_runs: 1,
                // At coarser steps the weaker singular drift occasionally
                // lets a discrete jump cross the boundary; 1e-4 keeps both
                // singular modes inside for the default seed with margin.
                dt: 1e-4,
                // Budget: 10x the analytic mean exit step count, set by the
                // runner from the model; this value is a ceiling.
                max_steps: 1_000_000,
                seed: 42,
                radii: vec![0.0],
                alphas: vec![],
                deltas: vec![],
                regularization_c: 0.0,
                grid_nodes: 1999,
                output_dir: out("pathology"),
            },
            ExperimentKind::AlphaSweep => ExperimentConfig {
                experiment: kind,
                n: 1,
                theta: ThetaSpec::Zero,
                eps: 0.05,
                domain: DomainSpec::Interval { a: -1.0, b: 1.0 },
                estimators: vec![EstimatorName::RiskSensitive],
                n_trajectories: if desk { 200 } else { 1000 },
                m_runs: 10,
                dt: if desk { 1e-3 } else { 1e-4 },
                max_steps: 5_000_000,
                seed: 42,
                radii: vec![0.0],
                alphas: vec![0.4, 0.2, 0.1, 0.05, 0.025],
                deltas: vec![],
                regularization_c: 0.0,
                grid_nodes: 1999,
                output_dir: out("alpha_sweep"),
            },
            ExperimentKind::CovLimit => ExperimentConfig {
                experiment: kind,
                n: 1,
                theta: ThetaSpec::Zero,
                eps: 0.05,
                domain: DomainSpec::Interval { a: -1.0, b: 1.0 },
                estimators: vec![EstimatorName::Mc, EstimatorName::Cov],
                n_trajectories: if desk { 1000 } else { 4000 },
                m_runs: 1,
                dt: 1e-4,
                max_steps: 10_000_000,
                seed: 42,
                radii: vec![0.0],
                alphas: vec![0.4, 0.2, 0.1, 0.05, 0.025],
                deltas: vec![],
                regularization_c: 0.0,
                grid_nodes: 1999,
                output_dir: out("cov_limit"),
            },
            ExperimentKind::PdeCheck => ExperimentConfig {
                experiment: kind,
                n: 1,
                theta: ThetaSpec::Zero,
                eps: 0.05,
                domain: DomainSpec::Interval { a: -1.0, b: 1.0 },
                estimators: vec![],
                n_trajectories: 1,
                m_runs: 1,
                dt: 1e-3,
                max_steps: 1,
                seed: 42,
                radii: vec![],
                // First entry drives the single-level solver checks, the
                // full list drives the small-alpha monotonicity check.
                alphas: vec![0.1, 0.4, 0.2, 0.05, 0.025],
                deltas: vec![],
                regularization_c: 0.0,
                grid_nodes: 1999,
                output_dir: out("pde_check"),
            },
            ExperimentKind::Custom => ExperimentConfig {
                experiment: kind,
                n: 1,
                theta: ThetaSpec::Zero,
                eps: 0.05,
                domain: DomainSpec::Interval { a: -1.0, b: 1.0 },
                estimators: vec![EstimatorName::Mc],
                n_trajectories: 100,
                m_runs: 10,
                dt: 1e-3,
                max_steps: 1_000_000,
                seed: 42,
                radii: vec![0.0],
                alphas: vec![],
                deltas: vec![],
                regularization_c: 0.0,
                grid_nodes: 1999,
                output_dir: out("custom"),
            },
        }
    }

    /// Build the SDE model described by the config.
    pub fn build_model(&self) -> anyhow::Result<SdeModel> {
        let model = match self.theta {
            ThetaSpec::Zero => SdeModel::brownian(self.n, self.eps)?,
            ThetaSpec::Scalar { value } => SdeModel::scalar_ou(self.n, value, self.eps)?,
            ThetaSpec::Tridiag => {
                SdeModel::matrix_ou(exitlab::models::make_tridiag_theta(self.n)?, self.eps)?
            }
        };
        Ok(model)
    }

    pub fn build_domain(&self) -> anyhow::Result<Domain> {
        let d = match self.domain {
            DomainSpec::Ball { radius } => Domain::ball(radius)?,
            DomainSpec::Interval { a, b } => Domain::interval(a, b)?,
            DomainSpec::Annulus { r_inner, r_outer } => Domain::annulus(r_inner, r_outer)?,
        };
        Ok(d)
    }

    /// Reject inconsistent configurations before any simulation starts.
    pub fn validate(&self) -> anyhow::Result<()> {
        if self.n == 0 {
            bail!("config: dimension n must be >= 1");
        }
        if !(self.eps > 0.0) {
            bail!("config: eps must be > 0");
        }
        if self.n_trajectories == 0 || self.m_runs == 0 {
            bail!("config: n_trajectories and m_runs must be >= 1");
        }
        if !(self.dt > 0.0) {
            bail!("config: dt must be > 0");
        }
        if self.max_steps == 0 {
            bail!("config: max_steps must be >= 1");
        }
        if let Some(a) = self.alphas.iter().find(|a| !(**a > 0.0)) {
            bail!("config: alphas must all be > 0, found {a}");
        }
        if let Some(d) = self.deltas.iter().find(|d| !(**d >= 0.0)) {
            bail!("config: deltas must be >= 0, found {d}");
        }
        if self.regularization_c < 0.0 {
            bail!("config: regularization_c must be >= 0");
        }
        if self.grid_nodes < 3 {
            bail!("config: grid_nodes must be >= 3");
        }
        if matches!(self.domain, DomainSpec::Interval { .. }) && self.n != 1 {
            bail!("config: interval domains require n = 1");
        }
        if self.estimators.contains(&EstimatorName::RiskSensitive) && self.n != 1 {
            bail!(
                "config: the risk-sensitive estimator uses the 1-D value-function solver \
                 and cannot run with n = {}",
                self.n
            );
        }
        match self.experiment {
            ExperimentKind::Fig1 => {
                if !matches!(self.theta, ThetaSpec::Zero) {
                    bail!("config: fig1 requires the driftless model (theta = zero)");
                }
                if !matches!(self.domain, DomainSpec::Ball { .. }) {
                    bail!("config: fig1 requires a ball domain");
                }
                if self.radii.is_empty() {
                    bail!("config: fig1 needs at least one radius");
                }
            }
            ExperimentKind::Fig2 => {
                if !matches!(self.theta, ThetaSpec::Tridiag) {
                    bail!("config: fig2 requires the tridiagonal drift matrix");
                }
                if !matches!(self.domain, DomainSpec::Ball { .. }) {
                    bail!("config: fig2 requires a ball domain");
                }
            }
            ExperimentKind::Pathology => {
                if !matches!(self.theta, ThetaSpec::Zero) {
                    bail!("config: the pathology experiment requires the driftless model");
                }
                if !matches!(
                    self.domain,
                    DomainSpec::Interval { .. } | DomainSpec::Ball { .. }
                ) {
                    bail!("config: the pathology experiment needs a ball or interval domain");
                }
            }
            ExperimentKind::AlphaSweep | ExperimentKind::CovLimit => {
                if self.n != 1 || !matches!(self.domain, DomainSpec::Interval { .. }) {
                    bail!(
                        "config: {} is a 1-D interval experiment",
                        self.experiment.as_str()
                    );
                }
                if self.alphas.is_empty() {
                    bail!("config: {} needs a non-empty alpha list", self.experiment.as_str());
                }
            }
            ExperimentKind::PdeCheck | ExperimentKind::Custom => {}
        }
        // Radii must fit inside the domain.
        let max_radius = match self.domain {
            DomainSpec::Ball { radius } => radius,
            DomainSpec::Interval { a, b } => (b - a) / 2.0,
            DomainSpec::Annulus { r_outer, .. } => r_outer,
        };
        if let Some(r) = self.radii.iter().find(|r| **r < 0.0 || **r > max_radius) {
            bail!("config: sweep radius {r} outside the domain (max {max_radius})");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for kind in [
            ExperimentKind::Fig1,
            ExperimentKind::Fig2,
            ExperimentKind::Pathology,
            ExperimentKind::AlphaSweep,
            ExperimentKind::CovLimit,
            ExperimentKind::PdeCheck,
            ExperimentKind::Custom,
        ] {
            for preset in [Preset::Desk, Preset::Paper] {
                let cfg = ExperimentConfig::preset(kind, preset);
                cfg.validate().expect("preset must validate");
                // Round trip through the JSON schema.
                let cfg2 = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
                assert_eq!(cfg, cfg2);
            }
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut doc: serde_json::Value =
            serde_json::from_str(&ExperimentConfig::preset(ExperimentKind::Fig1, Preset::Desk).to_json())
                .unwrap();
        doc.as_object_mut()
            .unwrap()
            .insert("surprise".into(), serde_json::json!(1));
        assert!(ExperimentConfig::from_json(&doc.to_string()).is_err());
    }

    #[test]
    fn dimension_incompatible_estimator_fails_before_simulation() {
        let mut cfg = ExperimentConfig::preset(ExperimentKind::Custom, Preset::Desk);
        cfg.n = 3;
        cfg.domain = DomainSpec::Ball { radius: 2.0 };
        cfg.estimators = vec![EstimatorName::RiskSensitive];
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("risk-sensitive"), "diagnostic: {err}");
    }

    #[test]
    fn experiment_preconditions_are_enforced() {
        let mut cfg = ExperimentConfig::preset(ExperimentKind::Fig1, Preset::Desk);
        cfg.theta = ThetaSpec::Scalar { value: 1.0 };
        assert!(cfg.validate().is_err());

        let mut cfg = ExperimentConfig::preset(ExperimentKind::AlphaSweep, Preset::Desk);
        cfg.alphas = vec![0.1, -0.2];
        assert!(cfg.validate().is_err());

        let mut cfg = ExperimentConfig::preset(ExperimentKind::Fig1, Preset::Desk);
        cfg.radii = vec![0.0, 11.0];
        assert!(cfg.validate().is_err());
    }
}
