//! Run configuration shared by every subcommand, loadable from TOML and
//! overridable from the command line.

use std::path::{Path, PathBuf};

use hessreach::bnb::{BnbConfig, Heuristic};
use hessreach::lipschitz::LipschitzMethod;
use hessreach::reach::{NextSetMode, ReachConfig, TemplateSpec};
use hessreach::Norm;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub norm: Norm,
    pub eps_t: f64,
    pub heuristic: Heuristic,
    pub max_branches: usize,
    pub max_active: usize,
    pub time_limit_s: Option<f64>,
    pub workers: usize,
    pub seed: u64,
    pub lipschitz: LipschitzMethod,
    /// Recompute localization and curvature bounds at every node.
    pub recompute: bool,
    pub first_order: bool,
    pub matrix_hessian: bool,
    pub suffix_estimate: bool,
    /// `axes`, `uniform:K`, `pca` or `pca:N`.
    pub template: String,
    pub next_set: NextSetMode,
    /// Simulated trajectories and oracle samples.
    pub samples: usize,
    pub output: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            norm: Norm::L2,
            eps_t: 1e-2,
            heuristic: Heuristic::MaxLength,
            max_branches: 1_000_000,
            max_active: 1_000_000,
            time_limit_s: None,
            workers: 1,
            seed: 0,
            lipschitz: LipschitzMethod::Liplt,
            recompute: true,
            first_order: true,
            matrix_hessian: true,
            suffix_estimate: true,
            template: "axes".into(),
            next_set: NextSetMode::Auto,
            samples: 10_000,
            output: PathBuf::from("hessreach-out"),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.bnb().validate()?;
        self.template_spec()?;
        if self.samples == 0 {
            return Err(CliError::Input("samples must be positive".into()));
        }
        Ok(())
    }

    pub fn template_spec(&self) -> Result<TemplateSpec, CliError> {
        Ok(self.template.parse()?)
    }

    pub fn bnb(&self) -> BnbConfig {
        BnbConfig {
            eps_t: self.eps_t,
            heuristic: self.heuristic,
            max_branches: self.max_branches,
            max_active: self.max_active,
            time_limit_s: self.time_limit_s,
            workers: self.workers,
            first_order: self.first_order,
            lipschitz: self.lipschitz,
            recompute: self.recompute,
            matrix_hessian: self.matrix_hessian,
            suffix_estimate: self.suffix_estimate,
            ..BnbConfig::default()
        }
    }

    pub fn reach(&self) -> Result<ReachConfig, CliError> {
        Ok(ReachConfig {
            bnb: self.bnb(),
            template: self.template_spec()?,
            next_set: self.next_set,
            seed: self.seed,
            ..ReachConfig::default()
        })
    }
}
