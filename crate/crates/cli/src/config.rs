//! TOML scenario files.
//!
//! ```toml
//! [domain]
//! dim = 1
//! extents = [1.0]
//! resolutions = [32]
//!
//! [diffusion]
//! kind = "constant"          # or "field" with D_expr and theta
//! sigma = 0.05
//!
//! [velocity]
//! q_expr = ["-x"]            # one expression per axis, empty for q = 0
//! amplitude_A = 4.0
//! boundary_policy = "allow_nonzero_normal"
//!
//! [reaction]
//! name = "logistic"          # zero | logistic | convex_negative | heterogeneous_logistic
//!
//! [time]
//! T = 0.5
//! dt_target = 0.01
//!
//! [constraint]
//! m = 0.5
//!
//! [optimizer]
//! seed = 7
//!
//! [output]
//! dir = "out"
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;
use sha2::{Digest, Sha256};

use massopt::models::ScalarFn;
use massopt::solver::AdvectionScheme;
use massopt::{
    build_grid, builtin_reaction, BoundaryPolicy, DiffusionModel, Expr, OptConfig, ReactionModel,
    Scenario, SolverConfig, VelocityField,
};

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub domain: DomainSection,
    pub diffusion: DiffusionSection,
    #[serde(default)]
    pub velocity: VelocitySection,
    pub reaction: ReactionSection,
    pub time: TimeSection,
    pub constraint: ConstraintSection,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub output: OutputSection,
    pub enhance: Option<EnhanceSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSection {
    pub dim: usize,
    pub extents: Vec<f64>,
    pub resolutions: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffusionKind {
    Constant,
    Field,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionSection {
    pub kind: DiffusionKind,
    pub sigma: Option<f64>,
    #[serde(rename = "D_expr")]
    pub d_expr: Option<String>,
    pub theta: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VelocitySection {
    #[serde(default)]
    pub q_expr: Vec<String>,
    #[serde(rename = "amplitude_A", default)]
    pub amplitude_a: f64,
    #[serde(default = "default_policy")]
    pub boundary_policy: String,
}

fn default_policy() -> String {
    BoundaryPolicy::RequireTangential.as_str().to_string()
}

impl Default for VelocitySection {
    fn default() -> Self {
        Self {
            q_expr: Vec::new(),
            amplitude_a: 0.0,
            boundary_policy: default_policy(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReactionSection {
    pub name: String,
    #[serde(default)]
    pub params: ReactionParams,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReactionParams {
    /// Rate field `r(x, y)` of `heterogeneous_logistic`.
    pub r_expr: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    #[serde(rename = "T")]
    pub t: f64,
    pub dt_target: f64,
    #[serde(default = "one")]
    pub checkpoint_every: usize,
    pub linear_tol: Option<f64>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintSection {
    pub m: f64,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    pub max_iters: Option<usize>,
    pub step0: Option<f64>,
    pub armijo_c: Option<f64>,
    pub backtrack_factor: Option<f64>,
    pub stop_tol: Option<f64>,
    pub multistart_k: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    /// Number of evenly spaced intermediate states written by `simulate`.
    #[serde(default)]
    pub snapshots: usize,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: default_dir(),
            snapshots: 0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnhanceSection {
    /// When set, the amplitude is this multiple of the threshold.
    pub threshold_multiple: Option<f64>,
    #[serde(default)]
    pub allow_below_threshold: bool,
    /// Extra threshold multiples for the sweep table.
    #[serde(default)]
    pub sweep_multiples: Vec<f64>,
}

/// A parsed and validated scenario file.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub file: ConfigFile,
    pub path: PathBuf,
    pub sha256: String,
    pub scenario: Scenario,
    pub opt: OptConfig,
}

impl LoadedConfig {
    pub fn mass(&self) -> f64 {
        self.file.constraint.m
    }

    pub fn output_dir(&self) -> &Path {
        &self.file.output.dir
    }
}

fn expr(src: &str, what: &str) -> Result<Expr, CliError> {
    Expr::parse(src).map_err(|e| CliError::Config(format!("{what}: {e}")))
}

fn expr_fn(e: Expr) -> ScalarFn {
    Arc::new(move |p| e.eval(p))
}

pub fn parse_config(text: &str) -> Result<ConfigFile, CliError> {
    toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
}

pub fn load(path: &Path, scheme: AdvectionScheme) -> Result<LoadedConfig, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| CliError::Config(format!("{} is not UTF-8", path.display())))?;
    let file = parse_config(&text)?;
    let sha256 = hex::encode(Sha256::digest(&bytes));
    let scenario = build_scenario(&file, scheme)?;
    let opt = build_opt(&file.optimizer)?;
    Ok(LoadedConfig {
        file,
        path: path.to_path_buf(),
        sha256,
        scenario,
        opt,
    })
}

fn config_err(e: massopt::Error) -> CliError {
    CliError::Config(e.to_string())
}

pub fn build_scenario(file: &ConfigFile, scheme: AdvectionScheme) -> Result<Scenario, CliError> {
    let d = &file.domain;
    let grid = Arc::new(build_grid(d.dim, &d.extents, &d.resolutions).map_err(config_err)?);

    let diffusion = match file.diffusion.kind {
        DiffusionKind::Constant => {
            if file.diffusion.d_expr.is_some() || file.diffusion.theta.is_some() {
                return Err(CliError::Config(
                    "diffusion: kind = \"constant\" takes only sigma".into(),
                ));
            }
            let sigma = file
                .diffusion
                .sigma
                .ok_or_else(|| CliError::Config("diffusion: missing sigma".into()))?;
            DiffusionModel::constant(sigma).map_err(config_err)?
        }
        DiffusionKind::Field => {
            if file.diffusion.sigma.is_some() {
                return Err(CliError::Config(
                    "diffusion: kind = \"field\" takes D_expr and theta, not sigma".into(),
                ));
            }
            let src = file
                .diffusion
                .d_expr
                .as_deref()
                .ok_or_else(|| CliError::Config("diffusion: missing D_expr".into()))?;
            let theta = file
                .diffusion
                .theta
                .ok_or_else(|| CliError::Config("diffusion: missing theta".into()))?;
            DiffusionModel::field(expr_fn(expr(src, "diffusion.D_expr")?), theta, &grid)
                .map_err(config_err)?
        }
    };

    let v = &file.velocity;
    let policy: BoundaryPolicy = v.boundary_policy.parse().map_err(config_err)?;
    let velocity = if v.q_expr.is_empty() {
        if v.amplitude_a != 0.0 {
            return Err(CliError::Config(
                "velocity: amplitude_A is set but q_expr is empty".into(),
            ));
        }
        VelocityField::zero(grid.clone())
    } else {
        let comps = v
            .q_expr
            .iter()
            .enumerate()
            .map(|(k, s)| expr(s, &format!("velocity.q_expr[{k}]")))
            .collect::<Result<Vec<_>, _>>()?;
        VelocityField::from_exprs(grid.clone(), &comps, v.amplitude_a, policy).map_err(config_err)?
    };

    let r = &file.reaction;
    let reaction = match (r.name.as_str(), &r.params.r_expr) {
        ("heterogeneous_logistic", Some(src)) => {
            ReactionModel::heterogeneous_logistic(expr_fn(expr(src, "reaction.params.r_expr")?), &grid)
                .map_err(config_err)?
        }
        ("heterogeneous_logistic", None) => {
            return Err(CliError::Config(
                "reaction: heterogeneous_logistic needs params.r_expr".into(),
            ))
        }
        (name, None) => builtin_reaction(name).map_err(config_err)?,
        (name, Some(_)) => {
            return Err(CliError::Config(format!("reaction: {name} takes no params")))
        }
    };

    let t = &file.time;
    let mut solver = SolverConfig::new(t.t, t.dt_target)
        .and_then(|s| s.with_checkpoint_every(t.checkpoint_every))
        .map_err(config_err)?;
    if let Some(tol) = t.linear_tol {
        solver.linear_tol = tol;
        solver.validate().map_err(config_err)?;
    }
    solver.advection_scheme = scheme;

    Scenario::new(grid, diffusion, velocity, reaction, solver, file.constraint.m).map_err(config_err)
}

pub fn build_opt(s: &OptimizerSection) -> Result<OptConfig, CliError> {
    let d = OptConfig::default();
    let cfg = OptConfig {
        max_iters: s.max_iters.unwrap_or(d.max_iters),
        step0: s.step0.unwrap_or(d.step0),
        armijo_c: s.armijo_c.unwrap_or(d.armijo_c),
        backtrack_factor: s.backtrack_factor.unwrap_or(d.backtrack_factor),
        stop_tol: s.stop_tol.unwrap_or(d.stop_tol),
        multistart_k: s.multistart_k.unwrap_or(d.multistart_k),
        seed: s.seed.unwrap_or(d.seed),
    };
    cfg.validate().map_err(config_err)?;
    Ok(cfg)
}
