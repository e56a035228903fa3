//! Run configuration. Every command is described by a [`RunConfig`] that is
//! validated before any work starts and serialized into each report.

use std::path::PathBuf;

use compclust::ingest::UnknownPlacePolicy;
use compclust::kcross::DeviationConfig;
use compclust::sampler2::ProposalKind;
use compclust::Hyperparams;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
#[error("invalid configuration: {0}")]
pub struct ConfigError(pub String);

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError(msg.into()))
    }
}

fn positive(name: &str, v: f64) -> Result<(), ConfigError> {
    ensure(v > 0.0 && v.is_finite(), format!("{name} must be positive and finite, got {v}"))
}

fn check_window(w: &[f64; 4]) -> Result<(), ConfigError> {
    ensure(
        w.iter().all(|v| v.is_finite()) && w[0] < w[1] && w[2] < w[3],
        format!("window must be xmin,xmax,ymin,ymax with xmin < xmax and ymin < ymax, got {w:?}"),
    )
}

fn check_probs(name: &str, p: &[f64]) -> Result<(), ConfigError> {
    ensure(
        !p.is_empty() && p.iter().all(|&v| v >= 0.0 && v.is_finite()) && (p.iter().sum::<f64>() - 1.0).abs() < 1e-6,
        format!("{name} must be a probability vector, got {p:?}"),
    )
}

/// Where the points come from and how they are cleaned.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputConfig {
    pub path: PathBuf,
    /// `variant,canonical` lines merging place-name categories.
    pub merge_list: Option<PathBuf>,
    /// Same-type records closer than this are merged (km).
    pub threshold_km: f64,
    pub unknown_place: UnknownPlacePolicy,
    /// `xmin, xmax, ymin, ymax` in km; the padded bounding box otherwise.
    pub window: Option<[f64; 4]>,
    /// Number of types for `x_km,y_km,type` input; inferred when absent.
    pub n_types: Option<usize>,
}

impl InputConfig {
    fn validate(&self) -> Result<(), ConfigError> {
        ensure(
            self.threshold_km >= 0.0 && self.threshold_km.is_finite(),
            "merge threshold must be non-negative",
        )?;
        if let Some(w) = &self.window {
            check_window(w)?;
        }
        if let Some(k) = self.n_types {
            ensure(k >= 1, "number of types must be at least 1")?;
        }
        Ok(())
    }
}

/// Density of the cluster centers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DensityChoice {
    Uniform,
    /// Edge-corrected Gaussian kernel estimate of the pooled points; the
    /// bandwidth is cross-validated when not given.
    Kde { bandwidth: Option<f64> },
}

impl DensityChoice {
    fn validate(&self) -> Result<(), ConfigError> {
        match self {
            DensityChoice::Kde { bandwidth: Some(h) } => positive("bandwidth", *h),
            _ => Ok(()),
        }
    }
}

/// Priors, starting values and which parameters are updated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub sigma_max: f64,
    pub lambda_shape: f64,
    pub lambda_scale: f64,
    /// Dirichlet concentrations; `1/k` each when absent.
    pub alpha: Option<Vec<f64>>,
    pub init_sigma: Option<f64>,
    pub init_p: Option<Vec<f64>>,
    pub init_lambda: Option<f64>,
    pub update_sigma: bool,
    pub update_p: bool,
    pub update_lambda: bool,
    pub density: DensityChoice,
}

impl ModelConfig {
    pub fn hyperparams(&self, k: usize) -> Hyperparams {
        Hyperparams {
            sigma_max: self.sigma_max,
            lambda_shape: self.lambda_shape,
            lambda_scale: self.lambda_scale,
            size_concentration: self.alpha.clone().unwrap_or_else(|| vec![1.0 / k as f64; k]),
        }
    }

    fn validate(&self) -> Result<(), ConfigError> {
        positive("sigma_max", self.sigma_max)?;
        positive("lambda shape", self.lambda_shape)?;
        positive("lambda scale", self.lambda_scale)?;
        if let Some(a) = &self.alpha {
            ensure(
                !a.is_empty() && a.iter().all(|&v| v > 0.0 && v.is_finite()),
                "Dirichlet concentrations must be positive",
            )?;
        }
        if let Some(s) = self.init_sigma {
            ensure(s > 0.0 && s < self.sigma_max, "initial sigma must lie in (0, sigma_max)")?;
        }
        if let Some(p) = &self.init_p {
            check_probs("initial p", p)?;
        }
        if let Some(l) = self.init_lambda {
            positive("initial lambda", l)?;
        }
        self.density.validate()
    }

    /// Checks that the per-size vectors match the number of types.
    pub fn check_k(&self, k: usize) -> Result<(), ConfigError> {
        for (name, v) in [("alpha", &self.alpha), ("initial p", &self.init_p)] {
            if let Some(v) = v {
                ensure(v.len() == k, format!("{name} needs {k} entries, got {}", v.len()))?;
            }
        }
        Ok(())
    }
}

/// Chain settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerSettings {
    pub sweeps: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub chains: usize,
    /// Matching moves per sweep.
    pub n_moves: usize,
    pub proposal: ProposalKind,
    pub r_max: Option<f64>,
    pub sigma_step: f64,
    pub sigma_inner: usize,
    pub tempering: bool,
    /// Inverse temperatures, starting at 1; five geometric rungs to 0.2 when absent.
    pub ladder: Option<Vec<f64>>,
    /// Tile side (km) for multiple proposals.
    pub tile: Option<f64>,
    pub max_tiles: Option<usize>,
}

impl SamplerSettings {
    fn validate(&self, two_color: bool) -> Result<(), ConfigError> {
        ensure(self.sweeps > 0, "need at least one recorded sweep")?;
        ensure(self.thin > 0, "thinning must be at least 1")?;
        ensure(self.chains > 0, "need at least one chain")?;
        ensure(self.n_moves > 0, "need at least one move per sweep")?;
        self.proposal.validate().map_err(|e| ConfigError(e.to_string()))?;
        if let Some(r) = self.r_max {
            positive("r_max", r)?;
        }
        ensure(self.sigma_step >= 0.0 && self.sigma_step.is_finite(), "sigma step must be non-negative")?;
        if !two_color {
            ensure(
                !self.tempering && self.ladder.is_none() && self.tile.is_none(),
                "tempering and tiled proposals are two-color options (use fit2)",
            )?;
        }
        ensure(!(self.tempering && self.tile.is_some()), "choose either tempering or tiled proposals")?;
        if let Some(t) = self.tile {
            positive("tile", t)?;
            ensure(self.r_max.is_some(), "tiled proposals need r_max")?;
        }
        ensure(self.max_tiles != Some(0), "max tiles must be at least 1")?;
        Ok(())
    }
}

/// Source of the weights for `mode`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModeSource {
    /// A dense CSV matrix of pair weights, reds in rows.
    Weights { path: PathBuf },
    /// Pair weights of a two-color pattern at fixed parameters.
    Pattern {
        input: InputConfig,
        sigma: f64,
        p: Vec<f64>,
        lambda: f64,
        density: DensityChoice,
        r_max: Option<f64>,
    },
}

/// Settings of the K-cross deviation test.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KcrossConfig {
    pub input: InputConfig,
    /// Per-type kernel bandwidth; cross-validated per type when absent.
    pub bandwidth: Option<f64>,
    pub n_sims: usize,
    pub n_mean_sims: usize,
    pub alpha: f64,
    pub r_max: f64,
    pub r_steps: usize,
    pub renormalize: bool,
}

impl KcrossConfig {
    pub fn deviation(&self) -> DeviationConfig {
        DeviationConfig {
            n_sims: self.n_sims,
            n_mean_sims: self.n_mean_sims,
            alpha: self.alpha,
            r_max: self.r_max,
            r_steps: self.r_steps,
            renormalize: self.renormalize,
        }
    }
}

/// What `simulate` draws.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SimulateModel {
    Clustered { sigma: f64, p: Vec<f64>, lambda: f64, crop: bool },
    /// Independent uniform types with fixed counts.
    Csri { counts: Vec<usize> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum CommandConfig {
    Fit { input: InputConfig, model: ModelConfig, sampler: SamplerSettings, n_null: usize },
    Fit2 { input: InputConfig, model: ModelConfig, sampler: SamplerSettings, n_null: usize },
    Mode { source: ModeSource },
    Kcross(KcrossConfig),
    Simulate { model: SimulateModel, window: [f64; 4] },
    Diagnose { run_dir: PathBuf, n_null: usize },
}

/// Everything needed to reproduce a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: CommandConfig,
    /// Output directory; only `mode` may run without one.
    pub out_dir: Option<PathBuf>,
    pub seed: u64,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        ensure(
            self.out_dir.is_some() || matches!(self.command, CommandConfig::Mode { .. }),
            "an output directory is required",
        )?;
        match &self.command {
            CommandConfig::Fit { input, model, sampler, .. } | CommandConfig::Fit2 { input, model, sampler, .. } => {
                input.validate()?;
                model.validate()?;
                let two = matches!(self.command, CommandConfig::Fit2 { .. });
                sampler.validate(two)?;
                if sampler.tempering {
                    ensure(
                        !(model.update_sigma || model.update_p || model.update_lambda),
                        "tempering runs at fixed parameters: pass --fix-sigma --fix-p --fix-lambda",
                    )?;
                }
                Ok(())
            }
            CommandConfig::Mode { source } => match source {
                ModeSource::Weights { .. } => Ok(()),
                ModeSource::Pattern { input, sigma, p, lambda, density, r_max } => {
                    input.validate()?;
                    positive("sigma", *sigma)?;
                    positive("lambda", *lambda)?;
                    check_probs("p", p)?;
                    ensure(p.len() == 2, "mode needs a two-entry p")?;
                    if let Some(r) = r_max {
                        positive("r_max", *r)?;
                    }
                    density.validate()
                }
            },
            CommandConfig::Kcross(k) => {
                k.input.validate()?;
                if let Some(h) = k.bandwidth {
                    positive("bandwidth", h)?;
                }
                ensure(k.n_sims > 0 && k.n_mean_sims > 0, "need at least one simulation per batch")?;
                ensure(k.alpha > 0.0 && k.alpha < 1.0, "alpha must lie in (0, 1)")?;
                positive("r_max", k.r_max)?;
                ensure(k.r_steps >= 2, "need at least two distances")
            }
            CommandConfig::Simulate { model, window } => {
                check_window(window)?;
                match model {
                    SimulateModel::Clustered { sigma, p, lambda, .. } => {
                        positive("sigma", *sigma)?;
                        ensure(*lambda >= 0.0 && lambda.is_finite(), "lambda must be non-negative")?;
                        check_probs("p", p)
                    }
                    SimulateModel::Csri { counts } => ensure(!counts.is_empty(), "need at least one type count"),
                }
            }
            CommandConfig::Diagnose { .. } => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self.command {
            CommandConfig::Fit { .. } => "fit",
            CommandConfig::Fit2 { .. } => "fit2",
            CommandConfig::Mode { .. } => "mode",
            CommandConfig::Kcross(_) => "kcross",
            CommandConfig::Simulate { .. } => "simulate",
            CommandConfig::Diagnose { .. } => "diagnose",
        }
    }
}
