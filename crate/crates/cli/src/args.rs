//! Command-line flags. Each subcommand maps onto a [`RunConfig`].

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use compclust::ingest::UnknownPlacePolicy;
use compclust::kcross::{DEFAULT_R_MAX, DEFAULT_R_STEPS};
use compclust::sampler2::ProposalKind;

use crate::config::{
    CommandConfig, ConfigError, DensityChoice, InputConfig, KcrossConfig, ModeSource, ModelConfig, RunConfig,
    SamplerSettings, SimulateModel,
};

#[derive(Debug, Parser)]
#[command(name = "compclust", version, about = "Bayesian complementary clustering of multi-type point patterns")]
pub struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// k-color Gibbs run: samples, diagnostics and summaries.
    Fit(FitArgs),
    /// Two-color Gibbs run, optionally tempered or with tiled proposals.
    Fit2(FitArgs),
    /// Highest-weight two-color matching.
    Mode(ModeArgs),
    /// Inhomogeneous K-cross deviation test.
    Kcross(KcrossArgs),
    /// Synthetic patterns from the model or from independent uniform types.
    Simulate(SimulateArgs),
    /// Recomputes diagnostics and summaries from a finished fit.
    Diagnose(DiagnoseArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum UnknownPlace {
    Reject,
    New,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Density {
    Uniform,
    Kde,
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Records CSV (`county,place,parish,gridref,date`) or `x_km,y_km,type`.
    #[arg(long)]
    pub input: PathBuf,
    /// File of `variant,canonical` place-name pairs.
    #[arg(long)]
    pub merge_list: Option<PathBuf>,
    /// Same-type records closer than this are merged (km).
    #[arg(long, default_value_t = 3.0)]
    pub threshold_km: f64,
    #[arg(long, value_enum, default_value_t = UnknownPlace::New)]
    pub unknown_place: UnknownPlace,
    /// Observation window `xmin,xmax,ymin,ymax` in km.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub window: Option<Vec<f64>>,
    /// Number of types for `x_km,y_km,type` input.
    #[arg(long)]
    pub n_types: Option<usize>,
}

impl InputArgs {
    fn config(&self) -> Result<InputConfig, ConfigError> {
        Ok(InputConfig {
            path: self.input.clone(),
            merge_list: self.merge_list.clone(),
            threshold_km: self.threshold_km,
            unknown_place: match self.unknown_place {
                UnknownPlace::Reject => UnknownPlacePolicy::Reject,
                UnknownPlace::New => UnknownPlacePolicy::NewCategory,
            },
            window: self.window.as_deref().map(window4).transpose()?,
            n_types: self.n_types,
        })
    }
}

fn window4(v: &[f64]) -> Result<[f64; 4], ConfigError> {
    v.try_into()
        .map_err(|_| ConfigError(format!("window needs four numbers, got {}", v.len())))
}

fn density(kind: Density, bandwidth: Option<f64>) -> DensityChoice {
    match kind {
        Density::Uniform => DensityChoice::Uniform,
        Density::Kde => DensityChoice::Kde { bandwidth },
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,

    /// Upper end of the uniform prior on sigma (km).
    #[arg(long, default_value_t = 50.0)]
    pub sigma_max: f64,
    #[arg(long, default_value_t = 300.0)]
    pub lambda_shape: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda_scale: f64,
    /// Dirichlet concentrations of the cluster-size distribution.
    #[arg(long, value_delimiter = ',')]
    pub alpha: Option<Vec<f64>>,
    #[arg(long)]
    pub init_sigma: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub init_p: Option<Vec<f64>>,
    #[arg(long)]
    pub init_lambda: Option<f64>,
    #[arg(long)]
    pub fix_sigma: bool,
    #[arg(long)]
    pub fix_p: bool,
    #[arg(long)]
    pub fix_lambda: bool,
    /// Density of the cluster centers.
    #[arg(long, value_enum, default_value_t = Density::Uniform)]
    pub density: Density,
    /// Kernel bandwidth (km) for `--density kde`; cross-validated otherwise.
    #[arg(long)]
    pub bandwidth: Option<f64>,

    /// Recorded sweeps per chain (before thinning).
    #[arg(long, default_value_t = 1000)]
    pub sweeps: usize,
    #[arg(long, default_value_t = 200)]
    pub burn_in: usize,
    #[arg(long, default_value_t = 1)]
    pub thin: usize,
    #[arg(long, default_value_t = 2)]
    pub chains: usize,
    /// Matching moves per sweep.
    #[arg(long, default_value_t = 200)]
    pub n_moves: usize,
    /// `p1[:delta]`, `p2`, `p3` or `p4`.
    #[arg(long, default_value = "p4", value_parser = parse_proposal)]
    pub proposal: ProposalKind,
    /// Drop pairs farther apart than this (km).
    #[arg(long)]
    pub r_max: Option<f64>,
    #[arg(long, default_value_t = 0.1)]
    pub sigma_step: f64,
    #[arg(long, default_value_t = 5)]
    pub sigma_inner: usize,
    /// Simulated tempering over the matching (fit2, fixed parameters).
    #[arg(long)]
    pub tempering: bool,
    /// Inverse temperatures starting at 1.
    #[arg(long, value_delimiter = ',')]
    pub ladder: Option<Vec<f64>>,
    /// Tile side (km) for multiple proposals (fit2).
    #[arg(long)]
    pub tile: Option<f64>,
    #[arg(long)]
    pub max_tiles: Option<usize>,
    /// Null draws per sample for the association measure.
    #[arg(long, default_value_t = 20)]
    pub n_null: usize,
}

fn parse_proposal(s: &str) -> Result<ProposalKind, String> {
    s.parse().map_err(|e: compclust::SamplerError| e.to_string())
}

impl FitArgs {
    fn parts(&self) -> Result<(InputConfig, ModelConfig, SamplerSettings), ConfigError> {
        let model = ModelConfig {
            sigma_max: self.sigma_max,
            lambda_shape: self.lambda_shape,
            lambda_scale: self.lambda_scale,
            alpha: self.alpha.clone(),
            init_sigma: self.init_sigma,
            init_p: self.init_p.clone(),
            init_lambda: self.init_lambda,
            update_sigma: !self.fix_sigma,
            update_p: !self.fix_p,
            update_lambda: !self.fix_lambda,
            density: density(self.density, self.bandwidth),
        };
        let sampler = SamplerSettings {
            sweeps: self.sweeps,
            burn_in: self.burn_in,
            thin: self.thin,
            chains: self.chains,
            n_moves: self.n_moves,
            proposal: self.proposal,
            r_max: self.r_max,
            sigma_step: self.sigma_step,
            sigma_inner: self.sigma_inner,
            tempering: self.tempering,
            ladder: self.ladder.clone(),
            tile: self.tile,
            max_tiles: self.max_tiles,
        };
        Ok((self.input.config()?, model, sampler))
    }
}

#[derive(Debug, Args)]
pub struct ModeArgs {
    /// Dense CSV matrix of pair weights (reds in rows, no header).
    #[arg(long, conflicts_with = "input")]
    pub weights: Option<PathBuf>,
    #[arg(long, required_unless_present = "weights")]
    pub input: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    pub threshold_km: f64,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub window: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long, value_delimiter = ',', default_value = "0.5,0.5")]
    pub p: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long, value_enum, default_value_t = Density::Uniform)]
    pub density: Density,
    #[arg(long)]
    pub bandwidth: Option<f64>,
    #[arg(long)]
    pub r_max: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct KcrossArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Kernel bandwidth (km); cross-validated per type when absent.
    #[arg(long)]
    pub bandwidth: Option<f64>,
    #[arg(long, default_value_t = 99)]
    pub n_sims: usize,
    #[arg(long, default_value_t = 99)]
    pub n_mean_sims: usize,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = DEFAULT_R_MAX)]
    pub r_max: f64,
    #[arg(long, default_value_t = DEFAULT_R_STEPS)]
    pub r_steps: usize,
    /// Use the intensities as estimated, without rescaling to each pattern's counts.
    #[arg(long)]
    pub no_renormalize: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Window `xmin,xmax,ymin,ymax` in km.
    #[arg(long, value_delimiter = ',', default_value = "0,100,0,100", allow_hyphen_values = true)]
    pub window: Vec<f64>,
    #[arg(long, default_value_t = 5.0)]
    pub sigma: f64,
    #[arg(long, value_delimiter = ',', default_value = "0.5,0.5")]
    pub p: Vec<f64>,
    #[arg(long, default_value_t = 100.0)]
    pub lambda: f64,
    /// Drop simulated points outside the window.
    #[arg(long)]
    pub crop: bool,
    /// Independent uniform types with these counts instead of the model.
    #[arg(long, value_delimiter = ',')]
    pub csri: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    /// Output directory of a previous fit.
    #[arg(long)]
    pub run: PathBuf,
    /// Where to write; the run directory by default.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 20)]
    pub n_null: usize,
}

impl Command {
    pub fn into_config(self) -> Result<RunConfig, ConfigError> {
        let cfg = match self {
            Command::Fit(a) => {
                let (input, model, sampler) = a.parts()?;
                RunConfig {
                    command: CommandConfig::Fit {
                        input,
                        model,
                        sampler,
                        n_null: a.n_null,
                    },
                    out_dir: Some(a.out),
                    seed: a.seed,
                }
            }
            Command::Fit2(a) => {
                let (input, model, sampler) = a.parts()?;
                RunConfig {
                    command: CommandConfig::Fit2 {
                        input,
                        model,
                        sampler,
                        n_null: a.n_null,
                    },
                    out_dir: Some(a.out),
                    seed: a.seed,
                }
            }
            Command::Mode(a) => {
                let source = match (a.weights, a.input) {
                    (Some(path), _) => ModeSource::Weights { path },
                    (None, Some(path)) => ModeSource::Pattern {
                        input: InputConfig {
                            path,
                            merge_list: None,
                            threshold_km: a.threshold_km,
                            unknown_place: UnknownPlacePolicy::NewCategory,
                            window: a.window.as_deref().map(window4).transpose()?,
                            n_types: Some(2),
                        },
                        sigma: a.sigma,
                        p: a.p,
                        lambda: a.lambda,
                        density: density(a.density, a.bandwidth),
                        r_max: a.r_max,
                    },
                    (None, None) => return Err(ConfigError("mode needs --weights or --input".into())),
                };
                RunConfig {
                    command: CommandConfig::Mode { source },
                    out_dir: a.out,
                    seed: 0,
                }
            }
            Command::Kcross(a) => RunConfig {
                command: CommandConfig::Kcross(KcrossConfig {
                    input: a.input.config()?,
                    bandwidth: a.bandwidth,
                    n_sims: a.n_sims,
                    n_mean_sims: a.n_mean_sims,
                    alpha: a.alpha,
                    r_max: a.r_max,
                    r_steps: a.r_steps,
                    renormalize: !a.no_renormalize,
                }),
                out_dir: Some(a.out),
                seed: a.seed,
            },
            Command::Simulate(a) => {
                let model = match a.csri {
                    Some(counts) => SimulateModel::Csri { counts },
                    None => SimulateModel::Clustered {
                        sigma: a.sigma,
                        p: a.p,
                        lambda: a.lambda,
                        crop: a.crop,
                    },
                };
                RunConfig {
                    command: CommandConfig::Simulate {
                        model,
                        window: window4(&a.window)?,
                    },
                    out_dir: Some(a.out),
                    seed: a.seed,
                }
            }
            Command::Diagnose(a) => RunConfig {
                out_dir: Some(a.out.unwrap_or_else(|| a.run.clone())),
                command: CommandConfig::Diagnose {
                    run_dir: a.run,
                    n_null: a.n_null,
                },
                seed: a.seed,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> RunConfig {
        let mut full = vec!["compclust"];
        full.extend_from_slice(args);
        Cli::try_parse_from(full).unwrap().command.into_config().unwrap()
    }

    #[test]
    fn fit_flags_fill_the_config() {
        let c = parse(&[
            "fit", "--input", "a.csv", "--out", "o", "--proposal", "p1:0.01", "--chains", "3", "--fix-lambda",
        ]);
        match c.command {
            CommandConfig::Fit { model, sampler, input, .. } => {
                assert_eq!(sampler.proposal, ProposalKind::P1 { delta: 0.01 });
                assert_eq!(sampler.chains, 3);
                assert!(!model.update_lambda && model.update_sigma);
                assert_eq!(input.threshold_km, 3.0);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn tempering_needs_fixed_parameters() {
        let cli = Cli::try_parse_from(["compclust", "fit2", "--input", "a.csv", "--out", "o", "--tempering"]).unwrap();
        assert!(cli.command.into_config().is_err());
        parse(&[
            "fit2", "--input", "a.csv", "--out", "o", "--tempering", "--fix-sigma", "--fix-p", "--fix-lambda",
        ]);
    }

    #[test]
    fn negative_window_is_accepted() {
        let c = parse(&["simulate", "--out", "o", "--window", "-5,5,-5,5"]);
        match c.command {
            CommandConfig::Simulate { window, .. } => assert_eq!(window, [-5.0, 5.0, -5.0, 5.0]),
            other => panic!("{other:?}"),
        }
    }
}
