//! Metropolis-within-Gibbs for two colors: MH moves on the matching with the
//! pair-weight table of the current parameters, then the parameter steps.

use rand::Rng;

use super::{build_weight_table, Chain2, MultiChain, ProposalGrid, TemperedChain, TemperingLadder, WeightTable};
use crate::error::SamplerError;
use crate::model::CenterDensity;
use crate::pattern::{BipartiteMatching, Matching, PointPattern};
use crate::samplerk::{update_params, ChainState, SamplerConfig, SweepInfo};

/// How the matching moves within a sweep.
#[derive(Clone, Debug)]
pub enum MatchingKernel {
    /// `n_moves` single-proposal steps.
    Plain,
    /// `n_moves` tempered steps; the ladder and rung persist across sweeps.
    Tempered(TemperingLadder),
    /// `n_moves` multiple-proposal steps on a tile grid.
    Tiled(ProposalGrid),
}

impl MatchingKernel {
    /// Tempering is defined for the matching at fixed parameters only.
    pub fn validate(&self, cfg: &SamplerConfig) -> Result<(), SamplerError> {
        let u = cfg.updates;
        match self {
            MatchingKernel::Tempered(_) if u.sigma || u.size_probs || u.lambda => Err(SamplerError::BadLadder(
                "tempering needs fixed parameters (disable the sigma, p and lambda updates)",
            )),
            MatchingKernel::Tiled(_) if cfg.r_max.is_none() => {
                Err(SamplerError::BadGrid("tiled proposals need r_max".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Expresses `rho` in the red/blue positions of `table`.
pub fn to_bipartite(table: &WeightTable, rho: &Matching) -> Result<BipartiteMatching, SamplerError> {
    let n = rho.n_points();
    let mut red_pos = vec![usize::MAX; n];
    let mut blue_pos = vec![usize::MAX; n];
    table.red_index().iter().enumerate().for_each(|(i, &p)| red_pos[p] = i);
    table.blue_index().iter().enumerate().for_each(|(j, &p)| blue_pos[p] = j);
    let mut pairs = Vec::with_capacity(rho.edges().len());
    for e in rho.edges() {
        let (a, b) = (e[0], e[1]);
        let pair = if red_pos[a] != usize::MAX { (red_pos[a], blue_pos[b]) } else { (red_pos[b], blue_pos[a]) };
        if e.len() != 2 || pair.0 == usize::MAX || pair.1 == usize::MAX {
            return Err(SamplerError::BadProposal("partition is not a two-color matching"));
        }
        pairs.push(pair);
    }
    Ok(BipartiteMatching::from_pairs(table.n_red(), table.n_blue(), pairs)?)
}

/// One two-color sweep. The weight table is rebuilt from the current
/// parameters, so `sigma`, `p` and `lambda` may change between sweeps.
pub fn gibbs_sweep_2<R: Rng + ?Sized>(
    x: &PointPattern,
    state: &mut ChainState,
    cfg: &SamplerConfig,
    kernel: &mut MatchingKernel,
    g: &dyn CenterDensity,
    rng: &mut R,
) -> Result<SweepInfo, SamplerError> {
    let table = build_weight_table(x, &state.params, g, cfg.r_max)?;
    let init = to_bipartite(&table, &state.rho)?;
    let mut rung = 0;
    let (m, accepted_moves) = match kernel {
        MatchingKernel::Plain => {
            let mut c = Chain2::new(&table, cfg.proposal, init)?;
            c.run(cfg.n_moves, rng);
            let acc = c.stats().accepted;
            (c.into_state(), acc)
        }
        MatchingKernel::Tempered(ladder) => {
            let mut c = TemperedChain::new(&table, cfg.proposal, init, ladder.clone())?;
            let mut acc = 0;
            for _ in 0..cfg.n_moves {
                if super::tempering_step(&mut c, rng) == super::StepOutcome::Accepted {
                    acc += 1;
                }
            }
            let (m, l) = c.into_parts();
            rung = l.rung();
            *ladder = l;
            (m, acc)
        }
        MatchingKernel::Tiled(grid) => {
            let mut c = MultiChain::new(&table, cfg.proposal, init, grid.clone())?;
            let mut acc = 0u64;
            for _ in 0..cfg.n_moves {
                acc += c.step(rng) as u64;
            }
            (c.state().clone(), acc)
        }
    };
    state.rho = table.to_matching(&m, x.len());
    let sigma_accepted = update_params(x, state, cfg, rng);
    Ok(SweepInfo {
        accepted_moves,
        sigma_accepted,
        rung,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{log_posterior_partition, ModelParams, UniformDensity};
    use crate::pattern::{MarkedPoint, ObservationWindow};
    use crate::samplerk::{testutil::all_partitions, UpdateFlags};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    fn small() -> PointPattern {
        let pts = vec![
            MarkedPoint::new(1.0, 1.0, 0),
            MarkedPoint::new(1.4, 1.2, 1),
            MarkedPoint::new(2.0, 1.1, 0),
            MarkedPoint::new(1.8, 1.6, 1),
            MarkedPoint::new(2.5, 2.0, 1),
        ];
        PointPattern::new(pts, 2, ObservationWindow::square(4.0).unwrap()).unwrap()
    }

    fn fixed_cfg() -> SamplerConfig {
        let mut cfg = SamplerConfig::defaults(2);
        cfg.n_moves = 3;
        cfg.updates = UpdateFlags {
            sigma: false,
            size_probs: false,
            lambda: false,
        };
        cfg
    }

    fn check_law(mut kernel: MatchingKernel, seed: u64) {
        let x = small();
        let g = UniformDensity::new(x.window().clone());
        let params = ModelParams::new(0.6, vec![0.5, 0.5], 3.0).unwrap();
        let cfg = fixed_cfg();
        let parts = all_partitions(&x.marks());
        let lp: Vec<f64> = parts.iter().map(|r| log_posterior_partition(&x, r, &params, &g)).collect();
        let mx = lp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = lp.iter().map(|l| (l - mx).exp()).sum();
        let mut state = ChainState {
            rho: Matching::empty(x.len()),
            params,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut counts: HashMap<Matching, usize> = HashMap::new();
        let mut kept = 0;
        for _ in 0..200_000 {
            let info = gibbs_sweep_2(&x, &mut state, &cfg, &mut kernel, &g, &mut rng).unwrap();
            if info.rung == 0 {
                *counts.entry(state.rho.clone()).or_default() += 1;
                kept += 1;
            }
        }
        let tv: f64 = 0.5
            * parts
                .iter()
                .zip(&lp)
                .map(|(r, l)| ((l - mx).exp() / z - counts.get(r).copied().unwrap_or(0) as f64 / kept as f64).abs())
                .sum::<f64>();
        assert!(tv < 0.02, "TV {tv}");
    }

    #[test]
    fn plain_sweeps_sample_the_conditional() {
        check_law(MatchingKernel::Plain, 1);
    }

    #[test]
    fn tempered_sweeps_on_rung_zero_sample_the_conditional() {
        check_law(MatchingKernel::Tempered(TemperingLadder::geometric(2, 0.5).unwrap()), 2);
    }

    #[test]
    fn round_trip_through_bipartite() {
        let x = small();
        let g = UniformDensity::new(x.window().clone());
        let params = ModelParams::new(0.6, vec![0.5, 0.5], 3.0).unwrap();
        let table = build_weight_table(&x, &params, &g, None).unwrap();
        let rho = Matching::from_edges(&x.marks(), [vec![0, 3], vec![1, 2]]).unwrap();
        let b = to_bipartite(&table, &rho).unwrap();
        assert_eq!(table.to_matching(&b, x.len()), rho);
    }

    #[test]
    fn tempering_with_parameter_updates_is_rejected() {
        let cfg = SamplerConfig::defaults(2);
        let k = MatchingKernel::Tempered(TemperingLadder::default_ladder());
        assert!(k.validate(&cfg).is_err());
        assert!(MatchingKernel::Tiled(ProposalGrid::new(3.0, None).unwrap()).validate(&cfg).is_err());
        assert!(MatchingKernel::Plain.validate(&cfg).is_ok());
    }

    #[test]
    fn full_sweeps_move_parameters() {
        let x = small();
        let g = UniformDensity::new(x.window().clone());
        let cfg = SamplerConfig::defaults(2);
        let mut state = ChainState::initial(&x, &cfg.hyper);
        let start = state.params.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            gibbs_sweep_2(&x, &mut state, &cfg, &mut MatchingKernel::Plain, &g, &mut rng).unwrap();
        }
        assert_ne!(state.params, start);
        state.rho.validate(&x.marks()).unwrap();
    }
}
