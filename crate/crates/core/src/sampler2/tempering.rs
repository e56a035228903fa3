use rand::Rng;
use serde::Serialize;

use super::{Chain2, ProposalKind, StepOutcome, WeightTable};
use crate::error::SamplerError;
use crate::pattern::BipartiteMatching;

/// Inverse temperatures `1 = beta_0 > ... > beta_m > 0` with log
/// pseudo-prior weights, one per rung.
#[derive(Clone, Debug, Serialize)]
pub struct TemperingLadder {
    betas: Vec<f64>,
    log_pseudo: Vec<f64>,
    rung: usize,
    visits: Vec<u64>,
    adapting: bool,
    adapt_steps: u64,
    gain0: f64,
}

impl TemperingLadder {
    pub fn new(betas: Vec<f64>) -> Result<Self, SamplerError> {
        if betas.first() != Some(&1.0) {
            return Err(SamplerError::BadLadder("first inverse temperature must be 1"));
        }
        if betas.windows(2).any(|w| !(w[1] < w[0])) || betas.iter().any(|&b| !(b > 0.0)) {
            return Err(SamplerError::BadLadder("inverse temperatures must decrease strictly and stay positive"));
        }
        let m = betas.len();
        Ok(Self {
            betas,
            log_pseudo: vec![0.0; m],
            rung: 0,
            visits: vec![0; m],
            adapting: true,
            adapt_steps: 0,
            gain0: 1.0,
        })
    }

    /// `m + 1` rungs spaced geometrically from 1 down to `beta_min`.
    pub fn geometric(n_hot: usize, beta_min: f64) -> Result<Self, SamplerError> {
        if !(beta_min > 0.0 && beta_min < 1.0) && n_hot > 0 {
            return Err(SamplerError::BadLadder("beta_min must lie in (0, 1)"));
        }
        let ratio = if n_hot == 0 { 1.0 } else { beta_min.powf(1.0 / n_hot as f64) };
        Self::new((0..=n_hot).map(|r| ratio.powi(r as i32)).collect())
    }

    /// Five hot rungs down to `beta = 0.2`.
    pub fn default_ladder() -> Self {
        Self::geometric(5, 0.2).expect("valid default ladder")
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn rung(&self) -> usize {
        self.rung
    }

    pub fn beta(&self) -> f64 {
        self.betas[self.rung]
    }

    pub fn log_pseudo_priors(&self) -> &[f64] {
        &self.log_pseudo
    }

    pub fn set_log_pseudo_priors(&mut self, w: Vec<f64>) -> Result<(), SamplerError> {
        if w.len() != self.betas.len() || w.iter().any(|v| !v.is_finite()) {
            return Err(SamplerError::BadLadder("one finite pseudo-prior per rung"));
        }
        self.log_pseudo = w;
        Ok(())
    }

    pub fn visits(&self) -> &[u64] {
        &self.visits
    }

    /// Initial gain of the occupancy-equalizing adaptation.
    pub fn with_gain(mut self, gain0: f64) -> Self {
        self.gain0 = gain0;
        self
    }

    /// Stops adapting the pseudo-priors; the chain is then a plain MH chain
    /// on (matching, rung).
    pub fn freeze(&mut self) {
        self.adapting = false;
    }

    pub fn is_adapting(&self) -> bool {
        self.adapting
    }

    fn adapt(&mut self) {
        self.visits[self.rung] += 1;
        if !self.adapting {
            return;
        }
        self.adapt_steps += 1;
        let m = self.betas.len() as f64;
        let t0 = 1000.0 * m;
        let gain = self.gain0 * t0 / (self.adapt_steps as f64).max(t0);
        // push weight away from the current rung, towards equal occupancy
        for (r, w) in self.log_pseudo.iter_mut().enumerate() {
            let hit = if r == self.rung { 1.0 } else { 0.0 };
            *w -= gain * (hit - 1.0 / m);
        }
    }
}

/// A chain on (matching, rung) targeting `pi^beta * exp(c_beta)`.
#[derive(Clone, Debug)]
pub struct TemperedChain<'t> {
    chain: Chain2<'t>,
    ladder: TemperingLadder,
    rung_moves: u64,
    rung_accepted: u64,
}

impl<'t> TemperedChain<'t> {
    pub fn new(
        table: &'t WeightTable,
        kind: ProposalKind,
        init: BipartiteMatching,
        ladder: TemperingLadder,
    ) -> Result<Self, SamplerError> {
        let mut chain = Chain2::new(table, kind, init)?;
        chain.set_beta(ladder.beta());
        Ok(Self {
            chain,
            ladder,
            rung_moves: 0,
            rung_accepted: 0,
        })
    }

    /// The current matching and the ladder, with its rung and pseudo-priors.
    pub fn into_parts(self) -> (BipartiteMatching, TemperingLadder) {
        (self.chain.into_state(), self.ladder)
    }

    pub fn chain(&self) -> &Chain2<'t> {
        &self.chain
    }

    pub fn state(&self) -> &BipartiteMatching {
        self.chain.state()
    }

    pub fn ladder(&self) -> &TemperingLadder {
        &self.ladder
    }

    pub fn ladder_mut(&mut self) -> &mut TemperingLadder {
        &mut self.ladder
    }

    pub fn rung(&self) -> usize {
        self.ladder.rung
    }

    pub fn rung_acceptance(&self) -> f64 {
        if self.rung_moves == 0 {
            0.0
        } else {
            self.rung_accepted as f64 / self.rung_moves as f64
        }
    }

    /// Log acceptance of moving from the current rung to `to`.
    pub fn rung_log_acceptance(&self, to: usize) -> f64 {
        let l = &self.ladder;
        (l.betas[to] - l.betas[l.rung]) * self.chain.ln_weight() + l.log_pseudo[to] - l.log_pseudo[l.rung]
    }

    fn rung_move<R: Rng + ?Sized>(&mut self, rng: &mut R) -> bool {
        let m = self.ladder.betas.len();
        if m == 1 {
            return false;
        }
        let r = self.ladder.rung;
        let to = if rng.random::<bool>() { r + 1 } else { r.wrapping_sub(1) };
        if to >= m {
            return false;
        }
        self.rung_moves += 1;
        let la = self.rung_log_acceptance(to);
        if la >= 0.0 || rng.random::<f64>().ln() < la {
            self.rung_accepted += 1;
            self.ladder.rung = to;
            self.chain.set_beta(self.ladder.betas[to]);
            true
        } else {
            false
        }
    }
}

/// One within-rung MH step followed by one rung move.
pub fn tempering_step<R: Rng + ?Sized>(tc: &mut TemperedChain<'_>, rng: &mut R) -> StepOutcome {
    let out = tc.chain.step(rng);
    tc.rung_move(rng);
    tc.ladder.adapt();
    out
}
