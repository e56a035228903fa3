//! Metropolis-Hastings over matchings of a complete bipartite graph.
//!
//! A step draws a pair `(i, j)` from a state-dependent distribution
//! `q_rho`, proposes `rho o (i, j)` and accepts with the exact ratio of
//! forward and reverse proposal probabilities. Because switch and
//! double-switch moves can be reached or undone through more than one pair,
//! both probabilities sum over every pair that links the two states.

mod gibbs;
mod hungarian;
mod multi;
mod table;
mod tempering;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::SamplerError;
use crate::pattern::{BipartiteMatching, MoveKind};

pub use gibbs::{gibbs_sweep_2, to_bipartite, MatchingKernel};
pub use hungarian::{hungarian_mode, solve_assignment};
pub use multi::{multiproposal_step, MultiChain, ProposalGrid};
pub use table::{build_weight_table, P4Table, WeightTable, MIN_LN_WEIGHT};
pub use tempering::{tempering_step, TemperedChain, TemperingLadder};

/// Full recomputation interval for the cached proposal masses.
const REFRESH_EVERY: usize = 1024;

/// Largest log-ratio exponentiated by the ratio-proportional proposal.
const MAX_LN_RATIO: f64 = 700.0;

/// How the pair `(i, j)` is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProposalKind {
    /// Uniform over pairs with `w_ij > delta`; the target drops every
    /// matching that uses a lighter edge.
    P1 { delta: f64 },
    /// Proportional to `pi(rho o (i,j))`.
    P2,
    /// Proportional to `pi(new) / (pi(old) + pi(new))`.
    P3,
    /// Precomputed `q_add` / `q_rem` masses.
    P4,
}

impl ProposalKind {
    pub fn validate(self) -> Result<Self, SamplerError> {
        match self {
            ProposalKind::P1 { delta } if !(delta > 0.0 && delta.is_finite()) => {
                Err(SamplerError::BadProposal("P1 threshold must be positive"))
            }
            k => Ok(k),
        }
    }

    fn depends_on_partners(self) -> bool {
        matches!(self, ProposalKind::P2 | ProposalKind::P3)
    }
}

impl fmt::Display for ProposalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProposalKind::P1 { delta } => write!(f, "p1:{delta}"),
            ProposalKind::P2 => f.write_str("p2"),
            ProposalKind::P3 => f.write_str("p3"),
            ProposalKind::P4 => f.write_str("p4"),
        }
    }
}

impl FromStr for ProposalKind {
    type Err = SamplerError;

    /// `p1`, `p1:<delta>` (default `0.001`), `p2`, `p3` or `p4`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        let kind = match lower.split_once(':') {
            Some(("p1", d)) => ProposalKind::P1 {
                delta: d.parse().map_err(|_| SamplerError::BadProposal("bad P1 threshold"))?,
            },
            None if lower == "p1" => ProposalKind::P1 { delta: 1e-3 },
            None if lower == "p2" => ProposalKind::P2,
            None if lower == "p3" => ProposalKind::P3,
            None if lower == "p4" => ProposalKind::P4,
            _ => return Err(SamplerError::BadProposal("unknown proposal kind")),
        };
        kind.validate()
    }
}

/// Read access to the partner arrays of a matching, possibly with a few
/// pending changes laid on top.
pub(crate) trait PartnerView {
    fn red_partner(&self, i: usize) -> Option<usize>;
    fn blue_partner(&self, j: usize) -> Option<usize>;

    fn classify(&self, i: usize, j: usize) -> MoveKind {
        let j_prime = self.red_partner(i);
        let i_prime = self.blue_partner(j);
        if j_prime == Some(j) {
            return MoveKind::Deletion;
        }
        match (i_prime, j_prime) {
            (None, None) => MoveKind::Addition,
            (None, Some(j_prime)) => MoveKind::SwitchBlue { j_prime },
            (Some(i_prime), None) => MoveKind::SwitchRed { i_prime },
            (Some(i_prime), Some(j_prime)) => MoveKind::DoubleSwitch { i_prime, j_prime },
        }
    }
}

impl PartnerView for BipartiteMatching {
    fn red_partner(&self, i: usize) -> Option<usize> {
        BipartiteMatching::red_partner(self, i)
    }
    fn blue_partner(&self, j: usize) -> Option<usize> {
        BipartiteMatching::blue_partner(self, j)
    }
}

/// Target and proposal masses for one proposal kind at one temperature.
#[derive(Clone, Debug)]
pub(crate) struct Kernel<'t> {
    pub table: &'t WeightTable,
    pub kind: ProposalKind,
    pub beta: f64,
    ln_delta: f64,
    p4: Option<P4Table>,
}

impl<'t> Kernel<'t> {
    pub fn new(table: &'t WeightTable, kind: ProposalKind, beta: f64) -> Result<Self, SamplerError> {
        let kind = kind.validate()?;
        let ln_delta = match kind {
            ProposalKind::P1 { delta } => delta.ln(),
            _ => f64::NEG_INFINITY,
        };
        let p4 = (kind == ProposalKind::P4).then(|| table.p4_table(beta));
        Ok(Self {
            table,
            kind,
            beta,
            ln_delta,
            p4,
        })
    }

    /// Whether edge `e` may appear in a matching of the target.
    pub fn admissible(&self, e: usize) -> bool {
        self.table.edge_ln_weight(e) > self.ln_delta
    }

    fn admissible_pair(&self, i: usize, j: usize) -> Option<usize> {
        self.table.edge(i, j).filter(|&e| self.admissible(e))
    }

    /// `ln pi(rho o (i,j)) - ln pi(rho)` at temperature one, `-inf` when the
    /// new state is outside the support. `e` is the edge id of `(i, j)`.
    pub fn raw_ln_ratio(&self, kind: MoveKind, i: usize, j: usize, e: usize) -> f64 {
        let t = self.table;
        let lw = t.edge_ln_weight(e);
        if kind != MoveKind::Deletion && !self.admissible(e) {
            return f64::NEG_INFINITY;
        }
        match kind {
            MoveKind::Addition => lw,
            MoveKind::Deletion => -lw,
            MoveKind::SwitchBlue { j_prime } => lw - t.ln_weight(i, j_prime),
            MoveKind::SwitchRed { i_prime } => lw - t.ln_weight(i_prime, j),
            MoveKind::DoubleSwitch { i_prime, j_prime } => match self.admissible_pair(i_prime, j_prime) {
                Some(f) => lw + t.edge_ln_weight(f) - t.ln_weight(i_prime, j) - t.ln_weight(i, j_prime),
                None => f64::NEG_INFINITY,
            },
        }
    }

    /// Unnormalized proposal mass of pair `(i, j)` (edge `e`) in state `v`.
    pub fn contribution<V: PartnerView + ?Sized>(&self, v: &V, i: usize, j: usize, e: usize) -> f64 {
        match self.kind {
            ProposalKind::P1 { .. } => f64::from(u8::from(self.admissible(e))),
            ProposalKind::P4 => {
                let p4 = self.p4.as_ref().expect("P4 table");
                if v.red_partner(i) == Some(j) {
                    p4.q_rem[e]
                } else {
                    p4.q_add[e]
                }
            }
            ProposalKind::P2 | ProposalKind::P3 => {
                let raw = self.raw_ln_ratio(v.classify(i, j), i, j, e);
                if raw == f64::NEG_INFINITY {
                    return 0.0;
                }
                let lr = self.beta * raw;
                if self.kind == ProposalKind::P2 {
                    lr.min(MAX_LN_RATIO).exp()
                } else if lr > 0.0 {
                    1.0 / (1.0 + (-lr).exp())
                } else {
                    let r = lr.exp();
                    r / (1.0 + r)
                }
            }
        }
    }

    pub fn set_beta(&mut self, beta: f64, p4: Option<P4Table>) {
        self.beta = beta;
        if self.kind == ProposalKind::P4 {
            self.p4 = Some(p4.unwrap_or_else(|| self.table.p4_table(beta)));
        }
    }

    pub fn take_p4(&mut self) -> Option<P4Table> {
        self.p4.take()
    }
}

/// A proposed pair with its normalized log proposal probability.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Proposal {
    pub red: usize,
    pub blue: usize,
    pub ln_q: f64,
}

/// Draws `(i, j)` from `q_rho` computed from scratch. `None` when the
/// proposal has no mass, which the chain treats as a hold.
pub fn draw_proposal<R: Rng + ?Sized>(
    rho: &BipartiteMatching,
    table: &WeightTable,
    kind: ProposalKind,
    rng: &mut R,
) -> Result<Option<Proposal>, SamplerError> {
    check_dims(rho, table)?;
    let k = Kernel::new(table, kind, 1.0)?;
    let c: Vec<f64> = (0..table.n_edges())
        .map(|e| {
            let (i, j) = table.endpoints(e);
            k.contribution(rho, i, j, e)
        })
        .collect();
    let total: f64 = c.iter().sum();
    if !(total > 0.0) {
        return Ok(None);
    }
    let mut u = rng.random::<f64>() * total;
    let mut pick = None;
    for (e, &v) in c.iter().enumerate() {
        if v > 0.0 {
            pick = Some(e);
            if u < v {
                break;
            }
            u -= v;
        }
    }
    let e = pick.expect("positive total");
    let (red, blue) = table.endpoints(e);
    Ok(Some(Proposal {
        red,
        blue,
        ln_q: (c[e] / total).ln(),
    }))
}

fn check_dims(rho: &BipartiteMatching, table: &WeightTable) -> Result<(), SamplerError> {
    if rho.n_red() != table.n_red() || rho.n_blue() != table.n_blue() {
        return Err(SamplerError::BadProposal("matching and table sizes differ"));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    Accepted,
    Rejected,
    /// The proposal had no mass; the state is kept.
    Held,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ChainStats {
    pub steps: u64,
    pub accepted: u64,
    pub held: u64,
}

impl ChainStats {
    pub fn acceptance_rate(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.accepted as f64 / self.steps as f64
        }
    }

    fn record(&mut self, o: StepOutcome) {
        self.steps += 1;
        match o {
            StepOutcome::Accepted => self.accepted += 1,
            StepOutcome::Held => self.held += 1,
            StepOutcome::Rejected => {}
        }
    }
}

/// A two-color MH chain with cached per-pair proposal masses.
///
/// The masses of P2 and P3 depend on the partners of both endpoints, so a
/// move touching reds `{i, i'}` and blues `{j, j'}` refreshes exactly those
/// rows and columns. P4 masses change only on edges entering or leaving the
/// matching; P1 masses never change.
#[derive(Clone, Debug)]
pub struct Chain2<'t> {
    kernel: Kernel<'t>,
    state: BipartiteMatching,
    ln_weight: f64,
    contrib: Vec<f64>,
    row_sum: Vec<f64>,
    total: f64,
    since_refresh: usize,
    undo_contrib: Vec<(usize, f64)>,
    undo_row: Vec<(usize, f64)>,
    p4_cache: Vec<P4Table>,
    stats: ChainStats,
}

impl<'t> Chain2<'t> {
    pub fn new(table: &'t WeightTable, kind: ProposalKind, init: BipartiteMatching) -> Result<Self, SamplerError> {
        check_dims(&init, table)?;
        let kernel = Kernel::new(table, kind, 1.0)?;
        let mut ln_weight = 0.0;
        for (i, j) in init.pairs() {
            match table.edge(i, j) {
                Some(e) if kernel.admissible(e) => ln_weight += table.edge_ln_weight(e),
                _ => return Err(SamplerError::BadProposal("initial matching has zero posterior mass")),
            }
        }
        let mut chain = Self {
            kernel,
            state: init,
            ln_weight,
            contrib: vec![0.0; table.n_edges()],
            row_sum: vec![0.0; table.n_red()],
            total: 0.0,
            since_refresh: 0,
            undo_contrib: Vec::new(),
            undo_row: Vec::new(),
            p4_cache: Vec::new(),
            stats: ChainStats::default(),
        };
        chain.refresh_all();
        Ok(chain)
    }

    pub fn state(&self) -> &BipartiteMatching {
        &self.state
    }

    pub fn into_state(self) -> BipartiteMatching {
        self.state
    }

    pub fn table(&self) -> &'t WeightTable {
        self.kernel.table
    }

    pub fn kind(&self) -> ProposalKind {
        self.kernel.kind
    }

    /// `sum of ln w` over the current edges, at temperature one.
    pub fn ln_weight(&self) -> f64 {
        self.ln_weight
    }

    pub fn beta(&self) -> f64 {
        self.kernel.beta
    }

    pub fn stats(&self) -> ChainStats {
        self.stats
    }

    /// Total proposal mass `Z_rho` of the current state.
    pub fn proposal_mass(&self) -> f64 {
        self.total
    }

    /// Targets `pi^beta` from now on.
    pub fn set_beta(&mut self, beta: f64) {
        if beta == self.kernel.beta {
            return;
        }
        let cached = self.p4_cache.iter().position(|t| t.beta == beta).map(|k| self.p4_cache.swap_remove(k));
        if let Some(old) = self.kernel.take_p4() {
            self.p4_cache.push(old);
        }
        self.kernel.set_beta(beta, cached);
        self.refresh_all();
    }

    fn refresh_all(&mut self) {
        let t = self.kernel.table;
        self.total = 0.0;
        for i in 0..t.n_red() {
            let mut s = 0.0;
            for e in t.row(i) {
                let c = self.kernel.contribution(&self.state, i, t.endpoints(e).1, e);
                self.contrib[e] = c;
                s += c;
            }
            self.row_sum[i] = s;
            self.total += s;
        }
        self.since_refresh = 0;
    }

    fn set_contrib(&mut self, e: usize, c: f64) {
        let old = self.contrib[e];
        if old == c {
            return;
        }
        let i = self.kernel.table.endpoints(e).0;
        self.undo_contrib.push((e, old));
        self.undo_row.push((i, self.row_sum[i]));
        self.contrib[e] = c;
        self.row_sum[i] += c - old;
        self.total += c - old;
    }

    fn refresh_edge(&mut self, e: usize) {
        let (i, j) = self.kernel.table.endpoints(e);
        let c = self.kernel.contribution(&self.state, i, j, e);
        self.set_contrib(e, c);
    }

    fn refresh_pair(&mut self, i: usize, j: usize) {
        if let Some(e) = self.kernel.table.edge(i, j) {
            self.refresh_edge(e);
        }
    }

    /// Brings the cached masses up to date after `rho o (i, j)`.
    fn refresh_after(&mut self, i: usize, j: usize, kind: MoveKind) {
        match self.kernel.kind {
            ProposalKind::P1 { .. } => {}
            ProposalKind::P4 => {
                self.refresh_pair(i, j);
                match kind {
                    MoveKind::Addition | MoveKind::Deletion => {}
                    MoveKind::SwitchBlue { j_prime } => self.refresh_pair(i, j_prime),
                    MoveKind::SwitchRed { i_prime } => self.refresh_pair(i_prime, j),
                    MoveKind::DoubleSwitch { i_prime, j_prime } => {
                        self.refresh_pair(i_prime, j_prime);
                        self.refresh_pair(i, j_prime);
                        self.refresh_pair(i_prime, j);
                    }
                }
            }
            ProposalKind::P2 | ProposalKind::P3 => {
                let (reds, blues) = touched(i, j, kind);
                let t = self.kernel.table;
                for &r in reds.iter().flatten() {
                    let row = t.row(r);
                    // recompute the row sum from scratch to shed drift
                    let old_sum = self.row_sum[r];
                    let mut s = 0.0;
                    for e in row {
                        let c = self.kernel.contribution(&self.state, r, t.endpoints(e).1, e);
                        if c != self.contrib[e] {
                            self.undo_contrib.push((e, self.contrib[e]));
                            self.contrib[e] = c;
                        }
                        s += c;
                    }
                    self.undo_row.push((r, old_sum));
                    self.row_sum[r] = s;
                    self.total += s - old_sum;
                }
                for &b in blues.iter().flatten() {
                    for &e in t.col(b) {
                        let r = t.endpoints(e).0;
                        if reds.contains(&Some(r)) {
                            continue;
                        }
                        self.refresh_edge(e);
                    }
                }
            }
        }
    }

    fn pair_contrib(&self, i: usize, j: usize) -> f64 {
        self.kernel.table.edge(i, j).map_or(0.0, |e| self.contrib[e])
    }

    fn draw_edge<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<usize> {
        let t = self.kernel.table;
        let mut u = rng.random::<f64>() * self.total;
        let mut last = None;
        for i in 0..t.n_red() {
            let rs = self.row_sum[i];
            if !(rs > 0.0) {
                continue;
            }
            if u >= rs {
                u -= rs;
                last = Some(i);
                continue;
            }
            let mut pick = None;
            for e in t.row(i) {
                let c = self.contrib[e];
                if c > 0.0 {
                    pick = Some(e);
                    if u < c {
                        break;
                    }
                    u -= c;
                }
            }
            if pick.is_some() {
                return pick;
            }
        }
        // rounding pushed u past the end: take the last positive entry
        last.and_then(|i| t.row(i).rev().find(|&e| self.contrib[e] > 0.0))
    }

    /// One MH step.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> StepOutcome {
        let outcome = self.step_inner(rng);
        self.stats.record(outcome);
        self.since_refresh += 1;
        if (self.since_refresh >= REFRESH_EVERY && self.kernel.kind.depends_on_partners())
            || self.since_refresh >= 16 * REFRESH_EVERY
        {
            self.refresh_all();
        }
        outcome
    }

    fn step_inner<R: Rng + ?Sized>(&mut self, rng: &mut R) -> StepOutcome {
        if !(self.total > 0.0) {
            return StepOutcome::Held;
        }
        let Some(e) = self.draw_edge(rng) else {
            return StepOutcome::Held;
        };
        let t = self.kernel.table;
        let (i, j) = t.endpoints(e);
        let kind = self.state.classify_unchecked(i, j);
        let raw = self.kernel.raw_ln_ratio(kind, i, j, e);
        if raw == f64::NEG_INFINITY {
            return StepOutcome::Rejected;
        }
        let (fwd_pairs, nf) = kind.forward_pairs(i, j);
        let fwd: f64 = fwd_pairs[..nf].iter().map(|&(a, b)| self.pair_contrib(a, b)).sum();
        let z_old = self.total;

        self.undo_contrib.clear();
        self.undo_row.clear();
        self.state.apply_kind(i, j, kind);
        self.refresh_after(i, j, kind);
        let (rev_pairs, nr) = kind.reverse_pairs(i, j);
        let rev: f64 = rev_pairs[..nr].iter().map(|&(a, b)| self.pair_contrib(a, b)).sum();
        let z_new = self.total;

        let ln_acc = self.kernel.beta * raw + rev.ln() - z_new.ln() - fwd.ln() + z_old.ln();
        if ln_acc >= 0.0 || rng.random::<f64>().ln() < ln_acc {
            self.ln_weight += raw;
            StepOutcome::Accepted
        } else {
            self.state.revert_kind(i, j, kind);
            while let Some((e, c)) = self.undo_contrib.pop() {
                self.contrib[e] = c;
            }
            while let Some((r, s)) = self.undo_row.pop() {
                self.row_sum[r] = s;
            }
            self.total = z_old;
            StepOutcome::Rejected
        }
    }

    pub fn run<R: Rng + ?Sized>(&mut self, n_steps: usize, rng: &mut R) {
        for _ in 0..n_steps {
            self.step(rng);
        }
    }
}

/// One MH step of `chain`.
pub fn mh_step2<R: Rng + ?Sized>(chain: &mut Chain2<'_>, rng: &mut R) -> StepOutcome {
    chain.step(rng)
}

/// Reds and blues whose partner changes under the move.
pub(crate) fn touched(i: usize, j: usize, kind: MoveKind) -> ([Option<usize>; 2], [Option<usize>; 2]) {
    match kind {
        MoveKind::Addition | MoveKind::Deletion => ([Some(i), None], [Some(j), None]),
        MoveKind::SwitchBlue { j_prime } => ([Some(i), None], [Some(j), Some(j_prime)]),
        MoveKind::SwitchRed { i_prime } => ([Some(i), Some(i_prime)], [Some(j), None]),
        MoveKind::DoubleSwitch { i_prime, j_prime } => ([Some(i), Some(i_prime)], [Some(j), Some(j_prime)]),
    }
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use std::collections::HashMap;

    /// Every matching of an `n_red x n_blue` bipartite graph.
    pub fn all_matchings(n_red: usize, n_blue: usize) -> Vec<BipartiteMatching> {
        fn rec(i: usize, n_red: usize, n_blue: usize, used: &mut Vec<bool>, cur: &mut Vec<(usize, usize)>, out: &mut Vec<BipartiteMatching>) {
            if i == n_red {
                out.push(BipartiteMatching::from_pairs(n_red, n_blue, cur.iter().copied()).unwrap());
                return;
            }
            rec(i + 1, n_red, n_blue, used, cur, out);
            for j in 0..n_blue {
                if !used[j] {
                    used[j] = true;
                    cur.push((i, j));
                    rec(i + 1, n_red, n_blue, used, cur, out);
                    cur.pop();
                    used[j] = false;
                }
            }
        }
        let mut out = Vec::new();
        rec(0, n_red, n_blue, &mut vec![false; n_blue], &mut Vec::new(), &mut out);
        out
    }

    /// Exact target law by enumeration; weights `<= threshold` forbidden.
    pub fn exact_law(table: &WeightTable, threshold: f64) -> HashMap<BipartiteMatching, f64> {
        let mut law = HashMap::new();
        let mut z = 0.0;
        for m in all_matchings(table.n_red(), table.n_blue()) {
            let ok = m.pairs().iter().all(|&(i, j)| table.weight(i, j) > threshold);
            if ok {
                let p = table.ln_weight_of(&m).exp();
                z += p;
                law.insert(m, p);
            }
        }
        law.values_mut().for_each(|p| *p /= z);
        law
    }

    pub fn tv(a: &HashMap<BipartiteMatching, f64>, counts: &HashMap<BipartiteMatching, usize>, n: usize) -> f64 {
        let mut d = 0.0;
        for (m, &p) in a {
            let q = counts.get(m).copied().unwrap_or(0) as f64 / n as f64;
            d += (p - q).abs();
        }
        for (m, &c) in counts {
            if !a.contains_key(m) {
                d += c as f64 / n as f64;
            }
        }
        0.5 * d
    }

    pub fn random_table(n_red: usize, n_blue: usize, seed: u64, sparsity: f64) -> WeightTable {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let w: Vec<Vec<f64>> = (0..n_red)
            .map(|_| {
                (0..n_blue)
                    .map(|_| {
                        if rng.random::<f64>() < sparsity {
                            0.0
                        } else {
                            (rng.random::<f64>() * 4.0 - 2.0).exp()
                        }
                    })
                    .collect()
            })
            .collect();
        WeightTable::from_dense(&w).unwrap()
    }
}
