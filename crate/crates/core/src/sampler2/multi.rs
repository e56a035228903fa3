use std::collections::BTreeMap;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{Kernel, PartnerView, ProposalKind, WeightTable};
use crate::error::SamplerError;
use crate::pattern::{BipartiteMatching, MoveKind, Point};

type TileKey = (i64, i64);

/// Square tiles of side `tile` colored in a `classes x classes` pattern.
/// Tiles of one class are `(classes - 1) * tile` apart, so with a gap of at
/// least `2 r_max` no two of them share a point, a partner or a weight, and
/// their moves commute.
#[derive(Clone, Debug, PartialEq)]
pub struct ProposalGrid {
    tile: f64,
    classes: usize,
    max_tiles: Option<usize>,
}

impl ProposalGrid {
    /// Tiles of side `tile` in a 3x3 class pattern; at most `max_tiles`
    /// tiles propose per step (all of the chosen class when `None`).
    pub fn new(tile: f64, max_tiles: Option<usize>) -> Result<Self, SamplerError> {
        if !(tile > 0.0 && tile.is_finite()) {
            return Err(SamplerError::BadGrid(format!("tile side must be positive, got {tile}")));
        }
        if max_tiles == Some(0) {
            return Err(SamplerError::BadGrid("at least one tile must propose".into()));
        }
        Ok(Self {
            tile,
            classes: 3,
            max_tiles,
        })
    }

    /// One tile covering the whole plane.
    pub fn single() -> Self {
        Self {
            tile: f64::INFINITY,
            classes: 1,
            max_tiles: None,
        }
    }

    pub fn tile(&self) -> f64 {
        self.tile
    }

    pub fn max_tiles(&self) -> Option<usize> {
        self.max_tiles
    }

    /// Same-class tiles must be at least `2 r_max` apart.
    pub fn check(&self, r_max: f64) -> Result<(), SamplerError> {
        if self.classes == 1 {
            return Ok(());
        }
        let gap = (self.classes - 1) as f64 * self.tile;
        if gap < 2.0 * r_max {
            return Err(SamplerError::BadGrid(format!(
                "same-class tiles are {gap} apart, need at least 2 r_max = {}",
                2.0 * r_max
            )));
        }
        Ok(())
    }

    fn key(&self, p: Point, offset: (f64, f64)) -> TileKey {
        if self.classes == 1 {
            return (0, 0);
        }
        (
            ((p.x + offset.0) / self.tile).floor() as i64,
            ((p.y + offset.1) / self.tile).floor() as i64,
        )
    }

    fn class_of(&self, k: TileKey) -> (i64, i64) {
        let c = self.classes as i64;
        (k.0.rem_euclid(c), k.1.rem_euclid(c))
    }
}

/// Partners of a matching with the edits of one pending move on top.
struct Overlay<'a> {
    base: &'a BipartiteMatching,
    reds: [(usize, Option<usize>); 2],
    blues: [(usize, Option<usize>); 2],
}

impl<'a> Overlay<'a> {
    fn after(base: &'a BipartiteMatching, i: usize, j: usize, kind: MoveKind) -> Self {
        let (reds, blues) = match kind {
            MoveKind::Addition => ([(i, Some(j)); 2], [(j, Some(i)); 2]),
            MoveKind::Deletion => ([(i, None); 2], [(j, None); 2]),
            MoveKind::SwitchBlue { j_prime } => ([(i, Some(j)); 2], [(j, Some(i)), (j_prime, None)]),
            MoveKind::SwitchRed { i_prime } => ([(i, Some(j)), (i_prime, None)], [(j, Some(i)); 2]),
            MoveKind::DoubleSwitch { i_prime, j_prime } => (
                [(i, Some(j)), (i_prime, Some(j_prime))],
                [(j, Some(i)), (j_prime, Some(i_prime))],
            ),
        };
        Self { base, reds, blues }
    }
}

impl PartnerView for Overlay<'_> {
    fn red_partner(&self, i: usize) -> Option<usize> {
        self.reds
            .iter()
            .find(|r| r.0 == i)
            .map_or_else(|| self.base.red_partner(i), |r| r.1)
    }
    fn blue_partner(&self, j: usize) -> Option<usize> {
        self.blues
            .iter()
            .find(|b| b.0 == j)
            .map_or_else(|| self.base.blue_partner(j), |b| b.1)
    }
}

/// Chain whose steps propose one move in each selected tile of a random
/// class and accept or reject them independently.
#[derive(Clone, Debug)]
pub struct MultiChain<'t> {
    kernel: Kernel<'t>,
    grid: ProposalGrid,
    state: BipartiteMatching,
    ln_weight: f64,
    steps: u64,
    proposed: u64,
    accepted: u64,
}

struct Decision {
    red: usize,
    blue: usize,
    kind: MoveKind,
    raw: f64,
}

impl<'t> MultiChain<'t> {
    pub fn new(
        table: &'t WeightTable,
        kind: ProposalKind,
        init: BipartiteMatching,
        grid: ProposalGrid,
    ) -> Result<Self, SamplerError> {
        if grid.classes > 1 {
            let r_max = table
                .r_max()
                .ok_or_else(|| SamplerError::BadGrid("tiled proposals need a truncated table".into()))?;
            grid.check(r_max)?;
        }
        if table.red_locations().is_none() {
            return Err(SamplerError::BadGrid("table has no point locations".into()));
        }
        // validates the initial state and the proposal kind
        let plain = super::Chain2::new(table, kind, init)?;
        Ok(Self {
            kernel: Kernel::new(table, kind, 1.0)?,
            grid,
            ln_weight: plain.ln_weight(),
            state: plain.into_state(),
            steps: 0,
            proposed: 0,
            accepted: 0,
        })
    }

    pub fn state(&self) -> &BipartiteMatching {
        &self.state
    }

    pub fn ln_weight(&self) -> f64 {
        self.ln_weight
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Accepted over proposed tile moves.
    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    /// Mean number of tiles proposing per step.
    pub fn mean_moves_per_step(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.proposed as f64 / self.steps as f64
        }
    }

    fn decide(&self, reds: &[usize], blue_key: &[TileKey], key: TileKey, seed: u64) -> Option<Decision> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = self.kernel.table;
        let in_tile = |i: usize, j: usize, red_in: &dyn Fn(usize) -> bool| red_in(i) && blue_key[j] == key;
        let red_set = |i: usize| reds.binary_search(&i).is_ok();
        let masses = |v: &dyn PartnerView| -> Vec<(usize, f64)> {
            let mut out = Vec::new();
            for &a in reds {
                for e in t.row(a) {
                    let b = t.endpoints(e).1;
                    if blue_key[b] == key {
                        out.push((e, self.contribution_dyn(v, a, b, e)));
                    }
                }
            }
            out
        };
        let pre = masses(&self.state);
        let z_old: f64 = pre.iter().map(|p| p.1).sum();
        if !(z_old > 0.0) {
            return None;
        }
        let mut u = rng.random::<f64>() * z_old;
        let mut pick = None;
        for &(e, c) in &pre {
            if c > 0.0 {
                pick = Some(e);
                if u < c {
                    break;
                }
                u -= c;
            }
        }
        let e = pick?;
        let (i, j) = t.endpoints(e);
        let kind = PartnerView::classify(&self.state, i, j);
        let raw = self.kernel.raw_ln_ratio(kind, i, j, e);
        if raw == f64::NEG_INFINITY {
            return None;
        }
        let pair_mass = |v: &dyn PartnerView, pairs: &[(usize, usize)]| -> f64 {
            pairs
                .iter()
                .filter(|&&(a, b)| in_tile(a, b, &red_set))
                .filter_map(|&(a, b)| t.edge(a, b).map(|f| self.contribution_dyn(v, a, b, f)))
                .sum()
        };
        let (fp, nf) = kind.forward_pairs(i, j);
        let fwd = pair_mass(&self.state, &fp[..nf]);
        let post = Overlay::after(&self.state, i, j, kind);
        let z_new: f64 = masses(&post).iter().map(|p| p.1).sum();
        let (rp, nr) = kind.reverse_pairs(i, j);
        let rev = pair_mass(&post, &rp[..nr]);
        let ln_acc = self.kernel.beta * raw + rev.ln() - z_new.ln() - fwd.ln() + z_old.ln();
        (ln_acc >= 0.0 || rng.random::<f64>().ln() < ln_acc).then_some(Decision {
            red: i,
            blue: j,
            kind,
            raw,
        })
    }

    fn contribution_dyn(&self, v: &dyn PartnerView, i: usize, j: usize, e: usize) -> f64 {
        self.kernel.contribution(v, i, j, e)
    }

    /// One multiple-proposal step. Returns the number of accepted moves.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> usize {
        let t = self.kernel.table;
        let red_loc = t.red_locations().expect("checked at construction");
        let blue_loc = t.blue_locations().expect("checked at construction");
        let offset = if self.grid.classes == 1 {
            (0.0, 0.0)
        } else {
            (rng.random::<f64>() * self.grid.tile, rng.random::<f64>() * self.grid.tile)
        };
        let c = self.grid.classes as i64;
        let class = (rng.random_range(0..c), rng.random_range(0..c));

        let blue_key: Vec<TileKey> = blue_loc.iter().map(|&p| self.grid.key(p, offset)).collect();
        let mut tiles: BTreeMap<TileKey, (Vec<usize>, bool)> = BTreeMap::new();
        for (i, &p) in red_loc.iter().enumerate() {
            let k = self.grid.key(p, offset);
            if self.grid.class_of(k) == class {
                tiles.entry(k).or_default().0.push(i);
            }
        }
        for k in &blue_key {
            if let Some(tile) = tiles.get_mut(k) {
                tile.1 = true;
            }
        }
        let mut active: Vec<(TileKey, Vec<usize>)> = tiles
            .into_iter()
            .filter(|(_, (r, has_blue))| !r.is_empty() && *has_blue)
            .map(|(k, (r, _))| (k, r))
            .collect();
        if let Some(l) = self.grid.max_tiles {
            if active.len() > l {
                let mut keep: Vec<usize> = sample_indices(rng, active.len(), l).into_vec();
                keep.sort_unstable();
                active = keep.into_iter().map(|k| std::mem::take(&mut active[k])).collect();
            }
        }
        let seeds: Vec<u64> = active.iter().map(|_| rng.random()).collect();

        let decisions: Vec<Option<Decision>> = active
            .par_iter()
            .zip(seeds.par_iter())
            .map(|((key, reds), &seed)| self.decide(reds, &blue_key, *key, seed))
            .collect();

        self.steps += 1;
        self.proposed += active.len() as u64;
        let mut n_acc = 0;
        for d in decisions.into_iter().flatten() {
            self.state.apply_kind(d.red, d.blue, d.kind);
            self.ln_weight += d.raw;
            n_acc += 1;
        }
        self.accepted += n_acc as u64;
        n_acc
    }
}

/// One multiple-proposal step of `chain`; returns the accepted move count.
pub fn multiproposal_step<R: Rng + ?Sized>(chain: &mut MultiChain<'_>, rng: &mut R) -> usize {
    chain.step(rng)
}

#[cfg(test)]
mod tests {
    use super::super::testutil::{exact_law, tv};
    use super::super::{build_weight_table, Chain2};
    use super::*;
    use crate::model::{ModelParams, UniformDensity};
    use crate::pattern::{MarkedPoint, ObservationWindow, PointPattern};
    use std::collections::HashMap;

    fn spread_pattern(seed: u64, n: usize, side: f64) -> PointPattern {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = (0..n)
            .map(|t| MarkedPoint::new(rng.random::<f64>() * side, rng.random::<f64>() * side, t % 2))
            .collect();
        PointPattern::new(pts, 2, ObservationWindow::square(side).unwrap()).unwrap()
    }

    fn table_for(x: &PointPattern, r_max: f64) -> WeightTable {
        let params = ModelParams::new(0.6, vec![0.5, 0.5], 5.0).unwrap();
        let g = UniformDensity::new(x.window().clone());
        build_weight_table(x, &params, &g, Some(r_max)).unwrap()
    }

    #[test]
    fn grid_separation_is_checked() {
        let g = ProposalGrid::new(1.0, None).unwrap();
        assert!(g.check(1.0).is_ok());
        assert!(g.check(1.01).is_err());
        let x = spread_pattern(1, 8, 4.0);
        let t = table_for(&x, 1.5);
        let init = BipartiteMatching::empty(t.n_red(), t.n_blue());
        assert!(matches!(
            MultiChain::new(&t, ProposalKind::P3, init, g),
            Err(SamplerError::BadGrid(_))
        ));
        assert!(ProposalGrid::new(0.0, None).is_err());
    }

    #[test]
    fn untruncated_table_is_rejected() {
        let t = WeightTable::from_dense(&[vec![1.0]]).unwrap();
        let init = BipartiteMatching::empty(1, 1);
        let g = ProposalGrid::new(1.0, None).unwrap();
        assert!(MultiChain::new(&t, ProposalKind::P3, init, g).is_err());
    }

    #[test]
    fn stationary_law_matches_truncated_model() {
        let x = spread_pattern(5, 8, 3.0);
        let t = table_for(&x, 1.0);
        let law = exact_law(&t, 0.0);
        for grid in [ProposalGrid::single(), ProposalGrid::new(1.0, None).unwrap()] {
            let init = BipartiteMatching::empty(t.n_red(), t.n_blue());
            let mut c = MultiChain::new(&t, ProposalKind::P3, init, grid.clone()).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(77);
            let mut counts: HashMap<BipartiteMatching, usize> = HashMap::new();
            let n = 400_000;
            for _ in 0..n {
                c.step(&mut rng);
                *counts.entry(c.state().clone()).or_default() += 1;
            }
            let d = tv(&law, &counts, n);
            assert!(d < 0.02, "{grid:?}: TV {d}");
        }
    }

    #[test]
    fn single_tile_matches_plain_acceptance() {
        let x = spread_pattern(9, 10, 3.0);
        let t = table_for(&x, 2.0);
        let init = BipartiteMatching::empty(t.n_red(), t.n_blue());
        let mut m = MultiChain::new(&t, ProposalKind::P2, init.clone(), ProposalGrid::single()).unwrap();
        let mut p = Chain2::new(&t, ProposalKind::P2, init).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..40_000 {
            m.step(&mut rng);
            p.step(&mut rng);
        }
        let (a, b) = (m.acceptance_rate(), p.stats().acceptance_rate());
        assert!((a - b).abs() < 0.02, "{a} vs {b}");
    }

    /// Moves in tiles at least `2 r_max` apart give the same composite state
    /// in every order.
    #[test]
    fn separated_moves_commute() {
        // two clumps 10 apart, r_max = 1
        let mut pts = Vec::new();
        for &cx in &[0.5, 10.5] {
            pts.push(MarkedPoint::new(cx, 0.5, 0));
            pts.push(MarkedPoint::new(cx + 0.2, 0.5, 1));
            pts.push(MarkedPoint::new(cx, 0.8, 0));
            pts.push(MarkedPoint::new(cx + 0.3, 0.7, 1));
        }
        let x = PointPattern::new(pts, 2, ObservationWindow::rect(0.0, 12.0, 0.0, 2.0).unwrap()).unwrap();
        let t = table_for(&x, 1.0);
        let left = |i: usize| t.red_locations().unwrap()[i].x < 5.0;
        let left_b = |j: usize| t.blue_locations().unwrap()[j].x < 5.0;
        let states = super::super::testutil::all_matchings(t.n_red(), t.n_blue());
        for s in states.iter().filter(|s| s.pairs().iter().all(|&(i, j)| t.edge(i, j).is_some())) {
            for e in 0..t.n_edges() {
                for f in 0..t.n_edges() {
                    let (i1, j1) = t.endpoints(e);
                    let (i2, j2) = t.endpoints(f);
                    if !(left(i1) && left_b(j1) && !left(i2) && !left_b(j2)) {
                        continue;
                    }
                    let ab = s.apply(i1, j1).unwrap().apply(i2, j2).unwrap();
                    let ba = s.apply(i2, j2).unwrap().apply(i1, j1).unwrap();
                    assert_eq!(ab, ba);
                }
            }
        }
    }
}
