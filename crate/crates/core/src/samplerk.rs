//! Sampler for `k >= 2` colors: a uniform mixture of projection kernels.
//!
//! A kernel picks a color subset `A` of size `floor(k/2)`, splits every
//! cluster into its `A`-part and complement part, treats each nonempty part
//! as one point at its centroid, runs two-color MH moves on those
//! superpoints and lifts the result back. Projected configurations keep the
//! within-part structure fixed, so the target factorizes over superpoint
//! pairs and the two-color machinery applies unchanged.

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::SamplerError;
use crate::model::{
    gibbs_update_lambda, gibbs_update_p, log_posterior_partition, mh_update_sigma, CenterDensity, Hyperparams,
    LogFactors, ModelParams, SigmaStats,
};
use crate::pattern::{partition_stats, BipartiteMatching, ClusterSummary, Matching, Point, PointPattern};
use crate::sampler2::{Chain2, ProposalKind, WeightTable, MIN_LN_WEIGHT};

/// A set of colors, stored as a membership mask over `0..k`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ColorSubset {
    mask: Vec<bool>,
}

impl ColorSubset {
    pub fn new(k: usize, colors: &[usize]) -> Result<Self, SamplerError> {
        let mut mask = vec![false; k];
        for &c in colors {
            if c >= k {
                return Err(SamplerError::BadProposal("color outside 0..k"));
            }
            mask[c] = true;
        }
        Ok(Self { mask })
    }

    pub fn k(&self) -> usize {
        self.mask.len()
    }

    pub fn contains(&self, color: usize) -> bool {
        self.mask[color]
    }

    pub fn colors(&self) -> Vec<usize> {
        (0..self.k()).filter(|&c| self.mask[c]).collect()
    }

    pub fn complement(&self) -> Self {
        Self {
            mask: self.mask.iter().map(|b| !b).collect(),
        }
    }
}

/// Uniform draw among the subsets of `0..k` of size `floor(k/2)`.
pub fn sample_color_subset<R: Rng + ?Sized>(k: usize, rng: &mut R) -> ColorSubset {
    let mut colors = sample_indices(rng, k, k / 2).into_vec();
    colors.sort_unstable();
    ColorSubset::new(k, &colors).expect("colors below k")
}

/// One side of a split cluster.
#[derive(Clone, Debug, PartialEq)]
pub struct Superpoint {
    /// Underlying point indices, sorted.
    pub members: Vec<usize>,
    pub summary: ClusterSummary,
}

impl Superpoint {
    pub fn multiplicity(&self) -> usize {
        self.members.len()
    }

    pub fn centroid(&self) -> Point {
        self.summary.centroid
    }
}

/// A k-color configuration seen through a color subset: `A`-parts play the
/// red role and complement parts the blue role.
#[derive(Clone, Debug)]
pub struct ProjectedPattern {
    pub subset: ColorSubset,
    pub inside: Vec<Superpoint>,
    pub outside: Vec<Superpoint>,
    pub matching: BipartiteMatching,
}

/// Splits every cluster of `rho` along `subset`. Superpoints on each side are
/// ordered by their smallest member index.
pub fn project(x: &PointPattern, rho: &Matching, subset: &ColorSubset) -> ProjectedPattern {
    let mut inside = Vec::new();
    let mut outside = Vec::new();
    let mut links = Vec::new();
    for cluster in rho.clusters() {
        let (a, b): (Vec<usize>, Vec<usize>) = cluster.iter().partition(|&&i| subset.contains(x.mark(i)));
        let ia = (!a.is_empty()).then(|| {
            inside.push(Superpoint {
                summary: ClusterSummary::of_indices(x, &a),
                members: a,
            });
            inside.len() - 1
        });
        let ib = (!b.is_empty()).then(|| {
            outside.push(Superpoint {
                summary: ClusterSummary::of_indices(x, &b),
                members: b,
            });
            outside.len() - 1
        });
        if let (Some(ia), Some(ib)) = (ia, ib) {
            links.push((ia, ib));
        }
    }
    let order = |v: &mut Vec<Superpoint>| -> Vec<usize> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by_key(|&t| v[t].members[0]);
        let mut rank = vec![0; v.len()];
        for (r, &t) in idx.iter().enumerate() {
            rank[t] = r;
        }
        let mut sorted: Vec<Option<Superpoint>> = v.drain(..).map(Some).collect();
        *v = idx.iter().map(|&t| sorted[t].take().expect("each moved once")).collect();
        rank
    };
    let ra = order(&mut inside);
    let rb = order(&mut outside);
    let matching = BipartiteMatching::from_pairs(
        inside.len(),
        outside.len(),
        links.into_iter().map(|(a, b)| (ra[a], rb[b])),
    )
    .expect("each part belongs to one cluster");
    ProjectedPattern {
        subset: subset.clone(),
        inside,
        outside,
        matching,
    }
}

impl ProjectedPattern {
    /// Rebuilds the k-color partition from the superpoint matching.
    pub fn lift(&self, x: &PointPattern) -> Matching {
        let marks = x.marks();
        self.lift_with(&self.matching, &marks)
    }

    pub fn lift_with(&self, m: &BipartiteMatching, marks: &[usize]) -> Matching {
        let mut edges = Vec::new();
        for (i, sp) in self.inside.iter().enumerate() {
            let mut e = sp.members.clone();
            if let Some(j) = m.red_partner(i) {
                e.extend_from_slice(&self.outside[j].members);
            }
            if e.len() > 1 {
                edges.push(e);
            }
        }
        for (j, sp) in self.outside.iter().enumerate() {
            if m.blue_partner(j).is_none() && sp.members.len() > 1 {
                edges.push(sp.members.clone());
            }
        }
        Matching::from_edges(marks, edges).expect("sides have disjoint colors")
    }

    /// Table of merge weights between inside and outside superpoints. The
    /// pairs of the current matching are always kept, even beyond `r_max`.
    pub fn weight_table(
        &self,
        params: &ModelParams,
        g: &dyn CenterDensity,
        r_max: Option<f64>,
    ) -> Result<WeightTable, SamplerError> {
        let f = LogFactors::new(params);
        let ln_f = |s: &ClusterSummary| f.summary(s, g);
        let fa: Vec<f64> = self.inside.iter().map(|s| ln_f(&s.summary)).collect();
        let fb: Vec<f64> = self.outside.iter().map(|s| ln_f(&s.summary)).collect();
        let r2 = r_max.map(|r| r * r);
        let mut entries = Vec::new();
        for (i, a) in self.inside.iter().enumerate() {
            for (j, b) in self.outside.iter().enumerate() {
                let current = self.matching.red_partner(i) == Some(j);
                if !current && r2.is_some_and(|r2| a.centroid().dist2(b.centroid()) >= r2) {
                    continue;
                }
                let lw = ln_f(&a.summary.merge(&b.summary)) - fa[i] - fb[j];
                if current {
                    entries.push((i, j, lw.max(MIN_LN_WEIGHT)));
                } else if lw.is_finite() {
                    entries.push((i, j, lw));
                }
            }
        }
        let red_loc = self.inside.iter().map(Superpoint::centroid).collect();
        let blue_loc = self.outside.iter().map(Superpoint::centroid).collect();
        WeightTable::from_log_weights(self.inside.len(), self.outside.len(), entries)?
            .with_locations(red_loc, blue_loc, r_max)
    }
}

/// `w2D_ij`: posterior ratio of merging superpoints `a` and `b` into one
/// cluster over keeping them apart.
pub fn projected_edge_weight(
    a: &ClusterSummary,
    b: &ClusterSummary,
    params: &ModelParams,
    g: &dyn CenterDensity,
) -> f64 {
    if a.size + b.size > params.k() {
        return 0.0;
    }
    let f = LogFactors::new(params);
    (f.summary(&a.merge(b), g) - f.summary(a, g) - f.summary(b, g)).exp()
}

/// Projects along `subset`, runs `n_moves` two-color MH moves on the
/// superpoints and lifts back.
#[allow(clippy::too_many_arguments)]
pub fn projection_kernel_step<R: Rng + ?Sized>(
    x: &PointPattern,
    rho: &Matching,
    params: &ModelParams,
    g: &dyn CenterDensity,
    subset: &ColorSubset,
    n_moves: usize,
    kind: ProposalKind,
    r_max: Option<f64>,
    rng: &mut R,
) -> Result<(Matching, u64), SamplerError> {
    let proj = project(x, rho, subset);
    let table = proj.weight_table(params, g, r_max)?;
    let mut chain = Chain2::new(&table, kind, proj.matching.clone())?;
    chain.run(n_moves, rng);
    let accepted = chain.stats().accepted;
    if accepted == 0 {
        return Ok((rho.clone(), 0));
    }
    Ok((proj.lift_with(chain.state(), &x.marks()), accepted))
}

/// Which conditional updates a sweep performs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateFlags {
    pub sigma: bool,
    pub size_probs: bool,
    pub lambda: bool,
}

impl Default for UpdateFlags {
    fn default() -> Self {
        Self {
            sigma: true,
            size_probs: true,
            lambda: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub hyper: Hyperparams,
    /// Two-color moves per projection.
    pub n_moves: usize,
    pub proposal: ProposalKind,
    /// Random-walk scale on `ln sigma`.
    pub sigma_step: f64,
    pub sigma_inner: usize,
    /// Optional superpoint truncation radius (km).
    pub r_max: Option<f64>,
    pub updates: UpdateFlags,
}

impl SamplerConfig {
    pub fn defaults(k: usize) -> Self {
        Self {
            hyper: Hyperparams::defaults(k),
            n_moves: 200,
            proposal: ProposalKind::P4,
            sigma_step: 0.1,
            sigma_inner: 5,
            r_max: None,
            updates: UpdateFlags::default(),
        }
    }

    pub fn validate(&self, k: usize) -> Result<(), SamplerError> {
        if k < 2 {
            return Err(SamplerError::TooFewColors(k));
        }
        self.hyper.validate()?;
        if self.hyper.k() != k {
            return Err(crate::error::ModelError::BadSizeDistribution { k }.into());
        }
        self.proposal.validate()?;
        if !(self.sigma_step >= 0.0) {
            return Err(SamplerError::BadProposal("sigma step must be non-negative"));
        }
        Ok(())
    }
}

/// Full state of one chain.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainState {
    pub rho: Matching,
    pub params: ModelParams,
}

impl ChainState {
    /// All singletons, `sigma = sigma_max / 10`, prior-mean `p` and `lambda`.
    pub fn initial(x: &PointPattern, hyper: &Hyperparams) -> Self {
        let total: f64 = hyper.size_concentration.iter().sum();
        Self {
            rho: Matching::empty(x.len()),
            params: ModelParams {
                sigma: hyper.sigma_max / 10.0,
                size_probs: hyper.size_concentration.iter().map(|a| a / total).collect(),
                lambda: hyper.lambda_shape * hyper.lambda_scale,
            },
        }
    }
}

/// Per-sweep bookkeeping returned by [`gibbs_sweep_k`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SweepInfo {
    pub accepted_moves: u64,
    pub sigma_accepted: usize,
    /// Tempering rung at the end of the sweep; draws are kept only on rung 0.
    pub rung: usize,
}

/// One Metropolis-within-Gibbs sweep: projection kernel on a random color
/// subset, then `sigma`, the size distribution and `lambda`.
pub fn gibbs_sweep_k<R: Rng + ?Sized>(
    x: &PointPattern,
    state: &mut ChainState,
    cfg: &SamplerConfig,
    g: &dyn CenterDensity,
    rng: &mut R,
) -> Result<SweepInfo, SamplerError> {
    let k = x.k();
    let subset = sample_color_subset(k, rng);
    let (rho, accepted_moves) = projection_kernel_step(
        x,
        &state.rho,
        &state.params,
        g,
        &subset,
        cfg.n_moves,
        cfg.proposal,
        cfg.r_max,
        rng,
    )?;
    state.rho = rho;
    let sigma_accepted = update_params(x, state, cfg, rng);
    Ok(SweepInfo {
        accepted_moves,
        sigma_accepted,
        rung: 0,
    })
}

/// The `sigma`, size-distribution and `lambda` steps of a sweep, as enabled
/// in `cfg`. Returns the accepted inner `sigma` moves.
pub(crate) fn update_params<R: Rng + ?Sized>(
    x: &PointPattern,
    state: &mut ChainState,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> usize {
    let mut sigma_accepted = 0;
    if cfg.updates.sigma {
        let stats = SigmaStats::of(x, &state.rho);
        let (s, acc) = mh_update_sigma(
            state.params.sigma,
            cfg.hyper.sigma_max,
            &stats,
            cfg.sigma_step,
            cfg.sigma_inner,
            rng,
        );
        state.params.sigma = s;
        sigma_accepted = acc;
    }
    if cfg.updates.size_probs {
        state.params.size_probs = gibbs_update_p(&state.rho, &cfg.hyper.size_concentration, rng);
    }
    if cfg.updates.lambda {
        state.params.lambda = gibbs_update_lambda(&state.rho, cfg.hyper.lambda_shape, cfg.hyper.lambda_scale, rng);
    }
    sigma_accepted
}

/// One recorded draw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub sweep: usize,
    pub sigma: f64,
    pub size_probs: Vec<f64>,
    pub lambda: f64,
    pub n_clusters: usize,
    pub log_posterior: f64,
    /// Cluster label of each point.
    pub labels: Vec<usize>,
}

impl Sample {
    pub fn of(sweep: usize, x: &PointPattern, state: &ChainState, g: &dyn CenterDensity) -> Self {
        Self {
            sweep,
            sigma: state.params.sigma,
            size_probs: state.params.size_probs.clone(),
            lambda: state.params.lambda,
            n_clusters: state.rho.n_clusters(),
            log_posterior: log_posterior_partition(x, &state.rho, &state.params, g),
            labels: state.rho.labels(),
        }
    }

    pub fn matching(&self, marks: &[usize]) -> Matching {
        Matching::from_labels(marks, &self.labels).expect("recorded labels are valid")
    }
}

/// Runs `burn_in + n_keep * thin` sweeps and hands every `thin`-th sweep
/// after burn-in to `record`.
#[allow(clippy::too_many_arguments)]
pub fn run_chain<R: Rng + ?Sized>(
    x: &PointPattern,
    init: ChainState,
    cfg: &SamplerConfig,
    g: &dyn CenterDensity,
    burn_in: usize,
    n_keep: usize,
    thin: usize,
    rng: &mut R,
    mut record: impl FnMut(&Sample),
) -> Result<ChainState, SamplerError> {
    cfg.validate(x.k())?;
    if thin == 0 {
        return Err(SamplerError::BadProposal("thinning must be at least 1"));
    }
    init.rho.validate(&x.marks())?;
    let mut state = init;
    for sweep in 0..burn_in + n_keep * thin {
        gibbs_sweep_k(x, &mut state, cfg, g, rng)?;
        debug_assert!(state.rho.validate(&x.marks()).is_ok());
        if sweep >= burn_in && (sweep - burn_in + 1).is_multiple_of(thin) {
            record(&Sample::of(sweep + 1, x, &state, g));
        }
    }
    Ok(state)
}

/// Summaries of the clusters of `rho`, for reports.
pub fn cluster_summaries(x: &PointPattern, rho: &Matching) -> Vec<ClusterSummary> {
    partition_stats(x, rho)
}

#[cfg(test)]
pub(crate) mod testutil {
    use crate::pattern::Matching;

    /// Every partition of points with the given marks whose clusters have
    /// distinct marks.
    pub fn all_partitions(marks: &[usize]) -> Vec<Matching> {
        fn rec(i: usize, marks: &[usize], groups: &mut Vec<Vec<usize>>, out: &mut Vec<Matching>) {
            if i == marks.len() {
                let edges = groups.iter().filter(|g| g.len() > 1).cloned();
                out.push(Matching::from_edges(marks, edges).unwrap());
                return;
            }
            for gi in 0..groups.len() {
                if groups[gi].iter().all(|&p| marks[p] != marks[i]) {
                    groups[gi].push(i);
                    rec(i + 1, marks, groups, out);
                    groups[gi].pop();
                }
            }
            groups.push(vec![i]);
            rec(i + 1, marks, groups, out);
            groups.pop();
        }
        let mut out = Vec::new();
        rec(0, marks, &mut Vec::new(), &mut out);
        out
    }
}
