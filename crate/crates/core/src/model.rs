//! The complementary clustering model: cluster likelihood, hyperedge
//! weights, the conditional posterior of the partition and the conditional
//! updates of `sigma`, the cluster-size distribution and `lambda`.
//!
//! Everything is kept in log space; weights are exponentiated only when the
//! samplers build proposal tables.

use std::f64::consts::PI;
use std::fmt;

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::pattern::{cluster_size_counts, ClusterSummary, Matching, ObservationWindow, Point, PointPattern};

/// Density `g` of the latent cluster centers, per km².
pub trait CenterDensity: Send + Sync + fmt::Debug {
    fn density(&self, p: Point) -> f64;

    fn ln_density(&self, p: Point) -> f64 {
        self.density(p).ln()
    }

    /// Draws one center location.
    fn sample(&self, rng: &mut dyn RngCore) -> Point;
}

/// Uniform center density over a window.
///
/// The density is the constant `1 / |W|` at every location, so that
/// barycenters that fall just outside `W` keep a finite likelihood. Samples
/// are always drawn inside `W`.
#[derive(Clone, Debug)]
pub struct UniformDensity {
    window: ObservationWindow,
    value: f64,
}

impl UniformDensity {
    pub fn new(window: ObservationWindow) -> Self {
        let value = 1.0 / window.area();
        Self { window, value }
    }

    pub fn window(&self) -> &ObservationWindow {
        &self.window
    }
}

impl CenterDensity for UniformDensity {
    fn density(&self, _p: Point) -> f64 {
        self.value
    }

    fn sample(&self, rng: &mut dyn RngCore) -> Point {
        let b = self.window.bounding_box();
        loop {
            let p = Point::new(
                b.xmin + rng.random::<f64>() * b.width(),
                b.ymin + rng.random::<f64>() * b.height(),
            );
            if self.window.contains(p) {
                return p;
            }
        }
    }
}

/// Fixed hyperparameters of the priors on `sigma`, `lambda` and the
/// cluster-size distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Upper end of the uniform prior on `sigma` (km).
    pub sigma_max: f64,
    /// Gamma shape for `lambda`.
    pub lambda_shape: f64,
    /// Gamma scale for `lambda`.
    pub lambda_scale: f64,
    /// Dirichlet concentrations, one per cluster size `1..=k`.
    pub size_concentration: Vec<f64>,
}

impl Hyperparams {
    /// `sigma_max = 50`, `Gamma(300, 1)` and `Dir(1/k, ..., 1/k)`.
    pub fn defaults(k: usize) -> Self {
        Self {
            sigma_max: 50.0,
            lambda_shape: 300.0,
            lambda_scale: 1.0,
            size_concentration: vec![1.0 / k as f64; k],
        }
    }

    pub fn k(&self) -> usize {
        self.size_concentration.len()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        positive("sigma_max", self.sigma_max)?;
        positive("lambda_shape", self.lambda_shape)?;
        positive("lambda_scale", self.lambda_scale)?;
        if self.size_concentration.is_empty() {
            return Err(ModelError::BadSizeDistribution { k: 0 });
        }
        for &a in &self.size_concentration {
            positive("size_concentration", a)?;
        }
        Ok(())
    }
}

fn positive(name: &'static str, value: f64) -> Result<(), ModelError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(ModelError::NonPositive { name, value })
    }
}

/// Continuous unknowns of the model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Intra-cluster dispersion (km): the expected distance between two
    /// points of one cluster.
    pub sigma: f64,
    /// Cluster-size distribution on `1..=k`.
    pub size_probs: Vec<f64>,
    /// Expected number of clusters.
    pub lambda: f64,
}

impl ModelParams {
    pub fn new(sigma: f64, size_probs: Vec<f64>, lambda: f64) -> Result<Self, ModelError> {
        let p = Self {
            sigma,
            size_probs,
            lambda,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn k(&self) -> usize {
        self.size_probs.len()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        positive("sigma", self.sigma)?;
        positive("lambda", self.lambda)?;
        let k = self.size_probs.len();
        let total: f64 = self.size_probs.iter().sum();
        if k == 0 || self.size_probs.iter().any(|&p| !(p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(ModelError::BadSizeDistribution { k });
        }
        Ok(())
    }
}

/// `ln C(k, s)`.
pub fn ln_binomial(k: usize, s: usize) -> f64 {
    if s > k {
        return f64::NEG_INFINITY;
    }
    let s = s.min(k - s);
    (0..s).map(|t| ((k - t) as f64 / (t + 1) as f64).ln()).sum()
}

/// `ln c_s` with `c_s = C(k, s) * s * 2^(s-1)`.
pub fn ln_size_constant(k: usize, s: usize) -> f64 {
    ln_binomial(k, s) + (s as f64).ln() + (s as f64 - 1.0) * std::f64::consts::LN_2
}

/// Log of the cluster likelihood `h_(s, sigma)`:
/// `ln g(xbar) - ln(C(k,s) s (2 sigma^2)^(s-1)) - pi delta^2 / (2 sigma^2)`.
pub fn cluster_log_likelihood(
    cluster: &ClusterSummary,
    ln_g_centroid: f64,
    sigma: f64,
    k: usize,
) -> Result<f64, ModelError> {
    positive("sigma", sigma)?;
    let s = cluster.size;
    if s == 0 || s > k {
        return Err(ModelError::BadClusterSize { size: s, k });
    }
    let two_s2 = 2.0 * sigma * sigma;
    Ok(ln_g_centroid
        - ln_binomial(k, s)
        - (s as f64).ln()
        - (s as f64 - 1.0) * two_s2.ln()
        - PI * cluster.scatter / two_s2)
}

/// Per-size log constants shared by every cluster term of the conditional
/// posterior of the partition.
#[derive(Clone, Debug)]
pub struct LogFactors {
    k: usize,
    /// `ln(lambda p_s / c_s) - 2 (s-1) ln sigma`, indexed by `s - 1`.
    size_term: Vec<f64>,
    two_sigma2: f64,
}

impl LogFactors {
    pub fn new(params: &ModelParams) -> Self {
        let k = params.k();
        let ln_sigma = params.sigma.ln();
        let ln_lambda = params.lambda.ln();
        let size_term = (1..=k)
            .map(|s| {
                ln_lambda + params.size_probs[s - 1].ln()
                    - ln_size_constant(k, s)
                    - 2.0 * (s as f64 - 1.0) * ln_sigma
            })
            .collect();
        Self {
            k,
            size_term,
            two_sigma2: 2.0 * params.sigma * params.sigma,
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Log of one cluster's factor in the partition posterior.
    pub fn cluster(&self, size: usize, ln_g_centroid: f64, scatter: f64) -> f64 {
        if size == 0 || size > self.k {
            return f64::NEG_INFINITY;
        }
        ln_g_centroid + self.size_term[size - 1] - PI * scatter / self.two_sigma2
    }

    pub fn summary(&self, c: &ClusterSummary, g: &dyn CenterDensity) -> f64 {
        self.cluster(c.size, g.ln_density(c.centroid), c.scatter)
    }
}

/// `ln w(e)` for a hyperedge `e` (point indices with distinct marks): the
/// log ratio gained by merging the points of `e`, all singletons, into one
/// cluster.
pub fn hyperedge_log_weight(
    pattern: &PointPattern,
    edge: &[usize],
    params: &ModelParams,
    g: &dyn CenterDensity,
) -> Result<f64, ModelError> {
    let k = params.k();
    let s = edge.len();
    if s < 2 || s > k {
        return Err(ModelError::BadClusterSize { size: s, k });
    }
    for (a, &i) in edge.iter().enumerate() {
        if i >= pattern.len() {
            return Err(crate::error::PatternError::IndexOutOfRange(i).into());
        }
        for &j in &edge[a + 1..] {
            if pattern.mark(i) == pattern.mark(j) {
                return Err(crate::error::PatternError::DuplicateMark { a: i, b: j }.into());
            }
        }
    }
    let c = ClusterSummary::of_indices(pattern, edge);
    let sf = s as f64;
    let p = &params.size_probs;
    let ln_lp1 = (params.lambda * p[0]).ln();
    let sum_ln_g: f64 = edge.iter().map(|&i| g.ln_density(pattern.loc(i))).sum();
    Ok(sf * ln_size_constant(k, 1) + params.lambda.ln() + p[s - 1].ln() + g.ln_density(c.centroid)
        - 2.0 * (sf - 1.0) * params.sigma.ln()
        - ln_size_constant(k, s)
        - sf * ln_lp1
        - sum_ln_g
        - PI * c.scatter / (2.0 * params.sigma * params.sigma))
}

/// Unnormalized log conditional posterior of the partition.
pub fn log_posterior_partition(
    pattern: &PointPattern,
    rho: &Matching,
    params: &ModelParams,
    g: &dyn CenterDensity,
) -> f64 {
    let f = LogFactors::new(params);
    rho.clusters()
        .iter()
        .map(|c| f.summary(&ClusterSummary::of_indices(pattern, c), g))
        .sum()
}

/// Sufficient statistics of the partition for the `sigma` update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SigmaStats {
    pub n_points: usize,
    pub n_clusters: usize,
    pub total_scatter: f64,
}

impl SigmaStats {
    pub fn of(pattern: &PointPattern, rho: &Matching) -> Self {
        let total_scatter = rho
            .edges()
            .iter()
            .map(|e| ClusterSummary::of_indices(pattern, e).scatter)
            .sum();
        Self {
            n_points: pattern.len(),
            n_clusters: rho.n_clusters(),
            total_scatter,
        }
    }

    pub fn from_summaries(summaries: &[ClusterSummary]) -> Self {
        Self {
            n_points: summaries.iter().map(|c| c.size).sum(),
            n_clusters: summaries.len(),
            total_scatter: summaries.iter().map(|c| c.scatter).sum(),
        }
    }
}

/// Unnormalized log conditional density of `sigma`:
/// `-2 (n - N) ln sigma - pi sum delta^2 / (2 sigma^2)` on `(0, sigma_max)`.
pub fn sigma_log_conditional(sigma: f64, sigma_max: f64, stats: &SigmaStats) -> f64 {
    if !(sigma > 0.0 && sigma < sigma_max) {
        return f64::NEG_INFINITY;
    }
    let linked = (stats.n_points - stats.n_clusters) as f64;
    -2.0 * linked * sigma.ln() - PI * stats.total_scatter / (2.0 * sigma * sigma)
}

/// Random-walk Metropolis on `ln sigma` targeting [`sigma_log_conditional`].
/// Returns the new value and the number of accepted inner steps.
pub fn mh_update_sigma<R: Rng + ?Sized>(
    sigma: f64,
    sigma_max: f64,
    stats: &SigmaStats,
    step_scale: f64,
    n_inner: usize,
    rng: &mut R,
) -> (f64, usize) {
    let mut cur = sigma;
    let mut cur_lp = sigma_log_conditional(cur, sigma_max, stats) + cur.ln();
    let mut accepted = 0;
    for _ in 0..n_inner {
        let z: f64 = rng.sample(StandardNormal);
        let prop = cur * (step_scale * z).exp();
        // the ln sigma term is the Jacobian of the log transform
        let prop_lp = sigma_log_conditional(prop, sigma_max, stats) + prop.ln();
        if prop_lp.is_finite() && rng.random::<f64>().ln() < prop_lp - cur_lp {
            cur = prop;
            cur_lp = prop_lp;
            accepted += 1;
        }
    }
    (cur, accepted)
}

/// Draws from `Dir(alpha)` by normalizing independent gamma variates.
pub fn sample_dirichlet<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Vec<f64> {
    let mut x: Vec<f64> = alpha
        .iter()
        .map(|&a| Gamma::new(a, 1.0).expect("positive concentration").sample(rng))
        .collect();
    let total: f64 = x.iter().sum();
    if total > 0.0 {
        x.iter_mut().for_each(|v| *v /= total);
    } else {
        // every variate underflowed: fall back to the largest concentration
        let best = (0..alpha.len())
            .max_by(|&a, &b| alpha[a].total_cmp(&alpha[b]))
            .unwrap_or(0);
        x.iter_mut().enumerate().for_each(|(l, v)| *v = f64::from(l == best));
    }
    x
}

/// Conjugate update of the cluster-size distribution:
/// `Dir(alpha_1 + N_1, ..., alpha_k + N_k)`.
pub fn gibbs_update_p<R: Rng + ?Sized>(rho: &Matching, alpha: &[f64], rng: &mut R) -> Vec<f64> {
    let counts = cluster_size_counts(rho, alpha.len());
    let post: Vec<f64> = alpha
        .iter()
        .zip(&counts.clusters)
        .map(|(a, &n)| a + n as f64)
        .collect();
    sample_dirichlet(&post, rng)
}

/// Conjugate update of `lambda`: `Gamma(shape + N, scale / (scale + 1))`
/// with the scale convention (mean = shape * scale).
pub fn gibbs_update_lambda<R: Rng + ?Sized>(
    rho: &Matching,
    shape: f64,
    scale: f64,
    rng: &mut R,
) -> f64 {
    let (a, b) = lambda_posterior(rho.n_clusters(), shape, scale);
    Gamma::new(a, b).expect("positive gamma parameters").sample(rng)
}

/// Shape and scale of the conditional gamma law of `lambda`.
pub fn lambda_posterior(n_clusters: usize, shape: f64, scale: f64) -> (f64, f64) {
    (shape + n_clusters as f64, scale / (scale + 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pattern::MarkedPoint;
    use rand::{Rng, RngCore, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use crate::samplerk::testutil::all_partitions;
    use proptest::prelude::*;

    #[derive(Debug)]
    struct ConstDensity(f64);

    impl CenterDensity for ConstDensity {
        fn density(&self, _p: Point) -> f64 {
            self.0
        }
        fn sample(&self, _rng: &mut dyn RngCore) -> Point {
            Point::default()
        }
    }

    fn pair_pattern(d: f64) -> PointPattern {
        PointPattern::new(
            vec![MarkedPoint::new(0.0, 0.0, 0), MarkedPoint::new(d, 0.0, 1)],
            2,
            ObservationWindow::square(10.0).unwrap(),
        )
        .unwrap()
    }

    fn unit_params() -> ModelParams {
        ModelParams::new(1.0, vec![0.5, 0.5], 1.0).unwrap()
    }

    #[test]
    fn binomials() {
        assert!((ln_binomial(13, 6).exp() - 1716.0).abs() < 1e-8);
        assert_eq!(ln_binomial(5, 0), 0.0);
        assert!((ln_size_constant(2, 2).exp() - 4.0).abs() < 1e-12);
        assert!((ln_size_constant(2, 1).exp() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn singleton_likelihood_is_g_over_k() {
        let c = ClusterSummary::singleton(Point::new(1.0, 2.0));
        let h = cluster_log_likelihood(&c, 0.013f64.ln(), 3.0, 13).unwrap().exp();
        assert!((h - 0.001).abs() < 1e-15);
    }

    #[test]
    fn coincident_pair_likelihood() {
        let c = ClusterSummary::from_points([Point::new(0.0, 0.0), Point::new(0.0, 0.0)]);
        let h = cluster_log_likelihood(&c, 0.0, 1.0, 2).unwrap().exp();
        // C(2,2) * 2 * (2 sigma^2) = 4
        assert!((h - 0.25).abs() < 1e-15);
    }

    #[test]
    fn likelihood_large_sigma_limit() {
        let c = ClusterSummary::from_points([Point::new(0.0, 0.0), Point::new(3.0, 0.0)]);
        let sigma: f64 = 1e6;
        let h = cluster_log_likelihood(&c, 0.0, sigma, 2).unwrap();
        let limit = -(2.0 * 2.0 * sigma * sigma).ln();
        assert!((h - limit).abs() < 1e-9);
    }

    #[test]
    fn likelihood_rejects_bad_sigma() {
        let c = ClusterSummary::singleton(Point::default());
        assert!(cluster_log_likelihood(&c, 0.0, 0.0, 2).is_err());
        assert!(cluster_log_likelihood(&c, 0.0, -1.0, 2).is_err());
    }

    #[test]
    fn pair_weight_matches_hand_values() {
        let g = ConstDensity(1.0);
        let w = hyperedge_log_weight(&pair_pattern(0.0), &[0, 1], &unit_params(), &g).unwrap();
        assert!((w.exp() - 2.0).abs() < 1e-12);
        let d: f64 = 0.7;
        let w = hyperedge_log_weight(&pair_pattern(d), &[0, 1], &unit_params(), &g).unwrap();
        assert!((w.exp() - 2.0 * (-PI * d * d / 4.0).exp()).abs() < 1e-12);
    }

    #[test]
    fn duplicate_marks_are_invalid_edges() {
        let p = PointPattern::new(
            vec![MarkedPoint::new(0.0, 0.0, 0), MarkedPoint::new(1.0, 0.0, 0)],
            2,
            ObservationWindow::square(10.0).unwrap(),
        )
        .unwrap();
        let err = hyperedge_log_weight(&p, &[0, 1], &unit_params(), &ConstDensity(1.0));
        assert!(matches!(err, Err(ModelError::Pattern(_))));
    }

    #[test]
    fn empty_partition_is_sum_of_singletons() {
        let x = pair_pattern(2.0);
        let params = ModelParams::new(0.8, vec![0.3, 0.7], 4.0).unwrap();
        let g = ConstDensity(0.02);
        let lp = log_posterior_partition(&x, &Matching::empty(2), &params, &g);
        let expect = 2.0 * (0.02f64 * 4.0 * 0.3 / 2.0).ln();
        assert!((lp - expect).abs() < 1e-12);
        let rho = Matching::from_edges(&x.marks(), [vec![0, 1]]).unwrap();
        let diff = log_posterior_partition(&x, &rho, &params, &g) - lp;
        let w = hyperedge_log_weight(&x, &[0, 1], &params, &g).unwrap();
        assert!((diff - w).abs() < 1e-12);
    }

    #[test]
    fn sigma_conditional_shape() {
        let flat = SigmaStats {
            n_points: 5,
            n_clusters: 5,
            total_scatter: 0.0,
        };
        assert_eq!(sigma_log_conditional(1.0, 50.0, &flat), 0.0);
        assert_eq!(sigma_log_conditional(30.0, 50.0, &flat), 0.0);
        assert_eq!(sigma_log_conditional(50.0, 50.0, &flat), f64::NEG_INFINITY);
        assert_eq!(sigma_log_conditional(0.0, 50.0, &flat), f64::NEG_INFINITY);

        // single pair at distance d: mode at d sqrt(pi) / 2, found by grid search
        let d = 2.0;
        let pair = SigmaStats {
            n_points: 2,
            n_clusters: 1,
            total_scatter: d * d / 2.0,
        };
        let best = (1..200_000)
            .map(|t| t as f64 * 1e-4)
            .max_by(|a, b| {
                sigma_log_conditional(*a, 50.0, &pair).total_cmp(&sigma_log_conditional(*b, 50.0, &pair))
            })
            .unwrap();
        assert!((best - d * PI.sqrt() / 2.0).abs() < 2e-4);
    }

    #[test]
    fn sigma_step_zero_keeps_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let stats = SigmaStats {
            n_points: 2,
            n_clusters: 1,
            total_scatter: 1.0,
        };
        let (s, _) = mh_update_sigma(3.0, 50.0, &stats, 0.0, 10, &mut rng);
        assert_eq!(s, 3.0);
    }

    #[test]
    fn sigma_mh_all_singletons_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let stats = SigmaStats {
            n_points: 4,
            n_clusters: 4,
            total_scatter: 0.0,
        };
        let mut s = 25.0;
        let mut draws = Vec::with_capacity(100_000);
        for _ in 0..100_000 {
            s = mh_update_sigma(s, 50.0, &stats, 0.7, 5, &mut rng).0;
            draws.push(s / 50.0);
        }
        draws.sort_by(f64::total_cmp);
        let n = draws.len() as f64;
        let ks = draws
            .iter()
            .enumerate()
            .map(|(i, &u)| ((i + 1) as f64 / n - u).abs().max((u - i as f64 / n).abs()))
            .fold(0.0, f64::max);
        assert!(ks < 0.02, "KS distance {ks}");
    }

    #[test]
    fn dirichlet_posterior_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let marks = [0, 1, 0, 1, 0, 1, 0];
        // N1 = 3, N2 = 2
        let rho = Matching::from_edges(&marks, [vec![0, 1], vec![2, 3]]).unwrap();
        let n = 100_000;
        let mean: f64 = (0..n)
            .map(|_| gibbs_update_p(&rho, &[0.5, 0.5], &mut rng)[0])
            .sum::<f64>()
            / n as f64;
        assert!((mean - 3.5 / 6.0).abs() < 0.005, "{mean}");
    }

    #[test]
    fn dirichlet_on_empty_partition() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rho = Matching::empty(40);
        let n = 20_000;
        let mean: f64 = (0..n)
            .map(|_| gibbs_update_p(&rho, &[0.5, 0.5, 0.5], &mut rng)[0])
            .sum::<f64>()
            / n as f64;
        assert!((mean - 40.5 / 41.5).abs() < 0.003, "{mean}");
    }

    #[test]
    fn lambda_posterior_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let marks = [0, 1, 0, 1, 0, 1];
        // N(rho) = 5
        let rho = Matching::from_edges(&marks, [vec![0, 1]]).unwrap();
        assert_eq!(rho.n_clusters(), 5);
        let n = 100_000;
        let mean: f64 = (0..n)
            .map(|_| gibbs_update_lambda(&rho, 300.0, 1.0, &mut rng))
            .sum::<f64>()
            / n as f64;
        assert!((mean - 152.5).abs() < 0.5, "{mean}");
        assert_eq!(lambda_posterior(0, 300.0, 1.0), (300.0, 0.5));
    }

    #[test]
    fn hyperparam_defaults() {
        let h = Hyperparams::defaults(13);
        assert_eq!(h.sigma_max, 50.0);
        assert_eq!((h.lambda_shape, h.lambda_scale), (300.0, 1.0));
        assert!(h.size_concentration.iter().all(|&a| (a - 1.0 / 13.0).abs() < 1e-15));
        h.validate().unwrap();
        assert!(ModelParams::new(1.0, vec![0.5, 0.6], 1.0).is_err());
        assert!(ModelParams::new(-1.0, vec![0.5, 0.5], 1.0).is_err());
    }

    /// Density proportional to `1 + x / 10`, used to make the centroid term matter.
    #[derive(Debug)]
    struct SlopeDensity;

    impl CenterDensity for SlopeDensity {
        fn density(&self, p: Point) -> f64 {
            (1.0 + p.x / 10.0) / 150.0
        }
        fn sample(&self, _rng: &mut dyn RngCore) -> Point {
            Point::default()
        }
    }

    fn choose(k: usize, s: usize) -> f64 {
        (0..s).fold(1.0, |acc, t| acc * (k - t) as f64 / (t + 1) as f64)
    }

    /// Straightforward product of cluster factors, written without the
    /// library helpers.
    fn brute_log_posterior(x: &PointPattern, rho: &Matching, params: &ModelParams, g: &dyn CenterDensity) -> f64 {
        let k = params.k();
        let sig = params.sigma;
        rho.clusters()
            .iter()
            .map(|c| {
                let s = c.len();
                let cx = c.iter().map(|&i| x.loc(i).x).sum::<f64>() / s as f64;
                let cy = c.iter().map(|&i| x.loc(i).y).sum::<f64>() / s as f64;
                let d2: f64 = c
                    .iter()
                    .map(|&i| (x.loc(i).x - cx).powi(2) + (x.loc(i).y - cy).powi(2))
                    .sum();
                let cs = choose(k, s) * s as f64 * 2f64.powi(s as i32 - 1);
                let f = g.density(Point::new(cx, cy)) * params.lambda * params.size_probs[s - 1]
                    / (cs * sig.powi(2 * (s as i32 - 1)))
                    * (-PI * d2 / (2.0 * sig * sig)).exp();
                f.ln()
            })
            .sum()
    }

    fn random_instance(seed: u64, n: usize, k: usize) -> (PointPattern, ModelParams) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = (0..n)
            .map(|t| MarkedPoint::new(rng.random::<f64>() * 3.0, rng.random::<f64>() * 3.0, t % k))
            .collect();
        let x = PointPattern::new(pts, k, ObservationWindow::square(10.0).unwrap()).unwrap();
        let mut p: Vec<f64> = (0..k).map(|_| 0.1 + rng.random::<f64>()).collect();
        let total: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= total);
        let params = ModelParams::new(0.3 + rng.random::<f64>(), p, 2.0 + 10.0 * rng.random::<f64>()).unwrap();
        (x, params)
    }

    #[test]
    fn enumeration_matches_brute_force() {
        let (x, params) = random_instance(11, 6, 3);
        let parts = all_partitions(&x.marks());
        let lib: Vec<f64> = parts.iter().map(|r| log_posterior_partition(&x, r, &params, &SlopeDensity)).collect();
        let brute: Vec<f64> = parts.iter().map(|r| brute_log_posterior(&x, r, &params, &SlopeDensity)).collect();
        let normalize = |v: &[f64]| {
            let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = v.iter().map(|a| (a - m).exp()).sum();
            v.iter().map(|a| (a - m).exp() / z).collect::<Vec<_>>()
        };
        let (a, b) = (normalize(&lib), normalize(&brute));
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-10, "{u} vs {v}");
        }
    }

    #[test]
    fn adding_an_edge_multiplies_by_its_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for seed in 0..20 {
            let (x, params) = random_instance(100 + seed, 6, 3);
            let parts = all_partitions(&x.marks());
            let rho = &parts[rng.random_range(0..parts.len())];
            let singles: Vec<usize> = (0..6).filter(|&i| rho.edge_of(i).is_none()).collect();
            // pick two singletons of different colors, if any
            let pair = singles
                .iter()
                .flat_map(|&i| singles.iter().map(move |&j| (i, j)))
                .find(|&(i, j)| i < j && x.mark(i) != x.mark(j));
            let Some((i, j)) = pair else { continue };
            let mut edges = rho.edges().to_vec();
            edges.push(vec![i, j]);
            let bigger = Matching::from_edges(&x.marks(), edges).unwrap();
            let ratio = log_posterior_partition(&x, &bigger, &params, &SlopeDensity)
                - log_posterior_partition(&x, rho, &params, &SlopeDensity);
            let w = hyperedge_log_weight(&x, &[i, j], &params, &SlopeDensity).unwrap();
            assert!((ratio.exp() / w.exp() - 1.0).abs() < 1e-10, "{ratio} vs {w}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn posterior_factorizes_over_edges(seed in 0u64..1_000_000, n in 2usize..8, pick in 0usize..10_000) {
            let (x, params) = random_instance(seed, n, 3);
            let parts = all_partitions(&x.marks());
            let rho = &parts[pick % parts.len()];
            let empty = Matching::empty(n);
            let diff = log_posterior_partition(&x, rho, &params, &SlopeDensity)
                - log_posterior_partition(&x, &empty, &params, &SlopeDensity);
            let sum: f64 = rho
                .edges()
                .iter()
                .map(|e| hyperedge_log_weight(&x, e, &params, &SlopeDensity).unwrap())
                .sum();
            prop_assert!((diff - sum).abs() < 1e-9, "{} vs {}", diff, sum);
        }
    }

    #[test]
    fn sigma_chain_matches_quadrature() {
        let x = pair_pattern(2.0);
        let rho = Matching::from_edges(&x.marks(), [vec![0, 1]]).unwrap();
        let stats = SigmaStats::of(&x, &rho);
        let sigma_max = 10.0;
        let bins = 50;
        let width = sigma_max / bins as f64;
        let dens = |s: f64| {
            if s <= 0.0 {
                0.0
            } else {
                sigma_log_conditional(s, sigma_max, &stats).exp()
            }
        };
        // Simpson per bin
        let mut exact: Vec<f64> = (0..bins)
            .map(|b| {
                let (lo, m) = (b as f64 * width, 40);
                let h = width / m as f64;
                (0..=m)
                    .map(|t| {
                        let c = if t == 0 || t == m { 1.0 } else if t % 2 == 1 { 4.0 } else { 2.0 };
                        c * dens(lo + t as f64 * h)
                    })
                    .sum::<f64>()
                    * h
                    / 3.0
            })
            .collect();
        let z: f64 = exact.iter().sum();
        exact.iter_mut().for_each(|v| *v /= z);

        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut hist = vec![0usize; bins];
        let mut s = 1.0;
        let n = 400_000;
        for _ in 0..n {
            s = mh_update_sigma(s, sigma_max, &stats, 0.8, 1, &mut rng).0;
            hist[((s / width) as usize).min(bins - 1)] += 1;
        }
        let tv: f64 = 0.5
            * hist
                .iter()
                .zip(&exact)
                .map(|(&h, &e)| (h as f64 / n as f64 - e).abs())
                .sum::<f64>();
        assert!(tv < 0.02, "tv {tv}");
    }

    /// Successive-conditional check: alternate cluster counts given `(p,
    /// lambda)` with the conjugate updates; the chain must keep the prior.
    #[test]
    fn conjugate_updates_keep_the_prior() {
        let alpha = [0.5, 1.0, 2.0];
        let (shape, scale) = (2.0, 1.5);
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mut p = sample_dirichlet(&alpha, &mut rng);
        let mut lambda = Gamma::new(shape, scale).unwrap().sample(&mut rng);
        let n = 200_000;
        let mut p0 = Vec::with_capacity(n);
        let mut p2 = Vec::with_capacity(n);
        let mut lam = Vec::with_capacity(n);
        for _ in 0..n {
            let mut marks = Vec::new();
            let mut edges = Vec::new();
            for (s, &ps) in p.iter().enumerate() {
                let mean = lambda * ps;
                let count = if mean > 0.0 {
                    rand_distr::Poisson::new(mean).unwrap().sample(&mut rng) as usize
                } else {
                    0
                };
                for _ in 0..count {
                    let start = marks.len();
                    marks.extend(0..=s);
                    if s > 0 {
                        edges.push((start..marks.len()).collect::<Vec<_>>());
                    }
                }
            }
            let rho = Matching::from_edges(&marks, edges).unwrap();
            p = gibbs_update_p(&rho, &alpha, &mut rng);
            lambda = gibbs_update_lambda(&rho, shape, scale, &mut rng);
            p0.push(p[0]);
            p2.push(p[2]);
            lam.push(lambda);
        }
        let check = |xs: &[f64], target: f64| {
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let var = xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / xs.len() as f64;
            let ess = crate::diagnostics::iat_ess(xs).unwrap().ess;
            let se = (var / ess).sqrt();
            assert!((mean - target).abs() < 3.0 * se, "{mean} vs {target} (se {se})");
        };
        check(&p0, 0.5 / 3.5);
        check(&p2, 2.0 / 3.5);
        check(&lam, shape * scale);
    }
}
