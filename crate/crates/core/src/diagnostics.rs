//! Convergence diagnostics and posterior summaries of recorded draws.

use std::collections::BTreeMap;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::StatsError;
use crate::pattern::{cluster_size_counts, Matching};
use crate::samplerk::Sample;

/// Shortest series accepted by the autocorrelation diagnostics.
pub const MIN_SERIES_LEN: usize = 100;

/// Normalized autocorrelations at every lag, by FFT.
pub fn autocorrelation(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let size = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|v| Complex::new(v - mean, 0.0)).collect();
    buf.resize(size, Complex::new(0.0, 0.0));
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(size).process(&mut buf);
    for c in buf.iter_mut() {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(size).process(&mut buf);
    let c0 = buf[0].re;
    buf[..n].iter().map(|c| c.re / c0).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IatEss {
    pub iat: f64,
    pub ess: f64,
    /// The series never moved, so the IAT is undefined (reported as NaN).
    pub constant: bool,
}

/// Integrated autocorrelation time by the initial monotone positive
/// sequence, and `ESS = n / IAT`.
pub fn iat_ess(x: &[f64]) -> Result<IatEss, StatsError> {
    let n = x.len();
    if n < MIN_SERIES_LEN {
        return Err(StatsError::TooShort {
            need: MIN_SERIES_LEN,
            got: n,
        });
    }
    let first = x[0];
    if x.iter().all(|&v| v == first) {
        return Ok(IatEss {
            iat: f64::NAN,
            ess: n as f64,
            constant: true,
        });
    }
    let rho = autocorrelation(x);
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut m = 0;
    while 2 * m + 1 < n {
        let gamma = rho[2 * m] + rho[2 * m + 1];
        if gamma <= 0.0 {
            break;
        }
        let gamma = gamma.min(prev);
        sum += gamma;
        prev = gamma;
        m += 1;
    }
    let iat = (2.0 * sum - 1.0).max(1.0 / n as f64);
    Ok(IatEss {
        iat,
        ess: (n as f64 / iat).min(n as f64),
        constant: false,
    })
}

/// Multivariate potential scale reduction factor for chains of
/// `d`-dimensional summaries: `(n-1)/n + (m+1)/m * lambda_max(W^-1 B/n)`.
pub fn brooks_gelman_psrf(chains: &[Vec<Vec<f64>>]) -> Result<f64, StatsError> {
    let m = chains.len();
    if m < 2 {
        return Err(StatsError::TooShort { need: 2, got: m });
    }
    let n = chains[0].len();
    if chains.iter().any(|c| c.len() != n) {
        return Err(StatsError::Mismatch);
    }
    if n < MIN_SERIES_LEN {
        return Err(StatsError::TooShort {
            need: MIN_SERIES_LEN,
            got: n,
        });
    }
    let d = chains[0][0].len();
    if d == 0 || chains.iter().flatten().any(|v| v.len() != d) {
        return Err(StatsError::Mismatch);
    }

    let means: Vec<DVector<f64>> = chains
        .iter()
        .map(|c| c.iter().fold(DVector::zeros(d), |a, v| a + DVector::from_column_slice(v)) / n as f64)
        .collect();
    let grand = means.iter().fold(DVector::zeros(d), |a, v| a + v) / m as f64;
    let mut w = DMatrix::zeros(d, d);
    for (c, mu) in chains.iter().zip(&means) {
        for v in c {
            let e = DVector::from_column_slice(v) - mu;
            w += &e * e.transpose();
        }
    }
    w /= (m * (n - 1)) as f64;
    let mut b_n = DMatrix::zeros(d, d);
    for mu in &means {
        let e = mu - &grand;
        b_n += &e * e.transpose();
    }
    b_n /= (m - 1) as f64;

    let chol = match w.clone().cholesky() {
        Some(c) if c.l().diagonal().iter().all(|&x| x > 1e-12 * w.trace().max(1e-300).sqrt()) => c,
        _ => {
            let ridge = 1e-8 * (w.trace() / d as f64).max(1e-12);
            warn!("within-chain covariance is singular; adding ridge {ridge}");
            (w + DMatrix::identity(d, d) * ridge).cholesky().ok_or(StatsError::Invalid("singular covariance".into()))?
        }
    };
    let l_inv = chol.l().try_inverse().ok_or(StatsError::Invalid("singular covariance".into()))?;
    let sym = &l_inv * b_n * l_inv.transpose();
    let sym = (&sym + sym.transpose()) * 0.5;
    let lambda = sym.symmetric_eigenvalues().max();
    Ok((n as f64 - 1.0) / n as f64 + (m as f64 + 1.0) / m as f64 * lambda)
}

/// Sparse co-membership frequencies of point pairs `u < v`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CoMembership {
    pub n_points: usize,
    pub n_samples: usize,
    counts: BTreeMap<(usize, usize), u64>,
}

impl CoMembership {
    pub fn new(n_points: usize) -> Self {
        Self {
            n_points,
            ..Self::default()
        }
    }

    pub fn add(&mut self, rho: &Matching) {
        self.n_samples += 1;
        for e in rho.edges() {
            for (a, &u) in e.iter().enumerate() {
                for &v in &e[a + 1..] {
                    *self.counts.entry((u.min(v), u.max(v))).or_default() += 1;
                }
            }
        }
    }

    /// `p_uv`; zero on the diagonal.
    pub fn get(&self, u: usize, v: usize) -> f64 {
        if u == v || self.n_samples == 0 {
            return 0.0;
        }
        self.counts.get(&(u.min(v), u.max(v))).map_or(0.0, |&c| c as f64 / self.n_samples as f64)
    }

    /// Pairs seen together at least once, with their frequency.
    pub fn entries(&self) -> impl Iterator<Item = ((usize, usize), f64)> + '_ {
        let n = self.n_samples.max(1) as f64;
        self.counts.iter().map(move |(&k, &c)| (k, c as f64 / n))
    }
}

/// Co-membership frequencies over a set of sampled partitions.
pub fn comembership_matrix(samples: &[Matching]) -> Result<CoMembership, StatsError> {
    let first = samples.first().ok_or(StatsError::Empty)?;
    let mut c = CoMembership::new(first.n_points());
    for s in samples {
        if s.n_points() != c.n_points {
            return Err(StatsError::Mismatch);
        }
        c.add(s);
    }
    Ok(c)
}

/// Largest absolute difference between two co-membership estimates.
pub fn proximity_d(a: &CoMembership, b: &CoMembership) -> Result<f64, StatsError> {
    if a.n_points != b.n_points {
        return Err(StatsError::Mismatch);
    }
    let keys = a.counts.keys().chain(b.counts.keys());
    Ok(keys.map(|&(u, v)| (a.get(u, v) - b.get(u, v)).abs()).fold(0.0, f64::max))
}

/// Number of point pairs on which two partitions disagree about
/// co-membership.
pub fn pair_difference(a: &Matching, b: &Matching) -> usize {
    let pairs = |m: &Matching| -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for e in m.edges() {
            for (t, &u) in e.iter().enumerate() {
                for &v in &e[t + 1..] {
                    out.push((u.min(v), u.max(v)));
                }
            }
        }
        out.sort_unstable();
        out
    };
    let (pa, pb) = (pairs(a), pairs(b));
    let (mut i, mut j, mut shared) = (0, 0, 0);
    while i < pa.len() && j < pb.len() {
        match pa[i].cmp(&pb[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                shared += 1;
                i += 1;
                j += 1;
            }
        }
    }
    pa.len() + pb.len() - 2 * shared
}

/// Co-occurrence of marks inside a uniformly chosen cluster, averaged over
/// sampled partitions.
#[derive(Clone, Debug, Default, PartialEq)]
struct Occurrence {
    single: Vec<f64>,
    joint: Vec<Vec<f64>>,
    draws: usize,
}

impl Occurrence {
    fn new(k: usize) -> Self {
        Self {
            single: vec![0.0; k],
            joint: vec![vec![0.0; k]; k],
            draws: 0,
        }
    }

    fn add(&mut self, clusters: &[Vec<usize>]) {
        let n = clusters.len() as f64;
        if n == 0.0 {
            return;
        }
        self.draws += 1;
        for c in clusters {
            for (t, &a) in c.iter().enumerate() {
                self.single[a] += 1.0 / n;
                for &b in &c[t + 1..] {
                    self.joint[a][b] += 1.0 / n;
                    self.joint[b][a] += 1.0 / n;
                }
            }
        }
    }

    fn measure(&self) -> Vec<Vec<Option<f64>>> {
        let k = self.single.len();
        let d = self.draws.max(1) as f64;
        let mut out = vec![vec![None; k]; k];
        for a in 0..k {
            for b in 0..k {
                let (pa, pb) = (self.single[a] / d, self.single[b] / d);
                if a != b && pa > 0.0 && pb > 0.0 {
                    out[a][b] = Some(self.joint[a][b] / d / (pa * pb));
                }
            }
        }
        out
    }
}

/// Marks of each cluster.
fn cluster_marks(rho: &Matching, marks: &[usize]) -> Vec<Vec<usize>> {
    rho.clusters().iter().map(|c| c.iter().map(|&i| marks[i]).collect()).collect()
}

/// Association between marks `a` and `b`: `Pr[A and B] / (Pr[A] Pr[B])`
/// where `A` is the event that `a` occurs in a uniformly chosen cluster.
/// Undefined entries (diagonal, or a mark never observed) are `None`.
pub fn association_raw(samples: &[Matching], marks: &[usize], k: usize) -> Vec<Vec<Option<f64>>> {
    let mut occ = Occurrence::new(k);
    for rho in samples {
        occ.add(&cluster_marks(rho, marks));
    }
    occ.measure()
}

/// Draws `s` distinct marks with probability proportional to the product of
/// their numerosities.
struct NumerositySampler {
    weights: Vec<f64>,
    /// `esp[j][r]`: elementary symmetric polynomial of degree `r` in
    /// `weights[j..]`.
    esp: Vec<Vec<f64>>,
}

impl NumerositySampler {
    fn new(counts: &[usize]) -> Self {
        let total: usize = counts.iter().sum();
        let weights: Vec<f64> = counts.iter().map(|&c| c as f64 / total.max(1) as f64).collect();
        let k = weights.len();
        let mut esp = vec![vec![0.0; k + 1]; k + 1];
        esp[k][0] = 1.0;
        for j in (0..k).rev() {
            esp[j][0] = 1.0;
            for r in 1..=k {
                esp[j][r] = esp[j + 1][r] + weights[j] * esp[j + 1][r - 1];
            }
        }
        Self { weights, esp }
    }

    fn draw<R: Rng + ?Sized>(&self, s: usize, rng: &mut R, out: &mut Vec<usize>) -> bool {
        out.clear();
        if self.esp[0][s] <= 0.0 {
            return false;
        }
        let mut need = s;
        for j in 0..self.weights.len() {
            if need == 0 {
                break;
            }
            let take = self.weights[j] * self.esp[j + 1][need - 1] / self.esp[j][need];
            if rng.random::<f64>() < take {
                out.push(j);
                need -= 1;
            }
        }
        need == 0
    }
}

/// Association measure with its null baseline.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AssociationMatrix {
    pub raw: Vec<Vec<Option<f64>>>,
    pub null: Vec<Vec<Option<f64>>>,
    /// `raw / null`.
    pub relative: Vec<Vec<Option<f64>>>,
}

/// Association measure relative to a null in which each cluster of size
/// `s` carries `s` distinct marks drawn with probability proportional to
/// the numerosity of each mark. The null is estimated from `n_null` draws
/// per sampled partition.
pub fn association_measure<R: Rng + ?Sized>(
    samples: &[Matching],
    marks: &[usize],
    k: usize,
    n_null: usize,
    rng: &mut R,
) -> Result<AssociationMatrix, StatsError> {
    if samples.is_empty() {
        return Err(StatsError::Empty);
    }
    let raw = association_raw(samples, marks, k);
    let mut counts = vec![0usize; k];
    for &m in marks {
        counts[m] += 1;
    }
    let sampler = NumerositySampler::new(&counts);
    let mut occ = Occurrence::new(k);
    let mut buf = Vec::new();
    for rho in samples {
        let sizes: Vec<usize> = rho.clusters().iter().map(Vec::len).collect();
        for _ in 0..n_null {
            let mut clusters = Vec::with_capacity(sizes.len());
            for &s in &sizes {
                if !sampler.draw(s, rng, &mut buf) {
                    return Err(StatsError::Invalid(format!("fewer than {s} marks are present")));
                }
                clusters.push(buf.clone());
            }
            occ.add(&clusters);
        }
    }
    let null = occ.measure();
    let relative = raw
        .iter()
        .zip(&null)
        .map(|(r, n)| {
            r.iter()
                .zip(n)
                .map(|(a, b)| match (a, b) {
                    (Some(a), Some(b)) if *b > 0.0 => Some(a / b),
                    _ => None,
                })
                .collect()
        })
        .collect();
    Ok(AssociationMatrix { raw, null, relative })
}

/// Shortest interval holding `mass` of the sorted samples.
pub fn hpd_interval(samples: &[f64], mass: f64) -> Result<(f64, f64), StatsError> {
    if samples.is_empty() {
        return Err(StatsError::Empty);
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    let w = ((mass * n as f64).ceil() as usize).clamp(1, n);
    let best = (0..=n - w)
        .min_by(|&a, &b| (s[a + w - 1] - s[a]).total_cmp(&(s[b + w - 1] - s[b])))
        .unwrap_or(0);
    Ok((s[best], s[best + w - 1]))
}

/// Sample quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarSummary {
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub q975: f64,
    pub hpd_low: f64,
    pub hpd_high: f64,
}

impl ScalarSummary {
    pub fn of(x: &[f64]) -> Result<Self, StatsError> {
        if x.is_empty() {
            return Err(StatsError::Empty);
        }
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
        let mut s = x.to_vec();
        s.sort_by(f64::total_cmp);
        let (hpd_low, hpd_high) = hpd_interval(&s, 0.95)?;
        Ok(Self {
            mean,
            sd,
            q025: quantile(&s, 0.025),
            q25: quantile(&s, 0.25),
            median: quantile(&s, 0.5),
            q75: quantile(&s, 0.75),
            q975: quantile(&s, 0.975),
            hpd_low,
            hpd_high,
        })
    }
}

/// Per-draw scalar traces of a run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceSet {
    pub sigma: Vec<f64>,
    pub lambda: Vec<f64>,
    pub n_clusters: Vec<f64>,
    /// `y[l-1]`: points in clusters of size `l`, per draw.
    pub y: Vec<Vec<f64>>,
    /// `p[l-1]`: probability of cluster size `l`, per draw.
    pub p: Vec<Vec<f64>>,
    /// Pairwise co-membership differences from the reference partition.
    pub difference: Vec<f64>,
}

impl TraceSet {
    pub fn from_samples(samples: &[Sample], marks: &[usize], k: usize, reference: &Matching) -> Self {
        let mut t = TraceSet {
            y: vec![Vec::with_capacity(samples.len()); k],
            p: vec![Vec::with_capacity(samples.len()); k],
            ..Default::default()
        };
        for s in samples {
            let rho = s.matching(marks);
            let counts = cluster_size_counts(&rho, k);
            t.sigma.push(s.sigma);
            t.lambda.push(s.lambda);
            t.n_clusters.push(s.n_clusters as f64);
            for l in 0..k {
                t.y[l].push(counts.points[l] as f64);
                t.p[l].push(s.size_probs.get(l).copied().unwrap_or(0.0));
            }
            t.difference.push(pair_difference(&rho, reference) as f64);
        }
        t
    }

    pub fn len(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }

    /// Named scalar series.
    pub fn named(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = vec![
            ("sigma".into(), &self.sigma),
            ("lambda".into(), &self.lambda),
            ("n_clusters".into(), &self.n_clusters),
            ("difference".into(), &self.difference),
        ];
        for (l, y) in self.y.iter().enumerate() {
            out.push((format!("y{}", l + 1), y));
        }
        for (l, p) in self.p.iter().enumerate() {
            out.push((format!("p{}", l + 1), p));
        }
        out
    }

    /// The default multivariate summary: sigma, lambda, N, Y_1..Y_4 and
    /// p_1..p_3, keeping only components that are not linear in the rest:
    /// the Y sum to the number of points and, weighted by 1/l, to N, and the
    /// p sum to one.
    pub fn summary_vectors(&self) -> Vec<Vec<f64>> {
        let ny = self.y.len().saturating_sub(2).min(4);
        let np = self.p.len().saturating_sub(1).min(3);
        (0..self.len())
            .map(|t| {
                let mut v = vec![self.sigma[t], self.lambda[t], self.n_clusters[t]];
                v.extend(self.y[..ny].iter().map(|y| y[t]));
                v.extend(self.p[..np].iter().map(|p| p[t]));
                v
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub sigma: ScalarSummary,
    pub lambda: ScalarSummary,
    pub n_clusters: ScalarSummary,
    pub y: Vec<ScalarSummary>,
    pub p: Vec<ScalarSummary>,
}

/// Means, quantiles and 95% HPD intervals of the recorded parameters.
pub fn cluster_size_posterior(traces: &TraceSet) -> Result<PosteriorSummary, StatsError> {
    if traces.len() < MIN_SERIES_LEN {
        return Err(StatsError::TooShort {
            need: MIN_SERIES_LEN,
            got: traces.len(),
        });
    }
    Ok(PosteriorSummary {
        sigma: ScalarSummary::of(&traces.sigma)?,
        lambda: ScalarSummary::of(&traces.lambda)?,
        n_clusters: ScalarSummary::of(&traces.n_clusters)?,
        y: traces.y.iter().map(|y| ScalarSummary::of(y)).collect::<Result<_, _>>()?,
        p: traces.p.iter().map(|p| ScalarSummary::of(p)).collect::<Result<_, _>>()?,
    })
}

/// Diagnostics across one or more chains of the same run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub n_chains: usize,
    pub draws_per_chain: usize,
    /// IAT and ESS of every scalar, per chain.
    pub mixing: Vec<BTreeMap<String, IatEss>>,
    pub psrf: Option<f64>,
    /// Largest co-membership disagreement between the first two chains.
    pub proximity_d: Option<f64>,
    pub posterior: Option<PosteriorSummary>,
}

/// Builds the report from per-chain traces and co-membership estimates.
pub fn diagnostics_report(traces: &[TraceSet], comembership: &[CoMembership]) -> Result<DiagnosticsReport, StatsError> {
    let n = traces.first().ok_or(StatsError::Empty)?.len();
    let mut mixing = Vec::with_capacity(traces.len());
    for t in traces {
        let mut row = BTreeMap::new();
        for (name, series) in t.named() {
            if series.len() >= MIN_SERIES_LEN {
                row.insert(name, iat_ess(series)?);
            }
        }
        mixing.push(row);
    }
    let psrf = if traces.len() >= 2 && traces.iter().all(|t| t.len() == n) && n >= MIN_SERIES_LEN {
        let chains: Vec<_> = traces.iter().map(TraceSet::summary_vectors).collect();
        Some(brooks_gelman_psrf(&chains)?)
    } else {
        None
    };
    let proximity_d = match comembership {
        [a, b, ..] => Some(proximity_d(a, b)?),
        _ => None,
    };
    let mut pooled = TraceSet::default();
    for t in traces {
        pooled.sigma.extend(&t.sigma);
        pooled.lambda.extend(&t.lambda);
        pooled.n_clusters.extend(&t.n_clusters);
        pooled.difference.extend(&t.difference);
        pooled.y.resize(t.y.len(), Vec::new());
        pooled.p.resize(t.p.len(), Vec::new());
        for (a, b) in pooled.y.iter_mut().zip(&t.y) {
            a.extend(b);
        }
        for (a, b) in pooled.p.iter_mut().zip(&t.p) {
            a.extend(b);
        }
    }
    let posterior = (pooled.len() >= MIN_SERIES_LEN).then(|| cluster_size_posterior(&pooled)).transpose()?;
    Ok(DiagnosticsReport {
        n_chains: traces.len(),
        draws_per_chain: n,
        mixing,
        psrf,
        proximity_d,
        posterior,
    })
}
