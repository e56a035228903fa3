//! Inhomogeneous cross-type K and L functions and the Monte Carlo deviation
//! test against independent Poisson components.

use std::f64::consts::PI;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::StatsError;
use crate::intensity::IntensityField;
use crate::pattern::{ObservationWindow, Point, PointPattern};
use crate::synth::simulate_poisson_fields;

pub const DEFAULT_R_MAX: f64 = 15.0;
pub const DEFAULT_R_STEPS: usize = 512;

/// `n` equal steps on `(0, r_max]`.
pub fn r_grid(r_max: f64, n: usize) -> Vec<f64> {
    (1..=n).map(|t| r_max * t as f64 / n as f64).collect()
}

/// One `K_ij` curve.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairCurve {
    pub i: usize,
    pub j: usize,
    pub k: Vec<f64>,
}

/// All ordered cross-type curves on a shared grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CrossK {
    pub r: Vec<f64>,
    pub curves: Vec<PairCurve>,
    pub counts: Vec<usize>,
}

impl CrossK {
    pub fn curve(&self, i: usize, j: usize) -> Option<&[f64]> {
        self.curves.iter().find(|c| c.i == i && c.j == j).map(|c| c.k.as_slice())
    }

    /// Rows `r,i,j,k` for every curve.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "r,i,j,k")?;
        for c in &self.curves {
            for (r, k) in self.r.iter().zip(&c.k) {
                writeln!(w, "{r},{},{},{k}", c.i, c.j)?;
            }
        }
        Ok(())
    }
}

/// Buckets points of one type on a square lattice of side `cell`.
struct CellIndex {
    cell: f64,
    x0: f64,
    y0: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<usize>>,
}

impl CellIndex {
    fn new(points: &[Point], cell: f64) -> Self {
        let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in points {
            x0 = x0.min(p.x);
            y0 = y0.min(p.y);
            x1 = x1.max(p.x);
            y1 = y1.max(p.y);
        }
        if points.is_empty() {
            (x0, y0, x1, y1) = (0.0, 0.0, 0.0, 0.0);
        }
        let nx = ((x1 - x0) / cell).floor() as usize + 1;
        let ny = ((y1 - y0) / cell).floor() as usize + 1;
        let mut buckets = vec![Vec::new(); nx * ny];
        for (t, p) in points.iter().enumerate() {
            let c = ((p.x - x0) / cell) as usize;
            let r = ((p.y - y0) / cell) as usize;
            buckets[r.min(ny - 1) * nx + c.min(nx - 1)].push(t);
        }
        Self {
            cell,
            x0,
            y0,
            nx,
            ny,
            buckets,
        }
    }

    /// Indices of points within one cell of `p`, a superset of those within
    /// `cell` of `p`.
    fn near(&self, p: Point) -> impl Iterator<Item = usize> + '_ {
        let c = ((p.x - self.x0) / self.cell).floor() as i64;
        let r = ((p.y - self.y0) / self.cell).floor() as i64;
        (r - 1..=r + 1)
            .flat_map(move |rr| (c - 1..=c + 1).map(move |cc| (rr, cc)))
            .filter(|&(rr, cc)| rr >= 0 && cc >= 0 && (rr as usize) < self.ny && (cc as usize) < self.nx)
            .flat_map(move |(rr, cc)| self.buckets[rr as usize * self.nx + cc as usize].iter().copied())
    }
}

/// Inhomogeneous cross-type K functions for all ordered pairs `i != j`:
/// pairs within `r` weighted by `e(u, v) / (lambda_i(u) lambda_j(v))`, with
/// translation correction on rectangles and border correction otherwise.
pub fn kcross_inhom(pattern: &PointPattern, intensities: &[IntensityField], r: &[f64]) -> Result<CrossK, StatsError> {
    kcross_scaled(pattern, intensities, r, false)
}

/// As [`kcross_inhom`], with each intensity rescaled so that its integral
/// over the window equals the observed count of its type. This removes the
/// count fluctuation of simulated patterns from the estimate.
pub fn kcross_inhom_renormalized(
    pattern: &PointPattern,
    intensities: &[IntensityField],
    r: &[f64],
) -> Result<CrossK, StatsError> {
    kcross_scaled(pattern, intensities, r, true)
}

fn kcross_scaled(
    pattern: &PointPattern,
    intensities: &[IntensityField],
    r: &[f64],
    renormalize: bool,
) -> Result<CrossK, StatsError> {
    let k = pattern.k();
    if intensities.len() != k {
        return Err(StatsError::Mismatch);
    }
    if r.is_empty() || r.windows(2).any(|w| !(w[1] > w[0])) || r[0] < 0.0 {
        return Err(StatsError::Invalid("r grid must be nonempty and increasing from 0".into()));
    }
    let window = pattern.window();
    let r_max = *r.last().unwrap();
    if let Some(b) = window.as_rect() {
        if r_max >= b.width().min(b.height()) {
            return Err(StatsError::Invalid(format!("r_max {r_max} must be below the shorter window side")));
        }
    }

    let n_by_type = pattern.counts_by_mark();
    let scale: Vec<f64> = intensities
        .iter()
        .zip(&n_by_type)
        .map(|(f, &n)| {
            let mass = f.total_mass();
            if renormalize && mass > 0.0 && n > 0 {
                n as f64 / mass
            } else {
                1.0
            }
        })
        .collect();
    let mut locs: Vec<Vec<Point>> = vec![Vec::new(); k];
    let mut inv_lambda: Vec<Vec<f64>> = vec![Vec::new(); k];
    for (idx, p) in pattern.points().iter().enumerate() {
        let l = scale[p.mark] * intensities[p.mark].value_at(p.loc);
        if !(l > 0.0) {
            return Err(StatsError::ZeroIntensity(idx));
        }
        locs[p.mark].push(p.loc);
        inv_lambda[p.mark].push(1.0 / l);
    }
    let counts = locs.iter().map(Vec::len).collect();
    let index: Vec<CellIndex> = locs.iter().map(|l| CellIndex::new(l, r_max.max(1e-9))).collect();
    let pairs: Vec<(usize, usize)> = (0..k).flat_map(|i| (0..k).filter(move |&j| j != i).map(move |j| (i, j))).collect();

    let curves = pairs
        .par_iter()
        .map(|&(i, j)| PairCurve {
            i,
            j,
            k: pair_curve(window, &locs[i], &inv_lambda[i], &locs[j], &inv_lambda[j], &index[j], r),
        })
        .collect();
    Ok(CrossK {
        r: r.to_vec(),
        curves,
        counts,
    })
}

/// First grid index whose radius covers distance `d`.
fn bin_of(r: &[f64], d: f64) -> usize {
    r.partition_point(|&x| x < d)
}

fn pair_curve(
    window: &ObservationWindow,
    from: &[Point],
    inv_from: &[f64],
    to: &[Point],
    inv_to: &[f64],
    to_index: &CellIndex,
    r: &[f64],
) -> Vec<f64> {
    let nr = r.len();
    let r_max = r[nr - 1];
    let r_max2 = r_max * r_max;
    match window.as_rect() {
        Some(b) => {
            let (ww, wh, area) = (b.width(), b.height(), b.area());
            let mut acc = vec![0.0; nr + 1];
            for (u, &iu) in from.iter().zip(inv_from) {
                for t in to_index.near(*u) {
                    let v = to[t];
                    let d2 = u.dist2(v);
                    if d2 > r_max2 {
                        continue;
                    }
                    let e = area / ((ww - (u.x - v.x).abs()) * (wh - (u.y - v.y).abs()));
                    acc[bin_of(r, d2.sqrt())] += e * iu * inv_to[t];
                }
            }
            cumulate(&mut acc);
            acc.truncate(nr);
            acc.iter().map(|s| s / area).collect()
        }
        None => {
            // numerator and denominator as difference arrays over the grid
            let mut num = vec![0.0; nr + 1];
            let mut den = vec![0.0; nr + 1];
            for (u, &iu) in from.iter().zip(inv_from) {
                let bu = window.boundary_distance(*u);
                let stop = r.partition_point(|&x| x <= bu);
                if stop == 0 {
                    continue;
                }
                den[0] += iu;
                den[stop] -= iu;
                for t in to_index.near(*u) {
                    let d2 = u.dist2(to[t]);
                    if d2 > r_max2 {
                        continue;
                    }
                    let start = bin_of(r, d2.sqrt());
                    if start < stop {
                        num[start] += iu * inv_to[t];
                        num[stop] -= iu * inv_to[t];
                    }
                }
            }
            cumulate(&mut num);
            cumulate(&mut den);
            (0..nr).map(|t| if den[t] > 0.0 { num[t] / den[t] } else { 0.0 }).collect()
        }
    }
}

fn cumulate(v: &mut [f64]) {
    for t in 1..v.len() {
        v[t] += v[t - 1];
    }
}

/// Weighted average of the `K_ij` with weights `n_i n_j`, then
/// `L = sqrt(K / pi)`.
pub fn lcross_aggregate(k: &CrossK) -> Vec<f64> {
    let mut total = vec![0.0; k.r.len()];
    let mut wsum = 0.0;
    for c in &k.curves {
        let w = (k.counts[c.i] * k.counts[c.j]) as f64;
        wsum += w;
        for (a, v) in total.iter_mut().zip(&c.k) {
            *a += w * v;
        }
    }
    if wsum > 0.0 {
        total.iter_mut().for_each(|a| *a /= wsum);
    }
    total.iter().map(|a| (a.max(0.0) / PI).sqrt()).collect()
}

/// Settings of the deviation test.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DeviationConfig {
    /// Simulations compared against the observed statistic.
    pub n_sims: usize,
    /// Separate simulations used for the null mean curve.
    pub n_mean_sims: usize,
    pub alpha: f64,
    pub r_max: f64,
    pub r_steps: usize,
    /// Rescale intensities to the observed counts of each pattern.
    pub renormalize: bool,
}

impl Default for DeviationConfig {
    fn default() -> Self {
        Self {
            n_sims: 99,
            n_mean_sims: 99,
            alpha: 0.05,
            r_max: DEFAULT_R_MAX,
            r_steps: DEFAULT_R_STEPS,
            renormalize: true,
        }
    }
}

/// Observed summary, null mean and envelopes, and the test outcome.
#[derive(Clone, Debug, Serialize)]
pub struct KEstimate {
    pub observed: CrossK,
    pub l_obs: Vec<f64>,
    pub null_mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub d_obs: f64,
    pub null_d: Vec<f64>,
    pub p_value: f64,
    pub alpha: f64,
}

impl KEstimate {
    pub fn r(&self) -> &[f64] {
        &self.observed.r
    }

    pub fn reject(&self) -> bool {
        self.p_value <= self.alpha
    }

    /// Rows `r,l_obs,null_mean,lower,upper`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "r,l_obs,null_mean,lower,upper")?;
        for t in 0..self.l_obs.len() {
            writeln!(
                w,
                "{},{},{},{},{}",
                self.observed.r[t], self.l_obs[t], self.null_mean[t], self.lower[t], self.upper[t]
            )?;
        }
        Ok(())
    }
}

/// Largest excess of `l` over `mean`.
pub fn max_deviation(l: &[f64], mean: &[f64]) -> f64 {
    l.iter().zip(mean).map(|(a, b)| a - b).fold(f64::NEG_INFINITY, f64::max)
}

/// Monte Carlo p-value `(1 + #{null >= observed}) / (m + 1)`.
pub fn monte_carlo_p_value(observed: f64, null: &[f64]) -> f64 {
    (1 + null.iter().filter(|&&d| d >= observed).count()) as f64 / (null.len() + 1) as f64
}

fn simulated_l<R: Rng + ?Sized>(
    fields: &[IntensityField],
    window: &ObservationWindow,
    r: &[f64],
    n: usize,
    renormalize: bool,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>, StatsError> {
    let seeds: Vec<u64> = (0..n).map(|_| rng.next_u64()).collect();
    seeds
        .par_iter()
        .map(|&s| {
            let mut r_s = ChaCha8Rng::seed_from_u64(s);
            let sim = simulate_poisson_fields(fields, window, &mut r_s).map_err(|e| StatsError::Invalid(e.to_string()))?;
            Ok(lcross_aggregate(&kcross_scaled(&sim, fields, r, renormalize)?))
        })
        .collect()
}

/// Tests for cross-type interaction against independent inhomogeneous
/// Poisson components with the given intensities.
///
/// The envelopes are the pointwise range of the test batch, widened where
/// needed to contain the null mean.
pub fn deviation_test<R: Rng + ?Sized>(
    pattern: &PointPattern,
    fields: &[IntensityField],
    cfg: &DeviationConfig,
    rng: &mut R,
) -> Result<KEstimate, StatsError> {
    if cfg.n_sims == 0 || cfg.n_mean_sims == 0 {
        return Err(StatsError::Invalid("at least one simulation per batch".into()));
    }
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(StatsError::Invalid(format!("alpha must lie in (0, 1), got {}", cfg.alpha)));
    }
    let r = r_grid(cfg.r_max, cfg.r_steps);
    let observed = kcross_scaled(pattern, fields, &r, cfg.renormalize)?;
    let l_obs = lcross_aggregate(&observed);
    let window = pattern.window();

    let mean_batch = simulated_l(fields, window, &r, cfg.n_mean_sims, cfg.renormalize, rng)?;
    let mut null_mean = vec![0.0; r.len()];
    for l in &mean_batch {
        null_mean.iter_mut().zip(l).for_each(|(m, v)| *m += v);
    }
    null_mean.iter_mut().for_each(|m| *m /= mean_batch.len() as f64);

    let test_batch = simulated_l(fields, window, &r, cfg.n_sims, cfg.renormalize, rng)?;
    let mut lower = null_mean.clone();
    let mut upper = null_mean.clone();
    for l in &test_batch {
        for t in 0..r.len() {
            lower[t] = lower[t].min(l[t]);
            upper[t] = upper[t].max(l[t]);
        }
    }
    let null_d: Vec<f64> = test_batch.iter().map(|l| max_deviation(l, &null_mean)).collect();
    let d_obs = max_deviation(&l_obs, &null_mean);
    let p_value = monte_carlo_p_value(d_obs, &null_d);
    Ok(KEstimate {
        observed,
        l_obs,
        null_mean,
        lower,
        upper,
        d_obs,
        null_d,
        p_value,
        alpha: cfg.alpha,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelParams, UniformDensity};
    use crate::pattern::MarkedPoint;
    use crate::synth::{simulate_csri, simulate_model};
    use proptest::prelude::*;

    fn window() -> ObservationWindow {
        ObservationWindow::square(10.0).unwrap()
    }

    fn flat(w: &ObservationWindow, v: f64) -> IntensityField {
        IntensityField::constant(w, v, 1.0).unwrap()
    }

    #[test]
    fn poisson_k_is_pi_r_squared() {
        let w = window();
        let r = r_grid(2.5, 50);
        let mut mean = vec![0.0; r.len()];
        let reps = 20;
        for s in 0..reps {
            let pat = simulate_csri(&[400, 400], &w, &mut ChaCha8Rng::seed_from_u64(s)).unwrap();
            let fields = vec![flat(&w, 4.0), flat(&w, 4.0)];
            let k = kcross_inhom(&pat, &fields, &r).unwrap();
            for c in &k.curves {
                mean.iter_mut().zip(&c.k).for_each(|(m, v)| *m += v / (2 * reps) as f64);
            }
        }
        for (t, &rt) in r.iter().enumerate().skip(10) {
            let theory = PI * rt * rt;
            assert!((mean[t] / theory - 1.0).abs() < 0.1, "r={rt}: {} vs {theory}", mean[t]);
        }
    }

    #[test]
    fn polygon_border_estimate_is_near_theory() {
        let w = ObservationWindow::polygon(vec![
            Point::new(0.0, 0.0),
            Point::new(10.0, 0.0),
            Point::new(10.0, 10.0),
            Point::new(0.0, 10.0),
        ])
        .unwrap();
        let r = r_grid(2.0, 20);
        let mut mean = vec![0.0; r.len()];
        for s in 0..20 {
            let pat = simulate_csri(&[400, 400], &w, &mut ChaCha8Rng::seed_from_u64(50 + s)).unwrap();
            let k = kcross_inhom(&pat, &[flat(&w, 4.0), flat(&w, 4.0)], &r).unwrap();
            mean.iter_mut().zip(k.curve(0, 1).unwrap()).for_each(|(m, v)| *m += v / 20.0);
        }
        for t in 5..r.len() {
            let theory = PI * r[t] * r[t];
            assert!((mean[t] / theory - 1.0).abs() < 0.1);
        }
    }

    #[test]
    fn zero_radius_gives_zero() {
        let w = window();
        let pat = simulate_csri(&[50, 50], &w, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let k = kcross_inhom(&pat, &[flat(&w, 0.5), flat(&w, 0.5)], &[0.0, 1.0]).unwrap();
        assert_eq!(k.curve(0, 1).unwrap()[0], 0.0);
    }

    #[test]
    fn single_pair_jumps_at_its_distance() {
        let w = window();
        let pat = PointPattern::new(
            vec![MarkedPoint::new(5.0, 5.0, 0), MarkedPoint::new(5.0, 6.5, 1)],
            2,
            w.clone(),
        )
        .unwrap();
        let r = [1.0, 1.49, 1.5, 2.0];
        let k = kcross_inhom(&pat, &[flat(&w, 1.0), flat(&w, 1.0)], &r).unwrap();
        let c = k.curve(0, 1).unwrap();
        assert_eq!(c[0], 0.0);
        assert_eq!(c[1], 0.0);
        // translation weight |W| / ((10 - 0)(10 - 1.5)) over |W|
        let expect = 1.0 / (10.0 * 8.5);
        assert!((c[2] - expect).abs() < 1e-12);
        assert!((c[3] - expect).abs() < 1e-12);
    }

    #[test]
    fn zero_intensity_at_point_errors() {
        let w = window();
        let pat = PointPattern::new(vec![MarkedPoint::new(1.0, 1.0, 0), MarkedPoint::new(2.0, 2.0, 1)], 2, w.clone()).unwrap();
        let err = kcross_inhom(&pat, &[flat(&w, 1.0), flat(&w, 0.0)], &[1.0]).unwrap_err();
        assert_eq!(err, StatsError::ZeroIntensity(1));
    }

    #[test]
    fn aggregate_of_equal_curves() {
        let k = CrossK {
            r: vec![1.0, 2.0],
            curves: vec![
                PairCurve { i: 0, j: 1, k: vec![PI, 4.0 * PI] },
                PairCurve { i: 1, j: 0, k: vec![PI, 4.0 * PI] },
            ],
            counts: vec![3, 7],
        };
        let l = lcross_aggregate(&k);
        assert!((l[0] - 1.0).abs() < 1e-12 && (l[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn two_types_average_both_orders() {
        let k = CrossK {
            r: vec![1.0],
            curves: vec![PairCurve { i: 0, j: 1, k: vec![2.0] }, PairCurve { i: 1, j: 0, k: vec![4.0] }],
            counts: vec![5, 2],
        };
        assert!((lcross_aggregate(&k)[0] - (3.0 / PI).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn p_value_is_rank_based() {
        let null: Vec<f64> = (0..99).map(|t| t as f64).collect();
        assert_eq!(monte_carlo_p_value(1000.0, &null), 0.01);
        assert_eq!(monte_carlo_p_value(-1.0, &null), 1.0);
        let mapped: Vec<f64> = null.iter().map(|d| d.exp()).collect();
        for obs in [3.5, 50.0, 97.2] {
            assert_eq!(monte_carlo_p_value(obs, &null), monte_carlo_p_value(obs.exp(), &mapped));
        }
    }

    fn small_cfg() -> DeviationConfig {
        DeviationConfig {
            n_sims: 39,
            n_mean_sims: 39,
            alpha: 0.05,
            r_max: 2.0,
            r_steps: 64,
            renormalize: true,
        }
    }

    #[test]
    fn envelopes_contain_mean_and_p_in_range() {
        let w = window();
        let fields = vec![flat(&w, 1.0), flat(&w, 1.5)];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pat = simulate_poisson_fields(&fields, &w, &mut rng).unwrap();
        let est = deviation_test(&pat, &fields, &small_cfg(), &mut rng).unwrap();
        for t in 0..est.l_obs.len() {
            assert!(est.lower[t] <= est.null_mean[t] && est.null_mean[t] <= est.upper[t]);
        }
        let m = 39.0;
        let scaled = est.p_value * (m + 1.0);
        assert!((scaled - scaled.round()).abs() < 1e-9 && est.p_value >= 1.0 / (m + 1.0) && est.p_value <= 1.0);
        let mut buf = Vec::new();
        est.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 65);
    }

    #[test]
    fn clustered_data_is_rejected() {
        let w = window();
        let g = UniformDensity::new(w.clone());
        let params = ModelParams::new(0.2, vec![0.1, 0.9], 120.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let sim = simulate_model(&params, &g, &w, true, &mut rng).unwrap();
        let counts = sim.pattern.counts_by_mark();
        let fields: Vec<_> = counts.iter().map(|&n| flat(&w, n as f64 / w.area())).collect();
        let est = deviation_test(&sim.pattern, &fields, &small_cfg(), &mut rng).unwrap();
        assert!(est.reject(), "p = {}", est.p_value);
    }

    #[test]
    fn renormalized_matches_plain_when_mass_equals_count() {
        let w = window();
        let pat = simulate_csri(&[30, 50], &w, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let fields = vec![flat(&w, 0.3), flat(&w, 0.5)];
        let r = r_grid(3.0, 30);
        let a = kcross_inhom(&pat, &fields, &r).unwrap();
        let b = kcross_inhom_renormalized(&pat, &fields, &r).unwrap();
        for (x, y) in a.curves.iter().zip(&b.curves) {
            for (u, v) in x.k.iter().zip(&y.k) {
                assert!((u - v).abs() < 1e-9 * u.max(1.0));
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn k_is_nondecreasing(seed in 0u64..1000, n0 in 1usize..60, n1 in 1usize..60) {
            let w = window();
            let pat = simulate_csri(&[n0, n1, 10], &w, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let f = flat(&w, 1.0);
            let k = kcross_inhom(&pat, &[f.clone(), f.clone(), f], &r_grid(4.0, 40)).unwrap();
            for c in &k.curves {
                prop_assert!(c.k.windows(2).all(|p| p[1] >= p[0]));
            }
        }
    }
}
