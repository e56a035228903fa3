//! Forward simulators for the clustering model and for independent Poisson
//! null patterns.

use std::f64::consts::PI;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, RngCore};
use rand_distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Normal, Poisson};

use crate::error::{ModelError, PatternError};
use crate::intensity::IntensityField;
use crate::model::{CenterDensity, ModelParams, UniformDensity};
use crate::pattern::{MarkedPoint, Matching, ObservationWindow, Point, PointPattern};

/// A simulated pattern with its true partition. The centers are latent and
/// kept apart from the data.
#[derive(Clone, Debug)]
pub struct SimulatedPattern {
    pub pattern: PointPattern,
    pub truth: Matching,
    /// Center of each cluster of `truth`, in the order of `truth.edges()`
    /// followed by the singletons in index order.
    pub centers: Vec<Point>,
}

/// Draws from the clustering model: a Poisson number of clusters with sizes
/// from the size distribution, centers from `g`, mean-zero Gaussian
/// displacements of variance `sigma^2 / pi` per axis, and marks a uniform
/// subset of the colors.
///
/// Points outside the window are kept unless `crop` is set.
pub fn simulate_model<R: Rng + ?Sized>(
    params: &ModelParams,
    g: &dyn CenterDensity,
    window: &ObservationWindow,
    crop: bool,
    rng: &mut R,
) -> Result<SimulatedPattern, ModelError> {
    params.validate()?;
    let k = params.k();
    let n_clusters = poisson(params.lambda, rng);
    let sizes = WeightedIndex::new(&params.size_probs).map_err(|_| ModelError::BadSizeDistribution { k })?;
    let disp = Normal::new(0.0, params.sigma / PI.sqrt()).expect("finite sigma");
    let colors: Vec<usize> = (0..k).collect();

    let mut clusters: Vec<(Point, Vec<MarkedPoint>)> = Vec::with_capacity(n_clusters);
    for _ in 0..n_clusters {
        let s = sizes.sample(rng) + 1;
        let z = g.sample(&mut RngAdapter(rng));
        let w: Vec<(f64, f64)> = (0..s).map(|_| (disp.sample(rng), disp.sample(rng))).collect();
        let mx = w.iter().map(|v| v.0).sum::<f64>() / s as f64;
        let my = w.iter().map(|v| v.1).sum::<f64>() / s as f64;
        let marks: Vec<usize> = colors.choose_multiple(rng, s).copied().collect();
        let members = w
            .iter()
            .zip(marks)
            .map(|(&(dx, dy), m)| MarkedPoint::new(z.x + dx - mx, z.y + dy - my, m))
            .filter(|p| !crop || window.contains(p.loc))
            .collect();
        clusters.push((z, members));
    }

    // shuffle so that point order carries no cluster information
    let total: usize = clusters.iter().map(|c| c.1.len()).sum();
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(rng);
    let mut points = vec![MarkedPoint::new(0.0, 0.0, 0); total];
    let mut edges = Vec::new();
    let mut centers = Vec::new();
    let mut singleton_centers = Vec::new();
    let mut next = 0;
    for (z, members) in clusters {
        let mut idx = Vec::with_capacity(members.len());
        for p in members {
            points[order[next]] = p;
            idx.push(order[next]);
            next += 1;
        }
        match idx.len() {
            0 => {}
            1 => singleton_centers.push((idx[0], z)),
            _ => {
                idx.sort_unstable();
                edges.push((idx, z));
            }
        }
    }
    edges.sort_by_key(|e| e.0[0]);
    singleton_centers.sort_by_key(|c| c.0);
    centers.extend(edges.iter().map(|e| e.1));
    centers.extend(singleton_centers.iter().map(|c| c.1));

    let marks: Vec<usize> = points.iter().map(|p| p.mark).collect();
    let truth = Matching::from_edges(&marks, edges.into_iter().map(|e| e.0))?;
    let pattern = PointPattern::new(points, k, window.clone())?;
    Ok(SimulatedPattern {
        pattern,
        truth,
        centers,
    })
}

/// Independent uniform components with fixed counts per color.
pub fn simulate_csri<R: Rng + ?Sized>(
    counts: &[usize],
    window: &ObservationWindow,
    rng: &mut R,
) -> Result<PointPattern, PatternError> {
    let g = UniformDensity::new(window.clone());
    let mut points = Vec::with_capacity(counts.iter().sum());
    for (mark, &n) in counts.iter().enumerate() {
        for _ in 0..n {
            let p = g.sample(&mut RngAdapter(rng));
            points.push(MarkedPoint::new(p.x, p.y, mark));
        }
    }
    PointPattern::new(points, counts.len().max(1), window.clone())
}

/// Independent inhomogeneous Poisson components, one per field, by thinning
/// a homogeneous process on the bounding box.
pub fn simulate_poisson_fields<R: Rng + ?Sized>(
    fields: &[IntensityField],
    window: &ObservationWindow,
    rng: &mut R,
) -> Result<PointPattern, PatternError> {
    let b = window.bounding_box();
    let mut points = Vec::new();
    for (mark, f) in fields.iter().enumerate() {
        let top = f.sup_value();
        if !(top > 0.0) {
            continue;
        }
        let n = poisson(top * b.area(), rng);
        for _ in 0..n {
            let p = Point::new(
                b.xmin + rng.random::<f64>() * b.width(),
                b.ymin + rng.random::<f64>() * b.height(),
            );
            if window.contains(p) && rng.random::<f64>() * top < f.value_at(p) {
                points.push(MarkedPoint::new(p.x, p.y, mark));
            }
        }
    }
    PointPattern::new(points, fields.len().max(1), window.clone())
}

fn poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> usize {
    if mean > 0.0 {
        Poisson::new(mean).expect("positive finite mean").sample(rng) as usize
    } else {
        0
    }
}

/// Lets a generic rng drive `&mut dyn RngCore` consumers.
struct RngAdapter<'a, R: ?Sized>(&'a mut R);

impl<R: Rng + ?Sized> RngCore for RngAdapter<'_, R> {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }
    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.0.fill_bytes(dst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::log_posterior_partition;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn window() -> ObservationWindow {
        ObservationWindow::square(10.0).unwrap()
    }

    #[test]
    fn pair_distance_mean_is_sigma() {
        let w = window();
        let g = UniformDensity::new(w.clone());
        let params = ModelParams::new(0.7, vec![0.0, 1.0], 50_000.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut sum = 0.0;
        let mut n = 0usize;
        while n < 1_000_000 {
            let sim = simulate_model(&params, &g, &w, false, &mut rng).unwrap();
            for e in sim.truth.edges() {
                sum += sim.pattern.loc(e[0]).dist(sim.pattern.loc(e[1]));
                n += 1;
            }
        }
        let mean = sum / n as f64;
        assert!((mean / 0.7 - 1.0).abs() < 0.01, "{mean}");
    }

    #[test]
    fn tiny_sigma_collapses_clusters() {
        let w = window();
        let g = UniformDensity::new(w.clone());
        let params = ModelParams::new(1e-12, vec![0.0, 0.0, 1.0], 20.0).unwrap();
        let sim = simulate_model(&params, &g, &w, false, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        for (e, z) in sim.truth.edges().iter().zip(&sim.centers) {
            assert_eq!(e.len(), 3);
            for &i in e {
                assert!(sim.pattern.loc(i).dist(*z) < 1e-9);
            }
        }
    }

    #[test]
    fn size_frequencies_match() {
        let w = window();
        let g = UniformDensity::new(w.clone());
        let probs = vec![0.5, 0.2, 0.3];
        let params = ModelParams::new(0.3, probs.clone(), 100_000.0).unwrap();
        let sim = simulate_model(&params, &g, &w, false, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let counts = crate::pattern::cluster_size_counts(&sim.truth, 3).clusters;
        let total: usize = counts.iter().sum();
        assert!(total > 99_000);
        let chi2: f64 = counts
            .iter()
            .zip(&probs)
            .map(|(&o, &p)| {
                let e = p * total as f64;
                (o as f64 - e).powi(2) / e
            })
            .sum();
        let pval = 1.0 - ChiSquared::new(2.0).unwrap().cdf(chi2);
        assert!(pval > 0.001, "chi2 {chi2}");
    }

    #[test]
    fn marks_within_clusters_are_distinct() {
        let w = window();
        let g = UniformDensity::new(w.clone());
        let params = ModelParams::new(0.5, vec![0.2, 0.3, 0.5], 200.0).unwrap();
        let sim = simulate_model(&params, &g, &w, false, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        sim.truth.validate(&sim.pattern.marks()).unwrap();
        assert_eq!(sim.centers.len(), sim.truth.n_clusters());
        let lp = log_posterior_partition(&sim.pattern, &sim.truth, &params, &g);
        assert!(lp.is_finite());
    }

    #[test]
    fn crop_keeps_points_inside() {
        let w = window();
        let g = UniformDensity::new(w.clone());
        let params = ModelParams::new(3.0, vec![0.0, 1.0], 300.0).unwrap();
        let sim = simulate_model(&params, &g, &w, true, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert!(sim.pattern.points().iter().all(|p| w.contains(p.loc)));
        let uncropped = simulate_model(&params, &g, &w, false, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert!(uncropped.pattern.points().iter().any(|p| !w.contains(p.loc)));
    }

    #[test]
    fn csri_quadrats_are_flat() {
        let w = window();
        let pat = simulate_csri(&[5000, 5000], &w, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        let mut q = [0usize; 25];
        for p in pat.points() {
            let c = ((p.loc.x / 2.0) as usize).min(4) + 5 * ((p.loc.y / 2.0) as usize).min(4);
            q[c] += 1;
        }
        let e = 10_000.0 / 25.0;
        let chi2: f64 = q.iter().map(|&o| (o as f64 - e).powi(2) / e).sum();
        let pval = 1.0 - ChiSquared::new(24.0).unwrap().cdf(chi2);
        assert!(pval > 0.001, "chi2 {chi2}");
        assert_eq!(pat.counts_by_mark(), vec![5000, 5000]);
    }

    #[test]
    fn zero_types_is_empty() {
        let pat = simulate_csri(&[], &window(), &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert!(pat.is_empty());
    }

    #[test]
    fn poisson_field_counts() {
        let w = window();
        let f = IntensityField::from_fn(&w, 0.5, |p| 0.5 + p.x / 10.0).unwrap();
        let expected = f.total_mass();
        let zero = IntensityField::constant(&w, 0.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let reps = 1000;
        let mut n = 0;
        for _ in 0..reps {
            let pat = simulate_poisson_fields(&[f.clone(), zero.clone()], &w, &mut rng).unwrap();
            assert_eq!(pat.counts_by_mark()[1], 0);
            n += pat.len();
        }
        let mean = n as f64 / reps as f64;
        assert!((mean / expected - 1.0).abs() < 0.02, "{mean} vs {expected}");
    }
}
