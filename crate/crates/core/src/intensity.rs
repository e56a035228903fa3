//! Gaussian kernel intensity estimates with edge correction, bandwidth
//! selection by least-squares cross-validation, and the gridded center
//! density built from them.

use std::f64::consts::{PI, SQRT_2};
use std::io::Write;

use log::warn;
use rand::{Rng, RngCore};
use rayon::prelude::*;
use statrs::function::erf::erf;

use crate::error::StatsError;
use crate::model::CenterDensity;
use crate::pattern::{ObservationWindow, Point, WindowShape};

/// Kernel mass beyond this many bandwidths is ignored.
const KERNEL_CUTOFF: f64 = 8.0;

/// Quadrature and grid spacing for bandwidth `h`.
pub fn quadrature_cell(h: f64) -> f64 {
    (h / 2.0).min(1.0)
}

fn gauss(d2: f64, h: f64) -> f64 {
    (-d2 / (2.0 * h * h)).exp() / (2.0 * PI * h * h)
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / SQRT_2))
}

/// Edge-correction mass `e_h(u)`: the share of an isotropic Gaussian kernel
/// at `u` that falls inside the window. Closed form on rectangles, scanline
/// integration on polygons, lattice quadrature on buffered polygons.
pub fn edge_mass(window: &ObservationWindow, h: f64, u: Point) -> f64 {
    if let Some(r) = window.as_rect() {
        let fx = std_normal_cdf((r.xmax - u.x) / h) - std_normal_cdf((r.xmin - u.x) / h);
        let fy = std_normal_cdf((r.ymax - u.y) / h) - std_normal_cdf((r.ymin - u.y) / h);
        return fx * fy;
    }
    match window.shape() {
        WindowShape::Polygon(v) if window.buffer() == 0.0 => scanline_mass(v, h, u),
        _ => lattice_mass(window, h, u),
    }
}

const GL_NODES: [(f64, f64); 4] = [
    (-0.861_136_311_594_052_6, 0.347_854_845_137_453_8),
    (-0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
    (0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
    (0.861_136_311_594_052_6, 0.347_854_845_137_453_8),
];

/// Integrates the kernel over a polygon row by row: exact in x, Gauss-Legendre
/// in y between vertex ordinates, where the row mass is smooth.
fn scanline_mass(v: &[Point], h: f64, u: Point) -> f64 {
    let lo = u.y - KERNEL_CUTOFF * h;
    let hi = u.y + KERNEL_CUTOFF * h;
    let mut breaks: Vec<f64> = v.iter().map(|p| p.y).filter(|&y| y > lo && y < hi).collect();
    breaks.extend((0..=(2.0 * KERNEL_CUTOFF) as usize).map(|t| lo + t as f64 * h));
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let mut crossings = Vec::new();
    let mut total = 0.0;
    for w in breaks.windows(2) {
        let (mid, half) = (0.5 * (w[0] + w[1]), 0.5 * (w[1] - w[0]));
        for &(xi, wt) in &GL_NODES {
            let y = mid + half * xi;
            crossings.clear();
            let mut j = v.len() - 1;
            for i in 0..v.len() {
                let (a, b) = (v[i], v[j]);
                if (a.y > y) != (b.y > y) {
                    crossings.push((b.x - a.x) * (y - a.y) / (b.y - a.y) + a.x);
                }
                j = i;
            }
            crossings.sort_by(f64::total_cmp);
            let row: f64 = crossings
                .chunks_exact(2)
                .map(|c| std_normal_cdf((c[1] - u.x) / h) - std_normal_cdf((c[0] - u.x) / h))
                .sum();
            let z = (y - u.y) / h;
            total += wt * half * row * (-0.5 * z * z).exp() / ((2.0 * PI).sqrt() * h);
        }
    }
    total
}

/// Midpoint lattice quadrature for windows without a closed-form row mass.
fn lattice_mass(window: &ObservationWindow, h: f64, u: Point) -> f64 {
    let cell = quadrature_cell(h) / 4.0;
    let half = (KERNEL_CUTOFF * h / cell).ceil() as i64;
    let mut s = 0.0;
    for a in -half..half {
        for b in -half..half {
            let dx = (a as f64 + 0.5) * cell;
            let dy = (b as f64 + 0.5) * cell;
            let v = Point::new(u.x + dx, u.y + dy);
            if window.contains(v) {
                s += gauss(dx * dx + dy * dy, h);
            }
        }
    }
    s * cell * cell
}

/// Raw kernel sum `sum_i phi_h(u - x_i)`, optionally skipping one point.
fn kernel_sum(points: &[Point], h: f64, u: Point, skip: Option<usize>) -> f64 {
    let cut2 = (KERNEL_CUTOFF * h).powi(2);
    points
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != skip)
        .map(|(_, &p)| {
            let d2 = u.dist2(p);
            if d2 > cut2 {
                0.0
            } else {
                gauss(d2, h)
            }
        })
        .sum()
}

/// Edge-corrected kernel estimate at one location.
pub fn kde_at(points: &[Point], window: &ObservationWindow, h: f64, u: Point) -> Result<f64, StatsError> {
    check_bandwidth(h)?;
    Ok(kernel_sum(points, h, u, None) / edge_mass(window, h, u))
}

fn check_bandwidth(h: f64) -> Result<(), StatsError> {
    if h > 0.0 && h.is_finite() {
        Ok(())
    } else {
        Err(StatsError::BadBandwidth(h))
    }
}

/// Values on a regular grid of cell centers covering the window's bounding
/// box. Values are kept for every cell; `inside` marks the cells whose
/// center lies in the window, which are the ones integrated over.
#[derive(Clone, Debug)]
pub struct IntensityField {
    window: ObservationWindow,
    x0: f64,
    y0: f64,
    dx: f64,
    dy: f64,
    nx: usize,
    ny: usize,
    values: Vec<f64>,
    inside: Vec<bool>,
    bandwidth: Option<f64>,
}

impl IntensityField {
    /// Evaluates `f` at the centers of a grid with cells of side at most
    /// `cell`.
    pub fn from_fn(
        window: &ObservationWindow,
        cell: f64,
        f: impl Fn(Point) -> f64 + Sync,
    ) -> Result<Self, StatsError> {
        if !(cell > 0.0 && cell.is_finite()) {
            return Err(StatsError::Invalid(format!("cell size must be positive, got {cell}")));
        }
        let b = window.bounding_box();
        let nx = ((b.width() / cell).ceil() as usize).max(1);
        let ny = ((b.height() / cell).ceil() as usize).max(1);
        let dx = b.width() / nx as f64;
        let dy = b.height() / ny as f64;
        let centers: Vec<Point> = (0..ny)
            .flat_map(|r| (0..nx).map(move |c| Point::new(b.xmin + (c as f64 + 0.5) * dx, b.ymin + (r as f64 + 0.5) * dy)))
            .collect();
        let values: Vec<f64> = centers.par_iter().map(|&p| f(p)).collect();
        let inside = centers.iter().map(|&p| window.contains(p)).collect();
        Ok(Self {
            window: window.clone(),
            x0: b.xmin,
            y0: b.ymin,
            dx,
            dy,
            nx,
            ny,
            values,
            inside,
            bandwidth: None,
        })
    }

    /// A constant field.
    pub fn constant(window: &ObservationWindow, value: f64, cell: f64) -> Result<Self, StatsError> {
        Self::from_fn(window, cell, |_| value)
    }

    pub fn window(&self) -> &ObservationWindow {
        &self.window
    }

    pub fn bandwidth(&self) -> Option<f64> {
        self.bandwidth
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn cell_area(&self) -> f64 {
        self.dx * self.dy
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn center(&self, col: usize, row: usize) -> Point {
        Point::new(self.x0 + (col as f64 + 0.5) * self.dx, self.y0 + (row as f64 + 0.5) * self.dy)
    }

    pub fn is_inside(&self, col: usize, row: usize) -> bool {
        self.inside[row * self.nx + col]
    }

    /// `integral over W` by the midpoint rule.
    pub fn total_mass(&self) -> f64 {
        self.values
            .iter()
            .zip(&self.inside)
            .filter(|(_, &ins)| ins)
            .map(|(v, _)| v)
            .sum::<f64>()
            * self.cell_area()
    }

    /// Integral of the squared field over the window.
    pub fn integral_of_square(&self) -> f64 {
        self.values
            .iter()
            .zip(&self.inside)
            .filter(|(_, &ins)| ins)
            .map(|(v, _)| v * v)
            .sum::<f64>()
            * self.cell_area()
    }

    pub fn max_value(&self) -> f64 {
        self.values
            .iter()
            .zip(&self.inside)
            .filter(|(_, &ins)| ins)
            .map(|(v, _)| *v)
            .fold(0.0, f64::max)
    }

    /// Largest value on the whole grid, which bounds [`Self::value_at`].
    pub fn sup_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Bilinear interpolation between cell centers, held at the edge value
    /// beyond the outer centers and clamped at zero.
    pub fn value_at(&self, p: Point) -> f64 {
        let fx = ((p.x - self.x0) / self.dx - 0.5).clamp(0.0, (self.nx - 1) as f64);
        let fy = ((p.y - self.y0) / self.dy - 0.5).clamp(0.0, (self.ny - 1) as f64);
        let c0 = (fx.floor() as usize).min(self.nx.saturating_sub(2));
        let r0 = (fy.floor() as usize).min(self.ny.saturating_sub(2));
        let c1 = (c0 + 1).min(self.nx - 1);
        let r1 = (r0 + 1).min(self.ny - 1);
        let tx = fx - c0 as f64;
        let ty = fy - r0 as f64;
        let v = |c: usize, r: usize| self.values[r * self.nx + c];
        let top = v(c0, r0) * (1.0 - tx) + v(c1, r0) * tx;
        let bottom = v(c0, r1) * (1.0 - tx) + v(c1, r1) * tx;
        (top * (1.0 - ty) + bottom * ty).max(0.0)
    }

    /// Same field with every value scaled by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= factor);
        out
    }

    /// Zeroes the cells whose value falls below `threshold` and drops them
    /// from the integration region.
    pub fn cropped(&self, threshold: f64) -> Self {
        let mut out = self.clone();
        for (v, ins) in out.values.iter_mut().zip(out.inside.iter_mut()) {
            if *v < threshold {
                *v = 0.0;
                *ins = false;
            }
        }
        out
    }

    /// `x,y,value` rows for the cells inside the window.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "x,y,value")?;
        for r in 0..self.ny {
            for c in 0..self.nx {
                if self.is_inside(c, r) {
                    let p = self.center(c, r);
                    writeln!(w, "{},{},{}", p.x, p.y, self.values[r * self.nx + c])?;
                }
            }
        }
        Ok(())
    }
}

/// Edge-corrected Gaussian kernel intensity of `points` on a grid of cell
/// side `min(h/2, 1)`.
pub fn kde_intensity(points: &[Point], window: &ObservationWindow, h: f64) -> Result<IntensityField, StatsError> {
    check_bandwidth(h)?;
    if points.is_empty() {
        return Err(StatsError::Empty);
    }
    let mut f = IntensityField::from_fn(window, quadrature_cell(h), |u| {
        kernel_sum(points, h, u, None) / edge_mass(window, h, u)
    })?;
    f.bandwidth = Some(h);
    Ok(f)
}

/// Least-squares cross-validation score
/// `integral of lambda^2 - 2 sum_i lambda_{-i}(x_i)`.
pub fn lscv_score(points: &[Point], window: &ObservationWindow, h: f64) -> Result<f64, StatsError> {
    let field = kde_intensity(points, window, h)?;
    let loo: f64 = points
        .par_iter()
        .enumerate()
        .map(|(i, &p)| kernel_sum(points, h, p, Some(i)) / edge_mass(window, h, p))
        .sum();
    Ok(field.integral_of_square() - 2.0 * loo)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LscvResult {
    pub bandwidth: f64,
    pub grid: Vec<f64>,
    pub scores: Vec<f64>,
}

/// Bandwidth minimizing [`lscv_score`] over `grid`.
pub fn lscv_bandwidth(points: &[Point], window: &ObservationWindow, grid: &[f64]) -> Result<LscvResult, StatsError> {
    if grid.is_empty() || points.is_empty() {
        return Err(StatsError::Empty);
    }
    let scores = grid
        .iter()
        .map(|&h| lscv_score(points, window, h))
        .collect::<Result<Vec<_>, _>>()?;
    let best = (0..grid.len())
        .filter(|&t| scores[t].is_finite())
        .min_by(|&a, &b| scores[a].total_cmp(&scores[b]))
        .unwrap_or(0);
    if grid.len() > 1 && (best == 0 || best == grid.len() - 1) {
        warn!("cross-validated bandwidth {} sits on the edge of the search grid", grid[best]);
    }
    Ok(LscvResult {
        bandwidth: grid[best],
        grid: grid.to_vec(),
        scores,
    })
}

/// `n` bandwidths spaced geometrically between `lo` and `hi`.
pub fn bandwidth_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![lo];
    }
    let r = (hi / lo).powf(1.0 / (n - 1) as f64);
    (0..n).map(|t| lo * r.powi(t as i32)).collect()
}

/// A probability density on the window given by a normalized field.
#[derive(Clone, Debug)]
pub struct GridDensity {
    field: IntensityField,
    floor: f64,
    /// Cumulative cell masses over inside cells, for sampling.
    cumulative: Vec<(usize, f64)>,
}

/// Relative floor that keeps `ln g` finite far from the data.
const DENSITY_FLOOR: f64 = 1e-9;

/// Divides the field by its total mass.
pub fn normalize_to_density(field: &IntensityField) -> Result<GridDensity, StatsError> {
    let mass = field.total_mass();
    if !(mass > 0.0 && mass.is_finite()) {
        return Err(StatsError::Invalid("field has zero total mass".into()));
    }
    let field = field.scaled(1.0 / mass);
    let mut cumulative = Vec::new();
    let mut acc = 0.0;
    for (t, (&v, &ins)) in field.values.iter().zip(&field.inside).enumerate() {
        if ins && v > 0.0 {
            acc += v;
            cumulative.push((t, acc));
        }
    }
    let floor = field.max_value() * DENSITY_FLOOR;
    Ok(GridDensity {
        field,
        floor,
        cumulative,
    })
}

impl GridDensity {
    pub fn field(&self) -> &IntensityField {
        &self.field
    }
}

impl CenterDensity for GridDensity {
    fn density(&self, p: Point) -> f64 {
        self.field.value_at(p).max(self.floor)
    }

    fn sample(&self, rng: &mut dyn RngCore) -> Point {
        let total = self.cumulative.last().map_or(0.0, |c| c.1);
        let f = &self.field;
        loop {
            let u = rng.random::<f64>() * total;
            let k = self.cumulative.partition_point(|c| c.1 <= u).min(self.cumulative.len() - 1);
            let cell = self.cumulative[k].0;
            let (c, r) = (cell % f.nx, cell / f.nx);
            let p = Point::new(
                f.x0 + (c as f64 + rng.random::<f64>()) * f.dx,
                f.y0 + (r as f64 + rng.random::<f64>()) * f.dy,
            );
            if f.window.contains(p) {
                return p;
            }
        }
    }
}
