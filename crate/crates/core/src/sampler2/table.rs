use std::ops::Range;

use crate::error::{ModelError, SamplerError};
use crate::model::{ln_size_constant, CenterDensity, ModelParams};
use crate::pattern::{BipartiteMatching, Matching, Point, PointPattern};

/// Log-weights below this underflow to exactly zero and are not stored.
pub const MIN_LN_WEIGHT: f64 = -745.0;

/// Keeps `exp` finite for absurdly large weights.
const MAX_LN_WEIGHT: f64 = 700.0;

/// Floor for the two correction factors of `q_add`, which can turn negative
/// when a point has several heavy competitors.
const P4_FACTOR_FLOOR: f64 = 0.01;

/// Sparse red-by-blue table of pair weights `w_ij`, stored row-wise with a
/// column index. Absent entries have weight exactly zero.
#[derive(Clone, Debug)]
pub struct WeightTable {
    n_red: usize,
    n_blue: usize,
    red_index: Vec<usize>,
    blue_index: Vec<usize>,
    red_loc: Option<Vec<Point>>,
    blue_loc: Option<Vec<Point>>,
    row_start: Vec<usize>,
    edge_red: Vec<usize>,
    edge_blue: Vec<usize>,
    ln_w: Vec<f64>,
    col_edges: Vec<Vec<usize>>,
    r_max: Option<f64>,
}

impl WeightTable {
    /// Builds a table from `(red, blue, ln w)` triples. Duplicates are
    /// rejected; entries below [`MIN_LN_WEIGHT`] are dropped.
    pub fn from_log_weights(
        n_red: usize,
        n_blue: usize,
        mut entries: Vec<(usize, usize, f64)>,
    ) -> Result<Self, SamplerError> {
        for &(i, j, lw) in &entries {
            if i >= n_red || j >= n_blue {
                return Err(SamplerError::BadProposal("weight entry out of range"));
            }
            if lw.is_nan() || lw == f64::INFINITY {
                return Err(SamplerError::BadProposal("weight must be finite"));
            }
        }
        entries.retain(|e| e.2 >= MIN_LN_WEIGHT);
        entries.sort_by_key(|a| (a.0, a.1));
        if entries.windows(2).any(|p| (p[0].0, p[0].1) == (p[1].0, p[1].1)) {
            return Err(SamplerError::BadProposal("duplicate weight entry"));
        }
        let mut row_start = vec![0; n_red + 1];
        for &(i, _, _) in &entries {
            row_start[i + 1] += 1;
        }
        for i in 0..n_red {
            row_start[i + 1] += row_start[i];
        }
        let mut col_edges = vec![Vec::new(); n_blue];
        for (e, &(_, j, _)) in entries.iter().enumerate() {
            col_edges[j].push(e);
        }
        Ok(Self {
            n_red,
            n_blue,
            red_index: (0..n_red).collect(),
            blue_index: (n_red..n_red + n_blue).collect(),
            red_loc: None,
            blue_loc: None,
            row_start,
            edge_red: entries.iter().map(|e| e.0).collect(),
            edge_blue: entries.iter().map(|e| e.1).collect(),
            ln_w: entries.iter().map(|e| e.2).collect(),
            col_edges,
            r_max: None,
        })
    }

    /// Table from a dense matrix of weights; zeros are left out.
    pub fn from_dense(w: &[Vec<f64>]) -> Result<Self, SamplerError> {
        let n_red = w.len();
        let n_blue = w.first().map_or(0, Vec::len);
        let mut entries = Vec::new();
        for (i, row) in w.iter().enumerate() {
            if row.len() != n_blue {
                return Err(SamplerError::BadProposal("ragged weight matrix"));
            }
            for (j, &v) in row.iter().enumerate() {
                if !(v >= 0.0) || v.is_infinite() {
                    return Err(SamplerError::BadProposal("weights must be finite and non-negative"));
                }
                if v > 0.0 {
                    entries.push((i, j, v.ln()));
                }
            }
        }
        Self::from_log_weights(n_red, n_blue, entries)
    }

    /// Attaches pattern indices of the reds and blues, used when lifting to
    /// a [`Matching`].
    pub fn with_indices(mut self, red_index: Vec<usize>, blue_index: Vec<usize>) -> Result<Self, SamplerError> {
        if red_index.len() != self.n_red || blue_index.len() != self.n_blue {
            return Err(SamplerError::BadProposal("index map length mismatch"));
        }
        self.red_index = red_index;
        self.blue_index = blue_index;
        Ok(self)
    }

    /// Attaches point locations, needed by the tiled multiple-proposal step.
    pub fn with_locations(
        mut self,
        red_loc: Vec<Point>,
        blue_loc: Vec<Point>,
        r_max: Option<f64>,
    ) -> Result<Self, SamplerError> {
        if red_loc.len() != self.n_red || blue_loc.len() != self.n_blue {
            return Err(SamplerError::BadProposal("location list length mismatch"));
        }
        self.red_loc = Some(red_loc);
        self.blue_loc = Some(blue_loc);
        self.r_max = r_max;
        Ok(self)
    }

    pub fn n_red(&self) -> usize {
        self.n_red
    }

    pub fn n_blue(&self) -> usize {
        self.n_blue
    }

    pub fn n_edges(&self) -> usize {
        self.ln_w.len()
    }

    pub fn r_max(&self) -> Option<f64> {
        self.r_max
    }

    pub fn red_index(&self) -> &[usize] {
        &self.red_index
    }

    pub fn blue_index(&self) -> &[usize] {
        &self.blue_index
    }

    pub fn red_locations(&self) -> Option<&[Point]> {
        self.red_loc.as_deref()
    }

    pub fn blue_locations(&self) -> Option<&[Point]> {
        self.blue_loc.as_deref()
    }

    /// Edge ids of red `i`, sorted by blue index.
    pub fn row(&self, i: usize) -> Range<usize> {
        self.row_start[i]..self.row_start[i + 1]
    }

    /// Edge ids of blue `j`, sorted by red index.
    pub fn col(&self, j: usize) -> &[usize] {
        &self.col_edges[j]
    }

    pub fn endpoints(&self, e: usize) -> (usize, usize) {
        (self.edge_red[e], self.edge_blue[e])
    }

    pub fn edge_ln_weight(&self, e: usize) -> f64 {
        self.ln_w[e]
    }

    pub fn edge(&self, i: usize, j: usize) -> Option<usize> {
        let r = self.row(i);
        self.edge_blue[r.clone()]
            .binary_search(&j)
            .ok()
            .map(|k| r.start + k)
    }

    pub fn ln_weight(&self, i: usize, j: usize) -> f64 {
        self.edge(i, j).map_or(f64::NEG_INFINITY, |e| self.ln_w[e])
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.ln_weight(i, j).exp()
    }

    /// `sum of ln w` over the edges of `m` (`-inf` if an edge is absent).
    pub fn ln_weight_of(&self, m: &BipartiteMatching) -> f64 {
        m.pairs().iter().map(|&(i, j)| self.ln_weight(i, j)).sum()
    }

    /// Lifts a two-color matching to a partition of the `n` pattern points.
    pub fn to_matching(&self, m: &BipartiteMatching, n: usize) -> Matching {
        m.to_matching(n, &self.red_index, &self.blue_index)
    }

    /// Cached per-edge proposal masses for the precomputable proposal, for
    /// weights raised to `beta`.
    pub fn p4_table(&self, beta: f64) -> P4Table {
        let w: Vec<f64> = self.ln_w.iter().map(|&l| (beta * l).min(MAX_LN_WEIGHT).exp()).collect();
        let mut row_w = vec![0.0; self.n_red];
        let mut col_w = vec![0.0; self.n_blue];
        for (e, &v) in w.iter().enumerate() {
            row_w[self.edge_red[e]] += v;
            col_w[self.edge_blue[e]] += v;
        }
        let t: Vec<f64> = w
            .iter()
            .enumerate()
            .map(|(e, &v)| {
                let (i, j) = self.endpoints(e);
                (v - v.sqrt()) / (1.0 + row_w[i] + col_w[j] - v)
            })
            .collect();
        let mut row_t = vec![0.0; self.n_red];
        let mut col_t = vec![0.0; self.n_blue];
        for (e, &v) in t.iter().enumerate() {
            row_t[self.edge_red[e]] += v;
            col_t[self.edge_blue[e]] += v;
        }
        let q_add = w
            .iter()
            .enumerate()
            .map(|(e, &v)| {
                let (i, j) = self.endpoints(e);
                let red_factor = (1.0 - (row_t[i] - t[e])).max(P4_FACTOR_FLOOR);
                let blue_factor = (1.0 - (col_t[j] - t[e])).max(P4_FACTOR_FLOOR);
                v.sqrt() * red_factor * blue_factor
            })
            .collect();
        let q_rem = w.iter().map(|&v| 1.0 / v.sqrt()).collect();
        P4Table { beta, q_add, q_rem }
    }
}

/// State-independent proposal masses for adding and removing each edge.
#[derive(Clone, Debug)]
pub struct P4Table {
    pub beta: f64,
    pub q_add: Vec<f64>,
    pub q_rem: Vec<f64>,
}

/// Pair weights `w_ij` of a two-color pattern, optionally truncated to zero
/// for pairs at distance `>= r_max`.
pub fn build_weight_table(
    pattern: &PointPattern,
    params: &ModelParams,
    g: &dyn CenterDensity,
    r_max: Option<f64>,
) -> Result<WeightTable, SamplerError> {
    if pattern.k() != 2 {
        return Err(SamplerError::NotTwoColor(pattern.k()));
    }
    params.validate()?;
    if params.k() != 2 {
        return Err(ModelError::BadSizeDistribution { k: params.k() }.into());
    }
    if let Some(r) = r_max {
        if !(r > 0.0) {
            return Err(SamplerError::BadGrid(format!("r_max must be positive, got {r}")));
        }
    }
    let p1 = params.size_probs[0];
    if p1 <= 0.0 {
        return Err(ModelError::NonPositive { name: "p1", value: p1 }.into());
    }
    let reds = pattern.indices_of(0);
    let blues = pattern.indices_of(1);
    let red_loc: Vec<Point> = reds.iter().map(|&i| pattern.loc(i)).collect();
    let blue_loc: Vec<Point> = blues.iter().map(|&j| pattern.loc(j)).collect();
    let red_ln_g: Vec<f64> = red_loc.iter().map(|&p| g.ln_density(p)).collect();
    let blue_ln_g: Vec<f64> = blue_loc.iter().map(|&p| g.ln_density(p)).collect();
    let sigma = params.sigma;
    let base = 2.0 * ln_size_constant(2, 1) - ln_size_constant(2, 2) + params.size_probs[1].ln()
        - params.lambda.ln()
        - 2.0 * p1.ln()
        - 2.0 * sigma.ln();
    let scale = std::f64::consts::PI / (4.0 * sigma * sigma);
    let r2 = r_max.map(|r| r * r);
    let mut entries = Vec::new();
    if params.size_probs[1] > 0.0 {
        for (i, &a) in red_loc.iter().enumerate() {
            for (j, &b) in blue_loc.iter().enumerate() {
                let d2 = a.dist2(b);
                if r2.is_some_and(|r2| d2 >= r2) {
                    continue;
                }
                let mid = Point::new(0.5 * (a.x + b.x), 0.5 * (a.y + b.y));
                let lw = base + g.ln_density(mid) - red_ln_g[i] - blue_ln_g[j] - scale * d2;
                if lw.is_finite() {
                    entries.push((i, j, lw));
                }
            }
        }
    }
    WeightTable::from_log_weights(reds.len(), blues.len(), entries)?
        .with_indices(reds, blues)?
        .with_locations(red_loc, blue_loc, r_max)
}
