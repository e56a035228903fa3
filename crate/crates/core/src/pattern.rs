//! Marked planar point patterns, observation windows and matchings in
//! complete k-partite hypergraphs.
//!
//! Points are identified by their index in [`PointPattern::points`]; two
//! points may share coordinates. Marks are stored zero-based (`0..k`).

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::PatternError;

/// Planar location in kilometres.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist2(self, other: Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    pub fn dist(self, other: Point) -> f64 {
        self.dist2(other).sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkedPoint {
    pub loc: Point,
    /// Zero-based color index.
    pub mark: usize,
}

impl MarkedPoint {
    pub fn new(x: f64, y: f64, mark: usize) -> Self {
        Self {
            loc: Point::new(x, y),
            mark,
        }
    }
}

/// Axis-aligned rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub xmin: f64,
    pub xmax: f64,
    pub ymin: f64,
    pub ymax: f64,
}

impl Rect {
    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.xmin && p.x <= self.xmax && p.y >= self.ymin && p.y <= self.ymax
    }

    pub fn grow(&self, by: f64) -> Rect {
        Rect {
            xmin: self.xmin - by,
            xmax: self.xmax + by,
            ymin: self.ymin - by,
            ymax: self.ymax + by,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum WindowShape {
    Rect(Rect),
    /// Simple polygon, vertices in order (either orientation), not closed.
    Polygon(Vec<Point>),
}

/// The region `W` in which the pattern was observed, optionally dilated by a
/// buffer zone.
///
/// Rectangles absorb the buffer exactly. For polygons membership is exact
/// (inside, or within `buffer` of the boundary) while the area uses the
/// Steiner formula, which is exact for convex polygons.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationWindow {
    shape: WindowShape,
    buffer: f64,
}

impl ObservationWindow {
    pub fn rect(xmin: f64, xmax: f64, ymin: f64, ymax: f64) -> Result<Self, PatternError> {
        let r = Rect {
            xmin,
            xmax,
            ymin,
            ymax,
        };
        if !(r.width() > 0.0 && r.height() > 0.0) || !r.area().is_finite() {
            return Err(PatternError::DegenerateWindow);
        }
        Ok(Self {
            shape: WindowShape::Rect(r),
            buffer: 0.0,
        })
    }

    pub fn square(side: f64) -> Result<Self, PatternError> {
        Self::rect(0.0, side, 0.0, side)
    }

    pub fn polygon(vertices: Vec<Point>) -> Result<Self, PatternError> {
        if vertices.len() < 3 || vertices.iter().any(|p| !p.is_finite()) {
            return Err(PatternError::DegenerateWindow);
        }
        let w = Self {
            shape: WindowShape::Polygon(vertices),
            buffer: 0.0,
        };
        if !(w.polygon_area() > 0.0) {
            return Err(PatternError::DegenerateWindow);
        }
        Ok(w)
    }

    /// Dilates the window by `buffer` km.
    pub fn with_buffer(mut self, buffer: f64) -> Result<Self, PatternError> {
        if !(buffer >= 0.0) || !buffer.is_finite() {
            return Err(PatternError::NegativeBuffer(buffer));
        }
        match &mut self.shape {
            WindowShape::Rect(r) => *r = r.grow(buffer),
            WindowShape::Polygon(_) => self.buffer += buffer,
        }
        Ok(self)
    }

    pub fn shape(&self) -> &WindowShape {
        &self.shape
    }

    pub fn buffer(&self) -> f64 {
        self.buffer
    }

    /// Returns the rectangle when the window is rectangular.
    pub fn as_rect(&self) -> Option<Rect> {
        match &self.shape {
            WindowShape::Rect(r) => Some(*r),
            WindowShape::Polygon(_) => None,
        }
    }

    pub fn bounding_box(&self) -> Rect {
        match &self.shape {
            WindowShape::Rect(r) => *r,
            WindowShape::Polygon(v) => {
                let mut b = Rect {
                    xmin: f64::INFINITY,
                    xmax: f64::NEG_INFINITY,
                    ymin: f64::INFINITY,
                    ymax: f64::NEG_INFINITY,
                };
                for p in v {
                    b.xmin = b.xmin.min(p.x);
                    b.xmax = b.xmax.max(p.x);
                    b.ymin = b.ymin.min(p.y);
                    b.ymax = b.ymax.max(p.y);
                }
                b.grow(self.buffer)
            }
        }
    }

    fn polygon_area(&self) -> f64 {
        match &self.shape {
            WindowShape::Rect(r) => r.area(),
            WindowShape::Polygon(v) => {
                let mut a = 0.0;
                for (k, p) in v.iter().enumerate() {
                    let q = v[(k + 1) % v.len()];
                    a += p.x * q.y - q.x * p.y;
                }
                0.5 * a.abs()
            }
        }
    }

    fn perimeter(&self) -> f64 {
        match &self.shape {
            WindowShape::Rect(r) => 2.0 * (r.width() + r.height()),
            WindowShape::Polygon(v) => v
                .iter()
                .enumerate()
                .map(|(k, p)| p.dist(v[(k + 1) % v.len()]))
                .sum(),
        }
    }

    pub fn area(&self) -> f64 {
        let b = self.buffer;
        self.polygon_area() + self.perimeter() * b + std::f64::consts::PI * b * b
    }

    fn polygon_contains(v: &[Point], p: Point) -> bool {
        let mut inside = false;
        let mut j = v.len() - 1;
        for i in 0..v.len() {
            let (a, b) = (v[i], v[j]);
            if (a.y > p.y) != (b.y > p.y) {
                let x = (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x;
                if p.x < x {
                    inside = !inside;
                }
            }
            j = i;
        }
        inside
    }

    fn edges_distance(v: &[Point], p: Point) -> f64 {
        let mut best = f64::INFINITY;
        for (k, a) in v.iter().enumerate() {
            best = best.min(segment_distance(*a, v[(k + 1) % v.len()], p));
        }
        best
    }

    pub fn contains(&self, p: Point) -> bool {
        match &self.shape {
            WindowShape::Rect(r) => r.contains(p),
            WindowShape::Polygon(v) => {
                Self::polygon_contains(v, p)
                    || (self.buffer > 0.0 && Self::edges_distance(v, p) <= self.buffer)
            }
        }
    }

    /// Distance from an interior point to the window boundary (0 outside).
    pub fn boundary_distance(&self, p: Point) -> f64 {
        if !self.contains(p) {
            return 0.0;
        }
        match &self.shape {
            WindowShape::Rect(r) => (p.x - r.xmin)
                .min(r.xmax - p.x)
                .min(p.y - r.ymin)
                .min(r.ymax - p.y),
            WindowShape::Polygon(v) => {
                let d = Self::edges_distance(v, p);
                if Self::polygon_contains(v, p) {
                    d + self.buffer
                } else {
                    self.buffer - d
                }
            }
        }
    }
}

fn segment_distance(a: Point, b: Point, p: Point) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    p.dist(Point::new(a.x + t * dx, a.y + t * dy))
}

/// A k-type marked point pattern together with its observation window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointPattern {
    points: Vec<MarkedPoint>,
    k: usize,
    window: ObservationWindow,
}

impl PointPattern {
    pub fn new(
        points: Vec<MarkedPoint>,
        k: usize,
        window: ObservationWindow,
    ) -> Result<Self, PatternError> {
        if k == 0 {
            return Err(PatternError::NoColors);
        }
        for (i, p) in points.iter().enumerate() {
            if p.mark >= k {
                return Err(PatternError::MarkOutOfRange {
                    index: i,
                    mark: p.mark,
                    k,
                });
            }
            if !p.loc.is_finite() {
                return Err(PatternError::NonFinite(i));
            }
        }
        Ok(Self { points, k, window })
    }

    pub fn points(&self) -> &[MarkedPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn window(&self) -> &ObservationWindow {
        &self.window
    }

    pub fn loc(&self, i: usize) -> Point {
        self.points[i].loc
    }

    pub fn mark(&self, i: usize) -> usize {
        self.points[i].mark
    }

    pub fn marks(&self) -> Vec<usize> {
        self.points.iter().map(|p| p.mark).collect()
    }

    /// Number of points of each color.
    pub fn counts_by_mark(&self) -> Vec<usize> {
        let mut c = vec![0; self.k];
        for p in &self.points {
            c[p.mark] += 1;
        }
        c
    }

    /// Indices of the points with the given mark, in increasing order.
    pub fn indices_of(&self, mark: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.points[i].mark == mark).collect()
    }
}

/// Size, barycenter and scatter `sum |x - xbar|^2` of one cluster.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub size: usize,
    pub centroid: Point,
    pub scatter: f64,
}

impl ClusterSummary {
    pub fn singleton(p: Point) -> Self {
        Self {
            size: 1,
            centroid: p,
            scatter: 0.0,
        }
    }

    /// Two-pass computation from raw locations. Panics on an empty slice.
    pub fn from_points<I>(pts: I) -> Self
    where
        I: IntoIterator<Item = Point>,
        I::IntoIter: Clone,
    {
        let it = pts.into_iter();
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
        for p in it.clone() {
            sx += p.x;
            sy += p.y;
            n += 1;
        }
        assert!(n > 0, "cluster summary of an empty set");
        let c = Point::new(sx / n as f64, sy / n as f64);
        let scatter = it.map(|p| p.dist2(c)).sum();
        Self {
            size: n,
            centroid: c,
            scatter,
        }
    }

    pub fn of_indices(pattern: &PointPattern, idx: &[usize]) -> Self {
        Self::from_points(idx.iter().map(|&i| pattern.loc(i)))
    }

    /// Summary of the union of two disjoint clusters (parallel-axis rule).
    pub fn merge(&self, other: &ClusterSummary) -> ClusterSummary {
        let (a, b) = (self.size as f64, other.size as f64);
        let n = a + b;
        let c = Point::new(
            (a * self.centroid.x + b * other.centroid.x) / n,
            (a * self.centroid.y + b * other.centroid.y) / n,
        );
        ClusterSummary {
            size: self.size + other.size,
            centroid: c,
            scatter: self.scatter
                + other.scatter
                + a * b / n * self.centroid.dist2(other.centroid),
        }
    }
}

/// A partition of the points into clusters with pairwise distinct marks,
/// stored as a partial matching in the complete k-partite hypergraph:
/// hyperedges hold the clusters of size at least two, every other point is a
/// singleton.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Matching {
    edge_of: Vec<Option<usize>>,
    edges: Vec<Vec<usize>>,
}

impl Matching {
    /// All points singletons.
    pub fn empty(n: usize) -> Self {
        Self {
            edge_of: vec![None; n],
            edges: Vec::new(),
        }
    }

    /// Builds a matching from hyperedges, validating disjointness and mark
    /// distinctness. Singleton "edges" are accepted and ignored.
    pub fn from_edges(
        marks: &[usize],
        edges: impl IntoIterator<Item = Vec<usize>>,
    ) -> Result<Self, PatternError> {
        let mut m = Self::empty(marks.len());
        for mut e in edges {
            e.sort_unstable();
            e.dedup();
            if e.len() < 2 {
                if let Some(&i) = e.first() {
                    if i >= marks.len() {
                        return Err(PatternError::IndexOutOfRange(i));
                    }
                }
                continue;
            }
            for &i in &e {
                if i >= marks.len() {
                    return Err(PatternError::IndexOutOfRange(i));
                }
                if m.edge_of[i].is_some() {
                    return Err(PatternError::OverlappingEdges(i));
                }
            }
            check_marks(marks, &e)?;
            let id = m.edges.len();
            for &i in &e {
                m.edge_of[i] = Some(id);
            }
            m.edges.push(e);
        }
        m.canonicalize();
        Ok(m)
    }

    /// Builds a matching from one cluster label per point.
    pub fn from_labels(marks: &[usize], labels: &[usize]) -> Result<Self, PatternError> {
        if labels.len() != marks.len() {
            return Err(PatternError::LengthMismatch {
                expected: marks.len(),
                got: labels.len(),
            });
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &l) in labels.iter().enumerate() {
            groups.entry(l).or_default().push(i);
        }
        Self::from_edges(marks, groups.into_values())
    }

    fn canonicalize(&mut self) {
        self.edges.sort_unstable_by_key(|e| e[0]);
        for (id, e) in self.edges.iter().enumerate() {
            for &i in e {
                self.edge_of[i] = Some(id);
            }
        }
    }

    pub fn n_points(&self) -> usize {
        self.edge_of.len()
    }

    /// Hyperedges, each sorted, ordered by smallest member.
    pub fn edges(&self) -> &[Vec<usize>] {
        &self.edges
    }

    pub fn edge_of(&self, i: usize) -> Option<usize> {
        self.edge_of[i]
    }

    pub fn n_singletons(&self) -> usize {
        self.edge_of.iter().filter(|e| e.is_none()).count()
    }

    /// `N(rho)`: number of clusters, singletons included.
    pub fn n_clusters(&self) -> usize {
        self.edges.len() + self.n_singletons()
    }

    /// Whether `u` and `v` lie in the same cluster (false for `u == v`).
    pub fn same_cluster(&self, u: usize, v: usize) -> bool {
        u != v && self.edge_of[u].is_some() && self.edge_of[u] == self.edge_of[v]
    }

    /// All clusters, singletons included, ordered by their smallest member.
    pub fn clusters(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::with_capacity(self.n_clusters());
        for i in 0..self.n_points() {
            match self.edge_of[i] {
                None => out.push(vec![i]),
                Some(e) if self.edges[e][0] == i => out.push(self.edges[e].clone()),
                Some(_) => {}
            }
        }
        out
    }

    /// One label per point; labels number clusters in canonical order.
    pub fn labels(&self) -> Vec<usize> {
        let mut lab = vec![0; self.n_points()];
        for (c, members) in self.clusters().iter().enumerate() {
            for &i in members {
                lab[i] = c;
            }
        }
        lab
    }

    pub fn validate(&self, marks: &[usize]) -> Result<(), PatternError> {
        if marks.len() != self.n_points() {
            return Err(PatternError::LengthMismatch {
                expected: marks.len(),
                got: self.n_points(),
            });
        }
        for (id, e) in self.edges.iter().enumerate() {
            if e.len() < 2 {
                return Err(PatternError::InvalidEdge("edge with fewer than two points"));
            }
            check_marks(marks, e)?;
            for &i in e {
                if self.edge_of[i] != Some(id) {
                    return Err(PatternError::InvalidEdge("inconsistent cluster map"));
                }
            }
        }
        let listed: usize = self.edges.iter().map(Vec::len).sum();
        let mapped = self.edge_of.iter().filter(|e| e.is_some()).count();
        if listed != mapped {
            return Err(PatternError::InvalidEdge("inconsistent cluster map"));
        }
        Ok(())
    }
}

fn check_marks(marks: &[usize], e: &[usize]) -> Result<(), PatternError> {
    for (a, &i) in e.iter().enumerate() {
        for &j in &e[a + 1..] {
            if marks[i] == marks[j] {
                return Err(PatternError::DuplicateMark { a: i, b: j });
            }
        }
    }
    Ok(())
}

impl fmt::Display for Matching {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, e) in self.edges.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "(")?;
            for (a, i) in e.iter().enumerate() {
                if a > 0 {
                    write!(f, ",")?;
                }
                write!(f, "{}", i + 1)?;
            }
            write!(f, ")")?;
        }
        write!(f, "}}")
    }
}

/// One summary per cluster, in the canonical order of [`Matching::clusters`].
pub fn partition_stats(pattern: &PointPattern, rho: &Matching) -> Vec<ClusterSummary> {
    rho.clusters()
        .iter()
        .map(|c| ClusterSummary::of_indices(pattern, c))
        .collect()
}

/// Cluster-size tallies: `clusters[l-1]` counts clusters of size `l` and
/// `points[l-1] = l * clusters[l-1]` counts points in such clusters.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeCounts {
    pub clusters: Vec<usize>,
    pub points: Vec<usize>,
}

pub fn cluster_size_counts(rho: &Matching, k: usize) -> SizeCounts {
    let mut clusters = vec![0; k.max(1)];
    clusters[0] = rho.n_singletons();
    for e in rho.edges() {
        clusters[e.len() - 1] += 1;
    }
    let points = clusters.iter().enumerate().map(|(l, &c)| (l + 1) * c).collect();
    SizeCounts { clusters, points }
}

/// A matching in the complete bipartite graph between `n_red` red and
/// `n_blue` blue points, with the move algebra used by the two-color
/// samplers. Indices are local to each color.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BipartiteMatching {
    red_partner: Vec<Option<usize>>,
    blue_partner: Vec<Option<usize>>,
}

/// Which case of the move `rho o (i, j)` applies, with the displaced
/// partners `i'` (current partner of blue `j`) and `j'` (current partner of
/// red `i`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MoveKind {
    Addition,
    Deletion,
    /// `j'` exists, `i'` does not: `rho - (i, j') + (i, j)`.
    SwitchBlue { j_prime: usize },
    /// `i'` exists, `j'` does not: `rho - (i', j) + (i, j)`.
    SwitchRed { i_prime: usize },
    /// `rho - (i', j) - (i, j') + (i, j) + (i', j')`.
    DoubleSwitch { i_prime: usize, j_prime: usize },
}

impl MoveKind {
    /// Pairs whose move also sends the pre-move state to the same post-move
    /// state (the proposing pair included).
    pub fn forward_pairs(self, i: usize, j: usize) -> ([(usize, usize); 2], usize) {
        match self {
            MoveKind::DoubleSwitch { i_prime, j_prime } => ([(i, j), (i_prime, j_prime)], 2),
            _ => ([(i, j), (i, j)], 1),
        }
    }

    /// Pairs whose move sends the post-move state back to the pre-move one.
    pub fn reverse_pairs(self, i: usize, j: usize) -> ([(usize, usize); 2], usize) {
        match self {
            MoveKind::Addition | MoveKind::Deletion => ([(i, j), (i, j)], 1),
            MoveKind::SwitchBlue { j_prime } => ([(i, j_prime), (i, j_prime)], 1),
            MoveKind::SwitchRed { i_prime } => ([(i_prime, j), (i_prime, j)], 1),
            MoveKind::DoubleSwitch { i_prime, j_prime } => ([(i, j_prime), (i_prime, j)], 2),
        }
    }
}

impl BipartiteMatching {
    pub fn empty(n_red: usize, n_blue: usize) -> Self {
        Self {
            red_partner: vec![None; n_red],
            blue_partner: vec![None; n_blue],
        }
    }

    pub fn from_pairs(
        n_red: usize,
        n_blue: usize,
        pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self, PatternError> {
        let mut m = Self::empty(n_red, n_blue);
        for (i, j) in pairs {
            m.check(i, j)?;
            if m.red_partner[i].is_some() || m.blue_partner[j].is_some() {
                return Err(PatternError::OverlappingEdges(i));
            }
            m.red_partner[i] = Some(j);
            m.blue_partner[j] = Some(i);
        }
        Ok(m)
    }

    pub fn n_red(&self) -> usize {
        self.red_partner.len()
    }

    pub fn n_blue(&self) -> usize {
        self.blue_partner.len()
    }

    pub fn red_partner(&self, i: usize) -> Option<usize> {
        self.red_partner[i]
    }

    pub fn blue_partner(&self, j: usize) -> Option<usize> {
        self.blue_partner[j]
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.red_partner[i] == Some(j)
    }

    pub fn n_edges(&self) -> usize {
        self.red_partner.iter().filter(|p| p.is_some()).count()
    }

    /// Edges sorted by red index.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.red_partner
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.map(|j| (i, j)))
            .collect()
    }

    fn check(&self, i: usize, j: usize) -> Result<(), PatternError> {
        if i >= self.n_red() {
            return Err(PatternError::IndexOutOfRange(i));
        }
        if j >= self.n_blue() {
            return Err(PatternError::IndexOutOfRange(j));
        }
        Ok(())
    }

    /// Classifies the move `rho o (i, j)`.
    pub fn classify(&self, i: usize, j: usize) -> Result<MoveKind, PatternError> {
        self.check(i, j)?;
        Ok(self.classify_unchecked(i, j))
    }

    pub(crate) fn classify_unchecked(&self, i: usize, j: usize) -> MoveKind {
        let j_prime = self.red_partner[i];
        let i_prime = self.blue_partner[j];
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

    /// Returns `rho o (i, j)` without modifying `self`.
    pub fn apply(&self, i: usize, j: usize) -> Result<Self, PatternError> {
        let mut out = self.clone();
        out.apply_in_place(i, j)?;
        Ok(out)
    }

    pub fn apply_in_place(&mut self, i: usize, j: usize) -> Result<MoveKind, PatternError> {
        self.check(i, j)?;
        let kind = self.classify_unchecked(i, j);
        self.apply_kind(i, j, kind);
        Ok(kind)
    }

    pub(crate) fn apply_kind(&mut self, i: usize, j: usize, kind: MoveKind) {
        match kind {
            MoveKind::Addition => {
                self.red_partner[i] = Some(j);
                self.blue_partner[j] = Some(i);
            }
            MoveKind::Deletion => {
                self.red_partner[i] = None;
                self.blue_partner[j] = None;
            }
            MoveKind::SwitchBlue { j_prime } => {
                self.blue_partner[j_prime] = None;
                self.red_partner[i] = Some(j);
                self.blue_partner[j] = Some(i);
            }
            MoveKind::SwitchRed { i_prime } => {
                self.red_partner[i_prime] = None;
                self.red_partner[i] = Some(j);
                self.blue_partner[j] = Some(i);
            }
            MoveKind::DoubleSwitch { i_prime, j_prime } => {
                self.red_partner[i] = Some(j);
                self.blue_partner[j] = Some(i);
                self.red_partner[i_prime] = Some(j_prime);
                self.blue_partner[j_prime] = Some(i_prime);
            }
        }
    }

    /// Undoes `apply_kind(i, j, kind)`.
    pub(crate) fn revert_kind(&mut self, i: usize, j: usize, kind: MoveKind) {
        match kind {
            MoveKind::Addition => {
                self.red_partner[i] = None;
                self.blue_partner[j] = None;
            }
            MoveKind::Deletion => {
                self.red_partner[i] = Some(j);
                self.blue_partner[j] = Some(i);
            }
            MoveKind::SwitchBlue { j_prime } => {
                self.red_partner[i] = Some(j_prime);
                self.blue_partner[j_prime] = Some(i);
                self.blue_partner[j] = None;
            }
            MoveKind::SwitchRed { i_prime } => {
                self.red_partner[i_prime] = Some(j);
                self.blue_partner[j] = Some(i_prime);
                self.red_partner[i] = None;
            }
            MoveKind::DoubleSwitch { i_prime, j_prime } => {
                self.red_partner[i] = Some(j_prime);
                self.blue_partner[j_prime] = Some(i);
                self.red_partner[i_prime] = Some(j);
                self.blue_partner[j] = Some(i_prime);
            }
        }
    }

    /// Lifts to a [`Matching`] over the full pattern given the point index of
    /// each red and blue.
    pub fn to_matching(&self, n: usize, red_index: &[usize], blue_index: &[usize]) -> Matching {
        let mut m = Matching::empty(n);
        for (i, j) in self.pairs() {
            let mut e = vec![red_index[i], blue_index[j]];
            e.sort_unstable();
            let id = m.edges.len();
            m.edge_of[e[0]] = Some(id);
            m.edge_of[e[1]] = Some(id);
            m.edges.push(e);
        }
        m.canonicalize();
        m
    }
}
