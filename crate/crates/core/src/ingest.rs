//! Record ingestion: OS National Grid references, place-name categories,
//! merging of near-duplicate records, and the CSV formats.

use std::collections::HashMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{GridRefError, IngestError};
use crate::pattern::{MarkedPoint, ObservationWindow, Point, PointPattern};

/// How precisely a grid reference locates a record.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    /// A 100 m square (six digits).
    Square100m,
    /// A 1 km square (four digits).
    Square1km,
    /// Another even digit count; the side of the square in meters.
    Square(u32),
    /// Marked as approximate with a leading "c.".
    Circa,
}

/// A parsed reference: center of the referenced square, in meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridLocation {
    pub easting: f64,
    pub northing: f64,
    pub precision: Precision,
}

/// Position of a grid letter in the 5x5 lettering, which skips I.
fn letter_index(c: char) -> Result<u32, GridRefError> {
    let c = c.to_ascii_uppercase();
    if c == 'I' {
        return Err(GridRefError::LetterI);
    }
    if !c.is_ascii_uppercase() {
        return Err(GridRefError::BadChar(c));
    }
    let i = c as u32 - 'A' as u32;
    Ok(if i > 8 { i - 1 } else { i })
}

/// Parses references such as `SU 230870`, `SU2387` or `c. SU 2387` into the
/// center of the referenced square.
pub fn parse_osgrid(text: &str) -> Result<GridLocation, GridRefError> {
    let mut s = text.trim();
    let mut circa = false;
    if let Some(rest) = s.strip_prefix("c.").or_else(|| s.strip_prefix("C.")) {
        circa = true;
        s = rest.trim_start();
    }
    let compact: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    if compact.is_empty() {
        return Err(GridRefError::Empty);
    }
    let mut chars = compact.chars();
    let (a, b) = match (chars.next(), chars.next()) {
        (Some(a), Some(b)) if a.is_ascii_alphabetic() && b.is_ascii_alphabetic() => (a, b),
        _ => return Err(GridRefError::BadLetters(compact.chars().take(2).collect())),
    };
    let (l1, l2) = (letter_index(a)?, letter_index(b)?);
    // 500 km square from the first letter, 100 km square from the second
    let e100 = ((l1 as i64 - 2).rem_euclid(5)) * 5 + (l2 % 5) as i64;
    let n100 = (19 - (l1 / 5) as i64 * 5) - (l2 / 5) as i64;
    if !(0..7).contains(&e100) || !(0..13).contains(&n100) {
        return Err(GridRefError::BadLetters(format!("{a}{b}")));
    }
    let digits: String = chars.collect();
    if let Some(c) = digits.chars().find(|c| !c.is_ascii_digit()) {
        return Err(GridRefError::BadChar(c));
    }
    let n = digits.len();
    if n == 0 || n % 2 == 1 || n > 10 {
        return Err(GridRefError::DigitCount(n));
    }
    let half = n / 2;
    let scale = 10f64.powi(5 - half as i32);
    let e: f64 = digits[..half].parse::<f64>().expect("digits") * scale;
    let nn: f64 = digits[half..].parse::<f64>().expect("digits") * scale;
    let precision = if circa {
        Precision::Circa
    } else {
        match half {
            3 => Precision::Square100m,
            2 => Precision::Square1km,
            _ => Precision::Square(scale as u32),
        }
    };
    Ok(GridLocation {
        easting: e100 as f64 * 100_000.0 + e + scale / 2.0,
        northing: n100 as f64 * 100_000.0 + nn + scale / 2.0,
        precision,
    })
}

/// One row of the record table.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    #[serde(default)]
    pub county: String,
    pub place: String,
    #[serde(default)]
    pub parish: String,
    pub gridref: String,
    #[serde(default)]
    pub date: String,
    /// Source line, for messages.
    #[serde(skip)]
    pub line: usize,
}

/// Reads records with header `county,place,parish,gridref,date`.
pub fn read_records_csv<R: Read>(reader: R) -> Result<Vec<RawRecord>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let mut rec: RawRecord = row.deserialize(Some(&headers)).map_err(|e| IngestError::BadRecord {
            line,
            reason: e.to_string(),
        })?;
        rec.line = line;
        out.push(rec);
    }
    Ok(out)
}

/// What to do with a place name that is not a known category.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnknownPlacePolicy {
    Reject,
    #[default]
    NewCategory,
}

/// Place-name categories with variant spellings merged into one type.
#[derive(Clone, Debug, Default)]
pub struct Categories {
    names: Vec<String>,
    lookup: HashMap<String, usize>,
    policy: UnknownPlacePolicy,
}

fn key(name: &str) -> String {
    name.trim().to_lowercase()
}

impl Categories {
    pub fn new(policy: UnknownPlacePolicy) -> Self {
        Self {
            policy,
            ..Self::default()
        }
    }

    /// Registers `name` as a category if new, returning its index.
    pub fn add(&mut self, name: &str) -> usize {
        if let Some(&t) = self.lookup.get(&key(name)) {
            return t;
        }
        let t = self.names.len();
        self.names.push(name.trim().to_string());
        self.lookup.insert(key(name), t);
        t
    }

    /// Makes `variant` an alias of `canonical`.
    pub fn alias(&mut self, variant: &str, canonical: &str) {
        let t = self.add(canonical);
        self.lookup.insert(key(variant), t);
    }

    /// Reads a merge list with one `variant,canonical` pair per line; blank
    /// lines and lines starting with `#` are skipped.
    pub fn load_merge_list(&mut self, text: &str) -> Result<(), IngestError> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (variant, canonical) = line.split_once(',').ok_or_else(|| IngestError::BadRecord {
                line: n + 1,
                reason: "expected `variant,canonical`".into(),
            })?;
            self.alias(variant, canonical);
        }
        Ok(())
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    fn resolve(&mut self, name: &str, line: usize) -> Result<usize, IngestError> {
        match (self.lookup.get(&key(name)), self.policy) {
            (Some(&t), _) => Ok(t),
            (None, UnknownPlacePolicy::NewCategory) => Ok(self.add(name)),
            (None, UnknownPlacePolicy::Reject) => Err(IngestError::UnknownPlace {
                line,
                name: name.to_string(),
            }),
        }
    }
}

/// One merge performed while cleaning.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MergeEvent {
    pub place: String,
    /// Source lines of the merged records.
    pub lines: Vec<usize>,
    pub x_km: f64,
    pub y_km: f64,
}

#[derive(Clone, Debug)]
pub struct Ingested {
    pub pattern: PointPattern,
    pub names: Vec<String>,
    /// Source lines behind each output point.
    pub sources: Vec<Vec<usize>>,
    pub merges: Vec<MergeEvent>,
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Groups same-type points closer than `threshold` (transitively) and
/// returns the groups in order of their first member.
pub fn merge_groups(points: &[MarkedPoint], threshold: f64) -> Vec<Vec<usize>> {
    let n = points.len();
    let mut parent: Vec<usize> = (0..n).collect();
    let t2 = threshold * threshold;
    for a in 0..n {
        for b in a + 1..n {
            if points[a].mark == points[b].mark && points[a].loc.dist2(points[b].loc) < t2 {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot: HashMap<usize, usize> = HashMap::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        let g = *slot.entry(r).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(i);
    }
    groups
}

/// Parses, categorizes and cleans records. Same-type records closer than
/// `threshold_km` are merged, transitively, into their centroid. Without a
/// window, the bounding box of the cleaned points grown by 1 km is used.
pub fn ingest_and_clean(
    records: &[RawRecord],
    categories: &mut Categories,
    threshold_km: f64,
    window: Option<ObservationWindow>,
) -> Result<Ingested, IngestError> {
    let mut raw = Vec::with_capacity(records.len());
    for r in records {
        let loc = parse_osgrid(&r.gridref).map_err(|source| IngestError::GridRef { line: r.line, source })?;
        let t = categories.resolve(&r.place, r.line)?;
        raw.push(MarkedPoint::new(loc.easting / 1000.0, loc.northing / 1000.0, t));
    }
    let groups = merge_groups(&raw, threshold_km);
    let mut points = Vec::with_capacity(groups.len());
    let mut sources = Vec::with_capacity(groups.len());
    let mut merges = Vec::new();
    for g in groups {
        let n = g.len() as f64;
        let x = g.iter().map(|&i| raw[i].loc.x).sum::<f64>() / n;
        let y = g.iter().map(|&i| raw[i].loc.y).sum::<f64>() / n;
        let mark = raw[g[0]].mark;
        let lines: Vec<usize> = g.iter().map(|&i| records[i].line).collect();
        if g.len() > 1 {
            merges.push(MergeEvent {
                place: categories.names()[mark].clone(),
                lines: lines.clone(),
                x_km: x,
                y_km: y,
            });
        }
        points.push(MarkedPoint::new(x, y, mark));
        sources.push(lines);
    }
    let window = match window {
        Some(w) => w,
        None => bounding_window(&points)?,
    };
    let pattern = PointPattern::new(points, categories.len().max(1), window)?;
    Ok(Ingested {
        pattern,
        names: categories.names().to_vec(),
        sources,
        merges,
    })
}

/// Bounding box of the points grown by 1 km.
pub fn bounding_window(points: &[MarkedPoint]) -> Result<ObservationWindow, IngestError> {
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in points {
        x0 = x0.min(p.loc.x);
        x1 = x1.max(p.loc.x);
        y0 = y0.min(p.loc.y);
        y1 = y1.max(p.loc.y);
    }
    if points.is_empty() {
        (x0, x1, y0, y1) = (0.0, 0.0, 0.0, 0.0);
    }
    Ok(ObservationWindow::rect(x0 - 1.0, x1 + 1.0, y0 - 1.0, y1 + 1.0)?)
}

#[derive(Deserialize)]
struct XyRow {
    x_km: f64,
    y_km: f64,
    #[serde(rename = "type")]
    mark: usize,
}

/// Reads the minimal `x_km,y_km,type` format with integer types.
pub fn read_xy_csv<R: Read>(reader: R, k: Option<usize>, window: Option<ObservationWindow>) -> Result<PointPattern, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut points = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let r: XyRow = row.deserialize(None).map_err(|e| IngestError::BadRecord {
            line,
            reason: e.to_string(),
        })?;
        points.push(MarkedPoint::new(r.x_km, r.y_km, r.mark));
    }
    let k = k.unwrap_or_else(|| points.iter().map(|p| p.mark + 1).max().unwrap_or(1));
    let window = match window {
        Some(w) => w,
        None => bounding_window(&points)?,
    };
    Ok(PointPattern::new(points, k, window)?)
}

/// Writes the minimal `x_km,y_km,type` format.
pub fn write_xy_csv<W: Write>(pattern: &PointPattern, w: W) -> Result<(), IngestError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["x_km", "y_km", "type"])?;
    for p in pattern.points() {
        wtr.write_record([p.loc.x.to_string(), p.loc.y.to_string(), p.mark.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Which of the two input layouts a header line describes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputFormat {
    Records,
    Xy,
}

pub fn detect_format(header: &str) -> Result<InputFormat, IngestError> {
    let cols: Vec<String> = header.split(',').map(|c| c.trim().to_lowercase()).collect();
    let has = |c: &str| cols.iter().any(|x| x == c);
    if has("x_km") && has("y_km") && has("type") {
        Ok(InputFormat::Xy)
    } else if has("place") && has("gridref") {
        Ok(InputFormat::Records)
    } else {
        Err(IngestError::BadHeader(header.to_string()))
    }
}

/// Convenience for tests and tools: a point at grid meters.
pub fn grid_point(loc: &GridLocation) -> Point {
    Point::new(loc.easting / 1000.0, loc.northing / 1000.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelParams, UniformDensity};
    use crate::synth::simulate_model;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn worked_references() {
        let a = parse_osgrid("SU 230870").unwrap();
        assert_eq!((a.easting, a.northing, a.precision), (423050.0, 187050.0, Precision::Square100m));
        let b = parse_osgrid("SU 2387").unwrap();
        assert_eq!((b.easting, b.northing, b.precision), (423500.0, 187500.0, Precision::Square1km));
        let c = parse_osgrid("c. SU 2387").unwrap();
        assert_eq!((c.easting, c.northing, c.precision), (423500.0, 187500.0, Precision::Circa));
        assert_eq!(parse_osgrid("su2387").unwrap().easting, 423500.0);
    }

    #[test]
    fn other_squares() {
        // TQ: SW corner (500000, 100000); NT: (300000, 600000); HU: (400000, 1100000)
        let tq = parse_osgrid("TQ 000000").unwrap();
        assert_eq!((tq.easting, tq.northing), (500050.0, 100050.0));
        let nt = parse_osgrid("NT 0000").unwrap();
        assert_eq!((nt.easting, nt.northing), (300500.0, 600500.0));
        let hu = parse_osgrid("HU 00").unwrap();
        assert_eq!((hu.easting, hu.northing), (405000.0, 1105000.0));
    }

    #[test]
    fn malformed_references() {
        assert_eq!(parse_osgrid("SI 2387").unwrap_err(), GridRefError::LetterI);
        assert_eq!(parse_osgrid("SU 23870").unwrap_err(), GridRefError::DigitCount(5));
        assert_eq!(parse_osgrid("").unwrap_err(), GridRefError::Empty);
        assert_eq!(parse_osgrid("SU 23x7").unwrap_err(), GridRefError::BadChar('x'));
        assert!(matches!(parse_osgrid("1U 2387"), Err(GridRefError::BadLetters(_))));
        assert!(matches!(parse_osgrid("AA 2387"), Err(GridRefError::BadLetters(_))));
    }

    fn rec(place: &str, gridref: &str, line: usize) -> RawRecord {
        RawRecord {
            place: place.into(),
            gridref: gridref.into(),
            line,
            ..Default::default()
        }
    }

    #[test]
    fn merges_close_records() {
        let mut cats = Categories::new(UnknownPlacePolicy::NewCategory);
        // 2 km apart: merged to the midpoint; 4 km apart: kept
        let recs = vec![
            rec("Charlton", "SU 2080", 2),
            rec("Charlton", "SU 2280", 3),
            rec("Charlton", "SU 3080", 4),
            rec("Charlton", "SU 3480", 5),
        ];
        let out = ingest_and_clean(&recs, &mut cats, 3.0, None).unwrap();
        assert_eq!(out.pattern.len(), 3);
        assert_eq!(out.pattern.loc(0), Point::new(421.5, 180.5));
        assert_eq!(out.merges.len(), 1);
        assert_eq!(out.merges[0].lines, vec![2, 3]);
    }

    #[test]
    fn transitive_chain_merges_to_centroid() {
        let mut cats = Categories::new(UnknownPlacePolicy::NewCategory);
        let recs = vec![rec("Walton", "SU 2080", 2), rec("Walton", "SU 2280", 3), rec("Walton", "SU 2480", 4)];
        let out = ingest_and_clean(&recs, &mut cats, 3.0, None).unwrap();
        assert_eq!(out.pattern.len(), 1);
        assert_eq!(out.pattern.loc(0), Point::new(422.5, 180.5));
        assert_eq!(out.merges[0].lines, vec![2, 3, 4]);
    }

    #[test]
    fn different_types_never_merge_and_aliases_apply() {
        let mut cats = Categories::new(UnknownPlacePolicy::Reject);
        cats.add("Charlton");
        cats.add("Walton");
        cats.load_merge_list("# variants\nCharlcot,Charlton\n").unwrap();
        let recs = vec![rec("Charlton", "SU 2080", 2), rec("Walton", "SU 2080", 3), rec("charlcot", "SU 2180", 4)];
        let out = ingest_and_clean(&recs, &mut cats, 3.0, None).unwrap();
        assert_eq!(out.pattern.len(), 2);
        assert_eq!(out.pattern.counts_by_mark(), vec![1, 1]);
        let bad = ingest_and_clean(&[rec("Stratton", "SU 2080", 9)], &mut cats, 3.0, None);
        assert!(matches!(bad, Err(IngestError::UnknownPlace { line: 9, .. })));
    }

    #[test]
    fn bad_reference_reports_line() {
        let mut cats = Categories::new(UnknownPlacePolicy::NewCategory);
        let err = ingest_and_clean(&[rec("Walton", "SI 2080", 7)], &mut cats, 3.0, None).unwrap_err();
        assert!(matches!(err, IngestError::GridRef { line: 7, source: GridRefError::LetterI }));
    }

    #[test]
    fn records_csv_roundtrip() {
        let text = "county,place,parish,gridref,date\nWilts,Charlton,Downton,SU 1723,1086\nWilts,Walton,, c. SU 2080 ,\n";
        let recs = read_records_csv(text.as_bytes()).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[1].line, 3);
        assert_eq!(parse_osgrid(&recs[1].gridref).unwrap().precision, Precision::Circa);
        assert_eq!(detect_format("county,place,parish,gridref,date").unwrap(), InputFormat::Records);
        assert_eq!(detect_format("x_km,y_km,type").unwrap(), InputFormat::Xy);
        assert!(detect_format("a,b").is_err());
    }

    #[test]
    fn simulated_pattern_roundtrips() {
        let w = ObservationWindow::square(10.0).unwrap();
        let g = UniformDensity::new(w.clone());
        let params = ModelParams::new(0.4, vec![0.3, 0.4, 0.3], 40.0).unwrap();
        let sim = simulate_model(&params, &g, &w, false, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut buf = Vec::new();
        write_xy_csv(&sim.pattern, &mut buf).unwrap();
        let back = read_xy_csv(buf.as_slice(), Some(3), Some(w)).unwrap();
        assert_eq!(back, sim.pattern);
        // cleaning with a zero threshold changes nothing
        let groups = merge_groups(back.points(), 0.0);
        assert!(groups.iter().all(|g| g.len() == 1));
    }

    proptest! {
        #[test]
        fn reference_digits_roundtrip(e in 0u32..100_000, n in 0u32..100_000) {
            let text = format!("SU {:05}{:05}", e, n);
            let loc = parse_osgrid(&text).unwrap();
            prop_assert_eq!(loc.easting, 400_000.0 + e as f64 + 0.5);
            prop_assert_eq!(loc.northing, 100_000.0 + n as f64 + 0.5);
        }
    }
}
