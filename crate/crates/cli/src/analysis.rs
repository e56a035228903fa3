//! Post-processing of recorded draws: diagnostics, posterior summaries and
//! plot data.

use std::path::Path;

use anyhow::{bail, Result};
use compclust::diagnostics::{
    association_measure, comembership_matrix, diagnostics_report, quantile, AssociationMatrix, CoMembership,
    DiagnosticsReport, ScalarSummary, TraceSet,
};
use compclust::samplerk::Sample;
use compclust::{Matching, PointPattern};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::output::{csv_file, opt};

const HIST_BINS: usize = 40;

#[derive(Debug, Serialize)]
pub struct Analysis {
    pub diagnostics: DiagnosticsReport,
    pub association: Option<AssociationMatrix>,
}

fn pooled(traces: &[TraceSet]) -> TraceSet {
    let mut all = TraceSet::default();
    for t in traces {
        all.sigma.extend(&t.sigma);
        all.lambda.extend(&t.lambda);
        all.n_clusters.extend(&t.n_clusters);
        all.difference.extend(&t.difference);
        all.y.resize(t.y.len(), Vec::new());
        all.p.resize(t.p.len(), Vec::new());
        all.y.iter_mut().zip(&t.y).for_each(|(a, b)| a.extend(b));
        all.p.iter_mut().zip(&t.p).for_each(|(a, b)| a.extend(b));
    }
    all
}

fn write_histogram(path: &Path, x: &[f64], range: Option<(f64, f64)>) -> Result<()> {
    let (lo, hi) = range.unwrap_or_else(|| {
        let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if hi > lo {
            (lo, hi)
        } else {
            (lo - 0.5, lo + 0.5)
        }
    });
    let width = (hi - lo) / HIST_BINS as f64;
    let mut counts = vec![0usize; HIST_BINS];
    for &v in x {
        let b = ((v - lo) / width).floor();
        if b >= 0.0 {
            counts[(b as usize).min(HIST_BINS - 1)] += 1;
        }
    }
    let mut w = csv_file(path)?;
    w.write_record(["bin_low", "bin_high", "count", "density"])?;
    for (b, &c) in counts.iter().enumerate() {
        let a = lo + b as f64 * width;
        w.write_record([
            a.to_string(),
            (a + width).to_string(),
            c.to_string(),
            (c as f64 / (x.len().max(1) as f64 * width)).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn summary_row(name: &str, s: &ScalarSummary) -> Vec<String> {
    let mut row = vec![name.to_string()];
    row.extend(
        [s.mean, s.sd, s.q025, s.q25, s.median, s.q75, s.q975, s.hpd_low, s.hpd_high]
            .iter()
            .map(f64::to_string),
    );
    row
}

/// Writes `summary.csv`, `sigma_hist.csv`, `p1_hist.csv`,
/// `y_quantiles.csv`, `comembership.csv` and `association.csv` into `out`.
pub fn analyze(
    x: &PointPattern,
    names: Option<&[String]>,
    chains: &[Vec<Sample>],
    out: &Path,
    seed: u64,
    n_null: usize,
) -> Result<Analysis> {
    let marks = x.marks();
    let k = x.k();
    let Some(first) = chains.iter().find_map(|c| c.first()) else {
        bail!("no draws were recorded");
    };
    let reference = first.matching(&marks);
    let matchings: Vec<Vec<Matching>> = chains
        .iter()
        .map(|c| c.iter().map(|s| s.matching(&marks)).collect())
        .collect();
    let traces: Vec<TraceSet> = chains
        .iter()
        .map(|c| TraceSet::from_samples(c, &marks, k, &reference))
        .collect();
    let comems: Vec<CoMembership> = matchings
        .iter()
        .filter(|m| !m.is_empty())
        .map(|m| comembership_matrix(m))
        .collect::<Result<_, _>>()?;
    let diagnostics = diagnostics_report(&traces, &comems)?;

    let all = pooled(&traces);
    let mut w = csv_file(&out.join("summary.csv"))?;
    w.write_record(["parameter", "mean", "sd", "q025", "q25", "median", "q75", "q975", "hpd_low", "hpd_high"])?;
    w.write_record(summary_row("sigma", &ScalarSummary::of(&all.sigma)?))?;
    w.write_record(summary_row("lambda", &ScalarSummary::of(&all.lambda)?))?;
    w.write_record(summary_row("n_clusters", &ScalarSummary::of(&all.n_clusters)?))?;
    for (l, p) in all.p.iter().enumerate() {
        w.write_record(summary_row(&format!("p{}", l + 1), &ScalarSummary::of(p)?))?;
    }
    for (l, y) in all.y.iter().enumerate() {
        w.write_record(summary_row(&format!("y{}", l + 1), &ScalarSummary::of(y)?))?;
    }
    w.flush()?;

    write_histogram(&out.join("sigma_hist.csv"), &all.sigma, None)?;
    write_histogram(&out.join("p1_hist.csv"), &all.p[0], Some((0.0, 1.0)))?;

    let mut w = csv_file(&out.join("y_quantiles.csv"))?;
    w.write_record(["size", "mean", "q025", "q25", "median", "q75", "q975"])?;
    for (l, y) in all.y.iter().enumerate() {
        let mut s = y.clone();
        s.sort_by(f64::total_cmp);
        let mean = s.iter().sum::<f64>() / s.len() as f64;
        let mut row = vec![(l + 1).to_string(), mean.to_string()];
        row.extend([0.025, 0.25, 0.5, 0.75, 0.975].iter().map(|&q| quantile(&s, q).to_string()));
        w.write_record(row)?;
    }
    w.flush()?;

    let mut pooled_cm = CoMembership::new(x.len());
    matchings.iter().flatten().for_each(|m| pooled_cm.add(m));
    let mut w = csv_file(&out.join("comembership.csv"))?;
    w.write_record(["i", "j", "type_i", "type_j", "x_i", "y_i", "x_j", "y_j", "probability"])?;
    for ((i, j), p) in pooled_cm.entries() {
        let (a, b) = (x.loc(i), x.loc(j));
        w.write_record([
            i.to_string(),
            j.to_string(),
            x.mark(i).to_string(),
            x.mark(j).to_string(),
            a.x.to_string(),
            a.y.to_string(),
            b.x.to_string(),
            b.y.to_string(),
            p.to_string(),
        ])?;
    }
    w.flush()?;

    let association = if n_null > 0 {
        let flat: Vec<Matching> = matchings.into_iter().flatten().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = association_measure(&flat, &marks, k, n_null, &mut rng)?;
        let label = |t: usize| names.and_then(|n| n.get(t)).cloned().unwrap_or_else(|| t.to_string());
        let mut w = csv_file(&out.join("association.csv"))?;
        w.write_record(["type_a", "type_b", "name_a", "name_b", "raw", "null", "relative"])?;
        for i in 0..k {
            for j in 0..k {
                w.write_record([
                    i.to_string(),
                    j.to_string(),
                    label(i),
                    label(j),
                    opt(a.raw[i][j]),
                    opt(a.null[i][j]),
                    opt(a.relative[i][j]),
                ])?;
            }
        }
        w.flush()?;
        Some(a)
    } else {
        None
    };

    Ok(Analysis {
        diagnostics,
        association,
    })
}
