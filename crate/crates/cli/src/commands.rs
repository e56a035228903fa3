//! Command dispatch.

use std::fs::{self, File};
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use compclust::ingest::{read_xy_csv, write_xy_csv, MergeEvent};
use compclust::intensity::{kde_intensity, IntensityField};
use compclust::kcross::deviation_test;
use compclust::pattern::Point;
use compclust::sampler2::{
    build_weight_table, gibbs_sweep_2, hungarian_mode, MatchingKernel, ProposalGrid, TemperingLadder, WeightTable,
};
use compclust::samplerk::{gibbs_sweep_k, ChainState, Sample, SamplerConfig, UpdateFlags};
use compclust::synth::{simulate_csri, simulate_model};
use compclust::{BipartiteMatching, CenterDensity, ModelParams, PointPattern, UniformDensity};
use log::{info, warn};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::analysis::analyze;
use crate::config::{
    CommandConfig, InputConfig, KcrossConfig, ModeSource, ModelConfig, RunConfig, SamplerSettings, SimulateModel,
};
use crate::data::{center_density, cv_bandwidth, load_pattern, read_matrix, window_of, Loaded};
use crate::output::{csv_file, ensure_dir, samples_path, write_json, SampleWriter};

/// Runs one validated command.
pub fn run(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    if let Some(dir) = &cfg.out_dir {
        ensure_dir(dir)?;
    }
    match &cfg.command {
        CommandConfig::Fit {
            input,
            model,
            sampler,
            n_null,
        } => fit(cfg, input, model, sampler, *n_null, false),
        CommandConfig::Fit2 {
            input,
            model,
            sampler,
            n_null,
        } => fit(cfg, input, model, sampler, *n_null, true),
        CommandConfig::Mode { source } => mode(cfg, source),
        CommandConfig::Kcross(k) => kcross(cfg, k),
        CommandConfig::Simulate { model, window } => simulate(cfg, model, window),
        CommandConfig::Diagnose { run_dir, n_null } => diagnose(cfg, run_dir, *n_null),
    }
}

fn out_dir(cfg: &RunConfig) -> &Path {
    cfg.out_dir.as_deref().expect("validated output directory")
}

fn write_cleaning(out: &Path, loaded: &Loaded) -> Result<()> {
    let mut f = File::create(out.join("pattern.csv"))?;
    write_xy_csv(&loaded.pattern, &mut f)?;
    if let Some(names) = &loaded.names {
        let mut w = csv_file(&out.join("categories.csv"))?;
        w.write_record(["type", "name"])?;
        for (t, n) in names.iter().enumerate() {
            w.write_record([t.to_string(), n.clone()])?;
        }
        w.flush()?;
        let mut w = csv_file(&out.join("cleaning.csv"))?;
        w.write_record(["place", "source_lines", "x_km", "y_km", "reason"])?;
        for MergeEvent { place, lines, x_km, y_km } in &loaded.merges {
            let lines: Vec<String> = lines.iter().map(usize::to_string).collect();
            w.write_record([
                place.clone(),
                lines.join(" "),
                x_km.to_string(),
                y_km.to_string(),
                "merged same-type records within threshold".into(),
            ])?;
        }
        w.flush()?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct ChainReport {
    seed: u64,
    draws: usize,
    move_acceptance: f64,
    sigma_acceptance: f64,
    final_sigma: f64,
    /// Ladder state at the end of a tempered run.
    ladder: Option<TemperingLadder>,
}

struct ChainRun {
    samples: Vec<Sample>,
    report: ChainReport,
}

struct ChainJob<'a> {
    x: &'a PointPattern,
    g: &'a dyn CenterDensity,
    scfg: &'a SamplerConfig,
    settings: &'a SamplerSettings,
    model: &'a ModelConfig,
    kernel: Option<MatchingKernel>,
}

impl ChainJob<'_> {
    fn run(&self, chain: usize, seed: u64, tx: std::sync::mpsc::Sender<(usize, String)>) -> Result<ChainRun> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hyper = &self.scfg.hyper;
        let mut state = ChainState::initial(self.x, hyper);
        // dispersed starting values help the between-chain diagnostics
        state.params.sigma = match self.model.init_sigma {
            Some(s) => s,
            None => hyper.sigma_max * rng.random_range(0.02..0.3),
        };
        if let Some(p) = &self.model.init_p {
            state.params.size_probs = p.clone();
        }
        if let Some(l) = self.model.init_lambda {
            state.params.lambda = l;
        }
        let mut kernel = self.kernel.clone();
        let s = self.settings;
        let total = s.burn_in + s.sweeps;
        let (mut moves, mut sigma_acc) = (0u64, 0usize);
        let mut samples = Vec::with_capacity(s.sweeps / s.thin + 1);
        for t in 0..total {
            let info = match kernel.as_mut() {
                Some(k) => gibbs_sweep_2(self.x, &mut state, self.scfg, k, self.g, &mut rng)?,
                None => gibbs_sweep_k(self.x, &mut state, self.scfg, self.g, &mut rng)?,
            };
            moves += info.accepted_moves;
            sigma_acc += info.sigma_accepted;
            if t >= s.burn_in && (t - s.burn_in + 1).is_multiple_of(s.thin) && info.rung == 0 {
                let sample = Sample::of(t + 1, self.x, &state, self.g);
                tx.send((chain, serde_json::to_string(&sample)?))
                    .map_err(|_| anyhow::anyhow!("sample writer stopped"))?;
                samples.push(sample);
            }
        }
        let ladder = match kernel {
            Some(MatchingKernel::Tempered(l)) => Some(l),
            _ => None,
        };
        Ok(ChainRun {
            report: ChainReport {
                seed,
                draws: samples.len(),
                move_acceptance: moves as f64 / (total * self.scfg.n_moves).max(1) as f64,
                sigma_acceptance: sigma_acc as f64 / (total * self.scfg.sigma_inner).max(1) as f64,
                final_sigma: state.params.sigma,
                ladder,
            },
            samples,
        })
    }
}

fn chain_seeds(seed: u64, n: usize) -> Vec<u64> {
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| master.next_u64()).collect()
}

fn fit(
    cfg: &RunConfig,
    input: &InputConfig,
    model: &ModelConfig,
    settings: &SamplerSettings,
    n_null: usize,
    two_color: bool,
) -> Result<()> {
    let out = out_dir(cfg);
    let loaded = load_pattern(input)?;
    let x = &loaded.pattern;
    let k = x.k();
    if two_color {
        ensure!(k == 2, "fit2 needs exactly two types, found {k}");
    } else {
        ensure!(k >= 2, "fit needs at least two types, found {k}");
    }
    ensure!(!x.is_empty(), "the input holds no points");
    model.check_k(k)?;
    write_cleaning(out, &loaded)?;

    let (g, bandwidth) = center_density(&model.density, x)?;
    let scfg = SamplerConfig {
        hyper: model.hyperparams(k),
        n_moves: settings.n_moves,
        proposal: settings.proposal,
        sigma_step: settings.sigma_step,
        sigma_inner: settings.sigma_inner,
        r_max: settings.r_max,
        updates: UpdateFlags {
            sigma: model.update_sigma,
            size_probs: model.update_p,
            lambda: model.update_lambda,
        },
    };
    scfg.validate(k)?;
    let kernel = if two_color {
        let k = if settings.tempering {
            let ladder = match &settings.ladder {
                Some(b) => TemperingLadder::new(b.clone())?,
                None => TemperingLadder::default_ladder(),
            };
            MatchingKernel::Tempered(ladder)
        } else if let Some(tile) = settings.tile {
            MatchingKernel::Tiled(ProposalGrid::new(tile, settings.max_tiles)?)
        } else {
            MatchingKernel::Plain
        };
        k.validate(&scfg)?;
        Some(k)
    } else {
        None
    };

    let seeds = chain_seeds(cfg.seed, settings.chains);
    let writer = SampleWriter::spawn((0..settings.chains).map(|c| samples_path(out, c)).collect())?;
    let job = ChainJob {
        x,
        g: g.as_ref(),
        scfg: &scfg,
        settings,
        model,
        kernel,
    };
    info!("running {} chains of {} sweeps", settings.chains, settings.burn_in + settings.sweeps);
    let runs: Vec<Result<ChainRun>> = seeds
        .par_iter()
        .enumerate()
        .map(|(c, &seed)| job.run(c, seed, writer.tx.clone()))
        .collect();
    writer.finish()?;
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;

    let chains: Vec<Vec<Sample>> = runs.iter().map(|r| r.samples.clone()).collect();
    let analysis = analyze(x, loaded.names.as_deref(), &chains, out, cfg.seed, n_null)?;
    let report = json!({
        "config": cfg,
        "k": k,
        "n_points": x.len(),
        "n_records": loaded.n_records,
        "window": x.window().bounding_box(),
        "type_names": loaded.names,
        "center_bandwidth": bandwidth,
        "chains": runs.iter().map(|r| &r.report).collect::<Vec<_>>(),
        "diagnostics": analysis.diagnostics,
        "association": analysis.association,
    });
    write_json(&out.join("report.json"), &report)?;
    if let Some(psrf) = analysis.diagnostics.psrf {
        info!("PSRF {psrf:.4}");
    }
    Ok(())
}

fn format_pairs(m: &BipartiteMatching) -> String {
    let pairs: Vec<String> = m.pairs().iter().map(|(i, j)| format!("({},{})", i + 1, j + 1)).collect();
    format!("{{{}}}", pairs.join(","))
}

fn mode(cfg: &RunConfig, source: &ModeSource) -> Result<()> {
    let (table, points): (WeightTable, Option<PointPattern>) = match source {
        ModeSource::Weights { path } => (WeightTable::from_dense(&read_matrix(path)?)?, None),
        ModeSource::Pattern {
            input,
            sigma,
            p,
            lambda,
            density,
            r_max,
        } => {
            let loaded = load_pattern(input)?;
            ensure!(loaded.pattern.k() == 2, "mode needs exactly two types");
            let params = ModelParams::new(*sigma, p.clone(), *lambda)?;
            let (g, _) = center_density(density, &loaded.pattern)?;
            let t = build_weight_table(&loaded.pattern, &params, g.as_ref(), *r_max)?;
            (t, Some(loaded.pattern))
        }
    };
    let m = hungarian_mode(&table);
    println!("{}", format_pairs(&m));
    if let Some(out) = &cfg.out_dir {
        let mut w = csv_file(&out.join("mode.csv"))?;
        w.write_record(["red", "blue", "point_red", "point_blue", "ln_weight"])?;
        for (i, j) in m.pairs() {
            let (pr, pb) = match &points {
                Some(_) => (table.red_index()[i].to_string(), table.blue_index()[j].to_string()),
                None => (String::new(), String::new()),
            };
            w.write_record([
                (i + 1).to_string(),
                (j + 1).to_string(),
                pr,
                pb,
                table.ln_weight(i, j).to_string(),
            ])?;
        }
        w.flush()?;
        write_json(
            &out.join("report.json"),
            &json!({ "config": cfg, "ln_weight": table.ln_weight_of(&m), "pairs": m.pairs() }),
        )?;
    }
    Ok(())
}

fn kcross(cfg: &RunConfig, k: &KcrossConfig) -> Result<()> {
    let out = out_dir(cfg);
    let loaded = load_pattern(&k.input)?;
    let x = &loaded.pattern;
    ensure!(x.k() >= 2, "the K-cross test needs at least two types");
    write_cleaning(out, &loaded)?;
    let mut fields: Vec<IntensityField> = Vec::with_capacity(x.k());
    let mut bandwidths = Vec::with_capacity(x.k());
    for t in 0..x.k() {
        let pts: Vec<Point> = x.indices_of(t).iter().map(|&i| x.loc(i)).collect();
        ensure!(!pts.is_empty(), "type {t} has no points");
        let h = match k.bandwidth {
            Some(h) => h,
            None => cv_bandwidth(&pts, x.window())?,
        };
        bandwidths.push(h);
        fields.push(kde_intensity(&pts, x.window(), h)?);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let est = deviation_test(x, &fields, &k.deviation(), &mut rng)?;
    est.observed.write_csv(File::create(out.join("kcross_curves.csv"))?)?;
    est.write_csv(File::create(out.join("kcross_test.csv"))?)?;
    println!(
        "max deviation {:.4}, p-value {:.4}, {}",
        est.d_obs,
        est.p_value,
        if est.reject() { "reject independence" } else { "no evidence against independence" }
    );
    write_json(
        &out.join("report.json"),
        &json!({
            "config": cfg,
            "counts": x.counts_by_mark(),
            "type_names": loaded.names,
            "bandwidths": bandwidths,
            "d_obs": est.d_obs,
            "p_value": est.p_value,
            "reject": est.reject(),
            "null_d": est.null_d,
        }),
    )
}

fn simulate(cfg: &RunConfig, model: &SimulateModel, window: &[f64; 4]) -> Result<()> {
    let out = out_dir(cfg);
    let w = window_of(window)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let summary = match model {
        SimulateModel::Csri { counts } => {
            let x = simulate_csri(counts, &w, &mut rng)?;
            write_xy_csv(&x, File::create(out.join("points.csv"))?)?;
            json!({ "n_points": x.len(), "counts": x.counts_by_mark() })
        }
        SimulateModel::Clustered { sigma, p, lambda, crop } => {
            let params = ModelParams::new(*sigma, p.clone(), *lambda)?;
            let g = UniformDensity::new(w.clone());
            let sim = simulate_model(&params, &g, &w, *crop, &mut rng)?;
            write_xy_csv(&sim.pattern, File::create(out.join("points.csv"))?)?;
            let labels = sim.truth.labels();
            let mut wt = csv_file(&out.join("truth.csv"))?;
            wt.write_record(["point", "cluster"])?;
            for (i, l) in labels.iter().enumerate() {
                wt.write_record([i.to_string(), l.to_string()])?;
            }
            wt.flush()?;
            // centers follow the edges, then the singletons in index order
            let singles = (0..sim.pattern.len()).filter(|&i| sim.truth.edge_of(i).is_none());
            let firsts: Vec<usize> = sim.truth.edges().iter().map(|e| e[0]).chain(singles).collect();
            let mut rows: Vec<(usize, Point)> =
                firsts.iter().zip(&sim.centers).map(|(&i, &c)| (labels[i], c)).collect();
            rows.sort_by_key(|r| r.0);
            let mut wc = csv_file(&out.join("centers.csv"))?;
            wc.write_record(["cluster", "x_km", "y_km"])?;
            for (l, c) in rows {
                wc.write_record([l.to_string(), c.x.to_string(), c.y.to_string()])?;
            }
            wc.flush()?;
            json!({
                "n_points": sim.pattern.len(),
                "counts": sim.pattern.counts_by_mark(),
                "n_clusters": sim.truth.n_clusters(),
            })
        }
    };
    write_json(&out.join("report.json"), &json!({ "config": cfg, "result": summary }))
}

/// Reads a sample stream, skipping an incomplete trailing line.
fn read_samples(path: &Path) -> Result<Vec<Sample>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let lines: Vec<String> = BufReader::new(f).lines().collect::<Result<_, _>>()?;
    let mut out = Vec::with_capacity(lines.len());
    for (n, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(s) => out.push(s),
            Err(e) if n + 1 == lines.len() => warn!("{}: ignoring truncated last line ({e})", path.display()),
            Err(e) => return Err(e).with_context(|| format!("{}:{}", path.display(), n + 1)),
        }
    }
    Ok(out)
}

fn diagnose(cfg: &RunConfig, run_dir: &Path, n_null: usize) -> Result<()> {
    let out = out_dir(cfg);
    let report: serde_json::Value = serde_json::from_reader(BufReader::new(
        File::open(run_dir.join("report.json")).with_context(|| format!("no report.json in {}", run_dir.display()))?,
    ))?;
    let k = report["k"].as_u64().context("report.json lacks the number of types")? as usize;
    let b = &report["window"];
    let corners = ["xmin", "xmax", "ymin", "ymax"].map(|c| b[c].as_f64());
    let window = match corners {
        [Some(a), Some(b), Some(c), Some(d)] => Some(window_of(&[a, b, c, d])?),
        _ => None,
    };
    let x = read_xy_csv(File::open(run_dir.join("pattern.csv"))?, Some(k), window)?;
    let names: Option<Vec<String>> = serde_json::from_value(report["type_names"].clone()).unwrap_or(None);

    let mut paths: Vec<(usize, PathBuf)> = fs::read_dir(run_dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            let c = name.strip_prefix("samples_chain")?.strip_suffix(".jsonl")?.parse().ok()?;
            Some((c, e.path()))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no sample files in {}", run_dir.display());
    }
    let chains = paths.iter().map(|(_, p)| read_samples(p)).collect::<Result<Vec<_>>>()?;
    let analysis = analyze(&x, names.as_deref(), &chains, out, cfg.seed, n_null)?;
    write_json(
        &out.join("diagnose_report.json"),
        &json!({
            "config": cfg,
            "draws": chains.iter().map(Vec::len).collect::<Vec<_>>(),
            "diagnostics": analysis.diagnostics,
            "association": analysis.association,
        }),
    )
}
