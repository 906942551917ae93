use std::fs;
use std::path::{Path, PathBuf};

use dir_core::inference::{
    coverage, fit as fit_chain, fit_online, parameter_coverage, raw_scores, ChainOutput, DrawSet, Quantity,
    QuantityKey, Saturation, SummaryRow, TruthTable,
};
use dir_core::io::{
    fmt_float, read_dataset, read_summary, read_traces, read_truth, write_dataset, write_summary, write_text,
    write_traces, write_truth, SUMMARY_FILE, TRACES_FILE, TRUTH_FILE,
};
use dir_core::model::{validate_dataset, Dataset, Mode};
use dir_core::simgen::simulate_dataset;
use dir_core::{Error, Result};
use rayon::prelude::*;

use crate::config::{self, FitSettings};
use crate::manifest::{RunManifest, CONFIG_FILE, MANIFEST_FILE};

const ONLINE_FILE: &str = "online.csv";
const RAW_SCORES_FILE: &str = "raw_scores.csv";
const VALIDATION_FILE: &str = "validation.csv";
const COVERAGE_FILE: &str = "coverage.csv";
const PARAMETERS_FILE: &str = "parameters.csv";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.display().to_string(), source })
}

fn csv_text(header: &str, rows: impl IntoIterator<Item = String>) -> String {
    let mut out = String::from(header);
    out.push('\n');
    for row in rows {
        out.push_str(&row);
        out.push('\n');
    }
    out
}

pub fn simulate(reference: bool, config_path: Option<&Path>, seed: Option<u64>, output: &Path) -> Result<()> {
    let entries = match config_path {
        Some(p) if !reference => config::load(p)?,
        _ => config::Entries::new(),
    };
    let cfg = config::sim_config(&entries, seed)?;
    let (data, truth) = simulate_dataset(&cfg)?;
    let mut outputs: Vec<String> = write_dataset(output, &data)?.iter().map(|p| p.display().to_string()).collect();
    let truth_path = output.join(TRUTH_FILE);
    write_truth(&truth_path, &truth.table())?;
    outputs.push(truth_path.display().to_string());

    let resolved = config::sim_entries(&cfg);
    write_text(&output.join(CONFIG_FILE), &config::to_json(&resolved))?;
    let mut manifest = RunManifest::new("simulate", output, resolved)?;
    manifest.outputs = outputs;
    manifest.write(output)?;
    println!(
        "simulated {} individuals, {} responses (seed {}) into {}",
        data.n_individuals(),
        data.n_items(),
        cfg.seed,
        output.display()
    );
    Ok(())
}

pub fn validate(data_dir: &Path, output: Option<&Path>) -> Result<()> {
    let data = read_dataset(data_dir)?;
    let report = validate_dataset(&data);
    println!("{report}");
    if let Some(dir) = output {
        create_dir(dir)?;
        let rows = report.violations.iter().map(|v| {
            format!("\"{}\",{}", v.clause, v.individual.map(|i| (i + 1).to_string()).unwrap_or_default())
        });
        write_text(&dir.join(VALIDATION_FILE), &csv_text("clause,individual", rows))?;
    }
    if report.passed() {
        Ok(())
    } else {
        Err(Error::Validation(report))
    }
}

#[derive(Debug, Clone)]
pub struct FitRequest {
    pub data: PathBuf,
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub iterations: Option<usize>,
    pub burn_in: Option<usize>,
    pub thin: Option<usize>,
    pub chains: Option<usize>,
    pub mode: Option<String>,
    pub drift_sd: Option<f64>,
    pub output: PathBuf,
}

fn resolve(req: &FitRequest) -> Result<FitSettings> {
    let mut settings = FitSettings::default();
    if let Some(path) = &req.config {
        settings.apply(&config::load(path)?)?;
    }
    let s = &mut settings.sampler;
    if let Some(v) = req.seed {
        s.seed = v;
    }
    if let Some(v) = req.iterations {
        s.n_iterations = v;
    }
    if let Some(v) = req.burn_in {
        s.burn_in = v;
    }
    if let Some(v) = req.thin {
        s.thin = v;
    }
    if let Some(v) = &req.mode {
        s.mode = config::parse_mode(v)?;
    }
    if let Some(v) = req.drift_sd {
        s.fixed_drift_sd = Some(v);
    }
    if let Some(v) = req.chains {
        settings.chains = v;
    }
    settings.validate()?;
    Ok(settings)
}

fn chain_dir(output: &Path, k: usize) -> PathBuf {
    output.join(format!("chain-{}", k + 1))
}

fn write_raw_scores(path: &Path, data: &Dataset) -> Result<()> {
    let rows = data.subjects().iter().enumerate().flat_map(|(i, s)| {
        raw_scores(s).into_iter().enumerate().map(move |(d, r)| {
            let flag = match r.saturation {
                None => "",
                Some(Saturation::AllCorrect) => "all_correct",
                Some(Saturation::AllIncorrect) => "all_incorrect",
            };
            format!("{},{},{},{flag}", i + 1, d + 1, fmt_float(r.theta))
        })
    });
    write_text(path, &csv_text("individual,day,theta,saturation", rows))
}

pub fn fit(req: &FitRequest) -> Result<()> {
    let settings = resolve(req)?;
    let data = read_dataset(&req.data)?;
    let report = validate_dataset(&data);
    if !report.passed() {
        return Err(Error::Validation(report));
    }
    create_dir(&req.output)?;
    let mut outputs = Vec::new();
    let mut manifest = RunManifest::new(&format!("fit --mode {}", settings.sampler.mode), &req.data, settings.entries())?;

    match settings.sampler.mode {
        Mode::Retrospective => {
            let seeds: Vec<u64> = (0..settings.chains as u64).map(|k| settings.sampler.seed.wrapping_add(k)).collect();
            let chains: Vec<ChainOutput> = seeds
                .par_iter()
                .map(|&seed| {
                    let config = dir_core::model::SamplerConfig { seed, ..settings.sampler.clone() };
                    fit_chain(&data, &settings.constants, &config)
                })
                .collect::<Result<_>>()?;
            for (k, chain) in chains.iter().enumerate() {
                let dir = chain_dir(&req.output, k);
                create_dir(&dir)?;
                write_traces(&dir.join(TRACES_FILE), &chain.draws)?;
                write_summary(&dir.join(SUMMARY_FILE), &chain.summary)?;
                outputs.push(dir.join(TRACES_FILE).display().to_string());
                outputs.push(dir.join(SUMMARY_FILE).display().to_string());
                println!(
                    "chain {}: seed {}, {} draws, {:.1} s, {} guard re-draws",
                    k + 1,
                    chain.meta.seed,
                    chain.draws.n_draws(),
                    chain.meta.wall_time_secs,
                    chain.meta.guard_redraws
                );
            }
            let sets: Vec<DrawSet> = chains.into_iter().map(|c| c.draws).collect();
            let pooled = DrawSet::pool(&sets)?.summarize()?;
            write_summary(&req.output.join(SUMMARY_FILE), &pooled)?;
            print_headline(&pooled);
            manifest.chain_seeds = seeds;
        }
        Mode::Online => {
            let trajectories = fit_online(&data, &settings.constants, &settings.sampler)?;
            let mut rows = Vec::new();
            let mut summary = Vec::new();
            for traj in &trajectories {
                for p in &traj.points {
                    rows.push(format!(
                        "{},{},{},{},{},{}",
                        traj.individual + 1,
                        p.day,
                        fmt_float(p.q025),
                        fmt_float(p.median),
                        fmt_float(p.q975),
                        p.relaxed as u8
                    ));
                    summary.push(SummaryRow {
                        key: QuantityKey::theta(traj.individual, p.day),
                        q025: p.q025,
                        median: p.median,
                        q975: p.q975,
                    });
                }
            }
            write_text(&req.output.join(ONLINE_FILE), &csv_text("individual,day,q025,median,q975,relaxed", rows))?;
            write_summary(&req.output.join(SUMMARY_FILE), &summary)?;
            outputs.push(req.output.join(ONLINE_FILE).display().to_string());
            let relaxed = trajectories.iter().flat_map(|t| &t.points).filter(|p| p.relaxed).count();
            println!("on-line estimates for {} individuals ({relaxed} points under the relaxed gate)", trajectories.len());
        }
    }
    write_raw_scores(&req.output.join(RAW_SCORES_FILE), &data)?;
    outputs.push(req.output.join(SUMMARY_FILE).display().to_string());
    outputs.push(req.output.join(RAW_SCORES_FILE).display().to_string());
    write_text(&req.output.join(CONFIG_FILE), &config::to_json(&settings.entries()))?;
    manifest.outputs = outputs;
    manifest.write(&req.output)?;
    Ok(())
}

fn print_headline(summary: &[SummaryRow]) {
    if let Some(r) = summary.iter().find(|r| r.key == QuantityKey::global(Quantity::DriftSd)) {
        println!("drift sd: median {:.4}, 95% interval [{:.4}, {:.4}]", r.median, r.q025, r.q975);
    }
}

/// Trace files of a run: one per chain directory, or a single top-level file.
fn trace_files(run: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(run).map_err(|source| Error::Io { path: run.display().to_string(), source })?;
    let mut chains: Vec<(usize, PathBuf)> = entries
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            let k = name.strip_prefix("chain-")?.parse().ok()?;
            let traces = e.path().join(TRACES_FILE);
            traces.exists().then_some((k, traces))
        })
        .collect();
    chains.sort();
    let mut files: Vec<PathBuf> = chains.into_iter().map(|(_, p)| p).collect();
    if files.is_empty() && run.join(TRACES_FILE).exists() {
        files.push(run.join(TRACES_FILE));
    }
    Ok(files)
}

fn find_truth(run: &Path, explicit: Option<&Path>) -> Result<Option<TruthTable>> {
    if let Some(p) = explicit {
        return read_truth(p).map(Some);
    }
    let mut candidates = vec![run.join(TRUTH_FILE)];
    if let Ok(text) = fs::read_to_string(run.join(MANIFEST_FILE)) {
        if let Some(data) = serde_json::from_str::<serde_json::Value>(&text).ok().and_then(|v| v["data"].as_str().map(PathBuf::from)) {
            candidates.push(data.join(TRUTH_FILE));
        }
    }
    candidates.into_iter().find(|p| p.exists()).map(|p| read_truth(&p)).transpose()
}

pub fn summarize(run: &Path, truth_path: Option<&Path>, output: Option<&Path>) -> Result<()> {
    let out_dir = output.unwrap_or(run);
    create_dir(out_dir)?;
    let files = trace_files(run)?;
    let summary = if files.is_empty() {
        read_summary(&run.join(SUMMARY_FILE))?
    } else {
        let sets = files.iter().map(|p| read_traces(p)).collect::<Result<Vec<_>>>()?;
        let pooled = DrawSet::pool(&sets)?;
        println!("pooled {} draws from {} chain(s)", pooled.n_draws(), sets.len());
        pooled.summarize()?
    };
    write_summary(&out_dir.join(SUMMARY_FILE), &summary)?;
    print_headline(&summary);

    let Some(truth) = find_truth(run, truth_path)? else {
        println!("no truth file found; coverage omitted");
        return Ok(());
    };
    let c = coverage(&summary, &truth)?;
    println!("ability coverage of 95% intervals");
    println!("{:>10} {:>8} {:>6} {:>9}", "individual", "covered", "total", "fraction");
    let mut rows = Vec::new();
    for (i, &(covered, total)) in c.per_individual_counts.iter().enumerate() {
        let frac = covered as f64 / total as f64;
        println!("{:>10} {covered:>8} {total:>6} {frac:>9.3}", i + 1);
        rows.push(format!("{},{covered},{total},{}", i + 1, fmt_float(frac)));
    }
    println!("{:>10} {:>8} {:>6} {:>9.3}", "all", c.covered, c.total, c.overall);
    rows.push(format!("all,{},{},{}", c.covered, c.total, fmt_float(c.overall)));
    write_text(&out_dir.join(COVERAGE_FILE), &csv_text("individual,covered,total,fraction", rows))?;

    if summary.iter().any(|r| r.key.quantity != Quantity::Theta) {
        let p = parameter_coverage(&summary, &truth)?;
        println!("parameter coverage: {}/{} ({:.3})", p.covered, p.total, p.fraction());
        let rows = summary.iter().filter(|r| r.key.quantity != Quantity::Theta).map(|r| {
            let value = truth[&r.key];
            format!(
                "{},{},{},{},{},{},{}",
                r.key.quantity,
                r.key.individual.map(|i| (i + 1).to_string()).unwrap_or_default(),
                fmt_float(value),
                fmt_float(r.q025),
                fmt_float(r.median),
                fmt_float(r.q975),
                r.contains(value) as u8
            )
        });
        write_text(&out_dir.join(PARAMETERS_FILE), &csv_text("quantity,individual,truth,q025,median,q975,covered", rows))?;
    }
    Ok(())
}
