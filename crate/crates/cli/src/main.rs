//! `mvsim`: run, validate and summarize model version update simulations.

mod manifest;

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use mvsim_core::domain::{CurveMode, VersionId};
use mvsim_core::policies::EpsilonSchedule;
use mvsim_core::report::{self, run_dir, summarize, write_boxplot_file, write_run, write_summary, ReportError, RunDigest};
use mvsim_core::scenario::{preset_source, validate, Severity, PRESETS};
use mvsim_core::simulator::SimError;
use mvsim_core::{run, PolicyKind, RunOptions, Scenario, ScenarioError};
use rayon::prelude::*;
use thiserror::Error;

use manifest::{sha256_hex, Manifest};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("{0} already holds results; pass --overwrite to replace them")]
    OutputExists(PathBuf),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("{} of {total} runs failed:\n{}", .failed.len(), .failed.iter().map(|(p, s, e)| format!("  {p} seed {s}: {e}")).collect::<Vec<_>>().join("\n"))]
    RunsFailed {
        total: usize,
        failed: Vec<(PolicyKind, u64, String)>,
    },
    #[error("scenario has errors")]
    Invalid,
}

impl CliError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Parser)]
#[command(name = "mvsim", version, about = "Model version update simulator for RAN edge clusters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (policy, seed) pair and write traces, logs and a summary.
    Run(RunArgs),
    /// Check a scenario file and print its diagnostics.
    Validate(ScenarioArgs),
    /// Recompute summary.json and boxplot.csv from the traces in an output directory.
    Summarize(DirArgs),
    /// Write plotting tables (box plots, attribute curves, exploration schedule).
    PlotData(PlotArgs),
}

#[derive(Args)]
#[group(required = false, multiple = false)]
struct ScenarioArgs {
    /// Scenario TOML file.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Bundled scenario name.
    #[arg(long)]
    preset: Option<String>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    source: ScenarioArgs,
    /// Reproduce the runs recorded in a manifest.json.
    #[arg(long, conflicts_with_all = ["scenario", "preset", "policies", "seeds", "events", "curve_mode", "qtable_in", "no_policy_log"])]
    manifest: Option<PathBuf>,
    /// Comma-separated policies (always, never, random, load-based, rl).
    #[arg(long, value_delimiter = ',')]
    policies: Option<Vec<PolicyKind>>,
    /// Seeds as a list and/or ranges, e.g. `1-10` or `1,4,7-9`.
    #[arg(long, value_parser = parse_seeds)]
    seeds: Option<SeedList>,
    /// Event horizon (arrivals plus departures) overriding the scenario.
    #[arg(long)]
    events: Option<u64>,
    /// Attribute curve mode: geometric or percent-step.
    #[arg(long)]
    curve_mode: Option<CurveMode>,
    /// Q-table CSV to start the learning agent from.
    #[arg(long)]
    qtable_in: Option<PathBuf>,
    /// Skip writing policy_log.csv contents.
    #[arg(long)]
    no_policy_log: bool,
    #[command(flatten)]
    out: OutArgs,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    parallel: usize,
    /// Replace results already present in the output directory.
    #[arg(long)]
    overwrite: bool,
}

#[derive(Args)]
struct OutArgs {
    /// Output directory.
    #[arg(long, env = "MVSIM_OUT_DIR", default_value = "mvsim-out")]
    out: PathBuf,
}

#[derive(Args)]
struct DirArgs {
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct PlotArgs {
    #[command(flatten)]
    out: OutArgs,
    /// Rows of epsilon.csv.
    #[arg(long, default_value_t = 1000)]
    points: u64,
}

#[derive(Debug, Clone)]
struct SeedList(Vec<u64>);

fn parse_seeds(s: &str) -> Result<SeedList, String> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let num = |x: &str| x.trim().parse::<u64>().map_err(|e| format!("`{x}`: {e}"));
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b) = (num(a)?, num(b)?);
                if a > b {
                    return Err(format!("empty range `{part}`"));
                }
                out.extend(a..=b);
            }
            None => out.push(num(part)?),
        }
    }
    if out.is_empty() {
        return Err("no seeds given".into());
    }
    Ok(SeedList(out))
}

fn scenario_text(args: &ScenarioArgs) -> Result<(String, String), CliError> {
    match (&args.scenario, &args.preset) {
        (Some(p), _) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            Ok((p.display().to_string(), text))
        }
        (None, name) => {
            let name = name.as_deref().unwrap_or("oran-edge");
            let text = preset_source(name).ok_or_else(|| CliError::UnknownPreset(name.into()))?;
            Ok((format!("preset:{name}"), text.to_string()))
        }
    }
}

fn manifest_from_args(a: &RunArgs) -> Result<Manifest, CliError> {
    let (source, text) = scenario_text(&a.source)?;
    let sc = Scenario::from_toml(&text)?;
    let warm = match &a.qtable_in {
        Some(p) => Some(fs::read_to_string(p).map_err(|e| CliError::io(p, e))?),
        None => None,
    };
    Ok(Manifest {
        mvsim_version: env!("CARGO_PKG_VERSION").to_string(),
        scenario_source: source,
        scenario_sha256: sha256_hex(text.as_bytes()),
        scenario_toml: text,
        policies: a.policies.clone().unwrap_or(sc.policies),
        seeds: a.seeds.clone().map_or(sc.seeds, |s| s.0),
        events: a.events,
        curve_mode: a.curve_mode.map(|m| match m {
            CurveMode::Geometric => "geometric".into(),
            CurveMode::PercentStep => "percent-step".into(),
        }),
        policy_log: !a.no_policy_log,
        warm_start_sha256: warm.as_ref().map(|t| sha256_hex(t.as_bytes())),
        warm_start_qtable: warm,
    })
}

/// Files and directories a run owns inside the output directory.
const OWNED: &[&str] = &["runs", "summary.json", "boxplot.csv", manifest::FILE, "plot"];

fn prepare_out(out: &Path, overwrite: bool) -> Result<(), CliError> {
    let taken: Vec<PathBuf> = OWNED.iter().map(|n| out.join(n)).filter(|p| p.exists()).collect();
    if !taken.is_empty() {
        if !overwrite {
            return Err(CliError::OutputExists(out.to_path_buf()));
        }
        for p in taken {
            let r = if p.is_dir() { fs::remove_dir_all(&p) } else { fs::remove_file(&p) };
            r.map_err(|e| CliError::io(&p, e))?;
        }
    }
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))
}

fn cmd_run(a: RunArgs) -> Result<(), CliError> {
    let m = match &a.manifest {
        Some(p) => {
            let dir = if p.is_dir() { p.clone() } else { p.parent().map(Path::to_path_buf).unwrap_or_default() };
            Manifest::read(&dir)?
        }
        None => manifest_from_args(&a)?,
    };
    let sc = m.scenario()?;
    let warm = m.warm_start(&sc)?;
    for w in &sc.warnings {
        eprintln!("{w}");
    }
    let out = a.out.out;
    prepare_out(&out, a.overwrite)?;
    m.write(&out)?;

    let grid: Vec<(PolicyKind, u64)> = m
        .policies
        .iter()
        .flat_map(|&p| m.seeds.iter().map(move |&s| (p, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.parallel)
        .build()
        .expect("thread pool");
    let started = Instant::now();
    let results: Vec<Result<RunDigest, (PolicyKind, u64, String)>> = pool.install(|| {
        grid.par_iter()
            .map(|&(policy, seed)| {
                let opts = RunOptions {
                    audit: false,
                    policy_log: m.policy_log,
                    warm_start: if policy == PolicyKind::Rl { warm.clone() } else { None },
                };
                let t = Instant::now();
                let outcome = run(&sc, policy, seed, opts)
                    .map_err(|e: SimError| e.to_string())
                    .and_then(|o| {
                        write_run(&out, &sc, &o).map_err(|e| e.to_string())?;
                        RunDigest::from_output(&o, sc.models.len()).map_err(|e| e.to_string())
                    });
                match &outcome {
                    Ok(_) => eprintln!("{policy} seed {seed}: done in {:.1}s", t.elapsed().as_secs_f64()),
                    Err(e) => eprintln!("{policy} seed {seed}: failed: {e}"),
                }
                outcome.map_err(|e| (policy, seed, e))
            })
            .collect()
    });
    let mut digests = Vec::new();
    let mut failed = Vec::new();
    for r in results {
        match r {
            Ok(d) => digests.push(d),
            Err(f) => failed.push(f),
        }
    }
    if !digests.is_empty() {
        let summary = summarize(&digests, &sc.models);
        write_summary(&out, &summary)?;
        print_summary(&summary);
    }
    eprintln!(
        "{} runs in {:.1}s, results in {}",
        grid.len(),
        started.elapsed().as_secs_f64(),
        out.display()
    );
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::RunsFailed {
            total: grid.len(),
            failed,
        })
    }
}

fn print_summary(s: &report::Summary) {
    println!("{:<11} {:>14} {:>10} {:>10}", "policy", "delay_ms", "accuracy", "stability");
    for p in &s.policies {
        let mean = |f: fn(&mvsim_core::metrics::Objectives) -> f64| {
            p.runs.iter().map(|r| f(&r.overall)).sum::<f64>() / p.runs.len() as f64
        };
        println!(
            "{:<11} {:>14.3} {:>10.5} {:>10.5}",
            p.policy.as_str(),
            mean(|o| o.delay_ms),
            mean(|o| o.accuracy),
            mean(|o| o.stability)
        );
    }
}

fn cmd_validate(a: ScenarioArgs) -> Result<(), CliError> {
    let (source, text) = scenario_text(&a)?;
    match validate(&text) {
        Ok(warnings) => {
            for w in &warnings {
                println!("{w}");
            }
            let sc = Scenario::from_toml(&text)?;
            println!(
                "{source}: ok ({} models, {} nodes, {} policies, {} seeds, {} warnings)",
                sc.models.len(),
                sc.nodes.len(),
                sc.policies.len(),
                sc.seeds.len(),
                warnings.len()
            );
            Ok(())
        }
        Err(ScenarioError::Invalid(diags)) => {
            for d in &diags {
                println!("{d}");
            }
            let errors = diags.iter().filter(|d| d.severity == Severity::Error).count();
            println!("{source}: {errors} errors");
            Err(CliError::Invalid)
        }
        Err(e) => Err(e.into()),
    }
}

fn digests_from_disk(out: &Path, m: &Manifest, sc: &Scenario) -> Result<Vec<RunDigest>, CliError> {
    let names = sc.model_names();
    let mut digests = Vec::new();
    for &p in &m.policies {
        for &s in &m.seeds {
            let trace = run_dir(out, p, s).join("trace.csv");
            digests.push(RunDigest::from_trace_file(&trace, p, s, &names)?);
        }
    }
    Ok(digests)
}

fn cmd_summarize(a: DirArgs) -> Result<(), CliError> {
    let out = a.out.out;
    let m = Manifest::read(&out)?;
    let sc = m.scenario()?;
    let summary = summarize(&digests_from_disk(&out, &m, &sc)?, &sc.models);
    write_summary(&out, &summary)?;
    print_summary(&summary);
    Ok(())
}

fn cmd_plot_data(a: PlotArgs) -> Result<(), CliError> {
    let out = a.out.out;
    let m = Manifest::read(&out)?;
    let sc = m.scenario()?;
    let dir = out.join("plot");
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;

    let summary = summarize(&digests_from_disk(&out, &m, &sc)?, &sc.models);
    write_boxplot_file(&dir, &summary)?;

    let scheme = sc.attributes.scheme;
    let mut curves = String::from("model,version,label,service_time_ms,accuracy,stability\n");
    for model in &sc.models {
        for v in 0..=scheme.max_index {
            let v = VersionId(v);
            let at = sc.attributes.attributes_of(model, v).expect("version in range");
            curves += &format!(
                "{},{},{},{},{},{}\n",
                model.name,
                v.0,
                scheme.display(v),
                at.mean_service_time_ms,
                at.accuracy,
                at.stability
            );
        }
    }
    let p = dir.join("curves.csv");
    fs::write(&p, curves).map_err(|e| CliError::io(&p, e))?;

    let total = sc.scheduled_events();
    let rl = &sc.params.rl;
    let sched = EpsilonSchedule::new(rl.epsilon_start, rl.epsilon_min, total);
    let points = a.points.clamp(1, total.max(1));
    let mut eps = String::from("event,epsilon\n");
    for i in 0..=points {
        let e = total * i / points;
        eps += &format!("{e},{}\n", sched.at(e));
    }
    let p = dir.join("epsilon.csv");
    fs::write(&p, eps).map_err(|e| CliError::io(&p, e))?;
    println!("wrote boxplot.csv, curves.csv and epsilon.csv to {}", dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Validate(a) => cmd_validate(a),
        Command::Summarize(a) => cmd_summarize(a),
        Command::PlotData(a) => cmd_plot_data(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Invalid) => ExitCode::FAILURE,
        Err(e) => {
            if let CliError::UnknownPreset(_) = e {
                let names: Vec<&str> = PRESETS.iter().map(|p| p.0).collect();
                eprintln!("available presets: {}", names.join(", "));
            }
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("1-3,7").unwrap().0, vec![1, 2, 3, 7]);
        assert_eq!(parse_seeds("5").unwrap().0, vec![5]);
        assert!(parse_seeds("3-1").is_err());
        assert!(parse_seeds("x").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
