use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use coopsim::annotate::{self, AnnotateConfig};
use coopsim::experiment::{self, ExperimentConfig, ReportFormat};
use coopsim::metrics::evaluate_clearmot;
use coopsim::tracker::TrackRecord;
use coopsim::{generate_scenario, Provenance, TrackedObject};
use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "coopsim", version, about = "Vehicle-infrastructure cooperative tracking simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a fusion × latency × seed sweep and write reports.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Cross-view matching, fragmentation and interest scoring of a trajectory file.
    Annotate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// TOML file with annotation settings.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Standalone CLEAR-MOT evaluation of two track files.
    Eval {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long, default_value_t = 2.0)]
        gate: f64,
    },
    /// Write per-view simulator trajectories, suitable as `annotate` input.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Center noise added to every box, meters.
        #[arg(long, default_value_t = 0.0)]
        sigma: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.cmd {
        Cmd::Run { config, out, workers, format } => run_sweep(&config, out, workers, format),
        Cmd::Annotate { input, out, config } => run_annotate(&input, &out, config.as_deref()).map(|_| true),
        Cmd::Eval { gt, hyp, gate } => run_eval(&gt, &hyp, gate).map(|_| true),
        Cmd::Simulate { config, seed, sigma, out } => run_simulate(config.as_deref(), seed, sigma, &out).map(|_| true),
    }
}

fn run_sweep(config: &Path, out: Option<PathBuf>, workers: Option<usize>, format: Format) -> Result<bool> {
    let mut cfg = ExperimentConfig::load(config).with_context(|| format!("loading {}", config.display()))?;
    if let Some(w) = workers {
        cfg.workers = w;
    }
    cfg.validate()?;
    let dir = out.unwrap_or_else(|| cfg.output_dir.clone());
    let sweep = experiment::run_sweep(&cfg)?;
    for f in &sweep.failures {
        eprintln!("run failed: {} @ {} ms, seed {}: {}", f.fusion, f.latency_ms, f.seed, f.error);
    }
    if sweep.reports.is_empty() {
        bail!("no run completed");
    }
    let format = match format {
        Format::Csv => ReportFormat::Csv,
        Format::Json => ReportFormat::Json,
    };
    for p in experiment::write_sweep_outputs(&sweep, format, &dir)? {
        println!("{}", p.display());
    }
    Ok(sweep.complete())
}

fn run_annotate(input: &Path, out: &Path, config: Option<&Path>) -> Result<()> {
    let cfg: AnnotateConfig = match config {
        Some(p) => toml::from_str(&fs::read_to_string(p)?).with_context(|| format!("parsing {}", p.display()))?,
        None => AnnotateConfig::default(),
    };
    let trajs = annotate::read_trajectories(BufReader::new(fs::File::open(input)?))
        .with_context(|| format!("reading {}", input.display()))?;
    let result = annotate::annotate(&trajs, &cfg)?;
    fs::create_dir_all(out)?;
    annotate::write_trajectories(&result.cooperative, BufWriter::new(fs::File::create(out.join("cooperative.jsonl"))?))?;
    let mut w = BufWriter::new(fs::File::create(out.join("matches.csv"))?);
    writeln!(w, "vehicle_id,infra_id,similarity")?;
    for m in &result.matches {
        writeln!(w, "{},{},{:.4}", m.vehicle_id, m.infra_id, m.score)?;
    }
    w.flush()?;
    let mut w = BufWriter::new(fs::File::create(out.join("fragments.csv"))?);
    writeln!(w, "fragment,start,end,full,trajectories")?;
    for (i, f) in result.fragments.iter().enumerate() {
        writeln!(w, "{i},{:.4},{:.4},{},{}", f.start, f.end, f.full, f.trajectories.len())?;
    }
    w.flush()?;
    let mut w = BufWriter::new(fs::File::create(out.join("interest.csv"))?);
    writeln!(w, "fragment,start,full,track_id,score")?;
    for r in &result.interest {
        writeln!(w, "{},{:.4},{},{},{:.4}", r.fragment, r.start, r.full, r.track_id, r.score)?;
    }
    w.flush()?;
    println!(
        "{} matches, {} cooperative trajectories, {} fragments",
        result.matches.len(),
        result.cooperative.len(),
        result.fragments.len()
    );
    Ok(())
}

fn read_frames(path: &Path) -> Result<BTreeMap<i64, Vec<TrackedObject>>> {
    let mut frames: BTreeMap<i64, Vec<TrackedObject>> = BTreeMap::new();
    for (n, line) in BufReader::new(fs::File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: TrackRecord =
            serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), n + 1))?;
        frames.entry((r.t * 1000.0).round() as i64).or_default().push(TrackedObject {
            bbox: r.bbox,
            track_id: r.track_id,
            timestamp: r.t,
            provenance: Provenance::Fused,
            score: r.score,
        });
    }
    Ok(frames)
}

fn run_eval(gt: &Path, hyp: &Path, gate: f64) -> Result<()> {
    if !(gate > 0.0) {
        bail!("--gate must be > 0");
    }
    let g = read_frames(gt)?;
    let h = read_frames(hyp)?;
    let mut keys: Vec<i64> = g.keys().chain(h.keys()).copied().collect();
    keys.sort_unstable();
    keys.dedup();
    let pick = |m: &BTreeMap<i64, Vec<TrackedObject>>, k| m.get(k).cloned().unwrap_or_default();
    let gf: Vec<Vec<TrackedObject>> = keys.iter().map(|k| pick(&g, k)).collect();
    let hf: Vec<Vec<TrackedObject>> = keys.iter().map(|k| pick(&h, k)).collect();
    let mot = evaluate_clearmot(&gf, &hf, gate)?;
    println!("{}", serde_json::to_string_pretty(&mot)?);
    Ok(())
}

fn run_simulate(config: Option<&Path>, seed: u64, sigma: f64, out: &Path) -> Result<()> {
    let cfg = match config {
        Some(p) => ExperimentConfig::load(p)?.scenario,
        None => ExperimentConfig::default().scenario,
    };
    let s = generate_scenario(&cfg, seed)?;
    let trajs = annotate::simulated_trajectories(&s, sigma, seed)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    annotate::write_trajectories(&trajs, BufWriter::new(fs::File::create(out)?))?;
    println!("{} trajectories written to {}", trajs.len(), out.display());
    Ok(())
}
