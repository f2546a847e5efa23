//! Run composition and sweeps: scenario → sensing → channel → fusion →
//! detection → tracking → CLEAR-MOT, repeated over fusion × latency × seed.

use crate::channel::{encode_message, Channel, ChannelMessage, CompressionConfig, Content, LatencyKind, LatencyModel, LogEntry};
use crate::detector::{detect, DetectParams};
use crate::error::{Error, Result};
use crate::fusion::{cooperative_feature, EgoInputs, FusionContext, FusionKind, FusionMethod, FusionParams};
use crate::metrics::{aggregate_run, evaluate_clearmot, read_reports_csv, write_reports_csv, RunInfo, RunReport};
use crate::scenario::{cooperative_gt_at_frame, generate_scenario, Provenance, Scenario, ScenarioConfig, TrackedObject, View};
use crate::sensing::{
    extract_feature_flow, rasterize_bev, sample_point_cloud, FeatureEncoder, FeatureFlow, FeatureGrid, GridSpec,
    NoiseConfig,
};
use crate::tracker::{Tracker, TrackerConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub fusion: Vec<FusionKind>,
    pub fusion_params: FusionParams,
    pub latencies_ms: Vec<f64>,
    /// Extra uniform delay in [0, jitter_ms] per message; 0 keeps latency constant.
    pub jitter_ms: f64,
    pub seeds: Vec<u64>,
    pub compression: CompressionConfig,
    pub noise: NoiseConfig,
    pub encoder: FeatureEncoder,
    pub detect: DetectParams,
    pub tracker: TrackerConfig,
    pub match_gate_m: f64,
    pub workers: usize,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioConfig::default(),
            fusion: FusionKind::ALL.to_vec(),
            fusion_params: FusionParams::default(),
            latencies_ms: vec![0.0, 100.0, 200.0, 300.0, 400.0, 500.0],
            jitter_ms: 0.0,
            seeds: (1..=20).collect(),
            compression: CompressionConfig::default(),
            noise: NoiseConfig::default(),
            encoder: FeatureEncoder::default(),
            detect: DetectParams::default(),
            tracker: TrackerConfig::default(),
            match_gate_m: 2.0,
            workers: 1,
            output_dir: PathBuf::from("results"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.tracker.validate()?;
        if self.fusion.is_empty() || self.latencies_ms.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("fusion, latencies_ms and seeds must be nonempty".into()));
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        if self.latencies_ms.iter().any(|l| !(*l >= 0.0 && l.is_finite())) || !(self.jitter_ms >= 0.0) {
            return Err(Error::Config("latencies must be finite and >= 0".into()));
        }
        if !(self.match_gate_m > 0.0) || self.workers == 0 {
            return Err(Error::Config("match_gate_m must be > 0 and workers >= 1".into()));
        }
        for &k in &self.fusion {
            self.method(k).validate()?;
        }
        Ok(())
    }

    pub fn method(&self, kind: FusionKind) -> FusionMethod {
        FusionMethod { kind, params: self.fusion_params }
    }

    pub fn latency_model(&self, latency_ms: f64, seed: u64) -> LatencyModel {
        LatencyModel {
            kind: if self.jitter_ms > 0.0 { LatencyKind::UniformRandom } else { LatencyKind::Constant },
            base_ms: latency_ms,
            jitter_ms: self.jitter_ms,
            seed,
        }
    }
}

/// Everything a single run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub log: Vec<LogEntry>,
    /// Per-frame ground truth and tracker output, ego frame.
    pub gt: Vec<Vec<TrackedObject>>,
    pub hyp: Vec<Vec<TrackedObject>>,
}

/// What the infrastructure publishes for a given fusion method.
struct InfraSender {
    kind: FusionKind,
    spec: GridSpec,
    encoder: FeatureEncoder,
    detect: DetectParams,
    prev: Option<FeatureGrid>,
}

impl InfraSender {
    fn content(&mut self, s: &Scenario, t: f64, noise: &NoiseConfig, seed: u64) -> Result<Option<Content>> {
        if self.kind == FusionKind::VehicleOnly {
            return Ok(None);
        }
        let pc = sample_point_cloud(s, t, View::Infra, noise, seed)?;
        if self.kind == FusionKind::Early {
            return Ok(Some(Content::RawPoints(pc)));
        }
        let grid = self.encoder.encode(&rasterize_bev(&pc, &self.spec));
        Ok(Some(match self.kind {
            FusionKind::Late => Content::Detections(detect(&grid, &self.detect)),
            FusionKind::MiddleStatic => Content::Feature(grid),
            FusionKind::MiddleFF => {
                let flow = match &self.prev {
                    Some(p) => extract_feature_flow(p, &grid)?,
                    None => FeatureFlow::zeros(grid.spec, grid.timestamp, grid.frame),
                };
                self.prev = Some(grid.clone());
                Content::FeatureWithFlow(grid, flow)
            }
            FusionKind::VehicleOnly | FusionKind::Early => unreachable!("handled above"),
        }))
    }
}

pub fn run_single_detailed(cfg: &ExperimentConfig, fusion: FusionKind, latency_ms: f64, seed: u64) -> Result<RunOutput> {
    let scenario = generate_scenario(&cfg.scenario, seed)?;
    run_on_scenario(cfg, &scenario, fusion, latency_ms, seed)
}

/// Runs the pipeline on an already generated scenario.
pub fn run_on_scenario(
    cfg: &ExperimentConfig,
    s: &Scenario,
    fusion: FusionKind,
    latency_ms: f64,
    seed: u64,
) -> Result<RunOutput> {
    run_lanes(cfg, s, seed, &[(fusion, latency_ms)])?.pop().expect("one lane")
}

/// One (fusion, latency) pipeline of a lockstep run.
struct Lane {
    fusion: FusionKind,
    latency_ms: f64,
    method: FusionMethod,
    channel: Channel,
    tracker: Tracker,
    fallback_frames: u64,
    hyp: Vec<Vec<TrackedObject>>,
    failed: Option<Error>,
}

impl Lane {
    fn step(
        &mut self,
        cfg: &ExperimentConfig,
        s: &Scenario,
        t: f64,
        outgoing: Option<(&Content, &Result<ChannelMessage>)>,
        ego: EgoInputs,
        ctx: &FusionContext,
    ) -> Result<()> {
        match outgoing {
            Some((_, Ok(m))) => self.channel.send_message(m.clone()),
            // Re-encode so this lane reports the encoding error itself.
            Some((content, Err(_))) => self.channel.send(content, &cfg.compression, t)?,
            None => {}
        }
        let msg = if self.fusion == FusionKind::VehicleOnly { None } else { self.channel.receive(t) };
        let out = cooperative_feature(&self.method, msg.as_ref(), t, ego, ctx)?;
        if out.fallback {
            self.fallback_frames += 1;
        }
        let dets = out.fused.into_detections(&cfg.detect);
        let mut tracks = self.tracker.step(&dets, t)?;
        tracks.retain(|o| s.region.contains(o.bbox.x, o.bbox.y));
        self.hyp.push(tracks);
        Ok(())
    }
}

/// Runs several (fusion, latency) pipelines over one scenario in lockstep so
/// that sensing, infrastructure encoding and ground truth are computed once per
/// frame. Outer errors come from those shared stages; per-lane errors are
/// returned in the lane's slot. Results are identical to separate runs.
pub fn run_lanes(
    cfg: &ExperimentConfig,
    s: &Scenario,
    seed: u64,
    lanes: &[(FusionKind, f64)],
) -> Result<Vec<Result<RunOutput>>> {
    let ego_spec = GridSpec::for_region(&s.region);
    let mut kinds: Vec<FusionKind> = lanes.iter().map(|l| l.0).collect();
    kinds.sort();
    kinds.dedup();
    let mut senders: Vec<InfraSender> = kinds
        .iter()
        .map(|&kind| InfraSender {
            kind,
            spec: GridSpec::sensor_centered(),
            encoder: cfg.encoder,
            detect: cfg.detect,
            prev: None,
        })
        .collect();
    let mut state: Vec<Lane> = lanes
        .iter()
        .map(|&(fusion, latency_ms)| {
            let method = cfg.method(fusion);
            let provenance = if fusion == FusionKind::VehicleOnly { Provenance::VehicleSide } else { Provenance::Fused };
            Lane {
                fusion,
                latency_ms,
                failed: method.validate().err(),
                method,
                channel: Channel::new(cfg.latency_model(latency_ms, seed)),
                tracker: Tracker::new(cfg.tracker).with_provenance(provenance),
                fallback_frames: 0,
                hyp: Vec::new(),
            }
        })
        .collect();
    let mut gt = Vec::new();

    for k in 0..s.num_frames() {
        let t = s.frame_time(k);
        let index = k as u64;
        let mut outgoing = Vec::with_capacity(senders.len());
        for sender in &mut senders {
            let content = sender.content(s, t, &cfg.noise, seed)?;
            let encoded = content.as_ref().map(|c| encode_message(c, &cfg.compression, t, index));
            outgoing.push((sender.kind, content, encoded));
        }
        let ego_cloud = sample_point_cloud(s, t, View::Vehicle, &cfg.noise, seed)?;
        let ego_grid = cfg.encoder.encode(&rasterize_bev(&ego_cloud, &ego_spec));
        let ctx = FusionContext {
            spec: ego_spec,
            encoder: cfg.encoder,
            detect: cfg.detect,
            infra_to_ego: s.infra_to_ego(k),
        };
        for lane in state.iter_mut().filter(|l| l.failed.is_none()) {
            let (_, content, encoded) = outgoing.iter().find(|o| o.0 == lane.fusion).expect("sender per kind");
            let out = content.as_ref().zip(encoded.as_ref());
            let ego = EgoInputs { cloud: &ego_cloud, grid: &ego_grid };
            if let Err(e) = lane.step(cfg, s, t, out, ego, &ctx) {
                lane.failed = Some(e);
            }
        }
        gt.push(cooperative_gt_at_frame(s, k)?);
    }

    Ok(state
        .into_iter()
        .map(|lane| {
            if let Some(e) = lane.failed {
                return Err(e);
            }
            let mot = evaluate_clearmot(&gt, &lane.hyp, cfg.match_gate_m)?;
            let log = lane.channel.into_log();
            let info = RunInfo {
                fusion: lane.fusion,
                latency_ms: lane.latency_ms,
                seed,
                fallback_frames: lane.fallback_frames,
                match_gate_m: cfg.match_gate_m,
            };
            let report = aggregate_run(&mot, &log, s.duration, info);
            Ok(RunOutput { report, log, gt: gt.clone(), hyp: lane.hyp })
        })
        .collect())
}

pub fn run_single(cfg: &ExperimentConfig, fusion: FusionKind, latency_ms: f64, seed: u64) -> Result<RunReport> {
    run_single_detailed(cfg, fusion, latency_ms, seed).map(|o| o.report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub fusion: FusionKind,
    pub latency_ms: f64,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub fusion: FusionKind,
    pub latency_ms: f64,
    pub runs: usize,
    pub mota: f64,
    pub motp: f64,
    pub ids: f64,
    pub bps_pre: f64,
    pub bps_post: f64,
    pub fallback_frames: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub reports: Vec<RunReport>,
    pub failures: Vec<RunFailure>,
    pub summary: Vec<SummaryRow>,
}

impl SweepResult {
    pub fn complete(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Sweep cells in output order: fusion (as configured), then latency, then seed.
pub fn sweep_cells(cfg: &ExperimentConfig) -> Vec<(FusionKind, f64, u64)> {
    let mut cells = Vec::new();
    for &f in &cfg.fusion {
        for &l in &cfg.latencies_ms {
            for &s in &cfg.seeds {
                cells.push((f, l, s));
            }
        }
    }
    cells
}

pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let cells = sweep_cells(cfg);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    // Scenarios depend only on the seed, so generate each once.
    let scenarios: BTreeMap<u64, std::result::Result<Scenario, String>> = pool.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&s| (s, generate_scenario(&cfg.scenario, s).map_err(|e| e.to_string())))
            .collect()
    });
    // All (fusion, latency) lanes of a seed share sensing, so run them together.
    let lanes: Vec<(FusionKind, f64)> =
        cfg.fusion.iter().flat_map(|&f| cfg.latencies_ms.iter().map(move |&l| (f, l))).collect();
    let per_seed: BTreeMap<u64, Vec<std::result::Result<RunReport, String>>> = pool.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&seed| {
                let results = match &scenarios[&seed] {
                    Ok(s) => match run_lanes(cfg, s, seed, &lanes) {
                        Ok(rs) => rs.into_iter().map(|r| r.map(|o| o.report).map_err(|e| e.to_string())).collect(),
                        Err(e) => vec![Err(e.to_string()); lanes.len()],
                    },
                    Err(e) => vec![Err(e.clone()); lanes.len()],
                };
                (seed, results)
            })
            .collect()
    });
    let lane_of = |f: FusionKind, l: f64| lanes.iter().position(|&(a, b)| a == f && b == l).expect("lane");
    let outcomes = cells.iter().map(|&(fusion, latency_ms, seed)| {
        per_seed[&seed][lane_of(fusion, latency_ms)]
            .clone()
            .map_err(|error| RunFailure { fusion, latency_ms, seed, error })
    });
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => reports.push(r),
            Err(f) => failures.push(f),
        }
    }
    let summary = summarize(&reports);
    Ok(SweepResult { reports, failures, summary })
}

/// Per (fusion, latency) means over seeds, in first-appearance order.
pub fn summarize(reports: &[RunReport]) -> Vec<SummaryRow> {
    let mut order: Vec<(FusionKind, u64)> = Vec::new();
    let mut groups: BTreeMap<(FusionKind, u64), Vec<&RunReport>> = BTreeMap::new();
    for r in reports {
        let key = (r.fusion, r.latency_ms.to_bits());
        groups
            .entry(key)
            .or_insert_with(|| {
                order.push(key);
                Vec::new()
            })
            .push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let g = &groups[&key];
            let n = g.len() as f64;
            let mean = |f: fn(&RunReport) -> f64| g.iter().map(|r| f(r)).sum::<f64>() / n;
            SummaryRow {
                fusion: key.0,
                latency_ms: f64::from_bits(key.1),
                runs: g.len(),
                mota: mean(|r| r.mota),
                motp: mean(|r| r.motp),
                ids: mean(|r| r.ids as f64),
                bps_pre: mean(|r| r.bps_pre),
                bps_post: mean(|r| r.bps_post),
                fallback_frames: mean(|r| r.fallback_frames as f64),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReportFormat {
    Csv,
    Json,
}

const SUMMARY_COLUMNS: [&str; 9] =
    ["fusion", "latency_ms", "runs", "mota", "motp", "ids", "bps_pre", "bps_post", "fallback_frames"];
const CURVE_COLUMNS: [&str; 5] = ["latency_ms", "mota", "motp", "ids", "bps_post"];

fn f4(v: f64) -> String {
    format!("{v:.4}")
}

/// Writes `reports.csv` or `reports.json` into `dir`.
pub fn emit_report(reports: &[RunReport], format: ReportFormat, dir: &Path) -> Result<PathBuf> {
    if reports.is_empty() {
        return Err(Error::EmptyReports);
    }
    fs::create_dir_all(dir)?;
    Ok(match format {
        ReportFormat::Csv => {
            let p = dir.join("reports.csv");
            write_reports_csv(reports, BufWriter::new(fs::File::create(&p)?))?;
            p
        }
        ReportFormat::Json => {
            let p = dir.join("reports.json");
            serde_json::to_writer_pretty(BufWriter::new(fs::File::create(&p)?), reports)?;
            p
        }
    })
}

pub fn emit_summary(summary: &[SummaryRow], format: ReportFormat, dir: &Path) -> Result<Vec<PathBuf>> {
    if summary.is_empty() {
        return Err(Error::EmptyReports);
    }
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    match format {
        ReportFormat::Csv => {
            let p = dir.join("summary.csv");
            let mut w = csv::Writer::from_path(&p)?;
            w.write_record(SUMMARY_COLUMNS)?;
            for r in summary {
                w.write_record([
                    r.fusion.to_string(),
                    f4(r.latency_ms),
                    r.runs.to_string(),
                    f4(r.mota),
                    f4(r.motp),
                    f4(r.ids),
                    f4(r.bps_pre),
                    f4(r.bps_post),
                    f4(r.fallback_frames),
                ])?;
            }
            w.flush()?;
            written.push(p);
            let fusions: Vec<FusionKind> = summary.iter().map(|r| r.fusion).fold(Vec::new(), |mut v, f| {
                if !v.contains(&f) {
                    v.push(f);
                }
                v
            });
            for f in fusions {
                let p = dir.join(format!("latency_curve_{f}.csv"));
                let mut w = csv::Writer::from_path(&p)?;
                w.write_record(CURVE_COLUMNS)?;
                let mut rows: Vec<&SummaryRow> = summary.iter().filter(|r| r.fusion == f).collect();
                rows.sort_by(|a, b| a.latency_ms.total_cmp(&b.latency_ms));
                for r in rows {
                    w.write_record([f4(r.latency_ms), f4(r.mota), f4(r.motp), f4(r.ids), f4(r.bps_post)])?;
                }
                w.flush()?;
                written.push(p);
            }
        }
        ReportFormat::Json => {
            let p = dir.join("summary.json");
            serde_json::to_writer_pretty(BufWriter::new(fs::File::create(&p)?), summary)?;
            written.push(p);
        }
    }
    Ok(written)
}

/// Reports, summary, latency curves and (if any) failures.
pub fn write_sweep_outputs(sweep: &SweepResult, format: ReportFormat, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = vec![emit_report(&sweep.reports, format, dir)?];
    written.extend(emit_summary(&sweep.summary, format, dir)?);
    if !sweep.failures.is_empty() {
        let p = dir.join("failures.json");
        serde_json::to_writer_pretty(BufWriter::new(fs::File::create(&p)?), &sweep.failures)?;
        written.push(p);
    }
    Ok(written)
}

/// Parses a `reports.csv` written by [`emit_report`].
pub fn load_reports_csv(path: &Path) -> Result<Vec<RunReport>> {
    read_reports_csv(fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.scenario.duration_s = 1.0;
        cfg.scenario.num_agents = 3;
        cfg.fusion = vec![FusionKind::VehicleOnly];
        cfg.latencies_ms = vec![0.0];
        cfg.seeds = vec![1, 2, 3];
        cfg
    }

    #[test]
    fn config_validation() {
        assert!(ExperimentConfig::default().validate().is_ok());
        let mut c = tiny();
        c.seeds = vec![1, 1];
        assert!(c.validate().is_err());
        let mut c = tiny();
        c.fusion.clear();
        assert!(c.validate().is_err());
        let mut c = tiny();
        c.latencies_ms = vec![-1.0];
        assert!(c.validate().is_err());
        assert!(ExperimentConfig::from_toml_str("bogus = 1").is_err());
        let c = ExperimentConfig::from_toml_str("seeds = [4, 5]\nfusion = [\"MiddleFF\", \"Late\"]\n[tracker]\nmin_hits = 2\n").unwrap();
        assert_eq!(c.seeds, vec![4, 5]);
        assert_eq!(c.fusion, vec![FusionKind::MiddleFF, FusionKind::Late]);
        assert_eq!(c.tracker.min_hits, 2);
    }

    #[test]
    fn sweep_counts_and_summary_mean() {
        let sweep = run_sweep(&tiny()).unwrap();
        assert!(sweep.complete());
        assert_eq!(sweep.reports.len(), 3);
        assert_eq!(sweep.summary.len(), 1);
        let mean = sweep.reports.iter().map(|r| r.mota).sum::<f64>() / 3.0;
        assert!((sweep.summary[0].mota - mean).abs() < 1e-12);
        assert_eq!(sweep_cells(&ExperimentConfig::default()).len(), 600);
    }

    #[test]
    fn vehicle_only_sends_nothing() {
        let r = run_single(&tiny(), FusionKind::VehicleOnly, 300.0, 1).unwrap();
        assert_eq!((r.bps_pre, r.bps_post, r.fallback_frames), (0.0, 0.0, 0));
    }

    #[test]
    fn emit_rejects_empty() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        assert!(matches!(emit_report(&[], ReportFormat::Csv, &out), Err(Error::EmptyReports)));
        assert!(!out.exists());
    }
}
