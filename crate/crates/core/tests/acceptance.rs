//! End-to-end acceptance checks. Runs every criterion, prints one PASS/FAIL
//! line each, and exits non-zero if any failed.

use coopsim::assignment::{assignment_cost, solve_assignment};
use coopsim::channel::{compress_grid, decompress_grid};
use coopsim::experiment::{self, ExperimentConfig, ReportFormat};
use coopsim::scenario::{ground_truth_at, AgentConfig, EgoConfig, Segment};
use coopsim::sensing::{extract_feature_flow, predict_feature, NoiseConfig};
use coopsim::{
    center_distance, evaluate_clearmot, generate_scenario, Box3D, Category, FeatureGrid, Frame, FusionKind, GridSpec,
    Provenance, RunReport, TrackedObject, View,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::time::{Duration, Instant};

type Check = Result<String, String>;

fn within(elapsed: Duration, limit_s: f64) -> Result<(), String> {
    if elapsed.as_secs_f64() < limit_s {
        Ok(())
    } else {
        Err(format!("took {:.1} s, limit {limit_s} s", elapsed.as_secs_f64()))
    }
}

fn small_spec(rows: usize, cols: usize, channels: usize) -> GridSpec {
    GridSpec { x0: -3.0, y0: 2.0, cell_size: 0.5, cols, rows, channels }
}

// 1 ---------------------------------------------------------------------------

fn affine_prediction() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let spec = small_spec(40, 32, 3);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        // Cell-wise affine sequence a + b t; densities stay positive over the horizon.
        let n = spec.num_cells() * spec.channels;
        let a: Vec<f64> = (0..n)
            .map(|i| if i % 3 == 0 { rng.random_range(1.0..3.0) } else { rng.random_range(-5.0..5.0) })
            .collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let t0 = rng.random_range(0.0..10.0);
        let at = |t: f64| {
            let mut g = FeatureGrid::zeros(spec, t, Frame::Infra);
            g.values = a.iter().zip(&b).map(|(a, b)| a + b * (t - t0)).collect();
            g
        };
        let (prev, curr) = (at(t0), at(t0 + 0.1));
        let flow = extract_feature_flow(&prev, &curr).map_err(|e| e.to_string())?;
        for tau in [0.1, 0.2, 0.3] {
            let pred = predict_feature(&curr, &flow, tau).map_err(|e| e.to_string())?;
            let truth = at(t0 + 0.1 + tau);
            for (p, q) in pred.values.iter().zip(&truth.values) {
                worst = worst.max((p - q).abs());
            }
        }
    }
    within(start.elapsed(), 1.0)?;
    if worst <= 1e-9 {
        Ok(format!("max abs error {worst:.2e}"))
    } else {
        Err(format!("max abs error {worst:.2e} > 1e-9"))
    }
}

// 2 ---------------------------------------------------------------------------

/// Exhaustive minimum over injective maps from the shorter side, pairs row-sorted.
fn brute_assignment(cost: &[Vec<f64>]) -> f64 {
    let (n, m) = (cost.len(), cost[0].len());
    fn rec(k: usize, short: usize, long: usize, used: &mut Vec<bool>, cur: &mut Vec<(usize, usize)>, f: &mut dyn FnMut(&[(usize, usize)])) {
        if k == short {
            f(cur);
            return;
        }
        for j in 0..long {
            if !used[j] {
                used[j] = true;
                cur.push((k, j));
                rec(k + 1, short, long, used, cur, f);
                cur.pop();
                used[j] = false;
            }
        }
    }
    let (short, long) = (n.min(m), n.max(m));
    let mut best = f64::INFINITY;
    rec(0, short, long, &mut vec![false; long], &mut Vec::new(), &mut |pairs| {
        let mut p: Vec<(usize, usize)> = if n <= m { pairs.to_vec() } else { pairs.iter().map(|&(a, b)| (b, a)).collect() };
        p.sort_unstable();
        best = best.min(assignment_cost(cost, &p));
    });
    best
}

fn assignment_oracle() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut checked = 0;
    for n in 1..=6 {
        for m in 1..=6 {
            for _ in 0..100 {
                let cost: Vec<Vec<f64>> =
                    (0..n).map(|_| (0..m).map(|_| rng.random_range(0.0..100.0)).collect()).collect();
                let pairs = solve_assignment(&cost);
                if pairs.len() != n.min(m) {
                    return Err(format!("{n}x{m}: {} pairs", pairs.len()));
                }
                let got = assignment_cost(&cost, &pairs);
                let want = brute_assignment(&cost);
                if got != want {
                    return Err(format!("{n}x{m}: cost {got} vs exhaustive {want}"));
                }
                checked += 1;
            }
        }
    }
    within(start.elapsed(), 5.0)?;
    Ok(format!("{checked} matrices, all sizes up to 6x6"))
}

// 3 ---------------------------------------------------------------------------

fn obj(id: u64, x: f64, y: f64) -> TrackedObject {
    TrackedObject {
        bbox: Box3D::new([x, y, 0.75], (1.8, 4.5, 1.5), 0.0, Category::Car),
        track_id: id,
        timestamp: 0.0,
        provenance: Provenance::Fused,
        score: 1.0,
    }
}

/// Reference CLEAR-MOT: persistent pairs first (ids ascending), then an
/// exhaustive search of the remaining gated matchings for most pairs, then
/// least total distance.
fn brute_clearmot(gt: &[Vec<TrackedObject>], hyp: &[Vec<TrackedObject>], gate: f64) -> (u64, u64, u64, u64) {
    let mut last: BTreeMap<u64, u64> = BTreeMap::new();
    let (mut fp, mut fn_, mut ids, mut n) = (0, 0, 0, 0);
    for (gf, hf) in gt.iter().zip(hyp) {
        let mut g = gf.clone();
        let mut h = hf.clone();
        g.sort_by_key(|o| o.track_id);
        h.sort_by_key(|o| o.track_id);
        n += g.len() as u64;
        let mut hused = vec![false; h.len()];
        let mut gfree = Vec::new();
        let mut pairs = Vec::new();
        for (i, go) in g.iter().enumerate() {
            let kept = last.get(&go.track_id).and_then(|&hid| {
                h.iter().position(|ho| ho.track_id == hid).filter(|&j| {
                    !hused[j] && center_distance(&go.bbox, &h[j].bbox) <= gate
                })
            });
            match kept {
                Some(j) => {
                    hused[j] = true;
                    pairs.push((i, j));
                }
                None => gfree.push(i),
            }
        }
        let hfree: Vec<usize> = (0..h.len()).filter(|&j| !hused[j]).collect();
        let mut best: (usize, f64, Vec<(usize, usize)>) = (0, 0.0, Vec::new());
        fn search(
            k: usize,
            gfree: &[usize],
            hfree: &[usize],
            taken: &mut Vec<bool>,
            cur: &mut Vec<(usize, usize)>,
            d: &dyn Fn(usize, usize) -> Option<f64>,
            best: &mut (usize, f64, Vec<(usize, usize)>),
        ) {
            if k == gfree.len() {
                let c: f64 = cur.iter().map(|&(i, j)| d(i, j).unwrap()).sum();
                if cur.len() > best.0 || (cur.len() == best.0 && c < best.1) {
                    *best = (cur.len(), c, cur.clone());
                }
                return;
            }
            search(k + 1, gfree, hfree, taken, cur, d, best);
            for (b, &j) in hfree.iter().enumerate() {
                if !taken[b] && d(gfree[k], j).is_some() {
                    taken[b] = true;
                    cur.push((gfree[k], j));
                    search(k + 1, gfree, hfree, taken, cur, d, best);
                    cur.pop();
                    taken[b] = false;
                }
            }
        }
        let d = |i: usize, j: usize| {
            let v = center_distance(&g[i].bbox, &h[j].bbox);
            (v <= gate).then_some(v)
        };
        search(0, &gfree, &hfree, &mut vec![false; hfree.len()], &mut Vec::new(), &d, &mut best);
        for &(i, j) in &best.2 {
            if last.get(&g[i].track_id).is_some_and(|&p| p != h[j].track_id) {
                ids += 1;
            }
        }
        pairs.extend(best.2);
        for &(i, j) in &pairs {
            last.insert(g[i].track_id, h[j].track_id);
        }
        fn_ += (g.len() - pairs.len()) as u64;
        fp += (h.len() - pairs.len()) as u64;
    }
    (fp, fn_, ids, n)
}

fn clearmot_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let gate = 2.0;
    let mut total_ids = 0;
    for case in 0..100 {
        let frames = rng.random_range(1..=6);
        let n_obj = rng.random_range(1..=5);
        let mut pos: Vec<(f64, f64)> = (0..n_obj).map(|_| (rng.random_range(0.0..6.0), rng.random_range(0.0..6.0))).collect();
        let (mut gt, mut hyp) = (Vec::new(), Vec::new());
        for _ in 0..frames {
            let mut g = Vec::new();
            let mut h = Vec::new();
            for (id, p) in pos.iter_mut().enumerate() {
                p.0 += rng.random_range(-1.0..1.0);
                p.1 += rng.random_range(-1.0..1.0);
                if rng.random_bool(0.85) {
                    g.push(obj(id as u64, p.0, p.1));
                }
            }
            for _ in 0..rng.random_range(0..=5) {
                // Hypothesis ids drawn from a small pool so swaps and reuse occur.
                let id = rng.random_range(10..16u64);
                if h.iter().any(|o: &TrackedObject| o.track_id == id) {
                    continue;
                }
                let anchor = pos[rng.random_range(0..pos.len())];
                h.push(obj(id, anchor.0 + rng.random_range(-2.0..2.0), anchor.1 + rng.random_range(-2.0..2.0)));
            }
            gt.push(g);
            hyp.push(h);
        }
        let r = evaluate_clearmot(&gt, &hyp, gate).map_err(|e| e.to_string())?;
        let (fp, fn_, ids, n) = brute_clearmot(&gt, &hyp, gate);
        if (r.fp, r.fn_, r.ids, r.num_gt) != (fp, fn_, ids, n) {
            return Err(format!(
                "case {case}: fp/fn/ids {}/{}/{} vs oracle {fp}/{fn_}/{ids}",
                r.fp, r.fn_, r.ids
            ));
        }
        if n > 0 {
            let mota = 1.0 - (fp + fn_ + ids) as f64 / n as f64;
            if (r.mota - mota).abs() > 1e-12 {
                return Err(format!("case {case}: MOTA {} vs {mota}", r.mota));
            }
        }
        total_ids += ids;
    }
    Ok(format!("100 sequences agree ({total_ids} identity switches exercised)"))
}

// 4 ---------------------------------------------------------------------------

fn fan_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.scenario.num_agents = 0;
    cfg.scenario.occlusion = false;
    cfg.scenario.ego = EgoConfig { x: 0.0, y: 0.0, yaw: 0.0, speed: 0.0 };
    cfg.scenario.agents = [-40.0f64, -20.0, 0.0, 20.0, 40.0]
        .iter()
        .map(|deg| {
            let yaw = deg.to_radians();
            AgentConfig {
                category: Category::Car,
                dims: None,
                x: 15.0 * yaw.cos(),
                y: 15.0 * yaw.sin(),
                yaw,
                segments: vec![Segment { duration_s: 15.0, speed: 3.0, yaw_rate: 0.0 }],
            }
        })
        .collect();
    cfg.noise = NoiseConfig::noiseless();
    cfg
}

fn perfect_pipeline() -> Check {
    let start = Instant::now();
    let cfg = fan_config();
    let r = experiment::run_single(&cfg, FusionKind::VehicleOnly, 0.0, 1).map_err(|e| e.to_string())?;
    within(start.elapsed(), 10.0)?;
    let line = format!("MOTA {:.4}, IDS {}, MOTP {:.3} m over {} GT", r.mota, r.ids, r.motp, r.num_gt);
    if r.mota == 1.0 && r.ids == 0 && r.motp <= 0.71 {
        Ok(line)
    } else {
        Err(line)
    }
}

// 5 ---------------------------------------------------------------------------

fn bps_ordering() -> Check {
    let start = Instant::now();
    let cfg = ExperimentConfig::default();
    let run = |k| experiment::run_single(&cfg, k, 0.0, 1).map_err(|e| e.to_string());
    let late = run(FusionKind::Late)?;
    let early = run(FusionKind::Early)?;
    let stat = run(FusionKind::MiddleStatic)?;
    let ff = run(FusionKind::MiddleFF)?;
    within(start.elapsed(), 30.0)?;
    let line = format!(
        "Late {:.0} < Static {:.0} < Early {:.0} B/s; uncompressed FF/Static = {:.6}",
        late.bps_post, stat.bps_post, early.bps_post, ff.bps_pre / stat.bps_pre
    );
    // A flow message carries one extra header's worth of per-message overhead at most.
    let fps = cfg.scenario.frame_rate_hz;
    let header_bps = coopsim::channel::codec::grid_header_bytes(3) as f64 * fps;
    let doubled = (ff.bps_pre - 2.0 * stat.bps_pre).abs() <= header_bps;
    if late.bps_post < stat.bps_post && stat.bps_post < early.bps_post && doubled {
        Ok(line)
    } else {
        Err(line)
    }
}

// 6 ---------------------------------------------------------------------------

fn zero_latency_degeneracy() -> Check {
    let mut cfg = ExperimentConfig::default();
    cfg.fusion = vec![FusionKind::MiddleStatic, FusionKind::MiddleFF];
    cfg.latencies_ms = vec![0.0];
    cfg.seeds = (1..=10).collect();
    let sweep = experiment::run_sweep(&cfg).map_err(|e| e.to_string())?;
    if !sweep.complete() {
        return Err(format!("{} runs failed", sweep.failures.len()));
    }
    let by = |k| sweep.reports.iter().filter(move |r: &&RunReport| r.fusion == k);
    for (a, b) in by(FusionKind::MiddleStatic).zip(by(FusionKind::MiddleFF)) {
        if a.mota.to_bits() != b.mota.to_bits() || a.motp.to_bits() != b.motp.to_bits() || a.ids != b.ids {
            return Err(format!("seed {}: Static {:?} vs FF {:?}", a.seed, (a.mota, a.motp, a.ids), (b.mota, b.motp, b.ids)));
        }
    }
    Ok("MOTA/MOTP/IDS bit-equal on 10 seeds".into())
}

// 7 ---------------------------------------------------------------------------

fn mean_mota(reports: &[RunReport], k: FusionKind, latency: f64) -> f64 {
    let v: Vec<f64> = reports.iter().filter(|r| r.fusion == k && r.latency_ms == latency).map(|r| r.mota).collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn latency_robustness() -> Check {
    let start = Instant::now();
    let mut cfg = ExperimentConfig::default();
    cfg.fusion = vec![FusionKind::MiddleStatic, FusionKind::MiddleFF];
    cfg.latencies_ms = vec![0.0, 200.0];
    cfg.seeds = (1..=20).collect();
    let sweep = experiment::run_sweep(&cfg).map_err(|e| e.to_string())?;
    within(start.elapsed(), 300.0)?;
    if !sweep.complete() {
        return Err(format!("{} runs failed", sweep.failures.len()));
    }
    let r = &sweep.reports;
    let (s0, s2) = (mean_mota(r, FusionKind::MiddleStatic, 0.0), mean_mota(r, FusionKind::MiddleStatic, 200.0));
    let (f0, f2) = (mean_mota(r, FusionKind::MiddleFF, 0.0), mean_mota(r, FusionKind::MiddleFF, 200.0));
    let line = format!(
        "MOTA drop 0→200 ms: FF {:.4} ({f0:.4}→{f2:.4}) vs Static {:.4} ({s0:.4}→{s2:.4})",
        f0 - f2,
        s0 - s2
    );
    if f0 - f2 < s0 - s2 && f2 >= s2 {
        Ok(line)
    } else {
        Err(line)
    }
}

// 8 ---------------------------------------------------------------------------

/// Default intersection plus two slow cars parked behind the truck row: inside
/// the ego's shadow for the whole run, in plain view of the roadside sensor.
fn occlusion_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.scenario.num_agents = 4;
    cfg.scenario.ego.speed = 0.0;
    cfg.scenario.agents = [32.0, 40.0]
        .iter()
        .map(|&x| AgentConfig {
            category: Category::Car,
            dims: None,
            x,
            y: 14.0,
            yaw: 0.0,
            segments: vec![Segment { duration_s: 15.0, speed: 0.5, yaw_rate: 0.0 }],
        })
        .collect();
    cfg.latencies_ms = vec![0.0];
    cfg.seeds = (1..=10).collect();
    cfg
}

fn hidden_from_ego(cfg: &ExperimentConfig, seed: u64) -> Result<usize, String> {
    let s = generate_scenario(&cfg.scenario, seed).map_err(|e| e.to_string())?;
    let mut hidden: Option<BTreeSet<u64>> = None;
    for k in 0..s.num_frames() {
        let t = s.frame_time(k);
        let ego: BTreeSet<u64> =
            ground_truth_at(&s, t, View::Vehicle).map_err(|e| e.to_string())?.iter().map(|o| o.track_id).collect();
        let infra: BTreeSet<u64> =
            ground_truth_at(&s, t, View::Infra).map_err(|e| e.to_string())?.iter().map(|o| o.track_id).collect();
        let now: BTreeSet<u64> = infra.difference(&ego).copied().collect();
        hidden = Some(match hidden {
            None => now,
            Some(h) => h.intersection(&now).copied().collect(),
        });
    }
    Ok(hidden.map_or(0, |h| h.len()))
}

fn cooperation_benefit() -> Check {
    let start = Instant::now();
    let cfg = occlusion_config();
    for &seed in &cfg.seeds {
        let n = hidden_from_ego(&cfg, seed)?;
        if n < 2 {
            return Err(format!("seed {seed}: only {n} agents hidden from the ego throughout"));
        }
    }
    let sweep = experiment::run_sweep(&cfg).map_err(|e| e.to_string())?;
    within(start.elapsed(), 120.0)?;
    if !sweep.complete() {
        return Err(format!("{} runs failed", sweep.failures.len()));
    }
    let base = mean_mota(&sweep.reports, FusionKind::VehicleOnly, 0.0);
    let mut parts = vec![format!("VehicleOnly {base:.4}")];
    let mut ok = true;
    for k in [FusionKind::Early, FusionKind::Late, FusionKind::MiddleStatic, FusionKind::MiddleFF] {
        let m = mean_mota(&sweep.reports, k, 0.0);
        ok &= m - base >= 0.10;
        parts.push(format!("{k} {m:.4} (+{:.4})", m - base));
    }
    if ok {
        Ok(parts.join(", "))
    } else {
        Err(parts.join(", "))
    }
}

// 9 ---------------------------------------------------------------------------

fn compression_bound() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst_ratio: f64 = 0.0;
    for case in 0..50 {
        let spec = small_spec(rng.random_range(1..60), rng.random_range(1..60), rng.random_range(1..=4));
        let mut g = FeatureGrid::zeros(spec, 0.5, Frame::Ego);
        let ch = spec.channels;
        let constant_ch = rng.random_range(0..ch);
        let cval: f64 = rng.random_range(-3.0..3.0);
        let scale: Vec<f64> = (0..ch).map(|_| 10f64.powf(rng.random_range(-3.0..3.0))).collect();
        for (i, v) in g.values.iter_mut().enumerate() {
            let c = i % ch;
            *v = if c == constant_ch {
                cval
            } else if rng.random_bool(0.5) {
                0.0
            } else {
                rng.random_range(-1.0..1.0) * scale[c]
            };
        }
        let dec = decompress_grid(&compress_grid(&g)).map_err(|e| e.to_string())?;
        if dec.spec() != &spec {
            return Err(format!("case {case}: spec changed"));
        }
        for c in 0..ch {
            let vals: Vec<f64> = g.values.iter().skip(c).step_by(ch).copied().collect();
            let back: Vec<f64> = dec.values().iter().skip(c).step_by(ch).copied().collect();
            let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let bound = (hi - lo) / 255.0;
            for (a, b) in vals.iter().zip(&back) {
                let err = (a - b).abs();
                if c == constant_ch && err != 0.0 {
                    return Err(format!("case {case}: constant channel off by {err:e}"));
                }
                if err > bound {
                    return Err(format!("case {case}: error {err:e} > bound {bound:e}"));
                }
                if bound > 0.0 {
                    worst_ratio = worst_ratio.max(err / bound);
                }
            }
        }
    }
    Ok(format!("50 grids within bound (worst error {:.3} of bound), constant channels exact", worst_ratio))
}

// 10 --------------------------------------------------------------------------

fn determinism() -> Check {
    let cfg = ExperimentConfig::default();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let sweep = experiment::run_sweep(&cfg).map_err(|e| e.to_string())?;
        let out = dir.path().join(run);
        let files = experiment::write_sweep_outputs(&sweep, ReportFormat::Csv, &out).map_err(|e| e.to_string())?;
        let mut contents = BTreeMap::new();
        for f in files {
            let name = f.file_name().unwrap().to_string_lossy().into_owned();
            contents.insert(name, fs::read(&f).map_err(|e| e.to_string())?);
        }
        outputs.push(contents);
    }
    if outputs[0] == outputs[1] {
        let bytes: usize = outputs[0].values().map(Vec::len).sum();
        Ok(format!("{} CSV files ({bytes} bytes) byte-identical across two default sweeps", outputs[0].len()))
    } else {
        let differing: Vec<&String> =
            outputs[0].iter().filter(|(k, v)| outputs[1].get(*k) != Some(v)).map(|(k, _)| k).collect();
        Err(format!("outputs differ: {differing:?}"))
    }
}

fn main() {
    let criteria: [(&str, fn() -> Check); 10] = [
        ("flow prediction exact on affine sequences", affine_prediction),
        ("assignment matches exhaustive search", assignment_oracle),
        ("CLEAR-MOT matches brute-force evaluator", clearmot_oracle),
        ("perfect pipeline sanity", perfect_pipeline),
        ("bandwidth ordering", bps_ordering),
        ("zero-latency degeneracy", zero_latency_degeneracy),
        ("latency robustness trend", latency_robustness),
        ("cooperation benefit under occlusion", cooperation_benefit),
        ("compression error bound", compression_bound),
        ("sweep determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let id = format!("criterion {:>2}", i + 1);
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str()) || id.ends_with(&format!(" {f}"))) {
            continue;
        }
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => println!("{id} PASS  {name}: {msg} [{secs:.1} s]"),
            Err(msg) => {
                failed += 1;
                println!("{id} FAIL  {name}: {msg} [{secs:.1} s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
