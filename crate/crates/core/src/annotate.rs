//! Cooperative annotation over track files: cross-view box matching,
//! trajectory-similarity filtering, segment fragmentation and interest
//! scoring.

use crate::assignment::solve_gated;
use crate::error::{Error, Result};
use crate::geometry::{center_distance, normalize_angle, Box3D};
use crate::scenario::{ground_truth_at, Provenance, Scenario, TrackedObject, View};
use crate::seeds;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

/// Distance scale of [`trajectory_similarity`], meters.
pub const SIMILARITY_SCALE_M: f64 = 2.0;
const TIME_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub track_id: u64,
    pub samples: Vec<(f64, Box3D)>,
    pub provenance: Provenance,
    /// (vehicle-side id, infrastructure-side id) for fused trajectories.
    pub source_ids: Option<(u64, u64)>,
}

impl Trajectory {
    pub fn validate(&self) -> Result<()> {
        if self.samples.windows(2).any(|w| !(w[1].0 > w[0].0 + TIME_EPS)) {
            return Err(Error::Ordering(format!(
                "trajectory {} samples are not strictly increasing in time",
                self.track_id
            )));
        }
        Ok(())
    }
}

fn time_key(t: f64) -> i64 {
    (t * 1000.0).round() as i64
}

/// One output box of [`match_and_fuse_frames`], with the ids it came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchedBox {
    pub object: TrackedObject,
    pub vehicle_id: Option<u64>,
    pub infra_id: Option<u64>,
}

fn average_box(a: &Box3D, b: &Box3D) -> Box3D {
    let m = |p: f64, q: f64| 0.5 * (p + q);
    Box3D {
        x: m(a.x, b.x),
        y: m(a.y, b.y),
        z: m(a.z, b.z),
        w: m(a.w, b.w),
        l: m(a.l, b.l),
        h: m(a.h, b.h),
        yaw: a.yaw,
        category: a.category,
    }
}

/// Gated Hungarian matching of same-time vehicle and infrastructure boxes;
/// matched pairs are averaged and marked fused, the rest pass through.
pub fn match_and_fuse_frames(v: &[TrackedObject], i: &[TrackedObject], threshold_m: f64) -> Vec<MatchedBox> {
    let cost: Vec<Vec<f64>> = v
        .iter()
        .map(|a| i.iter().map(|b| center_distance(&a.bbox, &b.bbox)).collect())
        .collect();
    let pairs = solve_gated(&cost, threshold_m);
    let mut v_used = vec![false; v.len()];
    let mut i_used = vec![false; i.len()];
    let mut out = Vec::with_capacity(v.len() + i.len());
    for &(a, b) in &pairs {
        v_used[a] = true;
        i_used[b] = true;
        out.push(MatchedBox {
            object: TrackedObject {
                bbox: average_box(&v[a].bbox, &i[b].bbox),
                provenance: Provenance::Fused,
                score: v[a].score.max(i[b].score),
                ..v[a]
            },
            vehicle_id: Some(v[a].track_id),
            infra_id: Some(i[b].track_id),
        });
    }
    for (o, _) in v.iter().zip(&v_used).filter(|(_, u)| !**u) {
        out.push(MatchedBox {
            object: TrackedObject { provenance: Provenance::VehicleSide, ..*o },
            vehicle_id: Some(o.track_id),
            infra_id: None,
        });
    }
    for (o, _) in i.iter().zip(&i_used).filter(|(_, u)| !**u) {
        out.push(MatchedBox {
            object: TrackedObject { provenance: Provenance::InfraSide, ..*o },
            vehicle_id: None,
            infra_id: Some(o.track_id),
        });
    }
    out
}

/// `exp(−d̄ / 2 m)` where d̄ is the mean center distance over shared timestamps.
pub fn trajectory_similarity(a: &Trajectory, b: &Trajectory) -> Result<f64> {
    let bm: BTreeMap<i64, &Box3D> = b.samples.iter().map(|(t, bx)| (time_key(*t), bx)).collect();
    let dists: Vec<f64> = a
        .samples
        .iter()
        .filter_map(|(t, ax)| bm.get(&time_key(*t)).map(|bx| center_distance(ax, bx)))
        .collect();
    if dists.len() < 2 {
        return Err(Error::UndefinedSimilarity(dists.len()));
    }
    let mean = dists.iter().sum::<f64>() / dists.len() as f64;
    Ok((-mean / SIMILARITY_SCALE_M).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateMatch {
    pub vehicle_id: u64,
    pub infra_id: u64,
    pub score: f64,
}

pub fn filter_matches(matches: &[CandidateMatch], threshold: f64) -> Vec<CandidateMatch> {
    matches.iter().filter(|m| m.score >= threshold).copied().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fragment {
    pub start: f64,
    pub end: f64,
    /// False for a tail segment shorter than the window.
    pub full: bool,
    pub trajectories: Vec<Trajectory>,
}

/// Cuts the set into windows starting every `window − overlap` seconds.
/// A window is full when the data reaches its last frame; the final,
/// shorter window is kept and flagged. `frame_period` is the sample spacing.
pub fn fragment(trajs: &[Trajectory], window_s: f64, overlap_s: f64, frame_period: f64) -> Result<Vec<Fragment>> {
    if !(window_s > overlap_s && overlap_s >= 0.0 && frame_period > 0.0) {
        return Err(Error::Config(format!(
            "fragment needs window > overlap >= 0, got window {window_s}, overlap {overlap_s}"
        )));
    }
    let times = trajs.iter().flat_map(|t| t.samples.iter().map(|s| s.0));
    let (t0, t1) = times.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), t| (a.min(t), b.max(t)));
    if !t0.is_finite() {
        return Ok(Vec::new());
    }
    let step = window_s - overlap_s;
    let mut out = Vec::new();
    for k in 0.. {
        let start = t0 + k as f64 * step;
        let end = start + window_s;
        let clipped = trajs
            .iter()
            .filter_map(|t| {
                let samples: Vec<(f64, Box3D)> = t
                    .samples
                    .iter()
                    .filter(|s| s.0 >= start - TIME_EPS && s.0 < end - TIME_EPS)
                    .copied()
                    .collect();
                (!samples.is_empty()).then(|| Trajectory { samples, ..t.clone() })
            })
            .collect();
        out.push(Fragment {
            start,
            end,
            full: end <= t1 + frame_period + TIME_EPS,
            trajectories: clipped,
        });
        if end > t1 + TIME_EPS {
            break;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterestWeights {
    pub turning: f64,
    pub speed_change: f64,
    pub completion: f64,
}

impl Default for InterestWeights {
    fn default() -> Self {
        Self {
            turning: 1.0,
            speed_change: 1.0,
            completion: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterestTerms {
    /// Total absolute heading change, rad.
    pub turning: f64,
    /// Largest speed change within any 1 s span, m/s.
    pub speed_change: f64,
    /// Fraction of the window's frames present.
    pub completion: f64,
}

pub fn interest_terms(t: &Trajectory, window_frames: usize) -> Result<InterestTerms> {
    let s = &t.samples;
    if s.len() < 3 {
        return Err(Error::TooFewSamples { need: 3, got: s.len() });
    }
    t.validate()?;
    let turning = s
        .windows(2)
        .map(|w| normalize_angle(w[1].1.yaw - w[0].1.yaw).abs())
        .sum();
    // Speeds of consecutive displacements, stamped at interval midpoints.
    let speeds: Vec<(f64, f64)> = s
        .windows(2)
        .map(|w| {
            let d = (w[1].1.x - w[0].1.x).hypot(w[1].1.y - w[0].1.y);
            (0.5 * (w[0].0 + w[1].0), d / (w[1].0 - w[0].0))
        })
        .collect();
    let mut speed_change: f64 = 0.0;
    for (i, a) in speeds.iter().enumerate() {
        for b in &speeds[i + 1..] {
            if b.0 - a.0 > 1.0 + TIME_EPS {
                break;
            }
            speed_change = speed_change.max((b.1 - a.1).abs());
        }
    }
    let completion = (s.len() as f64 / window_frames.max(1) as f64).min(1.0);
    Ok(InterestTerms { turning, speed_change, completion })
}

pub fn score_interest(t: &Trajectory, window_frames: usize, w: &InterestWeights) -> Result<f64> {
    let k = interest_terms(t, window_frames)?;
    Ok(w.turning * k.turning + w.speed_change * k.speed_change + w.completion * k.completion)
}

/// One line of a trajectory file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub track_id: u64,
    pub t: f64,
    #[serde(rename = "box")]
    pub bbox: Box3D,
    pub provenance: Provenance,
    #[serde(default)]
    pub source_ids: Option<(u64, u64)>,
}

pub fn read_trajectories<R: BufRead>(r: R) -> Result<Vec<Trajectory>> {
    let mut by_key: BTreeMap<(Provenance, u64), Trajectory> = BTreeMap::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TrajectoryRecord = serde_json::from_str(&line)?;
        by_key
            .entry((rec.provenance, rec.track_id))
            .or_insert_with(|| Trajectory {
                track_id: rec.track_id,
                samples: Vec::new(),
                provenance: rec.provenance,
                source_ids: rec.source_ids,
            })
            .samples
            .push((rec.t, rec.bbox));
    }
    let out: Vec<Trajectory> = by_key.into_values().collect();
    for t in &out {
        t.validate()?;
    }
    Ok(out)
}

pub fn write_trajectories<W: Write>(trajs: &[Trajectory], mut w: W) -> Result<()> {
    for t in trajs {
        for &(time, bbox) in &t.samples {
            let rec = TrajectoryRecord {
                track_id: t.track_id,
                t: time,
                bbox,
                provenance: t.provenance,
                source_ids: t.source_ids,
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotateConfig {
    pub match_threshold_m: f64,
    pub similarity_threshold: f64,
    pub window_s: f64,
    pub overlap_s: f64,
    pub frame_period_s: f64,
    pub weights: InterestWeights,
}

impl Default for AnnotateConfig {
    fn default() -> Self {
        Self {
            match_threshold_m: 2.0,
            similarity_threshold: 0.5,
            window_s: 10.0,
            overlap_s: 5.0,
            frame_period_s: 0.1,
            weights: InterestWeights::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterestRow {
    pub fragment: usize,
    pub start: f64,
    pub full: bool,
    pub track_id: u64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    /// Pairs that survived the similarity filter and were merged.
    pub matches: Vec<CandidateMatch>,
    pub cooperative: Vec<Trajectory>,
    pub fragments: Vec<Fragment>,
    pub interest: Vec<InterestRow>,
}

/// Candidate cross-view pairs proposed by per-frame box matching, scored by
/// trajectory similarity.
pub fn candidate_matches(vehicle: &[Trajectory], infra: &[Trajectory], threshold_m: f64) -> Vec<CandidateMatch> {
    let frames = |ts: &[Trajectory], p: Provenance| {
        let mut m: BTreeMap<i64, Vec<TrackedObject>> = BTreeMap::new();
        for tr in ts {
            for &(t, bbox) in &tr.samples {
                m.entry(time_key(t)).or_default().push(TrackedObject {
                    bbox,
                    track_id: tr.track_id,
                    timestamp: t,
                    provenance: p,
                    score: 1.0,
                });
            }
        }
        m
    };
    let fv = frames(vehicle, Provenance::VehicleSide);
    let fi = frames(infra, Provenance::InfraSide);
    let mut pairs = BTreeSet::new();
    for (k, v) in &fv {
        let Some(i) = fi.get(k) else { continue };
        for m in match_and_fuse_frames(v, i, threshold_m) {
            if let (Some(a), Some(b)) = (m.vehicle_id, m.infra_id) {
                pairs.insert((a, b));
            }
        }
    }
    let vm: BTreeMap<u64, &Trajectory> = vehicle.iter().map(|t| (t.track_id, t)).collect();
    let im: BTreeMap<u64, &Trajectory> = infra.iter().map(|t| (t.track_id, t)).collect();
    pairs
        .into_iter()
        .filter_map(|(a, b)| {
            trajectory_similarity(vm[&a], im[&b])
                .ok()
                .map(|score| CandidateMatch { vehicle_id: a, infra_id: b, score })
        })
        .collect()
}

/// Greedy one-to-one selection by descending score.
fn one_to_one(mut ms: Vec<CandidateMatch>) -> Vec<CandidateMatch> {
    ms.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.vehicle_id.cmp(&b.vehicle_id))
            .then(a.infra_id.cmp(&b.infra_id))
    });
    let (mut vu, mut iu) = (BTreeSet::new(), BTreeSet::new());
    ms.retain(|m| {
        let ok = !vu.contains(&m.vehicle_id) && !iu.contains(&m.infra_id);
        if ok {
            vu.insert(m.vehicle_id);
            iu.insert(m.infra_id);
        }
        ok
    });
    ms.sort_by_key(|m| (m.vehicle_id, m.infra_id));
    ms
}

fn merge_trajectories(id: u64, v: &Trajectory, i: &Trajectory) -> Trajectory {
    let mut by_t: BTreeMap<i64, (f64, Option<Box3D>, Option<Box3D>)> = BTreeMap::new();
    for &(t, b) in &v.samples {
        by_t.entry(time_key(t)).or_insert((t, None, None)).1 = Some(b);
    }
    for &(t, b) in &i.samples {
        by_t.entry(time_key(t)).or_insert((t, None, None)).2 = Some(b);
    }
    let samples = by_t
        .into_values()
        .map(|(t, a, b)| match (a, b) {
            (Some(a), Some(b)) => (t, average_box(&a, &b)),
            (Some(a), None) => (t, a),
            (None, Some(b)) => (t, b),
            (None, None) => unreachable!("every entry has at least one side"),
        })
        .collect();
    Trajectory {
        track_id: id,
        samples,
        provenance: Provenance::Fused,
        source_ids: Some((v.track_id, i.track_id)),
    }
}

/// Full annotation pass over vehicle-side and infrastructure-side
/// trajectories sharing a world frame.
pub fn annotate(trajs: &[Trajectory], cfg: &AnnotateConfig) -> Result<Annotation> {
    let vehicle: Vec<Trajectory> = trajs.iter().filter(|t| t.provenance == Provenance::VehicleSide).cloned().collect();
    let infra: Vec<Trajectory> = trajs.iter().filter(|t| t.provenance == Provenance::InfraSide).cloned().collect();
    let candidates = candidate_matches(&vehicle, &infra, cfg.match_threshold_m);
    let matches = one_to_one(filter_matches(&candidates, cfg.similarity_threshold));
    let vm: BTreeMap<u64, &Trajectory> = vehicle.iter().map(|t| (t.track_id, t)).collect();
    let im: BTreeMap<u64, &Trajectory> = infra.iter().map(|t| (t.track_id, t)).collect();
    let mut next_id = trajs.iter().map(|t| t.track_id).max().map_or(1, |m| m + 1);
    let mut cooperative = Vec::new();
    for m in &matches {
        cooperative.push(merge_trajectories(next_id, vm[&m.vehicle_id], im[&m.infra_id]));
        next_id += 1;
    }
    let (vu, iu): (BTreeSet<u64>, BTreeSet<u64>) = (
        matches.iter().map(|m| m.vehicle_id).collect(),
        matches.iter().map(|m| m.infra_id).collect(),
    );
    cooperative.extend(vehicle.iter().filter(|t| !vu.contains(&t.track_id)).cloned());
    cooperative.extend(infra.iter().filter(|t| !iu.contains(&t.track_id)).cloned());
    cooperative.extend(trajs.iter().filter(|t| t.provenance == Provenance::Fused).cloned());

    let fragments = fragment(&cooperative, cfg.window_s, cfg.overlap_s, cfg.frame_period_s)?;
    let window_frames = (cfg.window_s / cfg.frame_period_s).round() as usize;
    let mut interest = Vec::new();
    for (fi, f) in fragments.iter().enumerate() {
        for t in &f.trajectories {
            if t.samples.len() < 3 {
                continue;
            }
            interest.push(InterestRow {
                fragment: fi,
                start: f.start,
                full: f.full,
                track_id: t.track_id,
                score: score_interest(t, window_frames, &cfg.weights)?,
            });
        }
    }
    Ok(Annotation { matches, cooperative, fragments, interest })
}

/// Per-view tracks straight from the simulator: every frame where an agent
/// is visible from a side contributes a world-frame box, perturbed by
/// isotropic Gaussian noise of `sigma_m` on the center. Agent ids are
/// shared across views.
pub fn simulated_trajectories(s: &Scenario, sigma_m: f64, seed: u64) -> Result<Vec<Trajectory>> {
    let gauss = Normal::new(0.0, sigma_m.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let mut out = Vec::new();
    for (tag, view, prov) in [(0u64, View::Vehicle, Provenance::VehicleSide), (1, View::Infra, Provenance::InfraSide)] {
        let mut rng = seeds::rng(&[seeds::STREAM_ANNOTATE, seed, tag]);
        let mut by_id: BTreeMap<u64, Vec<(f64, Box3D)>> = BTreeMap::new();
        for k in 0..s.num_frames() {
            let t = s.frame_time(k);
            for o in ground_truth_at(s, t, view)? {
                let mut b = o.bbox;
                if sigma_m > 0.0 {
                    b.x += gauss.sample(&mut rng);
                    b.y += gauss.sample(&mut rng);
                }
                by_id.entry(o.track_id).or_default().push((t, b));
            }
        }
        out.extend(by_id.into_iter().map(|(id, samples)| Trajectory {
            track_id: id,
            samples,
            provenance: prov,
            source_ids: None,
        }));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Category;
    use std::f64::consts::FRAC_PI_2;

    fn bx(x: f64, y: f64, yaw: f64) -> Box3D {
        Box3D::new([x, y, 0.75], (1.8, 4.5, 1.5), yaw, Category::Car)
    }

    fn obj(id: u64, x: f64, y: f64, p: Provenance) -> TrackedObject {
        TrackedObject { bbox: bx(x, y, 0.0), track_id: id, timestamp: 0.0, provenance: p, score: 1.0 }
    }

    fn traj(id: u64, pts: &[(f64, f64, f64)]) -> Trajectory {
        Trajectory {
            track_id: id,
            samples: pts.iter().enumerate().map(|(k, &(x, y, yaw))| (k as f64 * 0.1, bx(x, y, yaw))).collect(),
            provenance: Provenance::VehicleSide,
            source_ids: None,
        }
    }

    #[test]
    fn match_cases() {
        let v = vec![obj(1, 0.0, 0.0, Provenance::VehicleSide)];
        let far = vec![obj(9, 50.0, 0.0, Provenance::InfraSide)];
        let out = match_and_fuse_frames(&v, &far, 2.0);
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|m| m.object.provenance != Provenance::Fused));
        let same = match_and_fuse_frames(&v, &v, 2.0);
        assert_eq!(same.len(), 1);
        assert_eq!(same[0].object.provenance, Provenance::Fused);
        // Distances [[1,2],[2,4]].
        let v = vec![obj(1, 0.0, 0.0, Provenance::VehicleSide), obj(2, 1.5, 3.75f64.sqrt(), Provenance::VehicleSide)];
        let i = vec![obj(3, 1.0, 0.0, Provenance::InfraSide), obj(4, -2.0, 0.0, Provenance::InfraSide)];
        let out = match_and_fuse_frames(&v, &i, 5.0);
        let pairs: Vec<(u64, u64)> = out.iter().filter_map(|m| Some((m.vehicle_id?, m.infra_id?))).collect();
        assert_eq!(pairs, vec![(1, 4), (2, 3)]);
        assert!((out[0].object.bbox.x + 1.0).abs() < 1e-12 && out[0].object.bbox.y.abs() < 1e-12);
    }

    #[test]
    fn similarity_cases() {
        let a = traj(1, &[(0.0, 0.0, 0.0), (1.0, 0.0, 0.0), (2.0, 0.0, 0.0)]);
        assert_eq!(trajectory_similarity(&a, &a).unwrap(), 1.0);
        let b = traj(2, &[(0.0, 2.0, 0.0), (1.0, 2.0, 0.0), (2.0, 2.0, 0.0)]);
        assert!((trajectory_similarity(&a, &b).unwrap() - (-1.0f64).exp()).abs() < 1e-12);
        let far = traj(3, &[(0.0, 1e4, 0.0), (1.0, 1e4, 0.0)]);
        assert!(trajectory_similarity(&a, &far).unwrap() < 1e-100);
        let short = traj(4, &[(0.0, 0.0, 0.0)]);
        assert!(matches!(trajectory_similarity(&a, &short), Err(Error::UndefinedSimilarity(1))));
        assert_eq!(trajectory_similarity(&a, &b).unwrap(), trajectory_similarity(&b, &a).unwrap());
    }

    #[test]
    fn filter_cases() {
        let m = |s| CandidateMatch { vehicle_id: 1, infra_id: 2, score: s };
        assert_eq!(filter_matches(&[m(1.0), m(1.0)], 0.5).len(), 2);
        assert!(filter_matches(&[m(0.0)], 0.5).is_empty());
        assert_eq!(filter_matches(&[m(0.9), m(0.4)], 0.5), vec![m(0.9)]);
    }

    fn timeline(n: usize) -> Vec<Trajectory> {
        vec![traj(1, &vec![(0.0, 0.0, 0.0); n])]
    }

    #[test]
    fn fragment_cases() {
        // 151 frames spanning 0..=15 s.
        let f = fragment(&timeline(151), 10.0, 5.0, 0.1).unwrap();
        let starts: Vec<(f64, bool)> = f.iter().map(|s| (s.start, s.full)).collect();
        assert_eq!(starts, vec![(0.0, true), (5.0, true), (10.0, false)]);
        assert_eq!(f[0].trajectories[0].samples.len(), 100);
        // 100 frames spanning 0..9.9 s: one full window covers it.
        let f = fragment(&timeline(100), 10.0, 5.0, 0.1).unwrap();
        assert_eq!(f.len(), 1);
        assert!(f[0].full);
        assert!(fragment(&[], 10.0, 5.0, 0.1).unwrap().is_empty());
        assert!(fragment(&timeline(10), 5.0, 5.0, 0.1).is_err());
    }

    #[test]
    fn fragment_covers_every_sample() {
        for n in [1, 37, 100, 151, 233] {
            let input = timeline(n);
            let f = fragment(&input, 10.0, 5.0, 0.1).unwrap();
            for &(t, _) in &input[0].samples {
                assert!(f.iter().any(|s| s.trajectories.iter().any(|tr| tr.samples.iter().any(|x| x.0 == t))));
            }
            for w in f.windows(2) {
                assert!((w[0].end - w[1].start - 5.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn interest_cases() {
        let w = InterestWeights::default();
        let still = traj(1, &vec![(3.0, 4.0, 0.2); 100]);
        assert!((score_interest(&still, 100, &w).unwrap() - 1.0).abs() < 1e-12);
        // Quarter circle of radius 10 m at constant speed, 100 frames.
        let arc: Vec<(f64, f64, f64)> = (0..100)
            .map(|k| {
                let a = FRAC_PI_2 * k as f64 / 99.0;
                (10.0 * a.sin(), 10.0 * (1.0 - a.cos()), a)
            })
            .collect();
        let s = score_interest(&traj(2, &arc), 100, &w).unwrap();
        assert!((s - (FRAC_PI_2 + 1.0)).abs() < 1e-9, "{s}");
        let half: Vec<(f64, f64, f64)> = (0..50).map(|k| (k as f64, 0.0, 0.0)).collect();
        let terms = interest_terms(&traj(3, &half), 100).unwrap();
        assert!((terms.completion - 0.5).abs() < 1e-12 && terms.turning == 0.0);
        assert!(terms.speed_change < 1e-9);
        assert!(matches!(score_interest(&traj(4, &[(0.0, 0.0, 0.0); 2]), 100, &w), Err(Error::TooFewSamples { .. })));
    }

    #[test]
    fn speed_change_within_one_second() {
        // 5 m/s for 2 s, then 8 m/s.
        let mut x = 0.0;
        let pts: Vec<(f64, f64, f64)> = (0..40)
            .map(|k| {
                let p = (x, 0.0, 0.0);
                x += if k < 20 { 0.5 } else { 0.8 };
                p
            })
            .collect();
        let terms = interest_terms(&traj(1, &pts), 40).unwrap();
        assert!((terms.speed_change - 3.0).abs() < 1e-9);
    }

    #[test]
    fn jsonl_roundtrip() {
        let mut a = traj(5, &[(0.0, 0.0, 0.0), (1.0, 0.5, 0.1), (2.0, 1.0, 0.2)]);
        a.provenance = Provenance::Fused;
        a.source_ids = Some((1, 2));
        let b = traj(6, &[(9.0, 9.0, 0.0)]);
        let mut buf = Vec::new();
        write_trajectories(&[a.clone(), b.clone()], &mut buf).unwrap();
        let mut back = read_trajectories(&buf[..]).unwrap();
        back.sort_by_key(|t| t.track_id);
        assert_eq!(back, vec![a, b]);
    }

    #[test]
    fn out_of_order_file_rejected() {
        let rec = |t: f64| {
            serde_json::to_string(&TrajectoryRecord {
                track_id: 1,
                t,
                bbox: bx(0.0, 0.0, 0.0),
                provenance: Provenance::VehicleSide,
                source_ids: None,
            })
            .unwrap()
        };
        let text = format!("{}\n{}\n", rec(0.2), rec(0.1));
        assert!(matches!(read_trajectories(text.as_bytes()), Err(Error::Ordering(_))));
    }
}
