//! CLEAR-MOT scoring with persistent correspondences, and per-run reports.

use crate::assignment::solve_gated;
use crate::channel::{bps, bps_uncompressed, LogEntry};
use crate::error::{Error, Result};
use crate::fusion::FusionKind;
use crate::geometry::center_distance;
use crate::scenario::TrackedObject;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{Read, Write};

/// Objects in one frame must share a timestamp to within this many seconds.
const FRAME_TIME_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotResult {
    pub mota: f64,
    /// Mean matched center distance in meters.
    pub motp: f64,
    pub ids: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub num_gt: u64,
    pub matches: u64,
}

impl MotResult {
    pub fn from_counts(fp: u64, fn_: u64, ids: u64, num_gt: u64, matches: u64, dist_sum: f64) -> Self {
        let mota = if num_gt > 0 {
            1.0 - (fp + fn_ + ids) as f64 / num_gt as f64
        } else if fp == 0 {
            1.0
        } else {
            0.0
        };
        let motp = if matches > 0 { dist_sum / matches as f64 } else { 0.0 };
        Self { mota, motp, ids, fp, fn_, num_gt, matches }
    }
}

fn frame_time(objs: &[TrackedObject]) -> Result<Option<f64>> {
    let Some(first) = objs.first() else { return Ok(None) };
    if objs.iter().any(|o| (o.timestamp - first.timestamp).abs() > FRAME_TIME_EPS) {
        return Err(Error::Alignment(format!("mixed timestamps within a frame near t = {}", first.timestamp)));
    }
    Ok(Some(first.timestamp))
}

pub fn check_alignment(gt: &[Vec<TrackedObject>], hyp: &[Vec<TrackedObject>]) -> Result<()> {
    if gt.len() != hyp.len() {
        return Err(Error::Alignment(format!("{} GT frames vs {} hypothesis frames", gt.len(), hyp.len())));
    }
    for (k, (g, h)) in gt.iter().zip(hyp).enumerate() {
        if let (Some(a), Some(b)) = (frame_time(g)?, frame_time(h)?) {
            if (a - b).abs() > FRAME_TIME_EPS {
                return Err(Error::Alignment(format!("frame {k}: GT at t = {a}, hypotheses at t = {b}")));
            }
        }
    }
    Ok(())
}

/// CLEAR-MOT over frame-aligned sequences. Each GT keeps its last matched
/// hypothesis while that hypothesis is present and within `gate_m`; the
/// rest are matched by gated Hungarian on center distance, and a GT whose
/// new partner differs from its last one counts an identity switch.
pub fn evaluate_clearmot(gt: &[Vec<TrackedObject>], hyp: &[Vec<TrackedObject>], gate_m: f64) -> Result<MotResult> {
    check_alignment(gt, hyp)?;
    let mut last: BTreeMap<u64, u64> = BTreeMap::new();
    let (mut fp, mut fn_, mut ids, mut num_gt, mut matches) = (0u64, 0u64, 0u64, 0u64, 0u64);
    let mut dist_sum = 0.0;
    for (g_frame, h_frame) in gt.iter().zip(hyp) {
        // Sorting by id makes the result independent of list order.
        let mut g: Vec<&TrackedObject> = g_frame.iter().collect();
        let mut h: Vec<&TrackedObject> = h_frame.iter().collect();
        g.sort_by_key(|o| o.track_id);
        h.sort_by_key(|o| o.track_id);
        num_gt += g.len() as u64;
        let mut g_used = vec![false; g.len()];
        let mut h_used = vec![false; h.len()];
        let mut pairs: Vec<(usize, usize)> = Vec::new();
        for (i, go) in g.iter().enumerate() {
            let Some(&hid) = last.get(&go.track_id) else { continue };
            if let Some(j) = h.iter().position(|ho| ho.track_id == hid) {
                if !h_used[j] && center_distance(&go.bbox, &h[j].bbox) <= gate_m {
                    g_used[i] = true;
                    h_used[j] = true;
                    pairs.push((i, j));
                }
            }
        }
        let gi: Vec<usize> = (0..g.len()).filter(|&i| !g_used[i]).collect();
        let hj: Vec<usize> = (0..h.len()).filter(|&j| !h_used[j]).collect();
        let cost: Vec<Vec<f64>> = gi
            .iter()
            .map(|&i| hj.iter().map(|&j| center_distance(&g[i].bbox, &h[j].bbox)).collect())
            .collect();
        for (a, b) in solve_gated(&cost, gate_m) {
            let (i, j) = (gi[a], hj[b]);
            if let Some(&prev) = last.get(&g[i].track_id) {
                if prev != h[j].track_id {
                    ids += 1;
                }
            }
            g_used[i] = true;
            h_used[j] = true;
            pairs.push((i, j));
        }
        for &(i, j) in &pairs {
            last.insert(g[i].track_id, h[j].track_id);
            dist_sum += center_distance(&g[i].bbox, &h[j].bbox);
        }
        matches += pairs.len() as u64;
        fn_ += g_used.iter().filter(|u| !**u).count() as u64;
        fp += h_used.iter().filter(|u| !**u).count() as u64;
    }
    Ok(MotResult::from_counts(fp, fn_, ids, num_gt, matches, dist_sum))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub fusion: FusionKind,
    pub latency_ms: f64,
    pub seed: u64,
    pub mota: f64,
    pub motp: f64,
    pub ids: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub num_gt: u64,
    pub matches: u64,
    /// Bytes per second before compression.
    pub bps_pre: f64,
    /// Bytes per second actually sent.
    pub bps_post: f64,
    pub fallback_frames: u64,
    pub match_gate_m: f64,
}

impl RunReport {
    pub fn mot(&self) -> MotResult {
        MotResult {
            mota: self.mota,
            motp: self.motp,
            ids: self.ids,
            fp: self.fp,
            fn_: self.fn_,
            num_gt: self.num_gt,
            matches: self.matches,
        }
    }
}

/// Run identity and provenance attached to a [`MotResult`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunInfo {
    pub fusion: FusionKind,
    pub latency_ms: f64,
    pub seed: u64,
    pub fallback_frames: u64,
    pub match_gate_m: f64,
}

pub fn aggregate_run(mot: &MotResult, log: &[LogEntry], duration_s: f64, info: RunInfo) -> RunReport {
    let (pre, post) = if duration_s > 0.0 {
        (bps_uncompressed(log, duration_s), bps(log, duration_s))
    } else {
        (0.0, 0.0)
    };
    RunReport {
        fusion: info.fusion,
        latency_ms: info.latency_ms,
        seed: info.seed,
        mota: mot.mota,
        motp: mot.motp,
        ids: mot.ids,
        fp: mot.fp,
        fn_: mot.fn_,
        num_gt: mot.num_gt,
        matches: mot.matches,
        bps_pre: pre,
        bps_post: post,
        fallback_frames: info.fallback_frames,
        match_gate_m: info.match_gate_m,
    }
}

/// CSV column order of [`RunReport`] rows.
pub const CSV_COLUMNS: [&str; 14] = [
    "fusion",
    "latency_ms",
    "seed",
    "mota",
    "motp",
    "ids",
    "fp",
    "fn",
    "num_gt",
    "matches",
    "bps_pre",
    "bps_post",
    "fallback_frames",
    "match_gate_m",
];

fn f4(v: f64) -> String {
    format!("{v:.4}")
}

pub fn csv_row(r: &RunReport) -> Vec<String> {
    vec![
        r.fusion.to_string(),
        f4(r.latency_ms),
        r.seed.to_string(),
        f4(r.mota),
        f4(r.motp),
        r.ids.to_string(),
        r.fp.to_string(),
        r.fn_.to_string(),
        r.num_gt.to_string(),
        r.matches.to_string(),
        f4(r.bps_pre),
        f4(r.bps_post),
        r.fallback_frames.to_string(),
        f4(r.match_gate_m),
    ]
}

pub fn write_reports_csv<W: Write>(reports: &[RunReport], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(CSV_COLUMNS)?;
    for r in reports {
        wr.write_record(csv_row(r))?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_reports_csv<R: Read>(r: R) -> Result<Vec<RunReport>> {
    let mut rd = csv::Reader::from_reader(r);
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    if header != CSV_COLUMNS {
        return Err(Error::Decode(format!("unexpected report columns {header:?}")));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Decode(format!("{s:?}: {e}")));
    let int = |s: &str| s.parse::<u64>().map_err(|e| Error::Decode(format!("{s:?}: {e}")));
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        out.push(RunReport {
            fusion: rec[0].parse()?,
            latency_ms: num(&rec[1])?,
            seed: int(&rec[2])?,
            mota: num(&rec[3])?,
            motp: num(&rec[4])?,
            ids: int(&rec[5])?,
            fp: int(&rec[6])?,
            fn_: int(&rec[7])?,
            num_gt: int(&rec[8])?,
            matches: int(&rec[9])?,
            bps_pre: num(&rec[10])?,
            bps_post: num(&rec[11])?,
            fallback_frames: int(&rec[12])?,
            match_gate_m: num(&rec[13])?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::MessageKind;
    use crate::geometry::{Box3D, Category};
    use crate::scenario::Provenance;

    fn obj(id: u64, x: f64, t: f64) -> TrackedObject {
        TrackedObject {
            bbox: Box3D::new([x, 0.0, 0.75], (1.8, 4.5, 1.5), 0.0, Category::Car),
            track_id: id,
            timestamp: t,
            provenance: Provenance::Fused,
            score: 1.0,
        }
    }

    #[test]
    fn perfect_tracker() {
        let gt: Vec<Vec<TrackedObject>> = (0..5)
            .map(|k| vec![obj(1, k as f64, k as f64 * 0.1), obj(2, 10.0 + k as f64, k as f64 * 0.1)])
            .collect();
        let r = evaluate_clearmot(&gt, &gt, 2.0).unwrap();
        assert_eq!((r.mota, r.motp, r.ids, r.fp, r.fn_), (1.0, 0.0, 0, 0, 0));
    }

    #[test]
    fn formula() {
        let r = MotResult::from_counts(5, 10, 2, 100, 88, 0.0);
        assert!((r.mota - 0.83).abs() < 1e-12);
    }

    #[test]
    fn id_change_counts_one_switch() {
        let gt = vec![vec![obj(1, 0.0, 0.0)], vec![obj(1, 0.1, 0.1)]];
        let hyp = vec![vec![obj(7, 0.0, 0.0)], vec![obj(8, 0.1, 0.1)]];
        let r = evaluate_clearmot(&gt, &hyp, 2.0).unwrap();
        assert_eq!((r.ids, r.fp, r.fn_), (1, 0, 0));
    }

    #[test]
    fn persistent_match_beats_closer_newcomer() {
        // Hyp 7 drifts to 1.5 m while hyp 8 appears right on the GT: keep 7.
        let gt = vec![vec![obj(1, 0.0, 0.0)], vec![obj(1, 0.0, 0.1)]];
        let hyp = vec![vec![obj(7, 0.0, 0.0)], vec![obj(7, 1.5, 0.1), obj(8, 0.0, 0.1)]];
        let r = evaluate_clearmot(&gt, &hyp, 2.0).unwrap();
        assert_eq!((r.ids, r.fp, r.fn_), (0, 1, 0));
        assert!((r.motp - 0.75).abs() < 1e-12);
    }

    #[test]
    fn misaligned_sequences() {
        let gt = vec![vec![obj(1, 0.0, 0.0)]];
        assert!(matches!(evaluate_clearmot(&gt, &[], 2.0), Err(Error::Alignment(_))));
        let hyp = vec![vec![obj(1, 0.0, 0.5)]];
        assert!(matches!(evaluate_clearmot(&gt, &hyp, 2.0), Err(Error::Alignment(_))));
    }

    #[test]
    fn no_gt() {
        let empty: Vec<Vec<TrackedObject>> = vec![vec![]];
        assert_eq!(evaluate_clearmot(&empty, &empty, 2.0).unwrap().mota, 1.0);
    }

    fn info() -> RunInfo {
        RunInfo { fusion: FusionKind::Late, latency_ms: 100.0, seed: 3, fallback_frames: 1, match_gate_m: 2.0 }
    }

    #[test]
    fn aggregate_bps() {
        let mot = MotResult::from_counts(0, 0, 0, 10, 10, 1.0);
        assert_eq!(aggregate_run(&mot, &[], 15.0, info()).bps_post, 0.0);
        let e = LogEntry { t_send: 0.0, t_arrive: 0.1, kind: MessageKind::Detections, payload_bytes: 330, uncompressed_bytes: 330 };
        let log = vec![e; 150];
        let r = aggregate_run(&mot, &log, 15.0, info());
        assert!((r.bps_post - 3300.0).abs() < 1e-9 && (r.bps_pre - 3300.0).abs() < 1e-9);
    }

    #[test]
    fn report_roundtrips() {
        let mot = MotResult::from_counts(3, 4, 1, 50, 45, 12.345678);
        let r = aggregate_run(&mot, &[], 15.0, info());
        let json = serde_json::to_string(&r).unwrap();
        assert_eq!(serde_json::from_str::<RunReport>(&json).unwrap(), r);
        let mut buf = Vec::new();
        write_reports_csv(&[r], &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert_eq!(text.lines().next().unwrap(), CSV_COLUMNS.join(","));
        let back = read_reports_csv(&buf[..]).unwrap();
        assert_eq!(back.len(), 1);
        assert!((back[0].motp - r.motp).abs() <= 5e-5);
        assert_eq!(back[0].mot().ids, 1);
    }
}
