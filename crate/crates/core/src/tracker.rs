//! Multi-object tracker: a constant-velocity Kalman filter per track,
//! gated Hungarian association, and a hit/miss lifecycle.

use crate::assignment::solve_gated;
use crate::detector::Detection;
use crate::error::{Error, Result};
use crate::geometry::{bev_iou, center_distance, normalize_angle, Box3D, Category};
use crate::scenario::{Provenance, TrackedObject};
use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};
use std::io::Write;

/// (x, y, z, yaw, w, l, h, vx, vy, vz).
pub type State = SVector<f64, 10>;
pub type Cov = SMatrix<f64, 10, 10>;
type Meas = SVector<f64, 7>;
type MeasCov = SMatrix<f64, 7, 7>;
type Obs = SMatrix<f64, 7, 10>;

pub const YAW: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AssociationMetric {
    /// Center distance, gated at `gate_m`.
    Distance,
    /// 1 − BEV IoU, gated at 1 − `iou_min`.
    Iou,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    pub min_hits: u32,
    pub max_age: u32,
    pub gate_m: f64,
    pub association: AssociationMetric,
    pub iou_min: f64,
    /// Report tentative tracks during the first `min_hits` frames of a run.
    pub report_warmup: bool,
    /// Process noise per second on pose and dims.
    pub q_pose: f64,
    /// Process noise per second on velocities.
    pub q_vel: f64,
    pub r_pos: f64,
    pub r_yaw: f64,
    pub r_dim: f64,
    pub init_vel_var: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            min_hits: 3,
            max_age: 2,
            gate_m: 4.0,
            association: AssociationMetric::Distance,
            iou_min: 0.1,
            report_warmup: true,
            q_pose: 0.01,
            q_vel: 1.0,
            r_pos: 0.25,
            r_yaw: 0.1,
            r_dim: 0.25,
            init_vel_var: 100.0,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.gate_m > 0.0
            && (0.0..1.0).contains(&self.iou_min)
            && self.q_pose >= 0.0
            && self.q_vel >= 0.0
            && self.r_pos > 0.0
            && self.r_yaw > 0.0
            && self.r_dim > 0.0
            && self.init_vel_var > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid tracker config {self:?}")))
        }
    }

    fn q(&self) -> Cov {
        let mut d = [self.q_pose; 10];
        d[7..].fill(self.q_vel);
        Cov::from_diagonal(&SVector::from(d))
    }

    fn r(&self) -> MeasCov {
        let p = self.r_pos;
        let s = self.r_dim;
        MeasCov::from_diagonal(&Meas::from([p, p, p, self.r_yaw, s, s, s]))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: u64,
    pub state: State,
    pub covariance: Cov,
    pub hits: u32,
    pub misses: u32,
    pub confirmed: bool,
    pub category: Category,
    pub score: f64,
}

impl Track {
    pub fn bbox(&self) -> Box3D {
        let s = &self.state;
        Box3D {
            x: s[0],
            y: s[1],
            z: s[2],
            yaw: normalize_angle(s[3]),
            w: s[4],
            l: s[5],
            h: s[6],
            category: self.category,
        }
    }

    pub fn velocity(&self) -> [f64; 3] {
        [self.state[7], self.state[8], self.state[9]]
    }
}

fn measurement(d: &Detection) -> Meas {
    let b = &d.bbox;
    Meas::from([b.x, b.y, b.z, b.yaw, b.w, b.l, b.h])
}

fn observation() -> Obs {
    let mut h = Obs::zeros();
    for i in 0..7 {
        h[(i, i)] = 1.0;
    }
    h
}

/// Birth: state from the detection with zero velocity.
pub fn new_track(id: u64, d: &Detection, cfg: &TrackerConfig) -> Track {
    let z = measurement(d);
    let mut state = State::zeros();
    state.fixed_rows_mut::<7>(0).copy_from(&z);
    let r = cfg.r();
    let mut covariance = Cov::zeros();
    for i in 0..7 {
        covariance[(i, i)] = r[(i, i)];
    }
    for i in 7..10 {
        covariance[(i, i)] = cfg.init_vel_var;
    }
    Track {
        id,
        state,
        covariance,
        hits: 1,
        misses: 0,
        confirmed: cfg.min_hits <= 1,
        category: d.bbox.category,
        score: d.score,
    }
}

/// Constant-velocity prediction over `dt` seconds.
pub fn kf_predict(t: &Track, dt: f64, q: &Cov) -> Track {
    let mut f = Cov::identity();
    f[(0, 7)] = dt;
    f[(1, 8)] = dt;
    f[(2, 9)] = dt;
    let mut out = t.clone();
    out.state = f * t.state;
    out.covariance = f * t.covariance * f.transpose() + q * dt;
    out
}

/// Measurement update on the seven observed components.
pub fn kf_update(t: &Track, d: &Detection, r: &MeasCov) -> Result<Track> {
    let h = observation();
    let mut z = measurement(d);
    let pred_yaw = t.state[YAW];
    let mut dy = normalize_angle(z[YAW] - pred_yaw);
    // A box is symmetric under a half turn; take whichever heading is closer.
    if dy.abs() > FRAC_PI_2 {
        dy = normalize_angle(dy - PI.copysign(dy));
    }
    z[YAW] = pred_yaw + dy;
    let p = &t.covariance;
    let innovation = z - h * t.state;
    let s = h * p * h.transpose() + r;
    let s_chol = s
        .cholesky()
        .ok_or_else(|| Error::Numeric(format!("innovation covariance of track {} is not positive definite", t.id)))?;
    let k = p * h.transpose() * s_chol.inverse();
    let mut out = t.clone();
    out.state = t.state + k * innovation;
    out.state[YAW] = normalize_angle(out.state[YAW]);
    let i_kh = Cov::identity() - k * h;
    let joseph = i_kh * p * i_kh.transpose() + k * r * k.transpose();
    let sym = (joseph + joseph.transpose()) * 0.5;
    if sym.cholesky().is_none() {
        return Err(Error::Numeric(format!("covariance of track {} lost positive definiteness", t.id)));
    }
    out.covariance = sym;
    out.hits += 1;
    out.misses = 0;
    out.category = d.bbox.category;
    out.score = d.score;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Association {
    /// (track index, detection index), sorted by track.
    pub matches: Vec<(usize, usize)>,
    pub unmatched_tracks: Vec<usize>,
    pub unmatched_detections: Vec<usize>,
}

fn split(n_tracks: usize, n_dets: usize, matches: Vec<(usize, usize)>) -> Association {
    let mut t_used = vec![false; n_tracks];
    let mut d_used = vec![false; n_dets];
    for &(i, j) in &matches {
        t_used[i] = true;
        d_used[j] = true;
    }
    Association {
        matches,
        unmatched_tracks: (0..n_tracks).filter(|&i| !t_used[i]).collect(),
        unmatched_detections: (0..n_dets).filter(|&j| !d_used[j]).collect(),
    }
}

/// Gated minimum-cost matching of tracks to detections by center distance:
/// the largest possible set of pairs within `threshold_m`, cheapest first.
pub fn associate(tracks: &[Box3D], detections: &[Box3D], threshold_m: f64) -> Association {
    let cost: Vec<Vec<f64>> = tracks
        .iter()
        .map(|t| detections.iter().map(|d| center_distance(t, d)).collect())
        .collect();
    split(tracks.len(), detections.len(), solve_gated(&cost, threshold_m))
}

fn associate_iou(tracks: &[Box3D], detections: &[Box3D], iou_min: f64) -> Association {
    let cost: Vec<Vec<f64>> = tracks
        .iter()
        .map(|t| detections.iter().map(|d| 1.0 - bev_iou(t, d)).collect())
        .collect();
    split(tracks.len(), detections.len(), solve_gated(&cost, 1.0 - iou_min))
}

#[derive(Debug, Clone)]
pub struct Tracker {
    cfg: TrackerConfig,
    q: Cov,
    r: MeasCov,
    tracks: Vec<Track>,
    next_id: u64,
    last_t: Option<f64>,
    frame_count: u64,
    provenance: Provenance,
}

impl Tracker {
    pub fn new(cfg: TrackerConfig) -> Self {
        Self {
            q: cfg.q(),
            r: cfg.r(),
            cfg,
            tracks: Vec::new(),
            next_id: 1,
            last_t: None,
            frame_count: 0,
            provenance: Provenance::VehicleSide,
        }
    }

    /// Provenance stamped on every output object.
    pub fn with_provenance(mut self, p: Provenance) -> Self {
        self.provenance = p;
        self
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    /// Advances to time `t`, consumes the frame's detections and returns the
    /// tracks reported for this frame.
    pub fn step(&mut self, detections: &[Detection], t: f64) -> Result<Vec<TrackedObject>> {
        let dt = match self.last_t {
            Some(prev) if !(t > prev) => {
                return Err(Error::Ordering(format!("tracker time must increase: {prev} then {t}")));
            }
            Some(prev) => t - prev,
            None => 0.0,
        };
        self.last_t = Some(t);
        self.frame_count += 1;

        for tr in self.tracks.iter_mut() {
            *tr = kf_predict(tr, dt, &self.q);
        }
        let boxes: Vec<Box3D> = self.tracks.iter().map(Track::bbox).collect();
        let det_boxes: Vec<Box3D> = detections.iter().map(|d| d.bbox).collect();
        let assoc = match self.cfg.association {
            AssociationMetric::Distance => associate(&boxes, &det_boxes, self.cfg.gate_m),
            AssociationMetric::Iou => associate_iou(&boxes, &det_boxes, self.cfg.iou_min),
        };
        for &(i, j) in &assoc.matches {
            let updated = kf_update(&self.tracks[i], &detections[j], &self.r)?;
            self.tracks[i] = updated;
            if self.tracks[i].hits >= self.cfg.min_hits {
                self.tracks[i].confirmed = true;
            }
        }
        for &i in &assoc.unmatched_tracks {
            self.tracks[i].misses += 1;
        }
        let max_age = self.cfg.max_age;
        self.tracks.retain(|tr| tr.misses <= max_age);
        for &j in &assoc.unmatched_detections {
            let tr = new_track(self.next_id, &detections[j], &self.cfg);
            self.next_id += 1;
            self.tracks.push(tr);
        }

        let warmup = self.cfg.report_warmup && self.frame_count <= self.cfg.min_hits as u64;
        Ok(self
            .tracks
            .iter()
            .filter(|tr| tr.misses == 0 && (tr.confirmed || warmup))
            .map(|tr| TrackedObject {
                bbox: tr.bbox(),
                track_id: tr.id,
                timestamp: t,
                provenance: self.provenance,
                score: tr.score,
            })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackRecord {
    pub t: f64,
    pub track_id: u64,
    #[serde(rename = "box")]
    pub bbox: Box3D,
    pub score: f64,
}

pub fn write_tracks_jsonl<W: Write>(frames: &[Vec<TrackedObject>], mut w: W) -> Result<()> {
    for o in frames.iter().flatten() {
        let rec = TrackRecord {
            t: o.timestamp,
            track_id: o.track_id,
            bbox: o.bbox,
            score: o.score,
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
