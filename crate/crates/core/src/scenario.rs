//! Synthetic intersection scenes: kinematic agents, ego trajectory, a fixed
//! roadside sensor, static occluders, and ground-truth extraction per view.

use crate::error::{Error, Result};
use crate::geometry::{bev_iou, center_distance, transform_box, Box3D, Category, Pose, Region};
use crate::seeds;
use crate::sensing::visibility;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};

/// Ground-plane rectangle that blocks sensing rays but returns no points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Occluder {
    pub cx: f64,
    pub cy: f64,
    pub length: f64,
    pub width: f64,
    #[serde(default)]
    pub yaw: f64,
}

impl Occluder {
    pub fn footprint(&self) -> Box3D {
        Box3D::new([self.cx, self.cy, 1.5], (self.width, self.length, 3.0), self.yaw, Category::Truck)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    pub speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub id: u64,
    pub category: Category,
    /// (w, l, h) in meters.
    pub dims: (f64, f64, f64),
    /// One waypoint per frame, on the frame grid.
    pub waypoints: Vec<Waypoint>,
}

impl Agent {
    pub fn box_at_frame(&self, k: usize) -> Box3D {
        let wp = &self.waypoints[k];
        Box3D::new([wp.x, wp.y, self.dims.2 / 2.0], self.dims, wp.yaw, self.category)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum View {
    Vehicle,
    Infra,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Provenance {
    VehicleSide,
    InfraSide,
    Fused,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackedObject {
    #[serde(rename = "box")]
    pub bbox: Box3D,
    pub track_id: u64,
    pub timestamp: f64,
    pub provenance: Provenance,
    #[serde(default = "one")]
    pub score: f64,
}

fn one() -> f64 {
    1.0
}

/// A piece of motion with constant speed and constant yaw rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub duration_s: f64,
    pub speed: f64,
    #[serde(default)]
    pub yaw_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    #[serde(default = "default_category")]
    pub category: Category,
    #[serde(default)]
    pub dims: Option<(f64, f64, f64)>,
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub yaw: f64,
    /// The final segment is extended to the end of the scenario.
    pub segments: Vec<Segment>,
}

fn default_category() -> Category {
    Category::Car
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EgoConfig {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    pub speed: f64,
}

impl Default for EgoConfig {
    fn default() -> Self {
        Self {
            x: 0.0,
            y: 0.0,
            yaw: 0.0,
            speed: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub duration_s: f64,
    pub frame_rate_hz: f64,
    /// Randomly generated agents, in addition to `agents`.
    pub num_agents: usize,
    pub speed_min: f64,
    pub speed_max: f64,
    pub turn_probability: f64,
    pub speed_change_probability: f64,
    /// Minimum center distance kept between any two agents at every frame.
    pub min_separation_m: f64,
    pub occlusion: bool,
    /// Overrides the built-in occluder layout when set.
    pub occluders: Option<Vec<Occluder>>,
    pub region: Region,
    pub ego: EgoConfig,
    pub infra: Pose,
    pub ego_range_m: f64,
    pub infra_range_m: f64,
    pub agents: Vec<AgentConfig>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            duration_s: 15.0,
            frame_rate_hz: 10.0,
            num_agents: 10,
            speed_min: 4.0,
            speed_max: 12.0,
            turn_probability: 0.3,
            speed_change_probability: 0.3,
            min_separation_m: 7.0,
            occlusion: true,
            occluders: None,
            region: Region::default(),
            ego: EgoConfig::default(),
            infra: Pose::new(55.0, 22.0, 0.0, -FRAC_PI_2),
            ego_range_m: 70.0,
            infra_range_m: 50.0,
            agents: Vec::new(),
        }
    }
}

/// Built-in layout: a row of parked trucks north of the main road and a
/// building block on the south-east corner of the intersection.
pub fn default_occluders() -> Vec<Occluder> {
    vec![
        Occluder {
            cx: 32.0,
            cy: 9.5,
            length: 26.0,
            width: 2.5,
            yaw: 0.0,
        },
        Occluder {
            cx: 75.0,
            cy: -19.0,
            length: 16.0,
            width: 12.0,
            yaw: 0.0,
        },
    ]
}

/// Lane running behind the parked-truck row, hidden from the main road.
const SHADOW_LANE_Y: f64 = 14.0;
const SHADOW_ATTEMPTS: usize = 20;
const MAIN_LANES: [(f64, f64); 4] = [(-5.25, 0.0), (-1.75, 0.0), (1.75, PI), (5.25, PI)];
const CROSS_LANES: [(f64, f64); 2] = [(56.75, FRAC_PI_2), (53.25, -FRAC_PI_2)];

impl ScenarioConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn num_frames(&self) -> usize {
        (self.duration_s * self.frame_rate_hz).round() as usize + 1
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return bad("duration_s must be > 0");
        }
        if !(self.frame_rate_hz > 0.0 && self.frame_rate_hz.is_finite()) {
            return bad("frame_rate_hz must be > 0");
        }
        if !(self.speed_min >= 0.0 && self.speed_min <= self.speed_max) {
            return bad("need 0 <= speed_min <= speed_max");
        }
        if !(0.0..=1.0).contains(&self.turn_probability)
            || !(0.0..=1.0).contains(&self.speed_change_probability)
        {
            return bad("probabilities must lie in [0, 1]");
        }
        if !self.region.is_valid() {
            return bad("region must satisfy x_min < x_max and y_min < y_max");
        }
        if !(self.ego_range_m > 0.0 && self.infra_range_m > 0.0) {
            return bad("sensor ranges must be > 0");
        }
        if self.ego.speed < 0.0 {
            return bad("ego speed must be >= 0");
        }
        for (i, a) in self.agents.iter().enumerate() {
            if a.segments.is_empty() {
                return Err(Error::Config(format!("agent {i} has no motion segments")));
            }
            if a.segments.iter().any(|s| !(s.duration_s > 0.0) || s.speed < 0.0) {
                return Err(Error::Config(format!(
                    "agent {i}: segments need duration_s > 0 and speed >= 0"
                )));
            }
            if let Some((w, l, h)) = a.dims {
                if !(w > 0.0 && l > 0.0 && h > 0.0) {
                    return Err(Error::Config(format!("agent {i}: dims must be > 0")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub duration: f64,
    pub frame_rate: f64,
    pub agents: Vec<Agent>,
    /// Ego-to-world pose, one per frame.
    pub ego_poses: Vec<Pose>,
    /// Infrastructure-to-world pose, constant over the run.
    pub infra_pose: Pose,
    pub occluders: Vec<Occluder>,
    pub region: Region,
    pub ego_range: f64,
    pub infra_range: f64,
    pub seed: u64,
}

impl Scenario {
    pub fn num_frames(&self) -> usize {
        self.ego_poses.len()
    }

    pub fn frame_time(&self, k: usize) -> f64 {
        k as f64 / self.frame_rate
    }

    /// Frame index of `t`, or an error when `t` is off the frame grid.
    pub fn frame_index(&self, t: f64) -> Result<usize> {
        let k = (t * self.frame_rate).round();
        if k < 0.0 || (k / self.frame_rate - t).abs() > 1e-6 || k as usize >= self.num_frames() {
            return Err(Error::OffGrid(t));
        }
        Ok(k as usize)
    }

    pub fn ego_pose(&self, k: usize) -> Pose {
        self.ego_poses[k]
    }

    /// Transform taking infrastructure-frame coordinates into the ego frame at frame `k`.
    pub fn infra_to_ego(&self, k: usize) -> Pose {
        self.ego_poses[k].inverse().compose(&self.infra_pose)
    }

    pub fn sensor_pose(&self, view: View, k: usize) -> Pose {
        match view {
            View::Vehicle => self.ego_poses[k],
            View::Infra => self.infra_pose,
        }
    }

    pub fn sensor_range(&self, view: View) -> f64 {
        match view {
            View::Vehicle => self.ego_range,
            View::Infra => self.infra_range,
        }
    }

    /// World-frame agent boxes at frame `k`, paired with their ids.
    pub fn boxes_at(&self, k: usize) -> Vec<(u64, Box3D)> {
        self.agents.iter().map(|a| (a.id, a.box_at_frame(k))).collect()
    }

    pub fn occluder_boxes(&self) -> Vec<Box3D> {
        self.occluders.iter().map(Occluder::footprint).collect()
    }
}

fn integrate(x: f64, y: f64, yaw: f64, seg: &Segment, dt: f64) -> (f64, f64, f64) {
    let v = seg.speed;
    let w = seg.yaw_rate;
    if w.abs() < 1e-12 {
        (x + v * yaw.cos() * dt, y + v * yaw.sin() * dt, yaw)
    } else {
        let yaw2 = yaw + w * dt;
        (
            x + v / w * (yaw2.sin() - yaw.sin()),
            y + v / w * (yaw.cos() - yaw2.cos()),
            yaw2,
        )
    }
}

/// Samples the piecewise motion on the frame grid in closed form.
fn rollout(x0: f64, y0: f64, yaw0: f64, segments: &[Segment], times: &[f64]) -> Vec<Waypoint> {
    // Segment start states.
    let mut starts = Vec::with_capacity(segments.len());
    let (mut x, mut y, mut yaw, mut t0) = (x0, y0, yaw0, 0.0);
    for seg in segments {
        starts.push((t0, x, y, yaw));
        (x, y, yaw) = integrate(x, y, yaw, seg, seg.duration_s);
        t0 += seg.duration_s;
    }
    times
        .iter()
        .map(|&t| {
            let idx = starts
                .iter()
                .rposition(|s| s.0 <= t + 1e-12)
                .unwrap_or(0);
            let (ts, sx, sy, syaw) = starts[idx];
            let seg = &segments[idx];
            let (px, py, pyaw) = integrate(sx, sy, syaw, seg, t - ts);
            Waypoint {
                t,
                x: px,
                y: py,
                yaw: crate::geometry::normalize_angle(pyaw),
                speed: seg.speed,
            }
        })
        .collect()
}

fn pick_category(r: f64) -> Category {
    match r {
        r if r < 0.6 => Category::Car,
        r if r < 0.8 => Category::Van,
        r if r < 0.9 => Category::Bus,
        _ => Category::Truck,
    }
}

/// Draws one random agent route: a lane, an optional quarter turn, an optional speed change.
fn random_route<R: Rng>(cfg: &ScenarioConfig, rng: &mut R, shadow: bool) -> AgentConfig {
    let category = if shadow { Category::Car } else { pick_category(rng.random()) };
    let (w, l, h) = category.nominal_dims();
    let scale = rng.random_range(0.95..1.05);
    let dims = Some((w * scale, l * scale, h * scale));
    let speed = if cfg.speed_max > cfg.speed_min {
        rng.random_range(cfg.speed_min..cfg.speed_max)
    } else {
        cfg.speed_min
    };

    let (x, y, yaw) = if shadow {
        (rng.random_range(15.0..30.0), SHADOW_LANE_Y, 0.0)
    } else if rng.random_bool(0.7) {
        let (ly, lyaw) = MAIN_LANES[rng.random_range(0..MAIN_LANES.len())];
        (rng.random_range(5.0..95.0), ly, lyaw)
    } else {
        let (lx, lyaw) = CROSS_LANES[rng.random_range(0..CROSS_LANES.len())];
        (lx, rng.random_range(-35.0..35.0), lyaw)
    };

    let total = cfg.duration_s;
    let mut segments = Vec::new();
    let mut elapsed = 0.0;
    let mut v = speed;
    if !shadow && rng.random_bool(cfg.turn_probability) && v > 0.0 {
        let straight = 1.0 + rng.random::<f64>() * (total / 2.0 - 1.0).max(0.0);
        let radius = rng.random_range(8.0..15.0);
        let dir = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let yaw_rate = dir * v / radius;
        segments.push(Segment { duration_s: straight, speed: v, yaw_rate: 0.0 });
        segments.push(Segment {
            duration_s: FRAC_PI_2 / yaw_rate.abs(),
            speed: v,
            yaw_rate,
        });
        elapsed += straight + FRAC_PI_2 / yaw_rate.abs();
    }
    if rng.random_bool(cfg.speed_change_probability) && elapsed < total - 1.0 {
        let hold = rng.random_range(0.5..(total - elapsed).max(1.0));
        segments.push(Segment { duration_s: hold, speed: v, yaw_rate: 0.0 });
        elapsed += hold;
        v = (v * rng.random_range(0.5..1.5)).clamp(cfg.speed_min, cfg.speed_max.max(cfg.speed_min));
    }
    segments.push(Segment {
        duration_s: (total - elapsed).max(0.1),
        speed: v,
        yaw_rate: 0.0,
    });
    AgentConfig { category, dims, x, y, yaw, segments }
}

fn build_agent(id: u64, ac: &AgentConfig, total: f64, times: &[f64]) -> Agent {
    let mut segments = ac.segments.clone();
    let covered: f64 = segments.iter().map(|s| s.duration_s).sum();
    if covered < total {
        if let Some(last) = segments.last_mut() {
            last.duration_s += total - covered;
        }
    }
    Agent {
        id,
        category: ac.category,
        dims: ac.dims.unwrap_or_else(|| ac.category.nominal_dims()),
        waypoints: rollout(ac.x, ac.y, ac.yaw, &segments, times),
    }
}

fn conflicts(candidate: &Agent, accepted: &[Agent], occluders: &[Box3D], min_sep: f64) -> bool {
    for k in 0..candidate.waypoints.len() {
        let b = candidate.box_at_frame(k);
        if occluders.iter().any(|o| bev_iou(&b, o) > 0.0) {
            return true;
        }
        if accepted
            .iter()
            .any(|a| center_distance(&a.box_at_frame(k), &b) < min_sep || bev_iou(&a.box_at_frame(k), &b) > 0.0)
        {
            return true;
        }
    }
    false
}

/// Builds a scenario; identical `(config, seed)` pairs give identical scenarios.
pub fn generate_scenario(cfg: &ScenarioConfig, seed: u64) -> Result<Scenario> {
    cfg.validate()?;
    let n = cfg.num_frames();
    let times: Vec<f64> = (0..n).map(|k| k as f64 / cfg.frame_rate_hz).collect();
    let occluders = match (&cfg.occluders, cfg.occlusion) {
        (Some(list), true) => list.clone(),
        (None, true) => default_occluders(),
        (_, false) => Vec::new(),
    };
    let occluder_boxes: Vec<Box3D> = occluders.iter().map(Occluder::footprint).collect();

    let mut agents: Vec<Agent> = Vec::new();
    for (i, ac) in cfg.agents.iter().enumerate() {
        agents.push(build_agent(i as u64 + 1, ac, cfg.duration_s, &times));
    }

    let mut rng = seeds::rng(&[seeds::STREAM_SCENARIO, seed]);
    let use_shadow_lane = cfg.occlusion && cfg.occluders.is_none();
    let mut shadow_placed = false;
    // The shadow lane may already be taken by configured agents; stop trying
    // it after a while so the remaining agents still get placed.
    let mut shadow_tries = 0;
    for i in 0..cfg.num_agents {
        let id = (cfg.agents.len() + i) as u64 + 1;
        for _attempt in 0..40 {
            let shadow = use_shadow_lane && !shadow_placed && shadow_tries < SHADOW_ATTEMPTS;
            shadow_tries += usize::from(shadow);
            let route = random_route(cfg, &mut rng, shadow);
            let agent = build_agent(id, &route, cfg.duration_s, &times);
            if !conflicts(&agent, &agents, &occluder_boxes, cfg.min_separation_m) {
                shadow_placed |= shadow;
                agents.push(agent);
                break;
            }
        }
    }

    let ego_seg = [Segment { duration_s: cfg.duration_s + 1.0, speed: cfg.ego.speed, yaw_rate: 0.0 }];
    let ego_poses = rollout(cfg.ego.x, cfg.ego.y, cfg.ego.yaw, &ego_seg, &times)
        .into_iter()
        .map(|w| Pose::new(w.x, w.y, 0.0, w.yaw))
        .collect();

    Ok(Scenario {
        duration: cfg.duration_s,
        frame_rate: cfg.frame_rate_hz,
        agents,
        ego_poses,
        infra_pose: cfg.infra,
        occluders,
        region: cfg.region,
        ego_range: cfg.ego_range_m,
        infra_range: cfg.infra_range_m,
        seed,
    })
}

/// Agents observable from the given sensor at time `t`, boxes in the world frame.
pub fn ground_truth_at(s: &Scenario, t: f64, view: View) -> Result<Vec<TrackedObject>> {
    let k = s.frame_index(t)?;
    let boxes = s.boxes_at(k);
    let occluders = s.occluder_boxes();
    let sensor = s.sensor_pose(view, k);
    let range = s.sensor_range(view);
    let provenance = match view {
        View::Vehicle => Provenance::VehicleSide,
        View::Infra => Provenance::InfraSide,
    };
    let t_grid = s.frame_time(k);
    Ok(boxes
        .iter()
        .enumerate()
        .filter(|(i, (_, b))| {
            (b.x - sensor.x).hypot(b.y - sensor.y) <= range
                && visibility::visible_fraction(&boxes, *i, &occluders, (sensor.x, sensor.y)) > 0.0
        })
        .map(|(_, &(id, b))| TrackedObject {
            bbox: b,
            track_id: id,
            timestamp: t_grid,
            provenance,
            score: 1.0,
        })
        .collect())
}

/// Union of the two views keyed by track id, restricted to centers inside `r`.
///
/// Both inputs must already be in the ego frame at a common timestamp.
pub fn cooperative_ground_truth(
    gt_v: &[TrackedObject],
    gt_i: &[TrackedObject],
    r: &Region,
) -> Vec<TrackedObject> {
    let mut merged: BTreeMap<u64, TrackedObject> = BTreeMap::new();
    for o in gt_v.iter().chain(gt_i) {
        if r.contains(o.bbox.x, o.bbox.y) {
            merged
                .entry(o.track_id)
                .and_modify(|e| {
                    if e.provenance != o.provenance {
                        e.provenance = Provenance::Fused;
                    }
                })
                .or_insert(*o);
        }
    }
    merged.into_values().collect()
}

/// Cooperative ground truth at frame `k`, in the ego frame.
pub fn cooperative_gt_at_frame(s: &Scenario, k: usize) -> Result<Vec<TrackedObject>> {
    let t = s.frame_time(k);
    let to_ego = s.ego_pose(k).inverse();
    let lift = |v: Vec<TrackedObject>| -> Vec<TrackedObject> {
        v.into_iter()
            .map(|o| TrackedObject {
                bbox: transform_box(&o.bbox, &to_ego),
                ..o
            })
            .collect()
    };
    let gt_v = lift(ground_truth_at(s, t, View::Vehicle)?);
    let gt_i = lift(ground_truth_at(s, t, View::Infra)?);
    Ok(cooperative_ground_truth(&gt_v, &gt_i, &s.region))
}
