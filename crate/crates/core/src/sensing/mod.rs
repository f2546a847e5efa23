//! Simulated LiDAR sampling, BEV rasterization, and the linear feature-flow model.

pub mod visibility;

use crate::error::{Error, Result};
use crate::geometry::{Pose, Region};
use crate::scenario::{Scenario, View};
use crate::seeds;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Coordinate frame a spatial quantity is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Frame {
    Ego,
    Infra,
    World,
}

impl Frame {
    pub fn code(self) -> i32 {
        match self {
            Frame::Ego => 0,
            Frame::Infra => 1,
            Frame::World => 2,
        }
    }

    pub fn from_code(c: i32) -> Option<Self> {
        match c {
            0 => Some(Frame::Ego),
            1 => Some(Frame::Infra),
            2 => Some(Frame::World),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub intensity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Point>,
    pub frame: Frame,
    pub timestamp: f64,
}

impl PointCloud {
    pub fn empty(frame: Frame, timestamp: f64) -> Self {
        Self {
            points: Vec::new(),
            frame,
            timestamp,
        }
    }

    pub fn transformed(&self, pose: &Pose, frame: Frame) -> PointCloud {
        PointCloud {
            points: self
                .points
                .iter()
                .map(|p| {
                    let [x, y, z] = pose.apply([p.x, p.y, p.z]);
                    Point { x, y, z, ..*p }
                })
                .collect(),
            frame,
            timestamp: self.timestamp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Gaussian position noise, meters.
    pub position_sigma: f64,
    pub dropout: f64,
    /// Ground clutter returns per square meter within sensor range.
    pub clutter_density: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            position_sigma: 0.05,
            dropout: 0.05,
            clutter_density: 0.05,
        }
    }
}

impl NoiseConfig {
    pub fn noiseless() -> Self {
        Self {
            position_sigma: 0.0,
            dropout: 0.0,
            clutter_density: 0.0,
        }
    }
}

/// Vertical layers of returns emitted per visible perimeter sample.
pub const RETURN_LAYERS: usize = 3;

/// One LiDAR sweep in the sensor's own frame.
///
/// Visible outline samples of each agent within range yield `RETURN_LAYERS`
/// returns stacked up to the roof height; clutter lands on the ground.
pub fn sample_point_cloud(
    s: &Scenario,
    t: f64,
    sensor: View,
    noise: &NoiseConfig,
    rng_seed: u64,
) -> Result<PointCloud> {
    let k = s.frame_index(t)?;
    let stream = match sensor {
        View::Vehicle => seeds::STREAM_SENSOR_EGO,
        View::Infra => seeds::STREAM_SENSOR_INFRA,
    };
    let mut rng = seeds::rng(&[stream, rng_seed, k as u64]);
    let gauss = Normal::new(0.0, noise.position_sigma.max(0.0))
        .map_err(|e| Error::Config(format!("position_sigma: {e}")))?;
    let pose = s.sensor_pose(sensor, k);
    let to_sensor = pose.inverse();
    let origin = (pose.x, pose.y);
    let range = s.sensor_range(sensor);
    let boxes = s.boxes_at(k);
    let occluders = s.occluder_boxes();
    let jitter = |rng: &mut rand_chacha::ChaCha8Rng| {
        if noise.position_sigma > 0.0 {
            gauss.sample(rng)
        } else {
            0.0
        }
    };

    let mut points = Vec::new();
    for (idx, (_, b)) in boxes.iter().enumerate() {
        if (b.x - origin.0).hypot(b.y - origin.1) > range + b.l {
            continue;
        }
        for (px, py) in visibility::perimeter_samples(b, visibility::PERIMETER_SPACING) {
            if (px - origin.0).hypot(py - origin.1) > range
                || visibility::ray_blocked(origin, (px, py), &boxes, Some(idx), &occluders)
            {
                continue;
            }
            for layer in 0..RETURN_LAYERS {
                if noise.dropout > 0.0 && rng.random_bool(noise.dropout.min(1.0)) {
                    continue;
                }
                let z = b.h * (layer + 1) as f64 / RETURN_LAYERS as f64;
                let wx = px + jitter(&mut rng);
                let wy = py + jitter(&mut rng);
                let wz = z + jitter(&mut rng);
                let [x, y, z] = to_sensor.apply([wx, wy, wz]);
                points.push(Point {
                    x,
                    y,
                    z,
                    intensity: rng.random_range(0.2..0.9),
                });
            }
        }
    }

    if noise.clutter_density > 0.0 {
        let n = (noise.clutter_density * std::f64::consts::PI * range * range).round() as usize;
        for _ in 0..n {
            let r = range * rng.random::<f64>().sqrt();
            let th = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let (wx, wy) = (origin.0 + r * th.cos(), origin.1 + r * th.sin());
            let z = rng.random_range(0.0..0.3);
            let intensity = rng.random_range(0.0..0.3);
            if visibility::ray_blocked(origin, (wx, wy), &boxes, None, &occluders) {
                continue;
            }
            let [x, y, z] = to_sensor.apply([wx, wy, z]);
            points.push(Point { x, y, z, intensity });
        }
    }

    Ok(PointCloud {
        points,
        frame: match sensor {
            View::Vehicle => Frame::Ego,
            View::Infra => Frame::Infra,
        },
        timestamp: s.frame_time(k),
    })
}

/// Raster geometry: `cols` along x, `rows` along y, row-major cells, channels innermost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x0: f64,
    pub y0: f64,
    pub cell_size: f64,
    pub cols: usize,
    pub rows: usize,
    pub channels: usize,
}

/// Channel layout of rasterized point clouds.
pub const CH_DENSITY: usize = 0;
pub const CH_HEIGHT: usize = 1;
pub const CH_INTENSITY: usize = 2;

impl GridSpec {
    /// 0.5 m cells, 200 × 160, anchored at the region's lower corner.
    pub fn for_region(r: &Region) -> Self {
        Self {
            x0: r.x_min,
            y0: r.y_min,
            cell_size: 0.5,
            cols: 200,
            rows: 160,
            channels: 3,
        }
    }

    /// Same raster size, centered on the sensor.
    pub fn sensor_centered() -> Self {
        Self {
            x0: -50.0,
            y0: -40.0,
            cell_size: 0.5,
            cols: 200,
            rows: 160,
            channels: 3,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.cell_size > 0.0 && self.cols > 0 && self.rows > 0 && self.channels > 0
    }

    pub fn num_cells(&self) -> usize {
        self.cols * self.rows
    }

    pub fn len(&self) -> usize {
        self.num_cells() * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, row: usize, col: usize, ch: usize) -> usize {
        (row * self.cols + col) * self.channels + ch
    }

    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let c = ((x - self.x0) / self.cell_size).floor();
        let r = ((y - self.y0) / self.cell_size).floor();
        if c < 0.0 || r < 0.0 || c >= self.cols as f64 || r >= self.rows as f64 {
            None
        } else {
            Some((r as usize, c as usize))
        }
    }

    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.x0 + (col as f64 + 0.5) * self.cell_size,
            self.y0 + (row as f64 + 0.5) * self.cell_size,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureGrid {
    pub spec: GridSpec,
    pub values: Vec<f64>,
    pub timestamp: f64,
    pub frame: Frame,
}

impl FeatureGrid {
    pub fn zeros(spec: GridSpec, timestamp: f64, frame: Frame) -> Self {
        Self {
            spec,
            values: vec![0.0; spec.len()],
            timestamp,
            frame,
        }
    }

    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.values[self.spec.index(row, col, ch)]
    }

    pub fn set(&mut self, row: usize, col: usize, ch: usize, v: f64) {
        let i = self.spec.index(row, col, ch);
        self.values[i] = v;
    }
}

/// Per-second rate of change of a [`FeatureGrid`], same layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureFlow {
    pub spec: GridSpec,
    pub values: Vec<f64>,
    pub timestamp: f64,
    pub frame: Frame,
}

impl FeatureFlow {
    pub fn zeros(spec: GridSpec, timestamp: f64, frame: Frame) -> Self {
        Self {
            spec,
            values: vec![0.0; spec.len()],
            timestamp,
            frame,
        }
    }
}

/// Point count at which the density channel saturates.
pub const DENSITY_CAP: f64 = 10.0;

/// Channels: density (count / cap, saturating at 1), max height, mean intensity.
pub fn rasterize_bev(pc: &PointCloud, spec: &GridSpec) -> FeatureGrid {
    let mut counts = vec![0u32; spec.num_cells()];
    let mut max_z = vec![f64::NEG_INFINITY; spec.num_cells()];
    let mut sum_i = vec![0.0f64; spec.num_cells()];
    for p in &pc.points {
        if let Some((r, c)) = spec.cell_of(p.x, p.y) {
            let cell = r * spec.cols + c;
            counts[cell] += 1;
            max_z[cell] = max_z[cell].max(p.z);
            sum_i[cell] += p.intensity;
        }
    }
    let mut g = FeatureGrid::zeros(*spec, pc.timestamp, pc.frame);
    for cell in 0..spec.num_cells() {
        let n = counts[cell];
        if n == 0 {
            continue;
        }
        let base = cell * spec.channels;
        g.values[base + CH_DENSITY] = (n as f64 / DENSITY_CAP).min(1.0);
        if spec.channels > CH_HEIGHT {
            g.values[base + CH_HEIGHT] = max_z[cell];
        }
        if spec.channels > CH_INTENSITY {
            // Summation order is the point order; the mean is insensitive to it up to rounding.
            g.values[base + CH_INTENSITY] = sum_i[cell] / n as f64;
        }
    }
    g
}

/// Deterministic feature encoder applied to every raster before it is used
/// or transmitted: Gaussian smoothing of the density channel followed by a
/// sparsifying floor that zeroes weak responses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureEncoder {
    /// Smoothing scale in cells; 0 disables smoothing.
    pub sigma_cells: f64,
    pub floor: f64,
}

impl Default for FeatureEncoder {
    fn default() -> Self {
        Self {
            sigma_cells: 1.5,
            floor: 0.02,
        }
    }
}

impl FeatureEncoder {
    pub fn identity() -> Self {
        Self {
            sigma_cells: 0.0,
            floor: 0.0,
        }
    }

    fn kernel(&self) -> Vec<f64> {
        let radius = (3.0 * self.sigma_cells).ceil() as isize;
        let mut k: Vec<f64> = (-radius..=radius)
            .map(|i| (-(i * i) as f64 / (2.0 * self.sigma_cells * self.sigma_cells)).exp())
            .collect();
        let sum: f64 = k.iter().sum();
        k.iter_mut().for_each(|v| *v /= sum);
        k
    }

    pub fn encode(&self, g: &FeatureGrid) -> FeatureGrid {
        let mut out = g.clone();
        if self.sigma_cells <= 0.0 && self.floor <= 0.0 {
            return out;
        }
        let spec = g.spec;
        let (rows, cols) = (spec.rows, spec.cols);
        let mut density: Vec<f64> = (0..spec.num_cells())
            .map(|cell| g.values[cell * spec.channels + CH_DENSITY])
            .collect();
        if self.sigma_cells > 0.0 {
            let k = self.kernel();
            let radius = (k.len() / 2) as isize;
            let mut tmp = vec![0.0; density.len()];
            for r in 0..rows {
                let row = &density[r * cols..(r + 1) * cols];
                if row.iter().all(|&v| v == 0.0) {
                    continue;
                }
                for (c, &v) in row.iter().enumerate() {
                    if v == 0.0 {
                        continue;
                    }
                    for (ki, kv) in k.iter().enumerate() {
                        let cc = c as isize + ki as isize - radius;
                        if (0..cols as isize).contains(&cc) {
                            tmp[r * cols + cc as usize] += v * kv;
                        }
                    }
                }
            }
            let mut blurred = vec![0.0; density.len()];
            for r in 0..rows {
                for c in 0..cols {
                    let v = tmp[r * cols + c];
                    if v == 0.0 {
                        continue;
                    }
                    for (ki, kv) in k.iter().enumerate() {
                        let rr = r as isize + ki as isize - radius;
                        if (0..rows as isize).contains(&rr) {
                            blurred[rr as usize * cols + c] += v * kv;
                        }
                    }
                }
            }
            density = blurred;
        }
        for (cell, d) in density.into_iter().enumerate() {
            out.values[cell * spec.channels + CH_DENSITY] = if d < self.floor { 0.0 } else { d };
        }
        out
    }
}

fn check_specs(a: &GridSpec, b: &GridSpec) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("grid specs differ: {a:?} vs {b:?}")));
    }
    Ok(())
}

/// First-order backward difference `(f_curr - f_prev) / Δt`.
pub fn extract_feature_flow(f_prev: &FeatureGrid, f_curr: &FeatureGrid) -> Result<FeatureFlow> {
    check_specs(&f_prev.spec, &f_curr.spec)?;
    let dt = f_curr.timestamp - f_prev.timestamp;
    if !(dt > 0.0) {
        return Err(Error::Ordering(format!(
            "flow needs increasing timestamps, got {} then {}",
            f_prev.timestamp, f_curr.timestamp
        )));
    }
    Ok(FeatureFlow {
        spec: f_curr.spec,
        values: f_curr
            .values
            .iter()
            .zip(&f_prev.values)
            .map(|(c, p)| (c - p) / dt)
            .collect(),
        timestamp: f_curr.timestamp,
        frame: f_curr.frame,
    })
}

/// Linear extrapolation `f0 + tau * f1`; the density channel is floored at zero.
pub fn predict_feature(f0: &FeatureGrid, f1: &FeatureFlow, tau: f64) -> Result<FeatureGrid> {
    check_specs(&f0.spec, &f1.spec)?;
    if !(tau >= 0.0) {
        return Err(Error::Ordering(format!("prediction horizon must be >= 0, got {tau}")));
    }
    let ch = f0.spec.channels;
    let values = f0
        .values
        .iter()
        .zip(&f1.values)
        .enumerate()
        .map(|(i, (a, b))| {
            let v = a + tau * b;
            if i % ch == CH_DENSITY {
                v.max(0.0)
            } else {
                v
            }
        })
        .collect();
    Ok(FeatureGrid {
        spec: f0.spec,
        values,
        timestamp: f0.timestamp + tau,
        frame: f0.frame,
    })
}
