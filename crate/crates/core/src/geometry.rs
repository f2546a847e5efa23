//! Planar poses, oriented 3D boxes and the overlap/distance measures built on them.
//!
//! Rotations are yaw-only: every frame in the simulator shares the world's
//! vertical axis, so a pose is a ground-plane rigid motion plus a height offset.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Wraps an angle into `(-π, π]`.
pub fn normalize_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

/// Rigid transform taking coordinates in a source frame to a target frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn new(x: f64, y: f64, z: f64, yaw: f64) -> Self {
        Self {
            x,
            y,
            z,
            yaw: normalize_angle(yaw),
        }
    }

    pub const fn identity() -> Self {
        Self {
            x: 0.0,
            y: 0.0,
            z: 0.0,
            yaw: 0.0,
        }
    }

    /// Maps a point from the source frame into the target frame.
    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let (s, c) = self.yaw.sin_cos();
        [
            c * p[0] - s * p[1] + self.x,
            s * p[0] + c * p[1] + self.y,
            p[2] + self.z,
        ]
    }

    pub fn apply_2d(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.yaw.sin_cos();
        (c * x - s * y + self.x, s * x + c * y + self.y)
    }

    pub fn inverse(&self) -> Pose {
        let (s, c) = self.yaw.sin_cos();
        Pose::new(
            -(c * self.x + s * self.y),
            -(-s * self.x + c * self.y),
            -self.z,
            -self.yaw,
        )
    }

    /// `self ∘ other`: applying the result equals applying `other`, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        let [x, y, z] = self.apply([other.x, other.y, other.z]);
        Pose::new(x, y, z, self.yaw + other.yaw)
    }
}

pub fn compose(a: &Pose, b: &Pose) -> Pose {
    a.compose(b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    Car,
    Van,
    Bus,
    Truck,
}

impl Category {
    pub const ALL: [Category; 4] = [Category::Car, Category::Van, Category::Bus, Category::Truck];

    pub fn code(self) -> u8 {
        match self {
            Category::Car => 0,
            Category::Van => 1,
            Category::Bus => 2,
            Category::Truck => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    /// Nominal (w, l, h) in meters.
    pub fn nominal_dims(self) -> (f64, f64, f64) {
        match self {
            Category::Car => (1.8, 4.5, 1.5),
            Category::Van => (2.0, 5.2, 2.1),
            Category::Bus => (2.5, 11.0, 3.2),
            Category::Truck => (2.5, 8.0, 3.4),
        }
    }
}

/// Oriented cuboid: center, extents (`w` across, `l` along the heading) and yaw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub w: f64,
    pub l: f64,
    pub h: f64,
    pub yaw: f64,
    pub category: Category,
}

impl Box3D {
    pub fn new(center: [f64; 3], dims: (f64, f64, f64), yaw: f64, category: Category) -> Self {
        Self {
            x: center[0],
            y: center[1],
            z: center[2],
            w: dims.0,
            l: dims.1,
            h: dims.2,
            yaw: normalize_angle(yaw),
            category,
        }
    }

    pub fn center(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn is_valid(&self) -> bool {
        let finite = [self.x, self.y, self.z, self.w, self.l, self.h, self.yaw]
            .iter()
            .all(|v| v.is_finite());
        finite && self.w > 0.0 && self.l > 0.0 && self.h > 0.0 && self.yaw > -PI && self.yaw <= PI
    }

    /// Ground-plane footprint corners, counter-clockwise.
    pub fn corners(&self) -> [(f64, f64); 4] {
        let (s, c) = self.yaw.sin_cos();
        let (hl, hw) = (self.l / 2.0, self.w / 2.0);
        let local = [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)];
        local.map(|(u, v)| (self.x + c * u - s * v, self.y + s * u + c * v))
    }

    pub fn footprint_area(&self) -> f64 {
        self.w * self.l
    }

    /// Whether the ground-plane point lies inside (or on) the footprint.
    pub fn contains_2d(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.yaw.sin_cos();
        let (dx, dy) = (x - self.x, y - self.y);
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        u.abs() <= self.l / 2.0 + 1e-12 && v.abs() <= self.w / 2.0 + 1e-12
    }
}

pub fn transform_box(b: &Box3D, src_to_dst: &Pose) -> Box3D {
    let [x, y, z] = src_to_dst.apply(b.center());
    Box3D {
        x,
        y,
        z,
        yaw: normalize_angle(b.yaw + src_to_dst.yaw),
        ..*b
    }
}

pub fn center_distance(a: &Box3D, b: &Box3D) -> f64 {
    let (dx, dy, dz) = (a.x - b.x, a.y - b.y, a.z - b.z);
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Axis-aligned evaluation rectangle in the ego frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl Default for Region {
    fn default() -> Self {
        Self {
            x_min: 0.0,
            y_min: -39.68,
            x_max: 100.0,
            y_max: 39.68,
        }
    }
}

impl Region {
    pub fn is_valid(&self) -> bool {
        self.x_min < self.x_max && self.y_min < self.y_max
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

pub fn polygon_area(poly: &[(f64, f64)]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
        acc += a.0 * b.1 - b.0 * a.1;
    }
    acc.abs() / 2.0
}

/// Sutherland–Hodgman clip of `subject` against the convex, counter-clockwise `clip`.
pub fn clip_convex(subject: &[(f64, f64)], clip: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut output: Vec<(f64, f64)> = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let cur_in = cross(a, b, cur) >= 0.0;
            let prev_in = cross(a, b, prev) >= 0.0;
            if cur_in {
                if !prev_in {
                    output.push(line_intersection(prev, cur, a, b));
                }
                output.push(cur);
            } else if prev_in {
                output.push(line_intersection(prev, cur, a, b));
            }
        }
    }
    output
}

fn line_intersection(p: (f64, f64), q: (f64, f64), a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    let d1 = (q.0 - p.0, q.1 - p.1);
    let d2 = (b.0 - a.0, b.1 - a.1);
    let denom = d1.0 * d2.1 - d1.1 * d2.0;
    if denom.abs() < 1e-300 {
        return q;
    }
    let t = ((a.0 - p.0) * d2.1 - (a.1 - p.1) * d2.0) / denom;
    (p.0 + t * d1.0, p.1 + t * d1.1)
}

/// Intersection-over-union of the two ground-plane footprints.
pub fn bev_iou(a: &Box3D, b: &Box3D) -> f64 {
    let reach = (a.l.hypot(a.w) + b.l.hypot(b.w)) / 2.0;
    if (a.x - b.x).hypot(a.y - b.y) > reach {
        return 0.0;
    }
    let inter = polygon_area(&clip_convex(&a.corners(), &b.corners()));
    if inter < 1e-12 {
        return 0.0;
    }
    let union = a.footprint_area() + b.footprint_area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Whether the open segment `p→q` passes through the footprint of `b`.
pub fn segment_hits_box(p: (f64, f64), q: (f64, f64), b: &Box3D) -> bool {
    // Work in the box frame so the footprint is an axis-aligned slab test.
    let (s, c) = b.yaw.sin_cos();
    let to_local = |pt: (f64, f64)| {
        let (dx, dy) = (pt.0 - b.x, pt.1 - b.y);
        (c * dx + s * dy, -s * dx + c * dy)
    };
    let (p0, p1) = (to_local(p), to_local(q));
    let d = (p1.0 - p0.0, p1.1 - p0.1);
    let half = [b.l / 2.0, b.w / 2.0];
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for axis in 0..2 {
        let (o, dir) = if axis == 0 { (p0.0, d.0) } else { (p0.1, d.1) };
        if dir.abs() < 1e-15 {
            if o.abs() >= half[axis] {
                return false;
            }
        } else {
            let mut ta = (-half[axis] - o) / dir;
            let mut tb = (half[axis] - o) / dir;
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
            if t0 >= t1 {
                return false;
            }
        }
    }
    // Grazing contact at the endpoints does not count as blocking.
    t1 - t0 > 1e-9 && t0 < 1.0 - 1e-9 && t1 > 1e-9
}
