//! 2D ray model: a sensor sees a point unless the ray to it crosses the
//! footprint of an occluder or of another agent.

use crate::geometry::{segment_hits_box, Box3D};

/// Spacing between perimeter samples, in meters.
pub const PERIMETER_SPACING: f64 = 0.1;

/// Evenly spaced samples along the footprint outline, each at a segment midpoint.
pub fn perimeter_samples(b: &Box3D, spacing: f64) -> Vec<(f64, f64)> {
    let corners = b.corners();
    let mut out = Vec::new();
    for i in 0..4 {
        let (a, c) = (corners[i], corners[(i + 1) % 4]);
        let len = (c.0 - a.0).hypot(c.1 - a.1);
        let n = (len / spacing).ceil().max(1.0) as usize;
        for j in 0..n {
            let f = (j as f64 + 0.5) / n as f64;
            out.push((a.0 + f * (c.0 - a.0), a.1 + f * (c.1 - a.1)));
        }
    }
    out
}

pub fn ray_blocked(
    sensor: (f64, f64),
    target: (f64, f64),
    agents: &[(u64, Box3D)],
    skip: Option<usize>,
    occluders: &[Box3D],
) -> bool {
    occluders.iter().any(|o| segment_hits_box(sensor, target, o))
        || agents
            .iter()
            .enumerate()
            .any(|(j, (_, b))| Some(j) != skip && segment_hits_box(sensor, target, b))
}

/// Fraction of the outline of `agents[idx]` reachable from `sensor`.
pub fn visible_fraction(
    agents: &[(u64, Box3D)],
    idx: usize,
    occluders: &[Box3D],
    sensor: (f64, f64),
) -> f64 {
    let samples = perimeter_samples(&agents[idx].1, PERIMETER_SPACING);
    let visible = samples
        .iter()
        .filter(|&&p| !ray_blocked(sensor, p, agents, Some(idx), occluders))
        .count();
    visible as f64 / samples.len() as f64
}
