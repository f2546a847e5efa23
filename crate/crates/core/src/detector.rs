//! Deterministic BEV detection head: threshold the density channel, label
//! 8-connected components, and fit one oriented box per component.

use crate::geometry::{normalize_angle, Box3D, Category};
use crate::sensing::{FeatureGrid, CH_DENSITY, CH_HEIGHT};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::f64::consts::{FRAC_PI_2, PI};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: Box3D,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectParams {
    pub tau: f64,
    pub min_cells: usize,
}

impl Default for DetectParams {
    fn default() -> Self {
        Self { tau: 0.15, min_cells: 3 }
    }
}

pub const MIN_DIM: f64 = 0.5;
pub const MAX_DIM: f64 = 15.0;

/// Connected components of cells with density ≥ `tau`, each a list of
/// `(row, col)` in discovery order. Components are ordered by their first
/// cell in row-major order.
pub fn label_components(g: &FeatureGrid, tau: f64) -> Vec<Vec<(usize, usize)>> {
    let spec = g.spec;
    let (rows, cols) = (spec.rows, spec.cols);
    let on = |r: usize, c: usize| g.values[spec.index(r, c, CH_DENSITY)] >= tau;
    let mut seen = vec![false; rows * cols];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for r0 in 0..rows {
        for c0 in 0..cols {
            if seen[r0 * cols + c0] || !on(r0, c0) {
                continue;
            }
            seen[r0 * cols + c0] = true;
            queue.push_back((r0, c0));
            let mut comp = Vec::new();
            while let Some((r, c)) = queue.pop_front() {
                comp.push((r, c));
                for dr in -1isize..=1 {
                    for dc in -1isize..=1 {
                        let (rr, cc) = (r as isize + dr, c as isize + dc);
                        if rr < 0 || cc < 0 || rr >= rows as isize || cc >= cols as isize {
                            continue;
                        }
                        let (rr, cc) = (rr as usize, cc as usize);
                        if !seen[rr * cols + cc] && on(rr, cc) {
                            seen[rr * cols + cc] = true;
                            queue.push_back((rr, cc));
                        }
                    }
                }
            }
            out.push(comp);
        }
    }
    out
}

/// Principal-axis direction of a weighted 2D point set, in (−π/2, π/2].
fn principal_yaw(sxx: f64, syy: f64, sxy: f64) -> f64 {
    let scale = sxx.abs() + syy.abs();
    if scale == 0.0 || ((sxx - syy).abs() <= 1e-12 * scale && sxy.abs() <= 1e-12 * scale) {
        return 0.0;
    }
    let mut yaw = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    if yaw <= -FRAC_PI_2 {
        yaw += PI;
    }
    yaw
}

/// Median of the occupied cells' roof heights; robust to the overshoot that
/// linear extrapolation produces along a moving blob's edges.
fn median(v: &mut [f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

fn fit_component(g: &FeatureGrid, comp: &[(usize, usize)]) -> Detection {
    let spec = g.spec;
    let mut wsum = 0.0;
    let (mut mx, mut my) = (0.0, 0.0);
    let mut heights = Vec::new();
    for &(r, c) in comp {
        let w = g.get(r, c, CH_DENSITY);
        let (x, y) = spec.cell_center(r, c);
        wsum += w;
        mx += w * x;
        my += w * y;
        if spec.channels > CH_HEIGHT {
            let h = g.get(r, c, CH_HEIGHT);
            if h > 0.0 {
                heights.push(h);
            }
        }
    }
    mx /= wsum;
    my /= wsum;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for &(r, c) in comp {
        let w = g.get(r, c, CH_DENSITY);
        let (x, y) = spec.cell_center(r, c);
        sxx += w * (x - mx) * (x - mx);
        syy += w * (y - my) * (y - my);
        sxy += w * (x - mx) * (y - my);
    }
    let yaw = principal_yaw(sxx, syy, sxy);
    let (cy, sy) = (yaw.cos(), yaw.sin());
    let (mut umin, mut umax, mut vmin, mut vmax) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(r, c) in comp {
        let (x, y) = spec.cell_center(r, c);
        let (dx, dy) = (x - mx, y - my);
        let u = cy * dx + sy * dy;
        let v = -sy * dx + cy * dy;
        umin = umin.min(u);
        umax = umax.max(u);
        vmin = vmin.min(v);
        vmax = vmax.max(v);
    }
    let l = (umax - umin + spec.cell_size).clamp(MIN_DIM, MAX_DIM);
    let w = (vmax - vmin + spec.cell_size).clamp(MIN_DIM, MAX_DIM);
    let h = median(&mut heights).unwrap_or(0.0).max(0.1);
    let score = (wsum / comp.len() as f64).clamp(0.0, 1.0);
    Detection {
        bbox: Box3D::new([mx, my, h / 2.0], (w, l, h), normalize_angle(yaw), Category::Car),
        score,
    }
}

pub fn detect(g: &FeatureGrid, params: &DetectParams) -> Vec<Detection> {
    label_components(g, params.tau)
        .into_iter()
        .filter(|c| c.len() >= params.min_cells.max(1))
        .map(|c| fit_component(g, &c))
        .collect()
}
