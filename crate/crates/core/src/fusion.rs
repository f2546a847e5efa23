//! Cooperative fusion: raw points (early), detections (late), stale
//! features (static middle) and flow-predicted features (FF middle).

use crate::assignment::solve_assignment;
use crate::channel::{ChannelMessage, Content};
use crate::detector::{detect, DetectParams, Detection};
use crate::error::{Error, Result};
use crate::geometry::{center_distance, normalize_angle, transform_box, Box3D, Pose};
use crate::sensing::{predict_feature, rasterize_bev, FeatureEncoder, FeatureGrid, Frame, GridSpec, PointCloud};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FusionKind {
    VehicleOnly,
    Early,
    Late,
    MiddleStatic,
    #[serde(rename = "MiddleFF")]
    MiddleFF,
}

impl FusionKind {
    pub const ALL: [FusionKind; 5] = [
        FusionKind::VehicleOnly,
        FusionKind::Early,
        FusionKind::Late,
        FusionKind::MiddleStatic,
        FusionKind::MiddleFF,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FusionKind::VehicleOnly => "VehicleOnly",
            FusionKind::Early => "Early",
            FusionKind::Late => "Late",
            FusionKind::MiddleStatic => "MiddleStatic",
            FusionKind::MiddleFF => "MiddleFF",
        }
    }
}

impl fmt::Display for FusionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FusionKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        FusionKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown fusion method {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Reducer {
    Max,
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionParams {
    /// Late fusion merges detections whose centers are at most this far apart.
    pub late_threshold_m: f64,
    pub reducer: Reducer,
}

impl Default for FusionParams {
    fn default() -> Self {
        Self {
            late_threshold_m: 3.0,
            reducer: Reducer::Max,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionMethod {
    pub kind: FusionKind,
    pub params: FusionParams,
}

impl FusionMethod {
    pub fn new(kind: FusionKind) -> Self {
        Self {
            kind,
            params: FusionParams::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == FusionKind::Late && !(self.params.late_threshold_m > 0.0) {
            return Err(Error::Config("late fusion threshold must be > 0".into()));
        }
        Ok(())
    }
}

/// Snaps coordinates within this distance of a cell center onto it, so that
/// exact cell-to-cell warps do not pick up rounding noise.
const SNAP: f64 = 1e-9;

fn snap(u: f64) -> f64 {
    let r = u.round();
    if (u - r).abs() < SNAP {
        r
    } else {
        u
    }
}

/// Resamples an infrastructure-frame grid onto `dst_spec` in the ego frame
/// by inverse warping with bilinear interpolation; samples outside the
/// source read as zero.
pub fn align_grid(f_inf: &FeatureGrid, infra_to_ego: &Pose, dst_spec: &GridSpec) -> FeatureGrid {
    let src = f_inf.spec;
    let ch = src.channels.min(dst_spec.channels);
    let ego_to_infra = infra_to_ego.inverse();
    let mut out = FeatureGrid::zeros(*dst_spec, f_inf.timestamp, Frame::Ego);
    if f_inf.values.iter().all(|&v| v == 0.0) {
        return out;
    }
    for r in 0..dst_spec.rows {
        for c in 0..dst_spec.cols {
            let (x, y) = dst_spec.cell_center(r, c);
            let (sx, sy) = ego_to_infra.apply_2d(x, y);
            let u = snap((sx - src.x0) / src.cell_size - 0.5);
            let v = snap((sy - src.y0) / src.cell_size - 0.5);
            if u <= -1.0 || v <= -1.0 || u >= src.cols as f64 || v >= src.rows as f64 {
                continue;
            }
            let (c0, r0) = (u.floor(), v.floor());
            let (fu, fv) = (u - c0, v - r0);
            let taps = [
                (r0, c0, (1.0 - fu) * (1.0 - fv)),
                (r0, c0 + 1.0, fu * (1.0 - fv)),
                (r0 + 1.0, c0, (1.0 - fu) * fv),
                (r0 + 1.0, c0 + 1.0, fu * fv),
            ];
            let dst = dst_spec.index(r, c, 0);
            for (tr, tc, w) in taps {
                if w == 0.0 || tr < 0.0 || tc < 0.0 || tr >= src.rows as f64 || tc >= src.cols as f64 {
                    continue;
                }
                let base = src.index(tr as usize, tc as usize, 0);
                for k in 0..ch {
                    out.values[dst + k] += w * f_inf.values[base + k];
                }
            }
        }
    }
    out
}

/// Moves infrastructure points into the ego frame, merges the clouds and
/// rasterizes once.
pub fn fuse_early(pc_ego: &PointCloud, pc_inf: &PointCloud, infra_to_ego: &Pose, spec: &GridSpec) -> FeatureGrid {
    let mut merged = pc_ego.clone();
    merged
        .points
        .extend(pc_inf.transformed(infra_to_ego, Frame::Ego).points);
    rasterize_bev(&merged, spec)
}

pub fn fuse_middle(f_ego: &FeatureGrid, f_inf_aligned: &FeatureGrid, reducer: Reducer) -> Result<FeatureGrid> {
    if f_ego.spec != f_inf_aligned.spec {
        return Err(Error::Shape(format!(
            "cannot fuse grids with specs {:?} and {:?}",
            f_ego.spec, f_inf_aligned.spec
        )));
    }
    let op = match reducer {
        Reducer::Max => f64::max,
        Reducer::Sum => |a: f64, b: f64| a + b,
    };
    Ok(FeatureGrid {
        values: f_ego
            .values
            .iter()
            .zip(&f_inf_aligned.values)
            .map(|(&a, &b)| op(a, b))
            .collect(),
        ..f_ego.clone()
    })
}

fn merge_pair(a: &Detection, b: &Detection) -> Detection {
    let (wa, wb) = if a.score + b.score > 0.0 {
        (a.score / (a.score + b.score), b.score / (a.score + b.score))
    } else {
        (0.5, 0.5)
    };
    let mix = |p: f64, q: f64| wa * p + wb * q;
    let yaw = if a.score >= b.score { a.bbox.yaw } else { b.bbox.yaw };
    let category = if a.score >= b.score { a.bbox.category } else { b.bbox.category };
    Detection {
        bbox: Box3D {
            x: mix(a.bbox.x, b.bbox.x),
            y: mix(a.bbox.y, b.bbox.y),
            z: mix(a.bbox.z, b.bbox.z),
            w: mix(a.bbox.w, b.bbox.w),
            l: mix(a.bbox.l, b.bbox.l),
            h: mix(a.bbox.h, b.bbox.h),
            yaw: normalize_angle(yaw),
            category,
        },
        score: a.score.max(b.score),
    }
}

/// Hungarian matching on center distance; matches within `threshold_m` are
/// merged, everything else passes through.
pub fn fuse_late(dets_ego: &[Detection], dets_inf: &[Detection], threshold_m: f64) -> Vec<Detection> {
    let cost: Vec<Vec<f64>> = dets_ego
        .iter()
        .map(|a| dets_inf.iter().map(|b| center_distance(&a.bbox, &b.bbox)).collect())
        .collect();
    let pairs: Vec<(usize, usize)> = if dets_ego.is_empty() || dets_inf.is_empty() {
        Vec::new()
    } else {
        solve_assignment(&cost)
            .into_iter()
            .filter(|&(i, j)| cost[i][j] <= threshold_m)
            .collect()
    };
    let mut ego_used = vec![false; dets_ego.len()];
    let mut inf_used = vec![false; dets_inf.len()];
    let mut out = Vec::with_capacity(dets_ego.len() + dets_inf.len());
    for &(i, j) in &pairs {
        ego_used[i] = true;
        inf_used[j] = true;
        out.push(merge_pair(&dets_ego[i], &dets_inf[j]));
    }
    out.extend(dets_ego.iter().zip(&ego_used).filter(|(_, &u)| !u).map(|(d, _)| *d));
    out.extend(dets_inf.iter().zip(&inf_used).filter(|(_, &u)| !u).map(|(d, _)| *d));
    out
}

/// Ego-side inputs for one frame.
#[derive(Debug, Clone, Copy)]
pub struct EgoInputs<'a> {
    /// Raw cloud in the ego frame.
    pub cloud: &'a PointCloud,
    /// Encoded ego raster on `FusionContext::spec`.
    pub grid: &'a FeatureGrid,
}

#[derive(Debug, Clone, Copy)]
pub struct FusionContext {
    pub spec: GridSpec,
    pub encoder: FeatureEncoder,
    pub detect: DetectParams,
    /// Infrastructure → ego transform at the ego timestamp.
    pub infra_to_ego: Pose,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Fused {
    Grid(FeatureGrid),
    Detections(Vec<Detection>),
}

impl Fused {
    pub fn into_detections(self, params: &DetectParams) -> Vec<Detection> {
        match self {
            Fused::Grid(g) => detect(&g, params),
            Fused::Detections(d) => d,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CooperativeOutput {
    pub fused: Fused,
    /// No usable infrastructure message had arrived; this is the vehicle-only result.
    pub fallback: bool,
}

fn wrong_payload(method: FusionKind, m: &ChannelMessage) -> Error {
    Error::Config(format!("{method} fusion received a {:?} message", m.kind))
}

/// The ego's fused grid (or, for late fusion, detection list) at `t_v`
/// given the message selected from the channel.
pub fn cooperative_feature(
    method: &FusionMethod,
    msg: Option<&ChannelMessage>,
    t_v: f64,
    ego: EgoInputs<'_>,
    ctx: &FusionContext,
) -> Result<CooperativeOutput> {
    let vehicle_only = |fallback| -> CooperativeOutput {
        let fused = match method.kind {
            FusionKind::Late => Fused::Detections(detect(ego.grid, &ctx.detect)),
            _ => Fused::Grid(ego.grid.clone()),
        };
        CooperativeOutput { fused, fallback }
    };
    if method.kind == FusionKind::VehicleOnly {
        return Ok(vehicle_only(false));
    }
    let Some(m) = msg else {
        return Ok(vehicle_only(true));
    };
    let fused = match (method.kind, m.content.as_ref()) {
        (FusionKind::Early, Content::RawPoints(pc)) => {
            let raster = fuse_early(ego.cloud, pc, &ctx.infra_to_ego, &ctx.spec);
            Fused::Grid(ctx.encoder.encode(&raster))
        }
        (FusionKind::Late, Content::Detections(d)) => {
            let ego_dets = detect(ego.grid, &ctx.detect);
            let inf: Vec<Detection> = d
                .iter()
                .map(|x| Detection {
                    bbox: transform_box(&x.bbox, &ctx.infra_to_ego),
                    score: x.score,
                })
                .collect();
            Fused::Detections(fuse_late(&ego_dets, &inf, method.params.late_threshold_m))
        }
        (FusionKind::MiddleStatic, Content::Feature(f0)) => {
            let aligned = align_grid(f0, &ctx.infra_to_ego, &ctx.spec);
            Fused::Grid(fuse_middle(ego.grid, &aligned, method.params.reducer)?)
        }
        (FusionKind::MiddleFF, Content::FeatureWithFlow(f0, f1)) => {
            let tau = t_v - m.t_send;
            let predicted = predict_feature(f0, f1, tau)?;
            let aligned = align_grid(&predicted, &ctx.infra_to_ego, &ctx.spec);
            Fused::Grid(fuse_middle(ego.grid, &aligned, method.params.reducer)?)
        }
        _ => return Err(wrong_payload(method.kind, m)),
    };
    Ok(CooperativeOutput { fused, fallback: false })
}
