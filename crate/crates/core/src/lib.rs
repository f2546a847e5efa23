//! Vehicle–infrastructure cooperative 3D tracking simulator.
//!
//! A scenario generator drives two simulated LiDARs (ego vehicle and a
//! roadside unit). The infrastructure side ships raw points, detections, or
//! BEV features (optionally with a feature flow for latency compensation)
//! over a byte-accounted, delayed channel; the ego fuses, detects, tracks,
//! and is scored with CLEAR-MOT.

pub mod annotate;
pub mod assignment;
pub mod channel;
pub mod detector;
pub mod error;
pub mod experiment;
pub mod fusion;
pub mod geometry;
pub mod metrics;
pub mod scenario;
pub mod seeds;
pub mod sensing;
pub mod tracker;

pub use detector::{detect, DetectParams, Detection};
pub use error::{Error, Result};
pub use fusion::{FusionKind, FusionMethod, FusionParams, Reducer};
pub use geometry::{bev_iou, center_distance, compose, transform_box, Box3D, Category, Pose, Region};
pub use metrics::{evaluate_clearmot, MotResult, RunReport};
pub use scenario::{generate_scenario, Provenance, Scenario, ScenarioConfig, TrackedObject, View};
pub use sensing::{FeatureFlow, FeatureGrid, Frame, GridSpec, Point, PointCloud};
pub use tracker::{Tracker, TrackerConfig};
