//! Hybrid trajectory prediction toolkit: an end-to-end learned predictor,
//! a planning-based (cost-learning) predictor, detectors that decide when
//! the end-to-end predictor should be distrusted, and a synthetic driving
//! scenario harness for exercising all of it under distribution shift.

pub mod e2e;
pub mod error;
pub mod frenet;
pub mod hybrid_eval;
pub mod model_io;
pub mod nn;
pub mod planner;
pub mod scenario;
pub mod switchers;
pub mod types;

pub use error::{Error, Result};
pub use frenet::{FrenetState, ReferencePath};
pub use types::{
    ade, center_on_target, extract_segments_windows, Dataset, GaussianStep, GaussianTrajectory,
    PathId, Point, Scene, Segment, Split, Trajectory, DT, HISTORY_LEN, LABEL_LEN, SIGMA_FLOOR,
};
