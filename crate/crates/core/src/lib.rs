//! Learned subgoal generation and time-budgeted subgoal selection for a
//! planar arm planned with RRT-Connect.
//!
//! Plan cost is measured in collision checks. Budgets given in seconds are
//! converted with a fixed checks-per-second constant.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod cvae;
pub mod dataset;
pub mod error;
pub mod kinematics;
pub mod neuralnet;
pub mod pipeline;
pub mod planner;
pub mod selection;
pub mod time_estimator;
pub mod world;

pub use config::RunConfig;
pub use cvae::{CvaeModel, CvaeShape};
pub use dataset::{PlanningProblem, WaypointRecord};
pub use error::{Error, Result};
pub use kinematics::{JointConfig, Point2, RobotModel};
pub use pipeline::{EvalRow, Method, Models};
pub use planner::{JointBounds, PlanResult, PlannerParams};
pub use selection::{Policy, ScoredCandidate, SelectionBudget, Variant};
pub use time_estimator::{DistParams, Family, TimeEstimatorModel};
pub use world::{MovingObstacle, Obstacle, Scene, World};
