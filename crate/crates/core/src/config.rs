//! Run configuration: one TOML document holding every tunable default.
//!
//! Every section and key is optional; missing keys take the defaults below
//! and unknown keys are rejected.

use std::f64::consts::TAU;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cvae::{CvaeShape, TrainConfig};
use crate::dataset::{FilterRule, LabelConfig, ProblemGenConfig, WorldGenConfig};
use crate::error::{Error, Result};
use crate::kinematics::{FeatureParams, RobotModel};
use crate::neuralnet::AdamConfig;
use crate::planner::{linear_paddings, PlannerParams};
use crate::selection::SelectionBudget;
use crate::time_estimator::Family;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobotSection {
    /// Joint count; when given it must match `links`.
    pub n: Option<usize>,
    pub links: Vec<f64>,
    pub link_radius: f64,
    /// Per-joint limits, `-2π` / `2π` when omitted.
    pub joint_lo: Option<Vec<f64>>,
    pub joint_hi: Option<Vec<f64>>,
}

impl Default for RobotSection {
    fn default() -> Self {
        RobotSection {
            n: None,
            links: vec![0.7, 0.6, 0.5, 0.4, 0.3],
            link_radius: 0.05,
            joint_lo: None,
            joint_hi: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerSection {
    pub step_size: f64,
    pub max_iterations: usize,
    pub resolution: f64,
}

impl Default for PlannerSection {
    fn default() -> Self {
        let p = PlannerParams::default();
        PlannerSection {
            step_size: p.step_size,
            max_iterations: p.max_iterations,
            resolution: p.resolution,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostSection {
    /// Converts budgets written in seconds into collision checks.
    pub checks_per_second: f64,
}

impl Default for CostSection {
    fn default() -> Self {
        CostSection { checks_per_second: 20000.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RangeSection {
    /// Explicit per-joint paddings; when absent they fall linearly from
    /// `proximal` to `distal`.
    pub paddings: Option<Vec<f64>>,
    pub proximal: f64,
    pub distal: f64,
}

impl Default for RangeSection {
    fn default() -> Self {
        RangeSection {
            paddings: None,
            proximal: 1.0,
            distal: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub worlds: usize,
    pub problems: usize,
    pub runs: usize,
    pub spacing: f64,
    pub shortcut_iterations: usize,
    /// Training-set filter budget.
    pub budget_seconds: f64,
    pub filter: FilterRule,
    pub generator: WorldGenConfig,
    pub problem: ProblemGenConfig,
}

impl Default for DatasetSection {
    fn default() -> Self {
        let l = LabelConfig::default();
        DatasetSection {
            worlds: 100,
            problems: 5000,
            runs: l.runs,
            spacing: l.spacing,
            shortcut_iterations: l.shortcut_iterations,
            budget_seconds: 0.05,
            filter: FilterRule::P95,
            generator: WorldGenConfig::default(),
            problem: ProblemGenConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvaeSection {
    pub latent_dim: usize,
    pub beta: f64,
    pub k_max: usize,
    pub alpha: f64,
    pub levels: usize,
    pub encoder_hidden: Vec<usize>,
    pub condition_dim: usize,
    pub posterior_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Candidates generated per selection.
    pub candidates: usize,
}

impl Default for CvaeSection {
    fn default() -> Self {
        let s = CvaeShape::default();
        CvaeSection {
            latent_dim: s.latent_dim,
            beta: s.beta,
            k_max: s.k_max,
            alpha: s.features.alpha,
            levels: s.features.levels,
            encoder_hidden: s.encoder_hidden,
            condition_dim: s.condition_dim,
            posterior_hidden: s.posterior_hidden,
            decoder_hidden: s.decoder_hidden,
            epochs: 50,
            batch_size: 128,
            lr: 1e-3,
            candidates: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeSection {
    pub family: Family,
    pub w: f64,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for TimeSection {
    fn default() -> Self {
        TimeSection {
            family: Family::Lognormal,
            w: 1.0,
            hidden: vec![64, 32],
            epochs: 50,
            batch_size: 128,
            lr: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionSection {
    pub budget_seconds: f64,
    pub confidence: f64,
}

impl Default for SelectionSection {
    fn default() -> Self {
        SelectionSection {
            budget_seconds: 0.05,
            confidence: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub runs_per_plan: usize,
    pub max_trials: usize,
    pub replicates: usize,
    pub epsilon: f64,
    /// Direct runs used to decide whether a problem is hard.
    pub hard_runs: usize,
    /// A problem is hard when every direct run exceeds this many seconds.
    pub hard_seconds: f64,
    /// The Random baseline plans with range shaping.
    pub random_shaping: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            runs_per_plan: 30,
            max_trials: 10,
            replicates: 10,
            epsilon: 1e-6,
            hard_runs: 30,
            hard_seconds: 0.05,
            random_shaping: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    /// Joint-space speed of the executed motion (rad/s).
    pub joint_speed: f64,
    /// Simulated time between replanning cycles (s).
    pub cycle_seconds: f64,
    /// Time step for post-hoc collision validation (s). The default equals
    /// the planner resolution at the default joint speed.
    pub validation_dt: f64,
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection {
            joint_speed: 1.0,
            cycle_seconds: 0.5,
            validation_dt: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub robot: RobotSection,
    pub planner: PlannerSection,
    pub cost: CostSection,
    pub range: RangeSection,
    pub dataset: DatasetSection,
    pub cvae: CvaeSection,
    pub time: TimeSection,
    pub selection: SelectionSection,
    pub eval: EvalSection,
    pub sim: SimSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        self.robot()?;
        self.planner().validate().map_err(|e| Error::Config(e.to_string()))?;
        if !(self.cost.checks_per_second > 0.0) {
            return bad("cost.checks_per_second must be positive");
        }
        if self.paddings().len() != self.robot.links.len() || self.paddings().iter().any(|p| !(*p >= 0.0)) {
            return bad("range.paddings must hold one nonnegative value per joint");
        }
        if self.dataset.runs < 2 || !(self.dataset.spacing > 0.0) || !(self.dataset.budget_seconds > 0.0) {
            return bad("dataset.runs must be ≥ 2 and spacing/budget positive");
        }
        self.dataset.generator.validate()?;
        if self.dataset.generator.max_obstacles > self.cvae.k_max {
            return bad("dataset.generator.max_obstacles exceeds cvae.k_max");
        }
        FeatureParams::new(self.cvae.alpha, self.cvae.levels).map_err(|e| Error::Config(e.to_string()))?;
        if self.cvae.latent_dim == 0 || self.cvae.condition_dim == 0 || self.cvae.batch_size == 0 || self.time.batch_size == 0 {
            return bad("network sizes and batch sizes must be positive");
        }
        if !(self.cvae.beta >= 0.0) || !(self.time.w >= 0.0) || !(self.cvae.lr > 0.0) || !(self.time.lr > 0.0) {
            return bad("beta, w and learning rates must be nonnegative/positive");
        }
        self.budget().map_err(|e| Error::Config(e.to_string()))?;
        if self.eval.runs_per_plan == 0 || self.eval.max_trials == 0 || self.eval.replicates == 0 || self.eval.hard_runs == 0 {
            return bad("eval counts must be positive");
        }
        if !(self.eval.epsilon > 0.0) {
            return bad("eval.epsilon must be positive");
        }
        if !(self.sim.joint_speed > 0.0 && self.sim.cycle_seconds > 0.0 && self.sim.validation_dt > 0.0) {
            return bad("sim speeds and times must be positive");
        }
        Ok(())
    }

    pub fn robot(&self) -> Result<RobotModel> {
        let r = &self.robot;
        let n = r.links.len();
        if r.n.is_some_and(|k| k != n) {
            return Err(Error::Config(format!("robot.n is {} but robot.links has {n} entries", r.n.unwrap())));
        }
        let lo = r.joint_lo.clone().unwrap_or_else(|| vec![-TAU; n]);
        let hi = r.joint_hi.clone().unwrap_or_else(|| vec![TAU; n]);
        RobotModel::with_limits(r.links.clone(), r.link_radius, lo, hi).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn planner(&self) -> PlannerParams {
        PlannerParams {
            step_size: self.planner.step_size,
            max_iterations: self.planner.max_iterations,
            resolution: self.planner.resolution,
            seed: 0,
            max_checks: None,
            measure_wall: false,
        }
    }

    pub fn paddings(&self) -> Vec<f64> {
        self.range
            .paddings
            .clone()
            .unwrap_or_else(|| linear_paddings(self.robot.links.len(), self.range.proximal, self.range.distal))
    }

    pub fn checks(&self, seconds: f64) -> f64 {
        seconds * self.cost.checks_per_second
    }

    pub fn budget(&self) -> Result<SelectionBudget> {
        SelectionBudget::from_seconds(self.selection.budget_seconds, self.cost.checks_per_second, self.selection.confidence)
    }

    pub fn label_config(&self) -> LabelConfig {
        LabelConfig {
            runs: self.dataset.runs,
            spacing: self.dataset.spacing,
            shortcut_iterations: self.dataset.shortcut_iterations,
        }
    }

    pub fn cvae_shape(&self) -> CvaeShape {
        CvaeShape {
            latent_dim: self.cvae.latent_dim,
            beta: self.cvae.beta,
            k_max: self.cvae.k_max,
            encoder_hidden: self.cvae.encoder_hidden.clone(),
            condition_dim: self.cvae.condition_dim,
            posterior_hidden: self.cvae.posterior_hidden.clone(),
            decoder_hidden: self.cvae.decoder_hidden.clone(),
            features: FeatureParams {
                alpha: self.cvae.alpha,
                levels: self.cvae.levels,
            },
        }
    }

    pub fn cvae_train(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.cvae.batch_size,
            adam: AdamConfig { lr: self.cvae.lr, ..AdamConfig::default() },
        }
    }

    pub fn time_train(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.time.batch_size,
            adam: AdamConfig { lr: self.time.lr, ..AdamConfig::default() },
        }
    }
}
