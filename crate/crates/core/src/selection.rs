//! Scoring generated subgoal candidates and choosing one under a cost budget.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{JointConfig, RobotModel};
use crate::time_estimator::{Family, TimeEstimatorModel};
use crate::world::{config_in_collision, World};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub config: JointConfig,
    /// Predicted cost quantile from the current start to the candidate.
    pub t95_start: f64,
    /// Predicted cost quantile from the final goal to the candidate.
    pub t95_goal: f64,
    pub in_collision: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionBudget {
    /// Budget in collision checks.
    pub t_d: f64,
    pub confidence: f64,
}

impl SelectionBudget {
    pub fn new(t_d: f64, confidence: f64) -> Result<Self> {
        if !(t_d > 0.0) {
            return Err(Error::invalid("t_d must be positive"));
        }
        if !(confidence > 0.0 && confidence < 1.0) {
            return Err(Error::invalid("confidence must lie in (0, 1)"));
        }
        Ok(SelectionBudget { t_d, confidence })
    }

    /// Budget given in pseudo-seconds, converted with `checks_per_second`.
    pub fn from_seconds(seconds: f64, checks_per_second: f64, confidence: f64) -> Result<Self> {
        Self::new(seconds * checks_per_second, confidence)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    Random,
    BestEffort,
    GoalOriented,
}

impl Policy {
    pub fn as_str(self) -> &'static str {
        match self {
            Policy::Random => "random",
            Policy::BestEffort => "best-effort",
            Policy::GoalOriented => "goal-oriented",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Policy::Random),
            "best-effort" => Ok(Policy::BestEffort),
            "goal-oriented" => Ok(Policy::GoalOriented),
            _ => Err(Error::invalid(format!("unknown policy `{s}`"))),
        }
    }
}

/// A selection policy plus estimator family and shaping switch, named like
/// `G-L-S` (goal-oriented, log-normal, shaped) or `B-N` (best-effort, normal,
/// unshaped).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Variant {
    pub policy: Policy,
    pub family: Family,
    pub shaping: bool,
}

impl Variant {
    pub fn new(policy: Policy, family: Family, shaping: bool) -> Self {
        Variant { policy, family, shaping }
    }

    pub fn name(&self) -> String {
        let head = match self.policy {
            Policy::Random => return if self.shaping { "Random".into() } else { "Random-NS".into() },
            Policy::BestEffort => 'B',
            Policy::GoalOriented => 'G',
        };
        let mut s = format!("{head}-{}", self.family.letter());
        if self.shaping {
            s.push_str("-S");
        }
        s
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// Parses the names produced by [`Variant::name`]. `Random` carries the
/// log-normal family tag, which it never uses.
impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Random" => return Ok(Variant::new(Policy::Random, Family::Lognormal, true)),
            "Random-NS" => return Ok(Variant::new(Policy::Random, Family::Lognormal, false)),
            _ => {}
        }
        let bad = || Error::invalid(format!("unknown variant `{s}`"));
        let mut parts = s.split('-');
        let policy = match parts.next() {
            Some("B") => Policy::BestEffort,
            Some("G") => Policy::GoalOriented,
            _ => return Err(bad()),
        };
        let family = match parts.next() {
            Some("L") => Family::Lognormal,
            Some("N") => Family::Normal,
            _ => return Err(bad()),
        };
        let shaping = match parts.next() {
            None => false,
            Some("S") => true,
            Some(_) => return Err(bad()),
        };
        if parts.next().is_some() {
            return Err(bad());
        }
        Ok(Variant::new(policy, family, shaping))
    }
}

/// Scores every candidate in order. Colliding candidates are still scored
/// but flagged, and the selectors skip them.
pub fn score_candidates(
    robot: &RobotModel,
    world: &World,
    start: &JointConfig,
    goal: &JointConfig,
    candidates: &[JointConfig],
    estimator: &TimeEstimatorModel,
    confidence: f64,
) -> Result<Vec<ScoredCandidate>> {
    candidates
        .iter()
        .map(|c| {
            Ok(ScoredCandidate {
                config: c.clone(),
                t95_start: estimator.predict_quantile(world, start, c, confidence)?,
                t95_goal: estimator.predict_quantile(world, goal, c, confidence)?,
                in_collision: config_in_collision(robot, world, c),
            })
        })
        .collect()
}

fn free(scored: &[ScoredCandidate]) -> impl Iterator<Item = (usize, &ScoredCandidate)> {
    scored.iter().enumerate().filter(|(_, s)| !s.in_collision)
}

/// Indices of free candidates with `t95_start ≤ t_d`.
pub fn qualifying(scored: &[ScoredCandidate], budget: &SelectionBudget) -> Vec<usize> {
    free(scored)
        .filter(|(_, s)| s.t95_start <= budget.t_d)
        .map(|(i, _)| i)
        .collect()
}

/// First index minimizing `key` among free candidates.
fn argmin_by(scored: &[ScoredCandidate], idx: impl Iterator<Item = usize>, key: impl Fn(&ScoredCandidate) -> f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for i in idx {
        let k = key(&scored[i]);
        if best.is_none_or(|(_, b)| k < b) {
            best = Some((i, k));
        }
    }
    best.map(|(i, _)| i)
}

fn fallback(scored: &[ScoredCandidate]) -> Result<usize> {
    argmin_by(scored, free(scored).map(|(i, _)| i), |s| s.t95_start).ok_or(Error::SelectionFailure)
}

/// Uniform choice among qualifiers, else the smallest `t95_start`.
pub fn select_best_effort(scored: &[ScoredCandidate], budget: &SelectionBudget, rng: &mut impl Rng) -> Result<usize> {
    let q = qualifying(scored, budget);
    if q.is_empty() {
        fallback(scored)
    } else {
        Ok(q[rng.random_range(0..q.len())])
    }
}

/// Qualifier with the smallest `t95_goal`, else the smallest `t95_start`.
pub fn select_goal_oriented(scored: &[ScoredCandidate], budget: &SelectionBudget) -> Result<usize> {
    let q = qualifying(scored, budget);
    if q.is_empty() {
        fallback(scored)
    } else {
        Ok(argmin_by(scored, q.into_iter(), |s| s.t95_goal).expect("nonempty"))
    }
}

/// Uniform choice among free candidates; scores are ignored.
pub fn select_random(scored: &[ScoredCandidate], rng: &mut impl Rng) -> Result<usize> {
    let f: Vec<usize> = free(scored).map(|(i, _)| i).collect();
    if f.is_empty() {
        return Err(Error::SelectionFailure);
    }
    Ok(f[rng.random_range(0..f.len())])
}

pub fn select(policy: Policy, scored: &[ScoredCandidate], budget: &SelectionBudget, rng: &mut impl Rng) -> Result<usize> {
    match policy {
        Policy::Random => select_random(scored, rng),
        Policy::BestEffort => select_best_effort(scored, budget, rng),
        Policy::GoalOriented => select_goal_oriented(scored, budget),
    }
}
