//! Seeded RRT-Connect with collision-check cost accounting, randomized
//! shortcutting and per-leg planning-range shaping.
//!
//! Plan cost is the number of single-configuration collision checks a
//! planner call performs. It is deterministic for a given seed, which makes
//! it the unit every budget in this crate is expressed in.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{JointConfig, RobotModel};
use crate::world::{config_in_collision, edge_valid, World};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannerParams {
    pub step_size: f64,
    pub max_iterations: usize,
    pub resolution: f64,
    pub seed: u64,
    /// Abort (as a failure) once this many checks have been spent.
    pub max_checks: Option<u64>,
    /// Record wall-clock time in [`PlanResult::wall_seconds`].
    pub measure_wall: bool,
}

impl Default for PlannerParams {
    fn default() -> Self {
        PlannerParams {
            step_size: 0.5,
            max_iterations: 5000,
            resolution: 0.05,
            seed: 0,
            max_checks: None,
            measure_wall: false,
        }
    }
}

impl PlannerParams {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.resolution > 0.0 && self.max_iterations > 0) {
            return Err(Error::invalid(
                "planner step_size, resolution and max_iterations must be positive",
            ));
        }
        Ok(())
    }
}

/// Per-joint sampling box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointBounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl JointBounds {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.iter().zip(&hi).any(|(l, h)| !(l <= h)) {
            return Err(Error::invalid("joint bounds need lo <= hi elementwise"));
        }
        Ok(JointBounds { lo, hi })
    }

    pub fn full(model: &RobotModel) -> Self {
        JointBounds {
            lo: model.joint_lo().to_vec(),
            hi: model.joint_hi().to_vec(),
        }
    }

    pub fn contains(&self, q: &JointConfig) -> bool {
        q.len() == self.lo.len()
            && q.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (l, h))| *v >= *l && *v <= *h)
    }

    fn clamp(&self, q: &mut JointConfig) {
        for (i, v) in q.0.iter_mut().enumerate() {
            *v = v.clamp(self.lo[i], self.hi[i]);
        }
    }

    fn sample(&self, rng: &mut impl Rng) -> JointConfig {
        JointConfig(
            self.lo
                .iter()
                .zip(&self.hi)
                .map(|(l, h)| if l < h { rng.random_range(*l..*h) } else { *l })
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    pub success: bool,
    pub path: Vec<JointConfig>,
    pub cost_checks: u64,
    pub wall_seconds: Option<f64>,
    pub iterations_used: usize,
}

struct Tree {
    nodes: Vec<JointConfig>,
    parents: Vec<usize>,
}

impl Tree {
    fn new(root: JointConfig) -> Self {
        Tree {
            nodes: vec![root],
            parents: vec![usize::MAX],
        }
    }

    fn nearest(&self, q: &JointConfig) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, n) in self.nodes.iter().enumerate() {
            let d: f64 = n.iter().zip(q.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    fn push(&mut self, q: JointConfig, parent: usize) -> usize {
        self.nodes.push(q);
        self.parents.push(parent);
        self.nodes.len() - 1
    }

    /// Root-to-node chain.
    fn chain(&self, mut idx: usize) -> Vec<JointConfig> {
        let mut out = Vec::new();
        while idx != usize::MAX {
            out.push(self.nodes[idx].clone());
            idx = self.parents[idx];
        }
        out.reverse();
        out
    }
}

enum Extend {
    Reached(usize),
    Advanced(usize),
    Trapped,
}

struct Search<'a> {
    model: &'a RobotModel,
    world: &'a World,
    bounds: &'a JointBounds,
    params: &'a PlannerParams,
    checks: u64,
}

impl Search<'_> {
    fn over_budget(&self) -> bool {
        self.params.max_checks.is_some_and(|cap| self.checks > cap)
    }

    fn extend(&mut self, tree: &mut Tree, target: &JointConfig) -> Extend {
        let near = tree.nearest(target);
        let from = &tree.nodes[near];
        let d = from.distance(target);
        let (mut q_new, reached) = if d <= self.params.step_size {
            (target.clone(), true)
        } else {
            (from.lerp(target, self.params.step_size / d), false)
        };
        if !reached {
            self.bounds.clamp(&mut q_new);
        }
        let (ok, checks) = edge_valid(self.model, self.world, from, &q_new, self.params.resolution);
        self.checks += checks;
        if !ok {
            return Extend::Trapped;
        }
        let idx = tree.push(q_new, near);
        if reached {
            Extend::Reached(idx)
        } else {
            Extend::Advanced(idx)
        }
    }

    fn connect(&mut self, tree: &mut Tree, target: &JointConfig) -> Option<usize> {
        loop {
            match self.extend(tree, target) {
                Extend::Reached(idx) => return Some(idx),
                Extend::Advanced(_) if !self.over_budget() => continue,
                _ => return None,
            }
        }
    }
}

/// Bidirectional RRT with extend/connect alternation.
///
/// Endpoint collision checks are part of the cost, so even `start == goal`
/// costs one check.
pub fn rrt_connect(
    model: &RobotModel,
    world: &World,
    start: &JointConfig,
    goal: &JointConfig,
    bounds: &JointBounds,
    params: &PlannerParams,
) -> Result<PlanResult> {
    params.validate()?;
    model.check_dim(start)?;
    model.check_dim(goal)?;
    if bounds.lo.len() != model.dof() {
        return Err(Error::invalid("joint bounds dimension does not match the robot"));
    }
    if !bounds.contains(start) || !bounds.contains(goal) {
        return Err(Error::InvalidRequest("start or goal outside the planning bounds".into()));
    }
    let timer = params.measure_wall.then(Instant::now);
    let finish = |mut r: PlanResult| {
        r.wall_seconds = timer.map(|t| t.elapsed().as_secs_f64());
        Ok(r)
    };

    let mut search = Search {
        model,
        world,
        bounds,
        params,
        checks: 1,
    };
    if config_in_collision(model, world, start) {
        return Err(Error::InvalidRequest("start configuration is in collision".into()));
    }
    if start == goal {
        return finish(PlanResult {
            success: true,
            path: vec![start.clone()],
            cost_checks: 1,
            wall_seconds: None,
            iterations_used: 0,
        });
    }
    search.checks += 1;
    if config_in_collision(model, world, goal) {
        return Err(Error::InvalidRequest("goal configuration is in collision".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut from_start = Tree::new(start.clone());
    let mut from_goal = Tree::new(goal.clone());
    // `a_is_start` tracks which tree is currently being extended.
    let mut a_is_start = true;

    for iter in 0..params.max_iterations {
        let q_rand = bounds.sample(&mut rng);
        let (a, b) = if a_is_start {
            (&mut from_start, &mut from_goal)
        } else {
            (&mut from_goal, &mut from_start)
        };
        let new_idx = match search.extend(a, &q_rand) {
            Extend::Trapped => None,
            Extend::Reached(i) | Extend::Advanced(i) => Some(i),
        };
        if let Some(new_idx) = new_idx {
            let q_new = a.nodes[new_idx].clone();
            if let Some(meet) = search.connect(b, &q_new) {
                let (si, gi) = if a_is_start { (new_idx, meet) } else { (meet, new_idx) };
                let mut path = from_start.chain(si);
                let mut back = from_goal.chain(gi);
                back.reverse();
                // both chains end at the same meeting configuration
                path.extend(back.into_iter().skip(1));
                return finish(PlanResult {
                    success: true,
                    path,
                    cost_checks: search.checks,
                    wall_seconds: None,
                    iterations_used: iter + 1,
                });
            }
        }
        if search.over_budget() {
            return finish(PlanResult {
                success: false,
                path: Vec::new(),
                cost_checks: search.checks,
                wall_seconds: None,
                iterations_used: iter + 1,
            });
        }
        a_is_start = !a_is_start;
    }

    finish(PlanResult {
        success: false,
        path: Vec::new(),
        cost_checks: search.checks,
        wall_seconds: None,
        iterations_used: params.max_iterations,
    })
}

/// Sum of joint-space segment lengths.
pub fn path_length(path: &[JointConfig]) -> f64 {
    path.windows(2).map(|w| w[0].distance(&w[1])).sum()
}

/// True iff every consecutive pair passes [`edge_valid`].
pub fn path_valid(model: &RobotModel, world: &World, path: &[JointConfig], resolution: f64) -> bool {
    match path {
        [] => false,
        [q] => !config_in_collision(model, world, q),
        _ => path
            .windows(2)
            .all(|w| edge_valid(model, world, &w[0], &w[1], resolution).0),
    }
}

fn point_at(path: &[JointConfig], cumulative: &[f64], s: f64) -> (usize, JointConfig) {
    let seg = cumulative
        .partition_point(|c| *c <= s)
        .saturating_sub(1)
        .min(path.len() - 2);
    let len = cumulative[seg + 1] - cumulative[seg];
    let t = if len > 0.0 { ((s - cumulative[seg]) / len).clamp(0.0, 1.0) } else { 0.0 };
    (seg, path[seg].lerp(&path[seg + 1], t))
}

/// Randomized shortcutting: pick two points along the path and replace the
/// stretch between them by a straight edge when every new edge validates.
pub fn shortcut(
    model: &RobotModel,
    world: &World,
    path: &[JointConfig],
    iterations: usize,
    seed: u64,
    resolution: f64,
) -> Result<Vec<JointConfig>> {
    if !path_valid(model, world, path, resolution) {
        return Err(Error::invalid("shortcut input path is empty or invalid"));
    }
    let mut path = path.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..iterations {
        if path.len() < 3 {
            // a straight edge cannot get shorter
            break;
        }
        let mut cumulative = Vec::with_capacity(path.len());
        cumulative.push(0.0);
        for w in path.windows(2) {
            cumulative.push(cumulative.last().unwrap() + w[0].distance(&w[1]));
        }
        let total = *cumulative.last().unwrap();
        if total <= 0.0 {
            break;
        }
        let mut s1 = rng.random_range(0.0..total);
        let mut s2 = rng.random_range(0.0..total);
        if s1 > s2 {
            std::mem::swap(&mut s1, &mut s2);
        }
        let (a, p1) = point_at(&path, &cumulative, s1);
        let (b, p2) = point_at(&path, &cumulative, s2);
        if a == b {
            continue;
        }
        let mut candidate: Vec<JointConfig> = path[..=a].to_vec();
        candidate.push(p1);
        candidate.push(p2);
        candidate.extend_from_slice(&path[b + 1..]);
        candidate.dedup();
        // re-check the new edge and the two partial edges around it
        let lo = a;
        let hi = (a + 3).min(candidate.len() - 1);
        let ok = candidate[lo..=hi]
            .windows(2)
            .all(|w| edge_valid(model, world, &w[0], &w[1], resolution).0);
        if ok && path_length(&candidate) < path_length(&path) {
            path = candidate;
        }
    }
    Ok(path)
}

/// Padded bounding box of `start` and `subgoal`, clamped to the joint limits.
pub fn shape_range(
    start: &JointConfig,
    subgoal: &JointConfig,
    paddings: &[f64],
    model: &RobotModel,
) -> Result<JointBounds> {
    model.check_dim(start)?;
    model.check_dim(subgoal)?;
    if paddings.len() != model.dof() || paddings.iter().any(|p| !(*p >= 0.0)) {
        return Err(Error::invalid("paddings must be n nonnegative values"));
    }
    let mut lo = Vec::with_capacity(model.dof());
    let mut hi = Vec::with_capacity(model.dof());
    for i in 0..model.dof() {
        let (a, b) = (start[i], subgoal[i]);
        lo.push((a.min(b) - paddings[i]).max(model.joint_lo()[i]));
        hi.push((a.max(b) + paddings[i]).min(model.joint_hi()[i]));
    }
    Ok(JointBounds { lo, hi })
}

/// Paddings falling linearly from `proximal` at the base joint to `distal`
/// at the last joint.
pub fn linear_paddings(n: usize, proximal: f64, distal: f64) -> Vec<f64> {
    if n == 1 {
        return vec![proximal];
    }
    (0..n)
        .map(|i| proximal + (distal - proximal) * i as f64 / (n - 1) as f64)
        .collect()
}
