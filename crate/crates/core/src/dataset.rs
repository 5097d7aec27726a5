//! Problem generation, waypoint labeling with repeated-run plan costs,
//! training-set filtering and JSON-lines persistence.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use log::{debug, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cvae::{condition_input, CvaeSample};
use crate::error::{Error, Result};
use crate::kinematics::{JointConfig, RobotModel};
use crate::planner::{rrt_connect, shortcut, JointBounds, PlannerParams};
use crate::time_estimator::{fit_empirical, percentile, CostSample, DistParams, Family};
use crate::world::{config_in_collision, Bounds, Obstacle, World};

/// SplitMix64 finalizer over `base ⊕ stream`; fans one seed out into
/// independent per-item seeds.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldGenConfig {
    pub bounds_half: f64,
    pub min_obstacles: usize,
    pub max_obstacles: usize,
    pub radius_min: f64,
    pub radius_max: f64,
    /// Obstacle centers are drawn uniformly (by area) from this annulus
    /// around the base.
    pub inner_radius: f64,
    pub outer_radius: f64,
}

impl Default for WorldGenConfig {
    fn default() -> Self {
        WorldGenConfig {
            bounds_half: 3.0,
            min_obstacles: 6,
            max_obstacles: 8,
            radius_min: 0.3,
            radius_max: 0.5,
            inner_radius: 0.6,
            outer_radius: 2.4,
        }
    }
}

impl WorldGenConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.bounds_half > 0.0
            && self.min_obstacles <= self.max_obstacles
            && 0.0 < self.radius_min
            && self.radius_min <= self.radius_max
            && 0.0 <= self.inner_radius
            && self.inner_radius <= self.outer_radius
            && self.outer_radius <= self.bounds_half;
        if ok {
            Ok(())
        } else {
            Err(Error::Config("inconsistent world generator settings".into()))
        }
    }
}

pub fn generate_world(cfg: &WorldGenConfig, name: impl Into<String>, rng: &mut impl Rng) -> Result<World> {
    cfg.validate()?;
    let count = rng.random_range(cfg.min_obstacles..=cfg.max_obstacles);
    let (r0, r1) = (cfg.inner_radius * cfg.inner_radius, cfg.outer_radius * cfg.outer_radius);
    let obstacles = (0..count)
        .map(|_| {
            let rho = if r1 > r0 { rng.random_range(r0..r1).sqrt() } else { cfg.inner_radius };
            let phi = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let radius = if cfg.radius_max > cfg.radius_min {
                rng.random_range(cfg.radius_min..cfg.radius_max)
            } else {
                cfg.radius_min
            };
            Obstacle::new(rho * phi.cos(), rho * phi.sin(), radius)
        })
        .collect::<Result<Vec<_>>>()?;
    World::new(name, Bounds::square(cfg.bounds_half), obstacles)
}

/// `count` worlds named `world-0000`, `world-0001`, …
pub fn generate_worlds(cfg: &WorldGenConfig, count: usize, seed: u64) -> Result<Vec<World>> {
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
            generate_world(cfg, format!("world-{i:04}"), &mut rng)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemGenConfig {
    /// Rejection-sampling attempts per endpoint before giving up on a world.
    pub retry_cap: usize,
    /// Minimum joint-space distance between start and goal.
    pub min_separation: f64,
    /// Fresh start/goal pairs tried when the witness plan fails.
    pub witness_attempts: usize,
}

impl Default for ProblemGenConfig {
    fn default() -> Self {
        ProblemGenConfig {
            retry_cap: 1000,
            min_separation: 2.0,
            witness_attempts: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanningProblem {
    pub id: String,
    pub world: World,
    pub start: JointConfig,
    pub goal: JointConfig,
    /// A successful direct plan proving feasibility.
    pub witness: Vec<JointConfig>,
    pub witness_cost: u64,
}

fn sample_free(robot: &RobotModel, world: &World, cap: usize, rng: &mut impl Rng) -> Result<JointConfig> {
    for _ in 0..cap {
        let q = JointConfig::new(
            robot
                .joint_lo()
                .iter()
                .zip(robot.joint_hi())
                .map(|(l, h)| rng.random_range(*l..*h))
                .collect(),
        );
        if !config_in_collision(robot, world, &q) {
            return Ok(q);
        }
    }
    Err(Error::Generation {
        world: world.name.clone(),
        reason: format!("no collision-free configuration in {cap} samples"),
    })
}

/// One problem in `world`. `None` when no witness plan succeeded; an error
/// naming the world when collision-free endpoints cannot be found.
pub fn generate_problem(
    robot: &RobotModel,
    world: &World,
    id: String,
    cfg: &ProblemGenConfig,
    params: &PlannerParams,
    seed: u64,
) -> Result<Option<PlanningProblem>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bounds = JointBounds::full(robot);
    for attempt in 0..cfg.witness_attempts.max(1) {
        let start = sample_free(robot, world, cfg.retry_cap, &mut rng)?;
        let mut goal = sample_free(robot, world, cfg.retry_cap, &mut rng)?;
        let mut tries = 1;
        while start.distance(&goal) < cfg.min_separation {
            if tries >= cfg.retry_cap {
                return Err(Error::Generation {
                    world: world.name.clone(),
                    reason: "no goal far enough from the start".into(),
                });
            }
            goal = sample_free(robot, world, cfg.retry_cap, &mut rng)?;
            tries += 1;
        }
        let plan = rrt_connect(robot, world, &start, &goal, &bounds, &params.with_seed(derive_seed(seed, attempt as u64)))?;
        if plan.success {
            return Ok(Some(PlanningProblem {
                id,
                world: world.clone(),
                start,
                goal,
                witness: plan.path,
                witness_cost: plan.cost_checks,
            }));
        }
    }
    Ok(None)
}

/// `count` problems over `worlds` (slot `i` uses world `i mod len`).
/// Slots whose witness plans fail are discarded and further slots are
/// drawn until `count` problems exist.
pub fn generate_problems(
    robot: &RobotModel,
    worlds: &[World],
    count: usize,
    cfg: &ProblemGenConfig,
    params: &PlannerParams,
    seed: u64,
) -> Result<Vec<PlanningProblem>> {
    if count == 0 {
        return Err(Error::invalid("problem count must be positive"));
    }
    if worlds.is_empty() {
        return Err(Error::invalid("no worlds to generate problems in"));
    }
    let cap = 20 * count + 100;
    let mut failures = vec![0usize; worlds.len()];
    let mut out = Vec::with_capacity(count);
    let mut next = 0;
    while out.len() < count {
        if next >= cap {
            let worst = (0..worlds.len()).max_by_key(|&w| (failures[w], std::cmp::Reverse(w))).unwrap_or(0);
            return Err(Error::Generation {
                world: worlds[worst].name.clone(),
                reason: format!("only {} of {count} problems had a feasible witness", out.len()),
            });
        }
        let slots = next..next + (count - out.len());
        next = slots.end;
        let batch: Vec<(usize, Option<PlanningProblem>)> = slots
            .into_par_iter()
            .map(|i| {
                let w = i % worlds.len();
                let world = &worlds[w];
                let id = format!("{}-p{i:05}", world.name);
                Ok((w, generate_problem(robot, world, id, cfg, params, derive_seed(seed, i as u64))?))
            })
            .collect::<Result<_>>()?;
        for (w, p) in batch {
            match p {
                Some(p) => out.push(p),
                None => failures[w] += 1,
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaypointRecord {
    pub problem_id: String,
    pub waypoint: JointConfig,
    pub from_start_costs: Vec<u64>,
    pub from_goal_costs: Vec<u64>,
    /// Fits of `from_start_costs`.
    pub theta_normal: DistParams,
    pub theta_lognormal: DistParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelConfig {
    pub runs: usize,
    /// Maximum joint-space gap between consecutive labeled waypoints.
    pub spacing: f64,
    pub shortcut_iterations: usize,
}

impl Default for LabelConfig {
    fn default() -> Self {
        LabelConfig {
            runs: 30,
            spacing: 1.5,
            shortcut_iterations: 100,
        }
    }
}

fn as_f64(costs: &[u64]) -> Vec<f64> {
    costs.iter().map(|c| *c as f64).collect()
}

/// Splits every edge so no gap exceeds `spacing`; the first vertex is dropped.
pub fn densify(path: &[JointConfig], spacing: f64) -> Vec<JointConfig> {
    let mut out = Vec::new();
    for w in path.windows(2) {
        let pieces = (w[0].distance(&w[1]) / spacing).ceil().max(1.0) as usize;
        for k in 1..=pieces {
            out.push(if k == pieces { w[1].clone() } else { w[0].lerp(&w[1], k as f64 / pieces as f64) });
        }
    }
    out
}

/// `runs` seeded plans `from → to` over full bounds; failed runs keep their
/// cost. `None` when every run fails.
fn cost_samples(
    robot: &RobotModel,
    world: &World,
    from: &JointConfig,
    to: &JointConfig,
    runs: usize,
    params: &PlannerParams,
    seed: u64,
) -> Result<Option<Vec<u64>>> {
    let bounds = JointBounds::full(robot);
    let mut costs = Vec::with_capacity(runs);
    let mut any = false;
    for j in 0..runs {
        let r = rrt_connect(robot, world, from, to, &bounds, &params.with_seed(derive_seed(seed, j as u64)))?;
        any |= r.success;
        costs.push(r.cost_checks);
    }
    Ok(any.then_some(costs))
}

/// Labels one waypoint of `problem` with start- and goal-side cost samples.
pub fn label_waypoint(
    robot: &RobotModel,
    problem: &PlanningProblem,
    waypoint: &JointConfig,
    runs: usize,
    params: &PlannerParams,
    seed: u64,
) -> Result<Option<WaypointRecord>> {
    if runs < 2 {
        return Err(Error::invalid("at least two runs per waypoint are needed"));
    }
    let world = &problem.world;
    let Some(from_start) = cost_samples(robot, world, &problem.start, waypoint, runs, params, derive_seed(seed, 0))? else {
        warn!("{}: every start-side run failed, waypoint dropped", problem.id);
        return Ok(None);
    };
    let Some(from_goal) = cost_samples(robot, world, &problem.goal, waypoint, runs, params, derive_seed(seed, 1))? else {
        warn!("{}: every goal-side run failed, waypoint dropped", problem.id);
        return Ok(None);
    };
    let c = as_f64(&from_start);
    Ok(Some(WaypointRecord {
        problem_id: problem.id.clone(),
        waypoint: waypoint.clone(),
        theta_normal: fit_empirical(&c, Family::Normal)?,
        theta_lognormal: fit_empirical(&c, Family::Lognormal)?,
        from_start_costs: from_start,
        from_goal_costs: from_goal,
    }))
}

/// Shortcuts the witness path, densifies it and labels every waypoint after
/// the start.
pub fn label_waypoints(
    robot: &RobotModel,
    problem: &PlanningProblem,
    cfg: &LabelConfig,
    params: &PlannerParams,
    seed: u64,
) -> Result<Vec<WaypointRecord>> {
    if !(cfg.spacing > 0.0) {
        return Err(Error::invalid("waypoint spacing must be positive"));
    }
    let path = shortcut(
        robot,
        &problem.world,
        &problem.witness,
        cfg.shortcut_iterations,
        derive_seed(seed, u64::MAX),
        params.resolution,
    )?;
    let mut out = Vec::new();
    for (i, w) in densify(&path, cfg.spacing).iter().enumerate() {
        // interpolated points can graze an obstacle between edge checks
        if config_in_collision(robot, &problem.world, w) {
            debug!("{}: waypoint {i} in collision, skipped", problem.id);
            continue;
        }
        if let Some(r) = label_waypoint(robot, problem, w, cfg.runs, params, derive_seed(seed, i as u64))? {
            out.push(r);
        }
    }
    Ok(out)
}

/// Labels every problem in parallel; records keep problem order.
pub fn label_problems(
    robot: &RobotModel,
    problems: &[PlanningProblem],
    cfg: &LabelConfig,
    params: &PlannerParams,
    seed: u64,
) -> Result<Vec<WaypointRecord>> {
    let per: Vec<Vec<WaypointRecord>> = problems
        .par_iter()
        .enumerate()
        .map(|(i, p)| label_waypoints(robot, p, cfg, params, derive_seed(seed, i as u64)))
        .collect::<Result<_>>()?;
    Ok(per.into_iter().flatten().collect())
}

/// How "the maximal cost stays within budget" is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterRule {
    /// Empirical 95th percentile of the start-side costs.
    #[default]
    P95,
    /// Largest start-side cost.
    Max,
}

impl std::str::FromStr for FilterRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "p95" => Ok(FilterRule::P95),
            "max" => Ok(FilterRule::Max),
            _ => Err(Error::invalid(format!("unknown filter rule `{s}`"))),
        }
    }
}

pub fn passes_filter(record: &WaypointRecord, budget_checks: f64, rule: FilterRule) -> bool {
    let c = as_f64(&record.from_start_costs);
    let stat = match rule {
        FilterRule::P95 => percentile(&c, 0.95),
        FilterRule::Max => c.iter().copied().reduce(f64::max),
    };
    stat.is_some_and(|s| s <= budget_checks)
}

pub fn filter_training_set(records: &[WaypointRecord], budget_checks: f64, rule: FilterRule) -> Vec<WaypointRecord> {
    let kept: Vec<WaypointRecord> = records
        .iter()
        .filter(|r| passes_filter(r, budget_checks, rule))
        .cloned()
        .collect();
    if kept.is_empty() {
        warn!("no record passes the {budget_checks}-check filter");
    }
    kept
}

pub fn save_dataset(records: &[WaypointRecord], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: &Path) -> Result<Vec<WaypointRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn save_problems(problems: &[PlanningProblem], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer(&mut w, problems)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_problems(path: &Path) -> Result<Vec<PlanningProblem>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

fn problem_index(problems: &[PlanningProblem]) -> HashMap<&str, &PlanningProblem> {
    problems.iter().map(|p| (p.id.as_str(), p)).collect()
}

fn lookup<'a>(index: &HashMap<&str, &'a PlanningProblem>, id: &str) -> Result<&'a PlanningProblem> {
    index
        .get(id)
        .copied()
        .ok_or_else(|| Error::invalid(format!("record references unknown problem `{id}`")))
}

/// Generative-model training pairs: `x = waypoint`, conditioned on the
/// problem's world, start and goal.
pub fn cvae_samples(
    records: &[WaypointRecord],
    problems: &[PlanningProblem],
    k_max: usize,
    levels: usize,
) -> Result<Vec<CvaeSample>> {
    let index = problem_index(problems);
    records
        .iter()
        .map(|r| {
            let p = lookup(&index, &r.problem_id)?;
            Ok(CvaeSample {
                condition_input: condition_input(&p.world, &p.start, &p.goal, k_max, levels)?,
                x: r.waypoint.clone(),
            })
        })
        .collect()
}

/// Estimator rows in both directions: `start → waypoint` and
/// `goal → waypoint`.
pub fn estimator_samples(records: &[WaypointRecord], problems: &[PlanningProblem]) -> Result<Vec<CostSample>> {
    let index = problem_index(problems);
    let mut out = Vec::with_capacity(2 * records.len());
    for r in records {
        let p = lookup(&index, &r.problem_id)?;
        out.push(CostSample {
            world: p.world.clone(),
            from: p.start.clone(),
            to: r.waypoint.clone(),
            costs: r.from_start_costs.clone(),
            theta_normal: r.theta_normal,
            theta_lognormal: r.theta_lognormal,
        });
        let g = as_f64(&r.from_goal_costs);
        out.push(CostSample {
            world: p.world.clone(),
            from: p.goal.clone(),
            to: r.waypoint.clone(),
            costs: r.from_goal_costs.clone(),
            theta_normal: fit_empirical(&g, Family::Normal)?,
            theta_lognormal: fit_empirical(&g, Family::Lognormal)?,
        });
    }
    Ok(out)
}
