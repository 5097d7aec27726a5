//! Evaluation drivers: static subgoal/goal-reaching ablations, the dynamic
//! replanning loop, and result export.

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, SimSection};
use crate::cvae::CvaeModel;
use crate::dataset::{derive_seed, PlanningProblem};
use crate::error::{Error, Result};
use crate::kinematics::{JointConfig, RobotModel};
use crate::planner::{path_length, path_valid, rrt_connect, shape_range, JointBounds, PlanResult, PlannerParams};
use crate::selection::{score_candidates, select, Policy, ScoredCandidate, SelectionBudget, Variant};
use crate::time_estimator::{Family, TimeEstimatorModel};
use crate::world::{config_in_collision, snapshot, MovingObstacle, Obstacle, Scene, World};

// seed streams under a problem seed; plan runs use 0..runs
const STREAM_GENERATE: u64 = 1 << 32;
const STREAM_SELECT: u64 = 2 << 32;
const STREAM_REPLICATE: u64 = 3 << 32;

/// Per-problem seed derived from the master seed and the problem id, so
/// results do not depend on problem order.
pub fn problem_seed(master: u64, id: &str) -> u64 {
    id.bytes().fold(derive_seed(master, 0x5EED), |s, b| derive_seed(s, b as u64))
}

/// Trained models available to an evaluation.
#[derive(Debug, Clone)]
pub struct Models {
    pub cvae: CvaeModel,
    pub normal: Option<TimeEstimatorModel>,
    pub lognormal: Option<TimeEstimatorModel>,
}

impl Models {
    pub fn estimator(&self, family: Family) -> Result<&TimeEstimatorModel> {
        match family {
            Family::Normal => self.normal.as_ref(),
            Family::Lognormal => self.lognormal.as_ref(),
        }
        .ok_or_else(|| Error::ModelMissing(format!("{family} time estimator")))
    }
}

/// What is being evaluated: the direct planner or a subgoal variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Baseline,
    Subgoal(Variant),
}

impl Method {
    pub fn name(&self) -> String {
        match self {
            Method::Baseline => "Baseline".into(),
            Method::Subgoal(v) => v.name(),
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "Baseline" {
            Ok(Method::Baseline)
        } else {
            s.parse().map(Method::Subgoal)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMode {
    /// One subgoal per problem, planned `runs_per_plan` times.
    Subgoal,
    /// Subgoals chained until the goal is reached or the trial cap hits.
    Goal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalContext {
    pub robot: RobotModel,
    pub planner: PlannerParams,
    pub paddings: Vec<f64>,
    pub budget: SelectionBudget,
    pub candidates: usize,
    pub runs_per_plan: usize,
    pub max_trials: usize,
    pub replicates: usize,
    pub epsilon: f64,
    pub seed: u64,
}

impl EvalContext {
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(EvalContext {
            robot: cfg.robot()?,
            planner: cfg.planner(),
            paddings: cfg.paddings(),
            budget: cfg.budget()?,
            candidates: cfg.cvae.candidates,
            runs_per_plan: cfg.eval.runs_per_plan,
            max_trials: cfg.eval.max_trials,
            replicates: cfg.eval.replicates,
            epsilon: cfg.eval.epsilon,
            seed: cfg.seed,
        })
    }
}

/// One evaluated plan (subgoal mode) or goal-reaching episode (goal mode).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub variant: String,
    pub problem_id: String,
    /// Plan run (subgoal mode) or replicate (goal mode).
    pub replicate: usize,
    pub seed: u64,
    pub success: bool,
    pub subgoal_count: usize,
    /// Cost of every planned leg, final leg included.
    pub subgoal_costs: Vec<u64>,
    pub total_cost: u64,
    /// Checks spent on goal tests that did not reach the goal.
    pub goal_test_checks: u64,
    pub path_length: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluated {
    pub row: EvalRow,
    /// Executed joint path, starting at the problem start.
    pub path: Vec<JointConfig>,
}

fn plan(
    ctx: &EvalContext,
    world: &World,
    from: &JointConfig,
    to: &JointConfig,
    shaped: bool,
    seed: u64,
) -> Result<PlanResult> {
    let bounds = if shaped {
        shape_range(from, to, &ctx.paddings, &ctx.robot)?
    } else {
        JointBounds::full(&ctx.robot)
    };
    rrt_connect(&ctx.robot, world, from, to, &bounds, &ctx.planner.with_seed(seed))
}

/// Outcome of [`subgoal_reached_goal_test`].
#[derive(Debug, Clone, PartialEq)]
pub struct GoalTest {
    pub reached: bool,
    /// The direct plan to the goal, when one was attempted.
    pub leg: Option<PlanResult>,
}

impl GoalTest {
    pub fn cost(&self) -> u64 {
        self.leg.as_ref().map_or(0, |l| l.cost_checks)
    }
}

/// True when `current` is within `epsilon` of `goal` or a direct plan
/// capped at `budget_checks` reaches it.
#[allow(clippy::too_many_arguments)]
pub fn subgoal_reached_goal_test(
    robot: &RobotModel,
    world: &World,
    current: &JointConfig,
    goal: &JointConfig,
    epsilon: f64,
    budget_checks: f64,
    params: &PlannerParams,
) -> Result<GoalTest> {
    if !(epsilon > 0.0) {
        return Err(Error::invalid("epsilon must be positive"));
    }
    if current.distance(goal) <= epsilon {
        return Ok(GoalTest { reached: true, leg: None });
    }
    if config_in_collision(robot, world, current) || config_in_collision(robot, world, goal) {
        return Ok(GoalTest { reached: false, leg: None });
    }
    let mut p = *params;
    p.max_checks = Some(budget_checks.max(1.0) as u64);
    let leg = rrt_connect(robot, world, current, goal, &JointBounds::full(robot), &p)?;
    Ok(GoalTest { reached: leg.success, leg: Some(leg) })
}

fn score(
    ctx: &EvalContext,
    models: &Models,
    variant: &Variant,
    world: &World,
    from: &JointConfig,
    goal: &JointConfig,
    candidates: &[JointConfig],
) -> Result<Vec<ScoredCandidate>> {
    if variant.policy == Policy::Random {
        return Ok(candidates
            .iter()
            .map(|c| ScoredCandidate {
                config: c.clone(),
                t95_start: f64::INFINITY,
                t95_goal: f64::INFINITY,
                in_collision: config_in_collision(&ctx.robot, world, c),
            })
            .collect());
    }
    let est = models.estimator(variant.family)?;
    score_candidates(&ctx.robot, world, from, goal, candidates, est, ctx.budget.confidence)
}

/// Generates candidates for `(from, goal)` and picks one; `None` when every
/// candidate collides.
#[allow(clippy::too_many_arguments)]
fn choose_subgoal(
    ctx: &EvalContext,
    models: &Models,
    variant: &Variant,
    world: &World,
    flag_world: Option<&World>,
    from: &JointConfig,
    goal: &JointConfig,
    gen_rng: &mut ChaCha8Rng,
    sel_rng: &mut ChaCha8Rng,
) -> Result<Option<JointConfig>> {
    let cands = models.cvae.generate_candidates(world, from, goal, ctx.candidates, gen_rng)?;
    let mut scored = score(ctx, models, variant, world, from, goal, &cands)?;
    if let Some(fw) = flag_world {
        for s in &mut scored {
            s.in_collision = config_in_collision(&ctx.robot, fw, &s.config);
        }
    }
    match select(variant.policy, &scored, &ctx.budget, sel_rng) {
        Ok(i) => Ok(Some(scored[i].config.clone())),
        Err(Error::SelectionFailure) => Ok(None),
        Err(e) => Err(e),
    }
}

fn row(method: &Method, problem: &PlanningProblem, replicate: usize, seed: u64) -> EvalRow {
    EvalRow {
        variant: method.name(),
        problem_id: problem.id.clone(),
        replicate,
        seed,
        success: false,
        subgoal_count: 0,
        subgoal_costs: Vec::new(),
        total_cost: 0,
        goal_test_checks: 0,
        path_length: 0.0,
    }
}

fn finish(mut row: EvalRow, path: Vec<JointConfig>) -> Evaluated {
    row.total_cost = row.subgoal_costs.iter().sum();
    row.path_length = path_length(&path);
    Evaluated { row, path }
}

/// Subgoal mode for one problem: one selection, then `runs_per_plan` plans.
fn eval_subgoal_problem(ctx: &EvalContext, problem: &PlanningProblem, models: &Models, method: &Method) -> Result<Vec<Evaluated>> {
    let pseed = problem_seed(ctx.seed, &problem.id);
    let (target, shaped) = match method {
        Method::Baseline => (Some(problem.goal.clone()), false),
        Method::Subgoal(v) => {
            let mut gen_rng = ChaCha8Rng::seed_from_u64(derive_seed(pseed, STREAM_GENERATE));
            let mut sel_rng = ChaCha8Rng::seed_from_u64(derive_seed(pseed, STREAM_SELECT));
            let sub = choose_subgoal(ctx, models, v, &problem.world, None, &problem.start, &problem.goal, &mut gen_rng, &mut sel_rng)?;
            (sub, v.shaping)
        }
    };
    (0..ctx.runs_per_plan)
        .map(|j| {
            let seed = derive_seed(pseed, j as u64);
            let mut r = row(method, problem, j, seed);
            let Some(target) = &target else {
                return Ok(finish(r, vec![problem.start.clone()]));
            };
            let p = plan(ctx, &problem.world, &problem.start, target, shaped, seed)?;
            r.success = p.success;
            r.subgoal_count = usize::from(matches!(method, Method::Subgoal(_)));
            r.subgoal_costs.push(p.cost_checks);
            let path = if p.success { p.path } else { vec![problem.start.clone()] };
            Ok(finish(r, path))
        })
        .collect()
}

/// Goal mode for one problem and replicate.
fn eval_goal_episode(
    ctx: &EvalContext,
    problem: &PlanningProblem,
    models: &Models,
    method: &Method,
    replicate: usize,
) -> Result<Evaluated> {
    let pseed = problem_seed(ctx.seed, &problem.id);
    let world = &problem.world;
    let v = match method {
        Method::Baseline => {
            // same seeds as the hard-subset runs
            let seed = derive_seed(pseed, replicate as u64);
            let mut r = row(method, problem, replicate, seed);
            let p = plan(ctx, world, &problem.start, &problem.goal, false, seed)?;
            r.success = p.success;
            r.subgoal_costs.push(p.cost_checks);
            let path = if p.success { p.path } else { vec![problem.start.clone()] };
            return Ok(finish(r, path));
        }
        Method::Subgoal(v) => v,
    };
    let rseed = derive_seed(pseed, STREAM_REPLICATE + replicate as u64);
    let mut r = row(method, problem, replicate, rseed);
    let mut gen_rng = ChaCha8Rng::seed_from_u64(derive_seed(rseed, STREAM_GENERATE));
    let mut sel_rng = ChaCha8Rng::seed_from_u64(derive_seed(rseed, STREAM_SELECT));
    let mut current = problem.start.clone();
    let mut path = vec![current.clone()];
    let mut leg_seed = 0u64;
    loop {
        let test = subgoal_reached_goal_test(
            &ctx.robot,
            world,
            &current,
            &problem.goal,
            ctx.epsilon,
            ctx.budget.t_d,
            &ctx.planner.with_seed(derive_seed(rseed, leg_seed)),
        )?;
        leg_seed += 1;
        if test.reached {
            if let Some(leg) = test.leg {
                path.extend_from_slice(&leg.path[1..]);
                r.subgoal_costs.push(leg.cost_checks);
            }
            r.success = true;
            break;
        }
        r.goal_test_checks += test.cost();
        if r.subgoal_count == ctx.max_trials {
            break;
        }
        r.subgoal_count += 1;
        let Some(sub) = choose_subgoal(ctx, models, v, world, None, &current, &problem.goal, &mut gen_rng, &mut sel_rng)? else {
            continue;
        };
        let p = plan(ctx, world, &current, &sub, v.shaping, derive_seed(rseed, leg_seed))?;
        leg_seed += 1;
        r.subgoal_costs.push(p.cost_checks);
        if p.success {
            path.extend_from_slice(&p.path[1..]);
            current = sub;
        }
    }
    Ok(finish(r, path))
}

/// Evaluates `method` on every problem in parallel; rows come back in
/// problem order.
pub fn eval_static(
    ctx: &EvalContext,
    problems: &[PlanningProblem],
    models: &Models,
    method: Method,
    mode: EvalMode,
) -> Result<Vec<Evaluated>> {
    if let Method::Subgoal(v) = &method {
        if v.policy != Policy::Random {
            models.estimator(v.family)?;
        }
    }
    let per: Vec<Vec<Evaluated>> = problems
        .par_iter()
        .map(|p| match mode {
            EvalMode::Subgoal => eval_subgoal_problem(ctx, p, models, &method),
            EvalMode::Goal => (0..ctx.replicates).map(|k| eval_goal_episode(ctx, p, models, &method, k)).collect(),
        })
        .collect::<Result<_>>()?;
    Ok(per.into_iter().flatten().collect())
}

/// True when all `runs` seeded direct plans succeed and every one costs
/// more than `threshold_checks`. Uses the same seeds as the baseline.
pub fn is_hard(ctx: &EvalContext, problem: &PlanningProblem, runs: usize, threshold_checks: f64) -> Result<bool> {
    let pseed = problem_seed(ctx.seed, &problem.id);
    for j in 0..runs {
        let p = plan(ctx, &problem.world, &problem.start, &problem.goal, false, derive_seed(pseed, j as u64))?;
        if !p.success || p.cost_checks as f64 <= threshold_checks {
            return Ok(false);
        }
    }
    Ok(true)
}

pub fn hard_subset(ctx: &EvalContext, problems: &[PlanningProblem], runs: usize, threshold_checks: f64) -> Result<Vec<PlanningProblem>> {
    let flags: Vec<bool> = problems
        .par_iter()
        .map(|p| is_hard(ctx, p, runs, threshold_checks))
        .collect::<Result<_>>()?;
    Ok(problems
        .iter()
        .zip(flags)
        .filter(|(_, h)| *h)
        .map(|(p, _)| p.clone())
        .collect())
}

/// Per-variant aggregate of [`EvalRow`]s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: String,
    pub rows: usize,
    pub success_rate: f64,
    /// Fraction of rows succeeding within 1×, 2× and 4× the budget.
    pub within: [f64; 3],
    pub mean_cost: f64,
    pub std_cost: f64,
    /// Mean over successful rows.
    pub mean_length: f64,
}

/// Summaries in order of first appearance.
pub fn summarize(rows: &[EvalRow], t_d: f64) -> Vec<VariantSummary> {
    let mut names: Vec<&str> = Vec::new();
    for r in rows {
        if !names.contains(&r.variant.as_str()) {
            names.push(&r.variant);
        }
    }
    names
        .into_iter()
        .map(|name| {
            let rs: Vec<&EvalRow> = rows.iter().filter(|r| r.variant == name).collect();
            let n = rs.len() as f64;
            let within = [1.0, 2.0, 4.0].map(|k| {
                rs.iter().filter(|r| r.success && r.total_cost as f64 <= k * t_d).count() as f64 / n
            });
            let mean = rs.iter().map(|r| r.total_cost as f64).sum::<f64>() / n;
            let var = rs.iter().map(|r| (r.total_cost as f64 - mean).powi(2)).sum::<f64>() / n;
            let ok: Vec<&&EvalRow> = rs.iter().filter(|r| r.success).collect();
            VariantSummary {
                variant: name.to_string(),
                rows: rs.len(),
                success_rate: ok.len() as f64 / n,
                within,
                mean_cost: mean,
                std_cost: var.sqrt(),
                mean_length: if ok.is_empty() {
                    0.0
                } else {
                    ok.iter().map(|r| r.path_length).sum::<f64>() / ok.len() as f64
                },
            }
        })
        .collect()
}

/// A moving-obstacle scenario: a scene file plus `start` and `goal`.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicScenario {
    pub scene: Scene,
    pub start: JointConfig,
    pub goal: JointConfig,
}

const BUNDLED_SCENARIO: &str = include_str!("../scenarios/crossing.json");

impl DynamicScenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let mut doc: serde_json::Value = serde_json::from_str(text)?;
        let obj = doc
            .as_object_mut()
            .ok_or_else(|| Error::invalid("scenario must be a JSON object"))?;
        let mut take = |k: &str| -> Result<JointConfig> {
            let v = obj.remove(k).ok_or_else(|| Error::invalid(format!("scenario lacks `{k}`")))?;
            Ok(serde_json::from_value(v)?)
        };
        let start = take("start")?;
        let goal = take("goal")?;
        Ok(DynamicScenario {
            scene: Scene::from_json(&doc.to_string())?,
            start,
            goal,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: e.to_string(),
        })
    }

    /// The crossing-mover scenario shipped with the crate.
    pub fn bundled() -> Self {
        Self::from_json(BUNDLED_SCENARIO).expect("bundled scenario parses")
    }
}

/// Static obstacles plus every mover swept over `[t0, t1]`: positions are
/// sampled so consecutive samples are at most half a radius apart, and each
/// sampled disk is inflated by a quarter radius to cover the gaps.
pub fn swept_world(world: &World, movers: &[MovingObstacle], t0: f64, t1: f64) -> World {
    let mut out = world.clone();
    for m in movers {
        let v = m.max_speed();
        let r = m.radius();
        if v == 0.0 || t1 <= t0 {
            out.obstacles.push(m.at(t0));
            continue;
        }
        let dt = 0.5 * r / v;
        let steps = ((t1 - t0) / dt).ceil() as usize;
        for k in 0..=steps {
            let t = (t0 + k as f64 * dt).min(t1);
            out.obstacles.push(Obstacle {
                center: m.position(t),
                radius: 1.25 * r,
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicStep {
    pub t: f64,
    pub config: JointConfig,
    /// New subgoal chosen this cycle, if any.
    pub subgoal: Option<JointConfig>,
    /// Checks spent planning this cycle.
    pub plan_cost: u64,
    /// Index of the world snapshot (the cycle number).
    pub snapshot_id: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicOutcome {
    pub success: bool,
    pub reached_goal: bool,
    pub collision_free: bool,
    pub trials: usize,
    pub total_cost: u64,
    pub trace: Vec<DynamicStep>,
    /// Executed motion as `(time, configuration)` knots, linear in between.
    pub timeline: Vec<(f64, JointConfig)>,
}

/// Moves along `path` (starting at its first point) by `dist` in joint
/// space; returns the knots passed and the remaining path.
fn advance(path: &[JointConfig], dist: f64) -> (Vec<(f64, JointConfig)>, Vec<JointConfig>) {
    let mut left = dist;
    let mut knots = Vec::new();
    let mut travelled = 0.0;
    for i in 0..path.len() - 1 {
        let seg = path[i].distance(&path[i + 1]);
        if seg <= left {
            left -= seg;
            travelled += seg;
            knots.push((travelled, path[i + 1].clone()));
        } else {
            let q = path[i].lerp(&path[i + 1], left / seg);
            knots.push((dist, q.clone()));
            let mut rest = vec![q];
            rest.extend_from_slice(&path[i + 1..]);
            return (knots, rest);
        }
    }
    (knots, vec![path.last().unwrap().clone()])
}

/// Configuration at time `t` on a timeline.
pub fn config_at(timeline: &[(f64, JointConfig)], t: f64) -> JointConfig {
    let i = timeline.partition_point(|(s, _)| *s <= t);
    if i == 0 {
        return timeline[0].1.clone();
    }
    if i == timeline.len() {
        return timeline[i - 1].1.clone();
    }
    let (t0, q0) = &timeline[i - 1];
    let (t1, q1) = &timeline[i];
    if t1 - t0 <= 0.0 {
        return q1.clone();
    }
    q0.lerp(q1, (t - t0) / (t1 - t0))
}

/// Checks the executed motion against the moving snapshots every `dt`
/// seconds and at every knot.
pub fn validate_timeline(robot: &RobotModel, scene: &Scene, timeline: &[(f64, JointConfig)], dt: f64) -> bool {
    if timeline.is_empty() {
        return true;
    }
    let end = timeline.last().unwrap().0;
    let steps = (end / dt).ceil() as usize;
    let times = (0..=steps).map(|k| (k as f64 * dt).min(end)).chain(timeline.iter().map(|(t, _)| *t));
    for t in times {
        let world = snapshot(&scene.world, &scene.movers, t);
        if config_in_collision(robot, &world, &config_at(timeline, t)) {
            return false;
        }
    }
    true
}

/// Replanning loop among moving obstacles. Each cycle plans against the
/// movers swept over the next two cycles, executes `cycle_seconds` of the
/// current leg at constant joint speed, and re-validates what is left.
pub fn eval_dynamic(
    ctx: &EvalContext,
    sim: &SimSection,
    scenario: &DynamicScenario,
    models: &Models,
    variant: Variant,
    seed: u64,
) -> Result<DynamicOutcome> {
    if variant.policy != Policy::Random {
        models.estimator(variant.family)?;
    }
    let scene = &scenario.scene;
    if config_in_collision(&ctx.robot, &snapshot(&scene.world, &scene.movers, 0.0), &scenario.start) {
        return Err(Error::InvalidRequest("start collides at t = 0".into()));
    }
    let mut gen_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_GENERATE));
    let mut sel_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_SELECT));
    let step_dist = sim.joint_speed * sim.cycle_seconds;
    // enough cycles to cover every trial's leg several times over
    let max_cycles = 20 * ctx.max_trials.max(1) + 50;

    let mut t = 0.0;
    let mut q = scenario.start.clone();
    let mut remaining: Option<Vec<JointConfig>> = None;
    let mut timeline = vec![(0.0, q.clone())];
    let mut trace = Vec::new();
    let mut trials = 0;
    let mut total_cost = 0;
    let mut plan_seed = 0u64;
    let mut reached = false;

    for cycle in 0..max_cycles {
        if q.distance(&scenario.goal) <= ctx.epsilon {
            reached = true;
            break;
        }
        let now = snapshot(&scene.world, &scene.movers, t);
        let swept = swept_world(&scene.world, &scene.movers, t, t + 2.0 * sim.cycle_seconds);
        let mut step = DynamicStep {
            t,
            config: q.clone(),
            subgoal: None,
            plan_cost: 0,
            snapshot_id: cycle,
        };
        let still_valid = remaining
            .as_ref()
            .is_some_and(|p| path_valid(&ctx.robot, &swept, p, ctx.planner.resolution));
        if !still_valid {
            remaining = None;
            if !config_in_collision(&ctx.robot, &swept, &q) {
                let test = subgoal_reached_goal_test(
                    &ctx.robot,
                    &swept,
                    &q,
                    &scenario.goal,
                    ctx.epsilon,
                    ctx.budget.t_d,
                    &ctx.planner.with_seed(derive_seed(seed, plan_seed)),
                )?;
                plan_seed += 1;
                step.plan_cost += test.cost();
                if test.reached {
                    remaining = test.leg.map(|l| l.path);
                    step.subgoal = Some(scenario.goal.clone());
                } else if trials < ctx.max_trials {
                    trials += 1;
                    let sub = choose_subgoal(ctx, models, &variant, &now, Some(&swept), &q, &scenario.goal, &mut gen_rng, &mut sel_rng)?;
                    if let Some(sub) = sub {
                        let p = plan(ctx, &swept, &q, &sub, variant.shaping, derive_seed(seed, plan_seed))?;
                        plan_seed += 1;
                        step.plan_cost += p.cost_checks;
                        if p.success {
                            remaining = Some(p.path);
                            step.subgoal = Some(sub);
                        }
                    }
                } else {
                    total_cost += step.plan_cost;
                    trace.push(step);
                    break;
                }
            }
        }
        total_cost += step.plan_cost;
        trace.push(step);

        // execute one cycle (or wait in place)
        let t_next = t + sim.cycle_seconds;
        if let Some(path) = remaining.take() {
            let (knots, rest) = advance(&path, step_dist);
            for (d, k) in knots {
                timeline.push((t + d / sim.joint_speed, k));
            }
            q = rest[0].clone();
            if rest.len() > 1 {
                remaining = Some(rest);
            }
        }
        if timeline.last().unwrap().0 < t_next {
            timeline.push((t_next, q.clone()));
        }
        t = t_next;
    }
    let collision_free = validate_timeline(&ctx.robot, scene, &timeline, sim.validation_dt);
    Ok(DynamicOutcome {
        success: reached && collision_free,
        reached_goal: reached,
        collision_free,
        trials,
        total_cost,
        trace,
        timeline,
    })
}

/// Results table header.
pub const CSV_HEADER: &str =
    "variant,problem_id,replicate,seed,success,subgoal_count,subgoal_costs,total_cost,goal_test_checks,path_length";

#[derive(Serialize, Deserialize)]
struct CsvRow {
    variant: String,
    problem_id: String,
    replicate: usize,
    seed: u64,
    success: bool,
    subgoal_count: usize,
    subgoal_costs: String,
    total_cost: u64,
    goal_test_checks: u64,
    path_length: f64,
}

/// Rows sorted by problem id (stable otherwise).
pub fn sorted_rows(rows: &[EvalRow]) -> Vec<EvalRow> {
    let mut v = rows.to_vec();
    v.sort_by(|a, b| a.problem_id.cmp(&b.problem_id));
    v
}

pub fn write_csv(rows: &[EvalRow], path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(CSV_HEADER.split(','))?;
    for r in rows {
        w.serialize(CsvRow {
            variant: r.variant.clone(),
            problem_id: r.problem_id.clone(),
            replicate: r.replicate,
            seed: r.seed,
            success: r.success,
            subgoal_count: r.subgoal_count,
            subgoal_costs: r.subgoal_costs.iter().map(u64::to_string).collect::<Vec<_>>().join(";"),
            total_cost: r.total_cost,
            goal_test_checks: r.goal_test_checks,
            path_length: r.path_length,
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv(path: &Path) -> Result<Vec<EvalRow>> {
    let mut rd = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (i, rec) in rd.deserialize::<CsvRow>().enumerate() {
        let parse_err = |m: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 2,
            message: m,
        };
        let r = rec.map_err(|e| parse_err(e.to_string()))?;
        let costs = if r.subgoal_costs.is_empty() {
            Vec::new()
        } else {
            r.subgoal_costs
                .split(';')
                .map(|s| s.parse::<u64>().map_err(|e| parse_err(e.to_string())))
                .collect::<Result<_>>()?
        };
        out.push(EvalRow {
            variant: r.variant,
            problem_id: r.problem_id,
            replicate: r.replicate,
            seed: r.seed,
            success: r.success,
            subgoal_count: r.subgoal_count,
            subgoal_costs: costs,
            total_cost: r.total_cost,
            goal_test_checks: r.goal_test_checks,
            path_length: r.path_length,
        });
    }
    Ok(out)
}

/// Per-variant histograms of `log10(total_cost)` with budget lines at 1×,
/// 2× and 4× `t_d`.
pub fn render_svg(rows: &[EvalRow], t_d: f64) -> String {
    const W: f64 = 640.0;
    const PANEL: f64 = 160.0;
    const BINS: usize = 40;
    let summaries = summarize(rows, t_d);
    let max_cost = rows.iter().map(|r| r.total_cost).max().unwrap_or(1).max((4.0 * t_d) as u64).max(10);
    let hi = (max_cost as f64).log10().ceil();
    let x_of = |c: f64| 40.0 + (W - 60.0) * (c.max(1.0).log10() / hi);
    let height = 20.0 + PANEL * summaries.len().max(1) as f64;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W:.0}" height="{height:.0}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (k, sm) in summaries.iter().enumerate() {
        let top = 20.0 + PANEL * k as f64;
        let base = top + PANEL - 30.0;
        let mut counts = [0usize; BINS];
        for r in rows.iter().filter(|r| r.variant == sm.variant) {
            let f = (r.total_cost.max(1) as f64).log10() / hi;
            counts[((f * BINS as f64) as usize).min(BINS - 1)] += 1;
        }
        let peak = counts.iter().copied().max().unwrap_or(0).max(1) as f64;
        let bw = (W - 60.0) / BINS as f64;
        let _ = writeln!(
            s,
            r#"<text x="40" y="{:.2}">{} (n={}, success {:.1}%, ≤t_d {:.1}%)</text>"#,
            top + 10.0,
            sm.variant,
            sm.rows,
            100.0 * sm.success_rate,
            100.0 * sm.within[0]
        );
        for (b, c) in counts.iter().enumerate() {
            if *c == 0 {
                continue;
            }
            let h = (PANEL - 50.0) * *c as f64 / peak;
            let _ = writeln!(
                s,
                r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#4c78a8"/>"##,
                40.0 + b as f64 * bw,
                base - h,
                bw - 1.0,
                h
            );
        }
        let _ = writeln!(s, r#"<line x1="40" y1="{base:.2}" x2="{:.2}" y2="{base:.2}" stroke="black"/>"#, W - 20.0);
        for (m, dash) in [(1.0, "none"), (2.0, "4 2"), (4.0, "1 2")] {
            let x = x_of(m * t_d);
            let _ = writeln!(
                s,
                r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{base:.2}" stroke="red" stroke-dasharray="{dash}"/>"#,
                top + 15.0
            );
        }
        for d in 0..=(hi as usize) {
            let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">1e{d}</text>"#, x_of(10f64.powi(d as i32)), base + 14.0);
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `results.csv` (rows sorted by problem id) and `summary.svg` into
/// `dir`.
pub fn export_results(rows: &[EvalRow], t_d: f64, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let rows = sorted_rows(rows);
    write_csv(&rows, &dir.join("results.csv"))?;
    let svg = dir.join("summary.svg");
    std::fs::write(&svg, render_svg(&rows, t_d)).map_err(|e| Error::io(&svg, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cvae::CvaeShape;
    use crate::dataset::{generate_problem, ProblemGenConfig};
    use crate::kinematics::{FeatureParams, Point2};
    use crate::world::Bounds;

    fn ctx() -> EvalContext {
        let mut cfg = RunConfig::default();
        cfg.robot.links = vec![1.0, 0.8, 0.6];
        cfg.eval.runs_per_plan = 4;
        cfg.eval.replicates = 2;
        cfg.cvae.candidates = 8;
        cfg.seed = 5;
        EvalContext::from_config(&cfg).unwrap()
    }

    fn models(robot: &RobotModel) -> Models {
        let shape = CvaeShape {
            encoder_hidden: vec![8],
            condition_dim: 4,
            posterior_hidden: vec![8],
            decoder_hidden: vec![8],
            features: FeatureParams::default(),
            ..CvaeShape::default()
        };
        let cvae = CvaeModel::new(robot.clone(), shape, 3).unwrap();
        let est = |f| TimeEstimatorModel::new(&cvae, f, 1.0, &[8], 4).unwrap();
        Models {
            normal: Some(est(Family::Normal)),
            lognormal: Some(est(Family::Lognormal)),
            cvae,
        }
    }

    fn problem(c: &EvalContext, world: World) -> PlanningProblem {
        generate_problem(&c.robot, &world, "p0".into(), &ProblemGenConfig::default(), &c.planner, 8).unwrap().unwrap()
    }

    fn obstacle_world() -> World {
        World::new("w", Bounds::square(3.0), vec![Obstacle::new(1.4, 0.6, 0.3).unwrap(), Obstacle::new(-1.0, -1.2, 0.4).unwrap()]).unwrap()
    }

    #[test]
    fn goal_test_cases() {
        let c = ctx();
        let w = World::empty(Bounds::square(3.0));
        let q = JointConfig::new(vec![0.3, 0.2, 0.1]);
        let t = subgoal_reached_goal_test(&c.robot, &w, &q, &q, 1e-6, 1000.0, &c.planner).unwrap();
        assert!(t.reached && t.leg.is_none());
        let near = JointConfig::new(vec![0.3 + 5e-7, 0.2, 0.1]);
        assert!(subgoal_reached_goal_test(&c.robot, &w, &q, &near, 1e-6, 1000.0, &c.planner).unwrap().reached);
        assert!(subgoal_reached_goal_test(&c.robot, &w, &q, &near, 0.0, 1000.0, &c.planner).is_err());

        // a 2-link arm in a sandwich of disks cannot leave its slot
        let arm = RobotModel::with_limits(vec![1.0, 1.0], 0.02, vec![-3.0; 2], vec![3.0; 2]).unwrap();
        let sealed = World::new(
            "s",
            Bounds::square(3.0),
            vec![Obstacle::new(1.5, 0.1, 0.05).unwrap(), Obstacle::new(1.5, -0.1, 0.05).unwrap()],
        )
        .unwrap();
        let from = JointConfig::new(vec![0.0, 0.0]);
        let to = JointConfig::new(vec![2.0, 0.0]);
        assert!(!config_in_collision(&arm, &sealed, &from) && !config_in_collision(&arm, &sealed, &to));
        let t = subgoal_reached_goal_test(&arm, &sealed, &from, &to, 1e-6, 1000.0, &c.planner).unwrap();
        assert!(!t.reached);
        assert!(t.cost() >= 1000);
    }

    #[test]
    fn subgoal_mode_rows() {
        let c = ctx();
        let p = problem(&c, obstacle_world());
        let m = models(&c.robot);
        for method in [
            Method::Baseline,
            Method::Subgoal(Variant::new(Policy::Random, Family::Lognormal, true)),
            Method::Subgoal(Variant::new(Policy::BestEffort, Family::Normal, false)),
            Method::Subgoal(Variant::new(Policy::GoalOriented, Family::Lognormal, true)),
        ] {
            let rows = eval_static(&c, std::slice::from_ref(&p), &m, method, EvalMode::Subgoal).unwrap();
            assert_eq!(rows.len(), 4);
            for e in &rows {
                assert_eq!(e.row.variant, method.name());
                assert_eq!(e.row.total_cost, e.row.subgoal_costs.iter().sum::<u64>());
                assert_eq!(e.path[0], p.start);
                if e.row.success {
                    assert!(path_valid(&c.robot, &p.world, &e.path, c.planner.resolution));
                }
            }
            assert_eq!(rows, eval_static(&c, std::slice::from_ref(&p), &m, method, EvalMode::Subgoal).unwrap());
        }
    }

    #[test]
    fn goal_mode_reaches_goal_in_free_space() {
        let c = ctx();
        let p = problem(&c, World::empty(Bounds::square(3.0)));
        let m = models(&c.robot);
        let v = Method::Subgoal(Variant::new(Policy::GoalOriented, Family::Lognormal, true));
        for e in eval_static(&c, std::slice::from_ref(&p), &m, v, EvalMode::Goal).unwrap() {
            assert!(e.row.success);
            assert_eq!(e.path.last(), Some(&p.goal));
            assert!(path_valid(&c.robot, &p.world, &e.path, c.planner.resolution));
            assert!(e.row.subgoal_count <= c.max_trials);
        }
    }

    #[test]
    fn goal_mode_gives_up_after_the_trial_cap() {
        let c = ctx();
        // two disks pin the goal pose in a pocket the start cannot reach
        let mut p = problem(&c, World::empty(Bounds::square(3.0)));
        p.start = JointConfig::new(vec![std::f64::consts::PI, 0.0, 0.0]);
        p.goal = JointConfig::new(vec![0.0, 0.0, 0.0]);
        p.world = World::new(
            "pocket",
            Bounds::square(3.0),
            vec![Obstacle::new(1.5, 0.1, 0.04).unwrap(), Obstacle::new(1.5, -0.1, 0.04).unwrap()],
        )
        .unwrap();
        assert!(!config_in_collision(&c.robot, &p.world, &p.goal));
        assert!(!config_in_collision(&c.robot, &p.world, &p.start));
        let mut c = c;
        c.planner.max_iterations = 300;
        let m = models(&c.robot);
        let v = Method::Subgoal(Variant::new(Policy::Random, Family::Lognormal, true));
        for e in eval_static(&c, std::slice::from_ref(&p), &m, v, EvalMode::Goal).unwrap() {
            assert!(!e.row.success);
            assert_eq!(e.row.subgoal_count, c.max_trials);
        }
    }

    #[test]
    fn missing_estimator_is_reported() {
        let c = ctx();
        let p = problem(&c, World::empty(Bounds::square(3.0)));
        let mut m = models(&c.robot);
        m.normal = None;
        let v = Method::Subgoal(Variant::new(Policy::BestEffort, Family::Normal, true));
        assert!(matches!(eval_static(&c, &[p], &m, v, EvalMode::Subgoal), Err(Error::ModelMissing(_))));
    }

    #[test]
    fn baseline_succeeds_on_hard_problems() {
        let c = ctx();
        let worlds = crate::dataset::generate_worlds(&Default::default(), 4, 2).unwrap();
        let problems: Vec<PlanningProblem> = (0..24)
            .filter_map(|i| generate_problem(&c.robot, &worlds[i % 4], format!("p{i:02}"), &ProblemGenConfig::default(), &c.planner, i as u64).unwrap())
            .collect();
        // a low threshold keeps the subset nonempty at this scale
        let hard = hard_subset(&c, &problems, 5, 150.0).unwrap();
        assert!(!hard.is_empty());
        let m = models(&c.robot);
        for mode in [EvalMode::Subgoal, EvalMode::Goal] {
            let mut cc = c.clone();
            cc.runs_per_plan = 5;
            cc.replicates = 5;
            let rows = eval_static(&cc, &hard, &m, Method::Baseline, mode).unwrap();
            assert!(rows.iter().all(|e| e.row.success && e.row.total_cost > 150));
        }
    }

    fn r(variant: &str, id: &str, success: bool, costs: Vec<u64>) -> EvalRow {
        EvalRow {
            variant: variant.into(),
            problem_id: id.into(),
            replicate: 0,
            seed: 1,
            success,
            subgoal_count: costs.len(),
            total_cost: costs.iter().sum(),
            subgoal_costs: costs,
            goal_test_checks: 7,
            path_length: 0.1 + 0.2,
        }
    }

    #[test]
    fn summary_thresholds() {
        let rows = vec![r("A", "p1", true, vec![500]), r("A", "p2", true, vec![3000]), r("B", "p1", false, vec![10])];
        let s = summarize(&rows, 1000.0);
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].within, [0.5, 0.5, 1.0]);
        assert_eq!(s[0].mean_cost, 1750.0);
        assert_eq!(s[0].std_cost, 1250.0);
        assert_eq!(s[1].success_rate, 0.0);
        assert_eq!(s[1].within, [0.0; 3]);
    }

    #[test]
    fn export_is_deterministic_and_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        export_results(&[], 1000.0, dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
        assert_eq!(text, format!("{CSV_HEADER}\n"));
        assert!(read_csv(&dir.path().join("results.csv")).unwrap().is_empty());

        let rows = vec![r("B-L-S", "p2", true, vec![12, 30]), r("B-L-S", "p1", false, vec![]), r("Random", "p1", true, vec![4])];
        export_results(&rows, 1000.0, dir.path()).unwrap();
        let back = read_csv(&dir.path().join("results.csv")).unwrap();
        assert_eq!(back, sorted_rows(&rows));
        let csv1 = std::fs::read(dir.path().join("results.csv")).unwrap();
        let svg1 = std::fs::read(dir.path().join("summary.svg")).unwrap();
        export_results(&rows, 1000.0, dir.path()).unwrap();
        assert_eq!(csv1, std::fs::read(dir.path().join("results.csv")).unwrap());
        assert_eq!(svg1, std::fs::read(dir.path().join("summary.svg")).unwrap());
        assert!(String::from_utf8(svg1).unwrap().starts_with("<svg"));
    }

    #[test]
    fn swept_world_covers_the_motion() {
        let m = MovingObstacle::new(vec![(0.0, Point2::new(-2.0, 2.0)), (4.0, Point2::new(2.0, 2.0))], 0.2).unwrap();
        let w = swept_world(&World::empty(Bounds::square(3.0)), std::slice::from_ref(&m), 1.0, 2.0);
        for k in 0..=100 {
            let p = m.position(1.0 + k as f64 / 100.0);
            assert!(w.obstacles.iter().any(|o| o.center.distance(p) + m.radius() <= o.radius + 1e-9));
        }
    }

    #[test]
    fn advance_and_interpolate() {
        let path = vec![JointConfig::new(vec![0.0, 0.0]), JointConfig::new(vec![1.0, 0.0]), JointConfig::new(vec![1.0, 1.0])];
        let (knots, rest) = advance(&path, 1.5);
        assert_eq!(knots.len(), 2);
        assert_eq!(rest[0], JointConfig::new(vec![1.0, 0.5]));
        let (_, rest) = advance(&path, 5.0);
        assert_eq!(rest, vec![path[2].clone()]);
        let tl = vec![(0.0, path[0].clone()), (1.0, path[1].clone())];
        assert_eq!(config_at(&tl, 0.5), JointConfig::new(vec![0.5, 0.0]));
        assert_eq!(config_at(&tl, 3.0), path[1]);
    }

    #[test]
    fn dynamic_without_movers_reaches_the_goal() {
        let c = ctx();
        let p = problem(&c, obstacle_world());
        let sc = DynamicScenario {
            scene: Scene { world: p.world.clone(), movers: vec![] },
            start: p.start.clone(),
            goal: p.goal.clone(),
        };
        let m = models(&c.robot);
        let out = eval_dynamic(&c, &SimSection::default(), &sc, &m, Variant::new(Policy::GoalOriented, Family::Lognormal, true), 1).unwrap();
        assert!(out.success, "{:?}", out.trace.len());
        assert_eq!(out.timeline.last().unwrap().1, p.goal);
        assert_eq!(out, eval_dynamic(&c, &SimSection::default(), &sc, &m, Variant::new(Policy::GoalOriented, Family::Lognormal, true), 1).unwrap());
    }

    #[test]
    fn dynamic_fails_with_a_mover_parked_on_the_goal() {
        let c = ctx();
        let start = JointConfig::new(vec![std::f64::consts::PI, 0.0, 0.0]);
        let goal = JointConfig::new(vec![0.0, 0.0, 0.0]);
        let parked = MovingObstacle::new(vec![(0.0, Point2::new(2.2, 0.0))], 0.3).unwrap();
        let sc = DynamicScenario {
            scene: Scene { world: World::empty(Bounds::square(3.0)), movers: vec![parked] },
            start,
            goal,
        };
        let m = models(&c.robot);
        let out = eval_dynamic(&c, &SimSection::default(), &sc, &m, Variant::new(Policy::GoalOriented, Family::Lognormal, true), 1).unwrap();
        assert!(!out.success && !out.reached_goal);
        assert_eq!(out.trials, c.max_trials);
        assert!(out.collision_free);
    }

    #[test]
    fn bundled_scenario_parses() {
        let s = DynamicScenario::bundled();
        assert!(!s.scene.movers.is_empty());
        assert_eq!(s.start.len(), 5);
    }
}
