//! Disk obstacles, swept-disk collision checking, condition encoding and
//! time-parameterized movers.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{fk_points, JointConfig, Point2, RobotModel};

/// Sentinel written into unused encoding slots.
pub const EMPTY_SLOT: [f64; 3] = [0.0, 0.0, -1.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "ObstacleDoc", into = "ObstacleDoc")]
pub struct Obstacle {
    pub center: Point2,
    pub radius: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObstacleDoc {
    cx: f64,
    cy: f64,
    r: f64,
}

impl From<ObstacleDoc> for Obstacle {
    fn from(d: ObstacleDoc) -> Self {
        Obstacle {
            center: Point2::new(d.cx, d.cy),
            radius: d.r,
        }
    }
}

impl From<Obstacle> for ObstacleDoc {
    fn from(o: Obstacle) -> Self {
        ObstacleDoc {
            cx: o.center.x,
            cy: o.center.y,
            r: o.radius,
        }
    }
}

impl Obstacle {
    pub fn new(cx: f64, cy: f64, radius: f64) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0) || !cx.is_finite() || !cy.is_finite() {
            return Err(Error::invalid(format!(
                "obstacle ({cx}, {cy}) needs a positive finite radius, got {radius}"
            )));
        }
        Ok(Obstacle {
            center: Point2::new(cx, cy),
            radius,
        })
    }
}

/// Axis-aligned workspace box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct Bounds {
    pub min: Point2,
    pub max: Point2,
}

impl From<[f64; 4]> for Bounds {
    fn from(b: [f64; 4]) -> Self {
        Bounds {
            min: Point2::new(b[0], b[1]),
            max: Point2::new(b[2], b[3]),
        }
    }
}

impl From<Bounds> for [f64; 4] {
    fn from(b: Bounds) -> Self {
        [b.min.x, b.min.y, b.max.x, b.max.y]
    }
}

impl Bounds {
    pub fn square(half: f64) -> Self {
        Bounds {
            min: Point2::new(-half, -half),
            max: Point2::new(half, half),
        }
    }

    pub fn contains(&self, p: Point2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }
}

/// A static obstacle environment. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    #[serde(default)]
    pub name: String,
    pub bounds: Bounds,
    pub obstacles: Vec<Obstacle>,
}

impl World {
    pub fn new(name: impl Into<String>, bounds: Bounds, obstacles: Vec<Obstacle>) -> Result<Self> {
        let w = World {
            name: name.into(),
            bounds,
            obstacles,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn empty(bounds: Bounds) -> Self {
        World {
            name: String::new(),
            bounds,
            obstacles: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bounds.min.x < self.bounds.max.x && self.bounds.min.y < self.bounds.max.y) {
            return Err(Error::invalid(format!("world `{}` has an empty bounds box", self.name)));
        }
        for o in &self.obstacles {
            if !(o.radius.is_finite() && o.radius > 0.0) {
                return Err(Error::invalid(format!("world `{}`: nonpositive obstacle radius", self.name)));
            }
            if !self.bounds.contains(o.center) {
                return Err(Error::invalid(format!(
                    "world `{}`: obstacle center ({}, {}) outside bounds",
                    self.name, o.center.x, o.center.y
                )));
            }
        }
        Ok(())
    }
}

/// An obstacle following a piecewise-linear schedule of `(time, center)`
/// pairs. Outside the schedule it rests at the nearest endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MoverDoc", into = "MoverDoc")]
pub struct MovingObstacle {
    schedule: Vec<(f64, Point2)>,
    radius: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MoverDoc {
    r: f64,
    schedule: Vec<[f64; 3]>,
}

impl TryFrom<MoverDoc> for MovingObstacle {
    type Error = Error;
    fn try_from(d: MoverDoc) -> Result<Self> {
        MovingObstacle::new(
            d.schedule
                .into_iter()
                .map(|[t, x, y]| (t, Point2::new(x, y)))
                .collect(),
            d.r,
        )
    }
}

impl From<MovingObstacle> for MoverDoc {
    fn from(m: MovingObstacle) -> Self {
        MoverDoc {
            r: m.radius,
            schedule: m.schedule.iter().map(|(t, p)| [*t, p.x, p.y]).collect(),
        }
    }
}

impl MovingObstacle {
    pub fn new(schedule: Vec<(f64, Point2)>, radius: f64) -> Result<Self> {
        if schedule.is_empty() {
            return Err(Error::invalid("mover schedule is empty"));
        }
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::invalid("mover radius must be positive"));
        }
        if schedule.windows(2).any(|w| !(w[0].0 < w[1].0)) {
            return Err(Error::invalid("mover schedule times must be strictly increasing"));
        }
        Ok(MovingObstacle { schedule, radius })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn schedule(&self) -> &[(f64, Point2)] {
        &self.schedule
    }

    pub fn position(&self, t: f64) -> Point2 {
        let first = self.schedule[0];
        let last = self.schedule[self.schedule.len() - 1];
        if t <= first.0 {
            return first.1;
        }
        if t >= last.0 {
            return last.1;
        }
        let k = self.schedule.partition_point(|(ts, _)| *ts <= t);
        let (t0, p0) = self.schedule[k - 1];
        let (t1, p1) = self.schedule[k];
        let s = (t - t0) / (t1 - t0);
        Point2::new(p0.x + s * (p1.x - p0.x), p0.y + s * (p1.y - p0.y))
    }

    /// Fastest speed along any schedule segment (m/s).
    pub fn max_speed(&self) -> f64 {
        self.schedule
            .windows(2)
            .map(|w| w[0].1.distance(w[1].1) / (w[1].0 - w[0].0))
            .fold(0.0, f64::max)
    }

    pub fn at(&self, t: f64) -> Obstacle {
        Obstacle {
            center: self.position(t),
            radius: self.radius,
        }
    }
}

/// A world file: static obstacles plus optional movers.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub world: World,
    pub movers: Vec<MovingObstacle>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneDoc {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    name: String,
    bounds: Bounds,
    #[serde(default)]
    obstacles: Vec<Obstacle>,
    #[serde(default)]
    movers: Vec<MovingObstacle>,
}

impl Scene {
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: SceneDoc = serde_json::from_str(text)?;
        let world = World::new(doc.name, doc.bounds, doc.obstacles)?;
        Ok(Scene {
            world,
            movers: doc.movers,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = SceneDoc {
            name: self.world.name.clone(),
            bounds: self.world.bounds,
            obstacles: self.world.obstacles.clone(),
            movers: self.movers.clone(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut scene = Self::from_json(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: e.to_string(),
        })?;
        if scene.world.name.is_empty() {
            if let Some(stem) = path.file_stem() {
                scene.world.name = stem.to_string_lossy().into_owned();
            }
        }
        Ok(scene)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }
}

fn point_segment_distance_sq(p: Point2, a: Point2, b: Point2) -> f64 {
    let (abx, aby) = (b.x - a.x, b.y - a.y);
    let (apx, apy) = (p.x - a.x, p.y - a.y);
    let len_sq = abx * abx + aby * aby;
    let t = if len_sq > 0.0 {
        ((apx * abx + apy * aby) / len_sq).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (dx, dy) = (apx - t * abx, apy - t * aby);
    dx * dx + dy * dy
}

/// True iff some link, inflated by the link radius, overlaps some obstacle.
pub fn config_in_collision(model: &RobotModel, world: &World, q: &JointConfig) -> bool {
    if world.obstacles.is_empty() {
        return false;
    }
    let pts = fk_points(model.link_lengths(), q.as_slice());
    let inflate = model.link_radius();
    pts.windows(2).any(|seg| {
        world.obstacles.iter().any(|o| {
            let r = o.radius + inflate;
            point_segment_distance_sq(o.center, seg[0], seg[1]) < r * r
        })
    })
}

/// Number of interpolated states an edge is checked at (endpoints included).
pub fn edge_states(q1: &JointConfig, q2: &JointConfig, resolution: f64) -> usize {
    let span = q1.max_abs_diff(q2);
    // the small slack keeps exact multiples of the resolution from gaining a step
    let steps = (span / resolution - 1e-9).ceil().max(0.0) as usize;
    steps + 1
}

/// Validates the straight joint-space edge `q1 → q2`, stopping at the first
/// colliding state. Returns the outcome and the number of states checked.
pub fn edge_valid(
    model: &RobotModel,
    world: &World,
    q1: &JointConfig,
    q2: &JointConfig,
    resolution: f64,
) -> (bool, u64) {
    let states = edge_states(q1, q2, resolution);
    let mut checks = 0;
    for i in 0..states {
        let q = if states == 1 {
            q1.clone()
        } else if i + 1 == states {
            q2.clone()
        } else {
            q1.lerp(q2, i as f64 / (states - 1) as f64)
        };
        checks += 1;
        if config_in_collision(model, world, &q) {
            return (false, checks);
        }
    }
    (true, checks)
}

/// Packs obstacles as `(cx, cy, r)` triples in insertion order; unused
/// slots hold [`EMPTY_SLOT`].
pub fn encode_world(world: &World, k_max: usize) -> Result<Vec<f64>> {
    if world.obstacles.len() > k_max {
        return Err(Error::Capacity {
            count: world.obstacles.len(),
            capacity: k_max,
        });
    }
    let mut out = Vec::with_capacity(3 * k_max);
    for o in &world.obstacles {
        out.extend_from_slice(&[o.center.x, o.center.y, o.radius]);
    }
    for _ in world.obstacles.len()..k_max {
        out.extend_from_slice(&EMPTY_SLOT);
    }
    Ok(out)
}

/// Inverse of [`encode_world`]'s slot packing.
pub fn decode_obstacles(encoded: &[f64]) -> Vec<Obstacle> {
    encoded
        .chunks_exact(3)
        .filter(|s| s[2] > 0.0)
        .map(|s| Obstacle {
            center: Point2::new(s[0], s[1]),
            radius: s[2],
        })
        .collect()
}

/// The static world plus every mover materialized at time `t`.
pub fn snapshot(world: &World, movers: &[MovingObstacle], t: f64) -> World {
    let mut out = world.clone();
    out.obstacles.extend(movers.iter().map(|m| m.at(t)));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn arm() -> RobotModel {
        RobotModel::new(vec![1.0, 1.0], 0.0).unwrap()
    }

    fn world_with(obs: Vec<Obstacle>) -> World {
        World::new("t", Bounds::square(5.0), obs).unwrap()
    }

    #[test]
    fn empty_world_never_collides() {
        let w = World::empty(Bounds::square(3.0));
        assert!(!config_in_collision(&arm(), &w, &JointConfig::new(vec![0.3, -2.0])));
    }

    #[test]
    fn segment_through_disk_collides() {
        let w = world_with(vec![Obstacle::new(1.5, 0.0, 0.2).unwrap()]);
        assert!(config_in_collision(&arm(), &w, &JointConfig::zeros(2)));
        assert!(!config_in_collision(&arm(), &w, &JointConfig::new(vec![PI / 2.0, 0.0])));
    }

    #[test]
    fn link_radius_inflates_links() {
        let w = world_with(vec![Obstacle::new(1.0, 0.5, 0.2).unwrap()]);
        let thin = arm();
        let fat = RobotModel::new(vec![1.0, 1.0], 0.35).unwrap();
        assert!(!config_in_collision(&thin, &w, &JointConfig::zeros(2)));
        assert!(config_in_collision(&fat, &w, &JointConfig::zeros(2)));
    }

    #[test]
    fn edge_check_counts() {
        let w = World::empty(Bounds::square(3.0));
        let q = JointConfig::new(vec![0.2, 0.4]);
        assert_eq!(edge_valid(&arm(), &w, &q, &q, 0.05), (true, 1));
        let a = JointConfig::new(vec![0.0, 0.0]);
        let b = JointConfig::new(vec![1.0, -0.5]);
        assert_eq!(edge_valid(&arm(), &w, &a, &b, 0.1), (true, 11));

        let blocked = world_with(vec![Obstacle::new(1.5, 0.0, 0.2).unwrap()]);
        let (ok, checks) = edge_valid(&arm(), &blocked, &a, &b, 0.1);
        assert!(!ok);
        assert_eq!(checks, 1);
    }

    #[test]
    fn encoding_slots() {
        let w = World::empty(Bounds::square(3.0));
        assert_eq!(encode_world(&w, 2).unwrap(), vec![0.0, 0.0, -1.0, 0.0, 0.0, -1.0]);
        let w = world_with(vec![Obstacle::new(1.0, 2.0, 0.5).unwrap()]);
        assert_eq!(encode_world(&w, 2).unwrap(), vec![1.0, 2.0, 0.5, 0.0, 0.0, -1.0]);
        let w = world_with(vec![
            Obstacle::new(1.0, 2.0, 0.5).unwrap(),
            Obstacle::new(-1.0, 0.5, 0.25).unwrap(),
        ]);
        assert_eq!(encode_world(&w, 2).unwrap(), vec![1.0, 2.0, 0.5, -1.0, 0.5, 0.25]);
        assert!(matches!(encode_world(&w, 1), Err(Error::Capacity { count: 2, capacity: 1 })));
    }

    #[test]
    fn mover_interpolation_and_clamping() {
        let m = MovingObstacle::new(
            vec![(1.0, Point2::new(0.0, 0.0)), (11.0, Point2::new(10.0, 0.0))],
            0.3,
        )
        .unwrap();
        assert_eq!(m.position(0.0), Point2::new(0.0, 0.0));
        assert_eq!(m.position(6.0), Point2::new(5.0, 0.0));
        assert_eq!(m.position(50.0), Point2::new(10.0, 0.0));

        let m = MovingObstacle::new(
            vec![(0.0, Point2::new(0.0, 0.0)), (10.0, Point2::new(10.0, 0.0))],
            0.3,
        )
        .unwrap();
        let w = snapshot(&World::empty(Bounds::square(20.0)), &[m], 5.0);
        assert_eq!(w.obstacles.len(), 1);
        assert_eq!(w.obstacles[0].center, Point2::new(5.0, 0.0));
        assert_eq!(w.obstacles[0].radius, 0.3);
    }

    #[test]
    fn mover_rejects_unsorted_schedule() {
        let s = vec![(1.0, Point2::ORIGIN), (1.0, Point2::new(1.0, 0.0))];
        assert!(MovingObstacle::new(s, 0.2).is_err());
    }

    #[test]
    fn scene_json_round_trip() {
        let text = r#"{
            "bounds": [-3, -3, 3, 3],
            "obstacles": [{"cx": 1.0, "cy": 1.5, "r": 0.3}],
            "movers": [{"r": 0.25, "schedule": [[0, 2.5, 1.2], [8, -2.5, 1.2]]}]
        }"#;
        let scene = Scene::from_json(text).unwrap();
        assert_eq!(scene.world.obstacles.len(), 1);
        assert_eq!(scene.movers[0].position(4.0), Point2::new(0.0, 1.2));
        let again = Scene::from_json(&scene.to_json().unwrap()).unwrap();
        assert_eq!(scene, again);

        assert!(Scene::from_json(r#"{"bounds": [-1,-1,1,1], "obstacles": [{"cx": 5, "cy": 0, "r": 0.1}]}"#).is_err());
        assert!(Scene::from_json(r#"{"bounds": [-1,-1,1,1], "extra": 1}"#).is_err());
    }

    fn arb_obstacles() -> impl Strategy<Value = Vec<Obstacle>> {
        proptest::collection::vec((-2.5f64..2.5, -2.5f64..2.5, 0.05f64..0.6), 0..8).prop_map(|v| {
            v.into_iter()
                .map(|(x, y, r)| Obstacle::new(x, y, r).unwrap())
                .collect()
        })
    }

    proptest! {
        #[test]
        fn collision_is_order_independent(
            obs in arb_obstacles(),
            q in proptest::collection::vec(-6.0f64..6.0, 3),
        ) {
            let m = RobotModel::new(vec![1.0, 0.8, 0.6], 0.05).unwrap();
            let q = JointConfig::new(q);
            let fwd = world_with(obs.clone());
            let mut rev = obs;
            rev.reverse();
            let rev = world_with(rev);
            prop_assert_eq!(config_in_collision(&m, &fwd, &q), config_in_collision(&m, &rev, &q));
        }

        #[test]
        fn edge_outcome_is_symmetric(
            obs in arb_obstacles(),
            a in proptest::collection::vec(-4.0f64..4.0, 3),
            b in proptest::collection::vec(-4.0f64..4.0, 3),
        ) {
            let m = RobotModel::new(vec![1.0, 0.8, 0.6], 0.05).unwrap();
            let w = world_with(obs);
            let (a, b) = (JointConfig::new(a), JointConfig::new(b));
            prop_assert_eq!(edge_valid(&m, &w, &a, &b, 0.05).0, edge_valid(&m, &w, &b, &a, 0.05).0);
        }

        #[test]
        fn encoding_round_trips(obs in arb_obstacles()) {
            let w = world_with(obs.clone());
            let enc = encode_world(&w, 8).unwrap();
            prop_assert_eq!(enc.len(), 24);
            prop_assert_eq!(decode_obstacles(&enc), obs);
        }

        #[test]
        fn mover_motion_is_speed_bounded(t in 0.0f64..12.0, dt in 0.0f64..2.0) {
            let m = MovingObstacle::new(
                vec![
                    (0.0, Point2::new(2.5, 1.0)),
                    (3.0, Point2::new(0.0, 2.0)),
                    (9.0, Point2::new(-2.5, 1.0)),
                ],
                0.3,
            ).unwrap();
            let moved = m.position(t).distance(m.position(t + dt));
            prop_assert!(moved <= m.max_speed() * dt + 1e-12);
        }
    }
}
