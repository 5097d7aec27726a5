//! Shared fixtures for the benchmarks in `benches/`.

use subgoal_core::config::RunConfig;
use subgoal_core::world::{Bounds, Obstacle, World};
use subgoal_core::{JointConfig, RobotModel};

/// The default 5-link arm.
pub fn robot() -> RobotModel {
    RunConfig::default().robot().expect("default robot is valid")
}

/// A fixed cluttered world with eight obstacles.
pub fn cluttered() -> World {
    let obs = [(1.2, 0.4, 0.35), (-0.9, 1.3, 0.4), (0.2, -1.5, 0.3), (-1.6, -0.8, 0.45), (1.9, -1.1, 0.3), (-0.2, 2.1, 0.35), (2.2, 1.6, 0.4), (-2.3, 0.9, 0.3)];
    World::new(
        "bench",
        Bounds::square(3.0),
        obs.iter().map(|&(x, y, r)| Obstacle::new(x, y, r).expect("positive radius")).collect(),
    )
    .expect("obstacles fit")
}

pub fn config(q: &[f64]) -> JointConfig {
    JointConfig::new(q.to_vec())
}

/// A seeded collision-free start/goal pair at least 2 rad apart in `world`.
pub fn free_pair(robot: &RobotModel, world: &World) -> (JointConfig, JointConfig) {
    let mut state = 0x9e37_79b9_7f4a_7c15u64;
    let mut next = || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64 * 6.0 - 3.0
    };
    let mut free = || loop {
        let q = JointConfig::new((0..robot.dof()).map(|_| next()).collect());
        if !subgoal_core::world::config_in_collision(robot, world, &q) {
            return q;
        }
    };
    let a = free();
    loop {
        let b = free();
        if a.distance(&b) >= 2.0 {
            return (a, b);
        }
    }
}
