use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use subgoal_bench::{cluttered, config, free_pair, robot};
use subgoal_core::cvae::CvaeModel;
use subgoal_core::config::RunConfig;
use subgoal_core::neuralnet::DenseNetwork;
use subgoal_core::planner::{rrt_connect, shape_range, JointBounds};
use subgoal_core::time_estimator::{Family, TimeEstimatorModel};
use subgoal_core::world::{config_in_collision, edge_valid};

fn collision(c: &mut Criterion) {
    let (r, w) = (robot(), cluttered());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let qs: Vec<_> = (0..256)
        .map(|_| config(&(0..r.dof()).map(|_| rng.random_range(-3.0..3.0)).collect::<Vec<_>>()))
        .collect();
    c.bench_function("config_in_collision x256", |b| {
        b.iter(|| qs.iter().filter(|q| config_in_collision(&r, &w, q)).count())
    });
    let (a, z) = free_pair(&r, &w);
    c.bench_function("edge_valid free pair", |b| b.iter(|| edge_valid(&r, &w, black_box(&a), black_box(&z), 0.05)));
}

fn planning(c: &mut Criterion) {
    let (r, w) = (robot(), cluttered());
    let params = RunConfig::default().planner();
    let (start, goal) = free_pair(&r, &w);
    let full = JointBounds::full(&r);
    let shaped = shape_range(&start, &goal, &RunConfig::default().paddings(), &r).unwrap();
    let mut g = c.benchmark_group("rrt_connect");
    g.sample_size(20);
    g.bench_function("full range", |b| {
        let mut s = 0;
        b.iter(|| {
            s += 1;
            rrt_connect(&r, &w, &start, &goal, &full, &params.with_seed(s)).unwrap()
        })
    });
    g.bench_function("shaped range", |b| {
        let mut s = 0;
        b.iter(|| {
            s += 1;
            rrt_connect(&r, &w, &start, &goal, &shaped, &params.with_seed(s)).unwrap()
        })
    });
    g.finish();
}

fn networks(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let net = DenseNetwork::new(&[64, 64, 64, 10], &mut rng).unwrap();
    let x: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
    c.bench_function("dense forward 64-64-64-10", |b| b.iter(|| net.forward(black_box(&x)).unwrap()));

    let cfg = RunConfig::default();
    let cvae = CvaeModel::new(robot(), cfg.cvae_shape(), 3).unwrap();
    let est = TimeEstimatorModel::new(&cvae, Family::Lognormal, 1.0, &cfg.time.hidden, 4).unwrap();
    let w = cluttered();
    let (s, g) = free_pair(&cvae.robot, &w);
    c.bench_function("cvae 32 candidates", |b| {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        b.iter(|| cvae.generate_candidates(&w, &s, &g, 32, &mut rng).unwrap())
    });
    c.bench_function("estimator t95", |b| b.iter(|| est.predict_t95(&w, black_box(&s), black_box(&g)).unwrap()));
}

criterion_group!(benches, collision, planning, networks);
criterion_main!(benches);
