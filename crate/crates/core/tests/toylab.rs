use soupsearch::analysis::spearman;
use soupsearch::fitness::macro_average;
use soupsearch::merger::{merge, NormalizedWeights};
use soupsearch::tensorstore::{CheckpointPool, Tensor, TensorMap};
use soupsearch::toylab::*;

fn column(pool: &CheckpointPool, suite: &ToyTaskSuite, task: &str) -> Vec<f64> {
    let t = vec![task.to_string()];
    (0..pool.len())
        .map(|i| suite.score(&pool.load(i).unwrap(), &t).unwrap().get(task).unwrap())
        .collect()
}

/// Fitness along the merge line of the noise-free pair, in closed form.
fn pair_line(t: f64) -> f64 {
    50.0 / (1.0 + 2.0 * t * t) + 50.0 / (1.0 + 2.0 * (1.0 - t) * (1.0 - t))
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if f(c) > f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    f((a + b) / 2.0)
}

#[test]
fn radial_pool_of_sixteen_trades_off() {
    let cfg = GeneratorConfig {
        dim: 2,
        pool_size: 16,
        tasks: 2,
        noise: 0.15,
        seed: 0,
        ..GeneratorConfig::default()
    };
    let (pool, suite) = gen_radial_suite(&cfg).unwrap();
    let rho = spearman(&column(&pool, &suite, "t1"), &column(&pool, &suite, "t2")).unwrap();
    assert!(rho <= -0.3, "rho = {rho}");
    let (again, _) = gen_radial_suite(&cfg).unwrap();
    assert_eq!(pool.content_hash().unwrap(), again.content_hash().unwrap());
    let (other, _) = gen_radial_suite(&GeneratorConfig { seed: 1, ..cfg }).unwrap();
    assert_ne!(pool.content_hash().unwrap(), other.content_hash().unwrap());
}

#[test]
fn radial_scores_fall_with_distance() {
    let c = [1.0, 0.0, 0.0];
    let mut last = radial_score(&c, &c);
    assert_eq!(last, 100.0);
    for k in 1..50 {
        let r = k as f64 * 0.1;
        let s = radial_score(&[1.0 + r, 0.0, 0.0], &c);
        assert!(s > 0.0 && s < last);
        last = s;
    }
}

#[test]
fn pair_oracle_matches_closed_form() {
    let (pool, suite) = symmetric_pair();
    let tasks = suite.task_names();
    let (w, f) = grid_oracle(&pool, &suite, &tasks, 1e-3).unwrap();
    assert!(f.value() >= 200.0 / 3.0 - 1e-12);
    let analytic = golden_max(pair_line, 0.0, 0.5);
    assert!(f.value() <= analytic + 1e-9);
    assert!(analytic - f.value() < 1e-4);
    // the two optima are mirror images; ties go to the smaller first weight
    assert!(w.as_slice()[0] < 0.5);
    let (_, fine) = grid_oracle(&pool, &suite, &tasks, 1e-4).unwrap();
    assert!((fine.value() - f.value()).abs() <= 1e-3);
    assert!(fine.value() >= f.value());
}

#[test]
fn oracle_ties_go_to_lexicographically_smallest() {
    let c = TensorMap::new("c").with("w", Tensor::vector(vec![0.2, 0.1])).unwrap();
    let pool = CheckpointPool::from_memory(vec![c.clone(), c.clone(), c]);
    let (_, suite) = symmetric_pair();
    let tasks = suite.task_names();
    let (w, _) = grid_oracle(&pool, &suite, &tasks, 0.25).unwrap();
    assert_eq!(w.as_slice(), &[0.0, 0.0, 1.0]);
}

#[test]
fn oracle_on_three_matches_exhaustive_merge() {
    let cfg = GeneratorConfig {
        dim: 3,
        pool_size: 3,
        tasks: 3,
        noise: 0.05,
        seed: 2,
        ..GeneratorConfig::default()
    };
    let (pool, suite) = gen_radial_suite(&cfg).unwrap();
    let tasks = suite.task_names();
    let (w, f) = grid_oracle(&pool, &suite, &tasks, 0.1).unwrap();
    let m = merge(&pool, &w).unwrap();
    assert_eq!(macro_average(&suite.score(&m, &tasks).unwrap(), &tasks).unwrap(), f);
    let u = merge(&pool, &NormalizedWeights::uniform(3)).unwrap();
    assert!(f.value() >= macro_average(&suite.score(&u, &tasks).unwrap(), &tasks).unwrap().value() - 0.5);
}

#[test]
fn ridge_pure_checkpoints_fit_their_task() {
    let cfg = GeneratorConfig {
        dim: 4,
        pool_size: 8,
        tasks: 2,
        noise: 0.0,
        seed: 0,
        ridge_lambda: 1e-6,
        ..GeneratorConfig::default()
    };
    let (pool, suite) = gen_ridge_suite(&cfg).unwrap();
    assert!(column(&pool, &suite, "t1")[0] >= 99.0);
    assert!(column(&pool, &suite, "t2")[1] >= 99.0);
    // orthogonal coefficients pull the pool into a tradeoff
    let rho = spearman(&column(&pool, &suite, "t1"), &column(&pool, &suite, "t2")).unwrap();
    assert!(rho < 0.0);
    if let TaskKind::Ridge { coef: a, .. } = &suite.tasks[0].kind {
        if let TaskKind::Ridge { coef: b, .. } = &suite.tasks[1].kind {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            assert!(dot.abs() < 1e-12);
        }
    }
}

#[test]
fn ridge_needs_positive_penalty() {
    let cfg = GeneratorConfig {
        dim: 4,
        ridge_lambda: 0.0,
        ..GeneratorConfig::default()
    };
    assert!(matches!(gen_ridge_suite(&cfg), Err(ToyError::InvalidConfig(_))));
}

#[test]
fn three_task_radial_certifies_every_pair() {
    let cfg = GeneratorConfig {
        dim: 3,
        pool_size: 24,
        tasks: 3,
        noise: 0.1,
        seed: 4,
        ..GeneratorConfig::default()
    };
    let (pool, suite) = gen_radial_suite(&cfg).unwrap();
    for (a, b) in [("t1", "t2"), ("t1", "t3"), ("t2", "t3")] {
        let rho = spearman(&column(&pool, &suite, a), &column(&pool, &suite, b)).unwrap();
        assert!(rho <= -0.3, "{a}/{b}: {rho}");
    }
}
