use indexmap::IndexMap;
use proptest::prelude::*;

use soupsearch::analysis::{centroid, flops_cost, pareto_front, sparsity, spearman, TrainingStage};
use soupsearch::fitness::{baseline_merge_best, best_single, macro_average, TaskScores};
use soupsearch::merger::NormalizedWeights;

fn distinct_series(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-100i32..100, n).prop_filter("not constant", |v| v.iter().any(|x| *x != v[0]))
        .prop_map(|v| v.into_iter().map(f64::from).collect())
}

fn points() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..4).prop_flat_map(|k| prop::collection::vec(prop::collection::vec(0i32..6, k), 1..12))
        .prop_map(|p| p.into_iter().map(|r| r.into_iter().map(f64::from).collect()).collect())
}

fn names(k: usize) -> Vec<String> {
    (0..k).map(|i| format!("t{i}")).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn spearman_symmetric_and_bounded((x, y) in (2usize..20).prop_flat_map(|n| (distinct_series(n), distinct_series(n)))) {
        let a = spearman(&x, &y).unwrap();
        let b = spearman(&y, &x).unwrap();
        prop_assert_eq!(a, b);
        prop_assert!((-1.0..=1.0).contains(&a));
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        prop_assert!((spearman(&x, &neg).unwrap() + 1.0).abs() < 1e-12);
        prop_assert!((spearman(&x, &x).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pareto_front_invariances(p in points(), rot in any::<prop::sample::Index>()) {
        let front = pareto_front(&p).unwrap();
        // monotone transform of every coordinate
        let q: Vec<Vec<f64>> = p.iter().map(|r| r.iter().map(|v| v.powi(3) + 2.0 * v).collect()).collect();
        prop_assert_eq!(&pareto_front(&q).unwrap(), &front);
        // rotation of the point order
        let k = rot.index(p.len());
        let rotated: Vec<Vec<f64>> = p[k..].iter().chain(&p[..k]).cloned().collect();
        let mut mapped: Vec<usize> = pareto_front(&rotated).unwrap().into_iter().map(|i| (i + k) % p.len()).collect();
        mapped.sort_unstable();
        prop_assert_eq!(mapped, front.clone());
        // the argmax of the mean is never dominated
        let tasks = names(p[0].len());
        let scores: Vec<TaskScores> = p.iter().map(|r| TaskScores::from_pairs(tasks.iter().cloned().zip(r.iter().copied()))).collect();
        let (best, _) = best_single(&scores, &tasks).unwrap();
        prop_assert!(front.contains(&best));
    }

    #[test]
    fn macro_average_bounds_and_order(vals in prop::collection::vec(-50.0f64..150.0, 1..8)) {
        let tasks = names(vals.len());
        let s = TaskScores::from_pairs(tasks.iter().cloned().zip(vals.iter().copied()));
        let f = macro_average(&s, &tasks).unwrap().value();
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(f >= lo - 1e-12 && f <= hi + 1e-12);
        let rev: Vec<String> = tasks.iter().rev().cloned().collect();
        prop_assert!((macro_average(&s, &rev).unwrap().value() - f).abs() <= 1e-12);
    }

    #[test]
    fn merge_best_has_at_most_t_nonzeros(p in points()) {
        let tasks = names(p[0].len());
        let scores: Vec<TaskScores> = p.iter().map(|r| TaskScores::from_pairs(tasks.iter().cloned().zip(r.iter().copied()))).collect();
        let (w, idx) = baseline_merge_best(&scores, &tasks).unwrap();
        prop_assert!(idx.len() <= tasks.len());
        prop_assert_eq!(w.as_slice().iter().filter(|a| **a > 0.0).count(), idx.len());
        prop_assert!(NormalizedWeights::new(w.into_inner()).is_ok());
    }

    #[test]
    fn flops_are_linear(p in 1.0f64..1e12, b in 1.0f64..512.0, s in 1.0f64..1e4, n in 1.0f64..1e4, budget in 1u64..200) {
        let one: IndexMap<String, f64> = [("x".to_string(), n)].into_iter().collect();
        let two: IndexMap<String, f64> = [("x".to_string(), 2.0 * n)].into_iter().collect();
        let st = TrainingStage { batch: b, steps: s };
        let base = flops_cost(p, st, st, &one, budget).unwrap();
        let dp = flops_cost(2.0 * p, st, st, &one, budget).unwrap();
        prop_assert_eq!(dp.train_flops, 2.0 * base.train_flops);
        prop_assert_eq!(dp.search_flops, 2.0 * base.search_flops);
        let db = flops_cost(p, TrainingStage { batch: 2.0 * b, steps: s }, st, &one, budget).unwrap();
        prop_assert_eq!(db.sft_flops, 2.0 * base.sft_flops);
        let ds = flops_cost(p, st, TrainingStage { batch: b, steps: 2.0 * s }, &one, budget).unwrap();
        prop_assert_eq!(ds.po_flops, 2.0 * base.po_flops);
        let dn = flops_cost(p, st, st, &two, budget).unwrap();
        prop_assert_eq!(dn.search_flops, 2.0 * base.search_flops);
        let dt = flops_cost(p, st, st, &one, 2 * budget).unwrap();
        prop_assert_eq!(dt.search_flops, 2.0 * base.search_flops);
    }

    #[test]
    fn centroid_of_weights_is_on_simplex(raw in prop::collection::vec(prop::collection::vec(0.01f64..1.0, 5), 1..10)) {
        let ws: Vec<Vec<f64>> = raw.iter().map(|r| { let s: f64 = r.iter().sum(); r.iter().map(|v| v / s).collect() }).collect();
        let c = centroid(&ws).unwrap();
        prop_assert!((c.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(c.iter().all(|v| *v >= 0.0));
    }
}

#[test]
fn sparsity_examples() {
    assert_eq!(sparsity(&NormalizedWeights::uniform(16), 1e-3).0, 0);
    assert_eq!(sparsity(&NormalizedWeights::one_hot(16, 3), 1e-3).0, 15);
    let w = NormalizedWeights::new(vec![0.5, 0.4995, 0.0005]).unwrap();
    assert_eq!(sparsity(&w, 1e-3), (1, vec![2]));
}
