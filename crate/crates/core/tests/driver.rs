use std::io::Write;
use std::path::{Path, PathBuf};

use soupsearch::driver::*;
use soupsearch::fitness::{evaluate_external, macro_average, FitnessError};
use soupsearch::merger::{merge, normalize, NormalizedWeights};
use soupsearch::tensorstore::{write_checkpoint, CheckpointPool};
use soupsearch::toylab::{gen_radial_suite, symmetric_pair, GeneratorConfig, ToyTaskSuite};

fn lab(seed: u64) -> (CheckpointPool, ToyTaskSuite) {
    let g = GeneratorConfig {
        dim: 8,
        pool_size: 16,
        tasks: 2,
        noise: 0.3,
        seed,
        ..GeneratorConfig::default()
    };
    gen_radial_suite(&g).unwrap()
}

fn config(suite: &ToyTaskSuite) -> SearchConfig {
    SearchConfig::new(suite.task_names(), EvaluatorSpec::Builtin { suite: "suite.json".into() })
}

fn script(dir: &Path, name: &str, body: &str) -> PathBuf {
    use std::os::unix::fs::PermissionsExt;
    let p = dir.join(name);
    let mut f = std::fs::File::create(&p).unwrap();
    writeln!(f, "#!/bin/sh\n{body}").unwrap();
    drop(f);
    std::fs::set_permissions(&p, std::fs::Permissions::from_mode(0o755)).unwrap();
    p
}

#[test]
fn every_logged_trial_is_recomputable() {
    let (pool, suite) = lab(0);
    let ev = BuiltinEvaluator { suite: suite.clone() };
    let cfg = config(&suite);
    let log = run_search(&cfg, &pool, &ev, &RunOptions::default()).unwrap();
    for t in &log.trials {
        assert_eq!(t.fitness, macro_average(&t.scores, &cfg.tasks).unwrap());
        if t.kind == TrialKind::Sampled && !t.degenerate_flag {
            assert_eq!(t.weights, normalize(&t.raw).unwrap());
        }
        let m = merge(&pool, &t.weights).unwrap();
        assert_eq!(suite.score(&m, &cfg.tasks).unwrap(), t.scores);
    }
    let s = log.summary.as_ref().unwrap();
    for seeded in log.trials.iter().filter(|t| t.kind == TrialKind::Seeded) {
        assert!(s.best_fitness.0 >= seeded.fitness.0);
    }
}

#[test]
fn one_hot_seeds_match_individual_scores() {
    let (pool, suite) = lab(1);
    let ev = BuiltinEvaluator { suite: suite.clone() };
    let cfg = config(&suite);
    let log = run_search(&cfg, &pool, &ev, &RunOptions::default()).unwrap();
    for i in 0..pool.len() {
        let direct = macro_average(&suite.score(&pool.load(i).unwrap(), &cfg.tasks).unwrap(), &cfg.tasks).unwrap();
        assert_eq!(log.trials[i].fitness.0.to_bits(), direct.0.to_bits());
        assert_eq!(log.trials[i].raw.0, NormalizedWeights::one_hot(16, i).into_inner());
    }
    assert_eq!(log.trials[16].weights, NormalizedWeights::uniform(16));
}

#[test]
fn cache_hits_and_degenerate_samples() {
    let (pool, suite) = symmetric_pair();
    let ev = BuiltinEvaluator { suite: suite.clone() };
    let mut cfg = config(&suite);
    cfg.sigma0 = 10.0;
    cfg.budget = 60;
    cfg.warm_start = false;
    cfg.seed = 3;
    let log = run_search(&cfg, &pool, &ev, &RunOptions::default()).unwrap();
    let hits: Vec<_> = log.trials.iter().filter(|t| t.cache_hit).collect();
    assert!(!hits.is_empty());
    for h in &hits {
        let source = log
            .trials
            .iter()
            .find(|t| t.trial_id < h.trial_id && t.weights.max_abs_diff(&h.weights) <= cfg.epsilon_cache)
            .unwrap();
        assert_eq!(source.fitness, h.fitness);
    }
    let degenerate: Vec<_> = log.trials.iter().filter(|t| t.degenerate_flag).collect();
    assert!(!degenerate.is_empty());
    for d in degenerate {
        assert!(d.raw.0.iter().all(|v| *v <= 0.0));
        assert_eq!(d.weights, NormalizedWeights::uniform(2));
    }
    assert_eq!(log.count(TrialKind::Sampled), 60);
}

#[test]
fn resume_replays_interrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let (pool, suite) = lab(2);
    let ev = BuiltinEvaluator { suite: suite.clone() };
    let cfg = config(&suite);
    let full = run_search(&cfg, &pool, &ev, &RunOptions::default()).unwrap();
    let path = dir.path().join("run.jsonl");
    let opts = RunOptions {
        log_path: Some(path.clone()),
        stop_after_sampled: Some(20),
        ..RunOptions::default()
    };
    let part = run_search(&cfg, &pool, &ev, &opts).unwrap();
    assert_eq!(part.count(TrialKind::Sampled), 20);
    let done = resume_with(&path, &pool, &ev, None).unwrap();
    assert_eq!(done.trials.len(), full.trials.len());
    for (a, b) in done.trials.iter().zip(&full.trials) {
        assert_eq!(a.raw, b.raw);
        assert_eq!(a.fitness, b.fitness);
        assert_eq!(a.kind, b.kind);
    }
    assert_eq!(done.summary.as_ref().unwrap().best_fitness, full.summary.as_ref().unwrap().best_fitness);
    // the file on disk holds the same complete run
    assert_eq!(SearchLog::read(&path).unwrap(), done);
    // resuming a complete log changes nothing
    let before = std::fs::read(&path).unwrap();
    let again = resume_with(&path, &pool, &ev, None).unwrap();
    assert_eq!(again, done);
    assert_eq!(std::fs::read(&path).unwrap(), before);
}

#[test]
fn resume_survives_a_torn_last_line() {
    let dir = tempfile::tempdir().unwrap();
    let (pool, suite) = lab(3);
    let ev = BuiltinEvaluator { suite: suite.clone() };
    let cfg = config(&suite);
    let full = run_search(&cfg, &pool, &ev, &RunOptions::default()).unwrap();
    let path = dir.path().join("run.jsonl");
    let opts = RunOptions {
        log_path: Some(path.clone()),
        stop_after_sampled: Some(7),
        ..RunOptions::default()
    };
    run_search(&cfg, &pool, &ev, &opts).unwrap();
    let mut text = std::fs::read_to_string(&path).unwrap();
    let cut = text.trim_end().rfind('\n').unwrap() + 20;
    text.truncate(cut);
    std::fs::write(&path, text).unwrap();
    let done = resume_with(&path, &pool, &ev, None).unwrap();
    for (a, b) in done.trials.iter().zip(&full.trials) {
        assert_eq!(a.raw, b.raw);
        assert_eq!(a.fitness, b.fitness);
    }
    assert!(done.is_complete());
}

#[test]
fn resume_rejects_tampering_and_other_pools() {
    let dir = tempfile::tempdir().unwrap();
    let (pool, suite) = lab(4);
    let ev = BuiltinEvaluator { suite: suite.clone() };
    let cfg = config(&suite);
    let path = dir.path().join("run.jsonl");
    let opts = RunOptions {
        log_path: Some(path.clone()),
        stop_after_sampled: Some(5),
        ..RunOptions::default()
    };
    let part = run_search(&cfg, &pool, &ev, &opts).unwrap();

    let (other, _) = lab(5);
    assert!(matches!(resume_with(&path, &other, &ev, None), Err(DriverError::ConfigMismatch(_))));

    let mut bad = part.clone();
    let last = bad.trials.last_mut().unwrap();
    last.raw.0[0] += 1e-9;
    let tampered = dir.path().join("tampered.jsonl");
    bad.write(&tampered).unwrap();
    assert!(matches!(resume_with(&tampered, &pool, &ev, None), Err(DriverError::CorruptLog(_))));

    std::fs::write(dir.path().join("empty.jsonl"), "").unwrap();
    assert!(matches!(
        SearchLog::read(dir.path().join("empty.jsonl")),
        Err(DriverError::CorruptLog(_))
    ));
}

#[test]
fn resume_from_pool_directory() {
    let dir = tempfile::tempdir().unwrap();
    let (pool, suite) = lab(6);
    let labdir = dir.path().join("lab");
    let saved = soupsearch::toylab::save_toy_lab(&labdir, &pool, &suite).unwrap();
    let mut cfg = config(&suite);
    cfg.evaluator = EvaluatorSpec::Builtin { suite: labdir.clone() };
    cfg.budget = 10;
    let ev = build_evaluator(&cfg.evaluator).unwrap();
    let path = dir.path().join("run.jsonl");
    let opts = RunOptions {
        log_path: Some(path.clone()),
        pool_dir: Some(labdir.clone()),
        stop_after_sampled: Some(4),
    };
    run_search(&cfg, &saved, ev.as_ref(), &opts).unwrap();
    let done = resume(&path, None).unwrap();
    assert_eq!(done.count(TrialKind::Sampled), 10);
    assert!(done.is_complete());
}

#[test]
fn subset_study_over_sizes() {
    let mut at2 = Vec::new();
    let mut at16 = Vec::new();
    for seed in 0..3 {
        let (pool, suite) = lab(seed);
        let ev = BuiltinEvaluator { suite: suite.clone() };
        let mut cfg = config(&suite);
        cfg.seed = seed;
        let study = subset_experiment(&cfg, &pool, &ev, &[2, 4, 8, 16], None).unwrap();
        assert_eq!(study.logs.len(), 4);
        assert_eq!(study.rows.iter().map(|r| r.n).collect::<Vec<_>>(), vec![2, 4, 8, 16]);
        for r in &study.rows {
            assert_eq!(r.centroid.len(), 2);
        }
        let plain = run_search(&cfg, &pool, &ev, &RunOptions::default()).unwrap();
        let (_, full) = &study.logs[3];
        assert_eq!(full.config.subset_indices.as_deref(), Some(&(0..16).collect::<Vec<_>>()[..]));
        for (a, b) in full.trials.iter().zip(&plain.trials) {
            assert_eq!(a.raw, b.raw);
            assert_eq!(a.fitness, b.fitness);
        }
        at2.push(study.rows[0].best_fitness);
        at16.push(study.rows[3].best_fitness);
    }
    let median = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v[1]
    };
    assert!(median(&mut at16) >= median(&mut at2));
}

#[test]
fn external_protocol_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let (pool, _) = symmetric_pair();
    let ck = dir.path().join("c.mrgc");
    write_checkpoint(&ck, &pool.load(0).unwrap()).unwrap();
    let tasks = vec!["a".to_string(), "b".to_string()];

    let ok = script(dir.path(), "ok.sh", "echo 'warming up' >&2\necho '{\"scores\": {\"a\": 61.5, \"b\": 70, \"c\": 1}}'");
    let ev = evaluate_external(&ck, ok.to_str().unwrap(), &tasks, None).unwrap();
    assert_eq!(ev.scores.get("a"), Some(61.5));
    assert_eq!(ev.scores.get("b"), Some(70.0));
    assert_eq!(ev.scores.get("c"), None);
    assert_eq!(ev.stderr.trim(), "warming up");

    let args = script(dir.path(), "args.sh", "printf '{\"scores\": {\"a\": %s, \"b\": 0}}' \"$#\"");
    let ev = evaluate_external(&ck, &format!("{} extra", args.display()), &tasks, None).unwrap();
    // "extra" plus --checkpoint PATH --tasks LIST
    assert_eq!(ev.scores.get("a"), Some(5.0));

    let crash = script(dir.path(), "crash.sh", "echo oops >&2\nexit 1");
    match evaluate_external(&ck, crash.to_str().unwrap(), &tasks, None) {
        Err(FitnessError::EvaluatorCrashed { stderr, .. }) => assert!(stderr.contains("oops")),
        other => panic!("{other:?}"),
    }
    let partial = script(dir.path(), "partial.sh", "echo '{\"scores\": {\"a\": 1}}'");
    assert!(matches!(
        evaluate_external(&ck, partial.to_str().unwrap(), &tasks, None),
        Err(FitnessError::MissingTask(t)) if t == "b"
    ));
    let junk = script(dir.path(), "junk.sh", "echo not json");
    assert!(matches!(
        evaluate_external(&ck, junk.to_str().unwrap(), &tasks, None),
        Err(FitnessError::ProtocolError(_))
    ));
    let slow = script(dir.path(), "slow.sh", "sleep 5");
    assert!(matches!(
        evaluate_external(&ck, slow.to_str().unwrap(), &tasks, Some(std::time::Duration::from_millis(200))),
        Err(FitnessError::EvaluatorTimeout(_))
    ));
    assert!(matches!(
        evaluate_external(&ck, "/nonexistent/evaluator", &tasks, None),
        Err(FitnessError::Spawn { .. })
    ));
}

#[test]
fn external_evaluator_drives_a_search() {
    let dir = tempfile::tempdir().unwrap();
    let (pool, suite) = symmetric_pair();
    // constant scores; enough to exercise staging and stderr capture
    let body = "test -s \"$2\" || exit 9\necho log-line >&2\necho '{\"scores\": {\"t1\": 50, \"t2\": 60}}'";
    let stub = script(dir.path(), "stub.sh", body);
    let mut cfg = config(&suite);
    cfg.evaluator = EvaluatorSpec::External {
        command: stub.display().to_string(),
        timeout_secs: Some(30.0),
    };
    cfg.budget = 6;
    let ev = build_evaluator(&cfg.evaluator).unwrap();
    let log = run_search(&cfg, &pool, ev.as_ref(), &RunOptions::default()).unwrap();
    assert_eq!(log.count(TrialKind::Sampled), 6);
    let fresh = log.trials.iter().find(|t| !t.cache_hit).unwrap();
    assert_eq!(fresh.evaluator_stderr.trim(), "log-line");
    assert!(log.trials.iter().all(|t| t.fitness.0 == 55.0));

    let crash = script(dir.path(), "crash.sh", "exit 3");
    cfg.evaluator = EvaluatorSpec::External {
        command: crash.display().to_string(),
        timeout_secs: None,
    };
    let ev = build_evaluator(&cfg.evaluator).unwrap();
    let path = dir.path().join("abort.jsonl");
    let err = run_search(
        &cfg,
        &pool,
        ev.as_ref(),
        &RunOptions {
            log_path: Some(path.clone()),
            ..RunOptions::default()
        },
    )
    .unwrap_err();
    assert!(err.is_evaluator_failure());
    // the snapshot is on disk so the run can be resumed once fixed
    assert!(SearchLog::read(&path).unwrap().trials.is_empty());

    cfg.on_eval_error = ErrorPolicy::Penalize;
    let all_fail = run_search(&cfg, &pool, ev.as_ref(), &RunOptions::default());
    assert!(all_fail.is_err(), "a run with no successful evaluation has nothing to report");
}
