use mtvbo::harness::{aggregate, normalize_by_problem, range_normalize, run_one, Method, MethodPlan, RunTrace, Task};
use mtvbo::testbed::{Problem, TestFunction};
use proptest::prelude::*;

fn trace(method: &str, problem: &str, replication: usize, best: Vec<f64>) -> RunTrace {
    RunTrace {
        method: method.into(),
        problem: problem.into(),
        dimension: 1,
        replication,
        seed: replication as u64,
        batches: vec![],
        measurements: vec![],
        best_so_far: best,
        error: None,
    }
}

#[test]
fn sobol_on_sphere_matches_hand_computation() {
    let task = Task::Function {
        function: TestFunction::Sphere,
        dimension: 1,
        noise_sd: 0.0,
        distort: false,
    };
    let t = run_one(&task, &MethodPlan::uniform(Method::Sobol, 1), 8, 3, 0);
    assert!(t.error.is_none());
    assert_eq!(t.best_so_far.len(), 1);
    let hand = t.batches[0]
        .arms
        .iter()
        .map(|a| {
            let z = -5.12 + 10.24 * a[0];
            -z * z
        })
        .fold(f64::NEG_INFINITY, f64::max);
    assert!((t.best_so_far[0] - hand).abs() <= 1e-12);
    let p = Problem::centered(TestFunction::Sphere, 1).unwrap();
    for (a, y) in t.batches[0].arms.iter().zip(&t.measurements[0]) {
        assert_eq!(*y, p.evaluate(a).unwrap());
    }
}

#[test]
fn traces_are_reproducible_and_monotone() {
    let task = Task::function(TestFunction::Levy, 2);
    for plan in ["mtv", "ts", "random", "mtv:ts:ts"] {
        let plan = MethodPlan::parse(plan, 3).unwrap();
        let a = run_one(&task, &plan, 3, 11, 0);
        let b = run_one(&task, &plan, 3, 11, 0);
        assert_eq!(a, b);
        assert!(a.error.is_none(), "{:?}", a.error);
        assert_eq!(a.measurements.iter().map(Vec::len).sum::<usize>(), 9);
        assert!(a.best_so_far.windows(2).all(|w| w[0] <= w[1]));
    }
    let e = run_one(&task, &MethodPlan::parse("mtv:ts:ts", 3).unwrap(), 3, 11, 0);
    assert_eq!(e.method, "mtv+ts");
}

// Problem p: a = [1, 2, 3], b = [0, 4, 2] → range [0, 4]
// Problem q: a = [10, 10, 20], b = [20, 15, 10] → range [10, 20]
// a: 0.25 0.5 0.75 0 0 1 → mean 5/12, sample var 1/6, stderr 1/6
// b: 0 1 0.5 1 0.5 0 → mean 1/2, sample var 1/5, stderr √(1/30)
#[test]
fn aggregate_matches_hand_fixture() {
    let raw = [("a", "p", [1.0, 2.0, 3.0]), ("b", "p", [0.0, 4.0, 2.0]), ("a", "q", [10.0, 10.0, 20.0]), ("b", "q", [20.0, 15.0, 10.0])];
    let traces: Vec<RunTrace> = raw
        .iter()
        .flat_map(|(m, p, v)| v.iter().enumerate().map(move |(r, x)| trace(m, p, r, vec![*x])))
        .collect();
    let refs: Vec<&RunTrace> = traces.iter().collect();
    let norm = normalize_by_problem(&refs);
    let rows = aggregate(&refs, &norm);
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0].method, "b");
    assert!((rows[0].mean_normalized - 0.5).abs() < 1e-12);
    assert!((rows[0].stderr - (1.0f64 / 30.0).sqrt()).abs() < 1e-12);
    assert_eq!(rows[1].method, "a");
    assert!((rows[1].mean_normalized - 5.0 / 12.0).abs() < 1e-12);
    assert!((rows[1].stderr - 1.0 / 6.0).abs() < 1e-12);
    assert_eq!(rows[1].n, 6);
}

#[test]
fn mirrored_scores_are_symmetric() {
    let vals = [0.0, 3.0, 7.0, 10.0, 4.5];
    let traces: Vec<RunTrace> = vals
        .iter()
        .enumerate()
        .flat_map(|(r, v)| [trace("a", "p", r, vec![*v]), trace("b", "p", r, vec![10.0 - v])])
        .collect();
    let refs: Vec<&RunTrace> = traces.iter().collect();
    let rows = aggregate(&refs, &normalize_by_problem(&refs));
    assert!((rows[0].mean_normalized + rows[1].mean_normalized - 1.0).abs() < 1e-12);
}

proptest! {
    #[test]
    fn normalization_preserves_order_and_range(vals in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 3), 1..6)) {
        let traces: Vec<RunTrace> = vals.iter().enumerate().map(|(r, v)| {
            let mut best = v.clone();
            for i in 1..best.len() { best[i] = best[i].max(best[i - 1]); }
            trace("m", "p", r, best)
        }).collect();
        let refs: Vec<&RunTrace> = traces.iter().collect();
        let norm = range_normalize(&refs);
        let raw: Vec<f64> = traces.iter().flat_map(|t| t.best_so_far.clone()).collect();
        let flat: Vec<f64> = norm.iter().flatten().copied().collect();
        for i in 0..raw.len() {
            prop_assert!((0.0..=1.0).contains(&flat[i]));
            for j in 0..raw.len() {
                if raw[i] < raw[j] {
                    prop_assert!(flat[i] < flat[j]);
                }
            }
        }
        for row in aggregate(&refs, &norm) {
            prop_assert!((0.0..=1.0).contains(&row.mean_normalized));
        }
    }
}
