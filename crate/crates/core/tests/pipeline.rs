use smd_core::bounds::{BoundParams, Bounds};
use smd_core::geometry::{ConstraintSet, Geometry, NormPair};
use smd_core::harness::{compare_bound, default_checkpoints, run_trials, tail_probability, DEFAULT_CONFIDENCE};
use smd_core::oracle::{BiasModel, NoiseKind, NoiseModel, Oracle};
use smd_core::problems::{make_problem, ProblemKind};
use smd_core::smd::{Experiment, StepSchedule};

fn l1_experiment(alpha0: f64, k: f64) -> Experiment {
    let p = make_problem(
        ProblemKind::L1Norm { shift: vec![1.0] },
        ConstraintSet::cube(1, -1.0, 1.0).unwrap(),
        NormPair::L2,
    )
    .unwrap();
    let noise = NoiseModel::new(NoiseKind::GaussianIso { sigma: 0.1 }, 1.01f64.sqrt(), Some(0.1)).unwrap();
    let o = Oracle::new(BiasModel::None, noise, &p).unwrap();
    Experiment::new(p, Geometry::euclidean(), o, StepSchedule::new(alpha0, k).unwrap()).unwrap()
}

fn quadratic_experiment() -> Experiment {
    let p = make_problem(
        ProblemKind::Quadratic { a: vec![vec![2.0, 0.0], vec![0.0, 2.0]], b: vec![1.0, -3.0] },
        ConstraintSet::new_ball(vec![0.0, 0.0], 1.0).unwrap(),
        NormPair::L2,
    )
    .unwrap();
    let noise = NoiseModel::new(NoiseKind::BoundedUniform { radius: 0.3 }, 6.0, None).unwrap();
    let o = Oracle::new(BiasModel::Adversarial { b0: 0.2, q: 0.8 }, noise, &p).unwrap();
    Experiment::new(p, Geometry::euclidean(), o, StepSchedule::new(0.3, 0.7).unwrap()).unwrap()
}

#[test]
fn trial_sets_do_not_depend_on_worker_count() {
    let e = quadratic_experiment();
    let cps = default_checkpoints(500, &[]);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_trials(&e, 500, &cps, 17, 0..40).unwrap())
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn bound_holds_at_twice_the_threshold_time() {
    let e = l1_experiment(0.2, 0.6);
    let bounds = Bounds::new(BoundParams::for_experiment(&e, None, None).unwrap()).unwrap();
    let (eps, p) = (1.0, 0.9);
    let t_star = bounds.corollary2_times(eps, p).unwrap().t_star.unwrap();
    let horizon = 2 * t_star;
    let ts = run_trials(&e, horizon, &[t_star, horizon], 3, 0..100).unwrap();
    for t in [t_star, horizon] {
        let b = bounds.theorem4_bound(t, eps).unwrap();
        assert!(b.applicable && b.clipped <= 1.0 - p + 1e-12, "t = {t}: {b:?}");
        let tail = tail_probability(&ts, t, eps, DEFAULT_CONFIDENCE).unwrap();
        assert!(compare_bound(&tail, b.clipped).is_consistent(), "t = {t}: {tail:?}");
    }
}

#[test]
fn trace_csv_has_one_row_per_kept_step() {
    let e = quadratic_experiment();
    let trace = e.run(300, 8, true).unwrap();
    let mut buf = Vec::new();
    trace.write_csv(&mut buf, &[("seed", "8".to_string())]).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "t,gap_x,gap_z,ber_residual,opt_residual");
    assert_eq!(rows.len(), 301);
    for (i, row) in rows[1..].iter().enumerate() {
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(cols.len(), 5);
        assert_eq!(cols[0].parse::<u64>().unwrap(), i as u64 + 1);
        let gap_z: f64 = cols[2].parse().unwrap();
        assert!(gap_z >= -1e-12);
        let ber: f64 = cols[3].parse().unwrap();
        assert!(ber <= 1e-9);
    }
}

#[test]
fn different_seeds_give_different_trajectories() {
    let e = quadratic_experiment();
    let a = e.run(50, 1, false).unwrap();
    let b = e.run(50, 2, false).unwrap();
    assert_ne!(a.final_x, b.final_x);
    assert_eq!(a, e.run(50, 1, false).unwrap());
}
