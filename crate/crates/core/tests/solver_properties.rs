use gradqvi_core::asymptotic::{contraction_test, decay_rate, solve_stationary};
use gradqvi_core::continuation::{solve_qvi, solve_vi, ContinuationSchedule, RunOptions};
use gradqvi_core::diagnostics::{
    classify_regions, constraint_violation, estimate_ledger, qvi_residual, rescale_into, residual_at, test_functions,
    LedgerOptions, Region,
};
use gradqvi_core::parabolic::StepControls;
use gradqvi_core::{parse_expression, Expression, Grid, ProblemSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn e(s: &str) -> Expression {
    parse_expression(s).unwrap()
}

fn sandpile(horizon: f64) -> ProblemSpec {
    let grid = Grid::new_1d(-1.0, 1.0, 81).unwrap();
    ProblemSpec::new(grid, horizon, e("1-0.1*u"), e("1"), e("0"))
}

fn quick() -> RunOptions {
    RunOptions {
        snapshots: 10,
        ..RunOptions::default()
    }
}

#[test]
fn sandpile_reaches_distance_function() {
    let spec = sandpile(10.0);
    let res = solve_stationary(&spec, &ContinuationSchedule::default(), &StepControls::default(), 10.0, 1e-5, 50)
        .unwrap();
    assert!(res.stalled);
    let err = (0..81)
        .map(|k| {
            let (x, _) = spec.grid.node_coords(k);
            (res.u_inf.values[k] - (1.0 - x.abs())).abs()
        })
        .fold(0.0, f64::max);
    assert!(err <= 0.02, "error {err}");
}

#[test]
fn vi_and_qvi_agree_for_fixed_threshold() {
    let spec = sandpile(0.5);
    let sched = ContinuationSchedule::fixed(0.05, 0.05);
    let ctl = StepControls::default();
    let a = solve_qvi(&spec, &sched, &ctl, &quick()).unwrap();
    let b = solve_vi(&spec, &sched, &ctl, &quick()).unwrap();
    assert_eq!(a.trajectory, b.trajectory);
}

#[test]
fn vi_rejects_state_dependent_threshold() {
    let mut spec = sandpile(0.5);
    spec.g = e("1/(1+u^2)");
    let err = solve_vi(&spec, &ContinuationSchedule::default(), &StepControls::default(), &quick()).unwrap_err();
    assert!(err.to_string().contains("independent of u"));
}

#[test]
fn continuation_meets_target_with_small_violation_mass() {
    let spec = sandpile(1.0);
    let sched = ContinuationSchedule::default();
    let run = solve_qvi(&spec, &sched, &StepControls::default(), &quick()).unwrap();
    assert!(run.target_met);
    let (vmax, vmass) = constraint_violation(run.trajectory.final_snapshot(), &spec).unwrap();
    assert!(vmax <= sched.violation_target);
    assert!(vmass <= 2.0 * spec.grid.measure() * sched.violation_target);
    // warm starts keep the first step of each stage cheap
    for w in run.stages.windows(2) {
        assert!(w[1].first_iters as f64 <= w[0].mean_iters + 5.0, "{:?}", w);
    }
    assert!(run.trajectory.max_abs() <= spec.sup_bound_m().unwrap() + 1e-3);
}

#[test]
fn state_dependent_threshold_run() {
    let mut spec = sandpile(1.0);
    spec.g = e("1.5/(1+u^2)");
    spec.lambda_min = 0.5;
    let run = solve_qvi(&spec, &ContinuationSchedule::default(), &StepControls::default(), &quick()).unwrap();
    assert!(run.target_met, "violation {}", run.final_violation);
    let u = run.trajectory.final_snapshot();
    assert!(u.max_abs() > 0.3);
    assert!(constraint_violation(u, &spec).unwrap().0 <= 1e-2);
}

#[test]
fn zero_data_is_stationary() {
    // f = 0, no flux, feasible u0: the exact solution does not move, and the
    // viscous drift vanishes with delta
    let grid = Grid::new_1d(-1.0, 1.0, 81).unwrap();
    let spec = ProblemSpec::new(grid, 1.0, e("0"), e("1"), e("0.25*(1-x^2)"));
    let sched = ContinuationSchedule {
        delta_factor: 0.1,
        delta_min: 1e-9,
        ..ContinuationSchedule::default()
    };
    let run = solve_vi(&spec, &sched, &StepControls::default(), &quick()).unwrap();
    let traj = &run.trajectory;
    let drift = traj.final_snapshot().sub(&traj.snapshots[0]).unwrap().max_abs();
    assert!(drift <= 1e-8, "drift {drift}");
}

#[test]
fn contraction_tightens_with_time() {
    let grid = Grid::new_1d(-1.0, 1.0, 81).unwrap();
    let mut spec = ProblemSpec::new(grid, 2.0, e("1-u"), e("1"), e("0"));
    spec.mu = Some(1.0);
    let sched = ContinuationSchedule::fixed(0.01, 0.01);
    let ctl = StepControls::default();
    let (a, b) = (e("0.3*(1-x^2)"), e("0.2*(1-x^2)*(1+0.5*x)"));
    let mut last = f64::INFINITY;
    for t in [0.25, 0.5, 1.0, 2.0] {
        let c = contraction_test(&spec, &sched, &ctl, &a, &b, t).unwrap();
        assert!(c.measured <= c.bound * 1.5);
        assert!(c.measured <= last + 1e-12, "t = {t}: {} after {last}", c.measured);
        last = c.measured;
    }
}

#[test]
fn decay_rate_of_exact_exponentials() {
    for (amp, rate) in [(1.0, 0.5), (3.0, 2.0), (0.01, 7.5)] {
        let series: Vec<(f64, f64)> = (0..60)
            .map(|i| {
                let t = i as f64 * 0.05;
                (t, amp * (-rate * t).exp())
            })
            .collect();
        let fit = decay_rate(&series, None).unwrap();
        assert!((fit.fitted_rate - rate).abs() <= 1e-6, "{fit:?}");
    }
}

#[test]
fn ledger_is_deterministic_and_residual_vanishes_at_u() {
    let spec = sandpile(0.5);
    let run = solve_qvi(&spec, &ContinuationSchedule::fixed(0.02, 0.02), &StepControls::default(), &quick()).unwrap();
    let traj = &run.trajectory;
    let opts = LedgerOptions {
        seed: 11,
        ..LedgerOptions::default()
    };
    let a = estimate_ledger(traj, &spec, &traj.reg_used, &opts).unwrap();
    let b = estimate_ledger(traj, &spec, &traj.reg_used, &opts).unwrap();
    assert_eq!(a.to_string(), b.to_string());
    // the time derivative is a centered difference, so only interior
    // snapshots carry a residual
    for i in 1..traj.snapshots.len() - 1 {
        let r = residual_at(traj, &spec, i, &traj.snapshots[i]).unwrap();
        assert!(r.abs() <= 1e-12, "snapshot {i}: {r}");
    }
    let res = qvi_residual(traj, &spec, 16, 3).unwrap();
    assert_eq!(res.per_snapshot.len(), res.indices.len());
}

#[test]
fn rescaled_test_functions_are_feasible() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for grid in [Grid::new_1d(0.0, 1.0, 33).unwrap(), Grid::new_2d((0.0, 1.0), (0.0, 2.0), (9, 13)).unwrap()] {
        let spec = ProblemSpec::new(grid, 1.0, e("0"), e("1"), e("0"));
        for (i, v) in test_functions(&grid, 50, 9).into_iter().enumerate() {
            let scale: f64 = rng.gen_range(0.1..50.0);
            let g: Vec<f64> = (0..grid.num_faces()).map(|_| rng.gen_range(0.2..2.0)).collect();
            let w = rescale_into(&v.scaled(scale), &g, 0.1);
            let mags = gradqvi_core::grid::face_gradient_magnitude(&w);
            let worst = mags.iter().zip(&g).map(|(m, g)| m - g).fold(f64::MIN, f64::max);
            assert!(worst <= 1e-12, "pair {i}: {worst}");
            let regions = classify_regions(&w, &spec, 1e-3).unwrap();
            assert_eq!(regions.len(), grid.num_faces());
            assert!(regions.iter().all(|r| matches!(r, Region::Coincidence | Region::Free)));
        }
    }
}
