//! Continuation in the regularization parameters: `eps -> 0` at fixed
//! `delta`, then `delta -> 0`, warm-starting each stage from the previous one.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::grid::ScalarField;
use crate::model::ProblemSpec;
use crate::parabolic::{SeriesRow, StepControls, Stepper, StepperState, WarmStart};
use crate::penalty::{GSmoothing, RegularizationParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuationSchedule {
    pub eps_init: f64,
    pub eps_factor: f64,
    pub eps_min: f64,
    pub delta_init: f64,
    pub delta_factor: f64,
    pub delta_min: f64,
    pub violation_target: f64,
    pub warm_start: bool,
    pub g_smoothing: GSmoothing,
}

impl Default for ContinuationSchedule {
    fn default() -> Self {
        ContinuationSchedule {
            eps_init: 0.1,
            eps_factor: 0.5,
            eps_min: 1e-3,
            delta_init: 0.1,
            delta_factor: 0.5,
            delta_min: 1e-3,
            violation_target: 1e-2,
            warm_start: true,
            g_smoothing: GSmoothing::None,
        }
    }
}

fn geometric(init: f64, factor: f64, min: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut v = init;
    while v > min * (1.0 + 1e-12) {
        out.push(v);
        v *= factor;
    }
    out.push(min);
    out
}

impl ContinuationSchedule {
    /// Schedule with a single `(eps, delta)` stage.
    pub fn fixed(epsilon: f64, delta: f64) -> Self {
        ContinuationSchedule {
            eps_init: epsilon,
            eps_min: epsilon,
            delta_init: delta,
            delta_min: delta,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        for (name, f) in [("eps_factor", self.eps_factor), ("delta_factor", self.delta_factor)] {
            if !(f > 0.0 && f < 1.0) {
                return bad(format!("{name} must lie in (0, 1), got {f}"));
            }
        }
        for (name, lo, hi) in [
            ("eps", self.eps_min, self.eps_init),
            ("delta", self.delta_min, self.delta_init),
        ] {
            if !(lo > 0.0 && hi < 1.0 && lo <= hi) {
                return bad(format!(
                    "{name} schedule needs 0 < {name}_min <= {name}_init < 1, got {lo} and {hi}"
                ));
            }
        }
        if !(self.violation_target > 0.0) {
            return bad(format!(
                "violation_target must be positive, got {}",
                self.violation_target
            ));
        }
        Ok(())
    }

    pub fn eps_values(&self) -> Vec<f64> {
        geometric(self.eps_init, self.eps_factor, self.eps_min)
    }

    pub fn delta_values(&self) -> Vec<f64> {
        geometric(self.delta_init, self.delta_factor, self.delta_min)
    }
}

/// When a stage stops integrating.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopRule {
    /// Run to the horizon.
    Horizon,
    /// Stop once `||du/dt||_1` drops below the threshold.
    Stall { threshold: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    /// Number of equispaced interior snapshot instants.
    pub snapshots: usize,
    pub stop: StopRule,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            snapshots: 50,
            stop: StopRule::Horizon,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub snapshots: Vec<ScalarField>,
    pub series: Vec<SeriesRow>,
    pub reg_used: RegularizationParams,
}

impl Trajectory {
    pub fn final_snapshot(&self) -> &ScalarField {
        self.snapshots.last().expect("trajectory has snapshots")
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("trajectory has snapshots")
    }

    /// Largest `|w|` seen in snapshots and per-step rows.
    pub fn max_abs(&self) -> f64 {
        let snaps = self.snapshots.iter().map(|s| s.max_abs()).fold(0.0, f64::max);
        self.series.iter().map(|r| r.max_abs_w).fold(snaps, f64::max)
    }

    /// `||dw/dt||_{L2(0,T; L2)}` from the per-step rows.
    pub fn dudt_l2q(&self) -> f64 {
        self.series
            .iter()
            .map(|r| r.dt * r.dudt_l2 * r.dudt_l2)
            .sum::<f64>()
            .sqrt()
    }

    /// `(t, ||dw/dt||_1)` per step.
    pub fn nu_series(&self) -> Vec<(f64, f64)> {
        self.series.iter().map(|r| (r.t, r.dudt_l1)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageRecord {
    pub epsilon: f64,
    pub delta: f64,
    pub final_violation: f64,
    pub steps: usize,
    pub first_iters: usize,
    pub mean_iters: f64,
    pub clamp_events: usize,
    pub t_end: f64,
    pub stalled: bool,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct ContinuationRun {
    pub trajectory: Trajectory,
    pub stages: Vec<StageRecord>,
    pub target_met: bool,
    pub final_violation: f64,
}

impl ContinuationRun {
    pub fn stalled(&self) -> bool {
        self.stages.last().is_some_and(|s| s.stalled)
    }

    /// Status line for reports; mirrors the CLI exit convention.
    pub fn status(&self) -> &'static str {
        if self.target_met {
            "ok"
        } else {
            "constraint saturation residual"
        }
    }
}

fn snapshot_times(horizon: f64, count: usize) -> Vec<f64> {
    let m = count + 1;
    (0..=m)
        .map(|i| if i == m { horizon } else { horizon * i as f64 / m as f64 })
        .collect()
}

/// Integrates `[0, T]` at one `(eps, delta)` from the sampled initial datum.
pub fn run_stage(
    spec: &ProblemSpec,
    reg: RegularizationParams,
    ctl: &StepControls,
    opts: &RunOptions,
    warm: Option<&WarmStart>,
) -> Result<(Trajectory, WarmStart, StageRecord)> {
    let started = Instant::now();
    let stepper = Stepper::new(spec, reg, *ctl)?;
    let mut state: StepperState = stepper.initial_state()?;
    let mut record = WarmStart::new();
    record.push(0.0, &state.w.values);
    let targets = snapshot_times(spec.horizon, opts.snapshots);
    let mut times = vec![0.0];
    let mut snapshots = vec![state.w.clone()];
    let mut series: Vec<SeriesRow> = Vec::new();
    let mut stalled = false;
    let mut next = 1;
    while next < targets.len() {
        let (new_state, row) = stepper.advance(&state, targets[next], warm)?;
        state = new_state;
        record.push(state.t, &state.w.values);
        series.push(row);
        if state.t == targets[next] {
            times.push(state.t);
            snapshots.push(state.w.clone());
            next += 1;
        }
        if let StopRule::Stall { threshold } = opts.stop {
            if row.dudt_l1 < threshold {
                stalled = true;
                if *times.last().unwrap() != state.t {
                    times.push(state.t);
                    snapshots.push(state.w.clone());
                }
                break;
            }
        }
    }
    let final_violation = stepper.face_state(&state.w.values)?.max_violation.max(0.0);
    let steps = series.len();
    let mean_iters = if steps > 0 {
        series.iter().map(|r| r.picard_iters as f64).sum::<f64>() / steps as f64
    } else {
        0.0
    };
    let stage = StageRecord {
        epsilon: reg.epsilon,
        delta: reg.delta,
        final_violation,
        steps,
        first_iters: series.first().map_or(0, |r| r.picard_iters),
        mean_iters,
        clamp_events: state.clamp_events,
        t_end: state.t,
        stalled,
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    let traj = Trajectory {
        times,
        snapshots,
        series,
        reg_used: reg,
    };
    Ok((traj, record, stage))
}

fn continuation(
    spec: &ProblemSpec,
    schedule: &ContinuationSchedule,
    ctl: &StepControls,
    opts: &RunOptions,
    deltas: &[f64],
) -> Result<ContinuationRun> {
    schedule.validate()?;
    let eps = schedule.eps_values();
    let mut ei = 0;
    let mut warm: Option<WarmStart> = None;
    let mut stages = Vec::new();
    let mut last: Option<Trajectory> = None;
    for (di, &delta) in deltas.iter().enumerate() {
        let final_delta = di + 1 == deltas.len();
        loop {
            let reg = RegularizationParams::new(eps[ei], delta)?.with_smoothing(schedule.g_smoothing);
            let warm_ref = if schedule.warm_start { warm.as_ref() } else { None };
            let (traj, record, stage) =
                run_stage(spec, reg, ctl, opts, warm_ref).map_err(|e| Error::Stage {
                    stage: format!(
                        "stage {} (eps = {:e}, delta = {:e})",
                        stages.len() + 1,
                        reg.epsilon,
                        reg.delta
                    ),
                    source: Box::new(e),
                })?;
            let met = stage.final_violation <= schedule.violation_target;
            stages.push(stage);
            warm = Some(record);
            last = Some(traj);
            if met && !final_delta {
                break;
            }
            if ei + 1 < eps.len() {
                ei += 1;
            } else {
                break;
            }
        }
    }
    let trajectory = last.expect("at least one stage");
    let final_violation = stages.last().map_or(0.0, |s| s.final_violation);
    Ok(ContinuationRun {
        trajectory,
        stages,
        target_met: final_violation <= schedule.violation_target,
        final_violation,
    })
}

/// Fixed `delta = delta_init`, sweeping `eps` down its schedule until the
/// violation target is met or `eps_min` is reached.
pub fn solve_parabolic_qvi(
    spec: &ProblemSpec,
    schedule: &ContinuationSchedule,
    ctl: &StepControls,
    opts: &RunOptions,
) -> Result<ContinuationRun> {
    let mut sched = *schedule;
    sched.delta_min = sched.delta_init;
    sched.validate()?;
    // A single delta is also the final one; stop at the target instead of
    // running the whole eps schedule.
    let eps = sched.eps_values();
    let mut warm: Option<WarmStart> = None;
    let mut stages = Vec::new();
    let mut last = None;
    for (i, &e) in eps.iter().enumerate() {
        let reg = RegularizationParams::new(e, sched.delta_init)?.with_smoothing(sched.g_smoothing);
        let warm_ref = if sched.warm_start { warm.as_ref() } else { None };
        let (traj, record, stage) =
            run_stage(spec, reg, ctl, opts, warm_ref).map_err(|err| Error::Stage {
                stage: format!("stage {} (eps = {e:e}, delta = {:e})", i + 1, reg.delta),
                source: Box::new(err),
            })?;
        let met = stage.final_violation <= sched.violation_target;
        stages.push(stage);
        warm = Some(record);
        last = Some(traj);
        if met {
            break;
        }
    }
    let final_violation = stages.last().map_or(0.0, |s: &StageRecord| s.final_violation);
    Ok(ContinuationRun {
        trajectory: last.expect("at least one stage"),
        stages,
        target_met: final_violation <= sched.violation_target,
        final_violation,
    })
}

/// Outer loop over `delta`; the `eps` position carries over between `delta`
/// values. Intermediate `delta` values stop at the violation target; the last
/// one runs the `eps` schedule to `eps_min`.
pub fn solve_qvi(
    spec: &ProblemSpec,
    schedule: &ContinuationSchedule,
    ctl: &StepControls,
    opts: &RunOptions,
) -> Result<ContinuationRun> {
    schedule.validate()?;
    continuation(spec, schedule, ctl, opts, &schedule.delta_values())
}

/// Same path as [`solve_qvi`] for thresholds independent of `u`.
pub fn solve_vi(
    spec: &ProblemSpec,
    schedule: &ContinuationSchedule,
    ctl: &StepControls,
    opts: &RunOptions,
) -> Result<ContinuationRun> {
    if spec.g_depends_on_u() {
        return Err(Error::InvalidProblem(
            "variational mode needs a threshold G independent of u".into(),
        ));
    }
    solve_qvi(spec, schedule, ctl, opts)
}
