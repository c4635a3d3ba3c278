//! Long-time behaviour: integration to a stationary state, exponential decay
//! fits, L1 contraction of two trajectories and the Hölder convergence rate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::continuation::{
    solve_qvi, solve_vi, ContinuationRun, ContinuationSchedule, RunOptions, StopRule, Trajectory,
};
use crate::diagnostics::{flux_on_faces, rescale_into, test_functions, ResidualForms};
use crate::error::{Error, Result};
use crate::expr::{Env, Expression, Var};
use crate::grid::ScalarField;
use crate::model::ProblemSpec;
use crate::parabolic::StepControls;

/// Least-squares fit of `value ≈ amplitude * exp(-rate * t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayFit {
    pub window: (f64, f64),
    pub samples: Vec<(f64, f64)>,
    pub fitted_rate: f64,
    pub fitted_amplitude: f64,
    /// Root mean square of the log residuals.
    pub residual: f64,
}

impl DecayFit {
    /// Placeholder for an identically vanishing series.
    fn vanishing(window: (f64, f64)) -> Self {
        DecayFit {
            window,
            samples: Vec::new(),
            fitted_rate: f64::INFINITY,
            fitted_amplitude: 0.0,
            residual: 0.0,
        }
    }
}

/// Fits all given samples; values must be positive.
pub fn fit_exponential(samples: &[(f64, f64)]) -> Result<DecayFit> {
    if samples.len() < 2 {
        return Err(Error::Diagnostics(format!(
            "decay fit needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    if let Some(&(t, v)) = samples.iter().find(|(_, v)| !(*v > 0.0)) {
        return Err(Error::Diagnostics(format!("nonpositive value {v:e} at t = {t}")));
    }
    let n = samples.len() as f64;
    let mt = samples.iter().map(|s| s.0).sum::<f64>() / n;
    let my = samples.iter().map(|s| s.1.ln()).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for &(t, v) in samples {
        sxx += (t - mt) * (t - mt);
        sxy += (t - mt) * (v.ln() - my);
    }
    if sxx == 0.0 {
        return Err(Error::Diagnostics("decay fit window has zero width".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mt;
    let ss: f64 = samples
        .iter()
        .map(|&(t, v)| (v.ln() - intercept - slope * t).powi(2))
        .sum();
    Ok(DecayFit {
        window: (samples[0].0, samples[samples.len() - 1].0),
        samples: samples.to_vec(),
        fitted_rate: -slope,
        fitted_amplitude: intercept.exp(),
        residual: (ss / n).sqrt(),
    })
}

/// Default window: drop the first 20% of the sampled time span.
pub fn default_window(series: &[(f64, f64)]) -> Option<(f64, f64)> {
    let t0 = series.first()?.0;
    let t1 = series.last()?.0;
    Some((t0 + 0.2 * (t1 - t0), t1))
}

/// Exponential fit of a series on `window` (default: [`default_window`]).
/// The window ends before the first nonpositive value inside it.
pub fn decay_rate(series: &[(f64, f64)], window: Option<(f64, f64)>) -> Result<DecayFit> {
    let window = match window.or_else(|| default_window(series)) {
        Some(w) => w,
        None => return Err(Error::Diagnostics("empty series".into())),
    };
    if !(window.1 > window.0) {
        return Err(Error::Diagnostics(format!(
            "decay window [{}, {}] is empty",
            window.0, window.1
        )));
    }
    let samples: Vec<(f64, f64)> = series
        .iter()
        .copied()
        .filter(|&(t, _)| t >= window.0 && t <= window.1)
        .take_while(|&(_, v)| v > 0.0)
        .collect();
    fit_exponential(&samples)
}

/// `C_mu = 1 / (1 - e^{-mu}) + 1` from the weighted decay inequality.
pub fn decay_constant(mu: f64) -> f64 {
    1.0 / (1.0 - (-mu).exp()) + 1.0
}

/// Floor `((1 - alpha) / (n + 1)) nu` on the Hölder convergence rate.
pub fn holder_rate_floor(alpha: f64, dim: usize, nu: f64) -> f64 {
    (1.0 - alpha) / (dim as f64 + 1.0) * nu
}

#[derive(Debug, Clone)]
pub struct StationaryResult {
    pub u_inf: ScalarField,
    /// Fit of `nu(t) = ||du/dt||_1`; `None` when `nu` vanishes identically.
    pub nu_fit: Option<DecayFit>,
    pub stalled: bool,
    pub run: ContinuationRun,
}

impl StationaryResult {
    pub fn trajectory(&self) -> &Trajectory {
        &self.run.trajectory
    }
}

/// Runs the continuation on `[0, t_max]`, each stage stopping once
/// `nu < stall_tol |Omega|`, and returns the last state with a fit of `nu`.
pub fn solve_stationary(
    spec: &ProblemSpec,
    schedule: &ContinuationSchedule,
    ctl: &StepControls,
    t_max: f64,
    stall_tol: f64,
    snapshots: usize,
) -> Result<StationaryResult> {
    if let Some(axis) = spec.phi.iter().position(|p| p.references(Var::T)) {
        return Err(Error::InvalidProblem(format!(
            "stationary solve needs an autonomous flux; phi[{axis}] depends on t"
        )));
    }
    if spec.mu.is_none() && spec.lambda_max.is_none() && spec.g_depends_on_u() {
        return Err(Error::InvalidProblem(
            "stationary solve needs mu or lambda_max when G depends on u".into(),
        ));
    }
    if !(stall_tol > 0.0) {
        return Err(Error::InvalidParams(format!("stall_tol must be positive, got {stall_tol}")));
    }
    let mut long = spec.clone();
    long.horizon = t_max;
    let opts = RunOptions {
        snapshots,
        stop: StopRule::Stall {
            threshold: stall_tol * spec.grid.measure(),
        },
    };
    let run = solve_qvi(&long, schedule, ctl, &opts)?;
    let nu = run.trajectory.nu_series();
    let nu_fit = if nu.iter().all(|&(_, v)| v == 0.0) {
        None
    } else {
        Some(decay_rate(&nu, None)?)
    };
    Ok(StationaryResult {
        u_inf: run.trajectory.final_snapshot().clone(),
        nu_fit,
        stalled: run.stalled(),
        run,
    })
}

/// Minimum over `n_tests` feasible test functions of
/// `sum Phi(u) . grad(v - u) - sum f_inf(u) (v - u)`.
pub fn stationary_residual(u_inf: &ScalarField, spec: &ProblemSpec, n_tests: usize, seed: u64) -> Result<f64> {
    let grid = spec.grid;
    let u = &u_inf.values;
    let mut rate = vec![0.0; u.len()];
    for (k, r) in rate.iter_mut().enumerate() {
        if grid.is_boundary(k) {
            continue;
        }
        let (x, y) = grid.node_coords(k);
        *r = -spec.eval_f_stationary(x, y, u[k])?;
    }
    let phi = flux_on_faces(spec, u, spec.horizon)?;
    let g = spec.g_on_faces(u)?;
    let forms = ResidualForms::new(&grid);
    let mut worst = f64::INFINITY;
    for v in test_functions(&grid, n_tests, seed) {
        let v = rescale_into(&v, &g, spec.lambda_min);
        worst = worst.min(forms.residual(u, &v.values, &phi, &rate));
    }
    Ok(worst)
}

/// Same as [`stationary_residual`] for one given test function.
pub fn stationary_residual_for(u_inf: &ScalarField, spec: &ProblemSpec, v: &ScalarField) -> Result<f64> {
    let grid = spec.grid;
    let u = &u_inf.values;
    let mut rate = vec![0.0; u.len()];
    for (k, r) in rate.iter_mut().enumerate() {
        if !grid.is_boundary(k) {
            let (x, y) = grid.node_coords(k);
            *r = -spec.eval_f_stationary(x, y, u[k])?;
        }
    }
    let phi = flux_on_faces(spec, u, spec.horizon)?;
    Ok(ResidualForms::new(&grid).residual(u, &v.values, &phi, &rate))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContractionResult {
    /// `||u_a(t) - u_b(t)||_1`.
    pub measured: f64,
    /// `e^{L_f t} ||u_a(0) - u_b(0)||_1`.
    pub bound: f64,
    /// `e^{-mu t} ||u_a(0) - u_b(0)||_1` when `mu` is set.
    pub decay_bound: Option<f64>,
    pub initial_distance: f64,
    pub lipschitz: f64,
}

fn l1_distance(a: &ScalarField, b: &ScalarField) -> f64 {
    a.grid
        .node_weights()
        .iter()
        .zip(a.values.iter().zip(&b.values))
        .map(|(w, (x, y))| w * (x - y).abs())
        .sum()
}

/// Runs two variational solves that differ only in `u0` and compares their
/// L1 distance at `t_probe` with the Gronwall bound.
pub fn contraction_test(
    spec: &ProblemSpec,
    schedule: &ContinuationSchedule,
    ctl: &StepControls,
    u0_a: &Expression,
    u0_b: &Expression,
    t_probe: f64,
) -> Result<ContractionResult> {
    if spec.g_depends_on_u() {
        return Err(Error::InvalidProblem(
            "contraction test needs a threshold G independent of u".into(),
        ));
    }
    let make = |u0: &Expression| {
        let mut s = spec.clone();
        s.u0 = u0.clone();
        s.horizon = t_probe;
        s
    };
    let (spec_a, spec_b) = (make(u0_a), make(u0_b));
    let opts = RunOptions::default();
    let (ra, rb) = rayon::join(
        || solve_vi(&spec_a, schedule, ctl, &opts),
        || solve_vi(&spec_b, schedule, ctl, &opts),
    );
    let (ra, rb) = (ra?, rb?);
    let (ta, tb) = (&ra.trajectory, &rb.trajectory);
    let initial = l1_distance(&ta.snapshots[0], &tb.snapshots[0]);
    let measured = l1_distance(ta.final_snapshot(), tb.final_snapshot());
    let mut lip: f64 = 0.0;
    let grid = spec.grid;
    if spec.f.references(Var::U) {
        for traj in [ta, tb] {
            for (s, &t) in traj.snapshots.iter().zip(&traj.times) {
                for k in 0..grid.num_nodes() {
                    let (x, y) = grid.node_coords(k);
                    let d = spec
                        .f
                        .partial_u(&Env::new(x, y, t, s.values[k]), 1e-6)
                        .map_err(|e| Error::eval("d f / d u", e))?;
                    lip = lip.max(d.abs());
                }
            }
        }
    }
    Ok(ContractionResult {
        measured,
        bound: (lip * t_probe).exp() * initial,
        decay_bound: spec.mu.map(|mu| (-mu * t_probe).exp() * initial),
        initial_distance: initial,
        lipschitz: lip,
    })
}

/// `||e||_inf` plus, for `alpha > 0`, the largest `|e(p) - e(q)| / |p - q|^alpha`
/// over node pairs closer than `5 h`.
pub fn holder_distance(e: &ScalarField, alpha: f64) -> f64 {
    let grid = e.grid;
    let sup = e.max_abs();
    if alpha == 0.0 {
        return sup;
    }
    let (nx, ny) = (grid.nx(), grid.ny());
    let (hx, hy) = (grid.h(0), if grid.dim() == 2 { grid.h(1) } else { 1.0 });
    let reach = 5.0 * grid.h_max() * (1.0 + 1e-12);
    let mut offsets = Vec::new();
    let dj_max = if grid.dim() == 2 { 5 * ((grid.h_max() / hy).ceil() as i64) } else { 0 };
    let di_max = 5 * ((grid.h_max() / hx).ceil() as i64);
    for dj in 0..=dj_max {
        for di in -di_max..=di_max {
            if dj == 0 && di <= 0 {
                continue;
            }
            let d = ((di as f64 * hx).powi(2) + (dj as f64 * hy).powi(2)).sqrt();
            if d <= reach {
                offsets.push((di, dj, d.powf(alpha)));
            }
        }
    }
    let mut semi: f64 = 0.0;
    for j in 0..ny as i64 {
        for i in 0..nx as i64 {
            let a = e.values[grid.node_index(i as usize, j as usize)];
            for &(di, dj, w) in &offsets {
                let (i2, j2) = (i + di, j + dj);
                if i2 < 0 || i2 >= nx as i64 || j2 >= ny as i64 {
                    continue;
                }
                let b = e.values[grid.node_index(i2 as usize, j2 as usize)];
                semi = semi.max((a - b).abs() / w);
            }
        }
    }
    sup + semi
}

/// Exponential fit of `d_alpha(t)` between the snapshots and `u_inf`. Samples
/// below `1e-3 max d` are dropped as resolution floor; identically zero
/// distances give an infinite rate.
pub fn holder_convergence(traj: &Trajectory, u_inf: &ScalarField, alpha: f64) -> Result<DecayFit> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::InvalidParams(format!("alpha must lie in [0, 1), got {alpha}")));
    }
    let series: Vec<(f64, f64)> = traj
        .snapshots
        .iter()
        .zip(&traj.times)
        .map(|(s, &t)| Ok((t, holder_distance(&s.sub(u_inf)?, alpha))))
        .collect::<Result<_>>()?;
    let window = default_window(&series).unwrap_or((0.0, 0.0));
    let peak = series.iter().map(|s| s.1).fold(0.0, f64::max);
    if peak == 0.0 {
        return Ok(DecayFit::vanishing(window));
    }
    let samples: Vec<(f64, f64)> = series
        .into_iter()
        .filter(|&(t, v)| t >= window.0 && v > 1e-3 * peak)
        .collect();
    fit_exponential(&samples)
}

/// Sampled `xi_R = sup |d f / d t|` and `eta = sup |f - f_inf|` over
/// `|u| <= radius` (33-point lattice) and random `(x, t)`.
pub fn hypothesis_sups(spec: &ProblemSpec, radius: f64, samples: usize, seed: u64) -> Result<(f64, f64)> {
    let grid = spec.grid;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xi: f64 = 0.0;
    let mut eta: f64 = 0.0;
    let ht = 1e-6 * spec.horizon.max(1.0);
    for s in 0..samples {
        let x = rng.gen_range(grid.lo(0)..=grid.hi(0));
        let y = if grid.dim() == 2 {
            rng.gen_range(grid.lo(1)..=grid.hi(1))
        } else {
            0.0
        };
        let t = rng.gen_range(ht..=spec.horizon);
        let u = -radius + 2.0 * radius * (s % 33) as f64 / 32.0;
        if spec.f.references(Var::T) {
            let dt = (spec.eval_f(x, y, t + ht, u)? - spec.eval_f(x, y, t - ht, u)?) / (2.0 * ht);
            xi = xi.max(dt.abs());
        }
        if spec.f_inf.is_some() {
            eta = eta.max((spec.eval_f(x, y, t, u)? - spec.eval_f_stationary(x, y, u)?).abs());
        }
    }
    Ok((xi, eta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expression;
    use crate::grid::Grid;

    #[test]
    fn exact_exponential_rate() {
        let s: Vec<(f64, f64)> = (0..50)
            .map(|i| {
                let t = i as f64 * 0.1;
                (t, 3.0 * (-2.0 * t).exp())
            })
            .collect();
        let fit = decay_rate(&s, Some((0.0, 5.0))).unwrap();
        assert!((fit.fitted_rate - 2.0).abs() < 1e-6);
        assert!((fit.fitted_amplitude - 3.0).abs() < 1e-6);
    }

    #[test]
    fn modulated_exponential_rate() {
        let s: Vec<(f64, f64)> = (0..50)
            .map(|i| {
                let t = i as f64 * 0.1;
                (t, 3.0 * (-2.0 * t).exp() * (1.0 + 0.05 * (10.0 * t).sin()))
            })
            .collect();
        let fit = decay_rate(&s, Some((0.0, 5.0))).unwrap();
        assert!((1.8..=2.2).contains(&fit.fitted_rate));
    }

    #[test]
    fn window_shrinks_at_zero_and_rejects_empty() {
        let s = vec![(0.0, 1.0), (1.0, 0.5), (2.0, 0.25), (3.0, 0.0), (4.0, 0.1)];
        let fit = decay_rate(&s, Some((0.0, 4.0))).unwrap();
        assert_eq!(fit.window, (0.0, 2.0));
        assert!(decay_rate(&s, Some((3.0, 4.0))).is_err());
        assert!(decay_rate(&[], None).is_err());
    }

    #[test]
    fn constants() {
        assert!((decay_constant(1.0) - (1.0 / (1.0 - (-1f64).exp()) + 1.0)).abs() < 1e-15);
        assert_eq!(holder_rate_floor(0.0, 1, 1.0), 0.5);
        assert_eq!(holder_rate_floor(0.5, 1, 1.0), 0.25);
    }

    #[test]
    fn holder_distance_of_linear_error() {
        let grid = Grid::new_1d(0.0, 1.0, 11).unwrap();
        let e = ScalarField::from_fn(grid, |x, _| x);
        assert_eq!(holder_distance(&e, 0.0), 1.0);
        // |x - y| / |x - y|^0.5 peaks at the largest allowed separation 5h
        let d = holder_distance(&e, 0.5);
        assert!((d - (1.0 + 0.5f64.sqrt())).abs() < 1e-12);
    }

    #[test]
    fn frozen_trajectory_gives_infinite_rate() {
        let grid = Grid::new_1d(0.0, 1.0, 11).unwrap();
        let u = ScalarField::from_fn(grid, |x, _| x * (1.0 - x));
        let traj = Trajectory {
            times: vec![0.0, 1.0, 2.0],
            snapshots: vec![u.clone(), u.clone(), u.clone()],
            series: Vec::new(),
            reg_used: crate::penalty::RegularizationParams::new(0.1, 0.1).unwrap(),
        };
        let fit = holder_convergence(&traj, &u, 0.5).unwrap();
        assert!(fit.fitted_rate.is_infinite());
    }

    #[test]
    fn residual_is_zero_for_v_equal_u() {
        let grid = Grid::new_1d(-1.0, 1.0, 41).unwrap();
        let e = |s: &str| parse_expression(s).unwrap();
        let spec = ProblemSpec::new(grid, 1.0, e("1-0.1*u"), e("1"), e("0"));
        let u = ScalarField::from_fn(grid, |x, _| 1.0 - x.abs());
        assert_eq!(stationary_residual_for(&u, &spec, &u).unwrap(), 0.0);
        assert!(stationary_residual(&u, &spec, 64, 5).unwrap() >= -0.02 * 2.0);
        let half = u.scaled(0.5);
        assert!(stationary_residual_for(&half, &spec, &u).unwrap() < -0.1 * 2.0);
    }

    #[test]
    fn hypothesis_sups_for_autonomous_data() {
        let grid = Grid::new_1d(-1.0, 1.0, 11).unwrap();
        let e = |s: &str| parse_expression(s).unwrap();
        let mut spec = ProblemSpec::new(grid, 2.0, e("1-u"), e("1"), e("0"));
        assert_eq!(hypothesis_sups(&spec, 2.0, 100, 0).unwrap(), (0.0, 0.0));
        spec.f = e("1-u+exp(-t)");
        spec.f_inf = Some(e("1-u"));
        let (xi, eta) = hypothesis_sups(&spec, 2.0, 200, 0).unwrap();
        assert!(xi > 0.0 && xi <= 1.0 + 1e-6);
        assert!(eta > 0.0 && eta <= 1.0);
    }
}
