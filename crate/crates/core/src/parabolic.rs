//! Time stepper for the regularized problem
//!
//! ```text
//! w_t - div[delta k_eps(|grad w|^2 - G_eps(w)^2) grad w + Phi(w)] = f(w),  w = 0 on the boundary.
//! ```
//!
//! Convection (local Lax-Friedrichs) and reaction are explicit. The penalized
//! diffusion is implicit: with the explicit part folded into `b`, the step
//! `w` minimizes the convex energy
//!
//! ```text
//! J(w) = sum_nodes m (w - b)^2 / (2 dt) + delta sum_faces mu K_eps(|grad w|^2 - g^2) / 2
//! ```
//!
//! whose gradient is the implicit residual. It is solved with damped Newton
//! iterations on a banded Cholesky factorization. When `G` depends on `u`, the
//! face thresholds `g` are re-evaluated at every iterate (lagged), so the
//! iteration count reported per step covers both loops.

use crate::diagnostics::rescale_into;
use crate::error::{Error, Result};
use crate::expr::{Env, Var};
use crate::grid::{FaceStencil, Grid, ScalarField};
use crate::linalg::BandMatrix;
use crate::model::ProblemSpec;
use crate::penalty::{
    penalty_big_k, penalty_k, penalty_k_checked, penalty_k_prime, smooth_constraint,
    RegularizationParams,
};

const FD_STEP: f64 = 1e-6;
const ARMIJO: f64 = 1e-4;
const MIN_DAMPING: f64 = 1.0 / 1024.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepControls {
    pub dt_init: f64,
    pub cfl: f64,
    pub picard_tol: f64,
    pub picard_max: usize,
    pub dt_min: f64,
    pub dt_max: f64,
}

impl Default for StepControls {
    fn default() -> Self {
        StepControls {
            dt_init: 1e-3,
            cfl: 0.5,
            picard_tol: 1e-8,
            picard_max: 50,
            dt_min: 1e-9,
            dt_max: 0.05,
        }
    }
}

impl StepControls {
    pub fn validate(&self) -> Result<()> {
        if !(self.cfl > 0.0 && self.cfl <= 0.9) {
            return Err(Error::InvalidParams(format!(
                "cfl must lie in (0, 0.9], got {}",
                self.cfl
            )));
        }
        for (name, v) in [
            ("dt_init", self.dt_init),
            ("dt_min", self.dt_min),
            ("dt_max", self.dt_max),
            ("picard_tol", self.picard_tol),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParams(format!("{name} must be positive, got {v}")));
            }
        }
        if self.picard_max == 0 {
            return Err(Error::InvalidParams("picard_max must be at least 1".into()));
        }
        Ok(())
    }

    /// `dt_init` clamped into `[dt_min, max(dt_min, dt_max)]`.
    pub fn initial_dt(&self) -> f64 {
        self.dt_init.min(self.dt_max).max(self.dt_min)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepperState {
    pub t: f64,
    pub w: ScalarField,
    /// Proposed size of the next step.
    pub dt: f64,
    pub picard_iters: usize,
    pub clamp_events: usize,
}

/// Per-step time-series row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesRow {
    pub t: f64,
    pub dt: f64,
    pub picard_iters: usize,
    pub max_abs_w: f64,
    /// `sum m |w_{n+1} - w_n| / dt`.
    pub dudt_l1: f64,
    /// `sum mu k_eps` over faces.
    pub penalty_mass: f64,
    pub max_violation: f64,
    pub dudt_l2: f64,
}

/// Previous-stage trajectory used to predict the shape of the next step.
#[derive(Debug, Clone, Default)]
pub struct WarmStart {
    times: Vec<f64>,
    states: Vec<Vec<f64>>,
}

impl WarmStart {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, t: f64, w: &[f64]) {
        self.times.push(t);
        self.states.push(w.to_vec());
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    fn at(&self, t: f64, out: &mut [f64]) {
        let n = self.times.len();
        let idx = self.times.partition_point(|&s| s <= t);
        if idx == 0 {
            out.copy_from_slice(&self.states[0]);
        } else if idx >= n {
            out.copy_from_slice(&self.states[n - 1]);
        } else {
            let (t0, t1) = (self.times[idx - 1], self.times[idx]);
            let s = if t1 > t0 { (t - t0) / (t1 - t0) } else { 1.0 };
            for (o, (a, b)) in out
                .iter_mut()
                .zip(self.states[idx - 1].iter().zip(&self.states[idx]))
            {
                *o = a + s * (b - a);
            }
        }
    }

    /// `P(t1) - P(t0)` for the piecewise linear interpolant `P`.
    fn increment(&self, t0: f64, t1: f64) -> Vec<f64> {
        let n = self.states[0].len();
        let mut a = vec![0.0; n];
        let mut b = vec![0.0; n];
        self.at(t0, &mut a);
        self.at(t1, &mut b);
        b.iter().zip(&a).map(|(b, a)| b - a).collect()
    }
}

/// Face stencil restricted to interior nodes as `(node, normal coef,
/// transverse coef)`; boundary values are pinned to zero and drop out.
#[derive(Debug, Clone)]
struct FaceTerms {
    terms: Vec<(usize, f64, f64)>,
}

impl FaceTerms {
    fn build(stencil: &FaceStencil, boundary: &[bool]) -> Self {
        let mut terms: Vec<(usize, f64, f64)> = Vec::new();
        for &(k, c) in &stencil.normal {
            if !boundary[k] {
                terms.push((k, c, 0.0));
            }
        }
        for &(k, c) in &stencil.transverse {
            if boundary[k] {
                continue;
            }
            match terms.iter_mut().find(|e| e.0 == k) {
                Some(e) => e.2 += c,
                None => terms.push((k, 0.0, c)),
            }
        }
        FaceTerms { terms }
    }

    #[inline]
    fn diffs(&self, w: &[f64]) -> (f64, f64) {
        let mut a = 0.0;
        let mut c = 0.0;
        for &(k, n, t) in &self.terms {
            a += n * w[k];
            c += t * w[k];
        }
        (a, c)
    }
}

enum Attempt {
    Accepted { w: Vec<f64>, iters: usize },
    Rejected { reason: String, clamped: bool },
}

/// Stepper bound to one problem and one `(eps, delta)` pair.
pub struct Stepper<'a> {
    spec: &'a ProblemSpec,
    reg: RegularizationParams,
    ctl: StepControls,
    grid: Grid,
    faces: Vec<FaceTerms>,
    face_measure: Vec<f64>,
    node_weights: Vec<f64>,
    boundary: Vec<bool>,
    bandwidth: usize,
    /// Effective thresholds when `G` does not depend on `u`.
    fixed_g: Option<Vec<f64>>,
}

impl<'a> Stepper<'a> {
    pub fn new(spec: &'a ProblemSpec, reg: RegularizationParams, ctl: StepControls) -> Result<Self> {
        spec.check()?;
        reg.validate()?;
        ctl.validate()?;
        let grid = spec.grid;
        let boundary: Vec<bool> = (0..grid.num_nodes()).map(|k| grid.is_boundary(k)).collect();
        let faces = grid
            .face_stencils()
            .iter()
            .map(|s| FaceTerms::build(s, &boundary))
            .collect();
        let bandwidth = if grid.dim() == 1 { 1 } else { 2 * grid.nx() + 1 };
        let mut stepper = Stepper {
            spec,
            reg,
            ctl,
            grid,
            faces,
            face_measure: grid.face_measure(),
            node_weights: grid.node_weights(),
            boundary,
            bandwidth,
            fixed_g: None,
        };
        if !spec.g_depends_on_u() {
            let zeros = vec![0.0; grid.num_nodes()];
            stepper.fixed_g = Some(stepper.effective_g(&zeros)?);
        }
        Ok(stepper)
    }

    pub fn spec(&self) -> &ProblemSpec {
        self.spec
    }

    pub fn reg(&self) -> RegularizationParams {
        self.reg
    }

    pub fn controls(&self) -> &StepControls {
        &self.ctl
    }

    /// Sampled `u0`, pushed into its constraint set when sampling violates it
    /// by more than `1e-12`.
    pub fn initial_state(&self) -> Result<StepperState> {
        let mut u0 = self.spec.sample_u0()?;
        let g = self.spec.g_on_faces(&u0.values)?;
        let mags = self.magnitudes(&u0.values);
        let violation = mags
            .iter()
            .zip(&g)
            .map(|(m, g)| m - g)
            .fold(f64::NEG_INFINITY, f64::max);
        if violation > 1e-12 {
            u0 = rescale_into(&u0, &g, self.spec.lambda_min);
        }
        Ok(StepperState {
            t: 0.0,
            w: u0,
            dt: self.ctl.initial_dt(),
            picard_iters: 0,
            clamp_events: 0,
        })
    }

    fn magnitudes(&self, w: &[f64]) -> Vec<f64> {
        self.faces
            .iter()
            .map(|f| {
                let (a, c) = f.diffs(w);
                (a * a + c * c).sqrt()
            })
            .collect()
    }

    /// Smoothed thresholds `G_eps(w)` per face.
    fn effective_g(&self, w: &[f64]) -> Result<Vec<f64>> {
        if let Some(g) = &self.fixed_g {
            return Ok(g.clone());
        }
        let raw = self.spec.g_on_faces(w)?;
        Ok(smooth_constraint(&self.grid, &raw, &self.reg, self.spec.lambda_min))
    }

    /// Largest stable explicit step from convection speed and reaction
    /// stiffness; infinite when neither is present.
    pub fn explicit_limit(&self, t: f64, w: &[f64]) -> Result<f64> {
        let spec = self.spec;
        let mut inv = 0.0;
        for axis in 0..self.grid.dim() {
            if spec.phi[axis].as_constant().is_some() || !spec.phi[axis].references(Var::U) {
                continue;
            }
            let mut speed: f64 = 0.0;
            for k in 0..w.len() {
                let (x, y) = self.grid.node_coords(k);
                speed = speed.max(self.phi_speed(axis, x, y, t, w[k])?);
            }
            inv += speed / self.grid.h(axis);
        }
        let mut limit = if inv > 0.0 { self.ctl.cfl / inv } else { f64::INFINITY };
        if spec.f.references(Var::U) {
            let mut lip: f64 = 0.0;
            for k in 0..w.len() {
                if self.boundary[k] {
                    continue;
                }
                let (x, y) = self.grid.node_coords(k);
                let d = spec
                    .f
                    .partial_u(&Env::new(x, y, t, w[k]), FD_STEP)
                    .map_err(|e| Error::eval("d f / d u", e))?;
                lip = lip.max(d.abs());
            }
            if lip > 0.0 {
                limit = limit.min(0.5 / lip);
            }
        }
        Ok(limit)
    }

    /// `min(dt_max, cfl h / max_speed, 0.5 / L_f)`, never below `dt_min`.
    pub fn cfl_dt(&self, state: &StepperState) -> Result<f64> {
        let limit = self.explicit_limit(state.t, &state.w.values)?;
        Ok(self.ctl.dt_max.min(limit).max(self.ctl.dt_min))
    }

    fn phi_speed(&self, axis: usize, x: f64, y: f64, t: f64, u: f64) -> Result<f64> {
        self.spec.phi[axis]
            .partial_u(&Env::new(x, y, t, u), FD_STEP)
            .map(f64::abs)
            .map_err(|e| Error::eval(format!("d phi[{axis}] / d u"), e))
    }

    /// Explicit right-hand side `div_LLF Phi(w) + f(w)` at interior nodes.
    pub fn explicit_rate(&self, t: f64, w: &[f64]) -> Result<Vec<f64>> {
        let spec = self.spec;
        let grid = &self.grid;
        let mut rate = vec![0.0; w.len()];
        for axis in 0..grid.dim() {
            let phi = &spec.phi[axis];
            if phi.as_constant().is_some() {
                continue;
            }
            let mut node_phi = vec![0.0; w.len()];
            let mut node_speed = vec![0.0; w.len()];
            for k in 0..w.len() {
                let (x, y) = grid.node_coords(k);
                node_phi[k] = spec.eval_phi(axis, x, y, t, w[k])?;
                if phi.references(Var::U) {
                    node_speed[k] = self.phi_speed(axis, x, y, t, w[k])?;
                }
            }
            let inv_h = 1.0 / grid.h(axis);
            let (start, end) = if axis == 0 {
                (0, grid.num_x_faces())
            } else {
                (grid.num_x_faces(), grid.num_faces())
            };
            for f in start..end {
                let (a, b) = grid.face_nodes(f);
                let speed = node_speed[a].max(node_speed[b]);
                let flux = 0.5 * (node_phi[a] + node_phi[b]) + 0.5 * speed * (w[b] - w[a]);
                rate[a] += flux * inv_h;
                rate[b] -= flux * inv_h;
            }
        }
        if !spec.f.is_zero() {
            for k in 0..w.len() {
                if self.boundary[k] {
                    continue;
                }
                let (x, y) = grid.node_coords(k);
                rate[k] += spec.eval_f(x, y, t, w[k])?;
            }
        }
        for (k, r) in rate.iter_mut().enumerate() {
            if self.boundary[k] {
                *r = 0.0;
            }
        }
        Ok(rate)
    }

    /// Advances one accepted step without passing `t_stop`. Rejected attempts
    /// (iteration cap, penalty clamp, failed line search) halve the step.
    pub fn advance(
        &self,
        state: &StepperState,
        t_stop: f64,
        warm: Option<&WarmStart>,
    ) -> Result<(StepperState, SeriesRow)> {
        let ctl = &self.ctl;
        let limit = self.explicit_limit(state.t, &state.w.values)?;
        if limit < ctl.dt_min {
            return Err(Error::StiffnessCollapse {
                t: state.t,
                reason: format!(
                    "explicit stability limit {limit:e} is below dt_min {:e}",
                    ctl.dt_min
                ),
            });
        }
        let rate = self.explicit_rate(state.t, &state.w.values)?;
        let mut dt = state.dt.min(ctl.dt_max).min(limit).max(ctl.dt_min);
        let mut clamp_events = state.clamp_events;
        let mut use_warm = warm.is_some_and(|w| !w.is_empty());
        loop {
            let remaining = t_stop - state.t;
            let landing = remaining <= dt * (1.0 + 1e-9);
            let h = if landing { remaining } else { dt };
            let b: Vec<f64> = state
                .w
                .values
                .iter()
                .zip(&rate)
                .map(|(w, r)| w + h * r)
                .collect();
            let mut guess = state.w.values.clone();
            if use_warm {
                let inc = warm.expect("warm start").increment(state.t, state.t + h);
                let mut shifted = guess.clone();
                for (g, d) in shifted.iter_mut().zip(inc) {
                    *g += d;
                }
                // the predicted shape can be far off when the stage changes
                // the penalty strength; keep whichever start is cheaper
                let g = self.effective_g(&guess)?;
                if self.energy(&shifted, &b, h, &g) < self.energy(&guess, &b, h, &g) {
                    guess = shifted;
                }
            }
            match self.solve_implicit(&b, h, guess)? {
                Attempt::Accepted { w, iters } => {
                    let t_new = if landing { t_stop } else { state.t + h };
                    let grow = if iters <= 4 {
                        1.5
                    } else if 2 * iters > ctl.picard_max {
                        0.7
                    } else {
                        1.0
                    };
                    let next_dt = (dt * grow).min(ctl.dt_max).max(ctl.dt_min);
                    let w = ScalarField {
                        grid: self.grid,
                        values: w,
                    };
                    let row = self.series_row(&state.w.values, &w.values, t_new, h, iters)?;
                    let new_state = StepperState {
                        t: t_new,
                        w,
                        dt: next_dt,
                        picard_iters: iters,
                        clamp_events,
                    };
                    return Ok((new_state, row));
                }
                Attempt::Rejected { reason, clamped } => {
                    if clamped {
                        clamp_events += 1;
                    }
                    if use_warm {
                        use_warm = false;
                        continue;
                    }
                    dt = h * 0.5;
                    if dt < ctl.dt_min {
                        return Err(Error::StiffnessCollapse {
                            t: state.t,
                            reason: format!("step below dt_min after rejection: {reason}"),
                        });
                    }
                }
            }
        }
    }

    /// One step of size `state.dt` (or smaller, after rejections).
    pub fn step(&self, state: &StepperState) -> Result<StepperState> {
        let target = state.t + state.dt.min(self.ctl.dt_max).max(self.ctl.dt_min);
        Ok(self.advance(state, target, None)?.0)
    }

    fn energy(&self, w: &[f64], b: &[f64], dt: f64, g: &[f64]) -> f64 {
        let mut mass = 0.0;
        for ((m, w), b) in self.node_weights.iter().zip(w).zip(b) {
            mass += m * (w - b) * (w - b);
        }
        let eps = self.reg.epsilon;
        let mut pen = 0.0;
        for ((face, mu), g) in self.faces.iter().zip(&self.face_measure).zip(g) {
            let (a, c) = face.diffs(w);
            pen += mu * penalty_big_k(a * a + c * c - g * g, eps);
        }
        0.5 * mass / dt + 0.5 * self.reg.delta * pen
    }

    fn solve_implicit(&self, b: &[f64], dt: f64, mut w: Vec<f64>) -> Result<Attempt> {
        let n = w.len();
        let eps = self.reg.epsilon;
        let delta = self.reg.delta;
        for (k, v) in w.iter_mut().enumerate() {
            if self.boundary[k] {
                *v = 0.0;
            }
        }
        let mut mat = BandMatrix::zeros(n, self.bandwidth);
        let mut grad = vec![0.0; n];
        let mut gvec: Vec<f64> = Vec::with_capacity(16);
        for iter in 1..=self.ctl.picard_max {
            let g = self.effective_g(&w)?;
            mat.clear();
            for k in 0..n {
                if self.boundary[k] {
                    grad[k] = 0.0;
                } else {
                    let m = self.node_weights[k];
                    grad[k] = m * (w[k] - b[k]) / dt;
                    mat.add(k, k, m / dt);
                }
            }
            for ((face, mu), gf) in self.faces.iter().zip(&self.face_measure).zip(&g) {
                let (a, c) = face.diffs(&w);
                let s = a * a + c * c - gf * gf;
                let (k, clamped) = penalty_k_checked(s, eps);
                if clamped {
                    return Ok(Attempt::Rejected {
                        reason: format!("penalty clamp (s/eps = {:.3e})", s / eps),
                        clamped: true,
                    });
                }
                let kp = penalty_k_prime(s, eps);
                let scale = delta * mu;
                gvec.clear();
                for &(node, cn, ct) in &face.terms {
                    let gv = a * cn + c * ct;
                    gvec.push(gv);
                    grad[node] += scale * k * gv;
                }
                for (p, &(np, cnp, ctp)) in face.terms.iter().enumerate() {
                    for (q, &(nq, cnq, ctq)) in face.terms.iter().enumerate().take(p + 1) {
                        let v = k * (cnp * cnq + ctp * ctq) + 2.0 * kp * gvec[p] * gvec[q];
                        mat.add(np, nq, scale * v);
                    }
                }
            }
            for k in 0..n {
                if self.boundary[k] {
                    mat.set_identity_row(k);
                }
            }
            if let Err(err) = mat.factor() {
                return Ok(Attempt::Rejected {
                    reason: err.to_string(),
                    clamped: false,
                });
            }
            let mut d: Vec<f64> = grad.iter().map(|v| -v).collect();
            mat.solve(&mut d);
            let dmax = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if !dmax.is_finite() {
                return Ok(Attempt::Rejected {
                    reason: "non-finite Newton update".into(),
                    clamped: false,
                });
            }
            if dmax < self.ctl.picard_tol {
                for (w, d) in w.iter_mut().zip(&d) {
                    *w += d;
                }
                return Ok(Attempt::Accepted { w, iters: iter });
            }
            let slope: f64 = grad.iter().zip(&d).map(|(g, d)| g * d).sum();
            let j0 = self.energy(&w, b, dt, &g);
            let mut alpha = 1.0;
            let mut trial = vec![0.0; n];
            loop {
                for i in 0..n {
                    trial[i] = w[i] + alpha * d[i];
                }
                let j1 = self.energy(&trial, b, dt, &g);
                if j1 <= j0 + ARMIJO * alpha * slope + 1e-13 * j0.abs() {
                    break;
                }
                alpha *= 0.5;
                if alpha < MIN_DAMPING {
                    return Ok(Attempt::Rejected {
                        reason: "line search failed".into(),
                        clamped: false,
                    });
                }
            }
            std::mem::swap(&mut w, &mut trial);
            if alpha * dmax < self.ctl.picard_tol && !self.spec.g_depends_on_u() {
                return Ok(Attempt::Accepted { w, iters: iter });
            }
        }
        Ok(Attempt::Rejected {
            reason: format!("no convergence within {} iterations", self.ctl.picard_max),
            clamped: false,
        })
    }

    fn series_row(&self, old: &[f64], new: &[f64], t: f64, dt: f64, iters: usize) -> Result<SeriesRow> {
        let mut l1 = 0.0;
        let mut l2 = 0.0;
        for ((m, a), b) in self.node_weights.iter().zip(old).zip(new) {
            let r = (b - a) / dt;
            l1 += m * r.abs();
            l2 += m * r * r;
        }
        let faces = self.face_state(new)?;
        Ok(SeriesRow {
            t,
            dt,
            picard_iters: iters,
            max_abs_w: new.iter().fold(0.0f64, |m, v| m.max(v.abs())),
            dudt_l1: l1,
            penalty_mass: faces.penalty_mass,
            max_violation: faces.max_violation,
            dudt_l2: l2.sqrt(),
        })
    }

    /// Penalty mass and constraint violation of a state.
    pub fn face_state(&self, w: &[f64]) -> Result<FaceState> {
        let g_eff = self.effective_g(w)?;
        let g_raw = self.spec.g_on_faces(w)?;
        let mags = self.magnitudes(w);
        let eps = self.reg.epsilon;
        let mut penalty_mass = 0.0;
        let mut max_violation: f64 = 0.0;
        for (((m, ge), gr), mu) in mags.iter().zip(&g_eff).zip(&g_raw).zip(&self.face_measure) {
            penalty_mass += mu * penalty_k(m * m - ge * ge, eps);
            max_violation = max_violation.max(m - gr);
        }
        Ok(FaceState {
            penalty_mass,
            max_violation,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceState {
    pub penalty_mass: f64,
    pub max_violation: f64,
}

/// `delta k_eps(|grad w|^2 - G_eps(w)^2)` per face; never below `delta`.
pub fn discrete_multiplier(
    w: &ScalarField,
    spec: &ProblemSpec,
    reg: &RegularizationParams,
) -> Result<Vec<f64>> {
    let grid = w.grid;
    let raw = spec.g_on_faces(&w.values)?;
    let g = smooth_constraint(&grid, &raw, reg, spec.lambda_min);
    let stencils = grid.face_stencils();
    Ok(stencils
        .iter()
        .zip(&g)
        .map(|(s, g)| {
            let m = s.magnitude(&w.values);
            reg.delta * penalty_k(m * m - g * g, reg.epsilon)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expression;

    fn e(s: &str) -> crate::expr::Expression {
        parse_expression(s).unwrap()
    }

    fn sandpile(n: usize) -> ProblemSpec {
        let grid = Grid::new_1d(-1.0, 1.0, n).unwrap();
        ProblemSpec::new(grid, 1.0, e("1"), e("1"), e("0"))
    }

    fn run_to(stepper: &Stepper, t_end: f64) -> StepperState {
        let mut s = stepper.initial_state().unwrap();
        while s.t < t_end {
            s = stepper.advance(&s, t_end, None).unwrap().0;
        }
        s
    }

    #[test]
    fn cfl_examples() {
        let ctl = StepControls::default();
        let reg = RegularizationParams::new(0.05, 0.05).unwrap();
        let mut spec = sandpile(81);
        spec.f = e("0");
        let st = Stepper::new(&spec, reg, ctl).unwrap();
        let state = st.initial_state().unwrap();
        assert_eq!(st.cfl_dt(&state).unwrap(), ctl.dt_max);

        let mut spec = sandpile(81);
        spec.phi = vec![e("u^2/2")];
        let ctl_big = StepControls {
            dt_max: 1.0,
            ..ctl
        };
        let st = Stepper::new(&spec, reg, ctl_big).unwrap();
        let mut state = st.initial_state().unwrap();
        state.w = ScalarField::from_fn(spec.grid, |x, _| 1.0 - x.abs());
        assert!(st.cfl_dt(&state).unwrap() <= 0.0125 + 1e-9);

        let mut spec = sandpile(81);
        spec.f = e("1-10*u");
        let st = Stepper::new(&spec, reg, ctl_big).unwrap();
        let state = st.initial_state().unwrap();
        assert!(st.cfl_dt(&state).unwrap() <= 0.05 + 1e-9);
    }

    #[test]
    fn multiplier_examples() {
        let spec = sandpile(21);
        let reg = RegularizationParams::new(0.05, 0.2).unwrap();
        let w = ScalarField::zeros(spec.grid);
        let lam = discrete_multiplier(&w, &spec, &reg).unwrap();
        assert!(lam.iter().all(|&v| v == 0.2));

        // slope with |w'|^2 - 1 = 2 eps
        let slope = (1.0 + 2.0 * reg.epsilon).sqrt();
        let w = ScalarField::from_fn(spec.grid, |x, _| slope * (x + 1.0));
        let lam = discrete_multiplier(&w, &spec, &reg).unwrap();
        assert!((lam[3] - 0.2 * 2f64.exp()).abs() < 1e-9);
    }

    #[test]
    fn zero_forcing_keeps_zero_state() {
        let mut spec = sandpile(81);
        spec.f = e("0");
        let reg = RegularizationParams::new(0.05, 0.05).unwrap();
        let st = Stepper::new(&spec, reg, StepControls::default()).unwrap();
        let s0 = st.initial_state().unwrap();
        let s1 = st.step(&s0).unwrap();
        assert!(s1.w.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_forcing_moves_only_by_viscosity() {
        // With f = 0 the regularized step is heat flow with conductivity
        // delta, so u0 moves by at most delta dt |Lap_h u0|.
        let mut spec = sandpile(81);
        spec.f = e("0");
        spec.u0 = e("0.5*(1-x^2)");
        spec.g = e("2");
        let reg = RegularizationParams::new(0.05, 0.05).unwrap();
        let st = Stepper::new(&spec, reg, StepControls::default()).unwrap();
        let s0 = st.initial_state().unwrap();
        let s1 = st.step(&s0).unwrap();
        let dt = s1.t;
        let change = s1.w.sub(&s0.w).unwrap().max_abs();
        assert!(change <= reg.delta * dt * 1.0 * (1.0 + 1e-6), "{change}");
        assert!(change > 0.0);
    }

    #[test]
    fn sandpile_comparison_bound() {
        let spec = sandpile(81);
        let reg = RegularizationParams::new(0.05, 0.05).unwrap();
        let st = Stepper::new(&spec, reg, StepControls::default()).unwrap();
        let s = run_to(&st, 0.1);
        assert!((s.t - 0.1).abs() < 1e-15);
        assert!(s.w.values.iter().all(|&v| v >= -1e-12));
        assert!(s.w.max_abs() <= 0.1 + 1e-9);
    }

    #[test]
    fn heat_equation_convergence() {
        let grid = Grid::new_1d(0.0, 1.0, 101).unwrap();
        let mut spec = ProblemSpec::new(grid, 0.1, e("0"), e("10"), e("sin(3.141592653589793*x)"));
        spec.c1 = 0.0;
        let delta = 0.5;
        let reg = RegularizationParams::new(0.05, delta).unwrap();
        let ctl = StepControls {
            dt_init: 1e-4,
            dt_max: 1e-4,
            ..StepControls::default()
        };
        let st = Stepper::new(&spec, reg, ctl).unwrap();
        let s = run_to(&st, 0.1);
        let pi = std::f64::consts::PI;
        let decay = (-delta * pi * pi * 0.1).exp();
        let err = (0..grid.num_nodes())
            .map(|k| (s.w.values[k] - decay * (pi * grid.node_coords(k).0).sin()).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1e-3, "{err}");
    }

    #[test]
    fn quadratic_energy_decreases_in_pure_diffusion() {
        let grid = Grid::new_2d((0.0, 1.0), (0.0, 1.0), (17, 17)).unwrap();
        let spec = ProblemSpec::new(grid, 0.2, e("0"), e("10"), e("sin(3.14159*x)*sin(3.14159*y)"));
        let reg = RegularizationParams::new(0.05, 0.3).unwrap();
        let st = Stepper::new(&spec, reg, StepControls::default()).unwrap();
        let mut s = st.initial_state().unwrap();
        let energy = |w: &ScalarField| w.lp_norm(2.0).powi(2);
        let mut e_prev = energy(&s.w);
        while s.t < 0.2 {
            s = st.advance(&s, 0.2, None).unwrap().0;
            let e_now = energy(&s.w);
            assert!(e_now <= e_prev + 1e-12);
            e_prev = e_now;
        }
    }

    #[test]
    fn absurd_dt_min_collapses_with_burgers_flux() {
        let mut spec = sandpile(81);
        spec.phi = vec![e("u^2/2")];
        spec.f = e("1-u");
        let ctl = StepControls {
            dt_min: 1.0,
            ..StepControls::default()
        };
        let reg = RegularizationParams::new(0.05, 0.05).unwrap();
        let st = Stepper::new(&spec, reg, ctl).unwrap();
        let s0 = st.initial_state().unwrap();
        let err = st.advance(&s0, 1.0, None).unwrap_err();
        assert!(matches!(err, Error::StiffnessCollapse { .. }), "{err}");
    }

    #[test]
    fn boundary_stays_pinned_in_2d() {
        let grid = Grid::new_2d((0.0, 1.0), (0.0, 1.0), (9, 9)).unwrap();
        let spec = ProblemSpec::new(grid, 0.2, e("1"), e("1"), e("0"));
        let reg = RegularizationParams::new(0.05, 0.05).unwrap();
        let st = Stepper::new(&spec, reg, StepControls::default()).unwrap();
        let s = run_to(&st, 0.2);
        for k in 0..grid.num_nodes() {
            if grid.is_boundary(k) {
                assert_eq!(s.w.values[k], 0.0);
            }
        }
        assert!(s.w.max_abs() > 0.05);
    }
}
