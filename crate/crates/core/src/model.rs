//! Continuous problem data and numerical checks of the standing assumptions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::expr::{Env, Expression, Var};
use crate::grid::{face_gradient_magnitude_with, Grid, ScalarField};

/// Upper limit on the `|u|` range explored by [`validate`]; the a priori bound
/// grows like `e^{λT}` and quickly leaves any meaningful sampling range.
pub const VALIDATION_U_CAP: f64 = 1e6;

const U_LATTICE: usize = 33;

/// The evolution problem: flux `phi`, source `f`, threshold `g`, initial
/// datum `u0` on the grid's box, up to time `horizon`.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub grid: Grid,
    pub horizon: f64,
    /// One flux component per axis.
    pub phi: Vec<Expression>,
    pub f: Expression,
    pub g: Expression,
    pub u0: Expression,
    pub c1: f64,
    pub c2: f64,
    pub lambda_min: f64,
    pub lambda_max: Option<f64>,
    pub mu: Option<f64>,
    pub f_inf: Option<Expression>,
}

impl ProblemSpec {
    /// Problem with zero flux, unit growth constants and `lambda_min = 1`.
    pub fn new(grid: Grid, horizon: f64, f: Expression, g: Expression, u0: Expression) -> Self {
        ProblemSpec {
            grid,
            horizon,
            phi: vec![Expression::constant(0.0); grid.dim()],
            f,
            g,
            u0,
            c1: 1.0,
            c2: 1.0,
            lambda_min: 1.0,
            lambda_max: None,
            mu: None,
            f_inf: None,
        }
    }

    /// Structural checks that do not need sampling.
    pub fn check(&self) -> Result<()> {
        let dim = self.grid.dim();
        if self.phi.len() != dim {
            return Err(Error::InvalidProblem(format!(
                "flux needs {dim} component(s), got {}",
                self.phi.len()
            )));
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::InvalidProblem(format!(
                "horizon must be positive, got {}",
                self.horizon
            )));
        }
        if !(self.lambda_min > 0.0) {
            return Err(Error::InvalidProblem(format!(
                "lambda_min must be positive, got {}",
                self.lambda_min
            )));
        }
        if self.c1 < 0.0 || self.c2 < 0.0 {
            return Err(Error::InvalidProblem(
                "growth constants c1, c2 must be nonnegative".into(),
            ));
        }
        if let Some(lmax) = self.lambda_max {
            if lmax < self.lambda_min {
                return Err(Error::InvalidProblem(format!(
                    "lambda_max {lmax} is below lambda_min {}",
                    self.lambda_min
                )));
            }
        }
        if self.g.references(Var::T) {
            return Err(Error::InvalidProblem(
                "constraint G may not depend on t".into(),
            ));
        }
        if let Some(fi) = &self.f_inf {
            if fi.references(Var::T) {
                return Err(Error::InvalidProblem("f_inf may not depend on t".into()));
            }
        }
        if self.u0.references(Var::T) || self.u0.references(Var::U) {
            return Err(Error::InvalidProblem(
                "initial datum may only depend on x and y".into(),
            ));
        }
        if dim == 1 {
            let mut named: Vec<(&str, &Expression)> =
                vec![("f", &self.f), ("g", &self.g), ("u0", &self.u0), ("phi_x", &self.phi[0])];
            if let Some(fi) = &self.f_inf {
                named.push(("f_inf", fi));
            }
            for (name, e) in named {
                if e.references(Var::Y) {
                    return Err(Error::InvalidProblem(format!(
                        "{name} references y in a one-dimensional problem"
                    )));
                }
            }
        }
        Ok(())
    }

    /// True when the threshold depends on the solution (quasi-variational case).
    pub fn g_depends_on_u(&self) -> bool {
        self.g.references(Var::U)
    }

    pub fn eval_f(&self, x: f64, y: f64, t: f64, u: f64) -> Result<f64> {
        self.f
            .evaluate(&Env::new(x, y, t, u))
            .map_err(|e| Error::eval("f", e))
    }

    pub fn eval_g(&self, x: f64, y: f64, u: f64) -> Result<f64> {
        self.g
            .evaluate(&Env::new(x, y, 0.0, u))
            .map_err(|e| Error::eval("g", e))
    }

    pub fn eval_phi(&self, axis: usize, x: f64, y: f64, t: f64, u: f64) -> Result<f64> {
        self.phi[axis]
            .evaluate(&Env::new(x, y, t, u))
            .map_err(|e| Error::eval(format!("phi[{axis}]"), e))
    }

    /// Stationary source: `f_inf` when given, otherwise `f` at the horizon.
    pub fn eval_f_stationary(&self, x: f64, y: f64, u: f64) -> Result<f64> {
        match &self.f_inf {
            Some(fi) => fi
                .evaluate(&Env::new(x, y, self.horizon, u))
                .map_err(|e| Error::eval("f_inf", e)),
            None => self.eval_f(x, y, self.horizon, u),
        }
    }

    /// Nodal samples of `u0` with zero boundary values.
    pub fn sample_u0(&self) -> Result<ScalarField> {
        let mut values = Vec::with_capacity(self.grid.num_nodes());
        for k in 0..self.grid.num_nodes() {
            let (x, y) = self.grid.node_coords(k);
            let v = self
                .u0
                .evaluate(&Env::new(x, y, 0.0, 0.0))
                .map_err(|e| Error::eval("u0", e))?;
            values.push(v);
        }
        let mut field = ScalarField::from_values(self.grid, values)?;
        field.pin_boundary();
        Ok(field)
    }

    /// Threshold on every face with `u` averaged from the two adjacent nodes.
    pub fn g_on_faces(&self, u: &[f64]) -> Result<Vec<f64>> {
        let grid = &self.grid;
        let constant = self.g.as_constant();
        (0..grid.num_faces())
            .map(|f| {
                if let Some(c) = constant {
                    return Ok(c);
                }
                let (a, b) = grid.face_nodes(f);
                let (x, y) = grid.face_midpoint(f);
                self.eval_g(x, y, 0.5 * (u[a] + u[b]))
            })
            .collect()
    }

    /// The a priori sup bound `M` using the discretized initial datum.
    pub fn sup_bound_m(&self) -> Result<f64> {
        let m0 = self.sample_u0()?.max_abs();
        Ok(sup_bound_m(self.c1, self.c2, self.horizon, m0, BoundConstants::Proof))
    }
}

/// Which pair `(b1, b2)` enters the sup bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundConstants {
    /// `b1 = 2 c1 + 1`, `b2 = c2^2`: the values produced by the maximum
    /// principle argument. Default.
    Proof,
    /// `b1 = c1 + 1/2`, `b2 = c2^2 / 2`.
    Statement,
}

impl BoundConstants {
    pub fn b1_b2(self, c1: f64, c2: f64) -> (f64, f64) {
        match self {
            BoundConstants::Proof => (2.0 * c1 + 1.0, c2 * c2),
            BoundConstants::Statement => (c1 + 0.5, 0.5 * c2 * c2),
        }
    }
}

/// `inf_{λ > b1} e^{λT} max{m0 + 1, sqrt(b2 / (λ - b1))}`.
///
/// For `b2 = 0` the infimum is the limit `λ → b1`; otherwise a golden-section
/// search on the logarithm over `λ ∈ (b1 + 1e-6, b1 + 50]`.
pub fn sup_bound_m(c1: f64, c2: f64, horizon: f64, max_u0: f64, constants: BoundConstants) -> f64 {
    let (b1, b2) = constants.b1_b2(c1, c2);
    let floor = (max_u0 + 1.0).ln();
    if b2 == 0.0 {
        return (b1 * horizon + floor).exp();
    }
    let log_obj = |lambda: f64| lambda * horizon + floor.max(0.5 * (b2 / (lambda - b1)).ln());
    let (mut a, mut b) = (b1 + 1e-6, b1 + 50.0);
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (log_obj(c), log_obj(d));
    for _ in 0..200 {
        if b - a < 1e-13 * (1.0 + b.abs()) {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = log_obj(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = log_obj(d);
        }
    }
    let best = [a, b, c, d]
        .into_iter()
        .map(log_obj)
        .fold(f64::INFINITY, f64::min);
    best.exp()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Witness {
    pub x: f64,
    pub y: f64,
    pub t: f64,
    pub u: f64,
    /// Value of the checked quantity at the witness (e.g. `G`, `∂_u f`).
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionCheck {
    pub name: &'static str,
    pub passed: bool,
    /// Worst sample: the largest violation, or the closest approach when the
    /// check passes.
    pub worst: Option<Witness>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub checks: Vec<AssumptionCheck>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failures(&self) -> impl Iterator<Item = &AssumptionCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

struct Tracker {
    worst_margin: f64,
    witness: Option<Witness>,
}

impl Tracker {
    fn new() -> Self {
        Tracker {
            worst_margin: f64::NEG_INFINITY,
            witness: None,
        }
    }

    /// `margin > 0` means violation.
    fn record(&mut self, margin: f64, w: Witness) {
        if margin > self.worst_margin {
            self.worst_margin = margin;
            self.witness = Some(w);
        }
    }

    fn finish(self, name: &'static str, detail: String) -> AssumptionCheck {
        AssumptionCheck {
            name,
            passed: self.worst_margin <= 0.0,
            worst: self.witness,
            detail,
        }
    }
}

/// Divergence of the flux in `x` at fixed `u`, by centered differences.
fn flux_divergence(spec: &ProblemSpec, x: f64, y: f64, t: f64, u: f64) -> Result<f64> {
    let mut div = 0.0;
    for axis in 0..spec.grid.dim() {
        if spec.phi[axis].as_constant().is_some() {
            continue;
        }
        let h = 1e-5 * (spec.grid.hi(axis) - spec.grid.lo(axis));
        let (xp, yp, xm, ym) = if axis == 0 {
            (x + h, y, x - h, y)
        } else {
            (x, y + h, x, y - h)
        };
        div += (spec.eval_phi(axis, xp, yp, t, u)? - spec.eval_phi(axis, xm, ym, t, u)?) / (2.0 * h);
    }
    Ok(div)
}

/// Samples the standing assumptions on a randomized `(x, t)` set crossed with
/// a uniform `u` lattice on `|u| <= 2M` (capped at [`VALIDATION_U_CAP`]).
pub fn validate(spec: &ProblemSpec, samples: usize, seed: u64) -> Result<ValidationReport> {
    if samples < 100 {
        return Err(Error::InvalidParams(format!(
            "validation needs at least 100 samples, got {samples}"
        )));
    }
    spec.check()?;
    let grid = spec.grid;
    let m_hat = spec.sup_bound_m()?;
    let radius = (2.0 * m_hat).min(VALIDATION_U_CAP);
    let lattice: Vec<f64> = (0..U_LATTICE)
        .map(|i| -radius + 2.0 * radius * i as f64 / (U_LATTICE - 1) as f64)
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut growth = Tracker::new();
    let mut lower = Tracker::new();
    let mut upper = Tracker::new();
    let mut decrease = Tracker::new();
    let fd_h = 1e-4;

    for s in 0..samples {
        let x = rng.gen_range(grid.lo(0)..=grid.hi(0));
        let y = if grid.dim() == 2 {
            rng.gen_range(grid.lo(1)..=grid.hi(1))
        } else {
            0.0
        };
        let t = rng.gen_range(0.0..=spec.horizon);
        let u = lattice[s % U_LATTICE];
        let w = |value| Witness { x, y, t, u, value };

        let lhs = (flux_divergence(spec, x, y, t, u)
            .map_err(|e| assumption_err("linear growth", e))?
            + spec.eval_f(x, y, t, u).map_err(|e| assumption_err("linear growth", e))?)
        .abs();
        let rhs = spec.c1 * u.abs() + spec.c2;
        growth.record(lhs - rhs, w(lhs));

        let g = spec
            .eval_g(x, y, u)
            .map_err(|e| assumption_err("threshold lower bound", e))?;
        lower.record(spec.lambda_min - g, w(g));
        if let Some(lmax) = spec.lambda_max {
            upper.record(g - lmax, w(g));
        }
        if let Some(mu) = spec.mu {
            let d = spec
                .f
                .partial_u(&Env::new(x, y, t, u), fd_h)
                .map_err(|e| assumption_err("strict decrease", Error::eval("f", e)))?;
            decrease.record(d + 0.5 * mu, w(d));
        }
    }

    let mut checks = vec![
        growth.finish(
            "linear growth",
            format!("|div phi + f| <= {} |u| + {}", spec.c1, spec.c2),
        ),
        lower.finish("threshold lower bound", format!("G >= {}", spec.lambda_min)),
    ];
    if let Some(lmax) = spec.lambda_max {
        checks.push(upper.finish("threshold upper bound", format!("G <= {lmax}")));
    }
    if let Some(mu) = spec.mu {
        checks.push(decrease.finish(
            "strict decrease",
            format!("d f / d u <= -{}", 0.5 * mu),
        ));
    }
    checks.push(check_initial_datum(spec)?);
    checks.push(check_sub_super(spec, radius, &mut rng)?);
    Ok(ValidationReport { checks })
}

fn assumption_err(name: &str, e: Error) -> Error {
    Error::InvalidProblem(format!("assumption {name}: {e}"))
}

/// `u0` must vanish on the boundary and satisfy `|∇u0| <= G(u0)` on faces.
fn check_initial_datum(spec: &ProblemSpec) -> Result<AssumptionCheck> {
    const TOL: f64 = 1e-9;
    let grid = spec.grid;
    let mut tracker = Tracker::new();
    let mut boundary_ok = true;
    let mut raw = Vec::with_capacity(grid.num_nodes());
    for k in 0..grid.num_nodes() {
        let (x, y) = grid.node_coords(k);
        let v = spec
            .u0
            .evaluate(&Env::new(x, y, 0.0, 0.0))
            .map_err(|e| assumption_err("initial datum", Error::eval("u0", e)))?;
        if grid.is_boundary(k) && v.abs() > TOL {
            boundary_ok = false;
        }
        raw.push(v);
    }
    let stencils = grid.face_stencils();
    let mags = face_gradient_magnitude_with(&stencils, &raw);
    let g = spec.g_on_faces(&raw)?;
    for (f, (m, gv)) in mags.iter().zip(&g).enumerate() {
        let (x, y) = grid.face_midpoint(f);
        let (a, b) = grid.face_nodes(f);
        tracker.record(
            m - gv - TOL,
            Witness {
                x,
                y,
                t: 0.0,
                u: 0.5 * (raw[a] + raw[b]),
                value: *m,
            },
        );
    }
    let mut check = tracker.finish(
        "initial datum",
        "u0 = 0 on the boundary and |grad u0| <= G(u0) on faces".into(),
    );
    check.passed &= boundary_ok;
    Ok(check)
}

/// Sign conditions of the sub/supersolution alternative at `u = ±R`.
fn check_sub_super(spec: &ProblemSpec, radius: f64, rng: &mut ChaCha8Rng) -> Result<AssumptionCheck> {
    let grid = spec.grid;
    let mut tracker = Tracker::new();
    for _ in 0..64 {
        let x = rng.gen_range(grid.lo(0)..=grid.hi(0));
        let y = if grid.dim() == 2 {
            rng.gen_range(grid.lo(1)..=grid.hi(1))
        } else {
            0.0
        };
        let t = rng.gen_range(0.0..=spec.horizon);
        for (u, sign) in [(radius, 1.0), (-radius, -1.0)] {
            let v = flux_divergence(spec, x, y, t, u)? + spec.eval_f(x, y, t, u)?;
            tracker.record(sign * v, Witness { x, y, t, u, value: v });
        }
    }
    Ok(tracker.finish(
        "sub/supersolution at +-R",
        format!("div phi + f <= 0 at u = {radius:e} and >= 0 at u = -{radius:e}"),
    ))
}
