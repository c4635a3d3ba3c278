//! Constraint violation, region classification, complementarity, the
//! variational residual against sampled feasible test functions, and the
//! estimate ledger.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::continuation::Trajectory;
use crate::error::{Error, Result};
use crate::grid::{face_gradient_magnitude_with, FaceStencil, Grid, ScalarField};
use crate::model::{sup_bound_m, BoundConstants, ProblemSpec};
use crate::parabolic::discrete_multiplier;
use crate::penalty::RegularizationParams;

/// `(max, mass)` of `(|grad u| - G(u))^+` over faces, mass weighted by face
/// measure.
pub fn constraint_violation(u: &ScalarField, spec: &ProblemSpec) -> Result<(f64, f64)> {
    let grid = u.grid;
    let mags = face_gradient_magnitude_with(&grid.face_stencils(), &u.values);
    let g = spec.g_on_faces(&u.values)?;
    let mut max: f64 = 0.0;
    let mut mass = 0.0;
    for ((m, g), mu) in mags.iter().zip(&g).zip(grid.face_measure()) {
        let v = (m - g).max(0.0);
        max = max.max(v);
        mass += mu * v;
    }
    Ok((max, mass))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    /// Constraint active: `G - |grad u| <= band`.
    Coincidence,
    Free,
}

pub fn classify_regions(u: &ScalarField, spec: &ProblemSpec, band: f64) -> Result<Vec<Region>> {
    if !(band > 0.0) {
        return Err(Error::InvalidParams(format!("band must be positive, got {band}")));
    }
    let grid = u.grid;
    let mags = face_gradient_magnitude_with(&grid.face_stencils(), &u.values);
    let g = spec.g_on_faces(&u.values)?;
    Ok(mags
        .iter()
        .zip(&g)
        .map(|(m, g)| {
            if g - m <= band {
                Region::Coincidence
            } else {
                Region::Free
            }
        })
        .collect())
}

/// Scales `v` by `min(1, min_f g_f / |grad v|_f)` so that it satisfies
/// `|grad v| <= g` on every face.
pub fn rescale_into(v: &ScalarField, target_g: &[f64], lambda_floor: f64) -> ScalarField {
    rescale_with(&v.grid.face_stencils(), v, target_g, lambda_floor)
}

fn rescale_with(
    stencils: &[FaceStencil],
    v: &ScalarField,
    target_g: &[f64],
    lambda_floor: f64,
) -> ScalarField {
    let mut beta: f64 = 1.0;
    for (s, g) in stencils.iter().zip(target_g) {
        let m = s.magnitude(&v.values);
        let g = g.max(lambda_floor);
        if m > g {
            beta = beta.min(g / (m + 1e-15));
        }
    }
    if beta >= 1.0 {
        return v.clone();
    }
    // guard against the last ulp pushing a face back over its threshold
    let beta = beta * (1.0 - 4.0 * f64::EPSILON);
    v.scaled(beta)
}

/// Random sums of 3 to 8 Gaussian bumps times the distance to the boundary.
pub fn test_functions(grid: &Grid, count: usize, seed: u64) -> Vec<ScalarField> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = grid.dim();
    let extent: Vec<f64> = (0..dim).map(|a| grid.hi(a) - grid.lo(a)).collect();
    (0..count)
        .map(|_| {
            let bumps = rng.gen_range(3..=8);
            let params: Vec<([f64; 2], f64, f64)> = (0..bumps)
                .map(|_| {
                    let mut c = [0.0; 2];
                    for a in 0..dim {
                        c[a] = rng.gen_range(grid.lo(a)..=grid.hi(a));
                    }
                    let scale = extent.iter().cloned().fold(f64::INFINITY, f64::min);
                    let width = rng.gen_range(0.05..=0.5) * scale;
                    let amp = rng.gen_range(-1.0..=1.0);
                    (c, width, amp)
                })
                .collect();
            let mut v = ScalarField::from_fn(*grid, |x, y| {
                let p = [x, y];
                let mut dist = f64::INFINITY;
                for a in 0..dim {
                    dist = dist.min(p[a] - grid.lo(a)).min(grid.hi(a) - p[a]);
                }
                let sum: f64 = params
                    .iter()
                    .map(|(c, w, amp)| {
                        let r2: f64 = (0..dim).map(|a| (p[a] - c[a]).powi(2)).sum();
                        amp * (-r2 / (w * w)).exp()
                    })
                    .sum();
                dist.max(0.0) * sum
            });
            v.pin_boundary();
            v
        })
        .collect()
}

/// Shared quadrature for the evolution and stationary residuals:
/// `sum m dudt (v - u) + sum_faces w Phi(u) . grad(v - u) - sum m f (v - u)`.
pub(crate) struct ResidualForms {
    node_weights: Vec<f64>,
    face_weights: Vec<f64>,
    face_inv_h: Vec<f64>,
    face_nodes: Vec<(usize, usize)>,
}

impl ResidualForms {
    pub fn new(grid: &Grid) -> Self {
        let nf = grid.num_faces();
        ResidualForms {
            node_weights: grid.node_weights(),
            face_weights: grid.face_weights(),
            face_inv_h: (0..nf).map(|f| 1.0 / grid.h(grid.face_axis(f))).collect(),
            face_nodes: (0..nf).map(|f| grid.face_nodes(f)).collect(),
        }
    }

    /// `phi_faces` is the normal flux component per face, `node_rate` is
    /// `dudt - f` per node.
    pub fn residual(&self, u: &[f64], v: &[f64], phi_faces: &[f64], node_rate: &[f64]) -> f64 {
        let mut r = 0.0;
        for k in 0..u.len() {
            r += self.node_weights[k] * node_rate[k] * (v[k] - u[k]);
        }
        for (f, &(a, b)) in self.face_nodes.iter().enumerate() {
            if phi_faces[f] == 0.0 {
                continue;
            }
            let d = ((v[b] - u[b]) - (v[a] - u[a])) * self.face_inv_h[f];
            r += self.face_weights[f] * phi_faces[f] * d;
        }
        r
    }
}

/// Normal flux component at face midpoints with `u` averaged.
pub(crate) fn flux_on_faces(spec: &ProblemSpec, u: &[f64], t: f64) -> Result<Vec<f64>> {
    let grid = &spec.grid;
    (0..grid.num_faces())
        .map(|f| {
            let axis = grid.face_axis(f);
            if let Some(c) = spec.phi[axis].as_constant() {
                return Ok(c);
            }
            let (a, b) = grid.face_nodes(f);
            let (x, y) = grid.face_midpoint(f);
            spec.eval_phi(axis, x, y, t, 0.5 * (u[a] + u[b]))
        })
        .collect()
}

/// Worst residual per snapshot and overall.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSummary {
    /// Snapshot indices evaluated (interior snapshots).
    pub indices: Vec<usize>,
    pub per_snapshot: Vec<f64>,
    /// Snapshots where `||du/dt||_1` jumps by more than 3x between the two
    /// adjacent intervals; the centered difference is unreliable there.
    pub flagged: Vec<usize>,
    pub min_all: f64,
    pub min_unflagged: f64,
}

fn interval_rate(traj: &Trajectory, i: usize) -> f64 {
    let a = &traj.snapshots[i];
    let b = &traj.snapshots[i + 1];
    let dt = traj.times[i + 1] - traj.times[i];
    let w = a.grid.node_weights();
    w.iter()
        .zip(a.values.iter().zip(&b.values))
        .map(|(w, (a, b))| w * (b - a).abs())
        .sum::<f64>()
        / dt
}

/// Minimum over interior snapshots and `n_tests` sampled feasible test
/// functions of the evolution residual. Nonnegative for exact solutions.
pub fn qvi_residual(
    traj: &Trajectory,
    spec: &ProblemSpec,
    n_tests: usize,
    seed: u64,
) -> Result<ResidualSummary> {
    let n = traj.snapshots.len();
    if n < 3 {
        return Err(Error::Diagnostics(format!(
            "residual needs at least 3 snapshots, got {n}"
        )));
    }
    let grid = spec.grid;
    let tests = test_functions(&grid, n_tests, seed);
    let stencils = grid.face_stencils();
    let forms = ResidualForms::new(&grid);
    let rates: Vec<f64> = (0..n - 1).map(|i| interval_rate(traj, i)).collect();
    let indices: Vec<usize> = (1..n - 1).collect();
    let per_snapshot: Vec<f64> = indices
        .par_iter()
        .map(|&i| -> Result<f64> {
            let u = &traj.snapshots[i];
            let t = traj.times[i];
            let (prev, next) = (&traj.snapshots[i - 1], &traj.snapshots[i + 1]);
            let span = traj.times[i + 1] - traj.times[i - 1];
            let mut rate = vec![0.0; u.values.len()];
            for k in 0..rate.len() {
                if grid.is_boundary(k) {
                    continue;
                }
                let (x, y) = grid.node_coords(k);
                rate[k] = (next.values[k] - prev.values[k]) / span - spec.eval_f(x, y, t, u.values[k])?;
            }
            let phi = flux_on_faces(spec, &u.values, t)?;
            let g = spec.g_on_faces(&u.values)?;
            let mut worst = f64::INFINITY;
            for v in &tests {
                let v = rescale_with(&stencils, v, &g, spec.lambda_min);
                worst = worst.min(forms.residual(&u.values, &v.values, &phi, &rate));
            }
            Ok(worst)
        })
        .collect::<Result<_>>()?;
    let flagged: Vec<usize> = indices
        .iter()
        .copied()
        .filter(|&i| {
            let (a, b) = (rates[i - 1], rates[i]);
            let (lo, hi) = (a.min(b), a.max(b));
            hi > 3.0 * lo && hi > 1e-300
        })
        .collect();
    let min_all = per_snapshot.iter().cloned().fold(f64::INFINITY, f64::min);
    let min_unflagged = indices
        .iter()
        .zip(&per_snapshot)
        .filter(|(i, _)| !flagged.contains(i))
        .map(|(_, r)| *r)
        .fold(f64::INFINITY, f64::min);
    Ok(ResidualSummary {
        indices,
        per_snapshot,
        flagged,
        min_all,
        min_unflagged,
    })
}

/// Residual for a specific test function at snapshot `index`; zero for `v = u`.
pub fn residual_at(traj: &Trajectory, spec: &ProblemSpec, index: usize, v: &ScalarField) -> Result<f64> {
    let n = traj.snapshots.len();
    if index == 0 || index + 1 >= n {
        return Err(Error::Diagnostics(format!(
            "snapshot {index} has no centered time difference"
        )));
    }
    let grid = spec.grid;
    let u = &traj.snapshots[index];
    let t = traj.times[index];
    let span = traj.times[index + 1] - traj.times[index - 1];
    let mut rate = vec![0.0; u.values.len()];
    for (k, r) in rate.iter_mut().enumerate() {
        if grid.is_boundary(k) {
            continue;
        }
        let (x, y) = grid.node_coords(k);
        *r = (traj.snapshots[index + 1].values[k] - traj.snapshots[index - 1].values[k]) / span
            - spec.eval_f(x, y, t, u.values[k])?;
    }
    let phi = flux_on_faces(spec, &u.values, t)?;
    Ok(ResidualForms::new(&grid).residual(&u.values, &v.values, &phi, &rate))
}

/// `sum mu (lambda_h - delta) (G - |grad u|)^+` over faces.
pub fn complementarity_residual(
    u: &ScalarField,
    spec: &ProblemSpec,
    reg: &RegularizationParams,
) -> Result<f64> {
    let grid = u.grid;
    let lam = discrete_multiplier(u, spec, reg)?;
    let mags = face_gradient_magnitude_with(&grid.face_stencils(), &u.values);
    let g = spec.g_on_faces(&u.values)?;
    Ok(lam
        .iter()
        .zip(mags.iter().zip(&g))
        .zip(grid.face_measure())
        .map(|((l, (m, g)), mu)| mu * (l - reg.delta) * (g - m).max(0.0))
        .sum())
}

/// `||grad u||_q` over faces with face-measure weights.
pub fn gradient_lq(u: &ScalarField, q: f64) -> f64 {
    let grid = u.grid;
    let mags = face_gradient_magnitude_with(&grid.face_stencils(), &u.values);
    mags.iter()
        .zip(grid.face_measure())
        .map(|(m, mu)| mu * m.powf(q))
        .sum::<f64>()
        .powf(1.0 / q)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportEntry {
    pub name: String,
    pub measured: f64,
    pub bound: Option<f64>,
    pub pass: bool,
    /// `estimate`, `structure`, or `plumbing`.
    pub tag: String,
    pub context: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DiagnosticsReport {
    pub entries: Vec<ReportEntry>,
}

impl DiagnosticsReport {
    pub fn get(&self, name: &str) -> Option<&ReportEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn all_pass(&self) -> bool {
        self.entries.iter().all(|e| e.pass)
    }

    /// Names of entries that differ from `other` (or exist in only one).
    pub fn differences(&self, other: &DiagnosticsReport) -> Vec<String> {
        let mut out = Vec::new();
        for e in &self.entries {
            match other.get(&e.name) {
                Some(o) if o.to_string() == e.to_string() => {}
                _ => out.push(e.name.clone()),
            }
        }
        for o in &other.entries {
            if self.get(&o.name).is_none() {
                out.push(o.name.clone());
            }
        }
        out
    }
}

impl fmt::Display for ReportEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let bound = match self.bound {
            Some(b) => format!("{b:e}"),
            None => "-".into(),
        };
        write!(
            f,
            "{},{:e},{},{},{},{}",
            self.name,
            self.measured,
            bound,
            if self.pass { "pass" } else { "fail" },
            self.tag,
            self.context
        )
    }
}

impl fmt::Display for DiagnosticsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            writeln!(f, "{e}")?;
        }
        Ok(())
    }
}

impl FromStr for ReportEntry {
    type Err = Error;

    fn from_str(line: &str) -> Result<Self> {
        let parts: Vec<&str> = line.splitn(6, ',').collect();
        let bad = || Error::Diagnostics(format!("malformed report line `{line}`"));
        if parts.len() != 6 {
            return Err(bad());
        }
        let measured = parts[1].parse().map_err(|_| bad())?;
        let bound = match parts[2] {
            "-" => None,
            s => Some(s.parse().map_err(|_| bad())?),
        };
        let pass = match parts[3] {
            "pass" => true,
            "fail" => false,
            _ => return Err(bad()),
        };
        Ok(ReportEntry {
            name: parts[0].to_string(),
            measured,
            bound,
            pass,
            tag: parts[4].to_string(),
            context: parts[5].to_string(),
        })
    }
}

impl FromStr for DiagnosticsReport {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let entries = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(str::parse)
            .collect::<Result<_>>()?;
        Ok(DiagnosticsReport { entries })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LedgerOptions {
    pub violation_target: f64,
    pub n_tests: usize,
    pub seed: u64,
}

impl Default for LedgerOptions {
    fn default() -> Self {
        LedgerOptions {
            violation_target: 1e-2,
            n_tests: 64,
            seed: 0,
        }
    }
}

/// Every monitored bound for one trajectory, deterministic in its inputs.
pub fn estimate_ledger(
    traj: &Trajectory,
    spec: &ProblemSpec,
    reg: &RegularizationParams,
    opts: &LedgerOptions,
) -> Result<DiagnosticsReport> {
    let grid = spec.grid;
    let omega = grid.measure();
    let context = format!(
        "eps={:e};delta={:e};grid={};t=[{:e}..{:e}]",
        reg.epsilon,
        reg.delta,
        grid_label(&grid),
        traj.times.first().copied().unwrap_or(0.0),
        traj.final_time()
    );
    let mut entries = Vec::new();
    let mut push = |name: &str, measured: f64, bound: Option<f64>, pass: bool, tag: &str, extra: String| {
        let ctx = if extra.is_empty() {
            context.clone()
        } else {
            format!("{context};{extra}")
        };
        entries.push(ReportEntry {
            name: name.to_string(),
            measured,
            bound,
            pass,
            tag: tag.to_string(),
            context: ctx,
        });
    };

    let max_u0 = traj.snapshots[0].max_abs();
    let m_proof = sup_bound_m(spec.c1, spec.c2, spec.horizon, max_u0, BoundConstants::Proof);
    let m_stmt = sup_bound_m(spec.c1, spec.c2, spec.horizon, max_u0, BoundConstants::Statement);
    let sup = traj.max_abs();
    push("sup_norm", sup, Some(m_proof), sup <= m_proof + 1e-3, "estimate", String::new());
    push(
        "sup_norm_statement_constants",
        sup,
        Some(m_stmt),
        sup <= m_stmt + 1e-3,
        "estimate",
        String::new(),
    );

    let nu_max = traj.series.iter().map(|r| r.dudt_l1).fold(0.0, f64::max);
    push("dudt_l1", nu_max, None, nu_max.is_finite(), "estimate", String::new());

    let pmass = traj.series.iter().map(|r| r.penalty_mass).fold(0.0, f64::max);
    let scaled = pmass * reg.delta * reg.delta;
    push(
        "penalty_mass",
        pmass,
        None,
        pmass.is_finite(),
        "estimate",
        format!("scaled={scaled:e}"),
    );

    for q in [2.0, 4.0] {
        let g = traj
            .snapshots
            .iter()
            .map(|s| gradient_lq(s, q))
            .fold(0.0, f64::max);
        push(
            &format!("grad_l{q}"),
            g,
            None,
            g.is_finite(),
            "estimate",
            format!("scaled={:e}", g * reg.delta * reg.delta),
        );
    }

    let last = traj.final_snapshot();
    let (vmax, vmass) = constraint_violation(last, spec)?;
    push(
        "violation_max",
        vmax,
        Some(opts.violation_target),
        vmax <= opts.violation_target,
        "structure",
        String::new(),
    );
    let mass_bound = 2.0 * omega * opts.violation_target;
    push("violation_mass", vmass, Some(mass_bound), vmass <= mass_bound, "structure", String::new());

    let comp = complementarity_residual(last, spec, reg)?;
    let comp_bound = 0.05 * reg.delta * omega;
    push("complementarity", comp, Some(comp_bound), comp <= comp_bound, "structure", String::new());

    if traj.snapshots.len() >= 3 {
        let res = qvi_residual(traj, spec, opts.n_tests, opts.seed)?;
        let f_sup = f_sup_norm(traj, spec)?;
        let bound = -0.05 * f_sup * omega;
        let measured = if res.min_unflagged.is_finite() {
            res.min_unflagged
        } else {
            res.min_all
        };
        push(
            "qvi_residual",
            measured,
            Some(bound),
            measured >= bound,
            "structure",
            format!(
                "tests={};seed={};min_all={:e};flagged={}",
                opts.n_tests,
                opts.seed,
                res.min_all,
                res.flagged.len()
            ),
        );
    }

    let l2q = traj.dudt_l2q();
    push("dudt_l2q", l2q, None, l2q.is_finite(), "plumbing", String::new());

    // sensitive to every stored value, so replays catch edited snapshots
    let mass: f64 = traj.snapshots.iter().map(|s| s.lp_norm(1.0)).sum();
    push(
        "snapshot_mass",
        mass,
        None,
        mass.is_finite(),
        "plumbing",
        format!("snapshots={}", traj.snapshots.len()),
    );
    Ok(DiagnosticsReport { entries })
}

fn grid_label(grid: &Grid) -> String {
    if grid.dim() == 1 {
        format!("{}", grid.nx())
    } else {
        format!("{}x{}", grid.nx(), grid.ny())
    }
}

/// `max |f(x, t, u)|` over the stored snapshots.
fn f_sup_norm(traj: &Trajectory, spec: &ProblemSpec) -> Result<f64> {
    let grid = spec.grid;
    let mut m: f64 = 0.0;
    for (s, &t) in traj.snapshots.iter().zip(&traj.times) {
        for k in 0..grid.num_nodes() {
            let (x, y) = grid.node_coords(k);
            m = m.max(spec.eval_f(x, y, t, s.values[k])?.abs());
        }
    }
    Ok(m)
}
