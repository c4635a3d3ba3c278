//! Subcommands. Each returns the process exit code: 0 on success, 1 on a
//! hard failure, 2 when the run finished but missed the violation target.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use gradqvi_core::asymptotic::{self, holder_convergence, solve_stationary, stationary_residual};
use gradqvi_core::continuation::{solve_qvi, solve_vi, ContinuationRun, Trajectory};
use gradqvi_core::diagnostics::{estimate_ledger, DiagnosticsReport, LedgerOptions};
use gradqvi_core::expr::Env;
use gradqvi_core::penalty::RegularizationParams;
use gradqvi_core::{parse_expression, ProblemSpec};
use rayon::prelude::*;
use toml::Value;

use crate::config::RunConfig;
use crate::manifest::RunManifest;
use crate::output::{self, write_atomic, RunFiles};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_TARGET_MISSED: i32 = 2;

/// Test functions per snapshot in the QVI residual.
pub const RESIDUAL_TESTS: usize = 64;

fn exit_for(run: &ContinuationRun) -> i32 {
    if run.target_met {
        EXIT_OK
    } else {
        EXIT_TARGET_MISSED
    }
}

fn ledger(traj: &Trajectory, spec: &ProblemSpec, cfg: &RunConfig) -> Result<DiagnosticsReport> {
    let opts = LedgerOptions {
        violation_target: cfg.continuation.violation_target,
        n_tests: RESIDUAL_TESTS,
        seed: cfg.output.seed,
    };
    Ok(estimate_ledger(traj, spec, &traj.reg_used, &opts)?)
}

fn write_manifest(dir: &Path, files: &RunFiles, manifest: &RunManifest) -> Result<()> {
    write_atomic(&dir.join(&files.manifest), &manifest.to_toml())
        .with_context(|| format!("writing {}", files.manifest))
}

/// Result of one `run`, also used by `sweep` to build its table.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub manifest: RunManifest,
    pub wall_seconds: f64,
}

/// Solves the configured problem (QVI or VI depending on whether `g` reads
/// `u`) and writes snapshots, series and manifest into `dir`.
pub fn cmd_run(cfg: &RunConfig, dir: &Path) -> Result<RunOutcome> {
    let started = Instant::now();
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let files = RunFiles::new(&cfg.output.prefix);
    let spec = cfg.problem()?;
    let mut manifest = RunManifest::new("run", cfg);
    let solve = if cfg.is_qvi() { solve_qvi } else { solve_vi };
    let result = solve(&spec, &cfg.schedule(), &cfg.controls(), &cfg.run_options());
    let exit_code = match result {
        Err(err) => {
            manifest.status = "hard failure".into();
            manifest.error = Some(err.to_string());
            EXIT_FAILURE
        }
        Ok(run) => {
            output::write_trajectory(dir, &files, &run.trajectory, &spec)?;
            manifest.files = vec![
                ("snapshots".into(), files.snapshots.clone()),
                ("series".into(), files.series.clone()),
            ];
            manifest.report = Some(ledger(&run.trajectory, &spec, cfg)?);
            manifest.report_tests = RESIDUAL_TESTS;
            manifest.status = run.status().into();
            manifest.stages = run.stages.clone();
            exit_for(&run)
        }
    };
    manifest.exit_code = exit_code;
    let wall_seconds = started.elapsed().as_secs_f64();
    manifest
        .timings
        .insert("total_seconds".into(), Value::Float(wall_seconds));
    write_manifest(dir, &files, &manifest)?;
    Ok(RunOutcome {
        exit_code,
        manifest,
        wall_seconds,
    })
}

/// Parameters `sweep` can vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    /// Fixed viscosity: `delta_init = delta_min = value`.
    Delta,
    EpsMin,
    N,
    DtInit,
}

impl std::str::FromStr for SweepAxis {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "delta" | "delta_init" => Ok(SweepAxis::Delta),
            "eps_min" => Ok(SweepAxis::EpsMin),
            "n" => Ok(SweepAxis::N),
            "dt_init" => Ok(SweepAxis::DtInit),
            _ => bail!("unknown sweep axis `{s}` (expected delta, eps_min, n or dt_init)"),
        }
    }
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Delta => "delta",
            SweepAxis::EpsMin => "eps_min",
            SweepAxis::N => "n",
            SweepAxis::DtInit => "dt_init",
        }
    }

    fn apply(self, cfg: &mut RunConfig, value: f64) -> Result<()> {
        match self {
            SweepAxis::Delta => {
                cfg.continuation.delta_init = value;
                cfg.continuation.delta_min = value;
            }
            SweepAxis::EpsMin => {
                cfg.continuation.eps_min = value;
                cfg.continuation.eps_init = cfg.continuation.eps_init.max(value);
            }
            SweepAxis::N => {
                if !(value >= 3.0 && value.fract() == 0.0) {
                    bail!("grid size must be an integer >= 3, got {value}");
                }
                cfg.domain.n = vec![value as usize; cfg.domain.dim];
            }
            SweepAxis::DtInit => cfg.solver.dt_init = value,
        }
        let text = cfg.to_canonical();
        *cfg = RunConfig::from_toml(&text)?;
        Ok(())
    }
}

/// One row of the sweep table.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub exit_code: i32,
    pub delta: f64,
    pub penalty_mass: f64,
    pub grad_l2: f64,
    pub grad_l4: f64,
    pub violation: f64,
    pub wall_seconds: f64,
}

impl SweepRow {
    pub fn penalty_mass_scaled(&self) -> f64 {
        self.penalty_mass * self.delta * self.delta
    }

    pub fn grad_scaled(&self, q: u32) -> f64 {
        let g = if q == 2 { self.grad_l2 } else { self.grad_l4 };
        g * self.delta * self.delta
    }
}

pub const SWEEP_HEADER: &str =
    "value,exit_code,delta,penalty_mass,penalty_mass_scaled,grad_l2,grad_l4,violation,wall_seconds";

fn sweep_row(value: f64, outcome: &RunOutcome) -> SweepRow {
    let report = outcome.manifest.report.as_ref();
    let get = |name: &str| report.and_then(|r| r.get(name)).map_or(f64::NAN, |e| e.measured);
    SweepRow {
        value,
        exit_code: outcome.exit_code,
        delta: outcome.manifest.stages.last().map_or(f64::NAN, |s| s.delta),
        penalty_mass: get("penalty_mass"),
        grad_l2: get("grad_l2"),
        grad_l4: get("grad_l4"),
        violation: get("violation_max"),
        wall_seconds: outcome.wall_seconds,
    }
}

pub fn sweep_table(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{:e},{},{:e},{:e},{:e},{:e},{:e},{:e},{:.3}",
            r.value,
            r.exit_code,
            r.delta,
            r.penalty_mass,
            r.penalty_mass_scaled(),
            r.grad_l2,
            r.grad_l4,
            r.violation,
            r.wall_seconds
        );
    }
    out
}

/// `max / min` of the finite positive entries.
pub fn spread(values: impl IntoIterator<Item = f64>) -> f64 {
    let (lo, hi) = values
        .into_iter()
        .filter(|v| v.is_finite() && *v > 0.0)
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if hi == 0.0 {
        f64::NAN
    } else {
        hi / lo
    }
}

/// Runs the config once per value in parallel, each in its own
/// subdirectory, then writes the combined table. A failing child marks the
/// sweep as failed but the remaining points still run.
pub fn cmd_sweep(cfg: &RunConfig, axis: SweepAxis, values: &[f64], dir: &Path) -> Result<(i32, Vec<SweepRow>)> {
    if values.is_empty() {
        bail!("sweep needs at least one value");
    }
    let children: Vec<(f64, RunConfig, PathBuf)> = values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let mut child = cfg.clone();
            axis.apply(&mut child, v)
                .with_context(|| format!("sweep value {v}"))?;
            let sub = dir.join(format!("{}_{}_{i:02}", cfg.output.prefix, axis.name()));
            Ok((v, child, sub))
        })
        .collect::<Result<_>>()?;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let rows: Vec<SweepRow> = children
        .par_iter()
        .map(|(v, child, sub)| match cmd_run(child, sub) {
            Ok(outcome) => sweep_row(*v, &outcome),
            Err(err) => {
                eprintln!("sweep value {v}: {err:#}");
                SweepRow {
                    value: *v,
                    exit_code: EXIT_FAILURE,
                    delta: f64::NAN,
                    penalty_mass: f64::NAN,
                    grad_l2: f64::NAN,
                    grad_l4: f64::NAN,
                    violation: f64::NAN,
                    wall_seconds: 0.0,
                }
            }
        })
        .collect();
    let table_path = dir.join(format!("{}.sweep.csv", cfg.output.prefix));
    write_atomic(&table_path, &sweep_table(&rows)).with_context(|| format!("writing {}", table_path.display()))?;
    let code = if rows.iter().any(|r| r.exit_code == EXIT_FAILURE) {
        EXIT_FAILURE
    } else if rows.iter().any(|r| r.exit_code == EXIT_TARGET_MISSED) {
        EXIT_TARGET_MISSED
    } else {
        EXIT_OK
    };
    Ok((code, rows))
}

/// Long-time solve toward the stationary problem plus residual and decay
/// fits.
pub fn cmd_steady(cfg: &RunConfig, dir: &Path) -> Result<(i32, RunManifest)> {
    let started = Instant::now();
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let files = RunFiles::new(&cfg.output.prefix);
    let field_file = format!("{}.u_inf.csv", cfg.output.prefix);
    let mut spec = cfg.problem()?;
    spec.horizon = cfg.asymptotic.t_max;
    let mut manifest = RunManifest::new("steady", cfg);
    let a = &cfg.asymptotic;
    let result = solve_stationary(
        &spec,
        &cfg.schedule(),
        &cfg.controls(),
        a.t_max,
        a.stall_tol,
        cfg.solver.snapshots,
    );
    let code = match result {
        Err(err) => {
            manifest.status = "hard failure".into();
            manifest.error = Some(err.to_string());
            EXIT_FAILURE
        }
        Ok(res) => {
            let traj = res.trajectory();
            output::write_trajectory(dir, &files, traj, &spec)?;
            write_atomic(&dir.join(&field_file), &output::field_csv(&res.u_inf))
                .with_context(|| format!("writing {field_file}"))?;
            manifest.files = vec![
                ("snapshots".into(), files.snapshots.clone()),
                ("series".into(), files.series.clone()),
                ("u_inf".into(), field_file.clone()),
            ];
            manifest.report = Some(ledger(traj, &spec, cfg)?);
            manifest.report_tests = RESIDUAL_TESTS;
            manifest.stages = res.run.stages.clone();
            manifest.status = res.run.status().into();

            let fits = &mut manifest.fits;
            fits.insert("stalled".into(), Value::Boolean(res.stalled));
            let r = stationary_residual(&res.u_inf, &spec, RESIDUAL_TESTS, cfg.output.seed)?;
            fits.insert("stationary_residual".into(), Value::Float(r));
            match &res.nu_fit {
                Some(fit) => {
                    fits.insert("nu_rate".into(), Value::Float(fit.fitted_rate));
                    fits.insert("nu_amplitude".into(), Value::Float(fit.fitted_amplitude));
                    fits.insert(
                        "nu_window".into(),
                        Value::Array(vec![Value::Float(fit.window.0), Value::Float(fit.window.1)]),
                    );
                }
                None => {
                    fits.insert("nu_rate".into(), Value::String("nu vanishes identically".into()));
                }
            }
            if let Some(mu) = spec.mu {
                fits.insert("decay_constant".into(), Value::Float(asymptotic::decay_constant(mu)));
            }
            for &alpha in &a.alpha {
                let key = format!("holder_rate_alpha_{alpha}");
                let v = match holder_convergence(traj, &res.u_inf, alpha) {
                    Ok(fit) => Value::Float(fit.fitted_rate),
                    Err(err) => Value::String(err.to_string()),
                };
                fits.insert(key, v);
                if let Some(nu) = res.nu_fit.as_ref().map(|f| f.fitted_rate) {
                    let floor = asymptotic::holder_rate_floor(alpha, spec.grid.dim(), nu);
                    fits.insert(format!("holder_floor_alpha_{alpha}"), Value::Float(floor));
                }
            }
            exit_for(&res.run)
        }
    };
    manifest.exit_code = code;
    manifest.timings.insert(
        "total_seconds".into(),
        Value::Float(started.elapsed().as_secs_f64()),
    );
    write_manifest(dir, &files, &manifest)?;
    Ok((code, manifest))
}

/// Result of replaying a run directory.
#[derive(Debug, Clone, PartialEq)]
pub enum Replay {
    Match,
    /// Names of report entries that differ.
    Mismatch(Vec<String>),
}

fn find_manifest(dir: &Path) -> Result<PathBuf> {
    if !dir.is_dir() {
        bail!("run directory {} does not exist", dir.display());
    }
    let mut found: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(".manifest.toml"))
        .collect();
    found.sort();
    match found.len() {
        0 => bail!("no manifest in {}", dir.display()),
        1 => Ok(found.remove(0)),
        _ => bail!("several manifests in {}", dir.display()),
    }
}

/// Recomputes the diagnostics report of a finished run from its stored
/// snapshots and series and compares it line by line with the manifest.
pub fn cmd_diagnose(dir: &Path) -> Result<Replay> {
    let path = find_manifest(dir)?;
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let manifest = RunManifest::parse(&text)?;
    let stored = manifest
        .report
        .as_ref()
        .ok_or_else(|| anyhow!("manifest has no report (status: {})", manifest.status))?;
    let cfg = &manifest.config;
    let mut spec = cfg.problem()?;
    if manifest.command == "steady" {
        spec.horizon = cfg.asymptotic.t_max;
    }
    let read = |role: &str| -> Result<String> {
        let name = manifest
            .file(role)
            .ok_or_else(|| anyhow!("manifest lists no {role} file"))?;
        fs::read_to_string(dir.join(name)).with_context(|| format!("reading {name}"))
    };
    let (times, snapshots) = output::read_snapshots(&read("snapshots")?, spec.grid)?;
    let series = output::read_series(&read("series")?)?;
    let last = manifest
        .stages
        .last()
        .ok_or_else(|| anyhow!("manifest has no stages"))?;
    let reg = RegularizationParams::new(last.epsilon, last.delta)?.with_smoothing(cfg.schedule().g_smoothing);
    let traj = Trajectory {
        times,
        snapshots,
        series,
        reg_used: reg,
    };
    let opts = LedgerOptions {
        violation_target: cfg.continuation.violation_target,
        n_tests: manifest.report_tests,
        seed: manifest.report_seed,
    };
    let fresh = estimate_ledger(&traj, &spec, &reg, &opts)?;
    if fresh.to_string() == stored.to_string() {
        Ok(Replay::Match)
    } else {
        let mut names = stored.differences(&fresh);
        if names.is_empty() {
            names.push("report order".into());
        }
        Ok(Replay::Mismatch(names))
    }
}

/// Evaluates an expression with `name=value` bindings for `x`, `y`, `t`,
/// `u` (all default to 0).
pub fn cmd_eval_expr(source: &str, bindings: &[String]) -> Result<f64> {
    let e = parse_expression(source).map_err(|err| anyhow!("{source}: {err}"))?;
    let mut env = Env::new(0.0, 0.0, 0.0, 0.0);
    for b in bindings {
        for part in b.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (name, value) = part
                .split_once('=')
                .ok_or_else(|| anyhow!("binding `{part}` is not of the form name=value"))?;
            let v: f64 = value
                .trim()
                .parse()
                .with_context(|| format!("binding `{part}`: bad number"))?;
            match name.trim() {
                "x" => env.x = v,
                "y" => env.y = v,
                "t" => env.t = v,
                "u" => env.u = v,
                other => bail!("unknown variable `{other}` (expected x, y, t or u)"),
            }
        }
    }
    Ok(e.evaluate(&env)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_expr_examples() {
        assert_eq!(cmd_eval_expr("min(1, exp(0))", &[]).unwrap(), 1.0);
        assert_eq!(cmd_eval_expr("x*t", &["x=2".into(), "t=0.25".into()]).unwrap(), 0.5);
        assert_eq!(cmd_eval_expr("abs(x) - 1", &["x=-0.25".into()]).unwrap(), -0.75);
        assert_eq!(cmd_eval_expr("exp(-x^2) + min(t, 1)", &["x=0,t=2".into()]).unwrap(), 2.0);
        assert!(cmd_eval_expr("log(u)", &[]).is_err());
        assert!(cmd_eval_expr("z", &[]).is_err());
        assert!(cmd_eval_expr("u", &["w=1".into()]).is_err());
    }

    #[test]
    fn sweep_axis_parsing() {
        assert_eq!("delta".parse::<SweepAxis>().unwrap(), SweepAxis::Delta);
        assert_eq!("n".parse::<SweepAxis>().unwrap(), SweepAxis::N);
        assert!("cfl".parse::<SweepAxis>().is_err());
    }

    #[test]
    fn axis_application() {
        let base = RunConfig::default();
        let mut c = base.clone();
        SweepAxis::Delta.apply(&mut c, 0.05).unwrap();
        assert_eq!(c.continuation.delta_init, 0.05);
        assert_eq!(c.continuation.delta_min, 0.05);
        let mut c = base.clone();
        SweepAxis::N.apply(&mut c, 41.0).unwrap();
        assert_eq!(c.domain.n, vec![41]);
        assert!(SweepAxis::N.apply(&mut base.clone(), 2.5).is_err());
    }

    #[test]
    fn spread_ignores_non_finite() {
        assert_eq!(spread([1.0, 4.0, f64::NAN]), 4.0);
        assert!(spread([f64::NAN]).is_nan());
    }

    #[test]
    fn empty_sweep_rejected_without_output() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("sweep");
        assert!(cmd_sweep(&RunConfig::default(), SweepAxis::Delta, &[], &out).is_err());
        assert!(!out.exists());
    }

    #[test]
    fn zero_problem_runs_clean() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::from_toml("[domain]\nn = 21\n[solver]\nsnapshots = 4\n").unwrap();
        cfg.continuation.eps_init = 0.1;
        cfg.continuation.eps_min = 0.1;
        cfg.continuation.delta_min = 0.1;
        let out = cmd_run(&cfg, dir.path()).unwrap();
        assert_eq!(out.exit_code, EXIT_OK);
        let text = fs::read_to_string(dir.path().join("run.snapshots.csv")).unwrap();
        let grid = cfg.grid().unwrap();
        let (_, snaps) = output::read_snapshots(&text, grid).unwrap();
        assert_eq!(snaps.len(), 6);
        assert!(snaps.iter().all(|s| s.values.iter().all(|&v| v == 0.0)));
        assert_eq!(cmd_diagnose(dir.path()).unwrap(), Replay::Match);
    }
}
