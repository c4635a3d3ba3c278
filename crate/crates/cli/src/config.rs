//! Run configuration: a TOML file with the sections `[domain]`, `[model]`,
//! `[solver]`, `[continuation]`, `[asymptotic]` and `[output]`.
//!
//! Every key has a default. Unknown keys are rejected with the nearest valid
//! key as a hint. [`RunConfig::to_canonical`] prints the normalized form;
//! loading that text again yields the same config.

use std::fmt;
use std::path::Path;

use gradqvi_core::continuation::{ContinuationSchedule, RunOptions, StopRule};
use gradqvi_core::expr::Var;
use gradqvi_core::model::{self, ValidationReport};
use gradqvi_core::parabolic::StepControls;
use gradqvi_core::penalty::GSmoothing;
use gradqvi_core::{parse_expression, Expression, Grid, ProblemSpec};
use thiserror::Error;
use toml::{Table, Value};

/// Samples used by the assumption checks at load time.
const VALIDATION_SAMPLES: usize = 400;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Syntax(String),
    #[error("unknown {what} `{key}`{hint}")]
    UnknownKey {
        what: &'static str,
        key: String,
        hint: String,
    },
    #[error("`{key}`: expected {expected}, found {found}")]
    Type {
        key: String,
        expected: &'static str,
        found: String,
    },
    #[error("`{key}`: {msg}")]
    Value { key: String, msg: String },
    #[error("{0}")]
    Problem(#[from] gradqvi_core::Error),
    #[error("assumption check failed: {0}")]
    Assumption(String),
}

type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, PartialEq)]
pub struct DomainConfig {
    pub dim: usize,
    /// `[a, b]` in 1D, `[ax, bx, ay, by]` in 2D.
    pub extents: Vec<f64>,
    /// Nodes per axis.
    pub n: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub phi_x: String,
    pub phi_y: String,
    pub f: String,
    pub g: String,
    pub u0: String,
    pub horizon: f64,
    pub c1: f64,
    pub c2: f64,
    pub lambda_min: f64,
    pub lambda_max: Option<f64>,
    pub mu: Option<f64>,
    pub f_inf: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub dt_init: f64,
    pub cfl: f64,
    pub picard_tol: f64,
    pub picard_max: usize,
    pub dt_min: f64,
    pub dt_max: f64,
    pub snapshots: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuationConfig {
    pub eps_init: f64,
    pub eps_factor: f64,
    pub eps_min: f64,
    pub delta_init: f64,
    pub delta_factor: f64,
    pub delta_min: f64,
    pub violation_target: f64,
    pub warm_start: bool,
    /// Box-filter width for `G` in faces, 0 for none.
    pub g_smoothing: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AsymptoticConfig {
    pub t_max: f64,
    pub stall_tol: f64,
    pub alpha: Vec<f64>,
    pub t_probe: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub directory: String,
    pub prefix: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub domain: DomainConfig,
    pub model: ModelConfig,
    pub solver: SolverConfig,
    pub continuation: ContinuationConfig,
    pub asymptotic: AsymptoticConfig,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let ctl = StepControls::default();
        let sched = ContinuationSchedule::default();
        RunConfig {
            domain: DomainConfig {
                dim: 1,
                extents: vec![-1.0, 1.0],
                n: vec![81],
            },
            model: ModelConfig {
                phi_x: "0".into(),
                phi_y: "0".into(),
                f: "0".into(),
                g: "1".into(),
                u0: "0".into(),
                horizon: 1.0,
                c1: 1.0,
                c2: 1.0,
                lambda_min: 1.0,
                lambda_max: None,
                mu: None,
                f_inf: None,
            },
            solver: SolverConfig {
                dt_init: ctl.dt_init,
                cfl: ctl.cfl,
                picard_tol: ctl.picard_tol,
                picard_max: ctl.picard_max,
                dt_min: ctl.dt_min,
                dt_max: ctl.dt_max,
                snapshots: RunOptions::default().snapshots,
            },
            continuation: ContinuationConfig {
                eps_init: sched.eps_init,
                eps_factor: sched.eps_factor,
                eps_min: sched.eps_min,
                delta_init: sched.delta_init,
                delta_factor: sched.delta_factor,
                delta_min: sched.delta_min,
                violation_target: sched.violation_target,
                warm_start: sched.warm_start,
                g_smoothing: 0,
            },
            asymptotic: AsymptoticConfig {
                t_max: 20.0,
                stall_tol: 1e-5,
                alpha: vec![0.0, 0.5],
                t_probe: 2.0,
            },
            output: OutputConfig {
                directory: "runs".into(),
                prefix: "run".into(),
                seed: 0,
            },
        }
    }
}

const SECTIONS: [(&str, &[&str]); 6] = [
    ("domain", &["dim", "extents", "n"]),
    (
        "model",
        &[
            "phi_x", "phi_y", "f", "g", "u0", "horizon", "c1", "c2", "lambda_min", "lambda_max", "mu",
            "f_inf",
        ],
    ),
    (
        "solver",
        &["dt_init", "cfl", "picard_tol", "picard_max", "dt_min", "dt_max", "snapshots"],
    ),
    (
        "continuation",
        &[
            "eps_init",
            "eps_factor",
            "eps_min",
            "delta_init",
            "delta_factor",
            "delta_min",
            "violation_target",
            "warm_start",
            "g_smoothing",
        ],
    ),
    ("asymptotic", &["t_max", "stall_tol", "alpha", "t_probe"]),
    ("output", &["directory", "prefix", "seed"]),
];

fn nearest<'a>(key: &str, candidates: impl IntoIterator<Item = &'a str>) -> Option<&'a str> {
    candidates
        .into_iter()
        .map(|c| (strsim::levenshtein(key, c), c))
        .filter(|&(d, c)| d <= key.len().max(c.len()) / 2 + 1)
        .min()
        .map(|(_, c)| c)
}

fn type_name(v: &Value) -> String {
    v.type_str().to_string()
}

/// Typed accessors over one section table; remembers which keys were used.
struct Section<'a> {
    name: &'static str,
    table: Option<&'a Table>,
}

impl<'a> Section<'a> {
    fn key(&self, k: &str) -> String {
        format!("{}.{}", self.name, k)
    }

    fn raw(&self, k: &str) -> Option<&'a Value> {
        self.table.and_then(|t| t.get(k))
    }

    fn float(&self, k: &str, default: f64) -> Result<f64> {
        Ok(self.opt_float(k)?.unwrap_or(default))
    }

    fn opt_float(&self, k: &str) -> Result<Option<f64>> {
        match self.raw(k) {
            None => Ok(None),
            Some(Value::Float(v)) => Ok(Some(*v)),
            Some(Value::Integer(v)) => Ok(Some(*v as f64)),
            Some(other) => Err(ConfigError::Type {
                key: self.key(k),
                expected: "a number",
                found: type_name(other),
            }),
        }
    }

    fn uint(&self, k: &str, default: u64) -> Result<u64> {
        match self.raw(k) {
            None => Ok(default),
            Some(Value::Integer(v)) if *v >= 0 => Ok(*v as u64),
            Some(Value::Integer(v)) => Err(ConfigError::Value {
                key: self.key(k),
                msg: format!("must be non-negative, got {v}"),
            }),
            Some(other) => Err(ConfigError::Type {
                key: self.key(k),
                expected: "an integer",
                found: type_name(other),
            }),
        }
    }

    fn boolean(&self, k: &str, default: bool) -> Result<bool> {
        match self.raw(k) {
            None => Ok(default),
            Some(Value::Boolean(b)) => Ok(*b),
            Some(other) => Err(ConfigError::Type {
                key: self.key(k),
                expected: "a boolean",
                found: type_name(other),
            }),
        }
    }

    fn string(&self, k: &str, default: &str) -> Result<String> {
        Ok(self.opt_string(k)?.unwrap_or_else(|| default.to_string()))
    }

    fn opt_string(&self, k: &str) -> Result<Option<String>> {
        match self.raw(k) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(other) => Err(ConfigError::Type {
                key: self.key(k),
                expected: "a string",
                found: type_name(other),
            }),
        }
    }

    /// A number or an array of numbers.
    fn floats(&self, k: &str) -> Result<Option<Vec<f64>>> {
        let bad = |found: String| ConfigError::Type {
            key: self.key(k),
            expected: "a number or an array of numbers",
            found,
        };
        match self.raw(k) {
            None => Ok(None),
            Some(Value::Float(v)) => Ok(Some(vec![*v])),
            Some(Value::Integer(v)) => Ok(Some(vec![*v as f64])),
            Some(Value::Array(a)) => a
                .iter()
                .map(|v| match v {
                    Value::Float(f) => Ok(*f),
                    Value::Integer(i) => Ok(*i as f64),
                    other => Err(bad(format!("array containing {}", type_name(other)))),
                })
                .collect::<Result<Vec<_>>>()
                .map(Some),
            Some(other) => Err(bad(type_name(other))),
        }
    }

    /// An integer or an array of integers.
    fn uints(&self, k: &str) -> Result<Option<Vec<usize>>> {
        let bad = |found: String| ConfigError::Type {
            key: self.key(k),
            expected: "an integer or an array of integers",
            found,
        };
        let one = |v: &Value| match v {
            Value::Integer(i) if *i >= 0 => Ok(*i as usize),
            other => Err(bad(type_name(other))),
        };
        match self.raw(k) {
            None => Ok(None),
            Some(Value::Array(a)) => a.iter().map(one).collect::<Result<Vec<_>>>().map(Some),
            Some(v) => one(v).map(|n| Some(vec![n])),
        }
    }
}

fn check_keys(doc: &Table) -> Result<()> {
    for (section, value) in doc {
        let Some((_, keys)) = SECTIONS.iter().find(|(s, _)| s == section) else {
            let hint = nearest(section, SECTIONS.iter().map(|(s, _)| *s))
                .map(|s| format!(" (did you mean `[{s}]`?)"))
                .unwrap_or_default();
            return Err(ConfigError::UnknownKey {
                what: "section",
                key: section.clone(),
                hint,
            });
        };
        let Value::Table(table) = value else {
            return Err(ConfigError::Type {
                key: section.clone(),
                expected: "a section",
                found: type_name(value),
            });
        };
        for key in table.keys() {
            if keys.contains(&key.as_str()) {
                continue;
            }
            let elsewhere = SECTIONS
                .iter()
                .find(|(_, ks)| ks.contains(&key.as_str()))
                .map(|(s, _)| *s);
            let hint = match elsewhere {
                Some(s) => format!(" in [{section}] (it belongs in [{s}])"),
                None => match nearest(key, keys.iter().copied()) {
                    Some(k) => format!(" in [{section}] (did you mean `{k}`?)"),
                    None => format!(" in [{section}]"),
                },
            };
            return Err(ConfigError::UnknownKey {
                what: "key",
                key: key.clone(),
                hint,
            });
        }
    }
    Ok(())
}

/// Parses an expression and returns its printed (normalized) form.
fn normalize_expr(key: &str, src: &str) -> Result<String> {
    parse_expression(src)
        .map(|e| e.to_string())
        .map_err(|e| ConfigError::Value {
            key: key.to_string(),
            msg: e.to_string(),
        })
}

fn expr(src: &str) -> Expression {
    parse_expression(src).expect("normalized at load time")
}

impl RunConfig {
    /// Parses and checks a config text. Assumption checks are not run here;
    /// see [`RunConfig::validate_assumptions`].
    pub fn from_toml(text: &str) -> Result<Self> {
        let doc: Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))?;
        check_keys(&doc)?;
        let sec = |name: &'static str| Section {
            name,
            table: doc.get(name).and_then(Value::as_table),
        };
        let d = RunConfig::default();

        let s = sec("domain");
        let dim = s.uint("dim", 1)? as usize;
        if dim != 1 && dim != 2 {
            return Err(ConfigError::Value {
                key: "domain.dim".into(),
                msg: format!("must be 1 or 2, got {dim}"),
            });
        }
        let extents = match s.floats("extents")? {
            Some(v) => v,
            None if dim == 1 => vec![-1.0, 1.0],
            None => vec![0.0, 1.0, 0.0, 1.0],
        };
        if extents.len() != 2 * dim {
            return Err(ConfigError::Value {
                key: "domain.extents".into(),
                msg: format!("needs {} numbers in {dim}D, got {}", 2 * dim, extents.len()),
            });
        }
        let n = match s.uints("n")? {
            Some(v) if v.len() == 1 => vec![v[0]; dim],
            Some(v) if v.len() == dim => v,
            Some(v) => {
                return Err(ConfigError::Value {
                    key: "domain.n".into(),
                    msg: format!("needs 1 or {dim} entries, got {}", v.len()),
                })
            }
            None if dim == 1 => vec![81],
            None => vec![65, 65],
        };
        let domain = DomainConfig { dim, extents, n };

        let s = sec("model");
        let dm = &d.model;
        let model = ModelConfig {
            phi_x: normalize_expr("model.phi_x", &s.string("phi_x", &dm.phi_x)?)?,
            phi_y: normalize_expr("model.phi_y", &s.string("phi_y", &dm.phi_y)?)?,
            f: normalize_expr("model.f", &s.string("f", &dm.f)?)?,
            g: normalize_expr("model.g", &s.string("g", &dm.g)?)?,
            u0: normalize_expr("model.u0", &s.string("u0", &dm.u0)?)?,
            horizon: s.float("horizon", dm.horizon)?,
            c1: s.float("c1", dm.c1)?,
            c2: s.float("c2", dm.c2)?,
            lambda_min: s.float("lambda_min", dm.lambda_min)?,
            lambda_max: s.opt_float("lambda_max")?,
            mu: s.opt_float("mu")?,
            f_inf: s
                .opt_string("f_inf")?
                .map(|src| normalize_expr("model.f_inf", &src))
                .transpose()?,
        };
        if dim == 1 && model.phi_y != "0" {
            return Err(ConfigError::Value {
                key: "model.phi_y".into(),
                msg: "only meaningful in 2D".into(),
            });
        }

        let s = sec("solver");
        let ds = &d.solver;
        let solver = SolverConfig {
            dt_init: s.float("dt_init", ds.dt_init)?,
            cfl: s.float("cfl", ds.cfl)?,
            picard_tol: s.float("picard_tol", ds.picard_tol)?,
            picard_max: s.uint("picard_max", ds.picard_max as u64)? as usize,
            dt_min: s.float("dt_min", ds.dt_min)?,
            dt_max: s.float("dt_max", ds.dt_max)?,
            snapshots: s.uint("snapshots", ds.snapshots as u64)? as usize,
        };

        let s = sec("continuation");
        let dc = &d.continuation;
        let continuation = ContinuationConfig {
            eps_init: s.float("eps_init", dc.eps_init)?,
            eps_factor: s.float("eps_factor", dc.eps_factor)?,
            eps_min: s.float("eps_min", dc.eps_min)?,
            delta_init: s.float("delta_init", dc.delta_init)?,
            delta_factor: s.float("delta_factor", dc.delta_factor)?,
            delta_min: s.float("delta_min", dc.delta_min)?,
            violation_target: s.float("violation_target", dc.violation_target)?,
            warm_start: s.boolean("warm_start", dc.warm_start)?,
            g_smoothing: s.uint("g_smoothing", dc.g_smoothing as u64)? as usize,
        };

        let s = sec("asymptotic");
        let da = &d.asymptotic;
        let asymptotic = AsymptoticConfig {
            t_max: s.float("t_max", da.t_max)?,
            stall_tol: s.float("stall_tol", da.stall_tol)?,
            alpha: s.floats("alpha")?.unwrap_or_else(|| da.alpha.clone()),
            t_probe: s.float("t_probe", da.t_probe)?,
        };
        if let Some(a) = asymptotic.alpha.iter().find(|a| !(0.0..1.0).contains(*a)) {
            return Err(ConfigError::Value {
                key: "asymptotic.alpha".into(),
                msg: format!("exponents must lie in [0, 1), got {a}"),
            });
        }

        let s = sec("output");
        let dout = &d.output;
        let output = OutputConfig {
            directory: s.string("directory", &dout.directory)?,
            prefix: s.string("prefix", &dout.prefix)?,
            seed: s.uint("seed", dout.seed)?,
        };

        let cfg = RunConfig {
            domain,
            model,
            solver,
            continuation,
            asymptotic,
            output,
        };
        cfg.problem()?.check()?;
        cfg.controls().validate()?;
        cfg.schedule().validate()?;
        Ok(cfg)
    }

    pub fn grid(&self) -> Result<Grid> {
        let e = &self.domain.extents;
        let n = &self.domain.n;
        let grid = if self.domain.dim == 1 {
            Grid::new_1d(e[0], e[1], n[0])?
        } else {
            Grid::new_2d((e[0], e[1]), (e[2], e[3]), (n[0], n[1]))?
        };
        Ok(grid)
    }

    pub fn problem(&self) -> Result<ProblemSpec> {
        let m = &self.model;
        let grid = self.grid()?;
        let mut spec = ProblemSpec::new(grid, m.horizon, expr(&m.f), expr(&m.g), expr(&m.u0));
        spec.phi = if self.domain.dim == 1 {
            vec![expr(&m.phi_x)]
        } else {
            vec![expr(&m.phi_x), expr(&m.phi_y)]
        };
        spec.c1 = m.c1;
        spec.c2 = m.c2;
        spec.lambda_min = m.lambda_min;
        spec.lambda_max = m.lambda_max;
        spec.mu = m.mu;
        spec.f_inf = m.f_inf.as_deref().map(expr);
        Ok(spec)
    }

    pub fn controls(&self) -> StepControls {
        let s = &self.solver;
        StepControls {
            dt_init: s.dt_init,
            cfl: s.cfl,
            picard_tol: s.picard_tol,
            picard_max: s.picard_max,
            dt_min: s.dt_min,
            dt_max: s.dt_max,
        }
    }

    pub fn schedule(&self) -> ContinuationSchedule {
        let c = &self.continuation;
        ContinuationSchedule {
            eps_init: c.eps_init,
            eps_factor: c.eps_factor,
            eps_min: c.eps_min,
            delta_init: c.delta_init,
            delta_factor: c.delta_factor,
            delta_min: c.delta_min,
            violation_target: c.violation_target,
            warm_start: c.warm_start,
            g_smoothing: match c.g_smoothing {
                0 => GSmoothing::None,
                w => GSmoothing::Box(w),
            },
        }
    }

    pub fn run_options(&self) -> RunOptions {
        RunOptions {
            snapshots: self.solver.snapshots,
            stop: StopRule::Horizon,
        }
    }

    /// Whether the threshold depends on `u` (quasi-variational mode).
    pub fn is_qvi(&self) -> bool {
        expr(&self.model.g).references(Var::U)
    }

    /// Sampled assumption checks, seeded from `[output].seed`.
    pub fn validate_assumptions(&self) -> Result<ValidationReport> {
        Ok(model::validate(&self.problem()?, VALIDATION_SAMPLES, self.output.seed)?)
    }

    /// Normalized config as a TOML table with every key spelled out.
    pub fn to_table(&self) -> Table {
        fn t(pairs: Vec<(&str, Value)>) -> Value {
            Value::Table(pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect())
        }
        let f = Value::Float;
        let i = |v: usize| Value::Integer(v as i64);
        let s = |v: &str| Value::String(v.to_string());
        let floats = |v: &[f64]| Value::Array(v.iter().map(|x| Value::Float(*x)).collect());

        let d = &self.domain;
        let mut domain = vec![("dim", i(d.dim)), ("extents", floats(&d.extents))];
        domain.push((
            "n",
            if d.dim == 1 {
                i(d.n[0])
            } else {
                Value::Array(d.n.iter().map(|&n| i(n)).collect())
            },
        ));

        let m = &self.model;
        let mut model = vec![("phi_x", s(&m.phi_x))];
        if d.dim == 2 {
            model.push(("phi_y", s(&m.phi_y)));
        }
        model.extend([
            ("f", s(&m.f)),
            ("g", s(&m.g)),
            ("u0", s(&m.u0)),
            ("horizon", f(m.horizon)),
            ("c1", f(m.c1)),
            ("c2", f(m.c2)),
            ("lambda_min", f(m.lambda_min)),
        ]);
        if let Some(v) = m.lambda_max {
            model.push(("lambda_max", f(v)));
        }
        if let Some(v) = m.mu {
            model.push(("mu", f(v)));
        }
        if let Some(v) = &m.f_inf {
            model.push(("f_inf", s(v)));
        }

        let so = &self.solver;
        let solver = vec![
            ("dt_init", f(so.dt_init)),
            ("cfl", f(so.cfl)),
            ("picard_tol", f(so.picard_tol)),
            ("picard_max", i(so.picard_max)),
            ("dt_min", f(so.dt_min)),
            ("dt_max", f(so.dt_max)),
            ("snapshots", i(so.snapshots)),
        ];
        let c = &self.continuation;
        let continuation = vec![
            ("eps_init", f(c.eps_init)),
            ("eps_factor", f(c.eps_factor)),
            ("eps_min", f(c.eps_min)),
            ("delta_init", f(c.delta_init)),
            ("delta_factor", f(c.delta_factor)),
            ("delta_min", f(c.delta_min)),
            ("violation_target", f(c.violation_target)),
            ("warm_start", Value::Boolean(c.warm_start)),
            ("g_smoothing", i(c.g_smoothing)),
        ];
        let a = &self.asymptotic;
        let asymptotic = vec![
            ("t_max", f(a.t_max)),
            ("stall_tol", f(a.stall_tol)),
            ("alpha", floats(&a.alpha)),
            ("t_probe", f(a.t_probe)),
        ];
        let o = &self.output;
        let output = vec![
            ("directory", s(&o.directory)),
            ("prefix", s(&o.prefix)),
            ("seed", Value::Integer(o.seed as i64)),
        ];

        let mut doc = Table::new();
        for (name, pairs) in [
            ("domain", domain),
            ("model", model),
            ("solver", solver),
            ("continuation", continuation),
            ("asymptotic", asymptotic),
            ("output", output),
        ] {
            doc.insert(name.to_string(), t(pairs));
        }
        doc
    }

    pub fn to_canonical(&self) -> String {
        self.to_table().to_string()
    }

    /// Re-reads a table written by [`RunConfig::to_table`].
    pub fn from_table(table: &Table) -> Result<Self> {
        Self::from_toml(&table.to_string())
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_canonical())
    }
}

/// Loads a config file. Failed assumption checks are returned as warnings,
/// or as an error when `strict` is set.
pub fn load_config(path: &Path, strict: bool) -> Result<(RunConfig, Vec<String>)> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let cfg = RunConfig::from_toml(&text)?;
    let report = cfg.validate_assumptions()?;
    let warnings: Vec<String> = report
        .failures()
        .map(|c| match &c.worst {
            Some(w) => format!(
                "{}: {} (worst at x = {}, y = {}, t = {}, u = {}: {})",
                c.name, c.detail, w.x, w.y, w.t, w.u, w.value
            ),
            None => format!("{}: {}", c.name, c.detail),
        })
        .collect();
    if strict && !warnings.is_empty() {
        return Err(ConfigError::Assumption(warnings.join("; ")));
    }
    Ok((cfg, warnings))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(text: &str) -> Result<RunConfig> {
        RunConfig::from_toml(text)
    }

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = load("[model]\nf = \"1\"\ng = \"1\"\nu0 = \"0\"\n").unwrap();
        assert_eq!(cfg.domain.dim, 1);
        assert_eq!(cfg.domain.extents, vec![-1.0, 1.0]);
        assert_eq!(cfg.domain.n, vec![81]);
        assert_eq!(cfg.solver.snapshots, 50);
        assert_eq!(cfg.continuation.eps_min, 1e-3);
        let grid = cfg.grid().unwrap();
        assert_eq!(grid.num_nodes(), 81);
    }

    #[test]
    fn unknown_key_suggests_nearest() {
        let err = load("[continuation]\nepsilon_init = 0.1\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("epsilon_init"), "{msg}");
        assert!(msg.contains("eps_init"), "{msg}");
    }

    #[test]
    fn misplaced_key_names_its_section() {
        let msg = load("[solver]\neps_init = 0.1\n").unwrap_err().to_string();
        assert!(msg.contains("[continuation]"), "{msg}");
    }

    #[test]
    fn unknown_section() {
        let msg = load("[solvr]\ncfl = 0.5\n").unwrap_err().to_string();
        assert!(msg.contains("[solver]"), "{msg}");
    }

    #[test]
    fn time_dependent_threshold_rejected() {
        let msg = load("[model]\ng = \"1+t\"\n").unwrap_err().to_string();
        assert!(msg.contains("constraint G may not depend on t"), "{msg}");
    }

    #[test]
    fn type_mismatch() {
        let msg = load("[solver]\ncfl = \"half\"\n").unwrap_err().to_string();
        assert!(msg.contains("solver.cfl") && msg.contains("number"), "{msg}");
        let msg = load("[solver]\npicard_max = 2.5\n").unwrap_err().to_string();
        assert!(msg.contains("integer"), "{msg}");
    }

    #[test]
    fn bad_expression_names_key() {
        let msg = load("[model]\nf = \"1 +\"\n").unwrap_err().to_string();
        assert!(msg.contains("model.f"), "{msg}");
    }

    #[test]
    fn canonical_form_is_idempotent() {
        let text = "[domain]\ndim = 2\nn = 33\n[model]\nf = \"1-0.1*u\"\ng = \"1/(1+u^2)\"\nmu = 0.1\n\
                    [asymptotic]\nalpha = 0.25\n";
        let a = load(text).unwrap();
        let once = a.to_canonical();
        let b = load(&once).unwrap();
        assert_eq!(a, b);
        assert_eq!(once, b.to_canonical());
        assert_eq!(b.domain.n, vec![33, 33]);
        assert_eq!(b.asymptotic.alpha, vec![0.25]);
    }

    #[test]
    fn two_d_defaults_to_unit_square() {
        let cfg = load("[domain]\ndim = 2\n").unwrap();
        assert_eq!(cfg.domain.extents, vec![0.0, 1.0, 0.0, 1.0]);
        assert_eq!(cfg.domain.n, vec![65, 65]);
        assert_eq!(cfg.problem().unwrap().phi.len(), 2);
    }

    #[test]
    fn qvi_mode_follows_threshold() {
        assert!(!load("").unwrap().is_qvi());
        assert!(load("[model]\ng = \"1/(1+u^2)\"\n").unwrap().is_qvi());
    }

    #[test]
    fn assumption_failures_are_warnings_unless_strict() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "[model]\ng = \"0.5\"\n").unwrap();
        let (_, warnings) = load_config(&path, false).unwrap();
        assert!(warnings.iter().any(|w| w.contains("threshold lower bound")), "{warnings:?}");
        assert!(matches!(load_config(&path, true), Err(ConfigError::Assumption(_))));
    }
}
