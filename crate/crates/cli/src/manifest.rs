//! Run manifest: a TOML document whose first line is `schema_version`.
//!
//! Layout, in order: run summary keys, `[files]`, `[config.*]` (the
//! normalized config), `[[stages]]`, `[report]`, `[fits]`, `[timings]`.
//! Everything except `[timings]` is deterministic for a fixed config and
//! seed.

use anyhow::{anyhow, bail, Context, Result};
use gradqvi_core::continuation::StageRecord;
use gradqvi_core::diagnostics::DiagnosticsReport;
use toml::{Table, Value};

use crate::config::RunConfig;

pub const SCHEMA_VERSION: i64 = 1;

#[derive(Debug, Clone)]
pub struct RunManifest {
    pub command: String,
    /// `vi` or `qvi`.
    pub mode: String,
    pub status: String,
    pub exit_code: i32,
    pub error: Option<String>,
    pub config: RunConfig,
    /// Role -> file name, relative to the manifest.
    pub files: Vec<(String, String)>,
    pub stages: Vec<StageRecord>,
    pub report: Option<DiagnosticsReport>,
    pub report_seed: u64,
    pub report_tests: usize,
    /// Free-form fit results (`steady` only).
    pub fits: Table,
    pub timings: Table,
}

impl RunManifest {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        RunManifest {
            command: command.to_string(),
            mode: if config.is_qvi() { "qvi" } else { "vi" }.to_string(),
            status: "ok".into(),
            exit_code: 0,
            error: None,
            config: config.clone(),
            files: Vec::new(),
            stages: Vec::new(),
            report: None,
            report_seed: config.output.seed,
            report_tests: 0,
            fits: Table::new(),
            timings: Table::new(),
        }
    }

    pub fn file(&self, role: &str) -> Option<&str> {
        self.files.iter().find(|(r, _)| r == role).map(|(_, f)| f.as_str())
    }

    pub fn to_toml(&self) -> String {
        let mut doc = Table::new();
        doc.insert("schema_version".into(), Value::Integer(SCHEMA_VERSION));
        doc.insert("command".into(), Value::String(self.command.clone()));
        doc.insert("mode".into(), Value::String(self.mode.clone()));
        doc.insert("status".into(), Value::String(self.status.clone()));
        doc.insert("exit_code".into(), Value::Integer(self.exit_code as i64));
        if let Some(e) = &self.error {
            doc.insert("error".into(), Value::String(e.clone()));
        }
        let files: Table = self
            .files
            .iter()
            .map(|(r, f)| (r.clone(), Value::String(f.clone())))
            .collect();
        doc.insert("files".into(), Value::Table(files));
        doc.insert("config".into(), Value::Table(self.config.to_table()));
        let stages = self
            .stages
            .iter()
            .map(|s| {
                let mut t = Table::new();
                t.insert("epsilon".into(), Value::Float(s.epsilon));
                t.insert("delta".into(), Value::Float(s.delta));
                t.insert("final_violation".into(), Value::Float(s.final_violation));
                t.insert("steps".into(), Value::Integer(s.steps as i64));
                t.insert("first_iters".into(), Value::Integer(s.first_iters as i64));
                t.insert("mean_iters".into(), Value::Float(s.mean_iters));
                t.insert("clamp_events".into(), Value::Integer(s.clamp_events as i64));
                t.insert("t_end".into(), Value::Float(s.t_end));
                t.insert("stalled".into(), Value::Boolean(s.stalled));
                Value::Table(t)
            })
            .collect();
        doc.insert("stages".into(), Value::Array(stages));
        if let Some(report) = &self.report {
            let mut t = Table::new();
            t.insert("seed".into(), Value::Integer(self.report_seed as i64));
            t.insert("tests".into(), Value::Integer(self.report_tests as i64));
            t.insert("all_pass".into(), Value::Boolean(report.all_pass()));
            let lines = report.entries.iter().map(|e| Value::String(e.to_string())).collect();
            t.insert("lines".into(), Value::Array(lines));
            doc.insert("report".into(), Value::Table(t));
        }
        doc.insert("fits".into(), Value::Table(self.fits.clone()));
        let mut timings = self.timings.clone();
        let stage_secs = self.stages.iter().map(|s| Value::Float(s.wall_seconds)).collect();
        timings.insert("stage_seconds".into(), Value::Array(stage_secs));
        doc.insert("timings".into(), Value::Table(timings));
        doc.to_string()
    }

    /// The manifest text without `[timings]`, for determinism comparisons.
    pub fn without_timings(text: &str) -> String {
        match text.find("\n[timings]") {
            Some(i) => text[..i + 1].to_string(),
            None => text.to_string(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let doc: Table = text.parse().context("manifest is not valid TOML")?;
        match doc.get("schema_version").and_then(Value::as_integer) {
            Some(SCHEMA_VERSION) => {}
            Some(v) => bail!("manifest schema mismatch: version {v}, expected {SCHEMA_VERSION}"),
            None => bail!("manifest schema mismatch: no schema_version"),
        }
        let str_key = |k: &str| -> Result<String> {
            doc.get(k)
                .and_then(Value::as_str)
                .map(str::to_string)
                .ok_or_else(|| anyhow!("manifest: missing `{k}`"))
        };
        let config_table = doc
            .get("config")
            .and_then(Value::as_table)
            .ok_or_else(|| anyhow!("manifest: missing [config]"))?;
        let config = RunConfig::from_table(config_table).context("manifest [config]")?;
        let files = doc
            .get("files")
            .and_then(Value::as_table)
            .map(|t| {
                t.iter()
                    .filter_map(|(k, v)| v.as_str().map(|s| (k.clone(), s.to_string())))
                    .collect()
            })
            .unwrap_or_default();
        let stages = doc
            .get("stages")
            .and_then(Value::as_array)
            .map(|a| a.iter().filter_map(Value::as_table).map(parse_stage).collect::<Result<Vec<_>>>())
            .transpose()?
            .unwrap_or_default();
        let (report, report_seed, report_tests) = match doc.get("report").and_then(Value::as_table) {
            Some(t) => {
                let lines: Vec<&str> = t
                    .get("lines")
                    .and_then(Value::as_array)
                    .ok_or_else(|| anyhow!("manifest: [report] has no lines"))?
                    .iter()
                    .filter_map(Value::as_str)
                    .collect();
                let report: DiagnosticsReport = lines.join("\n").parse()?;
                let seed = t.get("seed").and_then(Value::as_integer).unwrap_or(0) as u64;
                let tests = t.get("tests").and_then(Value::as_integer).unwrap_or(0) as usize;
                (Some(report), seed, tests)
            }
            None => (None, config.output.seed, 0),
        };
        Ok(RunManifest {
            command: str_key("command")?,
            mode: str_key("mode")?,
            status: str_key("status")?,
            exit_code: doc.get("exit_code").and_then(Value::as_integer).unwrap_or(0) as i32,
            error: doc.get("error").and_then(Value::as_str).map(str::to_string),
            config,
            files,
            stages,
            report,
            report_seed,
            report_tests,
            fits: doc.get("fits").and_then(Value::as_table).cloned().unwrap_or_default(),
            timings: doc.get("timings").and_then(Value::as_table).cloned().unwrap_or_default(),
        })
    }
}

fn parse_stage(t: &Table) -> Result<StageRecord> {
    let f = |k: &str| {
        t.get(k)
            .and_then(Value::as_float)
            .ok_or_else(|| anyhow!("manifest stage: missing `{k}`"))
    };
    let i = |k: &str| {
        t.get(k)
            .and_then(Value::as_integer)
            .map(|v| v as usize)
            .ok_or_else(|| anyhow!("manifest stage: missing `{k}`"))
    };
    Ok(StageRecord {
        epsilon: f("epsilon")?,
        delta: f("delta")?,
        final_violation: f("final_violation")?,
        steps: i("steps")?,
        first_iters: i("first_iters")?,
        mean_iters: f("mean_iters")?,
        clamp_events: i("clamp_events")?,
        t_end: f("t_end")?,
        stalled: t.get("stalled").and_then(Value::as_bool).unwrap_or(false),
        wall_seconds: 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use gradqvi_core::diagnostics::ReportEntry;

    fn sample() -> RunManifest {
        let cfg = RunConfig::from_toml("[model]\nf = \"1\"\n").unwrap();
        let mut m = RunManifest::new("run", &cfg);
        m.files.push(("snapshots".into(), "run.snapshots.csv".into()));
        m.stages.push(StageRecord {
            epsilon: 0.1,
            delta: 0.05,
            final_violation: 3e-3,
            steps: 12,
            first_iters: 2,
            mean_iters: 3.25,
            clamp_events: 0,
            t_end: 1.0,
            stalled: false,
            wall_seconds: 0.5,
        });
        m.report = Some(DiagnosticsReport {
            entries: vec![ReportEntry {
                name: "sup_norm".into(),
                measured: 0.5,
                bound: Some(6.0),
                pass: true,
                tag: "estimate".into(),
                context: "eps=1e-1;delta=5e-2".into(),
            }],
        });
        m.report_tests = 64;
        m
    }

    #[test]
    fn schema_version_is_first_line() {
        let text = sample().to_toml();
        assert_eq!(text.lines().next(), Some("schema_version = 1"));
    }

    #[test]
    fn round_trip() {
        let m = sample();
        let text = m.to_toml();
        let back = RunManifest::parse(&text).unwrap();
        assert_eq!(back.config, m.config);
        assert_eq!(back.file("snapshots"), Some("run.snapshots.csv"));
        assert_eq!(back.stages.len(), 1);
        assert_eq!(back.stages[0].mean_iters, 3.25);
        assert_eq!(back.report, m.report);
        assert_eq!(back.report_tests, 64);
        assert_eq!(RunManifest::without_timings(&back.to_toml()), RunManifest::without_timings(&text));
    }

    #[test]
    fn timings_are_last() {
        let text = sample().to_toml();
        let head = RunManifest::without_timings(&text);
        assert!(!head.contains("stage_seconds"));
        assert!(text.contains("stage_seconds"));
    }

    #[test]
    fn schema_mismatch() {
        let text = sample().to_toml().replacen("schema_version = 1", "schema_version = 7", 1);
        let err = RunManifest::parse(&text).unwrap_err().to_string();
        assert!(err.contains("schema mismatch"), "{err}");
    }
}
