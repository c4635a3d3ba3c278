//! Data files. All writes go to a temporary sibling first and are renamed
//! into place, so a reader never sees a half-written file.
//!
//! Column order is fixed:
//!
//! ```text
//! snapshots: index,t,x,y,u,grad,g,slack,lambda
//! series:    t,dt,picard_iters,max_abs_w,dudt_l1,penalty_mass,max_violation,dudt_l2
//! field:     x,y,u
//! ```
//!
//! Snapshot rows run over nodes with `x` fastest. `grad` and `lambda` are
//! face quantities averaged onto nodes; `slack` is `g - grad`. Only `u` is
//! read back.
//!
//! Floats are printed in shortest round-trip form, so reading a file back
//! reproduces the values bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use anyhow::{bail, Context, Result};
use gradqvi_core::continuation::Trajectory;
use gradqvi_core::grid::{face_gradient_magnitude, faces_to_nodes};
use gradqvi_core::parabolic::{discrete_multiplier, SeriesRow};
use gradqvi_core::penalty::RegularizationParams;
use gradqvi_core::{Grid, ProblemSpec, ScalarField};

pub const SNAPSHOT_HEADER: &str = "index,t,x,y,u,grad,g,slack,lambda";
pub const SERIES_HEADER: &str = "t,dt,picard_iters,max_abs_w,dudt_l1,penalty_mass,max_violation,dudt_l2";
pub const FIELD_HEADER: &str = "x,y,u";

/// Writes `contents` to `path` via a temporary file and a rename.
pub fn write_atomic(path: &Path, contents: &str) -> io::Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "path has no file name"))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)
}

pub fn snapshots_csv(
    times: &[f64],
    snapshots: &[ScalarField],
    spec: &ProblemSpec,
    reg: &RegularizationParams,
) -> gradqvi_core::Result<String> {
    let mut out = String::from(SNAPSHOT_HEADER);
    out.push('\n');
    for (i, (t, s)) in times.iter().zip(snapshots).enumerate() {
        let grid = s.grid;
        let grad = faces_to_nodes(&grid, &face_gradient_magnitude(s));
        let lambda = faces_to_nodes(&grid, &discrete_multiplier(s, spec, reg)?);
        for (k, u) in s.values.iter().enumerate() {
            let (x, y) = grid.node_coords(k);
            let g = spec.eval_g(x, y, *u)?;
            let _ = writeln!(
                out,
                "{i},{t:e},{x:e},{y:e},{u:e},{:e},{g:e},{:e},{:e}",
                grad[k],
                g - grad[k],
                lambda[k]
            );
        }
    }
    Ok(out)
}

pub fn series_csv(series: &[SeriesRow]) -> String {
    let mut out = String::from(SERIES_HEADER);
    out.push('\n');
    for r in series {
        let _ = writeln!(
            out,
            "{:e},{:e},{},{:e},{:e},{:e},{:e},{:e}",
            r.t, r.dt, r.picard_iters, r.max_abs_w, r.dudt_l1, r.penalty_mass, r.max_violation, r.dudt_l2
        );
    }
    out
}

pub fn field_csv(u: &ScalarField) -> String {
    let mut out = String::from(FIELD_HEADER);
    out.push('\n');
    for (k, v) in u.values.iter().enumerate() {
        let (x, y) = u.grid.node_coords(k);
        let _ = writeln!(out, "{x:e},{y:e},{v:e}");
    }
    out
}

fn rows<'a>(text: &'a str, header: &str, what: &str) -> Result<impl Iterator<Item = (usize, Vec<&'a str>)>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == header => {}
        other => bail!("{what}: expected header `{header}`, found `{}`", other.unwrap_or("")),
    }
    Ok(lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| (i + 2, l.split(',').collect())))
}

fn num(field: &str, line: usize, what: &str) -> Result<f64> {
    field
        .parse()
        .with_context(|| format!("{what} line {line}: bad number `{field}`"))
}

/// Reads a snapshot file back into times and fields on `grid`.
pub fn read_snapshots(text: &str, grid: Grid) -> Result<(Vec<f64>, Vec<ScalarField>)> {
    let n = grid.num_nodes();
    let mut times = Vec::new();
    let mut fields: Vec<Vec<f64>> = Vec::new();
    for (line, cols) in rows(text, SNAPSHOT_HEADER, "snapshots")? {
        if cols.len() != 9 {
            bail!("snapshots line {line}: expected 9 columns, found {}", cols.len());
        }
        let index: usize = cols[0]
            .parse()
            .with_context(|| format!("snapshots line {line}: bad index"))?;
        if index == fields.len() {
            times.push(num(cols[1], line, "snapshots")?);
            fields.push(Vec::with_capacity(n));
        } else if index + 1 != fields.len() {
            bail!("snapshots line {line}: index {index} out of order");
        }
        fields[index].push(num(cols[4], line, "snapshots")?);
    }
    let snapshots = fields
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            ScalarField::from_values(grid, v).with_context(|| format!("snapshot {i} has the wrong node count"))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((times, snapshots))
}

pub fn read_series(text: &str) -> Result<Vec<SeriesRow>> {
    rows(text, SERIES_HEADER, "series")?
        .map(|(line, c)| {
            if c.len() != 8 {
                bail!("series line {line}: expected 8 columns, found {}", c.len());
            }
            let f = |i: usize| num(c[i], line, "series");
            Ok(SeriesRow {
                t: f(0)?,
                dt: f(1)?,
                picard_iters: c[2]
                    .parse()
                    .with_context(|| format!("series line {line}: bad iteration count"))?,
                max_abs_w: f(3)?,
                dudt_l1: f(4)?,
                penalty_mass: f(5)?,
                max_violation: f(6)?,
                dudt_l2: f(7)?,
            })
        })
        .collect()
}

/// File names used for one run inside its directory.
pub struct RunFiles {
    pub manifest: String,
    pub snapshots: String,
    pub series: String,
}

impl RunFiles {
    pub fn new(prefix: &str) -> Self {
        RunFiles {
            manifest: format!("{prefix}.manifest.toml"),
            snapshots: format!("{prefix}.snapshots.csv"),
            series: format!("{prefix}.series.csv"),
        }
    }
}

/// Writes snapshot and series files of a trajectory.
pub fn write_trajectory(dir: &Path, files: &RunFiles, traj: &Trajectory, spec: &ProblemSpec) -> Result<()> {
    let snaps = snapshots_csv(&traj.times, &traj.snapshots, spec, &traj.reg_used)?;
    write_atomic(&dir.join(&files.snapshots), &snaps)
        .with_context(|| format!("writing {}", files.snapshots))?;
    write_atomic(&dir.join(&files.series), &series_csv(&traj.series))
        .with_context(|| format!("writing {}", files.series))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapshots_round_trip_exactly() {
        let grid = Grid::new_2d((0.0, 1.0), (0.0, 2.0), (4, 3)).unwrap();
        let one = gradqvi_core::parse_expression("1").unwrap();
        let spec = ProblemSpec::new(grid, 1.0, one.clone(), one.clone(), one);
        let reg = RegularizationParams::new(0.1, 0.1).unwrap();
        let a = ScalarField::from_fn(grid, |x, y| (x * 3.1).sin() + y / 7.0);
        let b = ScalarField::from_fn(grid, |x, y| x * y * 1e-17);
        let times = vec![0.0, 1.0 / 3.0];
        let text = snapshots_csv(&times, &[a.clone(), b.clone()], &spec, &reg).unwrap();
        assert_eq!(text.lines().count(), 1 + 2 * 12);
        let (t, s) = read_snapshots(&text, grid).unwrap();
        assert_eq!(t, times);
        assert_eq!(s[0].values, a.values);
        assert_eq!(s[1].values, b.values);
    }

    #[test]
    fn snapshot_rows_run_x_fastest() {
        let grid = Grid::new_2d((0.0, 1.0), (0.0, 1.0), (3, 3)).unwrap();
        let zero = gradqvi_core::parse_expression("0").unwrap();
        let one = gradqvi_core::parse_expression("1").unwrap();
        let spec = ProblemSpec::new(grid, 1.0, zero.clone(), one, zero);
        let reg = RegularizationParams::new(0.1, 0.1).unwrap();
        let text = snapshots_csv(&[0.0], &[ScalarField::zeros(grid)], &spec, &reg).unwrap();
        let row: Vec<&str> = text.lines().nth(2).unwrap().split(',').collect();
        assert_eq!(row[2].parse::<f64>().unwrap(), 0.5);
        assert_eq!(row[3].parse::<f64>().unwrap(), 0.0);
        // zero field: slack equals G, multiplier is delta
        assert_eq!(row[6].parse::<f64>().unwrap(), 1.0);
        assert_eq!(row[7].parse::<f64>().unwrap(), 1.0);
        assert!((row[8].parse::<f64>().unwrap() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn series_round_trip_exactly() {
        let row = SeriesRow {
            t: 0.1,
            dt: 1e-3,
            picard_iters: 3,
            max_abs_w: 0.7,
            dudt_l1: 1.0 / 3.0,
            penalty_mass: 2.5e7,
            max_violation: -0.2,
            dudt_l2: 0.0,
        };
        let back = read_series(&series_csv(&[row])).unwrap();
        assert_eq!(back, vec![row]);
    }

    #[test]
    fn wrong_header_rejected() {
        assert!(read_series("a,b\n").is_err());
        let grid = Grid::new_1d(0.0, 1.0, 3).unwrap();
        assert!(read_snapshots("index,t,x,y,u,grad,g,slack,lambda\n0,0,0,0,1,0,1,1,0\n", grid).is_err());
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.txt");
        write_atomic(&p, "one").unwrap();
        write_atomic(&p, "two").unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
