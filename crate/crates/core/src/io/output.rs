//! Snapshot, line and diagnostics files.
//!
//! Numbers are written in scientific notation with 17 significant digits,
//! which round-trips every `f64` exactly.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::mesh::Mesh;
use crate::stepper::State;

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}: line {line}: {reason}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("state has {got} nodes, mesh has {expected}")]
    SizeMismatch { expected: usize, got: usize },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> OutputError + '_ {
    move |source| OutputError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// `v` with 17 significant digits.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_file(path: &Path, text: &str) -> Result<(), OutputError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    std::fs::write(path, text).map_err(io_err(path))
}

fn check_state(mesh: &Mesh, state: &State) -> Result<(), OutputError> {
    if state.len() != mesh.num_nodes()
        || state.c.len() != state.len()
        || state.p.len() != state.len()
    {
        return Err(OutputError::SizeMismatch {
            expected: mesh.num_nodes(),
            got: state.len(),
        });
    }
    Ok(())
}

/// CSV with header `x,y,u,c,p` and one row per node in mesh order.
pub fn csv_grid(mesh: &Mesh, state: &State) -> Result<String, OutputError> {
    check_state(mesh, state)?;
    let mut out = String::from("x,y,u,c,p\n");
    for (i, &[x, y]) in mesh.nodes().iter().enumerate() {
        let row = [x, y, state.u[i], state.c[i], state.p[i]]
            .map(fmt17)
            .join(",");
        out.push_str(&row);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_csv_grid(path: &Path, mesh: &Mesh, state: &State) -> Result<(), OutputError> {
    write_file(path, &csv_grid(mesh, state)?)
}

/// Columns of a CSV grid file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GridTable {
    pub points: Vec<[f64; 2]>,
    pub u: Vec<f64>,
    pub c: Vec<f64>,
    pub p: Vec<f64>,
}

pub fn read_csv_grid(path: &Path) -> Result<GridTable, OutputError> {
    let file = File::open(path).map_err(io_err(path))?;
    let parse_err = |line: usize, reason: String| OutputError::Parse {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut table = GridTable::default();
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if k == 0 {
            if line.trim() != "x,y,u,c,p" {
                return Err(parse_err(1, format!("unexpected header {line:?}")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let values: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| parse_err(k + 1, e.to_string()))?;
        let [x, y, u, c, p] = values[..] else {
            return Err(parse_err(
                k + 1,
                format!("expected 5 columns, got {}", values.len()),
            ));
        };
        table.points.push([x, y]);
        table.u.push(u);
        table.c.push(c);
        table.p.push(p);
    }
    Ok(table)
}

/// ASCII legacy VTK structured grid with point scalars `u`, `c`, `p`.
pub fn vtk_structured(mesh: &Mesh, state: &State) -> Result<String, OutputError> {
    check_state(mesh, state)?;
    let n = mesh.cells_per_side() + 1;
    let m = mesh.num_nodes();
    let mut out = String::new();
    // writing into a String cannot fail
    let _ = writeln!(out, "# vtk DataFile Version 3.0");
    let _ = writeln!(out, "invasion-fct t = {}", fmt17(state.t));
    let _ = writeln!(out, "ASCII");
    let _ = writeln!(out, "DATASET STRUCTURED_GRID");
    let _ = writeln!(out, "DIMENSIONS {n} {n} 1");
    let _ = writeln!(out, "POINTS {m} double");
    for &[x, y] in mesh.nodes() {
        let _ = writeln!(out, "{} {} 0", fmt17(x), fmt17(y));
    }
    let _ = writeln!(out, "POINT_DATA {m}");
    for (name, field) in [("u", &state.u), ("c", &state.c), ("p", &state.p)] {
        let _ = writeln!(out, "SCALARS {name} double 1");
        let _ = writeln!(out, "LOOKUP_TABLE default");
        for &v in field.iter() {
            let _ = writeln!(out, "{}", fmt17(v));
        }
    }
    Ok(out)
}

pub fn write_vtk(path: &Path, mesh: &Mesh, state: &State) -> Result<(), OutputError> {
    write_file(path, &vtk_structured(mesh, state)?)
}

/// One row of a line extraction: arc length, position and the three fields.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineRow {
    pub s: f64,
    pub x: f64,
    pub y: f64,
    pub u: f64,
    pub c: f64,
    pub p: f64,
}

pub fn write_line_csv(path: &Path, rows: &[LineRow]) -> Result<(), OutputError> {
    let mut out = String::from("s,x,y,u,c,p\n");
    for r in rows {
        out.push_str(&[r.s, r.x, r.y, r.u, r.c, r.p].map(fmt17).join(","));
        out.push('\n');
    }
    write_file(path, &out)
}

/// Generic CSV table with a header row.
pub fn write_table_csv(
    path: &Path,
    header: &[&str],
    rows: &[Vec<String>],
) -> Result<(), OutputError> {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    write_file(path, &out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), OutputError> {
    let text = serde_json::to_string_pretty(value).map_err(|source| OutputError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    write_file(path, &(text + "\n"))
}

/// Append-only log with one JSON object per line.
#[derive(Debug)]
pub struct JsonLines {
    path: PathBuf,
    out: BufWriter<File>,
}

impl JsonLines {
    pub fn create(path: &Path) -> Result<Self, OutputError> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        let file = File::create(path).map_err(io_err(path))?;
        Ok(Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> Result<(), OutputError> {
        serde_json::to_writer(&mut self.out, record).map_err(|source| OutputError::Json {
            path: self.path.clone(),
            source,
        })?;
        self.out.write_all(b"\n").map_err(io_err(&self.path))
    }

    pub fn finish(mut self) -> Result<(), OutputError> {
        self.out.flush().map_err(io_err(&self.path))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Rectangle;

    fn state(mesh: &Mesh) -> State {
        let f = |k: f64| {
            mesh.nodes()
                .iter()
                .map(|&[x, y]| (k * x + y).sin() / 3.0)
                .collect::<Vec<_>>()
        };
        State {
            u: f(1.0),
            c: f(0.1),
            p: f(std::f64::consts::PI),
            t: 0.1 + 0.2,
        }
    }

    #[test]
    fn single_cell_csv_has_four_rows() {
        let mesh = Mesh::uniform(Rectangle::square(1.0), 0).unwrap();
        let text = csv_grid(&mesh, &state(&mesh)).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[0], "x,y,u,c,p");
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mesh = Mesh::uniform(Rectangle::square(20.0), 3).unwrap();
        let s = state(&mesh);
        let path = dir.path().join("nested").join("snap.csv");
        write_csv_grid(&path, &mesh, &s).unwrap();
        let back = read_csv_grid(&path).unwrap();
        assert_eq!(back.points, mesh.nodes());
        assert_eq!(back.u, s.u);
        assert_eq!(back.c, s.c);
        assert_eq!(back.p, s.p);
    }

    #[test]
    fn fmt17_round_trips() {
        for v in [0.1, 1.0 / 3.0, 1e-300, -2.5e17, f64::MIN_POSITIVE, 0.0] {
            assert_eq!(fmt17(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn vtk_declares_point_count() {
        let mesh = Mesh::uniform(Rectangle::square(20.0), 2).unwrap();
        let text = vtk_structured(&mesh, &state(&mesh)).unwrap();
        assert!(text.contains("DIMENSIONS 5 5 1"));
        assert!(text.contains("POINTS 25 double"));
        assert!(text.contains("POINT_DATA 25"));
        for name in ["u", "c", "p"] {
            assert!(text.contains(&format!("SCALARS {name} double 1")));
        }
        assert_eq!(text.lines().count(), 6 + 25 + 1 + 3 * (2 + 25));
    }

    #[test]
    fn size_mismatch_is_rejected() {
        let mesh = Mesh::uniform(Rectangle::square(1.0), 1).unwrap();
        let mut s = state(&mesh);
        s.u.pop();
        assert!(matches!(
            csv_grid(&mesh, &s),
            Err(OutputError::SizeMismatch { .. })
        ));
    }

    #[test]
    fn json_lines_one_record_per_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let mut log = JsonLines::create(&path).unwrap();
        for k in 0..3 {
            log.write(&serde_json::json!({ "step": k, "value": 0.5 * k as f64 }))
                .unwrap();
        }
        log.finish().unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let records: Vec<serde_json::Value> = text
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(records.len(), 3);
        assert_eq!(records[2]["step"], 2);
    }

    #[test]
    fn unwritable_path_reports_it() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, "x").unwrap();
        let mesh = Mesh::uniform(Rectangle::square(1.0), 0).unwrap();
        let err = write_csv_grid(&blocker.join("snap.csv"), &mesh, &state(&mesh)).unwrap_err();
        assert!(err.to_string().contains("file"));
    }
}
