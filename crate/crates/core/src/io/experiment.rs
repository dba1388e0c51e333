//! Running manifests and writing their results.
//!
//! Layout of an output directory:
//!
//! ```text
//! manifest.json          resolved configuration
//! table.csv              one row per run
//! <run>/summary.json     means, integrals, probe values and counters
//! <run>/diagnostics.jsonl
//! <run>/t<time>.csv      nodal snapshot (also .vtk), plus line_t<time>.csv
//! <run>/final.csv        state at the final time (also .vtk, line_final.csv)
//! ```
//!
//! Single runs write directly into the output directory.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use super::config::{OutputFormat, RunManifest};
use super::fields::{self, FieldError};
use super::output::{self, fmt17, JsonLines, LineRow, OutputError};
use crate::assembly::LumpedMass;
use crate::mesh::{Mesh, MeshError};
use crate::stepper::{Range, RunEvent, SetupError, Simulation, State, StepDiagnostics};

/// Diagnostics logs are thinned to about this many records.
const MAX_DIAGNOSTIC_RECORDS: usize = 10_000;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Setup(#[from] SetupError),
    #[error(transparent)]
    Output(#[from] OutputError),
    #[error(transparent)]
    Field(#[from] FieldError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Failed,
}

/// Mean, integral and probe value of one field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FieldSummary {
    pub mean: f64,
    pub integral: f64,
    pub probe: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub label: String,
    pub status: RunStatus,
    pub error: Option<String>,
    pub refinements: u32,
    pub nodes: usize,
    pub requested_tau: f64,
    pub tau: f64,
    pub steps: usize,
    /// Time of the last accepted state.
    pub time: f64,
    pub probe_point: [f64; 2],
    pub u: Option<FieldSummary>,
    pub c: Option<FieldSummary>,
    pub p: Option<FieldSummary>,
    /// Extremes over all accepted states.
    pub u_range: Option<Range>,
    pub last_iterations: Option<usize>,
    pub total_iterations: usize,
    pub nonconverged_steps: usize,
    pub explicit_violations: usize,
    pub implicit_violations: usize,
    pub aposteriori_violations: usize,
    pub m_matrix_failures: usize,
    pub split_steps: usize,
    pub implicit_bound: f64,
    pub wall_seconds: f64,
}

impl RunRecord {
    pub fn completed(&self) -> bool {
        self.status == RunStatus::Completed
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub output_dir: PathBuf,
    pub runs: Vec<RunRecord>,
}

impl ExperimentReport {
    pub fn all_completed(&self) -> bool {
        self.runs.iter().all(RunRecord::completed)
    }
}

#[derive(Serialize)]
struct DiagnosticsRecord<'a> {
    step: usize,
    #[serde(flatten)]
    diagnostics: &'a StepDiagnostics,
}

fn summarize(
    field: &[f64],
    mesh: &Mesh,
    lumped: &LumpedMass,
    probe: [f64; 2],
) -> Result<FieldSummary, FieldError> {
    let range = Range::of(field);
    Ok(FieldSummary {
        mean: fields::mean_value(field, lumped, mesh.domain().area()),
        integral: fields::integral(field, lumped),
        probe: fields::point_value(field, mesh, probe[0], probe[1])?,
        min: range.min,
        max: range.max,
    })
}

fn line_rows(mesh: &Mesh, state: &State, samples: usize) -> Result<Vec<LineRow>, FieldError> {
    fields::diagonal_points(mesh, samples)?
        .into_iter()
        .map(|pt| {
            let at = |f: &[f64]| fields::point_value(f, mesh, pt.x, pt.y);
            Ok(LineRow {
                s: pt.s,
                x: pt.x,
                y: pt.y,
                u: at(&state.u)?,
                c: at(&state.c)?,
                p: at(&state.p)?,
            })
        })
        .collect()
}

fn write_state(
    dir: &Path,
    stem: &str,
    manifest: &RunManifest,
    mesh: &Mesh,
    state: &State,
) -> Result<(), ExperimentError> {
    for format in &manifest.formats {
        match format {
            OutputFormat::Csv => {
                output::write_csv_grid(&dir.join(format!("{stem}.csv")), mesh, state)?
            }
            OutputFormat::Vtk => output::write_vtk(&dir.join(format!("{stem}.vtk")), mesh, state)?,
        }
    }
    let rows = line_rows(mesh, state, manifest.line_samples)?;
    output::write_line_csv(&dir.join(format!("line_{stem}.csv")), &rows)?;
    Ok(())
}

/// Run one manifest (its sweep is ignored) into `manifest.output_dir`.
///
/// A failing time step does not make this an error: the record carries
/// [`RunStatus::Failed`] and everything written up to that point stays on
/// disk. Errors are reserved for setup and I/O problems.
pub fn run_single(manifest: &RunManifest, label: &str) -> Result<RunRecord, ExperimentError> {
    let started = Instant::now();
    let mesh = Mesh::uniform(manifest.rectangle(), manifest.refinements)?;
    let mut sim = Simulation::new(mesh, manifest.scheme.clone())?;
    let init = manifest.initial;
    let initial = sim.initialize(
        |x, y| init.eval(x, y).0,
        |x, y| init.eval(x, y).1,
        |x, y| init.eval(x, y).2,
    );
    let dir = manifest.output_dir.clone();
    let (steps, tau) = sim.time_grid();
    let stride = steps.div_ceil(MAX_DIAGNOSTIC_RECORDS).max(1);
    log::info!(
        "{}: {} nodes, {:?} scheme, {} steps of {:.6} up to t = {}",
        if label.is_empty() {
            dir.display().to_string()
        } else {
            label.to_string()
        },
        sim.mesh().num_nodes(),
        manifest.scheme.scheme,
        steps,
        tau,
        manifest.scheme.final_time
    );

    let mut log = JsonLines::create(&dir.join("diagnostics.jsonl"))?;
    let mut io_error: Option<ExperimentError> = None;
    let mut last_state: Option<(usize, State)> = None;
    let mut last_diag: Option<StepDiagnostics> = None;
    let progress_every = (steps / 10).max(1);
    let result = {
        let mesh = sim.mesh().clone();
        sim.run(initial.clone(), &manifest.snapshot_times, |event| {
            if io_error.is_some() {
                return;
            }
            let res = match event {
                RunEvent::Step {
                    step,
                    state,
                    diagnostics,
                } => {
                    if step % progress_every == 0 {
                        log::info!("t = {:.4}, iterations {}", state.t, diagnostics.iterations);
                    }
                    last_diag = Some(diagnostics.clone());
                    if step % 64 == 0 || step == steps {
                        last_state = Some((step, state.clone()));
                    }
                    if step % stride == 0 || step == steps {
                        log.write(&DiagnosticsRecord { step, diagnostics })
                            .map_err(ExperimentError::from)
                    } else {
                        Ok(())
                    }
                }
                RunEvent::Snapshot { requested, state } => {
                    write_state(&dir, &format!("t{requested}"), manifest, &mesh, state)
                }
            };
            if let Err(e) = res {
                io_error = Some(e);
            }
        })
    };
    log.finish()?;
    if let Some(e) = io_error {
        return Err(e);
    }

    let lumped = sim.lumped_mass().clone();
    let mesh = sim.mesh();
    let field_summaries = |state: &State| -> Result<[FieldSummary; 3], FieldError> {
        Ok([
            summarize(&state.u, mesh, &lumped, manifest.probe)?,
            summarize(&state.c, mesh, &lumped, manifest.probe)?,
            summarize(&state.p, mesh, &lumped, manifest.probe)?,
        ])
    };
    let mut record = RunRecord {
        label: label.to_string(),
        status: RunStatus::Completed,
        error: None,
        refinements: manifest.refinements,
        nodes: mesh.num_nodes(),
        requested_tau: manifest.scheme.tau,
        tau,
        steps,
        time: 0.0,
        probe_point: manifest.probe,
        u: None,
        c: None,
        p: None,
        u_range: None,
        last_iterations: last_diag.as_ref().map(|d| d.iterations),
        total_iterations: 0,
        nonconverged_steps: 0,
        explicit_violations: 0,
        implicit_violations: 0,
        aposteriori_violations: 0,
        m_matrix_failures: 0,
        split_steps: 0,
        implicit_bound: sim.implicit_bound(),
        wall_seconds: 0.0,
    };
    match result {
        Ok(summary) => {
            let state = &summary.final_state;
            write_state(&dir, "final", manifest, mesh, state)?;
            let [u, c, p] = field_summaries(state)?;
            record.time = state.t;
            (record.u, record.c, record.p) = (Some(u), Some(c), Some(p));
            record.u_range = Some(summary.u);
            record.total_iterations = summary.total_iterations;
            record.nonconverged_steps = summary.nonconverged_steps;
            record.explicit_violations = summary.explicit_violations;
            record.implicit_violations = summary.implicit_violations;
            record.aposteriori_violations = summary.aposteriori_violations;
            record.m_matrix_failures = summary.m_matrix_failures;
            record.split_steps = summary.split_steps;
        }
        Err(err) => {
            log::error!("{err}");
            record.status = RunStatus::Failed;
            record.error = Some(err.to_string());
            // last state kept by the observer, which may trail the failure by a few steps
            let (_, state) = last_state.unwrap_or((0, initial));
            let [u, c, p] = field_summaries(&state)?;
            record.time = state.t;
            (record.u, record.c, record.p) = (Some(u), Some(c), Some(p));
            write_state(&dir, "last", manifest, mesh, &state)?;
        }
    }
    record.wall_seconds = started.elapsed().as_secs_f64();
    output::write_json(&dir.join("summary.json"), &record)?;
    Ok(record)
}

const TABLE_HEADER: [&str; 18] = [
    "label",
    "status",
    "refinements",
    "tau",
    "steps",
    "time",
    "mean_u",
    "mean_c",
    "mean_p",
    "probe_u",
    "probe_c",
    "probe_p",
    "min_u",
    "last_iterations",
    "total_iterations",
    "implicit_violations",
    "aposteriori_violations",
    "m_matrix_failures",
];

fn table_row(r: &RunRecord) -> Vec<String> {
    let opt = |v: Option<f64>| v.map(fmt17).unwrap_or_default();
    let status = if r.completed() { "completed" } else { "failed" };
    vec![
        r.label.clone(),
        status.to_string(),
        r.refinements.to_string(),
        fmt17(r.tau),
        r.steps.to_string(),
        fmt17(r.time),
        opt(r.u.map(|s| s.mean)),
        opt(r.c.map(|s| s.mean)),
        opt(r.p.map(|s| s.mean)),
        opt(r.u.map(|s| s.probe)),
        opt(r.c.map(|s| s.probe)),
        opt(r.p.map(|s| s.probe)),
        opt(r.u_range.map(|s| s.min)),
        r.last_iterations.map(|n| n.to_string()).unwrap_or_default(),
        r.total_iterations.to_string(),
        r.implicit_violations.to_string(),
        r.aposteriori_violations.to_string(),
        r.m_matrix_failures.to_string(),
    ]
}

/// Run every row of the manifest's sweep (or the manifest alone), then write
/// `manifest.json` and `table.csv` into the output directory.
pub fn run_experiment(manifest: &RunManifest) -> Result<ExperimentReport, ExperimentError> {
    output::write_json(&manifest.output_dir.join("manifest.json"), manifest)?;
    let mut runs = Vec::new();
    for (label, single) in manifest.expand() {
        runs.push(run_single(&single, &label)?);
    }
    let rows: Vec<_> = runs.iter().map(table_row).collect();
    output::write_table_csv(&manifest.output_dir.join("table.csv"), &TABLE_HEADER, &rows)?;
    Ok(ExperimentReport {
        output_dir: manifest.output_dir.clone(),
        runs,
    })
}
