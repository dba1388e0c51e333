//! Scalar functionals and samples of finite element fields.

use thiserror::Error;

use crate::assembly::LumpedMass;
use crate::mesh::Mesh;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("point ({x}, {y}) lies outside the domain")]
    OutsideDomain { x: f64, y: f64 },
    #[error("field has {got} values, mesh has {expected} nodes")]
    SizeMismatch { expected: usize, got: usize },
    #[error("the line y = x does not cross the domain")]
    NoDiagonal,
    #[error("at least two samples are needed, got {0}")]
    TooFewSamples(usize),
}

fn check_len(mesh: &Mesh, field: &[f64]) -> Result<(), FieldError> {
    if field.len() != mesh.num_nodes() {
        return Err(FieldError::SizeMismatch {
            expected: mesh.num_nodes(),
            got: field.len(),
        });
    }
    Ok(())
}

/// `sum_i m_i v_i`, the exact integral of the Q1 interpolant.
pub fn integral(field: &[f64], lumped: &LumpedMass) -> f64 {
    field
        .iter()
        .zip(lumped.as_slice())
        .map(|(v, m)| v * m)
        .sum()
}

/// Integral divided by the area.
pub fn mean_value(field: &[f64], lumped: &LumpedMass, area: f64) -> f64 {
    integral(field, lumped) / area
}

/// Bilinear interpolation of the nodal field at `(x, y)`.
pub fn point_value(field: &[f64], mesh: &Mesh, x: f64, y: f64) -> Result<f64, FieldError> {
    check_len(mesh, field)?;
    if let Some(i) = mesh.node_at(x, y) {
        return Ok(field[i]);
    }
    let (cell, sx, sy) = mesh
        .locate(x, y)
        .ok_or(FieldError::OutsideDomain { x, y })?;
    let v = mesh.cells()[cell].map(|k| field[k]);
    // counter-clockwise from the lower-left corner
    Ok(v[0] * (1.0 - sx) * (1.0 - sy)
        + v[1] * sx * (1.0 - sy)
        + v[2] * sx * sy
        + v[3] * (1.0 - sx) * sy)
}

/// One point of a line extraction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSample {
    /// Arc length from the start of the line.
    pub s: f64,
    pub x: f64,
    pub y: f64,
}

/// `samples` equidistant points on the part of `y = x` inside the domain.
pub fn diagonal_points(mesh: &Mesh, samples: usize) -> Result<Vec<LineSample>, FieldError> {
    if samples < 2 {
        return Err(FieldError::TooFewSamples(samples));
    }
    let d = mesh.domain();
    let (start, end) = (d.x0.max(d.y0), d.x1.min(d.y1));
    if end < start {
        return Err(FieldError::NoDiagonal);
    }
    let step = (end - start) / (samples - 1) as f64;
    Ok((0..samples)
        .map(|k| {
            let t = if k + 1 == samples {
                end
            } else {
                start + k as f64 * step
            };
            LineSample {
                s: (t - start) * std::f64::consts::SQRT_2,
                x: t,
                y: t,
            }
        })
        .collect())
}

/// Values of `field` along `y = x` at uniform arc length: `(s, value)`.
pub fn line_extract(
    field: &[f64],
    mesh: &Mesh,
    samples: usize,
) -> Result<Vec<(f64, f64)>, FieldError> {
    diagonal_points(mesh, samples)?
        .into_iter()
        .map(|p| Ok((p.s, point_value(field, mesh, p.x, p.y)?)))
        .collect()
}
