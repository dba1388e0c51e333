//! Algebraic flux correction: antidiffusive fluxes, prelimiting, the Zalesak
//! limiter and the limited correction of the low-order predictor.
//!
//! Fluxes and limiters are stored per edge of the sparsity pattern, in the
//! orientation `i < j` of [`SparsityPattern::edges`]. The opposite
//! orientation is implied: `f_ji = -f_ij`, `alpha_ji = alpha_ij`.

use crate::assembly::LumpedMass;
use crate::sparse::{SparseError, SparseMatrix, SparsityPattern};

/// Denominators below this magnitude are treated as zero.
const TINY: f64 = 1e-300;

/// Antisymmetric edge fluxes `f_ij`.
#[derive(Debug, Clone, PartialEq)]
pub struct FluxSet {
    values: Vec<f64>,
}

impl FluxSet {
    pub fn zeros(pattern: &SparsityPattern) -> Self {
        Self {
            values: vec![0.0; pattern.edges().len()],
        }
    }

    pub fn from_edge_values(values: Vec<f64>) -> Self {
        Self { values }
    }

    /// Flux of each edge in its stored orientation `i < j`.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// `f_ij` for an arbitrary orientation; `None` if `{i, j}` is not an edge.
    pub fn get(&self, pattern: &SparsityPattern, i: usize, j: usize) -> Option<f64> {
        edge_index(pattern, i, j).map(|(e, sign)| sign * self.values[e])
    }

    pub fn norm_l1(&self) -> f64 {
        self.values.iter().map(|f| f.abs()).sum()
    }
}

/// Symmetric correction factors `alpha_ij` in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LimiterSet {
    values: Vec<f64>,
}

impl LimiterSet {
    pub fn constant(pattern: &SparsityPattern, value: f64) -> Self {
        Self {
            values: vec![value; pattern.edges().len()],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, pattern: &SparsityPattern, i: usize, j: usize) -> Option<f64> {
        edge_index(pattern, i, j).map(|(e, _)| self.values[e])
    }
}

/// Local extrema of the predictor over `N_i ∪ {i}`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalBounds {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl LocalBounds {
    pub fn new(pattern: &SparsityPattern, ubar: &[f64]) -> Self {
        let mut min = ubar.to_vec();
        let mut max = ubar.to_vec();
        for e in pattern.edges() {
            let (ui, uj) = (ubar[e.i], ubar[e.j]);
            min[e.i] = min[e.i].min(uj);
            max[e.i] = max[e.i].max(uj);
            min[e.j] = min[e.j].min(ui);
            max[e.j] = max[e.j].max(ui);
        }
        Self { min, max }
    }
}

/// Position of `{i, j}` in the edge list and the orientation sign.
fn edge_index(pattern: &SparsityPattern, i: usize, j: usize) -> Option<(usize, f64)> {
    let (lo, hi, sign) = if i < j { (i, j, 1.0) } else { (j, i, -1.0) };
    if lo == hi {
        return None;
    }
    let slot = pattern.find(lo, hi)?;
    pattern
        .edges()
        .binary_search_by_key(&slot, |e| e.ij)
        .ok()
        .map(|e| (e, sign))
}

/// Algebraic fluxes of one fixed-point iteration:
///
/// ```text
/// f_ij = (-m_ij + theta tau d_new_ij) (u_lag_j - u_lag_i)
///      + ( m_ij + (1 - theta) tau d_old_ij) (u_old_j - u_old_i)
/// ```
pub fn compute_fluxes(
    mass: &SparseMatrix,
    d_new: &SparseMatrix,
    d_old: &SparseMatrix,
    u_lag: &[f64],
    u_old: &[f64],
    tau: f64,
    theta: f64,
) -> Result<FluxSet, SparseError> {
    let mut out = FluxSet::zeros(mass.pattern());
    compute_fluxes_into(mass, d_new, d_old, u_lag, u_old, tau, theta, &mut out)?;
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
pub fn compute_fluxes_into(
    mass: &SparseMatrix,
    d_new: &SparseMatrix,
    d_old: &SparseMatrix,
    u_lag: &[f64],
    u_old: &[f64],
    tau: f64,
    theta: f64,
    out: &mut FluxSet,
) -> Result<(), SparseError> {
    mass.check_same_pattern(d_new)?;
    mass.check_same_pattern(d_old)?;
    let n = mass.dim();
    for v in [u_lag, u_old] {
        if v.len() != n {
            return Err(SparseError::DimensionMismatch {
                expected: n,
                got: v.len(),
            });
        }
    }
    let (m, dn, dold) = (mass.values(), d_new.values(), d_old.values());
    let edges = mass.pattern().edges();
    out.values.resize(edges.len(), 0.0);
    for (f, e) in out.values.iter_mut().zip(edges) {
        let mij = m[e.ij];
        *f = (-mij + theta * tau * dn[e.ij]) * (u_lag[e.j] - u_lag[e.i])
            + (mij + (1.0 - theta) * tau * dold[e.ij]) * (u_old[e.j] - u_old[e.i]);
    }
    Ok(())
}

/// Cancel fluxes that point down the gradient of the predictor:
/// `f_ij := 0` where `f_ij (ubar_j - ubar_i) > 0`.
pub fn prelimit(flux: &mut FluxSet, pattern: &SparsityPattern, ubar: &[f64]) {
    for (f, e) in flux.values.iter_mut().zip(pattern.edges()) {
        if *f * (ubar[e.j] - ubar[e.i]) > 0.0 {
            *f = 0.0;
        }
    }
}

/// Zalesak's limiter for the fluxes `flux` and predictor `ubar`.
pub fn zalesak(
    flux: &FluxSet,
    ubar: &[f64],
    lumped: &LumpedMass,
    pattern: &SparsityPattern,
) -> LimiterSet {
    let mut out = LimiterSet::constant(pattern, 1.0);
    let mut scratch = ZalesakScratch::default();
    let bounds = LocalBounds::new(pattern, ubar);
    zalesak_into(flux, ubar, &bounds, lumped, pattern, &mut scratch, &mut out);
    out
}

/// Per-node work arrays of the limiter, kept between calls.
#[derive(Debug, Clone, Default)]
pub struct ZalesakScratch {
    p_plus: Vec<f64>,
    p_minus: Vec<f64>,
    r_plus: Vec<f64>,
    r_minus: Vec<f64>,
}

/// [`zalesak`] with the local bounds of `ubar` precomputed and the output
/// and work arrays reused.
pub fn zalesak_into(
    flux: &FluxSet,
    ubar: &[f64],
    bounds: &LocalBounds,
    lumped: &LumpedMass,
    pattern: &SparsityPattern,
    scratch: &mut ZalesakScratch,
    out: &mut LimiterSet,
) {
    let n = pattern.dim();
    let edges = pattern.edges();
    let s = scratch;
    for v in [&mut s.p_plus, &mut s.p_minus, &mut s.r_plus, &mut s.r_minus] {
        v.resize(n, 0.0);
    }
    s.p_plus.fill(0.0);
    s.p_minus.fill(0.0);

    // 1. positive and negative flux sums into each node
    for (&f, e) in flux.values.iter().zip(edges) {
        if f > 0.0 {
            s.p_plus[e.i] += f;
            s.p_minus[e.j] -= f;
        } else if f < 0.0 {
            s.p_minus[e.i] += f;
            s.p_plus[e.j] -= f;
        }
    }

    // 2.-3. distance to the local extrema and nodal correction factors
    for i in 0..n {
        let q_plus = lumped[i] * (bounds.max[i] - ubar[i]);
        let q_minus = lumped[i] * (bounds.min[i] - ubar[i]);
        s.r_plus[i] = nodal_factor(q_plus, s.p_plus[i]);
        s.r_minus[i] = nodal_factor(q_minus, s.p_minus[i]);
    }

    // 4. edge factors from the sign of the flux
    out.values.resize(edges.len(), 1.0);
    for ((a, &f), e) in out.values.iter_mut().zip(&flux.values).zip(edges) {
        *a = if f > 0.0 {
            s.r_plus[e.i].min(s.r_minus[e.j])
        } else if f < 0.0 {
            s.r_minus[e.i].min(s.r_plus[e.j])
        } else {
            1.0
        };
    }
}

#[inline]
fn nodal_factor(q: f64, p: f64) -> f64 {
    if p.abs() < TINY {
        1.0
    } else {
        (q / p).min(1.0)
    }
}

/// `(sum_j alpha_ij f_ij)_i`.
pub fn limited_flux_sum(
    alpha: &LimiterSet,
    flux: &FluxSet,
    pattern: &SparsityPattern,
    out: &mut [f64],
) {
    out.iter_mut().for_each(|x| *x = 0.0);
    for ((&a, &f), e) in alpha.values.iter().zip(&flux.values).zip(pattern.edges()) {
        let g = a * f;
        out[e.i] += g;
        out[e.j] -= g;
    }
}

/// `u~_i = ubar_i + (1/m_i) sum_j alpha_ij f_ij`.
pub fn apply_correction(
    ubar: &[f64],
    alpha: &LimiterSet,
    flux: &FluxSet,
    lumped: &LumpedMass,
    pattern: &SparsityPattern,
) -> Vec<f64> {
    let mut sums = vec![0.0; ubar.len()];
    limited_flux_sum(alpha, flux, pattern, &mut sums);
    ubar.iter()
        .zip(&sums)
        .enumerate()
        .map(|(i, (u, s))| u + s / lumped[i])
        .collect()
}
