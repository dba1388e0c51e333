//! Finite element matrices of the cell-density equation.
//!
//! All matrices live on the node-neighbour pattern of the mesh. Cell integrals
//! use 3x3 tensor Gauss quadrature. Because every cell of a uniform mesh is
//! the same rectangle, the quadrature is carried out once on the reference
//! cell and stored as small tensors:
//!
//! * `mass3[a][b][k] = (phi_k phi_b, phi_a)_K`
//! * `chem[a][b][k]  = (phi_b grad phi_k, grad phi_a)_K`
//!
//! With `u_h`, `c_h` bilinear on `K`, contracting these with nodal values is
//! identical to running the quadrature per cell (the rule is exact for these
//! integrands). The one exception is `1 - |u_h|` on a cell where `u_h`
//! changes sign; there the absolute value is taken pointwise at the
//! quadrature nodes.

use std::sync::Arc;

use thiserror::Error;

use crate::mesh::Mesh;
use crate::quadrature::{gauss3x3_square, q1_basis, q1_basis_grad};
use crate::sparse::{SparseError, SparseMatrix, SparsityPattern};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssemblyError {
    #[error("{what} has length {got}, expected {expected}")]
    SizeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error(transparent)]
    Sparse(#[from] SparseError),
    #[error("low-order operator has positive off-diagonal entry {value} at ({row}, {col})")]
    NotZMatrix { row: usize, col: usize, value: f64 },
}

/// How `1 - u_h` enters the reaction part of the stiffness matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StiffnessVariant {
    /// `1 - u_h`, the plain Galerkin form.
    #[default]
    Raw,
    /// `1 - |u_h|`, the form used by the low-order and FCT schemes.
    Abs,
}

/// Coefficients of the stiffness matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StiffnessParams {
    /// Proliferation rate.
    pub mu: f64,
    /// Haptotaxis rate.
    pub chi: f64,
    /// Optional cell diffusion coefficient (inverse of `alpha`).
    pub alpha_inv: Option<f64>,
}

/// Diagonal of the row-sum lumped mass matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LumpedMass(Vec<f64>);

impl LumpedMass {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }
}

impl std::ops::Index<usize> for LumpedMass {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

#[derive(Debug, Clone)]
struct QuadPoint {
    phi: [f64; 4],
    grad: [[f64; 2]; 4],
    weight: f64,
}

/// Reusable assembler for one mesh.
#[derive(Debug, Clone)]
pub struct Assembler {
    pattern: Arc<SparsityPattern>,
    num_nodes: usize,
    cells: Vec<[usize; 4]>,
    slots: Vec<[usize; 16]>,
    mass2: [[f64; 4]; 4],
    mass3_flat: [[f64; 4]; 16],
    chem_flat: [[f64; 4]; 16],
    lap: [[f64; 4]; 4],
    quad: Vec<QuadPoint>,
}

impl Assembler {
    pub fn new(mesh: &Mesh) -> Self {
        let pattern = Arc::new(SparsityPattern::from_mesh(mesh));
        let (hx, hy) = mesh.cell_size();
        let area = hx * hy;
        let quad: Vec<QuadPoint> = gauss3x3_square()
            .into_iter()
            .map(|([xi, eta], w)| {
                let g = q1_basis_grad(xi, eta);
                QuadPoint {
                    phi: q1_basis(xi, eta),
                    grad: g.map(|d| [d[0] / hx, d[1] / hy]),
                    weight: w * area,
                }
            })
            .collect();

        let mut mass2 = [[0.0; 4]; 4];
        let mut mass3 = [[[0.0; 4]; 4]; 4];
        let mut chem = [[[0.0; 4]; 4]; 4];
        let mut lap = [[0.0; 4]; 4];
        for q in &quad {
            for a in 0..4 {
                for b in 0..4 {
                    mass2[a][b] += q.weight * q.phi[a] * q.phi[b];
                    lap[a][b] += q.weight * dot(q.grad[a], q.grad[b]);
                    for k in 0..4 {
                        mass3[a][b][k] += q.weight * q.phi[a] * q.phi[b] * q.phi[k];
                        chem[a][b][k] += q.weight * q.phi[b] * dot(q.grad[k], q.grad[a]);
                    }
                }
            }
        }

        // mirror so that symmetric tensors are bitwise symmetric
        for a in 0..4 {
            for b in 0..a {
                mass2[a][b] = mass2[b][a];
                lap[a][b] = lap[b][a];
                mass3[a][b] = mass3[b][a];
            }
        }

        let cells = mesh.cells().to_vec();
        let slots = cells
            .iter()
            .map(|cell| {
                let mut s = [0usize; 16];
                for a in 0..4 {
                    for b in 0..4 {
                        s[4 * a + b] = pattern
                            .find(cell[a], cell[b])
                            .expect("cell pair in pattern");
                    }
                }
                s
            })
            .collect();

        Self {
            pattern,
            num_nodes: mesh.num_nodes(),
            cells,
            slots,
            mass2,
            mass3_flat: flatten(&mass3),
            chem_flat: flatten(&chem),
            lap,
            quad,
        }
    }

    pub fn pattern(&self) -> &Arc<SparsityPattern> {
        &self.pattern
    }

    pub fn zeros(&self) -> SparseMatrix {
        SparseMatrix::zeros(self.pattern.clone())
    }

    fn assemble_constant(&self, local: &[[f64; 4]; 4]) -> SparseMatrix {
        let mut m = self.zeros();
        let vals = m.values_mut();
        for slots in &self.slots {
            for a in 0..4 {
                for b in 0..4 {
                    vals[slots[4 * a + b]] += local[a][b];
                }
            }
        }
        m
    }

    /// Consistent mass matrix `m_ij = (phi_j, phi_i)`.
    pub fn mass(&self) -> SparseMatrix {
        self.assemble_constant(&self.mass2)
    }

    /// Laplacian stiffness `(grad phi_j, grad phi_i)`.
    pub fn laplacian(&self) -> SparseMatrix {
        self.assemble_constant(&self.lap)
    }

    fn check_len(&self, what: &'static str, v: &[f64]) -> Result<(), AssemblyError> {
        if v.len() != self.num_nodes {
            return Err(AssemblyError::SizeMismatch {
                what,
                expected: self.num_nodes,
                got: v.len(),
            });
        }
        Ok(())
    }

    /// Assemble the stiffness matrix for the state `(u, c)` into `out`:
    /// `a_ij = -mu (phi_j (1 - u_h), phi_i) - chi (phi_j grad c_h, grad phi_i)
    ///         [+ alpha_inv (grad phi_j, grad phi_i)]`.
    pub fn stiffness_into(
        &self,
        u: &[f64],
        c: &[f64],
        params: StiffnessParams,
        variant: StiffnessVariant,
        out: &mut SparseMatrix,
    ) -> Result<(), AssemblyError> {
        self.check_len("u", u)?;
        self.check_len("c", c)?;
        if !Arc::ptr_eq(out.pattern(), &self.pattern) && **out.pattern() != *self.pattern {
            return Err(SparseError::PatternMismatch.into());
        }
        let StiffnessParams { mu, chi, alpha_inv } = params;
        let diff = alpha_inv.unwrap_or(0.0);
        // part of the local matrix that does not depend on the state
        let mut base = [0.0; 16];
        for a in 0..4 {
            for b in 0..4 {
                base[4 * a + b] = -mu * self.mass2[a][b] + diff * self.lap[a][b];
            }
        }
        out.fill(0.0);
        let vals = out.values_mut();
        for (cell, slots) in self.cells.iter().zip(&self.slots) {
            let uk = cell.map(|v| u[v]);
            let ck = cell.map(|v| c[v]);
            let mut local = base;
            match self.reaction_sign(&uk, variant) {
                Some(sign) => {
                    let s = mu * sign;
                    for (l, t) in local.iter_mut().zip(&self.mass3_flat) {
                        *l += s * dot4(t, &uk);
                    }
                }
                None => self.kinked_reaction(&uk, mu, diff, &mut local),
            }
            for ((l, t), &slot) in local.iter().zip(&self.chem_flat).zip(slots) {
                vals[slot] += l - chi * dot4(t, &ck);
            }
        }
        Ok(())
    }

    /// Sign `s` with `(phi_b (1 - s u_h), phi_a)` exact for the cell, or
    /// `None` when `|u_h|` has a kink inside it.
    fn reaction_sign(&self, uk: &[f64; 4], variant: StiffnessVariant) -> Option<f64> {
        match variant {
            StiffnessVariant::Raw => Some(1.0),
            StiffnessVariant::Abs if uk.iter().all(|&v| v >= 0.0) => Some(1.0),
            StiffnessVariant::Abs if uk.iter().all(|&v| v <= 0.0) => Some(-1.0),
            StiffnessVariant::Abs => None,
        }
    }

    /// `-mu (phi_b (1 - |u_h|), phi_a)_K + diff (grad phi_b, grad phi_a)_K`
    /// with `|u_h|` taken pointwise at the quadrature nodes.
    fn kinked_reaction(&self, uk: &[f64; 4], mu: f64, diff: f64, out: &mut [f64; 16]) {
        let mut reaction = [[0.0; 4]; 4];
        for q in &self.quad {
            let uh: f64 = (0..4).map(|k| q.phi[k] * uk[k]).sum();
            let w = q.weight * (1.0 - uh.abs());
            for a in 0..4 {
                for b in a..4 {
                    reaction[a][b] += w * q.phi[a] * q.phi[b];
                }
            }
        }
        for a in 0..4 {
            for b in 0..4 {
                let r = if b >= a {
                    reaction[a][b]
                } else {
                    reaction[b][a]
                };
                out[4 * a + b] = -mu * r + diff * self.lap[a][b];
            }
        }
    }

    pub fn stiffness(
        &self,
        u: &[f64],
        c: &[f64],
        params: StiffnessParams,
        variant: StiffnessVariant,
    ) -> Result<SparseMatrix, AssemblyError> {
        let mut out = self.zeros();
        self.stiffness_into(u, c, params, variant, &mut out)?;
        Ok(out)
    }
}

#[inline]
fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
fn dot4(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3]
}

fn flatten(t: &[[[f64; 4]; 4]; 4]) -> [[f64; 4]; 16] {
    let mut out = [[0.0; 4]; 16];
    for a in 0..4 {
        for b in 0..4 {
            out[4 * a + b] = t[a][b];
        }
    }
    out
}

pub fn assemble_mass(mesh: &Mesh) -> SparseMatrix {
    Assembler::new(mesh).mass()
}

/// Row sums `m_i = sum_j m_ij` of the consistent mass matrix.
pub fn lump_mass(mass: &SparseMatrix) -> LumpedMass {
    LumpedMass(mass.row_sums())
}

pub fn assemble_stiffness(
    mesh: &Mesh,
    u: &[f64],
    c: &[f64],
    params: StiffnessParams,
    variant: StiffnessVariant,
) -> Result<SparseMatrix, AssemblyError> {
    Assembler::new(mesh).stiffness(u, c, params, variant)
}

/// Symmetric artificial diffusion: `d_ij = -max(a_ij, 0, a_ji)` off the
/// diagonal and zero row sums.
pub fn artificial_diffusion_into(
    a: &SparseMatrix,
    d: &mut SparseMatrix,
) -> Result<(), AssemblyError> {
    a.check_same_pattern(d)?;
    let pattern = a.pattern().clone();
    let av = a.values();
    let dv = d.values_mut();
    for i in 0..pattern.dim() {
        dv[pattern.diag_slot(i)] = 0.0;
    }
    for e in pattern.edges() {
        let v = -av[e.ij].max(0.0).max(av[e.ji]);
        dv[e.ij] = v;
        dv[e.ji] = v;
        dv[pattern.diag_slot(e.i)] -= v;
        dv[pattern.diag_slot(e.j)] -= v;
    }
    Ok(())
}

pub fn artificial_diffusion(a: &SparseMatrix) -> SparseMatrix {
    let mut d = SparseMatrix::zeros(a.pattern().clone());
    artificial_diffusion_into(a, &mut d).expect("shared pattern");
    d
}

/// `L = A + D`, checked to be a Z-matrix.
pub fn low_order_operator_into(
    a: &SparseMatrix,
    d: &SparseMatrix,
    out: &mut SparseMatrix,
) -> Result<(), AssemblyError> {
    a.check_same_pattern(d)?;
    a.check_same_pattern(out)?;
    let pattern = a.pattern().clone();
    let (av, dv) = (a.values(), d.values());
    for ((o, x), y) in out.values_mut().iter_mut().zip(av).zip(dv) {
        *o = x + y;
    }
    let ov = out.values();
    for e in pattern.edges() {
        if ov[e.ij] > 0.0 || ov[e.ji] > 0.0 {
            let (row, col, value) = if ov[e.ij] > 0.0 {
                (e.i, e.j, ov[e.ij])
            } else {
                (e.j, e.i, ov[e.ji])
            };
            return Err(AssemblyError::NotZMatrix { row, col, value });
        }
    }
    Ok(())
}

pub fn low_order_operator(
    a: &SparseMatrix,
    d: &SparseMatrix,
) -> Result<SparseMatrix, AssemblyError> {
    let mut out = SparseMatrix::zeros(a.pattern().clone());
    low_order_operator_into(a, d, &mut out)?;
    Ok(out)
}
