//! Uniform quadrilateral meshes of a rectangle.
//!
//! Nodes are numbered lexicographically: `index = iy * (n + 1) + ix` where
//! `n = 2^r` is the number of cells per side, so x varies fastest. Cells are
//! numbered the same way and list their nodes counter-clockwise starting at
//! the lower-left corner, matching [`crate::quadrature::q1_basis`].

use thiserror::Error;

use crate::quadrature::{gauss3x3_square, q1_basis_grad};

/// Largest accepted refinement level (4^15 cells is already far beyond any
/// practical run).
pub const MAX_REFINEMENTS: u32 = 15;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("domain extent must be positive, got {width} x {height}")]
    NonPositiveExtent { width: f64, height: f64 },
    #[error("refinement level {0} exceeds the supported maximum {MAX_REFINEMENTS}")]
    TooManyRefinements(u32),
    #[error("cells are not squares (hx = {hx}, hy = {hy})")]
    NonSquareCells { hx: f64, hy: f64 },
}

/// Axis-aligned rectangle `[x0, x1] x [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rectangle {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rectangle {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    /// The square `(0, side)^2`.
    pub fn square(side: f64) -> Self {
        Self::new(0.0, 0.0, side, side)
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let tol = 1e-12 * self.width().max(self.height());
        x >= self.x0 - tol && x <= self.x1 + tol && y >= self.y0 - tol && y <= self.y1 + tol
    }
}

/// Uniformly refined quadrilateral mesh. Immutable after construction.
#[derive(Debug, Clone)]
pub struct Mesh {
    domain: Rectangle,
    refinements: u32,
    cells_per_side: usize,
    hx: f64,
    hy: f64,
    nodes: Vec<[f64; 2]>,
    cells: Vec<[usize; 4]>,
    neighbors: Vec<Vec<usize>>,
    node_cells: Vec<Vec<usize>>,
}

impl Mesh {
    /// Mesh of `domain` after `refinements` uniform refinements of a single
    /// cell: `4^r` cells and `(2^r + 1)^2` nodes.
    pub fn uniform(domain: Rectangle, refinements: u32) -> Result<Self, MeshError> {
        let (width, height) = (domain.width(), domain.height());
        if !(width > 0.0 && height > 0.0) || !width.is_finite() || !height.is_finite() {
            return Err(MeshError::NonPositiveExtent { width, height });
        }
        if refinements > MAX_REFINEMENTS {
            return Err(MeshError::TooManyRefinements(refinements));
        }
        let n = 1usize << refinements;
        let np = n + 1;
        let hx = width / n as f64;
        let hy = height / n as f64;

        let mut nodes = Vec::with_capacity(np * np);
        for iy in 0..np {
            // Exact end points; interior coordinates by multiplication so no drift.
            let y = if iy == n {
                domain.y1
            } else {
                domain.y0 + iy as f64 * hy
            };
            for ix in 0..np {
                let x = if ix == n {
                    domain.x1
                } else {
                    domain.x0 + ix as f64 * hx
                };
                nodes.push([x, y]);
            }
        }

        let mut cells = Vec::with_capacity(n * n);
        let mut node_cells = vec![Vec::with_capacity(4); np * np];
        for iy in 0..n {
            for ix in 0..n {
                let ll = iy * np + ix;
                let cell = [ll, ll + 1, ll + np + 1, ll + np];
                for &v in &cell {
                    node_cells[v].push(cells.len());
                }
                cells.push(cell);
            }
        }

        let mut neighbors: Vec<Vec<usize>> = vec![Vec::with_capacity(8); np * np];
        for cell in &cells {
            for &a in cell {
                for &b in cell {
                    if a != b {
                        neighbors[a].push(b);
                    }
                }
            }
        }
        for list in &mut neighbors {
            list.sort_unstable();
            list.dedup();
        }

        Ok(Self {
            domain,
            refinements,
            cells_per_side: n,
            hx,
            hy,
            nodes,
            cells,
            neighbors,
            node_cells,
        })
    }

    pub fn domain(&self) -> Rectangle {
        self.domain
    }

    pub fn refinements(&self) -> u32 {
        self.refinements
    }

    pub fn cells_per_side(&self) -> usize {
        self.cells_per_side
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> [f64; 2] {
        self.nodes[i]
    }

    pub fn cells(&self) -> &[[usize; 4]] {
        &self.cells
    }

    /// Cell sizes `(hx, hy)`.
    pub fn cell_size(&self) -> (f64, f64) {
        (self.hx, self.hy)
    }

    /// Side length used as `h_K`; errors if the cells are not squares.
    pub fn cell_side(&self) -> Result<f64, MeshError> {
        if (self.hx - self.hy).abs() > 1e-12 * self.hx.max(self.hy) {
            return Err(MeshError::NonSquareCells {
                hx: self.hx,
                hy: self.hy,
            });
        }
        Ok(self.hx)
    }

    /// Cell diameter (length of the diagonal).
    pub fn cell_diameter(&self) -> f64 {
        self.hx.hypot(self.hy)
    }

    /// Sorted indices of the nodes sharing a cell with node `i` (excluding `i`).
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    /// All neighbour sets `N_i`, indexed by node.
    pub fn neighbor_sets(&self) -> &[Vec<usize>] {
        &self.neighbors
    }

    /// Cells containing node `i`.
    pub fn node_cells(&self, i: usize) -> &[usize] {
        &self.node_cells[i]
    }

    /// Locate the cell containing `(x, y)` and the local coordinates in
    /// `[0,1]^2`. Points on the boundary are clamped into the closed domain.
    pub fn locate(&self, x: f64, y: f64) -> Option<(usize, f64, f64)> {
        if !self.domain.contains(x, y) {
            return None;
        }
        let n = self.cells_per_side;
        let sx = ((x - self.domain.x0) / self.hx).clamp(0.0, n as f64);
        let sy = ((y - self.domain.y0) / self.hy).clamp(0.0, n as f64);
        let ix = (sx.floor() as usize).min(n - 1);
        let iy = (sy.floor() as usize).min(n - 1);
        Some((iy * n + ix, sx - ix as f64, sy - iy as f64))
    }

    /// Index of the node at `(x, y)` if the point coincides with one.
    pub fn node_at(&self, x: f64, y: f64) -> Option<usize> {
        let n = self.cells_per_side;
        let sx = (x - self.domain.x0) / self.hx;
        let sy = (y - self.domain.y0) / self.hy;
        let (rx, ry) = (sx.round(), sy.round());
        if (sx - rx).abs() > 1e-9 || (sy - ry).abs() > 1e-9 {
            return None;
        }
        if rx < 0.0 || ry < 0.0 || rx > n as f64 || ry > n as f64 {
            return None;
        }
        Some(ry as usize * (n + 1) + rx as usize)
    }
}

/// Smallest `kappa` with `||grad phi_i||_{L2(K)} <= kappa * h_K^{d/2-1}` for
/// all basis functions and cells. In 2D the `h_K` factor is one, so this is
/// the largest basis-gradient norm on one cell, computed by 3x3 Gauss
/// quadrature. Only square cells are accepted.
pub fn shape_constant_kappa(mesh: &Mesh) -> Result<f64, MeshError> {
    let h = mesh.cell_side()?;
    let rule = gauss3x3_square();
    let area = h * h;
    let mut kappa2: f64 = 0.0;
    for a in 0..4 {
        let mut norm2 = 0.0;
        for &([xi, eta], w) in &rule {
            let g = q1_basis_grad(xi, eta)[a];
            let (gx, gy) = (g[0] / h, g[1] / h);
            norm2 += w * area * (gx * gx + gy * gy);
        }
        kappa2 = kappa2.max(norm2);
    }
    Ok(kappa2.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_neighbors(mesh: &Mesh, i: usize) -> Vec<usize> {
        let mut out = Vec::new();
        for j in 0..mesh.num_nodes() {
            if j != i
                && mesh
                    .cells()
                    .iter()
                    .any(|c| c.contains(&i) && c.contains(&j))
            {
                out.push(j);
            }
        }
        out
    }

    #[test]
    fn node_and_cell_counts() {
        for r in 0..=8 {
            let m = Mesh::uniform(Rectangle::square(20.0), r).unwrap();
            let n = 1usize << r;
            assert_eq!(m.num_cells(), n * n);
            assert_eq!(m.num_nodes(), (n + 1) * (n + 1));
        }
        let m3 = Mesh::uniform(Rectangle::square(20.0), 3).unwrap();
        assert_eq!(m3.num_nodes(), 81);
        let m5 = Mesh::uniform(Rectangle::square(20.0), 5).unwrap();
        assert_eq!((m5.num_nodes(), m5.num_cells()), (1089, 1024));
    }

    #[test]
    fn single_cell_neighbours() {
        let m = Mesh::uniform(Rectangle::square(1.0), 0).unwrap();
        assert_eq!(m.num_cells(), 1);
        assert_eq!(m.num_nodes(), 4);
        for i in 0..4 {
            assert_eq!(m.neighbors(i).len(), 3);
        }
    }

    #[test]
    fn neighbour_counts_match_brute_force_scan() {
        let m = Mesh::uniform(Rectangle::square(1.0), 2).unwrap();
        // 5x5 nodes: centre is (2,2) -> 12, mid-edge (2,0) -> 2.
        assert_eq!(brute_neighbors(&m, 12).len(), 8);
        assert_eq!(m.neighbors(12), brute_neighbors(&m, 12).as_slice());
        assert_eq!(brute_neighbors(&m, 2).len(), 5);
        assert_eq!(m.neighbors(2), brute_neighbors(&m, 2).as_slice());
        for i in 0..m.num_nodes() {
            assert_eq!(m.neighbors(i), brute_neighbors(&m, i).as_slice());
        }
    }

    #[test]
    fn rejects_degenerate_domains() {
        assert!(matches!(
            Mesh::uniform(Rectangle::new(0.0, 0.0, 0.0, 1.0), 1),
            Err(MeshError::NonPositiveExtent { .. })
        ));
        assert!(Mesh::uniform(Rectangle::new(0.0, 0.0, 1.0, -1.0), 1).is_err());
        assert!(Mesh::uniform(Rectangle::square(1.0), MAX_REFINEMENTS + 1).is_err());
    }

    #[test]
    fn kappa_closed_form_and_scale_invariance() {
        let exact = (2.0f64 / 3.0).sqrt();
        let unit = Mesh::uniform(Rectangle::square(1.0), 0).unwrap();
        assert!((shape_constant_kappa(&unit).unwrap() - exact).abs() < 1e-12);
        let k2 = shape_constant_kappa(&Mesh::uniform(Rectangle::square(20.0), 2).unwrap()).unwrap();
        let k5 = shape_constant_kappa(&Mesh::uniform(Rectangle::square(20.0), 5).unwrap()).unwrap();
        assert!((k2 - k5).abs() < 1e-14);
        let rect = Mesh::uniform(Rectangle::new(0.0, 0.0, 2.0, 1.0), 1).unwrap();
        assert!(matches!(
            shape_constant_kappa(&rect),
            Err(MeshError::NonSquareCells { .. })
        ));
    }

    #[test]
    fn corner_gradients_have_equal_norms() {
        let rule = gauss3x3_square();
        let norms: Vec<f64> = (0..4)
            .map(|a| {
                rule.iter()
                    .map(|&([x, y], w)| {
                        let g = q1_basis_grad(x, y)[a];
                        w * (g[0] * g[0] + g[1] * g[1])
                    })
                    .sum()
            })
            .collect();
        for n in &norms {
            assert!((n - norms[0]).abs() < 1e-15);
        }
    }

    #[test]
    fn locate_and_node_lookup() {
        let m = Mesh::uniform(Rectangle::square(20.0), 2).unwrap();
        assert_eq!(m.node_at(20.0, 20.0), Some(m.num_nodes() - 1));
        assert_eq!(m.node_at(5.0, 0.0), Some(1));
        assert_eq!(m.node_at(2.5, 0.0), None);
        let (cell, xi, eta) = m.locate(20.0, 20.0).unwrap();
        assert_eq!(cell, m.num_cells() - 1);
        assert!((xi - 1.0).abs() < 1e-15 && (eta - 1.0).abs() < 1e-15);
        assert!(m.locate(20.1, 3.0).is_none());
    }

    proptest::proptest! {
        #[test]
        fn neighbour_relation_is_symmetric_and_irreflexive(r in 0u32..=4) {
            let m = Mesh::uniform(Rectangle::square(3.0), r).unwrap();
            for i in 0..m.num_nodes() {
                proptest::prop_assert!(!m.neighbors(i).contains(&i));
                for &j in m.neighbors(i) {
                    proptest::prop_assert!(m.neighbors(j).contains(&i));
                }
            }
        }
    }
}
