//! Slow reference computations for cross-checking the solver.
//!
//! Everything here is written directly from the defining formulas with dense
//! storage and shares no code with the production modules beyond reading
//! node coordinates and cell connectivity from a [`Mesh`]. Intended for
//! small meshes only.

use crate::mesh::Mesh;

/// Row-major dense square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m.data[i * n + j] = f(i, j);
            }
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] += v;
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j) * x[j]).sum())
            .collect()
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        (0..self.n).map(|j| self.get(i, j)).sum()
    }

    /// Gaussian elimination with partial pivoting; `None` if singular.
    pub fn solve(&self, b: &[f64]) -> Option<Vec<f64>> {
        let n = self.n;
        let mut a = self.data.clone();
        let mut x = b.to_vec();
        for k in 0..n {
            let mut p = k;
            for i in k + 1..n {
                if a[i * n + k].abs() > a[p * n + k].abs() {
                    p = i;
                }
            }
            if a[p * n + k] == 0.0 {
                return None;
            }
            if p != k {
                for j in 0..n {
                    a.swap(k * n + j, p * n + j);
                }
                x.swap(k, p);
            }
            for i in k + 1..n {
                let l = a[i * n + k] / a[k * n + k];
                if l != 0.0 {
                    for j in k..n {
                        a[i * n + j] -= l * a[k * n + j];
                    }
                    x[i] -= l * x[k];
                }
            }
        }
        for k in (0..n).rev() {
            let mut s = x[k];
            for j in k + 1..n {
                s -= a[k * n + j] * x[j];
            }
            x[k] = s / a[k * n + k];
        }
        Some(x)
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`, 3 or 5 points.
fn gauss_legendre(points: usize) -> Vec<(f64, f64)> {
    match points {
        3 => {
            let a = (3.0f64 / 5.0).sqrt();
            vec![(-a, 5.0 / 9.0), (0.0, 8.0 / 9.0), (a, 5.0 / 9.0)]
        }
        5 => {
            let s = 2.0 * (10.0f64 / 7.0).sqrt();
            let inner = (5.0 - s).sqrt() / 3.0;
            let outer = (5.0 + s).sqrt() / 3.0;
            let r70 = 70.0f64.sqrt();
            let wi = (322.0 + 13.0 * r70) / 900.0;
            let wo = (322.0 - 13.0 * r70) / 900.0;
            vec![
                (-outer, wo),
                (-inner, wi),
                (0.0, 128.0 / 225.0),
                (inner, wi),
                (outer, wo),
            ]
        }
        _ => panic!("unsupported rule with {points} points"),
    }
}

/// Value and gradient of the bilinear hat of corner `(xa, ya)` on the
/// rectangle `[x0, x0 + hx] x [y0, y0 + hy]` at `(x, y)`.
fn hat(xa: f64, ya: f64, hx: f64, hy: f64, x: f64, y: f64) -> (f64, [f64; 2]) {
    let fx = 1.0 - (x - xa).abs() / hx;
    let fy = 1.0 - (y - ya).abs() / hy;
    let dx = -(x - xa).signum() / hx;
    let dy = -(y - ya).signum() / hy;
    (fx * fy, [dx * fy, fx * dy])
}

/// Coefficients of the dense stiffness assembly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenseParams {
    pub mu: f64,
    pub chi: f64,
    pub diffusion: f64,
    /// Use `1 - |u_h|` instead of `1 - u_h`.
    pub absolute: bool,
    /// Gauss points per direction (3 or 5).
    pub points: usize,
}

/// Dense consistent mass matrix by per-cell tensor Gauss quadrature.
pub fn dense_mass(mesh: &Mesh, points: usize) -> DenseMatrix {
    let zero = vec![0.0; mesh.num_nodes()];
    let params = DenseParams {
        mu: -1.0,
        chi: 0.0,
        diffusion: 0.0,
        absolute: false,
        points,
    };
    dense_assemble(mesh, &zero, &zero, params)
}

/// Dense stiffness matrix
/// `a_ij = -mu (phi_j (1 - u_h), phi_i) - chi (phi_j grad c_h, grad phi_i)
///         + diffusion (grad phi_j, grad phi_i)`.
pub fn dense_assemble(mesh: &Mesh, u: &[f64], c: &[f64], params: DenseParams) -> DenseMatrix {
    let n = mesh.num_nodes();
    let mut out = DenseMatrix::zeros(n);
    let rule = gauss_legendre(params.points);
    for cell in mesh.cells() {
        let corners: Vec<[f64; 2]> = cell.iter().map(|&v| mesh.node(v)).collect();
        let x0 = corners.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
        let x1 = corners
            .iter()
            .map(|p| p[0])
            .fold(f64::NEG_INFINITY, f64::max);
        let y0 = corners.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
        let y1 = corners
            .iter()
            .map(|p| p[1])
            .fold(f64::NEG_INFINITY, f64::max);
        let (hx, hy) = (x1 - x0, y1 - y0);
        for &(sx, wx) in &rule {
            for &(sy, wy) in &rule {
                let x = x0 + 0.5 * (sx + 1.0) * hx;
                let y = y0 + 0.5 * (sy + 1.0) * hy;
                let w = wx * wy * 0.25 * hx * hy;
                let hats: Vec<(f64, [f64; 2])> = corners
                    .iter()
                    .map(|p| hat(p[0], p[1], hx, hy, x, y))
                    .collect();
                let mut uh = 0.0;
                let mut grad_c = [0.0, 0.0];
                for (a, &v) in cell.iter().enumerate() {
                    uh += u[v] * hats[a].0;
                    grad_c[0] += c[v] * hats[a].1[0];
                    grad_c[1] += c[v] * hats[a].1[1];
                }
                let factor = 1.0 - if params.absolute { uh.abs() } else { uh };
                for (a, &i) in cell.iter().enumerate() {
                    let (phi_i, gi) = hats[a];
                    for (b, &j) in cell.iter().enumerate() {
                        let (phi_j, gj) = hats[b];
                        let reaction = phi_j * factor * phi_i;
                        let taxis = phi_j * (grad_c[0] * gi[0] + grad_c[1] * gi[1]);
                        let lap = gj[0] * gi[0] + gj[1] * gi[1];
                        out.add(
                            i,
                            j,
                            w * (-params.mu * reaction - params.chi * taxis
                                + params.diffusion * lap),
                        );
                    }
                }
            }
        }
    }
    out
}

/// Reference value of the protease update: composite 3-point Gauss-Legendre
/// quadrature of
/// `e^{-tau/eps} p0 + (1/eps) int_0^tau u(s) c(s) e^{-(tau - s)/eps} ds`
/// with `u`, `c` linear in `s`.
#[allow(clippy::too_many_arguments)]
pub fn kinetics_quadrature(
    u_old: f64,
    u_new: f64,
    c_old: f64,
    c_new: f64,
    p_old: f64,
    epsilon: f64,
    tau: f64,
    substeps: usize,
) -> f64 {
    let rule = gauss_legendre(3);
    let h = tau / substeps as f64;
    let mut integral = 0.0;
    for k in 0..substeps {
        let a = k as f64 * h;
        let mut panel = 0.0;
        for &(x, w) in &rule {
            let s = a + 0.5 * (x + 1.0) * h;
            let theta = s / tau;
            let u = u_old + (u_new - u_old) * theta;
            let c = c_old + (c_new - c_old) * theta;
            panel += w * u * c * (-(tau - s) / epsilon).exp();
        }
        integral += 0.5 * h * panel;
    }
    (-tau / epsilon).exp() * p_old + integral / epsilon
}

/// The protease update in its closed three-brace form. Loses accuracy for
/// `tau << eps` through cancellation; used only where that is harmless.
pub fn protease_closed_form(
    u_old: f64,
    u_new: f64,
    c_old: f64,
    c_new: f64,
    p_old: f64,
    epsilon: f64,
    tau: f64,
) -> f64 {
    let e = (-tau / epsilon).exp();
    let first =
        (u_new * (epsilon - tau) - u_old * epsilon) * (c_new * (epsilon - tau) - c_old * epsilon);
    let second = (u_new * epsilon - u_old * (epsilon + tau))
        * (c_new * epsilon - c_old * (epsilon + tau))
        * e;
    let third = (u_new - u_old) * (c_new - c_old) * epsilon * epsilon * (1.0 - e);
    e * p_old + (first - second + third) / (tau * tau)
}

/// Zalesak limiter evaluated literally on dense data. `flux` must be
/// antisymmetric and `neighbors[i]` lists the neighbours of node `i`.
/// Entries outside the neighbour graph are returned as 1.
pub fn brute_zalesak(
    flux: &DenseMatrix,
    ubar: &[f64],
    lumped: &[f64],
    neighbors: &[Vec<usize>],
) -> DenseMatrix {
    let n = ubar.len();
    let mut r_plus = vec![1.0; n];
    let mut r_minus = vec![1.0; n];
    for i in 0..n {
        let mut p_plus = 0.0;
        let mut p_minus = 0.0;
        let mut umax = ubar[i];
        let mut umin = ubar[i];
        for &j in &neighbors[i] {
            let f = flux.get(i, j);
            if f > 0.0 {
                p_plus += f;
            }
            if f < 0.0 {
                p_minus += f;
            }
            umax = umax.max(ubar[j]);
            umin = umin.min(ubar[j]);
        }
        let q_plus = lumped[i] * (umax - ubar[i]);
        let q_minus = lumped[i] * (umin - ubar[i]);
        if p_plus.abs() >= 1e-300 {
            r_plus[i] = f64::min(1.0, q_plus / p_plus);
        }
        if p_minus.abs() >= 1e-300 {
            r_minus[i] = f64::min(1.0, q_minus / p_minus);
        }
    }
    let mut alpha = DenseMatrix::from_fn(n, |_, _| 1.0);
    for i in 0..n {
        for &j in &neighbors[i] {
            let f = flux.get(i, j);
            let a = if f > 0.0 {
                r_plus[i].min(r_minus[j])
            } else if f < 0.0 {
                r_minus[i].min(r_plus[j])
            } else {
                1.0
            };
            alpha.set(i, j, a);
        }
    }
    alpha
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Rectangle;

    #[test]
    fn unit_cell_mass_pattern() {
        let mesh = Mesh::uniform(Rectangle::square(1.0), 0).unwrap();
        let m = dense_mass(&mesh, 5);
        for i in 0..4 {
            assert!((m.get(i, i) - 1.0 / 9.0).abs() < 1e-15);
        }
        // nodes 0 and 3 are opposite corners
        assert!((m.get(0, 1) - 1.0 / 18.0).abs() < 1e-15);
        assert!((m.get(0, 2) - 1.0 / 18.0).abs() < 1e-15);
        assert!((m.get(0, 3) - 1.0 / 36.0).abs() < 1e-15);
    }

    #[test]
    fn dense_solve_small_system() {
        let a = DenseMatrix::from_fn(2, |i, j| if i == j { 2.0 } else { -1.0 });
        let x = a.solve(&[1.0, 1.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 1.0).abs() < 1e-15);
        assert!(DenseMatrix::zeros(2).solve(&[1.0, 1.0]).is_none());
    }

    #[test]
    fn quadrature_kinetics_limits() {
        let (eps, tau) = (0.2f64, 0.3);
        let e = (-tau / eps).exp();
        let q = kinetics_quadrature(0.8, 0.8, 0.5, 0.5, 0.1, eps, tau, 1000);
        assert!((q - (e * 0.1 + 0.4 * (1.0 - e))).abs() < 1e-13);
        let q = kinetics_quadrature(0.8, 0.2, 0.5, 0.9, 0.3, eps, 1e-6, 1000);
        assert!((q - 0.3).abs() < 1e-5);
    }

    #[test]
    fn closed_form_matches_quadrature_at_moderate_ratio() {
        let q = kinetics_quadrature(0.3, 0.9, 0.7, 0.4, 0.2, 0.2, 0.5, 1000);
        let c = protease_closed_form(0.3, 0.9, 0.7, 0.4, 0.2, 0.2, 0.5);
        assert!((q - c).abs() < 1e-12 * q);
    }

    #[test]
    fn brute_zalesak_zero_flux() {
        let neighbors = vec![vec![1], vec![0]];
        let alpha = brute_zalesak(&DenseMatrix::zeros(2), &[0.0, 1.0], &[1.0, 1.0], &neighbors);
        assert_eq!(alpha.get(0, 1), 1.0);
        assert_eq!(alpha.get(1, 0), 1.0);
    }
}
