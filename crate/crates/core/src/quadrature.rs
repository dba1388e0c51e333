//! Gauss-Legendre rules on the unit interval and the bilinear reference cell.

/// Three-point Gauss-Legendre rule on `[0, 1]`: `(points, weights)`.
///
/// Exact for polynomials up to degree five.
pub fn gauss3_unit() -> ([f64; 3], [f64; 3]) {
    let d = 0.5 * (3.0f64 / 5.0).sqrt();
    (
        [0.5 - d, 0.5, 0.5 + d],
        [5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0],
    )
}

/// Bilinear basis on the reference square `[0,1]^2`, local nodes ordered
/// counter-clockwise from the lower-left corner.
#[inline]
pub fn q1_basis(xi: f64, eta: f64) -> [f64; 4] {
    [
        (1.0 - xi) * (1.0 - eta),
        xi * (1.0 - eta),
        xi * eta,
        (1.0 - xi) * eta,
    ]
}

/// Reference gradients `(d/dxi, d/deta)` of [`q1_basis`].
#[inline]
pub fn q1_basis_grad(xi: f64, eta: f64) -> [[f64; 2]; 4] {
    [
        [-(1.0 - eta), -(1.0 - xi)],
        [1.0 - eta, -xi],
        [eta, xi],
        [-eta, 1.0 - xi],
    ]
}

/// Tensor 3x3 Gauss points on the reference square with weights summing to one.
pub fn gauss3x3_square() -> Vec<([f64; 2], f64)> {
    let (pts, wts) = gauss3_unit();
    let mut out = Vec::with_capacity(9);
    for (j, &eta) in pts.iter().enumerate() {
        for (i, &xi) in pts.iter().enumerate() {
            out.push(([xi, eta], wts[i] * wts[j]));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss3_integrates_quintics_exactly() {
        let (p, w) = gauss3_unit();
        for deg in 0..=5 {
            let q: f64 = p.iter().zip(&w).map(|(x, w)| w * x.powi(deg)).sum();
            assert!((q - 1.0 / (deg as f64 + 1.0)).abs() < 1e-15, "degree {deg}");
        }
    }

    #[test]
    fn basis_is_partition_of_unity_and_nodal() {
        let corners = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        for (a, c) in corners.iter().enumerate() {
            let phi = q1_basis(c[0], c[1]);
            for (b, v) in phi.iter().enumerate() {
                assert_eq!(*v, if a == b { 1.0 } else { 0.0 });
            }
        }
        let phi = q1_basis(0.3, 0.7);
        assert!((phi.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let g = q1_basis_grad(0.3, 0.7);
        let sx: f64 = g.iter().map(|v| v[0]).sum();
        let sy: f64 = g.iter().map(|v| v[1]).sum();
        assert!(sx.abs() < 1e-15 && sy.abs() < 1e-15);
    }
}
