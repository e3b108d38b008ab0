//! Gauss quadrature on segments, triangles and quadrilaterals.
//!
//! Reference domains are the unit segment `[0,1]`, the unit triangle
//! `{x,y >= 0, x+y <= 1}` and the unit square `[0,1]^2`. Rules are built
//! from Gauss-Jacobi points computed by the Golub-Welsch eigenvalue method;
//! triangle rules use the collapsed (Duffy) map with a Jacobi weight so that
//! no tabulated rules are needed at any order.

use nalgebra::{DMatrix, Point2};

/// Jacobi polynomial `P_n^{(a,b)}` evaluated by the standard three-term
/// recurrence.
pub fn jacobi(n: usize, a: f64, b: f64, x: f64) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let mut p_prev = 1.0;
    let mut p = 0.5 * ((a + b + 2.0) * x + (a - b));
    for m in 2..=n {
        let m = m as f64;
        let c = 2.0 * m + a + b;
        let a1 = 2.0 * m * (m + a + b) * (c - 2.0);
        let a2 = (c - 1.0) * (a * a - b * b);
        let a3 = (c - 2.0) * (c - 1.0) * c;
        let a4 = 2.0 * (m + a - 1.0) * (m + b - 1.0) * c;
        let p_next = ((a2 + a3 * x) * p - a4 * p_prev) / a1;
        p_prev = p;
        p = p_next;
    }
    p
}

/// Derivative of `P_n^{(a,b)}`.
pub fn jacobi_deriv(n: usize, a: f64, b: f64, x: f64) -> f64 {
    if n == 0 {
        0.0
    } else {
        0.5 * (n as f64 + a + b + 1.0) * jacobi(n - 1, a + 1.0, b + 1.0, x)
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

/// `n`-point Gauss-Jacobi rule on `[-1,1]` with weight `(1-x)^a (1+x)^b`
/// for non-negative integer exponents. Exact for polynomials of degree
/// `2n-1` against that weight.
pub fn gauss_jacobi(n: usize, a: usize, b: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let af = a as f64;
    let bf = b as f64;
    let mu0 = 2f64.powi((a + b + 1) as i32) * factorial(a) * factorial(b)
        / factorial(a + b + 1);
    if n == 1 {
        let x = (bf - af) / (af + bf + 2.0);
        return (vec![x], vec![mu0]);
    }
    // Symmetric tridiagonal Jacobi matrix of the orthonormal recurrence.
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        let k = i as f64;
        let denom = (2.0 * k + af + bf) * (2.0 * k + af + bf + 2.0);
        let diag = if i == 0 {
            (bf - af) / (af + bf + 2.0)
        } else if denom != 0.0 {
            (bf * bf - af * af) / denom
        } else {
            0.0
        };
        m[(i, i)] = diag;
        if i >= 1 {
            let k = i as f64;
            let num = 4.0 * k * (k + af) * (k + bf) * (k + af + bf);
            let den = (2.0 * k + af + bf).powi(2)
                * (2.0 * k + af + bf + 1.0)
                * (2.0 * k + af + bf - 1.0);
            let off = (num / den).sqrt();
            m[(i, i - 1)] = off;
            m[(i - 1, i)] = off;
        }
    }
    let eig = nalgebra::SymmetricEigen::new(m);
    let mut rule: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let x = eig.eigenvalues[i];
            let w = mu0 * eig.eigenvectors[(0, i)].powi(2);
            (x, w)
        })
        .collect();
    rule.sort_by(|p, q| p.0.total_cmp(&q.0));
    rule.into_iter().unzip()
}

/// One-dimensional rule on the unit segment.
#[derive(Clone, Debug)]
pub struct QuadRule1D {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
    /// Largest polynomial degree integrated exactly.
    pub order: usize,
}

/// Two-dimensional rule on a reference element.
#[derive(Clone, Debug)]
pub struct QuadRule2D {
    pub points: Vec<Point2<f64>>,
    pub weights: Vec<f64>,
    pub order: usize,
}

/// Gauss-Legendre rule on `[0,1]` exact for polynomials of degree `order`.
pub fn segment_rule(order: usize) -> QuadRule1D {
    let n = order / 2 + 1;
    let (x, w) = gauss_jacobi(n, 0, 0);
    QuadRule1D {
        points: x.iter().map(|&t| 0.5 * (t + 1.0)).collect(),
        weights: w.iter().map(|&wi| 0.5 * wi).collect(),
        order: 2 * n - 1,
    }
}

/// Tensor Gauss rule on the unit square exact for total degree `order`
/// (in fact for degree `order` in each variable separately).
pub fn quad_rule(order: usize) -> QuadRule2D {
    let line = segment_rule(order);
    let n = line.points.len();
    let mut points = Vec::with_capacity(n * n);
    let mut weights = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            points.push(Point2::new(line.points[i], line.points[j]));
            weights.push(line.weights[i] * line.weights[j]);
        }
    }
    QuadRule2D {
        points,
        weights,
        order: line.order,
    }
}

/// Collapsed-coordinate rule on the unit triangle exact for total degree
/// `order`. Uses Gauss-Legendre in the first direction and Gauss-Jacobi with
/// weight `(1-b)` in the collapsed direction, so exactness holds without the
/// usual accuracy loss of the plain Duffy transform.
pub fn triangle_rule(order: usize) -> QuadRule2D {
    let n = order / 2 + 1;
    let (xa, wa) = gauss_jacobi(n, 0, 0);
    let (xb, wb) = gauss_jacobi(n, 1, 0);
    let mut points = Vec::with_capacity(n * n);
    let mut weights = Vec::with_capacity(n * n);
    for j in 0..n {
        let b = 0.5 * (xb[j] + 1.0);
        // One factor 1/2 from mapping b to [0,1], one from mapping the
        // Jacobi weight (1-x) to (1-b).
        let wj = 0.25 * wb[j];
        for i in 0..n {
            let a = 0.5 * (xa[i] + 1.0);
            points.push(Point2::new(a * (1.0 - b), b));
            weights.push(0.5 * wa[i] * wj);
        }
    }
    QuadRule2D {
        points,
        weights,
        order: 2 * n - 1,
    }
}

/// Gauss-Lobatto-Legendre nodes on `[0,1]` (`n + 1` points for degree `n`).
pub fn gauss_lobatto_01(degree: usize) -> Vec<f64> {
    match degree {
        0 => return vec![0.5],
        1 => return vec![0.0, 1.0],
        _ => {}
    }
    let (interior, _) = gauss_jacobi(degree - 1, 1, 1);
    let mut nodes = Vec::with_capacity(degree + 1);
    nodes.push(0.0);
    nodes.extend(interior.iter().map(|&x| 0.5 * (x + 1.0)));
    nodes.push(1.0);
    nodes
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Closed-form monomial integral over the unit triangle.
    fn tri_monomial(a: usize, b: usize) -> f64 {
        factorial(a) * factorial(b) / factorial(a + b + 2)
    }

    #[test]
    fn segment_rule_integrates_monomials() {
        for order in 0..=18 {
            let rule = segment_rule(order);
            for p in 0..=rule.order {
                let num: f64 = rule
                    .points
                    .iter()
                    .zip(&rule.weights)
                    .map(|(&x, &w)| w * x.powi(p as i32))
                    .sum();
                assert_relative_eq!(num, 1.0 / (p as f64 + 1.0), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn triangle_rule_integrates_monomials() {
        for order in 0..=16 {
            let rule = triangle_rule(order);
            for a in 0..=rule.order {
                for b in 0..=(rule.order - a) {
                    let num: f64 = rule
                        .points
                        .iter()
                        .zip(&rule.weights)
                        .map(|(p, &w)| w * p.x.powi(a as i32) * p.y.powi(b as i32))
                        .sum();
                    assert_relative_eq!(num, tri_monomial(a, b), epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn triangle_rule_xy_is_one_over_24() {
        let rule = triangle_rule(4);
        let num: f64 = rule
            .points
            .iter()
            .zip(&rule.weights)
            .map(|(p, &w)| w * p.x * p.y)
            .sum();
        assert_relative_eq!(num, 1.0 / 24.0, epsilon = 1e-14);
    }

    #[test]
    fn quad_rule_integrates_monomials() {
        for order in [2, 5, 9, 14] {
            let rule = quad_rule(order);
            for a in 0..=rule.order {
                for b in 0..=rule.order {
                    let num: f64 = rule
                        .points
                        .iter()
                        .zip(&rule.weights)
                        .map(|(p, &w)| w * p.x.powi(a as i32) * p.y.powi(b as i32))
                        .sum();
                    let exact = 1.0 / ((a as f64 + 1.0) * (b as f64 + 1.0));
                    assert_relative_eq!(num, exact, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn lobatto_nodes_are_symmetric_and_ordered() {
        for k in 1..=9 {
            let nodes = gauss_lobatto_01(k);
            assert_eq!(nodes.len(), k + 1);
            assert_eq!(nodes[0], 0.0);
            assert_eq!(nodes[k], 1.0);
            for i in 0..=k {
                assert_relative_eq!(nodes[i], 1.0 - nodes[k - i], epsilon = 1e-14);
                if i > 0 {
                    assert!(nodes[i] > nodes[i - 1]);
                }
            }
        }
    }

    #[test]
    fn jacobi_derivative_matches_finite_differences() {
        let h = 1e-6;
        for (n, a, b) in [(3, 0.0, 0.0), (5, 1.0, 0.0), (4, 1.0, 1.0)] {
            for &x in &[-0.7, -0.1, 0.3, 0.9] {
                let fd = (jacobi(n, a, b, x + h) - jacobi(n, a, b, x - h)) / (2.0 * h);
                assert_relative_eq!(jacobi_deriv(n, a, b, x), fd, epsilon = 1e-6, max_relative = 1e-6);
            }
        }
    }
}
