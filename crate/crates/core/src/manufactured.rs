//! Manufactured solutions: exact fields given as expressions, with sources
//! and boundary data derived by symbolic differentiation.
//!
//! Used by the convergence drivers and the test suites; the derived data is
//! what makes a manufactured run self-contained (Dirichlet values, Neumann
//! fluxes/tractions and volume sources all come from the same expressions).

use std::sync::Arc;

use nalgebra::{Matrix2, Point2, Vector2, Vector3};

use crate::elasticity::HookeMatrix;
use crate::expr::{add, mul, neg, scale, Expr, ExprError, Var};
use crate::physics::{ScalarFluxFn, ScalarFn, TractionFn, VectorFn};

/// Scalar diffusion: `-lap u = f`.
pub struct ManufacturedPoisson {
    pub u: Expr,
    du: [Expr; 2],
    lap: Expr,
}

impl ManufacturedPoisson {
    pub fn new(u: Expr) -> Result<Self, ExprError> {
        let dx = u.diff(Var::X)?;
        let dy = u.diff(Var::Y)?;
        let lap = add(dx.diff(Var::X)?, dy.diff(Var::Y)?);
        Ok(ManufacturedPoisson {
            u,
            du: [dx, dy],
            lap,
        })
    }

    pub fn from_str(src: &str) -> Result<Self, ExprError> {
        Self::new(Expr::parse(src)?)
    }

    pub fn value(&self, p: Point2<f64>) -> f64 {
        self.u.eval(p.x, p.y)
    }

    pub fn gradient(&self, p: Point2<f64>) -> Vector2<f64> {
        Vector2::new(self.du[0].eval(p.x, p.y), self.du[1].eval(p.x, p.y))
    }

    /// Mixed variable `q = -grad u`.
    pub fn flux(&self, p: Point2<f64>) -> Vector2<f64> {
        -self.gradient(p)
    }

    pub fn source(&self, p: Point2<f64>) -> f64 {
        -self.lap.eval(p.x, p.y)
    }

    pub fn dirichlet_fn(self: &Arc<Self>) -> ScalarFn {
        let me = self.clone();
        Arc::new(move |p| me.value(p))
    }

    pub fn source_fn(self: &Arc<Self>) -> ScalarFn {
        let me = self.clone();
        Arc::new(move |p| me.source(p))
    }

    /// Normal-derivative data `n . grad u`.
    pub fn neumann_fn(self: &Arc<Self>) -> ScalarFluxFn {
        let me = self.clone();
        Arc::new(move |p, n| me.gradient(p).dot(&n))
    }
}

/// Plane linear elasticity with a constant Hooke matrix.
pub struct ManufacturedElasticity {
    pub u: [Expr; 2],
    strain: [Expr; 3],
    stress: [Expr; 3],
    source: [Expr; 2],
    pub material: HookeMatrix,
}

impl ManufacturedElasticity {
    pub fn new(u1: Expr, u2: Expr, material: HookeMatrix) -> Result<Self, ExprError> {
        let e11 = u1.diff(Var::X)?;
        let e22 = u2.diff(Var::Y)?;
        let g12 = add(u1.diff(Var::Y)?, u2.diff(Var::X)?);
        let strain = [e11, e22, g12];
        let d = material.d();
        let comb = |row: usize| -> Expr {
            add(
                add(
                    scale(d[(row, 0)], strain[0].clone()),
                    scale(d[(row, 1)], strain[1].clone()),
                ),
                scale(d[(row, 2)], strain[2].clone()),
            )
        };
        let stress = [comb(0), comb(1), comb(2)];
        let s1 = neg(add(stress[0].diff(Var::X)?, stress[2].diff(Var::Y)?));
        let s2 = neg(add(stress[1].diff(Var::Y)?, stress[2].diff(Var::X)?));
        Ok(ManufacturedElasticity {
            u: [u1, u2],
            strain,
            stress,
            source: [s1, s2],
            material,
        })
    }

    pub fn displacement(&self, p: Point2<f64>) -> Vector2<f64> {
        Vector2::new(self.u[0].eval(p.x, p.y), self.u[1].eval(p.x, p.y))
    }

    /// Engineering-shear Voigt strain `[e11, e22, g12]`.
    pub fn strain(&self, p: Point2<f64>) -> Vector3<f64> {
        Vector3::new(
            self.strain[0].eval(p.x, p.y),
            self.strain[1].eval(p.x, p.y),
            self.strain[2].eval(p.x, p.y),
        )
    }

    pub fn stress(&self, p: Point2<f64>) -> Vector3<f64> {
        Vector3::new(
            self.stress[0].eval(p.x, p.y),
            self.stress[1].eval(p.x, p.y),
            self.stress[2].eval(p.x, p.y),
        )
    }

    /// Scaled strain mixed variable `L = -D^{1/2} (grad_s u)`.
    pub fn scaled_strain(&self, p: Point2<f64>) -> Vector3<f64> {
        -self.material.d_sqrt() * self.strain(p)
    }

    pub fn source(&self, p: Point2<f64>) -> Vector2<f64> {
        Vector2::new(self.source[0].eval(p.x, p.y), self.source[1].eval(p.x, p.y))
    }

    /// Traction `sigma . n`.
    pub fn traction(&self, p: Point2<f64>, n: Vector2<f64>) -> Vector2<f64> {
        let s = self.stress(p);
        Vector2::new(n.x * s[0] + n.y * s[2], n.y * s[1] + n.x * s[2])
    }

    pub fn dirichlet_fn(self: &Arc<Self>) -> VectorFn {
        let me = self.clone();
        Arc::new(move |p| me.displacement(p))
    }

    pub fn source_fn(self: &Arc<Self>) -> VectorFn {
        let me = self.clone();
        Arc::new(move |p| me.source(p))
    }

    pub fn traction_fn(self: &Arc<Self>) -> TractionFn {
        let me = self.clone();
        Arc::new(move |p, n| me.traction(p, n))
    }
}

/// Incompressible Stokes with constant viscosity.
pub struct ManufacturedStokes {
    pub u: [Expr; 2],
    pub p: Expr,
    pub nu: f64,
    grad: [[Expr; 2]; 2],
    lap: [Expr; 2],
    dp: [Expr; 2],
}

impl ManufacturedStokes {
    /// Builds the case and verifies incompressibility on a sample grid.
    pub fn new(u1: Expr, u2: Expr, p: Expr, nu: f64) -> Result<Self, ExprError> {
        let grad = [
            [u1.diff(Var::X)?, u1.diff(Var::Y)?],
            [u2.diff(Var::X)?, u2.diff(Var::Y)?],
        ];
        let lap = [
            add(
                grad[0][0].diff(Var::X)?,
                grad[0][1].diff(Var::Y)?,
            ),
            add(
                grad[1][0].diff(Var::X)?,
                grad[1][1].diff(Var::Y)?,
            ),
        ];
        let dp = [p.diff(Var::X)?, p.diff(Var::Y)?];
        let div = add(grad[0][0].clone(), grad[1][1].clone());
        for i in 0..=4 {
            for j in 0..=4 {
                let (x, y) = (i as f64 / 4.0, j as f64 / 4.0);
                let d = div.eval(x, y);
                if d.abs() > 1e-10 {
                    return Err(ExprError::NonDifferentiable(format!(
                        "velocity field is not divergence-free (div = {d:.3e} at ({x}, {y}))"
                    )));
                }
            }
        }
        Ok(ManufacturedStokes {
            u: [u1, u2],
            p,
            nu,
            grad,
            lap,
            dp,
        })
    }

    pub fn velocity(&self, p: Point2<f64>) -> Vector2<f64> {
        Vector2::new(self.u[0].eval(p.x, p.y), self.u[1].eval(p.x, p.y))
    }

    pub fn pressure(&self, p: Point2<f64>) -> f64 {
        self.p.eval(p.x, p.y)
    }

    /// `(grad u)_{ij} = du_i/dx_j`.
    pub fn velocity_gradient(&self, p: Point2<f64>) -> Matrix2<f64> {
        Matrix2::new(
            self.grad[0][0].eval(p.x, p.y),
            self.grad[0][1].eval(p.x, p.y),
            self.grad[1][0].eval(p.x, p.y),
            self.grad[1][1].eval(p.x, p.y),
        )
    }

    /// Mixed variable `L = -sqrt(nu) grad u`.
    pub fn scaled_gradient(&self, p: Point2<f64>) -> Matrix2<f64> {
        -self.nu.sqrt() * self.velocity_gradient(p)
    }

    /// Momentum source `-nu lap u + grad p`.
    pub fn source(&self, pt: Point2<f64>) -> Vector2<f64> {
        Vector2::new(
            -self.nu * self.lap[0].eval(pt.x, pt.y) + self.dp[0].eval(pt.x, pt.y),
            -self.nu * self.lap[1].eval(pt.x, pt.y) + self.dp[1].eval(pt.x, pt.y),
        )
    }

    /// Pseudo-traction `(nu grad u - p I) n`.
    pub fn traction(&self, pt: Point2<f64>, n: Vector2<f64>) -> Vector2<f64> {
        (self.nu * self.velocity_gradient(pt) - self.pressure(pt) * Matrix2::identity()) * n
    }

    pub fn dirichlet_fn(self: &Arc<Self>) -> VectorFn {
        let me = self.clone();
        Arc::new(move |p| me.velocity(p))
    }

    pub fn source_fn(self: &Arc<Self>) -> VectorFn {
        let me = self.clone();
        Arc::new(move |p| me.source(p))
    }

    pub fn traction_fn(self: &Arc<Self>) -> TractionFn {
        let me = self.clone();
        Arc::new(move |p, n| me.traction(p, n))
    }

    /// The standard smooth divergence-free benchmark on the unit square:
    /// `u = (sin px cos py, -cos px sin py)`, `p = cos px cos py` (zero mean).
    pub fn trigonometric(nu: f64) -> Self {
        Self::new(
            Expr::parse("sin(pi*x)*cos(pi*y)").unwrap(),
            mul(
                Expr::Const(-1.0),
                Expr::parse("cos(pi*x)*sin(pi*y)").unwrap(),
            ),
            Expr::parse("cos(pi*x)*cos(pi*y)").unwrap(),
            nu,
        )
        .expect("trigonometric field is divergence-free")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elasticity::{hooke_matrix, Regime};
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn poisson_source_matches_closed_form() {
        let m = ManufacturedPoisson::from_str("sin(pi*x)*sin(pi*y)").unwrap();
        let p = Point2::new(0.3, 0.7);
        assert_relative_eq!(
            m.source(p),
            2.0 * PI * PI * (PI * 0.3).sin() * (PI * 0.7).sin(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn elasticity_source_matches_finite_differences() {
        let mat = hooke_matrix(2.5, 0.3, Regime::PlaneStrain).unwrap();
        let m = ManufacturedElasticity::new(
            Expr::parse("sin(pi*x)*sin(pi*y)").unwrap(),
            Expr::parse("x^2*y + cos(pi*y)").unwrap(),
            mat,
        )
        .unwrap();
        let h = 1e-5;
        let p = Point2::new(0.4, 0.6);
        let sx = (m.stress(Point2::new(p.x + h, p.y)) - m.stress(Point2::new(p.x - h, p.y)))
            / (2.0 * h);
        let sy = (m.stress(Point2::new(p.x, p.y + h)) - m.stress(Point2::new(p.x, p.y - h)))
            / (2.0 * h);
        let fd = Vector2::new(-(sx[0] + sy[2]), -(sy[1] + sx[2]));
        let s = m.source(p);
        assert_relative_eq!(s.x, fd.x, epsilon = 1e-7, max_relative = 1e-6);
        assert_relative_eq!(s.y, fd.y, epsilon = 1e-7, max_relative = 1e-6);
    }

    #[test]
    fn stokes_trigonometric_is_divergence_free_and_consistent() {
        let m = ManufacturedStokes::trigonometric(0.7);
        let p = Point2::new(0.25, 0.65);
        let g = m.velocity_gradient(p);
        assert!(g.trace().abs() < 1e-12, "div u = {}", g.trace());
        // Momentum source against closed form: -nu lap u = 2 nu pi^2 u.
        let want = 2.0 * 0.7 * PI * PI * m.velocity(p)
            + Vector2::new(
                -PI * (PI * p.x).sin() * (PI * p.y).cos(),
                -PI * (PI * p.x).cos() * (PI * p.y).sin(),
            );
        let s = m.source(p);
        assert_relative_eq!(s.x, want.x, epsilon = 1e-11);
        assert_relative_eq!(s.y, want.y, epsilon = 1e-11);
    }

    #[test]
    fn non_divergence_free_field_is_rejected() {
        let err = ManufacturedStokes::new(
            Expr::parse("x").unwrap(),
            Expr::parse("y").unwrap(),
            Expr::parse("0").unwrap(),
            1.0,
        );
        assert!(err.is_err());
    }
}
