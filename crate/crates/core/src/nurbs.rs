//! Non-uniform rational B-spline curves in the plane.
//!
//! Rational quadratic segments represent circular arcs exactly, which is what
//! makes the boundary representation of fillet geometries exact at any
//! functional degree. Evaluation is standard: knot-span search plus the
//! Cox-de Boor recursion in homogeneous coordinates.

use nalgebra::{Point2, Vector2};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NurbsError {
    #[error("parameter {0} outside curve domain [{1}, {2}]")]
    ParameterOutOfRange(f64, f64, f64),
    #[error("invalid curve data: {0}")]
    InvalidData(String),
}

/// A clamped NURBS curve of arbitrary degree.
#[derive(Clone, Debug)]
pub struct NurbsCurve {
    pub degree: usize,
    pub knots: Vec<f64>,
    pub control: Vec<Point2<f64>>,
    pub weights: Vec<f64>,
}

impl NurbsCurve {
    pub fn new(
        degree: usize,
        knots: Vec<f64>,
        control: Vec<Point2<f64>>,
        weights: Vec<f64>,
    ) -> Result<Self, NurbsError> {
        if control.len() != weights.len() {
            return Err(NurbsError::InvalidData(
                "control point and weight counts differ".into(),
            ));
        }
        if knots.len() != control.len() + degree + 1 {
            return Err(NurbsError::InvalidData(format!(
                "knot vector length {} != n_control {} + degree {} + 1",
                knots.len(),
                control.len(),
                degree
            )));
        }
        if knots.windows(2).any(|w| w[1] < w[0]) {
            return Err(NurbsError::InvalidData("knot vector not nondecreasing".into()));
        }
        if weights.iter().any(|&w| w <= 0.0) {
            return Err(NurbsError::InvalidData("weights must be positive".into()));
        }
        Ok(NurbsCurve {
            degree,
            knots,
            control,
            weights,
        })
    }

    /// Straight segment as a degree-1 curve on `[0,1]`.
    pub fn line(p0: Point2<f64>, p1: Point2<f64>) -> Self {
        NurbsCurve {
            degree: 1,
            knots: vec![0.0, 0.0, 1.0, 1.0],
            control: vec![p0, p1],
            weights: vec![1.0, 1.0],
        }
    }

    /// Circular arc spanning less than half a turn, as a single rational
    /// quadratic segment on `[0,1]`. Exact: every point lies on the circle.
    pub fn circular_arc(center: Point2<f64>, radius: f64, theta0: f64, theta1: f64) -> Self {
        let dt = theta1 - theta0;
        assert!(dt.abs() < std::f64::consts::PI, "arc must span less than pi");
        let tm = 0.5 * (theta0 + theta1);
        let p0 = center + radius * Vector2::new(theta0.cos(), theta0.sin());
        let p2 = center + radius * Vector2::new(theta1.cos(), theta1.sin());
        let w1 = (0.5 * dt).cos();
        let p1 = center + (radius / w1) * Vector2::new(tm.cos(), tm.sin());
        NurbsCurve {
            degree: 2,
            knots: vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0],
            control: vec![p0, p1, p2],
            weights: vec![1.0, w1, 1.0],
        }
    }

    pub fn domain(&self) -> (f64, f64) {
        let p = self.degree;
        (self.knots[p], self.knots[self.knots.len() - 1 - p])
    }

    fn find_span(&self, t: f64) -> usize {
        let p = self.degree;
        let n = self.control.len() - 1;
        if t >= self.knots[n + 1] {
            return n;
        }
        let mut lo = p;
        let mut hi = n + 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if t < self.knots[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    }

    /// Non-vanishing B-spline basis functions and their first derivatives at
    /// `t` (Cox-de Boor with the derivative table, first order only).
    fn basis_funs(&self, span: usize, t: f64) -> (Vec<f64>, Vec<f64>) {
        let p = self.degree;
        let mut ndu = vec![vec![0.0; p + 1]; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        ndu[0][0] = 1.0;
        for j in 1..=p {
            left[j] = t - self.knots[span + 1 - j];
            right[j] = self.knots[span + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }
        let vals: Vec<f64> = (0..=p).map(|r| ndu[r][p]).collect();
        // First derivatives.
        let mut ders = vec![0.0; p + 1];
        if p >= 1 {
            for r in 0..=p {
                let mut d = 0.0;
                if r >= 1 {
                    d += ndu[r - 1][p - 1] / ndu[p][r - 1];
                }
                if r <= p - 1 {
                    d -= ndu[r][p - 1] / ndu[p][r];
                }
                ders[r] = p as f64 * d;
            }
        }
        (vals, ders)
    }

    fn check_domain(&self, t: f64) -> Result<(), NurbsError> {
        let (a, b) = self.domain();
        let tol = 1e-12 * (b - a).abs().max(1.0);
        if t < a - tol || t > b + tol {
            return Err(NurbsError::ParameterOutOfRange(t, a, b));
        }
        Ok(())
    }

    pub fn eval(&self, t: f64) -> Result<Point2<f64>, NurbsError> {
        Ok(self.eval_with_tangent(t)?.0)
    }

    /// Point and first derivative `dC/dt`.
    pub fn eval_with_tangent(&self, t: f64) -> Result<(Point2<f64>, Vector2<f64>), NurbsError> {
        self.check_domain(t)?;
        let (a, b) = self.domain();
        let t = t.clamp(a, b);
        let span = self.find_span(t);
        let (vals, ders) = self.basis_funs(span, t);
        let p = self.degree;
        let mut num = Vector2::zeros();
        let mut dnum = Vector2::zeros();
        let mut den = 0.0;
        let mut dden = 0.0;
        for (r, (&v, &d)) in vals.iter().zip(ders.iter()).enumerate() {
            let i = span - p + r;
            let w = self.weights[i];
            num += v * w * self.control[i].coords;
            dnum += d * w * self.control[i].coords;
            den += v * w;
            dden += d * w;
        }
        let point = Point2::from(num / den);
        let tangent = (dnum - dden * point.coords) / den;
        Ok((point, tangent))
    }
}

/// Cubic polynomial curve segment, used as the frozen polynomial-geometry
/// stand-in for a NURBS span. Coefficients act on the normalized parameter
/// `s = (t - a)/(b - a)`.
#[derive(Clone, Debug)]
pub struct PolyCurve {
    pub coeff_x: [f64; 4],
    pub coeff_y: [f64; 4],
    pub domain: (f64, f64),
}

impl PolyCurve {
    pub fn eval_with_tangent(&self, t: f64) -> Result<(Point2<f64>, Vector2<f64>), NurbsError> {
        let (a, b) = self.domain;
        let tol = 1e-12 * (b - a).abs().max(1.0);
        if t < a - tol || t > b + tol {
            return Err(NurbsError::ParameterOutOfRange(t, a, b));
        }
        let s = ((t - a) / (b - a)).clamp(0.0, 1.0);
        let horner = |c: &[f64; 4]| ((c[3] * s + c[2]) * s + c[1]) * s + c[0];
        let dhorner = |c: &[f64; 4]| (3.0 * c[3] * s + 2.0 * c[2]) * s + c[1];
        let point = Point2::new(horner(&self.coeff_x), horner(&self.coeff_y));
        let tangent = Vector2::new(dhorner(&self.coeff_x), dhorner(&self.coeff_y)) / (b - a);
        Ok((point, tangent))
    }
}

/// A boundary curve: either the exact NURBS or its frozen cubic stand-in.
#[derive(Clone, Debug)]
pub enum Curve {
    Nurbs(NurbsCurve),
    Poly(PolyCurve),
}

impl Curve {
    pub fn domain(&self) -> (f64, f64) {
        match self {
            Curve::Nurbs(c) => c.domain(),
            Curve::Poly(c) => c.domain,
        }
    }

    pub fn eval(&self, t: f64) -> Result<Point2<f64>, NurbsError> {
        Ok(self.eval_with_tangent(t)?.0)
    }

    pub fn eval_with_tangent(&self, t: f64) -> Result<(Point2<f64>, Vector2<f64>), NurbsError> {
        match self {
            Curve::Nurbs(c) => c.eval_with_tangent(t),
            Curve::Poly(c) => c.eval_with_tangent(t),
        }
    }
}

/// Interpolates the restriction of a NURBS curve to `[a,b]` by a cubic
/// through four equispaced parameter values.
pub fn cubic_interpolant(curve: &NurbsCurve, a: f64, b: f64) -> Result<PolyCurve, NurbsError> {
    let ts = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
    let mut pts = [Point2::origin(); 4];
    for (i, &s) in ts.iter().enumerate() {
        pts[i] = curve.eval(a + s * (b - a))?;
    }
    let mut v = nalgebra::Matrix4::zeros();
    for (r, &s) in ts.iter().enumerate() {
        for c in 0..4 {
            v[(r, c)] = s.powi(c as i32);
        }
    }
    let lu = v.lu();
    let bx = nalgebra::Vector4::from_fn(|r, _| pts[r].x);
    let by = nalgebra::Vector4::from_fn(|r, _| pts[r].y);
    let cx = lu.solve(&bx).ok_or_else(|| {
        NurbsError::InvalidData("degenerate parameter interval for cubic fit".into())
    })?;
    let cy = lu.solve(&by).unwrap();
    Ok(PolyCurve {
        coeff_x: [cx[0], cx[1], cx[2], cx[3]],
        coeff_y: [cy[0], cy[1], cy[2], cy[3]],
        domain: (a, b),
    })
}
