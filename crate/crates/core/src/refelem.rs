//! Reference elements: nodal polynomial bases of arbitrary degree on
//! segments, triangles and quadrilaterals, with quadrature tables and
//! straight-sided physical mappings.
//!
//! Nodal bases are built from well-conditioned orthogonal modal bases
//! (shifted Legendre on the segment and square, collapsed-coordinate Jacobi
//! on the triangle) through a generalized Vandermonde matrix. Node sets are
//! equispaced up to degree 4 and warped (Gauss-Lobatto based warp & blend)
//! above, which keeps the Vandermonde well conditioned at the high degrees
//! reached by degree adaptivity.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, Matrix2, Point2, Vector2};
use thiserror::Error;

use crate::quadrature::{self, jacobi, jacobi_deriv, QuadRule2D};

/// Hard cap on the polynomial degree of any reference element. Degree
/// adaptivity tops out below this so that the `k+1` postprocess space always
/// exists.
pub const HARD_K_MAX: usize = 12;

#[derive(Debug, Error)]
pub enum RefElemError {
    #[error("unsupported polynomial degree {0} (maximum {HARD_K_MAX})")]
    UnsupportedDegree(usize),
    #[error("singular or inverted Jacobian in element mapping (det = {0:.3e})")]
    SingularJacobian(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Shape {
    Segment,
    Triangle,
    Quad,
}

impl Shape {
    pub fn n_vertices(self) -> usize {
        match self {
            Shape::Segment => 2,
            Shape::Triangle => 3,
            Shape::Quad => 4,
        }
    }

    /// Dimension of the polynomial space of degree `k`.
    pub fn space_dim(self, k: usize) -> usize {
        match self {
            Shape::Segment => k + 1,
            Shape::Triangle => (k + 1) * (k + 2) / 2,
            Shape::Quad => (k + 1) * (k + 1),
        }
    }

    /// Reference vertices (segment vertices lie on the x axis).
    pub fn ref_vertices(self) -> Vec<Point2<f64>> {
        match self {
            Shape::Segment => vec![Point2::new(0.0, 0.0), Point2::new(1.0, 0.0)],
            Shape::Triangle => vec![
                Point2::new(0.0, 0.0),
                Point2::new(1.0, 0.0),
                Point2::new(0.0, 1.0),
            ],
            Shape::Quad => vec![
                Point2::new(0.0, 0.0),
                Point2::new(1.0, 0.0),
                Point2::new(1.0, 1.0),
                Point2::new(0.0, 1.0),
            ],
        }
    }

    /// Endpoints (in reference coordinates) of local edge `i`.
    pub fn ref_edge(self, i: usize) -> (Point2<f64>, Point2<f64>) {
        let v = self.ref_vertices();
        (v[i], v[(i + 1) % v.len()])
    }
}

// ---------------------------------------------------------------------------
// Modal bases
// ---------------------------------------------------------------------------

/// Normalization constant of the Jacobi polynomials on `[-1,1]`.
fn jacobi_norm(n: usize, a: usize, b: usize) -> f64 {
    let fact = |m: usize| -> f64 { (1..=m).map(|i| i as f64).product() };
    let nf = n as f64;
    let af = a as f64;
    let bf = b as f64;
    2f64.powi((a + b + 1) as i32) / (2.0 * nf + af + bf + 1.0) * fact(n + a) * fact(n + b)
        / (fact(n) * fact(n + a + b))
}

fn jacobi_on(n: usize, a: usize, b: usize, x: f64) -> f64 {
    jacobi(n, a as f64, b as f64, x) / jacobi_norm(n, a, b).sqrt()
}

fn jacobi_on_deriv(n: usize, a: usize, b: usize, x: f64) -> f64 {
    jacobi_deriv(n, a as f64, b as f64, x) / jacobi_norm(n, a, b).sqrt()
}

/// Orthonormal 1D basis on `[0,1]`: value and derivative of mode `n`.
fn seg_mode(n: usize, x: f64) -> (f64, f64) {
    let t = 2.0 * x - 1.0;
    let scale = (2.0 * n as f64 + 1.0).sqrt();
    (
        scale * jacobi(n, 0.0, 0.0, t),
        2.0 * scale * jacobi_deriv(n, 0.0, 0.0, t),
    )
}

/// Collapsed-coordinate orthogonal mode `(i,j)` on the unit triangle:
/// value and gradient. Uses the convention `a = -1` on the singular line
/// `s = 1`, under which values and derivatives of the polynomial modes are
/// recovered exactly at the collapsed vertex.
fn tri_mode(i: usize, j: usize, xi: f64, eta: f64) -> (f64, f64, f64) {
    // Map the unit triangle to {r,s >= -1, r+s <= 0}.
    let r = 2.0 * xi - 1.0;
    let s = 2.0 * eta - 1.0;
    let a = if (1.0 - s).abs() > 1e-14 {
        2.0 * (1.0 + r) / (1.0 - s) - 1.0
    } else {
        -1.0
    };
    let b = s;

    let fa = jacobi_on(i, 0, 0, a);
    let dfa = jacobi_on_deriv(i, 0, 0, a);
    let gb = jacobi_on(j, 2 * i + 1, 0, b);
    let dgb = jacobi_on_deriv(j, 2 * i + 1, 0, b);
    let sq2 = std::f64::consts::SQRT_2;

    let pow_i = |p: i32| -> f64 {
        if p < 0 {
            // Only reached multiplied by dfa == 0 when i == 0.
            0.0
        } else {
            (1.0 - b).powi(p)
        }
    };

    let val = sq2 * fa * gb * pow_i(i as i32);
    let dr = 2.0 * sq2 * dfa * gb * pow_i(i as i32 - 1);
    let mut ds = sq2 * dfa * (1.0 + a) * gb * pow_i(i as i32 - 1);
    let mut tmp = dgb * pow_i(i as i32);
    if i > 0 {
        tmp -= i as f64 * gb * pow_i(i as i32 - 1);
    }
    ds += sq2 * fa * tmp;

    // Chain rule from (r,s) to (xi,eta).
    (val, 2.0 * dr, 2.0 * ds)
}

/// Evaluates every mode of the degree-`k` space at a point:
/// `(values, d/dxi, d/deta)` in a fixed mode order.
fn eval_modes(shape: Shape, k: usize, p: Point2<f64>) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let dim = shape.space_dim(k);
    let mut v = Vec::with_capacity(dim);
    let mut dx = Vec::with_capacity(dim);
    let mut dy = Vec::with_capacity(dim);
    match shape {
        Shape::Segment => {
            for n in 0..=k {
                let (val, d) = seg_mode(n, p.x);
                v.push(val);
                dx.push(d);
                dy.push(0.0);
            }
        }
        Shape::Quad => {
            for j in 0..=k {
                let (vy, dvy) = seg_mode(j, p.y);
                for i in 0..=k {
                    let (vx, dvx) = seg_mode(i, p.x);
                    v.push(vx * vy);
                    dx.push(dvx * vy);
                    dy.push(vx * dvy);
                }
            }
        }
        Shape::Triangle => {
            for total in 0..=k {
                for j in 0..=total {
                    let i = total - j;
                    let (val, dxv, dyv) = tri_mode(i, j, p.x, p.y);
                    v.push(val);
                    dx.push(dxv);
                    dy.push(dyv);
                }
            }
        }
    }
    (v, dx, dy)
}

// ---------------------------------------------------------------------------
// Node sets
// ---------------------------------------------------------------------------

fn segment_nodes(k: usize) -> Vec<f64> {
    if k == 0 {
        vec![0.5]
    } else if k <= 4 {
        (0..=k).map(|i| i as f64 / k as f64).collect()
    } else {
        quadrature::gauss_lobatto_01(k)
    }
}

fn quad_nodes(k: usize) -> Vec<Point2<f64>> {
    let line = segment_nodes(k);
    let mut nodes = Vec::with_capacity(line.len() * line.len());
    for &y in &line {
        for &x in &line {
            nodes.push(Point2::new(x, y));
        }
    }
    nodes
}

fn triangle_nodes(k: usize) -> Vec<Point2<f64>> {
    if k == 0 {
        return vec![Point2::new(1.0 / 3.0, 1.0 / 3.0)];
    }
    if k <= 4 {
        let mut nodes = Vec::new();
        for j in 0..=k {
            for i in 0..=(k - j) {
                nodes.push(Point2::new(i as f64 / k as f64, j as f64 / k as f64));
            }
        }
        return nodes;
    }
    warp_blend_triangle_nodes(k)
}

/// Warp & blend node set on the triangle: equispaced barycentric lattice
/// warped towards Gauss-Lobatto spacing along each edge.
fn warp_blend_triangle_nodes(k: usize) -> Vec<Point2<f64>> {
    const ALPHA_OPT: [f64; 15] = [
        0.0, 0.0, 1.4152, 0.1001, 0.2751, 0.98, 1.0999, 1.2832, 1.3648, 1.4773, 1.4959, 1.5743,
        1.577, 1.6223, 1.6258,
    ];
    let alpha = if k < 15 { ALPHA_OPT[k] } else { 5.0 / 3.0 };

    let warp = |diff: &[f64]| -> Vec<f64> {
        // 1D warp: displacement from equispaced to Gauss-Lobatto nodes,
        // interpolated through the equispaced Lagrange basis.
        let n = k + 1;
        let req: Vec<f64> = (0..n).map(|i| 2.0 * i as f64 / k as f64 - 1.0).collect();
        let gll: Vec<f64> = quadrature::gauss_lobatto_01(k)
            .iter()
            .map(|&x| 2.0 * x - 1.0)
            .collect();
        // Vandermonde of normalized Legendre at equispaced nodes.
        let veq = DMatrix::from_fn(n, n, |r, c| jacobi_on(c, 0, 0, req[r]));
        let veq_t_inv = veq
            .transpose()
            .lu()
            .solve(&DMatrix::identity(n, n))
            .expect("equispaced Vandermonde is invertible");
        diff.iter()
            .map(|&r| {
                let pvec = DMatrix::from_fn(n, 1, |m, _| jacobi_on(m, 0, 0, r));
                let lag = &veq_t_inv * pvec;
                let mut w = 0.0;
                for m in 0..n {
                    w += lag[(m, 0)] * (gll[m] - req[m]);
                }
                let zerof = r.abs() < 1.0 - 1e-10;
                let sf = 1.0 - if zerof { r * r } else { 0.0 };
                if zerof {
                    w / sf
                } else {
                    0.0
                }
            })
            .collect()
    };

    // Equispaced barycentric lattice.
    let mut l1 = Vec::new();
    let mut l2 = Vec::new();
    let mut l3 = Vec::new();
    for j in 0..=k {
        for i in 0..=(k - j) {
            let b = j as f64 / k as f64; // opposite vertex 3 (top)
            let c = i as f64 / k as f64;
            l1.push(b);
            l3.push(c);
            l2.push(1.0 - b - c);
        }
    }
    let np = l1.len();

    // Equilateral coordinates.
    let mut x: Vec<f64> = (0..np).map(|m| -l2[m] + l3[m]).collect();
    let mut y: Vec<f64> = (0..np)
        .map(|m| (-l2[m] - l3[m] + 2.0 * l1[m]) / 3f64.sqrt())
        .collect();

    let blends = [
        |l: (&f64, &f64, &f64)| 4.0 * l.1 * l.2, // edge opposite vertex 1
        |l: (&f64, &f64, &f64)| 4.0 * l.0 * l.2,
        |l: (&f64, &f64, &f64)| 4.0 * l.0 * l.1,
    ];
    let diffs = [
        (0..np).map(|m| l3[m] - l2[m]).collect::<Vec<_>>(),
        (0..np).map(|m| l1[m] - l3[m]).collect::<Vec<_>>(),
        (0..np).map(|m| l2[m] - l1[m]).collect::<Vec<_>>(),
    ];
    let lams = [
        (0..np).map(|m| l1[m]).collect::<Vec<_>>(),
        (0..np).map(|m| l2[m]).collect::<Vec<_>>(),
        (0..np).map(|m| l3[m]).collect::<Vec<_>>(),
    ];
    for (edge, angle) in [(0usize, 0.0), (1, 2.0), (2, 4.0)] {
        let wf = warp(&diffs[edge]);
        let theta = angle * std::f64::consts::PI / 3.0;
        for m in 0..np {
            let blend = blends[edge]((&l1[m], &l2[m], &l3[m]));
            let scale = 1.0 + (alpha * lams[edge][m]).powi(2);
            let w = blend * wf[m] * scale;
            x[m] += theta.cos() * w;
            y[m] += theta.sin() * w;
        }
    }

    // Back to barycentric, then to the unit triangle.
    (0..np)
        .map(|m| {
            let lam1 = (3f64.sqrt() * y[m] + 1.0) / 3.0;
            let lam2 = (-3.0 * x[m] - 3f64.sqrt() * y[m] + 2.0) / 6.0;
            let lam3 = 1.0 - lam1 - lam2;
            Point2::new(lam3, lam1)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Nodal basis and reference element
// ---------------------------------------------------------------------------

/// Nodal (Lagrange) basis of degree `k` on a reference shape.
#[derive(Clone, Debug)]
pub struct NodalBasis {
    pub shape: Shape,
    pub degree: usize,
    pub nodes: Vec<Point2<f64>>,
    v_inv: DMatrix<f64>,
}

impl NodalBasis {
    pub fn new(shape: Shape, k: usize) -> Result<Self, RefElemError> {
        if k > HARD_K_MAX {
            return Err(RefElemError::UnsupportedDegree(k));
        }
        let nodes = match shape {
            Shape::Segment => segment_nodes(k)
                .into_iter()
                .map(|x| Point2::new(x, 0.0))
                .collect(),
            Shape::Triangle => triangle_nodes(k),
            Shape::Quad => quad_nodes(k),
        };
        let dim = shape.space_dim(k);
        debug_assert_eq!(nodes.len(), dim);
        let mut v = DMatrix::zeros(dim, dim);
        for (r, node) in nodes.iter().enumerate() {
            let (vals, _, _) = eval_modes(shape, k, *node);
            for c in 0..dim {
                v[(r, c)] = vals[c];
            }
        }
        let v_inv = v
            .lu()
            .solve(&DMatrix::identity(dim, dim))
            .expect("nodal Vandermonde is invertible");
        Ok(NodalBasis {
            shape,
            degree: k,
            nodes,
            v_inv,
        })
    }

    pub fn dim(&self) -> usize {
        self.nodes.len()
    }

    /// Basis values at arbitrary reference points: `(n_pts, n_nodes)`.
    pub fn eval(&self, pts: &[Point2<f64>]) -> DMatrix<f64> {
        let dim = self.dim();
        let mut modal = DMatrix::zeros(pts.len(), dim);
        for (r, p) in pts.iter().enumerate() {
            let (vals, _, _) = eval_modes(self.shape, self.degree, *p);
            for c in 0..dim {
                modal[(r, c)] = vals[c];
            }
        }
        modal * &self.v_inv
    }

    /// Reference-gradient tables at arbitrary points.
    pub fn eval_grad(&self, pts: &[Point2<f64>]) -> [DMatrix<f64>; 2] {
        let dim = self.dim();
        let mut gx = DMatrix::zeros(pts.len(), dim);
        let mut gy = DMatrix::zeros(pts.len(), dim);
        for (r, p) in pts.iter().enumerate() {
            let (_, dx, dy) = eval_modes(self.shape, self.degree, *p);
            for c in 0..dim {
                gx[(r, c)] = dx[c];
                gy[(r, c)] = dy[c];
            }
        }
        [gx * &self.v_inv, gy * &self.v_inv]
    }
}

/// Reference element: nodal basis plus quadrature tables.
#[derive(Debug)]
pub struct ReferenceElement {
    pub shape: Shape,
    pub degree: usize,
    pub quadrature_order: usize,
    pub basis: NodalBasis,
    pub quad_points: Vec<Point2<f64>>,
    pub quad_weights: Vec<f64>,
    /// Basis values at quadrature points, `(n_qp, n_nodes)`.
    pub basis_qp: DMatrix<f64>,
    /// Reference gradients at quadrature points.
    pub dbasis_qp: [DMatrix<f64>; 2],
}

impl ReferenceElement {
    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn n_qp(&self) -> usize {
        self.quad_points.len()
    }
}

type CacheKey = (Shape, usize, usize);

fn cache() -> &'static Mutex<HashMap<CacheKey, Arc<ReferenceElement>>> {
    static CACHE: OnceLock<Mutex<HashMap<CacheKey, Arc<ReferenceElement>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Returns the (cached) reference element of the given shape and degree with
/// a quadrature exact for polynomials of degree `quadrature_order`.
pub fn make_reference(
    shape: Shape,
    k: usize,
    quadrature_order: usize,
) -> Result<Arc<ReferenceElement>, RefElemError> {
    let key = (shape, k, quadrature_order);
    if let Some(r) = cache().lock().unwrap().get(&key) {
        return Ok(r.clone());
    }
    let basis = NodalBasis::new(shape, k)?;
    let (points, weights, order) = match shape {
        Shape::Segment => {
            let r = quadrature::segment_rule(quadrature_order);
            (
                r.points.iter().map(|&x| Point2::new(x, 0.0)).collect(),
                r.weights,
                r.order,
            )
        }
        Shape::Triangle => {
            let QuadRule2D {
                points,
                weights,
                order,
            } = quadrature::triangle_rule(quadrature_order);
            (points, weights, order)
        }
        Shape::Quad => {
            let QuadRule2D {
                points,
                weights,
                order,
            } = quadrature::quad_rule(quadrature_order);
            (points, weights, order)
        }
    };
    let basis_qp = basis.eval(&points);
    let dbasis_qp = basis.eval_grad(&points);
    let refel = Arc::new(ReferenceElement {
        shape,
        degree: k,
        quadrature_order: order,
        basis,
        quad_points: points,
        quad_weights: weights,
        basis_qp,
        dbasis_qp,
    });
    cache().lock().unwrap().insert(key, refel.clone());
    Ok(refel)
}

/// Default volume quadrature order for a degree-`k` straight element.
pub fn default_order(k: usize) -> usize {
    2 * k + 2
}

// ---------------------------------------------------------------------------
// Physical mapping (straight-sided elements)
// ---------------------------------------------------------------------------

/// Geometric map from a reference shape to a straight-sided physical
/// element: affine for triangles, bilinear for quadrilaterals.
#[derive(Clone, Debug)]
pub enum ElementMap {
    Affine {
        origin: Point2<f64>,
        jac: Matrix2<f64>,
        jac_inv: Matrix2<f64>,
        det: f64,
    },
    Bilinear {
        verts: [Point2<f64>; 4],
    },
}

impl ElementMap {
    pub fn new(shape: Shape, verts: &[Point2<f64>]) -> Result<Self, RefElemError> {
        match shape {
            Shape::Triangle => {
                let jac = Matrix2::from_columns(&[verts[1] - verts[0], verts[2] - verts[0]]);
                let det = jac.determinant();
                if det <= 0.0 || !det.is_finite() {
                    return Err(RefElemError::SingularJacobian(det));
                }
                Ok(ElementMap::Affine {
                    origin: verts[0],
                    jac,
                    jac_inv: jac.try_inverse().ok_or(RefElemError::SingularJacobian(det))?,
                    det,
                })
            }
            Shape::Quad => Ok(ElementMap::Bilinear {
                verts: [verts[0], verts[1], verts[2], verts[3]],
            }),
            Shape::Segment => panic!("segment maps are handled by the face machinery"),
        }
    }

    pub fn to_physical(&self, p: Point2<f64>) -> Point2<f64> {
        match self {
            ElementMap::Affine { origin, jac, .. } => origin + jac * p.coords,
            ElementMap::Bilinear { verts } => {
                let (x, y) = (p.x, p.y);
                let b = [
                    (1.0 - x) * (1.0 - y),
                    x * (1.0 - y),
                    x * y,
                    (1.0 - x) * y,
                ];
                let mut out = Vector2::zeros();
                for i in 0..4 {
                    out += b[i] * verts[i].coords;
                }
                Point2::from(out)
            }
        }
    }

    pub fn jacobian(&self, p: Point2<f64>) -> Matrix2<f64> {
        match self {
            ElementMap::Affine { jac, .. } => *jac,
            ElementMap::Bilinear { verts } => {
                let (x, y) = (p.x, p.y);
                let dbx = [-(1.0 - y), 1.0 - y, y, -y];
                let dby = [-(1.0 - x), -x, x, 1.0 - x];
                let mut jx = Vector2::zeros();
                let mut jy = Vector2::zeros();
                for i in 0..4 {
                    jx += dbx[i] * verts[i].coords;
                    jy += dby[i] * verts[i].coords;
                }
                Matrix2::from_columns(&[jx, jy])
            }
        }
    }

    /// Inverse map by Newton iteration (exact in one step for affine maps).
    pub fn to_reference(&self, x: Point2<f64>) -> Point2<f64> {
        match self {
            ElementMap::Affine { origin, jac_inv, .. } => Point2::from(jac_inv * (x - origin)),
            ElementMap::Bilinear { .. } => {
                let mut p = Point2::new(0.5, 0.5);
                for _ in 0..30 {
                    let res = self.to_physical(p) - x;
                    if res.norm() < 1e-14 {
                        break;
                    }
                    let j = self.jacobian(p);
                    if let Some(jinv) = j.try_inverse() {
                        p -= jinv * res;
                    } else {
                        break;
                    }
                }
                p
            }
        }
    }
}

/// Quadrature and basis data of one element, in physical coordinates.
/// Produced either by the straight-sided mapping below or by the curved
/// NEFEM construction.
#[derive(Clone, Debug)]
pub struct ElemQuad {
    pub points: Vec<Point2<f64>>,
    /// Reference coordinates of the quadrature points.
    pub ref_points: Vec<Point2<f64>>,
    pub weights: Vec<f64>,
    /// Basis values at the quadrature points, `(n_qp, n_nodes)`.
    pub basis: DMatrix<f64>,
    /// Physical-gradient tables at the quadrature points.
    pub grads: [DMatrix<f64>; 2],
}

impl ElemQuad {
    pub fn area(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Maps the reference quadrature and basis tables to a physical element.
pub fn map_physical(
    refel: &ReferenceElement,
    verts: &[Point2<f64>],
) -> Result<ElemQuad, RefElemError> {
    let map = ElementMap::new(refel.shape, verts)?;
    let n_qp = refel.n_qp();
    let n = refel.dim();
    let mut points = Vec::with_capacity(n_qp);
    let mut weights = Vec::with_capacity(n_qp);
    let mut gx = DMatrix::zeros(n_qp, n);
    let mut gy = DMatrix::zeros(n_qp, n);
    for q in 0..n_qp {
        let p = refel.quad_points[q];
        let jac = map.jacobian(p);
        let det = jac.determinant();
        if det <= 0.0 || !det.is_finite() {
            return Err(RefElemError::SingularJacobian(det));
        }
        let jinv = jac.try_inverse().ok_or(RefElemError::SingularJacobian(det))?;
        points.push(map.to_physical(p));
        weights.push(refel.quad_weights[q] * det);
        // grad_x N = J^{-T} grad_ref N
        for i in 0..n {
            let gr = Vector2::new(refel.dbasis_qp[0][(q, i)], refel.dbasis_qp[1][(q, i)]);
            let g = jinv.transpose() * gr;
            gx[(q, i)] = g.x;
            gy[(q, i)] = g.y;
        }
    }
    Ok(ElemQuad {
        points,
        ref_points: refel.quad_points.clone(),
        weights,
        basis: refel.basis_qp.clone(),
        grads: [gx, gy],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn shapes() -> [Shape; 3] {
        [Shape::Segment, Shape::Triangle, Shape::Quad]
    }

    #[test]
    fn space_dimensions() {
        let r = make_reference(Shape::Triangle, 1, 4).unwrap();
        assert_eq!(r.dim(), 3);
        assert_eq!(r.basis.nodes.len(), 3);
        let r = make_reference(Shape::Segment, 0, 2).unwrap();
        assert_eq!(r.dim(), 1);
        assert_eq!(r.basis.nodes[0].x, 0.5);
        for k in 0..=9 {
            assert_eq!(
                make_reference(Shape::Triangle, k, 2).unwrap().dim(),
                (k + 1) * (k + 2) / 2
            );
            assert_eq!(make_reference(Shape::Quad, k, 2).unwrap().dim(), (k + 1) * (k + 1));
            assert_eq!(make_reference(Shape::Segment, k, 2).unwrap().dim(), k + 1);
        }
    }

    #[test]
    fn degree_cap_is_enforced() {
        assert!(matches!(
            make_reference(Shape::Triangle, HARD_K_MAX + 1, 2),
            Err(RefElemError::UnsupportedDegree(_))
        ));
    }

    #[test]
    fn partition_of_unity_and_gradient_sum() {
        for shape in shapes() {
            for k in [0, 1, 2, 3, 4, 5, 7, 9] {
                let r = make_reference(shape, k, 2 * k + 2).unwrap();
                for q in 0..r.n_qp() {
                    let sum: f64 = (0..r.dim()).map(|i| r.basis_qp[(q, i)]).sum();
                    assert_relative_eq!(sum, 1.0, epsilon = 1e-12);
                    for d in 0..2 {
                        let g: f64 = (0..r.dim()).map(|i| r.dbasis_qp[d][(q, i)]).sum();
                        assert!(g.abs() < 1e-10, "{shape:?} k={k} grad sum {g:.2e}");
                    }
                }
            }
        }
    }

    #[test]
    fn nodal_property() {
        for shape in shapes() {
            for k in [1, 3, 6, 8] {
                let b = NodalBasis::new(shape, k).unwrap();
                let vals = b.eval(&b.nodes.clone());
                for i in 0..b.dim() {
                    for j in 0..b.dim() {
                        let expect = if i == j { 1.0 } else { 0.0 };
                        assert!(
                            (vals[(i, j)] - expect).abs() < 1e-10,
                            "{shape:?} k={k} N_{j}(node_{i}) = {}",
                            vals[(i, j)]
                        );
                    }
                }
            }
        }
    }

    /// Interpolating then evaluating any polynomial of degree <= k is exact.
    #[test]
    fn interpolation_round_trip() {
        let poly = |p: Point2<f64>, k: usize| -> f64 {
            // full-degree polynomial with mixed terms
            let mut v = 1.0;
            for d in 1..=k {
                v += (0.3 + d as f64 * 0.1) * p.x.powi(d as i32)
                    - 0.7 * p.y.powi(d as i32)
                    + 0.25 * p.x.powi((d / 2) as i32) * p.y.powi((d - d / 2) as i32);
            }
            v
        };
        let probes = [
            Point2::new(0.11, 0.13),
            Point2::new(0.52, 0.17),
            Point2::new(0.23, 0.61),
            Point2::new(0.05, 0.9),
            Point2::new(0.0, 1.0),
        ];
        for shape in [Shape::Triangle, Shape::Quad] {
            for k in [1, 2, 4, 6, 8] {
                let b = NodalBasis::new(shape, k).unwrap();
                let coeffs: Vec<f64> = b.nodes.iter().map(|&n| poly(n, k)).collect();
                let vals = b.eval(&probes);
                for (r, p) in probes.iter().enumerate() {
                    let mut num = 0.0;
                    for i in 0..b.dim() {
                        num += vals[(r, i)] * coeffs[i];
                    }
                    assert_relative_eq!(num, poly(*p, k), epsilon = 1e-11, max_relative = 1e-11);
                }
            }
        }
    }

    #[test]
    fn mass_matrix_is_spd() {
        for shape in [Shape::Segment, Shape::Triangle, Shape::Quad] {
            for k in [1, 3, 5, 8] {
                let r = make_reference(shape, k, 2 * k + 2).unwrap();
                let n = r.dim();
                let mut m = DMatrix::<f64>::zeros(n, n);
                for q in 0..r.n_qp() {
                    for i in 0..n {
                        for j in 0..n {
                            m[(i, j)] += r.quad_weights[q] * r.basis_qp[(q, i)] * r.basis_qp[(q, j)];
                        }
                    }
                }
                let sym = (&m - m.transpose()).norm() / m.norm();
                assert!(sym < 1e-13);
                let chol = nalgebra::Cholesky::new(m);
                assert!(chol.is_some(), "{shape:?} k={k} mass not SPD");
            }
        }
    }

    #[test]
    fn affine_identity_and_scaling() {
        let r = make_reference(Shape::Triangle, 2, 6).unwrap();
        let ident = map_physical(
            &r,
            &[
                Point2::new(0.0, 0.0),
                Point2::new(1.0, 0.0),
                Point2::new(0.0, 1.0),
            ],
        )
        .unwrap();
        for q in 0..r.n_qp() {
            for i in 0..r.dim() {
                assert_relative_eq!(ident.grads[0][(q, i)], r.dbasis_qp[0][(q, i)], epsilon = 1e-13);
                assert_relative_eq!(ident.grads[1][(q, i)], r.dbasis_qp[1][(q, i)], epsilon = 1e-13);
            }
        }
        let scaled = map_physical(
            &r,
            &[
                Point2::new(0.0, 0.0),
                Point2::new(2.0, 0.0),
                Point2::new(0.0, 2.0),
            ],
        )
        .unwrap();
        assert_relative_eq!(scaled.area(), 2.0, epsilon = 1e-12);
        for q in 0..r.n_qp() {
            for i in 0..r.dim() {
                assert_relative_eq!(
                    scaled.grads[0][(q, i)],
                    0.5 * r.dbasis_qp[0][(q, i)],
                    epsilon = 1e-13
                );
                assert_relative_eq!(scaled.weights[q], 4.0 * r.quad_weights[q], epsilon = 1e-13);
            }
        }
    }

    /// The mapped gradient of the interpolant of x reproduces e_1 exactly.
    #[test]
    fn mapped_gradient_reproduces_linear_field() {
        let verts = [
            Point2::new(0.2, -0.1),
            Point2::new(1.3, 0.4),
            Point2::new(0.1, 1.7),
        ];
        for k in [1, 2, 4] {
            let r = make_reference(Shape::Triangle, k, 2 * k + 2).unwrap();
            let map = ElementMap::new(Shape::Triangle, &verts).unwrap();
            let coeffs: Vec<f64> = r.basis.nodes.iter().map(|&n| map.to_physical(n).x).collect();
            let pq = map_physical(&r, &verts).unwrap();
            for q in 0..r.n_qp() {
                let mut gx = 0.0;
                let mut gy = 0.0;
                for i in 0..r.dim() {
                    gx += pq.grads[0][(q, i)] * coeffs[i];
                    gy += pq.grads[1][(q, i)] * coeffs[i];
                }
                assert_relative_eq!(gx, 1.0, epsilon = 1e-11);
                assert!(gy.abs() < 1e-11);
            }
        }
    }

    #[test]
    fn quad_area_is_exact_for_bilinear_maps() {
        let r = make_reference(Shape::Quad, 2, 6).unwrap();
        let verts = [
            Point2::new(0.0, 0.0),
            Point2::new(2.0, 0.2),
            Point2::new(1.8, 1.9),
            Point2::new(-0.2, 1.5),
        ];
        let pq = map_physical(&r, &verts).unwrap();
        let area = crate::mesh::signed_area(&verts);
        assert_relative_eq!(pq.area(), area, epsilon = 1e-12);
    }

    #[test]
    fn bilinear_inverse_map_round_trips() {
        let verts = [
            Point2::new(0.0, 0.0),
            Point2::new(2.0, 0.2),
            Point2::new(1.8, 1.9),
            Point2::new(-0.2, 1.5),
        ];
        let map = ElementMap::new(Shape::Quad, &verts).unwrap();
        for p in [Point2::new(0.3, 0.7), Point2::new(0.9, 0.1)] {
            let x = map.to_physical(p);
            let back = map.to_reference(x);
            assert_relative_eq!(back.x, p.x, epsilon = 1e-12);
            assert_relative_eq!(back.y, p.y, epsilon = 1e-12);
        }
    }

    #[test]
    fn inverted_triangle_is_singular() {
        let r = make_reference(Shape::Triangle, 1, 4).unwrap();
        let err = map_physical(
            &r,
            &[
                Point2::new(0.0, 0.0),
                Point2::new(0.0, 1.0),
                Point2::new(1.0, 0.0),
            ],
        );
        assert!(matches!(err, Err(RefElemError::SingularJacobian(_))));
    }
}
