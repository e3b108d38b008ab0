//! Shared plumbing of the physics modules: boundary conditions, face
//! classification, stabilization, and element/edge quadrature that is
//! transparent to curved (NEFEM) geometry.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, Point2, Vector2};
use thiserror::Error;

use crate::assembly::AssemblyError;
use crate::mesh::{DegreeField, Mesh2D};
use crate::nefem::{curved_edge_quadrature, curved_element_quadrature, CurvedGeometry, NefemError};
use crate::quadrature::segment_rule;
use crate::refelem::{
    map_physical, ElemQuad, ElementMap, NodalBasis, RefElemError, ReferenceElement, Shape,
};

pub type ScalarFn = Arc<dyn Fn(Point2<f64>) -> f64 + Send + Sync>;
pub type ScalarFluxFn = Arc<dyn Fn(Point2<f64>, Vector2<f64>) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(Point2<f64>) -> Vector2<f64> + Send + Sync>;
pub type TractionFn = Arc<dyn Fn(Point2<f64>, Vector2<f64>) -> Vector2<f64> + Send + Sync>;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    RefElem(#[from] RefElemError),
    #[error(transparent)]
    Nefem(#[from] NefemError),
    #[error("no boundary condition for tag '{0}'")]
    MissingBoundaryTag(String),
    #[error("no Dirichlet boundary: rigid modes or the solution level are unconstrained")]
    EmptyDirichletBoundary,
    #[error("singular postprocess system on element {0}")]
    SingularPostprocess(usize),
    #[error("incompatible Dirichlet data: net boundary flux {0:.3e} exceeds tolerance")]
    IncompatibleDirichletData(f64),
    #[error("{0}")]
    Invalid(String),
}

/// Scalar boundary condition attached to a tag.
#[derive(Clone)]
pub enum ScalarBc {
    Dirichlet(ScalarFn),
    /// Data for the normal flux; receives the outward normal.
    Neumann(ScalarFluxFn),
}

/// Vector-valued boundary condition attached to a tag.
#[derive(Clone)]
pub enum VectorBc {
    Dirichlet(VectorFn),
    /// Traction data; receives the outward normal.
    Neumann(TractionFn),
}

/// Tag -> condition map. The tag `"*"` acts as a fallback for any tag
/// without an explicit entry.
#[derive(Clone, Default)]
pub struct BcTable<B> {
    map: BTreeMap<String, B>,
}

pub type ScalarBcs = BcTable<ScalarBc>;
pub type VectorBcs = BcTable<VectorBc>;

impl<B> BcTable<B> {
    pub fn new() -> Self {
        BcTable {
            map: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, tag: &str, bc: B) -> &mut Self {
        self.map.insert(tag.to_owned(), bc);
        self
    }

    pub fn get(&self, tag: &str) -> Result<&B, SolveError> {
        self.map
            .get(tag)
            .or_else(|| self.map.get("*"))
            .ok_or_else(|| SolveError::MissingBoundaryTag(tag.to_owned()))
    }
}

impl ScalarBcs {
    pub fn all_dirichlet(f: impl Fn(Point2<f64>) -> f64 + Send + Sync + 'static) -> Self {
        let mut t = Self::new();
        t.insert("*", ScalarBc::Dirichlet(Arc::new(f)));
        t
    }
}

impl VectorBcs {
    pub fn all_dirichlet(f: impl Fn(Point2<f64>) -> Vector2<f64> + Send + Sync + 'static) -> Self {
        let mut t = Self::new();
        t.insert("*", VectorBc::Dirichlet(Arc::new(f)));
        t
    }
}

/// Resolved role of a face in the hybrid system.
#[derive(Clone)]
pub enum FaceRole<B> {
    Internal,
    Dirichlet(B),
    Neumann(B),
}

impl<B> FaceRole<B> {
    pub fn is_hybrid(&self) -> bool {
        matches!(self, FaceRole::Internal | FaceRole::Neumann(_))
    }
}

/// Classifies every face of the mesh against a boundary-condition table.
pub fn classify_faces<B: Clone>(
    mesh: &Mesh2D,
    bcs: &BcTable<B>,
    is_dirichlet: impl Fn(&B) -> bool,
) -> Result<Vec<FaceRole<B>>, SolveError> {
    let mut roles = Vec::with_capacity(mesh.n_faces());
    let mut any_dirichlet = false;
    for f in 0..mesh.n_faces() {
        if let Some(tag) = mesh.face_tag(f) {
            let bc = bcs.get(tag)?.clone();
            if is_dirichlet(&bc) {
                any_dirichlet = true;
                roles.push(FaceRole::Dirichlet(bc));
            } else {
                roles.push(FaceRole::Neumann(bc));
            }
        } else {
            roles.push(FaceRole::Internal);
        }
    }
    if !any_dirichlet {
        return Err(SolveError::EmptyDirichletBoundary);
    }
    Ok(roles)
}

/// Stabilization parameter choice. The returned value is multiplied by a
/// physics-supplied scale (1 for diffusion, `tr(D)` for elasticity, the
/// viscosity for Stokes).
///
/// The default is `DomainScaled`: constant under mesh refinement, which
/// preserves the optimal convergence of the mixed variable and the
/// superconvergence of the postprocessed one. The per-face `FaceScaled`
/// variant (`~ 1/len`) is exposed for sensitivity studies; it is observed to
/// cost one order in the mixed variable and the postprocess, consistent
/// with the known behavior of over-stabilized hybrid methods.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TauSpec {
    /// `c / diam(domain)`: one value for the whole mesh.
    DomainScaled { c: f64 },
    /// `c * k_f^2 / len(face)`, degree-scaled per face.
    FaceScaled { c: f64 },
    /// A fixed value on every face.
    Constant(f64),
}

impl Default for TauSpec {
    fn default() -> Self {
        TauSpec::DomainScaled { c: 3.0 }
    }
}

impl TauSpec {
    pub fn value(&self, mesh: &Mesh2D, degrees: &DegreeField, face: usize, scale: f64) -> f64 {
        match *self {
            TauSpec::DomainScaled { c } => c * scale / mesh.domain_diameter,
            TauSpec::FaceScaled { c } => {
                let kf = degrees.face_degree(mesh, face).max(1) as f64;
                c * scale * kf * kf / mesh.faces[face].length
            }
            TauSpec::Constant(v) => v,
        }
    }
}

/// Volume quadrature + basis tables of one element, curved-geometry aware.
pub fn element_quadrature(
    mesh: &Mesh2D,
    geom: &CurvedGeometry,
    e: usize,
    refel: &ReferenceElement,
) -> Result<ElemQuad, SolveError> {
    let verts = mesh.element_points(e);
    match geom.element_curved_face(mesh, e) {
        None => Ok(map_physical(refel, &verts)?),
        Some(_) => {
            // Polynomial basis in physical coordinates on the straight
            // triangle, integrated over the exact curved region.
            let cq = curved_element_quadrature(mesh, geom, e, refel.quadrature_order + 2)?;
            let map = ElementMap::new(Shape::Triangle, &verts)?;
            let ref_points: Vec<Point2<f64>> = cq
                .volume_points
                .iter()
                .map(|&p| map.to_reference(p))
                .collect();
            let basis = refel.basis.eval(&ref_points);
            let rgrads = refel.basis.eval_grad(&ref_points);
            let n = refel.dim();
            let n_qp = ref_points.len();
            let jinv_t = match &map {
                ElementMap::Affine { jac_inv, .. } => jac_inv.transpose(),
                _ => unreachable!("curved elements are triangles"),
            };
            let mut gx = DMatrix::zeros(n_qp, n);
            let mut gy = DMatrix::zeros(n_qp, n);
            for q in 0..n_qp {
                for i in 0..n {
                    let g = jinv_t * Vector2::new(rgrads[0][(q, i)], rgrads[1][(q, i)]);
                    gx[(q, i)] = g.x;
                    gy[(q, i)] = g.y;
                }
            }
            Ok(ElemQuad {
                points: cq.volume_points,
                ref_points,
                weights: cq.volume_weights,
                basis,
                grads: [gx, gy],
            })
        }
    }
}

/// Physical-gradient tables of an arbitrary nodal basis at given reference
/// points of an element (curved elements use their straight-triangle
/// affine frame, consistent with [`element_quadrature`]).
pub fn basis_physical_grads(
    mesh: &Mesh2D,
    e: usize,
    basis: &NodalBasis,
    ref_points: &[Point2<f64>],
) -> Result<[DMatrix<f64>; 2], SolveError> {
    let verts = mesh.element_points(e);
    let shape = match mesh.elements[e] {
        crate::mesh::ElementConn::Tri(_) => Shape::Triangle,
        crate::mesh::ElementConn::Quad(_) => Shape::Quad,
    };
    let map = ElementMap::new(shape, &verts)?;
    let rgrads = basis.eval_grad(ref_points);
    let n = basis.dim();
    let mut gx = DMatrix::zeros(ref_points.len(), n);
    let mut gy = DMatrix::zeros(ref_points.len(), n);
    for (q, &p) in ref_points.iter().enumerate() {
        let jac = map.jacobian(p);
        let jinv_t = jac
            .try_inverse()
            .ok_or(RefElemError::SingularJacobian(jac.determinant()))?
            .transpose();
        for i in 0..n {
            let g = jinv_t * Vector2::new(rgrads[0][(q, i)], rgrads[1][(q, i)]);
            gx[(q, i)] = g.x;
            gy[(q, i)] = g.y;
        }
    }
    Ok([gx, gy])
}

/// Quadrature and basis tables along one local edge of an element.
#[derive(Clone, Debug)]
pub struct EdgeData {
    pub face: usize,
    pub points: Vec<Point2<f64>>,
    /// Arc-length weights.
    pub weights: Vec<f64>,
    /// Outward normals of this element.
    pub normals: Vec<Vector2<f64>>,
    /// Element basis values at the edge quadrature points.
    pub elem_basis: DMatrix<f64>,
    /// Trace basis values (degree `k_f`) in the face's own orientation;
    /// only present when requested (hybrid faces).
    pub trace_basis: Option<DMatrix<f64>>,
    /// Unit tangents along the element's traversal direction.
    pub tangents: Vec<Vector2<f64>>,
}

/// Builds [`EdgeData`] for local edge `le` of element `e`.
pub fn edge_data(
    mesh: &Mesh2D,
    geom: &CurvedGeometry,
    e: usize,
    le: usize,
    elem_basis: &NodalBasis,
    trace_degree: Option<usize>,
    order: usize,
) -> Result<EdgeData, SolveError> {
    let face_id = mesh.element_faces[e][le];
    let face = &mesh.faces[face_id];
    let forward = face.left == e;

    if let Some(nf) = geom.curved_face(face_id) {
        // Curved faces are boundary faces: the owning element is the left
        // one and traverses the face forwards.
        debug_assert!(forward);
        let edge = curved_edge_quadrature(geom, nf, order)?;
        let verts = mesh.element_points(e);
        let map = ElementMap::new(Shape::Triangle, &verts)?;
        let ref_pts: Vec<Point2<f64>> = edge.points.iter().map(|&p| map.to_reference(p)).collect();
        let basis = elem_basis.eval(&ref_pts);
        let trace_basis = match trace_degree {
            Some(kf) => {
                let tb = NodalBasis::new(Shape::Segment, kf)?;
                let pts: Vec<Point2<f64>> =
                    edge.ts.iter().map(|&t| Point2::new(t, 0.0)).collect();
                Some(tb.eval(&pts))
            }
            None => None,
        };
        return Ok(EdgeData {
            face: face_id,
            points: edge.points,
            weights: edge.weights,
            normals: edge.normals,
            elem_basis: basis,
            trace_basis,
            tangents: edge.tangents,
        });
    }

    let rule = segment_rule(order);
    let n_qp = rule.points.len();
    let conn = &mesh.elements[e];
    let (va, vb) = conn.edge(le);
    let (pa, pb) = (mesh.vertices[va], mesh.vertices[vb]);
    let dir = pb - pa;
    let len = dir.norm();
    let normal = Vector2::new(dir.y, -dir.x) / len;
    let (ra, rb) = Shape::ref_edge(
        match conn {
            crate::mesh::ElementConn::Tri(_) => Shape::Triangle,
            crate::mesh::ElementConn::Quad(_) => Shape::Quad,
        },
        le,
    );

    let mut points = Vec::with_capacity(n_qp);
    let mut ref_pts = Vec::with_capacity(n_qp);
    let mut weights = Vec::with_capacity(n_qp);
    for (q, &s) in rule.points.iter().enumerate() {
        points.push(pa + s * dir);
        ref_pts.push(Point2::from(ra.coords + s * (rb.coords - ra.coords)));
        weights.push(rule.weights[q] * len);
    }
    let basis = elem_basis.eval(&ref_pts);
    let trace_basis = match trace_degree {
        Some(kf) => {
            let tb = NodalBasis::new(Shape::Segment, kf)?;
            // Face parameter runs along the stored (left-element) direction.
            let pts: Vec<Point2<f64>> = rule
                .points
                .iter()
                .map(|&s| Point2::new(if forward { s } else { 1.0 - s }, 0.0))
                .collect();
            Some(tb.eval(&pts))
        }
        None => None,
    };
    Ok(EdgeData {
        face: face_id,
        points,
        weights,
        normals: vec![normal; n_qp],
        elem_basis: basis,
        trace_basis,
        tangents: vec![dir / len; n_qp],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{structured, BoundarySpec};
    use crate::refelem::make_reference;
    use approx::assert_relative_eq;

    #[test]
    fn edge_data_orientation_is_consistent_across_sides() {
        // On an internal face, trace basis values seen from both elements at
        // matching physical points must agree.
        let mesh = structured::unit_square_triangles(1, &BoundarySpec::all("b")).unwrap();
        let geom = CurvedGeometry::empty();
        let fid = (0..mesh.n_faces())
            .find(|&f| !mesh.faces[f].is_boundary())
            .unwrap();
        let face = mesh.faces[fid].clone();
        let kf = 3;
        let bl = NodalBasis::new(Shape::Triangle, 2).unwrap();
        let left = edge_data(&mesh, &geom, face.left, face.left_edge, &bl, Some(kf), 8).unwrap();
        let right = edge_data(&mesh, &geom, face.right, face.right_edge, &bl, Some(kf), 8).unwrap();
        let n_qp = left.points.len();
        for q in 0..n_qp {
            // The right element walks the edge backwards.
            let qr = n_qp - 1 - q;
            assert_relative_eq!(left.points[q].x, right.points[qr].x, epsilon = 1e-13);
            assert_relative_eq!(left.points[q].y, right.points[qr].y, epsilon = 1e-13);
            assert!((left.normals[q] + right.normals[qr]).norm() < 1e-13);
            let tl = left.trace_basis.as_ref().unwrap();
            let tr = right.trace_basis.as_ref().unwrap();
            for m in 0..=kf {
                assert_relative_eq!(tl[(q, m)], tr[(qr, m)], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn edge_weights_sum_to_length() {
        let mesh = structured::unit_square_quads(2, &BoundarySpec::all("b")).unwrap();
        let geom = CurvedGeometry::empty();
        let b = NodalBasis::new(Shape::Quad, 1).unwrap();
        for le in 0..4 {
            let ed = edge_data(&mesh, &geom, 0, le, &b, None, 4).unwrap();
            let total: f64 = ed.weights.iter().sum();
            assert_relative_eq!(total, 0.5, epsilon = 1e-13);
        }
    }

    #[test]
    fn element_quadrature_matches_straight_path() {
        let mesh = structured::unit_square_triangles(2, &BoundarySpec::all("b")).unwrap();
        let geom = CurvedGeometry::empty();
        let refel = make_reference(Shape::Triangle, 2, 6).unwrap();
        let eq = element_quadrature(&mesh, &geom, 0, &refel).unwrap();
        assert_relative_eq!(eq.area(), mesh.element_area(0), epsilon = 1e-13);
    }
}
