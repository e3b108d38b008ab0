//! Exact curved-boundary treatment: elements with one NURBS edge.
//!
//! A curved element is a triangle whose boundary edge follows a NURBS curve
//! exactly while the other two edges stay straight. Quadrature on the true
//! curved region comes from the transfinite map
//!
//! ```text
//!   psi(t, s) = (1 - s) C(lambda(t)) + s V3
//! ```
//!
//! blending the curve with the interior vertex `V3`. The solution basis is
//! the straight-triangle polynomial basis in physical coordinates, so the
//! functional degree can change freely without touching the geometry.
//!
//! Geometric quantities (areas, arc lengths, normals) are computed with a
//! fixed convergence strategy independent of the functional degree: the same
//! mesh yields bit-identical geometry at every `k`.

use std::collections::BTreeMap;

use nalgebra::{Point2, Vector2};
use thiserror::Error;

use crate::mesh::{build_skeleton, BoundarySpec, ElementConn, Mesh2D, MeshError};
use crate::nurbs::{cubic_interpolant, Curve, NurbsCurve, NurbsError};
use crate::quadrature::gauss_jacobi;

#[derive(Debug, Error)]
pub enum NefemError {
    #[error("transfinite map of element {0} changes orientation (det J = {1:.3e})")]
    SelfIntersectingMapping(usize, f64),
    #[error("fillet radius {0} must lie strictly between 0 and the inclusion half side {1}")]
    InvalidRadius(f64, f64),
    #[error("curved quadrature did not converge for element {0}")]
    QuadratureNotConverged(usize),
    #[error("curve endpoints of face {0} do not match its mesh vertices (gap {1:.3e})")]
    EndpointMismatch(usize, f64),
    #[error(transparent)]
    Nurbs(#[from] NurbsError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

/// Binding of a mesh face to a parameter interval of a boundary curve.
///
/// `lambda.0` is the curve parameter of `face.vertices[0]` and `lambda.1`
/// that of `face.vertices[1]`; the interval may be decreasing when the
/// owning element traverses the curve backwards.
#[derive(Clone, Debug)]
pub struct NefemFace {
    pub face: usize,
    pub curve: usize,
    pub lambda: (f64, f64),
    /// Vertex of the owning triangle opposite the curved edge.
    pub interior_vertex: usize,
}

/// All curved-boundary data of a mesh: the curves and the face bindings.
#[derive(Clone, Debug, Default)]
pub struct CurvedGeometry {
    pub curves: Vec<Curve>,
    pub faces: BTreeMap<usize, NefemFace>,
}

impl CurvedGeometry {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn curved_face(&self, face: usize) -> Option<&NefemFace> {
        self.faces.get(&face)
    }

    /// The curved face of element `e`, if any. At most one per element.
    pub fn element_curved_face(&self, mesh: &Mesh2D, e: usize) -> Option<&NefemFace> {
        mesh.element_faces[e]
            .iter()
            .find_map(|f| self.faces.get(f))
    }

    /// Checks that bound curve endpoints coincide with the mesh vertices.
    pub fn validate(&self, mesh: &Mesh2D) -> Result<(), NefemError> {
        let tol = 1e-10 * mesh.domain_diameter;
        for nf in self.faces.values() {
            let face = &mesh.faces[nf.face];
            let curve = &self.curves[nf.curve];
            let p0 = curve.eval(nf.lambda.0)?;
            let p1 = curve.eval(nf.lambda.1)?;
            let gap = (p0 - mesh.vertices[face.vertices[0]])
                .norm()
                .max((p1 - mesh.vertices[face.vertices[1]]).norm());
            if gap > tol {
                return Err(NefemError::EndpointMismatch(nf.face, gap));
            }
        }
        Ok(())
    }

    /// Replaces every bound curve span by its cubic polynomial interpolant.
    /// The result is the frozen polynomial geometry used for comparison
    /// against the exact representation.
    pub fn to_frozen_cubic(&self) -> Result<CurvedGeometry, NefemError> {
        let mut curves = Vec::new();
        let mut faces = BTreeMap::new();
        for (&fid, nf) in &self.faces {
            let (a, b) = (nf.lambda.0.min(nf.lambda.1), nf.lambda.0.max(nf.lambda.1));
            let nurbs = match &self.curves[nf.curve] {
                Curve::Nurbs(c) => c,
                Curve::Poly(_) => {
                    return Err(NurbsError::InvalidData(
                        "geometry is already polynomial".into(),
                    )
                    .into())
                }
            };
            let poly = cubic_interpolant(nurbs, a, b)?;
            let idx = curves.len();
            curves.push(Curve::Poly(poly));
            faces.insert(
                fid,
                NefemFace {
                    face: fid,
                    curve: idx,
                    lambda: nf.lambda,
                    interior_vertex: nf.interior_vertex,
                },
            );
        }
        Ok(CurvedGeometry { curves, faces })
    }
}

// ---------------------------------------------------------------------------
// Quadrature on curved elements
// ---------------------------------------------------------------------------

/// Quadrature along a curved face, in the face parameter `t` in `[0,1]`
/// aligned with `face.vertices[0] -> face.vertices[1]`.
#[derive(Clone, Debug)]
pub struct CurvedEdgeQuad {
    pub ts: Vec<f64>,
    pub points: Vec<Point2<f64>>,
    /// Arc-length weights.
    pub weights: Vec<f64>,
    /// Outward normals of the owning element.
    pub normals: Vec<Vector2<f64>>,
    pub tangents: Vec<Vector2<f64>>,
}

impl CurvedEdgeQuad {
    pub fn arc_length(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Physical quadrature of a curved element: the volume rule over the exact
/// region and the rule along the curved edge.
#[derive(Clone, Debug)]
pub struct CurvedElementQuadrature {
    pub volume_points: Vec<Point2<f64>>,
    pub volume_weights: Vec<f64>,
    pub edge: CurvedEdgeQuad,
}

impl CurvedElementQuadrature {
    pub fn area(&self) -> f64 {
        self.volume_weights.iter().sum()
    }
}

fn cross(a: Vector2<f64>, b: Vector2<f64>) -> f64 {
    a.x * b.y - a.y * b.x
}

struct Transfinite<'a> {
    curve: &'a Curve,
    lambda: (f64, f64),
    apex: Point2<f64>,
}

impl Transfinite<'_> {
    fn lambda_at(&self, t: f64) -> f64 {
        self.lambda.0 + t * (self.lambda.1 - self.lambda.0)
    }

    /// Point of the curved edge and its derivative with respect to `t`.
    fn edge_at(&self, t: f64) -> Result<(Point2<f64>, Vector2<f64>), NurbsError> {
        let (p, dp) = self.curve.eval_with_tangent(self.lambda_at(t))?;
        Ok((p, dp * (self.lambda.1 - self.lambda.0)))
    }

    /// Volume rule with `n` Gauss points per direction. Returns
    /// `(points, weights, min det J)`.
    fn volume_rule(
        &self,
        n: usize,
    ) -> Result<(Vec<Point2<f64>>, Vec<f64>, f64), NurbsError> {
        let (xs, ws) = gauss_jacobi(n, 0, 0);
        let ts: Vec<f64> = xs.iter().map(|&x| 0.5 * (x + 1.0)).collect();
        let mut points = Vec::with_capacity(n * n);
        let mut weights = Vec::with_capacity(n * n);
        let mut min_det = f64::INFINITY;
        for (i, &t) in ts.iter().enumerate() {
            let (c, dc) = self.edge_at(t)?;
            for (j, &s) in ts.iter().enumerate() {
                // psi = (1-s) C(t) + s apex
                let det = (1.0 - s) * cross(dc, self.apex - c);
                min_det = min_det.min(det);
                points.push(Point2::from((1.0 - s) * c.coords + s * self.apex.coords));
                weights.push(0.25 * ws[i] * ws[j] * det);
            }
        }
        Ok((points, weights, min_det))
    }

    fn area(&self, n: usize) -> Result<(f64, f64), NurbsError> {
        let (_, w, min_det) = self.volume_rule(n)?;
        Ok((w.iter().sum(), min_det))
    }
}

fn edge_rule(
    curve: &Curve,
    lambda: (f64, f64),
    n: usize,
) -> Result<CurvedEdgeQuad, NurbsError> {
    let (xs, ws) = gauss_jacobi(n, 0, 0);
    let mut out = CurvedEdgeQuad {
        ts: Vec::with_capacity(n),
        points: Vec::with_capacity(n),
        weights: Vec::with_capacity(n),
        normals: Vec::with_capacity(n),
        tangents: Vec::with_capacity(n),
    };
    for (i, &x) in xs.iter().enumerate() {
        let t = 0.5 * (x + 1.0);
        let l = lambda.0 + t * (lambda.1 - lambda.0);
        let (p, dp) = curve.eval_with_tangent(l)?;
        let dt = dp * (lambda.1 - lambda.0);
        let speed = dt.norm();
        out.ts.push(t);
        out.points.push(p);
        out.weights.push(0.5 * ws[i] * speed);
        // Same convention as straight faces: rotate the traversal direction
        // by -90 degrees to get the outward normal of a CCW element.
        out.normals.push(Vector2::new(dt.y, -dt.x) / speed);
        out.tangents.push(dt / speed);
    }
    Ok(out)
}

const MAX_RULE_POINTS: usize = 96;

/// Builds the physical quadrature of a curved element. The rule starts at
/// `target_order` and is refined (points doubled) until the element area is
/// converged to 1e-9 relative and the arc length to 1e-12 relative.
pub fn curved_element_quadrature(
    mesh: &Mesh2D,
    geom: &CurvedGeometry,
    elem: usize,
    target_order: usize,
) -> Result<CurvedElementQuadrature, NefemError> {
    let nf = geom
        .element_curved_face(mesh, elem)
        .expect("element has no curved face");
    let map = Transfinite {
        curve: &geom.curves[nf.curve],
        lambda: nf.lambda,
        apex: mesh.vertices[nf.interior_vertex],
    };

    let mut n = (target_order / 2 + 1).max(3);
    let (mut area, mut min_det) = map.area(n)?;
    loop {
        let n2 = 2 * n;
        if n2 > MAX_RULE_POINTS {
            return Err(NefemError::QuadratureNotConverged(elem));
        }
        let (area2, det2) = map.area(n2)?;
        min_det = min_det.min(det2);
        if min_det <= 0.0 {
            return Err(NefemError::SelfIntersectingMapping(elem, min_det));
        }
        if (area2 - area).abs() <= 1e-9 * area2.abs().max(1e-300) {
            n = n2;
            break;
        }
        area = area2;
        n = n2;
    }
    let (volume_points, volume_weights, det) = map.volume_rule(n)?;
    if det <= 0.0 {
        return Err(NefemError::SelfIntersectingMapping(elem, det));
    }

    // Edge rule with its own convergence loop on the arc length.
    let mut ne = (target_order / 2 + 1).max(3);
    let mut edge = edge_rule(map.curve, nf.lambda, ne)?;
    loop {
        let ne2 = 2 * ne;
        if ne2 > MAX_RULE_POINTS {
            return Err(NefemError::QuadratureNotConverged(elem));
        }
        let refined = edge_rule(map.curve, nf.lambda, ne2)?;
        if (refined.arc_length() - edge.arc_length()).abs()
            <= 1e-12 * refined.arc_length().abs().max(1e-300)
        {
            edge = refined;
            break;
        }
        edge = refined;
        ne = ne2;
    }

    Ok(CurvedElementQuadrature {
        volume_points,
        volume_weights,
        edge,
    })
}

/// Edge rule of a curved face alone, refined until the arc length is
/// converged to 1e-12 relative.
pub fn curved_edge_quadrature(
    geom: &CurvedGeometry,
    nf: &NefemFace,
    target_order: usize,
) -> Result<CurvedEdgeQuad, NefemError> {
    let curve = &geom.curves[nf.curve];
    let mut n = (target_order / 2 + 1).max(3);
    let mut edge = edge_rule(curve, nf.lambda, n)?;
    loop {
        let n2 = 2 * n;
        if n2 > MAX_RULE_POINTS {
            return Err(NefemError::QuadratureNotConverged(nf.face));
        }
        let refined = edge_rule(curve, nf.lambda, n2)?;
        let done = (refined.arc_length() - edge.arc_length()).abs()
            <= 1e-12 * refined.arc_length().abs().max(1e-300);
        edge = refined;
        if done {
            return Ok(edge);
        }
        n = n2;
    }
}

/// Exact area of a curved element, computed with a fixed strategy that does
/// not depend on any functional degree.
pub fn curved_area(mesh: &Mesh2D, geom: &CurvedGeometry, elem: usize) -> Result<f64, NefemError> {
    let q = curved_element_quadrature(mesh, geom, elem, 8)?;
    Ok(q.area())
}

/// Arc length of a curved face, fixed strategy.
pub fn curved_arc_length(geom: &CurvedGeometry, face: &NefemFace) -> Result<f64, NefemError> {
    let mut n = 8;
    let mut rule = edge_rule(&geom.curves[face.curve], face.lambda, n)?;
    while n <= MAX_RULE_POINTS {
        let refined = edge_rule(&geom.curves[face.curve], face.lambda, 2 * n)?;
        if (refined.arc_length() - rule.arc_length()).abs() <= 1e-12 * refined.arc_length() {
            return Ok(refined.arc_length());
        }
        rule = refined;
        n *= 2;
    }
    Ok(rule.arc_length())
}

// ---------------------------------------------------------------------------
// Fillet domain: rectangle with a rounded-square inclusion
// ---------------------------------------------------------------------------

/// Boundary description of a rectangular domain with a centered square
/// inclusion whose corners are rounded by fillets of radius `r`.
#[derive(Clone, Debug)]
pub struct FilletDomain {
    pub width: f64,
    pub height: f64,
    pub half_side: f64,
    pub radius: f64,
    /// Inclusion boundary, CCW, alternating straight sides and arcs:
    /// right side, NE arc, top, NW arc, left, SW arc, bottom, SE arc.
    pub inclusion: Vec<NurbsCurve>,
}

impl FilletDomain {
    pub fn inclusion_perimeter(&self) -> f64 {
        8.0 * (self.half_side - self.radius) + 2.0 * std::f64::consts::PI * self.radius
    }
}

/// Closed C1 inclusion boundary: four straight segments and four exact
/// circular-arc NURBS of radius `r`.
pub fn build_fillet_domain(
    width: f64,
    height: f64,
    half_side: f64,
    r: f64,
) -> Result<FilletDomain, NefemError> {
    if !(r > 0.0 && r < half_side) {
        return Err(NefemError::InvalidRadius(r, half_side));
    }
    let h = half_side;
    let c = h - r;
    use std::f64::consts::FRAC_PI_2 as Q;
    let pieces = vec![
        NurbsCurve::line(Point2::new(h, -c), Point2::new(h, c)),
        NurbsCurve::circular_arc(Point2::new(c, c), r, 0.0, Q),
        NurbsCurve::line(Point2::new(c, h), Point2::new(-c, h)),
        NurbsCurve::circular_arc(Point2::new(-c, c), r, Q, 2.0 * Q),
        NurbsCurve::line(Point2::new(-h, c), Point2::new(-h, -c)),
        NurbsCurve::circular_arc(Point2::new(-c, -c), r, 2.0 * Q, 3.0 * Q),
        NurbsCurve::line(Point2::new(-c, -h), Point2::new(c, -h)),
        NurbsCurve::circular_arc(Point2::new(c, -c), r, 3.0 * Q, 4.0 * Q),
    ];
    Ok(FilletDomain {
        width,
        height,
        half_side,
        radius: r,
        inclusion: pieces,
    })
}

/// A mesh of the region between the inclusion and the outer rectangle,
/// suitable for the electrostatics benchmark: a single swept ring of
/// quadrilaterals with each fillet arc carried exactly by one curved
/// triangle edge.
pub struct FilletMesh {
    pub mesh: Mesh2D,
    pub geometry: CurvedGeometry,
}

/// Builds the ring mesh. `segments_per_side` controls the tangential
/// resolution of the straight inclusion sides; `n_layers` the radial one.
///
/// Rays are cast from the origin through every inclusion boundary node
/// (inserting nodes at the rectangle corner directions), which keeps the
/// swept quadrilaterals valid. Each arc spans exactly one boundary edge
/// owned by a triangle whose apex is placed inside the visibility kernel of
/// the arc; the remaining cells of the first layer are split off the apex as
/// a fan.
pub fn fillet_ring_mesh(
    domain: &FilletDomain,
    segments_per_side: usize,
    n_layers: usize,
) -> Result<FilletMesh, NefemError> {
    assert!(segments_per_side >= 2 && n_layers >= 2);
    let h = domain.half_side;
    let hw = 0.5 * domain.width;
    let hh = 0.5 * domain.height;

    // Inclusion boundary nodes, CCW, with their curve piece and parameter.
    // Arc endpoints are always nodes; arcs get no interior nodes.
    #[derive(Clone)]
    struct Ring {
        point: Point2<f64>,
        piece: usize,
        lambda: f64,
    }
    let corner_angles: Vec<f64> = [
        Point2::new(hw, hh),
        Point2::new(-hw, hh),
        Point2::new(-hw, -hh),
        Point2::new(hw, -hh),
    ]
    .iter()
    .map(|p| p.y.atan2(p.x))
    .collect();

    let mut ring: Vec<Ring> = Vec::new();
    for (piece, curve) in domain.inclusion.iter().enumerate() {
        let is_arc = piece % 2 == 1;
        if is_arc {
            ring.push(Ring {
                point: curve.eval(0.0)?,
                piece,
                lambda: 0.0,
            });
        } else {
            // Uniform subdivision plus nodes at rectangle-corner rays.
            let mut params: Vec<f64> = (0..segments_per_side)
                .map(|i| i as f64 / segments_per_side as f64)
                .collect();
            let a = curve.eval(0.0)?;
            let b = curve.eval(1.0)?;
            for &theta in &corner_angles {
                // Intersection of the corner ray with this straight side:
                // solve a + t seg = s d by crossing with d.
                let d = Vector2::new(theta.cos(), theta.sin());
                let seg = b - a;
                let denom = cross(d, seg);
                if denom.abs() < 1e-14 {
                    continue;
                }
                let t = cross(a.coords, d) / denom;
                if t > 1e-9 && t < 1.0 - 1e-9 {
                    let p = a + t * seg;
                    if p.coords.dot(&d) > 0.0 {
                        params.push(t);
                    }
                }
            }
            params.sort_by(f64::total_cmp);
            params.dedup_by(|x, y| (*x - *y).abs() < 1e-9);
            for t in params {
                ring.push(Ring {
                    point: curve.eval(t)?,
                    piece,
                    lambda: t,
                });
            }
        }
    }
    let n_ring = ring.len();

    // Outer node along the ray of each inclusion node.
    let outer_point = |p: Point2<f64>| -> Point2<f64> {
        let theta = p.y.atan2(p.x);
        let (ct, st) = (theta.cos(), theta.sin());
        let rho_w = if ct.abs() > 1e-15 { hw / ct.abs() } else { f64::INFINITY };
        let rho_h = if st.abs() > 1e-15 { hh / st.abs() } else { f64::INFINITY };
        let rho = rho_w.min(rho_h);
        Point2::new(rho * ct, rho * st)
    };

    // Radial layer fractions: geometric grading, thin near the inclusion.
    let grading: f64 = 1.45;
    let total: f64 = (0..n_layers).map(|i| grading.powi(i as i32)).sum();
    let mut fractions = vec![0.0];
    let mut acc = 0.0;
    for i in 0..n_layers {
        acc += grading.powi(i as i32) / total;
        fractions.push(acc.min(1.0));
    }
    // Thick enough first layer for the arc apexes to see their arcs.
    fractions[1] = fractions[1].max(0.14);

    let mut vertices: Vec<Point2<f64>> = Vec::new();
    let vid = |layer: usize, i: usize| layer * n_ring + i;
    for &s in fractions.iter() {
        for node in &ring {
            let out = outer_point(node.point);
            vertices.push(Point2::from(
                (1.0 - s) * node.point.coords + s * out.coords,
            ));
        }
    }

    let mut elements: Vec<ElementConn> = Vec::new();
    // (element index, ring index of the arc start node, piece)
    let mut arc_elements: Vec<(usize, usize, usize)> = Vec::new();

    for i in 0..n_ring {
        let j = (i + 1) % n_ring;
        let inner_i = vid(0, i);
        let inner_j = vid(0, j);
        let out_i = vid(1, i);
        let out_j = vid(1, j);
        let is_arc = ring[i].piece % 2 == 1;
        if is_arc {
            // Fan the first-layer cell around a dedicated apex placed in the
            // visibility kernel of the arc (beyond both endpoint tangent
            // lines |x| = h, |y| = h of the corner), so the transfinite map
            // of the curved triangle keeps a positive Jacobian.
            let piece = ring[i].piece;
            let quad_mid = Point2::from(
                0.25 * (vertices[inner_i].coords
                    + vertices[inner_j].coords
                    + vertices[out_i].coords
                    + vertices[out_j].coords),
            );
            let outer_mid =
                Point2::from(0.5 * (vertices[out_i].coords + vertices[out_j].coords));
            let apex = Point2::from(
                quad_mid.coords + 0.7 * (outer_mid.coords - quad_mid.coords),
            );
            debug_assert!(
                apex.x.abs() > h && apex.y.abs() > h,
                "arc apex {apex:?} outside visibility kernel"
            );
            let apex_id = vertices.len();
            vertices.push(apex);
            arc_elements.push((elements.len(), i, piece));
            elements.push(ElementConn::Tri([inner_j, inner_i, apex_id]));
            elements.push(ElementConn::Tri([inner_i, out_i, apex_id]));
            elements.push(ElementConn::Tri([out_i, out_j, apex_id]));
            elements.push(ElementConn::Tri([out_j, inner_j, apex_id]));
        } else {
            elements.push(ElementConn::Quad([inner_j, inner_i, out_i, out_j]));
        }
    }

    // Remaining layers: plain swept quads.
    for layer in 1..n_layers {
        for i in 0..n_ring {
            let j = (i + 1) % n_ring;
            elements.push(ElementConn::Quad([
                vid(layer, j),
                vid(layer, i),
                vid(layer + 1, i),
                vid(layer + 1, j),
            ]));
        }
    }

    let tol = 1e-9 * (hw.max(hh));
    let spec = BoundarySpec::ByMidpoint(Box::new(move |p| {
        if p.x.abs() > hw - tol || p.y.abs() > hh - tol {
            Some("outer".to_owned())
        } else {
            Some("inclusion".to_owned())
        }
    }));
    let mesh = build_skeleton(vertices, elements, &spec)?;

    // Bind the arc faces.
    let mut geom = CurvedGeometry::empty();
    for (elem, i, piece) in arc_elements {
        let j = (i + 1) % n_ring;
        let (a, b) = (vid(0, j), vid(0, i));
        let face_id = mesh.element_faces[elem]
            .iter()
            .copied()
            .find(|&f| {
                let mut v = mesh.faces[f].vertices;
                v.sort_unstable();
                v == {
                    let mut w = [a, b];
                    w.sort_unstable();
                    w
                }
            })
            .expect("arc face exists");
        let face = &mesh.faces[face_id];
        // Element traverses the arc from theta-end to theta-start.
        let lambda = if face.vertices[0] == vid(0, j) {
            (1.0, 0.0)
        } else {
            (0.0, 1.0)
        };
        let curve_idx = geom.curves.len();
        geom.curves
            .push(Curve::Nurbs(domain.inclusion[piece].clone()));
        let apex = mesh.elements[elem]
            .vertices()
            .iter()
            .copied()
            .find(|&v| v != a && v != b)
            .unwrap();
        geom.faces.insert(
            face_id,
            NefemFace {
                face: face_id,
                curve: curve_idx,
                lambda,
                interior_vertex: apex,
            },
        );
    }
    geom.validate(&mesh)?;
    Ok(FilletMesh {
        mesh,
        geometry: geom,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    /// One curved triangle: arc of radius `r` spanning `theta`, apex `v3`.
    fn one_arc_triangle(
        r: f64,
        theta: f64,
        v3: Point2<f64>,
    ) -> (Mesh2D, CurvedGeometry) {
        let arc = NurbsCurve::circular_arc(Point2::new(0.0, 0.0), r, 0.0, theta);
        let a = arc.eval(0.0).unwrap();
        let b = arc.eval(1.0).unwrap();
        // CCW triangle (b, a, v3): traverses the arc backwards so the domain
        // lies outside the circle.
        let mesh = build_skeleton(
            vec![b, a, v3],
            vec![ElementConn::Tri([0, 1, 2])],
            &BoundarySpec::all("b"),
        )
        .unwrap();
        let face_id = mesh.element_faces[0]
            .iter()
            .copied()
            .find(|&f| {
                let mut v = mesh.faces[f].vertices;
                v.sort_unstable();
                v == [0, 1]
            })
            .unwrap();
        let mut geom = CurvedGeometry::empty();
        geom.curves.push(Curve::Nurbs(arc));
        geom.faces.insert(
            face_id,
            NefemFace {
                face: face_id,
                curve: 0,
                lambda: (1.0, 0.0),
                interior_vertex: 2,
            },
        );
        geom.validate(&mesh).unwrap();
        (mesh, geom)
    }

    #[test]
    fn straight_nurbs_edge_matches_straight_quadrature() {
        let p0 = Point2::new(0.0, 0.0);
        let p1 = Point2::new(1.0, 0.0);
        let v3 = Point2::new(0.4, 0.9);
        let mesh = build_skeleton(
            vec![p0, p1, v3],
            vec![ElementConn::Tri([0, 1, 2])],
            &BoundarySpec::all("b"),
        )
        .unwrap();
        let mut geom = CurvedGeometry::empty();
        geom.curves.push(Curve::Nurbs(NurbsCurve::line(p0, p1)));
        geom.faces.insert(
            0,
            NefemFace {
                face: 0,
                curve: 0,
                lambda: (0.0, 1.0),
                interior_vertex: 2,
            },
        );
        let q = curved_element_quadrature(&mesh, &geom, 0, 4).unwrap();
        assert_relative_eq!(q.area(), mesh.element_area(0), epsilon = 1e-13);
        assert_relative_eq!(q.edge.arc_length(), 1.0, epsilon = 1e-13);
        for n in &q.edge.normals {
            assert_relative_eq!(n.x, 0.0, epsilon = 1e-14);
            assert_relative_eq!(n.y, -1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn curved_area_matches_circular_segment_correction() {
        let r = 1.0;
        let theta = PI / 6.0;
        let v3 = Point2::new(2.5, 0.5);
        let (mesh, geom) = one_arc_triangle(r, theta, v3);
        let straight = mesh.element_area(0);
        let segment = 0.5 * r * r * (theta - theta.sin());
        // The arc bulges away from the apex, carving the circular segment
        // out of the straight triangle.
        let exact = straight - segment;
        let area = curved_area(&mesh, &geom, 0).unwrap();
        assert_relative_eq!(area, exact, epsilon = 1e-9);
        let q = curved_element_quadrature(&mesh, &geom, 0, 6).unwrap();
        assert!(q.volume_weights.iter().all(|&w| w > 0.0));
    }

    #[test]
    fn quarter_circle_arc_length() {
        let (mesh, geom) = one_arc_triangle(1.0, PI / 2.0, Point2::new(2.2, 2.2));
        let nf = geom.faces.values().next().unwrap();
        let len = curved_arc_length(&geom, nf).unwrap();
        assert_relative_eq!(len, PI / 2.0, epsilon = 1e-10);
        let _ = mesh;
    }

    #[test]
    fn normals_are_orthogonal_to_tangents() {
        let (mesh, geom) = one_arc_triangle(1.5, PI / 3.0, Point2::new(3.0, 1.5));
        let q = curved_element_quadrature(&mesh, &geom, 0, 8).unwrap();
        for (n, t) in q.edge.normals.iter().zip(q.edge.tangents.iter()) {
            assert!(n.dot(t).abs() < 1e-12);
            assert_relative_eq!(n.norm(), 1.0, epsilon = 1e-12);
        }
        // Outward from the element: normals point towards the circle center
        // side opposite to the apex. Check against the apex direction.
        for (p, n) in q.edge.points.iter().zip(q.edge.normals.iter()) {
            let to_apex = Point2::new(3.0, 1.5) - p;
            assert!(n.dot(&to_apex) < 0.0, "normal not outward");
        }
    }

    #[test]
    fn geometry_is_bit_stable_across_degrees() {
        let (mesh, geom) = one_arc_triangle(1.0, PI / 2.0, Point2::new(2.2, 2.2));
        let nf = geom.faces.values().next().unwrap().clone();
        let area0 = curved_area(&mesh, &geom, 0).unwrap();
        let len0 = curved_arc_length(&geom, &nf).unwrap();
        for _k in 1..=8 {
            // Functional refinement never touches the curve, so geometric
            // quantities recomputed at any degree are identical bit for bit.
            let area = curved_area(&mesh, &geom, 0).unwrap();
            let len = curved_arc_length(&geom, &nf).unwrap();
            assert_eq!(area.to_bits(), area0.to_bits());
            assert_eq!(len.to_bits(), len0.to_bits());
        }
    }

    #[test]
    fn inverted_apex_is_rejected() {
        // Apex on the wrong side of the arc: the transfinite map folds.
        let arc = NurbsCurve::circular_arc(Point2::new(0.0, 0.0), 1.0, 0.0, PI / 2.0);
        let a = arc.eval(0.0).unwrap();
        let b = arc.eval(1.0).unwrap();
        let v3 = Point2::new(0.2, 0.2); // inside the circle
        let mesh = build_skeleton(
            vec![b, a, v3],
            vec![ElementConn::Tri([0, 1, 2])],
            &BoundarySpec::all("b"),
        );
        // The straight triangle itself may be inverted here; if it builds,
        // the curved quadrature must fail.
        if let Ok(mesh) = mesh {
            let mut geom = CurvedGeometry::empty();
            geom.curves.push(Curve::Nurbs(arc));
            geom.faces.insert(
                0,
                NefemFace {
                    face: 0,
                    curve: 0,
                    lambda: (1.0, 0.0),
                    interior_vertex: 2,
                },
            );
            let res = curved_element_quadrature(&mesh, &geom, 0, 4);
            assert!(matches!(res, Err(NefemError::SelfIntersectingMapping(..))));
        }
    }

    #[test]
    fn fillet_domain_perimeters() {
        let d5 = build_fillet_domain(150.0, 200.0, 50.0, 5.0).unwrap();
        assert_relative_eq!(d5.inclusion_perimeter(), 360.0 + 10.0 * PI, epsilon = 1e-12);
        let d1 = build_fillet_domain(150.0, 200.0, 50.0, 1.0).unwrap();
        assert_relative_eq!(d1.inclusion_perimeter(), 392.0 + 2.0 * PI, epsilon = 1e-12);
        assert!(matches!(
            build_fillet_domain(150.0, 200.0, 50.0, 50.0),
            Err(NefemError::InvalidRadius(..))
        ));
        assert!(matches!(
            build_fillet_domain(150.0, 200.0, 50.0, -1.0),
            Err(NefemError::InvalidRadius(..))
        ));
        // Each arc piece really lies on its circle.
        for (i, piece) in d1.inclusion.iter().enumerate() {
            if i % 2 == 1 {
                let centers = [
                    Point2::new(49.0, 49.0),
                    Point2::new(-49.0, 49.0),
                    Point2::new(-49.0, -49.0),
                    Point2::new(49.0, -49.0),
                ];
                let c = centers[i / 2];
                for j in 0..=10 {
                    let p = piece.eval(j as f64 / 10.0).unwrap();
                    assert_relative_eq!((p - c).norm(), 1.0, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn fillet_ring_mesh_is_valid() {
        for r in [1.0, 2.0, 5.0] {
            let domain = build_fillet_domain(150.0, 200.0, 50.0, r).unwrap();
            let fm = fillet_ring_mesh(&domain, 8, 5).unwrap();
            assert_eq!(fm.geometry.faces.len(), 4, "one curved face per fillet");
            // Curved quadrature valid on all four arc elements.
            for nf in fm.geometry.faces.values() {
                let e = fm.mesh.faces[nf.face].left;
                let q = curved_element_quadrature(&fm.mesh, &fm.geometry, e, 6).unwrap();
                assert!(q.volume_weights.iter().all(|&w| w > 0.0));
                assert_relative_eq!(
                    q.edge.arc_length(),
                    0.5 * PI * r,
                    epsilon = 1e-9 * r.max(1.0)
                );
            }
            // Mesh area + inclusion area = rectangle area.
            let mut total = 0.0;
            for e in 0..fm.mesh.n_elements() {
                if fm.geometry.element_curved_face(&fm.mesh, e).is_some() {
                    total += curved_area(&fm.mesh, &fm.geometry, e).unwrap();
                } else {
                    total += fm.mesh.element_area(e);
                }
            }
            let inclusion_area = 100.0f64.powi(2) - (4.0 - PI) * r * r;
            assert_relative_eq!(total, 150.0 * 200.0 - inclusion_area, epsilon = 1e-6);
        }
    }

    #[test]
    fn frozen_cubic_geometry_deviates_from_exact() {
        let domain = build_fillet_domain(150.0, 200.0, 50.0, 1.0).unwrap();
        let fm = fillet_ring_mesh(&domain, 8, 5).unwrap();
        let frozen = fm.geometry.to_frozen_cubic().unwrap();
        assert_eq!(frozen.faces.len(), 4);
        frozen.validate(&fm.mesh).unwrap();
        // The cubic arc differs from the exact arc in between the
        // interpolation points.
        let nf = frozen.faces.values().next().unwrap();
        let exact_nf = fm.geometry.faces.get(&nf.face).unwrap();
        let mid = 0.5 * (nf.lambda.0 + nf.lambda.1);
        let pc = frozen.curves[nf.curve].eval(mid).unwrap();
        let pe = fm.geometry.curves[exact_nf.curve].eval(mid).unwrap();
        let gap = (pc - pe).norm();
        assert!(gap > 1e-7 && gap < 1e-2, "gap = {gap:.3e}");
    }
}
