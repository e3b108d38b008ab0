//! Unstructured 2D meshes of triangles and quadrilaterals.
//!
//! The mesh owns the element-vertex connectivity, the oriented face table
//! (internal skeleton plus boundary faces), boundary tags and, through
//! [`DegreeField`], the per-element polynomial degree map used by the
//! solvers.
//!
//! Conventions:
//! - element vertices are listed counterclockwise (signed area > 0);
//! - local edge `i` of an element runs from vertex `i` to vertex `i+1`
//!   (cyclically);
//! - a face stores its vertices in the traversal order of its *left*
//!   element, and its unit normal points out of the left element;
//! - for internal faces the left element index is smaller than the right
//!   one.

use std::collections::BTreeMap;

use nalgebra::{Point2, Vector2};
use thiserror::Error;

pub mod structured;

/// Index of the element on the other side of a boundary face.
pub const BOUNDARY: usize = usize::MAX;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("edge ({0}, {1}) is shared by more than two elements")]
    NonManifoldFace(usize, usize),
    #[error("boundary edge ({0}, {1}) has no tag")]
    UntaggedBoundary(usize, usize),
    #[error("element {0} has non-positive signed area {1:.3e}")]
    InvertedElement(usize, f64),
    #[error("vertices {0} and {1} coincide within tolerance")]
    DuplicateVertex(usize, usize),
    #[error("element {elem} references vertex {vertex} but the mesh has {n_vertices} vertices")]
    InvalidVertexIndex {
        elem: usize,
        vertex: usize,
        n_vertices: usize,
    },
}

/// Element connectivity: counterclockwise vertex indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ElementConn {
    Tri([usize; 3]),
    Quad([usize; 4]),
}

impl ElementConn {
    pub fn vertices(&self) -> &[usize] {
        match self {
            ElementConn::Tri(v) => v,
            ElementConn::Quad(v) => v,
        }
    }

    pub fn n_edges(&self) -> usize {
        self.vertices().len()
    }

    /// Vertex pair of local edge `i`, in traversal order.
    pub fn edge(&self, i: usize) -> (usize, usize) {
        let v = self.vertices();
        (v[i], v[(i + 1) % v.len()])
    }
}

/// One face of the mesh: an edge of the element graph.
///
/// `right == BOUNDARY` marks a boundary face. The stored `normal` is the
/// outward unit normal of the left element; the right element sees its
/// negative.
#[derive(Clone, Debug)]
pub struct FaceRecord {
    /// Vertex indices in the traversal order of the left element.
    pub vertices: [usize; 2],
    pub left: usize,
    /// Local edge index within the left element.
    pub left_edge: usize,
    /// Right element index, or [`BOUNDARY`].
    pub right: usize,
    /// Local edge index within the right element (unset for boundary faces).
    pub right_edge: usize,
    /// Unit normal as seen from the left element.
    pub normal: Vector2<f64>,
    pub length: f64,
}

impl FaceRecord {
    pub fn is_boundary(&self) -> bool {
        self.right == BOUNDARY
    }

    /// Midpoint of the straight face.
    pub fn midpoint(&self, mesh: &Mesh2D) -> Point2<f64> {
        let a = mesh.vertices[self.vertices[0]];
        let b = mesh.vertices[self.vertices[1]];
        nalgebra::center(&a, &b)
    }
}

/// Immutable unstructured 2D mesh with oriented face table.
#[derive(Clone, Debug)]
pub struct Mesh2D {
    pub vertices: Vec<Point2<f64>>,
    pub elements: Vec<ElementConn>,
    pub faces: Vec<FaceRecord>,
    /// Face index -> boundary tag, for boundary faces only.
    pub boundary_tags: BTreeMap<usize, String>,
    /// Per element: global face index of each local edge.
    pub element_faces: Vec<Vec<usize>>,
    /// Largest pairwise vertex distance of the whole mesh.
    pub domain_diameter: f64,
}

/// Assigns tags to boundary edges during skeleton construction.
pub enum BoundarySpec {
    /// Every boundary edge gets the same tag.
    All(String),
    /// Map from (unordered) vertex pair to tag; must cover every boundary edge.
    Edges(BTreeMap<(usize, usize), String>),
    /// Tag computed from the edge midpoint; `None` leaves the edge untagged.
    ByMidpoint(Box<dyn Fn(Point2<f64>) -> Option<String>>),
}

impl std::fmt::Debug for BoundarySpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BoundarySpec::All(t) => write!(f, "BoundarySpec::All({t:?})"),
            BoundarySpec::Edges(m) => write!(f, "BoundarySpec::Edges({} entries)", m.len()),
            BoundarySpec::ByMidpoint(_) => write!(f, "BoundarySpec::ByMidpoint(..)"),
        }
    }
}

impl BoundarySpec {
    pub fn all(tag: &str) -> Self {
        BoundarySpec::All(tag.to_owned())
    }

    fn tag_for(&self, a: usize, b: usize, mid: Point2<f64>) -> Option<String> {
        match self {
            BoundarySpec::All(t) => Some(t.clone()),
            BoundarySpec::Edges(map) => {
                let key = (a.min(b), a.max(b));
                map.get(&key).cloned()
            }
            BoundarySpec::ByMidpoint(f) => f(mid),
        }
    }
}

/// Signed area of a polygon given by vertex positions.
pub fn signed_area(pts: &[Point2<f64>]) -> f64 {
    let n = pts.len();
    let mut a = 0.0;
    for i in 0..n {
        let p = pts[i];
        let q = pts[(i + 1) % n];
        a += p.x * q.y - q.x * p.y;
    }
    0.5 * a
}

/// Builds the face table (internal skeleton plus boundary faces) from raw
/// element connectivity and validates the mesh invariants.
pub fn build_skeleton(
    vertices: Vec<Point2<f64>>,
    elements: Vec<ElementConn>,
    boundary_spec: &BoundarySpec,
) -> Result<Mesh2D, MeshError> {
    let n_vertices = vertices.len();
    for (e, conn) in elements.iter().enumerate() {
        for &v in conn.vertices() {
            if v >= n_vertices {
                return Err(MeshError::InvalidVertexIndex {
                    elem: e,
                    vertex: v,
                    n_vertices,
                });
            }
        }
    }

    let domain_diameter = max_pairwise_distance(&vertices);
    let dup_tol = 1e-12 * domain_diameter;
    check_duplicate_vertices(&vertices, dup_tol)?;

    // Orientation and degeneracy.
    for (e, conn) in elements.iter().enumerate() {
        let pts: Vec<_> = conn.vertices().iter().map(|&v| vertices[v]).collect();
        let area = signed_area(&pts);
        if area <= dup_tol * dup_tol.max(f64::MIN_POSITIVE) || area <= 0.0 {
            return Err(MeshError::InvertedElement(e, area));
        }
    }

    // First pass: collect edges keyed by sorted vertex pair. Iterating
    // elements in ascending order makes the discovery order, and therefore
    // the face ordering, deterministic.
    let mut edge_map: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut faces: Vec<FaceRecord> = Vec::new();
    let mut element_faces: Vec<Vec<usize>> = vec![Vec::new(); elements.len()];

    for (e, conn) in elements.iter().enumerate() {
        for le in 0..conn.n_edges() {
            let (a, b) = conn.edge(le);
            let key = (a.min(b), a.max(b));
            match edge_map.get(&key) {
                None => {
                    let pa = vertices[a];
                    let pb = vertices[b];
                    let d = pb - pa;
                    let length = d.norm();
                    // Outward normal of a CCW element: rotate the edge
                    // direction by -90 degrees.
                    let normal = Vector2::new(d.y, -d.x) / length;
                    let id = faces.len();
                    faces.push(FaceRecord {
                        vertices: [a, b],
                        left: e,
                        left_edge: le,
                        right: BOUNDARY,
                        right_edge: usize::MAX,
                        normal,
                        length,
                    });
                    edge_map.insert(key, id);
                    element_faces[e].push(id);
                }
                Some(&id) => {
                    let face = &mut faces[id];
                    if face.right != BOUNDARY {
                        return Err(MeshError::NonManifoldFace(key.0, key.1));
                    }
                    face.right = e;
                    face.right_edge = le;
                    element_faces[e].push(id);
                }
            }
        }
    }

    // Boundary tagging.
    let mut boundary_tags = BTreeMap::new();
    for (id, face) in faces.iter().enumerate() {
        if face.is_boundary() {
            let [a, b] = face.vertices;
            let mid = nalgebra::center(&vertices[a], &vertices[b]);
            match boundary_spec.tag_for(a, b, mid) {
                Some(tag) => {
                    boundary_tags.insert(id, tag);
                }
                None => return Err(MeshError::UntaggedBoundary(a, b)),
            }
        }
    }

    Ok(Mesh2D {
        vertices,
        elements,
        faces,
        boundary_tags,
        element_faces,
        domain_diameter,
    })
}

fn check_duplicate_vertices(vertices: &[Point2<f64>], tol: f64) -> Result<(), MeshError> {
    // Sort by x to avoid the full quadratic scan on large meshes.
    let mut order: Vec<usize> = (0..vertices.len()).collect();
    order.sort_by(|&i, &j| vertices[i].x.total_cmp(&vertices[j].x));
    for (pos, &i) in order.iter().enumerate() {
        for &j in order[pos + 1..].iter() {
            if vertices[j].x - vertices[i].x > tol {
                break;
            }
            if (vertices[i] - vertices[j]).norm() <= tol {
                return Err(MeshError::DuplicateVertex(i.min(j), i.max(j)));
            }
        }
    }
    Ok(())
}

fn max_pairwise_distance(pts: &[Point2<f64>]) -> f64 {
    let mut d2: f64 = 0.0;
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            d2 = d2.max((pts[i] - pts[j]).norm_squared());
        }
    }
    d2.sqrt()
}

impl Mesh2D {
    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn n_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn n_internal_faces(&self) -> usize {
        self.faces.iter().filter(|f| !f.is_boundary()).count()
    }

    pub fn n_boundary_faces(&self) -> usize {
        self.faces.len() - self.n_internal_faces()
    }

    /// Positions of the vertices of element `e`, in CCW order.
    pub fn element_points(&self, e: usize) -> Vec<Point2<f64>> {
        self.elements[e]
            .vertices()
            .iter()
            .map(|&v| self.vertices[v])
            .collect()
    }

    pub fn element_area(&self, e: usize) -> f64 {
        signed_area(&self.element_points(e))
    }

    /// Outward unit normal of face `face` as seen from element `e`.
    pub fn outward_normal(&self, e: usize, face: usize) -> Vector2<f64> {
        let f = &self.faces[face];
        if f.left == e {
            f.normal
        } else {
            debug_assert_eq!(f.right, e);
            -f.normal
        }
    }

    /// Largest pairwise vertex distance of element `e`.
    pub fn element_diameter(&self, e: usize) -> f64 {
        let pts = self.element_points(e);
        max_pairwise_distance(&pts)
    }

    /// Tag of a boundary face, if any.
    pub fn face_tag(&self, face: usize) -> Option<&str> {
        self.boundary_tags.get(&face).map(|s| s.as_str())
    }
}

/// Non-dimensional characteristic size of element `e`:
/// `diameter(element) / diameter(domain)`.
///
/// Equals 1 on a single-element mesh and lies strictly inside (0, 1) for
/// any mesh with at least two elements.
pub fn characteristic_size(mesh: &Mesh2D, e: usize) -> f64 {
    mesh.element_diameter(e) / mesh.domain_diameter
}

/// Per-element polynomial degree map with derived per-face trace degrees.
///
/// The trace degree of an internal face is the maximum of its two neighbor
/// degrees, so the richer side never loses information across the face.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DegreeField {
    k: Vec<usize>,
    k_max: usize,
}

pub const DEFAULT_K_MAX: usize = 8;

impl DegreeField {
    pub fn uniform(n_elements: usize, k: usize) -> Self {
        Self::with_max(vec![k; n_elements], DEFAULT_K_MAX)
    }

    pub fn with_max(k: Vec<usize>, k_max: usize) -> Self {
        assert!(
            k.iter().all(|&ke| ke >= 1 && ke <= k_max),
            "element degree out of [1, {k_max}]"
        );
        DegreeField { k, k_max }
    }

    pub fn k(&self, e: usize) -> usize {
        self.k[e]
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn set_k(&mut self, e: usize, k: usize) {
        assert!(k >= 1 && k <= self.k_max);
        self.k[e] = k;
    }

    pub fn degrees(&self) -> &[usize] {
        &self.k
    }

    /// Trace degree of a face: max of the neighbor degrees.
    pub fn face_degree(&self, mesh: &Mesh2D, face: usize) -> usize {
        let f = &mesh.faces[face];
        if f.is_boundary() {
            self.k[f.left]
        } else {
            self.k[f.left].max(self.k[f.right])
        }
    }

    /// Histogram of element degrees, indexed by degree.
    pub fn degree_counts(&self) -> BTreeMap<usize, usize> {
        let mut counts = BTreeMap::new();
        for &ke in &self.k {
            *counts.entry(ke).or_insert(0) += 1;
        }
        counts
    }
}
