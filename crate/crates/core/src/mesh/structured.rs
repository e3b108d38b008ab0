//! Structured mesh generators for rectangles and mapped quadrilaterals.
//!
//! These exist as test and benchmark utilities: convergence ladders on the
//! unit square, distorted/stretched variants for robustness studies and the
//! bilinearly mapped grids used by the Cook membrane benchmark. General
//! meshes are inputs (see the mesh file format in [`crate::io`]).

use nalgebra::Point2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{build_skeleton, BoundarySpec, ElementConn, Mesh2D, MeshError};

/// `nx` x `ny` grid of quadrilaterals on `[0,lx] x [0,ly]`.
pub fn rect_quads(
    nx: usize,
    ny: usize,
    lx: f64,
    ly: f64,
    spec: &BoundarySpec,
) -> Result<Mesh2D, MeshError> {
    let (vertices, elements) = rect_grid_quads(nx, ny, |x, y| Point2::new(lx * x, ly * y));
    build_skeleton(vertices, elements, spec)
}

/// `nx` x `ny` grid of triangles (each cell split along its up diagonal).
pub fn rect_triangles(
    nx: usize,
    ny: usize,
    lx: f64,
    ly: f64,
    spec: &BoundarySpec,
) -> Result<Mesh2D, MeshError> {
    let (vertices, elements) = rect_grid_tris(nx, ny, |x, y| Point2::new(lx * x, ly * y));
    build_skeleton(vertices, elements, spec)
}

pub fn unit_square_quads(n: usize, spec: &BoundarySpec) -> Result<Mesh2D, MeshError> {
    rect_quads(n, n, 1.0, 1.0, spec)
}

pub fn unit_square_triangles(n: usize, spec: &BoundarySpec) -> Result<Mesh2D, MeshError> {
    rect_triangles(n, n, 1.0, 1.0, spec)
}

/// Grid of quadrilaterals mapped through an arbitrary vertex map defined on
/// the unit square; used for the Cook membrane geometry.
pub fn mapped_quads(
    nx: usize,
    ny: usize,
    map: impl Fn(f64, f64) -> Point2<f64>,
    spec: &BoundarySpec,
) -> Result<Mesh2D, MeshError> {
    let (vertices, elements) = rect_grid_quads(nx, ny, map);
    build_skeleton(vertices, elements, spec)
}

/// Triangular variant of [`mapped_quads`].
pub fn mapped_triangles(
    nx: usize,
    ny: usize,
    map: impl Fn(f64, f64) -> Point2<f64>,
    spec: &BoundarySpec,
) -> Result<Mesh2D, MeshError> {
    let (vertices, elements) = rect_grid_tris(nx, ny, map);
    build_skeleton(vertices, elements, spec)
}

/// Unit-square quad mesh with random vertex perturbation up to a fraction
/// `delta` of the local edge length (each coordinate moves by at most
/// `delta * h / 2`, which keeps every cell valid for `delta < 0.7`).
/// Interior vertices move freely; boundary vertices slide along their
/// boundary edge; corners stay fixed.
pub fn perturbed_unit_square_quads(
    n: usize,
    delta: f64,
    seed: u64,
    spec: &BoundarySpec,
) -> Result<Mesh2D, MeshError> {
    let (vertices, elements) = perturbed_grid(n, delta, seed, false);
    build_skeleton(vertices, elements, spec)
}

/// Triangular variant of [`perturbed_unit_square_quads`].
pub fn perturbed_unit_square_triangles(
    n: usize,
    delta: f64,
    seed: u64,
    spec: &BoundarySpec,
) -> Result<Mesh2D, MeshError> {
    let (vertices, elements) = perturbed_grid(n, delta, seed, true);
    build_skeleton(vertices, elements, spec)
}

/// Tags the four sides of an axis-aligned rectangle `[0,lx] x [0,ly]` as
/// "left", "right", "bottom", "top".
pub fn rect_side_tags(lx: f64, ly: f64) -> BoundarySpec {
    let tol_x = 1e-9 * lx.max(1.0);
    let tol_y = 1e-9 * ly.max(1.0);
    BoundarySpec::ByMidpoint(Box::new(move |p| {
        if p.x.abs() < tol_x {
            Some("left".to_owned())
        } else if (p.x - lx).abs() < tol_x {
            Some("right".to_owned())
        } else if p.y.abs() < tol_y {
            Some("bottom".to_owned())
        } else if (p.y - ly).abs() < tol_y {
            Some("top".to_owned())
        } else {
            None
        }
    }))
}

fn rect_grid_quads(
    nx: usize,
    ny: usize,
    map: impl Fn(f64, f64) -> Point2<f64>,
) -> (Vec<Point2<f64>>, Vec<ElementConn>) {
    let vid = |i: usize, j: usize| j * (nx + 1) + i;
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            vertices.push(map(i as f64 / nx as f64, j as f64 / ny as f64));
        }
    }
    let mut elements = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            elements.push(ElementConn::Quad([
                vid(i, j),
                vid(i + 1, j),
                vid(i + 1, j + 1),
                vid(i, j + 1),
            ]));
        }
    }
    (vertices, elements)
}

fn rect_grid_tris(
    nx: usize,
    ny: usize,
    map: impl Fn(f64, f64) -> Point2<f64>,
) -> (Vec<Point2<f64>>, Vec<ElementConn>) {
    let (vertices, quads) = rect_grid_quads(nx, ny, map);
    let mut elements = Vec::with_capacity(2 * quads.len());
    for q in quads {
        if let ElementConn::Quad([a, b, c, d]) = q {
            elements.push(ElementConn::Tri([a, b, c]));
            elements.push(ElementConn::Tri([a, c, d]));
        }
    }
    (vertices, elements)
}

fn perturbed_grid(
    n: usize,
    delta: f64,
    seed: u64,
    triangles: bool,
) -> (Vec<Point2<f64>>, Vec<ElementConn>) {
    let h = 1.0 / n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            let mut x = i as f64 * h;
            let mut y = j as f64 * h;
            let on_x = i == 0 || i == n;
            let on_y = j == 0 || j == n;
            let dx: f64 = rng.random_range(-0.5..0.5) * delta * h;
            let dy: f64 = rng.random_range(-0.5..0.5) * delta * h;
            // Boundary vertices slide along the boundary; corners are fixed.
            if !on_x {
                x += dx;
            }
            if !on_y {
                y += dy;
            }
            vertices.push(Point2::new(x, y));
        }
    }
    let vid = |i: usize, j: usize| j * (n + 1) + i;
    let mut elements = Vec::new();
    for j in 0..n {
        for i in 0..n {
            let q = [vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)];
            if triangles {
                elements.push(ElementConn::Tri([q[0], q[1], q[2]]));
                elements.push(ElementConn::Tri([q[0], q[2], q[3]]));
            } else {
                elements.push(ElementConn::Quad(q));
            }
        }
    }
    (vertices, elements)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn side_tags_cover_unit_square() {
        let mesh = rect_quads(3, 3, 1.0, 1.0, &rect_side_tags(1.0, 1.0)).unwrap();
        let mut counts = std::collections::BTreeMap::new();
        for tag in mesh.boundary_tags.values() {
            *counts.entry(tag.clone()).or_insert(0) += 1;
        }
        for side in ["left", "right", "bottom", "top"] {
            assert_eq!(counts[side], 3);
        }
    }

    #[test]
    fn perturbed_mesh_keeps_boundary_on_boundary() {
        let mesh = perturbed_unit_square_quads(5, 0.3, 3, &BoundarySpec::all("b")).unwrap();
        for f in mesh.boundary_tags.keys() {
            let face = &mesh.faces[*f];
            for &v in &face.vertices {
                let p = mesh.vertices[v];
                let on = p.x.abs() < 1e-12
                    || (p.x - 1.0).abs() < 1e-12
                    || p.y.abs() < 1e-12
                    || (p.y - 1.0).abs() < 1e-12;
                assert!(on, "boundary vertex drifted: {p:?}");
            }
        }
    }
}
