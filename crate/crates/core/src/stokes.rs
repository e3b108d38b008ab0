//! Face-centered finite volume discretization of incompressible Stokes:
//! the lowest-order hybrid method.
//!
//! Every field is piecewise constant: velocity, pressure and the scaled
//! velocity gradient `L = -sqrt(nu) grad u` per cell, velocity per face, and
//! one mean-pressure unknown per cell. All integrals use a single point (the
//! cell centroid, the face midpoint), under which the local problems
//! decouple into closed-form expressions and no local solves are needed.
//! The globally coupled system is symmetric with a saddle-point structure
//! of size `n_fc * n_sd + n_el`, `n_fc` counting internal plus Neumann
//! faces. Velocity and pressure share the same (constant) approximation
//! space; the pressure stays stable and first-order convergent regardless.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, Matrix2, Point2, Vector2};
use rayon::prelude::*;
use thiserror::Error;

use crate::assembly::{solve_condensed, GlobalLayout, SolverKind, SystemBuilder};
use crate::mesh::Mesh2D;
use crate::physics::{
    classify_faces, FaceRole, SolveError, TauSpec, TractionFn, VectorBc, VectorBcs, VectorFn,
};

#[derive(Debug, Error)]
pub enum FcfvError {
    #[error("cell {0} has zero perimeter")]
    ZeroPerimeter(usize),
    #[error(transparent)]
    Solve(#[from] SolveError),
}

/// One-point geometric data of a cell: face midpoints, measures and outward
/// normals, cell measure, centroid and perimeter.
#[derive(Clone, Debug)]
pub struct FcfvCell {
    pub faces: Vec<usize>,
    pub face_len: Vec<f64>,
    pub face_mid: Vec<Point2<f64>>,
    pub normals: Vec<Vector2<f64>>,
    pub area: f64,
    pub perimeter: f64,
    pub centroid: Point2<f64>,
}

/// Geometry cache for the whole mesh plus the per-(cell, face) tau.
#[derive(Clone, Debug)]
pub struct FcfvGeomCache {
    pub cells: Vec<FcfvCell>,
    pub tau: Vec<Vec<f64>>,
}

pub fn build_geom_cache(
    mesh: &Mesh2D,
    tau: TauSpec,
    viscosity: f64,
) -> Result<FcfvGeomCache, FcfvError> {
    let mut cells = Vec::with_capacity(mesh.n_elements());
    let mut taus = Vec::with_capacity(mesh.n_elements());
    let dummy_degrees = crate::mesh::DegreeField::uniform(mesh.n_elements(), 1);
    for e in 0..mesh.n_elements() {
        let pts = mesh.element_points(e);
        let nv = pts.len();
        let area = crate::mesh::signed_area(&pts);
        // Polygon centroid.
        let mut cx = 0.0;
        let mut cy = 0.0;
        for i in 0..nv {
            let p = pts[i];
            let q = pts[(i + 1) % nv];
            let w = p.x * q.y - q.x * p.y;
            cx += (p.x + q.x) * w;
            cy += (p.y + q.y) * w;
        }
        let centroid = Point2::new(cx / (6.0 * area), cy / (6.0 * area));

        let mut faces = Vec::with_capacity(nv);
        let mut face_len = Vec::with_capacity(nv);
        let mut face_mid = Vec::with_capacity(nv);
        let mut normals = Vec::with_capacity(nv);
        let mut perimeter = 0.0;
        for (le, &fid) in mesh.element_faces[e].iter().enumerate() {
            let (a, b) = mesh.elements[e].edge(le);
            let (pa, pb) = (mesh.vertices[a], mesh.vertices[b]);
            let len = (pb - pa).norm();
            faces.push(fid);
            face_len.push(len);
            face_mid.push(nalgebra::center(&pa, &pb));
            normals.push(mesh.outward_normal(e, fid));
            perimeter += len;
        }
        if perimeter <= 0.0 {
            return Err(FcfvError::ZeroPerimeter(e));
        }
        let cell_tau: Vec<f64> = faces
            .iter()
            .map(|&f| match tau {
                // In the face-centered setting the per-face variant scales
                // with the cell's characteristic length.
                TauSpec::FaceScaled { c } => c * viscosity / mesh.element_diameter(e),
                other => other.value(mesh, &dummy_degrees, f, viscosity),
            })
            .collect();
        taus.push(cell_tau);
        cells.push(FcfvCell {
            faces,
            face_len,
            face_mid,
            normals,
            area,
            perimeter,
            centroid,
        });
    }
    Ok(FcfvGeomCache { cells, tau: taus })
}

pub struct FcfvProblem<'a> {
    pub mesh: &'a Mesh2D,
    pub viscosity: f64,
    pub tau: TauSpec,
    pub bcs: &'a VectorBcs,
    pub source: Option<VectorFn>,
    pub solver: SolverKind,
}

impl<'a> FcfvProblem<'a> {
    pub fn new(mesh: &'a Mesh2D, viscosity: f64, bcs: &'a VectorBcs) -> Self {
        FcfvProblem {
            mesh,
            viscosity,
            // The face-centred scheme wants a larger refinement-constant
            // stabilization than the high-order solvers; 10 nu / diam keeps
            // velocity, pressure and gradient first order also next to
            // pseudo-traction boundaries.
            tau: TauSpec::DomainScaled { c: 10.0 },
            bcs,
            source: None,
            solver: SolverKind::Direct,
        }
    }

    pub fn with_source(mut self, s: VectorFn) -> Self {
        self.source = Some(s);
        self
    }

    pub fn with_tau(mut self, tau: TauSpec) -> Self {
        self.tau = tau;
        self
    }
}

/// Cell state recovered from the face velocities and the mean pressure.
#[derive(Clone, Debug, PartialEq)]
pub struct FcfvCellState {
    pub u: Vector2<f64>,
    pub p: f64,
    /// `L = -sqrt(nu) grad u`, constant per cell.
    pub l: Matrix2<f64>,
}

/// Closed-form local solution of one cell; no linear solve involved.
///
/// `u_hat_of(face_slot)` provides the face velocity (trace unknown or
/// Dirichlet midpoint value) for each local face.
pub fn fcfv_local_closed_form(
    cell: &FcfvCell,
    tau: &[f64],
    viscosity: f64,
    u_hat_of: impl Fn(usize) -> Vector2<f64>,
    rho: f64,
    source: Vector2<f64>,
) -> FcfvCellState {
    let sqrt_nu = viscosity.sqrt();
    let mut l = Matrix2::zeros();
    let mut beta = 0.0;
    let mut u_num = cell.area * source;
    for f in 0..cell.faces.len() {
        let uh = u_hat_of(f);
        let n = cell.normals[f];
        let w = cell.face_len[f];
        l -= (sqrt_nu / cell.area) * w * uh * n.transpose();
        beta += w * tau[f];
        u_num += w * tau[f] * uh;
    }
    FcfvCellState {
        u: u_num / beta,
        p: rho,
        l,
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct PhaseTimings {
    pub elemental: Duration,
    pub assembly: Duration,
    pub solve: Duration,
    pub recovery: Duration,
}

#[derive(Debug)]
pub struct FcfvSolution {
    pub states: Vec<FcfvCellState>,
    /// Velocity per face: trace unknowns on hybrid faces, Dirichlet data on
    /// the rest.
    pub u_hat: Vec<Vector2<f64>>,
    pub rho: Vec<f64>,
    pub layout: GlobalLayout,
    pub timings: PhaseTimings,
    /// Per-cell residual of the weak incompressibility constraint.
    pub divergence_residual: Vec<f64>,
}

impl FcfvSolution {
    pub fn n_unknowns(&self) -> usize {
        self.layout.n_primary
    }
}

struct FaceData {
    dirichlet: Option<VectorFn>,
    neumann: Option<TractionFn>,
}

fn face_table(mesh: &Mesh2D, bcs: &VectorBcs) -> Result<(Vec<FaceData>, bool), SolveError> {
    let roles = classify_faces(mesh, bcs, |bc| matches!(bc, VectorBc::Dirichlet(_)))?;
    let mut any_neumann = false;
    let table = roles
        .into_iter()
        .map(|r| match r {
            FaceRole::Internal => FaceData {
                dirichlet: None,
                neumann: None,
            },
            FaceRole::Dirichlet(VectorBc::Dirichlet(f)) => FaceData {
                dirichlet: Some(f),
                neumann: None,
            },
            FaceRole::Neumann(VectorBc::Neumann(g)) => {
                any_neumann = true;
                FaceData {
                    dirichlet: None,
                    neumann: Some(g),
                }
            }
            _ => unreachable!(),
        })
        .collect();
    Ok((table, any_neumann))
}

/// Assembles the symmetric global saddle-point system; also returns the
/// Dirichlet midpoint values per face.
pub fn fcfv_global_system(
    problem: &FcfvProblem,
    cache: &FcfvGeomCache,
) -> Result<(crate::assembly::CondensedSystem, Vec<Option<Vector2<f64>>>), SolveError> {
    let mesh = problem.mesh;
    let (faces, any_neumann) = face_table(mesh, problem.bcs)?;
    let nu = problem.viscosity;
    let sqrt_nu = nu.sqrt();

    let layout = GlobalLayout::new(mesh, |f| faces[f].dirichlet.is_none().then_some(2))
        .with_elem_extras(mesh.n_elements());

    let mut dirichlet: Vec<Option<Vector2<f64>>> = vec![None; mesh.n_faces()];
    for f in 0..mesh.n_faces() {
        if let Some(u_d) = &faces[f].dirichlet {
            dirichlet[f] = Some(u_d(mesh.faces[f].midpoint(mesh)));
        }
    }

    // Pure-Dirichlet compatibility: net boundary flux must vanish.
    if !any_neumann {
        let mut net = 0.0;
        let mut scale = 0.0;
        for f in 0..mesh.n_faces() {
            if let Some(ud) = dirichlet[f] {
                let face = &mesh.faces[f];
                net += face.length * ud.dot(&face.normal);
                scale += face.length * ud.norm();
            }
        }
        if net.abs() > 1e-10 * scale.max(1.0) {
            return Err(SolveError::IncompatibleDirichletData(net));
        }
    }

    let mut builder = SystemBuilder::new(layout.n_primary);
    for (e, cell) in cache.cells.iter().enumerate() {
        let tau = &cache.tau[e];
        let beta: f64 = (0..cell.faces.len())
            .map(|f| cell.face_len[f] * tau[f])
            .sum();
        let rho_dof = layout.elem_extra_offset.as_ref().unwrap()[e];
        let src = problem
            .source
            .as_ref()
            .map_or(Vector2::zeros(), |s| s(cell.centroid));

        // Data parts of the closed forms.
        let mut l_data = Matrix2::zeros();
        let mut u_data = cell.area * src / beta;
        for f in 0..cell.faces.len() {
            if let Some(ud) = dirichlet[cell.faces[f]] {
                let w = cell.face_len[f];
                l_data -= (sqrt_nu / cell.area) * w * ud * cell.normals[f].transpose();
                u_data += w * tau[f] * ud / beta;
            }
        }

        for f in 0..cell.faces.len() {
            let fid = cell.faces[f];
            let nf = cell.normals[f];
            let wf = cell.face_len[f];

            let rows: Vec<usize> = match layout.face_range(fid) {
                Some(range) => range.collect(),
                None => {
                    // Dirichlet face: only its data enters the cell's
                    // incompressibility row.
                    let ud = dirichlet[fid].unwrap();
                    builder.add_rhs(rho_dof, -wf * ud.dot(&nf));
                    continue;
                }
            };

            // Incompressibility coupling (and its symmetric counterpart in
            // the momentum rows).
            builder.add(rho_dof, rows[0], wf * nf.x);
            builder.add(rho_dof, rows[1], wf * nf.y);
            builder.add(rows[0], rho_dof, wf * nf.x);
            builder.add(rows[1], rho_dof, wf * nf.y);

            // Momentum row of face f; data contributions go to the RHS.
            let data = wf * (sqrt_nu * l_data * nf + tau[f] * u_data);
            builder.add_rhs(rows[0], -data.x);
            builder.add_rhs(rows[1], -data.y);
            if let Some(g) = &faces[fid].neumann {
                let gv = g(cell.face_mid[f], nf);
                builder.add_rhs(rows[0], -wf * gv.x);
                builder.add_rhs(rows[1], -wf * gv.y);
            }

            for fp in 0..cell.faces.len() {
                let fpid = cell.faces[fp];
                if dirichlet[fpid].is_some() {
                    continue;
                }
                let cols: Vec<usize> = layout.face_range(fpid).unwrap().collect();
                let np = cell.normals[fp];
                let wp = cell.face_len[fp];
                let mut coeff =
                    wf * wp * (-nu / cell.area * nf.dot(&np) + tau[f] * tau[fp] / beta);
                if fp == f {
                    coeff -= wf * tau[f];
                }
                builder.add(rows[0], cols[0], coeff);
                builder.add(rows[1], cols[1], coeff);
            }
        }
    }

    let mut system = builder.build(layout);
    if !any_neumann {
        // The mean pressures are determined up to one constant: constrain
        // the volume-weighted global mean to zero.
        let weights: Vec<(usize, f64)> = cache
            .cells
            .iter()
            .enumerate()
            .map(|(e, c)| {
                (
                    system.layout.elem_extra_offset.as_ref().unwrap()[e],
                    c.area,
                )
            })
            .collect();
        let nullspace: Vec<(usize, f64)> = weights.iter().map(|&(i, _)| (i, 1.0)).collect();
        system.add_gauge(&weights, &nullspace);
    }
    Ok((system, dirichlet))
}

pub fn solve_fcfv(problem: &FcfvProblem) -> Result<FcfvSolution, SolveError> {
    let t0 = Instant::now();
    let cache = build_geom_cache(problem.mesh, problem.tau, problem.viscosity)
        .map_err(|e| SolveError::Invalid(e.to_string()))?;
    let elemental = t0.elapsed();

    let t1 = Instant::now();
    let (system, dirichlet) = fcfv_global_system(problem, &cache)?;
    let assembly = t1.elapsed();

    let t2 = Instant::now();
    let x = solve_condensed(&system, problem.solver)?;
    let solve = t2.elapsed();

    let t3 = Instant::now();
    let layout = system.layout.clone();
    let mesh = problem.mesh;
    let mut u_hat = vec![Vector2::zeros(); mesh.n_faces()];
    for f in 0..mesh.n_faces() {
        u_hat[f] = match layout.face_range(f) {
            Some(range) => {
                let idx: Vec<usize> = range.collect();
                Vector2::new(x[idx[0]], x[idx[1]])
            }
            None => dirichlet[f].unwrap(),
        };
    }
    let rho: Vec<f64> = (0..mesh.n_elements())
        .map(|e| x[layout.elem_extra_offset.as_ref().unwrap()[e]])
        .collect();

    let states: Vec<FcfvCellState> = (0..mesh.n_elements())
        .into_par_iter()
        .map(|e| {
            let cell = &cache.cells[e];
            let src = problem
                .source
                .as_ref()
                .map_or(Vector2::zeros(), |s| s(cell.centroid));
            fcfv_local_closed_form(
                cell,
                &cache.tau[e],
                problem.viscosity,
                |f| u_hat[cell.faces[f]],
                rho[e],
                src,
            )
        })
        .collect();

    let divergence_residual: Vec<f64> = cache
        .cells
        .iter()
        .map(|cell| {
            cell.faces
                .iter()
                .enumerate()
                .map(|(f, &fid)| cell.face_len[f] * u_hat[fid].dot(&cell.normals[f]))
                .sum::<f64>()
                .abs()
        })
        .collect();
    let recovery = t3.elapsed();

    Ok(FcfvSolution {
        states,
        u_hat,
        rho,
        layout,
        timings: PhaseTimings {
            elemental,
            assembly,
            solve,
            recovery,
        },
        divergence_residual,
    })
}

/// Reference path for verification: the *uncondensed* one-point system with
/// all cell unknowns `(L, u, p)` kept alongside the face velocities and the
/// mean pressures, assembled densely from the integral equations and solved
/// by LU. Small meshes only.
pub fn solve_fcfv_monolithic(problem: &FcfvProblem) -> Result<FcfvSolution, SolveError> {
    let mesh = problem.mesh;
    let cache = build_geom_cache(mesh, problem.tau, problem.viscosity)
        .map_err(|e| SolveError::Invalid(e.to_string()))?;
    let (faces, any_neumann) = face_table(mesh, problem.bcs)?;
    let nu = problem.viscosity;
    let sq = nu.sqrt();

    let layout = GlobalLayout::new(mesh, |f| faces[f].dirichlet.is_none().then_some(2))
        .with_elem_extras(mesh.n_elements());
    let n_el = mesh.n_elements();
    // Unknowns: per cell [L(4, row-major), u(2), p(1)], then the layout's
    // face/rho unknowns, then optionally the gauge multiplier.
    let cell_off = |e: usize| 7 * e;
    let glob_off = 7 * n_el;
    let n_total = glob_off + layout.n_primary + if any_neumann { 0 } else { 1 };
    let mut k = DMatrix::<f64>::zeros(n_total, n_total);
    let mut rhs = DVector::<f64>::zeros(n_total);

    let mut dirichlet: Vec<Option<Vector2<f64>>> = vec![None; mesh.n_faces()];
    for f in 0..mesh.n_faces() {
        if let Some(u_d) = &faces[f].dirichlet {
            dirichlet[f] = Some(u_d(mesh.faces[f].midpoint(mesh)));
        }
    }

    for (e, cell) in cache.cells.iter().enumerate() {
        let off = cell_off(e);
        let tau = &cache.tau[e];
        let src = problem
            .source
            .as_ref()
            .map_or(Vector2::zeros(), |s| s(cell.centroid));
        // L rows: -|O| L_ab = sum_f sqrt(nu) |G| uhat_a n_b
        for a in 0..2 {
            for b in 0..2 {
                let row = off + 2 * a + b;
                k[(row, row)] = -cell.area;
            }
        }
        // u rows: beta u = |O| s + sum |G| tau uhat
        let beta: f64 = (0..cell.faces.len())
            .map(|f| cell.face_len[f] * tau[f])
            .sum();
        k[(off + 4, off + 4)] = beta;
        k[(off + 5, off + 5)] = beta;
        rhs[off + 4] = cell.area * src.x;
        rhs[off + 5] = cell.area * src.y;
        // p row: |dO| p = |dO| rho
        let rho_col = glob_off + layout.elem_extra_offset.as_ref().unwrap()[e];
        k[(off + 6, off + 6)] = cell.perimeter;
        k[(off + 6, rho_col)] = -cell.perimeter;

        for f in 0..cell.faces.len() {
            let fid = cell.faces[f];
            let nf = cell.normals[f];
            let wf = cell.face_len[f];
            match layout.face_range(fid) {
                Some(range) => {
                    let cols: Vec<usize> = range.map(|c| glob_off + c).collect();
                    for a in 0..2 {
                        for b in 0..2 {
                            k[(off + 2 * a + b, cols[a])] -= sq * wf * nf[b];
                        }
                        k[(off + 4 + a, cols[a])] -= wf * tau[f];
                        // incompressibility row lives at the rho dof
                        k[(rho_col, cols[a])] += wf * nf[a];
                    }
                    // Momentum rows of this face:
                    // |G| (sqrt(nu) L n + p n + tau u - tau uhat) summed
                    // over the sharing cells (+ Neumann data).
                    for a in 0..2 {
                        let row = cols[a];
                        for b in 0..2 {
                            k[(row, off + 2 * a + b)] += sq * wf * nf[b];
                        }
                        k[(row, off + 6)] += wf * nf[a];
                        k[(row, off + 4 + a)] += wf * tau[f];
                        k[(row, cols[a])] -= wf * tau[f];
                    }
                    if let Some(g) = &faces[fid].neumann {
                        let gv = g(cell.face_mid[f], nf);
                        rhs[cols[0]] += -wf * gv.x;
                        rhs[cols[1]] += -wf * gv.y;
                    }
                }
                None => {
                    let ud = dirichlet[fid].unwrap();
                    for a in 0..2 {
                        for b in 0..2 {
                            rhs[off + 2 * a + b] += sq * wf * ud[a] * nf[b];
                        }
                        rhs[off + 4 + a] += wf * tau[f] * ud[a];
                    }
                    rhs[rho_col] -= wf * ud.dot(&nf);
                }
            }
        }
    }

    if !any_neumann {
        let g = n_total - 1;
        for (e, cell) in cache.cells.iter().enumerate() {
            let col = glob_off + layout.elem_extra_offset.as_ref().unwrap()[e];
            k[(g, col)] = cell.area;
            k[(col, g)] = cell.area;
        }
    }

    let x = k
        .lu()
        .solve(&rhs)
        .ok_or_else(|| SolveError::Invalid("monolithic system is singular".into()))?;

    let mut u_hat = vec![Vector2::zeros(); mesh.n_faces()];
    for f in 0..mesh.n_faces() {
        u_hat[f] = match layout.face_range(f) {
            Some(range) => {
                let idx: Vec<usize> = range.collect();
                Vector2::new(x[glob_off + idx[0]], x[glob_off + idx[1]])
            }
            None => dirichlet[f].unwrap(),
        };
    }
    let rho: Vec<f64> = (0..n_el)
        .map(|e| x[glob_off + layout.elem_extra_offset.as_ref().unwrap()[e]])
        .collect();
    let states: Vec<FcfvCellState> = (0..n_el)
        .map(|e| {
            let off = cell_off(e);
            FcfvCellState {
                l: Matrix2::new(x[off], x[off + 1], x[off + 2], x[off + 3]),
                u: Vector2::new(x[off + 4], x[off + 5]),
                p: x[off + 6],
            }
        })
        .collect();
    Ok(FcfvSolution {
        states,
        u_hat,
        rho,
        layout,
        timings: PhaseTimings::default(),
        divergence_residual: vec![0.0; n_el],
    })
}

/// L2 errors of the piecewise-constant fields against exact ones.
#[derive(Clone, Copy, Debug)]
pub struct FcfvErrors {
    pub u: f64,
    pub p: f64,
    pub l: f64,
    /// Largest pressure jump across internal faces (checkerboard guard).
    pub pressure_oscillation: f64,
}

pub fn fcfv_errors(
    problem: &FcfvProblem,
    solution: &FcfvSolution,
    exact_u: impl Fn(Point2<f64>) -> Vector2<f64>,
    exact_p: impl Fn(Point2<f64>) -> f64,
    exact_l: impl Fn(Point2<f64>) -> Matrix2<f64>,
) -> Result<FcfvErrors, SolveError> {
    let mesh = problem.mesh;
    let geom = crate::nefem::CurvedGeometry::empty();
    let mut eu = 0.0;
    let mut ep = 0.0;
    let mut el = 0.0;
    for e in 0..mesh.n_elements() {
        let shape = match mesh.elements[e] {
            crate::mesh::ElementConn::Tri(_) => crate::refelem::Shape::Triangle,
            crate::mesh::ElementConn::Quad(_) => crate::refelem::Shape::Quad,
        };
        let refel = crate::refelem::make_reference(shape, 1, 4)?;
        let eq = crate::physics::element_quadrature(mesh, &geom, e, &refel)?;
        let st = &solution.states[e];
        for q in 0..eq.weights.len() {
            let w = eq.weights[q];
            let p = eq.points[q];
            eu += w * (st.u - exact_u(p)).norm_squared();
            ep += w * (st.p - exact_p(p)).powi(2);
            el += w * (st.l - exact_l(p)).norm_squared();
        }
    }
    let mut osc: f64 = 0.0;
    for face in &mesh.faces {
        if !face.is_boundary() {
            osc = osc.max((solution.states[face.left].p - solution.states[face.right].p).abs());
        }
    }
    Ok(FcfvErrors {
        u: eu.sqrt(),
        p: ep.sqrt(),
        l: el.sqrt(),
        pressure_oscillation: osc,
    })
}
