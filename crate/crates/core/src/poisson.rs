//! Hybridized mixed discretization of the Poisson problem.
//!
//! The second-order problem is rewritten per element in the mixed unknowns
//! `(u, q)` with `q = -grad u`; a trace unknown `u^` on the hybrid faces
//! couples the elements. Element interiors are condensed onto the faces
//! (see [`crate::assembly`]) and recovered after the global solve.
//!
//! Interior unknowns of one element are ordered `[q_x | q_y | u]`, each in
//! the element's nodal basis. Reading `u` as an electric potential makes
//! `q` the electric field.

use nalgebra::{DMatrix, DVector, Point2, Vector2};
use rayon::prelude::*;

use crate::assembly::{
    assemble_global, condense, recover_local, solve_condensed, GlobalLayout, LocalBlocks,
    RecoveryMap, SolverKind,
};
use crate::mesh::{DegreeField, ElementConn, Mesh2D};
use crate::nefem::CurvedGeometry;
use crate::physics::{
    classify_faces, edge_data, element_quadrature, FaceRole, ScalarBc, ScalarBcs, ScalarFn,
    SolveError, TauSpec,
};
use crate::refelem::{make_reference, NodalBasis, ReferenceElement, Shape};

pub struct PoissonProblem<'a> {
    pub mesh: &'a Mesh2D,
    pub geometry: &'a CurvedGeometry,
    pub degrees: &'a DegreeField,
    pub tau: TauSpec,
    pub bcs: &'a ScalarBcs,
    pub source: Option<ScalarFn>,
    pub solver: SolverKind,
}

impl<'a> PoissonProblem<'a> {
    pub fn new(
        mesh: &'a Mesh2D,
        geometry: &'a CurvedGeometry,
        degrees: &'a DegreeField,
        bcs: &'a ScalarBcs,
    ) -> Self {
        PoissonProblem {
            mesh,
            geometry,
            degrees,
            tau: TauSpec::default(),
            bcs,
            source: None,
            solver: SolverKind::Direct,
        }
    }

    pub fn with_source(mut self, f: ScalarFn) -> Self {
        self.source = Some(f);
        self
    }

    pub fn with_tau(mut self, tau: TauSpec) -> Self {
        self.tau = tau;
        self
    }

    fn shape_of(&self, e: usize) -> Shape {
        match self.mesh.elements[e] {
            ElementConn::Tri(_) => Shape::Triangle,
            ElementConn::Quad(_) => Shape::Quad,
        }
    }

    fn refel(&self, e: usize) -> Result<std::sync::Arc<ReferenceElement>, SolveError> {
        let k = self.degrees.k(e);
        Ok(make_reference(self.shape_of(e), k, 2 * k + 2)?)
    }
}

/// Element fields recovered from the trace solution.
#[derive(Debug)]
pub struct PoissonSolution {
    pub u: Vec<DVector<f64>>,
    /// `q = -grad u`, one coefficient vector per component.
    pub q: Vec<[DVector<f64>; 2]>,
    pub u_hat: DVector<f64>,
    pub layout: GlobalLayout,
    pub recoveries: Vec<RecoveryMap>,
}

impl PoissonSolution {
    pub fn n_dofs(&self) -> usize {
        self.layout.n_primary
    }
}

fn face_roles(problem: &PoissonProblem) -> Result<Vec<FaceRole<ScalarBc>>, SolveError> {
    classify_faces(problem.mesh, problem.bcs, |bc| {
        matches!(bc, ScalarBc::Dirichlet(_))
    })
}

/// Discrete local problem of one element, in the monolithic sign convention
/// of [`crate::assembly`].
pub fn local_blocks_poisson(
    problem: &PoissonProblem,
    roles: &[FaceRole<ScalarBc>],
    e: usize,
) -> Result<LocalBlocks, SolveError> {
    let mesh = problem.mesh;
    let k = problem.degrees.k(e);
    let refel = problem.refel(e)?;
    let eq = element_quadrature(mesh, problem.geometry, e, &refel)?;
    let n = refel.dim();
    let n_qp = eq.weights.len();

    // Volume blocks.
    let mut mass = DMatrix::zeros(n, n);
    let mut cx = DMatrix::zeros(n, n);
    let mut cy = DMatrix::zeros(n, n);
    let mut f_u = DVector::zeros(n);
    for q in 0..n_qp {
        let w = eq.weights[q];
        let src = problem
            .source
            .as_ref()
            .map_or(0.0, |s| s(eq.points[q]));
        for i in 0..n {
            let ni = eq.basis[(q, i)];
            let gxi = eq.grads[0][(q, i)];
            let gyi = eq.grads[1][(q, i)];
            f_u[i] += w * ni * src;
            for j in 0..n {
                let nj = eq.basis[(q, j)];
                mass[(i, j)] += w * ni * nj;
                cx[(i, j)] += w * gxi * nj;
                cy[(i, j)] += w * gyi * nj;
            }
        }
    }

    let n_i = 3 * n;
    let mut a_ii = DMatrix::zeros(n_i, n_i);
    a_ii.view_mut((0, 0), (n, n)).copy_from(&(-&mass));
    a_ii.view_mut((n, n), (n, n)).copy_from(&(-&mass));
    a_ii.view_mut((0, 2 * n), (n, n)).copy_from(&cx);
    a_ii.view_mut((n, 2 * n), (n, n)).copy_from(&cy);
    a_ii.view_mut((2 * n, 0), (n, n)).copy_from(&cx.transpose());
    a_ii.view_mut((2 * n, n), (n, n)).copy_from(&cy.transpose());

    let mut b_i = DVector::zeros(n_i);
    b_i.rows_mut(2 * n, n).copy_from(&f_u);

    let mut faces = Vec::new();
    let mut a_if = Vec::new();
    let mut a_ff = Vec::new();
    let mut b_f = Vec::new();

    let n_edges = mesh.elements[e].n_edges();
    for le in 0..n_edges {
        let face_id = mesh.element_faces[e][le];
        let tau = problem.tau.value(mesh, problem.degrees, face_id, 1.0);
        if tau <= 0.0 {
            // A non-positive stabilization makes the local problem singular;
            // let condensation report it with a condition estimate.
        }
        let role = &roles[face_id];
        let kf = problem.degrees.face_degree(mesh, face_id);
        let order = 2 * k.max(kf) + 2;
        match role {
            FaceRole::Dirichlet(ScalarBc::Dirichlet(u_d)) => {
                let ed = edge_data(mesh, problem.geometry, e, le, &refel.basis, None, order)?;
                for q in 0..ed.points.len() {
                    let w = ed.weights[q];
                    let nrm = ed.normals[q];
                    let ud = u_d(ed.points[q]);
                    for i in 0..n {
                        let ni = ed.elem_basis[(q, i)];
                        b_i[i] += w * nrm.x * ni * ud;
                        b_i[n + i] += w * nrm.y * ni * ud;
                        b_i[2 * n + i] += w * tau * ni * ud;
                        for j in 0..n {
                            let nj = ed.elem_basis[(q, j)];
                            a_ii[(2 * n + i, 2 * n + j)] += w * tau * ni * nj;
                        }
                    }
                }
            }
            _ => {
                let ed = edge_data(
                    mesh,
                    problem.geometry,
                    e,
                    le,
                    &refel.basis,
                    Some(kf),
                    order,
                )?;
                let tb = ed.trace_basis.as_ref().unwrap();
                let nf = kf + 1;
                let mut coupling = DMatrix::zeros(n_i, nf);
                let mut face_block = DMatrix::zeros(nf, nf);
                let mut face_rhs = DVector::zeros(nf);
                for q in 0..ed.points.len() {
                    let w = ed.weights[q];
                    let nrm = ed.normals[q];
                    for i in 0..n {
                        let ni = ed.elem_basis[(q, i)];
                        for m in 0..nf {
                            let tm = tb[(q, m)];
                            coupling[(i, m)] -= w * nrm.x * ni * tm;
                            coupling[(n + i, m)] -= w * nrm.y * ni * tm;
                            coupling[(2 * n + i, m)] -= w * tau * ni * tm;
                        }
                        for j in 0..n {
                            let nj = ed.elem_basis[(q, j)];
                            a_ii[(2 * n + i, 2 * n + j)] += w * tau * ni * nj;
                        }
                    }
                    for m in 0..nf {
                        for mm in 0..nf {
                            face_block[(m, mm)] += w * tau * tb[(q, m)] * tb[(q, mm)];
                        }
                    }
                    if let FaceRole::Neumann(ScalarBc::Neumann(g)) = role {
                        let gn = g(ed.points[q], nrm);
                        for m in 0..nf {
                            face_rhs[m] += w * tb[(q, m)] * gn;
                        }
                    }
                }
                faces.push(face_id);
                a_if.push(coupling);
                a_ff.push(face_block);
                b_f.push(face_rhs);
            }
        }
    }

    Ok(LocalBlocks {
        elem: e,
        a_ii,
        a_if,
        a_ff,
        b_i,
        b_f,
        faces,
    })
}

/// Trace-unknown layout: one segment space of degree `k_f` per hybrid face.
pub fn poisson_layout(
    problem: &PoissonProblem,
    roles: &[FaceRole<ScalarBc>],
) -> GlobalLayout {
    GlobalLayout::new(problem.mesh, |f| {
        roles[f]
            .is_hybrid()
            .then(|| problem.degrees.face_degree(problem.mesh, f) + 1)
    })
}

/// Builds all local blocks (parallel over elements).
pub fn all_local_blocks(
    problem: &PoissonProblem,
    roles: &[FaceRole<ScalarBc>],
) -> Result<Vec<LocalBlocks>, SolveError> {
    (0..problem.mesh.n_elements())
        .into_par_iter()
        .map(|e| local_blocks_poisson(problem, roles, e))
        .collect()
}

pub fn solve_poisson(problem: &PoissonProblem) -> Result<PoissonSolution, SolveError> {
    let roles = face_roles(problem)?;
    let layout = poisson_layout(problem, &roles);
    let locals = all_local_blocks(problem, &roles)?;

    let condensed: Result<Vec<_>, _> = locals.par_iter().map(condense).collect();
    let condensed = condensed?;
    let (contribs, recoveries): (Vec<_>, Vec<_>) = condensed.into_iter().unzip();

    let system = assemble_global(&layout, &contribs)?;
    let u_hat = solve_condensed(&system, problem.solver)?;

    let fields: Vec<(DVector<f64>, [DVector<f64>; 2])> = recoveries
        .par_iter()
        .map(|rec| {
            let z = recover_local(rec, &layout, &u_hat);
            let n = z.len() / 3;
            let qx = z.rows(0, n).into_owned();
            let qy = z.rows(n, n).into_owned();
            let u = z.rows(2 * n, n).into_owned();
            (u, [qx, qy])
        })
        .collect();
    let (u, q): (Vec<_>, Vec<_>) = fields.into_iter().unzip();

    Ok(PoissonSolution {
        u,
        q,
        u_hat,
        layout,
        recoveries,
    })
}

/// Superconvergent element postprocess: solves the local Neumann problem in
/// the degree `k+1` space driven by the mixed variable, constrained to keep
/// the element mean of `u`.
pub fn postprocess_poisson(
    problem: &PoissonProblem,
    e: usize,
    u_e: &DVector<f64>,
    q_e: &[DVector<f64>; 2],
) -> Result<DVector<f64>, SolveError> {
    let k = problem.degrees.k(e);
    let shape = problem.shape_of(e);
    let k_star = k + 1;
    let refel_star = make_reference(shape, k_star, 2 * k_star + 2)?;
    let eq = element_quadrature(problem.mesh, problem.geometry, e, &refel_star)?;
    let basis_k = NodalBasis::new(shape, k)?;
    let vals_k = basis_k.eval(&eq.ref_points);

    let n = refel_star.dim();
    let n_qp = eq.weights.len();
    let mut kmat = DMatrix::zeros(n + 1, n + 1);
    let mut rhs = DVector::zeros(n + 1);
    for q in 0..n_qp {
        let w = eq.weights[q];
        // Mixed variable and primal mean data at this quadrature point.
        let mut qx = 0.0;
        let mut qy = 0.0;
        let mut uval = 0.0;
        for j in 0..basis_k.dim() {
            qx += vals_k[(q, j)] * q_e[0][j];
            qy += vals_k[(q, j)] * q_e[1][j];
            uval += vals_k[(q, j)] * u_e[j];
        }
        for i in 0..n {
            let gx = eq.grads[0][(q, i)];
            let gy = eq.grads[1][(q, i)];
            let ni = eq.basis[(q, i)];
            rhs[i] -= w * (gx * qx + gy * qy);
            kmat[(i, n)] += w * ni;
            kmat[(n, i)] += w * ni;
            for j in 0..n {
                kmat[(i, j)] += w * (gx * eq.grads[0][(q, j)] + gy * eq.grads[1][(q, j)]);
            }
        }
        rhs[n] += w * uval;
    }
    let sol = kmat
        .lu()
        .solve(&rhs)
        .ok_or(SolveError::SingularPostprocess(e))?;
    Ok(sol.rows(0, n).into_owned())
}

/// Postprocesses every element (parallel).
pub fn postprocess_all(
    problem: &PoissonProblem,
    solution: &PoissonSolution,
) -> Result<Vec<DVector<f64>>, SolveError> {
    (0..problem.mesh.n_elements())
        .into_par_iter()
        .map(|e| postprocess_poisson(problem, e, &solution.u[e], &solution.q[e]))
        .collect()
}

/// L2 errors of a scalar element field against an exact function, by
/// over-integration at `2(k+2)`.
pub fn l2_error_scalar(
    problem: &PoissonProblem,
    field: &[DVector<f64>],
    degree_of: impl Fn(usize) -> usize,
    exact: impl Fn(Point2<f64>) -> f64 + Sync,
) -> Result<f64, SolveError> {
    let mesh = problem.mesh;
    let mut total = 0.0;
    for e in 0..mesh.n_elements() {
        let k = degree_of(e);
        let shape = problem.shape_of(e);
        let refel = make_reference(shape, k, 2 * (k + 2))?;
        let eq = element_quadrature(mesh, problem.geometry, e, &refel)?;
        for q in 0..eq.weights.len() {
            let mut val = 0.0;
            for j in 0..refel.dim() {
                val += eq.basis[(q, j)] * field[e][j];
            }
            let diff = val - exact(eq.points[q]);
            total += eq.weights[q] * diff * diff;
        }
    }
    Ok(total.sqrt())
}

/// L2 error of the mixed (vector) field.
pub fn l2_error_flux(
    problem: &PoissonProblem,
    solution: &PoissonSolution,
    exact_q: impl Fn(Point2<f64>) -> Vector2<f64> + Sync,
) -> Result<f64, SolveError> {
    let mesh = problem.mesh;
    let mut total = 0.0;
    for e in 0..mesh.n_elements() {
        let k = problem.degrees.k(e);
        let shape = problem.shape_of(e);
        let refel = make_reference(shape, k, 2 * (k + 2))?;
        let eq = element_quadrature(mesh, problem.geometry, e, &refel)?;
        for q in 0..eq.weights.len() {
            let mut qx = 0.0;
            let mut qy = 0.0;
            for j in 0..refel.dim() {
                qx += eq.basis[(q, j)] * solution.q[e][0][j];
                qy += eq.basis[(q, j)] * solution.q[e][1][j];
            }
            let ex = exact_q(eq.points[q]);
            total += eq.weights[q] * ((qx - ex.x).powi(2) + (qy - ex.y).powi(2));
        }
    }
    Ok(total.sqrt())
}

/// Per-element discrete conservation residual: boundary integral of the
/// numerical flux minus the element source integral.
pub fn conservation_residual(
    problem: &PoissonProblem,
    solution: &PoissonSolution,
    e: usize,
) -> Result<f64, SolveError> {
    let mesh = problem.mesh;
    let roles = face_roles(problem)?;
    let k = problem.degrees.k(e);
    let refel = problem.refel(e)?;
    let mut flux = 0.0;
    for le in 0..mesh.elements[e].n_edges() {
        let face_id = mesh.element_faces[e][le];
        let tau = problem.tau.value(mesh, problem.degrees, face_id, 1.0);
        let kf = problem.degrees.face_degree(mesh, face_id);
        let order = 2 * k.max(kf) + 2;
        let ed = edge_data(
            mesh,
            problem.geometry,
            e,
            le,
            &refel.basis,
            Some(kf),
            order,
        )?;
        let tb = ed.trace_basis.as_ref().unwrap();
        for q in 0..ed.points.len() {
            let w = ed.weights[q];
            let nrm = ed.normals[q];
            let mut qn = 0.0;
            let mut uval = 0.0;
            for j in 0..refel.dim() {
                qn += ed.elem_basis[(q, j)]
                    * (nrm.x * solution.q[e][0][j] + nrm.y * solution.q[e][1][j]);
                uval += ed.elem_basis[(q, j)] * solution.u[e][j];
            }
            let uhat = match &roles[face_id] {
                FaceRole::Dirichlet(ScalarBc::Dirichlet(u_d)) => u_d(ed.points[q]),
                _ => {
                    let range = solution.layout.face_range(face_id).unwrap();
                    let mut v = 0.0;
                    for (m, g) in range.enumerate() {
                        v += tb[(q, m)] * solution.u_hat[g];
                    }
                    v
                }
            };
            flux += w * (qn + tau * (uval - uhat));
        }
    }
    let eq = element_quadrature(mesh, problem.geometry, e, &refel)?;
    let mut src = 0.0;
    if let Some(f) = &problem.source {
        for q in 0..eq.weights.len() {
            src += eq.weights[q] * f(eq.points[q]);
        }
    }
    Ok(flux - src)
}
