//! Hybridized linear elasticity with a pointwise-symmetric strain mixed
//! variable stored in Voigt form.
//!
//! The mixed unknown is the scaled strain `L = -D^{1/2} grad_s u`, a vector
//! of `m_sd = n_sd(n_sd+1)/2` non-redundant components per node (engineering
//! shear convention), so symmetry of the strain — and with it the pointwise
//! balance of angular momentum — is carried by the data layout itself. The
//! formulation stays optimally convergent at order `k+1` for `u`, `L` and
//! the trace even at `k = 1`, which is what makes the strain-based error
//! indicator and the superconvergent displacement postprocess work at low
//! order.
//!
//! Interior unknowns of one element are ordered `[L_1 | L_2 | L_3 | u_1 |
//! u_2]`, trace unknowns per face `[u^_1 | u^_2]`, all in nodal bases.

use nalgebra::{DMatrix, DVector, Matrix3, Point2, Vector2, Vector3};
use rayon::prelude::*;

use crate::assembly::{
    assemble_global, condense, recover_local, solve_condensed, GlobalLayout, LocalBlocks,
    RecoveryMap, SolverKind,
};
use crate::mesh::{structured, BoundarySpec, DegreeField, ElementConn, Mesh2D};
use crate::nefem::CurvedGeometry;
use crate::physics::{
    classify_faces, edge_data, element_quadrature, FaceRole, SolveError, TauSpec, VectorBc,
    VectorBcs, VectorFn,
};
use crate::refelem::{make_reference, ElementMap, NodalBasis, ReferenceElement, Shape};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MaterialError {
    #[error("invalid material: E = {0}, nu = {1} (need E > 0 and -1 < nu < 0.5)")]
    InvalidMaterial(f64, f64),
}

/// Number of independent components of a symmetric rank-2 tensor.
pub fn m_sd(n_sd: usize) -> usize {
    n_sd * (n_sd + 1) / 2
}

/// Voigt matrix of the linearized symmetric gradient applied to one scalar
/// basis function: maps nodal displacement components to strain components.
/// 2D rows are ordered `[e11, e22, g12]`, 3D rows
/// `[e11, e22, e33, g12, g13, g23]`.
pub fn symm_grad_matrix(grad: &[f64]) -> DMatrix<f64> {
    match grad.len() {
        2 => DMatrix::from_row_slice(3, 2, &[grad[0], 0.0, 0.0, grad[1], grad[1], grad[0]]),
        3 => DMatrix::from_row_slice(
            6,
            3,
            &[
                grad[0], 0.0, 0.0, //
                0.0, grad[1], 0.0, //
                0.0, 0.0, grad[2], //
                grad[1], grad[0], 0.0, //
                grad[2], 0.0, grad[0], //
                0.0, grad[2], grad[1],
            ],
        ),
        d => panic!("unsupported spatial dimension {d}"),
    }
}

/// Voigt matrix of the boundary normal: `N(n)^T sigma_v = sigma . n`.
pub fn normal_matrix(n: &[f64]) -> DMatrix<f64> {
    match n.len() {
        2 => DMatrix::from_row_slice(3, 2, &[n[0], 0.0, 0.0, n[1], n[1], n[0]]),
        3 => DMatrix::from_row_slice(
            6,
            3,
            &[
                n[0], 0.0, 0.0, //
                0.0, n[1], 0.0, //
                0.0, 0.0, n[2], //
                n[1], n[0], 0.0, //
                n[2], 0.0, n[0], //
                0.0, n[2], n[1],
            ],
        ),
        d => panic!("unsupported spatial dimension {d}"),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regime {
    PlaneStrain,
    PlaneStress,
}

/// Constitutive matrix for plane problems (engineering shear), with its
/// symmetric square root.
#[derive(Clone, Debug)]
pub struct HookeMatrix {
    d: Matrix3<f64>,
    d_sqrt: Matrix3<f64>,
    pub regime: Regime,
    pub e: f64,
    pub nu: f64,
    /// Spectral condition number; grows unbounded as nu -> 1/2 in plane
    /// strain. Reported, never an error.
    pub condition: f64,
}

impl HookeMatrix {
    pub fn d(&self) -> &Matrix3<f64> {
        &self.d
    }

    pub fn d_sqrt(&self) -> &Matrix3<f64> {
        &self.d_sqrt
    }
}

/// Plane-strain / plane-stress Hooke matrix from Young's modulus and
/// Poisson's ratio.
pub fn hooke_matrix(e: f64, nu: f64, regime: Regime) -> Result<HookeMatrix, MaterialError> {
    if !(e > 0.0) || !(nu > -1.0 && nu < 0.5) {
        return Err(MaterialError::InvalidMaterial(e, nu));
    }
    let d = match regime {
        Regime::PlaneStrain => {
            let f = e / ((1.0 + nu) * (1.0 - 2.0 * nu));
            Matrix3::new(
                f * (1.0 - nu),
                f * nu,
                0.0,
                f * nu,
                f * (1.0 - nu),
                0.0,
                0.0,
                0.0,
                f * (1.0 - 2.0 * nu) / 2.0,
            )
        }
        Regime::PlaneStress => {
            let f = e / (1.0 - nu * nu);
            Matrix3::new(
                f,
                f * nu,
                0.0,
                f * nu,
                f,
                0.0,
                0.0,
                0.0,
                f * (1.0 - nu) / 2.0,
            )
        }
    };
    let eig = nalgebra::SymmetricEigen::new(d);
    let mut lmin = f64::INFINITY;
    let mut lmax: f64 = 0.0;
    let mut sqrt_diag = Matrix3::zeros();
    for i in 0..3 {
        let l = eig.eigenvalues[i];
        lmin = lmin.min(l);
        lmax = lmax.max(l);
        sqrt_diag[(i, i)] = l.max(0.0).sqrt();
    }
    let d_sqrt = eig.eigenvectors * sqrt_diag * eig.eigenvectors.transpose();
    Ok(HookeMatrix {
        d,
        d_sqrt,
        regime,
        e,
        nu,
        condition: lmax / lmin,
    })
}

/// The 3D isotropic Hooke matrix (engineering shear); provided to complete
/// the Voigt types, only the 2D branch is exercised by the solvers.
pub fn hooke_matrix_3d(e: f64, nu: f64) -> Result<DMatrix<f64>, MaterialError> {
    if !(e > 0.0) || !(nu > -1.0 && nu < 0.5) {
        return Err(MaterialError::InvalidMaterial(e, nu));
    }
    let lambda = e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
    let mu = e / (2.0 * (1.0 + nu));
    let mut d = DMatrix::zeros(6, 6);
    for i in 0..3 {
        for j in 0..3 {
            d[(i, j)] = lambda;
        }
        d[(i, i)] += 2.0 * mu;
        d[(3 + i, 3 + i)] = mu;
    }
    Ok(d)
}

pub struct ElasticityProblem<'a> {
    pub mesh: &'a Mesh2D,
    pub geometry: &'a CurvedGeometry,
    pub degrees: &'a DegreeField,
    pub material: HookeMatrix,
    pub tau: TauSpec,
    pub bcs: &'a VectorBcs,
    pub source: Option<VectorFn>,
    pub solver: SolverKind,
}

impl<'a> ElasticityProblem<'a> {
    pub fn new(
        mesh: &'a Mesh2D,
        geometry: &'a CurvedGeometry,
        degrees: &'a DegreeField,
        material: HookeMatrix,
        bcs: &'a VectorBcs,
    ) -> Self {
        ElasticityProblem {
            mesh,
            geometry,
            degrees,
            material,
            tau: TauSpec::default(),
            bcs,
            source: None,
            solver: SolverKind::Direct,
        }
    }

    pub fn with_source(mut self, f: VectorFn) -> Self {
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

    fn tau_on(&self, face: usize) -> f64 {
        self.tau
            .value(self.mesh, self.degrees, face, self.material.d().trace())
    }
}

#[derive(Debug)]
pub struct ElasticitySolution {
    /// Displacement components per element.
    pub u: Vec<[DVector<f64>; 2]>,
    /// Scaled strain components per element, Voigt order `[11, 22, 12]`.
    pub l: Vec<[DVector<f64>; 3]>,
    pub u_hat: DVector<f64>,
    pub layout: GlobalLayout,
    pub recoveries: Vec<RecoveryMap>,
}

impl ElasticitySolution {
    pub fn n_dofs(&self) -> usize {
        self.layout.n_primary
    }
}

fn face_roles(problem: &ElasticityProblem) -> Result<Vec<FaceRole<VectorBc>>, SolveError> {
    classify_faces(problem.mesh, problem.bcs, |bc| {
        matches!(bc, VectorBc::Dirichlet(_))
    })
}

pub fn elasticity_layout(
    problem: &ElasticityProblem,
    roles: &[FaceRole<VectorBc>],
) -> GlobalLayout {
    GlobalLayout::new(problem.mesh, |f| {
        roles[f]
            .is_hybrid()
            .then(|| 2 * (problem.degrees.face_degree(problem.mesh, f) + 1))
    })
}

/// Discrete local problem of one element in `(L, u)`, monolithic sign
/// convention of [`crate::assembly`].
pub fn local_blocks_voigt(
    problem: &ElasticityProblem,
    roles: &[FaceRole<VectorBc>],
    e: usize,
) -> Result<LocalBlocks, SolveError> {
    let mesh = problem.mesh;
    let k = problem.degrees.k(e);
    let refel = problem.refel(e)?;
    let eq = element_quadrature(mesh, problem.geometry, e, &refel)?;
    let n = refel.dim();
    let n_qp = eq.weights.len();
    let dh = problem.material.d_sqrt();

    let n_i = 5 * n;
    let mut a_ii = DMatrix::zeros(n_i, n_i);
    let mut b_i = DVector::zeros(n_i);

    // Volume terms: -mass on the L block, D^{1/2}-weighted gradient
    // couplings between L and u, and the source on the u block.
    for q in 0..n_qp {
        let w = eq.weights[q];
        let src = problem
            .source
            .as_ref()
            .map_or(Vector2::zeros(), |s| s(eq.points[q]));
        for i in 0..n {
            let ni = eq.basis[(q, i)];
            let gi = [eq.grads[0][(q, i)], eq.grads[1][(q, i)]];
            b_i[3 * n + i] += w * ni * src.x;
            b_i[4 * n + i] += w * ni * src.y;
            for j in 0..n {
                let nj = eq.basis[(q, j)];
                // Mass on each Voigt component of L.
                for c in 0..3 {
                    a_ii[(c * n + i, c * n + j)] -= w * ni * nj;
                }
                // (B_i^T D^{1/2})_{alpha J}: rows L^J, cols u_alpha.
                // B_i columns: alpha = x -> (g_x, 0, g_y), alpha = y ->
                // (0, g_y, g_x) in Voigt rows (11, 22, 12).
                for jv in 0..3 {
                    let bx = gi[0] * dh[(0, jv)] + gi[1] * dh[(2, jv)];
                    let by = gi[1] * dh[(1, jv)] + gi[0] * dh[(2, jv)];
                    a_ii[(jv * n + i, 3 * n + j)] += w * nj * bx;
                    a_ii[(jv * n + i, 4 * n + j)] += w * nj * by;
                    a_ii[(3 * n + j, jv * n + i)] += w * nj * bx;
                    a_ii[(4 * n + j, jv * n + i)] += w * nj * by;
                }
            }
        }
    }

    let mut faces = Vec::new();
    let mut a_if = Vec::new();
    let mut a_ff = Vec::new();
    let mut b_f = Vec::new();

    for le in 0..mesh.elements[e].n_edges() {
        let face_id = mesh.element_faces[e][le];
        let tau = problem.tau_on(face_id);
        let role = &roles[face_id];
        let kf = problem.degrees.face_degree(mesh, face_id);
        let order = 2 * k.max(kf) + 2;
        match role {
            FaceRole::Dirichlet(VectorBc::Dirichlet(u_d)) => {
                let ed = edge_data(mesh, problem.geometry, e, le, &refel.basis, None, order)?;
                for q in 0..ed.points.len() {
                    let w = ed.weights[q];
                    let nrm = ed.normals[q];
                    let ud = u_d(ed.points[q]);
                    for i in 0..n {
                        let ni = ed.elem_basis[(q, i)];
                        // rows L^J: + (N^T D^{1/2})_{beta J} u_D beta
                        for jv in 0..3 {
                            let nx = nrm.x * dh[(0, jv)] + nrm.y * dh[(2, jv)];
                            let ny = nrm.y * dh[(1, jv)] + nrm.x * dh[(2, jv)];
                            b_i[jv * n + i] += w * ni * (nx * ud.x + ny * ud.y);
                        }
                        b_i[3 * n + i] += w * tau * ni * ud.x;
                        b_i[4 * n + i] += w * tau * ni * ud.y;
                        for j in 0..n {
                            let nj = ed.elem_basis[(q, j)];
                            a_ii[(3 * n + i, 3 * n + j)] += w * tau * ni * nj;
                            a_ii[(4 * n + i, 4 * n + j)] += w * tau * ni * nj;
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
                let nf1 = kf + 1;
                let nf = 2 * nf1;
                let mut coupling = DMatrix::zeros(n_i, nf);
                let mut face_block = DMatrix::zeros(nf, nf);
                let mut face_rhs = DVector::zeros(nf);
                for q in 0..ed.points.len() {
                    let w = ed.weights[q];
                    let nrm = ed.normals[q];
                    for i in 0..n {
                        let ni = ed.elem_basis[(q, i)];
                        for m in 0..nf1 {
                            let tm = tb[(q, m)];
                            for jv in 0..3 {
                                let nx = nrm.x * dh[(0, jv)] + nrm.y * dh[(2, jv)];
                                let ny = nrm.y * dh[(1, jv)] + nrm.x * dh[(2, jv)];
                                coupling[(jv * n + i, m)] -= w * ni * tm * nx;
                                coupling[(jv * n + i, nf1 + m)] -= w * ni * tm * ny;
                            }
                            coupling[(3 * n + i, m)] -= w * tau * ni * tm;
                            coupling[(4 * n + i, nf1 + m)] -= w * tau * ni * tm;
                        }
                        for j in 0..n {
                            let nj = ed.elem_basis[(q, j)];
                            a_ii[(3 * n + i, 3 * n + j)] += w * tau * ni * nj;
                            a_ii[(4 * n + i, 4 * n + j)] += w * tau * ni * nj;
                        }
                    }
                    for m in 0..nf1 {
                        for mm in 0..nf1 {
                            let v = w * tau * tb[(q, m)] * tb[(q, mm)];
                            face_block[(m, mm)] += v;
                            face_block[(nf1 + m, nf1 + mm)] += v;
                        }
                    }
                    if let FaceRole::Neumann(VectorBc::Neumann(g)) = role {
                        let gv = g(ed.points[q], nrm);
                        for m in 0..nf1 {
                            face_rhs[m] += w * tb[(q, m)] * gv.x;
                            face_rhs[nf1 + m] += w * tb[(q, m)] * gv.y;
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

pub fn all_local_blocks(
    problem: &ElasticityProblem,
    roles: &[FaceRole<VectorBc>],
) -> Result<Vec<LocalBlocks>, SolveError> {
    (0..problem.mesh.n_elements())
        .into_par_iter()
        .map(|e| local_blocks_voigt(problem, roles, e))
        .collect()
}

pub fn solve_elasticity(problem: &ElasticityProblem) -> Result<ElasticitySolution, SolveError> {
    let roles = face_roles(problem)?;
    let layout = elasticity_layout(problem, &roles);
    let locals = all_local_blocks(problem, &roles)?;
    let condensed: Result<Vec<_>, _> = locals.par_iter().map(condense).collect();
    let (contribs, recoveries): (Vec<_>, Vec<_>) = condensed?.into_iter().unzip();
    let system = assemble_global(&layout, &contribs)?;
    let u_hat = solve_condensed(&system, problem.solver)?;

    let fields: Vec<_> = recoveries
        .par_iter()
        .map(|rec| {
            let z = recover_local(rec, &layout, &u_hat);
            let n = z.len() / 5;
            let l = [
                z.rows(0, n).into_owned(),
                z.rows(n, n).into_owned(),
                z.rows(2 * n, n).into_owned(),
            ];
            let u = [z.rows(3 * n, n).into_owned(), z.rows(4 * n, n).into_owned()];
            (u, l)
        })
        .collect();
    let (u, l): (Vec<_>, Vec<_>) = fields.into_iter().unzip();
    Ok(ElasticitySolution {
        u,
        l,
        u_hat,
        layout,
        recoveries,
    })
}

/// Superconvergent displacement postprocess: element Neumann problem in the
/// degree `k+1` space driven by the scaled strain, constrained by the
/// per-component mean and by the boundary-integrated rotation of `u_e`.
pub fn postprocess_voigt(
    problem: &ElasticityProblem,
    e: usize,
    u_e: &[DVector<f64>; 2],
    l_e: &[DVector<f64>; 3],
) -> Result<[DVector<f64>; 2], SolveError> {
    let mesh = problem.mesh;
    let k = problem.degrees.k(e);
    let shape = problem.shape_of(e);
    let k_star = k + 1;
    let refel_star = make_reference(shape, k_star, 2 * k_star + 2)?;
    let eq = element_quadrature(mesh, problem.geometry, e, &refel_star)?;
    let basis_k = NodalBasis::new(shape, k)?;
    let vals_k = basis_k.eval(&eq.ref_points);
    let dh = problem.material.d_sqrt();

    let n = refel_star.dim();
    let dim = 2 * n + 3; // +2 mean constraints, +1 curl constraint
    let mut kmat = DMatrix::zeros(dim, dim);
    let mut rhs = DVector::zeros(dim);

    for q in 0..eq.weights.len() {
        let w = eq.weights[q];
        // Data fields at this point.
        let mut lv: Vector3<f64> = Vector3::zeros();
        let mut uv: Vector2<f64> = Vector2::zeros();
        for j in 0..basis_k.dim() {
            let nj = vals_k[(q, j)];
            lv.x += nj * l_e[0][j];
            lv.y += nj * l_e[1][j];
            lv.z += nj * l_e[2][j];
            uv.x += nj * u_e[0][j];
            uv.y += nj * u_e[1][j];
        }
        for i in 0..n {
            let gi = [eq.grads[0][(q, i)], eq.grads[1][(q, i)]];
            let ni = eq.basis[(q, i)];
            // Voigt columns of grad_s for each displacement component.
            let bi = [
                Vector3::new(gi[0], 0.0, gi[1]),
                Vector3::new(0.0, gi[1], gi[0]),
            ];
            for (alpha, bia) in bi.iter().enumerate() {
                let row = alpha * n + i;
                rhs[row] -= w * bia.dot(&lv);
                for j in 0..n {
                    let gj = [eq.grads[0][(q, j)], eq.grads[1][(q, j)]];
                    let bj = [
                        Vector3::new(gj[0], 0.0, gj[1]),
                        Vector3::new(0.0, gj[1], gj[0]),
                    ];
                    for (beta, bjb) in bj.iter().enumerate() {
                        kmat[(row, beta * n + j)] += w * bia.dot(&(dh * bjb));
                    }
                }
                // Mean constraints.
                kmat[(row, 2 * n + alpha)] += w * ni;
                kmat[(2 * n + alpha, row)] += w * ni;
            }
            // Rotation constraint: int (d1 u*_2 - d2 u*_1).
            kmat[(i, 2 * n + 2)] -= w * gi[1];
            kmat[(2 * n + 2, i)] -= w * gi[1];
            kmat[(n + i, 2 * n + 2)] += w * gi[0];
            kmat[(2 * n + 2, n + i)] += w * gi[0];
        }
        rhs[2 * n] += w * uv.x;
        rhs[2 * n + 1] += w * uv.y;
    }

    // Rotation data: boundary circulation of the local primal displacement.
    let refel_k = make_reference(shape, k, 2 * k + 2)?;
    let mut circulation = 0.0;
    for le in 0..mesh.elements[e].n_edges() {
        let ed = edge_data(
            mesh,
            problem.geometry,
            e,
            le,
            &refel_k.basis,
            None,
            2 * k_star + 2,
        )?;
        for q in 0..ed.points.len() {
            let mut uv = Vector2::zeros();
            for j in 0..refel_k.dim() {
                uv.x += ed.elem_basis[(q, j)] * u_e[0][j];
                uv.y += ed.elem_basis[(q, j)] * u_e[1][j];
            }
            circulation += ed.weights[q] * uv.dot(&ed.tangents[q]);
        }
    }
    rhs[2 * n + 2] = circulation;

    let sol = kmat
        .lu()
        .solve(&rhs)
        .ok_or(SolveError::SingularPostprocess(e))?;
    Ok([sol.rows(0, n).into_owned(), sol.rows(n, n).into_owned()])
}

pub fn postprocess_all(
    problem: &ElasticityProblem,
    solution: &ElasticitySolution,
) -> Result<Vec<[DVector<f64>; 2]>, SolveError> {
    (0..problem.mesh.n_elements())
        .into_par_iter()
        .map(|e| postprocess_voigt(problem, e, &solution.u[e], &solution.l[e]))
        .collect()
}

/// L2 error of a two-component element field, over-integrated at `2(k+2)`.
pub fn l2_error_vector(
    problem: &ElasticityProblem,
    field: &[[DVector<f64>; 2]],
    degree_of: impl Fn(usize) -> usize,
    exact: impl Fn(Point2<f64>) -> Vector2<f64>,
) -> Result<f64, SolveError> {
    let mesh = problem.mesh;
    let mut total = 0.0;
    for e in 0..mesh.n_elements() {
        let k = degree_of(e);
        let refel = make_reference(problem.shape_of(e), k, 2 * (k + 2))?;
        let eq = element_quadrature(mesh, problem.geometry, e, &refel)?;
        for q in 0..eq.weights.len() {
            let mut v = Vector2::zeros();
            for j in 0..refel.dim() {
                v.x += eq.basis[(q, j)] * field[e][0][j];
                v.y += eq.basis[(q, j)] * field[e][1][j];
            }
            total += eq.weights[q] * (v - exact(eq.points[q])).norm_squared();
        }
    }
    Ok(total.sqrt())
}

/// L2 error of the scaled strain (Voigt dot product, engineering shear).
pub fn l2_error_strain(
    problem: &ElasticityProblem,
    solution: &ElasticitySolution,
    exact_l: impl Fn(Point2<f64>) -> Vector3<f64>,
) -> Result<f64, SolveError> {
    let mesh = problem.mesh;
    let mut total = 0.0;
    for e in 0..mesh.n_elements() {
        let k = problem.degrees.k(e);
        let refel = make_reference(problem.shape_of(e), k, 2 * (k + 2))?;
        let eq = element_quadrature(mesh, problem.geometry, e, &refel)?;
        for q in 0..eq.weights.len() {
            let mut lv = Vector3::zeros();
            for j in 0..refel.dim() {
                lv.x += eq.basis[(q, j)] * solution.l[e][0][j];
                lv.y += eq.basis[(q, j)] * solution.l[e][1][j];
                lv.z += eq.basis[(q, j)] * solution.l[e][2][j];
            }
            total += eq.weights[q] * (lv - exact_l(eq.points[q])).norm_squared();
        }
    }
    Ok(total.sqrt())
}

/// Evaluates the displacement field at a physical point (averaged over the
/// elements containing it).
pub fn eval_displacement(
    problem: &ElasticityProblem,
    solution: &ElasticitySolution,
    point: Point2<f64>,
) -> Option<Vector2<f64>> {
    let mesh = problem.mesh;
    let mut acc = Vector2::zeros();
    let mut count = 0;
    for e in 0..mesh.n_elements() {
        let shape = problem.shape_of(e);
        let verts = mesh.element_points(e);
        let map = ElementMap::new(shape, &verts).ok()?;
        let r = map.to_reference(point);
        let inside = match shape {
            Shape::Triangle => r.x >= -1e-9 && r.y >= -1e-9 && r.x + r.y <= 1.0 + 1e-9,
            _ => (-1e-9..=1.0 + 1e-9).contains(&r.x) && (-1e-9..=1.0 + 1e-9).contains(&r.y),
        };
        if !inside {
            continue;
        }
        let basis = NodalBasis::new(shape, problem.degrees.k(e)).ok()?;
        let vals = basis.eval(&[r]);
        let mut v = Vector2::zeros();
        for j in 0..basis.dim() {
            v.x += vals[(0, j)] * solution.u[e][0][j];
            v.y += vals[(0, j)] * solution.u[e][1][j];
        }
        acc += v;
        count += 1;
    }
    (count > 0).then(|| acc / count as f64)
}

// ---------------------------------------------------------------------------
// Cook membrane benchmark
// ---------------------------------------------------------------------------

/// Standard tapered-plate geometry: clamped on the left, unit/16 vertical
/// shear on the right end, traction-free top and bottom. Nearly
/// incompressible by default.
pub struct CookMembrane {
    pub material: HookeMatrix,
    pub shear: f64,
    pub triangles: bool,
}

impl Default for CookMembrane {
    fn default() -> Self {
        CookMembrane {
            material: hooke_matrix(1.12499998125, 0.499999975, Regime::PlaneStrain).unwrap(),
            shear: 1.0 / 16.0,
            triangles: false,
        }
    }
}

/// Bilinear vertex map of the Cook geometry (0,0)-(48,44)-(48,60)-(0,44).
pub fn cook_map(x: f64, y: f64) -> Point2<f64> {
    Point2::new(48.0 * x, 44.0 * x + 44.0 * y - 28.0 * x * y)
}

pub fn cook_mesh(n: usize, triangles: bool) -> Mesh2D {
    let tol = 1e-9;
    let spec = BoundarySpec::ByMidpoint(Box::new(move |p| {
        if p.x.abs() < tol * 48.0 {
            Some("clamp".to_owned())
        } else if (p.x - 48.0).abs() < tol * 48.0 {
            Some("load".to_owned())
        } else {
            Some("free".to_owned())
        }
    }));
    if triangles {
        structured::mapped_triangles(n, n, |x, y| cook_map(x, y), &spec).unwrap()
    } else {
        structured::mapped_quads(n, n, |x, y| cook_map(x, y), &spec).unwrap()
    }
}

/// Runs the benchmark over a mesh refinement sequence and reports
/// `(n_dofs, vertical tip displacement at the mid-point of the right end)`.
pub fn cooks_membrane(
    cook: &CookMembrane,
    mesh_sizes: &[usize],
    k: usize,
) -> Result<Vec<(usize, f64)>, SolveError> {
    let geom = CurvedGeometry::empty();
    let shear = cook.shear;
    let mut out = Vec::new();
    for &n in mesh_sizes {
        let mesh = cook_mesh(n, cook.triangles);
        let degrees = DegreeField::uniform(mesh.n_elements(), k);
        let mut bcs = VectorBcs::new();
        bcs.insert(
            "clamp",
            VectorBc::Dirichlet(std::sync::Arc::new(|_| Vector2::zeros())),
        );
        bcs.insert(
            "load",
            VectorBc::Neumann(std::sync::Arc::new(move |_, _| Vector2::new(0.0, shear))),
        );
        bcs.insert(
            "free",
            VectorBc::Neumann(std::sync::Arc::new(|_, _| Vector2::zeros())),
        );
        let problem =
            ElasticityProblem::new(&mesh, &geom, &degrees, cook.material.clone(), &bcs);
        let sol = solve_elasticity(&problem)?;
        let tip = eval_displacement(&problem, &sol, Point2::new(48.0, 52.0))
            .ok_or_else(|| SolveError::Invalid("tip point not found in mesh".into()))?;
        out.push((sol.n_dofs(), tip.y));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expr;
    use crate::manufactured::ManufacturedElasticity;
    use crate::physics::VectorBcs;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn empty_geom() -> CurvedGeometry {
        CurvedGeometry::empty()
    }

    #[test]
    fn normal_matrix_reproduces_classical_traction() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            // 2D
            let s = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let n = [theta.cos(), theta.sin()];
            let nm = normal_matrix(&n);
            let t = nm.transpose() * DVector::from_row_slice(s.as_slice());
            let sig = nalgebra::Matrix2::new(s[0], s[2], s[2], s[1]);
            let t_classic = sig * Vector2::new(n[0], n[1]);
            assert_relative_eq!(t[0], t_classic.x, epsilon = 1e-14);
            assert_relative_eq!(t[1], t_classic.y, epsilon = 1e-14);

            // 3D
            let sv: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut nv = [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ];
            let norm = f64::sqrt(nv[0] * nv[0] + nv[1] * nv[1] + nv[2] * nv[2]);
            nv.iter_mut().for_each(|v| *v /= norm);
            let nm3 = normal_matrix(&nv);
            let t3 = nm3.transpose() * DVector::from_row_slice(&sv);
            // sigma (symmetric) from Voigt [11,22,33,12,13,23]
            let sig3 = nalgebra::Matrix3::new(
                sv[0], sv[3], sv[4], sv[3], sv[1], sv[5], sv[4], sv[5], sv[2],
            );
            let tc = sig3 * nalgebra::Vector3::new(nv[0], nv[1], nv[2]);
            for c in 0..3 {
                assert_relative_eq!(t3[c], tc[c], epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn symm_grad_matches_symmetric_gradient() {
        // For u(x,y) with nodal coefficients of a polynomial, the un-Voigted
        // strain equals (grad u + grad u^T)/2 with the shear stored once as
        // the engineering value.
        let g = [0.4, -1.3];
        let b = symm_grad_matrix(&g);
        // displacement direction e_x: strain rows (e11, e22, g12)
        assert_eq!(b[(0, 0)], g[0]);
        assert_eq!(b[(1, 0)], 0.0);
        assert_eq!(b[(2, 0)], g[1]);
        // u = (a x + b y, c x + d y): g12 = b + c (twice the tensor shear)
        let (a_, b_, c_, d_) = (1.0, 2.0, 3.0, 4.0);
        let gx = symm_grad_matrix(&[1.0, 0.0]);
        let gy = symm_grad_matrix(&[0.0, 1.0]);
        let strain = gx * Vector2::new(a_, c_) + gy * Vector2::new(b_, d_);
        assert_relative_eq!(strain[0], a_);
        assert_relative_eq!(strain[1], d_);
        assert_relative_eq!(strain[2], b_ + c_);
    }

    #[test]
    fn hooke_matrix_cases() {
        // nu = 0 plane stress: D = E diag(1, 1, 1/2), no coupling.
        let d = hooke_matrix(2.0, 0.0, Regime::PlaneStress).unwrap();
        assert_relative_eq!(d.d()[(0, 0)], 2.0);
        assert_relative_eq!(d.d()[(0, 1)], 0.0);
        assert_relative_eq!(d.d()[(2, 2)], 1.0);

        // Nearly incompressible benchmark material assembles; condition
        // reported, not an error.
        let d = hooke_matrix(1.12499998125, 0.499999975, Regime::PlaneStrain).unwrap();
        assert!(d.d().iter().all(|v| v.is_finite()));
        assert!(d.condition > 1e6);

        // Square root squares back to D.
        for (e, nu, reg) in [
            (1.0, 0.3, Regime::PlaneStrain),
            (7.0, 0.45, Regime::PlaneStress),
            (1.12499998125, 0.499999975, Regime::PlaneStrain),
        ] {
            let h = hooke_matrix(e, nu, reg).unwrap();
            let sq = h.d_sqrt() * h.d_sqrt();
            let gap = (sq - h.d()).norm() / h.d().norm();
            assert!(gap < 1e-12, "sqrt gap {gap:.3e}");
        }

        assert!(hooke_matrix(-1.0, 0.3, Regime::PlaneStrain).is_err());
        assert!(hooke_matrix(1.0, 0.5, Regime::PlaneStrain).is_err());

        let d3 = hooke_matrix_3d(2.0, 0.25).unwrap();
        assert_eq!(d3.nrows(), 6);
        assert!(nalgebra::Cholesky::new(d3.clone()).is_some(), "3D Hooke SPD");
    }

    fn rigid_problem(
        u_d: impl Fn(Point2<f64>) -> Vector2<f64> + Send + Sync + 'static,
    ) -> (Mesh2D, DegreeField, VectorBcs) {
        let mesh = structured::unit_square_triangles(2, &BoundarySpec::all("b")).unwrap();
        let degrees = DegreeField::uniform(mesh.n_elements(), 1);
        let bcs = VectorBcs::all_dirichlet(u_d);
        (mesh, degrees, bcs)
    }

    #[test]
    fn rigid_translation_and_rotation_have_zero_strain() {
        let geom = empty_geom();
        let mat = hooke_matrix(1.0, 0.3, Regime::PlaneStrain).unwrap();
        for (name, field) in [
            (
                "translation",
                Box::new(|_: Point2<f64>| Vector2::new(0.7, -0.2))
                    as Box<dyn Fn(Point2<f64>) -> Vector2<f64> + Send + Sync>,
            ),
            (
                "rotation",
                Box::new(|p: Point2<f64>| Vector2::new(-p.y, p.x)),
            ),
        ] {
            let (mesh, degrees, bcs) = rigid_problem(field);
            let problem = ElasticityProblem::new(&mesh, &geom, &degrees, mat.clone(), &bcs);
            let sol = solve_elasticity(&problem).unwrap();
            for e in 0..mesh.n_elements() {
                for c in 0..3 {
                    for j in 0..sol.l[e][c].len() {
                        assert!(
                            sol.l[e][c][j].abs() < 1e-10,
                            "{name}: L[{c}][{j}] = {:.3e}",
                            sol.l[e][c][j]
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn linear_displacement_gives_exact_scaled_strain() {
        // u = (x, 0): Voigt strain (1,0,0), L = -D^{1/2} (1,0,0).
        let geom = empty_geom();
        let mat = hooke_matrix(2.0, 0.25, Regime::PlaneStrain).unwrap();
        let expect = -mat.d_sqrt() * Vector3::new(1.0, 0.0, 0.0);
        let (mesh, degrees, bcs) = rigid_problem(|p| Vector2::new(p.x, 0.0));
        let problem = ElasticityProblem::new(&mesh, &geom, &degrees, mat.clone(), &bcs);
        let sol = solve_elasticity(&problem).unwrap();
        for e in 0..mesh.n_elements() {
            for c in 0..3 {
                for j in 0..sol.l[e][c].len() {
                    assert_relative_eq!(sol.l[e][c][j], expect[c], epsilon = 1e-10);
                }
            }
        }
    }

    #[test]
    fn uniaxial_patch_test_is_exact_at_k1() {
        // u = (x, -nu y), plane stress: sigma = (E, 0, 0); tractions E*n1.
        let e_mod = 3.0;
        let nu = 0.3;
        let mat = hooke_matrix(e_mod, nu, Regime::PlaneStress).unwrap();
        let mesh =
            structured::rect_quads(3, 3, 1.0, 1.0, &structured::rect_side_tags(1.0, 1.0)).unwrap();
        let geom = empty_geom();
        let degrees = DegreeField::uniform(mesh.n_elements(), 1);
        let mut bcs = VectorBcs::new();
        bcs.insert(
            "left",
            VectorBc::Dirichlet(Arc::new(move |p: Point2<f64>| {
                Vector2::new(p.x, -nu * p.y)
            })),
        );
        bcs.insert(
            "*",
            VectorBc::Neumann(Arc::new(move |_, n: Vector2<f64>| {
                Vector2::new(e_mod * n.x, 0.0)
            })),
        );
        let problem = ElasticityProblem::new(&mesh, &geom, &degrees, mat, &bcs);
        let sol = solve_elasticity(&problem).unwrap();
        let err = l2_error_vector(&problem, &sol.u, |_| 1, |p| Vector2::new(p.x, -nu * p.y))
            .unwrap();
        assert!(err < 1e-10, "patch test error {err:.3e}");

        // Traction-free check on the top face: weak integral of the
        // numerical flux data vanishes there (g = 0 on y = 1 since n1 = 0).
        for (f, tag) in mesh.boundary_tags.iter() {
            if tag == "top" {
                let face = &mesh.faces[*f];
                let e = face.left;
                let refel = problem.refel(e).unwrap();
                let ed = edge_data(&mesh, &geom, e, face.left_edge, &refel.basis, None, 6)
                    .unwrap();
                let dh = problem.material.d_sqrt();
                for q in 0..ed.points.len() {
                    let mut lv = Vector3::zeros();
                    for j in 0..refel.dim() {
                        lv.x += ed.elem_basis[(q, j)] * sol.l[e][0][j];
                        lv.y += ed.elem_basis[(q, j)] * sol.l[e][1][j];
                        lv.z += ed.elem_basis[(q, j)] * sol.l[e][2][j];
                    }
                    let nrm = ed.normals[q];
                    let nmat = normal_matrix(&[nrm.x, nrm.y]);
                    let flux = nmat.transpose() * (dh * lv);
                    assert!(flux.norm() < 1e-9, "traction residual {:.3e}", flux.norm());
                }
            }
        }
    }

    #[test]
    fn postprocess_is_exact_for_rigid_and_linear_fields() {
        let geom = empty_geom();
        let mat = hooke_matrix(1.0, 0.3, Regime::PlaneStrain).unwrap();
        let fields: [Arc<dyn Fn(Point2<f64>) -> Vector2<f64> + Send + Sync>; 2] = [
            Arc::new(|p: Point2<f64>| Vector2::new(0.3 - p.y, 0.8 + p.x)),
            Arc::new(|p: Point2<f64>| Vector2::new(2.0 * p.x + p.y, p.x - 0.5 * p.y)),
        ];
        for field in fields {
            let exact_field = field.clone();
            let exact = move |p: Point2<f64>| exact_field(p);
            let bc_field = field.clone();
            let (mesh, degrees, bcs) = rigid_problem(move |p| bc_field(p));
            let problem = ElasticityProblem::new(&mesh, &geom, &degrees, mat.clone(), &bcs);
            let sol = solve_elasticity(&problem).unwrap();
            let stars = postprocess_all(&problem, &sol).unwrap();
            let err = l2_error_vector(&problem, &stars, |e| degrees.k(e) + 1, exact).unwrap();
            assert!(err < 1e-9, "postprocess error {err:.3e}");
        }
    }

    #[test]
    fn manufactured_low_order_convergence() {
        // The distinguishing property: u AND L converge at order 2 for k=1.
        let mat = hooke_matrix(1.0, 0.3, Regime::PlaneStrain).unwrap();
        let m = Arc::new(
            ManufacturedElasticity::new(
                Expr::parse("sin(pi*x)*sin(pi*y)").unwrap(),
                Expr::parse("cos(pi*x)*cos(pi*y)").unwrap(),
                mat.clone(),
            )
            .unwrap(),
        );
        let geom = empty_geom();
        let mut errs_u = Vec::new();
        let mut errs_l = Vec::new();
        let mut errs_star = Vec::new();
        for n in [4usize, 8] {
            let mesh = structured::unit_square_triangles(n, &BoundarySpec::all("b")).unwrap();
            let degrees = DegreeField::uniform(mesh.n_elements(), 1);
            let mut bcs = VectorBcs::new();
            bcs.insert("*", VectorBc::Dirichlet(m.dirichlet_fn()));
            let problem = ElasticityProblem::new(&mesh, &geom, &degrees, mat.clone(), &bcs)
                .with_source(m.source_fn());
            let sol = solve_elasticity(&problem).unwrap();
            errs_u.push(
                l2_error_vector(&problem, &sol.u, |_| 1, |p| m.displacement(p)).unwrap(),
            );
            errs_l.push(l2_error_strain(&problem, &sol, |p| m.scaled_strain(p)).unwrap());
            let stars = postprocess_all(&problem, &sol).unwrap();
            errs_star
                .push(l2_error_vector(&problem, &stars, |_| 2, |p| m.displacement(p)).unwrap());
        }
        let rate_u = (errs_u[0] / errs_u[1]).log2();
        let rate_l = (errs_l[0] / errs_l[1]).log2();
        let rate_s = (errs_star[0] / errs_star[1]).log2();
        assert!(rate_u > 1.7, "u rate {rate_u:.2}");
        assert!(rate_l > 1.7, "L rate {rate_l:.2}");
        assert!(rate_s > 2.6, "u* rate {rate_s:.2}");
    }

    #[test]
    fn condensed_matches_monolithic_oracle() {
        let mat = hooke_matrix(2.0, 0.35, Regime::PlaneStrain).unwrap();
        let m = Arc::new(
            ManufacturedElasticity::new(
                Expr::parse("x^2*y").unwrap(),
                Expr::parse("y^2 - x*y").unwrap(),
                mat.clone(),
            )
            .unwrap(),
        );
        let mesh = structured::unit_square_quads(2, &BoundarySpec::all("b")).unwrap();
        let geom = empty_geom();
        let degrees = DegreeField::uniform(mesh.n_elements(), 2);
        let mut bcs = VectorBcs::new();
        bcs.insert("*", VectorBc::Dirichlet(m.dirichlet_fn()));
        let problem = ElasticityProblem::new(&mesh, &geom, &degrees, mat, &bcs)
            .with_source(m.source_fn());
        let roles = face_roles(&problem).unwrap();
        let layout = elasticity_layout(&problem, &roles);
        let locals = all_local_blocks(&problem, &roles).unwrap();
        let (interiors, hybrid) = crate::assembly::solve_monolithic(&locals, &layout).unwrap();
        let sol = solve_elasticity(&problem).unwrap();
        assert!((&sol.u_hat - &hybrid).norm() / hybrid.norm() < 1e-9);
        for e in 0..mesh.n_elements() {
            let n = sol.u[e][0].len();
            for j in 0..n {
                assert_relative_eq!(sol.l[e][0][j], interiors[e][j], epsilon = 1e-9, max_relative = 1e-8);
                assert_relative_eq!(sol.u[e][0][j], interiors[e][3 * n + j], epsilon = 1e-9, max_relative = 1e-8);
            }
        }
    }

    #[test]
    fn empty_dirichlet_boundary_is_rejected() {
        let mesh = structured::unit_square_quads(2, &BoundarySpec::all("b")).unwrap();
        let geom = empty_geom();
        let degrees = DegreeField::uniform(mesh.n_elements(), 1);
        let mut bcs = VectorBcs::new();
        bcs.insert("*", VectorBc::Neumann(Arc::new(|_, _| Vector2::zeros())));
        let mat = hooke_matrix(1.0, 0.3, Regime::PlaneStrain).unwrap();
        let problem = ElasticityProblem::new(&mesh, &geom, &degrees, mat, &bcs);
        assert!(matches!(
            solve_elasticity(&problem),
            Err(SolveError::EmptyDirichletBoundary)
        ));
    }

    #[test]
    fn cook_membrane_runs_without_locking_blowup() {
        let cook = CookMembrane::default();
        let vals = cooks_membrane(&cook, &[2, 4], 1).unwrap();
        for (_, tip) in &vals {
            assert!(tip.is_finite());
            // The reference tip displacement is O(1); locking would collapse
            // the value towards zero.
            assert!(*tip > 0.1, "tip = {tip}");
        }
    }
}
