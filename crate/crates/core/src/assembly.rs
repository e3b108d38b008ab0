//! Generic hybridization engine shared by all physics modules.
//!
//! Each element contributes a symmetric block system
//!
//! ```text
//!   [ A_ii  A_if ] [ z ]   [ b_i ]
//!   [ A_if' A_ff ] [ u^ ] = [ b_f ]
//! ```
//!
//! where `z` are element-interior unknowns and `u^` the trace unknowns of its
//! hybrid faces. Static condensation eliminates `z` per element; the face
//! Schur complements are assembled into one sparse symmetric system, solved
//! once, and the interior solution is recovered element by element from the
//! stored affine maps.

use std::collections::BTreeMap;

use faer::prelude::*;
use faer::sparse::{SparseColMat, Triplet};
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::mesh::Mesh2D;

#[derive(Debug, Error)]
pub enum AssemblyError {
    #[error("singular local matrix in element {elem} (condition estimate {cond:.3e})")]
    SingularLocalMatrix { elem: usize, cond: f64 },
    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),
    #[error("linear solver breakdown: {0}")]
    SolverBreakdown(String),
    #[error("global system is singular: {0}")]
    SingularSystem(String),
}

/// Dense element blocks in the monolithic convention above. Only hybrid
/// faces appear; Dirichlet-face data is already folded into `b_i`.
#[derive(Clone, Debug)]
pub struct LocalBlocks {
    pub elem: usize,
    pub a_ii: DMatrix<f64>,
    /// Per hybrid face: interior-to-face coupling, `n_i x n_f`.
    pub a_if: Vec<DMatrix<f64>>,
    /// Per hybrid face: within-face block, `n_f x n_f`.
    pub a_ff: Vec<DMatrix<f64>>,
    pub b_i: DVector<f64>,
    pub b_f: Vec<DVector<f64>>,
    /// Global face ids of the hybrid faces, in local order.
    pub faces: Vec<usize>,
}

/// Affine recovery of the interior unknowns from the element's trace
/// unknowns: `z = w0 + W u^`.
#[derive(Clone, Debug)]
pub struct RecoveryMap {
    pub elem: usize,
    pub faces: Vec<usize>,
    pub face_dims: Vec<usize>,
    pub w: DMatrix<f64>,
    pub w0: DVector<f64>,
}

/// Condensed face block of one element.
#[derive(Clone, Debug)]
pub struct ElementContribution {
    pub elem: usize,
    pub faces: Vec<usize>,
    pub face_dims: Vec<usize>,
    pub schur: DMatrix<f64>,
    pub rhs: DVector<f64>,
}

/// Eliminates the interior unknowns of one element.
pub fn condense(local: &LocalBlocks) -> Result<(ElementContribution, RecoveryMap), AssemblyError> {
    let n_i = local.a_ii.nrows();
    let face_dims: Vec<usize> = local.a_if.iter().map(|m| m.ncols()).collect();
    let n_f: usize = face_dims.iter().sum();
    if local.a_if.len() != local.faces.len()
        || local.a_ff.len() != local.faces.len()
        || local.b_f.len() != local.faces.len()
    {
        return Err(AssemblyError::LayoutMismatch(format!(
            "element {}: inconsistent face block counts",
            local.elem
        )));
    }

    let mut coupling = DMatrix::zeros(n_i, n_f);
    let mut rhs_f = DVector::zeros(n_f);
    let mut offset = 0;
    for (f, dim) in face_dims.iter().enumerate() {
        coupling
            .view_mut((0, offset), (n_i, *dim))
            .copy_from(&local.a_if[f]);
        rhs_f.rows_mut(offset, *dim).copy_from(&local.b_f[f]);
        offset += dim;
    }

    let lu = local.a_ii.clone().lu();
    let cond = {
        let u = lu.u();
        let mut dmax: f64 = 0.0;
        let mut dmin = f64::INFINITY;
        for i in 0..n_i {
            let d = u[(i, i)].abs();
            dmax = dmax.max(d);
            dmin = dmin.min(d);
        }
        if dmin == 0.0 {
            f64::INFINITY
        } else {
            dmax / dmin
        }
    };
    if !cond.is_finite() || cond > 1e14 {
        return Err(AssemblyError::SingularLocalMatrix {
            elem: local.elem,
            cond,
        });
    }

    let w_full = lu.solve(&coupling).ok_or(AssemblyError::SingularLocalMatrix {
        elem: local.elem,
        cond,
    })?;
    let w0 = lu.solve(&local.b_i).ok_or(AssemblyError::SingularLocalMatrix {
        elem: local.elem,
        cond,
    })?;

    let mut schur = DMatrix::zeros(n_f, n_f);
    let mut offset = 0;
    for (f, dim) in face_dims.iter().enumerate() {
        schur
            .view_mut((offset, offset), (*dim, *dim))
            .copy_from(&local.a_ff[f]);
        offset += dim;
    }
    schur -= coupling.transpose() * &w_full;
    let rhs = rhs_f - coupling.transpose() * &w0;

    Ok((
        ElementContribution {
            elem: local.elem,
            faces: local.faces.clone(),
            face_dims,
            schur,
            rhs,
        },
        RecoveryMap {
            elem: local.elem,
            faces: local.faces.clone(),
            face_dims: local.a_if.iter().map(|m| m.ncols()).collect(),
            w: -w_full,
            w0,
        },
    ))
}

/// Global unknown layout: trace dofs per hybrid face, optional one scalar
/// extra per element (the cell mean-pressure unknowns of the face-centered
/// scheme), optional one gauge multiplier row.
#[derive(Clone, Debug)]
pub struct GlobalLayout {
    pub face_offset: Vec<Option<usize>>,
    pub face_dofs: Vec<usize>,
    pub elem_extra_offset: Option<Vec<usize>>,
    /// Number of unknowns (face traces plus element extras).
    pub n_primary: usize,
}

impl GlobalLayout {
    /// Lays out trace unknowns for every face where `dofs_of` returns
    /// `Some`, in face index order.
    pub fn new(mesh: &Mesh2D, mut dofs_of: impl FnMut(usize) -> Option<usize>) -> Self {
        let mut face_offset = vec![None; mesh.n_faces()];
        let mut face_dofs = vec![0; mesh.n_faces()];
        let mut n = 0;
        for f in 0..mesh.n_faces() {
            if let Some(d) = dofs_of(f) {
                face_offset[f] = Some(n);
                face_dofs[f] = d;
                n += d;
            }
        }
        GlobalLayout {
            face_offset,
            face_dofs,
            elem_extra_offset: None,
            n_primary: n,
        }
    }

    /// Appends one scalar unknown per element after the face dofs.
    pub fn with_elem_extras(mut self, n_elements: usize) -> Self {
        let mut offsets = Vec::with_capacity(n_elements);
        for _ in 0..n_elements {
            offsets.push(self.n_primary);
            self.n_primary += 1;
        }
        self.elem_extra_offset = Some(offsets);
        self
    }

    pub fn n_solve(&self) -> usize {
        self.n_primary
    }

    /// Global dof indices of a face's trace unknowns.
    pub fn face_range(&self, face: usize) -> Option<std::ops::Range<usize>> {
        self.face_offset[face].map(|o| o..o + self.face_dofs[face])
    }
}

/// Gauge constraint pinning a known one-dimensional nullspace: the solve
/// returns the solution with `sum w_i x_i = 0`.
#[derive(Clone, Debug)]
pub struct Gauge {
    pub weights: Vec<(usize, f64)>,
    pub nullspace: Vec<(usize, f64)>,
}

/// Sparse symmetric global system assembled from face-coupled blocks.
#[derive(Clone, Debug)]
pub struct CondensedSystem {
    pub layout: GlobalLayout,
    /// Sorted, merged triplets of the (square) system of size `n_solve`.
    triplets: Vec<(usize, usize, f64)>,
    pub rhs: DVector<f64>,
    gauge: Option<Gauge>,
}

/// Triplet accumulator with deterministic merging: entries are sorted by
/// `(row, col, value)` before summation, so the assembled matrix is
/// bitwise identical for any insertion order.
pub struct SystemBuilder {
    n: usize,
    triplets: Vec<(usize, usize, f64)>,
    rhs: DVector<f64>,
}

impl SystemBuilder {
    pub fn new(n: usize) -> Self {
        SystemBuilder {
            n,
            triplets: Vec::new(),
            rhs: DVector::zeros(n),
        }
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.n && j < self.n);
        if v != 0.0 {
            self.triplets.push((i, j, v));
        }
    }

    pub fn add_rhs(&mut self, i: usize, v: f64) {
        self.rhs[i] += v;
    }

    /// Scatters a dense block into rows/cols given by global index lists.
    pub fn add_block(&mut self, rows: &[usize], cols: &[usize], m: &DMatrix<f64>) {
        for (r, &gi) in rows.iter().enumerate() {
            for (c, &gj) in cols.iter().enumerate() {
                self.add(gi, gj, m[(r, c)]);
            }
        }
    }

    pub fn build(mut self, layout: GlobalLayout) -> CondensedSystem {
        self.triplets
            .sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.total_cmp(&b.2)));
        let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(self.triplets.len());
        for (i, j, v) in self.triplets {
            match merged.last_mut() {
                Some(last) if last.0 == i && last.1 == j => last.2 += v,
                _ => merged.push((i, j, v)),
            }
        }
        CondensedSystem {
            layout,
            triplets: merged,
            rhs: self.rhs,
            gauge: None,
        }
    }
}

/// Flattens a layout's face ranges for an element contribution.
fn contribution_dofs(
    layout: &GlobalLayout,
    contrib_faces: &[usize],
    face_dims: &[usize],
) -> Result<Vec<usize>, AssemblyError> {
    let mut dofs = Vec::new();
    for (f, &face) in contrib_faces.iter().enumerate() {
        let range = layout.face_range(face).ok_or_else(|| {
            AssemblyError::LayoutMismatch(format!("face {face} carries no unknowns"))
        })?;
        if range.len() != face_dims[f] {
            return Err(AssemblyError::LayoutMismatch(format!(
                "face {face}: layout has {} dofs, contribution has {}",
                range.len(),
                face_dims[f]
            )));
        }
        dofs.extend(range);
    }
    Ok(dofs)
}

/// Assembles condensed element contributions into the global sparse system.
pub fn assemble_global(
    layout: &GlobalLayout,
    contributions: &[ElementContribution],
) -> Result<CondensedSystem, AssemblyError> {
    let mut builder = SystemBuilder::new(layout.n_solve());
    for contrib in contributions {
        let dofs = contribution_dofs(layout, &contrib.faces, &contrib.face_dims)?;
        builder.add_block(&dofs, &dofs, &contrib.schur);
        for (r, &gi) in dofs.iter().enumerate() {
            builder.add_rhs(gi, contrib.rhs[r]);
        }
    }
    Ok(builder.build(layout.clone()))
}

impl CondensedSystem {
    pub fn n(&self) -> usize {
        self.layout.n_solve()
    }

    pub fn n_primary(&self) -> usize {
        self.layout.n_primary
    }

    pub fn triplets(&self) -> &[(usize, usize, f64)] {
        &self.triplets
    }

    /// Attaches the constraint `sum w_i x_i = 0` to pin a known
    /// one-dimensional nullspace (given by its sparse pattern `nullspace`).
    /// Imposed at solve time by pinning one nullspace dof and shifting the
    /// solution along the nullspace onto the constraint surface, which is
    /// exact (the nullspace is in the kernel) and keeps the factorization
    /// sparse; a bordered constraint row would couple every pinned dof and
    /// ruin the fill-in of the sparse factorization.
    pub fn add_gauge(&mut self, weights: &[(usize, f64)], nullspace: &[(usize, f64)]) {
        assert!(self.gauge.is_none(), "gauge already present");
        assert!(!nullspace.is_empty());
        self.gauge = Some(Gauge {
            weights: weights.to_vec(),
            nullspace: nullspace.to_vec(),
        });
    }

    pub fn gauge(&self) -> Option<&Gauge> {
        self.gauge.as_ref()
    }

    /// Relative asymmetry `max |K - K'| / max |K|`.
    pub fn symmetry_error(&self) -> f64 {
        let mut map: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for &(i, j, v) in &self.triplets {
            *map.entry((i, j)).or_insert(0.0) += v;
        }
        let mut max_abs: f64 = 0.0;
        let mut max_gap: f64 = 0.0;
        for (&(i, j), &v) in &map {
            max_abs = max_abs.max(v.abs());
            if i <= j {
                let vt = map.get(&(j, i)).copied().unwrap_or(0.0);
                max_gap = max_gap.max((v - vt).abs());
            }
        }
        if max_abs == 0.0 {
            0.0
        } else {
            max_gap / max_abs
        }
    }

    fn to_faer(&self) -> Result<SparseColMat<usize, f64>, AssemblyError> {
        let n = self.n();
        let t: Vec<Triplet<usize, usize, f64>> = self
            .triplets
            .iter()
            .map(|&(i, j, v)| Triplet::new(i, j, v))
            .collect();
        SparseColMat::try_new_from_triplets(n, n, &t)
            .map_err(|e| AssemblyError::SingularSystem(format!("matrix creation failed: {e:?}")))
    }

    fn matvec(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = DVector::zeros(self.n());
        for &(i, j, v) in &self.triplets {
            y[i] += v * x[j];
        }
        y
    }

    pub fn residual(&self, x: &DVector<f64>) -> f64 {
        let r = self.matvec(x) - &self.rhs;
        let denom = self.rhs.norm();
        if denom == 0.0 {
            r.norm()
        } else {
            r.norm() / denom
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SolverKind {
    /// Sparse LU factorization; the default at desk scale.
    Direct,
    /// Diagonally scaled MINRES for symmetric (possibly indefinite) systems.
    Minres { tol: f64, max_iter: usize },
}

impl Default for SolverKind {
    fn default() -> Self {
        SolverKind::Direct
    }
}

/// Solves the condensed system. Direct solves must reach a relative
/// residual of 1e-10; iterative solves honor their configured tolerance.
pub fn solve_condensed(
    system: &CondensedSystem,
    kind: SolverKind,
) -> Result<DVector<f64>, AssemblyError> {
    let n = system.n();
    if n == 0 {
        return Ok(DVector::zeros(0));
    }
    if system.rhs.norm() == 0.0 {
        return Ok(DVector::zeros(n));
    }
    if let Some(gauge) = &system.gauge {
        // Pin one nullspace dof, solve, then shift along the nullspace onto
        // the constraint surface. Exact because K v = 0.
        let pin = gauge.nullspace[0].0;
        let mut pinned = system.clone();
        pinned.gauge = None;
        pinned.triplets.retain(|&(i, j, _)| i != pin && j != pin);
        pinned.triplets.push((pin, pin, 1.0));
        pinned
            .triplets
            .sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.total_cmp(&b.2)));
        pinned.rhs[pin] = 0.0;
        let mut x = solve_condensed(&pinned, kind)?;
        let wx: f64 = gauge.weights.iter().map(|&(i, w)| w * x[i]).sum();
        let wv: f64 = gauge
            .weights
            .iter()
            .filter_map(|&(i, w)| {
                gauge
                    .nullspace
                    .iter()
                    .find(|&&(j, _)| j == i)
                    .map(|&(_, v)| w * v)
            })
            .sum();
        let shift = wx / wv;
        for &(i, v) in &gauge.nullspace {
            x[i] -= shift * v;
        }
        let res = system.residual(&x);
        if !res.is_finite() || res > 1e-8 {
            return Err(AssemblyError::SolverBreakdown(format!(
                "gauged solve residual {res:.3e}"
            )));
        }
        return Ok(x);
    }
    match kind {
        SolverKind::Direct => {
            let mat = system.to_faer()?;
            let lu = mat
                .sp_lu()
                .map_err(|e| AssemblyError::SingularSystem(format!("sparse LU failed: {e:?}")))?;
            let rhs = Mat::<f64>::from_fn(n, 1, |i, _| system.rhs[i]);
            let sol = lu.solve(&rhs);
            let mut x = DVector::from_fn(n, |i, _| sol[(i, 0)]);
            // Iterative refinement while it helps.
            let mut r = &system.rhs - system.matvec(&x);
            for _ in 0..3 {
                if r.norm() <= 1e-15 * system.rhs.norm() {
                    break;
                }
                let rr = Mat::<f64>::from_fn(n, 1, |i, _| r[i]);
                let dx = lu.solve(&rr);
                let x_new = DVector::from_fn(n, |i, _| x[i] + dx[(i, 0)]);
                let r_new = &system.rhs - system.matvec(&x_new);
                if r_new.norm() >= r.norm() {
                    break;
                }
                x = x_new;
                r = r_new;
            }
            let res = system.residual(&x);
            // Relative residual 1e-10, or — for systems whose conditioning
            // puts that below the f64 floor — a normwise backward error at
            // the machine level.
            let norm_k: f64 = {
                let mut row_sums = vec![0.0f64; n];
                for &(i, _, v) in &system.triplets {
                    row_sums[i] += v.abs();
                }
                row_sums.iter().cloned().fold(0.0, f64::max)
            };
            let backward = r.norm() / (norm_k * x.norm() + system.rhs.norm()).max(f64::MIN_POSITIVE);
            if !res.is_finite() || (res > 1e-10 && backward > 1e-12) {
                return Err(AssemblyError::SolverBreakdown(format!(
                    "direct solve residual {res:.3e} (backward error {backward:.3e})"
                )));
            }
            Ok(x)
        }
        SolverKind::Minres { tol, max_iter } => minres(system, tol, max_iter),
    }
}

/// MINRES with symmetric diagonal (Jacobi) scaling.
fn minres(system: &CondensedSystem, tol: f64, max_iter: usize) -> Result<DVector<f64>, AssemblyError> {
    let n = system.n();
    let mut diag = vec![0.0f64; n];
    for &(i, j, v) in &system.triplets {
        if i == j {
            diag[i] += v;
        }
    }
    let scale: DVector<f64> = DVector::from_iterator(
        n,
        diag.iter()
            .map(|&d| if d.abs() > 1e-300 { 1.0 / d.abs().sqrt() } else { 1.0 }),
    );
    let apply = |x: &DVector<f64>| -> DVector<f64> {
        let xs = x.component_mul(&scale);
        let y = system.matvec(&xs);
        y.component_mul(&scale)
    };
    let b = system.rhs.component_mul(&scale);
    let norm_b = b.norm();

    // Standard MINRES recurrence (Paige & Saunders).
    let mut x = DVector::zeros(n);
    let mut v_prev = DVector::zeros(n);
    let mut v = b.clone();
    let mut beta = v.norm();
    v /= beta;
    let mut eta = beta;
    let (mut c, mut c_old, mut s, mut s_old) = (1.0f64, 1.0f64, 0.0f64, 0.0f64);
    let mut w = DVector::<f64>::zeros(n);
    let mut w_old = DVector::<f64>::zeros(n);

    for _ in 0..max_iter {
        let mut av = apply(&v);
        let alpha = v.dot(&av);
        av.axpy(-alpha, &v, 1.0);
        av.axpy(-beta, &v_prev, 1.0);
        let beta_new = av.norm();

        let rho1_hat = c * alpha - c_old * s * beta;
        let rho1 = (rho1_hat * rho1_hat + beta_new * beta_new).sqrt();
        let rho2 = s * alpha + c_old * c * beta;
        let rho3 = s_old * beta;
        if rho1 == 0.0 {
            break;
        }
        let c_new = rho1_hat / rho1;
        let s_new = beta_new / rho1;

        let mut w_new = v.clone();
        w_new.axpy(-rho2, &w, 1.0);
        w_new.axpy(-rho3, &w_old, 1.0);
        w_new /= rho1;

        x.axpy(c_new * eta, &w_new, 1.0);
        eta = -s_new * eta;

        w_old = std::mem::replace(&mut w, w_new);
        v_prev = std::mem::replace(&mut v, av / beta_new);
        beta = beta_new;
        c_old = c;
        c = c_new;
        s_old = s;
        s = s_new;

        if eta.abs() <= tol * norm_b {
            break;
        }
    }
    let x = x.component_mul(&scale);
    let res = system.residual(&x);
    if !res.is_finite() || res > tol.max(1e-8) * 10.0 {
        return Err(AssemblyError::SolverBreakdown(format!(
            "MINRES stalled at relative residual {res:.3e}"
        )));
    }
    Ok(x)
}

/// Recovers the interior unknowns of one element from the global solution.
pub fn recover_local(
    recovery: &RecoveryMap,
    layout: &GlobalLayout,
    hybrid: &DVector<f64>,
) -> DVector<f64> {
    let n_f: usize = recovery.face_dims.iter().sum();
    let mut u_hat = DVector::zeros(n_f);
    let mut offset = 0;
    for (f, &face) in recovery.faces.iter().enumerate() {
        let range = layout.face_range(face).expect("hybrid face in layout");
        for (loc, g) in range.enumerate() {
            u_hat[offset + loc] = hybrid[g];
        }
        offset += recovery.face_dims[f];
    }
    &recovery.w0 + &recovery.w * u_hat
}

/// Reference path for verification: assembles the *uncondensed* block system
/// of all elements and trace unknowns densely and solves it directly.
/// Independent of the condensation path; intended for small meshes only.
pub fn solve_monolithic(
    locals: &[LocalBlocks],
    layout: &GlobalLayout,
) -> Result<(Vec<DVector<f64>>, DVector<f64>), AssemblyError> {
    let n_faces = layout.n_primary;
    let mut interior_offset = Vec::with_capacity(locals.len());
    let mut n_i_total = 0;
    for local in locals {
        interior_offset.push(n_i_total);
        n_i_total += local.a_ii.nrows();
    }
    let n = n_i_total + n_faces;
    let mut k = DMatrix::<f64>::zeros(n, n);
    let mut rhs = DVector::<f64>::zeros(n);
    for (e, local) in locals.iter().enumerate() {
        let off = interior_offset[e];
        let n_i = local.a_ii.nrows();
        k.view_mut((off, off), (n_i, n_i)).copy_from(&local.a_ii);
        rhs.rows_mut(off, n_i).copy_from(&local.b_i);
        for (f, &face) in local.faces.iter().enumerate() {
            let range = layout
                .face_range(face)
                .ok_or_else(|| AssemblyError::LayoutMismatch(format!("face {face}")))?;
            let fo = n_i_total + range.start;
            let dim = range.len();
            for r in 0..n_i {
                for c in 0..dim {
                    k[(off + r, fo + c)] += local.a_if[f][(r, c)];
                    k[(fo + c, off + r)] += local.a_if[f][(r, c)];
                }
            }
            for r in 0..dim {
                rhs[fo + r] += local.b_f[f][r];
                for c in 0..dim {
                    k[(fo + r, fo + c)] += local.a_ff[f][(r, c)];
                }
            }
        }
    }
    let x = k
        .lu()
        .solve(&rhs)
        .ok_or_else(|| AssemblyError::SingularSystem("monolithic system".into()))?;
    let hybrid = DVector::from_fn(n_faces, |i, _| x[n_i_total + i]);
    let interiors = locals
        .iter()
        .enumerate()
        .map(|(e, local)| {
            DVector::from_fn(local.a_ii.nrows(), |i, _| x[interior_offset[e] + i])
        })
        .collect();
    Ok((interiors, hybrid))
}
