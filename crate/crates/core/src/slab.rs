//! Global facet system of one space-time slab, its solution, and the
//! slab-by-slab march carrying `q^-` and `lambda^-` forward.

use std::io::{BufRead, Read, Write};
use std::path::Path;
use std::sync::Arc;

use faer::prelude::Solve;
use faer::sparse::linalg::solvers::Lu;
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::legendre;
use crate::error::{HdgError, MeshError, SolveError};
use crate::hdg_local::{
    element_load, facet_signs, neumann_load, surface_load, top_trace, ElementOperator, FacetRole,
    LocalParams, LocalSpaces, OperatorCache,
};
use crate::mesh::{FacetKind, FacetTopology, SpatialMesh};
use crate::quadrature::{gauss_legendre, triangle_rule};
use crate::waves::WaveProblem;

/// Facet to global block map; block `i` holds facet `i`'s `(p + 1)^2`
/// coefficients, facets in edge order with periodic pairs merged.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DofMap {
    pub block_size: usize,
    pub n_blocks: usize,
}

impl DofMap {
    pub fn new(mesh: &SpatialMesh, topology: &FacetTopology, p: usize) -> Result<Self, SolveError> {
        for (i, f) in topology.facets.iter().enumerate() {
            for e in std::iter::once(f.edge).chain(f.partner) {
                let mapped = topology.edge_to_facet[e];
                if mapped != i {
                    return Err(SolveError::DofCollision {
                        first: i,
                        second: mapped,
                        block: mapped,
                    });
                }
            }
            if let Some(pe) = f.partner {
                if mesh.periodic_partner(f.edge) != Some(pe) {
                    return Err(SolveError::DofCollision {
                        first: f.edge,
                        second: pe,
                        block: i,
                    });
                }
            }
        }
        Ok(Self {
            block_size: (p + 1) * (p + 1),
            n_blocks: topology.num_facets(),
        })
    }

    pub fn n_dofs(&self) -> usize {
        self.block_size * self.n_blocks
    }

    pub fn block(&self, facet: usize) -> std::ops::Range<usize> {
        facet * self.block_size..(facet + 1) * self.block_size
    }
}

/// Compressed sparse row matrix with sorted column indices.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Sums duplicate entries; explicit zeros stay in the pattern.
    pub fn from_triplets(n: usize, mut t: Vec<(usize, usize, f64)>) -> Self {
        t.sort_unstable_by_key(|&(i, j, _)| (i, j));
        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx = Vec::with_capacity(t.len() / 2);
        let mut values: Vec<f64> = Vec::with_capacity(t.len() / 2);
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in t {
            if last == Some((i, j)) {
                *values.last_mut().expect("entry exists") += v;
            } else {
                col_idx.push(j);
                values.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()]
            .binary_search(&j)
            .ok()
            .map(|k| self.values[r.start + k])
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let r = self.row_ptr[i]..self.row_ptr[i + 1];
            *yi = self.col_idx[r.clone()]
                .iter()
                .zip(&self.values[r])
                .map(|(j, a)| a * x[*j])
                .sum();
        }
    }

    pub fn has_symmetric_pattern(&self) -> bool {
        (0..self.n).all(|i| {
            self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]]
                .iter()
                .all(|&j| self.get(j, i).is_some())
        })
    }

    fn to_faer(&self) -> Result<SparseColMat<usize, f64>, String> {
        let mut t = Vec::with_capacity(self.nnz());
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                t.push(Triplet::new(i, self.col_idx[k], self.values[k]));
            }
        }
        SparseColMat::try_new_from_triplets(self.n, self.n, &t).map_err(|e| format!("{e:?}"))
    }
}

/// Linear solver for the condensed facet system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SolverChoice {
    /// Sparse LU.
    #[default]
    Direct,
    /// Restarted GMRES with block-Jacobi preconditioning over facet blocks.
    Iterative,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterativeSettings {
    pub tol: f64,
    pub max_iter: usize,
    pub restart: usize,
}

impl Default for IterativeSettings {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 20_000,
            restart: 200,
        }
    }
}

enum Backend {
    Direct(Box<Lu<usize, f64>>),
    Iterative {
        blocks: Vec<DMatrix<f64>>,
        settings: IterativeSettings,
    },
}

/// Condensed matrix of a slab together with its right-hand side.
#[derive(Debug, Clone)]
pub struct GlobalSystem {
    pub dofs: DofMap,
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
}

/// Spatial traces carried between slabs.
#[derive(Debug, Clone, PartialEq)]
pub struct Traces {
    /// Per element `[q1, q2]`, each `dim P_p(K)` triangle-basis coefficients.
    pub q: Vec<f64>,
    /// Per surface facet (in topology order) `p + 1` Legendre coefficients
    /// in the canonical edge parameter.
    pub lambda: Vec<f64>,
}

impl Traces {
    pub fn zeros(n_elements: usize, n_surface: usize, p: usize) -> Self {
        let nt = (p + 1) * (p + 2) / 2;
        Self {
            q: vec![0.0; n_elements * 2 * nt],
            lambda: vec![0.0; n_surface * (p + 1)],
        }
    }
}

/// Solution on one slab.
#[derive(Debug, Clone)]
pub struct SlabSolution {
    pub index: usize,
    pub t_start: f64,
    pub dt: f64,
    pub p: usize,
    /// Per element `[q1, q2, v]`, each `dim P_p(K) x P_p(I)` coefficients.
    pub element_coeffs: Vec<f64>,
    /// Per facet, canonical orientation.
    pub lambda: Vec<f64>,
    /// `q(t_{n+1})` and `lambda(t_{n+1})` restricted to the free surface.
    pub top: Traces,
    /// Traces this slab started from.
    pub bottom: Traces,
    /// `||A x - b|| / ||b||` of the facet solve (0 for a zero right-hand side).
    pub residual: f64,
}

impl SlabSolution {
    pub fn n_w(&self) -> usize {
        (self.p + 1) * (self.p + 1) * (self.p + 2) / 2
    }

    pub fn t_end(&self) -> f64 {
        self.t_start + self.dt
    }

    pub fn element(&self, e: usize) -> &[f64] {
        let n = 3 * self.n_w();
        &self.element_coeffs[e * n..(e + 1) * n]
    }

    pub fn q(&self, e: usize, c: usize) -> &[f64] {
        let nw = self.n_w();
        &self.element(e)[c * nw..(c + 1) * nw]
    }

    pub fn v(&self, e: usize) -> &[f64] {
        let nw = self.n_w();
        &self.element(e)[2 * nw..3 * nw]
    }

    pub fn facet(&self, f: usize) -> &[f64] {
        let m = (self.p + 1) * (self.p + 1);
        &self.lambda[f * m..(f + 1) * m]
    }
}

/// Everything that stays fixed while marching with one time step: the
/// condensed element operators, the global matrix and its factorisation.
pub struct SlabSolver {
    pub mesh: Arc<SpatialMesh>,
    pub topology: Arc<FacetTopology>,
    pub params: LocalParams,
    pub spaces: Arc<LocalSpaces>,
    pub dofs: DofMap,
    pub matrix: CsrMatrix,
    ops: Vec<Arc<ElementOperator>>,
    signs: Vec<[Vec<f64>; 3]>,
    backend: Backend,
}

impl std::fmt::Debug for SlabSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SlabSolver")
            .field("params", &self.params)
            .field("dofs", &self.dofs)
            .field("nnz", &self.matrix.nnz())
            .finish()
    }
}

fn roles_of(topology: &FacetTopology, e: usize) -> [FacetRole; 3] {
    topology.element_facets[e].map(|f| FacetRole::from(topology.facets[f].kind))
}

impl SlabSolver {
    pub fn new(
        mesh: &Arc<SpatialMesh>,
        topology: &Arc<FacetTopology>,
        params: LocalParams,
        solver: SolverChoice,
    ) -> Result<Self, SolveError> {
        let mut cache = OperatorCache::new(params)?;
        Self::with_cache(
            mesh,
            topology,
            &mut cache,
            solver,
            IterativeSettings::default(),
        )
    }

    pub fn with_cache(
        mesh: &Arc<SpatialMesh>,
        topology: &Arc<FacetTopology>,
        cache: &mut OperatorCache,
        solver: SolverChoice,
        settings: IterativeSettings,
    ) -> Result<Self, SolveError> {
        let params = cache.params;
        if !(params.dt > 0.0) {
            return Err(MeshError::NonPositiveTimeStep(params.dt).into());
        }
        let p = params.p;
        let dofs = DofMap::new(mesh, topology, p)?;
        let elements: Vec<_> = (0..mesh.num_triangles())
            .map(|e| {
                (
                    crate::basis::PrismGeometry::new(mesh.triangle_vertices(e), 0.0, params.dt),
                    roles_of(topology, e),
                )
            })
            .collect();
        let ops = cache.operators(&elements).map_err(|err| match err {
            HdgError::SingularElement { pivot, .. } => {
                // Report the first element with the failing shape.
                HdgError::SingularElement { element: 0, pivot }.into()
            }
            other => SolveError::from(other),
        })?;
        let signs: Vec<[Vec<f64>; 3]> = (0..mesh.num_triangles())
            .map(|e| topology.element_flips[e].map(|fl| facet_signs(p, fl)))
            .collect();
        let m = dofs.block_size;
        let triplets: Vec<(usize, usize, f64)> = (0..mesh.num_triangles())
            .into_par_iter()
            .flat_map_iter(|e| {
                let s = &ops[e].schur;
                let fac = topology.element_facets[e];
                let sg = &signs[e];
                let mut t = Vec::with_capacity(9 * m * m);
                for k in 0..3 {
                    for kk in 0..3 {
                        for a in 0..m {
                            for b in 0..m {
                                t.push((
                                    fac[k] * m + a,
                                    fac[kk] * m + b,
                                    sg[k][a] * sg[kk][b] * s[(k * m + a, kk * m + b)],
                                ));
                            }
                        }
                    }
                }
                t
            })
            .collect();
        let matrix = CsrMatrix::from_triplets(dofs.n_dofs(), triplets);
        let backend = match solver {
            SolverChoice::Direct => {
                let a = matrix
                    .to_faer()
                    .map_err(|message| SolveError::Factorization { slab: 0, message })?;
                let lu = a.sp_lu().map_err(|e| SolveError::Factorization {
                    slab: 0,
                    message: format!("{e:?}"),
                })?;
                Backend::Direct(Box::new(lu))
            }
            SolverChoice::Iterative => {
                let blocks = (0..dofs.n_blocks)
                    .map(|f| {
                        let r = dofs.block(f);
                        let d = DMatrix::from_fn(m, m, |i, j| {
                            matrix.get(r.start + i, r.start + j).unwrap_or(0.0)
                        });
                        d.try_inverse().ok_or_else(|| SolveError::Factorization {
                            slab: 0,
                            message: format!("singular diagonal block {f}"),
                        })
                    })
                    .collect::<Result<_, _>>()?;
                Backend::Iterative { blocks, settings }
            }
        };
        Ok(Self {
            mesh: Arc::clone(mesh),
            topology: Arc::clone(topology),
            spaces: Arc::clone(&cache.spaces),
            params,
            dofs,
            matrix,
            ops,
            signs,
            backend,
        })
    }

    pub fn operator(&self, e: usize) -> &ElementOperator {
        &self.ops[e]
    }

    fn element_loads(&self, traces: &Traces) -> Vec<DVector<f64>> {
        let nt = self.spaces.n_tri();
        (0..self.mesh.num_triangles())
            .into_par_iter()
            .map(|e| {
                let q = &traces.q[e * 2 * nt..(e + 1) * 2 * nt];
                let det =
                    crate::basis::PrismGeometry::new(self.mesh.triangle_vertices(e), 0.0, 1.0)
                        .det();
                element_load(&self.spaces, det, [&q[..nt], &q[nt..]])
            })
            .collect()
    }

    /// Condensed system for the slab starting at `t_start`.
    pub fn assemble(
        &self,
        t_start: f64,
        problem: &dyn WaveProblem,
        traces: &Traces,
    ) -> GlobalSystem {
        let loads = self.element_loads(traces);
        self.assemble_with_loads(t_start, problem, traces, &loads)
    }

    fn assemble_with_loads(
        &self,
        t_start: f64,
        problem: &dyn WaveProblem,
        traces: &Traces,
        loads: &[DVector<f64>],
    ) -> GlobalSystem {
        let m = self.dofs.block_size;
        let p = self.params.p;
        let mut rhs = vec![0.0; self.dofs.n_dofs()];
        for (e, b_e) in loads.iter().enumerate() {
            let r = self.ops[e].reduced_rhs(b_e);
            for k in 0..3 {
                let f = self.topology.element_facets[e][k];
                for a in 0..m {
                    rhs[f * m + a] += self.signs[e][k][a] * r[k * m + a];
                }
            }
        }
        for (i, &f) in self.topology.surface_facets.iter().enumerate() {
            let len = self.mesh.edge_length(self.topology.facets[f].edge);
            let b = surface_load(
                &self.spaces,
                len,
                &traces.lambda[i * (p + 1)..(i + 1) * (p + 1)],
            );
            for a in 0..m {
                rhs[f * m + a] += b[a];
            }
        }
        for (f, facet) in self.topology.facets.iter().enumerate() {
            let FacetKind::Neumann(tag) = facet.kind else {
                continue;
            };
            let side = facet.sides[0];
            let normal = self.mesh.outward_normal(side.element, side.local);
            let [va, vb] = self.mesh.edges[facet.edge]
                .vertices
                .map(|v| self.mesh.vertices[v]);
            let len = self.mesh.edge_length(facet.edge);
            let b = neumann_load(
                &self.spaces,
                len,
                t_start,
                self.params.dt,
                self.params.alpha,
                |s, t| {
                    let x = lerp(va, vb, s);
                    problem.normal_flux(tag, x, normal, t)
                },
            );
            for a in 0..m {
                rhs[f * m + a] += b[a];
            }
        }
        GlobalSystem {
            dofs: self.dofs.clone(),
            matrix: self.matrix.clone(),
            rhs,
        }
    }

    fn solve_facets(&self, index: usize, rhs: &[f64]) -> Result<(Vec<f64>, f64), SolveError> {
        let bnorm = norm(rhs);
        if bnorm == 0.0 {
            return Ok((vec![0.0; rhs.len()], 0.0));
        }
        let x = match &self.backend {
            Backend::Direct(lu) => {
                let b = Mat::from_fn(rhs.len(), 1, |i, _| rhs[i]);
                let x = lu.solve(&b);
                (0..rhs.len()).map(|i| x[(i, 0)]).collect::<Vec<f64>>()
            }
            Backend::Iterative { blocks, settings } => {
                let mut x = vec![0.0; rhs.len()];
                let (iterations, res) = gmres(
                    &self.matrix,
                    blocks,
                    self.dofs.block_size,
                    rhs,
                    &mut x,
                    settings,
                );
                if res > settings.tol {
                    return Err(SolveError::NotConverged {
                        slab: index,
                        iterations,
                        residual: res,
                    });
                }
                x
            }
        };
        let mut ax = vec![0.0; rhs.len()];
        self.matrix.matvec(&x, &mut ax);
        let res = ax
            .iter()
            .zip(rhs)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
            / bnorm;
        if !res.is_finite() {
            return Err(SolveError::Factorization {
                slab: index,
                message: "non-finite solution".into(),
            });
        }
        Ok((x, res))
    }

    /// Solves slab `index` starting at `t_start` from the given traces.
    pub fn solve_slab(
        &self,
        index: usize,
        t_start: f64,
        problem: &dyn WaveProblem,
        traces: &Traces,
    ) -> Result<SlabSolution, SolveError> {
        let loads = self.element_loads(traces);
        let system = self.assemble_with_loads(t_start, problem, traces, &loads);
        let (lambda, residual) = self.solve_facets(index, &system.rhs)?;
        let m = self.dofs.block_size;
        let ne = self.spaces.n_element();
        let nw = self.spaces.n_w();
        let element_coeffs: Vec<f64> = (0..self.mesh.num_triangles())
            .into_par_iter()
            .map(|e| {
                let mut lam = DVector::zeros(3 * m);
                for k in 0..3 {
                    let f = self.topology.element_facets[e][k];
                    for a in 0..m {
                        lam[k * m + a] = self.signs[e][k][a] * lambda[f * m + a];
                    }
                }
                self.ops[e].back_substitute(&loads[e], &lam)
            })
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .flat_map(|x| x.as_slice().to_vec())
            .collect();
        debug_assert_eq!(element_coeffs.len(), ne * self.mesh.num_triangles());
        let p = self.params.p;
        let nt = self.spaces.n_tri();
        let mut top_q = Vec::with_capacity(self.mesh.num_triangles() * 2 * nt);
        for e in 0..self.mesh.num_triangles() {
            for c in 0..2 {
                let coeffs = &element_coeffs[e * ne + c * nw..e * ne + (c + 1) * nw];
                top_q.extend(top_trace(&self.spaces, coeffs));
            }
        }
        let mut top_lambda = Vec::with_capacity(self.topology.surface_facets.len() * (p + 1));
        for &f in &self.topology.surface_facets {
            top_lambda.extend(crate::hdg_local::time_slice(
                p,
                &lambda[f * m..(f + 1) * m],
                self.spaces.time_top(),
            ));
        }
        Ok(SlabSolution {
            index,
            t_start,
            dt: self.params.dt,
            p,
            element_coeffs,
            lambda,
            top: Traces {
                q: top_q,
                lambda: top_lambda,
            },
            bottom: traces.clone(),
            residual,
        })
    }
}

fn lerp(a: [f64; 2], b: [f64; 2], s: f64) -> [f64; 2] {
    let l = 0.5 * (1.0 - s);
    let r = 0.5 * (1.0 + s);
    [l * a[0] + r * b[0], l * a[1] + r * b[1]]
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn apply_block_jacobi(blocks: &[DMatrix<f64>], m: usize, r: &[f64], z: &mut [f64]) {
    for (f, b) in blocks.iter().enumerate() {
        let rs = DVector::from_column_slice(&r[f * m..(f + 1) * m]);
        let zs = b * rs;
        z[f * m..(f + 1) * m].copy_from_slice(zs.as_slice());
    }
}

/// Right-preconditioned restarted GMRES; returns iterations and the final
/// relative residual.
fn gmres(
    a: &CsrMatrix,
    blocks: &[DMatrix<f64>],
    m: usize,
    b: &[f64],
    x: &mut [f64],
    settings: &IterativeSettings,
) -> (usize, f64) {
    let n = b.len();
    let bnorm = norm(b);
    let restart = settings.restart.max(1);
    let mut iterations = 0;
    let mut r = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut z = vec![0.0; n];
    loop {
        a.matvec(x, &mut r);
        for i in 0..n {
            r[i] = b[i] - r[i];
        }
        let beta = norm(&r);
        if beta / bnorm <= settings.tol || iterations >= settings.max_iter {
            return (iterations, beta / bnorm);
        }
        let mut v: Vec<Vec<f64>> = vec![r.iter().map(|ri| ri / beta).collect()];
        let mut h = DMatrix::<f64>::zeros(restart + 1, restart);
        let mut cs = vec![0.0; restart];
        let mut sn = vec![0.0; restart];
        let mut g = vec![0.0; restart + 1];
        g[0] = beta;
        let mut k_used = 0;
        for k in 0..restart {
            apply_block_jacobi(blocks, m, &v[k], &mut z);
            a.matvec(&z, &mut w);
            for (i, vi) in v.iter().enumerate() {
                let hik: f64 = w.iter().zip(vi).map(|(a, b)| a * b).sum();
                h[(i, k)] = hik;
                for (wj, vj) in w.iter_mut().zip(vi) {
                    *wj -= hik * vj;
                }
            }
            let hn = norm(&w);
            h[(k + 1, k)] = hn;
            for i in 0..k {
                let t = cs[i] * h[(i, k)] + sn[i] * h[(i + 1, k)];
                h[(i + 1, k)] = -sn[i] * h[(i, k)] + cs[i] * h[(i + 1, k)];
                h[(i, k)] = t;
            }
            let den = (h[(k, k)].powi(2) + h[(k + 1, k)].powi(2)).sqrt();
            cs[k] = h[(k, k)] / den;
            sn[k] = h[(k + 1, k)] / den;
            h[(k, k)] = den;
            h[(k + 1, k)] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            iterations += 1;
            k_used = k + 1;
            if g[k + 1].abs() / bnorm <= settings.tol
                || hn == 0.0
                || iterations >= settings.max_iter
            {
                break;
            }
            v.push(w.iter().map(|wi| wi / hn).collect());
        }
        let mut y = vec![0.0; k_used];
        for i in (0..k_used).rev() {
            let s: f64 = ((i + 1)..k_used).map(|j| h[(i, j)] * y[j]).sum();
            y[i] = (g[i] - s) / h[(i, i)];
        }
        let mut u = vec![0.0; n];
        for (j, yj) in y.iter().enumerate() {
            for (ui, vi) in u.iter_mut().zip(&v[j]) {
                *ui += yj * vi;
            }
        }
        apply_block_jacobi(blocks, m, &u, &mut z);
        for (xi, zi) in x.iter_mut().zip(&z) {
            *xi += zi;
        }
    }
}

/// Unweighted elementwise L2 projection of `-grad phi_0` and edgewise L2
/// projection of `v(0)` on the free surface.
pub fn initial_traces(
    mesh: &SpatialMesh,
    topology: &FacetTopology,
    p: usize,
    problem: &dyn WaveProblem,
) -> Traces {
    let tri = crate::basis::TriangleBasis::new(p);
    let rule = triangle_rule(2 * p + 4).expect("degree within tabulated range");
    let tab: Vec<Vec<f64>> = rule.points.iter().map(|x| tri.values(x[0], x[1])).collect();
    let nt = tri.dim();
    let mut q = Vec::with_capacity(mesh.num_triangles() * 2 * nt);
    for e in 0..mesh.num_triangles() {
        let g = crate::basis::PrismGeometry::new(mesh.triangle_vertices(e), 0.0, 1.0);
        let mut a = vec![0.0; 2 * nt];
        for ((x, w), vals) in rule.points.iter().zip(&rule.weights).zip(&tab) {
            let (xp, _) = g.to_physical([x[0], x[1], -1.0]);
            let qv = problem.initial_q(xp);
            for k in 0..nt {
                a[k] += w * qv[0] * vals[k];
                a[nt + k] += w * qv[1] * vals[k];
            }
        }
        q.extend(a);
    }
    let (nodes, weights) = gauss_legendre(p + 3);
    let mut lambda = Vec::with_capacity(topology.surface_facets.len() * (p + 1));
    for &f in &topology.surface_facets {
        let [va, vb] = mesh.edges[topology.facets[f].edge]
            .vertices
            .map(|v| mesh.vertices[v]);
        let mut c = vec![0.0; p + 1];
        for (s, w) in nodes.iter().zip(&weights) {
            let val = problem.initial_v(lerp(va, vb, *s));
            for (cl, ll) in c.iter_mut().zip(legendre(p, *s)) {
                *cl += w * val * ll;
            }
        }
        lambda.extend(c);
    }
    Traces { q, lambda }
}

/// Inputs of a march.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarchParams {
    pub p: usize,
    pub dt: f64,
    pub t_final: f64,
    pub tau: f64,
    pub alpha: f64,
    pub time_quad_extra: usize,
    pub solver: SolverChoice,
    pub iterative: IterativeSettings,
    /// Write a checkpoint after every `n`-th slab.
    pub checkpoint_every: Option<usize>,
}

impl MarchParams {
    pub fn new(p: usize, dt: f64, t_final: f64) -> Self {
        Self {
            p,
            dt,
            t_final,
            tau: 5.0,
            alpha: 0.1,
            time_quad_extra: 0,
            solver: SolverChoice::Direct,
            iterative: IterativeSettings::default(),
            checkpoint_every: None,
        }
    }

    fn local(&self, dt: f64) -> LocalParams {
        LocalParams {
            p: self.p,
            tau: self.tau,
            alpha: self.alpha,
            dt,
            time_quad_extra: self.time_quad_extra,
        }
    }

    /// Slab lengths covering `[0, t_final]`; a remainder becomes a final short slab.
    pub fn schedule(&self) -> Result<(usize, Option<f64>), SolveError> {
        if !(self.dt > 0.0) || !(self.t_final > 0.0) {
            return Err(SolveError::Parameters(format!(
                "need dt > 0 and T > 0 (got dt = {}, T = {})",
                self.dt, self.t_final
            )));
        }
        if self.p == 0 {
            return Err(SolveError::Parameters(
                "polynomial degree must be at least 1".into(),
            ));
        }
        if !(self.tau > 0.0) {
            return Err(HdgError::NonPositiveTau(self.tau).into());
        }
        if !(self.alpha > 0.0) {
            return Err(SolveError::Parameters(format!(
                "alpha must be positive (got {})",
                self.alpha
            )));
        }
        let ratio = self.t_final / self.dt;
        let n = ratio.round();
        if (ratio - n).abs() <= 1e-9 * ratio.max(1.0) {
            return Ok((n as usize, None));
        }
        let full = ratio.floor() as usize;
        Ok((full, Some(self.t_final - full as f64 * self.dt)))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MarchSummary {
    pub slabs: usize,
    pub t_end: f64,
    pub warnings: Vec<String>,
    pub max_residual: f64,
    pub n_dofs: usize,
}

/// Where checkpoints go and where a restarted march picks up.
#[derive(Debug, Clone, Default)]
pub struct MarchIo<'a> {
    pub checkpoint_dir: Option<&'a Path>,
    pub resume: Option<Checkpoint>,
}

/// Marches from `t = 0` to `t_final`, handing each slab to `visit`.
pub fn march<F>(
    mesh: &Arc<SpatialMesh>,
    params: &MarchParams,
    problem: &dyn WaveProblem,
    visit: F,
) -> Result<MarchSummary, SolveError>
where
    F: FnMut(&SlabSolution) -> Result<(), SolveError>,
{
    march_with(mesh, params, problem, MarchIo::default(), visit)
}

pub fn march_with<F>(
    mesh: &Arc<SpatialMesh>,
    params: &MarchParams,
    problem: &dyn WaveProblem,
    io: MarchIo<'_>,
    mut visit: F,
) -> Result<MarchSummary, SolveError>
where
    F: FnMut(&SlabSolution) -> Result<(), SolveError>,
{
    let (n_full, short) = params.schedule()?;
    let topology = Arc::new(FacetTopology::new(mesh)?);
    let mut summary = MarchSummary::default();
    if let Some(rem) = short {
        summary.warnings.push(format!(
            "T = {} is not a multiple of dt = {}; the last slab has length {:.6e}",
            params.t_final, params.dt, rem
        ));
    }
    let (mut traces, first) = match io.resume {
        Some(cp) => {
            if cp.header.p != params.p {
                return Err(SolveError::Checkpoint(format!(
                    "checkpoint has p = {}, run has p = {}",
                    cp.header.p, params.p
                )));
            }
            (cp.traces, cp.header.slab + 1)
        }
        None => (initial_traces(mesh, &topology, params.p, problem), 0),
    };
    let n_total = n_full + usize::from(short.is_some());
    let mut solver: Option<SlabSolver> = None;
    for n in first..n_total {
        let dt = if n < n_full {
            params.dt
        } else {
            short.unwrap_or(params.dt)
        };
        let t_start = n as f64 * params.dt;
        let rebuild = solver.as_ref().is_none_or(|s| s.params.dt != dt);
        if rebuild {
            let mut cache = OperatorCache::new(params.local(dt))?;
            solver = Some(
                SlabSolver::with_cache(
                    mesh,
                    &topology,
                    &mut cache,
                    params.solver,
                    params.iterative,
                )
                .map_err(|e| match e {
                    SolveError::Factorization { message, .. } => {
                        SolveError::Factorization { slab: n, message }
                    }
                    other => other,
                })?,
            );
        }
        let s = solver.as_ref().expect("solver built above");
        summary.n_dofs = s.dofs.n_dofs();
        let sol = s.solve_slab(n, t_start, problem, &traces)?;
        summary.max_residual = summary.max_residual.max(sol.residual);
        visit(&sol)?;
        if let (Some(every), Some(dir)) = (params.checkpoint_every, io.checkpoint_dir) {
            if every > 0 && (n + 1) % every == 0 {
                write_checkpoint(&dir.join(format!("checkpoint_{n:06}.bin")), &sol)?;
            }
        }
        summary.slabs += 1;
        summary.t_end = sol.t_end();
        traces = sol.top;
    }
    Ok(summary)
}

/// Runs a march and keeps every slab.
pub fn march_collect(
    mesh: &Arc<SpatialMesh>,
    params: &MarchParams,
    problem: &dyn WaveProblem,
) -> Result<Vec<SlabSolution>, SolveError> {
    let mut out = Vec::new();
    march(mesh, params, problem, |s| {
        out.push(s.clone());
        Ok(())
    })?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub slab: usize,
    pub t: f64,
    pub p: usize,
    /// Lengths of the `q` and `lambda` arrays that follow.
    pub counts: [usize; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub traces: Traces,
}

/// One JSON header line, then the `q` and `lambda` top traces as
/// little-endian `f64`.
pub fn write_checkpoint(path: &Path, sol: &SlabSolution) -> Result<(), SolveError> {
    let header = CheckpointHeader {
        slab: sol.index,
        t: sol.t_end(),
        p: sol.p,
        counts: [sol.top.q.len(), sol.top.lambda.len()],
    };
    let err = |e: std::io::Error| SolveError::Checkpoint(format!("{}: {e}", path.display()));
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(err)?);
    let line = serde_json::to_string(&header).map_err(|e| SolveError::Checkpoint(e.to_string()))?;
    writeln!(f, "{line}").map_err(err)?;
    for v in sol.top.q.iter().chain(&sol.top.lambda) {
        f.write_all(&v.to_le_bytes()).map_err(err)?;
    }
    f.flush().map_err(err)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, SolveError> {
    let err = |e: std::io::Error| SolveError::Checkpoint(format!("{}: {e}", path.display()));
    let mut r = std::io::BufReader::new(std::fs::File::open(path).map_err(err)?);
    let mut line = String::new();
    r.read_line(&mut line).map_err(err)?;
    let header: CheckpointHeader = serde_json::from_str(line.trim_end())
        .map_err(|e| SolveError::Checkpoint(format!("bad header: {e}")))?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(err)?;
    let total = header.counts[0] + header.counts[1];
    if bytes.len() != 8 * total {
        return Err(SolveError::Checkpoint(format!(
            "expected {} payload bytes, found {}",
            8 * total,
            bytes.len()
        )));
    }
    let vals: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let (q, lambda) = vals.split_at(header.counts[0]);
    Ok(Checkpoint {
        header,
        traces: Traces {
            q: q.to_vec(),
            lambda: lambda.to_vec(),
        },
    })
}

/// Terms of the discrete energy identity obtained by testing the slab
/// equations with the solution itself.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct EnergyTerms {
    /// `alpha/2 (|q|^2, f)`
    pub q_decay: f64,
    /// `1/2 <|q|^2 f>` at `t_{n+1}`
    pub q_top: f64,
    /// `1/2 <|q|^2>` at `t_n`
    pub q_bottom: f64,
    /// `<tau (v - lambda)^2, f>` over all lateral facets
    pub stabilization: f64,
    /// `alpha/2 <lambda^2, f>` on the free surface
    pub lambda_decay: f64,
    /// `1/2 <<lambda^2 f>>` at `t_{n+1}`
    pub lambda_top: f64,
    /// `1/2 <<lambda^2>>` at `t_n`
    pub lambda_bottom: f64,
    /// `<q^-, q>` at `t_n` + `<<lambda^-, lambda>>` at `t_n` + `<g, lambda f>`
    pub data: f64,
}

impl EnergyTerms {
    pub fn quadratic(&self) -> [f64; 7] {
        [
            self.q_decay,
            self.q_top,
            self.q_bottom,
            self.stabilization,
            self.lambda_decay,
            self.lambda_top,
            self.lambda_bottom,
        ]
    }

    pub fn residual(&self) -> f64 {
        self.quadratic().iter().sum::<f64>() - self.data
    }

    /// Residual relative to the largest term.
    pub fn relative_residual(&self) -> f64 {
        let scale = self
            .quadratic()
            .iter()
            .chain(std::iter::once(&self.data))
            .fold(0.0f64, |a, b| a.max(b.abs()));
        if scale == 0.0 {
            0.0
        } else {
            self.residual().abs() / scale
        }
    }
}

/// Evaluates each term of the energy identity by quadrature.
pub fn energy_identity_check(
    mesh: &SpatialMesh,
    topology: &FacetTopology,
    params: &LocalParams,
    problem: &dyn WaveProblem,
    sol: &SlabSolution,
) -> Result<EnergyTerms, SolveError> {
    Ok(EnergyChecker::new(params)?.check(mesh, topology, problem, sol))
}

/// Quadrature data reused across slabs by [`energy_identity_check`].
#[derive(Debug, Clone)]
pub struct EnergyChecker {
    params: LocalParams,
    spaces: LocalSpaces,
    /// The solver's own rule, so the boundary-data term matches its load.
    load_spaces: LocalSpaces,
}

impl EnergyChecker {
    pub fn new(params: &LocalParams) -> Result<Self, SolveError> {
        Ok(Self {
            params: *params,
            spaces: LocalSpaces::new(params.p, params.time_points() + 1)?,
            load_spaces: LocalSpaces::new(params.p, params.time_points())?,
        })
    }

    pub fn check(
        &self,
        mesh: &SpatialMesh,
        topology: &FacetTopology,
        problem: &dyn WaveProblem,
        sol: &SlabSolution,
    ) -> EnergyTerms {
        let params = &self.params;
        let spaces = &self.spaces;
        let dt = sol.dt;
        let alpha = params.alpha;
        let tau = params.tau;
        let f_at = |tr: f64| (-alpha * 0.5 * (tr + 1.0) * dt).exp();
        let nt = spaces.n_tri();
        let p = params.p;
        let mut e = EnergyTerms::default();
        let ptab = spaces.prism_tabulation();
        let (bot, top) = spaces.face_tabulations();
        let tri = spaces.triangle_rule();
        let tri_tab = spaces.triangle_tabulation();
        for el in 0..mesh.num_triangles() {
            let g = crate::basis::PrismGeometry::new(mesh.triangle_vertices(el), sol.t_start, dt);
            let det = g.det().abs();
            let qc = [sol.q(el, 0), sol.q(el, 1)].map(DVector::from_column_slice);
            let v = DVector::from_column_slice(sol.v(el));
            let qv = [ptab.values.tr_mul(&qc[0]), ptab.values.tr_mul(&qc[1])];
            for (i, (x, w)) in spaces
                .prism_rule
                .points
                .iter()
                .zip(&spaces.prism_rule.weights)
                .enumerate()
            {
                let wq = w * det * 0.5 * dt * f_at(x[2]);
                e.q_decay += 0.5 * alpha * wq * (qv[0][i].powi(2) + qv[1][i].powi(2));
            }
            let qt = [top.tr_mul(&qc[0]), top.tr_mul(&qc[1])];
            let qb = [bot.tr_mul(&qc[0]), bot.tr_mul(&qc[1])];
            let prev = &sol.bottom.q[el * 2 * nt..(el + 1) * 2 * nt];
            let qp = [
                tri_tab.tr_mul(&DVector::from_column_slice(&prev[..nt])),
                tri_tab.tr_mul(&DVector::from_column_slice(&prev[nt..])),
            ];
            for (i, w) in tri.weights.iter().enumerate() {
                let wd = w * det;
                e.q_top += 0.5 * wd * f_at(1.0) * (qt[0][i].powi(2) + qt[1][i].powi(2));
                e.q_bottom += 0.5 * wd * (qb[0][i].powi(2) + qb[1][i].powi(2));
                e.data += wd * (qp[0][i] * qb[0][i] + qp[1][i] * qb[1][i]);
            }
            for k in 0..3 {
                let f = topology.element_facets[el][k];
                let sg = facet_signs(p, topology.element_flips[el][k]);
                let lam: Vec<f64> = sol.facet(f).iter().zip(&sg).map(|(a, b)| a * b).collect();
                let lv = spaces
                    .facet_tabulation()
                    .values
                    .tr_mul(&DVector::from_vec(lam));
                let vv = spaces.edge_tabulation(k).values.tr_mul(&v);
                let len = mesh.edge_length(mesh.triangle_edges[el][k]);
                for (i, (x, w)) in spaces
                    .facet_rule
                    .points
                    .iter()
                    .zip(&spaces.facet_rule.weights)
                    .enumerate()
                {
                    e.stabilization +=
                        tau * w * 0.25 * len * dt * f_at(x[1]) * (vv[i] - lv[i]).powi(2);
                }
            }
        }
        let (nodes, weights) = spaces.edge_rule();
        for (si, &f) in topology.surface_facets.iter().enumerate() {
            let len = mesh.edge_length(topology.facets[f].edge);
            let lam = DVector::from_column_slice(sol.facet(f));
            let lv = spaces.facet_tabulation().values.tr_mul(&lam);
            for (i, (x, w)) in spaces
                .facet_rule
                .points
                .iter()
                .zip(&spaces.facet_rule.weights)
                .enumerate()
            {
                e.lambda_decay += 0.5 * alpha * w * 0.25 * len * dt * f_at(x[1]) * lv[i].powi(2);
            }
            let ltop = crate::hdg_local::time_slice(p, sol.facet(f), spaces.time_top());
            let lbot = crate::hdg_local::time_slice(p, sol.facet(f), spaces.time_bottom());
            let lprev = &sol.bottom.lambda[si * (p + 1)..(si + 1) * (p + 1)];
            for (s, w) in nodes.iter().zip(weights) {
                let ll = legendre(p, *s);
                let ev = |c: &[f64]| c.iter().zip(&ll).map(|(a, b)| a * b).sum::<f64>();
                let wl = 0.5 * len * w;
                e.lambda_top += 0.5 * wl * f_at(1.0) * ev(&ltop).powi(2);
                e.lambda_bottom += 0.5 * wl * ev(&lbot).powi(2);
                e.data += wl * ev(lprev) * ev(&lbot);
            }
        }
        for facet in &topology.facets {
            let FacetKind::Neumann(tag) = facet.kind else {
                continue;
            };
            let side = facet.sides[0];
            let normal = mesh.outward_normal(side.element, side.local);
            let [va, vb] = mesh.edges[facet.edge].vertices.map(|v| mesh.vertices[v]);
            let len = mesh.edge_length(facet.edge);
            let f = topology.edge_to_facet[facet.edge];
            let b = neumann_load(&self.load_spaces, len, sol.t_start, dt, alpha, |s, t| {
                problem.normal_flux(tag, lerp(va, vb, s), normal, t)
            });
            e.data += b.iter().zip(sol.facet(f)).map(|(a, c)| a * c).sum::<f64>();
        }
        e
    }
}
