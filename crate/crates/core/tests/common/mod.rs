//! Dense monolithic reference solver: every unknown of a slab (q, v on each
//! prism and lambda on each lateral facet) in one matrix, assembled from
//! physical-space point evaluations.

#![allow(dead_code, clippy::needless_range_loop)]

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use st_hdg_core::basis::{
    legendre, legendre_with_derivative, make_basis, PrismGeometry, ReferenceBasis, SpaceKind,
    TriangleBasis,
};
use st_hdg_core::mesh::{
    build_structured_mesh, BottomProfile, Domain, FacetKind, FacetTopology, LateralBoundaries,
    SpatialMesh,
};
use st_hdg_core::quadrature::{gauss_legendre, triangle_rule};
use st_hdg_core::waves::WaveProblem;

pub fn mesh(nx: usize, ny: usize, domain: Domain, lateral: LateralBoundaries) -> Arc<SpatialMesh> {
    Arc::new(build_structured_mesh(nx, ny, domain, &BottomProfile::flat(), lateral).unwrap())
}

/// One slab of the monolithic solve.
pub struct DenseSlab {
    pub p: usize,
    pub t_start: f64,
    pub dt: f64,
    /// Per element `[q1 | q2 | v]` prism coefficients.
    pub elements: Vec<DVector<f64>>,
    /// Per facet `(p+1)^2` coefficients along the facet's own edge.
    pub lambda: Vec<DVector<f64>>,
}

/// Prism basis values, physical gradients and time derivatives at a point.
struct PointEval {
    val: Vec<f64>,
    dx: Vec<f64>,
    dy: Vec<f64>,
    dt: Vec<f64>,
}

pub struct DenseOracle<'a> {
    pub mesh: &'a SpatialMesh,
    pub topo: FacetTopology,
    pub p: usize,
    pub tau: f64,
    pub alpha: f64,
    pub dt: f64,
    /// Gauss points in time, as in the solver (`p + 2` plus extras).
    pub time_points: usize,
    n_w: usize,
    n_m: usize,
    basis: ReferenceBasis,
}

fn lerp(a: [f64; 2], b: [f64; 2], s: f64) -> [f64; 2] {
    [
        0.5 * (1.0 - s) * a[0] + 0.5 * (1.0 + s) * b[0],
        0.5 * (1.0 - s) * a[1] + 0.5 * (1.0 + s) * b[1],
    ]
}

impl<'a> DenseOracle<'a> {
    pub fn new(mesh: &'a SpatialMesh, p: usize, tau: f64, alpha: f64, dt: f64) -> Self {
        let topo = FacetTopology::new(mesh).unwrap();
        Self {
            mesh,
            topo,
            p,
            tau,
            alpha,
            dt,
            n_w: (p + 1) * (p + 1) * (p + 2) / 2,
            n_m: (p + 1) * (p + 1),
            time_points: p + 2,
            basis: make_basis(SpaceKind::PrismPP, p).unwrap(),
        }
    }

    fn weight(&self, t: f64, t0: f64) -> f64 {
        (-self.alpha * (t - t0)).exp()
    }

    fn n_unknowns(&self) -> usize {
        3 * self.n_w * self.mesh.num_triangles() + self.n_m * self.topo.facets.len()
    }

    fn elem_dof(&self, e: usize, block: usize, j: usize) -> usize {
        (3 * e + block) * self.n_w + j
    }

    fn facet_dof(&self, f: usize, j: usize) -> usize {
        3 * self.n_w * self.mesh.num_triangles() + f * self.n_m + j
    }

    fn prism_eval(&self, g: &PrismGeometry, x: [f64; 2], t: f64) -> PointEval {
        let r = g.to_reference(x).unwrap();
        let (val, d) = self.basis.eval([r[0], r[1], g.reference_time(t)]);
        let inv = g.inverse_jacobian().unwrap();
        // grad_x = J^{-T} grad_ref
        let dx = d
            .iter()
            .map(|g| inv[0][0] * g[0] + inv[1][0] * g[1])
            .collect();
        let dy = d
            .iter()
            .map(|g| inv[0][1] * g[0] + inv[1][1] * g[1])
            .collect();
        let dtv = d.iter().map(|g| g[2] * 2.0 / self.dt).collect();
        PointEval {
            val,
            dx,
            dy,
            dt: dtv,
        }
    }

    /// Canonical parameter of a physical point on facet `f`.
    fn facet_param(&self, f: usize, x: [f64; 2]) -> f64 {
        let facet = &self.topo.facets[f];
        let [a, b] = self.mesh.edges[facet.edge]
            .vertices
            .map(|v| self.mesh.vertices[v]);
        if facet.kind == FacetKind::Periodic {
            // Periodic facets are vertical: match by height.
            2.0 * (x[1] - a[1]) / (b[1] - a[1]) - 1.0
        } else {
            let d = [b[0] - a[0], b[1] - a[1]];
            let l2 = d[0] * d[0] + d[1] * d[1];
            2.0 * ((x[0] - a[0]) * d[0] + (x[1] - a[1]) * d[1]) / l2 - 1.0
        }
    }

    fn facet_basis(&self, s: f64, t: f64, t0: f64) -> Vec<f64> {
        let ls = legendre(self.p, s);
        let lt = legendre(self.p, 2.0 * (t - t0) / self.dt - 1.0);
        let mut out = Vec::with_capacity(self.n_m);
        for a in &ls {
            for b in &lt {
                out.push(a * b);
            }
        }
        out
    }

    fn facet_basis_dt(&self, s: f64, t: f64, t0: f64) -> Vec<f64> {
        let ls = legendre(self.p, s);
        let (_, dl) = legendre_with_derivative(self.p, 2.0 * (t - t0) / self.dt - 1.0);
        let mut out = Vec::with_capacity(self.n_m);
        for a in &ls {
            for b in &dl {
                out.push(a * b * 2.0 / self.dt);
            }
        }
        out
    }

    /// Elementwise `L2` projection of the initial velocity and edgewise
    /// projection of `v(0)` as point samplers.
    pub fn initial_state(&self, problem: &dyn WaveProblem) -> InitialState {
        let tri = TriangleBasis::new(self.p);
        let rule = triangle_rule(2 * self.p + 4).unwrap();
        let mut q = Vec::new();
        for e in 0..self.mesh.num_triangles() {
            let g = PrismGeometry::new(self.mesh.triangle_vertices(e), 0.0, 1.0);
            let n = tri.dim();
            let mut m = DMatrix::zeros(n, n);
            let mut b = [DVector::zeros(n), DVector::zeros(n)];
            for (x, w) in rule.points.iter().zip(&rule.weights) {
                let (xp, _) = g.to_physical([x[0], x[1], -1.0]);
                let vals = tri.values(x[0], x[1]);
                let qv = problem.initial_q(xp);
                for i in 0..n {
                    for c in 0..2 {
                        b[c][i] += w * vals[i] * qv[c];
                    }
                    for j in 0..n {
                        m[(i, j)] += w * vals[i] * vals[j];
                    }
                }
            }
            let lu = m.lu();
            q.push([lu.solve(&b[0]).unwrap(), lu.solve(&b[1]).unwrap()]);
        }
        let (nodes, weights) = gauss_legendre(self.p + 3);
        let mut lam = vec![None; self.topo.facets.len()];
        for &f in &self.topo.surface_facets {
            let [a, b] = self.mesh.edges[self.topo.facets[f].edge]
                .vertices
                .map(|v| self.mesh.vertices[v]);
            let mut m = DMatrix::zeros(self.p + 1, self.p + 1);
            let mut rhs = DVector::zeros(self.p + 1);
            for (s, w) in nodes.iter().zip(&weights) {
                let l = legendre(self.p, *s);
                let val = problem.initial_v(lerp(a, b, *s));
                for i in 0..=self.p {
                    rhs[i] += w * l[i] * val;
                    for j in 0..=self.p {
                        m[(i, j)] += w * l[i] * l[j];
                    }
                }
            }
            lam[f] = Some(m.lu().solve(&rhs).unwrap());
        }
        InitialState { q, lambda: lam }
    }

    /// `q_h^-` at a physical point of element `e` and `lambda_h^-` at a
    /// canonical parameter of surface facet `f`.
    fn prev_q(&self, prev: &Previous, e: usize, x: [f64; 2]) -> [f64; 2] {
        match prev {
            Previous::Initial(init) => {
                let g = PrismGeometry::new(self.mesh.triangle_vertices(e), 0.0, 1.0);
                let r = g.to_reference(x).unwrap();
                let vals = TriangleBasis::new(self.p).values(r[0], r[1]);
                let dot = |c: &DVector<f64>| vals.iter().zip(c.iter()).map(|(a, b)| a * b).sum();
                [dot(&init.q[e][0]), dot(&init.q[e][1])]
            }
            Previous::Slab(s) => {
                let g = PrismGeometry::new(self.mesh.triangle_vertices(e), s.t_start, s.dt);
                let ev = self.prism_eval(&g, x, s.t_start + s.dt);
                let c = &s.elements[e];
                let dot = |off: usize| (0..self.n_w).map(|j| ev.val[j] * c[off + j]).sum();
                [dot(0), dot(self.n_w)]
            }
        }
    }

    fn prev_lambda(&self, prev: &Previous, f: usize, s: f64) -> f64 {
        match prev {
            Previous::Initial(init) => {
                let c = init.lambda[f].as_ref().unwrap();
                legendre(self.p, s)
                    .iter()
                    .zip(c.iter())
                    .map(|(a, b)| a * b)
                    .sum()
            }
            Previous::Slab(sl) => {
                let b = self.facet_basis(s, sl.t_start + sl.dt, sl.t_start);
                b.iter().zip(sl.lambda[f].iter()).map(|(a, c)| a * c).sum()
            }
        }
    }

    /// Assembles and solves the full slab system with a dense LU.
    pub fn solve_slab(&self, t0: f64, problem: &dyn WaveProblem, prev: &Previous) -> DenseSlab {
        let n = self.n_unknowns();
        let mut a = DMatrix::<f64>::zeros(n, n);
        let mut rhs = DVector::<f64>::zeros(n);
        let p = self.p;
        let nw = self.n_w;
        let tri = triangle_rule(2 * p + 4).unwrap();
        let (gt, gw) = gauss_legendre(self.time_points);
        let (gs, gsw) = gauss_legendre(p + 2);
        let t1 = t0 + self.dt;
        for e in 0..self.mesh.num_triangles() {
            let g = PrismGeometry::new(self.mesh.triangle_vertices(e), t0, self.dt);
            let det = g.det().abs();
            // Volume terms.
            for (x, w) in tri.points.iter().zip(&tri.weights) {
                let (xp, _) = g.to_physical([x[0], x[1], -1.0]);
                for (tq, wt) in gt.iter().zip(&gw) {
                    let t = t0 + 0.5 * (tq + 1.0) * self.dt;
                    let wq = w * det * wt * 0.5 * self.dt;
                    let f = self.weight(t, t0);
                    let fp = -self.alpha * f;
                    let ev = self.prism_eval(&g, xp, t);
                    let grads = [&ev.dx, &ev.dy];
                    for i in 0..nw {
                        for j in 0..nw {
                            for c in 0..2 {
                                let row = self.elem_dof(e, c, i);
                                // -(q, f d_t r) - (q, r f')
                                a[(row, self.elem_dof(e, c, j))] +=
                                    wq * (-ev.val[j] * f * ev.dt[i] - ev.val[j] * ev.val[i] * fp);
                                // (v, f div r)
                                a[(row, self.elem_dof(e, 2, j))] +=
                                    wq * ev.val[j] * f * grads[c][i];
                                // -(w, f div q)
                                a[(self.elem_dof(e, 2, i), self.elem_dof(e, c, j))] -=
                                    wq * ev.val[i] * f * grads[c][j];
                            }
                        }
                    }
                }
            }
            // Top and bottom faces of the q equation.
            for (x, w) in tri.points.iter().zip(&tri.weights) {
                let (xp, _) = g.to_physical([x[0], x[1], -1.0]);
                let top = self.prism_eval(&g, xp, t1);
                let bot = self.prism_eval(&g, xp, t0);
                let qm = self.prev_q(prev, e, xp);
                let f1 = self.weight(t1, t0);
                for i in 0..nw {
                    for c in 0..2 {
                        let row = self.elem_dof(e, c, i);
                        for j in 0..nw {
                            a[(row, self.elem_dof(e, c, j))] +=
                                w * det * f1 * top.val[j] * top.val[i];
                        }
                        rhs[row] += w * det * qm[c] * bot.val[i];
                    }
                }
            }
            // Lateral facets.
            for k in 0..3 {
                let f = self.topo.element_facets[e][k];
                let normal = self.mesh.outward_normal(e, k);
                let [va, vb] = [g.vertices[k], g.vertices[(k + 1) % 3]];
                let len = ((vb[0] - va[0]).powi(2) + (vb[1] - va[1]).powi(2)).sqrt();
                for (s, ws) in gs.iter().zip(&gsw) {
                    let xp = lerp(va, vb, *s);
                    let sc = self.facet_param(f, xp);
                    for (tq, wt) in gt.iter().zip(&gw) {
                        let t = t0 + 0.5 * (tq + 1.0) * self.dt;
                        let wq = ws * wt * 0.25 * len * self.dt * self.weight(t, t0);
                        let ev = self.prism_eval(&g, xp, t);
                        let mu = self.facet_basis(sc, t, t0);
                        for i in 0..nw {
                            for m in 0..self.n_m {
                                let lam = self.facet_dof(f, m);
                                for c in 0..2 {
                                    // -<lambda, r.n f>
                                    a[(self.elem_dof(e, c, i), lam)] -=
                                        wq * mu[m] * ev.val[i] * normal[c];
                                    // <q.n, mu f>
                                    a[(lam, self.elem_dof(e, c, i))] +=
                                        wq * ev.val[i] * normal[c] * mu[m];
                                }
                                // tau <v - lambda, w f>
                                a[(self.elem_dof(e, 2, i), lam)] -=
                                    wq * self.tau * mu[m] * ev.val[i];
                                // -tau <v - lambda, mu f>
                                a[(lam, self.elem_dof(e, 2, i))] -=
                                    wq * self.tau * ev.val[i] * mu[m];
                            }
                            for j in 0..nw {
                                a[(self.elem_dof(e, 2, i), self.elem_dof(e, 2, j))] +=
                                    wq * self.tau * ev.val[j] * ev.val[i];
                            }
                        }
                        for m in 0..self.n_m {
                            for l in 0..self.n_m {
                                a[(self.facet_dof(f, m), self.facet_dof(f, l))] +=
                                    wq * self.tau * mu[l] * mu[m];
                            }
                        }
                    }
                }
            }
        }
        // Free-surface time terms and Neumann data.
        for (f, facet) in self.topo.facets.iter().enumerate() {
            let [va, vb] = self.mesh.edges[facet.edge]
                .vertices
                .map(|v| self.mesh.vertices[v]);
            let len = ((vb[0] - va[0]).powi(2) + (vb[1] - va[1]).powi(2)).sqrt();
            match facet.kind {
                FacetKind::FreeSurface => {
                    for (s, ws) in gs.iter().zip(&gsw) {
                        for (tq, wt) in gt.iter().zip(&gw) {
                            let t = t0 + 0.5 * (tq + 1.0) * self.dt;
                            let fw = self.weight(t, t0);
                            let wq = ws * wt * 0.25 * len * self.dt;
                            let mu = self.facet_basis(*s, t, t0);
                            let dmu = self.facet_basis_dt(*s, t, t0);
                            for m in 0..self.n_m {
                                for l in 0..self.n_m {
                                    a[(self.facet_dof(f, m), self.facet_dof(f, l))] += wq
                                        * (-mu[l] * fw * dmu[m] + self.alpha * fw * mu[l] * mu[m]);
                                }
                            }
                        }
                        let wl = ws * 0.5 * len;
                        let top = self.facet_basis(*s, t1, t0);
                        let bot = self.facet_basis(*s, t0, t0);
                        let lm = self.prev_lambda(prev, f, *s);
                        for m in 0..self.n_m {
                            for l in 0..self.n_m {
                                a[(self.facet_dof(f, m), self.facet_dof(f, l))] +=
                                    wl * self.weight(t1, t0) * top[l] * top[m];
                            }
                            rhs[self.facet_dof(f, m)] += wl * lm * bot[m];
                        }
                    }
                }
                FacetKind::Neumann(tag) => {
                    let side = facet.sides[0];
                    let normal = self.mesh.outward_normal(side.element, side.local);
                    for (s, ws) in gs.iter().zip(&gsw) {
                        let xp = lerp(va, vb, *s);
                        for (tq, wt) in gt.iter().zip(&gw) {
                            let t = t0 + 0.5 * (tq + 1.0) * self.dt;
                            let wq = ws * wt * 0.25 * len * self.dt * self.weight(t, t0);
                            let gval = problem.normal_flux(tag, xp, normal, t);
                            let mu = self.facet_basis(*s, t, t0);
                            for m in 0..self.n_m {
                                rhs[self.facet_dof(f, m)] += wq * gval * mu[m];
                            }
                        }
                    }
                }
                _ => {}
            }
        }
        let x = a
            .lu()
            .solve(&rhs)
            .expect("monolithic slab system is nonsingular");
        DenseSlab {
            p,
            t_start: t0,
            dt: self.dt,
            elements: (0..self.mesh.num_triangles())
                .map(|e| x.rows(self.elem_dof(e, 0, 0), 3 * nw).into_owned())
                .collect(),
            lambda: (0..self.topo.facets.len())
                .map(|f| x.rows(self.facet_dof(f, 0), self.n_m).into_owned())
                .collect(),
        }
    }

    /// Marches `slabs` slabs from `t = 0`.
    pub fn march(&self, problem: &dyn WaveProblem, slabs: usize) -> Vec<DenseSlab> {
        let mut out: Vec<DenseSlab> = Vec::new();
        let init = self.initial_state(problem);
        for n in 0..slabs {
            let t0 = n as f64 * self.dt;
            let sol = match out.last() {
                None => self.solve_slab(t0, problem, &Previous::Initial(init.clone())),
                Some(s) => self.solve_slab(t0, problem, &Previous::Slab(s.clone())),
            };
            out.push(sol);
        }
        out
    }
}

#[derive(Clone)]
pub struct InitialState {
    pub q: Vec<[DVector<f64>; 2]>,
    pub lambda: Vec<Option<DVector<f64>>>,
}

pub enum Previous {
    Initial(InitialState),
    Slab(DenseSlab),
}

impl Clone for DenseSlab {
    fn clone(&self) -> Self {
        Self {
            p: self.p,
            t_start: self.t_start,
            dt: self.dt,
            elements: self.elements.clone(),
            lambda: self.lambda.clone(),
        }
    }
}

/// Largest absolute entry of `a - b` over `max |b|`.
pub fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = b.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-300);
    a.iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
        / scale
}
