//! Element-level assembly of the weighted space-time HDG equations on one
//! prism, static condensation onto the facet unknowns and local recovery.
//!
//! Element unknowns are ordered `[q1, q2, v]`, each a block of
//! `dim P_p(K) x P_p(I)` coefficients. Facet unknowns are the three lateral
//! facets in local edge order, each `(p + 1)^2` coefficients. Facet functions
//! are parameterised along the local edge direction (vertex `k` to `k + 1`);
//! [`facet_signs`] converts to the canonical direction of the mesh edge.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::basis::{legendre, make_basis, PrismGeometry, ReferenceBasis, SpaceKind, Tabulation};
use crate::error::HdgError;
use crate::mesh::FacetKind;
use crate::quadrature::{gauss_legendre, prism_rule, triangle_rule, QuadratureRule};

/// `f_n(t) = exp(-alpha (t - t_n))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightFn {
    pub alpha: f64,
    pub t_n: f64,
}

impl WeightFn {
    pub fn new(alpha: f64, t_n: f64) -> Self {
        Self { alpha, t_n }
    }

    pub fn value(&self, t: f64) -> f64 {
        (-self.alpha * (t - self.t_n)).exp()
    }

    pub fn derivative(&self, t: f64) -> f64 {
        -self.alpha * self.value(t)
    }
}

/// How a lateral facet of one element enters the local equations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FacetRole {
    Interior,
    Periodic,
    FreeSurface,
    Neumann,
}

impl From<FacetKind> for FacetRole {
    fn from(kind: FacetKind) -> Self {
        match kind {
            FacetKind::Interior => FacetRole::Interior,
            FacetKind::Periodic => FacetRole::Periodic,
            FacetKind::FreeSurface => FacetRole::FreeSurface,
            FacetKind::Neumann(_) => FacetRole::Neumann,
        }
    }
}

/// Slab-independent discretisation parameters of the local problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalParams {
    pub p: usize,
    pub tau: f64,
    pub alpha: f64,
    pub dt: f64,
    /// Extra Gauss points in time on top of `p + 2`.
    pub time_quad_extra: usize,
}

impl LocalParams {
    pub fn time_points(&self) -> usize {
        self.p + 2 + self.time_quad_extra
    }
}

/// Reference bases, quadrature rules and tabulations shared by all prisms
/// of a given degree.
#[derive(Debug, Clone)]
pub struct LocalSpaces {
    pub p: usize,
    pub prism: ReferenceBasis,
    pub facet: ReferenceBasis,
    pub tri: ReferenceBasis,
    pub prism_rule: QuadratureRule,
    prism_tab: Tabulation,
    /// Facet rule on `[-1, 1]^2`, coordinates `(s, tau)`.
    pub facet_rule: QuadratureRule,
    facet_tab: Tabulation,
    /// Prism basis at the facet rule mapped onto each local edge.
    edge_prism_tabs: [Tabulation; 3],
    tri_rule: QuadratureRule,
    /// Prism basis on the bottom and top faces at the triangle rule points.
    bottom_tab: DMatrix<f64>,
    top_tab: DMatrix<f64>,
    /// Triangle basis at the triangle rule points.
    tri_tab: DMatrix<f64>,
    /// Gauss rule along an edge.
    edge_nodes: Vec<f64>,
    edge_weights: Vec<f64>,
    /// `L_j(-1)` and `L_j(1)`.
    time_bottom: Vec<f64>,
    time_top: Vec<f64>,
}

/// Reference coordinates of local edge `k` at local parameter `s`.
pub fn edge_reference_point(k: usize, s: f64) -> [f64; 2] {
    const V: [[f64; 2]; 3] = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
    let a = V[k];
    let b = V[(k + 1) % 3];
    let l = 0.5 * (1.0 - s);
    let r = 0.5 * (1.0 + s);
    [l * a[0] + r * b[0], l * a[1] + r * b[1]]
}

impl LocalSpaces {
    pub fn new(p: usize, time_points: usize) -> Result<Self, HdgError> {
        let prism = make_basis(SpaceKind::PrismPP, p)?;
        let facet = make_basis(SpaceKind::FacetQ, p)?;
        let tri = make_basis(SpaceKind::TriP, p)?;
        let prism_rule = prism_rule(2 * p + 2, time_points)?;
        let prism_tab = prism.tabulate(&prism_rule.points);
        let facet_rule = crate::quadrature::facet_rule(p + 2, time_points);
        let facet_tab = facet.tabulate(&facet_rule.points);
        let edge_prism_tabs = [0, 1, 2].map(|k| {
            let pts: Vec<[f64; 3]> = facet_rule
                .points
                .iter()
                .map(|x| {
                    let r = edge_reference_point(k, x[0]);
                    [r[0], r[1], x[1]]
                })
                .collect();
            prism.tabulate(&pts)
        });
        let tri_rule = triangle_rule(2 * p + 2)?;
        let at_time = |tau: f64| {
            let pts: Vec<[f64; 3]> = tri_rule.points.iter().map(|x| [x[0], x[1], tau]).collect();
            prism.tabulate(&pts).values
        };
        let bottom_tab = at_time(-1.0);
        let top_tab = at_time(1.0);
        let tri_tab = tri.tabulate(&tri_rule.points).values;
        let (edge_nodes, edge_weights) = gauss_legendre(p + 2);
        Ok(Self {
            p,
            prism,
            facet,
            tri,
            prism_rule,
            prism_tab,
            facet_rule,
            facet_tab,
            edge_prism_tabs,
            tri_rule,
            bottom_tab,
            top_tab,
            tri_tab,
            edge_nodes,
            edge_weights,
            time_bottom: legendre(p, -1.0),
            time_top: legendre(p, 1.0),
        })
    }

    /// `dim P_p(K) x P_p(I)`.
    pub fn n_w(&self) -> usize {
        self.prism.dim()
    }

    /// `dim Q_p` on one facet.
    pub fn n_m(&self) -> usize {
        self.facet.dim()
    }

    pub fn n_tri(&self) -> usize {
        self.tri.dim()
    }

    pub fn n_element(&self) -> usize {
        3 * self.n_w()
    }

    pub fn n_facets(&self) -> usize {
        3 * self.n_m()
    }

    pub fn triangle_rule(&self) -> &QuadratureRule {
        &self.tri_rule
    }

    pub fn time_top(&self) -> &[f64] {
        &self.time_top
    }

    pub fn time_bottom(&self) -> &[f64] {
        &self.time_bottom
    }

    pub fn edge_rule(&self) -> (&[f64], &[f64]) {
        (&self.edge_nodes, &self.edge_weights)
    }

    /// Prism basis at [`Self::prism_rule`] (reference derivatives).
    pub fn prism_tabulation(&self) -> &Tabulation {
        &self.prism_tab
    }

    /// Facet basis at [`Self::facet_rule`].
    pub fn facet_tabulation(&self) -> &Tabulation {
        &self.facet_tab
    }

    /// Prism basis at the facet rule placed on local edge `k`.
    pub fn edge_tabulation(&self, k: usize) -> &Tabulation {
        &self.edge_prism_tabs[k]
    }

    /// Prism basis on the bottom (`tau = -1`) and top (`tau = 1`) faces at
    /// the triangle rule points.
    pub fn face_tabulations(&self) -> (&DMatrix<f64>, &DMatrix<f64>) {
        (&self.bottom_tab, &self.top_tab)
    }

    /// Triangle basis at the triangle rule points.
    pub fn triangle_tabulation(&self) -> &DMatrix<f64> {
        &self.tri_tab
    }
}

/// Sign pattern mapping local-edge facet coefficients to the canonical
/// orientation: reversing `s` multiplies `L_l(s)` by `(-1)^l`.
pub fn facet_signs(p: usize, flipped: bool) -> Vec<f64> {
    let mut s = Vec::with_capacity((p + 1) * (p + 1));
    for l in 0..=p {
        let sign = if flipped && l % 2 == 1 { -1.0 } else { 1.0 };
        s.extend(std::iter::repeat_n(sign, p + 1));
    }
    s
}

/// Uncondensed local blocks and the condensed operator of one prism.
#[derive(Debug, Clone)]
pub struct ElementOperator {
    pub a_ee: DMatrix<f64>,
    pub a_ef: DMatrix<f64>,
    pub a_fe: DMatrix<f64>,
    pub a_ff: DMatrix<f64>,
    /// `A_ee^{-1}`
    pub ainv: DMatrix<f64>,
    /// `A_ee^{-1} A_ef`
    pub x: DMatrix<f64>,
    /// `A_fe A_ee^{-1}`
    pub y: DMatrix<f64>,
    /// `A_ff - A_fe A_ee^{-1} A_ef`
    pub schur: DMatrix<f64>,
    /// Smallest absolute pivot of the LU factorisation of `A_ee`.
    pub min_pivot: f64,
}

fn weighted(tab: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let mut m = tab.clone();
    for (q, wq) in w.iter().enumerate() {
        m.column_mut(q).scale_mut(*wq);
    }
    m
}

/// Local matrices before condensation.
pub fn assemble_blocks(
    spaces: &LocalSpaces,
    geom: &PrismGeometry,
    params: &LocalParams,
    roles: [FacetRole; 3],
) -> Result<[DMatrix<f64>; 4], HdgError> {
    if !(params.tau > 0.0) {
        return Err(HdgError::NonPositiveTau(params.tau));
    }
    let nw = spaces.n_w();
    let nm = spaces.n_m();
    let ne = 3 * nw;
    let nf = 3 * nm;
    let dt = params.dt;
    let alpha = params.alpha;
    let tau = params.tau;
    let det = geom.det();
    let inv = geom.inverse_jacobian()?;
    let f_at = |tau_ref: f64| (-alpha * 0.5 * (tau_ref + 1.0) * dt).exp();

    let mut a_ee = DMatrix::zeros(ne, ne);
    let mut a_ef = DMatrix::zeros(ne, nf);
    let mut a_fe = DMatrix::zeros(nf, ne);
    let mut a_ff = DMatrix::zeros(nf, nf);

    // Volume terms.
    let rule = &spaces.prism_rule;
    let tab = &spaces.prism_tab;
    let phi = &tab.values;
    let dx = &tab.derivs[0] * inv[0][0] + &tab.derivs[1] * inv[1][0];
    let dy = &tab.derivs[0] * inv[0][1] + &tab.derivs[1] * inv[1][1];
    let dtm = &tab.derivs[2] * (2.0 / dt);
    let vol = det.abs() * 0.5 * dt;
    let wf: Vec<f64> = rule
        .points
        .iter()
        .zip(&rule.weights)
        .map(|(x, w)| w * vol * f_at(x[2]))
        .collect();
    let phi_w = weighted(phi, &wf);
    // -(q, f dt r) + alpha (q, r f)
    let mut m_t = -(weighted(&dtm, &wf) * phi.transpose()) + alpha * (&phi_w * phi.transpose());
    // <q, r f> at the top face.
    let tri = &spaces.tri_rule;
    let f_top = f_at(1.0);
    let wt: Vec<f64> = tri.weights.iter().map(|w| w * det.abs() * f_top).collect();
    m_t += weighted(&spaces.top_tab, &wt) * spaces.top_tab.transpose();
    // (v, f div r) for each component.
    let b1 = weighted(&dx, &wf) * phi.transpose();
    let b2 = weighted(&dy, &wf) * phi.transpose();
    a_ee.view_mut((0, 0), (nw, nw)).copy_from(&m_t);
    a_ee.view_mut((nw, nw), (nw, nw)).copy_from(&m_t);
    a_ee.view_mut((0, 2 * nw), (nw, nw)).copy_from(&b1);
    a_ee.view_mut((nw, 2 * nw), (nw, nw)).copy_from(&b2);
    a_ee.view_mut((2 * nw, 0), (nw, nw))
        .copy_from(&(-b1.transpose()));
    a_ee.view_mut((2 * nw, nw), (nw, nw))
        .copy_from(&(-b2.transpose()));

    // Lateral facet terms.
    let frule = &spaces.facet_rule;
    let mu = &spaces.facet_tab.values;
    for k in 0..3 {
        let a = geom.vertices[k];
        let b = geom.vertices[(k + 1) % 3];
        let d = [b[0] - a[0], b[1] - a[1]];
        let len = (d[0] * d[0] + d[1] * d[1]).sqrt();
        let sign = det.signum();
        let n = [sign * d[1] / len, -sign * d[0] / len];
        let area = 0.25 * len * dt;
        let w: Vec<f64> = frule
            .points
            .iter()
            .zip(&frule.weights)
            .map(|(x, wq)| wq * area * f_at(x[1]))
            .collect();
        let psi = &spaces.edge_prism_tabs[k].values;
        let psi_w = weighted(psi, &w);
        let mu_w = weighted(mu, &w);
        let pp = &psi_w * psi.transpose();
        let pm = &psi_w * mu.transpose();
        let mm = &mu_w * mu.transpose();
        let fo = k * nm;
        // q rows: -<lambda, r.n f>
        for c in 0..2 {
            a_ef.view_mut((c * nw, fo), (nw, nm))
                .copy_from(&(&pm * (-n[c])));
            a_fe.view_mut((fo, c * nw), (nm, nw))
                .copy_from(&(pm.transpose() * n[c]));
        }
        // v rows: <tau (v - lambda), w f>
        let mut vv = a_ee.view_mut((2 * nw, 2 * nw), (nw, nw));
        vv += &pp * tau;
        a_ef.view_mut((2 * nw, fo), (nw, nm))
            .copy_from(&(&pm * (-tau)));
        // lambda rows: <q.n - tau (v - lambda), mu f>
        a_fe.view_mut((fo, 2 * nw), (nm, nw))
            .copy_from(&(pm.transpose() * (-tau)));
        let mut ff = a_ff.view_mut((fo, fo), (nm, nm));
        ff += &mm * tau;
        if roles[k] == FacetRole::FreeSurface {
            ff += surface_matrix(spaces, len, dt, alpha);
        }
    }
    Ok([a_ee, a_ef, a_fe, a_ff])
}

/// `-<lambda, f dt mu> - <lambda, mu f'> + <<lambda, mu f>>(t_{n+1})` on a
/// free-surface facet of length `len`; rows are test functions.
pub fn surface_matrix(spaces: &LocalSpaces, len: f64, dt: f64, alpha: f64) -> DMatrix<f64> {
    let frule = &spaces.facet_rule;
    let tab = &spaces.facet_tab;
    let f_at = |tau_ref: f64| (-alpha * 0.5 * (tau_ref + 1.0) * dt).exp();
    let area = 0.25 * len * dt;
    let w: Vec<f64> = frule
        .points
        .iter()
        .zip(&frule.weights)
        .map(|(x, wq)| wq * area * f_at(x[1]))
        .collect();
    let mu = &tab.values;
    let dmu = &tab.derivs[1] * (2.0 / dt);
    let mut m =
        -(weighted(&dmu, &w) * mu.transpose()) + alpha * (weighted(mu, &w) * mu.transpose());
    // Top edge: orthonormal Legendre in s, so the spatial factor is (len/2) delta.
    let p = spaces.p;
    let f_top = f_at(1.0);
    for l in 0..=p {
        for j in 0..=p {
            for jj in 0..=p {
                m[(l * (p + 1) + j, l * (p + 1) + jj)] +=
                    0.5 * len * f_top * spaces.time_top[j] * spaces.time_top[jj];
            }
        }
    }
    m
}

impl ElementOperator {
    pub fn condense(blocks: [DMatrix<f64>; 4], element: usize) -> Result<Self, HdgError> {
        let [a_ee, a_ef, a_fe, a_ff] = blocks;
        let lu = a_ee.clone().lu();
        let u = lu.u();
        let scale = a_ee.amax();
        let min_pivot = u
            .diagonal()
            .iter()
            .map(|d| d.abs())
            .fold(f64::INFINITY, f64::min);
        if !(min_pivot > 1e-13 * scale) {
            return Err(HdgError::SingularElement {
                element,
                pivot: min_pivot,
            });
        }
        let ainv = lu.try_inverse().ok_or(HdgError::SingularElement {
            element,
            pivot: min_pivot,
        })?;
        let x = &ainv * &a_ef;
        let y = &a_fe * &ainv;
        let schur = &a_ff - &a_fe * &x;
        Ok(Self {
            a_ee,
            a_ef,
            a_fe,
            a_ff,
            ainv,
            x,
            y,
            schur,
            min_pivot,
        })
    }

    /// Assembles and condenses in one step.
    pub fn assemble(
        spaces: &LocalSpaces,
        geom: &PrismGeometry,
        params: &LocalParams,
        roles: [FacetRole; 3],
        element: usize,
    ) -> Result<Self, HdgError> {
        Self::condense(assemble_blocks(spaces, geom, params, roles)?, element)
    }

    pub fn n_element(&self) -> usize {
        self.a_ee.nrows()
    }

    pub fn n_facets(&self) -> usize {
        self.a_ff.nrows()
    }

    /// Condensed right-hand side `-A_fe A_ee^{-1} b_e`.
    pub fn reduced_rhs(&self, b_e: &DVector<f64>) -> DVector<f64> {
        -(&self.y * b_e)
    }

    /// `(q, v) = A_ee^{-1} (b_e - A_ef lambda)`.
    pub fn back_substitute(
        &self,
        b_e: &DVector<f64>,
        lambda: &DVector<f64>,
    ) -> Result<DVector<f64>, HdgError> {
        if lambda.len() != self.n_facets() {
            return Err(HdgError::DimensionMismatch {
                expected: self.n_facets(),
                got: lambda.len(),
            });
        }
        if b_e.len() != self.n_element() {
            return Err(HdgError::DimensionMismatch {
                expected: self.n_element(),
                got: b_e.len(),
            });
        }
        Ok(&self.ainv * b_e - &self.x * lambda)
    }
}

/// `<q^-, r f_n>` at `t_n` for `q^-` given by triangle-basis coefficients of
/// each component on this element.
pub fn element_load(spaces: &LocalSpaces, det: f64, q_prev: [&[f64]; 2]) -> DVector<f64> {
    let nw = spaces.n_w();
    let tri = &spaces.tri_rule;
    let mut b = DVector::zeros(3 * nw);
    for (c, coeffs) in q_prev.iter().enumerate() {
        let vals = spaces.tri_tab.transpose() * DVector::from_column_slice(coeffs);
        let w: Vec<f64> = tri
            .weights
            .iter()
            .zip(vals.iter())
            .map(|(w, v)| w * det.abs() * v)
            .collect();
        let col = &spaces.bottom_tab * DVector::from_vec(w);
        b.rows_mut(c * nw, nw).copy_from(&col);
    }
    b
}

/// `<<lambda^-, mu f_n>>` at `t_n` on a surface facet, with `lambda^-` given
/// by Legendre coefficients in the canonical edge parameter.
pub fn surface_load(spaces: &LocalSpaces, len: f64, lambda_prev: &[f64]) -> DVector<f64> {
    let p = spaces.p;
    let mut b = DVector::zeros(spaces.n_m());
    for l in 0..=p {
        for j in 0..=p {
            b[l * (p + 1) + j] = 0.5 * len * lambda_prev[l] * spaces.time_bottom[j];
        }
    }
    b
}

/// `<g, mu f_n>` on a facet; `g` receives the canonical parameter point
/// `(s, t)` and returns the prescribed `q . n`.
pub fn neumann_load<G: Fn(f64, f64) -> f64>(
    spaces: &LocalSpaces,
    len: f64,
    t_n: f64,
    dt: f64,
    alpha: f64,
    g: G,
) -> DVector<f64> {
    let rule = &spaces.facet_rule;
    let area = 0.25 * len * dt;
    let w: Vec<f64> = rule
        .points
        .iter()
        .zip(&rule.weights)
        .map(|(x, wq)| {
            let t = t_n + 0.5 * (x[1] + 1.0) * dt;
            wq * area * (-alpha * (t - t_n)).exp() * g(x[0], t)
        })
        .collect();
    &spaces.facet_tab.values * DVector::from_vec(w)
}

/// Spatial coefficients of `q(t_{n+1})` from the prism coefficients of one component.
pub fn top_trace(spaces: &LocalSpaces, coeffs: &[f64]) -> Vec<f64> {
    time_slice(spaces.p, coeffs, &spaces.time_top)
}

/// Contracts the time index of tensor coefficients against `L_j` values.
pub fn time_slice(p: usize, coeffs: &[f64], time_values: &[f64]) -> Vec<f64> {
    coeffs
        .chunks(p + 1)
        .map(|c| c.iter().zip(time_values).map(|(a, b)| a * b).sum())
        .collect()
}

type CacheKey = ([i64; 4], [bool; 3]);

fn cache_key(geom: &PrismGeometry, roles: &[FacetRole; 3]) -> CacheKey {
    let j = geom.jacobian();
    let q = |v: f64| (v * (1u64 << 40) as f64).round() as i64;
    (
        [q(j[0][0]), q(j[0][1]), q(j[1][0]), q(j[1][1])],
        roles.map(|r| r == FacetRole::FreeSurface),
    )
}

/// Condensed operators shared between congruent prisms. The local matrices
/// depend on the element only through its Jacobian and which facets lie on
/// the free surface.
#[derive(Debug)]
pub struct OperatorCache {
    pub spaces: Arc<LocalSpaces>,
    pub params: LocalParams,
    ops: HashMap<CacheKey, Arc<ElementOperator>>,
}

impl OperatorCache {
    pub fn new(params: LocalParams) -> Result<Self, HdgError> {
        let spaces = Arc::new(LocalSpaces::new(params.p, params.time_points())?);
        Ok(Self {
            spaces,
            params,
            ops: HashMap::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    /// Operators for every element, computing unseen shapes in parallel.
    pub fn operators(
        &mut self,
        elements: &[(PrismGeometry, [FacetRole; 3])],
    ) -> Result<Vec<Arc<ElementOperator>>, HdgError> {
        let keys: Vec<CacheKey> = elements.iter().map(|(g, r)| cache_key(g, r)).collect();
        let mut missing: Vec<(CacheKey, usize)> = Vec::new();
        for (i, k) in keys.iter().enumerate() {
            if !self.ops.contains_key(k) && !missing.iter().any(|(m, _)| m == k) {
                missing.push((*k, i));
            }
        }
        let spaces = &self.spaces;
        let params = &self.params;
        let built: Vec<(CacheKey, ElementOperator)> = missing
            .par_iter()
            .map(|(k, i)| {
                let (g, r) = &elements[*i];
                ElementOperator::assemble(spaces, g, params, *r, *i).map(|op| (*k, op))
            })
            .collect::<Result<_, _>>()?;
        for (k, op) in built {
            self.ops.insert(k, Arc::new(op));
        }
        Ok(keys.iter().map(|k| Arc::clone(&self.ops[k])).collect())
    }
}
