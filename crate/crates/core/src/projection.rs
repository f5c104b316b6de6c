//! The tailored space-time projection `Pi_h = (Pi_V, Pi_W)` and weighted
//! `L2` projections, used to check solvability and approximation orders.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::basis::{make_basis, PrismGeometry, ReferenceBasis, SpaceKind, Tabulation};
use crate::error::{HdgError, ProjectionError};
use crate::hdg_local::{edge_reference_point, WeightFn};
use crate::quadrature::{facet_rule, prism_rule, QuadratureRule};
use crate::report::{observed_order, periodic_mesh};
use crate::waves::HarmonicWave;

/// Exact vector field `q(x, t)`.
pub type VectorField<'a> = &'a (dyn Fn([f64; 2], f64) -> [f64; 2] + Sync);
/// Exact scalar field `v(x, t)`.
pub type ScalarField<'a> = &'a (dyn Fn([f64; 2], f64) -> f64 + Sync);

/// Reference point to physical `(x, t)`.
type PointMap = Box<dyn Fn([f64; 3]) -> ([f64; 2], f64)>;

/// Coefficients of `(Pi_V q, Pi_W v)` in the prism basis.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedPair {
    pub q1: DVector<f64>,
    pub q2: DVector<f64>,
    pub v: DVector<f64>,
}

impl ProjectedPair {
    fn stacked(&self) -> DVector<f64> {
        let n = self.v.len();
        let mut x = DVector::zeros(3 * n);
        x.rows_mut(0, n).copy_from(&self.q1);
        x.rows_mut(n, n).copy_from(&self.q2);
        x.rows_mut(2 * n, n).copy_from(&self.v);
        x
    }

    fn from_stacked(x: &DVector<f64>) -> Self {
        let n = x.len() / 3;
        Self {
            q1: x.rows(0, n).into_owned(),
            q2: x.rows(n, n).into_owned(),
            v: x.rows(2 * n, n).into_owned(),
        }
    }
}

/// Reference tabulations shared by every element of one degree.
#[derive(Debug, Clone)]
pub struct ProjectionSpaces {
    p: usize,
    rule: QuadratureRule,
    full: Tabulation,
    tilde: Tabulation,
    frule: QuadratureRule,
    sigma: Tabulation,
    /// Prism basis on the points of each lateral facet.
    facet_full: [Tabulation; 3],
}

impl ProjectionSpaces {
    /// Quadrature exact to degree `2p + 6` in space and `2p + 7` in time.
    pub fn new(p: usize) -> Result<Self, HdgError> {
        let full_b: ReferenceBasis = make_basis(SpaceKind::PrismPP, p)?;
        let tilde_b = make_basis(SpaceKind::PrismTildeW, p)?;
        let sigma_b = make_basis(SpaceKind::FacetQ, p)?;
        let rule = prism_rule(2 * p + 6, p + 4)?;
        let frule = facet_rule(p + 4, p + 4);
        let facet_full = [0, 1, 2].map(|k| {
            let pts: Vec<[f64; 3]> = frule
                .points
                .iter()
                .map(|x| {
                    let r = edge_reference_point(k, x[0]);
                    [r[0], r[1], x[1]]
                })
                .collect();
            full_b.tabulate(&pts)
        });
        Ok(Self {
            p,
            full: full_b.tabulate(&rule.points),
            tilde: tilde_b.tabulate(&rule.points),
            sigma: sigma_b.tabulate(&frule.points),
            rule,
            frule,
            facet_full,
        })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn n_w(&self) -> usize {
        self.full.values.nrows()
    }

    pub fn n_tilde(&self) -> usize {
        self.tilde.values.nrows()
    }

    pub fn n_m(&self) -> usize {
        self.sigma.values.nrows()
    }

    /// Number of unknowns, `3 dim W_h(K)`.
    pub fn n_unknowns(&self) -> usize {
        3 * self.n_w()
    }

    /// Number of equations: two `V~` blocks, one `W~` block, three facets.
    pub fn n_equations(&self) -> usize {
        3 * self.n_tilde() + 3 * self.n_m()
    }
}

/// `(3/2)(p+1)^2(p+2)`.
pub fn projection_system_size(p: usize) -> usize {
    3 * (p + 1) * (p + 1) * (p + 2) / 2
}

/// The square local system defining `Pi_h` on one prism.
#[derive(Debug, Clone)]
pub struct ProjectionSystem<'a> {
    spaces: &'a ProjectionSpaces,
    geom: PrismGeometry,
    tau: f64,
    weight: WeightFn,
    normals: [[f64; 2]; 3],
    lengths: [f64; 3],
    pub matrix: DMatrix<f64>,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl<'a> ProjectionSystem<'a> {
    pub fn new(
        spaces: &'a ProjectionSpaces,
        geom: PrismGeometry,
        tau: f64,
        alpha: f64,
    ) -> Result<Self, HdgError> {
        if !(tau > 0.0) {
            return Err(HdgError::NonPositiveTau(tau));
        }
        let weight = WeightFn::new(alpha, geom.t_start);
        let mut normals = [[0.0; 2]; 3];
        let mut lengths = [0.0; 3];
        for k in 0..3 {
            let a = geom.vertices[k];
            let b = geom.vertices[(k + 1) % 3];
            let d = [b[0] - a[0], b[1] - a[1]];
            lengths[k] = d[0].hypot(d[1]);
            normals[k] = [d[1] / lengths[k], -d[0] / lengths[k]];
        }
        let mut sys = Self {
            spaces,
            geom,
            tau,
            weight,
            normals,
            lengths,
            matrix: DMatrix::zeros(0, 0),
            lu: DMatrix::<f64>::zeros(0, 0).lu(),
        };
        let n = spaces.n_unknowns();
        let mut a = DMatrix::zeros(spaces.n_equations(), n);
        for j in 0..spaces.n_w() {
            let mut col = DVector::zeros(n);
            for c in 0..3 {
                col.fill(0.0);
                col[c * spaces.n_w() + j] = 1.0;
                let pair = ProjectedPair::from_stacked(&col);
                let r = sys.apply_polynomial(&pair);
                a.set_column(c * spaces.n_w() + j, &r);
            }
        }
        let lu = a.clone().lu();
        let min_pivot = lu
            .u()
            .diagonal()
            .iter()
            .fold(f64::INFINITY, |m, d| m.min(d.abs()));
        let scale = a.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if !(min_pivot > 1e-13 * scale) {
            return Err(HdgError::SingularElement {
                element: 0,
                pivot: min_pivot,
            });
        }
        sys.matrix = a;
        sys.lu = lu;
        Ok(sys)
    }

    fn volume_factor(&self) -> f64 {
        self.geom.det().abs() * 0.5 * self.geom.dt
    }

    /// All equation rows evaluated with a discrete pair in place of the
    /// exact fields.
    fn apply_polynomial(&self, pair: &ProjectedPair) -> DVector<f64> {
        let s = self.spaces;
        let q1 = s.full.values.tr_mul(&pair.q1);
        let q2 = s.full.values.tr_mul(&pair.q2);
        let v = s.full.values.tr_mul(&pair.v);
        let fq: Vec<([f64; 2], f64)> = (0..q1.len()).map(|i| ([q1[i], q2[i]], v[i])).collect();
        let mut facet_vals = Vec::with_capacity(3);
        for k in 0..3 {
            let t = &s.facet_full[k].values;
            let a = t.tr_mul(&pair.q1);
            let b = t.tr_mul(&pair.q2);
            let c = t.tr_mul(&pair.v);
            facet_vals.push(
                (0..a.len())
                    .map(|i| ([a[i], b[i]], c[i]))
                    .collect::<Vec<_>>(),
            );
        }
        self.rows_from_samples(&fq, &facet_vals)
    }

    fn rows_from_samples(
        &self,
        interior: &[([f64; 2], f64)],
        facets: &[Vec<([f64; 2], f64)>],
    ) -> DVector<f64> {
        let s = self.spaces;
        let nt = s.n_tilde();
        let nm = s.n_m();
        let mut r = DVector::zeros(s.n_equations());
        let vol = self.volume_factor();
        for (i, (x, w)) in s.rule.points.iter().zip(&s.rule.weights).enumerate() {
            let (_, t) = self.geom.to_physical(*x);
            let wf = w * vol * self.weight.value(t);
            let (q, v) = interior[i];
            for a in 0..nt {
                let z = s.tilde.values[(a, i)] * wf;
                r[a] += q[0] * z;
                r[nt + a] += q[1] * z;
                r[2 * nt + a] += v * z;
            }
        }
        for k in 0..3 {
            let n = self.normals[k];
            let jac = 0.25 * self.lengths[k] * self.geom.dt;
            let off = 3 * nt + k * nm;
            for (i, (x, w)) in s.frule.points.iter().zip(&s.frule.weights).enumerate() {
                let t = self.geom.t_start + 0.5 * (x[1] + 1.0) * self.geom.dt;
                let (q, v) = facets[k][i];
                let g = (q[0] * n[0] + q[1] * n[1] - self.tau * v) * w * jac * self.weight.value(t);
                for l in 0..nm {
                    r[off + l] += g * s.sigma.values[(l, i)];
                }
            }
        }
        r
    }

    /// Right-hand side of the defining equations for exact fields.
    pub fn rhs(&self, q: VectorField, v: ScalarField) -> DVector<f64> {
        let s = self.spaces;
        let interior: Vec<([f64; 2], f64)> = s
            .rule
            .points
            .iter()
            .map(|x| {
                let (xp, t) = self.geom.to_physical(*x);
                (q(xp, t), v(xp, t))
            })
            .collect();
        let facets: Vec<Vec<([f64; 2], f64)>> = (0..3)
            .map(|k| {
                s.frule
                    .points
                    .iter()
                    .map(|x| {
                        let r = edge_reference_point(k, x[0]);
                        let (xp, t) = self.geom.to_physical([r[0], r[1], x[1]]);
                        (q(xp, t), v(xp, t))
                    })
                    .collect()
            })
            .collect();
        self.rows_from_samples(&interior, &facets)
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> ProjectedPair {
        let x = self
            .lu
            .solve(rhs)
            .expect("projection matrix checked nonsingular");
        ProjectedPair::from_stacked(&x)
    }

    /// `|A x - b| / |b|` (or `|A x|` when `b = 0`).
    pub fn relative_residual(&self, pair: &ProjectedPair, rhs: &DVector<f64>) -> f64 {
        let r = &self.matrix * pair.stacked() - rhs;
        let b = rhs.norm();
        if b > 0.0 {
            r.norm() / b
        } else {
            r.norm()
        }
    }

    /// `Pi_h` applied to a discrete pair.
    pub fn reproject(&self, pair: &ProjectedPair) -> ProjectedPair {
        self.solve(&self.apply_polynomial(pair))
    }

    /// `||q - q_h||_{f_n, K}` for a discrete `q_h`.
    pub fn weighted_q_error(&self, q: VectorField, pair: &ProjectedPair) -> f64 {
        let s = self.spaces;
        let q1 = s.full.values.tr_mul(&pair.q1);
        let q2 = s.full.values.tr_mul(&pair.q2);
        let vol = self.volume_factor();
        let mut sum = 0.0;
        for (i, (x, w)) in s.rule.points.iter().zip(&s.rule.weights).enumerate() {
            let (xp, t) = self.geom.to_physical(*x);
            let e = q(xp, t);
            sum +=
                w * vol * self.weight.value(t) * ((e[0] - q1[i]).powi(2) + (e[1] - q2[i]).powi(2));
        }
        sum.sqrt()
    }
}

/// `Pi_h (q, v)` on one prism.
pub fn project_element(
    spaces: &ProjectionSpaces,
    geom: PrismGeometry,
    tau: f64,
    alpha: f64,
    q: VectorField,
    v: ScalarField,
) -> Result<ProjectedPair, HdgError> {
    let sys = ProjectionSystem::new(spaces, geom, tau, alpha)?;
    Ok(sys.solve(&sys.rhs(q, v)))
}

/// Where a weighted projection lives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProjectionTarget {
    Prism(PrismGeometry),
    /// Lateral facet over the segment `a -> b` and `[t_start, t_start + dt]`.
    Facet {
        a: [f64; 2],
        b: [f64; 2],
        t_start: f64,
        dt: f64,
    },
}

/// `f_n`-weighted `L2` projection onto `PrismPP`, `PrismTildeW` (prism
/// targets) or `FacetQ` (facet targets); returns basis coefficients.
pub fn weighted_l2_project(
    kind: SpaceKind,
    p: usize,
    target: ProjectionTarget,
    alpha: f64,
    f: ScalarField,
) -> Result<DVector<f64>, HdgError> {
    let basis = make_basis(kind, p)?;
    let (points, weights, t_start, map): (Vec<[f64; 3]>, Vec<f64>, f64, PointMap) =
        match (kind, target) {
            (SpaceKind::PrismPP | SpaceKind::PrismTildeW, ProjectionTarget::Prism(g)) => {
                let r = prism_rule(2 * p + 6, p + 4)?;
                let vol = g.det().abs() * 0.5 * g.dt;
                let w = r.weights.iter().map(|w| w * vol).collect();
                (r.points, w, g.t_start, Box::new(move |x| g.to_physical(x)))
            }
            (SpaceKind::FacetQ, ProjectionTarget::Facet { a, b, t_start, dt }) => {
                let r = facet_rule(p + 4, p + 4);
                let len = (b[0] - a[0]).hypot(b[1] - a[1]);
                let w = r.weights.iter().map(|w| w * 0.25 * len * dt).collect();
                (
                    r.points,
                    w,
                    t_start,
                    Box::new(move |x: [f64; 3]| {
                        let s = x[0];
                        (
                            [
                                0.5 * (1.0 - s) * a[0] + 0.5 * (1.0 + s) * b[0],
                                0.5 * (1.0 - s) * a[1] + 0.5 * (1.0 + s) * b[1],
                            ],
                            t_start + 0.5 * (x[1] + 1.0) * dt,
                        )
                    }),
                )
            }
            _ => {
                return Err(HdgError::DimensionMismatch {
                    expected: 0,
                    got: basis.dim(),
                })
            }
        };
    let weight = WeightFn::new(alpha, t_start);
    let tab = basis.tabulate(&points);
    let n = basis.dim();
    let mut m = DMatrix::zeros(n, n);
    let mut rhs = DVector::zeros(n);
    for (i, x) in points.iter().enumerate() {
        let (xp, t) = map(*x);
        let wf = weights[i] * weight.value(t);
        let fx = f(xp, t);
        for a in 0..n {
            let ua = tab.values[(a, i)] * wf;
            rhs[a] += ua * fx;
            for b in 0..n {
                m[(a, b)] += ua * tab.values[(b, i)];
            }
        }
    }
    Ok(m.lu()
        .solve(&rhs)
        .expect("weighted mass matrix is positive definite"))
}

/// Settings of [`measure_projection_rates`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateStudy {
    pub p: usize,
    pub tau: f64,
    pub alpha: f64,
    /// Cells per side of the periodic meshes in the `h` sweep.
    pub h_levels: Vec<usize>,
    /// Single-slab time step of the `h` sweep.
    pub h_dt: f64,
    /// Time steps of the `dt` sweep, covering `[0, dt_window]`.
    pub dt_levels: Vec<f64>,
    /// Side of the square cell (two triangles) used in the `dt` sweep.
    pub dt_cell: f64,
    pub dt_window: f64,
}

impl RateStudy {
    pub fn standard(p: usize) -> Self {
        Self {
            p,
            tau: 5.0,
            alpha: 0.1,
            h_levels: vec![3, 6, 12, 24],
            h_dt: 1e-3,
            dt_levels: vec![0.5, 0.25, 0.125, 0.0625],
            dt_cell: 1e-3,
            dt_window: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RateDirection {
    H,
    Dt,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateRow {
    pub direction: RateDirection,
    pub level: usize,
    pub h: f64,
    pub dt: f64,
    pub error: f64,
    pub order: Option<f64>,
}

/// `sqrt(sum ||q - Pi_V q||^2_{f_n,K})` over the given triangles and the
/// slabs covering `[0, window]`.
#[allow(clippy::too_many_arguments)]
pub fn projection_error(
    spaces: &ProjectionSpaces,
    triangles: &[[[f64; 2]; 3]],
    dt: f64,
    window: f64,
    tau: f64,
    alpha: f64,
    q: VectorField,
    v: ScalarField,
) -> Result<f64, HdgError> {
    let slabs = (window / dt).round().max(1.0) as usize;
    let nt = triangles.len();
    let sum: Result<f64, HdgError> = (0..slabs * nt)
        .into_par_iter()
        .map(|i| {
            let g = PrismGeometry::new(triangles[i % nt], (i / nt) as f64 * dt, dt);
            let sys = ProjectionSystem::new(spaces, g, tau, alpha)?;
            let pair = sys.solve(&sys.rhs(q, v));
            Ok(sys.weighted_q_error(q, &pair).powi(2))
        })
        .sum();
    Ok(sum?.sqrt())
}

/// Observed orders of `q - Pi_V q` for the harmonic wave under `h`
/// refinement of the periodic mesh (one short slab) and `dt` refinement on
/// one small cell over a fixed window.
pub fn measure_projection_rates(
    wave: &HarmonicWave,
    study: &RateStudy,
) -> Result<Vec<RateRow>, ProjectionError> {
    let spaces = ProjectionSpaces::new(study.p)?;
    let q = |x: [f64; 2], t: f64| wave.fields(x, t).q;
    let v = |x: [f64; 2], t: f64| wave.fields(x, t).v;
    let mut rows = Vec::new();
    for (level, &n) in study.h_levels.iter().enumerate() {
        let mesh = periodic_mesh(n)?;
        let tris: Vec<_> = (0..mesh.num_triangles())
            .map(|e| mesh.triangle_vertices(e))
            .collect();
        let error = projection_error(
            &spaces,
            &tris,
            study.h_dt,
            study.h_dt,
            study.tau,
            study.alpha,
            &q,
            &v,
        )?;
        rows.push(RateRow {
            direction: RateDirection::H,
            level,
            h: mesh.mesh_size(),
            dt: study.h_dt,
            error,
            order: None,
        });
    }
    let (x0, y0, c) = (0.1, -0.2, study.dt_cell);
    let cell = [
        [[x0, y0], [x0 + c, y0], [x0 + c, y0 + c]],
        [[x0, y0], [x0 + c, y0 + c], [x0, y0 + c]],
    ];
    for (level, &dt) in study.dt_levels.iter().enumerate() {
        let error = projection_error(
            &spaces,
            &cell,
            dt,
            study.dt_window,
            study.tau,
            study.alpha,
            &q,
            &v,
        )?;
        rows.push(RateRow {
            direction: RateDirection::Dt,
            level,
            h: c * std::f64::consts::SQRT_2,
            dt,
            error,
            order: None,
        });
    }
    for i in 1..rows.len() {
        if rows[i].direction == rows[i - 1].direction {
            rows[i].order = Some(observed_order(rows[i - 1].error, rows[i].error));
        }
    }
    Ok(rows)
}

pub fn rates_to_csv(p: usize, rows: &[RateRow]) -> String {
    let mut s = format!("# st-hdg projection-rates v1 p={p}\ndirection,level,h,dt,err_q,order\n");
    for r in rows {
        let dir = match r.direction {
            RateDirection::H => "h",
            RateDirection::Dt => "dt",
        };
        let order = r.order.map_or(String::new(), |o| format!("{o:.3}"));
        let _ = writeln!(
            s,
            "{dir},{},{:.6e},{:.6e},{:.6e},{order}",
            r.level, r.h, r.dt, r.error
        );
    }
    s
}
