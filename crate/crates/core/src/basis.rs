//! Orthonormal polynomial bases on the reference prism, facet square,
//! triangle and interval, and their push-forward to physical prisms.
//!
//! The triangle factor is a Dubiner-type hierarchical basis: centred
//! monomials ordered by total degree, orthonormalised against the exact
//! reference-triangle inner product. The first `dim P_k` functions span
//! `P_k` for every `k <= p`, which is what the reduced `P_{p-1}` spaces rely on.
//! Time and facet factors are normalised Legendre polynomials.

use nalgebra::{DMatrix, DVector};

use crate::error::BasisError;
use crate::quadrature::triangle_rule;

/// `dim P_p` on a triangle.
pub fn dim_triangle(p: usize) -> usize {
    (p + 1) * (p + 2) / 2
}

/// Orthonormal Legendre values `L_0..=L_p` at `t`, normalised on `[-1, 1]`.
pub fn legendre(p: usize, t: f64) -> Vec<f64> {
    legendre_with_derivative(p, t).0
}

/// Orthonormal Legendre values and derivatives at `t`.
pub fn legendre_with_derivative(p: usize, t: f64) -> (Vec<f64>, Vec<f64>) {
    let mut val = vec![0.0; p + 1];
    let mut der = vec![0.0; p + 1];
    val[0] = 1.0;
    if p >= 1 {
        val[1] = t;
        der[1] = 1.0;
    }
    for n in 2..=p {
        let nf = n as f64;
        val[n] = ((2.0 * nf - 1.0) * t * val[n - 1] - (nf - 1.0) * val[n - 2]) / nf;
        der[n] = der[n - 2] + (2.0 * nf - 1.0) * val[n - 1];
    }
    for n in 0..=p {
        let s = ((2 * n + 1) as f64 / 2.0).sqrt();
        val[n] *= s;
        der[n] *= s;
    }
    (val, der)
}

/// Orthonormal basis of `P_p` on the reference triangle.
#[derive(Debug, Clone)]
pub struct TriangleBasis {
    degree: usize,
    exponents: Vec<(i32, i32)>,
    // Row i holds the monomial coefficients of basis function i.
    coeffs: DMatrix<f64>,
}

const CENTROID: f64 = 1.0 / 3.0;

impl TriangleBasis {
    pub fn new(degree: usize) -> Self {
        let mut exponents = Vec::with_capacity(dim_triangle(degree));
        for n in 0..=degree as i32 {
            for b in 0..=n {
                exponents.push((n - b, b));
            }
        }
        let dim = exponents.len();
        let rule = triangle_rule(2 * degree.max(1)).expect("triangle rule for basis construction");
        let mono: Vec<Vec<f64>> = rule
            .points
            .iter()
            .map(|x| monomials(&exponents, x[0], x[1]))
            .collect();

        let mut coeffs = DMatrix::<f64>::identity(dim, dim);
        // Two orthonormalisation passes; the second removes the round-off left by the first.
        for _ in 0..2 {
            let mut gram = DMatrix::<f64>::zeros(dim, dim);
            for (m, w) in mono.iter().zip(&rule.weights) {
                let v = &coeffs * DVector::from_column_slice(m);
                gram += *w * &v * v.transpose();
            }
            let chol = gram
                .cholesky()
                .expect("monomial Gram matrix is positive definite");
            let l = chol.l();
            let linv = l
                .solve_lower_triangular(&DMatrix::identity(dim, dim))
                .expect("nonsingular Cholesky factor");
            coeffs = linv * coeffs;
        }
        Self {
            degree,
            exponents,
            coeffs,
        }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn dim(&self) -> usize {
        self.exponents.len()
    }

    /// Values at `(xi, eta)`.
    pub fn values(&self, xi: f64, eta: f64) -> Vec<f64> {
        let m = monomials(&self.exponents, xi, eta);
        (0..self.dim())
            .map(|i| (0..=i).map(|j| self.coeffs[(i, j)] * m[j]).sum())
            .collect()
    }

    /// Values and reference gradients at `(xi, eta)`.
    pub fn values_and_gradients(&self, xi: f64, eta: f64) -> (Vec<f64>, Vec<[f64; 2]>) {
        let x = xi - CENTROID;
        let y = eta - CENTROID;
        let n = self.dim();
        let mut m = vec![0.0; n];
        let mut dm = vec![[0.0; 2]; n];
        for (k, &(a, b)) in self.exponents.iter().enumerate() {
            m[k] = x.powi(a) * y.powi(b);
            dm[k][0] = if a > 0 {
                a as f64 * x.powi(a - 1) * y.powi(b)
            } else {
                0.0
            };
            dm[k][1] = if b > 0 {
                b as f64 * x.powi(a) * y.powi(b - 1)
            } else {
                0.0
            };
        }
        let mut val = vec![0.0; n];
        let mut grad = vec![[0.0; 2]; n];
        for i in 0..n {
            for j in 0..=i {
                let c = self.coeffs[(i, j)];
                val[i] += c * m[j];
                grad[i][0] += c * dm[j][0];
                grad[i][1] += c * dm[j][1];
            }
        }
        (val, grad)
    }
}

fn monomials(exponents: &[(i32, i32)], xi: f64, eta: f64) -> Vec<f64> {
    let x = xi - CENTROID;
    let y = eta - CENTROID;
    exponents
        .iter()
        .map(|&(a, b)| x.powi(a) * y.powi(b))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SpaceKind {
    /// `P_p(K) x P_p(I)` on the prism.
    PrismPP,
    /// `P_{p-1}(K) x P_p(I)` on the prism.
    PrismTildeW,
    /// `Q_p` on the facet square.
    FacetQ,
    /// `P_p` on the triangle.
    TriP,
    /// `P_p` on the interval.
    IntervalP,
}

/// A reference-element basis. Tensor-product kinds index their functions as
/// `space_index * (p + 1) + time_index`.
#[derive(Debug, Clone)]
pub struct ReferenceBasis {
    kind: SpaceKind,
    degree: usize,
    tri: Option<TriangleBasis>,
    time_degree: usize,
}

/// Values and first derivatives of every basis function at a set of points;
/// `values[(i, q)]` is function `i` at point `q`.
#[derive(Debug, Clone)]
pub struct Tabulation {
    pub values: DMatrix<f64>,
    pub derivs: [DMatrix<f64>; 3],
}

pub fn make_basis(kind: SpaceKind, p: usize) -> Result<ReferenceBasis, BasisError> {
    if p == 0 {
        return Err(BasisError::DegreeTooLow(p));
    }
    ReferenceBasis::new(kind, p)
}

impl ReferenceBasis {
    /// Unlike [`make_basis`], this accepts `p = 0` for the non-solver kinds.
    pub fn new(kind: SpaceKind, p: usize) -> Result<Self, BasisError> {
        let tri = match kind {
            SpaceKind::PrismPP | SpaceKind::TriP => Some(TriangleBasis::new(p)),
            SpaceKind::PrismTildeW => {
                if p == 0 {
                    return Err(BasisError::DegreeTooLow(p));
                }
                Some(TriangleBasis::new(p - 1))
            }
            SpaceKind::FacetQ | SpaceKind::IntervalP => None,
        };
        Ok(Self {
            kind,
            degree: p,
            tri,
            time_degree: p,
        })
    }

    pub fn kind(&self) -> SpaceKind {
        self.kind
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn dim(&self) -> usize {
        let p = self.degree;
        match self.kind {
            SpaceKind::PrismPP => dim_triangle(p) * (p + 1),
            SpaceKind::PrismTildeW => dim_triangle(p - 1) * (p + 1),
            SpaceKind::FacetQ => (p + 1) * (p + 1),
            SpaceKind::TriP => dim_triangle(p),
            SpaceKind::IntervalP => p + 1,
        }
    }

    pub fn triangle(&self) -> Option<&TriangleBasis> {
        self.tri.as_ref()
    }

    /// Values and reference derivatives at one point (coordinates padded to 3).
    pub fn eval(&self, x: [f64; 3]) -> (Vec<f64>, Vec<[f64; 3]>) {
        let nt = self.time_degree + 1;
        match self.kind {
            SpaceKind::PrismPP | SpaceKind::PrismTildeW => {
                let tri = self
                    .tri
                    .as_ref()
                    .expect("prism basis has a triangle factor");
                let (sv, sg) = tri.values_and_gradients(x[0], x[1]);
                let (tv, td) = legendre_with_derivative(self.time_degree, x[2]);
                let mut val = Vec::with_capacity(sv.len() * nt);
                let mut grad = Vec::with_capacity(sv.len() * nt);
                for k in 0..sv.len() {
                    for j in 0..nt {
                        val.push(sv[k] * tv[j]);
                        grad.push([sg[k][0] * tv[j], sg[k][1] * tv[j], sv[k] * td[j]]);
                    }
                }
                (val, grad)
            }
            SpaceKind::FacetQ => {
                let (sv, sd) = legendre_with_derivative(self.degree, x[0]);
                let (tv, td) = legendre_with_derivative(self.time_degree, x[1]);
                let mut val = Vec::with_capacity(sv.len() * nt);
                let mut grad = Vec::with_capacity(sv.len() * nt);
                for l in 0..sv.len() {
                    for j in 0..nt {
                        val.push(sv[l] * tv[j]);
                        grad.push([sd[l] * tv[j], sv[l] * td[j], 0.0]);
                    }
                }
                (val, grad)
            }
            SpaceKind::TriP => {
                let tri = self.tri.as_ref().expect("triangle basis");
                let (v, g) = tri.values_and_gradients(x[0], x[1]);
                (v, g.into_iter().map(|d| [d[0], d[1], 0.0]).collect())
            }
            SpaceKind::IntervalP => {
                let (v, d) = legendre_with_derivative(self.degree, x[0]);
                (v, d.into_iter().map(|d| [d, 0.0, 0.0]).collect())
            }
        }
    }

    pub fn tabulate(&self, points: &[[f64; 3]]) -> Tabulation {
        let n = self.dim();
        let mut values = DMatrix::zeros(n, points.len());
        let mut derivs = [
            DMatrix::zeros(n, points.len()),
            DMatrix::zeros(n, points.len()),
            DMatrix::zeros(n, points.len()),
        ];
        for (q, x) in points.iter().enumerate() {
            let (v, g) = self.eval(*x);
            for i in 0..n {
                values[(i, q)] = v[i];
                for d in 0..3 {
                    derivs[d][(i, q)] = g[i][d];
                }
            }
        }
        Tabulation { values, derivs }
    }
}

/// Affine prism `K x [t_start, t_start + dt]` with `K` given by its vertices
/// in counter-clockwise order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrismGeometry {
    pub vertices: [[f64; 2]; 3],
    pub t_start: f64,
    pub dt: f64,
}

impl PrismGeometry {
    pub fn new(vertices: [[f64; 2]; 3], t_start: f64, dt: f64) -> Self {
        Self {
            vertices,
            t_start,
            dt,
        }
    }

    /// Columns are the edge vectors `x1 - x0` and `x2 - x0`.
    pub fn jacobian(&self) -> [[f64; 2]; 2] {
        let [a, b, c] = self.vertices;
        [[b[0] - a[0], c[0] - a[0]], [b[1] - a[1], c[1] - a[1]]]
    }

    pub fn det(&self) -> f64 {
        let j = self.jacobian();
        j[0][0] * j[1][1] - j[0][1] * j[1][0]
    }

    pub fn area(&self) -> f64 {
        0.5 * self.det().abs()
    }

    pub fn inverse_jacobian(&self) -> Result<[[f64; 2]; 2], BasisError> {
        let j = self.jacobian();
        let det = self.det();
        let scale = j.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max);
        if det.abs() <= 1e-14 * scale * scale {
            return Err(BasisError::SingularJacobian(det));
        }
        Ok([
            [j[1][1] / det, -j[0][1] / det],
            [-j[1][0] / det, j[0][0] / det],
        ])
    }

    pub fn to_physical(&self, reference: [f64; 3]) -> ([f64; 2], f64) {
        let j = self.jacobian();
        let a = self.vertices[0];
        let x = [
            a[0] + j[0][0] * reference[0] + j[0][1] * reference[1],
            a[1] + j[1][0] * reference[0] + j[1][1] * reference[1],
        ];
        let t = self.t_start + 0.5 * (reference[2] + 1.0) * self.dt;
        (x, t)
    }

    /// Reference `(xi, eta)` of a physical point.
    pub fn to_reference(&self, x: [f64; 2]) -> Result<[f64; 2], BasisError> {
        let inv = self.inverse_jacobian()?;
        let a = self.vertices[0];
        let d = [x[0] - a[0], x[1] - a[1]];
        Ok([
            inv[0][0] * d[0] + inv[0][1] * d[1],
            inv[1][0] * d[0] + inv[1][1] * d[1],
        ])
    }

    pub fn reference_time(&self, t: f64) -> f64 {
        2.0 * (t - self.t_start) / self.dt - 1.0
    }

    /// Longest edge (`h_K`).
    pub fn diameter(&self) -> f64 {
        let v = self.vertices;
        (0..3)
            .map(|k| {
                let a = v[k];
                let b = v[(k + 1) % 3];
                ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt()
            })
            .fold(0.0, f64::max)
    }

    /// Inscribed-circle diameter (`rho_K`).
    pub fn inradius_diameter(&self) -> f64 {
        let v = self.vertices;
        let perim: f64 = (0..3)
            .map(|k| {
                let a = v[k];
                let b = v[(k + 1) % 3];
                ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt()
            })
            .sum();
        4.0 * self.area() / perim
    }
}

/// Basis values and physical derivatives `(d/dx1, d/dx2, d/dt)`.
pub fn eval_mapped(
    basis: &ReferenceBasis,
    geometry: &PrismGeometry,
    points: &[[f64; 3]],
) -> Result<Tabulation, BasisError> {
    let inv = geometry.inverse_jacobian()?;
    let reference = basis.tabulate(points);
    let [d0, d1, d2] = reference.derivs;
    // grad_x = J^{-T} grad_ref
    let gx = &d0 * inv[0][0] + &d1 * inv[1][0];
    let gy = &d0 * inv[0][1] + &d1 * inv[1][1];
    let gt = d2 * (2.0 / geometry.dt);
    Ok(Tabulation {
        values: reference.values,
        derivs: [gx, gy, gt],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{facet_rule, interval_rule_with_points, prism_rule};

    fn gram(basis: &ReferenceBasis, rule_points: &[[f64; 3]], weights: &[f64]) -> DMatrix<f64> {
        let tab = basis.tabulate(rule_points);
        let w = DMatrix::from_diagonal(&DVector::from_column_slice(weights));
        &tab.values * w * tab.values.transpose()
    }

    #[test]
    fn dimensions_match_closed_forms() {
        for p in 1..=4 {
            let pp = make_basis(SpaceKind::PrismPP, p).unwrap();
            let fq = make_basis(SpaceKind::FacetQ, p).unwrap();
            let tw = make_basis(SpaceKind::PrismTildeW, p).unwrap();
            assert_eq!(pp.dim(), (p + 1) * (p + 1) * (p + 2) / 2);
            assert_eq!(fq.dim(), (p + 1) * (p + 1));
            assert_eq!(tw.dim(), p * (p + 1) * (p + 1) / 2);
        }
        assert_eq!(make_basis(SpaceKind::PrismPP, 1).unwrap().dim(), 6);
        assert_eq!(make_basis(SpaceKind::FacetQ, 1).unwrap().dim(), 4);
        assert_eq!(make_basis(SpaceKind::PrismTildeW, 1).unwrap().dim(), 2);
        assert_eq!(make_basis(SpaceKind::PrismPP, 2).unwrap().dim(), 18);
        assert_eq!(3 * make_basis(SpaceKind::PrismPP, 2).unwrap().dim(), 54);
    }

    #[test]
    fn p_zero_rejected() {
        assert_eq!(
            make_basis(SpaceKind::PrismPP, 0).unwrap_err(),
            BasisError::DegreeTooLow(0)
        );
    }

    #[test]
    fn gram_matrices_are_identity() {
        for p in 1..=5 {
            for kind in [SpaceKind::PrismPP, SpaceKind::PrismTildeW] {
                let b = make_basis(kind, p).unwrap();
                let r = prism_rule(2 * p + 2, p + 2).unwrap();
                let g = gram(&b, &r.points, &r.weights);
                let err = (g - DMatrix::identity(b.dim(), b.dim())).abs().max();
                assert!(err < 1e-12, "{kind:?} p={p}: {err:e}");
            }
            let f = make_basis(SpaceKind::FacetQ, p).unwrap();
            let r = facet_rule(p + 2, p + 2);
            let err = (gram(&f, &r.points, &r.weights) - DMatrix::identity(f.dim(), f.dim()))
                .abs()
                .max();
            assert!(err < 1e-12);
            let i = make_basis(SpaceKind::IntervalP, p).unwrap();
            let r = interval_rule_with_points(p + 2);
            let err = (gram(&i, &r.points, &r.weights) - DMatrix::identity(i.dim(), i.dim()))
                .abs()
                .max();
            assert!(err < 1e-12);
        }
    }

    #[test]
    fn tilde_space_is_a_prefix_of_the_full_triangle_basis() {
        let full = TriangleBasis::new(3);
        let reduced = TriangleBasis::new(2);
        for &(x, y) in &[(0.1, 0.2), (0.5, 0.3), (0.0, 0.9)] {
            let a = full.values(x, y);
            let b = reduced.values(x, y);
            for k in 0..b.len() {
                assert!((a[k] - b[k]).abs() < 1e-11);
            }
        }
    }

    #[test]
    fn constant_has_zero_gradient() {
        let b = make_basis(SpaceKind::PrismPP, 2).unwrap();
        let g = PrismGeometry::new([[0.0, 0.0], [0.3, 0.1], [0.05, 0.4]], 1.0, 0.25);
        let t = eval_mapped(&b, &g, &[[0.2, 0.3, 0.1]]).unwrap();
        // Function 0 is the constant (lowest triangle function times L_0).
        for d in 0..3 {
            assert!(t.derivs[d][(0, 0)].abs() < 1e-12);
        }
    }

    #[test]
    fn linear_in_time_has_derivative_two_over_dt() {
        let b = make_basis(SpaceKind::IntervalP, 1).unwrap();
        let (_, d) = b.eval([0.3, 0.0, 0.0]);
        // L_1 = sqrt(3/2) t, so t itself has reference derivative 1.
        let dt = 0.25;
        let dtdt_phys = d[1][0] / (1.5f64).sqrt() * 2.0 / dt;
        assert!((dtdt_phys - 2.0 / dt).abs() < 1e-14);

        let prism = make_basis(SpaceKind::PrismPP, 1).unwrap();
        let g = PrismGeometry::new([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], 3.0, dt);
        let t = eval_mapped(&prism, &g, &[[0.2, 0.2, -0.4]]).unwrap();
        let c0 = prism.triangle().unwrap().values(0.2, 0.2)[0];
        // index (k=0, j=1) is c0 * L_1(t_hat)
        let expected = c0 * (1.5f64).sqrt() * 2.0 / dt;
        assert!((t.derivs[2][(1, 0)] - expected).abs() < 1e-12);
    }

    #[test]
    fn mapped_gradients_match_finite_differences() {
        let b = make_basis(SpaceKind::PrismPP, 2).unwrap();
        let g = PrismGeometry::new([[0.1, -0.2], [0.6, -0.1], [0.2, 0.35]], 0.5, 0.3);
        // pseudo-random coefficients
        let coeffs: Vec<f64> = (0..b.dim())
            .map(|i| ((i * 37 % 11) as f64 - 5.0) / 7.0)
            .collect();
        let f = |x: [f64; 2], t: f64| -> f64 {
            let r = g.to_reference(x).unwrap();
            let (v, _) = b.eval([r[0], r[1], g.reference_time(t)]);
            v.iter().zip(&coeffs).map(|(a, c)| a * c).sum()
        };
        let ref_pt = [0.25, 0.3, 0.2];
        let (x, t) = g.to_physical(ref_pt);
        let tab = eval_mapped(&b, &g, &[ref_pt]).unwrap();
        let grad: Vec<f64> = (0..3)
            .map(|d| {
                (0..b.dim())
                    .map(|i| tab.derivs[d][(i, 0)] * coeffs[i])
                    .sum()
            })
            .collect();
        let h = 1e-6;
        let fd = [
            (f([x[0] + h, x[1]], t) - f([x[0] - h, x[1]], t)) / (2.0 * h),
            (f([x[0], x[1] + h], t) - f([x[0], x[1] - h], t)) / (2.0 * h),
            (f(x, t + h) - f(x, t - h)) / (2.0 * h),
        ];
        for d in 0..3 {
            let rel = (grad[d] - fd[d]).abs() / grad[d].abs().max(1e-3);
            assert!(rel < 1e-7, "component {d}: {} vs {}", grad[d], fd[d]);
        }
    }

    #[test]
    fn separable_coefficients_factor() {
        let p = 2;
        let b = make_basis(SpaceKind::PrismPP, p).unwrap();
        let tri = b.triangle().unwrap();
        let a: Vec<f64> = (0..tri.dim()).map(|k| 0.3 + k as f64).collect();
        let c: Vec<f64> = (0..=p).map(|j| 1.0 - 0.4 * j as f64).collect();
        let x = [0.2, 0.5, -0.3];
        let (v, _) = b.eval(x);
        let val: f64 = (0..tri.dim())
            .flat_map(|k| (0..=p).map(move |j| (k, j)))
            .map(|(k, j)| a[k] * c[j] * v[k * (p + 1) + j])
            .sum();
        let sv = tri.values(x[0], x[1]);
        let tv = legendre(p, x[2]);
        let s: f64 = sv.iter().zip(&a).map(|(u, w)| u * w).sum();
        let t: f64 = tv.iter().zip(&c).map(|(u, w)| u * w).sum();
        assert!((val - s * t).abs() < 1e-12);
    }

    #[test]
    fn degenerate_triangle_rejected() {
        let g = PrismGeometry::new([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]], 0.0, 1.0);
        let b = make_basis(SpaceKind::PrismPP, 1).unwrap();
        assert!(matches!(
            eval_mapped(&b, &g, &[[0.1, 0.1, 0.0]]),
            Err(BasisError::SingularJacobian(_))
        ));
    }
}
