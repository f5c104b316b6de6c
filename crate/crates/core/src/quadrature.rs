//! Quadrature rules on the reference interval, triangle, prism and facet square.
//!
//! Reference domains:
//! - interval `[-1, 1]` (measure 2)
//! - triangle `{(xi, eta) : xi, eta >= 0, xi + eta <= 1}` (measure 1/2)
//! - prism = triangle x `[-1, 1]` (measure 1)
//! - facet square `[-1, 1]^2` (measure 4)
//!
//! Triangle rules are collapsed (Duffy) tensor products of Gauss-Legendre
//! rules, so every weight is positive.

use crate::error::QuadratureError;

/// Highest polynomial degree for which a triangle rule is generated.
pub const MAX_TRIANGLE_DEGREE: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DomainKind {
    Interval,
    Triangle,
    Prism,
    FacetSquare,
}

impl DomainKind {
    pub fn reference_measure(self) -> f64 {
        match self {
            DomainKind::Interval => 2.0,
            DomainKind::Triangle => 0.5,
            DomainKind::Prism => 1.0,
            DomainKind::FacetSquare => 4.0,
        }
    }

    fn dimension(self) -> usize {
        match self {
            DomainKind::Interval => 1,
            DomainKind::Triangle | DomainKind::FacetSquare => 2,
            DomainKind::Prism => 3,
        }
    }
}

/// Points are stored padded to three coordinates; unused coordinates are 0.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub domain: DomainKind,
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    pub exactness_degree: usize,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.domain.dimension()
    }

    pub fn integrate<F: Fn([f64; 3]) -> f64>(&self, f: F) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * f(*x))
            .sum()
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]` with `n` points (exact to degree `2n - 1`).
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "Gauss-Legendre rule needs at least one point");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess, refined by Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_and_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_and_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_and_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Number of Gauss points needed to integrate degree `degree` exactly.
pub fn gauss_points_for_degree(degree: usize) -> usize {
    degree / 2 + 1
}

pub fn interval_rule(degree: usize) -> QuadratureRule {
    interval_rule_with_points(gauss_points_for_degree(degree))
}

pub fn interval_rule_with_points(n: usize) -> QuadratureRule {
    let (x, w) = gauss_legendre(n);
    QuadratureRule {
        domain: DomainKind::Interval,
        points: x.iter().map(|&t| [t, 0.0, 0.0]).collect(),
        weights: w,
        exactness_degree: 2 * n - 1,
    }
}

pub fn triangle_rule(degree: usize) -> Result<QuadratureRule, QuadratureError> {
    if degree > MAX_TRIANGLE_DEGREE {
        return Err(QuadratureError::UnsupportedDegree {
            degree,
            max: MAX_TRIANGLE_DEGREE,
        });
    }
    // After the collapse the integrand has degree `degree` in u and `degree + 1` in v.
    let nu = gauss_points_for_degree(degree);
    let nv = gauss_points_for_degree(degree + 1);
    let (xu, wu) = gauss_legendre(nu);
    let (xv, wv) = gauss_legendre(nv);
    let mut points = Vec::with_capacity(nu * nv);
    let mut weights = Vec::with_capacity(nu * nv);
    for (v, wvi) in xv.iter().zip(&wv) {
        for (u, wui) in xu.iter().zip(&wu) {
            let xi = 0.25 * (1.0 + u) * (1.0 - v);
            let eta = 0.5 * (1.0 + v);
            points.push([xi, eta, 0.0]);
            weights.push(wui * wvi * (1.0 - v) / 8.0);
        }
    }
    Ok(QuadratureRule {
        domain: DomainKind::Triangle,
        points,
        weights,
        exactness_degree: degree,
    })
}

/// Tensor rule on the prism: triangle rule of exactness `space_degree` times
/// `time_points` Gauss-Legendre points in the time direction.
pub fn prism_rule(
    space_degree: usize,
    time_points: usize,
) -> Result<QuadratureRule, QuadratureError> {
    let tri = triangle_rule(space_degree)?;
    let (xt, wt) = gauss_legendre(time_points);
    let mut points = Vec::with_capacity(tri.len() * time_points);
    let mut weights = Vec::with_capacity(tri.len() * time_points);
    for (t, wti) in xt.iter().zip(&wt) {
        for (p, w) in tri.points.iter().zip(&tri.weights) {
            points.push([p[0], p[1], *t]);
            weights.push(w * wti);
        }
    }
    Ok(QuadratureRule {
        domain: DomainKind::Prism,
        points,
        weights,
        exactness_degree: space_degree.min(2 * time_points - 1),
    })
}

/// Tensor Gauss-Legendre rule on `[-1, 1]^2`; first coordinate is along the
/// edge, second is time.
pub fn facet_rule(space_points: usize, time_points: usize) -> QuadratureRule {
    let (xs, ws) = gauss_legendre(space_points);
    let (xt, wt) = gauss_legendre(time_points);
    let mut points = Vec::with_capacity(space_points * time_points);
    let mut weights = Vec::with_capacity(space_points * time_points);
    for (t, wti) in xt.iter().zip(&wt) {
        for (s, wsi) in xs.iter().zip(&ws) {
            points.push([*s, *t, 0.0]);
            weights.push(wsi * wti);
        }
    }
    QuadratureRule {
        domain: DomainKind::FacetSquare,
        points,
        weights,
        exactness_degree: (2 * space_points - 1).min(2 * time_points - 1),
    }
}

/// Rule exact to `degree` on the given reference domain.
pub fn make_quadrature(
    domain: DomainKind,
    degree: usize,
) -> Result<QuadratureRule, QuadratureError> {
    if degree < 1 {
        return Err(QuadratureError::DegreeTooLow);
    }
    let n = gauss_points_for_degree(degree);
    Ok(match domain {
        DomainKind::Interval => interval_rule(degree),
        DomainKind::Triangle => triangle_rule(degree)?,
        DomainKind::Prism => {
            let mut r = prism_rule(degree, n)?;
            r.exactness_degree = degree;
            r
        }
        DomainKind::FacetSquare => {
            let mut r = facet_rule(n, n);
            r.exactness_degree = degree;
            r
        }
    })
}
