//! Problem data: the periodic time-harmonic wave with its analytic solution,
//! and the piston wave maker.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::mesh::{BoundaryTag, Domain};

/// Potential and derived first-order fields at one space-time point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticFields {
    pub phi: f64,
    /// `q = -grad phi`
    pub q: [f64; 2],
    /// `v = -d phi / dt`
    pub v: f64,
    /// Wave height, the restriction of `v` to `x2 = 0`.
    pub zeta: f64,
}

/// Data for one run of the slab marcher.
pub trait WaveProblem: Send + Sync {
    fn name(&self) -> &str;

    /// `q(0, x) = -grad phi_0`.
    fn initial_q(&self, x: [f64; 2]) -> [f64; 2];

    /// `v(0, x) = -d phi / dt (0, x)`.
    fn initial_v(&self, x: [f64; 2]) -> f64;

    /// Prescribed `q . n` (outward normal) on a Neumann facet.
    fn normal_flux(&self, _tag: BoundaryTag, _x: [f64; 2], _normal: [f64; 2], _t: f64) -> f64 {
        0.0
    }

    fn exact(&self, _x: [f64; 2], _t: f64) -> Option<AnalyticFields> {
        None
    }

    fn has_exact_solution(&self) -> bool {
        false
    }
}

/// Zero initial and boundary data.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroProblem;

impl WaveProblem for ZeroProblem {
    fn name(&self) -> &str {
        "zero"
    }

    fn initial_q(&self, _x: [f64; 2]) -> [f64; 2] {
        [0.0, 0.0]
    }

    fn initial_v(&self, _x: [f64; 2]) -> f64 {
        0.0
    }

    fn exact(&self, _x: [f64; 2], _t: f64) -> Option<AnalyticFields> {
        Some(AnalyticFields {
            phi: 0.0,
            q: [0.0, 0.0],
            v: 0.0,
            zeta: 0.0,
        })
    }

    fn has_exact_solution(&self) -> bool {
        true
    }
}

/// Frequency from the unit-depth dispersion relation `omega^2 = k tanh k`.
pub fn dispersion_frequency(k: f64) -> f64 {
    (k * k.tanh()).sqrt()
}

/// Potential amplitude giving a maximum wave height `target_zeta_max`.
pub fn calibrate_phi0(target_zeta_max: f64, k: f64) -> f64 {
    target_zeta_max / (dispersion_frequency(k) * k.cosh())
}

/// `phi = phi0 cosh(k (x2 + 1)) cos(omega t - k x1)` on unit depth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HarmonicWave {
    pub phi0: f64,
    pub k: f64,
    pub omega: f64,
    pub lambda_w: f64,
}

impl HarmonicWave {
    pub fn new(phi0: f64, lambda_w: f64) -> Self {
        let k = 2.0 * PI / lambda_w;
        Self {
            phi0,
            k,
            omega: dispersion_frequency(k),
            lambda_w,
        }
    }

    /// Wave of wavelength `lambda_w` whose height peaks at `zeta_max`.
    pub fn with_max_height(zeta_max: f64, lambda_w: f64) -> Self {
        let k = 2.0 * PI / lambda_w;
        Self::new(calibrate_phi0(zeta_max, k), lambda_w)
    }

    /// The configuration of the periodic convergence studies.
    pub fn standard() -> Self {
        Self::with_max_height(0.05, 1.0)
    }

    pub fn max_height(&self) -> f64 {
        self.phi0 * self.omega * self.k.cosh()
    }

    pub fn period(&self) -> f64 {
        2.0 * PI / self.omega
    }

    pub fn fields(&self, x: [f64; 2], t: f64) -> AnalyticFields {
        let Self { phi0, k, omega, .. } = *self;
        let arg = omega * t - k * x[0];
        let (s, c) = arg.sin_cos();
        let ch = (k * (x[1] + 1.0)).cosh();
        let sh = (k * (x[1] + 1.0)).sinh();
        AnalyticFields {
            phi: phi0 * ch * c,
            q: [-phi0 * k * ch * s, -phi0 * k * sh * c],
            v: phi0 * omega * ch * s,
            zeta: phi0 * omega * k.cosh() * (omega * t - k * x[0]).sin(),
        }
    }
}

impl WaveProblem for HarmonicWave {
    fn name(&self) -> &str {
        "harmonic"
    }

    fn initial_q(&self, x: [f64; 2]) -> [f64; 2] {
        self.fields(x, 0.0).q
    }

    fn initial_v(&self, x: [f64; 2]) -> f64 {
        self.fields(x, 0.0).v
    }

    fn normal_flux(&self, _tag: BoundaryTag, x: [f64; 2], normal: [f64; 2], t: f64) -> f64 {
        let q = self.fields(x, t).q;
        q[0] * normal[0] + q[1] * normal[1]
    }

    fn exact(&self, x: [f64; 2], t: f64) -> Option<AnalyticFields> {
        Some(self.fields(x, t))
    }

    fn has_exact_solution(&self) -> bool {
        true
    }
}

/// Piston wave maker on the left wall of a closed tank.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveMakerSpec {
    pub amplitude: f64,
    pub frequency: f64,
    pub domain: Domain,
    pub t_final: f64,
    pub dt: f64,
    /// Use `a exp(-a f t)` instead of `a sin(f t)`.
    pub literal: bool,
}

impl Default for WaveMakerSpec {
    fn default() -> Self {
        Self {
            amplitude: 0.05,
            frequency: 1.8138,
            domain: Domain::new(0.0, 10.0, 1.0),
            t_final: 53.4,
            dt: 0.2,
            literal: false,
        }
    }
}

impl WaveMakerSpec {
    pub fn period(&self) -> f64 {
        2.0 * PI / self.frequency
    }
}

/// Prescribed `q . n` on the wave-maker wall at time `t`.
///
/// The default is `Re(i a e^{-i f t}) = a sin(f t)`. With `literal` set the
/// amplitude of `i a e^{-a f t}` is used instead, i.e. `a e^{-a f t}`.
pub fn wavemaker_flux(spec: &WaveMakerSpec, t: f64) -> f64 {
    if spec.literal {
        spec.amplitude * (-spec.amplitude * spec.frequency * t).exp()
    } else {
        spec.amplitude * (spec.frequency * t).sin()
    }
}

impl WaveProblem for WaveMakerSpec {
    fn name(&self) -> &str {
        "wavemaker"
    }

    fn initial_q(&self, _x: [f64; 2]) -> [f64; 2] {
        [0.0, 0.0]
    }

    fn initial_v(&self, _x: [f64; 2]) -> f64 {
        0.0
    }

    fn normal_flux(&self, tag: BoundaryTag, _x: [f64; 2], _normal: [f64; 2], t: f64) -> f64 {
        if tag == BoundaryTag::WaveMaker {
            wavemaker_flux(self, t)
        } else {
            0.0
        }
    }
}
