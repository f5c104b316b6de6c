//! Error norms against analytic solutions, convergence studies, surface
//! profiles and run configuration.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::basis::{legendre, make_basis, PrismGeometry, ReferenceBasis, SpaceKind, Tabulation};
use crate::error::{MeshError, ReportError, SolveError};
use crate::hdg_local::LocalParams;
use crate::mesh::{
    build_structured_mesh, BottomProfile, Domain, FacetTopology, LateralBoundaries, SpatialMesh,
};
use crate::quadrature::{facet_rule, prism_rule, QuadratureRule};
use crate::slab::{march, EnergyChecker, MarchParams, SlabSolution, SolverChoice};
use crate::waves::{HarmonicWave, WaveMakerSpec, WaveProblem};

/// Running sums of the squared space-time errors of `q` and `lambda`.
#[derive(Debug, Clone)]
pub struct ErrorAccumulator {
    p: usize,
    rule: QuadratureRule,
    tab: Tabulation,
    frule: QuadratureRule,
    ftab: Tabulation,
    sum_q: f64,
    sum_lambda: f64,
}

impl ErrorAccumulator {
    /// Quadrature exact to degree `2p + 4` in space and `2p + 5` in time.
    pub fn new(p: usize) -> Result<Self, ReportError> {
        let prism: ReferenceBasis =
            make_basis(SpaceKind::PrismPP, p).map_err(SolveError::from_basis)?;
        let facet = make_basis(SpaceKind::FacetQ, p).map_err(SolveError::from_basis)?;
        let rule = prism_rule(2 * p + 4, p + 3).map_err(|e| SolveError::from_basis(e.into()))?;
        let tab = prism.tabulate(&rule.points);
        let frule = facet_rule(p + 3, p + 3);
        let ftab = facet.tabulate(&frule.points);
        Ok(Self {
            p,
            rule,
            tab,
            frule,
            ftab,
            sum_q: 0.0,
            sum_lambda: 0.0,
        })
    }

    pub fn add_slab(
        &mut self,
        mesh: &SpatialMesh,
        topology: &FacetTopology,
        sol: &SlabSolution,
        problem: &dyn WaveProblem,
    ) -> Result<(), ReportError> {
        if !problem.has_exact_solution() {
            return Err(ReportError::NoAnalyticSolution(problem.name().to_string()));
        }
        debug_assert_eq!(sol.p, self.p);
        let exact = |x: [f64; 2], t: f64| problem.exact(x, t).expect("checked above");
        for e in 0..mesh.num_triangles() {
            let g = PrismGeometry::new(mesh.triangle_vertices(e), sol.t_start, sol.dt);
            let vol = g.det().abs() * 0.5 * sol.dt;
            let q1 = self
                .tab
                .values
                .tr_mul(&DVector::from_column_slice(sol.q(e, 0)));
            let q2 = self
                .tab
                .values
                .tr_mul(&DVector::from_column_slice(sol.q(e, 1)));
            for (i, (x, w)) in self.rule.points.iter().zip(&self.rule.weights).enumerate() {
                let (xp, t) = g.to_physical(*x);
                let ex = exact(xp, t);
                self.sum_q += w * vol * ((ex.q[0] - q1[i]).powi(2) + (ex.q[1] - q2[i]).powi(2));
            }
        }
        for &f in &topology.surface_facets {
            let [va, vb] = mesh.edges[topology.facets[f].edge]
                .vertices
                .map(|v| mesh.vertices[v]);
            let len = mesh.edge_length(topology.facets[f].edge);
            let lam = self
                .ftab
                .values
                .tr_mul(&DVector::from_column_slice(sol.facet(f)));
            for (i, (x, w)) in self
                .frule
                .points
                .iter()
                .zip(&self.frule.weights)
                .enumerate()
            {
                let s = x[0];
                let xp = [
                    0.5 * (1.0 - s) * va[0] + 0.5 * (1.0 + s) * vb[0],
                    0.5 * (1.0 - s) * va[1] + 0.5 * (1.0 + s) * vb[1],
                ];
                let t = sol.t_start + 0.5 * (x[1] + 1.0) * sol.dt;
                self.sum_lambda += w * 0.25 * len * sol.dt * (exact(xp, t).v - lam[i]).powi(2);
            }
        }
        Ok(())
    }

    /// `||q - q_h||` over the space-time domain so far.
    pub fn q_error(&self) -> f64 {
        self.sum_q.sqrt()
    }

    /// `||lambda_h - v||` over the free surface so far.
    pub fn lambda_error(&self) -> f64 {
        self.sum_lambda.sqrt()
    }
}

impl SolveError {
    fn from_basis(e: crate::error::BasisError) -> SolveError {
        SolveError::Hdg(e.into())
    }
}

/// Unweighted `L2` error of `q` over all slabs.
pub fn error_q_spacetime(
    mesh: &SpatialMesh,
    slabs: &[SlabSolution],
    problem: &dyn WaveProblem,
) -> Result<f64, ReportError> {
    Ok(accumulate(mesh, slabs, problem)?.q_error())
}

/// Unweighted `L2` error of `lambda` over the free surface and all slabs.
pub fn error_lambda_surface(
    mesh: &SpatialMesh,
    slabs: &[SlabSolution],
    problem: &dyn WaveProblem,
) -> Result<f64, ReportError> {
    Ok(accumulate(mesh, slabs, problem)?.lambda_error())
}

fn accumulate(
    mesh: &SpatialMesh,
    slabs: &[SlabSolution],
    problem: &dyn WaveProblem,
) -> Result<ErrorAccumulator, ReportError> {
    let p = slabs.first().map_or(1, |s| s.p);
    let topology = FacetTopology::new(mesh)?;
    let mut acc = ErrorAccumulator::new(p)?;
    for s in slabs {
        acc.add_slab(mesh, &topology, s, problem)?;
    }
    Ok(acc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StudyKind {
    Space,
    Time,
    Spacetime,
    FixedH,
}

impl StudyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StudyKind::Space => "space",
            StudyKind::Time => "time",
            StudyKind::Spacetime => "spacetime",
            StudyKind::FixedH => "fixed-h",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "space" => Some(StudyKind::Space),
            "time" => Some(StudyKind::Time),
            "spacetime" | "space-time" => Some(StudyKind::Spacetime),
            "fixed-h" | "fixed_h" => Some(StudyKind::FixedH),
            _ => None,
        }
    }
}

/// One refinement level of a study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudyLevel {
    /// Cells per direction of the `[-1, 1] x [-1, 0]` grid.
    pub n: usize,
    pub dt: f64,
    pub t_final: f64,
}

/// A convergence study for the periodic harmonic wave.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySpec {
    pub kind: StudyKind,
    pub p: usize,
    pub levels: Vec<StudyLevel>,
    pub tau: f64,
    pub alpha: f64,
    pub time_quad_extra: usize,
    pub solver: SolverChoice,
    /// Evaluate the energy identity on every slab.
    pub check_energy: bool,
    pub wave: HarmonicWave,
}

/// Cells per direction of the fixed fine mesh in the time study.
pub fn default_time_study_mesh(p: usize) -> usize {
    if p <= 1 {
        96
    } else {
        60
    }
}

impl StudySpec {
    /// Level schedules of the periodic-wave experiments; `levels` overrides
    /// the default count.
    pub fn standard(kind: StudyKind, p: usize, levels: Option<usize>) -> Self {
        let lv: Vec<StudyLevel> = match kind {
            StudyKind::Space => {
                let (dt, steps) = if p <= 1 { (1e-5, 200) } else { (1e-4, 20) };
                let n = levels.unwrap_or(4);
                (0..n)
                    .map(|l| StudyLevel {
                        n: 3 << l,
                        dt,
                        t_final: dt * steps as f64,
                    })
                    .collect()
            }
            StudyKind::Time => {
                let n = levels.unwrap_or(4);
                let mesh = default_time_study_mesh(p);
                (0..n)
                    .map(|l| StudyLevel {
                        n: mesh,
                        dt: 1.0 / (1u64 << l) as f64,
                        t_final: 1.0,
                    })
                    .collect()
            }
            StudyKind::Spacetime => {
                let n = levels.unwrap_or(4);
                (0..n)
                    .map(|l| StudyLevel {
                        n: 3 << l,
                        dt: 0.25 / (1u64 << l) as f64,
                        t_final: 1.0,
                    })
                    .collect()
            }
            StudyKind::FixedH => {
                let n = levels.unwrap_or(9);
                (0..n)
                    .map(|l| StudyLevel {
                        n: 24,
                        dt: 1.0 / (1u64 << l) as f64,
                        t_final: 1.0,
                    })
                    .collect()
            }
        };
        Self {
            kind,
            p,
            levels: lv,
            tau: 5.0,
            alpha: 0.1,
            time_quad_extra: 0,
            solver: SolverChoice::Direct,
            check_energy: false,
            wave: HarmonicWave::standard(),
        }
    }

    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("study spec serialises");
        short_hash(json.as_bytes())
    }
}

/// First 16 hex digits of the SHA-256 digest.
pub fn short_hash(bytes: &[u8]) -> String {
    let d = Sha256::digest(bytes);
    d.iter().take(8).fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// `[-1, 1] x [-1, 0]` periodic grid with `n x n` cells.
pub fn periodic_mesh(n: usize) -> Result<Arc<SpatialMesh>, MeshError> {
    Ok(Arc::new(build_structured_mesh(
        n,
        n,
        Domain::new(-1.0, 1.0, 1.0),
        &BottomProfile::flat(),
        LateralBoundaries::Periodic,
    )?))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub level: usize,
    pub dofs: usize,
    pub dt: f64,
    pub h: f64,
    pub err_q: f64,
    pub order_q: Option<f64>,
    pub err_lambda: f64,
    pub order_lambda: Option<f64>,
    /// Largest relative energy-identity residual over the slabs, when checked.
    pub energy_residual: Option<f64>,
    /// Smallest quadratic energy term seen, when checked.
    pub energy_min_term: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub study: StudyKind,
    pub p: usize,
    pub config_hash: String,
    pub rows: Vec<ConvergenceRow>,
}

/// `log2(previous / current)`.
pub fn observed_order(previous: f64, current: f64) -> f64 {
    (previous / current).log2()
}

impl ConvergenceReport {
    pub fn from_rows(
        study: StudyKind,
        p: usize,
        config_hash: String,
        mut rows: Vec<ConvergenceRow>,
    ) -> Self {
        for i in 0..rows.len() {
            if i == 0 {
                rows[i].order_q = None;
                rows[i].order_lambda = None;
            } else {
                rows[i].order_q = Some(observed_order(rows[i - 1].err_q, rows[i].err_q));
                rows[i].order_lambda =
                    Some(observed_order(rows[i - 1].err_lambda, rows[i].err_lambda));
            }
        }
        Self {
            study,
            p,
            config_hash,
            rows,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!(
            "# st-hdg report v1 study={} p={} config={}\n",
            self.study.as_str(),
            self.p,
            self.config_hash
        );
        s.push_str("level,dofs,dt,h,err_q,order_q,err_lambda,order_lambda,energy_residual\n");
        let opt = |v: Option<f64>, prec: usize| v.map_or(String::new(), |x| format!("{x:.prec$}"));
        let opt_e = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.3e}"));
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{:.6e},{:.6e},{:.6e},{},{:.6e},{},{}",
                r.level,
                r.dofs,
                r.dt,
                r.h,
                r.err_q,
                opt(r.order_q, 3),
                r.err_lambda,
                opt(r.order_lambda, 3),
                opt_e(r.energy_residual)
            );
        }
        s
    }

    pub fn last(&self) -> Option<&ConvergenceRow> {
        self.rows.last()
    }
}

/// Runs every level of a study.
pub fn run_study(spec: &StudySpec) -> Result<ConvergenceReport, ReportError> {
    let mut rows = Vec::with_capacity(spec.levels.len());
    for (level, lv) in spec.levels.iter().enumerate() {
        let row = run_level(spec, level, lv).map_err(|e| match e {
            ReportError::Solve(source) => ReportError::Level { level, source },
            other => other,
        })?;
        rows.push(row);
    }
    Ok(ConvergenceReport::from_rows(
        spec.kind,
        spec.p,
        spec.config_hash(),
        rows,
    ))
}

fn run_level(
    spec: &StudySpec,
    level: usize,
    lv: &StudyLevel,
) -> Result<ConvergenceRow, ReportError> {
    let mesh = periodic_mesh(lv.n)?;
    let topology = FacetTopology::new(&mesh)?;
    let mut params = MarchParams::new(spec.p, lv.dt, lv.t_final);
    params.tau = spec.tau;
    params.alpha = spec.alpha;
    params.time_quad_extra = spec.time_quad_extra;
    params.solver = spec.solver;
    let mut acc = ErrorAccumulator::new(spec.p)?;
    let local = LocalParams {
        p: spec.p,
        tau: spec.tau,
        alpha: spec.alpha,
        dt: lv.dt,
        time_quad_extra: spec.time_quad_extra,
    };
    let checker = if spec.check_energy {
        Some(EnergyChecker::new(&local)?)
    } else {
        None
    };
    let mut energy_residual = 0.0f64;
    let mut energy_min = f64::INFINITY;
    let mut failure: Option<ReportError> = None;
    let summary = march(&mesh, &params, &spec.wave, |sol| {
        if let Err(e) = acc.add_slab(&mesh, &topology, sol, &spec.wave) {
            failure = Some(e);
            return Err(SolveError::Parameters("error accumulation failed".into()));
        }
        if let Some(c) = &checker {
            let terms = c.check(&mesh, &topology, &spec.wave, sol);
            energy_residual = energy_residual.max(terms.relative_residual());
            energy_min = terms.quadratic().iter().fold(energy_min, |a, b| a.min(*b));
        }
        Ok(())
    });
    if let Some(e) = failure {
        return Err(e);
    }
    let summary = summary?;
    Ok(ConvergenceRow {
        level,
        dofs: summary.n_dofs,
        dt: lv.dt,
        h: mesh.mesh_size(),
        err_q: acc.q_error(),
        order_q: None,
        err_lambda: acc.lambda_error(),
        order_lambda: None,
        energy_residual: checker.as_ref().map(|_| energy_residual),
        energy_min_term: checker.as_ref().map(|_| energy_min),
    })
}

/// Free-surface samples `(x1, zeta)` at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceProfile {
    pub t: f64,
    pub points: Vec<(f64, f64)>,
}

/// Samples per surface edge in [`sample_surface`].
pub const PROFILE_SAMPLES_PER_EDGE: usize = 12;

/// `lambda_h` on the free surface at time `t` of the slab, sorted by `x1`.
pub fn sample_surface(
    mesh: &SpatialMesh,
    topology: &FacetTopology,
    sol: &SlabSolution,
    t: f64,
) -> SurfaceProfile {
    let p = sol.p;
    let tau = (2.0 * (t - sol.t_start) / sol.dt - 1.0).clamp(-1.0, 1.0);
    let lt = legendre(p, tau);
    let mut points = Vec::with_capacity(topology.surface_facets.len() * PROFILE_SAMPLES_PER_EDGE);
    for &f in &topology.surface_facets {
        let [va, vb] = mesh.edges[topology.facets[f].edge]
            .vertices
            .map(|v| mesh.vertices[v]);
        let c = sol.facet(f);
        let n = PROFILE_SAMPLES_PER_EDGE;
        for i in 0..n {
            let s = -1.0 + (2 * i + 1) as f64 / n as f64;
            let ls = legendre(p, s);
            let mut z = 0.0;
            for l in 0..=p {
                for j in 0..=p {
                    z += c[l * (p + 1) + j] * ls[l] * lt[j];
                }
            }
            let x1 = 0.5 * (1.0 - s) * va[0] + 0.5 * (1.0 + s) * vb[0];
            points.push((x1, z));
        }
    }
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    SurfaceProfile { t, points }
}

impl SurfaceProfile {
    pub fn to_csv(&self) -> String {
        let mut s = format!("# st-hdg profile v1 t={}\nx1,zeta\n", self.t);
        for (x, z) in &self.points {
            let _ = writeln!(s, "{x:.9e},{z:.9e}");
        }
        s
    }

    pub fn max_abs(&self) -> f64 {
        self.points.iter().fold(0.0, |a, p| a.max(p.1.abs()))
    }

    pub fn total_variation(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].1 - w[0].1).abs())
            .sum()
    }

    /// Largest `x1` where `|zeta|` exceeds `threshold`.
    pub fn front(&self, threshold: f64) -> Option<f64> {
        self.points
            .iter()
            .filter(|p| p.1.abs() > threshold)
            .map(|p| p.0)
            .fold(None, |a: Option<f64>, x| Some(a.map_or(x, |a| a.max(x))))
    }

    /// Linear interpolation of `zeta` at `x1`.
    pub fn value_at(&self, x1: f64) -> f64 {
        let pts = &self.points;
        if pts.is_empty() {
            return 0.0;
        }
        let i = pts.partition_point(|p| p.0 < x1);
        if i == 0 {
            return pts[0].1;
        }
        if i == pts.len() {
            return pts[pts.len() - 1].1;
        }
        let (x0, z0) = pts[i - 1];
        let (x1b, z1) = pts[i];
        if x1b == x0 {
            return z1;
        }
        z0 + (z1 - z0) * (x1 - x0) / (x1b - x0)
    }
}

/// Collects profiles at requested times while marching.
#[derive(Debug, Clone)]
pub struct ProfileSampler {
    times: Vec<f64>,
    pub profiles: Vec<SurfaceProfile>,
}

impl ProfileSampler {
    pub fn new(times: &[f64], t_final: f64) -> Result<Self, ReportError> {
        for &t in times {
            if !(0.0..=t_final * (1.0 + 1e-12)).contains(&t) {
                return Err(ReportError::TimeOutOfRange { t, t_final });
            }
        }
        Ok(Self {
            times: times.to_vec(),
            profiles: Vec::new(),
        })
    }

    /// Samples every requested time that falls in this slab; a time equal
    /// to `t_n` is taken from the slab ending there.
    pub fn visit(&mut self, mesh: &SpatialMesh, topology: &FacetTopology, sol: &SlabSolution) {
        let eps = 1e-9 * sol.dt;
        for &t in &self.times {
            let inside = if sol.index == 0 {
                t >= sol.t_start - eps && t <= sol.t_end() + eps
            } else {
                t > sol.t_start + eps && t <= sol.t_end() + eps
            };
            if inside && !self.profiles.iter().any(|p| p.t == t) {
                self.profiles.push(sample_surface(mesh, topology, sol, t));
            }
        }
    }
}

/// File name of the profile written for time `t`.
pub fn profile_file_name(t: f64) -> String {
    format!("profile_t{t}.csv")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    #[default]
    Harmonic,
    Wavemaker,
}

impl ProblemKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "harmonic" => Some(ProblemKind::Harmonic),
            "wavemaker" | "wave-maker" => Some(ProblemKind::Wavemaker),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshConfig {
    pub nx: usize,
    pub ny: usize,
    /// Plain-text mesh file; overrides `nx`, `ny`.
    pub file: Option<PathBuf>,
}

impl Default for MeshConfig {
    fn default() -> Self {
        Self {
            nx: 3,
            ny: 3,
            file: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarmonicConfig {
    pub zeta_max: f64,
    pub wavelength: f64,
}

impl Default for HarmonicConfig {
    fn default() -> Self {
        Self {
            zeta_max: 0.05,
            wavelength: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaveMakerConfig {
    pub amplitude: f64,
    pub frequency: f64,
    pub length: f64,
    pub depth: f64,
    pub literal: bool,
}

impl Default for WaveMakerConfig {
    fn default() -> Self {
        let s = WaveMakerSpec::default();
        Self {
            amplitude: s.amplitude,
            frequency: s.frequency,
            length: s.domain.right - s.domain.left,
            depth: s.domain.depth,
            literal: s.literal,
        }
    }
}

/// Resolved configuration of a single run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemKind,
    pub p: usize,
    pub dt: f64,
    #[serde(rename = "T", alias = "t_final")]
    pub t_final: f64,
    pub tau: f64,
    pub alpha: f64,
    pub mesh: MeshConfig,
    pub out: PathBuf,
    pub solver: SolverChoice,
    pub checkpoint_every: Option<usize>,
    pub time_quad_extra: usize,
    pub profile_times: Vec<f64>,
    pub harmonic: HarmonicConfig,
    pub wavemaker: WaveMakerConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            problem: ProblemKind::Harmonic,
            p: 1,
            dt: 0.25,
            t_final: 1.0,
            tau: 5.0,
            alpha: 0.1,
            mesh: MeshConfig::default(),
            out: PathBuf::from("out"),
            solver: SolverChoice::Direct,
            checkpoint_every: None,
            time_quad_extra: 0,
            profile_times: Vec::new(),
            harmonic: HarmonicConfig::default(),
            wavemaker: WaveMakerConfig::default(),
        }
    }
}

impl RunConfig {
    /// The settings of the wave-maker experiment: 64 x 4 cells (512 prisms),
    /// `dt = 0.2`, `T = 53.4`.
    pub fn wavemaker_preset() -> Self {
        Self {
            problem: ProblemKind::Wavemaker,
            dt: 0.2,
            t_final: 53.4,
            mesh: MeshConfig {
                nx: 64,
                ny: 4,
                file: None,
            },
            profile_times: vec![4.0, 25.8, 53.4],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ReportError> {
        let bad = |m: String| Err(ReportError::Config(m));
        if self.p == 0 {
            return bad("p must be at least 1".into());
        }
        if !(self.dt > 0.0) {
            return bad(format!("dt must be positive (got {})", self.dt));
        }
        if !(self.t_final > 0.0) {
            return bad(format!("T must be positive (got {})", self.t_final));
        }
        if !(self.tau > 0.0) {
            return bad(format!("tau must be positive (got {})", self.tau));
        }
        if !(self.alpha > 0.0) {
            return bad(format!("alpha must be positive (got {})", self.alpha));
        }
        if self.mesh.file.is_none() && (self.mesh.nx == 0 || self.mesh.ny == 0) {
            return bad("mesh.nx and mesh.ny must be positive".into());
        }
        Ok(())
    }

    /// Hash of everything that affects the numbers; the output directory is left out.
    pub fn config_hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serialises");
        if let Some(m) = v.as_object_mut() {
            m.remove("out");
        }
        short_hash(v.to_string().as_bytes())
    }

    pub fn march_params(&self) -> MarchParams {
        let mut m = MarchParams::new(self.p, self.dt, self.t_final);
        m.tau = self.tau;
        m.alpha = self.alpha;
        m.time_quad_extra = self.time_quad_extra;
        m.solver = self.solver;
        m.checkpoint_every = self.checkpoint_every;
        m
    }

    pub fn problem(&self) -> Box<dyn WaveProblem> {
        match self.problem {
            ProblemKind::Harmonic => Box::new(HarmonicWave::with_max_height(
                self.harmonic.zeta_max,
                self.harmonic.wavelength,
            )),
            ProblemKind::Wavemaker => Box::new(self.wavemaker_spec()),
        }
    }

    pub fn wavemaker_spec(&self) -> WaveMakerSpec {
        WaveMakerSpec {
            amplitude: self.wavemaker.amplitude,
            frequency: self.wavemaker.frequency,
            domain: Domain::new(0.0, self.wavemaker.length, self.wavemaker.depth),
            t_final: self.t_final,
            dt: self.dt,
            literal: self.wavemaker.literal,
        }
    }

    pub fn build_mesh(&self) -> Result<Arc<SpatialMesh>, ReportError> {
        if let Some(path) = &self.mesh.file {
            let text = std::fs::read_to_string(path)?;
            return Ok(Arc::new(SpatialMesh::from_text(&text)?));
        }
        let (domain, lateral) = match self.problem {
            ProblemKind::Harmonic => (Domain::new(-1.0, 1.0, 1.0), LateralBoundaries::Periodic),
            ProblemKind::Wavemaker => (
                Domain::new(0.0, self.wavemaker.length, self.wavemaker.depth),
                LateralBoundaries::WaveMakerLeft,
            ),
        };
        Ok(Arc::new(build_structured_mesh(
            self.mesh.nx,
            self.mesh.ny,
            domain,
            &BottomProfile::flat(),
            lateral,
        )?))
    }
}

/// Per-slab line of a single run report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlabRow {
    pub slab: usize,
    pub t_start: f64,
    pub t_end: f64,
    pub residual: f64,
    pub energy_residual: f64,
    /// Running space-time errors, when the problem has an exact solution.
    pub err_q: Option<f64>,
    pub err_lambda: Option<f64>,
}

/// Everything a single run produces besides files.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub summary: crate::slab::MarchSummary,
    pub rows: Vec<SlabRow>,
    pub profiles: Vec<SurfaceProfile>,
    pub max_energy_residual: f64,
    pub min_energy_term: f64,
}

impl RunOutcome {
    pub fn err_q(&self) -> Option<f64> {
        self.rows.last().and_then(|r| r.err_q)
    }

    pub fn err_lambda(&self) -> Option<f64> {
        self.rows.last().and_then(|r| r.err_lambda)
    }

    pub fn report_csv(&self, cfg: &RunConfig) -> String {
        let problem = match cfg.problem {
            ProblemKind::Harmonic => "harmonic",
            ProblemKind::Wavemaker => "wavemaker",
        };
        let mut s = format!(
            "# st-hdg report v1 run problem={problem} p={} dofs={} config={}\n",
            cfg.p,
            self.summary.n_dofs,
            cfg.config_hash()
        );
        s.push_str("slab,t_start,t_end,residual,energy_residual,err_q,err_lambda\n");
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6e}"));
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{:.9e},{:.9e},{:.3e},{:.3e},{},{}",
                r.slab,
                r.t_start,
                r.t_end,
                r.residual,
                r.energy_residual,
                opt(r.err_q),
                opt(r.err_lambda)
            );
        }
        s
    }
}

/// Marches one configured run, checking the energy identity on every slab,
/// accumulating errors when an exact solution exists and sampling the
/// requested surface profiles (the final time when none are requested).
pub fn execute_run(
    cfg: &RunConfig,
    checkpoint_dir: Option<&std::path::Path>,
    resume: Option<crate::slab::Checkpoint>,
) -> Result<RunOutcome, ReportError> {
    cfg.validate()?;
    let mesh = cfg.build_mesh()?;
    let topology = FacetTopology::new(&mesh)?;
    let problem = cfg.problem();
    let params = cfg.march_params();
    let times = if cfg.profile_times.is_empty() {
        vec![cfg.t_final]
    } else {
        cfg.profile_times.clone()
    };
    let mut sampler = ProfileSampler::new(&times, cfg.t_final)?;
    let checker = EnergyChecker::new(&LocalParams {
        p: cfg.p,
        tau: cfg.tau,
        alpha: cfg.alpha,
        dt: cfg.dt,
        time_quad_extra: cfg.time_quad_extra,
    })?;
    let mut acc = if problem.has_exact_solution() {
        Some(ErrorAccumulator::new(cfg.p)?)
    } else {
        None
    };
    let mut rows = Vec::new();
    let mut max_energy = 0.0f64;
    let mut min_term = f64::INFINITY;
    let mut failure = None;
    let io = crate::slab::MarchIo {
        checkpoint_dir,
        resume,
    };
    let summary = crate::slab::march_with(&mesh, &params, problem.as_ref(), io, |sol| {
        let terms = checker.check(&mesh, &topology, problem.as_ref(), sol);
        let rel = terms.relative_residual();
        max_energy = max_energy.max(rel);
        min_term = terms.quadratic().iter().fold(min_term, |a, b| a.min(*b));
        let (mut eq, mut el) = (None, None);
        if let Some(acc) = acc.as_mut() {
            if let Err(e) = acc.add_slab(&mesh, &topology, sol, problem.as_ref()) {
                failure = Some(e);
                return Err(SolveError::Parameters("error accumulation failed".into()));
            }
            eq = Some(acc.q_error());
            el = Some(acc.lambda_error());
        }
        sampler.visit(&mesh, &topology, sol);
        rows.push(SlabRow {
            slab: sol.index,
            t_start: sol.t_start,
            t_end: sol.t_end(),
            residual: sol.residual,
            energy_residual: rel,
            err_q: eq,
            err_lambda: el,
        });
        Ok(())
    });
    if let Some(e) = failure {
        return Err(e);
    }
    let summary = summary?;
    let mut profiles = sampler.profiles;
    profiles.sort_by(|a, b| a.t.total_cmp(&b.t));
    Ok(RunOutcome {
        summary,
        rows,
        profiles,
        max_energy_residual: max_energy,
        min_energy_term: min_term,
    })
}
