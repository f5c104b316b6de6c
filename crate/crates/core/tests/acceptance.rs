//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`). Criterion numbers given on the
//! command line select a subset, e.g. `cargo test --test acceptance -- 5 6`.
//! Failing criteria are reported, not asserted; set `ST_HDG_ACCEPTANCE_STRICT=1`
//! to turn any FAIL into a nonzero exit status.

mod common;

use std::time::Instant;

use common::{mesh, rel_diff, DenseOracle};
use st_hdg_core::basis::{make_basis, PrismGeometry, SpaceKind};
use st_hdg_core::mesh::{Domain, LateralBoundaries};
use st_hdg_core::projection::{
    measure_projection_rates, projection_system_size, ProjectionSpaces, ProjectionSystem,
    RateDirection, RateStudy,
};
use st_hdg_core::report::{
    execute_run, run_study, ConvergenceReport, RunConfig, StudyKind, StudySpec,
};
use st_hdg_core::slab::{march_collect, MarchParams};
use st_hdg_core::waves::{HarmonicWave, WaveMakerSpec, WaveProblem, ZeroProblem};

/// Reference errors `(q, lambda)` of the spatial study, first four levels.
const SPACE_P1: [(f64, f64); 4] = [
    (1.1e-3, 2.5e-2),
    (3.2e-4, 1.4e-2),
    (8.5e-5, 3.4e-3),
    (2.2e-5, 8.2e-4),
];
const SPACE_P2: [(f64, f64); 4] = [
    (4.0e-4, 1.5e-3),
    (6.0e-5, 2.3e-4),
    (7.9e-6, 3.5e-5),
    (1.0e-6, 4.8e-6),
];
/// Reference errors of the temporal study at dt = 1, 1/2, 1/4, 1/8.
const TIME_P1: [(f64, f64); 4] = [
    (1.7e-2, 1.7e-2),
    (5.1e-3, 5.1e-3),
    (1.2e-3, 1.2e-3),
    (3.0e-4, 3.0e-4),
];
const TIME_P2: [(f64, f64); 4] = [
    (3.8e-3, 3.8e-3),
    (4.8e-4, 4.8e-4),
    (5.9e-5, 5.9e-5),
    (7.5e-6, 7.5e-6),
];

const ORDER_TOL: f64 = 0.25;
const ABS_FACTOR: f64 = 3.0;
const ENERGY_TOL: f64 = 1e-8;

struct Outcome {
    id: usize,
    name: &'static str,
    pass: bool,
    detail: String,
}

/// Energy identity results gathered from every run of the suite.
#[derive(Default)]
struct EnergyLog {
    runs: usize,
    worst_residual: f64,
    min_term: f64,
}

impl EnergyLog {
    fn add(&mut self, residual: f64, min_term: f64) {
        if self.runs == 0 {
            self.min_term = min_term;
        }
        self.runs += 1;
        self.worst_residual = self.worst_residual.max(residual);
        self.min_term = self.min_term.min(min_term);
    }

    fn add_report(&mut self, r: &ConvergenceReport) {
        for row in &r.rows {
            self.add(
                row.energy_residual.unwrap_or(f64::INFINITY),
                row.energy_min_term.unwrap_or(f64::NEG_INFINITY),
            );
        }
    }

    fn ok(&self) -> bool {
        self.worst_residual < ENERGY_TOL && self.min_term >= 0.0
    }
}

fn within_factor(measured: f64, reference: f64) -> bool {
    measured <= ABS_FACTOR * reference && measured >= reference / ABS_FACTOR
}

fn fmt_orders(r: &ConvergenceReport) -> String {
    let o: Vec<String> = r
        .rows
        .iter()
        .map(|row| format!("{:.2e}/{:.2e}", row.err_q, row.err_lambda))
        .collect();
    let last = r.rows.last().unwrap();
    format!(
        "errors q/lambda [{}], final orders q {:.2} lambda {:.2}",
        o.join(", "),
        last.order_q.unwrap_or(f64::NAN),
        last.order_lambda.unwrap_or(f64::NAN)
    )
}

fn study(
    kind: StudyKind,
    p: usize,
    levels: Option<usize>,
    log: &mut EnergyLog,
) -> ConvergenceReport {
    let mut spec = StudySpec::standard(kind, p, levels);
    spec.check_energy = true;
    let report = run_study(&spec).expect("study runs");
    log.add_report(&report);
    report
}

/// Orders at the finest level and every absolute error against a reference table.
fn rate_and_magnitude(
    kind: StudyKind,
    tables: [&[(f64, f64); 4]; 2],
    log: &mut EnergyLog,
) -> (bool, String) {
    let mut pass = true;
    let mut detail = Vec::new();
    for (p, table) in [1usize, 2].into_iter().zip(tables) {
        let r = study(kind, p, Some(4), log);
        let last = r.rows.last().unwrap();
        let target = (p + 1) as f64;
        let oq = last.order_q.unwrap_or(f64::NAN);
        let ol = last.order_lambda.unwrap_or(f64::NAN);
        let orders_ok = (oq - target).abs() <= ORDER_TOL && (ol - target).abs() <= ORDER_TOL;
        let q_ok = r
            .rows
            .iter()
            .zip(table)
            .all(|(row, t)| within_factor(row.err_q, t.0));
        let l_ok = r
            .rows
            .iter()
            .zip(table)
            .all(|(row, t)| within_factor(row.err_lambda, t.1));
        pass &= orders_ok && q_ok && l_ok;
        detail.push(format!(
            "p={p}: {}; orders {} q-magnitude {} lambda-magnitude {}",
            fmt_orders(&r),
            ok_word(orders_ok),
            ok_word(q_ok),
            ok_word(l_ok)
        ));
    }
    (pass, detail.join(" | "))
}

fn ok_word(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "off"
    }
}

fn criterion_1(log: &mut EnergyLog) -> (bool, String) {
    rate_and_magnitude(StudyKind::Space, [&SPACE_P1, &SPACE_P2], log)
}

fn criterion_2(log: &mut EnergyLog) -> (bool, String) {
    rate_and_magnitude(StudyKind::Time, [&TIME_P1, &TIME_P2], log)
}

fn criterion_3(log: &mut EnergyLog) -> (bool, String) {
    let mut pass = true;
    let mut detail = Vec::new();
    for p in [1usize, 2] {
        let r = study(StudyKind::Spacetime, p, Some(4), log);
        let last = r.rows.last().unwrap();
        let lo = p as f64 - 0.3;
        let hi = p as f64 + 0.5;
        let inside = |o: Option<f64>| o.is_some_and(|o| o >= lo && o <= hi);
        let ok = inside(last.order_q) && inside(last.order_lambda);
        pass &= ok;
        detail.push(format!(
            "p={p}: {}; window [{lo:.1}, {hi:.1}]",
            fmt_orders(&r)
        ));
    }
    (pass, detail.join(" | "))
}

fn criterion_4(log: &mut EnergyLog) -> (bool, String) {
    let r = study(StudyKind::FixedH, 1, Some(9), log);
    let errs: Vec<f64> = r.rows.iter().map(|row| row.err_q).collect();
    let argmin = errs
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap();
    let monotone = errs.windows(2).all(|w| w[1] <= w[0]);
    // dt = 1/64 is level 6.
    let order_64 = r.rows[6].order_q.unwrap_or(f64::NAN);
    let pass = !monotone && (2..=4).contains(&argmin) && order_64 <= -0.4;
    let e: Vec<String> = errs.iter().map(|e| format!("{e:.3e}")).collect();
    (
        pass,
        format!(
            "err_q [{}]; minimum at dt=1/{}; order at dt=1/64 {:.2}; monotone {}",
            e.join(", "),
            1u64 << argmin,
            order_64,
            monotone
        ),
    )
}

fn criterion_5(log: &mut EnergyLog) -> (bool, String) {
    // Short runs of both problems so the energy part never rests on an empty log.
    for p in 1..=3 {
        let harmonic = RunConfig {
            p,
            ..RunConfig::default()
        };
        let mut maker = RunConfig::wavemaker_preset();
        maker.p = p;
        maker.t_final = 4.0;
        maker.profile_times = vec![];
        for cfg in [harmonic, maker] {
            let out = execute_run(&cfg, None, None).expect("energy run");
            log.add(out.max_energy_residual, out.min_energy_term);
        }
    }
    let meshes = [
        mesh(
            3,
            3,
            Domain::new(-1.0, 1.0, 1.0),
            LateralBoundaries::Periodic,
        ),
        mesh(3, 2, Domain::new(0.0, 1.5, 1.0), LateralBoundaries::Walls),
        mesh(
            8,
            2,
            Domain::new(0.0, 10.0, 1.0),
            LateralBoundaries::WaveMakerLeft,
        ),
    ];
    let mut worst = 0.0f64;
    for m in &meshes {
        for p in 1..=3 {
            let params = MarchParams::new(p, 0.25, 0.75);
            for s in march_collect(m, &params, &ZeroProblem).expect("zero march") {
                worst = s
                    .lambda
                    .iter()
                    .chain(&s.element_coeffs)
                    .fold(worst, |a, b| a.max(b.abs()));
            }
        }
    }
    let zero_ok = worst < 1e-11;
    (
        zero_ok && log.ok(),
        format!(
            "zero data max |coefficient| {worst:.1e}; energy identity over {} runs: worst relative residual {:.1e}, min quadratic term {:.1e}",
            log.runs, log.worst_residual, log.min_term
        ),
    )
}

fn criterion_6() -> (bool, String) {
    let wave = HarmonicWave::standard();
    let maker = WaveMakerSpec {
        domain: Domain::new(0.0, 4.0, 1.0),
        ..WaveMakerSpec::default()
    };
    let cases: [(
        &str,
        usize,
        usize,
        Domain,
        LateralBoundaries,
        &dyn WaveProblem,
    ); 3] = [
        (
            "periodic",
            2,
            2,
            Domain::new(0.0, 1.0, 1.0),
            LateralBoundaries::Periodic,
            &wave,
        ),
        (
            "walls",
            2,
            2,
            Domain::new(0.0, 1.0, 1.0),
            LateralBoundaries::Walls,
            &wave,
        ),
        (
            "wavemaker",
            4,
            1,
            maker.domain,
            LateralBoundaries::WaveMakerLeft,
            &maker,
        ),
    ];
    let mut worst = 0.0f64;
    let mut max_tris = 0;
    for (_, nx, ny, domain, lateral, problem) in cases {
        let m = mesh(nx, ny, domain, lateral);
        max_tris = max_tris.max(m.num_triangles());
        for p in [1, 2] {
            let dt = 0.2;
            let dense = DenseOracle::new(&m, p, 5.0, 0.1, dt).march(problem, 3);
            let condensed =
                march_collect(&m, &MarchParams::new(p, dt, 3.0 * dt), problem).expect("march");
            for (d, c) in dense.iter().zip(&condensed) {
                let de: Vec<f64> = d.elements.iter().flat_map(|x| x.iter().copied()).collect();
                let dl: Vec<f64> = d.lambda.iter().flat_map(|x| x.iter().copied()).collect();
                worst = worst
                    .max(rel_diff(&c.element_coeffs, &de))
                    .max(rel_diff(&c.lambda, &dl));
            }
        }
    }
    (
        worst < 1e-9 && max_tris <= 8,
        format!("max relative difference {worst:.1e} over 3 meshes (<= {max_tris} triangles), p in {{1, 2}}, 3 slabs"),
    )
}

fn criterion_7() -> (bool, String) {
    let mut pass = true;
    let mut detail = Vec::new();
    let geom = PrismGeometry::new([[0.1, -0.3], [0.4, -0.2], [0.2, 0.05]], 0.3, 0.2);
    for p in 1..=3 {
        let spaces = ProjectionSpaces::new(p).expect("spaces");
        let square = spaces.n_unknowns() == spaces.n_equations()
            && spaces.n_unknowns() == projection_system_size(p);
        let sys = ProjectionSystem::new(&spaces, geom, 5.0, 0.1);
        let nonsingular = sys.is_ok();
        // Degree p in space and in time.
        let pp = p as i32;
        let q = move |x: [f64; 2], t: f64| {
            [
                x[0].powi(pp) - 2.0 * x[1] * t.powi(pp) + 0.3,
                x[1].powi(pp) * (1.0 - t) + x[0] * x[1].powi(pp - 1),
            ]
        };
        let v = move |x: [f64; 2], t: f64| (x[0] + x[1]).powi(pp) * t + t.powi(pp) - x[0];
        let mut repro = f64::INFINITY;
        if let Ok(sys) = &sys {
            let pair = sys.solve(&sys.rhs(&q, &v));
            let basis = make_basis(SpaceKind::PrismPP, p).unwrap();
            repro = 0.0;
            for r in [
                [0.1, 0.2, -0.9],
                [0.7, 0.2, 0.3],
                [0.05, 0.9, 1.0],
                [0.3, 0.3, -0.1],
            ] {
                let (x, t) = geom.to_physical(r);
                let (vals, _) = basis.eval(r);
                let dot = |c: &nalgebra::DVector<f64>| {
                    vals.iter().zip(c.iter()).map(|(a, b)| a * b).sum::<f64>()
                };
                let e = q(x, t);
                repro = repro
                    .max((dot(&pair.q1) - e[0]).abs())
                    .max((dot(&pair.q2) - e[1]).abs())
                    .max((dot(&pair.v) - v(x, t)).abs());
            }
        }
        let rows = measure_projection_rates(&HarmonicWave::standard(), &RateStudy::standard(p))
            .expect("rates");
        let last = |dir: RateDirection| {
            rows.iter()
                .rfind(|r| r.direction == dir)
                .and_then(|r| r.order)
                .unwrap_or(f64::NAN)
        };
        let (oh, odt) = (last(RateDirection::H), last(RateDirection::Dt));
        let target = (p + 1) as f64;
        let ok = square
            && nonsingular
            && repro < 1e-11
            && (oh - target).abs() <= ORDER_TOL
            && (odt - target).abs() <= ORDER_TOL;
        pass &= ok;
        detail.push(format!(
            "p={p}: size {} square {square} nonsingular {nonsingular}, reproduction {repro:.1e}, orders h {oh:.2} dt {odt:.2}",
            spaces.n_unknowns()
        ));
    }
    (pass, detail.join(" | "))
}

fn criterion_8(log: &mut EnergyLog) -> (bool, String) {
    let mut pass = true;
    let mut detail = Vec::new();
    let mut tv = Vec::new();
    for p in 1..=3 {
        let mut cfg = RunConfig::wavemaker_preset();
        cfg.p = p;
        let prisms = 2 * cfg.mesh.nx * cfg.mesh.ny;
        let out = match execute_run(&cfg, None, None) {
            Ok(o) => o,
            Err(e) => {
                pass = false;
                detail.push(format!("p={p}: solver failure: {e}"));
                continue;
            }
        };
        log.add(out.max_energy_residual, out.min_energy_term);
        let at = |t: f64| out.profiles.iter().find(|pr| (pr.t - t).abs() < 1e-9);
        let (Some(p4), Some(p25), Some(p53)) = (at(4.0), at(25.8), at(53.4)) else {
            pass = false;
            detail.push(format!("p={p}: missing profiles"));
            continue;
        };
        let amp = [p4, p25, p53]
            .iter()
            .map(|pr| pr.max_abs())
            .fold(0.0, f64::max);
        // Leading edge: last point above 10% of the profile's own peak.
        let front = p4.front(0.1 * p4.max_abs()).unwrap_or(f64::INFINITY);
        let reflection = p53
            .points
            .iter()
            .filter(|(x, _)| *x >= 9.0)
            .map(|(x, z)| (z - p25.value_at(*x)).abs())
            .fold(0.0, f64::max);
        let front_ok = front < 5.0;
        let refl_ok = reflection > 0.1 * amp;
        pass &= prisms == 512 && front_ok && refl_ok;
        tv.push(p53.total_variation());
        detail.push(format!(
            "p={p}: {prisms} prisms, {} slabs, front {front:.2} ({}), reflection {:.0}% of max amplitude ({}), TV {:.4}",
            out.summary.slabs,
            ok_word(front_ok),
            100.0 * reflection / amp,
            ok_word(refl_ok),
            p53.total_variation()
        ));
    }
    let tv_ok = tv.len() == 3 && tv.windows(2).all(|w| w[1] < w[0]);
    pass &= tv_ok;
    detail.push(format!("TV decreasing in p: {}", ok_word(tv_ok)));
    (pass, detail.join(" | "))
}

fn main() {
    let selected: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let want = |id: usize| selected.is_empty() || selected.contains(&id);
    let strict = std::env::var("ST_HDG_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let mut log = EnergyLog::default();
    let mut results: Vec<Outcome> = Vec::new();
    let mut run = |id: usize,
                   name: &'static str,
                   limit_s: f64,
                   f: &mut dyn FnMut(&mut EnergyLog) -> (bool, String)| {
        if !want(id) {
            return;
        }
        let t0 = Instant::now();
        let (pass, detail) = f(&mut log);
        let secs = t0.elapsed().as_secs_f64();
        let pass = pass && secs <= limit_s;
        eprintln!("  [{id}] done in {secs:.1}s");
        results.push(Outcome {
            id,
            name,
            pass,
            detail: format!("{detail} ({secs:.0}s)"),
        });
    };
    run(1, "spatial convergence", 600.0, &mut criterion_1);
    run(2, "temporal convergence", 900.0, &mut criterion_2);
    run(3, "space-time convergence", 900.0, &mut criterion_3);
    run(4, "fixed-h divergence", 1200.0, &mut criterion_4);
    run(6, "condensation oracle", f64::INFINITY, &mut |_| {
        criterion_6()
    });
    run(7, "projection suite", f64::INFINITY, &mut |_| criterion_7());
    run(8, "wave maker", f64::INFINITY, &mut criterion_8);
    // Runs last so that it sees the energy checks of every other run.
    run(5, "well-posedness", f64::INFINITY, &mut criterion_5);
    results.sort_by_key(|r| r.id);
    let mut failed = 0;
    for r in &results {
        let word = if r.pass { "PASS" } else { "FAIL" };
        failed += usize::from(!r.pass);
        println!("{word} criterion {} {}: {}", r.id, r.name, r.detail);
    }
    println!(
        "acceptance: {} of {} PASS",
        results.len() - failed,
        results.len()
    );
    if strict && failed > 0 {
        std::process::exit(1);
    }
}
