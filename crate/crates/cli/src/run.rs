//! Execution of a resolved [`RunConfig`].
//!
//! Every subcommand writes into the output directory: the resolved
//! configuration (`resolved.conf`), CSV fields, JSON reports, a summary CSV
//! and a human-readable `run.log`. CSV and JSON outputs depend only on the
//! configuration; wall times go to the log, and to the sweep summary only
//! when `timing = true`.

use std::fs;
use std::path::Path;
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde_json::json;
use singular_elliptic::grid::{h1_seminorm_sq, power_field, Domain, Source};
use singular_elliptic::solver::{solve_singular, ContinuationSchedule, Problem, SolveReport};
use singular_elliptic::variational::{
    hat_residuals, minimize_obstacle, CertificateSettings, ObstacleProblem, TruncationParams,
};
use singular_elliptic::verify::{
    random_source_pairs, regularity_exponent, run_suite, standard_suite, suite_files,
    CertificateCheck, Check, EnergyClassTolerances, FitWindow, Init, VerificationCase,
};
use singular_elliptic::Error;

use crate::config::{CheckKind, Command, RunConfig, Suite};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFICATION_FAILED: i32 = 1;
pub const EXIT_SOLVER_ERROR: i32 = 2;
pub const EXIT_CONFIG_ERROR: i32 = 3;

/// Errors that stem from the inputs rather than the numerics.
fn is_input_error(e: &Error) -> bool {
    matches!(
        e,
        Error::InvalidResolution(_)
            | Error::InvalidDomain(_)
            | Error::Data(_)
            | Error::Domain(_)
            | Error::Shape(_)
            | Error::Margin(_)
            | Error::Contract(_)
            | Error::Expr { .. }
    )
}

fn exit_code_for(e: &Error) -> i32 {
    if is_input_error(e) {
        EXIT_CONFIG_ERROR
    } else {
        EXIT_SOLVER_ERROR
    }
}

/// Lines of `run.log`, mirrored to the logger.
struct RunLog {
    lines: Vec<String>,
}

impl RunLog {
    fn line(&mut self, s: String) {
        info!("{s}");
        self.lines.push(s);
    }

    fn warn(&mut self, s: String) {
        warn!("{s}");
        self.lines.push(format!("warning: {s}"));
    }
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> std::io::Result<()> {
    fs::write(dir.join(name), bytes)
}

fn to_json<T: serde::Serialize>(v: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(v).expect("serializable");
    out.push(b'\n');
    out
}

/// Execute the configured subcommand and return the process exit code.
pub fn run(cfg: &RunConfig) -> i32 {
    let start = Instant::now();
    let mut log = RunLog { lines: Vec::new() };
    if let Err(e) = fs::create_dir_all(&cfg.out) {
        log::error!("cannot create {}: {e}", cfg.out.display());
        return EXIT_SOLVER_ERROR;
    }
    log.line(format!("command: {}", cfg.command.name()));
    let result = write(&cfg.out, "resolved.conf", cfg.to_config_string().as_bytes())
        .map_err(Error::from)
        .and_then(|_| match cfg.command {
            Command::Solve => solve(cfg, &mut log),
            Command::Obstacle => obstacle(cfg, &mut log),
            Command::Verify => verify(cfg, &mut log),
            Command::Sweep => sweep(cfg, &mut log),
        });
    let code = match result {
        Ok(code) => code,
        Err(e) => {
            log::error!("{e}");
            log.lines.push(format!("error: {e}"));
            exit_code_for(&e)
        }
    };
    log.line(format!("exit code {code}"));
    log.lines
        .push(format!("elapsed {:.3}s", start.elapsed().as_secs_f64()));
    let mut text = log.lines.join("\n");
    text.push('\n');
    if let Err(e) = write(&cfg.out, "run.log", text.as_bytes()) {
        log::error!("cannot write run.log: {e}");
        return code.max(EXIT_SOLVER_ERROR);
    }
    code
}

fn source(cfg: &RunConfig) -> singular_elliptic::Result<Source> {
    cfg.f.as_ref().expect("validated").load()
}

fn domain(cfg: &RunConfig) -> Domain {
    cfg.domain.expect("validated")
}

fn build_problem(cfg: &RunConfig, beta: f64, m: usize) -> singular_elliptic::Result<Problem> {
    Problem::from_source(domain(cfg), m, beta, &source(cfg)?)
}

pub const SUMMARY_HEADER: &str =
    "beta,m,growth,status,interior_min,energy,powered_energy,steps,newton_iters,weak_residual";

/// One summary row; `wall` is appended when timing is enabled.
fn summary_row(
    beta: f64,
    m: usize,
    growth: f64,
    result: &singular_elliptic::Result<SolveReport>,
    wall: Option<f64>,
) -> String {
    let mut row = format!("{beta},{m},{growth},");
    let body = result.as_ref().map_err(|e| e.to_string()).and_then(|r| {
        let q = regularity_exponent(beta);
        let energy = h1_seminorm_sq(&r.u, 0.0).map_err(|e| e.to_string())?;
        let powered = power_field(&r.u, q)
            .and_then(|p| h1_seminorm_sq(&p, 0.0))
            .map_err(|e| e.to_string())?;
        Ok(format!(
            "{},{:.16e},{:.16e},{:.16e},{},{},{:.16e}",
            if r.converged { "ok" } else { "not_converged" },
            r.interior_min,
            energy,
            powered,
            r.steps.len(),
            r.total_newton_iters(),
            r.weak_residual
        ))
    });
    match body {
        Ok(b) => row.push_str(&b),
        Err(_) => row.push_str("error,,,,,,"),
    }
    if let Some(w) = wall {
        row.push_str(&format!(",{w:.6}"));
    }
    row
}

fn summary_header(timing: bool) -> String {
    if timing {
        format!("{SUMMARY_HEADER},wall_time_s")
    } else {
        SUMMARY_HEADER.to_string()
    }
}

fn solve(cfg: &RunConfig, log: &mut RunLog) -> singular_elliptic::Result<i32> {
    let beta = cfg.beta.expect("validated");
    let problem = build_problem(cfg, beta, cfg.m)?;
    log.line(format!(
        "solve on {} with m = {}, beta = {beta}",
        domain(cfg),
        cfg.m
    ));
    let t = Instant::now();
    let result = solve_singular(&problem, &cfg.schedule, None);
    let wall = t.elapsed().as_secs_f64();
    let summary = format!(
        "{}\n{}\n",
        summary_header(cfg.timing),
        summary_row(
            beta,
            cfg.m,
            cfg.schedule.growth,
            &result,
            cfg.timing.then_some(wall)
        )
    );
    write(&cfg.out, "summary.csv", summary.as_bytes())?;
    match result {
        Ok(report) => {
            report
                .u
                .write_csv(fs::File::create(cfg.out.join("u.csv"))?)?;
            write(&cfg.out, "report.json", &to_json(&report))?;
            log.line(format!(
                "{} continuation steps, {} Newton iterations, interior min {:e}, weak residual {:e}",
                report.steps.len(),
                report.total_newton_iters(),
                report.interior_min,
                report.weak_residual
            ));
            log.line(format!("solve took {wall:.3}s"));
            Ok(EXIT_OK)
        }
        Err(e) => {
            write(
                &cfg.out,
                "report.json",
                &to_json(&json!({ "error": e.to_string() })),
            )?;
            Err(e)
        }
    }
}

fn obstacle(cfg: &RunConfig, log: &mut RunLog) -> singular_elliptic::Result<i32> {
    let beta = cfg.beta.expect("validated");
    let params = TruncationParams::new(cfg.k, beta)?;
    let problem = build_problem(cfg, beta, cfg.m)?;
    log.line(format!(
        "obstacle: supersolution from the singular solve, k = {}",
        cfg.k
    ));
    let v = solve_singular(&problem, &cfg.schedule, None)?.u;
    v.write_csv(fs::File::create(cfg.out.join("u.csv"))?)?;
    let res = minimize_obstacle(
        &ObstacleProblem::new(problem.f().clone(), v, params)?,
        &cfg.obstacle,
    )?;
    res.w.write_csv(fs::File::create(cfg.out.join("w.csv"))?)?;
    let min_hat = hat_residuals(&res.w, problem.f(), &params)?
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    let mut doc = serde_json::to_value(&res).expect("serializable");
    doc["min_hat_residual"] = json!(min_hat);
    write(&cfg.out, "obstacle.json", &to_json(&doc))?;
    log.line(format!(
        "{} iterations, J = {:e}, KKT ({:e}, {:e}, {:e}), min hat residual {min_hat:e}",
        res.iterations, res.energy, res.kkt_lower, res.kkt_upper, res.kkt_interior
    ));
    Ok(EXIT_OK)
}

/// Checks applicable to the configured problem when `checks = auto`.
fn auto_checks(cfg: &RunConfig, problem: &Problem) -> Vec<CheckKind> {
    let d = domain(cfg);
    let mut out = vec![CheckKind::Uniqueness];
    if problem.beta() > 1.0 {
        out.push(CheckKind::Comparison);
    }
    let symmetric = cfg.axes.iter().try_fold(problem.f().clone(), |f, &a| {
        singular_elliptic::grid::reflect(&f, a)
    });
    if symmetric.is_ok_and(|r| {
        r.max_abs_diff(problem.f(), None)
            .is_ok_and(|d| d <= singular_elliptic::verify::SOURCE_SYMMETRY_TOL)
    }) {
        out.push(CheckKind::Symmetry);
    }
    out.push(CheckKind::Scaling);
    if matches!(d, Domain::Interval { .. }) {
        out.push(CheckKind::Boundary);
    }
    if d.axes() == 1 {
        out.push(CheckKind::Energy);
    }
    out
}

fn config_cases(cfg: &RunConfig) -> singular_elliptic::Result<Vec<VerificationCase>> {
    let beta = cfg.beta.expect("validated");
    let problem = build_problem(cfg, beta, cfg.m)?;
    let checks = cfg
        .checks
        .clone()
        .unwrap_or_else(|| auto_checks(cfg, &problem));
    let schedule = cfg.schedule;
    let tol = &cfg.tolerances;
    let mut cases = Vec::new();
    for kind in checks {
        match kind {
            CheckKind::Uniqueness => cases.push(VerificationCase {
                id: "uniqueness".into(),
                check: Check::Uniqueness {
                    problem: problem.clone(),
                    inits: vec![Init::LinearClip, Init::ConstantFraction { fraction: 0.5 }],
                    schedules: vec![schedule, schedule.with_growth(schedule.growth * 2.0)],
                    tol: tol.uniqueness,
                },
            }),
            CheckKind::Comparison => {
                let certificate = CertificateCheck {
                    settings: CertificateSettings {
                        eps: cfg.eps,
                        tau: cfg.tau,
                        obstacle: cfg.obstacle,
                    },
                    k: cfg.k,
                    tol: tol.certificate,
                };
                let comparison = |id: String, sub: Problem, sup: Problem| VerificationCase {
                    id,
                    check: Check::Comparison {
                        sub,
                        sup,
                        schedule,
                        tol: tol.comparison,
                        certificate: Some(certificate),
                    },
                };
                cases.push(comparison(
                    "comparison-half".into(),
                    problem.with_source(problem.f().scaled(0.5))?,
                    problem.clone(),
                ));
                for pair in random_source_pairs(problem.grid(), cfg.seed, cfg.pairs) {
                    cases.push(comparison(
                        format!("comparison-seed{}", pair.seed),
                        problem.with_source(pair.f1)?,
                        problem.with_source(pair.f2)?,
                    ));
                }
            }
            CheckKind::Symmetry => cases.push(VerificationCase {
                id: "symmetry".into(),
                check: Check::Symmetry {
                    problem: problem.clone(),
                    axes: cfg.axes.clone(),
                    schedule,
                    tol: tol.symmetry,
                },
            }),
            CheckKind::Scaling => cases.push(VerificationCase {
                id: "scaling".into(),
                check: Check::Scaling {
                    problem: problem.clone(),
                    lambda: cfg.lambda,
                    schedule,
                    tol: tol.scaling,
                },
            }),
            CheckKind::Boundary => cases.push(VerificationCase {
                id: "boundary".into(),
                check: Check::BoundaryExponent {
                    problem: problem.clone(),
                    window: FitWindow::default(),
                    expected: None,
                    schedule,
                    tol: tol.boundary,
                },
            }),
            CheckKind::Energy => cases.push(VerificationCase {
                id: "energy".into(),
                check: Check::EnergyClasses {
                    domain: domain(cfg),
                    beta,
                    source: source(cfg)?,
                    ladder: cfg.ladder.clone(),
                    schedule,
                    tol: EnergyClassTolerances::default(),
                },
            }),
        }
    }
    Ok(cases)
}

fn verify(cfg: &RunConfig, log: &mut RunLog) -> singular_elliptic::Result<i32> {
    let cases = match cfg.suite {
        Suite::Standard => standard_suite(cfg.seed)?,
        Suite::Config => config_cases(cfg)?,
    };
    log.line(format!("running {} verification cases", cases.len()));
    let results = run_suite(&cases);
    for (name, bytes) in suite_files(&cases, &results) {
        write(&cfg.out, &name, &bytes)?;
    }
    let mut code = EXIT_OK;
    for (case, r) in cases.iter().zip(&results) {
        match r {
            Ok(report) => {
                let worst = report.worst().map_or(String::new(), |d| {
                    format!(" (worst {} = {:e}, tol {:e})", d.name, d.value, d.tol)
                });
                log.line(format!(
                    "{} {}{worst}",
                    if report.pass { "PASS" } else { "FAIL" },
                    case.id
                ));
                if !report.pass {
                    code = code.max(EXIT_VERIFICATION_FAILED);
                }
            }
            Err(e) => {
                log.warn(format!("ERROR {}: {e}", case.id));
                code = code.max(
                    if is_input_error(e) || matches!(e, Error::Precondition(_)) {
                        EXIT_VERIFICATION_FAILED
                    } else {
                        EXIT_SOLVER_ERROR
                    },
                );
            }
        }
    }
    Ok(code)
}

fn sweep(cfg: &RunConfig, log: &mut RunLog) -> singular_elliptic::Result<i32> {
    let or = |list: &[f64], scalar: f64| {
        if list.is_empty() {
            vec![scalar]
        } else {
            list.to_vec()
        }
    };
    let betas = or(&cfg.sweep_beta, cfg.beta.unwrap_or(f64::NAN));
    let growths = or(&cfg.sweep_growth, cfg.schedule.growth);
    let ms = if cfg.sweep_m.is_empty() {
        vec![cfg.m]
    } else {
        cfg.sweep_m.clone()
    };
    let mut cells: Vec<(f64, usize, f64)> = Vec::new();
    for &b in &betas {
        for &m in &ms {
            cells.extend(growths.iter().map(|&g| (b, m, g)));
        }
    }
    log.line(format!("sweep over {} cells", cells.len()));
    let src = source(cfg)?;
    let rows: Vec<(String, Option<String>, f64)> = cells
        .par_iter()
        .map(|&(beta, m, growth)| {
            let t = Instant::now();
            let schedule = ContinuationSchedule {
                growth,
                ..cfg.schedule
            };
            let result = Problem::from_source(domain(cfg), m, beta, &src)
                .and_then(|p| solve_singular(&p, &schedule, None));
            let wall = t.elapsed().as_secs_f64();
            let err = result.as_ref().err().map(|e| e.to_string());
            (
                summary_row(beta, m, growth, &result, cfg.timing.then_some(wall)),
                err,
                wall,
            )
        })
        .collect();
    let mut summary = summary_header(cfg.timing);
    summary.push('\n');
    let mut failed = 0;
    for ((beta, m, growth), (row, err, wall)) in cells.iter().zip(&rows) {
        summary.push_str(row);
        summary.push('\n');
        match err {
            Some(e) => {
                failed += 1;
                log.warn(format!("beta = {beta}, m = {m}, growth = {growth}: {e}"));
            }
            None => log.line(format!(
                "beta = {beta}, m = {m}, growth = {growth}: ok in {wall:.3}s"
            )),
        }
    }
    write(&cfg.out, "summary.csv", summary.as_bytes())?;
    Ok(if failed > 0 {
        EXIT_VERIFICATION_FAILED
    } else {
        EXIT_OK
    })
}
