//! Property harness for the discrete solver: uniqueness, comparison,
//! symmetry, scaling, boundary behaviour and energy classes.
//!
//! Every check returns a [`VerificationReport`] listing named discrepancies
//! against tolerances. A report passes exactly when every discrepancy is at
//! most its tolerance. Checks are pure functions of their inputs, so a suite
//! of cases can be evaluated concurrently with [`run_suite`].

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{
    assemble_neg_laplacian, h1_seminorm_sq, power_field, reflect, sample_fn, Axis, Domain, Grid,
    ScalarField, Source,
};
use crate::solver::{default_init, solve_singular, ContinuationSchedule, Problem};
use crate::variational::{comparison_certificate, CertificateSettings, TruncationParams};

/// Symmetry of the source is required to this accuracy before a symmetry
/// check runs.
pub const SOURCE_SYMMETRY_TOL: f64 = 1e-13;

/// Componentwise tolerance for the sub- and supersolution inequalities.
pub const RESIDUAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Discrepancy {
    pub name: String,
    pub value: f64,
    pub tol: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Artifacts {
    pub scalars: BTreeMap<String, f64>,
    pub series: BTreeMap<String, Vec<f64>>,
    #[serde(skip)]
    pub fields: Vec<(String, ScalarField)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerificationReport {
    pub case_id: String,
    pub discrepancies: Vec<Discrepancy>,
    pub pass: bool,
    pub artifacts: Artifacts,
}

impl VerificationReport {
    pub fn new(case_id: impl Into<String>) -> Self {
        VerificationReport {
            case_id: case_id.into(),
            discrepancies: Vec::new(),
            pass: true,
            artifacts: Artifacts::default(),
        }
    }

    /// Record `value <= tol`. NaN never passes.
    pub fn check(&mut self, name: &str, value: f64, tol: f64) {
        let pass = value <= tol;
        self.pass &= pass;
        self.discrepancies.push(Discrepancy {
            name: name.to_string(),
            value,
            tol,
            pass,
        });
    }

    pub fn scalar(&mut self, name: &str, value: f64) {
        self.artifacts.scalars.insert(name.to_string(), value);
    }

    pub fn series(&mut self, name: &str, values: Vec<f64>) {
        self.artifacts.series.insert(name.to_string(), values);
    }

    pub fn field(&mut self, name: &str, field: ScalarField) {
        self.artifacts.fields.push((name.to_string(), field));
    }

    /// Largest `value / tol` over the discrepancies, the headline number of
    /// the report.
    pub fn worst(&self) -> Option<&Discrepancy> {
        self.discrepancies.iter().max_by(|a, b| {
            let ra = if a.pass {
                a.value / a.tol.max(f64::MIN_POSITIVE)
            } else {
                f64::INFINITY
            };
            let rb = if b.pass {
                b.value / b.tol.max(f64::MIN_POSITIVE)
            } else {
                f64::INFINITY
            };
            ra.total_cmp(&rb)
        })
    }
}

/// Starting guess for a continuation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Init {
    /// Positive part of the linear solve with `min(f, n0)`.
    LinearClip,
    /// The constant `fraction · max(LinearClip)` at interior nodes.
    ConstantFraction { fraction: f64 },
}

impl Init {
    pub fn resolve(
        &self,
        problem: &Problem,
        schedule: &ContinuationSchedule,
    ) -> Result<ScalarField> {
        let op = assemble_neg_laplacian(problem.grid());
        let base = default_init(&op, problem, schedule.n0)?;
        match *self {
            Init::LinearClip => Ok(base),
            Init::ConstantFraction { fraction } => {
                if !(fraction >= 0.0 && fraction.is_finite()) {
                    return Err(Error::Precondition(format!(
                        "fraction {fraction} must be >= 0"
                    )));
                }
                let c = fraction * base.max();
                let grid = problem.grid();
                let v = (0..grid.len())
                    .map(|k| if grid.is_boundary(k) { 0.0 } else { c })
                    .collect();
                ScalarField::new(grid.clone(), v)
            }
        }
    }
}

/// Max pairwise margin-interior difference between solutions from every
/// `(init, schedule)` combination.
pub fn uniqueness_check(
    problem: &Problem,
    inits: &[Init],
    schedules: &[ContinuationSchedule],
    tol: f64,
) -> Result<VerificationReport> {
    if inits.len() * schedules.len() < 2 {
        return Err(Error::Precondition(
            "uniqueness needs at least two (init, schedule) combinations".into(),
        ));
    }
    let margin = schedules[0].margin_for(problem.domain());
    let nodes = problem.grid().margin_nodes(margin)?;
    let combos: Vec<(&Init, &ContinuationSchedule)> = inits
        .iter()
        .flat_map(|i| schedules.iter().map(move |s| (i, s)))
        .collect();
    let solutions = combos
        .par_iter()
        .map(|(init, schedule)| {
            let u0 = init.resolve(problem, schedule)?;
            solve_singular(problem, schedule, Some(&u0))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut worst = 0.0_f64;
    for (a, ra) in solutions.iter().enumerate() {
        for rb in &solutions[a + 1..] {
            worst = worst.max(ra.u.max_abs_diff(&rb.u, Some(&nodes))?);
        }
    }
    let mut report = VerificationReport::new("uniqueness");
    report.check("max_pairwise_interior_diff", worst, tol);
    report.scalar("margin", margin);
    report.series(
        "interior_min",
        solutions.iter().map(|r| r.interior_min).collect(),
    );
    report.series(
        "newton_iters",
        solutions
            .iter()
            .map(|r| r.total_newton_iters() as f64)
            .collect(),
    );
    report.field("u", solutions[0].u.clone());
    Ok(report)
}

/// `max_i ((A u)_i - f_i/u_i^β)⁺ / scale_i`, how far `u` is from being a
/// discrete subsolution. Nodes with `u_i = 0 < f_i` satisfy the inequality.
pub fn subsolution_defect(u: &ScalarField, f: &ScalarField, beta: f64) -> Result<f64> {
    inequality_defect(u, f, beta, 1.0)
}

/// `max_i (f_i/u_i^β - (A u)_i)⁺ / scale_i`, how far `u` is from being a
/// discrete supersolution.
pub fn supersolution_defect(u: &ScalarField, f: &ScalarField, beta: f64) -> Result<f64> {
    inequality_defect(u, f, beta, -1.0)
}

fn inequality_defect(u: &ScalarField, f: &ScalarField, beta: f64, sign: f64) -> Result<f64> {
    u.check_same_grid(f)?;
    let grid = u.grid();
    let op = assemble_neg_laplacian(grid);
    let au = op.apply_full(u);
    let scale = op.apply_abs(&u.interior_values());
    let mut worst = 0.0_f64;
    for (i, &k) in grid.interior().iter().enumerate() {
        let (uk, fk) = (u.values()[k], f.values()[k]);
        let rhs = if fk == 0.0 { 0.0 } else { fk * uk.powf(-beta) };
        if rhs.is_infinite() {
            if sign < 0.0 {
                return Ok(f64::INFINITY);
            }
            continue;
        }
        let r = sign * (au[i] - rhs);
        let s = scale[i] + rhs.abs();
        if r > 0.0 {
            worst = worst.max(if s > 0.0 { r / s } else { f64::INFINITY });
        }
    }
    Ok(worst)
}

/// Settings for running the comparison certificate inside a comparison
/// check. `tol` bounds the gradient term and the defect of the chain
/// `gradient <= source = truncated <= 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertificateCheck {
    pub settings: CertificateSettings,
    pub k: f64,
    pub tol: f64,
}

/// Compare a subsolution `u` with a supersolution `v` of the problem with
/// source `f`. Both inequalities are verified before the ordering.
pub fn comparison_fields(
    u: &ScalarField,
    v: &ScalarField,
    f: &ScalarField,
    beta: f64,
    tol: f64,
    certificate: Option<&CertificateCheck>,
) -> Result<VerificationReport> {
    u.check_same_grid(v)?;
    let mut report = VerificationReport::new("comparison");
    report.check(
        "subsolution_defect",
        subsolution_defect(u, f, beta)?,
        RESIDUAL_TOL,
    );
    report.check(
        "supersolution_defect",
        supersolution_defect(v, f, beta)?,
        RESIDUAL_TOL,
    );
    let gap: Vec<f64> = u
        .values()
        .iter()
        .zip(v.values())
        .map(|(a, b)| a - b)
        .collect();
    let excess = gap.iter().fold(0.0_f64, |a, &g| a.max(g));
    let violations = gap.iter().filter(|&&g| g > tol).count();
    report.check("max_ordering_excess", excess, tol);
    report.scalar("violating_nodes", violations as f64);
    if let Some(c) = certificate {
        let params = TruncationParams::new(c.k, beta)?;
        let cert = comparison_certificate(u, v, f, &params, &c.settings)?;
        let chain = (cert.gradient_term - cert.source_term)
            .max((cert.source_term - cert.truncated_term).abs())
            .max(cert.truncated_term)
            .max(0.0);
        report.check("certificate_gradient_term", cert.gradient_term, c.tol);
        report.check("certificate_chain_defect", chain, c.tol);
        report.scalar("certificate_source_term", cert.source_term);
        report.scalar("certificate_max_excess", cert.max_excess);
        report.scalar("obstacle_iterations", cert.obstacle.iterations as f64);
    }
    Ok(report)
}

/// Solve with sources `f₁ <= f₂` and check `u₁ <= u₂ + tol`.
pub fn comparison_check(
    sub: &Problem,
    sup: &Problem,
    schedule: &ContinuationSchedule,
    tol: f64,
    certificate: Option<&CertificateCheck>,
) -> Result<VerificationReport> {
    sub.f().check_same_grid(sup.f())?;
    if sub.beta() != sup.beta() {
        return Err(Error::Precondition(
            "the two problems have different exponents".into(),
        ));
    }
    if !(sub.beta() > 1.0) {
        return Err(Error::Precondition(format!(
            "comparison needs beta > 1, got {}",
            sub.beta()
        )));
    }
    if let Some(k) = (0..sub.grid().len()).find(|&k| sub.f().values()[k] > sup.f().values()[k]) {
        return Err(Error::Precondition(format!("f1 > f2 at node {k}")));
    }
    let (u1, u2) = rayon::join(
        || solve_singular(sub, schedule, None),
        || solve_singular(sup, schedule, None),
    );
    let (u1, u2) = (u1?.u, u2?.u);
    let mut report = comparison_fields(&u1, &u2, sup.f(), sup.beta(), tol, certificate)?;
    report.field("u_sub", u1);
    report.field("u_super", u2);
    Ok(report)
}

/// A seeded pair `f₁ <= f₂` of nonnegative trigonometric polynomials.
#[derive(Debug, Clone)]
pub struct SourcePair {
    pub seed: u64,
    pub f1: ScalarField,
    pub f2: ScalarField,
}

const TRIG_MODES: usize = 4;

/// `c0 + Σ a_j sin(jπx) + b_j cos(jπx)` with `c0 >= Σ |a_j| + |b_j| + floor`.
fn random_trig(rng: &mut ChaCha8Rng, floor: f64) -> impl Fn([f64; 2]) -> f64 {
    let coeffs: Vec<(f64, f64)> = (0..TRIG_MODES)
        .map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect();
    let c0 = coeffs.iter().map(|(a, b)| a.abs() + b.abs()).sum::<f64>() + floor;
    move |p: [f64; 2]| {
        let x = p[0];
        c0 + coeffs
            .iter()
            .enumerate()
            .map(|(j, (a, b))| {
                let w = (j + 1) as f64 * std::f64::consts::PI;
                a * (w * x).sin() + b * (w * x).cos()
            })
            .sum::<f64>()
    }
}

/// `count` pairs with seeds `seed, seed + 1, ...`. `f₂ = f₁ + g` where `g` is
/// another nonnegative trigonometric polynomial.
pub fn random_source_pairs(
    grid: &std::sync::Arc<Grid>,
    seed: u64,
    count: usize,
) -> Vec<SourcePair> {
    (0..count as u64)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i));
            let floor = rng.gen_range(0.1..1.0);
            let p1 = random_trig(&mut rng, floor);
            let p2 = random_trig(&mut rng, 0.0);
            let f1 = sample_fn(grid, |x| p1(x).max(0.0));
            let f2 = sample_fn(grid, |x| p1(x).max(0.0) + p2(x).max(0.0));
            SourcePair {
                seed: seed.wrapping_add(i),
                f1,
                f2,
            }
        })
        .collect()
}

/// Reflect `u` through each axis in turn and compare with `u`. The source is
/// required to have the same symmetry.
pub fn symmetry_check(
    problem: &Problem,
    axes: &[Axis],
    schedule: &ContinuationSchedule,
    tol: f64,
) -> Result<VerificationReport> {
    if axes.is_empty() {
        return Err(Error::Precondition("no reflection axis given".into()));
    }
    let apply = |field: &ScalarField| -> Result<ScalarField> {
        axes.iter()
            .try_fold(field.clone(), |acc, &a| reflect(&acc, a))
    };
    let f = problem.f();
    let asym = f.max_abs_diff(&apply(f)?, None)?;
    if asym > SOURCE_SYMMETRY_TOL {
        return Err(Error::Precondition(format!(
            "source is not symmetric: |f - reflect f| = {asym:e}"
        )));
    }
    let solved = solve_singular(problem, schedule, None)?;
    let d = solved.u.max_abs_diff(&apply(&solved.u)?, None)?;
    let mut report = VerificationReport::new("symmetry");
    report.check("reflection_diff", d, tol);
    report.scalar("source_asymmetry", asym);
    report.field("u", solved.u);
    Ok(report)
}

/// `‖solve(λ^{1+β} f) - λ solve(f)‖∞`.
pub fn scaling_check(
    problem: &Problem,
    lambda: f64,
    schedule: &ContinuationSchedule,
    tol: f64,
) -> Result<VerificationReport> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Precondition(format!(
            "lambda = {lambda} must be positive"
        )));
    }
    let scaled = problem.with_source(problem.f().scaled(lambda.powf(1.0 + problem.beta())))?;
    let (u, ul) = rayon::join(
        || solve_singular(problem, schedule, None),
        || solve_singular(&scaled, schedule, None),
    );
    let (u, ul) = (u?.u, ul?.u);
    let d = ul.max_abs_diff(&u.scaled(lambda), None)?;
    let mut report = VerificationReport::new("scaling");
    report.check("scaled_solution_diff", d, tol);
    report.scalar("lambda", lambda);
    report.field("u", u);
    report.field("u_scaled", ul);
    Ok(report)
}

/// Distance window for the boundary fit, in multiples of the grid spacing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitWindow {
    pub lo: f64,
    pub hi: f64,
}

impl Default for FitWindow {
    fn default() -> Self {
        FitWindow { lo: 2.0, hi: 32.0 }
    }
}

/// Least-squares fit of `log u = log C + α log dist`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundaryFit {
    pub alpha: f64,
    pub log_c: f64,
    pub points: usize,
}

/// `q = max(1, (β + 1)/2)`.
pub fn regularity_exponent(beta: f64) -> f64 {
    f64::max(1.0, 0.5 * (beta + 1.0))
}

/// Fit the boundary exponent of `u` over nodes whose distance to the boundary
/// lies in the window.
pub fn fit_boundary_exponent(u: &ScalarField, window: FitWindow) -> Result<BoundaryFit> {
    let grid = u.grid();
    if !matches!(grid.domain(), Domain::Interval { .. }) {
        return Err(Error::Shape(
            "boundary exponent fit needs an interval".into(),
        ));
    }
    let h = grid.h_min();
    if !(window.lo > 0.5 && window.hi > window.lo) {
        return Err(Error::Precondition(format!(
            "fit window [{}h, {}h] touches the boundary or is empty",
            window.lo, window.hi
        )));
    }
    let slack = 1e-9 * h;
    let pts: Vec<(f64, f64)> = (0..grid.len())
        .filter(|&k| {
            let d = grid.dist()[k];
            d >= window.lo * h - slack && d <= window.hi * h + slack
        })
        .map(|k| (grid.dist()[k].ln(), u.values()[k]))
        .collect();
    if pts.len() < 2 {
        return Err(Error::Precondition(
            "fit window holds fewer than two nodes".into(),
        ));
    }
    if let Some(&(_, v)) = pts.iter().find(|p| !(p.1 > 0.0)) {
        return Err(Error::Domain(format!(
            "u = {v} is not positive in the fit window"
        )));
    }
    let n = pts.len() as f64;
    let (sx, sy) = pts
        .iter()
        .fold((0.0, 0.0), |(a, b), &(x, y)| (a + x, b + y.ln()));
    let (mx, my) = (sx / n, sy / n);
    let (sxy, sxx) = pts.iter().fold((0.0, 0.0), |(a, b), &(x, y)| {
        (a + (x - mx) * (y.ln() - my), b + (x - mx) * (x - mx))
    });
    let alpha = sxy / sxx;
    Ok(BoundaryFit {
        alpha,
        log_c: my - alpha * mx,
        points: pts.len(),
    })
}

/// Solve on an interval and compare the fitted exponent with `expected`,
/// which defaults to `1/q`.
pub fn boundary_exponent(
    problem: &Problem,
    window: FitWindow,
    expected: Option<f64>,
    schedule: &ContinuationSchedule,
    tol: f64,
) -> Result<(BoundaryFit, VerificationReport)> {
    let grid = problem.grid();
    if !matches!(grid.domain(), Domain::Interval { .. }) {
        return Err(Error::Shape("boundary exponent needs an interval".into()));
    }
    let h = grid.h_min();
    let near = (0..grid.len()).filter(|&k| {
        let d = grid.dist()[k];
        d > 0.0 && d <= window.hi * h * (1.0 + 1e-9)
    });
    if let Some(k) = near.clone().find(|&k| !(problem.f().values()[k] > 0.0)) {
        return Err(Error::Precondition(format!(
            "f vanishes near the boundary at node {k}"
        )));
    }
    let solved = solve_singular(problem, schedule, None)?;
    let fit = fit_boundary_exponent(&solved.u, window)?;
    let q = regularity_exponent(problem.beta());
    let target = expected.unwrap_or(1.0 / q);
    let mut report = VerificationReport::new("boundary_exponent");
    report.check(
        "alpha_relative_error",
        (fit.alpha - target).abs() / target,
        tol,
    );
    if expected.is_none() {
        report.check("alpha_q_defect", (fit.alpha * q - 1.0).abs(), tol);
    }
    report.scalar("alpha", fit.alpha);
    report.scalar("log_c", fit.log_c);
    report.scalar("q", q);
    report.scalar("target", target);
    report.scalar("fit_points", fit.points as f64);
    report.field("u", solved.u);
    Ok((fit, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyClassTolerances {
    /// Bound on `max/min` of a sequence that should stay bounded.
    pub ratio: f64,
    /// Lower bound on the raw energy growth per halving of `h` for `β >= 3`.
    pub min_growth: f64,
}

impl Default for EnergyClassTolerances {
    fn default() -> Self {
        EnergyClassTolerances {
            ratio: 1.25,
            min_growth: 0.05,
        }
    }
}

/// Dirichlet energies of `u_h` and `u_h^q` across a refinement ladder.
///
/// The `u^q` energies must stay bounded. For `β >= 3` the raw energies must
/// grow by at least `min_growth` per halving of the grid spacing; otherwise
/// they must stay bounded too.
pub fn energy_class_diagnostic(
    domain: &Domain,
    beta: f64,
    source: &Source,
    ladder: &[usize],
    schedule: &ContinuationSchedule,
    tol: &EnergyClassTolerances,
) -> Result<VerificationReport> {
    if domain.axes() != 1 {
        return Err(Error::Shape(
            "energy classes need a one-dimensional grid".into(),
        ));
    }
    if ladder.len() < 4 || ladder.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Precondition(
            "the refinement ladder needs at least four increasing resolutions".into(),
        ));
    }
    let q = regularity_exponent(beta);
    let levels = ladder
        .par_iter()
        .map(|&m| {
            let problem = Problem::from_source(*domain, m, beta, source)?;
            let u = solve_singular(&problem, schedule, None)?.u;
            let raw = h1_seminorm_sq(&u, 0.0)?;
            let powered = h1_seminorm_sq(&power_field(&u, q)?, 0.0)?;
            Ok((u.grid().h_min(), raw, powered))
        })
        .collect::<Result<Vec<_>>>()?;

    let ratio = |v: &[f64]| {
        let (lo, hi) = v
            .iter()
            .fold((f64::INFINITY, 0.0_f64), |(a, b), &x| (a.min(x), b.max(x)));
        hi / lo
    };
    let raw: Vec<f64> = levels.iter().map(|l| l.1).collect();
    let powered: Vec<f64> = levels.iter().map(|l| l.2).collect();
    let growth: Vec<f64> = levels
        .windows(2)
        .map(|w| (w[1].1 - w[0].1) / (w[0].0 / w[1].0).log2())
        .collect();
    let min_growth = growth.iter().copied().fold(f64::INFINITY, f64::min);

    let mut report = VerificationReport::new("energy_classes");
    report.check("powered_energy_ratio", ratio(&powered), tol.ratio);
    if beta >= 3.0 {
        report.check(
            "raw_growth_shortfall",
            (tol.min_growth - min_growth).max(0.0),
            0.0,
        );
    } else {
        report.check("raw_energy_ratio", ratio(&raw), tol.ratio);
    }
    report.scalar("q", q);
    report.scalar("min_growth", min_growth);
    report.series("h", levels.iter().map(|l| l.0).collect());
    report.series("raw_energy", raw);
    report.series("powered_energy", powered);
    report.series("growth_per_halving", growth);
    Ok(report)
}

/// One case of a verification suite.
#[derive(Debug, Clone)]
pub struct VerificationCase {
    pub id: String,
    pub check: Check,
}

#[derive(Debug, Clone)]
pub enum Check {
    Uniqueness {
        problem: Problem,
        inits: Vec<Init>,
        schedules: Vec<ContinuationSchedule>,
        tol: f64,
    },
    Comparison {
        sub: Problem,
        sup: Problem,
        schedule: ContinuationSchedule,
        tol: f64,
        certificate: Option<CertificateCheck>,
    },
    Symmetry {
        problem: Problem,
        axes: Vec<Axis>,
        schedule: ContinuationSchedule,
        tol: f64,
    },
    Scaling {
        problem: Problem,
        lambda: f64,
        schedule: ContinuationSchedule,
        tol: f64,
    },
    BoundaryExponent {
        problem: Problem,
        window: FitWindow,
        expected: Option<f64>,
        schedule: ContinuationSchedule,
        tol: f64,
    },
    EnergyClasses {
        domain: Domain,
        beta: f64,
        source: Source,
        ladder: Vec<usize>,
        schedule: ContinuationSchedule,
        tol: EnergyClassTolerances,
    },
}

/// Run one case; the report carries the case id.
pub fn run_case(case: &VerificationCase) -> Result<VerificationReport> {
    let mut report = match &case.check {
        Check::Uniqueness {
            problem,
            inits,
            schedules,
            tol,
        } => uniqueness_check(problem, inits, schedules, *tol),
        Check::Comparison {
            sub,
            sup,
            schedule,
            tol,
            certificate,
        } => comparison_check(sub, sup, schedule, *tol, certificate.as_ref()),
        Check::Symmetry {
            problem,
            axes,
            schedule,
            tol,
        } => symmetry_check(problem, axes, schedule, *tol),
        Check::Scaling {
            problem,
            lambda,
            schedule,
            tol,
        } => scaling_check(problem, *lambda, schedule, *tol),
        Check::BoundaryExponent {
            problem,
            window,
            expected,
            schedule,
            tol,
        } => boundary_exponent(problem, *window, *expected, schedule, *tol).map(|r| r.1),
        Check::EnergyClasses {
            domain,
            beta,
            source,
            ladder,
            schedule,
            tol,
        } => energy_class_diagnostic(domain, *beta, source, ladder, schedule, tol),
    }?;
    report.case_id = case.id.clone();
    Ok(report)
}

/// Run cases concurrently. Results come back in input order.
pub fn run_suite(cases: &[VerificationCase]) -> Vec<Result<VerificationReport>> {
    cases.par_iter().map(run_case).collect()
}

/// Seed of the randomized comparison family in [`standard_suite`].
pub const DEFAULT_SEED: u64 = 20240229;

fn unit_interval() -> Domain {
    Domain::Interval { a: 0.0, b: 1.0 }
}

fn interval_problem(m: usize, beta: f64, f: &str) -> Result<Problem> {
    Problem::from_source(unit_interval(), m, beta, &Source::parse(f)?)
}

/// The fixed suite of property checks: uniqueness for four `(β, f)`
/// pairs, comparison over a seeded family of 20 source pairs, reflection
/// symmetry on the unit square, the scaling identity, boundary exponents and
/// energy classes.
pub fn standard_suite(seed: u64) -> Result<Vec<VerificationCase>> {
    let schedule = ContinuationSchedule::default();
    let mut cases = Vec::new();

    for (beta, f, tag) in [
        (2.0, "1", "1"),
        (4.0, "1", "1"),
        (0.5, "1", "1"),
        (2.0, "x*(1-x)", "x1mx"),
    ] {
        cases.push(VerificationCase {
            id: format!("uniqueness-beta{beta}-f{tag}"),
            check: Check::Uniqueness {
                problem: interval_problem(257, beta, f)?,
                inits: vec![Init::LinearClip, Init::ConstantFraction { fraction: 0.5 }],
                schedules: vec![schedule, schedule.with_growth(4.0)],
                tol: 1e-6,
            },
        });
    }

    let base = interval_problem(129, 2.0, "1")?;
    let certificate = CertificateCheck {
        settings: CertificateSettings {
            eps: 0.05,
            tau: 1.0,
            obstacle: crate::variational::ObstacleSettings::default(),
        },
        k: 1e4,
        tol: 1e-8,
    };
    for pair in random_source_pairs(base.grid(), seed, 20) {
        cases.push(VerificationCase {
            id: format!("comparison-seed{}", pair.seed),
            check: Check::Comparison {
                sub: base.with_source(pair.f1)?,
                sup: base.with_source(pair.f2)?,
                schedule,
                tol: 1e-9,
                certificate: Some(certificate),
            },
        });
    }

    let square = Domain::Rectangle {
        ax: 0.0,
        bx: 1.0,
        ay: 0.0,
        by: 1.0,
    };
    let square_problem =
        Problem::from_source(square, 65, 2.0, &Source::parse("sin(pi*x)*sin(pi*y)")?)?;
    for (axes, tag) in [
        (vec![Axis::X], "x"),
        (vec![Axis::Y], "y"),
        (vec![Axis::X, Axis::Y], "xy"),
    ] {
        cases.push(VerificationCase {
            id: format!("symmetry-{tag}"),
            check: Check::Symmetry {
                problem: square_problem.clone(),
                axes,
                schedule,
                tol: 1e-10,
            },
        });
    }

    for beta in [1.5, 3.0] {
        for lambda in [0.1, 3.0] {
            cases.push(VerificationCase {
                id: format!("scaling-beta{beta}-lambda{lambda}"),
                check: Check::Scaling {
                    problem: interval_problem(129, beta, "1 + x")?,
                    lambda,
                    schedule,
                    tol: 1e-7,
                },
            });
        }
    }

    for beta in [2.0, 3.0, 4.0] {
        cases.push(VerificationCase {
            id: format!("boundary-beta{beta}"),
            check: Check::BoundaryExponent {
                problem: interval_problem(1025, beta, "1")?,
                window: FitWindow::default(),
                expected: None,
                schedule,
                tol: 0.05,
            },
        });
    }

    for beta in [3.0, 2.0] {
        cases.push(VerificationCase {
            id: format!("energy-beta{beta}"),
            check: Check::EnergyClasses {
                domain: unit_interval(),
                beta,
                source: Source::parse("1")?,
                ladder: vec![65, 129, 257, 513],
                schedule,
                tol: EnergyClassTolerances::default(),
            },
        });
    }
    Ok(cases)
}

/// Summary CSV header of a suite run.
pub const SUMMARY_HEADER: &str = "case_id,discrepancy,value,tol,pass";

/// Render suite results as named files: one JSON report per case, one CSV
/// per artifact field and a summary table. The output depends only on the
/// results, so equal results give byte-identical files.
pub fn suite_files(
    cases: &[VerificationCase],
    results: &[Result<VerificationReport>],
) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut summary = format!("{SUMMARY_HEADER}\n");
    for (case, result) in cases.iter().zip(results) {
        match result {
            Ok(report) => {
                let json = serde_json::to_vec_pretty(report).expect("report serializes");
                files.push((format!("{}.json", case.id), json));
                for (name, field) in &report.artifacts.fields {
                    files.push((
                        format!("{}.{name}.csv", case.id),
                        field.to_csv_string().into_bytes(),
                    ));
                }
                for d in &report.discrepancies {
                    summary.push_str(&format!(
                        "{},{},{:.16e},{:.16e},{}\n",
                        case.id, d.name, d.value, d.tol, d.pass
                    ));
                }
            }
            Err(e) => {
                let json = serde_json::json!({ "case_id": case.id, "error": e.to_string() });
                files.push((
                    format!("{}.json", case.id),
                    serde_json::to_vec_pretty(&json).expect("error serializes"),
                ));
                summary.push_str(&format!("{},error,NaN,NaN,false\n", case.id));
            }
        }
    }
    files.push(("verify_summary.csv".to_string(), summary.into_bytes()));
    files
}
