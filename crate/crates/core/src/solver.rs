//! Regularized problems and the continuation that drives them to the
//! singular limit.
//!
//! For each regularization index `n` the discrete problem
//!
//! ```text
//!     A u = min(f, n) / (u + 1/n)^β   at interior nodes,   u = 0 on the boundary
//! ```
//!
//! is the Euler-Lagrange equation of the strictly convex energy
//! `½ uᵀSu - Σ M_i Ψ_i(u_i)` with `Ψ_i' = min(f_i, n) / (s + 1/n)^β`. Newton's
//! method is globalized by backtracking on that energy. The continuation runs
//! `n = n0, n0 ρ, n0 ρ², ...` with warm starts until the solution stops moving
//! on the margin sub-domain, then (optionally) solves the unregularized
//! discrete problem `A u = f / u^β` from the last iterate.

use std::sync::Arc;

use log::debug;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, StepRecord};
use crate::grid::{
    assemble_neg_laplacian, build_grid, h1_seminorm_sq, sample, solve_linear, DiscreteOperator,
    Domain, Grid, ScalarField, Source,
};

/// The data `(Ω, β, f)` of the singular problem.
#[derive(Debug, Clone)]
pub struct Problem {
    beta: f64,
    f: ScalarField,
}

impl Problem {
    pub fn new(beta: f64, f: ScalarField) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::Domain(format!("beta = {beta} must be positive")));
        }
        if let Some(k) = f.values().iter().position(|&v| v < 0.0) {
            return Err(Error::Domain(format!("f is negative at node {k}")));
        }
        Ok(Problem { beta, f })
    }

    /// Sample `source` on a fresh grid and build the problem.
    pub fn from_source(domain: Domain, m: usize, beta: f64, source: &Source) -> Result<Self> {
        let grid = build_grid(domain, m)?;
        Problem::new(beta, sample(source, &grid, true)?)
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn f(&self) -> &ScalarField {
        &self.f
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.f.grid()
    }

    pub fn domain(&self) -> &Domain {
        self.grid().domain()
    }

    /// Same domain and exponent, different source.
    pub fn with_source(&self, f: ScalarField) -> Result<Self> {
        self.f.check_same_grid(&f)?;
        Problem::new(self.beta, f)
    }

    pub fn is_degenerate(&self) -> bool {
        self.f.values().iter().all(|&v| v == 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonSettings {
    /// Tolerance on the componentwise relative residual
    /// `|A u - F(u)|_i / ((|A| |u|)_i + |F(u)|_i)`.
    pub tol: f64,
    pub max_iters: usize,
    /// Backtracking factor in (0, 1).
    pub damping: f64,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        NewtonSettings {
            tol: 1e-11,
            max_iters: 100,
            damping: 0.5,
        }
    }
}

impl NewtonSettings {
    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iters == 0 || !(self.damping > 0.0 && self.damping < 1.0) {
            return Err(Error::Contract(format!("invalid Newton settings {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularizedConfig {
    /// Regularization index, `n >= 1`.
    pub n: f64,
    pub newton: NewtonSettings,
}

impl RegularizedConfig {
    pub fn new(n: f64) -> Self {
        RegularizedConfig {
            n,
            newton: NewtonSettings::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContinuationSchedule {
    pub n0: f64,
    /// Growth factor `ρ > 1` between consecutive regularization indices.
    pub growth: f64,
    pub n_max: f64,
    /// Stop once the sup-norm change on the margin sub-domain between
    /// consecutive indices drops to this value.
    pub interior_tol: f64,
    /// Margin of the sub-domain; `None` means 1/16 of the domain width.
    pub margin: Option<f64>,
    /// Finish with a Newton solve of the unregularized discrete problem.
    pub limit_solve: bool,
    pub newton: NewtonSettings,
}

impl Default for ContinuationSchedule {
    fn default() -> Self {
        ContinuationSchedule {
            n0: 1.0,
            growth: 2.0,
            n_max: 2f64.powi(40),
            interior_tol: 1e-8,
            margin: None,
            limit_solve: true,
            newton: NewtonSettings::default(),
        }
    }
}

impl ContinuationSchedule {
    pub fn with_growth(mut self, growth: f64) -> Self {
        self.growth = growth;
        self
    }

    pub fn margin_for(&self, domain: &Domain) -> f64 {
        self.margin.unwrap_or(domain.width() / 16.0)
    }

    fn validate(&self) -> Result<()> {
        if !(self.n0 >= 1.0) || !(self.growth > 1.0) || !(self.interior_tol > 0.0) {
            return Err(Error::Contract(format!(
                "need n0 >= 1, growth > 1, interior_tol > 0 (got {}, {}, {})",
                self.n0, self.growth, self.interior_tol
            )));
        }
        if !(self.n_max >= self.n0) {
            return Err(Error::Contract(format!(
                "n_max {} < n0 {}",
                self.n_max, self.n0
            )));
        }
        self.newton.validate()
    }
}

/// Outcome of the final unregularized solve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitRecord {
    pub newton_iters: usize,
    pub residual: f64,
    /// Sup-norm change on the margin sub-domain from the last regularized
    /// iterate.
    pub interior_change: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    #[serde(skip)]
    pub u: ScalarField,
    pub steps: Vec<StepRecord>,
    pub limit: Option<LimitRecord>,
    pub margin: f64,
    pub interior_min: f64,
    pub positive: bool,
    pub converged: bool,
    /// `h² · max_i |(A u)_i - f_i / u_i^β|` over interior nodes.
    pub weak_residual: f64,
}

impl SolveReport {
    pub fn total_newton_iters(&self) -> usize {
        self.steps.iter().map(|s| s.newton_iters).sum::<usize>()
            + self.limit.as_ref().map_or(0, |l| l.newton_iters)
    }
}

/// `f_n = min(f, n)`.
pub fn truncate_source(f: &ScalarField, n: f64) -> ScalarField {
    f.map(|v| v.min(n))
}

/// Minimum over the nodes at distance at least `margin` from the boundary.
pub fn interior_min(field: &ScalarField, margin: f64) -> Result<f64> {
    let nodes = field.grid().margin_nodes(margin)?;
    Ok(nodes
        .iter()
        .map(|&k| field.values()[k])
        .fold(f64::INFINITY, f64::min))
}

/// Statistics of one Newton solve.
#[derive(Debug, Clone, PartialEq)]
pub struct NewtonStats {
    pub iters: usize,
    pub residuals: Vec<f64>,
}

impl NewtonStats {
    pub fn final_residual(&self) -> f64 {
        self.residuals.last().copied().unwrap_or(0.0)
    }
}

/// The right-hand side `s ↦ c_i / (s + shift)^β` at interior node `i`.
struct Nonlinearity<'a> {
    coeff: &'a [f64],
    beta: f64,
    shift: f64,
}

impl Nonlinearity<'_> {
    fn value(&self, i: usize, s: f64) -> f64 {
        let c = self.coeff[i];
        if c == 0.0 {
            0.0
        } else {
            c * (s + self.shift).powf(-self.beta)
        }
    }

    /// `-d/ds` of the value.
    fn slope(&self, i: usize, s: f64) -> f64 {
        let c = self.coeff[i];
        if c == 0.0 {
            0.0
        } else {
            self.beta * c * (s + self.shift).powf(-self.beta - 1.0)
        }
    }

    /// Primitive of the value in `s`.
    fn primitive(&self, i: usize, s: f64) -> f64 {
        let c = self.coeff[i];
        if c == 0.0 {
            return 0.0;
        }
        let t = s + self.shift;
        if self.beta == 1.0 {
            c * t.ln()
        } else {
            c * t.powf(1.0 - self.beta) / (1.0 - self.beta)
        }
    }

    fn admissible(&self, i: usize, current: f64, trial: f64) -> bool {
        if self.shift > 0.0 {
            trial + self.shift >= 0.5 * self.shift
        } else {
            self.coeff[i] == 0.0 || trial >= 0.5 * current
        }
    }
}

fn energy(op: &DiscreteOperator, nl: &Nonlinearity, x: &[f64]) -> (f64, f64) {
    let sx = op.apply_stiffness(x);
    let quad: f64 = 0.5 * sx.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    let mut pot = 0.0;
    let mut mag = quad.abs();
    for (i, (&xi, &w)) in x.iter().zip(op.mass()).enumerate() {
        let p = w * nl.primitive(i, xi);
        pot += p;
        mag += p.abs();
    }
    (quad - pot, mag)
}

fn weighted_norm(op: &DiscreteOperator, g: &[f64]) -> f64 {
    g.iter()
        .zip(op.mass())
        .map(|(v, w)| w * v * v)
        .sum::<f64>()
        .sqrt()
}

fn newton(
    op: &DiscreteOperator,
    nl: &Nonlinearity,
    mut x: Vec<f64>,
    settings: &NewtonSettings,
) -> std::result::Result<(Vec<f64>, NewtonStats), Vec<f64>> {
    let n = op.len();
    let mut residuals = Vec::new();
    for it in 0..=settings.max_iters {
        let ax = op.apply(&x);
        let scale = op.apply_abs(&x);
        let rhs: Vec<f64> = (0..n).map(|i| nl.value(i, x[i])).collect();
        let g: Vec<f64> = (0..n).map(|i| ax[i] - rhs[i]).collect();
        let bwd = (0..n)
            .map(|i| {
                let d = scale[i] + rhs[i].abs();
                if g[i] == 0.0 {
                    0.0
                } else {
                    g[i].abs() / d
                }
            })
            .fold(0.0, f64::max);
        residuals.push(bwd);
        if bwd <= settings.tol {
            return Ok((
                x,
                NewtonStats {
                    iters: it,
                    residuals,
                },
            ));
        }
        if it == settings.max_iters || !bwd.is_finite() {
            break;
        }
        let jac: Vec<f64> = (0..n).map(|i| nl.slope(i, x[i])).collect();
        let Ok(fact) = op.factor(Some(&jac)) else {
            break;
        };
        let minus_g: Vec<f64> = g.iter().map(|v| -v).collect();
        let dx = fact.solve(&minus_g);

        // Armijo backtracking on the convex energy, inside the admissible set.
        // Close to the solution energy differences drown in rounding, so a
        // sufficient decrease of the residual norm is accepted as well.
        let (e0, mag) = energy(op, nl, &x);
        let slope: f64 = (0..n).map(|i| op.mass()[i] * g[i] * dx[i]).sum();
        let slack = 16.0 * f64::EPSILON * mag;
        let g_norm = weighted_norm(op, &g);
        let mut t = 1.0;
        let mut accepted = None;
        while t > 1e-12 {
            let trial: Vec<f64> = (0..n).map(|i| x[i] + t * dx[i]).collect();
            if (0..n).all(|i| nl.admissible(i, x[i], trial[i])) {
                let (e1, _) = energy(op, nl, &trial);
                let ok = e1 <= e0 + 1e-4 * t * slope + slack || {
                    let at = op.apply(&trial);
                    let gt: Vec<f64> = (0..n).map(|i| at[i] - nl.value(i, trial[i])).collect();
                    weighted_norm(op, &gt) <= (1.0 - 1e-4 * t) * g_norm
                };
                if ok {
                    accepted = Some(trial);
                    break;
                }
            }
            t *= settings.damping;
        }
        match accepted {
            Some(trial) => x = trial,
            None => break,
        }
    }
    Err(residuals)
}

fn check_init(grid: &Arc<Grid>, init: &ScalarField) -> Result<()> {
    if !(Arc::ptr_eq(grid, init.grid()) || **grid == **init.grid()) {
        return Err(Error::Shape(
            "initial guess lives on a different grid".into(),
        ));
    }
    if let Some(k) = init.values().iter().position(|&v| v < 0.0) {
        return Err(Error::Contract(format!(
            "initial guess is negative at node {k}"
        )));
    }
    if let Some(k) = grid
        .boundary_nodes()
        .into_iter()
        .find(|&k| init.values()[k] != 0.0)
    {
        return Err(Error::Contract(format!(
            "initial guess is nonzero at boundary node {k}"
        )));
    }
    Ok(())
}

fn clip_nonnegative(mut x: Vec<f64>) -> Vec<f64> {
    for v in x.iter_mut() {
        debug_assert!(
            *v >= -1e-10 * (1.0 + v.abs()),
            "Newton iterate went negative: {v}"
        );
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    x
}

/// Solve the regularized problem for index `cfg.n` by damped Newton,
/// starting from `init`.
pub fn solve_regularized(
    problem: &Problem,
    cfg: &RegularizedConfig,
    init: &ScalarField,
) -> Result<ScalarField> {
    let op = assemble_neg_laplacian(problem.grid());
    solve_regularized_with(&op, problem, cfg, init).map(|(u, _)| u)
}

/// As [`solve_regularized`], with a prebuilt operator and Newton statistics.
pub fn solve_regularized_with(
    op: &DiscreteOperator,
    problem: &Problem,
    cfg: &RegularizedConfig,
    init: &ScalarField,
) -> Result<(ScalarField, NewtonStats)> {
    if !(cfg.n >= 1.0) {
        return Err(Error::Contract(format!(
            "regularization index n = {} < 1",
            cfg.n
        )));
    }
    cfg.newton.validate()?;
    let grid = problem.grid();
    check_init(grid, init)?;
    let fn_trunc = truncate_source(problem.f(), cfg.n);
    let coeff = fn_trunc.interior_values();
    let nl = Nonlinearity {
        coeff: &coeff,
        beta: problem.beta(),
        shift: 1.0 / cfg.n,
    };
    let (x, stats) = newton(op, &nl, init.interior_values(), &cfg.newton).map_err(|residuals| {
        Error::RegularizedSolve {
            n: cfg.n,
            residuals,
        }
    })?;
    debug!(
        "n = {:e}: {} Newton iterations, residual {:e}",
        cfg.n,
        stats.iters,
        stats.final_residual()
    );
    Ok((
        ScalarField::from_interior(grid.clone(), &clip_nonnegative(x)),
        stats,
    ))
}

/// Newton solve of the unregularized discrete problem `A u = f / u^β` from a
/// starting point that is positive wherever `f` is.
pub fn solve_limit(
    op: &DiscreteOperator,
    problem: &Problem,
    init: &ScalarField,
    settings: &NewtonSettings,
) -> Result<(ScalarField, NewtonStats)> {
    let grid = problem.grid();
    check_init(grid, init)?;
    let coeff = problem.f().interior_values();
    let x0 = init.interior_values();
    if let Some(i) = (0..x0.len()).find(|&i| coeff[i] > 0.0 && !(x0[i] > 0.0)) {
        return Err(Error::Contract(format!(
            "limit solve needs a positive start where f > 0 (interior node {i})"
        )));
    }
    let nl = Nonlinearity {
        coeff: &coeff,
        beta: problem.beta(),
        shift: 0.0,
    };
    let (x, stats) =
        newton(op, &nl, x0, settings).map_err(|residuals| Error::RegularizedSolve {
            n: f64::INFINITY,
            residuals,
        })?;
    Ok((
        ScalarField::from_interior(grid.clone(), &clip_nonnegative(x)),
        stats,
    ))
}

/// `h² max_i |(A u)_i - f_i / u_i^β|` over interior nodes.
pub fn weak_residual(op: &DiscreteOperator, problem: &Problem, u: &ScalarField) -> f64 {
    let grid = problem.grid();
    let au = op.apply(&u.interior_values());
    let h = grid.h_min();
    grid.interior()
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let f = problem.f().values()[k];
            let rhs = if f == 0.0 {
                0.0
            } else {
                f * u.values()[k].powf(-problem.beta())
            };
            (au[i] - rhs).abs()
        })
        .fold(0.0, f64::max)
        * h
        * h
}

/// The default starting point: the linear solve with source `min(f, n0)`,
/// clipped to be nonnegative.
pub fn default_init(op: &DiscreteOperator, problem: &Problem, n0: f64) -> Result<ScalarField> {
    let u = solve_linear(op, &truncate_source(problem.f(), n0))?;
    Ok(u.map(|v| v.max(0.0)))
}

/// Run the continuation in `n` and return the singular solution.
pub fn solve_singular(
    problem: &Problem,
    schedule: &ContinuationSchedule,
    init: Option<&ScalarField>,
) -> Result<SolveReport> {
    schedule.validate()?;
    let grid = problem.grid().clone();
    let margin = schedule.margin_for(grid.domain());
    let margin_nodes = grid.margin_nodes(margin)?;
    let op = assemble_neg_laplacian(&grid);

    if problem.is_degenerate() {
        let u = ScalarField::zeros(grid);
        return Ok(SolveReport {
            interior_min: interior_min(&u, margin)?,
            u,
            steps: Vec::new(),
            limit: None,
            margin,
            positive: false,
            converged: true,
            weak_residual: 0.0,
        });
    }

    let mut u = match init {
        Some(u0) => {
            check_init(&grid, u0)?;
            u0.clone()
        }
        None => default_init(&op, problem, schedule.n0)?,
    };
    let mut steps: Vec<StepRecord> = Vec::new();
    let mut n = schedule.n0;
    let mut prev: Option<ScalarField> = None;
    loop {
        let cfg = RegularizedConfig {
            n,
            newton: schedule.newton,
        };
        let (un, stats) = solve_regularized_with(&op, problem, &cfg, &u)?;
        let change = match &prev {
            Some(p) => Some(un.max_abs_diff(p, Some(&margin_nodes))?),
            None => None,
        };
        steps.push(StepRecord {
            n,
            newton_iters: stats.iters,
            residual: stats.final_residual(),
            interior_change: change,
        });
        u = un;
        if change.is_some_and(|c| c <= schedule.interior_tol) {
            break;
        }
        if n * schedule.growth > schedule.n_max {
            return Err(Error::Continuation {
                n_max: schedule.n_max,
                history: steps,
            });
        }
        prev = Some(u.clone());
        n *= schedule.growth;
    }

    let mut limit = None;
    if schedule.limit_solve {
        let (ul, stats) = solve_limit(&op, problem, &u, &schedule.newton)?;
        limit = Some(LimitRecord {
            newton_iters: stats.iters,
            residual: stats.final_residual(),
            interior_change: ul.max_abs_diff(&u, Some(&margin_nodes))?,
        });
        u = ul;
    }

    let imin = interior_min(&u, margin)?;
    Ok(SolveReport {
        weak_residual: weak_residual(&op, problem, &u),
        u,
        steps,
        limit,
        margin,
        interior_min: imin,
        positive: imin > 0.0,
        converged: true,
    })
}

/// `int |grad (u - eps)⁺|²`.
pub fn positive_part_energy(u: &ScalarField, eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::Domain(format!("eps = {eps} must be positive")));
    }
    h1_seminorm_sq(&u.map(|v| (v - eps).max(0.0)), 0.0)
}

/// Re-solve on each resolution and return the energies of `(u_h - eps)⁺`.
pub fn dirichlet_excess(
    domain: Domain,
    beta: f64,
    source: &Source,
    eps: f64,
    refinements: &[usize],
    schedule: &ContinuationSchedule,
) -> Result<Vec<f64>> {
    refinements
        .iter()
        .map(|&m| {
            let problem = Problem::from_source(domain, m, beta, source)?;
            let report = solve_singular(&problem, schedule, None)?;
            positive_part_energy(&report.u, eps)
        })
        .collect()
}
