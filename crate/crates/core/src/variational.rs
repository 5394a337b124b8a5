//! Truncated energies, obstacle minimization and the comparison certificate.
//!
//! For `k >= 1` and `β > 1` the singular nonlinearity `-s^{-β}` is clipped at
//! level `-k` (and continued by `-k` for `s <= 0`). Its primitive, normalized
//! to vanish at `s = 1`, is convex and decreasing, so
//!
//! ```text
//!     J(φ) = ½ ∫ |∇φ|² + ∫ f Φ(φ)
//! ```
//!
//! is convex on the whole space. Its minimizer over `0 <= φ <= v` (for a
//! supersolution `v`) satisfies a one-sided variational inequality against
//! every nonnegative test function; that inequality is what drives the weak
//! comparison principle and is checked node by node here.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{assemble_neg_laplacian, h1_seminorm_sq, DiscreteOperator, Grid, ScalarField};

/// Truncation level `k` and exponent `β` of the clipped nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncationParams {
    k: f64,
    beta: f64,
}

impl TruncationParams {
    pub fn new(k: f64, beta: f64) -> Result<Self> {
        if !(k >= 1.0 && k.is_finite()) {
            return Err(Error::Domain(format!(
                "truncation level k = {k} must be >= 1"
            )));
        }
        if !(beta > 1.0 && beta.is_finite()) {
            return Err(Error::Domain(format!("beta = {beta} must be > 1")));
        }
        Ok(TruncationParams { k, beta })
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// The point `k^{-1/β}` where `-s^{-β}` meets the level `-k`.
    pub fn kink(&self) -> f64 {
        self.k.powf(-1.0 / self.beta)
    }

    /// `max{-s^{-β}, -k}` for `s > 0`, and `-k` for `s <= 0`.
    pub fn nonlinearity(&self, s: f64) -> f64 {
        if s > 0.0 {
            (-s.powf(-self.beta)).max(-self.k)
        } else {
            -self.k
        }
    }

    /// The primitive of [`Self::nonlinearity`] vanishing at `s = 1`.
    pub fn primitive(&self, s: f64) -> f64 {
        let b = self.beta;
        let sk = self.kink();
        if s >= sk {
            (s.powf(1.0 - b) - 1.0) / (b - 1.0)
        } else {
            (sk.powf(1.0 - b) - 1.0) / (b - 1.0) + self.k * (sk - s)
        }
    }

    /// Derivative of [`Self::primitive`]; identical to the nonlinearity.
    pub fn primitive_derivative(&self, s: f64) -> f64 {
        self.nonlinearity(s)
    }
}

/// The odd truncation `sign(s) min{|s|, τ}`.
pub fn odd_truncation(s: f64, tau: f64) -> f64 {
    assert!(tau > 0.0, "truncation level must be positive");
    if s >= 0.0 {
        s.min(tau)
    } else {
        -((-s).min(tau))
    }
}

/// `J(φ) = ½ ∫|∇φ|² + ∫ f Φ(φ)` with the grid's quadrature.
pub fn energy(phi: &ScalarField, f: &ScalarField, params: &TruncationParams) -> Result<f64> {
    phi.check_same_grid(f)?;
    let dirichlet = h1_seminorm_sq(phi, 0.0)?;
    let w = phi.grid().weights();
    let pot: f64 = phi
        .values()
        .iter()
        .zip(f.values())
        .zip(w)
        .map(|((&p, &fv), &wk)| {
            if fv == 0.0 {
                0.0
            } else {
                wk * fv * params.primitive(p)
            }
        })
        .sum();
    Ok(0.5 * dirichlet + pot)
}

/// Minimize `J` over `K = {φ : 0 <= φ <= v, φ = 0 on the boundary}`.
#[derive(Debug, Clone)]
pub struct ObstacleProblem {
    f: ScalarField,
    obstacle: ScalarField,
    params: TruncationParams,
}

impl ObstacleProblem {
    pub fn new(f: ScalarField, obstacle: ScalarField, params: TruncationParams) -> Result<Self> {
        f.check_same_grid(&obstacle)?;
        if let Some(k) = f.values().iter().position(|&v| v < 0.0) {
            return Err(Error::Domain(format!("f is negative at node {k}")));
        }
        if let Some(k) = obstacle.values().iter().position(|&v| v < 0.0) {
            return Err(Error::Domain(format!("obstacle is negative at node {k}")));
        }
        Ok(ObstacleProblem {
            f,
            obstacle,
            params,
        })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.f.grid()
    }

    pub fn f(&self) -> &ScalarField {
        &self.f
    }

    pub fn obstacle(&self) -> &ScalarField {
        &self.obstacle
    }

    pub fn params(&self) -> &TruncationParams {
        &self.params
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ObstacleResult {
    #[serde(skip)]
    pub w: ScalarField,
    pub energy: f64,
    /// Largest violation of `∂J >= 0` at nodes on the lower bound.
    pub kkt_lower: f64,
    /// Largest violation of `∂J <= 0` at nodes on the upper bound.
    pub kkt_upper: f64,
    /// Largest `|∂J|` at nodes strictly between the bounds.
    pub kkt_interior: f64,
    pub iterations: usize,
}

/// Nodes within this distance of a bound count as active.
pub const ACTIVE_BAND: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObstacleSettings {
    /// Tolerance on the KKT residuals of the pointwise gradient.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for ObstacleSettings {
    fn default() -> Self {
        ObstacleSettings {
            tol: 1e-10,
            max_iters: 200_000,
        }
    }
}

/// Interior-node view of the discrete functional. Gradients are pointwise,
/// `r = A w + f g(w)`, i.e. Euclidean gradients divided by the quadrature
/// weights.
struct Discrete<'a> {
    op: DiscreteOperator,
    f: Vec<f64>,
    upper: Vec<f64>,
    params: &'a TruncationParams,
}

impl Discrete<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        let sx = self.op.apply_stiffness(x);
        let quad: f64 = 0.5 * sx.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        let pot: f64 = (0..x.len())
            .filter(|&i| self.f[i] != 0.0)
            .map(|i| self.op.mass()[i] * self.f[i] * self.params.primitive(x[i]))
            .sum();
        quad + pot
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut r = self.op.apply(x);
        for (i, ri) in r.iter_mut().enumerate() {
            if self.f[i] != 0.0 {
                *ri += self.f[i] * self.params.nonlinearity(x[i]);
            }
        }
        r
    }

    /// Reduced Newton direction: the free block of `A + diag(f g'(x))` is
    /// solved against `-r`, nodes held at a bound stay put.
    fn newton_direction(&self, x: &[f64], r: &[f64]) -> Option<Vec<f64>> {
        const PIN: f64 = 1e30;
        let n = x.len();
        let (b, kink) = (self.params.beta, self.params.kink());
        let mut fixed = vec![false; n];
        let mut shift = vec![0.0; n];
        for i in 0..n {
            let v = self.upper[i];
            fixed[i] = v <= 2.0 * ACTIVE_BAND
                || (x[i] <= ACTIVE_BAND && r[i] > 0.0)
                || (x[i] >= v - ACTIVE_BAND && r[i] < 0.0);
            shift[i] = if fixed[i] {
                PIN
            } else if x[i] > kink {
                self.f[i] * b * x[i].powf(-b - 1.0)
            } else {
                0.0
            };
        }
        let rhs: Vec<f64> = (0..n).map(|i| if fixed[i] { 0.0 } else { -r[i] }).collect();
        let mut d = self.op.factor(Some(&shift)).ok()?.solve(&rhs);
        for i in 0..n {
            if fixed[i] {
                d[i] = 0.0;
            }
        }
        d.iter().all(|v| v.is_finite()).then_some(d)
    }

    /// Largest KKT violation in excess of the componentwise rounding level
    /// `8 ε (|A||x| + f|g(x)|)` of the pointwise gradient.
    fn kkt_above_rounding(&self, x: &[f64], r: &[f64]) -> f64 {
        let ax = self.op.apply_abs(x);
        let mut worst = 0.0_f64;
        for i in 0..x.len() {
            let v = self.upper[i];
            if v <= 2.0 * ACTIVE_BAND {
                continue;
            }
            let viol = if x[i] <= ACTIVE_BAND {
                -r[i]
            } else if x[i] >= v - ACTIVE_BAND {
                r[i]
            } else {
                r[i].abs()
            };
            let floor =
                8.0 * f64::EPSILON * (ax[i] + self.f[i] * self.params.nonlinearity(x[i]).abs());
            worst = worst.max(viol - floor);
        }
        worst
    }

    fn project(&self, i: usize, s: f64) -> f64 {
        s.max(0.0).min(self.upper[i])
    }

    /// `(lower, upper, interior)` KKT residuals.
    fn kkt(&self, x: &[f64], r: &[f64]) -> (f64, f64, f64) {
        let (mut lo, mut hi, mut free) = (0.0_f64, 0.0_f64, 0.0_f64);
        for i in 0..x.len() {
            let v = self.upper[i];
            if v <= 2.0 * ACTIVE_BAND {
                continue;
            }
            if x[i] <= ACTIVE_BAND {
                lo = lo.max(-r[i]);
            } else if x[i] >= v - ACTIVE_BAND {
                hi = hi.max(r[i]);
            } else {
                free = free.max(r[i].abs());
            }
        }
        (lo, hi, free)
    }
}

pub fn minimize_obstacle(
    problem: &ObstacleProblem,
    settings: &ObstacleSettings,
) -> Result<ObstacleResult> {
    minimize_obstacle_from(problem, None, settings)
}

/// Projected Newton on the free nodes, falling back for good to a spectral
/// projected gradient with nonmonotone Armijo backtracking once a Newton
/// step fails its line search. Both run in the metric of the quadrature
/// weights so that the projection stays a pointwise clamp to `[0, v]`.
pub fn minimize_obstacle_from(
    problem: &ObstacleProblem,
    start: Option<&ScalarField>,
    settings: &ObstacleSettings,
) -> Result<ObstacleResult> {
    const MEMORY: usize = 10;
    const STEP_MIN: f64 = 1e-12;
    const STEP_MAX: f64 = 1e12;

    let grid = problem.grid().clone();
    let disc = Discrete {
        op: assemble_neg_laplacian(&grid),
        f: problem.f.interior_values(),
        upper: problem.obstacle.interior_values(),
        params: &problem.params,
    };
    let n = disc.op.len();
    let mut x: Vec<f64> = match start {
        Some(s) => {
            s.check_same_grid(&problem.f)?;
            let v = s.interior_values();
            (0..n).map(|i| disc.project(i, v[i])).collect()
        }
        None => vec![0.0; n],
    };
    let mass = disc.op.mass().to_vec();
    let dot = |a: &[f64], b: &[f64]| -> f64 { (0..n).map(|i| mass[i] * a[i] * b[i]).sum() };

    let mut r = disc.gradient(&x);
    let mut val = disc.value(&x);
    let mut recent = vec![val];
    let mut history = Vec::new();
    let pg0: f64 = (0..n)
        .map(|i| (disc.project(i, x[i] - r[i]) - x[i]).abs())
        .fold(0.0, f64::max);
    let mut step = if pg0 > 0.0 {
        (1.0 / pg0).clamp(STEP_MIN, STEP_MAX)
    } else {
        1.0
    };

    let finish = |x: &[f64], (lo, hi, free): (f64, f64, f64), it: usize| {
        let w = ScalarField::from_interior(grid.clone(), x);
        Ok(ObstacleResult {
            energy: energy(&w, &problem.f, &problem.params)?,
            w,
            kkt_lower: lo,
            kkt_upper: hi,
            kkt_interior: free,
            iterations: it,
        })
    };
    let mut newton = true;
    for it in 0..=settings.max_iters {
        let (lo, hi, free) = disc.kkt(&x, &r);
        let kkt = lo.max(hi).max(free);
        history.push(kkt);
        if kkt <= settings.tol {
            return finish(&x, (lo, hi, free), it);
        }
        if it == settings.max_iters {
            break;
        }

        if newton {
            if let Some(d) = disc.newton_direction(&x, &r) {
                let slack = 16.0 * f64::EPSILON * val.abs().max(1.0);
                let mut t = 1.0;
                let accepted = loop {
                    let trial: Vec<f64> =
                        (0..n).map(|i| disc.project(i, x[i] + t * d[i])).collect();
                    let s: Vec<f64> = (0..n).map(|i| trial[i] - x[i]).collect();
                    let v = disc.value(&trial);
                    if v <= val + 1e-4 * dot(&r, &s).min(0.0) + slack {
                        break Some((trial, v));
                    }
                    t *= 0.5;
                    if t < 1e-10 {
                        break None;
                    }
                };
                if let Some((x_new, val_new)) = accepted {
                    let r_new = disc.gradient(&x_new);
                    let (a, b, c) = disc.kkt(&x_new, &r_new);
                    // a step that no longer moves the residual is rounding noise
                    if x_new != x && a.max(b).max(c) < kkt {
                        x = x_new;
                        r = r_new;
                        val = val_new;
                        recent = vec![val];
                        continue;
                    }
                }
            }
            newton = false;
            if disc.kkt_above_rounding(&x, &r) <= settings.tol {
                return finish(&x, (lo, hi, free), it);
            }
        }

        let d: Vec<f64> = (0..n)
            .map(|i| disc.project(i, x[i] - step * r[i]) - x[i])
            .collect();
        let slope = dot(&r, &d);
        let reference = recent.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let slack = 16.0 * f64::EPSILON * val.abs().max(1.0);
        let mut t = 1.0;
        let (x_new, val_new) = loop {
            let trial: Vec<f64> = (0..n).map(|i| disc.project(i, x[i] + t * d[i])).collect();
            let v = disc.value(&trial);
            if v <= reference + 1e-4 * t * slope + slack || t < 1e-14 {
                break (trial, v);
            }
            t *= 0.5;
        };
        let r_new = disc.gradient(&x_new);
        let s: Vec<f64> = (0..n).map(|i| x_new[i] - x[i]).collect();
        let y: Vec<f64> = (0..n).map(|i| r_new[i] - r[i]).collect();
        let sy = dot(&s, &y);
        step = if sy > 0.0 {
            (dot(&s, &s) / sy).clamp(STEP_MIN, STEP_MAX)
        } else {
            STEP_MAX
        };
        if s.iter().all(|&v| v == 0.0) {
            // stagnated at rounding level; restart the spectral step
            step = 1.0 / disc.op.norm_inf();
        }
        x = x_new;
        r = r_new;
        val = val_new;
        recent.push(val);
        if recent.len() > MEMORY {
            recent.remove(0);
        }
    }
    Err(Error::ObstacleNonConvergence { history })
}

fn check_test_function(psi: &ScalarField) -> Result<()> {
    if let Some(k) = psi.values().iter().position(|&v| v < 0.0) {
        return Err(Error::Contract(format!(
            "test function is negative at node {k}"
        )));
    }
    let g = psi.grid();
    if let Some(k) = g
        .boundary_nodes()
        .into_iter()
        .find(|&k| psi.values()[k] != 0.0)
    {
        return Err(Error::Contract(format!(
            "test function is nonzero at boundary node {k}"
        )));
    }
    Ok(())
}

/// `∫ ∇w·∇ψ + ∫ f Φ'(w) ψ` for a nonnegative test function `ψ` vanishing on
/// the boundary. Nonnegative whenever `w` minimizes `J` over `[0, v]` with `v`
/// a supersolution.
pub fn vi_residual(
    w: &ScalarField,
    psi: &ScalarField,
    f: &ScalarField,
    params: &TruncationParams,
) -> Result<f64> {
    w.check_same_grid(psi)?;
    w.check_same_grid(f)?;
    check_test_function(psi)?;
    let grid = w.grid();
    let (wv, pv, fv) = (w.values(), psi.values(), f.values());
    let stiff: f64 = grid
        .edges()
        .iter()
        .map(|e| e.coeff * (wv[e.a] - wv[e.b]) * (pv[e.a] - pv[e.b]))
        .sum();
    let src: f64 = (0..grid.len())
        .filter(|&k| pv[k] != 0.0 && fv[k] != 0.0)
        .map(|k| grid.weights()[k] * fv[k] * params.primitive_derivative(wv[k]) * pv[k])
        .sum();
    Ok(stiff + src)
}

/// [`vi_residual`] against the hat function of every interior node, in
/// interior order.
pub fn hat_residuals(
    w: &ScalarField,
    f: &ScalarField,
    params: &TruncationParams,
) -> Result<Vec<f64>> {
    w.check_same_grid(f)?;
    let op = assemble_neg_laplacian(w.grid());
    let sw = op.apply_full(w);
    let fv = f.interior_values();
    let wv = w.interior_values();
    Ok((0..op.len())
        .map(|i| op.mass()[i] * (sw[i] + fv[i] * params.primitive_derivative(wv[i])))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertificateSettings {
    pub eps: f64,
    pub tau: f64,
    pub obstacle: ObstacleSettings,
}

/// Numerical transcript of the weak comparison argument for a subsolution
/// `u` and a supersolution `v`.
#[derive(Debug, Clone, Serialize)]
pub struct ComparisonCertificate {
    pub eps: f64,
    pub tau: f64,
    pub k: f64,
    /// `∫ |∇ T_τ((u - w - ε)⁺)|²`.
    pub gradient_term: f64,
    /// `∫ f (u^{-β} + Φ'(w)) T_τ((u - w - ε)⁺)`.
    pub source_term: f64,
    /// `∫ f (-Φ'(u) + Φ'(w)) T_τ((u - w - ε)⁺)`.
    pub truncated_term: f64,
    /// `max (u - w - ε)⁺`.
    pub max_excess: f64,
    /// `max (u - v)`.
    pub max_gap: f64,
    pub obstacle: ObstacleResult,
}

impl ComparisonCertificate {
    /// The chain `gradient <= source = truncated <= 0`, up to `tol`.
    pub fn chain_holds(&self, tol: f64) -> bool {
        self.gradient_term <= self.source_term + tol
            && (self.source_term - self.truncated_term).abs() <= tol
            && self.truncated_term <= tol
    }
}

pub fn comparison_certificate(
    u: &ScalarField,
    v: &ScalarField,
    f: &ScalarField,
    params: &TruncationParams,
    settings: &CertificateSettings,
) -> Result<ComparisonCertificate> {
    let (eps, tau) = (settings.eps, settings.tau);
    if !(eps > 0.0 && tau > 0.0) {
        return Err(Error::Precondition(format!(
            "need eps > 0 and tau > 0 (got {eps}, {tau})"
        )));
    }
    let threshold = eps.powf(-params.beta());
    if !(threshold < params.k()) {
        return Err(Error::Precondition(format!(
            "ε^{{−β}} < k violated: {eps}^(-{}) = {threshold} >= k = {}",
            params.beta(),
            params.k()
        )));
    }
    u.check_same_grid(v)?;
    u.check_same_grid(f)?;
    if let Some(k) = u.values().iter().position(|&x| x < 0.0) {
        return Err(Error::Domain(format!(
            "subsolution is negative at node {k}"
        )));
    }
    let obstacle = minimize_obstacle(
        &ObstacleProblem::new(f.clone(), v.clone(), *params)?,
        &settings.obstacle,
    )?;
    let w = &obstacle.w;
    let grid = u.grid();
    let beta = params.beta();
    let z: Vec<f64> = (0..grid.len())
        .map(|k| odd_truncation((u.values()[k] - w.values()[k] - eps).max(0.0), tau))
        .collect();
    let z = ScalarField::new(grid.clone(), z)?;
    let mut source_term = 0.0;
    let mut truncated_term = 0.0;
    for k in 0..grid.len() {
        let (zk, fk) = (z.values()[k], f.values()[k]);
        if zk == 0.0 || fk == 0.0 {
            continue;
        }
        let (uk, wk) = (u.values()[k], w.values()[k]);
        let q = grid.weights()[k] * fk * zk;
        let gw = params.primitive_derivative(wk);
        source_term += q * (uk.powf(-beta) + gw);
        truncated_term += q * (-params.primitive_derivative(uk) + gw);
    }
    let max_excess = (0..grid.len())
        .map(|k| (u.values()[k] - w.values()[k] - eps).max(0.0))
        .fold(0.0, f64::max);
    let max_gap = (0..grid.len())
        .map(|k| u.values()[k] - v.values()[k])
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(ComparisonCertificate {
        eps,
        tau,
        k: params.k(),
        gradient_term: h1_seminorm_sq(&z, 0.0)?,
        source_term,
        truncated_term,
        max_excess,
        max_gap,
        obstacle,
    })
}
