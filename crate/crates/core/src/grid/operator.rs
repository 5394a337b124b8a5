use std::sync::Arc;

use super::banded::{BandMatrix, CholeskyBand};
use super::{Grid, ScalarField};
use crate::error::{Error, Result};

/// The negative Laplacian on interior nodes with zero Dirichlet data
/// eliminated.
///
/// Stored in symmetric form: `S` is the stiffness matrix assembled from the
/// grid's edges and `M` the diagonal of interior quadrature weights, so that
/// the pointwise operator is `A = M^{-1} S`. On uniform Cartesian grids `M`
/// is a multiple of the identity and `A` is itself symmetric. On radial grids
/// `M` carries the radial weight `r^(N-1)` and `S` is the symmetrized form.
#[derive(Debug, Clone)]
pub struct DiscreteOperator {
    grid: Arc<Grid>,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    mass: Vec<f64>,
    bandwidth: usize,
}

pub fn assemble_neg_laplacian(grid: &Arc<Grid>) -> DiscreteOperator {
    let n = grid.interior().len();
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut diag = vec![0.0; n];
    for e in grid.edges() {
        let ia = grid.interior_index(e.a);
        let ib = grid.interior_index(e.b);
        if let Some(i) = ia {
            diag[i] += e.coeff;
        }
        if let Some(j) = ib {
            diag[j] += e.coeff;
        }
        if let (Some(i), Some(j)) = (ia, ib) {
            rows[i].push((j, -e.coeff));
            rows[j].push((i, -e.coeff));
        }
    }
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    let mut bandwidth = 0;
    row_ptr.push(0);
    for (i, mut row) in rows.into_iter().enumerate() {
        row.push((i, diag[i]));
        row.sort_by_key(|&(j, _)| j);
        for (j, v) in row {
            bandwidth = bandwidth.max(i.abs_diff(j));
            cols.push(j);
            vals.push(v);
        }
        row_ptr.push(cols.len());
    }
    let mass = grid.interior().iter().map(|&k| grid.weights()[k]).collect();
    DiscreteOperator {
        grid: grid.clone(),
        row_ptr,
        cols,
        vals,
        mass,
        bandwidth,
    }
}

impl DiscreteOperator {
    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    /// Number of interior unknowns.
    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    /// Interior quadrature weights, the diagonal of `M`.
    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    /// Entries `(j, S_ij)` of row `i` of the symmetric stiffness matrix.
    pub fn stiffness_row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()]
            .iter()
            .copied()
            .zip(self.vals[r].iter().copied())
    }

    /// Entries `(j, A_ij)` of row `i` of the pointwise operator `M^{-1} S`.
    pub fn row(&self, i: usize) -> Vec<(usize, f64)> {
        let w = self.mass[i];
        self.stiffness_row(i).map(|(j, v)| (j, v / w)).collect()
    }

    pub fn apply_stiffness(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.len());
        (0..self.len())
            .map(|i| self.stiffness_row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }

    /// `A x` for interior values `x` (boundary values taken as zero).
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.apply_stiffness(x);
        for (yi, w) in y.iter_mut().zip(&self.mass) {
            *yi /= w;
        }
        y
    }

    /// `|A| |x|`, the scale against which residuals of `A x` are measured.
    pub fn apply_abs(&self, x: &[f64]) -> Vec<f64> {
        (0..self.len())
            .map(|i| {
                self.stiffness_row(i)
                    .map(|(j, v)| (v * x[j]).abs())
                    .sum::<f64>()
                    / self.mass[i]
            })
            .collect()
    }

    /// The full stencil applied at interior nodes, using the field's own
    /// boundary values instead of zero.
    pub fn apply_full(&self, field: &ScalarField) -> Vec<f64> {
        let grid = &self.grid;
        let u = field.values();
        let mut y = vec![0.0; self.len()];
        for e in grid.edges() {
            let d = e.coeff * (u[e.a] - u[e.b]);
            if let Some(i) = grid.interior_index(e.a) {
                y[i] += d;
            }
            if let Some(j) = grid.interior_index(e.b) {
                y[j] -= d;
            }
        }
        for (yi, w) in y.iter_mut().zip(&self.mass) {
            *yi /= w;
        }
        y
    }

    /// Factor `A + diag(shift)` (with `shift >= 0`) through its symmetric form
    /// `S + M diag(shift)`.
    pub fn factor(&self, shift: Option<&[f64]>) -> Result<Factorization> {
        let n = self.len();
        let mut band = BandMatrix::zeros(n, self.bandwidth);
        for i in 0..n {
            for (j, v) in self.stiffness_row(i) {
                if j <= i {
                    band.add(i, j, v);
                }
            }
            if let Some(d) = shift {
                band.add(i, i, self.mass[i] * d[i]);
            }
        }
        Ok(Factorization {
            chol: band.cholesky()?,
            mass: self.mass.clone(),
        })
    }

    /// Max-row-sum norm of `A`.
    pub fn norm_inf(&self) -> f64 {
        (0..self.len())
            .map(|i| self.stiffness_row(i).map(|(_, v)| v.abs()).sum::<f64>() / self.mass[i])
            .fold(0.0, f64::max)
    }
}

/// A factored `A + diag(shift)`.
#[derive(Debug, Clone)]
pub struct Factorization {
    chol: CholeskyBand,
    mass: Vec<f64>,
}

impl Factorization {
    /// Solve `(A + diag(shift)) x = b` for pointwise right-hand side `b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x: Vec<f64> = b.iter().zip(&self.mass).map(|(v, w)| v * w).collect();
        self.chol.solve_in_place(&mut x);
        x
    }
}

/// Solve `A u = rhs` on the interior and extend by zero to the boundary.
pub fn solve_linear(op: &DiscreteOperator, rhs: &ScalarField) -> Result<ScalarField> {
    let grid = op.grid();
    if !Arc::ptr_eq(grid, rhs.grid()) && **grid != **rhs.grid() {
        return Err(Error::Shape(
            "right-hand side lives on a different grid".into(),
        ));
    }
    let b: Vec<f64> = grid.interior().iter().map(|&k| rhs.values()[k]).collect();
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite right-hand side".into()));
    }
    let fact = op.factor(None)?;
    let mut x = fact.solve(&b);
    let b_norm = b.iter().fold(0.0_f64, |a, v| a.max(v.abs()));

    // Residuals of A x cannot be evaluated below the rounding floor of |A||x|.
    let accept = |x: &[f64]| {
        let ax = op.apply(x);
        let floor = op.apply_abs(x).iter().fold(0.0_f64, |a, &v| a.max(v));
        let res = ax
            .iter()
            .zip(&b)
            .fold(0.0_f64, |a, (p, q)| a.max((p - q).abs()));
        (
            res,
            res <= 1e-11 * (1.0 + b_norm) + 64.0 * f64::EPSILON * floor,
        )
    };
    let (mut res, mut ok) = accept(&x);
    if !ok {
        // one step of iterative refinement
        let ax = op.apply(&x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(p, q)| p - q).collect();
        let dx = fact.solve(&r);
        for (xi, d) in x.iter_mut().zip(dx) {
            *xi += d;
        }
        (res, ok) = accept(&x);
    }
    if !ok || x.iter().any(|v| !v.is_finite()) {
        return Err(Error::LinearSolve {
            reason: "residual above tolerance".into(),
            residual: res,
        });
    }
    Ok(ScalarField::from_interior(grid.clone(), &x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, sample_fn, Domain};
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn all_domains() -> Vec<Domain> {
        vec![
            Domain::Interval { a: 0.0, b: 1.0 },
            Domain::Interval { a: -2.0, b: 3.0 },
            Domain::Rectangle {
                ax: 0.0,
                bx: 1.0,
                ay: 0.0,
                by: 1.0,
            },
            Domain::Rectangle {
                ax: -1.0,
                bx: 1.0,
                ay: 0.0,
                by: 0.5,
            },
            Domain::RadialBall {
                dim: 1,
                radius: 1.0,
            },
            Domain::RadialBall {
                dim: 2,
                radius: 1.0,
            },
            Domain::RadialBall {
                dim: 3,
                radius: 2.0,
            },
            Domain::RadialAnnulus {
                dim: 2,
                inner: 1.0,
                outer: 2.0,
            },
            Domain::RadialAnnulus {
                dim: 4,
                inner: 0.5,
                outer: 1.5,
            },
        ]
    }

    #[test]
    fn interval_rows() {
        let g = build_grid(Domain::Interval { a: 0.0, b: 1.0 }, 5).unwrap();
        let op = assemble_neg_laplacian(&g);
        assert_eq!(op.len(), 3);
        assert_eq!(op.row(1), vec![(0, -16.0), (1, 32.0), (2, -16.0)]);
        assert_eq!(op.row(0), vec![(0, 32.0), (1, -16.0)]);
    }

    #[test]
    fn constant_field_only_touches_boundary_neighbours() {
        let g = build_grid(Domain::Interval { a: 0.0, b: 1.0 }, 9).unwrap();
        let op = assemble_neg_laplacian(&g);
        let y = op.apply(&vec![1.0; op.len()]);
        for (i, v) in y.iter().enumerate() {
            if i == 0 || i == op.len() - 1 {
                assert_eq!(*v, 64.0);
            } else {
                assert_eq!(*v, 0.0);
            }
        }
        let g2 = build_grid(
            Domain::Rectangle {
                ax: 0.0,
                bx: 1.0,
                ay: 0.0,
                by: 1.0,
            },
            6,
        )
        .unwrap();
        let op2 = assemble_neg_laplacian(&g2);
        let y2 = op2.apply(&vec![1.0; op2.len()]);
        for (i, &k) in g2.interior().iter().enumerate() {
            let [x, yv] = g2.coord(k);
            let near = [x, 1.0 - x, yv, 1.0 - yv]
                .iter()
                .any(|d| (d - 0.2).abs() < 1e-12);
            assert_eq!(y2[i] != 0.0, near);
        }
    }

    #[test]
    fn annulus_stencil_against_analytic_operator() {
        // -u'' - u'/r in 2D: r^2 -> -4 exactly; log r -> 0 up to O(h^2).
        for m in [5, 9, 17, 33] {
            let g = build_grid(
                Domain::RadialAnnulus {
                    dim: 2,
                    inner: 1.0,
                    outer: 2.0,
                },
                m,
            )
            .unwrap();
            let op = assemble_neg_laplacian(&g);
            let node = g
                .coords()
                .iter()
                .position(|c| (c[0] - 1.5).abs() < 1e-12)
                .unwrap();
            let i = g.interior_index(node).unwrap();
            let sq = sample_fn(&g, |p| p[0] * p[0]);
            assert_relative_eq!(op.apply_full(&sq)[i], -4.0, epsilon = 1e-12);
            let lg = sample_fn(&g, |p| p[0].ln());
            let h = g.spacing()[0];
            let err = op.apply_full(&lg)[i].abs();
            // leading truncation term: h^2 * |u''''/12 + u'''/(6r)| at r = 1.5
            let r: f64 = 1.5;
            let bound = h * h * (6.0 / r.powi(4) / 12.0 + 2.0 / r.powi(3) / (6.0 * r));
            assert!(err <= 1.01 * bound, "m={m}: {err} > {bound}");
        }
    }

    #[test]
    fn ball_origin_row_matches_laplacian_of_quadratic() {
        // -Delta r^2 = -2N for every N, including the origin node
        for dim in 1..=4 {
            let g = build_grid(Domain::RadialBall { dim, radius: 1.0 }, 9).unwrap();
            let op = assemble_neg_laplacian(&g);
            let sq = sample_fn(&g, |p| p[0] * p[0]);
            for v in op.apply_full(&sq) {
                assert_relative_eq!(v, -2.0 * dim as f64, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn symmetric_with_m_matrix_sign_pattern() {
        for d in all_domains() {
            for m in [3, 5, 9, 17] {
                let g = build_grid(d, m).unwrap();
                let op = assemble_neg_laplacian(&g);
                for i in 0..op.len() {
                    let mut offsum = 0.0;
                    let mut diag = 0.0;
                    for (j, v) in op.stiffness_row(i) {
                        let back = op.stiffness_row(j).find(|&(k, _)| k == i).unwrap().1;
                        assert!((v - back).abs() <= 1e-13 * v.abs());
                        if i == j {
                            diag = v;
                        } else {
                            assert!(v <= 0.0);
                            offsum += v.abs();
                        }
                    }
                    assert!(diag > 0.0);
                    assert!(diag >= offsum * (1.0 - 1e-14));
                }
                // some row is strictly dominant (it touches the boundary)
                assert!((0..op.len()).any(|i| {
                    let s: f64 = op.stiffness_row(i).map(|(_, v)| v).sum();
                    s > 1e-12
                }));
            }
        }
    }

    #[test]
    fn cartesian_pointwise_operator_is_symmetric() {
        let g = build_grid(
            Domain::Rectangle {
                ax: 0.0,
                bx: 2.0,
                ay: 0.0,
                by: 1.0,
            },
            7,
        )
        .unwrap();
        let op = assemble_neg_laplacian(&g);
        for i in 0..op.len() {
            for (j, v) in op.row(i) {
                let back = op.row(j).into_iter().find(|&(k, _)| k == i).unwrap().1;
                assert!((v - back).abs() <= 1e-13 * v.abs());
            }
        }
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let g = build_grid(
            Domain::Rectangle {
                ax: 0.0,
                bx: 1.0,
                ay: 0.0,
                by: 1.0,
            },
            9,
        )
        .unwrap();
        let op = assemble_neg_laplacian(&g);
        let u = solve_linear(&op, &ScalarField::zeros(g.clone())).unwrap();
        assert!(u.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sine_rhs_second_order() {
        // sin(pi x) is an eigenvector of the 3-point stencil with eigenvalue
        // (4/h^2) sin^2(pi h/2), so the discrete solution is an exact multiple.
        for (m, max_err) in [(5, 6e-2), (9, 1.4e-2), (17, 3.3e-3)] {
            let g = build_grid(Domain::Interval { a: 0.0, b: 1.0 }, m).unwrap();
            let op = assemble_neg_laplacian(&g);
            let rhs = sample_fn(&g, |p| PI * PI * (PI * p[0]).sin());
            let u = solve_linear(&op, &rhs).unwrap();
            let h = g.spacing()[0];
            let lam = 4.0 / (h * h) * (PI * h / 2.0).sin().powi(2);
            let mut err: f64 = 0.0;
            for (k, c) in g.coords().iter().enumerate() {
                let exact = (PI * c[0]).sin();
                assert!((u.values()[k] - PI * PI / lam * exact).abs() <= 1e-13);
                err = err.max((u.values()[k] - exact).abs());
            }
            assert!(err <= max_err, "m={m}: {err}");
        }
    }

    #[test]
    fn sine_rhs_m5_within_3e_2() {
        let g = build_grid(Domain::Interval { a: 0.0, b: 1.0 }, 5).unwrap();
        let op = assemble_neg_laplacian(&g);
        let u = solve_linear(&op, &sample_fn(&g, |p| PI * PI * (PI * p[0]).sin())).unwrap();
        let exact = sample_fn(&g, |p| (PI * p[0]).sin());
        let err = u.max_abs_diff(&exact, None).unwrap();
        assert!(err <= 3e-2, "sup error {err:e}");
    }

    #[test]
    fn quadratics_are_stencil_exact() {
        // hand 3x3 solve: 16 * [2 -1 0; -1 2 -1; 0 -1 2] u = 1 gives
        // u = (3/32, 1/8, 3/32) = x(1-x)/2 at the interior nodes
        let g = build_grid(Domain::Interval { a: 0.0, b: 1.0 }, 5).unwrap();
        let op = assemble_neg_laplacian(&g);
        let u = solve_linear(&op, &ScalarField::constant(g.clone(), 1.0)).unwrap();
        let expected = [0.0, 3.0 / 32.0, 1.0 / 8.0, 3.0 / 32.0, 0.0];
        for (a, b) in u.values().iter().zip(expected) {
            assert!((a - b).abs() <= 4.0 * f64::EPSILON);
        }
        for m in [9, 33, 257] {
            let g = build_grid(Domain::Interval { a: 0.0, b: 1.0 }, m).unwrap();
            let op = assemble_neg_laplacian(&g);
            let u = solve_linear(&op, &ScalarField::constant(g.clone(), 1.0)).unwrap();
            for (k, c) in g.coords().iter().enumerate() {
                let x = c[0];
                let cond = (m * m) as f64 * f64::EPSILON;
                assert!((u.values()[k] - 0.5 * x * (1.0 - x)).abs() <= cond);
            }
        }
    }

    #[test]
    fn discrete_maximum_principle() {
        for d in all_domains() {
            for m in [5, 9, 17] {
                let g = build_grid(d, m).unwrap();
                let op = assemble_neg_laplacian(&g);
                for seed in 0..3u32 {
                    let rhs = sample_fn(&g, |p| {
                        let t = (p[0] * (3.0 + seed as f64) + p[1] * 7.0).sin();
                        if t > 0.3 {
                            t
                        } else {
                            0.0
                        }
                    });
                    let u = solve_linear(&op, &rhs).unwrap();
                    assert!(u.values().iter().all(|&v| v >= -1e-12), "{d} m={m}");
                }
            }
        }
    }
}
