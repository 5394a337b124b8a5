use std::io::{BufRead, Write};
use std::sync::Arc;

use super::{Axis, Grid};
use crate::error::{Error, Result};
use crate::expr::Expr;

/// Nodal values of a function on a grid.
#[derive(Debug, Clone)]
pub struct ScalarField {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl PartialEq for ScalarField {
    fn eq(&self, other: &Self) -> bool {
        self.values == other.values
            && (Arc::ptr_eq(&self.grid, &other.grid) || self.grid == other.grid)
    }
}

impl ScalarField {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Shape(format!(
                "{} values for a grid of {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite value at node {k}")));
        }
        Ok(ScalarField { grid, values })
    }

    pub fn zeros(grid: Arc<Grid>) -> Self {
        let n = grid.len();
        ScalarField {
            grid,
            values: vec![0.0; n],
        }
    }

    pub fn constant(grid: Arc<Grid>, c: f64) -> Self {
        let n = grid.len();
        ScalarField {
            grid,
            values: vec![c; n],
        }
    }

    /// Interior values `x` extended by zero on the boundary.
    pub fn from_interior(grid: Arc<Grid>, x: &[f64]) -> Self {
        assert_eq!(x.len(), grid.interior().len());
        let mut values = vec![0.0; grid.len()];
        for (&k, &v) in grid.interior().iter().zip(x) {
            values[k] = v;
        }
        ScalarField { grid, values }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn interior_values(&self) -> Vec<f64> {
        self.grid
            .interior()
            .iter()
            .map(|&k| self.values[k])
            .collect()
    }

    /// Pointwise map. Panics if `f` produces a non-finite value.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        let values: Vec<f64> = self.values.iter().map(|&v| f(v)).collect();
        assert!(
            values.iter().all(|v| v.is_finite()),
            "map produced a non-finite value"
        );
        ScalarField {
            grid: self.grid.clone(),
            values,
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    pub fn same_grid(&self, other: &ScalarField) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || self.grid == other.grid
    }

    pub(crate) fn check_same_grid(&self, other: &ScalarField) -> Result<()> {
        if self.same_grid(other) {
            Ok(())
        } else {
            Err(Error::Shape("fields live on different grids".into()))
        }
    }

    /// `max |self - other|` over the given nodes (all nodes when `None`).
    pub fn max_abs_diff(&self, other: &ScalarField, nodes: Option<&[usize]>) -> Result<f64> {
        self.check_same_grid(other)?;
        let diff = |k: usize| (self.values[k] - other.values[k]).abs();
        Ok(match nodes {
            Some(ns) => ns.iter().map(|&k| diff(k)).fold(0.0, f64::max),
            None => (0..self.values.len()).map(diff).fold(0.0, f64::max),
        })
    }

    /// Write as CSV: header `x,value` (or `x,y,value`), one row per node in
    /// node order, 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let two = self.grid.axes() == 2;
        writeln!(w, "{}", if two { "x,y,value" } else { "x,value" })?;
        for (c, v) in self.grid.coords().iter().zip(&self.values) {
            if two {
                writeln!(w, "{:.16e},{:.16e},{:.16e}", c[0], c[1], v)?;
            } else {
                writeln!(w, "{:.16e},{:.16e}", c[0], v)?;
            }
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }
}

/// Where nodal data comes from: an expression in `x`, `y`, `r`, or gridded
/// samples read from a field CSV.
#[derive(Debug, Clone)]
pub enum Source {
    Expr(Expr),
    Samples {
        points: Vec<[f64; 2]>,
        values: Vec<f64>,
    },
}

impl Source {
    pub fn parse(expr: &str) -> Result<Self> {
        Ok(Source::Expr(Expr::parse(expr)?))
    }

    /// Read samples in the field CSV format.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Data("empty CSV".into()))??;
        let cols = match header.trim() {
            "x,value" => 2,
            "x,y,value" => 3,
            other => return Err(Error::Data(format!("unexpected CSV header '{other}'"))),
        };
        let mut points = Vec::new();
        let mut values = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Data(format!("line {}: {e}", lineno + 2)))?;
            if parts.len() != cols {
                return Err(Error::Data(format!(
                    "line {}: expected {cols} columns, found {}",
                    lineno + 2,
                    parts.len()
                )));
            }
            points.push(if cols == 3 {
                [parts[0], parts[1]]
            } else {
                [parts[0], 0.0]
            });
            values.push(parts[cols - 1]);
        }
        Ok(Source::Samples { points, values })
    }
}

/// Evaluate `f` at every node.
pub fn sample_fn(grid: &Arc<Grid>, f: impl Fn([f64; 2]) -> f64) -> ScalarField {
    let values = grid.coords().iter().map(|&c| f(c)).collect();
    ScalarField {
        grid: grid.clone(),
        values,
    }
}

/// Realize a source on a grid. Sources of the right-hand side `f` must be
/// nonnegative; pass `nonnegative = true` to enforce it.
pub fn sample(source: &Source, grid: &Arc<Grid>, nonnegative: bool) -> Result<ScalarField> {
    let values = match source {
        Source::Expr(e) => {
            let radial = grid.domain().is_radial();
            grid.coords()
                .iter()
                .map(|c| {
                    if radial {
                        e.eval(c[0], 0.0, c[0])
                    } else {
                        e.eval(c[0], c[1], c[0].hypot(c[1]))
                    }
                })
                .collect::<Vec<f64>>()
        }
        Source::Samples { points, values } => {
            if points.len() != grid.len() {
                return Err(Error::Shape(format!(
                    "{} samples for a grid of {} nodes",
                    points.len(),
                    grid.len()
                )));
            }
            let tol = 1e-9 * grid.domain().width();
            for (k, (p, c)) in points.iter().zip(grid.coords()).enumerate() {
                if (p[0] - c[0]).abs() > tol || (p[1] - c[1]).abs() > tol {
                    return Err(Error::Shape(format!("sample {k} is not at node {k}")));
                }
            }
            values.clone()
        }
    };
    if let Some(k) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Data(format!(
            "non-finite value at node {k} ({:?})",
            grid.coord(k)
        )));
    }
    if nonnegative {
        if let Some(k) = values.iter().position(|&v| v < 0.0) {
            return Err(Error::Domain(format!(
                "negative source value {} at node {k}",
                values[k]
            )));
        }
    }
    Ok(ScalarField {
        grid: grid.clone(),
        values,
    })
}

/// Discrete `int |grad u|^2` over the nodes at distance at least `margin`
/// from the boundary: midpoint differences along each edge, trapezoidal in
/// the transverse direction.
pub fn h1_seminorm_sq(field: &ScalarField, margin: f64) -> Result<f64> {
    let grid = &field.grid;
    grid.check_margin(margin)?;
    let u = &field.values;
    let slack = 1e-12 * grid.domain().width();
    let inside = |k: usize| margin == 0.0 || grid.dist()[k] >= margin - slack;
    Ok(grid
        .edges()
        .iter()
        .filter(|e| inside(e.a) && inside(e.b))
        .map(|e| e.coeff * (u[e.a] - u[e.b]).powi(2))
        .sum())
}

/// Mirror image across the midplane orthogonal to `axis`.
pub fn reflect(field: &ScalarField, axis: Axis) -> Result<ScalarField> {
    let perm = field.grid.mirror(axis)?;
    let values = perm.iter().map(|&k| field.values[k]).collect();
    Ok(ScalarField {
        grid: field.grid.clone(),
        values,
    })
}

/// Pointwise `q`-th power of a nonnegative field.
pub fn power_field(field: &ScalarField, q: f64) -> Result<ScalarField> {
    if !(q > 0.0) {
        return Err(Error::Domain(format!("exponent q = {q} must be positive")));
    }
    if let Some(k) = field.values.iter().position(|&v| v < 0.0) {
        return Err(Error::Domain(format!(
            "negative entry {} at node {k}",
            field.values[k]
        )));
    }
    Ok(field.map(|v| if q == 1.0 { v } else { v.powf(q) }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, Domain};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn unit() -> Arc<Grid> {
        build_grid(Domain::Interval { a: 0.0, b: 1.0 }, 5).unwrap()
    }

    #[test]
    fn sample_constant_and_sine() {
        let g = unit();
        let one = sample(&Source::parse("1").unwrap(), &g, true).unwrap();
        assert!(one.values().iter().all(|&v| v == 1.0));
        let s = sample(&Source::parse("sin(pi*x)").unwrap(), &g, true).unwrap();
        let h = 0.5_f64.sqrt();
        for (a, b) in s.values().iter().zip([0.0, h, 1.0, h, 0.0]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn sample_rejections() {
        let g = unit();
        assert!(matches!(
            sample(&Source::parse("-1").unwrap(), &g, true),
            Err(Error::Domain(_))
        ));
        assert!(sample(&Source::parse("-1").unwrap(), &g, false).is_ok());
        assert!(matches!(
            sample(&Source::parse("1/x").unwrap(), &g, true),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn csv_round_trip_through_source() {
        let g = build_grid(
            Domain::Rectangle {
                ax: 0.0,
                bx: 1.0,
                ay: 0.0,
                by: 2.0,
            },
            4,
        )
        .unwrap();
        let f = sample_fn(&g, |p| (p[0] + 1.0) * p[1].exp() / 3.0);
        let text = f.to_csv_string();
        assert!(text.starts_with("x,y,value\n"));
        let src = Source::read_csv(text.as_bytes()).unwrap();
        let back = sample(&src, &g, true).unwrap();
        assert_eq!(back, f);
        let coarse = build_grid(
            Domain::Rectangle {
                ax: 0.0,
                bx: 1.0,
                ay: 0.0,
                by: 2.0,
            },
            3,
        )
        .unwrap();
        assert!(matches!(sample(&src, &coarse, true), Err(Error::Shape(_))));
    }

    #[test]
    fn h1_examples() {
        let g = build_grid(Domain::Interval { a: 0.0, b: 1.0 }, 17).unwrap();
        let x = sample_fn(&g, |p| p[0]);
        assert_relative_eq!(h1_seminorm_sq(&x, 0.0).unwrap(), 1.0, max_relative = 1e-14);
        assert_eq!(
            h1_seminorm_sq(&ScalarField::constant(g.clone(), 3.0), 0.0).unwrap(),
            0.0
        );
        let g = build_grid(Domain::Interval { a: 0.0, b: 1.0 }, 257).unwrap();
        let s = sample_fn(&g, |p| (PI * p[0]).sin());
        assert!((h1_seminorm_sq(&s, 0.0).unwrap() - PI * PI / 2.0).abs() < 1e-3);
    }

    #[test]
    fn h1_second_order_convergence() {
        let errs: Vec<f64> = [17, 33, 65, 129]
            .iter()
            .map(|&m| {
                let g = build_grid(Domain::Interval { a: 0.0, b: 1.0 }, m).unwrap();
                let s = sample_fn(&g, |p| (PI * p[0]).sin());
                (h1_seminorm_sq(&s, 0.0).unwrap() - PI * PI / 2.0).abs()
            })
            .collect();
        for w in errs.windows(2) {
            assert!((w[0] / w[1]).log2() >= 1.8, "{errs:?}");
        }
    }

    #[test]
    fn h1_margin_restricts_region() {
        let g = build_grid(Domain::Interval { a: 0.0, b: 1.0 }, 9).unwrap();
        let x = sample_fn(&g, |p| p[0]);
        // edges fully inside [0.25, 0.75]
        assert_relative_eq!(h1_seminorm_sq(&x, 0.25).unwrap(), 0.5, max_relative = 1e-14);
        assert!(matches!(h1_seminorm_sq(&x, 0.6), Err(Error::Margin(_))));
    }

    #[test]
    fn reflect_examples() {
        let g = unit();
        let x = sample_fn(&g, |p| p[0]);
        let r = reflect(&x, Axis::X).unwrap();
        for (c, v) in g.coords().iter().zip(r.values()) {
            assert_eq!(*v, 1.0 - c[0]);
        }
        let sym = sample_fn(&g, |p| p[0] * (1.0 - p[0]));
        assert_eq!(reflect(&sym, Axis::X).unwrap(), sym);
        assert!(matches!(reflect(&x, Axis::Y), Err(Error::Shape(_))));
    }

    #[test]
    fn power_examples() {
        let g = build_grid(Domain::Interval { a: 0.0, b: 1.0 }, 3).unwrap();
        let f = ScalarField::new(g.clone(), vec![0.0, 0.25, 1.0]).unwrap();
        assert_eq!(power_field(&f, 1.0).unwrap(), f);
        assert_eq!(power_field(&f, 2.0).unwrap().values(), &[0.0, 0.0625, 1.0]);
        let z = ScalarField::zeros(g.clone());
        assert_eq!(power_field(&z, 0.7).unwrap(), z);
        let neg = ScalarField::new(g, vec![0.0, -0.1, 1.0]).unwrap();
        assert!(matches!(power_field(&neg, 2.0), Err(Error::Domain(_))));
    }

    #[test]
    fn field_invariants() {
        let g = unit();
        assert!(matches!(
            ScalarField::new(g.clone(), vec![0.0; 4]),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            ScalarField::new(g, vec![0.0, 1.0, f64::NAN, 0.0, 0.0]),
            Err(Error::Data(_))
        ));
    }

    proptest! {
        #[test]
        fn reflect_is_an_involution_preserving_energy(
            vals in proptest::collection::vec(-10.0f64..10.0, 49),
            axis in prop_oneof![Just(Axis::X), Just(Axis::Y)],
        ) {
            let g = build_grid(Domain::Rectangle { ax: 0.0, bx: 1.0, ay: -1.0, by: 1.0 }, 7).unwrap();
            let f = ScalarField::new(g, vals).unwrap();
            let r = reflect(&f, axis).unwrap();
            prop_assert_eq!(&reflect(&r, axis).unwrap(), &f);
            let (e0, e1) = (h1_seminorm_sq(&f, 0.0).unwrap(), h1_seminorm_sq(&r, 0.0).unwrap());
            prop_assert!((e0 - e1).abs() <= 1e-12 * e0.max(1.0));
        }

        #[test]
        fn reflect_preserves_energy_on_interval(vals in proptest::collection::vec(-5.0f64..5.0, 11)) {
            let g = build_grid(Domain::Interval { a: -1.0, b: 2.0 }, 11).unwrap();
            let f = ScalarField::new(g, vals).unwrap();
            let r = reflect(&f, Axis::X).unwrap();
            prop_assert_eq!(&reflect(&r, Axis::X).unwrap(), &f);
            let (e0, e1) = (h1_seminorm_sq(&f, 0.0).unwrap(), h1_seminorm_sq(&r, 0.0).unwrap());
            prop_assert!((e0 - e1).abs() <= 1e-12 * e0.max(1.0));
        }
    }
}
