//! Domains, structured grids and the discrete negative Laplacian.
//!
//! Every grid is vertex-centred: each node owns a dual cell (the part of the
//! domain closer to it than to its neighbours along each axis), and the
//! quadrature weight of the node is the measure of that cell. On Cartesian
//! grids this is exactly the trapezoidal rule. Radial domains are represented
//! by a one-dimensional mesh in `r`, with measures carrying the `r^(N-1)`
//! factor and the surface area of the unit sphere.

mod banded;
mod field;
mod operator;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use field::{h1_seminorm_sq, power_field, reflect, sample, sample_fn, ScalarField, Source};
pub use operator::{assemble_neg_laplacian, solve_linear, DiscreteOperator, Factorization};

/// The family of domains that can be discretized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Domain {
    Interval {
        a: f64,
        b: f64,
    },
    Rectangle {
        ax: f64,
        bx: f64,
        ay: f64,
        by: f64,
    },
    /// Ball of radius `radius` in `dim` dimensions, solved for radial profiles.
    RadialBall {
        dim: u32,
        radius: f64,
    },
    /// Annulus `inner < |x| < outer` in `dim` dimensions, radial profiles.
    RadialAnnulus {
        dim: u32,
        inner: f64,
        outer: f64,
    },
}

impl Domain {
    pub fn validate(&self) -> Result<()> {
        let ok = |c: bool, msg: &str| {
            if c {
                Ok(())
            } else {
                Err(Error::InvalidDomain(format!("{msg}: {self}")))
            }
        };
        match *self {
            Domain::Interval { a, b } => ok(a.is_finite() && b.is_finite() && a < b, "need a < b"),
            Domain::Rectangle { ax, bx, ay, by } => ok(
                [ax, bx, ay, by].iter().all(|v| v.is_finite()) && ax < bx && ay < by,
                "need ax < bx and ay < by",
            ),
            Domain::RadialBall { dim, radius } => ok(
                dim >= 1 && radius.is_finite() && radius > 0.0,
                "need N >= 1 and R > 0",
            ),
            Domain::RadialAnnulus { dim, inner, outer } => ok(
                dim >= 1 && inner.is_finite() && outer.is_finite() && 0.0 < inner && inner < outer,
                "need N >= 1 and 0 < R0 < R1",
            ),
        }
    }

    /// Number of axes of the discretization (radial domains use one).
    pub fn axes(&self) -> usize {
        match self {
            Domain::Rectangle { .. } => 2,
            _ => 1,
        }
    }

    pub fn is_radial(&self) -> bool {
        matches!(
            self,
            Domain::RadialBall { .. } | Domain::RadialAnnulus { .. }
        )
    }

    /// Characteristic width used to bound margins: a margin must stay below
    /// half of it for the margin sub-domain to be non-empty.
    pub fn width(&self) -> f64 {
        match *self {
            Domain::Interval { a, b } => b - a,
            Domain::Rectangle { ax, bx, ay, by } => (bx - ax).min(by - ay),
            Domain::RadialBall { radius, .. } => 2.0 * radius,
            Domain::RadialAnnulus { inner, outer, .. } => outer - inner,
        }
    }

    /// Lebesgue measure of the domain in its ambient dimension.
    pub fn measure(&self) -> f64 {
        match *self {
            Domain::Interval { a, b } => b - a,
            Domain::Rectangle { ax, bx, ay, by } => (bx - ax) * (by - ay),
            Domain::RadialBall { dim, radius } => shell_measure(dim, 0.0, radius),
            Domain::RadialAnnulus { dim, inner, outer } => shell_measure(dim, inner, outer),
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Domain::Interval { a, b } => write!(f, "interval({a}, {b})"),
            Domain::Rectangle { ax, bx, ay, by } => write!(f, "rectangle({ax}, {bx}, {ay}, {by})"),
            Domain::RadialBall { dim, radius } => write!(f, "ball({dim}, {radius})"),
            Domain::RadialAnnulus { dim, inner, outer } => {
                write!(f, "annulus({dim}, {inner}, {outer})")
            }
        }
    }
}

/// Parses the [`Display`](fmt::Display) form, e.g. `interval(0, 1)` or
/// `ball(3, 1)`.
impl std::str::FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidDomain(format!("cannot parse domain '{s}'"));
        let s = s.trim();
        let open = s.find('(').ok_or_else(bad)?;
        let inner = s[open + 1..].strip_suffix(')').ok_or_else(bad)?;
        let args: Vec<&str> = inner.split(',').map(str::trim).collect();
        let num = |i: usize| -> Result<f64> { args[i].parse::<f64>().map_err(|_| bad()) };
        let dim = || -> Result<u32> { args[0].parse::<u32>().map_err(|_| bad()) };
        let d = match (s[..open].trim(), args.len()) {
            ("interval", 2) => Domain::Interval {
                a: num(0)?,
                b: num(1)?,
            },
            ("rectangle", 4) => Domain::Rectangle {
                ax: num(0)?,
                bx: num(1)?,
                ay: num(2)?,
                by: num(3)?,
            },
            ("ball", 2) => Domain::RadialBall {
                dim: dim()?,
                radius: num(1)?,
            },
            ("annulus", 3) => Domain::RadialAnnulus {
                dim: dim()?,
                inner: num(1)?,
                outer: num(2)?,
            },
            _ => return Err(bad()),
        };
        d.validate()?;
        Ok(d)
    }
}

/// Surface area of the unit sphere in `R^dim` (2 for dim = 1).
pub fn unit_sphere_area(dim: u32) -> f64 {
    let pi = std::f64::consts::PI;
    let half = dim as f64 / 2.0;
    // Gamma(dim / 2) for integer dim
    let gamma = if dim.is_multiple_of(2) {
        (1..dim / 2).map(|k| k as f64).product::<f64>()
    } else {
        let k = (dim - 1) / 2;
        let mut g = pi.sqrt();
        for j in 0..k {
            g *= j as f64 + 0.5;
        }
        g
    };
    2.0 * pi.powf(half) / gamma
}

fn shell_measure(dim: u32, lo: f64, hi: f64) -> f64 {
    let n = dim as i32;
    unit_sphere_area(dim) * (hi.powi(n) - lo.powi(n)) / n as f64
}

/// Mirror axis for reflections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
}

/// A nearest-neighbour coupling between two nodes. The discrete Dirichlet
/// energy of a nodal function is `sum coeff * (u[a] - u[b])^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub coeff: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    domain: Domain,
    m: usize,
    coords: Vec<[f64; 2]>,
    boundary: Vec<bool>,
    interior: Vec<usize>,
    interior_index: Vec<Option<usize>>,
    spacing: Vec<f64>,
    weights: Vec<f64>,
    dist: Vec<f64>,
    edges: Vec<Edge>,
}

/// Build the uniform tensor grid with `m` nodes per axis.
pub fn build_grid(domain: Domain, m: usize) -> Result<Arc<Grid>> {
    domain.validate()?;
    if m < 3 {
        return Err(Error::InvalidResolution(m));
    }
    let grid = match domain {
        Domain::Interval { a, b } => cartesian_1d(domain, a, b, m),
        Domain::Rectangle { ax, bx, ay, by } => cartesian_2d(domain, [ax, bx], [ay, by], m),
        Domain::RadialBall { dim, radius } => radial(domain, dim, 0.0, radius, false, m),
        Domain::RadialAnnulus { dim, inner, outer } => radial(domain, dim, inner, outer, true, m),
    };
    Ok(Arc::new(grid))
}

fn uniform(lo: f64, hi: f64, m: usize) -> Vec<f64> {
    let step = (hi - lo) / (m - 1) as f64;
    (0..m)
        .map(|i| if i == m - 1 { hi } else { lo + step * i as f64 })
        .collect()
}

fn trapezoid(m: usize, h: f64) -> Vec<f64> {
    (0..m)
        .map(|i| if i == 0 || i == m - 1 { 0.5 * h } else { h })
        .collect()
}

fn cartesian_1d(domain: Domain, a: f64, b: f64, m: usize) -> Grid {
    let xs = uniform(a, b, m);
    let h = (b - a) / (m - 1) as f64;
    let edges = (0..m - 1)
        .map(|i| Edge {
            a: i,
            b: i + 1,
            coeff: 1.0 / h,
        })
        .collect();
    Grid::finish(
        domain,
        m,
        xs.iter().map(|&x| [x, 0.0]).collect(),
        (0..m).map(|i| i == 0 || i == m - 1).collect(),
        vec![h],
        trapezoid(m, h),
        xs.iter().map(|&x| (x - a).min(b - x)).collect(),
        edges,
    )
}

fn cartesian_2d(domain: Domain, xr: [f64; 2], yr: [f64; 2], m: usize) -> Grid {
    let xs = uniform(xr[0], xr[1], m);
    let ys = uniform(yr[0], yr[1], m);
    let hx = (xr[1] - xr[0]) / (m - 1) as f64;
    let hy = (yr[1] - yr[0]) / (m - 1) as f64;
    let wx = trapezoid(m, hx);
    let wy = trapezoid(m, hy);
    let idx = |i: usize, j: usize| i + m * j;

    let mut coords = Vec::with_capacity(m * m);
    let mut boundary = Vec::with_capacity(m * m);
    let mut weights = Vec::with_capacity(m * m);
    let mut dist = Vec::with_capacity(m * m);
    for j in 0..m {
        for i in 0..m {
            let (x, y) = (xs[i], ys[j]);
            coords.push([x, y]);
            boundary.push(i == 0 || j == 0 || i == m - 1 || j == m - 1);
            weights.push(wx[i] * wy[j]);
            dist.push((x - xr[0]).min(xr[1] - x).min(y - yr[0]).min(yr[1] - y));
        }
    }
    let mut edges = Vec::with_capacity(2 * m * (m - 1));
    for j in 0..m {
        for i in 0..m {
            if i + 1 < m {
                edges.push(Edge {
                    a: idx(i, j),
                    b: idx(i + 1, j),
                    coeff: wy[j] / hx,
                });
            }
            if j + 1 < m {
                edges.push(Edge {
                    a: idx(i, j),
                    b: idx(i, j + 1),
                    coeff: wx[i] / hy,
                });
            }
        }
    }
    Grid::finish(
        domain,
        m,
        coords,
        boundary,
        vec![hx, hy],
        weights,
        dist,
        edges,
    )
}

fn radial(domain: Domain, dim: u32, r0: f64, r1: f64, annulus: bool, m: usize) -> Grid {
    let rs = uniform(r0, r1, m);
    let h = (r1 - r0) / (m - 1) as f64;
    let area = unit_sphere_area(dim);
    let n = dim as i32 - 1;
    let weights = rs
        .iter()
        .map(|&r| shell_measure(dim, (r - 0.5 * h).max(r0), (r + 0.5 * h).min(r1)))
        .collect();
    let edges = (0..m - 1)
        .map(|i| {
            let face = 0.5 * (rs[i] + rs[i + 1]);
            Edge {
                a: i,
                b: i + 1,
                coeff: area * face.powi(n) / h,
            }
        })
        .collect();
    let boundary = (0..m).map(|i| i == m - 1 || (annulus && i == 0)).collect();
    let dist = rs
        .iter()
        .map(|&r| {
            if annulus {
                (r - r0).min(r1 - r)
            } else {
                r1 - r
            }
        })
        .collect();
    Grid::finish(
        domain,
        m,
        rs.iter().map(|&r| [r, 0.0]).collect(),
        boundary,
        vec![h],
        weights,
        dist,
        edges,
    )
}

impl Grid {
    #[allow(clippy::too_many_arguments)]
    fn finish(
        domain: Domain,
        m: usize,
        coords: Vec<[f64; 2]>,
        boundary: Vec<bool>,
        spacing: Vec<f64>,
        weights: Vec<f64>,
        dist: Vec<f64>,
        edges: Vec<Edge>,
    ) -> Self {
        let mut interior = Vec::new();
        let mut interior_index = vec![None; coords.len()];
        for (i, &b) in boundary.iter().enumerate() {
            if !b {
                interior_index[i] = Some(interior.len());
                interior.push(i);
            }
        }
        Grid {
            domain,
            m,
            coords,
            boundary,
            interior,
            interior_index,
            spacing,
            weights,
            dist,
            edges,
        }
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    /// Nodes per axis.
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn axes(&self) -> usize {
        self.spacing.len()
    }

    /// Node coordinates; the second component is zero on one-axis grids, and
    /// the first is the radius on radial grids.
    pub fn coord(&self, node: usize) -> [f64; 2] {
        self.coords[node]
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.boundary[node]
    }

    pub fn interior(&self) -> &[usize] {
        &self.interior
    }

    pub fn boundary_nodes(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.boundary[i]).collect()
    }

    pub fn interior_index(&self, node: usize) -> Option<usize> {
        self.interior_index[node]
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    /// Smallest spacing over the axes.
    pub fn h_min(&self) -> f64 {
        self.spacing.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Distance of each node to the boundary of the domain.
    pub fn dist(&self) -> &[f64] {
        &self.dist
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Nodes at distance at least `margin` from the boundary. `margin = 0`
    /// selects every node.
    pub fn margin_nodes(&self, margin: f64) -> Result<Vec<usize>> {
        self.check_margin(margin)?;
        let slack = 1e-12 * self.domain.width();
        let nodes: Vec<usize> = (0..self.len())
            .filter(|&i| self.dist[i] >= margin - slack)
            .collect();
        if nodes.is_empty() {
            return Err(Error::Margin(format!("no nodes at distance >= {margin}")));
        }
        Ok(nodes)
    }

    pub(crate) fn check_margin(&self, margin: f64) -> Result<()> {
        if !(margin >= 0.0 && margin < 0.5 * self.domain.width()) {
            return Err(Error::Margin(format!(
                "margin {margin} must lie in [0, {})",
                0.5 * self.domain.width()
            )));
        }
        Ok(())
    }

    /// Node permutation realizing the mirror image across the midplane
    /// orthogonal to `axis`. Radial grids are mapped to themselves.
    pub fn mirror(&self, axis: Axis) -> Result<Vec<usize>> {
        let m = self.m;
        match (self.domain, axis) {
            (Domain::RadialBall { .. } | Domain::RadialAnnulus { .. }, _) => {
                Ok((0..self.len()).collect())
            }
            (Domain::Interval { .. }, Axis::X) => Ok((0..m).rev().collect()),
            (Domain::Interval { .. }, Axis::Y) => Err(Error::Shape(
                "an interval has no y axis to reflect across".into(),
            )),
            (Domain::Rectangle { .. }, axis) => Ok((0..m * m)
                .map(|k| {
                    let (i, j) = (k % m, k / m);
                    match axis {
                        Axis::X => (m - 1 - i) + m * j,
                        Axis::Y => i + m * (m - 1 - j),
                    }
                })
                .collect()),
        }
    }
}
