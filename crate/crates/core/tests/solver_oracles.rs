use singular_elliptic::grid::{Domain, Source};
use singular_elliptic::solver::{dirichlet_excess, solve_singular, ContinuationSchedule, Problem};

fn unit() -> Domain {
    Domain::Interval { a: 0.0, b: 1.0 }
}

fn centre_value(m: usize, beta: f64, interior_tol: f64) -> f64 {
    let p = Problem::from_source(unit(), m, beta, &Source::parse("1").unwrap()).unwrap();
    let s = ContinuationSchedule {
        interior_tol,
        ..Default::default()
    };
    solve_singular(&p, &s, None).unwrap().u.values()[m / 2]
}

/// Fine-grid oracle for u(1/2) with β = 3, f ≡ 1: the continuation on
/// m = 2049 and 4097 with interior_tol 1e-10, extrapolated under the
/// observed first-order rate.
fn beta3_oracle() -> f64 {
    let coarse = centre_value(2049, 3.0, 1e-10);
    let fine = centre_value(4097, 3.0, 1e-10);
    2.0 * fine - coarse
}

#[test]
fn beta3_oracle_matches_closed_form() {
    // u = sqrt(2x(1-x)) solves -u'' = u^{-3} on (0, 1).
    let oracle = beta3_oracle();
    assert!((oracle - 0.5f64.sqrt()).abs() < 1e-6, "{oracle}");
}

#[test]
fn beta3_centre_value_converges_at_first_order() {
    let v: Vec<f64> = [257, 513, 1025]
        .iter()
        .map(|&m| centre_value(m, 3.0, 1e-8))
        .collect();
    let ratio = (v[1] - v[0]) / (v[2] - v[1]);
    assert!((ratio - 2.0).abs() < 0.05, "{v:?} {ratio}");
    let extrapolated = 2.0 * v[1] - v[0];
    assert!(
        (extrapolated - beta3_oracle()).abs() <= 1e-5,
        "{extrapolated}"
    );
}

#[test]
fn beta3_centre_value_at_m513_within_1e_5_of_oracle() {
    let raw = centre_value(513, 3.0, 1e-8);
    let oracle = beta3_oracle();
    assert!(
        (raw - oracle).abs() <= 1e-5,
        "u_513(1/2) = {raw}, oracle {oracle}, diff {:e}",
        raw - oracle
    );
}

#[test]
fn beta3_dirichlet_excess_is_bounded() {
    let e = dirichlet_excess(
        unit(),
        3.0,
        &Source::parse("1").unwrap(),
        0.1,
        &[65, 129, 257, 513],
        &ContinuationSchedule::default(),
    )
    .unwrap();
    let max = e.iter().copied().fold(0.0, f64::max);
    let min = e.iter().copied().fold(f64::INFINITY, f64::min);
    assert!(max / min <= 1.2, "{e:?}");
}

#[test]
fn dirichlet_excess_vanishes_below_eps() {
    let e = dirichlet_excess(
        unit(),
        2.0,
        &Source::parse("1e-6").unwrap(),
        0.5,
        &[17, 33, 65],
        &ContinuationSchedule::default(),
    )
    .unwrap();
    assert_eq!(e, vec![0.0; 3]);
}

#[test]
fn scaling_identity_lambda_3() {
    let s = ContinuationSchedule::default();
    let f = Source::parse("1 + sin(pi*x)").unwrap();
    let p = Problem::from_source(unit(), 129, 2.0, &f).unwrap();
    let q = p.with_source(p.f().scaled(27.0)).unwrap();
    let u = solve_singular(&p, &s, None).unwrap().u;
    let v = solve_singular(&q, &s, None).unwrap().u;
    assert!(v.max_abs_diff(&u.scaled(3.0), None).unwrap() <= 1e-7);
}

#[test]
fn radial_ball_solution_is_positive() {
    let d = Domain::RadialBall {
        dim: 3,
        radius: 1.0,
    };
    let p = Problem::from_source(d, 129, 2.0, &Source::parse("1").unwrap()).unwrap();
    let r = solve_singular(&p, &ContinuationSchedule::default(), None).unwrap();
    assert!(r.positive && r.converged);
    // The maximum sits at the centre and the profile decreases outwards.
    let v = r.u.values();
    assert!(v.windows(2).all(|w| w[0] >= w[1]));
}
