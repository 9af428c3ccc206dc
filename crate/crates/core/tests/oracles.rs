use std::f64::consts::PI;
use std::sync::Arc;

use approx::assert_abs_diff_eq;
use massopt::adjoint::{gradient_values, random_directions, taylor_remainders};
use massopt::optimizer::{maximize, minimize};
use massopt::solver::{final_state, solve_forward_values};
use massopt::{
    build_grid, BoundaryPolicy, DiffusionModel, Expr, InitialDatum, OptConfig, ReactionModel, ScalarField,
    Scenario, SolverConfig, VelocityField,
};

fn scenario_1d(n: usize, sigma: f64, q: Option<&str>, reaction: ReactionModel, t: f64, dt: f64) -> Scenario {
    let g = Arc::new(build_grid(1, &[1.0], &[n]).unwrap());
    let vel = match q {
        Some(e) => {
            VelocityField::from_exprs(g.clone(), &[Expr::parse(e).unwrap()], 1.0, BoundaryPolicy::RequireTangential)
                .unwrap()
        }
        None => VelocityField::zero(g.clone()),
    };
    Scenario::new(
        g,
        DiffusionModel::constant(sigma).unwrap(),
        vel,
        reaction,
        SolverConfig::new(t, dt).unwrap(),
        0.5,
    )
    .unwrap()
}

fn heat_error(n: usize, dt: f64) -> f64 {
    let (sigma, t) = (0.1, 0.1);
    let sc = scenario_1d(n, sigma, None, ReactionModel::zero(), t, dt);
    let centers = sc.grid().cell_centers();
    let u0: Vec<f64> = centers.iter().map(|p| 0.5 + 0.25 * (PI * p[0]).cos()).collect();
    let u = final_state(&u0, &sc).unwrap();
    let decay = (-sigma * PI * PI * t).exp();
    centers
        .iter()
        .zip(&u)
        .map(|(p, v)| (v - (0.5 + 0.25 * decay * (PI * p[0]).cos())).abs())
        .fold(0.0, f64::max)
}

#[test]
fn heat_cosine_mode_converges_second_order_in_space() {
    let errs: Vec<f64> = [8, 16, 32].iter().map(|&n| heat_error(n, 1e-5)).collect();
    for w in errs.windows(2) {
        let rate = (w[0] / w[1]).log2();
        assert!(rate > 1.8, "rate {rate} from {errs:?}");
    }
    assert!(errs[2] < 1e-4);
}

fn logistic_exact(c: f64, t: f64) -> f64 {
    c * t.exp() / (1.0 - c + c * t.exp())
}

#[test]
fn uniform_logistic_matches_ode_solution() {
    let c = 0.5;
    let errs: Vec<f64> = [1e-2, 5e-3, 2.5e-3]
        .iter()
        .map(|&dt| {
            let sc = scenario_1d(8, 0.05, None, ReactionModel::logistic(), 1.0, dt);
            let u = final_state(&[c; 8], &sc).unwrap();
            u.iter().map(|v| (v - logistic_exact(c, 1.0)).abs()).fold(0.0, f64::max)
        })
        .collect();
    for w in errs.windows(2) {
        assert_abs_diff_eq!(w[0] / w[1], 2.0, epsilon = 0.1);
    }
}

#[test]
fn uniform_state_stays_uniform_under_tangential_flow_without_reaction() {
    let sc = scenario_1d(32, 0.05, Some("sin(pi*x)"), ReactionModel::zero(), 0.5, 0.01);
    let traj = solve_forward_values(&[0.5; 32], &sc).unwrap();
    for v in traj.final_state().values() {
        assert_abs_diff_eq!(*v, 0.5, epsilon = 1e-12);
    }
}

fn brute_force_extremes(sc: &Scenario, steps: usize) -> (f64, f64) {
    let h = 1.0 / steps as f64;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..=steps {
        for j in 0..=steps {
            let (a, b) = (i as f64 * h, j as f64 * h);
            let c = 1.5 - a - b;
            if !(-1e-12..=1.0 + 1e-12).contains(&c) {
                continue;
            }
            let u = final_state(&[a, b, c.clamp(0.0, 1.0)], sc).unwrap();
            let mass = sc.grid().integrate_values(&u);
            lo = lo.min(mass);
            hi = hi.max(mass);
        }
    }
    (lo, hi)
}

#[test]
fn three_cell_optimizer_agrees_with_enumeration() {
    let sc = scenario_1d(3, 0.05, Some("sin(pi*x)"), ReactionModel::logistic(), 0.5, 0.01);
    let (lo, hi) = brute_force_extremes(&sc, 100);
    let cfg = OptConfig::default();
    let max = maximize(&sc, 0.5, &cfg).unwrap();
    assert!(max.converged);
    assert!(max.best_value >= hi - 1e-9, "{} < {hi}", max.best_value);
    assert!(max.best_value <= hi + 1e-3);
    let min = minimize(&sc, 0.5, &cfg).unwrap();
    assert!(min.best_value >= lo - 1e-9);
}

#[test]
fn adjoint_taylor_remainder_is_quadratic() {
    let sc = scenario_1d(16, 0.05, Some("sin(pi*x)"), ReactionModel::logistic(), 0.3, 0.01);
    let u0 = vec![0.5; 16];
    let g = gradient_values(&u0, &sc).unwrap();
    let dir = &random_directions(16, 1, 3)[0];
    let dir: Vec<f64> = dir.iter().map(|d| 0.4 * d).collect();
    let rems = taylor_remainders(&u0, &sc, &g.gradient, &dir, &[1e-1, 5e-2, 2.5e-2]).unwrap();
    for w in rems.windows(2) {
        let rate = (w[0].1 / w[1].1).log2();
        assert_abs_diff_eq!(rate, 2.0, epsilon = 0.1);
    }
}

#[test]
fn initial_datum_csv_round_trip() {
    let g = Arc::new(build_grid(2, &[1.0, 2.0], &[4, 3]).unwrap());
    let u = ScalarField::from_fn(g.clone(), |p| 0.25 + 0.25 * p[0] * p[1] / 2.0);
    let m = u.integrate();
    let datum = InitialDatum::new(u, m).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("u0.csv");
    datum.save_csv(&path).unwrap();
    let back = InitialDatum::load_csv(&path, g, m).unwrap();
    assert_eq!(back, datum);
}
