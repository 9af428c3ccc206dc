//! Invariant checks run by `massopt verify`.
//!
//! The quick level uses grids of 4 to 16 cells; the full level adds
//! refinement studies and prints observed convergence rates.

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use massopt::adjoint::{finite_difference_check, gradient_values, random_directions};
use massopt::models::ScalarFn;
use massopt::solver::{final_state, forward_mode_derivative, solve_forward_values, AdvectionScheme};
use massopt::{
    build_grid, concavity_probe, mass_budget_report, maximize, monotonicity_check, random_admissible,
    solve_forward, terminal_mass, threshold_amplitude, BoundaryPolicy, DiffusionModel, Expr,
    InitialDatum, OptConfig, ReactionModel, Result, Scenario, SolverConfig, VelocityField,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Quick,
    Full,
}

impl std::str::FromStr for Level {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "quick" => Ok(Level::Quick),
            "full" => Ok(Level::Full),
            other => Err(format!("level must be quick or full, got {other}")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct RateRow {
    pub study: &'static str,
    pub param: f64,
    pub error: f64,
    pub rate: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
    pub rates: Vec<RateRow>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failed_names(&self) -> Vec<&'static str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name).collect()
    }

    pub fn write_table<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{:<28} {:<6} {:>8}  detail", "check", "result", "seconds")?;
        for c in &self.checks {
            writeln!(
                w,
                "{:<28} {:<6} {:>8.2}  {}",
                c.name,
                if c.passed { "PASS" } else { "FAIL" },
                c.seconds,
                c.detail
            )?;
        }
        if !self.rates.is_empty() {
            writeln!(w)?;
            writeln!(w, "{:<28} {:>12} {:>14} {:>8}", "study", "param", "error", "rate")?;
            for r in &self.rates {
                let rate = r.rate.map_or("-".to_string(), |v| format!("{v:.3}"));
                writeln!(w, "{:<28} {:>12.3e} {:>14.6e} {:>8}", r.study, r.param, r.error, rate)?;
            }
        }
        let failed = self.failed_names();
        if failed.is_empty() {
            writeln!(w, "all {} checks passed", self.checks.len())
        } else {
            writeln!(w, "{} of {} checks failed: {}", failed.len(), self.checks.len(), failed.join(", "))
        }
    }
}

struct Ctx {
    scheme: AdvectionScheme,
    rates: Vec<RateRow>,
}

type Outcome = Result<(bool, String)>;
type Check = (&'static str, fn(&mut Ctx) -> Outcome);

pub fn run(level: Level, scheme: AdvectionScheme) -> VerifyReport {
    let mut ctx = Ctx {
        scheme,
        rates: Vec::new(),
    };
    let mut checks: Vec<Check> = vec![
        ("box_preservation", box_preservation),
        ("order_preservation", order_preservation),
        ("conservation", conservation),
        ("ledger_closure", ledger_closure),
        ("gradient_finite_difference", gradient_fd),
        ("gradient_forward_mode", gradient_forward_mode),
        ("concavity", concavity),
        ("lattice_oracle", lattice_oracle),
        ("threshold_formula", threshold_formula),
        ("logistic_ode", logistic_ode),
        ("monotonicity", monotonicity),
    ];
    if level == Level::Full {
        checks.extend([
            ("box_preservation_2d", box_preservation_2d as fn(&mut Ctx) -> Outcome),
            ("logistic_dt_refinement", logistic_dt_refinement),
            ("heat_h_refinement", heat_h_refinement),
            ("advection_refinement", advection_refinement),
        ]);
    }
    let mut out = VerifyReport::default();
    for (name, f) in checks {
        let start = Instant::now();
        let (passed, detail) = match f(&mut ctx) {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        out.checks.push(CheckResult {
            name,
            passed,
            detail,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    out.rates = ctx.rates;
    out
}

#[allow(clippy::too_many_arguments)]
fn scenario(
    ctx: &Ctx,
    grid: Arc<massopt::Grid>,
    sigma: f64,
    velocity: VelocityField,
    reaction: ReactionModel,
    t: f64,
    dt: f64,
    m: f64,
) -> Result<Scenario> {
    let mut solver = SolverConfig::new(t, dt)?;
    solver.advection_scheme = ctx.scheme;
    Scenario::new(grid, DiffusionModel::constant(sigma)?, velocity, reaction, solver, m)
}

fn grid1(n: usize) -> Result<Arc<massopt::Grid>> {
    Ok(Arc::new(build_grid(1, &[1.0], &[n])?))
}

fn velocity(grid: &Arc<massopt::Grid>, exprs: &[&str], a: f64, policy: BoundaryPolicy) -> Result<VelocityField> {
    let e = exprs.iter().map(|s| Expr::parse(s)).collect::<Result<Vec<_>>>()?;
    VelocityField::from_exprs(grid.clone(), &e, a, policy)
}

/// Random tangential 1D scenario with one of three reactions.
fn random_scenario(ctx: &Ctx, rng: &mut ChaCha8Rng, n: usize) -> Result<Scenario> {
    let grid = grid1(n)?;
    let k = rng.gen_range(1..=3);
    let c = rng.gen_range(-2.0..2.0);
    let q = format!("{c}*sin({k}*pi*x)");
    let vel = velocity(&grid, &[&q], rng.gen_range(0.0..5.0), BoundaryPolicy::RequireTangential)?;
    let reaction = match rng.gen_range(0..3) {
        0 => ReactionModel::zero(),
        1 => ReactionModel::logistic(),
        _ => {
            let phase = rng.gen_range(0.0..3.0);
            let r: ScalarFn = Arc::new(move |p: massopt::Point| 1.0 + 0.5 * (3.0 * p[0] + phase).sin());
            ReactionModel::heterogeneous_logistic(r, &grid)?
        }
    };
    let m = rng.gen_range(0.05..0.95);
    scenario(
        ctx,
        grid,
        rng.gen_range(0.005..0.2),
        vel,
        reaction,
        rng.gen_range(0.1..0.5),
        0.05,
        m,
    )
}

fn box_preservation(ctx: &mut Ctx) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    let mut excursion = 0.0f64;
    for _ in 0..40 {
        let sc = random_scenario(ctx, &mut rng, 16)?;
        let u0 = random_admissible(rng.gen(), sc.mass(), sc.grid().clone())?;
        let tr = solve_forward(&u0, &sc)?;
        excursion = excursion.max(tr.max_excursion());
        for (_, u) in tr.states() {
            for &v in u.values() {
                worst = worst.max(-v).max(v - 1.0);
            }
        }
    }
    Ok((
        worst <= 0.0 && excursion <= 1e-12,
        format!("40 scenarios, max excursion removed by the clamp {excursion:e}"),
    ))
}

fn ordered_pairs(ctx: &Ctx, count: usize, n: usize, seed: u64) -> Result<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0;
    for _ in 0..count {
        let sc = random_scenario(ctx, &mut rng, n)?;
        let u: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let v: Vec<f64> = u
            .iter()
            .map(|&x| if rng.gen_bool(0.5) { (x + rng.gen_range(0.0..0.5)).min(1.0) } else { x })
            .collect();
        let fu = final_state(&u, &sc)?;
        let fv = final_state(&v, &sc)?;
        violations += fu.iter().zip(&fv).filter(|(a, b)| a > b).count();
    }
    Ok((violations, count))
}

fn order_preservation(ctx: &mut Ctx) -> Outcome {
    let (violations, count) = ordered_pairs(ctx, 40, 16, 202)?;
    Ok((violations == 0, format!("{count} ordered pairs, {violations} cellwise violations")))
}

fn conservation(ctx: &mut Ctx) -> Outcome {
    let mut worst = 0.0f64;
    for (dim, ext, res) in [(1, vec![1.0], vec![16]), (2, vec![1.0, 2.0], vec![6, 5])] {
        let grid = Arc::new(build_grid(dim, &ext, &res)?);
        let vol = grid.total_volume();
        let m = 0.4 * vol;
        let sc = scenario(ctx, grid.clone(), 0.1, VelocityField::zero(grid.clone()), ReactionModel::zero(), 0.5, 0.01, m)?;
        for seed in 0..5 {
            let u0 = random_admissible(seed, m, grid.clone())?;
            worst = worst.max((terminal_mass(&u0, &sc)? - m).abs() / vol);
        }
    }
    Ok((worst <= 1e-12, format!("max |I_T - m|/|Ω| = {worst:e}")))
}

fn ledger_closure(ctx: &mut Ctx) -> Outcome {
    let grid = grid1(16)?;
    let mut step = 0.0f64;
    for (q, policy) in [
        ("-x + 0.3*x*x", BoundaryPolicy::AllowNonzeroNormal),
        ("sin(pi*x)", BoundaryPolicy::RequireTangential),
    ] {
        let vel = velocity(&grid, &[q], 2.0, policy)?;
        let sc = scenario(ctx, grid.clone(), 0.05, vel, ReactionModel::logistic(), 0.5, 0.01, 0.5)?;
        let u0 = random_admissible(3, 0.5, grid.clone())?;
        step = step.max(mass_budget_report(&solve_forward(&u0, &sc)?).max_step_residual);
    }
    let sc = scenario(ctx, grid.clone(), 0.05, VelocityField::zero(grid.clone()), ReactionModel::logistic(), 0.5, 0.01, 0.5)?;
    let u0 = random_admissible(4, 0.5, grid.clone())?;
    let b = mass_budget_report(&solve_forward(&u0, &sc)?);
    let cumulative = (b.final_mass - (0.5 + b.cumulative_reaction)).abs();
    Ok((
        step <= 1e-12 && cumulative <= 1e-12,
        format!("per-step residual {step:e}, q = 0 cumulative residual {cumulative:e}"),
    ))
}

fn interior_state(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(0.1..0.9)).collect()
}

fn gradient_fd(ctx: &mut Ctx) -> Outcome {
    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    for k in 0..3 {
        let sc = random_scenario(ctx, &mut rng, 12)?;
        let u = interior_state(12, k);
        let g = gradient_values(&u, &sc)?;
        let dirs = random_directions(12, 3, k + 10);
        worst = worst.max(finite_difference_check(&u, &sc, &g.gradient, &dirs, 1e-5)?.max_rel_error);
    }
    Ok((worst <= 1e-6, format!("max relative error {worst:e}")))
}

fn gradient_forward_mode(ctx: &mut Ctx) -> Outcome {
    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    for k in 0..3 {
        let sc = random_scenario(ctx, &mut rng, 4)?;
        let u = interior_state(4, k);
        let g = gradient_values(&u, &sc)?;
        for d in random_directions(4, 3, k + 20) {
            let (_, fwd) = forward_mode_derivative(&u, &d, &sc)?;
            worst = worst.max((fwd - g.directional(&d)).abs());
        }
    }
    Ok((worst <= 1e-12, format!("max |adjoint - forward mode| = {worst:e}")))
}

fn concavity(ctx: &mut Ctx) -> Outcome {
    let grid = grid1(8)?;
    let sc = scenario(ctx, grid.clone(), 0.05, VelocityField::zero(grid), ReactionModel::logistic(), 0.5, 0.01, 0.5)?;
    let rep = concavity_probe(&sc, 0.5, 40, 505)?;
    Ok((rep.min_gap >= -1e-9, format!("40 triples, min gap {:e}", rep.min_gap)))
}

/// Exhaustive search over 4-cell data with values on a `1/steps` lattice and cell sum `total`.
pub fn lattice_extremes(sc: &Scenario, steps: usize, total: usize) -> Result<(f64, f64)> {
    let grid = sc.grid().clone();
    let n = grid.cell_count();
    let mut best = (f64::INFINITY, f64::NEG_INFINITY);
    let mut cur = vec![0usize; n];
    fn rec(
        i: usize,
        left: usize,
        steps: usize,
        cur: &mut Vec<usize>,
        f: &mut dyn FnMut(&[usize]) -> Result<()>,
    ) -> Result<()> {
        if i + 1 == cur.len() {
            if left <= steps {
                cur[i] = left;
                f(cur)?;
            }
            return Ok(());
        }
        for k in 0..=steps.min(left) {
            cur[i] = k;
            rec(i + 1, left - k, steps, cur, f)?;
        }
        Ok(())
    }
    rec(0, total, steps, &mut cur, &mut |c| {
        let u: Vec<f64> = c.iter().map(|&k| k as f64 / steps as f64).collect();
        let v = grid.integrate_values(&final_state(&u, sc)?);
        best = (best.0.min(v), best.1.max(v));
        Ok(())
    })?;
    Ok(best)
}

fn lattice_oracle(ctx: &mut Ctx) -> Outcome {
    let grid = grid1(4)?;
    let sc = scenario(ctx, grid.clone(), 0.05, VelocityField::zero(grid), ReactionModel::logistic(), 0.5, 0.01, 0.5)?;
    let (_, lattice_max) = lattice_extremes(&sc, 20, 40)?;
    let opt = maximize(&sc, 0.5, &OptConfig::default())?;
    let gap = (opt.best_value - lattice_max).abs();
    Ok((
        gap <= 2e-3 && opt.best_value >= lattice_max - 1e-12,
        format!("optimizer {} vs lattice {} (gap {gap:e})", opt.best_value, lattice_max),
    ))
}

fn threshold_formula(_: &mut Ctx) -> Outcome {
    let base = threshold_amplitude(1.0, 1.0, 0.5, -1.0)?;
    let scaled_m = threshold_amplitude(3.0, 1.0, 0.5, -1.0)?;
    let scaled_mass = threshold_amplitude(1.0, 1.0, 1.5, -1.0)?;
    let rejects = threshold_amplitude(1.0, 1.0, 0.5, 0.2).is_err();
    let ok = base == 2.0
        && (scaled_m - 3.0 * base).abs() <= 4.0 * f64::EPSILON * scaled_m
        && (scaled_mass - base / 3.0).abs() <= 4.0 * f64::EPSILON * base
        && rejects;
    Ok((ok, format!("A*(1, 1, 0.5, -1) = {base}")))
}

fn logistic_error(ctx: &Ctx, dt: f64) -> Result<f64> {
    let grid = grid1(8)?;
    let sc = scenario(ctx, grid.clone(), 0.1, VelocityField::zero(grid.clone()), ReactionModel::logistic(), 1.0, dt, 0.5)?;
    let it = terminal_mass(&InitialDatum::uniform(grid, 0.5)?, &sc)?;
    Ok((it - 1.0 / (1.0 + (-1.0f64).exp())).abs())
}

fn logistic_ode(ctx: &mut Ctx) -> Outcome {
    let e = logistic_error(ctx, 1e-3)?;
    Ok((e <= 5e-3, format!("|I_T - 1/(1+e^-1)| = {e:e} at dt = 1e-3")))
}

fn monotonicity(ctx: &mut Ctx) -> Outcome {
    let grid = grid1(16)?;
    let u0 = random_admissible(6, 0.5, grid.clone())?;
    let up = scenario(ctx, grid.clone(), 0.05, VelocityField::zero(grid.clone()), ReactionModel::logistic(), 0.5, 0.01, 0.5)?;
    let down = scenario(ctx, grid.clone(), 0.05, VelocityField::zero(grid.clone()), ReactionModel::convex_negative(), 0.5, 0.01, 0.5)?;
    let a = monotonicity_check(&solve_forward(&u0, &up)?);
    let b = monotonicity_check(&solve_forward(&u0, &down)?);
    Ok((a && !b, format!("logistic monotone = {a}, convex_negative monotone = {b}")))
}

fn box_preservation_2d(ctx: &mut Ctx) -> Outcome {
    let grid = Arc::new(build_grid(2, &[1.0, 1.0], &[12, 12])?);
    let vel = velocity(
        &grid,
        &["sin(pi*x)*cos(pi*y)", "sin(pi*y)*cos(pi*x)"],
        4.0,
        BoundaryPolicy::RequireTangential,
    )?;
    let sc = scenario(ctx, grid.clone(), 0.02, vel, ReactionModel::logistic(), 0.3, 0.01, 0.3)?;
    let mut excursion = 0.0f64;
    let mut outside = false;
    for seed in 0..4 {
        let tr = solve_forward(&random_admissible(seed, 0.3, grid.clone())?, &sc)?;
        excursion = excursion.max(tr.max_excursion());
        outside |= tr.states().any(|(_, u)| u.values().iter().any(|v| !(0.0..=1.0).contains(v)));
    }
    Ok((!outside && excursion <= 1e-8, format!("max excursion removed by the clamp {excursion:e}")))
}

fn push_rates(ctx: &mut Ctx, study: &'static str, params: &[f64], errors: &[f64]) -> f64 {
    let mut min_rate = f64::INFINITY;
    for i in 0..params.len() {
        let rate = (i > 0).then(|| (errors[i - 1] / errors[i]).ln() / (params[i - 1] / params[i]).ln());
        if let Some(r) = rate {
            min_rate = min_rate.min(r);
        }
        ctx.rates.push(RateRow {
            study,
            param: params[i],
            error: errors[i],
            rate,
        });
    }
    min_rate
}

fn logistic_dt_refinement(ctx: &mut Ctx) -> Outcome {
    let dts = [2e-3, 1e-3, 5e-4];
    let errs = dts.iter().map(|&dt| logistic_error(ctx, dt)).collect::<Result<Vec<_>>>()?;
    let rate = push_rates(ctx, "logistic_dt", &dts, &errs);
    Ok((rate >= 0.9, format!("min observed order in dt {rate:.3}")))
}

fn heat_h_refinement(ctx: &mut Ctx) -> Outcome {
    let sigma = 0.1;
    let t = 0.5;
    let mut hs = Vec::new();
    let mut errs = Vec::new();
    for n in [8usize, 16, 32] {
        let grid = grid1(n)?;
        let sc = scenario(ctx, grid.clone(), sigma, VelocityField::zero(grid.clone()), ReactionModel::zero(), t, 1e-5, 0.5)?;
        let u0: Vec<f64> = grid
            .cell_centers()
            .iter()
            .map(|p| 0.5 + 0.5 * (std::f64::consts::PI * p[0]).cos())
            .collect();
        let u = final_state(&u0, &sc)?;
        let decay = (-sigma * std::f64::consts::PI.powi(2) * t).exp();
        let err = grid
            .cell_centers()
            .iter()
            .zip(&u)
            .map(|(p, v)| (v - (0.5 + 0.5 * decay * (std::f64::consts::PI * p[0]).cos())).abs())
            .fold(0.0, f64::max);
        hs.push(1.0 / n as f64);
        errs.push(err);
    }
    let rate = push_rates(ctx, "heat_h", &hs, &errs);
    Ok((rate >= 1.8, format!("min observed order in h {rate:.3}")))
}

fn advection_refinement(ctx: &mut Ctx) -> Outcome {
    let mut hs = Vec::new();
    let mut errs = Vec::new();
    for n in [16usize, 32, 64] {
        let grid = grid1(n)?;
        let vel = velocity(&grid, &["sin(pi*x)"], 1.0, BoundaryPolicy::RequireTangential)?;
        let sc = scenario(ctx, grid.clone(), 0.05, vel, ReactionModel::logistic(), 0.5, 1e-3, 0.5)?;
        let u0: Vec<f64> = grid.cell_centers().iter().map(|p| 0.5 + 0.4 * (3.0 * p[0]).sin()).collect();
        let b = mass_budget_report(&solve_forward_values(&u0, &sc)?);
        hs.push(1.0 / n as f64);
        errs.push(b.advection_discrepancy.abs());
    }
    let rate = push_rates(ctx, "advection_discrepancy_h", &hs, &errs);
    Ok((rate >= 1.0, format!("min observed order in h {rate:.3}")))
}
