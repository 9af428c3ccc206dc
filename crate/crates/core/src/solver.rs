//! IMEX forward integration with a per-step mass ledger.
//!
//! One step from `uⁿ` at time `tⁿ`:
//!
//! ```text
//! u* = uⁿ + dt·(Adv(uⁿ) + f(tⁿ, x, uⁿ))      explicit upwind advection and reaction
//! (I - dt·L) uⁿ⁺¹ = u*                       implicit zero-flux diffusion
//! ```
//!
//! `Adv` discretizes the non-conservative term `A q·∇u` face by face: the
//! jump `A q_f (u_R - u_L)/h` across an interior face is sent to the cell on
//! the upwind side of the characteristic, i.e. the left cell when `A q_f > 0`
//! and the right cell otherwise. With the time step restricted so that
//! `dt·(M + A Σ_axis γ_axis/h_axis) ≤ 0.9`, the explicit map is monotone and
//! fixes the constants 0 and 1, and `(I - dt·L)⁻¹` is a non-negative,
//! constant-preserving matrix, so the scheme maps `[0,1]` into itself and
//! preserves the cellwise order of data.

use std::io::Write;
use std::sync::Arc;

use crate::admissible::InitialDatum;
use crate::dual::{Dual, Real};
use crate::error::{Error, Result};
use crate::grid::{Grid, Point, ScalarField};
use crate::linalg::DiffusionOperator;
use crate::models::{
    validate_field, DiffusionModel, FieldReport, ReactionCheck, ReactionModel, VelocityField,
};

pub const DEFAULT_LINEAR_TOL: f64 = 1e-10;
pub const STABILITY_MARGIN: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AdvectionScheme {
    #[default]
    Upwind,
    /// Sends each face jump to the wrong cell. Only for fault-injection checks.
    #[doc(hidden)]
    DownwindFault,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub final_time: f64,
    pub dt_target: f64,
    pub checkpoint_every: usize,
    pub linear_tol: f64,
    pub advection_scheme: AdvectionScheme,
}

impl SolverConfig {
    pub fn new(final_time: f64, dt_target: f64) -> Result<Self> {
        let cfg = Self {
            final_time,
            dt_target,
            checkpoint_every: 1,
            linear_tol: DEFAULT_LINEAR_TOL,
            advection_scheme: AdvectionScheme::Upwind,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_checkpoint_every(mut self, k: usize) -> Result<Self> {
        self.checkpoint_every = k;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.final_time.is_finite() && self.final_time > 0.0) {
            return Err(Error::InvalidConfig(format!("T must be positive, got {}", self.final_time)));
        }
        if !(self.dt_target.is_finite() && self.dt_target > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "dt_target must be positive, got {}",
                self.dt_target
            )));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::InvalidConfig("checkpoint_every must be at least 1".into()));
        }
        if !(self.linear_tol.is_finite() && self.linear_tol > 0.0) {
            return Err(Error::InvalidConfig("linear_tol must be positive".into()));
        }
        Ok(())
    }
}

/// Uniform time grid: `dt = T / n_steps` with `dt` at most the policy cap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub dt: f64,
    pub n_steps: usize,
    pub final_time: f64,
}

impl TimeGrid {
    pub fn time(&self, n: usize) -> f64 {
        if n == self.n_steps {
            self.final_time
        } else {
            n as f64 * self.dt
        }
    }
}

/// Everything that defines one forward problem.
#[derive(Debug, Clone)]
pub struct Scenario {
    grid: Arc<Grid>,
    diffusion: DiffusionModel,
    velocity: VelocityField,
    reaction: ReactionModel,
    solver: SolverConfig,
    mass_m: f64,
    field_report: FieldReport,
    reaction_check: ReactionCheck,
    cell_diffusivity: Arc<Vec<f64>>,
}

impl Scenario {
    /// Cross-validates the parts: the velocity report is computed (tangency
    /// violations are errors) and the reaction hypotheses are sampled.
    pub fn new(
        grid: Arc<Grid>,
        diffusion: DiffusionModel,
        velocity: VelocityField,
        reaction: ReactionModel,
        solver: SolverConfig,
        mass_m: f64,
    ) -> Result<Self> {
        solver.validate()?;
        let vol = grid.total_volume();
        if !(mass_m > 0.0 && mass_m <= vol) {
            return Err(Error::Infeasible(format!("mass {mass_m} must lie in (0, {vol}]")));
        }
        let field_report = validate_field(&velocity, &grid)?;
        let mut pts = grid.cell_centers();
        pts.extend(grid.boundary_faces().iter().map(|f| f.center));
        let times = [0.0, 0.5 * solver.final_time, solver.final_time];
        let reaction_check = reaction.check_hypotheses(&pts, &times, 0.05);
        if !reaction_check.endpoints_vanish() {
            return Err(Error::HypothesisViolation(format!(
                "reaction {} does not vanish at u = 0 and u = 1 (residual {:e})",
                reaction.name(),
                reaction_check.endpoint_residual
            )));
        }
        if !reaction_check.lipschitz_holds() {
            return Err(Error::HypothesisViolation(format!(
                "reaction {} exceeds its Lipschitz bound by {:e}",
                reaction.name(),
                reaction_check.derivative_excess
            )));
        }
        let cell_diffusivity = Arc::new(diffusion.cell_values(&grid));
        Ok(Self {
            grid,
            diffusion,
            velocity,
            reaction,
            solver,
            mass_m,
            field_report,
            reaction_check,
            cell_diffusivity,
        })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn diffusion(&self) -> &DiffusionModel {
        &self.diffusion
    }

    pub fn velocity(&self) -> &VelocityField {
        &self.velocity
    }

    pub fn reaction(&self) -> &ReactionModel {
        &self.reaction
    }

    pub fn solver(&self) -> &SolverConfig {
        &self.solver
    }

    pub fn mass(&self) -> f64 {
        self.mass_m
    }

    pub fn field_report(&self) -> &FieldReport {
        &self.field_report
    }

    pub fn reaction_check(&self) -> &ReactionCheck {
        &self.reaction_check
    }

    pub fn amplitude(&self) -> f64 {
        self.velocity.amplitude()
    }

    pub fn with_amplitude(&self, amplitude: f64) -> Result<Self> {
        if !(amplitude.is_finite() && amplitude >= 0.0) {
            return Err(Error::InvalidModel(format!("amplitude must be non-negative, got {amplitude}")));
        }
        Ok(Self {
            velocity: self.velocity.with_amplitude(amplitude),
            ..self.clone()
        })
    }

    pub fn with_solver(&self, solver: SolverConfig) -> Result<Self> {
        solver.validate()?;
        Ok(Self {
            solver,
            ..self.clone()
        })
    }

    pub fn with_reaction(&self, reaction: ReactionModel) -> Result<Self> {
        Self::new(
            self.grid.clone(),
            self.diffusion.clone(),
            self.velocity.clone(),
            reaction,
            self.solver.clone(),
            self.mass_m,
        )
    }

    pub fn with_mass(&self, mass_m: f64) -> Result<Self> {
        let vol = self.grid.total_volume();
        if !(mass_m > 0.0 && mass_m <= vol) {
            return Err(Error::Infeasible(format!("mass {mass_m} must lie in (0, {vol}]")));
        }
        Ok(Self {
            mass_m,
            ..self.clone()
        })
    }

    /// Largest step keeping the explicit part monotone, before `dt_target` is applied.
    pub fn stability_cap(&self) -> f64 {
        let a = self.velocity.amplitude();
        let mut rate = self.reaction.lipschitz_m();
        for axis in 0..self.grid.dim() {
            rate += a * self.velocity.max_face_speed(axis) / self.grid.spacing()[axis];
        }
        if rate > 0.0 {
            STABILITY_MARGIN / rate
        } else {
            f64::INFINITY
        }
    }

    pub fn time_grid(&self) -> TimeGrid {
        let cap = self.solver.dt_target.min(self.stability_cap());
        let t = self.solver.final_time;
        let n_steps = ((t / cap) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        TimeGrid {
            dt: t / n_steps as f64,
            n_steps,
            final_time: t,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct AdvFace {
    pub left: usize,
    pub right: usize,
    /// `A q_f / h_axis`.
    pub coef: f64,
    /// Cell that receives the face jump.
    pub target: usize,
}

/// Per-run cached operators for a fixed `dt`.
pub(crate) struct Stepper<'a> {
    pub scenario: &'a Scenario,
    pub dt: f64,
    pub op: DiffusionOperator,
    pub faces: Vec<AdvFace>,
    pub centers: Vec<Point>,
    /// `Σ_faces area·A q·ν_out` per cell, i.e. `|cell|·div_h(Aq)`.
    outflow: Vec<f64>,
    /// `(cell, area·A q·ν_out)` for boundary faces.
    boundary: Vec<(usize, f64)>,
    /// `|cell|·A·(∇·q)(x_i)` with the sampled (analytic if available) divergence.
    continuum_div: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BudgetRecord {
    pub t: f64,
    pub dt: f64,
    pub mass_before: f64,
    pub mass_after: f64,
    /// `-Σ |cell| uᵢ div_h(Aq)ᵢ`: discrete analogue of `-A∫(∇·q)u`.
    pub advection_contrib: f64,
    /// `Σ |cell| f(t, xᵢ, uᵢ)`.
    pub reaction_contrib: f64,
    /// Measured mass change of the implicit diffusion solve, per unit time.
    pub diffusion_flux: f64,
    /// `Σ_boundary area·A(q·ν)u`: advective flux through the boundary.
    pub boundary_flux: f64,
    /// `-A Σ |cell| (∇·q)(xᵢ) uᵢ` with the sampled divergence field.
    pub continuum_advection: f64,
    /// Largest round-off excursion outside `[0,1]` removed after the solve.
    pub excursion: f64,
}

impl BudgetRecord {
    /// `mass_after - mass_before - dt·(sum of contributions)`.
    pub fn residual(&self) -> f64 {
        (self.mass_after - self.mass_before)
            - self.dt
                * (self.advection_contrib
                    + self.reaction_contrib
                    + self.diffusion_flux
                    + self.boundary_flux)
    }
}

impl<'a> Stepper<'a> {
    pub fn new(scenario: &'a Scenario, dt: f64) -> Self {
        let grid = scenario.grid();
        let vel = scenario.velocity();
        let h = grid.spacing();
        let op = DiffusionOperator::new(
            grid,
            &scenario.cell_diffusivity,
            dt,
            scenario.solver.linear_tol,
        );
        let fault = scenario.solver.advection_scheme == AdvectionScheme::DownwindFault;
        let mut outflow = vec![0.0; grid.cell_count()];
        let faces: Vec<AdvFace> = grid
            .interior_faces()
            .iter()
            .map(|f| {
                let a = vel.face_velocity(f.axis, f.slot);
                let area = grid.face_area(f.axis);
                outflow[f.left] += area * a;
                outflow[f.right] -= area * a;
                let upwind_left = a > 0.0;
                let target = if upwind_left != fault { f.left } else { f.right };
                AdvFace {
                    left: f.left,
                    right: f.right,
                    coef: a / h[f.axis],
                    target,
                }
            })
            .collect();
        let boundary: Vec<(usize, f64)> = grid
            .boundary_faces()
            .iter()
            .map(|f| {
                let flux = grid.face_area(f.axis) * vel.face_velocity(f.axis, f.slot) * f.outward;
                outflow[f.cell] += flux;
                (f.cell, flux)
            })
            .collect();
        let vol = grid.cell_volume();
        let a = vel.amplitude();
        let continuum_div = vel
            .divergence()
            .values()
            .iter()
            .map(|d| vol * a * d)
            .collect();
        Self {
            scenario,
            dt,
            op,
            faces,
            centers: grid.cell_centers(),
            outflow,
            boundary,
            continuum_div,
        }
    }

    /// `u + dt·(Adv u + f(t, x, u))`.
    pub fn explicit<S: Real>(&self, u: &[S], t: f64) -> Vec<S> {
        let dt = self.dt;
        let mut w = u.to_vec();
        for f in &self.faces {
            if f.coef != 0.0 {
                let jump = u[f.right] - u[f.left];
                w[f.target] = w[f.target] + jump * (dt * f.coef);
            }
        }
        let reaction = self.scenario.reaction();
        for (i, (wi, &ui)) in w.iter_mut().zip(u).enumerate() {
            let x = self.centers[i];
            let v = ui.value();
            let r = ui.lift(reaction.eval(t, x, v), reaction.deriv(t, x, v));
            *wi = *wi + r * dt;
        }
        w
    }

    /// One full step; returns the new state and the largest clamped excursion.
    pub fn advance<S: Real>(&self, u: &[S], t: f64) -> Result<(Vec<S>, f64)> {
        let w = self.explicit(u, t);
        let mut solved = S::solve_lanes(&w, &mut |b| self.op.solve(b))?;
        let mut excursion: f64 = 0.0;
        for v in solved.iter_mut() {
            let (c, e) = v.clamp_unit();
            *v = c;
            excursion = excursion.max(e);
        }
        Ok((solved, excursion))
    }

    /// Step with the mass ledger.
    pub fn advance_recorded(&self, u: &[f64], t: f64) -> Result<(Vec<f64>, BudgetRecord)> {
        let grid = self.scenario.grid();
        let dt = self.dt;
        let reaction = self.scenario.reaction();
        let vol = grid.cell_volume();
        let advection_contrib = -u.iter().zip(&self.outflow).map(|(u, o)| u * o).sum::<f64>();
        let boundary_flux = self.boundary.iter().map(|&(c, f)| f * u[c]).sum::<f64>();
        let reaction_contrib = vol
            * u.iter()
                .enumerate()
                .map(|(i, &v)| reaction.eval(t, self.centers[i], v))
                .sum::<f64>();
        let continuum_advection = -u
            .iter()
            .zip(&self.continuum_div)
            .map(|(u, d)| u * d)
            .sum::<f64>();
        let w = self.explicit(u, t);
        let mass_star = grid.integrate_values(&w);
        let mut next = self.op.solve(&w)?;
        let mut excursion: f64 = 0.0;
        for v in next.iter_mut() {
            let (c, e) = v.clamp_unit();
            *v = c;
            excursion = excursion.max(e);
        }
        let mass_after = grid.integrate_values(&next);
        let rec = BudgetRecord {
            t,
            dt,
            mass_before: grid.integrate_values(u),
            mass_after,
            advection_contrib,
            reaction_contrib,
            diffusion_flux: (mass_after - mass_star) / dt,
            boundary_flux,
            continuum_advection,
            excursion,
        };
        Ok((next, rec))
    }

    /// `y = y + dt·Advᵀ w` for the explicit advection operator.
    pub fn add_advection_transpose(&self, w: &[f64], y: &mut [f64]) {
        for f in &self.faces {
            if f.coef != 0.0 {
                let c = self.dt * f.coef * w[f.target];
                y[f.right] += c;
                y[f.left] -= c;
            }
        }
    }
}

/// Advances one step of size `dt`, which must respect the stability cap.
pub fn step(u: &ScalarField, t: f64, dt: f64, scenario: &Scenario) -> Result<ScalarField> {
    check_field(u, scenario)?;
    let cap = scenario.stability_cap();
    if !(dt > 0.0 && dt <= cap * (1.0 + 1e-12)) {
        return Err(Error::InvalidConfig(format!(
            "time step {dt} violates the stability cap {cap}"
        )));
    }
    let stepper = Stepper::new(scenario, dt);
    let (next, _) = stepper.advance(u.values(), t)?;
    ScalarField::new(scenario.grid().clone(), next)
}

fn check_field(u: &ScalarField, scenario: &Scenario) -> Result<()> {
    if **u.grid() != **scenario.grid() {
        return Err(Error::Data("state lives on a different grid than the scenario".into()));
    }
    Ok(())
}

/// Checkpointed forward solution and its mass ledger.
#[derive(Debug, Clone)]
pub struct Trajectory {
    grid: Arc<Grid>,
    time_grid: TimeGrid,
    checkpoint_every: usize,
    /// `(step index, state)`; always includes step 0 and the final step.
    checkpoints: Vec<(usize, Vec<f64>)>,
    budget: Vec<BudgetRecord>,
    initial_mass: f64,
}

impl Trajectory {
    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn time_grid(&self) -> TimeGrid {
        self.time_grid
    }

    pub fn n_steps(&self) -> usize {
        self.time_grid.n_steps
    }

    pub fn checkpoint_every(&self) -> usize {
        self.checkpoint_every
    }

    pub fn budget(&self) -> &[BudgetRecord] {
        &self.budget
    }

    pub fn initial_mass(&self) -> f64 {
        self.initial_mass
    }

    /// Stored states with their times.
    pub fn states(&self) -> impl Iterator<Item = (f64, ScalarField)> + '_ {
        self.checkpoints.iter().map(|(n, v)| {
            (
                self.time_grid.time(*n),
                ScalarField::new(self.grid.clone(), v.clone()).expect("stored state matches grid"),
            )
        })
    }

    pub fn checkpoint_steps(&self) -> Vec<usize> {
        self.checkpoints.iter().map(|(n, _)| *n).collect()
    }

    pub fn checkpoint(&self, n: usize) -> Option<&[f64]> {
        self.checkpoints
            .binary_search_by_key(&n, |(k, _)| *k)
            .ok()
            .map(|i| self.checkpoints[i].1.as_slice())
    }

    pub fn final_state(&self) -> ScalarField {
        let (_, v) = self.checkpoints.last().expect("trajectory has a final state");
        ScalarField::new(self.grid.clone(), v.clone()).expect("stored state matches grid")
    }

    pub fn final_mass(&self) -> f64 {
        self.budget
            .last()
            .map(|r| r.mass_after)
            .unwrap_or(self.initial_mass)
    }

    /// `∫uⁿ` for `n = 0..=N`.
    pub fn masses(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.budget.len() + 1);
        out.push(self.budget.first().map(|r| r.mass_before).unwrap_or(self.initial_mass));
        out.extend(self.budget.iter().map(|r| r.mass_after));
        out
    }

    pub fn max_excursion(&self) -> f64 {
        self.budget.iter().fold(0.0, |m, r| m.max(r.excursion))
    }

    /// Columns `t, mass, advection_contrib, reaction_contrib, boundary_flux`.
    /// Row `n` carries the contributions of the step ending at `tⁿ`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "mass", "advection_contrib", "reaction_contrib", "boundary_flux"])?;
        let masses = self.masses();
        w.write_record([
            "0".to_string(),
            masses[0].to_string(),
            "0".into(),
            "0".into(),
            "0".into(),
        ])?;
        for (n, r) in self.budget.iter().enumerate() {
            w.write_record([
                self.time_grid.time(n + 1).to_string(),
                r.mass_after.to_string(),
                r.advection_contrib.to_string(),
                r.reaction_contrib.to_string(),
                r.boundary_flux.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Writes a state as CSV with columns `x[, y], <value_name>`.
pub fn write_state_csv<W: Write>(field: &ScalarField, value_name: &str, writer: W) -> Result<()> {
    let grid = field.grid();
    let mut w = csv::Writer::from_writer(writer);
    if grid.dim() == 1 {
        w.write_record(["x", value_name])?;
    } else {
        w.write_record(["x", "y", value_name])?;
    }
    for (i, v) in field.values().iter().enumerate() {
        let c = grid.cell_center(i);
        if grid.dim() == 1 {
            w.write_record([c[0].to_string(), v.to_string()])?;
        } else {
            w.write_record([c[0].to_string(), c[1].to_string(), v.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn check_datum(u0: &InitialDatum, scenario: &Scenario) -> Result<()> {
    check_field(u0.field(), scenario)?;
    if u0.mass() != scenario.mass() {
        return Err(Error::Data(format!(
            "datum mass {} differs from the scenario mass {}",
            u0.mass(),
            scenario.mass()
        )));
    }
    Ok(())
}

/// Integrates to `T`, storing checkpoints every `checkpoint_every` steps.
pub fn solve_forward(u0: &InitialDatum, scenario: &Scenario) -> Result<Trajectory> {
    check_datum(u0, scenario)?;
    solve_forward_values(u0.values(), scenario)
}

/// Like [`solve_forward`] for any `[0,1]`-valued initial state (no mass constraint).
pub fn solve_forward_values(u0: &[f64], scenario: &Scenario) -> Result<Trajectory> {
    let grid = scenario.grid().clone();
    if u0.len() != grid.cell_count() {
        return Err(Error::ShapeMismatch {
            expected: grid.cell_count(),
            found: u0.len(),
        });
    }
    let tg = scenario.time_grid();
    let every = scenario.solver().checkpoint_every;
    let stepper = Stepper::new(scenario, tg.dt);
    let mut u = u0.to_vec();
    let mut checkpoints = vec![(0, u.clone())];
    let mut budget = Vec::with_capacity(tg.n_steps);
    for n in 0..tg.n_steps {
        let (next, rec) = stepper.advance_recorded(&u, tg.time(n))?;
        budget.push(rec);
        u = next;
        if (n + 1) % every == 0 || n + 1 == tg.n_steps {
            checkpoints.push((n + 1, u.clone()));
        }
    }
    Ok(Trajectory {
        grid: grid.clone(),
        time_grid: tg,
        checkpoint_every: every,
        checkpoints,
        budget,
        initial_mass: grid.integrate_values(u0),
    })
}

/// Final state only, without storing the trajectory.
pub fn final_state(u0: &[f64], scenario: &Scenario) -> Result<Vec<f64>> {
    let tg = scenario.time_grid();
    let stepper = Stepper::new(scenario, tg.dt);
    let mut u = u0.to_vec();
    for n in 0..tg.n_steps {
        u = stepper.advance(&u, tg.time(n))?.0;
    }
    Ok(u)
}

/// `I_T(u₀) = ∫ u(T)`.
pub fn terminal_mass(u0: &InitialDatum, scenario: &Scenario) -> Result<f64> {
    check_datum(u0, scenario)?;
    let u = final_state(u0.values(), scenario)?;
    Ok(scenario.grid().integrate_values(&u))
}

/// `(I_T(u₀), dI_T(u₀)·δ)` by running the scheme on dual numbers.
pub fn forward_mode_derivative(u0: &[f64], direction: &[f64], scenario: &Scenario) -> Result<(f64, f64)> {
    let n = scenario.grid().cell_count();
    if u0.len() != n || direction.len() != n {
        return Err(Error::ShapeMismatch {
            expected: n,
            found: u0.len().min(direction.len()),
        });
    }
    let tg = scenario.time_grid();
    let stepper = Stepper::new(scenario, tg.dt);
    let mut u: Vec<Dual> = u0
        .iter()
        .zip(direction)
        .map(|(&v, &d)| Dual::new(v, d))
        .collect();
    for k in 0..tg.n_steps {
        u = stepper.advance(&u, tg.time(k))?.0;
    }
    let vol = scenario.grid().cell_volume();
    Ok((
        vol * u.iter().map(|x| x.v).sum::<f64>(),
        vol * u.iter().map(|x| x.d).sum::<f64>(),
    ))
}

/// Cumulative ledger of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MassBudgetReport {
    pub initial_mass: f64,
    pub final_mass: f64,
    /// `∫u(T) - ∫u₀`.
    pub mass_change: f64,
    pub cumulative_advection: f64,
    pub cumulative_reaction: f64,
    pub cumulative_diffusion: f64,
    pub cumulative_boundary: f64,
    /// `-A ∫∫ (∇·q) u` by left-endpoint quadrature in time.
    pub continuum_advection: f64,
    /// `(advection + boundary) - (continuum advection + boundary)`.
    pub advection_discrepancy: f64,
    pub max_step_residual: f64,
}

pub fn mass_budget_report(traj: &Trajectory) -> MassBudgetReport {
    let mut r = MassBudgetReport {
        initial_mass: traj.masses()[0],
        final_mass: traj.final_mass(),
        mass_change: 0.0,
        cumulative_advection: 0.0,
        cumulative_reaction: 0.0,
        cumulative_diffusion: 0.0,
        cumulative_boundary: 0.0,
        continuum_advection: 0.0,
        advection_discrepancy: 0.0,
        max_step_residual: 0.0,
    };
    r.mass_change = r.final_mass - r.initial_mass;
    for b in traj.budget() {
        r.cumulative_advection += b.dt * b.advection_contrib;
        r.cumulative_reaction += b.dt * b.reaction_contrib;
        r.cumulative_diffusion += b.dt * b.diffusion_flux;
        r.cumulative_boundary += b.dt * b.boundary_flux;
        r.continuum_advection += b.dt * b.continuum_advection;
        r.max_step_residual = r.max_step_residual.max(b.residual().abs());
    }
    r.advection_discrepancy = r.cumulative_advection - r.continuum_advection;
    r
}

impl MassBudgetReport {
    pub fn rows(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("initial_mass", self.initial_mass),
            ("final_mass", self.final_mass),
            ("mass_change", self.mass_change),
            ("cumulative_advection", self.cumulative_advection),
            ("cumulative_reaction", self.cumulative_reaction),
            ("cumulative_diffusion", self.cumulative_diffusion),
            ("cumulative_boundary", self.cumulative_boundary),
            ("continuum_advection", self.continuum_advection),
            ("advection_discrepancy", self.advection_discrepancy),
            ("max_step_residual", self.max_step_residual),
        ]
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["quantity", "value"])?;
        for (k, v) in self.rows() {
            w.write_record([k.to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}
