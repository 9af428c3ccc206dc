//! Exact gradient of the discrete terminal mass by reverse-mode sweep.
//!
//! One forward step is `uⁿ⁺¹ = clamp(S⁻¹ Eₙ(uⁿ))` with `S = I - dt·L` and
//! `Eₙ(u) = u + dt·(Adv u + f(tⁿ, x, u))`. Treating the round-off clamp as the
//! identity, the transposed linearization is
//!
//! ```text
//! w  = S⁻¹ pⁿ⁺¹                       (S is symmetric)
//! pⁿ = w + dt·Advᵀ w + dt·f'(tⁿ, x, uⁿ) ⊙ w
//! ```
//!
//! started from `pᴺ ≡ 1`. Then `dI_T(u₀)·δ = ∫ p⁰ δ`.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::admissible::InitialDatum;
use crate::error::{Error, Result};
use crate::grid::ScalarField;
use crate::solver::{self, solve_forward, Scenario, Stepper, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdSample {
    pub adjoint: f64,
    pub finite_difference: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdCheck {
    pub eps: f64,
    pub samples: Vec<FdSample>,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradientResult {
    /// `p⁰`, so that `dI_T·δ = ∫ p⁰ δ`.
    pub gradient: ScalarField,
    pub objective: f64,
    pub fd_check: Option<FdCheck>,
}

impl GradientResult {
    /// `∫ gradient · δ`.
    pub fn directional(&self, direction: &[f64]) -> f64 {
        directional(&self.gradient, direction)
    }

    /// Columns `x[, y], g`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        solver::write_state_csv(&self.gradient, "g", writer)
    }
}

pub fn directional(gradient: &ScalarField, direction: &[f64]) -> f64 {
    let vol = gradient.grid().cell_volume();
    vol * gradient
        .values()
        .iter()
        .zip(direction)
        .map(|(g, d)| g * d)
        .sum::<f64>()
}

pub fn gradient(u0: &InitialDatum, scenario: &Scenario) -> Result<GradientResult> {
    let traj = solve_forward(u0, scenario)?;
    gradient_from_trajectory(&traj, scenario)
}

/// Gradient at an arbitrary `[0,1]`-valued state, without the mass constraint.
pub fn gradient_values(u0: &[f64], scenario: &Scenario) -> Result<GradientResult> {
    let traj = solver::solve_forward_values(u0, scenario)?;
    gradient_from_trajectory(&traj, scenario)
}

/// Backward sweep over a stored trajectory, replaying segments between checkpoints.
pub fn gradient_from_trajectory(traj: &Trajectory, scenario: &Scenario) -> Result<GradientResult> {
    let grid = scenario.grid();
    if **traj.grid() != **grid || traj.time_grid() != scenario.time_grid() {
        return Err(Error::Data(
            "trajectory was not produced by this scenario".into(),
        ));
    }
    let tg = traj.time_grid();
    let stepper = Stepper::new(scenario, tg.dt);
    let reaction = scenario.reaction();
    let steps = traj.checkpoint_steps();
    if steps.first() != Some(&0) || steps.last() != Some(&tg.n_steps) {
        return Err(Error::Data("trajectory is missing its first or last checkpoint".into()));
    }
    let n = grid.cell_count();
    let mut p = vec![1.0; n];
    for seg in steps.windows(2).rev() {
        let (start, end) = (seg[0], seg[1]);
        let mut states = Vec::with_capacity(end - start);
        let mut u = traj.checkpoint(start).expect("listed checkpoint exists").to_vec();
        for k in start..end {
            let next = if k + 1 < end {
                Some(stepper.advance(&u, tg.time(k))?.0)
            } else {
                None
            };
            states.push(u);
            match next {
                Some(v) => u = v,
                None => break,
            }
        }
        for k in (start..end).rev() {
            let uk = &states[k - start];
            let t = tg.time(k);
            let w = stepper.op.solve(&p)?;
            let mut next = w.clone();
            stepper.add_advection_transpose(&w, &mut next);
            for i in 0..n {
                next[i] += tg.dt * reaction.deriv(t, stepper.centers[i], uk[i]) * w[i];
            }
            p = next;
        }
    }
    if p.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite adjoint state".into()));
    }
    Ok(GradientResult {
        gradient: ScalarField::new(grid.clone(), p)?,
        objective: traj.final_mass(),
        fd_check: None,
    })
}

fn objective(u: &[f64], scenario: &Scenario) -> Result<f64> {
    Ok(scenario.grid().integrate_values(&solver::final_state(u, scenario)?))
}

/// Compares `∫ p⁰ δ` with central differences `(I(u+εδ) - I(u-εδ))/2ε`.
///
/// `u0 ± εδ` must stay inside `[0,1]` for the comparison to be meaningful.
pub fn finite_difference_check(
    u0: &[f64],
    scenario: &Scenario,
    gradient: &ScalarField,
    directions: &[Vec<f64>],
    eps: f64,
) -> Result<FdCheck> {
    let samples = directions
        .par_iter()
        .map(|d| {
            let plus: Vec<f64> = u0.iter().zip(d).map(|(u, d)| u + eps * d).collect();
            let minus: Vec<f64> = u0.iter().zip(d).map(|(u, d)| u - eps * d).collect();
            let fd = (objective(&plus, scenario)? - objective(&minus, scenario)?) / (2.0 * eps);
            let adj = directional(gradient, d);
            let scale = adj.abs().max(fd.abs()).max(f64::MIN_POSITIVE);
            Ok(FdSample {
                adjoint: adj,
                finite_difference: fd,
                rel_error: (adj - fd).abs() / scale,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let max_rel_error = samples.iter().fold(0.0, |m: f64, s| m.max(s.rel_error));
    Ok(FdCheck {
        eps,
        samples,
        max_rel_error,
    })
}

/// Uniform random directions in `[-1,1]ⁿ`.
pub fn random_directions(n_cells: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| (0..n_cells).map(|_| rng.gen_range(-1.0..=1.0)).collect())
        .collect()
}

/// Gradient plus a finite-difference check along `n_dirs` random directions.
pub fn gradient_with_check(
    u0: &InitialDatum,
    scenario: &Scenario,
    n_dirs: usize,
    eps: f64,
    seed: u64,
) -> Result<GradientResult> {
    let mut g = gradient(u0, scenario)?;
    let dirs = random_directions(u0.values().len(), n_dirs, seed);
    g.fd_check = Some(finite_difference_check(
        u0.values(),
        scenario,
        &g.gradient,
        &dirs,
        eps,
    )?);
    Ok(g)
}

/// `|I(u+εδ) - I(u) - ε∫p⁰δ|` for each `ε`.
pub fn taylor_remainders(
    u0: &[f64],
    scenario: &Scenario,
    gradient: &ScalarField,
    direction: &[f64],
    eps_list: &[f64],
) -> Result<Vec<(f64, f64)>> {
    let base = objective(u0, scenario)?;
    let slope = directional(gradient, direction);
    eps_list
        .iter()
        .map(|&e| {
            let u: Vec<f64> = u0.iter().zip(direction).map(|(u, d)| u + e * d).collect();
            Ok((e, (objective(&u, scenario)? - base - e * slope).abs()))
        })
        .collect()
}
