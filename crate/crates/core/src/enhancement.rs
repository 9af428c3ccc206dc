//! Advection-enhanced mass growth: threshold amplitude, the two-sided
//! comparison `inf I_T^A ≥ max I_T^0`, monotonicity of the mass, and the
//! large-amplitude drift diagnostic.

use std::io::Write;

use rayon::prelude::*;

use crate::admissible::random_admissible;
use crate::error::{Error, Result};
use crate::models::BoundaryPolicy;
use crate::optimizer::{multistart_directed, Direction, OptConfig, OptResult};
use crate::solver::{mass_budget_report, solve_forward, MassBudgetReport, Scenario, Trajectory};

/// Slack allowed in [`monotonicity_check`].
pub const MONOTONE_SLACK: f64 = 1e-12;
/// Slack allowed in the enhancement verdict.
pub const VERDICT_SLACK: f64 = 1e-6;

/// `A* = -M|Ω| / (m α)`.
pub fn threshold_amplitude(lipschitz_m: f64, omega_volume: f64, m: f64, alpha: f64) -> Result<f64> {
    if !(alpha.is_finite() && alpha < 0.0) {
        return Err(Error::HypothesisViolation(format!(
            "threshold amplitude needs a negative divergence bound, got alpha = {alpha}"
        )));
    }
    if !(m.is_finite() && m > 0.0 && omega_volume.is_finite() && omega_volume > 0.0) {
        return Err(Error::InvalidModel(format!(
            "threshold amplitude needs m > 0 and |Ω| > 0, got m = {m}, |Ω| = {omega_volume}"
        )));
    }
    if !(lipschitz_m.is_finite() && lipschitz_m >= 0.0) {
        return Err(Error::InvalidModel(format!("M must be non-negative, got {lipschitz_m}")));
    }
    Ok(-(lipschitz_m * omega_volume) / (m * alpha))
}

/// Whether `∫uⁿ` is nondecreasing in `n` up to [`MONOTONE_SLACK`].
pub fn monotonicity_check(traj: &Trajectory) -> bool {
    traj.masses()
        .windows(2)
        .all(|w| w[1] >= w[0] - MONOTONE_SLACK)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EnhanceOptions {
    /// Accept an amplitude below the threshold; recorded in the report.
    pub allow_below_threshold: bool,
}

#[derive(Debug, Clone)]
pub struct EnhancementReport {
    pub alpha: f64,
    pub lipschitz_m: f64,
    pub omega_volume: f64,
    pub m: f64,
    pub final_time: f64,
    /// `None` when `α ≥ 0`.
    pub a_threshold: Option<f64>,
    pub a_used: f64,
    pub below_threshold_override: bool,
    /// Best value of multistart minimization with advection: an upper bound on the infimum.
    pub inf_side_estimate: f64,
    /// Best value of multistart maximization with `A = 0`.
    pub max_side_value: f64,
    pub inequality_holds: bool,
    /// Mass monotonicity along the advected trajectory of the inf-side datum.
    pub monotone_mass: bool,
    /// `-A Σ dt ∫(∇·q)u` along that trajectory.
    pub drift_gain: f64,
    /// `m - A α T m`, the lower bound of the drift term in the proof chain.
    pub drift_bound: f64,
    /// `m + M T |Ω|`, the upper bound of the unadvected terminal mass.
    pub unadvected_bound: f64,
    pub policy_note: String,
    pub notes: Vec<String>,
    pub budget_advected: MassBudgetReport,
    pub budget_unadvected: MassBudgetReport,
    pub inf_side_converged: bool,
    pub max_side_converged: bool,
}

impl EnhancementReport {
    /// `m + drift_gain ≥ m - AαTm ≥ m + MT|Ω|` as three flags.
    pub fn proof_chain(&self) -> [(&'static str, bool); 3] {
        let lhs = self.m + self.drift_gain;
        [
            ("drift_gain_above_bound", lhs >= self.drift_bound - VERDICT_SLACK),
            ("drift_bound_above_unadvected", self.drift_bound >= self.unadvected_bound - VERDICT_SLACK),
            ("unadvected_bound_above_max", self.unadvected_bound >= self.max_side_value - VERDICT_SLACK),
        ]
    }

    /// Flat `key = value` rows in a fixed order.
    pub fn rows(&self) -> Vec<(String, String)> {
        let mut r: Vec<(String, String)> = vec![
            ("alpha".into(), self.alpha.to_string()),
            ("M".into(), self.lipschitz_m.to_string()),
            ("omega_volume".into(), self.omega_volume.to_string()),
            ("m".into(), self.m.to_string()),
            ("T".into(), self.final_time.to_string()),
            (
                "A_threshold".into(),
                self.a_threshold.map_or("undefined".into(), |a| a.to_string()),
            ),
            ("A_used".into(), self.a_used.to_string()),
            ("below_threshold_override".into(), self.below_threshold_override.to_string()),
            ("inf_side_estimate".into(), self.inf_side_estimate.to_string()),
            ("inf_side_label".into(), Direction::Min.label().into()),
            ("inf_side_converged".into(), self.inf_side_converged.to_string()),
            ("max_side_value".into(), self.max_side_value.to_string()),
            ("max_side_converged".into(), self.max_side_converged.to_string()),
            ("inequality_holds".into(), self.inequality_holds.to_string()),
            ("monotone_mass".into(), self.monotone_mass.to_string()),
            ("drift_gain".into(), self.drift_gain.to_string()),
            ("m_plus_drift_gain".into(), (self.m + self.drift_gain).to_string()),
            ("drift_bound".into(), self.drift_bound.to_string()),
            ("unadvected_bound".into(), self.unadvected_bound.to_string()),
        ];
        for (k, v) in self.proof_chain() {
            r.push((format!("chain.{k}"), v.to_string()));
        }
        r.push(("policy_note".into(), self.policy_note.clone()));
        for (i, n) in self.notes.iter().enumerate() {
            r.push((format!("note.{i}"), n.clone()));
        }
        for (prefix, b) in [("advected", &self.budget_advected), ("unadvected", &self.budget_unadvected)] {
            for (k, v) in b.rows() {
                r.push((format!("budget.{prefix}.{k}"), v.to_string()));
            }
        }
        r
    }

    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        for (k, v) in self.rows() {
            writeln!(w, "{k} = {v}")?;
        }
        Ok(())
    }

    pub fn sweep_row(&self) -> SweepRow {
        SweepRow {
            a: self.a_used,
            inf_estimate: self.inf_side_estimate,
            max_value: self.max_side_value,
            verdict: self.inequality_holds,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub a: f64,
    pub inf_estimate: f64,
    pub max_value: f64,
    pub verdict: bool,
}

/// Columns `A, inf_estimate, max_value, verdict`.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["A", "inf_estimate", "max_value", "verdict"])?;
    for r in rows {
        w.write_record([
            r.a.to_string(),
            r.inf_estimate.to_string(),
            r.max_value.to_string(),
            r.verdict.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn policy_note(scenario: &Scenario) -> String {
    let rep = scenario.field_report();
    match rep.policy {
        BoundaryPolicy::AllowNonzeroNormal => format!(
            "boundary_policy=allow_nonzero_normal: q·ν is not required to vanish (max |q·ν| = {:e}); \
             this departs from the tangential-velocity setting because a tangential field has \
             zero mean divergence and so cannot have alpha < 0",
            rep.max_boundary_normal
        ),
        BoundaryPolicy::RequireTangential => format!(
            "boundary_policy=require_tangential: q·ν = 0 on the boundary, so the mean divergence is \
             {:e} and alpha < 0 is unattainable up to discretization error",
            rep.divergence_integral / scenario.grid().total_volume()
        ),
    }
}

/// Minimizes `I_T` with advection and maximizes it without, concurrently.
pub fn enhancement_compare(
    scenario: &Scenario,
    m: f64,
    cfg: &OptConfig,
    opts: EnhanceOptions,
) -> Result<EnhancementReport> {
    let sc = scenario.with_mass(m)?;
    let grid = sc.grid().clone();
    let alpha = sc.field_report().alpha;
    let lip = sc.reaction().lipschitz_m();
    let vol = grid.total_volume();
    let t = sc.solver().final_time;
    let a_used = sc.amplitude();
    let mut notes: Vec<String> = sc.field_report().warnings.clone();
    let a_threshold = match threshold_amplitude(lip, vol, m, alpha) {
        Ok(a) => Some(a),
        Err(e) => {
            notes.push(format!("hypothesis violation: {e}"));
            None
        }
    };
    let mut below = false;
    if let Some(a) = a_threshold {
        if a_used < a {
            below = true;
            if opts.allow_below_threshold {
                notes.push(format!("override: A = {a_used} is below the threshold {a}"));
            } else {
                notes.push(format!(
                    "hypothesis violation: A = {a_used} is below the threshold {a} and no override was given"
                ));
            }
        }
    }
    if !sc.reaction().flags().nonnegative_on_unit || !sc.reaction_check().sampled_nonnegative() {
        notes.push(format!(
            "hypothesis violation: reaction {} is not nonnegative on [0,1]",
            sc.reaction().name()
        ));
    }
    let unadvected = sc.with_amplitude(0.0)?;
    let (inf_run, max_run) = rayon::join(
        || multistart_directed(&sc, m, cfg, Direction::Min),
        || multistart_directed(&unadvected, m, cfg, Direction::Max),
    );
    let (inf_run, max_run): (OptResult, OptResult) = (inf_run?, max_run?);
    let (adv_traj, unadv_traj) = rayon::join(
        || solve_forward(&inf_run.best_u0, &sc),
        || solve_forward(&max_run.best_u0, &unadvected),
    );
    let (adv_traj, unadv_traj) = (adv_traj?, unadv_traj?);
    let budget_advected = mass_budget_report(&adv_traj);
    let budget_unadvected = mass_budget_report(&unadv_traj);
    Ok(EnhancementReport {
        alpha,
        lipschitz_m: lip,
        omega_volume: vol,
        m,
        final_time: t,
        a_threshold,
        a_used,
        below_threshold_override: below && opts.allow_below_threshold,
        inf_side_estimate: inf_run.best_value,
        max_side_value: max_run.best_value,
        inequality_holds: inf_run.best_value >= max_run.best_value - VERDICT_SLACK,
        monotone_mass: monotonicity_check(&adv_traj),
        drift_gain: budget_advected.continuum_advection,
        drift_bound: m - a_used * alpha * t * m,
        unadvected_bound: m + lip * t * vol,
        policy_note: policy_note(&sc),
        notes,
        budget_advected,
        budget_unadvected,
        inf_side_converged: inf_run.converged,
        max_side_converged: max_run.converged,
    })
}

/// One comparison per amplitude, parallel over amplitudes.
pub fn enhancement_sweep(
    scenario: &Scenario,
    m: f64,
    cfg: &OptConfig,
    amplitudes: &[f64],
) -> Result<Vec<SweepRow>> {
    let unadvected = scenario.with_mass(m)?.with_amplitude(0.0)?;
    let max_value = multistart_directed(&unadvected, m, cfg, Direction::Max)?.best_value;
    amplitudes
        .par_iter()
        .map(|&a| {
            let sc = scenario.with_mass(m)?.with_amplitude(a)?;
            let inf = multistart_directed(&sc, m, cfg, Direction::Min)?.best_value;
            Ok(SweepRow {
                a,
                inf_estimate: inf,
                max_value,
                verdict: inf >= max_value - VERDICT_SLACK,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LargeAReport {
    /// `(A, s(A))` with `s(A) = maxₙ |∫(∇·q) U_A(tⁿ)|`.
    pub rows: Vec<(f64, f64)>,
    pub seed: u64,
}

impl LargeAReport {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["A", "s"])?;
        for (a, s) in &self.rows {
            w.write_record([a.to_string(), s.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `∫(∇·q)u` with the face divergence of the scheme, which sums to the boundary
/// flux of `q` and so vanishes on constants for tangential fields.
fn drift_integral(scenario: &Scenario, u: &[f64]) -> f64 {
    let grid = scenario.grid();
    let q = scenario.velocity();
    let interior: f64 = grid
        .interior_faces()
        .iter()
        .map(|f| grid.face_area(f.axis) * q.face_q(f.axis, f.slot) * (u[f.left] - u[f.right]))
        .sum();
    let boundary: f64 = grid
        .boundary_faces()
        .iter()
        .map(|f| grid.face_area(f.axis) * q.face_q(f.axis, f.slot) * f.outward * u[f.cell])
        .sum();
    interior + boundary
}

/// Tabulates `s(A)` for a fixed random datum of mass `m`.
pub fn large_a_diagnostic(scenario: &Scenario, amplitudes: &[f64], m: f64, seed: u64) -> Result<LargeAReport> {
    if amplitudes.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidConfig("amplitude list must be increasing".into()));
    }
    let base = scenario.with_mass(m)?;
    let u0 = random_admissible(seed, m, base.grid().clone())?;
    let rows = amplitudes
        .par_iter()
        .map(|&a| {
            let sc = base.with_amplitude(a)?;
            let traj = solve_forward(&u0, &sc)?;
            let s = traj
                .states()
                .map(|(_, u)| drift_integral(&sc, u.values()).abs())
                .fold(0.0, f64::max);
            Ok((a, s))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LargeAReport { rows, seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::admissible::InitialDatum;
    use crate::expr::Expr;
    use crate::grid::build_grid;
    use crate::models::{DiffusionModel, ReactionModel, VelocityField};
    use crate::solver::SolverConfig;
    use std::sync::Arc;

    fn scenario(q: Option<(&str, BoundaryPolicy)>, a: f64, reaction: ReactionModel) -> Scenario {
        let g = Arc::new(build_grid(1, &[1.0], &[16]).unwrap());
        let vel = match q {
            Some((e, p)) => VelocityField::from_exprs(g.clone(), &[Expr::parse(e).unwrap()], a, p).unwrap(),
            None => VelocityField::zero(g.clone()),
        };
        Scenario::new(
            g,
            DiffusionModel::constant(0.05).unwrap(),
            vel,
            reaction,
            SolverConfig::new(0.5, 0.01).unwrap(),
            0.5,
        )
        .unwrap()
    }

    #[test]
    fn threshold_examples() {
        assert_eq!(threshold_amplitude(1.0, 1.0, 0.5, -1.0).unwrap(), 2.0);
        assert_eq!(threshold_amplitude(1.0, 2.0, 1.0, -0.5).unwrap(), 4.0);
        assert_eq!(threshold_amplitude(0.0, 3.0, 0.2, -0.7).unwrap(), 0.0);
        assert!(matches!(
            threshold_amplitude(1.0, 1.0, 0.5, 0.0),
            Err(Error::HypothesisViolation(_))
        ));
        assert!(threshold_amplitude(1.0, 1.0, 0.0, -1.0).is_err());
    }

    #[test]
    fn conservative_case_ties() {
        let sc = scenario(Some(("-x", BoundaryPolicy::AllowNonzeroNormal)), 0.0, ReactionModel::zero());
        let cfg = OptConfig {
            multistart_k: 2,
            ..OptConfig::default()
        };
        let rep = enhancement_compare(&sc, 0.5, &cfg, EnhanceOptions::default()).unwrap();
        assert!(rep.inequality_holds);
        assert_eq!(rep.a_threshold, Some(0.0));
        assert!((rep.inf_side_estimate - 0.5).abs() < 1e-12);
        assert!(rep.policy_note.contains("allow_nonzero_normal"));
    }

    #[test]
    fn outflow_boundary_loses_mass_without_reaction() {
        // M = 0 but A > 0: the inflow-free drift drains mass through x = 1.
        let sc = scenario(Some(("-x", BoundaryPolicy::AllowNonzeroNormal)), 1.0, ReactionModel::zero());
        let cfg = OptConfig {
            multistart_k: 2,
            ..OptConfig::default()
        };
        let rep = enhancement_compare(&sc, 0.5, &cfg, EnhanceOptions::default()).unwrap();
        assert!(!rep.inequality_holds);
        assert!(rep.budget_advected.cumulative_boundary < 0.0);
        assert!((rep.max_side_value - 0.5).abs() < 1e-12);
    }

    #[test]
    fn convex_negative_mass_decreases() {
        let sc = scenario(None, 0.0, ReactionModel::convex_negative());
        let u0 = random_admissible(3, 0.5, sc.grid().clone()).unwrap();
        assert!(!monotonicity_check(&solve_forward(&u0, &sc).unwrap()));
        let sc = scenario(None, 0.0, ReactionModel::zero());
        assert!(monotonicity_check(&solve_forward(&u0, &sc).unwrap()));
    }

    #[test]
    fn drift_diagnostic_vanishes_on_trivial_cases() {
        let sc = scenario(None, 0.0, ReactionModel::logistic());
        let rep = large_a_diagnostic(&sc, &[1.0, 4.0], 0.5, 1).unwrap();
        assert!(rep.rows.iter().all(|r| r.1 == 0.0));

        let sc = scenario(Some(("sin(pi*x)", BoundaryPolicy::RequireTangential)), 1.0, ReactionModel::logistic());
        let u0 = InitialDatum::uniform(sc.grid().clone(), 0.5).unwrap();
        for a in [1.0, 8.0] {
            let s = sc.with_amplitude(a).unwrap();
            let tr = solve_forward(&u0, &s).unwrap();
            for (_, u) in tr.states() {
                let d = drift_integral(&s, u.values()).abs();
                assert!(d < 1e-13, "{d:e}");
            }
        }
        assert!(large_a_diagnostic(&sc, &[2.0, 1.0], 0.5, 1).is_err());
    }
}
