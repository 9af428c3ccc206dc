//! Projected gradient ascent on `I_T` over the admissible set.
//!
//! Each iteration projects `u + s·g` onto the capped simplex and accepts the
//! first trial step with `I(u_new) ≥ I(u) + c·⟨g, u_new - u⟩` (Armijo along the
//! projection arc). The first trial step is the Barzilai–Borwein step from the
//! previous pair of iterates when the objective is locally concave along it.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::adjoint::gradient;
use crate::admissible::{project_capped_simplex, random_admissible, InitialDatum};
use crate::error::{Error, Result};
use crate::grid::ScalarField;
use crate::solver::{terminal_mass, Scenario};

/// Smallest trial step, relative to `step0`, before the line search gives up.
const MIN_STEP_RATIO: f64 = 1e-14;
/// Largest trial step, relative to `step0`.
const MAX_STEP_RATIO: f64 = 1e3;
/// Objective changes below `PRECISION_FLOOR·(|I| + |Ω|)` cannot be resolved.
const PRECISION_FLOOR: f64 = 64.0 * f64::EPSILON;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// Fixed-point residual below `stop_tol`.
    Residual,
    /// No trial step passed the ascent test and the predicted ascent of the
    /// `step0` step is below the round-off resolution of the objective.
    PrecisionFloor,
    /// No trial step passed the ascent test with resolvable predicted ascent.
    LineSearchFailed,
    MaxIters,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::Residual => "residual",
            StopReason::PrecisionFloor => "precision_floor",
            StopReason::LineSearchFailed => "line_search_failed",
            StopReason::MaxIters => "max_iters",
        }
    }

    pub fn is_converged(self) -> bool {
        matches!(self, StopReason::Residual | StopReason::PrecisionFloor)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptConfig {
    pub max_iters: usize,
    pub step0: f64,
    pub armijo_c: f64,
    pub backtrack_factor: f64,
    /// Bound on `‖u - P(u + step0·g)‖₁ / |Ω|`.
    pub stop_tol: f64,
    pub multistart_k: usize,
    pub seed: u64,
}

impl Default for OptConfig {
    fn default() -> Self {
        Self {
            max_iters: 500,
            step0: 1.0,
            armijo_c: 1e-4,
            backtrack_factor: 0.5,
            stop_tol: 1e-8,
            multistart_k: 8,
            seed: 0,
        }
    }
}

impl OptConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.step0, self.armijo_c, self.stop_tol];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) || self.max_iters == 0 {
            return Err(Error::InvalidConfig(
                "optimizer max_iters, step0, armijo_c and stop_tol must be positive".into(),
            ));
        }
        if self.armijo_c >= 1.0 {
            return Err(Error::InvalidConfig("armijo_c must lie in (0, 1)".into()));
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return Err(Error::InvalidConfig("backtrack_factor must lie in (0, 1)".into()));
        }
        if self.multistart_k == 0 {
            return Err(Error::InvalidConfig("multistart_k must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Max,
    Min,
}

impl Direction {
    fn sign(self) -> f64 {
        match self {
            Direction::Max => 1.0,
            Direction::Min => -1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Max => "max",
            Direction::Min => "min",
        }
    }

    /// Minimization only bounds the infimum from above.
    pub fn label(self) -> &'static str {
        match self {
            Direction::Max => "maximum",
            Direction::Min => "heuristic-infimum (upper bound from multistart local minimization)",
        }
    }
}

impl std::str::FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(Direction::Max),
            "min" => Ok(Direction::Min),
            other => Err(Error::InvalidConfig(format!("direction must be max or min, got {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub value: f64,
    pub residual: f64,
    /// Step accepted to reach this iterate (0 at the start).
    pub step_size: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub seed: u64,
    pub value: f64,
    pub converged: bool,
    pub stop_reason: StopReason,
    pub iterations: usize,
    pub final_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterReport {
    pub runs: Vec<RunSummary>,
    /// `(i, j, ‖uᵢ - uⱼ‖_{L¹})` for `i < j`.
    pub distances: Vec<(usize, usize, f64)>,
    pub max_distance: f64,
    pub omega_volume: f64,
    /// All run values agree to `1e-9` relative: a flat objective shows up here.
    pub value_tie: bool,
}

impl ClusterReport {
    pub fn all_converged(&self) -> bool {
        self.runs.iter().all(|r| r.converged)
    }

    pub fn any_converged(&self) -> bool {
        self.runs.iter().any(|r| r.converged)
    }

    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "runs = {}", self.runs.len())?;
        for r in &self.runs {
            writeln!(
                w,
                "run seed={} value={} converged={} stop={} iterations={} residual={}",
                r.seed,
                r.value,
                r.converged,
                r.stop_reason.as_str(),
                r.iterations,
                r.final_residual
            )?;
        }
        writeln!(w, "max_pairwise_l1 = {}", self.max_distance)?;
        writeln!(w, "max_pairwise_l1_over_volume = {}", self.max_distance / self.omega_volume)?;
        writeln!(w, "value_tie = {}", self.value_tie)?;
        for (i, j, d) in &self.distances {
            writeln!(w, "l1[{i},{j}] = {d}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct OptResult {
    pub direction: Direction,
    pub best_u0: InitialDatum,
    pub best_value: f64,
    pub converged: bool,
    pub stop_reason: StopReason,
    pub iterations: usize,
    pub trace: Vec<TraceRow>,
    pub cluster_report: Option<ClusterReport>,
}

impl OptResult {
    /// Columns `iter, value, residual, step_size`.
    pub fn write_trace_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["iter", "value", "residual", "step_size"])?;
        for r in &self.trace {
            w.write_record([
                r.iter.to_string(),
                r.value.to_string(),
                r.residual.to_string(),
                r.step_size.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn inner(vol: f64, a: &[f64], b: &[f64]) -> f64 {
    vol * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
}

fn trial(u: &InitialDatum, g: &[f64], s: f64) -> Result<InitialDatum> {
    let v: Vec<f64> = u.values().iter().zip(g).map(|(u, g)| u + s * g).collect();
    project_capped_simplex(&ScalarField::new(u.grid().clone(), v)?, u.mass())
}

/// `‖u - P(u + step0·g)‖₁ / |Ω|`.
fn residual(u: &InitialDatum, g: &[f64], step0: f64) -> Result<f64> {
    let p = trial(u, g, step0)?;
    Ok(u.field().l1_distance(p.field()) / u.grid().total_volume())
}

/// Projected gradient from a given feasible start.
pub fn optimize_from(
    scenario: &Scenario,
    start: InitialDatum,
    cfg: &OptConfig,
    direction: Direction,
) -> Result<OptResult> {
    cfg.validate()?;
    let sign = direction.sign();
    let vol = scenario.grid().cell_volume();
    let mut u = start;
    let mut gr = gradient(&u, scenario)?;
    let mut value = gr.objective;
    let mut g: Vec<f64> = gr.gradient.values().iter().map(|p| sign * p).collect();
    let mut trace = Vec::new();
    let mut step_taken = 0.0;
    let mut prev_step = cfg.step0;
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    let total_volume = scenario.grid().total_volume();
    let stop_reason;
    let mut iterations = 0;
    loop {
        let r = residual(&u, &g, cfg.step0)?;
        trace.push(TraceRow {
            iter: iterations,
            value,
            residual: r,
            step_size: step_taken,
        });
        if r <= cfg.stop_tol {
            stop_reason = StopReason::Residual;
            break;
        }
        if iterations == cfg.max_iters {
            stop_reason = StopReason::MaxIters;
            break;
        }
        let mut s = initial_step(vol, prev.as_ref(), prev_step, cfg);
        let accepted = loop {
            let cand = trial(&u, &g, s)?;
            let dx: Vec<f64> = cand.values().iter().zip(u.values()).map(|(a, b)| a - b).collect();
            let slope = inner(vol, &g, &dx);
            let cand_value = terminal_mass(&cand, scenario)?;
            if sign * (cand_value - value) >= cfg.armijo_c * slope && slope > 0.0 {
                break Some((cand, cand_value));
            }
            s *= cfg.backtrack_factor;
            if s < MIN_STEP_RATIO * cfg.step0 {
                break None;
            }
        };
        let Some((cand, cand_value)) = accepted else {
            let unit = trial(&u, &g, cfg.step0)?;
            let dx: Vec<f64> = unit.values().iter().zip(u.values()).map(|(a, b)| a - b).collect();
            let predicted = inner(vol, &g, &dx);
            stop_reason = if predicted <= PRECISION_FLOOR * (value.abs() + total_volume) {
                StopReason::PrecisionFloor
            } else {
                StopReason::LineSearchFailed
            };
            break;
        };
        gr = gradient(&cand, scenario)?;
        let g_new: Vec<f64> = gr.gradient.values().iter().map(|p| sign * p).collect();
        prev = Some((
            cand.values().iter().zip(u.values()).map(|(a, b)| a - b).collect(),
            g_new.iter().zip(&g).map(|(a, b)| a - b).collect(),
        ));
        u = cand;
        value = cand_value;
        g = g_new;
        step_taken = s;
        prev_step = s;
        iterations += 1;
    }
    Ok(OptResult {
        direction,
        best_u0: u,
        best_value: value,
        converged: stop_reason.is_converged(),
        stop_reason,
        iterations,
        trace,
        cluster_report: None,
    })
}

fn initial_step(
    vol: f64,
    prev: Option<&(Vec<f64>, Vec<f64>)>,
    prev_step: f64,
    cfg: &OptConfig,
) -> f64 {
    let hi = MAX_STEP_RATIO * cfg.step0;
    let fallback = (2.0 * prev_step).min(hi);
    match prev {
        None => cfg.step0,
        Some((dx, dg)) => {
            let curv = -inner(vol, dx, dg);
            let dxx = inner(vol, dx, dx);
            if curv > 0.0 && dxx > 0.0 {
                (dxx / curv).clamp(MIN_STEP_RATIO * 1e3 * cfg.step0, hi)
            } else {
                fallback
            }
        }
    }
}

pub fn maximize(scenario: &Scenario, m: f64, cfg: &OptConfig) -> Result<OptResult> {
    optimize(scenario, m, cfg, Direction::Max)
}

/// Same machinery on `-I_T`. The value is an upper bound on the infimum.
pub fn minimize(scenario: &Scenario, m: f64, cfg: &OptConfig) -> Result<OptResult> {
    optimize(scenario, m, cfg, Direction::Min)
}

/// Single run from `random_admissible(cfg.seed, m)`.
pub fn optimize(scenario: &Scenario, m: f64, cfg: &OptConfig, direction: Direction) -> Result<OptResult> {
    cfg.validate()?;
    let sc = scenario.with_mass(m)?;
    let start = random_admissible(cfg.seed, m, sc.grid().clone())?;
    optimize_from(&sc, start, cfg, direction)
}

/// Maximization from `multistart_k` random starts.
pub fn multistart(scenario: &Scenario, m: f64, cfg: &OptConfig) -> Result<OptResult> {
    multistart_directed(scenario, m, cfg, Direction::Max)
}

/// Runs from seeds `cfg.seed + j`, `j < multistart_k`, concurrently; the best
/// run is returned with a report comparing all optima.
pub fn multistart_directed(
    scenario: &Scenario,
    m: f64,
    cfg: &OptConfig,
    direction: Direction,
) -> Result<OptResult> {
    cfg.validate()?;
    if cfg.multistart_k < 2 {
        return Err(Error::InvalidConfig("multistart needs multistart_k ≥ 2".into()));
    }
    let sc = scenario.with_mass(m)?;
    let seeds: Vec<u64> = (0..cfg.multistart_k as u64)
        .map(|j| cfg.seed.wrapping_add(j))
        .collect();
    let runs = seeds
        .par_iter()
        .map(|&seed| {
            let start = random_admissible(seed, m, sc.grid().clone())?;
            optimize_from(&sc, start, cfg, direction)
        })
        .collect::<Result<Vec<_>>>()?;
    let sign = direction.sign();
    let best = (0..runs.len())
        .reduce(|b, j| {
            if sign * runs[j].best_value > sign * runs[b].best_value {
                j
            } else {
                b
            }
        })
        .expect("at least two runs");
    let mut distances = Vec::new();
    for i in 0..runs.len() {
        for j in i + 1..runs.len() {
            distances.push((i, j, runs[i].best_u0.field().l1_distance(runs[j].best_u0.field())));
        }
    }
    let max_distance = distances.iter().fold(0.0, |m: f64, d| m.max(d.2));
    let (lo, hi) = runs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
        (lo.min(r.best_value), hi.max(r.best_value))
    });
    let report = ClusterReport {
        runs: runs
            .iter()
            .zip(&seeds)
            .map(|(r, &seed)| RunSummary {
                seed,
                value: r.best_value,
                converged: r.converged,
                stop_reason: r.stop_reason,
                iterations: r.iterations,
                final_residual: r.trace.last().map(|t| t.residual).unwrap_or(f64::NAN),
            })
            .collect(),
        distances,
        max_distance,
        omega_volume: sc.grid().total_volume(),
        value_tie: hi - lo <= 1e-9 * hi.abs().max(1.0),
    };
    let any_converged = report.any_converged();
    let mut out = runs.into_iter().nth(best).expect("best index in range");
    out.converged = any_converged;
    out.cluster_report = Some(report);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConcavitySample {
    pub lambda: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConcavityReport {
    pub samples: Vec<ConcavitySample>,
    pub min_gap: f64,
}

/// `I(c) - λI(a) - (1-λ)I(b)` with `c = λa + (1-λ)b`, evaluated as
/// `λ(I(c) - I(a)) + (1-λ)(I(c) - I(b))` so that `a = b` gives exactly 0.
pub fn concavity_gap(a: &InitialDatum, b: &InitialDatum, lambda: f64, scenario: &Scenario) -> Result<f64> {
    let c = InitialDatum::combine(a, b, lambda)?;
    let ic = terminal_mass(&c, scenario)?;
    let ia = terminal_mass(a, scenario)?;
    let ib = terminal_mass(b, scenario)?;
    Ok(lambda * (ic - ia) + (1.0 - lambda) * (ic - ib))
}

/// Samples `n_pairs` triples `(a, b, λ)` with `a, b` random admissible data.
pub fn concavity_probe(scenario: &Scenario, m: f64, n_pairs: usize, seed: u64) -> Result<ConcavityReport> {
    if n_pairs == 0 {
        return Err(Error::InvalidConfig("concavity_probe needs n_pairs ≥ 1".into()));
    }
    let sc = scenario.with_mass(m)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<(u64, u64, f64)> = (0..n_pairs)
        .map(|_| (rng.gen(), rng.gen(), rng.gen_range(0.0..1.0)))
        .map(|(a, b, l): (u64, u64, f64)| (a, b, if l == 0.0 { 0.5 } else { l }))
        .collect();
    let samples = draws
        .par_iter()
        .map(|&(sa, sb, lambda)| {
            let a = random_admissible(sa, m, sc.grid().clone())?;
            let b = random_admissible(sb, m, sc.grid().clone())?;
            Ok(ConcavitySample {
                lambda,
                gap: concavity_gap(&a, &b, lambda, &sc)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let min_gap = samples.iter().fold(f64::INFINITY, |m, s| m.min(s.gap));
    Ok(ConcavityReport { samples, min_gap })
}
