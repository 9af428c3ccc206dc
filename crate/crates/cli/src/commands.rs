use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use massopt::enhancement::{enhancement_sweep, write_sweep_csv};
use massopt::optimizer::{multistart_directed, optimize, Direction};
use massopt::solver::{write_state_csv, AdvectionScheme};
use massopt::{
    enhancement_compare, mass_budget_report, solve_forward, threshold_amplitude, EnhanceOptions,
    InitialDatum,
};

use crate::config::{self, LoadedConfig};
use crate::verify::{self, Level};
use crate::CliError;

/// Overrides shared by the scenario subcommands.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub scheme: AdvectionScheme,
}

fn load(path: &Path, opts: &RunOptions) -> Result<(LoadedConfig, PathBuf), CliError> {
    let mut cfg = config::load(path, opts.scheme)?;
    if let Some(seed) = opts.seed {
        cfg.opt.seed = seed;
    }
    let dir = opts.out.clone().unwrap_or_else(|| cfg.output_dir().to_path_buf());
    fs::create_dir_all(&dir)?;
    Ok((cfg, dir))
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

/// Lines shared by every report: provenance of the run and the model diagnostics.
pub fn report_header(cfg: &LoadedConfig, command: &str) -> Vec<String> {
    let sc = &cfg.scenario;
    let fr = sc.field_report();
    let rc = sc.reaction_check();
    let flags = sc.reaction().flags();
    let tg = sc.time_grid();
    let mut lines = vec![
        format!("command = {command}"),
        format!("config = {}", cfg.path.display()),
        format!("config_sha256 = {}", cfg.sha256),
        format!("boundary_policy = {}", fr.policy.as_str()),
        format!("alpha = {}", fr.alpha),
        format!("div_bound_B = {}", fr.div_bound_b),
        format!("sup_q_gamma = {}", fr.sup_q_gamma),
        format!("max_boundary_normal = {}", fr.max_boundary_normal),
        format!("divergence_integral = {}", fr.divergence_integral),
        format!("amplitude_A = {}", sc.amplitude()),
        format!("reaction = {}", sc.reaction().name()),
        format!("lipschitz_M = {}", sc.reaction().lipschitz_m()),
        format!("reaction_strictly_concave = {}", flags.strictly_concave),
        format!("reaction_nonnegative_on_unit = {}", flags.nonnegative_on_unit),
        format!("reaction_sampled_min_value = {}", rc.min_value),
        format!("m = {}", sc.mass()),
        format!("T = {}", sc.solver().final_time),
        format!("dt = {}", tg.dt),
        format!("n_steps = {}", tg.n_steps),
    ];
    for (i, w) in fr.warnings.iter().enumerate() {
        lines.push(format!("field_warning.{i} = {w}"));
    }
    lines
}

fn write_lines<W: Write>(mut w: W, lines: &[String]) -> Result<(), CliError> {
    for l in lines {
        writeln!(w, "{l}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_simulate(config_path: &Path, u0_path: Option<&Path>, opts: &RunOptions) -> Result<(), CliError> {
    let (cfg, dir) = load(config_path, opts)?;
    let sc = &cfg.scenario;
    let u0 = match u0_path {
        Some(p) => InitialDatum::load_csv(p, sc.grid().clone(), sc.mass())
            .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?,
        None => InitialDatum::uniform(sc.grid().clone(), sc.mass())
            .map_err(|e| CliError::Config(e.to_string()))?,
    };
    let traj = solve_forward(&u0, sc)?;
    let budget = mass_budget_report(&traj);
    traj.write_csv(create(&dir, "trajectory.csv")?)?;
    budget.write_csv(create(&dir, "budget.csv")?)?;
    write_state_csv(&traj.final_state(), "u", create(&dir, "final_state.csv")?)?;

    let snaps = cfg.file.output.snapshots;
    if snaps > 0 {
        let steps = traj.checkpoint_steps();
        let last = steps.len() - 1;
        let mut picked: Vec<usize> = (1..=snaps).map(|k| steps[k * last / (snaps + 1)]).collect();
        picked.dedup();
        for (t, state) in traj.states() {
            let n = (t / traj.time_grid().dt).round() as usize;
            if picked.contains(&n) {
                write_state_csv(&state, "u", create(&dir, &format!("snapshot_{n:06}.csv"))?)?;
            }
        }
    }

    let mut lines = report_header(&cfg, "simulate");
    lines.push(format!(
        "u0 = {}",
        u0_path.map_or("uniform".to_string(), |p| p.display().to_string())
    ));
    lines.push(format!("max_clamp_excursion = {}", traj.max_excursion()));
    for (k, v) in budget.rows() {
        lines.push(format!("budget.{k} = {v}"));
    }
    write_lines(create(&dir, "report.txt")?, &lines)?;
    println!("terminal mass {} written to {}", traj.final_mass(), dir.display());
    Ok(())
}

pub fn cmd_optimize(config_path: &Path, direction: Direction, opts: &RunOptions) -> Result<(), CliError> {
    let (cfg, dir) = load(config_path, opts)?;
    let sc = &cfg.scenario;
    let m = sc.mass();
    let res = if cfg.opt.multistart_k >= 2 {
        multistart_directed(sc, m, &cfg.opt, direction)?
    } else {
        optimize(sc, m, &cfg.opt, direction)?
    };
    res.best_u0.write_csv(create(&dir, "optimal_u0.csv")?)?;
    res.write_trace_csv(create(&dir, "trace.csv")?)?;
    if let Some(rep) = &res.cluster_report {
        let mut w = create(&dir, "cluster_report.txt")?;
        rep.write_text(&mut w)?;
        w.flush()?;
    }
    let mut lines = report_header(&cfg, "optimize");
    lines.extend([
        format!("direction = {}", direction.as_str()),
        format!("label = {}", direction.label()),
        format!("seed = {}", cfg.opt.seed),
        format!("multistart_k = {}", cfg.opt.multistart_k),
        format!("best_value = {}", res.best_value),
        format!("converged = {}", res.converged),
        format!("stop_reason = {}", res.stop_reason.as_str()),
        format!("iterations = {}", res.iterations),
    ]);
    if let Some(rep) = &res.cluster_report {
        lines.push(format!("max_pairwise_l1 = {}", rep.max_distance));
        lines.push(format!("value_tie = {}", rep.value_tie));
    }
    write_lines(create(&dir, "report.txt")?, &lines)?;
    println!("{} {} written to {}", direction.label(), res.best_value, dir.display());
    if !res.converged {
        return Err(CliError::NotConverged(format!(
            "no run met the stopping criterion within {} iterations",
            cfg.opt.max_iters
        )));
    }
    Ok(())
}

pub fn cmd_enhance(config_path: &Path, opts: &RunOptions) -> Result<(), CliError> {
    let (cfg, dir) = load(config_path, opts)?;
    let sc = &cfg.scenario;
    let m = sc.mass();
    let vol = sc.grid().total_volume();
    let lip = sc.reaction().lipschitz_m();
    let threshold = threshold_amplitude(lip, vol, m, sc.field_report().alpha)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let section = cfg.file.enhance.clone();
    let mut scenario = sc.clone();
    let mut enhance_opts = EnhanceOptions::default();
    let mut sweep_multiples = Vec::new();
    if let Some(s) = &section {
        if let Some(k) = s.threshold_multiple {
            if !(k.is_finite() && k >= 0.0) {
                return Err(CliError::Config(format!("enhance.threshold_multiple must be non-negative, got {k}")));
            }
            scenario = scenario.with_amplitude(k * threshold)?;
        }
        enhance_opts.allow_below_threshold = s.allow_below_threshold;
        sweep_multiples = s.sweep_multiples.clone();
    }
    let report = enhancement_compare(&scenario, m, &cfg.opt, enhance_opts)?;
    let mut rows = vec![report.sweep_row()];
    if !sweep_multiples.is_empty() {
        let amps: Vec<f64> = sweep_multiples.iter().map(|k| k * threshold).collect();
        rows.extend(enhancement_sweep(&scenario, m, &cfg.opt, &amps)?);
    }
    write_sweep_csv(&rows, create(&dir, "sweep.csv")?)?;
    let mut lines = report_header(&cfg, "enhance");
    lines.push(format!("seed = {}", cfg.opt.seed));
    for (k, v) in report.rows() {
        lines.push(format!("{k} = {v}"));
    }
    write_lines(create(&dir, "enhancement_report.txt")?, &lines)?;
    println!(
        "inequality_holds = {} (inf-side estimate {}, max-side value {}) written to {}",
        report.inequality_holds,
        report.inf_side_estimate,
        report.max_side_value,
        dir.display()
    );
    if !report.inequality_holds {
        return Err(CliError::VerdictFalse {
            inf: report.inf_side_estimate,
            max: report.max_side_value,
        });
    }
    Ok(())
}

pub fn cmd_verify(level: Level, scheme: AdvectionScheme) -> Result<(), CliError> {
    let report = verify::run(level, scheme);
    report.write_table(std::io::stdout().lock())?;
    let failed = report.failed_names();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::VerifyFailed(failed.join(", ")))
    }
}
