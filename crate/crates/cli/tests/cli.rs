use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn massopt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_massopt"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn run_in(dir: &Path, sub: &str, config: &Path, extra: &[&str]) -> Output {
    let mut args = vec![sub, "--config", config.to_str().unwrap(), "--out", dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    massopt(&args)
}

fn read_kv(path: &Path, key: &str) -> String {
    let text = fs::read_to_string(path).unwrap();
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")).map(str::to_string))
        .unwrap_or_else(|| panic!("{key} missing from {}", path.display()))
}

const SMALL: &str = r#"
[domain]
dim = 1
extents = [1.0]
resolutions = [12]

[diffusion]
kind = "constant"
sigma = 0.05

[reaction]
name = "logistic"

[time]
T = 0.5
dt_target = 0.01

[constraint]
m = 0.5

[optimizer]
multistart_k = 3
"#;

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("scenario.toml");
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn simulate_writes_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run_in(tmp.path(), "simulate", &scenario("logistic_1d.toml"), &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["trajectory.csv", "budget.csv", "final_state.csv", "report.txt"] {
        assert!(tmp.path().join(f).exists(), "{f}");
    }
    let snapshots = fs::read_dir(tmp.path())
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("snapshot_"))
        .count();
    assert_eq!(snapshots, 4);
    let traj = fs::read_to_string(tmp.path().join("trajectory.csv")).unwrap();
    assert!(traj.starts_with("t,mass,advection_contrib,reaction_contrib,boundary_flux\n"));
    assert_eq!(read_kv(&tmp.path().join("report.txt"), "boundary_policy"), "require_tangential");
    assert_eq!(read_kv(&tmp.path().join("report.txt"), "config_sha256").len(), 64);
}

#[test]
fn malformed_config_reports_line() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &SMALL.replace("sigma = 0.05", "sigma = = 0.05"));
    let o = run_in(tmp.path(), "simulate", &cfg, &[]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 9"), "{}", stderr(&o));

    let cfg = write_config(tmp.path(), &SMALL.replace("[time]", "[time]\nsteps = 3"));
    let o = run_in(tmp.path(), "simulate", &cfg, &[]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("steps"), "{}", stderr(&o));
}

#[test]
fn u0_outside_box_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let mut csv = String::from("u0\n");
    for i in 0..12 {
        csv.push_str(if i == 0 { "1.5\n" } else { "0.409090909090909\n" });
    }
    let u0 = tmp.path().join("u0.csv");
    fs::write(&u0, csv).unwrap();
    let o = run_in(tmp.path(), "simulate", &cfg, &["--u0", u0.to_str().unwrap()]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn simulate_accepts_written_datum() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let o = run_in(tmp.path(), "optimize", &cfg, &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let u0 = tmp.path().join("optimal_u0.csv");
    let out = tmp.path().join("sim");
    let o = run_in(&out, "simulate", &cfg, &["--u0", u0.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let best: f64 = read_kv(&tmp.path().join("report.txt"), "best_value").parse().unwrap();
    let fin: f64 = read_kv(&out.join("report.txt"), "budget.final_mass").parse().unwrap();
    assert!((best - fin).abs() < 1e-12);
}

#[test]
fn optimize_trace_is_monotone_and_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = write_config(a.path(), SMALL);
    assert_eq!(code(&run_in(a.path(), "optimize", &cfg, &[])), 0);
    assert_eq!(code(&run_in(b.path(), "optimize", &cfg, &[])), 0);
    for f in ["optimal_u0.csv", "trace.csv", "cluster_report.txt"] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
    let trace = fs::read_to_string(a.path().join("trace.csv")).unwrap();
    let values: Vec<f64> = trace
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(values.len() > 1);
    assert!(values.windows(2).all(|w| w[1] >= w[0]));
}

#[test]
fn seed_flag_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let o = run_in(tmp.path(), "optimize", &cfg, &["--seed", "42"]);
    assert_eq!(code(&o), 0);
    assert_eq!(read_kv(&tmp.path().join("report.txt"), "seed"), "42");
}

#[test]
fn one_iteration_exits_four() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &SMALL.replace("multistart_k = 3", "multistart_k = 3\nmax_iters = 1"));
    let o = run_in(tmp.path(), "optimize", &cfg, &[]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    assert!(tmp.path().join("trace.csv").exists());
}

#[test]
fn minimize_is_labelled_heuristic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let o = run_in(tmp.path(), "optimize", &cfg, &["--direction", "min"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(read_kv(&tmp.path().join("report.txt"), "label").starts_with("heuristic-infimum"));
}

#[test]
fn enhance_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run_in(tmp.path(), "enhance", &scenario("enhance_conservative.toml"), &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(read_kv(&tmp.path().join("enhancement_report.txt"), "inequality_holds"), "true");

    let o = run_in(tmp.path(), "enhance", &scenario("alpha_positive.toml"), &[]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("alpha"));
}

#[test]
fn enhance_default_encodes_verdict() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run_in(tmp.path(), "enhance", &scenario("enhance_default.toml"), &[]);
    let report = tmp.path().join("enhancement_report.txt");
    let verdict = read_kv(&report, "inequality_holds");
    assert_eq!(code(&o), if verdict == "true" { 0 } else { 5 });
    assert!(read_kv(&report, "policy_note").starts_with("boundary_policy=allow_nonzero_normal"));
    assert_eq!(read_kv(&report, "A_threshold"), "2");
    assert_eq!(read_kv(&report, "A_used"), "4");
    let sweep = fs::read_to_string(tmp.path().join("sweep.csv")).unwrap();
    assert!(sweep.starts_with("A,inf_estimate,max_value,verdict\n4,"));
}

#[test]
fn verify_quick_passes_and_fault_is_caught() {
    let o = massopt(&["verify", "--level", "quick"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let o = massopt(&["verify", "--level", "quick", "--inject-fault", "downwind-advection"]);
    assert_eq!(code(&o), 1);
    let out = String::from_utf8_lossy(&o.stdout);
    let line = out.lines().find(|l| l.starts_with("order_preservation")).unwrap();
    assert!(line.contains("FAIL"), "{line}");
}

#[test]
fn verify_full_prints_rates() {
    let o = massopt(&["verify", "--level", "full"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.contains("heat_h"));
    assert!(out.contains("logistic_dt"));
}
