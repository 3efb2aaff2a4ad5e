use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use explq::closed_form::alm_solution;
use explq::market::{discretize, AnnualMarket};
use tempfile::TempDir;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_explq"));
    cmd.env_remove("EXPLQ_OUT");
    cmd
}

fn profile(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../profiles").join(name)
}

fn write_cfg(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let path = dir.path().join(name);
    fs::write(&path, text).unwrap();
    path
}

fn run(args: &[&str], cfg: &Path, out: &Path) -> Output {
    bin().args(args).arg("--config").arg(cfg).arg("--out").arg(out).output().unwrap()
}

fn read_csv(path: &Path) -> (String, Vec<Vec<String>>) {
    let text = fs::read_to_string(path).unwrap();
    assert!(!text.contains('\r'), "{} has CR line endings", path.display());
    assert!(text.ends_with('\n'));
    let mut lines = text.lines();
    let header = lines.next().unwrap().to_string();
    let rows = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
    (header, rows)
}

fn real(s: &str) -> f64 {
    s.parse().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn solve_default_matches_closed_form() {
    let dir = TempDir::new().unwrap();
    let cfg = write_cfg(&dir, "default.cfg", "");
    let o = run(&["solve"], &cfg, dir.path());
    assert!(o.status.success(), "{}", stderr(&o));

    let (header, rows) = read_csv(&dir.path().join("riccati.csv"));
    assert_eq!(header, "t,p11,p12,p22,g,gain_x,gain_y,value_const");
    let m = discretize(&AnnualMarket::default(), 0.1).unwrap();
    let sol = alm_solution(&m.params, m.periods).unwrap();
    assert_eq!(rows.len(), sol.stages.len());
    for (row, s) in rows.iter().zip(&sol.stages) {
        assert_eq!(row[0], s.t.to_string());
        let want = [s.p11, s.p12, s.p22, s.g, s.gain_x, s.gain_y, s.value_const];
        for (cell, w) in row[1..].iter().zip(want) {
            // 17 significant digits round-trip exactly.
            assert_eq!(real(cell), w);
        }
    }
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("P0 = [[0.43024390243902"), "{stdout}");
}

#[test]
fn iterate_gap_is_nonincreasing_and_vanishes_on_every_profile() {
    for name in ["monthly_1y.cfg", "monthly_5y.cfg", "daily_halfy.cfg", "daily_1y.cfg"] {
        let dir = TempDir::new().unwrap();
        let o = run(&["iterate"], &profile(name), dir.path());
        assert!(o.status.success(), "{name}: {}", stderr(&o));
        let (header, rows) = read_csv(&dir.path().join("improvement.csv"));
        assert_eq!(header, "j,max_gap,value_at_probe");
        let gaps: Vec<f64> = rows.iter().map(|r| real(&r[1])).collect();
        // After convergence the gap is a few ulps of the value itself.
        let scale = rows.iter().map(|r| real(&r[2]).abs()).fold(1.0, f64::max);
        let ulps = 16.0 * f64::EPSILON * scale;
        for w in gaps.windows(2) {
            assert!(w[1] <= w[0] + ulps, "{name}: gap increased {} -> {}", w[0], w[1]);
        }
        assert!(*gaps.last().unwrap() <= 1e-9, "{name}: final gap {}", gaps.last().unwrap());
        assert!(gaps[0] > 1e-3, "{name}: seed policy should not be optimal");
    }
}

#[test]
fn iterate_with_nonzero_seed_gain() {
    let dir = TempDir::new().unwrap();
    let cfg = write_cfg(
        &dir,
        "seeded.cfg",
        "dt = 1/12\nseed_k1 = -1.5\nseed_k2 = 0.7\nseed_l_scale = 2\nseed_n_base = 1.1\nprobe_x = -0.3\nprobe_l = 0.4\n",
    );
    let o = run(&["iterate"], &cfg, dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let (_, rows) = read_csv(&dir.path().join("improvement.csv"));
    assert_eq!(rows.len(), 13);
    let gaps: Vec<f64> = rows.iter().map(|r| real(&r[1])).collect();
    assert!(gaps.windows(2).all(|w| w[1] <= w[0]), "{gaps:?}");
    assert!(gaps[12] <= 1e-9);
}

#[test]
fn evaluate_sharpe_is_consistent_with_its_row() {
    let dir = TempDir::new().unwrap();
    let o = run(&["evaluate", "--episodes", "100000"], &profile("monthly_1y.cfg"), dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let (header, rows) = read_csv(&dir.path().join("summary.csv"));
    assert_eq!(header, "label,episodes,sample_mean,sample_variance,sharpe,constraint_gap");
    assert_eq!(rows.len(), 1);
    let r = &rows[0];
    assert_eq!(r[0], "monthly_1y");
    assert_eq!(r[1], "100000");
    let (mean, var, sharpe, gap) = (real(&r[2]), real(&r[3]), real(&r[4]), real(&r[5]));
    let recomputed = (mean - 0.05) / var.sqrt();
    assert!((sharpe - recomputed).abs() <= 1e-12 * recomputed.abs(), "{sharpe} vs {recomputed}");
    assert!((gap - (mean - 1.4).abs()).abs() <= 1e-15);
    // Calibrated gamma puts the expected surplus on target.
    assert!(gap < 0.02, "gap {gap}");
}

#[test]
fn train_writes_log_and_tail_summary() {
    let dir = TempDir::new().unwrap();
    let o = run(&["train", "--episodes", "300"], &profile("monthly_1y.cfg"), dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let (header, rows) = read_csv(&dir.path().join("training_log.csv"));
    assert_eq!(
        header,
        "episode,terminal_wealth,terminal_liability,gamma,bellman_sq_error,theta1,theta2,theta3,theta4,theta5"
    );
    assert_eq!(rows.len(), 300);
    assert!(rows.iter().enumerate().all(|(i, r)| r[0] == i.to_string() && r.len() == 10));

    let (_, summary) = read_csv(&dir.path().join("summary.csv"));
    // Final 4 x batch episodes.
    assert_eq!(summary[0][1], "200");
    let tail: Vec<f64> = rows[100..].iter().map(|r| real(&r[1]) - real(&r[2])).collect();
    let mean = tail.iter().sum::<f64>() / tail.len() as f64;
    assert!((real(&summary[0][2]) - mean).abs() <= 1e-12 * mean.abs());
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    for dir in [&a, &b] {
        for args in [&["train", "--episodes", "500"][..], &["evaluate", "--episodes", "20000"][..]] {
            let o = run(args, &profile("monthly_1y_normalized.cfg"), &dir.path().join(args[0]));
            assert!(o.status.success(), "{}", stderr(&o));
        }
        let o = run(&["solve"], &profile("monthly_5y.cfg"), dir.path());
        assert!(o.status.success());
    }
    for file in ["train/training_log.csv", "train/summary.csv", "evaluate/summary.csv", "riccati.csv"] {
        assert_eq!(
            fs::read(a.path().join(file)).unwrap(),
            fs::read(b.path().join(file)).unwrap(),
            "{file} differs"
        );
    }
}

#[test]
fn seed_flag_overrides_config() {
    let dir = TempDir::new().unwrap();
    let cfg = profile("monthly_1y.cfg");
    let mut outs = Vec::new();
    for seed in ["1", "1", "2"] {
        let out = dir.path().join(format!("s{}", outs.len()));
        let o = run(&["evaluate", "--episodes", "1000", "--seed", seed], &cfg, &out);
        assert!(o.status.success());
        outs.push(fs::read(out.join("summary.csv")).unwrap());
    }
    assert_eq!(outs[0], outs[1]);
    assert_ne!(outs[0], outs[2]);
}

#[test]
fn output_directory_precedence() {
    let dir = TempDir::new().unwrap();
    let env_out = dir.path().join("from_env");
    let cfg_out = dir.path().join("from_cfg");
    let flag_out = dir.path().join("from_flag");
    let plain = write_cfg(&dir, "plain.cfg", "");
    let with_dir = write_cfg(&dir, "with_dir.cfg", &format!("output_dir = {}\n", cfg_out.display()));

    let o = bin().args(["solve", "--config"]).arg(&plain).env("EXPLQ_OUT", &env_out).output().unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(env_out.join("riccati.csv").exists());

    let o = bin().args(["solve", "--config"]).arg(&with_dir).env("EXPLQ_OUT", &env_out).output().unwrap();
    assert!(o.status.success());
    assert!(cfg_out.join("riccati.csv").exists());

    let o = bin()
        .args(["solve", "--config"])
        .arg(&with_dir)
        .arg("--out")
        .arg(&flag_out)
        .env("EXPLQ_OUT", &env_out)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(flag_out.join("riccati.csv").exists());
}

#[test]
fn config_errors_exit_one_with_line_numbers() {
    let dir = TempDir::new().unwrap();
    let cases = [
        ("d = 1.4\nrho = 1.5\n", "line 2: |rho| <= 1"),
        ("dt = 0.083333333\nhorizon_years = 1\n", "residual"),
        ("d = 1\nfoo = 2\nbar = 3\n", "unknown keys: `foo` (line 2), `bar` (line 3)"),
        ("lambda\n", "line 1: malformed"),
    ];
    for (text, needle) in cases {
        let cfg = write_cfg(&dir, "bad.cfg", text);
        let o = run(&["solve"], &cfg, dir.path());
        assert_eq!(o.status.code(), Some(1), "{text}");
        assert!(stderr(&o).contains(needle), "{text}: {}", stderr(&o));
    }
    let o = run(&["solve"], &dir.path().join("missing.cfg"), dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(bin().arg("bogus").output().unwrap().status.code(), Some(1));
    assert_eq!(bin().arg("solve").output().unwrap().status.code(), Some(1));
    assert_eq!(bin().arg("--help").output().unwrap().status.code(), Some(0));
}

#[test]
fn numerical_failures_exit_two() {
    let dir = TempDir::new().unwrap();
    let cfg = write_cfg(&dir, "flat.cfg", "risky_vol_annual = 0\n");
    let o = run(&["solve"], &cfg, dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    // A 20% theta perturbation over 252 daily periods overflows the gradient.
    let cfg = write_cfg(&dir, "daily.cfg", "dt = 1/252\ntheta_spread = 0.2\nseed = 20240101\n");
    let o = run(&["train"], &cfg, dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("episode"), "{}", stderr(&o));
}
