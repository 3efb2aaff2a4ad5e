//! The four subcommands. Each writes its CSV files into `out` and returns a
//! short human-readable summary for stdout.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use explq::closed_form::alm_solution;
use explq::market::{discretize, DiscreteMarket};
use explq::mv_alm::{self, calibrate_gamma, format_real, EvalReport};
use explq::policy_iter::policy_iteration;
use explq::rl::{self, ThetaVector, TrainConfig};
use explq::{optimal_value, riccati_backward, StateVec};

use crate::config::RunConfig;
use crate::CliError;

pub const RICCATI_HEADER: &str = "t,p11,p12,p22,g,gain_x,gain_y,value_const";
pub const IMPROVEMENT_HEADER: &str = "j,max_gap,value_at_probe";

/// Settings resolved from the config file, the flags and the environment.
#[derive(Debug, Clone)]
pub struct Run {
    pub config: RunConfig,
    pub label: String,
    pub out: PathBuf,
}

fn market(config: &RunConfig) -> Result<DiscreteMarket, CliError> {
    let m = discretize(&config.market, config.lambda)?;
    config.mv.warn_if_vacuous(&m.params, m.periods);
    Ok(m)
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, CliError> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|source| CliError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

fn row(first: impl std::fmt::Display, reals: &[f64]) -> String {
    let mut line = first.to_string();
    for v in reals {
        line.push(',');
        line.push_str(&format_real(*v));
    }
    line.push('\n');
    line
}

fn summary_csv(report: &EvalReport) -> String {
    format!("{}\n{}\n", EvalReport::CSV_HEADER, report.csv_row())
}

/// Closed-form Riccati quantities per period.
pub fn run_solve(run: &Run) -> Result<String, CliError> {
    let m = market(&run.config)?;
    let sol = alm_solution(&m.params, m.periods)?;
    let mut csv = format!("{RICCATI_HEADER}\n");
    for s in &sol.stages {
        csv.push_str(&row(s.t, &[s.p11, s.p12, s.p22, s.g, s.gain_x, s.gain_y, s.value_const]));
    }
    let path = write(&run.out, "riccati.csv", &csv)?;
    let s0 = sol.stage(0)?;
    Ok(format!(
        "periods {}\nP0 = [[{}, {}], [{}, {}]]\ngain_x(0) = {}, gain_y(0) = {}, G(0) = {}\nwrote {}\n",
        m.periods,
        s0.p11,
        s0.p12,
        s0.p12,
        s0.p22,
        s0.gain_x,
        s0.gain_y,
        s0.g,
        path.display()
    ))
}

/// Policy iteration from the configured seed policy, tracking the largest
/// value gap to the optimum over all periods at the probe state.
pub fn run_iterate(run: &Run) -> Result<String, CliError> {
    let config = &run.config;
    let m = market(config)?;
    let iterations = config.iterations.unwrap_or(m.periods);
    let states = policy_iteration(&m.params, &config.seed_policy, m.periods, iterations)?;
    let optimum = riccati_backward(&m.params, m.periods)?;
    let probe = StateVec::new(config.probe.0, config.probe.1);
    let j_star = (0..=m.periods)
        .map(|t| optimal_value(&optimum, t, probe))
        .collect::<Result<Vec<_>, _>>()?;

    let mut csv = format!("{IMPROVEMENT_HEADER}\n");
    let mut last_gap = f64::NAN;
    for state in &states {
        let mut gap: f64 = 0.0;
        for (t, opt) in j_star.iter().enumerate() {
            gap = gap.max((state.value.evaluate(t, probe)? - opt).abs());
        }
        csv.push_str(&row(state.j, &[gap, state.value.evaluate(0, probe)?]));
        last_gap = gap;
    }
    let path = write(&run.out, "improvement.csv", &csv)?;
    Ok(format!(
        "{iterations} improvements over {} periods, final gap {last_gap:e}\nwrote {}\n",
        m.periods,
        path.display()
    ))
}

fn train_config(config: &RunConfig, m: &DiscreteMarket) -> Result<TrainConfig, CliError> {
    let gamma = config.gamma.unwrap_or(0.0);
    let theta_init = match config.theta {
        Some(th) => ThetaVector::from_array(th, gamma),
        None => ThetaVector {
            gamma,
            ..ThetaVector::ground_truth(&m.params).perturbed_in_domain(config.theta_spread, config.seed, m.params.a)?
        },
    };
    Ok(TrainConfig {
        step: config.step_rule(),
        eta_gamma: config.eta_gamma,
        episodes: config.episodes,
        batch: config.batch,
        d: config.mv.d,
        seed: config.seed,
        theta_init,
        lambda: config.lambda,
        x0: config.mv.x0,
        l0: config.mv.l0,
    })
}

/// The five-parameter trainer; the summary covers the final `4 × batch`
/// episodes.
pub fn run_train(run: &Run) -> Result<String, CliError> {
    let config = &run.config;
    let m = market(config)?;
    let tc = train_config(config, &m)?;
    let (theta, log) = rl::train(&tc, &m.params, m.periods)?;
    let tail = log.tail_surplus(4 * config.batch);
    let report = EvalReport::from_samples(&run.label, &tail, config.mv.d, config.excess_base)?;

    let log_path = write(&run.out, "training_log.csv", &log.to_csv())?;
    let summary_path = write(&run.out, "summary.csv", &summary_csv(&report))?;
    let mut msg = format!(
        "{} episodes, final gamma {}\ntheta = {:?}\n",
        log.rows.len(),
        theta.gamma,
        theta.to_array()
    );
    append_report(&mut msg, &report);
    let _ = writeln!(msg, "wrote {}\nwrote {}", log_path.display(), summary_path.display());
    Ok(msg)
}

/// Monte-Carlo statistics of the closed-form optimal policy.
pub fn run_evaluate(run: &Run) -> Result<String, CliError> {
    let config = &run.config;
    let m = market(config)?;
    let policy = alm_solution(&m.params, m.periods)?.policy();
    let gamma = match config.gamma {
        Some(g) => g,
        None => calibrate_gamma(&m.params, &policy, &config.mv)?,
    };
    let mv = config.mv.with_gamma(gamma);
    let report = mv_alm::evaluate_policy(
        &m.params,
        &policy,
        &mv,
        config.eval_episodes,
        config.seed,
        config.excess_base,
        &run.label,
    )?;
    let path = write(&run.out, "summary.csv", &summary_csv(&report))?;
    let mut msg = format!("gamma {gamma}\n");
    append_report(&mut msg, &report);
    let _ = writeln!(msg, "wrote {}", path.display());
    Ok(msg)
}

fn append_report(msg: &mut String, r: &EvalReport) {
    let _ = writeln!(
        msg,
        "{}: {} episodes, mean {:.5}, variance {:.5}, sharpe {:.5}, gap {:.5}",
        r.label, r.episodes, r.sample_mean, r.sample_variance, r.sharpe, r.constraint_gap
    );
}
