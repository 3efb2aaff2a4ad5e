//! Mean-variance asset-liability layer: the Lagrange shift, exact surplus
//! moments under a linear-Gaussian policy and Monte-Carlo evaluation.

use crate::error::{Error, Result};
use crate::lq_core::{GaussianPolicy, ModelParams, StateVec};
use crate::market::{par_episodes, shift, simulate_terminal};

/// Subtracted from the mean before dividing by the standard deviation in
/// [`sharpe_ratio`]; equals `rf_annual - 1` for the default market.
pub const DEFAULT_EXCESS_BASE: f64 = 0.05;

/// Target surplus, multiplier and initial balance sheet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MVProblem {
    pub d: f64,
    pub gamma: f64,
    pub x0: f64,
    pub l0: f64,
}

impl Default for MVProblem {
    fn default() -> Self {
        MVProblem {
            d: 1.4,
            gamma: 0.0,
            x0: 1.0,
            l0: 0.1,
        }
    }
}

impl MVProblem {
    pub fn initial_state(&self) -> StateVec {
        StateVec::new(self.x0, self.l0)
    }

    pub fn with_gamma(&self, gamma: f64) -> Self {
        MVProblem { gamma, ..*self }
    }

    /// Expected surplus of holding everything in the risk-free asset.
    pub fn risk_free_surplus(&self, params: &ModelParams, periods: usize) -> f64 {
        params.a.powi(periods as i32) * self.x0 - params.a_bar.powi(periods as i32) * self.l0
    }

    /// Logs a warning when the target is already met by the risk-free
    /// strategy, in which case the constraint does not bind.
    pub fn warn_if_vacuous(&self, params: &ModelParams, periods: usize) -> bool {
        let base = self.risk_free_surplus(params, periods);
        let vacuous = self.d <= base;
        if vacuous {
            log::warn!(
                "target surplus d = {} does not exceed the risk-free surplus {base}; the constraint is vacuous",
                self.d
            );
        }
        vacuous
    }
}

/// `X - γ rf^-(remaining)`.
pub fn shift_state(wealth: f64, gamma: f64, rf_period: f64, periods_remaining: usize) -> f64 {
    shift(wealth, gamma, rf_period, periods_remaining)
}

/// `(mean - excess_base) / sqrt(variance)`; `+inf` (or `-inf`, or NaN at a
/// zero numerator) when the variance is zero.
pub fn sharpe_ratio(mean: f64, variance: f64, excess_base: f64) -> f64 {
    (mean - excess_base) / variance.sqrt()
}

/// Sample statistics of the terminal surplus.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub label: String,
    pub episodes: usize,
    pub sample_mean: f64,
    pub sample_variance: f64,
    pub sharpe: f64,
    /// `|sample_mean - d|`.
    pub constraint_gap: f64,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "label,episodes,sample_mean,sample_variance,sharpe,constraint_gap";

    /// Builds a report from raw surplus samples (at least two).
    pub fn from_samples(label: &str, samples: &[f64], d: f64, excess_base: f64) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::invalid("at least two episodes are needed for a sample variance"));
        }
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let variance = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1.0);
        if variance == 0.0 {
            log::warn!("terminal surplus has zero sample variance; Sharpe ratio is infinite");
        }
        Ok(EvalReport {
            label: label.to_string(),
            episodes: samples.len(),
            sample_mean: mean,
            sample_variance: variance,
            sharpe: sharpe_ratio(mean, variance, excess_base),
            constraint_gap: (mean - d).abs(),
        })
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.label,
            self.episodes,
            format_real(self.sample_mean),
            format_real(self.sample_variance),
            format_real(self.sharpe),
            format_real(self.constraint_gap)
        )
    }
}

/// Round-trippable decimal with 17 significant digits.
pub fn format_real(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

/// Terminal surpluses `X_T - l_T` of episodes `0..n`, in episode order.
pub fn surplus_samples(
    params: &ModelParams,
    policy: &GaussianPolicy,
    mv: &MVProblem,
    n_episodes: usize,
    rng_base: u64,
) -> Result<Vec<f64>> {
    let init = mv.initial_state();
    par_episodes(n_episodes, rng_base, |_, rng| {
        simulate_terminal(params, policy, init, mv.gamma, rng).map(|s| s.x - s.y)
    })
    .into_iter()
    .collect()
}

/// Monte-Carlo statistics of the terminal surplus. Episodes run in parallel;
/// the reduction happens afterwards in episode order, so the report depends
/// only on the inputs and `rng_base`.
pub fn evaluate_policy(
    params: &ModelParams,
    policy: &GaussianPolicy,
    mv: &MVProblem,
    n_episodes: usize,
    rng_base: u64,
    excess_base: f64,
    label: &str,
) -> Result<EvalReport> {
    if n_episodes < 2 {
        return Err(Error::invalid("n_episodes must be at least 2"));
    }
    let samples = surplus_samples(params, policy, mv, n_episodes, rng_base)?;
    EvalReport::from_samples(label, &samples, mv.d, excess_base)
}

/// Exact mean and variance of `X_T - l_T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurplusMoments {
    pub mean: f64,
    pub variance: f64,
}

/// Propagates the first and second moments of the shifted state through the
/// dynamics with controls drawn from `policy`.
pub fn surplus_moments(params: &ModelParams, policy: &GaussianPolicy, mv: &MVProblem) -> Result<SurplusMoments> {
    if params.m() != 1 || policy.control_dim() != 1 {
        return Err(Error::invalid("surplus moments need a single control"));
    }
    let horizon = policy.periods();
    let (a, b, c, d) = (params.a, params.b1(), params.c, params.d1());
    let (ab, cb, rho) = (params.a_bar, params.c_bar, params.rho);
    let x0 = shift(mv.x0, mv.gamma, a, horizon);
    let (mut mx, mut ml) = (x0, mv.l0);
    let (mut sxx, mut sxl, mut sll) = (x0 * x0, x0 * mv.l0, mv.l0 * mv.l0);
    for t in 0..horizon {
        let [gx, gy] = policy.gain1(t);
        let var = policy.variance1(t);
        let mu = -(gx * mx + gy * ml);
        let sxu = -(gx * sxx + gy * sxl);
        let slu = -(gx * sxl + gy * sll);
        let suu = gx * gx * sxx + 2.0 * gx * gy * sxl + gy * gy * sll + var;
        let nxx = (a * a + c * c) * sxx + 2.0 * (a * b + c * d) * sxu + (b * b + d * d) * suu;
        let nxl = (a * ab + rho * c * cb) * sxl + (ab * b + rho * cb * d) * slu;
        let nll = (ab * ab + cb * cb) * sll;
        mx = a * mx + b * mu;
        ml *= ab;
        sxx = nxx;
        sxl = nxl;
        sll = nll;
    }
    // X_T = x_T + γ
    let mean = mx + mv.gamma - ml;
    let second = sxx - 2.0 * sxl + sll;
    let centred_mean = mx - ml;
    Ok(SurplusMoments {
        mean,
        variance: (second - centred_mean * centred_mean).max(0.0),
    })
}

/// `E[X_T - l_T]` by exact mean propagation over the first `periods`
/// periods of `policy`.
pub fn expected_surplus_under_policy(
    params: &ModelParams,
    policy: &GaussianPolicy,
    mv: &MVProblem,
    periods: usize,
) -> Result<f64> {
    if periods > policy.periods() {
        return Err(Error::invalid(format!(
            "policy covers {} periods, {periods} requested",
            policy.periods()
        )));
    }
    let truncated = GaussianPolicy {
        stages: policy.stages[..periods].to_vec(),
    };
    surplus_moments(params, &truncated, mv).map(|m| m.mean)
}

/// The multiplier `γ` at which `E[X_T - l_T] = d`. The expected surplus is
/// affine in `γ`, so two evaluations determine the root.
pub fn calibrate_gamma(params: &ModelParams, policy: &GaussianPolicy, mv: &MVProblem) -> Result<f64> {
    let periods = policy.periods();
    let at0 = expected_surplus_under_policy(params, policy, &mv.with_gamma(0.0), periods)?;
    let at1 = expected_surplus_under_policy(params, policy, &mv.with_gamma(1.0), periods)?;
    let slope = at1 - at0;
    if slope.abs() < 1e-14 {
        return Err(Error::invalid("expected surplus does not depend on gamma"));
    }
    Ok((mv.d - at0) / slope)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closed_form::alm_solution;
    use crate::market::{discretize, AnnualMarket};

    fn monthly() -> (ModelParams, usize) {
        let m = discretize(
            &AnnualMarket {
                dt: 1.0 / 12.0,
                ..AnnualMarket::default()
            },
            0.1,
        )
        .unwrap();
        (m.params, m.periods)
    }

    #[test]
    fn shift_examples() {
        assert_eq!(shift_state(1.3, 0.0, 1.05, 7), 1.3);
        assert!((shift_state(1.0, 2.0, 1.05, 12) + 0.1136748).abs() < 1e-7);
        assert_eq!(shift_state(1.0, 2.0, 1.05, 0), -1.0);
    }

    #[test]
    fn sharpe_table_rows() {
        assert!((sharpe_ratio(8.07335, 1.47720, 0.05) - 6.60138).abs() < 5e-5);
        assert!(sharpe_ratio(1.0, 0.0, 0.05).is_infinite());
    }

    #[test]
    fn report_stats_and_row() {
        let r = EvalReport::from_samples("x", &[1.0, 2.0, 3.0], 2.5, 0.05).unwrap();
        assert_eq!(r.sample_mean, 2.0);
        assert_eq!(r.sample_variance, 1.0);
        assert_eq!(r.constraint_gap, 0.5);
        assert_eq!(r.csv_row().split(',').count(), 6);
        assert!(r.csv_row().starts_with("x,3,2.0000000000000000e0,"));
        assert!(EvalReport::from_samples("x", &[1.0], 0.0, 0.05).is_err());
    }

    #[test]
    fn zero_variance_reports_infinite_sharpe() {
        let r = EvalReport::from_samples("flat", &[1.0; 4], 1.0, 0.05).unwrap();
        assert_eq!(r.sharpe, f64::INFINITY);
    }

    #[test]
    fn format_round_trips() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02e23] {
            assert_eq!(format_real(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn uncontrolled_mean() {
        let (params, n) = monthly();
        let policy = GaussianPolicy::degenerate(&vec![[0.0, 0.0]; n]);
        let mv = MVProblem::default();
        let m = expected_surplus_under_policy(&params, &policy, &mv, n).unwrap();
        let want = params.a.powi(n as i32) - params.a_bar.powi(n as i32) * 0.1;
        assert!((m - want).abs() < 1e-14);
        assert!((mv.risk_free_surplus(&params, n) - want).abs() < 1e-14);
    }

    #[test]
    fn single_period_mean() {
        let params = ModelParams::alm(1.05, 0.25, 0.2, 1.1, 0.1, 0.2, 0.1).unwrap();
        let policy = GaussianPolicy::scalar(&[[0.5, -1.0]], &[0.3]).unwrap();
        let mv = MVProblem::default();
        let mu = -(0.5 * 1.0 - 1.0 * 0.1);
        let m = expected_surplus_under_policy(&params, &policy, &mv, 1).unwrap();
        assert!((m - (1.05 + 0.25 * mu - 1.1 * 0.1)).abs() < 1e-15);
    }

    #[test]
    fn calibrated_gamma_hits_target() {
        let (params, n) = monthly();
        let policy = alm_solution(&params, n).unwrap().policy();
        let mv = MVProblem::default();
        let g = calibrate_gamma(&params, &policy, &mv).unwrap();
        let m = expected_surplus_under_policy(&params, &policy, &mv.with_gamma(g), n).unwrap();
        assert!((m - mv.d).abs() < 1e-12);
    }

    #[test]
    fn moments_match_monte_carlo() {
        let (params, n) = monthly();
        let policy = alm_solution(&params, n).unwrap().policy();
        let mv = MVProblem::default();
        let mv = mv.with_gamma(calibrate_gamma(&params, &policy, &mv).unwrap());
        let exact = surplus_moments(&params, &policy, &mv).unwrap();
        let report = evaluate_policy(&params, &policy, &mv, 40_000, 5, DEFAULT_EXCESS_BASE, "mc").unwrap();
        let se = (exact.variance / 40_000.0).sqrt();
        assert!((report.sample_mean - exact.mean).abs() < 4.0 * se);
        assert!((report.sample_variance / exact.variance - 1.0).abs() < 0.1);
    }

    #[test]
    fn evaluation_is_reproducible() {
        let (params, n) = monthly();
        let policy = alm_solution(&params, n).unwrap().policy();
        let mv = MVProblem::default();
        let run = || evaluate_policy(&params, &policy, &mv, 500, 11, 0.05, "r").unwrap();
        let first = run();
        let single = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(run);
        assert_eq!(first, single);
    }

    #[test]
    fn vacuous_target_detected() {
        let (params, n) = monthly();
        let mv = MVProblem {
            d: 0.5,
            ..MVProblem::default()
        };
        assert!(mv.warn_if_vacuous(&params, n));
        assert!(!MVProblem::default().warn_if_vacuous(&params, n));
    }
}
